//! The recurrent attention agent: observation, recurrence, view estimation
//! and classification, threaded together by [`rollout`].

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::data::FeatureGrid;
use crate::diffcore::{Graph, NodeId, ParamId, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::viewspace::{GridIndex, Location, ViewSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecurrentKind {
    #[default]
    Linear,
    Lstm,
}

/// Output nonlinearity of the view estimator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transfer {
    #[default]
    Elu,
    /// Clamp into the view space.
    HardTanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub space: ViewSpace,
    pub feature_dim: usize,
    pub classes: usize,
    /// Location embedding width.
    pub embed: usize,
    /// Adapter output width; `None` feeds raw features to the fusion layer.
    pub adapter: Option<usize>,
    pub hidden: usize,
    pub recurrent: RecurrentKind,
    pub transfer: Transfer,
    pub steps: usize,
    /// Std-dev of the location policy.
    pub delta: f64,
    /// Initial view-estimator bias, both coordinates.
    pub start: f64,
    /// Multiplier on the default init range of the view-estimator weights.
    pub view_init_scale: f64,
    /// Initial LSTM forget-gate bias.
    #[serde(default = "default_forget_bias")]
    pub forget_bias: f64,
}

fn default_forget_bias() -> f64 {
    1.0
}

impl AgentConfig {
    pub fn new(space: ViewSpace, feature_dim: usize, classes: usize) -> Self {
        Self {
            space,
            feature_dim,
            classes,
            embed: 16,
            adapter: None,
            hidden: 64,
            recurrent: RecurrentKind::Linear,
            transfer: Transfer::Elu,
            steps: 4,
            delta: 0.11,
            start: 0.5,
            view_init_scale: 0.1,
            forget_bias: default_forget_bias(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        if self.feature_dim == 0 || self.embed == 0 || self.hidden == 0 || self.adapter == Some(0) {
            return bad("layer widths must be positive");
        }
        if self.classes < 2 {
            return bad("need at least 2 classes");
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad("delta must be positive");
        }
        Ok(())
    }

    fn fused_width(&self) -> usize {
        self.embed + self.adapter.unwrap_or(self.feature_dim)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RecurrentIds {
    Linear { w: ParamId, b: ParamId },
    /// Gates in order input, forget, output, candidate; each reads `[o; h]`.
    Lstm { w: [ParamId; 4], b: [ParamId; 4] },
}

/// All learnable weights plus one reward baseline per step.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentParams<S> {
    pub config: AgentConfig,
    pub set: ParamSet<S>,
    pub le: (ParamId, ParamId),
    pub adapter: Option<(ParamId, ParamId)>,
    pub lv: (ParamId, ParamId),
    pub recurrent: RecurrentIds,
    pub view: (ParamId, ParamId),
    pub class: (ParamId, ParamId),
    pub baselines: Vec<S>,
}

impl<S: Scalar> AgentParams<S> {
    /// Uniform `±1/sqrt(fan_in)` init; the view estimator starts near
    /// `config.start` in both coordinates.
    pub fn init<R: Rng + ?Sized>(config: AgentConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut set = ParamSet::new();
        let (e, h, d) = (config.embed, config.hidden, config.feature_dim);
        let le = (
            set.add_uniform("le.w", &[e, 2], 2, rng),
            set.add_uniform("le.b", &[e], 2, rng),
        );
        let adapter = config.adapter.map(|a| {
            (
                set.add_uniform("adapter.w", &[a, d], d, rng),
                set.add_uniform("adapter.b", &[a], d, rng),
            )
        });
        let f = config.fused_width();
        let lv = (
            set.add_uniform("lv.w", &[h, f], f, rng),
            set.add_uniform("lv.b", &[h], f, rng),
        );
        let recurrent = match config.recurrent {
            RecurrentKind::Linear => RecurrentIds::Linear {
                w: set.add_uniform("rec.w", &[h, h], h, rng),
                b: set.add_uniform("rec.b", &[h], h, rng),
            },
            RecurrentKind::Lstm => {
                let mut w = [ParamId(0); 4];
                let mut b = [ParamId(0); 4];
                for (k, gate) in ["i", "f", "o", "g"].iter().enumerate() {
                    w[k] = set.add_uniform(format!("lstm.{gate}.w"), &[h, 2 * h], 2 * h, rng);
                    b[k] = set.add_uniform(format!("lstm.{gate}.b"), &[h], 2 * h, rng);
                }
                set.get_mut(b[1]).fill(S::lit(config.forget_bias));
                RecurrentIds::Lstm { w, b }
            }
        };
        let view_w = set.add_uniform("view.w", &[2, h], h, rng);
        set.get_mut(view_w).scale_in_place(S::lit(config.view_init_scale));
        let view_b = set.add("view.b", Tensor::filled(&[2], S::lit(config.start)));
        let class = (
            set.add_uniform("class.w", &[config.classes, h], h, rng),
            set.add_uniform("class.b", &[config.classes], h, rng),
        );
        let baselines = vec![S::zero(); config.steps];
        Ok(Self {
            config,
            set,
            le,
            adapter,
            lv,
            recurrent,
            view: (view_w, view_b),
            class,
            baselines,
        })
    }

    /// Convenience init from a seed.
    pub fn seeded(config: AgentConfig, seed: u64) -> Result<Self> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Self::init(config, &mut rng)
    }

    /// Sets every weight and bias to zero (baselines too).
    pub fn zero(&mut self) {
        for t in self.set.tensors_mut() {
            t.fill(S::zero());
        }
        self.baselines.iter_mut().for_each(|b| *b = S::zero());
    }

    pub fn checksum(&self) -> u64 {
        let mut h = crate::data::Fnv1a::new();
        h.write(&self.set.checksum().to_le_bytes());
        for b in &self.baselines {
            h.write(&b.as_f64().to_bits().to_le_bytes());
        }
        h.finish()
    }
}

fn affine<S: Scalar>(g: &mut Graph<S>, p: &ParamSet<S>, x: NodeId, ids: (ParamId, ParamId)) -> Result<NodeId> {
    let w = g.param(p, ids.0);
    let b = g.param(p, ids.1);
    g.affine(x, w, b)
}

/// `o = ReLU(W_lv [ReLU(W_le l + b_le); v'] + b_lv)`, where `v'` is the
/// adapted feature vector.
pub fn observe<S: Scalar>(g: &mut Graph<S>, params: &AgentParams<S>, l: NodeId, v: NodeId) -> Result<NodeId> {
    let dim = g.value(v).len();
    if dim != params.config.feature_dim {
        return Err(Error::Dimension {
            op: "observe",
            left: vec![params.config.feature_dim],
            right: vec![dim],
        });
    }
    let le = affine(g, &params.set, l, params.le)?;
    let le = g.relu(le);
    let v = match params.adapter {
        Some(ids) => {
            let a = affine(g, &params.set, v, ids)?;
            g.relu(a)
        }
        None => v,
    };
    let fused = g.concat(&[le, v])?;
    let o = affine(g, &params.set, fused, params.lv)?;
    Ok(g.relu(o))
}

/// `h = ReLU(W_h h_prev + b_h + o)`
pub fn recur_linear<S: Scalar>(g: &mut Graph<S>, params: &AgentParams<S>, o: NodeId, h_prev: NodeId) -> Result<NodeId> {
    let RecurrentIds::Linear { w, b } = params.recurrent else {
        return Err(Error::InvalidConfig("agent has LSTM recurrence".into()));
    };
    let a = affine(g, &params.set, h_prev, (w, b))?;
    let s = g.add(a, o)?;
    Ok(g.relu(s))
}

/// Standard LSTM cell over the input `[o; h_prev]`. Returns `(h, cell)`.
pub fn recur_lstm<S: Scalar>(
    g: &mut Graph<S>,
    params: &AgentParams<S>,
    o: NodeId,
    h_prev: NodeId,
    cell_prev: NodeId,
) -> Result<(NodeId, NodeId)> {
    let RecurrentIds::Lstm { w, b } = params.recurrent else {
        return Err(Error::InvalidConfig("agent has linear recurrence".into()));
    };
    let x = g.concat(&[o, h_prev])?;
    let mut pre = [x; 4];
    for k in 0..4 {
        pre[k] = affine(g, &params.set, x, (w[k], b[k]))?;
    }
    let i = g.sigmoid(pre[0]);
    let f = g.sigmoid(pre[1]);
    let og = g.sigmoid(pre[2]);
    let cand = g.tanh(pre[3]);
    let keep = g.mul(f, cell_prev)?;
    let write = g.mul(i, cand)?;
    let cell = g.add(keep, write)?;
    let squashed = g.tanh(cell);
    let h = g.mul(og, squashed)?;
    Ok((h, cell))
}

/// Mean of the location policy, `u = ELU(W_l h_prev + b_l)` (or the
/// clamped-linear transfer).
pub fn estimate_view<S: Scalar>(g: &mut Graph<S>, params: &AgentParams<S>, h_prev: NodeId) -> Result<NodeId> {
    let a = affine(g, &params.set, h_prev, params.view)?;
    Ok(match params.config.transfer {
        Transfer::Elu => g.elu(a, S::one()),
        Transfer::HardTanh => {
            let lo = params.config.space.lower::<S>()[0].max(params.config.space.lower::<S>()[1]);
            g.hardtanh(a, lo, S::one())
        }
    })
}

/// `log_softmax(W_c h_T + b_c)`
pub fn classify<S: Scalar>(g: &mut Graph<S>, params: &AgentParams<S>, h: NodeId) -> Result<NodeId> {
    let a = affine(g, &params.set, h, params.class)?;
    Ok(g.log_softmax(a))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Sample `l_t ~ N(u_t, delta^2)`.
    Train,
    /// `l_t = clamp(u_t)`.
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord<S> {
    pub u: Location<S>,
    /// Viewpoint actually visited, inside the space.
    pub l: Location<S>,
    /// Unclamped draw; equals `l` in test mode.
    pub raw: Location<S>,
    pub grid: GridIndex,
    pub o: Vec<S>,
    pub h: Vec<S>,
    /// Precomputed confidence of the visited cell, if the shape has them.
    pub confidence: Option<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTrace<S> {
    pub steps: Vec<StepRecord<S>>,
    pub log_probs: Vec<S>,
    pub predicted: usize,
    pub label: usize,
    /// 1 if correct, else 0.
    pub reward: S,
}

impl<S: Scalar> EpisodeTrace<S> {
    pub fn correct(&self) -> bool {
        self.predicted == self.label
    }
}

/// A recorded rollout with the graph kept for backward.
pub struct Episode<S> {
    pub graph: Graph<S>,
    pub trace: EpisodeTrace<S>,
    pub u_nodes: Vec<NodeId>,
    pub h_nodes: Vec<NodeId>,
    pub log_probs: NodeId,
}

fn run<S: Scalar>(
    shape: &FeatureGrid,
    params: &AgentParams<S>,
    mut choose: impl FnMut(usize, Location<S>) -> (Location<S>, Location<S>),
) -> Result<Episode<S>> {
    let cfg = &params.config;
    cfg.validate()?;
    if shape.dim() != cfg.feature_dim || shape.space() != cfg.space {
        return Err(Error::Dimension {
            op: "rollout",
            left: vec![cfg.space.rows, cfg.space.cols, cfg.feature_dim],
            right: vec![shape.space().rows, shape.space().cols, shape.dim()],
        });
    }
    let mut g = Graph::new(&params.set);
    let hdim = cfg.hidden;
    let mut h = g.input(Tensor::zeros(&[hdim]));
    let mut cell = match cfg.recurrent {
        RecurrentKind::Lstm => Some(g.input(Tensor::zeros(&[hdim]))),
        RecurrentKind::Linear => None,
    };
    let mut steps = Vec::with_capacity(cfg.steps);
    let mut u_nodes = Vec::with_capacity(cfg.steps);
    let mut h_nodes = Vec::with_capacity(cfg.steps);
    for t in 0..cfg.steps {
        let u_node = estimate_view(&mut g, params, h)?;
        let u = Location::from_slice(g.value(u_node).data());
        let (raw, l) = choose(t, u);
        let grid = cfg.space.to_grid(l);
        let v: Vec<S> = shape.view(grid).iter().map(|&x| S::from_f32_storage(x)).collect();
        let l_node = g.input(Tensor::vector(vec![l.r, l.c]));
        let v_node = g.input(Tensor::vector(v));
        let o = observe(&mut g, params, l_node, v_node)?;
        h = match cell {
            None => recur_linear(&mut g, params, o, h)?,
            Some(c) => {
                let (h2, c2) = recur_lstm(&mut g, params, o, h, c)?;
                cell = Some(c2);
                h2
            }
        };
        steps.push(StepRecord {
            u,
            l,
            raw,
            grid,
            o: g.value(o).data().to_vec(),
            h: g.value(h).data().to_vec(),
            confidence: shape.confidence(grid).map(S::from_f32_storage),
        });
        u_nodes.push(u_node);
        h_nodes.push(h);
    }
    let lp = classify(&mut g, params, h)?;
    let log_probs = g.value(lp).data().to_vec();
    let predicted = g.value(lp).argmax();
    let trace = EpisodeTrace {
        steps,
        predicted,
        label: shape.label,
        reward: if predicted == shape.label { S::one() } else { S::zero() },
        log_probs,
    };
    Ok(Episode {
        graph: g,
        trace,
        u_nodes,
        h_nodes,
        log_probs: lp,
    })
}

/// Records one episode. In train mode draws two standard normals per step
/// from `rng`; test mode does not touch it.
pub fn record_episode<S: Scalar, R: Rng + ?Sized>(
    shape: &FeatureGrid,
    params: &AgentParams<S>,
    mode: Mode,
    rng: &mut R,
) -> Result<Episode<S>> {
    let space = params.config.space;
    let delta = S::lit(params.config.delta);
    run(shape, params, |_, u| match mode {
        Mode::Train => space.sample_location_raw(u, delta, rng),
        Mode::Test => {
            let l = space.clamp(u);
            (l, l)
        }
    })
}

/// Records an episode visiting exactly `locations` (one per step), whatever
/// the policy mean says. Used for frozen-sample gradient checks.
pub fn record_forced<S: Scalar>(
    shape: &FeatureGrid,
    params: &AgentParams<S>,
    locations: &[Location<S>],
) -> Result<Episode<S>> {
    if locations.len() != params.config.steps {
        return Err(Error::Dimension {
            op: "forced rollout",
            left: vec![params.config.steps],
            right: vec![locations.len()],
        });
    }
    let space = params.config.space;
    run(shape, params, |t, _| {
        let l = space.clamp(locations[t]);
        (locations[t], l)
    })
}

pub fn rollout<S: Scalar, R: Rng + ?Sized>(
    shape: &FeatureGrid,
    params: &AgentParams<S>,
    mode: Mode,
    rng: &mut R,
) -> Result<EpisodeTrace<S>> {
    Ok(record_episode(shape, params, mode, rng)?.trace)
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn cfg(recurrent: RecurrentKind) -> AgentConfig {
        AgentConfig {
            embed: 3,
            hidden: 5,
            steps: 3,
            recurrent,
            ..AgentConfig::new(ViewSpace::default(), 4, 3)
        }
    }

    fn vec_node(g: &mut Graph<f64>, xs: &[f64]) -> NodeId {
        g.input(Tensor::vector(xs.to_vec()))
    }

    #[test]
    fn zero_weights_observe_is_relu_bias() {
        let mut p = AgentParams::<f64>::seeded(cfg(RecurrentKind::Linear), 1).unwrap();
        p.zero();
        p.set.get_mut(p.lv.1).data_mut().copy_from_slice(&[1.0, -2.0, 0.5, 0.0, 3.0]);
        let mut g = Graph::new(&p.set);
        let l = vec_node(&mut g, &[0.3, 0.7]);
        let v = vec_node(&mut g, &[1.0, 2.0, 3.0, 4.0]);
        let o = observe(&mut g, &p, l, v).unwrap();
        assert_eq!(g.value(o).data(), &[1.0, 0.0, 0.5, 0.0, 3.0]);
    }

    #[test]
    fn observe_rejects_wrong_width() {
        let p = AgentParams::<f64>::seeded(cfg(RecurrentKind::Linear), 1).unwrap();
        let mut g = Graph::new(&p.set);
        let l = vec_node(&mut g, &[0.3, 0.7]);
        let v = vec_node(&mut g, &[1.0, 2.0]);
        assert!(matches!(observe(&mut g, &p, l, v), Err(Error::Dimension { .. })));
    }

    #[test]
    fn linear_recurrence_examples() {
        let mut p = AgentParams::<f64>::seeded(cfg(RecurrentKind::Linear), 2).unwrap();
        let RecurrentIds::Linear { w, b } = p.recurrent else { unreachable!() };
        p.set.get_mut(b).fill(0.0);
        let o_vals = [0.5, -1.0, 2.0, 0.0, -0.1];
        let mut g = Graph::new(&p.set);
        let o = vec_node(&mut g, &o_vals);
        let h0 = vec_node(&mut g, &[0.0; 5]);
        let h = recur_linear(&mut g, &p, o, h0).unwrap();
        assert_eq!(g.value(h).data(), &[0.5, 0.0, 2.0, 0.0, 0.0]);

        *p.set.get_mut(w) = Tensor::identity(5);
        let prev = [0.0, 1.5, 2.0, 0.25, 7.0];
        let mut g = Graph::new(&p.set);
        let o = vec_node(&mut g, &[0.0; 5]);
        let hp = vec_node(&mut g, &prev);
        let h = recur_linear(&mut g, &p, o, hp).unwrap();
        assert_eq!(g.value(h).data(), &prev);
    }

    #[test]
    fn lstm_zero_weight_gate_algebra() {
        let mut p = AgentParams::<f64>::seeded(cfg(RecurrentKind::Lstm), 3).unwrap();
        p.zero();
        let mut g = Graph::new(&p.set);
        let o = vec_node(&mut g, &[0.3; 5]);
        let h0 = vec_node(&mut g, &[0.1; 5]);
        let c0 = vec_node(&mut g, &[0.0; 5]);
        let (h, c) = recur_lstm(&mut g, &p, o, h0, c0).unwrap();
        assert!(g.value(h).data().iter().all(|&x| x == 0.0));
        assert!(g.value(c).data().iter().all(|&x| x == 0.0));

        let cv = 1.7;
        let mut g = Graph::new(&p.set);
        let o = vec_node(&mut g, &[0.3; 5]);
        let h0 = vec_node(&mut g, &[0.1; 5]);
        let c0 = vec_node(&mut g, &[cv; 5]);
        let (h, c) = recur_lstm(&mut g, &p, o, h0, c0).unwrap();
        for (&hv, &cc) in g.value(h).data().iter().zip(g.value(c).data()) {
            assert!((cc - 0.5 * cv).abs() < 1e-15);
            assert!((hv - 0.5 * (0.5 * cv).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn estimate_view_examples() {
        let mut p = AgentParams::<f64>::seeded(cfg(RecurrentKind::Linear), 4).unwrap();
        p.zero();
        p.set.get_mut(p.view.1).fill(0.5);
        let mut g = Graph::new(&p.set);
        let h = vec_node(&mut g, &[1.0; 5]);
        let u = estimate_view(&mut g, &p, h).unwrap();
        assert_eq!(g.value(u).data(), &[0.5, 0.5]);

        p.set.get_mut(p.view.1).fill(-1.0);
        let mut g = Graph::new(&p.set);
        let h = vec_node(&mut g, &[1.0; 5]);
        let u = estimate_view(&mut g, &p, h).unwrap();
        for &x in g.value(u).data() {
            assert!((x + 0.6321).abs() < 1e-4);
        }
    }

    #[test]
    fn hardtanh_transfer_stays_in_space() {
        let mut c = cfg(RecurrentKind::Linear);
        c.transfer = Transfer::HardTanh;
        let mut p = AgentParams::<f64>::seeded(c, 4).unwrap();
        p.set.get_mut(p.view.1).data_mut().copy_from_slice(&[-3.0, 3.0]);
        let mut g = Graph::new(&p.set);
        let h = vec_node(&mut g, &[0.0; 5]);
        let u = estimate_view(&mut g, &p, h).unwrap();
        assert_eq!(g.value(u).data(), &[1.0 / 12.0, 1.0]);
    }

    #[test]
    fn zero_weight_classifier_is_uniform() {
        let mut c = cfg(RecurrentKind::Linear);
        c.classes = 10;
        let mut p = AgentParams::<f64>::seeded(c, 5).unwrap();
        p.zero();
        let mut g = Graph::new(&p.set);
        let h = vec_node(&mut g, &[0.4; 5]);
        let lp = classify(&mut g, &p, h).unwrap();
        for &x in g.value(lp).data() {
            assert!((x + 2.302_585_1).abs() < 1e-7);
        }
    }

    fn shape() -> FeatureGrid {
        let space = ViewSpace::default();
        let feats = (0..space.cells() * 4).map(|i| ((i * 37 % 101) as f32) / 50.0 - 1.0).collect();
        FeatureGrid::new("s", 1, space, 4, feats).unwrap()
    }

    #[test]
    fn zero_params_test_rollout_starts_at_clamped_bias() {
        let mut c = cfg(RecurrentKind::Linear);
        c.steps = 1;
        let mut p = AgentParams::<f64>::seeded(c, 6).unwrap();
        p.zero();
        p.set.get_mut(p.view.1).data_mut().copy_from_slice(&[-0.5, 0.3]);
        let tr = rollout(&shape(), &p, Mode::Test, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let expected_r = (-0.5f64).exp_m1().max(1.0 / 12.0);
        assert_eq!(tr.steps[0].l, Location::new(expected_r, 0.3));
        assert_eq!(tr.steps.len(), 1);
    }

    #[test]
    fn train_rollout_is_deterministic_for_a_seed() {
        for kind in [RecurrentKind::Linear, RecurrentKind::Lstm] {
            let p = AgentParams::<f64>::seeded(cfg(kind), 7).unwrap();
            let a = rollout(&shape(), &p, Mode::Train, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
            let b = rollout(&shape(), &p, Mode::Train, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.steps.len(), 3);
            assert!(a.reward == 0.0 || a.reward == 1.0);
            for s in &a.steps {
                assert!(ViewSpace::default().contains(s.l));
                assert_eq!(s.grid, ViewSpace::default().to_grid(s.l));
            }
        }
    }

    #[test]
    fn baselines_match_steps() {
        let p = AgentParams::<f32>::seeded(cfg(RecurrentKind::Lstm), 8).unwrap();
        assert_eq!(p.baselines.len(), 3);
    }
}
