//! Training rules: classification loss, REINFORCE with a per-step baseline,
//! the boundary schemes, confidence weighting, the location-separation hinge,
//! and the ablation ladder.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{record_episode, AgentParams, Episode, Mode, Transfer};
use crate::data::{Dataset, FeatureGrid};
use crate::diffcore::{Gradients, LrSchedule, SgdState, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::viewspace::{gauss_logpdf_grad, Location, Metric, ViewSpace};

/// Cumulative ablation ladder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Classical,
    Boundary,
    Conf,
    Loc,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Classical, Variant::Boundary, Variant::Conf, Variant::Loc];

    /// ELU transfer, clamp inside the sampler, and the boundary sign rule.
    pub fn boundary_schemes(self) -> bool {
        self >= Variant::Boundary
    }

    pub fn confidence_weighting(self) -> bool {
        self >= Variant::Conf
    }

    pub fn location_loss(self) -> bool {
        self == Variant::Loc
    }

    pub fn transfer(self) -> Transfer {
        if self.boundary_schemes() {
            Transfer::Elu
        } else {
            Transfer::HardTanh
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Classical => "ClassicalRAM",
            Variant::Boundary => "BoundaryRAM",
            Variant::Conf => "ConfRAM",
            Variant::Loc => "LocRAM",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "classical" | "classicalram" => Ok(Variant::Classical),
            "boundary" | "boundaryram" => Ok(Variant::Boundary),
            "conf" | "confram" => Ok(Variant::Conf),
            "loc" | "locram" => Ok(Variant::Loc),
            _ => Err(Error::InvalidConfig(format!("unknown variant {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub variant: Variant,
    pub delta: f64,
    pub lambda_loc: f64,
    /// Hinge margin; `None` means one cell spacing.
    pub margin: Option<f64>,
    pub metric: Metric,
    pub baseline_rate: f64,
}

impl SchemeConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            delta: 0.11,
            lambda_loc: 1.0,
            margin: None,
            metric: Metric::Euclidean,
            baseline_rate: 0.05,
        }
    }

    pub fn margin_for(&self, space: ViewSpace) -> f64 {
        self.margin.unwrap_or_else(|| space.cell_spacing())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad(format!("delta {} must be positive", self.delta));
        }
        if !(self.lambda_loc >= 0.0 && self.lambda_loc.is_finite()) {
            return bad(format!("lambda_loc {} must be >= 0", self.lambda_loc));
        }
        if !(self.baseline_rate > 0.0 && self.baseline_rate <= 1.0) {
            return bad(format!("baseline rate {} outside (0, 1]", self.baseline_rate));
        }
        if let Some(m) = self.margin {
            if !(m >= 0.0 && m.is_finite()) {
                return bad(format!("margin {m} must be >= 0"));
            }
        }
        Ok(())
    }
}

/// `-log_probs[label]`
pub fn nll_loss<S: Scalar>(log_probs: &[S], label: usize) -> Result<S> {
    log_probs
        .get(label)
        .map(|&x| -x)
        .ok_or(Error::LabelOutOfRange {
            label,
            classes: log_probs.len(),
        })
}

/// Inputs of the policy-gradient estimate for one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicySample<S> {
    pub u: Location<S>,
    /// The location the score function is evaluated at.
    pub l: Location<S>,
    pub reward: S,
    pub baseline: S,
    pub confidence: S,
    pub correct: bool,
}

/// Ascent direction of the expected reward with respect to `u`, per
/// coordinate: `sign (R - b) (l - u) / delta^2 w`.
pub fn reinforce_grad<S: Scalar>(
    s: &PolicySample<S>,
    variant: Variant,
    delta: S,
    space: ViewSpace,
) -> [S; 2] {
    let w = if variant.confidence_weighting() {
        if s.correct {
            s.confidence
        } else {
            S::one() - s.confidence
        }
    } else {
        S::one()
    };
    let adv = s.reward - s.baseline;
    let (u, l) = (s.u.to_array(), s.l.to_array());
    let mut out = [S::zero(); 2];
    for k in 0..2 {
        let sign = if variant.boundary_schemes() {
            space.boundary_sign(k, u[k], l[k], s.correct)
        } else {
            S::one()
        };
        out[k] = sign * adv * gauss_logpdf_grad(u[k], l[k], delta) * w;
    }
    out
}

/// `sum_{i<j} max(0, margin - d(l_i, l_j))` and its gradient with respect to
/// each location. The hinge corner gets subgradient zero.
pub fn location_loss<S: Scalar>(locations: &[Location<S>], margin: S, metric: Metric) -> (S, Vec<[S; 2]>) {
    let n = locations.len();
    let mut grads = vec![[S::zero(); 2]; n];
    let mut total = S::zero();
    for i in 0..n {
        for j in i + 1..n {
            let d = metric.distance(locations[i], locations[j]);
            if d < margin {
                total += margin - d;
                let gi = metric.distance_grad(locations[i], locations[j]);
                let gj = metric.distance_grad(locations[j], locations[i]);
                for k in 0..2 {
                    grads[i][k] -= gi[k];
                    grads[j][k] -= gj[k];
                }
            }
        }
    }
    (total, grads)
}

/// `(1 - rate) b + rate R`, written so that `b = R` is an exact fixed point.
pub fn baseline_update<S: Scalar>(b: S, reward: S, rate: S) -> S {
    b + rate * (reward - b)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Mean over the batch.
    pub nll: f64,
    /// Norm of the batch-summed REINFORCE seed at each step.
    pub reinforce_norms: Vec<f64>,
    /// Mean over the batch.
    pub location_loss: f64,
    pub examples: usize,
    pub accuracy: f64,
}

/// One episode's contribution to a batch.
pub struct EpisodeGrad<S> {
    pub grads: Gradients<S>,
    pub nll: S,
    pub location_loss: S,
    pub reinforce: Vec<[S; 2]>,
    pub reward: S,
}

/// Rolls out `shape` in train mode and backpropagates the combined
/// objective, each part scaled by `1 / batch`.
pub fn episode_gradients<S: Scalar, R: Rng + ?Sized>(
    shape: &FeatureGrid,
    params: &AgentParams<S>,
    scheme: &SchemeConfig,
    batch: usize,
    rng: &mut R,
) -> Result<EpisodeGrad<S>> {
    let variant = scheme.variant;
    if variant.confidence_weighting() && shape.confidences().is_none() {
        return Err(Error::MissingConfidences);
    }
    let Episode {
        mut graph,
        trace,
        u_nodes,
        log_probs,
        ..
    } = record_episode(shape, params, Mode::Train, rng)?;
    let space = params.config.space;
    let inv_b = S::one() / S::lit(batch as f64);
    let delta = S::lit(scheme.delta);
    let nll = nll_loss(&trace.log_probs, shape.label)?;

    let mut seeds = Vec::with_capacity(u_nodes.len() + 1);
    let mut onehot = Tensor::zeros(&[trace.log_probs.len()]);
    onehot.data_mut()[shape.label] = -inv_b;
    seeds.push((log_probs, onehot));

    let correct = trace.correct();
    let mut reinforce = Vec::with_capacity(u_nodes.len());
    let mut u_seeds: Vec<[S; 2]> = Vec::with_capacity(u_nodes.len());
    for (t, step) in trace.steps.iter().enumerate() {
        let l = if variant.boundary_schemes() { step.l } else { step.raw };
        let sample = PolicySample {
            u: step.u,
            l,
            reward: trace.reward,
            baseline: params.baselines[t],
            confidence: step.confidence.unwrap_or(S::one()),
            correct,
        };
        let g = reinforce_grad(&sample, variant, delta, space);
        reinforce.push(g);
        u_seeds.push([-g[0] * inv_b, -g[1] * inv_b]);
    }

    let mut loc = S::zero();
    if variant.location_loss() && scheme.lambda_loc > 0.0 {
        let visited: Vec<Location<S>> = trace.steps.iter().map(|s| s.l).collect();
        let (value, grads) = location_loss(&visited, S::lit(scheme.margin_for(space)), scheme.metric);
        loc = value;
        let lam = S::lit(scheme.lambda_loc) * inv_b;
        for (seed, g) in u_seeds.iter_mut().zip(&grads) {
            seed[0] += lam * g[0];
            seed[1] += lam * g[1];
        }
    }
    for (node, s) in u_nodes.iter().zip(&u_seeds) {
        seeds.push((*node, Tensor::vector(s.to_vec())));
    }
    let grads = graph.backward_with(&seeds)?;
    Ok(EpisodeGrad {
        grads,
        nll,
        location_loss: loc,
        reinforce,
        reward: trace.reward,
    })
}

/// Sums the episode gradients of `batch` (in order), applies one momentum
/// step at rate `lr`, then updates the baselines episode by episode.
///
/// Each episode gets its own generator seeded from `rng`, so the result does
/// not depend on how rollouts are scheduled across threads.
pub fn train_step<S: Scalar, R: Rng + ?Sized>(
    batch: &[&FeatureGrid],
    params: &mut AgentParams<S>,
    opt: &mut SgdState<S>,
    lr: S,
    scheme: &SchemeConfig,
    rng: &mut R,
) -> Result<LossReport> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let seeds: Vec<u64> = batch.iter().map(|_| rng.random()).collect();
    let n = batch.len();
    let p: &AgentParams<S> = params;
    let results: Vec<Result<EpisodeGrad<S>>> = batch
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(shape, &seed)| {
            let mut erng = ChaCha8Rng::seed_from_u64(seed);
            episode_gradients(shape, p, scheme, n, &mut erng)
        })
        .collect();

    let mut total = Gradients::zeros_like(&params.set);
    let steps = params.config.steps;
    let mut seed_sums = vec![[0.0f64; 2]; steps];
    let (mut nll, mut loc, mut correct) = (0.0, 0.0, 0usize);
    let mut rewards = Vec::with_capacity(n);
    for r in results {
        let e = r?;
        total.accumulate(&e.grads, S::one());
        nll += e.nll.as_f64();
        loc += e.location_loss.as_f64();
        for (acc, g) in seed_sums.iter_mut().zip(&e.reinforce) {
            acc[0] += g[0].as_f64() / n as f64;
            acc[1] += g[1].as_f64() / n as f64;
        }
        if e.reward > S::zero() {
            correct += 1;
        }
        rewards.push(e.reward);
    }
    if !total.all_finite() {
        return Err(Error::NonFinite("gradients".into()));
    }
    opt.step(&mut params.set, total.params(), lr);
    if !params.set.all_finite() {
        return Err(Error::NonFinite("parameters".into()));
    }
    let rate = S::lit(scheme.baseline_rate);
    for &r in &rewards {
        for b in params.baselines.iter_mut() {
            *b = baseline_update(*b, r, rate);
        }
    }
    Ok(LossReport {
        nll: nll / n as f64,
        reinforce_norms: seed_sums.iter().map(|g| g[0].hypot(g[1])).collect(),
        location_loss: loc / n as f64,
        examples: n,
        accuracy: correct as f64 / n as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub scheme: SchemeConfig,
    pub epochs: u32,
    pub batch: usize,
    pub momentum: f64,
    pub schedule: LrSchedule,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(variant: Variant, epochs: u32) -> Self {
        Self {
            scheme: SchemeConfig::new(variant),
            epochs,
            batch: 20,
            momentum: 0.9,
            schedule: LrSchedule::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scheme.validate()?;
        if self.batch == 0 {
            return Err(Error::InvalidConfig("batch must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        Ok(())
    }

    /// Generator for 1-based `epoch`; independent of all earlier epochs.
    pub fn epoch_rng(&self, epoch: u32) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch as u64);
        rng
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: u32,
    pub lr: f64,
    pub nll: f64,
    pub location_loss: f64,
    pub train_accuracy: f64,
}

/// Runs one epoch: shuffles the training set and takes one step per batch.
pub fn train_epoch<S: Scalar>(
    train: &Dataset,
    params: &mut AgentParams<S>,
    opt: &mut SgdState<S>,
    cfg: &TrainConfig,
) -> Result<EpochMetrics> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let epoch = opt.epoch as u32 + 1;
    let lr = cfg.schedule.rate(epoch);
    let mut rng = cfg.epoch_rng(epoch);
    let mut order: Vec<u32> = (0..train.len() as u32).collect();
    order.shuffle(&mut rng);
    let (mut nll, mut loc, mut acc) = (0.0, 0.0, 0.0);
    for chunk in order.chunks(cfg.batch) {
        let batch: Vec<&FeatureGrid> = chunk.iter().map(|&i| &train.shapes[i as usize]).collect();
        let rep = train_step(&batch, params, opt, S::lit(lr), &cfg.scheme, &mut rng)?;
        let k = rep.examples as f64;
        nll += rep.nll * k;
        loc += rep.location_loss * k;
        acc += rep.accuracy * k;
    }
    opt.epoch += 1;
    let n = train.len() as f64;
    Ok(EpochMetrics {
        epoch,
        lr,
        nll: nll / n,
        location_loss: loc / n,
        train_accuracy: acc / n,
    })
}

/// Trains from `opt.epoch` up to `cfg.epochs`, calling `on_epoch` after each.
pub fn train<S: Scalar>(
    train_set: &Dataset,
    params: &mut AgentParams<S>,
    opt: &mut SgdState<S>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics, &AgentParams<S>, &SgdState<S>) -> Result<()>,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    if cfg.scheme.variant.confidence_weighting() && !train_set.has_confidences() {
        return Err(Error::MissingConfidences);
    }
    let mut out = Vec::new();
    while (opt.epoch as u32) < cfg.epochs {
        let m = train_epoch(train_set, params, opt, cfg)?;
        on_epoch(&m, params, opt)?;
        out.push(m);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub instance_accuracy: f64,
    pub class_accuracy: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
    /// Classes with no shapes; left out of the class accuracy.
    pub missing_classes: Vec<usize>,
    /// Share of visited views lying on the outer ring of cells.
    pub border_fraction: f64,
    /// Visit counts per step, row-major over cells.
    pub visits: Vec<Vec<usize>>,
}

/// Accuracy summary from a confusion matrix.
pub fn accuracies(confusion: &[Vec<usize>]) -> (f64, f64, Vec<usize>) {
    let total: usize = confusion.iter().flatten().sum();
    let right: usize = (0..confusion.len()).map(|k| confusion[k][k]).sum();
    let mut per_class = Vec::new();
    let mut missing = Vec::new();
    for (k, row) in confusion.iter().enumerate() {
        let n: usize = row.iter().sum();
        if n == 0 {
            missing.push(k);
        } else {
            per_class.push(row[k] as f64 / n as f64);
        }
    }
    let inst = if total == 0 { 0.0 } else { right as f64 / total as f64 };
    let class = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().sum::<f64>() / per_class.len() as f64
    };
    (inst, class, missing)
}

/// Test-mode rollouts over the whole dataset.
pub fn evaluate<S: Scalar>(ds: &Dataset, params: &AgentParams<S>) -> Result<Evaluation> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let space = params.config.space;
    let traces: Vec<_> = ds
        .shapes
        .par_iter()
        .map(|s| {
            // test mode never draws
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            crate::agent::rollout(s, params, Mode::Test, &mut rng)
        })
        .collect::<Result<_>>()?;
    let k = ds.num_classes();
    let mut confusion = vec![vec![0usize; k]; k];
    let mut visits = vec![vec![0usize; space.cells()]; params.config.steps];
    let (mut border, mut views) = (0usize, 0usize);
    for tr in &traces {
        if tr.predicted >= k {
            return Err(Error::LabelOutOfRange {
                label: tr.predicted,
                classes: k,
            });
        }
        confusion[tr.label][tr.predicted] += 1;
        for (t, st) in tr.steps.iter().enumerate() {
            visits[t][space.offset(st.grid)] += 1;
            border += space.is_border(st.grid) as usize;
            views += 1;
        }
    }
    let (instance_accuracy, class_accuracy, missing_classes) = accuracies(&confusion);
    Ok(Evaluation {
        instance_accuracy,
        class_accuracy,
        confusion,
        missing_classes,
        border_fraction: border as f64 / views as f64,
        visits,
    })
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;

    #[test]
    fn nll_examples() {
        let uniform = vec![-(10f64.ln()); 10];
        assert!((nll_loss(&uniform, 3).unwrap() - 2.302_585_1).abs() < 1e-7);
        assert_eq!(nll_loss(&[0.0, -40.0], 0).unwrap(), 0.0);
        let lp = [-0.4076f64, -1.4076, -2.4076];
        assert!((nll_loss(&lp, 2).unwrap() - 2.4076).abs() < 1e-12);
        assert!(matches!(nll_loss(&lp, 3), Err(Error::LabelOutOfRange { .. })));
    }

    fn sample(u: f64, l: f64, reward: f64, baseline: f64, confidence: f64, correct: bool) -> PolicySample<f64> {
        PolicySample {
            u: Location::new(u, 0.5),
            l: Location::new(l, 0.5),
            reward,
            baseline,
            confidence,
            correct,
        }
    }

    #[test]
    fn reinforce_examples() {
        let space = ViewSpace::default();
        let g = reinforce_grad(&sample(0.5, 0.61, 1.0, 0.0, 1.0, true), Variant::Conf, 0.11, space);
        assert!((g[0] - 9.090_909_090_909).abs() < 1e-9);
        assert_eq!(g[1], 0.0);

        let g = reinforce_grad(&sample(0.5, 0.61, 0.0, 0.5, 0.8, false), Variant::Conf, 0.11, space);
        assert!((g[0] + 0.909_090_909_09).abs() < 1e-9);

        let lo = 1.0 / 12.0;
        let interior = reinforce_grad(&sample(0.0, lo, 0.0, 0.5, 0.8, false), Variant::Boundary, 0.11, space);
        let raw = (0.0 - 0.5) * (lo - 0.0) / (0.11 * 0.11);
        assert!((interior[0] + raw).abs() < 1e-12);
        let classical = reinforce_grad(&sample(0.0, lo, 0.0, 0.5, 0.8, false), Variant::Classical, 0.11, space);
        assert!((classical[0] - raw).abs() < 1e-12);
    }

    #[test]
    fn reinforce_matches_score_function_difference() {
        let (l, delta, adv) = (0.61f64, 0.11, 0.7);
        let logn = |u: f64| -((l - u) * (l - u)) / (2.0 * delta * delta);
        let eps = 1e-6;
        let u = 0.5;
        let fd = adv * (logn(u + eps) - logn(u - eps)) / (2.0 * eps);
        let g = reinforce_grad(&sample(u, l, 1.0, 0.3, 1.0, true), Variant::Boundary, delta, ViewSpace::default());
        assert!((g[0] - fd).abs() < 1e-6);
    }

    #[test]
    fn location_loss_examples() {
        let m: f64 = 1.0 / 12.0;
        let a = Location::new(m, 0.4);
        let (v, g) = location_loss(&[a, a], m, Metric::Euclidean);
        assert!((v - 0.083_333).abs() < 1e-6);
        assert_eq!(g, vec![[0.0; 2]; 2]);
        let b = Location::new(2.0 * m, 0.4);
        assert_eq!(location_loss(&[a, b], m, Metric::Euclidean).0, 0.0);
        let c = Location::new(m + 0.05, 0.4);
        assert!((location_loss(&[a, c], m, Metric::Euclidean).0 - 0.033_333).abs() < 1e-6);
        assert_eq!(location_loss(&[a], m, Metric::Euclidean).0, 0.0);
    }

    #[test]
    fn baseline_examples() {
        assert!((baseline_update(0.0, 1.0, 0.1) - 0.1f64).abs() < 1e-15);
        assert_eq!(baseline_update(0.4f64, 0.4, 0.3), 0.4);
    }

    #[test]
    fn accuracy_weighting() {
        let conf = vec![vec![90, 0], vec![10, 0]];
        let (inst, class, missing) = accuracies(&conf);
        assert!((inst - 0.9).abs() < 1e-12);
        assert!((class - 0.5).abs() < 1e-12);
        assert!(missing.is_empty());
        let (_, class, missing) = accuracies(&[vec![3, 0, 0], vec![0, 0, 0], vec![0, 0, 1]]);
        assert_eq!(class, 1.0);
        assert_eq!(missing, vec![1]);
    }

    #[test]
    fn variant_ladder_is_cumulative() {
        assert!(!Variant::Classical.boundary_schemes());
        for v in [Variant::Boundary, Variant::Conf, Variant::Loc] {
            assert!(v.boundary_schemes());
        }
        assert!(Variant::Loc.confidence_weighting() && !Variant::Boundary.confidence_weighting());
        assert_eq!("LocRAM".parse::<Variant>().unwrap(), Variant::Loc);
    }
}
