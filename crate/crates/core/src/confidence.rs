//! Per-view confidences from a single affine + log-softmax classifier
//! trained on every view of every training shape.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::diffcore::log_sum_exp;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadoutConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    pub max_epochs: u32,
    /// A plateau is a loss improvement below this fraction over `patience`
    /// epochs.
    pub tolerance: f64,
    pub patience: u32,
    /// On a plateau the rate is multiplied by `decay`, at most `decays`
    /// times; the next plateau stops training.
    pub decay: f64,
    pub decays: u32,
    pub seed: u64,
}

impl Default for ReadoutConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            batch: 32,
            max_epochs: 200,
            tolerance: 1e-5,
            patience: 10,
            decay: 0.1,
            decays: 2,
            seed: 0,
        }
    }
}

/// Multinomial logistic regression, `log_softmax(W x + b)`, kept in `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxRegression {
    pub classes: usize,
    pub dim: usize,
    /// Row-major `classes x dim`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    /// Mean training NLL after each epoch.
    pub history: Vec<f64>,
}

impl SoftmaxRegression {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self {
            classes,
            dim,
            w: vec![0.0; classes * dim],
            b: vec![0.0; classes],
            history: Vec::new(),
        }
    }

    pub fn log_probs(&self, x: &[f32]) -> Vec<f64> {
        let mut z = self.b.clone();
        for (k, zk) in z.iter_mut().enumerate() {
            let row = &self.w[k * self.dim..(k + 1) * self.dim];
            *zk += row.iter().zip(x).map(|(&w, &v)| w * v as f64).sum::<f64>();
        }
        let lse = log_sum_exp(&z);
        z.iter_mut().for_each(|v| *v -= lse);
        z
    }

    pub fn predict(&self, x: &[f32]) -> usize {
        crate::diffcore::argmax(&self.log_probs(x))
    }

    /// Minibatch SGD with momentum on the mean NLL.
    pub fn fit(xs: &[&[f32]], ys: &[usize], classes: usize, cfg: &ReadoutConfig) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if xs.len() != ys.len() {
            return Err(Error::Dimension {
                op: "readout fit",
                left: vec![xs.len()],
                right: vec![ys.len()],
            });
        }
        let dim = xs[0].len();
        if let Some(x) = xs.iter().find(|x| x.len() != dim) {
            return Err(Error::Dimension {
                op: "readout fit",
                left: vec![dim],
                right: vec![x.len()],
            });
        }
        if let Some(&y) = ys.iter().find(|&&y| y >= classes) {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        let mut present = vec![false; classes];
        ys.iter().for_each(|&y| present[y] = true);
        let distinct = present.iter().filter(|&&p| p).count();
        if distinct < 2 {
            return Err(Error::DegenerateClasses(distinct));
        }

        let mut m = Self::zeros(classes, dim);
        let mut vw = vec![0.0; classes * dim];
        let mut vb = vec![0.0; classes];
        let mut gw = vec![0.0; classes * dim];
        let mut gb = vec![0.0; classes];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<u32> = (0..xs.len() as u32).collect();
        let batch = cfg.batch.max(1);
        let mut lr = cfg.lr;
        let mut decays_left = cfg.decays;
        // epoch index the plateau test compares against
        let mut since = 0;
        for _ in 0..cfg.max_epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(batch) {
                gw.iter_mut().for_each(|g| *g = 0.0);
                gb.iter_mut().for_each(|g| *g = 0.0);
                let inv = 1.0 / chunk.len() as f64;
                for &i in chunk {
                    let (x, y) = (xs[i as usize], ys[i as usize]);
                    let lp = m.log_probs(x);
                    total -= lp[y];
                    for k in 0..classes {
                        let d = (lp[k].exp() - (k == y) as u8 as f64) * inv;
                        gb[k] += d;
                        for (g, &v) in gw[k * dim..(k + 1) * dim].iter_mut().zip(x) {
                            *g += d * v as f64;
                        }
                    }
                }
                for ((p, v), g) in m.w.iter_mut().zip(vw.iter_mut()).zip(&gw) {
                    *v = cfg.momentum * *v - lr * g;
                    *p += *v;
                }
                for ((p, v), g) in m.b.iter_mut().zip(vb.iter_mut()).zip(&gb) {
                    *v = cfg.momentum * *v - lr * g;
                    *p += *v;
                }
            }
            let loss = total / xs.len() as f64;
            if !loss.is_finite() {
                return Err(Error::NonFinite("readout loss".into()));
            }
            m.history.push(loss);
            let n = m.history.len();
            let p = cfg.patience as usize;
            if p > 0 && n > since + p {
                let old = m.history[n - 1 - p];
                if old <= 0.0 || (old - loss) / old < cfg.tolerance {
                    if decays_left == 0 {
                        break;
                    }
                    decays_left -= 1;
                    lr *= cfg.decay;
                    since = n;
                }
            }
        }
        Ok(m)
    }

    pub fn accuracy(&self, xs: &[&[f32]], ys: &[usize]) -> f64 {
        if xs.is_empty() {
            return 0.0;
        }
        let right = xs.iter().zip(ys).filter(|(x, &y)| self.predict(x) == y).count();
        right as f64 / xs.len() as f64
    }
}

/// Trains the per-view classifier on all views of `train`, each labelled
/// with its shape's class.
pub fn train_confidence_net(train: &Dataset, cfg: &ReadoutConfig) -> Result<SoftmaxRegression> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let cells = train.space.cells();
    let mut xs = Vec::with_capacity(train.len() * cells);
    let mut ys = Vec::with_capacity(train.len() * cells);
    for s in &train.shapes {
        for c in 0..cells {
            xs.push(s.view_at(c));
            ys.push(s.label);
        }
    }
    SoftmaxRegression::fit(&xs, &ys, train.num_classes(), cfg)
}

/// Per shape, the probability the classifier gives the shape's own label at
/// every cell.
pub fn extract_confidences(net: &SoftmaxRegression, ds: &Dataset) -> Result<Vec<Vec<f32>>> {
    if net.dim != ds.dim || net.classes != ds.num_classes() {
        return Err(Error::Dimension {
            op: "extract confidences",
            left: vec![net.classes, net.dim],
            right: vec![ds.num_classes(), ds.dim],
        });
    }
    let cells = ds.space.cells();
    Ok(ds
        .shapes
        .par_iter()
        .map(|s| {
            (0..cells)
                .map(|c| net.log_probs(s.view_at(c))[s.label].exp().clamp(0.0, 1.0) as f32)
                .collect()
        })
        .collect())
}

/// Writes confidences into every shape of `ds`.
pub fn attach_confidences(net: &SoftmaxRegression, ds: &mut Dataset) -> Result<()> {
    let grids = extract_confidences(net, ds)?;
    for (s, c) in ds.shapes.iter_mut().zip(grids) {
        s.set_confidences(c)?;
    }
    Ok(())
}
