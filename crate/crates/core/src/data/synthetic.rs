//! Desk-scale synthetic benchmark.
//!
//! Every class `k` owns a signature `s_k` and a set of `m` informative cells,
//! drawn from a pool of candidate cells shared by all classes, so one cell is
//! typically informative for several classes. A shape of class `k` renders
//! `s_k + noise` at its class's cells. Every other view of every shape
//! renders one shared ambiguous signature plus noise: `(1 - rho) g + rho a`,
//! where `g` is a random base vector and `a` a random convex mix of all class
//! signatures, so an uninformative view says nothing about the label.
//!
//! All draws come from `ChaCha8Rng` seeded with the configured `u64`, in a
//! fixed order, with integer ranges over `u32`, so output is identical on
//! every platform.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureGrid};
use crate::error::{Error, Result};
use crate::viewspace::{GridIndex, ViewSpace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub informative: usize,
    /// Size of the shared candidate pool; `None` means `2 * informative`,
    /// capped at the grid size.
    pub pool: Option<usize>,
    pub noise: f64,
    pub ambiguity: f64,
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
    pub train_fraction: f64,
}

impl Default for SyntheticConfig {
    /// The standard ablation benchmark.
    fn default() -> Self {
        Self {
            classes: 10,
            per_class: 60,
            dim: 32,
            informative: 2,
            pool: None,
            noise: 0.3,
            ambiguity: 0.5,
            rows: 12,
            cols: 12,
            seed: 0,
            train_fraction: 0.8,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.informative < 1 {
            return bad("need at least one informative cell per class".into());
        }
        if self.dim < self.classes {
            return bad(format!(
                "feature dim {} smaller than class count {}",
                self.dim, self.classes
            ));
        }
        if self.rows == 0 || self.cols == 0 || self.informative > self.rows * self.cols {
            return bad(format!(
                "{} informative cells do not fit a {}x{} grid",
                self.informative, self.rows, self.cols
            ));
        }
        let pool = self.pool_size();
        if pool < self.informative || pool > self.rows * self.cols {
            return bad(format!(
                "pool of {pool} cells cannot hold {} informative cells on a {}x{} grid",
                self.informative, self.rows, self.cols
            ));
        }
        if self.per_class == 0 {
            return bad("per_class must be positive".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise {} must be finite and >= 0", self.noise));
        }
        if !(0.0..=1.0).contains(&self.ambiguity) {
            return bad(format!("ambiguity {} outside [0, 1]", self.ambiguity));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return bad(format!("train fraction {} outside (0, 1]", self.train_fraction));
        }
        u32::try_from(self.rows * self.cols)
            .and(u32::try_from(self.classes))
            .map_err(|_| Error::InvalidConfig("grid or class count exceeds u32".into()))?;
        Ok(())
    }

    pub fn pool_size(&self) -> usize {
        self.pool
            .unwrap_or_else(|| (2 * self.informative).min(self.rows * self.cols))
    }

    pub fn space(&self) -> ViewSpace {
        ViewSpace {
            rows: self.rows,
            cols: self.cols,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSplit {
    pub train: Dataset,
    pub test: Dataset,
    /// Informative cells of each class, sorted.
    pub layout: Vec<Vec<GridIndex>>,
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticSplit> {
    cfg.validate()?;
    let space = cfg.space();
    let cells = space.cells();
    let (k, d) = (cfg.classes, cfg.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let signatures: Vec<Vec<f64>> = (0..k).map(|_| normal_vec(&mut rng, d)).collect();
    let base = normal_vec(&mut rng, d);
    let mix: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
    let mix_total: f64 = mix.iter().sum();
    let ambiguous: Vec<f64> = (0..d)
        .map(|i| {
            let a: f64 = (0..k).map(|c| mix[c] * signatures[c][i]).sum::<f64>() / mix_total;
            (1.0 - cfg.ambiguity) * base[i] + cfg.ambiguity * a
        })
        .collect();

    let mut all: Vec<u32> = (0..cells as u32).collect();
    all.shuffle(&mut rng);
    let pool = &all[..cfg.pool_size()];

    // informative[class][cell]
    let mut informative = vec![vec![false; cells]; k];
    let mut layout = Vec::with_capacity(k);
    for row in informative.iter_mut() {
        let mut order = pool.to_vec();
        order.shuffle(&mut rng);
        let mut chosen: Vec<usize> = order[..cfg.informative].iter().map(|&c| c as usize).collect();
        chosen.sort_unstable();
        for &c in &chosen {
            row[c] = true;
        }
        layout.push(
            chosen
                .iter()
                .map(|&c| GridIndex::new(c / space.cols + 1, c % space.cols + 1))
                .collect(),
        );
    }

    let names: Vec<String> = (0..k).map(|i| format!("class{i:02}")).collect();
    let mut train = Dataset::new(names.clone(), space, d);
    let mut test = Dataset::new(names, space, d);
    let n_train = ((cfg.per_class as f64 * cfg.train_fraction).round() as usize).min(cfg.per_class);
    let sigma = cfg.noise;

    for class in 0..k {
        let mut grids = Vec::with_capacity(cfg.per_class);
        for idx in 0..cfg.per_class {
            let mut feats = Vec::with_capacity(cells * d);
            for cell in 0..cells {
                if informative[class][cell] {
                    for &s in &signatures[class] {
                        let z: f64 = rng.sample(StandardNormal);
                        feats.push((s + sigma * z) as f32);
                    }
                } else {
                    for &a in &ambiguous {
                        let z: f64 = rng.sample(StandardNormal);
                        feats.push((a + sigma * z) as f32);
                    }
                }
            }
            let id = format!("syn-{class:02}-{idx:04}");
            grids.push(FeatureGrid::new(id, class, space, d, feats)?);
        }
        grids.shuffle(&mut rng);
        for (i, g) in grids.into_iter().enumerate() {
            if i < n_train {
                train.push(g)?;
            } else {
                test.push(g)?;
            }
        }
    }
    Ok(SyntheticSplit {
        train,
        test,
        layout,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            classes: 3,
            per_class: 10,
            dim: 4,
            informative: 1,
            rows: 4,
            cols: 4,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_data() {
        assert_eq!(generate_synthetic(&small(5)).unwrap(), generate_synthetic(&small(5)).unwrap());
        assert_ne!(
            generate_synthetic(&small(5)).unwrap().train,
            generate_synthetic(&small(6)).unwrap().train
        );
    }

    #[test]
    fn split_is_stratified_80_20() {
        let s = generate_synthetic(&small(1)).unwrap();
        assert_eq!(s.train.class_counts(), vec![8, 8, 8]);
        assert_eq!(s.test.class_counts(), vec![2, 2, 2]);
    }

    #[test]
    fn informative_views_are_exact_signatures_without_noise() {
        let cfg = SyntheticConfig {
            noise: 0.0,
            ..small(3)
        };
        let s = generate_synthetic(&cfg).unwrap();
        for class in 0..3 {
            let cell = s.layout[class][0];
            let views: Vec<&[f32]> = s
                .train
                .shapes
                .iter()
                .filter(|g| g.label == class)
                .map(|g| g.view(cell))
                .collect();
            assert!(views.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn rejects_invalid_configs() {
        for cfg in [
            SyntheticConfig { classes: 1, ..small(0) },
            SyntheticConfig { informative: 0, ..small(0) },
            SyntheticConfig { dim: 2, ..small(0) },
            SyntheticConfig { informative: 17, ..small(0) },
            SyntheticConfig { ambiguity: 1.5, ..small(0) },
            SyntheticConfig { pool: Some(0), ..small(0) },
            SyntheticConfig { pool: Some(17), ..small(0) },
        ] {
            assert!(matches!(generate_synthetic(&cfg), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn informative_cells_come_from_the_pool() {
        let cfg = SyntheticConfig::default();
        let s = generate_synthetic(&cfg).unwrap();
        let mut used: Vec<GridIndex> = s.layout.iter().flatten().copied().collect();
        used.sort();
        used.dedup();
        assert!(used.len() <= 4);
        assert!(s.layout.iter().all(|c| c.len() == 2 && c[0] != c[1]));
    }

    #[test]
    fn full_informative_grid_has_no_ambiguous_views() {
        let cfg = SyntheticConfig {
            noise: 0.0,
            ambiguity: 0.0,
            informative: 16,
            ..small(2)
        };
        let s = generate_synthetic(&cfg).unwrap();
        for g in &s.train.shapes {
            let first = g.view_at(0);
            assert!((1..16).all(|c| g.view_at(c) == first));
        }
    }
}
