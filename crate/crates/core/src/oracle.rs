//! Exhaustive search over fixed view sequences on small grids.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::AgentParams;
use crate::confidence::{ReadoutConfig, SoftmaxRegression};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::learning::evaluate;
use crate::scalar::Scalar;
use crate::viewspace::GridIndex;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub steps: usize,
    /// Largest number of sequences to enumerate.
    pub budget: u128,
    pub readout: ReadoutConfig,
}

impl OracleConfig {
    pub fn new(steps: usize) -> Self {
        Self {
            steps,
            budget: 1 << 16,
            readout: ReadoutConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub sequence: Vec<GridIndex>,
    pub accuracy: f64,
    pub evaluated: usize,
}

/// Next view as a function of the views visited so far.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiscretePolicy {
    pub steps: usize,
    table: BTreeMap<Vec<GridIndex>, GridIndex>,
}

impl DiscretePolicy {
    /// Open-loop policy visiting `seq` regardless of what it sees.
    pub fn fixed(seq: &[GridIndex]) -> Self {
        let table = (0..seq.len()).map(|t| (seq[..t].to_vec(), seq[t])).collect();
        Self {
            steps: seq.len(),
            table,
        }
    }

    pub fn insert(&mut self, history: Vec<GridIndex>, next: GridIndex) {
        self.table.insert(history, next);
    }

    pub fn next(&self, history: &[GridIndex]) -> Option<GridIndex> {
        self.table.get(history).copied()
    }

    /// Follows the policy from the start for `steps` views.
    pub fn unroll(&self) -> Option<Vec<GridIndex>> {
        let mut h = Vec::with_capacity(self.steps);
        for _ in 0..self.steps {
            h.push(self.next(&h)?);
        }
        Some(h)
    }
}

fn concat_views(ds: &Dataset, seq: &[GridIndex]) -> Vec<Vec<f32>> {
    ds.shapes
        .iter()
        .map(|s| seq.iter().flat_map(|&g| s.view(g).iter().copied()).collect())
        .collect()
}

/// Test accuracy of a readout fitted on the training views at `seq`.
pub fn sequence_accuracy(train: &Dataset, test: &Dataset, seq: &[GridIndex], readout: &ReadoutConfig) -> Result<f64> {
    let xtr = concat_views(train, seq);
    let ytr: Vec<usize> = train.shapes.iter().map(|s| s.label).collect();
    let refs: Vec<&[f32]> = xtr.iter().map(Vec::as_slice).collect();
    let net = SoftmaxRegression::fit(&refs, &ytr, train.num_classes(), readout)?;
    let xte = concat_views(test, seq);
    let yte: Vec<usize> = test.shapes.iter().map(|s| s.label).collect();
    let refs: Vec<&[f32]> = xte.iter().map(Vec::as_slice).collect();
    Ok(net.accuracy(&refs, &yte))
}

fn nth_sequence(mut n: u128, cells: &[GridIndex], steps: usize) -> Vec<GridIndex> {
    let c = cells.len() as u128;
    let mut seq = vec![cells[0]; steps];
    for slot in seq.iter_mut().rev() {
        *slot = cells[(n % c) as usize];
        n /= c;
    }
    seq
}

/// Every sequence of `cfg.steps` cells, in lexicographic order.
pub fn enumerate_sequences(train: &Dataset, cfg: &OracleConfig) -> Result<Vec<Vec<GridIndex>>> {
    if cfg.steps == 0 {
        return Err(Error::InvalidConfig("oracle horizon must be at least 1".into()));
    }
    let cells: Vec<GridIndex> = train.space.all_cells().collect();
    let needed = (cells.len() as u128)
        .checked_pow(cfg.steps as u32)
        .unwrap_or(u128::MAX);
    if needed > cfg.budget {
        return Err(Error::BudgetExceeded {
            needed,
            budget: cfg.budget,
        });
    }
    Ok((0..needed).map(|n| nth_sequence(n, &cells, cfg.steps)).collect())
}

/// Best open-loop sequence by test accuracy; ties go to the
/// lexicographically smallest sequence.
pub fn best_fixed_sequence(train: &Dataset, test: &Dataset, cfg: &OracleConfig) -> Result<OracleResult> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let seqs = enumerate_sequences(train, cfg)?;
    let scores: Vec<f64> = seqs
        .par_iter()
        .map(|s| sequence_accuracy(train, test, s, &cfg.readout))
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, &a) in scores.iter().enumerate() {
        if a > scores[best] {
            best = i;
        }
    }
    Ok(OracleResult {
        sequence: seqs[best].clone(),
        accuracy: scores[best],
        evaluated: seqs.len(),
    })
}

/// Oracle accuracy minus the agent's test instance accuracy.
pub fn policy_gap<S: Scalar>(params: &AgentParams<S>, test: &Dataset, oracle: &OracleResult) -> Result<f64> {
    if params.config.steps != oracle.sequence.len() {
        return Err(Error::InvalidConfig(format!(
            "agent horizon {} differs from oracle horizon {}",
            params.config.steps,
            oracle.sequence.len()
        )));
    }
    let ev = evaluate(test, params)?;
    Ok(oracle.accuracy - ev.instance_accuracy)
}
