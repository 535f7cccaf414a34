//! Run manifests, checkpoints and CSV output.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use veram::agent::{AgentConfig, AgentParams};
use veram::diffcore::SgdState;
use veram::learning::{EpochMetrics, TrainConfig};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    #[serde(flatten)]
    pub metrics: EpochMetrics,
    pub test_instance_accuracy: Option<f64>,
    pub test_class_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Every setting, in config-file form.
    pub config: String,
    pub command: String,
    pub seed: u64,
    /// Epoch of the checkpoint this run continued from.
    pub resumed_from: Option<u64>,
    pub train_checksum: String,
    pub test_checksum: Option<String>,
    pub agent: AgentConfig,
    pub training: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    pub wall_clock_secs: f64,
    pub param_checksum: String,
    pub final_instance_accuracy: Option<f64>,
    pub final_class_accuracy: Option<f64>,
}

pub fn hex(x: u64) -> String {
    format!("{x:016x}")
}

/// Parameters, optimizer velocity and baselines, enough to resume exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub agent: AgentConfig,
    pub training: TrainConfig,
    pub epoch: u64,
    pub names: Vec<String>,
    /// `f64::to_bits` of every value, so the file round-trips exactly.
    pub params: Vec<Vec<u64>>,
    pub velocity: Vec<Vec<u64>>,
    pub baselines: Vec<u64>,
    pub param_checksum: String,
}

fn bits(xs: &[f64]) -> Vec<u64> {
    xs.iter().map(|x| x.to_bits()).collect()
}

impl Checkpoint {
    pub fn capture(params: &AgentParams<f64>, opt: &SgdState<f64>, training: &TrainConfig) -> Self {
        Self {
            agent: params.config.clone(),
            training: training.clone(),
            epoch: opt.epoch,
            names: params.set.names().to_vec(),
            params: params.set.tensors().iter().map(|t| bits(t.data())).collect(),
            velocity: opt.velocity().iter().map(|t| bits(t.data())).collect(),
            baselines: bits(&params.baselines),
            param_checksum: hex(params.checksum()),
        }
    }

    pub fn restore(&self) -> CliResult<(AgentParams<f64>, SgdState<f64>)> {
        let mut params = AgentParams::<f64>::seeded(self.agent.clone(), 0)?;
        let bad = |m: &str| CliError::Format(format!("checkpoint: {m}"));
        if params.set.names() != self.names.as_slice()
            || self.params.len() != params.set.len()
            || self.velocity.len() != params.set.len()
            || self.baselines.len() != params.baselines.len()
        {
            return Err(bad("parameter layout does not match its agent config"));
        }
        let mut opt = SgdState::new(&params.set, self.training.momentum);
        for (t, saved) in params.set.tensors_mut().iter_mut().zip(&self.params) {
            if t.len() != saved.len() {
                return Err(bad("tensor size mismatch"));
            }
            t.data_mut().iter_mut().zip(saved).for_each(|(x, &b)| *x = f64::from_bits(b));
        }
        for (t, saved) in opt.velocity_mut().iter_mut().zip(&self.velocity) {
            if t.len() != saved.len() {
                return Err(bad("velocity size mismatch"));
            }
            t.data_mut().iter_mut().zip(saved).for_each(|(x, &b)| *x = f64::from_bits(b));
        }
        params.baselines = self.baselines.iter().map(|&b| f64::from_bits(b)).collect();
        opt.epoch = self.epoch;
        if hex(params.checksum()) != self.param_checksum {
            return Err(bad("parameter checksum mismatch"));
        }
        Ok((params, opt))
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Writes a header and rows; fields are never quoted, so callers keep them
/// free of commas.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{}", header.join(","))?;
    for r in rows {
        writeln!(f, "{}", r.join(","))?;
    }
    f.flush()?;
    Ok(())
}
