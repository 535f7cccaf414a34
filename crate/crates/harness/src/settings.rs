//! Every tunable of the harness, settable from a `key=value` config file and
//! overridden by command-line flags.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use veram::agent::{AgentConfig, RecurrentKind};
use veram::confidence::ReadoutConfig;
use veram::data::SyntheticConfig;
use veram::diffcore::LrSchedule;
use veram::learning::{SchemeConfig, TrainConfig, Variant};
use veram::oracle::OracleConfig;
use veram::viewspace::{Metric, ViewSpace};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// Fixed epoch breakpoints: 1e-3 hold to epoch 600, decay to 1e-5 at 1200.
    Full,
    /// Same shape squeezed into `epochs`: hold to 40%, floor from 80%.
    Compressed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub seed: u64,
    pub threads: Option<usize>,

    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub informative: usize,
    pub pool: Option<usize>,
    pub noise: f64,
    pub ambiguity: f64,
    pub rows: usize,
    pub cols: usize,
    pub train_fraction: f64,

    pub variant: Variant,
    pub recurrent: RecurrentKind,
    pub steps: usize,
    pub delta: f64,
    pub hidden: usize,
    pub embed: usize,
    pub adapter: Option<usize>,
    pub start: f64,
    pub view_init_scale: f64,
    pub forget_bias: f64,

    pub epochs: u32,
    pub batch: usize,
    pub momentum: f64,
    pub schedule: ScheduleKind,
    pub lr: f64,
    pub lr_floor: f64,
    pub lambda_loc: f64,
    pub margin: Option<f64>,
    pub metric: Metric,
    pub baseline_rate: f64,
    pub checkpoint_every: Option<u32>,
    pub eval_every: u32,

    pub readout_lr: f64,
    pub readout_momentum: f64,
    pub readout_batch: usize,
    pub readout_epochs: u32,
    pub readout_tolerance: f64,
    pub readout_patience: u32,
    pub readout_decay: f64,
    pub readout_decays: u32,

    pub seeds: Vec<u64>,
    pub sweep_steps: Vec<usize>,
    pub variants: Vec<Variant>,

    pub budget: u128,
}

impl Default for Settings {
    fn default() -> Self {
        let syn = SyntheticConfig::default();
        let readout = ReadoutConfig::default();
        let scheme = SchemeConfig::new(Variant::Loc);
        Self {
            seed: 0,
            threads: None,
            classes: syn.classes,
            per_class: syn.per_class,
            dim: syn.dim,
            informative: syn.informative,
            pool: syn.pool,
            noise: syn.noise,
            ambiguity: syn.ambiguity,
            rows: syn.rows,
            cols: syn.cols,
            train_fraction: syn.train_fraction,
            variant: Variant::Loc,
            recurrent: RecurrentKind::Linear,
            steps: 4,
            delta: scheme.delta,
            hidden: 64,
            embed: 16,
            adapter: None,
            start: 0.5,
            view_init_scale: 0.1,
            forget_bias: 1.0,
            epochs: 1500,
            batch: 20,
            momentum: 0.9,
            schedule: ScheduleKind::Full,
            lr: 1e-3,
            lr_floor: 1e-5,
            lambda_loc: scheme.lambda_loc,
            margin: None,
            metric: Metric::Euclidean,
            baseline_rate: scheme.baseline_rate,
            checkpoint_every: None,
            eval_every: 10,
            readout_lr: readout.lr,
            readout_momentum: readout.momentum,
            readout_batch: readout.batch,
            readout_epochs: readout.max_epochs,
            readout_tolerance: readout.tolerance,
            readout_patience: readout.patience,
            readout_decay: readout.decay,
            readout_decays: readout.decays,
            seeds: vec![0, 1, 2, 3, 4],
            sweep_steps: vec![4],
            variants: Variant::ALL.to_vec(),
            budget: 1 << 16,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| CliError::Usage(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> CliResult<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match value.trim() {
        "" | "none" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> CliResult<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let out: Vec<T> = value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect::<CliResult<_>>()?;
    if out.is_empty() {
        return Err(CliError::Usage(format!("{key}: empty list")));
    }
    Ok(out)
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn opt<T: ToString>(x: &Option<T>) -> String {
    x.as_ref().map_or_else(|| "none".into(), T::to_string)
}

fn recurrent_name(r: RecurrentKind) -> &'static str {
    match r {
        RecurrentKind::Linear => "linear",
        RecurrentKind::Lstm => "lstm",
    }
}

fn variant_key(v: Variant) -> &'static str {
    match v {
        Variant::Classical => "classical",
        Variant::Boundary => "boundary",
        Variant::Conf => "conf",
        Variant::Loc => "loc",
    }
}

impl Settings {
    /// Sets one key. Dashes and underscores are interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let k = key.trim().replace('-', "_");
        let v = value.trim();
        match k.as_str() {
            "seed" => self.seed = parse(&k, v)?,
            "threads" => self.threads = parse_opt(&k, v)?,
            "classes" => self.classes = parse(&k, v)?,
            "per_class" => self.per_class = parse(&k, v)?,
            "dim" => self.dim = parse(&k, v)?,
            "informative" => self.informative = parse(&k, v)?,
            "pool" => self.pool = parse_opt(&k, v)?,
            "noise" => self.noise = parse(&k, v)?,
            "ambiguity" => self.ambiguity = parse(&k, v)?,
            "rows" => self.rows = parse(&k, v)?,
            "cols" => self.cols = parse(&k, v)?,
            "train_fraction" => self.train_fraction = parse(&k, v)?,
            "variant" => self.variant = v.parse().map_err(|e: veram::Error| CliError::Usage(e.to_string()))?,
            "recurrent" => {
                self.recurrent = match v.to_ascii_lowercase().as_str() {
                    "linear" => RecurrentKind::Linear,
                    "lstm" => RecurrentKind::Lstm,
                    _ => return Err(CliError::Usage(format!("recurrent: expected linear or lstm, got {v:?}"))),
                }
            }
            "steps" => self.steps = parse(&k, v)?,
            "delta" => self.delta = parse(&k, v)?,
            "hidden" => self.hidden = parse(&k, v)?,
            "embed" => self.embed = parse(&k, v)?,
            "adapter" => self.adapter = parse_opt(&k, v)?,
            "start" => self.start = parse(&k, v)?,
            "view_init_scale" => self.view_init_scale = parse(&k, v)?,
            "forget_bias" => self.forget_bias = parse(&k, v)?,
            "epochs" => self.epochs = parse(&k, v)?,
            "batch" => self.batch = parse(&k, v)?,
            "momentum" => self.momentum = parse(&k, v)?,
            "schedule" => {
                self.schedule = match v.to_ascii_lowercase().as_str() {
                    "full" => ScheduleKind::Full,
                    "compressed" => ScheduleKind::Compressed,
                    _ => return Err(CliError::Usage(format!("schedule: expected full or compressed, got {v:?}"))),
                }
            }
            "lr" => self.lr = parse(&k, v)?,
            "lr_floor" => self.lr_floor = parse(&k, v)?,
            "lambda_loc" => self.lambda_loc = parse(&k, v)?,
            "margin" => self.margin = parse_opt(&k, v)?,
            "metric" => {
                self.metric = match v.to_ascii_lowercase().as_str() {
                    "euclidean" => Metric::Euclidean,
                    "toroidal" => Metric::Toroidal,
                    _ => return Err(CliError::Usage(format!("metric: expected euclidean or toroidal, got {v:?}"))),
                }
            }
            "baseline_rate" => self.baseline_rate = parse(&k, v)?,
            "checkpoint_every" => self.checkpoint_every = parse_opt(&k, v)?,
            "eval_every" => self.eval_every = parse(&k, v)?,
            "readout_lr" => self.readout_lr = parse(&k, v)?,
            "readout_momentum" => self.readout_momentum = parse(&k, v)?,
            "readout_batch" => self.readout_batch = parse(&k, v)?,
            "readout_epochs" => self.readout_epochs = parse(&k, v)?,
            "readout_tolerance" => self.readout_tolerance = parse(&k, v)?,
            "readout_patience" => self.readout_patience = parse(&k, v)?,
            "readout_decay" => self.readout_decay = parse(&k, v)?,
            "readout_decays" => self.readout_decays = parse(&k, v)?,
            "seeds" => self.seeds = parse_list(&k, v)?,
            "sweep_steps" => self.sweep_steps = parse_list(&k, v)?,
            "variants" => {
                self.variants = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| s.trim().parse().map_err(|e: veram::Error| CliError::Usage(e.to_string())))
                    .collect::<CliResult<_>>()?;
                if self.variants.is_empty() {
                    return Err(CliError::Usage("variants: empty list".into()));
                }
            }
            "budget" => self.budget = parse(&k, v)?,
            _ => return Err(CliError::Usage(format!("unknown setting {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> CliResult<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("{origin}:{}: expected key=value", n + 1)))?;
            self.set(k, v)
                .map_err(|e| CliError::Usage(format!("{origin}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> CliResult<()> {
        let text = std::fs::read_to_string(path)?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Config-file form of every setting; `apply_text` on a default
    /// `Settings` reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        put("seed", self.seed.to_string());
        put("threads", opt(&self.threads));
        put("classes", self.classes.to_string());
        put("per_class", self.per_class.to_string());
        put("dim", self.dim.to_string());
        put("informative", self.informative.to_string());
        put("pool", opt(&self.pool));
        put("noise", self.noise.to_string());
        put("ambiguity", self.ambiguity.to_string());
        put("rows", self.rows.to_string());
        put("cols", self.cols.to_string());
        put("train_fraction", self.train_fraction.to_string());
        put("variant", variant_key(self.variant).into());
        put("recurrent", recurrent_name(self.recurrent).into());
        put("steps", self.steps.to_string());
        put("delta", self.delta.to_string());
        put("hidden", self.hidden.to_string());
        put("embed", self.embed.to_string());
        put("adapter", opt(&self.adapter));
        put("start", self.start.to_string());
        put("view_init_scale", self.view_init_scale.to_string());
        put("forget_bias", self.forget_bias.to_string());
        put("epochs", self.epochs.to_string());
        put("batch", self.batch.to_string());
        put("momentum", self.momentum.to_string());
        put(
            "schedule",
            match self.schedule {
                ScheduleKind::Full => "full",
                ScheduleKind::Compressed => "compressed",
            }
            .into(),
        );
        put("lr", self.lr.to_string());
        put("lr_floor", self.lr_floor.to_string());
        put("lambda_loc", self.lambda_loc.to_string());
        put("margin", opt(&self.margin));
        put(
            "metric",
            match self.metric {
                Metric::Euclidean => "euclidean",
                Metric::Toroidal => "toroidal",
            }
            .into(),
        );
        put("baseline_rate", self.baseline_rate.to_string());
        put("checkpoint_every", opt(&self.checkpoint_every));
        put("eval_every", self.eval_every.to_string());
        put("readout_lr", self.readout_lr.to_string());
        put("readout_momentum", self.readout_momentum.to_string());
        put("readout_batch", self.readout_batch.to_string());
        put("readout_epochs", self.readout_epochs.to_string());
        put("readout_tolerance", self.readout_tolerance.to_string());
        put("readout_patience", self.readout_patience.to_string());
        put("readout_decay", self.readout_decay.to_string());
        put("readout_decays", self.readout_decays.to_string());
        put("seeds", join(&self.seeds));
        put("sweep_steps", join(&self.sweep_steps));
        put(
            "variants",
            self.variants.iter().map(|&v| variant_key(v)).collect::<Vec<_>>().join(","),
        );
        put("budget", self.budget.to_string());
        s
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            classes: self.classes,
            per_class: self.per_class,
            dim: self.dim,
            informative: self.informative,
            pool: self.pool,
            noise: self.noise,
            ambiguity: self.ambiguity,
            rows: self.rows,
            cols: self.cols,
            seed: self.seed,
            train_fraction: self.train_fraction,
        }
    }

    pub fn readout(&self) -> ReadoutConfig {
        ReadoutConfig {
            lr: self.readout_lr,
            momentum: self.readout_momentum,
            batch: self.readout_batch,
            max_epochs: self.readout_epochs,
            tolerance: self.readout_tolerance,
            patience: self.readout_patience,
            decay: self.readout_decay,
            decays: self.readout_decays,
            seed: self.seed,
        }
    }

    pub fn agent(&self, space: ViewSpace, dim: usize, classes: usize, variant: Variant, steps: usize) -> AgentConfig {
        AgentConfig {
            embed: self.embed,
            adapter: self.adapter,
            hidden: self.hidden,
            recurrent: self.recurrent,
            transfer: variant.transfer(),
            steps,
            delta: self.delta,
            start: self.start,
            view_init_scale: self.view_init_scale,
            forget_bias: self.forget_bias,
            ..AgentConfig::new(space, dim, classes)
        }
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        match self.schedule {
            ScheduleKind::Full => LrSchedule {
                base: self.lr,
                floor: self.lr_floor,
                ..LrSchedule::default()
            },
            ScheduleKind::Compressed => LrSchedule::compressed(self.lr, self.lr_floor, self.epochs),
        }
    }

    pub fn training(&self, variant: Variant, seed: u64) -> TrainConfig {
        TrainConfig {
            scheme: SchemeConfig {
                variant,
                delta: self.delta,
                lambda_loc: self.lambda_loc,
                margin: self.margin,
                metric: self.metric,
                baseline_rate: self.baseline_rate,
            },
            epochs: self.epochs,
            batch: self.batch,
            momentum: self.momentum,
            schedule: self.lr_schedule(),
            seed,
        }
    }

    pub fn oracle(&self, steps: usize) -> OracleConfig {
        OracleConfig {
            steps,
            budget: self.budget,
            readout: self.readout(),
        }
    }

    /// Desk-scale training defaults used by the benchmark runs: 150 epochs
    /// on the compressed schedule from 3e-3.
    pub fn desk() -> Self {
        Self {
            epochs: 150,
            schedule: ScheduleKind::Compressed,
            lr: 3e-3,
            lr_floor: 3e-5,
            ..Self::default()
        }
    }
}
