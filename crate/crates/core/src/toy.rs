//! Dying-ReLU regression benchmark.
//!
//! Four low-dimensional targets are fit by a 10×2 network from symmetric He
//! initialisation; each run is classified by its final loss into collapsed
//! (A), partially learned (B), successful (C) or not collapsed (D).
//!
//! Losses are compared on a "batch-sum" scale: the per-sample squared error
//! over the full dataset multiplied by a nominal batch of 64. On that scale a
//! constant predictor for `f1` scores `64 · 0.25 = 16`, which is where the
//! reference collapse band sits.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Uniform;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mlp::{Mlp, MlpConfig};
use crate::sugar::Method;
use crate::train::{train_model, Dataset, TrainConfig, TrainResult};

pub const DEFAULT_SAMPLES: usize = 3000;
pub const NOMINAL_BATCH: f64 = 64.0;
pub const SEED_STRIDE: u64 = 9973;
/// Relative widening applied to reference band endpoints.
pub const BAND_SLACK: f64 = 0.10;

const DATA_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskId {
    F1,
    F2,
    F3,
    F4,
}

impl TaskId {
    pub const ALL: [TaskId; 4] = [TaskId::F1, TaskId::F2, TaskId::F3, TaskId::F4];

    pub fn d_in(self) -> usize {
        match self {
            TaskId::F4 => 2,
            _ => 1,
        }
    }

    pub fn d_out(self) -> usize {
        self.d_in()
    }

    /// Categories a run on this task may land in, besides Diverged and
    /// Unclassified.
    pub fn categories(self) -> &'static [OutcomeCategory] {
        use OutcomeCategory::*;
        match self {
            TaskId::F1 => &[A, B, C],
            _ => &[A, D],
        }
    }

    pub fn eval(self, x: &[f64]) -> Vec<f64> {
        match self {
            TaskId::F1 => vec![x[0].abs()],
            TaskId::F2 => vec![x[0] * (5.0 * x[0]).sin()],
            TaskId::F3 => {
                let step = if x[0] > 0.0 { 1.0 } else { 0.0 };
                vec![step + 0.2 * (5.0 * x[0]).sin()]
            }
            TaskId::F4 => vec![(x[0] + x[1]).abs(), (x[0] - x[1]).abs()],
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskId::F1 => "f1",
            TaskId::F2 => "f2",
            TaskId::F3 => "f3",
            TaskId::F4 => "f4",
        })
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f1" => Ok(TaskId::F1),
            "f2" => Ok(TaskId::F2),
            "f3" => Ok(TaskId::F3),
            "f4" => Ok(TaskId::F4),
            _ => Err(Error::InvalidParameter(format!("unknown task {s:?}"))),
        }
    }
}

/// `n` points drawn i.i.d. from `U[−√3, √3]^d_in`, row-major.
pub fn sample_inputs(task: TaskId, seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(DATA_STREAM);
    let half = 3f64.sqrt();
    let dist = Uniform::new_inclusive(-half, half).expect("finite bounds");
    (0..n * task.d_in()).map(|_| rng.sample(dist)).collect()
}

pub fn make_dataset(task: TaskId, seed: u64, n: usize) -> Dataset {
    let inputs = sample_inputs(task, seed, n);
    let targets = inputs
        .chunks_exact(task.d_in())
        .flat_map(|x| task.eval(x))
        .collect();
    Dataset::new(task.d_in(), task.d_out(), inputs, targets).expect("consistent task dims")
}

/// Loss of the best constant output, summed over output dimensions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloorEstimate {
    pub value: f64,
    /// Zero for closed forms.
    pub std_error: f64,
}

/// Variance of the target under the input distribution.
pub fn constant_predictor_loss(task: TaskId) -> FloorEstimate {
    match task {
        // E[x²] − (E|x|)² = 1 − 3/4
        TaskId::F1 => FloorEstimate {
            value: 0.25,
            std_error: 0.0,
        },
        // each output is |s| with s triangular on [−2√3, 2√3]: 2 − (2√3/3)²
        TaskId::F4 => FloorEstimate {
            value: 4.0 / 3.0,
            std_error: 0.0,
        },
        _ => monte_carlo_floor(task, 1_000_000, 0x5eed),
    }
}

pub fn monte_carlo_floor(task: TaskId, n: usize, seed: u64) -> FloorEstimate {
    let data = make_dataset(task, seed, n);
    let d = task.d_out();
    let means: Vec<f64> = (0..d)
        .map(|j| data.targets.iter().skip(j).step_by(d).sum::<f64>() / n as f64)
        .collect();
    let per_sample: Vec<f64> = data
        .targets
        .chunks_exact(d)
        .map(|y| y.iter().zip(&means).map(|(v, m)| (v - m).powi(2)).sum())
        .collect();
    let summary: crate::stats::Summary = per_sample.iter().copied().collect();
    FloorEstimate {
        value: summary.mean().unwrap_or(0.0),
        std_error: summary.std().unwrap_or(0.0) / (n as f64).sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OutcomeCategory {
    /// Collapsed: constant output.
    A,
    /// Learned some features.
    B,
    /// Approximates the target.
    C,
    /// Did not collapse.
    D,
    Diverged,
    Unclassified,
}

impl OutcomeCategory {
    pub const ALL: [OutcomeCategory; 6] = [
        OutcomeCategory::A,
        OutcomeCategory::B,
        OutcomeCategory::C,
        OutcomeCategory::D,
        OutcomeCategory::Diverged,
        OutcomeCategory::Unclassified,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for OutcomeCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Inclusive loss interval on the batch-sum scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub category: OutcomeCategory,
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    fn widened(category: OutcomeCategory, lo: f64, hi: f64) -> Self {
        Self {
            category,
            lo: lo * (1.0 - BAND_SLACK),
            hi: hi * (1.0 + BAND_SLACK),
        }
    }

    /// The best band also takes every loss below it.
    fn from_zero(category: OutcomeCategory, hi: f64) -> Self {
        Self {
            category,
            lo: 0.0,
            hi: hi * (1.0 + BAND_SLACK),
        }
    }

    pub fn contains(&self, loss: f64) -> bool {
        self.lo <= loss && loss <= self.hi
    }
}

pub fn bands(task: TaskId) -> Vec<Band> {
    use OutcomeCategory::*;
    match task {
        TaskId::F1 => vec![
            Band::widened(A, 15.5818, 15.7392),
            Band::widened(B, 10.5453, 11.0175),
            Band::from_zero(C, 0.6299),
        ],
        TaskId::F2 => vec![
            Band::widened(A, 36.2548, 36.6155),
            Band::from_zero(D, 27.2373),
        ],
        TaskId::F3 => vec![
            Band::widened(A, 19.2409, 19.4284),
            Band::from_zero(D, 1.4268),
        ],
        TaskId::F4 => {
            let floor = NOMINAL_BATCH * constant_predictor_loss(TaskId::F4).value;
            vec![
                Band {
                    category: A,
                    lo: 0.9 * floor,
                    hi: 1.05 * floor,
                },
                Band::from_zero(D, 64.7609),
            ]
        }
    }
}

pub fn batch_sum_loss(per_sample_loss: f64) -> f64 {
    NOMINAL_BATCH * per_sample_loss
}

pub fn classify_outcome(task: TaskId, batch_sum_loss: f64) -> OutcomeCategory {
    if !batch_sum_loss.is_finite() {
        return OutcomeCategory::Diverged;
    }
    bands(task)
        .into_iter()
        .find(|b| b.contains(batch_sum_loss))
        .map_or(OutcomeCategory::Unclassified, |b| b.category)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub task: TaskId,
    pub method: Method,
    pub final_mean_loss: Option<f64>,
    pub final_batch_sum_loss: Option<f64>,
    pub category: OutcomeCategory,
    /// `[epoch][layer]`, epoch 0 being the initialisation.
    pub activation_trace: Vec<Vec<f64>>,
    pub epochs_completed: usize,
    pub config_hash: String,
}

impl RunRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("records serialize")
    }

    pub fn from_line(line: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }

    /// Cross-layer mean activation probability per epoch.
    pub fn mean_activation_trace(&self) -> Vec<f64> {
        self.activation_trace
            .iter()
            .map(|layers| layers.iter().sum::<f64>() / layers.len().max(1) as f64)
            .collect()
    }
}

/// Everything that determines a run except its seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyExperiment {
    pub task: TaskId,
    pub method: Method,
    pub hidden_layers: usize,
    pub width: usize,
    pub n_samples: usize,
    pub train: TrainConfig,
}

impl ToyExperiment {
    pub fn new(task: TaskId, method: Method) -> Self {
        Self {
            task,
            method,
            hidden_layers: 10,
            width: 2,
            n_samples: DEFAULT_SAMPLES,
            train: TrainConfig::default(),
        }
    }

    pub fn mlp_config(&self) -> MlpConfig {
        MlpConfig {
            d_in: self.task.d_in(),
            d_out: self.task.d_out(),
            hidden_layers: self.hidden_layers,
            width: self.width,
            method: self.method,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidConfig("n_samples must be positive".into()));
        }
        self.mlp_config().validate()?;
        self.train.validate()
    }

    /// Digest of the configuration with the seed zeroed.
    pub fn config_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.train.seed = 0;
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    pub fn dataset(&self, seed: u64) -> Dataset {
        make_dataset(self.task, seed, self.n_samples)
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }

    pub fn run(&self, seed: u64) -> Result<RunRecord> {
        self.run_observed(seed, &mut |_, _| {}).map(|(r, _)| r)
    }

    /// Runs one seed, also returning the trained model.
    pub fn run_observed(
        &self,
        seed: u64,
        observer: &mut dyn FnMut(usize, &Mlp),
    ) -> Result<(RunRecord, TrainResult)> {
        let data = self.dataset(seed);
        let model = Mlp::init_he_symmetric(self.mlp_config(), seed)?;
        let result = train_model(model, &self.train_config(seed), &data, observer)?;
        Ok((self.record(seed, &result), result))
    }

    pub fn record(&self, seed: u64, result: &TrainResult) -> RunRecord {
        let (mean, batch_sum, category) = match &result.final_eval {
            Some(e) => {
                let bs = batch_sum_loss(e.per_sample_loss);
                (Some(e.mean_loss), Some(bs), classify_outcome(self.task, bs))
            }
            None => (None, None, OutcomeCategory::Diverged),
        };
        RunRecord {
            seed,
            task: self.task,
            method: self.method,
            final_mean_loss: mean,
            final_batch_sum_loss: batch_sum,
            category,
            activation_trace: result.activation_trace.clone(),
            epochs_completed: result.epochs_completed,
            config_hash: self.config_hash(),
        }
    }
}

pub fn derived_seed(base_seed: u64, run: usize) -> u64 {
    base_seed.wrapping_add((run as u64).wrapping_mul(SEED_STRIDE))
}

pub fn sweep_seeds(base_seed: u64, n_runs: usize) -> Vec<u64> {
    (0..n_runs).map(|i| derived_seed(base_seed, i)).collect()
}

/// Category tallies over a set of runs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Aggregate {
    counts: [usize; 6],
}

impl Aggregate {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a RunRecord>) -> Self {
        let mut agg = Aggregate::default();
        for r in records {
            agg.counts[r.category.index()] += 1;
        }
        agg
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn count(&self, c: OutcomeCategory) -> usize {
        self.counts[c.index()]
    }

    pub fn percent(&self, c: OutcomeCategory) -> f64 {
        match self.total() {
            0 => 0.0,
            n => 100.0 * self.count(c) as f64 / n as f64,
        }
    }

    pub fn csv_header() -> &'static str {
        "task,method,runs,A,B,C,D,Diverged,Unclassified"
    }

    /// Categories a task does not use print as `-`.
    pub fn csv_row(&self, task: TaskId, method: &Method) -> String {
        let cells: Vec<String> = OutcomeCategory::ALL
            .iter()
            .map(|&c| {
                let used = task.categories().contains(&c)
                    || matches!(c, OutcomeCategory::Diverged | OutcomeCategory::Unclassified);
                if used {
                    format!("{:.1}", self.percent(c))
                } else {
                    "-".to_string()
                }
            })
            .collect();
        format!("{task},{method},{},{}", self.total(), cells.join(","))
    }
}

#[derive(Debug, Clone)]
pub struct Sweep {
    pub records: Vec<RunRecord>,
    pub aggregate: Aggregate,
}

/// Runs `seeds` in parallel; records come back in seed order.
pub fn run_seeds(experiment: &ToyExperiment, seeds: &[u64]) -> Result<Sweep> {
    experiment.validate()?;
    let records = seeds
        .par_iter()
        .map(|&s| experiment.run(s))
        .collect::<Result<Vec<_>>>()?;
    let aggregate = Aggregate::from_records(&records);
    Ok(Sweep { records, aggregate })
}

pub fn run_sweep(experiment: &ToyExperiment, n_runs: usize, base_seed: u64) -> Result<Sweep> {
    if n_runs == 0 {
        return Err(Error::InvalidConfig("n_runs must be at least 1".into()));
    }
    run_seeds(experiment, &sweep_seeds(base_seed, n_runs))
}
