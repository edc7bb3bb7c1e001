use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sugar::toy::{sweep_seeds, TaskId, ToyExperiment};
use sugar::train::TrainConfig;
use sugar::{Method, SugarSpec};

use crate::error::CliError;

/// Seeds used by `--quick`.
pub const QUICK_SEEDS: [u64; 5] = [1, 10, 20, 25, 42];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub lr: f64,
    pub epochs: usize,
    pub milestones: Vec<usize>,
    pub decay: f64,
    pub batch: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lr: t.lr,
            epochs: t.epochs,
            milestones: t.milestones,
            decay: t.decay,
            batch: t.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSettings {
    /// Grid points per landscape axis.
    pub resolution: usize,
    /// Landscape coordinates span `[-range, range]`.
    pub range: f64,
    /// Epochs at which activation profiles are written. Empty means the
    /// initialisation and the final epoch.
    pub profile_epochs: Vec<usize>,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            resolution: 100,
            range: 0.25,
            profile_epochs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub tasks: Vec<TaskId>,
    pub methods: Vec<Method>,
    pub runs: usize,
    pub base_seed: u64,
    /// Explicit seed list; overrides `runs` and `base_seed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    pub out_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    pub train: TrainSettings,
    pub analysis: AnalysisSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            tasks: vec![TaskId::F1],
            methods: vec![
                Method::Plain(sugar::ActivationKind::Relu),
                Method::Sugar(SugarSpec::direct(sugar::ActivationKind::bsilu())),
            ],
            runs: 100,
            base_seed: 0,
            seeds: None,
            out_dir: PathBuf::from("sugar-out"),
            jobs: None,
            train: TrainSettings::default(),
            analysis: AnalysisSettings::default(),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub tasks: Option<Vec<TaskId>>,
    pub methods: Option<Vec<Method>>,
    pub runs: Option<usize>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub milestones: Option<Vec<usize>>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub resolution: Option<usize>,
    pub range: Option<f64>,
    pub profile_epochs: Option<Vec<usize>>,
    pub alpha: Option<f64>,
    pub quick: bool,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Usage(msg) => CliError::Usage(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.tasks {
            self.tasks = v.clone();
        }
        if let Some(v) = &o.methods {
            self.methods = v.clone();
        }
        if let Some(v) = o.runs {
            self.runs = v;
            self.seeds = None;
        }
        if let Some(v) = o.seed {
            self.base_seed = v;
            self.seeds = None;
        }
        if o.quick {
            self.seeds = Some(QUICK_SEEDS.to_vec());
        }
        if let Some(v) = o.epochs {
            if o.milestones.is_none() {
                self.train.milestones = rescale(&self.train.milestones, self.train.epochs, v);
            }
            self.train.epochs = v;
        }
        if let Some(v) = &o.milestones {
            self.train.milestones = v.clone();
        }
        if let Some(v) = o.lr {
            self.train.lr = v;
        }
        if let Some(v) = o.batch {
            self.train.batch = v;
        }
        if let Some(v) = &o.out {
            self.out_dir = v.clone();
        }
        if let Some(v) = o.jobs {
            self.jobs = Some(v);
        }
        if let Some(v) = o.resolution {
            self.analysis.resolution = v;
        }
        if let Some(v) = o.range {
            self.analysis.range = v;
        }
        if let Some(v) = &o.profile_epochs {
            self.analysis.profile_epochs = v.clone();
        }
        if let Some(a) = o.alpha {
            for m in &mut self.methods {
                *m = with_alpha(*m, a);
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: &str| Err(CliError::Usage(m.to_string()));
        if self.tasks.is_empty() {
            return usage("at least one task is required");
        }
        if self.methods.is_empty() {
            return usage("at least one method is required");
        }
        if self.seeds().is_empty() {
            return usage("at least one run is required");
        }
        if self.jobs == Some(0) {
            return usage("--jobs must be at least 1");
        }
        if self.analysis.resolution == 0 {
            return usage("--resolution must be at least 1");
        }
        if !(self.analysis.range > 0.0 && self.analysis.range.is_finite()) {
            return usage("landscape range must be positive");
        }
        if let Some(&e) = self
            .analysis
            .profile_epochs
            .iter()
            .find(|&&e| e > self.train.epochs)
        {
            return Err(CliError::Usage(format!(
                "profile epoch {e} is past the last epoch {}",
                self.train.epochs
            )));
        }
        for m in &self.methods {
            m.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        }
        for task in &self.tasks {
            self.experiment(*task, self.methods[0])
                .validate()
                .map_err(|e| CliError::Usage(e.to_string()))?;
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) => s.clone(),
            None => sweep_seeds(self.base_seed, self.runs),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.train.lr,
            milestones: self.train.milestones.clone(),
            decay: self.train.decay,
            batch_size: self.train.batch,
            epochs: self.train.epochs,
            ..TrainConfig::default()
        }
    }

    pub fn experiment(&self, task: TaskId, method: Method) -> ToyExperiment {
        ToyExperiment {
            train: self.train_config(),
            ..ToyExperiment::new(task, method)
        }
    }

    pub fn profile_epochs(&self) -> Vec<usize> {
        if self.analysis.profile_epochs.is_empty() {
            vec![0, self.train.epochs]
        } else {
            self.analysis.profile_epochs.clone()
        }
    }
}

/// Moves milestones to the same fractions of a new epoch budget, dropping
/// any that collapse onto a neighbour or the ends.
fn rescale(milestones: &[usize], from: usize, to: usize) -> Vec<usize> {
    let mut out: Vec<usize> = milestones
        .iter()
        .map(|&m| m * to / from.max(1))
        .filter(|&m| m > 0 && m < to)
        .collect();
    out.dedup();
    out
}

fn with_alpha(method: Method, alpha: f64) -> Method {
    match method {
        Method::Plain(k) => Method::Plain(k.with_param(alpha)),
        Method::Sugar(s) => Method::Sugar(SugarSpec {
            surrogate: s.surrogate.with_param(alpha),
            ..s
        }),
    }
}
