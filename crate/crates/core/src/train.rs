//! Minibatch training of an [`Mlp`] on a regression dataset.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{mse_loss, Mlp, MlpConfig, Reduction};
use crate::optim::{sgd_step, AdamState, MilestoneSchedule, OptimizerKind};
use crate::tensor::{Tape, Tensor};

/// Shuffle streams are `SHUFFLE_STREAM + epoch`, clear of the init and data streams.
const SHUFFLE_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub milestones: Vec<usize>,
    pub decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            milestones: vec![100, 150, 200, 225],
            decay: 0.1,
            batch_size: 64,
            epochs: 250,
            seed: 0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainConfig {
    /// Plain SGD at 0.001 with a single decay at epoch 100.
    pub fn sgd() -> Self {
        Self {
            lr: 0.001,
            milestones: vec![100],
            optimizer: OptimizerKind::Sgd,
            ..Self::default()
        }
    }

    pub fn schedule(&self) -> MilestoneSchedule {
        MilestoneSchedule {
            lr: self.lr,
            milestones: self.milestones.clone(),
            decay: self.decay,
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.schedule().lr_at(epoch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "epochs and batch size must be positive".into(),
            ));
        }
        self.schedule().validate(self.epochs)
    }
}

/// Row-major inputs `[n × d_in]` and targets `[n × d_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub d_in: usize,
    pub d_out: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

impl Dataset {
    pub fn new(d_in: usize, d_out: usize, inputs: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        let n = inputs.len() / d_in.max(1);
        if d_in == 0 || d_out == 0 || inputs.len() != n * d_in || targets.len() != n * d_out {
            return Err(Error::InvalidConfig(format!(
                "dataset sizes disagree: {} inputs of dim {d_in}, {} targets of dim {d_out}",
                inputs.len(),
                targets.len()
            )));
        }
        Ok(Self {
            d_in,
            d_out,
            inputs,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.d_in
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_tensor(&self) -> Tensor {
        Tensor::new(self.inputs.clone(), &[self.len(), self.d_in]).expect("validated")
    }

    pub fn target_tensor(&self) -> Tensor {
        Tensor::new(self.targets.clone(), &[self.len(), self.d_out]).expect("validated")
    }

    fn gather(&self, rows: &[usize]) -> (Tensor, Tensor) {
        let mut x = Vec::with_capacity(rows.len() * self.d_in);
        let mut y = Vec::with_capacity(rows.len() * self.d_out);
        for &r in rows {
            x.extend_from_slice(&self.inputs[r * self.d_in..(r + 1) * self.d_in]);
            y.extend_from_slice(&self.targets[r * self.d_out..(r + 1) * self.d_out]);
        }
        (
            Tensor::new(x, &[rows.len(), self.d_in]).expect("gathered rows"),
            Tensor::new(y, &[rows.len(), self.d_out]).expect("gathered rows"),
        )
    }
}

/// Full-dataset loss and layer activity of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Squared error averaged over every output element.
    pub mean_loss: f64,
    /// Squared error summed over output dimensions, averaged over samples.
    pub per_sample_loss: f64,
    /// Fraction of strictly positive pre-activations in each hidden layer.
    pub activation_probability: Vec<f64>,
}

pub fn evaluate(model: &Mlp, data: &Dataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Empty { op: "evaluate" });
    }
    let pass = model.forward(&data.input_tensor())?;
    let mean_loss = mse_loss(&pass.output, &data.target_tensor(), Reduction::Mean)?
        .item()
        .expect("scalar");
    Ok(Evaluation {
        mean_loss,
        per_sample_loss: mean_loss * data.d_out as f64,
        activation_probability: activation_probability(&pass.pre_activations),
    })
}

/// Per-layer fraction of strictly positive entries.
pub fn activation_probability(pre_activations: &[Tensor]) -> Vec<f64> {
    pre_activations
        .iter()
        .map(|z| z.values().iter().filter(|&&v| v > 0.0).count() as f64 / z.len() as f64)
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model: Mlp,
    /// `None` when the run diverged.
    pub final_eval: Option<Evaluation>,
    /// Layer activation probabilities at initialisation and after each epoch.
    pub activation_trace: Vec<Vec<f64>>,
    pub epochs_completed: usize,
    pub diverged: bool,
}

/// He-initialises a network from `config.seed` and trains it.
pub fn train(mlp_config: MlpConfig, config: &TrainConfig, data: &Dataset) -> Result<TrainResult> {
    let model = Mlp::init_he_symmetric(mlp_config, config.seed)?;
    train_model(model, config, data, &mut |_, _| {})
}

/// Trains `model`, calling `observer(epoch, model)` at initialisation
/// (epoch 0) and after every completed epoch.
pub fn train_model(
    mut model: Mlp,
    config: &TrainConfig,
    data: &Dataset,
    observer: &mut dyn FnMut(usize, &Mlp),
) -> Result<TrainResult> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Empty { op: "train" });
    }
    if data.d_in != model.config().d_in || data.d_out != model.config().d_out {
        return Err(Error::Shape {
            op: "train",
            lhs: vec![data.d_in, data.d_out],
            rhs: vec![model.config().d_in, model.config().d_out],
        });
    }

    let shapes: Vec<Vec<f64>> = model
        .layers
        .iter()
        .flat_map(|l| [l.weight.clone(), l.bias.clone()])
        .collect();
    let mut adam = AdamState::new(&shapes);
    let mut trace = vec![evaluate(&model, data)?.activation_probability];
    observer(0, &model);

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut diverged = false;
    let mut epochs_completed = 0;
    'epochs: for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(SHUFFLE_STREAM + epoch as u64);
        order.shuffle(&mut rng);

        for rows in order.chunks(config.batch_size) {
            let (x, y) = data.gather(rows);
            let tape = Tape::new();
            let (pass, params) = model.forward_on(&tape, &x)?;
            let loss = mse_loss(&pass.output, &y, Reduction::Mean)?;
            if !loss.values()[0].is_finite() {
                diverged = true;
                break 'epochs;
            }
            loss.backward()?;
            let grads: Vec<Vec<f64>> = params
                .iter()
                .flat_map(|p| [&p.weight, &p.bias])
                .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.len()]))
                .collect();
            let grad_refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
            let mut param_refs: Vec<&mut [f64]> = model
                .layers
                .iter_mut()
                .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
                .collect();
            match config.optimizer {
                OptimizerKind::Adam => adam.step(&mut param_refs, &grad_refs, lr),
                OptimizerKind::Sgd => sgd_step(&mut param_refs, &grad_refs, lr),
            }
        }

        epochs_completed = epoch + 1;
        let eval = evaluate(&model, data)?;
        if !eval.mean_loss.is_finite() {
            diverged = true;
            break;
        }
        trace.push(eval.activation_probability);
        observer(epochs_completed, &model);
    }

    let final_eval = if diverged {
        None
    } else {
        Some(evaluate(&model, data)?)
    };
    Ok(TrainResult {
        model,
        final_eval,
        activation_trace: trace,
        epochs_completed,
        diverged,
    })
}
