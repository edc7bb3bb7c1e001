//! Closed-form activations and their analytic derivatives.
//!
//! Every kind here can serve as an ordinary activation (forward value plus its
//! true derivative) or as a surrogate donor whose derivative replaces ReLU's
//! in the backward pass. [`ActivationKind::NeluGrad`] only defines a
//! derivative and is usable solely as a directly injected gradient.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_2_SQRT_PI};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{sigmoid, softplus, Tensor};

pub const SELU_LAMBDA: f64 = 1.050_700_98;
pub const SELU_ALPHA: f64 = 1.673_263_24;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;
pub const DEFAULT_ELU_ALPHA: f64 = 1.0;
pub const DEFAULT_BSILU_ALPHA: f64 = 1.67;
pub const DEFAULT_NELU_ALPHA: f64 = 0.1;

// √(2/π) and the cubic coefficient of the tanh GELU approximation.
const GELU_TANH_SCALE: f64 = 0.797_884_560_802_865_4;
const GELU_TANH_CUBIC: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    LeakyRelu {
        slope: f64,
    },
    Elu {
        alpha: f64,
    },
    /// Fixed constants [`SELU_LAMBDA`] and [`SELU_ALPHA`].
    Selu,
    /// `x·Φ(x)`; `tanh_approx` switches to the tanh approximation.
    Gelu {
        tanh_approx: bool,
    },
    Silu,
    Mish,
    /// Bounded SiLU: `(x + α)·σ(x) − α/2`.
    BSilu {
        alpha: f64,
    },
    /// NeLU, derivative only: `1` for `x > 0`, else `α·2x/(1 + x²)²`.
    NeluGrad {
        alpha: f64,
    },
}

impl ActivationKind {
    pub fn leaky_relu() -> Self {
        Self::LeakyRelu {
            slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    pub fn elu() -> Self {
        Self::Elu {
            alpha: DEFAULT_ELU_ALPHA,
        }
    }

    pub fn gelu() -> Self {
        Self::Gelu { tanh_approx: false }
    }

    pub fn bsilu() -> Self {
        Self::BSilu {
            alpha: DEFAULT_BSILU_ALPHA,
        }
    }

    pub fn nelu(alpha: f64) -> Self {
        Self::NeluGrad { alpha }
    }

    /// One representative of every kind, with default parameters.
    pub fn catalogue() -> Vec<ActivationKind> {
        vec![
            Self::Relu,
            Self::leaky_relu(),
            Self::elu(),
            Self::Selu,
            Self::gelu(),
            Self::Silu,
            Self::Mish,
            Self::bsilu(),
            Self::nelu(0.01),
            Self::nelu(0.05),
            Self::nelu(DEFAULT_NELU_ALPHA),
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Relu => "relu",
            Self::LeakyRelu { .. } => "leaky_relu",
            Self::Elu { .. } => "elu",
            Self::Selu => "selu",
            Self::Gelu { tanh_approx: false } => "gelu",
            Self::Gelu { tanh_approx: true } => "gelu_tanh",
            Self::Silu => "silu",
            Self::Mish => "mish",
            Self::BSilu { .. } => "bsilu",
            Self::NeluGrad { .. } => "nelu",
        }
    }

    pub fn has_forward(&self) -> bool {
        !matches!(self, Self::NeluGrad { .. })
    }

    /// The kind's adjustable parameter, if it has one.
    pub fn param(&self) -> Option<f64> {
        match *self {
            Self::LeakyRelu { slope } => Some(slope),
            Self::Elu { alpha } | Self::BSilu { alpha } | Self::NeluGrad { alpha } => Some(alpha),
            _ => None,
        }
    }

    pub fn with_param(self, value: f64) -> Self {
        match self {
            Self::LeakyRelu { .. } => Self::LeakyRelu { slope: value },
            Self::Elu { .. } => Self::Elu { alpha: value },
            Self::BSilu { .. } => Self::BSilu { alpha: value },
            Self::NeluGrad { .. } => Self::NeluGrad { alpha: value },
            other => other,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Err(Error::InvalidParameter(format!(
                "{} {what} must be {}, got {v}",
                self.name(),
                if what == "slope" {
                    "in (0, 1)"
                } else {
                    "positive"
                }
            )))
        };
        match *self {
            Self::LeakyRelu { slope } if !(slope > 0.0 && slope < 1.0) => bad("slope", slope),
            Self::Elu { alpha } | Self::BSilu { alpha } | Self::NeluGrad { alpha }
                if !(alpha > 0.0 && alpha.is_finite()) =>
            {
                bad("alpha", alpha)
            }
            _ => Ok(()),
        }
    }

    pub fn forward(&self, x: f64) -> Result<f64> {
        if !self.has_forward() {
            return Err(Error::GradientOnly(self.to_string()));
        }
        Ok(self.forward_unchecked(x))
    }

    fn forward_unchecked(&self, x: f64) -> f64 {
        match *self {
            Self::Relu => relu(x),
            Self::LeakyRelu { slope } => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Self::Elu { alpha } => elu(x, alpha),
            Self::Selu => SELU_LAMBDA * elu(x, SELU_ALPHA),
            Self::Gelu { tanh_approx: false } => x * std_normal_cdf(x),
            Self::Gelu { tanh_approx: true } => {
                let u = GELU_TANH_SCALE * (x + GELU_TANH_CUBIC * x * x * x);
                0.5 * x * (1.0 + u.tanh())
            }
            Self::Silu => x * sigmoid(x),
            Self::Mish => x * softplus(x).tanh(),
            Self::BSilu { alpha } => (x + alpha) * sigmoid(x) - alpha / 2.0,
            Self::NeluGrad { .. } => unreachable!("checked by forward"),
        }
    }

    /// Analytic derivative. ReLU's derivative at the kink is 0.
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Self::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::LeakyRelu { slope } => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Self::Elu { alpha } => elu_derivative(x, alpha),
            Self::Selu => SELU_LAMBDA * elu_derivative(x, SELU_ALPHA),
            Self::Gelu { tanh_approx: false } => std_normal_cdf(x) + x * std_normal_pdf(x),
            Self::Gelu { tanh_approx: true } => {
                let u = GELU_TANH_SCALE * (x + GELU_TANH_CUBIC * x * x * x);
                let t = u.tanh();
                let du = GELU_TANH_SCALE * (1.0 + 3.0 * GELU_TANH_CUBIC * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            }
            Self::Silu => {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            }
            Self::Mish => {
                let t = softplus(x).tanh();
                t + x * (1.0 - t * t) * sigmoid(x)
            }
            Self::BSilu { alpha } => {
                let s = sigmoid(x);
                s + (x + alpha) * s * (1.0 - s)
            }
            Self::NeluGrad { alpha } => {
                if x > 0.0 {
                    1.0
                } else {
                    let d = 1.0 + x * x;
                    alpha * 2.0 * x / (d * d)
                }
            }
        }
    }

    /// Elementwise forward with this kind's own derivative as backward rule.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        if !self.has_forward() {
            return Err(Error::GradientOnly(self.to_string()));
        }
        Ok(x.unary(|v| self.forward_unchecked(v), |v| self.derivative(v)))
    }

    /// Constant tensor of derivative values.
    pub fn derivative_tensor(&self, x: &Tensor) -> Tensor {
        x.map_values(|v| self.derivative(v))
    }
}

/// `max(0, x)`, returning `+0.0` for every non-positive input.
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

fn elu(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        alpha * x.exp_m1()
    }
}

fn elu_derivative(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        alpha * x.exp()
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn std_normal_pdf(x: f64) -> f64 {
    // 1/√(2π) = (2/√π)·(1/√2)/2
    0.5 * FRAC_2_SQRT_PI * FRAC_1_SQRT_2 * (-0.5 * x * x).exp()
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.param() {
            Some(p) => write!(f, "{}:{}", self.name(), p),
            None => f.write_str(self.name()),
        }
    }
}

/// Parses `name` or `name:param`, e.g. `bsilu`, `bsilu:1.67`, `nelu:0.05`.
impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, param) = match s.split_once(':') {
            Some((n, p)) => {
                let v: f64 = p
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidParameter(format!("bad parameter in {s:?}")))?;
                (n.trim(), Some(v))
            }
            None => (s.trim(), None),
        };
        let kind = match name.to_ascii_lowercase().replace('-', "_").as_str() {
            "relu" => Self::Relu,
            "leaky_relu" | "leakyrelu" => Self::leaky_relu(),
            "elu" => Self::elu(),
            "selu" => Self::Selu,
            "gelu" => Self::gelu(),
            "gelu_tanh" => Self::Gelu { tanh_approx: true },
            "silu" | "swish" => Self::Silu,
            "mish" => Self::Mish,
            "bsilu" | "b_silu" => Self::bsilu(),
            "nelu" => Self::nelu(DEFAULT_NELU_ALPHA),
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "unknown activation {name:?}"
                )))
            }
        };
        let kind = match param {
            Some(_) if kind.param().is_none() => {
                return Err(Error::InvalidParameter(format!(
                    "{name} takes no parameter"
                )))
            }
            Some(p) => kind.with_param(p),
            None => kind,
        };
        kind.validate()?;
        Ok(kind)
    }
}
