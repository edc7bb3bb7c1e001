//! Forward gradient injection for ReLU.
//!
//! Both constructions keep ReLU's forward value bit-for-bit and swap only the
//! backward rule:
//!
//! * indirect: `y = g(x) − sg(g(x)) + sg(relu(x))`, so `dy/dx = g'(x)` by
//!   differentiating the surrogate's forward function;
//! * direct: `m = x·sg(g̃(x))`, `y = m − sg(m) + sg(relu(x))`, so
//!   `dy/dx = g̃(x)` exactly, where `g̃` is the surrogate's closed-form
//!   derivative. This form also accepts gradient-only surrogates such as NeLU.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::activation::{relu, ActivationKind};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionMode {
    Indirect,
    Direct,
}

/// ReLU forward paired with a surrogate backward rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SugarSpec {
    pub mode: InjectionMode,
    pub surrogate: ActivationKind,
}

impl SugarSpec {
    pub fn direct(surrogate: ActivationKind) -> Self {
        Self {
            mode: InjectionMode::Direct,
            surrogate,
        }
    }

    pub fn indirect(surrogate: ActivationKind) -> Self {
        Self {
            mode: InjectionMode::Indirect,
            surrogate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.surrogate.validate()?;
        if self.mode == InjectionMode::Indirect && !self.surrogate.has_forward() {
            return Err(Error::GradientOnly(self.surrogate.to_string()));
        }
        Ok(())
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        match self.mode {
            InjectionMode::Indirect => sugar_indirect(x, &self.surrogate),
            InjectionMode::Direct => sugar_direct(x, &self.surrogate),
        }
    }
}

/// `g(x) − sg(g(x)) + sg(target(x))`: forward of `target`, gradient of `g`.
pub fn inject_indirect(
    x: &Tensor,
    surrogate: &ActivationKind,
    target: impl Fn(f64) -> f64,
) -> Result<Tensor> {
    let g = surrogate.apply(x)?;
    let cancelled = g.sub(&g.stop_gradient())?;
    assert_zero_forward(&cancelled);
    cancelled.add(&x.map_values(target))
}

/// `m = x·sg(g̃(x))`, `m − sg(m) + sg(target(x))`: forward of `target`,
/// gradient exactly `g̃(x)`.
pub fn inject_direct(
    x: &Tensor,
    surrogate: &ActivationKind,
    target: impl Fn(f64) -> f64,
) -> Result<Tensor> {
    let m = x.mul(&surrogate.derivative_tensor(x))?;
    let cancelled = m.sub(&m.stop_gradient())?;
    assert_zero_forward(&cancelled);
    cancelled.add(&x.map_values(target))
}

pub fn sugar_indirect(x: &Tensor, surrogate: &ActivationKind) -> Result<Tensor> {
    inject_indirect(x, surrogate, relu)
}

pub fn sugar_direct(x: &Tensor, surrogate: &ActivationKind) -> Result<Tensor> {
    inject_direct(x, surrogate, relu)
}

/// `v − v` is exactly `+0.0` for every finite `v`.
fn assert_zero_forward(t: &Tensor) {
    debug_assert!(
        t.values()
            .iter()
            .all(|v| !v.is_finite() || v.to_bits() == 0),
        "gradient injection left a nonzero forward residue"
    );
}

/// What a hidden layer applies after its affine map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// The kind's own forward and derivative.
    Plain(ActivationKind),
    /// ReLU forward with a surrogate derivative.
    Sugar(SugarSpec),
}

impl Method {
    pub fn validate(&self) -> Result<()> {
        match self {
            Method::Plain(k) => {
                k.validate()?;
                if !k.has_forward() {
                    return Err(Error::GradientOnly(k.to_string()));
                }
                Ok(())
            }
            Method::Sugar(s) => s.validate(),
        }
    }

    /// File-name friendly form of [`Display`](fmt::Display).
    pub fn slug(&self) -> String {
        self.to_string().replace(':', "_")
    }
}

/// A validated activation operator ready to be used inside a network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Activation(Method);

impl Activation {
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        match &self.0 {
            Method::Plain(k) => k.apply(x),
            Method::Sugar(s) => s.apply(x),
        }
    }

    /// Forward value of a single pre-activation.
    pub fn forward_value(&self, x: f64) -> f64 {
        match &self.0 {
            Method::Plain(k) => k.forward(x).expect("validated at construction"),
            Method::Sugar(_) => relu(x),
        }
    }

    pub fn method(&self) -> &Method {
        &self.0
    }
}

pub fn make_activation(method: impl Into<Method>) -> Result<Activation> {
    let method = method.into();
    method.validate()?;
    Ok(Activation(method))
}

impl From<ActivationKind> for Method {
    fn from(k: ActivationKind) -> Self {
        Method::Plain(k)
    }
}

impl From<SugarSpec> for Method {
    fn from(s: SugarSpec) -> Self {
        Method::Sugar(s)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Plain(k) => write!(f, "{k}"),
            Method::Sugar(SugarSpec {
                mode: InjectionMode::Direct,
                surrogate,
            }) => write!(f, "sugar:{surrogate}"),
            Method::Sugar(SugarSpec {
                mode: InjectionMode::Indirect,
                surrogate,
            }) => write!(f, "sugar-indirect:{surrogate}"),
        }
    }
}

/// `relu`, `elu:0.5`, `sugar:bsilu`, `sugar-direct:nelu:0.01`,
/// `sugar-indirect:elu`. Plain `sugar:` means direct injection.
impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let method = match s.split_once(':') {
            Some((prefix, rest)) if prefix.starts_with("sugar") => {
                let mode = match prefix {
                    "sugar" | "sugar-direct" => InjectionMode::Direct,
                    "sugar-indirect" => InjectionMode::Indirect,
                    _ => {
                        return Err(Error::InvalidParameter(format!(
                            "unknown injection mode {prefix:?}"
                        )))
                    }
                };
                Method::Sugar(SugarSpec {
                    mode,
                    surrogate: rest.parse()?,
                })
            }
            _ => Method::Plain(s.parse()?),
        };
        method.validate()?;
        Ok(method)
    }
}

impl Serialize for Method {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    const BSILU: ActivationKind = ActivationKind::BSilu { alpha: 1.67 };

    fn grad_of(values: &[f64], f: impl Fn(&Tensor) -> Result<Tensor>) -> (Vec<f64>, Vec<f64>) {
        let tape = Tape::new();
        let x = tape.param(values.to_vec(), &[values.len()]).unwrap();
        let y = f(&x).unwrap();
        y.sum().unwrap().backward().unwrap();
        (y.values().to_vec(), x.grad().unwrap())
    }

    #[test]
    fn indirect_relu_with_elu_surrogate() {
        let elu = ActivationKind::elu();
        let (y, g) = grad_of(&[-1.0, 3.0, 0.0], |x| sugar_indirect(x, &elu));
        assert_eq!(y, vec![0.0, 3.0, 0.0]);
        assert!((g[0] - (-1f64).exp()).abs() < 1e-15);
        assert!((g[0] - 0.367_879).abs() < 1e-6);
        assert_eq!(g[1], 1.0);
        assert_eq!(g[2], elu.derivative(0.0));
    }

    #[test]
    fn indirect_bsilu_values() {
        let (y, g) = grad_of(&[-3.0, 0.5, 5.0], |x| sugar_indirect(x, &BSILU));
        assert_eq!(y, vec![0.0, 0.5, 5.0]);
        // reference values from 30-digit evaluation of σ + (x + α)σ(1 − σ)
        assert!((g[0] + 0.012_659_084_264_546_36).abs() < 1e-15, "{}", g[0]);
        assert!((g[2] - 1.037_649_687_069_885_5).abs() < 1e-15, "{}", g[2]);
    }

    #[test]
    fn direct_nelu_values() {
        let nelu = ActivationKind::nelu(0.1);
        let (y, g) = grad_of(&[2.0, -1.0], |x| sugar_direct(x, &nelu));
        assert_eq!(y, vec![2.0, 0.0]);
        assert_eq!(g[0], 1.0);
        assert!((g[1] + 0.05).abs() < 1e-15);
    }

    #[test]
    fn direct_and_indirect_agree() {
        let xs = [-3.0, -0.7, 0.0, 0.2, 4.0];
        let (_, gd) = grad_of(&xs, |x| sugar_direct(x, &BSILU));
        let (_, gi) = grad_of(&xs, |x| sugar_indirect(x, &BSILU));
        for (a, b) in gd.iter().zip(&gi) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn chain_rule_through_direct_injection() {
        let tape = Tape::new();
        let xs = vec![-2.0, -0.5, 1.5];
        let x = tape.param(xs.clone(), &[3]).unwrap();
        let w = Tensor::from_vec(vec![0.3, -1.7, 2.5]);
        let loss = w
            .mul(&sugar_direct(&x, &BSILU).unwrap())
            .unwrap()
            .sum()
            .unwrap();
        loss.backward().unwrap();
        let g = x.grad().unwrap();
        for i in 0..3 {
            assert_eq!(g[i], w.values()[i] * BSILU.derivative(xs[i]));
        }
    }

    #[test]
    fn indirect_rejects_gradient_only_surrogate() {
        let spec = SugarSpec::indirect(ActivationKind::nelu(0.1));
        assert!(matches!(spec.validate(), Err(Error::GradientOnly(_))));
        assert!(make_activation(spec).is_err());
        let x = Tensor::from_vec(vec![1.0]);
        assert!(sugar_indirect(&x, &ActivationKind::nelu(0.1)).is_err());
        assert!(make_activation(ActivationKind::nelu(0.1)).is_err());
        assert!(make_activation(SugarSpec::direct(ActivationKind::nelu(0.1))).is_ok());
    }

    #[test]
    fn make_activation_forward_and_backward() {
        let relu = make_activation(ActivationKind::Relu).unwrap();
        let x = Tensor::from_vec(vec![-1.0, 2.0]);
        assert_eq!(relu.apply(&x).unwrap().values(), &[0.0, 2.0]);

        let nelu = make_activation(SugarSpec::direct(ActivationKind::nelu(0.01))).unwrap();
        let xs: Vec<f64> = (0..50).map(|i| (i as f64 - 25.0) * 0.37).collect();
        let x = Tensor::from_vec(xs.clone());
        let a = nelu.apply(&x).unwrap();
        let b = relu.apply(&x).unwrap();
        for (p, q) in a.values().iter().zip(b.values()) {
            assert_eq!(p.to_bits(), q.to_bits());
        }

        let elu = ActivationKind::elu();
        let (_, g_sugar) = grad_of(&xs, |x| make_activation(SugarSpec::indirect(elu))?.apply(x));
        let (_, g_plain) = grad_of(&xs, |x| make_activation(elu)?.apply(x));
        assert_eq!(g_sugar, g_plain);
    }

    #[test]
    fn method_strings() {
        for s in [
            "relu",
            "bsilu:1.67",
            "sugar:bsilu:1.67",
            "sugar:nelu:0.05",
            "sugar-indirect:elu:1",
            "sugar:gelu",
        ] {
            let m: Method = s.parse().unwrap();
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert_eq!(
            "sugar-direct:bsilu".parse::<Method>().unwrap(),
            Method::Sugar(SugarSpec::direct(BSILU))
        );
        assert!("sugar-indirect:nelu".parse::<Method>().is_err());
        assert!("nelu".parse::<Method>().is_err());
        assert!("sugar-sideways:elu".parse::<Method>().is_err());
        assert_eq!(
            "sugar:bsilu".parse::<Method>().unwrap().slug(),
            "sugar_bsilu_1.67"
        );
    }
}
