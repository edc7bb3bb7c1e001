//! Central-difference gradient verification.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::activation::{relu, ActivationKind};
use crate::error::Result;
use crate::sugar::{sugar_direct, sugar_indirect};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// `max_i |analytic − numeric| / max(1, |numeric|)`.
    pub max_rel_error: f64,
}

/// Compares the tape gradient of scalar `f` at `x` against central
/// differences with step `eps`. A result that is not on the tape (for
/// example one built entirely from `stop_gradient`) has zero analytic
/// gradient.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    assert!(eps > 0.0, "grad_check step must be positive");
    let tape = Tape::new();
    let leaf = tape.param(x.values().to_vec(), x.shape())?;
    let out = f(&leaf)?;
    let analytic = if out.is_tracked() {
        out.backward()?;
        leaf.grad().unwrap_or_else(|| vec![0.0; x.len()])
    } else {
        vec![0.0; x.len()]
    };

    let eval = |values: Vec<f64>| -> Result<f64> {
        let t = Tensor::new(values, x.shape())?;
        let y = f(&t)?;
        y.item().ok_or(crate::Error::NotScalar {
            shape: y.shape().to_vec(),
        })
    };
    let mut numeric = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut plus = x.values().to_vec();
        let mut minus = plus.clone();
        plus[i] += eps;
        minus[i] -= eps;
        numeric.push((eval(plus)? - eval(minus)?) / (2.0 * eps));
    }
    let max_rel_error = relative_error(&analytic, &numeric);
    Ok(GradCheckReport {
        analytic,
        numeric,
        max_rel_error,
    })
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / n.abs().max(1.0))
        .fold(0.0, f64::max)
}

type CheckFn = Box<dyn Fn() -> Result<f64>>;

/// One named entry of a [`Suite`]: produces an error figure to compare
/// against `tolerance`.
pub struct Check {
    pub name: String,
    pub tolerance: f64,
    pub expect: Expect,
    run: CheckFn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expect {
    /// Error must be below the tolerance.
    Agree,
    /// Error must be within the tolerance of 1: stop-gradient is meant to
    /// disagree with finite differences.
    Disagree,
}

impl Check {
    pub fn new(
        name: impl Into<String>,
        tolerance: f64,
        run: impl Fn() -> Result<f64> + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            tolerance,
            expect: Expect::Agree,
            run: Box::new(run),
        }
    }

    pub fn disagreeing(mut self) -> Self {
        self.expect = Expect::Disagree;
        self
    }

    pub fn run(&self) -> CheckOutcome {
        let error = (self.run)();
        let (error, passed) = match error {
            Ok(e) => {
                let ok = match self.expect {
                    Expect::Agree => e < self.tolerance,
                    Expect::Disagree => (e - 1.0).abs() < self.tolerance,
                };
                (e, ok)
            }
            Err(_) => (f64::NAN, false),
        };
        CheckOutcome {
            name: self.name.clone(),
            error,
            tolerance: self.tolerance,
            expect: self.expect,
            passed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub error: f64,
    pub tolerance: f64,
    pub expect: Expect,
    pub passed: bool,
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = if self.passed { "ok  " } else { "FAIL" };
        let note = match self.expect {
            Expect::Agree => format!("< {:.0e}", self.tolerance),
            Expect::Disagree => "≈ 1 (intentional: stop-gradient)".to_string(),
        };
        write!(
            f,
            "{status} {:<34} max rel err {:.3e}  {note}",
            self.name, self.error
        )
    }
}

#[derive(Default)]
pub struct Suite {
    pub checks: Vec<Check>,
}

impl Suite {
    pub fn push(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn run(&self) -> Vec<CheckOutcome> {
        self.checks.iter().map(Check::run).collect()
    }

    /// Primitives, activation derivatives and the injection identities.
    pub fn standard(seed: u64) -> Self {
        let mut suite = Suite::default();
        let eps = 1e-4;
        let tol = 1e-6;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |n: usize, lo: f64, hi: f64| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(lo..hi)).collect()
        };
        let x100 = uniform(100, -3.0, 3.0);
        let weights = Tensor::from_vec(uniform(100, -1.0, 1.0));
        let shift = Tensor::from_vec(uniform(100, -1.0, 1.0));
        let mat = Tensor::new(uniform(100, -1.0, 1.0), &[10, 10]).expect("10x10");
        let rows = Tensor::new(uniform(300, -1.0, 1.0), &[3, 100]).expect("3x100");

        let primitive = |name: &str, x: Vec<f64>, shape: Vec<usize>, f: PrimFn| {
            Check::new(format!("primitive {name}"), tol, move || {
                let t = Tensor::new(x.clone(), &shape)?;
                Ok(grad_check(&f, &t, eps)?.max_rel_error)
            })
        };
        let v = || x100.clone();
        let n = vec![100];

        let (c, w) = (shift.clone(), weights.clone());
        suite.push(primitive(
            "add",
            v(),
            n.clone(),
            Box::new(move |x| x.add(&c)?.square().mul(&w)?.sum()),
        ));
        let (c, w) = (shift.clone(), weights.clone());
        suite.push(primitive(
            "sub",
            v(),
            n.clone(),
            Box::new(move |x| {
                let a = x.sub(&c)?;
                let b = c.sub(x)?;
                a.mul(&b)?.mul(&w)?.sum()
            }),
        ));
        let w = weights.clone();
        suite.push(primitive(
            "mul",
            v(),
            n.clone(),
            Box::new(move |x| x.mul(x)?.mul(&w)?.sum()),
        ));
        let w = weights.clone();
        suite.push(primitive(
            "scalar_mul",
            v(),
            n.clone(),
            Box::new(move |x| x.mul_scalar(-1.3).mul(x)?.mul(&w)?.sum()),
        ));
        let r = rows.clone();
        suite.push(primitive(
            "add (bias broadcast)",
            v(),
            n.clone(),
            Box::new(move |x| r.add(x)?.square().sum()),
        ));
        let m = mat.clone();
        suite.push(primitive(
            "matmul (left operand)",
            v(),
            vec![10, 10],
            Box::new(move |x| x.matmul(&m)?.square().sum()),
        ));
        let m = mat.clone();
        suite.push(primitive(
            "matmul (right operand)",
            v(),
            vec![10, 10],
            Box::new(move |x| m.matmul(x)?.square().sum()),
        ));
        for (name, op) in [
            ("exp", Tensor::exp as fn(&Tensor) -> Tensor),
            ("tanh", Tensor::tanh),
            ("sigmoid", Tensor::sigmoid),
            ("softplus", Tensor::softplus),
            ("erf", Tensor::erf),
        ] {
            let w = weights.clone();
            suite.push(primitive(
                name,
                v(),
                n.clone(),
                Box::new(move |x| op(x).mul(&w)?.sum()),
            ));
        }
        suite.push(primitive(
            "sum",
            v(),
            n.clone(),
            Box::new(|x| {
                let s = x.sum()?;
                s.mul(&s)
            }),
        ));
        suite.push(primitive(
            "mean",
            v(),
            n.clone(),
            Box::new(|x| x.mean()?.mul(&x.square().mean()?)),
        ));
        suite.push(
            Check::new("primitive stop_gradient", 1e-6, move || {
                let t = Tensor::from_vec(vec![1.0, -2.0, 0.5]);
                Ok(grad_check(|x| x.stop_gradient().sum(), &t, eps)?.max_rel_error)
            })
            .disagreeing(),
        );

        let xs = away_from_zero(uniform(400, -5.0, 5.0), 200);
        for kind in ActivationKind::catalogue() {
            if kind.has_forward() {
                let xs = xs.clone();
                suite.push(Check::new(format!("activation {kind}"), tol, move || {
                    let t = Tensor::from_vec(xs.clone());
                    Ok(grad_check(|x| kind.apply(x)?.sum(), &t, eps)?.max_rel_error)
                }));
            }
        }

        let xs = uniform(1000, -10.0, 10.0);
        for kind in ActivationKind::catalogue() {
            let samples = xs.clone();
            suite.push(Check::new(
                format!("sugar direct {kind}"),
                1e-12,
                move || {
                    injection_error(&samples, |x| sugar_direct(x, &kind), |v| kind.derivative(v))
                },
            ));
            if kind.has_forward() {
                let samples = xs.clone();
                suite.push(Check::new(
                    format!("sugar indirect {kind}"),
                    1e-12,
                    move || {
                        injection_error(
                            &samples,
                            |x| sugar_indirect(x, &kind),
                            |v| kind.derivative(v),
                        )
                    },
                ));
            }
        }
        suite
    }
}

type PrimFn = Box<dyn Fn(&Tensor) -> Result<Tensor>>;

fn away_from_zero(xs: Vec<f64>, keep: usize) -> Vec<f64> {
    xs.into_iter()
        .filter(|x| x.abs() > 1e-3)
        .take(keep)
        .collect()
}

/// Largest deviation of an injected activation from the ReLU forward
/// (infinite unless bit-exact) or from the expected derivative.
pub fn injection_error(
    samples: &[f64],
    op: impl Fn(&Tensor) -> Result<Tensor>,
    expected_derivative: impl Fn(f64) -> f64,
) -> Result<f64> {
    let tape = Tape::new();
    let x = tape.param(samples.to_vec(), &[samples.len()])?;
    let y = op(&x)?;
    for (s, v) in samples.iter().zip(y.values()) {
        if relu(*s).to_bits() != v.to_bits() {
            return Ok(f64::INFINITY);
        }
    }
    y.sum()?.backward()?;
    let grad = x.grad().unwrap_or_else(|| vec![0.0; samples.len()]);
    Ok(samples
        .iter()
        .zip(grad)
        .map(|(s, g)| (g - expected_derivative(*s)).abs())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_sum_is_exact_enough() {
        let x = Tensor::from_vec(vec![1.0, -2.0]);
        let r = grad_check(|x| x.mul(x)?.sum(), &x, 1e-4).unwrap();
        assert!(r.max_rel_error < 1e-8);
        assert_eq!(r.analytic, vec![2.0, -4.0]);
    }

    #[test]
    fn stop_gradient_reports_raw_difference() {
        let x = Tensor::from_vec(vec![0.3, 4.0]);
        let r = grad_check(|x| x.stop_gradient().sum(), &x, 1e-4).unwrap();
        assert_eq!(r.analytic, vec![0.0, 0.0]);
        assert!((r.max_rel_error - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sigmoid_sum() {
        let x = Tensor::from_vec(vec![0.3]);
        let r = grad_check(|x| x.sigmoid().sum(), &x, 1e-4).unwrap();
        assert!(r.max_rel_error < 1e-7);
    }

    #[test]
    fn matmul_gradient_against_difference() {
        let a = Tensor::new(vec![1.0, 1.0], &[1, 2]).unwrap();
        let b = Tensor::new(vec![2.0, 3.0], &[2, 1]).unwrap();
        let r = grad_check(|a| a.matmul(&b)?.sum(), &a, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-9);
        assert!((r.numeric[0] - 2.0).abs() < 1e-9 && (r.numeric[1] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn mse_gradient_against_difference() {
        let target = Tensor::from_vec(vec![0.5, -1.0, 2.0]);
        let x = Tensor::from_vec(vec![0.1, 0.2, -0.3]);
        let r = grad_check(|p| p.sub(&target)?.square().mean(), &x, 1e-4).unwrap();
        assert!(r.max_rel_error < 1e-6);
    }

    #[test]
    fn standard_suite_passes() {
        let outcomes = Suite::standard(7).run();
        for o in &outcomes {
            assert!(o.passed, "{o}");
        }
        assert!(outcomes.iter().any(|o| o.name == "primitive erf"));
    }

    #[test]
    fn corrupted_derivative_is_named() {
        let mut suite = Suite::default();
        suite.push(Check::new("corrupted tanh", 1e-6, || {
            let x = Tensor::from_vec(vec![0.1, 0.7, -1.2]);
            let bad = |t: &Tensor| t.unary(f64::tanh, |v| 1.0 - v.tanh()).sum();
            Ok(grad_check(bad, &x, 1e-4)?.max_rel_error)
        }));
        let outcomes = suite.run();
        assert!(!outcomes[0].passed);
        assert!(outcomes[0].to_string().contains("corrupted tanh"));
    }
}
