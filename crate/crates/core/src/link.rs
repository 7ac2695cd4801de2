//! Link functions for the reward model.
//!
//! A link is the triple `(g, g', G)` where `G(a) = ∫₀ᵃ g(u) du`. The GLM loss
//! `-r·u + G(u)` presumes the canonical pairing, so `g` must be non-decreasing.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Tolerance used when checking a custom antiderivative against quadrature.
pub const ANTIDERIVATIVE_TOLERANCE: f64 = 1e-6;

#[derive(Clone)]
pub enum LinkFunction {
    Identity,
    Logit,
    Custom(CustomLink),
}

/// A user-supplied link. Construct through [`CustomLink::new`], which
/// validates the triple numerically.
#[derive(Clone)]
pub struct CustomLink {
    name: String,
    eval: ScalarFn,
    deriv: ScalarFn,
    antideriv: ScalarFn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkKind {
    Identity,
    Logit,
    Custom,
}

pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^u)` without overflow.
fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

impl LinkFunction {
    pub fn kind(&self) -> LinkKind {
        match self {
            LinkFunction::Identity => LinkKind::Identity,
            LinkFunction::Logit => LinkKind::Logit,
            LinkFunction::Custom(_) => LinkKind::Custom,
        }
    }

    pub fn eval(&self, u: f64) -> f64 {
        match self {
            LinkFunction::Identity => u,
            LinkFunction::Logit => sigmoid(u),
            LinkFunction::Custom(c) => (c.eval)(u),
        }
    }

    pub fn deriv(&self, u: f64) -> f64 {
        match self {
            LinkFunction::Identity => 1.0,
            LinkFunction::Logit => {
                let s = sigmoid(u);
                s * (1.0 - s)
            }
            LinkFunction::Custom(c) => (c.deriv)(u),
        }
    }

    pub fn antideriv(&self, u: f64) -> f64 {
        match self {
            LinkFunction::Identity => 0.5 * u * u,
            LinkFunction::Logit => softplus(u) - std::f64::consts::LN_2,
            LinkFunction::Custom(c) => (c.antideriv)(u),
        }
    }
}

impl fmt::Debug for LinkFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinkFunction::Identity => f.write_str("Identity"),
            LinkFunction::Logit => f.write_str("Logit"),
            LinkFunction::Custom(c) => write!(f, "Custom({})", c.name),
        }
    }
}

impl fmt::Debug for CustomLink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomLink").field("name", &self.name).finish()
    }
}

/// Grid of linear-predictor values the custom-link checks probe.
fn validation_grid() -> impl Iterator<Item = f64> {
    (-40..=40).map(|i| f64::from(i) * 0.125)
}

/// Composite Simpson rule on `[0, a]`.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, intervals: usize) -> f64 {
    if a == 0.0 {
        return 0.0;
    }
    let n = intervals + intervals % 2;
    let h = a / n as f64;
    let mut acc = f(0.0) + f(a);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(i as f64 * h);
    }
    acc * h / 3.0
}

impl CustomLink {
    /// Validates `G(0) = 0`, `g' ≥ 0`, and `G` against Simpson quadrature of
    /// `g` on a grid over `[-5, 5]`.
    pub fn new<G, D, A>(name: impl Into<String>, eval: G, deriv: D, antideriv: A) -> Result<Self>
    where
        G: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
        A: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let name = name.into();
        let g0 = antideriv(0.0);
        if g0 != 0.0 {
            return Err(Error::config(format!(
                "link {name}: antiderivative at zero is {g0}, expected exactly 0"
            )));
        }
        for u in validation_grid() {
            let d = deriv(u);
            if !d.is_finite() || d < 0.0 {
                return Err(Error::config(format!(
                    "link {name}: derivative {d} at u={u} is negative or non-finite"
                )));
            }
            let quad = simpson(&eval, u, 400);
            let claimed = antideriv(u);
            if (quad - claimed).abs() > ANTIDERIVATIVE_TOLERANCE {
                return Err(Error::config(format!(
                    "link {name}: antiderivative {claimed} at u={u} disagrees with quadrature {quad}"
                )));
            }
        }
        Ok(Self {
            name,
            eval: Arc::new(eval),
            deriv: Arc::new(deriv),
            antideriv: Arc::new(antideriv),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}
