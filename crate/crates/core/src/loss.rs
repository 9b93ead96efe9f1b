use serde::{Deserialize, Serialize};

/// Convex loss `ℓ(prediction, label)` with a declared Lipschitz constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Loss {
    /// `|p − y|`, 1-Lipschitz.
    Absolute,
    /// `½(p − y)²`. Only Lipschitz on bounded residuals, so the constant used
    /// by penalties and bounds is declared by the caller.
    Squared { lipschitz: f64 },
}

impl Default for Loss {
    fn default() -> Self {
        Loss::Absolute
    }
}

impl Loss {
    pub fn name(&self) -> &'static str {
        match self {
            Loss::Absolute => "absolute",
            Loss::Squared { .. } => "squared",
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match *self {
            Loss::Absolute => 1.0,
            Loss::Squared { lipschitz } => lipschitz,
        }
    }

    pub fn value(&self, p: f64, y: f64) -> f64 {
        match self {
            Loss::Absolute => (p - y).abs(),
            Loss::Squared { .. } => 0.5 * (p - y) * (p - y),
        }
    }

    /// A subgradient in the prediction; the absolute loss uses `sign(0) = 0`.
    pub fn subgradient(&self, p: f64, y: f64) -> f64 {
        match self {
            Loss::Absolute => sign(p - y),
            Loss::Squared { .. } => p - y,
        }
    }

    /// Fenchel conjugate of `ℓ(·, y)` at `a` (`+∞` outside the domain).
    pub fn conjugate(&self, a: f64, y: f64) -> f64 {
        match self {
            Loss::Absolute => {
                if a.abs() <= 1.0 {
                    a * y
                } else {
                    f64::INFINITY
                }
            }
            Loss::Squared { .. } => 0.5 * a * a + a * y,
        }
    }

    /// Maximizer over `a` of `−ℓ*(a) − q a²/2 − r a`.
    pub(crate) fn dual_coordinate(&self, q: f64, r: f64, y: f64) -> f64 {
        match self {
            Loss::Absolute => {
                if q > 0.0 {
                    (-(y + r) / q).clamp(-1.0, 1.0)
                } else {
                    -sign(y + r)
                }
            }
            Loss::Squared { .. } => -(y + r) / (1.0 + q),
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
