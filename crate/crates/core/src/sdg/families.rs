//! Named coefficient families for the SDE, configurable from JSON.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn one() -> f64 {
    1.0
}

/// Real function of a scalar state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScalarFn {
    Constant {
        value: f64,
    },
    /// `slope * x + intercept`
    Affine {
        slope: f64,
        #[serde(default)]
        intercept: f64,
    },
    /// `scale * |x - center|`
    Abs {
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        center: f64,
    },
    /// `scale * (x - center)^2`
    Square {
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        center: f64,
    },
    /// `scale * max(x - strike, 0)`
    Call {
        strike: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `scale * max(strike - x, 0)`
    Put {
        strike: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// Piecewise-linear interpolation through `(xs, ys)`, flat outside.
    Table {
        xs: Vec<f64>,
        ys: Vec<f64>,
    },
    Clamp {
        inner: Box<ScalarFn>,
        low: f64,
        high: f64,
    },
}

impl ScalarFn {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::Affine { slope, intercept } => slope * x + intercept,
            Self::Abs { scale, center } => scale * (x - center).abs(),
            Self::Square { scale, center } => scale * (x - center) * (x - center),
            Self::Call { strike, scale } => scale * (x - strike).max(0.0),
            Self::Put { strike, scale } => scale * (strike - x).max(0.0),
            Self::Table { xs, ys } => interpolate(xs, ys, x),
            Self::Clamp { inner, low, high } => inner.eval(x).clamp(*low, *high),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Table { xs, ys } => {
                if xs.is_empty() || xs.len() != ys.len() {
                    return Err(Error::Config("table needs matching, non-empty xs and ys".into()));
                }
                if xs.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::Config("table xs must be strictly increasing".into()));
                }
                Ok(())
            }
            Self::Clamp { inner, low, high } => {
                if low > high {
                    return Err(Error::Config(format!("clamp bounds {low} > {high}")));
                }
                inner.validate()
            }
            _ => Ok(()),
        }
    }
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    let last = xs.len() - 1;
    if x >= xs[last] {
        return ys[last];
    }
    let j = xs.partition_point(|&v| v <= x);
    let (x0, x1, y0, y1) = (xs[j - 1], xs[j], ys[j - 1], ys[j]);
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Volatility `sigma(t, x, a)` for one state component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SigmaModel {
    Constant {
        value: f64,
    },
    /// `sigma = a`: the classical control picks the volatility.
    Control,
    /// `clamp(base + control * a + state * x_t + path_mean * mean(x_0..x_t), min, max)`
    Affine {
        base: f64,
        #[serde(default)]
        control: f64,
        #[serde(default)]
        state: f64,
        #[serde(default)]
        path_mean: f64,
        min: f64,
        max: f64,
    },
}

impl SigmaModel {
    /// `current` is `x_t`, `mean` the average of the path up to `t`.
    pub fn eval(&self, current: f64, mean: f64, a: f64) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::Control => a,
            Self::Affine {
                base,
                control,
                state,
                path_mean,
                min,
                max,
            } => (base + control * a + state * current + path_mean * mean).clamp(*min, *max),
        }
    }

    /// Whether `eval` reads the path average.
    pub fn uses_path(&self) -> bool {
        matches!(self, Self::Affine { path_mean, .. } if *path_mean != 0.0)
    }

    /// `(sigma_min, sigma_max)` over every state and control in `controls`.
    pub fn bounds(&self, controls: &[f64]) -> (f64, f64) {
        match self {
            Self::Constant { value } => (*value, *value),
            Self::Control => controls
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &a| (lo.min(a), hi.max(a))),
            Self::Affine {
                base,
                control,
                state,
                path_mean,
                min,
                max,
            } => {
                if *state == 0.0 && *path_mean == 0.0 {
                    controls.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &a| {
                        let s = (base + control * a).clamp(*min, *max);
                        (lo.min(s), hi.max(s))
                    })
                } else {
                    (*min, *max)
                }
            }
        }
    }

    pub fn validate(&self, controls: &[f64]) -> Result<()> {
        if let Self::Affine { min, max, .. } = self {
            if !(*min > 0.0 && min <= max) {
                return Err(Error::Config(format!("sigma clamp needs 0 < min <= max, got [{min}, {max}]")));
            }
        }
        let (lo, hi) = self.bounds(controls);
        if !(lo > 0.0 && hi.is_finite()) {
            return Err(Error::Config(format!("sigma must stay in (0, inf), bounds [{lo}, {hi}]")));
        }
        Ok(())
    }
}

/// Jump `Gamma(t, x, b)` added to the state when impulse `b` is applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JumpModel {
    /// `Gamma = b`
    Shift,
    /// `Gamma = impulse * b + state * x_t`, componentwise.
    Affine {
        #[serde(default = "one")]
        impulse: f64,
        #[serde(default)]
        state: f64,
    },
}

impl JumpModel {
    pub fn size(&self, state: &[f64], b: &[f64]) -> Vec<f64> {
        match self {
            Self::Shift => b.to_vec(),
            Self::Affine { impulse, state: k } => {
                state.iter().zip(b).map(|(x, bi)| impulse * bi + k * x).collect()
            }
        }
    }
}

/// Intervention cost `l(t, x, b)`, read on the sum of the state components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CostModel {
    Constant {
        value: f64,
    },
    PerImpulse {
        values: Vec<f64>,
    },
    /// `min(base + abs_state * |x|, max)`
    Affine {
        base: f64,
        abs_state: f64,
        max: f64,
    },
}

impl CostModel {
    pub fn eval(&self, state: f64, impulse: usize) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::PerImpulse { values } => values[impulse],
            Self::Affine { base, abs_state, max } => (base + abs_state * state.abs()).min(*max),
        }
    }

    pub fn validate(&self, impulses: usize) -> Result<()> {
        if let Self::PerImpulse { values } = self {
            if values.len() != impulses {
                return Err(Error::Config(format!(
                    "per-impulse cost has {} values for {impulses} impulses",
                    values.len()
                )));
            }
        }
        Ok(())
    }
}
