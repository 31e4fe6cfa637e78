//! Retention probability `α(t)` on a discrete grid `t_k = k / T` and its
//! rate `β(t) = −d/dt log α(t)`.

use crate::error::{Error, Result};

/// Bounds applied to `α` before any log or ratio.
pub const ALPHA_FLOOR: f64 = 1e-6;
pub const ALPHA_CEIL: f64 = 1.0 - 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleKind {
    /// `∫β = β_min^{1−t} β_max^t`
    Geometric { beta_min: f64, beta_max: f64 },
    /// `α(t) = 1 − (1 − beta_scale) t`
    Linear { beta_scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    kind: ScheduleKind,
    steps: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Geometric {
                beta_min: 1e-3,
                beta_max: 10.0,
            },
            steps: 20,
        }
    }
}

impl Schedule {
    pub fn geometric(beta_min: f64, beta_max: f64, steps: usize) -> Result<Self> {
        if !(beta_min > 0.0 && beta_max > beta_min && beta_max.is_finite()) {
            return Err(Error::ConfigError(format!(
                "geometric schedule needs 0 < beta_min < beta_max, got {beta_min}, {beta_max}"
            )));
        }
        Self::with_kind(ScheduleKind::Geometric { beta_min, beta_max }, steps)
    }

    pub fn linear(beta_scale: f64, steps: usize) -> Result<Self> {
        if !(beta_scale > 0.0 && beta_scale < 1.0) {
            return Err(Error::ConfigError(format!(
                "linear schedule needs beta_scale in (0, 1), got {beta_scale}"
            )));
        }
        Self::with_kind(ScheduleKind::Linear { beta_scale }, steps)
    }

    fn with_kind(kind: ScheduleKind, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::ConfigError(
                "schedule needs at least one step".into(),
            ));
        }
        Ok(Self { kind, steps })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Grid time of step `k`.
    pub fn time(&self, k: usize) -> f64 {
        k as f64 / self.steps as f64
    }

    /// Retention probability, clamped to `[ALPHA_FLOOR, ALPHA_CEIL]`.
    pub fn alpha(&self, t: f64) -> Result<f64> {
        Ok(self.alpha_raw(t)?.clamp(ALPHA_FLOOR, ALPHA_CEIL))
    }

    /// `α` at grid step `k`.
    pub fn alpha_at(&self, k: usize) -> f64 {
        self.alpha(self.time(k.min(self.steps)))
            .expect("grid times lie in [0, 1]")
    }

    /// Unclamped `exp(−∫₀ᵗ β)`.
    pub fn alpha_raw(&self, t: f64) -> Result<f64> {
        check_domain(t)?;
        Ok(match self.kind {
            ScheduleKind::Geometric { beta_min, beta_max } => {
                (-(beta_min.powf(1.0 - t) * beta_max.powf(t))).exp()
            }
            ScheduleKind::Linear { beta_scale } => 1.0 - (1.0 - beta_scale) * t,
        })
    }

    pub fn beta(&self, t: f64) -> Result<f64> {
        check_domain(t)?;
        Ok(match self.kind {
            ScheduleKind::Geometric { beta_min, beta_max } => {
                beta_min.powf(1.0 - t) * beta_max.powf(t) * (beta_max / beta_min).ln()
            }
            ScheduleKind::Linear { beta_scale } => {
                (1.0 - beta_scale) / (1.0 - (1.0 - beta_scale) * t)
            }
        })
    }

    pub fn beta_at(&self, k: usize) -> f64 {
        self.beta(self.time(k.min(self.steps)))
            .expect("grid times lie in [0, 1]")
    }
}

fn check_domain(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::DomainError(format!("t = {t} outside [0, 1]")))
    }
}
