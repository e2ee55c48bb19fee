//! Curriculum compression-factor schedules.
//!
//! A schedule maps an epoch `e` to a factor `rho(e)` in `(0, 1]` that scales
//! every resolution of the reference pool. Training starts at `rho0` and the
//! factor reaches exactly 1 once `e >= tau * E`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Cosine,
    Polynomial,
    Multistep,
}

impl ScheduleKind {
    pub const ALL: [ScheduleKind; 4] = [
        ScheduleKind::Linear,
        ScheduleKind::Cosine,
        ScheduleKind::Polynomial,
        ScheduleKind::Multistep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::Linear => "linear",
            ScheduleKind::Cosine => "cosine",
            ScheduleKind::Polynomial => "polynomial",
            ScheduleKind::Multistep => "multistep",
        }
    }
}

pub const DEFAULT_RHO0: f64 = 0.75;
pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_POLY_POWER: f64 = 2.0;

/// One breakpoint of a multi-step schedule: from `epoch_fraction * E` onwards
/// the factor is `rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub epoch_fraction: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    pub kind: ScheduleKind,
    pub rho0: f64,
    pub tau: f64,
    pub total_epochs: u32,
    pub poly_power: f64,
    pub steps: Vec<Step>,
}

/// Default multi-step table: `rho0` at the start, halfway to 1 at `tau / 2`,
/// and 1 from `tau` on. For `(0.75, 0.5)` this is `{(0, 0.75), (0.25, 0.875), (0.5, 1)}`.
pub fn default_steps(rho0: f64, tau: f64) -> Vec<Step> {
    vec![
        Step {
            epoch_fraction: 0.0,
            rho: rho0,
        },
        Step {
            epoch_fraction: tau / 2.0,
            rho: (rho0 + 1.0) / 2.0,
        },
        Step {
            epoch_fraction: tau,
            rho: 1.0,
        },
    ]
}

impl CurriculumSchedule {
    /// Builds and validates a schedule. Multi-step schedules get the default
    /// table derived from `rho0`/`tau`; use [`CurriculumSchedule::multistep`]
    /// for a custom one.
    pub fn new(kind: ScheduleKind, rho0: f64, tau: f64, total_epochs: u32) -> Result<Self> {
        let steps = if kind == ScheduleKind::Multistep {
            default_steps(rho0, tau)
        } else {
            Vec::new()
        };
        let sched = CurriculumSchedule {
            kind,
            rho0,
            tau,
            total_epochs,
            poly_power: DEFAULT_POLY_POWER,
            steps,
        };
        sched.validate()?;
        Ok(sched)
    }

    pub fn cosine(rho0: f64, tau: f64, total_epochs: u32) -> Result<Self> {
        Self::new(ScheduleKind::Cosine, rho0, tau, total_epochs)
    }

    pub fn polynomial(rho0: f64, tau: f64, total_epochs: u32, power: f64) -> Result<Self> {
        let sched = CurriculumSchedule {
            kind: ScheduleKind::Polynomial,
            rho0,
            tau,
            total_epochs,
            poly_power: power,
            steps: Vec::new(),
        };
        sched.validate()?;
        Ok(sched)
    }

    pub fn multistep(rho0: f64, tau: f64, total_epochs: u32, steps: Vec<Step>) -> Result<Self> {
        let sched = CurriculumSchedule {
            kind: ScheduleKind::Multistep,
            rho0,
            tau,
            total_epochs,
            poly_power: DEFAULT_POLY_POWER,
            steps,
        };
        sched.validate()?;
        Ok(sched)
    }

    /// Checks every parameter; errors name the offending field relative to
    /// the schedule (`curriculum.<field>`).
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| v > 0.0 && v <= 1.0;
        if !in_unit(self.rho0) {
            return Err(Error::config(
                "curriculum.rho0",
                format!("must lie in (0, 1], got {}", self.rho0),
            ));
        }
        if !in_unit(self.tau) {
            return Err(Error::config(
                "curriculum.tau",
                format!("must lie in (0, 1], got {}", self.tau),
            ));
        }
        if self.total_epochs == 0 {
            return Err(Error::config("curriculum.total_epochs", "must be at least 1"));
        }
        if self.kind == ScheduleKind::Polynomial && !(self.poly_power > 0.0 && self.poly_power.is_finite()) {
            return Err(Error::config(
                "curriculum.poly_power",
                format!("must be a positive real, got {}", self.poly_power),
            ));
        }
        if self.kind == ScheduleKind::Multistep {
            self.validate_steps()?;
        }
        Ok(())
    }

    fn validate_steps(&self) -> Result<()> {
        let steps = &self.steps;
        let first = steps
            .first()
            .ok_or_else(|| Error::config("curriculum.steps", "multistep table is empty"))?;
        if first.epoch_fraction != 0.0 || first.rho != self.rho0 {
            return Err(Error::config(
                "curriculum.steps[0]",
                format!(
                    "first step must be (0, rho0 = {}), got ({}, {})",
                    self.rho0, first.epoch_fraction, first.rho
                ),
            ));
        }
        for (i, pair) in steps.windows(2).enumerate() {
            let (a, b) = (pair[0], pair[1]);
            if b.epoch_fraction <= a.epoch_fraction {
                return Err(Error::config(
                    format!("curriculum.steps[{}].epoch_fraction", i + 1),
                    "epoch fractions must be strictly increasing",
                ));
            }
            if b.rho < a.rho {
                return Err(Error::config(
                    format!("curriculum.steps[{}].rho", i + 1),
                    "step values must be non-decreasing",
                ));
            }
        }
        for (i, s) in steps.iter().enumerate() {
            if !(s.rho > 0.0 && s.rho <= 1.0) {
                return Err(Error::config(
                    format!("curriculum.steps[{i}].rho"),
                    format!("must lie in (0, 1], got {}", s.rho),
                ));
            }
        }
        let last = steps[steps.len() - 1];
        if last.rho != 1.0 || last.epoch_fraction > self.tau {
            return Err(Error::config(
                format!("curriculum.steps[{}]", steps.len() - 1),
                format!(
                    "table must reach 1.0 at or before tau = {}, ends at ({}, {})",
                    self.tau, last.epoch_fraction, last.rho
                ),
            ));
        }
        Ok(())
    }

    /// `tau * E`, the epoch (possibly fractional) at which the full pool is reached.
    pub fn expansion_epochs(&self) -> f64 {
        self.tau * f64::from(self.total_epochs)
    }

    /// `rho(epoch)` for the configured kind.
    pub fn value(&self, epoch: u32) -> Result<f64> {
        if epoch >= self.total_epochs {
            return Err(Error::config(
                "epoch",
                format!("epoch {epoch} out of range for {} total epochs", self.total_epochs),
            ));
        }
        Ok(self.value_unchecked(epoch))
    }

    pub(crate) fn value_unchecked(&self, epoch: u32) -> f64 {
        let e = f64::from(epoch);
        let span = self.expansion_epochs();
        if self.kind == ScheduleKind::Multistep {
            return self
                .steps
                .iter()
                .rev()
                .find(|s| e >= s.epoch_fraction * f64::from(self.total_epochs))
                .map_or(self.rho0, |s| s.rho);
        }
        if e >= span {
            return 1.0;
        }
        let progress = e / span;
        let shape = match self.kind {
            ScheduleKind::Linear => progress,
            ScheduleKind::Cosine => (1.0 - (PI * progress).cos()) / 2.0,
            ScheduleKind::Polynomial => progress.powf(self.poly_power),
            ScheduleKind::Multistep => unreachable!(),
        };
        (self.rho0 + (1.0 - self.rho0) * shape).min(1.0)
    }

    /// All values `rho(0) .. rho(E-1)`.
    pub fn values(&self) -> Vec<f64> {
        (0..self.total_epochs).map(|e| self.value_unchecked(e)).collect()
    }
}

/// Free-function form of [`CurriculumSchedule::value`].
pub fn schedule_value(sched: &CurriculumSchedule, epoch: u32) -> Result<f64> {
    sched.value(epoch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::ErrorCode;

    #[test]
    fn cosine_reference_points() {
        let s = CurriculumSchedule::cosine(0.75, 0.5, 600).unwrap();
        assert_eq!(s.value(0).unwrap(), 0.75);
        assert_eq!(s.value(150).unwrap(), 0.875);
        assert_eq!(s.value(300).unwrap(), 1.0);
        assert_eq!(s.value(599).unwrap(), 1.0);
    }

    #[test]
    fn epoch_out_of_range() {
        let s = CurriculumSchedule::cosine(0.75, 0.5, 600).unwrap();
        assert!(s.value(600).is_err());
    }

    #[test]
    fn rejects_bad_parameters() {
        let err = CurriculumSchedule::cosine(1.5, 0.5, 10).unwrap_err();
        assert_eq!(err.code(), ErrorCode::Config);
        assert!(err.to_string().contains("curriculum.rho0"));
        let err = CurriculumSchedule::cosine(0.5, 0.0, 10).unwrap_err();
        assert!(err.to_string().contains("curriculum.tau"));
        let err = CurriculumSchedule::multistep(0.75, 0.5, 10, vec![]).unwrap_err();
        assert!(err.to_string().contains("curriculum.steps"));
        let err = CurriculumSchedule::polynomial(0.75, 0.5, 10, 0.0).unwrap_err();
        assert!(err.to_string().contains("poly_power"));
    }

    #[test]
    fn multistep_default_table() {
        let s = CurriculumSchedule::new(ScheduleKind::Multistep, 0.75, 0.5, 600).unwrap();
        assert_eq!(
            s.steps,
            vec![
                Step { epoch_fraction: 0.0, rho: 0.75 },
                Step { epoch_fraction: 0.25, rho: 0.875 },
                Step { epoch_fraction: 0.5, rho: 1.0 },
            ]
        );
        assert_eq!(s.value(149).unwrap(), 0.75);
        assert_eq!(s.value(150).unwrap(), 0.875);
        assert_eq!(s.value(299).unwrap(), 0.875);
        assert_eq!(s.value(300).unwrap(), 1.0);
    }

    #[test]
    fn multistep_must_end_at_one_before_tau() {
        let steps = vec![
            Step { epoch_fraction: 0.0, rho: 0.5 },
            Step { epoch_fraction: 0.7, rho: 1.0 },
        ];
        assert!(CurriculumSchedule::multistep(0.5, 0.5, 100, steps).is_err());
        let steps = vec![
            Step { epoch_fraction: 0.0, rho: 0.5 },
            Step { epoch_fraction: 0.2, rho: 0.9 },
        ];
        assert!(CurriculumSchedule::multistep(0.5, 0.5, 100, steps).is_err());
    }

    #[test]
    fn linear_has_zero_second_difference() {
        let s = CurriculumSchedule::new(ScheduleKind::Linear, 0.3, 0.8, 97).unwrap();
        let v = s.values();
        let limit = (0.8f64 * 97.0) as usize;
        for e in 1..limit - 1 {
            let d2 = v[e + 1] - 2.0 * v[e] + v[e - 1];
            assert!(d2.abs() < 1e-12, "epoch {e}: {d2}");
        }
    }

    #[test]
    fn polynomial_power_two_at_half() {
        let s = CurriculumSchedule::polynomial(0.5, 1.0, 10, 2.0).unwrap();
        assert!((s.value(5).unwrap() - (0.5 + 0.5 * 0.25)).abs() < 1e-15);
    }

    #[test]
    fn tau_one_rho_one_is_constant() {
        for kind in ScheduleKind::ALL {
            let s = CurriculumSchedule::new(kind, 1.0, 1.0, 7).unwrap();
            assert!(s.values().iter().all(|&v| v == 1.0), "{kind:?}");
        }
    }
}
