//! One-dimensional linear system with a single timed jump:
//! `ẋ = a x` before `tau`, `x⁺ = c x` at `tau`, `ẋ = b x` afterwards.
//!
//! Its closed-form solution makes the gradient pathologies of joint
//! event/flow learning explicit: a wrong event-time estimate assigns samples
//! to the wrong mode, which silences or fabricates the gradient with respect
//! to `b`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::hybrid::{EventSpec, FlowFn, HybridSystemDef, ModeId};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub tau: f64,
}

impl Default for ToyParams {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: -1.0,
            c: 0.5,
            tau: 0.5,
        }
    }
}

impl ToyParams {
    pub fn validate(&self) -> Result<()> {
        if self.tau > 0.0
            && self.tau < 1.0
            && self.a.is_finite()
            && self.b.is_finite()
            && self.c.is_finite()
        {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "toy parameters need tau in (0, 1): {self:?}"
            )))
        }
    }

    pub fn mode_at(&self, t: f64) -> ModeId {
        if t < self.tau {
            ModeId(0)
        } else {
            ModeId(1)
        }
    }
}

/// Closed-form state at time `t`.
pub fn toy_solution(params: &ToyParams, x0: f64, t: f64) -> f64 {
    let ToyParams { a, b, c, tau } = *params;
    if t < tau {
        (a * t).exp() * x0
    } else {
        c * (a * tau + b * (t - tau)).exp() * x0
    }
}

/// Partial derivatives of [`toy_solution`] with respect to `(a, b, c, tau)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ToyGradients {
    pub da: f64,
    pub db: f64,
    pub dc: f64,
    pub dtau: f64,
}

pub fn toy_gradients(params: &ToyParams, x0: f64, t: f64) -> Result<ToyGradients> {
    let ToyParams { a, b, c, tau } = *params;
    if t == tau {
        return Err(Error::AtEventTime(t));
    }
    if t < tau {
        return Ok(ToyGradients {
            da: t * (a * t).exp() * x0,
            db: 0.0,
            dc: 0.0,
            dtau: 0.0,
        });
    }
    let e = (a * tau + b * (t - tau)).exp() * x0;
    Ok(ToyGradients {
        da: tau * c * e,
        db: (t - tau) * c * e,
        dc: e,
        dtau: (a - b) * c * e,
    })
}

/// The toy as a two-mode hybrid system; the timed jump is the deterministic
/// condition `t - tau`.
pub fn make_toy(params: ToyParams) -> Result<HybridSystemDef> {
    params.validate()?;
    let ToyParams { a, b, c, tau } = params;
    let first: FlowFn = Arc::new(move |_t, x: &[f64], dx: &mut [f64]| dx[0] = a * x[0]);
    let second: FlowFn = Arc::new(move |_t, x: &[f64], dx: &mut [f64]| dx[0] = b * x[0]);
    Ok(HybridSystemDef {
        name: "toy".into(),
        n_modes: 2,
        state_dim: 1,
        flows: vec![first, second],
        events: vec![EventSpec::deterministic(
            0,
            1,
            move |t, _x| t - tau,
            move |_t, x| vec![c * x[0]],
        )],
        initial_mode: ModeId(0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientFlag {
    /// The estimate keeps the sample in the first mode although it belongs
    /// to the second: `dx/db` is zero but should not be.
    WronglyZero,
    /// The estimate moves the sample into the second mode too early:
    /// `dx/db` is non-zero although `b` cannot affect it.
    WronglyNonzero,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathologySample {
    pub t: f64,
    pub true_mode: ModeId,
    pub estimated_mode: ModeId,
    pub db_true: f64,
    pub db_estimated: f64,
    pub flag: Option<GradientFlag>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathologyReport {
    pub tau: f64,
    pub tau_estimate: f64,
    pub wrongly_zero: usize,
    pub wrongly_nonzero: usize,
    pub samples: Vec<PathologySample>,
}

/// Classifies each sample time under the true and the estimated event time
/// and flags the ones whose gradient with respect to `b` is corrupted.
pub fn pathology_report(
    params: &ToyParams,
    x0: f64,
    tau_estimate: f64,
    sample_times: &[f64],
) -> Result<PathologyReport> {
    let estimate = ToyParams {
        tau: tau_estimate,
        ..*params
    };
    let mut samples = Vec::with_capacity(sample_times.len());
    for &t in sample_times {
        let true_mode = params.mode_at(t);
        let estimated_mode = estimate.mode_at(t);
        let db_true = toy_gradients(params, x0, t)?.db;
        let db_estimated = toy_gradients(&estimate, x0, t)?.db;
        let flag = match (true_mode.0, estimated_mode.0) {
            (1, 0) => Some(GradientFlag::WronglyZero),
            (0, 1) => Some(GradientFlag::WronglyNonzero),
            _ => None,
        };
        samples.push(PathologySample {
            t,
            true_mode,
            estimated_mode,
            db_true,
            db_estimated,
            flag,
        });
    }
    let count = |f: GradientFlag| samples.iter().filter(|s| s.flag == Some(f)).count();
    Ok(PathologyReport {
        tau: params.tau,
        tau_estimate,
        wrongly_zero: count(GradientFlag::WronglyZero),
        wrongly_nonzero: count(GradientFlag::WronglyNonzero),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_values() {
        let p = ToyParams::default();
        assert!((toy_solution(&p, 1.0, 1.0) - 0.5).abs() < 1e-15);
        assert_eq!(toy_solution(&p, 3.0, 0.0), 3.0);
        let same = ToyParams {
            a: 0.7,
            b: 0.7,
            c: 1.0,
            tau: 0.3,
        };
        for t in [0.1, 0.5, 0.9] {
            assert!((toy_solution(&same, 2.0, t) - (0.7 * t).exp() * 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_cases() {
        let p = ToyParams::default();
        let g = toy_gradients(&p, 1.0, 1.0).unwrap();
        assert!((g.dtau - 1.0).abs() < 1e-15);
        let early = toy_gradients(&p, 1.0, 0.2).unwrap();
        assert_eq!((early.db, early.dc, early.dtau), (0.0, 0.0, 0.0));
        assert!(matches!(
            toy_gradients(&p, 1.0, 0.5),
            Err(Error::AtEventTime(_))
        ));
    }

    #[test]
    fn pathology_scenarios() {
        let p = ToyParams::default();
        let exact = pathology_report(&p, 1.0, 0.5, &[0.1, 0.3, 0.7, 0.9]).unwrap();
        assert_eq!(exact.wrongly_zero + exact.wrongly_nonzero, 0);

        let over = pathology_report(&p, 1.0, 0.7, &[0.6]).unwrap();
        assert_eq!(over.samples[0].flag, Some(GradientFlag::WronglyZero));
        assert_eq!(over.samples[0].db_estimated, 0.0);
        assert!(over.samples[0].db_true != 0.0);

        let under = pathology_report(&p, 1.0, 0.3, &[0.4]).unwrap();
        assert_eq!(under.samples[0].flag, Some(GradientFlag::WronglyNonzero));
        assert!(under.samples[0].db_estimated != 0.0);
        assert_eq!(under.samples[0].db_true, 0.0);
    }
}
