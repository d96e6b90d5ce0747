use super::rk::{step_dopri_fsal, step_rk4};
use super::{Method, SolverConfig};
use crate::{Error, Result};

/// A localized event: the right end of the final bracket, so the event has
/// already happened at `t_star`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLocation {
    pub t_star: f64,
    pub x_star: Vec<f64>,
    pub iterations: usize,
    /// `false` when `max_root_iters` ran out before the bracket shrank below
    /// `event_tol`; the best bracket is still returned.
    pub converged: bool,
}

pub(crate) fn single_step<F>(
    method: Method,
    flow: &F,
    t: f64,
    x: &[f64],
    h: f64,
) -> Result<Vec<f64>>
where
    F: Fn(f64, &[f64], &mut [f64]) + ?Sized,
{
    match method {
        Method::Rk4 => step_rk4(flow, t, x, h),
        Method::DormandPrince => Ok(step_dopri_fsal(flow, t, x, h, None)?.x_next),
    }
}

/// Bisection over the step length from `(t, x)`. `fired(t, x)` must be false
/// at `h = 0` and true at `h = h_hi`; every probe re-integrates a single step
/// from the bracket's left anchor.
#[allow(clippy::too_many_arguments)]
pub(crate) fn bisect<F, P>(
    method: Method,
    flow: &F,
    fired: &P,
    t: f64,
    x: &[f64],
    h_hi: f64,
    x_hi: Vec<f64>,
    event_tol: f64,
    max_iters: usize,
) -> Result<EventLocation>
where
    F: Fn(f64, &[f64], &mut [f64]) + ?Sized,
    P: Fn(f64, &[f64]) -> bool + ?Sized,
{
    let mut lo = 0.0;
    let mut hi = h_hi;
    let mut x_best = x_hi;
    let mut iterations = 0;
    while hi - lo >= event_tol {
        if iterations == max_iters {
            return Ok(EventLocation {
                t_star: t + hi,
                x_star: x_best,
                iterations,
                converged: false,
            });
        }
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let x_mid = single_step(method, flow, t, x, mid)?;
        if fired(t + mid, &x_mid) {
            hi = mid;
            x_best = x_mid;
        } else {
            lo = mid;
        }
    }
    Ok(EventLocation {
        t_star: t + hi,
        x_star: x_best,
        iterations,
        converged: true,
    })
}

/// Localizes the time at which `condition` changes sign between the two
/// bracket points, to within `config.event_tol`.
pub fn locate_event<F, G>(
    flow: &F,
    condition: &G,
    t_lo: f64,
    x_lo: &[f64],
    t_hi: f64,
    x_hi: &[f64],
    config: &SolverConfig,
) -> Result<EventLocation>
where
    F: Fn(f64, &[f64], &mut [f64]) + ?Sized,
    G: Fn(f64, &[f64]) -> f64 + ?Sized,
{
    let state_lo = condition(t_lo, x_lo) >= 0.0;
    let state_hi = condition(t_hi, x_hi) >= 0.0;
    if state_lo == state_hi || !(t_hi > t_lo) {
        return Err(Error::NoSignChange { t_lo, t_hi });
    }
    let fired = |t: f64, x: &[f64]| (condition(t, x) >= 0.0) == state_hi;
    bisect(
        config.method,
        flow,
        &fired,
        t_lo,
        x_lo,
        t_hi - t_lo,
        x_hi.to_vec(),
        config.event_tol,
        config.max_root_iters,
    )
}
