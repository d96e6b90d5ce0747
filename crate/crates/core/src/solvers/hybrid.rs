//! Event-driven integration of hybrid systems.
//!
//! The loop takes a tentative step, and if it passes error control, checks
//! the condition of every edge leaving the current mode. Edges whose state
//! moved from "off" to "on" during the step are localized by bisection; the
//! earliest one fires (smaller edge index on ties). The pre-jump and post-jump
//! states are both recorded at the event time.
//!
//! Stochastic edges carry an accumulator `∫λ dt` integrated as extra state
//! components by the same stepper; an edge fires when its accumulator reaches
//! an Exponential(1) budget, which is inverse transform sampling of the
//! interevent time.

use std::cell::Cell;
use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use super::event::{bisect, EventLocation};
use super::rk::{error_ratio, initial_step_size, step_dopri_fsal, step_rk4};
use super::{Method, SolverConfig};
use crate::hybrid::{EventKind, EventSpec, HybridSystemDef, ModeId, StateVec, Trajectory};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HybridEvent {
    pub time: f64,
    pub source: ModeId,
    pub target: ModeId,
    /// Index of the fired edge in the system's event list.
    pub spec_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModeInterval {
    pub start: f64,
    pub end: f64,
    pub mode: ModeId,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub function_evals: usize,
    /// Localizations that hit `max_root_iters`.
    pub root_warnings: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridSolution {
    /// Samples with ground-truth modes and event times filled in.
    pub trajectory: Trajectory,
    pub events: Vec<HybridEvent>,
    pub mode_timeline: Vec<ModeInterval>,
    pub step_stats: StepStats,
}

/// Simulates `system` from `(x0, z0)` over `t_span`.
///
/// `rng_seed` drives the Exponential(1) budgets of stochastic edges; runs with
/// identical inputs are bit-identical.
pub fn odeint_hybrid(
    system: &HybridSystemDef,
    x0: &[f64],
    z0: ModeId,
    t_span: (f64, f64),
    config: &SolverConfig,
    rng_seed: u64,
) -> Result<HybridSolution> {
    system.validate()?;
    if z0.0 >= system.n_modes {
        return Err(Error::InvalidConfig(format!(
            "initial mode {z0} out of range"
        )));
    }
    if x0.len() != system.state_dim {
        return Err(Error::ShapeMismatch(format!(
            "x0 has {} entries, system state has {}",
            x0.len(),
            system.state_dim
        )));
    }
    let flow = |m: ModeId, t: f64, x: &[f64], dx: &mut [f64]| (system.flows[m.0])(t, x, dx);
    let mut sol = integrate(&flow, &system.events, x0, z0, t_span, config, rng_seed)?;
    sol.trajectory.id = system.name.clone();
    Ok(sol)
}

struct Active<'a> {
    mode: ModeId,
    /// (edge index, edge, accumulator slot for stochastic edges)
    edges: Vec<(usize, &'a EventSpec, Option<usize>)>,
    budgets: Vec<f64>,
}

impl<'a> Active<'a> {
    fn enter(events: &'a [EventSpec], mode: ModeId, rng: &mut ChaCha8Rng) -> Self {
        let mut edges = Vec::new();
        let mut budgets = Vec::new();
        for (i, e) in events.iter().enumerate().filter(|(_, e)| e.source == mode) {
            let slot = if e.kind.is_stochastic() {
                budgets.push(Exp1.sample(rng));
                Some(budgets.len() - 1)
            } else {
                None
            };
            edges.push((i, e, slot));
        }
        Self {
            mode,
            edges,
            budgets,
        }
    }

    fn n_acc(&self) -> usize {
        self.budgets.len()
    }

    fn fired(&self, k: usize, n: usize, t: f64, y: &[f64]) -> bool {
        let (_, e, slot) = self.edges[k];
        match (&e.kind, slot) {
            (EventKind::Deterministic(g), _) => g(t, &y[..n]) >= 0.0,
            (EventKind::Stochastic(_), Some(s)) => y[n + s] >= self.budgets[s],
            (EventKind::Stochastic(_), None) => unreachable!("stochastic edge without slot"),
        }
    }

    fn states(&self, n: usize, t: f64, y: &[f64]) -> Vec<bool> {
        (0..self.edges.len())
            .map(|k| self.fired(k, n, t, y))
            .collect()
    }
}

fn augmented_state(x: &[f64], n_acc: usize) -> Vec<f64> {
    let mut y = x.to_vec();
    y.resize(x.len() + n_acc, 0.0);
    y
}

/// Shared engine behind [`odeint_hybrid`] and [`super::odeint`].
pub(crate) fn integrate<F>(
    flow: &F,
    events: &[EventSpec],
    x0: &[f64],
    z0: ModeId,
    t_span: (f64, f64),
    config: &SolverConfig,
    rng_seed: u64,
) -> Result<HybridSolution>
where
    F: Fn(ModeId, f64, &[f64], &mut [f64]),
{
    config.validate()?;
    let (t0, t_end) = t_span;
    if !(t0.is_finite() && t_end.is_finite() && t_end >= t0) {
        return Err(Error::InvalidConfig(format!(
            "invalid time span [{t0}, {t_end}]"
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteFlow { t: t0 });
    }
    let n = x0.len();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let nfev = Cell::new(0usize);
    let mut stats = StepStats::default();

    let mut times = vec![t0];
    let mut states: Vec<StateVec> = vec![x0.to_vec()];
    let mut labels = vec![z0];
    let mut fired_events: Vec<HybridEvent> = Vec::new();
    let mut timeline: Vec<ModeInterval> = Vec::new();
    let mut mode_start = t0;
    let mut recent = VecDeque::new();

    let mut active = Active::enter(events, z0, &mut rng);
    let mut t = t0;
    let mut y = augmented_state(x0, active.n_acc());

    let fixed_dt = match config.method {
        Method::Rk4 => config.dt_init.or(config.output_dt),
        Method::DormandPrince => None,
    };
    let grid = config.output_dt;
    let grid_tol = |g: f64| 1e-12 * g.abs().max(1.0);
    let grid_at = |k: usize| t0 + k as f64 * grid.unwrap_or(0.0);
    let mut grid_k = 1usize;

    let limit_step = |h: f64| match config.max_step {
        Some(m) => h.min(m),
        None => h,
    };

    // Closures cannot borrow `active` mutably across mode switches, so the
    // augmented field is rebuilt from the current edge list on each use.
    macro_rules! aug_flow {
        ($act:expr) => {
            |tt: f64, yy: &[f64], dy: &mut [f64]| {
                nfev.set(nfev.get() + 1);
                flow($act.mode, tt, &yy[..n], &mut dy[..n]);
                for (_, e, slot) in &$act.edges {
                    if let (EventKind::Stochastic(lambda), Some(s)) = (&e.kind, slot) {
                        let l = lambda(tt, &yy[..n]);
                        dy[n + s] = if l.is_nan() { l } else { l.max(0.0) };
                    }
                }
            }
        };
    }

    let start_dt =
        |act: &Active, t: f64, y: &[f64], first: bool| -> Result<(f64, Option<Vec<f64>>)> {
            if let Some(h) = fixed_dt {
                return Ok((h, None));
            }
            let f = aug_flow!(act);
            let mut f0 = vec![0.0; y.len()];
            super::rk::eval(&f, t, y, &mut f0)?;
            let h = match config.dt_init {
                Some(h) if first => h,
                _ => initial_step_size(
                    &f,
                    t,
                    y,
                    &f0,
                    Method::DormandPrince.order(),
                    config.atol,
                    config.rtol,
                )?,
            };
            Ok((limit_step(h), Some(f0)))
        };

    let (mut dt, mut f_cur) = start_dt(&active, t, &y, true)?;
    let mut prev_states = active.states(n, t, &y);

    while t < t_end {
        // skip grid points already passed (e.g. coinciding with an event)
        if grid.is_some() {
            while grid_at(grid_k) <= t + grid_tol(t) {
                grid_k += 1;
            }
        }
        let mut h = dt.min(t_end - t);
        let mut clamped = h < dt;
        if grid.is_some() {
            let to_grid = grid_at(grid_k) - t;
            if to_grid < h {
                h = to_grid;
                clamped = true;
            }
        }
        if fixed_dt.is_none() && dt < 1e3 * f64::EPSILON * t.abs() {
            return Err(Error::StepUnderflow { t, dt });
        }

        let f = aug_flow!(active);
        let (y_new, ratio, f_next) = match config.method {
            Method::Rk4 => (step_rk4(&f, t, &y, h)?, 0.0, None),
            Method::DormandPrince => {
                let s = step_dopri_fsal(&f, t, &y, h, f_cur.as_deref())?;
                let r = error_ratio(&y, &s.x_next, &s.err, config.atol, config.rtol);
                (s.x_next, r, Some(s.f_next))
            }
        };
        if !(ratio <= 1.0) {
            if ratio.is_nan() {
                return Err(Error::NonFiniteFlow { t });
            }
            stats.rejected += 1;
            dt = limit_step(config.adapt_step(h, ratio).min(h));
            continue;
        }

        let new_states = active.states(n, t + h, &y_new);
        let triggered: Vec<usize> = (0..new_states.len())
            .filter(|&k| new_states[k] && !prev_states[k])
            .collect();

        if triggered.is_empty() {
            stats.accepted += 1;
            let landed_end = h == t_end - t;
            t = if landed_end { t_end } else { t + h };
            y = y_new;
            f_cur = f_next;
            prev_states = new_states;
            let on_grid = match grid {
                Some(_) => {
                    let g = grid_at(grid_k);
                    if (t - g).abs() <= grid_tol(g) {
                        if !landed_end {
                            t = g;
                        }
                        grid_k += 1;
                        true
                    } else {
                        false
                    }
                }
                None => true,
            };
            if on_grid || landed_end {
                times.push(t);
                states.push(y[..n].to_vec());
                labels.push(active.mode);
            }
            if fixed_dt.is_none() {
                let proposal = limit_step(config.adapt_step(h, ratio));
                dt = if clamped { dt.max(proposal) } else { proposal };
            }
            continue;
        }

        // Localize every newly fired edge and keep the earliest.
        let mut best: Option<(usize, EventLocation)> = None;
        for &k in &triggered {
            let fired = |tt: f64, yy: &[f64]| active.fired(k, n, tt, yy);
            let loc = bisect(
                config.method,
                &f,
                &fired,
                t,
                &y,
                h,
                y_new.clone(),
                config.event_tol,
                config.max_root_iters,
            )?;
            if !loc.converged {
                stats.root_warnings += 1;
            }
            let better = match &best {
                None => true,
                Some((_, b)) => loc.t_star < b.t_star,
            };
            if better {
                best = Some((k, loc));
            }
        }
        let (k, loc) = best.expect("at least one triggered edge");
        let (spec_index, spec, _) = active.edges[k];
        let t_star = loc.t_star;
        let x_pre = loc.x_star[..n].to_vec();
        let x_post = (spec.jump)(t_star, &x_pre);
        if x_post.len() != n || x_post.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFlow { t: t_star });
        }
        stats.accepted += 1;

        times.push(t_star);
        states.push(x_pre);
        labels.push(active.mode);
        times.push(t_star);
        states.push(x_post.clone());
        labels.push(spec.target);

        fired_events.push(HybridEvent {
            time: t_star,
            source: active.mode,
            target: spec.target,
            spec_index,
        });
        timeline.push(ModeInterval {
            start: mode_start,
            end: t_star,
            mode: active.mode,
        });
        mode_start = t_star;

        recent.push_back(t_star);
        while recent.front().is_some_and(|&s| s < t_star - 1.0) {
            recent.pop_front();
        }
        if recent.len() as f64 > config.max_events_per_unit_time {
            return Err(Error::ZenoGuard {
                t: t_star,
                limit: config.max_events_per_unit_time,
            });
        }

        active = Active::enter(events, spec.target, &mut rng);
        t = t_star;
        y = augmented_state(&x_post, active.n_acc());
        prev_states = active.states(n, t, &y);
        let (dt0, f0) = start_dt(&active, t, &y, false)?;
        dt = dt0;
        f_cur = f0;
    }

    timeline.push(ModeInterval {
        start: mode_start,
        end: t_end.max(t),
        mode: active.mode,
    });
    stats.function_evals = nfev.get();

    let event_times = fired_events.iter().map(|e| e.time).collect();
    let mut trajectory = Trajectory::new("", times, states);
    trajectory.mode_labels = Some(labels);
    trajectory.event_times = Some(event_times);
    Ok(HybridSolution {
        trajectory,
        events: fired_events,
        mode_timeline: timeline,
        step_stats: stats,
    })
}
