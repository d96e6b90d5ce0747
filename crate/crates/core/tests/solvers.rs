mod common;

use common::{
    decay_error, ks_critical_001, ks_exponential, loglog_slope, poisson_interevent_times,
    CrossingInstance,
};
use nha_core::hybrid::ModeId;
use nha_core::solvers::{locate_event, odeint, odeint_hybrid, step_rk4, Method, SolverConfig};
use nha_core::systems::{make_toy, toy_solution, ToyParams};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const HS: [f64; 4] = [0.2, 0.1, 0.05, 0.025];

#[test]
fn rk4_is_fourth_order() {
    let errs: Vec<f64> = HS.iter().map(|&h| decay_error(h, false)).collect();
    let slope = loglog_slope(&HS, &errs);
    assert!((slope - 4.0).abs() < 0.3, "slope {slope}");
}

#[test]
fn dormand_prince_is_fifth_order() {
    let errs: Vec<f64> = HS.iter().map(|&h| decay_error(h, true)).collect();
    let slope = loglog_slope(&HS, &errs);
    assert!((slope - 5.0).abs() < 0.3, "slope {slope} {errs:?}");
}

#[test]
fn adaptive_run_meets_tolerance() {
    let flow = |_t: f64, x: &[f64], dx: &mut [f64]| {
        dx[0] = x[1];
        dx[1] = -x[0];
    };
    let cfg = SolverConfig {
        atol: 1e-9,
        rtol: 1e-9,
        ..SolverConfig::default()
    };
    let traj = odeint(&flow, &[1.0, 0.0], (0.0, 10.0), &cfg).unwrap();
    for (t, x) in traj.times.iter().zip(&traj.states) {
        assert!(
            (x[0] - t.cos()).abs() < 1e-6 && (x[1] + t.sin()).abs() < 1e-6,
            "t = {t}"
        );
    }
    assert_eq!(*traj.times.last().unwrap(), 10.0);
}

#[test]
fn output_grid_is_exact() {
    let flow = |_t: f64, x: &[f64], dx: &mut [f64]| dx[0] = -x[0];
    for method in [Method::Rk4, Method::DormandPrince] {
        let cfg = SolverConfig {
            method,
            output_dt: Some(0.1),
            ..SolverConfig::default()
        };
        let traj = odeint(&flow, &[2.0], (0.0, 3.0), &cfg).unwrap();
        assert_eq!(traj.times.len(), 31);
        for (k, t) in traj.times.iter().enumerate() {
            assert!((t - 0.1 * k as f64).abs() < 1e-12);
        }
        let last = traj.states.last().unwrap()[0];
        assert!((last - 2.0 * (-3.0f64).exp()).abs() < 1e-5);
    }
}

#[test]
fn randomized_crossings_are_localized() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = SolverConfig::default();
    for i in 0..100 {
        let inst = CrossingInstance::random(&mut rng);
        let sys = inst.system();
        let sol = odeint_hybrid(&sys, &[inst.x0], ModeId(0), (0.0, 4.0), &cfg, i).unwrap();
        assert_eq!(sol.events.len(), 1, "instance {i}");
        let t = sol.events[0].time;
        let exact = inst.exact_time();
        assert!(
            (t - exact).abs() <= cfg.event_tol,
            "instance {i}: {t} vs {exact}"
        );
        // the event has already happened at the reported time
        assert!(t >= exact - 1e-9);
    }
}

#[test]
fn locate_event_on_a_single_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = SolverConfig::default();
    for _ in 0..50 {
        let inst = CrossingInstance::random(&mut rng);
        let (u, c) = (inst.u, inst.c);
        let flow = move |_t: f64, x: &[f64], dx: &mut [f64]| dx[0] = u - x[0];
        let cond = move |_t: f64, x: &[f64]| x[0] - c;
        let exact = inst.exact_time();
        let t_lo = (exact - 0.3).max(0.0);
        let x_lo = [u + (inst.x0 - u) * (-t_lo).exp()];
        let t_hi = exact + 0.2;
        let x_hi = step_rk4(&flow, t_lo, &x_lo, t_hi - t_lo).unwrap();
        let loc = locate_event(&flow, &cond, t_lo, &x_lo, t_hi, &x_hi, &cfg).unwrap();
        assert!(loc.converged);
        assert!(
            (loc.t_star - exact).abs() <= cfg.event_tol,
            "{} vs {exact}",
            loc.t_star
        );
    }
}

#[test]
fn constant_intensity_gives_exponential_times() {
    let samples = poisson_interevent_times(2.0, 5000, 3);
    let d = ks_exponential(&samples, 2.0);
    assert!(d < ks_critical_001(samples.len()), "KS distance {d}");
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let se = 0.5 / (samples.len() as f64).sqrt();
    assert!((mean - 0.5).abs() < 3.0 * se, "mean {mean}");
}

#[test]
fn toy_simulation_matches_closed_form() {
    let params = ToyParams::default();
    let sys = make_toy(params).unwrap();
    let cfg = SolverConfig {
        output_dt: Some(0.05),
        atol: 1e-9,
        rtol: 1e-9,
        ..SolverConfig::default()
    };
    let sol = odeint_hybrid(&sys, &[1.5], ModeId(0), (0.0, 1.0), &cfg, 0).unwrap();
    assert_eq!(sol.events.len(), 1);
    assert!((sol.events[0].time - params.tau).abs() <= cfg.event_tol);
    let tr = &sol.trajectory;
    let j = tr.jump_indices();
    assert_eq!(j.len(), 1);
    for (i, (&t, x)) in tr.times.iter().zip(&tr.states).enumerate() {
        // the pre-jump sample sits at the located event time, so compare
        // it against the first-mode branch
        let want = if i <= j[0] {
            1.5 * (params.a * t).exp()
        } else {
            toy_solution(&params, 1.5, t)
        };
        assert!((x[0] - want).abs() < 1e-6, "t = {t}: {} vs {want}", x[0]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hybrid_runs_are_reproducible_and_consistent(seed in any::<u64>(), rate in 0.5f64..5.0) {
        let sys = common::poisson_system(rate);
        let cfg = SolverConfig::default();
        let a = odeint_hybrid(&sys, &[0.0], ModeId(0), (0.0, 10.0), &cfg, seed).unwrap();
        let b = odeint_hybrid(&sys, &[0.0], ModeId(0), (0.0, 10.0), &cfg, seed).unwrap();
        prop_assert_eq!(&a, &b);
        // event times increase and the timeline tiles the span
        prop_assert!(a.events.windows(2).all(|w| w[0].time < w[1].time));
        prop_assert_eq!(a.mode_timeline.len(), a.events.len() + 1);
        prop_assert_eq!(a.mode_timeline[0].start, 0.0);
        prop_assert_eq!(a.mode_timeline.last().unwrap().end, 10.0);
        for w in a.mode_timeline.windows(2) {
            prop_assert_eq!(w[0].end, w[1].start);
        }
        // the flow is x' = 1 with identity jumps, so x(t) = t
        for (t, x) in a.trajectory.times.iter().zip(&a.trajectory.states) {
            prop_assert!((x[0] - t).abs() < 1e-9);
        }
        prop_assert!(a.trajectory.times.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn rk4_step_is_exact_for_cubics(c in prop::collection::vec(-2.0f64..2.0, 4), t0 in -1.0f64..1.0, h in 0.01f64..1.0) {
        // x' = p(t) with p cubic: Simpson's rule, and hence RK4, is exact
        let flow = |t: f64, _x: &[f64], dx: &mut [f64]| dx[0] = c[0] + c[1] * t + c[2] * t * t + c[3] * t * t * t;
        let prim = |t: f64| c[0] * t + c[1] * t * t / 2.0 + c[2] * t.powi(3) / 3.0 + c[3] * t.powi(4) / 4.0;
        let x = step_rk4(&flow, t0, &[0.0], h).unwrap();
        prop_assert!((x[0] - (prim(t0 + h) - prim(t0))).abs() < 1e-12);
    }
}
