//! Independent reference computations shared by the integration tests and
//! the acceptance target.
#![allow(dead_code)]

use std::collections::HashMap;

use nha_core::hybrid::{EventSpec, HybridSystemDef, ModeId};
use nha_core::nn::{Graph, ParamId, ParamStore, Var};
use nha_core::solvers::{odeint_hybrid, step_dopri, step_rk4, SolverConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Least-squares slope of `log err` against `log h`.
pub fn loglog_slope(hs: &[f64], errs: &[f64]) -> f64 {
    let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Global error at `t = 1` of fixed-step integration of `x' = -x, x(0) = 1`.
pub fn decay_error(h: f64, dopri: bool) -> f64 {
    let flow = |_t: f64, x: &[f64], dx: &mut [f64]| dx[0] = -x[0];
    let n = (1.0 / h).round() as usize;
    let mut x = vec![1.0];
    for k in 0..n {
        let t = k as f64 * h;
        x = if dopri {
            step_dopri(&flow, t, &x, h).unwrap().0
        } else {
            step_rk4(&flow, t, &x, h).unwrap()
        };
    }
    (x[0] - (-1.0f64).exp()).abs()
}

/// Kolmogorov–Smirnov distance between `samples` and Exponential(`rate`).
pub fn ks_exponential(samples: &[f64], rate: f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = 1.0 - (-rate * x).exp();
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic one-sample KS critical value at level 0.01.
pub fn ks_critical_001(n: usize) -> f64 {
    1.627_6 / (n as f64).sqrt()
}

/// One mode with a self-loop at constant intensity `rate` and identity jump.
pub fn poisson_system(rate: f64) -> HybridSystemDef {
    HybridSystemDef {
        name: "poisson".into(),
        n_modes: 1,
        state_dim: 1,
        flows: vec![std::sync::Arc::new(|_t, _x: &[f64], dx: &mut [f64]| {
            dx[0] = 1.0
        })],
        events: vec![EventSpec::stochastic(
            0,
            0,
            move |_t, _x| rate,
            |_t, x| x.to_vec(),
        )],
        initial_mode: ModeId(0),
    }
}

/// Interevent times of the constant-intensity system until `n` are collected.
pub fn poisson_interevent_times(rate: f64, n: usize, seed: u64) -> Vec<f64> {
    let sys = poisson_system(rate);
    let horizon = 1.3 * n as f64 / rate + 10.0;
    let sol = odeint_hybrid(
        &sys,
        &[0.0],
        ModeId(0),
        (0.0, horizon),
        &SolverConfig::default(),
        seed,
    )
    .unwrap();
    let mut prev = 0.0;
    let mut out = Vec::with_capacity(n);
    for ev in sol.events.iter().take(n) {
        out.push(ev.time - prev);
        prev = ev.time;
    }
    assert_eq!(out.len(), n, "horizon too short");
    out
}

/// `x' = u - x`, which crosses `c` at `ln((x0 - u) / (c - u))`.
pub struct CrossingInstance {
    pub x0: f64,
    pub u: f64,
    pub c: f64,
}

impl CrossingInstance {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let x0 = rng.random_range(-3.0..0.0);
        let u = rng.random_range(1.0..4.0);
        // keep the crossing inside (0, 3) so it is bracketed comfortably
        let frac = rng.random_range(0.1..0.9);
        let c = x0 + frac * (u - x0);
        Self { x0, u, c }
    }

    pub fn exact_time(&self) -> f64 {
        ((self.x0 - self.u) / (self.c - self.u)).ln()
    }

    pub fn system(&self) -> HybridSystemDef {
        let (u, c) = (self.u, self.c);
        let flow = std::sync::Arc::new(move |_t: f64, x: &[f64], dx: &mut [f64]| dx[0] = u - x[0]);
        HybridSystemDef {
            name: "crossing".into(),
            n_modes: 2,
            state_dim: 1,
            flows: vec![flow.clone(), flow],
            events: vec![EventSpec::deterministic(
                0,
                1,
                move |_t, x| x[0] - c,
                |_t, x| x.to_vec(),
            )],
            initial_mode: ModeId(0),
        }
    }
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// V-measure from an explicit contingency table.
pub fn brute_v_measure(truth: &[usize], pred: &[usize]) -> f64 {
    let n = truth.len() as f64;
    let mut table: HashMap<(usize, usize), usize> = HashMap::new();
    let mut ct: HashMap<usize, usize> = HashMap::new();
    let mut cp: HashMap<usize, usize> = HashMap::new();
    for (&a, &b) in truth.iter().zip(pred) {
        *table.entry((a, b)).or_default() += 1;
        *ct.entry(a).or_default() += 1;
        *cp.entry(b).or_default() += 1;
    }
    let h_c = entropy(ct.values().copied(), n);
    let h_k = entropy(cp.values().copied(), n);
    // H(C|K) = -sum n_ck/n ln(n_ck / n_k)
    let h_c_k: f64 = table
        .iter()
        .map(|(&(_, k), &c)| -(c as f64 / n) * (c as f64 / cp[&k] as f64).ln())
        .sum();
    let h_k_c: f64 = table
        .iter()
        .map(|(&(t, _), &c)| -(c as f64 / n) * (c as f64 / ct[&t] as f64).ln())
        .sum();
    let h = if h_c == 0.0 { 1.0 } else { 1.0 - h_c_k / h_c };
    let c = if h_k == 0.0 { 1.0 } else { 1.0 - h_k_c / h_k };
    if h + c == 0.0 {
        0.0
    } else {
        2.0 * h * c / (h + c)
    }
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Best inertia over `restarts` runs of Lloyd's algorithm from uniformly
/// drawn distinct initial centers.
pub fn lloyd_oracle(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::INFINITY;
    for _ in 0..restarts {
        let idx = rand::seq::index::sample(&mut rng, points.len(), k);
        let mut centers: Vec<Vec<f64>> = idx.iter().map(|i| points[i].clone()).collect();
        let mut labels = vec![0usize; points.len()];
        for _ in 0..500 {
            let new: Vec<usize> = points
                .iter()
                .map(|p| {
                    (0..k)
                        .min_by(|&a, &b| sq(p, &centers[a]).total_cmp(&sq(p, &centers[b])))
                        .unwrap()
                })
                .collect();
            let done = new == labels;
            labels = new;
            for (c, center) in centers.iter_mut().enumerate() {
                let members: Vec<&Vec<f64>> = points
                    .iter()
                    .zip(&labels)
                    .filter(|(_, &l)| l == c)
                    .map(|(p, _)| p)
                    .collect();
                if !members.is_empty() {
                    for (d, v) in center.iter_mut().enumerate() {
                        *v = members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64;
                    }
                }
            }
            if done {
                break;
            }
        }
        let inertia: f64 = points
            .iter()
            .zip(&labels)
            .map(|(p, &l)| sq(p, &centers[l]))
            .sum();
        best = best.min(inertia);
    }
    best
}

/// A small Gaussian-blob instance: `k_true` blobs in `dim` dimensions.
pub fn blob_instance(rng: &mut ChaCha8Rng, n: usize, k_true: usize, dim: usize) -> Vec<Vec<f64>> {
    let centers: Vec<Vec<f64>> = (0..k_true)
        .map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect())
        .collect();
    (0..n)
        .map(|i| {
            let c = &centers[i % k_true];
            c.iter()
                .map(|v| v + rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect()
        })
        .collect()
}

/// Moves every parameter by a small random amount so no gradient is
/// accidentally zero at initialization.
pub fn jitter(store: &mut ParamStore, scale: f64, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in &mut store.get_mut(id).values {
            *v += scale * (rng.random::<f64>() - 0.5);
        }
    }
}

/// Largest relative error over up to `per_tensor` entries of every tensor.
pub fn param_gradcheck<T: Clone>(
    obj: &T,
    store: impl Fn(&mut T) -> &mut ParamStore,
    loss: impl Fn(&T, &mut Graph) -> Var,
    only: Option<&[ParamId]>,
    per_tensor: usize,
    h: f64,
) -> f64 {
    let mut work = obj.clone();
    store(&mut work).zero_grad();
    let mut g = Graph::new();
    let out = loss(&work, &mut g);
    g.backward(out).accumulate(&g, store(&mut work));
    let analytic = store(&mut work).clone();
    let eval = |o: &T| {
        let mut g = Graph::new();
        let out = loss(o, &mut g);
        g.value(out).scalar()
    };
    let mut worst: f64 = 0.0;
    let ids: Vec<_> = analytic
        .ids()
        .filter(|id| only.is_none_or(|o| o.contains(id)))
        .collect();
    for id in ids {
        let tensor = analytic.get(id);
        let n = tensor.values.len();
        let stride = (n / per_tensor).max(1);
        for i in (0..n).step_by(stride) {
            let x0 = tensor.values[i];
            store(&mut work).get_mut(id).values[i] = x0 + h;
            let fp = eval(&work);
            store(&mut work).get_mut(id).values[i] = x0 - h;
            let fm = eval(&work);
            store(&mut work).get_mut(id).values[i] = x0;
            let numeric = (fp - fm) / (2.0 * h);
            let a = tensor.grad.get(i).copied().unwrap_or(0.0);
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4));
        }
    }
    worst
}
