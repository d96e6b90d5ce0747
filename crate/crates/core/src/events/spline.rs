//! Monotone rational-quadratic splines on `[-B, B]` with identity tails.
//!
//! A spline with `K` bins is described by `3K - 1` unconstrained numbers:
//! `K` width logits, `K` height logits and `K - 1` interior derivative
//! pre-activations. All-zero parameters give the identity map.

use crate::nn::{softplus, Graph, Matrix, Var};
use crate::{Error, Result};

/// Smallest bin width or height, as a fraction of `2B`.
pub const MIN_BIN: f64 = 1e-3;
/// Smallest knot derivative.
pub const MIN_DERIVATIVE: f64 = 1e-3;

/// `c` with `MIN_DERIVATIVE + softplus(c) = 1`.
fn derivative_shift() -> f64 {
    (1.0 - MIN_DERIVATIVE).exp_m1().ln()
}

pub fn n_spline_params(n_bins: usize) -> usize {
    3 * n_bins - 1
}

/// Knot positions and derivatives of one spline.
#[derive(Debug, Clone, PartialEq)]
pub struct RqSpline {
    /// `K + 1` increasing knot abscissae from `-B` to `B`.
    pub xs: Vec<f64>,
    /// `K + 1` increasing knot ordinates from `-B` to `B`.
    pub ys: Vec<f64>,
    /// `K + 1` positive knot derivatives; the end ones are 1.
    pub ds: Vec<f64>,
}

fn normalized_bins(logits: &[f64], bound: f64) -> Vec<f64> {
    let k = logits.len() as f64;
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.iter()
        .map(|v| 2.0 * bound * (MIN_BIN + (1.0 - k * MIN_BIN) * v / total))
        .collect()
}

fn knots(sizes: &[f64], bound: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(sizes.len() + 1);
    out.push(-bound);
    let mut acc = -bound;
    for (i, s) in sizes.iter().enumerate() {
        acc += s;
        // pin the last knot so rounding never leaves a gap at the boundary
        out.push(if i + 1 == sizes.len() { bound } else { acc });
    }
    out
}

impl RqSpline {
    pub fn from_params(raw: &[f64], n_bins: usize, bound: f64) -> Result<Self> {
        if raw.len() != n_spline_params(n_bins) {
            return Err(Error::ShapeMismatch(format!(
                "spline with {n_bins} bins needs {} parameters, got {}",
                n_spline_params(n_bins),
                raw.len()
            )));
        }
        let xs = knots(&normalized_bins(&raw[..n_bins], bound), bound);
        let ys = knots(&normalized_bins(&raw[n_bins..2 * n_bins], bound), bound);
        let shift = derivative_shift();
        let mut ds = vec![1.0];
        ds.extend(
            raw[2 * n_bins..]
                .iter()
                .map(|a| MIN_DERIVATIVE + softplus(a + shift)),
        );
        ds.push(1.0);
        Ok(Self { xs, ys, ds })
    }

    pub fn bound(&self) -> f64 {
        self.xs[self.xs.len() - 1]
    }

    fn bin(knots: &[f64], v: f64) -> usize {
        let k = knots.len() - 1;
        knots[1..k].partition_point(|&x| x <= v)
    }

    /// `(y, log dy/dx)`.
    pub fn forward(&self, x: f64) -> (f64, f64) {
        let b = self.bound();
        if !(x >= -b && x <= b) {
            return (x, 0.0);
        }
        let k = Self::bin(&self.xs, x);
        let (w, h) = (self.xs[k + 1] - self.xs[k], self.ys[k + 1] - self.ys[k]);
        let s = h / w;
        let xi = (x - self.xs[k]) / w;
        let (d0, d1) = (self.ds[k], self.ds[k + 1]);
        let t = xi * (1.0 - xi);
        let den = s + (d1 + d0 - 2.0 * s) * t;
        let y = self.ys[k] + h * (s * xi * xi + d0 * t) / den;
        let deriv = s * s * (d1 * xi * xi + 2.0 * s * t + d0 * (1.0 - xi).powi(2)) / (den * den);
        (y, deriv.ln())
    }

    pub fn inverse(&self, y: f64) -> f64 {
        let b = self.bound();
        if !(y >= -b && y <= b) {
            return y;
        }
        let k = Self::bin(&self.ys, y);
        let (w, h) = (self.xs[k + 1] - self.xs[k], self.ys[k + 1] - self.ys[k]);
        let s = h / w;
        let (d0, d1) = (self.ds[k], self.ds[k + 1]);
        let dy = y - self.ys[k];
        let c2 = d1 + d0 - 2.0 * s;
        let a = h * (s - d0) + dy * c2;
        let bq = h * d0 - dy * c2;
        let c = -s * dy;
        let disc = (bq * bq - 4.0 * a * c).max(0.0);
        let xi = (2.0 * c) / (-bq - disc.sqrt());
        (self.xs[k] + xi.clamp(0.0, 1.0) * w).clamp(-b, b)
    }
}

/// Differentiable spline transform of the column `x` (`n x 1`) with per-row
/// parameters `raw` (`n x (3K - 1)`). Returns `(y, log dy/dx)`, both `n x 1`.
pub fn rq_spline_tape(g: &mut Graph, x: Var, raw: Var, n_bins: usize, bound: f64) -> (Var, Var) {
    let k = n_bins;
    let n = g.value(x).rows;
    let xv: Vec<f64> = g.value(x).data.clone();
    let inside: Vec<f64> = xv
        .iter()
        .map(|v| if v.abs() <= bound { 1.0 } else { 0.0 })
        .collect();
    let mask = g.input(Matrix::from_vec(n, 1, inside.clone()).expect("mask"));
    let outside =
        g.input(Matrix::from_vec(n, 1, inside.iter().map(|m| 1.0 - m).collect()).expect("mask"));
    // tail rows are evaluated at 0 and discarded
    let xc = g.mul(x, mask);

    let bins = |g: &mut Graph, logits: Var| {
        let p = g.softmax_rows(logits);
        let p = g.scale(p, 2.0 * bound * (1.0 - k as f64 * MIN_BIN));
        g.add_scalar(p, 2.0 * bound * MIN_BIN)
    };
    let wl = g.slice_cols(raw, 0, k);
    let hl = g.slice_cols(raw, k, 2 * k);
    let dl = g.slice_cols(raw, 2 * k, 3 * k - 1);
    let widths = bins(g, wl);
    let heights = bins(g, hl);
    let dshift = g.add_scalar(dl, derivative_shift());
    let dsp = g.softplus(dshift);
    let dint = g.add_scalar(dsp, MIN_DERIVATIVE);
    let one = g.constant(n, 1, 1.0);
    let ds = g.concat_cols(&[one, dint, one]);
    let cw = g.cumsum_cols(widths);
    let ch = g.cumsum_cols(heights);

    // bin index from forward values
    let cwv = g.value(cw).clone();
    let idx: Vec<usize> = (0..n)
        .map(|r| {
            let v = if inside[r] > 0.0 { xv[r] } else { 0.0 };
            let row = cwv.row(r);
            (0..k - 1).take_while(|&j| -bound + row[j] <= v).count()
        })
        .collect();
    let idx1: Vec<usize> = idx.iter().map(|i| i + 1).collect();

    let w = g.gather_cols(widths, &idx);
    let h = g.gather_cols(heights, &idx);
    let cwk = g.gather_cols(cw, &idx);
    let chk = g.gather_cols(ch, &idx);
    let xk = g.sub(cwk, w);
    let xk = g.add_scalar(xk, -bound);
    let yk = g.sub(chk, h);
    let yk = g.add_scalar(yk, -bound);
    let d0 = g.gather_cols(ds, &idx);
    let d1 = g.gather_cols(ds, &idx1);

    let s = g.div(h, w);
    let off = g.sub(xc, xk);
    let xi = g.div(off, w);
    let one_minus = g.scale(xi, -1.0);
    let one_minus = g.add_scalar(one_minus, 1.0);
    let t = g.mul(xi, one_minus);
    let xi2 = g.square(xi);
    let om2 = g.square(one_minus);
    let dsum = g.add(d0, d1);
    let two_s = g.scale(s, 2.0);
    let c2 = g.sub(dsum, two_s);
    let c2t = g.mul(c2, t);
    let den = g.add(s, c2t);
    let sxi2 = g.mul(s, xi2);
    let d0t = g.mul(d0, t);
    let num = g.add(sxi2, d0t);
    let num = g.mul(h, num);
    let frac = g.div(num, den);
    let y_in = g.add(yk, frac);

    let a1 = g.mul(d1, xi2);
    let a2 = g.mul(two_s, t);
    let a3 = g.mul(d0, om2);
    let poly = g.add(a1, a2);
    let poly = g.add(poly, a3);
    let s2 = g.square(s);
    let top = g.mul(s2, poly);
    let den2 = g.square(den);
    let deriv = g.div(top, den2);
    let logdet_in = g.log(deriv);

    let y_masked = g.mul(y_in, mask);
    let x_tail = g.mul(x, outside);
    let y = g.add(y_masked, x_tail);
    let logdet = g.mul(logdet_in, mask);
    (y, logdet)
}
