//! Explicit Runge–Kutta steppers.

use crate::{Error, Result};

fn check_finite(t: f64, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteFlow { t })
    }
}

pub(crate) fn eval<F>(flow: &F, t: f64, x: &[f64], out: &mut [f64]) -> Result<()>
where
    F: Fn(f64, &[f64], &mut [f64]) + ?Sized,
{
    flow(t, x, out);
    check_finite(t, out)
}

fn axpy(x: &[f64], dt: f64, terms: &[(f64, &[f64])], out: &mut [f64]) {
    for i in 0..x.len() {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        out[i] = x[i] + dt * acc;
    }
}

/// One classical fourth-order Runge–Kutta step.
pub fn step_rk4<F>(flow: &F, t: f64, x: &[f64], dt: f64) -> Result<Vec<f64>>
where
    F: Fn(f64, &[f64], &mut [f64]) + ?Sized,
{
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    eval(flow, t, x, &mut k1)?;
    axpy(x, 0.5 * dt, &[(1.0, &k1)], &mut tmp);
    eval(flow, t + 0.5 * dt, &tmp, &mut k2)?;
    axpy(x, 0.5 * dt, &[(1.0, &k2)], &mut tmp);
    eval(flow, t + 0.5 * dt, &tmp, &mut k3)?;
    axpy(x, dt, &[(1.0, &k3)], &mut tmp);
    eval(flow, t + dt, &tmp, &mut k4)?;
    Ok((0..n)
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// fifth- minus fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Result of one Dormand–Prince step.
#[derive(Debug, Clone)]
pub struct DopriStep {
    /// Fifth-order solution.
    pub x_next: Vec<f64>,
    /// Fifth- minus fourth-order solution.
    pub err: Vec<f64>,
    /// Vector field at `(t + dt, x_next)`: the first stage of the next step.
    pub f_next: Vec<f64>,
}

/// Dormand–Prince step, reusing `f0 = flow(t, x)` when the caller has it.
pub fn step_dopri_fsal<F>(
    flow: &F,
    t: f64,
    x: &[f64],
    dt: f64,
    f0: Option<&[f64]>,
) -> Result<DopriStep>
where
    F: Fn(f64, &[f64], &mut [f64]) + ?Sized,
{
    let n = x.len();
    let mut k1 = vec![0.0; n];
    match f0 {
        Some(f) => k1.copy_from_slice(f),
        None => eval(flow, t, x, &mut k1)?,
    }
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    axpy(x, dt, &[(A21, &k1)], &mut tmp);
    eval(flow, t + C2 * dt, &tmp, &mut k2)?;
    axpy(x, dt, &[(A31, &k1), (A32, &k2)], &mut tmp);
    eval(flow, t + C3 * dt, &tmp, &mut k3)?;
    axpy(x, dt, &[(A41, &k1), (A42, &k2), (A43, &k3)], &mut tmp);
    eval(flow, t + C4 * dt, &tmp, &mut k4)?;
    axpy(
        x,
        dt,
        &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)],
        &mut tmp,
    );
    eval(flow, t + C5 * dt, &tmp, &mut k5)?;
    axpy(
        x,
        dt,
        &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
        &mut tmp,
    );
    eval(flow, t + dt, &tmp, &mut k6)?;
    let mut x_next = vec![0.0; n];
    axpy(
        x,
        dt,
        &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
        &mut x_next,
    );
    eval(flow, t + dt, &x_next, &mut k7)?;
    let err = (0..n)
        .map(|i| dt * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]))
        .collect();
    Ok(DopriStep {
        x_next,
        err,
        f_next: k7,
    })
}

/// One Dormand–Prince 5(4) step returning the solution and error estimate.
pub fn step_dopri<F>(flow: &F, t: f64, x: &[f64], dt: f64) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: Fn(f64, &[f64], &mut [f64]) + ?Sized,
{
    let s = step_dopri_fsal(flow, t, x, dt, None)?;
    Ok((s.x_next, s.err))
}

/// Scaled max-norm of the error estimate; a step is acceptable when `<= 1`.
pub fn error_ratio(x: &[f64], x_next: &[f64], err: &[f64], atol: f64, rtol: f64) -> f64 {
    x.iter()
        .zip(x_next)
        .zip(err)
        .map(|((a, b), e)| e.abs() / (atol + rtol * a.abs().max(b.abs())))
        .fold(0.0, f64::max)
}

/// Starting step size following Hairer, Nørsett & Wanner (HINIT).
pub fn initial_step_size<F>(
    flow: &F,
    t: f64,
    x: &[f64],
    f0: &[f64],
    order: i32,
    atol: f64,
    rtol: f64,
) -> Result<f64>
where
    F: Fn(f64, &[f64], &mut [f64]) + ?Sized,
{
    let n = x.len();
    if n == 0 {
        return Ok(1e-2);
    }
    let scale: Vec<f64> = x.iter().map(|v| atol + rtol * v.abs()).collect();
    let rms = |v: &[f64]| {
        (v.iter()
            .zip(&scale)
            .map(|(a, s)| (a / s).powi(2))
            .sum::<f64>()
            / n as f64)
            .sqrt()
    };
    let d0 = rms(x);
    let d1 = rms(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let x1: Vec<f64> = x.iter().zip(f0).map(|(a, f)| a + h0 * f).collect();
    let mut f1 = vec![0.0; n];
    eval(flow, t + h0, &x1, &mut f1)?;
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff) / h0;
    let dmax = d1.max(d2);
    let h1 = if dmax <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dmax).powf(1.0 / order as f64)
    };
    Ok((100.0 * h0).min(h1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(_t: f64, x: &[f64], dx: &mut [f64]) {
        dx[0] = -x[0];
    }

    #[test]
    fn rk4_zero_field_and_polynomials() {
        let zero = |_t: f64, _x: &[f64], dx: &mut [f64]| dx[0] = 0.0;
        assert_eq!(step_rk4(&zero, 0.0, &[1.0], 0.1).unwrap(), vec![1.0]);
        let one = |_t: f64, _x: &[f64], dx: &mut [f64]| dx[0] = 1.0;
        for h in [0.5, 0.125, 2.0] {
            assert_eq!(step_rk4(&one, 0.0, &[0.0], h).unwrap(), vec![h]);
        }
    }

    #[test]
    fn rk4_decay_step() {
        let x = step_rk4(&decay, 0.0, &[1.0], 0.1).unwrap();
        assert!((x[0] - (-0.1f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn dopri_decay_step() {
        let (x, err) = step_dopri(&decay, 0.0, &[1.0], 0.1).unwrap();
        assert!((x[0] - (-0.1f64).exp()).abs() < 1e-9);
        assert!(err[0].abs() < 1e-7);
        let zero = |_t: f64, _x: &[f64], dx: &mut [f64]| dx[0] = 0.0;
        let (x, err) = step_dopri(&zero, 0.0, &[3.0], 0.1).unwrap();
        assert_eq!(x, vec![3.0]);
        assert_eq!(err, vec![0.0]);
    }

    #[test]
    fn fsal_stage_matches_field() {
        let s = step_dopri_fsal(&decay, 0.0, &[1.0], 0.2, None).unwrap();
        assert_eq!(s.f_next[0], -s.x_next[0]);
        let again = step_dopri_fsal(&decay, 0.2, &s.x_next, 0.2, Some(&s.f_next)).unwrap();
        let fresh = step_dopri_fsal(&decay, 0.2, &s.x_next, 0.2, None).unwrap();
        assert_eq!(again.x_next, fresh.x_next);
    }

    #[test]
    fn non_finite_flow_is_reported() {
        let bad = |_t: f64, _x: &[f64], dx: &mut [f64]| dx[0] = f64::NAN;
        assert!(matches!(
            step_rk4(&bad, 0.0, &[1.0], 0.1),
            Err(Error::NonFiniteFlow { .. })
        ));
        assert!(matches!(
            step_dopri(&bad, 0.0, &[1.0], 0.1),
            Err(Error::NonFiniteFlow { .. })
        ));
    }
}
