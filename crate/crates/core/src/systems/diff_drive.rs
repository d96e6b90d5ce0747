use std::sync::Arc;

use crate::hybrid::FlowFn;

/// Unicycle kinematics on `(x1, x2, heading)` driven by a control law
/// returning `(u_v, u_r)`.
pub fn make_diff_drive<C>(control: C) -> FlowFn
where
    C: Fn(f64, &[f64]) -> (f64, f64) + Send + Sync + 'static,
{
    Arc::new(move |t, x: &[f64], dx: &mut [f64]| {
        let (u_v, u_r) = control(t, x);
        dx[0] = u_v * x[2].cos();
        dx[1] = u_v * x[2].sin();
        dx[2] = u_r;
    })
}
