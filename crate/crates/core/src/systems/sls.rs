//! Two-dimensional switching linear system with three state-space regions.

use std::sync::Arc;

use crate::hybrid::{EventSpec, FlowFn, HybridSystemDef, ModeId};

/// Region of the plane: `x >= 2` is mode 0, `x < 2, y >= 0` mode 1, and
/// `x < 2, y < 0` mode 2.
pub fn sls_region(x: &[f64]) -> ModeId {
    if x[0] >= 2.0 {
        ModeId(0)
    } else if x[1] >= 0.0 {
        ModeId(1)
    } else {
        ModeId(2)
    }
}

/// The piecewise vector field evaluated through its region.
pub fn sls_field(x: &[f64]) -> [f64; 2] {
    mode_field(sls_region(x), x)
}

fn mode_field(mode: ModeId, x: &[f64]) -> [f64; 2] {
    match mode.0 {
        0 => [-x[1], x[0] + 2.0],
        1 => [-1.0, -1.0],
        _ => [1.0, -1.0],
    }
}

/// SLS as a hybrid system: one mode per region, deterministic boundary
/// crossings, identity jumps.
pub fn make_sls() -> HybridSystemDef {
    let flows: Vec<FlowFn> = (0..3)
        .map(|m| {
            Arc::new(move |_t: f64, x: &[f64], dx: &mut [f64]| {
                let f = mode_field(ModeId(m), x);
                dx[0] = f[0];
                dx[1] = f[1];
            }) as FlowFn
        })
        .collect();
    let keep = |_t: f64, x: &[f64]| x.to_vec();
    let events = vec![
        // leaving x >= 2 always happens with y > 0
        EventSpec::deterministic(0, 1, |_t, x| 2.0 - x[0], keep),
        EventSpec::deterministic(1, 2, |_t, x| -x[1], keep),
        EventSpec::deterministic(2, 0, |_t, x| x[0] - 2.0, keep),
    ];
    HybridSystemDef {
        name: "sls".into(),
        n_modes: 3,
        state_dim: 2,
        flows,
        events,
        initial_mode: ModeId(1),
    }
}
