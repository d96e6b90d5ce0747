//! Event module: conditional spline flows over interevent times, residual
//! jump maps per mode pair, and closed-loop simulation of a learned automaton.

mod flow;
mod jump;
mod sim;
mod spline;
mod train;

pub use flow::{
    edge_key, lognormal_log_density, parse_edge_key, Edge, FlowCheckpoint, FlowHyper, SplineFlow,
};
pub use jump::JumpNet;
pub use sim::{
    dwell_times, sample_next_event, simulate_nha, EventTimeModel, ExponentialTimes, NhaSimConfig,
    NhaSimulation,
};
pub use spline::{n_spline_params, rq_spline_tape, RqSpline, MIN_BIN, MIN_DERIVATIVE};
pub use train::{
    evaluate_event_module, evaluate_event_module_scaled, train_event_module, EdgeCheckpoint,
    EdgeMetrics, EventCheckpoint, EventHyper, EventMetrics, EventModule, EventTrainingLog,
};
