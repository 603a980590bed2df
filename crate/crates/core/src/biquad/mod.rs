//! Biquad filters: cookbook design, sequential and parallel-scan evaluation, and gradients.

pub mod design;
pub mod filter;
pub mod response;
pub mod scan;

pub use design::{design, design_vjp, design_with_jacobian, BiquadCoeffs, DesignJacobian, FilterKind, FilterSpec};
pub use filter::{
    all_pole_scan, filter, filter_complex_pole, filter_forward, filter_real_poles, filter_sequential,
    filter_vjp, poles, scan_states, Poles,
};
pub use response::{cascade_response, frequency_response, log_grid, response_csv};
