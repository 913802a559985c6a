//! Disturbance propagation in leader-follower formations running m-th order
//! consensus over r-predecessor topologies.
//!
//! * [`topology`]: r-predecessor Laplacians and spanning-tree checks.
//! * [`protocol`]: mode polynomials, root finding, Routh-Hurwitz and the
//!   closed-loop matrix.
//! * [`freqdomain`]: the propagation coefficient `Phi_m`, H-infinity
//!   estimates and string-stability verdicts.
//! * [`timedomain`]: RK4 simulation of the error dynamics and spacing-error
//!   metrics.
//! * [`experiment`]: JSON configs and the (m, r) grid runner.

pub mod error;
pub mod experiment;
pub mod freqdomain;
pub mod poly;
pub mod protocol;
pub mod svg;
pub mod timedomain;
pub mod topology;

pub use error::{Error, Result};
pub use freqdomain::{
    dc_gain, eval_g, eval_phi, follower_chain_response, follower_chain_responses, hinf_estimate, sweep,
    FrequencyGrid, FrequencyResponse, ResponseLabel, Spacing, StringStabilityReport, SweepParams, Transfer,
    Verdict,
};
pub use poly::{polynomial_roots, routh_hurwitz_stable, RealPolynomial, RouthVerdict};
pub use protocol::{
    build_closed_loop_matrix, characteristic_residual, characteristic_scale, internal_stability_check,
    mode_polynomial, shaping_polynomial, ModeAnalysis, ProtocolConfig, StabilityCheck,
};
pub use timedomain::{
    impulse_initial_state, propagation_metrics, simulate, simulate_from_state, spacing_errors,
    DisturbanceProfile, PropagationMetrics, SimParams, SimulationTrace,
};
pub use topology::{
    build_r_predecessor, has_spanning_tree, laplacian_eigenvalues_triangular, BoundaryConvention, DirectedGraph,
    Topology,
};
