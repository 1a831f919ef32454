//! Modelling, control, simulation and stability analysis for multi-terminal
//! HVDC grids.
//!
//! The crate is organized around five pieces:
//!
//! * [`grid`] — the resistive network, its conductance Laplacian and
//!   spectrum, plus the controller communication graph.
//! * [`controllers`] — the droop law and three distributed averaging
//!   controllers, closed-loop assembly and the cost-optimal dispatch.
//! * [`sim`] — fixed-step RK4 integration with an optional constant
//!   communication delay (method of steps), equilibrium solving and
//!   steady-state metrics.
//! * [`analysis`] — spectrum verdicts, closed-form stability certificates,
//!   the stationary voltage-spread bound and droop gain sweeps.
//! * [`random`] — seeded generators for randomized property suites.

pub mod analysis;
pub mod controllers;
pub mod grid;
pub mod random;
pub mod sim;
pub mod tol;

pub use analysis::{
    certify, hurwitz_verdict, voltage_difference_bound, CertificateReport, CertificateVerdict,
    SpectrumReport, SpectrumVerdict, StabilityReport,
};
pub use controllers::{
    assemble_closed_loop, control_output, optimal_dispatch, voltage_offset_residual,
    ClosedLoopSystem, ControllerSpec, DispatchTarget, StateBlock, StateLayout,
};
pub use grid::{laplacian_spectrum, CommEdge, CommGraph, GridTopology, Line, SpectralSummary};
pub use sim::{
    simulate, solve_equilibrium, steady_state_metrics, SimScenario, SteadyStateMetrics, Trajectory,
};
