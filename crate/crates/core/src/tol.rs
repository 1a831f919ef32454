//! Centralized numeric tolerances.
//!
//! Every threshold used by the library is defined here rather than inlined,
//! so that the provenance of each magic number is documented once.

/// Relative tolerance (w.r.t. spectral radius) below which an eigenvalue is
/// classified as a structural zero. Separates the graph-theoretic zero mode
/// from eigensolver noise at the parameter magnitudes of realistic grids
/// (bus capacitances in the tens of microfarads, line resistances in ohms).
pub const ZERO_EIG_REL: f64 = 1e-9;

/// Relative stability margin: a spectrum is Hurwitz when every eigenvalue
/// real part is below `-HURWITZ_MARGIN_REL * spectral_radius`.
pub const HURWITZ_MARGIN_REL: f64 = 1e-9;

/// Relative asymmetry (max |M - Mᵀ| entry over max |M| entry) accepted by the
/// symmetric eigensolver front-end.
pub const SYMMETRY_REL: f64 = 1e-12;

/// Equilibrium solutions must satisfy ‖Ax + b‖ ≤ EQUILIBRIUM_RESIDUAL_REL · ‖b‖.
pub const EQUILIBRIUM_RESIDUAL_REL: f64 = 1e-8;

/// Method-of-steps alignment: the step size must divide the communication
/// delay to within this relative error so delayed samples land on grid points.
pub const DELAY_ALIGNMENT_REL: f64 = 1e-12;

/// A positive-semidefiniteness certificate condition passes when the minimum
/// eigenvalue of the symmetrized expression is above `-PSD_CERT_REL * radius`;
/// exact zero is a legitimate boundary case (Laplacian null space) and must
/// not be rejected for rounding at the last bit.
pub const PSD_CERT_REL: f64 = 1e-9;

/// Relative entrywise tolerance when checking that two weighted Laplacians
/// describe the same graph (certificate preconditions).
pub const GRAPH_MATCH_REL: f64 = 1e-9;

/// Relative spread below which a diagonal gain matrix counts as uniform.
pub const UNIFORM_GAIN_REL: f64 = 1e-9;

/// The integrator aborts when ‖x‖∞ exceeds this factor times the initial
/// magnitude; unstable parameter sets must fail fast with diagnostics.
pub const DIVERGENCE_FACTOR: f64 = 1e12;

/// Current-balance identity Σ(uᵢ* + Iᵢ) = 0 holds to this relative tolerance.
pub const BALANCE_REL: f64 = 1e-9;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering_sane() {
        assert!(SYMMETRY_REL < ZERO_EIG_REL);
        assert!(DELAY_ALIGNMENT_REL < EQUILIBRIUM_RESIDUAL_REL);
        assert!(ZERO_EIG_REL <= PSD_CERT_REL);
    }
}
