//! Stability certificates, spectrum verdicts and droop asymptotics.
//!
//! Two independent routes to a stability statement are kept side by side:
//!
//! * [`hurwitz_verdict`] computes the full complex spectrum of the closed-loop
//!   matrix and classifies it, excluding a declared structural zero mode.
//! * [`certify`] evaluates the closed-form sufficient conditions for the
//!   averaging controllers. A failed condition yields `Inconclusive` (the
//!   system may still be stable — the conditions are sufficient only);
//!   violated preconditions yield an explicit "inapplicable" error instead.
//!
//! Every extremal eigenvalue in a certificate is taken of the explicitly
//! symmetrized expression (`XY + YX` forms), never of a bare product.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::controllers::{ClosedLoopSystem, ControllerError, ControllerSpec};
use crate::grid::{GridError, GridTopology};
use crate::sim::SimError;
use crate::tol;

#[derive(Debug, Clone, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("certificate inapplicable: {0}")]
    Inapplicable(String),
    #[error("a structural zero mode was declared but no eigenvalue lies within {tolerance:.3e} of zero (closest {closest:.3e})")]
    MissingStructuralZero { tolerance: f64, closest: f64 },
    #[error("certificate requires controller family {expected}, got {found}")]
    WrongController {
        expected: &'static str,
        found: &'static str,
    },
}

/// Complex eigenvalue in serializable form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

/// Spectrum-based classification of a closed loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumVerdict {
    Hurwitz,
    HurwitzExcludingStructuralZero,
    Unstable,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    pub verdict: SpectrumVerdict,
    /// Eigenvalues sorted by descending real part.
    pub eigenvalues: Vec<Eigenvalue>,
    /// Largest real part over the non-structural eigenvalues.
    pub margin: f64,
    /// Absolute tolerance used to classify zero eigenvalues.
    pub zero_tolerance: f64,
    pub structural_zero_excluded: bool,
}

/// Verdict of a closed-form sufficient condition set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateVerdict {
    CertifiedStable,
    Inconclusive,
}

/// Comparison direction of a certificate condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    GreaterThan,
    AtLeast,
    AtMost,
}

impl std::fmt::Display for Relation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Relation::GreaterThan => ">",
            Relation::AtLeast => ">=",
            Relation::AtMost => "<=",
        })
    }
}

/// One evaluated condition of a certificate.
#[derive(Debug, Clone, Serialize)]
pub struct CertificateCondition {
    pub id: String,
    pub value: f64,
    pub relation: Relation,
    pub threshold: f64,
    pub pass: bool,
}

impl CertificateCondition {
    fn strict_positive(id: &str, value: f64) -> Self {
        Self {
            id: id.to_string(),
            value,
            relation: Relation::GreaterThan,
            threshold: 0.0,
            pass: value > 0.0,
        }
    }

    /// Nonnegativity with a relative floor so a Laplacian-null boundary case
    /// is not rejected for last-bit rounding.
    fn nonnegative(id: &str, value: f64, scale: f64) -> Self {
        Self {
            id: id.to_string(),
            value,
            relation: Relation::AtLeast,
            threshold: 0.0,
            pass: value >= -tol::PSD_CERT_REL * scale.abs().max(f64::MIN_POSITIVE),
        }
    }

    fn at_most(id: &str, value: f64, threshold: f64) -> Self {
        Self {
            id: id.to_string(),
            value,
            relation: Relation::AtMost,
            threshold,
            pass: value <= threshold,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateReport {
    pub controller: String,
    pub conditions: Vec<CertificateCondition>,
    pub verdict: CertificateVerdict,
    /// Whether the communication graph equals the grid graph including edge
    /// weights — the shortcut that guarantees the cross-Laplacian condition.
    pub identical_graphs: Option<bool>,
}

impl CertificateReport {
    fn from_conditions(
        controller: &str,
        conditions: Vec<CertificateCondition>,
        identical_graphs: Option<bool>,
    ) -> Self {
        let verdict = if conditions.iter().all(|c| c.pass) {
            CertificateVerdict::CertifiedStable
        } else {
            CertificateVerdict::Inconclusive
        };
        Self {
            controller: controller.to_string(),
            conditions,
            verdict,
            identical_graphs,
        }
    }
}

/// Combined stability report: certificate route (when applicable) plus the
/// spectrum route.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub certificate: Option<CertificateReport>,
    /// Set when the certificate preconditions were violated.
    pub certificate_inapplicable: Option<String>,
    pub spectrum: Option<SpectrumReport>,
}

impl std::fmt::Display for StabilityReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "stability report")?;
        writeln!(f, "================")?;
        if let Some(cert) = &self.certificate {
            writeln!(f, "certificate ({}):", cert.controller)?;
            for c in &cert.conditions {
                writeln!(
                    f,
                    "  {:<24} {:>14.6e} {} {:>14.6e}   {}",
                    c.id,
                    c.value,
                    c.relation,
                    c.threshold,
                    if c.pass { "pass" } else { "FAIL" }
                )?;
            }
            if let Some(identical) = cert.identical_graphs {
                writeln!(
                    f,
                    "  communication graph identical to grid: {}",
                    if identical { "yes" } else { "no" }
                )?;
            }
            writeln!(
                f,
                "  verdict: {}",
                match cert.verdict {
                    CertificateVerdict::CertifiedStable => "certified_stable",
                    CertificateVerdict::Inconclusive => "inconclusive",
                }
            )?;
        }
        if let Some(reason) = &self.certificate_inapplicable {
            writeln!(f, "certificate: inapplicable ({reason})")?;
        }
        if let Some(spec) = &self.spectrum {
            writeln!(
                f,
                "spectrum: {} (margin {:.6e}, zero tolerance {:.3e}{})",
                match spec.verdict {
                    SpectrumVerdict::Hurwitz => "hurwitz",
                    SpectrumVerdict::HurwitzExcludingStructuralZero =>
                        "hurwitz_excluding_structural_zero",
                    SpectrumVerdict::Unstable => "unstable",
                },
                spec.margin,
                spec.zero_tolerance,
                if spec.structural_zero_excluded {
                    ", structural zero excluded"
                } else {
                    ""
                }
            )?;
            for e in &spec.eigenvalues {
                writeln!(f, "  {:+.6e} {:+.6e}i", e.re, e.im)?;
            }
        }
        Ok(())
    }
}

/// Classifies the closed-loop spectrum with the default zero tolerance.
pub fn hurwitz_verdict(system: &ClosedLoopSystem) -> Result<SpectrumReport, AnalysisError> {
    hurwitz_verdict_with_tol(system, tol::ZERO_EIG_REL)
}

/// Classifies the closed-loop spectrum.
///
/// When the system declares a structural zero mode, exactly one eigenvalue
/// must lie within `zero_tol_rel × spectral radius` of the origin; it is
/// excluded from the verdict. The verdict is Hurwitz when every remaining
/// real part is below `−tol::HURWITZ_MARGIN_REL × spectral radius`.
pub fn hurwitz_verdict_with_tol(
    system: &ClosedLoopSystem,
    zero_tol_rel: f64,
) -> Result<SpectrumReport, AnalysisError> {
    let eigen = system.a.complex_eigenvalues();
    let radius = eigen
        .iter()
        .map(|l| l.norm())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let zero_tolerance = zero_tol_rel * radius;

    let mut values: Vec<Eigenvalue> = eigen.iter().map(|l| Eigenvalue { re: l.re, im: l.im }).collect();
    values.sort_by(|a, b| b.re.partial_cmp(&a.re).expect("finite eigenvalues"));

    let excluded_index = if system.structural_zero.is_some() {
        let (closest_index, closest_norm) = values
            .iter()
            .enumerate()
            .map(|(i, e)| (i, (e.re * e.re + e.im * e.im).sqrt()))
            .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite"))
            .expect("nonempty spectrum");
        if closest_norm > zero_tolerance {
            return Err(AnalysisError::MissingStructuralZero {
                tolerance: zero_tolerance,
                closest: closest_norm,
            });
        }
        Some(closest_index)
    } else {
        None
    };

    let margin = values
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != excluded_index)
        .map(|(_, e)| e.re)
        .fold(f64::NEG_INFINITY, f64::max);

    let stable = margin < -tol::HURWITZ_MARGIN_REL * radius;
    let verdict = match (stable, excluded_index.is_some()) {
        (true, false) => SpectrumVerdict::Hurwitz,
        (true, true) => SpectrumVerdict::HurwitzExcludingStructuralZero,
        (false, _) => SpectrumVerdict::Unstable,
    };
    Ok(SpectrumReport {
        verdict,
        eigenvalues: values,
        margin,
        zero_tolerance,
        structural_zero_excluded: excluded_index.is_some(),
    })
}

/// λmin and spectral radius of the symmetrized sum `M + Mᵀ`.
fn min_eig_of_sum(m: &DMatrix<f64>) -> (f64, f64) {
    let sym = m + m.transpose();
    let eigen = sym.symmetric_eigen().eigenvalues;
    let min = eigen.min();
    let radius = eigen.amax();
    (min, radius)
}

fn max_eig_symmetric(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.max()
}

fn laplacians_match(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    let scale = a.amax().max(b.amax()).max(f64::MIN_POSITIVE);
    (a - b).amax() <= tol::GRAPH_MATCH_REL * scale
}

/// Sufficient stability conditions for the averaging controllers I and II.
///
/// Evaluates, with `C` from the grid and the gains from the spec,
///
/// * `damping`: ½·λmin(Kᵖ⁻¹L_R + L_RKᵖ⁻¹) + 1 + γ/2·λmin(L_cKᵖ⁻¹C + CKᵖ⁻¹L_c) > 0
/// * `cross-laplacian`: λmin(L_cKᵖ⁻¹L_R + L_RKᵖ⁻¹L_c) ≥ 0
///
/// and reports whether the communication graph is identical to the grid
/// graph, which by itself guarantees the second condition.
pub fn certify_avg_i_ii(
    grid: &GridTopology,
    spec: &ControllerSpec,
) -> Result<CertificateReport, AnalysisError> {
    let (comm, gamma) = match spec {
        ControllerSpec::AvgI {
            comm,
            consensus_gain,
            ..
        }
        | ControllerSpec::AvgII {
            comm,
            consensus_gain,
            ..
        } => (comm, *consensus_gain),
        other => {
            return Err(AnalysisError::WrongController {
                expected: "averaging-I/II",
                found: other.label(),
            })
        }
    };
    spec.validate(grid.bus_count())?;
    let lap_grid = grid.conductance_laplacian()?;
    let lap_comm = comm.laplacian();
    let n = grid.bus_count();
    let gain_inverse = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0 / spec.proportional()[i]
        } else {
            0.0
        }
    });
    let cap = DMatrix::from_fn(n, n, |i, j| if i == j { grid.capacitance()[i] } else { 0.0 });

    let (grid_term, _) = min_eig_of_sum(&(&gain_inverse * &lap_grid));
    let (comm_term, _) = min_eig_of_sum(&(&lap_comm * &gain_inverse * &cap));
    let damping = 0.5 * grid_term + 1.0 + 0.5 * gamma * comm_term;

    let (cross, cross_radius) = min_eig_of_sum(&(&lap_comm * &gain_inverse * &lap_grid));

    let conditions = vec![
        CertificateCondition::strict_positive("damping", damping),
        CertificateCondition::nonnegative("cross-laplacian", cross, cross_radius),
    ];
    Ok(CertificateReport::from_conditions(
        spec.label(),
        conditions,
        Some(laplacians_match(&lap_grid, &lap_comm)),
    ))
}

/// Sufficient stability conditions for averaging controller III.
///
/// Requires the communication graph to equal the grid graph (including
/// weights) and a uniform proportional gain; otherwise the certificate is
/// inapplicable. The three conditions are
///
/// * `damping`: (γ+δ)/(2kᵖ)·λmin(L_RC + CL_R) + 1 > 0
/// * `integral-damping`: γδ/(2kᵖ)·λmin(L_R²C + CL_R²) + minᵢKᵛᵢ > 0
/// * `coupling-bound`: λmax(L_R³)·γδ/kᵖ² ≤ damping · integral-damping
pub fn certify_avg_iii(
    grid: &GridTopology,
    spec: &ControllerSpec,
) -> Result<CertificateReport, AnalysisError> {
    let ControllerSpec::AvgIII {
        proportional,
        integral,
        consensus_gain,
        reference_consensus_gain,
        comm,
    } = spec
    else {
        return Err(AnalysisError::WrongController {
            expected: "averaging-III",
            found: spec.label(),
        });
    };
    spec.validate(grid.bus_count())?;
    let lap_grid = grid.conductance_laplacian()?;
    let lap_comm = comm.laplacian();
    if !laplacians_match(&lap_grid, &lap_comm) {
        return Err(AnalysisError::Inapplicable(
            "communication graph must equal the grid graph including edge weights".into(),
        ));
    }
    let k_max = proportional.max();
    let k_min = proportional.min();
    if (k_max - k_min).abs() > tol::UNIFORM_GAIN_REL * k_max {
        return Err(AnalysisError::Inapplicable(
            "proportional gain must be uniform across buses".into(),
        ));
    }
    let k_p = proportional[0];
    let gamma = *consensus_gain;
    let delta = *reference_consensus_gain;
    let n = grid.bus_count();
    let cap = DMatrix::from_fn(n, n, |i, j| if i == j { grid.capacitance()[i] } else { 0.0 });

    let lap_sq = &lap_grid * &lap_grid;
    let (lc_min, _) = min_eig_of_sum(&(&lap_grid * &cap));
    let damping = (gamma + delta) / (2.0 * k_p) * lc_min + 1.0;

    let (l2c_min, _) = min_eig_of_sum(&(&lap_sq * &cap));
    let integral_damping = gamma * delta / (2.0 * k_p) * l2c_min + integral.min();

    let lap_cube_max = max_eig_symmetric(&(&lap_sq * &lap_grid));
    let coupling = lap_cube_max * gamma * delta / (k_p * k_p);

    let conditions = vec![
        CertificateCondition::strict_positive("damping", damping),
        CertificateCondition::strict_positive("integral-damping", integral_damping),
        CertificateCondition::at_most("coupling-bound", coupling, damping * integral_damping),
    ];
    Ok(CertificateReport::from_conditions(
        spec.label(),
        conditions,
        Some(true),
    ))
}

/// Dispatches to the certificate matching the controller family. Droop
/// control is unconditionally stable for positive gains, which is reported as
/// a single positivity condition.
pub fn certify(
    grid: &GridTopology,
    spec: &ControllerSpec,
) -> Result<CertificateReport, AnalysisError> {
    match spec {
        ControllerSpec::Droop { proportional } => {
            spec.validate(grid.bus_count())?;
            let conditions = vec![CertificateCondition::strict_positive(
                "positive-gain",
                proportional.min(),
            )];
            Ok(CertificateReport::from_conditions(
                spec.label(),
                conditions,
                None,
            ))
        }
        ControllerSpec::AvgI { .. } | ControllerSpec::AvgII { .. } => certify_avg_i_ii(grid, spec),
        ControllerSpec::AvgIII { .. } => certify_avg_iii(grid, spec),
    }
}

/// Upper bound on stationary pairwise voltage differences:
/// `2·maxᵢ|Iᵢᵗᵒᵗ|·Σ 1/λᵢ` over the nonzero conductance-Laplacian eigenvalues.
pub fn voltage_difference_bound(
    grid: &GridTopology,
    i_tot: &DVector<f64>,
) -> Result<f64, AnalysisError> {
    if i_tot.len() != grid.bus_count() {
        return Err(AnalysisError::Grid(GridError::DimensionMismatch {
            expected: grid.bus_count(),
            found: i_tot.len(),
        }));
    }
    let lap = grid.conductance_laplacian()?;
    let summary = crate::grid::laplacian_spectrum(&lap)?;
    Ok(2.0 * i_tot.amax() * summary.harmonic_sum)
}

/// One row of a droop gain sweep.
#[derive(Debug, Clone, Serialize)]
pub struct DroopSweepPoint {
    pub k_p: f64,
    /// ‖V − Vⁿᵒᵐ‖∞ at the droop equilibrium (V).
    pub voltage_deviation_inf: f64,
    /// ‖u − u*‖∞ against the uniform-weight optimal dispatch (A).
    pub dispatch_distance_inf: f64,
    /// ‖u + Iⁱⁿʲ‖∞ (A); tends to zero in the high-gain limit.
    pub balance_inf: f64,
}

/// Solves the droop equilibrium for each uniform gain in the sweep and
/// evaluates the distances that characterize the low- and high-gain limits.
/// Dispatch weights follow the droop gain (`F = (kᵖ)⁻¹·I`), so `u*` is the
/// uniform-weight dispatch for every sweep entry.
pub fn droop_asymptotics(
    grid: &GridTopology,
    i_inj: &DVector<f64>,
    k_p_sweep: &[f64],
) -> Result<Vec<DroopSweepPoint>, AnalysisError> {
    grid.validate()?;
    let n = grid.bus_count();
    if i_inj.len() != n {
        return Err(AnalysisError::Grid(GridError::DimensionMismatch {
            expected: n,
            found: i_inj.len(),
        }));
    }
    let lap = grid.conductance_laplacian()?;
    let v_nom = grid.nominal_voltage_vector();
    let mut rows = Vec::with_capacity(k_p_sweep.len());
    for &k_p in k_p_sweep {
        if !(k_p > 0.0) {
            return Err(AnalysisError::Controller(ControllerError::NonpositiveScalar {
                what: "droop sweep gain",
                value: k_p,
            }));
        }
        let mut system = lap.clone();
        for i in 0..n {
            system[(i, i)] += k_p;
        }
        let rhs = &v_nom * k_p + i_inj;
        let voltage = system
            .lu()
            .solve(&rhs)
            .expect("L_R + kI is positive definite for k > 0");
        let u = (&v_nom - &voltage) * k_p;
        let dispatch =
            crate::controllers::optimal_dispatch(i_inj, &DVector::from_element(n, 1.0 / k_p))?;
        rows.push(DroopSweepPoint {
            k_p,
            voltage_deviation_inf: (&voltage - &v_nom).amax(),
            dispatch_distance_inf: (&u - dispatch.u_star_vector()).amax(),
            balance_inf: (&u + i_inj).amax(),
        });
    }
    Ok(rows)
}
