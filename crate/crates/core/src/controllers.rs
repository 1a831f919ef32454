//! Control laws and closed-loop assembly.
//!
//! Four laws are implemented:
//!
//! * **Droop** — decentralized proportional control, `uᵢ = Kᵖᵢ(Vᵢⁿᵒᵐ − Vᵢ)`.
//! * **AvgI** — droop on an internal reference `V̂` driven by integral action
//!   at a single dedicated measurement bus plus a consensus filter over the
//!   communication graph.
//! * **AvgII** — like AvgI but the integral action sums the voltage deviation
//!   of *all* buses at every bus, which requires all-to-all information.
//! * **AvgIII** — fully distributed: two internal states per bus (`V̂`, `V̄`)
//!   updated by consensus filters and per-bus integral action.
//!
//! [`assemble_closed_loop`] turns a grid plus a controller into the affine
//! system `ẋ = Ax + b` with the communicated couplings split out so the
//! simulator can delay them.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::grid::{CommGraph, GridError, GridTopology};
use crate::tol;

#[derive(Debug, Clone, Error)]
pub enum ControllerError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("{what} has {found} entries, expected {expected}")]
    GainLength {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{what}[{index}] = {value} must be positive")]
    NonpositiveGain {
        what: &'static str,
        index: usize,
        value: f64,
    },
    #[error("{what}[{index}] = {value} must be nonnegative")]
    NegativeGain {
        what: &'static str,
        index: usize,
        value: f64,
    },
    #[error("{what} = {value} must be positive")]
    NonpositiveScalar { what: &'static str, value: f64 },
    #[error("integral gain must be positive at exactly one bus, found {count}")]
    LeaderGainCount { count: usize },
    #[error("communication graph has {comm} vertices but the grid has {grid} buses")]
    CommGridMismatch { comm: usize, grid: usize },
    #[error("controller requires all-to-all voltage information but the communication graph does not provide it")]
    IncompleteCommunication,
    #[error("state vector has {found} entries, expected {expected} ({blocks} blocks of {n})")]
    StateDimension {
        expected: usize,
        found: usize,
        blocks: usize,
        n: usize,
    },
    #[error("injection vector has {found} entries, expected {expected}")]
    InjectionLength { expected: usize, found: usize },
}

/// Named block of the closed-loop state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum StateBlock {
    /// Secondary-control reference offset (AvgIII only).
    VBar,
    /// Internal droop reference.
    VHat,
    /// Bus voltages.
    V,
}

impl StateBlock {
    pub fn label(self) -> &'static str {
        match self {
            StateBlock::VBar => "Vbar",
            StateBlock::VHat => "Vhat",
            StateBlock::V => "V",
        }
    }
}

/// Ordered block structure of a stacked state vector; every block has
/// dimension `n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateLayout {
    pub n: usize,
    pub blocks: Vec<StateBlock>,
}

impl StateLayout {
    pub fn dim(&self) -> usize {
        self.n * self.blocks.len()
    }

    pub fn offset(&self, block: StateBlock) -> Option<usize> {
        self.blocks
            .iter()
            .position(|&b| b == block)
            .map(|i| i * self.n)
    }

    /// Borrowed view of one block of a stacked vector.
    pub fn block<'a>(&self, x: &'a DVector<f64>, block: StateBlock) -> Option<&'a [f64]> {
        let off = self.offset(block)?;
        Some(&x.as_slice()[off..off + self.n])
    }

    pub fn voltage(&self, x: &DVector<f64>) -> DVector<f64> {
        let off = self.offset(StateBlock::V).expect("layout always carries V");
        DVector::from_column_slice(&x.as_slice()[off..off + self.n])
    }
}

/// Controller selection with its gains and, where needed, the communication
/// graph. Gains are per-bus diagonal vectors even where a design would use a
/// single scalar; operations that require uniformity check it explicitly.
#[derive(Debug, Clone, PartialEq)]
pub enum ControllerSpec {
    /// Voltage droop: proportional feedback on the local deviation from the
    /// nominal voltage. No communication.
    Droop { proportional: DVector<f64> },
    /// Distributed averaging with a dedicated integral bus: `integral` must
    /// be positive at exactly one bus and zero elsewhere.
    AvgI {
        proportional: DVector<f64>,
        integral: DVector<f64>,
        consensus_gain: f64,
        comm: CommGraph,
    },
    /// Distributed averaging with the all-bus voltage sum driving every
    /// integrator; needs all-to-all voltage information.
    AvgII {
        proportional: DVector<f64>,
        integral: f64,
        consensus_gain: f64,
        comm: CommGraph,
    },
    /// Fully distributed averaging with per-bus integral action and two
    /// consensus filters.
    AvgIII {
        proportional: DVector<f64>,
        integral: DVector<f64>,
        consensus_gain: f64,
        reference_consensus_gain: f64,
        comm: CommGraph,
    },
}

impl ControllerSpec {
    pub fn label(&self) -> &'static str {
        match self {
            ControllerSpec::Droop { .. } => "droop",
            ControllerSpec::AvgI { .. } => "averaging-I",
            ControllerSpec::AvgII { .. } => "averaging-II",
            ControllerSpec::AvgIII { .. } => "averaging-III",
        }
    }

    pub fn proportional(&self) -> &DVector<f64> {
        match self {
            ControllerSpec::Droop { proportional }
            | ControllerSpec::AvgI { proportional, .. }
            | ControllerSpec::AvgII { proportional, .. }
            | ControllerSpec::AvgIII { proportional, .. } => proportional,
        }
    }

    pub fn comm(&self) -> Option<&CommGraph> {
        match self {
            ControllerSpec::Droop { .. } => None,
            ControllerSpec::AvgI { comm, .. }
            | ControllerSpec::AvgII { comm, .. }
            | ControllerSpec::AvgIII { comm, .. } => Some(comm),
        }
    }

    /// State layout of the closed loop under this controller. The voltage
    /// block always comes last.
    pub fn layout(&self, n: usize) -> StateLayout {
        let blocks = match self {
            ControllerSpec::Droop { .. } => vec![StateBlock::V],
            ControllerSpec::AvgI { .. } | ControllerSpec::AvgII { .. } => {
                vec![StateBlock::VHat, StateBlock::V]
            }
            ControllerSpec::AvgIII { .. } => {
                vec![StateBlock::VBar, StateBlock::VHat, StateBlock::V]
            }
        };
        StateLayout { n, blocks }
    }

    /// Checks the gain-vector invariants against an `n`-bus grid.
    pub fn validate(&self, n: usize) -> Result<(), ControllerError> {
        check_positive_vector("proportional gain", self.proportional(), n)?;
        if let Some(comm) = self.comm() {
            if comm.vertex_count() != n {
                return Err(ControllerError::CommGridMismatch {
                    comm: comm.vertex_count(),
                    grid: n,
                });
            }
        }
        match self {
            ControllerSpec::Droop { .. } => Ok(()),
            ControllerSpec::AvgI {
                integral,
                consensus_gain,
                ..
            } => {
                check_nonnegative_vector("integral gain", integral, n)?;
                check_positive_scalar("consensus gain", *consensus_gain)?;
                let positive = integral.iter().filter(|&&g| g > 0.0).count();
                if positive != 1 {
                    return Err(ControllerError::LeaderGainCount { count: positive });
                }
                Ok(())
            }
            ControllerSpec::AvgII {
                integral,
                consensus_gain,
                comm,
                ..
            } => {
                check_positive_scalar("integral gain", *integral)?;
                check_positive_scalar("consensus gain", *consensus_gain)?;
                if !comm.is_all_to_all() {
                    return Err(ControllerError::IncompleteCommunication);
                }
                Ok(())
            }
            ControllerSpec::AvgIII {
                integral,
                consensus_gain,
                reference_consensus_gain,
                ..
            } => {
                check_nonnegative_vector("integral gain", integral, n)?;
                check_positive_scalar("consensus gain", *consensus_gain)?;
                check_positive_scalar("reference consensus gain", *reference_consensus_gain)?;
                Ok(())
            }
        }
    }
}

fn check_positive_vector(
    what: &'static str,
    v: &DVector<f64>,
    n: usize,
) -> Result<(), ControllerError> {
    if v.len() != n {
        return Err(ControllerError::GainLength {
            what,
            expected: n,
            found: v.len(),
        });
    }
    for (index, &value) in v.iter().enumerate() {
        if !(value > 0.0) {
            return Err(ControllerError::NonpositiveGain { what, index, value });
        }
    }
    Ok(())
}

fn check_nonnegative_vector(
    what: &'static str,
    v: &DVector<f64>,
    n: usize,
) -> Result<(), ControllerError> {
    if v.len() != n {
        return Err(ControllerError::GainLength {
            what,
            expected: n,
            found: v.len(),
        });
    }
    for (index, &value) in v.iter().enumerate() {
        if !(value >= 0.0) {
            return Err(ControllerError::NegativeGain { what, index, value });
        }
    }
    Ok(())
}

fn check_positive_scalar(what: &'static str, value: f64) -> Result<(), ControllerError> {
    if value > 0.0 {
        Ok(())
    } else {
        Err(ControllerError::NonpositiveScalar { what, value })
    }
}

/// Affine closed-loop system `ẋ = Ax + b` with the communicated couplings
/// split out.
///
/// `a_remote` holds exactly the entries of `A` that a bus can only evaluate
/// from another bus's transmitted data (neighbour terms of the consensus
/// filters); the simulator applies the communication delay to that part and
/// keeps `a - a_remote` instantaneous. The per-bus proportional laws and the
/// line-current physics never appear in `a_remote`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopSystem {
    pub layout: StateLayout,
    /// Full system matrix.
    pub a: DMatrix<f64>,
    /// Communicated (delayed) part of `a`.
    pub a_remote: DMatrix<f64>,
    /// Constant input for the injections the system was assembled with.
    pub b: DVector<f64>,
    /// Injection-independent part of `b`.
    pub b_static: DVector<f64>,
    /// Diagonal of E = diag(1/Cᵢ); used to rebuild `b` for new injections.
    pub elastance: DVector<f64>,
    /// Block pairs of `a` that carry communicated couplings.
    pub delayed_blocks: Vec<(StateBlock, StateBlock)>,
    /// Right eigenvector of the known zero eigenvalue, when the controller
    /// family guarantees one.
    pub structural_zero: Option<DVector<f64>>,
    /// Linear output map: `u = output_matrix · x + output_offset`.
    pub output_matrix: DMatrix<f64>,
    pub output_offset: DVector<f64>,
}

impl ClosedLoopSystem {
    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn bus_count(&self) -> usize {
        self.layout.n
    }

    /// Rebuilds the input vector for a new injection profile, leaving `A`
    /// untouched.
    pub fn input_vector(&self, i_inj: &DVector<f64>) -> Result<DVector<f64>, ControllerError> {
        let n = self.layout.n;
        if i_inj.len() != n {
            return Err(ControllerError::InjectionLength {
                expected: n,
                found: i_inj.len(),
            });
        }
        let mut b = self.b_static.clone();
        let off = self
            .layout
            .offset(StateBlock::V)
            .expect("voltage block present");
        for i in 0..n {
            b[off + i] += self.elastance[i] * i_inj[i];
        }
        Ok(b)
    }

    /// Controlled injections produced at state `x`.
    pub fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.output_matrix * x + &self.output_offset
    }
}

/// Assembles the affine closed-loop system for a grid, controller and
/// injection profile.
pub fn assemble_closed_loop(
    grid: &GridTopology,
    spec: &ControllerSpec,
    i_inj: &DVector<f64>,
) -> Result<ClosedLoopSystem, ControllerError> {
    let n = grid.bus_count();
    spec.validate(n)?;
    if i_inj.len() != n {
        return Err(ControllerError::InjectionLength {
            expected: n,
            found: i_inj.len(),
        });
    }
    let lap_grid = grid.conductance_laplacian()?;
    let elastance = grid.elastance();
    let v_nom = grid.nominal_voltage_vector();
    let k_p = spec.proportional();
    let layout = spec.layout(n);
    let dim = layout.dim();

    // -E(L_R + K^P) and E K^P appear in every voltage row.
    let mut physics = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            physics[(i, j)] = -elastance[i] * lap_grid[(i, j)];
        }
        physics[(i, i)] -= elastance[i] * k_p[i];
    }
    let feed = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            elastance[i] * k_p[i]
        } else {
            0.0
        }
    });

    let mut a = DMatrix::zeros(dim, dim);
    let mut a_remote = DMatrix::zeros(dim, dim);
    let mut b_static = DVector::zeros(dim);
    let mut output_matrix = DMatrix::zeros(n, dim);
    let mut output_offset = DVector::zeros(n);
    let mut delayed_blocks = Vec::new();
    let mut structural_zero = None;

    let v_off = layout.offset(StateBlock::V).expect("voltage block");

    match spec {
        ControllerSpec::Droop { proportional } => {
            a.view_mut((v_off, v_off), (n, n)).copy_from(&physics);
            for i in 0..n {
                b_static[v_off + i] = elastance[i] * proportional[i] * v_nom[i];
                output_matrix[(i, v_off + i)] = -proportional[i];
                output_offset[i] = proportional[i] * v_nom[i];
            }
        }
        ControllerSpec::AvgI {
            proportional,
            integral,
            consensus_gain,
            comm,
        } => {
            let lap_comm = comm.laplacian();
            let hat = layout.offset(StateBlock::VHat).expect("Vhat block");
            // V̂̇ = K^V(Vⁿᵒᵐ − V) − γ L_c (V̂ − V)
            let hat_hat = &lap_comm * (-*consensus_gain);
            let mut hat_v = &lap_comm * *consensus_gain;
            for i in 0..n {
                hat_v[(i, i)] -= integral[i];
            }
            a.view_mut((hat, hat), (n, n)).copy_from(&hat_hat);
            a.view_mut((hat, v_off), (n, n)).copy_from(&hat_v);
            a.view_mut((v_off, hat), (n, n)).copy_from(&feed);
            a.view_mut((v_off, v_off), (n, n)).copy_from(&physics);
            copy_off_diagonal(&mut a_remote, hat, hat, &hat_hat);
            copy_off_diagonal(&mut a_remote, hat, v_off, &hat_v);
            delayed_blocks.push((StateBlock::VHat, StateBlock::VHat));
            delayed_blocks.push((StateBlock::VHat, StateBlock::V));
            for i in 0..n {
                b_static[hat + i] = integral[i] * v_nom[i];
                output_matrix[(i, hat + i)] = proportional[i];
                output_matrix[(i, v_off + i)] = -proportional[i];
            }
        }
        ControllerSpec::AvgII {
            proportional,
            integral,
            consensus_gain,
            comm,
        } => {
            let lap_comm = comm.laplacian();
            let hat = layout.offset(StateBlock::VHat).expect("Vhat block");
            // V̂̇ = kᵛ·1ₙₓₙ(Vⁿᵒᵐ − V) − γ L_c (V̂ − V)
            let hat_hat = &lap_comm * (-*consensus_gain);
            let mut hat_v = &lap_comm * *consensus_gain;
            for i in 0..n {
                for j in 0..n {
                    hat_v[(i, j)] -= integral;
                }
            }
            a.view_mut((hat, hat), (n, n)).copy_from(&hat_hat);
            a.view_mut((hat, v_off), (n, n)).copy_from(&hat_v);
            a.view_mut((v_off, hat), (n, n)).copy_from(&feed);
            a.view_mut((v_off, v_off), (n, n)).copy_from(&physics);
            // Only the consensus filter exchanges controller variables; the
            // all-bus voltage sum is modelled as delay-free measurement
            // aggregation (delaying it destabilizes the documented gain sets).
            copy_off_diagonal(&mut a_remote, hat, hat, &hat_hat);
            copy_off_diagonal(&mut a_remote, hat, v_off, &(&lap_comm * *consensus_gain));
            delayed_blocks.push((StateBlock::VHat, StateBlock::VHat));
            delayed_blocks.push((StateBlock::VHat, StateBlock::V));
            let nominal_sum: f64 = v_nom.iter().sum();
            for i in 0..n {
                b_static[hat + i] = integral * nominal_sum;
                output_matrix[(i, hat + i)] = proportional[i];
                output_matrix[(i, v_off + i)] = -proportional[i];
            }
        }
        ControllerSpec::AvgIII {
            proportional,
            integral,
            consensus_gain,
            reference_consensus_gain,
            comm,
        } => {
            let lap_comm = comm.laplacian();
            let bar = layout.offset(StateBlock::VBar).expect("Vbar block");
            let hat = layout.offset(StateBlock::VHat).expect("Vhat block");
            // V̄̇ = −K^V(V − Vⁿᵒᵐ) − δ L_c V̄
            // V̂̇ = −γ L_c (V̂ + V̄ − V)
            let bar_bar = &lap_comm * (-*reference_consensus_gain);
            let hat_any = &lap_comm * (-*consensus_gain);
            let hat_v = &lap_comm * *consensus_gain;
            a.view_mut((bar, bar), (n, n)).copy_from(&bar_bar);
            for i in 0..n {
                a[(bar + i, v_off + i)] = -integral[i];
            }
            a.view_mut((hat, bar), (n, n)).copy_from(&hat_any);
            a.view_mut((hat, hat), (n, n)).copy_from(&hat_any);
            a.view_mut((hat, v_off), (n, n)).copy_from(&hat_v);
            a.view_mut((v_off, bar), (n, n)).copy_from(&feed);
            a.view_mut((v_off, hat), (n, n)).copy_from(&feed);
            a.view_mut((v_off, v_off), (n, n)).copy_from(&physics);
            copy_off_diagonal(&mut a_remote, bar, bar, &bar_bar);
            copy_off_diagonal(&mut a_remote, hat, bar, &hat_any);
            copy_off_diagonal(&mut a_remote, hat, hat, &hat_any);
            copy_off_diagonal(&mut a_remote, hat, v_off, &hat_v);
            delayed_blocks.push((StateBlock::VBar, StateBlock::VBar));
            delayed_blocks.push((StateBlock::VHat, StateBlock::VBar));
            delayed_blocks.push((StateBlock::VHat, StateBlock::VHat));
            delayed_blocks.push((StateBlock::VHat, StateBlock::V));
            for i in 0..n {
                b_static[bar + i] = integral[i] * v_nom[i];
                output_matrix[(i, bar + i)] = proportional[i];
                output_matrix[(i, hat + i)] = proportional[i];
                output_matrix[(i, v_off + i)] = -proportional[i];
            }
            let scale = 1.0 / (2.0 * n as f64).sqrt();
            let mut zero_mode = DVector::zeros(dim);
            for i in 0..n {
                zero_mode[bar + i] = scale;
                zero_mode[hat + i] = -scale;
            }
            structural_zero = Some(zero_mode);
        }
    }

    let mut system = ClosedLoopSystem {
        layout,
        a,
        a_remote,
        b: DVector::zeros(dim),
        b_static,
        elastance,
        delayed_blocks,
        structural_zero,
        output_matrix,
        output_offset,
    };
    system.b = system.input_vector(i_inj)?;
    Ok(system)
}

/// Copies the off-diagonal (inter-bus) entries of an n×n coupling block into
/// the remote part; diagonal entries stay local to their bus.
fn copy_off_diagonal(
    target: &mut DMatrix<f64>,
    row_off: usize,
    col_off: usize,
    block: &DMatrix<f64>,
) {
    let n = block.nrows();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                target[(row_off + i, col_off + j)] = block[(i, j)];
            }
        }
    }
}

/// Evaluates the controller law at a stacked state, returning the controlled
/// injections in amperes.
pub fn control_output(
    spec: &ControllerSpec,
    nominal_voltage: &DVector<f64>,
    x: &DVector<f64>,
) -> Result<DVector<f64>, ControllerError> {
    let n = nominal_voltage.len();
    let layout = spec.layout(n);
    if x.len() != layout.dim() {
        return Err(ControllerError::StateDimension {
            expected: layout.dim(),
            found: x.len(),
            blocks: layout.blocks.len(),
            n,
        });
    }
    let k_p = spec.proportional();
    let v = layout.block(x, StateBlock::V).expect("voltage block");
    let u = match spec {
        ControllerSpec::Droop { .. } => {
            DVector::from_fn(n, |i, _| k_p[i] * (nominal_voltage[i] - v[i]))
        }
        ControllerSpec::AvgI { .. } | ControllerSpec::AvgII { .. } => {
            let v_hat = layout.block(x, StateBlock::VHat).expect("Vhat block");
            DVector::from_fn(n, |i, _| k_p[i] * (v_hat[i] - v[i]))
        }
        ControllerSpec::AvgIII { .. } => {
            let v_hat = layout.block(x, StateBlock::VHat).expect("Vhat block");
            let v_bar = layout.block(x, StateBlock::VBar).expect("Vbar block");
            DVector::from_fn(n, |i, _| -k_p[i] * (v[i] - v_hat[i] - v_bar[i]))
        }
    };
    Ok(u)
}

/// Cost-optimal stationary dispatch: the minimizer of ½·Σ fᵢuᵢ² subject to
/// network balance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DispatchTarget {
    /// Lagrange multiplier of the balance constraint.
    pub mu: f64,
    /// Optimal controlled injections, `u* = mu · F⁻¹ · 1`.
    pub u_star: Vec<f64>,
    /// Diagonal cost weights the target was computed for.
    pub weights: Vec<f64>,
}

impl DispatchTarget {
    pub fn u_star_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.u_star)
    }
}

/// Solves the weighted quadratic dispatch problem in closed form:
/// `mu = −(Σ Iᵢ)/(Σ 1/fᵢ)` and `u* = mu·F⁻¹·1`, so that Σ(uᵢ* + Iᵢ) = 0.
pub fn optimal_dispatch(
    i_inj: &DVector<f64>,
    weights: &DVector<f64>,
) -> Result<DispatchTarget, ControllerError> {
    if weights.len() != i_inj.len() {
        return Err(ControllerError::GainLength {
            what: "dispatch weights",
            expected: i_inj.len(),
            found: weights.len(),
        });
    }
    for (index, &value) in weights.iter().enumerate() {
        if !(value > 0.0) {
            return Err(ControllerError::NonpositiveGain {
                what: "dispatch weights",
                index,
                value,
            });
        }
    }
    let inverse_sum: f64 = weights.iter().map(|f| 1.0 / f).sum();
    let mu = -i_inj.sum() / inverse_sum;
    let u_star: Vec<f64> = weights.iter().map(|f| mu / f).collect();
    let balance: f64 = u_star.iter().zip(i_inj.iter()).map(|(u, i)| u + i).sum();
    let scale = i_inj.amax().max(1.0);
    debug_assert!(
        balance.abs() <= tol::BALANCE_REL * scale,
        "dispatch balance {balance} out of tolerance"
    );
    Ok(DispatchTarget {
        mu,
        u_star,
        weights: weights.iter().copied().collect(),
    })
}

/// Weighted voltage-offset residual Σ gᵢ(Vᵢ − Vᵢⁿᵒᵐ).
///
/// Zero exactly when the weighted quadratic voltage cost is minimized over
/// the family of equilibria that differ by a uniform offset.
pub fn voltage_offset_residual(
    voltage: &DVector<f64>,
    nominal_voltage: &DVector<f64>,
    weights: &DVector<f64>,
) -> f64 {
    assert_eq!(voltage.len(), nominal_voltage.len(), "voltage dimensions");
    assert_eq!(voltage.len(), weights.len(), "weight dimension");
    voltage
        .iter()
        .zip(nominal_voltage.iter())
        .zip(weights.iter())
        .map(|((v, v_nom), g)| g * (v - v_nom))
        .sum()
}
