//! Time-domain simulation and equilibrium solving.
//!
//! The integrator is fixed-step classical RK4. A constant communication
//! delay is handled by the method of steps: the step size must divide the
//! delay, delayed samples are read at exact grid offsets from a history ring
//! buffer, and the communicated coupling `A_remote · x(t−τ)` is held constant
//! over each step. With no delay the full matrix is integrated directly, so
//! the delay-free path is classical RK4 on `ẋ = Ax + b`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::controllers::{ClosedLoopSystem, ControllerError, StateBlock, StateLayout};
use crate::grid::GridTopology;
use crate::tol;

#[derive(Debug, Clone, Error)]
pub enum SimError {
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error("step size {dt} must be positive and finite")]
    BadStepSize { dt: f64 },
    #[error("end time {t_end} must be positive and finite")]
    BadEndTime { t_end: f64 },
    #[error("delay {tau} is not an integer multiple of the step size {dt}")]
    DelayMisaligned { tau: f64, dt: f64 },
    #[error("event {index} at t = {t} is outside [0, {t_end}] or out of order")]
    BadEvent { index: usize, t: f64, t_end: f64 },
    #[error("event {index} has {found} injections, expected {expected}")]
    EventLength {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("initial voltage vector has {found} entries, expected {expected}")]
    InitialStateLength { expected: usize, found: usize },
    #[error("state diverged at step {step} (t = {t:.6} s): ‖x‖∞ = {norm:.3e}")]
    Diverged { step: usize, t: f64, norm: f64 },
    #[error("system matrix is singular but no structural zero mode was declared")]
    UnexpectedSingularity,
    #[error("rank deficiency {found} exceeds the declared structural zero modes ({expected})")]
    UnexpectedRankDeficiency { expected: usize, found: usize },
    #[error("equilibrium residual {residual:.3e} exceeds {limit:.3e}")]
    ResidualTooLarge { residual: f64, limit: f64 },
}

/// A step change of the uncontrolled injections at a given time.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionEvent {
    pub t: f64,
    pub i_inj: DVector<f64>,
}

/// Complete description of one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    /// Injections active before the first event; also defines the default
    /// initial state (delay-free equilibrium).
    pub i_inj_initial: DVector<f64>,
    /// Strictly increasing injection steps within [0, t_end].
    pub events: Vec<InjectionEvent>,
    pub t_end: f64,
    pub dt: f64,
    /// Constant communication delay in seconds (0 disables the history path).
    pub tau: f64,
    /// Initial bus voltages; internal controller states start at
    /// `V̂(0) = V(0)`, `V̄(0) = 0`. Defaults to the delay-free equilibrium
    /// under the initial injections.
    pub v0: Option<DVector<f64>>,
    /// Record every `record_stride`-th sample in the trajectory body. The
    /// final 5% of samples are always kept at full step resolution for
    /// steady-state metrics.
    pub record_stride: usize,
}

impl SimScenario {
    pub fn new(i_inj_initial: DVector<f64>, t_end: f64, dt: f64, tau: f64) -> Self {
        Self {
            i_inj_initial,
            events: Vec::new(),
            t_end,
            dt,
            tau,
            v0: None,
            record_stride: 1,
        }
    }

    pub fn with_event(mut self, t: f64, i_inj: DVector<f64>) -> Self {
        self.events.push(InjectionEvent { t, i_inj });
        self
    }

    pub fn with_initial_voltage(mut self, v0: DVector<f64>) -> Self {
        self.v0 = Some(v0);
        self
    }

    pub fn with_record_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride.max(1);
        self
    }

    pub fn validate(&self, n: usize) -> Result<(), SimError> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(SimError::BadStepSize { dt: self.dt });
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(SimError::BadEndTime { t_end: self.t_end });
        }
        if self.i_inj_initial.len() != n {
            return Err(SimError::EventLength {
                index: 0,
                expected: n,
                found: self.i_inj_initial.len(),
            });
        }
        if self.tau > 0.0 {
            let ratio = self.tau / self.dt;
            let misalignment = (ratio - ratio.round()).abs() * self.dt;
            if ratio.round() < 1.0 || misalignment > tol::DELAY_ALIGNMENT_REL * self.tau {
                return Err(SimError::DelayMisaligned {
                    tau: self.tau,
                    dt: self.dt,
                });
            }
        }
        let mut previous = -f64::INFINITY;
        for (index, event) in self.events.iter().enumerate() {
            if !(event.t >= 0.0) || event.t > self.t_end || event.t <= previous {
                return Err(SimError::BadEvent {
                    index,
                    t: event.t,
                    t_end: self.t_end,
                });
            }
            if event.i_inj.len() != n {
                return Err(SimError::EventLength {
                    index,
                    expected: n,
                    found: event.i_inj.len(),
                });
            }
            previous = event.t;
        }
        if let Some(v0) = &self.v0 {
            if v0.len() != n {
                return Err(SimError::InitialStateLength {
                    expected: n,
                    found: v0.len(),
                });
            }
        }
        Ok(())
    }

    /// Injections active after the final event.
    pub fn final_injections(&self) -> &DVector<f64> {
        self.events
            .last()
            .map(|e| &e.i_inj)
            .unwrap_or(&self.i_inj_initial)
    }
}

/// Simulated time series. The body is recorded every `stride` steps; the
/// tail window keeps the final 5% of samples at full step resolution.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub layout: StateLayout,
    /// Body sample spacing in seconds (stride × dt).
    pub sample_dt: f64,
    pub times: Vec<f64>,
    /// One body sample per row, columns ordered by the state layout.
    pub states: DMatrix<f64>,
    /// Controlled injections at every body sample.
    pub u: DMatrix<f64>,
    /// Full-resolution tail window (final 5% of integration samples).
    pub tail: TailWindow,
}

/// Full-resolution slice of the end of a run.
#[derive(Debug, Clone)]
pub struct TailWindow {
    pub times: Vec<f64>,
    pub states: DMatrix<f64>,
    pub u: DMatrix<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> DVector<f64> {
        DVector::from_row_slice(
            self.tail
                .states
                .row(self.tail.states.nrows() - 1)
                .transpose()
                .as_slice(),
        )
    }
}

/// Integrates the closed loop over a scenario.
///
/// The remote coupling reads the state `tau` seconds back (held at `x(0)` for
/// t < 0) and is frozen across the four stages of each step; `b` is rebuilt
/// at every injection event. Aborts with diagnostics if the state leaves
/// `tol::DIVERGENCE_FACTOR` times its initial magnitude or turns non-finite.
pub fn simulate(system: &ClosedLoopSystem, scenario: &SimScenario) -> Result<Trajectory, SimError> {
    let n = system.bus_count();
    scenario.validate(n)?;
    let dim = system.dim();
    let dt = scenario.dt;
    let steps = (scenario.t_end / dt).round() as usize;
    let delay_steps = if scenario.tau > 0.0 {
        (scenario.tau / dt).round() as usize
    } else {
        0
    };

    // Event schedule as step indices paired with rebuilt input vectors.
    let mut inputs: Vec<(usize, DVector<f64>)> = Vec::with_capacity(scenario.events.len() + 1);
    inputs.push((0, system.input_vector(&scenario.i_inj_initial)?));
    for event in &scenario.events {
        let step = (event.t / dt).round();
        let step = if (step * dt - event.t).abs() <= 1e-9 * event.t.max(dt) {
            step as usize
        } else {
            (event.t / dt).ceil() as usize
        };
        inputs.push((step, system.input_vector(&event.i_inj)?));
    }

    let x0 = match &scenario.v0 {
        Some(v0) => initial_state_from_voltage(&system.layout, v0),
        None => {
            let b0 = &inputs[0].1;
            solve_equilibrium_for_input(system, b0, None)?
        }
    };

    let a_local = &system.a - &system.a_remote;
    let guard = tol::DIVERGENCE_FACTOR * x0.amax().max(1.0);

    let stride = scenario.record_stride.max(1);
    let tail_start = steps - steps / 20; // final 5% of integration steps
    let body_len = steps / stride + 1;
    let tail_len = steps - tail_start + 1;
    let mut body_times = Vec::with_capacity(body_len);
    let mut body_states = DMatrix::zeros(body_len, dim);
    let mut body_u = DMatrix::zeros(body_len, n);
    let mut tail_times = Vec::with_capacity(tail_len);
    let mut tail_states = DMatrix::zeros(tail_len, dim);
    let mut tail_u = DMatrix::zeros(tail_len, n);

    let mut history: Vec<DVector<f64>> = if delay_steps > 0 {
        vec![x0.clone(); delay_steps + 1]
    } else {
        Vec::new()
    };
    let mut head = 0usize; // history slot holding the newest sample

    let mut x = x0;
    let mut input_idx = 0usize;
    let mut body_row = 0usize;
    let mut tail_row = 0usize;

    let mut record =
        |k: usize, x: &DVector<f64>, body_row: &mut usize, tail_row: &mut usize| {
            let t = k as f64 * dt;
            let u = system.output(x);
            if k % stride == 0 {
                body_times.push(t);
                for c in 0..dim {
                    body_states[(*body_row, c)] = x[c];
                }
                for c in 0..n {
                    body_u[(*body_row, c)] = u[c];
                }
                *body_row += 1;
            }
            if k >= tail_start {
                tail_times.push(t);
                for c in 0..dim {
                    tail_states[(*tail_row, c)] = x[c];
                }
                for c in 0..n {
                    tail_u[(*tail_row, c)] = u[c];
                }
                *tail_row += 1;
            }
        };

    record(0, &x, &mut body_row, &mut tail_row);

    let half = dt / 2.0;
    let sixth = dt / 6.0;
    for k in 0..steps {
        while input_idx + 1 < inputs.len() && inputs[input_idx + 1].0 <= k {
            input_idx += 1;
        }
        let b = &inputs[input_idx].1;

        if delay_steps == 0 {
            // Classical RK4 on the full matrix.
            let k1 = &system.a * &x + b;
            let k2 = &system.a * (&x + &k1 * half) + b;
            let k3 = &system.a * (&x + &k2 * half) + b;
            let k4 = &system.a * (&x + &k3 * dt) + b;
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * sixth;
        } else {
            let delayed_slot = (head + 1) % (delay_steps + 1); // oldest = t − τ
            let z = &system.a_remote * &history[delayed_slot] + b;
            let k1 = &a_local * &x + &z;
            let k2 = &a_local * (&x + &k1 * half) + &z;
            let k3 = &a_local * (&x + &k2 * half) + &z;
            let k4 = &a_local * (&x + &k3 * dt) + &z;
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * sixth;
            head = delayed_slot;
            history[head].copy_from(&x);
        }

        let norm = x.amax();
        if !norm.is_finite() || norm > guard {
            return Err(SimError::Diverged {
                step: k + 1,
                t: (k + 1) as f64 * dt,
                norm,
            });
        }
        record(k + 1, &x, &mut body_row, &mut tail_row);
    }

    Ok(Trajectory {
        layout: system.layout.clone(),
        sample_dt: dt * stride as f64,
        times: body_times,
        states: body_states,
        u: body_u,
        tail: TailWindow {
            times: tail_times,
            states: tail_states,
            u: tail_u,
        },
    })
}

/// Builds the full initial state from a voltage vector using the controller
/// initialization convention `V̂(0) = V(0)`, `V̄(0) = 0`.
pub fn initial_state_from_voltage(layout: &StateLayout, v0: &DVector<f64>) -> DVector<f64> {
    let mut x = DVector::zeros(layout.dim());
    let n = layout.n;
    let v_off = layout.offset(StateBlock::V).expect("voltage block");
    for i in 0..n {
        x[v_off + i] = v0[i];
    }
    if let Some(hat) = layout.offset(StateBlock::VHat) {
        for i in 0..n {
            x[hat + i] = v0[i];
        }
    }
    x
}

/// Solves the stationary state of the closed loop.
///
/// With a nonsingular `A` this is `−A⁻¹b`. When the system declares a
/// structural zero mode, the minimum-norm solution of `Ax = −b` is computed
/// instead and the free mode is fixed by the anchor: the returned state
/// matches the anchor's Σ V̂ (the quantity conserved by the delay-free
/// dynamics), so a trajectory started at the anchor converges to exactly this
/// equilibrium. Without an anchor the V̂ block is centered on the voltage
/// block, matching the `V̂(0) = V(0)` initialization convention.
pub fn solve_equilibrium(
    system: &ClosedLoopSystem,
    anchor: Option<&DVector<f64>>,
) -> Result<DVector<f64>, SimError> {
    solve_equilibrium_for_input(system, &system.b, anchor)
}

/// As [`solve_equilibrium`] but for an explicit input vector.
pub fn solve_equilibrium_for_input(
    system: &ClosedLoopSystem,
    b: &DVector<f64>,
    anchor: Option<&DVector<f64>>,
) -> Result<DVector<f64>, SimError> {
    let dim = system.dim();
    let n = system.bus_count();
    let x = match &system.structural_zero {
        None => system
            .a
            .clone()
            .lu()
            .solve(&(-b))
            .ok_or(SimError::UnexpectedSingularity)?,
        Some(zero_mode) => {
            let svd = system.a.clone().svd(true, true);
            let sigma_max = svd.singular_values.max();
            let rank_tol = tol::ZERO_EIG_REL * sigma_max;
            let deficiency = svd.singular_values.iter().filter(|&&s| s <= rank_tol).count();
            if deficiency != 1 {
                return Err(SimError::UnexpectedRankDeficiency {
                    expected: 1,
                    found: deficiency,
                });
            }
            let min_norm = svd
                .solve(&(-b), rank_tol)
                .map_err(|_| SimError::UnexpectedSingularity)?;
            // Fix the free mode via the conserved quantity Σ V̂.
            let hat = system
                .layout
                .offset(StateBlock::VHat)
                .expect("structural zero implies a V̂ block");
            let hat_sum: f64 = min_norm.rows(hat, n).sum();
            let target_sum: f64 = match anchor {
                Some(state) => state.rows(hat, n).sum(),
                None => {
                    let v_off = system.layout.offset(StateBlock::V).expect("voltage block");
                    min_norm.rows(v_off, n).sum()
                }
            };
            // The zero mode moves Σ V̂ by −s·n per unit step s along [1,−1,0]/√(2n).
            let per_unit = zero_mode.rows(hat, n).sum();
            let s = (target_sum - hat_sum) / per_unit;
            min_norm + zero_mode * s
        }
    };
    let residual = (&system.a * &x + b).norm();
    let limit = tol::EQUILIBRIUM_RESIDUAL_REL * b.norm().max(f64::MIN_POSITIVE);
    if residual > limit {
        return Err(SimError::ResidualTooLarge { residual, limit });
    }
    debug_assert_eq!(x.len(), dim);
    Ok(x)
}

/// Steady-state quantities evaluated over the full-resolution tail window.
#[derive(Debug, Clone, Serialize)]
pub struct SteadyStateMetrics {
    /// Number of tail samples the averages were taken over.
    pub tail_samples: usize,
    /// Time span of the tail window in seconds.
    pub tail_span: (f64, f64),
    /// Mean controlled injection per bus (A).
    pub u_mean: Vec<f64>,
    /// Cost-optimal dispatch for the final injections.
    pub u_star: Vec<f64>,
    /// ‖mean u − u*‖∞ (A).
    pub u_distance_inf: f64,
    /// Weighted voltage-offset residual Σ gᵢ(Vᵢ − Vᵢⁿᵒᵐ) of the mean tail voltage.
    pub voltage_offset_residual: f64,
    /// Largest |Vᵢ − Vⱼ| over the tail means (V).
    pub max_pairwise_voltage_spread: f64,
    /// Σ (mean uᵢ + Iᵢ) over the final injections (A).
    pub injection_balance: f64,
    /// ‖mean V − Vⁿᵒᵐ‖∞ (V).
    pub voltage_deviation_inf: f64,
}

/// Evaluates dispatch optimality, voltage offset and balance over the tail of
/// a run.
pub fn steady_state_metrics(
    trajectory: &Trajectory,
    grid: &GridTopology,
    i_inj_final: &DVector<f64>,
    dispatch_weights: &DVector<f64>,
    voltage_weights: &DVector<f64>,
) -> Result<SteadyStateMetrics, SimError> {
    let n = trajectory.layout.n;
    let tail = &trajectory.tail;
    let samples = tail.times.len();
    assert!(samples > 0, "trajectory tail is empty");

    let mut u_mean = DVector::zeros(n);
    for r in 0..samples {
        for c in 0..n {
            u_mean[c] += tail.u[(r, c)];
        }
    }
    u_mean /= samples as f64;

    let v_off = trajectory
        .layout
        .offset(StateBlock::V)
        .expect("voltage block");
    let mut v_mean = DVector::zeros(n);
    for r in 0..samples {
        for c in 0..n {
            v_mean[c] += tail.states[(r, v_off + c)];
        }
    }
    v_mean /= samples as f64;

    let dispatch = crate::controllers::optimal_dispatch(i_inj_final, dispatch_weights)?;
    let u_star = dispatch.u_star_vector();
    let u_distance_inf = (&u_mean - &u_star).amax();

    let v_nom = grid.nominal_voltage_vector();
    let residual = crate::controllers::voltage_offset_residual(&v_mean, &v_nom, voltage_weights);

    let mut spread: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            spread = spread.max((v_mean[i] - v_mean[j]).abs());
        }
    }

    let injection_balance = u_mean.sum() + i_inj_final.sum();
    let voltage_deviation_inf = (&v_mean - &v_nom).amax();

    Ok(SteadyStateMetrics {
        tail_samples: samples,
        tail_span: (tail.times[0], tail.times[samples - 1]),
        u_mean: u_mean.iter().copied().collect(),
        u_star: u_star.iter().copied().collect(),
        u_distance_inf,
        voltage_offset_residual: residual,
        max_pairwise_voltage_spread: spread,
        injection_balance,
        voltage_deviation_inf,
    })
}

/// Writes a trajectory as CSV: `t,V_1..V_n,u_1..u_n[,Vhat_*][,Vbar_*]`,
/// scientific notation with 9 significant digits, one row per body sample
/// (optionally further strided).
pub fn write_trajectory_csv<W: std::io::Write>(
    trajectory: &Trajectory,
    writer: &mut W,
    stride: usize,
) -> std::io::Result<()> {
    let stride = stride.max(1);
    let n = trajectory.layout.n;
    let mut header = String::from("t");
    for i in 1..=n {
        header.push_str(&format!(",V_{i}"));
    }
    for i in 1..=n {
        header.push_str(&format!(",u_{i}"));
    }
    if trajectory.layout.offset(StateBlock::VHat).is_some() {
        for i in 1..=n {
            header.push_str(&format!(",Vhat_{i}"));
        }
    }
    if trajectory.layout.offset(StateBlock::VBar).is_some() {
        for i in 1..=n {
            header.push_str(&format!(",Vbar_{i}"));
        }
    }
    writeln!(writer, "{header}")?;

    let v_off = trajectory
        .layout
        .offset(StateBlock::V)
        .expect("voltage block");
    let hat_off = trajectory.layout.offset(StateBlock::VHat);
    let bar_off = trajectory.layout.offset(StateBlock::VBar);
    for row in (0..trajectory.times.len()).step_by(stride) {
        let mut line = format!("{:.8e}", trajectory.times[row]);
        for c in 0..n {
            line.push_str(&format!(",{:.8e}", trajectory.states[(row, v_off + c)]));
        }
        for c in 0..n {
            line.push_str(&format!(",{:.8e}", trajectory.u[(row, c)]));
        }
        if let Some(off) = hat_off {
            for c in 0..n {
                line.push_str(&format!(",{:.8e}", trajectory.states[(row, off + c)]));
            }
        }
        if let Some(off) = bar_off {
            for c in 0..n {
                line.push_str(&format!(",{:.8e}", trajectory.states[(row, off + c)]));
            }
        }
        writeln!(writer, "{line}")?;
    }
    Ok(())
}
