//! Scenario execution: assemble, analyze, simulate, write artifacts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mtdc_core::analysis::{self, AnalysisError, StabilityReport};
use mtdc_core::controllers::assemble_closed_loop;
use mtdc_core::random::{self, Family};
use mtdc_core::sim::{simulate, steady_state_metrics, write_trajectory_csv};
use mtdc_core::{hurwitz_verdict, solve_equilibrium, voltage_difference_bound, SpectrumVerdict};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;

/// Command-line overrides applied on top of the config's output section.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub stride: Option<usize>,
}

pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub report: StabilityReport,
    pub metrics: Option<mtdc_core::SteadyStateMetrics>,
}

/// Builds the combined stability report (certificate route plus spectrum).
pub fn stability_report(
    config: &RunConfig,
    grid: &mtdc_core::GridTopology,
    spec: &mtdc_core::ControllerSpec,
) -> Result<StabilityReport> {
    let system = assemble_closed_loop(grid, spec, &config.sim_scenario()?.i_inj_initial)?;
    let spectrum = hurwitz_verdict(&system)?;
    let (certificate, inapplicable) = match analysis::certify(grid, spec) {
        Ok(report) => (Some(report), None),
        Err(AnalysisError::Inapplicable(reason)) => (None, Some(reason)),
        Err(other) => return Err(other.into()),
    };
    Ok(StabilityReport {
        certificate,
        certificate_inapplicable: inapplicable,
        spectrum: Some(spectrum),
    })
}

fn resolve_out_dir(config: &RunConfig, overrides: &Overrides) -> PathBuf {
    overrides
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.output.dir))
}

fn write_report(out_dir: &Path, report: &StabilityReport) -> Result<()> {
    fs::write(
        out_dir.join("stability_report.txt"),
        format!("{report}"),
    )?;
    fs::write(
        out_dir.join("stability_report.json"),
        serde_json::to_string_pretty(report)?,
    )?;
    Ok(())
}

/// `analyze`: certificate and spectrum artifacts only, no simulation.
pub fn analyze(config: &RunConfig, overrides: &Overrides) -> Result<RunArtifacts> {
    let grid = config.grid_topology()?;
    let spec = config.controller_spec(&grid)?;
    let report = stability_report(config, &grid, &spec)?;
    let out_dir = resolve_out_dir(config, overrides);
    fs::create_dir_all(&out_dir)
        .with_context(|| format!("cannot create output directory {}", out_dir.display()))?;
    write_report(&out_dir, &report)?;
    println!("{report}");
    Ok(RunArtifacts {
        out_dir,
        report,
        metrics: None,
    })
}

/// `run`: analysis plus simulation, trajectory CSV and steady-state metrics.
pub fn run(config: &RunConfig, overrides: &Overrides) -> Result<RunArtifacts> {
    let grid = config.grid_topology()?;
    let spec = config.controller_spec(&grid)?;
    let scenario = config.sim_scenario()?;
    let system = assemble_closed_loop(&grid, &spec, &scenario.i_inj_initial)?;

    let report = stability_report(config, &grid, &spec)?;
    let out_dir = resolve_out_dir(config, overrides);
    fs::create_dir_all(&out_dir)
        .with_context(|| format!("cannot create output directory {}", out_dir.display()))?;
    if config.output.stability {
        write_report(&out_dir, &report)?;
    }

    if let Some(spectrum) = &report.spectrum {
        if spectrum.verdict == SpectrumVerdict::Unstable {
            eprintln!(
                "warning: spectrum verdict is unstable (margin {:.3e}); the run may diverge",
                spectrum.margin
            );
        }
    }

    let trajectory = simulate(&system, &scenario).map_err(|err| {
        anyhow::anyhow!(err).context(format!(
            "simulation failed (spectrum verdict: {:?})",
            report.spectrum.as_ref().map(|s| s.verdict)
        ))
    })?;

    if config.output.trajectory {
        let stride = overrides.stride.unwrap_or(config.output.stride);
        let mut file = std::io::BufWriter::new(fs::File::create(out_dir.join("trajectory.csv"))?);
        write_trajectory_csv(&trajectory, &mut file, stride)?;
        file.flush()?;
    }

    let metrics = steady_state_metrics(
        &trajectory,
        &grid,
        scenario.final_injections(),
        &config.dispatch_weights(&grid)?,
        &config.voltage_weights(&grid),
    )?;
    if config.output.metrics {
        fs::write(
            out_dir.join("metrics.json"),
            serde_json::to_string_pretty(&metrics)?,
        )?;
    }

    let i_tot = scenario.final_injections() + metrics_u_mean(&metrics);
    let bound = voltage_difference_bound(&grid, &i_tot)?;
    println!(
        "run complete: {} samples, tail u mean = {:?} A, ‖u − u*‖∞ = {:.3e} A, \
         voltage offset residual = {:.3e} V, balance = {:.3e} A, spread {:.3e} V (bound {:.3e} V)",
        trajectory.len(),
        metrics.u_mean.iter().map(|u| (u * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
        metrics.u_distance_inf,
        metrics.voltage_offset_residual,
        metrics.injection_balance,
        metrics.max_pairwise_voltage_spread,
        bound,
    );

    Ok(RunArtifacts {
        out_dir,
        report,
        metrics: Some(metrics),
    })
}

fn metrics_u_mean(metrics: &mtdc_core::SteadyStateMetrics) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_column_slice(&metrics.u_mean)
}

/// `sweep`: fan out independent runs over one numeric config parameter.
pub fn sweep(
    config: &RunConfig,
    overrides: &Overrides,
    param: &str,
    values: &[f64],
) -> Result<()> {
    use rayon::prelude::*;
    if values.is_empty() {
        bail!("sweep needs at least one value");
    }
    let base_out = resolve_out_dir(config, overrides);
    let runs: Vec<(f64, RunConfig, PathBuf)> = values
        .iter()
        .map(|&value| {
            let mut altered = config.clone();
            set_param(&mut altered, param, value)?;
            let out = base_out.join(format!("{}={}", param.replace('.', "_"), value));
            Ok((value, altered, out))
        })
        .collect::<Result<_>>()?;

    let results: Vec<(f64, Result<RunArtifacts>)> = runs
        .into_par_iter()
        .map(|(value, altered, out)| {
            let overrides = Overrides {
                out_dir: Some(out),
                stride: overrides.stride,
            };
            (value, run(&altered, &overrides))
        })
        .collect();

    let mut failures = 0;
    for (value, result) in results {
        match result {
            Ok(artifacts) => println!("{param} = {value}: ok ({})", artifacts.out_dir.display()),
            Err(err) => {
                failures += 1;
                eprintln!("{param} = {value}: FAILED: {err:#}");
            }
        }
    }
    if failures > 0 {
        bail!("{failures} sweep run(s) failed");
    }
    Ok(())
}

fn set_param(config: &mut RunConfig, param: &str, value: f64) -> Result<()> {
    use crate::config::ScalarOrPerBus;
    match param {
        "controller.k_p" => config.controller.k_p = ScalarOrPerBus::Scalar(value),
        "controller.k_v" => config.controller.k_v = Some(ScalarOrPerBus::Scalar(value)),
        "controller.gamma" => config.controller.gamma = Some(value),
        "controller.delta" => config.controller.delta = Some(value),
        "scenario.tau" => config.scenario.tau = value,
        "scenario.dt" => config.scenario.dt = value,
        "scenario.t_end" => config.scenario.t_end = value,
        other => bail!(
            "unknown sweep parameter {other:?} (controller.k_p, controller.k_v, \
             controller.gamma, controller.delta, scenario.tau, scenario.dt, scenario.t_end)"
        ),
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct SoundnessSummary {
    pub seed: u64,
    pub instances_per_family: usize,
    pub certified: usize,
    pub inconclusive: usize,
    pub counterexamples: usize,
    pub bound_violations: usize,
}

/// `soundness`: randomized certificate-soundness and voltage-bound suite.
///
/// Draws seeded random networks and controllers, and checks that every
/// certified instance has a Hurwitz spectrum and that no computed equilibrium
/// violates the stationary voltage-spread bound. Returns an error if any
/// counterexample is found.
pub fn soundness(seed: u64, count: usize) -> Result<SoundnessSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = SoundnessSummary {
        seed,
        instances_per_family: count,
        certified: 0,
        inconclusive: 0,
        counterexamples: 0,
        bound_violations: 0,
    };
    for family in [Family::AvgI, Family::AvgII, Family::AvgIII] {
        for _ in 0..count {
            let n = rng.random_range(3..=8);
            let grid = random::random_connected_grid(&mut rng, n);
            let spec = random::random_spec(&mut rng, family, &grid);
            let i_inj = random::random_injections(&mut rng, n);
            let certificate = analysis::certify(&grid, &spec)?;
            let system = assemble_closed_loop(&grid, &spec, &i_inj)?;
            let spectrum = hurwitz_verdict(&system)?;
            let stable = matches!(
                spectrum.verdict,
                SpectrumVerdict::Hurwitz | SpectrumVerdict::HurwitzExcludingStructuralZero
            );
            match certificate.verdict {
                mtdc_core::CertificateVerdict::CertifiedStable => {
                    summary.certified += 1;
                    if !stable {
                        summary.counterexamples += 1;
                        eprintln!(
                            "counterexample: {} certified but spectrum margin {:.3e}",
                            family.label(),
                            spectrum.margin
                        );
                    }
                }
                mtdc_core::CertificateVerdict::Inconclusive => summary.inconclusive += 1,
            }
            if stable {
                let equilibrium = solve_equilibrium(&system, None)?;
                let v = system.layout.voltage(&equilibrium);
                let u = system.output(&equilibrium);
                let bound = voltage_difference_bound(&grid, &(&u + &i_inj))?;
                let mut spread: f64 = 0.0;
                for i in 0..n {
                    for j in (i + 1)..n {
                        spread = spread.max((v[i] - v[j]).abs());
                    }
                }
                if spread > bound * (1.0 + 1e-9) {
                    summary.bound_violations += 1;
                    eprintln!(
                        "voltage bound violated: spread {spread:.3e} V > bound {bound:.3e} V"
                    );
                }
            }
        }
    }
    println!(
        "soundness: seed {seed}, {count} instances per family — {} certified, {} inconclusive, \
         {} counterexamples, {} bound violations",
        summary.certified, summary.inconclusive, summary.counterexamples, summary.bound_violations
    );
    if summary.counterexamples > 0 || summary.bound_violations > 0 {
        bail!(
            "{} certificate counterexample(s), {} bound violation(s)",
            summary.counterexamples,
            summary.bound_violations
        );
    }
    Ok(summary)
}
