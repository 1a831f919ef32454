//! Run configuration: a single TOML file fully specifies a run.
//!
//! Bus indices in config files are 1-based. Scalar gains are broadcast to
//! every bus. See the repository README for the full grammar and shipped
//! examples.

use anyhow::{bail, Context, Result};
use mtdc_core::controllers::ControllerSpec;
use mtdc_core::grid::{CommEdge, CommGraph, GridTopology, Line};
use mtdc_core::sim::SimScenario;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSection,
    pub controller: ControllerSection,
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrPerBus {
    Scalar(f64),
    PerBus(Vec<f64>),
}

impl ScalarOrPerBus {
    fn broadcast(&self, n: usize, what: &str) -> Result<DVector<f64>> {
        match self {
            ScalarOrPerBus::Scalar(v) => Ok(DVector::from_element(n, *v)),
            ScalarOrPerBus::PerBus(values) => {
                if values.len() != n {
                    bail!("{what} lists {} values for {n} buses", values.len());
                }
                Ok(DVector::from_column_slice(values))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Per-bus capacitance in farads.
    pub capacitance: Vec<f64>,
    /// Nominal voltage in volts, scalar or per bus.
    pub nominal_voltage: ScalarOrPerBus,
    pub lines: Vec<LineEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineEntry {
    /// 1-based bus index.
    pub i: usize,
    /// 1-based bus index.
    pub j: usize,
    /// Resistance in ohms.
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    /// One of "vdm", "avg1", "avg2", "avg3".
    pub variant: String,
    /// Droop gain in siemens, scalar or per bus.
    pub k_p: ScalarOrPerBus,
    /// Integral gain; meaning depends on the variant (avg1: gain at the
    /// measurement bus, avg2: scalar sum gain, avg3: scalar or per bus).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_v: Option<ScalarOrPerBus>,
    /// avg1-only: which bus carries the integral action (1-based, default 1).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measurement_bus: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// "mirror-grid" or an explicit edge list.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comm: Option<CommSpec>,
    /// avg2-only: assert that every bus receives every voltage measurement
    /// (directly or relayed). Defaults to false; avg2 refuses to run without
    /// it unless the edge list itself is complete.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub all_to_all_voltage: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CommSpec {
    /// The string "mirror-grid": one communication edge per line with weight
    /// equal to the line conductance.
    Shorthand(String),
    Edges(Vec<CommEdgeEntry>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommEdgeEntry {
    pub i: usize,
    pub j: usize,
    /// Weight in siemens.
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    /// Injections active before the first event (amperes).
    pub i_inj: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<EventEntry>,
    pub t_end: f64,
    pub dt: f64,
    #[serde(default)]
    pub tau: f64,
    /// Record every k-th integration sample in the trajectory body.
    #[serde(default = "default_record_stride")]
    pub record_stride: usize,
    /// Initial bus voltages; defaults to the delay-free equilibrium.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v0: Option<Vec<f64>>,
}

fn default_record_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventEntry {
    pub t: f64,
    pub i_inj: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Artifact directory.
    #[serde(default = "default_out_dir")]
    pub dir: String,
    #[serde(default = "default_true")]
    pub trajectory: bool,
    #[serde(default = "default_true")]
    pub metrics: bool,
    #[serde(default = "default_true")]
    pub stability: bool,
    /// Additional CSV stride on top of the recording stride.
    #[serde(default = "default_record_stride")]
    pub stride: usize,
}

fn default_out_dir() -> String {
    "out".to_string()
}

fn default_true() -> bool {
    true
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
            trajectory: true,
            metrics: true,
            stability: true,
            stride: 1,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).context("config does not parse")?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    /// Normalized TOML form; reparsing yields an equivalent config.
    pub fn dump(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn bus_count(&self) -> usize {
        self.grid.capacitance.len()
    }

    pub fn grid_topology(&self) -> Result<GridTopology> {
        let n = self.bus_count();
        let mut lines = Vec::with_capacity(self.grid.lines.len());
        for entry in &self.grid.lines {
            lines.push(Line::new(
                to_zero_based(entry.i, n, "line endpoint i")?,
                to_zero_based(entry.j, n, "line endpoint j")?,
                entry.r,
            ));
        }
        let nominal = self.grid.nominal_voltage.broadcast(n, "nominal_voltage")?;
        let grid = GridTopology::new(
            n,
            lines,
            self.grid.capacitance.clone(),
            nominal.iter().copied().collect(),
        );
        grid.validate()?;
        Ok(grid)
    }

    fn comm_graph(&self, grid: &GridTopology) -> Result<CommGraph> {
        let n = grid.bus_count();
        let comm = match &self.controller.comm {
            None => bail!(
                "controller variant {:?} needs a `comm` entry (\"mirror-grid\" or an edge list)",
                self.controller.variant
            ),
            Some(CommSpec::Shorthand(word)) if word == "mirror-grid" => {
                CommGraph::mirror_grid(grid)?
            }
            Some(CommSpec::Shorthand(word)) => {
                bail!("unknown comm shorthand {word:?}; expected \"mirror-grid\"")
            }
            Some(CommSpec::Edges(entries)) => {
                let mut edges = Vec::with_capacity(entries.len());
                for e in entries {
                    edges.push(CommEdge::new(
                        to_zero_based(e.i, n, "comm endpoint i")?,
                        to_zero_based(e.j, n, "comm endpoint j")?,
                        e.c,
                    ));
                }
                CommGraph::new(n, edges)?
            }
        };
        Ok(if self.controller.all_to_all_voltage {
            comm.assume_all_to_all()
        } else {
            comm
        })
    }

    pub fn controller_spec(&self, grid: &GridTopology) -> Result<ControllerSpec> {
        let n = grid.bus_count();
        let ctrl = &self.controller;
        let k_p = ctrl.k_p.broadcast(n, "k_p")?;
        let spec = match ctrl.variant.as_str() {
            "vdm" => ControllerSpec::Droop { proportional: k_p },
            "avg1" => {
                let gain = match &ctrl.k_v {
                    Some(ScalarOrPerBus::Scalar(v)) => *v,
                    Some(ScalarOrPerBus::PerBus(_)) => {
                        bail!("avg1 takes a scalar k_v (the gain at the measurement bus)")
                    }
                    None => bail!("avg1 needs k_v"),
                };
                let bus = ctrl.measurement_bus.unwrap_or(1);
                let bus = to_zero_based(bus, n, "measurement_bus")?;
                let mut integral = DVector::zeros(n);
                integral[bus] = gain;
                ControllerSpec::AvgI {
                    proportional: k_p,
                    integral,
                    consensus_gain: require(ctrl.gamma, "gamma", "avg1")?,
                    comm: self.comm_graph(grid)?,
                }
            }
            "avg2" => {
                let integral = match &ctrl.k_v {
                    Some(ScalarOrPerBus::Scalar(v)) => *v,
                    Some(ScalarOrPerBus::PerBus(_)) => bail!("avg2 takes a scalar k_v"),
                    None => bail!("avg2 needs k_v"),
                };
                ControllerSpec::AvgII {
                    proportional: k_p,
                    integral,
                    consensus_gain: require(ctrl.gamma, "gamma", "avg2")?,
                    comm: self.comm_graph(grid)?,
                }
            }
            "avg3" => {
                let integral = match &ctrl.k_v {
                    Some(v) => v.broadcast(n, "k_v")?,
                    None => bail!("avg3 needs k_v"),
                };
                ControllerSpec::AvgIII {
                    proportional: k_p,
                    integral,
                    consensus_gain: require(ctrl.gamma, "gamma", "avg3")?,
                    reference_consensus_gain: require(ctrl.delta, "delta", "avg3")?,
                    comm: self.comm_graph(grid)?,
                }
            }
            other => bail!("unknown controller variant {other:?} (vdm, avg1, avg2, avg3)"),
        };
        spec.validate(n)?;
        Ok(spec)
    }

    pub fn sim_scenario(&self) -> Result<SimScenario> {
        let n = self.bus_count();
        let section = &self.scenario;
        if section.i_inj.len() != n {
            bail!(
                "scenario lists {} injections for {n} buses",
                section.i_inj.len()
            );
        }
        let mut scenario = SimScenario::new(
            DVector::from_column_slice(&section.i_inj),
            section.t_end,
            section.dt,
            section.tau,
        )
        .with_record_stride(section.record_stride);
        for event in &section.events {
            scenario = scenario.with_event(event.t, DVector::from_column_slice(&event.i_inj));
        }
        if let Some(v0) = &section.v0 {
            scenario = scenario.with_initial_voltage(DVector::from_column_slice(v0));
        }
        scenario.validate(n)?;
        Ok(scenario)
    }

    /// Dispatch cost weights; the controllers track the optimum when the
    /// droop gain is the inverse cost, so `f = 1/k_p` per bus.
    pub fn dispatch_weights(&self, grid: &GridTopology) -> Result<DVector<f64>> {
        let k_p = self.controller.k_p.broadcast(grid.bus_count(), "k_p")?;
        Ok(k_p.map(|k| 1.0 / k))
    }

    /// Voltage-offset weights matched to what each controller regulates:
    /// avg1 weights its measurement bus only, the others weight all buses.
    pub fn voltage_weights(&self, grid: &GridTopology) -> DVector<f64> {
        let n = grid.bus_count();
        if self.controller.variant == "avg1" {
            let bus = self.controller.measurement_bus.unwrap_or(1).saturating_sub(1);
            let mut g = DVector::zeros(n);
            g[bus.min(n - 1)] = 1.0;
            g
        } else {
            DVector::from_element(n, 1.0)
        }
    }
}

fn to_zero_based(index: usize, n: usize, what: &str) -> Result<usize> {
    if index == 0 || index > n {
        bail!("{what} = {index} is outside 1..={n}");
    }
    Ok(index - 1)
}

fn require(value: Option<f64>, name: &str, variant: &str) -> Result<f64> {
    value.with_context(|| format!("{variant} needs {name}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[grid]
capacitance = [57e-6, 57e-6]
nominal_voltage = 100e3
lines = [ { i = 1, j = 2, r = 3.7 } ]

[controller]
variant = "vdm"
k_p = 10.0

[scenario]
i_inj = [100.0, -100.0]
t_end = 0.01
dt = 1e-5
"#;

    #[test]
    fn minimal_config_parses_and_converts() {
        let config = RunConfig::parse(MINIMAL).unwrap();
        let grid = config.grid_topology().unwrap();
        assert_eq!(grid.bus_count(), 2);
        let spec = config.controller_spec(&grid).unwrap();
        assert_eq!(spec.label(), "droop");
        let scenario = config.sim_scenario().unwrap();
        assert_eq!(scenario.t_end, 0.01);
    }

    #[test]
    fn dump_round_trips() {
        let config = RunConfig::parse(MINIMAL).unwrap();
        let dumped = config.dump().unwrap();
        let reparsed = RunConfig::parse(&dumped).unwrap();
        assert_eq!(config, reparsed);
    }

    #[test]
    fn unknown_field_is_rejected() {
        let bad = MINIMAL.replace("k_p = 10.0", "k_p = 10.0\nbogus = 1");
        let err = RunConfig::parse(&bad).unwrap_err();
        assert!(format!("{err:#}").contains("bogus"));
    }

    #[test]
    fn missing_resistance_names_the_line() {
        let bad = MINIMAL.replace("{ i = 1, j = 2, r = 3.7 }", "{ i = 1, j = 2 }");
        let err = RunConfig::parse(&bad).unwrap_err();
        let text = format!("{err:#}");
        assert!(text.contains('r'), "error should name the field: {text}");
    }

    #[test]
    fn out_of_range_bus_is_reported() {
        let bad = MINIMAL.replace("{ i = 1, j = 2, r = 3.7 }", "{ i = 1, j = 5, r = 3.7 }");
        let config = RunConfig::parse(&bad).unwrap();
        let err = config.grid_topology().unwrap_err();
        assert!(format!("{err:#}").contains("j = 5"));
    }

    #[test]
    fn avg2_needs_all_to_all_declaration() {
        // On two buses the mirrored graph is already complete, so use three.
        let text = r#"
[grid]
capacitance = [57e-6, 57e-6, 57e-6]
nominal_voltage = 100e3
lines = [ { i = 1, j = 2, r = 3.7 }, { i = 2, j = 3, r = 3.7 } ]

[controller]
variant = "avg2"
k_p = 10.0
k_v = 5.0
gamma = 15.0
comm = "mirror-grid"

[scenario]
i_inj = [100.0, 0.0, -100.0]
t_end = 0.01
dt = 1e-5
"#;
        let config = RunConfig::parse(text).unwrap();
        let grid = config.grid_topology().unwrap();
        let err = config.controller_spec(&grid).unwrap_err();
        assert!(format!("{err:#}").contains("all-to-all"));

        let with_flag = text.replace("comm = \"mirror-grid\"", "comm = \"mirror-grid\"\nall_to_all_voltage = true");
        let config = RunConfig::parse(&with_flag).unwrap();
        assert!(config.controller_spec(&grid).is_ok());
    }
}
