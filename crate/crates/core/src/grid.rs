//! DC network and communication graphs.
//!
//! A [`GridTopology`] describes the physical side: buses with capacitances
//! and nominal voltages, joined by resistive lines. Current flow is governed
//! by the conductance Laplacian (edge weights `1/R`). A [`CommGraph`]
//! describes the controller communication side with its own weighted
//! Laplacian. Everything is dense; target networks are at most a few hundred
//! buses. All quantities are SI (ohms, farads, volts, amperes, siemens).

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::tol;

/// A resistive line between two buses (0-based indices).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    /// Line resistance in ohms, strictly positive.
    pub resistance: f64,
}

impl Line {
    pub fn new(from: usize, to: usize, resistance: f64) -> Self {
        Self {
            from,
            to,
            resistance,
        }
    }
}

/// Physical MTDC network: buses with shunt capacitance and nominal voltage,
/// connected by resistive lines.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTopology {
    n: usize,
    lines: Vec<Line>,
    capacitance: Vec<f64>,
    nominal_voltage: Vec<f64>,
}

/// One concrete defect found by [`GridTopology::validate`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyIssue {
    #[error("bus count {0} is below the minimum of 2")]
    TooFewBuses(usize),
    #[error("capacitance vector has {found} entries, expected {expected}")]
    CapacitanceLength { expected: usize, found: usize },
    #[error("nominal-voltage vector has {found} entries, expected {expected}")]
    NominalVoltageLength { expected: usize, found: usize },
    #[error("line {index} ({from}-{to}) is a self-loop")]
    SelfLoop { index: usize, from: usize, to: usize },
    #[error("line {index} ({from}-{to}) references a bus outside 0..{n}")]
    LineOutOfRange {
        index: usize,
        from: usize,
        to: usize,
        n: usize,
    },
    #[error("duplicate line between buses {from} and {to}")]
    DuplicateLine { from: usize, to: usize },
    #[error("line {index} ({from}-{to}) has nonpositive resistance {value}")]
    NonpositiveResistance {
        index: usize,
        from: usize,
        to: usize,
        value: f64,
    },
    #[error("bus {bus} has nonpositive capacitance {value}")]
    NonpositiveCapacitance { bus: usize, value: f64 },
    #[error("the line graph is disconnected")]
    Disconnected,
}

#[derive(Debug, Clone, Error)]
pub enum GridError {
    #[error("invalid topology: {}", format_issues(.0))]
    InvalidTopology(Vec<TopologyIssue>),
    #[error("invalid communication graph: {}", format_issues(.0))]
    InvalidCommGraph(Vec<TopologyIssue>),
    #[error("matrix is not symmetric (relative asymmetry {relative:.3e})")]
    NotSymmetric { relative: f64 },
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

fn format_issues(issues: &[TopologyIssue]) -> String {
    issues
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

impl GridTopology {
    /// Builds a topology without validating it; call [`validate`](Self::validate)
    /// (or any operation that requires a valid grid) to check the invariants.
    pub fn new(
        n: usize,
        lines: Vec<Line>,
        capacitance: Vec<f64>,
        nominal_voltage: Vec<f64>,
    ) -> Self {
        Self {
            n,
            lines,
            capacitance,
            nominal_voltage,
        }
    }

    pub fn bus_count(&self) -> usize {
        self.n
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn capacitance(&self) -> &[f64] {
        &self.capacitance
    }

    pub fn nominal_voltage(&self) -> &[f64] {
        &self.nominal_voltage
    }

    pub fn nominal_voltage_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.nominal_voltage)
    }

    /// Diagonal of the elastance matrix E = diag(1/Cᵢ).
    pub fn elastance(&self) -> DVector<f64> {
        DVector::from_iterator(self.n, self.capacitance.iter().map(|c| 1.0 / c))
    }

    /// Checks every topology invariant, reporting all violations at once:
    /// positive resistances and capacitances, in-range and duplicate-free
    /// lines, and a connected line graph.
    pub fn validate(&self) -> Result<(), GridError> {
        let mut issues = Vec::new();
        if self.n < 2 {
            issues.push(TopologyIssue::TooFewBuses(self.n));
        }
        if self.capacitance.len() != self.n {
            issues.push(TopologyIssue::CapacitanceLength {
                expected: self.n,
                found: self.capacitance.len(),
            });
        }
        if self.nominal_voltage.len() != self.n {
            issues.push(TopologyIssue::NominalVoltageLength {
                expected: self.n,
                found: self.nominal_voltage.len(),
            });
        }
        for (bus, &c) in self.capacitance.iter().enumerate() {
            if !(c > 0.0) {
                issues.push(TopologyIssue::NonpositiveCapacitance { bus, value: c });
            }
        }
        let mut seen = std::collections::HashSet::new();
        for (index, line) in self.lines.iter().enumerate() {
            if line.from == line.to {
                issues.push(TopologyIssue::SelfLoop {
                    index,
                    from: line.from,
                    to: line.to,
                });
                continue;
            }
            if line.from >= self.n || line.to >= self.n {
                issues.push(TopologyIssue::LineOutOfRange {
                    index,
                    from: line.from,
                    to: line.to,
                    n: self.n,
                });
                continue;
            }
            let key = (line.from.min(line.to), line.from.max(line.to));
            if !seen.insert(key) {
                issues.push(TopologyIssue::DuplicateLine {
                    from: key.0,
                    to: key.1,
                });
            }
            if !(line.resistance > 0.0) {
                issues.push(TopologyIssue::NonpositiveResistance {
                    index,
                    from: line.from,
                    to: line.to,
                    value: line.resistance,
                });
            }
        }
        let edges: Vec<(usize, usize)> = self
            .lines
            .iter()
            .filter(|l| l.from != l.to && l.from < self.n && l.to < self.n)
            .map(|l| (l.from, l.to))
            .collect();
        if self.n >= 2 && !is_connected(self.n, &edges) {
            issues.push(TopologyIssue::Disconnected);
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(GridError::InvalidTopology(issues))
        }
    }

    /// Weighted graph Laplacian of the line network with edge weights `1/R`.
    ///
    /// Row sums are zero and the matrix is symmetric positive semidefinite
    /// with a single zero eigenvalue for a connected grid.
    pub fn conductance_laplacian(&self) -> Result<DMatrix<f64>, GridError> {
        self.validate()?;
        let mut lap = DMatrix::zeros(self.n, self.n);
        for line in &self.lines {
            let w = 1.0 / line.resistance;
            lap[(line.from, line.to)] -= w;
            lap[(line.to, line.from)] -= w;
            lap[(line.from, line.from)] += w;
            lap[(line.to, line.to)] += w;
        }
        Ok(lap)
    }

    /// Vertex-edge incidence matrix B (n × m), oriented from `from` to `to`
    /// in line order. Satisfies L = B·diag(1/R)·Bᵀ.
    pub fn incidence_matrix(&self) -> Result<DMatrix<f64>, GridError> {
        self.validate()?;
        let mut b = DMatrix::zeros(self.n, self.lines.len());
        for (k, line) in self.lines.iter().enumerate() {
            b[(line.from, k)] = 1.0;
            b[(line.to, k)] = -1.0;
        }
        Ok(b)
    }
}

/// One undirected communication edge with conductance-like weight in siemens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CommEdge {
    pub from: usize,
    pub to: usize,
    /// Symmetric weight c = c_from,to = c_to,from > 0.
    pub weight: f64,
}

impl CommEdge {
    pub fn new(from: usize, to: usize, weight: f64) -> Self {
        Self { from, to, weight }
    }
}

/// Undirected weighted communication graph among the controllers.
///
/// Edges are stored once per unordered pair, which makes the weight symmetry
/// structural. `all_to_all` records whether every bus can obtain every other
/// bus's measurements (directly or relayed); it is set automatically when the
/// edge set is complete and can be asserted explicitly via
/// [`assume_all_to_all`](Self::assume_all_to_all) for relayed topologies.
#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    n: usize,
    edges: Vec<CommEdge>,
    all_to_all: bool,
}

impl CommGraph {
    /// Builds and validates a communication graph on `n` vertices.
    pub fn new(n: usize, edges: Vec<CommEdge>) -> Result<Self, GridError> {
        let mut issues = Vec::new();
        if n < 2 {
            issues.push(TopologyIssue::TooFewBuses(n));
        }
        let mut seen = std::collections::HashSet::new();
        for (index, e) in edges.iter().enumerate() {
            if e.from == e.to {
                issues.push(TopologyIssue::SelfLoop {
                    index,
                    from: e.from,
                    to: e.to,
                });
                continue;
            }
            if e.from >= n || e.to >= n {
                issues.push(TopologyIssue::LineOutOfRange {
                    index,
                    from: e.from,
                    to: e.to,
                    n,
                });
                continue;
            }
            let key = (e.from.min(e.to), e.from.max(e.to));
            if !seen.insert(key) {
                issues.push(TopologyIssue::DuplicateLine {
                    from: key.0,
                    to: key.1,
                });
            }
            if !(e.weight > 0.0) {
                issues.push(TopologyIssue::NonpositiveResistance {
                    index,
                    from: e.from,
                    to: e.to,
                    value: e.weight,
                });
            }
        }
        let pairs: Vec<(usize, usize)> = edges
            .iter()
            .filter(|e| e.from != e.to && e.from < n && e.to < n)
            .map(|e| (e.from, e.to))
            .collect();
        if n >= 2 && !is_connected(n, &pairs) {
            issues.push(TopologyIssue::Disconnected);
        }
        if !issues.is_empty() {
            return Err(GridError::InvalidCommGraph(issues));
        }
        let all_to_all = seen.len() == n * (n - 1) / 2;
        Ok(Self {
            n,
            edges,
            all_to_all,
        })
    }

    /// Communication graph mirroring the grid: one edge per line with weight
    /// equal to the line conductance 1/R.
    pub fn mirror_grid(grid: &GridTopology) -> Result<Self, GridError> {
        grid.validate()?;
        let edges = grid
            .lines()
            .iter()
            .map(|l| CommEdge::new(l.from, l.to, 1.0 / l.resistance))
            .collect();
        Self::new(grid.bus_count(), edges)
    }

    /// Complete graph with a uniform edge weight.
    pub fn complete_uniform(n: usize, weight: f64) -> Result<Self, GridError> {
        let mut edges = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                edges.push(CommEdge::new(i, j, weight));
            }
        }
        Self::new(n, edges)
    }

    /// Marks the graph as providing all-to-all information (e.g. measurements
    /// relayed over multiple hops) even though the edge set is not complete.
    pub fn assume_all_to_all(mut self) -> Self {
        self.all_to_all = true;
        self
    }

    pub fn vertex_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[CommEdge] {
        &self.edges
    }

    pub fn is_all_to_all(&self) -> bool {
        self.all_to_all
    }

    /// Weighted Laplacian of the communication graph.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut lap = DMatrix::zeros(self.n, self.n);
        for e in &self.edges {
            lap[(e.from, e.to)] -= e.weight;
            lap[(e.to, e.from)] -= e.weight;
            lap[(e.from, e.from)] += e.weight;
            lap[(e.to, e.to)] += e.weight;
        }
        lap
    }
}

/// Eigenvalue summary of a symmetric matrix, ordered ascending.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralSummary {
    /// Eigenvalues in ascending order.
    pub eigenvalues: Vec<f64>,
    /// Second-smallest eigenvalue (algebraic connectivity for a Laplacian).
    pub fiedler_value: f64,
    /// Σ 1/λᵢ over all but the smallest eigenvalue.
    pub harmonic_sum: f64,
}

/// Computes the ascending spectrum of a symmetric matrix together with the
/// harmonic sum of all but the smallest eigenvalue.
///
/// Rejects inputs whose asymmetry exceeds [`tol::SYMMETRY_REL`] relative to
/// the largest entry.
pub fn laplacian_spectrum(matrix: &DMatrix<f64>) -> Result<SpectralSummary, GridError> {
    if matrix.nrows() != matrix.ncols() {
        return Err(GridError::NotSquare {
            rows: matrix.nrows(),
            cols: matrix.ncols(),
        });
    }
    let scale = matrix.amax().max(f64::MIN_POSITIVE);
    let asym = (matrix - matrix.transpose()).amax();
    if asym > tol::SYMMETRY_REL * scale {
        return Err(GridError::NotSymmetric {
            relative: asym / scale,
        });
    }
    // Fold residual rounding asymmetry before the symmetric eigensolver.
    let sym = (matrix + matrix.transpose()) * 0.5;
    let mut eigenvalues: Vec<f64> = sym.symmetric_eigen().eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(|a, b| a.partial_cmp(b).expect("eigenvalues are finite"));
    let fiedler_value = eigenvalues.get(1).copied().unwrap_or(f64::NAN);
    let harmonic_sum = eigenvalues.iter().skip(1).map(|l| 1.0 / l).sum();
    Ok(SpectralSummary {
        eigenvalues,
        fiedler_value,
        harmonic_sum,
    })
}

fn is_connected(n: usize, edges: &[(usize, usize)]) -> bool {
    if n == 0 {
        return true;
    }
    let mut adjacency = vec![Vec::new(); n];
    for &(i, j) in edges {
        adjacency[i].push(j);
        adjacency[j].push(i);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = stack.pop() {
        for &w in &adjacency[v] {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                stack.push(w);
            }
        }
    }
    count == n
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bus() -> GridTopology {
        GridTopology::new(
            2,
            vec![Line::new(0, 1, 1.0)],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
        )
    }

    fn four_bus_ring() -> GridTopology {
        let lines = vec![
            Line::new(0, 1, 3.7),
            Line::new(0, 2, 3.7),
            Line::new(1, 3, 3.7),
            Line::new(2, 3, 3.7),
        ];
        GridTopology::new(4, lines, vec![57e-6; 4], vec![100e3; 4])
    }

    #[test]
    fn single_edge_laplacian() {
        let lap = two_bus().conductance_laplacian().unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        assert!((lap - expected).amax() < 1e-15);
    }

    #[test]
    fn four_bus_ring_laplacian() {
        let lap = four_bus_ring().conductance_laplacian().unwrap();
        let w = 1.0 / 3.7;
        for (i, j) in [(0, 1), (0, 2), (1, 3), (2, 3)] {
            assert!((lap[(i, j)] + w).abs() < 1e-15);
            assert!((lap[(j, i)] + w).abs() < 1e-15);
        }
        for (i, j) in [(0, 3), (1, 2)] {
            assert_eq!(lap[(i, j)], 0.0);
            assert_eq!(lap[(j, i)], 0.0);
        }
        for i in 0..4 {
            assert!((lap[(i, i)] - 2.0 * w).abs() < 1e-15);
            assert!(lap.row(i).sum().abs() < 1e-15);
        }
    }

    #[test]
    fn three_bus_path_laplacian() {
        // Hand-assembled from the definition: path with R = {2, 4} ohm.
        let grid = GridTopology::new(
            3,
            vec![Line::new(0, 1, 2.0), Line::new(1, 2, 4.0)],
            vec![1.0; 3],
            vec![1.0; 3],
        );
        let lap = grid.conductance_laplacian().unwrap();
        let expected = DMatrix::from_row_slice(
            3,
            3,
            &[0.5, -0.5, 0.0, -0.5, 0.75, -0.25, 0.0, -0.25, 0.25],
        );
        assert!((lap - expected).amax() < 1e-15);
    }

    #[test]
    fn two_bus_spectrum_closed_form() {
        let lap = two_bus().conductance_laplacian().unwrap();
        let summary = laplacian_spectrum(&lap).unwrap();
        assert!(summary.eigenvalues[0].abs() < 1e-12);
        assert!((summary.eigenvalues[1] - 2.0).abs() < 1e-12);
        assert!((summary.harmonic_sum - 0.5).abs() < 1e-12);
        assert!((summary.fiedler_value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn four_bus_ring_spectrum_closed_form() {
        // Cycle spectrum {0, 2w, 2w, 4w}; harmonic sum 3.7 * (1/2 + 1/2 + 1/4).
        let lap = four_bus_ring().conductance_laplacian().unwrap();
        let summary = laplacian_spectrum(&lap).unwrap();
        let w = 1.0 / 3.7;
        let expected = [0.0, 2.0 * w, 2.0 * w, 4.0 * w];
        for (got, want) in summary.eigenvalues.iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
        }
        assert!((summary.harmonic_sum - 4.625).abs() < 1e-10);
    }

    #[test]
    fn generic_symmetric_input() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0, 2.0]));
        let summary = laplacian_spectrum(&m).unwrap();
        assert_eq!(summary.eigenvalues.len(), 3);
        assert!(summary.eigenvalues[0].abs() < 1e-14);
        assert!((summary.eigenvalues[1] - 1.0).abs() < 1e-14);
        assert!((summary.eigenvalues[2] - 2.0).abs() < 1e-14);
        assert!((summary.harmonic_sum - 1.5).abs() < 1e-13);
    }

    #[test]
    fn rejects_asymmetric_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 1.0]);
        assert!(matches!(
            laplacian_spectrum(&m),
            Err(GridError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn validate_accepts_four_bus_ring() {
        assert!(four_bus_ring().validate().is_ok());
    }

    #[test]
    fn validate_rejects_disconnected_islands() {
        let grid = GridTopology::new(
            4,
            vec![Line::new(0, 1, 1.0), Line::new(2, 3, 1.0)],
            vec![1.0; 4],
            vec![1.0; 4],
        );
        let err = grid.validate().unwrap_err();
        match err {
            GridError::InvalidTopology(issues) => {
                assert!(issues.contains(&TopologyIssue::Disconnected));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn validate_rejects_zero_resistance() {
        let grid = GridTopology::new(
            2,
            vec![Line::new(0, 1, 0.0)],
            vec![1.0; 2],
            vec![1.0; 2],
        );
        let err = grid.validate().unwrap_err();
        let GridError::InvalidTopology(issues) = err else {
            panic!("expected topology error");
        };
        assert!(issues
            .iter()
            .any(|i| matches!(i, TopologyIssue::NonpositiveResistance { value, .. } if *value == 0.0)));
    }

    #[test]
    fn validate_reports_multiple_issues_with_identity() {
        let grid = GridTopology::new(
            3,
            vec![
                Line::new(0, 0, 1.0),
                Line::new(0, 7, 1.0),
                Line::new(1, 2, -2.0),
            ],
            vec![1.0, -1.0, 1.0],
            vec![1.0; 3],
        );
        let GridError::InvalidTopology(issues) = grid.validate().unwrap_err() else {
            panic!("expected topology error");
        };
        assert!(issues.iter().any(|i| matches!(i, TopologyIssue::SelfLoop { index: 0, .. })));
        assert!(issues
            .iter()
            .any(|i| matches!(i, TopologyIssue::LineOutOfRange { index: 1, to: 7, .. })));
        assert!(issues
            .iter()
            .any(|i| matches!(i, TopologyIssue::NonpositiveCapacitance { bus: 1, .. })));
        assert!(issues
            .iter()
            .any(|i| matches!(i, TopologyIssue::NonpositiveResistance { index: 2, .. })));
    }

    #[test]
    fn incidence_factorization_matches_laplacian() {
        let grid = four_bus_ring();
        let b = grid.incidence_matrix().unwrap();
        let weights =
            DMatrix::from_diagonal(&DVector::from_iterator(4, grid.lines().iter().map(|l| 1.0 / l.resistance)));
        let lap = grid.conductance_laplacian().unwrap();
        assert!((&b * weights * b.transpose() - lap).amax() < 1e-14);
    }

    #[test]
    fn comm_graph_mirror_and_complete_flags() {
        let grid = four_bus_ring();
        let comm = CommGraph::mirror_grid(&grid).unwrap();
        assert_eq!(comm.vertex_count(), 4);
        assert!(!comm.is_all_to_all());
        assert!((comm.laplacian() - grid.conductance_laplacian().unwrap()).amax() < 1e-15);

        let complete = CommGraph::complete_uniform(4, 0.5).unwrap();
        assert!(complete.is_all_to_all());

        let relayed = comm.assume_all_to_all();
        assert!(relayed.is_all_to_all());
    }

    #[test]
    fn comm_graph_rejects_disconnected() {
        let err = CommGraph::new(3, vec![CommEdge::new(0, 1, 1.0)]).unwrap_err();
        assert!(matches!(err, GridError::InvalidCommGraph(_)));
    }
}
