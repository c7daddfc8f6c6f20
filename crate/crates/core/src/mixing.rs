//! Gossip matrices built from a communication graph.
//!
//! A gossip matrix `W` carries the mixing weights applied each round together
//! with its declared stochasticity class. Entries are supported only on the
//! graph edges plus the diagonal. Diagonals are computed as `1 − Σ off-diagonal`
//! so row sums are exact up to a single rounding.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{NetDpError, Result};
use crate::graph::Graph;

/// Stochasticity tolerance for validation.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Declared stochasticity class of a gossip matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StochasticKind {
    DoublyStochastic,
    RowStochastic,
    General,
}

impl StochasticKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StochasticKind::DoublyStochastic => "doubly-stochastic",
            StochasticKind::RowStochastic => "row-stochastic",
            StochasticKind::General => "general",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "doubly-stochastic" => Ok(StochasticKind::DoublyStochastic),
            "row-stochastic" => Ok(StochasticKind::RowStochastic),
            "general" => Ok(StochasticKind::General),
            other => Err(NetDpError::Parameter(format!(
                "unknown gossip matrix kind {other:?}"
            ))),
        }
    }
}

/// An `n×n` mixing matrix with its declared kind.
#[derive(Debug, Clone, PartialEq)]
pub struct GossipMatrix {
    w: DMatrix<f64>,
    kind: StochasticKind,
}

/// Outcome of [`GossipMatrix::validate`].
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub kind: StochasticKind,
    pub max_row_dev: f64,
    pub max_col_dev: f64,
    pub min_entry: f64,
    /// Nonzero entries outside `support(A + I)`; only counted when a graph
    /// was supplied.
    pub support_violations: usize,
    pub pass: bool,
}

impl GossipMatrix {
    /// Wrap an arbitrary square matrix with a declared kind. The declaration
    /// is checked by [`validate`](Self::validate), not here.
    pub fn new(w: DMatrix<f64>, kind: StochasticKind) -> Result<Self> {
        if w.nrows() != w.ncols() {
            return Err(NetDpError::Dimension(format!(
                "gossip matrix must be square, got {}x{}",
                w.nrows(),
                w.ncols()
            )));
        }
        if w.nrows() == 0 {
            return Err(NetDpError::Dimension("gossip matrix must be nonempty".into()));
        }
        Ok(GossipMatrix { w, kind })
    }

    /// Doubly stochastic weights via max-degree normalization:
    /// `W_ij = A_ij / max{d_i, d_j}` off the diagonal and
    /// `W_ii = 1 − Σ_{j≠i} W_ij`. Degree-0 nodes get a pure self-loop.
    pub fn max_degree(g: &Graph) -> Self {
        let n = g.node_count();
        let mut w = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            let mut off_sum = 0.0;
            for &j in g.neighbors(i) {
                let weight = 1.0 / g.degree(i).max(g.degree(j)) as f64;
                w[(i, j)] = weight;
                off_sum += weight;
            }
            w[(i, i)] = 1.0 - off_sum;
        }
        GossipMatrix {
            w,
            kind: StochasticKind::DoublyStochastic,
        }
    }

    /// Row-stochastic closed-neighborhood averaging: `W_ij = 1 / |N̄_i|` for
    /// `j ∈ N̄_i`, zero otherwise.
    pub fn neighborhood_average(g: &Graph) -> Self {
        let n = g.node_count();
        let mut w = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            let weight = 1.0 / (g.degree(i) + 1) as f64;
            for &j in g.neighbors(i) {
                w[(i, j)] = weight;
            }
            w[(i, i)] = weight;
        }
        GossipMatrix {
            w,
            kind: StochasticKind::RowStochastic,
        }
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn kind(&self) -> StochasticKind {
        self.kind
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// Check the declared invariants, and the support constraint when a graph
    /// is supplied. Row/column sums must hold within [`STOCHASTIC_TOL`];
    /// stochastic kinds additionally require nonnegative entries.
    pub fn validate(&self, graph: Option<&Graph>) -> ValidationReport {
        let n = self.dim();
        let mut max_row_dev: f64 = 0.0;
        let mut max_col_dev: f64 = 0.0;
        let mut min_entry = f64::INFINITY;
        for i in 0..n {
            let row_sum: f64 = self.w.row(i).iter().sum();
            let col_sum: f64 = self.w.column(i).iter().sum();
            max_row_dev = max_row_dev.max((row_sum - 1.0).abs());
            max_col_dev = max_col_dev.max((col_sum - 1.0).abs());
        }
        for v in self.w.iter() {
            min_entry = min_entry.min(*v);
        }
        let mut support_violations = 0;
        if let Some(g) = graph {
            if g.node_count() == n {
                for i in 0..n {
                    for j in 0..n {
                        if self.w[(i, j)] != 0.0 && i != j && !g.has_edge(i, j) {
                            support_violations += 1;
                        }
                    }
                }
            } else {
                support_violations = usize::MAX;
            }
        }
        let pass = match self.kind {
            StochasticKind::DoublyStochastic => {
                max_row_dev <= STOCHASTIC_TOL
                    && max_col_dev <= STOCHASTIC_TOL
                    && min_entry >= -STOCHASTIC_TOL
            }
            StochasticKind::RowStochastic => {
                max_row_dev <= STOCHASTIC_TOL && min_entry >= -STOCHASTIC_TOL
            }
            StochasticKind::General => true,
        } && support_violations == 0;
        ValidationReport {
            kind: self.kind,
            max_row_dev,
            max_col_dev,
            min_entry,
            support_violations,
            pass,
        }
    }

    /// Dense CSV, one row per line, preceded by a `# kind=...` header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# kind={}", self.kind.as_str());
        for i in 0..self.dim() {
            let row: Vec<String> = self.w.row(i).iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    /// Parse the CSV format written by [`to_csv`](Self::to_csv). A missing
    /// `# kind=` header defaults to `general`.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut kind = StochasticKind::General;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(value) = rest.trim().strip_prefix("kind=") {
                    kind = StochasticKind::parse(value.trim())?;
                }
                continue;
            }
            let row: Vec<f64> = line
                .split(',')
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|e| NetDpError::Parse {
                        line: idx + 1,
                        message: format!("bad entry: {e}"),
                    })
                })
                .collect::<Result<_>>()?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(NetDpError::Parse {
                line: 0,
                message: "empty matrix".into(),
            });
        }
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(NetDpError::Dimension(format!(
                "matrix rows must all have {n} entries"
            )));
        }
        let w = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        GossipMatrix::new(w, kind)
    }
}
