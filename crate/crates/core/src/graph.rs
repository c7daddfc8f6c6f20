//! Undirected communication graphs and neighborhood queries.
//!
//! Nodes are indexed `0..n`. The adjacency structure is always symmetric with
//! an empty diagonal; constructors enforce both. Disconnected graphs are
//! accepted — downstream accounting stays well-defined and merely warns.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{NetDpError, Result};

/// Immutable undirected graph with sorted neighbor lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    adj: Vec<Vec<usize>>,
    edge_count: usize,
}

/// Sorted set of distinct node indices, all `< n` for the graph it was built
/// against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSet {
    indices: Vec<usize>,
}

impl NodeSet {
    /// Build a node set, sorting and validating the indices.
    pub fn new(mut indices: Vec<usize>, n: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&max) = indices.last() {
            if max >= n {
                return Err(NetDpError::Parameter(format!(
                    "node index {max} out of range for n={n}"
                )));
            }
        }
        Ok(NodeSet { indices })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, node: usize) -> bool {
        self.indices.binary_search(&node).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().copied()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }
}

impl Graph {
    /// Build a graph from an explicit edge set. Self-loops are dropped,
    /// duplicates are deduplicated, endpoints are validated against `n`.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(NetDpError::Parameter("graph needs at least one node".into()));
        }
        let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(NetDpError::Parameter(format!(
                    "edge ({a},{b}) references node out of range for n={n}"
                )));
            }
            if a == b {
                continue;
            }
            sets[a].insert(b);
            sets[b].insert(a);
        }
        let adj: Vec<Vec<usize>> = sets.into_iter().map(|s| s.into_iter().collect()).collect();
        let edge_count = adj.iter().map(|l| l.len()).sum::<usize>() / 2;
        Ok(Graph { n, adj, edge_count })
    }

    /// Sample an Erdős–Rényi graph `G(n, p)`.
    ///
    /// The RNG is a ChaCha12 stream seeded with `seed`; exactly one `f64` in
    /// `[0, 1)` is drawn per unordered pair `{i, j}` in lexicographic order
    /// (`(0,1), (0,2), …, (n-2,n-1)`), and the edge is included when the draw
    /// is `< p`. Identical `(n, p, seed)` therefore reproduce the graph
    /// bit-exactly on every platform.
    pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(NetDpError::Parameter("graph needs at least one node".into()));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(NetDpError::Parameter(format!(
                "edge probability {p} outside [0, 1]"
            )));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let u: f64 = rng.random();
                if u < p {
                    edges.push((i, j));
                }
            }
        }
        Graph::from_edges(n, edges)
    }

    /// Parse a SNAP-style whitespace-separated edge list.
    ///
    /// Lines starting with `#` are comments. Node ids may be arbitrary
    /// non-negative integers; they are compacted to `0..n` in order of first
    /// appearance. Self-loops are dropped and duplicate edges deduplicated.
    /// With `symmetrize` the arc set is treated as directed and symmetrized
    /// (`A ∨ Aᵀ`); without it, every arc must already appear in both
    /// directions or the parse fails.
    pub fn from_edge_list(text: &str, symmetrize: bool) -> Result<Self> {
        let mut ids: Vec<u64> = Vec::new();
        let mut lookup: std::collections::HashMap<u64, usize> = std::collections::HashMap::new();
        let mut compact = |raw: u64| -> usize {
            *lookup.entry(raw).or_insert_with(|| {
                ids.push(raw);
                ids.len() - 1
            })
        };
        let mut arcs: BTreeSet<(usize, usize)> = BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            let parse = |field: Option<&str>, idx: usize| -> Result<u64> {
                field
                    .ok_or(NetDpError::Parse {
                        line: idx + 1,
                        message: "expected two node ids".into(),
                    })?
                    .parse::<u64>()
                    .map_err(|e| NetDpError::Parse {
                        line: idx + 1,
                        message: format!("bad node id: {e}"),
                    })
            };
            let a = parse(fields.next(), idx)?;
            let b = parse(fields.next(), idx)?;
            if fields.next().is_some() {
                return Err(NetDpError::Parse {
                    line: idx + 1,
                    message: "expected exactly two node ids".into(),
                });
            }
            let (a, b) = (compact(a), compact(b));
            if a != b {
                arcs.insert((a, b));
            }
        }
        if ids.is_empty() {
            return Err(NetDpError::Parse {
                line: 0,
                message: "empty edge list".into(),
            });
        }
        if !symmetrize {
            for &(a, b) in &arcs {
                if !arcs.contains(&(b, a)) {
                    return Err(NetDpError::Parse {
                        line: 0,
                        message: format!(
                            "arc ({},{}) has no reverse; pass symmetrize to take A ∨ Aᵀ",
                            ids[a], ids[b]
                        ),
                    });
                }
            }
        }
        Graph::from_edges(ids.len(), arcs)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adj[node].len()
    }

    /// Sorted open neighborhood `N_j`.
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adj[node]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        a < self.n && b < self.n && self.adj[a].binary_search(&b).is_ok()
    }

    /// Edges as `(i, j)` with `i < j`, lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(i, list)| list.iter().filter(move |&&j| i < j).map(move |&j| (i, j)))
    }

    /// True iff a BFS from node 0 reaches every node.
    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = std::collections::VecDeque::from([0usize]);
        seen[0] = true;
        let mut reached = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &self.adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    reached += 1;
                    queue.push_back(v);
                }
            }
        }
        reached == self.n
    }

    /// Closed neighborhood `N̄_j = N_j ∪ {j}`, sorted.
    pub fn closed_neighborhood(&self, node: usize) -> Result<NodeSet> {
        if node >= self.n {
            return Err(NetDpError::Parameter(format!(
                "node {node} out of range for n={}",
                self.n
            )));
        }
        let mut indices = self.adj[node].clone();
        let pos = indices.binary_search(&node).unwrap_err();
        indices.insert(pos, node);
        Ok(NodeSet { indices })
    }

    /// CSV adjacency list, one `i,j` line per edge with `i < j`.
    pub fn to_edge_csv(&self) -> String {
        let mut out = String::new();
        for (i, j) in self.edges() {
            let _ = writeln!(out, "{i},{j}");
        }
        out
    }
}
