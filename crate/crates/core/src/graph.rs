//! Communication graphs, average-consensus matrix builders and spectral
//! analysis.
//!
//! Consensus matrices built here are symmetric, doubly stochastic and
//! consistent with their graph: `p_ij > 0` only on edges or the diagonal.
//! The spectral radius `rho` (largest non-unit eigenvalue magnitude) and the
//! spectral gap `sigma = 1 - rho` govern how fast `P^k` approaches the
//! averaging matrix, and therefore how the step size of the slow dynamics
//! should be tuned.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;

/// Number of seeded attempts before geometric-graph construction gives up.
pub const GEOMETRIC_RETRY_BUDGET: u64 = 100;

/// Undirected communication graph on agents `0..n`.
///
/// Edges are stored normalized as `(min, max)` pairs; self-loops are
/// rejected at construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Graph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGraph("graph needs at least one agent".into()));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::InvalidGraph(format!("self-loop at agent {a}")));
            }
            if a >= n || b >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({a},{b}) out of range for {n} agents"
                )));
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(Graph { n, edges: set })
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    /// Neighbors of `i` in ascending order.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == i {
                    Some(b)
                } else if b == i {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }

    pub fn degree(&self, i: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == i || b == i).count()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n).map(|i| self.degree(i)).max().unwrap_or(0)
    }

    pub fn is_connected(&self) -> bool {
        if self.n <= 1 {
            return true;
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for v in self.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.n
    }

    /// Edge-list text form: header `n=<N>`, then one `i j` pair per line.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("n={}\n", self.n);
        for (a, b) in &self.edges {
            out.push_str(&format!("{a} {b}\n"));
        }
        out
    }

    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty edge list".into(),
        })?;
        let n: usize = header
            .trim()
            .strip_prefix("n=")
            .and_then(|s| s.parse().ok())
            .ok_or(Error::Parse {
                line: 1,
                message: format!("expected header 'n=<N>', got '{header}'"),
            })?;
        let mut edges = Vec::new();
        for (idx, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let parse = |tok: Option<&str>| -> Result<usize> {
                tok.and_then(|t| t.parse().ok()).ok_or(Error::Parse {
                    line: idx + 1,
                    message: format!("expected 'i j' pair, got '{line}'"),
                })
            };
            let a = parse(it.next())?;
            let b = parse(it.next())?;
            edges.push((a, b));
        }
        Graph::new(n, edges)
    }
}

/// Ring on `n >= 3` agents: each agent talks to its two cyclic neighbors.
pub fn ring_graph(n: usize) -> Result<Graph> {
    if n < 3 {
        return Err(Error::InvalidGraph(format!(
            "ring graph needs at least 3 agents, got {n}"
        )));
    }
    Graph::new(n, (0..n).map(|i| (i, (i + 1) % n)))
}

/// Random geometric graph: agents placed i.i.d. uniform on the unit square,
/// connected when within `radius`. Retries with seeds `seed, seed+1, ...`
/// until connected, up to [`GEOMETRIC_RETRY_BUDGET`] attempts.
pub fn random_geometric_graph(n: usize, radius: f64, seed: u64) -> Result<Graph> {
    if n == 0 {
        return Err(Error::InvalidGraph("graph needs at least one agent".into()));
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidGraph(format!("radius must be positive, got {radius}")));
    }
    for attempt in 0..GEOMETRIC_RETRY_BUDGET {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
        let points: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)))
            .collect();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = points[i].0 - points[j].0;
                let dy = points[i].1 - points[j].1;
                if (dx * dx + dy * dy).sqrt() <= radius {
                    edges.push((i, j));
                }
            }
        }
        let g = Graph::new(n, edges)?;
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(Error::GraphConstruction(format!(
        "no connected geometric graph within {GEOMETRIC_RETRY_BUDGET} attempts \
         (n={n}, radius={radius}, seed={seed})"
    )))
}

/// Symmetric doubly stochastic matrix consistent with a graph, together with
/// its spectral radius and gap.
#[derive(Debug, Clone)]
pub struct ConsensusMatrix {
    entries: DMatrix<f64>,
    rho: f64,
    sigma: f64,
    near_disconnected: bool,
}

const SYMMETRY_TOL: f64 = 1e-12;
const ROW_SUM_TOL: f64 = 1e-12;
const UNIT_EIGENVALUE_TOL: f64 = 1e-9;

impl ConsensusMatrix {
    /// Validates matrix invariants against `graph` and computes the spectrum.
    pub fn from_matrix(entries: DMatrix<f64>, graph: &Graph) -> Result<Self> {
        let n = graph.n_agents();
        if entries.nrows() != n || entries.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "matrix is {}x{} but graph has {n} agents",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if linalg::max_asymmetry(&entries) > SYMMETRY_TOL {
            return Err(Error::InvalidMatrix("matrix is not symmetric".into()));
        }
        for i in 0..n {
            let mut row_sum = 0.0;
            for j in 0..n {
                let p = entries[(i, j)];
                if p < 0.0 {
                    return Err(Error::InvalidMatrix(format!("negative entry p[{i}][{j}] = {p}")));
                }
                if p > 0.0 && i != j && !graph.has_edge(i, j) {
                    return Err(Error::InvalidMatrix(format!(
                        "p[{i}][{j}] = {p} but ({i},{j}) is not an edge"
                    )));
                }
                row_sum += p;
            }
            if (row_sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidMatrix(format!(
                    "row {i} sums to {row_sum} (expected 1)"
                )));
            }
        }
        let (rho, sigma, near_disconnected) = spectrum_of(&entries);
        if rho >= 1.0 {
            return Err(Error::InvalidMatrix(format!(
                "spectral radius {rho} >= 1; matrix does not drive consensus"
            )));
        }
        Ok(ConsensusMatrix {
            entries,
            rho,
            sigma,
            near_disconnected,
        })
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Largest eigenvalue magnitude after excluding the single unit eigenvalue.
    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Spectral gap `1 - rho`.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// True when a second eigenvalue lies within 1e-9 of 1, which is how a
    /// disconnected (or nearly disconnected) topology manifests spectrally.
    pub fn near_disconnected(&self) -> bool {
        self.near_disconnected
    }

    /// One consensus round applied to a per-agent field of vectors.
    ///
    /// `out_i = sum_j p_ij * v_j`, with zero entries skipped so the cost is
    /// proportional to the number of edges. Accumulation order is fixed by
    /// the agent index, making the result bit-reproducible.
    pub fn mix(&self, values: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let n = self.n();
        assert_eq!(values.len(), n, "field length must match agent count");
        (0..n)
            .map(|i| {
                let mut acc = DVector::zeros(values[0].len());
                for j in 0..n {
                    let p = self.entries[(i, j)];
                    if p == 0.0 {
                        continue;
                    }
                    for (dst, src) in acc.iter_mut().zip(values[j].iter()) {
                        *dst += p * src;
                    }
                }
                acc
            })
            .collect()
    }

    /// [`ConsensusMatrix::mix`] for per-agent matrix fields.
    pub fn mix_matrices(&self, values: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
        let n = self.n();
        assert_eq!(values.len(), n, "field length must match agent count");
        (0..n)
            .map(|i| {
                let mut acc = DMatrix::zeros(values[0].nrows(), values[0].ncols());
                for j in 0..n {
                    let p = self.entries[(i, j)];
                    if p == 0.0 {
                        continue;
                    }
                    for (dst, src) in acc.iter_mut().zip(values[j].iter()) {
                        *dst += p * src;
                    }
                }
                acc
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        linalg::matrix_to_csv(&self.entries)
    }
}

/// `(rho, sigma)` of a consensus matrix per the definition: the unit
/// eigenvalue is excluded exactly once, everything else competes for the
/// radius.
pub fn spectral_analysis(p: &ConsensusMatrix) -> (f64, f64) {
    (p.rho(), p.sigma())
}

fn spectrum_of(entries: &DMatrix<f64>) -> (f64, f64, bool) {
    let ev = linalg::symmetric_eigenvalues(entries);
    // Exclude exactly one eigenvalue closest to 1. If another one still sits
    // within tolerance of 1 the graph behaves as disconnected; report it.
    let closest = ev
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| (*a - 1.0).abs().total_cmp(&(*b - 1.0).abs()))
        .map(|(i, _)| i)
        .expect("matrix has at least one eigenvalue");
    let mut rho = 0.0f64;
    let mut near_disconnected = false;
    for (i, lambda) in ev.iter().enumerate() {
        if i == closest {
            continue;
        }
        if (lambda - 1.0).abs() <= UNIT_EIGENVALUE_TOL {
            near_disconnected = true;
        }
        rho = rho.max(lambda.abs());
    }
    (rho, 1.0 - rho, near_disconnected)
}

/// Circulant ring matrix with 0.5 on the diagonal and 0.25 on the two cyclic
/// off-diagonals. Its eigenvalues are `0.5 + 0.5 cos(2 pi k / n)`.
pub fn paper_ring_matrix(n: usize) -> Result<ConsensusMatrix> {
    let graph = ring_graph(n)?;
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = 0.5;
        m[(i, (i + 1) % n)] += 0.25;
        m[(i, (i + n - 1) % n)] += 0.25;
    }
    ConsensusMatrix::from_matrix(m, &graph)
}

/// Metropolis-Hastings weights consistent with a connected graph:
/// `p_ij = 1 / (1 + max(deg_i, deg_j))` on edges, diagonal fills to 1.
pub fn metropolis_matrix(graph: &Graph) -> Result<ConsensusMatrix> {
    if !graph.is_connected() {
        return Err(Error::InvalidGraph(
            "Metropolis weights require a connected graph".into(),
        ));
    }
    let n = graph.n_agents();
    let deg: Vec<usize> = (0..n).map(|i| graph.degree(i)).collect();
    let mut m = DMatrix::zeros(n, n);
    for (a, b) in graph.edges() {
        let w = 1.0 / (1.0 + deg[a].max(deg[b]) as f64);
        m[(a, b)] = w;
        m[(b, a)] = w;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| m[(i, j)]).sum();
        m[(i, i)] = 1.0 - off;
    }
    ConsensusMatrix::from_matrix(m, graph)
}

/// Rule-of-thumb step size for the slow dynamics: a `safety` fraction of the
/// spectral gap, so consensus mixes faster than the local updates move.
pub fn epsilon_rule_of_thumb(sigma: f64, safety: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "spectral gap must lie in (0, 1], got {sigma}"
        )));
    }
    if !(safety > 0.0 && safety < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "safety factor must lie in (0, 1), got {safety}"
        )));
    }
    Ok(safety * sigma)
}

/// Default safety factor for [`epsilon_rule_of_thumb`].
pub const DEFAULT_EPSILON_SAFETY: f64 = 0.1;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_of_three() {
        let g = ring_graph(3).unwrap();
        let edges: Vec<_> = g.edges().collect();
        assert_eq!(edges, vec![(0, 1), (0, 2), (1, 2)]);
        assert!(g.is_connected());
    }

    #[test]
    fn ring_of_thirty_has_degree_two_everywhere() {
        let g = ring_graph(30).unwrap();
        assert_eq!(g.n_edges(), 30);
        assert!((0..30).all(|i| g.degree(i) == 2));
    }

    #[test]
    fn degenerate_ring_rejected() {
        assert!(ring_graph(2).is_err());
        assert!(ring_graph(0).is_err());
    }

    #[test]
    fn geometric_single_agent_is_connected() {
        let g = random_geometric_graph(1, 0.1, 7).unwrap();
        assert_eq!(g.n_edges(), 0);
        assert!(g.is_connected());
    }

    #[test]
    fn geometric_large_radius_gives_complete_graph() {
        // sqrt(2) dominates any distance on the unit square
        let g = random_geometric_graph(30, 1.5, 3).unwrap();
        assert_eq!(g.n_edges(), 30 * 29 / 2);
    }

    #[test]
    fn geometric_is_seed_deterministic() {
        let a = random_geometric_graph(30, 0.4, 11).unwrap();
        let b = random_geometric_graph(30, 0.4, 11).unwrap();
        assert_eq!(a, b);
        let c = random_geometric_graph(30, 0.4, 12).unwrap();
        assert!(c.is_connected());
    }

    #[test]
    fn paper_ring_spectral_radius_matches_circulant_formula() {
        let p = paper_ring_matrix(30).unwrap();
        let expected = 0.5 + 0.5 * (2.0 * std::f64::consts::PI / 30.0).cos();
        assert!((p.rho() - expected).abs() < 1e-10);
        assert!((p.rho() - 0.989).abs() < 1e-3); // close to 0.99
    }

    #[test]
    fn paper_ring_four_agents() {
        let p = paper_ring_matrix(4).unwrap();
        // circulant eigenvalues 0.5 + 0.5 cos(2 pi k / 4) = {1, 0.5, 0, 0.5}
        assert!((p.rho() - 0.5).abs() < 1e-12);
        let ev = linalg::symmetric_eigenvalues(p.entries());
        let expected = [0.0, 0.5, 0.5, 1.0];
        for (got, want) in ev.iter().zip(expected) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn paper_ring_rows_sum_to_one_exactly() {
        let p = paper_ring_matrix(17).unwrap();
        for i in 0..17 {
            let s: f64 = (0..17).map(|j| p.entries()[(i, j)]).sum();
            assert_eq!(s, 1.0);
        }
        assert!(paper_ring_matrix(2).is_err());
    }

    #[test]
    fn metropolis_two_agents() {
        let g = Graph::new(2, [(0, 1)]).unwrap();
        let p = metropolis_matrix(&g).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((p.entries()[(i, j)] - 0.5).abs() < 1e-15);
            }
        }
        let (rho, sigma) = spectral_analysis(&p);
        assert!(rho.abs() < 1e-12);
        assert!((sigma - 1.0).abs() < 1e-12);
    }

    #[test]
    fn metropolis_triangle() {
        let g = Graph::new(3, [(0, 1), (1, 2), (0, 2)]).unwrap();
        let p = metropolis_matrix(&g).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((p.entries()[(i, j)] - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn metropolis_ring_thirty_matches_circulant_eigenvalues() {
        let g = ring_graph(30).unwrap();
        let p = metropolis_matrix(&g).unwrap();
        // all degrees 2: off-diagonal 1/3, diagonal 1/3
        assert!((p.entries()[(0, 1)] - 1.0 / 3.0).abs() < 1e-15);
        assert!((p.entries()[(0, 0)] - 1.0 / 3.0).abs() < 1e-15);
        let expected = 1.0 / 3.0 + 2.0 / 3.0 * (2.0 * std::f64::consts::PI / 30.0).cos();
        assert!((p.rho() - expected).abs() < 1e-10);
    }

    #[test]
    fn metropolis_rejects_disconnected() {
        let g = Graph::new(4, [(0, 1), (2, 3)]).unwrap();
        assert!(metropolis_matrix(&g).is_err());
    }

    #[test]
    fn epsilon_rule_examples() {
        assert!((epsilon_rule_of_thumb(0.01, 0.1).unwrap() - 0.001).abs() < 1e-15);
        assert!((epsilon_rule_of_thumb(1.0, 0.5).unwrap() - 0.5).abs() < 1e-15);
        // gap implied by a reported radius of 0.9338
        let eps = epsilon_rule_of_thumb(1.0 - 0.9338, 0.1).unwrap();
        assert!((eps - 0.00662).abs() < 1e-5);
        assert!(epsilon_rule_of_thumb(0.0, 0.1).is_err());
        assert!(epsilon_rule_of_thumb(0.5, 1.0).is_err());
    }

    #[test]
    fn edge_list_round_trip() {
        let g = random_geometric_graph(12, 0.5, 5).unwrap();
        let text = g.to_edge_list();
        assert!(text.starts_with("n=12\n"));
        let back = Graph::parse_edge_list(&text).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn edge_list_parse_errors_carry_line_numbers() {
        let err = Graph::parse_edge_list("n=3\n0 1\nbogus\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn builder_invariants_on_seeded_geometric_graphs() {
        for seed in 0..5 {
            let g = random_geometric_graph(20, 0.5, seed).unwrap();
            let p = metropolis_matrix(&g).unwrap();
            let m = p.entries();
            assert!(linalg::max_asymmetry(m) <= 1e-12);
            for i in 0..20 {
                let s: f64 = (0..20).map(|j| m[(i, j)]).sum();
                assert!((s - 1.0).abs() <= 1e-12);
                for j in 0..20 {
                    assert!(m[(i, j)] >= 0.0);
                    if i != j && m[(i, j)] > 0.0 {
                        assert!(g.has_edge(i, j), "entry off the sparsity pattern");
                    }
                }
            }
            assert!(p.rho() < 1.0);
            assert!(!p.near_disconnected());
        }
    }

    #[test]
    fn mix_preserves_sums() {
        use nalgebra::DVector;
        let p = paper_ring_matrix(8).unwrap();
        let field: Vec<DVector<f64>> =
            (0..8).map(|i| DVector::from_element(2, i as f64)).collect();
        let total_before: f64 = field.iter().map(|v| v.sum()).sum();
        let mixed = p.mix(&field);
        let total_after: f64 = mixed.iter().map(|v| v.sum()).sum();
        assert!((total_before - total_after).abs() < 1e-12);
    }
}
