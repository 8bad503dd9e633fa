//! The three comparison algorithms: distributed subgradient (DSM), the
//! control-based method (DCM) and consensus ADMM, as per-round transitions
//! compatible with the harness.

use std::collections::BTreeMap;

use nalgebra::DVector;

use crate::costs::CostFunction;
use crate::error::{Error, Result};
use crate::graph::{ConsensusMatrix, Graph};
use crate::linalg;

// ---------------------------------------------------------------------------
// Distributed subgradient method
// ---------------------------------------------------------------------------

/// Subgradient state; `k` drives the diminishing step size `varrho / k` and
/// starts at 1 because the schedule is undefined at zero.
#[derive(Debug, Clone)]
pub struct DsmState {
    pub x: Vec<DVector<f64>>,
    pub k: usize,
}

impl DsmState {
    pub fn init(n_agents: usize, dim: usize) -> Self {
        DsmState {
            x: vec![DVector::zeros(dim); n_agents],
            k: 1,
        }
    }
}

/// `x_i <- sum_j p_ij (x_j - (varrho/k) grad f_j(x_j))`, then `k <- k+1`.
pub fn dsm_step(
    state: DsmState,
    p: &ConsensusMatrix,
    costs: &[Box<dyn CostFunction>],
    varrho: f64,
) -> Result<DsmState> {
    if !(varrho > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "subgradient scale must be positive, got {varrho}"
        )));
    }
    if state.k == 0 {
        return Err(Error::InvalidConfig("subgradient schedule starts at k = 1".into()));
    }
    let step = varrho / state.k as f64;
    let moved: Vec<DVector<f64>> = state
        .x
        .iter()
        .zip(costs)
        .map(|(x, c)| x - c.gradient(x) * step)
        .collect();
    Ok(DsmState {
        x: p.mix(&moved),
        k: state.k + 1,
    })
}

// ---------------------------------------------------------------------------
// Distributed control method
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DcmState {
    pub x: Vec<DVector<f64>>,
    pub z: Vec<DVector<f64>>,
}

impl DcmState {
    pub fn init(n_agents: usize, dim: usize) -> Self {
        DcmState {
            x: vec![DVector::zeros(dim); n_agents],
            z: vec![DVector::zeros(dim); n_agents],
        }
    }
}

/// Stability bound on the mixing gain: `mu < 2 / (2 max_i |N_i| + 1)`.
pub fn dcm_mu_bound(graph: &Graph) -> f64 {
    2.0 / (2.0 * graph.max_degree() as f64 + 1.0)
}

/// Control-based update:
/// `z_i <- z_i + mu sum_j (x_i - x_j)`,
/// `x_i <- x_i + mu sum_j (x_j - x_i) + mu sum_j (z_j - z_i) - mu nu grad f_i(x_i)`,
/// both evaluated synchronously from the state at `k`. When the `z` field
/// starts at zero its sum stays exactly zero: the injected terms telescope
/// over undirected edges.
pub fn dcm_step(
    state: DcmState,
    graph: &Graph,
    costs: &[Box<dyn CostFunction>],
    mu: f64,
    nu: f64,
) -> Result<DcmState> {
    let bound = dcm_mu_bound(graph);
    if !(mu > 0.0 && mu < bound) {
        return Err(Error::InvalidConfig(format!(
            "mixing gain mu must lie in (0, {bound}), got {mu}"
        )));
    }
    if !(nu > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "gradient gain nu must be positive, got {nu}"
        )));
    }
    let n = graph.n_agents();
    let mut x_new = Vec::with_capacity(n);
    let mut z_new = Vec::with_capacity(n);
    for i in 0..n {
        let mut dz = DVector::zeros(state.x[i].len());
        let mut dx = DVector::zeros(state.x[i].len());
        for j in graph.neighbors(i) {
            dz += &state.x[i] - &state.x[j];
            dx += &state.x[j] - &state.x[i];
            dx += &state.z[j] - &state.z[i];
        }
        z_new.push(&state.z[i] + dz * mu);
        x_new.push(&state.x[i] + dx * mu - costs[i].gradient(&state.x[i]) * (mu * nu));
    }
    Ok(DcmState { x: x_new, z: z_new })
}

// ---------------------------------------------------------------------------
// Consensus ADMM
// ---------------------------------------------------------------------------

const ADMM_INNER_TOL: f64 = 1e-10;
const ADMM_INNER_MAX_ITERATIONS: usize = 100;
const ADMM_INNER_MAX_BACKTRACKS: usize = 30;

/// ADMM state with one auxiliary/multiplier pair per directed edge.
///
/// `z_(i,j)` and `z_(j,i)` are stored independently even though the update
/// makes them equal; the equality is asserted in tests rather than assumed.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub x: Vec<DVector<f64>>,
    z: Vec<DVector<f64>>,
    y: Vec<DVector<f64>>,
    index: BTreeMap<(usize, usize), usize>,
}

impl AdmmState {
    pub fn init(graph: &Graph, dim: usize) -> Self {
        let mut index = BTreeMap::new();
        for i in 0..graph.n_agents() {
            for j in graph.neighbors(i) {
                let id = index.len();
                index.insert((i, j), id);
            }
        }
        let n_dir = index.len();
        AdmmState {
            x: vec![DVector::zeros(dim); graph.n_agents()],
            z: vec![DVector::zeros(dim); n_dir],
            y: vec![DVector::zeros(dim); n_dir],
            index,
        }
    }

    fn id(&self, i: usize, j: usize) -> usize {
        self.index[&(i, j)]
    }

    pub fn z_edge(&self, i: usize, j: usize) -> &DVector<f64> {
        &self.z[self.id(i, j)]
    }

    pub fn y_edge(&self, i: usize, j: usize) -> &DVector<f64> {
        &self.y[self.id(i, j)]
    }
}

/// Local augmented Lagrangian
/// `L_i(x) = f_i(x) + sum_j [ y_(i,j)^T (x - z_(i,j)) + (delta/2) ||x - z_(i,j)||^2 ]`.
fn lagrangian_value(
    cost: &dyn CostFunction,
    x: &DVector<f64>,
    zs: &[&DVector<f64>],
    ys: &[&DVector<f64>],
    delta: f64,
) -> f64 {
    let mut v = cost.value(x);
    for (z, y) in zs.iter().zip(ys) {
        let d = x - *z;
        v += y.dot(&d) + 0.5 * delta * d.norm_squared();
    }
    v
}

/// Dedicated damped Newton solve of `argmin_x L_i`; the penalty term makes
/// the Hessian `hess f_i + delta |N_i| I`, positive definite for convex `f_i`.
fn minimize_lagrangian(
    cost: &dyn CostFunction,
    start: &DVector<f64>,
    zs: &[&DVector<f64>],
    ys: &[&DVector<f64>],
    delta: f64,
    agent: usize,
) -> Result<DVector<f64>> {
    let n = cost.dim();
    let deg = zs.len() as f64;
    let mut x = start.clone();
    for _ in 0..ADMM_INNER_MAX_ITERATIONS {
        let mut grad = cost.gradient(&x);
        for (z, y) in zs.iter().zip(ys) {
            grad += *y + (&x - *z) * delta;
        }
        if grad.norm() <= ADMM_INNER_TOL * (1.0 + x.norm()) {
            return Ok(x);
        }
        let mut hess = cost.hessian(&x);
        for k in 0..n {
            hess[(k, k)] += delta * deg;
        }
        let direction = linalg::spd_solve(&hess, &grad, "ADMM inner Newton")?;
        let fx = lagrangian_value(cost, &x, zs, ys, delta);
        // accept decreases down to the rounding resolution of the value;
        // otherwise the search stalls once the true decrease drops below
        // one ulp of L
        let floor = 1e-12 * (1.0 + fx.abs());
        let mut t = 1.0;
        let mut candidate = &x - &direction;
        let mut backtracks = 0;
        while lagrangian_value(cost, &candidate, zs, ys, delta) > fx + floor
            && backtracks < ADMM_INNER_MAX_BACKTRACKS
        {
            t *= 0.5;
            candidate = &x - &(&direction * t);
            backtracks += 1;
        }
        x = candidate;
    }
    Err(Error::NoConvergence {
        iterations: ADMM_INNER_MAX_ITERATIONS,
        context: format!("ADMM inner minimization for agent {agent}"),
    })
}

/// One synchronous ADMM round: per-agent inner minimization with the
/// previous-round edge variables, then the `z` and `y` edge updates using the
/// fresh `x` values.
pub fn admm_step(
    state: AdmmState,
    graph: &Graph,
    costs: &[Box<dyn CostFunction>],
    delta: f64,
) -> Result<AdmmState> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "penalty delta must lie in (0, 1), got {delta}"
        )));
    }
    let n = graph.n_agents();
    let mut x_new = Vec::with_capacity(n);
    for i in 0..n {
        let neighbors = graph.neighbors(i);
        let zs: Vec<&DVector<f64>> = neighbors.iter().map(|&j| state.z_edge(i, j)).collect();
        let ys: Vec<&DVector<f64>> = neighbors.iter().map(|&j| state.y_edge(i, j)).collect();
        x_new.push(minimize_lagrangian(
            costs[i].as_ref(),
            &state.x[i],
            &zs,
            &ys,
            delta,
            i,
        )?);
    }

    let mut z_new = state.z.clone();
    let mut y_new = state.y.clone();
    for (&(i, j), &id) in &state.index {
        let z = (state.y_edge(i, j) + state.y_edge(j, i)) / (2.0 * delta)
            + (&x_new[i] + &x_new[j]) * 0.5;
        y_new[id] = state.y_edge(i, j) + (&x_new[i] - &z) * delta;
        z_new[id] = z;
    }

    Ok(AdmmState {
        x: x_new,
        z: z_new,
        y: y_new,
        index: state.index,
    })
}
