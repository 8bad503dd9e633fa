//! Newton-Raphson consensus and its accelerated variant, as pure per-round
//! transitions over the whole network.
//!
//! Each agent keeps a local estimate `x_i`, two consensus registers `y_i`
//! (vector) and `z_i` (symmetric matrix), and the previous-iterate values of
//! its `g_i`/`h_i` transforms. One round updates `x_i` along the clamped
//! Newton direction `[z_i]_c^{-1} y_i` and then mixes the registers with one
//! consensus multiplication each, feeding in the increments of `g_i` and
//! `h_i`. The mixing structure conserves register sums exactly:
//! `sum_i y_i(k) = sum_i (y_i(0) - g_i(x_i(-1))) + sum_i g_i(x_i(k-1))`,
//! and likewise for `z` — the tracking identity the tests pin down.

use nalgebra::{DMatrix, DVector};

use crate::costs::{g_of, h_of, CostFunction, HessianScheme};
use crate::error::{Error, Result};
use crate::graph::ConsensusMatrix;
use crate::linalg;

const CLAMP_SYMMETRY_TOL: f64 = 1e-9;
const CLAMP_EIG_TOL: f64 = 1e-10;

/// The `[.]_c` operator: returns `z` unchanged when `z >= (c/2) I` in the
/// positive-semidefinite order (smallest eigenvalue at least `c/2`), and the
/// whole matrix `(c/2) I` otherwise. The boolean reports whether the
/// replacement fired.
pub fn clamp_c(z: &DMatrix<f64>, c: f64) -> Result<(DMatrix<f64>, bool)> {
    if !(c > 0.0) {
        return Err(Error::InvalidConfig(format!("clamp level c must be positive, got {c}")));
    }
    linalg::ensure_symmetric(z, CLAMP_SYMMETRY_TOL, "clamp input")?;
    let min_eig = linalg::min_eigenvalue_sym(z);
    if min_eig >= c / 2.0 - CLAMP_EIG_TOL {
        Ok((z.clone(), false))
    } else {
        let n = z.nrows();
        Ok((DMatrix::identity(n, n) * (c / 2.0), true))
    }
}

/// Uniform offset added to every agent's initial registers; realizes the
/// perturbed regime where the register sums no longer match the `g`/`h`
/// evaluations and the limit point shifts accordingly.
#[derive(Debug, Clone)]
pub struct Perturbation {
    pub xi_y: DVector<f64>,
    pub xi_z: DMatrix<f64>,
}

impl Perturbation {
    pub fn new(xi_y: DVector<f64>, xi_z: DMatrix<f64>) -> Result<Self> {
        linalg::ensure_symmetric(&xi_z, 1e-12, "register perturbation")?;
        if xi_z.nrows() != xi_y.len() {
            return Err(Error::DimensionMismatch(
                "perturbation blocks disagree on dimension".into(),
            ));
        }
        Ok(Perturbation { xi_y, xi_z })
    }

    pub fn zero(dim: usize) -> Self {
        Perturbation {
            xi_y: DVector::zeros(dim),
            xi_z: DMatrix::zeros(dim, dim),
        }
    }
}

fn check_costs_dim(costs: &[Box<dyn CostFunction>]) -> Result<usize> {
    let Some(first) = costs.first() else {
        return Err(Error::InvalidConfig("need at least one agent".into()));
    };
    let n = first.dim();
    for (i, c) in costs.iter().enumerate() {
        if c.dim() != n {
            return Err(Error::DimensionMismatch(format!(
                "cost {i} has dimension {} but cost 0 has {n}",
                c.dim()
            )));
        }
    }
    Ok(n)
}

fn check_x0(x0: &[DVector<f64>], n_agents: usize, dim: usize) -> Result<()> {
    if x0.len() != n_agents {
        return Err(Error::DimensionMismatch(format!(
            "{} initial points for {n_agents} agents",
            x0.len()
        )));
    }
    for (i, x) in x0.iter().enumerate() {
        if x.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "initial point {i} has length {} but costs have dimension {dim}",
                x.len()
            )));
        }
    }
    Ok(())
}

/// Per-agent state of the basic algorithm.
///
/// `g_prev`/`h_prev` hold the transforms evaluated at the previous iterate;
/// at initialization they are the stored "x(-1)" registers, zero by default.
#[derive(Debug, Clone)]
pub struct NrcState {
    x: Vec<DVector<f64>>,
    y: Vec<DVector<f64>>,
    z: Vec<DMatrix<f64>>,
    g_prev: Vec<DVector<f64>>,
    h_prev: Vec<DMatrix<f64>>,
}

impl NrcState {
    /// Standard initialization: all registers zero (optionally shifted by a
    /// uniform perturbation), arbitrary starting points.
    pub fn init(
        costs: &[Box<dyn CostFunction>],
        x0: &[DVector<f64>],
        perturbation: Option<&Perturbation>,
    ) -> Result<Self> {
        let dim = check_costs_dim(costs)?;
        check_x0(x0, costs.len(), dim)?;
        let (xi_y, xi_z) = match perturbation {
            Some(p) => {
                if p.xi_y.len() != dim {
                    return Err(Error::DimensionMismatch(
                        "perturbation dimension does not match costs".into(),
                    ));
                }
                (p.xi_y.clone(), p.xi_z.clone())
            }
            None => (DVector::zeros(dim), DMatrix::zeros(dim, dim)),
        };
        let n = costs.len();
        Ok(NrcState {
            x: x0.to_vec(),
            y: vec![xi_y; n],
            z: vec![xi_z; n],
            g_prev: vec![DVector::zeros(dim); n],
            h_prev: vec![DMatrix::zeros(dim, dim); n],
        })
    }

    /// Zero starting points, zero registers.
    pub fn init_default(costs: &[Box<dyn CostFunction>], scheme: HessianScheme) -> Result<Self> {
        let _ = scheme;
        let dim = check_costs_dim(costs)?;
        let x0 = vec![DVector::zeros(dim); costs.len()];
        Self::init(costs, &x0, None)
    }

    /// Consistent warm start: registers seeded with the transforms at `x0`,
    /// so the register offsets vanish and the limit is the exact optimum
    /// regardless of the starting points.
    pub fn init_consistent(
        costs: &[Box<dyn CostFunction>],
        scheme: HessianScheme,
        x0: &[DVector<f64>],
    ) -> Result<Self> {
        let dim = check_costs_dim(costs)?;
        check_x0(x0, costs.len(), dim)?;
        let mut y = Vec::with_capacity(costs.len());
        let mut z = Vec::with_capacity(costs.len());
        for (c, x) in costs.iter().zip(x0) {
            y.push(g_of(c.as_ref(), scheme, x)?);
            z.push(h_of(c.as_ref(), scheme, x));
        }
        Ok(NrcState {
            x: x0.to_vec(),
            g_prev: y.clone(),
            h_prev: z.clone(),
            y,
            z,
        })
    }

    pub fn positions(&self) -> &[DVector<f64>] {
        &self.x
    }

    pub fn y_registers(&self) -> &[DVector<f64>] {
        &self.y
    }

    pub fn z_registers(&self) -> &[DMatrix<f64>] {
        &self.z
    }

    /// Transforms at the previous iterate (`g_i(x_i(k-1))` after `k` steps).
    pub fn g_at_prev(&self) -> &[DVector<f64>] {
        &self.g_prev
    }

    pub fn h_at_prev(&self) -> &[DMatrix<f64>] {
        &self.h_prev
    }

    /// Register offset sums `sum_i (y_i(0) - g_i(x_i(-1)))` scaled by `1/N`,
    /// meaningful on a freshly initialized state.
    pub fn register_offsets(&self) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.x.len() as f64;
        let mut off_y = DVector::zeros(self.y[0].len());
        let mut off_z = DMatrix::zeros(self.z[0].nrows(), self.z[0].ncols());
        for i in 0..self.x.len() {
            off_y += &self.y[i] - &self.g_prev[i];
            off_z += &self.z[i] - &self.h_prev[i];
        }
        (off_y / n, off_z / n)
    }
}

fn validate_step_params(epsilon: f64, c: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "step size epsilon must lie in (0, 1], got {epsilon}"
        )));
    }
    if !(c > 0.0) {
        return Err(Error::InvalidConfig(format!("clamp level c must be positive, got {c}")));
    }
    Ok(())
}

/// Allows freezing the local updates entirely (`epsilon = 0`) while the
/// registers keep mixing; useful for studying the fast dynamics alone.
fn validate_step_params_allow_frozen(epsilon: f64, c: f64) -> Result<()> {
    if epsilon == 0.0 {
        if !(c > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "clamp level c must be positive, got {c}"
            )));
        }
        return Ok(());
    }
    validate_step_params(epsilon, c)
}

/// One synchronous round of the basic algorithm. Returns the new state and
/// the number of agents whose curvature register was clamped this round.
pub fn nrc_step(
    state: NrcState,
    p: &ConsensusMatrix,
    costs: &[Box<dyn CostFunction>],
    scheme: HessianScheme,
    epsilon: f64,
    c: f64,
) -> Result<(NrcState, usize)> {
    validate_step_params_allow_frozen(epsilon, c)?;
    let n = costs.len();
    if state.x.len() != n || p.n() != n {
        return Err(Error::DimensionMismatch(
            "state, matrix and costs disagree on agent count".into(),
        ));
    }

    // local update first: x(k) uses the previous-round registers
    let mut clamped = 0;
    let mut x_new = Vec::with_capacity(n);
    for i in 0..n {
        let (zc, was_clamped) = clamp_c(&state.z[i], c)?;
        if was_clamped {
            clamped += 1;
        }
        let direction = linalg::spd_solve(&zc, &state.y[i], "consensus Newton direction")?;
        x_new.push(&state.x[i] * (1.0 - epsilon) + direction * epsilon);
    }

    // register mixing feeds in the g/h increments of the *previous* iterate
    let mut g_cur = Vec::with_capacity(n);
    let mut h_cur = Vec::with_capacity(n);
    for i in 0..n {
        g_cur.push(g_of(costs[i].as_ref(), scheme, &state.x[i])?);
        h_cur.push(h_of(costs[i].as_ref(), scheme, &state.x[i]));
    }
    let y_in: Vec<DVector<f64>> = (0..n)
        .map(|i| &state.y[i] + &g_cur[i] - &state.g_prev[i])
        .collect();
    let z_in: Vec<DMatrix<f64>> = (0..n)
        .map(|i| &state.z[i] + &h_cur[i] - &state.h_prev[i])
        .collect();

    Ok((
        NrcState {
            x: x_new,
            y: p.mix(&y_in),
            z: p.mix_matrices(&z_in),
            g_prev: g_cur,
            h_prev: h_cur,
        },
        clamped,
    ))
}

/// State of the accelerated variant: the second-order diffusive schedule
/// needs one more level of history on the registers and two more on the
/// transforms.
#[derive(Debug, Clone)]
pub struct FnrcState {
    x: Vec<DVector<f64>>,
    y: Vec<DVector<f64>>,
    z: Vec<DMatrix<f64>>,
    y_prev: Vec<DVector<f64>>,
    z_prev: Vec<DMatrix<f64>>,
    g_prev: Vec<DVector<f64>>,
    g_prev2: Vec<DVector<f64>>,
    h_prev: Vec<DMatrix<f64>>,
    h_prev2: Vec<DMatrix<f64>>,
}

impl FnrcState {
    /// Initialization mirrors the basic algorithm; the missing deeper lags
    /// start from the same zero registers.
    pub fn init(
        costs: &[Box<dyn CostFunction>],
        x0: &[DVector<f64>],
        perturbation: Option<&Perturbation>,
    ) -> Result<Self> {
        let base = NrcState::init(costs, x0, perturbation)?;
        let dim = base.y[0].len();
        let n = base.x.len();
        Ok(FnrcState {
            x: base.x,
            y: base.y,
            z: base.z,
            y_prev: vec![DVector::zeros(dim); n],
            z_prev: vec![DMatrix::zeros(dim, dim); n],
            g_prev: vec![DVector::zeros(dim); n],
            g_prev2: vec![DVector::zeros(dim); n],
            h_prev: vec![DMatrix::zeros(dim, dim); n],
            h_prev2: vec![DMatrix::zeros(dim, dim); n],
        })
    }

    pub fn init_default(costs: &[Box<dyn CostFunction>]) -> Result<Self> {
        let dim = check_costs_dim(costs)?;
        let x0 = vec![DVector::zeros(dim); costs.len()];
        Self::init(costs, &x0, None)
    }

    pub fn positions(&self) -> &[DVector<f64>] {
        &self.x
    }

    pub fn y_registers(&self) -> &[DVector<f64>] {
        &self.y
    }

    pub fn z_registers(&self) -> &[DMatrix<f64>] {
        &self.z
    }

    pub fn g_at_prev(&self) -> &[DVector<f64>] {
        &self.g_prev
    }
}

/// One round of the accelerated algorithm with memory weight `phi` in `[1, 2)`.
/// At `phi = 1` the update degenerates to the basic algorithm.
pub fn fnrc_step(
    state: FnrcState,
    p: &ConsensusMatrix,
    costs: &[Box<dyn CostFunction>],
    scheme: HessianScheme,
    epsilon: f64,
    c: f64,
    phi: f64,
) -> Result<(FnrcState, usize)> {
    validate_step_params_allow_frozen(epsilon, c)?;
    if !(1.0..2.0).contains(&phi) {
        return Err(Error::InvalidConfig(format!(
            "memory weight phi must lie in [1, 2), got {phi}"
        )));
    }
    let n = costs.len();
    if state.x.len() != n || p.n() != n {
        return Err(Error::DimensionMismatch(
            "state, matrix and costs disagree on agent count".into(),
        ));
    }

    let mut clamped = 0;
    let mut x_new = Vec::with_capacity(n);
    for i in 0..n {
        let (zc, was_clamped) = clamp_c(&state.z[i], c)?;
        if was_clamped {
            clamped += 1;
        }
        let direction = linalg::spd_solve(&zc, &state.y[i], "consensus Newton direction")?;
        x_new.push(&state.x[i] * (1.0 - epsilon) + direction * epsilon);
    }

    let mut g_cur = Vec::with_capacity(n);
    let mut h_cur = Vec::with_capacity(n);
    for i in 0..n {
        g_cur.push(g_of(costs[i].as_ref(), scheme, &state.x[i])?);
        h_cur.push(h_of(costs[i].as_ref(), scheme, &state.x[i]));
    }

    // weights chosen so the register sums still track the current averages
    let w_new = 1.0 / phi;
    let w_old = (1.0 - phi) / phi;
    let y_tilde: Vec<DVector<f64>> = (0..n)
        .map(|i| &state.y[i] + &g_cur[i] * w_new - &state.g_prev[i] - &state.g_prev2[i] * w_old)
        .collect();
    let z_tilde: Vec<DMatrix<f64>> = (0..n)
        .map(|i| &state.z[i] + &h_cur[i] * w_new - &state.h_prev[i] - &state.h_prev2[i] * w_old)
        .collect();
    let y_mixed = p.mix(&y_tilde);
    let z_mixed = p.mix_matrices(&z_tilde);
    let y_new: Vec<DVector<f64>> = (0..n)
        .map(|i| &y_mixed[i] * phi + &state.y_prev[i] * (1.0 - phi))
        .collect();
    let z_new: Vec<DMatrix<f64>> = (0..n)
        .map(|i| &z_mixed[i] * phi + &state.z_prev[i] * (1.0 - phi))
        .collect();

    Ok((
        FnrcState {
            x: x_new,
            y: y_new,
            z: z_new,
            y_prev: state.y,
            z_prev: state.z,
            g_prev2: state.g_prev,
            h_prev2: state.h_prev,
            g_prev: g_cur,
            h_prev: h_cur,
        },
        clamped,
    ))
}

/// Memory weight of the second-order diffusive schedule,
/// `phi = 2 / (1 + sqrt(1 - rho^2))`.
pub fn fnrc_phi(rho: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidConfig(format!(
            "spectral radius must lie in [0, 1), got {rho}"
        )));
    }
    Ok(2.0 / (1.0 + (1.0 - rho * rho).sqrt()))
}
