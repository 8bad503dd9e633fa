//! Deterministic synchronous simulator: materializes a configuration into a
//! graph, consensus matrix, cost set and oracle optimum, then drives any of
//! the five algorithms round by round, recording traces and metrics.
//! Parameter sweeps and Monte Carlo perturbation studies run their
//! independent replicas through the execution facade and merge results in
//! config order, so identical configs give identical output bytes at any
//! thread count.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    admm_step, dcm_mu_bound, dcm_step, dsm_step, AdmmState, DcmState, DsmState,
};
use crate::config::{
    AlgorithmSpec, CostSpec, ExperimentConfig, GraphSpec, MatrixSpec, PerturbationSpec, X0Spec,
};
use crate::costs::{centralized_newton, CostFunction, NewtonReport, QuadraticCost, ExpSumCost};
use crate::data::{load_housing, load_spambase, partition, to_costs, CostParams};
use crate::error::{Error, Result};
use crate::graph::{
    metropolis_matrix, paper_ring_matrix, random_geometric_graph, ring_graph, ConsensusMatrix,
    Graph, DEFAULT_EPSILON_SAFETY,
};
use crate::nrc::{fnrc_phi, fnrc_step, nrc_step, FnrcState, NrcState, Perturbation};
use crate::par;

/// Relative MSE above which a sweep point is flagged unstable.
pub const UNSTABLE_MSE_SENTINEL: f64 = 1e6;
/// Plateau detection: per-round absolute MSE change below this ...
pub const PLATEAU_TOL: f64 = 1e-12;
/// ... for this many consecutive rounds.
pub const PLATEAU_WINDOW: usize = 50;

// ---------------------------------------------------------------------------
// Materialization
// ---------------------------------------------------------------------------

/// A configuration resolved into live objects: graph, matrix, per-agent
/// costs and the oracle optimum.
pub struct Prepared {
    pub graph: Graph,
    pub matrix: ConsensusMatrix,
    pub costs: Vec<Box<dyn CostFunction>>,
    pub dim: usize,
    pub x_star: DVector<f64>,
    /// Present when the oracle was computed here rather than supplied.
    pub oracle: Option<NewtonReport>,
    /// Rows ingested from a data-backed cost family, whatever the file held.
    pub data_rows: Option<usize>,
}

fn build_graph(spec: &GraphSpec) -> Result<Graph> {
    match spec {
        GraphSpec::Ring { n } => ring_graph(*n),
        GraphSpec::Geometric { n, radius, seed } => random_geometric_graph(*n, *radius, *seed),
    }
}

fn build_matrix(spec: &MatrixSpec, graph: &Graph) -> Result<ConsensusMatrix> {
    match spec {
        MatrixSpec::PaperRing => paper_ring_matrix(graph.n_agents()),
        MatrixSpec::Metropolis => metropolis_matrix(graph),
    }
}

fn positive_draw(rng: &mut ChaCha8Rng, hi: f64) -> f64 {
    loop {
        let v = rng.random_range(0.0..hi);
        if v > 0.0 {
            return v;
        }
    }
}

fn build_costs(spec: &CostSpec, n_agents: usize) -> Result<(Vec<Box<dyn CostFunction>>, Option<usize>)> {
    match spec {
        CostSpec::Quadratic { dim, seed, eig_min, eig_max, center_scale } => {
            if !(eig_min > &0.0 && eig_max >= eig_min) {
                return Err(Error::InvalidConfig(
                    "quadratic eigenvalue range must satisfy 0 < eig_min <= eig_max".into(),
                ));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let n = *dim;
            (0..n_agents)
                .map(|_| {
                    let raw = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
                    let q = raw.qr().q();
                    let lambda =
                        DVector::from_fn(n, |_, _| rng.random_range(*eig_min..=*eig_max));
                    let a = &q * DMatrix::from_diagonal(&lambda) * q.transpose();
                    let a = (&a + a.transpose()) * 0.5;
                    let d = DVector::from_fn(n, |_, _| {
                        rng.random_range(-*center_scale..=*center_scale)
                    });
                    Ok(Box::new(QuadraticCost::new(a, d, 0.0)?) as Box<dyn CostFunction>)
                })
                .collect::<Result<Vec<_>>>()
                .map(|costs| (costs, None))
        }
        CostSpec::ExpSum { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            (0..n_agents)
                .map(|_| {
                    let a = positive_draw(&mut rng, 0.2);
                    let b = positive_draw(&mut rng, 0.2);
                    let c = positive_draw(&mut rng, 1.0);
                    let d = positive_draw(&mut rng, 1.0);
                    Ok(Box::new(ExpSumCost::new(a, b, c, d)?) as Box<dyn CostFunction>)
                })
                .collect::<Result<Vec<_>>>()
                .map(|costs| (costs, None))
        }
        CostSpec::Classification { path, features, gamma, partition_seed, standardize } => {
            let mut ds = load_spambase(path, features)?;
            if *standardize {
                ds.standardize();
            }
            let rows = ds.n_rows();
            let parts = partition(&ds, n_agents, *partition_seed)?;
            Ok((to_costs(&parts, &CostParams::Classification { gamma: *gamma })?, Some(rows)))
        }
        CostSpec::Regression { path, features, beta, gamma, partition_seed, standardize } => {
            let mut ds = load_housing(path, features)?;
            if *standardize {
                ds.standardize();
            }
            let rows = ds.n_rows();
            let parts = partition(&ds, n_agents, *partition_seed)?;
            Ok((to_costs(&parts, &CostParams::Regression { beta: *beta, gamma: *gamma })?, Some(rows)))
        }
    }
}

/// Resolve a configuration into live objects, computing the centralized
/// oracle unless the config carries a precomputed optimum.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let graph = build_graph(&cfg.graph)?;
    let matrix = build_matrix(&cfg.matrix, &graph)?;
    let (costs, data_rows) = build_costs(&cfg.costs, graph.n_agents())?;
    let dim = costs[0].dim();
    let (x_star, oracle) = match &cfg.run.oracle {
        Some(values) => {
            if values.len() != dim {
                return Err(Error::InvalidConfig(format!(
                    "precomputed optimum has length {} but costs have dimension {dim}",
                    values.len()
                )));
            }
            (DVector::from_vec(values.clone()), None)
        }
        None => {
            let report = centralized_newton(&costs, &DVector::zeros(dim))?;
            (report.x_star.clone(), Some(report))
        }
    };
    Ok(Prepared { graph, matrix, costs, dim, x_star, oracle, data_rows })
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// `(1/N) sum_i ||x_i - x*||^2 / ||x*||^2`.
pub fn relative_mse(xs: &[DVector<f64>], x_star: &DVector<f64>) -> Result<f64> {
    let denom = x_star.norm_squared();
    if denom == 0.0 {
        return Err(Error::Numeric(
            "optimum is exactly zero; use absolute_mse instead of the relative metric".into(),
        ));
    }
    Ok(absolute_mse(xs, x_star) / denom)
}

/// `(1/N) sum_i ||x_i - x*||^2`, for problems whose optimum is the origin.
pub fn absolute_mse(xs: &[DVector<f64>], x_star: &DVector<f64>) -> f64 {
    let n = xs.len().max(1) as f64;
    xs.iter().map(|x| (x - x_star).norm_squared()).sum::<f64>() / n
}

// ---------------------------------------------------------------------------
// Single runs
// ---------------------------------------------------------------------------

/// Per-round snapshot. `wall_time_s` is informational and never written to
/// the deterministic output files.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub k: usize,
    pub relative_mse: f64,
    pub clamp_count: usize,
    pub states: Option<Vec<DVector<f64>>>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunOutcome {
    Completed,
    /// A step failed; the trace is truncated at the failing round.
    Failed { round: usize, message: String },
}

#[derive(Debug)]
pub struct RunResult {
    pub trace: Vec<TraceRecord>,
    pub outcome: RunOutcome,
}

impl RunResult {
    pub fn final_relative_mse(&self) -> Option<f64> {
        self.trace.last().map(|r| r.relative_mse)
    }

    /// Per-agent final error norms, when the last record carries states.
    pub fn final_agent_errors(&self, x_star: &DVector<f64>) -> Option<Vec<f64>> {
        let states = self.trace.last()?.states.as_ref()?;
        Some(states.iter().map(|x| (x - x_star).norm()).collect())
    }
}

enum Stepper {
    Nrc {
        state: Option<NrcState>,
        scheme: crate::costs::HessianScheme,
        epsilon: f64,
        c: f64,
    },
    Fnrc {
        state: Option<FnrcState>,
        scheme: crate::costs::HessianScheme,
        epsilon: f64,
        c: f64,
        phi: f64,
    },
    Dsm { state: Option<DsmState>, varrho: f64 },
    Dcm { state: Option<DcmState>, mu: f64, nu: f64 },
    Admm { state: Option<AdmmState>, delta: f64 },
}

impl Stepper {
    fn advance(&mut self, prep: &Prepared) -> Result<usize> {
        match self {
            Stepper::Nrc { state, scheme, epsilon, c } => {
                let (next, clamps) = nrc_step(
                    state.take().expect("state present"),
                    &prep.matrix,
                    &prep.costs,
                    *scheme,
                    *epsilon,
                    *c,
                )?;
                *state = Some(next);
                Ok(clamps)
            }
            Stepper::Fnrc { state, scheme, epsilon, c, phi } => {
                let (next, clamps) = fnrc_step(
                    state.take().expect("state present"),
                    &prep.matrix,
                    &prep.costs,
                    *scheme,
                    *epsilon,
                    *c,
                    *phi,
                )?;
                *state = Some(next);
                Ok(clamps)
            }
            Stepper::Dsm { state, varrho } => {
                let next = dsm_step(
                    state.take().expect("state present"),
                    &prep.matrix,
                    &prep.costs,
                    *varrho,
                )?;
                *state = Some(next);
                Ok(0)
            }
            Stepper::Dcm { state, mu, nu } => {
                let next = dcm_step(
                    state.take().expect("state present"),
                    &prep.graph,
                    &prep.costs,
                    *mu,
                    *nu,
                )?;
                *state = Some(next);
                Ok(0)
            }
            Stepper::Admm { state, delta } => {
                let next = admm_step(
                    state.take().expect("state present"),
                    &prep.graph,
                    &prep.costs,
                    *delta,
                )?;
                *state = Some(next);
                Ok(0)
            }
        }
    }

    fn positions(&self) -> &[DVector<f64>] {
        match self {
            Stepper::Nrc { state, .. } => state.as_ref().expect("state present").positions(),
            Stepper::Fnrc { state, .. } => state.as_ref().expect("state present").positions(),
            Stepper::Dsm { state, .. } => &state.as_ref().expect("state present").x,
            Stepper::Dcm { state, .. } => &state.as_ref().expect("state present").x,
            Stepper::Admm { state, .. } => &state.as_ref().expect("state present").x,
        }
    }
}

fn materialize_x0(spec: &X0Spec, n_agents: usize, dim: usize) -> Vec<DVector<f64>> {
    match spec {
        X0Spec::Zero => vec![DVector::zeros(dim); n_agents],
        X0Spec::Uniform { lo, hi, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            (0..n_agents)
                .map(|_| DVector::from_fn(dim, |_, _| rng.random_range(*lo..=*hi)))
                .collect()
        }
    }
}

fn draw_perturbation(rng: &mut ChaCha8Rng, dim: usize, sigma: f64) -> Perturbation {
    if sigma == 0.0 {
        return Perturbation::zero(dim);
    }
    let xi_y = DVector::from_fn(dim, |_, _| rng.random_range(-sigma..=sigma));
    let mut xi_z = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in i..dim {
            let v = rng.random_range(-sigma..=sigma);
            xi_z[(i, j)] = v;
            xi_z[(j, i)] = v;
        }
    }
    Perturbation::new(xi_y, xi_z).expect("symmetric by construction")
}

fn materialize_perturbation(spec: &Option<PerturbationSpec>, dim: usize) -> Option<Perturbation> {
    spec.as_ref().map(|p| {
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        draw_perturbation(&mut rng, dim, p.sigma)
    })
}

fn build_stepper(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    override_perturbation: Option<&Perturbation>,
) -> Result<Stepper> {
    let n = prep.graph.n_agents();
    let x0 = materialize_x0(&cfg.run.x0, n, prep.dim);
    let owned_pert = if override_perturbation.is_some() {
        None
    } else {
        materialize_perturbation(&cfg.run.perturbation, prep.dim)
    };
    let pert = override_perturbation.or(owned_pert.as_ref());

    Ok(match &cfg.algorithm {
        AlgorithmSpec::Nrc { epsilon, c, scheme } => Stepper::Nrc {
            state: Some(NrcState::init(&prep.costs, &x0, pert)?),
            scheme: *scheme,
            epsilon: *epsilon,
            c: *c,
        },
        AlgorithmSpec::Fnrc { epsilon, c, scheme, phi } => {
            let phi = match phi {
                Some(v) => *v,
                None => fnrc_phi(prep.matrix.rho())?,
            };
            Stepper::Fnrc {
                state: Some(FnrcState::init(&prep.costs, &x0, pert)?),
                scheme: *scheme,
                epsilon: *epsilon,
                c: *c,
                phi,
            }
        }
        AlgorithmSpec::Dsm { varrho } => {
            let mut state = DsmState::init(n, prep.dim);
            state.x = x0;
            Stepper::Dsm { state: Some(state), varrho: *varrho }
        }
        AlgorithmSpec::Dcm { mu, nu } => {
            let mu = mu.unwrap_or_else(|| 0.5 * dcm_mu_bound(&prep.graph));
            let mut state = DcmState::init(n, prep.dim);
            state.x = x0;
            Stepper::Dcm { state: Some(state), mu, nu: *nu }
        }
        AlgorithmSpec::Admm { delta } => {
            let mut state = AdmmState::init(&prep.graph, prep.dim);
            state.x = x0;
            Stepper::Admm { state: Some(state), delta: *delta }
        }
    })
}

/// Execute `rounds` synchronous rounds. A step failure truncates the trace
/// and annotates the outcome; everything else is deterministic in the
/// config.
pub fn run_prepared(cfg: &ExperimentConfig, prep: &Prepared) -> Result<RunResult> {
    run_prepared_with(cfg, prep, None)
}

fn run_prepared_with(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    override_perturbation: Option<&Perturbation>,
) -> Result<RunResult> {
    if prep.x_star.norm() == 0.0 {
        return Err(Error::Numeric(
            "optimum is exactly zero; the relative MSE trace is undefined (use absolute_mse)"
                .into(),
        ));
    }
    let mut stepper = build_stepper(cfg, prep, override_perturbation)?;
    let started = Instant::now();
    let mut trace = Vec::with_capacity(cfg.run.rounds);
    for k in 1..=cfg.run.rounds {
        match stepper.advance(prep) {
            Ok(clamp_count) => {
                let xs = stepper.positions();
                let mse = xs
                    .iter()
                    .map(|x| (x - &prep.x_star).norm_squared())
                    .sum::<f64>()
                    / xs.len() as f64
                    / prep.x_star.norm_squared();
                let states = if cfg.run.record_states && k % cfg.run.thin == 0 {
                    Some(xs.to_vec())
                } else {
                    None
                };
                trace.push(TraceRecord {
                    k,
                    relative_mse: mse,
                    clamp_count,
                    states,
                    wall_time_s: started.elapsed().as_secs_f64(),
                });
            }
            Err(e) => {
                return Ok(RunResult {
                    trace,
                    outcome: RunOutcome::Failed { round: k, message: e.to_string() },
                })
            }
        }
    }
    Ok(RunResult { trace, outcome: RunOutcome::Completed })
}

/// Prepare and run in one call.
pub fn run(cfg: &ExperimentConfig) -> Result<(Prepared, RunResult)> {
    let prep = prepare(cfg)?;
    let result = run_prepared(cfg, &prep)?;
    Ok((prep, result))
}

/// First round at which the relative MSE has changed by less than `tol`
/// for `window` consecutive rounds, with the plateau value at that round.
pub fn plateau_round(trace: &[TraceRecord], tol: f64, window: usize) -> Option<(usize, f64)> {
    if trace.len() < window + 1 {
        return None;
    }
    let mut quiet = 0usize;
    for i in 1..trace.len() {
        let delta = (trace[i].relative_mse - trace[i - 1].relative_mse).abs();
        if delta < tol {
            quiet += 1;
            if quiet >= window {
                return Some((trace[i].k, trace[i].relative_mse));
            }
        } else {
            quiet = 0;
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Parameter sweeps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Epsilon,
    Varrho,
    Mu,
    Delta,
    Phi,
}

impl SweepParam {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepParam::Epsilon => "epsilon",
            SweepParam::Varrho => "varrho",
            SweepParam::Mu => "mu",
            SweepParam::Delta => "delta",
            SweepParam::Phi => "phi",
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "epsilon" | "eps" => Ok(SweepParam::Epsilon),
            "varrho" | "rho-step" => Ok(SweepParam::Varrho),
            "mu" => Ok(SweepParam::Mu),
            "delta" => Ok(SweepParam::Delta),
            "phi" => Ok(SweepParam::Phi),
            other => Err(Error::InvalidConfig(format!(
                "unknown sweep parameter '{other}' (expected epsilon, varrho, mu, delta or phi)"
            ))),
        }
    }
}

/// Return a copy of `cfg` with the swept parameter set to `value`. Errors
/// when the parameter does not belong to the configured algorithm.
pub fn apply_param(cfg: &ExperimentConfig, param: SweepParam, value: f64) -> Result<ExperimentConfig> {
    let mut out = cfg.clone();
    match (&mut out.algorithm, param) {
        (AlgorithmSpec::Nrc { epsilon, .. }, SweepParam::Epsilon) => *epsilon = value,
        (AlgorithmSpec::Fnrc { epsilon, .. }, SweepParam::Epsilon) => *epsilon = value,
        (AlgorithmSpec::Fnrc { phi, .. }, SweepParam::Phi) => *phi = Some(value),
        (AlgorithmSpec::Dsm { varrho }, SweepParam::Varrho) => *varrho = value,
        (AlgorithmSpec::Dcm { mu, .. }, SweepParam::Mu) => *mu = Some(value),
        (AlgorithmSpec::Admm { delta }, SweepParam::Delta) => *delta = value,
        (algo, p) => {
            return Err(Error::InvalidConfig(format!(
                "parameter '{}' does not apply to algorithm '{}'",
                p.as_str(),
                algo.name()
            )))
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepStatus {
    Stable,
    Unstable,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub param: &'static str,
    pub value: f64,
    pub mse_at_probe: f64,
    pub status: SweepStatus,
}

/// Relative MSE at `probe_round` for every grid value, run independently.
/// Divergent settings are data, not errors: non-finite or huge probes and
/// truncated runs are flagged unstable. Mixing-gain grids are clamped into
/// the stability interval.
pub fn sweep(
    base: &ExperimentConfig,
    prep: &Prepared,
    param: SweepParam,
    grid: &[f64],
    probe_round: usize,
) -> Result<Vec<SweepRow>> {
    sweep_impl(base, prep, param, grid, probe_round, false)
}

/// Strictly single-threaded variant of [`sweep`], kept for benchmarking.
pub fn sweep_serial(
    base: &ExperimentConfig,
    prep: &Prepared,
    param: SweepParam,
    grid: &[f64],
    probe_round: usize,
) -> Result<Vec<SweepRow>> {
    sweep_impl(base, prep, param, grid, probe_round, true)
}

fn sweep_impl(
    base: &ExperimentConfig,
    prep: &Prepared,
    param: SweepParam,
    grid: &[f64],
    probe_round: usize,
    serial: bool,
) -> Result<Vec<SweepRow>> {
    if probe_round == 0 {
        return Err(Error::InvalidConfig("probe round must be at least 1".into()));
    }
    if grid.is_empty() {
        return Err(Error::InvalidConfig("sweep grid is empty".into()));
    }
    let mu_cap = dcm_mu_bound(&prep.graph) * (1.0 - 1e-9);
    let values: Vec<f64> = grid
        .iter()
        .map(|&v| if param == SweepParam::Mu { v.min(mu_cap) } else { v })
        .collect();

    let mut configs = Vec::with_capacity(values.len());
    for &v in &values {
        let mut cfg = apply_param(base, param, v)?;
        cfg.run.rounds = probe_round;
        cfg.run.record_states = false;
        cfg.run.perturbation = None;
        configs.push((v, cfg));
    }

    let worker = |(value, cfg): (f64, ExperimentConfig)| -> SweepRow {
        let (mse, status) = match run_prepared(&cfg, prep) {
            Ok(result) => match result.trace.last() {
                Some(rec) if rec.k == probe_round => {
                    let m = rec.relative_mse;
                    if m.is_finite() && m <= UNSTABLE_MSE_SENTINEL {
                        (m, SweepStatus::Stable)
                    } else {
                        (m, SweepStatus::Unstable)
                    }
                }
                _ => (f64::INFINITY, SweepStatus::Unstable),
            },
            Err(_) => (f64::INFINITY, SweepStatus::Unstable),
        };
        SweepRow { param: param.as_str(), value, mse_at_probe: mse, status }
    };

    Ok(if serial {
        par::map_serial(configs, worker)
    } else {
        par::map(configs, worker)
    })
}

// ---------------------------------------------------------------------------
// Monte Carlo perturbation study
// ---------------------------------------------------------------------------

/// Error samples for one perturbation width: `per_run_errors[r][i]` is agent
/// `i`'s final distance to the optimum in replicate `r`. Replicates that
/// diverge or fail record infinite errors.
#[derive(Debug, Clone)]
pub struct PerturbationSamples {
    pub sigma: f64,
    pub per_run_errors: Vec<Vec<f64>>,
}

impl PerturbationSamples {
    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.per_run_errors.iter().flatten().copied()
    }

    pub fn median_error(&self) -> f64 {
        let mut all: Vec<f64> = self.flat().collect();
        if all.is_empty() {
            return f64::NAN;
        }
        all.sort_by(|a, b| a.total_cmp(b));
        all[all.len() / 2]
    }

    pub fn max_error(&self) -> f64 {
        self.flat().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn quantile(&self, q: f64) -> f64 {
        let mut all: Vec<f64> = self.flat().collect();
        all.sort_by(|a, b| a.total_cmp(b));
        let idx = ((all.len() as f64 - 1.0) * q).round() as usize;
        all[idx]
    }
}

/// For each width, draw register offsets uniform on `[-sigma, sigma]`
/// (replicate `r` of width index `s` uses stream `s * runs + r` of the
/// seeded generator), run the full round budget, and record each agent's
/// final distance to the oracle optimum.
pub fn monte_carlo_perturbation(
    base: &ExperimentConfig,
    prep: &Prepared,
    sigmas: &[f64],
    runs_per_sigma: usize,
    seed: u64,
) -> Result<Vec<PerturbationSamples>> {
    monte_carlo_impl(base, prep, sigmas, runs_per_sigma, seed, false)
}

/// Strictly single-threaded variant of [`monte_carlo_perturbation`].
pub fn monte_carlo_perturbation_serial(
    base: &ExperimentConfig,
    prep: &Prepared,
    sigmas: &[f64],
    runs_per_sigma: usize,
    seed: u64,
) -> Result<Vec<PerturbationSamples>> {
    monte_carlo_impl(base, prep, sigmas, runs_per_sigma, seed, true)
}

fn monte_carlo_impl(
    base: &ExperimentConfig,
    prep: &Prepared,
    sigmas: &[f64],
    runs_per_sigma: usize,
    seed: u64,
    serial: bool,
) -> Result<Vec<PerturbationSamples>> {
    if runs_per_sigma == 0 {
        return Err(Error::InvalidConfig("need at least one run per sigma".into()));
    }
    if !matches!(
        base.algorithm,
        AlgorithmSpec::Nrc { .. } | AlgorithmSpec::Fnrc { .. }
    ) {
        return Err(Error::InvalidConfig(
            "register perturbation applies to the consensus-register algorithms only".into(),
        ));
    }
    let mut cfg = base.clone();
    // only the final positions matter; keep exactly one snapshot
    cfg.run.record_states = true;
    cfg.run.thin = cfg.run.rounds;
    cfg.run.perturbation = None;

    let jobs: Vec<(usize, usize)> = (0..sigmas.len())
        .flat_map(|s| (0..runs_per_sigma).map(move |r| (s, r)))
        .collect();
    let n_agents = prep.graph.n_agents();

    let worker = |(s, r): (usize, usize)| -> Vec<f64> {
        let sigma = sigmas[s];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream((s * runs_per_sigma + r) as u64);
        let pert = draw_perturbation(&mut rng, prep.dim, sigma);
        match run_prepared_with(&cfg, prep, Some(&pert)) {
            Ok(result) => result
                .final_agent_errors(&prep.x_star)
                .unwrap_or_else(|| vec![f64::INFINITY; n_agents]),
            Err(_) => vec![f64::INFINITY; n_agents],
        }
    };

    let flat: Vec<Vec<f64>> = if serial {
        par::map_serial(jobs, worker)
    } else {
        par::map(jobs, worker)
    };

    Ok(sigmas
        .iter()
        .enumerate()
        .map(|(s, &sigma)| PerturbationSamples {
            sigma,
            per_run_errors: flat[s * runs_per_sigma..(s + 1) * runs_per_sigma].to_vec(),
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Output rendering
// ---------------------------------------------------------------------------

/// Metadata echoed into every artifact: the resolved config, the consensus
/// spectrum, the step-size suggestion, and the oracle with its termination
/// certificate.
#[derive(Debug, Serialize)]
pub struct RunMetadata<'a> {
    pub config: &'a ExperimentConfig,
    pub n_agents: usize,
    pub dim: usize,
    pub rho: f64,
    pub sigma: f64,
    pub suggested_epsilon: f64,
    pub x_star: Vec<f64>,
    pub oracle_iterations: Option<usize>,
    pub oracle_certificate: Option<Vec<f64>>,
    pub data_rows: Option<usize>,
}

pub fn metadata<'a>(cfg: &'a ExperimentConfig, prep: &Prepared) -> RunMetadata<'a> {
    RunMetadata {
        config: cfg,
        n_agents: prep.graph.n_agents(),
        dim: prep.dim,
        rho: prep.matrix.rho(),
        sigma: prep.matrix.sigma(),
        suggested_epsilon: prep.matrix.sigma() * DEFAULT_EPSILON_SAFETY,
        x_star: prep.x_star.iter().copied().collect(),
        oracle_iterations: prep.oracle.as_ref().map(|o| o.iterations),
        oracle_certificate: prep.oracle.as_ref().map(|o| o.final_changes.clone()),
        data_rows: prep.data_rows,
    }
}

pub fn metadata_json(cfg: &ExperimentConfig, prep: &Prepared) -> String {
    serde_json::to_string_pretty(&metadata(cfg, prep)).expect("metadata serializes")
}

fn config_header(cfg: &ExperimentConfig) -> String {
    format!(
        "# config: {}\n",
        serde_json::to_string(cfg).expect("config serializes")
    )
}

/// `k,relative_mse,clamp_count` with the resolved config embedded as a
/// leading comment line.
pub fn summary_csv(cfg: &ExperimentConfig, result: &RunResult) -> String {
    let mut out = config_header(cfg);
    out.push_str("k,relative_mse,clamp_count\n");
    for rec in &result.trace {
        out.push_str(&format!("{},{},{}\n", rec.k, rec.relative_mse, rec.clamp_count));
    }
    if let RunOutcome::Failed { round, message } = &result.outcome {
        out.push_str(&format!("# truncated at round {round}: {message}\n"));
    }
    out
}

/// `k,agent,coord,value` for the recorded (possibly thinned) snapshots.
pub fn states_csv(cfg: &ExperimentConfig, result: &RunResult) -> String {
    let mut out = config_header(cfg);
    out.push_str("k,agent,coord,value\n");
    for rec in &result.trace {
        if let Some(states) = &rec.states {
            for (agent, x) in states.iter().enumerate() {
                for (coord, v) in x.iter().enumerate() {
                    out.push_str(&format!("{},{agent},{coord},{v}\n", rec.k));
                }
            }
        }
    }
    out
}

/// `param,value,mse_at_probe,status`.
pub fn sweep_csv(cfg: &ExperimentConfig, rows: &[SweepRow]) -> String {
    let mut out = config_header(cfg);
    out.push_str("param,value,mse_at_probe,status\n");
    for row in rows {
        let status = match row.status {
            SweepStatus::Stable => "stable",
            SweepStatus::Unstable => "unstable",
        };
        out.push_str(&format!(
            "{},{},{},{status}\n",
            row.param, row.value, row.mse_at_probe
        ));
    }
    out
}

/// `sigma,run,agent,error`.
pub fn perturbation_csv(cfg: &ExperimentConfig, samples: &[PerturbationSamples]) -> String {
    let mut out = config_header(cfg);
    out.push_str("sigma,run,agent,error\n");
    for s in samples {
        for (run, errors) in s.per_run_errors.iter().enumerate() {
            for (agent, e) in errors.iter().enumerate() {
                out.push_str(&format!("{},{run},{agent},{e}\n", s.sigma));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::preset;

    fn quad_config(rounds: usize) -> ExperimentConfig {
        let mut cfg = preset("quadratic-eps1").unwrap();
        cfg.run.rounds = rounds;
        cfg
    }

    #[test]
    fn relative_mse_examples() {
        let star = DVector::from_element(1, 1.0);
        let all_there = vec![star.clone(), star.clone()];
        assert_eq!(relative_mse(&all_there, &star).unwrap(), 0.0);

        let split = vec![DVector::from_element(1, 0.0), DVector::from_element(1, 2.0)];
        assert!((relative_mse(&split, &star).unwrap() - 1.0).abs() < 1e-15);

        let doubled = vec![&star * 2.0];
        assert!((relative_mse(&doubled, &star).unwrap() - 1.0).abs() < 1e-15);

        assert!(relative_mse(&all_there, &DVector::zeros(1)).is_err());
        assert!((absolute_mse(&split, &DVector::zeros(1)) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn one_round_gives_one_record() {
        let cfg = quad_config(1);
        let (_prep, result) = run(&cfg).unwrap();
        assert_eq!(result.trace.len(), 1);
        assert_eq!(result.trace[0].k, 1);
        assert_eq!(result.outcome, RunOutcome::Completed);
    }

    #[test]
    fn rerun_reproduces_identical_bytes() {
        let mut cfg = quad_config(40);
        cfg.run.record_states = true;
        cfg.run.thin = 10;
        let prep = prepare(&cfg).unwrap();
        let a = run_prepared(&cfg, &prep).unwrap();
        let b = run_prepared(&cfg, &prep).unwrap();
        assert_eq!(summary_csv(&cfg, &a), summary_csv(&cfg, &b));
        assert_eq!(states_csv(&cfg, &a), states_csv(&cfg, &b));
        // and across a fresh preparation
        let prep2 = prepare(&cfg).unwrap();
        let c = run_prepared(&cfg, &prep2).unwrap();
        assert_eq!(summary_csv(&cfg, &a), summary_csv(&cfg, &c));
    }

    #[test]
    fn quadratic_full_step_reaches_deep_accuracy() {
        let cfg = quad_config(3000);
        let (_prep, result) = run(&cfg).unwrap();
        assert!(result.final_relative_mse().unwrap() < 1e-12);
    }

    #[test]
    fn plateau_detection_finds_quiet_tail() {
        let cfg = quad_config(3000);
        let (_prep, result) = run(&cfg).unwrap();
        let (k, value) = plateau_round(&result.trace, PLATEAU_TOL, PLATEAU_WINDOW).unwrap();
        assert!(k < 3000);
        assert!(value < 1e-6);
    }

    #[test]
    fn sweep_single_point_and_determinism_across_thread_counts() {
        let cfg = quad_config(50);
        let prep = prepare(&cfg).unwrap();
        let rows = sweep(&cfg, &prep, SweepParam::Epsilon, &[1.0], 40).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].param, "epsilon");
        assert_eq!(rows[0].status, SweepStatus::Stable);

        let grid: Vec<f64> = (0..8).map(|i| 0.1 + 0.1 * i as f64).collect();
        let par_rows = par::with_jobs(Some(4), || {
            sweep(&cfg, &prep, SweepParam::Epsilon, &grid, 40).unwrap()
        });
        let ser_rows = sweep_serial(&cfg, &prep, SweepParam::Epsilon, &grid, 40).unwrap();
        assert_eq!(sweep_csv(&cfg, &par_rows), sweep_csv(&cfg, &ser_rows));
    }

    #[test]
    fn sweep_flags_divergent_settings() {
        // the gradient-descent surrogate at full step size overshoots badly
        // on a stiff quadratic network and the probe lands on a huge MSE
        let mut cfg = quad_config(40);
        cfg.algorithm = AlgorithmSpec::Nrc {
            epsilon: 1.0,
            c: crate::config::DEFAULT_CLAMP_C,
            scheme: crate::costs::HessianScheme::Gdc,
        };
        cfg.costs = CostSpec::Quadratic {
            dim: 2,
            seed: 8,
            eig_min: 0.5,
            eig_max: 40.0,
            center_scale: 3.0,
        };
        let prep = prepare(&cfg).unwrap();
        let rows = sweep(&cfg, &prep, SweepParam::Epsilon, &[1.0], 40).unwrap();
        assert_eq!(rows[0].status, SweepStatus::Unstable);
    }

    #[test]
    fn sweep_rejects_foreign_parameters() {
        let cfg = quad_config(10);
        let prep = prepare(&cfg).unwrap();
        assert!(sweep(&cfg, &prep, SweepParam::Delta, &[0.5], 5).is_err());
    }

    #[test]
    fn sweep_clamps_mixing_gain_into_the_stability_interval() {
        let mut cfg = quad_config(10);
        cfg.algorithm = AlgorithmSpec::Dcm { mu: None, nu: 1.7 };
        let prep = prepare(&cfg).unwrap();
        // ring of degree 2: bound is 0.4; grid points above it get clamped
        let rows = sweep(&cfg, &prep, SweepParam::Mu, &[0.1, 0.5, 1.0], 5).unwrap();
        let bound = crate::baselines::dcm_mu_bound(&prep.graph);
        assert_eq!(rows[0].value, 0.1);
        assert!(rows[1].value < bound && rows[2].value < bound);
        assert!(rows.iter().all(|r| r.status == SweepStatus::Stable));
    }

    #[test]
    fn monte_carlo_zero_width_hits_solver_floor() {
        let mut cfg = preset("fig2b").unwrap();
        cfg.run.rounds = 1500;
        let prep = prepare(&cfg).unwrap();
        let samples = monte_carlo_perturbation(&cfg, &prep, &[0.0], 3, 77).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].per_run_errors.len(), 3);
        // epsilon = 0.01 for 1500 rounds contracts the transient far below
        // the plateau used by the full study
        assert!(samples[0].max_error() < 1e-4);
    }

    #[test]
    fn monte_carlo_is_deterministic_and_width_monotone() {
        let mut cfg = preset("fig2b").unwrap();
        cfg.run.rounds = 800;
        let prep = prepare(&cfg).unwrap();
        let a = monte_carlo_perturbation(&cfg, &prep, &[1e-4, 1e-3, 1e-2], 6, 5).unwrap();
        let b = monte_carlo_perturbation_serial(&cfg, &prep, &[1e-4, 1e-3, 1e-2], 6, 5).unwrap();
        assert_eq!(perturbation_csv(&cfg, &a), perturbation_csv(&cfg, &b));
        // error-distribution quartiles widen monotonically with sigma
        for q in [0.25, 0.5, 0.75] {
            assert!(a[0].quantile(q) < a[1].quantile(q));
            assert!(a[1].quantile(q) < a[2].quantile(q));
        }
    }

    #[test]
    fn halving_the_perturbation_roughly_halves_the_limit_error() {
        let mut cfg = preset("fig2b").unwrap();
        cfg.run.rounds = 1500;
        let prep = prepare(&cfg).unwrap();
        let samples = monte_carlo_perturbation(&cfg, &prep, &[0.005, 0.01], 40, 9).unwrap();
        let ratio = samples[1].median_error() / samples[0].median_error();
        assert!(
            (1.0..=3.0).contains(&ratio),
            "median-error ratio {ratio} outside the factor-2 +/- 50% band"
        );
    }

    #[test]
    fn metadata_embeds_oracle_and_spectrum() {
        let cfg = quad_config(5);
        let prep = prepare(&cfg).unwrap();
        let json = metadata_json(&cfg, &prep);
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(value["n_agents"], 30);
        assert!(value["rho"].as_f64().unwrap() > 0.98);
        assert_eq!(value["x_star"].as_array().unwrap().len(), 3);
        assert!(value["oracle_iterations"].as_u64().unwrap() >= 1);
        assert_eq!(
            value["oracle_certificate"].as_array().unwrap().len(),
            crate::costs::ORACLE_QUIET_STEPS
        );
    }

    #[test]
    fn precomputed_oracle_is_honored() {
        let mut cfg = quad_config(5);
        cfg.run.oracle = Some(vec![0.1, 0.2, 0.3]);
        let prep = prepare(&cfg).unwrap();
        assert!(prep.oracle.is_none());
        assert_eq!(prep.x_star, DVector::from_vec(vec![0.1, 0.2, 0.3]));
        cfg.run.oracle = Some(vec![0.1]);
        assert!(prepare(&cfg).is_err());
    }
}
