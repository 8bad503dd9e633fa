//! Local cost functions with analytic value/gradient/Hessian, the `g`/`h`
//! transforms the consensus algorithms exchange, and a centralized Newton
//! oracle used as ground truth.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// A twice-differentiable local cost. Implementations are immutable after
/// construction and safe to evaluate concurrently.
pub trait CostFunction: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

/// Which local curvature surrogate an agent communicates.
///
/// Full Hessian gives Newton steps, the diagonal a Jacobi approximation, the
/// identity plain gradient descent. The three trade convergence speed against
/// per-round computation and bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HessianScheme {
    /// `h_i(x) = hessian(x)` — Newton-Raphson consensus.
    Nrc,
    /// `h_i(x) = diag[hessian(x)]` — Jacobi consensus.
    Jc,
    /// `h_i(x) = I` — gradient-descent consensus.
    Gdc,
}

impl std::str::FromStr for HessianScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nrc" => Ok(HessianScheme::Nrc),
            "jc" => Ok(HessianScheme::Jc),
            "gdc" => Ok(HessianScheme::Gdc),
            other => Err(Error::InvalidConfig(format!(
                "unknown Hessian scheme '{other}' (expected nrc, jc or gdc)"
            ))),
        }
    }
}

/// Curvature surrogate per scheme: full Hessian, its diagonal, or identity.
pub fn h_of(f: &dyn CostFunction, scheme: HessianScheme, x: &DVector<f64>) -> DMatrix<f64> {
    match scheme {
        HessianScheme::Nrc => f.hessian(x),
        HessianScheme::Jc => DMatrix::from_diagonal(&f.hessian(x).diagonal()),
        HessianScheme::Gdc => DMatrix::identity(f.dim(), f.dim()),
    }
}

/// First-order transform `g_i(x) = h_i(x) x - grad f_i(x)`; the network
/// average of these encodes the numerator of a Newton step.
pub fn g_of(f: &dyn CostFunction, scheme: HessianScheme, x: &DVector<f64>) -> Result<DVector<f64>> {
    let g = h_of(f, scheme, x) * x - f.gradient(x);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(
            "non-finite intermediate while evaluating g(x)".into(),
        ));
    }
    Ok(g)
}

// ---------------------------------------------------------------------------
// Cost families
// ---------------------------------------------------------------------------

/// `f(x) = 1/2 (x-d)^T A (x-d) + e` with symmetric positive-definite `A`.
#[derive(Debug, Clone)]
pub struct QuadraticCost {
    a: DMatrix<f64>,
    d: DVector<f64>,
    e: f64,
}

impl QuadraticCost {
    pub fn new(a: DMatrix<f64>, d: DVector<f64>, e: f64) -> Result<Self> {
        linalg::ensure_symmetric(&a, 1e-12, "quadratic cost matrix")?;
        if a.nrows() != d.len() {
            return Err(Error::DimensionMismatch(format!(
                "matrix is {}x{} but center has length {}",
                a.nrows(),
                a.ncols(),
                d.len()
            )));
        }
        if linalg::min_eigenvalue_sym(&a) <= 0.0 {
            return Err(Error::InvalidConfig(
                "quadratic cost matrix must be positive definite".into(),
            ));
        }
        Ok(QuadraticCost { a, d, e })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.d
    }
}

impl CostFunction for QuadraticCost {
    fn dim(&self) -> usize {
        self.d.len()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let r = x - &self.d;
        0.5 * (&self.a * &r).dot(&r) + self.e
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * (x - &self.d)
    }

    fn hessian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.a.clone()
    }
}

/// Scalar cost `f(x) = c e^{a x} + d e^{-b x}` with positive coefficients;
/// strictly convex with a unique minimizer.
#[derive(Debug, Clone)]
pub struct ExpSumCost {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
}

impl ExpSumCost {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        for (name, v) in [("a", a), ("b", b), ("c", c), ("d", d)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "exp-sum coefficient {name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(ExpSumCost { a, b, c, d })
    }
}

impl CostFunction for ExpSumCost {
    fn dim(&self) -> usize {
        1
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let t = x[0];
        self.c * (self.a * t).exp() + self.d * (-self.b * t).exp()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let t = x[0];
        DVector::from_element(
            1,
            self.c * self.a * (self.a * t).exp() - self.d * self.b * (-self.b * t).exp(),
        )
    }

    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let t = x[0];
        DMatrix::from_element(
            1,
            1,
            self.c * self.a * self.a * (self.a * t).exp()
                + self.d * self.b * self.b * (-self.b * t).exp(),
        )
    }
}

/// Numerically stable `log(1 + e^{-m})`.
fn softplus_neg(m: f64) -> f64 {
    if m >= 0.0 {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    }
}

/// Numerically stable logistic sigmoid.
fn sigmoid(m: f64) -> f64 {
    if m >= 0.0 {
        1.0 / (1.0 + (-m).exp())
    } else {
        let e = m.exp();
        e / (1.0 + e)
    }
}

/// Binomial-deviance classification cost over labeled examples
/// `(features, label)` with labels in `{-1, +1}`:
///
/// `f(x) = sum_j log(1 + exp(-y_j (chi_j^T x' + x0))) + gamma ||x'||^2`
///
/// where `x = (x', x0)` splits into weights and intercept; the ridge term
/// applies to the weights only.
#[derive(Debug, Clone)]
pub struct BinomialDevianceCost {
    dim: usize,
    examples: Vec<(DVector<f64>, f64)>,
    gamma: f64,
}

impl BinomialDevianceCost {
    /// `dim` is the optimization dimension (features + intercept); an empty
    /// example list yields the pure ridge cost, which is still convex.
    pub fn new(dim: usize, examples: Vec<(DVector<f64>, f64)>, gamma: f64) -> Result<Self> {
        if dim < 1 {
            return Err(Error::InvalidConfig("dimension must be at least 1".into()));
        }
        if !(gamma > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "ridge weight gamma must be positive, got {gamma}"
            )));
        }
        for (chi, y) in &examples {
            if chi.len() != dim - 1 {
                return Err(Error::DimensionMismatch(format!(
                    "feature vector has length {} but dim-1 = {}",
                    chi.len(),
                    dim - 1
                )));
            }
            if *y != 1.0 && *y != -1.0 {
                return Err(Error::InvalidConfig(format!(
                    "classification label must be -1 or +1, got {y}"
                )));
            }
        }
        Ok(BinomialDevianceCost { dim, examples, gamma })
    }

    pub fn n_examples(&self) -> usize {
        self.examples.len()
    }

    fn margin(&self, chi: &DVector<f64>, y: f64, x: &DVector<f64>) -> f64 {
        let n = self.dim;
        let mut dot = x[n - 1]; // intercept
        for k in 0..n - 1 {
            dot += chi[k] * x[k];
        }
        y * dot
    }
}

impl CostFunction for BinomialDevianceCost {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let n = self.dim;
        let ridge: f64 = (0..n - 1).map(|k| x[k] * x[k]).sum();
        let loss: f64 = self
            .examples
            .iter()
            .map(|(chi, y)| softplus_neg(self.margin(chi, *y, x)))
            .sum();
        loss + self.gamma * ridge
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.dim;
        let mut grad = DVector::zeros(n);
        for (chi, y) in &self.examples {
            let m = self.margin(chi, *y, x);
            // d/dm log(1+e^{-m}) = -sigmoid(-m)
            let s = -sigmoid(-m) * y;
            for k in 0..n - 1 {
                grad[k] += s * chi[k];
            }
            grad[n - 1] += s;
        }
        for k in 0..n - 1 {
            grad[k] += 2.0 * self.gamma * x[k];
        }
        grad
    }

    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim;
        let mut h = DMatrix::zeros(n, n);
        for (chi, y) in &self.examples {
            let m = self.margin(chi, *y, x);
            let w = sigmoid(m) * sigmoid(-m); // y^2 = 1
            let ext = |k: usize| if k == n - 1 { 1.0 } else { chi[k] };
            for r in 0..n {
                for c in 0..n {
                    h[(r, c)] += w * ext(r) * ext(c);
                }
            }
        }
        for k in 0..n - 1 {
            h[(k, k)] += 2.0 * self.gamma;
        }
        h
    }
}

/// Robust regression cost using a smooth C2 variant of the Huber loss:
///
/// `f(x) = sum_j r_j^2 / (|r_j| + beta) + gamma ||x'||^2`,
/// `r_j = y_j - chi_j^T x' - x0`.
///
/// Per-residual derivatives, valid across `r = 0`:
/// first `r (|r| + 2 beta) / (|r| + beta)^2`, second `2 beta^2 / (|r| + beta)^3`.
#[derive(Debug, Clone)]
pub struct SmoothHuberRegressionCost {
    dim: usize,
    examples: Vec<(DVector<f64>, f64)>,
    beta: f64,
    gamma: f64,
}

impl SmoothHuberRegressionCost {
    pub fn new(
        dim: usize,
        examples: Vec<(DVector<f64>, f64)>,
        beta: f64,
        gamma: f64,
    ) -> Result<Self> {
        if dim < 1 {
            return Err(Error::InvalidConfig("dimension must be at least 1".into()));
        }
        if !(beta > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "loss scale beta must be positive, got {beta}"
            )));
        }
        if !(gamma > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "ridge weight gamma must be positive, got {gamma}"
            )));
        }
        for (chi, _) in &examples {
            if chi.len() != dim - 1 {
                return Err(Error::DimensionMismatch(format!(
                    "feature vector has length {} but dim-1 = {}",
                    chi.len(),
                    dim - 1
                )));
            }
        }
        Ok(SmoothHuberRegressionCost { dim, examples, beta, gamma })
    }

    pub fn n_examples(&self) -> usize {
        self.examples.len()
    }

    fn residual(&self, chi: &DVector<f64>, y: f64, x: &DVector<f64>) -> f64 {
        let n = self.dim;
        let mut pred = x[n - 1];
        for k in 0..n - 1 {
            pred += chi[k] * x[k];
        }
        y - pred
    }
}

/// Per-residual loss `r^2 / (|r| + beta)` and its first two derivatives.
fn smooth_huber(r: f64, beta: f64) -> (f64, f64, f64) {
    let a = r.abs() + beta;
    let value = r * r / a;
    let d1 = r * (r.abs() + 2.0 * beta) / (a * a);
    let d2 = 2.0 * beta * beta / (a * a * a);
    (value, d1, d2)
}

impl CostFunction for SmoothHuberRegressionCost {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let n = self.dim;
        let ridge: f64 = (0..n - 1).map(|k| x[k] * x[k]).sum();
        let loss: f64 = self
            .examples
            .iter()
            .map(|(chi, y)| smooth_huber(self.residual(chi, *y, x), self.beta).0)
            .sum();
        loss + self.gamma * ridge
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.dim;
        let mut grad = DVector::zeros(n);
        for (chi, y) in &self.examples {
            let r = self.residual(chi, *y, x);
            let (_, d1, _) = smooth_huber(r, self.beta);
            // dr/dx' = -chi, dr/dx0 = -1
            for k in 0..n - 1 {
                grad[k] -= d1 * chi[k];
            }
            grad[n - 1] -= d1;
        }
        for k in 0..n - 1 {
            grad[k] += 2.0 * self.gamma * x[k];
        }
        grad
    }

    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim;
        let mut h = DMatrix::zeros(n, n);
        for (chi, y) in &self.examples {
            let r = self.residual(chi, *y, x);
            let (_, _, d2) = smooth_huber(r, self.beta);
            let ext = |k: usize| if k == n - 1 { 1.0 } else { chi[k] };
            for row in 0..n {
                for col in 0..n {
                    h[(row, col)] += d2 * ext(row) * ext(col);
                }
            }
        }
        for k in 0..n - 1 {
            h[(k, k)] += 2.0 * self.gamma;
        }
        h
    }
}

// ---------------------------------------------------------------------------
// Centralized oracle
// ---------------------------------------------------------------------------

/// Relative-change threshold interpreted from the termination rule
/// "changed less than 1e-9 percent".
pub const ORACLE_REL_CHANGE: f64 = 1e-11;
/// Number of consecutive small steps required before declaring convergence.
pub const ORACLE_QUIET_STEPS: usize = 5;
/// Hard cap on Newton iterations.
pub const ORACLE_MAX_ITERATIONS: usize = 10_000;
const ORACLE_MAX_BACKTRACKS: usize = 30;

/// Result of the centralized Newton solve: the minimizer, the iteration
/// count, and the relative changes over the final quiet window (the
/// termination certificate).
#[derive(Debug, Clone)]
pub struct NewtonReport {
    pub x_star: DVector<f64>,
    pub iterations: usize,
    pub final_changes: Vec<f64>,
}

/// Full Newton iterations on the average cost, with step halving when a step
/// would increase the objective. Terminates once the relative change of the
/// iterate stays below [`ORACLE_REL_CHANGE`] for [`ORACLE_QUIET_STEPS`]
/// consecutive steps.
pub fn centralized_newton(
    costs: &[Box<dyn CostFunction>],
    x0: &DVector<f64>,
) -> Result<NewtonReport> {
    if costs.is_empty() {
        return Err(Error::InvalidConfig("need at least one cost".into()));
    }
    let n = costs[0].dim();
    for (i, c) in costs.iter().enumerate() {
        if c.dim() != n {
            return Err(Error::DimensionMismatch(format!(
                "cost {i} has dimension {} but cost 0 has {n}",
                c.dim()
            )));
        }
    }
    if x0.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "start point has length {} but costs have dimension {n}",
            x0.len()
        )));
    }

    let inv_n = 1.0 / costs.len() as f64;
    let mean_value = |x: &DVector<f64>| -> f64 {
        costs.iter().map(|c| c.value(x)).sum::<f64>() * inv_n
    };

    let mut x = x0.clone();
    let mut fx = mean_value(&x);
    let mut recent: VecDeque<f64> = VecDeque::with_capacity(ORACLE_QUIET_STEPS);

    for iter in 1..=ORACLE_MAX_ITERATIONS {
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        for c in costs.iter() {
            grad += c.gradient(&x);
            hess += c.hessian(&x);
        }
        grad *= inv_n;
        hess *= inv_n;

        let direction = linalg::spd_solve(&hess, &grad, "centralized Newton")?;

        // halve the step while it increases the mean cost; increases below
        // the rounding resolution of the value are accepted so the search
        // cannot stall at the floating-point floor
        let floor = 1e-12 * (1.0 + fx.abs());
        let mut t = 1.0;
        let mut candidate = &x - &direction;
        let mut fc = mean_value(&candidate);
        let mut backtracks = 0;
        while fc > fx + floor && backtracks < ORACLE_MAX_BACKTRACKS {
            t *= 0.5;
            candidate = &x - &(&direction * t);
            fc = mean_value(&candidate);
            backtracks += 1;
        }

        let change = (&candidate - &x).norm() / x.norm().max(1.0);
        if !change.is_finite() {
            return Err(Error::Numeric("non-finite Newton step".into()));
        }
        x = candidate;
        fx = fc;

        if recent.len() == ORACLE_QUIET_STEPS {
            recent.pop_front();
        }
        recent.push_back(change);
        if recent.len() == ORACLE_QUIET_STEPS && recent.iter().all(|c| *c < ORACLE_REL_CHANGE) {
            return Ok(NewtonReport {
                x_star: x,
                iterations: iter,
                final_changes: recent.into_iter().collect(),
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: ORACLE_MAX_ITERATIONS,
        context: "centralized Newton oracle".into(),
    })
}

/// Closed-form minimizer `(sum A_i)^-1 (sum A_i d_i)` of a quadratic family,
/// assembled from Hessians and gradients at the origin.
pub fn quadratic_closed_form(costs: &[Box<dyn CostFunction>]) -> Result<DVector<f64>> {
    if costs.is_empty() {
        return Err(Error::InvalidConfig("need at least one cost".into()));
    }
    let n = costs[0].dim();
    let zero = DVector::zeros(n);
    let mut a_sum = DMatrix::zeros(n, n);
    let mut ad_sum = DVector::zeros(n);
    for c in costs.iter() {
        a_sum += c.hessian(&zero);
        ad_sum -= c.gradient(&zero); // grad(0) = -A d for a quadratic
    }
    linalg::spd_solve(&a_sum, &ad_sum, "quadratic closed form")
}

// ---------------------------------------------------------------------------
// Finite-difference checking
// ---------------------------------------------------------------------------

/// Worst component-wise relative mismatch between analytic derivatives and
/// central finite differences.
#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    pub max_gradient_rel_err: f64,
    pub max_hessian_rel_err: f64,
}

/// Central differences with step `1e-6 (1 + ||x||)`; the gradient is checked
/// against differences of values, the Hessian against differences of
/// gradients.
pub fn finite_difference_check(f: &dyn CostFunction, x: &DVector<f64>) -> FdReport {
    let n = f.dim();
    let h = 1e-6 * (1.0 + x.norm());
    let rel = |num: f64, ana: f64| (num - ana).abs() / (1.0 + ana.abs());

    let grad = f.gradient(x);
    let mut max_g = 0.0f64;
    for k in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += h;
        xm[k] -= h;
        let num = (f.value(&xp) - f.value(&xm)) / (2.0 * h);
        max_g = max_g.max(rel(num, grad[k]));
    }

    let hess = f.hessian(x);
    let mut max_h = 0.0f64;
    for k in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += h;
        xm[k] -= h;
        let col = (f.gradient(&xp) - f.gradient(&xm)) / (2.0 * h);
        for r in 0..n {
            max_h = max_h.max(rel(col[r], hess[(r, k)]));
        }
    }

    FdReport {
        max_gradient_rel_err: max_g,
        max_hessian_rel_err: max_h,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
        // random orthogonal basis from QR of a Gaussian-ish matrix
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let qr = m.qr();
        let q = qr.q();
        let lambda = DVector::from_fn(n, |_, _| rng.random_range(lo..hi));
        &q * DMatrix::from_diagonal(&lambda) * q.transpose()
    }

    fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
        (m + m.transpose()) * 0.5
    }

    #[test]
    fn quadratic_g_is_constant_under_full_hessian() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = symmetrize(&random_spd(&mut rng, 3, 0.5, 2.0));
        let d = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
        let q = QuadraticCost::new(a.clone(), d.clone(), 0.3).unwrap();
        let expected = &a * &d;
        for _ in 0..5 {
            let x = DVector::from_fn(3, |_, _| rng.random_range(-5.0..5.0));
            let g = g_of(&q, HessianScheme::Nrc, &x).unwrap();
            assert!((g - &expected).norm() < 1e-10);
        }
    }

    #[test]
    fn gdc_g_is_x_minus_gradient() {
        let q = ExpSumCost::new(0.1, 0.15, 0.7, 0.4).unwrap();
        let x = DVector::from_element(1, 1.3);
        let g = g_of(&q, HessianScheme::Gdc, &x).unwrap();
        let expected = &x - q.gradient(&x);
        assert!((g - expected).norm() < 1e-15);
    }

    #[test]
    fn symmetric_exp_sum_at_origin() {
        let f = ExpSumCost::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let zero = DVector::from_element(1, 0.0);
        assert!((f.hessian(&zero)[(0, 0)] - 2.0).abs() < 1e-15);
        assert!(f.gradient(&zero)[0].abs() < 1e-15);
        let g = g_of(&f, HessianScheme::Nrc, &zero).unwrap();
        assert!(g[0].abs() < 1e-15);
    }

    #[test]
    fn h_of_matches_scheme() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = symmetrize(&random_spd(&mut rng, 3, 0.5, 2.0));
        let d = DVector::zeros(3);
        let q = QuadraticCost::new(a.clone(), d, 0.0).unwrap();
        let x = DVector::from_element(3, 0.7);
        assert!((h_of(&q, HessianScheme::Nrc, &x) - &a).norm() < 1e-15);
        let jc = h_of(&q, HessianScheme::Jc, &x);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { a[(i, i)] } else { 0.0 };
                assert!((jc[(i, j)] - want).abs() < 1e-15);
            }
        }
        assert!((h_of(&q, HessianScheme::Gdc, &x) - DMatrix::<f64>::identity(3, 3)).norm() < 1e-15);
    }

    #[test]
    fn oracle_matches_quadratic_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 3;
        let costs: Vec<Box<dyn CostFunction>> = (0..6)
            .map(|_| {
                let a = symmetrize(&random_spd(&mut rng, n, 0.5, 2.0));
                let d = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
                Box::new(QuadraticCost::new(a, d, 0.0).unwrap()) as Box<dyn CostFunction>
            })
            .collect();
        // closed form (sum A_i)^-1 (sum A_i d_i); grad_i(0) = -A_i d_i
        let mut a_sum = DMatrix::zeros(n, n);
        let mut ad = DVector::zeros(n);
        for c in &costs {
            a_sum += c.hessian(&DVector::zeros(n));
            ad -= c.gradient(&DVector::zeros(n));
        }
        let closed = linalg::spd_solve(&a_sum, &ad, "closed form").unwrap();
        let report = centralized_newton(&costs, &DVector::zeros(n)).unwrap();
        assert!((&report.x_star - &closed).norm() < 1e-10);
        // quadratic: one productive step, then quiet confirmation steps
        assert!(report.iterations <= 1 + ORACLE_QUIET_STEPS + 1);
        assert_eq!(report.final_changes.len(), ORACLE_QUIET_STEPS);
    }

    #[test]
    fn oracle_exp_sum_cases() {
        let sym: Vec<Box<dyn CostFunction>> =
            vec![Box::new(ExpSumCost::new(1.0, 1.0, 1.0, 1.0).unwrap())];
        let r = centralized_newton(&sym, &DVector::from_element(1, 0.5)).unwrap();
        assert!(r.x_star[0].abs() < 1e-12);

        // 2 e^x = e^{-x}  =>  x = -ln(2)/2
        let skew: Vec<Box<dyn CostFunction>> =
            vec![Box::new(ExpSumCost::new(1.0, 1.0, 2.0, 1.0).unwrap())];
        let r = centralized_newton(&skew, &DVector::zeros(1)).unwrap();
        assert!((r.x_star[0] + 0.5 * 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn oracle_survives_far_starts_on_exponential_costs() {
        let costs: Vec<Box<dyn CostFunction>> =
            vec![Box::new(ExpSumCost::new(0.2, 0.2, 1.0, 1.0).unwrap())];
        let r = centralized_newton(&costs, &DVector::from_element(1, 40.0)).unwrap();
        assert!(r.x_star[0].abs() < 1e-10);
    }

    #[test]
    fn fd_check_quadratic_is_exact_to_rounding() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = symmetrize(&random_spd(&mut rng, 4, 0.5, 2.0));
        let d = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        let q = QuadraticCost::new(a, d, 0.1).unwrap();
        let x = DVector::from_fn(4, |_, _| rng.random_range(-2.0..2.0));
        let rep = finite_difference_check(&q, &x);
        assert!(rep.max_gradient_rel_err < 1e-8);
        assert!(rep.max_hessian_rel_err < 1e-8);
    }

    #[test]
    fn fd_check_deviance_at_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let examples: Vec<(DVector<f64>, f64)> = (0..10)
            .map(|_| {
                let chi = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
                let y = if rng.random_range(0.0..1.0) < 0.5 { -1.0 } else { 1.0 };
                (chi, y)
            })
            .collect();
        let f = BinomialDevianceCost::new(4, examples, 1.0).unwrap();
        let rep = finite_difference_check(&f, &DVector::zeros(4));
        assert!(rep.max_gradient_rel_err < 1e-5);
        assert!(rep.max_hessian_rel_err < 1e-5);
    }

    #[test]
    fn deviance_value_at_origin_counts_examples() {
        let examples: Vec<(DVector<f64>, f64)> = (0..7)
            .map(|k| (DVector::from_element(2, k as f64), if k % 2 == 0 { 1.0 } else { -1.0 }))
            .collect();
        let f = BinomialDevianceCost::new(3, examples, 1.0).unwrap();
        let v = f.value(&DVector::zeros(3));
        assert!((v - 7.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn empty_deviance_part_is_pure_ridge() {
        let f = BinomialDevianceCost::new(3, Vec::new(), 2.0).unwrap();
        let x = DVector::from_vec(vec![1.0, 2.0, 5.0]);
        // intercept excluded from the ridge
        assert!((f.value(&x) - 2.0 * (1.0 + 4.0)).abs() < 1e-12);
        let h = f.hessian(&x);
        assert!((h[(0, 0)] - 4.0).abs() < 1e-12);
        assert!(h[(2, 2)].abs() < 1e-12);
    }

    #[test]
    fn smooth_huber_is_c2_at_zero_residual() {
        let beta = 50.0;
        let (v, d1, d2) = smooth_huber(0.0, beta);
        assert_eq!(v, 0.0);
        assert_eq!(d1, 0.0);
        assert!((d2 - 2.0 / beta).abs() < 1e-15);
        // continuity across the kink of |r|: both one-sided limits reach the
        // values at zero (the first derivative is odd, the second even)
        let eps = 1e-9;
        let (_, d1p, d2p) = smooth_huber(eps, beta);
        let (_, d1m, d2m) = smooth_huber(-eps, beta);
        assert!(d1p.abs() < 2.0 * eps * (2.0 / beta) + 1e-15);
        assert!(d1m.abs() < 2.0 * eps * (2.0 / beta) + 1e-15);
        assert!((d1p + d1m).abs() < 1e-15);
        assert!((d2p - 2.0 / beta).abs() < 1e-10);
        assert!((d2p - d2m).abs() < 1e-15);
    }

    #[test]
    fn fd_check_huber_at_exact_fit_point() {
        // one example fitted exactly: residual 0 at x = (w, x0) = (1, 0)
        let examples = vec![(DVector::from_element(1, 2.0), 2.0)];
        let f = SmoothHuberRegressionCost::new(2, examples, 50.0, 1.0).unwrap();
        let x = DVector::from_vec(vec![1.0, 0.0]);
        assert!(f.value(&x) - 1.0 <= 1e-12); // ridge only
        let rep = finite_difference_check(&f, &x);
        assert!(rep.max_gradient_rel_err < 1e-5);
        assert!(rep.max_hessian_rel_err < 1e-5);
    }

    #[test]
    fn h_outputs_are_symmetric_and_psd_on_convex_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let examples: Vec<(DVector<f64>, f64)> = (0..8)
            .map(|_| {
                let chi = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
                (chi, rng.random_range(-3.0..3.0))
            })
            .collect();
        let f = SmoothHuberRegressionCost::new(3, examples, 50.0, 1.0).unwrap();
        for _ in 0..10 {
            let x = DVector::from_fn(3, |_, _| rng.random_range(-4.0..4.0));
            for scheme in [HessianScheme::Nrc, HessianScheme::Jc, HessianScheme::Gdc] {
                let h = h_of(&f, scheme, &x);
                assert!(linalg::max_asymmetry(&h) < 1e-12);
                if scheme != HessianScheme::Gdc {
                    assert!(linalg::min_eigenvalue_sym(&h) >= -1e-12);
                }
            }
        }
    }

    #[test]
    fn constructor_validation() {
        assert!(ExpSumCost::new(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(BinomialDevianceCost::new(2, vec![(DVector::zeros(1), 0.5)], 1.0).is_err());
        assert!(SmoothHuberRegressionCost::new(2, Vec::new(), -1.0, 1.0).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 1.0]);
        assert!(QuadraticCost::new(asym, DVector::zeros(2), 0.0).is_err());
    }
}
