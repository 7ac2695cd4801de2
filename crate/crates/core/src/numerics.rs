//! GLM maximum likelihood, ridge regression and quadratic-form bonuses.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::link::LinkFunction;

pub const DEFAULT_GLM_TOL: f64 = 1e-8;
pub const DEFAULT_GLM_MAX_ITER: usize = 100;
pub const HESSIAN_JITTER: f64 = 1e-8;

/// Cholesky factor `L` of a symmetric positive-definite matrix `A = L Lᵀ`.
///
/// Kept instead of `A⁻¹` so bonus queries are two O(d²) triangular solves.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl SpdFactor {
    pub fn new(matrix: &DMatrix<f64>) -> Option<Self> {
        Cholesky::new(matrix.clone()).map(|chol| Self { chol, jitter: 0.0 })
    }

    /// Factors `matrix + εI`, starting at `ε = 0` and then growing from
    /// `initial_jitter` by factors of ten until the factorization succeeds.
    pub fn with_jitter(matrix: &DMatrix<f64>, initial_jitter: f64) -> Result<Self> {
        if let Some(f) = Self::new(matrix) {
            return Ok(f);
        }
        let scale = matrix.diagonal().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let mut eps = initial_jitter * scale;
        for _ in 0..16 {
            let mut m = matrix.clone();
            for i in 0..m.nrows() {
                m[(i, i)] += eps;
            }
            if let Some(chol) = Cholesky::new(m) {
                return Ok(Self { chol, jitter: eps });
            }
            eps *= 10.0;
        }
        Err(Error::Data("matrix could not be factored even with jitter".into()))
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Diagonal shift that was added before factoring (0 when none).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// `vᵀ A⁻¹ v`, via `‖L⁻¹ v‖²`.
    pub fn quad_form(&self, v: &DVector<f64>) -> f64 {
        let mut z = v.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut z);
        z.norm_squared()
    }

    /// The factored matrix `L Lᵀ`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let l = self.chol.l();
        &l * l.transpose()
    }
}

/// `√(vᵀ A⁻¹ v)` for the matrix whose factor is given.
pub fn quad_form_bonus(v: &DVector<f64>, factor: &SpdFactor) -> Result<f64> {
    if v.len() != factor.dim() {
        return Err(Error::config(format!(
            "bonus vector has length {}, factor is {}x{}",
            v.len(),
            factor.dim(),
            factor.dim()
        )));
    }
    Ok(factor.quad_form(v).sqrt())
}

pub fn min_eigenvalue(matrix: &DMatrix<f64>) -> f64 {
    if matrix.nrows() == 0 {
        return f64::NAN;
    }
    SymmetricEigen::new(matrix.clone()).eigenvalues.min()
}

/// `Σ_i w_i x_i x_iᵀ` over the rows of `x`.
pub fn weighted_gram(x: &DMatrix<f64>, weights: &DVector<f64>) -> DMatrix<f64> {
    let mut xw = x.clone();
    for (mut row, w) in xw.row_iter_mut().zip(weights.iter()) {
        row *= *w;
    }
    let g = x.tr_mul(&xw);
    // Symmetrize exactly; the product is symmetric only up to rounding.
    (&g + g.transpose()) * 0.5
}

#[derive(Debug, Clone)]
pub struct GlmFit {
    pub theta: DVector<f64>,
    /// `Σ_τ ġ(⟨φ_τ, θ̃⟩) φ_τ φ_τᵀ`, unnormalized.
    pub sigma_matrix: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub final_gradient_norm: f64,
    /// Loss at the start and after every accepted step.
    pub loss_trace: Vec<f64>,
}

struct GlmObjective<'a> {
    x: &'a DMatrix<f64>,
    r: &'a DVector<f64>,
    link: &'a LinkFunction,
}

impl GlmObjective<'_> {
    fn n(&self) -> f64 {
        self.x.nrows() as f64
    }

    /// Loss and a bound on its floating-point evaluation error.
    fn loss(&self, theta: &DVector<f64>) -> (f64, f64) {
        let u = self.x * theta;
        let mut acc = 0.0;
        let mut mag = 0.0;
        for (ui, ri) in u.iter().zip(self.r.iter()) {
            let a = -ri * ui;
            let b = self.link.antideriv(*ui);
            acc += a + b;
            mag += a.abs() + b.abs();
        }
        let n = self.n();
        (acc / n, 8.0 * f64::EPSILON * (mag / n).max(1.0))
    }

    fn gradient(&self, u: &DVector<f64>) -> DVector<f64> {
        let resid = DVector::from_iterator(
            u.len(),
            u.iter().zip(self.r.iter()).map(|(ui, ri)| self.link.eval(*ui) - ri),
        );
        self.x.tr_mul(&resid) / self.n()
    }

    fn curvature_weights(&self, u: &DVector<f64>) -> DVector<f64> {
        u.map(|ui| self.link.deriv(ui))
    }
}

/// Canonical-link GLM maximum likelihood by damped Newton from `θ = 0`.
///
/// Minimizes `(1/n) Σ (−r_τ⟨φ_τ,θ⟩ + G(⟨φ_τ,θ⟩))` with step halving on the
/// loss. Converged when the gradient ∞-norm is at most `tol`.
pub fn fit_glm(
    features: &DMatrix<f64>,
    responses: &DVector<f64>,
    link: &LinkFunction,
    tol: f64,
    max_iter: usize,
) -> Result<GlmFit> {
    let (n, d) = features.shape();
    if n == 0 {
        return Err(Error::data("GLM fit needs at least one observation"));
    }
    if responses.len() != n {
        return Err(Error::data(format!("{n} feature rows but {} responses", responses.len())));
    }
    if features.iter().chain(responses.iter()).any(|v| !v.is_finite()) {
        return Err(Error::data("non-finite GLM input"));
    }
    if matches!(link, LinkFunction::Logit) && responses.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::data("logit responses must lie in [0, 1]"));
    }

    let obj = GlmObjective { x: features, r: responses, link };
    let mut theta = DVector::zeros(d);
    let (mut loss, _) = obj.loss(&theta);
    let mut trace = vec![loss];
    let mut iterations = 0;
    let mut converged = false;
    let mut grad_norm;

    loop {
        let u = features * &theta;
        let grad = obj.gradient(&u);
        grad_norm = grad.amax();
        if grad_norm <= tol {
            converged = true;
            break;
        }
        if iterations >= max_iter {
            break;
        }
        let hess = weighted_gram(features, &obj.curvature_weights(&u)) / obj.n();
        let factor = SpdFactor::with_jitter(&hess, HESSIAN_JITTER)?;
        let direction = -factor.solve(&grad);

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &theta + &direction * step;
            let (cand_loss, slack) = obj.loss(&cand);
            if cand_loss <= loss {
                accepted = Some((cand, cand_loss));
                break;
            }
            // Near the optimum a full step can be swamped by rounding in the
            // loss itself; accept it if the gradient still shrinks.
            if step == 1.0 && cand_loss <= loss + slack {
                let g_new = obj.gradient(&(features * &cand)).amax();
                if g_new < grad_norm {
                    accepted = Some((cand, cand_loss));
                    break;
                }
            }
            step *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some((cand, cand_loss)) => {
                theta = cand;
                loss = cand_loss;
                trace.push(loss);
            }
            None => break,
        }
    }

    let u = features * &theta;
    let sigma_matrix = weighted_gram(features, &obj.curvature_weights(&u));
    Ok(GlmFit { theta, sigma_matrix, converged, iterations, final_gradient_norm: grad_norm, loss_trace: trace })
}

#[derive(Debug, Clone)]
pub struct RidgeFit {
    pub beta: DVector<f64>,
    /// `ΦᵀΦ + λI`.
    pub gram_plus: DMatrix<f64>,
    pub lambda: f64,
    pub factor: SpdFactor,
}

/// `β = (ΦᵀΦ + λI)⁻¹ Φᵀ y` through a Cholesky factorization.
pub fn fit_ridge(features: &DMatrix<f64>, targets: &DVector<f64>, lambda: f64) -> Result<RidgeFit> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::config(format!("ridge lambda must be positive, got {lambda}")));
    }
    if targets.len() != features.nrows() {
        return Err(Error::data(format!(
            "{} feature rows but {} targets",
            features.nrows(),
            targets.len()
        )));
    }
    if features.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
        return Err(Error::data("non-finite ridge input"));
    }
    let d = features.ncols();
    let mut gram_plus = features.tr_mul(features);
    gram_plus = (&gram_plus + gram_plus.transpose()) * 0.5;
    for i in 0..d {
        gram_plus[(i, i)] += lambda;
    }
    let factor = SpdFactor::new(&gram_plus)
        .ok_or_else(|| Error::Data("ridge Gram matrix is not positive definite".into()))?;
    let beta = factor.solve(&features.tr_mul(targets));
    Ok(RidgeFit { beta, gram_plus, lambda, factor })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Cyclic Jacobi rotations; independent of nalgebra's eigensolver.
    fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
        let n = a.len();
        for _ in 0..200 {
            let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[i][j] * a[i][j])
                .sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[k][p];
                        let akq = a[k][q];
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[p][k];
                        let aqk = a[q][k];
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        (0..n).map(|i| a[i][i]).collect()
    }

    #[test]
    fn ridge_zero_targets_give_zero_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_matrix(&mut rng, 10, 3);
        let fit = fit_ridge(&x, &DVector::zeros(10), 1.0).unwrap();
        assert_eq!(fit.beta, DVector::zeros(3));
    }

    #[test]
    fn ridge_rank_one_closed_form() {
        let x = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        let fit = fit_ridge(&x, &DVector::from_element(1, 1.0), 1.0).unwrap();
        assert!((fit.beta - DVector::from_vec(vec![0.5, 0.0, 0.0])).amax() < 1e-15);
    }

    #[test]
    fn ridge_with_no_rows_is_prior() {
        let x = DMatrix::zeros(0, 4);
        let fit = fit_ridge(&x, &DVector::zeros(0), 2.0).unwrap();
        assert_eq!(fit.beta, DVector::zeros(4));
        assert_eq!(fit.gram_plus, DMatrix::identity(4, 4) * 2.0);
    }

    #[test]
    fn ridge_matches_gradient_descent_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (m, d, lambda) = (50, 6, 1.0);
        let x = random_matrix(&mut rng, m, d);
        let y = DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
        // Plain gradient descent on Σ(y − xβ)² + λ‖β‖², hand-rolled loops.
        let rows: Vec<Vec<f64>> = (0..m).map(|i| (0..d).map(|j| x[(i, j)]).collect()).collect();
        let mut beta = vec![0.0; d];
        let step = 1.0 / (2.0 * (rows.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() + lambda));
        for _ in 0..200_000 {
            let mut grad = vec![0.0; d];
            for (i, r) in rows.iter().enumerate() {
                let pred: f64 = r.iter().zip(&beta).map(|(a, b)| a * b).sum();
                for j in 0..d {
                    grad[j] += -2.0 * (y[i] - pred) * r[j];
                }
            }
            let mut gnorm: f64 = 0.0;
            for j in 0..d {
                grad[j] += 2.0 * lambda * beta[j];
                gnorm = gnorm.max(grad[j].abs());
                beta[j] -= step * grad[j];
            }
            if gnorm < 1e-10 {
                break;
            }
        }
        let fit = fit_ridge(&x, &y, lambda).unwrap();
        for j in 0..d {
            assert!((fit.beta[j] - beta[j]).abs() <= 1e-6, "coordinate {j}");
        }
    }

    #[test]
    fn ridge_rejects_bad_inputs() {
        let x = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert!(matches!(fit_ridge(&x, &DVector::zeros(1), 1.0), Err(Error::Data(_))));
        let x = DMatrix::from_row_slice(1, 1, &[1.0]);
        assert!(matches!(fit_ridge(&x, &DVector::zeros(1), 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn ridge_norm_shrinks_as_lambda_doubles() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_matrix(&mut rng, 40, 5);
        let y = DVector::from_fn(40, |_, _| rng.random_range(-1.0..1.0));
        let mut prev = f64::INFINITY;
        let mut lambda = 0.125;
        for _ in 0..20 {
            let n = fit_ridge(&x, &y, lambda).unwrap().beta.norm();
            assert!(n <= prev);
            prev = n;
            lambda *= 2.0;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn glm_logit_half_responses_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_matrix(&mut rng, 30, 4);
        let fit = fit_glm(&x, &DVector::from_element(30, 0.5), &LinkFunction::Logit, 1e-8, 100).unwrap();
        assert!(fit.converged);
        assert!(fit.theta.amax() < 1e-12);
    }

    #[test]
    fn glm_identity_matches_ols_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_matrix(&mut rng, 60, 5);
        let y = DVector::from_fn(60, |_, _| rng.random_range(-3.0..3.0));
        let ols = (x.transpose() * &x).try_inverse().unwrap() * x.transpose() * &y;
        let fit = fit_glm(&x, &y, &LinkFunction::Identity, 1e-8, 100).unwrap();
        assert!(fit.converged);
        assert!((fit.theta - ols).amax() <= 1e-8);
    }

    #[test]
    fn glm_loss_is_monotone_and_sigma_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_matrix(&mut rng, 200, 4) * 2.0;
        let y = DVector::from_fn(200, |_, _| if rng.random_bool(0.3) { 1.0 } else { 0.0 });
        let fit = fit_glm(&x, &y, &LinkFunction::Logit, 1e-8, 100).unwrap();
        assert!(fit.converged);
        assert!(fit.final_gradient_norm <= 1e-8);
        for w in fit.loss_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-13, "loss increased: {} -> {}", w[0], w[1]);
        }
        let s = &fit.sigma_matrix;
        assert!((s - s.transpose()).amax() <= 1e-12);
        assert!(min_eigenvalue(s) >= -1e-10);
    }

    #[test]
    fn glm_singular_design_still_fits() {
        // Duplicate column makes the Hessian singular.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = DVector::from_fn(20, |_, _| rng.random_range(-1.0..1.0));
        let x = DMatrix::from_columns(&[c.clone(), c]);
        let y = DVector::from_fn(20, |i, _| if i % 3 == 0 { 1.0 } else { 0.0 });
        let fit = fit_glm(&x, &y, &LinkFunction::Logit, 1e-8, 100).unwrap();
        assert!(fit.theta.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn glm_separable_data_does_not_converge() {
        let x = DMatrix::from_row_slice(4, 1, &[-2.0, -1.0, 1.0, 2.0]);
        let y = DVector::from_vec(vec![0.0, 0.0, 1.0, 1.0]);
        let fit = fit_glm(&x, &y, &LinkFunction::Logit, 1e-8, 15).unwrap();
        assert!(!fit.converged);
    }

    #[test]
    fn glm_rejects_out_of_range_logit_responses() {
        let x = DMatrix::from_row_slice(1, 1, &[1.0]);
        assert!(fit_glm(&x, &DVector::from_element(1, 2.0), &LinkFunction::Logit, 1e-8, 10).is_err());
        assert!(fit_glm(&DMatrix::zeros(0, 1), &DVector::zeros(0), &LinkFunction::Logit, 1e-8, 10).is_err());
    }

    #[test]
    fn quad_form_bonus_examples() {
        let id = SpdFactor::new(&DMatrix::identity(3, 3)).unwrap();
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        assert_eq!(quad_form_bonus(&e1, &id).unwrap(), 1.0);
        assert_eq!(quad_form_bonus(&DVector::zeros(3), &id).unwrap(), 0.0);
        let diag = SpdFactor::new(&DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]))).unwrap();
        let v = DVector::from_vec(vec![2.0, 3.0]);
        assert!((quad_form_bonus(&v, &diag).unwrap() - 10f64.sqrt()).abs() < 1e-14);
        assert!(quad_form_bonus(&e1, &diag).is_err());
    }

    #[test]
    fn factor_reconstructs_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let f = SpdFactor::new(&a).unwrap();
        assert!((f.matrix() - a).amax() < 1e-14);
    }

    #[test]
    fn jitter_rescues_singular_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = SpdFactor::with_jitter(&a, 1e-8).unwrap();
        assert!(f.jitter() > 0.0);
    }

    #[test]
    fn min_eigenvalue_examples() {
        assert!((min_eigenvalue(&DMatrix::identity(3, 3)) - 1.0).abs() < 1e-15);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5]));
        assert!((min_eigenvalue(&d) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn min_eigenvalue_matches_jacobi_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let b = random_matrix(&mut rng, 5, 5);
            let a = &b + b.transpose();
            let rows: Vec<Vec<f64>> = (0..5).map(|i| (0..5).map(|j| a[(i, j)]).collect()).collect();
            let oracle = jacobi_eigenvalues(rows).into_iter().fold(f64::INFINITY, f64::min);
            assert!((min_eigenvalue(&a) - oracle).abs() <= 1e-8);
        }
    }

    proptest! {
        #[test]
        fn bonus_is_one_homogeneous(v in prop::collection::vec(-3.0f64..3.0, 4), c in -5.0f64..5.0, seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = random_matrix(&mut rng, 6, 4);
            let a = b.tr_mul(&b) + DMatrix::identity(4, 4);
            let f = SpdFactor::new(&a).unwrap();
            let v = DVector::from_vec(v);
            let lhs = quad_form_bonus(&(&v * c), &f).unwrap();
            let rhs = c.abs() * quad_form_bonus(&v, &f).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs));
        }
    }
}
