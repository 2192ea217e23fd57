//! Full-parameter-space ground truth for the effective landscape.
//!
//! This module owns the exact expected loss of the stochastic deep linear
//! net, its analytic gradient, the closed-form global-minimum family indexed
//! by the order parameter, and a multistart descent used to certify that the
//! 1-D reduction in `landscape` really attains the full minimum.
//!
//! Neuron noise is never sampled here: each hidden unit's multiplicative
//! noise has mean 1 and variance `sigma^2`, and the loss is quadratic in
//! each noise variable, so only the first two moments enter. Second moments
//! propagate layer by layer through `N(M) = M + sigma^2 diag(M)`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::datastats::MomentData;
use crate::landscape::{minimize_b, ridge_loss, LandscapeError, NetConfig};
use crate::rng::{derive_seed, normal_matrix, normal_vector};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("parameter shape mismatch: {0}")]
    Shape(String),
    #[error("order parameter must be nonnegative, got {0}")]
    NegativeB(f64),
    #[error("weight decay must be nonnegative, got {0}")]
    NegativeGamma(f64),
    #[error("solution family needs depth >= 1")]
    DepthZeroManifold,
    #[error("singular solution family: gamma = 0 with a vanishing denominator")]
    SingularManifold,
    #[error("multistart needs at least one start")]
    NoStarts,
    #[error(transparent)]
    Landscape(#[from] LandscapeError),
}

/// Weights of one network: last layer `u` plus hidden matrices `w[0..D]`,
/// where `w[0]` maps the input (`d0 x d`) and the rest are `d0 x d0`.
///
/// For depth 0 there are no hidden matrices and `u` acts directly on the
/// input (length `d`).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub u: DVector<f64>,
    pub w: Vec<DMatrix<f64>>,
}

impl ParamSet {
    pub fn zeros(cfg: &NetConfig, input_dim: usize) -> Self {
        let d0 = cfg.width;
        if cfg.depth == 0 {
            return ParamSet {
                u: DVector::zeros(input_dim),
                w: Vec::new(),
            };
        }
        let mut w = Vec::with_capacity(cfg.depth);
        w.push(DMatrix::zeros(d0, input_dim));
        for _ in 1..cfg.depth {
            w.push(DMatrix::zeros(d0, d0));
        }
        ParamSet {
            u: DVector::zeros(d0),
            w,
        }
    }

    /// Seeded Gaussian initialization with entrywise standard deviation
    /// `scale`.
    pub fn random(cfg: &NetConfig, input_dim: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let d0 = cfg.width;
        if cfg.depth == 0 {
            return ParamSet {
                u: normal_vector(rng, input_dim, scale),
                w: Vec::new(),
            };
        }
        let mut w = Vec::with_capacity(cfg.depth);
        w.push(normal_matrix(rng, d0, input_dim, scale));
        for _ in 1..cfg.depth {
            w.push(normal_matrix(rng, d0, d0, scale));
        }
        ParamSet {
            u: normal_vector(rng, d0, scale),
            w,
        }
    }

    pub fn validate(&self, cfg: &NetConfig, input_dim: usize) -> Result<(), OracleError> {
        let d0 = cfg.width;
        if cfg.depth == 0 {
            if !self.w.is_empty() || self.u.len() != input_dim {
                return Err(OracleError::Shape(format!(
                    "depth 0 wants u of length {input_dim} and no hidden matrices"
                )));
            }
        } else {
            if self.w.len() != cfg.depth || self.u.len() != d0 {
                return Err(OracleError::Shape(format!(
                    "depth {} wants {} hidden matrices and u of length {d0}",
                    cfg.depth, cfg.depth
                )));
            }
            for (i, m) in self.w.iter().enumerate() {
                let expect_cols = if i == 0 { input_dim } else { d0 };
                if m.nrows() != d0 || m.ncols() != expect_cols {
                    return Err(OracleError::Shape(format!(
                        "w[{i}] has shape {}x{}, expected {d0}x{expect_cols}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
            }
        }
        if !self.u.iter().all(|v| v.is_finite())
            || !self.w.iter().all(|m| m.iter().all(|v| v.is_finite()))
        {
            return Err(OracleError::Shape("non-finite parameter entry".into()));
        }
        Ok(())
    }

    /// Order parameter `b = ||u|| / d0`.
    pub fn order_parameter(&self, width: usize) -> f64 {
        self.u.norm() / width.max(1) as f64
    }

    /// `gamma * sum_m ||m||^p` over the last layer and every hidden matrix.
    pub fn reg_term(&self, gamma: f64, reg_exponent: u32) -> f64 {
        let p = reg_exponent as i32;
        let mut total = self.u.norm().powi(p);
        for m in &self.w {
            total += m.norm().powi(p);
        }
        gamma * total
    }

    pub fn norm_inf(&self) -> f64 {
        let mut best = self.u.amax();
        for m in &self.w {
            best = best.max(m.amax());
        }
        best
    }

    pub fn norm(&self) -> f64 {
        let mut sq = self.u.norm_squared();
        for m in &self.w {
            sq += m.norm_squared();
        }
        sq.sqrt()
    }

    /// `self <- self + c * other`, elementwise over all blocks.
    pub fn axpy(&mut self, c: f64, other: &ParamSet) {
        self.u.axpy(c, &other.u, 1.0);
        for (m, o) in self.w.iter_mut().zip(other.w.iter()) {
            *m += o * c;
        }
    }
}

/// Second-moment map of one noisy layer: `N(M) = M + sigma^2 diag(M)`.
fn noise_map(m: &DMatrix<f64>, noise_var: f64) -> DMatrix<f64> {
    if noise_var == 0.0 {
        return m.clone();
    }
    let mut out = m.clone();
    for i in 0..m.nrows() {
        out[(i, i)] += noise_var * m[(i, i)];
    }
    out
}

/// First and second output moments of the network under the data and neuron
/// noise: `fy = E[f(x) y]`, `f2 = E[f(x)^2]`.
///
/// The mean path ignores the noise (its mean is 1); the second moment
/// propagates `C_1 = W1 A0 W1^T`, `C_{k+1} = W_{k+1} N(C_k) W_{k+1}^T`,
/// `f2 = u^T N(C_D) u`.
pub fn forward_moments(
    params: &ParamSet,
    data: &MomentData,
    noise_var: f64,
) -> Result<(f64, f64), OracleError> {
    let depth = params.w.len();
    if depth == 0 {
        if params.u.len() != data.dim() {
            return Err(OracleError::Shape(format!(
                "u has length {}, input dimension is {}",
                params.u.len(),
                data.dim()
            )));
        }
        let fy = params.u.dot(data.xy());
        let f2 = (data.cov() * &params.u).dot(&params.u);
        return Ok((fy, f2));
    }
    if params.w[0].ncols() != data.dim() {
        return Err(OracleError::Shape(format!(
            "w[0] has {} columns, input dimension is {}",
            params.w[0].ncols(),
            data.dim()
        )));
    }
    // Mean path.
    let mut mean = &params.w[0] * data.xy();
    for m in params.w.iter().skip(1) {
        mean = m * mean;
    }
    let fy = params.u.dot(&mean);
    // Second-moment path.
    let mut c = &params.w[0] * data.cov() * params.w[0].transpose();
    for m in params.w.iter().skip(1) {
        c = m * noise_map(&c, noise_var) * m.transpose();
    }
    let f2 = (noise_map(&c, noise_var) * &params.u).dot(&params.u);
    Ok((fy, f2))
}

/// Exact expected training loss:
/// `f2 - 2 fy + E[y^2] + gamma sum_m ||m||^p`.
pub fn full_loss(
    params: &ParamSet,
    gamma: f64,
    cfg: &NetConfig,
    data: &MomentData,
) -> Result<f64, OracleError> {
    if gamma < 0.0 || gamma.is_nan() {
        return Err(OracleError::NegativeGamma(gamma));
    }
    let (fy, f2) = forward_moments(params, data, cfg.noise_var)?;
    Ok(f2 - 2.0 * fy + data.y2() + params.reg_term(gamma, cfg.reg_exponent))
}

/// Loss together with its analytic gradient.
///
/// The `f2` chain backpropagates through the noise map using its
/// self-adjointness: `tr(N(M) X) = tr(M N(X))`.
pub fn full_loss_grad(
    params: &ParamSet,
    gamma: f64,
    cfg: &NetConfig,
    data: &MomentData,
) -> Result<(f64, ParamSet), OracleError> {
    if gamma < 0.0 || gamma.is_nan() {
        return Err(OracleError::NegativeGamma(gamma));
    }
    let depth = params.w.len();
    let noise_var = cfg.noise_var;
    let p = cfg.reg_exponent as i32;

    let reg_grad_block = |m: &DMatrix<f64>| -> DMatrix<f64> {
        if p == 2 {
            m * (2.0 * gamma)
        } else {
            let norm = m.norm();
            m * (gamma * p as f64 * norm.powi(p - 2))
        }
    };
    let reg_grad_vec = |v: &DVector<f64>| -> DVector<f64> {
        if p == 2 {
            v * (2.0 * gamma)
        } else {
            let norm = v.norm();
            v * (gamma * p as f64 * norm.powi(p - 2))
        }
    };

    if depth == 0 {
        if params.u.len() != data.dim() {
            return Err(OracleError::Shape("depth-0 dimension mismatch".into()));
        }
        let au = data.cov() * &params.u;
        let fy = params.u.dot(data.xy());
        let f2 = au.dot(&params.u);
        let loss = f2 - 2.0 * fy + data.y2() + params.reg_term(gamma, cfg.reg_exponent);
        let grad_u = au * 2.0 - data.xy() * 2.0 + reg_grad_vec(&params.u);
        return Ok((
            loss,
            ParamSet {
                u: grad_u,
                w: Vec::new(),
            },
        ));
    }
    if params.w[0].ncols() != data.dim() {
        return Err(OracleError::Shape("w[0] dimension mismatch".into()));
    }

    // Forward prefixes for the mean path: beta[k] = W_k ... W_1 E[xy].
    let mut beta: Vec<DVector<f64>> = Vec::with_capacity(depth + 1);
    beta.push(data.xy().clone());
    for m in &params.w {
        let next = m * beta.last().unwrap();
        beta.push(next);
    }
    let fy = params.u.dot(&beta[depth]);

    // Forward second moments: pre[k] is the input moment of layer k+1,
    // pre[0] = A0, pre[k] = N(C_k).
    let mut pre: Vec<DMatrix<f64>> = Vec::with_capacity(depth);
    pre.push(data.cov().clone());
    let mut c_last = DMatrix::zeros(0, 0);
    for (k, m) in params.w.iter().enumerate() {
        let c = m * &pre[k] * m.transpose();
        if k + 1 < depth {
            pre.push(noise_map(&c, noise_var));
        }
        c_last = c;
    }
    let n_c_last = noise_map(&c_last, noise_var);
    let f2 = (&n_c_last * &params.u).dot(&params.u);

    let loss = f2 - 2.0 * fy + data.y2() + params.reg_term(gamma, cfg.reg_exponent);

    // Backward suffixes for the mean path: alpha[k] = (W_D ... W_{k+1})^T u.
    let mut alpha: Vec<DVector<f64>> = vec![DVector::zeros(0); depth + 1];
    alpha[depth] = params.u.clone();
    for k in (1..=depth).rev() {
        alpha[k - 1] = params.w[k - 1].transpose() * &alpha[k];
    }

    // Backward pass for f2: G_D = N(u u^T), G_{k-1} = N(W_k^T G_k W_k).
    let mut grad_w: Vec<DMatrix<f64>> = Vec::with_capacity(depth);
    for _ in 0..depth {
        grad_w.push(DMatrix::zeros(0, 0));
    }
    let mut g = noise_map(&(&params.u * params.u.transpose()), noise_var);
    for k in (0..depth).rev() {
        let m = &params.w[k];
        // d f2 / d W_k = 2 G_k W_k pre[k]; d fy / d W_k = alpha_k beta_{k-1}^T.
        let mut gw = (&g * m * &pre[k]) * 2.0;
        gw -= (&alpha[k + 1] * beta[k].transpose()) * 2.0;
        gw += reg_grad_block(m);
        grad_w[k] = gw;
        if k > 0 {
            g = noise_map(&(m.transpose() * &g * m), noise_var);
        }
    }
    let grad_u = &n_c_last * &params.u * 2.0 - &beta[depth] * 2.0 + reg_grad_vec(&params.u);

    Ok((
        loss,
        ParamSet {
            u: grad_u,
            w: grad_w,
        },
    ))
}

/// The closed-form global-minimum family at order parameter `b`, in the
/// all-ones sign gauge:
/// `U = sqrt(d0) b 1`, `W_i = b 1 1^T` for `i >= 2`, and
/// `W_1 = 1 E[xy]^T d0^{D-1/2} b^D [d0^D (sigma^2+d0)^D b^{2D} A0 + gamma]^{-1}`
/// (the inverse applied in the covariance eigenbasis).
pub fn solution_manifold(
    b: f64,
    gamma: f64,
    cfg: &NetConfig,
    data: &MomentData,
) -> Result<ParamSet, OracleError> {
    cfg.validate().map_err(OracleError::Landscape)?;
    if b < 0.0 || b.is_nan() {
        return Err(OracleError::NegativeB(b));
    }
    if gamma < 0.0 || gamma.is_nan() {
        return Err(OracleError::NegativeGamma(gamma));
    }
    if cfg.depth == 0 {
        return Err(OracleError::DepthZeroManifold);
    }
    let d0 = cfg.width;
    let d0f = d0 as f64;
    let depth = cfg.depth as i32;
    let k = (d0f * (cfg.noise_var + d0f)).powi(depth);
    let b2d = b.powi(2 * depth);

    // z = [K b^{2D} A0 + gamma]^{-1} E[xy] in the eigenbasis.
    let dim = data.dim();
    let mut z = DVector::zeros(dim);
    for i in 0..dim {
        let den = k * data.eigvals()[i] * b2d + gamma;
        if den == 0.0 {
            if data.xy_rot()[i] == 0.0 {
                continue;
            }
            return Err(OracleError::SingularManifold);
        }
        z[i] = data.xy_rot()[i] / den;
    }
    let row = data.rotation() * z;

    let ones_d0 = DVector::from_element(d0, 1.0);
    let scale = d0f.powf(depth as f64 - 0.5) * b.powi(depth);
    let w1 = &ones_d0 * row.transpose() * scale;

    let mut w = Vec::with_capacity(cfg.depth);
    w.push(w1);
    for _ in 1..cfg.depth {
        w.push(DMatrix::from_element(d0, d0, b));
    }
    let u = ones_d0 * (d0f.sqrt() * b);
    Ok(ParamSet { u, w })
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DescentOpts {
    pub grad_tol: f64,
    pub max_iters: usize,
    pub init_step: f64,
}

impl Default for DescentOpts {
    fn default() -> Self {
        DescentOpts {
            grad_tol: 1e-9,
            max_iters: 100_000,
            init_step: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct DescentOutcome {
    pub params: ParamSet,
    pub loss: f64,
    pub converged: bool,
}

/// Gradient descent with a backtracking Armijo line search. The step grows
/// between iterations and halves inside the search; terminates on the
/// gradient tolerance, an iteration cap, or a long stall in the loss.
pub(crate) fn descend<F>(objective: F, start: ParamSet, opts: &DescentOpts) -> DescentOutcome
where
    F: Fn(&ParamSet) -> (f64, ParamSet),
{
    let mut p = start;
    let (mut loss, mut grad) = objective(&p);
    let mut step = opts.init_step;
    let mut stall = 0usize;
    let mut converged = false;
    for _ in 0..opts.max_iters {
        let ginf = grad.norm_inf();
        if ginf <= opts.grad_tol {
            converged = true;
            break;
        }
        let gsq = grad.norm() * grad.norm();
        step = (step * 2.0).min(1e6);
        let mut accepted = false;
        while step >= 1e-18 {
            let mut cand = p.clone();
            cand.axpy(-step, &grad);
            let (l_new, g_new) = objective(&cand);
            if l_new.is_finite() && l_new <= loss - 1e-4 * step * gsq {
                let improvement = loss - l_new;
                p = cand;
                loss = l_new;
                grad = g_new;
                accepted = true;
                if improvement <= 1e-15 * (1.0 + loss.abs()) {
                    stall += 1;
                } else {
                    stall = 0;
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted || stall > 100 {
            break;
        }
    }
    if grad.norm_inf() <= opts.grad_tol {
        converged = true;
    }
    DescentOutcome {
        params: p,
        loss,
        converged,
    }
}

/// Best descent result over seeded random starts.
#[derive(Debug, Clone)]
pub struct MultistartResult {
    pub params: ParamSet,
    pub loss: f64,
    /// True when at least one start met the gradient tolerance; the loss is
    /// an upper bound on the true minimum either way.
    pub converged: bool,
    pub n_converged: usize,
}

/// Minimizes the full loss from `n_starts` Gaussian initializations with
/// entrywise scales log-spaced in `[1e-3, 1]`.
pub fn multistart_minimize(
    gamma: f64,
    cfg: &NetConfig,
    data: &MomentData,
    n_starts: usize,
    seed: u64,
) -> Result<MultistartResult, OracleError> {
    cfg.validate().map_err(OracleError::Landscape)?;
    if gamma < 0.0 || gamma.is_nan() {
        return Err(OracleError::NegativeGamma(gamma));
    }
    if n_starts == 0 {
        return Err(OracleError::NoStarts);
    }
    let input_dim = data.dim();
    let opts = DescentOpts::default();
    let scales: Vec<f64> = (0..n_starts)
        .map(|j| {
            if n_starts == 1 {
                1e-3
            } else {
                10f64.powf(-3.0 + 3.0 * j as f64 / (n_starts - 1) as f64)
            }
        })
        .collect();

    let outcomes: Vec<DescentOutcome> = scales
        .par_iter()
        .enumerate()
        .map(|(j, &scale)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, j as u64));
            let start = ParamSet::random(cfg, input_dim, scale, &mut rng);
            descend(
                |p| full_loss_grad(p, gamma, cfg, data).expect("objective evaluation"),
                start,
                &opts,
            )
        })
        .collect();

    let n_converged = outcomes.iter().filter(|o| o.converged).count();
    let mut best = 0usize;
    for (j, o) in outcomes.iter().enumerate() {
        if o.loss < outcomes[best].loss {
            best = j;
        }
    }
    let chosen = outcomes.into_iter().nth(best).unwrap();
    Ok(MultistartResult {
        params: chosen.params,
        loss: chosen.loss,
        converged: n_converged > 0,
        n_converged,
    })
}

/// One row of the order-parameter-reduction certificate.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct EquivalenceRow {
    pub gamma: f64,
    pub landscape_loss: f64,
    pub oracle_loss: f64,
    pub gap: f64,
    pub violation: bool,
}

/// Certificate that minimizing the 1-D effective loss reproduces the full
/// minimum on a grid of `gamma` values.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EquivalenceReport {
    pub rows: Vec<EquivalenceRow>,
    pub tolerance: f64,
    pub violations: usize,
}

impl EquivalenceReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Compares the reduced minimization (ridge closed form at depth 0,
/// otherwise `minimize_b`) against the multistart full-loss minimum at each
/// `gamma`; a gap above `max(1e-6, 1e-4 E[y^2])` is a violation.
pub fn verify_equivalence(
    gammas: &[f64],
    cfg: &NetConfig,
    data: &MomentData,
    n_starts: usize,
    seed: u64,
) -> Result<EquivalenceReport, OracleError> {
    cfg.validate().map_err(OracleError::Landscape)?;
    let tolerance = 1e-6f64.max(1e-4 * data.y2());
    let rows: Result<Vec<EquivalenceRow>, OracleError> = gammas
        .par_iter()
        .enumerate()
        .map(|(i, &gamma)| {
            let reduced = if cfg.depth == 0 {
                ridge_loss(gamma, data)?.loss
            } else {
                minimize_b(gamma, cfg, data)?.loss
            };
            let oracle =
                multistart_minimize(gamma, cfg, data, n_starts, derive_seed(seed, i as u64))?;
            let gap = (reduced - oracle.loss).abs();
            Ok(EquivalenceRow {
                gamma,
                landscape_loss: reduced,
                oracle_loss: oracle.loss,
                gap,
                violation: gap > tolerance,
            })
        })
        .collect();
    let rows = rows?;
    let violations = rows.iter().filter(|r| r.violation).count();
    Ok(EquivalenceReport {
        rows,
        tolerance,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastats::make_synthetic;
    use crate::landscape::effective_loss;
    use approx::assert_relative_eq;

    fn instance_i1() -> (NetConfig, MomentData) {
        (
            NetConfig::linear(1, 1),
            make_synthetic(&[1.0], &[0.5], 1.0, 0).unwrap(),
        )
    }

    #[test]
    fn forward_moments_one_step_by_hand() {
        // d = d0 = 1, D = 1: f2 = v^2 w^2 a (1 + sigma^2), fy = v w E[xy].
        let data = make_synthetic(&[2.0], &[0.5], 1.0, 0).unwrap();
        let params = ParamSet {
            u: DVector::from_element(1, 3.0),
            w: vec![DMatrix::from_element(1, 1, 0.7)],
        };
        let (fy, f2) = forward_moments(&params, &data, 0.25).unwrap();
        assert_relative_eq!(f2, 9.0 * 0.49 * 2.0 * 1.25, epsilon = 1e-12);
        assert_relative_eq!(fy, 3.0 * 0.7 * data.xy()[0], epsilon = 1e-12);
    }

    #[test]
    fn forward_moments_zero_noise_is_deterministic_net() {
        let data = make_synthetic(&[1.0, 0.5], &[0.4, 0.2], 1.0, 3).unwrap();
        let cfg = NetConfig::linear(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = ParamSet::random(&cfg, 2, 0.6, &mut rng);
        let (_, f2) = forward_moments(&params, &data, 0.0).unwrap();
        let v = (params.w[1].clone() * &params.w[0]).transpose() * &params.u;
        let expect = (data.cov() * &v).dot(&v);
        assert_relative_eq!(f2, expect, epsilon = 1e-12);
    }

    #[test]
    fn forward_moments_zero_params() {
        let data = make_synthetic(&[1.0], &[0.5], 1.0, 0).unwrap();
        let params = ParamSet::zeros(&NetConfig::linear(2, 2), 1);
        let (fy, f2) = forward_moments(&params, &data, 0.3).unwrap();
        assert_eq!((fy, f2), (0.0, 0.0));
    }

    #[test]
    fn noise_increases_second_moment() {
        let data = make_synthetic(&[1.0, 0.5], &[0.4, 0.2], 1.0, 3).unwrap();
        let cfg = NetConfig::linear(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let params = ParamSet::random(&cfg, 2, 0.8, &mut rng);
            let (_, f2_noisy) = forward_moments(&params, &data, 0.7).unwrap();
            let (_, f2_clean) = forward_moments(&params, &data, 0.0).unwrap();
            assert!(f2_noisy > f2_clean);
        }
    }

    #[test]
    fn full_loss_examples() {
        let (cfg, data) = instance_i1();
        let zero = ParamSet::zeros(&cfg, 1);
        assert_eq!(full_loss(&zero, 0.4, &cfg, &data).unwrap(), 1.0);

        // u = 1, W = 1, gamma = 0.1: 1 - 2*0.5 + 1 + 0.1*2 = 1.2.
        let hand = ParamSet {
            u: DVector::from_element(1, 1.0),
            w: vec![DMatrix::from_element(1, 1, 1.0)],
        };
        let data_id = make_synthetic(&[1.0], &[0.5], 1.0, 0).unwrap();
        let loss = full_loss(&hand, 0.1, &cfg, &data_id).unwrap();
        assert_relative_eq!(loss, 1.2, epsilon = 1e-12);
    }

    #[test]
    fn manifold_reproduces_effective_loss_on_i1() {
        let (cfg, data) = instance_i1();
        let params = solution_manifold(0.5, 0.25, &cfg, &data).unwrap();
        let loss = full_loss(&params, 0.25, &cfg, &data).unwrap();
        assert_relative_eq!(loss, 0.9375, epsilon = 1e-12);
    }

    #[test]
    fn manifold_zero_b_is_zero_params() {
        let cfg = NetConfig::linear(2, 3);
        let data = make_synthetic(&[1.0, 0.5], &[0.4, 0.2], 1.0, 3).unwrap();
        let params = solution_manifold(0.0, 0.3, &cfg, &data).unwrap();
        assert_eq!(params.norm(), 0.0);
    }

    #[test]
    fn manifold_last_layer_norm() {
        let cfg = NetConfig::linear(2, 3).with_noise_var(0.4);
        let data = make_synthetic(&[1.0, 0.5], &[0.4, 0.2], 1.0, 3).unwrap();
        for b in [0.1, 0.37, 1.4] {
            let params = solution_manifold(b, 0.2, &cfg, &data).unwrap();
            assert_relative_eq!(params.u.norm_squared(), 9.0 * b * b, epsilon = 1e-12);
            assert_relative_eq!(params.order_parameter(3), b, epsilon = 1e-12);
        }
    }

    #[test]
    fn manifold_singular_at_gamma_zero_b_zero() {
        let (cfg, data) = instance_i1();
        assert!(matches!(
            solution_manifold(0.0, 0.0, &cfg, &data),
            Err(OracleError::SingularManifold)
        ));
    }

    #[test]
    fn manifold_matches_landscape_pointwise() {
        // The order-parameter reduction, made executable: the full loss on
        // the manifold equals the effective landscape for every b.
        let data3 = make_synthetic(&[1.2, 0.7, 0.3], &[0.4, 0.25, 0.1], 1.0, 5).unwrap();
        for depth in [1usize, 2, 3] {
            for width in [1usize, 2, 4] {
                for noise in [0.0, 0.5] {
                    let cfg = NetConfig::linear(depth, width).with_noise_var(noise);
                    for k in 0..12 {
                        let b = k as f64 * 0.09;
                        let gamma = 0.05 + (k as f64 % 3.0) * 0.2;
                        let params = solution_manifold(b, gamma, &cfg, &data3).unwrap();
                        let direct = full_loss(&params, gamma, &cfg, &data3).unwrap();
                        let reduced = effective_loss(b, gamma, &cfg, &data3).unwrap();
                        assert!(
                            (direct - reduced).abs() <= 1e-10 * (1.0 + reduced.abs()),
                            "mismatch at D={depth} d0={width} sigma2={noise} b={b}: {direct} vs {reduced}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = make_synthetic(&[1.2, 0.7], &[0.4, 0.25], 1.0, 5).unwrap();
        let configs = [
            NetConfig::linear(0, 1),
            NetConfig::linear(1, 2).with_noise_var(0.5),
            NetConfig::linear(3, 2).with_noise_var(0.25),
            NetConfig::linear(2, 2).with_reg_exponent(4),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for cfg in &configs {
            for trial in 0..50 {
                let scale = 0.2 + 0.1 * (trial % 5) as f64;
                let params = ParamSet::random(cfg, 2, scale, &mut rng);
                let gamma = 0.05 + 0.03 * (trial % 7) as f64;
                let (_, grad) = full_loss_grad(&params, gamma, cfg, &data).unwrap();
                // Probe a handful of coordinates by central differences.
                let h = 1e-6;
                let probe = |get: &dyn Fn(&ParamSet) -> f64,
                                 set: &dyn Fn(&mut ParamSet, f64),
                                 g: f64| {
                    let base = get(&params);
                    let mut plus = params.clone();
                    set(&mut plus, base + h);
                    let mut minus = params.clone();
                    set(&mut minus, base - h);
                    let fd = (full_loss(&plus, gamma, cfg, &data).unwrap()
                        - full_loss(&minus, gamma, cfg, &data).unwrap())
                        / (2.0 * h);
                    assert!(
                        (g - fd).abs() <= 1e-6 * (1.0 + fd.abs().max(g.abs())),
                        "grad {g} vs fd {fd} (depth {})",
                        cfg.depth
                    );
                };
                probe(&|p| p.u[0], &|p, v| p.u[0] = v, grad.u[0]);
                if cfg.depth >= 1 {
                    probe(&|p| p.w[0][(0, 1)], &|p, v| p.w[0][(0, 1)] = v, grad.w[0][(0, 1)]);
                    let last = cfg.depth - 1;
                    probe(
                        &|p| p.w[last][(1, 0)],
                        &|p, v| p.w[last][(1, 0)] = v,
                        grad.w[last][(1, 0)],
                    );
                }
            }
        }
    }

    #[test]
    fn flip_symmetry_of_sign_gauge() {
        let data = make_synthetic(&[1.0, 0.5], &[0.4, 0.2], 1.0, 3).unwrap();
        let cfg = NetConfig::linear(3, 2).with_noise_var(0.6);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for flip_layer in 0..3 {
            let params = ParamSet::random(&cfg, 2, 0.5, &mut rng);
            let base = full_loss(&params, 0.17, &cfg, &data).unwrap();
            let mut flipped = params.clone();
            flipped.u = -flipped.u;
            flipped.w[flip_layer] = -flipped.w[flip_layer].clone();
            let alt = full_loss(&flipped, 0.17, &cfg, &data).unwrap();
            assert_relative_eq!(base, alt, epsilon = 1e-12);
        }
    }

    #[test]
    fn multistart_depth0_matches_ridge() {
        let data = make_synthetic(&[1.3, 0.8, 0.4], &[0.5, -0.3, 0.2], 2.0, 9).unwrap();
        let cfg = NetConfig::linear(0, 1);
        for gamma in [0.05, 0.4, 2.0] {
            let ridge = ridge_loss(gamma, &data).unwrap();
            let ms = multistart_minimize(gamma, &cfg, &data, 4, 7).unwrap();
            assert!(
                (ridge.loss - ms.loss).abs() <= 1e-8,
                "gamma={gamma}: {} vs {}",
                ridge.loss,
                ms.loss
            );
        }
    }

    #[test]
    fn multistart_finds_i1_minimum() {
        let (cfg, data) = instance_i1();
        let ms = multistart_minimize(0.25, &cfg, &data, 8, 3).unwrap();
        assert!((ms.loss - 0.9375).abs() <= 1e-6, "loss {}", ms.loss);
        assert!(ms.converged);
    }

    #[test]
    fn multistart_huge_gamma_is_trivial() {
        let (cfg, data) = instance_i1();
        let ms = multistart_minimize(1e3, &cfg, &data, 4, 3).unwrap();
        assert!((ms.loss - 1.0).abs() <= 1e-6);
        assert!(ms.params.norm() < 1e-2);
    }

    #[test]
    fn equivalence_depth1_and_depth0() {
        let (cfg, data) = instance_i1();
        let gammas: Vec<f64> = (0..10).map(|i| 0.05 + i as f64 * 0.1).collect();
        let report = verify_equivalence(&gammas, &cfg, &data, 8, 5).unwrap();
        assert!(report.passed(), "violations: {:?}", report.rows);

        let cfg0 = NetConfig::linear(0, 1);
        let report0 = verify_equivalence(&gammas, &cfg0, &data, 4, 5).unwrap();
        assert!(report0.passed());
    }

    #[test]
    fn validate_catches_bad_shapes() {
        let cfg = NetConfig::linear(2, 3);
        let mut params = ParamSet::zeros(&cfg, 2);
        assert!(params.validate(&cfg, 2).is_ok());
        params.w[1] = DMatrix::zeros(3, 2);
        assert!(params.validate(&cfg, 2).is_err());
    }
}
