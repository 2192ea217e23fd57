//! Training dynamics: noisy gradient descent from near-zero initialization.
//!
//! The simulator reproduces the symmetry-breaking phenomenology of the
//! landscape: the diffusive plateau where the order parameter grows like
//! `sqrt(step)`, the barrier a deep net must climb to leave the trivial
//! minimum, sensitivity to the initialization scale, the `||w||^{D+2}`
//! regularizer that removes the trivial phase, and smoke-level tanh sweeps
//! on sampled data.
//!
//! The update rule is plain Langevin descent on the parameters,
//! `w <- w - eta grad + sqrt(2 T eta) xi`, with the neuron noise handled
//! analytically inside the expected loss unless `sample_noise` asks for a
//! fresh noise draw per step.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::datastats::MomentData;
use crate::landscape::{Activation, LandscapeError, NetConfig};
use crate::oracle::{descend, full_loss_grad, DescentOpts, OracleError, ParamSet};
use crate::rng::derive_seed;
use crate::sweep::{run_sweep, Engine, SweepError, SweepOptions, SweepPoint, SweepResult};

const TANH_SAMPLES: usize = 512;
const DIVERGENCE_FACTOR: f64 = 1e6;
const NOISE_FREE_GRAD_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("step size must be positive, got {0}")]
    BadStepSize(f64),
    #[error("need at least one step")]
    NoSteps,
    #[error("record_every must be >= 1")]
    BadRecordEvery,
    #[error("noise temperature must be nonnegative, got {0}")]
    NegativeTemperature(f64),
    #[error("tanh nets do not support stochastic neurons; set noise_var = 0")]
    TanhNoise,
    #[error("sampled neuron noise requires the linear activation")]
    SampleNoiseNonLinear,
    #[error(transparent)]
    Landscape(#[from] LandscapeError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Sweep(#[from] Box<SweepError>),
}

impl From<SweepError> for DynamicsError {
    fn from(e: SweepError) -> Self {
        DynamicsError::Sweep(Box::new(e))
    }
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, Copy)]
pub struct TrainerConfig {
    pub step_size: f64,
    /// Langevin temperature of the injected parameter noise.
    pub noise_temp: f64,
    pub steps: usize,
    /// Entrywise standard deviation of the Gaussian initialization.
    pub init_scale: f64,
    pub seed: u64,
    /// Sample the neuron noise each step instead of integrating it
    /// analytically.
    pub sample_noise: bool,
    pub record_every: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            step_size: 1e-2,
            noise_temp: 0.0,
            steps: 10_000,
            init_scale: 0.0,
            seed: 0,
            sample_noise: false,
            record_every: 10,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if self.step_size <= 0.0 || self.step_size.is_nan() {
            return Err(DynamicsError::BadStepSize(self.step_size));
        }
        if self.steps == 0 {
            return Err(DynamicsError::NoSteps);
        }
        if self.record_every == 0 {
            return Err(DynamicsError::BadRecordEvery);
        }
        if self.noise_temp < 0.0 || self.noise_temp.is_nan() {
            return Err(DynamicsError::NegativeTemperature(self.noise_temp));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct TrajectoryRow {
    pub step: usize,
    pub loss: f64,
    pub b: f64,
    /// `b - diff_const * sqrt(step)`; zero until a diffusion constant is
    /// attached.
    pub b_corrected: f64,
}

/// Recorded time series of one run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
    pub final_params: ParamSet,
    pub diff_const: f64,
    pub diverged: bool,
    /// Noise-free runs only: the gradient tolerance was met before the
    /// step budget ran out.
    pub converged: bool,
}

impl Trajectory {
    /// Attaches a diffusion constant and recomputes the corrected order
    /// parameter column.
    pub fn apply_diffusion_const(&mut self, diff_const: f64) {
        self.diff_const = diff_const;
        for row in &mut self.rows {
            row.b_corrected = row.b - diff_const * (row.step as f64).sqrt();
        }
    }

    pub fn final_loss(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.loss)
    }

    /// Writes `step,loss,b,b_corrected` rows as CSV.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "step,loss,b,b_corrected")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{}", r.step, r.loss, r.b, r.b_corrected)?;
        }
        Ok(())
    }
}

/// A fixed sampled dataset consistent in law with target moments; the tanh
/// path trains on this since analytic moment propagation stops at linear
/// activations.
#[derive(Debug, Clone)]
pub struct SampleSet {
    /// One column per sample, `d x n`.
    pub xs: DMatrix<f64>,
    pub ys: DVector<f64>,
}

impl SampleSet {
    /// Draws `n` Gaussian samples with covariance `A0` and labels
    /// `y = beta^T x + residual`, where `beta` is the minimum-norm
    /// population regressor and the residual variance tops the label second
    /// moment up to `E[y^2]`.
    pub fn from_moments(data: &MomentData, n: usize, seed: u64) -> Self {
        let dim = data.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cutoff = 1e-12 * (1.0 + data.a_max());
        let beta_rot = DVector::from_fn(dim, |i, _| {
            let a = data.eigvals()[i];
            if a > cutoff {
                data.xy_rot()[i] / a
            } else {
                0.0
            }
        });
        let res_var = (data.y2() - data.min_feasible_y2()).max(0.0);
        let res_sd = res_var.sqrt();
        let sqrt_a = DVector::from_fn(dim, |i, _| data.eigvals()[i].sqrt());

        let mut xs = DMatrix::zeros(dim, n);
        let mut ys = DVector::zeros(n);
        for j in 0..n {
            let z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x_rot = z.component_mul(&sqrt_a);
            let x = data.rotation() * &x_rot;
            let noise: f64 = rng.sample(StandardNormal);
            ys[j] = beta_rot.dot(&x_rot) + res_sd * noise;
            xs.set_column(j, &x);
        }
        SampleSet { xs, ys }
    }

    /// Scales inputs and labels by `c`; activations shrink with `c`, which
    /// is how the tanh net is driven into its linear regime.
    pub fn scaled(&self, c: f64) -> Self {
        SampleSet {
            xs: &self.xs * c,
            ys: &self.ys * c,
        }
    }

    /// The samples as plain rows, e.g. for re-deriving empirical moments.
    pub fn rows(&self) -> Vec<(Vec<f64>, f64)> {
        (0..self.xs.ncols())
            .map(|j| (self.xs.column(j).iter().copied().collect(), self.ys[j]))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.xs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.ncols() == 0
    }
}

fn reg_grad_block(m: &DMatrix<f64>, gamma: f64, p: i32) -> DMatrix<f64> {
    if p == 2 {
        m * (2.0 * gamma)
    } else {
        m * (gamma * p as f64 * m.norm().powi(p - 2))
    }
}

fn reg_grad_vec(v: &DVector<f64>, gamma: f64, p: i32) -> DVector<f64> {
    if p == 2 {
        v * (2.0 * gamma)
    } else {
        v * (gamma * p as f64 * v.norm().powi(p - 2))
    }
}

/// Empirical loss and gradient of a tanh net on a fixed batch:
/// `mean_j (u^T tanh(W_D ... tanh(W_1 x_j)) - y_j)^2 + gamma sum ||.||^p`.
fn tanh_loss_grad(
    params: &ParamSet,
    gamma: f64,
    p: i32,
    samples: &SampleSet,
) -> (f64, ParamSet) {
    let n = samples.len();
    let inv_n = 1.0 / n as f64;
    let depth = params.w.len();

    let mut hidden: Vec<DMatrix<f64>> = Vec::with_capacity(depth + 1);
    hidden.push(samples.xs.clone());
    for m in &params.w {
        let mut z = m * hidden.last().unwrap();
        z.apply(|v| *v = v.tanh());
        hidden.push(z);
    }
    let out = hidden[depth].transpose() * &params.u;
    let resid = &out - &samples.ys;
    let mut loss = resid.norm_squared() * inv_n;
    loss += params.reg_term(gamma, p as u32);

    // dL/d out = 2 resid / n.
    let dout = &resid * (2.0 * inv_n);
    let grad_u = &hidden[depth] * &dout + reg_grad_vec(&params.u, gamma, p);

    let mut grad_w = vec![DMatrix::zeros(0, 0); depth];
    if depth > 0 {
        // delta_D = (u dout^T) .* (1 - H_D^2)
        let mut delta = &params.u * dout.transpose();
        for (v, h) in delta.iter_mut().zip(hidden[depth].iter()) {
            *v *= 1.0 - h * h;
        }
        for k in (0..depth).rev() {
            grad_w[k] = &delta * hidden[k].transpose() + reg_grad_block(&params.w[k], gamma, p);
            if k > 0 {
                let mut next = params.w[k].transpose() * &delta;
                for (v, h) in next.iter_mut().zip(hidden[k].iter()) {
                    *v *= 1.0 - h * h;
                }
                delta = next;
            }
        }
    }
    (
        loss,
        ParamSet {
            u: grad_u,
            w: grad_w,
        },
    )
}

/// Expected loss and gradient with one fixed draw of the neuron noise: the
/// noisy net is the deterministic net with each hidden matrix's rows scaled
/// by its noise vector, so the analytic machinery applies after a rescale.
fn sampled_noise_loss_grad(
    params: &ParamSet,
    gamma: f64,
    cfg: &NetConfig,
    data: &MomentData,
    eps: &[DVector<f64>],
) -> (f64, ParamSet) {
    let p = cfg.reg_exponent as i32;
    let mut eff = params.clone();
    for (m, e) in eff.w.iter_mut().zip(eps.iter()) {
        for i in 0..m.nrows() {
            let s = e[i];
            for j in 0..m.ncols() {
                m[(i, j)] *= s;
            }
        }
    }
    let clean_cfg = NetConfig {
        noise_var: 0.0,
        ..*cfg
    };
    let (data_loss, eff_grad) =
        full_loss_grad(&eff, 0.0, &clean_cfg, data).expect("shapes validated by caller");
    let loss = data_loss + params.reg_term(gamma, cfg.reg_exponent);
    let mut grad_w = Vec::with_capacity(params.w.len());
    for (k, gw) in eff_grad.w.into_iter().enumerate() {
        let mut g = gw;
        for i in 0..g.nrows() {
            let s = eps[k][i];
            for j in 0..g.ncols() {
                g[(i, j)] *= s;
            }
        }
        g += reg_grad_block(&params.w[k], gamma, p);
        grad_w.push(g);
    }
    let grad_u = eff_grad.u + reg_grad_vec(&params.u, gamma, p);
    (
        loss,
        ParamSet {
            u: grad_u,
            w: grad_w,
        },
    )
}

fn add_langevin_noise(params: &mut ParamSet, scale: f64, rng: &mut ChaCha8Rng) {
    for v in params.u.iter_mut() {
        *v += scale * rng.sample::<f64, _>(StandardNormal);
    }
    for m in &mut params.w {
        for v in m.iter_mut() {
            *v += scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

/// Runs (noisy) gradient descent and records the trajectory.
///
/// Noise-free runs stop early once the gradient infinity norm falls below
/// 1e-8; any run stops with the `diverged` flag when the loss exceeds 1e6
/// times `E[y^2]`.
pub fn train(
    tcfg: &TrainerConfig,
    cfg: &NetConfig,
    gamma: f64,
    data: &MomentData,
) -> Result<Trajectory, DynamicsError> {
    tcfg.validate()?;
    cfg.validate()?;
    if cfg.activation == Activation::Tanh && cfg.noise_var != 0.0 {
        return Err(DynamicsError::TanhNoise);
    }
    if tcfg.sample_noise && cfg.activation != Activation::Linear {
        return Err(DynamicsError::SampleNoiseNonLinear);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut params = if tcfg.init_scale == 0.0 {
        ParamSet::zeros(cfg, data.dim())
    } else {
        ParamSet::random(cfg, data.dim(), tcfg.init_scale, &mut rng)
    };

    let tanh_samples = if cfg.activation == Activation::Tanh {
        Some(SampleSet::from_moments(
            data,
            TANH_SAMPLES,
            derive_seed(tcfg.seed, 0x7a6e),
        ))
    } else {
        None
    };
    let p = cfg.reg_exponent as i32;
    let noise_dim = cfg.width;

    let objective = |params: &ParamSet, rng: &mut ChaCha8Rng| -> (f64, ParamSet) {
        if let Some(samples) = &tanh_samples {
            tanh_loss_grad(params, gamma, p, samples)
        } else if tcfg.sample_noise {
            let sd = cfg.noise_var.sqrt();
            let eps: Vec<DVector<f64>> = (0..cfg.depth)
                .map(|_| {
                    DVector::from_fn(noise_dim, |_, _| {
                        1.0 + sd * rng.sample::<f64, _>(StandardNormal)
                    })
                })
                .collect();
            sampled_noise_loss_grad(params, gamma, cfg, data, &eps)
        } else {
            full_loss_grad(params, gamma, cfg, data).expect("validated shapes")
        }
    };

    let divergence_cap = DIVERGENCE_FACTOR * data.y2().max(1e-12);
    let noise_scale = (2.0 * tcfg.noise_temp * tcfg.step_size).sqrt();
    let width = cfg.width;

    let (loss0, mut grad) = objective(&params, &mut rng);
    let mut loss = loss0;
    let mut rows = vec![TrajectoryRow {
        step: 0,
        loss,
        b: params.order_parameter(width),
        b_corrected: params.order_parameter(width),
    }];
    let mut diverged = false;
    let mut converged = false;

    for step in 1..=tcfg.steps {
        params.axpy(-tcfg.step_size, &grad);
        if noise_scale > 0.0 {
            add_langevin_noise(&mut params, noise_scale, &mut rng);
        }
        let (l, g) = objective(&params, &mut rng);
        loss = l;
        grad = g;

        let record = step % tcfg.record_every == 0 || step == tcfg.steps;
        let blew_up = !loss.is_finite() || loss > divergence_cap;
        let settled = tcfg.noise_temp == 0.0 && grad.norm_inf() <= NOISE_FREE_GRAD_TOL;
        if record || blew_up || settled {
            let b = params.order_parameter(width);
            rows.push(TrajectoryRow {
                step,
                loss,
                b,
                b_corrected: b,
            });
        }
        if blew_up {
            diverged = true;
            break;
        }
        if settled {
            converged = true;
            break;
        }
    }

    Ok(Trajectory {
        rows,
        final_params: params,
        diff_const: 0.0,
        diverged,
        converged,
    })
}

/// Diffusion constant of the injected noise: the slope of `b` against
/// `sqrt(step)` in a pure-noise null run (no data, no gradient), fitted
/// through the origin over the first quartile of steps.
///
/// Only the last layer enters `b`, so the null run walks `u` alone.
pub fn estimate_diffusion_const(tcfg: &TrainerConfig, cfg: &NetConfig) -> f64 {
    if tcfg.noise_temp == 0.0 || tcfg.steps == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(tcfg.seed, 0xd1ff));
    let noise_scale = (2.0 * tcfg.noise_temp * tcfg.step_size).sqrt();
    let d0 = cfg.width.max(1);
    let mut u = DVector::<f64>::zeros(d0);
    let cutoff = (tcfg.steps / 4).max(2);
    let mut num = 0.0;
    let mut den = 0.0;
    for step in 1..=cutoff {
        for v in u.iter_mut() {
            *v += noise_scale * rng.sample::<f64, _>(StandardNormal);
        }
        let b = u.norm() / d0 as f64;
        let x = (step as f64).sqrt();
        num += x * b;
        den += x * x;
    }
    num / den
}

/// Height of the uphill excursion above the initial loss, clamped at zero.
/// Positive only when the run had to climb out of a local minimum.
pub fn barrier_height(traj: &Trajectory) -> f64 {
    let Some(first) = traj.rows.first() else {
        return 0.0;
    };
    traj.rows
        .iter()
        .map(|r| r.loss - first.loss)
        .fold(0.0, f64::max)
}

/// Log-log slope of `b` against the step over recorded steps in
/// `[1, max_step]` with `b > 0`.
///
/// The diffusive `sqrt(step)` regime only lasts while the restoring pull of
/// the local minimum is negligible, i.e. for steps well below
/// `1/(2 gamma eta)`; pick `max_step` inside that window.
pub fn early_time_exponent(traj: &Trajectory, max_step: usize) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = traj
        .rows
        .iter()
        .filter(|r| r.step >= 1 && r.step <= max_step && r.b > 0.0)
        .map(|r| ((r.step as f64).ln(), r.b.ln()))
        .collect();
    if pts.len() < 4 {
        return None;
    }
    Some(crate::sweep::loglog_slope(&pts))
}

/// Converged losses of two noise-free runs differing only in the
/// initialization scale.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct InitSensitivityRow {
    pub gamma: f64,
    pub loss_small: f64,
    pub loss_large: f64,
    pub gap: f64,
    /// Flags a gap large enough to indicate one run trapped in a local
    /// minimum.
    pub trapped: bool,
}

/// For each `gamma`, trains noise-free from both initialization scales and
/// tabulates the converged losses and their discrepancy.
pub fn init_sensitivity(
    tcfg: &TrainerConfig,
    scales: (f64, f64),
    cfg: &NetConfig,
    gammas: &[f64],
    data: &MomentData,
) -> Result<Vec<InitSensitivityRow>, DynamicsError> {
    let flag_tol = 1e-3 * data.y2().max(1e-12);
    gammas
        .par_iter()
        .map(|&gamma| {
            let mut losses = [0.0; 2];
            for (slot, scale) in [scales.0, scales.1].iter().enumerate() {
                let run_cfg = TrainerConfig {
                    noise_temp: 0.0,
                    init_scale: *scale,
                    ..*tcfg
                };
                let traj = train(&run_cfg, cfg, gamma, data)?;
                losses[slot] = traj.final_loss();
            }
            let gap = (losses[0] - losses[1]).abs();
            Ok(InitSensitivityRow {
                gamma,
                loss_small: losses[0],
                loss_large: losses[1],
                gap,
                trapped: gap > flag_tol,
            })
        })
        .collect()
}

/// Writes init-sensitivity rows as CSV.
pub fn write_init_sensitivity_csv<W: std::io::Write>(
    rows: &[InitSensitivityRow],
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "gamma,loss_small,loss_large,gap,trapped")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.gamma, r.loss_small, r.loss_large, r.gap, r.trapped
        )?;
    }
    Ok(())
}

/// Oracle-engine sweep for a generalized regularizer exponent (the exact
/// landscape only covers the quadratic case).
pub fn reg_exponent_experiment(
    cfg: &NetConfig,
    gammas: &[f64],
    data: &MomentData,
    n_starts: usize,
    seed: u64,
) -> Result<SweepResult, DynamicsError> {
    Ok(run_sweep(
        gammas,
        cfg,
        data,
        &SweepOptions::oracle(n_starts, seed),
    )?)
}

/// Tanh free-energy sweep on a fixed sample set: per `gamma`, the minimum
/// converged loss over descents from each initialization scale.
pub fn tanh_sweep(
    cfg: &NetConfig,
    gammas: &[f64],
    data: &MomentData,
    init_scales: &[f64],
    seed: u64,
) -> Result<SweepResult, DynamicsError> {
    cfg.validate()?;
    if cfg.activation != Activation::Tanh {
        return Err(DynamicsError::SampleNoiseNonLinear);
    }
    if cfg.noise_var != 0.0 {
        return Err(DynamicsError::TanhNoise);
    }
    let samples = SampleSet::from_moments(data, TANH_SAMPLES, derive_seed(seed, 0x7a6e));
    tanh_sweep_on_samples(cfg, gammas, &samples, init_scales, seed)
}

/// Tanh sweep on a caller-supplied sample set; the agreement tests use this
/// to compare against a linear sweep on the same samples.
pub fn tanh_sweep_on_samples(
    cfg: &NetConfig,
    gammas: &[f64],
    samples: &SampleSet,
    init_scales: &[f64],
    seed: u64,
) -> Result<SweepResult, DynamicsError> {
    let p = cfg.reg_exponent as i32;
    let input_dim = samples.xs.nrows();
    let opts = DescentOpts {
        grad_tol: 1e-8,
        max_iters: 40_000,
        init_step: 0.5,
    };
    let points: Result<Vec<SweepPoint>, DynamicsError> = gammas
        .par_iter()
        .map(|&gamma| {
            let mut best: Option<(f64, ParamSet)> = None;
            for (k, &scale) in init_scales.iter().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    seed,
                    gamma.to_bits() ^ (k as u64).wrapping_mul(0x9e37),
                ));
                let start = ParamSet::random(cfg, input_dim, scale, &mut rng);
                let out = descend(
                    |q| tanh_loss_grad(q, gamma, p, samples),
                    start,
                    &opts,
                );
                if best.as_ref().is_none_or(|(l, _)| out.loss < *l) {
                    best = Some((out.loss, out.params));
                }
            }
            let (loss, params) = best.expect("at least one initialization scale");
            Ok(SweepPoint {
                gamma,
                loss,
                b_star: params.order_parameter(cfg.width),
                reg_term: params.reg_term(gamma, cfg.reg_exponent),
                coexistence: false,
            })
        })
        .collect();
    Ok(SweepResult::from_points(&points?, Engine::TanhDescent))
}
