//! The exact effective loss over the order parameter `b` and the closed
//! forms derived from it.
//!
//! For a depth-`D` linear net of width `d0` with multiplicative neuron noise
//! of variance `sigma^2` and weight decay `gamma`, every global minimum lies
//! on a one-parameter family indexed by `b = ||U||/d0`, and restricted to
//! that family the training loss collapses to
//!
//! ```text
//! lbar(b, gamma) = - sum_i  d0^{2D} b^{2D} s_i^2
//!                          ---------------------------------  + E[y^2] + gamma D d0^2 b^2
//!                          d0^D (sigma^2+d0)^D a_i b^{2D} + gamma
//! ```
//!
//! where `a_i` are the eigenvalues of the input covariance and `s_i` the
//! signal components in that eigenbasis. Minimizing this 1-D function in `b`
//! reproduces the minimum of the full training loss; the `oracle` module
//! certifies that reduction numerically.
//!
//! Two normalizations coexist in the depth-1 closed forms. The landscape
//! above uses `b = ||U||/d0`; the Taylor coefficients of the squared order
//! parameter near the critical point ([`landau_coefficients`]) are stated
//! for `s = d0 * b^2`. The conversion is fixed here so callers never mix the
//! two.

use serde::Serialize;
use thiserror::Error;

use crate::datastats::{signal_norms, MomentData, SignalNorms};

#[derive(Debug, Error)]
pub enum LandscapeError {
    #[error("width must be >= 1")]
    ZeroWidth,
    #[error("noise variance must be nonnegative, got {0}")]
    NegativeNoise(f64),
    #[error("regularizer exponent must be >= 2, got {0}")]
    RegExponentTooSmall(u32),
    #[error("order parameter must be nonnegative, got {0}")]
    NegativeB(f64),
    #[error("weight decay must be nonnegative, got {0}")]
    NegativeGamma(f64),
    #[error("operation requires depth {needs}, config has depth {depth}")]
    DepthUnsupported { depth: usize, needs: &'static str },
    #[error("the exact landscape only covers the quadratic regularizer; reg_exponent = {0} needs the oracle engine")]
    RegExponentUnsupported(u32),
    #[error("Landau coefficients are undefined: ||E[xy]||_A0 = 0")]
    UndefinedCoefficients,
    #[error("search region is degenerate: {0}")]
    DegenerateSearch(&'static str),
}

/// Activation of the network body. The exact landscape and the oracle only
/// cover `Linear`; `Tanh` is exercised by the dynamics module on sampled
/// data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Tanh,
}

/// Architecture and regularization hyperparameters.
///
/// `depth` counts hidden layers: depth 0 is plain ridge regression. All
/// hidden layers share the width `d0 = width`. `reg_exponent` is the power
/// `p` in the per-matrix penalty `gamma ||.||^p`; `p = 2` is standard weight
/// decay, `p = D + 2` is the fix that removes the trivial phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NetConfig {
    pub depth: usize,
    pub width: usize,
    pub noise_var: f64,
    pub reg_exponent: u32,
    pub activation: Activation,
}

impl NetConfig {
    pub fn linear(depth: usize, width: usize) -> Self {
        NetConfig {
            depth,
            width,
            noise_var: 0.0,
            reg_exponent: 2,
            activation: Activation::Linear,
        }
    }

    pub fn with_noise_var(mut self, noise_var: f64) -> Self {
        self.noise_var = noise_var;
        self
    }

    pub fn with_reg_exponent(mut self, p: u32) -> Self {
        self.reg_exponent = p;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn validate(&self) -> Result<(), LandscapeError> {
        if self.width == 0 {
            return Err(LandscapeError::ZeroWidth);
        }
        if self.noise_var < 0.0 || self.noise_var.is_nan() {
            return Err(LandscapeError::NegativeNoise(self.noise_var));
        }
        if self.reg_exponent < 2 {
            return Err(LandscapeError::RegExponentTooSmall(self.reg_exponent));
        }
        Ok(())
    }

    pub(crate) fn width_f(&self) -> f64 {
        self.width as f64
    }
}

/// `d0^D (sigma^2 + d0)^D`, the factor multiplying `a_i b^{2D}` in every
/// denominator.
fn depth_factor(cfg: &NetConfig) -> f64 {
    let d0 = cfg.width_f();
    (d0 * (cfg.noise_var + d0)).powi(cfg.depth as i32)
}

fn check_eval_inputs(gamma: f64, cfg: &NetConfig) -> Result<(), LandscapeError> {
    cfg.validate()?;
    if gamma < 0.0 || gamma.is_nan() {
        return Err(LandscapeError::NegativeGamma(gamma));
    }
    if cfg.depth == 0 {
        return Err(LandscapeError::DepthUnsupported {
            depth: 0,
            needs: ">= 1 (depth 0 is ridge_loss)",
        });
    }
    Ok(())
}

/// Raw landscape evaluation; accepts any real `b` (the formula is even in
/// `b` for the quadratic regularizer).
fn eval_landscape(b: f64, gamma: f64, cfg: &NetConfig, data: &MomentData) -> f64 {
    if b == 0.0 {
        return data.y2();
    }
    let d0 = cfg.width_f();
    let depth = cfg.depth as i32;
    let k = depth_factor(cfg);
    let b2d = b.powi(2 * depth);
    let coef = d0.powi(2 * depth) * b2d;
    let mut signal_term = 0.0;
    for (a, s) in data.eigvals().iter().zip(data.xy_rot().iter()) {
        if *s == 0.0 {
            continue;
        }
        let den = k * a * b2d + gamma;
        if den == 0.0 {
            // Zero-variance direction at gamma = 0: carries no recoverable
            // signal for realizable moments.
            continue;
        }
        signal_term += coef * s * s / den;
    }
    let p = cfg.reg_exponent;
    let reg = if p == 2 {
        gamma * cfg.depth as f64 * d0 * d0 * b * b
    } else {
        gamma * cfg.depth as f64 * d0.powi(p as i32) * b.abs().powi(p as i32)
    };
    data.y2() - signal_term + reg
}

/// The effective loss `lbar(b, gamma)` on its natural domain `b >= 0`.
///
/// Exactly `E[y^2]` at `b = 0` for every `gamma`, depth, width, and noise
/// level. For `reg_exponent != 2` the regularization term generalizes to
/// `gamma D d0^p b^p`; only the quadratic case is an exact reduction of the
/// full loss.
pub fn effective_loss(
    b: f64,
    gamma: f64,
    cfg: &NetConfig,
    data: &MomentData,
) -> Result<f64, LandscapeError> {
    if b < 0.0 || b.is_nan() {
        return Err(LandscapeError::NegativeB(b));
    }
    check_eval_inputs(gamma, cfg)?;
    Ok(eval_landscape(b, gamma, cfg, data))
}

/// The landscape extended to negative `b` by the formula; useful for
/// displaying the symmetric double well.
pub fn effective_loss_extended(
    b: f64,
    gamma: f64,
    cfg: &NetConfig,
    data: &MomentData,
) -> Result<f64, LandscapeError> {
    check_eval_inputs(gamma, cfg)?;
    Ok(eval_landscape(b, gamma, cfg, data))
}

/// Analytic `d lbar / d b`.
///
/// The signal term telescopes: each summand differentiates to
/// `-2 D gamma d0^{2D} b^{2D-1} s_i^2 / den_i^2`.
pub fn effective_loss_dgrad(
    b: f64,
    gamma: f64,
    cfg: &NetConfig,
    data: &MomentData,
) -> Result<f64, LandscapeError> {
    if b < 0.0 || b.is_nan() {
        return Err(LandscapeError::NegativeB(b));
    }
    check_eval_inputs(gamma, cfg)?;
    if b == 0.0 {
        return Ok(0.0);
    }
    let d0 = cfg.width_f();
    let depth = cfg.depth as i32;
    let depth_f = cfg.depth as f64;
    let k = depth_factor(cfg);
    let b2d = b.powi(2 * depth);
    let coef = 2.0 * depth_f * gamma * d0.powi(2 * depth) * b.powi(2 * depth - 1);
    let mut signal_term = 0.0;
    for (a, s) in data.eigvals().iter().zip(data.xy_rot().iter()) {
        if *s == 0.0 {
            continue;
        }
        let den = k * a * b2d + gamma;
        if den == 0.0 {
            continue;
        }
        signal_term += coef * s * s / (den * den);
    }
    let p = cfg.reg_exponent;
    let reg_grad = if p == 2 {
        2.0 * gamma * depth_f * d0 * d0 * b
    } else {
        gamma * depth_f * d0.powi(p as i32) * p as f64 * b.powi(p as i32 - 1)
    };
    Ok(-signal_term + reg_grad)
}

/// The `gamma`-derivative of the landscape at a fixed minimizer: the
/// envelope form `sum_i d0^{2D} b^{2D} s_i^2 / den_i^2 + D d0^2 b^2`.
///
/// At a stable minimizer this equals `L'(gamma)`, and `gamma` times it is
/// the full regularization term of the corresponding network.
pub fn lemma1_dgamma(b_star: f64, gamma: f64, cfg: &NetConfig, data: &MomentData) -> f64 {
    let d0 = cfg.width_f();
    let depth = cfg.depth as i32;
    if b_star == 0.0 {
        return 0.0;
    }
    let k = depth_factor(cfg);
    let b2d = b_star.powi(2 * depth);
    let coef = d0.powi(2 * depth) * b2d;
    let mut sum = 0.0;
    for (a, s) in data.eigvals().iter().zip(data.xy_rot().iter()) {
        if *s == 0.0 {
            continue;
        }
        let den = k * a * b2d + gamma;
        if den == 0.0 {
            continue;
        }
        sum += coef * s * s / (den * den);
    }
    sum + cfg.depth as f64 * d0 * d0 * b_star * b_star
}

/// Full regularization term `gamma (||U||^2 + sum ||W_i||_F^2)` of the
/// minimum-manifold network at order parameter `b`.
pub fn manifold_reg_term(b: f64, gamma: f64, cfg: &NetConfig, data: &MomentData) -> f64 {
    gamma * lemma1_dgamma(b, gamma, cfg, data)
}

/// Result of the 1-D global minimization of the effective loss.
#[derive(Debug, Clone, Copy)]
pub struct BMinimum {
    pub b_star: f64,
    pub loss: f64,
    /// Set when an interior minimum ties the trivial one within 1e-12; the
    /// trivial solution is reported in that case.
    pub coexistence: bool,
}

const GRID_POINTS: usize = 2048;
const GRAD_TOL: f64 = 1e-10;
const BRACKET_TOL: f64 = 1e-12;
const TIE_TOL: f64 = 1e-12;

/// Global minimum of the effective loss over `b in [0, b_hi]`, where `b_hi`
/// is 1.5 times the upper bound no nonzero minimizer can exceed.
///
/// Dense grid scan (2049 points) followed by golden-section refinement to a
/// bracket of width 1e-12 or gradient below 1e-10. Ties between the trivial
/// and an interior minimum resolve toward the lower loss; exact ties report
/// `b = 0` with the coexistence flag set.
pub fn minimize_b(
    gamma: f64,
    cfg: &NetConfig,
    data: &MomentData,
) -> Result<BMinimum, LandscapeError> {
    check_eval_inputs(gamma, cfg)?;
    if cfg.reg_exponent != 2 {
        return Err(LandscapeError::RegExponentUnsupported(cfg.reg_exponent));
    }
    let y2 = data.y2();
    let norms = signal_norms(data);
    if norms.e0 == 0.0 {
        return Ok(BMinimum {
            b_star: 0.0,
            loss: y2,
            coexistence: false,
        });
    }
    if data.a_max() <= 0.0 {
        return Err(LandscapeError::DegenerateSearch(
            "covariance is zero but the signal is not; the landscape is unbounded below",
        ));
    }
    let bounds = bstar_bounds(gamma, cfg, data)?;
    // Every interior stationary point obeys
    //   b^{D+1} <= sqrt(sum s_i^2/a_i^2) / (d0 (sigma^2+d0)^D),
    // from stationarity with den_i >= K a_i b^{2D}. The claimed a_max upper
    // bound can be exceeded on anisotropic data at small gamma, so the
    // search ceiling takes the larger of the two.
    let stationarity_cap = {
        let sum: f64 = data
            .eigvals()
            .iter()
            .zip(data.xy_rot().iter())
            .filter(|(&a, &s)| a > 0.0 && s != 0.0)
            .map(|(&a, &s)| (s / a) * (s / a))
            .sum();
        let d0 = cfg.width_f();
        let depth = cfg.depth as f64;
        ((0.5 * sum.ln() - d0.ln() - depth * (cfg.noise_var + d0).ln()) / (depth + 1.0)).exp()
    };
    let mut ceiling = 1.5 * bounds.upper.max(stationarity_cap);
    if cfg.depth == 1 {
        ceiling = ceiling.max(10.0 / cfg.width_f());
    }
    if !ceiling.is_finite() || ceiling <= 0.0 {
        return Err(LandscapeError::DegenerateSearch("search ceiling is not finite"));
    }

    let f = |b: f64| eval_landscape(b, gamma, cfg, data);

    let mut best_idx = 0usize;
    let mut best_val = y2;
    let step = ceiling / GRID_POINTS as f64;
    for i in 1..=GRID_POINTS {
        let v = f(i as f64 * step);
        if v < best_val {
            best_val = v;
            best_idx = i;
        }
    }

    let (mut b_ref, mut loss_ref) = (best_idx as f64 * step, best_val);
    if best_idx > 0 {
        let lo = (best_idx - 1) as f64 * step;
        let hi = ((best_idx + 1).min(GRID_POINTS)) as f64 * step;
        let (b, l) = golden_section(&f, lo, hi, |b| {
            effective_loss_dgrad(b, gamma, cfg, data).unwrap_or(f64::INFINITY)
        });
        b_ref = b;
        loss_ref = l;
    }

    let diff = loss_ref - y2;
    if diff < -TIE_TOL {
        Ok(BMinimum {
            b_star: b_ref,
            loss: loss_ref,
            coexistence: false,
        })
    } else if diff <= TIE_TOL && best_idx > 0 {
        Ok(BMinimum {
            b_star: 0.0,
            loss: y2,
            coexistence: true,
        })
    } else {
        Ok(BMinimum {
            b_star: 0.0,
            loss: y2,
            coexistence: false,
        })
    }
}

/// Golden-section search on `[lo, hi]`; stops at bracket width
/// `BRACKET_TOL` or when the gradient at the bracket midpoint falls below
/// `GRAD_TOL`.
fn golden_section<F, G>(f: &F, mut lo: f64, mut hi: f64, grad: G) -> (f64, f64)
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while hi - lo > BRACKET_TOL {
        let mid = 0.5 * (lo + hi);
        if grad(mid).abs() <= GRAD_TOL {
            break;
        }
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f(d);
        }
    }
    let mid = 0.5 * (lo + hi);
    let fm = f(mid);
    let mut best = (mid, fm);
    if fc < best.1 {
        best = (c, fc);
    }
    if fd < best.1 {
        best = (d, fd);
    }
    best
}

/// Closed-form ridge solution for depth 0.
#[derive(Debug, Clone)]
pub struct RidgeSolution {
    pub weights: nalgebra::DVector<f64>,
    pub loss: f64,
    /// Set when `gamma = 0` met a singular covariance and the minimum-norm
    /// pseudo-inverse solution was returned instead.
    pub pseudo_inverse: bool,
}

/// `W* = (A0 + gamma I)^{-1} E[xy]`, `L = E[y^2] - E[xy]^T (A0 + gamma I)^{-1} E[xy]`,
/// evaluated in the eigenbasis. Infinitely differentiable in every
/// hyperparameter for `gamma > 0`: depth 0 has no phase transition.
pub fn ridge_loss(gamma: f64, data: &MomentData) -> Result<RidgeSolution, LandscapeError> {
    if gamma < 0.0 || gamma.is_nan() {
        return Err(LandscapeError::NegativeGamma(gamma));
    }
    let cutoff = 1e-12 * (1.0 + data.a_max());
    let mut w_rot = nalgebra::DVector::zeros(data.dim());
    let mut loss = data.y2();
    let mut pseudo = false;
    for (i, (a, s)) in data.eigvals().iter().zip(data.xy_rot().iter()).enumerate() {
        let den = a + gamma;
        if den <= cutoff {
            pseudo = true;
            continue;
        }
        w_rot[i] = s / den;
        loss -= s * s / den;
    }
    Ok(RidgeSolution {
        weights: data.rotation() * w_rot,
        loss,
        pseudo_inverse: pseudo,
    })
}

/// The depth-1 critical point `gamma* = ||E[xy]||`: the second-order phase
/// transition between the trivial and feature-learning phases.
pub fn critical_gamma_d1(data: &MomentData) -> f64 {
    signal_norms(data).e0
}

/// Taylor coefficients of the squared order parameter `s = d0 b^2` in
/// `Delta = gamma - gamma*` just below the depth-1 critical point:
/// `s(Delta) = beta1 Delta + beta2 Delta^2 + O(Delta^3)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LandauCoefficients {
    pub gamma_star: f64,
    pub beta1: f64,
    pub beta2: f64,
}

/// Closed-form Landau coefficients for depth 1:
/// `beta1 = -E0^2 / ((sigma^2 + d1) E1^2)` and
/// `beta2 = 3 E0 (E2^2 - E1^2) / (2 (sigma^2 + d1) E1^4)`, with `d1` the
/// hidden width. Only `beta1` is cross-checked against sweep numerics; the
/// printed `beta2` form is reported as-is.
pub fn landau_coefficients(
    cfg: &NetConfig,
    data: &MomentData,
) -> Result<LandauCoefficients, LandscapeError> {
    cfg.validate()?;
    if cfg.depth != 1 {
        return Err(LandscapeError::DepthUnsupported {
            depth: cfg.depth,
            needs: "== 1",
        });
    }
    let SignalNorms { e0, e1, e2 } = signal_norms(data);
    if e1 == 0.0 {
        return Err(LandscapeError::UndefinedCoefficients);
    }
    let c = cfg.noise_var + cfg.width_f();
    let e1_sq = e1 * e1;
    Ok(LandauCoefficients {
        gamma_star: e0,
        beta1: -(e0 * e0) / (c * e1_sq),
        beta2: 3.0 * e0 * (e2 * e2 - e1_sq) / (2.0 * c * e1_sq * e1_sq),
    })
}

/// The claimed closed form for the left second derivative of the free
/// energy at the depth-1 critical point:
/// `-d1/(sigma^2 + d1) * E0^2/E1^2`.
///
/// On the exactly solvable single-mode instance this value is half the
/// numerically measured `L''` from the left; it is exposed verbatim so
/// callers can cross-check it against sweep numerics rather than silently
/// reconciling the two.
pub fn second_derivative_left_paper(
    cfg: &NetConfig,
    data: &MomentData,
) -> Result<f64, LandscapeError> {
    cfg.validate()?;
    if cfg.depth != 1 {
        return Err(LandscapeError::DepthUnsupported {
            depth: cfg.depth,
            needs: "== 1",
        });
    }
    let SignalNorms { e0, e1, .. } = signal_norms(data);
    if e1 == 0.0 {
        return Err(LandscapeError::UndefinedCoefficients);
    }
    let d1 = cfg.width_f();
    Ok(-(d1 / (cfg.noise_var + d1)) * (e0 * e0) / (e1 * e1))
}

/// The interval every nonzero global minimizer must lie in.
#[derive(Debug, Clone, Copy)]
pub struct BStarBounds {
    pub lower: f64,
    pub upper: f64,
}

impl BStarBounds {
    /// An empty interval means no nonzero minimizer can exist at this
    /// `gamma`: the trivial solution is global.
    pub fn is_empty(&self) -> bool {
        self.lower > self.upper
    }
}

/// `lower = (1/d0) (gamma/E0)^{1/(D-1)}` (depth >= 2; zero at depth 1) and
/// `upper = [E0 / (d0 (sigma^2+d0)^D a_max)]^{1/(D+1)}`, evaluated in log
/// space so large depths do not overflow.
///
/// As `D -> infinity` the bounds tend to `1/d0` and `1/(sigma^2 + d0)`; for
/// any `sigma^2 > 0` the interval eventually empties, which is how the
/// infinite-depth loss pins to `E[y^2]` at positive weight decay.
pub fn bstar_bounds(
    gamma: f64,
    cfg: &NetConfig,
    data: &MomentData,
) -> Result<BStarBounds, LandscapeError> {
    cfg.validate()?;
    if gamma < 0.0 || gamma.is_nan() {
        return Err(LandscapeError::NegativeGamma(gamma));
    }
    if cfg.depth == 0 {
        return Err(LandscapeError::DepthUnsupported {
            depth: 0,
            needs: ">= 1",
        });
    }
    let e0 = signal_norms(data).e0;
    if e0 == 0.0 {
        return Ok(BStarBounds {
            lower: 0.0,
            upper: 0.0,
        });
    }
    let a_max = data.a_max();
    if a_max <= 0.0 {
        return Err(LandscapeError::DegenerateSearch(
            "covariance is zero but the signal is not",
        ));
    }
    let d0 = cfg.width_f();
    let depth = cfg.depth as f64;
    let lower = if cfg.depth >= 2 {
        if gamma == 0.0 {
            0.0
        } else {
            ((gamma / e0).ln() / (depth - 1.0)).exp() / d0
        }
    } else {
        0.0
    };
    let ln_upper =
        (e0.ln() - d0.ln() - depth * (cfg.noise_var + d0).ln() - a_max.ln()) / (depth + 1.0);
    Ok(BStarBounds {
        lower,
        upper: ln_upper.exp(),
    })
}

/// Structural constants of the scalar mean-field loss.
#[derive(Debug, Clone, Copy)]
pub struct MeanFieldConstants {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

/// Scalar data moments consumed by the mean-field loss.
#[derive(Debug, Clone, Copy)]
pub struct ScalarMoments {
    pub x2: f64,
    pub xy: f64,
}

/// The scalar mean-field loss
/// `c0 E[x^2] b^{2D+2} - c1 E[xy] b^{D+1} + gamma c2 |b|^p` (constant term
/// dropped). Defined for `b` of either sign: the odd `b^{D+1}` term shows
/// how even depths break the sign symmetry of the scalar picture.
pub fn meanfield_loss(
    b: f64,
    gamma: f64,
    cfg: &NetConfig,
    constants: &MeanFieldConstants,
    moments: &ScalarMoments,
) -> f64 {
    let d = cfg.depth as i32;
    let p = cfg.reg_exponent as i32;
    constants.c0 * moments.x2 * b.powi(2 * d + 2) - constants.c1 * moments.xy * b.powi(d + 1)
        + gamma * constants.c2 * b.abs().powi(p)
}

/// The infinite-depth limiting loss for `gamma > 0`: `E[y^2]`, i.e. the
/// value of the trivial phase.
pub fn depth_limit_loss(data: &MomentData) -> f64 {
    data.y2()
}
