//! Large-system MSE predictions for joint channel and data estimation.
//!
//! In the limit `N -> inf` with `M/N`, `K_d/N`, `K_p/N` fixed, every entry of
//! `H` and `X_d` behaves as if observed through a scalar AWGN channel
//! `y = sqrt(q) x + w`, `w ~ CN(0, 1)`, whose effective SNR `q` is fixed by a
//! set of coupled order-parameter equations. This module solves those
//! equations, evaluates the scalar posterior MSEs, provides the closed-form
//! approximation valid for many antennas and symbols, and counts the
//! arithmetic cost of one solver sweep.

use crate::quadrature::GaussHermite;
use crate::{Error, Result};

/// Dimensions and priors of the large-system model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicaParams {
    /// `M / N`.
    pub alpha: f64,
    /// `K_d / N`.
    pub beta_d: f64,
    /// `K_p / N`.
    pub beta_p: f64,
    /// User count, which enters through the `sigma_n2 / N` terms.
    pub users: f64,
    pub sigma_n2: f64,
    pub sigma_x2: f64,
    /// Bernoulli-Gaussian channel prior: sparsity and slab variance.
    pub lambda: f64,
    pub sigma_h2: f64,
}

impl ReplicaParams {
    /// Parameters for an `antennas x users` system with `pilot_len` pilots
    /// and `data_len` data symbols.
    #[allow(clippy::too_many_arguments)]
    pub fn from_dimensions(
        antennas: usize,
        users: usize,
        pilot_len: usize,
        data_len: usize,
        sigma_n2: f64,
        sigma_x2: f64,
        lambda: f64,
        sigma_h2: f64,
    ) -> Self {
        let n = users as f64;
        ReplicaParams {
            alpha: antennas as f64 / n,
            beta_d: data_len as f64 / n,
            beta_p: pilot_len as f64 / n,
            users: n,
            sigma_n2,
            sigma_x2,
            lambda,
            sigma_h2,
        }
    }

    /// Average power of one channel entry.
    pub fn c_h(&self) -> f64 {
        self.lambda * self.sigma_h2
    }

    pub fn antennas(&self) -> f64 {
        self.alpha * self.users
    }

    pub fn data_len(&self) -> f64 {
        self.beta_d * self.users
    }

    pub fn pilot_len(&self) -> f64 {
        self.beta_p * self.users
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.alpha,
            self.beta_d,
            self.beta_p,
            self.users,
            self.sigma_x2,
            self.sigma_h2,
        ];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidScenario(
                "replica ratios and powers must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidScenario("sparsity outside [0, 1]".into()));
        }
        if !(self.sigma_n2 >= 0.0) {
            return Err(Error::InvalidScenario("negative noise variance".into()));
        }
        Ok(())
    }
}

/// Order parameters and MSEs at the fixed point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicaSolution {
    pub q_h: f64,
    pub q_xd: f64,
    pub q_xp: f64,
    pub qt_h: f64,
    pub qt_xd: f64,
    pub qt_xp: f64,
    pub mse_h: f64,
    pub mse_xd: f64,
    pub chi_p: f64,
    pub chi_d: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl ReplicaSolution {
    /// Predicted `||X_d_hat - X_d|| / ||X_d||`.
    pub fn nmse_xd(&self, sigma_x2: f64) -> f64 {
        (self.mse_xd / sigma_x2).sqrt()
    }

    /// Predicted `||H_hat - H|| / ||H||`.
    pub fn nmse_h(&self, c_h: f64) -> f64 {
        (self.mse_h / c_h).sqrt()
    }
}

/// MSE of the Gaussian-prior scalar channel: `sigma_x2 / (1 + q sigma_x2)`.
pub fn scalar_mse_gaussian(qt: f64, sigma_x2: f64) -> f64 {
    if qt.is_infinite() {
        return 0.0;
    }
    sigma_x2 / (1.0 + qt * sigma_x2)
}

/// Quadrature orders tried in turn until two successive ones agree.
pub const QUADRATURE_ORDERS: [usize; 3] = [40, 80, 160];
/// Relative agreement required between successive quadrature orders.
pub const QUADRATURE_TOLERANCE: f64 = 1e-6;

/// Spike-and-slab posterior weight of the slab for the scalar channel
/// `y = sqrt(q) h + w`, with circular complex Gaussian densities.
fn slab_posterior(y2: f64, qt: f64, lambda: f64, sigma_h2: f64) -> f64 {
    // (1 - lambda) CN(y; 0, 1) / (lambda CN(y; 0, s)), s = 1 + q sigma_h2
    let s = 1.0 + qt * sigma_h2;
    let log_ratio = ((1.0 - lambda) / lambda).ln() + s.ln() - y2 * (1.0 - 1.0 / s);
    1.0 / (1.0 + log_ratio.exp())
}

/// `E_y Var(h | y)` for `h ~ (1-lambda) delta + lambda CN(0, sigma_h2)` seen
/// through `y = sqrt(q) h + w`, evaluated on one product Gauss-Hermite rule.
///
/// Splitting the posterior variance and moving the expectation onto the
/// noise-only component leaves
/// `lambda nu + (1 - lambda) k^2 E_{y ~ CN(0,1)}[alpha(y) |y|^2]` with
/// `nu = sigma_h2 / s`, `k = sqrt(q) sigma_h2 / s`, `s = 1 + q sigma_h2`.
/// The remaining integrand is a smooth logistic ramp at unit scale, which the
/// product rule resolves without centering on the much wider slab.
pub fn scalar_mse_bg_with(rule: &GaussHermite, qt: f64, lambda: f64, sigma_h2: f64) -> f64 {
    if lambda <= 0.0 || sigma_h2 == 0.0 {
        return 0.0;
    }
    let s = 1.0 + qt * sigma_h2;
    let nu = sigma_h2 / s;
    if lambda >= 1.0 {
        return nu;
    }
    let k2 = qt * sigma_h2 * sigma_h2 / (s * s);
    let mut acc = 0.0;
    for (u, wu) in rule.nodes.iter().zip(&rule.weights) {
        for (v, wv) in rule.nodes.iter().zip(&rule.weights) {
            let y2 = u * u + v * v;
            acc += wu * wv * slab_posterior(y2, qt, lambda, sigma_h2) * y2;
        }
    }
    acc /= std::f64::consts::PI;
    lambda * nu + (1.0 - lambda) * k2 * acc
}

/// [`scalar_mse_bg_with`] with order escalation: orders 40, 80, 160 are tried
/// until two successive values agree to [`QUADRATURE_TOLERANCE`].
pub fn scalar_mse_bg(qt: f64, lambda: f64, sigma_h2: f64) -> Result<f64> {
    thread_local! {
        static RULES: Vec<GaussHermite> =
            QUADRATURE_ORDERS.iter().map(|&n| GaussHermite::new(n)).collect();
    }
    RULES.with(|rules| {
        let mut prev = scalar_mse_bg_with(&rules[0], qt, lambda, sigma_h2);
        for i in 1..rules.len() {
            let next = scalar_mse_bg_with(&rules[i], qt, lambda, sigma_h2);
            let scale = next.abs().max(prev.abs());
            if (next - prev).abs() <= QUADRATURE_TOLERANCE * scale {
                return Ok(next);
            }
            if i + 1 == rules.len() {
                return Err(Error::QuadratureUnstable {
                    low: QUADRATURE_ORDERS[i - 1],
                    high: QUADRATURE_ORDERS[i],
                    low_value: prev,
                    high_value: next,
                });
            }
            prev = next;
        }
        Ok(prev)
    })
}

/// Stopping rule and damping of the order-parameter iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointOptions {
    pub damping: f64,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions {
            damping: 0.5,
            tolerance: 1e-10,
            max_iter: 1000,
        }
    }
}

/// Solves the order-parameter equations starting from the prior variances.
pub fn solve_fixed_point(params: &ReplicaParams) -> Result<ReplicaSolution> {
    solve_fixed_point_from(
        params,
        params.c_h(),
        params.sigma_x2,
        &FixedPointOptions::default(),
    )
}

/// Solves the order-parameter equations from an explicit starting MSE pair.
/// A run that exhausts `max_iter` returns its last iterate with
/// `converged == false`.
pub fn solve_fixed_point_from(
    params: &ReplicaParams,
    mse_h0: f64,
    mse_xd0: f64,
    opts: &FixedPointOptions,
) -> Result<ReplicaSolution> {
    params.validate()?;
    let c_h = params.c_h();
    let c_x = params.sigma_x2;
    let noise = params.sigma_n2 / params.users;
    let mut mse_h = mse_h0.clamp(0.0, c_h);
    let mut mse_xd = mse_xd0.clamp(0.0, c_x);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        let (qt_h, qt_xd, _, _, _) = conjugates(params, mse_h, mse_xd, noise);
        let new_h = scalar_mse_bg(qt_h, params.lambda, params.sigma_h2)?;
        let new_xd = scalar_mse_gaussian(qt_xd, c_x);
        let next_h = opts.damping * new_h + (1.0 - opts.damping) * mse_h;
        let next_xd = opts.damping * new_xd + (1.0 - opts.damping) * mse_xd;
        let change = relative_change(next_h, mse_h).max(relative_change(next_xd, mse_xd));
        mse_h = next_h;
        mse_xd = next_xd;
        if change < opts.tolerance {
            converged = true;
            break;
        }
    }
    let (qt_h, qt_xd, qt_xp, chi_p, chi_d) = conjugates(params, mse_h, mse_xd, noise);
    Ok(ReplicaSolution {
        q_h: c_h - mse_h,
        q_xd: c_x - mse_xd,
        q_xp: c_x,
        qt_h,
        qt_xd,
        qt_xp,
        mse_h,
        mse_xd,
        chi_p,
        chi_d,
        converged,
        iterations,
    })
}

/// `(qt_h, qt_xd, qt_xp, chi_p, chi_d)` for the current MSE pair.
fn conjugates(p: &ReplicaParams, mse_h: f64, mse_xd: f64, noise: f64) -> (f64, f64, f64, f64, f64) {
    let c_h = p.c_h();
    let c_x = p.sigma_x2;
    let q_h = c_h - mse_h;
    let q_xd = c_x - mse_xd;
    let q_xp = c_x;
    let chi_p = 1.0 / (noise + c_x * c_h - q_xp * q_h);
    let chi_d = 1.0 / (noise + c_x * c_h - q_xd * q_h);
    let qt_h = p.beta_d * q_xd * chi_d + p.beta_p * q_xp * chi_p;
    let qt_xd = p.alpha * q_h * chi_d;
    let qt_xp = p.alpha * q_h * chi_p;
    (qt_h, qt_xd, qt_xp, chi_p, chi_d)
}

fn relative_change(new: f64, old: f64) -> f64 {
    let scale = new.abs().max(old.abs());
    if scale == 0.0 {
        0.0
    } else {
        (new - old).abs() / scale
    }
}

/// Closed-form MSE pair valid when antennas and symbols far outnumber users.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Approximation {
    pub mse_xd: f64,
    pub mse_h: f64,
    pub iterations: usize,
}

/// Solves `mse_xd = sigma_n2 / (M lambda sigma_h2 - M mse_h)` and
/// `mse_h = sigma_n2 / (K_d sigma_x2 - K_d mse_xd + K_p sigma_x2)` jointly by
/// plain iteration from `(0, 0)`.
pub fn proposition1_approx(params: &ReplicaParams) -> Result<Approximation> {
    params.validate()?;
    let m = params.antennas();
    let kd = params.data_len();
    let kp = params.pilot_len();
    let ae_h = m * params.c_h();
    let ae_xd = kd * params.sigma_x2;
    let ae_xp = kp * params.sigma_x2;
    let (mut mse_xd, mut mse_h) = (0.0f64, 0.0f64);
    for it in 1..=1000 {
        let den_x = ae_h - m * mse_h;
        let den_h = ae_xd - kd * mse_xd + ae_xp;
        if !(den_x > 0.0) || !(den_h > 0.0) {
            return Err(Error::NonPhysical(format!(
                "non-positive energy balance at iteration {it}"
            )));
        }
        let next_xd = params.sigma_n2 / den_x;
        let next_h = params.sigma_n2 / den_h;
        if next_xd > params.sigma_x2 || next_h > params.c_h() {
            return Err(Error::NonPhysical(format!(
                "MSE above the prior variance at iteration {it}"
            )));
        }
        let change = relative_change(next_xd, mse_xd).max(relative_change(next_h, mse_h));
        mse_xd = next_xd;
        mse_h = next_h;
        if change < 1e-12 {
            return Ok(Approximation {
                mse_xd,
                mse_h,
                iterations: it,
            });
        }
    }
    Err(Error::NotConverged { iterations: 1000 })
}

/// Additions and multiplications of one full-size sweep and of one reduced
/// sweep over `M_r` rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComplexityCounts {
    pub mults_orig: u64,
    pub adds_orig: u64,
    pub mults_jcd: u64,
    pub adds_jcd: u64,
}

impl ComplexityCounts {
    /// Full-size over reduced multiplications.
    pub fn mult_ratio(&self) -> f64 {
        self.mults_orig as f64 / self.mults_jcd as f64
    }

    /// Full-size multiplications over `users` reduced problems.
    pub fn mult_ratio_per_user(&self, users: u64) -> f64 {
        self.mults_orig as f64 / (users * self.mults_jcd) as f64
    }
}

pub fn complexity_counts(m: u64, n: u64, kd: u64, mr: u64) -> ComplexityCounts {
    ComplexityCounts {
        mults_orig: 10 * m * n * kd + 9 * m * kd + 7 * n * kd + 16 * m * n + n,
        adds_orig: 10 * m * n * kd + 6 * m * kd + 4 * n * kd + 8 * m * n,
        mults_jcd: 19 * mr * kd + 16 * mr + 7 * kd + 1,
        adds_jcd: 16 * mr * kd + 8 * mr + 4 * kd,
    }
}
