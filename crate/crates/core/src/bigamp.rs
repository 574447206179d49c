//! EM-BiGAMP for `Y = H X + N` with partially known `X`.
//!
//! Columns of `X` flagged as pilots are pinned to their known values with zero
//! variance; the remaining columns carry an i.i.d. CN(0, sigma_x2) prior. Each
//! entry of `H` follows a per-user Bernoulli-Gaussian prior
//! `(1 - lambda_n) delta(h) + lambda_n CN(h; 0, gamma_n)` whose parameters are
//! re-estimated by EM after every sweep.
//!
//! With every column flagged as a pilot the data branch never runs and the
//! solver reduces to a linear GAMP estimating `H` alone.

use num_complex::Complex64;

use crate::channel::Scenario;
use crate::linalg::{abs2, frobenius_sqr};
use crate::{CMat, Error, RMat, Result};

/// Lower clamp applied to variances that appear in denominators.
pub const VAR_MIN: f64 = 1e-12;
/// Upper clamp on every stored variance.
pub const VAR_MAX: f64 = 1e12;
/// Starting sparsity of every user.
pub const INITIAL_SPARSITY: f64 = 0.05;
/// Floor applied to the EM estimate of the slab variance.
pub const GAMMA_FLOOR: f64 = 1e-12;

/// Priors of one bilinear problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Priors {
    /// Starting sparsity per user.
    pub lambda: Vec<f64>,
    /// Starting slab variance per user.
    pub gamma: Vec<f64>,
    pub sigma_x2: f64,
    pub sigma_n2: f64,
    /// `true` for columns whose symbols are known.
    pub pilot_mask: Vec<bool>,
    /// `N x K`; entries in data columns must be zero.
    pub pilot_values: CMat,
}

impl Priors {
    /// Pilots occupy the first `pilots.ncols()` columns, followed by
    /// `data_len` data columns. Sparsity starts at [`INITIAL_SPARSITY`].
    pub fn new(pilots: &CMat, data_len: usize, sigma_x2: f64, sigma_n2: f64, gamma: f64) -> Self {
        let n = pilots.nrows();
        let kp = pilots.ncols();
        let k = kp + data_len;
        let pilot_values = CMat::from_fn(n, k, |r, c| {
            if c < kp {
                pilots[(r, c)]
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        Priors {
            lambda: vec![INITIAL_SPARSITY; n],
            gamma: vec![gamma; n],
            sigma_x2,
            sigma_n2,
            pilot_mask: (0..k).map(|c| c < kp).collect(),
            pilot_values,
        }
    }

    pub fn users(&self) -> usize {
        self.pilot_values.nrows()
    }

    pub fn frame_len(&self) -> usize {
        self.pilot_mask.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.users();
        if self.lambda.len() != n || self.gamma.len() != n {
            return Err(Error::DimensionMismatch(
                "per-user prior vectors do not match the user count".into(),
            ));
        }
        if self.pilot_values.ncols() != self.pilot_mask.len() {
            return Err(Error::DimensionMismatch(
                "pilot values and pilot mask disagree on frame length".into(),
            ));
        }
        if self.lambda.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::InvalidScenario("sparsity outside [0, 1]".into()));
        }
        if self.gamma.iter().any(|g| !(*g >= 0.0)) {
            return Err(Error::InvalidScenario("negative slab variance".into()));
        }
        if !(self.sigma_x2 > 0.0) || !(self.sigma_n2 >= 0.0) {
            return Err(Error::InvalidScenario("powers must be positive".into()));
        }
        for (c, &pilot) in self.pilot_mask.iter().enumerate() {
            if !pilot
                && self
                    .pilot_values
                    .column(c)
                    .iter()
                    .any(|z| *z != Complex64::new(0.0, 0.0))
            {
                return Err(Error::InvalidScenario(format!(
                    "pilot value given on data column {c}"
                )));
            }
        }
        Ok(())
    }
}

/// Starting slab variance matched to the observed energy:
/// `E|y|^2 = N lambda gamma sigma_x2 + sigma_n2`.
pub fn initial_gamma(y: &CMat, users: usize, sigma_x2: f64, sigma_n2: f64) -> f64 {
    let per_entry = frobenius_sqr(y) / (y.nrows() * y.ncols()).max(1) as f64;
    let signal = (per_entry - sigma_n2)
        .max(per_entry * 1e-3)
        .max(GAMMA_FLOOR);
    (signal / (users as f64 * INITIAL_SPARSITY * sigma_x2)).max(GAMMA_FLOOR)
}

/// Loop controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub max_iter: usize,
    /// Blend factor for successive iterates, in `(0, 1]`.
    pub damping: f64,
    /// Re-estimate `lambda` and `gamma` by EM after each sweep.
    pub learn_hyperparameters: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-4,
            max_iter: 200,
            damping: 1.0,
            learn_hyperparameters: true,
        }
    }
}

impl From<&Scenario> for SolverOptions {
    fn from(s: &Scenario) -> Self {
        SolverOptions {
            tolerance: s.tolerance,
            max_iter: s.max_iter,
            damping: s.damping,
            learn_hyperparameters: true,
        }
    }
}

/// Full message-passing state. Shapes: `M x N` for channel quantities,
/// `N x K` for symbol quantities, `M x K` for output quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct BigampState {
    pub x_hat: CMat,
    pub v_x: RMat,
    pub h_hat: CMat,
    pub v_h: RMat,
    pub s_hat: CMat,
    pub v_s: RMat,
    pub p_bar: CMat,
    pub v_p_bar: RMat,
    pub p_hat: CMat,
    pub v_p: RMat,
    pub z_hat: CMat,
    pub v_z: RMat,
    pub r_hat: CMat,
    pub v_r: RMat,
    pub q_hat: CMat,
    pub v_q: RMat,
    /// Spike/slab responsibilities from the last channel update.
    pub alpha: RMat,
    pub lambda_t: Vec<f64>,
    pub gamma_t: Vec<f64>,
    pub pilot_mask: Vec<bool>,
    pub sigma_x2: f64,
    /// Whether the data columns hold an estimate formed from a finite
    /// pseudo-observation. Until then they stay out of the Onsager term of
    /// the channel pseudo-observation.
    pub data_informed: bool,
    /// Iteration index, starting at 1.
    pub t: usize,
}

/// Returned by [`run`].
#[derive(Debug, Clone, PartialEq)]
pub struct BigampEstimate {
    pub h_hat: CMat,
    pub v_h: RMat,
    /// Data-column estimates, `N x K_d`.
    pub x_d_hat: CMat,
    pub v_x_d: RMat,
    pub lambda_final: Vec<f64>,
    pub gamma_final: Vec<f64>,
    pub iterations: usize,
    /// `||Z^(t) - Z^(t-1)|| / ||Z^(t)||` per iteration, with `Z = H X`.
    pub residual_trace: Vec<f64>,
}

fn clamp_var(v: f64) -> f64 {
    if v.is_nan() {
        v
    } else {
        v.clamp(VAR_MIN, VAR_MAX)
    }
}

/// Initial state: `h = 0`, `v_h = 1`, `s = 0`, pilots pinned, data at
/// zero mean with unit variance.
pub fn init_state(priors: &Priors, antennas: usize) -> Result<BigampState> {
    priors.validate()?;
    let n = priors.users();
    let k = priors.frame_len();
    let m = antennas;
    let mut x_hat = CMat::zeros(n, k);
    let mut v_x = RMat::zeros(n, k);
    for c in 0..k {
        for r in 0..n {
            if priors.pilot_mask[c] {
                x_hat[(r, c)] = priors.pilot_values[(r, c)];
            } else {
                v_x[(r, c)] = 1.0;
            }
        }
    }
    Ok(BigampState {
        x_hat,
        v_x,
        h_hat: CMat::zeros(m, n),
        v_h: RMat::from_element(m, n, 1.0),
        s_hat: CMat::zeros(m, k),
        v_s: RMat::zeros(m, k),
        p_bar: CMat::zeros(m, k),
        v_p_bar: RMat::zeros(m, k),
        p_hat: CMat::zeros(m, k),
        v_p: RMat::zeros(m, k),
        z_hat: CMat::zeros(m, k),
        v_z: RMat::zeros(m, k),
        r_hat: CMat::zeros(n, k),
        v_r: RMat::zeros(n, k),
        q_hat: CMat::zeros(m, n),
        v_q: RMat::zeros(m, n),
        alpha: RMat::zeros(m, n),
        lambda_t: priors.lambda.clone(),
        gamma_t: priors.gamma.clone(),
        pilot_mask: priors.pilot_mask.clone(),
        sigma_x2: priors.sigma_x2,
        data_informed: false,
        t: 1,
    })
}

/// Gaussian-codebook posterior of one symbol given the pseudo-observation
/// `r ~ CN(x, v_r)`.
pub fn denoise_x(r: Complex64, v_r: f64, sigma_x2: f64) -> (Complex64, f64) {
    if v_r >= VAR_MAX {
        return (Complex64::new(0.0, 0.0), sigma_x2);
    }
    let w = sigma_x2 / (v_r + sigma_x2);
    (r * w, v_r * w)
}

/// Bernoulli-Gaussian posterior of one channel entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelPosterior {
    pub mean: Complex64,
    pub var: f64,
    /// Posterior probability that the entry is on the slab.
    pub alpha: f64,
}

/// Posterior of `h ~ (1-lambda) delta + lambda CN(0, gamma)` given the
/// pseudo-observation `q ~ CN(h, v_q)`.
///
/// The variance is evaluated as `alpha (1 - alpha) |m|^2 + alpha nu` with
/// `m = q gamma / (v_q + gamma)` and `nu = gamma v_q / (v_q + gamma)`, which is
/// the expanded form of `alpha (|h/alpha|^2 + h v_q / (alpha q)) - |h|^2`
/// without the `0/0` at `q = 0`.
pub fn denoise_h(q: Complex64, v_q: f64, lambda: f64, gamma: f64) -> ChannelPosterior {
    if lambda <= 0.0 {
        return ChannelPosterior {
            mean: Complex64::new(0.0, 0.0),
            var: 0.0,
            alpha: 0.0,
        };
    }
    let alpha = slab_weight(q, v_q, lambda, gamma);
    let shrink = gamma / (v_q + gamma);
    let m = if gamma > 0.0 {
        q * shrink
    } else {
        Complex64::new(0.0, 0.0)
    };
    let nu = if gamma > 0.0 { v_q * shrink } else { 0.0 };
    let mean = m * alpha;
    let var = (alpha * (1.0 - alpha) * m.norm_sqr() + alpha * nu).clamp(0.0, VAR_MAX);
    ChannelPosterior { mean, var, alpha }
}

/// `(1 + (1-lambda) CN(0; q, v) / (lambda CN(0; q, gamma + v)))^{-1}`, in the
/// log domain.
pub fn slab_weight(q: Complex64, v_q: f64, lambda: f64, gamma: f64) -> f64 {
    if lambda >= 1.0 {
        return 1.0;
    }
    if lambda <= 0.0 {
        return 0.0;
    }
    let q2 = q.norm_sqr();
    let log_ratio =
        ((1.0 - lambda) / lambda).ln() + ((gamma + v_q) / v_q).ln() - q2 / v_q + q2 / (gamma + v_q);
    1.0 / (1.0 + log_ratio.exp())
}

/// EM re-estimates of the per-user sparsity and slab variance.
#[derive(Debug, Clone, PartialEq)]
pub struct EmUpdate {
    pub lambda: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Users whose sparsity collapsed to zero; their slab variance was kept.
    pub degenerate: Vec<usize>,
}

/// `lambda_n = mean_m alpha_mn`, `gamma_n = sum_m (v_h + |h|^2) / (lambda_n M_r)`.
pub fn em_update(alpha: &RMat, h_hat: &CMat, v_h: &RMat, previous_gamma: &[f64]) -> EmUpdate {
    let rows = alpha.nrows() as f64;
    let mut lambda = Vec::with_capacity(alpha.ncols());
    let mut gamma = Vec::with_capacity(alpha.ncols());
    let mut degenerate = Vec::new();
    for n in 0..alpha.ncols() {
        let l = (alpha.column(n).sum() / rows).clamp(0.0, 1.0);
        lambda.push(l);
        if l == 0.0 {
            degenerate.push(n);
            gamma.push(previous_gamma[n]);
            continue;
        }
        let energy: f64 = (0..alpha.nrows())
            .map(|m| v_h[(m, n)] + h_hat[(m, n)].norm_sqr())
            .sum();
        gamma.push((energy / (l * rows)).max(GAMMA_FLOOR));
    }
    EmUpdate {
        lambda,
        gamma,
        degenerate,
    }
}

fn diverged(t: usize, what: &str) -> Error {
    Error::NumericalDivergence {
        iteration: t,
        what: what.to_string(),
    }
}

impl BigampState {
    pub fn antennas(&self) -> usize {
        self.h_hat.nrows()
    }

    pub fn users(&self) -> usize {
        self.h_hat.ncols()
    }

    pub fn frame_len(&self) -> usize {
        self.x_hat.ncols()
    }

    /// Output-side half sweep: plain and Onsager-corrected moments of `z`, its
    /// posterior under the AWGN likelihood, and the residual messages `s`.
    pub fn output_step(&mut self, y: &CMat, sigma_n2: f64) -> Result<()> {
        if y.nrows() != self.antennas() || y.ncols() != self.frame_len() {
            return Err(Error::DimensionMismatch(format!(
                "observation is {}x{}, state expects {}x{}",
                y.nrows(),
                y.ncols(),
                self.antennas(),
                self.frame_len()
            )));
        }
        let h_abs2 = abs2(&self.h_hat);
        let x_abs2 = abs2(&self.x_hat);
        self.v_p_bar = &h_abs2 * &self.v_x + &self.v_h * &x_abs2;
        self.p_bar = &self.h_hat * &self.x_hat;
        let v_p = &self.v_p_bar + &self.v_h * &self.v_x;
        self.v_p = v_p.map(clamp_var);
        if self.v_p.iter().any(|v| !v.is_finite()) {
            return Err(diverged(self.t, "output variance not finite"));
        }

        let (m, k) = (self.antennas(), self.frame_len());
        for c in 0..k {
            for r in 0..m {
                let vp = self.v_p[(r, c)];
                let p = self.p_bar[(r, c)] - self.s_hat[(r, c)] * self.v_p_bar[(r, c)];
                self.p_hat[(r, c)] = p;
                let denom = vp + sigma_n2;
                let z = (y[(r, c)] * vp + p * sigma_n2) / denom;
                self.z_hat[(r, c)] = z;
                self.v_z[(r, c)] = vp * sigma_n2 / denom;
                // 1/v_p - v_z/v_p^2 simplifies to 1/(v_p + sigma_n2)
                self.v_s[(r, c)] = (1.0 / denom).min(VAR_MAX);
                self.s_hat[(r, c)] = (z - p) / vp;
            }
        }
        Ok(())
    }

    /// Input-side half sweep: pseudo-observations `r` of the data symbols and
    /// `q` of the channel entries. Pilot columns of `r` are left untouched.
    ///
    /// Data columns still at their uninformative start (`x = 0`, `v_x =
    /// sigma_x2`) carry no information about `H`; their `v_x` would otherwise
    /// enter the Onsager term of `q` with a weight several times that of the
    /// pilots and flip the sign of the channel estimate.
    pub fn input_step(&mut self) -> Result<()> {
        let h_abs2 = abs2(&self.h_hat);
        let x_abs2 = abs2(&self.x_hat);

        let r_den = h_abs2.transpose() * &self.v_s;
        let r_corr = self.v_h.transpose() * &self.v_s;
        let r_msg = self.h_hat.adjoint() * &self.s_hat;
        let (n, k) = (self.users(), self.frame_len());
        for c in 0..k {
            if self.pilot_mask[c] {
                continue;
            }
            for r in 0..n {
                let vr = inverse_clamped(r_den[(r, c)]);
                self.v_r[(r, c)] = vr;
                self.r_hat[(r, c)] =
                    self.x_hat[(r, c)] * (1.0 - vr * r_corr[(r, c)]) + r_msg[(r, c)] * vr;
            }
        }

        let q_den = &self.v_s * x_abs2.transpose();
        let m = self.antennas();
        let q_corr = if self.data_informed {
            &self.v_s * self.v_x.transpose()
        } else {
            RMat::zeros(m, n)
        };
        let q_msg = &self.s_hat * self.x_hat.adjoint();
        for c in 0..n {
            for r in 0..m {
                let vq = inverse_clamped(q_den[(r, c)]);
                self.v_q[(r, c)] = vq;
                self.q_hat[(r, c)] =
                    self.h_hat[(r, c)] * (1.0 - vq * q_corr[(r, c)]) + q_msg[(r, c)] * vq;
            }
        }
        if self
            .q_hat
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(diverged(self.t, "channel pseudo-observation not finite"));
        }
        Ok(())
    }

    /// Zeroes the residual messages of the data columns. After the first
    /// sweep these were formed against an all-zero channel estimate; carrying
    /// them into the next Onsager correction, where the plain output variance
    /// jumps with the first channel estimate, inflates the symbol estimates
    /// by orders of magnitude.
    pub fn reset_data_residuals(&mut self) {
        let m = self.antennas();
        for c in 0..self.frame_len() {
            if !self.pilot_mask[c] {
                for r in 0..m {
                    self.s_hat[(r, c)] = Complex64::new(0.0, 0.0);
                }
            }
        }
    }

    /// Posterior update of the data columns.
    pub fn update_symbols(&mut self) {
        let (n, k) = (self.users(), self.frame_len());
        for c in 0..k {
            if self.pilot_mask[c] {
                continue;
            }
            for r in 0..n {
                let vr = self.v_r[(r, c)];
                let (x, v) = denoise_x(self.r_hat[(r, c)], vr, self.sigma_x2);
                self.x_hat[(r, c)] = x;
                self.v_x[(r, c)] = v;
                self.data_informed |= vr < VAR_MAX;
            }
        }
    }

    /// Bernoulli-Gaussian posterior update of every channel entry.
    pub fn update_channel(&mut self) {
        let (m, n) = (self.antennas(), self.users());
        for c in 0..n {
            for r in 0..m {
                let post = denoise_h(
                    self.q_hat[(r, c)],
                    self.v_q[(r, c)],
                    self.lambda_t[c],
                    self.gamma_t[c],
                );
                self.h_hat[(r, c)] = post.mean;
                self.v_h[(r, c)] = post.var;
                self.alpha[(r, c)] = post.alpha;
            }
        }
    }

    pub fn em_step(&mut self) -> EmUpdate {
        let upd = em_update(&self.alpha, &self.h_hat, &self.v_h, &self.gamma_t);
        self.lambda_t = upd.lambda.clone();
        self.gamma_t = upd.gamma.clone();
        upd
    }
}

fn inverse_clamped(den: f64) -> f64 {
    if den > 0.0 {
        (1.0 / den).min(VAR_MAX)
    } else {
        VAR_MAX
    }
}

fn blend_c(new: &mut CMat, old: &CMat, rho: f64) {
    new.zip_apply(old, |a, b| *a = *a * rho + b * (1.0 - rho));
}

fn blend_r(new: &mut RMat, old: &RMat, rho: f64) {
    new.zip_apply(old, |a, b| *a = *a * rho + b * (1.0 - rho));
}

/// Runs the full EM-BiGAMP loop on `y` until
/// `||Z^(t) - Z^(t-1)|| <= tolerance ||Z^(t)||` or `max_iter` sweeps, where
/// `Z^(t) = H^(t) X^(t)` is the product of the current estimates. The
/// likelihood posterior of `z` is not used here because it equals `y`
/// whenever the noise variance is zero.
pub fn run(y: &CMat, priors: &Priors, opts: &SolverOptions) -> Result<BigampEstimate> {
    if y.ncols() != priors.frame_len() {
        return Err(Error::DimensionMismatch(format!(
            "observation has {} columns, priors describe {}",
            y.ncols(),
            priors.frame_len()
        )));
    }
    let mut st = init_state(priors, y.nrows())?;
    let mut trace = Vec::new();
    let mut z_prev = CMat::zeros(y.nrows(), y.ncols());
    let rho = opts.damping;
    loop {
        let old = (rho < 1.0).then(|| {
            (
                st.h_hat.clone(),
                st.v_h.clone(),
                st.x_hat.clone(),
                st.v_x.clone(),
                st.s_hat.clone(),
            )
        });
        st.output_step(y, priors.sigma_n2)?;
        if let Some((_, _, _, _, s_old)) = &old {
            if st.t > 1 {
                blend_c(&mut st.s_hat, s_old, rho);
            }
        }
        st.input_step()?;
        if st.t == 1 {
            st.reset_data_residuals();
        }
        st.update_symbols();
        st.update_channel();
        if let Some((h_old, vh_old, x_old, vx_old, _)) = &old {
            if st.t > 1 {
                blend_c(&mut st.h_hat, h_old, rho);
                blend_r(&mut st.v_h, vh_old, rho);
                blend_c(&mut st.x_hat, x_old, rho);
                blend_r(&mut st.v_x, vx_old, rho);
            }
        }
        if opts.learn_hyperparameters {
            st.em_step();
        }
        if st
            .h_hat
            .iter()
            .chain(st.x_hat.iter())
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(diverged(st.t, "posterior mean not finite"));
        }

        let z_now = &st.h_hat * &st.x_hat;
        let z_norm = z_now.norm();
        let delta = (&z_now - &z_prev).norm();
        let residual = if z_norm > 0.0 {
            delta / z_norm
        } else if delta == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        trace.push(residual);
        z_prev = z_now;
        if residual <= opts.tolerance || st.t >= opts.max_iter {
            break;
        }
        st.t += 1;
    }

    let data_cols: Vec<usize> = (0..priors.frame_len())
        .filter(|&c| !priors.pilot_mask[c])
        .collect();
    let n = priors.users();
    let x_d_hat = CMat::from_fn(n, data_cols.len(), |r, c| st.x_hat[(r, data_cols[c])]);
    let v_x_d = RMat::from_fn(n, data_cols.len(), |r, c| st.v_x[(r, data_cols[c])]);
    Ok(BigampEstimate {
        h_hat: st.h_hat,
        v_h: st.v_h,
        x_d_hat,
        v_x_d,
        lambda_final: st.lambda_t,
        gamma_final: st.gamma_t,
        iterations: st.t,
        residual_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{
        noise_variance_for_snr, observe, on_grid_angle, pilot_matrix, realization_from_paths,
        sample_channel, Path,
    };
    use crate::quadrature::GaussHermite;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn single_user_pilot_problem(
        seed: u64,
        antennas: usize,
        pilot_len: usize,
        snr_db: f64,
    ) -> (CMat, CMat, CMat, f64) {
        let sc = Scenario {
            antennas,
            users: 1,
            paths: vec![3],
            pilot_len,
            data_len: 0,
            tracked_paths: 3,
            window: 0,
            snr_db,
            ..Scenario::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = sample_channel(&sc, &mut rng).unwrap();
        let xp = pilot_matrix(1, pilot_len, 1.0);
        let sigma_n2 = noise_variance_for_snr(&ch.angular, 1.0, snr_db);
        let y = observe(&ch.angular, &xp, sigma_n2, &mut rng).unwrap();
        (ch.angular, xp, y, sigma_n2)
    }

    #[test]
    fn initial_state_matches_start_values() {
        let xp = pilot_matrix(2, 3, 1.0);
        let pri = Priors::new(&xp, 4, 1.0, 0.1, 2.0);
        let st = init_state(&pri, 5).unwrap();
        assert!(st.h_hat.iter().all(|z| *z == c(0.0, 0.0)));
        assert!(st.v_h.iter().all(|v| *v == 1.0));
        assert!(st.s_hat.iter().all(|z| *z == c(0.0, 0.0)));
        assert!(st.lambda_t.iter().all(|l| *l == INITIAL_SPARSITY));
        for k in 0..7 {
            for n in 0..2 {
                if k < 3 {
                    assert_eq!(st.x_hat[(n, k)], xp[(n, k)]);
                    assert_eq!(st.v_x[(n, k)], 0.0);
                } else {
                    assert_eq!(st.x_hat[(n, k)], c(0.0, 0.0));
                    assert_eq!(st.v_x[(n, k)], 1.0);
                }
            }
        }
    }

    #[test]
    fn scalar_output_step() {
        let pri = Priors::new(&CMat::from_element(1, 1, c(2.0, 0.0)), 0, 1.0, 1.0, 1.0);
        let mut st = init_state(&pri, 1).unwrap();
        st.h_hat[(0, 0)] = c(1.0, 0.0);
        st.v_h[(0, 0)] = 0.0;
        st.output_step(&CMat::from_element(1, 1, c(3.0, 0.0)), 1.0)
            .unwrap();
        assert!((st.p_hat[(0, 0)] - c(2.0, 0.0)).norm() < 1e-12);
        // v_p is clamped to VAR_MIN, so z sits at p up to that clamp
        assert!((st.z_hat[(0, 0)] - c(2.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn symbol_denoiser_examples() {
        let (x, v) = denoise_x(c(1.0, 1.0), 1.0, 1.0);
        assert!((x - c(0.5, 0.5)).norm() < 1e-15);
        assert!((v - 0.5).abs() < 1e-15);
        let (x, v) = denoise_x(c(3.0, 0.0), VAR_MAX, 2.0);
        assert_eq!(x, c(0.0, 0.0));
        assert_eq!(v, 2.0);
    }

    #[test]
    fn channel_denoiser_limits() {
        let q = c(1.5, -0.5);
        let p = denoise_h(q, 0.5, 1.0, 2.0);
        assert_eq!(p.alpha, 1.0);
        assert!((p.mean - q * (2.0 / 2.5)).norm() < 1e-15);
        assert!((p.var - 0.5 * 2.0 / 2.5).abs() < 1e-15);

        let p = denoise_h(q, 0.5, 0.0, 2.0);
        assert_eq!(p.alpha, 0.0);
        assert_eq!(p.mean, c(0.0, 0.0));
        assert_eq!(p.var, 0.0);
    }

    /// Posterior moments of `h ~ (1-l) delta + l CN(0, g)` given
    /// `q ~ CN(h, v)`, integrating the slab part numerically over the
    /// complex plane around `q`.
    fn integrated_posterior(q: Complex64, v: f64, l: f64, g: f64) -> (Complex64, f64) {
        let rule = GaussHermite::new(80);
        let pi = std::f64::consts::PI;
        // h = q + sqrt(v) (a + jb) turns the likelihood into the weight exp(-a^2 - b^2)/pi
        let s = v.sqrt();
        let (mut mass, mut first, mut second) = (0.0, c(0.0, 0.0), 0.0);
        for (a, wa) in rule.nodes.iter().zip(&rule.weights) {
            for (b, wb) in rule.nodes.iter().zip(&rule.weights) {
                let h = q + c(a * s, b * s);
                let w = wa * wb / pi * (-h.norm_sqr() / g).exp() / (pi * g);
                mass += w;
                first += h * w;
                second += h.norm_sqr() * w;
            }
        }
        let spike = (1.0 - l) * (-q.norm_sqr() / v).exp() / (pi * v);
        let total = l * mass + spike;
        let mean = first * (l / total);
        let var = l * second / total - mean.norm_sqr();
        (mean, var)
    }

    #[test]
    fn channel_denoiser_matches_integration() {
        for &(q, v, l, g) in &[
            (c(2.0, 0.0), 1.0, 0.5, 1.0),
            (c(0.3, -1.1), 0.2, 0.1, 3.0),
            (c(0.0, 0.0), 1.0, 0.5, 1.0),
        ] {
            let p = denoise_h(q, v, l, g);
            let (mean, var) = integrated_posterior(q, v, l, g);
            assert!((p.mean - mean).norm() < 1e-8, "{:?} vs {mean:?}", p.mean);
            assert!((p.var - var).abs() < 1e-8, "{} vs {var}", p.var);
        }
    }

    #[test]
    fn em_examples() {
        let alpha = RMat::from_column_slice(2, 1, &[1.0, 0.0]);
        let h = CMat::from_column_slice(2, 1, &[c(2.0, 0.0), c(0.0, 0.0)]);
        let vh = RMat::zeros(2, 1);
        let upd = em_update(&alpha, &h, &vh, &[7.0]);
        assert_eq!(upd.lambda, vec![0.5]);
        assert!((upd.gamma[0] - 4.0).abs() < 1e-15);
        assert!(upd.degenerate.is_empty());

        let upd = em_update(
            &RMat::from_element(3, 1, 1.0),
            &CMat::zeros(3, 1),
            &RMat::from_element(3, 1, 1.0),
            &[7.0],
        );
        assert_eq!(upd.lambda, vec![1.0]);

        let upd = em_update(
            &RMat::zeros(3, 1),
            &CMat::zeros(3, 1),
            &RMat::zeros(3, 1),
            &[7.0],
        );
        assert_eq!(upd.lambda, vec![0.0]);
        assert_eq!(upd.gamma, vec![7.0]);
        assert_eq!(upd.degenerate, vec![0]);
    }

    #[test]
    fn infinite_tolerance_stops_after_one_sweep() {
        let (_, xp, y, s2) = single_user_pilot_problem(1, 16, 4, 10.0);
        let pri = Priors::new(&xp, 0, 1.0, s2, initial_gamma(&y, 1, 1.0, s2));
        let opts = SolverOptions {
            tolerance: f64::INFINITY,
            ..SolverOptions::default()
        };
        let est = run(&y, &pri, &opts).unwrap();
        assert_eq!(est.iterations, 1);
        assert_eq!(est.residual_trace.len(), 1);
    }

    #[test]
    fn noiseless_on_grid_recovery() {
        let m = 32;
        let paths = vec![vec![
            Path {
                theta: on_grid_angle(3, m),
                gain: c(1.0, 0.5),
            },
            Path {
                theta: on_grid_angle(10, m),
                gain: c(-0.7, 0.2),
            },
        ]];
        let h = realization_from_paths(paths, m).angular;
        let xp = pilot_matrix(1, 8, 1.0);
        let y = &h * &xp;
        let pri = Priors::new(&xp, 0, 1.0, 0.0, initial_gamma(&y, 1, 1.0, 0.0));
        let opts = SolverOptions {
            tolerance: 1e-12,
            ..SolverOptions::default()
        };
        let est = run(&y, &pri, &opts).unwrap();
        assert!(est.iterations <= 200);
        let nmse = (&est.h_hat - &h).norm() / h.norm();
        assert!(nmse <= 1e-6, "{nmse}");
    }

    #[test]
    fn single_user_gaussian_fixed_point_is_the_exact_posterior() {
        let (_, xp, y, s2) = single_user_pilot_problem(4, 32, 16, 10.0);
        let mut pri = Priors::new(&xp, 0, 1.0, s2, 10.0);
        pri.lambda = vec![1.0];
        let opts = SolverOptions {
            tolerance: 1e-13,
            max_iter: 2000,
            learn_hyperparameters: false,
            ..SolverOptions::default()
        };
        let est = run(&y, &pri, &opts).unwrap();
        let energy: f64 = xp.iter().map(|z| z.norm_sqr()).sum();
        let q_ls = &y * xp.adjoint() / Complex64::new(energy, 0.0);
        let exact = q_ls * Complex64::new(10.0 / (10.0 + s2 / energy), 0.0);
        let err = (&est.h_hat - &exact).norm() / exact.norm();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn pilot_only_run_leaves_symbols_untouched() {
        let (_, xp, y, s2) = single_user_pilot_problem(2, 16, 8, 5.0);
        let pri = Priors::new(&xp, 0, 1.0, s2, initial_gamma(&y, 1, 1.0, s2));
        let est = run(&y, &pri, &SolverOptions::default()).unwrap();
        assert_eq!(est.x_d_hat.ncols(), 0);
        assert!(est
            .h_hat
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite()));
    }

    #[test]
    fn runs_are_bitwise_repeatable() {
        let sc = Scenario {
            antennas: 32,
            users: 2,
            paths: vec![2, 2],
            pilot_len: 4,
            data_len: 12,
            tracked_paths: 2,
            window: 2,
            ..Scenario::default()
        };
        let inst = crate::channel::sample_instance(&sc, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let obs = &inst.observation;
        let pri = Priors::new(
            &obs.pilots,
            12,
            1.0,
            obs.sigma_n2,
            initial_gamma(&obs.y, 2, 1.0, obs.sigma_n2),
        );
        let a = run(&obs.y, &pri, &SolverOptions::default()).unwrap();
        let b = run(&obs.y, &pri, &SolverOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    fn small_problem() -> impl Strategy<Value = (u64, usize, usize, f64)> {
        (any::<u64>(), 1usize..4, 0usize..6, -5.0f64..20.0)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn iterates_respect_invariants((seed, users, data_len, snr) in small_problem()) {
            let sc = Scenario {
                antennas: 32,
                users,
                paths: vec![2; users],
                pilot_len: 4,
                data_len,
                snr_db: snr,
                tracked_paths: 2,
                window: 2,
                ..Scenario::default()
            };
            let inst = crate::channel::sample_instance(&sc, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let obs = &inst.observation;
            let pri = Priors::new(&obs.pilots, data_len, 1.0, obs.sigma_n2, initial_gamma(&obs.y, users, 1.0, obs.sigma_n2));
            let mut st = init_state(&pri, 32).unwrap();
            for t in 1..=15 {
                st.t = t;
                if st.output_step(&obs.y, obs.sigma_n2).is_err() || st.input_step().is_err() {
                    break;
                }
                if t == 1 {
                    st.reset_data_residuals();
                }
                st.update_symbols();
                st.update_channel();
                st.em_step();
                for k in 0..4 {
                    for n in 0..users {
                        prop_assert_eq!(st.x_hat[(n, k)], obs.pilots[(n, k)]);
                        prop_assert_eq!(st.v_x[(n, k)], 0.0);
                    }
                }
                for v in st.v_h.iter().chain(st.v_x.iter()).chain(st.v_p.iter()) {
                    prop_assert!((0.0..=VAR_MAX).contains(v) || v.is_nan(), "variance {}", v);
                }
                for l in &st.lambda_t {
                    prop_assert!((0.0..=1.0).contains(l));
                }
            }
        }

        #[test]
        fn slab_weight_is_a_probability(
            re in -10.0f64..10.0, im in -10.0f64..10.0,
            vq in 1e-6f64..1e3, lambda in 0.0f64..=1.0, gamma in 1e-6f64..1e3,
        ) {
            let p = denoise_h(Complex64::new(re, im), vq, lambda, gamma);
            prop_assert!((0.0..=1.0).contains(&p.alpha));
            prop_assert!(p.var >= 0.0);
        }
    }
}
