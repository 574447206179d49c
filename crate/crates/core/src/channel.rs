//! Sparse mmWave uplink channel model.
//!
//! A ULA with half-wavelength spacing sees each user through a handful of
//! plane waves. Combining with the unitary DFT moves the channel into the
//! angular domain where it is approximately sparse. Angular bin `k`
//! corresponds to the spatial frequency `sin(theta) = 2k/M` (taken modulo 2),
//! which is the reading under which the combiner is unitary.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;

use crate::linalg::{complex_normal, complex_normal_matrix, frobenius_sqr};
use crate::{CMat, Error, Result};

/// Rejection cap when redrawing a user whose strongest path is too weak.
pub const RESAMPLE_CAP: usize = 1000;

/// Minimum post-combining SNR of each user's strongest path, in dB.
pub const STRONGEST_PATH_SNR_DB: f64 = 3.0;

/// All experiment dimensions and algorithm knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Number of BS antennas `M`.
    pub antennas: usize,
    /// Number of single-antenna users `N`.
    pub users: usize,
    /// Pilot symbols per frame `K_p`.
    pub pilot_len: usize,
    /// Data symbols per frame `K_d`.
    pub data_len: usize,
    /// Paths per user, length `N`.
    pub paths: Vec<usize>,
    pub snr_db: f64,
    /// Symbol power.
    pub sigma_x2: f64,
    /// Paths tracked per user in stage 1 (`M_track`).
    pub tracked_paths: usize,
    /// Angular window extent around each tracked path (`M_s`, even).
    pub window: usize,
    /// Noise-induced false alarm probability of the detection threshold.
    pub false_alarm: f64,
    /// Relative residual stopping tolerance of the message passing loop.
    pub tolerance: f64,
    pub max_iter: usize,
    /// Blend factor for successive iterates; 1.0 is the undamped recursion.
    pub damping: f64,
    pub seed: u64,
}

impl Default for Scenario {
    /// Desk-scale defaults: 256 antennas, 8 users, 100 symbols with 16 pilots.
    fn default() -> Self {
        Scenario {
            antennas: 256,
            users: 8,
            pilot_len: 16,
            data_len: 84,
            paths: vec![3; 8],
            snr_db: 10.0,
            sigma_x2: 1.0,
            tracked_paths: 4,
            window: 4,
            false_alarm: 1e-5,
            tolerance: 1e-4,
            max_iter: 200,
            damping: 1.0,
            seed: 1,
        }
    }
}

impl Scenario {
    pub fn frame_len(&self) -> usize {
        self.pilot_len + self.data_len
    }

    pub fn snr_linear(&self) -> f64 {
        10f64.powf(self.snr_db / 10.0)
    }

    pub fn max_paths(&self) -> usize {
        self.paths.iter().copied().max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScenario(msg));
        if self.antennas == 0 || self.users == 0 || self.pilot_len == 0 {
            return bad("antenna, user and pilot counts must be positive".into());
        }
        if self.tracked_paths == 0 || self.max_iter == 0 {
            return bad("tracked paths and iteration cap must be positive".into());
        }
        if self.paths.len() != self.users {
            return bad(format!(
                "{} path counts given for {} users",
                self.paths.len(),
                self.users
            ));
        }
        if self.paths.contains(&0) {
            return bad("every user needs at least one path".into());
        }
        if self.pilot_len < self.users {
            return bad(format!(
                "pilot length {} below user count {}",
                self.pilot_len, self.users
            ));
        }
        if self.tracked_paths < self.max_paths() {
            return bad(format!(
                "tracked paths {} below max path count {}",
                self.tracked_paths,
                self.max_paths()
            ));
        }
        if (self.window + 1) * self.tracked_paths * self.users > self.antennas {
            return bad("windows cannot fit: (M_s+1) M_track N exceeds M".into());
        }
        if !self.window.is_multiple_of(2) {
            return Err(Error::InvalidWindow(self.window));
        }
        if !(self.sigma_x2 > 0.0) || !self.sigma_x2.is_finite() {
            return bad("symbol power must be positive".into());
        }
        if !(self.false_alarm > 0.0 && self.false_alarm < 1.0) {
            return bad("false alarm probability must lie in (0, 1)".into());
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return bad("damping must lie in (0, 1]".into());
        }
        if !self.snr_db.is_finite() {
            return bad("SNR must be finite".into());
        }
        Ok(())
    }

    /// Noise level implied by the target SNR when the channel energy equals
    /// its expectation `M * sum(L_n)`.
    pub fn nominal_noise_variance(&self) -> f64 {
        let total_paths: usize = self.paths.iter().sum();
        self.sigma_x2 * total_paths as f64 / self.snr_linear()
    }
}

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    /// Angle of arrival in radians, in `[0, pi)`.
    pub theta: f64,
    pub gain: Complex64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// Paths of each user.
    pub paths: Vec<Vec<Path>>,
    /// Spatial channel `G`, `M x N`.
    pub spatial: CMat,
    /// Angular channel `H = U^H G`, `M x N`.
    pub angular: CMat,
}

/// Pilot and data symbols of one coherence block.
#[derive(Debug, Clone, PartialEq)]
pub struct Frames {
    /// `N x K_p` known pilots.
    pub pilots: CMat,
    /// `N x K_d` Gaussian-codebook data.
    pub data: CMat,
}

impl Frames {
    /// `[X_p, X_d]`.
    pub fn stacked(&self) -> CMat {
        let n = self.pilots.nrows();
        let kp = self.pilots.ncols();
        let kd = self.data.ncols();
        CMat::from_fn(n, kp + kd, |r, c| {
            if c < kp {
                self.pilots[(r, c)]
            } else {
                self.data[(r, c - kp)]
            }
        })
    }
}

/// What a receiver sees: the combined observation plus known quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Angular-domain observation `Y = H X + N`, `M x K` (pilot columns first).
    pub y: CMat,
    /// Known pilots `N x K_p`.
    pub pilots: CMat,
    /// Noise variance per complex element.
    pub sigma_n2: f64,
}

impl Observation {
    pub fn pilot_len(&self) -> usize {
        self.pilots.ncols()
    }

    pub fn pilot_part(&self) -> CMat {
        self.y.columns(0, self.pilot_len()).into_owned()
    }

    pub fn data_part(&self) -> CMat {
        let kp = self.pilot_len();
        self.y.columns(kp, self.y.ncols() - kp).into_owned()
    }
}

/// ULA response `[1, e^{-j pi sin(theta)}, ..., e^{-j (M-1) pi sin(theta)}]`.
pub fn steering_vector(theta: f64, antennas: usize) -> Vec<Complex64> {
    steering_from_frequency(theta.sin(), antennas)
}

fn steering_from_frequency(sin_theta: f64, antennas: usize) -> Vec<Complex64> {
    (0..antennas)
        .map(|m| Complex64::from_polar(1.0, -PI * m as f64 * sin_theta))
        .collect()
}

/// Unitary `M`-point DFT whose column `k` is the normalised steering vector
/// at spatial frequency `sin(theta) = 2k/M`.
pub fn dft_matrix(antennas: usize) -> CMat {
    let scale = 1.0 / (antennas as f64).sqrt();
    CMat::from_fn(antennas, antennas, |m, k| {
        // reduce m*k modulo M first so the phase stays exact for large M
        let idx = (m * k) % antennas;
        Complex64::from_polar(scale, -2.0 * PI * idx as f64 / antennas as f64)
    })
}

/// AoA whose steering vector lands exactly on angular bin `k` (`k <= M/2`).
pub fn on_grid_angle(k: usize, antennas: usize) -> f64 {
    let s = 2.0 * k as f64 / antennas as f64;
    assert!(s <= 1.0, "bin {k} is not reachable with AoA in [0, pi)");
    s.asin()
}

/// Spatial channel column of one user.
pub fn spatial_column(paths: &[Path], antennas: usize) -> Vec<Complex64> {
    let mut g = vec![Complex64::new(0.0, 0.0); antennas];
    for p in paths {
        for (gm, am) in g.iter_mut().zip(steering_vector(p.theta, antennas)) {
            *gm += p.gain * am;
        }
    }
    g
}

/// Builds `G` and `H = U^H G` from explicit paths.
pub fn realization_from_paths(paths: Vec<Vec<Path>>, antennas: usize) -> ChannelRealization {
    let users = paths.len();
    let mut spatial = CMat::zeros(antennas, users);
    for (n, user_paths) in paths.iter().enumerate() {
        for (m, v) in spatial_column(user_paths, antennas).into_iter().enumerate() {
            spatial[(m, n)] = v;
        }
    }
    let angular = dft_matrix(antennas).adjoint() * &spatial;
    ChannelRealization {
        paths,
        spatial,
        angular,
    }
}

/// Draws a channel: AoAs uniform on `[0, pi)`, gains CN(0, 1). A user whose
/// strongest path would sit below the post-combining SNR floor at the nominal
/// noise level is redrawn, up to [`RESAMPLE_CAP`] times.
pub fn sample_channel<R: Rng + ?Sized>(
    scenario: &Scenario,
    rng: &mut R,
) -> Result<ChannelRealization> {
    scenario.validate()?;
    let m = scenario.antennas;
    let floor = 10f64.powf(STRONGEST_PATH_SNR_DB / 10.0);
    let noise = scenario.nominal_noise_variance();
    let mut paths = Vec::with_capacity(scenario.users);
    for (user, &count) in scenario.paths.iter().enumerate() {
        let mut accepted = None;
        for _ in 0..RESAMPLE_CAP {
            let draw: Vec<Path> = (0..count)
                .map(|_| Path {
                    theta: rng.random::<f64>() * PI,
                    gain: complex_normal(rng, 1.0),
                })
                .collect();
            let strongest = draw.iter().map(|p| p.gain.norm_sqr()).fold(0.0, f64::max);
            if m as f64 * strongest * scenario.sigma_x2 >= floor * noise {
                accepted = Some(draw);
                break;
            }
        }
        match accepted {
            Some(p) => paths.push(p),
            None => {
                return Err(Error::ResampleExhausted {
                    user,
                    attempts: RESAMPLE_CAP,
                })
            }
        }
    }
    Ok(realization_from_paths(paths, m))
}

/// Deterministic pilots: `N` rows of a `K_p`-point DFT scaled to symbol power
/// `sigma_x2`, so `X_p X_p^H = K_p sigma_x2 I`.
pub fn pilot_matrix(users: usize, pilot_len: usize, sigma_x2: f64) -> CMat {
    let amp = sigma_x2.sqrt();
    CMat::from_fn(users, pilot_len, |n, k| {
        let idx = (n * k) % pilot_len;
        Complex64::from_polar(amp, -2.0 * PI * idx as f64 / pilot_len as f64)
    })
}

/// Pilots plus i.i.d. CN(0, sigma_x2) data.
pub fn sample_frames<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<Frames> {
    if scenario.pilot_len < scenario.users {
        return Err(Error::InvalidScenario(
            "pilot length below user count".into(),
        ));
    }
    Ok(Frames {
        pilots: pilot_matrix(scenario.users, scenario.pilot_len, scenario.sigma_x2),
        data: complex_normal_matrix(rng, scenario.users, scenario.data_len, scenario.sigma_x2),
    })
}

/// Noise variance giving the target SNR in expectation over symbols and noise
/// for the realised channel: `sigma_x2 ||H||^2 / (M * 10^(snr/10))`.
pub fn noise_variance_for_snr(angular: &CMat, sigma_x2: f64, snr_db: f64) -> f64 {
    let m = angular.nrows() as f64;
    sigma_x2 * frobenius_sqr(angular) / (m * 10f64.powf(snr_db / 10.0))
}

/// `Y = H X + N` with i.i.d. CN(0, sigma_n2) noise.
pub fn observe<R: Rng + ?Sized>(
    channel: &CMat,
    symbols: &CMat,
    sigma_n2: f64,
    rng: &mut R,
) -> Result<CMat> {
    if channel.ncols() != symbols.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "channel is {}x{} but symbols have {} rows",
            channel.nrows(),
            channel.ncols(),
            symbols.nrows()
        )));
    }
    let clean = channel * symbols;
    if sigma_n2 == 0.0 {
        return Ok(clean);
    }
    let noise = complex_normal_matrix(rng, clean.nrows(), clean.ncols(), sigma_n2);
    Ok(clean + noise)
}

/// One full draw: channel, frames and observation, consuming `rng` in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub channel: ChannelRealization,
    pub frames: Frames,
    pub observation: Observation,
}

pub fn sample_instance<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<Instance> {
    let channel = sample_channel(scenario, rng)?;
    let frames = sample_frames(scenario, rng)?;
    let sigma_n2 = noise_variance_for_snr(&channel.angular, scenario.sigma_x2, scenario.snr_db);
    let y = observe(&channel.angular, &frames.stacked(), sigma_n2, rng)?;
    Ok(Instance {
        observation: Observation {
            y,
            pilots: frames.pilots.clone(),
            sigma_n2,
        },
        channel,
        frames,
    })
}
