//! Monte-Carlo sweeps over SNR and trials, metrics and CSV output.
//!
//! Every `(snr, trial)` cell draws one channel/frame/noise realization from a
//! seed derived from the master seed and shares it across all methods. Cells
//! are independent, so they can run on any number of workers; the output
//! order is fixed to `(method, snr, trial)`.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bigamp::SolverOptions;
use crate::channel::{sample_instance, Instance, Scenario};
use crate::coarse::ThresholdRule;
use crate::linalg::frobenius_sqr;
use crate::pipeline::{
    restrict_rows, run_ls_baseline, run_original_df, run_pf_assisted_jcd, run_pilot_amp_baseline,
    Execution, JcdOptions,
};
use crate::replica::{complexity_counts, proposition1_approx, solve_fixed_point, ReplicaParams};
use crate::{CMat, Error, Result};

/// Estimation methods the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Ls,
    PilotAmp,
    OriginalDf,
    PfJcd,
    ReplicaPred,
    Prop1Pred,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Ls,
        Method::PilotAmp,
        Method::OriginalDf,
        Method::PfJcd,
        Method::ReplicaPred,
        Method::Prop1Pred,
    ];

    pub const DEFAULT: [Method; 5] = [
        Method::Ls,
        Method::PilotAmp,
        Method::OriginalDf,
        Method::PfJcd,
        Method::ReplicaPred,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Ls => "ls",
            Method::PilotAmp => "pilot_amp",
            Method::OriginalDf => "original_df",
            Method::PfJcd => "pf_jcd",
            Method::ReplicaPred => "replica_pred",
            Method::Prop1Pred => "prop1_pred",
        }
    }

    /// Methods that run an estimator on the realization, as opposed to
    /// analytic predictions.
    pub fn is_simulated(self) -> bool {
        matches!(
            self,
            Method::Ls | Method::PilotAmp | Method::OriginalDf | Method::PfJcd
        )
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

/// A parsed sweep configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    /// Base scenario; `snr_db` is overridden by each sweep point.
    pub scenario: Scenario,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub methods: Vec<Method>,
    pub workers: usize,
    pub threshold: ThresholdRule,
    /// Record wall-clock columns. Off by default so that outputs are
    /// byte-reproducible.
    pub timing: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            scenario: Scenario::default(),
            snr_db: vec![0.0, 5.0, 10.0],
            trials: 10,
            methods: Method::DEFAULT.to_vec(),
            workers: 1,
            threshold: ThresholdRule::Rayleigh,
            timing: false,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{v}' for '{key}'")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

impl Config {
    /// Parses `key = value` lines; `#` starts a comment. Lists are
    /// comma-separated. A single `paths` value applies to every user.
    pub fn parse(text: &str) -> Result<Config> {
        let mut cfg = Config::default();
        let mut paths: Option<Vec<usize>> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim();
            let s = &mut cfg.scenario;
            match key {
                "antennas" => s.antennas = parse_num(key, value)?,
                "users" => s.users = parse_num(key, value)?,
                "pilot_len" => s.pilot_len = parse_num(key, value)?,
                "data_len" => s.data_len = parse_num(key, value)?,
                "paths" => paths = Some(parse_list(key, value)?),
                "sigma_x2" => s.sigma_x2 = parse_num(key, value)?,
                "tracked_paths" => s.tracked_paths = parse_num(key, value)?,
                "window" => s.window = parse_num(key, value)?,
                "false_alarm" => s.false_alarm = parse_num(key, value)?,
                "tolerance" => s.tolerance = parse_num(key, value)?,
                "max_iter" => s.max_iter = parse_num(key, value)?,
                "damping" => s.damping = parse_num(key, value)?,
                "seed" => s.seed = parse_num(key, value)?,
                "snr_db" => cfg.snr_db = parse_list(key, value)?,
                "trials" => cfg.trials = parse_num(key, value)?,
                "workers" => cfg.workers = parse_num(key, value)?,
                "methods" => {
                    cfg.methods = value
                        .split(',')
                        .filter(|m| !m.trim().is_empty())
                        .map(Method::from_str)
                        .collect::<Result<_>>()?
                }
                "threshold" => {
                    cfg.threshold = match value.trim() {
                        "rayleigh" => ThresholdRule::Rayleigh,
                        "exponential" => ThresholdRule::Exponential,
                        other => return Err(Error::Config(format!("unknown threshold '{other}'"))),
                    }
                }
                "timing" => cfg.timing = parse_num(key, value)?,
                other => return Err(Error::Config(format!("unknown key '{other}'"))),
            }
        }
        let users = cfg.scenario.users;
        cfg.scenario.paths = match paths {
            Some(p) if p.len() == 1 => vec![p[0]; users],
            Some(p) => p,
            None => vec![cfg.scenario.paths.first().copied().unwrap_or(1); users],
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Config::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.snr_db.is_empty() {
            return Err(Error::Config("empty snr_db list".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("empty methods list".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        self.scenario
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    /// Scenario at one sweep point.
    pub fn scenario_at(&self, snr_db: f64) -> Scenario {
        Scenario {
            snr_db,
            ..self.scenario.clone()
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one `(snr, trial)` cell. Methods are deliberately left out so that
/// every method in a cell sees the same realization.
pub fn cell_seed(master: u64, snr_db: f64, trial: usize) -> u64 {
    let mut h = splitmix64(master);
    h = splitmix64(h ^ snr_db.to_bits());
    splitmix64(h ^ trial as u64)
}

/// `||est - truth|| / ||truth||` (Frobenius norms, not squared).
pub fn nmse(est: &CMat, truth: &CMat) -> Result<f64> {
    if est.shape() != truth.shape() {
        return Err(Error::DimensionMismatch(format!(
            "estimate {:?} vs reference {:?}",
            est.shape(),
            truth.shape()
        )));
    }
    let reference = truth.norm();
    if reference == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok((est - truth).norm() / reference)
}

/// `10 log10` of an NMSE value.
pub fn to_db(v: f64) -> f64 {
    10.0 * v.log10()
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrialRecord {
    pub method: Option<Method>,
    pub snr_db: f64,
    pub trial: usize,
    pub seed: u64,
    /// `None` on success, otherwise the error text.
    pub error: Option<String>,
    pub nmse_xd: Option<f64>,
    pub nmse_h_full: Option<f64>,
    pub nmse_h_part: Option<f64>,
    pub iterations: Option<usize>,
    pub wall_ms_total: Option<f64>,
    pub wall_ms_stage1: Option<f64>,
    pub wall_ms_stage2: Option<f64>,
    pub group_count: Option<usize>,
    pub retained_rows: Option<usize>,
}

impl TrialRecord {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

pub const CSV_HEADER: &str = "method,snr_db,trial,seed,status,nmse_xd,nmse_h_full,nmse_h_part,\
iterations,wall_ms_total,wall_ms_stage1,wall_ms_stage2,group_count,retained_rows";

/// Nine significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.8e}")
}

fn opt_f(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

fn opt_u(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn to_csv(records: &[TrialRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        let status = match &r.error {
            None => "ok".to_string(),
            Some(e) => format!("failed: {}", e.replace([',', '\n', '"'], ";")),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.method.map(Method::tag).unwrap_or(""),
            fmt_float(r.snr_db),
            r.trial,
            r.seed,
            status,
            opt_f(r.nmse_xd),
            opt_f(r.nmse_h_full),
            opt_f(r.nmse_h_part),
            opt_u(r.iterations),
            opt_f(r.wall_ms_total),
            opt_f(r.wall_ms_stage1),
            opt_f(r.wall_ms_stage2),
            opt_u(r.group_count),
            opt_u(r.retained_rows),
        );
    }
    out
}

/// Replica parameters matched to a realization: the channel energy per entry
/// `c_H = ||H||^2 / (M N)` is split as `lambda = c_H / M`, `sigma_h2 = M`,
/// i.e. on average `c_H` unit-energy-per-antenna paths per column.
pub fn replica_params_for(
    scenario: &Scenario,
    channel_energy_per_entry: f64,
    sigma_n2: f64,
) -> ReplicaParams {
    let m = scenario.antennas as f64;
    ReplicaParams::from_dimensions(
        scenario.antennas,
        scenario.users,
        scenario.pilot_len,
        scenario.data_len,
        sigma_n2,
        scenario.sigma_x2,
        (channel_energy_per_entry / m).min(1.0),
        m,
    )
}

/// Replica parameters at the nominal operating point of a scenario.
pub fn nominal_replica_params(scenario: &Scenario) -> ReplicaParams {
    let c_h = scenario.paths.iter().sum::<usize>() as f64 / scenario.users as f64;
    replica_params_for(scenario, c_h, scenario.nominal_noise_variance())
}

fn run_method(
    method: Method,
    inst: &Instance,
    scenario: &Scenario,
    threshold: ThresholdRule,
    rec: &mut TrialRecord,
) -> Result<()> {
    let obs = &inst.observation;
    let h = &inst.channel.angular;
    let solver = SolverOptions::from(scenario);
    let start = Instant::now();
    match method {
        Method::Ls => {
            let est = run_ls_baseline(obs)?;
            rec.nmse_h_full = Some(nmse(&est, h)?);
        }
        Method::PilotAmp => {
            let est = run_pilot_amp_baseline(obs, scenario, &solver)?;
            rec.nmse_h_full = Some(nmse(&est, h)?);
        }
        Method::OriginalDf => {
            let est = run_original_df(obs, scenario, &solver)?;
            rec.nmse_xd = Some(nmse(&est.x_d_hat, &inst.frames.data)?);
            rec.nmse_h_full = Some(nmse(&est.h_hat, h)?);
            rec.iterations = Some(est.iterations);
        }
        Method::PfJcd => {
            let opts = JcdOptions {
                solver,
                threshold,
                execution: Execution::Sequential,
            };
            let res = run_pf_assisted_jcd(obs, scenario, &opts)?;
            rec.nmse_xd = Some(nmse(&res.x_d_hat, &inst.frames.data)?);
            rec.nmse_h_full = Some(nmse(&res.h_hat_part, h)?);
            let h_part = restrict_rows(h, &res.retained_mask());
            rec.nmse_h_part = Some(nmse(&res.h_hat_part, &h_part)?);
            rec.iterations = Some(res.total_iterations());
            rec.group_count = Some(res.plan.groups.len());
            rec.retained_rows = Some(res.plan.retained_rows());
            rec.wall_ms_stage1 = Some(res.timings.stage1_ms);
            rec.wall_ms_stage2 = Some(res.timings.stage2_ms);
        }
        Method::ReplicaPred | Method::Prop1Pred => {
            let c_h = frobenius_sqr(h) / (h.nrows() * h.ncols()) as f64;
            let params = replica_params_for(scenario, c_h, obs.sigma_n2);
            if method == Method::ReplicaPred {
                let sol = solve_fixed_point(&params)?;
                rec.nmse_xd = Some(sol.nmse_xd(params.sigma_x2));
                rec.nmse_h_full = Some(sol.nmse_h(params.c_h()));
                rec.iterations = Some(sol.iterations);
            } else {
                let a = proposition1_approx(&params)?;
                rec.nmse_xd = Some((a.mse_xd / params.sigma_x2).sqrt());
                rec.nmse_h_full = Some((a.mse_h / params.c_h()).sqrt());
                rec.iterations = Some(a.iterations);
            }
        }
    }
    rec.wall_ms_total = Some(start.elapsed().as_secs_f64() * 1e3);
    Ok(())
}

/// Runs every configured method on one cell.
pub fn run_cell(config: &Config, snr_db: f64, trial: usize) -> Vec<TrialRecord> {
    let scenario = config.scenario_at(snr_db);
    let seed = cell_seed(config.scenario.seed, snr_db, trial);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let instance = sample_instance(&scenario, &mut rng);
    config
        .methods
        .iter()
        .map(|&method| {
            let mut rec = TrialRecord {
                method: Some(method),
                snr_db,
                trial,
                seed,
                ..Default::default()
            };
            let outcome = instance
                .as_ref()
                .map_err(Clone::clone)
                .and_then(|inst| run_method(method, inst, &scenario, config.threshold, &mut rec));
            if let Err(e) = outcome {
                rec = TrialRecord {
                    method: Some(method),
                    snr_db,
                    trial,
                    seed,
                    error: Some(e.to_string()),
                    ..Default::default()
                };
            }
            if !config.timing {
                rec.wall_ms_total = None;
                rec.wall_ms_stage1 = None;
                rec.wall_ms_stage2 = None;
            }
            rec
        })
        .collect()
}

/// All cells of the sweep on `config.workers` threads, ordered by
/// `(method, snr, trial)` with methods and SNRs in configuration order.
pub fn run_sweep(config: &Config) -> Result<Vec<TrialRecord>> {
    config.validate()?;
    let cells: Vec<(usize, usize)> = (0..config.snr_db.len())
        .flat_map(|s| (0..config.trials).map(move |t| (s, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let per_cell: Vec<Vec<TrialRecord>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(s, t)| run_cell(config, config.snr_db[s], t))
            .collect()
    });
    let mut records = Vec::with_capacity(per_cell.len() * config.methods.len());
    for mi in 0..config.methods.len() {
        for cell in &per_cell {
            records.push(cell[mi].clone());
        }
    }
    Ok(records)
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Median wall-clock of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub method: Method,
    pub samples: usize,
    pub median_ms: f64,
    /// Median of `original_df` over this method, when both are present.
    pub speedup_vs_original: Option<f64>,
}

/// Operation-count ratios of the full-size solver over the reduced one.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticRatio {
    pub antennas: u64,
    pub users: u64,
    pub data_len: u64,
    pub rows: u64,
    /// One full-size sweep over one reduced sweep.
    pub mult_ratio: f64,
    /// One full-size sweep over one reduced sweep per user.
    pub mult_ratio_per_user: f64,
}

impl AnalyticRatio {
    pub fn new(antennas: u64, users: u64, data_len: u64, rows: u64) -> Self {
        let c = complexity_counts(antennas, users, data_len, rows);
        AnalyticRatio {
            antennas,
            users,
            data_len,
            rows,
            mult_ratio: c.mult_ratio(),
            mult_ratio_per_user: c.mult_ratio_per_user(users),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingReport {
    pub rows: Vec<TimingRow>,
    pub analytic: Vec<AnalyticRatio>,
}

/// Medians of `wall_ms_total` per method over successful records, with
/// speedups against `original_df` when both are present, plus analytic
/// operation-count ratios.
pub fn timing_report(records: &[TrialRecord], analytic: Vec<AnalyticRatio>) -> TimingReport {
    let mut rows = Vec::new();
    for method in Method::ALL {
        let mut times: Vec<f64> = records
            .iter()
            .filter(|r| r.method == Some(method) && r.ok())
            .filter_map(|r| r.wall_ms_total)
            .collect();
        let samples = times.len();
        if let Some(m) = median(&mut times) {
            rows.push(TimingRow {
                method,
                samples,
                median_ms: m,
                speedup_vs_original: None,
            });
        }
    }
    if rows.len() > 1 {
        if let Some(base) = rows
            .iter()
            .find(|r| r.method == Method::OriginalDf)
            .map(|r| r.median_ms)
        {
            for r in rows.iter_mut() {
                if r.method != Method::OriginalDf && r.median_ms > 0.0 {
                    r.speedup_vs_original = Some(base / r.median_ms);
                }
            }
        }
    }
    TimingReport { rows, analytic }
}

impl TimingReport {
    pub fn render(&self) -> String {
        let mut out = String::from("method,samples,median_ms,speedup_vs_original_df\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.method.tag(),
                r.samples,
                fmt_float(r.median_ms),
                opt_f(r.speedup_vs_original)
            );
        }
        if !self.analytic.is_empty() {
            out.push_str(
                "\nantennas,users,data_len,rows,analytic_mult_ratio,analytic_mult_ratio_per_user\n",
            );
            for a in &self.analytic {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    a.antennas,
                    a.users,
                    a.data_len,
                    a.rows,
                    fmt_float(a.mult_ratio),
                    fmt_float(a.mult_ratio_per_user)
                );
            }
        }
        out
    }
}

/// Timing benchmark: one warm-up cell, then `config.trials` cells run one at a
/// time at the first configured SNR with timing enabled.
pub fn run_bench(config: &Config) -> Result<TimingReport> {
    config.validate()?;
    let mut cfg = config.clone();
    cfg.timing = true;
    cfg.methods.retain(|m| m.is_simulated());
    let snr = cfg.snr_db[0];
    let _ = run_cell(&cfg, snr, usize::MAX);
    let mut records = Vec::new();
    for t in 0..cfg.trials {
        records.extend(run_cell(&cfg, snr, t));
    }
    let s = &cfg.scenario;
    let mean_rows = {
        let mut v: Vec<f64> = records
            .iter()
            .filter(|r| r.method == Some(Method::PfJcd) && r.ok())
            .filter_map(|r| Some(r.retained_rows? as f64 / r.group_count? as f64))
            .collect();
        median(&mut v).unwrap_or(s.antennas as f64).round().max(1.0) as u64
    };
    let analytic = vec![
        AnalyticRatio::new(
            s.antennas as u64,
            s.users as u64,
            s.data_len as u64,
            mean_rows,
        ),
        AnalyticRatio::new(1000, 20, 80, 20),
    ];
    Ok(timing_report(&records, analytic))
}

/// Nominal replica and approximation predictions per SNR as CSV.
pub fn replica_table(config: &Config) -> Result<String> {
    config.validate()?;
    let mut out = String::from(
        "snr_db,lambda,sigma_h2,sigma_n2,mse_h,mse_xd,nmse_h,nmse_xd,converged,iterations,prop1_mse_h,prop1_mse_xd\n",
    );
    for &snr in &config.snr_db {
        let p = nominal_replica_params(&config.scenario_at(snr));
        let sol = solve_fixed_point(&p)?;
        let (a_h, a_x) = match proposition1_approx(&p) {
            Ok(a) => (Some(a.mse_h), Some(a.mse_xd)),
            Err(_) => (None, None),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            fmt_float(snr),
            fmt_float(p.lambda),
            fmt_float(p.sigma_h2),
            fmt_float(p.sigma_n2),
            fmt_float(sol.mse_h),
            fmt_float(sol.mse_xd),
            fmt_float(sol.nmse_h(p.c_h())),
            fmt_float(sol.nmse_xd(p.sigma_x2)),
            sol.converged,
            sol.iterations,
            opt_f(a_h),
            opt_f(a_x),
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn nmse_examples() {
        let t = CMat::from_fn(3, 2, |r, c| Complex64::new(r as f64 + 1.0, c as f64));
        assert_eq!(nmse(&t, &t).unwrap(), 0.0);
        assert!((nmse(&CMat::zeros(3, 2), &t).unwrap() - 1.0).abs() < 1e-15);
        assert!((nmse(&(&t * Complex64::new(2.0, 0.0)), &t).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(nmse(&t, &CMat::zeros(3, 2)), Err(Error::ZeroReference));
    }

    #[test]
    fn config_round_trip() {
        let cfg = Config::parse(
            "# desk\nantennas = 64\nusers = 4\npilot_len = 8\ndata_len = 24\npaths = 2\n\
             tracked_paths = 2\nwindow = 2\nsnr_db = 0, 10\ntrials = 3\nmethods = ls,pf_jcd\nseed = 9\n",
        )
        .unwrap();
        assert_eq!(cfg.scenario.antennas, 64);
        assert_eq!(cfg.scenario.paths, vec![2; 4]);
        assert_eq!(cfg.snr_db, vec![0.0, 10.0]);
        assert_eq!(cfg.methods, vec![Method::Ls, Method::PfJcd]);
        assert_eq!(cfg.scenario.seed, 9);
        assert!(Config::parse("antenas = 3").is_err());
        assert!(Config::parse("methods = nope").is_err());
        assert!(Config::parse("window = 3").is_err());
    }

    #[test]
    fn zero_trials_gives_header_only() {
        let cfg = Config {
            trials: 0,
            ..Config::default()
        };
        let recs = run_sweep(&cfg).unwrap();
        assert!(recs.is_empty());
        assert_eq!(to_csv(&recs), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn seeds_differ_across_cells() {
        let a = cell_seed(1, 0.0, 0);
        assert_ne!(a, cell_seed(1, 0.0, 1));
        assert_ne!(a, cell_seed(1, 5.0, 0));
        assert_ne!(a, cell_seed(2, 0.0, 0));
        assert_eq!(a, cell_seed(1, 0.0, 0));
    }

    #[test]
    fn float_format_has_nine_significant_digits() {
        assert_eq!(fmt_float(1.0 / 3.0), "3.33333333e-1");
        assert_eq!(fmt_float(0.0), "0.00000000e0");
    }

    #[test]
    fn timing_report_ratios() {
        let mk = |m, ms| TrialRecord {
            method: Some(m),
            wall_ms_total: Some(ms),
            ..Default::default()
        };
        let recs = vec![
            mk(Method::OriginalDf, 10.0),
            mk(Method::OriginalDf, 30.0),
            mk(Method::OriginalDf, 20.0),
            mk(Method::PfJcd, 2.0),
        ];
        let rep = timing_report(&recs, vec![]);
        let pf = rep.rows.iter().find(|r| r.method == Method::PfJcd).unwrap();
        assert_eq!(pf.speedup_vs_original, Some(10.0));
        let single = timing_report(&recs[..1], vec![]);
        assert_eq!(single.rows[0].speedup_vs_original, None);
    }
}
