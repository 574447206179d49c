//! Two-stage joint channel estimation and data recovery plus baselines.
//!
//! Stage 1 works on the pilot phase only and produces a [`DecouplingPlan`].
//! Stage 2 solves one reduced EM-BiGAMP problem per group, on the group's
//! angular rows and users, over the whole frame with pilots pinned. The
//! full-size solver is the same stage-2 code run on a single all-covering
//! group.

use std::time::Instant;

use rayon::prelude::*;

use crate::bigamp::{self, initial_gamma, BigampEstimate, Priors, SolverOptions};
use crate::channel::{Observation, Scenario};
use crate::coarse::{coarse_stage, ls_estimate, CoarseEstimate, DecouplingPlan, ThresholdRule};
use crate::linalg::{hermitian_solve, identity, select_rows};
use crate::{CMat, Error, Result};

/// How the per-group solvers are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    /// Groups solved one after another on the calling thread.
    #[default]
    Sequential,
    /// Groups solved on a dedicated pool with at most this many workers.
    Parallel(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JcdOptions {
    pub solver: SolverOptions,
    pub threshold: ThresholdRule,
    pub execution: Execution,
}

impl From<&Scenario> for JcdOptions {
    fn from(s: &Scenario) -> Self {
        JcdOptions {
            solver: SolverOptions::from(s),
            threshold: ThresholdRule::default(),
            execution: Execution::Sequential,
        }
    }
}

/// Wall-clock time per stage, milliseconds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Timings {
    pub stage1_ms: f64,
    pub stage2_ms: f64,
    pub total_ms: f64,
    pub per_group_ms: Vec<f64>,
}

/// Output of the two-stage method.
#[derive(Debug, Clone, PartialEq)]
pub struct JcdResult {
    /// Channel estimate on the retained angular rows, zero elsewhere.
    pub h_hat_part: CMat,
    /// `N x K_d` data estimate assembled from the owning groups.
    pub x_d_hat: CMat,
    pub coarse: Option<CoarseEstimate>,
    pub plan: DecouplingPlan,
    pub per_group: Vec<BigampEstimate>,
    pub timings: Timings,
}

impl JcdResult {
    /// Row mask of the angular bins retained by the plan.
    pub fn retained_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.plan.antennas];
        for rows in &self.plan.group_rows {
            for &r in rows {
                mask[r] = true;
            }
        }
        mask
    }

    pub fn total_iterations(&self) -> usize {
        self.per_group.iter().map(|g| g.iterations).sum()
    }
}

fn check_observation(obs: &Observation, scenario: &Scenario) -> Result<()> {
    scenario.validate()?;
    if obs.y.nrows() != scenario.antennas
        || obs.y.ncols() != scenario.frame_len()
        || obs.pilots.nrows() != scenario.users
        || obs.pilots.ncols() != scenario.pilot_len
    {
        return Err(Error::DimensionMismatch(format!(
            "observation {}x{} with {}x{} pilots does not fit the scenario",
            obs.y.nrows(),
            obs.y.ncols(),
            obs.pilots.nrows(),
            obs.pilots.ncols()
        )));
    }
    Ok(())
}

/// Reduced bilinear problem of one group.
fn solve_group(
    obs: &Observation,
    scenario: &Scenario,
    rows: &[usize],
    users: &[usize],
    solver: &SolverOptions,
) -> Result<BigampEstimate> {
    let y = select_rows(&obs.y, rows);
    let pilots = select_rows(&obs.pilots, users);
    let gamma = initial_gamma(&y, users.len(), scenario.sigma_x2, obs.sigma_n2);
    let priors = Priors::new(
        &pilots,
        scenario.data_len,
        scenario.sigma_x2,
        obs.sigma_n2,
        gamma,
    );
    bigamp::run(&y, &priors, solver)
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64() * 1e3)
}

/// Stage 2 alone, for an arbitrary plan.
pub fn run_stage2(
    obs: &Observation,
    scenario: &Scenario,
    plan: &DecouplingPlan,
    opts: &JcdOptions,
) -> Result<JcdResult> {
    check_observation(obs, scenario)?;
    if plan.groups.is_empty() {
        return Err(Error::EmptyPlan);
    }
    if plan.antennas != scenario.antennas {
        return Err(Error::DimensionMismatch(format!(
            "plan covers {} angular bins, scenario has {}",
            plan.antennas, scenario.antennas
        )));
    }
    plan.validate(scenario.users)?;
    let solve = |g: usize| {
        timed(|| {
            solve_group(
                obs,
                scenario,
                &plan.group_rows[g],
                &plan.groups[g],
                &opts.solver,
            )
        })
    };
    let (outcomes, stage2_ms) = timed(|| -> Result<Vec<(Result<BigampEstimate>, f64)>> {
        Ok(match opts.execution {
            Execution::Sequential => (0..plan.groups.len()).map(solve).collect(),
            Execution::Parallel(workers) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(workers.max(1))
                    .build()
                    .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
                pool.install(|| (0..plan.groups.len()).into_par_iter().map(solve).collect())
            }
        })
    });

    let mut per_group = Vec::with_capacity(plan.groups.len());
    let mut per_group_ms = Vec::with_capacity(plan.groups.len());
    for (g, (res, ms)) in outcomes?.into_iter().enumerate() {
        per_group.push(res.map_err(|e| Error::Group {
            group: g,
            source: Box::new(e),
        })?);
        per_group_ms.push(ms);
    }

    let mut h_hat_part = CMat::zeros(scenario.antennas, scenario.users);
    let mut x_d_hat = CMat::zeros(scenario.users, scenario.data_len);
    for (g, est) in per_group.iter().enumerate() {
        for (lu, &u) in plan.groups[g].iter().enumerate() {
            for (lr, &r) in plan.group_rows[g].iter().enumerate() {
                h_hat_part[(r, u)] = est.h_hat[(lr, lu)];
            }
            x_d_hat.row_mut(u).copy_from(&est.x_d_hat.row(lu));
        }
    }
    Ok(JcdResult {
        h_hat_part,
        x_d_hat,
        coarse: None,
        plan: plan.clone(),
        per_group,
        timings: Timings {
            stage1_ms: 0.0,
            stage2_ms,
            total_ms: stage2_ms,
            per_group_ms,
        },
    })
}

/// Stage 1 on the pilot phase.
pub fn run_stage1(
    obs: &Observation,
    scenario: &Scenario,
    rule: ThresholdRule,
) -> Result<CoarseEstimate> {
    check_observation(obs, scenario)?;
    coarse_stage(
        &obs.pilot_part(),
        &obs.pilots,
        obs.sigma_n2,
        scenario.sigma_x2,
        scenario.false_alarm,
        scenario.tracked_paths,
        scenario.window,
        rule,
    )
}

/// The two-stage method.
pub fn run_pf_assisted_jcd(
    obs: &Observation,
    scenario: &Scenario,
    opts: &JcdOptions,
) -> Result<JcdResult> {
    let start = Instant::now();
    let (coarse, stage1_ms) = timed(|| run_stage1(obs, scenario, opts.threshold));
    let coarse = coarse?;
    let mut out = run_stage2(obs, scenario, &coarse.plan, opts)?;
    out.coarse = Some(coarse);
    out.timings.stage1_ms = stage1_ms;
    out.timings.total_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(out)
}

/// Full-size EM-BiGAMP on the complete angular observation.
pub fn run_original_df(
    obs: &Observation,
    scenario: &Scenario,
    solver: &SolverOptions,
) -> Result<BigampEstimate> {
    check_observation(obs, scenario)?;
    let rows: Vec<usize> = (0..scenario.antennas).collect();
    let users: Vec<usize> = (0..scenario.users).collect();
    solve_group(obs, scenario, &rows, &users, solver)
}

/// Pilot-only least squares.
pub fn run_ls_baseline(obs: &Observation) -> Result<CMat> {
    ls_estimate(&obs.pilot_part(), &obs.pilots)
}

/// Pilot-only sparse channel estimation: the solver run with every column
/// pinned, so no data symbol enters.
pub fn run_pilot_amp_baseline(
    obs: &Observation,
    scenario: &Scenario,
    solver: &SolverOptions,
) -> Result<CMat> {
    check_observation(obs, scenario)?;
    let y_p = obs.pilot_part();
    let gamma = initial_gamma(&y_p, scenario.users, scenario.sigma_x2, obs.sigma_n2);
    let priors = Priors::new(&obs.pilots, 0, scenario.sigma_x2, obs.sigma_n2, gamma);
    Ok(bigamp::run(&y_p, &priors, solver)?.h_hat)
}

/// Linear MMSE symbol detection with a fixed channel estimate:
/// `(H^H H + sigma_n2/sigma_x2 I)^{-1} H^H Y_d`.
pub fn equalize_lmmse(h: &CMat, y_d: &CMat, sigma_n2: f64, sigma_x2: f64) -> Result<CMat> {
    if h.nrows() != y_d.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "channel has {} rows, data observation {}",
            h.nrows(),
            y_d.nrows()
        )));
    }
    let n = h.ncols();
    let reg = (sigma_n2 / sigma_x2).max(1e-12);
    let gram = h.adjoint() * h + identity(n) * num_complex::Complex64::new(reg, 0.0);
    hermitian_solve(&gram, &(h.adjoint() * y_d))
}

/// Rows of `h` outside the retained set zeroed.
pub fn restrict_rows(h: &CMat, mask: &[bool]) -> CMat {
    CMat::from_fn(h.nrows(), h.ncols(), |r, c| {
        if mask[r] {
            h[(r, c)]
        } else {
            num_complex::Complex64::new(0.0, 0.0)
        }
    })
}
