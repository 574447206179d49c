//! Pilot-only coarse estimation and multi-user decoupling.
//!
//! The LS estimate is thresholded by spectral subtraction, the strongest
//! angular bins of every user are tracked, and a window around each becomes a
//! search range. Users whose search ranges share an angular bin interfere;
//! the connected components of that interference graph can then be solved as
//! independent, much smaller problems.

use std::collections::VecDeque;

use crate::channel::dft_matrix;
use crate::linalg::{hermitian_condition, hermitian_solve, select_rows};
use crate::{CMat, Error, RMat, Result};

/// Pilot Gram matrices with a larger condition number are rejected.
pub const MAX_PILOT_CONDITION: f64 = 1e12;

/// `Y_p X_p^H (X_p X_p^H)^{-1}`.
pub fn ls_estimate(y_p: &CMat, x_p: &CMat) -> Result<CMat> {
    if y_p.ncols() != x_p.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "pilot observation has {} columns, pilots have {}",
            y_p.ncols(),
            x_p.ncols()
        )));
    }
    let gram = x_p * x_p.adjoint();
    let condition = hermitian_condition(&gram);
    if !(condition <= MAX_PILOT_CONDITION) {
        return Err(Error::SingularPilotGram { condition });
    }
    // H^H = (X_p X_p^H)^{-1} X_p Y_p^H
    let rhs = x_p * y_p.adjoint();
    Ok(hermitian_solve(&gram, &rhs)?.adjoint())
}

/// Quantile rule used to turn the false-alarm probability into a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThresholdRule {
    /// `sqrt(-2 ln eps) Var{|n|^2} + E{|n|^2}`: the Rayleigh quantile scaled by
    /// the variance of the noise power.
    #[default]
    Rayleigh,
    /// `-ln(eps) E{|n|^2}`: the exact quantile of the exponential law that
    /// `|n|^2` follows for circular Gaussian noise.
    Exponential,
}

/// Inverse Rayleigh CDF `sqrt(-2 ln(1 - p))` (unit scale).
pub fn rayleigh_quantile(p: f64) -> f64 {
    (-2.0 * (1.0 - p).ln()).sqrt()
}

pub fn rayleigh_cdf(x: f64) -> f64 {
    1.0 - (-x * x / 2.0).exp()
}

/// Per-element noise variance of the LS estimate with scaled-unitary pilots.
pub fn effective_noise_variance(sigma_n2: f64, pilot_len: usize, sigma_x2: f64) -> f64 {
    sigma_n2 / (pilot_len as f64 * sigma_x2)
}

/// Detection threshold on `|h_ls|^2` for false-alarm probability `eps`.
pub fn np_threshold(
    sigma_n2: f64,
    eps: f64,
    pilot_len: usize,
    sigma_x2: f64,
    rule: ThresholdRule,
) -> f64 {
    let v = effective_noise_variance(sigma_n2, pilot_len, sigma_x2);
    match rule {
        ThresholdRule::Rayleigh => rayleigh_quantile(1.0 - eps) * v * v + v,
        ThresholdRule::Exponential => -eps.ln() * v,
    }
}

/// LS estimate, its denoised power profile and the threshold used.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoisedProfile {
    pub h_ls: CMat,
    pub h_tilde: RMat,
    pub eta: f64,
}

/// Spectral subtraction: `|h|^2 - eta` above the threshold, zero at or below.
pub fn denoise(h_ls: &CMat, eta: f64) -> DenoisedProfile {
    let h_tilde = h_ls.map(|z| {
        let p = z.norm_sqr();
        if p > eta {
            p - eta
        } else {
            0.0
        }
    });
    DenoisedProfile {
        h_ls: h_ls.clone(),
        h_tilde,
        eta,
    }
}

/// Indices of the `tracked` largest entries of each column, largest first;
/// equal values go to the lower index first. Result is indexed `[user][rank]`.
pub fn track_paths(profile: &RMat, tracked: usize) -> Vec<Vec<usize>> {
    let take = tracked.min(profile.nrows());
    (0..profile.ncols())
        .map(|j| {
            let col = profile.column(j);
            let mut idx: Vec<usize> = (0..col.len()).collect();
            idx.sort_by(|&a, &b| col[b].total_cmp(&col[a]).then(a.cmp(&b)));
            idx.truncate(take);
            idx
        })
        .collect()
}

/// Circular window `{(q + d) mod M : |d| <= extent/2}` in the order `d`
/// ascends. `extent` must be even.
pub fn build_window(q: usize, extent: usize, antennas: usize) -> Result<Vec<usize>> {
    if !extent.is_multiple_of(2) {
        return Err(Error::InvalidWindow(extent));
    }
    if extent + 1 > antennas {
        return Err(Error::InvalidScenario(format!(
            "window extent {extent} does not fit {antennas} angular bins"
        )));
    }
    let half = (extent / 2) as i64;
    let m = antennas as i64;
    Ok((-half..=half)
        .map(|d| (q as i64 + d).rem_euclid(m) as usize)
        .collect())
}

/// Windows around every tracked index, indexed `[user][rank]`.
pub fn build_windows(
    tracked: &[Vec<usize>],
    extent: usize,
    antennas: usize,
) -> Result<Vec<Vec<Vec<usize>>>> {
    tracked
        .iter()
        .map(|qs| {
            qs.iter()
                .map(|&q| build_window(q, extent, antennas))
                .collect()
        })
        .collect()
}

/// Interference graph, its connected components and their angular rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DecouplingPlan {
    pub antennas: usize,
    /// `[user][rank]` angular windows.
    pub windows: Vec<Vec<Vec<usize>>>,
    /// Symmetric; `graph[a][b]` is true when the window unions of `a` and `b`
    /// share a bin. The diagonal is false.
    pub graph: Vec<Vec<bool>>,
    /// Users of every group in ascending order; groups ordered by their
    /// smallest user.
    pub groups: Vec<Vec<usize>>,
    /// Sorted, deduplicated angular rows of every group.
    pub group_rows: Vec<Vec<usize>>,
}

impl DecouplingPlan {
    /// Reduced combiner of group `g`: the rows of `U^H` it retains.
    pub fn combiner(&self, g: usize) -> CMat {
        let uh = dft_matrix(self.antennas).adjoint();
        select_rows(&uh, &self.group_rows[g])
    }

    /// Reduced combiners of every group.
    pub fn combiners(&self) -> Vec<CMat> {
        let uh = dft_matrix(self.antennas).adjoint();
        self.group_rows
            .iter()
            .map(|rows| select_rows(&uh, rows))
            .collect()
    }

    pub fn retained_rows(&self) -> usize {
        self.group_rows.iter().map(Vec::len).sum()
    }

    /// Group that owns each user.
    pub fn owner(&self) -> Vec<usize> {
        let users: usize = self.groups.iter().map(Vec::len).sum();
        let mut owner = vec![0; users];
        for (g, members) in self.groups.iter().enumerate() {
            for &u in members {
                owner[u] = g;
            }
        }
        owner
    }

    /// Checks that the groups partition `0..users`, that no interference
    /// edge crosses two groups, that groups share no angular row, and that
    /// every window of a user lies inside the rows of its group.
    pub fn validate(&self, users: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScenario(format!("decoupling plan: {msg}")));
        if self.groups.len() != self.group_rows.len() {
            return bad("one row set per group required".into());
        }
        let mut owner = vec![usize::MAX; users];
        for (g, members) in self.groups.iter().enumerate() {
            for &u in members {
                if u >= users || owner[u] != usize::MAX {
                    return bad(format!("user {u} missing from the range or listed twice"));
                }
                owner[u] = g;
            }
        }
        if let Some(u) = owner.iter().position(|&g| g == usize::MAX) {
            return bad(format!("user {u} belongs to no group"));
        }
        if self.windows.len() != users || self.graph.len() != users {
            return bad("windows and graph must cover every user".into());
        }
        for a in 0..users {
            for b in 0..users {
                if self.graph[a][b] && owner[a] != owner[b] {
                    return bad(format!("users {a} and {b} interfere across groups"));
                }
            }
        }
        let mut row_owner = vec![usize::MAX; self.antennas];
        for (g, rows) in self.group_rows.iter().enumerate() {
            if rows.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("rows of group {g} not strictly ascending"));
            }
            for &r in rows {
                if r >= self.antennas || row_owner[r] != usize::MAX {
                    return bad(format!("row {r} out of range or shared by two groups"));
                }
                row_owner[r] = g;
            }
        }
        for (u, user_windows) in self.windows.iter().enumerate() {
            for &r in user_windows.iter().flatten() {
                if r >= self.antennas || row_owner[r] != owner[u] {
                    return bad(format!("row {r} of user {u} outside its group"));
                }
            }
        }
        Ok(())
    }

    /// Single group holding every user and every angular row.
    pub fn full(antennas: usize, users: usize) -> Self {
        let all: Vec<usize> = (0..antennas).collect();
        DecouplingPlan {
            antennas,
            windows: vec![vec![all.clone()]; users],
            graph: (0..users)
                .map(|a| (0..users).map(|b| a != b).collect())
                .collect(),
            groups: vec![(0..users).collect()],
            group_rows: vec![all],
        }
    }
}

fn window_union(user_windows: &[Vec<usize>], antennas: usize) -> Vec<bool> {
    let mut mask = vec![false; antennas];
    for w in user_windows {
        for &i in w {
            mask[i] = true;
        }
    }
    mask
}

/// Connects users whose window unions intersect and splits them into
/// connected components by breadth-first search.
pub fn decouple(windows: Vec<Vec<Vec<usize>>>, antennas: usize) -> Result<DecouplingPlan> {
    if windows.iter().all(|w| w.iter().all(Vec::is_empty)) {
        return Err(Error::EmptyPlan);
    }
    if windows.iter().flatten().flatten().any(|&i| i >= antennas) {
        return Err(Error::DimensionMismatch(format!(
            "window index outside {antennas} angular bins"
        )));
    }
    let n = windows.len();
    let masks: Vec<Vec<bool>> = windows.iter().map(|w| window_union(w, antennas)).collect();
    let mut graph = vec![vec![false; n]; n];
    for a in 0..n {
        for b in (a + 1)..n {
            let hit = masks[a].iter().zip(&masks[b]).any(|(x, y)| *x && *y);
            graph[a][b] = hit;
            graph[b][a] = hit;
        }
    }

    let mut seen = vec![false; n];
    let mut groups = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut members = vec![start];
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if graph[u][v] && !seen[v] {
                    seen[v] = true;
                    members.push(v);
                    queue.push_back(v);
                }
            }
        }
        members.sort_unstable();
        groups.push(members);
    }

    let group_rows = groups
        .iter()
        .map(|members| {
            let mut mask = vec![false; antennas];
            for &u in members {
                for (i, hit) in masks[u].iter().enumerate() {
                    mask[i] |= *hit;
                }
            }
            (0..antennas).filter(|&i| mask[i]).collect()
        })
        .collect();

    Ok(DecouplingPlan {
        antennas,
        windows,
        graph,
        groups,
        group_rows,
    })
}

/// Row selection of the angular observation for every group.
pub fn decompose(y: &CMat, plan: &DecouplingPlan) -> Result<Vec<CMat>> {
    if y.nrows() != plan.antennas {
        return Err(Error::DimensionMismatch(format!(
            "observation has {} rows, plan covers {} angular bins",
            y.nrows(),
            plan.antennas
        )));
    }
    Ok(plan
        .group_rows
        .iter()
        .map(|rows| select_rows(y, rows))
        .collect())
}

/// Stage-1 output.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseEstimate {
    pub profile: DenoisedProfile,
    /// `[user][rank]` tracked angular indices.
    pub tracked: Vec<Vec<usize>>,
    pub plan: DecouplingPlan,
}

/// LS, thresholding, tracking, windows and decoupling from the pilot phase.
#[allow(clippy::too_many_arguments)]
pub fn coarse_stage(
    y_p: &CMat,
    x_p: &CMat,
    sigma_n2: f64,
    sigma_x2: f64,
    false_alarm: f64,
    tracked_paths: usize,
    window: usize,
    rule: ThresholdRule,
) -> Result<CoarseEstimate> {
    let antennas = y_p.nrows();
    let h_ls = ls_estimate(y_p, x_p)?;
    let eta = np_threshold(sigma_n2, false_alarm, x_p.ncols(), sigma_x2, rule);
    let profile = denoise(&h_ls, eta);
    let tracked = track_paths(&profile.h_tilde, tracked_paths);
    let windows = build_windows(&tracked, window, antennas)?;
    let plan = decouple(windows, antennas)?;
    Ok(CoarseEstimate {
        profile,
        tracked,
        plan,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{on_grid_angle, pilot_matrix, realization_from_paths, Path};
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn ls_hand_example() {
        let x = CMat::from_row_slice(1, 2, &[c(1.0), c(1.0)]);
        let y = CMat::from_row_slice(1, 2, &[c(2.0), c(4.0)]);
        let h = ls_estimate(&y, &x).unwrap();
        assert!((h[(0, 0)] - c(3.0)).norm() < 1e-12);
    }

    #[test]
    fn ls_noiseless_recovers_channel() {
        let paths = vec![
            vec![Path {
                theta: 0.3,
                gain: Complex64::new(0.4, -1.1),
            }],
            vec![Path {
                theta: 1.2,
                gain: Complex64::new(-0.7, 0.2),
            }],
            vec![Path {
                theta: 2.5,
                gain: Complex64::new(1.3, 0.9),
            }],
        ];
        let h = realization_from_paths(paths, 32).angular;
        let xp = pilot_matrix(3, 8, 2.0);
        let est = ls_estimate(&(&h * &xp), &xp).unwrap();
        assert!((est - &h).norm() < 1e-10 * h.norm());
    }

    #[test]
    fn ls_scaled_unitary_shortcut() {
        let xp = pilot_matrix(4, 8, 1.5);
        let y = CMat::from_fn(16, 8, |r, c| {
            Complex64::new((r * 3 + c) as f64 * 0.1, (r as f64 - c as f64) * 0.05)
        });
        let est = ls_estimate(&y, &xp).unwrap();
        let shortcut = &y * xp.adjoint() / Complex64::new(8.0 * 1.5, 0.0);
        assert!((est - shortcut).norm() < 1e-10);
    }

    #[test]
    fn ls_rejects_rank_deficient_pilots() {
        let xp = CMat::from_element(2, 4, c(1.0));
        let y = CMat::zeros(3, 4);
        assert!(matches!(
            ls_estimate(&y, &xp),
            Err(Error::SingularPilotGram { .. })
        ));
    }

    #[test]
    fn threshold_examples() {
        // K_p sigma_x2 = 1 so the effective variance equals sigma_n2
        let eta = np_threshold(1.0, 1e-5, 1, 1.0, ThresholdRule::Rayleigh);
        assert!((eta - ((-2.0 * 1e-5f64.ln()).sqrt() + 1.0)).abs() < 1e-12);
        assert!((eta - 5.798).abs() < 1e-3);
        let limit = np_threshold(0.5, 1.0, 1, 1.0, ThresholdRule::Rayleigh);
        assert!((limit - 0.5).abs() < 1e-15);
        let exp = np_threshold(2.0, 1e-3, 4, 1.0, ThresholdRule::Exponential);
        assert!((exp - 0.5 * 1e3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rayleigh_round_trip() {
        for p in [0.1, 0.9, 1.0 - 1e-5] {
            assert!((rayleigh_cdf(rayleigh_quantile(p)) - p).abs() < 1e-12);
        }
    }

    #[test]
    fn threshold_decreases_with_false_alarm() {
        let mut prev = f64::INFINITY;
        for eps in [1e-9, 1e-6, 1e-3, 0.1, 0.5, 0.9] {
            let eta = np_threshold(0.3, eps, 16, 1.0, ThresholdRule::Rayleigh);
            assert!(eta < prev);
            prev = eta;
        }
    }

    #[test]
    fn denoise_boundary_and_subtraction() {
        let h = CMat::from_row_slice(3, 1, &[c(1.0), c(2f64.sqrt()), c(0.5)]);
        let p = denoise(&h, 1.0);
        assert_eq!(p.h_tilde[(0, 0)], 0.0);
        assert!((p.h_tilde[(1, 0)] - 1.0).abs() < 1e-12);
        assert_eq!(p.h_tilde[(2, 0)], 0.0);
    }

    #[test]
    fn track_examples() {
        let col = RMat::from_column_slice(4, 1, &[0.0, 5.0, 3.0, 5.0]);
        assert_eq!(track_paths(&col, 2), vec![vec![1, 3]]);
        assert_eq!(track_paths(&RMat::zeros(5, 1), 1), vec![vec![0]]);
        let mut hot = RMat::zeros(6, 1);
        hot[(4, 0)] = 2.0;
        assert_eq!(track_paths(&hot, 1), vec![vec![4]]);
    }

    #[test]
    fn window_examples() {
        assert_eq!(build_window(0, 2, 8).unwrap(), vec![7, 0, 1]);
        assert_eq!(build_window(3, 0, 8).unwrap(), vec![3]);
        assert_eq!(build_window(5, 4, 16).unwrap(), vec![3, 4, 5, 6, 7]);
        assert_eq!(build_window(5, 3, 16), Err(Error::InvalidWindow(3)));
    }

    fn singleton_windows(sets: &[&[usize]]) -> Vec<Vec<Vec<usize>>> {
        sets.iter()
            .map(|s| s.iter().map(|&i| vec![i]).collect())
            .collect()
    }

    #[test]
    fn disjoint_windows_give_singletons() {
        let plan = decouple(singleton_windows(&[&[0, 1], &[4], &[7, 9]]), 12).unwrap();
        assert_eq!(plan.groups, vec![vec![0], vec![1], vec![2]]);
        assert_eq!(plan.group_rows, vec![vec![0, 1], vec![4], vec![7, 9]]);
    }

    #[test]
    fn transitive_closure_through_a_chain() {
        let plan = decouple(singleton_windows(&[&[0, 1], &[1, 5], &[5, 6], &[9]]), 12).unwrap();
        assert_eq!(plan.groups, vec![vec![0, 1, 2], vec![3]]);
        assert_eq!(plan.group_rows[0], vec![0, 1, 5, 6]);
        assert!(plan.graph[0][1] && plan.graph[1][2] && !plan.graph[0][2]);
    }

    #[test]
    fn three_tracked_paths_without_margin() {
        let w = singleton_windows(&[
            &[1, 6, 7],
            &[6, 14, 1],
            &[8, 13, 17],
            &[22, 13, 8],
            &[10, 18],
        ]);
        let plan = decouple(w, 32).unwrap();
        assert_eq!(plan.groups, vec![vec![0, 1], vec![2, 3], vec![4]]);
        assert_eq!(
            plan.group_rows,
            vec![vec![1, 6, 7, 14], vec![8, 13, 17, 22], vec![10, 18]]
        );
        assert_eq!(plan.retained_rows(), 10);
    }

    #[test]
    fn decompose_selects_rows() {
        let y = CMat::from_fn(6, 3, |r, c| Complex64::new(r as f64, c as f64));
        let plan = decouple(singleton_windows(&[&[2, 5]]), 6).unwrap();
        let parts = decompose(&y, &plan).unwrap();
        assert_eq!(parts[0].nrows(), 2);
        assert_eq!(parts[0].row(0), y.row(2));
        assert_eq!(parts[0].row(1), y.row(5));
        let full = decompose(&y, &DecouplingPlan::full(6, 1)).unwrap();
        assert_eq!(full[0], y);
        assert!(decompose(&CMat::zeros(5, 3), &plan).is_err());
    }

    #[test]
    fn combiner_on_spatial_signal_matches_angular_selection() {
        let m = 16;
        let h = realization_from_paths(
            vec![
                vec![Path {
                    theta: 0.7,
                    gain: c(1.0),
                }],
                vec![Path {
                    theta: 2.0,
                    gain: c(0.5),
                }],
            ],
            m,
        );
        let xp = pilot_matrix(2, 4, 1.0);
        let spatial_y = &h.spatial * &xp;
        let angular_y = &h.angular * &xp;
        let plan = decouple(singleton_windows(&[&[1, 3], &[9]]), m).unwrap();
        let parts = decompose(&angular_y, &plan).unwrap();
        for (g, comb) in plan.combiners().iter().enumerate() {
            assert!((comb * &spatial_y - &parts[g]).norm() < 1e-10);
        }
    }

    #[test]
    fn noiseless_tracking_finds_on_grid_bins() {
        let m = 64;
        let bins = [3usize, 17, 30];
        let paths = bins
            .iter()
            .map(|&k| {
                vec![Path {
                    theta: on_grid_angle(k, m),
                    gain: c(1.0),
                }]
            })
            .collect();
        let h = realization_from_paths(paths, m).angular;
        let xp = pilot_matrix(3, 8, 1.0);
        let est = coarse_stage(
            &(&h * &xp),
            &xp,
            0.0,
            1.0,
            1e-3,
            1,
            2,
            ThresholdRule::Rayleigh,
        )
        .unwrap();
        assert_eq!(est.tracked, vec![vec![3], vec![17], vec![30]]);
        assert_eq!(est.plan.groups.len(), 3);
    }

    #[test]
    fn full_plan_is_valid() {
        DecouplingPlan::full(8, 3).validate(3).unwrap();
    }

    #[test]
    fn validation_catches_broken_plans() {
        let plan = decouple(singleton_windows(&[&[1, 2], &[5], &[6]]), 8).unwrap();
        plan.validate(3).unwrap();

        let mut missing = plan.clone();
        missing.groups[0].clear();
        assert!(missing.validate(3).is_err());

        let mut shared = plan.clone();
        shared.group_rows[1].push(6);
        assert!(shared.validate(3).is_err());

        let mut uncovered = plan;
        uncovered.group_rows[0].retain(|&r| r != 2);
        assert!(uncovered.validate(3).is_err());
    }

    fn random_windows() -> impl Strategy<Value = (usize, Vec<Vec<Vec<usize>>>)> {
        (8usize..64).prop_flat_map(|m| {
            let window = prop::collection::vec(0..m, 1..4);
            let user = prop::collection::vec(window, 1..4);
            (Just(m), prop::collection::vec(user, 1..9))
        })
    }

    proptest! {
        #[test]
        fn decoupling_partitions_isolates_and_covers((m, windows) in random_windows()) {
            let users = windows.len();
            let plan = decouple(windows.clone(), m).unwrap();
            prop_assert!(plan.validate(users).is_ok(), "{:?}", plan.validate(users));
            // users in different groups have disjoint window unions
            let owner = plan.owner();
            for a in 0..users {
                for b in 0..users {
                    if owner[a] != owner[b] {
                        let ua: Vec<usize> = windows[a].iter().flatten().copied().collect();
                        prop_assert!(windows[b].iter().flatten().all(|r| !ua.contains(r)));
                    }
                }
            }
            // groups are connected: every member reaches the smallest one
            for members in &plan.groups {
                let mut reached = vec![members[0]];
                let mut i = 0;
                while i < reached.len() {
                    let u = reached[i];
                    for &v in members {
                        if plan.graph[u][v] && !reached.contains(&v) {
                            reached.push(v);
                        }
                    }
                    i += 1;
                }
                prop_assert_eq!(reached.len(), members.len());
            }
            prop_assert!(plan.groups.windows(2).all(|w| w[0][0] < w[1][0]));
        }
    }
}
