//! Sampling-probability thresholds and success floors.
//!
//! Each `required_prob_*` evaluates the closed-form threshold for one model
//! and the probability floor that comes with it. Preconditions are reported
//! by name and never turn into errors. Logarithms are natural. Floors are
//! computed in log space, so `log_success_floor` stays finite even when
//! `success_floor` underflows to zero.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{arg_err, Result};
use crate::rank::{Model, RankSpec};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Precondition {
    pub name: String,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThresholdReport {
    pub model: Model,
    pub dims: Vec<usize>,
    pub rank: RankSpec,
    pub epsilon: f64,
    pub p_threshold: f64,
    pub preconditions_ok: bool,
    pub preconditions: Vec<Precondition>,
    pub success_floor: f64,
    pub log_success_floor: f64,
}

impl ThresholdReport {
    /// Names of the preconditions that do not hold.
    pub fn failed_preconditions(&self) -> Vec<&str> {
        self.preconditions
            .iter()
            .filter(|c| !c.holds)
            .map(|c| c.name.as_str())
            .collect()
    }

    /// True when `p` strictly exceeds the threshold.
    pub fn passes(&self, p: f64) -> bool {
        p > self.p_threshold
    }
}

fn check_epsilon(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return arg_err(format!("epsilon must lie in (0,1), got {eps}"));
    }
    Ok(())
}

/// `ln[(1-eps)(1-exp(-sqrt(base)/2))^count]`.
pub fn log_floor(eps: f64, base: f64, count: f64) -> f64 {
    let tail = (-(base.sqrt()) / 2.0).exp();
    (-eps).ln_1p() + count * (-tail).ln_1p()
}

fn report(
    model: Model,
    dims: Vec<usize>,
    rank: RankSpec,
    epsilon: f64,
    p_threshold: f64,
    preconditions: Vec<Precondition>,
    log_success_floor: f64,
) -> ThresholdReport {
    let preconditions_ok = preconditions.iter().all(|c| c.holds);
    ThresholdReport {
        model,
        dims,
        rank,
        epsilon,
        p_threshold,
        preconditions_ok,
        preconditions,
        success_floor: log_success_floor.exp().clamp(0.0, 1.0),
        log_success_floor,
    }
}

fn cond(name: &str, holds: bool) -> Precondition {
    Precondition { name: name.to_string(), holds }
}

pub fn required_prob_single(n1: usize, n2: usize, r: usize, eps: f64) -> Result<ThresholdReport> {
    check_epsilon(eps)?;
    if n1 == 0 || n2 == 0 {
        return arg_err("dimensions must be positive");
    }
    let n = n1 as f64;
    let log_term = 12.0 * (n / eps).ln() + 12.0;
    let p = log_term.max(2.0 * r as f64) / n + n.powf(-0.25);
    let pre = vec![
        cond("r <= n1/6", 6 * r <= n1),
        cond("r(n1-r) <= n2", r <= n1 && r * (n1 - r) <= n2),
    ];
    Ok(report(
        Model::SingleView,
        vec![n1, n2],
        RankSpec::Single(r),
        eps,
        p,
        pre,
        log_floor(eps, n, n2 as f64),
    ))
}

/// Infimum of the epsilons for which `p` passes the single-view threshold at
/// rank `r`, or `None` when no epsilon in (0,1) works.
pub fn min_epsilon_single(n1: usize, p: f64, r: usize) -> Result<Option<f64>> {
    if !(p > 0.0 && p <= 1.0) {
        return arg_err(format!("p must lie in (0,1], got {p}"));
    }
    if n1 == 0 {
        return arg_err("n1 must be positive");
    }
    let n = n1 as f64;
    let budget = n * (p - n.powf(-0.25));
    if 2.0 * r as f64 >= budget {
        return Ok(None);
    }
    let eps = n * (-(budget - 12.0) / 12.0).exp();
    Ok((eps < 1.0).then_some(eps))
}

/// Largest rank that passes the single-view threshold for some epsilon.
pub fn max_feasible_rank_single(n1: usize, p: f64) -> Result<Option<usize>> {
    let mut best = None;
    for r in 1..=n1 {
        match min_epsilon_single(n1, p, r)? {
            Some(_) => best = Some(r),
            None => break,
        }
    }
    Ok(best)
}

pub fn required_prob_cp(n: usize, d: usize, r: usize, eps: f64) -> Result<ThresholdReport> {
    check_epsilon(eps)?;
    if d <= 2 {
        return arg_err("the CP threshold needs order d > 2");
    }
    if r == 0 || n == 0 {
        return arg_err("n and r must be positive");
    }
    let nf = n as f64;
    let base = nf.powi(d as i32 - 2);
    let log_term =
        27.0 * (nf / eps).ln() + 9.0 * ((2 * r * (d - 2)) as f64 / eps).ln() + 18.0;
    let p = log_term.max(6.0 * r as f64) / base + base.powf(-0.25);
    let pre = vec![
        cond("n > max(200, r(d-2))", n > 200 && n > r * (d - 2)),
        cond("r <= n/6", 6 * r <= n),
    ];
    Ok(report(
        Model::Cp,
        vec![n; d],
        RankSpec::Cp(r),
        eps,
        p,
        pre,
        log_floor(eps, base, nf * nf),
    ))
}

pub fn required_prob_multiview(
    n: usize,
    n1: usize,
    n2: usize,
    r1: usize,
    r2: usize,
    r: usize,
    eps: f64,
) -> Result<ThresholdReport> {
    check_epsilon(eps)?;
    if r < r1.max(r2) || r > r1 + r2 || r1 == 0 || r2 == 0 {
        return arg_err(format!("rank triple ({r1},{r2},{r}) needs max(r1,r2) <= r <= r1+r2 and r1, r2 >= 1"));
    }
    if n == 0 {
        return arg_err("n must be positive");
    }
    let nf = n as f64;
    let shared = r1 + r2 - r;
    let spread = (r - r2).max(r - r1).max(shared);
    let log_term = 9.0 * (nf / eps).ln() + 3.0 * ((3 * spread) as f64 / eps).ln() + 6.0;
    let p = log_term.max(2.0 * r1 as f64).max(2.0 * r2 as f64) / nf + nf.powf(-0.25);
    let sat = |a: usize, b: usize| a.saturating_sub(b);
    let as2 = (r - r2) * sat(n, r1);
    let as3 = (r - r1) * sat(n, r2);
    let as4 = as2 + as3 + shared * sat(n, shared);
    let pre = vec![
        cond("n/6 >= max(r1, r2, r1+r2-r)", 6 * r1.max(r2).max(shared) <= n),
        cond("n1 >= (r-r2)(n-r1)", n1 >= as2),
        cond("n2 >= (r-r1)(n-r2)", n2 >= as3),
        cond("n1+n2 >= (r-r2)(n-r1)+(r-r1)(n-r2)+(r1+r2-r)(n-(r1+r2-r))", n1 + n2 >= as4),
    ];
    Ok(report(
        Model::MultiView,
        vec![n, n1, n2],
        RankSpec::MultiView { r1, r2, r },
        eps,
        p,
        pre,
        log_floor(eps, nf, (n1 + n2) as f64),
    ))
}

pub fn required_prob_tucker(dims: &[usize], split: usize, ranks: &[usize], eps: f64) -> Result<ThresholdReport> {
    check_epsilon(eps)?;
    let d = dims.len();
    if split == 0 || split >= d {
        return arg_err(format!("split must lie in 1..{d}, got {split}"));
    }
    if ranks.len() != d - split || ranks.contains(&0) {
        return arg_err(format!("expected {} positive Tucker ranks", d - split));
    }
    let nj: usize = dims[..split].iter().product();
    let rest: usize = dims[split..].iter().product();
    let sum_sq: usize = ranks.iter().map(|m| m * m).sum();
    let prod: usize = ranks.iter().product();
    let njf = nj as f64;
    let inner = (2.0 * sum_sq as f64 / eps).max((2.0 * prod as f64 - 2.0 * sum_sq as f64) / eps);
    let p = (6.0 * njf.ln() + 2.0 * inner.ln() + 4.0) / njf + njf.powf(-0.25);
    let pre = vec![
        cond("sum m_i^2 <= prod m_i", sum_sq <= prod),
        cond("prod_{i>j} n_i >= N_j prod m_i - sum m_i^2", rest as i128 >= (nj * prod) as i128 - sum_sq as i128),
        cond("prod m_i <= N_j", prod <= nj),
    ];
    Ok(report(
        Model::Tucker,
        dims.to_vec(),
        RankSpec::Tucker { split, ranks: ranks.to_vec() },
        eps,
        p,
        pre,
        log_floor(eps, njf, rest as f64),
    ))
}

pub fn required_prob_tt(n: usize, d: usize, u: &[usize], eps: f64) -> Result<ThresholdReport> {
    check_epsilon(eps)?;
    if d <= 2 {
        return arg_err("the TT threshold needs order d > 2");
    }
    if u.len() != d - 1 || u.contains(&0) {
        return arg_err(format!("expected {} positive TT ranks", d - 1));
    }
    if n == 0 {
        return arg_err("n must be positive");
    }
    // u_0 = 1 by convention; the formulas index u_0..u_{d-2}
    let full: Vec<usize> = std::iter::once(1).chain(u.iter().copied()).collect();
    let m: usize = (1..=d - 2).map(|k| full[k - 1] * full[k]).sum();
    let sq: usize = (1..=d - 2).map(|k| full[k] * full[k]).sum();
    let big_m = n as f64 * m as f64 - sq as f64;
    if big_m <= 0.0 {
        return arg_err(format!("n*m - sum u_k^2 = {big_m} is not positive; the threshold is undefined"));
    }
    let u_prime = (1..=d - 2)
        .map(|k| full[k] as f64 / full[k - 1] as f64)
        .fold(f64::MIN, f64::max);
    let nf = n as f64;
    let base = nf.powi(d as i32 - 2);
    let log_term = 27.0 * (nf / eps).ln() + 9.0 * (2.0 * big_m / eps).ln() + 18.0;
    let p = log_term.max(6.0 * full[d - 2] as f64) / base + base.powf(-0.25);
    let pre = vec![
        cond("n > max(m, 200)", n > m && n > 200),
        cond("u' <= min(n/6, u_{d-2})", u_prime <= (nf / 6.0).min(full[d - 2] as f64)),
    ];
    Ok(report(
        Model::Tt,
        vec![n; d],
        RankSpec::Tt(u.to_vec()),
        eps,
        p,
        pre,
        log_floor(eps, base, nf * nf),
    ))
}

/// Dispatch on a rank spec. Tensor thresholds need equal side lengths for CP
/// and TT.
pub fn required_prob(dims: &[usize], rank: &RankSpec, eps: f64) -> Result<ThresholdReport> {
    let equal = |dims: &[usize]| -> Result<usize> {
        match dims.first() {
            Some(&n) if dims.iter().all(|&x| x == n) => Ok(n),
            _ => arg_err(format!("this threshold needs equal dimensions, got {dims:?}")),
        }
    };
    match rank {
        RankSpec::Single(r) => match dims {
            [n1, n2] => required_prob_single(*n1, *n2, *r, eps),
            _ => arg_err("single-view threshold needs two dimensions"),
        },
        RankSpec::MultiView { r1, r2, r } => match dims {
            [n, n1, n2] => required_prob_multiview(*n, *n1, *n2, *r1, *r2, *r, eps),
            _ => arg_err("multi-view threshold needs dims n n1 n2"),
        },
        RankSpec::Cp(r) => required_prob_cp(equal(dims)?, dims.len(), *r, eps),
        RankSpec::Tucker { split, ranks } => required_prob_tucker(dims, *split, ranks, eps),
        RankSpec::Tt(u) => required_prob_tt(equal(dims)?, dims.len(), u, eps),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeatmapCell {
    pub p: f64,
    pub r: usize,
    pub epsilon_min: Option<f64>,
    pub floor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Heatmap {
    pub n1: usize,
    pub n2: usize,
    pub p_grid: Vec<f64>,
    pub r_grid: Vec<usize>,
    /// Row-major over `p_grid` then `r_grid`.
    pub cells: Vec<HeatmapCell>,
}

impl Heatmap {
    pub fn cell(&self, pi: usize, ri: usize) -> &HeatmapCell {
        &self.cells[pi * self.r_grid.len() + ri]
    }
}

/// Success floor at the minimal epsilon for every `(p, r)` pair. A cell is
/// zero when no epsilon works or the single-view preconditions fail.
pub fn heatmap_single(n1: usize, n2: usize, p_grid: &[f64], r_grid: &[usize]) -> Result<Heatmap> {
    if p_grid.is_empty() || r_grid.is_empty() {
        return arg_err("heatmap grids must be nonempty");
    }
    if let Some(p) = p_grid.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
        return arg_err(format!("p must lie in (0,1], got {p}"));
    }
    let pairs: Vec<(f64, usize)> = p_grid
        .iter()
        .flat_map(|&p| r_grid.iter().map(move |&r| (p, r)))
        .collect();
    let cells = pairs
        .par_iter()
        .map(|&(p, r)| -> Result<HeatmapCell> {
            let epsilon_min = min_epsilon_single(n1, p, r)?;
            let floor = match epsilon_min {
                Some(eps) if eps > 0.0 => {
                    let rep = required_prob_single(n1, n2, r, eps)?;
                    if rep.preconditions_ok { rep.success_floor } else { 0.0 }
                }
                _ => 0.0,
            };
            Ok(HeatmapCell { p, r, epsilon_min, floor })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Heatmap { n1, n2, p_grid: p_grid.to_vec(), r_grid: r_grid.to_vec(), cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn frontier_at_300() {
        assert_eq!(max_feasible_rank_single(300, 0.54).unwrap(), Some(44));
    }

    #[test]
    fn min_epsilon_matches_bisection() {
        let eps = min_epsilon_single(300, 0.54, 10).unwrap().unwrap();
        assert_relative_eq!(eps, 0.455, epsilon = 1e-3);
        let (mut lo, mut hi) = (1e-12_f64, 1.0 - 1e-12);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let passes = required_prob_single(300, 15000, 10, mid).unwrap().passes(0.54);
            if passes { hi = mid } else { lo = mid }
        }
        assert_relative_eq!(eps, hi, max_relative = 1e-10);
    }

    #[test]
    fn infeasible_rank() {
        assert_eq!(min_epsilon_single(300, 0.54, 45).unwrap(), None);
        assert_eq!(min_epsilon_single(10, 0.2, 1).unwrap(), None);
    }

    #[test]
    fn floor_goes_to_zero_near_one() {
        let rep = required_prob_single(300, 100, 2, 1.0 - 1e-15).unwrap();
        assert!(rep.success_floor < 1e-12);
        assert!(required_prob_single(300, 100, 2, 1.0).is_err());
    }

    #[test]
    fn floor_survives_underflow_in_log_space() {
        let rep = required_prob_single(4, 1_000_000, 1, 0.5).unwrap();
        assert_eq!(rep.success_floor, 0.0);
        assert!(rep.log_success_floor.is_finite());
    }

    #[test]
    fn tucker_precondition_flag() {
        let rep = required_prob_tucker(&[8, 8, 8, 8], 2, &[2, 2], 0.1).unwrap();
        assert!(!rep.preconditions_ok);
        assert!(rep.failed_preconditions().contains(&"sum m_i^2 <= prod m_i"));
    }

    #[test]
    fn multiview_flags_and_errors() {
        let rep = required_prob_multiview(60, 3, 3, 2, 2, 3, 0.1).unwrap();
        assert!(rep.failed_preconditions().contains(&"n1 >= (r-r2)(n-r1)"));
        assert!(required_prob_multiview(60, 300, 300, 2, 2, 5, 0.1).is_err());
        assert!(required_prob_multiview(60, 300, 300, 3, 2, 2, 0.1).is_err());
    }

    #[test]
    fn order_two_tensors_rejected() {
        assert!(required_prob_cp(256, 2, 1, 0.1).is_err());
        assert!(required_prob_tt(256, 2, &[1], 0.1).is_err());
    }

    #[test]
    fn heatmap_zero_when_infeasible() {
        let h = heatmap_single(300, 15000, &[0.3, 0.54], &[1, 44, 45]).unwrap();
        assert_eq!(h.cell(0, 0).floor, 0.0);
        assert!(h.cell(1, 1).floor > 0.0);
        assert_eq!(h.cell(1, 2).floor, 0.0);
    }
}
