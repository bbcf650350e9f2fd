//! Independent oracles shared by the integration tests.
//!
//! Nothing here calls the crate's own formula code: thresholds are rebuilt
//! term by term, condition B is decided by dynamic programming over all
//! column subsets, and anchor sets are checked by enumerating subset tuples.

#![allow(dead_code)]

use std::collections::BTreeSet;

use rankscope::completion::{Factors, GroundTruth};
use rankscope::constraints::{self, AnchorSet, ConstraintStructure, View};
use rankscope::patterns::SamplingPattern;
use rankscope::{Error, Model, RankSpec};

// ---------------------------------------------------------------------------
// Thresholds, accumulated term by term
// ---------------------------------------------------------------------------

fn fourth_root(x: f64) -> f64 {
    x.sqrt().sqrt()
}

fn pow_int(x: f64, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, _| acc * x)
}

fn larger(a: f64, b: f64) -> f64 {
    if a >= b { a } else { b }
}

pub fn single_threshold(n1: usize, r: usize, eps: f64) -> f64 {
    let n = n1 as f64;
    let mut log_branch = 12.0 * n.ln();
    log_branch -= 12.0 * eps.ln();
    log_branch += 12.0;
    larger(log_branch, 2.0 * r as f64) / n + 1.0 / fourth_root(n)
}

pub fn cp_threshold(n: usize, d: usize, r: usize, eps: f64) -> f64 {
    let nf = n as f64;
    let base = pow_int(nf, d - 2);
    let mut log_branch = 27.0 * (nf.ln() - eps.ln());
    log_branch += 9.0 * ((2.0 * r as f64 * (d - 2) as f64).ln() - eps.ln());
    log_branch += 18.0;
    larger(log_branch, 6.0 * r as f64) / base + 1.0 / fourth_root(base)
}

pub fn multiview_threshold(n: usize, r1: usize, r2: usize, r: usize, eps: f64) -> f64 {
    let nf = n as f64;
    let spread = [r as i64 - r2 as i64, r as i64 - r1 as i64, (r1 + r2) as i64 - r as i64]
        .into_iter()
        .max()
        .unwrap() as f64;
    let mut log_branch = 9.0 * (nf.ln() - eps.ln());
    log_branch += 3.0 * ((3.0 * spread).ln() - eps.ln());
    log_branch += 6.0;
    let m = larger(larger(log_branch, 2.0 * r1 as f64), 2.0 * r2 as f64);
    m / nf + 1.0 / fourth_root(nf)
}

pub fn tucker_threshold(dims: &[usize], split: usize, ranks: &[usize], eps: f64) -> f64 {
    let nj = dims[..split].iter().fold(1.0, |a, &n| a * n as f64);
    let sum_sq = ranks.iter().fold(0.0, |a, &m| a + (m * m) as f64);
    let prod = ranks.iter().fold(1.0, |a, &m| a * m as f64);
    let first = 2.0 * sum_sq / eps;
    let second = (2.0 * prod - 2.0 * sum_sq) / eps;
    let mut inner = 6.0 * nj.ln();
    inner += 2.0 * larger(first, second).ln();
    inner += 4.0;
    inner / nj + 1.0 / fourth_root(nj)
}

pub fn tt_threshold(n: usize, d: usize, u: &[usize], eps: f64) -> f64 {
    let nf = n as f64;
    let at = |k: usize| if k == 0 { 1.0 } else { u[k - 1] as f64 };
    let mut m = 0.0;
    let mut sq = 0.0;
    for k in 1..=d - 2 {
        m += at(k - 1) * at(k);
        sq += at(k) * at(k);
    }
    let big_m = nf * m - sq;
    let base = pow_int(nf, d - 2);
    let mut log_branch = 27.0 * (nf.ln() - eps.ln());
    log_branch += 9.0 * ((2.0 * big_m).ln() - eps.ln());
    log_branch += 18.0;
    larger(log_branch, 6.0 * at(d - 2)) / base + 1.0 / fourth_root(base)
}

/// Infimum of the epsilons in (0,1) at which `p` beats the single-view
/// threshold, by bisection on ln(eps).
pub fn bisect_min_epsilon(n1: usize, p: f64, r: usize) -> Option<f64> {
    let passes = |log_eps: f64| p > single_threshold(n1, r, log_eps.exp());
    let mut hi = (1.0f64 - 1e-15).ln();
    if !passes(hi) {
        return None;
    }
    let mut lo = f64::MIN_POSITIVE.ln();
    if passes(lo) {
        return Some(0.0);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if passes(mid) { hi = mid } else { lo = mid }
    }
    Some(hi.exp())
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs())
}

// ---------------------------------------------------------------------------
// Condition B by exhaustive subset dynamic programming
// ---------------------------------------------------------------------------

fn decode(mut l: usize, dims: &[usize]) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    for (slot, &n) in out.iter_mut().zip(dims).rev() {
        *slot = l % n;
        l /= n;
    }
    out
}

fn oracle_k(rank: &RankSpec, slice: &[usize]) -> i64 {
    match rank {
        RankSpec::Single(r) => {
            let r = *r as i64;
            slice[0] as i64 * r - r * r
        }
        RankSpec::MultiView { r1, r2, r } => {
            let (r1, r2, r, n) = (*r1 as i64, *r2 as i64, *r as i64, slice[0] as i64);
            n * r - r * r - r1 * r1 - r2 * r2 + r * (r1 + r2)
        }
        RankSpec::Cp(r) => {
            let r = *r as i64;
            let d = slice.len() as i64 + 1;
            r * slice.iter().sum::<usize>() as i64 - r * r - r * (d - 2)
        }
        RankSpec::Tucker { ranks, .. } => {
            let nj: i64 = slice.iter().product::<usize>() as i64;
            let pm: i64 = ranks.iter().product::<usize>() as i64;
            nj * pm - ranks.iter().map(|&m| (m * m) as i64).sum::<i64>()
        }
        RankSpec::Tt(u) => {
            let mut k = 0;
            for i in 0..slice.len() {
                let prev = if i == 0 { 1 } else { u[i - 1] as i64 };
                let ui = u[i] as i64;
                k += prev * slice[i] as i64 * ui - ui * ui;
            }
            k
        }
    }
}

fn g(x: i64, ranks: &[usize]) -> i64 {
    let mut desc: Vec<i64> = ranks.iter().map(|&m| m as i64).collect();
    desc.sort_by(|a, b| b.cmp(a));
    let mut before = 0;
    let mut total = 0;
    for m in desc {
        let take = (x - before).clamp(0, m);
        total += take * m;
        before += m;
    }
    total
}

fn oracle_lhs(c: &ConstraintStructure, subset: &[usize]) -> i64 {
    let cols = c.columns();
    let slice = c.slice_dims();
    let union = |pick: &dyn Fn(usize) -> bool| -> usize {
        subset
            .iter()
            .filter(|&&k| pick(k))
            .flat_map(|&k| cols[k].iter().copied())
            .collect::<BTreeSet<_>>()
            .len()
    };
    let per_mode = || -> Vec<i64> {
        (0..slice.len())
            .map(|i| {
                subset
                    .iter()
                    .flat_map(|&k| cols[k].iter().map(|&l| decode(l, slice)[i]))
                    .collect::<BTreeSet<_>>()
                    .len() as i64
            })
            .collect()
    };
    let plus = |x: i64| if x > 0 { x } else { 0 };
    match c.rank() {
        RankSpec::Single(r) => {
            let r = *r as i64;
            r * union(&|_| true) as i64 - r * r
        }
        RankSpec::MultiView { r1, r2, r } => {
            let views = c.views().expect("multi-view columns carry views");
            let f1 = union(&|k| views[k] == View::First) as i64;
            let f2 = union(&|k| views[k] == View::Second) as i64;
            let f12 = union(&|_| true) as i64;
            let (r1, r2, r) = (*r1 as i64, *r2 as i64, *r as i64);
            let s = r1 + r2 - r;
            (r - r2) * plus(f1 - r1) + (r - r1) * plus(f2 - r2) + s * plus(f12 - s)
        }
        RankSpec::Cp(r) => {
            let f = per_mode();
            let r = *r as i64;
            let d = slice.len() as i64 + 1;
            let mx = *f.iter().max().unwrap();
            r * (f.iter().sum::<i64>() - mx.min(r) - (d - 2))
        }
        RankSpec::Tucker { ranks, .. } => {
            let f = union(&|_| true) as i64;
            ranks.iter().product::<usize>() as i64 * f - g(f, ranks)
        }
        RankSpec::Tt(u) => {
            let f = per_mode();
            let mut total = 0;
            for i in 0..f.len() {
                let prev = if i == 0 { 1 } else { u[i - 1] as i64 };
                let ui = u[i] as i64;
                total += plus(prev * f[i] * ui - ui * ui);
            }
            total
        }
    }
}

/// Largest column count the subset oracle accepts.
pub const ORACLE_MAX_COLUMNS: usize = 22;

/// Condition B decided over all 2^n column subsets: a subset is good when
/// it satisfies its own inequality and every subset one column smaller is
/// good; B holds when a good subset of size K exists.
pub fn oracle_b(c: &ConstraintStructure) -> Option<bool> {
    let n = c.columns().len();
    if n > ORACLE_MAX_COLUMNS {
        return None;
    }
    let k = oracle_k(c.rank(), c.slice_dims());
    if k <= 0 {
        return Some(true);
    }
    if k as usize > n {
        return Some(false);
    }
    let mut good = vec![false; 1 << n];
    good[0] = true;
    let mut members = Vec::with_capacity(n);
    for mask in 1usize..(1 << n) {
        let all_smaller = (0..n).filter(|b| mask >> b & 1 == 1).all(|b| good[mask & !(1 << b)]);
        if !all_smaller {
            continue;
        }
        members.clear();
        members.extend((0..n).filter(|b| mask >> b & 1 == 1));
        good[mask] = oracle_lhs(c, &members) >= members.len() as i64;
        if good[mask] && members.len() as i64 == k {
            return Some(true);
        }
    }
    Some(false)
}

/// Membership decided by the oracles: A by whether the builder accepts the
/// pattern, B by subset dynamic programming. `None` when the structure is too
/// large for the oracle.
pub fn oracle_member(pattern: &SamplingPattern, rank: &RankSpec) -> Option<bool> {
    match constraints::build(pattern, None, rank) {
        Ok(c) => oracle_b(&c),
        Err(Error::Precondition(_)) => Some(false),
        Err(e) => panic!("{e}"),
    }
}

// ---------------------------------------------------------------------------
// Anchor sets
// ---------------------------------------------------------------------------

/// Every tuple (S_{j+1}, ..., S_d) of index subsets: the anchors whose
/// trailing coordinates all fall in the chosen subsets number at most
/// Σ |S_i| m_i.
pub fn anchor_condition_holds(a: &AnchorSet) -> bool {
    let trailing: Vec<usize> = a.dims[a.split..].to_vec();
    let mut chosen: Vec<usize> = vec![0; trailing.len()];
    fn walk(a: &AnchorSet, trailing: &[usize], chosen: &mut Vec<usize>, mode: usize) -> bool {
        if mode == trailing.len() {
            let cap: usize = chosen.iter().zip(&a.ranks).map(|(&s, &m)| s.count_ones() as usize * m).sum();
            let inside = a
                .entries
                .iter()
                .filter(|e| e[a.split..].iter().zip(chosen.iter()).all(|(&x, &s)| s >> x & 1 == 1))
                .count();
            return inside <= cap;
        }
        for s in 0..(1usize << trailing[mode]) {
            chosen[mode] = s;
            if !walk(a, trailing, chosen, mode + 1) {
                return false;
            }
        }
        true
    }
    walk(a, &trailing, &mut chosen, 0)
}

// ---------------------------------------------------------------------------
// Ranks
// ---------------------------------------------------------------------------

/// The TT validity rule read literally, with u_0 = u_d = 1.
pub fn tt_valid(dims: &[usize], u: &[usize]) -> bool {
    let d = dims.len();
    let at = |i: usize| if i == 0 || i == d { 1 } else { u[i - 1] };
    (1..d).all(|i| at(i) >= 1 && at(i) <= (at(i - 1) * dims[i - 1]).min(at(i + 1) * dims[i]))
}

/// Valid TT rank vectors, found by filtering a generous box.
pub fn tt_grid(dims: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = dims.iter().product();
    box_grid(&vec![total; dims.len() - 1]).into_iter().filter(|u| tt_valid(dims, u)).collect()
}

/// Every vector in the box `[1, caps_1] × ... × [1, caps_k]`.
pub fn box_grid(caps: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &c in caps {
        out = out
            .into_iter()
            .flat_map(|v| {
                (1..=c).map(move |x| {
                    let mut w = v.clone();
                    w.push(x);
                    w
                })
            })
            .collect();
    }
    out
}

// ---------------------------------------------------------------------------
// Ground-truth contractions
// ---------------------------------------------------------------------------

/// The array a ground truth's factors define, summed entry by entry.
pub fn contract(g: &GroundTruth) -> Vec<f64> {
    let total: usize = g.dims.iter().product();
    (0..total)
        .map(|l| {
            let x = decode(l, &g.dims);
            match &g.factors {
                Factors::Matrix { left, right } => {
                    (0..left.ncols()).map(|k| left[(x[0], k)] * right[(k, x[1])]).sum()
                }
                Factors::Cp { factors } => (0..factors[0].ncols())
                    .map(|k| factors.iter().zip(&x).map(|(a, &xi)| a[(xi, k)]).product::<f64>())
                    .sum(),
                Factors::Tucker { core, core_dims, factors } => (0..core.len())
                    .map(|ci| {
                        let k = decode(ci, core_dims);
                        core[ci] * factors.iter().enumerate().map(|(i, t)| t[(x[i], k[i])]).product::<f64>()
                    })
                    .sum(),
                Factors::Tt { cores, ranks } => {
                    let d = g.dims.len();
                    let width = |i: usize| if i == 0 || i == d { 1 } else { ranks[i - 1] };
                    let mut v = vec![1.0];
                    for i in 0..d {
                        let (n, b) = (g.dims[i], width(i + 1));
                        v = (0..b)
                            .map(|kb| v.iter().enumerate().map(|(ka, &va)| va * cores[i][(ka * n + x[i]) * b + kb]).sum())
                            .collect();
                    }
                    v[0]
                }
            }
        })
        .collect()
}

pub fn max_rel_error(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

pub fn model_of(r: &RankSpec) -> Model {
    r.model()
}
