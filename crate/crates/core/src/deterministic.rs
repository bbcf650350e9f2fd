//! Deterministic certification: the A/B conditions, membership in S_Ω and the
//! bound a completion's rank certifies.
//!
//! Condition B asks for K columns of the constraint structure such that every
//! nonempty sub-collection W' satisfies `LHS(W') >= |W'|`, where LHS depends
//! on the model through a few "nonzero row" counts of W'. The property is
//! inherited by subsets, so the search grows valid collections one column at
//! a time and only needs to test the sub-collections containing the new
//! column.

use std::ops::ControlFlow;

use serde::Serialize;

use crate::constraints::{self, ConstraintStructure, View};
use crate::error::{arg_err, Error, Result};
use crate::patterns::SamplingPattern;
use crate::rank::{tt_rank_grid, Model, RankSpec};

/// Default cap on margin evaluations per B search.
pub const DEFAULT_BUDGET: u64 = 20_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    Fails,
    Unknown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Claim {
    UpperBoundWithProbOne,
    ExactIfMinimal,
    UpperBoundHighProb,
    NoClaim,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Certificate {
    pub model: Model,
    pub rank: RankSpec,
    pub a_holds: bool,
    pub b_holds: bool,
    #[serde(rename = "in_S")]
    pub in_s: bool,
    pub claim: Claim,
    pub witness: Option<Vec<usize>>,
    pub counterexample: Option<Vec<usize>>,
    pub search_exhausted: bool,
    pub required_k: i64,
    pub available_k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub in_s_hat: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dominating_rank: Option<RankSpec>,
    /// Tucker: the anchor set whose constraint tensor satisfied B.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anchor_set: Option<Vec<Vec<usize>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anchor_sets_tried: Option<usize>,
}

impl Certificate {
    /// Whether some verdict in the certificate is undecided.
    pub fn is_unknown(&self) -> bool {
        self.search_exhausted
    }
}

/// g_r(x) = Σ_i min{m_i, (x − Σ_{i'<i} m_{i'})^+}·m_i with the ranks taken
/// in descending order.
pub fn g_r(x: usize, ranks: &[usize]) -> i64 {
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let mut used = 0i64;
    let mut total = 0i64;
    for &m in &sorted {
        let m = m as i64;
        total += m.min((x as i64 - used).max(0)) * m;
        used += m;
    }
    total
}

/// The number of columns condition B asks for.
pub fn required_k(rank: &RankSpec, slice_dims: &[usize]) -> i64 {
    let sq = |x: usize| (x * x) as i64;
    match rank {
        RankSpec::Single(r) => (slice_dims[0] * r) as i64 - sq(*r),
        RankSpec::MultiView { r1, r2, r } => {
            let n = slice_dims[0];
            (n * r) as i64 - sq(*r) - sq(*r1) - sq(*r2) + (r * (r1 + r2)) as i64
        }
        RankSpec::Cp(r) => {
            let d = slice_dims.len() + 1;
            let s: usize = slice_dims.iter().sum();
            (r * s) as i64 - sq(*r) - (r * (d - 2)) as i64
        }
        RankSpec::Tucker { ranks, .. } => {
            let nj: usize = slice_dims.iter().product();
            let pm: usize = ranks.iter().product();
            (nj * pm) as i64 - ranks.iter().map(|&m| sq(m)).sum::<i64>()
        }
        RankSpec::Tt(u) => {
            let mut k = 0i64;
            let mut prev = 1usize;
            for (&n, &ui) in slice_dims.iter().zip(u) {
                k += (prev * n * ui) as i64 - sq(ui);
                prev = ui;
            }
            k
        }
    }
}

/// Model inequality left-hand side from the nonzero-row counts.
///
/// `f` holds: `[f]` (single view, Tucker), `[f1, f2, f12]` (multi-view),
/// `[f_1, ..., f_{d-1}]` (CP, TT).
pub fn inequality_lhs(rank: &RankSpec, f: &[usize]) -> i64 {
    let pos = |x: i64| x.max(0);
    match rank {
        RankSpec::Single(r) => {
            let r = *r as i64;
            r * f[0] as i64 - r * r
        }
        RankSpec::MultiView { r1, r2, r } => {
            let (r1, r2, r) = (*r1 as i64, *r2 as i64, *r as i64);
            let shared = r1 + r2 - r;
            (r - r2) * pos(f[0] as i64 - r1)
                + (r - r1) * pos(f[1] as i64 - r2)
                + shared * pos(f[2] as i64 - shared)
        }
        RankSpec::Cp(r) => {
            let r = *r as i64;
            let d = f.len() as i64 + 1;
            let sum: i64 = f.iter().map(|&x| x as i64).sum();
            let max = f.iter().copied().max().unwrap_or(0) as i64;
            r * (sum - max.min(r) - (d - 2))
        }
        RankSpec::Tucker { ranks, .. } => {
            let pm: usize = ranks.iter().product();
            (pm * f[0]) as i64 - g_r(f[0], ranks)
        }
        RankSpec::Tt(u) => {
            let mut prev = 1i64;
            let mut total = 0i64;
            for (&fi, &ui) in f.iter().zip(u) {
                let ui = ui as i64;
                total += pos(prev * fi as i64 * ui - ui * ui);
                prev = ui;
            }
            total
        }
    }
}

/// Nonzero-row counts of a column subset, computed directly from positions.
fn row_counts(c: &ConstraintStructure, subset: &[usize]) -> Vec<usize> {
    use std::collections::BTreeSet;
    let dims = c.slice_dims();
    let maps = crate::patterns::IndexMaps::new(dims);
    match c.model() {
        Model::SingleView | Model::Tucker => {
            let rows: BTreeSet<usize> = subset.iter().flat_map(|&k| c.columns()[k].iter().copied()).collect();
            vec![rows.len()]
        }
        Model::MultiView => {
            let views = c.views().unwrap();
            let mut by_view = [BTreeSet::new(), BTreeSet::new()];
            for &k in subset {
                let v = usize::from(views[k] == View::Second);
                by_view[v].extend(c.columns()[k].iter().copied());
            }
            let both = by_view[0].union(&by_view[1]).count();
            vec![by_view[0].len(), by_view[1].len(), both]
        }
        Model::Cp | Model::Tt => (0..dims.len())
            .map(|i| {
                subset
                    .iter()
                    .flat_map(|&k| c.columns()[k].iter().map(|&l| maps.coord(l)[i]))
                    .collect::<BTreeSet<usize>>()
                    .len()
            })
            .collect(),
    }
}

/// `LHS(subset) − |subset|` for the model of `c`; nonnegative means the
/// subset satisfies its counting inequality.
pub fn sparsity_margin(c: &ConstraintStructure, subset: &[usize]) -> Result<i64> {
    if subset.is_empty() {
        return arg_err("sparsity margin of an empty column subset");
    }
    if let Some(&k) = subset.iter().find(|&&k| k >= c.len()) {
        return arg_err(format!("column {k} out of range ({} columns)", c.len()));
    }
    let mut s = subset.to_vec();
    s.sort_unstable();
    s.dedup();
    Ok(inequality_lhs(c.rank(), &row_counts(c, &s)) - s.len() as i64)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BOutcome {
    pub verdict: Verdict,
    pub required_k: i64,
    /// Column indices, sorted.
    pub witness: Option<Vec<usize>>,
    pub counterexample: Option<Vec<usize>>,
    pub evaluations: u64,
}

/// Bitset encoding of the row counts: each column becomes a few words per
/// count group, and the counts of a union are popcounts of the OR.
struct Encoding {
    rank: RankSpec,
    /// (first word, word count) per group.
    groups: Vec<(usize, usize)>,
    words: usize,
    sigs: Vec<u64>,
    multiview: bool,
}

impl Encoding {
    fn new(c: &ConstraintStructure) -> Self {
        let dims = c.slice_dims();
        let sizes: Vec<usize> = match c.model() {
            Model::SingleView => vec![dims[0]],
            Model::MultiView => vec![dims[0], dims[0]],
            Model::Tucker => vec![c.slice_len()],
            Model::Cp | Model::Tt => dims.to_vec(),
        };
        let mut groups = Vec::new();
        let mut words = 0;
        for s in sizes {
            let w = s.div_ceil(64);
            groups.push((words, w));
            words += w;
        }
        let maps = crate::patterns::IndexMaps::new(dims);
        let mut sigs = vec![0u64; words * c.len()];
        let set = |sig: &mut [u64], bit: usize| sig[bit / 64] |= 1 << (bit % 64);
        for (k, col) in c.columns().iter().enumerate() {
            let sig = &mut sigs[k * words..(k + 1) * words];
            match c.model() {
                Model::SingleView | Model::Tucker => col.iter().for_each(|&l| set(sig, l)),
                Model::MultiView => {
                    let g = groups[usize::from(c.views().unwrap()[k] == View::Second)].0;
                    col.iter().for_each(|&l| set(&mut sig[g..], l));
                }
                Model::Cp | Model::Tt => {
                    for &l in col {
                        for (i, x) in maps.coord(l).into_iter().enumerate() {
                            set(&mut sig[groups[i].0..], x);
                        }
                    }
                }
            }
        }
        Encoding {
            rank: c.rank().clone(),
            groups,
            words,
            sigs,
            multiview: c.model() == Model::MultiView,
        }
    }

    fn sig(&self, k: usize) -> &[u64] {
        &self.sigs[k * self.words..(k + 1) * self.words]
    }

    fn lhs(&self, union: &[u64]) -> i64 {
        let count = |g: (usize, usize)| -> usize {
            union[g.0..g.0 + g.1].iter().map(|w| w.count_ones() as usize).sum()
        };
        if self.multiview {
            let (a, b) = (self.groups[0], self.groups[1]);
            let both = (0..a.1)
                .map(|w| (union[a.0 + w] | union[b.0 + w]).count_ones() as usize)
                .sum();
            inequality_lhs(&self.rank, &[count(a), count(b), both])
        } else {
            let f: Vec<usize> = self.groups.iter().map(|&g| count(g)).collect();
            inequality_lhs(&self.rank, &f)
        }
    }
}

enum Step {
    /// Smallest margin over the new sub-collections (all nonnegative).
    Fits(i64),
    /// A sub-collection (as a mask over the current set) violates.
    Violates(u64),
    OutOfBudget,
}

struct Search<'a> {
    enc: &'a Encoding,
    k: usize,
    budget: u64,
    evaluations: u64,
    chosen: Vec<usize>,
    /// Unions of every subset of `chosen`, indexed by subset mask.
    unions: Vec<u64>,
    scratch: Vec<u64>,
    counterexample: Option<Vec<usize>>,
}

impl<'a> Search<'a> {
    fn new(enc: &'a Encoding, k: usize, budget: u64) -> Self {
        Search {
            enc,
            k,
            budget,
            evaluations: 0,
            chosen: Vec::new(),
            unions: vec![0; enc.words],
            scratch: vec![0; enc.words],
            counterexample: None,
        }
    }

    /// Tests adding column `c` to the current set.
    fn try_add(&mut self, c: usize) -> Step {
        let w = self.enc.words;
        let subsets = 1usize << self.chosen.len();
        let sig = self.enc.sig(c);
        let mut worst = i64::MAX;
        for mask in 0..subsets {
            if self.evaluations >= self.budget {
                return Step::OutOfBudget;
            }
            self.evaluations += 1;
            for (s, (u, x)) in self.scratch.iter_mut().zip(self.unions[mask * w..(mask + 1) * w].iter().zip(sig)) {
                *s = u | x;
            }
            let margin = self.enc.lhs(&self.scratch) - (mask.count_ones() as i64 + 1);
            if margin < 0 {
                return Step::Violates(mask as u64);
            }
            worst = worst.min(margin);
        }
        Step::Fits(worst)
    }

    fn record_violation(&mut self, mask: u64, c: usize) {
        if self.counterexample.is_none() {
            let mut v: Vec<usize> = self
                .chosen
                .iter()
                .enumerate()
                .filter(|(b, _)| mask >> b & 1 == 1)
                .map(|(_, &k)| k)
                .collect();
            v.push(c);
            v.sort_unstable();
            self.counterexample = Some(v);
        }
    }

    fn push(&mut self, c: usize) {
        let w = self.enc.words;
        let len = self.unions.len();
        self.unions.reserve(len);
        for i in 0..len {
            let x = self.unions[i] | self.enc.sigs[c * w + i % w];
            self.unions.push(x);
        }
        self.chosen.push(c);
    }

    fn pop(&mut self) {
        self.chosen.pop();
        let len = self.unions.len() / 2;
        self.unions.truncate(len);
    }

    fn reset(&mut self) {
        self.chosen.clear();
        self.unions.truncate(self.enc.words);
    }

    /// Adds the column with the largest worst-case margin until K columns
    /// are chosen or nothing fits. `Some(true)` on success.
    fn greedy(&mut self, columns: usize) -> Option<bool> {
        let mut used = vec![false; columns];
        while self.chosen.len() < self.k {
            let mut best: Option<(i64, usize)> = None;
            for c in 0..columns {
                if used[c] {
                    continue;
                }
                match self.try_add(c) {
                    Step::OutOfBudget => return None,
                    Step::Violates(mask) => self.record_violation(mask, c),
                    Step::Fits(m) => {
                        if best.is_none_or(|(b, _)| m > b) {
                            best = Some((m, c));
                        }
                    }
                }
            }
            match best {
                Some((_, c)) => {
                    used[c] = true;
                    self.push(c);
                }
                None => return Some(false),
            }
        }
        Some(true)
    }

    /// Exact search over extensions of the current set drawn from `cands`
    /// (in lexicographic order). `Some(true)` when `chosen` reaches K.
    fn extend(&mut self, cands: &[usize]) -> Option<bool> {
        if self.chosen.len() == self.k {
            return Some(true);
        }
        let mut fits = Vec::with_capacity(cands.len());
        for &c in cands {
            match self.try_add(c) {
                Step::OutOfBudget => return None,
                Step::Violates(mask) => self.record_violation(mask, c),
                Step::Fits(_) => fits.push(c),
            }
        }
        let need = self.k - self.chosen.len();
        if fits.len() < need || !self.reachable(&fits) {
            return Some(false);
        }
        let w = self.enc.words;
        let mut tried: Vec<&[u64]> = Vec::new();
        for (at, &c) in fits.iter().enumerate() {
            if fits.len() - at < need {
                break;
            }
            let sig = &self.enc.sigs[c * w..(c + 1) * w];
            if tried.contains(&sig) {
                continue;
            }
            self.push(c);
            let found = self.extend(&fits[at + 1..]);
            if found != Some(false) {
                return found;
            }
            self.pop();
            tried.push(sig);
        }
        Some(false)
    }

    /// A valid K-set inside `chosen ∪ cands` has K ≤ LHS of its union, and
    /// LHS grows with the union.
    fn reachable(&mut self, cands: &[usize]) -> bool {
        let w = self.enc.words;
        let full = (1usize << self.chosen.len()) - 1;
        let mut u = self.unions[full * w..(full + 1) * w].to_vec();
        for &c in cands {
            for (x, s) in u.iter_mut().zip(self.enc.sig(c)) {
                *x |= s;
            }
        }
        self.enc.lhs(&u) >= self.k as i64
    }
}

/// Decides condition B for a built constraint structure.
///
/// A greedy pass runs first; if it reaches K columns its choice is the
/// witness. Otherwise an exact depth-first search in lexicographic column
/// order either finds the lexicographically least valid K-set, proves none
/// exists, or runs out of `budget` margin evaluations (verdict Unknown).
pub fn check_assumption_b(c: &ConstraintStructure, budget: u64) -> BOutcome {
    let k = required_k(c.rank(), c.slice_dims());
    let mut out = BOutcome {
        verdict: Verdict::Fails,
        required_k: k,
        witness: None,
        counterexample: None,
        evaluations: 0,
    };
    if k <= 0 {
        out.verdict = Verdict::Holds;
        out.witness = Some(Vec::new());
        return out;
    }
    let k = k as usize;
    if c.len() < k {
        return out;
    }
    let enc = Encoding::new(c);
    let mut search = Search::new(&enc, k, budget);
    let mut result = search.greedy(c.len());
    if result == Some(false) {
        search.reset();
        let all: Vec<usize> = (0..c.len()).collect();
        result = search.extend(&all);
    }
    out.evaluations = search.evaluations;
    out.counterexample = search.counterexample.take();
    match result {
        Some(true) => {
            let mut w = search.chosen.clone();
            w.sort_unstable();
            out.verdict = Verdict::Holds;
            out.witness = Some(w);
            out.counterexample = None;
        }
        Some(false) => out.verdict = Verdict::Fails,
        None => out.verdict = Verdict::Unknown,
    }
    out
}

/// Ground truth for condition B by plain enumeration of every K-subset and
/// every nonempty sub-subset, with counts recomputed from positions.
pub fn brute_force_b_oracle(c: &ConstraintStructure) -> Result<bool> {
    if c.len() > 20 {
        return Err(Error::Refused(format!(
            "brute force over {} columns (limit 20)",
            c.len()
        )));
    }
    let k = required_k(c.rank(), c.slice_dims());
    if k <= 0 {
        return Ok(true);
    }
    let k = k as u32;
    let n = c.len();
    for set in 0u32..(1u32 << n) {
        if set.count_ones() != k {
            continue;
        }
        let members: Vec<usize> = (0..n).filter(|&b| set >> b & 1 == 1).collect();
        let mut ok = true;
        for sub in 1u32..(1u32 << k) {
            let subset: Vec<usize> = (0..k as usize)
                .filter(|&b| sub >> b & 1 == 1)
                .map(|b| members[b])
                .collect();
            if sparsity_margin(c, &subset)? < 0 {
                ok = false;
                break;
            }
        }
        if ok {
            return Ok(true);
        }
    }
    Ok(false)
}

fn a_holds_last_mode(pattern: &SamplingPattern, base: usize) -> bool {
    pattern.last_mode_counts().iter().all(|&l| l >= base)
}

/// Condition A for single-pattern models. Tucker reports whether an anchor
/// set exists.
pub fn check_assumption_a(pattern: &SamplingPattern, rank: &RankSpec) -> Result<bool> {
    rank_checked(pattern, rank)?;
    Ok(match rank {
        RankSpec::Single(r) | RankSpec::Cp(r) => a_holds_last_mode(pattern, *r),
        RankSpec::Tt(u) => a_holds_last_mode(pattern, *u.last().unwrap()),
        RankSpec::Tucker { split, ranks } => constraints::select_tucker_anchor_set(pattern, *split, ranks)?.is_some(),
        RankSpec::MultiView { .. } => unreachable!(),
    })
}

pub fn check_assumption_a_multiview(first: &SamplingPattern, second: &SamplingPattern, r1: usize, r2: usize) -> bool {
    a_holds_last_mode(first, r1) && a_holds_last_mode(second, r2)
}

fn rank_checked(pattern: &SamplingPattern, rank: &RankSpec) -> Result<()> {
    if rank.model() == Model::MultiView {
        return arg_err("multi-view ranks need two views; use the multi-view entry points");
    }
    rank.validate(pattern.dims())
}

pub(crate) fn blank_certificate(rank: RankSpec, required_k: i64, a_holds: bool) -> Certificate {
    Certificate {
        model: rank.model(),
        rank,
        a_holds,
        b_holds: false,
        in_s: false,
        claim: Claim::NoClaim,
        witness: None,
        counterexample: None,
        search_exhausted: false,
        required_k,
        available_k: 0,
        in_s_hat: None,
        dominating_rank: None,
        anchor_set: None,
        anchor_sets_tried: None,
    }
}

fn record_b(cert: &mut Certificate, available: usize, b: BOutcome) {
    cert.available_k = available;
    cert.required_k = b.required_k;
    cert.b_holds = b.verdict == Verdict::Holds;
    cert.search_exhausted = b.verdict == Verdict::Unknown;
    cert.in_s = cert.a_holds && cert.b_holds;
    cert.witness = b.witness;
    cert.counterexample = b.counterexample;
}

fn certificate_from(rank: RankSpec, required_k: i64, built: Option<&ConstraintStructure>, budget: u64) -> Certificate {
    let mut cert = blank_certificate(rank, required_k, built.is_some());
    if let Some(c) = built {
        record_b(&mut cert, c.len(), check_assumption_b(c, budget));
    }
    cert
}

/// Tucker membership asks for some anchor set whose constraint tensor
/// satisfies B, so anchor sets are tried in order until one does. The budget
/// is shared by all B searches; each anchor set also costs one unit.
fn tucker_membership(pattern: &SamplingPattern, split: usize, ranks: &[usize], required_k: i64, budget: u64) -> Result<Certificate> {
    let rank = RankSpec::Tucker { split, ranks: ranks.to_vec() };
    let mut cert = blank_certificate(rank, required_k, false);
    let mut spent = 0u64;
    let mut tried = 0usize;
    let mut first_failure: Option<(usize, BOutcome)> = None;
    let mut decided: Option<(usize, BOutcome, Vec<Vec<usize>>)> = None;
    let mut failure = None;
    constraints::for_each_anchor_set(pattern, split, ranks, |anchors| {
        tried += 1;
        let c = match constraints::build_constraint_tensor_tucker(pattern, anchors) {
            Ok(c) => c,
            Err(e) => {
                failure = Some(e);
                return ControlFlow::Break(());
            }
        };
        let b = check_assumption_b(&c, budget.saturating_sub(spent));
        spent += b.evaluations + 1;
        match b.verdict {
            Verdict::Fails if spent < budget => {
                first_failure.get_or_insert((c.len(), b));
                ControlFlow::Continue(())
            }
            Verdict::Fails => {
                let mut b = b;
                b.verdict = Verdict::Unknown;
                decided = Some((c.len(), b, anchors.entries.clone()));
                ControlFlow::Break(())
            }
            _ => {
                decided = Some((c.len(), b, anchors.entries.clone()));
                ControlFlow::Break(())
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    cert.anchor_sets_tried = Some(tried);
    cert.a_holds = tried > 0;
    if let Some((len, b, anchors)) = decided {
        if b.verdict == Verdict::Holds {
            cert.anchor_set = Some(anchors);
        }
        record_b(&mut cert, len, b);
    } else if let Some((len, b)) = first_failure {
        record_b(&mut cert, len, b);
    }
    Ok(cert)
}

fn slice_dims_for(pattern: &SamplingPattern, rank: &RankSpec) -> Vec<usize> {
    let dims = pattern.dims();
    match rank {
        RankSpec::Tucker { split, .. } => dims[..*split].to_vec(),
        _ => dims[..dims.len() - 1].to_vec(),
    }
}

fn membership(pattern: &SamplingPattern, rank: &RankSpec, budget: u64) -> Result<Certificate> {
    rank_checked(pattern, rank)?;
    let k = required_k(rank, &slice_dims_for(pattern, rank));
    if let RankSpec::Tucker { split, ranks } = rank {
        return tucker_membership(pattern, *split, ranks, k, budget);
    }
    let built = match constraints::build(pattern, None, rank) {
        Ok(c) => Some(c),
        Err(Error::Precondition(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(certificate_from(rank.clone(), k, built.as_ref(), budget))
}

/// Membership of `rank` in S_Ω. TT certificates also report Ŝ_Ω membership.
pub fn in_s_omega(pattern: &SamplingPattern, rank: &RankSpec, budget: u64) -> Result<Certificate> {
    let mut cert = membership(pattern, rank, budget)?;
    if let RankSpec::Tt(u) = rank {
        let hat = tt_hat_from(pattern, u, &cert, budget)?;
        cert.in_s_hat = Some(hat.verdict == Verdict::Holds);
        cert.dominating_rank = hat.dominating.map(RankSpec::Tt);
        cert.search_exhausted |= hat.verdict == Verdict::Unknown;
    }
    Ok(cert)
}

/// Tucker membership relative to a caller-chosen anchor set.
pub fn in_s_omega_with_anchors(pattern: &SamplingPattern, anchors: &constraints::AnchorSet, budget: u64) -> Result<Certificate> {
    let c = constraints::build_constraint_tensor_tucker(pattern, anchors)?;
    let k = required_k(c.rank(), c.slice_dims());
    let mut cert = certificate_from(c.rank().clone(), k, Some(&c), budget);
    if cert.b_holds {
        cert.anchor_set = Some(anchors.entries.clone());
    }
    Ok(cert)
}

pub fn in_s_omega_multiview(first: &SamplingPattern, second: &SamplingPattern, r1: usize, r2: usize, r: usize, budget: u64) -> Result<Certificate> {
    let rank = RankSpec::MultiView { r1, r2, r };
    let k = required_k(&rank, &first.dims()[..1]);
    let built = match constraints::build_constraint_matrix_multiview(first, second, r1, r2, r) {
        Ok(c) => Some(c),
        Err(Error::Precondition(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(certificate_from(rank, k, built.as_ref(), budget))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RankScan {
    pub r_omega: usize,
    pub search_exhausted: bool,
}

/// r_Ω by an ascending scan that stops at the first rank outside S_Ω. With
/// an undecided rank the scan stops there and reports the lower bound.
pub fn max_scalar_rank(pattern: &SamplingPattern, model: Model, budget: u64) -> Result<RankScan> {
    let dims = pattern.dims();
    let (cap, make): (usize, fn(usize) -> RankSpec) = match model {
        Model::SingleView => {
            if dims.len() != 2 {
                return arg_err("single-view scans need a matrix pattern");
            }
            (dims[0].min(dims[1]), RankSpec::Single)
        }
        Model::Cp => {
            if dims.len() < 3 {
                return arg_err("CP scans need a tensor of order at least 3");
            }
            (*dims.iter().min().unwrap(), RankSpec::Cp)
        }
        _ => return arg_err(format!("{model} ranks are not scalar")),
    };
    let mut r_omega = 0;
    for r in 1..=cap {
        let cert = membership(pattern, &make(r), budget)?;
        if cert.search_exhausted {
            return Ok(RankScan { r_omega, search_exhausted: true });
        }
        if !cert.in_s {
            break;
        }
        r_omega = r;
    }
    Ok(RankScan { r_omega, search_exhausted: false })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HatOutcome {
    pub verdict: Verdict,
    pub dominating: Option<Vec<usize>>,
}

fn tt_hat_from(pattern: &SamplingPattern, u: &[usize], own: &Certificate, budget: u64) -> Result<HatOutcome> {
    if own.search_exhausted {
        return Ok(HatOutcome { verdict: Verdict::Unknown, dominating: None });
    }
    if !own.in_s {
        return Ok(HatOutcome { verdict: Verdict::Fails, dominating: None });
    }
    let last = u.len() - 1;
    let mut undecided = false;
    for cand in tt_rank_grid(pattern.dims()) {
        let dominates = cand.iter().zip(u).all(|(a, b)| a >= b) && cand[last] > u[last];
        if !dominates {
            continue;
        }
        let cert = membership(pattern, &RankSpec::Tt(cand.clone()), budget)?;
        if cert.in_s {
            return Ok(HatOutcome { verdict: Verdict::Holds, dominating: Some(cand) });
        }
        undecided |= cert.search_exhausted;
    }
    Ok(HatOutcome {
        verdict: if undecided { Verdict::Unknown } else { Verdict::Fails },
        dominating: None,
    })
}

/// Membership in Ŝ_Ω: `u` is in S_Ω and some valid TT rank `u' ⪰ u` with a
/// strictly larger last component is in S_Ω as well.
pub fn tt_hat_membership(pattern: &SamplingPattern, u: &[usize], budget: u64) -> Result<HatOutcome> {
    let rank = RankSpec::Tt(u.to_vec());
    let own = membership(pattern, &rank, budget)?;
    tt_hat_from(pattern, u, &own, budget)
}

fn claim_for(cert: &mut Certificate, minimal: bool) {
    let member = match cert.model {
        Model::Tt => cert.in_s_hat == Some(true),
        _ => cert.in_s,
    };
    cert.claim = if !member {
        Claim::NoClaim
    } else if minimal && matches!(cert.model, Model::SingleView | Model::Cp) {
        Claim::ExactIfMinimal
    } else {
        Claim::UpperBoundWithProbOne
    };
}

/// The bound certified by a completion of rank `completion_rank`. Set
/// `minimal` when the completion is known to have the least possible rank.
pub fn certify_bound(pattern: &SamplingPattern, completion_rank: &RankSpec, minimal: bool, budget: u64) -> Result<Certificate> {
    let mut cert = in_s_omega(pattern, completion_rank, budget)?;
    claim_for(&mut cert, minimal);
    Ok(cert)
}

pub fn certify_bound_multiview(first: &SamplingPattern, second: &SamplingPattern, r1: usize, r2: usize, r: usize, budget: u64) -> Result<Certificate> {
    let mut cert = in_s_omega_multiview(first, second, r1, r2, r, budget)?;
    claim_for(&mut cert, false);
    Ok(cert)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::build_constraint_matrix;
    use crate::patterns::per_column_pattern;

    #[test]
    fn g_r_values() {
        assert_eq!(g_r(0, &[2, 2]), 0);
        assert_eq!(g_r(3, &[2, 2]), 6);
        assert_eq!(g_r(10, &[3, 1, 2]), 14);
        assert_eq!(g_r(4, &[1, 3]), 10);
    }

    #[test]
    fn margin_examples() {
        let p = SamplingPattern::full(&[2, 2]).unwrap();
        let c = build_constraint_matrix(&p, 1).unwrap();
        assert_eq!(sparsity_margin(&c, &[0]).unwrap(), 0);
        assert!(sparsity_margin(&c, &[]).is_err());
        let mv = RankSpec::MultiView { r1: 1, r2: 1, r: 1 };
        for f12 in 0..5 {
            assert_eq!(inequality_lhs(&mv, &[3, 3, f12]), (f12 as i64 - 1).max(0));
        }
        let t = RankSpec::Tucker { split: 1, ranks: vec![2, 1] };
        assert_eq!(inequality_lhs(&t, &[0]), 0);
    }

    #[test]
    fn b_small_matrices() {
        let p = SamplingPattern::full(&[2, 2]).unwrap();
        let b = check_assumption_b(&build_constraint_matrix(&p, 1).unwrap(), DEFAULT_BUDGET);
        assert_eq!(b.verdict, Verdict::Holds);
        assert_eq!(b.witness.unwrap().len(), 1);
        let p = SamplingPattern::full(&[3, 3]).unwrap();
        for r in 1..=2 {
            let c = build_constraint_matrix(&p, r).unwrap();
            let b = check_assumption_b(&c, DEFAULT_BUDGET);
            assert_eq!(b.verdict, Verdict::Holds);
            assert!(brute_force_b_oracle(&c).unwrap());
        }
    }

    #[test]
    fn vacuous_when_k_nonpositive() {
        let p = SamplingPattern::full(&[3, 3]).unwrap();
        let c = build_constraint_matrix(&p, 3).unwrap();
        assert_eq!(required_k(c.rank(), c.slice_dims()), 0);
        assert_eq!(check_assumption_b(&c, 1).verdict, Verdict::Holds);
        assert!(brute_force_b_oracle(&c).unwrap());
    }

    #[test]
    fn single_column_oracle_case() {
        // one column with r+1 ones on r+1 rows: r(r+1) − r² = r ≥ 1 = K
        let p = SamplingPattern::new(&[2, 1], [[0, 0], [1, 0]]).unwrap();
        let c = build_constraint_matrix(&p, 1).unwrap();
        assert_eq!(required_k(c.rank(), c.slice_dims()), 1);
        assert!(brute_force_b_oracle(&c).unwrap());
    }

    #[test]
    fn assumption_a() {
        let e = SamplingPattern::empty(&[3, 3]).unwrap();
        assert!(!check_assumption_a(&e, &RankSpec::Single(1)).unwrap());
        let f = SamplingPattern::full(&[3, 4]).unwrap();
        assert!(check_assumption_a(&f, &RankSpec::Single(3)).unwrap());
        let p = per_column_pattern(&[5, 4], 2, 3).unwrap();
        assert!(!check_assumption_a(&p, &RankSpec::Single(3)).unwrap());
    }

    #[test]
    fn membership_examples() {
        let f = SamplingPattern::full(&[3, 3]).unwrap();
        assert!(in_s_omega(&f, &RankSpec::Single(2), DEFAULT_BUDGET).unwrap().in_s);
        let e = SamplingPattern::empty(&[3, 3]).unwrap();
        let cert = in_s_omega(&e, &RankSpec::Single(1), DEFAULT_BUDGET).unwrap();
        assert!(!cert.a_holds && !cert.in_s);
        let p = per_column_pattern(&[5, 4], 2, 1).unwrap();
        let cert = in_s_omega(&p, &RankSpec::Single(2), DEFAULT_BUDGET).unwrap();
        assert!(cert.a_holds && !cert.b_holds && !cert.in_s);
        assert_eq!(cert.available_k, 0);
    }

    #[test]
    fn scalar_scans() {
        let f = SamplingPattern::full(&[3, 3]).unwrap();
        assert_eq!(max_scalar_rank(&f, Model::SingleView, DEFAULT_BUDGET).unwrap().r_omega, 3);
        let e = SamplingPattern::empty(&[3, 3]).unwrap();
        assert_eq!(max_scalar_rank(&e, Model::SingleView, DEFAULT_BUDGET).unwrap().r_omega, 0);
        let p = per_column_pattern(&[5, 20], 5, 4).unwrap();
        assert_eq!(max_scalar_rank(&p, Model::SingleView, DEFAULT_BUDGET).unwrap().r_omega, 5);
    }

    #[test]
    fn tiny_budget_is_unknown() {
        let p = SamplingPattern::full(&[5, 5]).unwrap();
        let c = build_constraint_matrix(&p, 2).unwrap();
        let b = check_assumption_b(&c, 3);
        assert_eq!(b.verdict, Verdict::Unknown);
        let cert = in_s_omega(&p, &RankSpec::Single(2), 3).unwrap();
        assert!(cert.search_exhausted && !cert.in_s);
    }

    #[test]
    fn claims() {
        let f = SamplingPattern::full(&[3, 3]).unwrap();
        let cert = certify_bound(&f, &RankSpec::Single(2), false, DEFAULT_BUDGET).unwrap();
        assert_eq!(cert.claim, Claim::UpperBoundWithProbOne);
        let p = per_column_pattern(&[5, 4], 2, 1).unwrap();
        let cert = certify_bound(&p, &RankSpec::Single(2), true, DEFAULT_BUDGET).unwrap();
        assert_eq!(cert.claim, Claim::NoClaim);
        let t = SamplingPattern::full(&[3, 3, 3]).unwrap();
        let cert = certify_bound(&t, &RankSpec::Cp(1), true, DEFAULT_BUDGET).unwrap();
        assert_eq!(cert.claim, Claim::ExactIfMinimal);
    }

    #[test]
    fn tt_hat_on_full_cube() {
        let p = SamplingPattern::full(&[2, 2, 2]).unwrap();
        // no valid rank has a last component above n_3 = 2
        assert_eq!(tt_hat_membership(&p, &[2, 2], DEFAULT_BUDGET).unwrap().verdict, Verdict::Fails);
        let own = in_s_omega(&p, &RankSpec::Tt(vec![1, 1]), DEFAULT_BUDGET).unwrap();
        assert!(own.in_s);
    }

    #[test]
    fn certificate_json_keys() {
        let f = SamplingPattern::full(&[3, 3]).unwrap();
        let cert = in_s_omega(&f, &RankSpec::Single(2), DEFAULT_BUDGET).unwrap();
        let v = serde_json::to_value(&cert).unwrap();
        for key in ["model", "rank", "a_holds", "b_holds", "in_S", "claim", "witness", "search_exhausted"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["model"], "single");
    }
}
