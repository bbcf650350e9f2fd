//! Binary constraint structures built from a sampling pattern and a rank.
//!
//! Every model reduces to the same shape: a list of columns (slices), each a
//! set of positions in a fixed slice space. For a single-view matrix the
//! slice space is the column space `n_1`; for CP and TT it is
//! `n_1 x ... x n_{d-1}`; for Tucker with split `j` it is
//! `n_1 x ... x n_j`; a multi-view structure concatenates two single-view
//! structures over the shared row space.

use std::fmt::Write as _;
use std::ops::ControlFlow;

use serde::Serialize;

use crate::error::{arg_err, Error, Result};
use crate::patterns::{IndexMaps, SamplingPattern};
use crate::rank::{Model, RankSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    First,
    Second,
}

/// The entries repeated in every column emitted for one source slice.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BaseChoice {
    /// Linear index of the source slice over the trailing modes.
    pub source: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub view: Option<View>,
    /// Linear positions inside the slice space, sorted.
    pub base: Vec<usize>,
}

/// Observed entries fixed before a Tucker constraint tensor is built.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AnchorSet {
    pub dims: Vec<usize>,
    pub split: usize,
    pub ranks: Vec<usize>,
    /// Full coordinates, sorted lexicographically.
    pub entries: Vec<Vec<usize>>,
}

impl AnchorSet {
    /// Σ n_i m_i over the trailing modes.
    pub fn required_size(dims: &[usize], split: usize, ranks: &[usize]) -> usize {
        dims[split..].iter().zip(ranks).map(|(n, m)| n * m).sum()
    }

    /// Decides the block-count condition by enumerating every choice of
    /// index subsets on the trailing modes.
    pub fn satisfies_condition_exhaustive(&self) -> Result<bool> {
        let trailing = &self.dims[self.split..];
        let bits: usize = trailing.iter().sum();
        if bits > 24 {
            return Err(Error::Refused(format!(
                "exhaustive anchor check over 2^{bits} subset choices"
            )));
        }
        if self.entries.len() != Self::required_size(&self.dims, self.split, &self.ranks) {
            return Ok(false);
        }
        let offsets: Vec<usize> = trailing
            .iter()
            .scan(0usize, |acc, &n| {
                let o = *acc;
                *acc += n;
                Some(o)
            })
            .collect();
        let entry_masks: Vec<u64> = self
            .entries
            .iter()
            .map(|c| {
                c[self.split..]
                    .iter()
                    .zip(&offsets)
                    .fold(0u64, |m, (&x, &o)| m | 1 << (o + x))
            })
            .collect();
        for chosen in 0u64..(1u64 << bits) {
            let budget: usize = offsets
                .iter()
                .zip(trailing)
                .zip(&self.ranks)
                .map(|((&o, &n), &m)| ((chosen >> o) & ((1 << n) - 1)).count_ones() as usize * m)
                .sum();
            let inside = entry_masks.iter().filter(|&&e| e & chosen == e).count();
            if inside > budget {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstraintStructure {
    rank: RankSpec,
    slice_dims: Vec<usize>,
    columns: Vec<Vec<usize>>,
    sources: Vec<usize>,
    views: Option<Vec<View>>,
    base_choices: Vec<BaseChoice>,
    anchors: Option<AnchorSet>,
}

impl ConstraintStructure {
    pub fn model(&self) -> Model {
        self.rank.model()
    }

    pub fn rank(&self) -> &RankSpec {
        &self.rank
    }

    pub fn slice_dims(&self) -> &[usize] {
        &self.slice_dims
    }

    /// Number of positions in one column/slice.
    pub fn slice_len(&self) -> usize {
        self.slice_dims.iter().product()
    }

    /// K, the number of columns/slices.
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    /// Sorted linear positions of the ones in each column/slice.
    pub fn columns(&self) -> &[Vec<usize>] {
        &self.columns
    }

    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    pub fn views(&self) -> Option<&[View]> {
        self.views.as_deref()
    }

    pub fn base_choices(&self) -> &[BaseChoice] {
        &self.base_choices
    }

    pub fn anchors(&self) -> Option<&AnchorSet> {
        self.anchors.as_ref()
    }

    /// Dense 0/1 rows of one column, for display and small checks.
    pub fn column_dense(&self, k: usize) -> Vec<u8> {
        let mut out = vec![0u8; self.slice_len()];
        for &l in &self.columns[k] {
            out[l] = 1;
        }
        out
    }
}

struct Slices {
    columns: Vec<Vec<usize>>,
    sources: Vec<usize>,
    base_choices: Vec<BaseChoice>,
}

fn describe(model: Model) -> &'static str {
    match model {
        Model::SingleView | Model::MultiView => "column",
        _ => "slice",
    }
}

/// The shared last-mode construction: `base` smallest observed positions in
/// every slice are repeated, each further observed position opens a column.
fn last_mode_slices(pattern: &SamplingPattern, base: usize, model: Model) -> Result<Slices> {
    let d = pattern.order();
    let slice_maps = IndexMaps::new(&pattern.dims()[..d - 1]);
    let mut out = Slices {
        columns: Vec::new(),
        sources: Vec::new(),
        base_choices: Vec::new(),
    };
    for (t, prefixes) in pattern.fibers(d - 1).into_iter().enumerate() {
        if prefixes.len() < base {
            return Err(Error::Precondition(format!(
                "{} {t} has {} observed entries, needs at least {base}",
                describe(model),
                prefixes.len()
            )));
        }
        let lin: Vec<usize> = prefixes.iter().map(|c| slice_maps.linear(c)).collect();
        let (head, extra) = lin.split_at(base);
        out.base_choices.push(BaseChoice {
            source: t,
            view: None,
            base: head.to_vec(),
        });
        for &e in extra {
            let mut col = head.to_vec();
            col.push(e);
            out.columns.push(col);
            out.sources.push(t);
        }
    }
    Ok(out)
}

pub fn build_constraint_matrix(pattern: &SamplingPattern, r: usize) -> Result<ConstraintStructure> {
    if pattern.order() != 2 {
        return arg_err("the single-view constraint matrix needs a matrix pattern");
    }
    let rank = RankSpec::Single(r);
    rank.validate(pattern.dims())?;
    let s = last_mode_slices(pattern, r, Model::SingleView)?;
    Ok(ConstraintStructure {
        rank,
        slice_dims: vec![pattern.dims()[0]],
        columns: s.columns,
        sources: s.sources,
        views: None,
        base_choices: s.base_choices,
        anchors: None,
    })
}

/// Concatenates the single-view constructions of both views.
pub fn build_constraint_matrix_multiview(
    first: &SamplingPattern,
    second: &SamplingPattern,
    r1: usize,
    r2: usize,
    r: usize,
) -> Result<ConstraintStructure> {
    if first.order() != 2 || second.order() != 2 {
        return arg_err("multi-view constraints need two matrix patterns");
    }
    let n = first.dims()[0];
    if second.dims()[0] != n {
        return arg_err(format!(
            "views must share the row count, got {n} and {}",
            second.dims()[0]
        ));
    }
    let rank = RankSpec::MultiView { r1, r2, r };
    rank.validate(&[n, first.dims()[1], second.dims()[1]])?;
    let mut columns = Vec::new();
    let mut sources = Vec::new();
    let mut views = Vec::new();
    let mut base_choices = Vec::new();
    for (view, pattern, rv) in [(View::First, first, r1), (View::Second, second, r2)] {
        let s = last_mode_slices(pattern, rv, Model::MultiView).map_err(|e| match e {
            Error::Precondition(m) => Error::Precondition(format!("view {}: {m}", view_number(view))),
            other => other,
        })?;
        views.extend(std::iter::repeat_n(view, s.columns.len()));
        columns.extend(s.columns);
        sources.extend(s.sources);
        base_choices.extend(s.base_choices.into_iter().map(|mut b| {
            b.view = Some(view);
            b
        }));
    }
    Ok(ConstraintStructure {
        rank,
        slice_dims: vec![n],
        columns,
        sources,
        views: Some(views),
        base_choices,
        anchors: None,
    })
}

fn view_number(v: View) -> u8 {
    match v {
        View::First => 1,
        View::Second => 2,
    }
}

pub fn build_constraint_tensor_cp(pattern: &SamplingPattern, r: usize) -> Result<ConstraintStructure> {
    let rank = RankSpec::Cp(r);
    rank.validate(pattern.dims())?;
    let s = last_mode_slices(pattern, r, Model::Cp)?;
    Ok(ConstraintStructure {
        rank,
        slice_dims: pattern.dims()[..pattern.order() - 1].to_vec(),
        columns: s.columns,
        sources: s.sources,
        views: None,
        base_choices: s.base_choices,
        anchors: None,
    })
}

pub fn build_constraint_tensor_tt(pattern: &SamplingPattern, u: &[usize]) -> Result<ConstraintStructure> {
    let rank = RankSpec::Tt(u.to_vec());
    rank.validate(pattern.dims())?;
    let base = *u.last().unwrap();
    let s = last_mode_slices(pattern, base, Model::Tt)?;
    Ok(ConstraintStructure {
        rank,
        slice_dims: pattern.dims()[..pattern.order() - 1].to_vec(),
        columns: s.columns,
        sources: s.sources,
        views: None,
        base_choices: s.base_choices,
        anchors: None,
    })
}

/// Capacitated bipartite matching between anchor slots and candidate
/// entries. Slot `(i, v)` (trailing mode `i`, index `v`) takes up to `m_i`
/// entries whose `i`-th coordinate is `v`.
struct SlotMatching<'a> {
    /// For each slot copy, the candidate entries it may take, in order.
    adjacency: Vec<&'a [usize]>,
    owner: Vec<Option<usize>>,
    visited: Vec<u32>,
    stamp: u32,
}

impl<'a> SlotMatching<'a> {
    fn augment(&mut self, slot: usize) -> bool {
        let stamp = self.stamp;
        for &e in self.adjacency[slot] {
            if self.visited[e] == stamp {
                continue;
            }
            self.visited[e] = stamp;
            let free = match self.owner[e] {
                None => true,
                Some(other) => self.augment(other),
            };
            if free {
                self.owner[e] = Some(slot);
                return true;
            }
        }
        false
    }
}

/// Saturating assignment of `entries` (full coordinates) to the slots, or
/// `None` if some slot cannot be filled. Returns which entries are used.
fn saturate_slots(dims: &[usize], split: usize, ranks: &[usize], entries: &[Vec<usize>]) -> Option<Vec<bool>> {
    let trailing = &dims[split..];
    let mut by_slot: Vec<Vec<Vec<usize>>> = trailing.iter().map(|&n| vec![Vec::new(); n]).collect();
    for (e, c) in entries.iter().enumerate() {
        for (k, lists) in by_slot.iter_mut().enumerate() {
            lists[c[split + k]].push(e);
        }
    }
    let mut adjacency = Vec::new();
    for (k, lists) in by_slot.iter().enumerate() {
        for list in lists {
            for _ in 0..ranks[k] {
                adjacency.push(list.as_slice());
            }
        }
    }
    let slots = adjacency.len();
    let mut m = SlotMatching {
        adjacency,
        owner: vec![None; entries.len()],
        visited: vec![0; entries.len()],
        stamp: 0,
    };
    for s in 0..slots {
        m.stamp += 1;
        if !m.augment(s) {
            return None;
        }
    }
    Some(m.owner.iter().map(Option::is_some).collect())
}

fn tucker_rank(dims: &[usize], split: usize, ranks: &[usize]) -> Result<RankSpec> {
    let rank = RankSpec::Tucker {
        split,
        ranks: ranks.to_vec(),
    };
    rank.validate(dims)?;
    Ok(rank)
}

/// Picks `Σ n_i m_i` observed entries meeting the block-count condition, or
/// `None` when no such set exists.
///
/// A set meets the condition exactly when its entries can be assigned to
/// slots `(i, x_i)` with every slot of mode `i` receiving `m_i` entries, so
/// the search is a capacitated matching. Slots are filled in order (mode,
/// index) and try candidates in lexicographic order, which makes the choice
/// deterministic.
pub fn select_tucker_anchor_set(pattern: &SamplingPattern, split: usize, ranks: &[usize]) -> Result<Option<AnchorSet>> {
    let dims = pattern.dims();
    tucker_rank(dims, split, ranks)?;
    if pattern.count() < AnchorSet::required_size(dims, split, ranks) {
        return Ok(None);
    }
    let coords: Vec<Vec<usize>> = pattern.coords().collect();
    Ok(saturate_slots(dims, split, ranks, &coords).map(|used| AnchorSet {
        dims: dims.to_vec(),
        split,
        ranks: ranks.to_vec(),
        entries: coords
            .into_iter()
            .zip(used)
            .filter_map(|(c, u)| u.then_some(c))
            .collect(),
    }))
}

/// Capacitated matching from entries into anchor slots, used as the
/// independence test of the matroid whose bases are the valid anchor sets.
struct SlotOracle {
    /// Slot ids adjacent to each candidate entry.
    slots_of: Vec<Vec<usize>>,
    capacity: Vec<usize>,
}

impl SlotOracle {
    fn new(dims: &[usize], split: usize, ranks: &[usize], entries: &[Vec<usize>]) -> Self {
        let mut offsets = Vec::new();
        let mut capacity = Vec::new();
        for (k, &n) in dims[split..].iter().enumerate() {
            offsets.push(capacity.len());
            capacity.extend(std::iter::repeat_n(ranks[k], n));
        }
        let slots_of = entries
            .iter()
            .map(|c| {
                offsets
                    .iter()
                    .enumerate()
                    .map(|(k, &o)| o + c[split + k])
                    .collect()
            })
            .collect();
        SlotOracle { slots_of, capacity }
    }

    fn total(&self) -> usize {
        self.capacity.iter().sum()
    }

    /// Size of a largest assignable subset of `members`.
    fn rank(&self, members: &[usize]) -> usize {
        let mut load: Vec<Vec<usize>> = vec![Vec::new(); self.capacity.len()];
        let mut seen = vec![0u32; self.capacity.len()];
        let mut matched = 0;
        for (stamp, &e) in members.iter().enumerate() {
            if self.augment(e, &mut load, &mut seen, stamp as u32 + 1) {
                matched += 1;
            }
        }
        matched
    }

    fn augment(&self, e: usize, load: &mut [Vec<usize>], seen: &mut [u32], stamp: u32) -> bool {
        for &s in &self.slots_of[e] {
            if seen[s] == stamp {
                continue;
            }
            seen[s] = stamp;
            if load[s].len() < self.capacity[s] {
                load[s].push(e);
                return true;
            }
            for at in 0..load[s].len() {
                let other = load[s][at];
                if self.augment(other, load, seen, stamp) {
                    load[s][at] = e;
                    return true;
                }
            }
        }
        false
    }
}

/// Visits every anchor set meeting the block-count condition, in
/// lexicographic order of the chosen entries, until `visit` breaks.
///
/// Valid anchor sets are the bases of a transversal matroid on the observed
/// entries, so the include/exclude recursion never reaches a dead end.
/// Returns `false` if the enumeration was stopped early.
pub fn for_each_anchor_set(
    pattern: &SamplingPattern,
    split: usize,
    ranks: &[usize],
    mut visit: impl FnMut(&AnchorSet) -> ControlFlow<()>,
) -> Result<bool> {
    let dims = pattern.dims();
    tucker_rank(dims, split, ranks)?;
    let coords: Vec<Vec<usize>> = pattern.coords().collect();
    let oracle = SlotOracle::new(dims, split, ranks, &coords);
    let all: Vec<usize> = (0..coords.len()).collect();
    if oracle.rank(&all) < oracle.total() {
        return Ok(true);
    }
    let mut chosen = Vec::new();
    let mut emit = |chosen: &[usize]| {
        visit(&AnchorSet {
            dims: dims.to_vec(),
            split,
            ranks: ranks.to_vec(),
            entries: chosen.iter().map(|&e| coords[e].clone()).collect(),
        })
    };
    Ok(bases(&oracle, coords.len(), 0, &mut chosen, &mut emit).is_continue())
}

fn bases(
    oracle: &SlotOracle,
    n: usize,
    next: usize,
    chosen: &mut Vec<usize>,
    emit: &mut impl FnMut(&[usize]) -> ControlFlow<()>,
) -> ControlFlow<()> {
    if chosen.len() == oracle.total() {
        return emit(chosen);
    }
    chosen.push(next);
    if oracle.rank(chosen) == chosen.len() {
        bases(oracle, n, next + 1, chosen, emit)?;
    }
    chosen.pop();
    let mut without: Vec<usize> = chosen.clone();
    without.extend(next + 1..n);
    if oracle.rank(&without) == oracle.total() {
        bases(oracle, n, next + 1, chosen, emit)?;
    }
    ControlFlow::Continue(())
}

/// Checks an externally supplied anchor set against the pattern and the
/// block-count condition.
pub fn validate_anchor_set(pattern: &SamplingPattern, anchors: &AnchorSet) -> Result<()> {
    if anchors.dims != pattern.dims() {
        return arg_err("anchor set dims differ from the pattern");
    }
    tucker_rank(pattern.dims(), anchors.split, &anchors.ranks)?;
    for c in &anchors.entries {
        if !pattern.contains(c) {
            return arg_err(format!("anchor entry {c:?} is not observed"));
        }
    }
    let mut sorted = anchors.entries.clone();
    sorted.sort();
    sorted.dedup();
    let need = AnchorSet::required_size(pattern.dims(), anchors.split, &anchors.ranks);
    if sorted.len() != anchors.entries.len() || sorted.len() != need {
        return arg_err(format!(
            "anchor set must hold {need} distinct entries, got {}",
            anchors.entries.len()
        ));
    }
    if saturate_slots(pattern.dims(), anchors.split, &anchors.ranks, &sorted).is_none() {
        return arg_err("anchor set violates the block-count condition");
    }
    Ok(())
}

pub fn build_constraint_tensor_tucker(pattern: &SamplingPattern, anchors: &AnchorSet) -> Result<ConstraintStructure> {
    validate_anchor_set(pattern, anchors)?;
    let split = anchors.split;
    let dims = pattern.dims();
    let rank = tucker_rank(dims, split, &anchors.ranks)?;
    let full = pattern.index_maps();
    let slice_maps = IndexMaps::new(&dims[..split]);
    let tail = full.tail(split);
    let mut anchored = vec![false; full.total()];
    for c in &anchors.entries {
        anchored[full.linear(c)] = true;
    }
    let mut columns = Vec::new();
    let mut sources = Vec::new();
    let mut base_choices = Vec::new();
    for (t, prefixes) in pattern.fibers(split).into_iter().enumerate() {
        let (base, extra): (Vec<usize>, Vec<usize>) = prefixes
            .iter()
            .map(|c| slice_maps.linear(c))
            .partition(|&l| anchored[l * tail + t]);
        for &e in &extra {
            let mut col = base.clone();
            let at = col.partition_point(|&x| x < e);
            col.insert(at, e);
            columns.push(col);
            sources.push(t);
        }
        if !prefixes.is_empty() {
            base_choices.push(BaseChoice { source: t, view: None, base });
        }
    }
    Ok(ConstraintStructure {
        rank,
        slice_dims: dims[..split].to_vec(),
        columns,
        sources,
        views: None,
        base_choices,
        anchors: Some(anchors.clone()),
    })
}

/// Builds the structure for any model. Multi-view takes `second`; Tucker
/// selects its anchor set and fails with a precondition error if none exists.
pub fn build(pattern: &SamplingPattern, second: Option<&SamplingPattern>, rank: &RankSpec) -> Result<ConstraintStructure> {
    match rank {
        RankSpec::Single(r) => build_constraint_matrix(pattern, *r),
        RankSpec::MultiView { r1, r2, r } => {
            let second = second.ok_or_else(|| Error::Argument("multi-view needs a second view".into()))?;
            build_constraint_matrix_multiview(pattern, second, *r1, *r2, *r)
        }
        RankSpec::Cp(r) => build_constraint_tensor_cp(pattern, *r),
        RankSpec::Tucker { split, ranks } => match select_tucker_anchor_set(pattern, *split, ranks)? {
            Some(a) => build_constraint_tensor_tucker(pattern, &a),
            None => Err(Error::Precondition(
                "no anchor set satisfies the block-count condition".into(),
            )),
        },
        RankSpec::Tt(u) => build_constraint_tensor_tt(pattern, u),
    }
}

/// Text form: `model:`, `rank:`, `K:` headers, then the body in the pattern
/// format over `slice_dims x K`, then optional `views:` and `anchors:`
/// sections.
pub fn format_constraints(c: &ConstraintStructure) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "model: {}", c.model());
    let _ = writeln!(out, "rank: {}", c.rank());
    let _ = writeln!(out, "K: {}", c.len());
    out.push_str("dims:");
    for n in c.slice_dims() {
        let _ = write!(out, " {n}");
    }
    let _ = writeln!(out, " {}", c.len());
    let maps = IndexMaps::new(c.slice_dims());
    let mut ones: Vec<(usize, usize)> = c
        .columns()
        .iter()
        .enumerate()
        .flat_map(|(k, col)| col.iter().map(move |&l| (l, k)))
        .collect();
    ones.sort_unstable();
    for (l, k) in ones {
        for x in maps.coord(l) {
            let _ = write!(out, "{x} ");
        }
        let _ = writeln!(out, "{k}");
    }
    if let Some(views) = c.views() {
        out.push_str("views:");
        for &v in views {
            let _ = write!(out, " {}", view_number(v));
        }
        out.push('\n');
    }
    if let Some(a) = c.anchors() {
        let _ = writeln!(out, "anchors: {}", a.entries.len());
        for e in &a.entries {
            let line: Vec<String> = e.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
    }
    out
}
