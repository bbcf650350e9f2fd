//! Sampling patterns, index bookkeeping and the pattern/values text formats.
//!
//! Coordinates are zero-based everywhere. Matricization and unfolding column
//! (and row) indices use row-major lexicographic order: the last listed mode
//! varies fastest.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{arg_err, Error, Result};
use crate::rng::{self, tag};

/// Products of mode sizes used by matricizations and unfoldings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexMaps {
    dims: Vec<usize>,
    /// `prefix[i]` = n_1 * ... * n_i, with `prefix[0] = 1`.
    prefix: Vec<usize>,
}

impl IndexMaps {
    pub fn new(dims: &[usize]) -> Self {
        let mut prefix = Vec::with_capacity(dims.len() + 1);
        prefix.push(1usize);
        for &n in dims {
            let last = *prefix.last().unwrap();
            prefix.push(last * n);
        }
        IndexMaps { dims: dims.to_vec(), prefix }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    /// N_d, the total number of entries.
    pub fn total(&self) -> usize {
        self.prefix[self.dims.len()]
    }

    /// N_i = n_1 * ... * n_i (1-based `i`, `i = 0` gives 1).
    pub fn head(&self, i: usize) -> usize {
        self.prefix[i]
    }

    /// N̄_i = n_{i+1} * ... * n_d.
    pub fn tail(&self, i: usize) -> usize {
        self.total() / self.prefix[i]
    }

    /// N_{-i} = N_d / n_i (1-based `i`).
    pub fn without(&self, i: usize) -> usize {
        self.total() / self.dims[i - 1]
    }

    /// Row-major linear index of `coord`.
    pub fn linear(&self, coord: &[usize]) -> usize {
        coord
            .iter()
            .zip(&self.dims)
            .fold(0usize, |acc, (&x, &n)| acc * n + x)
    }

    pub fn coord(&self, mut linear: usize) -> Vec<usize> {
        let mut out = vec![0usize; self.dims.len()];
        for (slot, &n) in out.iter_mut().zip(&self.dims).rev() {
            *slot = linear % n;
            linear /= n;
        }
        out
    }

    /// Position of `coord` in the `mode`-th matricization (1-based mode).
    pub fn matricize(&self, mode: usize, coord: &[usize]) -> (usize, usize) {
        let k = mode - 1;
        let col = coord
            .iter()
            .zip(&self.dims)
            .enumerate()
            .filter(|&(m, _)| m != k)
            .fold(0usize, |acc, (_, (&x, &n))| acc * n + x);
        (coord[k], col)
    }

    pub fn dematricize(&self, mode: usize, row: usize, mut col: usize) -> Vec<usize> {
        let k = mode - 1;
        let mut out = vec![0usize; self.dims.len()];
        for m in (0..self.dims.len()).rev() {
            if m == k {
                continue;
            }
            out[m] = col % self.dims[m];
            col /= self.dims[m];
        }
        out[k] = row;
        out
    }

    /// Position of `coord` in the `i`-th unfolding: rows index (x_1..x_i),
    /// columns index (x_{i+1}..x_d).
    pub fn unfold(&self, i: usize, coord: &[usize]) -> (usize, usize) {
        let row = coord[..i]
            .iter()
            .zip(&self.dims[..i])
            .fold(0usize, |acc, (&x, &n)| acc * n + x);
        let col = coord[i..]
            .iter()
            .zip(&self.dims[i..])
            .fold(0usize, |acc, (&x, &n)| acc * n + x);
        (row, col)
    }

    pub fn unfold_inverse(&self, i: usize, row: usize, col: usize) -> Vec<usize> {
        let tail = self.tail(i);
        self.coord(row * tail + col)
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.is_empty() {
        return arg_err("dims must be nonempty");
    }
    if dims.contains(&0) {
        return arg_err(format!("dims must be positive, got {dims:?}"));
    }
    Ok(())
}

/// A binary observation mask over an n_1 x ... x n_d array.
///
/// Observed coordinates are stored as sorted row-major linear indices, which
/// is the same as lexicographic order on coordinate tuples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SamplingPattern {
    maps: IndexMaps,
    observed: Vec<usize>,
}

impl SamplingPattern {
    pub fn new<I, C>(dims: &[usize], coords: I) -> Result<Self>
    where
        I: IntoIterator<Item = C>,
        C: AsRef<[usize]>,
    {
        check_dims(dims)?;
        let maps = IndexMaps::new(dims);
        let mut observed = Vec::new();
        for c in coords {
            let c = c.as_ref();
            if c.len() != dims.len() {
                return Err(Error::Validation(format!(
                    "coordinate {c:?} has length {}, expected {}",
                    c.len(),
                    dims.len()
                )));
            }
            if let Some((m, _)) = c.iter().zip(dims).enumerate().find(|(_, (x, n))| x >= n) {
                return Err(Error::Validation(format!(
                    "coordinate {c:?} out of range in mode {} (size {})",
                    m + 1,
                    dims[m]
                )));
            }
            observed.push(maps.linear(c));
        }
        observed.sort_unstable();
        if let Some(w) = observed.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Validation(format!(
                "duplicate coordinate {:?}",
                maps.coord(w[0])
            )));
        }
        Ok(SamplingPattern { maps, observed })
    }

    pub fn empty(dims: &[usize]) -> Result<Self> {
        Self::new(dims, std::iter::empty::<Vec<usize>>())
    }

    pub fn full(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        let maps = IndexMaps::new(dims);
        let observed = (0..maps.total()).collect();
        Ok(SamplingPattern { maps, observed })
    }

    fn from_sorted_linear(maps: IndexMaps, observed: Vec<usize>) -> Self {
        debug_assert!(observed.windows(2).all(|w| w[0] < w[1]));
        SamplingPattern { maps, observed }
    }

    pub fn dims(&self) -> &[usize] {
        self.maps.dims()
    }

    pub fn order(&self) -> usize {
        self.maps.order()
    }

    pub fn index_maps(&self) -> &IndexMaps {
        &self.maps
    }

    /// N_Ω, the number of observed entries.
    pub fn count(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    pub fn linear_indices(&self) -> &[usize] {
        &self.observed
    }

    pub fn contains(&self, coord: &[usize]) -> bool {
        coord.len() == self.order()
            && coord.iter().zip(self.dims()).all(|(x, n)| x < n)
            && self.observed.binary_search(&self.maps.linear(coord)).is_ok()
    }

    pub fn coords(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        self.observed.iter().map(|&l| self.maps.coord(l))
    }

    /// Observed entries grouped by their trailing coordinates.
    ///
    /// Returns one group per suffix (x_{split+1}, ..., x_d) in lexicographic
    /// order, including empty groups; each group lists the leading
    /// coordinates (x_1, ..., x_split) of its observed entries, sorted.
    /// `split = d - 1` gives the last-mode slices, and for a matrix
    /// `split = 1` gives the columns.
    pub fn fibers(&self, split: usize) -> Vec<Vec<Vec<usize>>> {
        assert!(split >= 1 && split < self.order());
        let tail = self.maps.tail(split);
        let mut groups = vec![Vec::new(); tail];
        for &l in &self.observed {
            let c = self.maps.coord(l);
            groups[l % tail].push(c[..split].to_vec());
        }
        groups
    }

    /// Sorted row indices observed in column `col` of a matrix pattern.
    pub fn column_rows(&self, col: usize) -> Vec<usize> {
        assert_eq!(self.order(), 2);
        let n2 = self.dims()[1];
        self.observed
            .iter()
            .filter(|&&l| l % n2 == col)
            .map(|&l| l / n2)
            .collect()
    }

    /// Number of observed entries in each row of the last-mode matricization.
    pub fn last_mode_counts(&self) -> Vec<usize> {
        let n_d = *self.dims().last().unwrap();
        let mut counts = vec![0usize; n_d];
        for &l in &self.observed {
            counts[l % n_d] += 1;
        }
        counts
    }
}

/// Observes every entry independently with probability `p`.
///
/// Each last-mode slice (each column, for matrices) draws from its own
/// substream keyed by `(seed, slice)`.
pub fn bernoulli_pattern(dims: &[usize], p: f64, seed: u64) -> Result<SamplingPattern> {
    check_dims(dims)?;
    if !(0.0..=1.0).contains(&p) {
        return arg_err(format!("probability must lie in [0, 1], got {p}"));
    }
    let maps = IndexMaps::new(dims);
    let n_d = *dims.last().unwrap();
    let head = maps.total() / n_d;
    let mut observed = Vec::new();
    for t in 0..n_d {
        let mut rng = rng::substream(seed, &[tag::BERNOULLI, t as u64]);
        for q in 0..head {
            if rng.random_bool(p) {
                observed.push(q * n_d + t);
            }
        }
    }
    observed.sort_unstable();
    Ok(SamplingPattern::from_sorted_linear(maps, observed))
}

/// Observes exactly `l` rows in every column, chosen without replacement.
pub fn per_column_pattern(dims: &[usize], l: usize, seed: u64) -> Result<SamplingPattern> {
    check_dims(dims)?;
    if dims.len() != 2 {
        return arg_err("per-column sampling needs a matrix (two dims)");
    }
    let (n1, n2) = (dims[0], dims[1]);
    if l > n1 {
        return arg_err(format!("cannot observe {l} rows of a column with {n1} rows"));
    }
    let mut observed = Vec::with_capacity(l * n2);
    for col in 0..n2 {
        let mut rng = rng::substream(seed, &[tag::PER_COLUMN, col as u64]);
        observed.extend(
            rand::seq::index::sample(&mut rng, n1, l)
                .into_iter()
                .map(|row| row * n2 + col),
        );
    }
    observed.sort_unstable();
    Ok(SamplingPattern::from_sorted_linear(IndexMaps::new(dims), observed))
}

/// Per-mode index restriction describing a sub-block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ModeSelect {
    All,
    Indices(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Selector(pub Vec<ModeSelect>);

impl Selector {
    pub fn all(order: usize) -> Self {
        Selector(vec![ModeSelect::All; order])
    }

    /// The slice with `x_mode = index` (1-based mode).
    pub fn slice(order: usize, mode: usize, index: usize) -> Self {
        let mut s = Self::all(order);
        s.0[mode - 1] = ModeSelect::Indices(vec![index]);
        s
    }
}

/// N_Ω of the sub-block picked by `selector`.
pub fn observed_count(pattern: &SamplingPattern, selector: &Selector) -> Result<usize> {
    let dims = pattern.dims();
    if selector.0.len() != dims.len() {
        return arg_err(format!(
            "selector has {} modes, pattern has {}",
            selector.0.len(),
            dims.len()
        ));
    }
    let mut masks = Vec::with_capacity(dims.len());
    for (m, (sel, &n)) in selector.0.iter().zip(dims).enumerate() {
        masks.push(match sel {
            ModeSelect::All => None,
            ModeSelect::Indices(ix) => {
                let mut mask = vec![false; n];
                for &i in ix {
                    if i >= n {
                        return arg_err(format!(
                            "selector index {i} out of range in mode {} (size {n})",
                            m + 1
                        ));
                    }
                    mask[i] = true;
                }
                Some(mask)
            }
        });
    }
    Ok(pattern
        .coords()
        .filter(|c| {
            c.iter()
                .zip(&masks)
                .all(|(&x, mask)| mask.as_ref().is_none_or(|m| m[x]))
        })
        .count())
}

/// Position of `coord` in the `mode`-th matricization (1-based mode).
pub fn matricization_index(mode: usize, coord: &[usize], dims: &[usize]) -> (usize, usize) {
    IndexMaps::new(dims).matricize(mode, coord)
}

/// Position of `coord` in the `i`-th unfolding.
pub fn unfolding_index(i: usize, coord: &[usize], dims: &[usize]) -> (usize, usize) {
    IndexMaps::new(dims).unfold(i, coord)
}

/// Number of rows containing at least one nonzero entry.
pub fn nonzero_rows<R: AsRef<[u8]>>(rows: &[R]) -> usize {
    rows.iter()
        .filter(|r| r.as_ref().iter().any(|&v| v != 0))
        .count()
}

/// Observed values keyed by the coordinates of a pattern.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedData {
    pattern: SamplingPattern,
    /// Aligned with `pattern.linear_indices()`.
    values: Vec<f64>,
}

impl ObservedData {
    pub fn new(pattern: SamplingPattern, values: Vec<f64>) -> Result<Self> {
        if values.len() != pattern.count() {
            return Err(Error::Validation(format!(
                "{} values for {} observed entries",
                values.len(),
                pattern.count()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("observed values must be finite".into()));
        }
        Ok(ObservedData { pattern, values })
    }

    /// Samples a dense row-major array at the pattern's coordinates.
    pub fn from_dense(pattern: SamplingPattern, dense: &[f64]) -> Result<Self> {
        if dense.len() != pattern.index_maps().total() {
            return arg_err(format!(
                "dense array has {} entries, pattern covers {}",
                dense.len(),
                pattern.index_maps().total()
            ));
        }
        let values = pattern.linear_indices().iter().map(|&l| dense[l]).collect();
        Self::new(pattern, values)
    }

    fn from_entries(dims: &[usize], mut entries: Vec<(Vec<usize>, f64)>) -> Result<Self> {
        check_dims(dims)?;
        let maps = IndexMaps::new(dims);
        entries.sort_by_key(|(c, _)| maps.linear(c));
        let pattern = SamplingPattern::new(dims, entries.iter().map(|(c, _)| c.as_slice()))?;
        let values = entries.into_iter().map(|(_, v)| v).collect();
        Self::new(pattern, values)
    }

    pub fn pattern(&self) -> &SamplingPattern {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, coord: &[usize]) -> Option<f64> {
        if !self.pattern.contains(coord) {
            return None;
        }
        let l = self.pattern.index_maps().linear(coord);
        let at = self.pattern.linear_indices().binary_search(&l).ok()?;
        Some(self.values[at])
    }

    pub fn iter(&self) -> impl Iterator<Item = (Vec<usize>, f64)> + '_ {
        self.pattern.coords().zip(self.values.iter().copied())
    }
}

// ---------------------------------------------------------------------------
// Text formats
// ---------------------------------------------------------------------------

fn dims_line(dims: &[usize]) -> String {
    let mut s = String::from("dims:");
    for n in dims {
        let _ = write!(s, " {n}");
    }
    s
}

/// Content lines of a document: skips blank lines and `#` comments, keeps
/// 1-based line numbers.
pub(crate) fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub(crate) fn parse_usize_list(line: usize, s: &str) -> Result<Vec<usize>> {
    s.split_whitespace()
        .map(|tok| {
            tok.parse::<usize>().map_err(|_| Error::Parse {
                line,
                message: format!("expected a nonnegative integer, found {tok:?}"),
            })
        })
        .collect()
}

pub(crate) fn parse_dims_header(line: usize, s: &str) -> Result<Vec<usize>> {
    let rest = s.strip_prefix("dims:").ok_or_else(|| Error::Parse {
        line,
        message: format!("expected `dims:` header, found {s:?}"),
    })?;
    let dims = parse_usize_list(line, rest)?;
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::Parse {
            line,
            message: "dims must be a nonempty list of positive integers".into(),
        });
    }
    Ok(dims)
}

fn coord_line(out: &mut String, c: &[usize]) {
    for (k, x) in c.iter().enumerate() {
        if k > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{x}");
    }
}

pub fn format_pattern(pattern: &SamplingPattern) -> String {
    let mut out = dims_line(pattern.dims());
    out.push('\n');
    for c in pattern.coords() {
        coord_line(&mut out, &c);
        out.push('\n');
    }
    out
}

pub fn parse_pattern(text: &str) -> Result<SamplingPattern> {
    let mut lines = content_lines(text);
    let (ln, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty document".into(),
    })?;
    let dims = parse_dims_header(ln, header)?;
    let mut coords = Vec::new();
    for (ln, l) in lines {
        let c = parse_usize_list(ln, l)?;
        if c.len() != dims.len() {
            return Err(Error::Parse {
                line: ln,
                message: format!("expected {} coordinates, found {}", dims.len(), c.len()),
            });
        }
        coords.push(c);
    }
    SamplingPattern::new(&dims, coords)
}

pub fn write_pattern(pattern: &SamplingPattern, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_pattern(pattern))?;
    Ok(())
}

pub fn read_pattern(path: impl AsRef<Path>) -> Result<SamplingPattern> {
    parse_pattern(&fs::read_to_string(path)?)
}

/// Scientific notation with 17 significant digits.
pub(crate) fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn format_values(data: &ObservedData) -> String {
    let mut out = dims_line(data.pattern().dims());
    out.push('\n');
    for (c, v) in data.iter() {
        coord_line(&mut out, &c);
        out.push(' ');
        out.push_str(&format_value(v));
        out.push('\n');
    }
    out
}

pub fn parse_values(text: &str) -> Result<ObservedData> {
    let mut lines = content_lines(text);
    let (ln, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty document".into(),
    })?;
    let dims = parse_dims_header(ln, header)?;
    let d = dims.len();
    let mut entries = Vec::new();
    for (ln, l) in lines {
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != d + 1 {
            return Err(Error::Parse {
                line: ln,
                message: format!("expected {d} coordinates and a value, found {} fields", toks.len()),
            });
        }
        let coord = parse_usize_list(ln, &toks[..d].join(" "))?;
        let value = toks[d].parse::<f64>().map_err(|_| Error::Parse {
            line: ln,
            message: format!("expected a real number, found {:?}", toks[d]),
        })?;
        entries.push((coord, value));
    }
    ObservedData::from_entries(&dims, entries)
}

pub fn write_values(data: &ObservedData, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_values(data))?;
    Ok(())
}

pub fn read_values(path: impl AsRef<Path>) -> Result<ObservedData> {
    parse_values(&fs::read_to_string(path)?)
}
