//! Synthetic ground truth, singular-value-thresholding completion, numerical
//! rank, and the completion-to-certificate pipeline.
//!
//! Dense arrays are row-major over the tensor's coordinates, matching
//! [`IndexMaps::linear`]. Only matrices are completed here; tensor
//! completions are produced elsewhere and fed to [`certify_completion`].

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::deterministic::{self, blank_certificate, Certificate, Claim};
use crate::error::{arg_err, Error, Result};
use crate::patterns::{bernoulli_pattern, IndexMaps, ObservedData, SamplingPattern};
use crate::probabilistic::{self, ThresholdReport};
use crate::rank::{tt_violation, Model, RankSpec};
use crate::rng::{derive_seed, substream, tag, Stream};

#[derive(Clone, Debug, PartialEq)]
pub enum Factors {
    /// `left` is n1×r, `right` is r×n2.
    Matrix { left: DMatrix<f64>, right: DMatrix<f64> },
    /// One n_i×r matrix per mode; column l holds a_i^l.
    Cp { factors: Vec<DMatrix<f64>> },
    /// Row-major core of shape `core_dims` and orthonormal n_i×m_i factors.
    Tucker { core: Vec<f64>, core_dims: Vec<usize>, factors: Vec<DMatrix<f64>> },
    /// Core i is u_{i-1}×n_i×u_i, stored row-major.
    Tt { cores: Vec<Vec<f64>>, ranks: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub model: Model,
    pub dims: Vec<usize>,
    pub rank: RankSpec,
    pub values: Vec<f64>,
    pub factors: Factors,
}

impl GroundTruth {
    pub fn as_matrix(&self) -> Result<DMatrix<f64>> {
        match self.dims.as_slice() {
            [n1, n2] => Ok(DMatrix::from_row_slice(*n1, *n2, &self.values)),
            _ => arg_err("ground truth is not a matrix"),
        }
    }

    /// Observes the ground truth on `pattern`.
    pub fn observe(&self, pattern: &SamplingPattern) -> Result<ObservedData> {
        if pattern.dims() != self.dims.as_slice() {
            return arg_err(format!("pattern dims {:?} differ from {:?}", pattern.dims(), self.dims));
        }
        ObservedData::from_dense(pattern.clone(), &self.values)
    }
}

fn uniform_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.random::<f64>()).collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

pub fn random_low_rank_matrix(n1: usize, n2: usize, r: usize, seed: u64) -> Result<GroundTruth> {
    if r == 0 || r > n1.min(n2) {
        return arg_err(format!("rank {r} outside 1..={}", n1.min(n2)));
    }
    let mut rng = substream(seed, &[tag::FACTORS]);
    let left = uniform_matrix(&mut rng, n1, r);
    let right = uniform_matrix(&mut rng, r, n2);
    let product = &left * &right;
    let values = row_major(&product);
    Ok(GroundTruth {
        model: Model::SingleView,
        dims: vec![n1, n2],
        rank: RankSpec::Single(r),
        values,
        factors: Factors::Matrix { left, right },
    })
}

pub fn random_cp_tensor(dims: &[usize], r: usize, seed: u64) -> Result<GroundTruth> {
    RankSpec::Cp(r).validate(dims)?;
    let mut rng = substream(seed, &[tag::FACTORS]);
    let factors: Vec<DMatrix<f64>> = dims.iter().map(|&n| uniform_matrix(&mut rng, n, r)).collect();
    let maps = IndexMaps::new(dims);
    let values = (0..maps.total())
        .map(|l| {
            let x = maps.coord(l);
            (0..r)
                .map(|k| x.iter().zip(&factors).map(|(&xi, a)| a[(xi, k)]).product::<f64>())
                .sum()
        })
        .collect();
    Ok(GroundTruth {
        model: Model::Cp,
        dims: dims.to_vec(),
        rank: RankSpec::Cp(r),
        values,
        factors: Factors::Cp { factors },
    })
}

/// Orthonormal basis of the column space of a full-column-rank matrix.
fn orthonormalize(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().q()
}

/// Multiplies mode `mode` of a row-major tensor by `mat` (rows × dims[mode]).
fn mode_product(values: &[f64], dims: &[usize], mode: usize, mat: &DMatrix<f64>) -> (Vec<f64>, Vec<usize>) {
    let before: usize = dims[..mode].iter().product();
    let after: usize = dims[mode + 1..].iter().product();
    let (rows, inner) = (mat.nrows(), dims[mode]);
    let mut out = vec![0.0; before * rows * after];
    for b in 0..before {
        for k in 0..inner {
            let src = &values[(b * inner + k) * after..(b * inner + k + 1) * after];
            for x in 0..rows {
                let w = mat[(x, k)];
                let dst = &mut out[(b * rows + x) * after..(b * rows + x + 1) * after];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
    }
    let mut new_dims = dims.to_vec();
    new_dims[mode] = rows;
    (out, new_dims)
}

/// Tucker tensor with mode ranks `m` (one per mode). `split` only sets the
/// rank spec recorded in the result.
pub fn random_tucker_tensor(dims: &[usize], m: &[usize], split: usize, seed: u64) -> Result<GroundTruth> {
    let d = dims.len();
    if m.len() != d {
        return arg_err(format!("expected {d} mode ranks, got {}", m.len()));
    }
    if split == 0 || split >= d {
        return arg_err(format!("split must lie in 1..{d}"));
    }
    let maps = IndexMaps::new(dims);
    for i in 0..d {
        let others: usize = m.iter().enumerate().filter(|&(k, _)| k != i).map(|(_, &x)| x).product();
        if m[i] == 0 || m[i] > dims[i].min(maps.without(i + 1)) || m[i] > others {
            return arg_err(format!("mode rank m_{} = {} is not attainable for dims {dims:?} and ranks {m:?}", i + 1, m[i]));
        }
    }
    let mut rng = substream(seed, &[tag::FACTORS]);
    let core_len: usize = m.iter().product();
    let core: Vec<f64> = (0..core_len).map(|_| rng.random::<f64>()).collect();
    let factors: Vec<DMatrix<f64>> = dims
        .iter()
        .zip(m)
        .map(|(&n, &mi)| orthonormalize(uniform_matrix(&mut rng, n, mi)))
        .collect();
    let (mut values, mut shape) = (core.clone(), m.to_vec());
    for (i, t) in factors.iter().enumerate() {
        (values, shape) = mode_product(&values, &shape, i, t);
    }
    Ok(GroundTruth {
        model: Model::Tucker,
        dims: dims.to_vec(),
        rank: RankSpec::Tucker { split, ranks: m[split..].to_vec() },
        values,
        factors: Factors::Tucker { core, core_dims: m.to_vec(), factors },
    })
}

pub fn random_tt_tensor(dims: &[usize], u: &[usize], seed: u64) -> Result<GroundTruth> {
    let d = dims.len();
    if d < 2 || u.len() != d - 1 || u.contains(&0) {
        return arg_err(format!("expected {} positive TT ranks", d.saturating_sub(1)));
    }
    if let Some(i) = tt_violation(dims, u) {
        return arg_err(format!("TT rank u_{i} violates u_i <= min(u_(i-1) n_i, u_(i+1) n_(i+1))"));
    }
    let full: Vec<usize> = std::iter::once(1).chain(u.iter().copied()).chain(std::iter::once(1)).collect();
    let mut rng = substream(seed, &[tag::FACTORS]);
    let cores: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..full[i] * dims[i] * full[i + 1]).map(|_| rng.random::<f64>()).collect())
        .collect();
    let maps = IndexMaps::new(dims);
    let values = (0..maps.total())
        .map(|l| {
            let x = maps.coord(l);
            let mut row = vec![1.0];
            for i in 0..d {
                let (a, n, b) = (full[i], dims[i], full[i + 1]);
                let mut next = vec![0.0; b];
                for (k, &rk) in row.iter().enumerate() {
                    let base = (k * n + x[i]) * b;
                    for (o, &c) in next.iter_mut().zip(&cores[i][base..base + b]) {
                        *o += rk * c;
                    }
                }
                debug_assert_eq!(row.len(), a);
                row = next;
            }
            row[0]
        })
        .collect();
    Ok(GroundTruth {
        model: Model::Tt,
        dims: dims.to_vec(),
        rank: RankSpec::Tt(u.to_vec()),
        values,
        factors: Factors::Tt { cores, ranks: u.to_vec() },
    })
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

// ---------------------------------------------------------------------------
// Rank
// ---------------------------------------------------------------------------

/// Count of singular values above `tolerance * sigma_1`.
pub fn numerical_rank(matrix: &DMatrix<f64>, tolerance: f64) -> usize {
    rank_of(&singular_values(matrix), tolerance)
}

fn rank_of(sv: &[f64], tolerance: f64) -> usize {
    match sv.first() {
        Some(&top) if top > 0.0 => sv.iter().filter(|&&s| s > tolerance * top).count(),
        _ => 0,
    }
}

/// Singular values in descending order.
pub fn singular_values(matrix: &DMatrix<f64>) -> Vec<f64> {
    if matrix.is_empty() {
        return Vec::new();
    }
    let mut sv: Vec<f64> = matrix.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Mode-`mode` matricization (1-based mode, its index as row) of a row-major
/// tensor.
pub fn matricization(values: &[f64], dims: &[usize], mode: usize) -> DMatrix<f64> {
    let maps = IndexMaps::new(dims);
    let mut m = DMatrix::zeros(dims[mode - 1], maps.without(mode));
    for (l, &v) in values.iter().enumerate() {
        let (r, c) = maps.matricize(mode, &maps.coord(l));
        m[(r, c)] = v;
    }
    m
}

/// i-th unfolding (first i modes as row, 1 <= i < d) of a row-major tensor.
/// Row-major order makes this a plain reshape.
pub fn unfolding(values: &[f64], dims: &[usize], i: usize) -> DMatrix<f64> {
    let rows: usize = dims[..i].iter().product();
    let cols: usize = dims[i..].iter().product();
    DMatrix::from_row_slice(rows, cols, values)
}

/// Rank spec read off a completed array: matrix rank, Tucker matricization
/// ranks of the modes after `split`, or TT unfolding ranks. CP rank is not a
/// function of the unfoldings and must be supplied by the caller.
pub fn completion_rank(values: &[f64], dims: &[usize], model: Model, split: Option<usize>, tolerance: f64) -> Result<RankSpec> {
    let total: usize = dims.iter().product();
    if values.len() != total {
        return arg_err(format!("completion has {} entries, dims need {total}", values.len()));
    }
    let d = dims.len();
    match model {
        Model::SingleView if d == 2 => Ok(RankSpec::Single(numerical_rank(&unfolding(values, dims, 1), tolerance))),
        Model::Tucker => {
            let split = split.ok_or_else(|| Error::Argument("Tucker needs a split".into()))?;
            if split == 0 || split >= d {
                return arg_err(format!("split must lie in 1..{d}"));
            }
            let ranks = (split + 1..=d).map(|i| numerical_rank(&matricization(values, dims, i), tolerance)).collect();
            Ok(RankSpec::Tucker { split, ranks })
        }
        Model::Tt if d >= 2 => Ok(RankSpec::Tt((1..d).map(|i| numerical_rank(&unfolding(values, dims, i), tolerance)).collect())),
        Model::Cp => arg_err("CP rank cannot be read from unfoldings; pass it explicitly"),
        _ => arg_err(format!("model {model} does not apply to dims {dims:?}")),
    }
}

// ---------------------------------------------------------------------------
// Singular value thresholding
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverParams {
    /// Shrinkage threshold; `None` means 5·sqrt(n1·n2).
    pub tau: Option<f64>,
    /// Step size; `None` means 1.2 / (observed fraction).
    pub delta: Option<f64>,
    pub max_iterations: usize,
    /// Relative Frobenius misfit on observed entries that counts as converged.
    pub tolerance: f64,
    /// Relative singular-value cutoff for the numerical rank.
    pub rank_tolerance: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams { tau: None, delta: None, max_iterations: 500, tolerance: 1e-4, rank_tolerance: 1e-6 }
    }
}

impl SolverParams {
    fn validate(&self) -> Result<()> {
        let positive = |x: Option<f64>| x.is_none_or(|v| v > 0.0 && v.is_finite());
        if !positive(self.tau) || !positive(self.delta) {
            return arg_err("tau and delta must be positive");
        }
        if self.max_iterations == 0 || !(self.tolerance > 0.0) {
            return arg_err("max_iterations and tolerance must be positive");
        }
        if !(self.rank_tolerance > 0.0 && self.rank_tolerance < 1.0) {
            return arg_err("rank tolerance must lie in (0,1)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompletionResult {
    pub dims: Vec<usize>,
    /// Row-major completed matrix.
    #[serde(skip)]
    pub completed: Vec<f64>,
    /// Max-abs misfit on observed entries.
    pub residual: f64,
    /// Relative Frobenius misfit on observed entries.
    pub relative_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// False when the relative misfit ever increased between iterations.
    pub monotone: bool,
    pub numerical_rank: usize,
    pub singular_values: Vec<f64>,
    pub tau: f64,
    pub delta: f64,
    pub rank_tolerance: f64,
}

/// Left singular vectors (columns) and singular values of `y`, descending,
/// from the eigen decomposition of `y y^T`.
fn exact_spectrum(y: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    sorted_pairs(SymmetricEigen::new(y * y.transpose()), None)
}

/// One step of subspace iteration from `start`, followed by Rayleigh-Ritz.
fn ritz_spectrum(y: &DMatrix<f64>, start: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let w = y * (y.transpose() * start);
    let q = w.qr().q();
    let b = q.transpose() * y;
    sorted_pairs(SymmetricEigen::new(&b * b.transpose()), Some(&q))
}

fn sorted_pairs(eig: SymmetricEigen<f64, nalgebra::Dyn>, lift: Option<&DMatrix<f64>>) -> (DMatrix<f64>, Vec<f64>) {
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vectors = eig.eigenvectors.select_columns(&order);
    let sigmas = order.iter().map(|&i| eig.eigenvalues[i].max(0.0).sqrt()).collect();
    match lift {
        Some(q) => (q * vectors, sigmas),
        None => (vectors, sigmas),
    }
}

/// Soft-thresholded `y`, kept in factored form `scaled * basis^T * y`, where
/// `basis` holds the left singular vectors with sigma > tau and `scaled`
/// the same vectors times `1 - tau/sigma`.
struct Shrink {
    basis: DMatrix<f64>,
    scaled: DMatrix<f64>,
}

impl Shrink {
    fn new(vectors: &DMatrix<f64>, sigmas: &[f64], tau: f64) -> Self {
        let k = sigmas.iter().take_while(|&&s| s > tau).count();
        let basis = vectors.columns(0, k).into_owned();
        let mut scaled = basis.clone();
        for (c, &s) in sigmas[..k].iter().enumerate() {
            scaled.column_mut(c).scale_mut(1.0 - tau / s);
        }
        Shrink { basis, scaled }
    }

    fn rank(&self) -> usize {
        self.basis.ncols()
    }

    fn apply(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        &self.scaled * (self.basis.transpose() * y)
    }

    /// Entries of the shrunk matrix at `(row, col)` positions only.
    fn sample(&self, y: &DMatrix<f64>, at: &[(usize, usize)]) -> Vec<f64> {
        let k = self.rank();
        if k == 0 {
            return vec![0.0; at.len()];
        }
        let z = self.basis.transpose() * y;
        at.iter().map(|&(i, j)| (0..k).map(|l| self.scaled[(i, l)] * z[(l, j)]).sum()).collect()
    }
}

/// Warm-started estimate of the leading singular subspace. The block keeps
/// a few more columns than the current shrinkage rank and grows until its
/// smallest Ritz value falls below tau.
struct Subspace {
    block: DMatrix<f64>,
    probe: Stream,
}

const PAD: usize = 4;

impl Subspace {
    fn new(vectors: &DMatrix<f64>, sigmas: &[f64], tau: f64) -> Self {
        let mut sub = Subspace { block: DMatrix::zeros(0, 0), probe: substream(0, &[tag::PROBE]) };
        sub.reset(vectors, sigmas, tau);
        sub
    }

    fn reset(&mut self, vectors: &DMatrix<f64>, sigmas: &[f64], tau: f64) {
        let k = sigmas.iter().take_while(|&&s| s > tau).count();
        self.block = vectors.columns(0, (k + PAD).min(vectors.ncols())).into_owned();
    }

    fn step(&mut self, y: &DMatrix<f64>, tau: f64) -> Shrink {
        let n = y.nrows();
        loop {
            let (vectors, sigmas) = ritz_spectrum(y, &self.block);
            let b = sigmas.len();
            if b == n || sigmas[b - 1] <= tau {
                let k = sigmas.iter().take_while(|&&s| s > tau).count();
                let shrink = Shrink::new(&vectors, &sigmas, tau);
                self.block = vectors.columns(0, (k + PAD).min(b)).into_owned();
                return shrink;
            }
            let extra = PAD.min(n - b);
            let noise = DMatrix::from_fn(n, extra, |_, _| self.probe.random::<f64>() - 0.5);
            let mut grown = DMatrix::zeros(n, b + extra);
            grown.columns_mut(0, b).copy_from(&vectors);
            grown.columns_mut(b, extra).copy_from(&noise);
            self.block = grown;
        }
    }
}

/// Iterations between exact refreshes of the tracked subspace.
const REFRESH: usize = 50;

struct Fit {
    misfit: Vec<f64>,
    relative: f64,
}

fn fit(state: &Shrink, y: &DMatrix<f64>, at: &[(usize, usize)], target: &[f64], norm: f64) -> Fit {
    let fitted = state.sample(y, at);
    let misfit: Vec<f64> = target.iter().zip(&fitted).map(|(t, f)| t - f).collect();
    let relative = misfit.iter().map(|e| e * e).sum::<f64>().sqrt() / norm;
    Fit { misfit, relative }
}

/// Approximate nuclear-norm completion of an observed matrix by singular
/// value thresholding.
pub fn svt_complete(observed: &ObservedData, params: &SolverParams) -> Result<CompletionResult> {
    params.validate()?;
    let pattern = observed.pattern();
    let dims = pattern.dims().to_vec();
    let [n1, n2] = dims[..] else {
        return arg_err(format!("the solver completes matrices only, got dims {dims:?}"));
    };
    if pattern.is_empty() {
        return Err(Error::Precondition("no observed entries".into()));
    }
    // Work with rows <= cols so the Gram matrix is the smaller one.
    let flip = n1 > n2;
    let (rows, cols) = if flip { (n2, n1) } else { (n1, n2) };
    let at: Vec<(usize, usize)> = pattern
        .coords()
        .map(|c| if flip { (c[1], c[0]) } else { (c[0], c[1]) })
        .collect();
    let target = observed.values();
    let p_hat = at.len() as f64 / (n1 * n2) as f64;
    let tau = params.tau.unwrap_or(5.0 * ((n1 * n2) as f64).sqrt());
    let delta = params.delta.unwrap_or(1.2 / p_hat);
    let norm = target.iter().map(|v| v * v).sum::<f64>().sqrt();

    let mut result = CompletionResult {
        dims: dims.clone(),
        completed: vec![0.0; n1 * n2],
        residual: target.iter().fold(0.0, |m, v| m.max(v.abs())),
        relative_residual: if norm > 0.0 { 1.0 } else { 0.0 },
        iterations: 0,
        converged: norm == 0.0,
        monotone: true,
        numerical_rank: 0,
        singular_values: Vec::new(),
        tau,
        delta,
        rank_tolerance: params.rank_tolerance,
    };
    if norm == 0.0 {
        return Ok(result);
    }

    let mut y = DMatrix::zeros(rows, cols);
    for (&(i, j), &v) in at.iter().zip(target) {
        y[(i, j)] = v;
    }
    // Kick-start: skip the iterations in which every singular value of Y
    // would still be below tau.
    let (vectors, mut sigmas) = exact_spectrum(&y);
    let k0 = (tau / (delta * sigmas[0])).ceil().max(1.0);
    y *= k0 * delta;
    sigmas.iter_mut().for_each(|s| *s *= k0 * delta);

    let mut sub = Subspace::new(&vectors, &sigmas, tau);
    let mut state = Shrink::new(&vectors, &sigmas, tau);
    let mut exact = true;
    let mut last = f64::INFINITY;
    for it in 1..=params.max_iterations {
        let mut current = fit(&state, &y, &at, target, norm);
        if !exact && (current.relative <= params.tolerance || it == params.max_iterations) {
            let (vectors, sigmas) = exact_spectrum(&y);
            state = Shrink::new(&vectors, &sigmas, tau);
            sub.reset(&vectors, &sigmas, tau);
            current = fit(&state, &y, &at, target, norm);
        }
        result.iterations = it;
        result.relative_residual = current.relative;
        result.residual = current.misfit.iter().fold(0.0, |m, e| m.max(e.abs()));
        if current.relative > last {
            result.monotone = false;
        }
        last = current.relative;
        if current.relative <= params.tolerance {
            result.converged = true;
            break;
        }
        if it == params.max_iterations {
            break;
        }
        for (&(i, j), e) in at.iter().zip(&current.misfit) {
            y[(i, j)] += delta * e;
        }
        if it % REFRESH == 0 {
            let (vectors, sigmas) = exact_spectrum(&y);
            state = Shrink::new(&vectors, &sigmas, tau);
            sub.reset(&vectors, &sigmas, tau);
            exact = true;
        } else {
            state = sub.step(&y, tau);
            exact = false;
        }
    }

    let x = state.apply(&y);
    let x = if flip { x.transpose() } else { x };
    result.singular_values = singular_values(&x);
    result.numerical_rank = rank_of(&result.singular_values, params.rank_tolerance);
    result.completed = row_major(&x);
    Ok(result)
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CertifyMode {
    Deterministic,
    Probabilistic { p: f64, epsilon: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PipelineReport {
    pub certificate: Certificate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub completion: Option<CompletionResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<ThresholdReport>,
    /// Threshold minus p when the probabilistic test fails.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deficit: Option<f64>,
    pub diagnostics: Vec<String>,
}

/// Probabilistic-mode certificate: the claim holds when `p` passes the
/// model's threshold and its preconditions hold.
pub fn probabilistic_certificate(dims: &[usize], rank: &RankSpec, p: f64, epsilon: f64) -> Result<PipelineReport> {
    let report = probabilistic::required_prob(dims, rank, epsilon)?;
    let mut cert = blank_certificate(rank.clone(), 0, false);
    let mut diagnostics = Vec::new();
    let passes = report.passes(p);
    if !report.preconditions_ok {
        diagnostics.push(format!("preconditions fail: {}", report.failed_preconditions().join("; ")));
    }
    cert.claim = if passes && report.preconditions_ok { Claim::UpperBoundHighProb } else { Claim::NoClaim };
    let deficit = (!passes).then_some(report.p_threshold - p);
    Ok(PipelineReport { certificate: cert, completion: None, threshold: Some(report), deficit, diagnostics })
}

/// Certifies a completion's rank spec against the sampling pattern.
pub fn certify_completion(pattern: &SamplingPattern, rank: &RankSpec, mode: CertifyMode, budget: u64) -> Result<PipelineReport> {
    match mode {
        CertifyMode::Deterministic => {
            let certificate = deterministic::certify_bound(pattern, rank, false, budget)?;
            Ok(PipelineReport { certificate, completion: None, threshold: None, deficit: None, diagnostics: Vec::new() })
        }
        CertifyMode::Probabilistic { p, epsilon } => probabilistic_certificate(pattern.dims(), rank, p, epsilon),
    }
}

/// Completes a matrix, reads off its numerical rank and certifies it.
pub fn estimate_rank_pipeline(observed: &ObservedData, mode: CertifyMode, params: &SolverParams, budget: u64) -> Result<PipelineReport> {
    let completion = svt_complete(observed, params)?;
    let pattern = observed.pattern();
    let r_hat = completion.numerical_rank;
    let mut diagnostics = Vec::new();
    let mut report = if r_hat == 0 {
        diagnostics.push("completion has numerical rank 0".to_string());
        let cert = blank_certificate(RankSpec::Single(0), 0, false);
        PipelineReport { certificate: cert, completion: None, threshold: None, deficit: None, diagnostics: Vec::new() }
    } else {
        certify_completion(pattern, &RankSpec::Single(r_hat), mode, budget)?
    };
    if !completion.converged {
        diagnostics.push(format!(
            "solver did not converge in {} iterations (relative residual {:.3e})",
            completion.iterations, completion.relative_residual
        ));
        report.certificate.claim = Claim::NoClaim;
    }
    report.diagnostics.extend(diagnostics);
    report.completion = Some(completion);
    Ok(report)
}

// ---------------------------------------------------------------------------
// Gap experiment
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapRun {
    pub run: usize,
    pub seed: u64,
    pub r: usize,
    pub r_hat: usize,
    pub gap: i64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapSummary {
    pub n1: usize,
    pub n2: usize,
    pub r: usize,
    pub p: f64,
    pub runs: Vec<GapRun>,
    pub d_min: i64,
    pub d_max: i64,
}

/// Seed of run `run` at rank `r`.
pub fn run_seed(seed: u64, r: usize, run: usize) -> u64 {
    derive_seed(seed, &[tag::RUN, r as u64, run as u64])
}

/// Generates, samples and completes `runs` rank-`r` matrices; each gap is
/// the completion's numerical rank minus `r`.
pub fn gap_experiment(n1: usize, n2: usize, r: usize, p: f64, runs: usize, seed: u64, params: &SolverParams) -> Result<GapSummary> {
    if runs == 0 {
        return arg_err("runs must be at least 1");
    }
    if !(p > 0.0 && p <= 1.0) {
        return arg_err(format!("p must lie in (0,1], got {p}"));
    }
    let records = (0..runs)
        .into_par_iter()
        .map(|run| -> Result<GapRun> {
            let s = run_seed(seed, r, run);
            let truth = random_low_rank_matrix(n1, n2, r, s)?;
            let pattern = bernoulli_pattern(&[n1, n2], p, s)?;
            let observed = truth.observe(&pattern)?;
            let result = svt_complete(&observed, params)?;
            Ok(GapRun {
                run,
                seed: s,
                r,
                r_hat: result.numerical_rank,
                gap: result.numerical_rank as i64 - r as i64,
                converged: result.converged,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let d_min = records.iter().map(|g| g.gap).min().unwrap_or(0);
    let d_max = records.iter().map(|g| g.gap).max().unwrap_or(0);
    Ok(GapSummary { n1, n2, r, p, runs: records, d_min, d_max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn numerical_rank_cutoff() {
        assert_eq!(numerical_rank(&DMatrix::zeros(3, 4), 1e-6), 0);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1e-12]));
        assert_eq!(numerical_rank(&d, 1e-6), 1);
    }

    #[test]
    fn low_rank_matrix_rank() {
        let g = random_low_rank_matrix(40, 60, 5, 1).unwrap();
        assert_eq!(numerical_rank(&g.as_matrix().unwrap(), 1e-6), 5);
        assert_eq!(g, random_low_rank_matrix(40, 60, 5, 1).unwrap());
        assert!(random_low_rank_matrix(4, 6, 5, 1).is_err());
    }

    #[test]
    fn tucker_factors_orthonormal() {
        let g = random_tucker_tensor(&[3, 3, 3], &[2, 2, 2], 1, 5).unwrap();
        let Factors::Tucker { factors, .. } = &g.factors else { panic!() };
        for t in factors {
            let gram = t.transpose() * t;
            assert_relative_eq!(gram, DMatrix::identity(2, 2), epsilon = 1e-12);
        }
        for i in 1..=3 {
            assert_eq!(numerical_rank(&matricization(&g.values, &g.dims, i), 1e-6), 2);
        }
        assert!(random_tucker_tensor(&[3, 3, 3], &[3, 1, 1], 1, 5).is_err());
    }

    #[test]
    fn tt_unfolding_ranks() {
        let g = random_tt_tensor(&[2, 2, 2], &[2, 1], 9).unwrap();
        let ranks = completion_rank(&g.values, &g.dims, Model::Tt, None, 1e-6).unwrap();
        assert_eq!(ranks, RankSpec::Tt(vec![2, 1]));
    }

    #[test]
    fn full_observation_is_identity() {
        let g = random_low_rank_matrix(20, 30, 3, 4).unwrap();
        let full = SamplingPattern::full(&[20, 30]).unwrap();
        let res = svt_complete(&g.observe(&full).unwrap(), &SolverParams::default()).unwrap();
        assert!(res.converged);
        assert_eq!(res.numerical_rank, 3);
        let err = res.completed.iter().zip(&g.values).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-3, "max error {err}");
    }

    #[test]
    fn zero_matrix_completes_to_zero() {
        let p = bernoulli_pattern(&[6, 7], 0.5, 2).unwrap();
        let obs = ObservedData::new(p.clone(), vec![0.0; p.count()]).unwrap();
        let res = svt_complete(&obs, &SolverParams::default()).unwrap();
        assert_eq!(res.numerical_rank, 0);
        assert!(res.completed.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rank_one_recovery() {
        for seed in 0..10 {
            let g = random_low_rank_matrix(50, 50, 1, seed).unwrap();
            let pat = bernoulli_pattern(&[50, 50], 0.7, seed + 100).unwrap();
            let res = svt_complete(&g.observe(&pat).unwrap(), &SolverParams::default()).unwrap();
            assert_eq!(res.numerical_rank, 1, "seed {seed}");
            let err = res.completed.iter().zip(&g.values).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(err < 1e-3, "seed {seed}: max error {err}");
        }
    }

    #[test]
    fn gap_is_zero_at_full_observation() {
        let s = gap_experiment(20, 40, 3, 1.0, 3, 7, &SolverParams::default()).unwrap();
        assert!(s.runs.iter().all(|g| g.gap == 0));
    }
}
