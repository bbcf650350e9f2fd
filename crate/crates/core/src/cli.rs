//! Command-line front end.
//!
//! Every artifact starts with an echo of the command's configuration: a
//! `# rankscope <command> {json}` line for text and CSV outputs, a `config`
//! field for JSON outputs. Identical configurations give identical bytes.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 when a verdict was
//! left undecided because the search budget ran out.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::completion::{
    self, completion_rank, gap_experiment, numerical_rank, svt_complete, CertifyMode, PipelineReport,
    SolverParams,
};
use crate::constraints::{self, format_constraints};
use crate::deterministic::{self, DEFAULT_BUDGET};
use crate::error::{arg_err, Error, Result};
use crate::patterns::{
    bernoulli_pattern, format_pattern, format_values, per_column_pattern, read_pattern, read_values,
    ObservedData, SamplingPattern,
};
use crate::probabilistic::{heatmap_single, min_epsilon_single, required_prob, required_prob_single};
use crate::rank::{tt_rank_grid, tucker_rank_grid, Model, RankSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_UNDECIDED: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "rankscope", version, about = "Rank certification for partially observed matrices and tensors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a Bernoulli or fixed-count-per-column pattern.
    GenPattern(GenPatternArgs),
    /// Write the constraint matrix/tensor of a pattern at a rank.
    BuildConstraints(BuildArgs),
    /// Decide membership in S_Ω and the bound a completion of that rank certifies.
    Certify(CertifyArgs),
    /// Largest certifiable scalar rank, or the certifiable rank vectors.
    MaxRank(MaxRankArgs),
    /// Sampling-probability threshold and success floor.
    Threshold(ThresholdArgs),
    /// Smallest epsilon for which p passes the single-view threshold.
    MinEpsilon(MinEpsilonArgs),
    /// Success floors over a (p, r) grid.
    Heatmap(HeatmapArgs),
    /// Complete an observed matrix by singular value thresholding.
    Complete(CompleteArgs),
    /// Complete (or ingest a completion), read its rank and certify it.
    Estimate(EstimateArgs),
    /// Rank gaps of completions of synthetic low-rank matrices.
    Gap(GapArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Args, Debug, Serialize)]
struct RankArgs {
    #[arg(long, value_parser = parse_model)]
    model: Model,
    /// Scalar rank (single, cp).
    #[arg(long)]
    rank: Option<usize>,
    /// Rank vector: r1,r2,r (multi), m_{j+1},...,m_d (tucker), u_1,...,u_{d-1} (tt).
    #[arg(long, value_delimiter = ',')]
    rank_vec: Option<Vec<usize>>,
    /// Tucker split j.
    #[arg(long)]
    split: Option<usize>,
}

fn parse_model(s: &str) -> std::result::Result<Model, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl RankArgs {
    fn spec(&self) -> Result<RankSpec> {
        let scalar = || self.rank.ok_or_else(|| Error::Argument(format!("--rank is required for {}", self.model)));
        let vector = || {
            self.rank_vec
                .clone()
                .ok_or_else(|| Error::Argument(format!("--rank-vec is required for {}", self.model)))
        };
        Ok(match self.model {
            Model::SingleView => RankSpec::Single(scalar()?),
            Model::Cp => RankSpec::Cp(scalar()?),
            Model::MultiView => match vector()?[..] {
                [r1, r2, r] => RankSpec::MultiView { r1, r2, r },
                _ => return arg_err("multi-view --rank-vec is r1,r2,r"),
            },
            Model::Tucker => RankSpec::Tucker {
                split: self.split.ok_or_else(|| Error::Argument("--split is required for tucker".into()))?,
                ranks: vector()?,
            },
            Model::Tt => RankSpec::Tt(vector()?),
        })
    }
}

#[derive(Args, Debug, Serialize)]
struct SolverArgs {
    /// Shrinkage threshold (default 5·sqrt(n1·n2)).
    #[arg(long)]
    tau: Option<f64>,
    /// Step size (default 1.2 / observed fraction).
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Relative misfit on observed entries that counts as converged.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Relative singular-value cutoff for the numerical rank.
    #[arg(long, default_value_t = 1e-6)]
    rank_tol: f64,
}

impl SolverArgs {
    fn params(&self) -> SolverParams {
        SolverParams {
            tau: self.tau,
            delta: self.delta,
            max_iterations: self.max_iter,
            tolerance: self.tol,
            rank_tolerance: self.rank_tol,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct GenPatternArgs {
    #[arg(long, num_args = 1.., required = true)]
    dims: Vec<usize>,
    /// Observation probability per entry.
    #[arg(long, conflicts_with = "per_column")]
    p: Option<f64>,
    /// Observe exactly this many entries in every last-mode slice.
    #[arg(long)]
    per_column: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct BuildArgs {
    #[arg(long)]
    pattern: PathBuf,
    /// Second view's pattern (multi).
    #[arg(long)]
    second: Option<PathBuf>,
    #[command(flatten)]
    rank: RankArgs,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct CertifyArgs {
    #[arg(long)]
    pattern: PathBuf,
    #[arg(long)]
    second: Option<PathBuf>,
    #[command(flatten)]
    rank: RankArgs,
    /// The completion is known to have the least possible rank.
    #[arg(long)]
    minimal: bool,
    /// Limit on subset-search evaluations.
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct MaxRankArgs {
    #[arg(long)]
    pattern: PathBuf,
    #[arg(long, value_parser = parse_model)]
    model: Model,
    #[arg(long)]
    split: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ThresholdArgs {
    /// Tensor dims, or n n1 n2 for multi.
    #[arg(long, num_args = 1.., required = true)]
    dims: Vec<usize>,
    #[command(flatten)]
    rank: RankArgs,
    #[arg(long)]
    epsilon: f64,
    /// Report whether this sampling probability passes.
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct MinEpsilonArgs {
    #[arg(long)]
    n1: usize,
    /// Also report the success floor for this many columns.
    #[arg(long)]
    n2: Option<usize>,
    #[arg(long)]
    p: f64,
    #[arg(long)]
    rank: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct HeatmapArgs {
    #[arg(long)]
    n1: usize,
    #[arg(long)]
    n2: usize,
    /// start:stop:step, endpoints inclusive.
    #[arg(long)]
    p_grid: String,
    /// lo:hi, inclusive.
    #[arg(long)]
    r_grid: String,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct CompleteArgs {
    /// Observed entries in the values format.
    #[arg(long)]
    values: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
    /// Completed matrix, values format.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Solver summary, JSON.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum ModeArg {
    Deterministic,
    Probabilistic,
}

#[derive(Args, Debug, Serialize)]
struct EstimateArgs {
    /// Observed matrix entries; completed by singular value thresholding.
    #[arg(long, conflicts_with = "completion")]
    values: Option<PathBuf>,
    /// Sampling pattern of an externally completed array.
    #[arg(long, requires = "completion")]
    pattern: Option<PathBuf>,
    /// Externally completed array, values format.
    #[arg(long)]
    completion: Option<PathBuf>,
    /// Second view's pattern (multi).
    #[arg(long)]
    second: Option<PathBuf>,
    /// Second view's completion (multi).
    #[arg(long)]
    second_completion: Option<PathBuf>,
    #[arg(long, value_parser = parse_model, default_value = "single")]
    model: Model,
    /// CP rank of the supplied completion (not readable from unfoldings).
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    split: Option<usize>,
    #[arg(long, value_enum, default_value = "deterministic")]
    mode: ModeArg,
    /// Sampling probability (default: observed fraction).
    #[arg(long)]
    p: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: u64,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct GapArgs {
    #[arg(long)]
    n1: usize,
    #[arg(long)]
    n2: usize,
    /// lo:hi, inclusive.
    #[arg(long)]
    r_grid: String,
    #[arg(long)]
    p: f64,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Per-rank summary (d_min, d_max).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-run rows, CSV.
    #[arg(long)]
    runs_out: Option<PathBuf>,
}

// ---------------------------------------------------------------------------
// Grids
// ---------------------------------------------------------------------------

/// `start:stop:step` with both endpoints inclusive within 1e-12, a single
/// value, or a comma-separated list.
pub fn parse_real_grid(s: &str) -> Result<Vec<f64>> {
    let num = |t: &str| -> Result<f64> {
        t.trim().parse::<f64>().map_err(|_| Error::Argument(format!("not a number: {t:?}")))
    };
    let parts: Vec<&str> = s.split(':').collect();
    match parts[..] {
        [a, b, c] => {
            let (start, stop, step) = (num(a)?, num(b)?, num(c)?);
            if !(step > 0.0) || stop < start {
                return arg_err(format!("bad grid {s:?}: need step > 0 and start <= stop"));
            }
            let mut out = Vec::new();
            for k in 0.. {
                let v = start + k as f64 * step;
                if v > stop + 1e-12 {
                    break;
                }
                out.push((v * 1e12).round() / 1e12);
            }
            Ok(out)
        }
        [_] => s.split(',').map(num).collect(),
        _ => arg_err(format!("bad grid {s:?}: expected start:stop:step")),
    }
}

/// `lo:hi` inclusive, a single value, or a comma-separated list.
pub fn parse_int_grid(s: &str) -> Result<Vec<usize>> {
    let num = |t: &str| -> Result<usize> {
        t.trim().parse::<usize>().map_err(|_| Error::Argument(format!("not an integer: {t:?}")))
    };
    match s.split(':').collect::<Vec<_>>()[..] {
        [a, b] => {
            let (lo, hi) = (num(a)?, num(b)?);
            if lo > hi {
                return arg_err(format!("bad grid {s:?}: lo > hi"));
            }
            Ok((lo..=hi).collect())
        }
        [_] => s.split(',').map(num).collect(),
        _ => arg_err(format!("bad grid {s:?}: expected lo:hi")),
    }
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

fn header(command: &str, config: &impl Serialize) -> Result<String> {
    Ok(format!("# rankscope {command} {}\n", serde_json::to_string(config)?))
}

fn with_config(command: &str, config: &impl Serialize, body: impl Serialize) -> Result<String> {
    let mut cfg = serde_json::to_value(config)?;
    if let Value::Object(m) = &mut cfg {
        m.insert("command".into(), json!(command));
    }
    let mut doc = serde_json::to_value(body)?;
    match &mut doc {
        Value::Object(m) => {
            m.insert("config".into(), cfg);
        }
        other => doc = json!({ "config": cfg, "result": other.take() }),
    }
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    Ok(text)
}

fn emit(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn undecided_code(undecided: bool) -> i32 {
    if undecided { EXIT_UNDECIDED } else { EXIT_OK }
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn gen_pattern(a: &GenPatternArgs) -> Result<i32> {
    let pattern = match (a.p, a.per_column) {
        (Some(p), None) => bernoulli_pattern(&a.dims, p, a.seed)?,
        (None, Some(l)) => per_column_pattern(&a.dims, l, a.seed)?,
        _ => return arg_err("give exactly one of --p and --per-column"),
    };
    emit(a.out.as_ref(), &(header("gen-pattern", a)? + &format_pattern(&pattern)))?;
    Ok(EXIT_OK)
}

fn second_pattern(model: Model, second: Option<&PathBuf>) -> Result<Option<SamplingPattern>> {
    match (model, second) {
        (Model::MultiView, Some(p)) => Ok(Some(read_pattern(p)?)),
        (Model::MultiView, None) => arg_err("multi needs --second"),
        (_, Some(_)) => arg_err("--second applies to multi only"),
        (_, None) => Ok(None),
    }
}

fn build_constraints(a: &BuildArgs) -> Result<i32> {
    let pattern = read_pattern(&a.pattern)?;
    let second = second_pattern(a.rank.model, a.second.as_ref())?;
    let spec = a.rank.spec()?;
    let c = match &spec {
        RankSpec::Tucker { split, ranks } => {
            let anchors = constraints::select_tucker_anchor_set(&pattern, *split, ranks)?
                .ok_or_else(|| Error::Precondition("no valid anchor set exists".into()))?;
            constraints::build_constraint_tensor_tucker(&pattern, &anchors)?
        }
        _ => constraints::build(&pattern, second.as_ref(), &spec)?,
    };
    let text = match a.format {
        Format::Json => {
            let body = json!({
                "model": c.model(),
                "rank": c.rank(),
                "slice_dims": c.slice_dims(),
                "k": c.len(),
                "columns": c.columns(),
                "anchors": c.anchors().map(|s| &s.entries),
            });
            with_config("build-constraints", a, body)?
        }
        _ => header("build-constraints", a)? + &format_constraints(&c),
    };
    emit(a.out.as_ref(), &text)?;
    Ok(EXIT_OK)
}

fn certify(a: &CertifyArgs) -> Result<i32> {
    let pattern = read_pattern(&a.pattern)?;
    let second = second_pattern(a.rank.model, a.second.as_ref())?;
    let spec = a.rank.spec()?;
    let cert = match (&spec, &second) {
        (RankSpec::MultiView { r1, r2, r }, Some(s)) => {
            deterministic::certify_bound_multiview(&pattern, s, *r1, *r2, *r, a.budget)?
        }
        _ => deterministic::certify_bound(&pattern, &spec, a.minimal, a.budget)?,
    };
    emit(a.out.as_ref(), &with_config("certify", a, &cert)?)?;
    Ok(undecided_code(cert.is_unknown()))
}

fn max_rank(a: &MaxRankArgs) -> Result<i32> {
    let pattern = read_pattern(&a.pattern)?;
    let (body, undecided) = match a.model {
        Model::SingleView | Model::Cp => {
            let scan = deterministic::max_scalar_rank(&pattern, a.model, a.budget)?;
            let undecided = scan.search_exhausted;
            (serde_json::to_value(scan)?, undecided)
        }
        Model::Tt | Model::Tucker => {
            let grid: Vec<RankSpec> = if a.model == Model::Tt {
                tt_rank_grid(pattern.dims()).into_iter().map(RankSpec::Tt).collect()
            } else {
                let split = a.split.ok_or_else(|| Error::Argument("--split is required for tucker".into()))?;
                if split < 1 || split >= pattern.order() {
                    return arg_err(format!("split must lie in 1..{}", pattern.order()));
                }
                tucker_rank_grid(pattern.dims(), split)
                    .into_iter()
                    .map(|ranks| RankSpec::Tucker { split, ranks })
                    .collect()
            };
            let mut members = Vec::new();
            let mut undecided = false;
            for spec in grid {
                let cert = deterministic::in_s_omega(&pattern, &spec, a.budget)?;
                undecided |= cert.is_unknown();
                if cert.in_s {
                    let mut member = json!({ "rank": spec });
                    if let Some(hat) = cert.in_s_hat {
                        member["in_s_hat"] = json!(hat);
                    }
                    members.push(member);
                }
            }
            (json!({ "members": members, "search_exhausted": undecided }), undecided)
        }
        Model::MultiView => return arg_err("max-rank does not support multi"),
    };
    emit(a.out.as_ref(), &with_config("max-rank", a, body)?)?;
    Ok(undecided_code(undecided))
}

fn threshold(a: &ThresholdArgs) -> Result<i32> {
    let rep = required_prob(&a.dims, &a.rank.spec()?, a.epsilon)?;
    let mut body = serde_json::to_value(&rep)?;
    if let (Some(p), Value::Object(m)) = (a.p, &mut body) {
        m.insert("p".into(), json!(p));
        m.insert("passes".into(), json!(rep.passes(p)));
    }
    emit(a.out.as_ref(), &with_config("threshold", a, body)?)?;
    Ok(EXIT_OK)
}

fn min_epsilon(a: &MinEpsilonArgs) -> Result<i32> {
    let eps = min_epsilon_single(a.n1, a.p, a.rank)?;
    let mut body = json!({ "epsilon_min": eps, "feasible": eps.is_some() });
    if let (Some(n2), Some(e)) = (a.n2, eps) {
        let rep = required_prob_single(a.n1, n2, a.rank, e)?;
        body["success_floor"] = json!(rep.success_floor);
        body["preconditions_ok"] = json!(rep.preconditions_ok);
    }
    emit(a.out.as_ref(), &with_config("min-epsilon", a, body)?)?;
    Ok(EXIT_OK)
}

fn heatmap(a: &HeatmapArgs) -> Result<i32> {
    let h = heatmap_single(a.n1, a.n2, &parse_real_grid(&a.p_grid)?, &parse_int_grid(&a.r_grid)?)?;
    let text = match a.format {
        Format::Json => with_config("heatmap", a, &h)?,
        _ => {
            let mut s = header("heatmap", a)?;
            s.push_str("p,r,floor\n");
            for c in &h.cells {
                writeln!(s, "{},{},{}", c.p, c.r, c.floor).unwrap();
            }
            s
        }
    };
    emit(a.out.as_ref(), &text)?;
    Ok(EXIT_OK)
}

fn completed_data(dims: &[usize], values: &[f64]) -> Result<ObservedData> {
    ObservedData::new(SamplingPattern::full(dims)?, values.to_vec())
}

fn complete(a: &CompleteArgs) -> Result<i32> {
    let observed = read_values(&a.values)?;
    let res = svt_complete(&observed, &a.solver.params())?;
    let full = completed_data(&res.dims, &res.completed)?;
    let values_text = header("complete", a)? + &format_values(&full);
    let summary = with_config("complete", a, &res)?;
    match (&a.out, &a.summary) {
        (Some(out), summary_path) => {
            emit(Some(out), &values_text)?;
            emit(summary_path.as_ref(), &summary)?;
        }
        (None, Some(summary_path)) => {
            emit(None, &values_text)?;
            emit(Some(summary_path), &summary)?;
        }
        (None, None) => emit(None, &values_text)?,
    }
    Ok(EXIT_OK)
}

fn dense(data: &ObservedData) -> Result<Vec<f64>> {
    let pattern = data.pattern();
    if pattern.count() != pattern.index_maps().total() {
        return Err(Error::Validation("a completion must specify every entry".into()));
    }
    Ok(data.values().to_vec())
}

fn estimate(a: &EstimateArgs) -> Result<i32> {
    let params = a.solver.params();
    let mode_for = |pattern: &SamplingPattern| -> CertifyMode {
        match a.mode {
            ModeArg::Deterministic => CertifyMode::Deterministic,
            ModeArg::Probabilistic => CertifyMode::Probabilistic {
                p: a.p.unwrap_or(pattern.count() as f64 / pattern.index_maps().total() as f64),
                epsilon: a.epsilon,
            },
        }
    };
    let report: PipelineReport = if let Some(values) = &a.values {
        if a.model != Model::SingleView {
            return arg_err("--values completes matrices; use --pattern and --completion for other models");
        }
        let observed = read_values(values)?;
        completion::estimate_rank_pipeline(&observed, mode_for(observed.pattern()), &params, a.budget)?
    } else {
        let (Some(pattern_path), Some(completion_path)) = (&a.pattern, &a.completion) else {
            return arg_err("give --values, or --pattern with --completion");
        };
        let pattern = read_pattern(pattern_path)?;
        let completed = read_values(completion_path)?;
        if completed.pattern().dims() != pattern.dims() {
            return Err(Error::Validation("completion and pattern dims differ".into()));
        }
        let values = dense(&completed)?;
        let dims = pattern.dims().to_vec();
        match a.model {
            Model::MultiView => estimate_multiview(a, &pattern, &values, params.rank_tolerance, mode_for(&pattern))?,
            model => {
                let rank = match model {
                    Model::Cp => RankSpec::Cp(
                        a.rank.ok_or_else(|| Error::Argument("cp needs --rank (the completion's CP rank)".into()))?,
                    ),
                    _ => completion_rank(&values, &dims, model, a.split, params.rank_tolerance)?,
                };
                let mut report = completion::certify_completion(&pattern, &rank, mode_for(&pattern), a.budget)?;
                report.diagnostics.push(format!("completion rank {rank}"));
                report
            }
        }
    };
    let undecided = report.certificate.is_unknown();
    emit(a.out.as_ref(), &with_config("estimate", a, &report)?)?;
    Ok(undecided_code(undecided))
}

fn estimate_multiview(
    a: &EstimateArgs,
    first: &SamplingPattern,
    first_values: &[f64],
    tol: f64,
    mode: CertifyMode,
) -> Result<PipelineReport> {
    let (Some(second_path), Some(second_completion)) = (&a.second, &a.second_completion) else {
        return arg_err("multi needs --second and --second-completion");
    };
    let second = read_pattern(second_path)?;
    let second_values = dense(&read_values(second_completion)?)?;
    let (d1, d2) = (first.dims(), second.dims());
    if d1.len() != 2 || d2.len() != 2 || d1[0] != d2[0] || second_values.len() != d2[0] * d2[1] {
        return arg_err("multi views must be matrices with the same row count");
    }
    let n = d1[0];
    let v1 = nalgebra::DMatrix::from_row_slice(n, d1[1], first_values);
    let v2 = nalgebra::DMatrix::from_row_slice(n, d2[1], &second_values);
    let mut joint = nalgebra::DMatrix::zeros(n, d1[1] + d2[1]);
    joint.columns_mut(0, d1[1]).copy_from(&v1);
    joint.columns_mut(d1[1], d2[1]).copy_from(&v2);
    let (r1, r2, r) = (numerical_rank(&v1, tol), numerical_rank(&v2, tol), numerical_rank(&joint, tol));
    let rank = RankSpec::MultiView { r1, r2, r };
    let mut report = match mode {
        CertifyMode::Deterministic => PipelineReport {
            certificate: deterministic::certify_bound_multiview(first, &second, r1, r2, r, a.budget)?,
            completion: None,
            threshold: None,
            deficit: None,
            diagnostics: Vec::new(),
        },
        CertifyMode::Probabilistic { p, epsilon } => {
            completion::probabilistic_certificate(&[n, d1[1], d2[1]], &rank, p, epsilon)?
        }
    };
    report.diagnostics.push(format!("completion rank {rank}"));
    Ok(report)
}

fn gap(a: &GapArgs) -> Result<i32> {
    let params = a.solver.params();
    let ranks = parse_int_grid(&a.r_grid)?;
    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    for &r in &ranks {
        match gap_experiment(a.n1, a.n2, r, a.p, a.runs, a.seed, &params) {
            Ok(s) => summaries.push(s),
            Err(e) => failures.push(json!({ "r": r, "error": e.to_string() })),
        }
    }
    if let Some(path) = &a.runs_out {
        let mut s = header("gap", a)?;
        s.push_str("run,seed,r,r_hat,gap,converged\n");
        for g in summaries.iter().flat_map(|s| &s.runs) {
            writeln!(s, "{},{},{},{},{},{}", g.run, g.seed, g.r, g.r_hat, g.gap, g.converged).unwrap();
        }
        emit(Some(path), &s)?;
    }
    let text = match a.format {
        Format::Json => with_config("gap", a, json!({ "summaries": summaries, "failures": failures }))?,
        _ => {
            let mut s = header("gap", a)?;
            s.push_str("r,d_min,d_max,runs,converged\n");
            for g in &summaries {
                let converged = g.runs.iter().filter(|x| x.converged).count();
                writeln!(s, "{},{},{},{},{}", g.r, g.d_min, g.d_max, g.runs.len(), converged).unwrap();
            }
            for f in &failures {
                writeln!(s, "# r={} failed: {}", f["r"], f["error"].as_str().unwrap_or_default()).unwrap();
            }
            s
        }
    };
    emit(a.out.as_ref(), &text)?;
    Ok(EXIT_OK)
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("RANKSCOPE_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Argument(format!("RANKSCOPE_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return arg_err("RANKSCOPE_THREADS must be positive");
        }
        // Fails only if the pool already exists, e.g. on a second run() call.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let outcome = configure_threads().and_then(|()| match &cli.command {
        Command::GenPattern(a) => gen_pattern(a),
        Command::BuildConstraints(a) => build_constraints(a),
        Command::Certify(a) => certify(a),
        Command::MaxRank(a) => max_rank(a),
        Command::Threshold(a) => threshold(a),
        Command::MinEpsilon(a) => min_epsilon(a),
        Command::Heatmap(a) => heatmap(a),
        Command::Complete(a) => complete(a),
        Command::Estimate(a) => estimate(a),
        Command::Gap(a) => gap(a),
    });
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INVALID
        }
    }
}
