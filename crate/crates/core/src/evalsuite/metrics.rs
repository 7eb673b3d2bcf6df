use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::report::{LevelReport, MetricsReport};
use super::{EvalError, Prediction, PredictionSet};
use crate::domain::{ArgExpr, BenchmarkSample, GateConfig, ToolCall, ToolChain};
use crate::par::{self, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Per-sample scores averaged over scored samples.
    #[default]
    Macro,
    /// Counts pooled over scored samples before dividing.
    Micro,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgsGranularity {
    /// A sample is correct iff every correctly named tool has correct args.
    #[default]
    Sample,
    /// Each correctly named tool counts on its own.
    Tool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalOptions {
    pub boundary: GateConfig,
    pub averaging: Averaging,
    pub args: ArgsGranularity,
    pub levels: bool,
}

/// A prediction paired with its ground-truth sample.
#[derive(Debug, Clone, Copy)]
pub struct Aligned<'a> {
    pub pred: &'a Prediction,
    pub gt: &'a BenchmarkSample,
}

/// Pairs predictions with samples, in dataset order. Ids must match exactly.
pub fn align<'a>(preds: &'a PredictionSet, gt: &'a [BenchmarkSample]) -> Result<Vec<Aligned<'a>>, EvalError> {
    let gt_ids: HashSet<&str> = gt.iter().map(|s| s.id.as_str()).collect();
    let missing: Vec<String> = gt
        .iter()
        .filter(|s| preds.get(&s.id).is_none())
        .map(|s| s.id.clone())
        .collect();
    let extra: Vec<String> = preds
        .iter()
        .filter(|p| !gt_ids.contains(p.id.as_str()))
        .map(|p| p.id.clone())
        .collect();
    if preds.is_empty() || !missing.is_empty() || !extra.is_empty() {
        return Err(EvalError::IdMismatch { missing, extra });
    }
    Ok(gt
        .iter()
        .map(|s| Aligned {
            pred: preds.get(&s.id).expect("ids checked"),
            gt: s,
        })
        .collect())
}

/// Argument value after normalization: literals trimmed and case-folded,
/// references kept structurally.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NormArg {
    Literal(String),
    Ref { tool: String, field: String },
}

pub fn normalize_args(call: &ToolCall) -> BTreeMap<String, NormArg> {
    call.args
        .iter()
        .map(|(k, v)| {
            let n = match v {
                ArgExpr::Literal(s) => NormArg::Literal(s.trim().to_lowercase()),
                ArgExpr::ResultRef { tool, field } => NormArg::Ref {
                    tool: tool.clone(),
                    field: field.clone(),
                },
            };
            (k.clone(), n)
        })
        .collect()
}

/// The chain-length bucket: 0–1 calls is level 1, 2 is level 2, 3 or more
/// is level 3.
pub fn level_of(chain_len: usize) -> u8 {
    match chain_len {
        0 | 1 => 1,
        2 => 2,
        _ => 3,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Detection {
    Hit,
    Missed,
    False,
}

/// Everything the aggregates need from one sample.
#[derive(Debug, Clone, PartialEq)]
struct SampleScore {
    detection: Detection,
    sq_err: u64,
    /// (|pred ∩ gt|, |pred|, |gt|) over name sets; None when gt is empty.
    names: Option<(usize, usize, usize)>,
    /// (all matched tools correct, matched tools correct, matched tools);
    /// None when nothing is scored.
    args: Option<(bool, usize, usize)>,
    failure: bool,
    level: u8,
}

fn names(chain: &ToolChain) -> BTreeSet<&str> {
    chain.tool_names().collect()
}

fn calls_of(chain: &ToolChain, name: &str) -> Vec<BTreeMap<String, NormArg>> {
    let mut v: Vec<_> = chain
        .calls
        .iter()
        .filter(|c| c.name == name)
        .map(normalize_args)
        .collect();
    v.sort();
    v
}

fn score_sample(a: &Aligned<'_>, boundary: GateConfig) -> SampleScore {
    let (p, g) = (a.pred, &a.gt.annotation);
    let theta = boundary.threshold();
    let detection = match (g.score().value() >= theta, p.score.value() >= theta) {
        (true, false) => Detection::Missed,
        (false, true) => Detection::False,
        _ => Detection::Hit,
    };
    let diff = i64::from(p.score.value()) - i64::from(g.score().value());
    let (pn, gn) = (names(&p.chain), names(g.chain()));
    let inter: Vec<&str> = pn.intersection(&gn).copied().collect();
    let names = (!gn.is_empty()).then_some((inter.len(), pn.len(), gn.len()));
    let args = (!gn.is_empty() && !inter.is_empty()).then(|| {
        let ok = inter
            .iter()
            .filter(|n| calls_of(&p.chain, n) == calls_of(g.chain(), n))
            .count();
        (ok == inter.len(), ok, inter.len())
    });
    SampleScore {
        detection,
        sq_err: (diff * diff) as u64,
        names,
        args,
        failure: p.failure,
        level: level_of(g.chain().len()),
    }
}

/// Sum of values in a fixed order, so the total does not depend on the
/// order samples were scored in.
fn stable_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.into_iter().sum()
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProactiveMetrics {
    pub n: usize,
    pub hits: usize,
    pub missed: usize,
    pub false_detections: usize,
    pub acc_p: f64,
    pub md: f64,
    pub fd: f64,
    pub rmse: f64,
}

fn proactive_of(scores: &[&SampleScore]) -> ProactiveMetrics {
    let n = scores.len();
    let count = |d| scores.iter().filter(|s| s.detection == d).count();
    let (hits, missed, false_detections) = (count(Detection::Hit), count(Detection::Missed), count(Detection::False));
    let sq: u64 = scores.iter().map(|s| s.sq_err).sum();
    ProactiveMetrics {
        n,
        hits,
        missed,
        false_detections,
        acc_p: ratio(hits, n),
        md: ratio(missed, n),
        fd: ratio(false_detections, n),
        rmse: if n == 0 { 0.0 } else { (sq as f64 / n as f64).sqrt() },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolMetrics {
    pub n_scored: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

fn tools_of(scores: &[&SampleScore], averaging: Averaging) -> ToolMetrics {
    let scored: Vec<(usize, usize, usize)> = scores.iter().filter_map(|s| s.names).collect();
    let n = scored.len();
    if n == 0 {
        return ToolMetrics {
            n_scored: 0,
            precision: None,
            recall: None,
            f1: None,
        };
    }
    let (p, r, f) = match averaging {
        Averaging::Macro => {
            let mean =
                |f: &dyn Fn(&(usize, usize, usize)) -> f64| stable_sum(scored.iter().map(f).collect()) / n as f64;
            (
                mean(&|&(i, p, _)| ratio(i, p)),
                mean(&|&(i, _, g)| ratio(i, g)),
                // 2PR/(P+R) with P = i/p and R = i/g simplifies to 2i/(p+g).
                mean(&|&(i, p, g)| ratio(2 * i, p + g)),
            )
        }
        Averaging::Micro => {
            let (i, p, g) = scored
                .iter()
                .fold((0, 0, 0), |acc, s| (acc.0 + s.0, acc.1 + s.1, acc.2 + s.2));
            (ratio(i, p), ratio(i, g), ratio(2 * i, p + g))
        }
    };
    ToolMetrics {
        n_scored: n,
        precision: Some(p),
        recall: Some(r),
        f1: Some(f),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArgsMetrics {
    /// Samples (sample granularity) or matched tools (tool granularity).
    pub n_scored: usize,
    pub n_correct: usize,
    pub acc_args: Option<f64>,
}

fn args_of(scores: &[&SampleScore], granularity: ArgsGranularity) -> ArgsMetrics {
    let scored: Vec<(bool, usize, usize)> = scores.iter().filter_map(|s| s.args).collect();
    let (n_correct, n_scored) = match granularity {
        ArgsGranularity::Sample => (scored.iter().filter(|s| s.0).count(), scored.len()),
        ArgsGranularity::Tool => (scored.iter().map(|s| s.1).sum(), scored.iter().map(|s| s.2).sum()),
    };
    ArgsMetrics {
        n_scored,
        n_correct,
        acc_args: (n_scored > 0).then(|| ratio(n_correct, n_scored)),
    }
}

fn report_of(scores: &[&SampleScore], opts: &EvalOptions) -> MetricsReport {
    let pm = proactive_of(scores);
    let tm = tools_of(scores, opts.averaging);
    let am = args_of(scores, opts.args);
    MetricsReport {
        n_samples: pm.n,
        boundary: opts.boundary.threshold(),
        averaging: opts.averaging,
        args_granularity: opts.args,
        hits: pm.hits,
        missed: pm.missed,
        false_detections: pm.false_detections,
        acc_p: pm.acc_p,
        md: pm.md,
        fd: pm.fd,
        rmse: pm.rmse,
        precision: tm.precision,
        recall: tm.recall,
        f1: tm.f1,
        n_tool_scored: tm.n_scored,
        acc_args: am.acc_args,
        n_args_scored: am.n_scored,
        n_prediction_failures: scores.iter().filter(|s| s.failure).count(),
        levels: None,
    }
}

const LEVEL_LABELS: [&str; 3] = ["0-1", "2", "3+"];

fn levels_of(scores: &[SampleScore], opts: &EvalOptions) -> Vec<LevelReport> {
    (1..=3u8)
        .map(|level| {
            let subset: Vec<&SampleScore> = scores.iter().filter(|s| s.level == level).collect();
            LevelReport {
                level,
                chain_lengths: LEVEL_LABELS[usize::from(level - 1)].to_owned(),
                n_samples: subset.len(),
                report: (!subset.is_empty()).then(|| report_of(&subset, opts)),
            }
        })
        .collect()
}

fn scores(
    preds: &PredictionSet,
    gt: &[BenchmarkSample],
    boundary: GateConfig,
    mode: Execution,
) -> Result<Vec<SampleScore>, EvalError> {
    let aligned = align(preds, gt)?;
    Ok(par::map(mode, &aligned, |a| score_sample(a, boundary)))
}

/// The full metric suite.
pub fn evaluate(
    preds: &PredictionSet,
    gt: &[BenchmarkSample],
    opts: &EvalOptions,
    mode: Execution,
) -> Result<MetricsReport, EvalError> {
    let scores = scores(preds, gt, opts.boundary, mode)?;
    let all: Vec<&SampleScore> = scores.iter().collect();
    let mut report = report_of(&all, opts);
    if opts.levels {
        report.levels = Some(levels_of(&scores, opts));
    }
    Ok(report)
}

/// Acc-P, MD, FD and RMSE with both sides binarized at `boundary`.
pub fn proactive_metrics(
    preds: &PredictionSet,
    gt: &[BenchmarkSample],
    boundary: GateConfig,
) -> Result<ProactiveMetrics, EvalError> {
    let scores = scores(preds, gt, boundary, Execution::Sequential)?;
    Ok(proactive_of(&scores.iter().collect::<Vec<_>>()))
}

/// Tool-name precision, recall and F1 over samples whose annotation has
/// a non-empty chain.
pub fn tool_metrics(
    preds: &PredictionSet,
    gt: &[BenchmarkSample],
    averaging: Averaging,
) -> Result<ToolMetrics, EvalError> {
    let scores = scores(preds, gt, GateConfig::default(), Execution::Sequential)?;
    Ok(tools_of(&scores.iter().collect::<Vec<_>>(), averaging))
}

/// Argument accuracy over correctly named tools.
pub fn args_accuracy(
    preds: &PredictionSet,
    gt: &[BenchmarkSample],
    granularity: ArgsGranularity,
) -> Result<ArgsMetrics, EvalError> {
    let scores = scores(preds, gt, GateConfig::default(), Execution::Sequential)?;
    Ok(args_of(&scores.iter().collect::<Vec<_>>(), granularity))
}

/// Full metric suite per chain-length level.
pub fn level_breakdown(
    preds: &PredictionSet,
    gt: &[BenchmarkSample],
    opts: &EvalOptions,
) -> Result<Vec<LevelReport>, EvalError> {
    let scores = scores(preds, gt, opts.boundary, Execution::Sequential)?;
    Ok(levels_of(&scores, opts))
}
