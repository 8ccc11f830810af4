//! Evaluation metrics, cross-task aggregation, and report files.
//!
//! Accuracy always means per-class accuracy: the mean over classes of the
//! within-class accuracy, so class imbalance cannot hide a collapsed class.
//!
//! Two conventions deserve a callout because published numbers for them vary:
//!
//! * The forgetting measure is the standard continual-learning form, the
//!   average over all but the last task of (best past accuracy minus final
//!   accuracy, clamped at zero), applied to the per-task harmonic accuracy
//!   matrix. The report records this choice in its `forgettingBasis` field;
//!   compare such numbers across systems by trend, not absolute value.
//! * The seen/unseen curve for AUSUC is swept exactly: the bias subtracted
//!   from seen-class scores only changes any decision at finitely many
//!   breakpoints (one per evaluation row), so the curve is a staircase and
//!   the area is a finite trapezoid sum with no resolution parameter.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::continual::Setting;
use crate::error::{Error, Result};
use crate::model::ClassId;
use crate::nn::Matrix;

/// Rounds to 9 decimal places, the report's serialized precision. Values
/// pass through this before they are stored so that a written report parses
/// back to exactly the in-memory object.
pub fn round9(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

/// Mean over the given classes of within-class accuracy. Every class must
/// contribute at least one labeled row.
pub fn per_class_accuracy(preds: &[ClassId], labels: &[ClassId], class_set: &[ClassId]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::shape(format!("{} predictions vs {} labels", preds.len(), labels.len())));
    }
    if class_set.is_empty() {
        return Err(Error::contract("per-class accuracy over an empty class set"));
    }
    let mut total = BTreeMap::new();
    let mut correct = BTreeMap::new();
    for (&p, &l) in preds.iter().zip(labels) {
        *total.entry(l).or_insert(0usize) += 1;
        if p == l {
            *correct.entry(l).or_insert(0usize) += 1;
        }
    }
    let mut sum = 0.0;
    for &c in class_set {
        let n = *total.get(&c).unwrap_or(&0);
        if n == 0 {
            return Err(Error::contract(format!("class {c} has no labeled rows")));
        }
        sum += *correct.get(&c).unwrap_or(&0) as f64 / n as f64;
    }
    Ok(sum / class_set.len() as f64)
}

/// Harmonic mean of a seen and an unseen accuracy; 0 when both are 0.
pub fn harmonic(s: f64, u: f64) -> f64 {
    if s + u == 0.0 {
        0.0
    } else {
        2.0 * s * u / (s + u)
    }
}

/// The three cross-task means. `m_ua` and `m_h` are absent when no task
/// contributes an unseen pool to the average.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aggregates {
    pub m_sa: f64,
    pub m_ua: Option<f64>,
    pub m_h: Option<f64>,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn require_defined(values: &[Option<f64>], upto: usize, what: &str) -> Result<Vec<f64>> {
    values[..upto]
        .iter()
        .enumerate()
        .map(|(i, v)| {
            v.ok_or_else(|| Error::contract(format!("{what} undefined at task {}", i + 1)))
        })
        .collect()
}

/// Seen accuracy averages over all T tasks; unseen accuracy and harmonic
/// mean average over the first T-1 only, because the last task leaves no
/// unseen pool behind. With T = 1 those two are absent.
pub fn aggregate_static(
    seen: &[f64],
    unseen: &[Option<f64>],
    h: &[Option<f64>],
) -> Result<Aggregates> {
    let t = seen.len();
    if t == 0 {
        return Err(Error::contract("aggregation over zero tasks"));
    }
    if unseen.len() != t || h.len() != t {
        return Err(Error::shape(format!(
            "{t} seen entries vs {} unseen, {} harmonic",
            unseen.len(),
            h.len()
        )));
    }
    let m_sa = mean(seen);
    if t == 1 {
        return Ok(Aggregates { m_sa, m_ua: None, m_h: None });
    }
    let m_ua = mean(&require_defined(unseen, t - 1, "unseen accuracy")?);
    let m_h = mean(&require_defined(h, t - 1, "harmonic mean")?);
    Ok(Aggregates { m_sa, m_ua: Some(m_ua), m_h: Some(m_h) })
}

/// All three means run over all T tasks; every task must define an unseen
/// pool. The harmonic aggregate is the mean of per-task harmonics, not the
/// harmonic of the means. The online setting reuses these formulas.
pub fn aggregate_dynamic(
    seen: &[f64],
    unseen: &[Option<f64>],
    h: &[Option<f64>],
) -> Result<Aggregates> {
    let t = seen.len();
    if t == 0 {
        return Err(Error::contract("aggregation over zero tasks"));
    }
    if unseen.len() != t || h.len() != t {
        return Err(Error::shape(format!(
            "{t} seen entries vs {} unseen, {} harmonic",
            unseen.len(),
            h.len()
        )));
    }
    Ok(Aggregates {
        m_sa: mean(seen),
        m_ua: Some(mean(&require_defined(unseen, t, "unseen accuracy")?)),
        m_h: Some(mean(&require_defined(h, t, "harmonic mean")?)),
    })
}

/// Average over tasks j < T of the clamped drop from the best accuracy on
/// task j's classes at any time in [j, T-1] to the final accuracy on them.
/// Entries may be absent (no classes in the role at that time); a column
/// whose best-past or final value is absent contributes 0. T < 2 gives 0.
pub fn forgetting(acc: &[Vec<Option<f64>>]) -> Result<f64> {
    let t_max = acc.len();
    for (i, row) in acc.iter().enumerate() {
        if row.len() != t_max {
            return Err(Error::shape(format!(
                "accuracy matrix row {} has {} entries for {} tasks",
                i + 1,
                row.len(),
                t_max
            )));
        }
    }
    if t_max < 2 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for j in 0..t_max - 1 {
        let best_past = (j..t_max - 1)
            .filter_map(|t| acc[t][j])
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
        if let (Some(best), Some(last)) = (best_past, acc[t_max - 1][j]) {
            sum += (best - last).max(0.0);
        }
    }
    Ok(sum / (t_max - 1) as f64)
}

/// Area under the seen/unseen accuracy curve.
///
/// A bias subtracted from every seen-class score sweeps the decision rule
/// from unseen-only to seen-only. Each evaluation row switches sides at one
/// breakpoint (its best seen score minus its best unseen score), so the
/// curve is evaluated exactly: once per interval between distinct
/// breakpoints, plus both endpoints, then integrated by trapezoid.
///
/// `col_classes` names the class behind each score column; `seen_classes`
/// and `unseen_classes` partition the evaluation labels, and each listed
/// class needs at least one row.
pub fn ausuc(
    scores: &Matrix,
    labels: &[ClassId],
    col_classes: &[ClassId],
    seen_classes: &[ClassId],
    unseen_classes: &[ClassId],
) -> Result<f64> {
    if scores.rows() != labels.len() {
        return Err(Error::shape(format!("{} score rows vs {} labels", scores.rows(), labels.len())));
    }
    if scores.cols() != col_classes.len() {
        return Err(Error::shape(format!(
            "{} score columns vs {} column classes",
            scores.cols(),
            col_classes.len()
        )));
    }
    if seen_classes.is_empty() || unseen_classes.is_empty() {
        return Err(Error::contract("the curve needs both a seen and an unseen pool"));
    }
    let seen_cols: Vec<usize> = (0..col_classes.len())
        .filter(|&c| seen_classes.contains(&col_classes[c]))
        .collect();
    let unseen_cols: Vec<usize> = (0..col_classes.len())
        .filter(|&c| unseen_classes.contains(&col_classes[c]))
        .collect();
    if seen_cols.is_empty() || unseen_cols.is_empty() {
        return Err(Error::contract("score columns must cover both pools"));
    }

    let mut rows_per_class = BTreeMap::new();
    for &l in labels {
        let seen = seen_classes.contains(&l);
        if !seen && !unseen_classes.contains(&l) {
            return Err(Error::contract(format!("label {l} is in neither pool")));
        }
        *rows_per_class.entry(l).or_insert(0usize) += 1;
    }
    for &c in seen_classes.iter().chain(unseen_classes) {
        if !rows_per_class.contains_key(&c) {
            return Err(Error::contract(format!("class {c} has no labeled rows")));
        }
    }

    // per-row facts that the sweep never changes: the winner within each
    // side (ties toward the lower column) and the side-switch breakpoint
    let best_in = |cols: &[usize], r: usize| -> usize {
        let mut best = cols[0];
        for &c in &cols[1..] {
            if scores.get(r, c) > scores.get(r, best) {
                best = c;
            }
        }
        best
    };
    let n = scores.rows();
    let mut breaks: Vec<(f64, usize)> = Vec::with_capacity(n);
    let mut correct_seen = vec![false; n];
    let mut correct_unseen = vec![false; n];
    let mut truth_seen = vec![false; n];
    for r in 0..n {
        let bs = best_in(&seen_cols, r);
        let bu = best_in(&unseen_cols, r);
        truth_seen[r] = seen_classes.contains(&labels[r]);
        correct_seen[r] = truth_seen[r] && col_classes[bs] == labels[r];
        correct_unseen[r] = !truth_seen[r] && col_classes[bu] == labels[r];
        breaks.push((scores.get(r, bs) - scores.get(r, bu), r));
    }
    breaks.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));

    // start below every breakpoint: every row answers on the seen side
    let mut s_sum = 0.0;
    let mut u_sum = 0.0;
    for r in 0..n {
        if correct_seen[r] {
            s_sum += 1.0 / rows_per_class[&labels[r]] as f64;
        }
    }
    let ns = seen_classes.len() as f64;
    let nu = unseen_classes.len() as f64;
    let mut states = vec![(0.0, s_sum / ns)];
    let mut i = 0;
    while i < breaks.len() {
        let b = breaks[i].0;
        while i < breaks.len() && breaks[i].0 == b {
            let r = breaks[i].1;
            if correct_seen[r] {
                s_sum -= 1.0 / rows_per_class[&labels[r]] as f64;
            }
            if correct_unseen[r] {
                u_sum += 1.0 / rows_per_class[&labels[r]] as f64;
            }
            i += 1;
        }
        states.push((u_sum / nu, s_sum / ns));
    }

    let mut area = 0.0;
    for w in states.windows(2) {
        let (u0, s0) = w[0];
        let (u1, s1) = w[1];
        area += (u1 - u0) * (s0 + s1) / 2.0;
    }
    Ok(area)
}

/// Mean AUSUC over the tasks where the curve is defined; absent if none is.
pub fn mausuc(per_task: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = per_task.iter().copied().flatten().collect();
    if defined.is_empty() {
        None
    } else {
        Some(mean(&defined))
    }
}

/// Indices of the k largest similarities, descending, ties toward the lower
/// index. Rejects non-finite entries.
pub fn top_cosines(sims: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
    if sims.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("similarity is not finite"));
    }
    let mut order: Vec<usize> = (0..sims.len()).collect();
    order.sort_by(|&a, &b| {
        sims[b].partial_cmp(&sims[a]).unwrap().then(a.cmp(&b))
    });
    Ok(order.into_iter().take(k).map(|i| (i, sims[i])).collect())
}

/// One of the nearest projected classes to a tracked class's probe feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceNeighbor {
    pub class: ClassId,
    pub cosine: f64,
}

/// The similarity readout for one tracked class after one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub tracked: ClassId,
    pub neighbors: Vec<TraceNeighbor>,
}

/// Metrics for a single task, as they appear in the report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub t: usize,
    #[serde(rename = "seenAcc")]
    pub seen_acc: f64,
    #[serde(rename = "unseenAcc")]
    pub unseen_acc: Option<f64>,
    #[serde(rename = "H")]
    pub h: Option<f64>,
    #[serde(rename = "AUSUC")]
    pub ausuc: Option<f64>,
    pub traces: Vec<TraceRecord>,
}

/// The full experiment record. `seen_matrix[t-1][j-1]` and its unseen twin
/// hold per-class accuracy on the classes introduced at task j, measured
/// after training task t over that block's currently seen (resp. unseen)
/// members; an entry is null when the block has no members in that role.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: u32,
    pub setting: Setting,
    #[serde(rename = "T")]
    pub num_tasks: usize,
    #[serde(rename = "mSA")]
    pub m_sa: f64,
    #[serde(rename = "mUA")]
    pub m_ua: Option<f64>,
    #[serde(rename = "mH")]
    pub m_h: Option<f64>,
    pub forgetting: f64,
    #[serde(rename = "forgettingBasis")]
    pub forgetting_basis: String,
    #[serde(rename = "mAUSUC")]
    pub m_ausuc: Option<f64>,
    #[serde(rename = "seenMatrix")]
    pub seen_matrix: Vec<Vec<Option<f64>>>,
    #[serde(rename = "unseenMatrix")]
    pub unseen_matrix: Vec<Vec<Option<f64>>>,
    pub tasks: Vec<TaskReport>,
    pub config: RunConfig,
}

pub const REPORT_VERSION: u32 = 1;
pub const FORGETTING_BASIS: &str = "harmonic";

struct NineDecimals;

impl serde_json::ser::Formatter for NineDecimals {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        if !value.is_finite() {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "non-finite float in report"));
        }
        write!(writer, "{value:.9}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Serializes a report with fixed 9-decimal floats and stable key order.
pub fn report_to_json(report: &ExperimentReport) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, NineDecimals);
    report.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(buf)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.9}")).unwrap_or_default()
}

/// The per-task metrics table: one row per task, empty cells where a value
/// is undefined.
pub fn metrics_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("t,seenAcc,unseenAcc,H,AUSUC\n");
    for task in &report.tasks {
        out.push_str(&format!(
            "{},{:.9},{},{},{}\n",
            task.t,
            task.seen_acc,
            fmt_opt(task.unseen_acc),
            fmt_opt(task.h),
            fmt_opt(task.ausuc),
        ));
    }
    out
}

/// The similarity traces, one row per (task, tracked class, rank).
pub fn traces_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("t,tracked,rank,class,cosine\n");
    for task in &report.tasks {
        for trace in &task.traces {
            for (rank, n) in trace.neighbors.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{:.9}\n",
                    task.t,
                    trace.tracked,
                    rank + 1,
                    n.class,
                    n.cosine,
                ));
            }
        }
    }
    out
}

/// Writes report.json, metrics.csv, and traces.csv into `dir`, creating it
/// if needed. Re-running on the same report reproduces identical bytes.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), report_to_json(report)?)?;
    std::fs::write(dir.join("metrics.csv"), metrics_csv(report))?;
    std::fs::write(dir.join("traces.csv"), traces_csv(report))?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<ExperimentReport> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
