//! End-to-end continual experiments: replay, register, train, evaluate,
//! and assemble the report.
//!
//! The per-task order matters and is fixed here: replay rows for all
//! previously seen classes are generated first, under the model as it stood
//! at the end of the previous task; only then is the new task registered
//! (which flips converted classes to seen and extends the attribute
//! inventory), the pooled data trained on, and the full evaluation run.
//!
//! Evaluation pools always come from the schedule's role queries and the
//! dataset's test split. Training rows always come from the train split of
//! the classes the schedule marks trainable at that task; the returned
//! audits record exactly which rows and classes entered batches so a test
//! can prove no test row and no unseen class ever leaked in.

use std::collections::{BTreeMap, BTreeSet};

use crate::config::{RunConfig, TraceConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{
    self, round9, ExperimentReport, TaskReport, TraceNeighbor, TraceRecord, FORGETTING_BASIS,
    REPORT_VERSION,
};
use crate::model::{classify, CGZSLModel, ClassId};
use crate::nn::{cosine_matrix, AdamState, Matrix, Rng, Stream};

use super::replay::{generate_replay, ReplaySet};
use super::schedule::{Setting, TaskSchedule};
use super::train::{train_task, EpochTrace, TaskData, TrainAudit};

/// Noise draws behind the probe feature of a tracked class that is still
/// unseen (its real rows are unavailable, so the generated mean stands in).
pub const TRACE_PROBE_DRAWS: usize = 100;

/// One task's full evaluation: the report entry plus this task's row of
/// each accuracy matrix (indexed by introducing task, length T).
#[derive(Clone, Debug)]
pub struct TaskEvaluation {
    pub report: TaskReport,
    pub seen_row: Vec<Option<f64>>,
    pub unseen_row: Vec<Option<f64>>,
}

/// Everything a finished run produces beyond the report: the model after
/// each task (for checkpoints), the training audits, the per-epoch loss
/// traces, and any replay shortfalls.
#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub models: Vec<CGZSLModel>,
    pub audits: Vec<TrainAudit>,
    pub epoch_traces: Vec<Vec<EpochTrace>>,
    pub replay_shortfalls: Vec<BTreeMap<ClassId, usize>>,
}

/// The classes the similarity trace follows. An explicit list wins; the
/// default is the lowest class id that starts out unseen (falling back to
/// the lowest seen class when the first task leaves nothing unseen).
pub fn resolve_trace_classes(schedule: &TaskSchedule, trace: &TraceConfig) -> Result<Vec<ClassId>> {
    if !trace.classes.is_empty() {
        for &c in &trace.classes {
            if c >= schedule.num_classes {
                return Err(Error::validation(
                    "trace.classes",
                    format!("class {c} is out of range for {} classes", schedule.num_classes),
                ));
            }
        }
        return Ok(trace.classes.clone());
    }
    let unseen = schedule.unseen_at(1)?;
    match unseen.iter().min() {
        Some(&c) => Ok(vec![c]),
        None => Ok(vec![*schedule.seen_at(1)?.iter().min().expect("task 1 has seen classes")]),
    }
}

fn accuracy_over(
    preds: &[ClassId],
    truths: &[ClassId],
    classes: &[ClassId],
) -> Result<Option<f64>> {
    if classes.is_empty() {
        return Ok(None);
    }
    let keep: Vec<usize> = {
        let set: BTreeSet<ClassId> = classes.iter().copied().collect();
        (0..truths.len()).filter(|&i| set.contains(&truths[i])).collect()
    };
    let p: Vec<ClassId> = keep.iter().map(|&i| preds[i]).collect();
    let t: Vec<ClassId> = keep.iter().map(|&i| truths[i]).collect();
    Ok(Some(round9(eval::per_class_accuracy(&p, &t, classes)?)))
}

/// Scores the model once on the cumulative seen and unseen test pools at
/// task `t` and derives every metric for that task: the pooled accuracies
/// and harmonic, the area under the seen/unseen curve, this task's row of
/// both accuracy matrices, and the similarity traces.
pub fn evaluate_task(
    model: &CGZSLModel,
    dataset: &Dataset,
    schedule: &TaskSchedule,
    t: usize,
    run: &RunConfig,
) -> Result<TaskEvaluation> {
    let seen = schedule.seen_at(t)?;
    let unseen = schedule.unseen_at(t)?;
    let expected: BTreeSet<ClassId> = schedule.encountered_at(t)?.into_iter().collect();
    let actual: BTreeSet<ClassId> = model.encountered().iter().copied().collect();
    if expected != actual {
        return Err(Error::contract(format!(
            "model has encountered {} classes but the schedule expects {} at task {t}",
            actual.len(),
            expected.len()
        )));
    }

    let seen_set: BTreeSet<ClassId> = seen.iter().copied().collect();
    let unseen_set: BTreeSet<ClassId> = unseen.iter().copied().collect();
    let mut rows: Vec<usize> = dataset
        .test_idx
        .iter()
        .copied()
        .filter(|&i| seen_set.contains(&dataset.labels[i]))
        .collect();
    let n_seen_rows = rows.len();
    rows.extend(
        dataset
            .test_idx
            .iter()
            .copied()
            .filter(|&i| unseen_set.contains(&dataset.labels[i])),
    );
    let truths: Vec<ClassId> = rows.iter().map(|&i| dataset.labels[i]).collect();
    let feats = dataset.features.select_rows(&rows)?;
    let projections = model.projections()?;
    let (positions, scores) = classify(&feats, &projections)?;
    let preds: Vec<ClassId> = positions.iter().map(|&p| model.encountered()[p]).collect();

    let seen_acc = accuracy_over(&preds[..n_seen_rows], &truths[..n_seen_rows], &seen)?
        .ok_or_else(|| Error::contract(format!("no seen classes at task {t}")))?;
    let unseen_acc = accuracy_over(&preds[n_seen_rows..], &truths[n_seen_rows..], &unseen)?;
    let h = unseen_acc.map(|u| round9(eval::harmonic(seen_acc, u)));
    let area = if unseen.is_empty() {
        None
    } else {
        Some(round9(eval::ausuc(&scores, &truths, model.encountered(), &seen, &unseen)?))
    };

    let t_max = schedule.num_tasks();
    let mut seen_row = Vec::with_capacity(t_max);
    let mut unseen_row = Vec::with_capacity(t_max);
    for j in 1..=t_max {
        let intro = schedule.introduced_at(j)?;
        let seen_half: Vec<ClassId> =
            intro.iter().copied().filter(|c| seen_set.contains(c)).collect();
        let unseen_half: Vec<ClassId> =
            intro.iter().copied().filter(|c| unseen_set.contains(c)).collect();
        seen_row.push(accuracy_over(&preds[..n_seen_rows], &truths[..n_seen_rows], &seen_half)?);
        unseen_row
            .push(accuracy_over(&preds[n_seen_rows..], &truths[n_seen_rows..], &unseen_half)?);
    }

    let mut traces = Vec::new();
    let mut rng = Rng::derive(run.train.seed, Stream::Trace(t));
    for &tracked in &resolve_trace_classes(schedule, &run.trace)? {
        let Some(_) = model.position(tracked) else { continue };
        let train_rows = dataset.train_rows_of_class(tracked);
        let probe_rows = if model.is_seen(tracked) && !train_rows.is_empty() {
            dataset.features.select_rows(&train_rows)?
        } else {
            let z = model.sample_noise(TRACE_PROBE_DRAWS, &mut rng);
            let attrs = model.attributes_of(&vec![tracked; TRACE_PROBE_DRAWS])?;
            model.generate(&z, &attrs)?
        };
        let mut probe = Matrix::zeros(1, probe_rows.cols());
        for r in 0..probe_rows.rows() {
            for c in 0..probe_rows.cols() {
                probe.set(0, c, probe.get(0, c) + probe_rows.get(r, c) / probe_rows.rows() as f64);
            }
        }
        let sims = cosine_matrix(&probe, &projections)?;
        let top = eval::top_cosines(sims.row(0), run.trace.top_k)?;
        traces.push(TraceRecord {
            tracked,
            neighbors: top
                .into_iter()
                .map(|(pos, cosine)| TraceNeighbor {
                    class: model.encountered()[pos],
                    cosine: round9(cosine),
                })
                .collect(),
        });
    }

    Ok(TaskEvaluation {
        report: TaskReport { t, seen_acc, unseen_acc, h, ausuc: area, traces },
        seen_row,
        unseen_row,
    })
}

/// Folds per-task evaluations into the final report. The evaluations must
/// cover tasks 1..=N in order; matrix rows are truncated to N columns, so a
/// prefix of a longer schedule aggregates as if the run ended at task N.
pub fn assemble_report(
    setting: Setting,
    evals: &[TaskEvaluation],
    run: &RunConfig,
) -> Result<ExperimentReport> {
    let t_max = evals.len();
    if t_max == 0 {
        return Err(Error::contract("no task evaluations to aggregate"));
    }
    for row in evals.iter().flat_map(|e| [&e.seen_row, &e.unseen_row]) {
        if row.len() < t_max {
            return Err(Error::shape(format!(
                "matrix row covers {} tasks but {t_max} were evaluated",
                row.len()
            )));
        }
    }
    let seen_matrix: Vec<Vec<Option<f64>>> =
        evals.iter().map(|e| e.seen_row[..t_max].to_vec()).collect();
    let unseen_matrix: Vec<Vec<Option<f64>>> =
        evals.iter().map(|e| e.unseen_row[..t_max].to_vec()).collect();

    let seen_accs: Vec<f64> = evals.iter().map(|e| e.report.seen_acc).collect();
    let unseen_accs: Vec<Option<f64>> = evals.iter().map(|e| e.report.unseen_acc).collect();
    let hs: Vec<Option<f64>> = evals.iter().map(|e| e.report.h).collect();
    let agg = match setting {
        Setting::Static => eval::aggregate_static(&seen_accs, &unseen_accs, &hs)?,
        Setting::Dynamic | Setting::Online => {
            eval::aggregate_dynamic(&seen_accs, &unseen_accs, &hs)?
        }
    };

    let h_matrix: Vec<Vec<Option<f64>>> = seen_matrix
        .iter()
        .zip(&unseen_matrix)
        .map(|(srow, urow)| {
            srow.iter()
                .zip(urow)
                .map(|(&s, &u)| match (s, u) {
                    (Some(s), Some(u)) => Some(round9(eval::harmonic(s, u))),
                    (Some(s), None) => Some(s),
                    (None, Some(u)) => Some(u),
                    (None, None) => None,
                })
                .collect()
        })
        .collect();

    Ok(ExperimentReport {
        version: REPORT_VERSION,
        setting,
        num_tasks: t_max,
        m_sa: round9(agg.m_sa),
        m_ua: agg.m_ua.map(round9),
        m_h: agg.m_h.map(round9),
        forgetting: round9(eval::forgetting(&h_matrix)?),
        forgetting_basis: FORGETTING_BASIS.to_string(),
        m_ausuc: eval::mausuc(&evals.iter().map(|e| e.report.ausuc).collect::<Vec<_>>())
            .map(round9),
        seen_matrix,
        unseen_matrix,
        tasks: evals.iter().map(|e| e.report.clone()).collect(),
        config: run.clone(),
    })
}

/// Runs the whole continual protocol on one dataset and schedule.
pub fn run_experiment(
    dataset: &Dataset,
    schedule: &TaskSchedule,
    run: &RunConfig,
) -> Result<ExperimentOutcome> {
    dataset.validate()?;
    schedule.validate()?;
    run.validate()?;
    if schedule.num_classes != dataset.attributes.rows() {
        return Err(Error::validation(
            "num_classes",
            format!(
                "schedule covers {} classes but the dataset has {}",
                schedule.num_classes,
                dataset.attributes.rows()
            ),
        ));
    }
    let mc = run.model_config(dataset.features.cols(), dataset.attributes.cols());
    let mut init_rng = Rng::derive(run.train.seed, Stream::Init);
    let mut model = CGZSLModel::new(mc, &mut init_rng)?;
    let mut opt_g = AdamState::new(run.train.optimizer, &model.generator.param_shapes());
    let mut opt_d = AdamState::new(run.train.optimizer, &model.discriminator.param_shapes());

    let mut evals = Vec::new();
    let mut models = Vec::new();
    let mut audits = Vec::new();
    let mut epoch_traces = Vec::new();
    let mut replay_shortfalls = Vec::new();

    for t in 1..=schedule.num_tasks() {
        let replay = if t > 1 && run.ablation.replay {
            let classes: Vec<ClassId> = model.seen_classes().iter().copied().collect();
            let mut rng = Rng::derive(run.train.seed, Stream::Replay(t));
            generate_replay(&model, &classes, run.train.replay_per_class, &mut rng)?
        } else {
            ReplaySet::empty(model.config.d_x)
        };
        replay_shortfalls.push(replay.shortfall.clone());

        let spec = schedule.task(t)?;
        model.register_task(
            &spec.new_seen,
            &schedule.registration_unseen_at(t)?,
            &spec.converted,
            &dataset.attributes,
        )?;

        let trainable: BTreeSet<ClassId> =
            schedule.train_classes_at(t)?.into_iter().collect();
        let rows: Vec<usize> = dataset
            .train_idx
            .iter()
            .copied()
            .filter(|&i| trainable.contains(&dataset.labels[i]))
            .collect();
        let data = TaskData {
            features: dataset.features.select_rows(&rows)?,
            labels: rows.iter().map(|&i| dataset.labels[i]).collect(),
            source_rows: rows,
        };
        let (traces_t, audit) =
            train_task(&mut model, &mut opt_g, &mut opt_d, &data, &replay, &run.train, &run.ablation, t)?;
        audits.push(audit);
        epoch_traces.push(traces_t);

        evals.push(evaluate_task(&model, dataset, schedule, t, run)?);
        models.push(model.clone());
    }

    let report = assemble_report(schedule.setting, &evals, run)?;
    Ok(ExperimentOutcome { report, models, audits, epoch_traces, replay_shortfalls })
}
