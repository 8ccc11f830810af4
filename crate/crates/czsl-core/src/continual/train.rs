//! The per-task adversarial training loop.
//!
//! Each task trains on the union of the task's real feature rows and the
//! replay pool. Every optimization step draws one minibatch of that pool
//! and one balanced block of generated features (a per-step row budget for
//! the seen classes and one for the unseen, each split evenly across its
//! classes in registration order), then updates the discriminator and the
//! generator once each, in that order.
//! The same noise draw feeds both phases: the discriminator sees the
//! generated block as fixed data, and the generator re-derives it on the
//! tape with the discriminator already updated.
//!
//! Loss placement note: the projection-to-mean alignment term only touches
//! discriminator parameters (the class means are data), so its gradient is
//! applied during the discriminator update; the reported generator total
//! still folds it in next to the band alignment term, keeping the
//! conventional split of the two objectives.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{
    self, AlignmentConfig, DLossParts, GLossParts, LossWeights,
};
use crate::model::{CGZSLModel, ClassId};
use crate::nn::{AdamConfig, AdamState, Matrix, Rng, Stream, Tape};

use super::replay::ReplaySet;

/// Everything the per-task loop needs to know, minus the data itself.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// optimization epochs per task; 0 is a no-op
    pub epochs: usize,
    /// minibatch rows drawn from the real-plus-replay pool
    pub batch_size: usize,
    /// replay rows requested per previously seen class
    pub replay_per_class: usize,
    /// generated rows per step across all seen classes, split evenly in
    /// registration order with a floor of one row per class
    pub gen_seen_per_step: usize,
    /// generated rows per step across all unseen classes, same splitting rule
    pub gen_unseen_per_step: usize,
    pub weights: LossWeights,
    pub alignment: AlignmentConfig,
    pub optimizer: AdamConfig,
    /// master seed; per-task streams derive from it
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 64,
            replay_per_class: 64,
            gen_seen_per_step: 64,
            gen_unseen_per_step: 64,
            weights: LossWeights::default(),
            alignment: AlignmentConfig::default(),
            optimizer: AdamConfig::default(),
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("batch_size", self.batch_size),
            ("replay_per_class", self.replay_per_class),
            ("gen_seen_per_step", self.gen_seen_per_step),
            ("gen_unseen_per_step", self.gen_unseen_per_step),
        ] {
            if v == 0 {
                return Err(Error::validation(field, "must be positive"));
            }
        }
        for (field, v) in [
            ("weights.lambda1", self.weights.lambda1),
            ("weights.lambda2", self.weights.lambda2),
            ("weights.lambda3", self.weights.lambda3),
            ("weights.lambda4", self.weights.lambda4),
        ] {
            if !v.is_finite() {
                return Err(Error::validation(field, "must be finite"));
            }
        }
        if self.alignment.n_c == 0 {
            return Err(Error::validation("alignment.n_c", "must be positive"));
        }
        if !(self.alignment.epsilon.is_finite() && self.alignment.epsilon >= 0.0) {
            return Err(Error::validation("alignment.epsilon", "must be finite and non-negative"));
        }
        let o = &self.optimizer;
        if !(o.learning_rate.is_finite() && o.learning_rate > 0.0) {
            return Err(Error::validation("optimizer.learning_rate", "must be positive"));
        }
        if !(o.weight_decay.is_finite() && o.weight_decay >= 0.0) {
            return Err(Error::validation("optimizer.weight_decay", "must be non-negative"));
        }
        for (field, b) in [("optimizer.beta1", o.beta1), ("optimizer.beta2", o.beta2)] {
            if !(b.is_finite() && (0.0..1.0).contains(&b)) {
                return Err(Error::validation(field, "must lie in [0, 1)"));
            }
        }
        if !(o.epsilon.is_finite() && o.epsilon > 0.0) {
            return Err(Error::validation("optimizer.epsilon", "must be positive"));
        }
        Ok(())
    }
}

/// On/off switches for the optional mechanisms, mirroring the ablation rows
/// of the evaluation protocol. Everything defaults to on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    pub replay: bool,
    pub rcl: bool,
    pub pcl: bool,
    pub snl: bool,
    pub sal: bool,
    pub nuclear: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags { replay: true, rcl: true, pcl: true, snl: true, sal: true, nuclear: true }
    }
}

/// The current task's real training rows, with their dataset row ids so the
/// purity audit can cross-check them against the test split.
#[derive(Clone, Debug)]
pub struct TaskData {
    pub features: Matrix,
    pub labels: Vec<ClassId>,
    pub source_rows: Vec<usize>,
}

/// Mean per-step loss values over one epoch. The two totals follow the
/// reported objective split (the projection alignment term counts toward
/// the generator total).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpochTrace {
    pub d_gan: f64,
    pub rcl: f64,
    pub snl: f64,
    pub g_gan: f64,
    pub pcl: f64,
    pub sal: f64,
    pub nuclear: f64,
    pub d_total: f64,
    pub g_total: f64,
}

/// What actually flowed through gradient steps, for the purity audit.
#[derive(Clone, Debug, Default)]
pub struct TrainAudit {
    /// dataset row ids of every real feature row that entered a batch
    pub real_rows_used: BTreeSet<usize>,
    /// classes of those rows
    pub real_classes_used: BTreeSet<ClassId>,
    /// replay row visits (replay rows are generated, so ids are meaningless)
    pub replay_rows_used: usize,
}

enum Origin {
    Real { row: usize, class: ClassId },
    Replay,
}

/// Splits a per-step row budget across classes: even shares in registration
/// order, earlier classes absorbing the remainder, and never less than one
/// row per class so every group mean stays defined.
fn spread_over_classes(total: usize, classes: &[ClassId]) -> Vec<ClassId> {
    let k = classes.len();
    if k == 0 {
        return Vec::new();
    }
    let total = total.max(k);
    let base = total / k;
    let rem = total % k;
    classes
        .iter()
        .enumerate()
        .flat_map(|(i, &c)| std::iter::repeat(c).take(base + usize::from(i < rem)))
        .collect()
}

/// Runs `cfg.epochs` epochs of discriminator-then-generator steps on the
/// pooled real and replay rows. Returns the per-epoch loss trace and the
/// audit of what the gradients saw.
pub fn train_task(
    model: &mut CGZSLModel,
    opt_g: &mut AdamState,
    opt_d: &mut AdamState,
    data: &TaskData,
    replay: &ReplaySet,
    cfg: &TrainConfig,
    ablation: &AblationFlags,
    t: usize,
) -> Result<(Vec<EpochTrace>, TrainAudit)> {
    cfg.validate()?;
    if data.features.rows() != data.labels.len() || data.labels.len() != data.source_rows.len() {
        return Err(Error::shape(format!(
            "{} feature rows, {} labels, {} source rows",
            data.features.rows(),
            data.labels.len(),
            data.source_rows.len()
        )));
    }
    for &c in data.labels.iter().chain(&replay.labels) {
        if !model.is_seen(c) {
            return Err(Error::contract(format!(
                "training rows include class {c}, which is not in the seen role"
            )));
        }
    }

    // pooled training rows: the task's real rows, then replay
    let (pool_feats, pool_labels, origins) = {
        let mut labels = data.labels.clone();
        let mut origins: Vec<Origin> = data
            .source_rows
            .iter()
            .zip(&data.labels)
            .map(|(&row, &class)| Origin::Real { row, class })
            .collect();
        let feats = if replay.is_empty() {
            data.features.clone()
        } else if data.features.rows() == 0 {
            replay.features.clone()
        } else {
            data.features.vconcat(&replay.features)?
        };
        labels.extend_from_slice(&replay.labels);
        origins.extend(replay.labels.iter().map(|_| Origin::Replay));
        (feats, labels, origins)
    };
    if pool_feats.rows() == 0 {
        return Err(Error::contract("empty training set for this task"));
    }

    // class bookkeeping, all in registration order
    let enc: Vec<ClassId> = model.encountered().to_vec();
    let seen: Vec<ClassId> = enc.iter().copied().filter(|&c| model.is_seen(c)).collect();
    let unseen: Vec<ClassId> = enc.iter().copied().filter(|&c| !model.is_seen(c)).collect();
    if seen.is_empty() {
        return Err(Error::contract("no seen classes registered"));
    }
    let enc_pos: BTreeMap<ClassId, usize> =
        enc.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let seen_pos: BTreeMap<ClassId, usize> =
        seen.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let seen_rows_in_enc: Vec<usize> = seen.iter().map(|c| enc_pos[c]).collect();
    let attrs_enc = model.attributes_so_far().clone();
    let temperature = model.config.temperature;

    // real class means over the pool, for the projection-alignment target
    // and as reference points for the band alignment
    let classes_with_means: Vec<ClassId> = {
        let s: BTreeSet<ClassId> = pool_labels.iter().copied().collect();
        s.into_iter().collect()
    };
    let real_means = losses::class_means(&pool_feats, &pool_labels, &classes_with_means)?;
    let mean_row: BTreeMap<ClassId, usize> =
        classes_with_means.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let means_rows_in_enc: Vec<usize> = classes_with_means.iter().map(|c| enc_pos[c]).collect();

    // semantic neighborhoods are fixed for the task
    let n_c = cfg.alignment.n_c.min(enc.len().saturating_sub(1));
    let neighbors = if ablation.sal && n_c >= 1 {
        Some(losses::semantic_neighbors(&attrs_enc, n_c)?)
    } else {
        None
    };

    // generation plan: class-major, registration order
    let gs_labels = spread_over_classes(cfg.gen_seen_per_step, &seen);
    let gu_labels = spread_over_classes(cfg.gen_unseen_per_step, &unseen);
    let attrs_gs = model.attributes_of(&gs_labels)?;
    let attrs_gu = model.attributes_of(&gu_labels)?;
    let gs_enc_rows: Vec<usize> = gs_labels.iter().map(|c| enc_pos[c]).collect();
    let groups: Vec<usize> = gs_labels
        .iter()
        .chain(&gu_labels)
        .map(|c| enc_pos[c])
        .collect();

    let mut rng = Rng::derive(cfg.seed, Stream::Train(t));
    let mut traces = Vec::with_capacity(cfg.epochs);
    let mut audit = TrainAudit::default();

    for _epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..pool_feats.rows()).collect();
        rng.shuffle(&mut order);
        let mut sums = EpochTrace::default();
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch_feats = pool_feats.select_rows(chunk)?;
            let batch_labels: Vec<ClassId> = chunk.iter().map(|&i| pool_labels[i]).collect();
            let batch_enc_rows: Vec<usize> = batch_labels.iter().map(|c| enc_pos[c]).collect();
            let batch_seen_idx: Vec<usize> = batch_labels.iter().map(|c| seen_pos[c]).collect();
            for &i in chunk {
                match origins[i] {
                    Origin::Real { row, class } => {
                        audit.real_rows_used.insert(row);
                        audit.real_classes_used.insert(class);
                    }
                    Origin::Replay => audit.replay_rows_used += 1,
                }
            }

            // one noise draw serves both phases
            let z_seen = rng.normal_matrix(gs_labels.len(), model.config.d_z);
            let z_unseen = rng.normal_matrix(gu_labels.len(), model.config.d_z);
            let xs_plain = model.generate(&z_seen, &attrs_gs)?;
            let xu_plain = if gu_labels.is_empty() {
                Matrix::zeros(0, model.config.d_x)
            } else {
                model.generate(&z_unseen, &attrs_gu)?
            };

            // -- discriminator phase --------------------------------------
            let mut tape = Tape::new();
            let attrs_in = tape.constant(attrs_enc.clone());
            let d_fwd = model.discriminator.forward_tape(&mut tape, attrs_in)?;
            let proj_enc = d_fwd.output;
            let real_v = tape.constant(batch_feats.clone());
            let fake_v = tape.constant(xs_plain.clone());
            let real_proj = tape.gather_rows(proj_enc, &batch_enc_rows)?;
            let fake_proj = tape.gather_rows(proj_enc, &gs_enc_rows)?;
            let (gan_d, _) = losses::gan_loss(&mut tape, real_v, real_proj, fake_v, fake_proj)?;
            let mut d_terms = vec![(gan_d, cfg.weights.lambda1)];
            let mut d_parts = DLossParts { gan: tape.scalar(gan_d)?, ..Default::default() };
            if ablation.rcl {
                let proj_seen = tape.gather_rows(proj_enc, &seen_rows_in_enc)?;
                let rcl =
                    losses::classification_loss(&mut tape, real_v, &batch_seen_idx, proj_seen, temperature)?;
                d_terms.push((rcl, cfg.weights.lambda2));
                d_parts.rcl = tape.scalar(rcl)?;
            }
            if ablation.snl && !gu_labels.is_empty() {
                let xu_v = tape.constant(xu_plain.clone());
                let gu_rows: Vec<usize> = gu_labels.iter().map(|c| enc_pos[c]).collect();
                let snl =
                    losses::classification_loss(&mut tape, xu_v, &gu_rows, proj_enc, temperature)?;
                d_terms.push((snl, cfg.weights.lambda3));
                d_parts.snl = tape.scalar(snl)?;
            }
            let mut nuclear_val = 0.0;
            if ablation.nuclear {
                let proj_means = tape.gather_rows(proj_enc, &means_rows_in_enc)?;
                let nuclear = tape.mean_sq_row_dist(proj_means, &real_means)?;
                d_terms.push((nuclear, cfg.weights.lambda4));
                nuclear_val = tape.scalar(nuclear)?;
                if !nuclear_val.is_finite() {
                    return Err(Error::numeric("nuclear is not finite"));
                }
            }
            let d_total = losses::total_d_loss(&d_parts, &cfg.weights)?;
            let d_obj = tape.weighted_sum(&d_terms)?;
            let grads = tape.backward(d_obj)?;
            let d_grads: Vec<Matrix> =
                d_fwd.params.iter().map(|&v| grads.get_or_zeros(&tape, v)).collect();
            let mut d_params = model.discriminator.params_mut();
            opt_d.step(&mut d_params, &d_grads)?;

            // -- generator phase (discriminator already updated) -----------
            let mut tape = Tape::new();
            let z_all = if gu_labels.is_empty() {
                z_seen.clone()
            } else {
                z_seen.vconcat(&z_unseen)?
            };
            let attrs_all = if gu_labels.is_empty() {
                attrs_gs.clone()
            } else {
                attrs_gs.vconcat(&attrs_gu)?
            };
            let g_in = tape.constant(z_all.hconcat(&attrs_all)?);
            let g_fwd = model.generator.forward_tape(&mut tape, g_in)?;
            let x_all = g_fwd.output;
            let xs_var = tape.gather_rows(x_all, &(0..gs_labels.len()).collect::<Vec<_>>())?;

            let proj_enc_now = model.projections()?;
            let real_proj_now = proj_enc_now.select_rows(&batch_enc_rows)?;
            let fake_proj_now = proj_enc_now.select_rows(&gs_enc_rows)?;
            let real_c = tape.constant(batch_feats.clone());
            let rp_c = tape.constant(real_proj_now);
            let fp_c = tape.constant(fake_proj_now);
            let (_, gan_g) = losses::gan_loss(&mut tape, real_c, rp_c, xs_var, fp_c)?;
            let mut g_terms = vec![(gan_g, cfg.weights.lambda1)];
            let mut g_parts = GLossParts {
                gan: tape.scalar(gan_g)?,
                nuclear: nuclear_val,
                ..Default::default()
            };
            if ablation.pcl {
                let proj_seen_now = tape.constant(proj_enc_now.select_rows(&seen_rows_in_enc)?);
                let gs_seen_idx: Vec<usize> = gs_labels.iter().map(|c| seen_pos[c]).collect();
                let pcl = losses::classification_loss(
                    &mut tape,
                    xs_var,
                    &gs_seen_idx,
                    proj_seen_now,
                    temperature,
                )?;
                g_terms.push((pcl, cfg.weights.lambda2));
                g_parts.pcl = tape.scalar(pcl)?;
            }
            if let Some(neighbors) = &neighbors {
                // reference points: the real mean where one exists, else this
                // step's generated mean, detached
                let gen_means = losses::class_means(
                    &if xu_plain.rows() == 0 {
                        xs_plain.clone()
                    } else {
                        xs_plain.vconcat(&xu_plain)?
                    },
                    &groups,
                    &(0..enc.len()).collect::<Vec<_>>(),
                )?;
                let mut refs = gen_means;
                for (&class, &row) in &mean_row {
                    let enc_row = enc_pos[&class];
                    for d in 0..refs.cols() {
                        refs.set(enc_row, d, real_means.get(row, d));
                    }
                }
                let mu_gen = tape.group_mean(x_all, &groups, enc.len())?;
                let sal = losses::semantic_alignment_loss(
                    &mut tape,
                    mu_gen,
                    &refs,
                    &attrs_enc,
                    neighbors,
                    cfg.alignment.epsilon,
                )?;
                g_terms.push((sal, cfg.weights.lambda4));
                g_parts.sal = tape.scalar(sal)?;
            }
            let g_total = losses::total_g_loss(&g_parts, &cfg.weights)?;
            let g_obj = tape.weighted_sum(&g_terms)?;
            let grads = tape.backward(g_obj)?;
            let g_grads: Vec<Matrix> =
                g_fwd.params.iter().map(|&v| grads.get_or_zeros(&tape, v)).collect();
            let mut g_params = model.generator.params_mut();
            opt_g.step(&mut g_params, &g_grads)?;

            sums.d_gan += d_parts.gan;
            sums.rcl += d_parts.rcl;
            sums.snl += d_parts.snl;
            sums.g_gan += g_parts.gan;
            sums.pcl += g_parts.pcl;
            sums.sal += g_parts.sal;
            sums.nuclear += g_parts.nuclear;
            sums.d_total += d_total;
            sums.g_total += g_total;
            steps += 1;
        }
        let inv = 1.0 / steps as f64;
        traces.push(EpochTrace {
            d_gan: sums.d_gan * inv,
            rcl: sums.rcl * inv,
            snl: sums.snl * inv,
            g_gan: sums.g_gan * inv,
            pcl: sums.pcl * inv,
            sal: sums.sal * inv,
            nuclear: sums.nuclear * inv,
            d_total: sums.d_total * inv,
            g_total: sums.g_total * inv,
        })
    }
    Ok((traces, audit))
}
