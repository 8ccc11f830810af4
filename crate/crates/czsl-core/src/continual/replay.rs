//! Generative replay: stand-in features for previously seen classes.
//!
//! At each task boundary after the first, the generator re-synthesizes
//! features for every class that was seen before this task, conditioned on
//! the class attribute. Only features the model itself classifies back to
//! the right class are kept, so the replay pool never teaches the model
//! something it currently gets wrong about the past.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{classify, CGZSLModel, ClassId};
use crate::nn::{Matrix, Rng};

/// Kept replay rows plus bookkeeping on how many candidates each class lost
/// to the correctness filter.
#[derive(Clone, Debug)]
pub struct ReplaySet {
    pub features: Matrix,
    pub labels: Vec<ClassId>,
    /// rows kept per class, keyed by class id
    pub per_class: BTreeMap<ClassId, usize>,
    /// classes that exhausted the candidate budget before reaching the quota
    pub shortfall: BTreeMap<ClassId, usize>,
}

impl ReplaySet {
    pub fn empty(d_x: usize) -> Self {
        ReplaySet {
            features: Matrix::zeros(0, d_x),
            labels: Vec::new(),
            per_class: BTreeMap::new(),
            shortfall: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// How many candidates to draw per requested row before giving up on a class.
pub const REPLAY_BUDGET_FACTOR: usize = 10;

/// Draws up to `n_per_class` self-consistent generated features for each
/// class in `classes` (processed in the given order). Per class, candidates
/// are generated in one block of `REPLAY_BUDGET_FACTOR * n_per_class` rows
/// and the first `n_per_class` that classify back to the class are kept;
/// classes where the budget runs short simply return fewer rows.
pub fn generate_replay(
    model: &CGZSLModel,
    classes: &[ClassId],
    n_per_class: usize,
    rng: &mut Rng,
) -> Result<ReplaySet> {
    if classes.is_empty() {
        return Err(Error::contract("replay requested for an empty class list"));
    }
    if n_per_class == 0 {
        return Err(Error::contract("replay quota must be positive"));
    }
    let projections = model.projections()?;
    let mut features = Matrix::zeros(0, model.config.d_x);
    let mut labels = Vec::new();
    let mut per_class = BTreeMap::new();
    let mut shortfall = BTreeMap::new();
    for &class in classes {
        let position = model
            .position(class)
            .ok_or_else(|| Error::contract(format!("class {class} never encountered")))?;
        let budget = REPLAY_BUDGET_FACTOR * n_per_class;
        let z = model.sample_noise(budget, rng);
        let attrs = model.attributes_of(&[class])?;
        let attr_block = Matrix::from_vec(
            budget,
            attrs.cols(),
            attrs.row(0).repeat(budget),
        )?;
        let candidates = model.generate(&z, &attr_block)?;
        let (preds, _) = classify(&candidates, &projections)?;
        let keep: Vec<usize> = (0..budget)
            .filter(|&i| preds[i] == position)
            .take(n_per_class)
            .collect();
        if !keep.is_empty() {
            let kept = candidates.select_rows(&keep)?;
            features = if features.rows() == 0 { kept } else { features.vconcat(&kept)? };
            labels.extend(std::iter::repeat(class).take(keep.len()));
        }
        per_class.insert(class, keep.len());
        if keep.len() < n_per_class {
            shortfall.insert(class, n_per_class - keep.len());
        }
    }
    Ok(ReplaySet { features, labels, per_class, shortfall })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::nn::{Rng, Stream};

    fn trained_enough_model(seed: u64) -> CGZSLModel {
        // an untrained model with registered classes; filter soundness and
        // determinism do not depend on training quality
        let mut rng = Rng::derive(seed, Stream::Init);
        let cfg = ModelConfig::new(6, 4);
        let mut model = CGZSLModel::new(cfg, &mut rng).unwrap();
        let attrs = crate::nn::l2_normalize_rows(&rng.normal_matrix(5, 4));
        model.register_task(&[0, 1, 2], &[3, 4], &[], &attrs).unwrap();
        model
    }

    #[test]
    fn every_kept_row_classifies_to_its_own_label() {
        let model = trained_enough_model(21);
        let mut rng = Rng::derive(21, Stream::Replay(2));
        let replay = generate_replay(&model, &[0, 1, 2], 8, &mut rng).unwrap();
        let projections = model.projections().unwrap();
        let (preds, _) = classify(&replay.features, &projections).unwrap();
        for (i, &label) in replay.labels.iter().enumerate() {
            assert_eq!(preds[i], model.position(label).unwrap());
        }
        // bookkeeping agrees with the label list
        for (&class, &count) in &replay.per_class {
            assert_eq!(replay.labels.iter().filter(|&&l| l == class).count(), count);
            let quota_gap = replay.shortfall.get(&class).copied().unwrap_or(0);
            assert_eq!(count + quota_gap, 8);
        }
    }

    #[test]
    fn replay_is_deterministic_per_stream() {
        let model = trained_enough_model(22);
        let a = generate_replay(&model, &[0, 1], 5, &mut Rng::derive(9, Stream::Replay(2)))
            .unwrap();
        let b = generate_replay(&model, &[0, 1], 5, &mut Rng::derive(9, Stream::Replay(2)))
            .unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.labels, b.labels);
        let c = generate_replay(&model, &[0, 1], 5, &mut Rng::derive(9, Stream::Replay(3)))
            .unwrap();
        assert!(c.features != a.features || c.labels != a.labels);
    }

    #[test]
    fn unreachable_class_reports_full_shortfall() {
        // classes 0 and 1 share an attribute row, so their projections are
        // identical and every cosine tie resolves to position 0: class 1 can
        // never win its own argmax, and the filter must come up empty for it
        let mut rng = Rng::derive(23, Stream::Init);
        let mut model = CGZSLModel::new(ModelConfig::new(6, 4), &mut rng).unwrap();
        let mut attrs = crate::nn::l2_normalize_rows(&rng.normal_matrix(3, 4));
        let twin = attrs.row(0).to_vec();
        for (d, v) in twin.into_iter().enumerate() {
            attrs.set(1, d, v);
        }
        model.register_task(&[0, 1, 2], &[], &[], &attrs).unwrap();
        let mut rng = Rng::derive(23, Stream::Replay(2));
        let replay = generate_replay(&model, &[0, 1, 2], 6, &mut rng).unwrap();
        assert_eq!(replay.per_class[&1], 0);
        assert_eq!(replay.shortfall[&1], 6);
        assert!(!replay.labels.contains(&1));
        for &class in &[0usize, 1, 2] {
            let kept = replay.per_class[&class];
            let gap = replay.shortfall.get(&class).copied().unwrap_or(0);
            assert_eq!(kept + gap, 6);
        }
    }

    #[test]
    fn replay_contract_errors() {
        let model = trained_enough_model(24);
        let mut rng = Rng::derive(24, Stream::Replay(2));
        assert!(matches!(
            generate_replay(&model, &[], 4, &mut rng),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            generate_replay(&model, &[0], 0, &mut rng),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            generate_replay(&model, &[99], 4, &mut rng),
            Err(Error::Contract(_))
        ));
    }
}
