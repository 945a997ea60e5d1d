//! Per-class reservoir memory holding stored logits, and its over-sampled
//! (augmented) view.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Sample;
use crate::error::{AglaError, Result};
use crate::nets::{HeadMode, HeadSelect, ModelSnapshot};
use crate::ndmath::Tensor;
use crate::scalar::Scalar;
use crate::transforms::{apply_transform, TransformSet};

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryEntry<S> {
    pub x: Vec<S>,
    pub y: usize,
    /// Previous-model logits `h`; empty until the first refresh.
    pub logits: Vec<S>,
    /// 0-based task the sample came from.
    pub task: usize,
    /// Identity of the stored original this entry derives from.
    pub origin: usize,
    /// 0 for originals, `1..=M` for transformed copies.
    pub transform: usize,
}

#[derive(Clone, Debug, Default)]
struct ClassSlot<S> {
    entries: Vec<MemoryEntry<S>>,
    seen: usize,
}

/// One reservoir per class, each holding at most `capacity` entries.
#[derive(Clone, Debug)]
pub struct ReservoirBuffer<S> {
    capacity: usize,
    classes: BTreeMap<usize, ClassSlot<S>>,
    next_origin: usize,
    rng: ChaCha8Rng,
}

impl<S: Scalar> ReservoirBuffer<S> {
    pub fn new(capacity_per_class: usize, seed: u64) -> Self {
        ReservoirBuffer {
            capacity: capacity_per_class,
            classes: BTreeMap::new(),
            next_origin: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Classic reservoir rule per class: the first `capacity` items are
    /// kept; item `n > capacity` replaces a uniform slot with probability
    /// `capacity / n`.
    pub fn insert(&mut self, sample: &Sample<S>, task: usize) {
        let slot = self.classes.entry(sample.y).or_default();
        slot.seen += 1;
        if self.capacity == 0 {
            return;
        }
        let entry = MemoryEntry {
            x: sample.x.clone(),
            y: sample.y,
            logits: Vec::new(),
            task,
            origin: self.next_origin,
            transform: 0,
        };
        if slot.entries.len() < self.capacity {
            slot.entries.push(entry);
            self.next_origin += 1;
        } else {
            let j = self.rng.random_range(0..slot.seen);
            if j < self.capacity {
                slot.entries[j] = entry;
                self.next_origin += 1;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.classes.values().map(|c| c.entries.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn seen(&self, class: usize) -> usize {
        self.classes.get(&class).map_or(0, |c| c.seen)
    }

    pub fn class_entries(&self, class: usize) -> &[MemoryEntry<S>] {
        self.classes.get(&class).map_or(&[], |c| &c.entries)
    }

    /// Classes with at least one observation, ascending.
    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.classes.keys().copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = &MemoryEntry<S>> {
        self.classes.values().flat_map(|c| c.entries.iter())
    }

    /// Overwrites every stored `h` with the snapshot's logits. In task-IL
    /// mode each entry is scored by the head of its own task.
    pub fn refresh_logits(&mut self, snapshot: &ModelSnapshot<S>) -> Result<()> {
        for slot in self.classes.values_mut() {
            if slot.entries.is_empty() {
                continue;
            }
            let d = slot.entries[0].x.len();
            let x = Tensor::new(
                vec![slot.entries.len(), d],
                slot.entries.iter().flat_map(|e| e.x.iter().copied()).collect(),
            )?;
            let tasks: Vec<usize> = slot.entries.iter().map(|e| e.task).collect();
            let sel = match snapshot.mode() {
                HeadMode::ClassIncremental => HeadSelect::All,
                HeadMode::TaskIncremental => HeadSelect::PerRow(&tasks),
            };
            let o = snapshot.logits(&x, sel)?;
            for (i, e) in slot.entries.iter_mut().enumerate() {
                e.logits = o.row(i).to_vec();
            }
        }
        Ok(())
    }

    /// Originals of every class followed by transformed copies (round-robin
    /// over the originals, transform drawn uniformly from `family`) until
    /// each class holds `target(stored)` entries. Copies of inputs in
    /// `[0, 1]` are clipped back into `[0, 1]`.
    pub fn augment(
        &self,
        family: &TransformSet,
        target: impl Fn(usize) -> usize,
        seed: u64,
    ) -> Result<Vec<MemoryEntry<S>>> {
        family.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for (&class, slot) in &self.classes {
            let stored = slot.entries.len();
            if stored == 0 {
                if self.capacity > 0 && slot.seen > 0 {
                    return Err(AglaError::Protocol(format!("class {class} was seen but has no stored samples")));
                }
                continue;
            }
            let want = target(stored);
            if want < stored {
                return Err(AglaError::Parameter(format!("augmentation target {want} below stored count {stored} for class {class}")));
            }
            out.extend(slot.entries.iter().cloned());
            for j in 0..want - stored {
                let src = &slot.entries[j % stored];
                let spec = family.draw(&mut rng);
                let mut x = apply_transform(&spec, &src.x)?;
                if src.x.iter().all(|&v| v >= S::zero() && v <= S::one()) {
                    // scaled inputs stay scaled, like saturated pixels
                    x.iter_mut().for_each(|v| *v = v.max(S::zero()).min(S::one()));
                }
                out.push(MemoryEntry {
                    x,
                    transform: j / stored + 1,
                    ..src.clone()
                });
            }
        }
        Ok(out)
    }

    /// Same as [`augment`](Self::augment) with one fixed target per class.
    pub fn augment_memory(&self, family: &TransformSet, target_per_class: usize, seed: u64) -> Result<Vec<MemoryEntry<S>>> {
        self.augment(family, |_| target_per_class, seed)
    }
}

/// Rebalancing target: the current task's per-class count, never below what
/// is stored and never above `cap_ratio` times it.
pub fn rebalance_target(current_per_class: usize, stored: usize, cap_ratio: usize) -> usize {
    current_per_class.min(cap_ratio * stored).max(stored)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::nets::{BaseConfig, BaseLearner};
    use crate::transforms::TransformKind;

    fn sample(v: f64, y: usize) -> Sample<f64> {
        Sample { x: vec![v, 1.0 - v], y }
    }

    #[test]
    fn under_capacity_is_identity() {
        let mut b = ReservoirBuffer::new(3, 0);
        let stream: Vec<_> = (0..3).map(|i| sample(i as f64 / 3.0, 0)).collect();
        stream.iter().for_each(|s| b.insert(s, 0));
        let xs: Vec<_> = b.class_entries(0).iter().map(|e| e.x.clone()).collect();
        assert_eq!(xs, stream.iter().map(|s| s.x.clone()).collect::<Vec<_>>());
    }

    #[test]
    fn counts_and_capacity() {
        let mut b = ReservoirBuffer::new(5, 1);
        for i in 0..100 {
            b.insert(&sample(i as f64 / 100.0, i % 2), 0);
        }
        assert_eq!(b.seen(0), 50);
        assert_eq!(b.seen(0) + b.seen(1), 100);
        assert!(b.len() <= 5 * 2);
        assert_eq!(b.class_entries(1).len(), 5);
    }

    #[test]
    fn zero_capacity_stores_nothing() {
        let mut b = ReservoirBuffer::new(0, 1);
        b.insert(&sample(0.5, 0), 0);
        assert!(b.is_empty());
        assert!(b.augment_memory(&TransformSet::default(), 10, 0).unwrap().is_empty());
    }

    fn snapshot(zero: bool) -> ModelSnapshot<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = BaseLearner::new(BaseConfig::new(2), HeadMode::ClassIncremental, &mut rng);
        m.expand_head(3, &mut rng).unwrap();
        if zero {
            m.set_zero();
        }
        m.snapshot()
    }

    #[test]
    fn refresh_with_zero_model() {
        let mut b = ReservoirBuffer::new(4, 0);
        (0..6).for_each(|i| b.insert(&sample(i as f64 / 6.0, i % 3), 0));
        b.refresh_logits(&snapshot(true)).unwrap();
        assert!(b.entries().all(|e| e.logits == vec![0.0; 3]));
    }

    #[test]
    fn refresh_matches_direct_recomputation_and_is_idempotent() {
        let mut b = ReservoirBuffer::new(8, 0);
        (0..10).for_each(|i| b.insert(&sample(i as f64 / 10.0, i % 2), 0));
        let snap = snapshot(false);
        b.refresh_logits(&snap).unwrap();
        let first: Vec<_> = b.entries().map(|e| e.logits.clone()).collect();
        for e in b.entries() {
            let x = Tensor::new(vec![1, 2], e.x.clone()).unwrap();
            assert_eq!(snap.logits(&x, HeadSelect::All).unwrap().data(), &e.logits[..]);
        }
        b.refresh_logits(&snap).unwrap();
        assert_eq!(first, b.entries().map(|e| e.logits.clone()).collect::<Vec<_>>());
    }

    #[test]
    fn augment_to_stored_count_returns_originals() {
        let mut b = ReservoirBuffer::new(5, 0);
        (0..10).for_each(|i| b.insert(&sample(i as f64 / 10.0, i % 2), 0));
        let m = b.augment_memory(&TransformSet::default(), 5, 3).unwrap();
        assert_eq!(m.len(), 10);
        assert!(m.iter().all(|e| e.transform == 0));
    }

    #[test]
    fn augment_doubles_and_keeps_origins() {
        let mut b = ReservoirBuffer::new(50, 0);
        (0..50).for_each(|i| b.insert(&sample(i as f64 / 50.0, 0), 0));
        let m = b.augment_memory(&TransformSet::default(), 100, 3).unwrap();
        assert_eq!(m.len(), 100);
        assert_eq!(m.iter().filter(|e| e.transform > 0).count(), 50);
        let mut origins: Vec<_> = m.iter().map(|e| e.origin).collect();
        origins.sort_unstable();
        let mut want: Vec<_> = b.entries().flat_map(|e| [e.origin, e.origin]).collect();
        want.sort_unstable();
        assert_eq!(origins, want);
        assert_eq!(m, b.augment_memory(&TransformSet::default(), 100, 3).unwrap());
    }

    #[test]
    fn invert_only_copies() {
        let mut b = ReservoirBuffer::new(4, 0);
        (0..4).for_each(|i| b.insert(&sample(0.1 + i as f64 / 10.0, 0), 0));
        let m = b.augment_memory(&TransformSet::only(TransformKind::Invert), 8, 1).unwrap();
        for copy in m.iter().filter(|e| e.transform > 0) {
            let orig = m.iter().find(|e| e.transform == 0 && e.origin == copy.origin).unwrap();
            for (a, o) in copy.x.iter().zip(&orig.x) {
                assert_eq!(*a, 1.0 - o);
            }
        }
    }

    #[test]
    fn target_below_stored_is_rejected() {
        let mut b = ReservoirBuffer::new(4, 0);
        (0..4).for_each(|i| b.insert(&sample(i as f64 / 4.0, 0), 0));
        assert!(b.augment_memory(&TransformSet::default(), 2, 1).is_err());
    }

    #[test]
    fn rebalance_target_caps() {
        assert_eq!(rebalance_target(200, 50, 10), 200);
        assert_eq!(rebalance_target(200, 10, 10), 100);
        assert_eq!(rebalance_target(20, 50, 10), 50);
    }
}
