//! Epoch scheduling over a replay buffer.
//!
//! The cyclic schedule alternates keyframe and demo-augmentation draws and,
//! within each type, visits (demo, keyframe-transition) buckets round-robin
//! so that draw counts across transitions stay within one of each other at
//! every point of the epoch.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::diagnostics::transition_ordinals;
use crate::replay::{ReplayBuffer, ReplaySample, SampleType};

/// One epoch's draw order over a buffer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CyclicSchedule {
    /// Indices into the buffer's sample list, one per draw. A full-length
    /// epoch is a true permutation of the buffer.
    pub permutation: Vec<usize>,
    pub seed: u64,
    /// Set when the buffer held only one sample type, so no alternation was
    /// possible.
    pub degenerate: bool,
}

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("cannot schedule an empty buffer")]
    EmptyBuffer,
    #[error("epoch length {epoch_len} invalid for a buffer of {buffer_len} samples (need 1..=len)")]
    BadEpochLen { epoch_len: usize, buffer_len: usize },
}

/// Draw order for one sample type: buckets keyed (demo, transition ordinal)
/// are visited demo-major with the ordinal varying fastest, demo order
/// shuffled once per type, bucket contents shuffled once. Each visit pops
/// one sample; exhausted buckets are skipped on later rounds.
fn round_robin_draws(
    samples: &[ReplaySample],
    ordinals: &[usize],
    indices: &[usize],
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let mut buckets: BTreeMap<(&str, usize), Vec<usize>> = BTreeMap::new();
    for &i in indices {
        buckets.entry((samples[i].demo_id.as_str(), ordinals[i])).or_default().push(i);
    }
    let mut demo_order: Vec<&str> = {
        let mut demos: Vec<&str> = buckets.keys().map(|(d, _)| *d).collect();
        demos.dedup(); // BTreeMap keys arrive sorted, so duplicates are adjacent
        demos
    };
    demo_order.shuffle(rng);
    // Shuffle within buckets in deterministic key order.
    for queue in buckets.values_mut() {
        queue.shuffle(rng);
        queue.reverse(); // pop() then yields the shuffled order front-first
    }
    let visit_order: Vec<(&str, usize)> = demo_order
        .iter()
        .flat_map(|&d| {
            buckets.range((d, 0)..=(d, usize::MAX)).map(|(&k, _)| k).collect::<Vec<_>>()
        })
        .collect();
    let mut out = Vec::with_capacity(indices.len());
    while out.len() < indices.len() {
        for key in &visit_order {
            if let Some(i) = buckets.get_mut(key).and_then(Vec::pop) {
                out.push(i);
            }
        }
    }
    out
}

/// Build one epoch of `epoch_len` draws (at most the buffer length; a
/// full-length epoch is a permutation). Draws alternate keyframe,
/// demo-augmentation, keyframe, … until the minority type runs out, after
/// which the remaining type is drained. Deterministic given `seed`.
pub fn make_cyclic_schedule(
    samples: &[ReplaySample],
    seed: u64,
    epoch_len: usize,
) -> Result<CyclicSchedule, ScheduleError> {
    if samples.is_empty() {
        return Err(ScheduleError::EmptyBuffer);
    }
    if epoch_len == 0 || epoch_len > samples.len() {
        return Err(ScheduleError::BadEpochLen { epoch_len, buffer_len: samples.len() });
    }
    let ordinals = transition_ordinals(samples);
    let kf_indices: Vec<usize> = (0..samples.len())
        .filter(|&i| samples[i].sample_type == SampleType::Keyframe)
        .collect();
    let aug_indices: Vec<usize> = (0..samples.len())
        .filter(|&i| samples[i].sample_type == SampleType::DemoAug)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kf_draws = round_robin_draws(samples, &ordinals, &kf_indices, &mut rng);
    let aug_draws = round_robin_draws(samples, &ordinals, &aug_indices, &mut rng);
    let degenerate = kf_draws.is_empty() || aug_draws.is_empty();

    let mut permutation = Vec::with_capacity(samples.len());
    let pairs = kf_draws.len().min(aug_draws.len());
    for i in 0..pairs {
        permutation.push(kf_draws[i]);
        permutation.push(aug_draws[i]);
    }
    permutation.extend(&kf_draws[pairs..]);
    permutation.extend(&aug_draws[pairs..]);
    permutation.truncate(epoch_len);
    Ok(CyclicSchedule { permutation, seed, degenerate })
}

impl ReplayBuffer {
    /// See [`make_cyclic_schedule`].
    pub fn cyclic_schedule(
        &self,
        seed: u64,
        epoch_len: usize,
    ) -> Result<CyclicSchedule, ScheduleError> {
        make_cyclic_schedule(&self.samples, seed, epoch_len)
    }
}
