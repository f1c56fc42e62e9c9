//! Task-guided sample mixing.
//!
//! Two augmentations over supervised samples (cloud + per-view heatmaps +
//! instruction + action):
//!
//! * **Intra-task**: two samples with the *same* instruction merge — clouds
//!   concatenate, heatmaps sum elementwise (optionally renormalized), and
//!   the first sample's instruction and action survive.
//! * **Cross-task**: distractor samples with *different* instructions pile
//!   their clouds into the primary's scene as clutter; the primary's
//!   heatmaps, instruction, and action pass through untouched, teaching
//!   the language signal to pick the right target out of a crowd.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::demo::{ActionRecord, PointCloud};
use crate::heatmap::Heatmap;

/// One training sample as the mixer sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedSample {
    pub cloud: PointCloud,
    pub heatmaps: Vec<Heatmap>,
    pub instruction: String,
    pub action: ActionRecord,
}

#[derive(Debug, Error)]
pub enum MixupError {
    #[error("intra-task mixup needs equal instructions, got {a:?} vs {b:?}")]
    InstructionMismatch { a: String, b: String },
    #[error("heatmap layouts differ: {a_views} views vs {b_views}, or shapes disagree at view {view}")]
    ShapeMismatch { a_views: usize, b_views: usize, view: usize },
    #[error("cross-task distractor {index} shares the primary's instruction {instruction:?}")]
    DistractorSharesInstruction { index: usize, instruction: String },
    #[error(
        "mix rates must be in [0, 1] and sum to at most 1, got intra {intra_rate} + cross {cross_rate}"
    )]
    BadRates { intra_rate: f64, cross_rate: f64 },
    #[error("max_distractors must be at least 1")]
    NoDistractorBudget,
}

/// Merge two same-instruction samples. Clouds concatenate `a` first;
/// heatmaps sum elementwise (then optionally renormalize each view to unit
/// mass); instruction and action come from `a`.
pub fn mixup_intra(
    a: &SupervisedSample,
    b: &SupervisedSample,
    renormalize: bool,
) -> Result<SupervisedSample, MixupError> {
    if a.instruction != b.instruction {
        return Err(MixupError::InstructionMismatch {
            a: a.instruction.clone(),
            b: b.instruction.clone(),
        });
    }
    check_shapes(a, b)?;
    let mut cloud = a.cloud.clone();
    cloud.points.extend_from_slice(&b.cloud.points);
    let heatmaps = a
        .heatmaps
        .iter()
        .zip(&b.heatmaps)
        .map(|(ha, hb)| {
            let mut scores: Vec<f64> =
                ha.scores.iter().zip(&hb.scores).map(|(x, y)| x + y).collect();
            if renormalize {
                let mass: f64 = scores.iter().sum();
                if mass > 0.0 {
                    for s in &mut scores {
                        *s /= mass;
                    }
                }
            }
            Heatmap::new(ha.h, ha.w, scores)
        })
        .collect();
    Ok(SupervisedSample {
        cloud,
        heatmaps,
        instruction: a.instruction.clone(),
        action: a.action,
    })
}

fn check_shapes(a: &SupervisedSample, b: &SupervisedSample) -> Result<(), MixupError> {
    let mismatch = |view| MixupError::ShapeMismatch {
        a_views: a.heatmaps.len(),
        b_views: b.heatmaps.len(),
        view,
    };
    if a.heatmaps.len() != b.heatmaps.len() {
        return Err(mismatch(0));
    }
    for (i, (ha, hb)) in a.heatmaps.iter().zip(&b.heatmaps).enumerate() {
        if ha.h != hb.h || ha.w != hb.w {
            return Err(mismatch(i));
        }
    }
    Ok(())
}

/// Clutter the primary's scene with differently-instructed distractors.
/// Clouds concatenate in argument order (primary first); heatmaps,
/// instruction, and action are the primary's, bit for bit.
pub fn mixup_cross(
    primary: &SupervisedSample,
    distractors: &[&SupervisedSample],
) -> Result<SupervisedSample, MixupError> {
    for (index, d) in distractors.iter().enumerate() {
        if d.instruction == primary.instruction {
            return Err(MixupError::DistractorSharesInstruction {
                index,
                instruction: d.instruction.clone(),
            });
        }
    }
    let mut cloud = primary.cloud.clone();
    for d in distractors {
        cloud.points.extend_from_slice(&d.cloud.points);
    }
    Ok(SupervisedSample { cloud, ..primary.clone() })
}

/// Knobs for [`augment_buffer`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MixupPolicy {
    /// Probability a sample becomes an intra-task mix.
    pub intra_rate: f64,
    /// Probability a sample becomes a cross-task mix.
    pub cross_rate: f64,
    /// Distractor count is drawn uniformly from 1..=max_distractors.
    pub max_distractors: usize,
    /// Renormalize intra-task heatmap sums back to unit mass per view.
    pub renormalize: bool,
}

impl Default for MixupPolicy {
    fn default() -> MixupPolicy {
        MixupPolicy {
            intra_rate: 0.25,
            cross_rate: 0.25,
            max_distractors: 2,
            renormalize: false,
        }
    }
}

impl MixupPolicy {
    pub fn validate(&self) -> Result<(), MixupError> {
        let in_unit = |r: f64| (0.0..=1.0).contains(&r);
        if !in_unit(self.intra_rate)
            || !in_unit(self.cross_rate)
            || self.intra_rate + self.cross_rate > 1.0
        {
            return Err(MixupError::BadRates {
                intra_rate: self.intra_rate,
                cross_rate: self.cross_rate,
            });
        }
        if self.max_distractors == 0 {
            return Err(MixupError::NoDistractorBudget);
        }
        Ok(())
    }
}

/// How one output sample was produced; indices refer to the input buffer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "mix", rename_all = "snake_case")]
pub enum MixProvenance {
    Passthrough { source: usize },
    Intra { a: usize, b: usize },
    Cross { primary: usize, distractors: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedBuffer {
    pub samples: Vec<SupervisedSample>,
    pub provenance: Vec<MixProvenance>,
    pub warnings: Vec<String>,
}

/// Mix a whole buffer, one output sample per input sample.
///
/// Sample `i` draws from its own ChaCha8 substream — `seed_from_u64(seed)`
/// then `set_stream(i + 1)` (stream 0 is left to the plain seed) — so
/// outputs are reproducible per index regardless of iteration order. One
/// uniform roll partitions the space: below `intra_rate` mixes intra-task,
/// below `intra_rate + cross_rate` mixes cross-task, the rest pass
/// through. A sample whose instruction has no second occurrence passes
/// through instead of intra-mixing; a buffer with a single instruction
/// cannot cross-mix and emits one warning for the whole run.
pub fn augment_buffer(
    samples: &[SupervisedSample],
    policy: &MixupPolicy,
    seed: u64,
) -> Result<AugmentedBuffer, MixupError> {
    policy.validate()?;
    let mut out = Vec::with_capacity(samples.len());
    let mut provenance = Vec::with_capacity(samples.len());
    let mut warned_no_strangers = false;
    for (i, sample) in samples.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let roll: f64 = rng.gen_range(0.0..1.0);
        if roll < policy.intra_rate {
            let peers: Vec<usize> = (0..samples.len())
                .filter(|&j| j != i && samples[j].instruction == sample.instruction)
                .collect();
            if peers.is_empty() {
                out.push(sample.clone());
                provenance.push(MixProvenance::Passthrough { source: i });
                continue;
            }
            let b = peers[rng.gen_range(0..peers.len())];
            out.push(mixup_intra(sample, &samples[b], policy.renormalize)?);
            provenance.push(MixProvenance::Intra { a: i, b });
        } else if roll < policy.intra_rate + policy.cross_rate {
            let strangers: Vec<usize> = (0..samples.len())
                .filter(|&j| samples[j].instruction != sample.instruction)
                .collect();
            if strangers.is_empty() {
                if !warned_no_strangers {
                    warned_no_strangers = true;
                }
                out.push(sample.clone());
                provenance.push(MixProvenance::Passthrough { source: i });
                continue;
            }
            let want = rng.gen_range(1..=policy.max_distractors).min(strangers.len());
            let mut chosen: Vec<usize> = Vec::with_capacity(want);
            while chosen.len() < want {
                let candidate = strangers[rng.gen_range(0..strangers.len())];
                if !chosen.contains(&candidate) {
                    chosen.push(candidate);
                }
            }
            let refs: Vec<&SupervisedSample> = chosen.iter().map(|&j| &samples[j]).collect();
            out.push(mixup_cross(sample, &refs)?);
            provenance.push(MixProvenance::Cross { primary: i, distractors: chosen });
        } else {
            out.push(sample.clone());
            provenance.push(MixProvenance::Passthrough { source: i });
        }
    }
    let warnings = if warned_no_strangers {
        vec![
            "cross-task mixing requested but every sample shares one instruction; \
             affected samples passed through"
                .to_string(),
        ]
    } else {
        Vec::new()
    };
    Ok(AugmentedBuffer { samples: out, provenance, warnings })
}
