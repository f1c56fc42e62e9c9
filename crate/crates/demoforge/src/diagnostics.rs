//! Buffer statistics and the stepwise training-curve classifier.
//!
//! Statistics summarize a built buffer: duplicate mass, entropy of the
//! empirical (observation, target) distribution, and a histogram of draws
//! per keyframe-transition ordinal. The classifier inspects success-rate
//! curves logged during training and names the failure mode they exhibit,
//! so the matching repair heuristic can be chosen.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::replay::{ReplaySample, SampleType};

/// Summary of one buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferStats {
    pub sample_count: usize,
    pub bytes_on_disk: u64,
    /// 1 − unique/total over (demo_id, obs_frame, target_frame) keys.
    pub redundancy_ratio: f64,
    /// Draw counts per demo-relative keyframe-transition ordinal; sums to
    /// `sample_count`.
    pub temporal_histogram: Vec<usize>,
    /// Shannon entropy (bits) of the empirical unique-sample distribution.
    pub entropy: f64,
    pub warnings: Vec<String>,
}

/// Sorted keyframe frame-index values per demo, reconstructed from the
/// buffer itself: every target is a keyframe, and keyframe-type samples
/// observe from one.
pub fn keyframe_tables(samples: &[ReplaySample]) -> BTreeMap<String, Vec<usize>> {
    let mut tables: BTreeMap<String, std::collections::BTreeSet<usize>> = BTreeMap::new();
    for s in samples {
        let t = tables.entry(s.demo_id.clone()).or_default();
        t.insert(s.target_frame);
        if s.sample_type == SampleType::Keyframe {
            t.insert(s.obs_frame);
        }
    }
    tables.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect()
}

/// For each sample, the rank of its target keyframe within its demo's
/// keyframe table. Ordinal 0 is only reachable by demo-augmentation samples
/// targeting the demo's first keyframe.
pub fn transition_ordinals(samples: &[ReplaySample]) -> Vec<usize> {
    let tables = keyframe_tables(samples);
    samples
        .iter()
        .map(|s| {
            tables[&s.demo_id]
                .binary_search(&s.target_frame)
                .expect("target_frame present in its own table")
        })
        .collect()
}

/// Compute stats for samples that serialize to `bytes_on_disk` bytes of
/// index. An empty buffer yields zero stats with a warning.
pub fn compute_stats(samples: &[ReplaySample], bytes_on_disk: u64) -> BufferStats {
    if samples.is_empty() {
        return BufferStats {
            sample_count: 0,
            bytes_on_disk,
            redundancy_ratio: 0.0,
            temporal_histogram: Vec::new(),
            entropy: 0.0,
            warnings: vec!["empty buffer".to_string()],
        };
    }
    let mut freq: BTreeMap<(&str, usize, usize), usize> = BTreeMap::new();
    for s in samples {
        *freq.entry((s.demo_id.as_str(), s.obs_frame, s.target_frame)).or_insert(0) += 1;
    }
    let total = samples.len() as f64;
    let redundancy_ratio = 1.0 - freq.len() as f64 / total;
    let entropy = -freq
        .values()
        .map(|&c| {
            let p = c as f64 / total;
            p * p.log2()
        })
        .sum::<f64>();
    // -0.0 from the degenerate single-sample case reads poorly in JSON.
    let entropy = if entropy == 0.0 { 0.0 } else { entropy };

    let ordinals = transition_ordinals(samples);
    let mut temporal_histogram = vec![0usize; ordinals.iter().max().map_or(0, |m| m + 1)];
    for o in ordinals {
        temporal_histogram[o] += 1;
    }
    BufferStats {
        sample_count: samples.len(),
        bytes_on_disk,
        redundancy_ratio,
        temporal_histogram,
        entropy,
        warnings: Vec::new(),
    }
}

/// Fixed-width text rendering of the temporal histogram.
pub fn ascii_histogram(stats: &BufferStats) -> String {
    let max = stats.temporal_histogram.iter().copied().max().unwrap_or(0);
    let mut out = String::from("transition | draws\n");
    for (i, &c) in stats.temporal_histogram.iter().enumerate() {
        let width = if max == 0 { 0 } else { (c * 40 + max - 1) / max };
        out.push_str(&format!("{i:>10} | {c:>6} {}\n", "#".repeat(width)));
    }
    out
}

/// One logged success-rate curve for a task instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessCurve {
    pub task_instance: String,
    pub checkpoints: Vec<Checkpoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: u64,
    pub train_sr: f64,
    pub test_sr: Option<f64>,
}

/// Failure modes the classifier can name, in precedence order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Training success peaks then persistently declines: bad samples are
    /// being replayed.
    ErroneousSamples,
    /// Training is stable but some instance never leaves near-zero: its
    /// keyframes don't teach the motion.
    IneffectiveKeyframes,
    /// Training is stable and high while test success lags far behind.
    GeneralizationGap,
    Stable,
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Scenario::ErroneousSamples => "erroneous_samples",
            Scenario::IneffectiveKeyframes => "ineffective_keyframes",
            Scenario::GeneralizationGap => "generalization_gap",
            Scenario::Stable => "stable",
        };
        f.write_str(s)
    }
}

/// Classifier thresholds. Defaults: decline 0.15, stability 0.02 per
/// checkpoint, gap 0.15, near-zero 0.04.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub decline_threshold: f64,
    pub stability_eps: f64,
    pub gap_threshold: f64,
    pub near_zero: f64,
}

impl Default for ClassifierConfig {
    fn default() -> ClassifierConfig {
        ClassifierConfig {
            decline_threshold: 0.15,
            stability_eps: 0.02,
            gap_threshold: 0.15,
            near_zero: 0.04,
        }
    }
}

/// Every quantity the rules measured, kept regardless of the verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub curves: usize,
    pub checkpoints: usize,
    pub peak_train_sr: f64,
    /// Checkpoint index (not step) of the first aggregate peak.
    pub peak_checkpoint: usize,
    pub final_train_sr: f64,
    /// Least-squares slope of the aggregate curve over its final half,
    /// per checkpoint.
    pub final_half_slope: f64,
    /// Least-squares slope of the whole aggregate curve, per checkpoint.
    pub aggregate_slope: f64,
    /// min over instances of (max train_sr): below `near_zero` means some
    /// instance never trained.
    pub weakest_instance_peak: f64,
    /// mean(train_sr − test_sr) over the final third of checkpoints, when
    /// every needed test_sr exists.
    pub final_third_gap: Option<f64>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioVerdict {
    pub scenario: Scenario,
    pub evidence: Evidence,
}

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("no curves to classify")]
    NoCurves,
    #[error("curve {task_instance:?} has {found} checkpoints; at least {needed} required")]
    TooFewCheckpoints { task_instance: String, found: usize, needed: usize },
    #[error("curve {task_instance:?} has non-increasing steps at checkpoint {at}")]
    NonMonotonicSteps { task_instance: String, at: usize },
    #[error("curve {task_instance:?} checkpoint {at}: rate {value} outside [0, 1]")]
    RateOutOfRange { task_instance: String, at: usize, value: f64 },
    #[error("curves are not aligned: {task_instance:?} logs different steps than the first curve")]
    MisalignedCurves { task_instance: String },
    #[error("curve CSV: {0}")]
    Csv(String),
}

/// Least-squares slope of `values` against their indices 0..n. Index-based
/// so uniform step re-labeling cannot change any verdict.
fn slope(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let nf = n as f64;
    let mean_x = (nf - 1.0) / 2.0;
    let mean_y = values.iter().sum::<f64>() / nf;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &y) in values.iter().enumerate() {
        let dx = i as f64 - mean_x;
        num += dx * (y - mean_y);
        den += dx * dx;
    }
    num / den
}

fn validate_curves(curves: &[SuccessCurve]) -> Result<(), DiagnosticsError> {
    if curves.is_empty() {
        return Err(DiagnosticsError::NoCurves);
    }
    for c in curves {
        if c.checkpoints.len() < 4 {
            return Err(DiagnosticsError::TooFewCheckpoints {
                task_instance: c.task_instance.clone(),
                found: c.checkpoints.len(),
                needed: 4,
            });
        }
        for (i, cp) in c.checkpoints.iter().enumerate() {
            if i > 0 && cp.step <= c.checkpoints[i - 1].step {
                return Err(DiagnosticsError::NonMonotonicSteps {
                    task_instance: c.task_instance.clone(),
                    at: i,
                });
            }
            for v in std::iter::once(cp.train_sr).chain(cp.test_sr) {
                if !(0.0..=1.0).contains(&v) {
                    return Err(DiagnosticsError::RateOutOfRange {
                        task_instance: c.task_instance.clone(),
                        at: i,
                        value: v,
                    });
                }
            }
        }
        if c.checkpoints.len() != curves[0].checkpoints.len()
            || c.checkpoints
                .iter()
                .zip(&curves[0].checkpoints)
                .any(|(a, b)| a.step != b.step)
        {
            return Err(DiagnosticsError::MisalignedCurves {
                task_instance: c.task_instance.clone(),
            });
        }
    }
    Ok(())
}

/// Name the failure mode shown by a family of aligned success curves.
///
/// Rules run in fixed precedence:
/// 1. *erroneous samples* — the aggregate peaks before the final third of
///    checkpoints, ends at least `decline_threshold` below that peak, and
///    slopes downward over its final half;
/// 2. *ineffective keyframes* — the aggregate is flat (|slope| below
///    `stability_eps`) while some instance never exceeds `near_zero`;
/// 3. *generalization gap* — the aggregate is flat and the mean
///    train−test gap over the final third exceeds `gap_threshold`
///    (skipped with a note when test rates are missing there);
/// 4. otherwise *stable*.
pub fn classify_scenario(
    curves: &[SuccessCurve],
    cfg: &ClassifierConfig,
) -> Result<ScenarioVerdict, DiagnosticsError> {
    validate_curves(curves)?;
    let n = curves[0].checkpoints.len();
    let aggregate: Vec<f64> = (0..n)
        .map(|i| {
            curves.iter().map(|c| c.checkpoints[i].train_sr).sum::<f64>() / curves.len() as f64
        })
        .collect();

    let final_third_start = n - n.div_ceil(3);
    let final_half_start = n / 2;

    let (peak_checkpoint, peak_train_sr) = aggregate
        .iter()
        .copied()
        .enumerate()
        .fold((0usize, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best });
    let final_train_sr = aggregate[n - 1];
    let final_half_slope = slope(&aggregate[final_half_start..]);
    let aggregate_slope = slope(&aggregate);
    let weakest_instance_peak = curves
        .iter()
        .map(|c| c.checkpoints.iter().map(|cp| cp.train_sr).fold(f64::NEG_INFINITY, f64::max))
        .fold(f64::INFINITY, f64::min);

    let mut notes = Vec::new();
    let mut final_third_gap = None;
    let missing_test = curves.iter().find_map(|c| {
        c.checkpoints[final_third_start..]
            .iter()
            .any(|cp| cp.test_sr.is_none())
            .then(|| c.task_instance.clone())
    });
    match missing_test {
        Some(instance) => notes.push(format!(
            "generalization-gap rule skipped: instance {instance:?} lacks test rates over the final third"
        )),
        None => {
            let mut gap_sum = 0.0;
            let mut count = 0usize;
            for c in curves {
                for cp in &c.checkpoints[final_third_start..] {
                    gap_sum += cp.train_sr - cp.test_sr.expect("checked above");
                    count += 1;
                }
            }
            final_third_gap = Some(gap_sum / count as f64);
        }
    }

    let declined = peak_checkpoint < final_third_start
        && final_train_sr <= peak_train_sr - cfg.decline_threshold
        && final_half_slope < 0.0;
    let aggregate_stable = aggregate_slope.abs() < cfg.stability_eps;
    let near_zero_instance = weakest_instance_peak < cfg.near_zero;

    let scenario = if declined {
        Scenario::ErroneousSamples
    } else if aggregate_stable && near_zero_instance {
        Scenario::IneffectiveKeyframes
    } else if aggregate_stable && final_third_gap.is_some_and(|g| g > cfg.gap_threshold) {
        Scenario::GeneralizationGap
    } else {
        Scenario::Stable
    };

    Ok(ScenarioVerdict {
        scenario,
        evidence: Evidence {
            curves: curves.len(),
            checkpoints: n,
            peak_train_sr,
            peak_checkpoint,
            final_train_sr,
            final_half_slope,
            aggregate_slope,
            weakest_instance_peak,
            final_third_gap,
            notes,
        },
    })
}

/// Read curves from CSV with header `step,instance,train_sr,test_sr`
/// (empty test_sr cells mean "not measured"); instances keep first-seen
/// order, checkpoints keep file order.
pub fn read_curves_csv<R: Read>(reader: R) -> Result<Vec<SuccessCurve>, DiagnosticsError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    #[derive(Deserialize)]
    struct Row {
        step: u64,
        instance: String,
        train_sr: f64,
        test_sr: Option<f64>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut by_instance: BTreeMap<String, Vec<Checkpoint>> = BTreeMap::new();
    for row in rdr.deserialize::<Row>() {
        let row = row.map_err(|e| DiagnosticsError::Csv(e.to_string()))?;
        if !by_instance.contains_key(&row.instance) {
            order.push(row.instance.clone());
        }
        by_instance.entry(row.instance).or_default().push(Checkpoint {
            step: row.step,
            train_sr: row.train_sr,
            test_sr: row.test_sr,
        });
    }
    Ok(order
        .into_iter()
        .map(|task_instance| {
            let checkpoints = by_instance.remove(&task_instance).unwrap();
            SuccessCurve { task_instance, checkpoints }
        })
        .collect())
}
