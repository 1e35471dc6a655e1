//! Pose-error metrics and selection statistics.
//!
//! MPJPE is the mean Euclidean joint error in millimeters, optionally
//! restricted to a frame subset so that the full/pruned/selected
//! decomposition can be reported. PCK counts joints with error strictly
//! below a threshold (150 mm by default); AUC averages PCK over 31 evenly
//! spaced thresholds on [0, 150]. All accumulation is in 64-bit.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};

/// Number of evenly spaced AUC thresholds on [0, 150].
pub const AUC_THRESHOLD_COUNT: usize = 31;

/// The AUC threshold grid: 0, 5, …, 150.
pub fn auc_thresholds() -> [f64; AUC_THRESHOLD_COUNT] {
    let mut out = [0.0; AUC_THRESHOLD_COUNT];
    for (i, t) in out.iter_mut().enumerate() {
        *t = 150.0 * i as f64 / (AUC_THRESHOLD_COUNT - 1) as f64;
    }
    out
}

/// Mean per-joint position error over all frames, or over `frames` when a
/// subset is given.
pub fn mpjpe<T: Scalar>(
    pred: &Tensor<T>,
    ground_truth: &Tensor<T>,
    frames: Option<&[usize]>,
) -> Result<f64> {
    check_pose_pair(pred, ground_truth)?;
    let (total_frames, joints) = (pred.shape()[0], pred.shape()[1]);
    let all: Vec<usize>;
    let subset = match frames {
        Some(subset) => subset,
        None => {
            all = (0..total_frames).collect();
            &all
        }
    };
    if subset.is_empty() {
        return Err(Error::Config("MPJPE over an empty frame set".into()));
    }
    let mut acc = 0.0f64;
    for &t in subset {
        if t >= total_frames {
            return Err(Error::Shape(format!("frame {t} out of range for {total_frames}")));
        }
        for j in 0..joints {
            acc += joint_error(pred, ground_truth, t, j);
        }
    }
    Ok(acc / (subset.len() * joints) as f64)
}

/// Fraction of joints with error strictly below `threshold_mm`.
pub fn pck<T: Scalar>(pred: &Tensor<T>, ground_truth: &Tensor<T>, threshold_mm: f64) -> Result<f64> {
    check_pose_pair(pred, ground_truth)?;
    if threshold_mm < 0.0 {
        return Err(Error::Config(format!("PCK threshold must be nonnegative, got {threshold_mm}")));
    }
    let (frames, joints) = (pred.shape()[0], pred.shape()[1]);
    let mut hits = 0usize;
    for t in 0..frames {
        for j in 0..joints {
            if joint_error(pred, ground_truth, t, j) < threshold_mm {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / (frames * joints) as f64)
}

/// Mean PCK over the 31-point threshold grid. The grid includes threshold
/// zero, which no joint can beat under the strict comparison, so even a
/// perfect prediction tops out at 30/31.
pub fn auc<T: Scalar>(pred: &Tensor<T>, ground_truth: &Tensor<T>) -> Result<f64> {
    let mut acc = 0.0f64;
    for t in auc_thresholds() {
        acc += pck(pred, ground_truth, t)?;
    }
    Ok(acc / AUC_THRESHOLD_COUNT as f64)
}

/// Per-frame selection frequencies over a set of pruning runs, plus the
/// run-by-frame selection raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionStats {
    /// `histogram[t]` = number of runs that selected frame `t`.
    pub histogram: Vec<u32>,
    /// One row per run, `true` where the frame was selected.
    pub raster: Vec<Vec<bool>>,
}

/// Tallies which frames the runs selected.
pub fn selection_stats(runs: &[Vec<usize>], frames: usize) -> Result<SelectionStats> {
    let mut histogram = vec![0u32; frames];
    let mut raster = Vec::with_capacity(runs.len());
    for (run, selection) in runs.iter().enumerate() {
        let mut row = vec![false; frames];
        for &t in selection {
            if t >= frames {
                return Err(Error::Shape(format!(
                    "run {run} selected frame {t}, beyond {frames} frames"
                )));
            }
            histogram[t] += 1;
            row[t] = true;
        }
        raster.push(row);
    }
    Ok(SelectionStats { histogram, raster })
}

/// Full evaluation summary: the frame decomposition of MPJPE plus the
/// keypoint metrics. Selection-dependent fields are present only when a
/// selection was supplied.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mpjpe_full: f64,
    pub mpjpe_pruned_frames: Option<f64>,
    pub mpjpe_selected_frames: Option<f64>,
    pub mpjpe_center: f64,
    pub pck: f64,
    pub auc: f64,
    /// Performance gap `Δ` = pruned − selected.
    pub gap: Option<f64>,
    /// Mean 2-D detector error on the selected frames, when 2-D poses were
    /// supplied.
    pub frame_noise: Option<f64>,
}

/// Builds the report from a prediction/ground-truth pair and an optional
/// selection.
pub fn eval_report<T: Scalar>(
    pred: &Tensor<T>,
    ground_truth: &Tensor<T>,
    selection: Option<&[usize]>,
) -> Result<EvalReport> {
    check_pose_pair(pred, ground_truth)?;
    let frames = pred.shape()[0];
    let mpjpe_full = mpjpe(pred, ground_truth, None)?;
    let center = frames / 2;
    let mpjpe_center = mpjpe(pred, ground_truth, Some(&[center]))?;
    let pck_value = pck(pred, ground_truth, 150.0)?;
    let auc_value = auc(pred, ground_truth)?;

    let (mut selected_err, mut pruned_err, mut gap) = (None, None, None);
    if let Some(selected) = selection {
        let pruned: Vec<usize> = (0..frames).filter(|t| !selected.contains(t)).collect();
        let sel = mpjpe(pred, ground_truth, Some(selected))?;
        selected_err = Some(sel);
        if !pruned.is_empty() {
            let pr = mpjpe(pred, ground_truth, Some(&pruned))?;
            pruned_err = Some(pr);
            gap = Some(pr - sel);
        }
    }
    Ok(EvalReport {
        mpjpe_full,
        mpjpe_pruned_frames: pruned_err,
        mpjpe_selected_frames: selected_err,
        mpjpe_center,
        pck: pck_value,
        auc: auc_value,
        gap,
        frame_noise: None,
    })
}

fn joint_error<T: Scalar>(pred: &Tensor<T>, ground_truth: &Tensor<T>, t: usize, j: usize) -> f64 {
    let joints = pred.shape()[1];
    let dims = pred.shape()[2];
    let base = (t * joints + j) * dims;
    let mut sq = 0.0f64;
    for d in 0..dims {
        let diff = pred.data()[base + d].as_f64() - ground_truth.data()[base + d].as_f64();
        sq += diff * diff;
    }
    sq.sqrt()
}

fn check_pose_pair<T: Scalar>(pred: &Tensor<T>, ground_truth: &Tensor<T>) -> Result<()> {
    if pred.rank() != 3 || pred.shape() != ground_truth.shape() {
        return Err(Error::Shape(format!(
            "pose sequences {:?} vs {:?}",
            pred.shape(),
            ground_truth.shape()
        )));
    }
    Ok(())
}
