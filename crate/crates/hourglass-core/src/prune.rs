//! Representative-frame selection along the temporal dimension.
//!
//! The main strategy is density-peaks clustering over k-nearest-neighbor
//! distances (TPC): frame tokens are pooled over the joint dimension, each
//! pooled token gets a local density `ρ` and a separation `δ` (distance to
//! the nearest effectively-denser token), and the `f` tokens with the
//! largest `ρ·δ` scores are kept as cluster centers. Remaining tokens are
//! assigned to the nearest center of higher effective density. The module
//! also provides the uniform-sampling, attention-score, and motion-magnitude
//! baseline strategies, and the frame-noise measure of selection quality.
//!
//! Pruning is temporal only: the joint dimension stays intact.
//!
//! All tie rules are deterministic:
//! - equal densities rank by lower frame index (making "higher density" a
//!   strict total order),
//! - equal selection scores prefer the lower frame index,
//! - equal assignment distances prefer the lower center index,
//! - selected indexes are always reported in ascending frame order.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};

/// Token pruning strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PruneStrategy {
    /// Density-peaks cluster centers (TPC).
    Tpc,
    /// Fixed-interval uniform sampling.
    Uniform,
    /// Largest received temporal-attention score.
    Attention,
    /// Largest frame-to-frame 2-D motion.
    Motion,
}

/// Hyperparameters of the pruning stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PruneConfig {
    /// Number of representative tokens to keep (`f`).
    pub keep: usize,
    /// Neighbor count for the density estimate (`k`).
    pub knn: usize,
    /// Block index after which pruning occurs (`n`, 1-based).
    pub prune_after: usize,
    pub strategy: PruneStrategy,
}

impl PruneConfig {
    /// Default neighbor count: scales with sequence length, clamped to the
    /// valid range `1 ≤ k < F`.
    pub fn default_knn(frames: usize) -> usize {
        (frames / 10).max(2).min(frames.saturating_sub(1)).max(1)
    }

    pub fn validate(&self, frames: usize, blocks: usize) -> Result<()> {
        if self.keep == 0 || self.keep > frames {
            return Err(Error::Config(format!(
                "keep count f={} out of range 1..={}",
                self.keep, frames
            )));
        }
        if self.knn == 0 || self.knn >= frames {
            return Err(Error::Config(format!(
                "neighbor count k={} out of range 1..{}",
                self.knn, frames
            )));
        }
        if self.prune_after == 0 || self.prune_after >= blocks {
            return Err(Error::Config(format!(
                "prune boundary n={} out of range 1..{}",
                self.prune_after, blocks
            )));
        }
        Ok(())
    }
}

/// Output of density-peaks selection: the chosen centers plus the per-token
/// quantities behind the choice.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult<T = f32> {
    /// Selected frame indexes, ascending, exactly `f` distinct entries.
    pub selected: Vec<usize>,
    /// Local density `ρ` per frame.
    pub density: Vec<T>,
    /// Separation `δ` per frame.
    pub delta: Vec<T>,
    /// Selection score `ρ·δ` per frame.
    pub score: Vec<T>,
    /// Assigned center index per frame; centers label themselves.
    pub labels: Vec<usize>,
}

/// Mean over the joint dimension: `F×J×C → F×C`.
pub fn spatial_pool<T: Scalar>(tokens: &Tensor<T>) -> Tensor<T> {
    let [frames, joints, channels] = grid_dims(tokens);
    assert!(joints >= 1, "spatial pooling needs at least one joint");
    let inv_j = T::from_f64(1.0 / joints as f64);
    let mut out = Tensor::zeros(&[frames, channels]);
    for t in 0..frames {
        let orow = out.row_mut(t);
        for j in 0..joints {
            let row = &tokens.data()[(t * joints + j) * channels..(t * joints + j + 1) * channels];
            for c in 0..channels {
                orow[c] = orow[c] + row[c];
            }
        }
        for v in orow.iter_mut() {
            *v = *v * inv_j;
        }
    }
    out
}

/// Local density per token: `ρ_i = exp(−mean of squared distances to the k
/// nearest neighbors)`, neighbors excluding the token itself.
pub fn local_density<T: Scalar>(pooled: &Tensor<T>, knn: usize) -> Result<Vec<T>> {
    let frames = pooled.leading_len();
    if knn == 0 || knn >= frames {
        return Err(Error::Config(format!(
            "neighbor count k={knn} out of range 1..{frames}"
        )));
    }
    let sq = pairwise_sq_dist(pooled);
    let inv_k = 1.0 / knn as f64;
    let mut density = Vec::with_capacity(frames);
    let mut neighbors: Vec<(f64, usize)> = Vec::with_capacity(frames - 1);
    for i in 0..frames {
        neighbors.clear();
        for j in 0..frames {
            if j != i {
                neighbors.push((sq[i * frames + j], j));
            }
        }
        neighbors.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(core::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
        let mean: f64 = neighbors[..knn].iter().map(|(d, _)| d).sum::<f64>() * inv_k;
        density.push(T::from_f64((-mean).exp()));
    }
    Ok(density)
}

/// Separation per token: the minimum Euclidean distance to any token of
/// higher effective density; the effectively densest token instead gets its
/// maximum distance to any other token.
pub fn min_distance_delta<T: Scalar>(pooled: &Tensor<T>, density: &[T]) -> Vec<T> {
    let frames = pooled.leading_len();
    assert_eq!(density.len(), frames, "one density per frame token");
    let sq = pairwise_sq_dist(pooled);
    let mut delta = Vec::with_capacity(frames);
    for i in 0..frames {
        let mut min_higher = f64::INFINITY;
        let mut max_any = 0.0f64;
        for j in 0..frames {
            if j == i {
                continue;
            }
            let d = sq[i * frames + j].sqrt();
            if d > max_any {
                max_any = d;
            }
            if effectively_denser(density, j, i) && d < min_higher {
                min_higher = d;
            }
        }
        delta.push(T::from_f64(if min_higher.is_finite() { min_higher } else { max_any }));
    }
    delta
}

/// Density-peaks selection of `cfg.keep` representative frame tokens.
///
/// Returns the kept `f×J×C` grid (rows in ascending frame order) together
/// with the densities, separations, scores, and cluster assignment.
pub fn select_tpc<T: Scalar>(
    tokens: &Tensor<T>,
    cfg: &PruneConfig,
) -> Result<(Tensor<T>, ClusterResult<T>)> {
    let [frames, _, _] = grid_dims(tokens);
    if cfg.keep == 0 || cfg.keep > frames {
        return Err(Error::Config(format!(
            "keep count f={} out of range 1..={}",
            cfg.keep, frames
        )));
    }
    let pooled = spatial_pool(tokens);
    let density = local_density(&pooled, cfg.knn)?;
    let delta = min_distance_delta(&pooled, &density);
    let score: Vec<T> = density.iter().zip(&delta).map(|(&r, &d)| r * d).collect();
    let selected = top_indexes(&score, cfg.keep);

    let mut is_center = vec![false; frames];
    for &c in &selected {
        is_center[c] = true;
    }
    let sq = pairwise_sq_dist(&pooled);
    let mut labels = vec![0usize; frames];
    for i in 0..frames {
        if is_center[i] {
            labels[i] = i;
            continue;
        }
        // Nearest center among those of higher effective density. The
        // effectively densest token always has the top score, so it is
        // always a center and the candidate set is never empty.
        let mut best: Option<(f64, usize)> = None;
        for &c in &selected {
            if !effectively_denser(&density, c, i) {
                continue;
            }
            let d = sq[i * frames + c];
            if best.is_none_or(|(bd, bc)| d < bd || (d == bd && c < bc)) {
                best = Some((d, c));
            }
        }
        let fallback = || {
            selected
                .iter()
                .map(|&c| (sq[i * frames + c], c))
                .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(core::cmp::Ordering::Equal).then(a.1.cmp(&b.1)))
                .expect("selection is non-empty")
        };
        labels[i] = best.unwrap_or_else(fallback).1;
    }

    let kept = gather_frames(tokens, &selected);
    Ok((kept, ClusterResult { selected, density, delta, score, labels }))
}

/// Fixed-interval sampling: `f` indexes at `round(i·(F−1)/(f−1))`; a single
/// token selects the center frame.
pub fn select_uniform(frames: usize, keep: usize) -> Result<Vec<usize>> {
    if keep == 0 || keep > frames {
        return Err(Error::Config(format!(
            "keep count f={keep} out of range 1..={frames}"
        )));
    }
    if keep == 1 {
        return Ok(vec![frames / 2]);
    }
    let step = (frames - 1) as f64 / (keep - 1) as f64;
    Ok((0..keep).map(|i| (i as f64 * step).round() as usize).collect())
}

/// Top-`keep` frames by attention score, ties to the lower index, returned
/// ascending. `scores` must hold one value per frame of `tokens`.
pub fn select_by_attention<T: Scalar>(
    tokens: &Tensor<T>,
    scores: &[T],
    keep: usize,
) -> Result<Vec<usize>> {
    let [frames, _, _] = grid_dims(tokens);
    if scores.len() != frames {
        return Err(Error::Shape(format!(
            "{} attention scores for {} frames",
            scores.len(),
            frames
        )));
    }
    if keep == 0 || keep > frames {
        return Err(Error::Config(format!(
            "keep count f={keep} out of range 1..={frames}"
        )));
    }
    Ok(top_indexes(scores, keep))
}

/// Top-`keep` frames by mean per-joint displacement from the previous
/// frame; the first frame has zero motion.
pub fn select_by_motion<T: Scalar>(poses: &Tensor<T>, keep: usize) -> Result<Vec<usize>> {
    let [frames, joints, dims] = grid_dims(poses);
    if frames < 2 {
        return Err(Error::Config(format!("motion pruning needs F ≥ 2, got {frames}")));
    }
    if keep == 0 || keep > frames {
        return Err(Error::Config(format!(
            "keep count f={keep} out of range 1..={frames}"
        )));
    }
    let mut motion = vec![T::zero(); frames];
    for t in 1..frames {
        let mut acc = 0.0f64;
        for j in 0..joints {
            let cur = &poses.data()[(t * joints + j) * dims..(t * joints + j + 1) * dims];
            let prev = &poses.data()[((t - 1) * joints + j) * dims..((t - 1) * joints + j + 1) * dims];
            let mut sq = 0.0f64;
            for d in 0..dims {
                let diff = cur[d].as_f64() - prev[d].as_f64();
                sq += diff * diff;
            }
            acc += sq.sqrt();
        }
        motion[t] = T::from_f64(acc / joints as f64);
    }
    Ok(top_indexes(&motion, keep))
}

/// Mean 2-D joint error of the selected frames: how noisy the detector was
/// on exactly the frames the pruner kept.
pub fn frame_noise<T: Scalar>(
    selected: &[usize],
    detected: &Tensor<T>,
    ground_truth: &Tensor<T>,
) -> Result<f64> {
    if detected.shape() != ground_truth.shape() {
        return Err(Error::Shape(format!(
            "detected {:?} vs ground truth {:?}",
            detected.shape(),
            ground_truth.shape()
        )));
    }
    let [frames, joints, dims] = grid_dims(detected);
    let mut acc = 0.0f64;
    for &t in selected {
        if t >= frames {
            return Err(Error::Shape(format!(
                "selected frame {t} out of range for {frames} frames"
            )));
        }
        for j in 0..joints {
            let base = (t * joints + j) * dims;
            let mut sq = 0.0f64;
            for d in 0..dims {
                let diff = detected.data()[base + d].as_f64() - ground_truth.data()[base + d].as_f64();
                sq += diff * diff;
            }
            acc += sq.sqrt();
        }
    }
    Ok(acc / (selected.len() * joints) as f64)
}

/// Copies the listed frame rows out of an `F×J×C` grid.
pub fn gather_frames<T: Scalar>(tokens: &Tensor<T>, indexes: &[usize]) -> Tensor<T> {
    let [_, joints, channels] = grid_dims(tokens);
    let stride = joints * channels;
    let mut out = Tensor::zeros(&[indexes.len(), joints, channels]);
    for (row, &t) in indexes.iter().enumerate() {
        out.data_mut()[row * stride..(row + 1) * stride]
            .copy_from_slice(&tokens.data()[t * stride..(t + 1) * stride]);
    }
    out
}

/// Indices of the `keep` largest scores, ties to the lower index, returned
/// in ascending index order.
pub fn top_indexes<T: Scalar>(scores: &[T], keep: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut chosen = order[..keep].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Strict total order used wherever "higher density" must be unambiguous:
/// exact density ties rank the lower frame index higher.
fn effectively_denser<T: Scalar>(density: &[T], a: usize, b: usize) -> bool {
    density[a] > density[b] || (density[a] == density[b] && a < b)
}

fn pairwise_sq_dist<T: Scalar>(pooled: &Tensor<T>) -> Vec<f64> {
    let frames = pooled.leading_len();
    let channels = pooled.last_dim();
    let mut out = vec![0.0f64; frames * frames];
    for i in 0..frames {
        for j in (i + 1)..frames {
            let a = pooled.row(i);
            let b = pooled.row(j);
            let mut acc = 0.0f64;
            for c in 0..channels {
                let d = a[c].as_f64() - b[c].as_f64();
                acc += d * d;
            }
            out[i * frames + j] = acc;
            out[j * frames + i] = acc;
        }
    }
    out
}

fn grid_dims<T: Scalar>(tokens: &Tensor<T>) -> [usize; 3] {
    assert_eq!(tokens.rank(), 3, "token grids are F×J×C");
    [tokens.shape()[0], tokens.shape()[1], tokens.shape()[2]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Four pooled scalar tokens forming two tight pairs: the worked
    /// example used throughout this module's tests.
    fn two_pair_grid() -> Tensor<f32> {
        Tensor::from_vec(&[4, 1, 1], vec![0.0, 0.1, 5.0, 5.1]).unwrap()
    }

    #[test]
    fn spatial_pool_single_joint_is_identity() {
        let t = Tensor::from_vec(&[3, 1, 2], vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let p = spatial_pool(&t);
        assert_eq!(p.shape(), &[3, 2]);
        assert_eq!(p.data(), t.data());
    }

    #[test]
    fn spatial_pool_averages_joints() {
        let t = Tensor::from_vec(&[1, 2, 2], vec![1.0f32, 3.0, 3.0, 5.0]).unwrap();
        let p = spatial_pool(&t);
        assert_eq!(p.data(), &[2.0, 4.0]);
    }

    #[test]
    fn spatial_pool_matches_loop_oracle() {
        let mut r = rng(5);
        let t = Tensor::<f32>::uniform(&[8, 17, 4], -2.0, 2.0, &mut r);
        let p = spatial_pool(&t);
        for f in 0..8 {
            for c in 0..4 {
                let mut want = 0.0f64;
                for j in 0..17 {
                    want += t.data()[(f * 17 + j) * 4 + c] as f64;
                }
                want /= 17.0;
                assert!((p.data()[f * 4 + c] as f64 - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn density_of_identical_tokens_is_one() {
        let t = Tensor::from_vec(&[4, 2], vec![1.5f32; 8]).unwrap();
        let rho = local_density(&t, 2).unwrap();
        for &v in &rho {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn density_on_two_pairs_with_one_neighbor() {
        let pooled = spatial_pool(&two_pair_grid());
        let rho = local_density(&pooled, 1).unwrap();
        let want = (-0.01f64).exp();
        for &v in &rho {
            assert!((v as f64 - want).abs() < 1e-7, "{v} vs {want}");
        }
    }

    #[test]
    fn density_matches_brute_force_oracle() {
        let mut r = rng(9);
        let pooled = Tensor::<f32>::uniform(&[10, 3], -1.0, 1.0, &mut r);
        let rho = local_density(&pooled, 3).unwrap();
        for i in 0..10 {
            // Independent exhaustive kNN in 64-bit.
            let mut dists: Vec<f64> = (0..10)
                .filter(|&j| j != i)
                .map(|j| {
                    (0..3)
                        .map(|c| {
                            let d = pooled.data()[i * 3 + c] as f64 - pooled.data()[j * 3 + c] as f64;
                            d * d
                        })
                        .sum()
                })
                .collect();
            dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let want = (-(dists[..3].iter().sum::<f64>() / 3.0)).exp();
            assert!((rho[i] as f64 - want).abs() < 1e-6);
        }
    }

    #[test]
    fn density_rejects_out_of_range_k() {
        let t = Tensor::<f32>::zeros(&[4, 2]);
        assert!(matches!(local_density(&t, 4), Err(Error::Config(_))));
        assert!(matches!(local_density(&t, 0), Err(Error::Config(_))));
    }

    #[test]
    fn delta_of_two_distinct_tokens() {
        let pooled = Tensor::from_vec(&[2, 1], vec![0.0f32, 3.0]).unwrap();
        let rho = vec![1.0f32, 1.0];
        let delta = min_distance_delta(&pooled, &rho);
        assert!((delta[0] - 3.0).abs() < 1e-6);
        assert!((delta[1] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn delta_on_two_pairs_hand_case() {
        let pooled = spatial_pool(&two_pair_grid());
        let rho = vec![1.0f32; 4];
        let delta = min_distance_delta(&pooled, &rho);
        let want = [5.1f32, 0.1, 4.9, 0.1];
        for (got, want) in delta.iter().zip(want) {
            assert!((got - want).abs() < 1e-5, "{got} vs {want}");
        }
    }

    #[test]
    fn delta_matches_literal_oracle() {
        let mut r = rng(13);
        let pooled = Tensor::<f32>::uniform(&[10, 2], -3.0, 3.0, &mut r);
        let rho = local_density(&pooled, 2).unwrap();
        let delta = min_distance_delta(&pooled, &rho);
        let dist = |i: usize, j: usize| -> f64 {
            (0..2)
                .map(|c| {
                    let d = pooled.data()[i * 2 + c] as f64 - pooled.data()[j * 2 + c] as f64;
                    d * d
                })
                .sum::<f64>()
                .sqrt()
        };
        for i in 0..10 {
            let higher: Vec<usize> = (0..10)
                .filter(|&j| j != i && (rho[j] > rho[i] || (rho[j] == rho[i] && j < i)))
                .collect();
            let want = if higher.is_empty() {
                (0..10).filter(|&j| j != i).map(|j| dist(i, j)).fold(0.0, f64::max)
            } else {
                higher.iter().map(|&j| dist(i, j)).fold(f64::INFINITY, f64::min)
            };
            assert!((delta[i] as f64 - want).abs() < 1e-6);
        }
    }

    #[test]
    fn tpc_keep_all_is_identity() {
        let mut r = rng(21);
        let t = Tensor::<f32>::uniform(&[6, 3, 4], -1.0, 1.0, &mut r);
        let cfg = PruneConfig { keep: 6, knn: 2, prune_after: 1, strategy: PruneStrategy::Tpc };
        let (kept, result) = select_tpc(&t, &cfg).unwrap();
        assert_eq!(result.selected, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(kept.data(), t.data());
    }

    #[test]
    fn tpc_two_pair_hand_case() {
        let cfg = PruneConfig { keep: 2, knn: 1, prune_after: 1, strategy: PruneStrategy::Tpc };
        let (kept, result) = select_tpc(&two_pair_grid(), &cfg).unwrap();
        assert_eq!(result.selected, vec![0, 2]);
        assert_eq!(result.labels, vec![0, 0, 2, 2]);
        let rho = (-0.01f64).exp();
        let want_scores = [5.1 * rho, 0.1 * rho, 4.9 * rho, 0.1 * rho];
        for (got, want) in result.score.iter().zip(want_scores) {
            assert!((*got as f64 - want).abs() < 1e-5, "{got} vs {want}");
        }
        for (i, &v) in result.score.iter().enumerate() {
            assert_eq!(v, result.density[i] * result.delta[i]);
        }
        assert_eq!(kept.data(), &[0.0f32, 5.0]);
    }

    #[test]
    fn tpc_rejects_oversized_keep() {
        let t = Tensor::<f32>::zeros(&[4, 1, 1]);
        let cfg = PruneConfig { keep: 5, knn: 1, prune_after: 1, strategy: PruneStrategy::Tpc };
        assert!(matches!(select_tpc(&t, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn tpc_constant_input_selects_leading_frames() {
        let t = Tensor::<f32>::filled(&[6, 2, 3], 0.25);
        let cfg = PruneConfig { keep: 3, knn: 2, prune_after: 1, strategy: PruneStrategy::Tpc };
        let (_, result) = select_tpc(&t, &cfg).unwrap();
        assert_eq!(result.selected, vec![0, 1, 2]);
        assert_eq!(result.labels, vec![0, 1, 2, 0, 0, 0]);
    }

    #[test]
    fn uniform_endpoints_and_midpoint() {
        assert_eq!(select_uniform(9, 3).unwrap(), vec![0, 4, 8]);
    }

    #[test]
    fn uniform_long_sequence_is_strictly_increasing_from_zero() {
        let idx = select_uniform(243, 81).unwrap();
        assert_eq!(idx[0], 0);
        assert_eq!(*idx.last().unwrap(), 242);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(idx.len(), 81);
    }

    #[test]
    fn uniform_identity_when_keep_equals_frames() {
        assert_eq!(select_uniform(5, 5).unwrap(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn uniform_single_token_is_center_frame() {
        assert_eq!(select_uniform(9, 1).unwrap(), vec![4]);
    }

    #[test]
    fn attention_ties_prefer_low_indexes() {
        let t = Tensor::<f32>::zeros(&[5, 1, 1]);
        let idx = select_by_attention(&t, &[0.2f32; 5], 3).unwrap();
        assert_eq!(idx, vec![0, 1, 2]);
    }

    #[test]
    fn attention_reversed_ramp_selects_head() {
        let t = Tensor::<f32>::zeros(&[4, 1, 1]);
        let idx = select_by_attention(&t, &[4.0f32, 3.0, 2.0, 1.0], 2).unwrap();
        assert_eq!(idx, vec![0, 1]);
    }

    #[test]
    fn attention_matches_sort_oracle() {
        let mut r = rng(33);
        let t = Tensor::<f32>::zeros(&[12, 1, 1]);
        let scores: Vec<f32> = (0..12).map(|_| crate::tensor::uniform_in(&mut r, 0.0, 1.0)).collect();
        let idx = select_by_attention(&t, &scores, 5).unwrap();
        let mut order: Vec<usize> = (0..12).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        let mut want = order[..5].to_vec();
        want.sort_unstable();
        assert_eq!(idx, want);
    }

    #[test]
    fn attention_rejects_score_length_mismatch() {
        let t = Tensor::<f32>::zeros(&[5, 1, 1]);
        assert!(matches!(select_by_attention(&t, &[0.0f32; 4], 2), Err(Error::Shape(_))));
    }

    #[test]
    fn motion_static_sequence_falls_back_to_tie_rule() {
        let t = Tensor::<f32>::filled(&[6, 2, 2], 1.0);
        assert_eq!(select_by_motion(&t, 3).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn motion_single_jump_wins() {
        let mut t = Tensor::<f32>::zeros(&[8, 1, 2]);
        for f in 5..8 {
            t.data_mut()[f * 2] = 10.0;
        }
        assert_eq!(select_by_motion(&t, 1).unwrap(), vec![5]);
    }

    #[test]
    fn motion_matches_direct_oracle() {
        let mut r = rng(41);
        let t = Tensor::<f32>::uniform(&[20, 3, 2], -1.0, 1.0, &mut r);
        let idx = select_by_motion(&t, 5).unwrap();
        let mut motion = vec![0.0f64; 20];
        for f in 1..20 {
            let mut acc = 0.0;
            for j in 0..3 {
                let dx = (t.data()[(f * 3 + j) * 2] - t.data()[((f - 1) * 3 + j) * 2]) as f64;
                let dy = (t.data()[(f * 3 + j) * 2 + 1] - t.data()[((f - 1) * 3 + j) * 2 + 1]) as f64;
                acc += (dx * dx + dy * dy).sqrt();
            }
            motion[f] = acc / 3.0;
        }
        let mut order: Vec<usize> = (0..20).collect();
        order.sort_by(|&a, &b| motion[b].partial_cmp(&motion[a]).unwrap().then(a.cmp(&b)));
        let mut want = order[..5].to_vec();
        want.sort_unstable();
        assert_eq!(idx, want);
    }

    #[test]
    fn motion_needs_two_frames() {
        let t = Tensor::<f32>::zeros(&[1, 2, 2]);
        assert!(matches!(select_by_motion(&t, 1), Err(Error::Config(_))));
    }

    #[test]
    fn frame_noise_zero_when_detection_is_perfect() {
        let t = Tensor::<f32>::filled(&[4, 2, 2], 0.7);
        assert_eq!(frame_noise(&[0, 2], &t, &t).unwrap(), 0.0);
    }

    #[test]
    fn frame_noise_three_four_five() {
        let gt = Tensor::<f32>::zeros(&[1, 1, 2]);
        let det = Tensor::from_vec(&[1, 1, 2], vec![3.0f32, 4.0]).unwrap();
        assert!((frame_noise(&[0], &det, &gt).unwrap() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn frame_noise_matches_loop_oracle() {
        let mut r = rng(47);
        let det = Tensor::<f32>::uniform(&[6, 4, 2], -1.0, 1.0, &mut r);
        let gt = Tensor::<f32>::uniform(&[6, 4, 2], -1.0, 1.0, &mut r);
        let sel = [1usize, 3, 4];
        let got = frame_noise(&sel, &det, &gt).unwrap();
        let mut want = 0.0f64;
        for &t in &sel {
            for j in 0..4 {
                let base = (t * 4 + j) * 2;
                let dx = det.data()[base] as f64 - gt.data()[base] as f64;
                let dy = det.data()[base + 1] as f64 - gt.data()[base + 1] as f64;
                want += (dx * dx + dy * dy).sqrt();
            }
        }
        want /= (sel.len() * 4) as f64;
        assert!((got - want).abs() < 1e-9);
    }

    #[test]
    fn frame_noise_rejects_out_of_range_index() {
        let t = Tensor::<f32>::zeros(&[3, 1, 2]);
        assert!(matches!(frame_noise(&[3], &t, &t), Err(Error::Shape(_))));
    }

    #[test]
    fn default_knn_scales_and_clamps() {
        assert_eq!(PruneConfig::default_knn(243), 24);
        assert_eq!(PruneConfig::default_knn(27), 2);
        assert_eq!(PruneConfig::default_knn(3), 2);
        assert_eq!(PruneConfig::default_knn(2), 1);
    }
}
