//! Analytic FLOP and parameter accounting for baseline vs. pruned runs.
//!
//! Counts follow the multiply-accumulate convention of the transformer
//! complexity formula `8ND² + 2N²D` per block (self-attention `4ND² + 2N²D`
//! plus a 2×-expansion feed-forward `4ND²`): one multiply-accumulate is one
//! FLOP, and only matrix products are counted. Absolute totals therefore
//! describe this host, not any externally published model — but reduction
//! ratios cancel the architecture constants, which is what the accounting
//! is for.

use alloc::vec::Vec;

use crate::model::{ModelConfig, Pipeline, RecoverStrategy};

/// Per-block breakdown: attention over joints, attention over frames, and
/// the two feed-forward stages combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockFlops {
    pub spatial_attention: u64,
    pub temporal_attention: u64,
    pub feed_forward: u64,
}

impl BlockFlops {
    pub fn total(&self) -> u64 {
        self.spatial_attention + self.temporal_attention + self.feed_forward
    }
}

/// Parameter totals for the host and the recovery stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCounts {
    pub host: u64,
    pub recovery: u64,
}

impl ParamCounts {
    pub fn total(&self) -> u64 {
        self.host + self.recovery
    }
}

/// FLOP accounting for one configuration, with the unpruned baseline
/// alongside for the reduction ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct FlopsReport {
    pub embedding: u64,
    pub per_block: Vec<BlockFlops>,
    pub head: u64,
    pub recovery: u64,
    /// Total for the requested configuration.
    pub total: u64,
    /// Total for the same architecture without pruning or recovery.
    pub baseline_total: u64,
    /// `1 − total / baseline_total`.
    pub reduction_ratio: f64,
    pub params: ParamCounts,
}

/// `8·N·D² + 2·N²·D`: one transformer block (attention + 2×-expansion
/// feed-forward) over `N` tokens of width `D`.
pub fn block_flops(tokens: u64, dim: u64) -> u64 {
    attention_flops(tokens, dim) + ffn_flops(tokens, dim)
}

/// `4·N·D² + 2·N²·D`: four projections plus the two attention products.
pub fn attention_flops(tokens: u64, dim: u64) -> u64 {
    4 * tokens * dim * dim + 2 * tokens * tokens * dim
}

/// `4·N·D²`: up and down projections of a 2×-expansion feed-forward.
pub fn ffn_flops(tokens: u64, dim: u64) -> u64 {
    4 * tokens * dim * dim
}

/// FLOP totals for `cfg`, pruned or baseline. A keep count of `f ≥ F`
/// degenerates to the baseline schedule: nothing is pruned and no recovery
/// stage is added.
pub fn model_flops(cfg: &ModelConfig, pruned: bool) -> FlopsReport {
    let frames = cfg.frames as u64;
    let joints = cfg.joints as u64;
    let dim = cfg.channels as u64;
    let effective = pruned && cfg.keep < cfg.frames;
    let keep = if effective { cfg.keep as u64 } else { frames };

    let embedding = frames * joints * 2 * dim;
    let mut per_block = Vec::with_capacity(cfg.blocks);
    for block in 1..=cfg.blocks {
        let tokens = if effective && block > cfg.prune_after { keep } else { frames };
        per_block.push(BlockFlops {
            spatial_attention: attention_flops(joints, dim) * tokens,
            temporal_attention: attention_flops(tokens, dim) * joints,
            feed_forward: ffn_flops(joints, dim) * tokens + ffn_flops(tokens, dim) * joints,
        });
    }

    let uses_tra = effective
        && cfg.pipeline == Pipeline::Seq2Seq
        && cfg.recover_strategy == RecoverStrategy::Tra;
    let recovered = cfg.recovered as u64;
    let recovery = if uses_tra {
        // Query/output projections over f′ rows, key/value over f, and the
        // two attention products over f′×f — per joint.
        joints * ((2 * recovered + 2 * keep) * dim * dim + 2 * recovered * keep * dim)
    } else {
        0
    };

    let out_frames = match cfg.pipeline {
        Pipeline::Seq2Frame => 1,
        Pipeline::Seq2Seq => {
            if uses_tra {
                recovered
            } else {
                frames
            }
        }
    };
    let head = out_frames * joints * 3 * dim;

    let total = embedding + per_block.iter().map(BlockFlops::total).sum::<u64>() + recovery + head;
    let baseline_total = if pruned { model_flops(cfg, false).total } else { total };
    let reduction_ratio =
        if baseline_total == 0 { 0.0 } else { 1.0 - total as f64 / baseline_total as f64 };
    FlopsReport {
        embedding,
        per_block,
        head,
        recovery,
        total,
        baseline_total,
        reduction_ratio,
        params: param_count(cfg),
    }
}

/// One point of a pruning-hyperparameter sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub prune_after: usize,
    pub keep: usize,
    pub total: u64,
    pub reduction_ratio: f64,
}

/// Reduction ratios over the cartesian grid of prune boundaries and keep
/// counts (boundary-major order). Ratios decrease along both axes.
pub fn sweep_reduction(cfg: &ModelConfig, n_values: &[usize], f_values: &[usize]) -> Vec<SweepPoint> {
    let mut grid = Vec::with_capacity(n_values.len() * f_values.len());
    for &n in n_values {
        for &f in f_values {
            let mut probe = *cfg;
            probe.prune_after = n;
            probe.keep = f;
            let report = model_flops(&probe, true);
            grid.push(SweepPoint {
                prune_after: n,
                keep: f,
                total: report.total,
                reduction_ratio: report.reduction_ratio,
            });
        }
    }
    grid
}

/// Exact parameter totals from the layer dimensions. The host count covers
/// embedding, position table, blocks, and head; pruning itself is
/// parameter-free, and the recovery overhead `f′·C + 4·C²` is reported
/// separately.
pub fn param_count(cfg: &ModelConfig) -> ParamCounts {
    let c = cfg.channels as u64;
    let embed = 2 * c + c;
    let position = cfg.frames as u64 * c;
    // Per attention/feed-forward unit: two layer norms (2C each), four
    // C×C projections with bias, and the C→2C→C feed-forward with biases.
    let sub_block = 2 * c + 4 * (c * c + c) + 2 * c + (c * 2 * c + 2 * c) + (2 * c * c + c);
    let blocks = cfg.blocks as u64 * 2 * sub_block;
    let head = 3 * c + 3;
    let recovery = cfg.recovered as u64 * c + 4 * c * c;
    ParamCounts { host: embed + position + blocks + head, recovery }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HostModel;
    use crate::prune::PruneStrategy;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq2seq_config() -> ModelConfig {
        ModelConfig {
            frames: 243,
            joints: 17,
            channels: 512,
            blocks: 8,
            heads: 8,
            prune_after: 3,
            keep: 81,
            recovered: 243,
            knn: 24,
            pipeline: Pipeline::Seq2Seq,
            prune_strategy: PruneStrategy::Tpc,
            recover_strategy: RecoverStrategy::Tra,
        }
    }

    #[test]
    fn block_flops_minimal_case() {
        assert_eq!(block_flops(1, 1), 10);
    }

    #[test]
    fn block_flops_long_sequence_values() {
        assert_eq!(block_flops(243, 512), 570_074_112);
        assert_eq!(block_flops(81, 512), 176_587_776);
    }

    #[test]
    fn block_flops_matches_per_matmul_enumeration() {
        // Independent enumeration of every matrix product in one block:
        // Q, K, V, O projections (N·D² each), QKᵀ and AV (N²·D each),
        // then the two feed-forward products.
        let (n, d) = (13u64, 24u64);
        let projections = 4 * n * d * d;
        let attention_products = 2 * n * n * d;
        let ffn_products = n * d * (2 * d) + n * (2 * d) * d;
        assert_eq!(block_flops(n, d), projections + attention_products + ffn_products);
    }

    #[test]
    fn keep_all_equals_baseline_exactly() {
        let mut cfg = seq2seq_config();
        cfg.keep = cfg.frames;
        let report = model_flops(&cfg, true);
        assert_eq!(report.total, report.baseline_total);
        assert_eq!(report.reduction_ratio, 0.0);
        assert_eq!(report.recovery, 0);
    }

    #[test]
    fn seq2seq_reduction_near_two_fifths() {
        let report = model_flops(&seq2seq_config(), true);
        assert!(
            (report.reduction_ratio - 0.396).abs() < 0.05,
            "reduction {}",
            report.reduction_ratio
        );
        assert!(report.recovery > 0);
    }

    #[test]
    fn seq2frame_reduction_is_larger_without_recovery() {
        let mut cfg = seq2seq_config();
        cfg.pipeline = Pipeline::Seq2Frame;
        let report = model_flops(&cfg, true);
        assert_eq!(report.recovery, 0);
        assert!(
            (report.reduction_ratio - 0.417).abs() < 0.05,
            "reduction {}",
            report.reduction_ratio
        );
    }

    #[test]
    fn narrow_host_reduction_above_half() {
        let mut cfg = seq2seq_config();
        cfg.channels = 256;
        cfg.blocks = 5;
        cfg.prune_after = 1;
        let report = model_flops(&cfg, true);
        assert!(
            (report.reduction_ratio - 0.518).abs() < 0.06,
            "reduction {}",
            report.reduction_ratio
        );
    }

    #[test]
    fn sweep_is_strictly_monotone_in_both_axes() {
        let cfg = seq2seq_config();
        let n_values = [1, 2, 3, 4, 5, 6, 7];
        let f_values = [9, 16, 61, 81, 135];
        let grid = sweep_reduction(&cfg, &n_values, &f_values);
        assert_eq!(grid.len(), n_values.len() * f_values.len());
        // Fixed f: later boundaries save less.
        for fi in 0..f_values.len() {
            for ni in 1..n_values.len() {
                let prev = grid[(ni - 1) * f_values.len() + fi].reduction_ratio;
                let cur = grid[ni * f_values.len() + fi].reduction_ratio;
                assert!(cur < prev, "ratio must fall as the boundary moves deeper");
            }
        }
        // Fixed n: keeping more tokens saves less.
        for ni in 0..n_values.len() {
            for fi in 1..f_values.len() {
                let prev = grid[ni * f_values.len() + fi - 1].reduction_ratio;
                let cur = grid[ni * f_values.len() + fi].reduction_ratio;
                assert!(cur < prev, "ratio must fall as more tokens are kept");
            }
        }
    }

    #[test]
    fn boundary_endpoints_bracket_the_savings() {
        let cfg = seq2seq_config();
        let early = sweep_reduction(&cfg, &[1], &[61])[0].reduction_ratio;
        let late = sweep_reduction(&cfg, &[7], &[61])[0].reduction_ratio;
        assert!(early > late);
    }

    #[test]
    fn hand_countable_minimal_parameters() {
        let mut cfg = seq2seq_config();
        cfg.frames = 1;
        cfg.channels = 1;
        cfg.heads = 1;
        cfg.blocks = 1;
        cfg.recovered = 1;
        // By hand at C=1: embedding 2+1, position 1, one block = 2 units of
        // (2 + 4·2 + 2 + (2+2) + (2+1)) = 2·19, head 3+3.
        let counts = param_count(&cfg);
        assert_eq!(counts.host, 3 + 1 + 38 + 6);
        // Recovery bank 1·1 plus four 1×1 projections.
        assert_eq!(counts.recovery, 5);
    }

    #[test]
    fn param_count_matches_constructed_model() {
        let cfg = ModelConfig {
            frames: 12,
            joints: 5,
            channels: 16,
            blocks: 3,
            heads: 4,
            prune_after: 1,
            keep: 6,
            recovered: 12,
            knn: 2,
            pipeline: Pipeline::Seq2Seq,
            prune_strategy: PruneStrategy::Tpc,
            recover_strategy: RecoverStrategy::Tra,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = HostModel::<f32>::init(cfg, &mut rng).unwrap();
        let counts = param_count(&cfg);
        assert_eq!(counts.host, model.host_param_count());
        assert_eq!(counts.recovery, model.recover_params().param_count());
    }

    #[test]
    fn pruning_is_parameter_free() {
        let base = seq2seq_config();
        let mut uniform = base;
        uniform.prune_strategy = PruneStrategy::Uniform;
        let mut all_kept = base;
        all_kept.keep = base.frames;
        assert_eq!(param_count(&base), param_count(&uniform));
        assert_eq!(param_count(&base), param_count(&all_kept));
    }

    #[test]
    fn recovery_overhead_stays_under_four_percent_of_wide_host() {
        let counts = param_count(&seq2seq_config());
        let ratio = counts.recovery as f64 / counts.host as f64;
        assert!(ratio <= 0.04, "overhead ratio {ratio}");
    }
}
