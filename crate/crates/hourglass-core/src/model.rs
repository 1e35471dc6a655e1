//! Minimal spatio-temporal pose transformer host.
//!
//! The host lifts 2-D pose sequences to 3-D: a per-joint linear embedding
//! plus a learned temporal position table, a stack of blocks that alternate
//! spatial self-attention (over joints, per frame) and temporal
//! self-attention (over frames, per joint) — each sub-block pre-normed and
//! followed by a 2×-expansion feed-forward — and a linear regression head.
//!
//! The hourglass schedule plugs in between blocks: after block `n` the
//! frame tokens are pruned to `f` representatives, the remaining blocks run
//! on the short sequence, and (in the seq2seq pipeline) the full length is
//! recovered after the last block. The seq2frame pipeline instead
//! concatenates the center-frame token to the selected set and regresses
//! only that token. Positional information travels with the tokens; nothing
//! is re-embedded after pruning.
//!
//! Every stage has an explicit adjoint, so the whole model trains with
//! plain gradient descent on an MPJPE loss and the complete backward pass
//! can be verified against 64-bit central finite differences.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand_core::RngCore;

use crate::prune::{
    gather_frames, select_by_attention, select_by_motion, select_tpc, select_uniform, ClusterResult,
    PruneConfig, PruneStrategy,
};
use crate::recover::{
    recover_linear, recover_linear_backward, recover_nearest, recover_nearest_backward,
    recover_tra_backward, recover_tra_traced, RecoverParams, RecoverTrace,
};
use crate::tensor::{
    col_slice, gelu, gelu_backward, layer_norm, layer_norm_backward, matmul, matmul_backward,
    set_col_slice, set_slice_dim1, slice_dim1, softmax_rows, softmax_rows_backward, LinearLayer,
    Scalar, Tensor,
};
use crate::{Error, Result};

/// Inference pipeline: all-frame output or center-frame output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pipeline {
    Seq2Seq,
    Seq2Frame,
}

/// Token recovery strategy for the seq2seq pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecoverStrategy {
    /// Learned cross-attention recovery (TRA).
    Tra,
    /// Nearest-selected-frame copy.
    Nearest,
    /// Linear interpolation between selected frames.
    Linear,
}

/// Architecture and pruning hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Input frames `F`.
    pub frames: usize,
    /// Joints `J`.
    pub joints: usize,
    /// Channel dimension `C`.
    pub channels: usize,
    /// Transformer block count `L`.
    pub blocks: usize,
    /// Attention heads `h` (host and recovery).
    pub heads: usize,
    /// Prune after this block (`n`, 1-based).
    pub prune_after: usize,
    /// Representative token count `f`.
    pub keep: usize,
    /// Recovered token count `f′` (query-bank rows; `F` by default).
    pub recovered: usize,
    /// Neighbor count `k` for the density estimate.
    pub knn: usize,
    pub pipeline: Pipeline,
    pub prune_strategy: PruneStrategy,
    pub recover_strategy: RecoverStrategy,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.joints == 0 || self.channels == 0 {
            return Err(Error::Config("frames, joints, channels must be positive".into()));
        }
        if self.heads == 0 || self.channels % self.heads != 0 {
            return Err(Error::Config(format!(
                "channel dim {} not divisible by head count {}",
                self.channels, self.heads
            )));
        }
        if self.blocks < 2 {
            return Err(Error::Config("the hourglass schedule needs at least two blocks".into()));
        }
        self.prune_config().validate(self.frames, self.blocks)?;
        if self.recovered == 0 {
            return Err(Error::Config("recovered token count must be positive".into()));
        }
        if self.pipeline == Pipeline::Seq2Seq
            && self.recover_strategy == RecoverStrategy::Tra
            && self.recovered != self.frames
        {
            return Err(Error::Config(format!(
                "seq2seq output must restore the input length: recovered f'={} != F={}",
                self.recovered, self.frames
            )));
        }
        Ok(())
    }

    pub fn prune_config(&self) -> PruneConfig {
        PruneConfig {
            keep: self.keep,
            knn: self.knn,
            prune_after: self.prune_after,
            strategy: self.prune_strategy,
        }
    }

    /// 0-based index of the center frame.
    pub fn center_frame(&self) -> usize {
        self.frames / 2
    }
}

/// Layer-norm affine parameters.
#[derive(Debug, Clone, PartialEq)]
struct NormParams<T> {
    gain: Tensor<T>,
    shift: Tensor<T>,
}

impl<T: Scalar> NormParams<T> {
    fn init(dim: usize) -> Self {
        NormParams { gain: Tensor::filled(&[dim], T::one()), shift: Tensor::zeros(&[dim]) }
    }
}

/// One pre-norm attention + pre-norm feed-forward unit over an `N×C` token
/// matrix. Used twice per block: once over joints, once over frames.
#[derive(Debug, Clone, PartialEq)]
struct SubBlock<T> {
    ln_attn: NormParams<T>,
    q: LinearLayer<T>,
    k: LinearLayer<T>,
    v: LinearLayer<T>,
    o: LinearLayer<T>,
    ln_ffn: NormParams<T>,
    up: LinearLayer<T>,
    down: LinearLayer<T>,
    heads: usize,
}

/// Intermediates of one sub-block application.
#[derive(Debug, Clone)]
struct SubBlockTrace<T> {
    input: Tensor<T>,
    normed_attn: Tensor<T>,
    q: Tensor<T>,
    k: Tensor<T>,
    v: Tensor<T>,
    attn: Vec<Tensor<T>>,
    ctx: Tensor<T>,
    resid_mid: Tensor<T>,
    normed_ffn: Tensor<T>,
    up_out: Tensor<T>,
    act: Tensor<T>,
}

impl<T: Scalar> SubBlock<T> {
    fn init(channels: usize, heads: usize, rng: &mut dyn RngCore) -> Self {
        SubBlock {
            ln_attn: NormParams::init(channels),
            q: LinearLayer::init(channels, channels, rng),
            k: LinearLayer::init(channels, channels, rng),
            v: LinearLayer::init(channels, channels, rng),
            o: LinearLayer::init(channels, channels, rng),
            ln_ffn: NormParams::init(channels),
            up: LinearLayer::init(channels, 2 * channels, rng),
            down: LinearLayer::init(2 * channels, channels, rng),
            heads,
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, SubBlockTrace<T>)> {
        let channels = x.last_dim();
        let head_dim = channels / self.heads;
        let scale = T::from_f64(1.0 / (head_dim as f64).sqrt());
        let tokens = x.shape()[0];

        let normed_attn = layer_norm(x, &self.ln_attn.gain, &self.ln_attn.shift)?;
        let q = self.q.forward(&normed_attn)?;
        let k = self.k.forward(&normed_attn)?;
        let v = self.v.forward(&normed_attn)?;
        let mut ctx = Tensor::zeros(&[tokens, channels]);
        let mut attn = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let q_h = col_slice(&q, h * head_dim, head_dim);
            let k_h = col_slice(&k, h * head_dim, head_dim);
            let v_h = col_slice(&v, h * head_dim, head_dim);
            let mut logits = matmul(&q_h, &k_h.transposed())?;
            for val in logits.data_mut() {
                *val = *val * scale;
            }
            let weights = softmax_rows(&logits);
            let head_out = matmul(&weights, &v_h)?;
            set_col_slice(&mut ctx, h * head_dim, &head_out);
            attn.push(weights);
        }
        let attn_out = self.o.forward(&ctx)?;
        let resid_mid = x.add(&attn_out)?;

        let normed_ffn = layer_norm(&resid_mid, &self.ln_ffn.gain, &self.ln_ffn.shift)?;
        let up_out = self.up.forward(&normed_ffn)?;
        let act = gelu(&up_out);
        let ffn_out = self.down.forward(&act)?;
        let out = resid_mid.add(&ffn_out)?;

        Ok((
            out,
            SubBlockTrace {
                input: x.clone(),
                normed_attn,
                q,
                k,
                v,
                attn,
                ctx,
                resid_mid,
                normed_ffn,
                up_out,
                act,
            },
        ))
    }

    fn backward(&mut self, trace: &SubBlockTrace<T>, grad_out: &Tensor<T>) -> Tensor<T> {
        let channels = trace.input.last_dim();
        let head_dim = channels / self.heads;
        let scale = T::from_f64(1.0 / (head_dim as f64).sqrt());
        let tokens = trace.input.shape()[0];

        // out = resid_mid + down(gelu(up(LN(resid_mid))))
        let grad_act = self.down.backward(&trace.act, grad_out);
        let grad_up_out = gelu_backward(&trace.up_out, &grad_act);
        let grad_normed_ffn = self.up.backward(&trace.normed_ffn, &grad_up_out);
        let (grad_from_ln, gain_g, shift_g) =
            layer_norm_backward(&trace.resid_mid, &self.ln_ffn.gain, &grad_normed_ffn);
        self.ln_ffn.gain.accumulate_grad(&gain_g);
        self.ln_ffn.shift.accumulate_grad(&shift_g);
        let grad_resid_mid = grad_out.add(&grad_from_ln).expect("residual gradient shape");

        // resid_mid = input + Wo(ctx)
        let grad_ctx = self.o.backward(&trace.ctx, &grad_resid_mid);
        let mut grad_q = Tensor::zeros(&[tokens, channels]);
        let mut grad_k = Tensor::zeros(&[tokens, channels]);
        let mut grad_v = Tensor::zeros(&[tokens, channels]);
        for h in 0..self.heads {
            let q_h = col_slice(&trace.q, h * head_dim, head_dim);
            let k_h = col_slice(&trace.k, h * head_dim, head_dim);
            let v_h = col_slice(&trace.v, h * head_dim, head_dim);
            let weights = &trace.attn[h];
            let grad_head = col_slice(&grad_ctx, h * head_dim, head_dim);
            let (grad_weights, grad_v_h) = matmul_backward(weights, &v_h, &grad_head);
            let mut grad_logits = softmax_rows_backward(weights, &grad_weights);
            for val in grad_logits.data_mut() {
                *val = *val * scale;
            }
            let (grad_q_h, grad_k_h_t) = matmul_backward(&q_h, &k_h.transposed(), &grad_logits);
            set_col_slice(&mut grad_q, h * head_dim, &grad_q_h);
            set_col_slice(&mut grad_k, h * head_dim, &grad_k_h_t.transposed());
            set_col_slice(&mut grad_v, h * head_dim, &grad_v_h);
        }
        let grad_normed_attn = self
            .q
            .backward(&trace.normed_attn, &grad_q)
            .add(&self.k.backward(&trace.normed_attn, &grad_k))
            .and_then(|g| g.add(&self.v.backward(&trace.normed_attn, &grad_v)))
            .expect("projection gradient shapes");
        let (grad_from_ln, gain_g, shift_g) =
            layer_norm_backward(&trace.input, &self.ln_attn.gain, &grad_normed_attn);
        self.ln_attn.gain.accumulate_grad(&gain_g);
        self.ln_attn.shift.accumulate_grad(&shift_g);
        grad_resid_mid.add(&grad_from_ln).expect("input gradient shape")
    }

    fn visit(&self, f: &mut impl FnMut(&Tensor<T>)) {
        f(&self.ln_attn.gain);
        f(&self.ln_attn.shift);
        f(&self.q.weight);
        f(&self.q.bias);
        f(&self.k.weight);
        f(&self.k.bias);
        f(&self.v.weight);
        f(&self.v.bias);
        f(&self.o.weight);
        f(&self.o.bias);
        f(&self.ln_ffn.gain);
        f(&self.ln_ffn.shift);
        f(&self.up.weight);
        f(&self.up.bias);
        f(&self.down.weight);
        f(&self.down.bias);
    }

    fn visit_mut(&mut self, f: &mut impl FnMut(&mut Tensor<T>)) {
        f(&mut self.ln_attn.gain);
        f(&mut self.ln_attn.shift);
        f(&mut self.q.weight);
        f(&mut self.q.bias);
        f(&mut self.k.weight);
        f(&mut self.k.bias);
        f(&mut self.v.weight);
        f(&mut self.v.bias);
        f(&mut self.o.weight);
        f(&mut self.o.bias);
        f(&mut self.ln_ffn.gain);
        f(&mut self.ln_ffn.shift);
        f(&mut self.up.weight);
        f(&mut self.up.bias);
        f(&mut self.down.weight);
        f(&mut self.down.bias);
    }

    fn cast<U: Scalar>(&self) -> SubBlock<U> {
        SubBlock {
            ln_attn: NormParams { gain: self.ln_attn.gain.cast(), shift: self.ln_attn.shift.cast() },
            q: self.q.cast(),
            k: self.k.cast(),
            v: self.v.cast(),
            o: self.o.cast(),
            ln_ffn: NormParams { gain: self.ln_ffn.gain.cast(), shift: self.ln_ffn.shift.cast() },
            up: self.up.cast(),
            down: self.down.cast(),
            heads: self.heads,
        }
    }
}

/// One spatio-temporal block: spatial attention over the `J` joint tokens
/// of each frame, then temporal attention over the frame tokens of each
/// joint. Weights are shared across frames (spatial) and joints (temporal).
#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    spatial: SubBlock<T>,
    temporal: SubBlock<T>,
}

/// Intermediates of one block application.
#[derive(Debug, Clone)]
pub struct BlockTrace<T> {
    spatial: Vec<SubBlockTrace<T>>,
    temporal: Vec<SubBlockTrace<T>>,
}

impl<T: Scalar> Block<T> {
    pub fn init(channels: usize, heads: usize, rng: &mut dyn RngCore) -> Self {
        Block {
            spatial: SubBlock::init(channels, heads, rng),
            temporal: SubBlock::init(channels, heads, rng),
        }
    }

    pub fn visit_params(&self, f: &mut impl FnMut(&Tensor<T>)) {
        self.spatial.visit(f);
        self.temporal.visit(f);
    }

    pub fn visit_params_mut(&mut self, f: &mut impl FnMut(&mut Tensor<T>)) {
        self.spatial.visit_mut(f);
        self.temporal.visit_mut(f);
    }

    pub fn cast<U: Scalar>(&self) -> Block<U> {
        Block { spatial: self.spatial.cast(), temporal: self.temporal.cast() }
    }

    pub fn forward(&self, grid: &Tensor<T>) -> Result<(Tensor<T>, BlockTrace<T>)> {
        let (frames, joints, channels) = (grid.shape()[0], grid.shape()[1], grid.shape()[2]);
        let stride = joints * channels;
        let mut mid = Tensor::zeros(grid.shape());
        let mut spatial_traces = Vec::with_capacity(frames);
        for t in 0..frames {
            let slab = Tensor::from_vec(
                &[joints, channels],
                grid.data()[t * stride..(t + 1) * stride].to_vec(),
            )?;
            let (out, trace) = self.spatial.forward(&slab)?;
            mid.data_mut()[t * stride..(t + 1) * stride].copy_from_slice(out.data());
            spatial_traces.push(trace);
        }
        let mut out = Tensor::zeros(grid.shape());
        let mut temporal_traces = Vec::with_capacity(joints);
        for j in 0..joints {
            let lane = slice_dim1(&mid, j);
            let (lane_out, trace) = self.temporal.forward(&lane)?;
            set_slice_dim1(&mut out, j, &lane_out);
            temporal_traces.push(trace);
        }
        Ok((out, BlockTrace { spatial: spatial_traces, temporal: temporal_traces }))
    }

    pub fn backward(&mut self, trace: &BlockTrace<T>, grad_out: &Tensor<T>) -> Tensor<T> {
        let frames = trace.spatial.len();
        let joints = trace.temporal.len();
        let channels = grad_out.shape()[2];
        let stride = joints * channels;
        let mut grad_mid = Tensor::zeros(grad_out.shape());
        for j in 0..joints {
            let lane_grad = slice_dim1(grad_out, j);
            let g = self.temporal.backward(&trace.temporal[j], &lane_grad);
            set_slice_dim1(&mut grad_mid, j, &g);
        }
        let mut grad_in = Tensor::zeros(grad_out.shape());
        for t in 0..frames {
            let slab_grad = Tensor::from_vec(
                &[joints, channels],
                grad_mid.data()[t * stride..(t + 1) * stride].to_vec(),
            )
            .expect("slab gradient shape");
            let g = self.spatial.backward(&trace.spatial[t], &slab_grad);
            grad_in.data_mut()[t * stride..(t + 1) * stride].copy_from_slice(g.data());
        }
        grad_in
    }
}

/// The full host model with pruning and recovery plugged in.
#[derive(Debug, Clone, PartialEq)]
pub struct HostModel<T = f32> {
    pub config: ModelConfig,
    embed: LinearLayer<T>,
    position: Tensor<T>,
    blocks: Vec<Block<T>>,
    head: LinearLayer<T>,
    recover: RecoverParams<T>,
}

/// Everything the backward pass needs from one forward pass.
pub struct Trace<T = f32> {
    poses: Tensor<T>,
    pre_blocks: Vec<BlockTrace<T>>,
    /// Frame indexes carried into the post-prune blocks, in processing
    /// order (seq2frame may prepend the center frame).
    pub kept_indexes: Vec<usize>,
    /// Density-peaks diagnostics when the TPC strategy ran.
    pub cluster: Option<ClusterResult<T>>,
    post_blocks: Vec<BlockTrace<T>>,
    recover: Option<RecoverTrace<T>>,
    kept_grid: Tensor<T>,
    head_input: Tensor<T>,
    center_position: Option<usize>,
    /// Model output (also returned by the forward call).
    pub output: Tensor<T>,
}

impl<T: Scalar> HostModel<T> {
    /// Builds a model with Xavier-uniform projections, a small random
    /// temporal position table, and a zero recovery query bank.
    pub fn init(config: ModelConfig, rng: &mut dyn RngCore) -> Result<Self> {
        config.validate()?;
        let embed = LinearLayer::init(2, config.channels, rng);
        let position = Tensor::uniform(&[config.frames, config.channels], -0.1, 0.1, rng);
        let blocks =
            (0..config.blocks).map(|_| Block::init(config.channels, config.heads, rng)).collect();
        let head = LinearLayer::init(config.channels, 3, rng);
        let recover = RecoverParams::init(config.recovered, config.channels, config.heads, rng)?;
        Ok(HostModel { config, embed, position, blocks, head, recover })
    }

    /// All-zero parameters; a scaffold for decoding serialized weights.
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let sub = || SubBlock {
            ln_attn: NormParams::init(c),
            q: LinearLayer::zeros(c, c),
            k: LinearLayer::zeros(c, c),
            v: LinearLayer::zeros(c, c),
            o: LinearLayer::zeros(c, c),
            ln_ffn: NormParams::init(c),
            up: LinearLayer::zeros(c, 2 * c),
            down: LinearLayer::zeros(2 * c, c),
            heads: config.heads,
        };
        Ok(HostModel {
            config,
            embed: LinearLayer::zeros(2, c),
            position: Tensor::zeros(&[config.frames, c]),
            blocks: (0..config.blocks).map(|_| Block { spatial: sub(), temporal: sub() }).collect(),
            head: LinearLayer::zeros(c, 3),
            recover: RecoverParams::zeroed(config.recovered, c, config.heads)?,
        })
    }

    pub fn recover_params(&self) -> &RecoverParams<T> {
        &self.recover
    }

    /// Per-joint linear lift of the 2-D poses plus the temporal position
    /// table broadcast over joints.
    pub fn embed(&self, poses: &Tensor<T>) -> Result<Tensor<T>> {
        let cfg = &self.config;
        if poses.shape() != [cfg.frames, cfg.joints, 2] {
            return Err(Error::Shape(format!(
                "expected poses {:?}, got {:?}",
                [cfg.frames, cfg.joints, 2],
                poses.shape()
            )));
        }
        let mut tokens = self.embed.forward(poses)?;
        for t in 0..cfg.frames {
            for j in 0..cfg.joints {
                let base = (t * cfg.joints + j) * cfg.channels;
                for c in 0..cfg.channels {
                    tokens.data_mut()[base + c] =
                        tokens.data()[base + c] + self.position.data()[t * cfg.channels + c];
                }
            }
        }
        Ok(tokens)
    }

    /// Forward pass for the configured pipeline.
    pub fn forward(&self, poses: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_traced(poses).map(|(out, _)| out)
    }

    /// Forward pass keeping all intermediates for [`HostModel::backward`].
    pub fn forward_traced(&self, poses: &Tensor<T>) -> Result<(Tensor<T>, Trace<T>)> {
        let cfg = self.config;
        let mut grid = self.embed(poses)?;
        let mut pre_blocks = Vec::with_capacity(cfg.prune_after);
        for block in &self.blocks[..cfg.prune_after] {
            let (next, trace) = block.forward(&grid)?;
            pre_blocks.push(trace);
            grid = next;
        }

        let (mut kept_indexes, cluster) = self.select(poses, &grid, &pre_blocks)?;
        let mut center_position = None;
        if cfg.pipeline == Pipeline::Seq2Frame {
            let center = cfg.center_frame();
            match kept_indexes.iter().position(|&i| i == center) {
                Some(pos) => center_position = Some(pos),
                None => {
                    kept_indexes.insert(0, center);
                    center_position = Some(0);
                }
            }
        }
        let mut kept = gather_frames(&grid, &kept_indexes);

        let mut post_blocks = Vec::with_capacity(cfg.blocks - cfg.prune_after);
        for block in &self.blocks[cfg.prune_after..] {
            let (next, trace) = block.forward(&kept)?;
            post_blocks.push(trace);
            kept = next;
        }
        let kept_grid = kept.clone();

        let (output, head_input, recover) = match cfg.pipeline {
            Pipeline::Seq2Frame => {
                let pos = center_position.expect("seq2frame tracks the center token");
                let stride = cfg.joints * cfg.channels;
                let center_slab = Tensor::from_vec(
                    &[1, cfg.joints, cfg.channels],
                    kept.data()[pos * stride..(pos + 1) * stride].to_vec(),
                )?;
                let out = self.head.forward(&center_slab)?;
                (out, center_slab, None)
            }
            Pipeline::Seq2Seq => {
                let (recovered, trace) = match cfg.recover_strategy {
                    RecoverStrategy::Tra => {
                        let (r, t) = recover_tra_traced(&kept, &self.recover)?;
                        (r, Some(t))
                    }
                    RecoverStrategy::Nearest => {
                        (recover_nearest(&kept, &kept_indexes, cfg.frames)?, None)
                    }
                    RecoverStrategy::Linear => {
                        (recover_linear(&kept, &kept_indexes, cfg.frames)?, None)
                    }
                };
                let out = self.head.forward(&recovered)?;
                (out, recovered, trace)
            }
        };

        let trace = Trace {
            poses: poses.clone(),
            pre_blocks,
            kept_indexes,
            cluster,
            post_blocks,
            recover,
            kept_grid,
            head_input,
            center_position,
            output: output.clone(),
        };
        Ok((output, trace))
    }

    /// Unpruned reference pass: every block runs on the full-length
    /// sequence and no recovery stage is involved.
    pub fn forward_baseline(&self, poses: &Tensor<T>) -> Result<Tensor<T>> {
        let cfg = self.config;
        let mut grid = self.embed(poses)?;
        for block in &self.blocks {
            let (next, _) = block.forward(&grid)?;
            grid = next;
        }
        match cfg.pipeline {
            Pipeline::Seq2Seq => self.head.forward(&grid),
            Pipeline::Seq2Frame => {
                let center = cfg.center_frame();
                let stride = cfg.joints * cfg.channels;
                let slab = Tensor::from_vec(
                    &[1, cfg.joints, cfg.channels],
                    grid.data()[center * stride..(center + 1) * stride].to_vec(),
                )?;
                self.head.forward(&slab)
            }
        }
    }

    fn select(
        &self,
        poses: &Tensor<T>,
        grid: &Tensor<T>,
        pre_blocks: &[BlockTrace<T>],
    ) -> Result<(Vec<usize>, Option<ClusterResult<T>>)> {
        let cfg = self.config;
        match cfg.prune_strategy {
            PruneStrategy::Tpc => {
                let (_, cluster) = select_tpc(grid, &cfg.prune_config())?;
                Ok((cluster.selected.clone(), Some(cluster)))
            }
            PruneStrategy::Uniform => Ok((select_uniform(cfg.frames, cfg.keep)?, None)),
            PruneStrategy::Attention => {
                let trace = pre_blocks.last().expect("at least one block before pruning");
                let scores = aggregate_temporal_attention(trace);
                Ok((select_by_attention(grid, &scores, cfg.keep)?, None))
            }
            PruneStrategy::Motion => Ok((select_by_motion(poses, cfg.keep)?, None)),
        }
    }

    /// Received-attention saliency at `block` (1-based, at most the prune
    /// boundary): column means of the temporal attention maps, averaged
    /// over heads and joints. Nonnegative, sums to one.
    pub fn temporal_attention_scores(&self, poses: &Tensor<T>, block: usize) -> Result<Vec<T>> {
        let cfg = self.config;
        if block == 0 || block > cfg.prune_after {
            return Err(Error::Config(format!(
                "attention scores come from blocks 1..={} (full-length), requested {}",
                cfg.prune_after, block
            )));
        }
        let mut grid = self.embed(poses)?;
        let mut wanted = None;
        for b in &self.blocks[..block] {
            let (next, trace) = b.forward(&grid)?;
            grid = next;
            wanted = Some(trace);
        }
        Ok(aggregate_temporal_attention(&wanted.expect("block >= 1")))
    }

    /// Backpropagates `grad_output` through the traced forward pass,
    /// accumulating parameter gradients.
    pub fn backward(&mut self, trace: &Trace<T>, grad_output: &Tensor<T>) -> Result<()> {
        let cfg = self.config;
        let grad_head_input = self.head.backward(&trace.head_input, grad_output);

        let mut grad_kept = match cfg.pipeline {
            Pipeline::Seq2Frame => {
                let pos = trace.center_position.expect("seq2frame trace has a center");
                let mut g = Tensor::zeros(trace.kept_grid.shape());
                let stride = cfg.joints * cfg.channels;
                g.data_mut()[pos * stride..(pos + 1) * stride]
                    .copy_from_slice(grad_head_input.data());
                g
            }
            Pipeline::Seq2Seq => match cfg.recover_strategy {
                RecoverStrategy::Tra => {
                    let rec = trace.recover.as_ref().expect("TRA trace present");
                    recover_tra_backward(&mut self.recover, rec, &grad_head_input)
                }
                RecoverStrategy::Nearest => recover_nearest_backward(
                    &grad_head_input,
                    &trace.kept_indexes,
                    trace.kept_indexes.len(),
                ),
                RecoverStrategy::Linear => recover_linear_backward(
                    &grad_head_input,
                    &trace.kept_indexes,
                    trace.kept_indexes.len(),
                ),
            },
        };

        for (block, block_trace) in
            self.blocks[cfg.prune_after..].iter_mut().zip(&trace.post_blocks).rev()
        {
            grad_kept = block.backward(block_trace, &grad_kept);
        }

        // Scatter the kept-token gradient back onto the full-length grid;
        // pruned tokens influenced only the (piecewise-constant) selection
        // and receive zero gradient.
        let mut grad_grid = Tensor::zeros(&[cfg.frames, cfg.joints, cfg.channels]);
        let stride = cfg.joints * cfg.channels;
        for (row, &t) in trace.kept_indexes.iter().enumerate() {
            let dst = &mut grad_grid.data_mut()[t * stride..(t + 1) * stride];
            let src = &grad_kept.data()[row * stride..(row + 1) * stride];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = *d + *s;
            }
        }

        for (block, block_trace) in
            self.blocks[..cfg.prune_after].iter_mut().zip(&trace.pre_blocks).rev()
        {
            grad_grid = block.backward(block_trace, &grad_grid);
        }

        // Embedding: the position table gets the per-frame sum over joints.
        let mut grad_position = Tensor::zeros(self.position.shape());
        for t in 0..cfg.frames {
            for j in 0..cfg.joints {
                let base = (t * cfg.joints + j) * cfg.channels;
                for c in 0..cfg.channels {
                    grad_position.data_mut()[t * cfg.channels + c] =
                        grad_position.data()[t * cfg.channels + c] + grad_grid.data()[base + c];
                }
            }
        }
        self.position.accumulate_grad(&grad_position);
        let _ = self.embed.backward(&trace.poses, &grad_grid);
        Ok(())
    }

    /// One gradient-descent step on the mean MPJPE loss over the batch;
    /// returns the pre-step loss.
    pub fn train_step(
        &mut self,
        batch: &[(Tensor<T>, Tensor<T>)],
        learning_rate: f64,
    ) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Config("empty training batch".into()));
        }
        self.zero_grads();
        let inv = 1.0 / batch.len() as f64;
        let mut total = 0.0f64;
        for (poses, target) in batch {
            let (output, trace) = self.forward_traced(poses)?;
            let target = self.target_for_pipeline(target)?;
            let (loss, mut grad) = mpjpe_loss(&output, &target)?;
            total += loss * inv;
            for g in grad.data_mut() {
                *g = *g * T::from_f64(inv);
            }
            self.backward(&trace, &grad)?;
        }
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("training loss diverged: {total}")));
        }
        let lr = T::from_f64(learning_rate);
        self.visit_params_mut(&mut |p| p.sgd_step(lr));
        Ok(total)
    }

    /// Center-frame slice of a full-length target when the pipeline only
    /// predicts the center frame.
    fn target_for_pipeline(&self, target: &Tensor<T>) -> Result<Tensor<T>> {
        let cfg = self.config;
        match cfg.pipeline {
            Pipeline::Seq2Seq => Ok(target.clone()),
            Pipeline::Seq2Frame => {
                if target.shape()[0] == 1 {
                    return Ok(target.clone());
                }
                let center = cfg.center_frame();
                let stride = cfg.joints * 3;
                Tensor::from_vec(
                    &[1, cfg.joints, 3],
                    target.data()[center * stride..(center + 1) * stride].to_vec(),
                )
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.visit_params_mut(&mut |p| {
            p.enable_grad();
            p.zero_grad();
        });
    }

    /// Visits every parameter tensor in declaration order (the
    /// serialization order).
    pub fn visit_params(&self, f: &mut impl FnMut(&Tensor<T>)) {
        f(&self.embed.weight);
        f(&self.embed.bias);
        f(&self.position);
        for block in &self.blocks {
            block.spatial.visit(f);
            block.temporal.visit(f);
        }
        f(&self.head.weight);
        f(&self.head.bias);
        self.recover.visit(f);
    }

    pub fn visit_params_mut(&mut self, f: &mut impl FnMut(&mut Tensor<T>)) {
        f(&mut self.embed.weight);
        f(&mut self.embed.bias);
        f(&mut self.position);
        for block in &mut self.blocks {
            block.spatial.visit_mut(f);
            block.temporal.visit_mut(f);
        }
        f(&mut self.head.weight);
        f(&mut self.head.bias);
        self.recover.visit_mut(f);
    }

    /// Host parameter count excluding the recovery stage.
    pub fn host_param_count(&self) -> u64 {
        let mut total = 0u64;
        self.visit_params(&mut |p| total += p.len() as u64);
        total - self.recover.param_count()
    }

    pub fn cast<U: Scalar>(&self) -> HostModel<U> {
        HostModel {
            config: self.config,
            embed: self.embed.cast(),
            position: self.position.cast(),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block { spatial: b.spatial.cast(), temporal: b.temporal.cast() })
                .collect(),
            head: self.head.cast(),
            recover: self.recover.cast(),
        }
    }
}

/// Column means of the temporal attention maps at one block, averaged over
/// heads and joints: how much attention each frame received.
fn aggregate_temporal_attention<T: Scalar>(trace: &BlockTrace<T>) -> Vec<T> {
    let joints = trace.temporal.len();
    let frames = trace.temporal[0].attn[0].shape()[0];
    let heads = trace.temporal[0].attn.len();
    let mut scores = vec![0.0f64; frames];
    for lane in &trace.temporal {
        for weights in &lane.attn {
            for row in 0..frames {
                for (col, score) in scores.iter_mut().enumerate() {
                    *score += weights.data()[row * frames + col].as_f64();
                }
            }
        }
    }
    let norm = 1.0 / (frames * joints * heads) as f64;
    scores.iter().map(|&s| T::from_f64(s * norm)).collect()
}

/// Mean per-joint position error and its gradient with respect to the
/// prediction. Prediction and target are `N×J×3`.
pub fn mpjpe_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if pred.shape() != target.shape() || pred.last_dim() != 3 {
        return Err(Error::Shape(format!(
            "MPJPE loss over {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let count = pred.len() / 3;
    let inv = 1.0 / count as f64;
    let mut loss = 0.0f64;
    let mut grad = Tensor::zeros(pred.shape());
    for i in 0..count {
        let base = i * 3;
        let mut sq = 0.0f64;
        for d in 0..3 {
            let diff = pred.data()[base + d].as_f64() - target.data()[base + d].as_f64();
            sq += diff * diff;
        }
        let dist = sq.sqrt();
        loss += dist * inv;
        if dist > 0.0 {
            let scale = inv / dist;
            for d in 0..3 {
                let diff = pred.data()[base + d].as_f64() - target.data()[base + d].as_f64();
                grad.data_mut()[base + d] = T::from_f64(diff * scale);
            }
        }
    }
    Ok((loss, grad))
}
