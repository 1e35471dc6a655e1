//! Recovery of full-length frame tokens from the pruned representative set.
//!
//! The learned strategy (TRA) is a single multi-head cross-attention layer:
//! a bank of learnable query tokens — initialized to exactly zero — attends
//! over the representative tokens of each joint and the result is added
//! back onto the query bank. There is no feed-forward network and the
//! projections carry no bias, so the whole stage costs one MCA. The same
//! query bank is shared by every joint.
//!
//! Nearest and linear interpolation over the selected frame indexes are
//! provided as parameter-free baselines; both are the identity when the
//! selection covers every frame.

use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;
use rand_core::RngCore;

use crate::tensor::{
    col_slice, matmul, matmul_backward, set_col_slice, set_slice_dim1, slice_dim1, softmax_rows,
    softmax_rows_backward, Scalar, Tensor,
};
use crate::{Error, Result};

/// Parameters of the token-recovering attention: the learnable query bank
/// and the four head projections (no biases).
#[derive(Debug, Clone, PartialEq)]
pub struct RecoverParams<T = f32> {
    /// Learnable query tokens, `f′×C`, exactly zero at initialization.
    pub queries: Tensor<T>,
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
    pub heads: usize,
}

impl<T: Scalar> RecoverParams<T> {
    /// Zero query bank with `recovered` rows, Xavier-uniform projections.
    pub fn init(recovered: usize, channels: usize, heads: usize, rng: &mut dyn RngCore) -> Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return Err(Error::Config(format!(
                "channel dim {channels} not divisible by head count {heads}"
            )));
        }
        let bound = (6.0 / (2 * channels) as f64).sqrt();
        Ok(RecoverParams {
            queries: Tensor::zeros(&[recovered, channels]),
            wq: Tensor::uniform(&[channels, channels], -bound, bound, rng),
            wk: Tensor::uniform(&[channels, channels], -bound, bound, rng),
            wv: Tensor::uniform(&[channels, channels], -bound, bound, rng),
            wo: Tensor::uniform(&[channels, channels], -bound, bound, rng),
            heads,
        })
    }

    /// All-zero parameters; a decoding scaffold.
    pub fn zeroed(recovered: usize, channels: usize, heads: usize) -> Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return Err(Error::Config(format!(
                "channel dim {channels} not divisible by head count {heads}"
            )));
        }
        Ok(RecoverParams {
            queries: Tensor::zeros(&[recovered, channels]),
            wq: Tensor::zeros(&[channels, channels]),
            wk: Tensor::zeros(&[channels, channels]),
            wv: Tensor::zeros(&[channels, channels]),
            wo: Tensor::zeros(&[channels, channels]),
            heads,
        })
    }

    pub fn channels(&self) -> usize {
        self.queries.shape()[1]
    }

    /// Number of recovered tokens (`f′`, rows of the query bank).
    pub fn recovered(&self) -> usize {
        self.queries.shape()[0]
    }

    /// Total parameter count: `f′·C + 4·C²`.
    pub fn param_count(&self) -> u64 {
        (self.queries.len() + self.wq.len() + self.wk.len() + self.wv.len() + self.wo.len()) as u64
    }

    pub fn cast<U: Scalar>(&self) -> RecoverParams<U> {
        RecoverParams {
            queries: self.queries.cast(),
            wq: self.wq.cast(),
            wk: self.wk.cast(),
            wv: self.wv.cast(),
            wo: self.wo.cast(),
            heads: self.heads,
        }
    }

    pub fn visit(&self, f: &mut impl FnMut(&Tensor<T>)) {
        f(&self.queries);
        f(&self.wq);
        f(&self.wk);
        f(&self.wv);
        f(&self.wo);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut Tensor<T>)) {
        f(&mut self.queries);
        f(&mut self.wq);
        f(&mut self.wk);
        f(&mut self.wv);
        f(&mut self.wo);
    }
}

/// Intermediates of one MCA application, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct McaTrace<T = f32> {
    projected_q: Tensor<T>,
    projected_k: Tensor<T>,
    projected_v: Tensor<T>,
    /// Per-head attention weights, each `n_q×n_k`, rows summing to one.
    pub attention: Vec<Tensor<T>>,
    context: Tensor<T>,
}

/// Multi-head cross-attention: per head `Softmax(QKᵀ/√d)·V` with
/// `d = C/heads`, heads concatenated and output-projected. No feed-forward
/// network follows.
pub fn mca<T: Scalar>(
    queries: &Tensor<T>,
    keys_values: &Tensor<T>,
    params: &RecoverParams<T>,
) -> Result<(Tensor<T>, McaTrace<T>)> {
    let channels = params.channels();
    if queries.rank() != 2 || queries.shape()[1] != channels {
        return Err(Error::Shape(format!(
            "queries {:?} incompatible with channel dim {channels}",
            queries.shape()
        )));
    }
    if keys_values.rank() != 2 || keys_values.shape()[1] != channels {
        return Err(Error::Shape(format!(
            "keys/values {:?} incompatible with channel dim {channels}",
            keys_values.shape()
        )));
    }
    let head_dim = channels / params.heads;
    let scale = T::from_f64(1.0 / (head_dim as f64).sqrt());

    let projected_q = matmul(queries, &params.wq)?;
    let projected_k = matmul(keys_values, &params.wk)?;
    let projected_v = matmul(keys_values, &params.wv)?;

    let n_q = queries.shape()[0];
    let mut context = Tensor::zeros(&[n_q, channels]);
    let mut attention = Vec::with_capacity(params.heads);
    for h in 0..params.heads {
        let q_h = col_slice(&projected_q, h * head_dim, head_dim);
        let k_h = col_slice(&projected_k, h * head_dim, head_dim);
        let v_h = col_slice(&projected_v, h * head_dim, head_dim);
        let mut logits = matmul(&q_h, &k_h.transposed())?;
        for v in logits.data_mut() {
            *v = *v * scale;
        }
        let weights = softmax_rows(&logits);
        let head_out = matmul(&weights, &v_h)?;
        set_col_slice(&mut context, h * head_dim, &head_out);
        attention.push(weights);
    }
    let out = matmul(&context, &params.wo)?;
    Ok((out, McaTrace { projected_q, projected_k, projected_v, attention, context }))
}

/// Adjoint of [`mca`]. Accumulates projection gradients into `params` and
/// returns `(grad_queries, grad_keys_values)`.
pub fn mca_backward<T: Scalar>(
    queries: &Tensor<T>,
    keys_values: &Tensor<T>,
    params: &mut RecoverParams<T>,
    trace: &McaTrace<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let channels = params.channels();
    let head_dim = channels / params.heads;
    let scale = T::from_f64(1.0 / (head_dim as f64).sqrt());
    let n_q = queries.shape()[0];
    let n_k = keys_values.shape()[0];

    let (grad_context, grad_wo) = matmul_backward(&trace.context, &params.wo, grad_out);
    params.wo.accumulate_grad(&grad_wo);

    let mut grad_q = Tensor::zeros(&[n_q, channels]);
    let mut grad_k = Tensor::zeros(&[n_k, channels]);
    let mut grad_v = Tensor::zeros(&[n_k, channels]);
    for h in 0..params.heads {
        let q_h = col_slice(&trace.projected_q, h * head_dim, head_dim);
        let k_h = col_slice(&trace.projected_k, h * head_dim, head_dim);
        let v_h = col_slice(&trace.projected_v, h * head_dim, head_dim);
        let weights = &trace.attention[h];
        let grad_head = col_slice(&grad_context, h * head_dim, head_dim);

        let (grad_weights, grad_v_h) = matmul_backward(weights, &v_h, &grad_head);
        let mut grad_logits = softmax_rows_backward(weights, &grad_weights);
        for v in grad_logits.data_mut() {
            *v = *v * scale;
        }
        let (grad_q_h, grad_k_h_t) = matmul_backward(&q_h, &k_h.transposed(), &grad_logits);
        set_col_slice(&mut grad_q, h * head_dim, &grad_q_h);
        set_col_slice(&mut grad_k, h * head_dim, &grad_k_h_t.transposed());
        set_col_slice(&mut grad_v, h * head_dim, &grad_v_h);
    }

    let (grad_queries, grad_wq) = matmul_backward(queries, &params.wq, &grad_q);
    let (grad_kv_k, grad_wk) = matmul_backward(keys_values, &params.wk, &grad_k);
    let (grad_kv_v, grad_wv) = matmul_backward(keys_values, &params.wv, &grad_v);
    params.wq.accumulate_grad(&grad_wq);
    params.wk.accumulate_grad(&grad_wk);
    params.wv.accumulate_grad(&grad_wv);
    let grad_kv = grad_kv_k.add(&grad_kv_v).expect("matching kv gradient shapes");
    (grad_queries, grad_kv)
}

/// Per-joint intermediates of a full recovery pass.
#[derive(Debug, Clone)]
pub struct RecoverTrace<T = f32> {
    pub per_joint: Vec<McaTrace<T>>,
    selected_joints: Vec<Tensor<T>>,
}

/// Recovers an `f′×J×C` grid from the selected `f×J×C` tokens: for each
/// joint independently, `queries + MCA(queries, selected_j, selected_j)`.
/// With the default query bank this restores the full input frame count.
pub fn recover_tra<T: Scalar>(selected: &Tensor<T>, params: &RecoverParams<T>) -> Result<Tensor<T>> {
    recover_tra_traced(selected, params).map(|(out, _)| out)
}

/// [`recover_tra`] keeping the intermediates needed by
/// [`recover_tra_backward`].
pub fn recover_tra_traced<T: Scalar>(
    selected: &Tensor<T>,
    params: &RecoverParams<T>,
) -> Result<(Tensor<T>, RecoverTrace<T>)> {
    if selected.rank() != 3 || selected.shape()[2] != params.channels() {
        return Err(Error::Shape(format!(
            "selected grid {:?} incompatible with channel dim {}",
            selected.shape(),
            params.channels()
        )));
    }
    let joints = selected.shape()[1];
    let recovered = params.recovered();
    let channels = params.channels();
    let mut out = Tensor::zeros(&[recovered, joints, channels]);
    let mut per_joint = Vec::with_capacity(joints);
    let mut selected_joints = Vec::with_capacity(joints);
    for j in 0..joints {
        let tokens_j = slice_dim1(selected, j);
        let (attended, trace) = mca(&params.queries, &tokens_j, params)?;
        let slab = params.queries.add(&attended)?;
        set_slice_dim1(&mut out, j, &slab);
        per_joint.push(trace);
        selected_joints.push(tokens_j);
    }
    Ok((out, RecoverTrace { per_joint, selected_joints }))
}

/// Adjoint of [`recover_tra_traced`]: accumulates parameter gradients and
/// returns the gradient with respect to the selected tokens.
pub fn recover_tra_backward<T: Scalar>(
    params: &mut RecoverParams<T>,
    trace: &RecoverTrace<T>,
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let joints = trace.per_joint.len();
    let keep = trace.selected_joints[0].shape()[0];
    let channels = params.channels();
    let mut grad_selected = Tensor::zeros(&[keep, joints, channels]);
    let mut grad_queries_total = Tensor::zeros(params.queries.shape());
    for j in 0..joints {
        let grad_slab = slice_dim1(grad_out, j);
        // Residual path plus query path; the bank is shared across joints.
        grad_queries_total = grad_queries_total.add(&grad_slab).expect("query grad shape");
        let queries = params.queries.clone();
        let (grad_q, grad_kv) =
            mca_backward(&queries, &trace.selected_joints[j], params, &trace.per_joint[j], &grad_slab);
        grad_queries_total = grad_queries_total.add(&grad_q).expect("query grad shape");
        set_slice_dim1(&mut grad_selected, j, &grad_kv);
    }
    params.queries.accumulate_grad(&grad_queries_total);
    grad_selected
}

/// Expands `f×J×C` tokens back to `frames×J×C` by copying each frame's
/// nearest selected token; distance ties go to the earlier index.
pub fn recover_nearest<T: Scalar>(
    selected: &Tensor<T>,
    selected_indexes: &[usize],
    frames: usize,
) -> Result<Tensor<T>> {
    if selected_indexes.is_empty() {
        return Err(Error::Config("recovery from an empty selection".into()));
    }
    check_selection(selected, selected_indexes)?;
    let (joints, channels) = (selected.shape()[1], selected.shape()[2]);
    let stride = joints * channels;
    let mut out = Tensor::zeros(&[frames, joints, channels]);
    for t in 0..frames {
        let src = nearest_position(selected_indexes, t);
        out.data_mut()[t * stride..(t + 1) * stride]
            .copy_from_slice(&selected.data()[src * stride..(src + 1) * stride]);
    }
    Ok(out)
}

/// Adjoint of [`recover_nearest`]: scatter-adds frame gradients back onto
/// their source tokens.
pub fn recover_nearest_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    selected_indexes: &[usize],
    keep: usize,
) -> Tensor<T> {
    let (frames, joints, channels) = (grad_out.shape()[0], grad_out.shape()[1], grad_out.shape()[2]);
    let stride = joints * channels;
    let mut grad = Tensor::zeros(&[keep, joints, channels]);
    for t in 0..frames {
        let src = nearest_position(selected_indexes, t);
        let dst = &mut grad.data_mut()[src * stride..(src + 1) * stride];
        let g = &grad_out.data()[t * stride..(t + 1) * stride];
        for (d, s) in dst.iter_mut().zip(g) {
            *d = *d + *s;
        }
    }
    grad
}

/// Expands `f×J×C` tokens to `frames×J×C` by channel-wise linear blending
/// between consecutive selected frames; frames outside the selected range
/// clamp to the nearest endpoint.
pub fn recover_linear<T: Scalar>(
    selected: &Tensor<T>,
    selected_indexes: &[usize],
    frames: usize,
) -> Result<Tensor<T>> {
    if selected_indexes.len() < 2 {
        return Err(Error::Config(format!(
            "linear recovery needs at least two selected tokens, got {}",
            selected_indexes.len()
        )));
    }
    check_selection(selected, selected_indexes)?;
    let (joints, channels) = (selected.shape()[1], selected.shape()[2]);
    let stride = joints * channels;
    let mut out = Tensor::zeros(&[frames, joints, channels]);
    for t in 0..frames {
        let (lo, hi, alpha) = blend_position(selected_indexes, t);
        let a = T::from_f64(1.0 - alpha);
        let b = T::from_f64(alpha);
        let lo_row = &selected.data()[lo * stride..(lo + 1) * stride];
        let hi_row = &selected.data()[hi * stride..(hi + 1) * stride];
        let dst = &mut out.data_mut()[t * stride..(t + 1) * stride];
        for i in 0..stride {
            dst[i] = a * lo_row[i] + b * hi_row[i];
        }
    }
    Ok(out)
}

/// Adjoint of [`recover_linear`].
pub fn recover_linear_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    selected_indexes: &[usize],
    keep: usize,
) -> Tensor<T> {
    let (frames, joints, channels) = (grad_out.shape()[0], grad_out.shape()[1], grad_out.shape()[2]);
    let stride = joints * channels;
    let mut grad = Tensor::zeros(&[keep, joints, channels]);
    for t in 0..frames {
        let (lo, hi, alpha) = blend_position(selected_indexes, t);
        let a = T::from_f64(1.0 - alpha);
        let b = T::from_f64(alpha);
        let g = &grad_out.data()[t * stride..(t + 1) * stride];
        for i in 0..stride {
            let lo_slot = lo * stride + i;
            grad.data_mut()[lo_slot] = grad.data_mut()[lo_slot] + a * g[i];
            let hi_slot = hi * stride + i;
            grad.data_mut()[hi_slot] = grad.data_mut()[hi_slot] + b * g[i];
        }
    }
    grad
}

fn check_selection<T: Scalar>(selected: &Tensor<T>, indexes: &[usize]) -> Result<()> {
    if selected.rank() != 3 || selected.shape()[0] != indexes.len() {
        return Err(Error::Shape(format!(
            "selected grid {:?} does not match {} indexes",
            selected.shape(),
            indexes.len()
        )));
    }
    if indexes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("selected indexes must be strictly ascending".into()));
    }
    Ok(())
}

/// Position (within the selection) of the token nearest to frame `t`; ties
/// go to the earlier index.
fn nearest_position(indexes: &[usize], t: usize) -> usize {
    let mut best = 0usize;
    let mut best_dist = usize::MAX;
    for (pos, &idx) in indexes.iter().enumerate() {
        let dist = idx.abs_diff(t);
        if dist < best_dist {
            best_dist = dist;
            best = pos;
        }
    }
    best
}

/// Bracketing positions and blend fraction for frame `t`; clamps outside
/// the selected range.
fn blend_position(indexes: &[usize], t: usize) -> (usize, usize, f64) {
    if t <= indexes[0] {
        return (0, 0, 0.0);
    }
    if t >= *indexes.last().unwrap() {
        let last = indexes.len() - 1;
        return (last, last, 0.0);
    }
    let mut hi = 1;
    while indexes[hi] < t {
        hi += 1;
    }
    let lo = hi - 1;
    let alpha = (t - indexes[lo]) as f64 / (indexes[hi] - indexes[lo]) as f64;
    (lo, hi, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::tensor::grad_check;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn init_rejects_indivisible_heads() {
        let mut r = rng(1);
        assert!(RecoverParams::<f32>::init(4, 6, 4, &mut r).is_err());
    }

    #[test]
    fn queries_start_at_exactly_zero() {
        let mut r = rng(2);
        let p = RecoverParams::<f32>::init(5, 8, 2, &mut r).unwrap();
        assert!(p.queries.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn param_count_is_bank_plus_four_squares() {
        let mut r = rng(3);
        let p = RecoverParams::<f32>::init(7, 8, 2, &mut r).unwrap();
        assert_eq!(p.param_count(), 7 * 8 + 4 * 8 * 8);
    }

    #[test]
    fn zero_queries_give_uniform_attention_and_identical_rows() {
        let mut r = rng(4);
        let p = RecoverParams::<f32>::init(6, 8, 2, &mut r).unwrap();
        let kv = Tensor::<f32>::uniform(&[4, 8], -1.0, 1.0, &mut r);
        let (out, trace) = mca(&p.queries, &kv, &p).unwrap();
        for weights in &trace.attention {
            for &w in weights.data() {
                assert!((w - 0.25).abs() < 1e-6);
            }
        }
        // Every output row equals Wo applied to the mean projected value.
        let v = matmul(&kv, &p.wv).unwrap();
        let mut mean = Tensor::<f32>::zeros(&[1, 8]);
        for i in 0..4 {
            for c in 0..8 {
                mean.data_mut()[c] += v.data()[i * 8 + c] / 4.0;
            }
        }
        let want = matmul(&mean, &p.wo).unwrap();
        for i in 0..6 {
            for c in 0..8 {
                assert!((out.data()[i * 8 + c] - want.data()[c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn single_key_forces_unit_attention() {
        let mut r = rng(5);
        let p = RecoverParams::<f32>::init(3, 8, 4, &mut r).unwrap();
        let queries = Tensor::<f32>::uniform(&[3, 8], -1.0, 1.0, &mut r);
        let kv = Tensor::<f32>::uniform(&[1, 8], -1.0, 1.0, &mut r);
        let (out, trace) = mca(&queries, &kv, &p).unwrap();
        for weights in &trace.attention {
            for &w in weights.data() {
                assert!((w - 1.0).abs() < 1e-7);
            }
        }
        let want = matmul(&matmul(&kv, &p.wv).unwrap(), &p.wo).unwrap();
        for i in 0..3 {
            for c in 0..8 {
                assert!((out.data()[i * 8 + c] - want.data()[c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn single_head_matches_direct_reference() {
        let mut r = rng(6);
        let p = RecoverParams::<f64>::init(3, 5, 1, &mut r).unwrap();
        let queries = Tensor::<f64>::uniform(&[3, 5], -1.0, 1.0, &mut r);
        let kv = Tensor::<f64>::uniform(&[5, 5], -1.0, 1.0, &mut r);
        let (out, _) = mca(&queries, &kv, &p).unwrap();
        // Direct evaluation of Softmax(QKᵀ/√d)V, then the output projection.
        let q = matmul(&queries, &p.wq).unwrap();
        let k = matmul(&kv, &p.wk).unwrap();
        let v = matmul(&kv, &p.wv).unwrap();
        let scale = 1.0 / 5.0f64.sqrt();
        let mut want = Tensor::<f64>::zeros(&[3, 5]);
        for i in 0..3 {
            let logits: Vec<f64> = (0..5)
                .map(|j| (0..5).map(|c| q.data()[i * 5 + c] * k.data()[j * 5 + c]).sum::<f64>() * scale)
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for c in 0..5 {
                let mut acc = 0.0;
                for j in 0..5 {
                    acc += exps[j] / sum * v.data()[j * 5 + c];
                }
                want.data_mut()[i * 5 + c] = acc;
            }
        }
        let want = matmul(&want, &p.wo).unwrap();
        for (a, b) in out.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut r = rng(7);
        let p = RecoverParams::<f32>::init(4, 8, 2, &mut r).unwrap();
        let queries = Tensor::<f32>::uniform(&[4, 8], -2.0, 2.0, &mut r);
        let kv = Tensor::<f32>::uniform(&[6, 8], -2.0, 2.0, &mut r);
        let (_, trace) = mca(&queries, &kv, &p).unwrap();
        for weights in &trace.attention {
            for i in 0..4 {
                let s: f32 = weights.row(i).iter().sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn recover_tra_zero_init_rows_identical_per_joint() {
        let mut r = rng(8);
        let p = RecoverParams::<f32>::init(7, 8, 2, &mut r).unwrap();
        let selected = Tensor::<f32>::uniform(&[3, 2, 8], -1.0, 1.0, &mut r);
        let out = recover_tra(&selected, &p).unwrap();
        assert_eq!(out.shape(), &[7, 2, 8]);
        for j in 0..2 {
            let first: Vec<f32> = (0..8).map(|c| out.data()[j * 8 + c]).collect();
            for t in 1..7 {
                for c in 0..8 {
                    let v = out.data()[(t * 2 + j) * 8 + c];
                    assert!((v - first[c]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn recover_tra_shape_contract_holds_for_full_keep() {
        let mut r = rng(9);
        let mut p = RecoverParams::<f32>::init(4, 8, 2, &mut r).unwrap();
        // A trained-looking bank: recovery is not expected to be the
        // identity even when every frame was kept.
        p.queries = Tensor::uniform(&[4, 8], -1.0, 1.0, &mut r);
        let selected = Tensor::<f32>::uniform(&[4, 3, 8], -1.0, 1.0, &mut r);
        let out = recover_tra(&selected, &p).unwrap();
        assert_eq!(out.shape(), &[4, 3, 8]);
    }

    #[test]
    fn recover_tra_gradients_match_finite_differences() {
        let mut r = rng(10);
        let mut params = RecoverParams::<f64>::init(5, 8, 2, &mut r).unwrap();
        params.queries = Tensor::uniform(&[5, 8], -0.5, 0.5, &mut r);
        let selected = Tensor::<f64>::uniform(&[3, 2, 8], -1.0, 1.0, &mut r);
        let weights = Tensor::<f64>::uniform(&[5, 2, 8], -1.0, 1.0, &mut r);

        let mut probe = params.clone();
        let (_, trace) = recover_tra_traced(&selected, &probe).unwrap();
        let mut seed = Tensor::zeros(weights.shape());
        seed.data_mut().copy_from_slice(weights.data());
        let grad_selected = recover_tra_backward(&mut probe, &trace, &seed);

        let grads = [
            grad_selected,
            Tensor::from_vec(probe.queries.shape(), probe.queries.grad().unwrap().to_vec()).unwrap(),
            Tensor::from_vec(probe.wq.shape(), probe.wq.grad().unwrap().to_vec()).unwrap(),
            Tensor::from_vec(probe.wk.shape(), probe.wk.grad().unwrap().to_vec()).unwrap(),
            Tensor::from_vec(probe.wv.shape(), probe.wv.grad().unwrap().to_vec()).unwrap(),
            Tensor::from_vec(probe.wo.shape(), probe.wo.grad().unwrap().to_vec()).unwrap(),
        ];
        let base = params.clone();
        let err = grad_check(
            |p| {
                let mut m = base.clone();
                m.queries = p[1].clone();
                m.wq = p[2].clone();
                m.wk = p[3].clone();
                m.wv = p[4].clone();
                m.wo = p[5].clone();
                let out = recover_tra(&p[0], &m).unwrap();
                out.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
            },
            &[
                selected,
                params.queries.clone(),
                params.wq.clone(),
                params.wk.clone(),
                params.wv.clone(),
                params.wo.clone(),
            ],
            &grads,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-3, "relative error {err}");
    }

    #[test]
    fn nearest_full_selection_is_identity() {
        let mut r = rng(11);
        let grid = Tensor::<f32>::uniform(&[5, 2, 3], -1.0, 1.0, &mut r);
        let out = recover_nearest(&grid, &[0, 1, 2, 3, 4], 5).unwrap();
        assert_eq!(out.data(), grid.data());
    }

    #[test]
    fn nearest_tie_goes_to_earlier_index() {
        let mut grid = Tensor::<f32>::zeros(&[2, 1, 1]);
        grid.data_mut()[0] = 10.0;
        grid.data_mut()[1] = 20.0;
        let out = recover_nearest(&grid, &[0, 4], 5).unwrap();
        assert_eq!(out.data(), &[10.0, 10.0, 10.0, 20.0, 20.0]);
    }

    #[test]
    fn nearest_matches_loop_oracle() {
        let mut r = rng(12);
        let grid = Tensor::<f32>::uniform(&[3, 2, 2], -1.0, 1.0, &mut r);
        let idx = [1usize, 4, 6];
        let out = recover_nearest(&grid, &idx, 8).unwrap();
        for t in 0..8 {
            let mut best = 0;
            for (pos, &s) in idx.iter().enumerate() {
                let d = s.abs_diff(t);
                let bd = idx[best].abs_diff(t);
                if d < bd {
                    best = pos;
                }
            }
            for e in 0..4 {
                assert_eq!(out.data()[t * 4 + e], grid.data()[best * 4 + e]);
            }
        }
    }

    #[test]
    fn nearest_rejects_empty_selection() {
        let grid = Tensor::<f32>::zeros(&[0, 1, 1]);
        assert!(matches!(recover_nearest(&grid, &[], 4), Err(Error::Config(_))));
    }

    #[test]
    fn linear_midpoint_blend() {
        let mut grid = Tensor::<f32>::zeros(&[2, 1, 1]);
        grid.data_mut()[1] = 1.0;
        let out = recover_linear(&grid, &[0, 2], 3).unwrap();
        assert_eq!(out.data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn linear_full_selection_is_identity() {
        let mut r = rng(13);
        let grid = Tensor::<f32>::uniform(&[4, 2, 2], -1.0, 1.0, &mut r);
        let out = recover_linear(&grid, &[0, 1, 2, 3], 4).unwrap();
        assert_eq!(out.data(), grid.data());
    }

    #[test]
    fn linear_matches_piecewise_oracle_and_clamps() {
        let grid = Tensor::from_vec(&[3, 1, 1], vec![1.0f32, 3.0, 7.0]).unwrap();
        let out = recover_linear(&grid, &[2, 4, 8], 10).unwrap();
        let want = [1.0f32, 1.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 7.0];
        for (got, want) in out.data().iter().zip(want) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn linear_needs_two_tokens() {
        let grid = Tensor::<f32>::zeros(&[1, 1, 1]);
        assert!(matches!(recover_linear(&grid, &[0], 4), Err(Error::Config(_))));
    }

    #[test]
    fn interpolation_backward_matches_finite_differences() {
        let mut r = rng(14);
        let grid = Tensor::<f64>::uniform(&[3, 2, 2], -1.0, 1.0, &mut r);
        let weights = Tensor::<f64>::uniform(&[7, 2, 2], -1.0, 1.0, &mut r);
        let idx = [0usize, 3, 6];
        for linear in [false, true] {
            let mut seed = Tensor::zeros(weights.shape());
            seed.data_mut().copy_from_slice(weights.data());
            let analytic = if linear {
                recover_linear_backward(&seed, &idx, 3)
            } else {
                recover_nearest_backward(&seed, &idx, 3)
            };
            let err = grad_check(
                |p| {
                    let out = if linear {
                        recover_linear(&p[0], &idx, 7).unwrap()
                    } else {
                        recover_nearest(&p[0], &idx, 7).unwrap()
                    };
                    out.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
                },
                &[grid.clone()],
                &[analytic],
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "relative error {err}");
        }
    }
}
