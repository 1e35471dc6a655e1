//! Versioned flat binary model format.
//!
//! Layout:
//! - magic `"HOT1"` (4 bytes),
//! - twelve little-endian `u32` config fields: frames, joints, channels,
//!   blocks, heads, prune_after, keep, recovered, knn, pipeline code,
//!   prune-strategy code, recover-strategy code,
//! - every parameter tensor in declaration order as little-endian `f32`
//!   (the order walked by `HostModel::visit_params`: embedding weight and
//!   bias, position table, per block the spatial then temporal unit — each
//!   as norm gain/shift, Q/K/V/O weight+bias, norm gain/shift, feed-forward
//!   up and down weight+bias — head weight and bias, then the recovery
//!   query bank and its four projections).
//!
//! Pipeline codes: 0 seq2seq, 1 seq2frame. Prune-strategy codes: 0 tpc,
//! 1 uniform, 2 attention, 3 motion. Recover-strategy codes: 0 tra,
//! 1 nearest, 2 linear.

use alloc::format;
use alloc::vec::Vec;

use crate::flops::param_count;
use crate::model::{HostModel, ModelConfig, Pipeline, RecoverStrategy};
use crate::prune::PruneStrategy;
use crate::{Error, Result};

/// File magic; doubles as the format version.
pub const MAGIC: [u8; 4] = *b"HOT1";

const HEADER_FIELDS: usize = 12;

pub fn pipeline_code(p: Pipeline) -> u32 {
    match p {
        Pipeline::Seq2Seq => 0,
        Pipeline::Seq2Frame => 1,
    }
}

pub fn prune_code(s: PruneStrategy) -> u32 {
    match s {
        PruneStrategy::Tpc => 0,
        PruneStrategy::Uniform => 1,
        PruneStrategy::Attention => 2,
        PruneStrategy::Motion => 3,
    }
}

pub fn recover_code(s: RecoverStrategy) -> u32 {
    match s {
        RecoverStrategy::Tra => 0,
        RecoverStrategy::Nearest => 1,
        RecoverStrategy::Linear => 2,
    }
}

fn decode_pipeline(code: u32) -> Result<Pipeline> {
    match code {
        0 => Ok(Pipeline::Seq2Seq),
        1 => Ok(Pipeline::Seq2Frame),
        other => Err(Error::Decode(format!("unknown pipeline code {other}"))),
    }
}

fn decode_prune(code: u32) -> Result<PruneStrategy> {
    match code {
        0 => Ok(PruneStrategy::Tpc),
        1 => Ok(PruneStrategy::Uniform),
        2 => Ok(PruneStrategy::Attention),
        3 => Ok(PruneStrategy::Motion),
        other => Err(Error::Decode(format!("unknown prune-strategy code {other}"))),
    }
}

fn decode_recover(code: u32) -> Result<RecoverStrategy> {
    match code {
        0 => Ok(RecoverStrategy::Tra),
        1 => Ok(RecoverStrategy::Nearest),
        2 => Ok(RecoverStrategy::Linear),
        other => Err(Error::Decode(format!("unknown recover-strategy code {other}"))),
    }
}

/// Serializes a model into the flat binary layout.
pub fn encode_model(model: &HostModel<f32>) -> Vec<u8> {
    let cfg = model.config;
    let fields: [u32; HEADER_FIELDS] = [
        cfg.frames as u32,
        cfg.joints as u32,
        cfg.channels as u32,
        cfg.blocks as u32,
        cfg.heads as u32,
        cfg.prune_after as u32,
        cfg.keep as u32,
        cfg.recovered as u32,
        cfg.knn as u32,
        pipeline_code(cfg.pipeline),
        prune_code(cfg.prune_strategy),
        recover_code(cfg.recover_strategy),
    ];
    let total = param_count(&cfg).total() as usize;
    let mut bytes = Vec::with_capacity(4 + HEADER_FIELDS * 4 + total * 4);
    bytes.extend_from_slice(&MAGIC);
    for field in fields {
        bytes.extend_from_slice(&field.to_le_bytes());
    }
    model.visit_params(&mut |p| {
        for &v in p.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    });
    bytes
}

/// Parses a model from the flat binary layout, validating the magic, the
/// configuration invariants, and the exact payload length.
pub fn decode_model(bytes: &[u8]) -> Result<HostModel<f32>> {
    if bytes.len() < 4 + HEADER_FIELDS * 4 {
        return Err(Error::Decode(format!("model file truncated at {} bytes", bytes.len())));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::Decode("bad magic; not a model file".into()));
    }
    let mut fields = [0u32; HEADER_FIELDS];
    for (i, field) in fields.iter_mut().enumerate() {
        let at = 4 + i * 4;
        *field = u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"));
    }
    let config = ModelConfig {
        frames: fields[0] as usize,
        joints: fields[1] as usize,
        channels: fields[2] as usize,
        blocks: fields[3] as usize,
        heads: fields[4] as usize,
        prune_after: fields[5] as usize,
        keep: fields[6] as usize,
        recovered: fields[7] as usize,
        knn: fields[8] as usize,
        pipeline: decode_pipeline(fields[9])?,
        prune_strategy: decode_prune(fields[10])?,
        recover_strategy: decode_recover(fields[11])?,
    };
    config.validate().map_err(|e| Error::Decode(format!("invalid stored config: {e}")))?;

    let total = param_count(&config).total() as usize;
    let expected = 4 + HEADER_FIELDS * 4 + total * 4;
    if bytes.len() != expected {
        return Err(Error::Decode(format!(
            "payload holds {} bytes, config implies {expected}",
            bytes.len()
        )));
    }
    let mut model = HostModel::zeroed(config)?;
    let mut cursor = 4 + HEADER_FIELDS * 4;
    model.visit_params_mut(&mut |p| {
        for v in p.data_mut() {
            *v = f32::from_le_bytes(bytes[cursor..cursor + 4].try_into().expect("4-byte slice"));
            cursor += 4;
        }
    });
    Ok(model)
}
