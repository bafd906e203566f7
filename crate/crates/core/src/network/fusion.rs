use crate::numerics::{AttentionConfig, BoundParams, Graph, Var};

use super::layers::{encoder_stack, linear};
use super::{FusionConfig, NetworkError, Result};

pub struct FusionOutput {
    pub output: Var,
    /// Per-head attention of the last encoder layer; empty with no layers.
    pub attention: Vec<Var>,
}

/// First fusion stage. Color token `i` sits at sequence position `i` and
/// geometry token `i` at `N + i`; after the encoder, row `i` of the output
/// is the two encoded tokens side by side (`[N, 2·d_f1]`).
pub fn modality_fusion(
    g: &mut Graph,
    p: &BoundParams,
    cfg: &FusionConfig,
    color: Var,
    geometry: Var,
) -> Result<FusionOutput> {
    let n = g.shape(color)[0];
    let ng = g.shape(geometry)[0];
    if n != ng {
        return Err(NetworkError::RowMismatch {
            what: "modality fusion geometry tokens",
            expected: n,
            got: ng,
        });
    }
    let mut seq = g.concat(&[color, geometry], 0)?;
    if cfg.d_f1 != cfg.d_emb {
        seq = linear(g, p, "modality.in", seq)?;
    }
    let attn = AttentionConfig::new(cfg.d_f1, cfg.modality_heads)?;
    let (encoded, attention) = encoder_stack(g, p, "modality", cfg.modality_layers, seq, &attn)?;
    let c = g.slice_rows(encoded, 0, n)?;
    let geo = g.slice_rows(encoded, n, 2 * n)?;
    Ok(FusionOutput {
        output: g.concat(&[c, geo], 1)?,
        attention,
    })
}

/// Second fusion stage: per-point concatenation of both projected
/// modalities and the first-stage output, attention across points.
pub fn pointwise_fusion(
    g: &mut Graph,
    p: &BoundParams,
    cfg: &FusionConfig,
    color: Var,
    geometry: Var,
    f1: Var,
) -> Result<FusionOutput> {
    let n = g.shape(color)[0];
    for (what, v) in [("pointwise geometry", geometry), ("pointwise f1", f1)] {
        if g.shape(v)[0] != n {
            return Err(NetworkError::RowMismatch {
                what,
                expected: n,
                got: g.shape(v)[0],
            });
        }
    }
    let width = g.shape(color)[1] + g.shape(geometry)[1] + g.shape(f1)[1];
    let expected = 2 * cfg.d_emb + 2 * cfg.d_f1;
    if width != expected {
        return Err(NetworkError::Config(format!(
            "pointwise fusion input width {width}, expected {expected}"
        )));
    }
    let x = g.concat(&[color, geometry, f1], 1)?;
    let x = linear(g, p, "pointwise.in", x)?;
    let attn = AttentionConfig::new(cfg.d_f2, cfg.pointwise_heads)?;
    let (output, attention) = encoder_stack(g, p, "pointwise", cfg.pointwise_layers, x, &attn)?;
    Ok(FusionOutput { output, attention })
}
