use serde::{Deserialize, Serialize};

use super::{Graph, NumericsError, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub num_heads: usize,
    pub d_head: usize,
    pub d_model: usize,
}

impl AttentionConfig {
    pub fn new(d_model: usize, num_heads: usize) -> Result<Self, NumericsError> {
        if num_heads == 0 || d_model == 0 || !d_model.is_multiple_of(num_heads) {
            return Err(NumericsError::HeadsDoNotDivide { d_model, num_heads });
        }
        Ok(Self {
            num_heads,
            d_head: d_model / num_heads,
            d_model,
        })
    }
}

pub struct AttentionOutput {
    pub output: Var,
    /// Row-stochastic `[L, L]` weight matrix of each head.
    pub weights: Vec<Var>,
}

/// Unmasked multi-head attention over already-projected `Q`, `K`, `V`
/// (`[L, d_model]` each). Head `h` owns columns `h·d_head..(h+1)·d_head`.
pub fn scaled_dot_product_attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    cfg: &AttentionConfig,
) -> Result<AttentionOutput, NumericsError> {
    if cfg.num_heads * cfg.d_head != cfg.d_model {
        return Err(NumericsError::HeadsDoNotDivide {
            d_model: cfg.d_model,
            num_heads: cfg.num_heads,
        });
    }
    for x in [q, k, v] {
        let s = g.shape(x);
        if s.len() != 2 || s[1] != cfg.d_model {
            return Err(NumericsError::ShapeMismatch {
                op: "attention",
                lhs: s.to_vec(),
                rhs: vec![s.first().copied().unwrap_or(0), cfg.d_model],
            });
        }
    }
    if g.shape(q)[0] != g.shape(k)[0] || g.shape(k)[0] != g.shape(v)[0] {
        return Err(NumericsError::ShapeMismatch {
            op: "attention",
            lhs: g.shape(q).to_vec(),
            rhs: g.shape(k).to_vec(),
        });
    }
    // Scaling Q is cheaper than scaling the L×L scores.
    let q = g.scale(q, 1.0 / (cfg.d_head as f64).sqrt());
    let mut heads = Vec::with_capacity(cfg.num_heads);
    let mut weights = Vec::with_capacity(cfg.num_heads);
    for h in 0..cfg.num_heads {
        let (qh, kh, vh) = if cfg.num_heads == 1 {
            (q, k, v)
        } else {
            let (a, b) = (h * cfg.d_head, (h + 1) * cfg.d_head);
            (g.slice_cols(q, a, b)?, g.slice_cols(k, a, b)?, g.slice_cols(v, a, b)?)
        };
        let scores = g.matmul_nt(qh, kh)?;
        let attn = g.softmax(scores);
        heads.push(g.matmul(attn, vh)?);
        weights.push(attn);
    }
    let output = if heads.len() == 1 {
        heads[0]
    } else {
        g.concat(&heads, 1)?
    };
    Ok(AttentionOutput { output, weights })
}
