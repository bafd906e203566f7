use crate::numerics::{scaled_dot_product_attention, AttentionConfig, BoundParams, Graph, Var, LAYER_NORM_EPS};

use super::Result;

/// `x·W + b` with parameters `{prefix}.w` (`[in, out]`) and `{prefix}.b`.
pub(crate) fn linear(g: &mut Graph, p: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
    let w = p.get(&format!("{prefix}.w"))?;
    let b = p.get(&format!("{prefix}.b"))?;
    let y = g.matmul(x, w)?;
    Ok(g.add(y, b)?)
}

pub(crate) fn linear_relu(g: &mut Graph, p: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
    let y = linear(g, p, prefix, x)?;
    Ok(g.relu(y))
}

/// Layer norm with learned gain `{prefix}.g` and bias `{prefix}.b`.
pub(crate) fn layer_norm(g: &mut Graph, p: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
    let gain = p.get(&format!("{prefix}.g"))?;
    let bias = p.get(&format!("{prefix}.b"))?;
    let n = g.layer_norm(x, LAYER_NORM_EPS);
    let y = g.mul(n, gain)?;
    Ok(g.add(y, bias)?)
}

/// One pre-norm transformer encoder layer over a `[L, d]` sequence.
/// Returns the new sequence and the per-head attention weights.
pub(crate) fn encoder_layer(
    g: &mut Graph,
    p: &BoundParams,
    prefix: &str,
    x: Var,
    attn: &AttentionConfig,
) -> Result<(Var, Vec<Var>)> {
    let h = layer_norm(g, p, &format!("{prefix}.ln1"), x)?;
    let wq = p.get(&format!("{prefix}.wq"))?;
    let wk = p.get(&format!("{prefix}.wk"))?;
    let wv = p.get(&format!("{prefix}.wv"))?;
    let q = g.matmul(h, wq)?;
    let k = g.matmul(h, wk)?;
    let v = g.matmul(h, wv)?;
    let out = scaled_dot_product_attention(g, q, k, v, attn)?;
    let a = linear(g, p, &format!("{prefix}.wo"), out.output)?;
    let x = g.add(x, a)?;

    let h = layer_norm(g, p, &format!("{prefix}.ln2"), x)?;
    let h = linear_relu(g, p, &format!("{prefix}.ff1"), h)?;
    let h = linear(g, p, &format!("{prefix}.ff2"), h)?;
    Ok((g.add(x, h)?, out.weights))
}

/// A stack of encoder layers named `{prefix}.l0`, `{prefix}.l1`, ...
/// Returns the output and the final layer's attention weights.
pub(crate) fn encoder_stack(
    g: &mut Graph,
    p: &BoundParams,
    prefix: &str,
    layers: usize,
    x: Var,
    attn: &AttentionConfig,
) -> Result<(Var, Vec<Var>)> {
    let mut x = x;
    let mut weights = Vec::new();
    for l in 0..layers {
        let (y, w) = encoder_layer(g, p, &format!("{prefix}.l{l}"), x, attn)?;
        x = y;
        weights = w;
    }
    Ok((x, weights))
}
