use super::EncoderParams;
use crate::graph::{Graph, Var};
use crate::tensor::Matrix;

/// Standard sine/cosine position table, `len × dim`.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Matrix {
    let mut m = Matrix::zeros(len, dim);
    for pos in 0..len {
        for i in 0..dim {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 * rate;
            m.set(pos, i, if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    m
}

/// Post-norm transformer encoder over the rows of `x`.
///
/// Rows flagged `false` in `mask` neither attend nor are attended to; their
/// outputs are still computed and must be ignored by the caller. An encoder
/// with zero layers returns its (position-augmented) input unchanged.
pub fn run_encoder(g: &mut Graph, x: Var, mask: Option<&[bool]>, enc: &EncoderParams, positions: bool) -> Var {
    let (len, dim) = g.shape(x);
    let mut h = x;
    if positions {
        let pe = g.constant(sinusoidal_positions(len, dim));
        h = g.add(h, pe);
    }
    for layer in &enc.layers {
        let dh = dim / layer.heads.len();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut attn = None;
        for head in &layer.heads {
            let (wq, wk, wv, wo) = (g.param(head.query), g.param(head.key), g.param(head.value), g.param(head.output));
            let q = g.matmul(h, wq);
            let k = g.matmul(h, wk);
            let v = g.matmul(h, wv);
            let scores = g.matmul_nt(q, k);
            let scores = g.scale(scores, scale);
            let weights = g.softmax(scores, mask, mask);
            let ctx = g.matmul(weights, v);
            let out = g.matmul(ctx, wo);
            attn = Some(match attn {
                None => out,
                Some(acc) => g.add(acc, out),
            });
        }
        let attn = attn.expect("at least one head");
        let bias = g.param(layer.attn_bias);
        let attn = g.add_row(attn, bias);
        let h1 = g.add(h, attn);
        let h1 = norm(g, h1, layer.norm1_gain, layer.norm1_bias);

        let (w1, b1, w2, b2) = (g.param(layer.ff_in), g.param(layer.ff_in_bias), g.param(layer.ff_out), g.param(layer.ff_out_bias));
        let f = g.matmul(h1, w1);
        let f = g.add_row(f, b1);
        let f = g.gelu(f);
        let f = g.matmul(f, w2);
        let f = g.add_row(f, b2);
        let h2 = g.add(h1, f);
        h = norm(g, h2, layer.norm2_gain, layer.norm2_bias);
    }
    h
}

fn norm(g: &mut Graph, x: Var, gain: crate::graph::ParamId, bias: crate::graph::ParamId) -> Var {
    let (gain, bias) = (g.param(gain), g.param(bias));
    let y = g.layer_norm(x);
    let y = g.mul_row(y, gain);
    g.add_row(y, bias)
}
