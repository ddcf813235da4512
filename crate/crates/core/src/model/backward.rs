//! Reverse pass over a recorded forward.
//!
//! The upstream gradient arrives on two outputs: the class logits and the
//! supervised `[CLS]` attention row. The latter is injected into the
//! attention probabilities of the supervised layer and then flows back
//! through the row softmax into the query and key projections.

use ndarray::{s, Array1, Array2, Axis};

use super::forward::{gelu_grad, LnCache};
use super::{ForwardOutput, Gradients, HeadSelection, Parameters};
use crate::{Error, Result};

/// Gradient of a scalar loss with respect to the forward outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrad {
    pub d_logits: Vec<f64>,
    /// Length `max_len`; padding entries are ignored.
    pub d_cls_attention: Option<Vec<f64>>,
}

fn ln_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    gamma: &Array1<f64>,
    dgamma: &mut Array1<f64>,
    dbeta: &mut Array1<f64>,
) -> Array2<f64> {
    *dgamma += &(dy * &cache.xhat).sum_axis(Axis(0));
    *dbeta += &dy.sum_axis(Axis(0));
    let d = dy.ncols() as f64;
    let mut dx = dy * gamma;
    for ((mut row, xh), &is) in dx
        .rows_mut()
        .into_iter()
        .zip(cache.xhat.rows())
        .zip(cache.inv_std.iter())
    {
        let mean_d = row.sum() / d;
        let mean_dx = row.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d;
        for (v, &x) in row.iter_mut().zip(xh) {
            *v = is * (*v - mean_d - x * mean_dx);
        }
    }
    dx
}

/// Accumulates `scale * d(loss)/d(params)` into `grads`.
pub fn backward(
    params: &Parameters,
    out: &ForwardOutput,
    seed: &OutputGrad,
    scale: f64,
    grads: &mut Gradients,
) -> Result<()> {
    let tape = out.tape.as_ref().ok_or(Error::MissingTape)?;
    let cfg = &params.config;
    let t = &params.tensors;
    let g = &mut grads.tensors;
    let n = tape.ids.len();
    let d = cfg.d_model;
    let nh = cfg.n_heads;
    let dh = cfg.head_dim();
    let att_scale = 1.0 / (dh as f64).sqrt();

    let d_logits = Array1::from_iter(seed.d_logits.iter().map(|v| v * scale));

    // classifier head
    for c in 0..cfg.num_classes {
        let mut row = g.cls_w.row_mut(c);
        row.scaled_add(d_logits[c], &tape.h_cls);
    }
    g.cls_b += &d_logits;
    let d_hcls = t.cls_w.t().dot(&d_logits);
    let mut dhidden = Array2::zeros((n, d));
    dhidden.row_mut(0).assign(&d_hcls);
    let mut dx = ln_backward(&dhidden, &tape.lnf, &t.lnf_g, &mut g.lnf_g, &mut g.lnf_b);

    let d_cls: Option<Vec<f64>> = seed
        .d_cls_attention
        .as_ref()
        .map(|v| v[..n].iter().map(|x| x * scale).collect());

    for (li, (lt, lp)) in tape.layers.iter().zip(&t.layers).enumerate().rev() {
        let lg = &mut g.layers[li];

        // feed-forward sublayer
        let mut df = dx.clone();
        if let Some(m) = &lt.ffn_drop {
            df *= m;
        }
        lg.w2 += &lt.act.t().dot(&df);
        lg.b2 += &df.sum_axis(Axis(0));
        let mut dz = df.dot(&lp.w2.t());
        dz.zip_mut_with(&lt.z, |a, &z| *a *= gelu_grad(z));
        lg.w1 += &lt.u2.t().dot(&dz);
        lg.b1 += &dz.sum_axis(Axis(0));
        let du2 = dz.dot(&lp.w1.t());
        dx += &ln_backward(&du2, &lt.ln2, &lp.ln2_g, &mut lg.ln2_g, &mut lg.ln2_b);

        // attention sublayer
        let mut d_o = dx.clone();
        if let Some(m) = &lt.attn_drop {
            d_o *= m;
        }
        lg.wo += &lt.ctx.t().dot(&d_o);
        lg.bo += &d_o.sum_axis(Axis(0));
        let dctx = d_o.dot(&lp.wo.t());

        let mut dq = Array2::zeros((n, d));
        let mut dk = Array2::zeros((n, d));
        let mut dv = Array2::zeros((n, d));
        for h in 0..nh {
            let cols = s![.., h * dh..(h + 1) * dh];
            let a = &lt.attn[h];
            let dctx_h = dctx.slice(cols);
            let mut da = dctx_h.dot(&lt.v.slice(cols).t());
            if li == cfg.supervision_layer {
                if let Some(dc) = &d_cls {
                    let w = match cfg.supervision_head {
                        HeadSelection::Head(sh) if sh == h => Some(1.0),
                        HeadSelection::Head(_) => None,
                        HeadSelection::Mean => Some(1.0 / nh as f64),
                    };
                    if let Some(w) = w {
                        for (x, &gv) in da.row_mut(0).iter_mut().zip(dc) {
                            *x += w * gv;
                        }
                    }
                }
            }
            dv.slice_mut(cols).assign(&a.t().dot(&dctx_h));
            // softmax backward, row by row
            let mut ds = da;
            for (mut drow, arow) in ds.rows_mut().into_iter().zip(a.rows()) {
                let dot: f64 = drow.iter().zip(arow).map(|(x, y)| x * y).sum();
                for (x, &p) in drow.iter_mut().zip(arow) {
                    *x = p * (*x - dot);
                }
            }
            ds *= att_scale;
            dq.slice_mut(cols).assign(&ds.dot(&lt.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&lt.q.slice(cols)));
        }
        lg.wq += &lt.u.t().dot(&dq);
        lg.bq += &dq.sum_axis(Axis(0));
        lg.wk += &lt.u.t().dot(&dk);
        lg.bk += &dk.sum_axis(Axis(0));
        lg.wv += &lt.u.t().dot(&dv);
        lg.bv += &dv.sum_axis(Axis(0));
        let du = dq.dot(&lp.wq.t()) + dk.dot(&lp.wk.t()) + dv.dot(&lp.wv.t());
        dx += &ln_backward(&du, &lt.ln1, &lp.ln1_g, &mut lg.ln1_g, &mut lg.ln1_b);
    }

    if let Some(m) = &tape.emb_drop {
        dx *= m;
    }
    for (i, &id) in tape.ids.iter().enumerate() {
        let row = dx.row(i);
        let mut te = g.tok_emb.row_mut(id);
        te += &row;
        let mut pe = g.pos_emb.row_mut(i);
        pe += &row;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward, forward_recorded, init_model, ModelConfig};
    use crate::textproc::{Encoding, CLS, PAD, SEP};

    fn setup() -> (Parameters, Encoding) {
        let mut c = ModelConfig::desk(12, 3);
        c.d_model = 8;
        c.n_heads = 2;
        c.d_ff = 8;
        c.max_len = 6;
        c.n_layers = 1;
        c.supervision_layer = 0;
        let p = init_model(&c).unwrap();
        let e = Encoding {
            ids: vec![CLS, 5, 6, SEP, PAD, PAD],
            padding_mask: vec![1, 1, 1, 1, 0, 0],
            content_mask: vec![0, 1, 1, 0, 0, 0],
            offsets: vec![None; 6],
            word_index: vec![None; 6],
        };
        (p, e)
    }

    #[test]
    fn backward_requires_a_tape() {
        let (p, e) = setup();
        let out = forward(&p, &e, None).unwrap();
        let seed = OutputGrad { d_logits: vec![1.0, 0.0, 0.0], d_cls_attention: None };
        let mut g = Gradients::zeros(&p.config);
        assert!(matches!(backward(&p, &out, &seed, 1.0, &mut g), Err(Error::MissingTape)));
    }

    #[test]
    fn unused_embeddings_get_exactly_zero() {
        let (p, e) = setup();
        let out = forward_recorded(&p, &e, None).unwrap();
        let seed = OutputGrad { d_logits: vec![0.3, -0.1, -0.2], d_cls_attention: None };
        let mut g = Gradients::zeros(&p.config);
        backward(&p, &out, &seed, 1.0, &mut g).unwrap();
        assert!(g.tensors.tok_emb.row(7).iter().all(|&v| v == 0.0));
        assert!(g.tensors.pos_emb.row(5).iter().all(|&v| v == 0.0));
        assert!(g.tensors.tok_emb.row(5).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn repeated_backward_is_bit_identical() {
        let (p, e) = setup();
        let seed = OutputGrad {
            d_logits: vec![0.3, -0.1, -0.2],
            d_cls_attention: Some(vec![0.0, 0.5, -0.5, 0.1, 0.0, 0.0]),
        };
        let run = || {
            let out = forward_recorded(&p, &e, None).unwrap();
            let mut g = Gradients::zeros(&p.config);
            backward(&p, &out, &seed, 1.0, &mut g).unwrap();
            g
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn attention_seed_reaches_query_and_key_projections() {
        let (p, e) = setup();
        let out = forward_recorded(&p, &e, None).unwrap();
        let seed = OutputGrad {
            d_logits: vec![0.0; 3],
            d_cls_attention: Some(vec![0.0, 1.0, -1.0, 0.0, 0.0, 0.0]),
        };
        let mut g = Gradients::zeros(&p.config);
        backward(&p, &out, &seed, 1.0, &mut g).unwrap();
        let l = &g.tensors.layers[0];
        assert!(l.wq.iter().any(|&v| v != 0.0));
        assert!(l.wk.iter().any(|&v| v != 0.0));
        // nothing downstream of the attention row: classifier untouched
        assert!(g.tensors.cls_w.iter().all(|&v| v == 0.0));
    }
}
