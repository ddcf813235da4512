use ndarray::{s, Array1, Array2, ArrayView1};
use rand::Rng;

use super::{HeadSelection, LayerParams, Parameters};
use crate::rng::StreamRng;
use crate::textproc::Encoding;
use crate::{Error, Result};

pub(crate) const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    /// `attentions[layer][head]` has one row per valid query position and
    /// `max_len` columns; padding columns are exactly zero.
    pub attentions: Vec<Vec<Array2<f64>>>,
    /// The supervised `[CLS]` attention row, length `max_len`.
    pub cls_attention: Vec<f64>,
    /// Final-layer hidden states of the valid positions.
    pub hidden: Array2<f64>,
    pub(crate) tape: Option<Tape>,
}

impl ForwardOutput {
    pub fn is_recorded(&self) -> bool {
        self.tape.is_some()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LnCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerTape {
    pub ln1: LnCache,
    pub u: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Per head, `n x n` over valid positions.
    pub attn: Vec<Array2<f64>>,
    pub ctx: Array2<f64>,
    pub attn_drop: Option<Array2<f64>>,
    pub ln2: LnCache,
    pub u2: Array2<f64>,
    pub z: Array2<f64>,
    pub act: Array2<f64>,
    pub ffn_drop: Option<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub(crate) struct Tape {
    pub ids: Vec<usize>,
    pub emb_drop: Option<Array2<f64>>,
    pub layers: Vec<LayerTape>,
    pub lnf: LnCache,
    pub h_cls: Array1<f64>,
}

pub(crate) fn layer_norm(x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *is = 1.0 / (var + LN_EPS).sqrt();
        let k = *is;
        row.mapv_inplace(|v| v * k);
    }
    let y = &xhat * g + b;
    (y, LnCache { xhat, inv_std })
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub(crate) fn softmax(v: ArrayView1<f64>) -> Array1<f64> {
    let max = v.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = v.mapv(|x| (x - max).exp());
    let z = e.sum();
    e / z
}

fn dropout_mask(rng: Option<&mut StreamRng>, p: f64, shape: (usize, usize)) -> Option<Array2<f64>> {
    let rng = rng?;
    if p == 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some(Array2::from_shape_fn(shape, |_| if rng.gen::<f64>() < p { 0.0 } else { keep }))
}

fn add_bias(mut x: Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    x += b;
    x
}

fn attention_block(
    lp: &LayerParams,
    x: &Array2<f64>,
    n_heads: usize,
) -> (LnCache, Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>, Vec<Array2<f64>>, Array2<f64>) {
    let (u, ln1) = layer_norm(x, &lp.ln1_g, &lp.ln1_b);
    let q = add_bias(u.dot(&lp.wq), &lp.bq);
    let k = add_bias(u.dot(&lp.wk), &lp.bk);
    let v = add_bias(u.dot(&lp.wv), &lp.bv);
    let n = x.nrows();
    let dh = x.ncols() / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut ctx = Array2::zeros(x.raw_dim());
    let mut attn = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        let mut a = Array2::zeros((n, n));
        for (i, row) in scores.rows().into_iter().enumerate() {
            a.row_mut(i).assign(&softmax(row));
        }
        ctx.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
        attn.push(a);
    }
    (ln1, u, q, k, v, attn, ctx)
}

fn run(params: &Parameters, enc: &Encoding, mut rng: Option<&mut StreamRng>, record: bool) -> Result<ForwardOutput> {
    let cfg = &params.config;
    let t = &params.tensors;
    if enc.max_len() != cfg.max_len {
        return Err(Error::EncodingLength {
            expected: cfg.max_len,
            got: enc.max_len(),
        });
    }
    let n = enc.valid_len();
    let d = cfg.d_model;
    let ids: Vec<usize> = enc.ids[..n].iter().map(|&i| i as usize).collect();
    if let Some(&bad) = ids.iter().find(|&&i| i >= cfg.vocab_size) {
        return Err(Error::InvalidConfig(format!(
            "token id {bad} outside vocabulary of {}",
            cfg.vocab_size
        )));
    }

    let mut x = Array2::zeros((n, d));
    for (i, &id) in ids.iter().enumerate() {
        let mut row = x.row_mut(i);
        row.assign(&t.tok_emb.row(id));
        row += &t.pos_emb.row(i);
    }
    let emb_drop = dropout_mask(rng.as_deref_mut(), cfg.dropout, (n, d));
    if let Some(m) = &emb_drop {
        x *= m;
    }

    let mut layer_tapes = Vec::with_capacity(cfg.n_layers);
    let mut attentions = Vec::with_capacity(cfg.n_layers);
    for lp in &t.layers {
        let (ln1, u, q, k, v, attn, ctx) = attention_block(lp, &x, cfg.n_heads);
        let mut o = add_bias(ctx.dot(&lp.wo), &lp.bo);
        let attn_drop = dropout_mask(rng.as_deref_mut(), cfg.dropout, (n, d));
        if let Some(m) = &attn_drop {
            o *= m;
        }
        x += &o;

        let (u2, ln2) = layer_norm(&x, &lp.ln2_g, &lp.ln2_b);
        let z = add_bias(u2.dot(&lp.w1), &lp.b1);
        let act = z.mapv(gelu);
        let mut f = add_bias(act.dot(&lp.w2), &lp.b2);
        let ffn_drop = dropout_mask(rng.as_deref_mut(), cfg.dropout, (n, d));
        if let Some(m) = &ffn_drop {
            f *= m;
        }
        x += &f;

        attentions.push(
            attn.iter()
                .map(|a| {
                    let mut full = Array2::zeros((n, cfg.max_len));
                    full.slice_mut(s![.., ..n]).assign(a);
                    full
                })
                .collect::<Vec<_>>(),
        );
        if record {
            layer_tapes.push(LayerTape {
                ln1,
                u,
                q,
                k,
                v,
                attn,
                ctx,
                attn_drop,
                ln2,
                u2,
                z,
                act,
                ffn_drop,
            });
        }
    }

    let (hidden, lnf) = layer_norm(&x, &t.lnf_g, &t.lnf_b);
    let h_cls = hidden.row(0).to_owned();
    let logits = t.cls_w.dot(&h_cls) + &t.cls_b;
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    let probabilities = softmax(logits.view());

    let sup = &attentions[cfg.supervision_layer];
    let cls_attention: Vec<f64> = match cfg.supervision_head {
        HeadSelection::Head(h) => sup[h].row(0).to_vec(),
        HeadSelection::Mean => {
            let mut acc = vec![0.0; cfg.max_len];
            for a in sup {
                for (s, v) in acc.iter_mut().zip(a.row(0)) {
                    *s += v;
                }
            }
            let k = cfg.n_heads as f64;
            acc.iter_mut().for_each(|v| *v /= k);
            acc
        }
    };
    if cls_attention.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("attention".into()));
    }

    let tape = record.then(|| Tape {
        ids,
        emb_drop,
        layers: layer_tapes,
        lnf,
        h_cls,
    });
    Ok(ForwardOutput {
        logits: logits.to_vec(),
        probabilities: probabilities.to_vec(),
        attentions,
        cls_attention,
        hidden,
        tape,
    })
}

/// Forward pass without gradient recording. Dropout is active only when a
/// dropout stream is supplied.
pub fn forward(params: &Parameters, enc: &Encoding, dropout: Option<&mut StreamRng>) -> Result<ForwardOutput> {
    run(params, enc, dropout, false)
}

/// Forward pass that records what [`super::backward`] needs.
pub fn forward_recorded(
    params: &Parameters,
    enc: &Encoding,
    dropout: Option<&mut StreamRng>,
) -> Result<ForwardOutput> {
    run(params, enc, dropout, true)
}

/// Argmax of the class probabilities; ties go to the lowest class index.
pub fn argmax(probabilities: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probabilities.iter().enumerate() {
        if p > probabilities[best] {
            best = i;
        }
    }
    best
}

pub fn predict(params: &Parameters, enc: &Encoding) -> Result<(usize, Vec<f64>)> {
    let out = forward(params, enc, None)?;
    Ok((argmax(&out.probabilities), out.probabilities))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelConfig};
    use crate::rng::{self, Stream};
    use crate::textproc::{CLS, PAD, SEP};
    use proptest::prelude::*;

    fn tiny(head: HeadSelection) -> Parameters {
        let mut c = ModelConfig::desk(30, 3);
        c.d_model = 16;
        c.n_heads = 2;
        c.d_ff = 24;
        c.max_len = 10;
        c.supervision_head = head;
        init_model(&c).unwrap()
    }

    fn enc_from(ids: &[u32], max_len: usize) -> Encoding {
        let n = ids.len() + 2;
        let mut e = Encoding {
            ids: vec![CLS],
            padding_mask: vec![1; n],
            content_mask: vec![0],
            offsets: vec![None; max_len],
            word_index: vec![None; max_len],
        };
        e.ids.extend_from_slice(ids);
        e.ids.push(SEP);
        e.content_mask.extend(ids.iter().map(|_| 1));
        e.content_mask.push(0);
        e.ids.resize(max_len, PAD);
        e.padding_mask.resize(max_len, 0);
        e.content_mask.resize(max_len, 0);
        e
    }

    #[test]
    fn argmax_ties_and_order() {
        assert_eq!(argmax(&[0.2, 0.5, 0.3]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn specials_only_input_puts_all_mass_on_cls_and_sep() {
        let p = tiny(HeadSelection::Head(0));
        let out = forward(&p, &enc_from(&[], 10), None).unwrap();
        let a = &out.cls_attention;
        assert!((a[0] + a[1] - 1.0).abs() < 1e-12);
        assert!(a[2..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mean_head_is_average_of_head_rows() {
        let p = tiny(HeadSelection::Mean);
        let out = forward(&p, &enc_from(&[5, 6, 7, 8], 10), None).unwrap();
        let l = p.config.supervision_layer;
        for j in 0..10 {
            let mean = (out.attentions[l][0][[0, j]] + out.attentions[l][1][[0, j]]) / 2.0;
            assert!((out.cls_attention[j] - mean).abs() <= 1e-12);
        }
    }

    #[test]
    fn dropout_only_in_train_mode() {
        let p = tiny(HeadSelection::Head(0));
        let e = enc_from(&[5, 6, 7], 10);
        let a = forward(&p, &e, None).unwrap();
        let b = forward(&p, &e, None).unwrap();
        assert_eq!(a.logits, b.logits);
        let mut r = rng::stream(1, Stream::Dropout);
        let c = forward(&p, &e, Some(&mut r)).unwrap();
        assert_ne!(a.logits, c.logits);
    }

    #[test]
    fn wrong_length_rejected() {
        let p = tiny(HeadSelection::Head(0));
        assert!(matches!(
            forward(&p, &enc_from(&[5], 9), None),
            Err(Error::EncodingLength { .. })
        ));
    }

    #[test]
    fn padding_tail_does_not_change_logits() {
        let p = tiny(HeadSelection::Head(0));
        let e = enc_from(&[5, 6], 10);
        let mut shuffled = e.clone();
        // PAD tail positions permuted among themselves: same ids, same logits
        shuffled.ids[4..].reverse();
        let a = forward(&p, &e, None).unwrap();
        let b = forward(&p, &shuffled, None).unwrap();
        assert_eq!(a.logits, b.logits);
    }

    proptest! {
        #[test]
        fn probabilities_and_attention_rows_normalized(ids in prop::collection::vec(4u32..30, 0..8)) {
            let p = tiny(HeadSelection::Head(1));
            let e = enc_from(&ids, 10);
            let out = forward(&p, &e, None).unwrap();
            prop_assert!((out.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            let n = e.valid_len();
            for layer in &out.attentions {
                for a in layer {
                    for row in a.rows() {
                        prop_assert!((row.slice(s![..n]).sum() - 1.0).abs() < 1e-6);
                        prop_assert!(row.slice(s![n..]).iter().all(|&v| v == 0.0));
                    }
                }
            }
        }

        #[test]
        fn predicted_label_is_argmax(ids in prop::collection::vec(4u32..30, 1..8)) {
            let p = tiny(HeadSelection::Head(0));
            let (label, probs) = predict(&p, &enc_from(&ids, 10)).unwrap();
            prop_assert!(probs.iter().all(|&q| q <= probs[label]));
        }
    }
}
