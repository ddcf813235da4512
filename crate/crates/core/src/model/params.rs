use ndarray::{Array1, Array2};
use rand::Rng;

use super::ModelConfig;
use crate::rng::{self, Stream};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    /// Projections are stored input-major: `y = x W + b`.
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// All trainable tensors, in a fixed declared order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensors {
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub lnf_g: Array1<f64>,
    pub lnf_b: Array1<f64>,
    /// `num_classes x d_model`.
    pub cls_w: Array2<f64>,
    pub cls_b: Array1<f64>,
}

macro_rules! layer_fields {
    ($m:ident) => {
        $m!(ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2)
    };
}

impl Tensors {
    pub fn zeros(c: &ModelConfig) -> Self {
        let d = c.d_model;
        let layer = || LayerParams {
            ln1_g: Array1::zeros(d),
            ln1_b: Array1::zeros(d),
            wq: Array2::zeros((d, d)),
            bq: Array1::zeros(d),
            wk: Array2::zeros((d, d)),
            bk: Array1::zeros(d),
            wv: Array2::zeros((d, d)),
            bv: Array1::zeros(d),
            wo: Array2::zeros((d, d)),
            bo: Array1::zeros(d),
            ln2_g: Array1::zeros(d),
            ln2_b: Array1::zeros(d),
            w1: Array2::zeros((d, c.d_ff)),
            b1: Array1::zeros(c.d_ff),
            w2: Array2::zeros((c.d_ff, d)),
            b2: Array1::zeros(d),
        };
        Self {
            tok_emb: Array2::zeros((c.vocab_size, d)),
            pos_emb: Array2::zeros((c.max_len, d)),
            layers: (0..c.n_layers).map(|_| layer()).collect(),
            lnf_g: Array1::zeros(d),
            lnf_b: Array1::zeros(d),
            cls_w: Array2::zeros((c.num_classes, d)),
            cls_b: Array1::zeros(c.num_classes),
        }
    }

    pub fn names(n_layers: usize) -> Vec<String> {
        let mut out = vec!["tok_emb".to_string(), "pos_emb".to_string()];
        macro_rules! push_names {
            ($($f:ident),*) => {
                for l in 0..n_layers {
                    $(out.push(format!("layers.{l}.{}", stringify!($f)));)*
                }
            };
        }
        layer_fields!(push_names);
        out.extend(["lnf_g", "lnf_b", "cls_w", "cls_b"].map(String::from));
        out
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![slice(&self.tok_emb), slice(&self.pos_emb)];
        for l in &self.layers {
            macro_rules! push {
                ($($f:ident),*) => { $(out.push(l.$f.as_slice().expect("standard layout"));)* };
            }
            layer_fields!(push);
        }
        out.push(slice(&self.lnf_g));
        out.push(slice(&self.lnf_b));
        out.push(slice(&self.cls_w));
        out.push(slice(&self.cls_b));
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.tok_emb.as_slice_mut().expect("standard layout"),
            self.pos_emb.as_slice_mut().expect("standard layout"),
        ];
        for l in &mut self.layers {
            macro_rules! push {
                ($($f:ident),*) => { $(out.push(l.$f.as_slice_mut().expect("standard layout"));)* };
            }
            layer_fields!(push);
        }
        out.push(self.lnf_g.as_slice_mut().expect("standard layout"));
        out.push(self.lnf_b.as_slice_mut().expect("standard layout"));
        out.push(self.cls_w.as_slice_mut().expect("standard layout"));
        out.push(self.cls_b.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn fill_zero(&mut self) {
        for s in self.slices_mut() {
            s.fill(0.0);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Global L2 norm over every tensor.
    pub fn l2_norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, k: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= k);
        }
    }

    /// `self += other`, tensor by tensor in declared order.
    pub fn add_assign(&mut self, other: &Tensors) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

fn slice<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub config: ModelConfig,
    pub tensors: Tensors,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Tensors,
}

impl Gradients {
    pub fn zeros(config: &ModelConfig) -> Self {
        Self {
            tensors: Tensors::zeros(config),
        }
    }
}

/// Weights uniform in `[-1/sqrt(d_model), 1/sqrt(d_model)]`, biases zero,
/// layer-norm gains one. Draws come from the init stream of `init_seed` in
/// declared tensor order.
pub fn init_model(config: &ModelConfig) -> Result<Parameters> {
    config.validate()?;
    let mut t = Tensors::zeros(config);
    let scale = 1.0 / (config.d_model as f64).sqrt();
    let mut rng = rng::stream(config.init_seed, Stream::Init);
    let mut fill = |a: &mut [f64]| {
        for v in a {
            *v = rng.gen_range(-scale..=scale);
        }
    };
    fill(t.tok_emb.as_slice_mut().unwrap());
    fill(t.pos_emb.as_slice_mut().unwrap());
    for l in &mut t.layers {
        l.ln1_g.fill(1.0);
        l.ln2_g.fill(1.0);
        for w in [&mut l.wq, &mut l.wk, &mut l.wv, &mut l.wo, &mut l.w1, &mut l.w2] {
            fill(w.as_slice_mut().unwrap());
        }
    }
    t.lnf_g.fill(1.0);
    fill(t.cls_w.as_slice_mut().unwrap());
    Ok(Parameters {
        config: config.clone(),
        tensors: t,
    })
}
