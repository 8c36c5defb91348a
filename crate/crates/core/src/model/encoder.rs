//! Encoder weights and the per-sequence forward/backward passes.
//!
//! Pre-norm blocks: RMS-normalised input, multi-head self-attention with a
//! key padding mask, residual add, RMS-normalised input, GELU feed-forward,
//! residual add. A final RMS norm follows the last block. Positions are
//! learned absolute embeddings.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::EncoderConfig;

const NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub attn_norm: Array1<f64>,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub ffn_norm: Array1<f64>,
    pub w_in: Array2<f64>,
    pub w_out: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub token_embedding: Array2<f64>,
    pub position_embedding: Array2<f64>,
    pub layers: Vec<LayerWeights>,
    pub final_norm: Array1<f64>,
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("valid std");
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

impl EncoderWeights {
    /// Random initialisation: unit-normal token embeddings, small position
    /// embeddings, `1/sqrt(fan_in)` projections, unit norm gains.
    pub fn random(config: &EncoderConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, f) = (config.hidden_size, config.ffn_size);
        let token_embedding = normal_matrix(&mut rng, config.vocab_size, h, 1.0);
        let position_embedding = normal_matrix(&mut rng, config.max_positions, h, 0.1);
        let proj = 1.0 / (h as f64).sqrt();
        let out_scale = 1.0 / (2.0 * config.num_layers as f64).sqrt();
        let layers = (0..config.num_layers)
            .map(|_| LayerWeights {
                attn_norm: Array1::ones(h),
                wq: normal_matrix(&mut rng, h, h, proj),
                wk: normal_matrix(&mut rng, h, h, proj),
                wv: normal_matrix(&mut rng, h, h, proj),
                wo: normal_matrix(&mut rng, h, h, proj * out_scale),
                ffn_norm: Array1::ones(h),
                w_in: normal_matrix(&mut rng, h, f, proj),
                w_out: normal_matrix(&mut rng, f, h, out_scale / (f as f64).sqrt()),
            })
            .collect();
        EncoderWeights {
            token_embedding,
            position_embedding,
            layers,
            final_norm: Array1::ones(h),
        }
    }

    pub fn zeros_like(&self) -> Self {
        EncoderWeights {
            token_embedding: Array2::zeros(self.token_embedding.raw_dim()),
            position_embedding: Array2::zeros(self.position_embedding.raw_dim()),
            layers: self
                .layers
                .iter()
                .map(|l| LayerWeights {
                    attn_norm: Array1::zeros(l.attn_norm.raw_dim()),
                    wq: Array2::zeros(l.wq.raw_dim()),
                    wk: Array2::zeros(l.wk.raw_dim()),
                    wv: Array2::zeros(l.wv.raw_dim()),
                    wo: Array2::zeros(l.wo.raw_dim()),
                    ffn_norm: Array1::zeros(l.ffn_norm.raw_dim()),
                    w_in: Array2::zeros(l.w_in.raw_dim()),
                    w_out: Array2::zeros(l.w_out.raw_dim()),
                })
                .collect(),
            final_norm: Array1::zeros(self.final_norm.raw_dim()),
        }
    }

    /// Named parameter tensors with their shapes, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<(String, Vec<usize>, &[f64])> = vec![
            (
                "encoder.token_embedding".into(),
                self.token_embedding.shape().to_vec(),
                self.token_embedding.as_slice().unwrap(),
            ),
            (
                "encoder.position_embedding".into(),
                self.position_embedding.shape().to_vec(),
                self.position_embedding.as_slice().unwrap(),
            ),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let p = |n: &str| format!("encoder.layers.{i}.{n}");
            out.push((p("attn_norm"), l.attn_norm.shape().to_vec(), l.attn_norm.as_slice().unwrap()));
            for (n, m) in [("wq", &l.wq), ("wk", &l.wk), ("wv", &l.wv), ("wo", &l.wo)] {
                out.push((p(n), m.shape().to_vec(), m.as_slice().unwrap()));
            }
            out.push((p("ffn_norm"), l.ffn_norm.shape().to_vec(), l.ffn_norm.as_slice().unwrap()));
            out.push((p("w_in"), l.w_in.shape().to_vec(), l.w_in.as_slice().unwrap()));
            out.push((p("w_out"), l.w_out.shape().to_vec(), l.w_out.as_slice().unwrap()));
        }
        out.push((
            "encoder.final_norm".into(),
            self.final_norm.shape().to_vec(),
            self.final_norm.as_slice().unwrap(),
        ));
        out
    }

    /// Mutable views in the same order as [`Self::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.token_embedding.as_slice_mut().unwrap(),
            self.position_embedding.as_slice_mut().unwrap(),
        ];
        for l in self.layers.iter_mut() {
            out.push(l.attn_norm.as_slice_mut().unwrap());
            out.push(l.wq.as_slice_mut().unwrap());
            out.push(l.wk.as_slice_mut().unwrap());
            out.push(l.wv.as_slice_mut().unwrap());
            out.push(l.wo.as_slice_mut().unwrap());
            out.push(l.ffn_norm.as_slice_mut().unwrap());
            out.push(l.w_in.as_slice_mut().unwrap());
            out.push(l.w_out.as_slice_mut().unwrap());
        }
        out.push(self.final_norm.as_slice_mut().unwrap());
        out
    }
}

/// Inverted-dropout masks for one sequence (entries 0 or 1/(1-p)).
pub(crate) struct DropoutMasks {
    embed: Array2<f64>,
    attn: Vec<Array2<f64>>,
    ffn: Vec<Array2<f64>>,
}

impl DropoutMasks {
    pub(crate) fn sample(rate: f64, len: usize, hidden: usize, layers: usize, seed: u64) -> Option<Self> {
        if rate <= 0.0 {
            return None;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 / (1.0 - rate);
        let unit = Uniform::new(0.0, 1.0).expect("valid range");
        let mask = |rng: &mut ChaCha8Rng| {
            Array2::from_shape_fn((len, hidden), |_| if unit.sample(rng) < rate { 0.0 } else { keep })
        };
        let embed = mask(&mut rng);
        let mut attn = Vec::with_capacity(layers);
        let mut ffn = Vec::with_capacity(layers);
        for _ in 0..layers {
            attn.push(mask(&mut rng));
            ffn.push(mask(&mut rng));
        }
        Some(DropoutMasks { embed, attn, ffn })
    }
}

struct LayerCache {
    x_in: Array2<f64>,
    h1: Array2<f64>,
    r1: Array1<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    attn: Array2<f64>,
    x_mid: Array2<f64>,
    h2: Array2<f64>,
    r2: Array1<f64>,
    u: Array2<f64>,
    g: Array2<f64>,
}

/// Activations kept from a forward pass for the backward pass.
pub(crate) struct ForwardCache {
    ids: Vec<u32>,
    layers: Vec<LayerCache>,
    x_last: Array2<f64>,
    r_final: Array1<f64>,
    dropout: Option<DropoutMasks>,
}

fn rms_norm(x: &Array2<f64>, gain: &Array1<f64>) -> (Array2<f64>, Array1<f64>) {
    let h = x.ncols() as f64;
    let r = x.map_axis(Axis(1), |row| (row.dot(&row) / h + NORM_EPS).sqrt());
    let mut y = x.clone();
    for (mut row, &ri) in y.rows_mut().into_iter().zip(r.iter()) {
        row /= ri;
        row *= gain;
    }
    (y, r)
}

/// Returns dx; accumulates into `d_gain`.
fn rms_norm_backward(
    x: &Array2<f64>,
    r: &Array1<f64>,
    gain: &Array1<f64>,
    dy: &Array2<f64>,
    d_gain: &mut Array1<f64>,
) -> Array2<f64> {
    let h = x.ncols() as f64;
    let mut dx = Array2::zeros(x.raw_dim());
    for t in 0..x.nrows() {
        let xr = x.row(t);
        let n = &xr / r[t];
        let dyr = dy.row(t);
        *d_gain += &(&dyr * &n);
        let dn = &dyr * gain;
        let proj = dn.dot(&n) / h;
        dx.row_mut(t).assign(&((&dn - &(&n * proj)) / r[t]));
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_A * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + GELU_A * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * u * u)
}

/// Row softmax over keys with `mask[j] == 0` excluded. Rows with no valid key
/// are all-zero.
fn masked_softmax(scores: &mut Array2<f64>, mask: &[u8]) {
    for mut row in scores.rows_mut() {
        let mut max = f64::NEG_INFINITY;
        for (j, &v) in row.iter().enumerate() {
            if mask[j] != 0 && v > max {
                max = v;
            }
        }
        if max == f64::NEG_INFINITY {
            row.fill(0.0);
            continue;
        }
        let mut sum = 0.0;
        for (j, v) in row.iter_mut().enumerate() {
            *v = if mask[j] != 0 { (*v - max).exp() } else { 0.0 };
            sum += *v;
        }
        row /= sum;
    }
}

pub(crate) struct Encoder<'a> {
    pub weights: &'a EncoderWeights,
    pub num_heads: usize,
}

impl Encoder<'_> {
    /// Hidden states `(len, hidden)` for one sequence. When `keep_cache` is
    /// set the activations needed by [`Self::backward`] are returned too.
    pub fn forward(
        &self,
        ids: &[u32],
        mask: &[u8],
        dropout: Option<DropoutMasks>,
        keep_cache: bool,
    ) -> (Array2<f64>, Option<ForwardCache>) {
        let w = self.weights;
        let len = ids.len();
        let hidden = w.token_embedding.ncols();
        let heads = self.num_heads;
        let d = hidden / heads;
        let scale = 1.0 / (d as f64).sqrt();

        let mut x = Array2::zeros((len, hidden));
        for (t, &id) in ids.iter().enumerate() {
            let mut row = x.row_mut(t);
            row.assign(&w.token_embedding.row(id as usize));
            row += &w.position_embedding.row(t);
        }
        if let Some(dm) = &dropout {
            x *= &dm.embed;
        }

        let mut caches = Vec::with_capacity(if keep_cache { w.layers.len() } else { 0 });
        for (li, layer) in w.layers.iter().enumerate() {
            let (h1, r1) = rms_norm(&x, &layer.attn_norm);
            let q = h1.dot(&layer.wq);
            let k = h1.dot(&layer.wk);
            let v = h1.dot(&layer.wv);
            let mut attn = Array2::zeros((len, hidden));
            let mut probs = Vec::with_capacity(heads);
            for hd in 0..heads {
                let cols = s![.., hd * d..(hd + 1) * d];
                let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
                masked_softmax(&mut scores, mask);
                attn.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
                probs.push(scores);
            }
            let mut o = attn.dot(&layer.wo);
            if let Some(dm) = &dropout {
                o *= &dm.attn[li];
            }
            let x_mid = &x + &o;

            let (h2, r2) = rms_norm(&x_mid, &layer.ffn_norm);
            let u = h2.dot(&layer.w_in);
            let g = u.mapv(gelu);
            let mut f = g.dot(&layer.w_out);
            if let Some(dm) = &dropout {
                f *= &dm.ffn[li];
            }
            let x_out = &x_mid + &f;
            if keep_cache {
                caches.push(LayerCache {
                    x_in: x,
                    h1,
                    r1,
                    q,
                    k,
                    v,
                    probs,
                    attn,
                    x_mid,
                    h2,
                    r2,
                    u,
                    g,
                });
            }
            x = x_out;
        }
        let (out, r_final) = rms_norm(&x, &w.final_norm);
        let cache = keep_cache.then(|| ForwardCache {
            ids: ids.to_vec(),
            layers: caches,
            x_last: x,
            r_final,
            dropout,
        });
        (out, cache)
    }

    /// Accumulates parameter gradients into `grad` given `d_out`, the
    /// gradient of the loss with respect to the forward output.
    pub fn backward(&self, cache: &ForwardCache, d_out: ArrayView2<'_, f64>, grad: &mut EncoderWeights) {
        let w = self.weights;
        let hidden = w.token_embedding.ncols();
        let heads = self.num_heads;
        let d = hidden / heads;
        let scale = 1.0 / (d as f64).sqrt();

        let mut dx = rms_norm_backward(
            &cache.x_last,
            &cache.r_final,
            &w.final_norm,
            &d_out.to_owned(),
            &mut grad.final_norm,
        );

        for (li, (layer, lc)) in w.layers.iter().zip(&cache.layers).enumerate().rev() {
            let gl = &mut grad.layers[li];

            // Feed-forward block.
            let mut d_f = dx.clone();
            if let Some(dm) = &cache.dropout {
                d_f *= &dm.ffn[li];
            }
            gl.w_out += &lc.g.t().dot(&d_f);
            let d_g = d_f.dot(&layer.w_out.t());
            let d_u = &d_g * &lc.u.mapv(gelu_grad);
            gl.w_in += &lc.h2.t().dot(&d_u);
            let d_h2 = d_u.dot(&layer.w_in.t());
            let mut d_mid = dx;
            d_mid += &rms_norm_backward(&lc.x_mid, &lc.r2, &layer.ffn_norm, &d_h2, &mut gl.ffn_norm);

            // Attention block.
            let mut d_o = d_mid.clone();
            if let Some(dm) = &cache.dropout {
                d_o *= &dm.attn[li];
            }
            gl.wo += &lc.attn.t().dot(&d_o);
            let d_attn = d_o.dot(&layer.wo.t());
            let len = lc.q.nrows();
            let mut dq = Array2::zeros((len, hidden));
            let mut dk = Array2::zeros((len, hidden));
            let mut dv = Array2::zeros((len, hidden));
            for hd in 0..heads {
                let cols = s![.., hd * d..(hd + 1) * d];
                let p = &lc.probs[hd];
                let da = d_attn.slice(cols);
                let dp = da.dot(&lc.v.slice(cols).t());
                dv.slice_mut(cols).assign(&p.t().dot(&da));
                let row_dot = (&dp * p).sum_axis(Axis(1));
                let mut ds = dp;
                for (mut row, &rd) in ds.rows_mut().into_iter().zip(row_dot.iter()) {
                    row -= rd;
                }
                ds *= p;
                ds *= scale;
                dq.slice_mut(cols).assign(&ds.dot(&lc.k.slice(cols)));
                dk.slice_mut(cols).assign(&ds.t().dot(&lc.q.slice(cols)));
            }
            gl.wq += &lc.h1.t().dot(&dq);
            gl.wk += &lc.h1.t().dot(&dk);
            gl.wv += &lc.h1.t().dot(&dv);
            let d_h1 = dq.dot(&layer.wq.t()) + dk.dot(&layer.wk.t()) + dv.dot(&layer.wv.t());
            let mut d_in = d_mid;
            d_in += &rms_norm_backward(&lc.x_in, &lc.r1, &layer.attn_norm, &d_h1, &mut gl.attn_norm);
            dx = d_in;
        }

        if let Some(dm) = &cache.dropout {
            dx *= &dm.embed;
        }
        for (t, &id) in cache.ids.iter().enumerate() {
            let row = dx.row(t);
            let mut e = grad.token_embedding.row_mut(id as usize);
            e += &row;
            let mut p = grad.position_embedding.row_mut(t);
            p += &row;
        }
    }
}
