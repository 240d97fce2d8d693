//! One encoding tower: token and position embeddings, post-norm transformer
//! layers, mean pooling, then a ReLU layer and a SoftSign output layer.
//! Parameters live in one flat vector addressed through [`Layout`], which keeps
//! the optimizer, checkpointing and gradient checks shape-agnostic.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{
    add_assign, add_at_b, add_col_sums, affine, dot, layer_norm, layer_norm_backward, matmul_bt,
};
use crate::error::{Error, Result};
use crate::tokenizer::{EOS, UNK};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    /// Longest token sequence (including bos/eos) fed to a tower.
    pub max_len: usize,
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// Width of the feed-forward block inside each transformer layer.
    pub transformer_hidden: usize,
    /// Width of the ReLU layer applied after pooling.
    pub head_hidden: usize,
    /// Size of the SoftSign output embedding.
    pub embed_dim: usize,
    pub attention_dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 4000,
            max_len: 32,
            model_dim: 64,
            layers: 2,
            heads: 2,
            transformer_hidden: 64,
            head_hidden: 64,
            embed_dim: 64,
            attention_dropout: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("model_dim", self.model_dim),
            ("heads", self.heads),
            ("transformer_hidden", self.transformer_hidden),
            ("head_hidden", self.head_hidden),
            ("embed_dim", self.embed_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("encoder {name} must be positive")));
            }
        }
        if self.max_len < 2 {
            return Err(Error::Config("encoder max_len must be at least 2".into()));
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model_dim {} is not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.attention_dropout) {
            return Err(Error::Config("attention_dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamClass {
    TokenEmbedding,
    PositionEmbedding,
    Attention,
    LayerNorm,
    FeedForward,
    Head,
}

impl ParamClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamClass::TokenEmbedding => "token_embedding",
            ParamClass::PositionEmbedding => "position_embedding",
            ParamClass::Attention => "attention",
            ParamClass::LayerNorm => "layer_norm",
            ParamClass::FeedForward => "feed_forward",
            ParamClass::Head => "head",
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerLayout {
    wq: usize,
    bq: usize,
    wk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln1_g: usize,
    ln1_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    ln2_g: usize,
    ln2_b: usize,
}

/// Offsets of every tensor inside a tower's flat parameter vector.
#[derive(Debug, Clone)]
pub struct Layout {
    tok: usize,
    pos: usize,
    layers: Vec<LayerLayout>,
    u1: usize,
    e1: usize,
    u2: usize,
    e2: usize,
    total: usize,
    /// Ranges with their class and initialization kind.
    tensors: Vec<(Range<usize>, ParamClass, Init)>,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Zero,
    One,
    Embedding,
    Weight { fan_in: usize, fan_out: usize },
}

struct Alloc {
    next: usize,
    tensors: Vec<(Range<usize>, ParamClass, Init)>,
}

impl Alloc {
    fn take(&mut self, len: usize, class: ParamClass, init: Init) -> usize {
        let start = self.next;
        self.next += len;
        self.tensors.push((start..self.next, class, init));
        start
    }

    fn weight(&mut self, rows: usize, cols: usize, class: ParamClass) -> usize {
        self.take(
            rows * cols,
            class,
            Init::Weight {
                fan_in: rows,
                fan_out: cols,
            },
        )
    }
}

impl Layout {
    pub fn new(cfg: &EncoderConfig) -> Self {
        use ParamClass::*;
        let d = cfg.model_dim;
        let f = cfg.transformer_hidden;
        let mut a = Alloc {
            next: 0,
            tensors: Vec::new(),
        };
        let tok = a.take(cfg.vocab_size * d, TokenEmbedding, Init::Embedding);
        let pos = a.take(cfg.max_len * d, PositionEmbedding, Init::Embedding);
        let layers = (0..cfg.layers)
            .map(|_| LayerLayout {
                wq: a.weight(d, d, Attention),
                bq: a.take(d, Attention, Init::Zero),
                wk: a.weight(d, d, Attention),
                wv: a.weight(d, d, Attention),
                bv: a.take(d, Attention, Init::Zero),
                wo: a.weight(d, d, Attention),
                bo: a.take(d, Attention, Init::Zero),
                ln1_g: a.take(d, LayerNorm, Init::One),
                ln1_b: a.take(d, LayerNorm, Init::Zero),
                w1: a.weight(d, f, FeedForward),
                b1: a.take(f, FeedForward, Init::Zero),
                w2: a.weight(f, d, FeedForward),
                b2: a.take(d, FeedForward, Init::Zero),
                ln2_g: a.take(d, LayerNorm, Init::One),
                ln2_b: a.take(d, LayerNorm, Init::Zero),
            })
            .collect();
        let u1 = a.weight(d, cfg.head_hidden, Head);
        let e1 = a.take(cfg.head_hidden, Head, Init::Zero);
        let u2 = a.weight(cfg.head_hidden, cfg.embed_dim, Head);
        let e2 = a.take(cfg.embed_dim, Head, Init::Zero);
        Layout {
            tok,
            pos,
            layers,
            u1,
            e1,
            u2,
            e2,
            total: a.next,
            tensors: a.tensors,
        }
    }

    /// Number of scalars in one tower.
    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn class_of(&self, index: usize) -> ParamClass {
        self.tensors
            .iter()
            .find(|(r, _, _)| r.contains(&index))
            .map(|(_, c, _)| *c)
            .expect("index within tower")
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut p = vec![0.0; self.total];
        for (range, _, init) in &self.tensors {
            let bound = match *init {
                Init::Zero => continue,
                Init::One => {
                    p[range.clone()].fill(1.0);
                    continue;
                }
                Init::Embedding => 0.1,
                Init::Weight { fan_in, fan_out } => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            };
            for v in &mut p[range.clone()] {
                *v = rng.random_range(-bound..bound);
            }
        }
        p
    }
}

/// Clips to `max_len` (keeping the final eos) and maps out-of-vocabulary ids to
/// unk. The flag reports whether truncation happened.
pub fn prepare_ids(cfg: &EncoderConfig, ids: &[u32]) -> (Vec<u32>, bool) {
    let mut out: Vec<u32> = ids
        .iter()
        .map(|&id| {
            if (id as usize) < cfg.vocab_size {
                id
            } else {
                UNK
            }
        })
        .collect();
    if out.is_empty() {
        out = vec![crate::tokenizer::BOS, EOS];
    }
    let truncated = out.len() > cfg.max_len;
    if truncated {
        let last = *out.last().expect("non-empty");
        out.truncate(cfg.max_len - 1);
        out.push(last);
    }
    (out, truncated)
}

struct LayerCache {
    x: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Attention probabilities per head, `heads × n × n`.
    probs: Vec<f64>,
    /// Dropout multipliers (0 or 1/(1-p)), same shape as `probs`.
    mask: Option<Vec<f64>>,
    ctx: Vec<f64>,
    n1_hat: Vec<f64>,
    n1_inv: Vec<f64>,
    h1: Vec<f64>,
    f_pre: Vec<f64>,
    f_act: Vec<f64>,
    n2_hat: Vec<f64>,
    n2_inv: Vec<f64>,
}

/// Everything the backward pass needs from one forward pass.
pub(crate) struct SeqCache {
    ids: Vec<u32>,
    layers: Vec<LayerCache>,
    pooled: Vec<f64>,
    z1_pre: Vec<f64>,
    z1: Vec<f64>,
    z2: Vec<f64>,
    pub embedding: Vec<f64>,
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.max(0.0)).collect()
}

/// Runs one tower. Dropout is applied only when `rng` is given.
pub(crate) fn forward<R: Rng + ?Sized>(
    cfg: &EncoderConfig,
    lay: &Layout,
    p: &[f64],
    ids: &[u32],
    mut rng: Option<&mut R>,
) -> SeqCache {
    let (ids, _) = prepare_ids(cfg, ids);
    let d = cfg.model_dim;
    let f = cfg.transformer_hidden;
    let n = ids.len();
    let w = |off: usize, len: usize| &p[off..off + len];

    let mut x = vec![0.0; n * d];
    for (i, &id) in ids.iter().enumerate() {
        let t = lay.tok + id as usize * d;
        let ps = lay.pos + i * d;
        for c in 0..d {
            x[i * d + c] = p[t + c] + p[ps + c];
        }
    }

    let mut layers = Vec::with_capacity(lay.layers.len());
    for l in &lay.layers {
        let q = affine(&x, w(l.wq, d * d), Some(w(l.bq, d)), n, d, d);
        let k = affine(&x, w(l.wk, d * d), None, n, d, d);
        let v = affine(&x, w(l.wv, d * d), Some(w(l.bv, d)), n, d, d);
        let (probs, mask, ctx) = attention(cfg, &q, &k, &v, n, rng.as_deref_mut());
        let mut r1 = affine(&ctx, w(l.wo, d * d), Some(w(l.bo, d)), n, d, d);
        add_assign(&mut r1, &x);
        let (n1_hat, n1_inv, h1) = layer_norm(&r1, w(l.ln1_g, d), w(l.ln1_b, d), n, d);
        let f_pre = affine(&h1, w(l.w1, d * f), Some(w(l.b1, f)), n, d, f);
        let f_act = relu(&f_pre);
        let mut r2 = affine(&f_act, w(l.w2, f * d), Some(w(l.b2, d)), n, f, d);
        add_assign(&mut r2, &h1);
        let (n2_hat, n2_inv, y) = layer_norm(&r2, w(l.ln2_g, d), w(l.ln2_b, d), n, d);
        layers.push(LayerCache {
            x,
            q,
            k,
            v,
            probs,
            mask,
            ctx,
            n1_hat,
            n1_inv,
            h1,
            f_pre,
            f_act,
            n2_hat,
            n2_inv,
        });
        x = y;
    }

    let mut pooled = vec![0.0; d];
    for row in x.chunks_exact(d) {
        add_assign(&mut pooled, row);
    }
    for v in &mut pooled {
        *v /= n as f64;
    }
    let hh = cfg.head_hidden;
    let e = cfg.embed_dim;
    let z1_pre = affine(&pooled, w(lay.u1, d * hh), Some(w(lay.e1, hh)), 1, d, hh);
    let z1 = relu(&z1_pre);
    let z2 = affine(&z1, w(lay.u2, hh * e), Some(w(lay.e2, e)), 1, hh, e);
    let embedding = z2.iter().map(|&z| z / (1.0 + z.abs())).collect();
    SeqCache {
        ids,
        layers,
        pooled,
        z1_pre,
        z1,
        z2,
        embedding,
    }
}

type AttentionOut = (Vec<f64>, Option<Vec<f64>>, Vec<f64>);

fn attention<R: Rng + ?Sized>(
    cfg: &EncoderConfig,
    q: &[f64],
    k: &[f64],
    v: &[f64],
    n: usize,
    rng: Option<&mut R>,
) -> AttentionOut {
    let d = cfg.model_dim;
    let heads = cfg.heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut probs = vec![0.0; heads * n * n];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..n {
            let qi = &q[i * d..(i + 1) * d][cols.clone()];
            let row = &mut probs[(h * n + i) * n..(h * n + i + 1) * n];
            for (j, s) in row.iter_mut().enumerate() {
                *s = scale * dot(qi, &k[j * d..(j + 1) * d][cols.clone()]);
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for s in row.iter_mut() {
                *s = (*s - max).exp();
                z += *s;
            }
            for s in row.iter_mut() {
                *s /= z;
            }
        }
    }
    let rate = cfg.attention_dropout;
    let mask = match rng {
        Some(rng) if rate > 0.0 => {
            let keep = 1.0 / (1.0 - rate);
            Some(
                (0..probs.len())
                    .map(|_| {
                        if rng.random::<f64>() < rate {
                            0.0
                        } else {
                            keep
                        }
                    })
                    .collect::<Vec<f64>>(),
            )
        }
        _ => None,
    };
    let mut ctx = vec![0.0; n * d];
    for h in 0..heads {
        for i in 0..n {
            for j in 0..n {
                let idx = (h * n + i) * n + j;
                let a = probs[idx] * mask.as_ref().map_or(1.0, |m| m[idx]);
                if a == 0.0 {
                    continue;
                }
                for c in h * dh..(h + 1) * dh {
                    ctx[i * d + c] += a * v[j * d + c];
                }
            }
        }
    }
    (probs, mask, ctx)
}

/// Accumulates into `g` the gradient of `dot(embedding, dh)` with respect to
/// the tower parameters.
pub(crate) fn backward(
    cfg: &EncoderConfig,
    lay: &Layout,
    p: &[f64],
    cache: &SeqCache,
    dh: &[f64],
    g: &mut [f64],
) {
    let d = cfg.model_dim;
    let f = cfg.transformer_hidden;
    let hh = cfg.head_hidden;
    let e = cfg.embed_dim;
    let n = cache.ids.len();
    let w = |off: usize, len: usize| &p[off..off + len];

    let dz2: Vec<f64> = dh
        .iter()
        .zip(&cache.z2)
        .map(|(&g, &z)| g / ((1.0 + z.abs()) * (1.0 + z.abs())))
        .collect();
    add_at_b(&mut g[lay.u2..lay.u2 + hh * e], &cache.z1, &dz2, 1, hh, e);
    add_assign(&mut g[lay.e2..lay.e2 + e], &dz2);
    let mut dz1 = matmul_bt(&dz2, w(lay.u2, hh * e), 1, e, hh);
    for (dz, &pre) in dz1.iter_mut().zip(&cache.z1_pre) {
        if pre <= 0.0 {
            *dz = 0.0;
        }
    }
    add_at_b(
        &mut g[lay.u1..lay.u1 + d * hh],
        &cache.pooled,
        &dz1,
        1,
        d,
        hh,
    );
    add_assign(&mut g[lay.e1..lay.e1 + hh], &dz1);
    let dpooled = matmul_bt(&dz1, w(lay.u1, d * hh), 1, hh, d);

    let mut dx: Vec<f64> = (0..n)
        .flat_map(|_| dpooled.iter().map(|v| v / n as f64))
        .collect();

    for (l, c) in lay.layers.iter().zip(&cache.layers).rev() {
        let (dg, rest) = g[l.ln2_g..].split_at_mut(d);
        let dr2 = layer_norm_backward(
            &dx,
            &c.n2_hat,
            &c.n2_inv,
            w(l.ln2_g, d),
            dg,
            &mut rest[..d],
            n,
            d,
        );
        debug_assert_eq!(l.ln2_b, l.ln2_g + d);

        let mut dh1 = dr2.clone();
        add_at_b(&mut g[l.w2..l.w2 + f * d], &c.f_act, &dr2, n, f, d);
        add_col_sums(&mut g[l.b2..l.b2 + d], &dr2, d);
        let mut df = matmul_bt(&dr2, w(l.w2, f * d), n, d, f);
        for (v, &pre) in df.iter_mut().zip(&c.f_pre) {
            if pre <= 0.0 {
                *v = 0.0;
            }
        }
        add_at_b(&mut g[l.w1..l.w1 + d * f], &c.h1, &df, n, d, f);
        add_col_sums(&mut g[l.b1..l.b1 + f], &df, f);
        add_assign(&mut dh1, &matmul_bt(&df, w(l.w1, d * f), n, f, d));

        let (dg, rest) = g[l.ln1_g..].split_at_mut(d);
        let dr1 = layer_norm_backward(
            &dh1,
            &c.n1_hat,
            &c.n1_inv,
            w(l.ln1_g, d),
            dg,
            &mut rest[..d],
            n,
            d,
        );
        debug_assert_eq!(l.ln1_b, l.ln1_g + d);

        let mut dxl = dr1.clone();
        add_at_b(&mut g[l.wo..l.wo + d * d], &c.ctx, &dr1, n, d, d);
        add_col_sums(&mut g[l.bo..l.bo + d], &dr1, d);
        let dctx = matmul_bt(&dr1, w(l.wo, d * d), n, d, d);
        let (dq, dk, dv) = attention_backward(cfg, c, &dctx, n);

        add_at_b(&mut g[l.wq..l.wq + d * d], &c.x, &dq, n, d, d);
        add_col_sums(&mut g[l.bq..l.bq + d], &dq, d);
        add_at_b(&mut g[l.wk..l.wk + d * d], &c.x, &dk, n, d, d);
        add_at_b(&mut g[l.wv..l.wv + d * d], &c.x, &dv, n, d, d);
        add_col_sums(&mut g[l.bv..l.bv + d], &dv, d);
        add_assign(&mut dxl, &matmul_bt(&dq, w(l.wq, d * d), n, d, d));
        add_assign(&mut dxl, &matmul_bt(&dk, w(l.wk, d * d), n, d, d));
        add_assign(&mut dxl, &matmul_bt(&dv, w(l.wv, d * d), n, d, d));
        dx = dxl;
    }

    for (i, &id) in cache.ids.iter().enumerate() {
        let row = &dx[i * d..(i + 1) * d];
        let t = lay.tok + id as usize * d;
        add_assign(&mut g[t..t + d], row);
        let ps = lay.pos + i * d;
        add_assign(&mut g[ps..ps + d], row);
    }
}

fn attention_backward(
    cfg: &EncoderConfig,
    c: &LayerCache,
    dctx: &[f64],
    n: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = cfg.model_dim;
    let heads = cfg.heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; n * d];
    let mut dk = vec![0.0; n * d];
    let mut dv = vec![0.0; n * d];
    let mut dp = vec![0.0; n];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..n {
            let dci = &dctx[i * d..(i + 1) * d][cols.clone()];
            let base = (h * n + i) * n;
            for j in 0..n {
                let m = c.mask.as_ref().map_or(1.0, |m| m[base + j]);
                let a = c.probs[base + j] * m;
                let vj = &c.v[j * d..(j + 1) * d][cols.clone()];
                dp[j] = m * dot(dci, vj);
                if a != 0.0 {
                    for (o, &g) in dv[j * d..(j + 1) * d][cols.clone()].iter_mut().zip(dci) {
                        *o += a * g;
                    }
                }
            }
            let probs = &c.probs[base..base + n];
            let inner = dot(probs, &dp);
            let qi = &c.q[i * d..(i + 1) * d][cols.clone()];
            for j in 0..n {
                let ds = probs[j] * (dp[j] - inner) * scale;
                if ds == 0.0 {
                    continue;
                }
                let kj = &c.k[j * d..(j + 1) * d][cols.clone()];
                for (o, &kv) in dq[i * d..(i + 1) * d][cols.clone()].iter_mut().zip(kj) {
                    *o += ds * kv;
                }
                for (o, &qv) in dk[j * d..(j + 1) * d][cols.clone()].iter_mut().zip(qi) {
                    *o += ds * qv;
                }
            }
        }
    }
    (dq, dk, dv)
}
