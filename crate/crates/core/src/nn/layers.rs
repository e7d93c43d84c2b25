use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Graph, Mat, Var};

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        Linear {
            w: store.add_linear_weight(&format!("{name}.w"), fan_in, fan_out, rng),
            b: store.add_zeros(&format!("{name}.b"), 1, fan_out),
        }
    }

    /// Zero weights and zero bias.
    pub fn zeros(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Self {
        Linear {
            w: store.add_zeros(&format!("{name}.w"), fan_in, fan_out),
            b: store.add_zeros(&format!("{name}.b"), 1, fan_out),
        }
    }

    pub fn lookup(store: &ParamStore, name: &str) -> Option<Self> {
        Some(Linear {
            w: store.id(&format!("{name}.w"))?,
            b: store.id(&format!("{name}.b"))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }

    /// Plain-value evaluation for callers without a graph.
    pub fn apply(&self, store: &ParamStore, x: &Mat) -> Mat {
        x.dot(store.get(self.w)) + store.get(self.b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        LayerNorm {
            gamma: store.add_ones(&format!("{name}.gamma"), 1, width),
            beta: store.add_zeros(&format!("{name}.beta"), 1, width),
        }
    }

    pub fn lookup(store: &ParamStore, name: &str) -> Option<Self> {
        Some(LayerNorm {
            gamma: store.id(&format!("{name}.gamma"))?,
            beta: store.id(&format!("{name}.beta"))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

/// Pre-norm transformer block: self-attention then a GELU feed-forward, both residual.
#[derive(Debug, Clone)]
pub struct Block {
    pub ln1: LayerNorm,
    pub qkv: Linear,
    pub proj: Linear,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub heads: usize,
    pub width: usize,
}

impl Block {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, width: usize, heads: usize, ff: usize, rng: &mut R) -> Self {
        assert!(width % heads == 0, "width must divide into heads");
        Block {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), width),
            qkv: Linear::new(store, &format!("{name}.qkv"), width, 3 * width, rng),
            proj: Linear::new(store, &format!("{name}.proj"), width, width, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), width),
            ff1: Linear::new(store, &format!("{name}.ff1"), width, ff, rng),
            ff2: Linear::new(store, &format!("{name}.ff2"), ff, width, rng),
            heads,
            width,
        }
    }

    pub fn lookup(store: &ParamStore, name: &str, width: usize, heads: usize) -> Option<Self> {
        Some(Block {
            ln1: LayerNorm::lookup(store, &format!("{name}.ln1"))?,
            qkv: Linear::lookup(store, &format!("{name}.qkv"))?,
            proj: Linear::lookup(store, &format!("{name}.proj"))?,
            ln2: LayerNorm::lookup(store, &format!("{name}.ln2"))?,
            ff1: Linear::lookup(store, &format!("{name}.ff1"))?,
            ff2: Linear::lookup(store, &format!("{name}.ff2"))?,
            heads,
            width,
        })
    }

    /// `x` stacks `x.rows / tokens` independent sequences of `tokens` rows each.
    pub fn forward(&self, g: &mut Graph, x: Var, tokens: usize, causal: bool) -> Var {
        let h = self.ln1.forward(g, x);
        let qkv = self.qkv.forward(g, h);
        let rows = g.value(x).nrows();
        assert!(rows % tokens == 0, "rows not a multiple of sequence length");
        let dh = self.width / self.heads;
        let inv = 1.0 / (dh as f64).sqrt();
        let mask = causal.then(|| {
            Mat::from_shape_fn((tokens, tokens), |(i, j)| if j > i { -1e30 } else { 0.0 })
        });
        let mut seqs = Vec::with_capacity(rows / tokens);
        for b in 0..rows / tokens {
            let block = g.slice_rows(qkv, b * tokens, (b + 1) * tokens);
            let mut heads = Vec::with_capacity(self.heads);
            for hd in 0..self.heads {
                let q = g.slice_cols(block, hd * dh, (hd + 1) * dh);
                let k = g.slice_cols(block, self.width + hd * dh, self.width + (hd + 1) * dh);
                let v = g.slice_cols(block, 2 * self.width + hd * dh, 2 * self.width + (hd + 1) * dh);
                let sc = g.matmul_t(q, k);
                let mut sc = g.scale(sc, inv);
                if let Some(m) = &mask {
                    let m = g.input(m.clone());
                    sc = g.add(sc, m);
                }
                let p = g.softmax_rows(sc);
                heads.push(g.matmul(p, v));
            }
            seqs.push(g.concat_cols(&heads));
        }
        let att = g.concat_rows(&seqs);
        let att = self.proj.forward(g, att);
        let x = g.add(x, att);
        let h = self.ln2.forward(g, x);
        let h = self.ff1.forward(g, h);
        let h = g.gelu(h);
        let h = self.ff2.forward(g, h);
        g.add(x, h)
    }
}

/// Sinusoidal embedding of an integer step.
pub fn sinusoidal(step: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64).ln() * i as f64 / half.max(1) as f64).exp();
        let a = step as f64 * freq;
        out[2 * i] = a.sin();
        out[2 * i + 1] = a.cos();
    }
    out
}
