//! Small causal transformer decoder with tied input/output embeddings.
//!
//! Training runs through the autodiff [`Graph`] on packed segments; decoding
//! uses [`Backbone::extend`], a tape-free path with a key/value cache.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{self, gemm, Graph, Group, ParamId, ParamStore, Segment, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub vocab: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_positions: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum BackboneError {
    #[error("width {width} is not divisible by {heads} heads")]
    Heads { width: usize, heads: usize },
    #[error("sequence of {0} positions exceeds the backbone limit of {1}")]
    TooLong(usize, usize),
    #[error("checkpoint is missing backbone parameter `{0}`")]
    Missing(String),
}

#[derive(Debug, Clone)]
struct Layer {
    ln1: (ParamId, ParamId),
    qkv: (ParamId, ParamId),
    proj: (ParamId, ParamId),
    ln2: (ParamId, ParamId),
    fc: (ParamId, ParamId),
    out: (ParamId, ParamId),
}

#[derive(Debug, Clone)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    pub tok_emb: ParamId,
    pos_emb: ParamId,
    layers: Vec<Layer>,
    ln_f: (ParamId, ParamId),
}

const INIT_STD: f32 = 0.02;

impl Backbone {
    pub fn new(store: &mut ParamStore, cfg: BackboneConfig, rng: &mut ChaCha8Rng) -> Result<Self, BackboneError> {
        if cfg.width % cfg.heads != 0 {
            return Err(BackboneError::Heads { width: cfg.width, heads: cfg.heads });
        }
        let d = cfg.width;
        let resid_std = INIT_STD / (2.0 * cfg.layers as f32).sqrt();
        let mut add = |name: String, t: Tensor, decay: bool| store.add(name, t, Group::Backbone, decay);
        let tok_emb = add("backbone.tok_emb".into(), Tensor::randn(cfg.vocab, d, INIT_STD, rng), true);
        let pos_emb = add("backbone.pos_emb".into(), Tensor::randn(cfg.max_positions, d, INIT_STD / 2.0, rng), true);
        let mut layers = Vec::new();
        for l in 0..cfg.layers {
            let p = format!("backbone.h{l}");
            let ln = |add: &mut dyn FnMut(String, Tensor, bool) -> ParamId, n: &str| {
                (add(format!("{p}.{n}.g"), Tensor::full(1, d, 1.0), false), add(format!("{p}.{n}.b"), Tensor::zeros(1, d), false))
            };
            let ln1 = ln(&mut add, "ln1");
            let qkv = (
                add(format!("{p}.qkv.w"), Tensor::randn(d, 3 * d, INIT_STD, rng), true),
                add(format!("{p}.qkv.b"), Tensor::zeros(1, 3 * d), false),
            );
            let proj = (
                add(format!("{p}.proj.w"), Tensor::randn(d, d, resid_std, rng), true),
                add(format!("{p}.proj.b"), Tensor::zeros(1, d), false),
            );
            let ln2 = ln(&mut add, "ln2");
            let fc = (
                add(format!("{p}.fc.w"), Tensor::randn(d, 4 * d, INIT_STD, rng), true),
                add(format!("{p}.fc.b"), Tensor::zeros(1, 4 * d), false),
            );
            let out = (
                add(format!("{p}.out.w"), Tensor::randn(4 * d, d, resid_std, rng), true),
                add(format!("{p}.out.b"), Tensor::zeros(1, d), false),
            );
            layers.push(Layer { ln1, qkv, proj, ln2, fc, out });
        }
        let ln_f = (
            add("backbone.ln_f.g".into(), Tensor::full(1, d, 1.0), false),
            add("backbone.ln_f.b".into(), Tensor::zeros(1, d), false),
        );
        Ok(Backbone { cfg, tok_emb, pos_emb, layers, ln_f })
    }

    /// Re-binds parameter handles in a store loaded from a checkpoint.
    pub fn from_store(store: &ParamStore, cfg: BackboneConfig) -> Result<Self, BackboneError> {
        let get = |n: String| store.id(&n).ok_or(BackboneError::Missing(n));
        let pair = |p: &str| -> Result<(ParamId, ParamId), BackboneError> {
            let (a, b) = if p.contains("ln") { ("g", "b") } else { ("w", "b") };
            Ok((get(format!("{p}.{a}"))?, get(format!("{p}.{b}"))?))
        };
        let mut layers = Vec::new();
        for l in 0..cfg.layers {
            let p = format!("backbone.h{l}");
            layers.push(Layer {
                ln1: pair(&format!("{p}.ln1"))?,
                qkv: pair(&format!("{p}.qkv"))?,
                proj: pair(&format!("{p}.proj"))?,
                ln2: pair(&format!("{p}.ln2"))?,
                fc: pair(&format!("{p}.fc"))?,
                out: pair(&format!("{p}.out"))?,
            });
        }
        Ok(Backbone {
            tok_emb: get("backbone.tok_emb".into())?,
            pos_emb: get("backbone.pos_emb".into())?,
            ln_f: pair("backbone.ln_f")?,
            layers,
            cfg,
        })
    }

    pub fn width(&self) -> usize {
        self.cfg.width
    }

    pub fn embed_tokens(&self, g: &mut Graph, store: &ParamStore, ids: &[u32]) -> Var {
        let table = g.param(store, self.tok_emb);
        let idx: Vec<usize> = ids.iter().map(|&t| t as usize).collect();
        g.gather(table, &idx)
    }

    /// Final-layer-norm hidden states for input rows `x` (T×D). Each segment
    /// is an independent causal sequence with positions starting at 0.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, segs: &[Segment]) -> Result<Var, BackboneError> {
        let mut positions = Vec::with_capacity(g.value(x).rows);
        for s in segs {
            if s.len > self.cfg.max_positions {
                return Err(BackboneError::TooLong(s.len, self.cfg.max_positions));
            }
            positions.extend(0..s.len);
        }
        assert_eq!(positions.len(), g.value(x).rows, "segments must tile the rows");
        let pos_table = g.param(store, self.pos_emb);
        let pos = g.gather(pos_table, &positions);
        let mut h = g.add(x, pos);
        let d = self.cfg.width;
        for l in &self.layers {
            let p = |g: &mut Graph, id: ParamId| g.param(store, id);
            let (g1, b1) = (p(g, l.ln1.0), p(g, l.ln1.1));
            let a = g.layer_norm(h, g1, b1);
            let (w, b) = (p(g, l.qkv.0), p(g, l.qkv.1));
            let qkv = g.matmul(a, w);
            let qkv = g.add_row(qkv, b);
            let q = g.slice_cols(qkv, 0, d);
            let k = g.slice_cols(qkv, d, d);
            let v = g.slice_cols(qkv, 2 * d, d);
            let att = g.attention(q, k, v, segs, self.cfg.heads);
            let (w, b) = (p(g, l.proj.0), p(g, l.proj.1));
            let o = g.matmul(att, w);
            let o = g.add_row(o, b);
            h = g.add(h, o);
            let (g2, b2) = (p(g, l.ln2.0), p(g, l.ln2.1));
            let a = g.layer_norm(h, g2, b2);
            let (w, b) = (p(g, l.fc.0), p(g, l.fc.1));
            let f = g.matmul(a, w);
            let f = g.add_row(f, b);
            let f = g.gelu(f);
            let (w, b) = (p(g, l.out.0), p(g, l.out.1));
            let o = g.matmul(f, w);
            let o = g.add_row(o, b);
            h = g.add(h, o);
        }
        let (gf, bf) = (g.param(store, self.ln_f.0), g.param(store, self.ln_f.1));
        Ok(g.layer_norm(h, gf, bf))
    }

    /// Next-token logits for hidden rows, via the tied embedding table.
    pub fn logits(&self, g: &mut Graph, store: &ParamStore, hidden: Var) -> Var {
        let table = g.param(store, self.tok_emb);
        g.matmul_t(hidden, table)
    }

    pub fn new_cache(&self) -> KvCache {
        KvCache { len: 0, k: vec![Vec::new(); self.layers.len()], v: vec![Vec::new(); self.layers.len()] }
    }

    /// Appends input rows to a cached sequence and returns their
    /// final-layer-norm hidden states. Matches [`Backbone::forward`] on the
    /// concatenated sequence.
    pub fn extend(&self, store: &ParamStore, cache: &mut KvCache, x: &Tensor) -> Result<Tensor, BackboneError> {
        let n = x.rows;
        let d = self.cfg.width;
        let total = cache.len + n;
        if total > self.cfg.max_positions {
            return Err(BackboneError::TooLong(total, self.cfg.max_positions));
        }
        let pos = store.get(self.pos_emb);
        let mut h = x.clone();
        for r in 0..n {
            for (a, b) in h.row_mut(r).iter_mut().zip(pos.row(cache.len + r)) {
                *a += b;
            }
        }
        let heads = self.cfg.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f32).sqrt();
        for (li, l) in self.layers.iter().enumerate() {
            let (a, _, _) = nn::layer_norm(&h, &store.get(l.ln1.0).data, &store.get(l.ln1.1).data);
            let qkv = linear(&a, store.get(l.qkv.0), store.get(l.qkv.1));
            for r in 0..n {
                cache.k[li].extend_from_slice(&qkv.row(r)[d..2 * d]);
                cache.v[li].extend_from_slice(&qkv.row(r)[2 * d..]);
            }
            let (ks, vs) = (&cache.k[li], &cache.v[li]);
            let mut att = Tensor::zeros(n, d);
            let mut scores = vec![0.0f32; total];
            for r in 0..n {
                let q = &qkv.row(r)[..d];
                let upto = cache.len + r + 1;
                for hd in 0..heads {
                    let qh = &q[hd * dh..(hd + 1) * dh];
                    for (j, s) in scores[..upto].iter_mut().enumerate() {
                        let kh = &ks[j * d + hd * dh..j * d + (hd + 1) * dh];
                        *s = qh.iter().zip(kh).map(|(a, b)| a * b).sum::<f32>() * scale;
                    }
                    nn::softmax_in_place(&mut scores[..upto]);
                    let out = &mut att.row_mut(r)[hd * dh..(hd + 1) * dh];
                    for (j, &p) in scores[..upto].iter().enumerate() {
                        let vh = &vs[j * d + hd * dh..j * d + (hd + 1) * dh];
                        out.iter_mut().zip(vh).for_each(|(o, v)| *o += p * v);
                    }
                }
            }
            h.add_assign(&linear(&att, store.get(l.proj.0), store.get(l.proj.1)));
            let (a, _, _) = nn::layer_norm(&h, &store.get(l.ln2.0).data, &store.get(l.ln2.1).data);
            let f = linear(&a, store.get(l.fc.0), store.get(l.fc.1)).map(nn::gelu);
            h.add_assign(&linear(&f, store.get(l.out.0), store.get(l.out.1)));
        }
        cache.len = total;
        let (out, _, _) = nn::layer_norm(&h, &store.get(self.ln_f.0).data, &store.get(self.ln_f.1).data);
        Ok(out)
    }

    pub fn token_row(&self, store: &ParamStore, id: u32) -> Vec<f32> {
        store.get(self.tok_emb).row(id as usize).to_vec()
    }

    /// Logits over the vocabulary for one hidden row.
    pub fn logits_row(&self, store: &ParamStore, hidden: &[f32]) -> Vec<f32> {
        let table = store.get(self.tok_emb);
        (0..table.rows).map(|r| table.row(r).iter().zip(hidden).map(|(a, b)| a * b).sum()).collect()
    }
}

fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let mut y = Tensor::zeros(x.rows, w.cols);
    for r in 0..x.rows {
        y.row_mut(r).copy_from_slice(&b.data);
    }
    gemm(x, false, w, false, &mut y, 1.0, 1.0);
    y
}

/// Per-layer key/value rows of the sequence decoded so far.
#[derive(Debug, Clone)]
pub struct KvCache {
    pub len: usize,
    k: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny() -> (ParamStore, Backbone) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = BackboneConfig { vocab: 20, width: 8, layers: 2, heads: 2, max_positions: 16 };
        let bb = Backbone::new(&mut store, cfg, &mut rng).unwrap();
        (store, bb)
    }

    #[test]
    fn cached_decoding_matches_graph() {
        let (store, bb) = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::randn(6, 8, 0.5, &mut rng);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let h = bb.forward(&mut g, &store, xv, &[Segment { start: 0, len: 6 }]).unwrap();
        let full = g.value(h).clone();
        let mut cache = bb.new_cache();
        let a = bb.extend(&store, &mut cache, &x.select_rows(&[0, 1, 2, 3])).unwrap();
        let b = bb.extend(&store, &mut cache, &x.select_rows(&[4])).unwrap();
        let c = bb.extend(&store, &mut cache, &x.select_rows(&[5])).unwrap();
        let mut inc = a.data.clone();
        inc.extend(&b.data);
        inc.extend(&c.data);
        for (p, q) in full.data.iter().zip(&inc) {
            assert!((p - q).abs() < 1e-4, "{p} vs {q}");
        }
    }

    #[test]
    fn segments_are_independent() {
        let (store, bb) = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::randn(5, 8, 0.5, &mut rng);
        let run = |rows: &[usize], segs: &[Segment]| {
            let mut g = Graph::new();
            let xv = g.constant(x.select_rows(rows));
            let h = bb.forward(&mut g, &store, xv, segs).unwrap();
            g.value(h).clone()
        };
        let packed = run(&[0, 1, 2, 3, 4], &[Segment { start: 0, len: 2 }, Segment { start: 2, len: 3 }]);
        let alone = run(&[2, 3, 4], &[Segment { start: 0, len: 3 }]);
        assert_eq!(&packed.data[16..], &alone.data[..]);
    }

    #[test]
    fn too_long_is_an_error() {
        let (store, bb) = tiny();
        let mut cache = bb.new_cache();
        assert!(bb.extend(&store, &mut cache, &Tensor::zeros(17, 8)).is_err());
    }

    #[test]
    fn argmax_prefers_first() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }
}
