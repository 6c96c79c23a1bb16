use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

/// Compares tape gradients with central differences for every parameter entry.
fn check(store: &mut ParamStore, f: impl Fn(&mut Graph, &ParamStore) -> Var) {
    store.zero_grads();
    let mut g = Graph::new();
    let loss = f(&mut g, store);
    g.backward(loss, store);
    let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let analytic = store.grad(id).clone();
        for i in 0..analytic.len() {
            let h = 1e-2f32;
            let orig = store.get(id).data[i];
            store.get_mut(id).data[i] = orig + h;
            let mut g1 = Graph::new();
            let l1 = f(&mut g1, store);
            let up = g1.value(l1).item() as f64;
            store.get_mut(id).data[i] = orig - h;
            let mut g2 = Graph::new();
            let l2 = f(&mut g2, store);
            let down = g2.value(l2).item() as f64;
            store.get_mut(id).data[i] = orig;
            let fd = (up - down) / (2.0 * h as f64);
            let an = analytic.data[i] as f64;
            assert!(
                (fd - an).abs() <= 2e-3 + 2e-2 * fd.abs().max(an.abs()),
                "{} [{i}]: analytic {an} vs numeric {fd}",
                store.param(id).name
            );
        }
    }
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(7)
}

#[test]
fn dense_ops() {
    let mut r = rng();
    let mut s = ParamStore::new();
    let x = s.add("x", Tensor::randn(3, 4, 1.0, &mut r), Group::Backbone, true);
    let w = s.add("w", Tensor::randn(4, 5, 0.5, &mut r), Group::Backbone, true);
    let w2 = s.add("w2", Tensor::randn(2, 5, 0.5, &mut r), Group::Backbone, true);
    let b = s.add("b", Tensor::randn(1, 5, 0.5, &mut r), Group::Backbone, false);
    check(&mut s, |g, s| {
        let (x, w, w2, b) = (g.param(s, x), g.param(s, w), g.param(s, w2), g.param(s, b));
        let h = g.matmul(x, w);
        let h = g.add_row(h, b);
        let a = g.sigmoid(h);
        let t = g.tanh(h);
        let u = g.gelu(h);
        let m = g.mul(a, t);
        let m = g.add(m, u);
        let m = g.scale(m, 0.7);
        let z = g.matmul_t(m, w2);
        g.bce_logits(z, &[1., 0., 0., 1., 1., 0.], &[0.3, 0.2, 0.1, 0.4, 0.5, 0.6])
    });
}

#[test]
fn layer_norm_and_cross_entropy() {
    let mut r = rng();
    let mut s = ParamStore::new();
    let x = s.add("x", Tensor::randn(3, 6, 1.0, &mut r), Group::Backbone, true);
    let gam = s.add("g", Tensor::randn(1, 6, 1.0, &mut r), Group::Backbone, false);
    let bet = s.add("b", Tensor::randn(1, 6, 1.0, &mut r), Group::Backbone, false);
    check(&mut s, |g, s| {
        let (x, gam, bet) = (g.param(s, x), g.param(s, gam), g.param(s, bet));
        let y = g.layer_norm(x, gam, bet);
        g.cross_entropy(y, &[0, 5, 2], &[0.5, 0.25, 0.25])
    });
}

#[test]
fn attention_over_segments() {
    let mut r = rng();
    let mut s = ParamStore::new();
    let x = s.add("x", Tensor::randn(5, 4, 1.0, &mut r), Group::Backbone, true);
    let wq = s.add("wq", Tensor::randn(4, 4, 0.7, &mut r), Group::Backbone, true);
    let wk = s.add("wk", Tensor::randn(4, 4, 0.7, &mut r), Group::Backbone, true);
    let segs = [Segment { start: 0, len: 3 }, Segment { start: 3, len: 2 }];
    check(&mut s, |g, s| {
        let (x, wq, wk) = (g.param(s, x), g.param(s, wq), g.param(s, wk));
        let q = g.matmul(x, wq);
        let k = g.matmul(x, wk);
        let o = g.attention(q, k, x, &segs, 2);
        g.cross_entropy(o, &[0, 1, 2, 3, 0], &[1.0; 5])
    });
}

#[test]
fn structural_ops() {
    let mut r = rng();
    let mut s = ParamStore::new();
    let a = s.add("a", Tensor::randn(3, 2, 1.0, &mut r), Group::Backbone, true);
    let b = s.add("b", Tensor::randn(3, 3, 1.0, &mut r), Group::Backbone, true);
    check(&mut s, |g, s| {
        let (a, b) = (g.param(s, a), g.param(s, b));
        let c = g.concat_cols(&[a, b]);
        let c = g.slice_cols(c, 1, 3);
        let d = g.concat_rows(&[c, b]);
        let e = g.gather(d, &[0, 5, 5, 2]);
        let m = g.mean_groups(e, vec![vec![0, 1], vec![2, 3], vec![1]]);
        let l1 = g.cross_entropy(m, &[0, 1, 2], &[1.0; 3]);
        let l2 = g.bce_logits(a, &[1., 0., 1., 0., 1., 0.], &[1.0; 6]);
        g.lincomb(&[(l1, 0.3), (l2, 0.7)])
    });
}

#[test]
fn attention_is_causal() {
    let mut r = rng();
    let x = Tensor::randn(4, 4, 1.0, &mut r);
    let mut y = x.clone();
    y.row_mut(3).iter_mut().for_each(|v| *v += 1.0);
    let segs = [Segment { start: 0, len: 4 }];
    let run = |t: Tensor| {
        let mut g = Graph::new();
        let v = g.constant(t);
        let o = g.attention(v, v, v, &segs, 2);
        g.value(o).clone()
    };
    let (ox, oy) = (run(x), run(y));
    assert_eq!(ox.data[..12], oy.data[..12]);
    assert_ne!(ox.data[12..], oy.data[12..]);
}
