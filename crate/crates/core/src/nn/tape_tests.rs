use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    Mat::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
}

/// Compares analytic gradients of `f` at `inputs` against central
/// differences for every input entry.
fn check(inputs: Vec<Mat>, f: impl Fn(&mut Tape, &[Var]) -> Var) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let root = f(&mut tape, &vars);
    let grads = tape.backward(root);
    let eval = |inputs: &[Mat]| {
        let mut t = Tape::new();
        let vs: Vec<Var> = inputs.iter().map(|m| t.leaf(m.clone())).collect();
        let r = f(&mut t, &vs);
        t.scalar(r)
    };
    let h = 1e-6;
    for (k, m) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).cloned().unwrap_or_else(|| Mat::zeros(m.dim()));
        for idx in 0..m.len() {
            let (r, c) = (idx / m.ncols(), idx % m.ncols());
            let mut plus = inputs.clone();
            plus[k][[r, c]] += h;
            let mut minus = inputs.clone();
            minus[k][[r, c]] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic[[r, c]];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            assert!(rel < 1e-5, "input {k} [{r},{c}]: analytic {a} numeric {numeric}");
        }
    }
}

/// Weighted sum so every output entry gets a distinct upstream gradient.
fn readout(t: &mut Tape, v: Var) -> Var {
    let dim = t.value(v).dim();
    let w = Mat::from_shape_fn(dim, |(r, c)| 0.3 + 0.7 * ((r * 7 + c * 3) % 5) as f64);
    let w = t.leaf(w);
    let p = t.mul(v, w);
    t.sum(p)
}

#[test]
fn elementwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&mut rng, 3, 4);
    let b = random(&mut rng, 3, 4);
    check(vec![a.clone(), b.clone()], |t, v| {
        let s = t.add(v[0], v[1]);
        let d = t.sub(s, v[1]);
        let m = t.mul(d, v[1]);
        let e = t.exp(m);
        let th = t.tanh(e);
        let sg = t.sigmoid(th);
        let sc = t.scale(sg, -2.5);
        let sh = t.add_scalar(sc, 0.7);
        let r = t.relu(sh);
        readout(t, r)
    });
    check(vec![a], |t, v| {
        let m = t.mean(v[0]);
        let x = t.mul(m, m);
        t.sum(x)
    });
}

#[test]
fn matmul_bias_concat_slice_gather() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&mut rng, 4, 3);
    let w = random(&mut rng, 3, 5);
    let b = random(&mut rng, 1, 5);
    let y = random(&mut rng, 2, 2);
    check(vec![x, w, b, y], |t, v| {
        let a = t.affine(v[0], v[1], v[2]);
        let s = t.slice_cols(a, 1, 3);
        let g = t.gather_rows(s, &[3, 0, 3]);
        let y3 = t.gather_rows(v[3], &[0, 1, 1]);
        let c = t.concat(&[g, y3]);
        readout(t, c)
    });
}

#[test]
fn lstm_cell_matches_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let gates = random(&mut rng, 2, 12) * 2.0;
    let c = random(&mut rng, 2, 3);
    check(vec![gates.clone(), c.clone()], |t, v| {
        let hc = t.lstm_cell(v[0], v[1]);
        readout(t, hc)
    });
    // Forward agrees with the gate-by-gate formula.
    let mut t = Tape::new();
    let gv = t.leaf(gates.clone());
    let cv = t.leaf(c.clone());
    let hc = t.lstm_cell(gv, cv);
    let out = t.value(hc);
    for r in 0..2 {
        for k in 0..3 {
            let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
            let cn = sig(gates[[r, 3 + k]]) * c[[r, k]] + sig(gates[[r, k]]) * gates[[r, 6 + k]].tanh();
            let h = sig(gates[[r, 9 + k]]) * cn.tanh();
            assert!((out[[r, 3 + k]] - cn).abs() < 1e-14);
            assert!((out[[r, k]] - h).abs() < 1e-14);
        }
    }
}

#[test]
fn conv2d_and_spatial_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let geom = ConvGeom::same(5, 6, 2, 3, 3, 2);
    assert_eq!((geom.out_height, geom.out_width), (3, 3));
    let x = random(&mut rng, 2, geom.input_len());
    let w = random(&mut rng, 3 * 3 * 2, 3);
    let b = random(&mut rng, 1, 3);
    check(vec![x, w, b], |t, v| {
        let y = t.conv2d(v[0], v[1], v[2], geom);
        let m = t.spatial_mean(y, 3);
        let r = t.tanh(y);
        let a = readout(t, r);
        let bm = readout(t, m);
        t.add(a, bm)
    });
}

#[test]
fn conv2d_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let geom = ConvGeom::same(8, 8, 1, 2, 8, 2);
    assert_eq!((geom.pad_top, geom.pad_left, geom.out_height), (3, 3, 4));
    let x = random(&mut rng, 1, geom.input_len());
    let w = random(&mut rng, 64, 2);
    let b = random(&mut rng, 1, 2);
    let mut t = Tape::new();
    let (xv, wv, bv) = (t.leaf(x.clone()), t.leaf(w.clone()), t.leaf(b.clone()));
    let y = t.conv2d(xv, wv, bv, geom);
    for oy in 0..4 {
        for ox in 0..4 {
            for co in 0..2 {
                let mut acc = b[[0, co]];
                for ky in 0..8 {
                    for kx in 0..8 {
                        let iy = (oy * 2 + ky) as isize - 3;
                        let ix = (ox * 2 + kx) as isize - 3;
                        if (0..8).contains(&iy) && (0..8).contains(&ix) {
                            acc += x[[0, (iy * 8 + ix) as usize]] * w[[ky * 8 + kx, co]];
                        }
                    }
                }
                let got = t.value(y)[[0, (oy * 4 + ox) * 2 + co]];
                assert!((got - acc).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn shared_leaf_accumulates() {
    let mut t = Tape::new();
    let x = t.leaf(Mat::from_elem((1, 1), 3.0));
    let y = t.mul(x, x);
    let z = t.add(y, x);
    let g = t.backward(z);
    assert_eq!(g.get(x).unwrap()[[0, 0]], 7.0);
}
