//! Finite-difference verification of every registered op, plus determinism
//! and checkpoint round-trip checks.

use batchforge_autodiff::{
    grad_check, load_checkpoint, save_checkpoint, AdError, Graph, ParamStore, Tensor, VarId,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Run `f` through grad_check at 20 random points and return the worst error.
fn check20<F>(seed: u64, shapes: &[Vec<usize>], lo: f64, hi: f64, f: F) -> f64
where
    F: Fn(&mut Graph, &[VarId]) -> batchforge_autodiff::Result<VarId> + Copy,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let inputs: Vec<Tensor> = shapes
            .iter()
            .map(|s| rand_tensor(&mut rng, s, lo, hi))
            .collect();
        worst = worst.max(grad_check(f, &inputs, 1e-4).unwrap());
    }
    worst
}

#[test]
fn matmul_passes_grad_check() {
    let err = check20(
        1,
        &[vec![3, 4], vec![4, 2]],
        -1.0,
        1.0,
        |g: &mut Graph, ids: &[VarId]| {
            let m = g.matmul(ids[0], ids[1])?;
            g.sum(m)
        },
    );
    assert!(err < 1e-4, "err = {err}");
}

#[test]
fn elementwise_ops_pass_grad_check() {
    let err = check20(2, &[vec![2, 3], vec![2, 3]], -1.0, 1.0, |g, ids| {
        let s = g.add(ids[0], ids[1])?;
        let d = g.sub(s, ids[1])?;
        let m = g.mul(d, ids[0])?;
        let sc = g.scale(m, 1.7)?;
        let sq = g.square(sc)?;
        g.mean(sq)
    });
    assert!(err < 1e-4, "err = {err}");
}

#[test]
fn activations_pass_grad_check() {
    // Inputs bounded away from the ReLU kink.
    let err = check20(3, &[vec![6]], 0.1, 1.5, |g, ids| {
        let r = g.relu(ids[0])?;
        let s = g.sigmoid(r)?;
        let t = g.tanh(s)?;
        g.sum(t)
    });
    assert!(err < 1e-4, "err = {err}");
}

#[test]
fn softmax_passes_grad_check() {
    let err = check20(4, &[vec![2, 5]], -2.0, 2.0, |g, ids| {
        let s = g.softmax(ids[0])?;
        let sq = g.square(s)?;
        g.sum(sq)
    });
    assert!(err < 1e-4, "err = {err}");
}

#[test]
fn masked_softmax_passes_grad_check() {
    let mask = [true, false, true, true, false];
    let err = check20(5, &[vec![5]], -2.0, 2.0, move |g, ids| {
        let s = g.masked_softmax(ids[0], &mask)?;
        let sq = g.square(s)?;
        g.sum(sq)
    });
    assert!(err < 1e-4, "err = {err}");
}

#[test]
fn structural_ops_pass_grad_check() {
    let err = check20(6, &[vec![4], vec![4]], -1.0, 1.0, |g, ids| {
        let cat = g.concat(&[ids[0], ids[1]], 0)?;
        let sl = g.slice(cat, 2, 4)?;
        let st = g.stack_rows(&[sl, ids[1]])?;
        let tr = g.transpose(st)?;
        let ga = g.gather_rows(tr, &[0, 3, 3])?;
        let rs = g.reshape(ga, &[6])?;
        let sq = g.square(rs)?;
        g.sum(sq)
    });
    assert!(err < 1e-4, "err = {err}");
}

#[test]
fn concat_axis1_and_add_row_pass_grad_check() {
    let err = check20(7, &[vec![3, 2], vec![3, 2], vec![4]], -1.0, 1.0, |g, ids| {
        let cat = g.concat(&[ids[0], ids[1]], 1)?;
        let b = g.add_row(cat, ids[2])?;
        let sq = g.square(b)?;
        g.sum(sq)
    });
    assert!(err < 1e-4, "err = {err}");
}

#[test]
fn reductions_pass_grad_check() {
    let err = check20(8, &[vec![3, 4]], -1.0, 1.0, |g, ids| {
        let c0 = g.sum_axis(ids[0], 0)?;
        let c1 = g.sum_axis(ids[0], 1)?;
        let s0 = g.square(c0)?;
        let s1 = g.square(c1)?;
        let a = g.sum(s0)?;
        let b = g.sum(s1)?;
        g.add(a, b)
    });
    assert!(err < 1e-4, "err = {err}");
}

#[test]
fn ln_clamped_passes_grad_check_above_floor() {
    let err = check20(9, &[vec![5]], 0.2, 2.0, |g, ids| {
        let l = g.ln_clamped(ids[0], 1e-12)?;
        g.sum(l)
    });
    assert!(err < 1e-4, "err = {err}");
}

#[test]
fn pairwise_sqdist_and_div_rows_pass_grad_check() {
    let err = check20(10, &[vec![4, 3], vec![2, 3], vec![2]], 0.5, 1.5, |g, ids| {
        let d = g.pairwise_sqdist(ids[0], ids[1])?;
        let t = g.transpose(d)?;
        let div = g.div_rows(t, ids[2])?;
        let sq = g.square(div)?;
        g.mean(sq)
    });
    assert!(err < 1e-4, "err = {err}");
}

#[test]
fn composite_relu_of_linear_matches_finite_differences() {
    // f(x) = sum(relu(W.x)) at random points, step 1e-4.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let w = rand_tensor(&mut rng, &[4, 3], 0.2, 1.0);
        let x = rand_tensor(&mut rng, &[3], 0.2, 1.0);
        let err = grad_check(
            |g, ids| {
                let wx = g.matmul(ids[0], ids[1])?;
                let r = g.relu(wx)?;
                g.sum(r)
            },
            &[w, x],
            1e-4,
        )
        .unwrap();
        worst = worst.max(err);
    }
    assert!(worst < 1e-4, "worst = {worst}");
}

#[test]
fn backward_is_bitwise_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let a = rand_tensor(&mut rng, &[5, 5], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[5, 5], -1.0, 1.0);
    let run = || {
        let mut g = Graph::new();
        let x = g.input(a.clone()).unwrap();
        let y = g.input(b.clone()).unwrap();
        let m = g.matmul(x, y).unwrap();
        let s = g.softmax(m).unwrap();
        let sq = g.square(s).unwrap();
        let loss = g.sum(sq).unwrap();
        g.backward(loss).unwrap();
        (g.grad(x), g.grad(y))
    };
    let (g1a, g1b) = run();
    let (g2a, g2b) = run();
    assert_eq!(g1a.data(), g2a.data());
    assert_eq!(g1b.data(), g2b.data());
}

#[test]
fn param_store_roundtrips_through_checkpoint_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut store = ParamStore::new();
    store
        .register("layer.w", rand_tensor(&mut rng, &[3, 7], -1.0, 1.0))
        .unwrap();
    store
        .register("layer.b", rand_tensor(&mut rng, &[7], -1.0, 1.0))
        .unwrap();
    store.get_mut("layer.w").unwrap().adam_m = rand_tensor(&mut rng, &[3, 7], -1.0, 1.0);
    store.get_mut("layer.w").unwrap().adam_v = rand_tensor(&mut rng, &[3, 7], 0.0, 1.0);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    save_checkpoint(&store, "{\"epoch\":3}", &path).unwrap();
    let (loaded, meta) = load_checkpoint(&path).unwrap();

    assert_eq!(meta, "{\"epoch\":3}");
    assert_eq!(loaded.len(), store.len());
    for (name, p) in store.iter() {
        let q = loaded.get(name).unwrap();
        assert_eq!(p.value.data(), q.value.data());
        assert_eq!(p.adam_m.data(), q.adam_m.data());
        assert_eq!(p.adam_v.data(), q.adam_v.data());
    }
}

#[test]
fn truncated_checkpoint_is_a_format_error() {
    let mut store = ParamStore::new();
    store.register("w", Tensor::zeros(&[4, 4])).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    save_checkpoint(&store, "", &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    let err = load_checkpoint(&path).unwrap_err();
    assert!(matches!(err, AdError::Format(_)), "{err}");
}

#[test]
fn future_checkpoint_version_is_rejected() {
    let mut store = ParamStore::new();
    store.register("w", Tensor::zeros(&[2])).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    save_checkpoint(&store, "", &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
    std::fs::write(&path, &bytes).unwrap();
    let err = load_checkpoint(&path).unwrap_err();
    assert!(matches!(err, AdError::Version { found: 99, .. }), "{err}");
}

#[test]
fn frozen_params_pass_gradients_through_but_accumulate_none() {
    let mut store = ParamStore::new();
    store
        .register("w", Tensor::from_vec(&[1], vec![2.0]).unwrap())
        .unwrap();
    store
        .register("frozen", Tensor::from_vec(&[1], vec![3.0]).unwrap())
        .unwrap();

    let mut g = Graph::new();
    let w = g.param(&store, "w").unwrap();
    let f = g.param_frozen(&store, "frozen").unwrap();
    let prod = g.mul(w, f).unwrap(); // loss = w * frozen
    let loss = g.sum(prod).unwrap();
    g.backward(loss).unwrap();
    g.apply_grads(&mut store);

    // d(loss)/dw = frozen = 3; frozen itself accumulates nothing.
    assert_eq!(store.get("w").unwrap().grad.data(), &[3.0]);
    assert_eq!(store.get("frozen").unwrap().grad.data(), &[0.0]);
}
