use nha_core::nn::{
    gaussian_reparam, gradcheck, mlp_forward, sample_straight_through, straight_through_sample,
    Activation, AdamState, Graph, Matrix, Mlp, MlpSpec, ParamStore, Unary, Var,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;
const H: f64 = 1e-5;

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(lo..hi, rows * cols)
        .prop_map(move |d| Matrix::from_vec(rows, cols, d).unwrap())
}

fn shaped(lo: f64, hi: f64) -> impl Strategy<Value = Matrix> {
    (1usize..4, 1usize..4).prop_flat_map(move |(r, c)| matrix(r, c, lo, hi))
}

/// Contracts a node with fixed pseudo-random weights so every entry of the
/// adjoint differs.
fn weighted_sum(g: &mut Graph, v: Var) -> Var {
    let (r, c) = g.value(v).shape();
    let w: Vec<f64> = (0..r * c)
        .map(|i| 0.3 + 0.7 * ((i * 7 + 3) % 11) as f64 / 11.0)
        .collect();
    let w = g.input(Matrix::from_vec(r, c, w).unwrap());
    let p = g.mul(v, w);
    g.sum(p)
}

fn assert_grad(
    inputs: &[Matrix],
    f: impl Fn(&mut Graph, &[Var]) -> Var,
) -> Result<(), TestCaseError> {
    let report = gradcheck(inputs, f, H);
    prop_assert!(
        report.max_rel_error < TOL,
        "relative error {}",
        report.max_rel_error
    );
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn smooth_unary_ops(x in shaped(-2.0, 2.0)) {
        for op in [Unary::Softplus, Unary::Tanh, Unary::Silu, Unary::Sigmoid, Unary::Exp, Unary::Square] {
            assert_grad(std::slice::from_ref(&x), |g, v| {
                let y = g.unary(v[0], op);
                weighted_sum(g, y)
            })?;
        }
    }

    #[test]
    fn kinked_unary_ops_away_from_zero(x in shaped(0.1, 2.0), flip in any::<bool>()) {
        let x = if flip { x.map(|v| -v) } else { x };
        for op in [Unary::Relu, Unary::Abs] {
            assert_grad(std::slice::from_ref(&x), |g, v| {
                let y = g.unary(v[0], op);
                weighted_sum(g, y)
            })?;
        }
    }

    #[test]
    fn positive_domain_ops(x in shaped(0.2, 3.0)) {
        for op in [Unary::Log, Unary::Sqrt] {
            assert_grad(std::slice::from_ref(&x), |g, v| {
                let y = g.unary(v[0], op);
                weighted_sum(g, y)
            })?;
        }
    }

    #[test]
    fn binary_ops(
        (a, b) in (1usize..4, 1usize..4).prop_flat_map(|(r, c)| (matrix(r, c, -2.0, 2.0), matrix(r, c, 0.5, 2.0)))
    ) {
        let inputs = [a, b];
        assert_grad(&inputs, |g, v| { let y = g.add(v[0], v[1]); weighted_sum(g, y) })?;
        assert_grad(&inputs, |g, v| { let y = g.sub(v[0], v[1]); weighted_sum(g, y) })?;
        assert_grad(&inputs, |g, v| { let y = g.mul(v[0], v[1]); weighted_sum(g, y) })?;
        assert_grad(&inputs, |g, v| { let y = g.div(v[0], v[1]); weighted_sum(g, y) })?;
        assert_grad(&inputs, |g, v| {
            let s = g.scale(v[0], -1.7);
            let y = g.add_scalar(s, 0.4);
            weighted_sum(g, y)
        })?;
    }

    #[test]
    fn matmul_and_broadcasts(
        (a, b, row, col) in (1usize..4, 1usize..4, 1usize..4).prop_flat_map(|(n, k, m)| (
            matrix(n, k, -2.0, 2.0),
            matrix(k, m, -2.0, 2.0),
            matrix(1, m, -2.0, 2.0),
            matrix(n, 1, -2.0, 2.0),
        ))
    ) {
        let n = a.rows;
        assert_grad(&[a, b, row.clone(), col], |g, v| {
            let p = g.matmul(v[0], v[1]);
            let q = g.add_row(p, v[2]);
            let r = g.mul_row(q, v[2]);
            let s = g.mul_col(r, v[3]);
            weighted_sum(g, s)
        })?;
        assert_grad(&[row], |g, v| {
            let b = g.broadcast_rows(v[0], n);
            let t = g.tanh(b);
            weighted_sum(g, t)
        })?;
    }

    #[test]
    fn reductions_and_reshapes(x in (1usize..4, 2usize..5).prop_flat_map(|(r, c)| matrix(r, c, -2.0, 2.0))) {
        let c = x.cols;
        assert_grad(std::slice::from_ref(&x), |g, v| { let y = g.softmax_rows(v[0]); weighted_sum(g, y) })?;
        assert_grad(std::slice::from_ref(&x), |g, v| { let y = g.cumsum_cols(v[0]); weighted_sum(g, y) })?;
        assert_grad(std::slice::from_ref(&x), |g, v| { let y = g.sum_cols(v[0]); weighted_sum(g, y) })?;
        assert_grad(std::slice::from_ref(&x), |g, v| { let y = g.sum_rows(v[0]); weighted_sum(g, y) })?;
        assert_grad(std::slice::from_ref(&x), |g, v| { let y = g.square(v[0]); g.mean(y) })?;
        assert_grad(std::slice::from_ref(&x), |g, v| {
            let left = g.slice_cols(v[0], 0, 1);
            let right = g.slice_cols(v[0], 1, c);
            let e = g.exp(right);
            let y = g.concat_cols(&[e, left, v[0]]);
            weighted_sum(g, y)
        })?;
        let idx: Vec<usize> = (0..x.rows).map(|r| (r * 3 + 1) % c).collect();
        assert_grad(&[x], |g, v| { let y = g.gather_cols(v[0], &idx); weighted_sum(g, y) })?;
    }
}

#[test]
fn two_layer_net_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for draw in 0..20 {
        let mut store = ParamStore::new();
        let spec = MlpSpec::new(&[3, 7, 2], Activation::Tanh);
        let mlp = Mlp::new(spec, &mut store, "f", &mut rng).unwrap();
        let x = Matrix::from_vec(
            4,
            3,
            (0..12)
                .map(|i| ((i * 37 + draw) % 17) as f64 / 8.0 - 1.0)
                .collect(),
        )
        .unwrap();
        let w = store.get(mlp.weights[0]).to_matrix();
        // perturb the first-layer weights and the input through the tape
        let report = gradcheck(
            &[x, w],
            |g, v| {
                let h = g.matmul(v[0], v[1]);
                let b0 = g.param(&store, mlp.biases[0]);
                let h = g.add_row(h, b0);
                let h = g.tanh(h);
                let w1 = g.param(&store, mlp.weights[1]);
                let b1 = g.param(&store, mlp.biases[1]);
                let o = g.matmul(h, w1);
                let o = g.add_row(o, b1);
                weighted_sum(g, o)
            },
            H,
        );
        assert!(
            report.max_rel_error < TOL,
            "draw {draw}: {}",
            report.max_rel_error
        );
    }
}

#[test]
fn parameter_gradients_reach_the_store() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let mlp = Mlp::new(
        MlpSpec::new(&[2, 5, 1], Activation::Softplus),
        &mut store,
        "f",
        &mut rng,
    )
    .unwrap();
    let x = Matrix::from_rows(&[[0.3, -0.2], [1.0, 0.5]]).unwrap();
    let loss_of = |store: &ParamStore| {
        let (mut g, y) = mlp_forward(&mlp, store, &x, false, None).unwrap();
        let l = g.sum(y);
        (g, l)
    };
    let (g, l) = loss_of(&store);
    let grads = g.backward(l);
    grads.accumulate(&g, &mut store);
    for id in mlp.param_ids() {
        for i in 0..store.get(id).values.len() {
            let mut plus = store.clone();
            plus.get_mut(id).values[i] += H;
            let mut minus = store.clone();
            minus.get_mut(id).values[i] -= H;
            let (gp, lp) = loss_of(&plus);
            let (gm, lm) = loss_of(&minus);
            let fd = (gp.value(lp).scalar() - gm.value(lm).scalar()) / (2.0 * H);
            let an = store.get(id).grad[i];
            assert!((an - fd).abs() / an.abs().max(fd.abs()).max(1e-4) < TOL);
        }
    }
}

#[test]
fn straight_through_gradient_is_identity() {
    let w = [2.5, -1.25];
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let p = g.input(Matrix::row_vector(&[0.3, 0.7]));
        let (z, picks) = sample_straight_through(&mut g, p, &mut rng).unwrap();
        let value = g.value(z);
        assert_eq!(value.data.iter().filter(|&&v| v == 1.0).count(), 1);
        assert_eq!(value.data.iter().filter(|&&v| v == 0.0).count(), 1);
        assert_eq!(value.get(0, picks[0]), 1.0);
        let wv = g.input(Matrix::row_vector(&w));
        let prod = g.mul(z, wv);
        let loss = g.sum(prod);
        let grads = g.backward(loss);
        assert_eq!(grads.get(p).unwrap().data, w.to_vec());
    }
}

#[test]
fn categorical_sampling_frequency() {
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    let n = 100_000;
    let hits = (0..n)
        .filter(|_| {
            straight_through_sample(&[0.3, 0.7], &mut rng)
                .unwrap()
                .index()
                == 1
        })
        .count();
    let freq = hits as f64 / n as f64;
    assert!((freq - 0.7).abs() < 0.005, "{freq}");
}

#[test]
fn reparam_moments_and_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mu, sigma) = (1.5, 0.4);
    let n = 100_000;
    let mut g = Graph::new();
    let m = g.input(Matrix::full(n, 1, mu));
    let s = g.input(Matrix::full(n, 1, sigma));
    let x = gaussian_reparam(&mut g, m, s, &mut rng).unwrap();
    let samples = g.value(x).data.clone();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se_mean = sigma / (n as f64).sqrt();
    let se_std = sigma / (2.0 * (n as f64 - 1.0)).sqrt();
    assert!((mean - mu).abs() < 3.0 * se_mean);
    assert!((var.sqrt() - sigma).abs() < 3.0 * se_std);

    let loss = g.sum(x);
    let grads = g.backward(loss);
    assert!(grads.get(m).unwrap().data.iter().all(|&v| v == 1.0));
    // d sample / d sigma is the noise draw itself
    for (gs, xv) in grads.get(s).unwrap().data.iter().zip(&samples) {
        assert!((gs - (xv - mu) / sigma).abs() < 1e-12);
    }

    let mut g = Graph::new();
    let m = g.input(Matrix::row_vector(&[0.25, -3.0]));
    let s = g.input(Matrix::row_vector(&[1e-12, 1e-12]));
    let x = gaussian_reparam(&mut g, m, s, &mut rng).unwrap();
    assert!((g.value(x).get(0, 0) - 0.25).abs() < 1e-10);
    assert!((g.value(x).get(0, 1) + 3.0).abs() < 1e-10);
}

#[test]
fn adam_minimizes_a_quadratic() {
    let mut store = ParamStore::new();
    let id = store.add("x", Matrix::full(1, 1, 0.0));
    let mut adam = AdamState::new(&store, vec![id], 0.1);
    for _ in 0..500 {
        let mut g = Graph::new();
        let x = g.param(&store, id);
        let d = g.add_scalar(x, -3.0);
        let sq = g.square(d);
        let loss = g.sum(sq);
        g.backward(loss).accumulate(&g, &mut store);
        adam.step(&mut store).unwrap();
    }
    assert!((store.get(id).values[0] - 3.0).abs() < 1e-2);
}

#[test]
fn seeded_dropout_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let spec = MlpSpec::new(&[4, 16, 16, 2], Activation::Relu).with_dropout(0.3);
        let mlp = Mlp::new(spec, &mut store, "e", &mut rng).unwrap();
        let x = Matrix::full(3, 4, 0.5);
        let (g, y) = mlp_forward(&mlp, &store, &x, true, Some(&mut rng)).unwrap();
        g.value(y).clone()
    };
    assert_eq!(run(), run());
}
