use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorcore::gradcheck;
use tensorcore::nn::Binding;
use tensorcore::{Adam, AdamConfig, Graph, Mlp, ParamStore, Tensor};

#[test]
fn backward_of_sum_of_squares() {
    // loss = sum(w . w), w = [3] -> dL/dw = 2w = [6]
    let mut g = Graph::new();
    let w = g.param(Tensor::from_vec(vec![3.0]));
    let sq = g.mul(w, w).unwrap();
    let loss = g.sum(sq);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(w).unwrap(), &[6.0]);
}

#[test]
fn constant_loss_has_zero_grads() {
    let mut g = Graph::new();
    let w = g.param(Tensor::from_vec(vec![1.0, 2.0]));
    let c = g.leaf(Tensor::scalar(5.0));
    let loss = g.sum(c);
    g.backward(loss).unwrap();
    // w is unreachable from the loss: zero gradient.
    assert_eq!(g.grad_or_zeros(w), vec![0.0, 0.0]);
    let _ = w;
}

#[test]
fn non_scalar_loss_rejected() {
    let mut g = Graph::new();
    let w = g.param(Tensor::from_vec(vec![1.0, 2.0]));
    assert!(g.backward(w).is_err());
}

#[test]
fn mlp_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, "mlp", &[6, 16, 1], &mut rng);

    let mut g = Graph::new();
    let mut bind = Binding::new(&store);
    let x = g.leaf(Tensor::randn(&[4, 6], 1.0, &mut rng));
    let h = mlp.forward(&mut g, &store, &mut bind, x).unwrap();
    let t = g.tanh(h);
    let sq = g.mul(t, t).unwrap();
    let loss = g.mean(sq);
    g.backward(loss).unwrap();

    for id in store.ids() {
        let leaf = bind.node(id).unwrap();
        let (errs, _kinks) = gradcheck::relative_errors(&g, loss, leaf, 1e-3);
        let worst = errs.iter().copied().fold(0.0f64, f64::max);
        assert!(
            worst < 1e-4,
            "param {} worst relative error {worst}",
            store.name(id)
        );
    }
}

#[test]
fn grad_reverse_identity_and_negation() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![1.5, -2.0]));
    let r = g.grad_reverse(x);
    // Forward is bitwise identity.
    assert_eq!(
        g.value(r).data().iter().map(|f| f.to_bits()).collect::<Vec<_>>(),
        g.value(x).data().iter().map(|f| f.to_bits()).collect::<Vec<_>>()
    );
    // Upstream gradient [1, 1] propagates as [-1, -1].
    let loss = g.sum(r);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[-1.0, -1.0]);
}

#[test]
fn double_grad_reverse_is_a_noop_for_gradients() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![2.0, -3.0]));
    let r1 = g.grad_reverse(x);
    let r2 = g.grad_reverse(r1);
    let sq = g.mul(r2, r2).unwrap();
    let loss = g.sum(sq);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[4.0, -6.0]);
}

#[test]
fn gaussian_reparam_cases() {
    // noise = 0 -> output = mu
    let mut g = Graph::new();
    let mu = g.param(Tensor::from_vec(vec![0.3, -0.7]));
    let ls = g.param(Tensor::from_vec(vec![0.5, 0.1]));
    let zero = g.leaf(Tensor::from_vec(vec![0.0, 0.0]));
    let z = g.gaussian_reparam(mu, ls, zero).unwrap();
    assert_eq!(g.value(z).data(), g.value(mu).data());

    // mu = 0, log_sigma = 0 -> output = noise
    let mut g = Graph::new();
    let mu = g.param(Tensor::from_vec(vec![0.0, 0.0]));
    let ls = g.param(Tensor::from_vec(vec![0.0, 0.0]));
    let noise = g.leaf(Tensor::from_vec(vec![1.25, -0.5]));
    let z = g.gaussian_reparam(mu, ls, noise).unwrap();
    assert_eq!(g.value(z).data(), &[1.25, -0.5]);

    // d output / d log_sigma at (0, 0, noise=2) = exp(0) * 2 = 2
    let mut g = Graph::new();
    let mu = g.param(Tensor::from_vec(vec![0.0]));
    let ls = g.param(Tensor::from_vec(vec![0.0]));
    let noise = g.leaf(Tensor::from_vec(vec![2.0]));
    let z = g.gaussian_reparam(mu, ls, noise).unwrap();
    let loss = g.sum(z);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(ls).unwrap(), &[2.0]);
    assert_eq!(g.grad(mu).unwrap(), &[1.0]);
    assert!(g.grad(noise).is_none());
}

#[test]
fn gaussian_reparam_shape_mismatch_rejected() {
    let mut g = Graph::new();
    let mu = g.param(Tensor::from_vec(vec![0.0, 0.0]));
    let ls = g.param(Tensor::from_vec(vec![0.0]));
    let noise = g.leaf(Tensor::from_vec(vec![0.0, 0.0]));
    assert!(g.gaussian_reparam(mu, ls, noise).is_err());
}

#[test]
fn kl_std_normal_closed_form_values() {
    // mu = 0, sigma = 1 -> 0
    let mut g = Graph::new();
    let mu = g.param(Tensor::from_vec(vec![0.0]));
    let ls = g.param(Tensor::from_vec(vec![0.0]));
    let kl = g.kl_std_normal(mu, ls).unwrap();
    assert_eq!(g.value(kl).item(), 0.0);

    // mu = [1], sigma = [1] -> 0.5
    let mut g = Graph::new();
    let mu = g.param(Tensor::from_vec(vec![1.0]));
    let ls = g.param(Tensor::from_vec(vec![0.0]));
    let kl = g.kl_std_normal(mu, ls).unwrap();
    assert!((g.value(kl).item() - 0.5).abs() < 1e-7);

    // mu = [0], sigma = [2] -> 0.5 * (4 - 1 - 2 ln 2)
    let mut g = Graph::new();
    let mu = g.param(Tensor::from_vec(vec![0.0]));
    let ls = g.param(Tensor::from_vec(vec![2.0f32.ln()]));
    let kl = g.kl_std_normal(mu, ls).unwrap();
    let expected = 0.5 * (4.0 - 1.0 - 2.0 * 2.0f64.ln());
    assert!((g.value(kl).item() as f64 - expected).abs() < 1e-6);
}

/// KL(N(mu, s^2) || N(0,1)) by Simpson quadrature on the defining integral.
fn kl_by_quadrature(mu: f64, sigma: f64) -> f64 {
    let lo = mu - 12.0 * sigma.max(1.0);
    let hi = mu + 12.0 * sigma.max(1.0);
    let n = 20_001; // odd grid for Simpson
    let hstep = (hi - lo) / (n - 1) as f64;
    let q = |z: f64| {
        (-(z - mu) * (z - mu) / (2.0 * sigma * sigma)).exp()
            / (sigma * (2.0 * std::f64::consts::PI).sqrt())
    };
    let p = |z: f64| (-z * z / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let f = |z: f64| {
        let qv = q(z);
        if qv <= 0.0 {
            0.0
        } else {
            qv * (qv / p(z)).ln()
        }
    };
    let mut acc = f(lo) + f(hi);
    for i in 1..n - 1 {
        let z = lo + i as f64 * hstep;
        acc += f(z) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * hstep / 3.0
}

#[test]
fn kl_matches_numerical_integration() {
    for &(mu, sigma) in &[(0.0, 2.0), (1.0, 1.0), (-0.5, 0.3), (2.0, 1.7)] {
        let closed = 0.5 * (mu * mu + sigma * sigma - 1.0 - 2.0 * (sigma as f64).ln());
        let numeric = kl_by_quadrature(mu, sigma);
        assert!(
            (closed - numeric).abs() < 1e-6,
            "mu={mu} sigma={sigma}: closed {closed} vs integral {numeric}"
        );

        let mut g = Graph::new();
        let m = g.param(Tensor::from_vec(vec![mu as f32]));
        let ls = g.param(Tensor::from_vec(vec![(sigma as f32).ln()]));
        let kl = g.kl_std_normal(m, ls).unwrap();
        assert!(
            (g.value(kl).item() as f64 - numeric).abs() < 1e-5,
            "op output vs integral at mu={mu} sigma={sigma}"
        );
    }
}

#[test]
fn relu_stack_on_zero_input_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let conv = tensorcore::Conv2d::new(&mut store, "c1", 1, 4, 3, 1, 1, &mut rng);
    let conv2 = tensorcore::Conv2d::new(&mut store, "c2", 4, 4, 3, 2, 1, &mut rng);
    // Zero bias so the stack is positively homogeneous.
    for id in store.ids() {
        if store.name(id).ends_with(".b") {
            for v in store.get_mut(id).data_mut() {
                *v = 0.0;
            }
        }
    }
    let mut g = Graph::new();
    let mut bind = Binding::new(&store);
    let x = g.leaf(Tensor::zeros(&[2, 1, 8, 8]));
    let h = conv.forward(&mut g, &store, &mut bind, x).unwrap();
    let h = g.relu(h);
    let h = conv2.forward(&mut g, &store, &mut bind, h).unwrap();
    let h = g.relu(h);
    assert!(g.value(h).data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut store = ParamStore::new();
    let conv = tensorcore::Conv2d::new(&mut store, "conv", 2, 3, 3, 2, 1, &mut rng);

    let mut g = Graph::new();
    let mut bind = Binding::new(&store);
    let x = g.param(Tensor::randn(&[2, 2, 6, 6], 1.0, &mut rng));
    let y = conv.forward(&mut g, &store, &mut bind, x).unwrap();
    let sq = g.mul(y, y).unwrap();
    let loss = g.mean(sq);
    g.backward(loss).unwrap();

    let mut leaves = vec![x];
    leaves.extend(store.ids().map(|id| bind.node(id).unwrap()));
    for leaf in leaves {
        let (errs, _) = gradcheck::relative_errors(&g, loss, leaf, 1e-3);
        let worst = errs.iter().copied().fold(0.0f64, f64::max);
        assert!(worst < 1e-4, "conv grad check worst {worst}");
    }
}

#[test]
fn expectile_loss_values() {
    let cases = [
        (2.0f32, 0.5f32, 2.0f32),  // 0.5 * 4
        (2.0, 0.75, 3.0),          // 0.75 * 4, dyadic tau so exact
        (-2.0, 0.75, 1.0),         // 0.25 * 4
    ];
    for (u, tau, expected) in cases {
        let mut g = Graph::new();
        let un = g.param(Tensor::from_vec(vec![u]));
        let l = g.expectile_sq(un, tau).unwrap();
        assert_eq!(g.value(l).data()[0], expected, "u={u} tau={tau}");
    }
}

#[test]
fn training_is_bitwise_deterministic() {
    let run = || -> Vec<u32> {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "net", &[4, 8, 1], &mut rng);
        let mut adam = Adam::new(&store, AdamConfig::default());
        for step in 0..50 {
            let mut batch_rng = ChaCha8Rng::seed_from_u64(1000 + step);
            let x = Tensor::randn(&[8, 4], 1.0, &mut batch_rng);
            let t = Tensor::randn(&[8, 1], 1.0, &mut batch_rng);
            let mut g = Graph::new();
            let mut bind = Binding::new(&store);
            let xn = g.leaf(x);
            let tn = g.leaf(t);
            let y = mlp.forward(&mut g, &store, &mut bind, xn).unwrap();
            let d = g.sub(y, tn).unwrap();
            let sq = g.mul(d, d).unwrap();
            let loss = g.mean(sq);
            g.backward(loss).unwrap();
            let grads = bind.grads(&g);
            adam.step(&mut store, &grads);
        }
        store
            .entries()
            .flat_map(|(_, t)| t.data().iter().map(|f| f.to_bits()))
            .collect()
    };
    assert_eq!(run(), run());
}

#[test]
fn softmax_xent_uniform_logits() {
    let n_d = 12;
    let mut g = Graph::new();
    let logits = g.param(Tensor::zeros(&[1, n_d]));
    let l = g.softmax_xent(logits, &[7]).unwrap();
    assert!((g.value(l).data()[0] - (n_d as f32).ln()).abs() < 1e-6);
}

#[test]
fn bce_prob_values() {
    // p = 0.5 -> ln 2 for either label
    let mut g = Graph::new();
    let p = g.param(Tensor::from_vec(vec![0.5, 0.5]));
    let t = g.leaf(Tensor::from_vec(vec![0.0, 1.0]));
    let l = g.bce_prob(p, t).unwrap();
    for &v in g.value(l).data() {
        assert!((v - std::f32::consts::LN_2).abs() < 1e-6);
    }
    // p = 0.9, r = 0 -> -ln 0.1
    let mut g = Graph::new();
    let p = g.param(Tensor::from_vec(vec![0.9]));
    let t = g.leaf(Tensor::from_vec(vec![0.0]));
    let l = g.bce_prob(p, t).unwrap();
    assert!((g.value(l).data()[0] - 2.3026).abs() < 1e-3);
    // p -> r means loss -> 0
    let mut g = Graph::new();
    let p = g.param(Tensor::from_vec(vec![0.999999]));
    let t = g.leaf(Tensor::from_vec(vec![1.0]));
    let l = g.bce_prob(p, t).unwrap();
    assert!(g.value(l).data()[0] < 1e-4);
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        // kl >= 0 with equality only at the standard normal
        #[test]
        fn kl_nonnegative(mu in -3.0f32..3.0, ls in -2.0f32..2.0) {
            let mut g = Graph::new();
            let m = g.param(Tensor::from_vec(vec![mu]));
            let l = g.param(Tensor::from_vec(vec![ls]));
            let kl = g.kl_std_normal(m, l).unwrap();
            let v = g.value(kl).item();
            prop_assert!(v >= -1e-6);
            if mu.abs() > 0.05 || ls.abs() > 0.05 {
                prop_assert!(v > 0.0);
            }
        }

        // L(u, tau) == L(-u, 1 - tau) for dyadic tau (exact in f32)
        #[test]
        fn expectile_reflection(u in -10.0f32..10.0, k in 1u32..16) {
            let tau = k as f32 / 16.0;
            let mut g = Graph::new();
            let a = g.param(Tensor::from_vec(vec![u]));
            let la = g.expectile_sq(a, tau).unwrap();
            let mut g2 = Graph::new();
            let b = g2.param(Tensor::from_vec(vec![-u]));
            let lb = g2.expectile_sq(b, 1.0 - tau).unwrap();
            prop_assert_eq!(g.value(la).data()[0], g2.value(lb).data()[0]);
        }

        // tau = 0.5 halves the square exactly
        #[test]
        fn expectile_symmetric_case(u in -10.0f32..10.0) {
            let mut g = Graph::new();
            let a = g.param(Tensor::from_vec(vec![u]));
            let l = g.expectile_sq(a, 0.5).unwrap();
            prop_assert_eq!(g.value(l).data()[0], 0.5 * u * u);
        }

        // grad_reverse forward is bitwise identity on arbitrary floats
        #[test]
        fn grad_reverse_forward_bitwise(bits in proptest::collection::vec(any::<u32>(), 1..8)) {
            let vals: Vec<f32> = bits.iter().map(|&b| f32::from_bits(b)).collect();
            let mut g = Graph::new();
            let x = g.leaf(Tensor::from_vec(vals.clone()));
            let r = g.grad_reverse(x);
            let out: Vec<u32> = g.value(r).data().iter().map(|f| f.to_bits()).collect();
            prop_assert_eq!(out, bits);
        }
    }
}
