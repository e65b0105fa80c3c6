use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tensorcore::nn::Binding;
use tensorcore::{Adam, AdamConfig, Graph, Linear, ParamStore, Tensor};

#[test]
fn bench_backbone_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let c1 = tensorcore::Conv2d::new(&mut store, "c1", 1, 16, 3, 2, 1, &mut rng);
    let c2 = tensorcore::Conv2d::new(&mut store, "c2", 16, 32, 3, 2, 1, &mut rng);
    let c3 = tensorcore::Conv2d::new(&mut store, "c3", 32, 32, 3, 1, 1, &mut rng);
    let fc = Linear::new(&mut store, "fc", 2048, 128, &mut rng);
    let head = Linear::new(&mut store, "head", 128, 1, &mut rng);
    let mut adam = Adam::new(&store, AdamConfig::default());

    let batch = Tensor::randn(&[64, 1, 32, 32], 1.0, &mut rng);
    let targets = Tensor::randn(&[64, 1], 0.5, &mut rng);

    let t0 = std::time::Instant::now();
    let iters = 30;
    for _ in 0..iters {
        let mut g = Graph::new();
        let mut bind = Binding::new(&store);
        let x = g.leaf(batch.clone());
        let h = c1.forward(&mut g, &store, &mut bind, x).unwrap();
        let h = g.relu(h);
        let h = c2.forward(&mut g, &store, &mut bind, h).unwrap();
        let h = g.relu(h);
        let h = c3.forward(&mut g, &store, &mut bind, h).unwrap();
        let h = g.relu(h);
        let h = g.reshape_rows(h, 64).unwrap();
        let h = fc.forward(&mut g, &store, &mut bind, h).unwrap();
        let h = g.relu(h);
        let y = head.forward(&mut g, &store, &mut bind, h).unwrap();
        let t = g.leaf(targets.clone());
        let d = g.sub(y, t).unwrap();
        let sq = g.mul(d, d).unwrap();
        let loss = g.mean(sq);
        g.backward(loss).unwrap();
        let grads = bind.grads(&g);
        adam.step(&mut store, &grads);
    }
    let dt = t0.elapsed().as_secs_f64() / iters as f64;
    // ~150 MF fwd + ~300 MF bwd
    println!("per step: {:.1} ms  (~{:.1} GF/s)", dt * 1e3, 0.45 / dt);

    // forward only
    let t0 = std::time::Instant::now();
    for _ in 0..iters {
        let mut g = Graph::new();
        let mut bind = Binding::new(&store);
        let x = g.leaf(batch.clone());
        let h = c1.forward(&mut g, &store, &mut bind, x).unwrap();
        let h = g.relu(h);
        let h = c2.forward(&mut g, &store, &mut bind, h).unwrap();
        let h = g.relu(h);
        let h = c3.forward(&mut g, &store, &mut bind, h).unwrap();
        let h = g.relu(h);
        let h = g.reshape_rows(h, 64).unwrap();
        let h = fc.forward(&mut g, &store, &mut bind, h).unwrap();
        let _ = head.forward(&mut g, &store, &mut bind, h).unwrap();
    }
    let dt = t0.elapsed().as_secs_f64() / iters as f64;
    println!("forward only: {:.1} ms (~{:.1} GF/s)", dt * 1e3, 0.152 / dt);
}
