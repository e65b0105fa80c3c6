use crate::nn::ParamStore;

/// Rescales a gradient set so its global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Option<Vec<f32>>], max_norm: f32) -> f32 {
    let mut sq = 0.0f64;
    for g in grads.iter().flatten() {
        for v in g {
            sq += (*v as f64) * (*v as f64);
        }
    }
    let norm = sq.sqrt() as f32;
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

/// Adam hyperparameters. The defaults apply when a config does not override
/// them.
#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam state for one parameter store: first/second moment buffers shaped
/// like their parameters plus a shared step counter.
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let m = store.ids().map(|id| vec![0.0; store.get(id).numel()]).collect();
        let v = store.ids().map(|id| vec![0.0; store.get(id).numel()]).collect();
        Self {
            config,
            step: 0,
            m,
            v,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. `grads` is indexed by parameter id; `None` entries and
    /// frozen parameters are left untouched (moments included). With
    /// `lr == 0` this is a no-op, leaving parameters bitwise unchanged.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Vec<f32>>]) {
        assert_eq!(grads.len(), store.len(), "grad slot count mismatch");
        if self.config.lr == 0.0 {
            return;
        }
        self.step += 1;
        let b1 = self.config.beta1;
        let b2 = self.config.beta2;
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        for id in store.ids() {
            let i = id.index();
            let Some(g) = grads[i].as_ref() else { continue };
            if store.is_frozen(id) {
                continue;
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let p = store.get_mut(id).data_mut();
            debug_assert_eq!(g.len(), p.len());
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                p[k] -= self.config.lr * mhat / (vhat.sqrt() + self.config.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn zero_lr_is_bitwise_noop() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(vec![1.5, -0.0, 3.25]));
        let before: Vec<u32> = store.get(id).data().iter().map(|f| f.to_bits()).collect();
        let mut adam = Adam::new(
            &store,
            AdamConfig {
                lr: 0.0,
                ..Default::default()
            },
        );
        adam.step(&mut store, &[Some(vec![1.0, 2.0, -3.0])]);
        let after: Vec<u32> = store.get(id).data().iter().map(|f| f.to_bits()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn descends_a_quadratic() {
        // min (w-3)^2, gradient 2(w-3)
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(vec![0.0]));
        let mut adam = Adam::new(
            &store,
            AdamConfig {
                lr: 0.1,
                ..Default::default()
            },
        );
        for _ in 0..500 {
            let w = store.get(id).data()[0];
            adam.step(&mut store, &[Some(vec![2.0 * (w - 3.0)])]);
        }
        assert!((store.get(id).data()[0] - 3.0).abs() < 1e-2);
    }

    #[test]
    fn frozen_params_do_not_move() {
        let mut store = ParamStore::new();
        store.add("conv.w", Tensor::from_vec(vec![1.0]));
        let free = store.add("head.w", Tensor::from_vec(vec![1.0]));
        store.freeze_where(|n| n.starts_with("conv"));
        let mut adam = Adam::new(&store, AdamConfig::default());
        adam.step(
            &mut store,
            &[Some(vec![10.0]), Some(vec![10.0])],
        );
        let frozen_id = store.ids().next().unwrap();
        assert_eq!(store.get(frozen_id).data()[0], 1.0);
        assert_ne!(store.get(free).data()[0], 1.0);
    }
}
