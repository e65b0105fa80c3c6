//! Named parameter storage and the layer structs the networks are built
//! from. A `ParamStore` owns tensors between steps; each forward pass binds
//! the parameters it uses into the graph as leaves and reads gradients back
//! out by parameter id after `backward`.

use std::collections::HashMap;

use rand::Rng;

use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;
use crate::TensorError;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Default, Clone)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    frozen: Vec<bool>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.tensors.len());
        self.names.push(name);
        self.tensors.push(tensor);
        self.frozen.push(false);
        id
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn total_elems(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.frozen[id.0]
    }

    /// Freeze every parameter whose name matches the predicate. Frozen
    /// parameters are skipped by the optimizer.
    pub fn freeze_where(&mut self, pred: impl Fn(&str) -> bool) {
        for i in 0..self.names.len() {
            if pred(&self.names[i]) {
                self.frozen[i] = true;
            }
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter())
    }

    /// Replace tensor contents from (name, tensor) pairs. Every parameter in
    /// the store must be present with a matching shape.
    pub fn load_entries(&mut self, entries: &[(String, Tensor)]) -> Result<(), TensorError> {
        let by_name: HashMap<&str, &Tensor> =
            entries.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for i in 0..self.names.len() {
            let t = by_name.get(self.names[i].as_str()).ok_or_else(|| {
                TensorError::InvalidArgument(format!("checkpoint missing parameter {}", self.names[i]))
            })?;
            if t.shape() != self.tensors[i].shape() {
                return Err(TensorError::ShapeMismatch(format!(
                    "parameter {}: stored {:?}, expected {:?}",
                    self.names[i],
                    t.shape(),
                    self.tensors[i].shape()
                )));
            }
            self.tensors[i] = (*t).clone();
        }
        Ok(())
    }
}

/// Per-step binding of parameters into a graph. Gradients are read back by
/// parameter id once the backward pass ran.
pub struct Binding {
    bound: Vec<Option<NodeId>>,
}

impl Binding {
    pub fn new(store: &ParamStore) -> Self {
        Self {
            bound: vec![None; store.len()],
        }
    }

    pub fn bind(&mut self, g: &mut Graph, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(n) = self.bound[id.index()] {
            return n;
        }
        // Frozen parameters enter as data leaves, so backward skips their
        // whole upstream subgraph.
        let n = if store.is_frozen(id) {
            g.leaf(store.get(id).clone())
        } else {
            g.param(store.get(id).clone())
        };
        self.bound[id.index()] = Some(n);
        n
    }

    pub fn node(&self, id: ParamId) -> Option<NodeId> {
        self.bound[id.index()]
    }

    /// Gradients for every bound parameter; unbound entries are `None`.
    pub fn grads(&self, g: &Graph) -> Vec<Option<Vec<f32>>> {
        self.bound
            .iter()
            .map(|n| n.map(|n| g.grad_or_zeros(n)))
            .collect()
    }
}

fn he_std(fan_in: usize) -> f32 {
    (2.0 / fan_in as f32).sqrt()
}

#[derive(Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add(
            format!("{prefix}.w"),
            Tensor::randn(&[in_dim, out_dim], he_std(in_dim), rng),
        );
        let b = store.add(format!("{prefix}.b"), Tensor::zeros(&[out_dim]));
        Self { w, b, in_dim, out_dim }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        bind: &mut Binding,
        x: NodeId,
    ) -> Result<NodeId, TensorError> {
        let w = bind.bind(g, store, self.w);
        let b = bind.bind(g, store, self.b);
        let y = g.matmul(x, w)?;
        g.add_row_bias(y, b)
    }
}

#[derive(Clone, Copy)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let w = store.add(
            format!("{prefix}.w"),
            Tensor::randn(&[out_ch, in_ch, kernel, kernel], he_std(fan_in), rng),
        );
        let b = store.add(format!("{prefix}.b"), Tensor::zeros(&[out_ch]));
        Self { w, b, stride, pad }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        bind: &mut Binding,
        x: NodeId,
    ) -> Result<NodeId, TensorError> {
        let w = bind.bind(g, store, self.w);
        let b = bind.bind(g, store, self.b);
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

/// Plain ReLU MLP; the last layer is linear with no activation.
#[derive(Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        dims: &[usize],
        rng: &mut R,
    ) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least input and output dims");
        let layers = (0..dims.len() - 1)
            .map(|i| Linear::new(store, &format!("{prefix}.l{i}"), dims[i], dims[i + 1], rng))
            .collect();
        Self { layers }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        bind: &mut Binding,
        x: NodeId,
    ) -> Result<NodeId, TensorError> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, store, bind, h)?;
            if i + 1 < self.layers.len() {
                h = g.relu(h);
            }
        }
        Ok(h)
    }
}
