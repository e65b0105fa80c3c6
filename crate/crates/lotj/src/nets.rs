//! Network building blocks shared by the reward model, policy and critics:
//! the small conv backbone (a downscaled stand-in for a per-network ResNet
//! encoder) and a vector encoder for state-based training.

use rand::Rng;
use tensorcore::nn::Binding;
use tensorcore::{Conv2d, Graph, Linear, Mlp, NodeId, ParamStore, TensorError};

use pegsim::{OBS_H, OBS_LEN, OBS_W};

pub const FEATURE_DIM: usize = 128;
/// Width of the domain-invariant branch.
pub const ZI_DIM: usize = 32;
/// Width of the bottlenecked domain-specific branch.
pub const ZS_DIM: usize = 8;

/// conv(16,3x3,s2) - ReLU - conv(32,3x3,s2) - ReLU - conv(32,3x3,s1) - ReLU
/// - flatten - linear(128). Post-ReLU feature maps are retained per layer
/// for saliency.
pub struct ConvBackbone {
    c1: Conv2d,
    c2: Conv2d,
    c3: Conv2d,
    fc: Linear,
}

pub struct BackboneOut {
    /// `[n, 128]` raw features (no trailing activation).
    pub features: NodeId,
    /// Post-ReLU conv activations by layer index (0..3).
    pub conv_maps: Vec<NodeId>,
}

impl ConvBackbone {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, rng: &mut R) -> Self {
        let c1 = Conv2d::new(store, &format!("{prefix}.conv1"), 1, 16, 3, 2, 1, rng);
        let c2 = Conv2d::new(store, &format!("{prefix}.conv2"), 16, 32, 3, 2, 1, rng);
        let c3 = Conv2d::new(store, &format!("{prefix}.conv3"), 32, 32, 3, 1, 1, rng);
        let fc = Linear::new(store, &format!("{prefix}.fc"), 8 * 8 * 32, FEATURE_DIM, rng);
        Self { c1, c2, c3, fc }
    }

    /// `x` is `[n, OBS_LEN]` flat images.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        bind: &mut Binding,
        x: NodeId,
    ) -> Result<BackboneOut, TensorError> {
        let n = g.shape(x)[0];
        let img = g.reshape(x, &[n, 1, OBS_H, OBS_W])?;
        let h = self.c1.forward(g, store, bind, img)?;
        let a1 = g.relu(h);
        let h = self.c2.forward(g, store, bind, a1)?;
        let a2 = g.relu(h);
        let h = self.c3.forward(g, store, bind, a2)?;
        let a3 = g.relu(h);
        let flat = g.reshape_rows(a3, n)?;
        let features = self.fc.forward(g, store, bind, flat)?;
        Ok(BackboneOut {
            features,
            conv_maps: vec![a1, a2, a3],
        })
    }
}

/// Marks every parameter of the conv layers (not the flatten projection)
/// as frozen; used when entering the online phase.
pub fn freeze_conv_layers(store: &mut ParamStore) {
    store.freeze_where(|name| name.contains(".conv"));
}

/// Observation encoders: images through the conv backbone, privileged
/// state vectors through a small MLP.
pub enum Encoder {
    Conv(ConvBackbone),
    Vector(Mlp),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObsKind {
    Image,
    Vector(usize),
}

impl ObsKind {
    pub fn len(&self) -> usize {
        match self {
            ObsKind::Image => OBS_LEN,
            ObsKind::Vector(d) => *d,
        }
    }
}

impl Encoder {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, kind: ObsKind, rng: &mut R) -> Self {
        match kind {
            ObsKind::Image => Encoder::Conv(ConvBackbone::new(store, prefix, rng)),
            ObsKind::Vector(d) => Encoder::Vector(Mlp::new(
                store,
                prefix,
                &[d, FEATURE_DIM, FEATURE_DIM],
                rng,
            )),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        bind: &mut Binding,
        x: NodeId,
    ) -> Result<BackboneOut, TensorError> {
        match self {
            Encoder::Conv(b) => b.forward(g, store, bind, x),
            Encoder::Vector(mlp) => {
                let features = mlp.forward(g, store, bind, x)?;
                Ok(BackboneOut {
                    features,
                    conv_maps: Vec::new(),
                })
            }
        }
    }
}
