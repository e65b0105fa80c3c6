//! Grad-CAM attention maps. For a scalar target y and retained feature
//! maps A^k, the channel weights are the spatial means of dy/dA^k and the
//! mask is ReLU(sum_k alpha^k A^k), bilinearly upsampled to the input
//! resolution and max-normalized when nonzero.

use std::path::Path;

use serde::Serialize;
use tensorcore::nn::Binding;
use tensorcore::{Graph, Tensor};

use pegsim::{OBS_H, OBS_LEN, OBS_W};

use crate::daibrep::RewardModel;
use crate::iql::{IqlTrainer, ACTION_DIM};
use crate::LotjError;

#[derive(Clone, Debug, Serialize)]
pub struct SaliencyMap {
    pub target: String,
    pub layer_index: usize,
    /// The 32x32 input the map explains.
    pub input: Vec<f32>,
    /// Non-negative mask at input resolution, max-normalized when nonzero.
    pub mask: Vec<f32>,
}

/// Core Grad-CAM combination on raw buffers: values and gradients of one
/// conv activation of shape `[c, h, w]` (single image).
pub fn grad_cam_mask(a: &[f32], da: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    assert_eq!(a.len(), c * h * w);
    assert_eq!(da.len(), c * h * w);
    let hw = h * w;
    let mut mask = vec![0.0f32; hw];
    for ch in 0..c {
        let base = ch * hw;
        let alpha: f32 = da[base..base + hw].iter().sum::<f32>() / hw as f32;
        for p in 0..hw {
            mask[p] += alpha * a[base + p];
        }
    }
    for v in &mut mask {
        *v = v.max(0.0);
    }
    mask
}

/// Bilinear upsampling with half-pixel centre alignment.
pub fn bilinear_upsample(src: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; oh * ow];
    let sy = h as f32 / oh as f32;
    let sx = w as f32 / ow as f32;
    for y in 0..oh {
        let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, h as f32 - 1.0);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f32;
        for x in 0..ow {
            let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, w as f32 - 1.0);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f32;
            let a = src[y0 * w + x0] * (1.0 - tx) + src[y0 * w + x1] * tx;
            let b = src[y1 * w + x0] * (1.0 - tx) + src[y1 * w + x1] * tx;
            out[y * ow + x] = a * (1.0 - ty) + b * ty;
        }
    }
    out
}

pub fn max_normalize(mask: &mut [f32]) {
    let m = mask.iter().copied().fold(0.0f32, f32::max);
    if m > 0.0 {
        for v in mask.iter_mut() {
            *v /= m;
        }
    }
}

fn finish_map(
    target: String,
    layer_index: usize,
    input: &[f32],
    a: &[f32],
    da: &[f32],
    shape: &[usize],
) -> SaliencyMap {
    let (c, h, w) = (shape[1], shape[2], shape[3]);
    let mut mask = grad_cam_mask(a, da, c, h, w);
    let mut up = bilinear_upsample(&mask, h, w, OBS_H, OBS_W);
    max_normalize(&mut up);
    mask = up;
    SaliencyMap {
        target,
        layer_index,
        input: input.to_vec(),
        mask,
    }
}

/// Grad-CAM of the reward logit for one observation.
pub fn reward_grad_cam(
    model: &RewardModel,
    obs: &[f32],
    layer_index: usize,
) -> Result<SaliencyMap, LotjError> {
    let mut g = Graph::new();
    let mut bind = Binding::new(&model.store);
    // The input leaf tracks gradients so intermediate maps get them too.
    let x = g.param(Tensor::new(vec![1, OBS_LEN], obs.to_vec())?);
    let fwd = model.forward(&mut g, &mut bind, x, None)?;
    let maps = fwd.conv_maps;
    if layer_index >= maps.len() {
        return Err(LotjError::Config(format!(
            "layer {layer_index} has no retained feature maps"
        )));
    }
    let target = g.sum(fwd.logits);
    g.backward(target)?;
    let node = maps[layer_index];
    let a = g.value(node).data().to_vec();
    let da = g.grad_or_zeros(node);
    let shape = g.shape(node).to_vec();
    Ok(finish_map(
        "reward logit".into(),
        layer_index,
        obs,
        &a,
        &da,
        &shape,
    ))
}

/// Grad-CAM of one component of the policy's mean action (default: dy).
pub fn policy_grad_cam(
    trainer: &IqlTrainer,
    obs: &[f32],
    layer_index: usize,
    action_component: usize,
) -> Result<SaliencyMap, LotjError> {
    if action_component >= ACTION_DIM {
        return Err(LotjError::Config(format!(
            "action component {action_component} out of range"
        )));
    }
    let mut g = Graph::new();
    let mut bind = Binding::new(&trainer.policy_store);
    let x = g.param(Tensor::new(vec![1, OBS_LEN], obs.to_vec())?);
    let fwd = trainer
        .policy
        .forward(&mut g, &trainer.policy_store, &mut bind, x, None)?;
    let maps = fwd.conv_maps;
    if layer_index >= maps.len() {
        return Err(LotjError::Config(format!(
            "layer {layer_index} has no retained feature maps"
        )));
    }
    let comp = g.select_column(fwd.mean, action_component)?;
    let target = g.sum(comp);
    g.backward(target)?;
    let node = maps[layer_index];
    let a = g.value(node).data().to_vec();
    let da = g.grad_or_zeros(node);
    let shape = g.shape(node).to_vec();
    Ok(finish_map(
        format!("policy action[{action_component}]"),
        layer_index,
        obs,
        &a,
        &da,
        &shape,
    ))
}

/// Fraction of mask mass inside a box mask; in [0, 1].
pub fn in_box_mass(mask: &[f32], box_mask: &[f32]) -> f32 {
    let total: f32 = mask.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let inside: f32 = mask.iter().zip(box_mask).map(|(m, b)| m * b).sum();
    inside / total
}

/// Writes input, mask and overlay side by side as an 8-bit PNG.
pub fn save_png(map: &SaliencyMap, path: &Path) -> Result<(), LotjError> {
    let w = OBS_W as u32;
    let h = OBS_H as u32;
    let mut img = image::GrayImage::new(w * 3, h);
    let to_u8 = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            img.put_pixel(x, y, image::Luma([to_u8(map.input[i])]));
            img.put_pixel(x + w, y, image::Luma([to_u8(map.mask[i])]));
            let overlay = 0.5 * map.input[i] + 0.5 * map.mask[i];
            img.put_pixel(x + 2 * w, y, image::Luma([to_u8(overlay)]));
        }
    }
    img.save(path).map_err(|e| LotjError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ones_single_channel_gives_unit_mask() {
        // y = sum(A): dy/dA = 1 everywhere, alpha = 1, mask = A = ones.
        let a = vec![1.0f32; 16];
        let da = vec![1.0f32; 16];
        let mask = grad_cam_mask(&a, &da, 1, 4, 4);
        assert!(mask.iter().all(|&v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn zero_gradient_gives_zero_mask() {
        let a = vec![0.7f32; 32];
        let da = vec![0.0f32; 32];
        let mask = grad_cam_mask(&a, &da, 2, 4, 4);
        assert!(mask.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn negative_combination_is_rectified() {
        let a = vec![1.0f32; 4];
        let da = vec![-1.0f32; 4];
        let mask = grad_cam_mask(&a, &da, 1, 2, 2);
        assert!(mask.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn upsampling_preserves_argmax_location() {
        // A single hot cell at (2, 5) in an 8x8 grid maps to a 4x4 block
        // centred on the same cell in 32x32 coordinates.
        let mut src = vec![0.0f32; 64];
        src[2 * 8 + 5] = 1.0;
        let up = bilinear_upsample(&src, 8, 8, 32, 32);
        let (mut best, mut at) = (-1.0, 0);
        for (i, &v) in up.iter().enumerate() {
            if v > best {
                best = v;
                at = i;
            }
        }
        let (y, x) = (at / 32, at % 32);
        // Cell (2,5) spans rows 8..12 and cols 20..24; centre 10, 22.
        assert!((y as f32 - 10.0).abs() <= 2.0, "argmax row {y}");
        assert!((x as f32 - 22.0).abs() <= 2.0, "argmax col {x}");
    }

    #[test]
    fn in_box_mass_bounds() {
        let mask = vec![0.5f32; 16];
        let mut boxm = vec![0.0f32; 16];
        for i in 0..8 {
            boxm[i] = 1.0;
        }
        let m = in_box_mass(&mask, &boxm);
        assert!((m - 0.5).abs() < 1e-6);
        assert_eq!(in_box_mass(&vec![0.0; 16], &boxm), 0.0);
    }

    #[test]
    fn mask_invariant_to_positive_rescaling_of_target() {
        // Scaling y by c scales dA by c and the mask by c; max-normalization
        // cancels it.
        let a: Vec<f32> = (0..16).map(|i| (i as f32 * 0.37).sin().abs()).collect();
        let da: Vec<f32> = (0..16).map(|i| ((i * 7) % 5) as f32 - 1.0).collect();
        let mut m1 = grad_cam_mask(&a, &da, 1, 4, 4);
        let da_scaled: Vec<f32> = da.iter().map(|v| v * 3.5).collect();
        let mut m2 = grad_cam_mask(&a, &da_scaled, 1, 4, 4);
        max_normalize(&mut m1);
        max_normalize(&mut m2);
        for (x, y) in m1.iter().zip(&m2) {
            assert!((x - y).abs() < 1e-5);
        }
    }
}
