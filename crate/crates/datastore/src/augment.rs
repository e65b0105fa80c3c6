//! Image augmentation for offline replay: integer pixel shifts with
//! edge-replicate padding plus a small brightness jitter. The same draw is
//! applied to both frames of a transition so TD pairs stay aligned.

use pegsim::{OBS_H, OBS_W};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const MAX_SHIFT: i32 = 2;
pub const BRIGHTNESS_JITTER: f32 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentDraw {
    pub shift_x: i32,
    pub shift_y: i32,
    pub brightness: f32,
}

impl AugmentDraw {
    pub fn identity() -> Self {
        Self {
            shift_x: 0,
            shift_y: 0,
            brightness: 0.0,
        }
    }

    pub fn sample(rng: &mut ChaCha8Rng) -> Self {
        Self {
            shift_x: rng.gen_range(-MAX_SHIFT..=MAX_SHIFT),
            shift_y: rng.gen_range(-MAX_SHIFT..=MAX_SHIFT),
            brightness: rng.gen_range(-BRIGHTNESS_JITTER..=BRIGHTNESS_JITTER),
        }
    }
}

/// Applies a fixed draw to a single 32x32 image.
pub fn augment_with(image: &[f32], draw: AugmentDraw) -> Vec<f32> {
    assert_eq!(image.len(), OBS_H * OBS_W, "augment expects a 32x32 image");
    let mut out = vec![0.0f32; image.len()];
    for y in 0..OBS_H as i32 {
        for x in 0..OBS_W as i32 {
            // Edge-replicate: out(y, x) reads from the clamped source.
            let sy = (y - draw.shift_y).clamp(0, OBS_H as i32 - 1);
            let sx = (x - draw.shift_x).clamp(0, OBS_W as i32 - 1);
            let v = image[(sy * OBS_W as i32 + sx) as usize] + draw.brightness;
            out[(y * OBS_W as i32 + x) as usize] = v.clamp(0.0, 1.0);
        }
    }
    out
}

/// Fresh random draw per call, as used for each sampled offline transition.
pub fn augment(image: &[f32], rng: &mut ChaCha8Rng) -> Vec<f32> {
    augment_with(image, AugmentDraw::sample(rng))
}

pub fn augment_pair(s: &[f32], sp: &[f32], draw: AugmentDraw) -> (Vec<f32>, Vec<f32>) {
    (augment_with(s, draw), augment_with(sp, draw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn identity_draw_is_identity() {
        let img: Vec<f32> = (0..OBS_H * OBS_W).map(|i| (i % 7) as f32 / 7.0).collect();
        assert_eq!(augment_with(&img, AugmentDraw::identity()), img);
    }

    #[test]
    fn output_stays_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let img: Vec<f32> = (0..OBS_H * OBS_W)
            .map(|i| if i % 3 == 0 { 1.0 } else { 0.01 })
            .collect();
        for _ in 0..100 {
            let out = augment(&img, &mut rng);
            assert!(out.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn opposite_shifts_cancel_on_constant_images() {
        let img = vec![0.5f32; OBS_H * OBS_W];
        let a = augment_with(
            &img,
            AugmentDraw {
                shift_x: 2,
                shift_y: 0,
                brightness: 0.0,
            },
        );
        let b = augment_with(
            &a,
            AugmentDraw {
                shift_x: -2,
                shift_y: 0,
                brightness: 0.0,
            },
        );
        assert_eq!(b, img);
    }
}
