//! Observation rendering: a 32x32 grayscale composite of a top-down view
//! (rows 0-15) and a cutaway side view (rows 16-31). Rendering is a pure
//! function of (state, spec) and rectangles are drawn with area-coverage
//! anti-aliasing, so sub-pixel positions survive the rasterization.

use crate::domain::DomainSpec;
use crate::sim::SimState;

pub const OBS_W: usize = 32;
pub const OBS_H: usize = 32;
pub const OBS_LEN: usize = OBS_W * OBS_H;

/// Workspace half-extent in mm; both views span [-32, 32] horizontally.
pub const WORKSPACE_HALF: f32 = 32.0;
/// Side view vertical range in mm: z from +10 (top) down to -6 (bottom).
pub const SIDE_Z_TOP: f32 = 10.0;
const TOP_ROWS: usize = 16;

/// Visible height of the peg column above its tip, mm.
const PEG_HEIGHT: f32 = 8.0;
/// Extra housing material around the opening in the top view, mm.
const HOUSING_MARGIN: f32 = 2.0;
/// Gauge bar location (mm) and intensity; its length equals the domain's
/// insertion depth, drawn downward from the surface line.
const GAUGE_X: (f32, f32) = (-30.0, -28.0);
const GAUGE_INTENSITY: f32 = 0.9;
const OPENING_INTENSITY: f32 = 0.04;
/// Dark rim drawn around the peg so it stays separable from housing and
/// background whatever the intensity draws are, like an edge shadow.
const PEG_OUTLINE: f32 = 0.6;
const OUTLINE_INTENSITY: f32 = 0.06;
/// Procedural texture contrast. Chosen so plain supervised training leans
/// on per-domain texture shortcuts instead of geometry.
pub const TEXTURE_AMPLITUDE: f32 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub pixels: Vec<f32>,
}

impl Observation {
    pub fn zeros() -> Self {
        Self {
            pixels: vec![0.0; OBS_LEN],
        }
    }
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn cell_noise(seed: u64, cx: i64, cy: i64) -> f32 {
    let h = mix64(seed ^ mix64((cx as u64) << 32 ^ (cy as u64) & 0xffff_ffff));
    (h >> 40) as f32 / (1u64 << 24) as f32
}

fn smoothstep(t: f32) -> f32 {
    t * t * (3.0 - 2.0 * t)
}

/// Smooth value noise at a pixel, in [0, 1).
fn value_noise(seed: u64, px: f32, py: f32, cell: f32) -> f32 {
    let gx = px / cell;
    let gy = py / cell;
    let x0 = gx.floor();
    let y0 = gy.floor();
    let tx = smoothstep(gx - x0);
    let ty = smoothstep(gy - y0);
    let (x0, y0) = (x0 as i64, y0 as i64);
    let v00 = cell_noise(seed, x0, y0);
    let v10 = cell_noise(seed, x0 + 1, y0);
    let v01 = cell_noise(seed, x0, y0 + 1);
    let v11 = cell_noise(seed, x0 + 1, y0 + 1);
    let a = v00 + (v10 - v00) * tx;
    let b = v01 + (v11 - v01) * tx;
    a + (b - a) * ty
}

fn pattern_cell(pattern: u32) -> f32 {
    match pattern % 4 {
        0 => 3.0,
        1 => 4.0,
        2 => 6.0,
        _ => 8.0,
    }
}

/// Blend an axis-aligned rectangle (pixel coordinates) into the image with
/// per-pixel coverage, restricted to rows [row_lo, row_hi).
fn fill_rect(
    img: &mut [f32],
    x0: f32,
    x1: f32,
    y0: f32,
    y1: f32,
    intensity: f32,
    row_lo: usize,
    row_hi: usize,
) {
    if x1 <= x0 || y1 <= y0 {
        return;
    }
    let cx0 = x0.floor().max(0.0) as usize;
    let cx1 = (x1.ceil() as usize).min(OBS_W);
    let cy0 = y0.floor().max(row_lo as f32) as usize;
    let cy1 = (y1.ceil() as usize).min(row_hi);
    for py in cy0..cy1 {
        let oy = (y1.min(py as f32 + 1.0) - y0.max(py as f32)).max(0.0);
        for px in cx0..cx1 {
            let ox = (x1.min(px as f32 + 1.0) - x0.max(px as f32)).max(0.0);
            let cov = ox * oy;
            if cov > 0.0 {
                let p = &mut img[py * OBS_W + px];
                *p = *p * (1.0 - cov) + intensity * cov;
            }
        }
    }
}

fn top_x(x: f32) -> f32 {
    (x + WORKSPACE_HALF) / 2.0
}

fn top_y(y: f32) -> f32 {
    (y + WORKSPACE_HALF) / 4.0
}

fn side_row(z: f32) -> f32 {
    TOP_ROWS as f32 + (SIDE_Z_TOP - z)
}

/// Fixed per-domain set decoration: rig fixtures at style-dependent
/// positions and intensities. They carry no task information but identify
/// the domain, which is exactly what a brittle classifier latches onto.
const N_FIXTURES: usize = 5;

fn draw_fixtures(img: &mut [f32], seed: u64) {
    for k in 0..N_FIXTURES {
        let h = mix64(seed ^ (0xF17E ^ k as u64).wrapping_mul(0x9e37_79b9));
        let unit = |shift: u32| ((h >> shift) & 0xff) as f32 / 255.0;
        let x0 = unit(0) * (OBS_W as f32 - 4.0);
        let y0 = unit(8) * (OBS_H as f32 - 4.0);
        let w = 2.0 + unit(16) * 4.0;
        let ht = 1.0 + unit(24) * 3.0;
        let intensity = unit(32);
        fill_rect(img, x0, x0 + w, y0, y0 + ht, intensity, 0, OBS_H);
    }
}

pub fn render(state: &SimState, spec: &DomainSpec) -> Observation {
    let mut img = vec![0.0f32; OBS_LEN];
    let seed = spec.style.texture_seed;
    let cell = pattern_cell(spec.style.background_pattern);
    let base = 0.08 + 0.22 * ((mix64(seed) >> 40) as f32 / (1u64 << 24) as f32);
    for py in 0..OBS_H {
        for px in 0..OBS_W {
            let n = value_noise(seed, px as f32 + 0.5, py as f32 + 0.5, cell);
            img[py * OBS_W + px] = (base + TEXTURE_AMPLITUDE * (n - 0.5)).clamp(0.0, 1.0);
        }
    }
    draw_fixtures(&mut img, seed);

    let (cx, cy) = spec.socket_center;
    let half_open = spec.peg_width / 2.0 + spec.socket_tolerance;
    let half_house = half_open + HOUSING_MARGIN;
    let half_peg = spec.peg_width / 2.0;
    let si = spec.style.socket_intensity;
    let pi = spec.style.peg_intensity;

    // Top view: housing, opening, peg footprint.
    fill_rect(
        &mut img,
        top_x(cx - half_house),
        top_x(cx + half_house),
        top_y(cy - half_house),
        top_y(cy + half_house),
        si,
        0,
        TOP_ROWS,
    );
    fill_rect(
        &mut img,
        top_x(cx - half_open),
        top_x(cx + half_open),
        top_y(cy - half_open),
        top_y(cy + half_open),
        OPENING_INTENSITY,
        0,
        TOP_ROWS,
    );
    fill_rect(
        &mut img,
        top_x(state.pos[0] - half_peg - PEG_OUTLINE),
        top_x(state.pos[0] + half_peg + PEG_OUTLINE),
        top_y(state.pos[1] - half_peg - PEG_OUTLINE),
        top_y(state.pos[1] + half_peg + PEG_OUTLINE),
        OUTLINE_INTENSITY,
        0,
        TOP_ROWS,
    );
    fill_rect(
        &mut img,
        top_x(state.pos[0] - half_peg),
        top_x(state.pos[0] + half_peg),
        top_y(state.pos[1] - half_peg),
        top_y(state.pos[1] + half_peg),
        pi,
        0,
        TOP_ROWS,
    );

    // Side view: surface line with opening gap, depth gauge, peg column.
    fill_rect(
        &mut img,
        top_x(-WORKSPACE_HALF),
        top_x(cx - half_open),
        side_row(0.0),
        side_row(-1.0),
        si,
        TOP_ROWS,
        OBS_H,
    );
    fill_rect(
        &mut img,
        top_x(cx + half_open),
        top_x(WORKSPACE_HALF),
        side_row(0.0),
        side_row(-1.0),
        si,
        TOP_ROWS,
        OBS_H,
    );
    fill_rect(
        &mut img,
        top_x(GAUGE_X.0),
        top_x(GAUGE_X.1),
        side_row(0.0),
        side_row(-spec.insertion_depth),
        GAUGE_INTENSITY,
        TOP_ROWS,
        OBS_H,
    );
    fill_rect(
        &mut img,
        top_x(state.pos[0] - half_peg - PEG_OUTLINE),
        top_x(state.pos[0] + half_peg + PEG_OUTLINE),
        side_row(state.pos[2] + PEG_HEIGHT + PEG_OUTLINE),
        side_row(state.pos[2] - PEG_OUTLINE),
        OUTLINE_INTENSITY,
        TOP_ROWS,
        OBS_H,
    );
    fill_rect(
        &mut img,
        top_x(state.pos[0] - half_peg),
        top_x(state.pos[0] + half_peg),
        side_row(state.pos[2] + PEG_HEIGHT),
        side_row(state.pos[2]),
        pi,
        TOP_ROWS,
        OBS_H,
    );

    Observation { pixels: img }
}

/// Mask of the semantically meaningful region for this state: the peg,
/// the socket assembly and the depth gauge in both views, with a one-pixel
/// margin. Used by the saliency in-box mass metric.
pub fn meaningful_region_mask(state: &SimState, spec: &DomainSpec) -> Vec<f32> {
    let mut mask = vec![0.0f32; OBS_LEN];
    let (cx, cy) = spec.socket_center;
    let half_house = spec.peg_width / 2.0 + spec.socket_tolerance + HOUSING_MARGIN;
    let half_peg = spec.peg_width / 2.0;
    let m = 1.0; // pixel margin

    let mut mark = |x0: f32, x1: f32, y0: f32, y1: f32, lo: usize, hi: usize| {
        let cx0 = (x0 - m).floor().max(0.0) as usize;
        let cx1 = ((x1 + m).ceil() as usize).min(OBS_W);
        let cy0 = (y0 - m).floor().max(lo as f32) as usize;
        let cy1 = ((y1 + m).ceil() as usize).min(hi);
        for py in cy0..cy1 {
            for px in cx0..cx1 {
                mask[py * OBS_W + px] = 1.0;
            }
        }
    };

    // Socket and peg in the top view.
    mark(
        top_x(cx - half_house),
        top_x(cx + half_house),
        top_y(cy - half_house),
        top_y(cy + half_house),
        0,
        TOP_ROWS,
    );
    mark(
        top_x(state.pos[0] - half_peg),
        top_x(state.pos[0] + half_peg),
        top_y(state.pos[1] - half_peg),
        top_y(state.pos[1] + half_peg),
        0,
        TOP_ROWS,
    );
    // Socket opening neighbourhood, gauge and peg column in the side view.
    mark(
        top_x(cx - half_house),
        top_x(cx + half_house),
        side_row(2.0),
        side_row(-spec.insertion_depth),
        TOP_ROWS,
        OBS_H,
    );
    mark(
        top_x(GAUGE_X.0),
        top_x(GAUGE_X.1),
        side_row(0.0),
        side_row(-spec.insertion_depth),
        TOP_ROWS,
        OBS_H,
    );
    mark(
        top_x(state.pos[0] - half_peg),
        top_x(state.pos[0] + half_peg),
        side_row(state.pos[2] + PEG_HEIGHT),
        side_row(state.pos[2]),
        TOP_ROWS,
        OBS_H,
    );
    mask
}
