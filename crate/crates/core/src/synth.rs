//! Procedural scenes and clips with exact hand-object ground truth.
//!
//! Geometry is laid out on a 32-unit design grid and scaled to
//! `image_size`. The left half holds the left hand and its object; the
//! right half mirrors it. Objects sit below hands in draw order and a
//! hand only ever covers one corner of its object, so every rendered
//! rectangle keeps its full bounding extent visible.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::frames::FrameStack;
use crate::haog::{BoundingBox, Haog, HANDS, SLOTS};

const DESIGN: usize = 32;

pub const HAND_COLORS: [[f64; 3]; HANDS] = [[0.90, 0.25, 0.20], [0.20, 0.35, 0.90]];
/// Object colors before a state change.
pub const OBJECT_COLORS_BEFORE: [[f64; 3]; HANDS] = [[0.15, 0.80, 0.25], [0.95, 0.85, 0.15]];
/// Object colors after a state change.
pub const OBJECT_COLORS_AFTER: [[f64; 3]; HANDS] = [[0.10, 0.75, 0.85], [0.85, 0.20, 0.85]];
const BACKGROUND: f64 = 0.45;

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub image_size: usize,
    pub raw_frames: usize,
    pub fps: f64,
    /// Hand approach speed range, in design units per frame.
    pub speed_min: f64,
    pub speed_max: f64,
    /// Fraction of the object's area a hand must cover to count as contact.
    pub contact_threshold: f64,
    pub hand_presence: f64,
    pub object_presence: f64,
    pub no_change_prob: f64,
    pub noise_amplitude: f64,
    /// Draw change frames from the evaluation sampling grid of `grid_frames` samples.
    pub pnr_on_grid: bool,
    pub grid_frames: usize,
    pub num_images: usize,
    pub num_clips: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            image_size: 32,
            raw_frames: 64,
            fps: 30.0,
            speed_min: 3.0,
            speed_max: 4.0,
            contact_threshold: 0.05,
            hand_presence: 0.9,
            object_presence: 0.8,
            no_change_prob: 0.25,
            noise_amplitude: 0.05,
            pnr_on_grid: true,
            grid_frames: 8,
            num_images: 16,
            num_clips: 8,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self, patch_size: usize) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.image_size < DESIGN {
            return fail(format!("image_size must be at least {DESIGN}"));
        }
        if patch_size == 0 || self.image_size % patch_size != 0 {
            return fail(format!("image_size {} not divisible by patch size {patch_size}", self.image_size));
        }
        if self.raw_frames < 2 {
            return fail("raw_frames must be at least 2".into());
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return fail("fps must be positive".into());
        }
        if !(self.speed_min >= 3.0 && self.speed_max >= self.speed_min) {
            return fail("speed range must satisfy 3 <= speed_min <= speed_max".into());
        }
        if !(self.contact_threshold > 0.0 && self.contact_threshold < 0.09) {
            return fail("contact_threshold must lie in (0, 0.09)".into());
        }
        for (name, p) in [
            ("hand_presence", self.hand_presence),
            ("object_presence", self.object_presence),
            ("no_change_prob", self.no_change_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} must lie in [0, 1]"));
            }
        }
        if !(0.0..=0.05).contains(&self.noise_amplitude) {
            return fail("noise_amplitude must lie in [0, 0.05]".into());
        }
        if self.pnr_on_grid && (self.grid_frames < 2 || self.grid_frames > self.raw_frames) {
            return fail("grid_frames must lie in [2, raw_frames]".into());
        }
        Ok(())
    }
}

/// Half-open pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelRect {
    pub x1: usize,
    pub y1: usize,
    pub x2: usize,
    pub y2: usize,
}

impl PixelRect {
    pub fn area(&self) -> usize {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    pub fn overlap(&self, other: &PixelRect) -> usize {
        let w = self.x2.min(other.x2).saturating_sub(self.x1.max(other.x1));
        let h = self.y2.min(other.y2).saturating_sub(self.y1.max(other.y1));
        w * h
    }

    pub fn to_box(self, size: usize) -> BoundingBox {
        let s = size as f64;
        BoundingBox::new(self.x1 as f64 / s, self.y1 as f64 / s, self.x2 as f64 / s, self.y2 as f64 / s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneImage {
    pub pixels: FrameStack,
    pub haog: Haog,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoClipSample {
    pub frames: FrameStack,
    pub fps: f64,
    pub pnr_index: usize,
    pub osc_label: u8,
    pub frame_haogs: Option<Vec<Haog>>,
}

/// One side of the scene in design units, left-side orientation.
#[derive(Clone, Copy, Debug)]
struct SideLayout {
    hand_w: i64,
    hand_h: i64,
    hand_y: i64,
    obj_x: i64,
    obj_y: i64,
    obj_w: i64,
    obj_h: i64,
    /// Hand x1 when touching the object's top-left corner.
    touch_x: i64,
    /// Hand x1 when clear of the object.
    clear_x: i64,
}

impl SideLayout {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let hand_w = rng.random_range(6..=8);
        let hand_h = rng.random_range(6..=8);
        let hand_y = rng.random_range(10..=16);
        let dy = rng.random_range(2..=3);
        let obj_h = rng.random_range(hand_h - dy + 1..=hand_h - dy + 3);
        let obj_w = rng.random_range(5..=6);
        let obj_x = rng.random_range(9..=10);
        let reach = rng.random_range(2..=3);
        let touch_x = obj_x + reach - hand_w;
        let clear_x = rng.random_range(0..=obj_x - 1 - hand_w);
        SideLayout {
            hand_w,
            hand_h,
            hand_y,
            obj_x,
            obj_y: hand_y + dy,
            obj_w,
            obj_h,
            touch_x,
            clear_x,
        }
    }
}

struct Painter {
    unit: f64,
}

impl Painter {
    fn new(size: usize) -> Self {
        Painter {
            unit: size as f64 / DESIGN as f64,
        }
    }

    fn scale(&self, v: i64) -> usize {
        (v as f64 * self.unit).round() as usize
    }

    /// Maps a design-unit rectangle on side `side` to pixels, clipped to
    /// the frame. `None` once nothing is left in view.
    fn rect(&self, side: usize, x: i64, y: i64, w: i64, h: i64) -> Option<PixelRect> {
        let (x1, x2) = if side == 0 {
            (x, x + w)
        } else {
            (DESIGN as i64 - x - w, DESIGN as i64 - x)
        };
        let (x1, x2) = (x1.clamp(0, DESIGN as i64), x2.clamp(0, DESIGN as i64));
        (x2 > x1).then(|| PixelRect {
            x1: self.scale(x1),
            y1: self.scale(y),
            x2: self.scale(x2),
            y2: self.scale(y + h),
        })
    }

    fn background(&self, frames: &mut FrameStack, t: usize, texture: &[f64]) {
        frames.frame_mut(t).copy_from_slice(texture);
    }

    fn fill(&self, frames: &mut FrameStack, t: usize, r: PixelRect, rgb: [f64; 3]) {
        for y in r.y1..r.y2 {
            for x in r.x1..r.x2 {
                frames.set_pixel(t, y, x, rgb);
            }
        }
    }
}

fn noise_texture(size: usize, amplitude: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..size * size * 3)
        .map(|_| BACKGROUND + amplitude * rng.random_range(-1.0..1.0))
        .collect()
}

/// Rectangles of one frame, indexed by slot.
type SlotRects = [Option<PixelRect>; SLOTS];

fn measure(rects: &SlotRects, size: usize, threshold: f64) -> Haog {
    let mut h = Haog::empty();
    for (j, r) in rects.iter().enumerate() {
        if let Some(r) = r {
            h.boxes[j] = Some(r.to_box(size));
            h.exists[j] = 1;
        }
    }
    for k in 0..HANDS {
        if let (Some(hand), Some(obj)) = (rects[k], rects[k + 2]) {
            let frac = hand.overlap(&obj) as f64 / obj.area() as f64;
            h.contact[k] = u8::from(frac >= threshold);
        }
    }
    h
}

fn paint(
    painter: &Painter,
    frames: &mut FrameStack,
    t: usize,
    texture: &[f64],
    rects: &SlotRects,
    object_colors: [[f64; 3]; HANDS],
) {
    painter.background(frames, t, texture);
    for k in 0..HANDS {
        if let Some(r) = rects[k + 2] {
            painter.fill(frames, t, r, object_colors[k]);
        }
    }
    for k in 0..HANDS {
        if let Some(r) = rects[k] {
            painter.fill(frames, t, r, HAND_COLORS[k]);
        }
    }
}

/// Renders a still scene and its exact hand-object graph.
pub fn gen_scene(cfg: &GenConfig, seed: u64) -> SceneImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let painter = Painter::new(cfg.image_size);
    let texture = noise_texture(cfg.image_size, cfg.noise_amplitude, &mut rng);
    let mut rects: SlotRects = [None; SLOTS];
    let mut colors = OBJECT_COLORS_BEFORE;
    for side in 0..HANDS {
        let layout = SideLayout::sample(&mut rng);
        let hand = rng.random_bool(cfg.hand_presence);
        let object = rng.random_bool(cfg.object_presence);
        let touching = rng.random_bool(0.5);
        if rng.random_bool(0.5) {
            colors[side] = OBJECT_COLORS_AFTER[side];
        }
        if hand {
            let x = if touching { layout.touch_x } else { layout.clear_x };
            rects[side] = painter.rect(side, x, layout.hand_y, layout.hand_w, layout.hand_h);
        }
        if object {
            rects[side + 2] = painter.rect(side, layout.obj_x, layout.obj_y, layout.obj_w, layout.obj_h);
        }
    }
    let mut pixels = FrameStack::zeros(1, cfg.image_size, cfg.image_size);
    paint(&painter, &mut pixels, 0, &texture, &rects, colors);
    SceneImage {
        pixels,
        haog: measure(&rects, cfg.image_size, cfg.contact_threshold),
    }
}

/// Renders a clip. In a change clip one hand reaches its object, the
/// object switches color on that single contact frame (the returned
/// `pnr_index`) and the hand withdraws out of view. A no-change clip stops the hand
/// short.
pub fn gen_clip(cfg: &GenConfig, seed: u64) -> VideoClipSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = cfg.raw_frames;
    let painter = Painter::new(cfg.image_size);
    let texture = noise_texture(cfg.image_size, cfg.noise_amplitude, &mut rng);

    let layouts = [SideLayout::sample(&mut rng), SideLayout::sample(&mut rng)];
    let active = rng.random_range(0..HANDS);
    let change = !rng.random_bool(cfg.no_change_prob);
    let pnr = if cfg.pnr_on_grid {
        let grid = sample_frames(0, f - 1, cfg.grid_frames).expect("valid grid");
        let candidates: Vec<usize> = grid.into_iter().filter(|&i| i >= 1).collect();
        candidates[rng.random_range(0..candidates.len())]
    } else {
        rng.random_range(1..f)
    };
    let speed = rng.random_range(cfg.speed_min..=cfg.speed_max);

    // The passive side is static.
    let mut passive: [Option<(i64, bool)>; HANDS] = [None; HANDS];
    let mut passive_object = [false; HANDS];
    for side in 0..HANDS {
        if side == active {
            continue;
        }
        let touching = rng.random_bool(0.5);
        let l = &layouts[side];
        if rng.random_bool(cfg.hand_presence) {
            passive[side] = Some((if touching { l.touch_x } else { l.clear_x }, touching));
        }
        passive_object[side] = rng.random_bool(cfg.object_presence);
    }

    let a = &layouts[active];
    // Hand x1 per frame for the active side.
    let active_x = |t: usize| -> i64 {
        if change {
            // Enter, touch at the change frame, leave.
            let back = (pnr.abs_diff(t) as f64 * speed).round() as i64;
            (a.touch_x - back).max(-a.hand_w)
        } else {
            // Approach the clear position and halt there.
            let stop = f / 2;
            let back = (p_minus(stop, t) as f64 * speed).round() as i64;
            (a.clear_x - back).max(0)
        }
    };

    let mut frames = FrameStack::zeros(f, cfg.image_size, cfg.image_size);
    let mut haogs = Vec::with_capacity(f);
    for t in 0..f {
        let mut rects: SlotRects = [None; SLOTS];
        for side in 0..HANDS {
            let l = &layouts[side];
            let (hand_x, has_object) = if side == active {
                (Some(active_x(t)), true)
            } else {
                (passive[side].map(|p| p.0), passive_object[side])
            };
            if let Some(x) = hand_x {
                rects[side] = painter.rect(side, x, l.hand_y, l.hand_w, l.hand_h);
            }
            if has_object {
                rects[side + 2] = painter.rect(side, l.obj_x, l.obj_y, l.obj_w, l.obj_h);
            }
        }
        let mut colors = OBJECT_COLORS_BEFORE;
        if change && t >= pnr {
            colors[active] = OBJECT_COLORS_AFTER[active];
        }
        paint(&painter, &mut frames, t, &texture, &rects, colors);
        haogs.push(measure(&rects, cfg.image_size, cfg.contact_threshold));
    }

    VideoClipSample {
        frames,
        fps: cfg.fps,
        pnr_index: if change { pnr } else { f - 1 },
        osc_label: u8::from(change),
        frame_haogs: Some(haogs),
    }
}

fn p_minus(p: usize, t: usize) -> usize {
    p.saturating_sub(t)
}

/// `count` indices from `first` to `last` inclusive, evenly spaced and
/// rounded to the nearest frame.
pub fn sample_frames(first: usize, last: usize, count: usize) -> Result<Vec<usize>> {
    if last < first {
        return Err(Error::Argument(format!("last frame {last} precedes first frame {first}")));
    }
    if count < 2 {
        return Err(Error::Argument(format!("need at least 2 samples, got {count}")));
    }
    let span = (last - first) as f64;
    let steps = (count - 1) as f64;
    Ok((0..count)
        .map(|k| first + (k as f64 * span / steps).round() as usize)
        .collect())
}

/// Random `(first, last)` for training: at least `count` distinct frames,
/// and covering `must_cover` when given.
pub fn training_range(
    raw_frames: usize,
    count: usize,
    must_cover: Option<usize>,
    rng: &mut impl Rng,
) -> Result<(usize, usize)> {
    if raw_frames < count {
        return Err(Error::Argument(format!("{raw_frames} raw frames cannot supply {count} samples")));
    }
    let span = count - 1;
    let first_max = match must_cover {
        Some(p) => p.min(raw_frames - count),
        None => raw_frames - count,
    };
    let first = rng.random_range(0..=first_max);
    let last_min = match must_cover {
        Some(p) => (first + span).max(p),
        None => first + span,
    };
    let last = rng.random_range(last_min..=raw_frames - 1);
    Ok((first, last))
}

/// Position in `sampled` nearest to raw frame `target`; ties go to the earlier position.
pub fn nearest_sample(sampled: &[usize], target: usize) -> usize {
    let mut best = 0;
    let mut best_dist = usize::MAX;
    for (k, &i) in sampled.iter().enumerate() {
        let d = i.abs_diff(target);
        if d < best_dist {
            best = k;
            best_dist = d;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CropAnchor {
    Center,
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CropMode {
    /// Random scale in range and random crop position.
    Train { seed: u64 },
    /// Scale to the midpoint of the range, crop at the anchor.
    Eval(CropAnchor),
}

/// Scaled size and crop offset chosen by [`resize_crop`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropGeometry {
    pub scaled_h: usize,
    pub scaled_w: usize,
    pub offset_y: usize,
    pub offset_x: usize,
    pub crop: usize,
}

impl CropGeometry {
    /// Maps a normalized box of the source frame into the crop, clipped
    /// to the unit square. `None` when nothing of it stays visible.
    pub fn map_box(&self, b: &BoundingBox) -> Option<BoundingBox> {
        let c = self.crop as f64;
        let fx = |v: f64| ((v * self.scaled_w as f64 - self.offset_x as f64) / c).clamp(0.0, 1.0);
        let fy = |v: f64| ((v * self.scaled_h as f64 - self.offset_y as f64) / c).clamp(0.0, 1.0);
        let out = BoundingBox::new(fx(b.x1), fy(b.y1), fx(b.x2), fy(b.y2));
        (out.x2 > out.x1 && out.y2 > out.y1).then_some(out)
    }
}

/// Picks the scale and crop offset for an `h × w` frame.
pub fn crop_geometry(
    h: usize,
    w: usize,
    crop_size: usize,
    scale_range: (usize, usize),
    mode: CropMode,
) -> Result<CropGeometry> {
    let (lo, hi) = scale_range;
    if lo == 0 || hi < lo {
        return Err(Error::Argument(format!("bad scale range {lo}..{hi}")));
    }
    let mut rng = match mode {
        CropMode::Train { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        CropMode::Eval(_) => None,
    };
    let short = match rng.as_mut() {
        Some(r) => r.random_range(lo..=hi),
        None => (lo + hi).div_ceil(2),
    };
    let (sh, sw) = if h <= w {
        (short, (w as f64 * short as f64 / h as f64).round() as usize)
    } else {
        ((h as f64 * short as f64 / w as f64).round() as usize, short)
    };
    if crop_size > sh || crop_size > sw || crop_size == 0 {
        return Err(Error::Argument(format!(
            "crop {crop_size} does not fit scaled frame {sh}x{sw}"
        )));
    }
    let (oy, ox) = match (mode, rng.as_mut()) {
        (CropMode::Train { .. }, Some(r)) => (r.random_range(0..=sh - crop_size), r.random_range(0..=sw - crop_size)),
        (CropMode::Eval(anchor), _) => {
            let oy = (sh - crop_size) / 2;
            let ox = match anchor {
                CropAnchor::Center => (sw - crop_size) / 2,
                CropAnchor::Left => 0,
                CropAnchor::Right => sw - crop_size,
            };
            (oy, ox)
        }
        _ => unreachable!(),
    };
    Ok(CropGeometry {
        scaled_h: sh,
        scaled_w: sw,
        offset_y: oy,
        offset_x: ox,
        crop: crop_size,
    })
}

/// Rescales the shorter side, then crops `crop_size × crop_size`.
pub fn resize_crop(
    frames: &FrameStack,
    crop_size: usize,
    scale_range: (usize, usize),
    mode: CropMode,
) -> Result<FrameStack> {
    let geo = crop_geometry(frames.height, frames.width, crop_size, scale_range, mode)?;
    Ok(apply_crop(frames, &geo))
}

/// Bilinear resampling of `frames` through `geo`.
pub fn apply_crop(frames: &FrameStack, geo: &CropGeometry) -> FrameStack {
    let (h, w) = (frames.height, frames.width);
    let (sh, sw, oy, ox) = (geo.scaled_h, geo.scaled_w, geo.offset_y, geo.offset_x);
    let crop_size = geo.crop;
    let ry = h as f64 / sh as f64;
    let rx = w as f64 / sw as f64;
    let mut out = FrameStack::zeros(frames.count, crop_size, crop_size);
    for t in 0..frames.count {
        for y in 0..crop_size {
            let (y0, y1, fy) = source_coord(y + oy, ry, h);
            for x in 0..crop_size {
                let (x0, x1, fx) = source_coord(x + ox, rx, w);
                let p00 = frames.pixel(t, y0, x0);
                let p01 = frames.pixel(t, y0, x1);
                let p10 = frames.pixel(t, y1, x0);
                let p11 = frames.pixel(t, y1, x1);
                let mut rgb = [0.0; 3];
                for c in 0..3 {
                    let top = p00[c] * (1.0 - fx) + p01[c] * fx;
                    let bottom = p10[c] * (1.0 - fx) + p11[c] * fx;
                    rgb[c] = top * (1.0 - fy) + bottom * fy;
                }
                out.set_pixel(t, y, x, rgb);
            }
        }
    }
    out
}

/// Half-pixel-centre bilinear source taps.
fn source_coord(dst: usize, ratio: f64, len: usize) -> (usize, usize, f64) {
    let s = ((dst as f64 + 0.5) * ratio - 0.5).clamp(0.0, (len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, s - i0 as f64)
}

/// Derives an independent stream seed from `(base, stream, index)` with splitmix64.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::haog::validate_haog;

    fn cfg() -> GenConfig {
        GenConfig::default()
    }

    /// Bounding box of pixels exactly equal to one of `colors`.
    fn remeasure(frames: &FrameStack, t: usize, colors: &[[f64; 3]]) -> Option<BoundingBox> {
        let mut found: Option<PixelRect> = None;
        for y in 0..frames.height {
            for x in 0..frames.width {
                let p = frames.pixel(t, y, x);
                if colors.contains(&p) {
                    let r = found.get_or_insert(PixelRect { x1: x, y1: y, x2: x + 1, y2: y + 1 });
                    r.x1 = r.x1.min(x);
                    r.y1 = r.y1.min(y);
                    r.x2 = r.x2.max(x + 1);
                    r.y2 = r.y2.max(y + 1);
                }
            }
        }
        found.map(|r| r.to_box(frames.width))
    }

    fn slot_colors(j: usize) -> Vec<[f64; 3]> {
        if j < HANDS {
            vec![HAND_COLORS[j]]
        } else {
            vec![OBJECT_COLORS_BEFORE[j - 2], OBJECT_COLORS_AFTER[j - 2]]
        }
    }

    #[test]
    fn scenes_match_rendered_geometry() {
        for seed in 0..200 {
            let s = gen_scene(&cfg(), seed);
            assert!(validate_haog(&s.haog).is_ok());
            for j in 0..SLOTS {
                assert_eq!(remeasure(&s.pixels, 0, &slot_colors(j)), s.haog.boxes[j], "seed {seed} slot {j}");
            }
            for k in 0..HANDS {
                if s.haog.contact_defined(k) {
                    let hand = s.haog.boxes[k].unwrap();
                    let obj = s.haog.boxes[k + 2].unwrap();
                    let frac = hand.intersection(&obj) / obj.area();
                    assert_eq!(s.haog.contact[k] == 1, frac >= cfg().contact_threshold, "seed {seed}");
                } else {
                    assert_eq!(s.haog.contact[k], 0);
                }
            }
        }
    }

    #[test]
    fn full_scenes_use_overlap_for_contact() {
        let c = GenConfig {
            hand_presence: 1.0,
            object_presence: 1.0,
            ..cfg()
        };
        let mut touching = 0;
        for seed in 0..50 {
            let s = gen_scene(&c, seed);
            assert_eq!(s.haog.exists, [1, 1, 1, 1]);
            touching += s.haog.contact.iter().filter(|&&c| c == 1).count();
        }
        assert!(touching > 20 && touching < 80, "{touching}");
    }

    #[test]
    fn no_objects_means_no_contact() {
        let c = GenConfig {
            hand_presence: 1.0,
            object_presence: 0.0,
            ..cfg()
        };
        for seed in 0..20 {
            let s = gen_scene(&c, seed);
            assert_eq!(s.haog.exists, [1, 1, 0, 0]);
            assert_eq!(s.haog.contact, [0, 0]);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(gen_scene(&cfg(), 11), gen_scene(&cfg(), 11));
        assert_eq!(gen_clip(&cfg(), 11), gen_clip(&cfg(), 11));
        assert_ne!(gen_scene(&cfg(), 11).pixels, gen_scene(&cfg(), 12).pixels);
    }

    #[test]
    fn clips_match_rendered_geometry_every_frame() {
        for seed in 0..30 {
            let clip = gen_clip(&cfg(), seed);
            let haogs = clip.frame_haogs.as_ref().unwrap();
            assert_eq!(haogs.len(), clip.frames.count);
            for (t, h) in haogs.iter().enumerate() {
                assert!(validate_haog(h).is_ok());
                for j in 0..SLOTS {
                    assert_eq!(remeasure(&clip.frames, t, &slot_colors(j)), h.boxes[j], "seed {seed} t {t} slot {j}");
                }
            }
        }
    }

    #[test]
    fn change_clip_flips_color_at_pnr() {
        let c = GenConfig {
            no_change_prob: 0.0,
            ..cfg()
        };
        for seed in 0..30 {
            let clip = gen_clip(&c, seed);
            assert_eq!(clip.osc_label, 1);
            let p = clip.pnr_index;
            assert!(p >= 1 && p < c.raw_frames);
            let grid = sample_frames(0, c.raw_frames - 1, c.grid_frames).unwrap();
            assert!(grid.contains(&p));
            let haogs = clip.frame_haogs.as_ref().unwrap();
            let before: Vec<usize> = (0..HANDS)
                .filter(|&k| remeasure(&clip.frames, p - 1, &[OBJECT_COLORS_AFTER[k]]).is_some())
                .collect();
            let after: Vec<usize> = (0..HANDS)
                .filter(|&k| remeasure(&clip.frames, p, &[OBJECT_COLORS_AFTER[k]]).is_some())
                .collect();
            assert!(before.is_empty(), "seed {seed}");
            assert_eq!(after.len(), 1, "seed {seed}");
            let k = after[0];
            // Contact on the active side starts exactly at the change frame.
            assert_eq!(haogs[p - 1].contact[k], 0, "seed {seed}");
            assert_eq!(haogs[p].contact[k], 1, "seed {seed}");
            for t in p..c.raw_frames {
                assert!(remeasure(&clip.frames, t, &[OBJECT_COLORS_AFTER[k]]).is_some());
            }
            for (t, h) in haogs.iter().enumerate() {
                assert_eq!(h.contact[k] == 1, t == p, "seed {seed} frame {t}");
            }
            // One grid step away the active hand is out of view.
            for t in [p.checked_sub(9), Some(p + 9)].into_iter().flatten().filter(|&t| t < c.raw_frames) {
                assert_eq!(haogs[t].exists[k], 0, "seed {seed} frame {t}");
            }
        }
    }

    #[test]
    fn no_change_clip_keeps_colors() {
        let c = GenConfig {
            no_change_prob: 1.0,
            ..cfg()
        };
        for seed in 0..10 {
            let clip = gen_clip(&c, seed);
            assert_eq!(clip.osc_label, 0);
            assert_eq!(clip.pnr_index, c.raw_frames - 1);
            for t in 0..c.raw_frames {
                for k in 0..HANDS {
                    assert!(remeasure(&clip.frames, t, &[OBJECT_COLORS_AFTER[k]]).is_none());
                }
            }
        }
    }

    #[test]
    fn off_grid_pnr() {
        let c = GenConfig {
            pnr_on_grid: false,
            no_change_prob: 0.0,
            ..cfg()
        };
        let grid = sample_frames(0, 63, 8).unwrap();
        let off = (0..40).filter(|&s| !grid.contains(&gen_clip(&c, s).pnr_index)).count();
        assert!(off > 0);
    }

    #[test]
    fn sample_frames_examples() {
        assert_eq!(sample_frames(0, 15, 16).unwrap(), (0..16).collect::<Vec<_>>());
        assert_eq!(sample_frames(0, 60, 16).unwrap(), (0..16).map(|k| 4 * k).collect::<Vec<_>>());
        assert_eq!(sample_frames(5, 5, 4).unwrap(), vec![5, 5, 5, 5]);
        assert!(matches!(sample_frames(6, 5, 4), Err(Error::Argument(_))));
    }

    #[test]
    fn training_range_covers_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let p = rng.random_range(1..64);
            let (first, last) = training_range(64, 8, Some(p), &mut rng).unwrap();
            assert!(first <= p && p <= last && last < 64 && last - first >= 7);
            let (first, last) = training_range(64, 8, None, &mut rng).unwrap();
            assert!(last - first >= 7 && last < 64);
        }
        assert!(training_range(4, 8, None, &mut rng).is_err());
    }

    #[test]
    fn nearest_sample_prefers_earlier() {
        assert_eq!(nearest_sample(&[0, 4, 8], 6), 1);
        assert_eq!(nearest_sample(&[0, 4, 8], 7), 2);
        assert_eq!(nearest_sample(&[0, 9, 18], 9), 1);
    }

    #[test]
    fn eval_crop_at_native_scale_is_identity() {
        let s = gen_scene(&cfg(), 4);
        let out = resize_crop(&s.pixels, 32, (32, 32), CropMode::Eval(CropAnchor::Center)).unwrap();
        let err = out
            .data
            .iter()
            .zip(&s.pixels.data)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-6);
    }

    #[test]
    fn crop_shapes_and_determinism() {
        let clip = gen_clip(&cfg(), 2).frames.select(&[0, 10, 20]);
        for mode in [
            CropMode::Train { seed: 9 },
            CropMode::Eval(CropAnchor::Left),
            CropMode::Eval(CropAnchor::Right),
            CropMode::Eval(CropAnchor::Center),
        ] {
            let out = resize_crop(&clip, 24, (28, 40), mode).unwrap();
            assert_eq!((out.count, out.height, out.width), (3, 24, 24));
        }
        let a = resize_crop(&clip, 24, (28, 40), CropMode::Train { seed: 9 }).unwrap();
        let b = resize_crop(&clip, 24, (28, 40), CropMode::Train { seed: 9 }).unwrap();
        assert_eq!(a, b);
        assert!(resize_crop(&clip, 48, (28, 40), CropMode::Train { seed: 9 }).is_err());
    }
}
