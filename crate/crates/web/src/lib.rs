//! Browser bindings for the `svit` demo page in `www/`.

use wasm_bindgen::prelude::*;

use svit::frames::FrameStack;
use svit::haog::{giou, iou, BoundingBox, SLOTS, SLOT_NAMES};
use svit::synth::{gen_clip, gen_scene, sample_frames, GenConfig};

fn rgba(frames: &FrameStack, t: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(frames.height * frames.width * 4);
    for y in 0..frames.height {
        for x in 0..frames.width {
            for c in frames.pixel(t, y, x) {
                out.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
            out.push(255);
        }
    }
    out
}

fn config(image_size: usize) -> GenConfig {
    GenConfig {
        image_size,
        ..GenConfig::default()
    }
}

/// A rendered still scene and its hand-object graph.
#[wasm_bindgen]
pub struct Scene {
    size: usize,
    pixels: Vec<u8>,
    boxes: Vec<f64>,
    exists: Vec<u8>,
    contact: Vec<u8>,
}

#[wasm_bindgen]
impl Scene {
    /// Renders the scene for `seed` at `image_size` pixels (a multiple of 8).
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, image_size: usize) -> Result<Scene, JsError> {
        let cfg = config(image_size);
        cfg.validate(8).map_err(|e| JsError::new(&e.to_string()))?;
        let s = gen_scene(&cfg, seed);
        let boxes = s
            .haog
            .boxes
            .iter()
            .flat_map(|b| b.map_or([f64::NAN; 4], |b| b.to_array()))
            .collect();
        Ok(Scene {
            size: image_size,
            pixels: rgba(&s.pixels, 0),
            boxes,
            exists: s.haog.exists.to_vec(),
            contact: s.haog.contact.to_vec(),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Row-major RGBA bytes.
    pub fn rgba(&self) -> Vec<u8> {
        self.pixels.clone()
    }

    /// Four `[x1, y1, x2, y2]` boxes in unit coordinates, NaN when absent.
    pub fn boxes(&self) -> Vec<f64> {
        self.boxes.clone()
    }

    pub fn exists(&self) -> Vec<u8> {
        self.exists.clone()
    }

    /// Left and right hand contact flags.
    pub fn contact(&self) -> Vec<u8> {
        self.contact.clone()
    }
}

#[wasm_bindgen]
pub fn slot_name(j: usize) -> String {
    SLOT_NAMES.get(j).copied().unwrap_or("").to_string()
}

#[wasm_bindgen]
pub fn slot_count() -> usize {
    SLOTS
}

/// `[iou, giou, hull x1, y1, x2, y2]` for two corner boxes.
#[wasm_bindgen]
pub fn box_overlap(a: &[f64], b: &[f64]) -> Result<Vec<f64>, JsError> {
    let corner = |v: &[f64]| -> Result<BoundingBox, JsError> {
        let arr: [f64; 4] = v.try_into().map_err(|_| JsError::new("a box needs four numbers"))?;
        let b = BoundingBox::from_array(arr);
        if b.is_valid() {
            Ok(b)
        } else {
            Err(JsError::new("box corners out of order"))
        }
    };
    let (a, b) = (corner(a)?, corner(b)?);
    let mut out = vec![iou(&a, &b), giou(&a, &b)];
    out.extend(a.hull(&b).to_array());
    Ok(out)
}

/// A rendered clip with its keyframe label.
#[wasm_bindgen]
pub struct Clip {
    frames: FrameStack,
    pnr_index: usize,
    osc_label: u8,
    fps: f64,
}

#[wasm_bindgen]
impl Clip {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, image_size: usize, change: bool) -> Result<Clip, JsError> {
        let cfg = GenConfig {
            no_change_prob: if change { 0.0 } else { 1.0 },
            ..config(image_size)
        };
        cfg.validate(8).map_err(|e| JsError::new(&e.to_string()))?;
        let c = gen_clip(&cfg, seed);
        Ok(Clip {
            frames: c.frames,
            pnr_index: c.pnr_index,
            osc_label: c.osc_label,
            fps: c.fps,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.count
    }

    pub fn is_empty(&self) -> bool {
        self.frames.count == 0
    }

    pub fn size(&self) -> usize {
        self.frames.width
    }

    pub fn pnr_index(&self) -> usize {
        self.pnr_index
    }

    pub fn osc_label(&self) -> u8 {
        self.osc_label
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    /// RGBA bytes of raw frame `t`, clamped to the last frame.
    pub fn frame_rgba(&self, t: usize) -> Vec<u8> {
        rgba(&self.frames, t.min(self.frames.count - 1))
    }
}

/// Raw frame indices picked by uniform sampling between `first` and `last`.
#[wasm_bindgen]
pub fn sampled_frames(first: usize, last: usize, count: usize) -> Result<Vec<u32>, JsError> {
    sample_frames(first, last, count)
        .map(|v| v.into_iter().map(|i| i as u32).collect())
        .map_err(|e| JsError::new(&e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_bytes_match_size() {
        let s = Scene::new(3, 32).ok().unwrap();
        assert_eq!(s.rgba().len(), 32 * 32 * 4);
        assert_eq!(s.boxes().len(), 16);
        for j in 0..SLOTS {
            assert_eq!(s.exists()[j] == 1, !s.boxes()[4 * j].is_nan());
        }
    }

    #[test]
    fn overlap_matches_hand_values() {
        let r = box_overlap(&[0.0, 0.0, 0.5, 0.5], &[0.5, 0.5, 1.0, 1.0]).ok().unwrap();
        assert_eq!(r[0], 0.0);
        assert!((r[1] + 0.5).abs() < 1e-12);
        assert_eq!(&r[2..], &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn clip_label_is_inside_clip() {
        let c = Clip::new(1, 32, true).ok().unwrap();
        assert_eq!(c.osc_label(), 1);
        assert!(c.pnr_index() < c.len());
        assert_eq!(c.frame_rgba(c.len() + 5), c.frame_rgba(c.len() - 1));
    }
}
