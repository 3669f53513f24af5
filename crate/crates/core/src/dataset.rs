//! On-disk synthetic datasets.
//!
//! ```text
//! <dir>/images/scene_0000.svt ...   one-frame SVT1 tensors
//! <dir>/images/annotations.jsonl    one hand-object graph record per image
//! <dir>/clips/clip_0000.svt ...     raw-frame SVT1 tensors
//! <dir>/clips/clips.jsonl           {"clip","file","fps","pnr_index","osc_label"}
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::FrameStack;
use crate::haog::{parse_haog_record, Haog, serialize_haog_record, validate_haog, Verdict};
use crate::synth::{derive_seed, gen_clip, gen_scene, GenConfig, SceneImage, VideoClipSample};
use crate::train::{ImageExample, TrainData};

const IMAGE_STREAM: u64 = 0;
const CLIP_STREAM: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip: String,
    pub file: String,
    pub fps: f64,
    pub pnr_index: usize,
    pub osc_label: u8,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    /// `(file name, image)`.
    pub images: Vec<(String, SceneImage)>,
    /// `(clip id, clip)`.
    pub clips: Vec<(String, VideoClipSample)>,
}

impl Dataset {
    /// Generates `num_images` scenes and `num_clips` clips at file precision.
    pub fn generate(cfg: &GenConfig, seed: u64) -> Self {
        let images = (0..cfg.num_images)
            .map(|i| {
                let mut s = gen_scene(cfg, derive_seed(seed, IMAGE_STREAM, i as u64));
                let name = format!("scene_{i:04}.svt");
                s.pixels = s.pixels.quantized();
                s.haog = at_file_precision(&name, &s.haog);
                (name, s)
            })
            .collect();
        let clips = (0..cfg.num_clips)
            .map(|i| {
                let mut c = gen_clip(cfg, derive_seed(seed, CLIP_STREAM, i as u64));
                c.frames = c.frames.quantized();
                c.frame_haogs = None;
                (format!("clip_{i:04}"), c)
            })
            .collect();
        Dataset { images, clips }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let images = dir.join("images");
        let clips = dir.join("clips");
        for d in [&images, &clips] {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let mut ann = String::new();
        for (name, s) in &self.images {
            s.pixels.write(&images.join(name))?;
            ann.push_str(&serialize_haog_record(name, &s.haog)?);
            ann.push('\n');
        }
        let ann_path = images.join("annotations.jsonl");
        fs::write(&ann_path, ann).map_err(|e| Error::io(&ann_path, e))?;

        let mut manifest = String::new();
        for (id, c) in &self.clips {
            let file = format!("{id}.svt");
            c.frames.write(&clips.join(&file))?;
            let rec = ClipRecord {
                clip: id.clone(),
                file,
                fps: c.fps,
                pnr_index: c.pnr_index,
                osc_label: c.osc_label,
            };
            manifest.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            manifest.push('\n');
        }
        let man_path = clips.join("clips.jsonl");
        fs::write(&man_path, manifest).map_err(|e| Error::io(&man_path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let images_dir = dir.join("images");
        let ann_path = images_dir.join("annotations.jsonl");
        let mut images = Vec::new();
        if ann_path.exists() {
            for (name, haog) in read_annotations(&ann_path)? {
                let pixels = FrameStack::read(&images_dir.join(&name))?;
                if pixels.count != 1 {
                    return Err(Error::format(images_dir.join(&name), "image tensor must hold one frame"));
                }
                images.push((name, SceneImage { pixels, haog }));
            }
        }
        let man_path = dir.join("clips").join("clips.jsonl");
        let mut clips = Vec::new();
        if man_path.exists() {
            let text = fs::read_to_string(&man_path).map_err(|e| Error::io(&man_path, e))?;
            for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let rec: ClipRecord = serde_json::from_str(line)
                    .map_err(|e| Error::format(&man_path, format!("line {}: {e}", n + 1)))?;
                let path = dir.join("clips").join(&rec.file);
                let frames = FrameStack::read(&path)?;
                if rec.pnr_index >= frames.count || rec.osc_label > 1 || !(rec.fps > 0.0) {
                    return Err(Error::format(&man_path, format!("line {}: labels out of range", n + 1)));
                }
                clips.push((
                    rec.clip,
                    VideoClipSample {
                        frames,
                        fps: rec.fps,
                        pnr_index: rec.pnr_index,
                        osc_label: rec.osc_label,
                        frame_haogs: None,
                    },
                ));
            }
        }
        if images.is_empty() && clips.is_empty() {
            return Err(Error::format(dir, "no images or clips found"));
        }
        Ok(Dataset { images, clips })
    }

    pub fn train_data(&self) -> TrainData {
        TrainData {
            images: self
                .images
                .iter()
                .map(|(_, s)| ImageExample {
                    frames: s.pixels.clone(),
                    haog: s.haog.clone(),
                })
                .collect(),
            clips: self.clips.iter().map(|(_, c)| c.clone()).collect(),
        }
    }
}

fn at_file_precision(name: &str, h: &Haog) -> Haog {
    let line = serialize_haog_record(name, h).expect("generated graphs serialize");
    parse_haog_record(&line).expect("serialized graphs parse").1
}

/// Parses and validates every record of an annotation file.
pub fn read_annotations(path: &Path) -> Result<Vec<(String, Haog)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let (name, haog) =
            parse_haog_record(line).map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
        if let Verdict::Violations(v) = validate_haog(&haog) {
            return Err(Error::format(path, format!("line {}: {}", n + 1, v.join("; "))));
        }
        out.push((name, haog));
    }
    Ok(out)
}
