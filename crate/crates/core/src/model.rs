//! Shared image/video transformer with object tokens.
//!
//! Frames are patchified with one 2-D kernel, so a still image is simply
//! a one-frame clip that uses temporal embedding `r_0`. Every frame
//! contributes `H·W` patch tokens and `n` object tokens; object token
//! `(t, i)` starts as `o_i + r_t`. All tokens attend jointly across space
//! and time through pre-norm blocks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::frames::{FrameStack, CHANNELS};
use crate::haog::{BoundingBox, HANDS, SLOTS};
use crate::tensor::Mat;

const EMBED_STD: f64 = 0.02;
const MLP_RATIO: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Sampled frames per clip.
    pub frames: usize,
    pub patch_size: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub dim: usize,
    /// Object tokens per frame.
    pub objects: usize,
    pub depth: usize,
    pub heads: usize,
    pub image_size: usize,
}

impl ModelConfig {
    pub fn new(image_size: usize, patch_size: usize, dim: usize, heads: usize, depth: usize, frames: usize, objects: usize) -> Self {
        let grid = if patch_size == 0 { 0 } else { image_size / patch_size };
        ModelConfig {
            frames,
            patch_size,
            grid_h: grid,
            grid_w: grid,
            dim,
            objects,
            depth,
            heads,
            image_size,
        }
    }

    /// The small configuration used for desk-scale runs.
    pub fn toy() -> Self {
        ModelConfig::new(32, 8, 32, 4, 2, 8, 4)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return fail(format!("image_size {} not divisible by patch_size {}", self.image_size, self.patch_size));
        }
        if self.grid_h != self.image_size / self.patch_size || self.grid_w != self.image_size / self.patch_size {
            return fail("grid must equal image_size / patch_size".into());
        }
        if self.grid_h * self.grid_w == 0 {
            return fail("empty patch grid".into());
        }
        if self.heads == 0 || self.dim == 0 || self.dim % self.heads != 0 {
            return fail(format!("dim {} not divisible by heads {}", self.dim, self.heads));
        }
        if self.objects == 0 {
            return fail("need at least one object token".into());
        }
        if self.frames == 0 {
            return fail("need at least one frame".into());
        }
        Ok(())
    }

    pub fn patches_per_frame(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn patch_len(&self) -> usize {
        self.patch_size * self.patch_size * CHANNELS
    }

    /// `T·H·W + T·n`.
    pub fn sequence_len(&self, frames: usize) -> usize {
        frames * self.patches_per_frame() + frames * self.objects
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BlockLayout {
    pub norm1_gain: usize,
    pub norm1_bias: usize,
    pub q_weight: usize,
    pub q_bias: usize,
    /// Keys carry no bias; it would shift whole softmax rows.
    pub k_weight: usize,
    pub v_weight: usize,
    pub v_bias: usize,
    pub out_weight: usize,
    pub out_bias: usize,
    pub norm2_gain: usize,
    pub norm2_bias: usize,
    pub fc1_weight: usize,
    pub fc1_bias: usize,
    pub fc2_weight: usize,
    pub fc2_bias: usize,
}

/// Index of every parameter tensor.
#[derive(Clone, Debug)]
pub struct Layout {
    pub patch_weight: usize,
    pub patch_bias: usize,
    pub pos_spatial: usize,
    pub pos_temporal: usize,
    pub prompts: usize,
    pub blocks: Vec<BlockLayout>,
    pub norm_gain: usize,
    pub norm_bias: usize,
    pub box_weight: usize,
    pub box_bias: usize,
    pub exist_weight: usize,
    pub exist_bias: usize,
    pub contact_weight: usize,
    pub contact_bias: usize,
    pub pnr_weight: usize,
    pub pnr_bias: usize,
    pub osc_weight: usize,
    pub osc_bias: usize,
    pub fc_weight: usize,
    pub fc_bias: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    Zeros,
    Ones,
    Embedding,
    /// Normal with std `1/sqrt(fan_in)`.
    Linear,
    Identity,
    /// Fixed 2-D sine/cosine table over the patch grid.
    SinCos2d,
}

struct Spec {
    name: String,
    rows: usize,
    cols: usize,
    init: Init,
}

fn build_layout(cfg: &ModelConfig) -> (Layout, Vec<Spec>) {
    let mut specs: Vec<Spec> = Vec::new();
    let mut add = |name: String, rows: usize, cols: usize, init: Init| {
        specs.push(Spec { name, rows, cols, init });
        specs.len() - 1
    };
    let d = cfg.dim;
    let hidden = MLP_RATIO * d;
    let patch_weight = add("patch.weight".into(), cfg.patch_len(), d, Init::Linear);
    let patch_bias = add("patch.bias".into(), 1, d, Init::Zeros);
    let pos_spatial = add("pos.spatial".into(), cfg.patches_per_frame(), d, Init::SinCos2d);
    let pos_temporal = add("pos.temporal".into(), cfg.frames, d, Init::Embedding);
    let prompts = add("object.prompts".into(), cfg.objects, d, Init::Embedding);
    let mut blocks = Vec::with_capacity(cfg.depth);
    for b in 0..cfg.depth {
        let p = |s: &str| format!("blocks.{b}.{s}");
        blocks.push(BlockLayout {
            norm1_gain: add(p("norm1.gain"), 1, d, Init::Ones),
            norm1_bias: add(p("norm1.bias"), 1, d, Init::Zeros),
            q_weight: add(p("attn.q.weight"), d, d, Init::Linear),
            q_bias: add(p("attn.q.bias"), 1, d, Init::Zeros),
            k_weight: add(p("attn.k.weight"), d, d, Init::Linear),
            v_weight: add(p("attn.v.weight"), d, d, Init::Linear),
            v_bias: add(p("attn.v.bias"), 1, d, Init::Zeros),
            out_weight: add(p("attn.out.weight"), d, d, Init::Linear),
            out_bias: add(p("attn.out.bias"), 1, d, Init::Zeros),
            norm2_gain: add(p("norm2.gain"), 1, d, Init::Ones),
            norm2_bias: add(p("norm2.bias"), 1, d, Init::Zeros),
            fc1_weight: add(p("mlp.fc1.weight"), d, hidden, Init::Linear),
            fc1_bias: add(p("mlp.fc1.bias"), 1, hidden, Init::Zeros),
            fc2_weight: add(p("mlp.fc2.weight"), hidden, d, Init::Linear),
            fc2_bias: add(p("mlp.fc2.bias"), 1, d, Init::Zeros),
        });
    }
    let layout = Layout {
        patch_weight,
        patch_bias,
        pos_spatial,
        pos_temporal,
        prompts,
        blocks,
        norm_gain: add("norm.gain".into(), 1, d, Init::Ones),
        norm_bias: add("norm.bias".into(), 1, d, Init::Zeros),
        box_weight: add("head.box.weight".into(), d, 4, Init::Linear),
        box_bias: add("head.box.bias".into(), 1, 4, Init::Zeros),
        exist_weight: add("head.exist.weight".into(), d, 1, Init::Linear),
        exist_bias: add("head.exist.bias".into(), 1, 1, Init::Zeros),
        contact_weight: add("head.contact.weight".into(), 2 * d, 2, Init::Linear),
        contact_bias: add("head.contact.bias".into(), 1, 2, Init::Zeros),
        pnr_weight: add("head.pnr.weight".into(), d, 1, Init::Linear),
        pnr_bias: add("head.pnr.bias".into(), 1, 1, Init::Zeros),
        osc_weight: add("head.osc.weight".into(), d, 1, Init::Linear),
        osc_bias: add("head.osc.bias".into(), 1, 1, Init::Zeros),
        fc_weight: add("consistency.fc.weight".into(), d, d, Init::Identity),
        fc_bias: add("consistency.fc.bias".into(), 1, d, Init::Zeros),
    };
    (layout, specs)
}

/// Row `y·W + x` holds sines and cosines of `y` in the first half of the
/// columns and of `x` in the second, at geometrically spaced frequencies.
fn sincos_2d(h: usize, w: usize, d: usize) -> Mat {
    let half = d / 2;
    let quarter = (half / 2).max(1);
    let mut m = Mat::zeros(h * w, d);
    for y in 0..h {
        for x in 0..w {
            let row = m.row_mut(y * w + x);
            for (offset, pos) in [(0, y), (half, x)] {
                for k in 0..half {
                    let freq = 1.0 / 10_000f64.powf((k % quarter) as f64 / quarter as f64);
                    let a = pos as f64 * freq;
                    row[offset + k] = if k < quarter { a.sin() } else { a.cos() };
                }
            }
        }
    }
    m
}

/// All learnable tensors for one [`ModelConfig`].
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    pub config: ModelConfig,
    pub names: Vec<String>,
    pub tensors: Vec<Mat>,
}

impl Parameters {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (_, specs) = build_layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embed = Normal::new(0.0, EMBED_STD).expect("valid std");
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for s in specs {
            let m = match s.init {
                Init::Zeros => Mat::zeros(s.rows, s.cols),
                Init::Ones => Mat::filled(s.rows, s.cols, 1.0),
                Init::Identity => Mat::identity(s.rows),
                Init::SinCos2d => sincos_2d(config.grid_h, config.grid_w, s.cols),
                Init::Embedding => Mat::from_vec(s.rows, s.cols, (0..s.rows * s.cols).map(|_| embed.sample(&mut rng)).collect()),
                Init::Linear => {
                    let n = Normal::new(0.0, 1.0 / (s.rows as f64).sqrt()).expect("valid std");
                    Mat::from_vec(s.rows, s.cols, (0..s.rows * s.cols).map(|_| n.sample(&mut rng)).collect())
                }
            };
            names.push(s.name);
            tensors.push(m);
        }
        Ok(Parameters { config, names, tensors })
    }

    /// Checks that names and shapes match the layout of `config`.
    pub fn from_parts(config: ModelConfig, names: Vec<String>, tensors: Vec<Mat>) -> Result<Self> {
        config.validate()?;
        let (_, specs) = build_layout(&config);
        if specs.len() != names.len() || names.len() != tensors.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                specs.len(),
                names.len()
            )));
        }
        for ((s, n), t) in specs.iter().zip(&names).zip(&tensors) {
            if &s.name != n || (s.rows, s.cols) != t.shape() {
                return Err(Error::Config(format!(
                    "parameter {n} {:?} does not match expected {} {:?}",
                    t.shape(),
                    s.name,
                    (s.rows, s.cols)
                )));
            }
        }
        Ok(Parameters { config, names, tensors })
    }

    pub fn layout(&self) -> Layout {
        build_layout(&self.config).0
    }

    pub fn zeros_like(&self) -> Vec<Mat> {
        self.tensors.iter().map(|t| Mat::zeros(t.rows, t.cols)).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Mat::len).sum()
    }

    fn var(&self, g: &mut Graph, index: usize) -> Var {
        g.param(index, &self.tensors[index])
    }
}

/// Final-layer token representations for one input.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    /// `T·H·W × d`, frame-major.
    pub patches: Var,
    /// `T·n × d`, frame-major.
    pub objects: Var,
    pub frames: usize,
}

fn check_frames(cfg: &ModelConfig, frames: &FrameStack) -> Result<()> {
    if frames.height != cfg.image_size || frames.width != cfg.image_size {
        return Err(Error::Argument(format!(
            "frames are {}x{}, model expects {}x{}",
            frames.height, frames.width, cfg.image_size, cfg.image_size
        )));
    }
    if frames.count == 0 || frames.count > cfg.frames {
        return Err(Error::Argument(format!(
            "got {} frames, model accepts 1..={}",
            frames.count, cfg.frames
        )));
    }
    Ok(())
}

/// Pixels are mapped from `[0, 1]` to `[-1, 1]` on the way in.
const PIXEL_CENTER: f64 = 0.5;
const PIXEL_SCALE: f64 = 2.0;

/// Flattens each `p × p` patch of each frame into a row, ordered
/// `(frame, grid row, grid col)` with columns `(ky, kx, channel)`.
pub fn extract_patches(cfg: &ModelConfig, frames: &FrameStack) -> Mat {
    let p = cfg.patch_size;
    let per_frame = cfg.patches_per_frame();
    let mut out = Mat::zeros(frames.count * per_frame, cfg.patch_len());
    for t in 0..frames.count {
        for gy in 0..cfg.grid_h {
            for gx in 0..cfg.grid_w {
                let row = out.row_mut(t * per_frame + gy * cfg.grid_w + gx);
                let mut c = 0;
                for ky in 0..p {
                    for kx in 0..p {
                        let px = frames.pixel(t, gy * p + ky, gx * p + kx);
                        for (dst, v) in row[c..c + 3].iter_mut().zip(px) {
                            *dst = (v - PIXEL_CENTER) * PIXEL_SCALE;
                        }
                        c += 3;
                    }
                }
            }
        }
    }
    out
}

/// Patch tokens with spatial and temporal embeddings added: `T·H·W × d`.
pub fn patchify(g: &mut Graph, params: &Parameters, frames: &FrameStack) -> Result<Var> {
    let cfg = &params.config;
    check_frames(cfg, frames)?;
    let lay = params.layout();
    let patches = g.constant(extract_patches(cfg, frames));
    let w = params.var(g, lay.patch_weight);
    let b = params.var(g, lay.patch_bias);
    let x = g.matmul(patches, w);
    let x = g.add_row(x, b);
    let hw = cfg.patches_per_frame();
    let spatial = params.var(g, lay.pos_spatial);
    let spatial = g.gather_rows(spatial, (0..frames.count).flat_map(|_| 0..hw).collect());
    let temporal = params.var(g, lay.pos_temporal);
    let temporal = g.gather_rows(temporal, (0..frames.count).flat_map(|t| std::iter::repeat_n(t, hw)).collect());
    let x = g.add(x, spatial);
    Ok(g.add(x, temporal))
}

/// Object tokens `o_i + r_t` for `frames` frames: `T·n × d`.
pub fn init_object_tokens(g: &mut Graph, params: &Parameters, frames: usize) -> Result<Var> {
    let cfg = &params.config;
    if frames == 0 || frames > cfg.frames {
        return Err(Error::Argument(format!("got {frames} frames, model accepts 1..={}", cfg.frames)));
    }
    let lay = params.layout();
    let n = cfg.objects;
    let prompts = params.var(g, lay.prompts);
    let prompts = g.gather_rows(prompts, (0..frames).flat_map(|_| 0..n).collect());
    let temporal = params.var(g, lay.pos_temporal);
    let temporal = g.gather_rows(temporal, (0..frames).flat_map(|t| std::iter::repeat_n(t, n)).collect());
    Ok(g.add(prompts, temporal))
}

fn linear(g: &mut Graph, params: &Parameters, x: Var, weight: usize, bias: usize) -> Var {
    let w = params.var(g, weight);
    let b = params.var(g, bias);
    let y = g.matmul(x, w);
    g.add_row(y, b)
}

fn attention_block(g: &mut Graph, params: &Parameters, block: &BlockLayout, x: Var) -> Var {
    let cfg = &params.config;
    let head_dim = cfg.dim / cfg.heads;
    let scale = 1.0 / (head_dim as f64).sqrt();

    let gain = params.var(g, block.norm1_gain);
    let bias = params.var(g, block.norm1_bias);
    let h = g.layer_norm(x, gain, bias);
    let q = linear(g, params, h, block.q_weight, block.q_bias);
    let kw = params.var(g, block.k_weight);
    let k = g.matmul(h, kw);
    let v = linear(g, params, h, block.v_weight, block.v_bias);
    let mut heads = Vec::with_capacity(cfg.heads);
    for i in 0..cfg.heads {
        let qh = g.slice_cols(q, i * head_dim, head_dim);
        let kh = g.slice_cols(k, i * head_dim, head_dim);
        let vh = g.slice_cols(v, i * head_dim, head_dim);
        let scores = g.matmul_bt(qh, kh);
        let scores = g.scale(scores, scale);
        let attn = g.softmax_rows(scores);
        heads.push(g.matmul(attn, vh));
    }
    let merged = g.concat_cols(&heads);
    let out = linear(g, params, merged, block.out_weight, block.out_bias);
    let x = g.add(x, out);

    let gain = params.var(g, block.norm2_gain);
    let bias = params.var(g, block.norm2_bias);
    let h = g.layer_norm(x, gain, bias);
    let h = linear(g, params, h, block.fc1_weight, block.fc1_bias);
    let h = g.gelu(h);
    let h = linear(g, params, h, block.fc2_weight, block.fc2_bias);
    g.add(x, h)
}

/// Runs the transformer over a clip (or a one-frame image).
pub fn forward(g: &mut Graph, params: &Parameters, frames: &FrameStack) -> Result<Encoded> {
    if !frames.data.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("non-finite input pixels".into()));
    }
    let lay = params.layout();
    let patches = patchify(g, params, frames)?;
    let objects = init_object_tokens(g, params, frames.count)?;
    let mut x = g.concat_rows(&[patches, objects]);
    for block in &lay.blocks {
        x = attention_block(g, params, block, x);
    }
    let gain = params.var(g, lay.norm_gain);
    let bias = params.var(g, lay.norm_bias);
    let x = g.layer_norm(x, gain, bias);
    let patch_rows = frames.count * params.config.patches_per_frame();
    let object_rows = frames.count * params.config.objects;
    Ok(Encoded {
        patches: g.slice_rows(x, 0, patch_rows),
        objects: g.slice_rows(x, patch_rows, object_rows),
        frames: frames.count,
    })
}

/// Mean over all patch tokens: `1 × d`.
pub fn pool_cls(g: &mut Graph, patches: Var) -> Var {
    g.mean_rows(patches)
}

/// One logit per frame from that frame's mean patch token: `T × 1`.
pub fn predict_frame_scores(g: &mut Graph, params: &Parameters, enc: &Encoded) -> Var {
    let lay = params.layout();
    let hw = params.config.patches_per_frame();
    let pooled: Vec<Var> = (0..enc.frames)
        .map(|t| {
            let rows = g.slice_rows(enc.patches, t * hw, hw);
            g.mean_rows(rows)
        })
        .collect();
    let pooled = g.concat_rows(&pooled);
    linear(g, params, pooled, lay.pnr_weight, lay.pnr_bias)
}

/// Object-state-change logit from the pooled clip vector: `1 × 1`.
pub fn predict_osc(g: &mut Graph, params: &Parameters, cls: Var) -> Var {
    let lay = params.layout();
    linear(g, params, cls, lay.osc_weight, lay.osc_bias)
}

/// Consistency projection applied to clip object tokens.
pub fn consistency_fc(g: &mut Graph, params: &Parameters, tokens: Var) -> Var {
    let lay = params.layout();
    linear(g, params, tokens, lay.fc_weight, lay.fc_bias)
}

/// Graph nodes of a hand-object graph prediction.
#[derive(Clone, Copy, Debug)]
pub struct HaogHead {
    /// `4 × 4`: per slot `(cx, cy, w, h)` after a sigmoid.
    pub boxes: Var,
    /// `4 × 1` existence logits.
    pub exist: Var,
    /// `2 × 2` contact logits, one row per hand.
    pub contact: Var,
}

/// Hand-object graph head over the `n = 4` object tokens of one frame.
pub fn predict_haog(g: &mut Graph, params: &Parameters, tokens: Var) -> Result<HaogHead> {
    let (rows, _) = g.shape(tokens);
    if rows != SLOTS {
        return Err(Error::Config(format!("hand-object graph head needs {SLOTS} object tokens, got {rows}")));
    }
    let lay = params.layout();
    let raw = linear(g, params, tokens, lay.box_weight, lay.box_bias);
    let boxes = g.sigmoid(raw);
    let exist = linear(g, params, tokens, lay.exist_weight, lay.exist_bias);
    let hands = g.slice_rows(tokens, 0, HANDS);
    let objects = g.slice_rows(tokens, HANDS, HANDS);
    let pairs = g.concat_cols(&[hands, objects]);
    let contact = linear(g, params, pairs, lay.contact_weight, lay.contact_bias);
    Ok(HaogHead { boxes, exist, contact })
}

/// Plain-value hand-object graph prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct HaogPrediction {
    /// `(cx, cy, w, h)` per slot, each in `(0, 1)`.
    pub boxes: [[f64; 4]; SLOTS],
    pub exist_logits: [f64; SLOTS],
    pub contact_logits: [[f64; 2]; HANDS],
}

impl HaogPrediction {
    pub fn from_head(g: &Graph, head: &HaogHead) -> Self {
        let b = g.value(head.boxes);
        let e = g.value(head.exist);
        let c = g.value(head.contact);
        let mut out = HaogPrediction {
            boxes: [[0.0; 4]; SLOTS],
            exist_logits: [0.0; SLOTS],
            contact_logits: [[0.0; 2]; HANDS],
        };
        for j in 0..SLOTS {
            out.boxes[j].copy_from_slice(b.row(j));
            out.exist_logits[j] = e.data[j];
        }
        for k in 0..HANDS {
            out.contact_logits[k].copy_from_slice(c.row(k));
        }
        out
    }

    /// Slot `j` as a corner box clipped to the unit square.
    pub fn corner_box(&self, j: usize) -> BoundingBox {
        let [cx, cy, w, h] = self.boxes[j];
        BoundingBox::from_center_size(cx, cy, w, h)
    }
}

/// Inference-only helpers over frozen parameters.
impl Parameters {
    /// Final object tokens of `frames` as a plain matrix (`T·n × d`).
    pub fn object_tokens(&self, frames: &FrameStack) -> Result<Mat> {
        let mut g = Graph::new();
        let enc = forward(&mut g, self, frames)?;
        Ok(g.value(enc.objects).clone())
    }

    /// Hand-object graph prediction for a still image.
    pub fn predict_image(&self, image: &FrameStack) -> Result<HaogPrediction> {
        if image.count != 1 {
            return Err(Error::Argument("predict_image expects a single frame".into()));
        }
        let mut g = Graph::new();
        let enc = forward(&mut g, self, image)?;
        let head = predict_haog(&mut g, self, enc.objects)?;
        Ok(HaogPrediction::from_head(&g, &head))
    }

    /// Per-frame logits and the state-change logit for a clip.
    pub fn score_clip(&self, frames: &FrameStack) -> Result<(Vec<f64>, f64)> {
        let mut g = Graph::new();
        let enc = forward(&mut g, self, frames)?;
        let scores = predict_frame_scores(&mut g, self, &enc);
        let cls = pool_cls(&mut g, enc.patches);
        let osc = predict_osc(&mut g, self, cls);
        Ok((g.value(scores).data.clone(), g.value(osc).item()))
    }
}
