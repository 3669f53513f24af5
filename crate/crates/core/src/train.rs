//! Mixed image/video training with Adam and a half-period cosine schedule.
//!
//! Every sample gets its own tape. An image contributes
//! `(λ_haog / N_img)·L_haog` and a clip contributes
//! `(λ_vid / N_clip)·L_vid + (λ_con / N_clip)·L_con`, so summing the
//! per-sample gradients in batch order gives the gradient of the weighted
//! batch total. Samples may run on a worker pool; the sum never depends on
//! scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::frames::FrameStack;
use crate::haog::{Haog, HANDS, SLOTS};
use crate::losses::{loss_consistency, loss_haog, loss_video, HaogTerms, LossBreakdown, LossWeights};
use crate::model::{forward, pool_cls, predict_frame_scores, predict_haog, predict_osc, ModelConfig, Parameters};
use crate::synth::{
    apply_crop, crop_geometry, derive_seed, nearest_sample, resize_crop, sample_frames, training_range, CropMode,
    VideoClipSample,
};
use crate::tensor::Mat;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub total_steps: usize,
    pub images_per_batch: usize,
    pub videos_per_batch: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            base_lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            total_steps: 300,
            images_per_batch: 16,
            videos_per_batch: 8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return fail("base_lr must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return fail("epsilon must be positive");
        }
        if self.total_steps == 0 {
            return fail("total_steps must be positive");
        }
        if self.images_per_batch == 0 && self.videos_per_batch == 0 {
            return fail("a batch needs at least one image or video");
        }
        Ok(())
    }
}

/// Parameters plus Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: Parameters,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
    pub step: usize,
    pub seed: u64,
}

impl TrainState {
    pub fn new(params: Parameters, seed: u64) -> Self {
        let m = params.zeros_like();
        let v = params.zeros_like();
        TrainState { params, m, v, step: 0, seed }
    }
}

/// `base · ½(1 + cos(π·step/total))`.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Argument("total_steps must be positive".into()));
    }
    if step > total_steps {
        return Err(Error::Argument(format!("step {step} beyond total_steps {total_steps}")));
    }
    let phase = std::f64::consts::PI * step as f64 / total_steps as f64;
    Ok(base_lr * 0.5 * (1.0 + phase.cos()))
}

/// One bias-corrected Adam step at `cosine_lr(state.step)`. Returns the rate used.
pub fn adam_update(state: &mut TrainState, grads: &[Mat], opt: &OptimizerConfig) -> Result<f64> {
    if grads.len() != state.params.tensors.len() {
        return Err(Error::Argument(format!(
            "{} gradient tensors for {} parameters",
            grads.len(),
            state.params.tensors.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if g.shape() != state.params.tensors[i].shape() {
            return Err(Error::Argument(format!("gradient shape mismatch for {}", state.params.names[i])));
        }
        if !g.is_finite() {
            return Err(Error::Numeric(format!("non-finite gradient for {}", state.params.names[i])));
        }
    }
    let lr = cosine_lr(state.step, opt.total_steps, opt.base_lr)?;
    let t = (state.step + 1) as i32;
    let c1 = 1.0 - opt.beta1.powi(t);
    let c2 = 1.0 - opt.beta2.powi(t);
    for (i, g) in grads.iter().enumerate() {
        let p = &mut state.params.tensors[i].data;
        let m = &mut state.m[i].data;
        let v = &mut state.v[i].data;
        for k in 0..g.data.len() {
            let gk = g.data[k];
            m[k] = opt.beta1 * m[k] + (1.0 - opt.beta1) * gk;
            v[k] = opt.beta2 * v[k] + (1.0 - opt.beta2) * gk * gk;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + opt.epsilon);
        }
    }
    state.step += 1;
    Ok(lr)
}

/// A still image with its annotation, at model resolution.
#[derive(Clone, Debug)]
pub struct ImageExample {
    pub frames: FrameStack,
    pub haog: Haog,
}

/// `T` sampled, cropped frames with their labels.
#[derive(Clone, Debug)]
pub struct ClipExample {
    pub frames: FrameStack,
    /// Raw index of every sampled frame.
    pub raw_indices: Vec<usize>,
    /// Sampled position nearest the change frame.
    pub target: usize,
    pub osc_label: u8,
}

/// How raw clips become training inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sampling {
    /// Shorter-side scale range for the random crop.
    pub scale_range: (usize, usize),
    /// Random first/last frame per clip; off means the full `[0, F−1]` span.
    pub temporal_jitter: bool,
}

/// Shorter-side range for training crops at `size`: up to one eighth larger.
pub fn default_scale_range(size: usize) -> (usize, usize) {
    (size, size + size / 8)
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            scale_range: default_scale_range(32),
            temporal_jitter: true,
        }
    }
}

/// Samples `T` frames of `clip` and crops them for training.
pub fn prepare_clip(clip: &VideoClipSample, cfg: &ModelConfig, sampling: &Sampling, seed: u64) -> Result<ClipExample> {
    let raw = clip.frames.count;
    let (first, last) = if sampling.temporal_jitter {
        let cover = (clip.osc_label == 1).then_some(clip.pnr_index);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, 0));
        training_range(raw, cfg.frames, cover, &mut rng)?
    } else {
        (0, raw - 1)
    };
    let raw_indices = sample_frames(first, last, cfg.frames)?;
    let picked = clip.frames.select(&raw_indices);
    let frames = resize_crop(
        &picked,
        cfg.image_size,
        sampling.scale_range,
        CropMode::Train {
            seed: derive_seed(seed, 1, 0),
        },
    )?;
    let target = nearest_sample(&raw_indices, clip.pnr_index);
    Ok(ClipExample {
        frames,
        raw_indices,
        target,
        osc_label: clip.osc_label,
    })
}

/// Random scale and crop of a still image, with its graph mapped along.
/// Slots pushed fully out of view stop existing and lose their contact.
pub fn augment_image(ex: &ImageExample, crop_size: usize, scale_range: (usize, usize), seed: u64) -> Result<ImageExample> {
    let geo = crop_geometry(ex.frames.height, ex.frames.width, crop_size, scale_range, CropMode::Train { seed })?;
    let mut haog = ex.haog.clone();
    for j in 0..SLOTS {
        haog.boxes[j] = haog.boxes[j].and_then(|b| geo.map_box(&b));
        haog.exists[j] = u8::from(haog.boxes[j].is_some());
    }
    for k in 0..HANDS {
        if haog.exists[k] == 0 || haog.exists[k + 2] == 0 {
            haog.contact[k] = 0;
        }
    }
    Ok(ImageExample {
        frames: apply_crop(&ex.frames, &geo),
        haog,
    })
}

struct ImageOut {
    terms: HaogTerms,
    grads: Option<Vec<Mat>>,
}

struct ClipOut {
    l_vid: f64,
    l_con: f64,
    grads: Option<Vec<Mat>>,
}

pub(crate) fn image_graph(g: &mut Graph, params: &Parameters, ex: &ImageExample) -> Result<(Var, HaogTerms)> {
    if ex.frames.count != 1 {
        return Err(Error::Argument("image example must hold one frame".into()));
    }
    let enc = forward(g, params, &ex.frames)?;
    let head = predict_haog(g, params, enc.objects)?;
    let nodes = loss_haog(g, &head, &ex.haog);
    Ok((nodes.total, nodes.terms(g)))
}

/// Builds `L_vid` and `L_con` for one clip: once as a clip, once as `T` frames.
pub(crate) fn clip_graph(g: &mut Graph, params: &Parameters, ex: &ClipExample) -> Result<(Var, Var)> {
    let enc = forward(g, params, &ex.frames)?;
    let scores = predict_frame_scores(g, params, &enc);
    let cls = pool_cls(g, enc.patches);
    let osc = predict_osc(g, params, cls);
    let vid = loss_video(g, scores, ex.target, osc, ex.osc_label)?;
    let per_frame: Vec<Var> = (0..ex.frames.count)
        .map(|t| forward(g, params, &ex.frames.single(t)).map(|e| e.objects))
        .collect::<Result<_>>()?;
    let frame_tokens = g.concat_rows(&per_frame);
    let con = loss_consistency(g, params, enc.objects, frame_tokens)?;
    Ok((vid, con))
}

fn run_image(params: &Parameters, ex: &ImageExample, coeff: f64, want_grads: bool) -> Result<ImageOut> {
    let mut g = Graph::new();
    let (total, terms) = image_graph(&mut g, params, ex)?;
    let grads = want_grads.then(|| {
        let root = g.scale(total, coeff);
        let adj = g.backward(root);
        let mut out = params.zeros_like();
        g.accumulate_param_grads(&adj, &mut out);
        out
    });
    Ok(ImageOut { terms, grads })
}

fn run_clip(params: &Parameters, ex: &ClipExample, c_vid: f64, c_con: f64, want_grads: bool) -> Result<ClipOut> {
    let mut g = Graph::new();
    let (vid, con) = clip_graph(&mut g, params, ex)?;
    let l_vid = g.value(vid).item();
    let l_con = g.value(con).item();
    let grads = want_grads.then(|| {
        let a = g.scale(vid, c_vid);
        let b = g.scale(con, c_con);
        let root = g.add(a, b);
        let adj = g.backward(root);
        let mut out = params.zeros_like();
        g.accumulate_param_grads(&adj, &mut out);
        out
    });
    Ok(ClipOut { l_vid, l_con, grads })
}

/// Maps `f` over `items` on up to `threads` workers, keeping input order.
pub fn ordered_map<T, R, F>(items: &[T], threads: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| items.par_iter().map(f).collect())
}

/// Batch loss breakdown and, when requested, its gradient.
pub struct BatchResult {
    pub breakdown: LossBreakdown,
    pub grads: Option<Vec<Mat>>,
}

fn run_batch(
    params: &Parameters,
    images: &[ImageExample],
    clips: &[ClipExample],
    weights: &LossWeights,
    threads: usize,
    want_grads: bool,
) -> Result<BatchResult> {
    weights.validate()?;
    if images.is_empty() && clips.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let n_img = images.len().max(1) as f64;
    let n_clip = clips.len().max(1) as f64;
    let c_haog = weights.lambda_haog / n_img;
    let c_vid = weights.lambda_vid / n_clip;
    let c_con = weights.lambda_con / n_clip;

    let image_outs = ordered_map(images, threads, |ex| run_image(params, ex, c_haog, want_grads))?;
    let clip_outs = ordered_map(clips, threads, |ex| run_clip(params, ex, c_vid, c_con, want_grads))?;

    let mut haog = HaogTerms::default();
    for o in &image_outs {
        haog.box_giou += o.terms.box_giou;
        haog.box_l1 += o.terms.box_l1;
        haog.existence += o.terms.existence;
        haog.contact += o.terms.contact;
    }
    if !images.is_empty() {
        haog.box_giou /= n_img;
        haog.box_l1 /= n_img;
        haog.existence /= n_img;
        haog.contact /= n_img;
    }
    let mut l_vid = 0.0;
    let mut l_con = 0.0;
    for o in &clip_outs {
        l_vid += o.l_vid;
        l_con += o.l_con;
    }
    if !clips.is_empty() {
        l_vid /= n_clip;
        l_con /= n_clip;
    }
    let breakdown = LossBreakdown::new(l_vid, haog, l_con, weights);

    let grads = want_grads.then(|| {
        let mut total = params.zeros_like();
        let parts = image_outs.iter().filter_map(|o| o.grads.as_ref());
        let parts = parts.chain(clip_outs.iter().filter_map(|o| o.grads.as_ref()));
        for g in parts {
            for (acc, x) in total.iter_mut().zip(g) {
                acc.add_assign(x);
            }
        }
        total
    });
    Ok(BatchResult { breakdown, grads })
}

/// Gradient of `λ_con·L_con + λ_haog·L_haog + λ_vid·L_vid` over one batch.
pub fn compute_gradients(
    params: &Parameters,
    images: &[ImageExample],
    clips: &[ClipExample],
    weights: &LossWeights,
    threads: usize,
) -> Result<(Vec<Mat>, LossBreakdown)> {
    let r = run_batch(params, images, clips, weights, threads, true)?;
    Ok((r.grads.expect("gradients requested"), r.breakdown))
}

/// Loss breakdown only, without building adjoints.
pub fn evaluate_loss(
    params: &Parameters,
    images: &[ImageExample],
    clips: &[ClipExample],
    weights: &LossWeights,
    threads: usize,
) -> Result<LossBreakdown> {
    Ok(run_batch(params, images, clips, weights, threads, false)?.breakdown)
}

/// Loss over a whole dataset without augmentation: images as stored,
/// clips sampled on the full-length grid.
pub fn dataset_loss(params: &Parameters, data: &TrainData, weights: &LossWeights, threads: usize) -> Result<LossBreakdown> {
    let size = params.config.image_size;
    let fixed = Sampling {
        scale_range: (size, size),
        temporal_jitter: false,
    };
    let clips = data
        .clips
        .iter()
        .map(|c| prepare_clip(c, &params.config, &fixed, 0))
        .collect::<Result<Vec<_>>>()?;
    evaluate_loss(params, &data.images, &clips, weights, threads)
}

/// One line of the metrics log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    #[serde(flatten)]
    pub breakdown: LossBreakdown,
}

pub fn train_step(
    state: &mut TrainState,
    images: &[ImageExample],
    clips: &[ClipExample],
    weights: &LossWeights,
    opt: &OptimizerConfig,
    threads: usize,
) -> Result<StepRecord> {
    let step = state.step;
    let (grads, breakdown) = compute_gradients(&state.params, images, clips, weights, threads)?;
    let lr = adam_update(state, &grads, opt)?;
    Ok(StepRecord { step, lr, breakdown })
}

/// Images and raw clips to train on.
#[derive(Clone, Debug, Default)]
pub struct TrainData {
    pub images: Vec<ImageExample>,
    pub clips: Vec<VideoClipSample>,
}

/// Everything the loop needs besides data and state.
#[derive(Clone, Copy, Debug)]
pub struct TrainSettings {
    pub optimizer: OptimizerConfig,
    pub weights: LossWeights,
    pub sampling: Sampling,
    pub threads: usize,
}

/// Steps per pass over the clips (at least one).
pub fn steps_per_epoch(data: &TrainData, opt: &OptimizerConfig) -> usize {
    if data.clips.is_empty() || opt.videos_per_batch == 0 {
        let n = data.images.len().max(1);
        return n.div_ceil(opt.images_per_batch.max(1));
    }
    data.clips.len().div_ceil(opt.videos_per_batch)
}

fn cyclic<T: Clone>(items: &[T], step: usize, per_batch: usize) -> Vec<(usize, T)> {
    if items.is_empty() {
        return Vec::new();
    }
    (0..per_batch)
        .map(|k| {
            let i = (step * per_batch + k) % items.len();
            (i, items[i].clone())
        })
        .collect()
}

/// Builds the batch for `state.step`. Sampling and crops are seeded by
/// `(state.seed, step, sample index)`.
pub fn make_batch(
    state: &TrainState,
    data: &TrainData,
    settings: &TrainSettings,
) -> Result<(Vec<ImageExample>, Vec<ClipExample>)> {
    let opt = &settings.optimizer;
    let crop = state.params.config.image_size;
    let image_seed = derive_seed(state.seed, 1, state.step as u64);
    let images = cyclic(&data.images, state.step, opt.images_per_batch)
        .into_iter()
        .map(|(i, ex)| augment_image(&ex, crop, settings.sampling.scale_range, derive_seed(image_seed, 0, i as u64)))
        .collect::<Result<_>>()?;
    let clips = (0..if data.clips.is_empty() { 0 } else { opt.videos_per_batch })
        .map(|k| {
            let i = (state.step * opt.videos_per_batch + k) % data.clips.len();
            let seed = derive_seed(state.seed, 2 + state.step as u64, i as u64);
            prepare_clip(&data.clips[i], &state.params.config, &settings.sampling, seed)
        })
        .collect::<Result<_>>()?;
    Ok((images, clips))
}

/// Runs from `state.step` to `total_steps`, calling `on_step` after each update.
pub fn train<F>(state: &mut TrainState, data: &TrainData, settings: &TrainSettings, mut on_step: F) -> Result<()>
where
    F: FnMut(&StepRecord, &TrainState) -> Result<()>,
{
    settings.optimizer.validate()?;
    settings.weights.validate()?;
    if data.images.is_empty() && data.clips.is_empty() {
        return Err(Error::Argument("no training data".into()));
    }
    while state.step < settings.optimizer.total_steps {
        let (images, clips) = make_batch(state, data, settings)?;
        let record = train_step(state, &images, &clips, &settings.weights, &settings.optimizer, settings.threads)?;
        on_step(&record, state)?;
    }
    Ok(())
}

/// Parameter indices that only the hand-object graph head reads.
pub fn haog_head_indices(params: &Parameters) -> Vec<usize> {
    let l = params.layout();
    vec![
        l.box_weight,
        l.box_bias,
        l.exist_weight,
        l.exist_bias,
        l.contact_weight,
        l.contact_bias,
    ]
}

/// Parameter indices that only the keyframe and state-change heads read.
pub fn video_head_indices(params: &Parameters) -> Vec<usize> {
    let l = params.layout();
    vec![l.pnr_weight, l.pnr_bias, l.osc_weight, l.osc_bias]
}

/// Parameter indices of the consistency projection.
pub fn consistency_indices(params: &Parameters) -> Vec<usize> {
    let l = params.layout();
    vec![l.fc_weight, l.fc_bias]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_clip, gen_scene, GenConfig};

    fn toy_batch(n_img: usize, n_clip: usize) -> (Parameters, Vec<ImageExample>, Vec<ClipExample>) {
        let params = Parameters::init(ModelConfig::toy(), 3).unwrap();
        let gen = GenConfig::default();
        let images = (0..n_img)
            .map(|i| {
                let s = gen_scene(&gen, 100 + i as u64);
                ImageExample {
                    frames: s.pixels,
                    haog: s.haog,
                }
            })
            .collect();
        let sampling = Sampling::default();
        let clips = (0..n_clip)
            .map(|i| prepare_clip(&gen_clip(&gen, 200 + i as u64), &params.config, &sampling, i as u64).unwrap())
            .collect();
        (params, images, clips)
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 100, 1e-3).unwrap(), 1e-3);
        assert!(cosine_lr(100, 100, 1e-3).unwrap().abs() < 1e-18);
        assert!((cosine_lr(50, 100, 1e-3).unwrap() - 5e-4).abs() < 1e-18);
        assert!(cosine_lr(0, 0, 1e-3).is_err());
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let p = Parameters::init(ModelConfig::toy(), 1).unwrap();
        let mut s = TrainState::new(p.clone(), 0);
        s.m[0].data[0] = 0.5;
        let g = p.zeros_like();
        adam_update(&mut s, &g, &OptimizerConfig::default()).unwrap();
        assert_eq!(s.params.tensors[1..], p.tensors[1..]);
        assert_eq!(s.m[0].data[0], 0.45);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn adam_constant_gradient_moves_by_lr() {
        let p = Parameters::init(ModelConfig::toy(), 1).unwrap();
        let opt = OptimizerConfig {
            total_steps: 1_000_000,
            ..OptimizerConfig::default()
        };
        let mut s = TrainState::new(p.clone(), 0);
        let mut g = p.zeros_like();
        g[0].data[0] = 0.3;
        for _ in 0..200 {
            let before = s.params.tensors[0].data[0];
            let lr = adam_update(&mut s, &g, &opt).unwrap();
            let moved = before - s.params.tensors[0].data[0];
            assert!((moved / lr - 1.0).abs() < 1e-6, "{moved} vs {lr}");
        }
    }

    #[test]
    fn adam_rejects_non_finite() {
        let p = Parameters::init(ModelConfig::toy(), 1).unwrap();
        let mut s = TrainState::new(p.clone(), 0);
        let mut g = p.zeros_like();
        g[4].data[0] = f64::NAN;
        let err = adam_update(&mut s, &g, &OptimizerConfig::default()).unwrap_err();
        assert!(err.to_string().contains("object.prompts"), "{err}");
    }

    #[test]
    fn prepared_clip_labels_nearest_frame() {
        let gen = GenConfig::default();
        let cfg = ModelConfig::toy();
        for seed in 0..20 {
            let clip = gen_clip(&gen, seed);
            let ex = prepare_clip(&clip, &cfg, &Sampling::default(), seed).unwrap();
            assert_eq!(ex.frames.count, 8);
            assert_eq!(ex.raw_indices.len(), 8);
            assert!(ex.raw_indices.windows(2).all(|w| w[0] < w[1]));
            if clip.osc_label == 1 {
                assert!(ex.raw_indices[0] <= clip.pnr_index && clip.pnr_index <= ex.raw_indices[7]);
            }
            let d = ex.raw_indices[ex.target].abs_diff(clip.pnr_index);
            assert!(ex.raw_indices.iter().all(|i| i.abs_diff(clip.pnr_index) >= d));
        }
    }

    #[test]
    fn breakdown_matches_total_identity() {
        let (p, images, clips) = toy_batch(2, 1);
        let w = LossWeights::default();
        let b = evaluate_loss(&p, &images, &clips, &w, 1).unwrap();
        let want = 10.0 * b.l_con + 5.0 * b.l_haog + b.l_vid;
        assert!((b.l_total - want).abs() < 1e-12);
        let (_, b2) = compute_gradients(&p, &images, &clips, &w, 1).unwrap();
        assert_eq!(b, b2);
    }

    #[test]
    fn parallel_gradients_are_bitwise_sequential() {
        let (p, images, clips) = toy_batch(3, 2);
        let w = LossWeights::default();
        let (a, _) = compute_gradients(&p, &images, &clips, &w, 1).unwrap();
        let (b, _) = compute_gradients(&p, &images, &clips, &w, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_weight_silences_heads() {
        let (p, images, clips) = toy_batch(2, 1);
        let w = LossWeights {
            lambda_con: 0.0,
            lambda_haog: 0.0,
            lambda_vid: 1.0,
        };
        let (g, _) = compute_gradients(&p, &images, &clips, &w, 1).unwrap();
        for i in haog_head_indices(&p).into_iter().chain(consistency_indices(&p)) {
            assert!(g[i].data.iter().all(|&x| x == 0.0), "{}", p.names[i]);
        }
        assert!(video_head_indices(&p).iter().any(|&i| g[i].max_abs() > 0.0));
    }

    #[test]
    fn short_run_is_deterministic_and_descends() {
        let (p, images, _) = toy_batch(4, 0);
        let gen = GenConfig::default();
        let data = TrainData {
            images,
            clips: (0..2).map(|i| gen_clip(&gen, 50 + i)).collect(),
        };
        let settings = TrainSettings {
            optimizer: OptimizerConfig {
                total_steps: 6,
                images_per_batch: 4,
                videos_per_batch: 2,
                ..OptimizerConfig::default()
            },
            weights: LossWeights::default(),
            sampling: Sampling::default(),
            threads: 1,
        };
        let run = || {
            let mut s = TrainState::new(p.clone(), 11);
            let mut log = Vec::new();
            train(&mut s, &data, &settings, |r, _| {
                log.push(*r);
                Ok(())
            })
            .unwrap();
            (s, log)
        };
        let (s1, l1) = run();
        let (s2, l2) = run();
        assert_eq!(s1, s2);
        assert_eq!(l1, l2);
        assert_eq!(l1.len(), 6);
        assert!(l1[5].breakdown.l_total < l1[0].breakdown.l_total);
    }
}
