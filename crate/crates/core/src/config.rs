//! `key = value` run configuration. Blank lines and `#` comments are
//! ignored; unknown or repeated keys are errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::ModelConfig;
use crate::synth::GenConfig;
use crate::train::{default_scale_range, OptimizerConfig, Sampling};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub gen: GenConfig,
    pub optimizer: OptimizerConfig,
    pub weights: LossWeights,
    pub sampling: Sampling,
    /// Write `epoch_<n>.svck` every this many epochs (0 disables).
    pub checkpoint_every: usize,
    pub gradcheck_samples: usize,
    pub gradcheck_epsilon: f64,
    /// `(temporal, spatial)` view counts for evaluation.
    pub eval_views: (usize, usize),
    /// Dataset directory, relative paths resolved against the config file.
    pub data_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::toy();
        RunConfig {
            model,
            gen: GenConfig {
                image_size: model.image_size,
                grid_frames: model.frames,
                ..GenConfig::default()
            },
            optimizer: OptimizerConfig::default(),
            weights: LossWeights::default(),
            sampling: Sampling {
                scale_range: default_scale_range(model.image_size),
                ..Sampling::default()
            },
            checkpoint_every: 50,
            gradcheck_samples: 200,
            gradcheck_epsilon: 1e-5,
            eval_views: (1, 1),
            data_dir: None,
        }
    }
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::parse(key, format!("cannot parse {raw:?}")))
}

fn flag(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::parse(key, format!("expected true or false, got {raw:?}"))),
    }
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut c = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        let mut grid_set = false;
        let (mut img, mut patch, mut dim, mut heads, mut depth, mut frames, mut objects) = (
            c.model.image_size,
            c.model.patch_size,
            c.model.dim,
            c.model.heads,
            c.model.depth,
            c.model.frames,
            c.model.objects,
        );
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (key, raw) = (key.trim(), raw.trim());
            if seen.iter().any(|k| k == key) {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", n + 1)));
            }
            seen.push(key.to_string());
            match key {
                "image_size" => img = value(key, raw)?,
                "patch_size" => patch = value(key, raw)?,
                "dim" => dim = value(key, raw)?,
                "heads" => heads = value(key, raw)?,
                "depth" => depth = value(key, raw)?,
                "num_frames" => frames = value(key, raw)?,
                "object_tokens" => objects = value(key, raw)?,
                "raw_frames" => c.gen.raw_frames = value(key, raw)?,
                "fps" => c.gen.fps = value(key, raw)?,
                "speed_min" => c.gen.speed_min = value(key, raw)?,
                "speed_max" => c.gen.speed_max = value(key, raw)?,
                "contact_threshold" => c.gen.contact_threshold = value(key, raw)?,
                "hand_presence" => c.gen.hand_presence = value(key, raw)?,
                "object_presence" => c.gen.object_presence = value(key, raw)?,
                "no_change_prob" => c.gen.no_change_prob = value(key, raw)?,
                "noise_amplitude" => c.gen.noise_amplitude = value(key, raw)?,
                "pnr_on_grid" => c.gen.pnr_on_grid = flag(key, raw)?,
                "grid_frames" => {
                    c.gen.grid_frames = value(key, raw)?;
                    grid_set = true;
                }
                "num_images" => c.gen.num_images = value(key, raw)?,
                "num_clips" => c.gen.num_clips = value(key, raw)?,
                "seed" => c.gen.seed = value(key, raw)?,
                "base_lr" => c.optimizer.base_lr = value(key, raw)?,
                "beta1" => c.optimizer.beta1 = value(key, raw)?,
                "beta2" => c.optimizer.beta2 = value(key, raw)?,
                "epsilon" => c.optimizer.epsilon = value(key, raw)?,
                "total_steps" => c.optimizer.total_steps = value(key, raw)?,
                "images_per_batch" => c.optimizer.images_per_batch = value(key, raw)?,
                "videos_per_batch" => c.optimizer.videos_per_batch = value(key, raw)?,
                "lambda_con" => c.weights.lambda_con = value(key, raw)?,
                "lambda_haog" => c.weights.lambda_haog = value(key, raw)?,
                "lambda_vid" => c.weights.lambda_vid = value(key, raw)?,
                "scale_min" => c.sampling.scale_range.0 = value(key, raw)?,
                "scale_max" => c.sampling.scale_range.1 = value(key, raw)?,
                "temporal_jitter" => c.sampling.temporal_jitter = flag(key, raw)?,
                "checkpoint_every" => c.checkpoint_every = value(key, raw)?,
                "gradcheck_samples" => c.gradcheck_samples = value(key, raw)?,
                "gradcheck_epsilon" => c.gradcheck_epsilon = value(key, raw)?,
                "eval_views" => {
                    c.eval_views = crate::eval::ViewSpec::parse_counts(raw).map_err(|e| Error::parse(key, e.to_string()))?
                }
                "data_dir" => {
                    let p = PathBuf::from(raw);
                    c.data_dir = Some(match base_dir {
                        Some(b) if p.is_relative() => b.join(p),
                        _ => p,
                    });
                }
                other => return Err(Error::Config(format!("line {}: unknown key `{other}`", n + 1))),
            }
        }
        c.model = ModelConfig::new(img, patch, dim, heads, depth, frames, objects);
        c.gen.image_size = img;
        if !grid_set {
            c.gen.grid_frames = frames;
        }
        let (lo, hi) = default_scale_range(img);
        if !seen.iter().any(|k| k == "scale_min") {
            c.sampling.scale_range.0 = lo;
        }
        if !seen.iter().any(|k| k == "scale_max") {
            c.sampling.scale_range.1 = c.sampling.scale_range.0.max(hi);
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text, path.parent())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.gen.validate(self.model.patch_size)?;
        self.optimizer.validate()?;
        self.weights.validate()?;
        let (lo, hi) = self.sampling.scale_range;
        if lo < self.model.image_size || hi < lo {
            return Err(Error::Config(format!(
                "scale range {lo}..{hi} must start at or above image_size {}",
                self.model.image_size
            )));
        }
        if self.gen.raw_frames < self.model.frames {
            return Err(Error::Config("raw_frames must be at least num_frames".into()));
        }
        if self.model.frames < 2 {
            return Err(Error::Config("num_frames must be at least 2".into()));
        }
        if self.gradcheck_samples == 0 || !(self.gradcheck_epsilon > 0.0) {
            return Err(Error::Config("gradcheck needs positive samples and epsilon".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_toy_default() {
        let c = RunConfig::parse("# nothing\n\n", None).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.sampling.scale_range, (32, 36));
    }

    #[test]
    fn keys_are_applied() {
        let c = RunConfig::parse(
            "dim = 16\nheads=2\ntotal_steps = 5 # short\nlambda_con = 0\ntemporal_jitter = false\neval_views = 2x3\ndata_dir = d\n",
            Some(Path::new("/cfg")),
        )
        .unwrap();
        assert_eq!(c.model.dim, 16);
        assert_eq!(c.model.heads, 2);
        assert_eq!(c.optimizer.total_steps, 5);
        assert_eq!(c.weights.lambda_con, 0.0);
        assert!(!c.sampling.temporal_jitter);
        assert_eq!(c.eval_views, (2, 3));
        assert_eq!(c.data_dir, Some(PathBuf::from("/cfg/d")));
    }

    #[test]
    fn bad_input_is_rejected() {
        assert!(RunConfig::parse("colour = red", None).unwrap_err().to_string().contains("unknown key"));
        assert!(RunConfig::parse("dim = 4\ndim = 4", None).is_err());
        assert!(RunConfig::parse("dim = many", None).is_err());
        assert!(RunConfig::parse("just words", None).is_err());
        assert!(RunConfig::parse("heads = 5", None).is_err());
        assert!(RunConfig::parse("scale_min = 16", None).is_err());
    }
}
