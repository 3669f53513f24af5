//! The `svit` command line.
//!
//! Every subcommand is a function of its config file, its seed and its
//! input files. Worker threads come from `SVIT_THREADS` (default 1).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::dataset::{read_annotations, Dataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalInput, EvalReport, ViewSpec};
use crate::gradcheck::{gradcheck, GradcheckReport};
use crate::haog::{Haog, HANDS, SLOTS, SLOT_NAMES};
use crate::model::Parameters;
use crate::synth::derive_seed;
use crate::train::{
    compute_gradients, evaluate_loss, prepare_clip, steps_per_epoch, train, ImageExample, Sampling, TrainSettings,
    TrainState,
};

/// Gradcheck fails above this relative error.
pub const GRADCHECK_LIMIT: f64 = 1e-4;

const PARAM_STREAM: u64 = 10;

#[derive(Debug, Parser)]
#[command(name = "svit", version, about = "Shared image/video transformer on synthetic hand-object data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset directory.
    GenData(GenDataArgs),
    /// Train a model and write checkpoints plus a metrics log.
    Train(TrainArgs),
    /// Score clips with a checkpoint and write report.json.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients of the full loss.
    Gradcheck(GradcheckArgs),
    /// Validate an annotation file and print corpus statistics.
    InspectHaog(InspectArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Warm start from these weights.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset directory; overrides `data_dir`.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// `<n_temporal>x<n_spatial>`; overrides `eval_views`.
    #[arg(long, value_parser = parse_views)]
    pub views: Option<(usize, usize)>,
    /// Dataset directory; overrides `data_dir`.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Check these weights instead of a fresh model.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// An annotation file or a dataset directory.
    pub annotations: PathBuf,
}

fn parse_views(text: &str) -> std::result::Result<(usize, usize), String> {
    ViewSpec::parse_counts(text).map_err(|e| e.to_string())
}

/// Reads `SVIT_THREADS`; unset means 1.
pub fn threads_from_env() -> std::result::Result<usize, String> {
    match std::env::var("SVIT_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(format!("SVIT_THREADS must be a positive integer, got {v:?}")),
        },
    }
}

pub fn run(cli: Cli, threads: usize) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => run_train(a, threads),
        Command::Eval(a) => run_eval(a, threads),
        Command::Gradcheck(a) => run_gradcheck(a, threads).map(|_| ()),
        Command::InspectHaog(a) => inspect(a),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Reads `dir` when given, otherwise renders the configured dataset.
fn load_data(cfg: &RunConfig, dir: Option<PathBuf>, seed: u64) -> Result<Dataset> {
    let data = match dir.or_else(|| cfg.data_dir.clone()) {
        Some(d) => Dataset::read(&d)?,
        None => Dataset::generate(&cfg.gen, seed),
    };
    let size = cfg.model.image_size;
    for (name, s) in &data.images {
        if s.pixels.height != size || s.pixels.width != size {
            return Err(Error::Config(format!("image {name} is not {size}x{size}")));
        }
    }
    for (id, c) in &data.clips {
        if c.frames.height != size || c.frames.width != size {
            return Err(Error::Config(format!("clip {id} is not {size}x{size}")));
        }
        if c.frames.count < cfg.model.frames {
            return Err(Error::Config(format!("clip {id} has fewer than {} frames", cfg.model.frames)));
        }
    }
    Ok(data)
}

fn load_checkpoint(path: &Path, cfg: &RunConfig) -> Result<Parameters> {
    let p = checkpoint::load(path)?;
    if p.config != cfg.model {
        return Err(Error::Config(format!("{} was saved for a different model shape", path.display())));
    }
    Ok(p)
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let seed = a.seed.unwrap_or(cfg.gen.seed);
    let data = Dataset::generate(&cfg.gen, seed);
    create_dir(&a.out)?;
    data.write(&a.out)?;
    println!("wrote {} images and {} clips to {}", data.images.len(), data.clips.len(), a.out.display());
    Ok(())
}

fn run_train(a: TrainArgs, threads: usize) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let seed = a.seed.unwrap_or(cfg.gen.seed);
    let data = load_data(&cfg, a.data, seed)?.train_data();
    let params = match &a.checkpoint {
        Some(p) => load_checkpoint(p, &cfg)?,
        None => Parameters::init(cfg.model, derive_seed(seed, PARAM_STREAM, 0))?,
    };
    create_dir(&a.out)?;
    let metrics_path = a.out.join("metrics.jsonl");
    let file = fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut metrics = BufWriter::new(file);

    let settings = TrainSettings {
        optimizer: cfg.optimizer,
        weights: cfg.weights,
        sampling: cfg.sampling,
        threads,
    };
    let per_epoch = steps_per_epoch(&data, &cfg.optimizer);
    let total = cfg.optimizer.total_steps;
    let mut state = TrainState::new(params, seed);
    let mut last = None;
    train(&mut state, &data, &settings, |record, st| {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(metrics, "{line}").map_err(|e| Error::io(&metrics_path, e))?;
        let done = record.step + 1;
        if done % per_epoch == 0 || done == total {
            let epoch = done.div_ceil(per_epoch);
            checkpoint::save(&st.params, &a.out.join("latest.svck"))?;
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                checkpoint::save(&st.params, &a.out.join(format!("epoch_{epoch:04}.svck")))?;
            }
        }
        last = Some(record.breakdown.l_total);
        Ok(())
    })?;
    metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
    checkpoint::save(&state.params, &a.out.join("model.svck"))?;
    match last {
        Some(l) => println!("trained {total} steps, final loss {l:.6}, model at {}", a.out.join("model.svck").display()),
        None => println!("nothing to train, model at {}", a.out.join("model.svck").display()),
    }
    Ok(())
}

fn run_eval(a: EvalArgs, threads: usize) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let seed = a.seed.unwrap_or(cfg.gen.seed);
    let params = load_checkpoint(&a.checkpoint, &cfg)?;
    let data = load_data(&cfg, a.data, seed)?;
    let report = eval_dataset(&params, &cfg, &data, a.views.unwrap_or(cfg.eval_views), threads)?;
    create_dir(&a.out)?;
    let path = a.out.join("report.json");
    fs::write(&path, report.to_json()).map_err(|e| Error::io(&path, e))?;
    println!(
        "{} clips: mean abs error {:.4} s, exact {:.4}, state change accuracy {:.4}",
        report.sample_count, report.mean_abs_error_seconds, report.exact_frame_accuracy, report.osc_accuracy
    );
    Ok(())
}

/// Evaluates every clip of `data` with `(n_temporal, n_spatial)` views.
pub fn eval_dataset(
    params: &Parameters,
    cfg: &RunConfig,
    data: &Dataset,
    views: (usize, usize),
    threads: usize,
) -> Result<EvalReport> {
    let raw = match data.clips.first() {
        Some((_, c)) => c.frames.count,
        None => return Err(Error::Argument("no clips to evaluate".into())),
    };
    if data.clips.iter().any(|(_, c)| c.frames.count != raw) {
        return Err(Error::Argument("clips differ in length".into()));
    }
    let spec = ViewSpec::grid(views.0, views.1, raw, cfg.model.frames)?;
    let input = EvalInput {
        frames: cfg.model.frames,
        crop_size: cfg.model.image_size,
        scale_range: cfg.sampling.scale_range,
    };
    evaluate(params, &data.clips, &spec, &input, threads)
}

/// Gradcheck of the full weighted loss on a fixed batch of two images and
/// one change clip, rendered from `seed`.
pub fn full_gradcheck(params: &Parameters, cfg: &RunConfig, seed: u64, threads: usize) -> Result<GradcheckReport> {
    let mut gen = cfg.gen.clone();
    gen.num_images = 2;
    gen.num_clips = 1;
    gen.no_change_prob = 0.0;
    let data = Dataset::generate(&gen, seed);
    let images: Vec<ImageExample> = data.train_data().images;
    let fixed = Sampling {
        scale_range: (cfg.model.image_size, cfg.model.image_size),
        temporal_jitter: false,
    };
    let clips = data
        .clips
        .iter()
        .map(|(_, c)| prepare_clip(c, &cfg.model, &fixed, seed))
        .collect::<Result<Vec<_>>>()?;
    let (analytic, _) = compute_gradients(params, &images, &clips, &cfg.weights, threads)?;
    gradcheck(
        params,
        &analytic,
        |p| evaluate_loss(p, &images, &clips, &cfg.weights, threads).map(|b| b.l_total),
        cfg.gradcheck_epsilon,
        cfg.gradcheck_samples,
        seed,
    )
}

fn run_gradcheck(a: GradcheckArgs, threads: usize) -> Result<GradcheckReport> {
    let cfg = RunConfig::load(&a.config)?;
    let seed = a.seed.unwrap_or(cfg.gen.seed);
    let params = match &a.checkpoint {
        Some(p) => load_checkpoint(p, &cfg)?,
        None => Parameters::init(cfg.model, derive_seed(seed, PARAM_STREAM, 0))?,
    };
    let r = full_gradcheck(&params, &cfg, seed, threads)?;
    println!(
        "max relative error {:.3e} over {} coordinates (worst {}[{}]: analytic {:.6e}, numeric {:.6e})",
        r.max_rel_error, r.checked, r.worst_param, r.worst_index, r.worst_analytic, r.worst_numeric
    );
    if r.max_rel_error > GRADCHECK_LIMIT {
        return Err(Error::Numeric(format!(
            "gradient check failed: {:.3e} exceeds {GRADCHECK_LIMIT:e}",
            r.max_rel_error
        )));
    }
    Ok(r)
}

/// Per-slot counts and mean box sizes of an annotation corpus.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorpusStats {
    pub records: usize,
    pub exists: [usize; SLOTS],
    pub contacts: [usize; HANDS],
    pub contact_defined: [usize; HANDS],
    pub mean_width: [f64; SLOTS],
    pub mean_height: [f64; SLOTS],
}

pub fn corpus_stats(records: &[(String, Haog)]) -> CorpusStats {
    let mut s = CorpusStats {
        records: records.len(),
        ..CorpusStats::default()
    };
    for (_, h) in records {
        for j in 0..SLOTS {
            if let (1, Some(b)) = (h.exists[j], h.boxes[j]) {
                s.exists[j] += 1;
                s.mean_width[j] += b.x2 - b.x1;
                s.mean_height[j] += b.y2 - b.y1;
            }
        }
        for k in 0..HANDS {
            if h.contact_defined(k) {
                s.contact_defined[k] += 1;
                s.contacts[k] += usize::from(h.contact[k]);
            }
        }
    }
    for j in 0..SLOTS {
        if s.exists[j] > 0 {
            s.mean_width[j] /= s.exists[j] as f64;
            s.mean_height[j] /= s.exists[j] as f64;
        }
    }
    s
}

fn inspect(a: InspectArgs) -> Result<()> {
    let path = if a.annotations.is_dir() {
        a.annotations.join("images").join("annotations.jsonl")
    } else {
        a.annotations
    };
    let records = read_annotations(&path)?;
    let s = corpus_stats(&records);
    println!("{}: {} valid records", path.display(), s.records);
    for j in 0..SLOTS {
        println!(
            "  {:<12} present {:>5}  mean size {:.3} x {:.3}",
            SLOT_NAMES[j], s.exists[j], s.mean_width[j], s.mean_height[j]
        );
    }
    for k in 0..HANDS {
        println!("  {} contact {} of {}", SLOT_NAMES[k], s.contacts[k], s.contact_defined[k]);
    }
    Ok(())
}
