//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use tsshdl_core::synth::SynthConfig;

use crate::bundle::ModelBundle;
use crate::config::{ConfigError, PipelineConfig};
use crate::dataset::{self, SynthSplits};
use crate::io::{save_label_overlay, save_label_png, write_atomic, IoError};
use crate::pipeline::{self, Diagnostics, FailureKind, FeatureCache, PipelineError, Segmenter};
use crate::report;

#[derive(Debug, Parser)]
#[command(name = "tsshdl", version, about = "Brain tissue segmentation with hand-crafted and learned features and a CRF")]
pub struct Cli {
    /// INI configuration file; built-in defaults when omitted
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// override one key, e.g. `--set fisher.components=4` (repeatable)
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
    /// feature cache directory, overriding `run.cache_dir`
    #[arg(long, global = true, env = "TSSHDL_CACHE_DIR")]
    pub cache_dir: Option<PathBuf>,
    /// never read or write the feature cache
    #[arg(long, global = true)]
    pub no_cache: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute and cache hand-crafted features for a split
    Extract {
        /// train, val, test or all
        #[arg(long, default_value = "all")]
        split: String,
    },
    /// Fit every stage and write a model bundle
    Train {
        #[arg(long, short)]
        out: PathBuf,
        /// JSON-lines stage diagnostics (default: `<out>.run.jsonl`)
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Segment one image or volume
    Segment {
        #[arg(long, short)]
        model: PathBuf,
        image: PathBuf,
        /// indexed label PNG (0 background, 1 grey, 2 white matter)
        #[arg(long, short)]
        out: PathBuf,
        /// tinted overlay (default: `<out stem>_overlay.png`)
        #[arg(long)]
        overlay: Option<PathBuf>,
    },
    /// Segment a labelled split and score it
    Evaluate(EvaluateArgs),
    /// Write the synthetic dataset and a matching config
    SynthData(SynthArgs),
    /// Print a metrics table and/or a run summary
    Report {
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        run: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, short)]
    pub model: PathBuf,
    /// split named in the config
    #[arg(long, default_value = "test")]
    pub split: String,
    /// manifest to use instead of the config's split
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// metrics CSV
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// also write predicted label PNGs here
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub train: usize,
    #[arg(long, default_value_t = 5)]
    pub val: usize,
    #[arg(long, default_value_t = 10)]
    pub test: usize,
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    /// noise standard deviation as a fraction of the intensity range
    #[arg(long, default_value_t = 0.03)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl Cli {
    fn pipeline_config(&self) -> Result<PipelineConfig, PipelineError> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        cfg.validate()?;
        if let Some(d) = &self.cache_dir {
            cfg.run.cache_dir = d.clone();
        }
        Ok(cfg)
    }

    fn cache(&self, cfg: &PipelineConfig) -> FeatureCache {
        if self.no_cache {
            FeatureCache::disabled()
        } else {
            FeatureCache::new(&cfg.run.cache_dir)
        }
    }
}

fn data_error(path: &Path, message: impl Into<String>) -> PipelineError {
    PipelineError::Io(IoError::unsupported(path, message))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

pub fn run(cli: &Cli) -> Result<(), PipelineError> {
    match &cli.command {
        Command::Extract { split } => {
            let cfg = cli.pipeline_config()?;
            let cache = cli.cache(&cfg);
            let splits: Vec<&str> = match split.as_str() {
                "all" => ["train", "val", "test"].into_iter().filter(|s| cfg.split(s).is_ok()).collect(),
                s => vec![s],
            };
            let mut failed = Vec::new();
            for s in splits {
                let summary = pipeline::extract_split(&cfg, s, &cache)?;
                println!("{s}: {} slices, {} already cached, {} failed", summary.slices, summary.cache_hits, summary.failed.len());
                failed.extend(summary.failed);
            }
            if failed.is_empty() {
                Ok(())
            } else {
                Err(PipelineError::Partial(failed))
            }
        }
        Command::Train { out, diagnostics } => {
            let cfg = cli.pipeline_config()?;
            let cache = cli.cache(&cfg);
            let diag_path = diagnostics.clone().unwrap_or_else(|| with_suffix(out, ".run.jsonl"));
            let mut diag = Diagnostics::to_file(&diag_path)?;
            let bundle = pipeline::train(&cfg, &cache, &mut diag)?;
            bundle.save(out)?;
            println!("model written to {} (run report {})", out.display(), diag_path.display());
            Ok(())
        }
        Command::Segment { model, image, out, overlay } => {
            let seg = Segmenter::new(ModelBundle::load(model)?)?;
            let cache = match &cli.cache_dir {
                Some(d) if !cli.no_cache => FeatureCache::new(d),
                _ => FeatureCache::disabled(),
            };
            let item = dataset::Item {
                id: image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
                image: image.clone(),
                labels: None,
            };
            let loaded = pipeline::load_item(&item, false)?;
            let labels = seg.segment(&loaded, &cache)?;
            save_label_png(&labels, out)?;
            let overlay = overlay.clone().unwrap_or_else(|| with_suffix(out, "_overlay.png"));
            save_label_overlay(&loaded.volume, &labels, &overlay)?;
            println!("labels {} overlay {}", out.display(), overlay.display());
            Ok(())
        }
        Command::Evaluate(a) => evaluate(cli, a),
        Command::SynthData(a) => {
            let splits = SynthSplits {
                train: a.train,
                val: a.val,
                test: a.test,
                image: SynthConfig { width: a.size, height: a.size, noise: a.noise },
                seed: a.seed,
            };
            if a.size < 32 {
                return Err(ConfigError::BadValue { key: "size".into(), value: a.size.to_string(), reason: "at least 32".into() }.into());
            }
            dataset::write_synthetic(&a.out, &splits)?;
            let mut cfg = PipelineConfig::default();
            cfg.data.train = Some("train.txt".into());
            cfg.data.val = Some("val.txt".into());
            cfg.data.test = Some("test.txt".into());
            cfg.run.cache_dir = "cache".into();
            let path = a.out.join("config.ini");
            write_atomic(&path, cfg.to_ini_string(true).as_bytes())?;
            println!("{} images and {} written", a.train + a.val + a.test, path.display());
            Ok(())
        }
        Command::Report { metrics, run } => {
            if metrics.is_none() && run.is_none() {
                return Err(ConfigError::BadOverride("report needs --metrics and/or --run".into()).into());
            }
            if let Some(p) = run {
                let text = std::fs::read_to_string(p).map_err(|e| IoError::io(p, e))?;
                print!("{}", report::summarize_run(&text).map_err(|m| data_error(p, m))?);
            }
            if let Some(p) = metrics {
                let text = std::fs::read_to_string(p).map_err(|e| IoError::io(p, e))?;
                print!("{}", report::render_table(&report::from_csv(&text).map_err(|m| data_error(p, m))?));
            }
            Ok(())
        }
    }
}

fn evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<(), PipelineError> {
    let seg = Segmenter::new(ModelBundle::load(&a.model)?)?;
    let mut cfg = cli.pipeline_config()?;
    let manifest = match &a.manifest {
        Some(m) => m.clone(),
        None => cfg.split(&a.split)?.to_path_buf(),
    };
    cfg.data.test = Some(manifest.clone());
    let items = dataset::read_manifest(&manifest)?;
    if let Some(it) = items.iter().find(|it| it.labels.is_none()) {
        return Err(data_error(&it.image, "missing ground-truth label map"));
    }
    let loaded = pipeline::load_split(&cfg, "test", true)?;
    let (rows, preds) = pipeline::evaluate(&seg, &loaded, &cli.cache(&cfg))?;
    if let Some(dir) = &a.predictions {
        for (l, p) in loaded.iter().zip(&preds) {
            save_label_png(p, &dir.join(format!("{}_pred.png", l.item.id)))?;
        }
    }
    let csv = report::to_csv(&rows);
    match &a.csv {
        Some(p) => write_atomic(p, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    print!("{}", report::render_table(&rows));
    Ok(())
}

/// Logs the error and returns the process exit code.
pub fn exit_code(result: Result<(), PipelineError>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) => {
            let kind = match e.kind() {
                FailureKind::Config => "configuration error",
                FailureKind::Data => "data error",
                FailureKind::Numeric => "numeric failure",
            };
            eprintln!("tsshdl: {kind}: {e}");
            e.exit_code()
        }
    }
}
