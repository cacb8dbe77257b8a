//! Staged training, segmentation and evaluation over manifest splits.

use std::fmt::Display;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;
use sha2::{Digest, Sha256};

use tsshdl_core::crf::{
    balanced_subsample, train_pairwise, train_unary, trw_marginals, unary_from_features, CrfError, UnaryEnergies,
    ValidationItem,
};
use tsshdl_core::featstack::{concat_features, FeatStackError, Standardizer};
use tsshdl_core::fisher::FisherError;
use tsshdl_core::image::{GREY_MATTER, NUM_TISSUE_CLASSES, WHITE_MATTER};
use tsshdl_core::metrics::{class_scores, ClassScores, MetricsError};
use tsshdl_core::pcanet::{apply_pcanet, fit_pcanet, PcaNetError};
use tsshdl_core::scatternet::{collect_u_samples, fit_log_parameters, scatter_coefficients, ScatterConfig, ScatterError};
use tsshdl_core::texture::{texture_feature, Mr8Bank};
use tsshdl_core::vesselness::{vesselness_feature, VesselnessConfig, VesselnessError};
use tsshdl_core::{FeatureStack, ImageError, LabelMap, Plane, Spacing, Volume};

use crate::bundle::{round_f32, stage, BundleError, ModelBundle};
use crate::config::{ConfigError, PipelineConfig};
use crate::dataset::{self, Item};
use crate::io::{read_feature_cache, write_feature_cache, IoError};

/// Which exit status a failure maps to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("model bundle: {0}")]
    Bundle(#[from] BundleError),
    #[error("stage {stage}: {message}")]
    Stage { stage: &'static str, kind: FailureKind, message: String },
    #[error("{} file(s) failed: {}", .0.len(), list_paths(.0))]
    Partial(Vec<PathBuf>),
}

fn list_paths(p: &[PathBuf]) -> String {
    p.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
}

impl PipelineError {
    pub fn kind(&self) -> FailureKind {
        match self {
            PipelineError::Config(_) => FailureKind::Config,
            PipelineError::Io(_) | PipelineError::Bundle(_) | PipelineError::Partial(_) => FailureKind::Data,
            PipelineError::Stage { kind, .. } => *kind,
        }
    }

    /// 2 configuration, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            FailureKind::Config => 2,
            FailureKind::Data => 3,
            FailureKind::Numeric => 4,
        }
    }
}

/// Sorts core errors into exit classes.
pub trait Classify: Display {
    fn kind(&self) -> FailureKind;
}

impl Classify for ImageError {
    fn kind(&self) -> FailureKind {
        FailureKind::Data
    }
}

impl Classify for ScatterError {
    fn kind(&self) -> FailureKind {
        match self {
            ScatterError::InvalidConfig(_) => FailureKind::Config,
            ScatterError::DegenerateSamples => FailureKind::Numeric,
            _ => FailureKind::Data,
        }
    }
}

impl Classify for VesselnessError {
    fn kind(&self) -> FailureKind {
        match self {
            VesselnessError::InvalidConfig(_) => FailureKind::Config,
            VesselnessError::Image(_) => FailureKind::Data,
        }
    }
}

impl Classify for FeatStackError {
    fn kind(&self) -> FailureKind {
        FailureKind::Data
    }
}

impl Classify for PcaNetError {
    fn kind(&self) -> FailureKind {
        match self {
            PcaNetError::InvalidConfig(_) => FailureKind::Config,
            PcaNetError::ZeroVariance | PcaNetError::Linalg(_) => FailureKind::Numeric,
            _ => FailureKind::Data,
        }
    }
}

impl Classify for FisherError {
    fn kind(&self) -> FailureKind {
        match self {
            FisherError::InvalidConfig(_) => FailureKind::Config,
            FisherError::InsufficientData { .. } | FisherError::EmptyDescriptorSet | FisherError::Image(_) => {
                FailureKind::Data
            }
            _ => FailureKind::Numeric,
        }
    }
}

impl Classify for CrfError {
    fn kind(&self) -> FailureKind {
        match self {
            CrfError::InvalidParams(_) => FailureKind::Config,
            CrfError::ClassMissing(_) | CrfError::EmptyValidationSet | CrfError::Image(_) => FailureKind::Data,
            _ => FailureKind::Numeric,
        }
    }
}

impl Classify for MetricsError {
    fn kind(&self) -> FailureKind {
        FailureKind::Data
    }
}

fn at<E: Classify>(stage: &'static str) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::Stage { stage, kind: e.kind(), message: e.to_string() }
}

/// JSON-lines diagnostic records, one per stage event.
#[derive(Default)]
pub struct Diagnostics {
    out: Option<BufWriter<File>>,
    pub records: Vec<serde_json::Value>,
}

impl Diagnostics {
    pub fn to_file(path: &Path) -> Result<Self, IoError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
        }
        let f = File::create(path).map_err(|e| IoError::io(path, e))?;
        Ok(Diagnostics { out: Some(BufWriter::new(f)), records: Vec::new() })
    }

    pub fn record(&mut self, stage: &str, seconds: f64, data: serde_json::Value) {
        let mut rec = json!({ "stage": stage, "seconds": seconds });
        if let (Some(obj), serde_json::Value::Object(extra)) = (rec.as_object_mut(), data) {
            obj.extend(extra);
        }
        log::info!("{stage} finished in {seconds:.2}s");
        if let Some(out) = &mut self.out {
            let _ = writeln!(out, "{rec}");
            let _ = out.flush();
        }
        self.records.push(rec);
    }
}

/// One image (or volume) read from a manifest, intensities in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub item: Item,
    pub volume: Volume,
    pub labels: Option<LabelMap>,
    /// SHA-256 of the image file
    pub digest: [u8; 32],
}

impl Loaded {
    pub fn slices(&self) -> Vec<Plane> {
        self.volume.slices().collect()
    }
}

pub fn load_item(item: &Item, need_labels: bool) -> Result<Loaded, PipelineError> {
    let bytes = std::fs::read(&item.image).map_err(|e| IoError::io(&item.image, e))?;
    let mut h = Sha256::new();
    h.update(&bytes);
    let raw = dataset::load_image(&item.image)?;
    let labels = match &item.labels {
        Some(p) => Some(dataset::load_labels(p, &raw)?),
        None if need_labels => {
            return Err(IoError::unsupported(&item.image, "manifest entry has no label map").into());
        }
        None => None,
    };
    Ok(Loaded { item: item.clone(), volume: raw.normalized(), labels, digest: h.finalize().into() })
}

pub fn load_split(cfg: &PipelineConfig, split: &str, need_labels: bool) -> Result<Vec<Loaded>, PipelineError> {
    let items = dataset::read_manifest(cfg.split(split)?)?;
    items.par_iter().map(|it| load_item(it, need_labels)).collect()
}

/// On-disk store of hand-crafted feature stacks keyed by content hash.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    dir: Option<PathBuf>,
}

impl FeatureCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FeatureCache { dir: Some(dir.into()) }
    }

    pub fn disabled() -> Self {
        FeatureCache { dir: None }
    }

    fn path(&self, key: &str, ext: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{key}.{ext}")))
    }
}

/// Hand-crafted feature extractor: scattering, vesselness and MR8 texture.
pub struct Extractor {
    scatter: ScatterConfig,
    vessel: VesselnessConfig,
    bank: Mr8Bank,
    fingerprint: String,
}

impl Extractor {
    pub fn new(cfg: &PipelineConfig, k: Vec<f64>) -> Self {
        let scatter = cfg.scatter_config(k);
        let vessel = cfg.vesselness_config();
        let fingerprint = format!("handcrafted-v1 {scatter:?} {vessel:?} mr8");
        Extractor { scatter, vessel, bank: Mr8Bank::new(), fingerprint }
    }

    pub fn extract(&self, img: &Plane) -> Result<FeatureStack, PipelineError> {
        let s = scatter_coefficients(img, &self.scatter).map_err(at("scatternet"))?;
        let v = vesselness_feature(img, &self.vessel).map_err(at("vesselness"))?;
        let t = texture_feature(img, &self.bank).map_err(at("texture"))?;
        concat_features(&s, &v, &t).map_err(at("featstack"))
    }

    fn key(&self, digest: &[u8; 32], z: usize) -> String {
        let mut h = Sha256::new();
        h.update(digest);
        h.update((z as u64).to_le_bytes());
        h.update(self.fingerprint.as_bytes());
        hex::encode(h.finalize())
    }

    /// Returns the stack and whether it came from the cache.
    pub fn extract_cached(
        &self,
        digest: &[u8; 32],
        z: usize,
        img: &Plane,
        cache: &FeatureCache,
    ) -> Result<(FeatureStack, bool), PipelineError> {
        let path = cache.path(&self.key(digest, z), "tsfh");
        if let Some(p) = path.as_ref().filter(|p| p.exists()) {
            match read_feature_cache(p) {
                Ok(s) if s.width() == img.width && s.height() == img.height => return Ok((s, true)),
                Ok(_) => log::warn!("{}: cached stack has the wrong size, recomputing", p.display()),
                Err(e) => log::warn!("{e}; recomputing"),
            }
        }
        let s = self.extract(img)?;
        if let Some(p) = path {
            write_feature_cache(&s, &p)?;
        }
        Ok((s, false))
    }
}

/// Fits the scattering log offsets `k_j` on the training images; the
/// result is rounded to `f32` and cached by the images' digests.
pub fn fit_scatter_k(cfg: &PipelineConfig, train: &[Loaded], cache: &FeatureCache) -> Result<Vec<f64>, PipelineError> {
    let mut h = Sha256::new();
    h.update(format!("scatter-k-v1 {} {:?} {}", cfg.scatter.j, cfg.scatter.resolutions, cfg.scatter.k_sample_stride));
    for l in train {
        h.update(l.digest);
    }
    let path = cache.path(&hex::encode(h.finalize()), "k.json");
    if let Some(p) = path.as_ref().filter(|p| p.exists()) {
        if let Ok(k) = std::fs::read(p).map_err(|_| ()).and_then(|b| serde_json::from_slice::<Vec<f64>>(&b).map_err(|_| ())) {
            if k.len() == cfg.scatter.j {
                log::info!("scattering k from cache");
                return Ok(k);
            }
        }
    }
    let probe = cfg.scatter_config(vec![1.0; cfg.scatter.j]);
    let pooled_at = |stride: usize| -> Result<Vec<Vec<f64>>, PipelineError> {
        let per_image: Vec<Vec<Vec<f64>>> = train
            .par_iter()
            .flat_map_iter(|l| l.slices())
            .map(|img| collect_u_samples(&img, &probe, stride).map_err(at("scatternet")))
            .collect::<Result<_, _>>()?;
        let mut pooled = vec![Vec::new(); cfg.scatter.j];
        for img in per_image {
            for (p, s) in pooled.iter_mut().zip(img) {
                p.extend(s);
            }
        }
        Ok(pooled)
    };
    let stride = cfg.scatter.k_sample_stride;
    let mut k = match fit_log_parameters(&pooled_at(stride)?) {
        Err(ScatterError::InsufficientSamples { .. }) if stride > 1 => {
            log::warn!("too few scattering samples at stride {stride}; using every pixel");
            fit_log_parameters(&pooled_at(1)?)
        }
        r => r,
    }
    .map_err(at("scatternet"))?;
    round_f32(&mut k);
    if let Some(p) = path {
        crate::io::write_atomic(&p, serde_json::to_string(&k).unwrap().as_bytes())?;
    }
    Ok(k)
}

/// Hand-crafted stacks of every slice, in item then slice order.
pub fn extract_all(
    extractor: &Extractor,
    items: &[Loaded],
    cache: &FeatureCache,
) -> Result<(Vec<FeatureStack>, usize), PipelineError> {
    let jobs: Vec<(&Loaded, usize, Plane)> =
        items.iter().flat_map(|l| l.slices().into_iter().enumerate().map(move |(z, p)| (l, z, p))).collect();
    let out: Vec<(FeatureStack, bool)> =
        jobs.par_iter().map(|(l, z, p)| extractor.extract_cached(&l.digest, *z, p, cache)).collect::<Result<_, _>>()?;
    let hits = out.iter().filter(|(_, hit)| *hit).count();
    Ok((out.into_iter().map(|(s, _)| s).collect(), hits))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractSummary {
    pub slices: usize,
    pub cache_hits: usize,
    pub failed: Vec<PathBuf>,
}

/// Fills the cache for one split. Unreadable files are reported and the
/// rest of the split is still processed.
pub fn extract_split(cfg: &PipelineConfig, split: &str, cache: &FeatureCache) -> Result<ExtractSummary, PipelineError> {
    let items = dataset::read_manifest(cfg.split(split)?)?;
    if items.is_empty() {
        return Ok(ExtractSummary { slices: 0, cache_hits: 0, failed: Vec::new() });
    }
    let mut failed = Vec::new();
    let mut loaded = Vec::new();
    for it in &items {
        match load_item(it, false) {
            Ok(l) => loaded.push(l),
            Err(e) => {
                log::error!("{e}");
                failed.push(it.image.clone());
            }
        }
    }
    let train = if split == "train" { loaded.clone() } else { load_split(cfg, "train", false)? };
    let k = fit_scatter_k(cfg, &train, cache)?;
    let extractor = Extractor::new(cfg, k);
    let mut summary = ExtractSummary { slices: 0, cache_hits: 0, failed };
    for l in &loaded {
        match extract_all(&extractor, std::slice::from_ref(l), cache) {
            Ok((stacks, hits)) => {
                summary.slices += stacks.len();
                summary.cache_hits += hits;
            }
            Err(e) => {
                log::error!("{}: {e}", l.item.image.display());
                summary.failed.push(l.item.image.clone());
            }
        }
    }
    log::info!("{split}: {} slices, {} from cache", summary.slices, summary.cache_hits);
    Ok(summary)
}

/// Applies the learned stages to a hand-crafted stack, returning
/// pixel-major Fisher vectors.
fn fisher_features(bundle: &ModelBundle, handcrafted: &FeatureStack) -> Result<Vec<f64>, PipelineError> {
    if handcrafted.channels() != bundle.standardizer.channels() {
        return Err(PipelineError::Stage {
            stage: "standardize",
            kind: FailureKind::Data,
            message: format!(
                "dimension mismatch: bundle expects {} hand-crafted channels, got {}",
                bundle.standardizer.channels(),
                handcrafted.channels()
            ),
        });
    }
    let std = bundle.standardizer.apply(handcrafted).map_err(at("standardize"))?;
    let mid = apply_pcanet(&std, &bundle.pcanet).map_err(at("pcanet"))?;
    bundle.encoder.encode_pixels(&mid).map_err(at("fisher"))
}

fn unary_for(bundle: &ModelBundle, handcrafted: &FeatureStack) -> Result<UnaryEnergies, PipelineError> {
    let fv = fisher_features(bundle, handcrafted)?;
    unary_from_features(&fv, handcrafted.width(), handcrafted.height(), &bundle.crf).map_err(at("crf"))
}

/// Reference to a labelled training slice.
struct Labelled<'a> {
    image: Plane,
    labels: LabelMap,
    handcrafted: &'a FeatureStack,
}

fn labelled_slices<'a>(items: &[Loaded], stacks: &'a [FeatureStack]) -> Vec<Labelled<'a>> {
    let mut out = Vec::new();
    let mut i = 0;
    for l in items {
        let labels = l.labels.as_ref().expect("labels are required for training splits");
        for (z, image) in l.slices().into_iter().enumerate() {
            out.push(Labelled { image, labels: labels.slice(z), handcrafted: &stacks[i] });
            i += 1;
        }
    }
    out
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

/// Runs every training stage in order: scattering offsets, hand-crafted
/// extraction, standardizer, PCANet, reducer and mixture, unary weights and
/// the pairwise search.
pub fn train(cfg: &PipelineConfig, cache: &FeatureCache, diag: &mut Diagnostics) -> Result<ModelBundle, PipelineError> {
    let seed = cfg.run.seed;
    let t = Instant::now();
    let train_items = load_split(cfg, "train", true)?;
    let val_items = match cfg.data.val.as_deref() {
        Some(p) if !dataset::read_manifest(p)?.is_empty() => load_split(cfg, "val", true)?,
        _ => Vec::new(),
    };
    if train_items.is_empty() {
        return Err(PipelineError::Stage { stage: "load", kind: FailureKind::Data, message: "empty training split".into() });
    }
    // without a validation split the last training image is held out for
    // the pairwise search
    let (fit_items, val_items) = if val_items.is_empty() && train_items.len() > 1 {
        let mut fit = train_items;
        let held = fit.pop().unwrap();
        (fit, vec![held])
    } else {
        (train_items, val_items)
    };
    diag.record("load", secs(t), json!({ "train": fit_items.len(), "val": val_items.len() }));

    let t = Instant::now();
    let k = fit_scatter_k(cfg, &fit_items, cache)?;
    diag.record("scatter_k", secs(t), json!({ "k": k }));

    let t = Instant::now();
    let extractor = Extractor::new(cfg, k.clone());
    let (train_stacks, hits) = extract_all(&extractor, &fit_items, cache)?;
    let (val_stacks, val_hits) = extract_all(&extractor, &val_items, cache)?;
    diag.record(
        "extract",
        secs(t),
        json!({ "slices": train_stacks.len() + val_stacks.len(), "cache_hits": hits + val_hits, "channels": train_stacks[0].channels() }),
    );

    let t = Instant::now();
    let mut standardizer = Standardizer::fit(&train_stacks).map_err(at("standardize"))?;
    stage::standardizer(&mut standardizer);
    let std_stacks: Vec<FeatureStack> =
        train_stacks.par_iter().map(|s| standardizer.apply(s).map_err(at("standardize"))).collect::<Result<_, _>>()?;
    diag.record("standardize", secs(t), json!({ "degenerate_channels": standardizer.degenerate_channels() }));

    let t = Instant::now();
    let mut pcanet = fit_pcanet(&std_stacks, &cfg.pcanet_config()).map_err(at("pcanet"))?;
    stage::pcanet(&mut pcanet);
    let spectra: Vec<&Vec<f64>> = pcanet.layers.iter().map(|l| &l.eigenvalues).collect();
    diag.record("pcanet", secs(t), json!({ "eigenvalues": spectra }));

    let t = Instant::now();
    let mids: Vec<FeatureStack> =
        std_stacks.par_iter().map(|s| apply_pcanet(s, &pcanet).map_err(at("pcanet"))).collect::<Result<_, _>>()?;
    drop(std_stacks);
    let dim = pcanet.output_channels();
    let mut descriptors = Vec::new();
    let mut buf = vec![0.0; dim];
    for (i, m) in mids.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f15e ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let n = cfg.fisher.descriptors_per_image.min(m.pixels());
        let mut picks = sample(&mut rng, m.pixels(), n).into_vec();
        picks.sort_unstable();
        for p in picks {
            m.pixel_into(p, &mut buf);
            descriptors.extend_from_slice(&buf);
        }
    }
    let (mut encoder, em) =
        tsshdl_core::fisher::FvEncoder::fit(&descriptors, dim, &cfg.fv_config()).map_err(at("fisher"))?;
    drop(descriptors);
    stage::encoder(&mut encoder);
    diag.record(
        "fisher",
        secs(t),
        json!({ "em_log_likelihood": em.log_likelihoods, "em_converged": em.converged, "reseeded": em.reseeded }),
    );

    let t = Instant::now();
    let labelled = labelled_slices(&fit_items, &train_stacks);
    let fv_dim = encoder.output_dim();
    let per_image: Vec<(Vec<f64>, Vec<u8>)> = mids
        .par_iter()
        .zip(&labelled)
        .enumerate()
        .map(|(i, (m, l))| {
            let fv = encoder.encode_pixels(m).map_err(at("fisher"))?;
            let picks = balanced_subsample(
                l.labels.labels(),
                NUM_TISSUE_CLASSES as usize,
                cfg.crf.pixels_per_class,
                seed.wrapping_add(i as u64),
            );
            let mut f = Vec::with_capacity(picks.len() * fv_dim);
            let mut y = Vec::with_capacity(picks.len());
            for p in picks {
                f.extend_from_slice(&fv[p * fv_dim..(p + 1) * fv_dim]);
                y.push(l.labels.labels()[p]);
            }
            Ok((f, y))
        })
        .collect::<Result<_, PipelineError>>()?;
    drop(mids);
    let (mut feats, mut ys) = (Vec::new(), Vec::new());
    for (f, y) in per_image {
        feats.extend(f);
        ys.extend(y);
    }
    let (mut crf, report) = train_unary(&feats, fv_dim, &ys, NUM_TISSUE_CLASSES as usize, cfg.crf.l2_reg, &cfg.lbfgs_config())
        .map_err(at("crf"))?;
    drop(feats);
    stage::crf(&mut crf);
    diag.record(
        "unary",
        secs(t),
        json!({ "pixels": ys.len(), "loss": report.history, "converged": report.converged, "restarts": report.restarts }),
    );

    let mut bundle = ModelBundle {
        config: cfg.to_ini_string(false),
        scatter_k: k,
        standardizer,
        pcanet,
        encoder,
        crf,
    };

    let t = Instant::now();
    if !val_items.is_empty() {
        let val = labelled_slices(&val_items, &val_stacks);
        let unaries: Vec<UnaryEnergies> =
            val.par_iter().map(|v| unary_for(&bundle, v.handcrafted)).collect::<Result<_, _>>()?;
        let items: Vec<ValidationItem<'_>> = val
            .iter()
            .zip(&unaries)
            .map(|(v, u)| ValidationItem { unary: u, intensity: &v.image, truth: &v.labels })
            .collect();
        let search = train_pairwise(&items, &cfg.pairwise_grid(), &[GREY_MATTER, WHITE_MATTER], &cfg.trw_options())
            .map_err(at("crf"))?;
        bundle.crf.pairwise = search.best;
        stage::crf(&mut bundle.crf);
        let trace: Vec<_> = search.trace.iter().map(|(p, s)| json!([p.w0, p.w1, p.beta, s])).collect();
        diag.record(
            "pairwise",
            secs(t),
            json!({ "w0": search.best.w0, "w1": search.best.w1, "beta": search.best.beta, "val_jaccard": search.score, "trace": trace }),
        );
    } else {
        diag.record("pairwise", secs(t), json!({ "skipped": "no validation images" }));
    }
    Ok(bundle)
}

/// Applies a bundle to new images.
pub struct Segmenter {
    pub bundle: ModelBundle,
    pub config: PipelineConfig,
    extractor: Extractor,
}

impl Segmenter {
    pub fn new(bundle: ModelBundle) -> Result<Self, PipelineError> {
        let config = PipelineConfig::from_ini_str(&bundle.config, Path::new(""))?;
        let extractor = Extractor::new(&config, bundle.scatter_k.clone());
        Ok(Segmenter { bundle, config, extractor })
    }

    pub fn segment_slice(&self, img: &Plane, handcrafted: &FeatureStack) -> Result<LabelMap, PipelineError> {
        let unary = unary_for(&self.bundle, handcrafted)?;
        let res = trw_marginals(&unary, &self.bundle.crf.pairwise, img, &self.config.trw_options()).map_err(at("crf"))?;
        res.decode().map_err(at("crf"))
    }

    /// Segments a normalised volume slice by slice.
    pub fn segment(&self, loaded: &Loaded, cache: &FeatureCache) -> Result<LabelMap, PipelineError> {
        let (stacks, _) = extract_all(&self.extractor, std::slice::from_ref(loaded), cache)?;
        let slices: Vec<LabelMap> = loaded
            .slices()
            .iter()
            .zip(&stacks)
            .map(|(img, s)| self.segment_slice(img, s))
            .collect::<Result<_, _>>()?;
        LabelMap::from_slices(&slices).map_err(at("segment"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub image_id: String,
    pub class: u8,
    pub scores: ClassScores,
}

/// Segments and scores every image of a labelled split, grey then white
/// matter per image.
pub fn evaluate(
    seg: &Segmenter,
    items: &[Loaded],
    cache: &FeatureCache,
) -> Result<(Vec<EvalRow>, Vec<LabelMap>), PipelineError> {
    let results: Vec<(Vec<EvalRow>, LabelMap)> = items
        .par_iter()
        .map(|l| {
            let truth = l.labels.as_ref().ok_or_else(|| {
                PipelineError::Io(IoError::unsupported(&l.item.image, "no ground truth for evaluation"))
            })?;
            let pred = seg.segment(l, cache)?;
            let spacing: Spacing = l.volume.spacing();
            let rows = [GREY_MATTER, WHITE_MATTER]
                .iter()
                .map(|&c| {
                    Ok(EvalRow {
                        image_id: l.item.id.clone(),
                        class: c,
                        scores: class_scores(truth, &pred, c, spacing).map_err(at("metrics"))?,
                    })
                })
                .collect::<Result<Vec<_>, PipelineError>>()?;
            Ok((rows, pred))
        })
        .collect::<Result<_, PipelineError>>()?;
    let mut rows = Vec::new();
    let mut preds = Vec::new();
    for (r, p) in results {
        rows.extend(r);
        preds.push(p);
    }
    Ok((rows, preds))
}
