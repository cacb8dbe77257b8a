//! INI pipeline configuration. Every key has a default; the defaults are
//! the published hyperparameters (2 DTCWT scales, 10 vesselness scales,
//! 40/30/20/10 PCA filters, 5 mixture components, 500-d Fisher vectors).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use tsshdl_core::crf::{PairwiseGrid, TrwOptions};
use tsshdl_core::fisher::{FvConfig, GmmConfig};
use tsshdl_core::optim::LbfgsConfig;
use tsshdl_core::pcanet::PcaNetConfig;
use tsshdl_core::scatternet::ScatterConfig;
use tsshdl_core::vesselness::{geometric_scales, Polarity, VesselnessConfig};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: `{value}` ({reason})")]
    BadValue { key: String, value: String, reason: String },
    #[error("override `{0}` is not of the form section.key=value")]
    BadOverride(String),
    #[error("no `{0}` split configured")]
    MissingSplit(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    /// manifest files, one `image [labels]` pair per line
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub cache_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterSection {
    pub j: usize,
    pub resolutions: Vec<f64>,
    /// every n-th layer-1 magnitude is kept for fitting `k_j`
    pub k_sample_stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VesselSection {
    pub min_scale: f64,
    pub max_scale: f64,
    pub num_scales: usize,
    pub beta: f64,
    pub c: Option<f64>,
    pub polarity: Polarity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaNetSection {
    pub filters: Vec<usize>,
    pub patch: usize,
    pub sample_rate: f64,
    pub max_patches: usize,
    pub rectify: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisherSection {
    pub components: usize,
    pub reduced_dim: usize,
    pub window: usize,
    pub stride: usize,
    pub descriptors_per_image: usize,
    pub em_max_iters: usize,
    pub em_tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrfSection {
    pub l2_reg: f64,
    /// cap on sampled training pixels per class and image
    pub pixels_per_class: usize,
    pub lbfgs_iters: usize,
    pub w0: Vec<f64>,
    pub w1: Vec<f64>,
    pub beta: Vec<f64>,
    pub trw_max_iters: usize,
    pub trw_tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub data: DataConfig,
    pub run: RunConfig,
    pub scatter: ScatterSection,
    pub vesselness: VesselSection,
    pub pcanet: PcaNetSection,
    pub fisher: FisherSection,
    pub crf: CrfSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let grid = PairwiseGrid::default();
        let scatter = ScatterConfig::default();
        let pca = PcaNetConfig::default();
        let fv = FvConfig::default();
        let ves = VesselnessConfig::default();
        PipelineConfig {
            data: DataConfig { train: None, val: None, test: None },
            run: RunConfig { seed: 0, cache_dir: PathBuf::from(".tsshdl-cache") },
            scatter: ScatterSection { j: scatter.j_max, resolutions: scatter.resolutions, k_sample_stride: 4 },
            vesselness: VesselSection {
                min_scale: ves.scales[0],
                max_scale: *ves.scales.last().unwrap(),
                num_scales: ves.scales.len(),
                beta: ves.beta,
                c: ves.c,
                polarity: ves.polarity,
            },
            pcanet: PcaNetSection {
                filters: pca.filters,
                patch: pca.patch,
                // the library default samples every patch; a 5% sample
                // keeps the 2575-d layer-1 covariance affordable
                sample_rate: 0.05,
                max_patches: pca.max_patches,
                rectify: pca.rectify,
            },
            fisher: FisherSection {
                components: fv.gmm.k,
                reduced_dim: fv.reduced_dim,
                window: fv.window,
                stride: fv.stride,
                descriptors_per_image: 1000,
                em_max_iters: fv.gmm.max_iters,
                em_tol: fv.gmm.rel_tol,
            },
            crf: CrfSection {
                l2_reg: 1e-4,
                pixels_per_class: 300,
                lbfgs_iters: 200,
                w0: grid.w0,
                w1: grid.w1,
                beta: grid.beta,
                trw_max_iters: 30,
                trw_tol: 1e-4,
            },
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| ConfigError::BadValue {
        key: key.to_owned(),
        value: value.to_owned(),
        reason: e.to_string(),
    })
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse(key, s)).collect()
}

/// Drops a trailing ` # ...` or ` ; ...` comment.
fn strip_comment(v: &str) -> &str {
    let cut = v
        .char_indices()
        .find(|&(i, ch)| (ch == '#' || ch == ';') && v[..i].ends_with(char::is_whitespace))
        .map_or(v.len(), |(i, _)| i);
    v[..cut].trim_end()
}

fn bad(key: &str, value: &str, reason: &str) -> ConfigError {
    ConfigError::BadValue { key: key.to_owned(), value: value.to_owned(), reason: reason.to_owned() }
}

fn list<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

fn path_or_empty(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl PipelineConfig {
    /// Loads an INI file; relative data and cache paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::from_ini_str(&text, base).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse { path: path.to_path_buf(), message },
            other => other,
        })
    }

    pub fn from_ini_str(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let ini = ini::Ini::load_from_str(text)
            .map_err(|e| ConfigError::Parse { path: PathBuf::new(), message: e.to_string() })?;
        let mut cfg = PipelineConfig::default();
        for (section, props) in ini.iter() {
            for (k, v) in props.iter() {
                let key = match section {
                    Some(s) => format!("{s}.{k}"),
                    None => k.to_owned(),
                };
                cfg.set(&key, strip_comment(v))?;
            }
        }
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.data.train, &mut self.data.val, &mut self.data.test].into_iter().flatten() {
            fix(p);
        }
        fix(&mut self.run.cache_dir);
    }

    /// Applies a `section.key=value` override; call [`Self::validate`]
    /// once all overrides are in.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), ConfigError> {
        let (k, v) = spec.split_once('=').ok_or_else(|| ConfigError::BadOverride(spec.to_owned()))?;
        if !k.contains('.') {
            return Err(ConfigError::BadOverride(spec.to_owned()));
        }
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        let opt_path = |v: &str| if v.is_empty() { None } else { Some(PathBuf::from(v)) };
        match key {
            "data.train" => self.data.train = opt_path(v),
            "data.val" => self.data.val = opt_path(v),
            "data.test" => self.data.test = opt_path(v),
            "run.seed" => self.run.seed = parse(key, v)?,
            "run.cache_dir" => self.run.cache_dir = PathBuf::from(v),
            "scatter.j" => self.scatter.j = parse(key, v)?,
            "scatter.resolutions" => self.scatter.resolutions = parse_list(key, v)?,
            "scatter.k_sample_stride" => self.scatter.k_sample_stride = parse(key, v)?,
            "vesselness.min_scale" => self.vesselness.min_scale = parse(key, v)?,
            "vesselness.max_scale" => self.vesselness.max_scale = parse(key, v)?,
            "vesselness.num_scales" => self.vesselness.num_scales = parse(key, v)?,
            "vesselness.beta" => self.vesselness.beta = parse(key, v)?,
            "vesselness.c" => {
                self.vesselness.c = if v.eq_ignore_ascii_case("auto") { None } else { Some(parse(key, v)?) }
            }
            "vesselness.polarity" => {
                self.vesselness.polarity = match v.to_ascii_lowercase().as_str() {
                    "bright" => Polarity::Bright,
                    "dark" => Polarity::Dark,
                    _ => return Err(bad(key, v, "expected bright or dark")),
                }
            }
            "pcanet.filters" => self.pcanet.filters = parse_list(key, v)?,
            "pcanet.patch" => self.pcanet.patch = parse(key, v)?,
            "pcanet.sample_rate" => self.pcanet.sample_rate = parse(key, v)?,
            "pcanet.max_patches" => self.pcanet.max_patches = parse(key, v)?,
            "pcanet.rectify" => self.pcanet.rectify = parse(key, v)?,
            "fisher.components" => self.fisher.components = parse(key, v)?,
            "fisher.reduced_dim" => self.fisher.reduced_dim = parse(key, v)?,
            "fisher.window" => self.fisher.window = parse(key, v)?,
            "fisher.stride" => self.fisher.stride = parse(key, v)?,
            "fisher.descriptors_per_image" => self.fisher.descriptors_per_image = parse(key, v)?,
            "fisher.em_max_iters" => self.fisher.em_max_iters = parse(key, v)?,
            "fisher.em_tol" => self.fisher.em_tol = parse(key, v)?,
            "crf.l2_reg" => self.crf.l2_reg = parse(key, v)?,
            "crf.pixels_per_class" => self.crf.pixels_per_class = parse(key, v)?,
            "crf.lbfgs_iters" => self.crf.lbfgs_iters = parse(key, v)?,
            "crf.w0" => self.crf.w0 = parse_list(key, v)?,
            "crf.w1" => self.crf.w1 = parse_list(key, v)?,
            "crf.beta" => self.crf.beta = parse_list(key, v)?,
            "crf.trw_max_iters" => self.crf.trw_max_iters = parse(key, v)?,
            "crf.trw_tol" => self.crf.trw_tol = parse(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.to_owned())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let check = |ok: bool, key: &str, value: String, reason: &str| if ok { Ok(()) } else { Err(bad(key, &value, reason)) };
        check(self.scatter.j >= 1, "scatter.j", self.scatter.j.to_string(), "must be at least 1")?;
        check(
            !self.scatter.resolutions.is_empty() && self.scatter.resolutions.iter().all(|&r| r > 0.0 && r <= 1.0),
            "scatter.resolutions",
            list(&self.scatter.resolutions),
            "each must lie in (0, 1]",
        )?;
        check(self.scatter.k_sample_stride >= 1, "scatter.k_sample_stride", self.scatter.k_sample_stride.to_string(), "must be positive")?;
        let v = &self.vesselness;
        check(
            v.min_scale > 0.0 && v.max_scale >= v.min_scale && v.num_scales >= 1,
            "vesselness.scales",
            format!("{}..{} x{}", v.min_scale, v.max_scale, v.num_scales),
            "need 0 < min <= max and at least one scale",
        )?;
        check(v.num_scales == 1 || v.max_scale > v.min_scale, "vesselness.max_scale", v.max_scale.to_string(), "must exceed min_scale")?;
        check(v.beta > 0.0, "vesselness.beta", v.beta.to_string(), "must be positive")?;
        check(v.c.is_none_or(|c| c > 0.0), "vesselness.c", format!("{:?}", v.c), "must be positive or auto")?;
        let p = &self.pcanet;
        check(!p.filters.is_empty() && p.filters.iter().all(|&k| k > 0), "pcanet.filters", list(&p.filters), "need positive counts")?;
        check(p.patch % 2 == 1, "pcanet.patch", p.patch.to_string(), "must be odd")?;
        check(p.sample_rate > 0.0 && p.sample_rate <= 1.0, "pcanet.sample_rate", p.sample_rate.to_string(), "must lie in (0, 1]")?;
        let f = &self.fisher;
        let out: usize = p.filters.iter().sum();
        check(f.reduced_dim <= out, "fisher.reduced_dim", f.reduced_dim.to_string(), "exceeds the PCANet output channel count")?;
        check(f.components >= 1, "fisher.components", f.components.to_string(), "must be positive")?;
        check(f.reduced_dim >= 1, "fisher.reduced_dim", f.reduced_dim.to_string(), "must be positive")?;
        check(f.window % 2 == 1, "fisher.window", f.window.to_string(), "must be odd")?;
        check(f.stride >= 1, "fisher.stride", f.stride.to_string(), "must be positive")?;
        check(f.descriptors_per_image >= 1, "fisher.descriptors_per_image", f.descriptors_per_image.to_string(), "must be positive")?;
        let c = &self.crf;
        check(c.l2_reg >= 0.0, "crf.l2_reg", c.l2_reg.to_string(), "must be non-negative")?;
        check(c.pixels_per_class >= 1, "crf.pixels_per_class", c.pixels_per_class.to_string(), "must be positive")?;
        check(!c.w0.is_empty() && c.w0.iter().all(|&x| x >= 0.0), "crf.w0", list(&c.w0), "need non-negative candidates")?;
        check(!c.w1.is_empty() && c.w1.iter().all(|&x| x >= 0.0), "crf.w1", list(&c.w1), "need non-negative candidates")?;
        check(!c.beta.is_empty() && c.beta.iter().all(|&x| x > 0.0), "crf.beta", list(&c.beta), "need positive candidates")?;
        check(c.trw_max_iters >= 1, "crf.trw_max_iters", c.trw_max_iters.to_string(), "must be positive")?;
        Ok(())
    }

    pub fn split(&self, name: &str) -> Result<&Path, ConfigError> {
        let p = match name {
            "train" => &self.data.train,
            "val" => &self.data.val,
            "test" => &self.data.test,
            _ => return Err(ConfigError::UnknownKey(format!("data.{name}"))),
        };
        p.as_deref().ok_or_else(|| ConfigError::MissingSplit(name.to_owned()))
    }

    /// Canonical INI text. `with_run` adds the `[run]` cache directory,
    /// which never influences results and is left out of model bundles.
    pub fn to_ini_string(&self, with_run: bool) -> String {
        let mut s = String::new();
        let d = &self.data;
        let _ = writeln!(s, "[data]\ntrain = {}\nval = {}\ntest = {}\n", path_or_empty(&d.train), path_or_empty(&d.val), path_or_empty(&d.test));
        let _ = writeln!(s, "[run]\nseed = {}", self.run.seed);
        if with_run {
            let _ = writeln!(s, "cache_dir = {}", self.run.cache_dir.display());
        }
        let sc = &self.scatter;
        let _ = writeln!(s, "\n[scatter]\nj = {}\nresolutions = {}\nk_sample_stride = {}\n", sc.j, list(&sc.resolutions), sc.k_sample_stride);
        let v = &self.vesselness;
        let _ = writeln!(
            s,
            "[vesselness]\nmin_scale = {}\nmax_scale = {}\nnum_scales = {}\nbeta = {}\nc = {}\npolarity = {}\n",
            v.min_scale,
            v.max_scale,
            v.num_scales,
            v.beta,
            v.c.map_or("auto".to_owned(), |c| c.to_string()),
            match v.polarity {
                Polarity::Bright => "bright",
                Polarity::Dark => "dark",
            }
        );
        let p = &self.pcanet;
        let _ = writeln!(
            s,
            "[pcanet]\nfilters = {}\npatch = {}\nsample_rate = {}\nmax_patches = {}\nrectify = {}\n",
            list(&p.filters),
            p.patch,
            p.sample_rate,
            p.max_patches,
            p.rectify
        );
        let f = &self.fisher;
        let _ = writeln!(
            s,
            "[fisher]\ncomponents = {}\nreduced_dim = {}\nwindow = {}\nstride = {}\ndescriptors_per_image = {}\nem_max_iters = {}\nem_tol = {}\n",
            f.components, f.reduced_dim, f.window, f.stride, f.descriptors_per_image, f.em_max_iters, f.em_tol
        );
        let c = &self.crf;
        let _ = writeln!(
            s,
            "[crf]\nl2_reg = {}\npixels_per_class = {}\nlbfgs_iters = {}\nw0 = {}\nw1 = {}\nbeta = {}\ntrw_max_iters = {}\ntrw_tol = {}",
            c.l2_reg,
            c.pixels_per_class,
            c.lbfgs_iters,
            list(&c.w0),
            list(&c.w1),
            list(&c.beta),
            c.trw_max_iters,
            c.trw_tol
        );
        s
    }

    pub fn scatter_config(&self, k: Vec<f64>) -> ScatterConfig {
        ScatterConfig { j_max: self.scatter.j, k, resolutions: self.scatter.resolutions.clone() }
    }

    pub fn vesselness_config(&self) -> VesselnessConfig {
        let v = &self.vesselness;
        VesselnessConfig {
            scales: geometric_scales(v.min_scale, v.max_scale, v.num_scales),
            beta: v.beta,
            c: v.c,
            polarity: v.polarity,
        }
    }

    pub fn pcanet_config(&self) -> PcaNetConfig {
        let p = &self.pcanet;
        PcaNetConfig {
            filters: p.filters.clone(),
            patch: p.patch,
            sample_rate: p.sample_rate,
            max_patches: p.max_patches,
            rectify: p.rectify,
            seed: self.run.seed,
        }
    }

    pub fn fv_config(&self) -> FvConfig {
        let f = &self.fisher;
        FvConfig {
            reduced_dim: f.reduced_dim,
            gmm: GmmConfig { k: f.components, max_iters: f.em_max_iters, rel_tol: f.em_tol, seed: self.run.seed },
            window: f.window,
            stride: f.stride,
        }
    }

    pub fn lbfgs_config(&self) -> LbfgsConfig {
        LbfgsConfig { max_iters: self.crf.lbfgs_iters, ..LbfgsConfig::default() }
    }

    pub fn pairwise_grid(&self) -> PairwiseGrid {
        PairwiseGrid { w0: self.crf.w0.clone(), w1: self.crf.w1.clone(), beta: self.crf.beta.clone() }
    }

    pub fn trw_options(&self) -> TrwOptions {
        TrwOptions { max_iters: self.crf.trw_max_iters, tol: self.crf.trw_tol }
    }
}
