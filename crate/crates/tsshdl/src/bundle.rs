//! Versioned binary model bundle. Parameters are stored as little-endian
//! `f32`; encoding the same model twice gives identical bytes.

use std::path::Path;

use tsshdl_core::crf::{CrfModel, PairwiseParams};
use tsshdl_core::featstack::Standardizer;
use tsshdl_core::fisher::{FvEncoder, Gmm, Reducer};
use tsshdl_core::pcanet::{PcaLayer, PcaNetModel};

use crate::io::{read_file, write_atomic, IoError};

pub const BUNDLE_MAGIC: &[u8; 4] = b"TSMB";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("not a model bundle (bad magic)")]
    BadMagic,
    #[error("bundle version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("bundle truncated")]
    Truncated,
    #[error("invalid bundle: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Everything `segment` needs, plus the configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    /// canonical INI text of the training configuration
    pub config: String,
    /// fitted scattering log offsets, one per scale
    pub scatter_k: Vec<f64>,
    pub standardizer: Standardizer,
    pub pcanet: PcaNetModel,
    pub encoder: FvEncoder,
    pub crf: CrfModel,
}

/// Rounds through `f32`, the storage precision.
pub fn round_f32(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = *x as f32 as f64);
}

impl ModelBundle {
    /// Rounds every parameter to storage precision, so a model in memory
    /// behaves exactly like its reloaded copy.
    pub fn quantize(&mut self) {
        round_f32(&mut self.scatter_k);
        quantize_standardizer(&mut self.standardizer);
        quantize_pcanet(&mut self.pcanet);
        quantize_encoder(&mut self.encoder);
        quantize_crf(&mut self.crf);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(BUNDLE_MAGIC);
        w.u32(BUNDLE_VERSION);
        w.str(&self.config);
        w.f32s(&self.scatter_k);
        w.f32s(&self.standardizer.means);
        w.f32s(&self.standardizer.stds);
        w.u32(self.pcanet.rectify as u32);
        w.u32(self.pcanet.layers.len() as u32);
        for l in &self.pcanet.layers {
            w.u32(l.patch as u32);
            w.u32(l.channels_in as u32);
            w.u32(l.rank as u32);
            w.f32s(&l.eigenvalues);
            w.f32s(&l.filters);
        }
        let e = &self.encoder;
        w.u32(e.window as u32);
        w.u32(e.stride as u32);
        w.u32(e.reducer.input_dim as u32);
        w.f32s(&e.reducer.mean);
        w.f32s(&e.reducer.basis);
        w.u32(e.gmm.dim as u32);
        w.f32s(&e.gmm.weights);
        w.f32s(&e.gmm.means);
        w.f32s(&e.gmm.variances);
        let c = &self.crf;
        w.u32(c.num_classes as u32);
        w.u32(c.feature_dim as u32);
        w.f32s(&c.weights);
        w.f32s(&[c.pairwise.w0, c.pairwise.w1, c.pairwise.beta]);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BundleError> {
        if bytes.len() < 4 || &bytes[..4] != BUNDLE_MAGIC {
            return Err(BundleError::BadMagic);
        }
        let mut r = Reader { bytes, pos: 4 };
        let version = r.u32()?;
        if version != BUNDLE_VERSION {
            return Err(BundleError::VersionMismatch { found: version, expected: BUNDLE_VERSION });
        }
        let config = r.str()?;
        let scatter_k = r.f32s()?;
        let standardizer = Standardizer { means: r.f32s()?, stds: r.f32s()? };
        let rectify = r.u32()? != 0;
        let n_layers = r.u32()? as usize;
        let mut layers = Vec::with_capacity(n_layers.min(64));
        for _ in 0..n_layers {
            let (patch, channels_in, rank) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
            let eigenvalues = r.f32s()?;
            let filters = r.f32s()?;
            if filters.len() != eigenvalues.len() * channels_in * patch * patch {
                return Err(BundleError::Invalid("PCANet filter payload size".into()));
            }
            layers.push(PcaLayer { patch, channels_in, filters, eigenvalues, rank });
        }
        let (window, stride, input_dim) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let reducer = Reducer { input_dim, mean: r.f32s()?, basis: r.f32s()? };
        let dim = r.u32()? as usize;
        let gmm = Gmm { dim, weights: r.f32s()?, means: r.f32s()?, variances: r.f32s()? };
        let (num_classes, feature_dim) = (r.u32()? as usize, r.u32()? as usize);
        let weights = r.f32s()?;
        let pw = r.f32s()?;
        if r.pos != bytes.len() {
            return Err(BundleError::Invalid(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let [w0, w1, beta]: [f64; 3] = pw.try_into().map_err(|_| BundleError::Invalid("pairwise parameters".into()))?;
        let bundle = ModelBundle {
            config,
            scatter_k,
            standardizer,
            pcanet: PcaNetModel { layers, rectify },
            encoder: FvEncoder { reducer, gmm, window, stride },
            crf: CrfModel { num_classes, feature_dim, weights, pairwise: PairwiseParams { w0, w1, beta } },
        };
        bundle.check()?;
        Ok(bundle)
    }

    /// Shape agreement between consecutive stages.
    pub fn check(&self) -> Result<(), BundleError> {
        let bad = |m: &str| Err(BundleError::Invalid(m.to_owned()));
        if self.standardizer.means.len() != self.standardizer.stds.len() {
            return bad("standardizer means and stds differ in length");
        }
        let mut c = self.standardizer.means.len();
        for l in &self.pcanet.layers {
            if l.channels_in != c {
                return bad("PCANet layer input channels do not chain");
            }
            c = l.k();
        }
        let e = &self.encoder;
        if e.reducer.input_dim != self.pcanet.output_channels() || e.reducer.mean.len() != e.reducer.input_dim {
            return bad("encoder input does not match the PCANet output");
        }
        if e.reducer.input_dim == 0 || !e.reducer.basis.len().is_multiple_of(e.reducer.input_dim) || e.reducer.output_dim() != e.gmm.dim {
            return bad("reducer and mixture dimensions disagree");
        }
        let k = e.gmm.weights.len();
        if k == 0 || e.gmm.means.len() != k * e.gmm.dim || e.gmm.variances.len() != k * e.gmm.dim {
            return bad("mixture parameter sizes");
        }
        if e.window.is_multiple_of(2) || e.stride == 0 {
            return bad("encoder window must be odd and stride positive");
        }
        let crf = &self.crf;
        if crf.feature_dim != e.output_dim() || crf.weights.len() != crf.num_classes * (crf.feature_dim + 1) {
            return bad("CRF weights do not match the Fisher-vector dimension");
        }
        crf.pairwise.validate().map_err(|e| BundleError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), BundleError> {
        Ok(write_atomic(path, &self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, BundleError> {
        Self::from_bytes(&read_file(path)?)
    }
}

pub(crate) fn quantize_standardizer(s: &mut Standardizer) {
    round_f32(&mut s.means);
    round_f32(&mut s.stds);
}

pub(crate) fn quantize_pcanet(m: &mut PcaNetModel) {
    for l in &mut m.layers {
        round_f32(&mut l.filters);
        round_f32(&mut l.eigenvalues);
    }
}

pub(crate) fn quantize_encoder(e: &mut FvEncoder) {
    round_f32(&mut e.reducer.mean);
    round_f32(&mut e.reducer.basis);
    round_f32(&mut e.gmm.weights);
    round_f32(&mut e.gmm.means);
    round_f32(&mut e.gmm.variances);
}

pub(crate) fn quantize_crf(c: &mut CrfModel) {
    round_f32(&mut c.weights);
    let mut p = [c.pairwise.w0, c.pairwise.w1, c.pairwise.beta];
    round_f32(&mut p);
    c.pairwise = PairwiseParams { w0: p[0], w1: p[1], beta: p[2] };
}

pub(crate) mod stage {
    //! Per-stage rounding used while training, so that every later stage
    //! is fitted against the stored parameters.
    pub(crate) use super::{quantize_crf as crf, quantize_encoder as encoder, quantize_pcanet as pcanet, quantize_standardizer as standardizer};
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }

    fn f32s(&mut self, v: &[f64]) {
        self.u32(v.len() as u32);
        for x in v {
            self.0.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], BundleError> {
        let end = self.pos.checked_add(n).ok_or(BundleError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(BundleError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, BundleError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String, BundleError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| BundleError::Invalid("config text is not UTF-8".into()))
    }

    fn f32s(&mut self) -> Result<Vec<f64>, BundleError> {
        let n = self.u32()? as usize;
        let raw = self.take(n.checked_mul(4).ok_or(BundleError::Truncated)?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect())
    }
}
