//! Image, volume, label-map and feature-stack types shared by every stage.
//!
//! All pixel buffers are row-major: index `y * width + x`, and for volumes
//! `(z * height + y) * width + x`.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ImageError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("voxel spacing must be strictly positive, got ({0}, {1}, {2})")]
    InvalidSpacing(f64, f64, f64),
    #[error("duplicate channel name `{0}`")]
    DuplicateChannel(String),
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: u8, num_classes: u8 },
}

/// A single 2-D plane of `f64` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Plane { width, height, data: vec![value; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if data.len() != width * height {
            return Err(ImageError::DimMismatch(format!(
                "plane {}x{} needs {} samples, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Plane { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane { width: self.width, height: self.height, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn transpose(&self) -> Plane {
        Plane::from_fn(self.height, self.width, |x, y| self.get(y, x))
    }

    /// Rotates by 90° counter-clockwise (as displayed with y pointing down).
    pub fn rot90(&self) -> Plane {
        let (w, h) = (self.width, self.height);
        Plane::from_fn(h, w, |x, y| self.get(w - 1 - y, x))
    }

    /// Circular shift by `(dx, dy)` pixels.
    pub fn roll(&self, dx: isize, dy: isize) -> Plane {
        let (w, h) = (self.width as isize, self.height as isize);
        Plane::from_fn(self.width, self.height, |x, y| {
            let sx = (x as isize - dx).rem_euclid(w) as usize;
            let sy = (y as isize - dy).rem_euclid(h) as usize;
            self.get(sx, sy)
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Physical voxel size in millimetres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spacing {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Spacing {
    pub const UNIT: Spacing = Spacing { x: 1.0, y: 1.0, z: 1.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Result<Self, ImageError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(x) && ok(y) && ok(z) {
            Ok(Spacing { x, y, z })
        } else {
            Err(ImageError::InvalidSpacing(x, y, z))
        }
    }

    pub fn voxel_volume(&self) -> f64 {
        self.x * self.y * self.z
    }
}

impl Default for Spacing {
    fn default() -> Self {
        Spacing::UNIT
    }
}

/// Scalar image data: a 2-D slice (`depth == 1`) or a stack of slices.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    width: usize,
    height: usize,
    depth: usize,
    spacing: Spacing,
    data: Vec<f64>,
}

impl Volume {
    pub fn new(
        width: usize,
        height: usize,
        depth: usize,
        spacing: Spacing,
        data: Vec<f64>,
    ) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || depth == 0 || data.len() != width * height * depth {
            return Err(ImageError::DimMismatch(format!(
                "volume {}x{}x{} cannot hold {} samples",
                width,
                height,
                depth,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(ImageError::NonFinite(i));
        }
        Spacing::new(spacing.x, spacing.y, spacing.z)?;
        Ok(Volume { width, height, depth, spacing, data })
    }

    pub fn from_plane(plane: &Plane, spacing: Spacing) -> Result<Self, ImageError> {
        Volume::new(plane.width, plane.height, 1, spacing, plane.data.clone())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn slice(&self, z: usize) -> Plane {
        let n = self.width * self.height;
        Plane { width: self.width, height: self.height, data: self.data[z * n..(z + 1) * n].to_vec() }
    }

    pub fn slices(&self) -> impl Iterator<Item = Plane> + '_ {
        (0..self.depth).map(move |z| self.slice(z))
    }

    /// Rescales intensities to `[0, 1]` with `(v - min) / (max - min)`.
    /// A constant volume maps to all zeros.
    pub fn normalized(&self) -> Volume {
        let (lo, hi) = self
            .data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let range = hi - lo;
        let data = if range > 0.0 {
            self.data.iter().map(|&v| (v - lo) / range).collect()
        } else {
            vec![0.0; self.data.len()]
        };
        Volume { data, ..*self }
    }
}

/// Per-voxel class labels: background = 0, grey matter = 1, white matter = 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    depth: usize,
    num_classes: u8,
    labels: Vec<u8>,
}

pub const BACKGROUND: u8 = 0;
pub const GREY_MATTER: u8 = 1;
pub const WHITE_MATTER: u8 = 2;
pub const NUM_TISSUE_CLASSES: u8 = 3;

impl LabelMap {
    pub fn new(
        width: usize,
        height: usize,
        depth: usize,
        num_classes: u8,
        labels: Vec<u8>,
    ) -> Result<Self, ImageError> {
        if labels.len() != width * height * depth {
            return Err(ImageError::DimMismatch(format!(
                "label map {}x{}x{} cannot hold {} labels",
                width,
                height,
                depth,
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(ImageError::LabelOutOfRange { label, num_classes });
        }
        Ok(LabelMap { width, height, depth, num_classes, labels })
    }

    pub fn filled(width: usize, height: usize, depth: usize, num_classes: u8, label: u8) -> Result<Self, ImageError> {
        LabelMap::new(width, height, depth, num_classes, vec![label; width * height * depth])
    }

    /// Stacks 2-D label slices of equal size into one map.
    pub fn from_slices(slices: &[LabelMap]) -> Result<Self, ImageError> {
        let first = slices.first().ok_or_else(|| ImageError::DimMismatch("no slices".into()))?;
        let mut labels = Vec::with_capacity(first.labels.len() * slices.len());
        for s in slices {
            if s.width != first.width || s.height != first.height || s.num_classes != first.num_classes {
                return Err(ImageError::DimMismatch("slices differ in size or class count".into()));
            }
            labels.extend_from_slice(&s.labels);
        }
        let depth = labels.len() / (first.width * first.height);
        LabelMap::new(first.width, first.height, depth, first.num_classes, labels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn num_classes(&self) -> u8 {
        self.num_classes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.depth)
    }

    pub fn slice(&self, z: usize) -> LabelMap {
        let n = self.width * self.height;
        LabelMap {
            width: self.width,
            height: self.height,
            depth: 1,
            num_classes: self.num_classes,
            labels: self.labels[z * n..(z + 1) * n].to_vec(),
        }
    }

    pub fn mask(&self, class_id: u8) -> Vec<bool> {
        self.labels.iter().map(|&l| l == class_id).collect()
    }

    pub fn count(&self, class_id: u8) -> usize {
        self.labels.iter().filter(|&&l| l == class_id).count()
    }

    pub fn check_matches(&self, vol: &Volume) -> Result<(), ImageError> {
        if self.dims() != (vol.width, vol.height, vol.depth) {
            return Err(ImageError::DimMismatch(format!(
                "labels {:?} vs volume {:?}",
                self.dims(),
                (vol.width, vol.height, vol.depth)
            )));
        }
        Ok(())
    }

    pub fn check_same_dims(&self, other: &LabelMap) -> Result<(), ImageError> {
        if self.dims() != other.dims() {
            return Err(ImageError::DimMismatch(format!("labels {:?} vs {:?}", self.dims(), other.dims())));
        }
        Ok(())
    }
}

/// A per-pixel multi-channel feature tensor: one `f32` plane per channel,
/// channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    width: usize,
    height: usize,
    names: Vec<String>,
    data: Vec<f32>,
}

impl FeatureStack {
    pub fn empty(width: usize, height: usize) -> Self {
        FeatureStack { width, height, names: Vec::new(), data: Vec::new() }
    }

    pub fn new(width: usize, height: usize, names: Vec<String>, data: Vec<f32>) -> Result<Self, ImageError> {
        if data.len() != width * height * names.len() {
            return Err(ImageError::DimMismatch(format!(
                "{} channels of {}x{} need {} values, got {}",
                names.len(),
                width,
                height,
                width * height * names.len(),
                data.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(ImageError::DuplicateChannel(n.clone()));
            }
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(ImageError::NonFinite(i));
        }
        Ok(FeatureStack { width, height, names, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_f64(&self, c: usize) -> Plane {
        Plane { width: self.width, height: self.height, data: self.plane(c).iter().map(|&v| v as f64).collect() }
    }

    /// Appends a channel, rounding the plane to `f32`.
    pub fn push(&mut self, name: impl Into<String>, plane: &Plane) -> Result<(), ImageError> {
        if plane.dims() != (self.width, self.height) {
            return Err(ImageError::DimMismatch(format!(
                "plane {:?} vs stack {:?}",
                plane.dims(),
                (self.width, self.height)
            )));
        }
        self.push_f32(name, plane.data.iter().map(|&v| v as f32).collect())
    }

    pub fn push_f32(&mut self, name: impl Into<String>, plane: Vec<f32>) -> Result<(), ImageError> {
        let name = name.into();
        if plane.len() != self.pixels() {
            return Err(ImageError::DimMismatch(format!("plane has {} values, stack needs {}", plane.len(), self.pixels())));
        }
        if self.names.iter().any(|n| *n == name) {
            return Err(ImageError::DuplicateChannel(name));
        }
        if let Some(i) = plane.iter().position(|v| !v.is_finite()) {
            return Err(ImageError::NonFinite(self.data.len() + i));
        }
        self.names.push(name);
        self.data.extend(plane);
        Ok(())
    }

    /// Value of channel `c` at pixel index `p`.
    #[inline]
    pub fn at(&self, c: usize, p: usize) -> f32 {
        self.data[c * self.pixels() + p]
    }

    /// Copies the channel vector of pixel `p` into `out`.
    pub fn pixel_into(&self, p: usize, out: &mut [f64]) {
        let n = self.pixels();
        for (c, o) in out.iter_mut().enumerate().take(self.channels()) {
            *o = self.data[c * n + p] as f64;
        }
    }

    pub fn into_parts(self) -> (usize, usize, Vec<String>, Vec<f32>) {
        (self.width, self.height, self.names, self.data)
    }
}
