//! Numeric core of the tsshdl brain-matter segmentation pipeline.
//!
//! The crate is `no_std` (it needs `alloc`) and contains every algorithmic
//! stage of the pipeline:
//!
//! * hand-crafted invariant features: a parametric-log DTCWT scattering
//!   network ([`scatternet`]), multiscale Hessian vesselness ([`vesselness`])
//!   and MR8 texture responses ([`texture`]),
//! * feature stacking and standardization ([`featstack`]),
//! * a four-layer PCA filter bank learner ([`pcanet`]),
//! * diagonal-GMM Fisher-vector encoding ([`fisher`]),
//! * a 4-connected grid CRF with tree-reweighted inference ([`crf`]),
//! * segmentation metrics ([`metrics`]) and a synthetic dataset generator
//!   ([`synth`]).
//!
//! File formats, model bundles and the command line live in the companion
//! `tsshdl` crate.
#![no_std]

extern crate alloc;

pub mod crf;
pub mod featstack;
pub mod filter;
pub mod fisher;
pub mod image;
pub mod linalg;
pub mod metrics;
pub mod optim;
pub mod pcanet;
pub mod scatternet;
pub mod synth;
pub mod texture;
pub mod vesselness;

pub use image::{FeatureStack, ImageError, LabelMap, Plane, Spacing, Volume};
