//! Non-neural pipeline for head-and-neck CT auto-contouring: Hounsfield
//! windowing, body-based ROI cropping and restoration, label merging, and
//! segmentation scoring (Dice, precision, recall, normalized surface Dice).
//!
//! A synthetic phantom generator with an oracle threshold segmenter closes
//! the loop so the whole pipeline can be exercised without patient data.

pub mod config;
pub mod error;
pub mod intensity;
pub mod labels;
pub mod metrics;
pub mod nifti;
pub mod phantom;
pub mod pipeline;
pub mod plan;
pub mod roi;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{GridGeometry, IntensityVolume, LabelVolume, Mask, PairedCase, Volume};
