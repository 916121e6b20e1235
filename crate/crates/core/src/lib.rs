//! Contact localization on a cylindrical rod from six-channel vibration
//! recordings and optional proprioception.

pub mod audio_io;
pub mod features;
pub mod geometry;
pub mod localize;
pub mod mapping;
pub mod preprocess;
pub mod proprio;
pub mod simulate;

pub use audio_io::{EventRecord, MultiChannelClip, NUM_CHANNELS, SAMPLE_RATE};
pub use geometry::{ContactPoint, CylinderSpec, PointCloud, Pose, Vec3};
pub use proprio::{ProprioSample, ProprioTrace};
