//! Input representations: log-mel spectrograms, pairwise GCC-PHAT vectors and
//! their augmented variants.

pub mod augment;
pub mod gcc;
pub mod spectral;
pub mod tensor;

use thiserror::Error;

pub use augment::{augment, AugmentDraw};
pub use gcc::{gcc_phat_all, gcc_phat_pair, sensor_pairs, tdoa_estimate, GccPhatSet, TdoaEstimate, DEFAULT_MAX_LAG};
pub use spectral::{
    frame_count, hz_to_mel, mel_filterbank, mel_spectrogram, mel_to_hz, stft, MelAnalyzer, MelSpectrogram, HOP,
    N_FFT, N_MELS,
};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("signal too short: {len} samples, need {need}")]
    TooShort { len: usize, need: usize },
    #[error("invalid analysis config: {0}")]
    InvalidConfig(String),
    #[error("signal has zero energy")]
    ZeroEnergy,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("tensor container: {0}")]
    Container(String),
}
