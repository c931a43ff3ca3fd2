//! Facial emotion classification (happy / unknown / sad) from blendshape
//! score vectors.
//!
//! The pipeline prunes rarely-active blendshapes ([`featsel`]), feeds the
//! rest to a stacked LSTM with a softmax head ([`nn`]) trained with AdamW
//! ([`optim`]), and serves predictions frame by frame ([`infer`]).

pub mod cli;
pub mod dataio;
pub mod error;
pub mod featsel;
pub mod infer;
pub mod lossmetrics;
pub mod nn;
pub mod optim;
pub mod par;

pub use error::{Error, Result};
