//! Small neural-network core: layers with hand-written backward passes, losses,
//! Adam, gradient clipping and trainers for three window models.
//!
//! Everything is generic over [`Scalar`]; training runs in `f32` while the
//! gradient checks use `f64`.

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};
use thiserror::Error;

mod checkpoint;
pub mod layers;
pub mod loss;
pub mod models;
pub mod optim;
pub mod params;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use layers::positional_encoding;
pub use loss::{bce, mse};
pub use models::Network;
pub use optim::{clip_gradients, Adam};
pub use params::ParamStore;
pub use train::{feature_errors, reconstruct_errors, train, window_target, EpochLoss, TrainedModel};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },
    #[error("positional encoding needs an even width, got {0}")]
    OddWidth(usize),
    #[error("batch has no windows")]
    EmptyBatch,
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("invalid model configuration: {0}")]
    BadConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub(crate) fn shape_err(context: &'static str, expected: impl Debug, got: impl Debug) -> NnError {
    NnError::ShapeMismatch {
        context,
        expected: format!("{expected:?}"),
        got: format!("{got:?}"),
    }
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

/// Floating-point element type of tensors.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    const DTYPE: &'static str;
    const BYTES: usize;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

#[inline]
pub(crate) fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("representable constant")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    LstmRecon,
    GanLstm,
    Tst,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::LstmRecon, ModelKind::GanLstm, ModelKind::Tst];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::LstmRecon => "lstm-recon",
            ModelKind::GanLstm => "gan-lstm",
            ModelKind::Tst => "tst",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = NnError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "lstm-recon" | "lstm" => Ok(ModelKind::LstmRecon),
            "gan-lstm" | "gan" => Ok(ModelKind::GanLstm),
            "tst" | "transformer" => Ok(ModelKind::Tst),
            other => Err(NnError::BadConfig(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Architecture description. The model reconstructs (or forecasts) the first
/// `output_size` input features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub input_size: usize,
    pub hidden_size: usize,
    pub n_layers: usize,
    pub output_size: usize,
    pub dropout: f64,
    pub seq_len: usize,
    pub seed: u64,
    /// Noise width of the adversarial model.
    pub latent_size: usize,
    /// Attention heads of the transformer.
    pub n_heads: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::LstmRecon,
            input_size: 5,
            hidden_size: 64,
            n_layers: 2,
            output_size: 5,
            dropout: 0.2,
            seq_len: 32,
            seed: 0,
            latent_size: 8,
            n_heads: 4,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NnError::BadConfig(m.to_string()));
        if self.input_size == 0
            || self.hidden_size == 0
            || self.n_layers == 0
            || self.output_size == 0
            || self.seq_len == 0
            || self.latent_size == 0
            || self.n_heads == 0
        {
            return bad("all sizes must be >= 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.output_size > self.input_size {
            return bad("output_size cannot exceed input_size");
        }
        if self.kind == ModelKind::Tst {
            if self.hidden_size % self.n_heads != 0 {
                return bad("hidden_size must be divisible by n_heads");
            }
            if self.hidden_size % 2 != 0 {
                return bad("transformer width must be even");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_grad_norm: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for OptimHyper {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: 1.0,
            epochs: 20,
            batch_size: 32,
        }
    }
}

impl OptimHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.max_grad_norm > 0.0
            && self.batch_size > 0;
        if ok {
            Ok(())
        } else {
            Err(NnError::BadConfig(format!("invalid optimiser settings {self:?}")))
        }
    }
}
