//! Two-pathway encoder mapping sheet snippets and audio excerpts into a
//! shared 32-d space, with an optional soft-attention branch over audio
//! frames.
//!
//! Each pathway is a stack of stride-2 ELU convolutions followed by either
//! global average pooling (`HeadKind::Pooled`) or a dense layer
//! (`HeadKind::Dense`), then a linear projection and L2 normalization.
//! Sheet snippets are inverted (ink = 1) and average-pooled on input; audio
//! excerpts are scaled to unit RMS after any frame weighting.

mod arch;
mod checkpoint;
mod network;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use arch::{ArchConfig, HeadKind, Variant, EMBEDDING_DIM};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use network::{
    audio_batch, sheet_batch, AttentionNet, AudioTape, Builder, EmbedTape, FeatureTape, Init, MaskMode, Modality,
    Network, ParamSpec, Pathway,
};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::nn::ParamStore;

/// Batch size used by the encoding helpers.
pub const ENCODE_BATCH: usize = 64;

/// Trainable weights plus the architecture and seed they were created from.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub arch: ArchConfig,
    pub seed: u64,
    pub store: ParamStore<f32>,
}

impl ModelParams {
    pub fn network(&self) -> Result<Network> {
        let net = Network::new(&self.arch)?;
        net.check(&self.store)?;
        Ok(net)
    }

    pub fn all_finite(&self) -> bool {
        self.store.all_finite()
    }
}

pub fn init_params(arch: &ArchConfig, seed: u64) -> Result<ModelParams> {
    let net = Network::new(arch)?;
    Ok(ModelParams { arch: arch.clone(), seed, store: net.init(seed) })
}

/// Unit-norm point in the joint space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    /// Normalizes `v` (in f64) and stores it in single precision.
    pub fn from_f64(v: &[f64]) -> Result<Self> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::arg("cannot normalize a zero or non-finite vector"));
        }
        Ok(Self(v.iter().map(|x| (x / n) as f32).collect()))
    }

    pub fn from_f32(v: &[f32]) -> Result<Self> {
        Self::from_f64(&v.iter().map(|&x| x as f64).collect::<Vec<_>>())
    }

    /// Wraps stored values as-is; used when reading persisted embeddings.
    pub fn from_raw(v: Vec<f32>) -> Self {
        Self(v)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| *a as f64 * *b as f64).sum()
    }
}

/// Per-frame weights produced by the attention branch; a probability vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionMask(pub Vec<f32>);

impl AttentionMask {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().map(|&v| v as f64).sum()
    }
}

fn rows_to_embeddings(z: &Array2<f32>) -> Result<Vec<Embedding>> {
    z.outer_iter().map(|r| Embedding::from_f32(r.as_slice().expect("standard layout"))).collect()
}

/// Encoder with a built network, reused across many calls.
pub struct Encoder<'a> {
    pub params: &'a ModelParams,
    pub net: Network,
}

impl<'a> Encoder<'a> {
    pub fn new(params: &'a ModelParams) -> Result<Self> {
        Ok(Self { net: params.network()?, params })
    }

    pub fn sheets(&self, snippets: &[&Grid]) -> Result<Vec<Embedding>> {
        let mut out = Vec::with_capacity(snippets.len());
        for chunk in snippets.chunks(ENCODE_BATCH) {
            let x = sheet_batch::<f32>(chunk, self.net.sheet.input_hw, self.params.arch.sheet_downsample)?;
            let (z, _) = self.net.sheet_forward(&self.params.store, &x)?;
            out.extend(rows_to_embeddings(&z)?);
        }
        Ok(out)
    }

    pub fn audios(&self, excerpts: &[&Grid], use_attention: bool) -> Result<Vec<Embedding>> {
        let mode = if use_attention { MaskMode::Learned } else { MaskMode::None };
        let mut out = Vec::with_capacity(excerpts.len());
        for chunk in excerpts.chunks(ENCODE_BATCH) {
            let x = audio_batch::<f32>(chunk, self.net.audio.input_hw)?;
            let (z, _) = self.net.audio_forward(&self.params.store, &x, mode)?;
            out.extend(rows_to_embeddings(&z)?);
        }
        Ok(out)
    }

    pub fn masks(&self, excerpts: &[&Grid]) -> Result<Vec<AttentionMask>> {
        let att = self
            .net
            .attention
            .as_ref()
            .ok_or_else(|| Error::config("the architecture has no attention branch"))?;
        let mut out = Vec::with_capacity(excerpts.len());
        for chunk in excerpts.chunks(ENCODE_BATCH) {
            let x = audio_batch::<f32>(chunk, self.net.audio.input_hw)?;
            let (xhat, _) = crate::nn::rms_normalize(&x);
            let (m, _) = att.forward(&self.params.store, &xhat);
            out.extend(m.outer_iter().map(|r| AttentionMask(r.to_vec())));
        }
        Ok(out)
    }
}

pub fn encode_sheet(snippet: &Grid, params: &ModelParams) -> Result<Embedding> {
    Ok(Encoder::new(params)?.sheets(&[snippet])?.remove(0))
}

pub fn encode_audio(excerpt: &Grid, params: &ModelParams, use_attention: bool) -> Result<Embedding> {
    Ok(Encoder::new(params)?.audios(&[excerpt], use_attention)?.remove(0))
}

/// Encodes `excerpt` with a caller-supplied frame weighting in place of the
/// learned mask.
pub fn encode_audio_with_mask(excerpt: &Grid, mask: &[f32], params: &ModelParams) -> Result<Embedding> {
    let net = params.network()?;
    let x = audio_batch::<f32>(&[excerpt], net.audio.input_hw)?;
    let m = Array2::from_shape_vec((1, mask.len()), mask.to_vec()).expect("row vector");
    let (z, _) = net.audio_forward(&params.store, &x, MaskMode::Fixed(&m))?;
    Ok(rows_to_embeddings(&z)?.remove(0))
}

pub fn attention_mask(excerpt: &Grid, params: &ModelParams) -> Result<AttentionMask> {
    Ok(Encoder::new(params)?.masks(&[excerpt])?.remove(0))
}
