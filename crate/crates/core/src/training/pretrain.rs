use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::Instant;

use log::info;
use ndarray::{Array2, Array4};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{EpochRecord, Regime, TrainConfig, TrainHistory};
use crate::augment::{make_positive_pair, Augment};
use crate::error::{Error, Result};
use crate::grid::{read_grid, write_grid, Grid};
use crate::losses::{nt_xent_loss_grad, paired_views};
use crate::model::{audio_batch, sheet_batch, ArchConfig, Builder, Modality, ModelParams, Pathway};
use crate::nn::{elu, elu_backward, rms_normalize, Adam, Dense, ParamStore};
use crate::rng;

/// Encoder weights of one pathway (convolutions plus dense head, without
/// the joint projection), named as in the full model.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainedEncoder {
    pub modality: Modality,
    pub arch: ArchConfig,
    pub tensors: Vec<(String, Array2<f32>)>,
}

impl PretrainedEncoder {
    /// Overwrites the matching tensors of `params`.
    pub fn load_into(&self, params: &mut ModelParams) -> Result<()> {
        for (name, t) in &self.tensors {
            let id = params
                .store
                .by_name(name)
                .ok_or_else(|| Error::config(format!("pretrained tensor '{name}' has no counterpart")))?;
            let dst = params.store.get_mut(id);
            if dst.dim() != t.dim() {
                return Err(Error::config(format!(
                    "pretrained tensor '{name}' is {:?}, model expects {:?}",
                    t.dim(),
                    dst.dim()
                )));
            }
            dst.assign(t);
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        #[derive(Serialize)]
        struct Header<'a> {
            modality: Modality,
            arch: &'a ArchConfig,
            tensors: Vec<&'a str>,
        }
        let mut w = BufWriter::new(File::create(path)?);
        let header = Header {
            modality: self.modality,
            arch: &self.arch,
            tensors: self.tensors.iter().map(|(n, _)| n.as_str()).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(ENC_MAGIC)?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        for (_, t) in &self.tensors {
            write_grid(&mut w, t)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            modality: Modality,
            arch: ArchConfig,
            tensors: Vec<String>,
        }
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != ENC_MAGIC {
            return Err(Error::format("not a pretrained encoder file"));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut json)?;
        let h: Header = serde_json::from_slice(&json)?;
        let tensors = h.tensors.into_iter().map(|n| Ok((n, read_grid(&mut r)?))).collect::<Result<_>>()?;
        Ok(Self { modality: h.modality, arch: h.arch, tensors })
    }
}

const ENC_MAGIC: &[u8; 6] = b"ASPENC";

/// Pathway encoder plus a two-layer projection head used only during
/// pretraining.
struct PretrainNet {
    pathway: Pathway,
    h1: Dense,
    h2: Dense,
}

fn build(arch: &ArchConfig, modality: Modality) -> (PretrainNet, Builder) {
    let mut b = Builder::default();
    let pathway = Pathway::build(&mut b, arch, modality);
    let h1 = b.dense("head.h1", pathway.feat_dim, arch.hidden);
    let h2 = b.dense("head.h2", arch.hidden, arch.embedding_dim);
    (PretrainNet { pathway, h1, h2 }, b)
}

fn inputs(net: &PretrainNet, arch: &ArchConfig, views: &[&Grid]) -> Result<Array4<f32>> {
    match net.pathway.modality {
        Modality::Sheet => sheet_batch(views, net.pathway.input_hw, arch.sheet_downsample),
        Modality::Audio => Ok(rms_normalize(&audio_batch::<f32>(views, net.pathway.input_hw)?).0),
    }
}

/// Contrastive pretraining of one pathway on unlabeled snippets: each
/// snippet yields two augmented views, and NT-Xent pulls the views together
/// against the rest of the batch. The head is discarded afterwards.
pub fn pretrain_selfsup(
    snippets: &[Grid],
    arch: &ArchConfig,
    cfg: &TrainConfig,
    aug: &dyn Augment,
) -> Result<(PretrainedEncoder, TrainHistory)> {
    cfg.validate()?;
    arch.validate()?;
    let modality = match cfg.regime {
        Regime::PretrainSheet => Modality::Sheet,
        Regime::PretrainAudio => Modality::Audio,
        r => return Err(Error::config(format!("regime '{}' is not a pretraining regime", r.tag()))),
    };
    if snippets.len() < 2 {
        return Err(Error::config("pretraining needs at least two snippets"));
    }
    let (net, layout) = build(arch, modality);
    let mut store = layout.init(cfg.seed);
    let mut opt = Adam::new(&store, cfg.lr);
    let mut hist = TrainHistory::new(cfg.regime);
    let mut order: Vec<usize> = (0..snippets.len()).collect();
    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut rng::rng_at(cfg.seed, &[3, epoch as u64]));
        let (mut loss_sum, mut batches) = (0.0, 0);
        for chunk in order.chunks(cfg.batch_size).filter(|c| c.len() >= 2) {
            let mut a = Vec::with_capacity(chunk.len());
            let mut b = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let seed = rng::derive_path(cfg.seed, &[4, epoch as u64, i as u64]);
                let (va, vb) = make_positive_pair(&snippets[i], aug, seed);
                a.push(va);
                b.push(vb);
            }
            let views: Vec<&Grid> = a.iter().chain(b.iter()).collect();
            let x = inputs(&net, arch, &views)?;
            loss_sum += step(&net, &mut store, &mut opt, &x, cfg)?;
            batches += 1;
        }
        let record =
            EpochRecord { epoch, loss: loss_sum / batches.max(1) as f64, val_mrr: None, lr: opt.lr, seconds: t0.elapsed().as_secs_f64() };
        info!("{} epoch {epoch}: loss {:.4}", cfg.regime.tag(), record.loss);
        hist.epochs.push(record);
    }
    let prefix = format!("{}.", modality.prefix());
    let tensors = store
        .iter()
        .filter(|(n, _)| n.starts_with(&prefix) && !n.contains(".proj."))
        .map(|(n, t)| (n.to_string(), t.clone()))
        .collect();
    Ok((PretrainedEncoder { modality, arch: arch.clone(), tensors }, hist))
}

fn step(net: &PretrainNet, store: &mut ParamStore<f32>, opt: &mut Adam<f32>, x: &Array4<f32>, cfg: &TrainConfig) -> Result<f64> {
    let n = x.dim().0 / 2;
    let (feat, ft) = net.pathway.features(store, x)?;
    let h = elu(&net.h1.forward(store, &feat));
    let z = net.h2.forward(store, &h);
    let (loss, dz) = nt_xent_loss_grad(&z, &paired_views(n), cfg.tau, cfg.reduction)?;
    let mut grads = store.zeros_like();
    let dh = net.h2.backward(store, &h, &dz, &mut grads, true).expect("requested");
    let dpre = elu_backward(&h, &dh);
    let dfeat = net.h1.backward(store, &feat, &dpre, &mut grads, true).expect("requested");
    net.pathway.backward_features(store, &ft, &dfeat, &mut grads, false);
    opt.step(store, &grads);
    Ok(loss.value)
}
