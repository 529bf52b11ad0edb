//! Experiment runners. Each study is a pure function of its config: data,
//! candidate pools, corruption and training all draw from streams derived
//! from `cfg.seed`, so re-running a report's embedded config reproduces it.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::info;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::report::{Report, ReportRow, Study};
use crate::augment::{augment_audio, augment_sheet};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{load_checkpoint, save_checkpoint, Encoder, ModelParams, Variant};
use crate::pieceid::{identify_dtw, identify_vote, EmbeddingSequence, IdentificationResult, Method, PieceCollection};
use crate::retrieval::{evaluate, paired_ranks, Direction};
use crate::rng;
use crate::synthdata::{
    audio_excerpt, generate_dataset, render_aligned_piece, segment_document, sheet_crop, snippet_pair, AlignedPiece,
    Context, Document, Provenance, SnippetPair, SHEET_WIDTH,
};
use crate::training::{finetune, pretrain_selfsup, train_paired, Regime, TrainConfig};

const STREAM_DATA: u64 = 1;
const STREAM_POOL: u64 = 2;
const STREAM_TRAIN: u64 = 3;
const STREAM_UNLABELED: u64 = 4;
const STREAM_CORRUPT: u64 = 5;
const STREAM_QUERY: u64 = 6;

pub const TAG_BASELINE: &str = "bl";
pub const TAG_PRETRAINED: &str = "bl+a+s";

/// Training and test pieces, rendered with `cfg.data.tempo`.
#[derive(Clone, Debug)]
pub struct Split {
    pub train: Vec<AlignedPiece>,
    pub test: Vec<AlignedPiece>,
}

pub fn generate_split(cfg: &ExperimentConfig) -> Result<Split> {
    let d = &cfg.data;
    let ds = d.dataset(d.train_pieces + d.test_pieces, &d.tempo);
    let mut train = generate_dataset(&ds, rng::derive_seed(cfg.seed, STREAM_DATA))?;
    let test = train.split_off(d.train_pieces);
    Ok(Split { train, test })
}

/// `(piece, note)` anchors of the candidate pool: every test note, or a
/// seeded subset of `pool_size` of them, in dataset order.
pub fn pool_anchors(cfg: &ExperimentConfig, test: &[AlignedPiece]) -> Result<Vec<(usize, usize)>> {
    let all: Vec<(usize, usize)> =
        test.iter().enumerate().flat_map(|(p, ap)| (0..ap.alignment.len()).map(move |n| (p, n))).collect();
    if cfg.pool_size > all.len() {
        return Err(Error::config(format!("pool_size {} exceeds the {} test snippets", cfg.pool_size, all.len())));
    }
    let mut keep = sample(&mut rng::rng_at(cfg.seed, &[STREAM_POOL]), all.len(), cfg.pool_size).into_vec();
    keep.sort_unstable();
    Ok(keep.into_iter().map(|i| all[i]).collect())
}

pub fn pool_pairs(pieces: &[AlignedPiece], anchors: &[(usize, usize)], context: Context) -> Vec<SnippetPair> {
    anchors.iter().map(|&(p, n)| snippet_pair(&pieces[p], n, context)).collect()
}

pub fn training_pairs(pieces: &[AlignedPiece], context: Context) -> Vec<SnippetPair> {
    pieces.iter().flat_map(|ap| crate::synthdata::extract_snippet_pairs(ap, context)).collect()
}

/// Refuses to train on anything but clean snippets.
pub fn ensure_clean(pairs: &[SnippetPair]) -> Result<()> {
    match pairs.iter().find(|p| p.provenance != Provenance::Clean) {
        Some(p) => Err(Error::config(format!(
            "training pair from {} note {} is tagged {:?}; corrupted tiers are evaluation-only",
            p.piece_id, p.anchor_note_index, p.provenance
        ))),
        None => Ok(()),
    }
}

/// The training config every study uses, with the shared training stream.
fn train_config(cfg: &ExperimentConfig, regime: Regime) -> TrainConfig {
    TrainConfig { regime, seed: rng::derive_seed(cfg.seed, STREAM_TRAIN), ..cfg.train.clone() }
}

pub fn checkpoint_path(cfg: &ExperimentConfig, study: Study, tag: &str) -> PathBuf {
    cfg.out.join("checkpoints").join(study.to_string()).join(format!("{tag}.ckpt"))
}

/// Loads the checkpoint under `--no-train`, otherwise trains and saves it.
fn obtain<F>(cfg: &ExperimentConfig, study: Study, tag: &str, train: F) -> Result<ModelParams>
where
    F: FnOnce() -> Result<ModelParams>,
{
    let path = checkpoint_path(cfg, study, tag);
    if cfg.no_train {
        if !path.is_file() {
            return Err(Error::config(format!("missing checkpoint {} (training disabled)", path.display())));
        }
        return load_checkpoint(&path);
    }
    let params = train()?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    save_checkpoint(&path, &params)?;
    Ok(params)
}

/// Runs `f` over `items` on up to `jobs` threads; results keep item order.
pub fn parallel_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<R>>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().expect("unpoisoned slot") = Some(r);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().expect("unpoisoned slot").expect("every slot filled")).collect()
}

fn retrieval_row(
    params: &ModelParams,
    pairs: &[SnippetPair],
    tag: &str,
    tier: Provenance,
    direction: Direction,
) -> Result<ReportRow> {
    let enc = Encoder::new(params)?;
    let sheets = enc.sheets(&pairs.iter().map(|p| &p.sheet).collect::<Vec<_>>())?;
    let audios = enc.audios(&pairs.iter().map(|p| &p.audio).collect::<Vec<_>>(), params.arch.attention)?;
    let m = evaluate(&paired_ranks(&sheets, &audios, direction)?)?;
    Ok(ReportRow::new(tag, tier, direction, &m))
}

/// Context and attention comparison: one audio-to-sheet row per variant on
/// the tempo-varied test pool.
pub fn run_table1(cfg: &ExperimentConfig, jobs: usize) -> Result<Report> {
    cfg.validate()?;
    let split = generate_split(cfg)?;
    let anchors = pool_anchors(cfg, &split.test)?;
    let rows = parallel_map(&cfg.table1.variants, jobs, |&v: &Variant| {
        let tag = v.tag();
        let arch = cfg.model.arch(v);
        let params = obtain(cfg, Study::Table1, &tag, || {
            let pairs = training_pairs(&split.train, v.context);
            ensure_clean(&pairs)?;
            info!("table1: training {tag} on {} pairs", pairs.len());
            Ok(train_paired(&pairs, &arch, &train_config(cfg, Regime::Paired))?.0)
        })?;
        let pool = pool_pairs(&split.test, &anchors, v.context);
        retrieval_row(&params, &pool, &tag, Provenance::Clean, Direction::AudioToSheet)
    })?;
    Ok(Report { study: Study::Table1, config: cfg.clone(), rows })
}

/// Test pools for the three tiers, tagged with their provenance.
pub fn tier_pools(cfg: &ExperimentConfig, split: &Split, context: Context) -> Result<Vec<(Provenance, Vec<SnippetPair>)>> {
    let anchors = pool_anchors(cfg, &split.test)?;
    let tiers = &cfg.pretraining.tiers;
    let clean = pool_pairs(&split.test, &anchors, context);
    let corrupt = |pairs: &[SnippetPair], tier: Provenance, audio: bool| -> Vec<SnippetPair> {
        pairs
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let s = rng::derive_path(cfg.seed, &[STREAM_CORRUPT, tier as u64, k as u64]);
                SnippetPair {
                    sheet: augment_sheet(&p.sheet, &tiers.sheet, rng::derive_seed(s, 0)),
                    audio: if audio { augment_audio(&p.audio, &tiers.audio, rng::derive_seed(s, 1)) } else { p.audio.clone() },
                    provenance: tier,
                    ..p.clone()
                }
            })
            .collect()
    };
    let partial = corrupt(&clean, Provenance::Partial, false);
    let rerendered = split
        .test
        .iter()
        .enumerate()
        .map(|(i, ap)| {
            let seed = rng::derive_path(cfg.seed, &[STREAM_CORRUPT, 9, i as u64]);
            let tempo = tiers.noisy_tempo.sample(seed, ap.piece.end_beats());
            render_aligned_piece(&ap.piece, &tempo, &ap.config)
        })
        .collect::<Result<Vec<_>>>()?;
    let noisy = corrupt(&pool_pairs(&rerendered, &anchors, context), Provenance::Noisy, true);
    Ok(vec![(Provenance::Clean, clean), (Provenance::Partial, partial), (Provenance::Noisy, noisy)])
}

fn unlabeled_snippets(cfg: &ExperimentConfig, context: Context) -> Result<(Vec<Grid>, Vec<Grid>)> {
    let ds = cfg.data.dataset(cfg.pretraining.unlabeled_pieces, &cfg.data.tempo);
    let pieces = generate_dataset(&ds, rng::derive_seed(cfg.seed, STREAM_UNLABELED))?;
    let mut sheets = Vec::new();
    let mut audios = Vec::new();
    for ap in &pieces {
        for (n, a) in ap.alignment.iter().enumerate() {
            sheets.push(sheet_crop(&ap.score, n));
            audios.push(audio_excerpt(&ap.performance, a.onset_frame, context));
        }
    }
    Ok((sheets, audios))
}

/// Baseline against self-supervised pretraining of both pathways followed by
/// paired fine-tuning, on clean, sheet-corrupted and fully corrupted pools,
/// in both directions.
pub fn run_pretraining(cfg: &ExperimentConfig, jobs: usize) -> Result<Report> {
    cfg.validate()?;
    let split = generate_split(cfg)?;
    let pc = &cfg.pretraining;
    let v = pc.variant;
    let arch = cfg.model.arch(v);
    let pairs = training_pairs(&split.train, v.context);
    ensure_clean(&pairs)?;
    let tags = [TAG_BASELINE, TAG_PRETRAINED];
    let models = parallel_map(&tags, jobs, |&tag| {
        obtain(cfg, Study::Pretraining, tag, || {
            if tag == TAG_BASELINE {
                return Ok(train_paired(&pairs, &arch, &train_config(cfg, Regime::Paired))?.0);
            }
            let (sheets, audios) = unlabeled_snippets(cfg, v.context)?;
            let seed = rng::derive_seed(cfg.seed, STREAM_TRAIN);
            let pre = |regime| TrainConfig { regime, seed, ..pc.train.clone() };
            info!("pretraining: sheet encoder on {} snippets", sheets.len());
            let (enc_s, _) = pretrain_selfsup(&sheets, &arch, &pre(Regime::PretrainSheet), &pc.sheet_aug)?;
            info!("pretraining: audio encoder on {} snippets", audios.len());
            let (enc_a, _) = pretrain_selfsup(&audios, &arch, &pre(Regime::PretrainAudio), &pc.audio_aug)?;
            Ok(finetune(Some(&enc_s), Some(&enc_a), &pairs, &arch, &train_config(cfg, Regime::Finetune))?.0)
        })
    })?;
    let pools = tier_pools(cfg, &split, v.context)?;
    let mut rows = Vec::new();
    for direction in Direction::BOTH {
        for (tier, pool) in &pools {
            for (tag, params) in tags.iter().zip(&models) {
                rows.push(retrieval_row(params, pool, tag, *tier, direction)?);
            }
        }
    }
    Ok(Report { study: Study::Pretraining, config: cfg.clone(), rows })
}

/// Piece identification results plus the per-query rankings behind them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PieceIdOutcome {
    pub report: Report,
    pub identifications: Vec<IdentificationResult>,
    /// MRR of each method when the stored sheet sequences are used as queries.
    pub self_query_mrr: Vec<(Method, f64)>,
}

pub fn sheet_sequences(params: &ModelParams, pieces: &[AlignedPiece], hop: usize) -> Result<Vec<EmbeddingSequence>> {
    let enc = Encoder::new(params)?;
    pieces
        .iter()
        .map(|ap| {
            let segs = segment_document(Document::Score(&ap.score), SHEET_WIDTH, hop)?;
            let emb = enc.sheets(&segs.iter().map(|s| &s.grid).collect::<Vec<_>>())?;
            EmbeddingSequence::new(ap.piece.piece_id.clone(), segs.iter().map(|s| s.offset).zip(emb).collect())
        })
        .collect()
}

pub fn audio_sequences(params: &ModelParams, pieces: &[AlignedPiece], hop: usize) -> Result<Vec<EmbeddingSequence>> {
    let enc = Encoder::new(params)?;
    let frames = params.arch.context.frames();
    pieces
        .iter()
        .map(|ap| {
            let segs = segment_document(Document::Performance(&ap.performance), frames, hop)?;
            let emb = enc.audios(&segs.iter().map(|s| &s.grid).collect::<Vec<_>>(), params.arch.attention)?;
            EmbeddingSequence::new(ap.piece.piece_id.clone(), segs.iter().map(|s| s.offset).zip(emb).collect())
        })
        .collect()
}

fn identify(method: Method, q: &EmbeddingSequence, coll: &PieceCollection, normalize: bool) -> Result<IdentificationResult> {
    match method {
        Method::Vote => identify_vote(q, coll),
        Method::Dtw => identify_dtw(q, coll, normalize),
    }
}

fn method_mrr(results: &[IdentificationResult]) -> Result<crate::retrieval::RetrievalMetrics> {
    let ranks = results
        .iter()
        .map(|r| r.rank_of_truth.ok_or_else(|| Error::config(format!("query {} is not in the collection", r.query_id))))
        .collect::<Result<Vec<_>>>()?;
    evaluate(&ranks)
}

/// Vote against DTW identification: the test pieces' sheets form the
/// collection, and each query is a fresh tempo-varied performance.
pub fn run_pieceid(cfg: &ExperimentConfig, _jobs: usize) -> Result<PieceIdOutcome> {
    cfg.validate()?;
    let split = generate_split(cfg)?;
    let pc = &cfg.pieceid;
    let v = pc.variant;
    let arch = cfg.model.arch(v);
    let params = obtain(cfg, Study::Pieceid, &v.tag(), || {
        let pairs = training_pairs(&split.train, v.context);
        ensure_clean(&pairs)?;
        Ok(train_paired(&pairs, &arch, &train_config(cfg, Regime::Paired))?.0)
    })?;
    let stored = sheet_sequences(&params, &split.test, pc.sheet_hop)?;
    let coll = PieceCollection::new(stored.clone())?;
    let performances = split
        .test
        .iter()
        .enumerate()
        .map(|(i, ap)| {
            let tempo = pc.query_tempo.sample(rng::derive_path(cfg.seed, &[STREAM_QUERY, i as u64]), ap.piece.end_beats());
            render_aligned_piece(&ap.piece, &tempo, &ap.config)
        })
        .collect::<Result<Vec<_>>>()?;
    let queries = audio_sequences(&params, &performances, pc.audio_hop)?;

    let mut rows = Vec::new();
    let mut identifications = Vec::new();
    let mut self_query_mrr = Vec::new();
    for method in [Method::Vote, Method::Dtw] {
        let results = queries.iter().map(|q| identify(method, q, &coll, pc.normalize)).collect::<Result<Vec<_>>>()?;
        let m = method_mrr(&results)?;
        let tag = match method {
            Method::Vote => "vote",
            Method::Dtw => "dtw",
        };
        rows.push(ReportRow::new(tag, Provenance::Clean, Direction::AudioToSheet, &m));
        identifications.extend(results);
        let own = stored.iter().map(|q| identify(method, q, &coll, pc.normalize)).collect::<Result<Vec<_>>>()?;
        self_query_mrr.push((method, method_mrr(&own)?.mrr));
    }
    Ok(PieceIdOutcome {
        report: Report { study: Study::Pieceid, config: cfg.clone(), rows },
        identifications,
        self_query_mrr,
    })
}

pub fn run_study(study: Study, cfg: &ExperimentConfig, jobs: usize) -> Result<Report> {
    match study {
        Study::Table1 => run_table1(cfg, jobs),
        Study::Pretraining => run_pretraining(cfg, jobs),
        Study::Pieceid => Ok(run_pieceid(cfg, jobs)?.report),
    }
}

/// Re-runs a report from its embedded config; errors unless every row
/// matches exactly.
pub fn replay(report: &Report, jobs: usize) -> Result<Report> {
    let again = run_study(report.study, &report.config, jobs)?;
    if again.rows != report.rows {
        return Err(Error::Reproducibility(format!("replay of {} differs from the stored report", report.study)));
    }
    Ok(again)
}
