//! Command-line front end. Exit codes: 0 on success, 1 for usage and input
//! errors, 2 for internal failures.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use super::config::ExperimentConfig;
use super::report::{Report, Study};
use super::studies::{audio_sequences, replay, run_pieceid, run_study, sheet_sequences};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{load_checkpoint, save_checkpoint, Encoder, Modality, Variant};
use crate::pieceid::{identify_dtw, identify_vote, IdentificationResult, PieceCollection};
use crate::retrieval::{build_index, load_store, save_store, EntryMeta, RankedResult};
use crate::synthdata::{audio_excerpt, generate_dataset, read_dataset, sheet_crop, write_dataset, AlignedPiece, TempoSpec};
use crate::training::{finetune, pretrain_selfsup, train_paired, PretrainedEncoder, Regime, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "audiosheet", version, about = "Audio to sheet-music snippet retrieval and piece identification")]
pub struct Cli {
    /// Root seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML config file with dotted keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output path (file or directory, depending on the command).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for independent trainings.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    pub dump_config: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate an aligned synthetic dataset.
    Synth {
        #[arg(long)]
        pieces: Option<usize>,
        #[arg(long)]
        notes: Option<usize>,
        /// Render performances at a constant tempo.
        #[arg(long)]
        steady: bool,
    },
    /// Self-supervised pretraining of one pathway on a dataset's snippets.
    Pretrain {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum)]
        modality: ModalityArg,
    },
    /// Paired training from scratch.
    Train {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Paired training from pretrained pathway encoders.
    Finetune {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        sheet_encoder: Option<PathBuf>,
        #[arg(long)]
        audio_encoder: Option<PathBuf>,
    },
    /// Embed every note-anchored snippet of a dataset into a store file.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        modality: ModalityArg,
    },
    /// Nearest-neighbour search of a query store against an index store.
    Retrieve {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 25)]
        k: usize,
    },
    /// Identify the pieces of `--queries` performances in the `--data` scores.
    Identify {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Dataset whose performances are the queries; defaults to `--data`.
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = MethodArg::Both)]
        method: MethodArg,
        /// Rank by raw instead of path-length-normalized DTW cost.
        #[arg(long)]
        raw_cost: bool,
    },
    /// Run or replay one of the comparative studies.
    Study {
        #[arg(value_enum)]
        name: StudyArg,
        /// Load checkpoints from the output directory instead of training.
        #[arg(long)]
        no_train: bool,
        /// Re-run a saved report from its embedded config and check the numbers.
        #[arg(long)]
        replay: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "bl2-short")]
    pub variant: String,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModalityArg {
    Sheet,
    Audio,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Vote,
    Dtw,
    Both,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum StudyArg {
    Table1,
    Pretraining,
    Pieceid,
}

impl From<StudyArg> for Study {
    fn from(s: StudyArg) -> Self {
        match s {
            StudyArg::Table1 => Study::Table1,
            StudyArg::Pretraining => Study::Pretraining,
            StudyArg::Pieceid => Study::Pieceid,
        }
    }
}

/// Parses `argv` (including the program name) and runs it, returning the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match std::panic::catch_unwind(|| execute(cli)) {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            if e.is_user_error() {
                1
            } else {
                2
            }
        }
        Err(_) => 2,
    }
}

fn effective_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn require_out(cli: &Cli) -> Result<&Path> {
    cli.out.as_deref().ok_or_else(|| Error::arg("--out is required for this command"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn load_pieces(dir: &Path) -> Result<Vec<AlignedPiece>> {
    let pieces = read_dataset(dir)?;
    if pieces.is_empty() {
        return Err(Error::arg(format!("no pieces under {}", dir.display())));
    }
    Ok(pieces)
}

fn model_setup(cfg: &ExperimentConfig, m: &ModelArgs) -> Result<(Variant, TrainConfig, Vec<AlignedPiece>)> {
    let v: Variant = m.variant.parse()?;
    let mut tc = TrainConfig { seed: cfg.seed, ..cfg.train.clone() };
    if let Some(e) = m.epochs {
        tc.epochs = e;
    }
    Ok((v, tc, load_pieces(&m.data)?))
}

fn execute(cli: Cli) -> Result<()> {
    let cfg = effective_config(&cli)?;
    if cli.dump_config {
        print!("{}", cfg.dump()?);
        return Ok(());
    }
    let Some(command) = &cli.command else {
        return Err(Error::arg("no command given; see --help"));
    };
    match command {
        Command::Synth { pieces, notes, steady } => {
            let out = require_out(&cli)?;
            let tempo = if *steady { TempoSpec::steady() } else { cfg.data.tempo.clone() };
            let mut ds = cfg.data.dataset(pieces.unwrap_or(cfg.data.train_pieces + cfg.data.test_pieces), &tempo);
            if let Some(n) = notes {
                ds.notes_per_piece = *n;
            }
            let data = generate_dataset(&ds, cfg.seed)?;
            write_dataset(out, &data)?;
            println!("wrote {} pieces to {}", data.len(), out.display());
        }
        Command::Pretrain { model, modality } => {
            let out = require_out(&cli)?;
            let (v, _, pieces) = model_setup(&cfg, model)?;
            let arch = cfg.model.arch(v);
            let mut tc = TrainConfig { seed: cfg.seed, ..cfg.pretraining.train.clone() };
            if let Some(e) = model.epochs {
                tc.epochs = e;
            }
            let notes = pieces.iter().flat_map(|ap| ap.alignment.iter().enumerate().map(move |(n, a)| (ap, n, a)));
            let (enc, hist) = match modality {
                ModalityArg::Sheet => {
                    let s: Vec<Grid> = notes.map(|(ap, n, _)| sheet_crop(&ap.score, n)).collect();
                    tc.regime = Regime::PretrainSheet;
                    pretrain_selfsup(&s, &arch, &tc, &cfg.pretraining.sheet_aug)?
                }
                ModalityArg::Audio => {
                    let a: Vec<Grid> =
                        notes.map(|(ap, _, al)| audio_excerpt(&ap.performance, al.onset_frame, v.context)).collect();
                    tc.regime = Regime::PretrainAudio;
                    pretrain_selfsup(&a, &arch, &tc, &cfg.pretraining.audio_aug)?
                }
            };
            enc.save(out)?;
            hist.save_jsonl(out.with_extension("jsonl"))?;
            println!("saved {:?} encoder to {}", enc.modality, out.display());
        }
        Command::Train { model } | Command::Finetune { model, .. } => {
            let out = require_out(&cli)?;
            let (v, tc, pieces) = model_setup(&cfg, model)?;
            let arch = cfg.model.arch(v);
            let pairs = super::studies::training_pairs(&pieces, v.context);
            let (params, hist) = match command {
                Command::Finetune { sheet_encoder, audio_encoder, .. } => {
                    let s = sheet_encoder.as_ref().map(PretrainedEncoder::load).transpose()?;
                    let a = audio_encoder.as_ref().map(PretrainedEncoder::load).transpose()?;
                    let tc = TrainConfig { regime: Regime::Finetune, ..tc };
                    finetune(s.as_ref(), a.as_ref(), &pairs, &arch, &tc)?
                }
                _ => train_paired(&pairs, &arch, &tc)?,
            };
            save_checkpoint(out, &params)?;
            hist.save_jsonl(out.with_extension("jsonl"))?;
            println!(
                "saved {v} checkpoint to {} (best validation MRR {:.3})",
                out.display(),
                hist.best_val_mrr().unwrap_or(f64::NAN)
            );
        }
        Command::Embed { checkpoint, data, modality } => {
            let out = require_out(&cli)?;
            let params = load_checkpoint(checkpoint)?;
            let pieces = load_pieces(data)?;
            let enc = Encoder::new(&params)?;
            let mut metas = Vec::new();
            let mut grids = Vec::new();
            let m = match modality {
                ModalityArg::Sheet => Modality::Sheet,
                ModalityArg::Audio => Modality::Audio,
            };
            for ap in &pieces {
                for (n, al) in ap.alignment.iter().enumerate() {
                    grids.push(match m {
                        Modality::Sheet => sheet_crop(&ap.score, n),
                        Modality::Audio => audio_excerpt(&ap.performance, al.onset_frame, params.arch.context),
                    });
                    metas.push(EntryMeta { piece_id: ap.piece.piece_id.clone(), offset: n, modality: m });
                }
            }
            let refs: Vec<&Grid> = grids.iter().collect();
            let emb = match m {
                Modality::Sheet => enc.sheets(&refs)?,
                Modality::Audio => enc.audios(&refs, params.arch.attention)?,
            };
            let index = build_index(emb.into_iter().zip(metas))?;
            save_store(out, &index)?;
            println!("embedded {} snippets into {}", index.len(), out.display());
        }
        Command::Retrieve { index, queries, k } => {
            let out = require_out(&cli)?;
            let index = load_store(index)?;
            let queries = load_store(queries)?;
            #[derive(Serialize)]
            struct Hit<'a> {
                query: usize,
                meta: &'a EntryMeta,
                result: RankedResult,
            }
            let hits = (0..queries.len())
                .map(|i| Ok(Hit { query: i, meta: queries.meta(i), result: index.query(&queries.embedding(i), *k)? }))
                .collect::<Result<Vec<_>>>()?;
            write_json(out, &hits)?;
            println!("wrote {} ranked results to {}", hits.len(), out.display());
        }
        Command::Identify { checkpoint, data, queries, method, raw_cost } => {
            let out = require_out(&cli)?;
            let params = load_checkpoint(checkpoint)?;
            let pieces = load_pieces(data)?;
            let query_pieces = match queries {
                Some(q) => load_pieces(q)?,
                None => pieces.clone(),
            };
            let coll = PieceCollection::new(sheet_sequences(&params, &pieces, cfg.pieceid.sheet_hop)?)?;
            let qs = audio_sequences(&params, &query_pieces, cfg.pieceid.audio_hop)?;
            let mut results: Vec<IdentificationResult> = Vec::new();
            for q in &qs {
                if *method != MethodArg::Dtw {
                    results.push(identify_vote(q, &coll)?);
                }
                if *method != MethodArg::Vote {
                    results.push(identify_dtw(q, &coll, !raw_cost)?);
                }
            }
            write_json(out, &results)?;
            println!("wrote {} identification results to {}", results.len(), out.display());
        }
        Command::Study { name, no_train, replay: replay_path } => {
            let study: Study = (*name).into();
            if let Some(p) = replay_path {
                let stored = Report::load(p)?;
                if stored.study != study {
                    return Err(Error::arg(format!("{} holds a {} report, not {study}", p.display(), stored.study)));
                }
                let again = replay(&stored, cli.jobs)?;
                print!("{}", again.render());
                println!("replay matches {}", p.display());
                return Ok(());
            }
            let cfg = ExperimentConfig { no_train: *no_train || cfg.no_train, ..cfg };
            let report = if study == Study::Pieceid {
                let outcome = run_pieceid(&cfg, cli.jobs)?;
                write_json(&cfg.out.join("pieceid_identifications.json"), &outcome.identifications)?;
                outcome.report
            } else {
                run_study(study, &cfg, cli.jobs)?
            };
            report.save(&cfg.out)?;
            print!("{}", report.render());
            println!("wrote {} report to {}", study, cfg.out.display());
        }
    }
    Ok(())
}
