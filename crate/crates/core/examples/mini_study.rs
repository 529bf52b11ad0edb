//! Runs a scaled-down Table-1 style study, saves the report, and replays it
//! from the config embedded in the saved file.

use audiosheet::harness::{replay, run_table1, ExperimentConfig, Report};

fn main() -> audiosheet::Result<()> {
    let out = std::env::temp_dir().join("audiosheet_mini_study");
    let mut cfg = ExperimentConfig { seed: 2, out: out.clone(), pool_size: 100, ..ExperimentConfig::default() };
    cfg.data.train_pieces = 12;
    cfg.data.test_pieces = 6;
    cfg.train.epochs = 3;
    cfg.table1.variants = ["bl1-short", "bl2-short"].iter().map(|v| v.parse()).collect::<Result<_, _>>()?;
    let report = run_table1(&cfg, 1)?;
    println!("{}", report.render());
    report.save(&out)?;
    let saved = Report::load(out.join("table1.json"))?;
    replay(&saved, 1)?;
    println!("replayed from {}", out.join("table1.json").display());
    Ok(())
}
