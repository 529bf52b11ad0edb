//! Study reports. Every report carries the config that produced it, both in
//! the JSON body and as a `#` comment line at the top of the CSV.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::retrieval::{Direction, RetrievalMetrics};
use crate::synthdata::Provenance;

pub const CSV_HEADER: [&str; 8] = ["tag", "tier", "direction", "r1", "r5", "r25", "mrr", "mr"];
const CONFIG_PREFIX: &str = "# config: ";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Study {
    Table1,
    Pretraining,
    Pieceid,
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Study::Table1 => "table1",
            Study::Pretraining => "pretraining",
            Study::Pieceid => "pieceid",
        })
    }
}

impl FromStr for Study {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table1" => Ok(Study::Table1),
            "pretraining" => Ok(Study::Pretraining),
            "pieceid" => Ok(Study::Pieceid),
            _ => Err(Error::arg(format!("unknown study '{s}'"))),
        }
    }
}

/// One line of a results table. Recalls are percentages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub tag: String,
    pub tier: Provenance,
    pub direction: Direction,
    pub r1: f64,
    pub r5: f64,
    pub r25: f64,
    pub mrr: f64,
    pub mr: usize,
}

impl ReportRow {
    pub fn new(tag: impl Into<String>, tier: Provenance, direction: Direction, m: &RetrievalMetrics) -> Self {
        Self {
            tag: tag.into(),
            tier,
            direction,
            r1: m.r1 * 100.0,
            r5: m.r5 * 100.0,
            r25: m.r25 * 100.0,
            mrr: m.mrr,
            mr: m.mr,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub study: Study,
    pub config: ExperimentConfig,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn row(&self, tag: &str, tier: Provenance, direction: Direction) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.tag == tag && r.tier == tier && r.direction == direction)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CONFIG_PREFIX}{}", serde_json::to_string(&(&self.study, &self.config))?)?;
        let mut cw = csv::Writer::from_writer(w);
        for r in &self.rows {
            cw.serialize(r).map_err(csv_err)?;
        }
        cw.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut first = String::new();
        r.read_line(&mut first)?;
        let header = first
            .trim_end()
            .strip_prefix(CONFIG_PREFIX)
            .ok_or_else(|| Error::format("report CSV lacks the config comment line"))?;
        let (study, config): (Study, ExperimentConfig) = serde_json::from_str(header)?;
        let mut cr = csv::Reader::from_reader(r);
        if cr.headers().map_err(csv_err)?.iter().ne(CSV_HEADER) {
            return Err(Error::format("unexpected report CSV columns"));
        }
        let rows = cr.deserialize().collect::<std::result::Result<Vec<ReportRow>, _>>().map_err(csv_err)?;
        Ok(Self { study, config, rows })
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        Ok(serde_json::from_reader(r)?)
    }

    /// Writes `<dir>/<study>.csv` and `<dir>/<study>.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.write_csv(fs::File::create(dir.join(format!("{}.csv", self.study)))?)?;
        self.write_json(fs::File::create(dir.join(format!("{}.json", self.study)))?)
    }

    /// Reads a report from a `.csv` or `.json` file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = fs::File::open(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Self::read_csv(f),
            _ => Self::read_json(f),
        }
    }

    /// Plain-text table for terminals.
    pub fn render(&self) -> String {
        let mut s = format!("{:<14} {:<8} {:<12} {:>7} {:>7} {:>7} {:>6} {:>5}\n", "tag", "tier", "direction", "R@1", "R@5", "R@25", "MRR", "MR");
        for r in &self.rows {
            s += &format!(
                "{:<14} {:<8} {:<12} {:>7.2} {:>7.2} {:>7.2} {:>6.3} {:>5}\n",
                r.tag,
                tier_name(r.tier),
                r.direction.to_string(),
                r.r1,
                r.r5,
                r.r25,
                r.mrr,
                r.mr
            );
        }
        s
    }
}

pub fn tier_name(t: Provenance) -> &'static str {
    match t {
        Provenance::Clean => "clean",
        Provenance::Partial => "partial",
        Provenance::Noisy => "noisy",
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::format(format!("report CSV: {e}"))
}
