//! Run directories: `header.json`, `log.csv` (evaluation rows) and
//! `duels.jsonl` (one record per round).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use duel_align::experiment::{DuelRecord, EvalRow, RunHeader, RunLog, RunObserver, CSV_COLUMNS, LOG_SCHEMA_VERSION};

use crate::error::{HarnessError, Result};

pub const HEADER_FILE: &str = "header.json";
pub const CSV_FILE: &str = "log.csv";
pub const JSONL_FILE: &str = "duels.jsonl";
pub const POLICY_FILE: &str = "policy.json";
pub const REWARD_MODEL_FILE: &str = "reward_model.json";

/// Streams rows to disk; both files are flushed at every evaluation.
pub struct LogWriter {
    dir: PathBuf,
    csv: csv::Writer<File>,
    jsonl: BufWriter<File>,
}

impl LogWriter {
    pub fn create(dir: &Path, header: &RunHeader) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let mut h = serde_json::to_string_pretty(header)?;
        h.push('\n');
        std::fs::write(dir.join(HEADER_FILE), h)?;
        let mut csv = csv::Writer::from_path(dir.join(CSV_FILE))?;
        csv.write_record(CSV_COLUMNS)?;
        csv.flush()?;
        let jsonl = BufWriter::new(File::create(dir.join(JSONL_FILE))?);
        Ok(Self {
            dir: dir.to_path_buf(),
            csv,
            jsonl,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn finish(mut self) -> Result<()> {
        self.csv.flush()?;
        self.jsonl.flush()?;
        Ok(())
    }
}

fn core_io(e: impl std::fmt::Display) -> duel_align::Error {
    duel_align::Error::Io(std::io::Error::other(e.to_string()))
}

impl RunObserver for LogWriter {
    fn on_duel(&mut self, record: &DuelRecord) -> duel_align::Result<()> {
        serde_json::to_writer(&mut self.jsonl, record)?;
        self.jsonl.write_all(b"\n")?;
        Ok(())
    }

    fn on_eval(&mut self, row: &EvalRow) -> duel_align::Result<()> {
        self.csv.serialize(csv_row(row)).map_err(core_io)?;
        self.csv.flush()?;
        self.jsonl.flush()?;
        Ok(())
    }
}

type CsvRow = (
    u64,
    u64,
    Option<f64>,
    f64,
    f64,
    Option<f64>,
    Option<usize>,
    Option<f64>,
    Option<&'static str>,
);

fn csv_row(r: &EvalRow) -> CsvRow {
    (
        r.round,
        r.oracle_queries,
        r.online_win_rate,
        r.offline_win_rate,
        r.cumulative_regret,
        r.immediate_regret,
        r.proposal_set_size,
        r.pair_variance,
        r.label_source.map(|s| s.as_str()),
    )
}

pub fn read_header(dir: &Path) -> Result<RunHeader> {
    let text = std::fs::read_to_string(dir.join(HEADER_FILE))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let found = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| HarnessError::Format("header has no schema_version".into()))? as u32;
    if found != LOG_SCHEMA_VERSION {
        return Err(HarnessError::SchemaVersion {
            expected: LOG_SCHEMA_VERSION,
            found,
        });
    }
    Ok(serde_json::from_value(value)?)
}

/// Reads evaluation rows, checking the column list.
pub fn read_csv(path: &Path) -> Result<Vec<EvalRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().ne(CSV_COLUMNS.iter().copied()) {
        return Err(HarnessError::Format(format!(
            "{}: columns {:?} differ from {:?}",
            path.display(),
            headers.iter().collect::<Vec<_>>(),
            CSV_COLUMNS
        )));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let opt = |i: usize| -> Result<Option<f64>> {
            let s = field(i);
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|e| HarnessError::Format(format!("{}: {e}", CSV_COLUMNS[i])))
            }
        };
        let num = |i: usize| -> Result<f64> {
            opt(i)?.ok_or_else(|| HarnessError::Format(format!("{} is empty", CSV_COLUMNS[i])))
        };
        let label_source = match field(8) {
            "" => None,
            s => Some(s.parse().map_err(HarnessError::Format)?),
        };
        rows.push(EvalRow {
            round: num(0)? as u64,
            oracle_queries: num(1)? as u64,
            online_win_rate: opt(2)?,
            offline_win_rate: num(3)?,
            cumulative_regret: num(4)?,
            immediate_regret: opt(5)?,
            proposal_set_size: opt(6)?.map(|v| v as usize),
            pair_variance: opt(7)?,
            label_source,
        });
    }
    Ok(rows)
}

pub fn read_jsonl(path: &Path) -> Result<Vec<DuelRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Reads a whole run directory.
pub fn read_run(dir: &Path) -> Result<RunLog> {
    Ok(RunLog {
        header: read_header(dir)?,
        evals: read_csv(&dir.join(CSV_FILE))?,
        records: read_jsonl(&dir.join(JSONL_FILE))?,
    })
}
