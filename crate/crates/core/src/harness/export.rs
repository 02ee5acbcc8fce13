use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{CellOutput, RecordStatus, ResultRecord, SummaryRow};
use crate::error::{Error, Result};

/// Column order of `records.csv`. The `distribution` column holds the
/// inferred distribution as inline JSON, for example
/// `{"variant":"gaussian","mean":[1.2],"var":[0.01]}`; optional fields are empty
/// when absent.
pub const CSV_COLUMNS: [&str; 15] = [
    "method",
    "env",
    "setting",
    "seed",
    "iteration",
    "member",
    "strategy",
    "raw_return",
    "normalized_return",
    "transitions_used",
    "train_return",
    "train_success",
    "status",
    "message",
    "distribution",
];

/// Column order of the aggregated summary.
pub const SUMMARY_COLUMNS: [&str; 8] = ["method", "env", "setting", "iteration", "n_seeds", "mean", "sd", "partial"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

impl ExportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ExportFormat::Csv => "csv",
            ExportFormat::Json => "json",
        }
    }

    fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(ExportFormat::Csv),
            Some("json") => Ok(ExportFormat::Json),
            _ => Err(Error::Config(format!("{}: expected a .csv or .json file", path.display()))),
        }
    }
}

impl fmt::Display for ExportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

impl FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            _ => Err(crate::suggest::unknown("format", s, &["csv", "json"])),
        }
    }
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

fn records_to_csv(records: &[ResultRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).expect("in-memory write");
    for r in records {
        let dist = r
            .distribution
            .as_ref()
            .map(|d| serde_json::to_string(d).expect("distribution serializes"))
            .unwrap_or_default();
        w.write_record([
            r.method.to_string(),
            r.env.to_string(),
            r.setting.to_string(),
            r.seed.to_string(),
            r.iteration.to_string(),
            opt(&r.member),
            opt(&r.strategy),
            opt(&r.raw_return),
            opt(&r.normalized_return),
            r.transitions_used.to_string(),
            opt(&r.train_return),
            opt(&r.train_success),
            match r.status {
                RecordStatus::Ok => "ok".to_string(),
                RecordStatus::Failed => "failed".to_string(),
            },
            r.message.clone(),
            dist,
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

fn records_from_csv(text: &str, path: &Path) -> Result<Vec<ResultRecord>> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let header = rd.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(CSV_COLUMNS.iter().copied()) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("unexpected header; expected {}", CSV_COLUMNS.join(",")),
        });
    }
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let bad = |col: &str, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{col}: {msg}"),
        };
        let field = |i: usize| row.get(i).unwrap_or("");
        fn parse<T: FromStr>(s: &str) -> std::result::Result<T, String>
        where
            T::Err: fmt::Display,
        {
            s.parse::<T>().map_err(|e| e.to_string())
        }
        fn parse_opt<T: FromStr>(s: &str) -> std::result::Result<Option<T>, String>
        where
            T::Err: fmt::Display,
        {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<T>().map(Some).map_err(|e| e.to_string())
            }
        }
        let get = |i: usize| -> (&str, &str) { (CSV_COLUMNS[i], field(i)) };
        macro_rules! col {
            ($i:expr, $f:ident) => {{
                let (name, v) = get($i);
                $f(v).map_err(|m| bad(name, m))?
            }};
        }
        let status = match field(12) {
            "ok" => RecordStatus::Ok,
            "failed" => RecordStatus::Failed,
            other => return Err(bad("status", format!("unknown status `{other}`"))),
        };
        let distribution = match field(14) {
            "" => None,
            s => Some(serde_json::from_str(s).map_err(|e| bad("distribution", e.to_string()))?),
        };
        out.push(ResultRecord {
            method: col!(0, parse),
            env: col!(1, parse),
            setting: col!(2, parse),
            seed: col!(3, parse),
            iteration: col!(4, parse),
            member: col!(5, parse_opt),
            strategy: col!(6, parse_opt),
            raw_return: col!(7, parse_opt),
            normalized_return: col!(8, parse_opt),
            transitions_used: col!(9, parse),
            train_return: col!(10, parse_opt),
            train_success: col!(11, parse_opt),
            status,
            message: field(13).to_string(),
            distribution,
        });
    }
    Ok(out)
}

/// Writes records as CSV (columns [`CSV_COLUMNS`]) or as a JSON array.
pub fn write_records(records: &[ResultRecord], path: &Path, format: ExportFormat) -> Result<()> {
    let text = match format {
        ExportFormat::Csv => records_to_csv(records),
        ExportFormat::Json => serde_json::to_string_pretty(records).expect("records serialize") + "\n",
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads records written by [`write_records`]; the format follows the
/// file extension.
pub fn read_records(path: &Path) -> Result<Vec<ResultRecord>> {
    let format = ExportFormat::from_path(path)?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        ExportFormat::Csv => records_from_csv(&text, path),
        ExportFormat::Json => serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        }),
    }
}

/// Writes aggregated rows as CSV (columns [`SUMMARY_COLUMNS`]) or JSON.
pub fn write_summary(rows: &[SummaryRow], path: &Path, format: ExportFormat) -> Result<()> {
    let text = match format {
        ExportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(SUMMARY_COLUMNS).expect("in-memory write");
            for r in rows {
                w.write_record([
                    r.method.to_string(),
                    r.env.to_string(),
                    r.setting.to_string(),
                    r.iteration.to_string(),
                    r.n_seeds.to_string(),
                    r.mean.to_string(),
                    r.sd.to_string(),
                    r.partial.to_string(),
                ])
                .expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
        }
        ExportFormat::Json => serde_json::to_string_pretty(rows).expect("rows serialize") + "\n",
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Layout of one run directory:
///
/// ```text
/// <root>/manifest.json        written by the command-line tool
/// <root>/config.toml          resolved configuration snapshot
/// <root>/records.csv
/// <root>/records.json
/// <root>/timings.csv          wall time per method and cell
/// <root>/datasets/<cell>-<source>.jsonl
/// <root>/policies/<cell>-<method>-it<k>.json
/// <root>/traces/<cell>-<method>.jsonl
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn records_csv(&self) -> PathBuf {
        self.root.join("records.csv")
    }

    pub fn records_json(&self) -> PathBuf {
        self.root.join("records.json")
    }

    pub fn timings_csv(&self) -> PathBuf {
        self.root.join("timings.csv")
    }

    pub fn datasets(&self) -> PathBuf {
        self.root.join("datasets")
    }

    pub fn policies(&self) -> PathBuf {
        self.root.join("policies")
    }

    pub fn traces(&self) -> PathBuf {
        self.root.join("traces")
    }

    pub fn create(&self) -> Result<()> {
        for d in [self.root.clone(), self.datasets(), self.policies(), self.traces()] {
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        Ok(())
    }

    /// Records already in the directory; empty when there are none yet.
    pub fn load_records(&self) -> Result<Vec<ResultRecord>> {
        let p = self.records_csv();
        if p.exists() {
            read_records(&p)
        } else {
            Ok(Vec::new())
        }
    }

    /// Adds the cells' records to the existing ones and writes their
    /// artifacts. Records are kept sorted by cell and method so the files do
    /// not depend on how the grid was split across invocations.
    pub fn append(&self, outputs: &[CellOutput]) -> Result<Vec<ResultRecord>> {
        self.create()?;
        let mut records = self.load_records()?;
        for out in outputs {
            records.extend(out.records.iter().cloned());
            for (name, d) in &out.datasets {
                d.save(&self.datasets().join(format!("{name}.jsonl")))?;
            }
            for (name, p) in &out.policies {
                p.save(&self.policies().join(format!("{name}.json")))?;
            }
            for (method, outcomes) in &out.outcomes {
                let path = self.traces().join(format!("{}-{method}.jsonl", out.key.tag()));
                let mut text = String::new();
                for line in outcomes.iter().flat_map(|o| o.trace.iter()) {
                    text.push_str(&line.to_string());
                    text.push('\n');
                }
                fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            }
        }
        records.sort_by_key(|r| (r.env, r.setting, r.seed, r.method));
        write_records(&records, &self.records_csv(), ExportFormat::Csv)?;
        write_records(&records, &self.records_json(), ExportFormat::Json)?;

        let path = self.timings_csv();
        let fresh = !path.exists();
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let mut text = String::new();
        if fresh {
            text.push_str("env,setting,seed,method,seconds\n");
        }
        for t in outputs.iter().flat_map(|o| &o.timings) {
            text.push_str(&format!(
                "{},{},{},{},{:.3}\n",
                t.cell.env, t.cell.setting, t.cell.seed, t.method, t.seconds
            ));
        }
        f.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))?;
        Ok(records)
    }
}
