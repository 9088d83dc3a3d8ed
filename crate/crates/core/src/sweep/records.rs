use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Family;

pub const HEADER: &str =
    "config_hash,family,size_label,size_param_count,bits,method,seed,valid_error,test_error,wall_seconds";

/// Weight precision of a cell: the float baseline or an `n`-bit quantizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Precision {
    Float32,
    Bits(u32),
}

impl Precision {
    /// Storage bits per weight.
    pub fn word_length(&self) -> u32 {
        match self {
            Precision::Float32 => 32,
            Precision::Bits(n) => *n,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Precision::Float32 => f.write_str("float32"),
            Precision::Bits(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "float32" {
            return Ok(Precision::Float32);
        }
        s.parse()
            .map(Precision::Bits)
            .map_err(|_| Error::InvalidArgument(format!("bad bits value `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Float,
    Direct,
    Retrain,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Float => "float",
            Method::Direct => "direct",
            Method::Retrain => "retrain",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "float" => Ok(Method::Float),
            "direct" => Ok(Method::Direct),
            "retrain" => Ok(Method::Retrain),
            _ => Err(Error::InvalidArgument(format!("unknown method `{s}`"))),
        }
    }
}

/// One completed sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub config_hash: u64,
    pub family: Family,
    pub size_label: String,
    pub size_param_count: u64,
    pub bits: Precision,
    pub method: Method,
    pub seed: u64,
    pub valid_error: f64,
    pub test_error: f64,
    pub wall_seconds: f64,
}

impl RunRecord {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{:016x},{},{},{},{},{},{},{},{},{}",
            self.config_hash,
            self.family,
            self.size_label,
            self.size_param_count,
            self.bits,
            self.method,
            self.seed,
            format_sig6(self.valid_error),
            format_sig6(self.test_error),
            format_sig6(self.wall_seconds),
        )
    }

    /// The record as it reads back after serialization.
    pub fn rounded(&self) -> Self {
        Self {
            valid_error: round_sig6(self.valid_error),
            test_error: round_sig6(self.test_error),
            wall_seconds: round_sig6(self.wall_seconds),
            ..self.clone()
        }
    }
}

/// Rounds to 6 significant decimal digits.
pub fn round_sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().expect("formatted float parses")
}

/// Shortest plain decimal text with 6 significant digits (scientific
/// notation outside 1e-5..1e15).
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.5e}");
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..]
        .parse()
        .expect("integer exponent");
    if !(-5..15).contains(&exp) {
        return sci;
    }
    let v: f64 = sci.parse().expect("formatted float parses");
    let decimals = (5 - exp).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn parse_line(path: &Path, line: u64, rec: &csv::StringRecord) -> Result<RunRecord> {
    let bad = |message: String| Error::Record {
        path: path.to_path_buf(),
        line,
        message,
    };
    if rec.len() != 10 {
        return Err(bad(format!("expected 10 fields, found {}", rec.len())));
    }
    let real = |i: usize, name: &str| -> Result<f64> {
        rec[i]
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| bad(format!("{name} `{}` is not a number", &rec[i])))
    };
    let error_rate = |i: usize, name: &str| -> Result<f64> {
        let v = real(i, name)?;
        if (0.0..=1.0).contains(&v) {
            Ok(v)
        } else {
            Err(bad(format!("{name} {v} outside [0, 1]")))
        }
    };
    let wall_seconds = real(9, "wall_seconds")?;
    if wall_seconds < 0.0 {
        return Err(bad(format!("negative wall_seconds {wall_seconds}")));
    }
    Ok(RunRecord {
        config_hash: u64::from_str_radix(&rec[0], 16)
            .map_err(|_| bad(format!("config_hash `{}` is not hex", &rec[0])))?,
        family: rec[1].parse().map_err(|e: Error| bad(e.to_string()))?,
        size_label: rec[2].to_string(),
        size_param_count: rec[3]
            .parse()
            .map_err(|_| bad(format!("size_param_count `{}` is not an integer", &rec[3])))?,
        bits: rec[4].parse().map_err(|e: Error| bad(e.to_string()))?,
        method: rec[5].parse().map_err(|e: Error| bad(e.to_string()))?,
        seed: rec[6]
            .parse()
            .map_err(|_| bad(format!("seed `{}` is not an integer", &rec[6])))?,
        valid_error: error_rate(7, "valid_error")?,
        test_error: error_rate(8, "test_error")?,
        wall_seconds,
    })
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(path, &text)
}

pub(crate) fn parse_records(path: &Path, text: &str) -> Result<Vec<RunRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == HEADER => {}
        _ => {
            return Err(Error::Record {
                path: path.to_path_buf(),
                line: 1,
                message: "missing or wrong results header".into(),
            })
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        out.push(parse_line(path, line, &row)?);
    }
    Ok(out)
}

/// Writes a complete results file (header plus one line per record).
pub fn write_records(records: &[RunRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "{HEADER}")?;
        for r in records {
            writeln!(w, "{}", r.to_csv_line())?;
        }
        w.flush()?;
        w.get_ref().sync_all()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Appends one record and flushes it to disk before returning.
pub(crate) fn append_record(path: &Path, record: &RunRecord) -> Result<()> {
    let mut f = OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{}", record.to_csv_line())
        .and_then(|_| f.sync_data())
        .map_err(|e| Error::io(path, e))
}
