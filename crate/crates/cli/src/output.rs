//! On-disk formats: `metrics.csv`, `events.jsonl` and `summary.json`.
//!
//! `metrics.csv` columns, in order: `step, loss, gap, grad_norm, active,
//! gradient_fraud, aggregation_fraud, false_accusation, protocol_violation,
//! mutual_eliminate, cover_up, check_averaging, bytes_broadcast,
//! bytes_p2p`. Ban columns are cumulative; `gap` is empty when the optimum
//! is unknown.
//!
//! `events.jsonl` starts with a header line (`"event": "header"`) carrying
//! the resolved config and seed, followed by one trace event per line. Every
//! line ends with a `chain` field: the SHA-256 of the previous line's chain
//! value and the bytes of this line up to that field, so edits, dropped
//! lines and reordering break the chain.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use btard_core::crypto::{hash, HashMode};
use btard_core::optim::MetricsRow;
use btard_core::simnet::TraceEvent;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::config::ExperimentConfig;

pub const METRICS_COLUMNS: [&str; 14] = [
    "step",
    "loss",
    "gap",
    "grad_norm",
    "active",
    "gradient_fraud",
    "aggregation_fraud",
    "false_accusation",
    "protocol_violation",
    "mutual_eliminate",
    "cover_up",
    "check_averaging",
    "bytes_broadcast",
    "bytes_p2p",
];

/// Flat form of [`MetricsRow`]; field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub step: u64,
    pub loss: f64,
    pub gap: Option<f64>,
    pub grad_norm: f64,
    pub active: usize,
    pub gradient_fraud: usize,
    pub aggregation_fraud: usize,
    pub false_accusation: usize,
    pub protocol_violation: usize,
    pub mutual_eliminate: usize,
    pub cover_up: usize,
    pub check_averaging: usize,
    pub bytes_broadcast: u64,
    pub bytes_p2p: u64,
}

impl From<&MetricsRow> for CsvRow {
    fn from(r: &MetricsRow) -> Self {
        Self {
            step: r.step,
            loss: r.loss,
            gap: r.gap,
            grad_norm: r.grad_norm,
            active: r.active,
            gradient_fraud: r.banned.gradient_fraud,
            aggregation_fraud: r.banned.aggregation_fraud,
            false_accusation: r.banned.false_accusation,
            protocol_violation: r.banned.protocol_violation,
            mutual_eliminate: r.banned.mutual_eliminate,
            cover_up: r.banned.cover_up,
            check_averaging: r.check_averaging,
            bytes_broadcast: r.bytes_broadcast,
            bytes_p2p: r.bytes_p2p,
        }
    }
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(CsvRow::from(r))?;
    }
    if rows.is_empty() {
        w.write_record(METRICS_COLUMNS)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<CsvRow>, csv::Error> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().ne(METRICS_COLUMNS) {
        return Err(csv::Error::from(io::Error::new(io::ErrorKind::InvalidData, "unexpected metrics columns")));
    }
    r.deserialize().collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Header {
    pub config: ExperimentConfig,
    pub seed: u64,
}

/// Appends hash-chained JSON lines.
pub struct EventWriter<W: Write> {
    out: W,
    chain: [u8; 32],
}

fn link(prev: &[u8; 32], body: &str) -> [u8; 32] {
    let mut bytes = Vec::with_capacity(32 + body.len());
    bytes.extend_from_slice(prev);
    bytes.extend_from_slice(body.as_bytes());
    hash(HashMode::Crypto, &bytes).0
}

fn hex(b: &[u8; 32]) -> String {
    btard_core::crypto::hex::encode(b)
}

impl EventWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> io::Result<Self> {
        Ok(Self::new(BufWriter::new(File::create(path)?)))
    }
}

impl<W: Write> EventWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out, chain: [0; 32] }
    }

    fn line(&mut self, obj: Map<String, Value>) -> io::Result<()> {
        let body = Value::Object(obj).to_string();
        self.chain = link(&self.chain, &body);
        let open = body.strip_suffix('}').expect("JSON object");
        writeln!(self.out, "{open},\"chain\":\"{}\"}}", hex(&self.chain))
    }

    pub fn header(&mut self, h: &Header) -> io::Result<()> {
        let mut obj = Map::new();
        obj.insert("event".into(), Value::String("header".into()));
        obj.insert("config".into(), serde_json::to_value(&h.config)?);
        obj.insert("seed".into(), Value::from(h.seed));
        self.line(obj)
    }

    pub fn event(&mut self, e: &TraceEvent) -> io::Result<()> {
        match serde_json::to_value(e)? {
            Value::Object(obj) => self.line(obj),
            _ => unreachable!("trace events serialize as objects"),
        }
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EventLogError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("line {0}: hash chain broken")]
    Chain(usize),
    #[error("missing header line")]
    NoHeader,
}

/// Reads an event log back, checking the hash chain line by line.
pub fn read_events(reader: impl BufRead) -> Result<(Header, Vec<TraceEvent>), EventLogError> {
    let mut chain = [0u8; 32];
    let mut header = None;
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let n = i + 1;
        let line = line?;
        let json = |source| EventLogError::Json { line: n, source };
        // The chain covers the exact bytes before the trailing chain field.
        let (body, claimed) = line
            .strip_suffix("\"}")
            .and_then(|l| l.rsplit_once(",\"chain\":\""))
            .ok_or(EventLogError::Chain(n))?;
        chain = link(&chain, &format!("{body}}}"));
        if claimed != hex(&chain) {
            return Err(EventLogError::Chain(n));
        }
        let obj: Map<String, Value> = serde_json::from_str(&format!("{body}}}")).map_err(json)?;
        if i == 0 {
            if obj.get("event").and_then(Value::as_str) != Some("header") {
                return Err(EventLogError::NoHeader);
            }
            header = Some(serde_json::from_value(Value::Object(obj)).map_err(json)?);
        } else {
            events.push(serde_json::from_value(Value::Object(obj)).map_err(json)?);
        }
    }
    Ok((header.ok_or(EventLogError::NoHeader)?, events))
}

pub fn read_events_file(path: &Path) -> Result<(Header, Vec<TraceEvent>), EventLogError> {
    read_events(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use btard_core::optim::BanCounts;
    use btard_core::simnet::{BarrierKind, TraceKind};

    fn config() -> ExperimentConfig {
        let text = r#"
[objective]
kind = "quadratic"
d = 8
mu = 1.0
l = 1.0
[swarm]
n = 4
[trainer]
schedule = "explicit"
gamma = 0.1
iterations = 3
"#;
        ExperimentConfig::from_toml(text).unwrap()
    }

    fn log() -> Vec<u8> {
        let mut w = EventWriter::new(Vec::new());
        w.header(&Header { config: config(), seed: 9 }).unwrap();
        for step in 0..3 {
            w.event(&TraceEvent { time: step * 10, kind: TraceKind::Barrier { step, barrier: BarrierKind::Verification } }).unwrap();
        }
        w.finish().unwrap()
    }

    #[test]
    fn event_log_round_trip() {
        let (h, ev) = read_events(&log()[..]).unwrap();
        assert_eq!(h.seed, 9);
        assert_eq!(h.config, config());
        assert_eq!(ev.len(), 3);
        assert_eq!(ev[2].time, 20);
    }

    #[test]
    fn chain_catches_edits_and_truncation() {
        let text = String::from_utf8(log()).unwrap();
        let edited = text.replacen("\"time\":10", "\"time\":11", 1);
        assert!(matches!(read_events(edited.as_bytes()), Err(EventLogError::Chain(3))));
        let mut lines: Vec<&str> = text.lines().collect();
        lines.remove(1);
        assert!(matches!(read_events(lines.join("\n").as_bytes()), Err(EventLogError::Chain(2))));
    }

    #[test]
    fn metrics_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let mut banned = BanCounts::default();
        banned.add(btard_core::protocol::BanCause::CoverUp);
        let rows = vec![
            MetricsRow { step: 0, loss: 1.5, gap: Some(1.5), grad_norm: 2.0, active: 4, banned: BanCounts::default(), check_averaging: 0, bytes_broadcast: 10, bytes_p2p: 20 },
            MetricsRow { step: 1, loss: 0.25, gap: None, grad_norm: 1e-3, active: 3, banned, check_averaging: 1, bytes_broadcast: 11, bytes_p2p: 21 },
        ];
        write_metrics(&path, &rows).unwrap();
        let back = read_metrics(&path).unwrap();
        assert_eq!(back, rows.iter().map(CsvRow::from).collect::<Vec<_>>());
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), METRICS_COLUMNS.join(","));
    }
}
