//! Deterministic report emission. Floating-point values are written with 17
//! significant digits everywhere (JSON and CSV), field order is fixed by
//! struct declaration, and every report embeds the experiment provenance
//! (command, seed, replica count, caps, config hash), so identical runs
//! produce byte-identical files.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::io::{self, Write};
use std::path::Path;

/// Experiment identity embedded in every JSON report.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub command: String,
    pub seed: u64,
    pub replicas: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_generations: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_cycles: Option<u32>,
    pub config_sha256: String,
}

impl Provenance {
    pub fn new(command: &str, seed: u64, replicas: u64, config_sha256: String) -> Self {
        Provenance {
            command: command.to_string(),
            seed,
            replicas,
            max_generations: None,
            max_cycles: None,
            config_sha256,
        }
    }
}

/// SHA-256 hex digest of raw config bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// A result payload together with its provenance, flattened side by side.
#[derive(Debug, Clone, Serialize)]
pub struct Report<T: Serialize> {
    #[serde(flatten)]
    pub result: T,
    #[serde(flatten)]
    pub provenance: Provenance,
}

struct FixedFloatFormatter;

impl serde_json::ser::Formatter for FixedFloatFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        if value.is_finite() {
            write!(writer, "{}", fmt_float(value))
        } else {
            writer.write_all(b"null")
        }
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        self.write_f64(writer, value as f64)
    }
}

/// 17 significant digits, scientific notation.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Serialize to JSON with fixed float formatting and a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, FixedFloatFormatter);
    value
        .serialize(&mut ser)
        .expect("report serialization cannot fail");
    out.push(b'\n');
    String::from_utf8(out).expect("JSON is UTF-8")
}

/// One busy-period row of the CSV schema
/// `replica,station_J,phi_total,tau,capped`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BusyRow {
    pub replica: u64,
    /// 1-based station index, as printed.
    pub station: usize,
    pub phi_total: f64,
    pub tau: u32,
    pub capped: bool,
}

pub fn busy_csv(rows: &[BusyRow]) -> String {
    let mut out = String::from("replica,station_J,phi_total,tau,capped\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.replica,
            r.station,
            fmt_float(r.phi_total),
            r.tau,
            u8::from(r.capped)
        ));
    }
    out
}

pub fn parse_busy_csv(text: &str) -> Result<Vec<BusyRow>, String> {
    let mut rows = Vec::new();
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == "replica,station_J,phi_total,tau,capped" => {}
        Some(h) => return Err(format!("unexpected CSV header: {h}")),
        None => return Err("empty CSV".into()),
    }
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(format!("row {}: expected 5 fields, got {}", i + 2, fields.len()));
        }
        let parse = |s: &str, what: &str| -> Result<f64, String> {
            s.parse::<f64>().map_err(|e| format!("row {}: bad {what}: {e}", i + 2))
        };
        rows.push(BusyRow {
            replica: parse(fields[0], "replica")? as u64,
            station: parse(fields[1], "station")? as usize,
            phi_total: parse(fields[2], "phi_total")?,
            tau: parse(fields[3], "tau")? as u32,
            capped: fields[4] == "1",
        });
    }
    Ok(rows)
}

/// Snapshot dump: one row per cycle, `replica,cycle,q_1,...,q_m`.
pub fn snapshots_csv(m: usize, rows: &[(u64, u32, Vec<u64>)]) -> String {
    let mut header = String::from("replica,cycle");
    for j in 1..=m {
        header.push_str(&format!(",q_{j}"));
    }
    header.push('\n');
    let mut out = header;
    for (replica, cycle, q) in rows {
        out.push_str(&format!("{replica},{cycle}"));
        for v in q {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// `x,s_hat,stderr` probe grid.
pub fn probes_csv(probes: &[crate::spectral::SProbe]) -> String {
    let mut out = String::from("x,s_hat,stderr\n");
    for p in probes {
        out.push_str(&format!(
            "{},{},{}\n",
            fmt_float(p.x),
            fmt_float(p.s_hat),
            fmt_float(p.stderr)
        ));
    }
    out
}

/// `y,P_hat` survival curve.
pub fn curve_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("y,P_hat\n");
    for (y, p) in points {
        out.push_str(&format!("{},{}\n", fmt_float(*y), fmt_float(*p)));
    }
    out
}

pub fn write_output(path: Option<&Path>, content: &str) -> io::Result<()> {
    match path {
        Some(p) => std::fs::write(p, content),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(content.as_bytes())
        }
    }
}
