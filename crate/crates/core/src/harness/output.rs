use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use super::run::{MetricRow, RunRecord};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Jsonl,
    Csv,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(OutputFormat::Jsonl),
            "csv" => Ok(OutputFormat::Csv),
            _ => Err(Error::InvalidConfig(format!("unknown format {s:?}, expected jsonl or csv"))),
        }
    }
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Jsonl => "jsonl",
            OutputFormat::Csv => "csv",
        }
    }
}

fn json_err(e: serde_json::Error) -> Error {
    Error::input(format!("serialization failed: {e}"))
}

pub fn to_jsonl<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).map_err(json_err)?);
        out.push('\n');
    }
    Ok(out)
}

/// CSV with an explicit header, so an empty table still has one.
pub fn to_csv<T: Serialize>(header: &[&str], rows: &[T]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).map_err(|e| Error::input(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::input(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::input(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
}

pub const METRIC_HEADER: &[&str] = &[
    "variant",
    "seed",
    "snr_db",
    "feedback_bits",
    "map",
    "rank1",
    "rank5",
    "rank10",
    "nmse",
];
pub const LOSS_HEADER: &[&str] = &["variant", "seed", "epoch", "loss", "accept_rate", "fallback_rate"];
pub const USER_NMSE_HEADER: &[&str] = &["user_id", "position", "source", "nmse"];

pub fn render_rows<T: Serialize>(header: &[&str], rows: &[T], format: OutputFormat) -> Result<String> {
    match format {
        OutputFormat::Jsonl => to_jsonl(rows),
        OutputFormat::Csv => to_csv(header, rows),
    }
}

/// Mean mAP per (SNR, feedback budget) and variant, one column per variant.
pub fn plot_data(records: &[RunRecord]) -> String {
    let mut variants: Vec<&str> = Vec::new();
    let mut cells: BTreeMap<(i64, Option<u32>), BTreeMap<&str, (f64, usize)>> = BTreeMap::new();
    for r in records {
        let name = r.variant.name();
        if !variants.contains(&name) {
            variants.push(name);
        }
        for m in &r.metrics {
            let key = ((m.snr_db * 1000.0).round() as i64, m.feedback_bits);
            let e = cells.entry(key).or_default().entry(name).or_insert((0.0, 0));
            e.0 += m.map;
            e.1 += 1;
        }
    }
    let mut out = String::from("snr_db,feedback_bits");
    for v in &variants {
        let _ = write!(out, ",map_{v}");
    }
    out.push('\n');
    for ((snr, bits), by) in cells {
        let _ = write!(out, "{},{}", snr as f64 / 1000.0, bits.map(|b| b.to_string()).unwrap_or_default());
        for v in &variants {
            match by.get(v) {
                Some((s, n)) => {
                    let _ = write!(out, ",{}", s / *n as f64);
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

/// Mean metric rows over seeds, keyed by (variant, SNR, feedback budget).
pub fn mean_over_seeds(rows: &[MetricRow]) -> Vec<MetricRow> {
    let mut out: Vec<(MetricRow, usize)> = Vec::new();
    for r in rows {
        match out
            .iter_mut()
            .find(|(m, _)| m.variant == r.variant && m.snr_db == r.snr_db && m.feedback_bits == r.feedback_bits)
        {
            Some((m, n)) => {
                m.map += r.map;
                m.rank1 += r.rank1;
                m.rank5 += r.rank5;
                m.rank10 += r.rank10;
                m.nmse += r.nmse;
                *n += 1;
            }
            None => out.push((r.clone(), 1)),
        }
    }
    out.into_iter()
        .map(|(mut m, n)| {
            let n = n as f64;
            m.map /= n;
            m.rank1 /= n;
            m.rank5 /= n;
            m.rank10 /= n;
            m.nmse /= n;
            m
        })
        .collect()
}

/// Write metrics, losses, per-user NMSE, plot data and the full records
/// under `out_dir`.
pub fn emit_results(records: &[RunRecord], format: OutputFormat, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let metrics: Vec<_> = records.iter().flat_map(|r| r.metrics.clone()).collect();
    let losses: Vec<_> = records.iter().flat_map(|r| r.losses.clone()).collect();
    let ext = format.extension();
    std::fs::write(
        out_dir.join(format!("metrics.{ext}")),
        render_rows(METRIC_HEADER, &metrics, format)?,
    )?;
    std::fs::write(
        out_dir.join(format!("losses.{ext}")),
        render_rows(LOSS_HEADER, &losses, format)?,
    )?;
    let users = records.first().map(|r| r.per_user_nmse.clone()).unwrap_or_default();
    std::fs::write(out_dir.join("per_user_nmse.csv"), to_csv(USER_NMSE_HEADER, &users)?)?;
    std::fs::write(out_dir.join("plot_data.csv"), plot_data(records))?;
    std::fs::write(
        out_dir.join("run_records.json"),
        serde_json::to_string_pretty(records).map_err(json_err)?,
    )?;
    Ok(())
}
