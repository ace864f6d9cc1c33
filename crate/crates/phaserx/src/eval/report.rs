//! Report emission: the sweep CSV, a log-scale BER chart as SVG, and a
//! JSON manifest with content digests of every emitted file.
//!
//! The CSV and SVG are byte-deterministic for a fixed seed; wall-clock
//! timings and timestamps are isolated in the manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::{mean_ber, SweepRecord};

pub const CSV_HEADER: &str =
    "method,ebno_db,bits_tested,bit_errors,ber,blocks_tested,error_blocks,seed,wall_time_s";

/// BER values of zero are drawn at this floor on the log axis, with a
/// marker noting the clamp.
pub const BER_PLOT_FLOOR: f64 = 1e-7;

/// Render records as CSV, one row per record in the given order, `ber` with
/// 12 significant digits, followed by per-method mean-BER footer comments.
pub fn format_csv(records: &[SweepRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{:.11e},{},{},{},{:.6}\n",
            r.method,
            r.ebno_db,
            r.bits_tested,
            r.bit_errors,
            r.ber(),
            r.blocks_tested,
            r.error_blocks,
            r.seed,
            r.wall_time_s,
        ));
    }
    for (method, mean) in mean_ber(records) {
        out.push_str(&format!("# mean_ber,{},{:.11e}\n", method, mean));
    }
    out
}

/// Parse a sweep CSV back into records. Comment lines are skipped; the
/// derived `ber` column is validated against the counts.
pub fn parse_csv(text: &str) -> Result<Vec<SweepRecord>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidArgument("empty CSV".into()))?;
    if header != CSV_HEADER {
        return Err(Error::InvalidArgument(format!("unexpected CSV header {header:?}")));
    }
    let mut records = Vec::new();
    for line in lines {
        if line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::InvalidArgument(format!("bad CSV row {line:?}")));
        }
        let rec = SweepRecord {
            method: fields[0].to_string(),
            ebno_db: fields[1].parse().map_err(bad_field)?,
            bits_tested: fields[2].parse().map_err(bad_field)?,
            bit_errors: fields[3].parse().map_err(bad_field)?,
            blocks_tested: fields[5].parse().map_err(bad_field)?,
            error_blocks: fields[6].parse().map_err(bad_field)?,
            seed: fields[7].parse().map_err(bad_field)?,
            wall_time_s: fields[8].parse().map_err(bad_field)?,
        };
        let ber: f64 = fields[4].parse().map_err(bad_field)?;
        if (ber - rec.ber()).abs() > 1e-9 * ber.max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "ber column {} disagrees with {}/{}",
                ber, rec.bit_errors, rec.bits_tested
            )));
        }
        records.push(rec);
    }
    Ok(records)
}

fn bad_field<E: std::fmt::Display>(e: E) -> Error {
    Error::InvalidArgument(format!("bad CSV field: {e}"))
}

const SERIES_COLORS: [&str; 6] =
    ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Log-y BER-versus-Eb/N0 line chart. Zero BERs are clamped to
/// [`BER_PLOT_FLOOR`] and flagged with a square marker.
pub fn format_svg(records: &[SweepRecord]) -> String {
    let (w, h) = (800.0, 500.0);
    let (ml, mr, mt, mb) = (70.0, 160.0, 30.0, 50.0);
    let plot_w = w - ml - mr;
    let plot_h = h - mt - mb;

    let mut methods: Vec<String> = records.iter().map(|r| r.method.clone()).collect();
    methods.sort();
    methods.dedup();

    let x_min = records.iter().map(|r| r.ebno_db).fold(f64::INFINITY, f64::min);
    let x_max = records.iter().map(|r| r.ebno_db).fold(f64::NEG_INFINITY, f64::max);
    let x_span = if (x_max - x_min).abs() < 1e-12 { 1.0 } else { x_max - x_min };
    let y_log_min = BER_PLOT_FLOOR.log10();
    let y_log_max = 0.0;

    let x_of = |ebno: f64| ml + (ebno - x_min) / x_span * plot_w;
    let y_of = |ber: f64| {
        let clamped = ber.max(BER_PLOT_FLOOR).min(1.0);
        mt + (y_log_max - clamped.log10()) / (y_log_max - y_log_min) * plot_h
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\" font-family=\"monospace\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"{ml}\" y=\"{mt}\" width=\"{plot_w}\" height=\"{plot_h}\" \
         fill=\"white\" stroke=\"black\"/>\n"
    ));
    // decade gridlines
    let mut decade = 0i32;
    while f64::from(decade) >= y_log_min {
        let y = y_of(10f64.powi(decade));
        svg.push_str(&format!(
            "<line x1=\"{ml}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#cccccc\"/>\n",
            ml + plot_w
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">1e{decade}</text>\n",
            ml - 6.0,
            y + 4.0
        ));
        decade -= 1;
    }
    // x ticks at observed ebno values
    let mut xticks: Vec<f64> = records.iter().map(|r| r.ebno_db).collect();
    xticks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xticks.dedup();
    for &x in &xticks {
        let px = x_of(x);
        svg.push_str(&format!(
            "<line x1=\"{px:.2}\" y1=\"{:.2}\" x2=\"{px:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
            mt + plot_h,
            mt + plot_h + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{px:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{x}</text>\n",
            mt + plot_h + 20.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">Eb/N0 (dB)</text>\n",
        ml + plot_w / 2.0,
        h - 10.0
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.2})\">BER</text>\n",
        mt + plot_h / 2.0,
        mt + plot_h / 2.0
    ));

    for (mi, method) in methods.iter().enumerate() {
        let color = SERIES_COLORS[mi % SERIES_COLORS.len()];
        let mut pts: Vec<&SweepRecord> = records.iter().filter(|r| &r.method == method).collect();
        pts.sort_by(|a, b| a.ebno_db.partial_cmp(&b.ebno_db).unwrap());
        let path: Vec<String> = pts
            .iter()
            .map(|r| format!("{:.2},{:.2}", x_of(r.ebno_db), y_of(r.ber())))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            path.join(" ")
        ));
        for r in &pts {
            let (px, py) = (x_of(r.ebno_db), y_of(r.ber()));
            if r.ber() == 0.0 {
                // clamped-to-floor marker
                svg.push_str(&format!(
                    "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"7\" height=\"7\" fill=\"none\" \
                     stroke=\"{color}\"><title>zero errors; plotted at floor {BER_PLOT_FLOOR:e}</title></rect>\n",
                    px - 3.5,
                    py - 3.5
                ));
            } else {
                svg.push_str(&format!(
                    "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"3\" fill=\"{color}\"/>\n"
                ));
            }
        }
        let ly = mt + 16.0 + mi as f64 * 18.0;
        svg.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            ml + plot_w + 10.0,
            ml + plot_w + 30.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\">{method}</text>\n",
            ml + plot_w + 36.0,
            ly + 4.0
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Manifest of one run: resolved configuration, seeds, timestamps, measured
/// wall times, and a digest of every emitted file.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub started_unix_ms: u128,
    pub ended_unix_ms: u128,
    /// Measured seconds per (method, ebno) point; excluded from the
    /// deterministic CSV on purpose.
    pub wall_times_s: BTreeMap<String, f64>,
    pub files: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn now_ms() -> u128 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

pub struct ReportPaths {
    pub csv: PathBuf,
    pub svg: PathBuf,
    pub manifest: PathBuf,
}

/// Write `sweep.csv`, `sweep.svg` and `manifest.json` into `out_dir`.
pub fn emit_report(
    records: &[SweepRecord],
    out_dir: &Path,
    seed: u64,
    config: serde_json::Value,
    wall_times_s: BTreeMap<String, f64>,
    started_unix_ms: u128,
) -> Result<ReportPaths> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to report".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let csv = format_csv(records);
    let svg = format_svg(records);
    let csv_path = out_dir.join("sweep.csv");
    let svg_path = out_dir.join("sweep.svg");
    std::fs::write(&csv_path, &csv)?;
    std::fs::write(&svg_path, &svg)?;
    let mut files = BTreeMap::new();
    files.insert("sweep.csv".to_string(), sha256_hex(csv.as_bytes()));
    files.insert("sweep.svg".to_string(), sha256_hex(svg.as_bytes()));
    let manifest = RunManifest {
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        config,
        started_unix_ms,
        ended_unix_ms: now_ms(),
        wall_times_s,
        files,
    };
    let manifest_path = out_dir.join("manifest.json");
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(ReportPaths { csv: csv_path, svg: svg_path, manifest: manifest_path })
}

/// Digest helper exposed for manifest self-checks.
pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

pub fn unix_ms_now() -> u128 {
    now_ms()
}
