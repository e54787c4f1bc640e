use std::fmt::Write as _;

use super::evaluate::{Aggregate, Fingerprint, MetricsReport, SceneMetrics};
use crate::error::{Error, Result};

const MAGIC: &str = "# mbp-report v1";
const AGGREGATE_ROW: &str = "(aggregate)";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportStyle {
    Csv,
    Json,
    /// Aligned columns for terminals; rounded, not meant to be parsed back.
    Text,
}

impl std::str::FromStr for ReportStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportStyle::Csv),
            "json" => Ok(ReportStyle::Json),
            "text" => Ok(ReportStyle::Text),
            _ => Err(Error::Config(format!("unknown report style {s:?} (expected csv, json or text)"))),
        }
    }
}

pub fn format_report(report: &MetricsReport, style: ReportStyle) -> Result<String> {
    match style {
        ReportStyle::Json => Ok(serde_json::to_string_pretty(report)? + "\n"),
        ReportStyle::Csv => format_csv(report),
        ReportStyle::Text => Ok(format_text(report)),
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Input(format!("report csv: {e}"))
}

fn format_csv(r: &MetricsReport) -> Result<String> {
    let mut out = String::new();
    writeln!(out, "{MAGIC}").unwrap();
    writeln!(out, "# params={}", r.params).unwrap();
    writeln!(out, "# seconds_per_frame={}", r.seconds_per_frame).unwrap();
    writeln!(out, "# fingerprint={}", serde_json::to_string(&r.fingerprint)?).unwrap();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["scene_id", "frames", "psnr", "ssim"]).map_err(csv_err)?;
    for s in &r.per_scene {
        w.write_record([
            s.scene_id.clone(),
            s.frame_count.to_string(),
            s.psnr_mean.to_string(),
            s.ssim_mean.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.write_record([
        AGGREGATE_ROW.to_string(),
        r.frame_count().to_string(),
        r.aggregate.psnr.to_string(),
        r.aggregate.ssim.to_string(),
    ])
    .map_err(csv_err)?;
    let body = w.into_inner().map_err(|e| Error::Input(format!("report csv: {e}")))?;
    out.push_str(&String::from_utf8(body).expect("csv writer emits utf-8"));
    Ok(out)
}

fn format_text(r: &MetricsReport) -> String {
    let width = r
        .per_scene
        .iter()
        .map(|s| s.scene_id.len())
        .chain([AGGREGATE_ROW.len(), 5])
        .max()
        .unwrap_or(5);
    let mut out = String::new();
    let f = &r.fingerprint;
    writeln!(
        out,
        "model {} (C={}, r={})  params {}  {:.4} s/frame{}",
        f.model.variant,
        f.model.base_channels,
        f.model.cab_reduction,
        r.params,
        r.seconds_per_frame,
        if f.tiled.is_some() { "  [tiled]" } else { "" }
    )
    .unwrap();
    writeln!(out, "{:<width$}  {:>6}  {:>8}  {:>6}", "scene", "frames", "PSNR", "SSIM").unwrap();
    let mut row = |id: &str, n: usize, p: f64, s: f64| {
        writeln!(out, "{id:<width$}  {n:>6}  {p:>8.3}  {s:>6.4}").unwrap();
    };
    for s in &r.per_scene {
        row(&s.scene_id, s.frame_count, s.psnr_mean, s.ssim_mean);
    }
    row(AGGREGATE_ROW, r.frame_count(), r.aggregate.psnr, r.aggregate.ssim);
    out
}

/// Inverse of [`format_report`] for the CSV and JSON styles.
pub fn parse_report(text: &str, style: ReportStyle) -> Result<MetricsReport> {
    match style {
        ReportStyle::Json => Ok(serde_json::from_str(text)?),
        ReportStyle::Csv => parse_csv(text),
        ReportStyle::Text => Err(Error::Input("text reports are not machine-readable; use csv or json".into())),
    }
}

fn parse_csv(text: &str) -> Result<MetricsReport> {
    let bad = |msg: String| Error::Input(format!("report csv: {msg}"));
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad(format!("first line must be {MAGIC:?}")));
    }
    let (mut params, mut spf, mut fingerprint) = (None, None, None);
    let mut body = String::new();
    for line in lines {
        if let Some(meta) = line.strip_prefix("# ") {
            let (k, v) = meta.split_once('=').ok_or_else(|| bad(format!("malformed header {line:?}")))?;
            match k {
                "params" => params = Some(v.parse::<usize>().map_err(|e| bad(format!("params: {e}")))?),
                "seconds_per_frame" => spf = Some(v.parse::<f64>().map_err(|e| bad(format!("seconds_per_frame: {e}")))?),
                "fingerprint" => fingerprint = Some(serde_json::from_str::<Fingerprint>(v)?),
                _ => return Err(bad(format!("unknown header {k:?}"))),
            }
        } else {
            body.push_str(line);
            body.push('\n');
        }
    }
    let mut per_scene = Vec::new();
    let mut aggregate = None;
    let mut rd = csv::Reader::from_reader(body.as_bytes());
    let header = rd.headers().map_err(csv_err)?.clone();
    if header.iter().collect::<Vec<_>>() != ["scene_id", "frames", "psnr", "ssim"] {
        return Err(bad(format!("unexpected columns {header:?}")));
    }
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|e| bad(format!("{}: {e}", &rec[i])));
        let frames = rec[1].parse::<usize>().map_err(|e| bad(format!("{}: {e}", &rec[1])))?;
        if &rec[0] == AGGREGATE_ROW {
            aggregate = Some(Aggregate { psnr: num(2)?, ssim: num(3)? });
        } else {
            per_scene.push(SceneMetrics {
                scene_id: rec[0].to_string(),
                frame_count: frames,
                psnr_mean: num(2)?,
                ssim_mean: num(3)?,
            });
        }
    }
    Ok(MetricsReport {
        per_scene,
        aggregate: aggregate.ok_or_else(|| bad("missing aggregate row".into()))?,
        params: params.ok_or_else(|| bad("missing params header".into()))?,
        seconds_per_frame: spf.ok_or_else(|| bad("missing seconds_per_frame header".into()))?,
        fingerprint: fingerprint.ok_or_else(|| bad("missing fingerprint header".into()))?,
    })
}

/// Reports ordered by aggregate PSNR, best first.
pub fn rank_by_psnr(reports: &[MetricsReport]) -> Vec<&MetricsReport> {
    let mut v: Vec<&MetricsReport> = reports.iter().collect();
    v.sort_by(|a, b| b.aggregate.psnr.total_cmp(&a.aggregate.psnr));
    v
}

/// One row per report, sorted by PSNR descending.
pub fn format_comparison(reports: &[MetricsReport], style: ReportStyle) -> Result<String> {
    let ranked = rank_by_psnr(reports);
    match style {
        ReportStyle::Json => {
            let rows: Vec<_> = ranked
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "label": r.fingerprint.label,
                        "variant": r.fingerprint.model.variant,
                        "params": r.params,
                        "psnr": r.aggregate.psnr,
                        "ssim": r.aggregate.ssim,
                        "seconds_per_frame": r.seconds_per_frame,
                    })
                })
                .collect();
            Ok(serde_json::to_string_pretty(&rows)? + "\n")
        }
        ReportStyle::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["label", "variant", "params", "psnr", "ssim", "seconds_per_frame"])
                .map_err(csv_err)?;
            for r in ranked {
                w.write_record([
                    r.fingerprint.label.clone(),
                    r.fingerprint.model.variant.to_string(),
                    r.params.to_string(),
                    r.aggregate.psnr.to_string(),
                    r.aggregate.ssim.to_string(),
                    r.seconds_per_frame.to_string(),
                ])
                .map_err(csv_err)?;
            }
            let body = w.into_inner().map_err(|e| Error::Input(format!("report csv: {e}")))?;
            Ok(String::from_utf8(body).expect("csv writer emits utf-8"))
        }
        ReportStyle::Text => {
            let width = ranked.iter().map(|r| r.fingerprint.label.len()).chain([5]).max().unwrap_or(5);
            let mut out = String::new();
            writeln!(
                out,
                "{:<width$}  {:<12}  {:>10}  {:>8}  {:>6}  {:>9}",
                "label", "variant", "params", "PSNR", "SSIM", "s/frame"
            )
            .unwrap();
            for r in ranked {
                writeln!(
                    out,
                    "{:<width$}  {:<12}  {:>10}  {:>8.3}  {:>6.4}  {:>9.4}",
                    r.fingerprint.label,
                    r.fingerprint.model.variant.as_str(),
                    r.params,
                    r.aggregate.psnr,
                    r.aggregate.ssim,
                    r.seconds_per_frame
                )
                .unwrap();
            }
            Ok(out)
        }
    }
}
