use std::path::Path;

use crate::error::{Error, Result};
use crate::field::Variant;
use crate::trainer::EvalReport;

pub const ABLATION_COLUMNS: [&str; 8] = [
    "variant",
    "seed",
    "psnr_fine",
    "ssim_fine",
    "psnr_mid",
    "ssim_mid",
    "psnr_coarse",
    "ssim_coarse",
];

/// One (variant, seed) result. Metrics are `None` for missing channels and
/// for failed runs.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub metrics: [Option<f64>; 6],
    pub error: Option<String>,
}

impl AblationRow {
    pub fn from_report(variant: Variant, seed: u64, r: &EvalReport) -> Self {
        let pair = |m: &Option<crate::trainer::ChannelMetrics>| match m {
            Some(m) => [Some(m.psnr), Some(m.ssim)],
            None => [None, None],
        };
        let [a, b] = [Some(r.mean_fine.psnr), Some(r.mean_fine.ssim)];
        let [c, d] = pair(&r.mean_mid);
        let [e, f] = pair(&r.mean_coarse);
        Self {
            variant,
            seed,
            metrics: [a, b, c, d, e, f],
            error: None,
        }
    }

    pub fn failed(variant: Variant, seed: u64, error: String) -> Self {
        Self {
            variant,
            seed,
            metrics: [None; 6],
            error: Some(error),
        }
    }
}

pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) })
}

fn cell(v: Option<f64>, psnr: bool) -> String {
    match v {
        Some(x) if psnr => format!("{x:.3}"),
        Some(x) => format!("{x:.4}"),
        None => String::new(),
    }
}

fn cells(label: &str, seed: &str, m: &[Option<f64>; 6]) -> Vec<String> {
    let mut out = vec![label.to_string(), seed.to_string()];
    out.extend(m.iter().enumerate().map(|(i, v)| cell(*v, i % 2 == 0)));
    out
}

/// Writes `ablation.csv` and the aligned `ablation.txt`, with one median row
/// per variant after its seeds.
pub fn write_tables(rows: &[AblationRow], variants: &[Variant], out: &Path) -> Result<()> {
    let mut table: Vec<(Vec<String>, Option<&str>)> = Vec::new();
    for &v in variants {
        let group: Vec<&AblationRow> = rows.iter().filter(|r| r.variant == v).collect();
        for r in &group {
            table.push((cells(v.name(), &r.seed.to_string(), &r.metrics), r.error.as_deref()));
        }
        let ok: Vec<&&AblationRow> = group.iter().filter(|r| r.error.is_none()).collect();
        let mut med = [None; 6];
        for (k, m) in med.iter_mut().enumerate() {
            let vals: Vec<f64> = ok.iter().filter_map(|r| r.metrics[k]).collect();
            *m = median(&vals);
        }
        table.push((cells(v.name(), "median", &med), None));
    }

    let csv_path = out.join("ablation.csv");
    let err = |e: csv::Error| Error::io(&csv_path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(&csv_path).map_err(err)?;
    w.write_record(ABLATION_COLUMNS).map_err(err)?;
    for (row, _) in &table {
        w.write_record(row).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;

    let mut widths: Vec<usize> = ABLATION_COLUMNS.iter().map(|c| c.len()).collect();
    for (row, _) in &table {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let line = |row: &[String]| -> String {
        row.iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let header: Vec<String> = ABLATION_COLUMNS.iter().map(|s| s.to_string()).collect();
    let mut text = line(&header) + "\n";
    for (row, error) in &table {
        text.push_str(&line(row));
        if let Some(e) = error {
            text.push_str(&format!("  FAILED: {e}"));
        }
        text.push('\n');
    }
    let txt = out.join("ablation.txt");
    std::fs::write(&txt, text).map_err(|e| Error::io(&txt, e))
}
