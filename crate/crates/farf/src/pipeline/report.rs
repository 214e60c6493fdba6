//! Evaluation report: a UTF-8 comma-separated table plus a sidecar
//! canonical key-value metadata file.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub image: String,
    pub method: String,
    pub scale: u32,
    pub psnr_db: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub scale: u32,
    pub border_crop: usize,
    pub studio_luma: bool,
    pub dataset: String,
    pub config_snapshot: Option<String>,
    pub seed: Option<u64>,
}

impl EvalReport {
    /// Average PSNR for a method, if present.
    pub fn average(&self, method: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.image == "average" && r.method == method)
            .map(|r| r.psnr_db)
    }

    /// Per-image PSNR for a method.
    pub fn image_psnr(&self, image: &str, method: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.image == image && r.method == method)
            .map(|r| r.psnr_db)
    }
}

fn format_psnr(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

/// Sidecar path: the report path with ".meta" appended.
pub fn meta_path(report_path: &Path) -> PathBuf {
    let mut s = report_path.as_os_str().to_os_string();
    s.push(".meta");
    PathBuf::from(s)
}

/// Writes the CSV table and its metadata sidecar. Row order is the order
/// in the report (sorted by image, then method, averages last), so re-runs
/// produce identical files.
pub fn write_report(report: &EvalReport, path: &Path) -> Result<()> {
    let mut csv = String::from("image,method,scale,psnr_db\n");
    for r in &report.rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.image,
            r.method,
            r.scale,
            format_psnr(r.psnr_db)
        ));
    }
    std::fs::write(path, csv)?;

    let mut meta = String::new();
    meta.push_str(&format!("dataset = {}\n", report.dataset));
    meta.push_str(&format!("scale = {}\n", report.scale));
    meta.push_str(&format!("border_crop = {}\n", report.border_crop));
    meta.push_str(&format!(
        "psnr_luma = {}\n",
        if report.studio_luma {
            "bt601-studio"
        } else {
            "bt601-full"
        }
    ));
    meta.push_str(&format!("psnr_channel = luma\n"));
    if let Some(seed) = report.seed {
        meta.push_str(&format!("seed = {seed}\n"));
    }
    if let Some(cfg) = &report.config_snapshot {
        for line in cfg.lines() {
            meta.push_str("config.");
            meta.push_str(line);
            meta.push('\n');
        }
    }
    let mut f = std::fs::File::create(meta_path(path))?;
    f.write_all(meta.as_bytes())?;
    Ok(())
}
