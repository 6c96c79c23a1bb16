//! Per-student grid of predicted pass probabilities: one column per attempted
//! problem (in order), one row per test index.

use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};

use super::{PipelineError, Result};
use crate::models::PredictionRecord;

pub const CELL_PX: u32 = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapFiles {
    pub csv: PathBuf,
    pub png: PathBuf,
}

fn student_records<'a>(records: &'a [PredictionRecord], student_id: &str) -> Result<Vec<&'a PredictionRecord>> {
    let mut rows: Vec<&PredictionRecord> = records.iter().filter(|r| r.student_id == student_id).collect();
    if rows.is_empty() {
        return Err(PipelineError::UnknownStudent(student_id.into()));
    }
    rows.sort_by_key(|r| r.step);
    if rows.iter().any(|r| r.probs.is_none()) {
        return Err(PipelineError::NoProbabilities(student_id.into()));
    }
    Ok(rows)
}

/// CSV text. Header `test,<step>:<problem>...`; each cell is
/// `<probability>|<label>`, empty past the end of a shorter suite.
pub fn heatmap_csv(records: &[PredictionRecord], student_id: &str) -> Result<String> {
    let cols = student_records(records, student_id)?;
    let height = cols.iter().map(|r| r.outcomes.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["test".to_string()];
    header.extend(cols.iter().map(|r| format!("{}:{}", r.step + 1, r.problem_id)));
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..height {
        let mut row = vec![(i + 1).to_string()];
        for r in &cols {
            let probs = r.probs.as_ref().expect("checked");
            row.push(match (probs.get(i), r.outcomes.get(i)) {
                (Some(p), Some(y)) => format!("{p:.4}|{}", u8::from(*y)),
                _ => String::new(),
            });
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| PipelineError::Checkpoint(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("utf-8"))
}

fn csv_err(e: csv::Error) -> PipelineError {
    PipelineError::Io { path: PathBuf::from("<heatmap csv>"), source: std::io::Error::other(e) }
}

/// Grayscale image; darker cells mean higher pass probability. Cells past
/// the end of a suite are white.
pub fn render_heatmap(records: &[PredictionRecord], student_id: &str) -> Result<GrayImage> {
    let cols = student_records(records, student_id)?;
    let height = cols.iter().map(|r| r.outcomes.len()).max().unwrap_or(0).max(1);
    let mut img = GrayImage::from_pixel(cols.len() as u32 * CELL_PX, height as u32 * CELL_PX, Luma([255]));
    for (c, r) in cols.iter().enumerate() {
        for (i, p) in r.probs.as_ref().expect("checked").iter().enumerate() {
            let shade = (255.0 * (1.0 - p.clamp(0.0, 1.0))).round() as u8;
            for dy in 0..CELL_PX {
                for dx in 0..CELL_PX {
                    img.put_pixel(c as u32 * CELL_PX + dx, i as u32 * CELL_PX + dy, Luma([shade]));
                }
            }
        }
    }
    Ok(img)
}

/// Writes `heatmap_<student>.csv` and `.png` into `dir`.
pub fn emit_heatmap(records: &[PredictionRecord], student_id: &str, dir: &Path) -> Result<HeatmapFiles> {
    let csv = heatmap_csv(records, student_id)?;
    let img = render_heatmap(records, student_id)?;
    let safe: String = student_id.chars().map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
    let files = HeatmapFiles { csv: dir.join(format!("heatmap_{safe}.csv")), png: dir.join(format!("heatmap_{safe}.png")) };
    std::fs::write(&files.csv, csv).map_err(|source| PipelineError::Io { path: files.csv.clone(), source })?;
    img.save(&files.png)?;
    Ok(files)
}
