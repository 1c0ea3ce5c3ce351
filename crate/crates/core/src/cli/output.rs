//! CSV emission for training curves, evaluation reports and summaries.

use std::path::Path;

use crate::agent::TrainingRecord;
use crate::error::{Error, Result};
use crate::eval::EvaluationReport;

pub const CURVE_HEADER: [&str; 6] = ["episode", "epsilon", "mean_reward", "train_acc", "test_acc", "loss"];
pub const REPORT_HEADER: [&str; 6] = [
    "image_id",
    "true_label",
    "predicted_label",
    "score0",
    "score1",
    "correct",
];

fn fixed(v: f64) -> String {
    format!("{v:.6}")
}

fn optional(v: Option<f64>) -> String {
    v.map(fixed).unwrap_or_default()
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?)
}

/// Writes one row per episode. Missing values (ε and reward for supervised
/// runs, loss before the first update) are empty fields.
pub fn emit_curve(record: &TrainingRecord, path: &Path) -> Result<()> {
    if record.rows.is_empty() {
        return Err(Error::InvalidParameter("training record is empty".into()));
    }
    let mut w = writer(path)?;
    w.write_record(CURVE_HEADER)?;
    for r in &record.rows {
        w.write_record([
            r.episode.to_string(),
            optional(r.epsilon),
            optional(r.mean_reward),
            fixed(r.train_acc),
            fixed(r.test_acc),
            optional(r.loss),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-image rows followed by an `accuracy` row holding the mean of the
/// `correct` column.
pub fn write_report(report: &EvaluationReport, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(REPORT_HEADER)?;
    for r in &report.rows {
        w.write_record([
            r.image_id.clone(),
            r.true_label.index().to_string(),
            r.predicted.index().to_string(),
            fixed(r.score0),
            fixed(r.score1),
            u8::from(r.correct()).to_string(),
        ])?;
    }
    w.write_record(["accuracy", "", "", "", "", &fixed(report.accuracy)])?;
    w.flush()?;
    Ok(())
}

pub fn write_summary(rows: &[(&str, f64)], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["method", "test_accuracy"])?;
    for (method, acc) in rows {
        w.write_record([method.to_string(), fixed(*acc)])?;
    }
    w.flush()?;
    Ok(())
}
