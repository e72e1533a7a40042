use std::path::Path;

use super::plot::bar_chart;
use super::MetricsReport;
use crate::error::Result;

pub const REPORT_JSON: &str = "report.json";
pub const PER_CLASS_CSV: &str = "per_class.csv";
pub const RECALL_BAR_PNG: &str = "recall_bar.png";

/// Writes `report.json`, `per_class.csv` and `recall_bar.png` into `dir`.
pub fn render_report(report: &MetricsReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(REPORT_JSON), serde_json::to_string_pretty(report)?)?;
    let mut w = csv::Writer::from_path(dir.join(PER_CLASS_CSV))?;
    w.write_record(["class_index", "class_name", "support", "recall", "auc"])?;
    for (c, name) in report.class_names.iter().enumerate() {
        w.write_record([
            c.to_string(),
            name.clone(),
            report.confusion[c].iter().sum::<usize>().to_string(),
            report.per_class_recall[c].to_string(),
            report.auc_per_class[c].map(|a| a.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    bar_chart(&report.per_class_recall).save(dir.join(RECALL_BAR_PNG))?;
    Ok(())
}

pub fn load_report(path: &Path) -> Result<MetricsReport> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
