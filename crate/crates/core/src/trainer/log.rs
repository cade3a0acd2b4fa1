use std::fs::File;
use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::LossTerms;

/// Per-iteration loss breakdown as CSV.
pub struct TrainLog {
    writer: csv::Writer<File>,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("training log: {e}"))
}

impl TrainLog {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        }
        let file = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        let mut header = vec!["phase", "iteration", "view", "gaussians"];
        header.extend(LossTerms::NAMES);
        header.push("total");
        writer.write_record(&header).map_err(csv_err)?;
        Ok(Self { writer })
    }

    pub fn row(&mut self, phase: &str, iteration: usize, view: usize, gaussians: usize, terms: &LossTerms, total: f64) -> Result<()> {
        let mut rec = vec![phase.to_string(), iteration.to_string(), view.to_string(), gaussians.to_string()];
        rec.extend(terms.values().iter().map(|v| v.to_string()));
        rec.push(total.to_string());
        self.writer.write_record(&rec).map_err(csv_err)
    }

    pub fn flush(&mut self) -> Result<()> {
        self.writer.flush().map_err(Error::from)
    }
}
