//! Output files: every file is written to a temporary sibling and renamed
//! into place.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use mkpca_core::fmt::fmt_f64;
use nalgebra::DMatrix;
use tempfile::NamedTempFile;

use crate::error::CliError;

/// Output directory, created on first use.
pub struct OutDir {
    path: PathBuf,
}

impl OutDir {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(path).map_err(|e| {
            CliError::Config(format!(
                "cannot create output directory {}: {e}",
                path.display()
            ))
        })?;
        Ok(Self {
            path: path.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes `name` atomically through `fill`.
    pub fn write<F>(&self, name: &str, fill: F) -> Result<PathBuf, CliError>
    where
        F: FnOnce(&mut dyn Write) -> Result<(), CliError>,
    {
        let target = self.path.join(name);
        let io_err =
            |e: std::io::Error| CliError::Config(format!("cannot write {}: {e}", target.display()));
        let tmp = NamedTempFile::new_in(&self.path).map_err(io_err)?;
        {
            let mut w = BufWriter::new(tmp.as_file());
            fill(&mut w)?;
            w.flush().map_err(io_err)?;
        }
        tmp.persist(&target).map_err(|e| io_err(e.error))?;
        Ok(target)
    }

    pub fn write_str(&self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        self.write(name, |w| {
            w.write_all(text.as_bytes())
                .map_err(|e| CliError::Config(e.to_string()))
        })
    }
}

fn csv_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("csv output: {e}"))
}

/// `unit_id,group,pc1,...,pcK`.
pub fn write_scores(
    w: &mut dyn Write,
    ids: &[String],
    groups: &dyn Fn(&str) -> String,
    scores: &DMatrix<f64>,
) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["unit_id".to_string(), "group".to_string()];
    header.extend((1..=scores.ncols()).map(|k| format!("pc{k}")));
    out.write_record(&header).map_err(csv_err)?;
    for (i, id) in ids.iter().enumerate() {
        let mut row = vec![id.clone(), groups(id)];
        row.extend(scores.row(i).iter().map(|v| fmt_f64(*v)));
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush().map_err(csv_err)?;
    Ok(())
}

/// A header followed by rows of `index, values...`.
pub fn write_indexed(
    w: &mut dyn Write,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<f64>>,
) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header).map_err(csv_err)?;
    for (k, row) in rows.into_iter().enumerate() {
        let mut rec = vec![(k + 1).to_string()];
        rec.extend(row.iter().map(|v| fmt_f64(*v)));
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush().map_err(csv_err)?;
    Ok(())
}
