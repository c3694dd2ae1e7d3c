use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{ExperimentConfig, ExperimentOutput};
use crate::error::{Error, Result, ResultExt};
use crate::eval::write_samples_csv;

/// Where a run's files landed.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub config: PathBuf,
    pub samples: PathBuf,
    pub report: PathBuf,
    pub traces: PathBuf,
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))
}

/// Pretty JSON with a trailing newline, as every artifact is written.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Writes `<out_dir>/<run-id>/{config.json, samples.csv, report.json, traces/}`.
/// `config.json` holds the effective config with every default resolved.
pub fn write_artifacts(cfg: &ExperimentConfig, output: &ExperimentOutput) -> Result<RunArtifacts> {
    let dir = cfg.out_dir.join(cfg.effective_run_id());
    let traces = dir.join("traces");
    fs::create_dir_all(&traces)
        .map_err(Error::from)
        .context(|| format!("creating {}", traces.display()))?;
    let art = RunArtifacts {
        config: dir.join("config.json"),
        samples: dir.join("samples.csv"),
        report: dir.join("report.json"),
        traces,
        dir,
    };
    write_json(&art.config, cfg)?;
    let mut w = BufWriter::new(File::create(&art.samples)?);
    write_samples_csv(&output.report.samples, &mut w)?;
    w.flush()?;
    write_json(&art.report, &output.report)?;
    for s in &output.seeds {
        write_json(
            &art.traces.join(format!("seed-{}.json", s.traces.seed)),
            &s.traces,
        )?;
    }
    Ok(art)
}
