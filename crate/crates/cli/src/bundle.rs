use std::path::{Path, PathBuf};

use ionfocus::config::RunConfig;
use ionfocus::io::{svg_plot_axes, write_text, Axes, CsvTable, Series};
use serde_json::{json, Value};

use crate::error::CliError;

/// Output directory of one subcommand run.
pub struct Bundle {
    dir: PathBuf,
    plots: bool,
    files: Vec<String>,
}

impl Bundle {
    pub fn create(dir: &Path, config: &RunConfig) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Output(format!("{}: {e}", dir.display())))?;
        let mut b = Self {
            dir: dir.to_path_buf(),
            plots: config.output.plots,
            files: Vec::new(),
        };
        b.text("config.toml", &config.to_toml())?;
        Ok(b)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        write_text(&self.path(name), text)?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn csv(&mut self, name: &str, table: &CsvTable) -> Result<(), CliError> {
        self.text(name, &table.render())
    }

    pub fn plot(&mut self, name: &str, title: &str, x: &str, y: &str, series: &[Series]) -> Result<(), CliError> {
        self.plot_axes(name, title, x, y, series, Axes::default())
    }

    pub fn plot_axes(&mut self, name: &str, title: &str, x: &str, y: &str, series: &[Series], axes: Axes) -> Result<(), CliError> {
        if self.plots {
            self.text(name, &svg_plot_axes(title, x, y, series, axes))?;
        }
        Ok(())
    }

    /// Write `summary.json` with the command name, seed and results.
    pub fn finish(mut self, command: &str, config: &RunConfig, results: Value) -> Result<(), CliError> {
        self.files.push("summary.json".into());
        let summary = json!({
            "status": "ok",
            "command": command,
            "seed": config.seed,
            "version": env!("CARGO_PKG_VERSION"),
            "files": self.files,
            "results": results,
        });
        let text = serde_json::to_string_pretty(&summary).expect("summary serialises") + "\n";
        write_text(&self.path("summary.json"), &text)?;
        Ok(())
    }
}
