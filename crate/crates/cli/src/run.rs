//! Output directory bookkeeping and the run manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

use icnn_core::json;

pub struct Run {
    dir: PathBuf,
    command: String,
    seed: u64,
    config: serde_json::Value,
    inputs: Vec<String>,
    outputs: Vec<String>,
    started: Instant,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    args: Vec<String>,
    seed: u64,
    version: &'static str,
    config: &'a serde_json::Value,
    inputs: &'a [String],
    outputs: &'a [String],
    /// Excluded from reproducibility comparisons.
    wall_clock_seconds: f64,
}

impl Run {
    pub fn new(dir: &Path, command: &str, seed: u64) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command: command.into(),
            seed,
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn set_config<T: Serialize>(&mut self, cfg: &T) -> Result<()> {
        self.config = serde_json::to_value(cfg)?;
        Ok(())
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.display().to_string());
    }

    /// Path for an output file, recorded in the manifest.
    pub fn output(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.dir.join(name)
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.output(name);
        json::write_file(&p, value).with_context(|| format!("writing {}", p.display()))
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.output(name);
        json::write_atomic(&p, text.as_bytes()).with_context(|| format!("writing {}", p.display()))
    }

    pub fn finish(self) -> Result<()> {
        let args: Vec<String> = std::env::args().skip(1).collect();
        let m = Manifest {
            command: &self.command,
            args,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION"),
            config: &self.config,
            inputs: &self.inputs,
            outputs: &self.outputs,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let p = self.dir.join("manifest.json");
        json::write_file(&p, &m).with_context(|| format!("writing {}", p.display()))
    }
}

/// Series as a two-column CSV.
pub fn loss_csv(losses: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        s.push_str(&format!("{i},{l:.16e}\n"));
    }
    s
}
