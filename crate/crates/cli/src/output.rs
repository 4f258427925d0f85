use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use coopmc::config::ExperimentConfig;

/// A CSV table with a commented provenance header.
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(cfg: &ExperimentConfig, seed: u64, columns: &[&str]) -> Self {
        let mut text = String::new();
        writeln!(text, "# coopmc {}", env!("CARGO_PKG_VERSION")).unwrap();
        writeln!(text, "# config-hash: {}", cfg.hash()).unwrap();
        writeln!(text, "# seed: {seed}").unwrap();
        writeln!(text, "# config:").unwrap();
        for line in cfg.to_toml().lines() {
            writeln!(text, "#   {line}").unwrap();
        }
        text.push_str(&columns.join(","));
        text.push('\n');
        Self { text }
    }

    pub fn row<I, S>(&mut self, cells: I)
    where
        I: IntoIterator<Item = S>,
        S: ToString,
    {
        let cells: Vec<String> = cells.into_iter().map(|c| c.to_string()).collect();
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    /// Writes to `dir/name` through a temporary file and a rename, so a
    /// failed run never leaves a partial file behind.
    pub fn write(&self, dir: &Path, name: &str) -> io::Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let target = dir.join(name);
        let tmp = dir.join(format!(".{name}.tmp"));
        fs::write(&tmp, &self.text)?;
        fs::rename(&tmp, &target)?;
        Ok(target)
    }
}

/// Formats an optional float, leaving the cell empty when absent.
pub fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
