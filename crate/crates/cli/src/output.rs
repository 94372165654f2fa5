use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::CliResult;

/// Output directory that remembers what was written, for the manifest.
pub struct OutDir {
    dir: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        std::fs::write(self.dir.join(name), contents)?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, &s)
    }

    /// `<command>-manifest.json`: the resolved configuration, the toolkit
    /// version, the master seed and the files produced. Passing it back via
    /// `--config` repeats the run.
    pub fn finish<C: Serialize>(mut self, command: &str, seed: Option<u64>, config: &C, summary: Value) -> CliResult<()> {
        let name = format!("{command}-manifest.json");
        let manifest = json!({
            "tool": "anderloc",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "seed": seed,
            "config": config,
            "outputs": self.written,
            "summary": summary,
        });
        let mut s = serde_json::to_string_pretty(&manifest)?;
        s.push('\n');
        std::fs::write(self.dir.join(&name), s)?;
        self.written.push(name);
        Ok(())
    }
}
