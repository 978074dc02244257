//! Output directory with atomic, provenance-stamped writes.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use tempfile::NamedTempFile;

use crate::error::{io_at, CliError};

pub const TOOL: &str = "trajstate";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(command: &str, config_sha256: String, seed: u64) -> Self {
        Self {
            tool: TOOL,
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config_sha256,
            seed,
        }
    }

    /// `# key: value` lines, for CSV and TOML outputs.
    pub fn comment_lines(&self) -> Vec<String> {
        vec![
            format!("{} {}", self.tool, self.version),
            format!("command: {}", self.command),
            format!("config_sha256: {}", self.config_sha256),
            format!("seed: {}", self.seed),
        ]
    }
}

#[derive(Debug)]
pub struct OutputDir {
    dir: PathBuf,
    provenance: Provenance,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(dir: &Path, provenance: Provenance) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(io_at(dir))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            provenance,
            written: Vec::new(),
        })
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    /// Writes into a temporary file in the same directory and renames it
    /// into place once complete.
    fn atomic(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
    ) -> Result<(), CliError> {
        let target = self.dir.join(name);
        let tmp = NamedTempFile::new_in(&self.dir).map_err(io_at(&self.dir))?;
        {
            let mut w = BufWriter::new(tmp.as_file());
            body(&mut w).map_err(io_at(&target))?;
            w.flush().map_err(io_at(&target))?;
        }
        tmp.persist(&target).map_err(|e| CliError::Io {
            path: target.clone(),
            source: e.error,
        })?;
        self.written.push(target);
        Ok(())
    }

    /// CSV preceded by `#` provenance comments.
    pub fn csv(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
    ) -> Result<(), CliError> {
        let header = self.provenance.comment_lines();
        self.atomic(name, |w| {
            for line in &header {
                writeln!(w, "# {line}")?;
            }
            body(w)
        })
    }

    /// TOML (or any `#`-commented text) preceded by provenance comments.
    pub fn commented_text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        self.csv(name, |w| w.write_all(text.as_bytes()))
    }

    /// `{"provenance": ..., "data": ...}`, pretty-printed.
    pub fn json<T: Serialize>(&mut self, name: &str, data: &T) -> Result<(), CliError> {
        #[derive(Serialize)]
        struct Doc<'a, T> {
            provenance: &'a Provenance,
            data: &'a T,
        }
        let doc = Doc {
            provenance: &self.provenance,
            data,
        };
        let text = serde_json::to_string_pretty(&doc)
            .map_err(|e| CliError::Usage(format!("json encoding: {e}")))?;
        self.atomic(name, |w| writeln!(w, "{text}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_are_stamped_and_complete() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(
            &dir.path().join("nested"),
            Provenance::new("test", "ab".into(), 4),
        )
        .unwrap();
        out.csv("a.csv", |w| writeln!(w, "x,y\n1,2")).unwrap();
        out.json("b.json", &serde_json::json!({"k": 1})).unwrap();
        let text = std::fs::read_to_string(dir.path().join("nested/a.csv")).unwrap();
        assert!(text.starts_with("# trajstate "));
        assert!(text.contains("# seed: 4\n") && text.ends_with("x,y\n1,2\n"));
        let v: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("nested/b.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(v["provenance"]["config_sha256"], "ab");
        assert_eq!(v["data"]["k"], 1);
        assert_eq!(out.written().len(), 2);
        // no stray temporary files
        assert_eq!(
            std::fs::read_dir(dir.path().join("nested"))
                .unwrap()
                .count(),
            2
        );
    }

    #[test]
    fn failed_body_leaves_no_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut out =
            OutputDir::create(dir.path(), Provenance::new("test", "ab".into(), 4)).unwrap();
        let r = out.csv("a.csv", |_| Err(std::io::Error::other("boom")));
        assert!(r.is_err());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
