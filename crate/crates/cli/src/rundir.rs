use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use polarsynth::config::Settings;
use polarsynth::{Error, Result};

pub const CONFIG_FILE: &str = "config.ini";
pub const META_FILE: &str = "run.txt";

pub fn build_id() -> String {
    format!("{} ({})", env!("CARGO_PKG_VERSION"), env!("BUILD_GIT_DESCRIBE"))
}

/// Output directory of one command. Creating it writes the effective config
/// and the run metadata before any other work.
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn create(path: &Path, command: &str, settings: &Settings) -> Result<RunDir> {
        fs::create_dir_all(path).map_err(|e| io(path, e))?;
        let dir = RunDir { path: path.to_path_buf() };
        dir.write(CONFIG_FILE, &settings.to_text())?;
        let mut meta = String::new();
        let _ = writeln!(meta, "command = {command}");
        let _ = writeln!(meta, "seed = {}", settings.train.seed);
        let _ = writeln!(meta, "build = {}", build_id());
        let _ = writeln!(meta, "args = {}", std::env::args().collect::<Vec<_>>().join(" "));
        dir.write(META_FILE, &meta)?;
        Ok(dir)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, text: &str) -> Result<()> {
        let p = self.file(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
        }
        fs::write(&p, text).map_err(|e| io(&p, e))
    }

    pub fn subdir(&self, name: &str) -> Result<PathBuf> {
        let p = self.file(name);
        fs::create_dir_all(&p).map_err(|e| io(&p, e))?;
        Ok(p)
    }
}

pub fn io(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}
