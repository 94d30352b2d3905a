use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::Failure;

/// Output directory that refuses to clobber existing files unless forced.
pub struct OutDir {
    root: PathBuf,
    force: bool,
}

impl OutDir {
    pub fn create(root: &Path, force: bool) -> Result<Self, Failure> {
        fs::create_dir_all(root)
            .map_err(|e| Failure::io(format!("cannot create {}: {e}", root.display())))?;
        // every command leaves a metadata file, so its presence means a previous run
        let meta = root.join("metadata.toml");
        if meta.exists() && !force {
            return Err(Failure::io(format!(
                "{} holds earlier results; pass --force to overwrite",
                root.display()
            )));
        }
        Ok(Self {
            root: root.to_path_buf(),
            force,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes through a temporary file in the same directory, then renames.
    pub fn write(&self, name: &str, contents: &str) -> Result<PathBuf, Failure> {
        let target = self.path(name);
        if target.exists() && !self.force {
            return Err(Failure::io(format!(
                "{} exists; pass --force to overwrite",
                target.display()
            )));
        }
        let tmp = self.root.join(format!(".{name}.tmp"));
        let io = |e: std::io::Error| Failure::io(format!("cannot write {}: {e}", target.display()));
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(contents.as_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
        fs::rename(&tmp, &target).map_err(io)?;
        Ok(target)
    }

    /// Metadata needed to rerun the command: tool version, seed and the
    /// full argument set.
    pub fn write_metadata<C: Serialize>(&self, command: &str, seed: Option<u64>, config: &C) -> Result<(), Failure> {
        #[derive(Serialize)]
        struct Metadata<'a, C: Serialize> {
            tool: &'a str,
            version: &'a str,
            command: &'a str,
            #[serde(skip_serializing_if = "Option::is_none")]
            seed: Option<u64>,
            config: &'a C,
        }
        let meta = Metadata {
            tool: "minestop",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            config,
        };
        let text = toml::to_string(&meta).map_err(|e| Failure::io(format!("cannot encode metadata: {e}")))?;
        self.write("metadata.toml", &text).map(|_| ())
    }
}
