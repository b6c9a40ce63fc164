//! Content-addressed artifact names.
//!
//! Every artifact is named `<kind>-<digest>.<ext>`, where the digest is the
//! first 16 hex digits of SHA-256 over the TOML rendering of everything the
//! artifact depends on. Changing any input changes the name, so stale files
//! are never picked up.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Serialize)]
struct Keyed<'a, T: Serialize> {
    kind: &'a str,
    inputs: &'a T,
}

pub fn digest<T: Serialize>(kind: &str, inputs: &T) -> Result<String> {
    let text = toml::to_string(&Keyed { kind, inputs })
        .map_err(|e| Error::Config(format!("cannot key {kind} artifact: {e}")))?;
    Ok(hex16(&Sha256::digest(text.as_bytes())))
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex16(&Sha256::digest(bytes))
}

fn hex16(hash: &[u8]) -> String {
    hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

pub fn artifact_path(dir: &Path, kind: &str, key: &str, ext: &str) -> PathBuf {
    dir.join(format!("{kind}-{key}.{ext}"))
}

/// Fail with a pointer to the producing subcommand when `path` is absent.
pub fn require(path: &Path, subcommand: &'static str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            subcommand,
        })
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}
