//! Small filesystem and hashing helpers shared across the crate.

use std::io;
use std::path::Path;

use sha2::{Digest, Sha256};

/// SHA-256 of `bytes`, hex encoded.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}

/// Write `bytes` to `path` atomically: write a temp file in the same
/// directory, then rename over the target. Readers never observe a
/// partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let stem = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "file".to_string());
    let tmp = dir.join(format!(".tmp-{}-{}", std::process::id(), stem));
    std::fs::write(&tmp, bytes)?;
    match std::fs::rename(&tmp, path) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = std::fs::remove_file(&tmp);
            Err(e)
        }
    }
}

/// Serialize `value` as pretty JSON and write it atomically.
pub fn atomic_write_json<T: serde::Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(io::Error::other)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

/// Map an arbitrary identifier to a filesystem-safe file stem.
///
/// Characters outside `[A-Za-z0-9_-]` are replaced with `_`; if any
/// replacement or truncation happened, a short content hash is appended so
/// distinct identifiers can never collide on disk. Dots are excluded so a
/// stem can never impersonate a suffixed sibling file such as a
/// `.failed.json` marker.
pub fn fs_safe_stem(id: &str) -> String {
    const MAX_LEN: usize = 100;
    let sanitized: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect();
    let truncated: String = sanitized.chars().take(MAX_LEN).collect();
    if truncated == id {
        truncated
    } else {
        let digest = sha256_hex(id.as_bytes());
        format!("{}-{}", truncated, &digest[..8])
    }
}
