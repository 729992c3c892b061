//! World documents: pretty JSON in struct field order, pages sorted by id.

use std::path::Path;

use planshape_core::KnowledgeWorld;
use sha2::{Digest, Sha256};

use crate::Error;

pub fn to_json(world: &KnowledgeWorld) -> String {
    let mut s = serde_json::to_string_pretty(world).expect("world data serializes");
    s.push('\n');
    s
}

pub fn from_json(text: &str) -> Result<KnowledgeWorld, serde_json::Error> {
    serde_json::from_str(text)
}

pub fn save(world: &KnowledgeWorld, path: &Path) -> Result<(), Error> {
    crate::write_file(path, to_json(world).as_bytes())
}

pub fn load(path: &Path) -> Result<KnowledgeWorld, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text).map_err(|e| Error::data(path, format!("not a world file: {e}")))
}

/// Lowercase hex SHA-256 of raw bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String, Error> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}
