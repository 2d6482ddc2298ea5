//! Reading and writing stage artifacts.
//!
//! JSON artifacts carry a top-level `config_hash` field. Every other artifact
//! starts with one stamp line, `#navsst config_hash=<hash>`, followed by the
//! payload. Reading an artifact checks the hash against the current config.

use navsst::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::fs;
use std::path::Path;

const STAMP: &str = "#navsst config_hash=";

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes).map_err(|e| Error::data(format!("cannot write {}: {e}", path.display())))
}

fn mismatch(path: &Path, found: &str, hash: &str) -> Error {
    Error::config(format!("{} was produced under config {found}, but the current config is {hash}; rerun the upstream stage", path.display()))
}

/// Split a leading stamp line off, returning its hash.
pub fn split_stamp(bytes: &[u8]) -> (Option<&str>, &[u8]) {
    if !bytes.starts_with(STAMP.as_bytes()) {
        return (None, bytes);
    }
    let Some(nl) = bytes.iter().position(|&b| b == b'\n') else {
        return (None, bytes);
    };
    match std::str::from_utf8(&bytes[STAMP.len()..nl]) {
        Ok(h) => (Some(h.trim()), &bytes[nl + 1..]),
        Err(_) => (None, bytes),
    }
}

pub fn write_stamped(path: &Path, hash: &str, payload: &[u8]) -> Result<()> {
    let mut out = format!("{STAMP}{hash}\n").into_bytes();
    out.extend_from_slice(payload);
    write_bytes(path, &out)
}

pub fn read_stamped(path: &Path, hash: &str) -> Result<Vec<u8>> {
    let bytes = read_bytes(path)?;
    match split_stamp(&bytes) {
        (Some(h), body) if h == hash => Ok(body.to_vec()),
        (Some(h), _) => Err(mismatch(path, h, hash)),
        (None, _) => Err(Error::format(format!("{} has no config stamp", path.display()))),
    }
}

/// Read an external input; a stamp, if present, is dropped unchecked.
pub fn read_input(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_bytes(path)?;
    Ok(split_stamp(&bytes).1.to_vec())
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    config_hash: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

pub fn write_json<T: Serialize>(path: &Path, hash: &str, body: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&Stamped { config_hash: hash, body })?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path, hash: &str) -> Result<T> {
    let bytes = read_bytes(path)?;
    let mut v: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    let found = v.get("config_hash").and_then(|h| h.as_str()).map(str::to_string);
    match found {
        Some(h) if h == hash => {}
        Some(h) => return Err(mismatch(path, &h, hash)),
        None => return Err(Error::format(format!("{} has no config_hash", path.display()))),
    }
    v.as_object_mut().map(|o| o.remove("config_hash"));
    serde_json::from_value(v).map_err(|e| Error::format(format!("{}: {e}", path.display())))
}
