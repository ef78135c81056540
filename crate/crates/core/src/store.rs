//! On-disk layout of a published bundle and the sender's private secrets.
//!
//! ```text
//! DIR/manifest.bin        binary manifest (wire encoding)
//! DIR/manifest.txt        human-readable copy
//! DIR/items/<id>.ct       one ciphertext per item
//! DIR/private/secrets.bin sender key material, never served
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::catalog::{FlatIndexMap, ProtocolMode};
use crate::symcrypto::{KeyLength, SymKey};
use crate::wire::{decode_manifest, encode_manifest, Reader, WireError, Writer};
use crate::wot::{PublishedBundle, SenderSecrets, WotError};

pub const MANIFEST_BIN: &str = "manifest.bin";
pub const MANIFEST_TXT: &str = "manifest.txt";
pub const ITEMS_DIR: &str = "items";
pub const PRIVATE_DIR: &str = "private";
pub const SECRETS_FILE: &str = "secrets.bin";

const SECRETS_MAGIC: &[u8; 8] = b"WOTSEC\x00\x01";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("decode: {0}")]
    Decode(#[from] WireError),
    #[error("secrets file: {0}")]
    Secrets(&'static str),
    #[error(transparent)]
    Bundle(#[from] WotError),
}

fn io_err(path: &Path, e: std::io::Error) -> StoreError {
    StoreError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn read(path: &Path) -> Result<Vec<u8>, StoreError> {
    fs::read(path).map_err(|e| io_err(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn create_dir(path: &Path) -> Result<(), StoreError> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

pub fn item_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(ITEMS_DIR).join(format!("{id}.ct"))
}

pub fn secrets_path(dir: &Path) -> PathBuf {
    dir.join(PRIVATE_DIR).join(SECRETS_FILE)
}

pub fn write_bundle(dir: &Path, bundle: &PublishedBundle) -> Result<(), StoreError> {
    create_dir(&dir.join(ITEMS_DIR))?;
    write(&dir.join(MANIFEST_BIN), &encode_manifest(&bundle.manifest))?;
    write(&dir.join(MANIFEST_TXT), bundle.manifest.to_text().as_bytes())?;
    for (entry, ct) in bundle.manifest.entries.iter().zip(&bundle.ciphertexts) {
        write(&item_path(dir, &entry.id), ct)?;
    }
    Ok(())
}

/// Load and verify a bundle: every ciphertext must match its digest.
pub fn read_bundle(dir: &Path) -> Result<PublishedBundle, StoreError> {
    let manifest = decode_manifest(&read(&dir.join(MANIFEST_BIN))?)?;
    let ciphertexts = manifest
        .entries
        .iter()
        .map(|e| read(&item_path(dir, &e.id)))
        .collect::<Result<Vec<_>, _>>()?;
    let bundle = PublishedBundle {
        manifest,
        ciphertexts,
    };
    bundle.verify()?;
    Ok(bundle)
}

pub fn encode_secrets(secrets: &SenderSecrets) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(SECRETS_MAGIC)
        .u8(secrets.mode.code())
        .u16(secrets.key_len.bits())
        .str16(&secrets.group_id)
        .str16(&secrets.catalog_id)
        .u32(secrets.weights.len() as u32);
    for &weight in &secrets.weights {
        w.u64(weight);
    }
    for key in secrets.item_keys.iter().chain(&secrets.flat) {
        w.bytes(key.as_bytes());
    }
    w.into_inner()
}

fn keys(r: &mut Reader<'_>, count: u64, len: usize) -> Result<Vec<SymKey>, StoreError> {
    (0..count)
        .map(|_| Ok(SymKey::from_bytes(r.take(len)?)))
        .collect()
}

pub fn decode_secrets(bytes: &[u8]) -> Result<SenderSecrets, StoreError> {
    let mut r = Reader::new(bytes);
    if r.take(SECRETS_MAGIC.len())? != SECRETS_MAGIC {
        return Err(StoreError::Secrets("bad magic"));
    }
    let mode = ProtocolMode::from_code(r.u8()?).ok_or(StoreError::Secrets("unknown mode"))?;
    let key_len = KeyLength::from_bits(r.u16()?).ok_or(StoreError::Secrets("unsupported lambda"))?;
    let group_id = r.str16()?;
    let catalog_id = r.str16()?;
    let n = r.u32()? as usize;
    if n == 0 || r.remaining() / 8 < n {
        return Err(StoreError::Secrets("bad item count"));
    }
    let weights = (0..n).map(|_| r.u64()).collect::<Result<Vec<_>, _>>()?;
    let total = FlatIndexMap::new(&weights)
        .map_err(|_| StoreError::Secrets("bad weights"))?
        .total();
    let item_key_count = match mode {
        ProtocolMode::P1 => 0,
        ProtocolMode::P2 => n as u64,
    };
    let expected = total
        .checked_add(item_key_count)
        .and_then(|k| k.checked_mul(key_len.bytes() as u64));
    if expected != Some(r.remaining() as u64) {
        return Err(StoreError::Secrets("key material length mismatch"));
    }
    let item_keys = keys(&mut r, item_key_count, key_len.bytes())?;
    let flat = keys(&mut r, total, key_len.bytes())?;
    r.finish()?;
    let secrets = SenderSecrets {
        mode,
        key_len,
        group_id,
        catalog_id,
        weights,
        item_keys,
        flat,
    };
    secrets.check()?;
    Ok(secrets)
}

/// Write the secrets file with owner-only permissions where supported.
pub fn write_secrets(dir: &Path, secrets: &SenderSecrets) -> Result<(), StoreError> {
    let path = secrets_path(dir);
    create_dir(path.parent().expect("has parent"))?;
    let mut options = fs::OpenOptions::new();
    options.write(true).create(true).truncate(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        options.mode(0o600);
    }
    let mut file = options.open(&path).map_err(|e| io_err(&path, e))?;
    std::io::Write::write_all(&mut file, &encode_secrets(secrets)).map_err(|e| io_err(&path, e))
}

/// Read secrets and check they belong to `bundle`.
pub fn read_secrets(dir: &Path, bundle: &PublishedBundle) -> Result<SenderSecrets, StoreError> {
    let secrets = decode_secrets(&read(&secrets_path(dir))?)?;
    let m = &bundle.manifest;
    if secrets.catalog_id != m.catalog_id
        || secrets.mode != m.mode
        || secrets.key_len != m.key_len
        || secrets.group_id != m.group_id
        || secrets.weights != m.weights()
    {
        return Err(StoreError::Secrets("secrets do not belong to this bundle"));
    }
    Ok(secrets)
}
