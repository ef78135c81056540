//! Item encryption and key splitting.
//!
//! Items are sealed with AES-GCM (AES-128 for λ = 128, AES-256 for
//! λ = 256). The serialized ciphertext is `nonce(12) ‖ body ‖ tag(16)`,
//! and the caller-supplied context string is passed as associated data.
//!
//! Key-splitting mode XORs each item key into `p` shares; nested mode wraps
//! the item in `p` layers, `keys[0]` outermost.

use std::fmt;

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes128Gcm, Aes256Gcm, Nonce};
use rand::{CryptoRng, RngCore};
use thiserror::Error;

pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SymError {
    #[error("key length {0} bytes is not a supported AES-GCM key size")]
    InvalidKeyLength(usize),
    #[error("authentication failed")]
    Authentication,
    #[error("malformed ciphertext: {0}")]
    Malformed(&'static str),
    #[error("no layer keys supplied")]
    EmptyKeyList,
    #[error("cannot split a key into zero parts")]
    ZeroParts,
    #[error("no shares to combine")]
    EmptyShares,
    #[error("share {index} has length {got}, expected {expected}")]
    MismatchedShareLength {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("layer {layer} failed: {source}")]
    Layer {
        layer: usize,
        #[source]
        source: Box<SymError>,
    },
}

/// Security parameter λ.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum KeyLength {
    #[default]
    Bits128,
    Bits256,
}

impl KeyLength {
    pub fn bits(self) -> u16 {
        match self {
            KeyLength::Bits128 => 128,
            KeyLength::Bits256 => 256,
        }
    }

    pub fn bytes(self) -> usize {
        self.bits() as usize / 8
    }

    pub fn from_bits(bits: u16) -> Option<Self> {
        match bits {
            128 => Some(KeyLength::Bits128),
            256 => Some(KeyLength::Bits256),
            _ => None,
        }
    }
}

/// A symmetric key, or a key share (shares live in the same space).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SymKey(Vec<u8>);

impl fmt::Debug for SymKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SymKey({} bytes)", self.0.len())
    }
}

impl SymKey {
    pub fn from_bytes(bytes: impl Into<Vec<u8>>) -> Self {
        SymKey(bytes.into())
    }

    pub fn zero(len: usize) -> Self {
        SymKey(vec![0; len])
    }

    pub fn generate<R: RngCore + CryptoRng>(len: KeyLength, rng: &mut R) -> Self {
        let mut bytes = vec![0u8; len.bytes()];
        rng.fill_bytes(&mut bytes);
        SymKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn xor_in_place(&mut self, other: &SymKey) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a ^= b;
        }
    }
}

/// The `p` XOR shares of one item key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyShareSet {
    pub item: usize,
    pub shares: Vec<SymKey>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ciphertext {
    pub nonce: [u8; NONCE_LEN],
    /// Encrypted body followed by the 16-byte tag.
    pub sealed: Vec<u8>,
}

impl Ciphertext {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(NONCE_LEN + self.sealed.len());
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.sealed);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SymError> {
        if bytes.len() < NONCE_LEN + TAG_LEN {
            return Err(SymError::Malformed("shorter than nonce plus tag"));
        }
        let mut nonce = [0u8; NONCE_LEN];
        nonce.copy_from_slice(&bytes[..NONCE_LEN]);
        Ok(Ciphertext {
            nonce,
            sealed: bytes[NONCE_LEN..].to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        NONCE_LEN + self.sealed.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

fn seal(key: &[u8], nonce: &[u8; NONCE_LEN], payload: Payload<'_, '_>) -> Result<Vec<u8>, SymError> {
    let nonce = Nonce::from_slice(nonce);
    let out = match key.len() {
        16 => Aes128Gcm::new_from_slice(key)
            .map_err(|_| SymError::InvalidKeyLength(16))?
            .encrypt(nonce, payload),
        32 => Aes256Gcm::new_from_slice(key)
            .map_err(|_| SymError::InvalidKeyLength(32))?
            .encrypt(nonce, payload),
        other => return Err(SymError::InvalidKeyLength(other)),
    };
    // AES-GCM encryption only fails on absurd lengths (> 64 GiB).
    out.map_err(|_| SymError::Malformed("plaintext too long"))
}

fn open(key: &[u8], nonce: &[u8; NONCE_LEN], payload: Payload<'_, '_>) -> Result<Vec<u8>, SymError> {
    let nonce = Nonce::from_slice(nonce);
    let out = match key.len() {
        16 => Aes128Gcm::new_from_slice(key)
            .map_err(|_| SymError::InvalidKeyLength(16))?
            .decrypt(nonce, payload),
        32 => Aes256Gcm::new_from_slice(key)
            .map_err(|_| SymError::InvalidKeyLength(32))?
            .decrypt(nonce, payload),
        other => return Err(SymError::InvalidKeyLength(other)),
    };
    out.map_err(|_| SymError::Authentication)
}

/// Seal `plaintext` under `key` with a fresh random nonce; `context` is
/// authenticated but not encrypted.
pub fn encrypt<R: RngCore + CryptoRng>(
    key: &SymKey,
    plaintext: &[u8],
    context: &[u8],
    rng: &mut R,
) -> Result<Ciphertext, SymError> {
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let sealed = seal(
        key.as_bytes(),
        &nonce,
        Payload {
            msg: plaintext,
            aad: context,
        },
    )?;
    Ok(Ciphertext { nonce, sealed })
}

pub fn decrypt(key: &SymKey, ct: &Ciphertext, context: &[u8]) -> Result<Vec<u8>, SymError> {
    if ct.sealed.len() < TAG_LEN {
        return Err(SymError::Malformed("shorter than nonce plus tag"));
    }
    open(
        key.as_bytes(),
        &ct.nonce,
        Payload {
            msg: &ct.sealed,
            aad: context,
        },
    )
}

/// XOR-split `key` into `parts` shares. Draws exactly `parts - 1` random
/// shares from `rng`; the last share absorbs the key.
pub fn split_key<R: RngCore + CryptoRng>(
    item: usize,
    key: &SymKey,
    parts: u64,
    rng: &mut R,
) -> Result<KeyShareSet, SymError> {
    if parts == 0 {
        return Err(SymError::ZeroParts);
    }
    let mut shares = Vec::with_capacity(parts as usize);
    let mut last = key.clone();
    for _ in 1..parts {
        let mut share = vec![0u8; key.len()];
        rng.fill_bytes(&mut share);
        let share = SymKey(share);
        last.xor_in_place(&share);
        shares.push(share);
    }
    shares.push(last);
    Ok(KeyShareSet { item, shares })
}

/// XOR-fold a list of equal-length shares.
pub fn combine_shares<'a, I>(shares: I) -> Result<SymKey, SymError>
where
    I: IntoIterator<Item = &'a SymKey>,
{
    let mut iter = shares.into_iter();
    let first = iter.next().ok_or(SymError::EmptyShares)?;
    let mut acc = first.clone();
    for (i, share) in iter.enumerate() {
        if share.len() != acc.len() {
            return Err(SymError::MismatchedShareLength {
                index: i + 1,
                got: share.len(),
                expected: acc.len(),
            });
        }
        acc.xor_in_place(share);
    }
    Ok(acc)
}

/// Associated data for layer `layer` given a base context.
pub fn layer_context(base: &[u8], layer: usize) -> Vec<u8> {
    let mut ctx = base.to_vec();
    ctx.extend_from_slice(b"|layer=");
    ctx.extend_from_slice(layer.to_string().as_bytes());
    ctx
}

/// Wrap `plaintext` in one AE layer per key. `keys[p-1]` seals the innermost
/// layer and `keys[0]` the outermost.
pub fn nested_encrypt<R: RngCore + CryptoRng>(
    keys: &[SymKey],
    plaintext: &[u8],
    context: &[u8],
    rng: &mut R,
) -> Result<Ciphertext, SymError> {
    if keys.is_empty() {
        return Err(SymError::EmptyKeyList);
    }
    let mut current = plaintext.to_vec();
    let mut ct = None;
    for (layer, key) in keys.iter().enumerate().rev() {
        let sealed = encrypt(key, &current, &layer_context(context, layer), rng)?;
        current = sealed.to_bytes();
        ct = Some(sealed);
    }
    Ok(ct.expect("at least one layer"))
}

/// Peel layers with `keys[0]` first. Errors carry the failing layer index.
pub fn nested_decrypt(keys: &[SymKey], ct: &Ciphertext, context: &[u8]) -> Result<Vec<u8>, SymError> {
    if keys.is_empty() {
        return Err(SymError::EmptyKeyList);
    }
    let mut current = ct.clone();
    for (layer, key) in keys.iter().enumerate() {
        let wrap = |source| SymError::Layer {
            layer,
            source: Box::new(source),
        };
        let inner = decrypt(key, &current, &layer_context(context, layer)).map_err(wrap)?;
        if layer + 1 == keys.len() {
            return Ok(inner);
        }
        current = Ciphertext::from_bytes(&inner).map_err(wrap)?;
    }
    unreachable!("loop returns on the last layer")
}
