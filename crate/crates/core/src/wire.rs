//! Framed wire protocol.
//!
//! Every frame is `len: u32 BE ‖ type: u8 ‖ payload`, where `len` counts the
//! type byte plus the payload and may not exceed 2^24. All integers are
//! big-endian; strings are `u16` length-prefixed UTF-8.
//!
//! | type | message          | payload                                                    |
//! |------|------------------|------------------------------------------------------------|
//! | 0x01 | HELLO            | version u16, mode u8 (0 = any), group str, λ u16 (0 = any) |
//! | 0x02 | MANIFEST         | manifest record (see [`encode_manifest`])                  |
//! | 0x03 | CT_REQ           | item id str                                                |
//! | 0x04 | CT_DATA          | item id str, ciphertext (u32 length-prefixed)              |
//! | 0x05 | OT_BATCH_QUERY   | T u32, then T elements of equal width                      |
//! | 0x06 | OT_BATCH_RESP    | T u32, N u32, width u16, secret len u16, T·N (a ‖ c)       |
//! | 0x07 | DONE             | billed T u32                                               |
//! | 0x7F | ERROR            | code u8, UTF-8 text                                        |

use std::io::{self, Read, Write};
use std::sync::mpsc;

use thiserror::Error;

use crate::catalog::{validate_id, Manifest, ManifestEntry, ProtocolMode};
use crate::symcrypto::KeyLength;

pub const PROTOCOL_VERSION: u16 = 1;
pub const MAX_FRAME_LEN: u32 = 1 << 24;
pub const FRAME_HEADER_LEN: usize = 5;

pub const TYPE_HELLO: u8 = 0x01;
pub const TYPE_MANIFEST: u8 = 0x02;
pub const TYPE_CT_REQ: u8 = 0x03;
pub const TYPE_CT_DATA: u8 = 0x04;
pub const TYPE_OT_BATCH_QUERY: u8 = 0x05;
pub const TYPE_OT_BATCH_RESP: u8 = 0x06;
pub const TYPE_DONE: u8 = 0x07;
pub const TYPE_ERROR: u8 = 0x7F;

/// Codes carried by ERROR frames.
pub mod error_code {
    pub const GRAMMAR: u8 = 0x01;
    pub const INVALID_QUERY: u8 = 0x02;
    pub const UNKNOWN_ITEM: u8 = 0x03;
    pub const PARAMETER_MISMATCH: u8 = 0x04;
    pub const EMPTY_BATCH: u8 = 0x05;
    pub const MALFORMED: u8 = 0x06;
    pub const ABORTED: u8 = 0x07;
    pub const INTERNAL: u8 = 0x08;
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("incomplete frame")]
    Incomplete,
    #[error("frame length {0} exceeds cap")]
    Oversize(u64),
    #[error("empty frame")]
    EmptyFrame,
    #[error("unknown message type 0x{0:02x}")]
    UnknownType(u8),
    #[error("malformed payload: {0}")]
    Malformed(&'static str),
    #[error("connection closed")]
    Closed,
    #[error("io: {0}")]
    Io(String),
}

impl From<io::Error> for WireError {
    fn from(e: io::Error) -> Self {
        match e.kind() {
            io::ErrorKind::UnexpectedEof => WireError::Closed,
            _ => WireError::Io(e.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Hello {
    pub version: u16,
    pub mode: Option<ProtocolMode>,
    /// Empty means "any".
    pub group_id: String,
    pub key_bits: Option<u16>,
}

impl Hello {
    pub fn any() -> Self {
        Hello {
            version: PROTOCOL_VERSION,
            mode: None,
            group_id: String::new(),
            key_bits: None,
        }
    }
}

/// One `(a_i, c_i)` pair with the element still encoded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WirePair {
    pub a: Vec<u8>,
    pub c: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    Hello(Hello),
    Manifest(Manifest),
    CtReq { id: String },
    CtData { id: String, ciphertext: Vec<u8> },
    OtBatchQuery { elements: Vec<Vec<u8>> },
    OtBatchResp {
        width: u16,
        secret_len: u16,
        /// `responses[t][i]` answers pick `t` at index `i`.
        responses: Vec<Vec<WirePair>>,
    },
    Done { billed: u32 },
    Error { code: u8, text: String },
}

impl Message {
    pub fn type_byte(&self) -> u8 {
        match self {
            Message::Hello(_) => TYPE_HELLO,
            Message::Manifest(_) => TYPE_MANIFEST,
            Message::CtReq { .. } => TYPE_CT_REQ,
            Message::CtData { .. } => TYPE_CT_DATA,
            Message::OtBatchQuery { .. } => TYPE_OT_BATCH_QUERY,
            Message::OtBatchResp { .. } => TYPE_OT_BATCH_RESP,
            Message::Done { .. } => TYPE_DONE,
            Message::Error { .. } => TYPE_ERROR,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Message::Hello(_) => "HELLO",
            Message::Manifest(_) => "MANIFEST",
            Message::CtReq { .. } => "CT_REQ",
            Message::CtData { .. } => "CT_DATA",
            Message::OtBatchQuery { .. } => "OT_BATCH_QUERY",
            Message::OtBatchResp { .. } => "OT_BATCH_RESP",
            Message::Done { .. } => "DONE",
            Message::Error { .. } => "ERROR",
        }
    }

    pub fn error(code: u8, text: impl Into<String>) -> Self {
        Message::Error {
            code,
            text: text.into(),
        }
    }
}

/// Append-only big-endian writer.
#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u16(&mut self, v: u16) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(v);
        self
    }

    /// `u16` length prefix. Panics past 65535 bytes; callers validate first.
    pub fn str16(&mut self, s: &str) -> &mut Self {
        let len = u16::try_from(s.len()).expect("string fits u16 prefix");
        self.u16(len).bytes(s.as_bytes())
    }

    pub fn bytes32(&mut self, v: &[u8]) -> &mut Self {
        let len = u32::try_from(v.len()).expect("bytes fit u32 prefix");
        self.u32(len).bytes(v)
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }
}

/// Bounds-checked big-endian reader.
pub struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len()
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() < n {
            return Err(WireError::Malformed("truncated field"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    pub fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn str16(&mut self) -> Result<String, WireError> {
        let len = self.u16()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| WireError::Malformed("invalid utf-8"))
    }

    pub fn bytes32(&mut self) -> Result<&'a [u8], WireError> {
        let len = self.u32()? as usize;
        self.take(len)
    }

    pub fn rest(&mut self) -> &'a [u8] {
        std::mem::take(&mut self.buf)
    }

    pub fn finish(&self) -> Result<(), WireError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(WireError::Malformed("trailing bytes"))
        }
    }
}

/// Manifest record: mode u8, λ u16, group str, catalog id str, n u32, then
/// n entries each prefixed with its own u32 length:
/// `id str ‖ weight u64 ‖ ciphertext length u64 ‖ digest[32]`.
pub fn encode_manifest(manifest: &Manifest) -> Vec<u8> {
    let mut w = Writer::new();
    w.u8(manifest.mode.code())
        .u16(manifest.key_len.bits())
        .str16(&manifest.group_id)
        .str16(&manifest.catalog_id)
        .u32(manifest.entries.len() as u32);
    for entry in &manifest.entries {
        let mut rec = Writer::new();
        rec.str16(&entry.id)
            .u64(entry.weight)
            .u64(entry.ciphertext_len)
            .bytes(&entry.digest);
        w.bytes32(&rec.into_inner());
    }
    w.into_inner()
}

pub fn decode_manifest(bytes: &[u8]) -> Result<Manifest, WireError> {
    let mut r = Reader::new(bytes);
    let manifest = read_manifest(&mut r)?;
    r.finish()?;
    Ok(manifest)
}

fn read_manifest(r: &mut Reader<'_>) -> Result<Manifest, WireError> {
    let mode = ProtocolMode::from_code(r.u8()?).ok_or(WireError::Malformed("unknown mode"))?;
    let key_len = KeyLength::from_bits(r.u16()?).ok_or(WireError::Malformed("unsupported key length"))?;
    let group_id = r.str16()?;
    let catalog_id = r.str16()?;
    let n = r.u32()? as usize;
    if n == 0 {
        return Err(WireError::Malformed("empty manifest"));
    }
    // Each entry needs at least 4 + 2 + 8 + 8 + 32 bytes.
    if n > r.remaining() / 54 {
        return Err(WireError::Malformed("entry count exceeds payload"));
    }
    let mut entries = Vec::with_capacity(n);
    let mut total: u64 = 0;
    for _ in 0..n {
        let mut rec = Reader::new(r.bytes32()?);
        let id = rec.str16()?;
        validate_id(&id).map_err(|_| WireError::Malformed("invalid item id"))?;
        let weight = rec.u64()?;
        if weight == 0 {
            return Err(WireError::Malformed("zero weight"));
        }
        total = total
            .checked_add(weight)
            .ok_or(WireError::Malformed("total weight overflows"))?;
        let ciphertext_len = rec.u64()?;
        let digest: [u8; 32] = rec.take(32)?.try_into().expect("32 bytes");
        rec.finish()?;
        if entries.iter().any(|e: &ManifestEntry| e.id == id) {
            return Err(WireError::Malformed("duplicate item id"));
        }
        entries.push(ManifestEntry {
            id,
            weight,
            ciphertext_len,
            digest,
        });
    }
    Ok(Manifest {
        mode,
        group_id,
        key_len,
        catalog_id,
        entries,
    })
}

fn encode_payload(msg: &Message) -> Result<Vec<u8>, WireError> {
    let mut w = Writer::new();
    match msg {
        Message::Hello(h) => {
            if h.group_id.len() > u16::MAX as usize {
                return Err(WireError::Malformed("group id too long"));
            }
            w.u16(h.version)
                .u8(h.mode.map_or(0, ProtocolMode::code))
                .str16(&h.group_id)
                .u16(h.key_bits.unwrap_or(0));
        }
        Message::Manifest(m) => {
            w.bytes(&encode_manifest(m));
        }
        Message::CtReq { id } => {
            if id.len() > u16::MAX as usize {
                return Err(WireError::Malformed("id too long"));
            }
            w.str16(id);
        }
        Message::CtData { id, ciphertext } => {
            if id.len() > u16::MAX as usize {
                return Err(WireError::Malformed("id too long"));
            }
            if ciphertext.len() > MAX_FRAME_LEN as usize {
                return Err(WireError::Oversize(ciphertext.len() as u64));
            }
            w.str16(id).bytes32(ciphertext);
        }
        Message::OtBatchQuery { elements } => {
            let width = elements.first().map_or(0, Vec::len);
            if elements.iter().any(|e| e.len() != width) || (!elements.is_empty() && width == 0) {
                return Err(WireError::Malformed("query elements of unequal width"));
            }
            check_size(4 + elements.len() as u64 * width as u64)?;
            w.u32(elements.len() as u32);
            for e in elements {
                w.bytes(e);
            }
        }
        Message::OtBatchResp {
            width,
            secret_len,
            responses,
        } => {
            let n = responses.first().map_or(0, Vec::len);
            let pair_len = *width as u64 + *secret_len as u64;
            check_size(12 + responses.len() as u64 * n as u64 * pair_len)?;
            w.u32(responses.len() as u32)
                .u32(n as u32)
                .u16(*width)
                .u16(*secret_len);
            for response in responses {
                if response.len() != n {
                    return Err(WireError::Malformed("responses of unequal size"));
                }
                for pair in response {
                    if pair.a.len() != *width as usize || pair.c.len() != *secret_len as usize {
                        return Err(WireError::Malformed("pair of wrong size"));
                    }
                    w.bytes(&pair.a).bytes(&pair.c);
                }
            }
        }
        Message::Done { billed } => {
            w.u32(*billed);
        }
        Message::Error { code, text } => {
            w.u8(*code).bytes(text.as_bytes());
        }
    }
    Ok(w.into_inner())
}

fn check_size(payload: u64) -> Result<(), WireError> {
    if payload + 1 > MAX_FRAME_LEN as u64 {
        Err(WireError::Oversize(payload + 1))
    } else {
        Ok(())
    }
}

fn decode_payload(ty: u8, payload: &[u8]) -> Result<Message, WireError> {
    let mut r = Reader::new(payload);
    let msg = match ty {
        TYPE_HELLO => {
            let version = r.u16()?;
            let mode = match r.u8()? {
                0 => None,
                code => Some(ProtocolMode::from_code(code).ok_or(WireError::Malformed("unknown mode"))?),
            };
            let group_id = r.str16()?;
            let key_bits = match r.u16()? {
                0 => None,
                bits => Some(bits),
            };
            Message::Hello(Hello {
                version,
                mode,
                group_id,
                key_bits,
            })
        }
        TYPE_MANIFEST => Message::Manifest(read_manifest(&mut r)?),
        TYPE_CT_REQ => Message::CtReq { id: r.str16()? },
        TYPE_CT_DATA => {
            let id = r.str16()?;
            let ciphertext = r.bytes32()?.to_vec();
            Message::CtData { id, ciphertext }
        }
        TYPE_OT_BATCH_QUERY => {
            let t = r.u32()? as usize;
            let body = r.rest();
            if t == 0 {
                if !body.is_empty() {
                    return Err(WireError::Malformed("trailing bytes"));
                }
                Message::OtBatchQuery { elements: vec![] }
            } else {
                if body.is_empty() || body.len() % t != 0 {
                    return Err(WireError::Malformed("query elements do not divide payload"));
                }
                let width = body.len() / t;
                Message::OtBatchQuery {
                    elements: body.chunks(width).map(<[u8]>::to_vec).collect(),
                }
            }
        }
        TYPE_OT_BATCH_RESP => {
            let t = r.u32()? as u64;
            let n = r.u32()? as u64;
            let width = r.u16()?;
            let secret_len = r.u16()?;
            let pair_len = width as u64 + secret_len as u64;
            if t * n > 0 && pair_len == 0 {
                return Err(WireError::Malformed("zero-width pairs"));
            }
            if t.checked_mul(n).and_then(|x| x.checked_mul(pair_len)) != Some(r.remaining() as u64) {
                return Err(WireError::Malformed("response size mismatch"));
            }
            let mut responses = Vec::with_capacity(t as usize);
            for _ in 0..t {
                let mut pairs = Vec::with_capacity(n as usize);
                for _ in 0..n {
                    let a = r.take(width as usize)?.to_vec();
                    let c = r.take(secret_len as usize)?.to_vec();
                    pairs.push(WirePair { a, c });
                }
                responses.push(pairs);
            }
            Message::OtBatchResp {
                width,
                secret_len,
                responses,
            }
        }
        TYPE_DONE => Message::Done { billed: r.u32()? },
        TYPE_ERROR => {
            let code = r.u8()?;
            let text = String::from_utf8_lossy(r.rest()).into_owned();
            Message::Error { code, text }
        }
        other => return Err(WireError::UnknownType(other)),
    };
    r.finish()?;
    Ok(msg)
}

pub fn encode_frame(msg: &Message) -> Result<Vec<u8>, WireError> {
    let payload = encode_payload(msg)?;
    let len = payload.len() as u64 + 1;
    if len > MAX_FRAME_LEN as u64 {
        return Err(WireError::Oversize(len));
    }
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + payload.len());
    out.extend_from_slice(&(len as u32).to_be_bytes());
    out.push(msg.type_byte());
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Validate a frame header; returns the declared length (type + payload).
pub fn check_header(header: &[u8; 4]) -> Result<u32, WireError> {
    let len = u32::from_be_bytes(*header);
    if len == 0 {
        return Err(WireError::EmptyFrame);
    }
    if len > MAX_FRAME_LEN {
        return Err(WireError::Oversize(len as u64));
    }
    Ok(len)
}

/// Decode one frame from the front of `bytes`, returning the message and
/// the number of bytes consumed.
pub fn decode_frame(bytes: &[u8]) -> Result<(Message, usize), WireError> {
    if bytes.len() < 4 {
        return Err(WireError::Incomplete);
    }
    let len = check_header(bytes[..4].try_into().expect("4 bytes"))? as usize;
    if bytes.len() < 4 + len {
        return Err(WireError::Incomplete);
    }
    let ty = bytes[4];
    let msg = decode_payload(ty, &bytes[5..4 + len])?;
    Ok((msg, 4 + len))
}

/// A reliable, ordered message pipe.
pub trait Channel {
    fn send(&mut self, msg: &Message) -> Result<(), WireError>;
    fn recv(&mut self) -> Result<Message, WireError>;
}

impl<C: Channel + ?Sized> Channel for &mut C {
    fn send(&mut self, msg: &Message) -> Result<(), WireError> {
        (**self).send(msg)
    }

    fn recv(&mut self) -> Result<Message, WireError> {
        (**self).recv()
    }
}

/// Frames over any byte stream.
pub struct FramedStream<S> {
    stream: S,
}

impl<S: Read + Write> FramedStream<S> {
    pub fn new(stream: S) -> Self {
        FramedStream { stream }
    }

    pub fn into_inner(self) -> S {
        self.stream
    }

    pub fn get_ref(&self) -> &S {
        &self.stream
    }
}

impl<S: Read + Write> Channel for FramedStream<S> {
    fn send(&mut self, msg: &Message) -> Result<(), WireError> {
        let frame = encode_frame(msg)?;
        self.stream.write_all(&frame)?;
        self.stream.flush()?;
        Ok(())
    }

    fn recv(&mut self) -> Result<Message, WireError> {
        let mut header = [0u8; 4];
        self.stream.read_exact(&mut header)?;
        // The length is checked before anything is allocated for the body.
        let len = check_header(&header)? as usize;
        let mut body = vec![0u8; len];
        self.stream.read_exact(&mut body).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => WireError::Incomplete,
            _ => WireError::Io(e.to_string()),
        })?;
        decode_payload(body[0], &body[1..])
    }
}

/// In-process channel endpoint. Messages still pass through the frame
/// codec so loopback sessions exercise the same bytes as TCP.
pub struct Loopback {
    tx: mpsc::Sender<Vec<u8>>,
    rx: mpsc::Receiver<Vec<u8>>,
}

pub fn loopback_pair() -> (Loopback, Loopback) {
    let (a_tx, b_rx) = mpsc::channel();
    let (b_tx, a_rx) = mpsc::channel();
    (
        Loopback { tx: a_tx, rx: a_rx },
        Loopback { tx: b_tx, rx: b_rx },
    )
}

impl Channel for Loopback {
    fn send(&mut self, msg: &Message) -> Result<(), WireError> {
        let frame = encode_frame(msg)?;
        self.tx.send(frame).map_err(|_| WireError::Closed)
    }

    fn recv(&mut self) -> Result<Message, WireError> {
        let frame = self.rx.recv().map_err(|_| WireError::Closed)?;
        let (msg, used) = decode_frame(&frame)?;
        debug_assert_eq!(used, frame.len());
        Ok(msg)
    }
}
