//! TCP transport: a threaded sender and a one-shot buyer.

use std::fs;
use std::io::Write;
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::group::GroupParams;
use crate::wire::{FramedStream, WireError};
use crate::wot::{run_session_receiver, run_session_sender, PublishedBundle, Purchase, PurchaseRequest, SenderSecrets, WotError};

pub const DEFAULT_IO_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Error)]
pub enum NetError {
    #[error("{context}: {message}")]
    Io { context: String, message: String },
    #[error(transparent)]
    Session(#[from] WotError),
}

fn io(context: impl Into<String>, e: std::io::Error) -> NetError {
    NetError::Io {
        context: context.into(),
        message: e.to_string(),
    }
}

/// Where billing lines go. Each line carries only a session ordinal and T.
pub type BillingSink = Arc<Mutex<dyn Write + Send>>;

#[derive(Clone)]
pub struct ServeOptions {
    /// Stop after this many connections have been handled.
    pub max_sessions: Option<u64>,
    pub io_timeout: Option<Duration>,
    pub billing: Option<BillingSink>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions {
            max_sessions: None,
            io_timeout: Some(DEFAULT_IO_TIMEOUT),
            billing: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ServeStats {
    pub completed: u64,
    pub failed: u64,
}

/// Short, id-free description of why a session ended early.
fn failure_kind(e: &WotError) -> &'static str {
    match e {
        WotError::Grammar { .. } => "grammar",
        WotError::InvalidQuery | WotError::TooManyPicks { .. } => "invalid query",
        WotError::EmptyBatch => "empty batch",
        WotError::UnknownItem(_) => "unknown item",
        WotError::ParameterMismatch(_) => "parameter mismatch",
        WotError::Peer { .. } => "peer aborted",
        WotError::Wire(WireError::Closed) | WotError::Wire(WireError::Incomplete) => "connection closed",
        WotError::Wire(_) => "wire error",
        _ => "internal error",
    }
}

fn handle(
    stream: TcpStream,
    ordinal: u64,
    bundle: &PublishedBundle,
    secrets: &SenderSecrets,
    params: &GroupParams,
    options: &ServeOptions,
) -> bool {
    let _ = stream.set_read_timeout(options.io_timeout);
    let _ = stream.set_write_timeout(options.io_timeout);
    let _ = stream.set_nodelay(true);
    let mut rng = ChaCha20Rng::from_entropy();
    let mut channel = FramedStream::new(stream);
    match run_session_sender(&mut channel, bundle, secrets, params, &mut rng) {
        Ok(outcome) => {
            let line = format!("session {ordinal}: billed T={}", outcome.billed);
            log::info!("{line}");
            if let Some(sink) = &options.billing {
                if let Ok(mut w) = sink.lock() {
                    let _ = writeln!(w, "{line}");
                }
            }
            true
        }
        Err(e) => {
            log::warn!("session {ordinal}: aborted ({})", failure_kind(&e));
            false
        }
    }
}

/// Accept connections on `listener`, one thread per session. Returns once
/// `max_sessions` connections have been handled, or never without a cap.
pub fn serve(
    listener: TcpListener,
    bundle: Arc<PublishedBundle>,
    secrets: Arc<SenderSecrets>,
    params: Arc<GroupParams>,
    options: ServeOptions,
) -> Result<ServeStats, NetError> {
    let mut workers: Vec<thread::JoinHandle<bool>> = Vec::new();
    let mut stats = ServeStats::default();
    let tally = |stats: &mut ServeStats, w: thread::JoinHandle<bool>| match w.join() {
        Ok(true) => stats.completed += 1,
        _ => stats.failed += 1,
    };
    let mut ordinal = 0u64;
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        ordinal += 1;
        let (bundle, secrets, params, opts) = (bundle.clone(), secrets.clone(), params.clone(), options.clone());
        let n = ordinal;
        workers.push(thread::spawn(move || handle(stream, n, &bundle, &secrets, &params, &opts)));
        if options.max_sessions.is_some_and(|max| ordinal >= max) {
            break;
        }
        let (done, running): (Vec<_>, Vec<_>) = workers.into_iter().partition(|w| w.is_finished());
        workers = running;
        for w in done {
            tally(&mut stats, w);
        }
    }
    for w in workers {
        tally(&mut stats, w);
    }
    Ok(stats)
}

/// Buy `request.item_ids` from `addr`. Plaintexts are returned in the
/// purchase; see [`write_purchase`] to store them.
pub fn buy<A: ToSocketAddrs, R: RngCore + CryptoRng>(
    addr: A,
    request: &PurchaseRequest,
    rng: &mut R,
) -> Result<Purchase, NetError> {
    let stream = TcpStream::connect(addr).map_err(|e| io("connect", e))?;
    let _ = stream.set_read_timeout(Some(DEFAULT_IO_TIMEOUT));
    let _ = stream.set_nodelay(true);
    let mut channel = FramedStream::new(stream);
    Ok(run_session_receiver(&mut channel, request, rng)?)
}

/// One file per purchased item, named by its id.
pub fn write_purchase(dir: &Path, purchase: &Purchase) -> Result<(), NetError> {
    fs::create_dir_all(dir).map_err(|e| io(dir.display().to_string(), e))?;
    for item in &purchase.output.items {
        let path = dir.join(&item.id);
        fs::write(&path, &item.plaintext).map_err(|e| io(path.display().to_string(), e))?;
    }
    Ok(())
}
