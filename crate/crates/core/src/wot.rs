//! Weighted oblivious transfer sessions.
//!
//! Publishing encrypts the catalog once for all buyers and lays the key
//! material out on the flat index space. A purchase is then a single
//! `T`-pick batch of 1-out-of-N transfers over that space, where `T` is the
//! total price of the chosen items:
//!
//! - [`ProtocolMode::P2`]: each item key `K_i` is XOR-split into `p_i`
//!   shares; the buyer needs all of them to rebuild `K_i`.
//! - [`ProtocolMode::P1`]: each item is wrapped in `p_i` AE layers under
//!   independent keys; the buyer needs every layer key.
//!
//! Both modes share one flat secret vector, so one base OT serves both.
//!
//! Session grammar, buyer on the left:
//!
//! ```text
//! HELLO          ->
//!                <- MANIFEST
//! CT_REQ*        ->
//!                <- CT_DATA*
//! OT_BATCH_QUERY ->
//!                <- OT_BATCH_RESP, DONE(T)
//! ```

use std::collections::{HashMap, HashSet};

use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::base_ot::{respond_batch, BatchReceiver, OtError, OtQuery, OtResponse, ResponsePair};
use crate::catalog::{
    ciphertext_digest, Catalog, CatalogError, FlatIndexMap, Manifest, ManifestEntry, ProtocolMode,
};
use crate::group::{setup_params, GroupError, GroupElement, GroupParams};
use crate::symcrypto::{
    combine_shares, decrypt, encrypt, layer_context, nested_decrypt, nested_encrypt, split_key,
    Ciphertext, KeyLength, KeyShareSet, SymError, SymKey,
};
use crate::util::CountingRng;
use crate::wire::{error_code, Channel, Hello, Message, WireError, WirePair, PROTOCOL_VERSION};

#[derive(Debug, Error)]
pub enum WotError {
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Crypto(#[from] SymError),
    #[error(transparent)]
    Ot(#[from] OtError),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("grammar: unexpected {got}")]
    Grammar { got: &'static str },
    #[error("peer reported error 0x{code:02x}: {text}")]
    Peer { code: u8, text: String },
    #[error("unknown item id {0:?}")]
    UnknownItem(String),
    #[error("empty selection")]
    EmptySelection,
    #[error("item {0:?} selected twice")]
    DuplicateChoice(String),
    #[error("ciphertext for item {0:?} does not match the manifest digest")]
    DigestMismatch(String),
    #[error("item {id:?} failed to decrypt: {source}")]
    ItemDecryption {
        id: String,
        #[source]
        source: SymError,
    },
    #[error("sender billed {got}, expected {expected}")]
    BilledMismatch { expected: u64, got: u64 },
    #[error("parameter mismatch: {0}")]
    ParameterMismatch(String),
    #[error("empty query batch")]
    EmptyBatch,
    #[error("query batch of {got} picks exceeds the {n} shares on offer")]
    TooManyPicks { got: usize, n: u64 },
    #[error("invalid query element")]
    InvalidQuery,
    #[error("bundle is inconsistent: {0}")]
    InconsistentBundle(&'static str),
}

/// Public output of [`publish`]: manifest plus one serialized ciphertext
/// per item, in catalog order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PublishedBundle {
    pub manifest: Manifest,
    pub ciphertexts: Vec<Vec<u8>>,
}

impl PublishedBundle {
    /// Every ciphertext matches its manifest digest and length.
    pub fn verify(&self) -> Result<(), WotError> {
        if self.ciphertexts.len() != self.manifest.entries.len() {
            return Err(WotError::InconsistentBundle("ciphertext count differs from manifest"));
        }
        for (i, ct) in self.ciphertexts.iter().enumerate() {
            if !self.manifest.verify(i, ct) {
                return Err(WotError::DigestMismatch(self.manifest.entries[i].id.clone()));
            }
        }
        Ok(())
    }

    pub fn ciphertext(&self, id: &str) -> Option<&[u8]> {
        self.manifest
            .index_of(id)
            .map(|i| self.ciphertexts[i].as_slice())
    }
}

/// The sender's key material.
#[derive(Clone, PartialEq, Eq)]
pub struct SenderSecrets {
    pub mode: ProtocolMode,
    pub key_len: KeyLength,
    pub group_id: String,
    pub catalog_id: String,
    pub weights: Vec<u64>,
    /// `K_i` per item (P2 only; empty for P1).
    pub item_keys: Vec<SymKey>,
    /// N secrets; position `offsets[i] + j` holds share (P2) or layer key
    /// (P1) `j` of item `i`.
    pub flat: Vec<SymKey>,
}

impl std::fmt::Debug for SenderSecrets {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SenderSecrets")
            .field("mode", &self.mode)
            .field("n", &self.weights.len())
            .field("flat", &self.flat.len())
            .finish_non_exhaustive()
    }
}

impl SenderSecrets {
    pub fn flat_index(&self) -> Result<FlatIndexMap, WotError> {
        Ok(FlatIndexMap::new(&self.weights)?)
    }

    /// Per-item share sets (P2).
    pub fn share_sets(&self) -> Result<Vec<KeyShareSet>, WotError> {
        let map = self.flat_index()?;
        Ok((0..self.weights.len())
            .map(|i| {
                let range = map.range_of(i).expect("item in range");
                KeyShareSet {
                    item: i,
                    shares: self.flat[range.start as usize..range.end as usize].to_vec(),
                }
            })
            .collect())
    }

    /// Structural checks, plus `⊕ shares_i = K_i` in P2.
    pub fn check(&self) -> Result<(), WotError> {
        let map = self.flat_index()?;
        if self.flat.len() as u64 != map.total() {
            return Err(WotError::InconsistentBundle("flat secret count differs from Σ weights"));
        }
        if self.flat.iter().any(|k| k.len() != self.key_len.bytes()) {
            return Err(WotError::InconsistentBundle("secret of wrong length"));
        }
        match self.mode {
            ProtocolMode::P1 => {
                if !self.item_keys.is_empty() {
                    return Err(WotError::InconsistentBundle("P1 secrets carry item keys"));
                }
            }
            ProtocolMode::P2 => {
                if self.item_keys.len() != self.weights.len() {
                    return Err(WotError::InconsistentBundle("P2 item key count differs from n"));
                }
                for set in self.share_sets()? {
                    if combine_shares(&set.shares)? != self.item_keys[set.item] {
                        return Err(WotError::InconsistentBundle("shares do not combine to item key"));
                    }
                }
            }
        }
        Ok(())
    }

    fn flat_bytes(&self) -> Vec<Vec<u8>> {
        self.flat.iter().map(|k| k.as_bytes().to_vec()).collect()
    }
}

/// Work done while publishing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PublishCounts {
    /// AE seal operations (one per layer in P1).
    pub encryptions: u64,
    pub key_generations: u64,
    /// RNG draws spent on random key shares.
    pub share_draws: u64,
    /// XOR folds absorbing an item key into its last share.
    pub xor_ops: u64,
    /// Length of the flat secret vector, i.e. the OT work per pick.
    pub flat_secrets: u64,
}

#[derive(Clone, Debug)]
pub struct Publication {
    pub bundle: PublishedBundle,
    pub secrets: SenderSecrets,
    pub counts: PublishCounts,
}

/// Associated data binding a ciphertext to its catalog and item.
pub fn item_context(catalog_id: &str, item_id: &str) -> Vec<u8> {
    format!("wot/v1|{catalog_id}|{item_id}").into_bytes()
}

pub fn publish<R: RngCore + CryptoRng>(
    catalog: &Catalog,
    mode: ProtocolMode,
    key_len: KeyLength,
    params: &GroupParams,
    rng: &mut R,
) -> Result<Publication, WotError> {
    let mut id_bytes = [0u8; 16];
    rng.fill_bytes(&mut id_bytes);
    let catalog_id = hex::encode(id_bytes);

    let mut counts = PublishCounts::default();
    let mut ciphertexts = Vec::with_capacity(catalog.len());
    let mut item_keys = Vec::new();
    let mut flat = Vec::with_capacity(catalog.total_weight() as usize);

    for (index, item) in catalog.items().iter().enumerate() {
        let ctx = item_context(&catalog_id, &item.id);
        let ct = match mode {
            ProtocolMode::P2 => {
                let key = SymKey::generate(key_len, rng);
                counts.key_generations += 1;
                let ct = encrypt(&key, &item.payload, &layer_context(&ctx, 0), rng)?;
                counts.encryptions += 1;
                let mut counting = CountingRng::new(&mut *rng);
                let set = split_key(index, &key, item.weight, &mut counting)?;
                counts.share_draws += counting.draws();
                counts.xor_ops += 1;
                flat.extend(set.shares);
                item_keys.push(key);
                ct
            }
            ProtocolMode::P1 => {
                let keys: Vec<SymKey> = (0..item.weight)
                    .map(|_| SymKey::generate(key_len, rng))
                    .collect();
                counts.key_generations += item.weight;
                let ct = nested_encrypt(&keys, &item.payload, &ctx, rng)?;
                counts.encryptions += keys.len() as u64;
                flat.extend(keys);
                ct
            }
        };
        ciphertexts.push(ct.to_bytes());
    }
    counts.flat_secrets = flat.len() as u64;

    let entries = catalog
        .items()
        .iter()
        .zip(&ciphertexts)
        .map(|(item, ct)| ManifestEntry {
            id: item.id.clone(),
            weight: item.weight,
            ciphertext_len: ct.len() as u64,
            digest: ciphertext_digest(ct),
        })
        .collect();
    let manifest = Manifest {
        mode,
        group_id: params.id().to_string(),
        key_len,
        catalog_id: catalog_id.clone(),
        entries,
    };
    let secrets = SenderSecrets {
        mode,
        key_len,
        group_id: params.id().to_string(),
        catalog_id,
        weights: catalog.weights(),
        item_keys,
        flat,
    };
    Ok(Publication {
        bundle: PublishedBundle {
            manifest,
            ciphertexts,
        },
        secrets,
        counts,
    })
}

/// The buyer's choice σ expanded onto the flat space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectionPlan {
    /// Chosen item indices, ascending.
    pub choices: Vec<usize>,
    /// Every share index of every chosen item, ascending.
    pub picks: Vec<u64>,
    /// T = Σ_{i ∈ σ} p_i.
    pub total: u64,
}

impl SelectionPlan {
    pub fn from_indices(map: &FlatIndexMap, indices: &[usize]) -> Result<Self, WotError> {
        if indices.is_empty() {
            return Err(WotError::EmptySelection);
        }
        let mut seen = HashSet::new();
        for &i in indices {
            if i >= map.items() {
                return Err(CatalogError::IndexOutOfRange {
                    index: i,
                    n: map.items(),
                }
                .into());
            }
            if !seen.insert(i) {
                return Err(CatalogError::DuplicateChoice(i).into());
            }
        }
        let mut choices = indices.to_vec();
        choices.sort_unstable();
        let picks: Vec<u64> = choices
            .iter()
            .flat_map(|&i| map.range_of(i).expect("checked above"))
            .collect();
        let total = picks.len() as u64;
        Ok(SelectionPlan {
            choices,
            picks,
            total,
        })
    }
}

pub fn plan_selection<S: AsRef<str>>(manifest: &Manifest, ids: &[S]) -> Result<SelectionPlan, WotError> {
    if ids.is_empty() {
        return Err(WotError::EmptySelection);
    }
    let mut indices = Vec::with_capacity(ids.len());
    let mut seen = HashSet::new();
    for id in ids {
        let id = id.as_ref();
        let index = manifest
            .index_of(id)
            .ok_or_else(|| WotError::UnknownItem(id.to_string()))?;
        if !seen.insert(index) {
            return Err(WotError::DuplicateChoice(id.to_string()));
        }
        indices.push(index);
    }
    SelectionPlan::from_indices(&manifest.flat_index()?, &indices)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    ToSender,
    ToReceiver,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TranscriptEvent {
    pub ordinal: u64,
    pub direction: Direction,
    pub message: &'static str,
}

/// Everything the sender observes in one session.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SessionTranscript {
    pub billed: u64,
    pub queries: Vec<GroupElement>,
    pub events: Vec<TranscriptEvent>,
}

impl SessionTranscript {
    fn record(&mut self, direction: Direction, msg: &Message) {
        let ordinal = self.events.len() as u64;
        self.events.push(TranscriptEvent {
            ordinal,
            direction,
            message: msg.name(),
        });
    }

    /// Flights of protocol payload: maximal same-direction runs of
    /// MANIFEST/CT_DATA, OT_BATCH_QUERY and OT_BATCH_RESP/DONE. Requests
    /// (HELLO, CT_REQ) carry nothing and are not counted.
    pub fn logical_rounds(&self) -> usize {
        let mut rounds = 0;
        let mut last = None;
        for event in &self.events {
            let carries = matches!(
                event.message,
                "MANIFEST" | "CT_DATA" | "OT_BATCH_QUERY" | "OT_BATCH_RESP" | "DONE"
            );
            if carries && last != Some(event.direction) {
                rounds += 1;
                last = Some(event.direction);
            }
        }
        rounds
    }
}

/// Sender-side answer to a query batch: checks the batch, then runs one
/// 1-out-of-N response per pick over the flat secrets. Returns the
/// responses and the billed total T.
pub fn answer_batch<R: RngCore + CryptoRng>(
    secrets: &SenderSecrets,
    params: &GroupParams,
    queries: &[OtQuery],
    rng: &mut R,
) -> Result<(Vec<OtResponse>, u64), WotError> {
    if queries.is_empty() {
        return Err(WotError::EmptyBatch);
    }
    let n = secrets.flat.len() as u64;
    if queries.len() as u64 > n {
        return Err(WotError::TooManyPicks {
            got: queries.len(),
            n,
        });
    }
    let responses = respond_batch(params, &secrets.flat_bytes(), queries, rng).map_err(|e| match e {
        OtError::InvalidQuery => WotError::InvalidQuery,
        other => other.into(),
    })?;
    Ok((responses, queries.len() as u64))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PurchasedItem {
    pub index: usize,
    pub id: String,
    pub plaintext: Vec<u8>,
}

/// What the buyer ends up with.
#[derive(Clone, Debug)]
pub struct ReceiverOutput {
    pub items: Vec<PurchasedItem>,
    pub total: u64,
    /// `(flat index, secret)` for every share the OT delivered.
    pub learned: Vec<(u64, SymKey)>,
    pub decryptions: usize,
    pub shares_combined: usize,
}

/// Receiver state between sending the query batch and reading responses.
#[derive(Debug)]
pub struct ReceiverSession {
    manifest: Manifest,
    ciphertexts: Vec<Vec<u8>>,
    plan: SelectionPlan,
    batch: BatchReceiver,
}

impl ReceiverSession {
    /// `ciphertexts` must already be verified against `manifest`.
    pub fn start<R: RngCore + CryptoRng>(
        manifest: &Manifest,
        ciphertexts: Vec<Vec<u8>>,
        params: &GroupParams,
        plan: SelectionPlan,
        rng: &mut R,
    ) -> Result<Self, WotError> {
        if ciphertexts.len() != manifest.entries.len() {
            return Err(WotError::InconsistentBundle("ciphertext count differs from manifest"));
        }
        let map = manifest.flat_index()?;
        let batch = BatchReceiver::new(params, map.total(), &plan.picks, rng)?;
        Ok(ReceiverSession {
            manifest: manifest.clone(),
            ciphertexts,
            plan,
            batch,
        })
    }

    pub fn queries(&self) -> &[OtQuery] {
        self.batch.queries()
    }

    pub fn plan(&self) -> &SelectionPlan {
        &self.plan
    }

    pub fn finish(self, params: &GroupParams, responses: &[OtResponse]) -> Result<ReceiverOutput, WotError> {
        let recovered = self.batch.recover(params, responses)?;
        let learned: HashMap<u64, SymKey> = self
            .plan
            .picks
            .iter()
            .copied()
            .zip(recovered.into_iter().map(SymKey::from_bytes))
            .collect();
        let map = self.manifest.flat_index()?;
        let mut items = Vec::with_capacity(self.plan.choices.len());
        let mut decryptions = 0;
        let mut shares_combined = 0;
        for &index in &self.plan.choices {
            let entry = &self.manifest.entries[index];
            let range = map.range_of(index).expect("planned item");
            let keys: Vec<SymKey> = range.map(|flat| learned[&flat].clone()).collect();
            let ctx = item_context(&self.manifest.catalog_id, &entry.id);
            let fail = |source| WotError::ItemDecryption {
                id: entry.id.clone(),
                source,
            };
            let ct = Ciphertext::from_bytes(&self.ciphertexts[index]).map_err(fail)?;
            let plaintext = match self.manifest.mode {
                ProtocolMode::P2 => {
                    let key = combine_shares(&keys).map_err(fail)?;
                    shares_combined += keys.len();
                    decrypt(&key, &ct, &layer_context(&ctx, 0)).map_err(fail)?
                }
                ProtocolMode::P1 => nested_decrypt(&keys, &ct, &ctx).map_err(fail)?,
            };
            decryptions += 1;
            items.push(PurchasedItem {
                index,
                id: entry.id.clone(),
                plaintext,
            });
        }
        let mut learned: Vec<(u64, SymKey)> = learned.into_iter().collect();
        learned.sort_by_key(|(flat, _)| *flat);
        Ok(ReceiverOutput {
            items,
            total: self.plan.total,
            learned,
            decryptions,
            shares_combined,
        })
    }
}

/// Run a whole purchase in process without a channel.
pub fn purchase_in_process<R: RngCore + CryptoRng>(
    publication: &Publication,
    params: &GroupParams,
    plan: SelectionPlan,
    rng: &mut R,
) -> Result<(ReceiverOutput, SessionTranscript), WotError> {
    let manifest = &publication.bundle.manifest;
    let session = ReceiverSession::start(manifest, publication.bundle.ciphertexts.clone(), params, plan, rng)?;
    let (responses, billed) = answer_batch(&publication.secrets, params, session.queries(), rng)?;
    let transcript = SessionTranscript {
        billed,
        queries: session.queries().iter().map(|q| q.y.clone()).collect(),
        events: Vec::new(),
    };
    let output = session.finish(params, &responses)?;
    Ok((output, transcript))
}

fn encode_responses(params: &GroupParams, key_len: KeyLength, responses: &[OtResponse]) -> Message {
    Message::OtBatchResp {
        width: params.element_width() as u16,
        secret_len: key_len.bytes() as u16,
        responses: responses
            .iter()
            .map(|r| {
                r.pairs
                    .iter()
                    .map(|p| WirePair {
                        a: params.encode(&p.a),
                        c: p.c.clone(),
                    })
                    .collect()
            })
            .collect(),
    }
}

/// Elements are wrapped unchecked here; the receiver checks membership of
/// the one element per pick it actually uses.
fn decode_responses(
    params: &GroupParams,
    width: u16,
    responses: Vec<Vec<WirePair>>,
) -> Result<Vec<OtResponse>, WotError> {
    if width as usize != params.element_width() {
        return Err(WotError::ParameterMismatch("response element width".into()));
    }
    Ok(responses
        .into_iter()
        .map(|pairs| OtResponse {
            pairs: pairs
                .into_iter()
                .map(|p| ResponsePair {
                    a: params.element_unchecked(num_bigint::BigUint::from_bytes_be(&p.a)),
                    c: p.c,
                })
                .collect(),
        })
        .collect())
}

#[derive(Clone, Debug)]
pub struct SenderOutcome {
    pub billed: u64,
    pub transcript: SessionTranscript,
}

struct SenderChannel<'a, C> {
    inner: &'a mut C,
    transcript: SessionTranscript,
}

impl<C: Channel> SenderChannel<'_, C> {
    fn send(&mut self, msg: &Message) -> Result<(), WotError> {
        self.transcript.record(Direction::ToReceiver, msg);
        Ok(self.inner.send(msg)?)
    }

    fn recv(&mut self) -> Result<Message, WotError> {
        let msg = self.inner.recv()?;
        self.transcript.record(Direction::ToSender, &msg);
        Ok(msg)
    }

    /// Report `err` to the peer (best effort) and return it.
    fn fail(&mut self, code: u8, text: &str, err: WotError) -> WotError {
        let _ = self.send(&Message::error(code, text));
        err
    }
}

fn hello_matches(hello: &Hello, manifest: &Manifest) -> Result<(), String> {
    if hello.version != PROTOCOL_VERSION {
        return Err(format!("protocol version {} not supported", hello.version));
    }
    if hello.mode.is_some_and(|m| m != manifest.mode) {
        return Err(format!("bundle mode is {}", manifest.mode));
    }
    if !hello.group_id.is_empty() && hello.group_id != manifest.group_id {
        return Err(format!("bundle group is {}", manifest.group_id));
    }
    if hello.key_bits.is_some_and(|b| b != manifest.key_len.bits()) {
        return Err(format!("bundle lambda is {}", manifest.key_len.bits()));
    }
    Ok(())
}

/// Drive one sender session to completion. On any deviation from the
/// grammar an ERROR frame is sent and the session ends; no OT response is
/// ever sent for a batch that failed validation.
pub fn run_session_sender<C: Channel, R: RngCore + CryptoRng>(
    channel: &mut C,
    bundle: &PublishedBundle,
    secrets: &SenderSecrets,
    params: &GroupParams,
    rng: &mut R,
) -> Result<SenderOutcome, WotError> {
    let mut ch = SenderChannel {
        inner: channel,
        transcript: SessionTranscript::default(),
    };
    let manifest = &bundle.manifest;

    match ch.recv()? {
        Message::Hello(hello) => {
            if let Err(text) = hello_matches(&hello, manifest) {
                return Err(ch.fail(
                    error_code::PARAMETER_MISMATCH,
                    &text,
                    WotError::ParameterMismatch(text.clone()),
                ));
            }
        }
        Message::Error { code, text } => return Err(WotError::Peer { code, text }),
        other => {
            return Err(ch.fail(error_code::GRAMMAR, "grammar", WotError::Grammar { got: other.name() }));
        }
    }
    ch.send(&Message::Manifest(manifest.clone()))?;

    loop {
        match ch.recv()? {
            Message::CtReq { id } => match bundle.ciphertext(&id) {
                Some(ct) => {
                    let msg = Message::CtData {
                        id,
                        ciphertext: ct.to_vec(),
                    };
                    ch.send(&msg)?;
                }
                None => {
                    return Err(ch.fail(error_code::UNKNOWN_ITEM, "unknown item", WotError::UnknownItem(id)));
                }
            },
            Message::OtBatchQuery { elements } => {
                let mut queries = Vec::with_capacity(elements.len());
                for bytes in &elements {
                    match params.decode(bytes) {
                        Ok(y) => queries.push(OtQuery { y }),
                        Err(_) => {
                            return Err(ch.fail(error_code::INVALID_QUERY, "invalid query", WotError::InvalidQuery));
                        }
                    }
                }
                let (responses, billed) = match answer_batch(secrets, params, &queries, rng) {
                    Ok(ok) => ok,
                    Err(e) => {
                        let (code, text) = match &e {
                            WotError::EmptyBatch => (error_code::EMPTY_BATCH, "empty batch"),
                            WotError::InvalidQuery | WotError::TooManyPicks { .. } => {
                                (error_code::INVALID_QUERY, "invalid query")
                            }
                            _ => (error_code::INTERNAL, "internal error"),
                        };
                        return Err(ch.fail(code, text, e));
                    }
                };
                let msg = encode_responses(params, secrets.key_len, &responses);
                if let Err(e) = crate::wire::encode_frame(&msg) {
                    return Err(ch.fail(error_code::INTERNAL, "response exceeds frame cap", e.into()));
                }
                ch.send(&msg)?;
                ch.send(&Message::Done {
                    billed: billed as u32,
                })?;
                ch.transcript.billed = billed;
                ch.transcript.queries = queries.into_iter().map(|q| q.y).collect();
                return Ok(SenderOutcome {
                    billed,
                    transcript: ch.transcript,
                });
            }
            Message::Error { code, text } => return Err(WotError::Peer { code, text }),
            other => {
                return Err(ch.fail(error_code::GRAMMAR, "grammar", WotError::Grammar { got: other.name() }));
            }
        }
    }
}

/// What the buyer asks for.
#[derive(Clone, Debug)]
pub struct PurchaseRequest {
    pub item_ids: Vec<String>,
    pub hello: Hello,
    /// Parameters to use; resolved from the manifest's preset name if absent.
    pub params: Option<GroupParams>,
    /// Ciphertexts obtained out of band, by item id.
    pub known_ciphertexts: HashMap<String, Vec<u8>>,
}

impl PurchaseRequest {
    pub fn new<S: Into<String>>(ids: impl IntoIterator<Item = S>) -> Self {
        PurchaseRequest {
            item_ids: ids.into_iter().map(Into::into).collect(),
            hello: Hello::any(),
            params: None,
            known_ciphertexts: HashMap::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Purchase {
    pub manifest: Manifest,
    /// All n ciphertexts, verified.
    pub ciphertexts: Vec<Vec<u8>>,
    pub output: ReceiverOutput,
    pub billed: u64,
    /// Sends and receives as seen from the buyer's side.
    pub events: Vec<TranscriptEvent>,
}

struct ReceiverChannel<'a, C> {
    inner: &'a mut C,
    events: Vec<TranscriptEvent>,
}

impl<C: Channel> ReceiverChannel<'_, C> {
    fn push(&mut self, direction: Direction, msg: &Message) {
        let ordinal = self.events.len() as u64;
        self.events.push(TranscriptEvent {
            ordinal,
            direction,
            message: msg.name(),
        });
    }

    fn send(&mut self, msg: &Message) -> Result<(), WotError> {
        self.push(Direction::ToSender, msg);
        Ok(self.inner.send(msg)?)
    }

    fn recv(&mut self) -> Result<Message, WotError> {
        let msg = self.inner.recv()?;
        self.push(Direction::ToReceiver, &msg);
        match msg {
            Message::Error { code, text } => Err(WotError::Peer { code, text }),
            other => Ok(other),
        }
    }

    fn fail(&mut self, code: u8, text: &str, err: WotError) -> WotError {
        let _ = self.send(&Message::error(code, text));
        err
    }
}

/// Buyer side of a session. Missing ciphertexts are fetched for every item
/// (never only the chosen ones, which would reveal σ) and digest-checked
/// before any OT message is sent.
pub fn run_session_receiver<C: Channel, R: RngCore + CryptoRng>(
    channel: &mut C,
    request: &PurchaseRequest,
    rng: &mut R,
) -> Result<Purchase, WotError> {
    let mut ch = ReceiverChannel {
        inner: channel,
        events: Vec::new(),
    };
    ch.send(&Message::Hello(request.hello.clone()))?;
    let manifest = match ch.recv()? {
        Message::Manifest(m) => m,
        other => {
            return Err(ch.fail(error_code::GRAMMAR, "grammar", WotError::Grammar { got: other.name() }));
        }
    };
    if let Err(text) = hello_matches(&request.hello, &manifest) {
        return Err(ch.fail(error_code::ABORTED, "aborted", WotError::ParameterMismatch(text)));
    }
    let plan = match plan_selection(&manifest, &request.item_ids) {
        Ok(plan) => plan,
        Err(e) => return Err(ch.fail(error_code::ABORTED, "aborted", e)),
    };
    let params = match &request.params {
        Some(p) if p.id() == manifest.group_id => p.clone(),
        Some(p) => {
            let text = format!("manifest group {} but configured {}", manifest.group_id, p.id());
            return Err(ch.fail(error_code::ABORTED, "aborted", WotError::ParameterMismatch(text)));
        }
        None => match setup_params(&manifest.group_id) {
            Ok(p) => p,
            Err(e) => return Err(ch.fail(error_code::ABORTED, "aborted", e.into())),
        },
    };

    let mut ciphertexts: Vec<Option<Vec<u8>>> = manifest
        .entries
        .iter()
        .map(|e| request.known_ciphertexts.get(&e.id).cloned())
        .collect();
    let missing: Vec<usize> = (0..ciphertexts.len()).filter(|&i| ciphertexts[i].is_none()).collect();
    for &i in &missing {
        ch.send(&Message::CtReq {
            id: manifest.entries[i].id.clone(),
        })?;
    }
    for &i in &missing {
        match ch.recv()? {
            Message::CtData { id, ciphertext } if id == manifest.entries[i].id => {
                ciphertexts[i] = Some(ciphertext);
            }
            other => {
                return Err(ch.fail(error_code::GRAMMAR, "grammar", WotError::Grammar { got: other.name() }));
            }
        }
    }
    let ciphertexts: Vec<Vec<u8>> = ciphertexts.into_iter().map(|c| c.expect("filled")).collect();
    for (i, ct) in ciphertexts.iter().enumerate() {
        if !manifest.verify(i, ct) {
            let id = manifest.entries[i].id.clone();
            return Err(ch.fail(error_code::ABORTED, "aborted", WotError::DigestMismatch(id)));
        }
    }

    let expected_total = plan.total;
    let session = ReceiverSession::start(&manifest, ciphertexts.clone(), &params, plan, rng)?;
    ch.send(&Message::OtBatchQuery {
        elements: session.queries().iter().map(|q| params.encode(&q.y)).collect(),
    })?;
    let responses = match ch.recv()? {
        Message::OtBatchResp { width, responses, .. } => decode_responses(&params, width, responses)?,
        other => {
            return Err(ch.fail(error_code::GRAMMAR, "grammar", WotError::Grammar { got: other.name() }));
        }
    };
    let billed = match ch.recv()? {
        Message::Done { billed } => billed as u64,
        other => return Err(WotError::Grammar { got: other.name() }),
    };
    if billed != expected_total {
        return Err(WotError::BilledMismatch {
            expected: expected_total,
            got: billed,
        });
    }
    let output = session.finish(&params, &responses)?;
    Ok(Purchase {
        manifest,
        ciphertexts,
        output,
        billed,
        events: ch.events,
    })
}
