#![allow(dead_code)]

use std::collections::VecDeque;

use proptest::prelude::*;
use wot_core::catalog::{Catalog, Manifest, ManifestEntry, ProtocolMode};
use wot_core::group::GroupParams;
use wot_core::symcrypto::KeyLength;
use wot_core::wire::{decode_frame, encode_frame, Channel, Hello, Message, WireError, WirePair, PROTOCOL_VERSION};
use wot_core::wot::{run_session_sender, Publication, WotError};

pub fn catalog_with_payload_sizes(weights: &[u64], sizes: &[usize]) -> Catalog {
    let payloads = sizes
        .iter()
        .enumerate()
        .map(|(i, &len)| (0..len).map(|j| (i * 31 + j * 7) as u8).collect())
        .collect();
    Catalog::from_weights_and_payloads(weights, payloads).unwrap()
}

/// A channel fed from a fixed script; every message still goes through the
/// frame codec. Receiving past the end of the script reports a closed peer.
#[derive(Default)]
pub struct ScriptChannel {
    pub incoming: VecDeque<Vec<u8>>,
    pub outgoing: Vec<Message>,
}

impl ScriptChannel {
    pub fn new(script: &[Message]) -> Self {
        ScriptChannel {
            incoming: script.iter().map(|m| encode_frame(m).unwrap()).collect(),
            outgoing: Vec::new(),
        }
    }
}

impl Channel for ScriptChannel {
    fn send(&mut self, msg: &Message) -> Result<(), WireError> {
        let frame = encode_frame(msg)?;
        self.outgoing.push(decode_frame(&frame)?.0);
        Ok(())
    }

    fn recv(&mut self) -> Result<Message, WireError> {
        let frame = self.incoming.pop_front().ok_or(WireError::Closed)?;
        Ok(decode_frame(&frame)?.0)
    }
}

fn id_strategy() -> impl Strategy<Value = String> {
    "[a-z0-9_.-]{1,12}".prop_filter("not dot names", |s| s != "." && s != "..")
}

fn manifest_strategy() -> impl Strategy<Value = Manifest> {
    (
        prop_oneof![Just(ProtocolMode::P1), Just(ProtocolMode::P2)],
        prop_oneof![Just(KeyLength::Bits128), Just(KeyLength::Bits256)],
        "[a-z0-9-]{0,20}",
        "[0-9a-f]{0,32}",
        prop::collection::btree_map(id_strategy(), (1u64..1000, any::<u64>(), any::<[u8; 32]>()), 1..6),
    )
        .prop_map(|(mode, key_len, group_id, catalog_id, entries)| Manifest {
            mode,
            key_len,
            group_id,
            catalog_id,
            entries: entries
                .into_iter()
                .map(|(id, (weight, ciphertext_len, digest))| ManifestEntry {
                    id,
                    weight,
                    ciphertext_len,
                    digest,
                })
                .collect(),
        })
}

pub fn message_strategy() -> impl Strategy<Value = Message> {
    prop_oneof![
        (
            any::<u16>(),
            prop::option::of(prop_oneof![Just(ProtocolMode::P1), Just(ProtocolMode::P2)]),
            "[a-z0-9-]{0,16}",
            prop::option::of(1u16..)
        )
            .prop_map(|(version, mode, group_id, key_bits)| Message::Hello(Hello {
                version,
                mode,
                group_id,
                key_bits
            })),
        manifest_strategy().prop_map(Message::Manifest),
        id_strategy().prop_map(|id| Message::CtReq { id }),
        (id_strategy(), prop::collection::vec(any::<u8>(), 0..200)).prop_map(|(id, ciphertext)| Message::CtData { id, ciphertext }),
        (1usize..40, 0usize..8).prop_flat_map(|(w, t)| {
            prop::collection::vec(prop::collection::vec(any::<u8>(), w), t).prop_map(|elements| Message::OtBatchQuery { elements })
        }),
        (1u16..8, 0u16..8, 0usize..4, 1usize..5).prop_flat_map(|(width, secret_len, t, n)| {
            let pair = (
                prop::collection::vec(any::<u8>(), width as usize),
                prop::collection::vec(any::<u8>(), secret_len as usize),
            )
                .prop_map(|(a, c)| WirePair { a, c });
            prop::collection::vec(prop::collection::vec(pair, n), t)
                .prop_map(move |responses| Message::OtBatchResp { width, secret_len, responses })
        }),
        any::<u32>().prop_map(|billed| Message::Done { billed }),
        (any::<u8>(), "[ -~]{0,40}").prop_map(|(code, text)| Message::Error { code, text }),
    ]
}

/// Buyer messages biased towards almost-valid sessions against a catalog
/// with ids `item0..item{n-1}`, over a group with one-byte elements.
pub fn client_message_strategy(n_items: usize) -> impl Strategy<Value = Message> {
    let n = n_items;
    prop_oneof![
        3 => Just(Message::Hello(Hello::any())),
        1 => (0u16..3).prop_map(|version| Message::Hello(Hello { version, ..Hello::any() })),
        3 => (0..n + 1).prop_map(|i| Message::CtReq { id: format!("item{i}") }),
        4 => prop::collection::vec(prop::collection::vec(any::<u8>(), 1), 0..8)
            .prop_map(|elements| Message::OtBatchQuery { elements }),
        2 => message_strategy(),
    ]
}

fn hello_ok(hello: &Hello, publication: &Publication) -> bool {
    let m = &publication.bundle.manifest;
    hello.version == PROTOCOL_VERSION
        && hello.mode.is_none_or(|x| x == m.mode)
        && (hello.group_id.is_empty() || hello.group_id == m.group_id)
        && hello.key_bits.is_none_or(|b| b == m.key_len.bits())
}

/// Run the sender against `script` and check the grammar contract: an
/// OT response is sent only after a valid prefix, is complete and is
/// followed by DONE(T); otherwise the last thing sent is an ERROR, or
/// nothing more when the script simply ran out.
pub fn check_grammar_run(
    script: &[Message],
    publication: &Publication,
    params: &GroupParams,
    seed: u64,
) -> Result<(), String> {
    use rand::SeedableRng;
    let mut channel = ScriptChannel::new(script);
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let result = run_session_sender(&mut channel, &publication.bundle, &publication.secrets, params, &mut rng);
    let sent = &channel.outgoing;
    let n_flat = publication.secrets.flat.len();

    // Expected outcome of a correct sender.
    let mut expect_query: Option<usize> = None;
    let mut expect_closed = false;
    let mut iter = script.iter();
    match iter.next() {
        Some(Message::Hello(h)) if hello_ok(h, publication) => loop {
            match iter.next() {
                Some(Message::CtReq { id }) if publication.bundle.ciphertext(id).is_some() => continue,
                Some(Message::OtBatchQuery { elements })
                    if !elements.is_empty()
                        && elements.len() <= n_flat
                        && elements.iter().all(|e| params.decode(e).is_ok()) =>
                {
                    expect_query = Some(elements.len());
                    break;
                }
                None => {
                    expect_closed = true;
                    break;
                }
                Some(_) => break,
            }
        },
        None => expect_closed = true,
        Some(_) => {}
    }

    let resp_pos = sent.iter().position(|m| matches!(m, Message::OtBatchResp { .. }));
    match (expect_query, resp_pos) {
        (Some(t), Some(pos)) => {
            let Message::OtBatchResp { responses, .. } = &sent[pos] else { unreachable!() };
            if responses.len() != t || responses.iter().any(|r| r.len() != n_flat) {
                return Err("partial OT response".into());
            }
            if sent.get(pos + 1) != Some(&Message::Done { billed: t as u32 }) || sent.len() != pos + 2 {
                return Err("OT response not followed by DONE(T)".into());
            }
            if result.is_err() {
                return Err("sender reported failure after a full response".into());
            }
        }
        (Some(_), None) => return Err("valid batch got no response".into()),
        (None, Some(_)) => return Err("OT response after an invalid prefix".into()),
        (None, None) => {
            let err = result.err().ok_or("sender succeeded without answering")?;
            if expect_closed {
                if !matches!(err, WotError::Wire(WireError::Closed)) {
                    return Err(format!("expected closed connection, got {err}"));
                }
            } else {
                let peer_error = matches!(err, WotError::Peer { .. });
                if !peer_error && !matches!(sent.last(), Some(Message::Error { .. })) {
                    return Err(format!("rejected session did not end with ERROR ({err})"));
                }
            }
        }
    }
    Ok(())
}
