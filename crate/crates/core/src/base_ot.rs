//! 1-out-of-N oblivious transfer from DDH, and its T-fold batch.
//!
//! The receiver with choice `α` sends `y = g^r · h^α`. For every index `i`
//! the sender picks a fresh nonzero `k_i` and returns
//! `(a_i, c_i) = (g^{k_i}, s_i ⊕ H((y · h^{-i})^{k_i}))`. Only at `i = α`
//! does `y · h^{-i}` collapse to `g^r`, so only there can the receiver
//! compute the mask as `a_α^r`. Since `r` is uniform, `y` is uniform on
//! the subgroup whatever `α` is.
//!
//! Pads are bound to `session ‖ pick ordinal ‖ index`; the session id is
//! a hash of the whole query batch, which both sides can compute.
//!
//! On the tiny test groups indices congruent mod `q` share a mask, so the
//! flat space must stay below the subgroup order wherever sender privacy
//! is being measured.

use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::group::{kdf_pad, Exponent, GroupElement, GroupParams};
use crate::util::xor_into;

const SESSION_TAG: &[u8] = b"WOT-SESSION";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OtError {
    #[error("choice index {index} out of range (N = {n})")]
    ChoiceOutOfRange { index: u64, n: u64 },
    #[error("invalid query")]
    InvalidQuery,
    #[error("no secrets to transfer")]
    NoSecrets,
    #[error("secrets have unequal lengths")]
    UnequalSecrets,
    #[error("response has {got} pairs, expected {expected}")]
    WrongResponseSize { got: usize, expected: usize },
    #[error("batch has {got} responses, expected {expected}")]
    WrongBatchSize { got: usize, expected: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OtQuery {
    pub y: GroupElement,
}

/// Receiver-side secret state for one pick.
#[derive(Clone, Debug)]
pub struct ReceiverSecret {
    pub alpha: u64,
    pub r: Exponent,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResponsePair {
    pub a: GroupElement,
    pub c: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OtResponse {
    pub pairs: Vec<ResponsePair>,
}

impl OtResponse {
    /// Number of fresh sender exponents this response consumed.
    pub fn exponents_used(&self) -> usize {
        self.pairs.len()
    }
}

pub fn ot_query<R: RngCore + CryptoRng>(
    params: &GroupParams,
    n: u64,
    alpha: u64,
    rng: &mut R,
) -> Result<(OtQuery, ReceiverSecret), OtError> {
    let r = params.random_exponent(rng);
    let query = ot_query_with_exponent(params, n, alpha, &r)?;
    Ok((query, ReceiverSecret { alpha, r }))
}

/// Deterministic form of [`ot_query`] for a given exponent.
pub fn ot_query_with_exponent(
    params: &GroupParams,
    n: u64,
    alpha: u64,
    r: &Exponent,
) -> Result<OtQuery, OtError> {
    if alpha >= n {
        return Err(OtError::ChoiceOutOfRange { index: alpha, n });
    }
    let y = params.mul(&params.pow_g(r), &params.pow_h_u64(alpha));
    Ok(OtQuery { y })
}

fn index_binding(binding: &[u8], index: u64) -> Vec<u8> {
    let mut b = Vec::with_capacity(binding.len() + 8);
    b.extend_from_slice(binding);
    b.extend_from_slice(&index.to_be_bytes());
    b
}

fn nonzero_exponent<R: RngCore + CryptoRng>(params: &GroupParams, rng: &mut R) -> Exponent {
    loop {
        let k = params.random_exponent(rng);
        if !num_traits::Zero::is_zero(k.value()) {
            return k;
        }
    }
}

fn check_secrets(secrets: &[Vec<u8>]) -> Result<usize, OtError> {
    let first = secrets.first().ok_or(OtError::NoSecrets)?;
    if secrets.iter().any(|s| s.len() != first.len()) {
        return Err(OtError::UnequalSecrets);
    }
    Ok(first.len())
}

/// Answer one query over all `secrets`. `binding` should already identify
/// the session and pick; the index is appended per pair.
pub fn ot_respond<R: RngCore + CryptoRng>(
    params: &GroupParams,
    secrets: &[Vec<u8>],
    query: &OtQuery,
    binding: &[u8],
    rng: &mut R,
) -> Result<OtResponse, OtError> {
    let len = check_secrets(secrets)?;
    if !params.is_member(query.y.value()) {
        return Err(OtError::InvalidQuery);
    }
    let h_inv = params.h_inverse();
    let mut z = query.y.clone();
    let mut pairs = Vec::with_capacity(secrets.len());
    for (i, secret) in secrets.iter().enumerate() {
        let k = nonzero_exponent(params, rng);
        let a = params.pow_g(&k);
        let shared = params.pow(&z, &k);
        let mut c = kdf_pad(params, &shared, &index_binding(binding, i as u64), len);
        xor_into(&mut c, secret);
        pairs.push(ResponsePair { a, c });
        z = params.mul(&z, &h_inv);
    }
    Ok(OtResponse { pairs })
}

/// Unmask the chosen secret: `c_α ⊕ H(a_α^r)`.
pub fn ot_recover(
    params: &GroupParams,
    response: &OtResponse,
    secret: &ReceiverSecret,
    binding: &[u8],
) -> Result<Vec<u8>, OtError> {
    ot_recover_at(params, response, secret.alpha, &secret.r, binding)
}

/// Same unmasking at an arbitrary index; used by the honest path at `α` and
/// by tests that check every other index stays hidden.
pub fn ot_recover_at(
    params: &GroupParams,
    response: &OtResponse,
    index: u64,
    r: &Exponent,
    binding: &[u8],
) -> Result<Vec<u8>, OtError> {
    let n = response.pairs.len() as u64;
    let pair = response
        .pairs
        .get(index as usize)
        .ok_or(OtError::ChoiceOutOfRange { index, n })?;
    if !params.is_member(pair.a.value()) {
        return Err(OtError::InvalidQuery);
    }
    let shared = params.pow(&pair.a, r);
    let mut out = kdf_pad(params, &shared, &index_binding(binding, index), pair.c.len());
    xor_into(&mut out, &pair.c);
    Ok(out)
}

/// Session identifier both sides derive from the query batch.
pub fn session_id(params: &GroupParams, queries: &[OtQuery]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(SESSION_TAG);
    hasher.update(params.id().as_bytes());
    hasher.update((queries.len() as u64).to_be_bytes());
    for q in queries {
        hasher.update(params.encode(&q.y));
    }
    hasher.finalize().into()
}

pub fn pick_binding(session: &[u8; 32], ordinal: usize) -> Vec<u8> {
    let mut b = Vec::with_capacity(36);
    b.extend_from_slice(session);
    b.extend_from_slice(&(ordinal as u32).to_be_bytes());
    b
}

/// Receiver half of a batch: one independent 1-out-of-N query per pick.
#[derive(Debug)]
pub struct BatchReceiver {
    n: u64,
    secrets: Vec<ReceiverSecret>,
    queries: Vec<OtQuery>,
}

impl BatchReceiver {
    pub fn new<R: RngCore + CryptoRng>(
        params: &GroupParams,
        n: u64,
        picks: &[u64],
        rng: &mut R,
    ) -> Result<Self, OtError> {
        let mut secrets = Vec::with_capacity(picks.len());
        let mut queries = Vec::with_capacity(picks.len());
        for &alpha in picks {
            let (q, s) = ot_query(params, n, alpha, rng)?;
            queries.push(q);
            secrets.push(s);
        }
        Ok(BatchReceiver {
            n,
            secrets,
            queries,
        })
    }

    pub fn queries(&self) -> &[OtQuery] {
        &self.queries
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn recover(&self, params: &GroupParams, responses: &[OtResponse]) -> Result<Vec<Vec<u8>>, OtError> {
        if responses.len() != self.secrets.len() {
            return Err(OtError::WrongBatchSize {
                got: responses.len(),
                expected: self.secrets.len(),
            });
        }
        let session = session_id(params, &self.queries);
        self.secrets
            .iter()
            .zip(responses)
            .enumerate()
            .map(|(ordinal, (secret, response))| {
                if response.pairs.len() as u64 != self.n {
                    return Err(OtError::WrongResponseSize {
                        got: response.pairs.len(),
                        expected: self.n as usize,
                    });
                }
                ot_recover(params, response, secret, &pick_binding(&session, ordinal))
            })
            .collect()
    }
}

/// Sender half of a batch. Every query is membership-checked before any
/// response is computed; picks are answered in parallel, each with its
/// own RNG seeded serially from `rng`.
pub fn respond_batch<R: RngCore + CryptoRng>(
    params: &GroupParams,
    secrets: &[Vec<u8>],
    queries: &[OtQuery],
    rng: &mut R,
) -> Result<Vec<OtResponse>, OtError> {
    check_secrets(secrets)?;
    if queries.iter().any(|q| !params.is_member(q.y.value())) {
        return Err(OtError::InvalidQuery);
    }
    let session = session_id(params, queries);
    let seeds: Vec<[u8; 32]> = queries
        .iter()
        .map(|_| {
            let mut seed = [0u8; 32];
            rng.fill_bytes(&mut seed);
            seed
        })
        .collect();
    queries
        .par_iter()
        .zip(seeds)
        .enumerate()
        .map(|(ordinal, (query, seed))| {
            let mut pick_rng = ChaCha20Rng::from_seed(seed);
            ot_respond(params, secrets, query, &pick_binding(&session, ordinal), &mut pick_rng)
        })
        .collect()
}

/// What the sender sees of a batch: the query elements and their count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SenderView {
    pub queries: Vec<GroupElement>,
    pub count: usize,
}

#[derive(Clone, Debug)]
pub struct BatchOutcome {
    pub recovered: Vec<Vec<u8>>,
    pub sender_view: SenderView,
}

/// Run both halves of a T-fold batch in process.
pub fn ot_batch_run<R: RngCore + CryptoRng>(
    params: &GroupParams,
    secrets: &[Vec<u8>],
    picks: &[u64],
    rng: &mut R,
) -> Result<BatchOutcome, OtError> {
    let receiver = BatchReceiver::new(params, secrets.len() as u64, picks, rng)?;
    let responses = respond_batch(params, secrets, receiver.queries(), rng)?;
    let recovered = receiver.recover(params, &responses)?;
    let sender_view = SenderView {
        queries: receiver.queries().iter().map(|q| q.y.clone()).collect(),
        count: receiver.len(),
    };
    Ok(BatchOutcome {
        recovered,
        sender_view,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{setup_params, PRESET_RFC3526_2048, PRESET_TEST_23};
    use std::collections::HashSet;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    fn random_secrets(n: usize, rng: &mut ChaCha20Rng) -> Vec<Vec<u8>> {
        (0..n)
            .map(|_| {
                let mut s = vec![0u8; 16];
                rng.fill_bytes(&mut s);
                s
            })
            .collect()
    }

    #[test]
    fn worked_query_example() {
        // Known discrete log: h = g^3 = 8.
        let params = setup_params(PRESET_TEST_23).unwrap().with_known_h(8).unwrap();
        let q = ot_query_with_exponent(&params, 6, 2, &Exponent::from_u64(4)).unwrap();
        assert_eq!(q.y, params.element_from_u64(12).unwrap());
        let q0 = ot_query_with_exponent(&params, 6, 0, &Exponent::from_u64(4)).unwrap();
        assert_eq!(q0.y, params.pow_g(&Exponent::from_u64(4)));
        assert_eq!(
            ot_query_with_exponent(&params, 6, 6, &Exponent::from_u64(4)).unwrap_err(),
            OtError::ChoiceOutOfRange { index: 6, n: 6 }
        );
    }

    #[test]
    fn single_secret_always_recovered() {
        let params = setup_params(PRESET_TEST_23).unwrap();
        let mut rng = rng(3);
        let secrets = random_secrets(1, &mut rng);
        for _ in 0..50 {
            let (q, s) = ot_query(&params, 1, 0, &mut rng).unwrap();
            let resp = ot_respond(&params, &secrets, &q, b"b", &mut rng).unwrap();
            assert_eq!(ot_recover(&params, &resp, &s, b"b").unwrap(), secrets[0]);
        }
    }

    #[test]
    fn exhaustive_small_recovery() {
        let params = setup_params(PRESET_TEST_23).unwrap();
        let mut rng = rng(4);
        for n in 1..=8usize {
            let secrets = random_secrets(n, &mut rng);
            for alpha in 0..n as u64 {
                let (q, s) = ot_query(&params, n as u64, alpha, &mut rng).unwrap();
                let resp = ot_respond(&params, &secrets, &q, b"x", &mut rng).unwrap();
                assert_eq!(resp.exponents_used(), n);
                let got = ot_recover(&params, &resp, &s, b"x").unwrap();
                assert_eq!(got, secrets[alpha as usize]);
                for beta in 0..n as u64 {
                    if beta != alpha {
                        let guess = ot_recover_at(&params, &resp, beta, &s.r, b"x").unwrap();
                        assert_ne!(guess, secrets[beta as usize]);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_secret_round_trips() {
        let params = setup_params(PRESET_TEST_23).unwrap();
        let mut rng = rng(5);
        let secrets = vec![vec![0u8; 16]; 3];
        let (q, s) = ot_query(&params, 3, 1, &mut rng).unwrap();
        let resp = ot_respond(&params, &secrets, &q, b"", &mut rng).unwrap();
        assert_eq!(ot_recover(&params, &resp, &s, b"").unwrap(), vec![0u8; 16]);
    }

    #[test]
    fn non_member_query_rejected() {
        let params = setup_params(PRESET_TEST_23).unwrap();
        let mut rng = rng(6);
        let secrets = vec![vec![1u8; 16]];
        for bad in [0u32, 5, 23] {
            let forged = OtQuery {
                y: params.element_unchecked(bad.into()),
            };
            assert_eq!(
                ot_respond(&params, &secrets, &forged, b"", &mut rng).unwrap_err(),
                OtError::InvalidQuery
            );
            let good = OtQuery { y: params.g() };
            assert_eq!(
                respond_batch(&params, &secrets, &[good, forged], &mut rng).unwrap_err(),
                OtError::InvalidQuery
            );
        }
        assert_eq!(
            respond_batch(&params, &[], &[], &mut rng).unwrap_err(),
            OtError::NoSecrets
        );
        assert_eq!(
            respond_batch(&params, &[vec![1u8; 16], vec![0; 3]], &[], &mut rng).unwrap_err(),
            OtError::UnequalSecrets
        );
    }

    #[test]
    fn batch_full_and_empty() {
        let params = setup_params(PRESET_TEST_23).unwrap();
        let mut rng = rng(7);
        let secrets = random_secrets(6, &mut rng);
        let all: Vec<u64> = (0..6).collect();
        let out = ot_batch_run(&params, &secrets, &all, &mut rng).unwrap();
        assert_eq!(out.recovered, secrets);
        assert_eq!(out.sender_view.count, 6);

        let out = ot_batch_run(&params, &secrets, &[], &mut rng).unwrap();
        assert!(out.recovered.is_empty());
        assert_eq!(out.sender_view.count, 0);

        assert!(ot_batch_run(&params, &secrets, &[6], &mut rng).is_err());
    }

    #[test]
    fn batch_with_duplicate_picks() {
        let params = setup_params(PRESET_TEST_23).unwrap();
        let mut rng = rng(8);
        let secrets = random_secrets(4, &mut rng);
        let out = ot_batch_run(&params, &secrets, &[2, 2], &mut rng).unwrap();
        assert_eq!(out.recovered, vec![secrets[2].clone(), secrets[2].clone()]);
    }

    #[test]
    fn batch_size_mismatch_detected() {
        let params = setup_params(PRESET_TEST_23).unwrap();
        let mut rng = rng(9);
        let secrets = random_secrets(4, &mut rng);
        let receiver = BatchReceiver::new(&params, 4, &[0, 1], &mut rng).unwrap();
        let responses = respond_batch(&params, &secrets, receiver.queries(), &mut rng).unwrap();
        assert!(matches!(
            receiver.recover(&params, &responses[..1]),
            Err(OtError::WrongBatchSize { .. })
        ));
        let short = respond_batch(&params, &secrets[..3], receiver.queries(), &mut rng).unwrap();
        assert!(matches!(
            receiver.recover(&params, &short),
            Err(OtError::WrongResponseSize { .. })
        ));
    }

    #[test]
    fn exponents_are_fresh_across_picks() {
        // In the 2048-bit group a repeated exponent would show up as a
        // repeated g^k or repeated query element.
        let params = setup_params(PRESET_RFC3526_2048).unwrap();
        let mut rng = rng(10);
        let secrets = random_secrets(3, &mut rng);
        let receiver = BatchReceiver::new(&params, 3, &[0, 1, 2], &mut rng).unwrap();
        let responses = respond_batch(&params, &secrets, receiver.queries(), &mut rng).unwrap();
        let ys: HashSet<_> = receiver.queries().iter().map(|q| q.y.clone()).collect();
        assert_eq!(ys.len(), 3);
        let a_values: HashSet<_> = responses
            .iter()
            .flat_map(|r| r.pairs.iter().map(|p| p.a.clone()))
            .collect();
        assert_eq!(a_values.len(), 9);
        assert_eq!(receiver.recover(&params, &responses).unwrap(), secrets);
    }

    #[test]
    fn pads_depend_on_binding() {
        let params = setup_params(PRESET_TEST_23).unwrap();
        let mut rng = rng(11);
        let secrets = random_secrets(2, &mut rng);
        let (q, s) = ot_query(&params, 2, 0, &mut rng).unwrap();
        let resp = ot_respond(&params, &secrets, &q, b"session-a", &mut rng).unwrap();
        assert_ne!(ot_recover(&params, &resp, &s, b"session-b").unwrap(), secrets[0]);
    }
}
