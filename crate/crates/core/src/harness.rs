//! Executable checks of the protocol's security and cost properties.
//!
//! Everything here is deterministic given a seed. Sessions within one
//! experiment run in parallel, each on its own ChaCha20 stream.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_traits::ToPrimitive;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::base_ot::{ot_query, ot_recover_at, ot_respond};
use crate::catalog::{price_of_weights, Catalog, CatalogError, ProtocolMode};
use crate::group::GroupParams;
use crate::symcrypto::{combine_shares, decrypt, layer_context, Ciphertext, KeyLength, SymKey};
use crate::wire::loopback_pair;
use crate::wot::{
    item_context, publish, purchase_in_process, run_session_receiver, run_session_sender, Publication,
    PublishCounts, PurchaseRequest, ReceiverOutput, ReceiverSession, SelectionPlan, WotError,
};

pub const DEFAULT_SESSIONS: usize = 100_000;
pub const DEFAULT_ALPHA: f64 = 0.01;
/// Largest subgroup order for which histograms of query elements are used.
pub const MAX_TEST_ORDER: u64 = 101;
pub const ORACLE_MAX_ITEMS: usize = 10;
/// Up to this many learned shares, every XOR combination is tried.
pub const EXHAUSTIVE_SHARE_LIMIT: usize = 12;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("choice sets have different totals ({a} vs {b}); the experiment would be vacuous")]
    UnequalTotals { a: u64, b: u64 },
    #[error("subgroup order {order} is too large for histogram tests (max {MAX_TEST_ORDER})")]
    GroupTooLarge { order: String },
    #[error("{n} items exceeds the oracle cap of {cap}")]
    TooManyItems { n: usize, cap: usize },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Wot(#[from] WotError),
}

/// Deterministic per-task RNG: stream `stream` of the generator keyed by
/// `seed` and `tag`.
pub fn task_rng(seed: u64, tag: u64, stream: u64) -> ChaCha20Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&tag.to_le_bytes());
    let mut rng = ChaCha20Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

fn small_order(params: &GroupParams) -> Result<u64, HarnessError> {
    params
        .order()
        .to_u64()
        .filter(|&q| q <= MAX_TEST_ORDER)
        .ok_or_else(|| HarnessError::GroupTooLarge {
            order: params.order().to_string(),
        })
}

/// Chi-square upper-tail probability.
fn chi_square_p(stat: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    let dist = ChiSquared::new(dof as f64).expect("positive dof");
    1.0 - dist.cdf(stat)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Two-sample homogeneity test on aligned category counts.
pub fn chi_square_homogeneity(a: &[u64], b: &[u64]) -> ChiSquare {
    assert_eq!(a.len(), b.len());
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    let n = (na + nb) as f64;
    let mut statistic = 0.0;
    let mut used = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        let col = (x + y) as f64;
        if col == 0.0 {
            continue;
        }
        used += 1;
        for (obs, row) in [(x, na), (y, nb)] {
            let expected = row as f64 * col / n;
            if expected > 0.0 {
                statistic += (obs as f64 - expected).powi(2) / expected;
            }
        }
    }
    let dof = used.saturating_sub(1);
    ChiSquare {
        statistic,
        dof,
        p_value: chi_square_p(statistic, dof),
    }
}

/// Goodness of fit against the uniform distribution over `counts.len()`
/// categories.
pub fn chi_square_uniform(counts: &[u64]) -> ChiSquare {
    let n: u64 = counts.iter().sum();
    let expected = n as f64 / counts.len() as f64;
    let statistic = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let dof = counts.len().saturating_sub(1);
    ChiSquare {
        statistic,
        dof,
        p_value: chi_square_p(statistic, dof),
    }
}

/// Total-variation distance between two empirical distributions.
pub fn total_variation(a: &[u64], b: &[u64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let na = a.iter().sum::<u64>().max(1) as f64;
    let nb = b.iter().sum::<u64>().max(1) as f64;
    0.5 * a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 / na - y as f64 / nb).abs())
        .sum::<f64>()
}

/// Total-variation distance of an empirical distribution from uniform.
pub fn total_variation_uniform(counts: &[u64]) -> f64 {
    let uniform = vec![1u64; counts.len()];
    total_variation(counts, &uniform)
}

/// The elements of the order-q subgroup, ascending, as integers.
fn subgroup_elements(params: &GroupParams) -> Vec<u64> {
    let p = params.modulus().to_u64().expect("small group");
    (1..p).filter(|&x| params.is_member(&num_bigint::BigUint::from(x))).collect()
}

fn histogram(elements: &[u64], values: impl IntoIterator<Item = u64>) -> Vec<u64> {
    let slot: BTreeMap<u64, usize> = elements.iter().enumerate().map(|(i, &e)| (e, i)).collect();
    let mut counts = vec![0u64; elements.len()];
    for v in values {
        counts[slot[&v]] += 1;
    }
    counts
}

#[derive(Clone, Debug)]
pub struct PrivacyExperiment {
    pub weights: Vec<u64>,
    pub choice_a: Vec<usize>,
    pub choice_b: Vec<usize>,
    pub sessions: usize,
    pub mode: ProtocolMode,
    pub alpha: f64,
    pub seed: u64,
}

impl PrivacyExperiment {
    pub fn new(weights: Vec<u64>, choice_a: Vec<usize>, choice_b: Vec<usize>) -> Self {
        PrivacyExperiment {
            weights,
            choice_a,
            choice_b,
            sessions: DEFAULT_SESSIONS,
            mode: ProtocolMode::P2,
            alpha: DEFAULT_ALPHA,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PrivacyReport {
    pub total: u64,
    pub sessions: usize,
    pub alpha: f64,
    /// Every session on both sides billed the same T.
    pub t_identical: bool,
    pub pooled: ChiSquare,
    /// One homogeneity test per pick position.
    pub per_position: Vec<ChiSquare>,
    pub tv_distance: f64,
    pub uniform_a: ChiSquare,
    pub uniform_b: ChiSquare,
}

impl PrivacyReport {
    pub fn passed(&self) -> bool {
        self.t_identical && self.pooled.p_value > self.alpha
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "sessions_per_side: {}", self.sessions);
        let _ = writeln!(out, "total: {}", self.total);
        let _ = writeln!(out, "t_identical: {}", self.t_identical);
        let _ = writeln!(
            out,
            "pooled_chi2: {:.4} dof={} p={:.4}",
            self.pooled.statistic, self.pooled.dof, self.pooled.p_value
        );
        for (i, c) in self.per_position.iter().enumerate() {
            let _ = writeln!(out, "position_{i}_p: {:.4}", c.p_value);
        }
        let _ = writeln!(out, "uniform_p_a: {:.4}", self.uniform_a.p_value);
        let _ = writeln!(out, "uniform_p_b: {:.4}", self.uniform_b.p_value);
        let _ = writeln!(out, "tv_distance: {:.5}", self.tv_distance);
        let _ = writeln!(out, "alpha: {}", self.alpha);
        let _ = writeln!(out, "verdict: {}", if self.passed() { "PASS" } else { "FAIL" });
        out
    }
}

/// Run `sessions` full purchases of `choice` and collect, per session,
/// the billed total and the query elements the sender saw.
fn observe(
    publication: &Publication,
    params: &GroupParams,
    choice: &[usize],
    sessions: usize,
    seed: u64,
    tag: u64,
) -> Result<Vec<(u64, Vec<u64>)>, HarnessError> {
    let map = publication.bundle.manifest.flat_index()?;
    let plan = SelectionPlan::from_indices(&map, choice)?;
    (0..sessions)
        .into_par_iter()
        .map(|i| {
            let mut rng = task_rng(seed, tag, i as u64);
            let (_, transcript) = purchase_in_process(publication, params, plan.clone(), &mut rng)?;
            let ys = transcript
                .queries
                .iter()
                .map(|y| y.value().to_u64().expect("small group"))
                .collect();
            Ok((transcript.billed, ys))
        })
        .collect()
}

/// Compare what the sender sees when the buyer picks `choice_a` versus
/// `choice_b` (equal totals required).
pub fn privacy_experiment(exp: &PrivacyExperiment, params: &GroupParams) -> Result<PrivacyReport, HarnessError> {
    let a = price_of_weights(&exp.weights, &exp.choice_a)?;
    let b = price_of_weights(&exp.weights, &exp.choice_b)?;
    if a != b {
        return Err(HarnessError::UnequalTotals { a, b });
    }
    small_order(params)?;
    let payloads = (0..exp.weights.len()).map(|i| vec![i as u8; 8]).collect();
    let catalog = Catalog::from_weights_and_payloads(&exp.weights, payloads)?;
    let publication = publish(
        &catalog,
        exp.mode,
        KeyLength::Bits128,
        params,
        &mut task_rng(exp.seed, 0, 0),
    )?;
    let side_a = observe(&publication, params, &exp.choice_a, exp.sessions, exp.seed, 1)?;
    let side_b = observe(&publication, params, &exp.choice_b, exp.sessions, exp.seed, 2)?;

    let t_identical = side_a.iter().chain(&side_b).all(|(t, ys)| *t == a && ys.len() as u64 == a);
    let elements = subgroup_elements(params);
    let pooled = |side: &[(u64, Vec<u64>)]| histogram(&elements, side.iter().flat_map(|(_, ys)| ys.iter().copied()));
    let (ha, hb) = (pooled(&side_a), pooled(&side_b));
    let per_position = (0..a as usize)
        .map(|pos| {
            let at = |side: &[(u64, Vec<u64>)]| histogram(&elements, side.iter().map(|(_, ys)| ys[pos]));
            chi_square_homogeneity(&at(&side_a), &at(&side_b))
        })
        .collect();
    Ok(PrivacyReport {
        total: a,
        sessions: exp.sessions,
        alpha: exp.alpha,
        t_identical,
        pooled: chi_square_homogeneity(&ha, &hb),
        per_position,
        tv_distance: total_variation(&ha, &hb),
        uniform_a: chi_square_uniform(&ha),
        uniform_b: chi_square_uniform(&hb),
    })
}

/// Try to open item `index` with nothing but `learned`. P2: every XOR
/// combination of learned shares when there are few of them, otherwise
/// each single share and the XOR of all. P1: depth-first search over
/// sequences of learned keys, layer by layer. Returns the number of
/// successful openings and attempts made.
pub fn try_unchosen(
    publication: &Publication,
    index: usize,
    learned: &[SymKey],
) -> (usize, usize) {
    let manifest = &publication.bundle.manifest;
    let entry = &manifest.entries[index];
    let ctx = item_context(&manifest.catalog_id, &entry.id);
    let Ok(ct) = Ciphertext::from_bytes(&publication.bundle.ciphertexts[index]) else {
        return (0, 0);
    };
    match manifest.mode {
        ProtocolMode::P2 => {
            let candidates: Vec<SymKey> = if learned.len() <= EXHAUSTIVE_SHARE_LIMIT {
                (1u32..1 << learned.len())
                    .map(|mask| {
                        let picked = (0..learned.len()).filter(|i| mask & (1 << i) != 0).map(|i| &learned[i]);
                        combine_shares(picked).expect("nonempty")
                    })
                    .collect()
            } else {
                let mut c = learned.to_vec();
                if let Ok(all) = combine_shares(learned) {
                    c.push(all);
                }
                c
            };
            let ad = layer_context(&ctx, 0);
            let hits = candidates.iter().filter(|k| decrypt(k, &ct, &ad).is_ok()).count();
            (hits, candidates.len())
        }
        ProtocolMode::P1 => {
            let mut attempts = 0;
            let hits = peel(&ct, &ctx, 0, entry.weight as usize, learned, &mut attempts);
            (hits, attempts)
        }
    }
}

fn peel(ct: &Ciphertext, ctx: &[u8], layer: usize, layers: usize, keys: &[SymKey], attempts: &mut usize) -> usize {
    let mut hits = 0;
    for key in keys {
        *attempts += 1;
        if let Ok(inner) = decrypt(key, ct, &layer_context(ctx, layer)) {
            if layer + 1 == layers {
                hits += 1;
            } else if let Ok(next) = Ciphertext::from_bytes(&inner) {
                hits += peel(&next, ctx, layer + 1, layers, keys, attempts);
            }
        }
    }
    hits
}

#[derive(Clone, Debug, Default)]
pub struct CorrectnessReport {
    pub choice_sets: usize,
    pub failures: Vec<String>,
    /// Openings of unchosen items from learned material (must be 0).
    pub unchosen_openings: usize,
    pub unchosen_attempts: usize,
}

impl CorrectnessReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.unchosen_openings == 0
    }
}

fn check_output(
    catalog: &Catalog,
    publication: &Publication,
    choice: &[usize],
    output: &ReceiverOutput,
    billed: u64,
    report: &mut CorrectnessReport,
) {
    let expected_total = price_of_weights(&catalog.weights(), choice).expect("valid choice");
    if billed != expected_total {
        report
            .failures
            .push(format!("{choice:?}: billed {billed}, expected {expected_total}"));
    }
    let got: Vec<(usize, &[u8])> = output.items.iter().map(|it| (it.index, it.plaintext.as_slice())).collect();
    let want: Vec<(usize, &[u8])> = choice.iter().map(|&i| (i, catalog.items()[i].payload.as_slice())).collect();
    if got != want {
        report.failures.push(format!("{choice:?}: wrong plaintexts"));
    }
    let learned: Vec<SymKey> = output.learned.iter().map(|(_, k)| k.clone()).collect();
    for j in (0..catalog.len()).filter(|j| !choice.contains(j)) {
        let (hits, attempts) = try_unchosen(publication, j, &learned);
        report.unchosen_openings += hits;
        report.unchosen_attempts += attempts;
    }
}

/// Purchase every nonempty choice set of an already published catalog.
pub fn check_publication(
    catalog: &Catalog,
    publication: &Publication,
    params: &GroupParams,
    seed: u64,
) -> Result<CorrectnessReport, HarnessError> {
    let n = catalog.len();
    if n > ORACLE_MAX_ITEMS {
        return Err(HarnessError::TooManyItems {
            n,
            cap: ORACLE_MAX_ITEMS,
        });
    }
    let map = publication.bundle.manifest.flat_index()?;
    let partial: Vec<CorrectnessReport> = (1u32..1 << n)
        .into_par_iter()
        .map(|mask| {
            let choice: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let mut report = CorrectnessReport {
                choice_sets: 1,
                ..Default::default()
            };
            let plan = SelectionPlan::from_indices(&map, &choice).expect("valid choice");
            let mut rng = task_rng(seed, 3, mask as u64);
            let session = ReceiverSession::start(
                &publication.bundle.manifest,
                publication.bundle.ciphertexts.clone(),
                params,
                plan,
                &mut rng,
            );
            let result = session.and_then(|s| {
                let (responses, billed) = crate::wot::answer_batch(&publication.secrets, params, s.queries(), &mut rng)?;
                Ok((s.finish(params, &responses)?, billed))
            });
            match result {
                Ok((output, billed)) => check_output(catalog, publication, &choice, &output, billed, &mut report),
                Err(e) => report.failures.push(format!("{choice:?}: {e}")),
            }
            report
        })
        .collect();
    Ok(partial.into_iter().fold(CorrectnessReport::default(), |mut acc, r| {
        acc.choice_sets += r.choice_sets;
        acc.failures.extend(r.failures);
        acc.unchosen_openings += r.unchosen_openings;
        acc.unchosen_attempts += r.unchosen_attempts;
        acc
    }))
}

/// Publish `catalog` and purchase every nonempty choice set.
pub fn correctness_oracle(
    catalog: &Catalog,
    mode: ProtocolMode,
    params: &GroupParams,
    seed: u64,
) -> Result<CorrectnessReport, HarnessError> {
    let publication = publish(catalog, mode, KeyLength::Bits128, params, &mut task_rng(seed, 4, 0))?;
    check_publication(catalog, &publication, params, seed)
}

#[derive(Clone, Debug)]
pub struct ComplexityReport {
    pub mode: ProtocolMode,
    pub n: usize,
    pub counts: PublishCounts,
    pub expected: PublishCounts,
    pub rounds: usize,
    pub k: usize,
    pub decryptions: usize,
    pub shares_combined: usize,
    pub expected_shares_combined: usize,
    pub mismatches: Vec<String>,
}

impl ComplexityReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Publish, run one purchase of `choice` over a loopback channel, and
/// compare the instrumented counters with their closed forms.
pub fn complexity_check(
    catalog: &Catalog,
    mode: ProtocolMode,
    params: &GroupParams,
    choice: &[usize],
    seed: u64,
) -> Result<ComplexityReport, HarnessError> {
    let publication = publish(catalog, mode, KeyLength::Bits128, params, &mut task_rng(seed, 5, 0))?;
    let n = catalog.len() as u64;
    let sum = catalog.total_weight();
    let expected = match mode {
        ProtocolMode::P2 => PublishCounts {
            encryptions: n,
            key_generations: n,
            share_draws: sum - n,
            xor_ops: n,
            flat_secrets: sum,
        },
        ProtocolMode::P1 => PublishCounts {
            encryptions: sum,
            key_generations: sum,
            share_draws: 0,
            xor_ops: 0,
            flat_secrets: sum,
        },
    };

    let ids: Vec<String> = choice.iter().map(|&i| catalog.items()[i].id.clone()).collect();
    let (mut client, mut server) = loopback_pair();
    let (outcome, purchase) = std::thread::scope(|s| {
        let sender = s.spawn(|| {
            run_session_sender(
                &mut server,
                &publication.bundle,
                &publication.secrets,
                params,
                &mut task_rng(seed, 5, 1),
            )
        });
        let mut request = PurchaseRequest::new(ids);
        request.params = Some(params.clone());
        let purchase = run_session_receiver(&mut client, &request, &mut task_rng(seed, 5, 2));
        drop(client);
        (sender.join().expect("sender thread"), purchase)
    });
    let outcome = outcome?;
    let purchase = purchase?;

    let k = choice.len();
    let expected_shares_combined = match mode {
        ProtocolMode::P2 => price_of_weights(&catalog.weights(), choice)? as usize,
        ProtocolMode::P1 => 0,
    };
    let rounds = outcome.transcript.logical_rounds();
    let out = &purchase.output;
    let mut mismatches = Vec::new();
    let mut expect = |what: &str, got: u64, want: u64| {
        if got != want {
            mismatches.push(format!("{what}: got {got}, expected {want}"));
        }
    };
    let c = publication.counts;
    expect("encryptions", c.encryptions, expected.encryptions);
    expect("key generations", c.key_generations, expected.key_generations);
    expect("share draws", c.share_draws, expected.share_draws);
    expect("xor ops", c.xor_ops, expected.xor_ops);
    expect("flat secrets", c.flat_secrets, expected.flat_secrets);
    expect("rounds", rounds as u64, 3);
    expect("decryptions", out.decryptions as u64, k as u64);
    expect("shares combined", out.shares_combined as u64, expected_shares_combined as u64);
    Ok(ComplexityReport {
        mode,
        n: catalog.len(),
        counts: c,
        expected,
        rounds,
        k,
        decryptions: out.decryptions,
        shares_combined: out.shares_combined,
        expected_shares_combined,
        mismatches,
    })
}

/// Empirical TV distance of single-pick query elements from uniform over
/// the subgroup, pooling `samples` queries with random choices in `0..n`.
pub fn query_uniformity(params: &GroupParams, n: u64, samples: usize, seed: u64) -> Result<f64, HarnessError> {
    small_order(params)?;
    let elements = subgroup_elements(params);
    let ys: Vec<u64> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = task_rng(seed, 6, i as u64);
            let alpha = rng.gen_range(0..n);
            let (q, _) = ot_query(params, n, alpha, &mut rng).expect("valid choice");
            q.y.value().to_u64().expect("small group")
        })
        .collect();
    Ok(total_variation_uniform(&histogram(&elements, ys)))
}

/// Semi-honest receiver trials: query for α, then use the honest secret
/// to unmask some β ≠ α. Returns how many trials recovered `s_β`.
pub fn cross_index_trials(params: &GroupParams, n: u64, trials: usize, seed: u64) -> usize {
    assert!(n >= 2);
    (0..trials)
        .into_par_iter()
        .filter(|&i| {
            let mut rng = task_rng(seed, 7, i as u64);
            let secrets: Vec<Vec<u8>> = (0..n)
                .map(|_| {
                    let mut s = vec![0u8; 16];
                    rng.fill_bytes(&mut s);
                    s
                })
                .collect();
            let alpha = rng.gen_range(0..n);
            let beta = (alpha + rng.gen_range(1..n)) % n;
            let (query, secret) = ot_query(params, n, alpha, &mut rng).expect("valid choice");
            let binding = (i as u64).to_be_bytes();
            let response = ot_respond(params, &secrets, &query, &binding, &mut rng).expect("valid query");
            ot_recover_at(params, &response, beta, &secret.r, &binding)
                .map(|guess| guess == secrets[beta as usize])
                .unwrap_or(false)
        })
        .count()
}
