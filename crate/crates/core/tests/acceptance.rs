//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any failed.

mod common;

use std::net::TcpListener;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use wot_core::auditor::{audit_prices, count_subsets, count_subsets_naive, Verdict, DEFAULT_MIN_AMBIGUITY};
use wot_core::base_ot::{ot_query, ot_recover, ot_respond};
use wot_core::catalog::{ciphertext_digest, load_catalog, Catalog, ProtocolMode};
use wot_core::group::{setup_params, GroupParams, PRESET_TEST_23};
use wot_core::harness::{
    check_publication, complexity_check, correctness_oracle, cross_index_trials, privacy_experiment, query_uniformity,
    HarnessError, PrivacyExperiment,
};
use wot_core::net::{buy, serve, ServeOptions};
use wot_core::store::{read_bundle, read_secrets, write_bundle, write_secrets};
use wot_core::symcrypto::KeyLength;
use wot_core::weights::{approx_reduce, gcd_reduce};
use wot_core::wire::{decode_frame, encode_frame};
use wot_core::wot::{plan_selection, publish, purchase_in_process, PurchaseRequest};

use common::{catalog_with_payload_sizes, check_grammar_run, client_message_strategy, message_strategy};

type Outcome = Result<String, String>;

fn p23() -> GroupParams {
    setup_params(PRESET_TEST_23).unwrap()
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn harness_err(e: HarnessError) -> String {
    e.to_string()
}

fn criterion_1_correctness() -> Outcome {
    let start = Instant::now();
    let params = p23();
    let mut rng = ChaCha20Rng::seed_from_u64(101);
    let mut sets = 0;
    let catalogs = 5;
    for c in 0..catalogs {
        let weights: Vec<u64> = (0..6).map(|_| rng.gen_range(1..=6)).collect();
        let sizes: Vec<usize> = (0..6).map(|_| rng.gen_range(0..=1024)).collect();
        let cat = catalog_with_payload_sizes(&weights, &sizes);
        for mode in [ProtocolMode::P1, ProtocolMode::P2] {
            let r = correctness_oracle(&cat, mode, &params, 1000 + c).map_err(harness_err)?;
            ensure(r.choice_sets == 63, format!("{} choice sets", r.choice_sets))?;
            ensure(r.failures.is_empty(), format!("{mode} {weights:?}: {:?}", r.failures.first()))?;
            ensure(r.unchosen_openings == 0, "unchosen item opened")?;
            sets += r.choice_sets;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), format!("took {elapsed:?}"))?;
    Ok(format!(
        "{sets} sessions over {catalogs} random n=6 catalogs, both modes, all exact, {:.1}s",
        elapsed.as_secs_f64()
    ))
}

fn criterion_2_receiver_privacy() -> Outcome {
    let params = p23();
    let mut exp = PrivacyExperiment::new(vec![1, 2, 3], vec![0, 1], vec![2]);
    exp.seed = 2;
    let r = privacy_experiment(&exp, &params).map_err(harness_err)?;
    ensure(r.sessions == 100_000, "session count")?;
    ensure(r.t_identical, "billed totals differ")?;
    ensure(r.passed(), format!("pooled p = {:.4}", r.pooled.p_value))?;

    let mut control = PrivacyExperiment::new(vec![1, 2, 3], vec![0, 1], vec![0, 1]);
    control.seed = 3;
    let c = privacy_experiment(&control, &params).map_err(harness_err)?;
    ensure(c.passed(), format!("control failed, p = {:.4}", c.pooled.p_value))?;

    let refused = privacy_experiment(&PrivacyExperiment::new(vec![1, 2, 3], vec![0], vec![2]), &params);
    ensure(matches!(refused, Err(HarnessError::UnequalTotals { .. })), "unequal totals not refused")?;
    Ok(format!(
        "M=10^5, T={} identical, pooled p={:.3}, TV={:.4}; control p={:.3}; unequal totals refused",
        r.total, r.pooled.p_value, r.tv_distance, c.pooled.p_value
    ))
}

fn criterion_3_nothing_extra() -> Outcome {
    let params = p23();
    let catalogs: [&[u64]; 6] = [&[1, 2, 3, 4], &[3, 3, 4], &[1, 1, 2, 2, 4], &[1; 8], &[2, 5, 3], &[1, 9]];
    let mut attempts = 0;
    let mut openings = 0;
    let mut sets = 0;
    for (c, weights) in catalogs.iter().enumerate() {
        let sizes = vec![32; weights.len()];
        let cat = catalog_with_payload_sizes(weights, &sizes);
        for mode in [ProtocolMode::P1, ProtocolMode::P2] {
            let publication = publish(
                &cat,
                mode,
                KeyLength::Bits128,
                &params,
                &mut ChaCha20Rng::seed_from_u64(300 + c as u64),
            )
            .map_err(|e| e.to_string())?;
            let r = check_publication(&cat, &publication, &params, 310 + c as u64).map_err(harness_err)?;
            ensure(r.failures.is_empty(), format!("{:?}", r.failures.first()))?;
            attempts += r.unchosen_attempts;
            openings += r.unchosen_openings;
            sets += r.choice_sets;
        }
    }
    ensure(openings == 0, format!("{openings} unchosen openings"))?;
    Ok(format!(
        "{sets} choice sets with N <= 10, {attempts} exhaustive decryption attempts on unchosen items, 0 successes"
    ))
}

fn criterion_4_complexity() -> Outcome {
    let params = p23();
    let mut rng = ChaCha20Rng::seed_from_u64(404);
    let mut sessions = 0;
    for c in 0..100 {
        let n = rng.gen_range(1..=8);
        let weights: Vec<u64> = (0..n).map(|_| rng.gen_range(1..=6)).collect();
        let cat = catalog_with_payload_sizes(&weights, &vec![20; n]);
        let k = rng.gen_range(1..=n);
        let mut choice: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = rng.gen_range(i..n);
            choice.swap(i, j);
        }
        choice.truncate(k);
        for mode in [ProtocolMode::P1, ProtocolMode::P2] {
            let r = complexity_check(&cat, mode, &params, &choice, 4000 + c).map_err(harness_err)?;
            ensure(r.passed(), format!("{mode} {weights:?}: {:?}", r.mismatches))?;
            ensure(r.rounds == 3, format!("{} rounds", r.rounds))?;
            sessions += 1;
        }
    }
    Ok(format!(
        "100 random catalogs x 2 modes ({sessions} sessions): counters exact, 3 rounds each"
    ))
}

fn criterion_5_weight_reduction() -> Outcome {
    let exact = gcd_reduce(&[100, 200, 300, 700]).map_err(|e| e.to_string())?;
    ensure(exact.q == 100 && exact.reduced == [1, 2, 3, 7], format!("gcd_reduce gave {exact:?}"))?;
    let approx = approx_reduce(&[105, 190, 307, 689], 100).map_err(|e| e.to_string())?;
    ensure(approx.reduced == [1, 2, 3, 7], format!("approx_reduce gave {:?}", approx.reduced))?;

    let params = p23();
    let mut flat = Vec::new();
    let mut billed = Vec::new();
    let mut exps = Vec::new();
    for weights in [&exact.original, &exact.reduced] {
        let cat = catalog_with_payload_sizes(weights, &[8, 8, 8, 8]);
        let p = publish(&cat, ProtocolMode::P2, KeyLength::Bits128, &params, &mut ChaCha20Rng::seed_from_u64(5))
            .map_err(|e| e.to_string())?;
        let plan = plan_selection(&p.bundle.manifest, &["item1", "item2"]).map_err(|e| e.to_string())?;
        let (_, transcript) = purchase_in_process(&p, &params, plan, &mut ChaCha20Rng::seed_from_u64(6))
            .map_err(|e| e.to_string())?;
        flat.push(p.counts.flat_secrets);
        billed.push(transcript.billed);
        exps.push(p.secrets.flat.len() as u64);
    }
    let q = exact.q;
    ensure(flat[0] == q * flat[1], format!("flat secrets {} vs {}", flat[0], flat[1]))?;
    ensure(billed[0] == q * billed[1], format!("billed {} vs {}", billed[0], billed[1]))?;
    ensure(exps[0] == q * exps[1], "per-pick response size")?;
    ensure(
        exact.original_work() == q * exact.reduced_work(),
        "report work ratio",
    )?;
    Ok(format!(
        "q=100 -> [1,2,3,7]; approx q=100 -> [1,2,3,7] (max rel. error {}); flat secrets {} -> {}, T {} -> {}",
        approx.max_relative_error, flat[0], flat[1], billed[0], billed[1]
    ))
}

fn criterion_6_auditor() -> Outcome {
    let powers = audit_prices(&[1, 2, 4, 8]).map_err(|e| e.to_string())?;
    ensure(powers.verdict(DEFAULT_MIN_AMBIGUITY) == Verdict::Unsafe, "[1,2,4,8] not UNSAFE")?;
    ensure(powers.fully_leaking == (1..=15).collect::<Vec<_>>(), "not all 15 totals unique")?;
    let flat = audit_prices(&[1, 1, 1, 1]).map_err(|e| e.to_string())?;
    ensure(flat.verdict(DEFAULT_MIN_AMBIGUITY) == Verdict::Ok, "[1,1,1,1] not OK")?;

    let mut rng = ChaCha20Rng::seed_from_u64(606);
    let mut checks = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(0..=16);
        let prices: Vec<u64> = (0..n).map(|_| rng.gen_range(1..=40)).collect();
        let sum: u64 = prices.iter().sum();
        let mut totals = vec![rng.gen_range(0..=sum + 1)];
        if n > 0 {
            let mask: u32 = rng.gen_range(0..1 << n);
            totals.push((0..n).filter(|i| mask & (1 << i) != 0).map(|i| prices[i]).sum());
        }
        for t in totals {
            let mitm = count_subsets(&prices, t, 0).map_err(|e| e.to_string())?.count;
            let naive = count_subsets_naive(&prices, t);
            ensure(mitm == naive, format!("{prices:?} T={t}: {mitm} vs {naive}"))?;
            checks += 1;
        }
    }
    Ok(format!(
        "[1,2,4,8] UNSAFE with 15/15 unique totals; [1,1,1,1] OK; MITM = naive on {checks} queries over 1000 vectors"
    ))
}

fn criterion_7_base_ot() -> Outcome {
    let params = p23();
    let mut rng = ChaCha20Rng::seed_from_u64(707);
    let mut recoveries = 0;
    for n in 1..=8u64 {
        for alpha in 0..n {
            let secrets: Vec<Vec<u8>> = (0..n).map(|_| (0..16).map(|_| rng.gen()).collect()).collect();
            let (query, secret) = ot_query(&params, n, alpha, &mut rng).map_err(|e| e.to_string())?;
            let response = ot_respond(&params, &secrets, &query, b"accept", &mut rng).map_err(|e| e.to_string())?;
            let got = ot_recover(&params, &response, &secret, b"accept").map_err(|e| e.to_string())?;
            ensure(got == secrets[alpha as usize], format!("N={n} alpha={alpha} recovered wrong secret"))?;
            recoveries += 1;
        }
    }
    let tv = query_uniformity(&params, 8, 100_000, 7).map_err(harness_err)?;
    ensure(tv < 0.02, format!("TV = {tv:.4}"))?;
    let cross = cross_index_trials(&params, 8, 100_000, 8);
    ensure(cross == 0, format!("{cross} cross-index recoveries"))?;
    Ok(format!(
        "{recoveries} exhaustive recoveries for N <= 8; query TV = {tv:.4} at 10^5; 0/100000 cross-index recoveries"
    ))
}

fn criterion_8_wire() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: 2000,
        ..Config::default()
    });
    runner
        .run(&message_strategy(), |msg| {
            let frame = encode_frame(&msg).unwrap();
            let (back, used) = decode_frame(&frame).unwrap();
            proptest::prop_assert_eq!(used, frame.len());
            proptest::prop_assert_eq!(back, msg);
            Ok(())
        })
        .map_err(|e| format!("codec: {e}"))?;

    let params = p23();
    let cat = catalog_with_payload_sizes(&[1, 2, 1], &[5, 6, 7]);
    let fuzz_pub = publish(&cat, ProtocolMode::P2, KeyLength::Bits128, &params, &mut ChaCha20Rng::seed_from_u64(8))
        .map_err(|e| e.to_string())?;
    let script = proptest::collection::vec(client_message_strategy(3), 0..6);
    let mut runner = TestRunner::new(Config {
        cases: 2000,
        ..Config::default()
    });
    runner
        .run(&(script, proptest::prelude::any::<u64>()), |(script, seed)| {
            proptest::prop_assert_eq!(check_grammar_run(&script, &fuzz_pub, &params, seed), Ok(()));
            Ok(())
        })
        .map_err(|e| format!("grammar: {e}"))?;

    let demo = end_to_end_demo()?;
    Ok(format!("2000 codec round-trips, 2000 grammar scripts without partial responses; {demo}"))
}

fn end_to_end_demo() -> Outcome {
    let catalog_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo/catalog");
    let catalog: Catalog = load_catalog(&catalog_dir).map_err(|e| e.to_string())?;
    ensure(catalog.len() == 4, "demo catalog size")?;
    let params = p23();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = publish(&catalog, ProtocolMode::P2, KeyLength::Bits128, &params, &mut ChaCha20Rng::seed_from_u64(88))
        .map_err(|e| e.to_string())?;
    write_bundle(dir.path(), &p.bundle).map_err(|e| e.to_string())?;
    write_secrets(dir.path(), &p.secrets).map_err(|e| e.to_string())?;
    let bundle = read_bundle(dir.path()).map_err(|e| e.to_string())?;
    let secrets = read_secrets(dir.path(), &bundle).map_err(|e| e.to_string())?;

    let listener = TcpListener::bind("127.0.0.1:0").map_err(|e| e.to_string())?;
    let addr = listener.local_addr().map_err(|e| e.to_string())?;
    let options = ServeOptions {
        max_sessions: Some(1),
        ..Default::default()
    };
    let (b, s, prm) = (Arc::new(bundle), Arc::new(secrets), Arc::new(params));
    let server = std::thread::spawn(move || serve(listener, b, s, prm, options));
    let ids = ["alpha", "charlie"];
    let purchase = buy(addr, &PurchaseRequest::new(ids), &mut ChaCha20Rng::seed_from_u64(89)).map_err(|e| e.to_string())?;
    let stats = server.join().map_err(|_| "server panicked")?.map_err(|e| e.to_string())?;
    ensure(stats.completed == 1, "server did not complete the session")?;

    for (entry, ct) in purchase.manifest.entries.iter().zip(&purchase.ciphertexts) {
        ensure(ciphertext_digest(ct) == entry.digest, format!("digest of {}", entry.id))?;
    }
    for (item, id) in purchase.output.items.iter().zip(ids) {
        let want = &catalog.items()[catalog.index_of(id).unwrap()].payload;
        ensure(item.id == id && &item.plaintext == want, format!("wrong plaintext for {id}"))?;
    }
    let expected: u64 = ids.iter().map(|id| catalog.items()[catalog.index_of(id).unwrap()].weight).sum();
    ensure(purchase.billed == expected, "billed total")?;
    Ok(format!("TCP demo bought {ids:?} for T={}, digests verified", purchase.billed))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("correctness", criterion_1_correctness),
        ("receiver privacy", criterion_2_receiver_privacy),
        ("receiver learns nothing extra", criterion_3_nothing_extra),
        ("complexity counters", criterion_4_complexity),
        ("weight reduction", criterion_5_weight_reduction),
        ("leakage auditor", criterion_6_auditor),
        ("base OT", criterion_7_base_ot),
        ("wire protocol", criterion_8_wire),
    ];
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} ({name}): PASS [{secs:.1}s] {detail}", i + 1),
            Err(reason) => {
                failed += 1;
                println!("criterion {} ({name}): FAIL [{secs:.1}s] {reason}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
