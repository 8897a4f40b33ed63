//! Exit criteria for the cache. Each test prints one PASS/FAIL line.
//!
//! Run with `cargo test -p dialogue-cache --test acceptance -- --nocapture`.

use std::collections::HashMap;
use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use dialogue_cache::harness::{
    extract_all_pairs, extract_pairs, parse_corpus, parse_corpus_str, prefetch_replay, read_log, replay, seed,
    synthetic_corpus, truncate_last_utterance, write_log, ReplayOptions, Split,
};
use dialogue_cache::{
    aggregate, expected_latency, CacheEngine, ComponentLatency, DecayWeights, DialogueHistory, EchoGenerator,
    Embedding, Encoder, EngineConfig, EntrySource, Error, NewEntry, Outcome, RankDistribution, ReferenceEncoder,
    RespondOptions, SimilarityProxyEvaluator, TableEvaluator, VectorStore,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn criterion(name: &str, limit: Option<Duration>, body: impl FnOnce()) {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(body));
    let elapsed = start.elapsed();
    let over = limit.is_some_and(|l| elapsed > l);
    match result {
        Ok(()) if !over => println!("ACCEPTANCE [PASS] {name} ({:.3}s)", elapsed.as_secs_f64()),
        Ok(()) => {
            println!(
                "ACCEPTANCE [FAIL] {name}: took {:.3}s, limit {:?}",
                elapsed.as_secs_f64(),
                limit.unwrap()
            );
            panic!("{name} exceeded its runtime limit");
        }
        Err(e) => {
            println!("ACCEPTANCE [FAIL] {name}");
            resume_unwind(e);
        }
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
    let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Embedding::from_f64_normalized(&v).unwrap()
}

/// Every similarity computed straight from the entries, then fully sorted.
fn brute_force(store: &VectorStore, q: &Embedding, k: usize) -> Vec<(u64, f64)> {
    let mut all: Vec<(u64, f64)> = store
        .entries()
        .into_iter()
        .map(|e| {
            let mut s = 0.0f64;
            for (a, b) in e.embedding.as_slice().iter().zip(q.as_slice()) {
                s += f64::from(*a) * f64::from(*b);
            }
            (e.id, s)
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

#[test]
fn latency_accounting_regression() {
    criterion("latency accounting reproduces 214 ms / 247 ms", None, || {
        // Candidate-rank percentages (1st..5th, miss) at lambda 0.5, threshold 0.9.
        let simcse = RankDistribution::new(vec![0.5651, 0.1552, 0.0887, 0.0475, 0.0313], 0.1122).unwrap();
        let l = expected_latency(&simcse, ComponentLatency::new(10.5, 1.0, 98.7).unwrap());
        assert!((l - 214.0).abs() <= 1.0, "SimCSE-class row gave {l}");

        // This row sums to 100.02% after rounding, so it is accepted at two-decimal rounding tolerance.
        let angle = RankDistribution::from_rounded_percentages(&[57.72, 15.73, 8.55, 4.99, 2.72], 10.31, 2).unwrap();
        let l = expected_latency(&angle, ComponentLatency::new(46.3, 3.3, 98.7).unwrap());
        assert!((l - 247.0).abs() <= 1.0, "AnglE-class row gave {l}");

        let single = RankDistribution::new(vec![1.0, 0.0, 0.0, 0.0, 0.0], 0.0).unwrap();
        let l = expected_latency(&single, ComponentLatency::new(10.5, 1.0, 98.7).unwrap());
        assert!((l - 110.2).abs() < 1e-9);
    });
}

#[test]
fn latency_accounting_all_table_rows() {
    criterion("latency accounting matches every reference lambda row", None, || {
        let simcse = ComponentLatency::new(10.5, 1.0, 98.7).unwrap();
        let angle = ComponentLatency::new(46.3, 3.3, 98.7).unwrap();
        let rows: [(&[f64; 5], f64, ComponentLatency, f64); 8] = [
            (&[54.35, 16.17, 9.01, 4.82, 3.31], 12.34, simcse, 220.0),
            (&[56.51, 15.52, 8.87, 4.75, 3.13], 11.22, simcse, 214.0),
            (&[56.84, 14.70, 7.97, 4.99, 3.26], 12.24, simcse, 216.0),
            (&[56.38, 13.86, 7.92, 4.73, 3.44], 13.66, simcse, 221.0),
            (&[55.40, 16.75, 9.35, 4.26, 3.18], 11.07, angle, 252.0),
            (&[57.72, 15.73, 8.55, 4.99, 2.72], 10.31, angle, 247.0),
            (&[58.16, 15.06, 7.52, 4.76, 3.18], 11.32, angle, 249.0),
            (&[57.64, 13.95, 7.46, 4.75, 3.49], 12.72, angle, 254.0),
        ];
        for (ranks, miss, comps, want) in rows {
            let d = RankDistribution::from_rounded_percentages(ranks, miss, 2).unwrap();
            let got = expected_latency(&d, comps);
            assert!((got - want).abs() <= 1.0, "{ranks:?}: got {got}, want {want}");
        }
    });
}

#[test]
fn index_oracle_equivalence() {
    criterion(
        "index top-5 equals brute-force sort (1000 x dim 32, 100 queries)",
        Some(Duration::from_secs(5)),
        || {
            let mut rng = ChaCha8Rng::seed_from_u64(20240601);
            let store = VectorStore::new(32, 0.5, "acceptance").unwrap();
            let mut planted = Vec::new();
            for i in 0..1000 {
                // Every 100th entry repeats an earlier vector bit for bit to exercise tie-breaking.
                let e = if i % 100 == 50 {
                    let src: &Embedding = &planted[rng.gen_range(0..planted.len())];
                    src.clone()
                } else {
                    random_unit(&mut rng, 32)
                };
                planted.push(e.clone());
                store
                    .append(NewEntry::new(e, format!("r{i}"), EntrySource::Seeded))
                    .unwrap();
            }
            let mut ties_seen = 0;
            for qi in 0..100 {
                let q = if qi % 4 == 0 {
                    planted[(qi * 37 + 50) % 1000].clone()
                } else {
                    random_unit(&mut rng, 32)
                };
                let got: Vec<(u64, f64)> = store
                    .search(&q, 5)
                    .unwrap()
                    .iter()
                    .enumerate()
                    .map(|(i, h)| {
                        assert_eq!(h.rank, i + 1);
                        (h.entry_id, h.similarity)
                    })
                    .collect();
                let want = brute_force(&store, &q, 5);
                assert_eq!(got, want, "query {qi}");
                ties_seen += got.windows(2).filter(|w| w[0].1 == w[1].1).count();
            }
            assert!(ties_seen > 0, "the query set never exercised a tie");
        },
    );
}

#[test]
fn decay_weight_math() {
    criterion(
        "decay weights: sum, monotonicity, uniformity, saturation",
        Some(Duration::from_secs(1)),
        || {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            for _ in 0..5000 {
                let n = rng.gen_range(1..=50);
                let lambda = if rng.gen_bool(0.1) {
                    0.0
                } else {
                    rng.gen_range(0.0..=50.0)
                };
                let d = DecayWeights::new(n, lambda).unwrap();
                let w = d.weights();
                assert_eq!(w.len(), n);
                let sum: f64 = w.iter().sum();
                assert!((sum - 1.0).abs() <= 1e-9, "n={n} lambda={lambda} sum={sum}");
                // Positivity and strict ordering are checked on the log weights, which are exact
                // even where the linear weights underflow f64 (lambda * (n - 1) > ~745).
                assert!(d.log_weights().iter().all(|lw| lw.is_finite()));
                if lambda > 0.0 {
                    assert!(
                        d.log_weights().windows(2).all(|p| p[0] > p[1]),
                        "n={n} lambda={lambda} not strictly decreasing"
                    );
                    assert!(w.windows(2).all(|p| p[0] >= p[1]));
                    for p in w.windows(2) {
                        if p[1] >= f64::MIN_POSITIVE {
                            assert!(p[0] > p[1]);
                        }
                    }
                } else {
                    assert!(w.iter().all(|&x| (x - 1.0 / n as f64).abs() <= 1e-15));
                }
            }
            let w = DecayWeights::new(5, 50.0).unwrap();
            assert!(w.weights()[0] > 1.0 - 1e-9);
        },
    );
}

#[test]
fn engine_state_machine() {
    criterion(
        "engine laws over 1000 randomized scenarios",
        Some(Duration::from_secs(5)),
        || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let encoder: Arc<dyn Encoder> = Arc::new(ReferenceEncoder::new(32, 5).unwrap());
            let score_levels = [0.0, 0.3, 0.5, 0.7, 0.8, 0.9, 0.95, 1.0];
            let mut equal_to_threshold_seen = 0;
            for scenario in 0..1000 {
                let k = rng.gen_range(1..=8);
                let threshold = score_levels[rng.gen_range(0..score_levels.len())];
                let store = Arc::new(VectorStore::new(32, 0.5, encoder.descriptor().id()).unwrap());
                let mut scores: HashMap<String, f64> = HashMap::new();
                let mut table = TableEvaluator::new(0.0);
                let seeded = rng.gen_range(0..12);
                let mut histories = Vec::new();
                for i in 0..seeded {
                    let h = DialogueHistory::from_texts([format!(
                        "topic{} word{}",
                        rng.gen_range(0..4),
                        rng.gen_range(0..6)
                    )])
                    .unwrap();
                    let resp = format!("s{scenario}-r{i}");
                    let s = score_levels[rng.gen_range(0..score_levels.len())];
                    scores.insert(resp.clone(), s);
                    table = table.with_response_score(&resp, s);
                    store
                        .append(NewEntry::new(
                            aggregate(&h, 0.5, encoder.as_ref()).unwrap(),
                            resp,
                            EntrySource::Seeded,
                        ))
                        .unwrap();
                    histories.push(h);
                }
                let eval = Arc::new(table);
                let generator = Arc::new(EchoGenerator::with_template("gen {last}"));
                let config = EngineConfig::new(0.5, k, threshold, "", "").unwrap();
                let engine =
                    CacheEngine::new(config, store.clone(), encoder.clone(), eval.clone(), generator.clone()).unwrap();

                for _ in 0..rng.gen_range(1..=4) {
                    let h = if !histories.is_empty() && rng.gen_bool(0.5) {
                        histories[rng.gen_range(0..histories.len())].clone()
                    } else {
                        DialogueHistory::from_texts([format!(
                            "topic{} other{}",
                            rng.gen_range(0..4),
                            rng.gen_range(0..6)
                        )])
                        .unwrap()
                    };
                    let size_before = store.len();
                    let calls_before = eval.call_count();
                    let gens_before = generator.call_count();

                    // Independent expectation: search, then first strictly-passing score.
                    let q = aggregate(&h, 0.5, encoder.as_ref()).unwrap();
                    let hits = store.search(&q, k).unwrap();
                    let cand_scores: Vec<f64> = hits
                        .iter()
                        .map(|hit| *scores.get(&store.response_text(hit.entry_id).unwrap()).unwrap_or(&0.0))
                        .collect();
                    let expected_rank = cand_scores.iter().position(|&s| s > threshold).map(|p| p + 1);
                    equal_to_threshold_seen += cand_scores.iter().filter(|&&s| s == threshold).count();

                    let r = engine.respond_with(&h, &RespondOptions::default()).unwrap();
                    let calls = eval.call_count() - calls_before;
                    let gens = generator.call_count() - gens_before;
                    match expected_rank {
                        Some(rank) => {
                            assert_eq!(r.outcome, Outcome::Hit);
                            assert_eq!(r.candidate_rank, Some(rank));
                            assert_eq!(r.evals_used, rank);
                            assert_eq!(calls, rank, "gate call-count law");
                            assert_eq!(gens, 0, "generator-call law");
                            assert_eq!(store.len(), size_before, "store-size law");
                            assert!(r.coherence.unwrap().value() > threshold);
                            assert!(!r.filler_recommended);
                        }
                        None => {
                            assert_eq!(r.outcome, Outcome::Miss);
                            assert_eq!(r.candidate_rank, None);
                            assert_eq!(r.evals_used, hits.len());
                            assert_eq!(calls, hits.len(), "gate call-count law");
                            assert_eq!(gens, 1, "generator-call law");
                            assert_eq!(store.len(), size_before + 1, "store-size law");
                            assert!(r.filler_recommended);
                            scores.insert(r.response_text.clone(), 0.0);
                        }
                    }
                }
            }
            assert!(
                equal_to_threshold_seen > 0,
                "no candidate scored exactly at the threshold"
            );
        },
    );
}

#[test]
fn pair_extraction() {
    criterion("pair extraction counts", None, || {
        let three = parse_corpus_str("a __eou__ b __eou__ c __eou__\n", Split::Train);
        assert_eq!(extract_pairs(&three[0]).len(), 2);
        let one = parse_corpus_str("only __eou__\n", Split::Train);
        assert_eq!(extract_pairs(&one[0]).len(), 0);

        // Optional: the official corpus files, when supplied.
        for (var, split, conversations, pairs) in [
            ("DAILYDIALOG_TRAIN", Split::Train, 11_118usize, 76_052usize),
            ("DAILYDIALOG_TEST", Split::Test, 1_000, 6_740),
        ] {
            match std::env::var(var) {
                Ok(path) => {
                    let convs = parse_corpus(&path, split).unwrap();
                    assert_eq!(convs.len(), conversations, "{var} conversations");
                    assert_eq!(extract_all_pairs(&convs).len(), pairs, "{var} pairs");
                    println!("  {var}: {conversations} conversations, {pairs} pairs");
                }
                Err(_) => println!("  {var} not set: data-dependent check skipped"),
            }
        }
    });
}

fn hermetic_engine(train: &[dialogue_cache::PromptResponsePair]) -> CacheEngine {
    let encoder: Arc<dyn Encoder> = Arc::new(ReferenceEncoder::new(64, 7).unwrap());
    let store = Arc::new(VectorStore::new(64, 0.5, encoder.descriptor().id()).unwrap());
    seed(train, &store, encoder.as_ref()).unwrap();
    let eval = Arc::new(SimilarityProxyEvaluator::new(encoder.clone(), 0.5).unwrap());
    CacheEngine::new(
        EngineConfig::new(0.5, 5, 0.5, "", "").unwrap(),
        store,
        encoder,
        eval,
        Arc::new(EchoGenerator::new()),
    )
    .unwrap()
}

fn synthetic_split() -> (
    Vec<dialogue_cache::PromptResponsePair>,
    Vec<dialogue_cache::PromptResponsePair>,
) {
    let corpus = synthetic_corpus(200, 2024, Split::Train);
    (extract_all_pairs(&corpus[..160]), extract_all_pairs(&corpus[160..]))
}

#[test]
fn hermetic_end_to_end_replay() {
    criterion(
        "hermetic replay: sums to 1, matches log recount, deterministic",
        Some(Duration::from_secs(30)),
        || {
            let (train, test) = synthetic_split();
            let dir = tempfile::tempdir().unwrap();
            let opts = ReplayOptions {
                frozen_cache: true,
                include_timings: false,
            };
            let mut outputs = Vec::new();
            for run in 0..2 {
                let engine = hermetic_engine(&train);
                let out = replay(&test, &engine, &opts).unwrap();
                let report_path = dir.path().join(format!("report{run}.json"));
                let log_path = dir.path().join(format!("log{run}.ndjson"));
                out.report.write_json(&report_path).unwrap();
                write_log(&out.log, &log_path).unwrap();
                outputs.push((out.report, report_path, log_path));
            }
            let (report, report_path, log_path) = &outputs[0];
            let sum: f64 = report.rank_proportions.iter().sum::<f64>() + report.miss_proportion;
            assert!((sum - 1.0).abs() <= 1e-6);
            assert_eq!(report.total_requests as usize, test.len());
            assert!(
                report.hit_rate > 0.0 && report.miss_proportion > 0.0,
                "degenerate corpus: {report:?}"
            );

            // Recount from the log file alone.
            let log = read_log(log_path).unwrap();
            assert_eq!(log.len(), test.len());
            let mut counts = vec![0u64; report.k];
            let mut misses = 0u64;
            for rec in &log {
                match rec.candidate_rank {
                    Some(r) => counts[r - 1] += 1,
                    None => misses += 1,
                }
            }
            let n = log.len() as f64;
            for (r, c) in counts.iter().enumerate() {
                assert!((report.rank_proportions[r] - *c as f64 / n).abs() <= 1e-12);
            }
            assert!((report.miss_proportion - misses as f64 / n).abs() <= 1e-12);
            assert_eq!(report.rank_counts, counts);

            assert_eq!(
                std::fs::read(report_path).unwrap(),
                std::fs::read(&outputs[1].1).unwrap(),
                "reports differ between runs"
            );
            assert_eq!(
                std::fs::read(log_path).unwrap(),
                std::fs::read(&outputs[1].2).unwrap(),
                "logs differ between runs"
            );
        },
    );
}

#[test]
fn prefetch_mechanics() {
    criterion(
        "prefetch: ceil word counts, identity split, split 1.0 == replay",
        None,
        || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            for _ in 0..2000 {
                let words = rng.gen_range(1..=40);
                let text: Vec<String> = (0..words).map(|i| format!("w{i}")).collect();
                let h = DialogueHistory::from_texts(["earlier turn".to_owned(), text.join(" ")]).unwrap();
                let pct: usize = rng.gen_range(1..=100);
                let t = truncate_last_utterance(&h, pct as f64 / 100.0).unwrap();
                // ceil(pct * W / 100) in integer arithmetic.
                let want = (pct * words).div_ceil(100);
                assert_eq!(t.last().words().count(), want, "W={words} split={pct}%");
                assert_eq!(t.utterances()[0], h.utterances()[0]);
                assert_eq!(truncate_last_utterance(&h, 1.0).unwrap(), h);
            }

            let (train, test) = synthetic_split();
            let opts = ReplayOptions {
                frozen_cache: true,
                include_timings: false,
            };
            let engine = hermetic_engine(&train);
            let plain = replay(&test, &engine, &opts).unwrap().report.to_json_pretty().unwrap();
            let pre = prefetch_replay(&test, &engine, &[1.0], &opts).unwrap();
            assert_eq!(pre[0].report.to_json_pretty().unwrap(), plain);
            let trend = prefetch_replay(&test, &engine, &[1.0, 0.6], &opts).unwrap();
            println!(
                "  hit rate at 100%: {:.2}%, at 60%: {:.2}% (observed trend, not asserted)",
                100.0 * trend[0].report.hit_rate,
                100.0 * trend[1].report.hit_rate
            );
        },
    );
}

#[test]
fn snapshot_round_trip() {
    criterion("snapshot round-trip and corrupted magic", None, || {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let store = VectorStore::new(32, 0.5, "acceptance").unwrap();
        for i in 0..1000 {
            let mut e = NewEntry::new(random_unit(&mut rng, 32), format!("response {i}"), EntrySource::Seeded);
            if i % 3 == 0 {
                e = e.with_audio_ref(format!("audio/{i}.wav"));
            }
            store.append(e).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.cvch");
        store.save_snapshot(&path).unwrap();
        let loaded = VectorStore::load_snapshot(&path).unwrap();
        assert_eq!(loaded.entries(), store.entries());
        for _ in 0..50 {
            let q = random_unit(&mut rng, 32);
            let a = store.search(&q, 5).unwrap();
            let b = loaded.search(&q, 5).unwrap();
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x.entry_id, y.entry_id);
                assert_eq!(x.similarity.to_bits(), y.similarity.to_bits());
            }
        }
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        let bad = dir.path().join("bad.cvch");
        std::fs::write(&bad, bytes).unwrap();
        assert!(matches!(VectorStore::load_snapshot(&bad), Err(Error::Format(_))));
    });
}
