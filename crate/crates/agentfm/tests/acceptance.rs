//! Acceptance gate. Each test checks one release criterion end to end and
//! prints a single `acceptance <n> (<name>): PASS` line on success (visible
//! with `cargo test --test acceptance -- --nocapture`); a failed criterion
//! prints a FAIL line with the reason and fails the test.

use agentfm::eval::{
    dtw_distance, f1_score, identifiability_experiment, score_detection, score_diagnosis,
    Channel,
};
use agentfm::llm::{LlmClient, MockClient, MockScript, ScriptedResponse};
use agentfm::log_agent::{compress_sequence, expand_runs, TemplateMiner};
use agentfm::meta::{aggregate_node_flags, collect, integrate_with_traces, run_pipeline};
use agentfm::meta::{FailureReport, PipelineConfig};
use agentfm::metric_agent::preprocess;
use agentfm::rag::{cosine, raw_cluster_features, ExampleLabel, ExampleStore, LabeledExample};
use agentfm::roles::{bootstrap_roles, refresh_roles, Leadership, SystemState};
use agentfm::simulator::{
    generate_campaign, oracle_script_from_truth, standard_cluster, Campaign, CampaignSpec,
    ClusterSpec,
};
use agentfm::tasks::{DiagnosisLabel, FaultLabel};
use agentfm::telemetry::{
    LogEntry, LogLevel, MetricSeries, RawMetricSet, TelemetryBundle, Window,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

/// Fails the surrounding criterion with a message unless `cond` holds.
macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

/// Runs one criterion body and prints its verdict line.
fn gate(number: u32, name: &str, body: impl FnOnce() -> Result<(), String>) {
    match body() {
        Ok(()) => println!("acceptance {number} ({name}): PASS"),
        Err(reason) => {
            println!("acceptance {number} ({name}): FAIL — {reason}");
            panic!("acceptance criterion {number} ({name}) failed: {reason}");
        }
    }
}

// ---------------------------------------------------------------------------
// Criterion 1: F1 arithmetic reproduces the published per-node
// precision/recall/F1 columns within ±0.0001.
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_f1_arithmetic() {
    gate(1, "f1-arithmetic", || {
        let rows: [(f64, f64, f64); 6] = [
            (0.3968, 0.9901, 0.5666),
            (0.3435, 1.0000, 0.5114),
            (0.5964, 0.9802, 0.7416),
            (0.3117, 1.0000, 0.4753),
            (0.7760, 0.9604, 0.8584),
            (0.8942, 0.9208, 0.9073),
        ];
        for (p, r, expected) in rows {
            let got = f1_score(p, r);
            ensure!(
                (got - expected).abs() <= 1e-4,
                "f1_score({p}, {r}) = {got}, published column says {expected}"
            );
        }
        Ok(())
    });
}

// ---------------------------------------------------------------------------
// Criterion 2: structural channel identifiability on a fixed-seed campaign
// (20 windows per fault, 100 normal). Reproduction-by-construction: the
// simulator writes resource saturation into metrics and export/import
// pressure into logs, so the metrics channel must identify cpu/memory/io
// saturation (F1 > 0.5) but not excessive export/import (F1 ≤ 0.5), while
// the logs channel must identify export/import.
// ---------------------------------------------------------------------------

fn desk_campaign(seed: u64) -> Campaign {
    generate_campaign(
        &ClusterSpec::default(),
        &CampaignSpec {
            per_fault: 20,
            normal: 100,
            seed,
        },
    )
    .expect("campaign generation is total for valid specs")
}

fn campaign_windows(campaign: &Campaign) -> Vec<(Window, Vec<TelemetryBundle>)> {
    campaign
        .windows
        .iter()
        .map(|w| (w.window, w.bundles.clone()))
        .collect()
}

#[test]
fn criterion_2_channel_identifiability() {
    gate(2, "channel-identifiability", || {
        let started = Instant::now();
        let campaign = desk_campaign(2);
        let windows = campaign_windows(&campaign);

        let f1_of = |channel: Channel, label: FaultLabel| -> Result<f64, String> {
            let report = identifiability_experiment(&windows, &campaign.truth, channel)
                .map_err(|e| format!("{channel} experiment failed: {e}"))?;
            report
                .rows
                .iter()
                .find(|row| row.label == label)
                .map(|row| row.metrics.f1)
                .ok_or_else(|| format!("{channel} report lacks a row for {label}"))
        };

        for label in [
            FaultLabel::CpuSaturation,
            FaultLabel::MemorySaturation,
            FaultLabel::IoSaturation,
        ] {
            let f1 = f1_of(Channel::Metrics, label)?;
            ensure!(f1 > 0.5, "metrics channel should identify {label}, F1 = {f1:.3}");
        }
        for label in [FaultLabel::ExcessiveExport, FaultLabel::ExcessiveImport] {
            let f1 = f1_of(Channel::Metrics, label)?;
            ensure!(
                f1 <= 0.5,
                "metrics channel should NOT identify {label} (it moves no metrics), F1 = {f1:.3}"
            );
            let f1 = f1_of(Channel::Logs, label)?;
            ensure!(f1 > 0.5, "logs channel should identify {label}, F1 = {f1:.3}");
        }

        let elapsed = started.elapsed();
        ensure!(
            elapsed.as_secs() <= 120,
            "experiment exceeded the 2-minute budget: {elapsed:?}"
        );
        Ok(())
    });
}

// ---------------------------------------------------------------------------
// Criterion 3: the published end-to-end scores need a large live deployment,
// so the substitute gate checks pipeline and harness soundness instead. A
// perfect scripted oracle must reach detection and diagnosis F1 == 1.0 on a
// 300-window campaign; flipping 10% of detection answers under seed control
// must land within ±0.02 of the analytic expectation and match the
// flip-count prediction exactly.
// ---------------------------------------------------------------------------

/// Runs the full pipeline over every campaign window with the given client;
/// returns per-window verdict flags and diagnosis labels.
fn run_campaign(
    campaign: &Campaign,
    client: &dyn LlmClient,
) -> Result<(BTreeMap<u64, bool>, BTreeMap<u64, DiagnosisLabel>), String> {
    let table = bootstrap_roles(&campaign.config).map_err(|e| e.to_string())?;
    let config = PipelineConfig::default();
    let reports: Vec<FailureReport> = campaign
        .windows
        .par_iter()
        .map(|w| {
            run_pipeline(&w.bundles, &table, None, client, &config)
                .map_err(|e| format!("window {}: {e}", w.window.start()))
        })
        .collect::<Result<_, _>>()?;
    let mut verdicts = BTreeMap::new();
    let mut diagnoses = BTreeMap::new();
    for report in reports {
        let start = report.window.start() as u64;
        verdicts.insert(start, report.verdict.anomalous);
        if let Some(diagnosis) = report.diagnosis {
            diagnoses.insert(start, diagnosis.label);
        }
    }
    Ok((verdicts, diagnoses))
}

#[test]
fn criterion_3_oracle_pipeline_f1() {
    gate(3, "oracle-pipeline-f1", || {
        let campaign = desk_campaign(0);
        ensure!(
            campaign.windows.len() == 300,
            "expected a 300-window campaign, got {}",
            campaign.windows.len()
        );

        // Perfect oracle: every verdict and diagnosis read from the truth.
        let (script, flipped) = oracle_script_from_truth(&campaign.truth, 0.0, 0);
        ensure!(flipped.is_empty(), "flip rate 0 must flip nothing");
        let client = MockClient::new(script);
        let (verdicts, diagnoses) = run_campaign(&campaign, &client)?;
        let detection = score_detection(&campaign.truth, &verdicts).map_err(|e| e.to_string())?;
        ensure!(
            detection.f1 == 1.0,
            "perfect oracle detection F1 = {} (tp {} fp {} fn {})",
            detection.f1,
            detection.true_positives,
            detection.false_positives,
            detection.false_negatives
        );
        let diagnosis = score_diagnosis(&campaign.truth, &diagnoses).map_err(|e| e.to_string())?;
        ensure!(
            diagnosis.f1 == 1.0,
            "perfect oracle diagnosis macro F1 = {}",
            diagnosis.f1
        );

        // 10% seeded flips: the measured counts must equal the counts
        // implied by the drawn flip set exactly, and the resulting F1 must
        // sit within ±0.02 of the analytic value for q = 0.1.
        let flip_rate = 0.1;
        let (script, flipped) = oracle_script_from_truth(&campaign.truth, flip_rate, 29);
        let client = MockClient::new(script);
        let (verdicts, _) = run_campaign(&campaign, &client)?;
        let detection = score_detection(&campaign.truth, &verdicts).map_err(|e| e.to_string())?;

        let faults: Vec<u64> = campaign.truth.fault_windows();
        let flipped_faults = flipped.iter().filter(|s| faults.contains(s)).count() as u64;
        let flipped_normals = flipped.len() as u64 - flipped_faults;
        let expected_tp = faults.len() as u64 - flipped_faults;
        ensure!(
            detection.true_positives == expected_tp
                && detection.false_positives == flipped_normals
                && detection.false_negatives == flipped_faults,
            "measured counts (tp {} fp {} fn {}) disagree with the drawn flips \
             (tp {expected_tp} fp {flipped_normals} fn {flipped_faults})",
            detection.true_positives,
            detection.false_positives,
            detection.false_negatives
        );

        // Analytic expectation: tp = 200(1-q), fp = 100q, fn = 200q, so
        // F1 = 360/390 = 12/13 at q = 0.1 on this campaign shape.
        let (n_fault, n_normal) = (faults.len() as f64, 100.0);
        let analytic = {
            let tp = n_fault * (1.0 - flip_rate);
            2.0 * tp / (2.0 * tp + n_normal * flip_rate + n_fault * flip_rate)
        };
        ensure!(
            (detection.f1 - analytic).abs() <= 0.02,
            "flipped detection F1 {} strays more than ±0.02 from analytic {analytic}",
            detection.f1
        );
        Ok(())
    });
}

// ---------------------------------------------------------------------------
// Criterion 4: property suites. Each sub-property mirrors a module law and
// runs against an independent oracle or invariant.
// ---------------------------------------------------------------------------

/// Minimal valid bundles for the standard six-node cluster; nodes listed in
/// `error_nodes` carry an ERROR log entry (raising that node's flag).
fn fixture_bundles(window: Window, error_nodes: &[&str]) -> Vec<TelemetryBundle> {
    ["n1", "n2", "n3", "n4", "n5", "n6"]
        .iter()
        .map(|id| {
            let start = window.start();
            let mut bundle = TelemetryBundle::empty(id, window);
            bundle.metrics.series.push(MetricSeries {
                name: "cpu_usage".to_string(),
                timestamps: vec![start + 1.0, start + 6.0, start + 11.0],
                values: vec![Some(0.40), Some(0.42), Some(0.41)],
            });
            bundle.logs.entries.push(LogEntry {
                timestamp: start + 2.0,
                level: LogLevel::Info,
                message: format!("heartbeat ok from {id}"),
            });
            if error_nodes.contains(id) {
                bundle.logs.entries.push(LogEntry {
                    timestamp: start + 3.0,
                    level: LogLevel::Error,
                    message: format!("disk failure detected on {id}"),
                });
            }
            bundle.validate().expect("fixture bundles are valid");
            bundle
        })
        .collect()
}

fn compression_round_trip() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for case in 0..1000 {
        let len = rng.gen_range(0..200);
        let ids: Vec<u64> = (0..len).map(|_| rng.gen_range(0..8)).collect();
        let runs = compress_sequence(&ids);
        ensure!(
            runs.is_canonical(),
            "case {case}: compression produced a non-canonical run sequence"
        );
        let total: u64 = runs.runs.iter().map(|r| r.count).sum();
        ensure!(
            total == ids.len() as u64,
            "case {case}: run counts sum to {total}, expected {}",
            ids.len()
        );
        ensure!(
            expand_runs(&runs) == ids,
            "case {case}: expand(compress(ids)) != ids"
        );
    }
    Ok(())
}

fn lossless_mining_on_simulator_output() -> Result<(), String> {
    let campaign = generate_campaign(
        &ClusterSpec::default(),
        &CampaignSpec {
            per_fault: 2,
            normal: 5,
            seed: 5,
        },
    )
    .map_err(|e| e.to_string())?;
    // One miner per node, fed that node's entire campaign stream so the
    // template table converges across every fault type's message shapes.
    let mut miners: BTreeMap<String, TemplateMiner> = BTreeMap::new();
    for window in &campaign.windows {
        for bundle in &window.bundles {
            let miner = miners.entry(bundle.logs.node_id.clone()).or_default();
            for entry in &bundle.logs.entries {
                let parsed = miner.parse_log(entry);
                ensure!(
                    miner.reconstructs(&entry.message, &parsed),
                    "lossy parse of {:?} while mining",
                    entry.message
                );
            }
        }
    }
    // Re-parse everything against the converged tables.
    let mut checked = 0u64;
    for window in &campaign.windows {
        for bundle in &window.bundles {
            let miner = miners.get_mut(&bundle.logs.node_id).unwrap();
            for entry in &bundle.logs.entries {
                let parsed = miner.parse_log(entry);
                ensure!(
                    miner.reconstructs(&entry.message, &parsed),
                    "lossy re-parse of {:?} after convergence",
                    entry.message
                );
                checked += 1;
            }
        }
    }
    ensure!(checked > 500, "campaign produced too few log lines ({checked})");
    Ok(())
}

fn imputation_total_and_idempotent() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for case in 0..300 {
        let len = rng.gen_range(1..30);
        let timestamps: Vec<f64> = (0..len).map(|i| i as f64 * 2.0).collect();
        let values: Vec<Option<f64>> = (0..len)
            .map(|_| {
                if rng.gen_bool(0.35) {
                    None
                } else {
                    Some(rng.gen_range(-50.0..50.0))
                }
            })
            .collect();
        if values.iter().all(Option::is_none) {
            continue;
        }
        let raw = RawMetricSet {
            node_id: "n1".to_string(),
            series: vec![MetricSeries {
                name: "m".to_string(),
                timestamps: timestamps.clone(),
                values: values.clone(),
            }],
        };
        let first = preprocess(&raw, &Default::default())
            .map_err(|e| format!("case {case}: preprocess failed: {e}"))?;
        let dense = &first.series[0];
        ensure!(
            dense.values.len() == len && dense.values.iter().all(|v| v.is_finite()),
            "case {case}: output not dense and finite"
        );
        for (i, v) in values.iter().enumerate() {
            if let Some(original) = v {
                ensure!(
                    dense.values[i] == *original,
                    "case {case}: observed sample {i} was rewritten"
                );
            }
        }
        // Idempotence: preprocessing the dense output changes nothing.
        let redone = RawMetricSet {
            node_id: "n1".to_string(),
            series: vec![MetricSeries {
                name: "m".to_string(),
                timestamps,
                values: dense.values.iter().copied().map(Some).collect(),
            }],
        };
        let second = preprocess(&redone, &Default::default())
            .map_err(|e| format!("case {case}: second preprocess failed: {e}"))?;
        ensure!(
            second.series[0].values == dense.values,
            "case {case}: preprocessing is not idempotent"
        );
    }
    Ok(())
}

/// Full-matrix DTW in a caller-provided flat buffer (independent oracle).
fn dtw_oracle(a: &[f64], b: &[f64], buf: &mut [f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    let width = m + 1;
    buf[0] = 0.0;
    for j in 1..=m {
        buf[j] = f64::INFINITY;
    }
    for i in 1..=n {
        buf[i * width] = f64::INFINITY;
        for j in 1..=m {
            let cost = (a[i - 1] - b[j - 1]).abs();
            buf[i * width + j] = cost
                + buf[(i - 1) * width + j]
                    .min(buf[i * width + j - 1])
                    .min(buf[(i - 1) * width + j - 1]);
        }
    }
    buf[n * width + m]
}

fn dtw_exhaustive_vs_oracle() -> Result<(), String> {
    // Every sequence of length 1..=8 over the alphabet {0, 1, 2}.
    let mut seqs: Vec<Vec<f64>> = Vec::new();
    for len in 1..=8u32 {
        for code in 0..3usize.pow(len) {
            let mut c = code;
            let seq = (0..len)
                .map(|_| {
                    let v = (c % 3) as f64;
                    c /= 3;
                    v
                })
                .collect();
            seqs.push(seq);
        }
    }
    ensure!(seqs.len() == 9840, "expected 9840 sequences, got {}", seqs.len());

    let mismatches: usize = seqs
        .par_iter()
        .enumerate()
        .map(|(i, a)| {
            let mut buf = [0.0f64; 81];
            let mut bad = 0;
            for b in &seqs[i..] {
                let want = dtw_oracle(a, b, &mut buf);
                let ab = dtw_distance(a, b).expect("non-empty inputs");
                let ba = dtw_distance(b, a).expect("non-empty inputs");
                if (ab - want).abs() > 1e-9 || (ba - want).abs() > 1e-9 {
                    bad += 1;
                }
            }
            bad
        })
        .sum();
    ensure!(mismatches == 0, "{mismatches} pairs disagree with the DP oracle");
    Ok(())
}

/// Builds a labeled store from a small campaign by digesting every window
/// exactly the way the store-building command does.
fn campaign_store(campaign: &Campaign) -> Result<ExampleStore, String> {
    let table = bootstrap_roles(&campaign.config).map_err(|e| e.to_string())?;
    let mut store = ExampleStore::new();
    for window in &campaign.windows {
        let digests = collect(&window.bundles, &table, None, &Default::default())
            .map_err(|e| e.to_string())?;
        let spans: Vec<_> = window.bundles.iter().flat_map(|b| b.spans.clone()).collect();
        let digest = integrate_with_traces(digests, &spans).map_err(|e| e.to_string())?;
        let label = window
            .truth
            .as_ref()
            .map_or(ExampleLabel::Normal, |t| ExampleLabel::Fault(t.label));
        store
            .add_example(LabeledExample {
                id: format!("w{}", window.window.start() as u64),
                digest_text: digest.text.clone(),
                features: raw_cluster_features(&digest),
                label,
            })
            .map_err(|e| e.to_string())?;
    }
    Ok(store)
}

fn rag_self_retrieval_and_ordering() -> Result<(), String> {
    let campaign = generate_campaign(
        &ClusterSpec::default(),
        &CampaignSpec {
            per_fault: 2,
            normal: 5,
            seed: 9,
        },
    )
    .map_err(|e| e.to_string())?;
    let table = bootstrap_roles(&campaign.config).map_err(|e| e.to_string())?;
    let store = campaign_store(&campaign)?;
    let n = store.len();

    // Independent oracle for the store's scoring contract: z-normalize the
    // stored features (population std, zero guarded to 1), then rank by
    // cosine against the normalized query, stable on ties.
    let raws: Vec<Vec<f64>> = store.examples().iter().map(|e| e.features.0.clone()).collect();
    let dim = raws[0].len();
    let mut mean = vec![0.0; dim];
    for raw in &raws {
        for (m, v) in mean.iter_mut().zip(raw) {
            *m += v / n as f64;
        }
    }
    let mut std = vec![0.0; dim];
    for raw in &raws {
        for ((s, v), m) in std.iter_mut().zip(raw).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    for s in &mut std {
        *s = (*s / n as f64).sqrt();
        if *s == 0.0 {
            *s = 1.0;
        }
    }
    let normalize = |raw: &[f64]| -> Vec<f64> {
        raw.iter()
            .zip(&mean)
            .zip(&std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    };

    for window in &campaign.windows {
        let digests = collect(&window.bundles, &table, None, &Default::default())
            .map_err(|e| e.to_string())?;
        let spans: Vec<_> = window.bundles.iter().flat_map(|b| b.spans.clone()).collect();
        let digest = integrate_with_traces(digests, &spans).map_err(|e| e.to_string())?;
        let query = store.featurize_cluster(&digest);

        // Self-retrieval: the window's own example ranks first with
        // similarity 1 (its normalized features equal the query).
        let id = format!("w{}", window.window.start() as u64);
        let hits = store.retrieve(&query, 1, None).map_err(|e| e.to_string())?;
        ensure!(
            (hits[0].1 - 1.0).abs() < 1e-9,
            "self-retrieval similarity for {id} is {}",
            hits[0].1
        );
        ensure!(
            hits[0].0.features == raw_cluster_features(&digest),
            "self-retrieval for {id} returned a different feature vector"
        );

        // Ordering: the full ranking matches the linear-scan oracle.
        let hits = store.retrieve(&query, n, None).map_err(|e| e.to_string())?;
        let mut oracle: Vec<(usize, f64)> = raws
            .iter()
            .enumerate()
            .map(|(i, raw)| (i, cosine(&query.0, &normalize(raw))))
            .collect();
        oracle.sort_by(|a, b| b.1.total_cmp(&a.1));
        ensure!(hits.len() == n, "retrieve returned {} of {n} examples", hits.len());
        for (rank, ((example, score), (oracle_idx, oracle_score))) in
            hits.iter().zip(&oracle).enumerate()
        {
            ensure!(
                example.id == store.examples()[*oracle_idx].id
                    && (score - oracle_score).abs() < 1e-9,
                "rank {rank} for query {id}: got ({}, {score:.6}), oracle says ({}, {:.6})",
                example.id,
                store.examples()[*oracle_idx].id,
                oracle_score
            );
        }
    }
    Ok(())
}

fn suspicion_monotone_and_scale_invariant() -> Result<(), String> {
    let window = Window::new(0.0, 60.0).unwrap();
    let table = bootstrap_roles(&standard_cluster()).map_err(|e| e.to_string())?;
    let nodes = ["n1", "n2", "n3", "n4", "n5", "n6"];

    let mut previous = 0.0;
    for flagged in 0..=nodes.len() {
        let bundles = fixture_bundles(window, &nodes[..flagged]);
        let digests = collect(&bundles, &table, None, &Default::default())
            .map_err(|e| e.to_string())?;
        let (suspicious, score) = aggregate_node_flags(&digests, &table);
        ensure!(
            (0.0..=1.0).contains(&score),
            "score {score} escapes [0, 1] with {flagged} flagged nodes"
        );
        ensure!(
            score >= previous,
            "score dropped from {previous} to {score} when flagging node {flagged}"
        );
        ensure!(
            suspicious == (score > 0.25),
            "suspicion flag disagrees with the documented threshold"
        );

        // Scale invariance: importance is a ratio, so scaling every weight
        // by the same factor must not move the score.
        let mut scaled = table.clone();
        for role in scaled.roles.values_mut() {
            role.importance *= 7.0;
        }
        let (scaled_suspicious, scaled_score) = aggregate_node_flags(&digests, &scaled);
        ensure!(
            (scaled_score - score).abs() < 1e-12 && scaled_suspicious == suspicious,
            "scaling importances moved the score: {score} -> {scaled_score}"
        );
        previous = score;
    }
    ensure!(previous == 1.0, "flagging every node should score 1.0, got {previous}");
    Ok(())
}

fn gating_under_randomized_mocks() -> Result<(), String> {
    let window = Window::new(0.0, 60.0).unwrap();
    let bundles = fixture_bundles(window, &["n4"]);
    let table = bootstrap_roles(&standard_cluster()).map_err(|e| e.to_string())?;
    let config = PipelineConfig::default();
    let matchers = [
        "window under review",
        "cluster window",
        "diagnose",
        "Briefly explain",
        "propose_mitigation",
        "never-matches-anything",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(47);

    for case in 0..250 {
        let mut script = MockScript::default();
        for _ in 0..rng.gen_range(0..7) {
            let matcher = matchers[rng.gen_range(0..matchers.len())];
            let response = match rng.gen_range(0..8) {
                0 => ScriptedResponse::tool("verdict", serde_json::json!({"answer": "yes"})),
                1 => ScriptedResponse::tool("verdict", serde_json::json!({"answer": "no"})),
                2 => ScriptedResponse::tool(
                    "diagnose",
                    serde_json::json!({"label": "cpu_saturation", "suspect_nodes": ["n4", "bogus"]}),
                ),
                3 => ScriptedResponse::tool("diagnose", serde_json::json!({"label": "unknown"})),
                4 => ScriptedResponse::tool(
                    "propose_mitigation",
                    serde_json::json!({"actions": [{"title": "throttle writers",
                                                    "detail": "cap ingest until cpu recovers"}]}),
                ),
                5 => ScriptedResponse::tool("propose_mitigation", serde_json::json!({"actions": []})),
                6 => ScriptedResponse::text("freeform words"),
                _ => ScriptedResponse::TransportError("socket closed".to_string()),
            };
            script.script_response(matcher, response);
        }
        if rng.gen_bool(0.5) {
            script.default_response = ScriptedResponse::TransportError("down".to_string());
        }
        let client = MockClient::new(script);
        let report = run_pipeline(&bundles, &table, None, &client, &config)
            .map_err(|e| format!("case {case}: pipeline must stay total, got {e}"))?;

        // Gating invariants: diagnosis implies an anomalous verdict;
        // mitigation implies a known diagnosis (unknown is gated off by
        // default); a failed stage leaves later stages empty.
        if report.diagnosis.is_some() {
            ensure!(
                report.verdict.anomalous,
                "case {case}: diagnosis without an anomalous verdict"
            );
        }
        if let Some(mitigation) = &report.mitigation {
            let diagnosis = report
                .diagnosis
                .as_ref()
                .ok_or_else(|| format!("case {case}: mitigation without diagnosis"))?;
            ensure!(
                diagnosis.label.is_known(),
                "case {case}: mitigation planned for an unknown fault"
            );
            ensure!(
                !mitigation.actions.is_empty(),
                "case {case}: accepted an empty mitigation plan"
            );
        }
        if let Some(error) = &report.error {
            match error.stage.as_str() {
                "detect" => ensure!(
                    report.diagnosis.is_none() && report.mitigation.is_none(),
                    "case {case}: stages ran after a detect failure"
                ),
                "diagnose" => ensure!(
                    report.mitigation.is_none(),
                    "case {case}: mitigation ran after a diagnose failure"
                ),
                "mitigate" => {}
                other => return Err(format!("case {case}: unknown stage {other:?}")),
            }
        }
    }
    Ok(())
}

#[test]
fn criterion_4_property_suites() {
    gate(4, "property-suites", || {
        compression_round_trip()?;
        lossless_mining_on_simulator_output()?;
        imputation_total_and_idempotent()?;
        dtw_exhaustive_vs_oracle()?;
        rag_self_retrieval_and_ordering()?;
        suspicion_monotone_and_scale_invariant()?;
        gating_under_randomized_mocks()?;
        Ok(())
    });
}

// ---------------------------------------------------------------------------
// Criterion 5: when the leader dies, one refresh elects exactly one new
// leader, the epoch increments once, and subsequent reports carry the new
// epoch.
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_role_adaptation() {
    gate(5, "role-adaptation", || {
        let table = bootstrap_roles(&standard_cluster()).map_err(|e| e.to_string())?;
        let old_leader = table
            .leader()
            .ok_or("bootstrap produced no leader")?
            .node_id
            .clone();
        let state = SystemState::from_table(&table).with_down(&old_leader);
        let refreshed = refresh_roles(&table, &state).map_err(|e| e.to_string())?;

        let leaders: Vec<&str> = refreshed
            .roles
            .values()
            .filter(|r| r.leadership == Leadership::Leader)
            .map(|r| r.node_id.as_str())
            .collect();
        ensure!(
            leaders.len() == 1 && leaders[0] != old_leader,
            "expected exactly one new leader, got {leaders:?} (old was {old_leader})"
        );
        ensure!(
            refreshed.epoch == table.epoch + 1,
            "epoch went {} -> {}, expected a single increment",
            table.epoch,
            refreshed.epoch
        );
        // A second refresh against the same state is a no-op.
        let again = refresh_roles(&refreshed, &state).map_err(|e| e.to_string())?;
        ensure!(
            again == refreshed,
            "refresh is not idempotent: epoch climbed to {}",
            again.epoch
        );

        // Reports produced after the failover carry the new epoch.
        let window = Window::new(0.0, 60.0).unwrap();
        let bundles = fixture_bundles(window, &[]);
        let mut script = MockScript::default();
        script.script_response(
            "cluster window",
            ScriptedResponse::tool("verdict", serde_json::json!({"answer": "no"})),
        );
        let client = MockClient::new(script);
        let report = run_pipeline(&bundles, &refreshed, None, &client, &PipelineConfig::default())
            .map_err(|e| e.to_string())?;
        ensure!(
            report.role_table_epoch == refreshed.epoch,
            "report carries epoch {}, table is at {}",
            report.role_table_epoch,
            refreshed.epoch
        );
        Ok(())
    });
}

// ---------------------------------------------------------------------------
// Criterion 6: two identical CLI invocations (simulate → run → eval) produce
// byte-identical reports and metrics files.
// ---------------------------------------------------------------------------

/// Reads every regular file under `dir` into a path → bytes map.
fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).expect("report directory exists") {
        let path = entry.expect("readable directory entry").path();
        if path.is_file() {
            let name = path.file_name().unwrap().to_string_lossy().to_string();
            out.insert(name, std::fs::read(&path).expect("readable report"));
        }
    }
    out
}

#[test]
fn criterion_6_cli_determinism() {
    gate(6, "cli-determinism", || {
        let bin = env!("CARGO_BIN_EXE_agentfm");
        let mut harvests = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let data = dir.path().join("data");
            let reports = dir.path().join("reports");
            let metrics = dir.path().join("metrics.json");
            let steps: [Vec<String>; 3] = [
                vec![
                    "simulate".into(),
                    "--out".into(),
                    data.display().to_string(),
                    "--per-fault".into(),
                    "2".into(),
                    "--normal".into(),
                    "6".into(),
                    "--seed".into(),
                    "11".into(),
                ],
                vec![
                    "run".into(),
                    "--data".into(),
                    data.display().to_string(),
                    "--reports".into(),
                    reports.display().to_string(),
                    "--oracle".into(),
                    "--flip-rate".into(),
                    "0.1".into(),
                    "--seed".into(),
                    "11".into(),
                ],
                vec![
                    "eval".into(),
                    "--data".into(),
                    data.display().to_string(),
                    "--reports".into(),
                    reports.display().to_string(),
                    "--out".into(),
                    metrics.display().to_string(),
                ],
            ];
            for args in &steps {
                let output = std::process::Command::new(bin)
                    .args(args)
                    .output()
                    .map_err(|e| format!("spawning {bin}: {e}"))?;
                ensure!(
                    output.status.success(),
                    "`agentfm {}` failed: {}",
                    args.join(" "),
                    String::from_utf8_lossy(&output.stderr)
                );
            }
            harvests.push((
                dir_bytes(&reports),
                std::fs::read(&metrics).map_err(|e| e.to_string())?,
            ));
        }
        let (first_reports, first_metrics) = &harvests[0];
        let (second_reports, second_metrics) = &harvests[1];
        ensure!(
            first_reports == second_reports,
            "report directories differ between identical runs"
        );
        ensure!(
            first_metrics == second_metrics,
            "metrics.json differs between identical runs"
        );
        Ok(())
    });
}
