//! Acceptance suite: one test per criterion, each printing a pass line.
//! Criteria 9 and 11 drive the compiled binary over a generated corpus; the
//! rest exercise the library directly.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::Rng;

use relex_core::corpus::{
    build_vocabulary, save_corpus, to_transactions, EntityMention, EntityType, Provenance,
    SentenceInstance, Transaction,
};
use relex_core::eval::{auc, borda_rank, max_f1, pr_curve, precision_at, MetricReport, RankedPrediction};
use relex_core::expand::{
    default_templates, expand_base, instantiate_template, similarity, EntityLexicon, EntityRecord,
    SimilarityMetric,
};
use relex_core::krimp::{build_code_table, mine_frequent, CodeTable, KrimpConfig};
use relex_core::model::{
    attend, batch_loss, batch_loss_grad, Aggregation, BagExample, BatchPerturbation,
    EncodedSentence, EncoderConfig, LossOptions, ModelParams, RelationVocab,
};
use relex_core::numerics::{check_gradient, derive_rng, Real};
use relex_core::trainer::{adversarial_perturbation, train, Dataset, TrainConfig, TrainMode};

fn pass(criterion: &str) {
    println!("[PASS] {criterion}");
}

// ---------------------------------------------------------------------------
// Criterion 1: published cosine similarities
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_similarity_reproduction() {
    let started = Instant::now();
    let base = [0u32, 1, 3, 6];
    let table: [(&[u32], f64); 6] = [
        (&[0, 3, 5, 6], 0.75),
        (&[1, 2, 5, 6], 0.5),
        (&[2, 5, 6, 7], 0.25),
        (&[0, 3, 5], 0.57735),
        (&[0, 3, 7], 0.57735),
        (&[2, 5, 7], 0.0),
    ];
    for (other, expected) in table {
        let got = similarity(&base, other, SimilarityMetric::Cosine).unwrap();
        assert!(
            (got - expected).abs() <= 1e-5,
            "cosine(base, {other:?}) = {got}, expected {expected}"
        );
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_micros() < 1000, "took {elapsed:?}, budget 1 ms");
    pass("criterion 1: six published cosine similarities within 1e-5, under 1 ms");
}

// ---------------------------------------------------------------------------
// Criterion 2: published expansion walk
// ---------------------------------------------------------------------------

fn published_code_table() -> CodeTable {
    let mut db: Vec<Transaction> = (0..8)
        .map(|i| Transaction::new(vec![i as u32], i as usize).unwrap())
        .collect();
    db.push(Transaction::new((0..8).collect(), 8).unwrap());
    let mut ct = CodeTable::standard(&db);
    for set in [
        vec![0u32, 1, 3, 6],
        vec![0, 3, 5, 6],
        vec![1, 2, 5, 6],
        vec![2, 5, 6, 7],
        vec![0, 3, 5],
        vec![0, 3, 7],
        vec![2, 5, 7],
        vec![4, 5, 7],
    ] {
        ct.insert(set, 2).unwrap();
    }
    ct
}

fn published_lexicon() -> EntityLexicon {
    let mut lex = EntityLexicon::new();
    lex.insert(0, EntityRecord { entity_id: "e.p".into(), name: "p".into(), entity_type: EntityType::Person });
    lex.insert(2, EntityRecord { entity_id: "e.l".into(), name: "l".into(), entity_type: EntityType::Location });
    lex.insert(4, EntityRecord { entity_id: "e.o".into(), name: "o".into(), entity_type: EntityType::Organization });
    lex
}

#[test]
fn criterion_02_expansion_reproduction() {
    let ct = published_code_table();
    let lex = published_lexicon();
    let templates = default_templates();
    let base = ct
        .entries()
        .iter()
        .position(|e| e.itemset == [0, 1, 3, 6])
        .unwrap();
    let started = Instant::now();
    let default_branch =
        expand_base(base, &ct, &lex, &templates, 3, SimilarityMetric::Cosine, false).unwrap();
    assert_eq!(default_branch.len(), 1, "default tie branch emits one instance");
    assert_eq!(default_branch[0].merged_itemset, vec![0, 1, 2, 3, 5, 6]);

    let all_branches =
        expand_base(base, &ct, &lex, &templates, 3, SimilarityMetric::Cosine, true).unwrap();
    let merged: BTreeSet<Vec<u32>> = all_branches.iter().map(|g| g.merged_itemset.clone()).collect();
    assert!(merged.contains(&vec![0, 1, 2, 3, 5, 6]));
    assert!(merged.contains(&vec![0, 1, 2, 3, 5, 6, 7]));
    let elapsed = started.elapsed();
    assert!(elapsed.as_millis() < 10, "took {elapsed:?}, budget 10 ms");
    pass("criterion 2: expansion yields {0,1,2,3,5,6} by default and adds {0,1,2,3,5,6,7} across tie branches, under 10 ms");
}

// ---------------------------------------------------------------------------
// Criterion 3: published generated record
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_generated_instance_reproduction() {
    let person = EntityRecord {
        entity_id: "m.0dan05".into(),
        name: "danay".into(),
        entity_type: EntityType::Person,
    };
    let org = EntityRecord {
        entity_id: "m.0ele14".into(),
        name: "eleftherotypia".into(),
        entity_type: EntityType::Organization,
    };
    let templates = default_templates();
    let template = templates
        .iter()
        .find(|t| t.head_type == EntityType::Person && t.tail_type == EntityType::Organization)
        .unwrap();
    let got = instantiate_template(&person, &org, template, &[0, 1, 2], 0, 0).unwrap();
    assert_eq!(got.relation_label, "/business/person/company");
    assert_eq!(got.template_sentence, "danay has organization eleftherotypia");
    pass("criterion 3: generated record matches the published relation and sentence exactly");
}

// ---------------------------------------------------------------------------
// Criterion 4: greedy vs exhaustive code tables
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_krimp_oracle_equivalence() {
    let started = Instant::now();
    let mut rng = derive_rng(0xACCE, &[4]);
    let minsup = 3u64;
    let mut accepted = 0usize;
    let mut draws = 0usize;
    while accepted < 20 {
        draws += 1;
        assert!(draws < 500, "could not find 20 small fixtures");
        let db: Vec<Transaction> = (0..10)
            .map(|i| {
                let mut items: Vec<u32> = (0..6).filter(|_| rng.random_bool(0.45)).collect();
                if items.is_empty() {
                    items.push(rng.random_range(0..6));
                }
                Transaction::new(items, i).unwrap()
            })
            .collect();
        let candidates = mine_frequent(&db, minsup, 1_000_000).unwrap();
        if candidates.is_empty() || candidates.len() > 12 {
            continue;
        }
        accepted += 1;
        let greedy = build_code_table(&db, &KrimpConfig { minsup, ..Default::default() }).unwrap();
        // Exhaustive optimum over every candidate subset.
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << candidates.len()) {
            let mut ct = CodeTable::standard(&db);
            for (i, c) in candidates.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    ct.insert(c.itemset.clone(), c.support).unwrap();
                }
            }
            ct.refresh(&db);
            best = best.min(ct.encoded_size());
        }
        assert!(
            greedy.encoded_size() >= best - 1e-9,
            "greedy {} beat the exhaustive optimum {best}",
            greedy.encoded_size()
        );
        // Cover partition property on every transaction.
        for t in &db {
            let cover = greedy.cover(t).unwrap();
            let mut flat: Vec<u32> = cover.iter().flatten().copied().collect();
            let n = flat.len();
            flat.sort_unstable();
            flat.dedup();
            assert_eq!(flat.len(), n, "overlapping cover");
            assert_eq!(flat, t.items(), "cover does not union to the transaction");
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 30, "took {elapsed:?}, budget 30 s");
    pass("criterion 4: greedy never beats the exhaustive optimum on 20 fixtures; covers always partition, under 30 s");
}

// ---------------------------------------------------------------------------
// Criterion 5: analytic code lengths
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_code_length_identity() {
    let db: Vec<Transaction> = (0..8).map(|i| Transaction::new(vec![0, 1], i).unwrap()).collect();
    let standard = CodeTable::standard(&db);
    assert_eq!(standard.database_length(), 16.0, "standard table must encode exactly 16 bits");
    let mut accepted = CodeTable::standard(&db);
    accepted.insert(vec![0, 1], 8).unwrap();
    accepted.refresh(&db);
    assert_eq!(accepted.database_length(), 0.0, "accepted table must encode exactly 0 bits");
    pass("criterion 5: L(D|CT) is exactly 16 bits under singletons and exactly 0 bits after accepting the pair");
}

// ---------------------------------------------------------------------------
// Criterion 6: full-model gradients vs finite differences
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_gradient_correctness() {
    let started = Instant::now();
    let mut config = EncoderConfig::default();
    config.dropout_rate = 0.0; // float64 path, dropout off
    let mut rng = derive_rng(0xACCE, &[6]);
    let mut params = ModelParams::init(9, &config, &mut rng);
    // Two bags, three sentences total.
    let sent = |rows: &[usize], h: usize, t: usize| EncodedSentence {
        token_rows: rows.to_vec(),
        head_pos: h,
        tail_pos: t,
    };
    let bags = vec![
        BagExample {
            label: 2,
            sentences: vec![sent(&[0, 3, 5, 1, 9], 0, 4), sent(&[2, 3, 1, 7], 1, 3)],
        },
        BagExample { label: 0, sentences: vec![sent(&[8, 4, 6], 0, 2)] },
    ];
    let refs: Vec<&BagExample> = bags.iter().collect();

    // The leveled objective: attention aggregation over inputs carrying a
    // fixed adversarial perturbation (computed once, then a constant).
    let pert = adversarial_perturbation(&refs, &mut params, &config, Aggregation::Att, 0.05, None).unwrap();
    params.zero_grads();
    let opts = LossOptions { aggregation: Aggregation::Att, masks: None, perturbation: Some(&pert) };
    batch_loss_grad(&refs, &mut params, &config, &opts, false).unwrap();

    let mut state = (params, bags, pert);
    let report = check_gradient(
        &mut state,
        |(p, _, _)| p.params_mut(),
        |(p, bags, pert)| {
            let refs: Vec<&BagExample> = bags.iter().collect();
            let opts = LossOptions {
                aggregation: Aggregation::Att,
                masks: None,
                perturbation: Some(pert),
            };
            batch_loss(&refs, p, &config, &opts).unwrap()
        },
        1e-6,
        1e-4,
        25,
        &mut derive_rng(0xACCE, &[66]),
    )
    .unwrap();
    assert!(
        report.passed(),
        "max relative error {} at {:?} (tolerance 1e-4)",
        report.max_rel_error,
        report.worst
    );
    // All seven parameter groups contribute coordinates.
    assert!(report.coords_checked >= 7 * 5, "only {} coordinates checked", report.coords_checked);
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}, budget 60 s");
    pass("criterion 6: leveled attention loss gradient matches finite differences within 1e-4, under 60 s");
}

// ---------------------------------------------------------------------------
// Criterion 7: adversarial identities
// ---------------------------------------------------------------------------

fn tiny_training_corpus() -> Vec<SentenceInstance> {
    let paired = |tokens: &[&str], h: &str, t: &str, rel: &str| SentenceInstance {
        tokens: tokens.iter().map(|s| s.to_string()).collect(),
        mentions: vec![
            EntityMention { name: tokens[0].into(), id: h.into(), entity_type: EntityType::Person, start: 0, end: 1 },
            EntityMention {
                name: tokens[tokens.len() - 1].into(),
                id: t.into(),
                entity_type: EntityType::Location,
                start: tokens.len() - 1,
                end: tokens.len(),
            },
        ],
        head: Some(0),
        tail: Some(1),
        relation: rel.into(),
        provenance: Provenance::Original,
    };
    let mut out = Vec::new();
    for i in 0..5 {
        out.push(paired(&["ann", "stays", "around", &format!("lake{i}")[..]], &format!("p{i}"), &format!("l{i}"), "/r/stays"));
        out.push(paired(&["bob", "trades", "beside", &format!("dock{i}")[..]], &format!("q{i}"), &format!("m{i}"), "/r/trades"));
    }
    out
}

#[test]
fn criterion_07_adversarial_identities() {
    let started = Instant::now();
    let encoder = EncoderConfig {
        word_dim: 6,
        position_dim: 2,
        filters: 4,
        window: 3,
        max_relations: 8,
        dropout_rate: 0.5,
        max_sentence_len: 16,
        max_position_offset: 6,
    };
    let corpus = tiny_training_corpus();
    let vocab = build_vocabulary(&corpus, 1);
    let relations = RelationVocab::build(&corpus);
    let data = Dataset::prepare(&corpus, &vocab, relations, &encoder).unwrap();

    // Norm identity over several scales.
    let mut rng = derive_rng(0xACCE, &[7]);
    let mut params = ModelParams::init(data.vocab_size, &encoder, &mut rng);
    let batch: Vec<&BagExample> = data.bags.iter().map(|b| &b.example).collect();
    for epsilon in [1e-3 as Real, 0.01, 0.5, 3.0] {
        let pert =
            adversarial_perturbation(&batch, &mut params, &encoder, Aggregation::Att, epsilon, None).unwrap();
        assert!(
            (pert.global_norm() - epsilon).abs() <= 1e-9,
            "|e_adv| = {} for epsilon {epsilon}",
            pert.global_norm()
        );
    }

    // Epsilon 0 degenerates to the clean objective, bit for bit.
    let base = TrainConfig {
        learning_rate: 0.3,
        batch_size: 4,
        stage_epochs: Some(3),
        seed: 31,
        ..Default::default()
    };
    let clean = train(&data, &encoder, &TrainConfig { mode: TrainMode::Att, ..base.clone() }).unwrap();
    let adv0 = train(
        &data,
        &encoder,
        &TrainConfig { mode: TrainMode::AttAdv, epsilon: 0.0, ..base },
    )
    .unwrap();
    assert_eq!(
        clean.final_checkpoint.params, adv0.final_checkpoint.params,
        "epsilon 0 must reproduce the clean trajectory bit-exactly"
    );
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}, budget 60 s");
    pass("criterion 7: |e_adv| = epsilon within 1e-9 and epsilon 0 reproduces the clean trajectory, under 60 s");
}

// ---------------------------------------------------------------------------
// Criterion 8: attention simplex and convex hull
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_attention_simplex_and_hull() {
    let started = Instant::now();
    let mut rng = derive_rng(0xACCE, &[8]);
    for _ in 0..1000 {
        let dim = rng.random_range(2..12);
        let m = rng.random_range(1..7);
        let vectors: Vec<Vec<Real>> = (0..m)
            .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0) as Real).collect())
            .collect();
        let query: Vec<Real> = (0..dim).map(|_| rng.random_range(-2.0..2.0) as Real).collect();
        let refs: Vec<&[Real]> = vectors.iter().map(|v| v.as_slice()).collect();
        let out = attend(&refs, &query).unwrap();
        let sum: Real = out.weights.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-9, "weights sum to {sum}");
        assert!(out.weights.iter().all(|&w| w >= 0.0));
        for d in 0..dim {
            let lo = vectors.iter().map(|v| v[d]).fold(Real::INFINITY, Real::min);
            let hi = vectors.iter().map(|v| v[d]).fold(Real::NEG_INFINITY, Real::max);
            assert!(
                out.vector[d] >= lo - 1e-12 && out.vector[d] <= hi + 1e-12,
                "coordinate {d} escaped the hull"
            );
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 10, "took {elapsed:?}, budget 10 s");
    pass("criterion 8: 1000 random bags keep simplex weights and hull containment, under 10 s");
}

// ---------------------------------------------------------------------------
// Criteria 9 and 11: the full pipeline over a generated corpus
// ---------------------------------------------------------------------------

/// Deterministic synthetic corpus: three relations with distinctive context
/// trigrams, NA pairs, and unpaired noise sentences.
fn synthetic_corpus(
    pairs_per_relation: usize,
    sentences_per_pair: usize,
    na_pairs: usize,
    noise_sentences: usize,
    seed: u64,
) -> Vec<SentenceInstance> {
    let mut rng = derive_rng(seed, &[99]);
    let persons: Vec<String> = (0..10).map(|i| format!("per{i:02}")).collect();
    let locations: Vec<String> = (0..8).map(|i| format!("loc{i:02}")).collect();
    let orgs: Vec<String> = (0..8).map(|i| format!("org{i:02}")).collect();
    let noise: Vec<String> = (0..24).map(|i| format!("w{i:02}")).collect();
    let relations: [(&str, &[&str; 3], EntityType, EntityType); 3] = [
        ("/people/person/place_lived", &["resides", "quietly", "near"], EntityType::Person, EntityType::Location),
        ("/business/person/company", &["employed", "daily", "by"], EntityType::Person, EntityType::Organization),
        ("/business/company/location", &["headquartered", "firmly", "in"], EntityType::Organization, EntityType::Location),
    ];
    let name_pool = |ty: EntityType| match ty {
        EntityType::Person => &persons,
        EntityType::Location => &locations,
        EntityType::Organization => &orgs,
    };
    let mut out = Vec::new();
    let mut used_pairs: BTreeSet<(String, String)> = BTreeSet::new();
    for (rel, context, head_ty, tail_ty) in relations {
        let mut pairs = Vec::new();
        while pairs.len() < pairs_per_relation {
            let h = name_pool(head_ty)[rng.random_range(0..name_pool(head_ty).len())].clone();
            let t = name_pool(tail_ty)[rng.random_range(0..name_pool(tail_ty).len())].clone();
            if used_pairs.insert((h.clone(), t.clone())) {
                pairs.push((h, t));
            }
        }
        for (h, t) in pairs {
            for _ in 0..sentences_per_pair {
                let filler = &noise[rng.random_range(0..noise.len())];
                let tokens: Vec<String> = vec![
                    h.clone(),
                    context[0].into(),
                    context[1].into(),
                    context[2].into(),
                    filler.clone(),
                    t.clone(),
                ];
                out.push(SentenceInstance {
                    mentions: vec![
                        EntityMention { name: h.clone(), id: format!("e.{h}"), entity_type: head_ty, start: 0, end: 1 },
                        EntityMention { name: t.clone(), id: format!("e.{t}"), entity_type: tail_ty, start: 5, end: 6 },
                    ],
                    tokens,
                    head: Some(0),
                    tail: Some(1),
                    relation: rel.into(),
                    provenance: Provenance::Original,
                });
            }
        }
    }
    for _ in 0..na_pairs {
        let h = persons[rng.random_range(0..persons.len())].clone();
        let t = locations[rng.random_range(0..locations.len())].clone();
        if !used_pairs.insert((h.clone(), t.clone())) {
            continue;
        }
        let tokens: Vec<String> = vec![
            h.clone(),
            "saw".into(),
            noise[rng.random_range(0..noise.len())].clone(),
            "yesterday".into(),
            t.clone(),
        ];
        out.push(SentenceInstance {
            mentions: vec![
                EntityMention { name: h.clone(), id: format!("e.{h}"), entity_type: EntityType::Person, start: 0, end: 1 },
                EntityMention { name: t.clone(), id: format!("e.{t}"), entity_type: EntityType::Location, start: 4, end: 5 },
            ],
            tokens,
            head: Some(0),
            tail: Some(1),
            relation: "NA".into(),
            provenance: Provenance::Original,
        });
    }
    for _ in 0..noise_sentences {
        let tokens: Vec<String> = (0..5)
            .map(|_| noise[rng.random_range(0..noise.len())].clone())
            .collect();
        out.push(SentenceInstance {
            tokens,
            mentions: vec![],
            head: None,
            tail: None,
            relation: "NA".into(),
            provenance: Provenance::Original,
        });
    }
    out
}

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_relex")
}

fn run_ok(dir: &Path, args: &[&str]) -> String {
    let out = Command::new(binary())
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "command {:?} failed:\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn count_lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

fn read_metric_column(path: &Path, column: usize) -> f64 {
    let text = std::fs::read_to_string(path).unwrap();
    let row = text.lines().next().expect("metrics row");
    row.split('\t').nth(column).unwrap().parse().unwrap()
}

#[test]
fn criterion_09_synthetic_end_to_end() {
    let started = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    // 3 relations x 20 pairs x 7 sentences = 420, plus 60 NA pairs (some
    // collide and drop) and unpaired noise: about 600 sentences.
    let corpus = synthetic_corpus(20, 7, 60, 140, 0xE2E);
    assert!(corpus.len() >= 580 && corpus.len() <= 620, "corpus holds {}", corpus.len());
    save_corpus(dir.join("corpus.jsonl"), &corpus).unwrap();

    run_ok(dir, &["split", "--input", "corpus.jsonl", "--train-out", "train.jsonl", "--test-out", "test.jsonl", "--seed", "5"]);
    run_ok(dir, &["mine", "--input", "train.jsonl", "--vocab-out", "vocab.tsv", "--code-table-out", "ct.txt", "--min-frequency", "3", "--minsup", "8"]);
    run_ok(dir, &["expand", "--input", "train.jsonl", "--vocab", "vocab.tsv", "--code-table", "ct.txt", "--out", "expanded.jsonl", "--report-out", "report.tsv", "--k", "3", "--metric", "cosine"]);

    // Growth property: the expanded side holds at least as many instances.
    let train_count = count_lines(&dir.join("train.jsonl"));
    let expanded_count = count_lines(&dir.join("expanded.jsonl"));
    assert!(expanded_count >= train_count, "{expanded_count} < {train_count}");

    run_ok(
        dir,
        &[
            "train", "--input", "expanded.jsonl", "--vocab", "vocab.tsv", "--checkpoint-out", "model.json",
            "--mode", "lattadv-att", "--epochs", "10", "--batch-size", "16", "--seed", "5",
        ],
    );
    run_ok(dir, &["predict", "--checkpoint", "model.json", "--input", "test.jsonl", "--vocab", "vocab.tsv", "--out", "preds.tsv"]);
    run_ok(dir, &["eval", "--predictions", "preds.tsv", "--gold", "test.jsonl", "--metrics-out", "metrics.tsv", "--pr-out", "pr.tsv", "--label", "e2e", "--p-at", "10"]);

    // Metrics row: label, auc, max_f1, p@10, mean, borda.
    let p_at_10 = read_metric_column(&dir.join("metrics.tsv"), 3);
    assert!(p_at_10 >= 0.8, "P@10 = {p_at_10}, need >= 0.8");

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 600, "took {elapsed:?}, budget 10 min");
    pass(&format!(
        "criterion 9: end-to-end pipeline reached P@10 = {p_at_10:.3} with growth {train_count} -> {expanded_count}, in {elapsed:?}"
    ));
}

// ---------------------------------------------------------------------------
// Criterion 10: metric oracles
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_metrics_oracles() {
    let started = Instant::now();
    // Six predictions, flags T F T F F T, 3 gold facts. Hand values are
    // exact rationals.
    let preds: Vec<RankedPrediction> = [true, false, true, false, false, true]
        .iter()
        .enumerate()
        .map(|(i, &ok)| RankedPrediction {
            head_id: format!("h{i}"),
            tail_id: format!("t{i}"),
            relation: "/r".into(),
            score: 1.0 - i as f64 * 0.1,
            is_correct: ok,
        })
        .collect();
    assert_eq!(precision_at(&preds, 1), 1.0);
    assert_eq!(precision_at(&preds, 2), 0.5);
    assert_eq!(precision_at(&preds, 3), 2.0 / 3.0);
    assert_eq!(precision_at(&preds, 6), 0.5);
    let points = pr_curve(&preds, 3).unwrap();
    let expected = [
        (1.0 / 3.0, 1.0),
        (1.0 / 3.0, 0.5),
        (2.0 / 3.0, 2.0 / 3.0),
        (2.0 / 3.0, 0.5),
        (2.0 / 3.0, 0.4),
        (1.0, 0.5),
    ];
    for ((gr, gp), (er, ep)) in points.iter().zip(expected) {
        assert_eq!(*gr, er);
        assert_eq!(*gp, ep);
    }
    // Trapezoid by hand: 1/3 * 1 + 0 * (1 + .5)/2 + 1/3 * (.5 + 2/3)/2
    //   + 0 + 0 + 1/3 * (.4 + .5)/2
    let hand_auc = 1.0 / 3.0 + (2.0 / 3.0 - 1.0 / 3.0) * (0.5 + 2.0 / 3.0) / 2.0 + (1.0 - 2.0 / 3.0) * (0.4 + 0.5) / 2.0;
    assert!((auc(&points) - hand_auc).abs() <= 1e-9);
    // Max F1 by hand over the six points.
    let hand_f1 = points
        .iter()
        .map(|&(r, p)| if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
        .fold(0.0, f64::max);
    assert_eq!(max_f1(&points), hand_f1);
    assert!((hand_f1 - 2.0 * 0.5 * 1.0 / 1.5).abs() < 1e-12, "best point is (1.0, 0.5)");

    // Borda over a 4-row hand fixture (tallied in the library tests too).
    let report = |auc: f64, f1: f64, p1: f64, p2: f64, p3: f64| MetricReport {
        auc,
        max_f1: f1,
        p_at: vec![(100, p1), (200, p2), (300, p3)],
        mean_precision: (p1 + p2 + p3) / 3.0,
        pr_points: vec![],
    };
    let rows = vec![
        ("m1".to_string(), report(0.40, 0.45, 0.80, 0.70, 0.60)),
        ("m2".to_string(), report(0.42, 0.44, 0.80, 0.75, 0.58)),
        ("m3".to_string(), report(0.39, 0.45, 0.85, 0.70, 0.62)),
        ("m4".to_string(), report(0.42, 0.40, 0.70, 0.60, 0.55)),
    ];
    let table = borda_rank(&rows).unwrap();
    let by = |l: &str| table.iter().find(|r| r.label == l).unwrap().borda;
    assert_eq!((by("m1"), by("m2"), by("m3"), by("m4")), (8, 10, 12, 2));

    // Invariance under a strictly monotone rescaling of one column.
    let rescaled: Vec<(String, MetricReport)> = rows
        .iter()
        .map(|(l, r)| {
            let mut r = r.clone();
            r.auc = (r.auc * 3.0).exp();
            (l.clone(), r)
        })
        .collect();
    let table2 = borda_rank(&rescaled).unwrap();
    for (a, b) in table.iter().zip(&table2) {
        assert_eq!(a.label, b.label);
        assert_eq!(a.borda, b.borda);
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_millis() < 1000, "took {elapsed:?}, budget 1 s");
    pass("criterion 10: P@n, PR, AUC, max F1 and Borda match hand values; Borda invariant under rescaling, under 1 s");
}

// ---------------------------------------------------------------------------
// Criterion 11: byte-identical reruns of every command
// ---------------------------------------------------------------------------

#[test]
fn criterion_11_cli_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let corpus = synthetic_corpus(6, 4, 10, 30, 0xDE7);
    save_corpus(dir.join("corpus.jsonl"), &corpus).unwrap();

    let pipeline: Vec<Vec<&str>> = vec![
        vec!["split", "--input", "corpus.jsonl", "--train-out", "train.jsonl", "--test-out", "test.jsonl", "--seed", "9"],
        vec!["mine", "--input", "train.jsonl", "--vocab-out", "vocab.tsv", "--code-table-out", "ct.txt", "--min-frequency", "2", "--minsup", "4", "--stats-out", "stats.json"],
        vec!["expand", "--input", "train.jsonl", "--vocab", "vocab.tsv", "--code-table", "ct.txt", "--out", "expanded.jsonl", "--report-out", "report.tsv", "--k", "3", "--metric", "jaccard"],
        vec!["train", "--input", "expanded.jsonl", "--vocab", "vocab.tsv", "--checkpoint-out", "model.json", "--mode", "lattadv-max", "--epochs", "2", "--batch-size", "8", "--seed", "9"],
        vec!["predict", "--checkpoint", "model.json", "--input", "test.jsonl", "--vocab", "vocab.tsv", "--out", "preds.tsv"],
        vec!["eval", "--predictions", "preds.tsv", "--gold", "test.jsonl", "--metrics-out", "metrics.tsv", "--pr-out", "pr.tsv", "--label", "m1", "--p-at", "5,10"],
        vec!["eval", "--predictions", "preds.tsv", "--gold", "test.jsonl", "--metrics-out", "metrics2.tsv", "--label", "m2", "--p-at", "5,10"],
        vec!["rank", "--metrics", "metrics.tsv", "--metrics", "metrics2.tsv", "--out", "borda.tsv", "--p-at", "5,10"],
    ];
    // Data outputs each command writes (manifests carry wall-clock and sit
    // outside the byte-identical contract).
    let outputs = [
        "train.jsonl",
        "test.jsonl",
        "vocab.tsv",
        "ct.txt",
        "stats.json",
        "expanded.jsonl",
        "report.tsv",
        "model.json",
        "model.stage1.json",
        "model.stage2.json",
        "model.stage3.json",
        "preds.tsv",
        "metrics.tsv",
        "metrics2.tsv",
        "pr.tsv",
        "borda.tsv",
    ];

    for args in &pipeline {
        run_ok(dir, args);
    }
    let first: Vec<Vec<u8>> = outputs.iter().map(|f| std::fs::read(dir.join(f)).unwrap()).collect();
    for args in &pipeline {
        let mut with_force = args.clone();
        with_force.push("--force");
        run_ok(dir, &with_force);
    }
    for (name, before) in outputs.iter().zip(&first) {
        let after = std::fs::read(dir.join(name)).unwrap();
        assert_eq!(&after, before, "output {name} changed across identical reruns");
    }
    pass("criterion 11: every command rerun with identical inputs and seed is byte-identical");
}
