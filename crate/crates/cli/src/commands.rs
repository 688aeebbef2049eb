//! The seven pipeline commands. Every command resolves its settings from
//! (flag, config key, default), refuses to overwrite outputs without
//! `--force`, writes its data outputs deterministically, and drops a run
//! manifest next to its primary output.

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;

use relex_core::corpus::{
    build_vocabulary_filtered, load_corpus, save_corpus, to_transactions,
    Vocabulary,
};
use relex_core::eval::{borda_rank, evaluate, gold_facts, mark_predictions, read_metrics, write_metrics, write_pr_curve};
use relex_core::expand::{default_templates, expand_all, to_sentence_instance, EntityLexicon, SimilarityMetric};
use relex_core::krimp::{build_code_table, compression_ratio, CodeTable, KrimpConfig, DEFAULT_CANDIDATE_CAP};
use relex_core::model::{Checkpoint, EncoderConfig, ModelParams, RelationVocab};
use relex_core::numerics::{derive_rng, read_embeddings};
use relex_core::trainer::{predict, train_from, Dataset, TrainConfig, TrainMode};

use crate::config::{required_path, setting, PipelineConfig};
use crate::manifest::{ensure_writable, ManifestBuilder};
use crate::Globals;

const STREAM_SPLIT: u64 = 10;
const STREAM_INIT: u64 = 1;

fn resolved_seed(cli: &Globals, config: &PipelineConfig) -> u64 {
    setting(cli.seed, config.seed, 42)
}

// ---------------------------------------------------------------------------
// split
// ---------------------------------------------------------------------------

#[derive(clap::Args, Debug)]
pub struct SplitArgs {
    /// Corpus to split (config: corpus).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Training-side output (config: train_corpus).
    #[arg(long)]
    pub train_out: Option<PathBuf>,
    /// Test-side output (config: test_corpus).
    #[arg(long)]
    pub test_out: Option<PathBuf>,
    /// Fraction of sentences that go to the training side.
    #[arg(long)]
    pub ratio: Option<f64>,
}

/// Seeded split at the entity-pair level: all sentences sharing a pair land
/// on the same side, so no pair leaks across the split.
pub fn cmd_split(cli: &Globals, config: &PipelineConfig, args: SplitArgs) -> Result<()> {
    let input = required_path(args.input, &config.corpus, "--input", "corpus")?;
    let train_out = required_path(args.train_out, &config.train_corpus, "--train-out", "train_corpus")?;
    let test_out = required_path(args.test_out, &config.test_corpus, "--test-out", "test_corpus")?;
    let ratio = setting(args.ratio, config.split_ratio, 0.8);
    if !(0.0..=1.0).contains(&ratio) {
        bail!("split ratio {ratio} outside [0,1]");
    }
    let seed = resolved_seed(cli, config);
    ensure_writable(&train_out, cli.force)?;
    ensure_writable(&test_out, cli.force)?;
    let mut manifest = ManifestBuilder::new("split");
    manifest.input(&input)?;

    let instances = load_corpus(&input)?;
    // Group sentence indices by entity pair; unpaired sentences form
    // singleton groups.
    let mut by_pair: std::collections::BTreeMap<(String, String), Vec<usize>> = Default::default();
    let mut solo: Vec<Vec<usize>> = Vec::new();
    for (i, inst) in instances.iter().enumerate() {
        match (inst.head_mention(), inst.tail_mention()) {
            (Some(h), Some(t)) => by_pair.entry((h.id.clone(), t.id.clone())).or_default().push(i),
            _ => solo.push(vec![i]),
        }
    }
    let mut groups: Vec<Vec<usize>> = by_pair.into_values().collect();
    groups.extend(solo);
    {
        use rand::seq::SliceRandom;
        let mut rng = derive_rng(seed, &[STREAM_SPLIT]);
        groups.shuffle(&mut rng);
    }
    let total = instances.len();
    let mut train_idx: Vec<usize> = Vec::new();
    let mut test_idx: Vec<usize> = Vec::new();
    for group in groups {
        if (train_idx.len() as f64) < ratio * total as f64 {
            train_idx.extend(group);
        } else {
            test_idx.extend(group);
        }
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let side = |idx: &[usize]| idx.iter().map(|&i| instances[i].clone()).collect::<Vec<_>>();
    save_corpus(&train_out, &side(&train_idx))?;
    save_corpus(&test_out, &side(&test_idx))?;
    println!(
        "split {} sentences into {} train / {} test (ratio {ratio}, seed {seed})",
        total,
        train_idx.len(),
        test_idx.len()
    );
    manifest
        .seed(seed)
        .settings(json!({"ratio": ratio}))
        .output(&train_out)
        .output(&test_out)
        .write(&train_out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// mine
// ---------------------------------------------------------------------------

#[derive(clap::Args, Debug)]
pub struct MineArgs {
    /// Corpus to mine (config: train_corpus).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Vocabulary output (config: vocabulary).
    #[arg(long)]
    pub vocab_out: Option<PathBuf>,
    /// Code-table output (config: code_table).
    #[arg(long)]
    pub code_table_out: Option<PathBuf>,
    /// Mining stats output (config: mine_stats).
    #[arg(long)]
    pub stats_out: Option<PathBuf>,
    /// Vocabulary frequency threshold.
    #[arg(long)]
    pub min_frequency: Option<u64>,
    /// Stopword file, one word per line (config: stopwords).
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    /// Minimum support for candidate itemsets.
    #[arg(long)]
    pub minsup: Option<u64>,
    /// Enable post-acceptance pruning.
    #[arg(long)]
    pub prune: bool,
    /// Abort when the frequent-set count exceeds this cap.
    #[arg(long)]
    pub candidate_cap: Option<usize>,
}

pub fn cmd_mine(cli: &Globals, config: &PipelineConfig, args: MineArgs) -> Result<()> {
    let input = required_path(args.input, &config.train_corpus, "--input", "train_corpus")?;
    let vocab_out = required_path(args.vocab_out, &config.vocabulary, "--vocab-out", "vocabulary")?;
    let ct_out = required_path(args.code_table_out, &config.code_table, "--code-table-out", "code_table")?;
    let min_frequency = setting(args.min_frequency, config.min_frequency, 100);
    let minsup = setting(args.minsup, config.minsup, 2);
    let prune = args.prune || config.prune.unwrap_or(false);
    let candidate_cap = setting(args.candidate_cap, config.candidate_cap, DEFAULT_CANDIDATE_CAP);
    let stats_out = args.stats_out.or_else(|| config.mine_stats.clone());
    let stopword_path = args.stopwords.or_else(|| config.stopwords.clone());
    ensure_writable(&vocab_out, cli.force)?;
    ensure_writable(&ct_out, cli.force)?;
    if let Some(p) = &stats_out {
        ensure_writable(p, cli.force)?;
    }
    let mut manifest = ManifestBuilder::new("mine");
    manifest.input(&input)?;

    let instances = load_corpus(&input)?;
    if instances.is_empty() {
        bail!("corpus {} is empty; nothing to mine", input.display());
    }
    let stopwords: HashSet<String> = match &stopword_path {
        Some(p) => {
            manifest.input(p)?;
            std::fs::read_to_string(p)
                .with_context(|| format!("cannot read stopwords {}", p.display()))?
                .lines()
                .map(|l| l.trim().to_lowercase())
                .filter(|l| !l.is_empty())
                .collect()
        }
        None => HashSet::new(),
    };
    let vocab = build_vocabulary_filtered(&instances, min_frequency, &stopwords);
    let db = to_transactions(&instances, &vocab);
    if db.is_empty() {
        bail!("no transactions: every sentence is out-of-vocabulary at min_frequency {min_frequency}");
    }
    let krimp = KrimpConfig { minsup, prune, candidate_cap };
    let ct = build_code_table(&db, &krimp)?;
    let ratio = compression_ratio(&db, &ct)?;
    vocab.write_tsv(&vocab_out)?;
    ct.write(&ct_out)?;
    let non_singleton = ct.entries().iter().filter(|e| e.itemset.len() > 1).count();
    let stats = json!({
        "sentences": instances.len(),
        "transactions": db.len(),
        "vocabulary_size": vocab.len(),
        "code_table_entries": ct.entries().len(),
        "non_singleton_entries": non_singleton,
        "total_length_bits": ct.encoded_size(),
        "compression_ratio": ratio,
    });
    if let Some(p) = &stats_out {
        std::fs::write(p, serde_json::to_string_pretty(&stats)?)
            .with_context(|| format!("cannot write stats {}", p.display()))?;
    }
    println!(
        "mined {} transactions over {} words: {} non-singleton entries, compression ratio {ratio:.4}",
        db.len(),
        vocab.len(),
        non_singleton
    );
    manifest
        .settings(json!({
            "min_frequency": min_frequency,
            "minsup": minsup,
            "prune": prune,
            "candidate_cap": candidate_cap,
            "stats": stats,
        }))
        .output(&vocab_out)
        .output(&ct_out)
        .write(&ct_out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// expand
// ---------------------------------------------------------------------------

#[derive(clap::Args, Debug)]
pub struct ExpandArgs {
    /// Corpus to expand (config: train_corpus).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Vocabulary file (config: vocabulary).
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Code-table file (config: code_table).
    #[arg(long)]
    pub code_table: Option<PathBuf>,
    /// Expanded corpus output (config: expanded_corpus).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Expansion report output (config: expansion_report).
    #[arg(long)]
    pub report_out: Option<PathBuf>,
    /// Maximum number of similarity ranks to union onto a half-ideal base.
    #[arg(long)]
    pub k: Option<usize>,
    /// Similarity metric: cosine or jaccard.
    #[arg(long)]
    pub metric: Option<String>,
    /// Emit every tie branch instead of the lexicographically first.
    #[arg(long)]
    pub all_tie_branches: bool,
    /// Also append the generated instances to the test corpus.
    #[arg(long)]
    pub expand_test: bool,
    /// Test corpus (config: test_corpus; only with --expand-test).
    #[arg(long)]
    pub test_input: Option<PathBuf>,
    /// Expanded test corpus output (config: expanded_test_corpus).
    #[arg(long)]
    pub test_out: Option<PathBuf>,
}

pub fn cmd_expand(cli: &Globals, config: &PipelineConfig, args: ExpandArgs) -> Result<()> {
    let input = required_path(args.input, &config.train_corpus, "--input", "train_corpus")?;
    let vocab_path = required_path(args.vocab, &config.vocabulary, "--vocab", "vocabulary")?;
    let ct_path = required_path(args.code_table, &config.code_table, "--code-table", "code_table")?;
    let out = required_path(args.out, &config.expanded_corpus, "--out", "expanded_corpus")?;
    let report_out = required_path(args.report_out, &config.expansion_report, "--report-out", "expansion_report")?;
    let k = setting(args.k, config.k, 7);
    let metric: SimilarityMetric = setting(args.metric, config.metric.clone(), "jaccard".into()).parse()?;
    let all_ties = args.all_tie_branches || config.all_tie_branches.unwrap_or(false);
    let expand_test = args.expand_test || config.expand_test.unwrap_or(false);
    ensure_writable(&out, cli.force)?;
    ensure_writable(&report_out, cli.force)?;
    let mut manifest = ManifestBuilder::new("expand");
    manifest.input(&input)?.input(&vocab_path)?.input(&ct_path)?;

    let instances = load_corpus(&input)?;
    let vocab = Vocabulary::read_tsv(&vocab_path)?;
    let ct = CodeTable::read(&ct_path)?;
    let lexicon = EntityLexicon::from_corpus(&instances, &vocab);
    if lexicon.is_empty() {
        bail!(
            "entity lexicon is empty: no vocabulary word matches a mention name in {}",
            input.display()
        );
    }
    let templates = default_templates();
    let generated = expand_all(&ct, &lexicon, &templates, k, metric, all_ties)?;

    let mut expanded = instances.clone();
    expanded.extend(generated.iter().map(to_sentence_instance));
    save_corpus(&out, &expanded)?;

    // Report rows mirror the generated-record fields.
    let report_file = std::fs::File::create(&report_out)
        .with_context(|| format!("cannot write report {}", report_out.display()))?;
    let mut w = std::io::BufWriter::new(report_file);
    writeln!(w, "#relation\tentity1.id\tentity1.name\tentity2.id\tentity2.name\tF*\tTP\tbase_index\tk_used")?;
    for g in &generated {
        let fstar = g
            .merged_itemset
            .iter()
            .map(|&i| vocab.word(i))
            .collect::<Vec<_>>()
            .join(" ");
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            g.relation_label,
            g.head.id,
            g.head.name,
            g.tail.id,
            g.tail.name,
            fstar,
            g.template_sentence,
            g.base_index,
            g.k_used
        )?;
    }
    w.flush()?;

    println!(
        "expanded {} sentences with {} generated instances (k={k}, {metric}) -> {}",
        instances.len(),
        generated.len(),
        expanded.len()
    );
    manifest
        .settings(json!({
            "k": k,
            "metric": metric.to_string(),
            "all_tie_branches": all_ties,
            "expand_test": expand_test,
            "generated": generated.len(),
        }))
        .output(&out)
        .output(&report_out);

    if expand_test {
        let test_in = required_path(args.test_input, &config.test_corpus, "--test-input", "test_corpus")?;
        let test_out = required_path(
            args.test_out,
            &config.expanded_test_corpus,
            "--test-out",
            "expanded_test_corpus",
        )?;
        ensure_writable(&test_out, cli.force)?;
        manifest.input(&test_in)?;
        let test_instances = load_corpus(&test_in)?;
        let mut expanded_test = test_instances.clone();
        expanded_test.extend(generated.iter().map(to_sentence_instance));
        save_corpus(&test_out, &expanded_test)?;
        println!(
            "expanded test side {} -> {} sentences",
            test_instances.len(),
            expanded_test.len()
        );
        manifest.output(&test_out);
    }
    manifest.write(&out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(clap::Args, Debug)]
pub struct TrainArgs {
    /// Training corpus (config: train_corpus).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Vocabulary file (config: vocabulary).
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Final checkpoint output (config: checkpoint).
    #[arg(long)]
    pub checkpoint_out: Option<PathBuf>,
    /// Training mode: att | att-adv | max-adv | lattadv-att | lattadv-max.
    #[arg(long)]
    pub mode: Option<String>,
    /// Adversarial perturbation norm.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Epochs per stage (config: max_epochs).
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Explicit per-stage epoch override (config: stage_epochs).
    #[arg(long)]
    pub stage_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Dropout rate on the sentence vector.
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Pretrained word vectors (config: embeddings).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

pub fn cmd_train(cli: &Globals, config: &PipelineConfig, args: TrainArgs) -> Result<()> {
    let input = required_path(args.input, &config.train_corpus, "--input", "train_corpus")?;
    let vocab_path = required_path(args.vocab, &config.vocabulary, "--vocab", "vocabulary")?;
    let ckpt_out = required_path(args.checkpoint_out, &config.checkpoint, "--checkpoint-out", "checkpoint")?;
    let mode: TrainMode = setting(args.mode, config.mode.clone(), "lattadv-att".into()).parse()?;
    let seed = resolved_seed(cli, config);
    let train_config = TrainConfig {
        learning_rate: setting(args.learning_rate, config.learning_rate, 0.5),
        batch_size: setting(args.batch_size, config.batch_size, 160),
        max_epochs: setting(args.epochs, config.max_epochs, 60),
        weight_decay: setting(args.weight_decay, config.weight_decay, 1e-5),
        epsilon: setting(args.epsilon, config.epsilon, 0.01),
        seed,
        mode,
        stage_epochs: args.stage_epochs.or(config.stage_epochs),
    };
    let encoder = EncoderConfig {
        dropout_rate: setting(args.dropout, config.dropout_rate, 0.5),
        ..EncoderConfig::default()
    };
    let embeddings_path = args.embeddings.or_else(|| config.embeddings.clone());
    ensure_writable(&ckpt_out, cli.force)?;
    let mut manifest = ManifestBuilder::new("train");
    manifest.input(&input)?.input(&vocab_path)?;

    let instances = load_corpus(&input)?;
    let vocab = Vocabulary::read_tsv(&vocab_path)?;
    let relations = RelationVocab::build(&instances);
    let data = Dataset::prepare(&instances, &vocab, relations, &encoder)?;
    if data.bags.is_empty() {
        bail!("no bags: the corpus has no sentences with resolved entity pairs");
    }

    let mut rng = derive_rng(seed, &[STREAM_INIT]);
    let mut params = ModelParams::init(data.vocab_size, &encoder, &mut rng);
    if let Some(p) = &embeddings_path {
        manifest.input(p)?;
        let rows = read_embeddings(p)?;
        let loaded = params.load_word_vectors(&rows, &vocab)?;
        println!("loaded {loaded} pretrained word vectors from {}", p.display());
    }
    let run = train_from(&data, &encoder, &train_config, params)?;

    run.final_checkpoint.save(&ckpt_out)?;
    manifest.output(&ckpt_out);
    let mut stage_paths = Vec::new();
    if run.stages.len() > 1 {
        for stage in &run.stages {
            let mut name = ckpt_out.file_stem().unwrap_or_default().to_os_string();
            name.push(format!(".stage{}.json", stage.stage_index));
            let path = ckpt_out.with_file_name(name);
            ensure_writable(&path, cli.force)?;
            stage.checkpoint.save(&path)?;
            manifest.output(&path);
            stage_paths.push(path);
        }
    }
    for stage in &run.stages {
        let last = stage.loss_trace.last().copied().unwrap_or(f64::NAN);
        println!(
            "stage {} ({}{}): {} epochs, final mean loss {last:.6}",
            stage.stage_index,
            stage.aggregation,
            if stage.perturbed { ", perturbed" } else { "" },
            stage.loss_trace.len()
        );
    }
    manifest
        .seed(seed)
        .settings(json!({
            "train": train_config,
            "encoder": encoder,
            "bags": data.bags.len(),
            "relations": data.relations.len(),
            "loss_traces": run.stages.iter().map(|s| s.loss_trace.clone()).collect::<Vec<_>>(),
        }))
        .write(&ckpt_out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

#[derive(clap::Args, Debug)]
pub struct PredictArgs {
    /// Trained checkpoint (config: checkpoint).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Corpus to score (config: test_corpus).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Vocabulary file (config: vocabulary).
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Ranked predictions output (config: predictions).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_predict(cli: &Globals, config: &PipelineConfig, args: PredictArgs) -> Result<()> {
    let ckpt_path = required_path(args.checkpoint, &config.checkpoint, "--checkpoint", "checkpoint")?;
    let input = required_path(args.input, &config.test_corpus, "--input", "test_corpus")?;
    let vocab_path = required_path(args.vocab, &config.vocabulary, "--vocab", "vocabulary")?;
    let out = required_path(args.out, &config.predictions, "--out", "predictions")?;
    ensure_writable(&out, cli.force)?;
    let mut manifest = ManifestBuilder::new("predict");
    manifest.input(&ckpt_path)?.input(&input)?.input(&vocab_path)?;

    let ckpt = Checkpoint::load(&ckpt_path)?;
    let (params, relations) = ckpt.restore()?;
    let vocab = Vocabulary::read_tsv(&vocab_path)?;
    if vocab.len() != ckpt.vocab_size {
        bail!(
            "vocabulary mismatch: checkpoint was trained over {} words, {} holds {}",
            ckpt.vocab_size,
            vocab_path.display(),
            vocab.len()
        );
    }
    let instances = load_corpus(&input)?;
    let data = Dataset::prepare(&instances, &vocab, relations, &ckpt.config)?;
    let preds = predict(
        &params,
        &data.relations,
        &ckpt.config,
        ckpt.inference_aggregation,
        &data.bags,
    )?;
    let file = std::fs::File::create(&out).with_context(|| format!("cannot write {}", out.display()))?;
    let mut w = std::io::BufWriter::new(file);
    for p in &preds {
        writeln!(w, "{}\t{}\t{}\t{}", p.head_id, p.tail_id, p.relation, p.score)?;
    }
    w.flush()?;
    println!("scored {} bags -> {} ranked predictions", data.bags.len(), preds.len());
    manifest
        .settings(json!({"aggregation": ckpt.inference_aggregation, "bags": data.bags.len()}))
        .output(&out)
        .write(&out)?;
    Ok(())
}

/// Parse a predictions file: `head<TAB>tail<TAB>relation<TAB>score` rows.
pub fn read_predictions(path: &Path) -> Result<Vec<(String, String, String, f64)>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read predictions {}", path.display()))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 4 {
            bail!("{}:{}: expected 4 tab-separated fields", path.display(), lineno + 1);
        }
        let score: f64 = parts[3]
            .parse()
            .with_context(|| format!("{}:{}: bad score", path.display(), lineno + 1))?;
        out.push((parts[0].to_string(), parts[1].to_string(), parts[2].to_string(), score));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(clap::Args, Debug)]
pub struct EvalArgs {
    /// Ranked predictions file (config: predictions).
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Gold corpus the predictions are judged against (config: test_corpus).
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Metrics output (config: metrics).
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
    /// Precision-recall curve output (config: pr_curve).
    #[arg(long)]
    pub pr_out: Option<PathBuf>,
    /// Row label in the metrics file (config: label).
    #[arg(long)]
    pub label: Option<String>,
    /// P@N cutoffs (config: p_at).
    #[arg(long, value_delimiter = ',')]
    pub p_at: Option<Vec<usize>>,
}

pub fn cmd_eval(cli: &Globals, config: &PipelineConfig, args: EvalArgs) -> Result<()> {
    let preds_path = required_path(args.predictions, &config.predictions, "--predictions", "predictions")?;
    let gold_path = required_path(args.gold, &config.test_corpus, "--gold", "test_corpus")?;
    let metrics_out = required_path(args.metrics_out, &config.metrics, "--metrics-out", "metrics")?;
    let pr_out = args.pr_out.or_else(|| config.pr_curve.clone());
    let label = setting(args.label, config.label.clone(), "run".into());
    let p_at = setting(args.p_at, config.p_at.clone(), vec![100, 200, 300]);
    ensure_writable(&metrics_out, cli.force)?;
    if let Some(p) = &pr_out {
        ensure_writable(p, cli.force)?;
    }
    let mut manifest = ManifestBuilder::new("eval");
    manifest.input(&preds_path)?.input(&gold_path)?;

    let raw = read_predictions(&preds_path)?;
    let gold = gold_facts(&load_corpus(&gold_path)?);
    if gold.is_empty() {
        log::warn!("gold corpus {} holds no labeled facts; metrics will be 0", gold_path.display());
    }
    let marked = mark_predictions(&raw, &gold)?;
    let report = evaluate(&marked, gold.len(), &p_at)?;
    write_metrics(&metrics_out, &[(label.clone(), report.clone(), 0)])?;
    if let Some(p) = &pr_out {
        write_pr_curve(p, &report.pr_points)?;
        manifest.output(p);
    }
    let pats = report
        .p_at
        .iter()
        .map(|(n, p)| format!("P@{n}={p:.3}"))
        .collect::<Vec<_>>()
        .join(" ");
    println!(
        "{label}: AUC={:.3} maxF1={:.3} {pats} mean={:.3} ({} predictions, {} gold facts)",
        report.auc,
        report.max_f1,
        report.mean_precision,
        marked.len(),
        gold.len()
    );
    manifest
        .settings(json!({"label": label, "p_at": p_at, "gold_facts": gold.len()}))
        .output(&metrics_out)
        .write(&metrics_out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// rank
// ---------------------------------------------------------------------------

#[derive(clap::Args, Debug)]
pub struct RankArgs {
    /// Metrics files to aggregate (two or more rows in total).
    #[arg(long, num_args = 1.., required = true)]
    pub metrics: Vec<PathBuf>,
    /// Borda table output (config: borda_table).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// P@N cutoffs the metrics files were written with (config: p_at).
    #[arg(long, value_delimiter = ',')]
    pub p_at: Option<Vec<usize>>,
}

pub fn cmd_rank(cli: &Globals, config: &PipelineConfig, args: RankArgs) -> Result<()> {
    let out = required_path(args.out, &config.borda_table, "--out", "borda_table")?;
    let p_at = setting(args.p_at, config.p_at.clone(), vec![100, 200, 300]);
    ensure_writable(&out, cli.force)?;
    let mut manifest = ManifestBuilder::new("rank");
    let mut rows = Vec::new();
    for path in &args.metrics {
        manifest.input(path)?;
        rows.extend(read_metrics(path, &p_at)?);
    }
    let table = borda_rank(&rows)?;
    let out_rows: Vec<(String, relex_core::eval::MetricReport, u64)> = table
        .iter()
        .map(|r| (r.label.clone(), r.report.clone(), r.borda))
        .collect();
    write_metrics(&out, &out_rows)?;
    for r in &table {
        println!("{}\tborda={}", r.label, r.borda);
    }
    manifest
        .settings(json!({"p_at": p_at, "rows": rows.len()}))
        .output(&out)
        .write(&out)?;
    Ok(())
}
