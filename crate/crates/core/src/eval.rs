//! Held-out evaluation over ranked fact lists: P@N, the precision-recall
//! curve, its trapezoidal area, max F1, and Borda-count ranking across
//! methods.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::{SentenceInstance, NA_LABEL};
use crate::error::{Error, Result};

/// A gold fact is a non-NA (head, tail, relation) triple; duplicates collapse.
pub fn gold_facts(instances: &[SentenceInstance]) -> BTreeSet<(String, String, String)> {
    instances
        .iter()
        .filter(|i| i.relation != NA_LABEL)
        .filter_map(|i| {
            let (h, t) = (i.head_mention()?, i.tail_mention()?);
            Some((h.id.clone(), t.id.clone(), i.relation.clone()))
        })
        .collect()
}

/// A scored prediction with its correctness against the gold facts.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedPrediction {
    pub head_id: String,
    pub tail_id: String,
    pub relation: String,
    pub score: f64,
    pub is_correct: bool,
}

/// Mark each prediction against the gold set. The input must already be
/// ranked (scores non-increasing).
pub fn mark_predictions(
    preds: &[(String, String, String, f64)],
    gold: &BTreeSet<(String, String, String)>,
) -> Result<Vec<RankedPrediction>> {
    if preds.windows(2).any(|w| w[0].3 < w[1].3) {
        return Err(Error::Contract("predictions are not ranked by non-increasing score".into()));
    }
    Ok(preds
        .iter()
        .map(|(h, t, r, s)| RankedPrediction {
            head_id: h.clone(),
            tail_id: t.clone(),
            relation: r.clone(),
            score: *s,
            is_correct: gold.contains(&(h.clone(), t.clone(), r.clone())),
        })
        .collect())
}

/// Fraction of correct predictions among the first min(n, len) entries;
/// an empty list yields 0 with a warning.
pub fn precision_at(preds: &[RankedPrediction], n: usize) -> f64 {
    assert!(n >= 1, "n must be >= 1");
    if preds.is_empty() {
        log::warn!("precision_at over an empty prediction list is 0");
        return 0.0;
    }
    let take = n.min(preds.len());
    let correct = preds[..take].iter().filter(|p| p.is_correct).count();
    correct as f64 / take as f64
}

/// One (recall, precision) point per rank k: precision = correct_k / k,
/// recall = correct_k / total_gold.
pub fn pr_curve(preds: &[RankedPrediction], total_gold: usize) -> Result<Vec<(f64, f64)>> {
    if total_gold == 0 {
        return Err(Error::Domain("pr_curve needs at least one gold fact".into()));
    }
    let mut correct = 0usize;
    Ok(preds
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if p.is_correct {
                correct += 1;
            }
            (correct as f64 / total_gold as f64, correct as f64 / (i + 1) as f64)
        })
        .collect())
}

/// Trapezoidal area under the precision-recall points over recall in
/// [0, max recall], clipped to [0,1]. The segment from recall 0 to the first
/// point integrates at the first point's precision, so a perfect ranking
/// that covers every gold fact scores exactly 1.
pub fn auc(points: &[(f64, f64)]) -> f64 {
    if points.is_empty() {
        log::warn!("auc of an empty curve is 0");
        return 0.0;
    }
    let mut area = points[0].0 * points[0].1;
    for w in points.windows(2) {
        let (r0, p0) = w[0];
        let (r1, p1) = w[1];
        area += (r1 - r0) * (p0 + p1) / 2.0;
    }
    area.clamp(0.0, 1.0)
}

/// max over points of 2PR/(P+R), 0 where P+R = 0.
pub fn max_f1(points: &[(f64, f64)]) -> f64 {
    points
        .iter()
        .map(|&(r, p)| if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
        .fold(0.0, f64::max)
}

/// The per-method numbers of one evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub auc: f64,
    pub max_f1: f64,
    /// (n, precision) pairs in ascending n.
    pub p_at: Vec<(usize, f64)>,
    pub mean_precision: f64,
    pub pr_points: Vec<(f64, f64)>,
}

/// Evaluate one ranked prediction list at the given P@N cutoffs.
pub fn evaluate(
    preds: &[RankedPrediction],
    total_gold: usize,
    p_at_ns: &[usize],
) -> Result<MetricReport> {
    let points = if total_gold == 0 {
        log::warn!("no gold facts; all metrics are 0");
        Vec::new()
    } else {
        pr_curve(preds, total_gold)?
    };
    let p_at: Vec<(usize, f64)> = p_at_ns.iter().map(|&n| (n, precision_at(preds, n))).collect();
    let mean_precision = if p_at.is_empty() {
        0.0
    } else {
        p_at.iter().map(|(_, p)| p).sum::<f64>() / p_at.len() as f64
    };
    Ok(MetricReport {
        auc: auc(&points),
        max_f1: max_f1(&points),
        p_at,
        mean_precision,
        pr_points: points,
    })
}

/// One labeled row of a Borda table.
#[derive(Debug, Clone, PartialEq)]
pub struct BordaRow {
    pub label: String,
    pub report: MetricReport,
    pub borda: u64,
}

/// Borda count over the metric columns (AUC, max F1, each P@N, mean): a row
/// earns one point per strictly worse row in each column; ties earn equal
/// points. Output is sorted by score descending, label ascending on ties.
pub fn borda_rank(rows: &[(String, MetricReport)]) -> Result<Vec<BordaRow>> {
    if rows.len() < 2 {
        return Err(Error::Contract("borda_rank needs at least two rows".into()));
    }
    let n_pat = rows[0].1.p_at.len();
    if rows.iter().any(|(_, r)| r.p_at.len() != n_pat) {
        return Err(Error::Contract("rows disagree on the P@N columns".into()));
    }
    let columns: Vec<Vec<f64>> = {
        let mut cols = vec![
            rows.iter().map(|(_, r)| r.auc).collect::<Vec<f64>>(),
            rows.iter().map(|(_, r)| r.max_f1).collect(),
        ];
        for i in 0..n_pat {
            cols.push(rows.iter().map(|(_, r)| r.p_at[i].1).collect());
        }
        cols.push(rows.iter().map(|(_, r)| r.mean_precision).collect());
        cols
    };
    let mut out: Vec<BordaRow> = rows
        .iter()
        .enumerate()
        .map(|(i, (label, report))| {
            let borda = columns
                .iter()
                .map(|col| col.iter().filter(|&&v| v < col[i]).count() as u64)
                .sum();
            BordaRow { label: label.clone(), report: report.clone(), borda }
        })
        .collect();
    out.sort_by(|a, b| b.borda.cmp(&a.borda).then_with(|| a.label.cmp(&b.label)));
    Ok(out)
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

/// Metrics file row: `label auc max_f1 p@.. mean borda`, tab-separated,
/// 3 decimal digits. Rows without a Borda score write 0.
pub fn write_metrics(path: impl AsRef<Path>, rows: &[(String, MetricReport, u64)]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (label, r, borda) in rows {
        let pats = r
            .p_at
            .iter()
            .map(|(_, p)| format!("{p:.3}"))
            .collect::<Vec<_>>()
            .join("\t");
        writeln!(
            w,
            "{label}\t{:.3}\t{:.3}\t{pats}\t{:.3}\t{borda}",
            r.auc, r.max_f1, r.mean_precision
        )
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read a metrics file back; `p_at_ns` names the P@N columns it was written
/// with. PR points are not stored in metric files.
pub fn read_metrics(path: impl AsRef<Path>, p_at_ns: &[usize]) -> Result<Vec<(String, MetricReport)>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        // label, auc, max_f1, the P@N columns, mean, borda.
        let expect = 5 + p_at_ns.len();
        if parts.len() != expect {
            return Err(Error::parse(path, lineno, None, format!("expected {expect} fields, found {}", parts.len())));
        }
        let fnum = |s: &str, field: &'static str| -> Result<f64> {
            s.parse().map_err(|_| Error::parse(path, lineno, Some(field), "not a number"))
        };
        let label = parts[0].to_string();
        let auc = fnum(parts[1], "auc")?;
        let max_f1 = fnum(parts[2], "max_f1")?;
        let mut p_at = Vec::new();
        for (i, &n) in p_at_ns.iter().enumerate() {
            p_at.push((n, fnum(parts[3 + i], "p_at")?));
        }
        let mean_precision = fnum(parts[3 + p_at_ns.len()], "mean")?;
        out.push((
            label,
            MetricReport { auc, max_f1, p_at, mean_precision, pr_points: Vec::new() },
        ));
    }
    Ok(out)
}

/// PR-curve file: `recall<TAB>precision` per rank.
pub fn write_pr_curve(path: impl AsRef<Path>, points: &[(f64, f64)]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (r, p) in points {
        writeln!(w, "{r:.6}\t{p:.6}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
