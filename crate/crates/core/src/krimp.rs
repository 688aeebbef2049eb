//! Code-table construction by two-part MDL: greedy cover, Shannon code
//! lengths from usage counts, and accept-if-compresses candidate selection.
//!
//! The total cost of a database `D` under a code table `CT` is
//! `L(D,CT) = L(D|CT) + L(CT|D)`, where `L(D|CT)` sums the code lengths of
//! every cover itemset of every transaction and `L(CT|D)` describes the
//! table itself: each positive-usage entry costs its itemset spelled in
//! standard (singleton) codes plus its own code length.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::Transaction;
use crate::error::{Error, Result};

pub const DEFAULT_CANDIDATE_CAP: usize = 1_000_000;

/// A frequent itemset proposed for insertion. Always size >= 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub itemset: Vec<u32>,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodeTableEntry {
    pub itemset: Vec<u32>,
    pub usage: u64,
    pub support: u64,
    /// -log2(usage / total_usage) bits; 0 when usage is 0.
    pub code_length: f64,
}

impl CodeTableEntry {
    fn is_singleton(&self) -> bool {
        self.itemset.len() == 1
    }
}

/// Ordered collection of itemsets with usages and code lengths. Entries sit
/// in cover order: cardinality descending, support descending, lexicographic
/// ascending. Every item of the universe is present as a singleton, so any
/// transaction over the universe has a cover.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeTable {
    entries: Vec<CodeTableEntry>,
    standard_lengths: BTreeMap<u32, f64>,
    total_usage: u64,
    encoded_size: f64,
}

fn cover_key(itemset: &[u32], support: u64) -> (std::cmp::Reverse<usize>, std::cmp::Reverse<u64>, Vec<u32>) {
    (std::cmp::Reverse(itemset.len()), std::cmp::Reverse(support), itemset.to_vec())
}

/// True iff `sub` (sorted) is a subset of `sup` (sorted).
fn is_subset(sub: &[u32], sup: &[u32]) -> bool {
    let mut i = 0;
    for &x in sub {
        while i < sup.len() && sup[i] < x {
            i += 1;
        }
        if i == sup.len() || sup[i] != x {
            return false;
        }
        i += 1;
    }
    true
}

/// Remove the (sorted) `sub` items from the (sorted) `set` in place.
fn subtract(set: &mut Vec<u32>, sub: &[u32]) {
    set.retain(|x| sub.binary_search(x).is_err());
}

impl CodeTable {
    /// The standard code table: one singleton per distinct item of the
    /// database, usages equal to supports.
    pub fn standard(db: &[Transaction]) -> CodeTable {
        let mut support: BTreeMap<u32, u64> = BTreeMap::new();
        for t in db {
            for &item in t.items() {
                *support.entry(item).or_insert(0) += 1;
            }
        }
        let mut entries: Vec<CodeTableEntry> = support
            .iter()
            .map(|(&item, &s)| CodeTableEntry { itemset: vec![item], usage: 0, support: s, code_length: 0.0 })
            .collect();
        entries.sort_by(|a, b| cover_key(&a.itemset, a.support).cmp(&cover_key(&b.itemset, b.support)));
        let mut ct = CodeTable {
            entries,
            standard_lengths: BTreeMap::new(),
            total_usage: 0,
            encoded_size: 0.0,
        };
        ct.refresh(db);
        ct
    }

    pub fn entries(&self) -> &[CodeTableEntry] {
        &self.entries
    }

    pub fn total_usage(&self) -> u64 {
        self.total_usage
    }

    /// Cached L(D,CT) from the last [`refresh`](Self::refresh).
    pub fn encoded_size(&self) -> f64 {
        self.encoded_size
    }

    pub fn standard_length(&self, item: u32) -> Option<f64> {
        self.standard_lengths.get(&item).copied()
    }

    pub fn contains(&self, itemset: &[u32]) -> bool {
        self.entries.iter().any(|e| e.itemset == itemset)
    }

    fn position_of(&self, itemset: &[u32], support: u64) -> usize {
        let key = cover_key(itemset, support);
        self.entries
            .partition_point(|e| cover_key(&e.itemset, e.support) < key)
    }

    /// Insert an itemset at its cover-order position. Items must already
    /// exist as singletons.
    pub fn insert(&mut self, itemset: Vec<u32>, support: u64) -> Result<usize> {
        for &item in &itemset {
            if !self.standard_lengths.contains_key(&item) && !self.entries.iter().any(|e| e.itemset == [item]) {
                return Err(Error::Contract(format!("item {item} has no singleton entry")));
            }
        }
        let pos = self.position_of(&itemset, support);
        self.entries.insert(pos, CodeTableEntry { itemset, usage: 0, support, code_length: 0.0 });
        Ok(pos)
    }

    /// Remove a non-singleton entry by index.
    pub fn remove(&mut self, index: usize) -> CodeTableEntry {
        assert!(!self.entries[index].is_singleton(), "singletons are never removed");
        self.entries.remove(index)
    }

    /// Greedy cover of `t`: walk entries in cover order, taking an itemset
    /// iff it is a subset of the not-yet-covered remainder. Returns entry
    /// indices; the itemsets are pairwise disjoint and union to `t`.
    pub fn cover_indices(&self, t: &Transaction) -> Result<Vec<usize>> {
        for &item in t.items() {
            if !self.entries.iter().any(|e| e.itemset.len() == 1 && e.itemset[0] == item) {
                return Err(Error::Contract(format!("transaction item {item} missing from code table")));
            }
        }
        let mut remainder: Vec<u32> = t.items().to_vec();
        let mut used = Vec::new();
        for (i, e) in self.entries.iter().enumerate() {
            if remainder.is_empty() {
                break;
            }
            if e.itemset.len() <= remainder.len() && is_subset(&e.itemset, &remainder) {
                subtract(&mut remainder, &e.itemset);
                used.push(i);
            }
        }
        debug_assert!(remainder.is_empty());
        Ok(used)
    }

    /// The cover as itemsets.
    pub fn cover(&self, t: &Transaction) -> Result<Vec<Vec<u32>>> {
        Ok(self
            .cover_indices(t)?
            .iter()
            .map(|&i| self.entries[i].itemset.clone())
            .collect())
    }

    /// Recompute usages, code lengths, standard lengths, and the cached
    /// encoded size from scratch against `db`.
    pub fn refresh(&mut self, db: &[Transaction]) {
        for e in self.entries.iter_mut() {
            e.usage = 0;
        }
        let mut covers_ok = true;
        for t in db {
            match self.cover_indices(t) {
                Ok(idxs) => {
                    for i in idxs {
                        self.entries[i].usage += 1;
                    }
                }
                Err(_) => covers_ok = false,
            }
        }
        debug_assert!(covers_ok, "refresh called with items missing from the table");
        self.total_usage = self.entries.iter().map(|e| e.usage).sum();
        for e in self.entries.iter_mut() {
            e.code_length = if e.usage > 0 {
                -((e.usage as f64) / (self.total_usage as f64)).log2()
            } else {
                0.0
            };
        }
        // Standard lengths come from the database alone: the singleton-only
        // cover uses each item exactly support(item) times.
        let mut support: BTreeMap<u32, u64> = BTreeMap::new();
        for t in db {
            for &item in t.items() {
                *support.entry(item).or_insert(0) += 1;
            }
        }
        let std_total: u64 = support.values().sum();
        self.standard_lengths = self
            .entries
            .iter()
            .filter(|e| e.is_singleton())
            .map(|e| {
                let item = e.itemset[0];
                let s = support.get(&item).copied().unwrap_or(0);
                let bits = if s > 0 && std_total > 0 {
                    -((s as f64) / (std_total as f64)).log2()
                } else {
                    0.0
                };
                (item, bits)
            })
            .collect();
        self.encoded_size = self.total_length_from_usages(db);
    }

    /// L(D|CT): with usages consistent with `db`, the per-transaction sum of
    /// cover code lengths collapses to sum(usage * code_length).
    pub fn database_length(&self) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.usage > 0)
            .map(|e| e.usage as f64 * e.code_length)
            .sum()
    }

    /// L(CT|D): positive-usage entries only; each costs its itemset spelled
    /// in standard codes plus its own code length.
    pub fn table_length(&self) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.usage > 0)
            .map(|e| {
                let spell: f64 = e
                    .itemset
                    .iter()
                    .map(|i| self.standard_lengths.get(i).copied().unwrap_or(0.0))
                    .sum();
                spell + e.code_length
            })
            .sum()
    }

    fn total_length_from_usages(&self, db: &[Transaction]) -> f64 {
        if db.is_empty() {
            log::warn!("total_length over an empty database is defined as 0 bits");
            return 0.0;
        }
        self.database_length() + self.table_length()
    }

    /// Code-table file: `#total_usage=<n>` header, one `items<TAB>usage<TAB>
    /// support<TAB>code_length` line per entry in cover order.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "#total_usage={}", self.total_usage).map_err(|e| Error::io(path, e))?;
        for e in &self.entries {
            let items = e
                .itemset
                .iter()
                .map(|i| i.to_string())
                .collect::<Vec<_>>()
                .join(",");
            writeln!(w, "{items}\t{}\t{}\t{:.12}", e.usage, e.support, e.code_length)
                .map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Load a code-table file. Usages and supports are taken from the file;
    /// code lengths are recomputed from the usages so they are exact rather
    /// than the printed 12-digit rounding. Standard lengths stay empty until
    /// the table is [`refresh`](Self::refresh)ed against a database.
    pub fn read(path: impl AsRef<Path>) -> Result<CodeTable> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        let mut total_usage: Option<u64> = None;
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let lineno = lineno + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("#total_usage=") {
                total_usage = Some(
                    rest.parse()
                        .map_err(|_| Error::parse(path, lineno, Some("total_usage"), "not an integer"))?,
                );
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 4 {
                return Err(Error::parse(path, lineno, None, format!("expected 4 tab-separated fields, found {}", parts.len())));
            }
            let itemset: Vec<u32> = parts[0]
                .split(',')
                .map(|s| s.parse::<u32>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(path, lineno, Some("items"), "not a comma-separated item list"))?;
            if !itemset.windows(2).all(|w| w[0] < w[1]) || itemset.is_empty() {
                return Err(Error::parse(path, lineno, Some("items"), "itemset must be strictly ascending and non-empty"));
            }
            let usage: u64 = parts[1]
                .parse()
                .map_err(|_| Error::parse(path, lineno, Some("usage"), "not an integer"))?;
            let support: u64 = parts[2]
                .parse()
                .map_err(|_| Error::parse(path, lineno, Some("support"), "not an integer"))?;
            entries.push(CodeTableEntry { itemset, usage, support, code_length: 0.0 });
        }
        let total = total_usage.ok_or_else(|| Error::parse(path, 1, Some("total_usage"), "missing #total_usage header"))?;
        // Every item of every entry must have a singleton.
        for e in &entries {
            for &item in &e.itemset {
                if !entries.iter().any(|s| s.itemset.len() == 1 && s.itemset[0] == item) {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: 0,
                        field: Some("items"),
                        message: format!("item {item} appears in an itemset but has no singleton entry"),
                    });
                }
            }
        }
        let sorted = entries
            .windows(2)
            .all(|w| cover_key(&w[0].itemset, w[0].support) <= cover_key(&w[1].itemset, w[1].support));
        if !sorted {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                field: None,
                message: "entries are not in cover order".into(),
            });
        }
        let mut ct = CodeTable {
            entries,
            standard_lengths: BTreeMap::new(),
            total_usage: total,
            encoded_size: 0.0,
        };
        for e in ct.entries.iter_mut() {
            e.code_length = if e.usage > 0 && total > 0 {
                -((e.usage as f64) / (total as f64)).log2()
            } else {
                0.0
            };
        }
        Ok(ct)
    }
}

/// Total two-part cost of `db` under `ct`, recomputing usages first.
pub fn total_length(db: &[Transaction], ct: &CodeTable) -> f64 {
    let mut fresh = ct.clone();
    fresh.refresh(db);
    fresh.encoded_size()
}

/// Exhaustive level-wise enumeration of all itemsets of size >= 2 with
/// support >= `minsup`, in candidate order (support descending, cardinality
/// descending, lexicographic ascending). Errors once the frequent set count
/// exceeds `cap`.
pub fn mine_frequent(db: &[Transaction], minsup: u64, cap: usize) -> Result<Vec<Candidate>> {
    assert!(minsup >= 1, "minsup must be >= 1");
    let mut singles: BTreeMap<u32, u64> = BTreeMap::new();
    for t in db {
        for &item in t.items() {
            *singles.entry(item).or_insert(0) += 1;
        }
    }
    let frequent_items: Vec<u32> = singles
        .iter()
        .filter(|(_, &s)| s >= minsup)
        .map(|(&i, _)| i)
        .collect();

    let support_of = |itemset: &[u32]| -> u64 {
        db.iter().filter(|t| is_subset(itemset, t.items())).count() as u64
    };

    let mut out: Vec<Candidate> = Vec::new();
    // Level 2 from all pairs of frequent items.
    let mut level: Vec<Vec<u32>> = Vec::new();
    for (ai, &a) in frequent_items.iter().enumerate() {
        for &b in &frequent_items[ai + 1..] {
            let cand = vec![a, b];
            let s = support_of(&cand);
            if s >= minsup {
                out.push(Candidate { itemset: cand.clone(), support: s });
                level.push(cand);
            }
        }
        if out.len() > cap {
            return Err(Error::Resource(format!("frequent itemset count exceeded the candidate cap of {cap}")));
        }
    }
    // Levels k > 2: join sets sharing a (k-1)-prefix, prune by subset check.
    while !level.is_empty() {
        let mut next: Vec<Vec<u32>> = Vec::new();
        for i in 0..level.len() {
            for j in i + 1..level.len() {
                let a = &level[i];
                let b = &level[j];
                if a[..a.len() - 1] != b[..b.len() - 1] {
                    continue;
                }
                let mut cand = a.clone();
                cand.push(b[b.len() - 1]);
                // Apriori prune: all (k-1)-subsets must be frequent.
                let all_frequent = (0..cand.len()).all(|skip| {
                    let sub: Vec<u32> = cand
                        .iter()
                        .enumerate()
                        .filter(|(k, _)| *k != skip)
                        .map(|(_, &x)| x)
                        .collect();
                    sub.len() < 2 || level.binary_search(&sub).is_ok()
                });
                if !all_frequent {
                    continue;
                }
                let s = support_of(&cand);
                if s >= minsup {
                    out.push(Candidate { itemset: cand.clone(), support: s });
                    next.push(cand);
                    if out.len() > cap {
                        return Err(Error::Resource(format!(
                            "frequent itemset count exceeded the candidate cap of {cap}"
                        )));
                    }
                }
            }
        }
        next.sort();
        level = next;
    }
    out.sort_by(|a, b| {
        b.support
            .cmp(&a.support)
            .then_with(|| b.itemset.len().cmp(&a.itemset.len()))
            .then_with(|| a.itemset.cmp(&b.itemset))
    });
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct KrimpConfig {
    pub minsup: u64,
    pub prune: bool,
    pub candidate_cap: usize,
}

impl Default for KrimpConfig {
    fn default() -> Self {
        KrimpConfig { minsup: 2, prune: false, candidate_cap: DEFAULT_CANDIDATE_CAP }
    }
}

/// Build a code table for `db`: start from the standard table, test each
/// candidate in candidate order, keep it iff the total length strictly
/// decreases (ties reject). With `prune`, entries whose usage dropped after
/// an acceptance are removed when that helps. Deterministic.
pub fn build_code_table(db: &[Transaction], config: &KrimpConfig) -> Result<CodeTable> {
    if db.is_empty() {
        return Err(Error::Domain("cannot build a code table over an empty database".into()));
    }
    let mut ct = CodeTable::standard(db);
    let mut best = ct.encoded_size();
    let candidates = mine_frequent(db, config.minsup, config.candidate_cap)?;
    for cand in candidates {
        if ct.contains(&cand.itemset) {
            continue;
        }
        let pos = ct.insert(cand.itemset.clone(), cand.support)?;
        let before: Vec<u64> = ct.entries.iter().map(|e| e.usage).collect();
        ct.refresh(db);
        let total = ct.encoded_size();
        if total < best {
            best = total;
            if config.prune {
                prune_pass(&mut ct, db, &before, pos, &mut best);
            }
        } else {
            ct.remove(pos);
            ct.refresh(db);
        }
    }
    Ok(ct)
}

/// Post-acceptance pruning: entries whose usage decreased are re-tested in
/// ascending usage order; an entry is dropped for good when dropping it
/// lowers the total length. Singletons are exempt.
fn prune_pass(ct: &mut CodeTable, db: &[Transaction], usage_before: &[u64], inserted_at: usize, best: &mut f64) {
    let mut queue: Vec<Vec<u32>> = ct
        .entries
        .iter()
        .enumerate()
        .filter(|(i, e)| {
            !e.is_singleton() && *i != inserted_at && {
                // usage_before was captured with the new entry already in
                // place (usage 0), so indices line up.
                e.usage < usage_before[*i]
            }
        })
        .map(|(_, e)| e.itemset.clone())
        .collect();
    while !queue.is_empty() {
        // Lowest current usage first.
        queue.sort_by_key(|itemset| {
            let e = ct.entries.iter().find(|e| &e.itemset == itemset);
            (e.map(|e| e.usage).unwrap_or(u64::MAX), itemset.clone())
        });
        let itemset = queue.remove(0);
        let Some(idx) = ct.entries.iter().position(|e| e.itemset == itemset) else {
            continue;
        };
        let snapshot: Vec<u64> = ct.entries.iter().map(|e| e.usage).collect();
        let removed = ct.remove(idx);
        ct.refresh(db);
        let total = ct.encoded_size();
        if total < *best {
            *best = total;
            // Removal can shift usage of surviving entries; enqueue fresh drops.
            for (i, e) in ct.entries.iter().enumerate() {
                let was = if i < idx { snapshot[i] } else { snapshot[i + 1] };
                if !e.is_singleton() && e.usage < was && !queue.contains(&e.itemset) {
                    queue.push(e.itemset.clone());
                }
            }
        } else {
            ct.insert(removed.itemset, removed.support).expect("reinsert of pruned entry");
            ct.refresh(db);
        }
    }
}

/// total_length(db, ct) / total_length(db, standard table); <= 1 for tables
/// produced by [`build_code_table`].
pub fn compression_ratio(db: &[Transaction], ct: &CodeTable) -> Result<f64> {
    let baseline = CodeTable::standard(db).encoded_size();
    if baseline == 0.0 {
        return Err(Error::Domain("compression ratio undefined: baseline length is 0 bits".into()));
    }
    Ok(total_length(db, ct) / baseline)
}
