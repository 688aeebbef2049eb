//! Corpus expansion from the code table: classify itemsets by their entity
//! content, merge half-ideal bases with their k-topmost similar peers, and
//! emit template sentences for the entity pairs that appear.
//!
//! Similarity ties are grouped into ranks. A branch picks exactly one member
//! per rank, unioning rank by rank until the merged set contains a complete
//! template pair; the default branch always picks the lexicographically
//! smallest member, and `all_tie_branches` enumerates every combination.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use crate::corpus::{
    normalize_token, EntityMention, EntityType, Provenance, SentenceInstance, Vocabulary,
};
use crate::error::{Error, Result};
use crate::krimp::CodeTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ItemsetClass {
    /// Contains at least one complete template-matching entity pair.
    Ideal,
    /// Contains entity words but no complete pair.
    HalfIdeal,
    /// Contains no entity word.
    NotIdeal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimilarityMetric {
    Cosine,
    Jaccard,
}

impl std::str::FromStr for SimilarityMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" | "cos" => Ok(SimilarityMetric::Cosine),
            "jaccard" | "jac" => Ok(SimilarityMetric::Jaccard),
            other => Err(Error::Domain(format!("unknown similarity metric `{other}`"))),
        }
    }
}

impl std::fmt::Display for SimilarityMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SimilarityMetric::Cosine => f.write_str("cosine"),
            SimilarityMetric::Jaccard => f.write_str("jaccard"),
        }
    }
}

fn intersection_size(a: &[u32], b: &[u32]) -> u64 {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Exact similarity value used for ordering and tie grouping. Comparing the
/// floating-point value could split ties that are equal as rationals, so the
/// comparison cross-multiplies integers instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SimKey {
    /// |a ∩ b| / |a ∪ b|
    Jaccard { inter: u64, union: u64 },
    /// |a ∩ b|² / (|a| · |b|), the square of the binary cosine.
    CosineSq { inter_sq: u64, denom: u64 },
}

impl SimKey {
    fn value(self) -> f64 {
        match self {
            SimKey::Jaccard { inter, union } => inter as f64 / union as f64,
            SimKey::CosineSq { inter_sq, denom } => (inter_sq as f64 / denom as f64).sqrt(),
        }
    }
}

impl PartialOrd for SimKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimKey {
    fn cmp(&self, other: &Self) -> Ordering {
        let (num_a, den_a) = match *self {
            SimKey::Jaccard { inter, union } => (inter as u128, union as u128),
            SimKey::CosineSq { inter_sq, denom } => (inter_sq as u128, denom as u128),
        };
        let (num_b, den_b) = match *other {
            SimKey::Jaccard { inter, union } => (inter as u128, union as u128),
            SimKey::CosineSq { inter_sq, denom } => (inter_sq as u128, denom as u128),
        };
        (num_a * den_b).cmp(&(num_b * den_a))
    }
}

fn similarity_key(a: &[u32], b: &[u32], metric: SimilarityMetric) -> SimKey {
    let inter = intersection_size(a, b);
    match metric {
        SimilarityMetric::Jaccard => SimKey::Jaccard {
            inter,
            union: a.len() as u64 + b.len() as u64 - inter,
        },
        SimilarityMetric::Cosine => SimKey::CosineSq {
            inter_sq: inter * inter,
            denom: a.len() as u64 * b.len() as u64,
        },
    }
}

/// Set similarity in [0,1]. Jaccard is |a∩b|/|a∪b|; cosine treats the sets
/// as binary indicator vectors, giving |a∩b|/sqrt(|a|·|b|).
pub fn similarity(a: &[u32], b: &[u32], metric: SimilarityMetric) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("similarity of an empty itemset is undefined".into()));
    }
    Ok(similarity_key(a, b, metric).value())
}

// ---------------------------------------------------------------------------
// Entity lexicon and templates
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityRecord {
    pub entity_id: String,
    pub name: String,
    pub entity_type: EntityType,
}

/// Which vocabulary items are entity words, and which entity they stand for.
#[derive(Debug, Clone, Default)]
pub struct EntityLexicon {
    map: BTreeMap<u32, EntityRecord>,
}

impl EntityLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, item: u32, record: EntityRecord) {
        self.map.insert(item, record);
    }

    pub fn get(&self, item: u32) -> Option<&EntityRecord> {
        self.map.get(&item)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Derive the lexicon from corpus mentions: a vocabulary item is an
    /// entity word iff its surface form matches a mention name token. When a
    /// token matches several entities, the most frequent wins, ties broken
    /// by smallest entity id.
    pub fn from_corpus(instances: &[SentenceInstance], vocab: &Vocabulary) -> EntityLexicon {
        let mut counts: BTreeMap<u32, BTreeMap<(String, String, EntityType), u64>> = BTreeMap::new();
        for inst in instances {
            for mention in &inst.mentions {
                for name_tok in mention.name.split_whitespace() {
                    if let Some(item) = vocab.item(&normalize_token(name_tok)) {
                        let key = (
                            mention.id.clone(),
                            normalize_token(&mention.name),
                            mention.entity_type,
                        );
                        *counts.entry(item).or_default().entry(key).or_insert(0) += 1;
                    }
                }
            }
        }
        let mut map = BTreeMap::new();
        for (item, cands) in counts {
            let ((id, name, ty), _) = cands
                .into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
                .expect("non-empty candidate map");
            map.insert(item, EntityRecord { entity_id: id, name, entity_type: ty });
        }
        EntityLexicon { map }
    }
}

/// A surface pattern with head/tail slots, tied to one relation label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationTemplate {
    pub relation_label: String,
    pub head_type: EntityType,
    pub tail_type: EntityType,
    /// Tokens of the pattern; `{X}` and `{Y}` mark the head and tail slots.
    pub pattern: Vec<String>,
}

impl RelationTemplate {
    pub fn new(relation: &str, head: EntityType, tail: EntityType, pattern: &[&str]) -> Self {
        RelationTemplate {
            relation_label: relation.to_string(),
            head_type: head,
            tail_type: tail,
            pattern: pattern.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// The three built-in relation templates.
pub fn default_templates() -> Vec<RelationTemplate> {
    vec![
        RelationTemplate::new(
            "/business/company/location",
            EntityType::Organization,
            EntityType::Location,
            &["{X}", "has", "location", "{Y}"],
        ),
        RelationTemplate::new(
            "/people/person/place_lived",
            EntityType::Person,
            EntityType::Location,
            &["{X}", "has", "location", "{Y}"],
        ),
        RelationTemplate::new(
            "/business/person/company",
            EntityType::Person,
            EntityType::Organization,
            &["{X}", "has", "organization", "{Y}"],
        ),
    ]
}

/// For each template, the chosen (head, tail) pair inside `itemset`, if both
/// roles can be filled with distinct entities. Per role the entity with the
/// lexicographically smallest id wins.
fn template_pairs<'a>(
    itemset: &[u32],
    lex: &'a EntityLexicon,
    templates: &'a [RelationTemplate],
) -> Vec<(&'a RelationTemplate, &'a EntityRecord, &'a EntityRecord)> {
    let records: Vec<&EntityRecord> = itemset.iter().filter_map(|&i| lex.get(i)).collect();
    let pick = |ty: EntityType| {
        records
            .iter()
            .filter(|r| r.entity_type == ty)
            .min_by(|a, b| a.entity_id.cmp(&b.entity_id))
            .copied()
    };
    let mut out = Vec::new();
    for t in templates {
        if let (Some(head), Some(tail)) = (pick(t.head_type), pick(t.tail_type)) {
            if head.entity_id != tail.entity_id {
                out.push((t, head, tail));
            }
        }
    }
    out
}

/// Ideal / half ideal / not ideal, per the template rules.
pub fn classify_itemset(
    itemset: &[u32],
    lex: &EntityLexicon,
    templates: &[RelationTemplate],
) -> ItemsetClass {
    if !template_pairs(itemset, lex, templates).is_empty() {
        return ItemsetClass::Ideal;
    }
    if itemset.iter().any(|&i| lex.get(i).is_some()) {
        ItemsetClass::HalfIdeal
    } else {
        ItemsetClass::NotIdeal
    }
}

/// One generated relation instance, with the provenance needed for the
/// expansion report.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedInstance {
    pub relation_label: String,
    pub head: EntityMention,
    pub tail: EntityMention,
    /// The merged word set F*, as sorted item ids.
    pub merged_itemset: Vec<u32>,
    pub template_sentence: String,
    pub tokens: Vec<String>,
    pub base_index: usize,
    pub k_used: usize,
}

/// Fill a template's slots with the pair's names. Multi-word names occupy
/// one token per word; the mention spans cover them.
pub fn instantiate_template(
    head: &EntityRecord,
    tail: &EntityRecord,
    template: &RelationTemplate,
    merged_itemset: &[u32],
    base_index: usize,
    k_used: usize,
) -> Result<GeneratedInstance> {
    if head.entity_type != template.head_type || tail.entity_type != template.tail_type {
        return Err(Error::Contract(format!(
            "pair types ({}, {}) do not match template ({}, {})",
            head.entity_type, tail.entity_type, template.head_type, template.tail_type
        )));
    }
    let mut tokens: Vec<String> = Vec::new();
    let mut head_span = (0usize, 0usize);
    let mut tail_span = (0usize, 0usize);
    for part in &template.pattern {
        match part.as_str() {
            "{X}" => {
                head_span.0 = tokens.len();
                tokens.extend(head.name.split_whitespace().map(str::to_string));
                head_span.1 = tokens.len();
            }
            "{Y}" => {
                tail_span.0 = tokens.len();
                tokens.extend(tail.name.split_whitespace().map(str::to_string));
                tail_span.1 = tokens.len();
            }
            word => tokens.push(word.to_string()),
        }
    }
    let sentence = tokens.join(" ");
    Ok(GeneratedInstance {
        relation_label: template.relation_label.clone(),
        head: EntityMention {
            name: head.name.clone(),
            id: head.entity_id.clone(),
            entity_type: head.entity_type,
            start: head_span.0,
            end: head_span.1,
        },
        tail: EntityMention {
            name: tail.name.clone(),
            id: tail.entity_id.clone(),
            entity_type: tail.entity_type,
            start: tail_span.0,
            end: tail_span.1,
        },
        merged_itemset: merged_itemset.to_vec(),
        template_sentence: sentence,
        tokens,
        base_index,
        k_used,
    })
}

fn union_sorted(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut out: Vec<u32> = a.iter().chain(b.iter()).copied().collect();
    out.sort_unstable();
    out.dedup();
    out
}

fn emit_for(
    merged: &[u32],
    lex: &EntityLexicon,
    templates: &[RelationTemplate],
    base_index: usize,
    k_used: usize,
) -> Result<Vec<GeneratedInstance>> {
    template_pairs(merged, lex, templates)
        .into_iter()
        .map(|(t, head, tail)| instantiate_template(head, tail, t, merged, base_index, k_used))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn walk_ranks(
    merged: Vec<u32>,
    rank_idx: usize,
    k_left: usize,
    ranks: &[Vec<&Vec<u32>>],
    lex: &EntityLexicon,
    templates: &[RelationTemplate],
    base_index: usize,
    k_used: usize,
    all_branches: bool,
    seen: &mut BTreeSet<Vec<u32>>,
    out: &mut Vec<GeneratedInstance>,
) -> Result<()> {
    if k_left == 0 || rank_idx >= ranks.len() {
        return Ok(());
    }
    let members: &[&Vec<u32>] = if all_branches { &ranks[rank_idx] } else { &ranks[rank_idx][..1] };
    for member in members {
        let next = union_sorted(&merged, member);
        if classify_itemset(&next, lex, templates) == ItemsetClass::Ideal {
            if seen.insert(next.clone()) {
                out.extend(emit_for(&next, lex, templates, base_index, k_used + 1)?);
            }
        } else {
            walk_ranks(
                next,
                rank_idx + 1,
                k_left - 1,
                ranks,
                lex,
                templates,
                base_index,
                k_used + 1,
                all_branches,
                seen,
                out,
            )?;
        }
    }
    Ok(())
}

/// Expand one base itemset of the code table.
///
/// Ideal bases emit directly with `k_used = 0`. Half-ideal bases rank every
/// other non-singleton entry by similarity (descending, ties grouped into
/// ranks) and union one member per rank until the merged set turns ideal or
/// `k` ranks are spent. Not-ideal bases emit nothing.
pub fn expand_base(
    base_index: usize,
    ct: &CodeTable,
    lex: &EntityLexicon,
    templates: &[RelationTemplate],
    k: usize,
    metric: SimilarityMetric,
    all_tie_branches: bool,
) -> Result<Vec<GeneratedInstance>> {
    let base = &ct.entries()[base_index].itemset;
    match classify_itemset(base, lex, templates) {
        ItemsetClass::NotIdeal => return Ok(Vec::new()),
        ItemsetClass::Ideal => return emit_for(base, lex, templates, base_index, 0),
        ItemsetClass::HalfIdeal => {}
    }

    // Rank the other non-singleton entries by similarity, grouping exact ties.
    let mut peers: Vec<(SimKey, &Vec<u32>)> = ct
        .entries()
        .iter()
        .enumerate()
        .filter(|(i, e)| *i != base_index && e.itemset.len() >= 2)
        .map(|(_, e)| (similarity_key(base, &e.itemset, metric), &e.itemset))
        .collect();
    peers.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    let mut ranks: Vec<(SimKey, Vec<&Vec<u32>>)> = Vec::new();
    for (key, set) in peers {
        match ranks.last_mut() {
            Some((last_key, members)) if *last_key == key => members.push(set),
            _ => ranks.push((key, vec![set])),
        }
    }
    let ranks: Vec<Vec<&Vec<u32>>> = ranks.into_iter().map(|(_, members)| members).collect();

    let mut out = Vec::new();
    let mut seen_merged: BTreeSet<Vec<u32>> = BTreeSet::new();
    walk_ranks(
        base.clone(),
        0,
        k,
        &ranks,
        lex,
        templates,
        base_index,
        0,
        all_tie_branches,
        &mut seen_merged,
        &mut out,
    )?;
    Ok(out)
}

/// Run [`expand_base`] over every code-table entry in cover order and
/// deduplicate exact (pair, relation, sentence) repeats, keeping the first.
pub fn expand_all(
    ct: &CodeTable,
    lex: &EntityLexicon,
    templates: &[RelationTemplate],
    k: usize,
    metric: SimilarityMetric,
    all_tie_branches: bool,
) -> Result<Vec<GeneratedInstance>> {
    let mut seen: BTreeSet<(String, String, String, String)> = BTreeSet::new();
    let mut out = Vec::new();
    for base_index in 0..ct.entries().len() {
        for inst in expand_base(base_index, ct, lex, templates, k, metric, all_tie_branches)? {
            let key = (
                inst.head.id.clone(),
                inst.tail.id.clone(),
                inst.relation_label.clone(),
                inst.template_sentence.clone(),
            );
            if seen.insert(key) {
                out.push(inst);
            }
        }
    }
    Ok(out)
}

/// Original corpus plus the generated instances, appended in generation
/// order with provenance GENERATED.
pub fn expand_database(
    instances: &[SentenceInstance],
    ct: &CodeTable,
    lex: &EntityLexicon,
    templates: &[RelationTemplate],
    k: usize,
    metric: SimilarityMetric,
    all_tie_branches: bool,
) -> Result<Vec<SentenceInstance>> {
    let generated = expand_all(ct, lex, templates, k, metric, all_tie_branches)?;
    let mut out = instances.to_vec();
    out.extend(generated.iter().map(to_sentence_instance));
    Ok(out)
}

pub fn to_sentence_instance(g: &GeneratedInstance) -> SentenceInstance {
    SentenceInstance {
        tokens: g.tokens.clone(),
        mentions: vec![g.head.clone(), g.tail.clone()],
        head: Some(0),
        tail: Some(1),
        relation: g.relation_label.clone(),
        provenance: Provenance::Generated,
    }
}
