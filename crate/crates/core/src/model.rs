//! The sentence encoder and bag-level classifier: per-token word+position
//! embeddings, windowed convolution, piecewise max pooling, tanh, dropout;
//! selective attention or maximum selection over a bag; softmax relation
//! scores.
//!
//! Forward passes record everything the manual backward pass needs. The
//! word-embedding inputs can carry an additive perturbation, and their
//! gradient can be read back out, which is what adversarial training needs.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{SentenceInstance, Vocabulary, NA_LABEL};
use crate::error::{Error, Result};
use crate::numerics::{
    conv1d_window, conv1d_window_backward, dropout_mask, piecewise_max_pool,
    piecewise_max_pool_backward, softmax, softmax_backward, Parameter, PoolResult, Real, RngState,
    Tensor,
};

/// Probabilities below this are clamped before the log in the loss.
pub const PROB_CLAMP: Real = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub word_dim: usize,
    pub position_dim: usize,
    pub filters: usize,
    pub window: usize,
    pub max_relations: usize,
    pub dropout_rate: Real,
    pub max_sentence_len: usize,
    pub max_position_offset: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            word_dim: 50,
            position_dim: 5,
            filters: 230,
            window: 3,
            max_relations: 53,
            dropout_rate: 0.5,
            max_sentence_len: 120,
            max_position_offset: 60,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window % 2 == 0 {
            return Err(Error::Domain("window size must be odd".into()));
        }
        for (name, v) in [
            ("word_dim", self.word_dim),
            ("position_dim", self.position_dim),
            ("filters", self.filters),
            ("window", self.window),
            ("max_relations", self.max_relations),
            ("max_sentence_len", self.max_sentence_len),
        ] {
            if v == 0 {
                return Err(Error::Domain(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Domain("dropout_rate outside [0,1)".into()));
        }
        Ok(())
    }

    /// Per-token input width: word + two position embeddings.
    pub fn in_dim(&self) -> usize {
        self.word_dim + 2 * self.position_dim
    }

    /// Length of a sentence vector.
    pub fn sentence_dim(&self) -> usize {
        3 * self.filters
    }

    fn position_rows(&self) -> usize {
        2 * self.max_position_offset + 1
    }
}

/// All trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub word_emb: Parameter,
    pub pos_head: Parameter,
    pub pos_tail: Parameter,
    pub conv: Parameter,
    pub query: Parameter,
    pub rel_matrix: Parameter,
    pub bias: Parameter,
}

impl ModelParams {
    /// Fresh uniform [-0.1, 0.1] initialization. The word table holds one
    /// extra row for unknown words.
    pub fn init(vocab_size: usize, config: &EncoderConfig, rng: &mut RngState) -> ModelParams {
        let r = config.max_relations;
        let sd = config.sentence_dim();
        ModelParams {
            word_emb: Parameter::uniform("word_emb", &[vocab_size + 1, config.word_dim], rng),
            pos_head: Parameter::uniform("pos_head", &[config.position_rows(), config.position_dim], rng),
            pos_tail: Parameter::uniform("pos_tail", &[config.position_rows(), config.position_dim], rng),
            conv: Parameter::uniform("conv_filters", &[config.filters, config.window * config.in_dim()], rng),
            query: Parameter::uniform("attention_query", &[r, sd], rng),
            rel_matrix: Parameter::uniform("relation_matrix", &[r, sd], rng),
            bias: Parameter::uniform("bias", &[r], rng),
        }
    }

    pub fn params(&self) -> Vec<&Parameter> {
        vec![
            &self.word_emb,
            &self.pos_head,
            &self.pos_tail,
            &self.conv,
            &self.query,
            &self.rel_matrix,
            &self.bias,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![
            &mut self.word_emb,
            &mut self.pos_head,
            &mut self.pos_tail,
            &mut self.conv,
            &mut self.query,
            &mut self.rel_matrix,
            &mut self.bias,
        ]
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.word_emb.value.shape()[0] - 1
    }

    /// Overwrite word rows with pretrained vectors where the word is in the
    /// vocabulary; other rows keep their random initialization.
    pub fn load_word_vectors(&mut self, rows: &[(String, Vec<Real>)], vocab: &Vocabulary) -> Result<usize> {
        let dim = self.word_emb.value.shape()[1];
        let mut loaded = 0;
        for (word, vec) in rows {
            if vec.len() != dim {
                return Err(Error::Contract(format!(
                    "pretrained vector for `{word}` has {} values, expected {dim}",
                    vec.len()
                )));
            }
            if let Some(item) = vocab.item(word) {
                self.word_emb.value.row_mut(item as usize).copy_from_slice(vec);
                loaded += 1;
            }
        }
        Ok(loaded)
    }
}

// ---------------------------------------------------------------------------
// Relation vocabulary
// ---------------------------------------------------------------------------

/// Relation label <-> class id. NA is always class 0; the other labels get
/// ids in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationVocab {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl RelationVocab {
    pub fn from_labels(labels: Vec<String>) -> RelationVocab {
        let index = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        RelationVocab { labels, index }
    }

    pub fn build(instances: &[SentenceInstance]) -> RelationVocab {
        let mut set: Vec<String> = instances
            .iter()
            .map(|i| i.relation.clone())
            .filter(|r| r != NA_LABEL)
            .collect();
        set.sort();
        set.dedup();
        let mut labels = vec![NA_LABEL.to_string()];
        labels.extend(set);
        RelationVocab::from_labels(labels)
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub const NA_ID: usize = 0;
}

// ---------------------------------------------------------------------------
// Sentence encoding
// ---------------------------------------------------------------------------

/// A sentence reduced to embedding-table rows and entity positions.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSentence {
    /// Word-table row per token (the last row is the unknown-word row).
    pub token_rows: Vec<usize>,
    pub head_pos: usize,
    pub tail_pos: usize,
}

impl EncodedSentence {
    /// Map tokens through the vocabulary (unknowns to the reserved row) and
    /// resolve the entity positions as the first token of each mention.
    /// Over-long sentences are truncated with a warning.
    pub fn from_instance(
        inst: &SentenceInstance,
        vocab: &Vocabulary,
        config: &EncoderConfig,
    ) -> Result<EncodedSentence> {
        let (Some(head), Some(tail)) = (inst.head_mention(), inst.tail_mention()) else {
            return Err(Error::Contract("sentence has no resolved head/tail pair".into()));
        };
        let unk_row = vocab.len();
        let mut token_rows: Vec<usize> = inst
            .tokens
            .iter()
            .map(|t| vocab.item(&crate::corpus::normalize_token(t)).map(|i| i as usize).unwrap_or(unk_row))
            .collect();
        if token_rows.len() > config.max_sentence_len {
            log::warn!(
                "sentence of {} tokens truncated to {}",
                token_rows.len(),
                config.max_sentence_len
            );
            token_rows.truncate(config.max_sentence_len);
        }
        let t_len = token_rows.len();
        let clamp = |p: usize| p.min(t_len - 1);
        Ok(EncodedSentence {
            token_rows,
            head_pos: clamp(head.start),
            tail_pos: clamp(tail.start),
        })
    }

    pub fn len(&self) -> usize {
        self.token_rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_rows.is_empty()
    }
}

/// Everything one forward pass through the encoder produced; holds what the
/// backward pass needs.
#[derive(Debug, Clone)]
pub struct SentenceForward {
    input: Tensor,
    pool: PoolResult,
    /// tanh(pooled), before dropout.
    activated: Vec<Real>,
    mask: Option<Vec<bool>>,
    dropout_rate: Real,
    /// The final sentence vector s_i.
    pub vector: Vec<Real>,
}

/// Encoder forward pass. `perturbation`, when given, is added to the word
/// part of the input matrix (length T * word_dim, row-major). `mask` is a
/// pre-drawn dropout keep-mask of length 3*filters; `None` means no dropout
/// (inference).
pub fn encode(
    sent: &EncodedSentence,
    params: &ModelParams,
    config: &EncoderConfig,
    perturbation: Option<&[Real]>,
    mask: Option<&[bool]>,
) -> Result<SentenceForward> {
    let t_len = sent.len();
    let in_dim = config.in_dim();
    let off = config.max_position_offset as isize;
    let mut input = Tensor::zeros(&[t_len, in_dim]);
    for t in 0..t_len {
        let row = input.row_mut(t);
        let word = params.word_emb.value.row(sent.token_rows[t]);
        row[..config.word_dim].copy_from_slice(word);
        if let Some(pert) = perturbation {
            for d in 0..config.word_dim {
                let delta = pert[t * config.word_dim + d];
                if delta != 0.0 {
                    row[d] += delta;
                }
            }
        }
        let h_off = ((t as isize - sent.head_pos as isize).clamp(-off, off) + off) as usize;
        let t_off = ((t as isize - sent.tail_pos as isize).clamp(-off, off) + off) as usize;
        row[config.word_dim..config.word_dim + config.position_dim]
            .copy_from_slice(params.pos_head.value.row(h_off));
        row[config.word_dim + config.position_dim..]
            .copy_from_slice(params.pos_tail.value.row(t_off));
    }
    let conv_out = conv1d_window(&input, &params.conv.value, config.window);
    let pool = piecewise_max_pool(&conv_out, sent.head_pos, sent.tail_pos)?;
    let activated: Vec<Real> = pool.pooled.iter().map(|&v| v.tanh()).collect();
    let vector = match mask {
        Some(m) => crate::numerics::apply_dropout_mask(&activated, m, config.dropout_rate),
        None => activated.clone(),
    };
    Ok(SentenceForward {
        input,
        pool,
        activated,
        mask: mask.map(|m| m.to_vec()),
        dropout_rate: config.dropout_rate,
        vector,
    })
}

/// Convenience wrapper drawing its own dropout mask from `rng` when training.
pub fn encode_with_rng(
    sent: &EncodedSentence,
    params: &ModelParams,
    config: &EncoderConfig,
    rng: &mut RngState,
    training: bool,
) -> Result<SentenceForward> {
    let mask = if training && config.dropout_rate > 0.0 {
        Some(dropout_mask(config.sentence_dim(), config.dropout_rate, rng)?)
    } else {
        None
    };
    encode(sent, params, config, None, mask.as_deref())
}

/// Backward pass through the encoder. Accumulates into the parameter grads;
/// returns dL/d(word inputs) (length T * word_dim) when asked, which is the
/// gradient adversarial perturbations are built from.
fn encode_backward(
    sent: &EncodedSentence,
    fwd: &SentenceForward,
    grad_vector: &[Real],
    params: &mut ModelParams,
    config: &EncoderConfig,
    want_word_grad: bool,
) -> Option<Vec<Real>> {
    let t_len = sent.len();
    // Dropout, then tanh.
    let g_act: Vec<Real> = match &fwd.mask {
        Some(m) => {
            let scale = 1.0 / (1.0 - fwd.dropout_rate);
            grad_vector
                .iter()
                .zip(m)
                .map(|(&g, &keep)| if keep { g * scale } else { 0.0 })
                .collect()
        }
        None => grad_vector.to_vec(),
    };
    let g_pool: Vec<Real> = g_act
        .iter()
        .zip(&fwd.activated)
        .map(|(&g, &a)| g * (1.0 - a * a))
        .collect();
    let g_conv = piecewise_max_pool_backward(&fwd.pool, &g_pool, t_len, config.filters);
    let g_input = conv1d_window_backward(
        &fwd.input,
        &params.conv.value,
        config.window,
        &g_conv,
        &mut params.conv.grad,
    );
    // Scatter input gradients into the embedding tables.
    let off = config.max_position_offset as isize;
    let mut word_grad = if want_word_grad { Some(vec![0.0; t_len * config.word_dim]) } else { None };
    for t in 0..t_len {
        let grow = g_input.row(t);
        let word_row = sent.token_rows[t];
        let dst = params.word_emb.grad.row_mut(word_row);
        for d in 0..config.word_dim {
            dst[d] += grow[d];
        }
        if let Some(wg) = word_grad.as_mut() {
            wg[t * config.word_dim..(t + 1) * config.word_dim].copy_from_slice(&grow[..config.word_dim]);
        }
        let h_off = ((t as isize - sent.head_pos as isize).clamp(-off, off) + off) as usize;
        let t_off = ((t as isize - sent.tail_pos as isize).clamp(-off, off) + off) as usize;
        let dst = params.pos_head.grad.row_mut(h_off);
        for d in 0..config.position_dim {
            dst[d] += grow[config.word_dim + d];
        }
        let dst = params.pos_tail.grad.row_mut(t_off);
        for d in 0..config.position_dim {
            dst[d] += grow[config.word_dim + config.position_dim + d];
        }
    }
    word_grad
}

// ---------------------------------------------------------------------------
// Bag aggregation and classification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregation {
    /// Selective attention: softmax(tanh(s_i . q_r)) weighted average.
    Att,
    /// Maximum selector: the bag member with the highest class-r probability.
    Max,
}

impl std::fmt::Display for Aggregation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Aggregation::Att => f.write_str("att"),
            Aggregation::Max => f.write_str("max"),
        }
    }
}

/// Attention weights and the combined vector for one bag.
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub scores: Vec<Real>,
    pub weights: Vec<Real>,
    pub vector: Vec<Real>,
}

/// alpha_i = softmax_i(tanh(s_i . q)); output = sum_i alpha_i s_i.
pub fn attend(vectors: &[&[Real]], query: &[Real]) -> Result<AttentionOutput> {
    if vectors.is_empty() {
        return Err(Error::Contract("attend over an empty bag".into()));
    }
    let scores: Vec<Real> = vectors
        .iter()
        .map(|s| s.iter().zip(query).map(|(a, b)| a * b).sum::<Real>().tanh())
        .collect();
    let weights = softmax(&scores);
    let dim = vectors[0].len();
    let mut vector = vec![0.0; dim];
    for (w, s) in weights.iter().zip(vectors) {
        for d in 0..dim {
            vector[d] += w * s[d];
        }
    }
    Ok(AttentionOutput { scores, weights, vector })
}

/// softmax(A s + b) over all relation classes.
pub fn classify(s: &[Real], params: &ModelParams) -> Vec<Real> {
    let r_count = params.rel_matrix.value.shape()[0];
    let logits: Vec<Real> = (0..r_count)
        .map(|r| {
            params
                .rel_matrix
                .value
                .row(r)
                .iter()
                .zip(s)
                .map(|(a, b)| a * b)
                .sum::<Real>()
                + params.bias.value.values()[r]
        })
        .collect();
    softmax(&logits)
}

/// Index of the bag member maximizing P(relation | sentence); ties pick the
/// lowest index.
pub fn select_max(vectors: &[&[Real]], relation: usize, params: &ModelParams) -> Result<usize> {
    if vectors.is_empty() {
        return Err(Error::Contract("select_max over an empty bag".into()));
    }
    let mut best = 0;
    let mut best_p = classify(vectors[0], params)[relation];
    for (i, s) in vectors.iter().enumerate().skip(1) {
        let p = classify(s, params)[relation];
        if p > best_p {
            best_p = p;
            best = i;
        }
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Batch loss
// ---------------------------------------------------------------------------

/// One labeled bag, referencing pre-encoded sentences.
#[derive(Debug, Clone)]
pub struct BagExample {
    pub label: usize,
    pub sentences: Vec<EncodedSentence>,
}

/// Additive perturbations of the word inputs, one flat (T * word_dim) buffer
/// per sentence, in batch order (bags in order, sentences within each bag in
/// order).
#[derive(Debug, Clone)]
pub struct BatchPerturbation {
    pub per_sentence: Vec<Vec<Real>>,
}

impl BatchPerturbation {
    pub fn zeros_like(bags: &[&BagExample], word_dim: usize) -> BatchPerturbation {
        let per_sentence = bags
            .iter()
            .flat_map(|b| b.sentences.iter())
            .map(|s| vec![0.0; s.len() * word_dim])
            .collect();
        BatchPerturbation { per_sentence }
    }

    pub fn global_norm(&self) -> Real {
        self.per_sentence
            .iter()
            .flat_map(|v| v.iter())
            .map(|&g| g * g)
            .sum::<Real>()
            .sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.per_sentence.iter().all(|v| v.iter().all(|&g| g == 0.0))
    }

    /// Scale so the global norm equals `target`; a zero buffer stays zero.
    pub fn rescale_to(&mut self, target: Real) {
        let norm = self.global_norm();
        if norm == 0.0 {
            return;
        }
        let f = target / norm;
        for v in self.per_sentence.iter_mut() {
            for g in v.iter_mut() {
                *g *= f;
            }
        }
    }
}

/// Per-sentence dropout keep masks in batch order.
#[derive(Debug, Clone)]
pub struct BatchMasks {
    pub per_sentence: Vec<Vec<bool>>,
}

impl BatchMasks {
    /// Draw one mask per sentence of the batch from `rng`, in batch order.
    pub fn draw(bags: &[&BagExample], config: &EncoderConfig, rng: &mut RngState) -> Result<BatchMasks> {
        let mut per_sentence = Vec::new();
        for bag in bags {
            for _ in &bag.sentences {
                per_sentence.push(dropout_mask(config.sentence_dim(), config.dropout_rate, rng)?);
            }
        }
        Ok(BatchMasks { per_sentence })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LossOptions<'a> {
    pub aggregation: Aggregation,
    /// Keep masks drawn by the caller; `None` disables dropout.
    pub masks: Option<&'a BatchMasks>,
    pub perturbation: Option<&'a BatchPerturbation>,
}

impl Default for Aggregation {
    fn default() -> Self {
        Aggregation::Att
    }
}

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    /// Negative log-likelihood summed over the batch's bags.
    pub loss: Real,
    /// How many bag probabilities hit the clamp.
    pub clamped: usize,
    /// dL/d(word inputs) per sentence in batch order, when requested.
    pub word_grads: Option<Vec<Vec<Real>>>,
}

fn bag_sentence_forwards(
    bag: &BagExample,
    params: &ModelParams,
    config: &EncoderConfig,
    opts: &LossOptions,
    batch_sentence_base: usize,
) -> Result<Vec<SentenceForward>> {
    bag.sentences
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let flat = batch_sentence_base + i;
            let pert = opts.perturbation.map(|p| p.per_sentence[flat].as_slice());
            let mask = opts.masks.map(|m| m.per_sentence[flat].as_slice());
            encode(s, params, config, pert, mask)
        })
        .collect()
}

/// Forward-only batch loss: Eq-style negative log-likelihood summed over
/// bags, aggregated with attention or the maximum selector.
pub fn batch_loss(
    bags: &[&BagExample],
    params: &ModelParams,
    config: &EncoderConfig,
    opts: &LossOptions,
) -> Result<Real> {
    let mut loss: Real = 0.0;
    let mut base = 0;
    for bag in bags {
        let fwds = bag_sentence_forwards(bag, params, config, opts, base)?;
        base += bag.sentences.len();
        let vectors: Vec<&[Real]> = fwds.iter().map(|f| f.vector.as_slice()).collect();
        let p_gold = match opts.aggregation {
            Aggregation::Att => {
                let att = attend(&vectors, params.query.value.row(bag.label))?;
                classify(&att.vector, params)[bag.label]
            }
            Aggregation::Max => {
                let best = select_max(&vectors, bag.label, params)?;
                classify(vectors[best], params)[bag.label]
            }
        };
        loss += -(p_gold.max(PROB_CLAMP)).ln();
    }
    Ok(loss)
}

/// Batch loss with backward pass: accumulates parameter gradients in place
/// and optionally returns the word-input gradients.
pub fn batch_loss_grad(
    bags: &[&BagExample],
    params: &mut ModelParams,
    config: &EncoderConfig,
    opts: &LossOptions,
    want_word_grads: bool,
) -> Result<BatchOutcome> {
    let mut loss: Real = 0.0;
    let mut clamped = 0;
    let mut word_grads: Option<Vec<Vec<Real>>> = want_word_grads.then(Vec::new);
    let mut base = 0;
    for bag in bags {
        let fwds = bag_sentence_forwards(bag, params, config, opts, base)?;
        base += bag.sentences.len();
        let vectors: Vec<&[Real]> = fwds.iter().map(|f| f.vector.as_slice()).collect();
        let g = bag.label;
        let dim = config.sentence_dim();

        // Aggregate, classify, and build dL/ds_i per sentence.
        let mut grad_vectors: Vec<Vec<Real>> = vec![vec![0.0; dim]; vectors.len()];
        match opts.aggregation {
            Aggregation::Att => {
                let att = attend(&vectors, params.query.value.row(g))?;
                let probs = classify(&att.vector, params);
                let p_gold = probs[g];
                if p_gold < PROB_CLAMP {
                    clamped += 1;
                }
                loss += -(p_gold.max(PROB_CLAMP)).ln();
                // Softmax + NLL: dlogits = p - onehot(gold).
                let mut dlogits = probs;
                dlogits[g] -= 1.0;
                let r_count = params.rel_matrix.value.shape()[0];
                let mut ds_bag = vec![0.0; dim];
                for r in 0..r_count {
                    let dl = dlogits[r];
                    if dl == 0.0 {
                        continue;
                    }
                    let a_row = params.rel_matrix.value.row(r).to_vec();
                    let g_row = params.rel_matrix.grad.row_mut(r);
                    for d in 0..dim {
                        g_row[d] += dl * att.vector[d];
                        ds_bag[d] += dl * a_row[d];
                    }
                    params.bias.grad.values_mut()[r] += dl;
                }
                // Mixture: s_bag = sum_i alpha_i s_i.
                let mut d_alpha = vec![0.0; vectors.len()];
                for (i, s) in vectors.iter().enumerate() {
                    d_alpha[i] = ds_bag.iter().zip(*s).map(|(a, b)| a * b).sum();
                    for d in 0..dim {
                        grad_vectors[i][d] += att.weights[i] * ds_bag[d];
                    }
                }
                // alpha = softmax(z), z_i = tanh(s_i . q).
                let dz = softmax_backward(&att.weights, &d_alpha);
                let query_row = params.query.value.row(g).to_vec();
                let q_grad = params.query.grad.row_mut(g);
                for (i, s) in vectors.iter().enumerate() {
                    let dscore = dz[i] * (1.0 - att.scores[i] * att.scores[i]);
                    if dscore == 0.0 {
                        continue;
                    }
                    for d in 0..dim {
                        q_grad[d] += dscore * s[d];
                        grad_vectors[i][d] += dscore * query_row[d];
                    }
                }
            }
            Aggregation::Max => {
                let best = select_max(&vectors, g, params)?;
                let probs = classify(vectors[best], params);
                let p_gold = probs[g];
                if p_gold < PROB_CLAMP {
                    clamped += 1;
                }
                loss += -(p_gold.max(PROB_CLAMP)).ln();
                let mut dlogits = probs;
                dlogits[g] -= 1.0;
                let r_count = params.rel_matrix.value.shape()[0];
                for r in 0..r_count {
                    let dl = dlogits[r];
                    if dl == 0.0 {
                        continue;
                    }
                    let a_row = params.rel_matrix.value.row(r).to_vec();
                    let g_row = params.rel_matrix.grad.row_mut(r);
                    for d in 0..dim {
                        g_row[d] += dl * vectors[best][d];
                        grad_vectors[best][d] += dl * a_row[d];
                    }
                    params.bias.grad.values_mut()[r] += dl;
                }
            }
        }

        // Through the encoder, sentence by sentence.
        for (i, (sent, fwd)) in bag.sentences.iter().zip(&fwds).enumerate() {
            let wg = encode_backward(sent, fwd, &grad_vectors[i], params, config, want_word_grads);
            if let Some(buf) = word_grads.as_mut() {
                buf.push(wg.expect("word grads requested"));
            }
        }
    }
    if clamped > 0 {
        log::debug!("{clamped} bag probabilities clamped at {PROB_CLAMP}");
    }
    Ok(BatchOutcome { loss, clamped, word_grads })
}

/// Relation scores for one bag at inference: index r holds P(r | bag) with
/// the bag aggregated for relation r.
pub fn score_bag(
    vectors: &[&[Real]],
    params: &ModelParams,
    aggregation: Aggregation,
) -> Result<Vec<Real>> {
    let r_count = params.rel_matrix.value.shape()[0];
    match aggregation {
        Aggregation::Att => (0..r_count)
            .map(|r| {
                let att = attend(vectors, params.query.value.row(r))?;
                Ok(classify(&att.vector, params)[r])
            })
            .collect(),
        Aggregation::Max => {
            let per_sentence: Vec<Vec<Real>> = vectors.iter().map(|s| classify(s, params)).collect();
            Ok((0..r_count)
                .map(|r| {
                    per_sentence
                        .iter()
                        .map(|p| p[r])
                        .fold(Real::NEG_INFINITY, Real::max)
                })
                .collect())
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// Self-describing model snapshot: config, relation labels, and every named
/// parameter. JSON round-trips are exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: EncoderConfig,
    pub relations: Vec<String>,
    pub vocab_size: usize,
    pub inference_aggregation: Aggregation,
    pub params: Vec<Parameter>,
}

impl Checkpoint {
    pub fn capture(
        params: &ModelParams,
        config: &EncoderConfig,
        relations: &RelationVocab,
        inference_aggregation: Aggregation,
    ) -> Checkpoint {
        let vocab_size = params.vocab_size();
        // Gradients are scratch state, not model state.
        let stripped = params
            .params()
            .into_iter()
            .map(|p| {
                let mut p = p.clone();
                p.zero_grad();
                p
            })
            .collect();
        Checkpoint {
            config: config.clone(),
            relations: relations.labels().to_vec(),
            vocab_size,
            inference_aggregation,
            params: stripped,
        }
    }

    /// Rebuild the parameter struct, verifying names and shapes.
    pub fn restore(&self) -> Result<(ModelParams, RelationVocab)> {
        let mut by_name: HashMap<&str, &Parameter> =
            self.params.iter().map(|p| (p.name.as_str(), p)).collect();
        let mut take = |name: &str, shape: &[usize]| -> Result<Parameter> {
            let p = by_name
                .remove(name)
                .ok_or_else(|| Error::Contract(format!("checkpoint is missing parameter `{name}`")))?;
            if p.value.shape() != shape {
                return Err(Error::Contract(format!(
                    "parameter `{name}`: expected shape {shape:?}, found {:?}",
                    p.value.shape()
                )));
            }
            Ok(p.clone())
        };
        let c = &self.config;
        c.validate()?;
        let r = c.max_relations;
        let sd = c.sentence_dim();
        let params = ModelParams {
            word_emb: take("word_emb", &[self.vocab_size + 1, c.word_dim])?,
            pos_head: take("pos_head", &[2 * c.max_position_offset + 1, c.position_dim])?,
            pos_tail: take("pos_tail", &[2 * c.max_position_offset + 1, c.position_dim])?,
            conv: take("conv_filters", &[c.filters, c.window * c.in_dim()])?,
            query: take("attention_query", &[r, sd])?,
            rel_matrix: take("relation_matrix", &[r, sd])?,
            bias: take("bias", &[r])?,
        };
        Ok((params, RelationVocab::from_labels(self.relations.clone())))
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        serde_json::to_writer(&mut w, self).map_err(|e| Error::Numeric(e.to_string()))?;
        use std::io::Write;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| Error::parse(path, 0, None, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::derive_rng;

    fn tiny_config() -> EncoderConfig {
        EncoderConfig {
            word_dim: 4,
            position_dim: 2,
            filters: 3,
            window: 3,
            max_relations: 5,
            dropout_rate: 0.5,
            max_sentence_len: 16,
            max_position_offset: 6,
        }
    }

    fn sent(rows: &[usize], head: usize, tail: usize) -> EncodedSentence {
        EncodedSentence { token_rows: rows.to_vec(), head_pos: head, tail_pos: tail }
    }

    #[test]
    fn zero_params_encode_to_zero() {
        let config = tiny_config();
        let mut rng = derive_rng(0, &[]);
        let mut params = ModelParams::init(9, &config, &mut rng);
        for p in params.params_mut() {
            p.value.fill(0.0);
        }
        let fwd = encode(&sent(&[0, 1, 2, 3], 0, 2), &params, &config, None, None).unwrap();
        assert!(fwd.vector.iter().all(|&v| v == 0.0 || v == -1.0));
        // Non-empty segments pool zeros -> tanh(0) = 0; no empty segment here.
        assert!(fwd.vector.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encode_output_length_is_three_filters() {
        let config = tiny_config();
        let mut rng = derive_rng(1, &[]);
        let params = ModelParams::init(9, &config, &mut rng);
        for t_len in [1usize, 2, 7, 16] {
            let rows: Vec<usize> = (0..t_len).map(|i| i % 9).collect();
            let fwd = encode(&sent(&rows, 0, t_len - 1), &params, &config, None, None).unwrap();
            assert_eq!(fwd.vector.len(), 3 * config.filters);
        }
    }

    /// Independent straightforward forward pass over plain Vec math.
    fn reference_encode(
        s: &EncodedSentence,
        params: &ModelParams,
        config: &EncoderConfig,
    ) -> Vec<Real> {
        let t_len = s.len();
        let in_dim = config.in_dim();
        let off = config.max_position_offset as isize;
        let mut input = vec![vec![0.0 as Real; in_dim]; t_len];
        for t in 0..t_len {
            for d in 0..config.word_dim {
                input[t][d] = params.word_emb.value.at2(s.token_rows[t], d);
            }
            let ho = ((t as isize - s.head_pos as isize).clamp(-off, off) + off) as usize;
            let to = ((t as isize - s.tail_pos as isize).clamp(-off, off) + off) as usize;
            for d in 0..config.position_dim {
                input[t][config.word_dim + d] = params.pos_head.value.at2(ho, d);
                input[t][config.word_dim + config.position_dim + d] = params.pos_tail.value.at2(to, d);
            }
        }
        let pad = (config.window - 1) / 2;
        let mut conv = vec![vec![0.0 as Real; config.filters]; t_len];
        for t in 0..t_len as isize {
            for f in 0..config.filters {
                let mut acc = 0.0;
                for w in 0..config.window as isize {
                    let src = t + w - pad as isize;
                    if src < 0 || src >= t_len as isize {
                        continue;
                    }
                    for d in 0..in_dim {
                        acc += params.conv.value.at2(f, w as usize * in_dim + d) * input[src as usize][d];
                    }
                }
                conv[t as usize][f] = acc;
            }
        }
        let (p1, p2) = if s.head_pos <= s.tail_pos { (s.head_pos, s.tail_pos) } else { (s.tail_pos, s.head_pos) };
        let segs = [(0, p1 + 1), (p1 + 1, p2 + 1), (p2 + 1, t_len)];
        let mut out = Vec::new();
        for (lo, hi) in segs {
            for f in 0..config.filters {
                let m = (lo..hi)
                    .map(|t| conv[t][f])
                    .fold(Real::NEG_INFINITY, Real::max);
                let m = if lo >= hi { crate::numerics::EMPTY_SEGMENT_FLOOR } else { m };
                out.push(m.tanh());
            }
        }
        out
    }

    #[test]
    fn encode_matches_independent_trace() {
        let config = tiny_config();
        let mut rng = derive_rng(21, &[]);
        let params = ModelParams::init(9, &config, &mut rng);
        let s = sent(&[3, 1, 4, 1], 1, 3);
        let fwd = encode(&s, &params, &config, None, None).unwrap();
        let want = reference_encode(&s, &params, &config);
        assert_eq!(fwd.vector.len(), want.len());
        for (a, b) in fwd.vector.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attend_singleton_bag_is_identity() {
        let v = vec![0.3 as Real, -0.2, 0.9];
        let q = vec![0.1 as Real, 0.1, 0.1];
        let out = attend(&[&v], &q).unwrap();
        assert_eq!(out.weights, vec![1.0]);
        assert_eq!(out.vector, v);
    }

    #[test]
    fn attend_identical_vectors_split_evenly() {
        let v = vec![0.5 as Real, -0.5];
        let q = vec![1.0 as Real, 2.0];
        let out = attend(&[&v, &v], &q).unwrap();
        assert!((out.weights[0] - 0.5).abs() < 1e-12);
        assert!((out.weights[1] - 0.5).abs() < 1e-12);
        for (o, x) in out.vector.iter().zip(&v) {
            assert!((o - x).abs() < 1e-12);
        }
    }

    #[test]
    fn attend_matches_direct_formula() {
        let a = vec![0.2 as Real, 0.4, -0.1];
        let b = vec![-0.3 as Real, 0.8, 0.5];
        let q = vec![0.7 as Real, -0.2, 0.4];
        let out = attend(&[&a, &b], &q).unwrap();
        let za = (0.2 * 0.7 + 0.4 * -0.2 + -0.1 * 0.4 as Real).tanh();
        let zb = (-0.3 * 0.7 + 0.8 * -0.2 + 0.5 * 0.4 as Real).tanh();
        let ea = (za - za.max(zb)).exp();
        let eb = (zb - za.max(zb)).exp();
        let wa = ea / (ea + eb);
        let wb = eb / (ea + eb);
        assert!((out.weights[0] - wa).abs() < 1e-12);
        assert!((out.weights[1] - wb).abs() < 1e-12);
        for d in 0..3 {
            assert!((out.vector[d] - (wa * a[d] + wb * b[d])).abs() < 1e-12);
        }
    }

    #[test]
    fn attend_empty_bag_is_contract_violation() {
        assert!(attend(&[], &[0.0]).is_err());
    }

    #[test]
    fn classify_uniform_when_zeroed() {
        let config = tiny_config();
        let mut rng = derive_rng(2, &[]);
        let mut params = ModelParams::init(4, &config, &mut rng);
        params.rel_matrix.value.fill(0.0);
        params.bias.value.fill(0.0);
        let p = classify(&vec![0.5; config.sentence_dim()], &params);
        assert_eq!(p.len(), 5);
        for v in p {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn classify_concentrates_on_large_bias() {
        let config = tiny_config();
        let mut rng = derive_rng(3, &[]);
        let mut params = ModelParams::init(4, &config, &mut rng);
        params.rel_matrix.value.fill(0.0);
        params.bias.value.fill(0.0);
        params.bias.value.values_mut()[2] = 50.0;
        let p = classify(&vec![0.0; config.sentence_dim()], &params);
        assert!(p[2] > 0.999999);
    }

    #[test]
    fn classify_matches_direct_product_and_shift_invariance() {
        let config = tiny_config();
        let mut rng = derive_rng(4, &[]);
        let mut params = ModelParams::init(4, &config, &mut rng);
        let s: Vec<Real> = (0..config.sentence_dim()).map(|i| 0.1 * i as Real - 0.3).collect();
        let p = classify(&s, &params);
        // Direct oracle.
        let logits: Vec<Real> = (0..5)
            .map(|r| {
                params.rel_matrix.value.row(r).iter().zip(&s).map(|(a, b)| a * b).sum::<Real>()
                    + params.bias.value.values()[r]
            })
            .collect();
        let z: Real = logits.iter().map(|l| (l - logits[2]).exp()).sum();
        for r in 0..5 {
            assert!((p[r] - (logits[r] - logits[2]).exp() / z).abs() < 1e-12);
        }
        assert!((p.iter().sum::<Real>() - 1.0).abs() < 1e-9);
        // Adding a constant to every logit via bias leaves the argmax alone.
        let argmax = |v: &[Real]| v.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
        let before = argmax(&p);
        for r in 0..5 {
            params.bias.value.values_mut()[r] += 7.5;
        }
        assert_eq!(argmax(&classify(&s, &params)), before);
    }

    #[test]
    fn select_max_picks_highest_probability_and_breaks_ties_low() {
        let config = tiny_config();
        let mut rng = derive_rng(5, &[]);
        let params = ModelParams::init(4, &config, &mut rng);
        let a: Vec<Real> = (0..config.sentence_dim()).map(|i| 0.01 * i as Real).collect();
        let b: Vec<Real> = (0..config.sentence_dim()).map(|i| -0.02 * i as Real).collect();
        let pa = classify(&a, &params)[1];
        let pb = classify(&b, &params)[1];
        let expect = if pa >= pb { 0 } else { 1 };
        assert_eq!(select_max(&[&a, &b], 1, &params).unwrap(), expect);
        // Exact tie: identical vectors.
        assert_eq!(select_max(&[&a, &a], 1, &params).unwrap(), 0);
        // Singleton.
        assert_eq!(select_max(&[&b], 1, &params).unwrap(), 0);
    }

    fn tiny_bags(config: &EncoderConfig) -> Vec<BagExample> {
        vec![
            BagExample {
                label: 1,
                sentences: vec![sent(&[0, 1, 2], 0, 2), sent(&[2, 3, 0, 1], 1, 3)],
            },
            BagExample { label: 0, sentences: vec![sent(&[3, 2, 1], 0, 1)] },
        ]
        .into_iter()
        .map(|mut b| {
            for s in b.sentences.iter_mut() {
                assert!(s.len() <= config.max_sentence_len);
            }
            b
        })
        .collect()
    }

    #[test]
    fn uniform_prediction_loss_is_ln_classes() {
        let config = tiny_config();
        let mut rng = derive_rng(6, &[]);
        let mut params = ModelParams::init(4, &config, &mut rng);
        params.rel_matrix.value.fill(0.0);
        params.bias.value.fill(0.0);
        let bags = tiny_bags(&config);
        let refs: Vec<&BagExample> = bags.iter().take(1).collect();
        let loss = batch_loss(&refs, &params, &config, &LossOptions::default()).unwrap();
        assert!((loss - (5.0 as Real).ln()).abs() < 1e-9);
    }

    #[test]
    fn one_hot_prediction_loss_is_zero() {
        let config = tiny_config();
        let mut rng = derive_rng(7, &[]);
        let mut params = ModelParams::init(4, &config, &mut rng);
        params.rel_matrix.value.fill(0.0);
        params.bias.value.fill(0.0);
        params.bias.value.values_mut()[1] = 500.0;
        let bags = tiny_bags(&config);
        let refs: Vec<&BagExample> = bags.iter().take(1).collect();
        let loss = batch_loss(&refs, &params, &config, &LossOptions::default()).unwrap();
        assert!(loss.abs() < 1e-9);
    }

    #[test]
    fn two_bag_loss_is_sum_of_per_bag_losses() {
        let config = tiny_config();
        let mut rng = derive_rng(8, &[]);
        let params = ModelParams::init(4, &config, &mut rng);
        let bags = tiny_bags(&config);
        let all: Vec<&BagExample> = bags.iter().collect();
        let total = batch_loss(&all, &params, &config, &LossOptions::default()).unwrap();
        let each: Real = bags
            .iter()
            .map(|b| batch_loss(&[b], &params, &config, &LossOptions::default()).unwrap())
            .sum();
        assert!((total - each).abs() < 1e-9);
    }

    #[test]
    fn attention_weights_form_simplex_and_hull() {
        let mut rng = derive_rng(9, &[]);
        for _ in 0..200 {
            use rand::Rng;
            let dim = 6;
            let m = rng.random_range(1..5);
            let vectors: Vec<Vec<Real>> = (0..m)
                .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0) as Real).collect())
                .collect();
            let q: Vec<Real> = (0..dim).map(|_| rng.random_range(-1.0..1.0) as Real).collect();
            let refs: Vec<&[Real]> = vectors.iter().map(|v| v.as_slice()).collect();
            let out = attend(&refs, &q).unwrap();
            let sum: Real = out.weights.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(out.weights.iter().all(|&w| w >= 0.0));
            for d in 0..dim {
                let lo = vectors.iter().map(|v| v[d]).fold(Real::INFINITY, Real::min);
                let hi = vectors.iter().map(|v| v[d]).fold(Real::NEG_INFINITY, Real::max);
                assert!(out.vector[d] >= lo - 1e-12 && out.vector[d] <= hi + 1e-12);
            }
        }
    }

    fn grad_check_mode(aggregation: Aggregation) {
        use crate::numerics::check_gradient;
        let config = tiny_config();
        let mut rng = derive_rng(10, &[]);
        let mut params = ModelParams::init(4, &config, &mut rng);
        let bags = tiny_bags(&config);
        let opts = LossOptions { aggregation, masks: None, perturbation: None };
        params.zero_grads();
        {
            let refs: Vec<&BagExample> = bags.iter().collect();
            batch_loss_grad(&refs, &mut params, &config, &opts, false).unwrap();
        }
        let report = check_gradient(
            &mut (params, &bags),
            |(p, _)| p.params_mut(),
            |(p, bags)| {
                let refs: Vec<&BagExample> = bags.iter().collect();
                batch_loss(&refs, p, &config, &opts).unwrap()
            },
            1e-6,
            1e-4,
            40,
            &mut derive_rng(11, &[]),
        )
        .unwrap();
        assert!(
            report.passed(),
            "{aggregation:?}: max rel err {} at {:?}",
            report.max_rel_error,
            report.worst
        );
        assert!(report.coords_checked > 100);
    }

    #[test]
    fn gradients_match_finite_differences_att() {
        grad_check_mode(Aggregation::Att);
    }

    #[test]
    fn gradients_match_finite_differences_max() {
        grad_check_mode(Aggregation::Max);
    }

    #[test]
    fn word_input_gradients_match_finite_differences() {
        let config = tiny_config();
        let mut rng = derive_rng(12, &[]);
        let mut params = ModelParams::init(4, &config, &mut rng);
        let bags = tiny_bags(&config);
        let refs: Vec<&BagExample> = bags.iter().collect();
        let opts = LossOptions::default();
        params.zero_grads();
        let out = batch_loss_grad(&refs, &mut params, &config, &opts, true).unwrap();
        let word_grads = out.word_grads.unwrap();

        // Probe a few coordinates of the perturbation buffer.
        let mut pert = BatchPerturbation::zeros_like(&refs, config.word_dim);
        let h = 1e-6 as Real;
        for (sidx, buf) in word_grads.iter().enumerate() {
            for c in [0usize, buf.len() / 2, buf.len() - 1] {
                pert.per_sentence[sidx][c] = h;
                let plus = batch_loss(
                    &refs,
                    &params,
                    &config,
                    &LossOptions { perturbation: Some(&pert), ..Default::default() },
                )
                .unwrap();
                pert.per_sentence[sidx][c] = -h;
                let minus = batch_loss(
                    &refs,
                    &params,
                    &config,
                    &LossOptions { perturbation: Some(&pert), ..Default::default() },
                )
                .unwrap();
                pert.per_sentence[sidx][c] = 0.0;
                let fd = (plus - minus) / (2.0 * h);
                let an = buf[c];
                let scale = fd.abs().max(an.abs()).max(1.0);
                assert!(((fd - an).abs() / scale) < 1e-4, "sentence {sidx} coord {c}: fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip_restores_exactly() {
        let config = tiny_config();
        let mut rng = derive_rng(13, &[]);
        let params = ModelParams::init(4, &config, &mut rng);
        let relations = RelationVocab::from_labels(vec!["NA".into(), "/r/a".into(), "/r/b".into()]);
        let ckpt = Checkpoint::capture(&params, &config, &relations, Aggregation::Att);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
        let (restored, rv) = back.restore().unwrap();
        assert_eq!(restored, params);
        assert_eq!(rv.labels(), relations.labels());
    }

    #[test]
    fn checkpoint_shape_mismatch_is_reported() {
        let config = tiny_config();
        let mut rng = derive_rng(14, &[]);
        let params = ModelParams::init(4, &config, &mut rng);
        let relations = RelationVocab::from_labels(vec!["NA".into()]);
        let mut ckpt = Checkpoint::capture(&params, &config, &relations, Aggregation::Att);
        ckpt.vocab_size = 7; // now word_emb shape no longer matches
        let err = ckpt.restore().unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("word_emb") && msg.contains("expected shape"), "{msg}");
    }

    #[test]
    fn relation_vocab_na_is_zero_and_sorted() {
        use crate::corpus::Provenance;
        let inst = |rel: &str| SentenceInstance {
            tokens: vec!["x".into()],
            mentions: vec![],
            head: None,
            tail: None,
            relation: rel.into(),
            provenance: Provenance::Original,
        };
        let rv = RelationVocab::build(&[inst("/z"), inst("NA"), inst("/a"), inst("/z")]);
        assert_eq!(rv.labels(), &["NA".to_string(), "/a".to_string(), "/z".to_string()]);
        assert_eq!(rv.id("NA"), Some(0));
        assert_eq!(rv.id("/q"), None);
    }

    #[test]
    fn long_sentences_truncate() {
        use crate::corpus::{EntityMention, EntityType, Provenance};
        let config = tiny_config();
        let vocab = crate::corpus::build_vocabulary(
            &[SentenceInstance {
                tokens: vec!["w".into()],
                mentions: vec![],
                head: None,
                tail: None,
                relation: "NA".into(),
                provenance: Provenance::Original,
            }],
            1,
        );
        let inst = SentenceInstance {
            tokens: (0..40).map(|_| "w".to_string()).collect(),
            mentions: vec![
                EntityMention { name: "w".into(), id: "a".into(), entity_type: EntityType::Person, start: 0, end: 1 },
                EntityMention { name: "w".into(), id: "b".into(), entity_type: EntityType::Location, start: 30, end: 31 },
            ],
            head: Some(0),
            tail: Some(1),
            relation: "/r".into(),
            provenance: Provenance::Original,
        };
        let enc = EncodedSentence::from_instance(&inst, &vocab, &config).unwrap();
        assert_eq!(enc.len(), config.max_sentence_len);
        assert!(enc.tail_pos < config.max_sentence_len);
    }
}
