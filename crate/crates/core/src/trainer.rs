//! Mini-batch SGD over bags with L2 weight decay, adversarial perturbation
//! of the word-embedding inputs, and the leveled three-stage schedule that
//! warm-starts each stage from its predecessor's checkpoint.
//!
//! Reproducibility: initialization, the per-epoch shuffle, and per-batch
//! dropout masks each draw from their own stream derived from
//! (seed, stage, epoch, batch), so a clean run and a perturbed run with
//! epsilon = 0 consume identical randomness and produce bit-identical
//! trajectories.

use serde::{Deserialize, Serialize};

use crate::corpus::{group_bags, SentenceInstance, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{
    batch_loss_grad, score_bag, Aggregation, BagExample, BatchMasks, BatchPerturbation, Checkpoint,
    EncodedSentence, EncoderConfig, LossOptions, ModelParams, RelationVocab,
};
use crate::numerics::{derive_rng, Real};

// Stream ids for rng derivation.
const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_DROPOUT: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainMode {
    Att,
    AttAdv,
    MaxAdv,
    LattadvAtt,
    LattadvMax,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "att" => Ok(TrainMode::Att),
            "att-adv" => Ok(TrainMode::AttAdv),
            "max-adv" => Ok(TrainMode::MaxAdv),
            "lattadv-att" => Ok(TrainMode::LattadvAtt),
            "lattadv-max" => Ok(TrainMode::LattadvMax),
            other => Err(Error::Domain(format!(
                "unknown training mode `{other}` (expected att|att-adv|max-adv|lattadv-att|lattadv-max)"
            ))),
        }
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TrainMode::Att => "att",
            TrainMode::AttAdv => "att-adv",
            TrainMode::MaxAdv => "max-adv",
            TrainMode::LattadvAtt => "lattadv-att",
            TrainMode::LattadvMax => "lattadv-max",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: Real,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub weight_decay: Real,
    pub epsilon: Real,
    pub seed: u64,
    pub mode: TrainMode,
    /// Per-stage epoch override; `None` runs `max_epochs` per stage.
    pub stage_epochs: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.5,
            batch_size: 160,
            max_epochs: 60,
            weight_decay: 1e-5,
            epsilon: 0.01,
            seed: 42,
            mode: TrainMode::LattadvAtt,
            stage_epochs: None,
        }
    }
}

/// A bag ready for training or scoring: the entity pair plus its encoded
/// sentences and class label.
#[derive(Debug, Clone)]
pub struct TrainBag {
    pub head_id: String,
    pub tail_id: String,
    pub relation: String,
    pub example: BagExample,
}

/// Encoded corpus: bags over a fixed vocabulary and relation inventory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub bags: Vec<TrainBag>,
    pub relations: RelationVocab,
    pub vocab_size: usize,
}

impl Dataset {
    /// Group instances into bags and encode every sentence. Labels missing
    /// from `relations` (possible when scoring held-out data against a
    /// trained inventory) fall back to NA.
    pub fn prepare(
        instances: &[SentenceInstance],
        vocab: &Vocabulary,
        relations: RelationVocab,
        encoder: &EncoderConfig,
    ) -> Result<Dataset> {
        if relations.len() > encoder.max_relations {
            return Err(Error::Domain(format!(
                "{} relation labels exceed max_relations = {}",
                relations.len(),
                encoder.max_relations
            )));
        }
        let mut bags = Vec::new();
        for bag in group_bags(instances) {
            let label = relations.id(&bag.relation).unwrap_or(RelationVocab::NA_ID);
            let sentences = bag
                .sentence_indices
                .iter()
                .map(|&i| EncodedSentence::from_instance(&instances[i], vocab, encoder))
                .collect::<Result<Vec<_>>>()?;
            bags.push(TrainBag {
                head_id: bag.head_id,
                tail_id: bag.tail_id,
                relation: bag.relation,
                example: BagExample { label, sentences },
            });
        }
        Ok(Dataset { bags, relations, vocab_size: vocab.len() })
    }
}

/// One SGD step: value <- value * (1 - lr * decay) - lr * grad * grad_scale.
/// The decay factor multiplies first, so a zero data gradient shrinks
/// parameters by exactly (1 - lr * decay).
pub fn apply_sgd_step(params: &mut ModelParams, lr: Real, weight_decay: Real, grad_scale: Real) {
    let keep = 1.0 - lr * weight_decay;
    for p in params.params_mut() {
        let g = p.grad.values().to_vec();
        for (v, g) in p.value.values_mut().iter_mut().zip(g) {
            *v = *v * keep - lr * g * grad_scale;
        }
    }
}

/// Norm-epsilon step along the loss gradient in word-embedding space:
/// e_adv = epsilon * g / ||g|| with the global Euclidean norm over every
/// word of every sentence in the batch. A zero gradient yields a zero
/// perturbation. Parameter gradients are consumed and cleared.
pub fn adversarial_perturbation(
    bags: &[&BagExample],
    params: &mut ModelParams,
    encoder: &EncoderConfig,
    aggregation: Aggregation,
    epsilon: Real,
    masks: Option<&BatchMasks>,
) -> Result<BatchPerturbation> {
    params.zero_grads();
    let opts = LossOptions { aggregation, masks, perturbation: None };
    let outcome = batch_loss_grad(bags, params, encoder, &opts, true)?;
    params.zero_grads();
    let mut pert = BatchPerturbation { per_sentence: outcome.word_grads.expect("word grads requested") };
    let norm = pert.global_norm();
    if norm == 0.0 {
        log::warn!("zero input gradient; adversarial perturbation degenerates to zero");
        for buf in pert.per_sentence.iter_mut() {
            buf.iter_mut().for_each(|g| *g = 0.0);
        }
        return Ok(pert);
    }
    pert.rescale_to(epsilon);
    Ok(pert)
}

/// Outcome of one training stage.
#[derive(Debug, Clone)]
pub struct StageResult {
    pub stage_index: usize,
    pub aggregation: Aggregation,
    pub perturbed: bool,
    /// Mean loss per bag, one entry per epoch.
    pub loss_trace: Vec<Real>,
    pub checkpoint: Checkpoint,
}

#[derive(Debug, Clone, Copy)]
pub struct StageSpec {
    pub index: usize,
    pub aggregation: Aggregation,
    pub perturbed: bool,
    pub epochs: usize,
}

/// Mini-batch SGD for one stage, mutating `params` in place. Bags are
/// shuffled per epoch; the last partial batch is kept. The gradient of the
/// summed batch loss is scaled by 1/batch_bags before the step so the
/// step size does not grow with the batch.
pub fn train_stage(
    data: &Dataset,
    params: &mut ModelParams,
    encoder: &EncoderConfig,
    config: &TrainConfig,
    spec: StageSpec,
) -> Result<StageResult> {
    if data.bags.is_empty() {
        return Err(Error::Domain("cannot train on a dataset with no bags".into()));
    }
    let mut loss_trace = Vec::with_capacity(spec.epochs);
    let mut clamped_total = 0usize;
    for epoch in 0..spec.epochs {
        let mut order: Vec<usize> = (0..data.bags.len()).collect();
        {
            use rand::seq::SliceRandom;
            let mut rng = derive_rng(config.seed, &[STREAM_SHUFFLE, spec.index as u64, epoch as u64]);
            order.shuffle(&mut rng);
        }
        let mut epoch_loss: Real = 0.0;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&BagExample> = chunk.iter().map(|&i| &data.bags[i].example).collect();
            let masks = if encoder.dropout_rate > 0.0 {
                let mut rng = derive_rng(
                    config.seed,
                    &[STREAM_DROPOUT, spec.index as u64, epoch as u64, batch_idx as u64],
                );
                Some(BatchMasks::draw(&batch, encoder, &mut rng)?)
            } else {
                None
            };
            let perturbation = if spec.perturbed {
                let pert = adversarial_perturbation(
                    &batch,
                    params,
                    encoder,
                    spec.aggregation,
                    config.epsilon,
                    masks.as_ref(),
                )?;
                if pert.is_zero() {
                    None
                } else {
                    Some(pert)
                }
            } else {
                None
            };
            params.zero_grads();
            let opts = LossOptions {
                aggregation: spec.aggregation,
                masks: masks.as_ref(),
                perturbation: perturbation.as_ref(),
            };
            let outcome = batch_loss_grad(&batch, params, encoder, &opts, false)?;
            if !outcome.loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss in stage {} epoch {epoch} batch {batch_idx}",
                    spec.index
                )));
            }
            apply_sgd_step(params, config.learning_rate, config.weight_decay, 1.0 / batch.len() as Real);
            epoch_loss += outcome.loss;
            clamped_total += outcome.clamped;
        }
        loss_trace.push(epoch_loss / data.bags.len() as Real);
    }
    if clamped_total > 0 {
        log::warn!(
            "stage {}: {clamped_total} bag probabilities hit the clamp during training",
            spec.index
        );
    }
    Ok(StageResult {
        stage_index: spec.index,
        aggregation: spec.aggregation,
        perturbed: spec.perturbed,
        loss_trace,
        checkpoint: Checkpoint::capture(params, encoder, &data.relations, spec.aggregation),
    })
}

/// The per-stage plan for a mode: (aggregation, perturbed) per stage.
pub fn stage_plan(mode: TrainMode) -> Vec<(Aggregation, bool)> {
    match mode {
        TrainMode::Att => vec![(Aggregation::Att, false)],
        TrainMode::AttAdv => vec![(Aggregation::Att, true)],
        TrainMode::MaxAdv => vec![(Aggregation::Max, true)],
        TrainMode::LattadvAtt => vec![
            (Aggregation::Att, false),
            (Aggregation::Att, true),
            (Aggregation::Att, true),
        ],
        TrainMode::LattadvMax => vec![
            (Aggregation::Att, false),
            (Aggregation::Max, true),
            (Aggregation::Att, true),
        ],
    }
}

/// Aggregation a trained model of this mode uses at inference: the final
/// stage's aggregation.
pub fn inference_aggregation(mode: TrainMode) -> Aggregation {
    *stage_plan(mode)
        .last()
        .map(|(agg, _)| agg)
        .expect("every mode has at least one stage")
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub stages: Vec<StageResult>,
    pub final_checkpoint: Checkpoint,
}

/// Run the full schedule for `config.mode`: fresh initialization, then each
/// stage warm-started from its predecessor, perturbed stages recomputing
/// e_adv per batch. The final model is the last stage's checkpoint.
pub fn train(data: &Dataset, encoder: &EncoderConfig, config: &TrainConfig) -> Result<TrainRun> {
    let mut rng = derive_rng(config.seed, &[STREAM_INIT]);
    let params = ModelParams::init(data.vocab_size, encoder, &mut rng);
    train_from(data, encoder, config, params)
}

/// Like [`train`], but starting from caller-supplied parameters (e.g. with
/// pretrained word vectors loaded over the seeded initialization).
pub fn train_from(
    data: &Dataset,
    encoder: &EncoderConfig,
    config: &TrainConfig,
    mut params: ModelParams,
) -> Result<TrainRun> {
    encoder.validate()?;
    let epochs = config.stage_epochs.unwrap_or(config.max_epochs);
    let mut stages = Vec::new();
    for (index, (aggregation, perturbed)) in stage_plan(config.mode).into_iter().enumerate() {
        let spec = StageSpec { index: index + 1, aggregation, perturbed, epochs };
        stages.push(train_stage(data, &mut params, encoder, config, spec)?);
    }
    let final_checkpoint = Checkpoint::capture(
        &params,
        encoder,
        &data.relations,
        inference_aggregation(config.mode),
    );
    Ok(TrainRun { stages, final_checkpoint })
}

/// Three-stage leveled training; `config.mode` must be a lattadv mode.
pub fn train_leveled(data: &Dataset, encoder: &EncoderConfig, config: &TrainConfig) -> Result<Vec<StageResult>> {
    if !matches!(config.mode, TrainMode::LattadvAtt | TrainMode::LattadvMax) {
        return Err(Error::Contract(format!(
            "train_leveled requires a lattadv mode, got {}",
            config.mode
        )));
    }
    Ok(train(data, encoder, config)?.stages)
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub head_id: String,
    pub tail_id: String,
    pub relation: String,
    pub score: Real,
}

/// Score every bag against every non-NA relation and rank descending;
/// ties break on (pair, relation) lexicographically.
pub fn predict(
    params: &ModelParams,
    relations: &RelationVocab,
    encoder: &EncoderConfig,
    aggregation: Aggregation,
    bags: &[TrainBag],
) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for bag in bags {
        let fwds = bag
            .example
            .sentences
            .iter()
            .map(|s| crate::model::encode(s, params, encoder, None, None))
            .collect::<Result<Vec<_>>>()?;
        let vectors: Vec<&[Real]> = fwds.iter().map(|f| f.vector.as_slice()).collect();
        let scores = score_bag(&vectors, params, aggregation)?;
        for r in 1..relations.len() {
            out.push(Prediction {
                head_id: bag.head_id.clone(),
                tail_id: bag.tail_id.clone(),
                relation: relations.label(r).to_string(),
                score: scores[r],
            });
        }
    }
    out.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("finite scores")
            .then_with(|| a.head_id.cmp(&b.head_id))
            .then_with(|| a.tail_id.cmp(&b.tail_id))
            .then_with(|| a.relation.cmp(&b.relation))
    });
    Ok(out)
}
