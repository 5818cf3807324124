//! Objective, learning-rate schedule and the epoch loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mode, Tape, Var};
use crate::contrastive::{
    bank_update, contrastive_loss, sample_negatives, twin_forward, ContrastiveConfig, MemoryBank, NegativeStrategy,
    Negatives,
};
use crate::data::Session;
use crate::error::{Error, Result};
use crate::eval::{mrr_at_k, recall_at_k, Recommender};
use crate::model::{Bound, Model, ModelConfig};
use crate::optim::AdamState;
use crate::rng::Seed;

/// Probabilities are clamped to this before the logarithm.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Factor applied to the learning rate every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    /// Weight of the squared L2 norm of all parameters.
    pub weight_decay: f64,
    /// Share of training sessions held out for validation.
    pub validation_fraction: f64,
    /// Cutoff for validation Recall/MRR.
    pub eval_k: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            epochs: 30,
            batch_size: 100,
            lr: 1e-3,
            lr_decay: 0.1,
            lr_decay_every: 3,
            weight_decay: 1e-5,
            validation_fraction: 0.1,
            eval_k: 20,
        }
    }
}

impl Schedule {
    /// Learning rate used throughout `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = ((epoch.max(1) - 1) / self.lr_decay_every.max(1)) as i32;
        // Dividing by an integral factor keeps 1e-3 -> 1e-4 -> 1e-5 exact.
        let inverse = 1.0 / self.lr_decay;
        if inverse.fract() == 0.0 && inverse.is_finite() {
            self.lr / inverse.powi(decays)
        } else {
            self.lr * self.lr_decay.powi(decays)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    #[serde(rename = "training")]
    pub schedule: Schedule,
    pub model: ModelConfig,
    pub contrastive: ContrastiveConfig,
}

/// Switches for the ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    /// Contrastive term and twin pass.
    Contrast,
    /// Random instead of same-last-item negatives; `on` selects random.
    WeakNeg,
    /// Embedding normalization and cosine scoring.
    Norm,
    /// Positional embedding.
    Pe,
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contrast" => Ok(Ablation::Contrast),
            "weakneg" => Ok(Ablation::WeakNeg),
            "norm" => Ok(Ablation::Norm),
            "pe" => Ok(Ablation::Pe),
            other => Err(Error::Config(format!("unknown ablation flag `{other}`"))),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.schedule;
        if s.epochs == 0 || s.batch_size == 0 || s.lr_decay_every == 0 || s.eval_k == 0 {
            return Err(Error::Config(
                "epochs, batch_size, lr_decay_every and eval_k must be positive".into(),
            ));
        }
        if !(s.lr > 0.0) || !(s.lr_decay > 0.0 && s.lr_decay <= 1.0) {
            return Err(Error::Config(format!(
                "lr {} / lr_decay {} out of range",
                s.lr, s.lr_decay
            )));
        }
        if !(s.weight_decay >= 0.0) || !s.weight_decay.is_finite() {
            return Err(Error::Config(format!(
                "weight_decay {} must be non-negative",
                s.weight_decay
            )));
        }
        if !(0.0..1.0).contains(&s.validation_fraction) {
            return Err(Error::Config(format!(
                "validation_fraction {} outside [0, 1)",
                s.validation_fraction
            )));
        }
        if !self.contrastive.enabled && self.contrastive.strategy == NegativeStrategy::Random {
            return Err(Error::Config("weakneg needs the contrastive module enabled".into()));
        }
        self.model.validate()?;
        self.contrastive.validate()
    }

    /// Sets an ablation flag; `on` keeps the component, except for
    /// [`Ablation::WeakNeg`] where `on` activates the weaker variant.
    pub fn set_flag(&mut self, flag: Ablation, on: bool) {
        match flag {
            Ablation::Contrast => self.contrastive.enabled = on,
            Ablation::WeakNeg => {
                self.contrastive.strategy = if on {
                    NegativeStrategy::Random
                } else {
                    NegativeStrategy::SameLastItem
                }
            }
            Ablation::Norm => self.model.normalize = on,
            Ablation::Pe => self.model.positional = on,
        }
    }
}

/// Batch-mean categorical cross-entropy of `logits` against 0-based
/// `targets`. Also returns how many target probabilities were clamped.
pub fn prediction_loss(tape: &mut Tape, logits: Var, targets: &[usize]) -> Result<(Var, usize)> {
    let rows = tape.value(logits).rows();
    if targets.len() != rows {
        return Err(Error::dim(
            "prediction_loss",
            format!("{rows} rows, {} targets", targets.len()),
        ));
    }
    let probs = tape.softmax(logits);
    let picked = tape.pick(probs, targets.to_vec())?;
    let clamped = tape.value(picked).data().iter().filter(|&&p| p < PROB_EPS).count();
    let logp = tape.log(picked, PROB_EPS);
    let total = tape.sum(logp);
    Ok((tape.scale(total, -1.0 / rows as f64), clamped))
}

/// The tensors covered by weight decay: all parameters, with the padding
/// row of the item table left out.
pub fn regularized(tape: &mut Tape, bound: &Bound) -> Result<Vec<Var>> {
    let all = bound.all();
    let rows = tape.value(bound.item_embeddings).rows();
    let items = tape.slice_rows(bound.item_embeddings, 1, rows)?;
    Ok(std::iter::once(items).chain(all[1..].iter().copied()).collect())
}

/// `pred + beta * con + weight_decay * Σ‖θ‖²`.
pub fn total_loss(
    tape: &mut Tape,
    pred: Var,
    con: Option<Var>,
    beta: f64,
    weight_decay: f64,
    params: &[Var],
) -> Result<Var> {
    let mut loss = pred;
    if let Some(con) = con {
        if beta != 0.0 {
            let weighted = tape.scale(con, beta);
            loss = tape.add(loss, weighted)?;
        }
    }
    if weight_decay != 0.0 && !params.is_empty() {
        let mut norms = Vec::with_capacity(params.len());
        for &p in params {
            let sq = tape.mul(p, p)?;
            norms.push(tape.sum(sq));
        }
        let mut sum = norms[0];
        for &n in &norms[1..] {
            sum = tape.add(sum, n)?;
        }
        let reg = tape.scale(sum, weight_decay);
        loss = tape.add(loss, reg)?;
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    /// Step means of the objective and its parts.
    pub loss_total: f64,
    pub loss_pred: f64,
    pub loss_con: f64,
    /// Median of the per-step objective values.
    pub loss_median: f64,
    pub valid_recall: Option<f64>,
    pub valid_mrr: Option<f64>,
    /// Steps that ran the second forward pass.
    pub twin_passes: usize,
    /// Anchors whose same-last-item pool was empty.
    pub fallback_samples: usize,
    /// Anchors with no negatives at all.
    pub skipped_anchors: usize,
    /// Target probabilities clamped before the logarithm.
    pub clamped_probs: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub steps: usize,
    pub train_sessions: usize,
    pub valid_sessions: usize,
    pub final_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum ReportLine {
    Epoch(EpochRecord),
    Summary(TrainSummary),
}

impl EpochRecord {
    /// The record as one newline-terminated line of [`TrainReport::to_jsonl`].
    pub fn to_json_line(&self) -> String {
        let mut line = serde_json::to_string(&ReportLine::Epoch(self.clone())).expect("serializable");
        line.push('\n');
        line
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub summary: TrainSummary,
}

impl TrainReport {
    /// One JSON object per epoch (`"record":"epoch"`) and a final summary
    /// (`"record":"summary"`).
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&e.to_json_line());
        }
        out.push_str(&serde_json::to_string(&ReportLine::Summary(self.summary.clone())).expect("serializable"));
        out.push('\n');
        out
    }

    pub fn from_jsonl(text: &str) -> Result<TrainReport> {
        let mut epochs = Vec::new();
        let mut summary = None;
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let parsed: ReportLine = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
            match parsed {
                ReportLine::Epoch(e) => epochs.push(e),
                ReportLine::Summary(s) => summary = Some(s),
            }
        }
        let summary = summary.ok_or_else(|| Error::Parse {
            line: 0,
            message: "missing summary record".into(),
        })?;
        Ok(TrainReport { epochs, summary })
    }

    /// The report with wall-clock fields zeroed.
    pub fn without_timing(&self) -> TrainReport {
        let mut r = self.clone();
        r.epochs.iter_mut().for_each(|e| e.seconds = 0.0);
        r.summary.seconds = 0.0;
        r
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub report: TrainReport,
    /// Indices into the input sessions used for gradient steps.
    pub train_ids: Vec<usize>,
    /// Indices held out for validation.
    pub valid_ids: Vec<usize>,
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// Splits `n` session indices into (train, validation).
pub fn holdout(n: usize, fraction: f64, seed: Seed) -> (Vec<usize>, Vec<usize>) {
    let mut ids: Vec<usize> = (0..n).collect();
    let k = ((n as f64 * fraction).round() as usize).min(n.saturating_sub(1));
    if k == 0 {
        return (ids, Vec::new());
    }
    ids.shuffle(&mut seed.stream("holdout"));
    let mut valid = ids.split_off(n - k);
    ids.sort_unstable();
    valid.sort_unstable();
    (ids, valid)
}

pub fn train(sessions: &[Session], num_items: usize, config: &TrainConfig) -> Result<TrainOutcome> {
    train_observed(sessions, num_items, config, &mut |_| {})
}

/// [`train`], calling `observe` after every epoch.
pub fn train_observed(
    sessions: &[Session],
    num_items: usize,
    config: &TrainConfig,
    observe: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if sessions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let seed = Seed(config.seed);
    let schedule = &config.schedule;
    let con = &config.contrastive;

    let (train_ids, valid_ids) = holdout(sessions.len(), schedule.validation_fraction, seed);
    let train_set: Vec<Session> = train_ids.iter().map(|&i| sessions[i].clone()).collect();
    let valid_set: Vec<Session> = valid_ids.iter().map(|&i| sessions[i].clone()).collect();

    let mut model = Model::new(config.model.clone(), num_items, seed)?;
    let mut adam = AdamState::new(&model.params, schedule.lr);
    let mut bank = MemoryBank::new(&train_set, config.model.dim);
    let mut shuffle_rng = seed.stream("shuffle");
    let mut dropout_rng = seed.stream("dropout");
    let mut negative_rng = seed.stream("negatives");

    let started = Instant::now();
    let mut records = Vec::with_capacity(schedule.epochs);
    let mut total_steps = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=schedule.epochs {
        let epoch_start = Instant::now();
        let mut step_losses = Vec::new();
        adam.lr = schedule.lr_at(epoch);
        order.shuffle(&mut shuffle_rng);
        let mut rec = EpochRecord {
            epoch,
            lr: adam.lr,
            steps: 0,
            loss_total: 0.0,
            loss_pred: 0.0,
            loss_con: 0.0,
            loss_median: 0.0,
            valid_recall: None,
            valid_mrr: None,
            twin_passes: 0,
            fallback_samples: 0,
            skipped_anchors: 0,
            clamped_probs: 0,
            seconds: 0.0,
        };

        for ids in order.chunks(schedule.batch_size) {
            let batch_sessions: Vec<Session> = ids.iter().map(|&i| train_set[i].clone()).collect();
            let batch = model.batch(&batch_sessions)?;
            let targets: Vec<usize> = batch_sessions.iter().map(|s| s.label - 1).collect();

            let mut tape = Tape::new(Mode::Train);
            let bound = model.bind(&mut tape);
            let (first, second) = if con.active() {
                let (a, b) = twin_forward(&model, &mut tape, &bound, &batch, &mut dropout_rng)?;
                rec.twin_passes += 1;
                (a, Some(b))
            } else {
                (model.forward(&mut tape, &bound, &batch, &mut dropout_rng)?, None)
            };

            let (pred, clamped) = prediction_loss(&mut tape, first.logits, &targets)?;
            rec.clamped_probs += clamped;

            let con_loss = match second {
                Some(second) => {
                    let negatives: Vec<Negatives> = ids
                        .iter()
                        .map(|&id| sample_negatives(&bank, id, con.negatives, con.strategy, &mut negative_rng))
                        .collect::<Result<_>>()?;
                    rec.fallback_samples += negatives.iter().filter(|n| n.fallback).count();
                    rec.skipped_anchors += negatives.iter().filter(|n| n.is_empty()).count();
                    let mut l = contrastive_loss(
                        &mut tape,
                        first.hybrid,
                        second.hybrid,
                        &negatives,
                        con.temperature,
                        con.literal_denominator,
                    )?;
                    if con.symmetric {
                        let back = contrastive_loss(
                            &mut tape,
                            second.hybrid,
                            first.hybrid,
                            &negatives,
                            con.temperature,
                            con.literal_denominator,
                        )?;
                        let both = tape.add(l, back)?;
                        l = tape.scale(both, 0.5);
                    }
                    Some(l)
                }
                None => None,
            };

            let params = if schedule.weight_decay != 0.0 {
                regularized(&mut tape, &bound)?
            } else {
                Vec::new()
            };
            let loss = total_loss(&mut tape, pred, con_loss, con.beta, schedule.weight_decay, &params)?;
            let loss_value = tape.value(loss).item();

            let grads = if loss_value.is_finite() {
                Some(tape.backward(loss)?.for_store(&model.params))
            } else {
                None
            };
            let grads = match grads {
                Some(g) if g.iter().all(|t| t.is_finite()) => g,
                _ => {
                    return Err(Error::Diverged {
                        epoch,
                        step: total_steps + 1,
                        last_finite: Box::new(model.params.clone()),
                    })
                }
            };
            adam.step(&mut model.params, &grads)?;
            total_steps += 1;

            if let Some(second) = second {
                bank_update(&mut bank, ids, tape.value(first.hybrid), tape.value(second.hybrid))?;
            }

            rec.steps += 1;
            rec.loss_total += loss_value;
            step_losses.push(loss_value);
            rec.loss_pred += tape.value(pred).item();
            rec.loss_con += con_loss.map_or(0.0, |c| tape.value(c).item());
        }

        let steps = rec.steps.max(1) as f64;
        rec.loss_total /= steps;
        rec.loss_pred /= steps;
        rec.loss_con /= steps;
        rec.loss_median = median(&mut step_losses);
        if !valid_set.is_empty() {
            let k = schedule.eval_k;
            let lists = model.recommend(&valid_set, k)?;
            let labels: Vec<usize> = valid_set.iter().map(|s| s.label).collect();
            rec.valid_recall = Some(recall_at_k(&lists, &labels, k)?);
            rec.valid_mrr = Some(mrr_at_k(&lists, &labels, k)?);
        }
        rec.seconds = epoch_start.elapsed().as_secs_f64();
        observe(&rec);
        records.push(rec);
    }

    let summary = TrainSummary {
        epochs: schedule.epochs,
        steps: total_steps,
        train_sessions: train_set.len(),
        valid_sessions: valid_set.len(),
        final_loss: records.last().map_or(0.0, |r| r.loss_total),
        seconds: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome {
        model,
        report: TrainReport {
            epochs: records,
            summary,
        },
        train_ids,
        valid_ids,
    })
}

#[cfg(test)]
mod tests;
