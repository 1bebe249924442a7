//! SGD training loop over the contrastive objective, in-batch validation
//! accuracy, and checkpointing.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::QAExample;
use crate::encoder::{
    loss_gradient, save_params, sim, EncoderParams, DEFAULT_CONTEXT_BLEND, DEFAULT_DIM,
    DEFAULT_FEATURE_SPACE,
};
use crate::sampler::{build_batch, SamplingStrategy};
use crate::{Error, Result, TrainFloat};

/// Training hyperparameters.
///
/// The reference bi-encoder setting is a learning rate of 2e-5 for 40
/// epochs under Adam on a transformer; the bundled linear encoder uses
/// plain SGD, so the default rate here is 0.05.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: TrainFloat,
    pub epochs: usize,
    pub batch_size: usize,
    pub strategy: SamplingStrategy,
    /// Extra validation passes every this many steps; 0 = epoch end only.
    pub eval_every: usize,
    pub seed: u64,
    pub dim: usize,
    pub feature_space: u32,
    pub context_blend: TrainFloat,
    /// Candidate pool size for in-batch validation.
    pub validation_pool: usize,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 40,
            batch_size: 8,
            strategy: SamplingStrategy::InPassagePlusBm25,
            eval_every: 0,
            seed: 0,
            dim: DEFAULT_DIM,
            feature_space: DEFAULT_FEATURE_SPACE,
            context_blend: DEFAULT_CONTEXT_BLEND,
            validation_pool: 256,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Range("learning_rate must be finite and >= 0".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Range("epochs and batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-epoch record of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub validation_accuracy: Option<f64>,
}

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub wall_time_secs: f64,
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    /// Examples skipped because the strategy needed BM25 negatives they lack.
    pub skipped_examples: usize,
}

/// Fraction of questions whose gold sentence attains the strict maximum
/// similarity in a pooled candidate set built with the bm25x1 strategy
/// (each question contributes its gold and one BM25 negative). Ties fail.
pub fn validation_accuracy(
    params: &EncoderParams,
    dev_set: &[QAExample],
    pool_size: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let max_questions = (pool_size / 2).max(1);
    let mut pooled = Vec::new();
    for example in dev_set.iter().take(max_questions) {
        match build_batch(
            std::slice::from_ref(example),
            SamplingStrategy::OneBm25Random,
            params,
            &mut rng,
        ) {
            Ok(batch) => pooled.push(batch),
            Err(Error::InsufficientNegatives) => continue,
            Err(e) => return Err(e),
        }
    }
    if pooled.is_empty() {
        return Err(Error::EmptyPool);
    }
    // flatten into one candidate pool; remember each question's gold slot
    let mut candidate_vecs: Vec<Vec<TrainFloat>> = Vec::new();
    let mut questions: Vec<(Vec<TrainFloat>, usize)> = Vec::new();
    for batch in &pooled {
        let lb = batch.to_loss_batch(params);
        let offset = candidate_vecs.len();
        for (i, q) in lb.question_vecs.iter().enumerate() {
            questions.push((q.clone(), offset + lb.gold_index[i]));
        }
        candidate_vecs.extend(lb.candidate_vecs);
    }
    let mut correct = 0usize;
    for (q, gold) in &questions {
        let gold_sim = sim(q, &candidate_vecs[*gold])?;
        let strict_max = candidate_vecs
            .iter()
            .enumerate()
            .filter(|(j, _)| j != gold)
            .all(|(_, c)| sim(q, c).unwrap() < gold_sim);
        if strict_max {
            correct += 1;
        }
    }
    Ok(correct as f64 / questions.len() as f64)
}

/// Plain SGD over the contrastive loss; deterministic for a fixed config.
///
/// Writes `final.ckpt` always and `best.ckpt` at the highest validation
/// accuracy (or a copy of the final state when there is no dev set). On a
/// numerical failure the last good state is saved before the error returns.
pub fn train(
    train_set: &[QAExample],
    dev_set: &[QAExample],
    config: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainReport> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let started = Instant::now();
    let mut params = EncoderParams::new(
        config.dim,
        config.feature_space,
        config.context_blend,
        config.seed,
    )?;

    // strategies all need at least one BM25 negative
    let usable: Vec<&QAExample> = train_set
        .iter()
        .filter(|e| !e.bm25_negatives.is_empty())
        .collect();
    let skipped_examples = train_set.len() - usable.len();
    if usable.is_empty() {
        return Err(Error::Range("no trainable examples".into()));
    }

    let final_checkpoint = out_dir.join("final.ckpt");
    let best_checkpoint = out_dir.join("best.ckpt");
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut best_accuracy = f64::NEG_INFINITY;
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..usable.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let examples: Vec<QAExample> = chunk.iter().map(|&i| usable[i].clone()).collect();
            let batch = build_batch(&examples, config.strategy, &params, &mut rng)?;
            let (loss_value, grads) = match loss_gradient(&batch, &params) {
                Ok(ok) => ok,
                Err(e @ Error::Numerical { .. }) => {
                    save_params(&params, &final_checkpoint)?;
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            params
                .question_projection
                .add_scaled(&grads.question_projection, -config.learning_rate);
            params
                .context_projection
                .add_scaled(&grads.context_projection, -config.learning_rate);
            epoch_loss += loss_value;
            batches += 1;
            step += 1;
            if config.eval_every > 0 && step % config.eval_every == 0 && !dev_set.is_empty() {
                let acc = validation_accuracy(&params, dev_set, config.validation_pool, config.seed)?;
                log::info!("step {step}: validation accuracy {acc:.4}");
            }
        }
        let mean_loss = epoch_loss / batches as f64;
        if !mean_loss.is_finite() {
            save_params(&params, &final_checkpoint)?;
            return Err(Error::Numerical {
                context: format!("epoch {epoch} mean loss"),
            });
        }
        let validation = if dev_set.is_empty() {
            None
        } else {
            Some(validation_accuracy(
                &params,
                dev_set,
                config.validation_pool,
                config.seed,
            )?)
        };
        if let Some(acc) = validation {
            if acc > best_accuracy {
                best_accuracy = acc;
                save_params(&params, &best_checkpoint)?;
            }
        }
        epochs.push(EpochRecord {
            epoch,
            mean_loss,
            validation_accuracy: validation,
        });
        log::info!(
            "epoch {epoch}: mean loss {mean_loss:.6}{}",
            validation.map(|a| format!(", val acc {a:.4}")).unwrap_or_default()
        );
    }

    save_params(&params, &final_checkpoint)?;
    if dev_set.is_empty() {
        save_params(&params, &best_checkpoint)?;
    }
    Ok(TrainReport {
        epochs,
        wall_time_secs: started.elapsed().as_secs_f64(),
        final_checkpoint,
        best_checkpoint,
        skipped_examples,
    })
}

/// Write one JSON record per epoch.
pub fn write_report<P: AsRef<Path>>(report: &TrainReport, path: P) -> Result<()> {
    use std::io::Write;
    let mut file = std::fs::File::create(path)?;
    for record in &report.epochs {
        serde_json::to_writer(&mut file, record).map_err(std::io::Error::other)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}
