//! Fine-tuning protocol: Adam with linear warmup and linear decay, epoch
//! loop with dev-F1 checkpoint selection, and median-over-seeds reporting.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, LabelSchema};
use crate::error::{Error, Result};
use crate::eval::{score_indices, EvalReport};
use crate::marking::{mark, MarkingScheme};
use crate::model::{
    accumulate_gradients, predict, predict_proba, ClassifierParams, EncoderVariant, Example, ModelDims, DEFAULT_MAX_LEN,
};
use crate::tokenize::{build_vocab, subtokenize, VocabOptions, Vocabulary};

fn default_base_lr() -> f64 {
    5e-5
}
fn default_batch_size() -> usize {
    64
}
fn default_epochs() -> usize {
    5
}
fn default_warmup() -> f64 {
    0.1
}
fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

/// Optimization settings. Read from a flat `key = value` TOML file; every
/// key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_base_lr")]
    pub base_lr: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    /// Global gradient-norm clipping; off when absent.
    #[serde(default)]
    pub clip_norm: Option<f64>,
    /// With zero epochs, return the initial parameters instead of failing.
    #[serde(default)]
    pub allow_zero_epochs: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: default_base_lr(),
            batch_size: default_batch_size(),
            epochs: default_epochs(),
            warmup_fraction: default_warmup(),
            seeds: default_seeds(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            adam_eps: default_adam_eps(),
            clip_norm: None,
            allow_zero_epochs: false,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config("base_lr must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config("warmup_fraction must lie in [0, 1]".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        Ok(())
    }

    pub fn total_steps(&self, train_size: usize) -> usize {
        self.epochs * train_size.div_ceil(self.batch_size)
    }

    /// Derives the run seeds from one base seed, keeping the seed count.
    pub fn reseeded(mut self, seed: u64) -> Self {
        let n = self.seeds.len() as u64;
        self.seeds = (0..n).map(|i| seed.wrapping_mul(1000).wrapping_add(i + 1)).collect();
        self
    }
}

/// Encoder and vocabulary settings for the desk-scale classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: EncoderVariant,
    pub dim: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub lowercase: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: EncoderVariant::Attn1,
            dim: 32,
            ff_dim: 64,
            max_len: DEFAULT_MAX_LEN,
            vocab_size: 8000,
            lowercase: false,
        }
    }
}

impl ModelConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.dim == 0 || cfg.ff_dim == 0 || cfg.max_len == 0 {
            return Err(Error::Config("dim, ff_dim and max_len must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

/// Learning rate after `step` of `total_steps` updates: linear from 0 to
/// `base_lr` over the warmup steps, then linear back to 0. Both endpoints
/// are 0 even when the warmup is empty or covers every step.
pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Config("learning-rate schedule needs at least one step".into()));
    }
    if step > total_steps {
        return Err(Error::Config(format!("step {step} beyond total {total_steps}")));
    }
    if step == 0 || step == total_steps {
        return Ok(0.0);
    }
    let warmup = (cfg.warmup_fraction * total_steps as f64).round() as usize;
    Ok(if step <= warmup {
        cfg.base_lr * (step as f64 / warmup as f64)
    } else {
        cfg.base_lr * ((total_steps - step) as f64 / (total_steps - warmup) as f64)
    })
}

/// Adam with bias correction and no weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    first: ClassifierParams,
    second: ClassifierParams,
    steps: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: &ClassifierParams, cfg: &TrainConfig) -> Self {
        Self {
            first: params.zeros_like(),
            second: params.zeros_like(),
            steps: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
        }
    }

    pub fn step(&mut self, params: &mut ClassifierParams, grads: &ClassifierParams, lr: f64) {
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps);
        let c2 = 1.0 - self.beta2.powi(self.steps);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((_, p), (_, g)), ((_, m), (_, v))) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.first.tensors_mut().into_iter().zip(self.second.tensors_mut()))
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

fn clip_gradients(grads: &mut ClassifierParams, max_norm: f64) {
    let norm = grads
        .tensors()
        .iter()
        .flat_map(|(_, t)| t.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for (_, t) in grads.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= scale);
        }
    }
}

/// A split marked, subtokenized and paired with gold label indices.
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub ids: Vec<String>,
    pub examples: Vec<Example>,
}

impl PreparedSplit {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn gold(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.gold).collect()
    }
}

pub fn prepare(dataset: &Dataset, scheme: &MarkingScheme, vocab: &Vocabulary, max_len: usize) -> Result<PreparedSplit> {
    let mut ids = Vec::with_capacity(dataset.len());
    let mut examples = Vec::with_capacity(dataset.len());
    for inst in &dataset.instances {
        let marked = mark(inst, scheme)?;
        let input = subtokenize(&marked, vocab)?;
        if input.len() > max_len {
            return Err(Error::validation(
                &inst.id,
                format!("{} subtokens exceed max_len {max_len}", input.len()),
            ));
        }
        let gold = dataset
            .schema
            .index_of(&inst.relation)
            .ok_or_else(|| Error::validation(&inst.id, "relation missing from schema"))?;
        ids.push(inst.id.clone());
        examples.push(Example { input, gold });
    }
    Ok(PreparedSplit { ids, examples })
}

pub fn predict_split(params: &ClassifierParams, split: &PreparedSplit) -> Result<Vec<usize>> {
    split
        .examples
        .iter()
        .map(|ex| predict_proba(&ex.input, params).map(|p| predict(p.view())))
        .collect()
}

pub fn evaluate(
    params: &ClassifierParams,
    split: &PreparedSplit,
    schema: &LabelSchema,
) -> Result<(EvalReport, Vec<usize>)> {
    let preds = predict_split(params, split)?;
    let report = score_indices(&split.gold(), &preds, schema)?;
    Ok((report, preds))
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seed: u64,
    pub epoch: usize,
    pub step: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub seed: u64,
    /// Parameters from the epoch with the best dev F1.
    pub params: ClassifierParams,
    pub vocab: Vocabulary,
    pub scheme: MarkingScheme,
    pub dev_f1: Vec<f64>,
    /// 1-based; 0 when no epoch ran.
    pub best_epoch: usize,
    pub log: Vec<LogRecord>,
}

impl TrainOutcome {
    pub fn best_dev_f1(&self) -> Option<f64> {
        self.best_epoch.checked_sub(1).map(|i| self.dev_f1[i])
    }
}

/// Trains one model on `train`, selecting the epoch with the best dev
/// micro-F1 (earliest on ties). Deterministic given `seed`.
pub fn train_run(
    train: &Dataset,
    dev: &Dataset,
    scheme: &MarkingScheme,
    model: &ModelConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    scheme.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    if train.schema != dev.schema {
        return Err(Error::Schema("train and dev splits use different label schemas".into()));
    }
    let vocab = build_vocab(
        train,
        &[*scheme],
        VocabOptions {
            max_size: model.vocab_size,
            lowercase: model.lowercase,
        },
    )?;
    let train_split = prepare(train, scheme, &vocab, model.max_len)?;
    let dev_split = prepare(dev, scheme, &vocab, model.max_len)?;
    train_prepared(&train_split, &dev_split, &train.schema, vocab, scheme, model, cfg, seed)
}

#[allow(clippy::too_many_arguments)]
pub fn train_prepared(
    train: &PreparedSplit,
    dev: &PreparedSplit,
    schema: &LabelSchema,
    vocab: Vocabulary,
    scheme: &MarkingScheme,
    model: &ModelConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = ModelDims {
        vocab_size: vocab.len(),
        num_classes: schema.len(),
        dim: model.dim,
        ff_dim: model.ff_dim,
        max_len: model.max_len,
        variant: model.variant,
    };
    let mut params = ClassifierParams::init(dims, &mut rng);

    if cfg.epochs == 0 {
        if cfg.allow_zero_epochs {
            return Ok(TrainOutcome {
                seed,
                params,
                vocab,
                scheme: *scheme,
                dev_f1: vec![],
                best_epoch: 0,
                log: vec![],
            });
        }
        return Err(Error::Config("epochs must be positive".into()));
    }

    let total_steps = cfg.total_steps(train.len());
    let mut adam = Adam::new(&params, cfg);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, usize, ClassifierParams)> = None;
    let mut dev_f1 = Vec::with_capacity(cfg.epochs);
    let mut log = Vec::new();
    let mut step = 0;
    let mut batch = Vec::with_capacity(cfg.batch_size);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train.examples[i].clone()));
            let mut grads = params.zeros_like();
            let loss = accumulate_gradients(&batch, &params, &mut grads)? / batch.len() as f64;
            if let Some(max_norm) = cfg.clip_norm {
                clip_gradients(&mut grads, max_norm);
            }
            let lr = lr_at(step, total_steps, cfg)?;
            adam.step(&mut params, &grads, lr);
            step += 1;
            log.push(LogRecord {
                seed,
                epoch,
                step,
                lr: Some(lr),
                loss: Some(loss),
                dev_f1: None,
            });
        }
        if !params.is_finite() {
            return Err(Error::Internal(format!("non-finite parameters after epoch {epoch}")));
        }
        let (report, _) = evaluate(&params, dev, schema)?;
        dev_f1.push(report.f1);
        log.push(LogRecord {
            seed,
            epoch,
            step,
            lr: None,
            loss: None,
            dev_f1: Some(report.f1),
        });
        if best.as_ref().is_none_or(|(f1, _, _)| report.f1 > *f1) {
            best = Some((report.f1, epoch, params.clone()));
        }
    }

    let (_, best_epoch, best_params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        seed,
        params: best_params,
        vocab,
        scheme: *scheme,
        dev_f1,
        best_epoch,
        log,
    })
}

/// Runs [`train_run`] once per seed in `cfg.seeds`, optionally on one
/// thread per seed. Results are in seed order either way.
pub fn train_seeds(
    train: &Dataset,
    dev: &Dataset,
    scheme: &MarkingScheme,
    model: &ModelConfig,
    cfg: &TrainConfig,
    parallel: bool,
) -> Result<Vec<TrainOutcome>> {
    if !parallel {
        return cfg
            .seeds
            .iter()
            .map(|&seed| train_run(train, dev, scheme, model, cfg, seed))
            .collect();
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .seeds
            .iter()
            .map(|&seed| scope.spawn(move || train_run(train, dev, scheme, model, cfg, seed)))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .map_err(|_| Error::Internal("training thread panicked".into()))?
            })
            .collect()
    })
}

/// Median of `scores`; even counts average the two central values.
pub fn median_f1(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Config("median of an empty score list".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Ok(if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(base_lr: f64, warmup_fraction: f64) -> TrainConfig {
        TrainConfig {
            base_lr,
            warmup_fraction,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn schedule_points() {
        let c = cfg(3e-5, 0.1);
        assert_eq!(lr_at(0, 100, &c).unwrap(), 0.0);
        assert_eq!(lr_at(10, 100, &c).unwrap(), 3e-5);
        assert_eq!(lr_at(100, 100, &c).unwrap(), 0.0);
        assert_eq!(lr_at(55, 100, &c).unwrap(), 1.5e-5);
        assert!(lr_at(0, 0, &c).is_err());
        assert!(lr_at(101, 100, &c).is_err());
    }

    #[test]
    fn schedule_without_warmup_decays_from_first_step() {
        let c = cfg(1.0, 0.0);
        assert_eq!(lr_at(0, 4, &c).unwrap(), 0.0);
        assert_eq!(lr_at(1, 4, &c).unwrap(), 0.75);
        assert_eq!(lr_at(2, 4, &c).unwrap(), 0.5);
        assert_eq!(lr_at(4, 4, &c).unwrap(), 0.0);
    }

    #[test]
    fn medians() {
        assert_eq!(median_f1(&[70.0, 71.0, 72.0, 73.0, 74.0]).unwrap(), 72.0);
        assert_eq!(median_f1(&[74.0, 70.0]).unwrap(), 72.0);
        assert_eq!(median_f1(&[3.0]).unwrap(), 3.0);
        assert!(median_f1(&[]).is_err());
    }

    #[test]
    fn config_from_toml() {
        let c = TrainConfig::from_toml("base_lr = 3e-5\nseeds = [7, 8]\n").unwrap();
        assert_eq!(c.base_lr, 3e-5);
        assert_eq!(c.seeds, vec![7, 8]);
        assert_eq!(c.batch_size, 64);
        assert_eq!(c.epochs, 5);
        assert_eq!(c.warmup_fraction, 0.1);
        assert!(TrainConfig::from_toml("bogus = 1").is_err());
        assert!(TrainConfig::from_toml("warmup_fraction = 1.5").is_err());
    }

    #[test]
    fn model_config_from_toml() {
        let m = ModelConfig::from_toml("variant = \"lookup\"\ndim = 8\n").unwrap();
        assert_eq!(m.variant, EncoderVariant::Lookup);
        assert_eq!(m.dim, 8);
        assert_eq!(m.ff_dim, ModelConfig::default().ff_dim);
        assert!(ModelConfig::from_toml("depth = 2").is_err());
        assert!(ModelConfig::from_toml("dim = 0").is_err());
    }

    #[test]
    fn reseeding_keeps_seed_count() {
        let c = TrainConfig::default().reseeded(3);
        assert_eq!(c.seeds, vec![3001, 3002, 3003, 3004, 3005]);
    }

    #[test]
    fn total_steps_keeps_partial_batch() {
        let c = TrainConfig::default();
        assert_eq!(c.total_steps(64), 5);
        assert_eq!(c.total_steps(65), 10);
    }
}
