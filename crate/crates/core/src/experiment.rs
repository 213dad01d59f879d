//! The two synthetic experiments: typed markers against the entity mask on
//! unseen names, and the typed-over-untyped gain under type-consistent
//! training noise.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::marking::{MarkingScheme, SchemeKind};
use crate::model::EncoderVariant;
use crate::synth::{generate, inject_noise, NoiseMode, SynthConfig};
use crate::train::{evaluate, median_f1, prepare, train_seeds, ModelConfig, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    UnseenNames,
    Noise,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unseen-names" => Ok(Self::UnseenNames),
            "noise" => Ok(Self::Noise),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSettings {
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Noise rates compared by the noise preset; the first is the baseline.
    pub noise_rates: Vec<f64>,
    pub noise_mode: NoiseMode,
    pub parallel: bool,
}

impl ExperimentSettings {
    /// Pinned settings. The noise preset turns the name signal off so the
    /// only label source besides the sentence is the injected noise.
    pub fn preset(preset: Preset) -> Self {
        let synth = SynthConfig {
            name_signal: match preset {
                Preset::UnseenNames => 0.5,
                Preset::Noise => 0.0,
            },
            ..SynthConfig::default()
        };
        let model = ModelConfig {
            variant: EncoderVariant::Attn1,
            dim: 32,
            ff_dim: 64,
            vocab_size: 120,
            ..ModelConfig::default()
        };
        let train = TrainConfig {
            base_lr: 1e-2,
            batch_size: 16,
            epochs: 10,
            ..TrainConfig::default()
        };
        let noise_rates = match preset {
            Preset::UnseenNames => vec![],
            Preset::Noise => vec![0.0, 0.3],
        };
        Self {
            synth,
            model,
            train,
            noise_rates,
            noise_mode: NoiseMode::TypeConsistent,
            parallel: false,
        }
    }

    /// Re-seeds the corpus and the per-run seeds from one base seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synth.seed = seed;
        self.train = self.train.reseeded(seed);
        self
    }
}

/// Test accuracy of one scheme across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeResult {
    pub scheme: SchemeKind,
    pub seeds: Vec<u64>,
    pub accuracy: Vec<f64>,
    pub median_accuracy: f64,
}

fn run_scheme(
    train: &Dataset,
    dev: &Dataset,
    test: &Dataset,
    kind: SchemeKind,
    s: &ExperimentSettings,
) -> Result<SchemeResult> {
    let scheme = MarkingScheme::new(kind);
    let outcomes = train_seeds(train, dev, &scheme, &s.model, &s.train, s.parallel)?;
    let mut accuracy = Vec::with_capacity(outcomes.len());
    for out in &outcomes {
        let split = prepare(test, &scheme, &out.vocab, s.model.max_len)?;
        let (report, _) = evaluate(&out.params, &split, &test.schema)?;
        log::info!(
            "{kind} seed {} best epoch {} test accuracy {:.4}",
            out.seed,
            out.best_epoch,
            report.accuracy
        );
        accuracy.push(report.accuracy);
    }
    Ok(SchemeResult {
        scheme: kind,
        seeds: outcomes.iter().map(|o| o.seed).collect(),
        median_accuracy: median_f1(&accuracy)?,
        accuracy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnseenNamesReport {
    pub typed: SchemeResult,
    pub masked: SchemeResult,
    /// Median typed accuracy minus median masked accuracy.
    pub margin: f64,
}

/// Typed entity marker (punct) against the entity mask on test_unseen.
pub fn unseen_names(settings: &ExperimentSettings) -> Result<UnseenNamesReport> {
    let corpus = generate(&settings.synth)?;
    let run = |kind| run_scheme(&corpus.train, &corpus.dev, &corpus.test_unseen, kind, settings);
    let typed = run(SchemeKind::TypedEntityMarkerPunct)?;
    let masked = run(SchemeKind::EntityMask)?;
    Ok(UnseenNamesReport {
        margin: typed.median_accuracy - masked.median_accuracy,
        typed,
        masked,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub rate: f64,
    pub typed: SchemeResult,
    pub untyped: SchemeResult,
    /// Median typed accuracy minus median untyped accuracy.
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub mode: NoiseMode,
    pub rows: Vec<NoiseRow>,
}

impl NoiseReport {
    /// Gain at the last rate minus gain at the first.
    pub fn gain_increase(&self) -> Option<f64> {
        Some(self.rows.last()?.gain - self.rows.first()?.gain)
    }
}

/// Typed against untyped punctuation markers, trained on noisy labels and
/// scored on the clean test_unseen split.
pub fn noise(settings: &ExperimentSettings) -> Result<NoiseReport> {
    if settings.noise_rates.is_empty() {
        return Err(Error::Config("noise experiment needs at least one rate".into()));
    }
    let synth = SynthConfig {
        noise_rate: 0.0,
        ..settings.synth.clone()
    };
    let corpus = generate(&synth)?;
    let mut rows = Vec::new();
    for (i, &rate) in settings.noise_rates.iter().enumerate() {
        let noise_seed = synth.seed.wrapping_add(i as u64 + 1);
        let train = inject_noise(&corpus.train, rate, settings.noise_mode, noise_seed)?;
        let run = |kind| run_scheme(&train, &corpus.dev, &corpus.test_unseen, kind, settings);
        let typed = run(SchemeKind::TypedEntityMarkerPunct)?;
        let untyped = run(SchemeKind::EntityMarkerPunct)?;
        rows.push(NoiseRow {
            rate,
            gain: typed.median_accuracy - untyped.median_accuracy,
            typed,
            untyped,
        });
    }
    Ok(NoiseReport {
        mode: settings.noise_mode,
        rows,
    })
}

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

impl fmt::Display for UnseenNamesReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<28} {:>8}  per-seed", "scheme", "median")?;
        for r in [&self.typed, &self.masked] {
            let seeds: Vec<String> = r.accuracy.iter().map(|&a| pct(a)).collect();
            writeln!(
                f,
                "{:<28} {:>8}  {}",
                r.scheme.name(),
                pct(r.median_accuracy),
                seeds.join(" ")
            )?;
        }
        write!(f, "margin {} points", pct(self.margin))
    }
}

impl fmt::Display for NoiseReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8} {:>8} {:>10} {:>8}", "noise", "typed", "untyped", "gain")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<8} {:>8} {:>10} {:>8}",
                pct(r.rate),
                pct(r.typed.median_accuracy),
                pct(r.untyped.median_accuracy),
                pct(r.gain)
            )?;
        }
        match self.gain_increase() {
            Some(d) => write!(f, "gain change {} points", pct(d)),
            None => Ok(()),
        }
    }
}
