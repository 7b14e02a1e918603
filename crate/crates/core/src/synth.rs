//! Synthetic utterance summaries and target-trial scores drawn from the
//! random-intercept model with known parameters.
//!
//! Every speaker draws from its own ChaCha stream (keyed on the seed and the
//! speaker position), so output does not depend on generation order or
//! thread count. Utterance summaries are standard normal per column, scaled
//! by `utterance_sd`; with `group_correlation = rho > 0` the columns of one
//! group share a latent factor, `sqrt(rho) g + sqrt(1 - rho) e`.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::FeatureCatalog;
use crate::error::{Error, Result};
use crate::ingest::{write_trials, write_utterances, TrialRecord, TrialTable, UtteranceSummary, UtteranceTable};
use crate::predictors::{DesignContext, Predictor};
use crate::special::normal_quantile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Effect {
    /// Group name or `<feature>_<stat>` column label.
    pub predictor: String,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_speakers: usize,
    pub trials_per_speaker: usize,
    pub utterances_per_speaker: usize,
    pub intercept: f64,
    pub effects: Vec<Effect>,
    pub sigma_b: f64,
    pub sigma: f64,
    pub utterance_sd: f64,
    pub group_correlation: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_speakers: 200,
            trials_per_speaker: 50,
            utterances_per_speaker: 10,
            intercept: 28.0,
            effects: vec![
                Effect {
                    predictor: "F0".into(),
                    coefficient: -1.0,
                },
                Effect {
                    predictor: "VQ".into(),
                    coefficient: -0.35,
                },
            ],
            sigma_b: 4.5,
            sigma: 9.0,
            utterance_sd: 1.0,
            group_correlation: 0.0,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_speakers < 2 {
            return Err(Error::Invalid(format!("n_speakers must be >= 2, got {}", self.n_speakers)));
        }
        if self.trials_per_speaker < 1 {
            return Err(Error::Invalid("trials_per_speaker must be >= 1".into()));
        }
        if self.utterances_per_speaker < 2 {
            return Err(Error::Invalid("utterances_per_speaker must be >= 2".into()));
        }
        if !(self.sigma_b >= 0.0) || !(self.sigma >= 0.0) || !self.sigma_b.is_finite() || !self.sigma.is_finite() {
            return Err(Error::Invalid("standard deviations must be finite and >= 0".into()));
        }
        if !(self.utterance_sd > 0.0) || !self.utterance_sd.is_finite() {
            return Err(Error::Invalid("utterance_sd must be finite and > 0".into()));
        }
        if !(0.0..1.0).contains(&self.group_correlation) {
            return Err(Error::Invalid("group_correlation must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// The same spec with every effect removed.
    pub fn null(&self) -> SynthSpec {
        SynthSpec {
            effects: Vec::new(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerTruth {
    pub speaker: String,
    pub effect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub spec: SynthSpec,
    /// Coefficient names, intercept first.
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    pub sigma_b: f64,
    pub sigma: f64,
    pub speakers: Vec<SpeakerTruth>,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub utterances: UtteranceTable,
    pub trials: TrialTable,
    pub truth: Truth,
}

impl SynthData {
    /// Writes `utterances.csv`, `trials.csv` and `truth.json` into `dir`.
    pub fn write_to_dir(&self, dir: &Path, catalog: &FeatureCatalog) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let create = |name: &str| {
            let path = dir.join(name);
            File::create(&path)
                .map(BufWriter::new)
                .map_err(|e| Error::io(&path, e))
        };
        write_utterances(create("utterances.csv")?, &self.utterances, catalog, b',')?;
        write_trials(create("trials.csv")?, &self.trials, b',')?;
        let mut text = serde_json::to_string_pretty(&self.truth)
            .map_err(|e| Error::Invalid(format!("truth serialization: {e}")))?;
        text.push('\n');
        let path = dir.join("truth.json");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

struct Gaussian(ChaCha8Rng);

impl Gaussian {
    fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Gaussian(rng)
    }

    /// Inverse-CDF transform of a 53-bit uniform on the open unit interval.
    fn draw(&mut self) -> f64 {
        let u = ((self.0.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
        normal_quantile(u)
    }
}

struct SpeakerDraw {
    effect: f64,
    utterances: Vec<Vec<f64>>,
    noise: Vec<f64>,
}

fn draw_speaker(spec: &SynthSpec, catalog: &FeatureCatalog, column_group: &[Option<usize>], index: usize) -> SpeakerDraw {
    let mut g = Gaussian::new(spec.seed, index as u64);
    let effect = spec.sigma_b * g.draw();
    let rho = spec.group_correlation;
    let n_groups = catalog.groups().len();
    let utterances = (0..spec.utterances_per_speaker)
        .map(|_| {
            let latent: Vec<f64> = (0..n_groups).map(|_| g.draw()).collect();
            column_group
                .iter()
                .map(|grp| {
                    let e = g.draw();
                    let v = match grp {
                        Some(k) if rho > 0.0 => rho.sqrt() * latent[*k] + (1.0 - rho).sqrt() * e,
                        _ => e,
                    };
                    spec.utterance_sd * v
                })
                .collect()
        })
        .collect();
    let noise = (0..spec.trials_per_speaker).map(|_| spec.sigma * g.draw()).collect();
    SpeakerDraw {
        effect,
        utterances,
        noise,
    }
}

/// `(enroll, test)` utterance positions of a speaker's `k`-th trial: ordered
/// distinct pairs, cycling when there are more trials than pairs.
fn trial_pair(k: usize, u: usize) -> (usize, usize) {
    let m = k % (u * (u - 1));
    let a = m % u;
    (a, (a + 1 + m / u) % u)
}

pub fn generate(spec: &SynthSpec, catalog: &FeatureCatalog) -> Result<SynthData> {
    spec.validate()?;
    let effects: Vec<(Predictor, f64)> = spec
        .effects
        .iter()
        .map(|e| Ok((Predictor::parse(catalog, &e.predictor)?, e.coefficient)))
        .collect::<Result<_>>()?;

    let mut column_group = vec![None; catalog.n_columns()];
    for (k, grp) in catalog.groups().groups.iter().enumerate() {
        for &c in &grp.members {
            column_group[c] = Some(k);
        }
    }
    let draws: Vec<SpeakerDraw> = (0..spec.n_speakers)
        .into_par_iter()
        .map(|i| draw_speaker(spec, catalog, &column_group, i))
        .collect();

    let width = spec.n_speakers.to_string().len().max(4);
    let uwidth = spec.utterances_per_speaker.to_string().len().max(2);
    let speaker_id = |i: usize| format!("spk{:0width$}", i + 1);
    let utt_id = |i: usize, j: usize| format!("spk{:0width$}-u{:0uwidth$}", i + 1, j + 1);

    let mut utterances = Vec::with_capacity(spec.n_speakers * spec.utterances_per_speaker);
    let mut trials = Vec::with_capacity(spec.n_speakers * spec.trials_per_speaker);
    for (i, d) in draws.iter().enumerate() {
        for (j, values) in d.utterances.iter().enumerate() {
            utterances.push(UtteranceSummary {
                utterance_id: utt_id(i, j),
                speaker_id: speaker_id(i),
                values: values.clone(),
            });
        }
        for k in 0..spec.trials_per_speaker {
            let (a, b) = trial_pair(k, spec.utterances_per_speaker);
            trials.push(TrialRecord {
                enroll_id: utt_id(i, a),
                test_id: utt_id(i, b),
                speaker_id: speaker_id(i),
                score: 0.0,
            });
        }
    }
    let utterances = UtteranceTable::new(utterances)?;

    // Distances exactly as an analysis of the written tables would see them.
    let mut linear = vec![spec.intercept; trials.len()];
    if !effects.is_empty() {
        let ctx = DesignContext::new(&TrialTable::new(trials.clone()), &utterances, catalog)?;
        let selection: Vec<Predictor> = effects.iter().map(|e| e.0).collect();
        let design = ctx.design(&selection)?;
        for (i, l) in linear.iter_mut().enumerate() {
            *l += design
                .row(i)
                .iter()
                .zip(&effects)
                .map(|(x, (_, b))| x * b)
                .sum::<f64>();
        }
    }
    let per = spec.trials_per_speaker;
    for (t, trial) in trials.iter_mut().enumerate() {
        let d = &draws[t / per];
        trial.score = linear[t] + d.effect + d.noise[t % per];
    }

    let mut names = vec!["(Intercept)".to_string()];
    let mut beta = vec![spec.intercept];
    for (p, b) in &effects {
        names.push(p.label(catalog));
        beta.push(*b);
    }
    Ok(SynthData {
        utterances,
        trials: TrialTable::new(trials),
        truth: Truth {
            spec: spec.clone(),
            names,
            beta,
            sigma_b: spec.sigma_b,
            sigma: spec.sigma,
            speakers: draws
                .iter()
                .enumerate()
                .map(|(i, d)| SpeakerTruth {
                    speaker: speaker_id(i),
                    effect: d.effect,
                })
                .collect(),
        },
    })
}

/// Data from `spec` with all effects removed: scores are intercept plus
/// speaker effect plus noise, independent of every distance.
pub fn null_generate(spec: &SynthSpec, catalog: &FeatureCatalog) -> Result<SynthData> {
    generate(&spec.null(), catalog)
}
