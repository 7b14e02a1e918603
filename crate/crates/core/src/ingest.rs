//! Reading and validating utterance summaries and target-trial score lists.
//!
//! Scores are taken as given; nothing here computes them. Utterance files
//! carry one row per utterance with `utterance_id,speaker_id` followed by one
//! column per catalog entry named `<feature>_<mean|std>`. Trial files carry
//! `enroll_id,test_id,speaker_id,score` and optionally a `label` column that
//! must read `target`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::catalog::FeatureCatalog;
use crate::error::{Error, Result};

/// Cell text written for missing values.
pub const MISSING: &str = "NA";

#[derive(Debug, Clone, Copy)]
pub struct IngestOptions {
    pub delimiter: u8,
    /// Input F0 summaries are in Hz and should be converted to semitones.
    pub f0_in_hz: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            delimiter: b',',
            f0_in_hz: false,
        }
    }
}

/// Semitones relative to 27.5 Hz.
pub fn hz_to_semitones(hz: f64) -> f64 {
    12.0 * (hz / 27.5).log2()
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceSummary {
    pub utterance_id: String,
    pub speaker_id: String,
    /// One value per catalog column; NaN where missing.
    pub values: Vec<f64>,
}

impl UtteranceSummary {
    pub fn is_complete(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn missing_columns(&self) -> impl Iterator<Item = usize> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_finite())
            .map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, Default)]
pub struct UtteranceTable {
    utterances: Vec<UtteranceSummary>,
    index: HashMap<String, usize>,
}

impl UtteranceTable {
    pub fn new(utterances: Vec<UtteranceSummary>) -> Result<Self> {
        let mut index = HashMap::with_capacity(utterances.len());
        for (i, u) in utterances.iter().enumerate() {
            if index.insert(u.utterance_id.clone(), i).is_some() {
                return Err(Error::Invalid(format!(
                    "duplicate utterance_id {:?}",
                    u.utterance_id
                )));
            }
        }
        Ok(UtteranceTable { utterances, index })
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, UtteranceSummary> {
        self.utterances.iter()
    }

    pub fn get(&self, id: &str) -> Option<&UtteranceSummary> {
        self.index.get(id).map(|&i| &self.utterances[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn by_position(&self, i: usize) -> &UtteranceSummary {
        &self.utterances[i]
    }

    pub fn incomplete_count(&self) -> usize {
        self.utterances.iter().filter(|u| !u.is_complete()).count()
    }
}

pub fn load_utterances(
    path: &Path,
    catalog: &FeatureCatalog,
    opts: &IngestOptions,
) -> Result<UtteranceTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_utterances(file, catalog, opts).map_err(|e| with_path(e, path))
}

pub fn read_utterances<R: Read>(
    reader: R,
    catalog: &FeatureCatalog,
    opts: &IngestOptions,
) -> Result<UtteranceTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);

    let id_col = find("utterance_id")
        .ok_or_else(|| Error::Schema("missing header column utterance_id".into()))?;
    let spk_col =
        find("speaker_id").ok_or_else(|| Error::Schema("missing header column speaker_id".into()))?;
    let value_cols = catalog
        .column_labels()
        .iter()
        .map(|label| {
            find(label).ok_or_else(|| Error::Schema(format!("missing header column {label}")))
        })
        .collect::<Result<Vec<_>>>()?;

    let f0 = if opts.f0_in_hz {
        catalog.feature_index("F0")
    } else {
        None
    };

    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let utterance_id = record[id_col].to_string();
        let speaker_id = record[spk_col].to_string();
        if utterance_id.is_empty() || speaker_id.is_empty() {
            let line = record.position().map_or(0, |p| p.line());
            return Err(Error::Schema(format!("line {line}: empty utterance_id or speaker_id")));
        }
        let mut values: Vec<f64> = value_cols
            .iter()
            .map(|&c| match record[c].parse::<f64>() {
                Ok(v) if v.is_finite() => v,
                _ => f64::NAN,
            })
            .collect();
        if let Some(f) = f0 {
            convert_f0(&mut values, f);
        }
        out.push(UtteranceSummary {
            utterance_id,
            speaker_id,
            values,
        });
    }
    UtteranceTable::new(out)
}

/// Mean is mapped exactly; the std is mapped to first order around the mean
/// (d st / d hz = 12 / (hz ln 2)).
fn convert_f0(values: &mut [f64], feature: usize) {
    let (m, s) = (2 * feature, 2 * feature + 1);
    let mean_hz = values[m];
    if mean_hz.is_finite() && mean_hz > 0.0 {
        values[m] = hz_to_semitones(mean_hz);
        values[s] = 12.0 * values[s] / (mean_hz * std::f64::consts::LN_2);
    } else {
        values[m] = f64::NAN;
        values[s] = f64::NAN;
    }
}

pub fn write_utterances<W: Write>(
    writer: W,
    table: &UtteranceTable,
    catalog: &FeatureCatalog,
    delimiter: u8,
) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_writer(writer);
    let mut header = vec!["utterance_id".to_string(), "speaker_id".to_string()];
    header.extend(catalog.column_labels());
    wtr.write_record(&header).map_err(csv_err)?;
    let mut row = Vec::with_capacity(header.len());
    for u in table.iter() {
        row.clear();
        row.push(u.utterance_id.clone());
        row.push(u.speaker_id.clone());
        row.extend(u.values.iter().map(|v| format_value(*v)));
        wtr.write_record(&row).map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| Error::Invalid(format!("write failed: {e}")))?;
    Ok(())
}

fn format_value(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        MISSING.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub enroll_id: String,
    pub test_id: String,
    pub speaker_id: String,
    pub score: f64,
}

/// Target trials with a per-speaker index. Speakers are kept in order of
/// first appearance.
#[derive(Debug, Clone, Default)]
pub struct TrialTable {
    trials: Vec<TrialRecord>,
    speakers: Vec<String>,
    speaker_trials: Vec<Vec<usize>>,
    speaker_of_trial: Vec<usize>,
}

impl TrialTable {
    pub fn new(trials: Vec<TrialRecord>) -> Self {
        let mut lookup: HashMap<&str, usize> = HashMap::new();
        let mut speakers = Vec::new();
        let mut speaker_trials: Vec<Vec<usize>> = Vec::new();
        let mut speaker_of_trial = Vec::with_capacity(trials.len());
        for (i, t) in trials.iter().enumerate() {
            let s = *lookup.entry(t.speaker_id.as_str()).or_insert_with(|| {
                speakers.push(t.speaker_id.clone());
                speaker_trials.push(Vec::new());
                speakers.len() - 1
            });
            speaker_trials[s].push(i);
            speaker_of_trial.push(s);
        }
        TrialTable {
            trials,
            speakers,
            speaker_trials,
            speaker_of_trial,
        }
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn trials(&self) -> &[TrialRecord] {
        &self.trials
    }

    pub fn speakers(&self) -> &[String] {
        &self.speakers
    }

    pub fn trials_of_speaker(&self, speaker: usize) -> &[usize] {
        &self.speaker_trials[speaker]
    }

    /// Speaker position (into [`speakers`](Self::speakers)) of each trial.
    pub fn speaker_of_trial(&self) -> &[usize] {
        &self.speaker_of_trial
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum RejectReason {
    UnknownUtterance(String),
    SameUtterance,
    NonFiniteScore,
    Unparseable(String),
    IncompleteUtterance(String),
    NotTarget(String),
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::UnknownUtterance(id) => write!(f, "unknown utterance {id:?}"),
            RejectReason::SameUtterance => f.write_str("enroll_id equals test_id"),
            RejectReason::NonFiniteScore => f.write_str("non-finite score"),
            RejectReason::Unparseable(s) => write!(f, "unparseable score {s:?}"),
            RejectReason::IncompleteUtterance(id) => {
                write!(f, "utterance {id:?} has missing feature values")
            }
            RejectReason::NotTarget(l) => write!(f, "label {l:?} is not a target trial"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    /// 1-based data row (header excluded).
    pub row: usize,
    pub reason: RejectReason,
}

#[derive(Debug, Clone)]
pub struct TrialLoad {
    pub table: TrialTable,
    pub rejections: Vec<Rejection>,
    pub input_rows: usize,
}

pub fn load_trials(
    path: &Path,
    utterances: &UtteranceTable,
    opts: &IngestOptions,
) -> Result<TrialLoad> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_trials(file, utterances, opts).map_err(|e| with_path(e, path))
}

pub fn read_trials<R: Read>(
    reader: R,
    utterances: &UtteranceTable,
    opts: &IngestOptions,
) -> Result<TrialLoad> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing header column {name}")))
    };
    let (e_col, t_col, s_col, y_col) = (
        col("enroll_id")?,
        col("test_id")?,
        col("speaker_id")?,
        col("score")?,
    );
    let label_col = headers.iter().position(|h| h == "label");

    let mut trials = Vec::new();
    let mut rejections = Vec::new();
    let mut input_rows = 0;
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        input_rows += 1;
        let row = input_rows;
        let mut reject = |reason| rejections.push(Rejection { row, reason });

        if let Some(lc) = label_col {
            if &record[lc] != "target" {
                reject(RejectReason::NotTarget(record[lc].to_string()));
                continue;
            }
        }
        let (enroll, test, speaker) = (&record[e_col], &record[t_col], &record[s_col]);
        let score = match record[y_col].parse::<f64>() {
            Ok(v) if v.is_finite() => v,
            Ok(_) => {
                reject(RejectReason::NonFiniteScore);
                continue;
            }
            Err(_) => {
                reject(RejectReason::Unparseable(record[y_col].to_string()));
                continue;
            }
        };
        if enroll == test {
            reject(RejectReason::SameUtterance);
            continue;
        }
        let (eu, tu) = match (utterances.get(enroll), utterances.get(test)) {
            (Some(e), Some(t)) => (e, t),
            (None, _) => {
                reject(RejectReason::UnknownUtterance(enroll.to_string()));
                continue;
            }
            (_, None) => {
                reject(RejectReason::UnknownUtterance(test.to_string()));
                continue;
            }
        };
        for u in [eu, tu] {
            if u.speaker_id != speaker {
                return Err(Error::Invalid(format!(
                    "trial row {row}: speaker {speaker:?} but utterance {:?} belongs to {:?}",
                    u.utterance_id, u.speaker_id
                )));
            }
        }
        if let Some(u) = [eu, tu].into_iter().find(|u| !u.is_complete()) {
            reject(RejectReason::IncompleteUtterance(u.utterance_id.clone()));
            continue;
        }
        trials.push(TrialRecord {
            enroll_id: enroll.to_string(),
            test_id: test.to_string(),
            speaker_id: speaker.to_string(),
            score,
        });
    }
    Ok(TrialLoad {
        table: TrialTable::new(trials),
        rejections,
        input_rows,
    })
}

pub fn write_trials<W: Write>(writer: W, table: &TrialTable, delimiter: u8) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_writer(writer);
    wtr.write_record(["enroll_id", "test_id", "speaker_id", "score"])
        .map_err(csv_err)?;
    for t in table.trials() {
        wtr.write_record([
            t.enroll_id.as_str(),
            t.test_id.as_str(),
            t.speaker_id.as_str(),
            &format!("{}", t.score),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| Error::Invalid(format!("write failed: {e}")))?;
    Ok(())
}

/// Restricts a table to the listed speakers, keeping trial order.
pub fn split_by_speaker_set(table: &TrialTable, speakers: &[String]) -> Result<TrialTable> {
    if speakers.is_empty() {
        return Err(Error::Invalid("empty speaker list".into()));
    }
    let keep: HashSet<&str> = speakers.iter().map(String::as_str).collect();
    let trials: Vec<TrialRecord> = table
        .trials()
        .iter()
        .filter(|t| keep.contains(t.speaker_id.as_str()))
        .cloned()
        .collect();
    if trials.is_empty() {
        return Err(Error::Invalid("no trials for selection".into()));
    }
    Ok(TrialTable::new(trials))
}

/// One speaker id per line; blank lines and `#` comments are skipped.
pub fn load_speaker_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Schema(e.to_string())
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Schema(message) | Error::Invalid(message) => Error::Parse {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    }
}
