//! Regression design construction.
//!
//! Utterance summaries are z-scored per column over the distinct utterances
//! that appear in the analysed trial table, each trial becomes the vector of
//! absolute differences between its enrollment and test z-scores, and
//! optionally those distances are summed within feature groups.

use std::collections::HashSet;
use std::io::Write;

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::catalog::{FeatureCatalog, GroupScheme};
use crate::error::{Error, Result};
use crate::ingest::{TrialTable, UtteranceSummary, UtteranceTable};
use crate::numeric::mean_sd;

/// Per-column location and scale. Columns that are constant over the
/// population are dropped and standardize to NaN.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Standardizer {
    /// `(mean, sd)` per catalog column; `None` for dropped columns.
    columns: Vec<Option<(f64, f64)>>,
    dropped: Vec<usize>,
    population: usize,
}

impl Standardizer {
    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn retained(&self) -> usize {
        self.columns.len() - self.dropped.len()
    }

    pub fn dropped(&self) -> &[usize] {
        &self.dropped
    }

    pub fn is_dropped(&self, col: usize) -> bool {
        self.columns[col].is_none()
    }

    pub fn moments(&self, col: usize) -> Option<(f64, f64)> {
        self.columns[col]
    }

    pub fn population(&self) -> usize {
        self.population
    }

    pub fn standardize_into(&self, values: &[f64], out: &mut [f64]) {
        for ((o, v), m) in out.iter_mut().zip(values).zip(&self.columns) {
            *o = match m {
                Some((mean, sd)) => (v - mean) / sd,
                None => f64::NAN,
            };
        }
    }

    pub fn standardize(&self, values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; values.len()];
        self.standardize_into(values, &mut out);
        out
    }
}

/// Fits column means and sample standard deviations over `utterances`.
///
/// Missing values are skipped per column. Every retained column needs at
/// least two finite values; a column whose spread is zero relative to its
/// level is dropped with a warning.
pub fn fit_standardizer(
    utterances: &[&UtteranceSummary],
    catalog: &FeatureCatalog,
) -> Result<Standardizer> {
    if utterances.len() < 2 {
        return Err(Error::Invalid(format!(
            "standardization needs at least 2 utterances, got {}",
            utterances.len()
        )));
    }
    let n_cols = catalog.n_columns();
    let mut columns = Vec::with_capacity(n_cols);
    let mut dropped = Vec::new();
    let mut buf = Vec::with_capacity(utterances.len());
    for c in 0..n_cols {
        buf.clear();
        buf.extend(utterances.iter().map(|u| u.values[c]).filter(|v| v.is_finite()));
        if buf.len() < 2 {
            return Err(Error::Invalid(format!(
                "column {} has fewer than 2 finite values",
                catalog.column_label(c)
            )));
        }
        let (mean, sd) = mean_sd(&buf);
        if sd > 1e-12 * mean.abs() && sd > 0.0 {
            columns.push(Some((mean, sd)));
        } else {
            warn!("column {} is constant; dropped", catalog.column_label(c));
            columns.push(None);
            dropped.push(c);
        }
    }
    Ok(Standardizer {
        columns,
        dropped,
        population: utterances.len(),
    })
}

/// Absolute difference of two standardized summary vectors.
pub fn distance_features(enroll: &[f64], test: &[f64]) -> Vec<f64> {
    enroll.iter().zip(test).map(|(e, t)| (e - t).abs()).collect()
}

/// Sums member distances per group, in scheme order. Non-finite members
/// (dropped columns) contribute nothing.
pub fn group_sum(distances: &[f64], scheme: &GroupScheme) -> Vec<f64> {
    scheme
        .groups
        .iter()
        .map(|g| {
            g.members
                .iter()
                .map(|&c| distances[c])
                .filter(|d| d.is_finite())
                .sum()
        })
        .collect()
}

/// One fixed-effect column of a design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Predictor {
    /// Sum of member distances of the group at this scheme position.
    Group(usize),
    /// Single catalog column distance.
    Column(usize),
}

impl Predictor {
    /// Group names take precedence over `<feature>_<stat>` column labels.
    pub fn parse(catalog: &FeatureCatalog, s: &str) -> Result<Predictor> {
        let s = s.trim();
        if let Some(g) = catalog.groups().position(s) {
            return Ok(Predictor::Group(g));
        }
        catalog
            .parse_column(s)
            .map(Predictor::Column)
            .ok_or_else(|| Error::Invalid(format!("unknown predictor {s:?}")))
    }

    pub fn parse_list(catalog: &FeatureCatalog, s: &str) -> Result<Vec<Predictor>> {
        s.split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| Predictor::parse(catalog, p))
            .collect()
    }

    pub fn label(&self, catalog: &FeatureCatalog) -> String {
        match *self {
            Predictor::Group(g) => catalog.groups().groups[g].name.clone(),
            Predictor::Column(c) => catalog.column_label(c),
        }
    }

    /// Position used for deterministic tie-breaking: groups in scheme order,
    /// then columns in catalog order.
    pub fn catalog_order(&self, catalog: &FeatureCatalog) -> usize {
        match *self {
            Predictor::Group(g) => g,
            Predictor::Column(c) => catalog.groups().len() + c,
        }
    }
}

/// All groups of the catalog's scheme, in order.
pub fn group_predictors(catalog: &FeatureCatalog) -> Vec<Predictor> {
    (0..catalog.groups().len()).map(Predictor::Group).collect()
}

/// Fixed-effect regression design with speaker grouping. The intercept is
/// implicit and not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    response: Vec<f64>,
    /// Row-major n x d.
    predictors: Vec<f64>,
    predictor_names: Vec<String>,
    speaker_index: Vec<usize>,
    speakers: Vec<String>,
    notes: Vec<String>,
}

impl Design {
    /// General constructor for arbitrary finite regressors.
    ///
    /// `speaker_index[i]` indexes into `speakers`.
    pub fn from_parts(
        response: Vec<f64>,
        predictors: Vec<f64>,
        predictor_names: Vec<String>,
        speaker_index: Vec<usize>,
        speakers: Vec<String>,
    ) -> Result<Self> {
        let n = response.len();
        let d = predictor_names.len();
        if predictors.len() != n * d {
            return Err(Error::Invalid(format!(
                "predictor buffer has {} entries, expected {n} x {d}",
                predictors.len()
            )));
        }
        if speaker_index.len() != n {
            return Err(Error::Invalid("speaker index length differs from response".into()));
        }
        if let Some(&s) = speaker_index.iter().find(|&&s| s >= speakers.len()) {
            return Err(Error::Invalid(format!("speaker index {s} out of range")));
        }
        if response.iter().chain(&predictors).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("design contains non-finite entries".into()));
        }
        Ok(Design {
            response,
            predictors,
            predictor_names,
            speaker_index,
            speakers,
            notes: Vec::new(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.response.len()
    }

    /// Number of predictors excluding the intercept.
    pub fn n_predictors(&self) -> usize {
        self.predictor_names.len()
    }

    pub fn n_speakers(&self) -> usize {
        self.speakers.len()
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_predictors();
        &self.predictors[i * d..(i + 1) * d]
    }

    pub fn predictor_names(&self) -> &[String] {
        &self.predictor_names
    }

    pub fn speaker_index(&self) -> &[usize] {
        &self.speaker_index
    }

    pub fn speakers(&self) -> &[String] {
        &self.speakers
    }

    /// Construction notes (dropped or skipped columns).
    pub fn notes(&self) -> &[String] {
        &self.notes
    }

    /// Same design with the response replaced.
    pub fn with_response(&self, response: Vec<f64>) -> Result<Design> {
        if response.len() != self.n_rows() || response.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("replacement response has wrong length or non-finite values".into()));
        }
        Ok(Design {
            response,
            ..self.clone()
        })
    }

    /// Writes `trial_index,speaker_id,score,<predictor names>`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["trial_index".to_string(), "speaker_id".into(), "score".into()];
        header.extend(self.predictor_names.iter().cloned());
        let werr = |e: csv::Error| Error::Invalid(format!("write failed: {e}"));
        wtr.write_record(&header).map_err(werr)?;
        for i in 0..self.n_rows() {
            let mut rec = vec![
                i.to_string(),
                self.speakers[self.speaker_index[i]].clone(),
                format!("{}", self.response[i]),
            ];
            rec.extend(self.row(i).iter().map(|v| format!("{v}")));
            wtr.write_record(&rec).map_err(werr)?;
        }
        wtr.flush().map_err(|e| Error::Invalid(format!("write failed: {e}")))?;
        Ok(())
    }
}

/// Standardized utterance population and trial pairing for one analysed
/// trial table, from which designs over any predictor selection are cut.
#[derive(Debug, Clone)]
pub struct DesignContext {
    catalog: FeatureCatalog,
    standardizer: Standardizer,
    /// Row-major population x columns z-scores.
    z: Vec<f64>,
    pairs: Vec<(usize, usize)>,
    response: Vec<f64>,
    speaker_index: Vec<usize>,
    speakers: Vec<String>,
}

impl DesignContext {
    pub fn new(
        table: &TrialTable,
        utterances: &UtteranceTable,
        catalog: &FeatureCatalog,
    ) -> Result<Self> {
        if table.is_empty() {
            return Err(Error::Invalid("trial table is empty".into()));
        }
        // Population: distinct utterances referenced by trials, in utterance
        // table order so the moments do not depend on trial order.
        let mut used = vec![false; utterances.len()];
        let mut trial_pos = Vec::with_capacity(table.len());
        for t in table.trials() {
            let lookup = |id: &str| {
                utterances
                    .position(id)
                    .ok_or_else(|| Error::Invalid(format!("trial references unknown utterance {id:?}")))
            };
            let (e, te) = (lookup(&t.enroll_id)?, lookup(&t.test_id)?);
            for p in [e, te] {
                if !utterances.by_position(p).is_complete() {
                    return Err(Error::Invalid(format!(
                        "trial references incomplete utterance {:?}",
                        utterances.by_position(p).utterance_id
                    )));
                }
            }
            used[e] = true;
            used[te] = true;
            trial_pos.push((e, te));
        }
        let mut remap = vec![usize::MAX; utterances.len()];
        let mut population = Vec::new();
        for (i, &u) in used.iter().enumerate() {
            if u {
                remap[i] = population.len();
                population.push(utterances.by_position(i));
            }
        }
        let standardizer = fit_standardizer(&population, catalog)?;
        let n_cols = catalog.n_columns();
        let mut z = vec![0.0; population.len() * n_cols];
        z.par_chunks_mut(n_cols)
            .zip(population.par_iter())
            .for_each(|(out, u)| standardizer.standardize_into(&u.values, out));

        Ok(DesignContext {
            catalog: catalog.clone(),
            standardizer,
            z,
            pairs: trial_pos.into_iter().map(|(e, t)| (remap[e], remap[t])).collect(),
            response: table.trials().iter().map(|t| t.score).collect(),
            speaker_index: table.speaker_of_trial().to_vec(),
            speakers: table.speakers().to_vec(),
        })
    }

    pub fn catalog(&self) -> &FeatureCatalog {
        &self.catalog
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn n_rows(&self) -> usize {
        self.response.len()
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    /// Standardized values of one population member.
    pub fn standardized(&self, member: usize) -> &[f64] {
        let n_cols = self.catalog.n_columns();
        &self.z[member * n_cols..(member + 1) * n_cols]
    }

    /// Full distance vector of one trial.
    pub fn trial_distances(&self, trial: usize) -> Vec<f64> {
        let (e, t) = self.pairs[trial];
        distance_features(self.standardized(e), self.standardized(t))
    }

    /// Design over the selected predictors; an empty selection gives the
    /// intercept-only model.
    pub fn design(&self, selection: &[Predictor]) -> Result<Design> {
        let mut seen = HashSet::new();
        if let Some(dup) = selection.iter().find(|p| !seen.insert(**p)) {
            return Err(Error::Invalid(format!(
                "predictor {} selected twice",
                dup.label(&self.catalog)
            )));
        }
        let d = selection.len();
        let n = self.n_rows();
        if n < d + 2 {
            return Err(Error::Invalid(format!(
                "insufficient rows: {n} trials for {d} predictors"
            )));
        }

        let mut notes = Vec::new();
        let scheme = self.catalog.groups();
        // Column lists per selected predictor with dropped members removed.
        let mut members: Vec<Vec<usize>> = Vec::with_capacity(d);
        for p in selection {
            let cols: Vec<usize> = match *p {
                Predictor::Group(g) => scheme.groups[g].members.clone(),
                Predictor::Column(c) => vec![c],
            };
            let (kept, skipped): (Vec<usize>, Vec<usize>) =
                cols.into_iter().partition(|&c| !self.standardizer.is_dropped(c));
            for c in &skipped {
                let msg = format!(
                    "{}: skipped constant column {}",
                    p.label(&self.catalog),
                    self.catalog.column_label(*c)
                );
                warn!("{msg}");
                notes.push(msg);
            }
            if kept.is_empty() {
                return Err(Error::Invalid(format!(
                    "predictor {} has no non-constant columns",
                    p.label(&self.catalog)
                )));
            }
            members.push(kept);
        }

        let mut predictors = vec![0.0; n * d];
        predictors
            .par_chunks_mut(d.max(1))
            .zip(self.pairs.par_iter())
            .for_each(|(row, &(e, t))| {
                let (ze, zt) = (self.standardized(e), self.standardized(t));
                for (slot, cols) in row.iter_mut().zip(&members) {
                    *slot = cols.iter().map(|&c| (ze[c] - zt[c]).abs()).sum();
                }
            });

        let mut design = Design::from_parts(
            self.response.clone(),
            predictors,
            selection.iter().map(|p| p.label(&self.catalog)).collect(),
            self.speaker_index.clone(),
            self.speakers.clone(),
        )?;
        design.notes = notes;
        Ok(design)
    }
}

/// One-shot design construction; see [`DesignContext`] when several
/// predictor selections are cut from the same table.
pub fn build_design(
    table: &TrialTable,
    utterances: &UtteranceTable,
    catalog: &FeatureCatalog,
    selection: &[Predictor],
) -> Result<Design> {
    DesignContext::new(table, utterances, catalog)?.design(selection)
}
