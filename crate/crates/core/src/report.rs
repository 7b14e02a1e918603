//! Report tables. One canonical [`Report`] renders to aligned text (rounded
//! for reading), CSV and JSON (both at full precision).

use std::io::Write;

use serde_json::{json, Map, Value};

use crate::catalog::{FeatureCatalog, StatKind};
use crate::error::{Error, Result};
use crate::lme::{LmeFit, LrtResult};
use crate::ranking::{FinalModel, RankEntry, RankingResult};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Empty,
    Text(String),
    Int(i64),
    /// A number and the decimals shown in text output.
    Num(f64, usize),
}

impl Cell {
    fn text(&self) -> String {
        match self {
            Cell::Empty => String::new(),
            Cell::Text(s) => s.clone(),
            Cell::Int(i) => i.to_string(),
            Cell::Num(v, d) => format!("{v:.d$}"),
        }
    }

    fn machine(&self) -> String {
        match self {
            Cell::Empty => String::new(),
            Cell::Text(s) => s.clone(),
            Cell::Int(i) => i.to_string(),
            Cell::Num(v, _) => v.to_string(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Empty => Value::Null,
            Cell::Text(s) => json!(s),
            Cell::Int(i) => json!(i),
            Cell::Num(v, _) => json!(v),
        }
    }

    fn numeric(&self) -> bool {
        matches!(self, Cell::Int(_) | Cell::Num(..))
    }
}

fn opt(v: Option<f64>, d: usize) -> Cell {
    v.map_or(Cell::Empty, |v| Cell::Num(v, d))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Invalid(format!("csv output: {e}"));
        out.write_record(&self.columns).map_err(err)?;
        for row in &self.rows {
            out.write_record(row.iter().map(Cell::machine)).map_err(err)?;
        }
        out.flush().map_err(|e| Error::Invalid(format!("csv output: {e}")))
    }

    fn render(&self, out: &mut String) {
        let cells: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(Cell::text).collect()).collect();
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|j| {
                cells
                    .iter()
                    .map(|r| r[j].chars().count())
                    .chain([self.columns[j].chars().count()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        // Numeric columns are right-aligned, header included.
        let numeric: Vec<bool> = (0..self.columns.len())
            .map(|j| self.rows.iter().any(|r| r[j].numeric()))
            .collect();
        let line = |vals: &[String]| {
            let parts: Vec<String> = vals
                .iter()
                .enumerate()
                .map(|(j, v)| {
                    if numeric[j] {
                        format!("{v:>w$}", w = widths[j])
                    } else {
                        format!("{v:<w$}", w = widths[j])
                    }
                })
                .collect();
            parts.join("  ").trim_end().to_string()
        };
        out.push_str(&format!("{}:\n", self.name));
        out.push_str(&line(&self.columns));
        out.push('\n');
        for r in &cells {
            out.push_str(&line(r));
            out.push('\n');
        }
    }

    fn json(&self) -> Value {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| {
                let mut m = Map::new();
                for (c, v) in self.columns.iter().zip(r) {
                    m.insert(c.clone(), v.json());
                }
                Value::Object(m)
            })
            .collect();
        json!({ "name": self.name, "columns": self.columns, "rows": rows })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub title: String,
    pub notes: Vec<String>,
    pub tables: Vec<Table>,
}

impl Report {
    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n", self.title);
        for n in &self.notes {
            s.push_str(&format!("# {n}\n"));
        }
        for t in &self.tables {
            s.push('\n');
            t.render(&mut s);
        }
        s
    }

    pub fn to_json(&self) -> Value {
        json!({
            "title": self.title,
            "notes": self.notes,
            "tables": self.tables.iter().map(Table::json).collect::<Vec<_>>(),
        })
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_json()).expect("report json");
        s.push('\n');
        s
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }
}

fn random_effects(fit: &LmeFit) -> Table {
    let mut t = Table::new("Random effects", &["group", "variance", "sd"]);
    for (g, v) in [("Speaker", fit.sigma_b2), ("Residual", fit.sigma2)] {
        t.rows.push(vec![Cell::Text(g.into()), Cell::Num(v, 2), Cell::Num(v.sqrt(), 2)]);
    }
    t
}

fn fit_notes(fit: &LmeFit) -> Vec<String> {
    let mut notes = vec![
        format!(
            "criterion {}, {} trials, {} speakers",
            fit.criterion.label(),
            fit.n_obs,
            fit.speakers.len()
        ),
        format!(
            "logLik {:.2}, ML logLik {:.2}, AIC {:.2}",
            fit.loglik, fit.loglik_ml, fit.aic
        ),
        format!("t values on {} residual df (n - p)", fit.df_resid),
    ];
    if !fit.convergence.converged {
        notes.push("optimizer did not converge".into());
    }
    if fit.convergence.at_boundary {
        notes.push("speaker variance estimated at zero".into());
    }
    notes
}

/// Final-model table: fixed effects in single-candidate rank order with
/// their r, then the two variance components.
pub fn fit_report(model: &FinalModel) -> Report {
    let mut fixed = Table::new("Fixed effects", &["term", "estimate", "se", "t", "r"]);
    for row in &model.fixed {
        fixed.rows.push(vec![
            Cell::Text(row.label.clone()),
            Cell::Num(row.estimate, 2),
            Cell::Num(row.se, 3),
            Cell::Num(row.t, 2),
            opt(row.r, 2),
        ]);
    }
    let mut notes = fit_notes(&model.fit);
    notes.push(format!(
        "r: correlation of {} fitted values and scores, one predictor per model",
        fitted_label(&model.ranking)
    ));
    Report {
        title: "Mixed effects model of target-trial scores, speaker random intercept".into(),
        notes,
        tables: vec![fixed, random_effects(&model.fit)],
    }
}

fn fitted_label(r: &RankingResult) -> &'static str {
    match r.fitted {
        crate::ranking::FittedValues::Conditional => "conditional",
        crate::ranking::FittedValues::FixedOnly => "fixed-only",
    }
}

const RANK_COLUMNS: [&str; 6] = ["rank", "label", "r", "estimate", "se", "t"];

fn rank_rows<'a>(t: &mut Table, entries: impl Iterator<Item = &'a RankEntry>) {
    for (i, e) in entries.enumerate() {
        t.rows.push(vec![
            Cell::Int(i as i64 + 1),
            Cell::Text(e.label.clone()),
            Cell::Num(e.r, 3),
            opt(e.estimate, 2),
            opt(e.se, 3),
            opt(e.t, 2),
        ]);
    }
}

fn ranking_notes(r: &RankingResult) -> Vec<String> {
    let mut notes = vec![format!(
        "mode {}, criterion {}, {} fitted values",
        r.mode.label(),
        r.criterion.label(),
        fitted_label(r)
    )];
    for f in &r.failures {
        notes.push(format!("failed: {}: {}", f.label, f.message));
    }
    notes
}

/// One ranking table in rank order.
pub fn ranking_report(r: &RankingResult, title: &str) -> Report {
    let mut t = Table::new("Ranking", &RANK_COLUMNS);
    rank_rows(&mut t, r.entries.iter());
    Report {
        title: title.to_string(),
        notes: ranking_notes(r),
        tables: vec![t],
    }
}

/// Per-column ranking split into a mean block and a std block, each in
/// rank order and numbered from 1. Entries must be catalog column labels.
pub fn ranking_report_by_stat(r: &RankingResult, catalog: &FeatureCatalog, title: &str) -> Report {
    let tables = StatKind::ALL
        .iter()
        .map(|&stat| {
            let mut t = Table::new(stat.suffix(), &RANK_COLUMNS);
            rank_rows(
                &mut t,
                r.entries
                    .iter()
                    .filter(|e| catalog.parse_column(&e.label).map(|c| catalog.column_stat(c)) == Some(stat)),
            );
            // Rows are labelled by feature name within a block.
            for row in &mut t.rows {
                if let Cell::Text(label) = &row[1] {
                    let c = catalog.parse_column(label).expect("column label");
                    row[1] = Cell::Text(catalog.column_feature(c).name.clone());
                }
            }
            t
        })
        .collect();
    Report {
        title: title.to_string(),
        notes: ranking_notes(r),
        tables,
    }
}

pub fn anova_report(a: &LmeFit, b: &LmeFit, lrt: &LrtResult, full_is_a: bool) -> Report {
    let mut models = Table::new("Models", &["model", "terms", "df", "loglik_ml", "aic"]);
    for (name, f) in [("A", a), ("B", b)] {
        models.rows.push(vec![
            Cell::Text(name.into()),
            Cell::Text(f.names[1..].join("+")),
            Cell::Int(f.n_fixed() as i64 + 2),
            Cell::Num(f.loglik_ml, 2),
            Cell::Num(f.aic, 2),
        ]);
    }
    let preferred = if a.aic < b.aic {
        "A"
    } else if b.aic < a.aic {
        "B"
    } else {
        "tie"
    };
    let mut test = Table::new("Likelihood ratio test", &["chi2", "df", "p", "aic_preferred"]);
    test.rows.push(vec![
        Cell::Num(lrt.chi2, 3),
        Cell::Int(lrt.df as i64),
        Cell::Num(lrt.p_value, 4),
        Cell::Text(preferred.into()),
    ]);
    let mut notes = vec![format!("full model: {}", if full_is_a { "A" } else { "B" })];
    if a.convergence.at_boundary || b.convergence.at_boundary {
        notes.push("speaker variance at zero in a compared model; p not corrected for the boundary".into());
    }
    Report {
        title: "Nested model comparison (ML)".into(),
        notes,
        tables: vec![models, test],
    }
}
