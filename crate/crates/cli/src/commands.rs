use std::collections::HashSet;
use std::path::Path;

use log::info;
use scoremix::catalog::{default_catalog, load_custom_catalog, FeatureCatalog};
use scoremix::diagnostics::{self, diagnose, scatter_svg};
use scoremix::ingest::{
    load_speaker_list, read_trials, read_utterances, split_by_speaker_set, write_trials, write_utterances,
    IngestOptions, Rejection,
};
use scoremix::lme::{fit, likelihood_ratio_test, wald_test_coefficients, Criterion, LmeFit, LmeSpec};
use scoremix::predictors::{group_predictors, DesignContext, Predictor};
use scoremix::ranking::{build_final_model, rank, Candidate, FittedValues, RankMode, RankOptions};
use scoremix::report::{anova_report, fit_report, ranking_report, ranking_report_by_stat, Cell, Report, Table};
use scoremix::synth::{generate, Effect, SynthSpec};
use scoremix::{Error, Result};

use crate::args::{
    AnovaArgs, Cli, Command, CriterionArg, DiagArgs, FitArgs, FittedArg, Inputs, ModeArg, RankArgs, SynthArgs,
};
use crate::output::Outputs;

pub fn run(cli: &Cli) -> Result<()> {
    let config = serde_json::to_value(&cli.command).expect("config json");
    let mut out = Outputs::default();
    let dir = match &cli.command {
        Command::Fit(a) => cmd_fit(a, &mut out).map(|_| &a.out),
        Command::Rank(a) => cmd_rank(a, &mut out).map(|_| &a.out),
        Command::Anova(a) => cmd_anova(a, &mut out).map(|_| &a.out),
        Command::Diag(a) => cmd_diag(a, &mut out).map(|_| &a.out),
        Command::Synth(a) => cmd_synth(a, &mut out).map(|_| &a.out),
    }?;
    let written = out.commit(dir, cli.command.name(), &config)?;
    info!("wrote {} files to {}", written.len(), dir.display());
    Ok(())
}

fn criterion(c: CriterionArg) -> Criterion {
    match c {
        CriterionArg::Ml => Criterion::Ml,
        CriterionArg::Reml => Criterion::Reml,
    }
}

fn fitted(f: FittedArg) -> FittedValues {
    match f {
        FittedArg::Conditional => FittedValues::Conditional,
        FittedArg::Fixed => FittedValues::FixedOnly,
    }
}

/// Attaches the file path to content errors from in-memory parsing.
fn at(path: &Path) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Schema(message) | Error::Invalid(message) | Error::Catalog(message) => Error::Parse {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    }
}

fn load_catalog(path: Option<&Path>, out: &mut Outputs) -> Result<FeatureCatalog> {
    match path {
        None => Ok(default_catalog()),
        Some(p) => {
            let bytes = out.read_input(p)?;
            let text = String::from_utf8(bytes).map_err(|_| Error::Parse {
                path: p.to_path_buf(),
                message: "not valid UTF-8".into(),
            })?;
            load_custom_catalog(&text).map_err(at(p))
        }
    }
}

struct Loaded {
    catalog: FeatureCatalog,
    ctx: DesignContext,
    notes: Vec<String>,
    rejections: Vec<Rejection>,
}

fn delimiter(c: char) -> Result<u8> {
    u8::try_from(c)
        .ok()
        .filter(u8::is_ascii)
        .ok_or_else(|| Error::Invalid(format!("delimiter must be a single ASCII character, got {c:?}")))
}

fn load(inputs: &Inputs, out: &mut Outputs) -> Result<Loaded> {
    let catalog = load_catalog(inputs.catalog.as_deref(), out)?;
    let opts = IngestOptions {
        delimiter: delimiter(inputs.delimiter)?,
        f0_in_hz: inputs.f0_hz,
    };
    let bytes = out.read_input(&inputs.utterances)?;
    let utterances = read_utterances(&bytes[..], &catalog, &opts).map_err(at(&inputs.utterances))?;
    let bytes = out.read_input(&inputs.trials)?;
    let load = read_trials(&bytes[..], &utterances, &opts).map_err(at(&inputs.trials))?;
    let mut notes = vec![format!(
        "{} trial rows read, {} rejected, {} analysed",
        load.input_rows,
        load.rejections.len(),
        load.table.len()
    )];
    let table = match &inputs.speakers {
        Some(path) => {
            out.read_input(path)?;
            let speakers = load_speaker_list(path)?;
            let t = split_by_speaker_set(&load.table, &speakers).map_err(at(path))?;
            notes.push(format!(
                "restricted to {} of {} listed speakers ({} trials)",
                t.speakers().len(),
                speakers.len(),
                t.len()
            ));
            t
        }
        None => load.table,
    };
    let ctx = DesignContext::new(&table, &utterances, &catalog)?;
    for &c in ctx.standardizer().dropped() {
        notes.push(format!("constant column {} dropped", catalog.column_label(c)));
    }
    Ok(Loaded {
        catalog,
        ctx,
        notes,
        rejections: load.rejections,
    })
}

fn rejections_csv(rejections: &[Rejection]) -> Vec<u8> {
    let mut s = String::from("row,reason\n");
    for r in rejections {
        let reason = r.reason.to_string().replace('"', "\"\"");
        s.push_str(&format!("{},\"{}\"\n", r.row, reason));
    }
    s.into_bytes()
}

fn require_converged(f: &LmeFit, what: &str) -> Result<()> {
    if f.convergence.converged && f.convergence.ml_converged {
        Ok(())
    } else {
        Err(Error::Statistical(format!("{what}: optimizer did not converge")))
    }
}

fn add_report(out: &mut Outputs, stem: &str, report: &Report, csv_names: &[(&str, &str)]) -> Result<()> {
    out.add(&format!("{stem}.txt"), report.to_text());
    out.add(&format!("{stem}.json"), report.to_json_string());
    for (table, file) in csv_names {
        let t = report
            .table(table)
            .ok_or_else(|| Error::Invalid(format!("report has no table {table}")))?;
        out.add_with(file, |buf| t.write_csv(buf))?;
    }
    print!("{}", report.to_text());
    Ok(())
}

fn cmd_fit(a: &FitArgs, out: &mut Outputs) -> Result<()> {
    let loaded = load(&a.inputs, out)?;
    let preds = match &a.predictors {
        Some(list) => Predictor::parse_list(&loaded.catalog, list)?,
        None => group_predictors(&loaded.catalog),
    };
    if preds.is_empty() {
        return Err(Error::Invalid("no predictors selected".into()));
    }
    let opts = RankOptions {
        criterion: criterion(a.criterion),
        fitted: fitted(a.fitted),
    };
    let model = build_final_model(&loaded.ctx, Some(&preds), &opts)?;
    require_converged(&model.fit, "final model")?;
    for e in &model.ranking.entries {
        if !e.converged {
            return Err(Error::Statistical(format!("single-predictor model {}: optimizer did not converge", e.label)));
        }
    }
    let mut report = fit_report(&model);
    report.notes.extend(loaded.notes);
    out.add_json("fit.json", &model.fit)?;
    add_report(
        out,
        "report",
        &report,
        &[("Fixed effects", "fixed_effects.csv"), ("Random effects", "random_effects.csv")],
    )?;
    out.add("rejections.csv", rejections_csv(&loaded.rejections));
    Ok(())
}

enum Scope {
    Groups,
    Features(String),
}

fn parse_scope(s: &str, catalog: &FeatureCatalog) -> Result<Scope> {
    if s == "groups" {
        return Ok(Scope::Groups);
    }
    match s.strip_prefix("features:") {
        Some(g) if catalog.groups().get(g).is_some() => Ok(Scope::Features(g.to_string())),
        Some(g) => Err(Error::Invalid(format!("unknown group {g:?} in scope"))),
        None => Err(Error::Invalid(format!(
            "scope must be `groups` or `features:GROUP`, got {s:?}"
        ))),
    }
}

fn cmd_rank(a: &RankArgs, out: &mut Outputs) -> Result<()> {
    let loaded = load(&a.inputs, out)?;
    let scope = parse_scope(&a.scope, &loaded.catalog)?;
    let preds: Vec<Predictor> = match &scope {
        Scope::Groups => group_predictors(&loaded.catalog),
        Scope::Features(g) => {
            let group = loaded.catalog.groups().get(g).expect("checked group");
            let mut cols = group.members.clone();
            cols.sort_unstable();
            cols.into_iter().map(Predictor::Column).collect()
        }
    };
    let mode = match a.mode {
        ModeArg::Single => RankMode::SingleCandidate,
        ModeArg::Forward => RankMode::ForwardSelection,
    };
    let opts = RankOptions {
        criterion: criterion(a.criterion),
        fitted: fitted(a.fitted),
    };
    let result = rank(&loaded.ctx, &Candidate::from_predictors(&loaded.ctx, &preds), mode, &opts)?;
    if result.entries.is_empty() {
        return Err(Error::Statistical("every candidate fit failed".into()));
    }
    if let Some(e) = result.entries.iter().find(|e| !e.converged) {
        return Err(Error::Statistical(format!("model {}: optimizer did not converge", e.label)));
    }
    let title = format!("Ranking of {} ({})", a.scope, mode.label());
    let mut report = match scope {
        Scope::Groups => ranking_report(&result, &title),
        Scope::Features(_) => ranking_report_by_stat(&result, &loaded.catalog, &title),
    };
    report.notes.extend(loaded.notes);
    let csv: Vec<(String, String)> = report
        .tables
        .iter()
        .map(|t| {
            let file = if t.name == "Ranking" {
                "ranking.csv".to_string()
            } else {
                format!("ranking_{}.csv", t.name)
            };
            (t.name.clone(), file)
        })
        .collect();
    let csv: Vec<(&str, &str)> = csv.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    add_report(out, "ranking", &report, &csv)?;
    out.add_json("ranking_detail.json", &result)?;
    Ok(())
}

fn cmd_anova(a: &AnovaArgs, out: &mut Outputs) -> Result<()> {
    let loaded = load(&a.inputs, out)?;
    let pa = Predictor::parse_list(&loaded.catalog, &a.model_a)?;
    let pb = Predictor::parse_list(&loaded.catalog, &a.model_b)?;
    let (sa, sb): (HashSet<_>, HashSet<_>) = (pa.iter().collect(), pb.iter().collect());
    let full_is_a = if sb.is_subset(&sa) {
        true
    } else if sa.is_subset(&sb) {
        false
    } else {
        return Err(Error::Invalid("models are not nested".into()));
    };
    let fa = fit(&LmeSpec::new(&loaded.ctx.design(&pa)?, Criterion::Ml))?;
    let fb = fit(&LmeSpec::new(&loaded.ctx.design(&pb)?, Criterion::Ml))?;
    require_converged(&fa, "model A")?;
    require_converged(&fb, "model B")?;
    let (full, reduced) = if full_is_a { (&fa, &fb) } else { (&fb, &fa) };
    let lrt = likelihood_ratio_test(full, reduced)?;
    let mut report = anova_report(&fa, &fb, &lrt, full_is_a);
    if lrt.df > 0 {
        let extra: Vec<usize> = (1..full.n_fixed())
            .filter(|&j| reduced.coefficient(&full.names[j]).is_none())
            .collect();
        let w = wald_test_coefficients(full, &extra)?;
        let mut t = Table::new("Wald test", &["terms", "f", "df_num", "df_den", "p"]);
        t.rows.push(vec![
            Cell::Text(extra.iter().map(|&j| full.names[j].as_str()).collect::<Vec<_>>().join("+")),
            Cell::Num(w.f, 3),
            Cell::Int(w.df_num as i64),
            Cell::Int(w.df_den as i64),
            Cell::Num(w.p_value, 4),
        ]);
        report.tables.push(t);
    }
    report.notes.extend(loaded.notes);
    let mut csv = vec![("Models", "models.csv"), ("Likelihood ratio test", "lrt.csv")];
    if lrt.df > 0 {
        csv.push(("Wald test", "wald.csv"));
    }
    add_report(out, "anova", &report, &csv)?;
    Ok(())
}

fn cmd_diag(a: &DiagArgs, out: &mut Outputs) -> Result<()> {
    let bytes = out.read_input(&a.fit).map_err(|e| match e {
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => Error::Invalid(format!(
            "fit file {} not found; run `scoremix fit` first",
            a.fit.display()
        )),
        other => other,
    })?;
    let fit: LmeFit = serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
        path: a.fit.clone(),
        message: format!("not a fit file: {e}"),
    })?;
    let bundle = diagnose(&fit, fitted(a.fitted))?;
    out.add_with("qq.csv", |b| diagnostics::write_qq(b, &bundle.qq))?;
    out.add_with("resid_fitted.csv", |b| {
        diagnostics::write_residual_vs_fitted(b, &bundle.residual_vs_fitted)
    })?;
    out.add_with("scatter.csv", |b| diagnostics::write_scatter(b, &bundle.scatter))?;
    out.add_with("hist.csv", |b| diagnostics::write_histogram(b, &bundle.histogram))?;
    out.add_json(
        "summary.json",
        &serde_json::json!({
            "r": bundle.scatter.r,
            "residuals": bundle.summary,
            "histogram_rule": bundle.histogram.rule,
        }),
    )?;
    if a.svg {
        out.add("scatter.svg", scatter_svg(&bundle.scatter));
    }
    println!(
        "r = {:.3}, residual sd = {:.3}, speaker sd = {:.3}, skewness = {:.3}, excess kurtosis = {:.3}",
        bundle.scatter.r,
        bundle.summary.residual_sd,
        bundle.summary.speaker_sd,
        bundle.summary.skewness,
        bundle.summary.excess_kurtosis
    );
    Ok(())
}

fn parse_effect(s: &str) -> Result<Effect> {
    let (name, coef) = s
        .split_once('=')
        .ok_or_else(|| Error::Invalid(format!("effect must be PREDICTOR=COEF, got {s:?}")))?;
    let coefficient = coef
        .trim()
        .parse()
        .map_err(|_| Error::Invalid(format!("bad coefficient in {s:?}")))?;
    Ok(Effect {
        predictor: name.trim().to_string(),
        coefficient,
    })
}

fn cmd_synth(a: &SynthArgs, out: &mut Outputs) -> Result<()> {
    let catalog = load_catalog(a.catalog.as_deref(), out)?;
    let defaults = SynthSpec::default();
    let effects = if a.null {
        Vec::new()
    } else if a.effects.is_empty() {
        defaults.effects
    } else {
        a.effects.iter().map(|s| parse_effect(s)).collect::<Result<_>>()?
    };
    let spec = SynthSpec {
        n_speakers: a.n_speakers,
        trials_per_speaker: a.trials_per_speaker,
        utterances_per_speaker: a.utterances_per_speaker,
        intercept: a.intercept,
        effects,
        sigma_b: a.sigma_b,
        sigma: a.sigma,
        utterance_sd: a.utterance_sd,
        group_correlation: a.group_correlation,
        seed: a.seed,
    };
    let data = generate(&spec, &catalog)?;
    out.add_with("utterances.csv", |b| write_utterances(b, &data.utterances, &catalog, b','))?;
    out.add_with("trials.csv", |b| write_trials(b, &data.trials, b','))?;
    out.add_json("truth.json", &data.truth)?;
    println!(
        "{} utterances, {} trials, {} speakers",
        data.utterances.len(),
        data.trials.len(),
        data.trials.speakers().len()
    );
    Ok(())
}
