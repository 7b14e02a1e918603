//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails the
//! run if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use scoremix::catalog::{default_catalog, FeatureCatalog};
use scoremix::diagnostics::{self, diagnose};
use scoremix::ingest::{read_trials, read_utterances, write_trials, write_utterances, IngestOptions};
use scoremix::lme::{
    aic, fit, fit_at_theta, likelihood_ratio_test, profiled_deviance, wald_test_coefficients, Criterion, LmeFit,
    LmeSpec,
};
use scoremix::predictors::{group_predictors, Design, DesignContext, Predictor};
use scoremix::ranking::{build_final_model, pearson, rank_single, Candidate, FittedValues, RankOptions};
use scoremix::report::{fit_report, ranking_report_by_stat};
use scoremix::synth::{generate, null_generate, Effect, SynthData, SynthSpec};

use common::{ols, random_design, DenseOracle, TestRng};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn effects(list: &[(&str, f64)]) -> Vec<Effect> {
    list.iter()
        .map(|(p, c)| Effect {
            predictor: p.to_string(),
            coefficient: *c,
        })
        .collect()
}

/// Coefficients of the male-speaker model in the reference study, used only
/// as generator inputs.
const TABLE2_EFFECTS: [(&str, f64); 8] = [
    ("F0", -1.02),
    ("VQ", -0.36),
    ("Formant1", -0.20),
    ("Formant2", -0.15),
    ("Formant3", -0.16),
    ("Formant4", -0.31),
    ("Temporal", -0.01),
    ("SpectralFlux", -0.29),
];

fn context(data: &SynthData, cat: &FeatureCatalog) -> DesignContext {
    DesignContext::new(&data.trials, &data.utterances, cat).unwrap()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = TestRng::new(1);
    let mut worst_dev = 0.0f64;
    let mut worst_theta = 0.0f64;
    let mut worst_beta = 0.0f64;
    let designs = 30;
    for k in 0..designs {
        let speakers = 2 + k % 3;
        let d = 1 + k % 3;
        let rows = (d + 4).max(8) + rng.below(21 - (d + 4).max(8));
        let sigma_b = [0.0, 0.5, 2.0][k % 3];
        let design = random_design(&mut rng, speakers, rows, d, sigma_b);
        let oracle = DenseOracle::new(&design);
        for crit in [Criterion::Ml, Criterion::Reml] {
            for i in 0..=100 {
                let theta = i as f64 * 0.1;
                let ours = profiled_deviance(theta, &design, crit).map_err(|e| e.to_string())?;
                let dense = oracle.eval(theta, crit);
                worst_dev = worst_dev.max((ours.deviance - dense.deviance).abs());
            }
            let f = fit(&LmeSpec::new(&design, crit)).map_err(|e| e.to_string())?;
            let (theta, dense) = oracle.argmin(crit);
            worst_theta = worst_theta.max((f.theta - theta).abs() / theta.max(1.0));
            for j in 0..f.beta.len() {
                worst_beta = worst_beta.max((f.beta[j] - dense.beta[j]).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    check(worst_dev < 1e-6, format!("deviance gap {worst_dev:.2e}"))?;
    check(worst_theta < 1e-4, format!("theta gap {worst_theta:.2e}"))?;
    check(worst_beta < 1e-6, format!("beta gap {worst_beta:.2e}"))?;
    check(elapsed < Duration::from_secs(10), format!("took {elapsed:?}"))?;
    Ok(format!(
        "{designs} designs; max |dev| {worst_dev:.1e}, theta {worst_theta:.1e}, beta {worst_beta:.1e}; {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let cat = default_catalog();
    let truth = [28.0, -1.0, -0.35];
    let fits: Vec<LmeFit> = (1..=20u64)
        .into_par_iter()
        .map(|seed| {
            let data = generate(&SynthSpec { seed, ..SynthSpec::default() }, &cat).unwrap();
            let ctx = context(&data, &cat);
            let design = ctx
                .design(&[Predictor::parse(&cat, "F0").unwrap(), Predictor::parse(&cat, "VQ").unwrap()])
                .unwrap();
            fit(&LmeSpec::new(&design, Criterion::Reml)).unwrap()
        })
        .collect();
    let covered = fits
        .iter()
        .filter(|f| (0..3).all(|j| (f.beta[j] - truth[j]).abs() <= 3.0 * f.se[j]))
        .count();
    let mean_sb = fits.iter().map(|f| f.sigma_b2.sqrt()).sum::<f64>() / 20.0;
    let mean_s = fits.iter().map(|f| f.sigma2.sqrt()).sum::<f64>() / 20.0;
    let elapsed = start.elapsed();
    check(covered >= 19, format!("beta within 3 SE in {covered}/20 seeds"))?;
    check((mean_sb - 4.5).abs() <= 0.45, format!("mean sigma_b {mean_sb:.3}"))?;
    check((mean_s - 9.0).abs() <= 0.45, format!("mean sigma {mean_s:.3}"))?;
    check(elapsed < Duration::from_secs(60), format!("took {elapsed:?}"))?;
    Ok(format!(
        "coverage {covered}/20; mean sigma_b {mean_sb:.3}, mean sigma {mean_s:.3}; {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn criterion_3() -> Outcome {
    let mut rng = TestRng::new(3);
    let mut worst = 0.0f64;
    let mut compare = |a: &[f64], b: &[f64]| {
        for (x, y) in a.iter().zip(b) {
            worst = worst.max((x - y).abs() / y.abs().max(1.0));
        }
    };
    for k in 0..20 {
        let d = 1 + k % 4;
        // theta = 0 on a grouped design
        let design = random_design(&mut rng, 5, 40, d, 2.0);
        let (beta, fitted) = ols(&design);
        for crit in [Criterion::Ml, Criterion::Reml] {
            let f = fit_at_theta(&design, crit, 0.0).map_err(|e| e.to_string())?;
            compare(&f.beta, &beta);
            compare(&f.fitted, &fitted);
        }
        // one trial per speaker: the fixed part does not depend on theta
        let design = random_design(&mut rng, 30, 30, d, 2.0);
        let (beta, fitted) = ols(&design);
        let f = fit(&LmeSpec::new(&design, Criterion::Ml)).map_err(|e| e.to_string())?;
        compare(&f.beta, &beta);
        compare(&f.fitted_fixed, &fitted);
    }
    check(worst < 1e-8, format!("max relative gap {worst:.2e}"))?;
    Ok(format!("40 designs; max gap {worst:.1e}"))
}

fn criterion_4() -> Outcome {
    let cat = default_catalog();
    let seeds = 400u64;
    let f0 = Predictor::parse(&cat, "F0").unwrap();
    let rejections: usize = (0..seeds)
        .into_par_iter()
        .map(|seed| {
            let spec = SynthSpec {
                n_speakers: 40,
                trials_per_speaker: 10,
                utterances_per_speaker: 6,
                seed: 10_000 + seed,
                ..SynthSpec::default()
            };
            let data = null_generate(&spec, &cat).unwrap();
            let ctx = context(&data, &cat);
            let full = fit(&LmeSpec::new(&ctx.design(&[f0]).unwrap(), Criterion::Ml)).unwrap();
            let reduced = fit(&LmeSpec::new(&ctx.design(&[]).unwrap(), Criterion::Ml)).unwrap();
            (likelihood_ratio_test(&full, &reduced).unwrap().p_value < 0.05) as usize
        })
        .sum();
    let rate = rejections as f64 / seeds as f64;
    check((0.03..=0.07).contains(&rate), format!("rejection rate {rate:.4}"))?;
    Ok(format!("{rejections}/{seeds} rejections at 0.05 (rate {rate:.4})"))
}

fn criterion_5() -> Outcome {
    let cat = default_catalog();
    let groups = group_predictors(&cat);
    let opts = RankOptions::default();
    let results: Vec<(bool, f64)> = (1..=20u64)
        .into_par_iter()
        .map(|seed| {
            // Ranking: only F0 drives the score.
            let spec = SynthSpec {
                seed,
                effects: effects(&[("F0", -1.0)]),
                ..SynthSpec::default()
            };
            let data = generate(&spec, &cat).unwrap();
            let ctx = context(&data, &cat);
            let ranking = rank_single(&ctx, &Candidate::from_predictors(&ctx, &groups), &opts).unwrap();
            let first = ranking.entries[0].label == "F0";

            // Scatter: all-group model under reference-scale effects and noise,
            // with correlated features inside each group.
            let spec = SynthSpec {
                seed,
                effects: effects(&TABLE2_EFFECTS),
                group_correlation: 0.8,
                ..SynthSpec::default()
            };
            let data = generate(&spec, &cat).unwrap();
            let ctx = context(&data, &cat);
            let f = fit(&LmeSpec::new(&ctx.design(&groups).unwrap(), Criterion::Reml)).unwrap();
            let r = diagnostics::scatter_and_r(&f, FittedValues::Conditional).unwrap().r;
            (first, r)
        })
        .collect();
    let firsts = results.iter().filter(|r| r.0).count();
    let in_band = results.iter().filter(|r| (0.5..=0.7).contains(&r.1)).count();
    let (rmin, rmax) = results
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.1), b.max(r.1)));
    check(firsts >= 19, format!("F0 ranked first in {firsts}/20 seeds"))?;
    check(in_band >= 19, format!("scatter r in [0.5, 0.7] in {in_band}/20 seeds (range {rmin:.3}..{rmax:.3})"))?;
    Ok(format!(
        "F0 first in {firsts}/20; scatter r in band {in_band}/20 (range {rmin:.3}..{rmax:.3})"
    ))
}

fn criterion_6() -> Outcome {
    let cat = default_catalog();
    let data = generate(&SynthSpec { seed: 6, ..SynthSpec::default() }, &cat).unwrap();
    let ctx = context(&data, &cat);
    let groups = group_predictors(&cat);
    let full_design = ctx.design(&groups).unwrap();
    let reduced_design = ctx.design(&groups[..2]).unwrap();
    let full = fit(&LmeSpec::new(&full_design, Criterion::Ml)).map_err(|e| e.to_string())?;
    let reduced = fit(&LmeSpec::new(&reduced_design, Criterion::Ml)).map_err(|e| e.to_string())?;

    let mut ft = 0.0f64;
    for j in 0..full.n_fixed() {
        let w = wald_test_coefficients(&full, &[j]).map_err(|e| e.to_string())?;
        let t2 = full.t_values[j].powi(2);
        ft = ft.max((w.f - t2).abs() / t2.max(1.0));
    }
    let lrt = likelihood_ratio_test(&full, &reduced).map_err(|e| e.to_string())?;
    let aic_gap = ((aic(&full) - aic(&reduced)) - (2.0 * lrt.df as f64 - lrt.chi2)).abs();
    let resid = full
        .fitted
        .iter()
        .zip(&full.residuals)
        .zip(&full.response)
        .map(|((f, e), y)| (f + e - y).abs())
        .fold(0.0, f64::max);

    let k = 3.7;
    let scaled = full_design
        .with_response(full_design.response().iter().map(|y| k * y).collect())
        .unwrap();
    let mut scale_gap = 0.0f64;
    for crit in [Criterion::Ml, Criterion::Reml] {
        let a = fit(&LmeSpec::new(&full_design, crit)).unwrap();
        let b = fit(&LmeSpec::new(&scaled, crit)).unwrap();
        let rel = |x: f64, y: f64| (x - y).abs() / y.abs().max(1.0);
        for j in 0..a.n_fixed() {
            scale_gap = scale_gap.max(rel(k * a.beta[j], b.beta[j]));
            scale_gap = scale_gap.max(rel(a.t_values[j], b.t_values[j]));
        }
        scale_gap = scale_gap.max(rel(k * a.sigma2.sqrt(), b.sigma2.sqrt()));
        scale_gap = scale_gap.max(rel(k * a.sigma_b2.sqrt(), b.sigma_b2.sqrt()));
    }
    check(ft < 1e-10, format!("F vs t^2 gap {ft:.2e}"))?;
    check(aic_gap < 1e-8, format!("AIC identity gap {aic_gap:.2e}"))?;
    check(resid < 1e-10, format!("fitted + residual gap {resid:.2e}"))?;
    check(scale_gap < 1e-8, format!("scale equivariance gap {scale_gap:.2e}"))?;
    Ok(format!(
        "F-t^2 {ft:.1e}, AIC {aic_gap:.1e}, fitted+resid {resid:.1e}, scale {scale_gap:.1e}"
    ))
}

/// Synthesis, file round trip, final model, ranking and diagnostics; returns
/// every output as bytes.
fn pipeline(cat: &FeatureCatalog, spec: &SynthSpec) -> Vec<(String, Vec<u8>)> {
    let data = generate(spec, cat).unwrap();
    let mut utt = Vec::new();
    let mut tri = Vec::new();
    write_utterances(&mut utt, &data.utterances, cat, b',').unwrap();
    write_trials(&mut tri, &data.trials, b',').unwrap();
    let opts = IngestOptions::default();
    let utterances = read_utterances(&utt[..], cat, &opts).unwrap();
    let trials = read_trials(&tri[..], &utterances, &opts).unwrap();
    assert!(trials.rejections.is_empty());
    let ctx = DesignContext::new(&trials.table, &utterances, cat).unwrap();
    let model = build_final_model(&ctx, None, &RankOptions::default()).unwrap();
    let report = fit_report(&model);
    let diag = diagnose(&model.fit, FittedValues::Conditional).unwrap();

    let mut out = vec![
        ("utterances.csv".to_string(), utt),
        ("trials.csv".to_string(), tri),
        ("fit.json".to_string(), serde_json::to_vec(&model.fit).unwrap()),
        ("report.txt".to_string(), report.to_text().into_bytes()),
        ("report.json".to_string(), report.to_json_string().into_bytes()),
    ];
    let mut buf = Vec::new();
    diagnostics::write_qq(&mut buf, &diag.qq).unwrap();
    out.push(("qq.csv".into(), buf));
    let mut buf = Vec::new();
    diagnostics::write_histogram(&mut buf, &diag.histogram).unwrap();
    out.push(("hist.csv".into(), buf));
    let mut buf = Vec::new();
    diagnostics::write_scatter(&mut buf, &diag.scatter).unwrap();
    out.push(("scatter.csv".into(), buf));
    out
}

fn criterion_7() -> Outcome {
    let cat = default_catalog();
    let spec = SynthSpec {
        n_speakers: 6000,
        trials_per_speaker: 50,
        effects: effects(&TABLE2_EFFECTS),
        seed: 7,
        ..SynthSpec::default()
    };
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    let start = Instant::now();
    let a = pool(4).install(|| pipeline(&cat, &spec));
    let elapsed = start.elapsed();
    let b = pool(4).install(|| pipeline(&cat, &spec));
    let c = pool(1).install(|| pipeline(&cat, &spec));
    let trials = spec.n_speakers * spec.trials_per_speaker;
    check(a == b, "outputs differ between identical runs")?;
    let diff: Vec<&str> = a
        .iter()
        .zip(&c)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    check(diff.is_empty(), format!("1 vs 4 threads differ in {diff:?}"))?;
    check(elapsed < Duration::from_secs(60), format!("took {elapsed:?}"))?;
    Ok(format!(
        "{trials} trials x 8 groups in {:.2}s (4 threads); {} outputs byte-identical across runs and 1/4 threads",
        elapsed.as_secs_f64(),
        a.len()
    ))
}

fn criterion_8() -> Outcome {
    let cat = default_catalog();
    let spec = SynthSpec {
        n_speakers: 60,
        trials_per_speaker: 20,
        effects: effects(&TABLE2_EFFECTS),
        seed: 8,
        ..SynthSpec::default()
    };
    let data = generate(&spec, &cat).unwrap();
    let ctx = context(&data, &cat);
    let opts = RankOptions::default();
    let model = build_final_model(&ctx, None, &opts).map_err(|e| e.to_string())?;
    let report = fit_report(&model);
    let fixed = report.table("Fixed effects").ok_or("no fixed-effects table")?;
    let random = report.table("Random effects").ok_or("no random-effects table")?;
    check(fixed.columns == ["term", "estimate", "se", "t", "r"], format!("columns {:?}", fixed.columns))?;
    check(fixed.rows.len() == 9, format!("{} fixed rows", fixed.rows.len()))?;
    check(random.rows.len() == 2, format!("{} random rows", random.rows.len()))?;
    check(model.fixed[0].label == "(Intercept)" && model.fixed[0].r.is_none(), "intercept row")?;
    let rs: Vec<f64> = model.fixed[1..].iter().map(|r| r.r.unwrap()).collect();
    check(rs.windows(2).all(|w| w[0] >= w[1]), "rows not ranked by r")?;
    let mut labels: Vec<&str> = model.fixed[1..].iter().map(|r| r.label.as_str()).collect();
    labels.sort();
    let mut expected: Vec<&str> = cat.groups().groups.iter().map(|g| g.name.as_str()).collect();
    expected.sort();
    check(labels == expected, "fixed rows are not the 8 groups")?;
    for row in &model.fixed {
        let j = model.fit.coefficient(&row.label).unwrap();
        check(row.estimate == model.fit.beta[j] && row.se == model.fit.se[j], "row values")?;
    }
    for e in &model.ranking.entries {
        let again = pearson(&ctx_fitted(&ctx, &e.label), ctx.response()).unwrap();
        check((again - e.r).abs() < 1e-12, "r not reproducible")?;
    }

    let vq = &cat.groups().get("VQ").unwrap().members;
    let cands = Candidate::from_predictors(&ctx, &vq.iter().map(|&c| Predictor::Column(c)).collect::<Vec<_>>());
    let ranking = rank_single(&ctx, &cands, &opts).map_err(|e| e.to_string())?;
    let vq_report = ranking_report_by_stat(&ranking, &cat, "VQ");
    let names: Vec<&str> = vq_report.tables.iter().map(|t| t.name.as_str()).collect();
    check(names == ["mean", "std"], format!("blocks {names:?}"))?;
    for t in &vq_report.tables {
        check(t.rows.len() == 6, format!("{} block has {} rows", t.name, t.rows.len()))?;
        check(t.columns == ["rank", "label", "r", "estimate", "se", "t"], "rank columns")?;
    }
    Ok("fit report 9 fixed + 2 random rows ranked by r; VQ ranking 6 mean + 6 std rows".into())
}

fn ctx_fitted(ctx: &DesignContext, label: &str) -> Vec<f64> {
    let design: Design = ctx.design(&[Predictor::parse(ctx.catalog(), label).unwrap()]).unwrap();
    fit(&LmeSpec::new(&design, Criterion::Reml)).unwrap().fitted
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("dense-oracle equivalence", criterion_1),
        ("parameter recovery", criterion_2),
        ("OLS reduction", criterion_3),
        ("LRT calibration", criterion_4),
        ("ranking fidelity", criterion_5),
        ("algebraic identities", criterion_6),
        ("determinism and scale", criterion_7),
        ("format fidelity", criterion_8),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = format!("{}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| *f == id) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        match outcome {
            Ok(msg) => println!("criterion {id} ({name}): PASS: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("criterion {id} ({name}): FAIL: {msg}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
