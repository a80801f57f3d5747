use crate::args::*;
use crate::output::{digest, InputDigest, Outputs};
use crate::plot::{read_series, render, PlotSpec};
use crate::{with_suffix, Report};
use anyhow::{bail, Result};
use rayon::prelude::*;
use serde_json::json;
use std::io::Write;
use std::path::Path;
use topohaz::cox::{cox_fit, CoxFormula, Term, Ties};
use topohaz::inference::{bootstrap_band, coverage_experiment, replicate_band, replicate_pointwise, BandMethod, BandResult, BootstrapOptions, CoverageConfig};
use topohaz::limiting::{limit_curve, LimitCorrelation, LimitSpec};
use topohaz::nelson_aalen::{at_risk_percentile_grid, field_curve, linspace, naive_variance, nelson_aalen, write_na_csv};
use topohaz::randfield::{match_correlation, FieldModel, MatchOptions, MaternParams, ModelKind, ModelSampler};
use topohaz::rng::derive_seed;
use topohaz::trees::{build_event_table, read_trees_json, EventKind, EventTable};
use topohaz::{barcode, birth_process, LatticeField, LatticeOptions};

const MATCH_TAG: u64 = 0x3a7c;

pub(crate) fn dispatch(command: &Command, seed: u64, out: &mut Outputs) -> Result<Report> {
    match command {
        Command::SimulateField(a) => simulate_field(a, seed, out),
        Command::NaField(a) => na_field(a, out),
        Command::Limit(a) => limit(a, seed, out),
        Command::BandReplicates(a) => band_replicates(a, seed, out),
        Command::BandBootstrap(a) => band_bootstrap(a, seed, out),
        Command::Coverage(a) => coverage(a, seed, out),
        Command::TreeEvents(a) => tree_events(a, out),
        Command::CoxFit(a) => cox(a, out),
        Command::Plot(a) => plot(a, out),
    }
}

/// Loads a field and digests every file it was read from.
fn load_field(path: &Path, options: LatticeOptions, inputs: &mut Vec<InputDigest>) -> Result<LatticeField> {
    let field = LatticeField::load(path, options)?;
    inputs.push(digest(path)?);
    if !path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let mut sidecar = path.as_os_str().to_owned();
        sidecar.push(".json");
        inputs.push(digest(Path::new(&sidecar))?);
    }
    Ok(field)
}

fn write_band(w: &mut dyn Write, band: &BandResult, exp_levels: bool) -> Result<()> {
    if exp_levels {
        let mut b = band.clone();
        b.levels.iter_mut().for_each(|l| *l = l.exp());
        b.write_csv(w)?;
    } else {
        band.write_csv(w)?;
    }
    Ok(())
}

fn band_summary(band: &BandResult) -> serde_json::Value {
    json!({
        "method": band.method,
        "simultaneous": band.simultaneous,
        "alpha": band.alpha,
        "threshold": band.threshold,
        "excluded_levels": band.excluded.len(),
        "psd_repair": band.psd_repair,
    })
}

fn simulate_field(a: &SimulateField, seed: u64, out: &mut Outputs) -> Result<Report> {
    if a.count == 0 {
        bail!("--count must be at least 1");
    }
    let kind: ModelKind = a.model.into();
    let target = MaternParams::new(a.eta, a.nu)?;
    let (inner, matching) = if kind == ModelKind::M1 || a.inner {
        (target, serde_json::Value::Null)
    } else {
        let options = MatchOptions { pairs: a.match_pairs, seed: derive_seed(seed, &[MATCH_TAG]), ..Default::default() };
        let m = match_correlation(target, kind, &options)?;
        let summary = json!({
            "procedure": "least-squares lag-correlation matching; inner parameters are an artifact of this procedure",
            "target": m.target,
            "inner": m.params,
            "max_discrepancy": m.max_discrepancy,
            "evaluations": m.evaluations,
        });
        (m.params, summary)
    };
    let sampler = ModelSampler::new(FieldModel { kind, matern: inner }, a.rows, a.cols, LatticeOptions::default())?;
    let seeds: Vec<u64> = (0..a.count as u64).map(|i| derive_seed(seed, &[i])).collect();
    let fields = sampler.sample_batch(&seeds)?;
    for (i, field) in fields.iter().enumerate() {
        let path = if a.count == 1 { a.out.clone() } else { with_suffix(&a.out, i) };
        out.write(&path, |w| Ok(field.write_csv(w)?))?;
    }
    Ok(Report {
        primary: a.out.clone(),
        inputs: Vec::new(),
        results: json!({ "inner": inner, "matching": matching, "fields": a.count }),
    })
}

fn na_field(a: &NaField, out: &mut Outputs) -> Result<Report> {
    let mut inputs = Vec::new();
    let field = load_field(&a.input, a.lattice.options(), &mut inputs)?;
    let direction = a.filtration.direction.into();
    let bp = birth_process(&field, direction, a.filtration.risk_convention.into());
    let a_hat = nelson_aalen(&bp)?;
    let var = naive_variance(&bp)?;
    let exp_levels = a.filtration.exp_levels;
    out.write(&a.out, |w| Ok(write_na_csv(w, &a_hat, &var, exp_levels)?))?;
    if let Some(path) = &a.barcode {
        let bars = barcode(&field, direction);
        out.write(path, |w| {
            let t = |x: f64| if exp_levels { x.exp() } else { x };
            writeln!(w, "birth,death,row,col")?;
            for iv in &bars.intervals {
                writeln!(w, "{},{},{},{}", t(iv.birth), t(iv.death), iv.location.row, iv.location.col)?;
            }
            Ok(())
        })?;
    }
    Ok(Report {
        primary: a.out.clone(),
        inputs,
        results: json!({ "cells": field.len(), "births": bp.births().len(), "ties_broken": field.ties_broken() }),
    })
}

fn limit(a: &Limit, seed: u64, out: &mut Outputs) -> Result<Report> {
    let correlation = match (a.iid, a.eta, a.nu) {
        (true, _, _) => LimitCorrelation::Independent,
        (false, Some(eta), Some(nu)) => LimitCorrelation::Matern(MaternParams::new(eta, nu)?),
        _ => bail!("--eta and --nu are required unless --iid is given"),
    };
    if a.points == 0 || !(a.from < a.to) {
        bail!("need --from < --to and at least one point");
    }
    let grid = if a.points == 1 { vec![a.from] } else { linspace(a.from, a.to, a.points) };
    let mut spec = LimitSpec::new(correlation, a.rows, a.cols, a.lattice.options(), grid);
    spec.mc_samples = a.samples;
    spec.integration_points = a.integration_points;
    spec.seed = seed;
    if a.mean_corrected {
        spec = spec.mean_corrected();
    }
    let lc = limit_curve(&spec)?;
    out.write(&a.out, |w| {
        writeln!(w, "level,A,mc_se")?;
        for ((l, v), se) in lc.curve.levels().iter().zip(lc.curve.values()).zip(&lc.mc_se) {
            writeln!(w, "{l},{v},{se}")?;
        }
        Ok(())
    })?;
    Ok(Report {
        primary: a.out.clone(),
        inputs: Vec::new(),
        results: json!({
            "truncated_at": lc.truncated_at,
            "mean_shift_variance": spec.mean_shift_variance,
            "max_mc_se": lc.mc_se.iter().copied().fold(0.0, f64::max),
        }),
    })
}

fn band_replicates(a: &BandReplicates, seed: u64, out: &mut Outputs) -> Result<Report> {
    if a.inputs.len() < 2 {
        bail!("need at least two replicate fields, got {}", a.inputs.len());
    }
    let mut inputs = Vec::new();
    let fields = a
        .inputs
        .iter()
        .map(|p| load_field(p, a.lattice.options(), &mut inputs))
        .collect::<Result<Vec<_>>>()?;
    let direction = a.filtration.direction.into();
    let convention = a.filtration.risk_convention.into();
    let grid = at_risk_percentile_grid(&fields, &[], a.points, direction)?.grid;
    let curves = fields
        .par_iter()
        .map(|f| field_curve(f, direction, convention, &grid))
        .collect::<topohaz::Result<Vec<_>>>()?;
    let band = if a.pointwise {
        replicate_pointwise(&curves, a.alpha)?
    } else {
        replicate_band(&curves, a.alpha, a.mc_draws, seed)?
    };
    out.write(&a.out, |w| write_band(w, &band, a.filtration.exp_levels))?;
    Ok(Report {
        primary: a.out.clone(),
        inputs,
        results: json!({ "band": band_summary(&band), "replicates": fields.len() }),
    })
}

fn band_bootstrap(a: &BandBootstrap, seed: u64, out: &mut Outputs) -> Result<Report> {
    let mut inputs = Vec::new();
    let field = load_field(&a.input, a.lattice.options(), &mut inputs)?;
    let options = BootstrapOptions {
        replicates: a.replicates,
        alpha: a.alpha,
        direction: a.filtration.direction.into(),
        convention: a.filtration.risk_convention.into(),
        ..Default::default()
    };
    let grid = at_risk_percentile_grid(std::slice::from_ref(&field), &[], a.points, options.direction)?.grid;
    let boot = bootstrap_band(&field, &grid, &options, seed)?;
    out.write(&a.out, |w| write_band(w, &boot.band, a.filtration.exp_levels))?;
    Ok(Report {
        primary: a.out.clone(),
        inputs,
        results: json!({
            "band": band_summary(&boot.band),
            "mle": { "params": boot.fit.params, "log_likelihood": boot.fit.log_likelihood, "at_lower_eta": boot.fit.at_lower_eta },
        }),
    })
}

fn coverage(a: &Coverage, seed: u64, out: &mut Outputs) -> Result<Report> {
    let model = FieldModel { kind: ModelKind::M1, matern: MaternParams::new(a.eta, a.nu)? };
    let method = match a.method {
        MethodArg::Replicate => BandMethod::Replicate,
        MethodArg::Bootstrap => BandMethod::Bootstrap,
        MethodArg::Naive => BandMethod::Naive,
    };
    let mut config = CoverageConfig::new(model, a.rows, a.cols, method, a.trials, seed);
    config.options = a.lattice.options();
    config.replicates = a.replicates;
    config.bootstrap = a.bootstrap;
    config.alpha = a.alpha;
    config.mc_draws = a.mc_draws;
    config.pilot_fields = a.pilot_fields;
    config.grid_points = a.points;
    config.percentiles = a.percentiles.clone();
    config.limit_samples = a.limit_samples;
    let table = coverage_experiment(&config)?;
    out.write(&a.out, |w| {
        writeln!(w, "percentile,level,coverage")?;
        for ((p, l), c) in table.percentiles.iter().zip(&table.levels).zip(&table.pointwise) {
            writeln!(w, "{p},{l},{c}")?;
        }
        Ok(())
    })?;
    Ok(Report {
        primary: a.out.clone(),
        inputs: Vec::new(),
        results: json!({
            "trials": table.trials,
            "simultaneous_coverage": table.simultaneous,
            "mean_threshold": table.mean_threshold,
        }),
    })
}

fn tree_events(a: &TreeEvents, out: &mut Outputs) -> Result<Report> {
    let trees = read_trees_json(&a.input)?;
    let inputs = vec![digest(&a.input)?];
    let table = build_event_table(&trees, a.proximity_radius)?;
    out.write(&a.out, |w| Ok(table.write_csv(w)?))?;
    Ok(Report {
        primary: a.out.clone(),
        inputs,
        results: json!({
            "trees": trees.len(),
            "rows": table.len(),
            "excluded_edges": table.excluded(),
            "leaf_events": table.event_count(EventKind::Leaf),
            "branch_events": table.event_count(EventKind::Branch),
        }),
    })
}

fn parse_term(spec: &str) -> Result<Term> {
    let Some((name, cols)) = spec.split_once(':') else {
        bail!("term '{spec}' must look like name:col1,col2");
    };
    let columns: Vec<String> = cols.split(',').map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect();
    if name.trim().is_empty() || columns.is_empty() {
        bail!("term '{spec}' needs a name and at least one column");
    }
    Ok(Term { name: name.trim().to_string(), columns })
}

fn cox(a: &CoxFit, out: &mut Outputs) -> Result<Report> {
    let table = EventTable::read_csv(&a.input)?;
    let inputs = vec![digest(&a.input)?];
    let covs: Vec<&str> = a.covariates.iter().map(String::as_str).filter(|c| !c.is_empty()).collect();
    let mut formula = CoxFormula::new(&covs);
    for t in &a.term {
        formula.terms.push(parse_term(t)?);
    }
    if formula.terms.is_empty() {
        bail!("no covariates given (use --covariates or --term)");
    }
    if let Some(f) = &a.factor {
        formula = formula.with_factor(f);
    }
    formula = formula.with_ties(match a.ties {
        TiesArg::Breslow => Ties::Breslow,
        TiesArg::Efron => Ties::Efron,
    });
    formula.max_iter = a.max_iter;
    let event = match a.event {
        EventArg::Leaf => EventKind::Leaf,
        EventArg::Branch => EventKind::Branch,
    };
    let fit = cox_fit(&table, event, &formula)?;
    let coefficients: Vec<_> = (0..fit.names.len())
        .map(|j| {
            json!({
                "name": fit.names[j],
                "coefficient": fit.coefficients[j],
                "std_error": fit.std_errors[j],
                "z": fit.coefficients[j] / fit.std_errors[j],
            })
        })
        .collect();
    let terms: Vec<_> = fit
        .terms
        .iter()
        .map(|t| {
            let hr = fit.hr_20_80.iter().find(|(n, _)| *n == t.name).map(|(_, h)| *h);
            json!({ "term": t.name, "df": t.df, "chi_square": t.chi_square, "p_value": t.p_value, "hr_20_80": hr })
        })
        .collect();
    let summary = json!({
        "event": fit.event,
        "ties": fit.ties,
        "rows": fit.rows,
        "events": fit.events,
        "iterations": fit.iterations,
        "log_partial_likelihood": fit.log_partial_likelihood,
        "null_log_partial_likelihood": fit.null_log_partial_likelihood,
        "likelihood_ratio": 2.0 * (fit.log_partial_likelihood - fit.null_log_partial_likelihood),
        "gradient_max": fit.gradient_max,
        "coefficients": coefficients,
        "terms": terms,
        "hr_20_80": fit.hr_20_80,
        "factor_levels": fit.factor_levels,
    });
    out.write(&a.out, |w| {
        serde_json::to_writer_pretty(&mut *w, &summary)?;
        writeln!(w)?;
        Ok(())
    })?;
    Ok(Report {
        primary: a.out.clone(),
        inputs,
        results: json!({ "events": fit.events, "log_partial_likelihood": fit.log_partial_likelihood }),
    })
}

fn plot(a: &Plot, out: &mut Outputs) -> Result<Report> {
    let mut inputs = Vec::new();
    let mut series = Vec::new();
    for p in &a.inputs {
        series.push(read_series(p, a.column.as_deref())?);
        inputs.push(digest(p)?);
    }
    let reference = match &a.reference {
        Some(p) => {
            inputs.push(digest(p)?);
            let s = match a.reference_column.as_deref() {
                Some(c) => read_series(p, Some(c))?,
                None => read_series(p, Some("A")).or_else(|_| read_series(p, None))?,
            };
            Some(s)
        }
        None => None,
    };
    let spec = PlotSpec { title: a.title.clone(), xlabel: a.xlabel.clone(), ylabel: a.ylabel.clone(), width: a.width, height: a.height };
    let svg = render(&series, reference.as_ref(), &spec);
    out.write(&a.out, |w| Ok(w.write_all(svg.as_bytes())?))?;
    Ok(Report { primary: a.out.clone(), inputs, results: json!({ "series": series.len() }) })
}
