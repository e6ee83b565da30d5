//! The eight subcommands: each builds its measurement from the shared
//! configuration, writes files through [`OutputWriter`], and reports a
//! process exit code.

use std::path::Path;

use anyhow::Result;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use thermoflow_core::{
    dynamical_variance, entropy_production, fit_entropy_curve, identity_suite, lyapunov_spectrum,
    run_scenario, sample_start, scan_criterion, scenarios, spectrum_sum_drift, CriterionTag,
    CurvePoint, Error as CoreError, FlowSystem, LyapunovConfig, PhasePoint, ScenarioOutcome,
    NEGATIVITY_MARGIN, SCENARIOS,
};

use crate::config::RunConfig;
use crate::output::{num, OutputWriter};

/// Exit code for a run whose estimate did not converge; the flagged report
/// is still written.
pub const EXIT_NONCONVERGED: i32 = 3;

fn start_point(cfg: &RunConfig, sys: &FlowSystem) -> Result<PhasePoint, CoreError> {
    match &cfg.run.start {
        Some(v) if cfg.model.dim() == 2 => Ok(PhasePoint::angle(v[0], v[1], v[2])),
        Some(v) => PhasePoint::vector(&cfg.model, [v[0], v[1], v[2]], [v[3], v[4], v[5]]),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
            Ok(sample_start(&sys.model, &mut rng))
        }
    }
}

fn flow_system(cfg: &RunConfig) -> Result<FlowSystem, CoreError> {
    FlowSystem::new(cfg.model, cfg.field_config())
}

fn lyapunov_config(cfg: &RunConfig) -> LyapunovConfig {
    LyapunovConfig {
        time: cfg.run.time,
        transient: cfg.run.transient,
        renorm_interval: cfg.run.renorm_interval,
        conv_tol: cfg.run.conv_tol,
        integrator: cfg.integrator.to_core(),
    }
}

/// `simulate`: trace one orbit and tabulate the state with the two scalar
/// observables (thermostat alignment and phase-volume divergence).
pub fn simulate(cfg: &RunConfig, root: &Path) -> Result<i32> {
    let sys = flow_system(cfg)?;
    let p0 = start_point(cfg, &sys)?;
    let samples = sys.trace(
        &p0,
        cfg.run.time,
        &cfg.integrator.to_core(),
        cfg.run.sample_every,
    )?;

    let surface = cfg.model.dim() == 2;
    let header: Vec<&str> = if surface {
        vec!["t", "x1", "x2", "phi", "theta", "divergence"]
    } else {
        vec!["t", "x1", "x2", "x3", "v1", "v2", "v3", "theta", "divergence"]
    };
    let rows: Vec<Vec<String>> = samples
        .iter()
        .map(|(t, p)| {
            let x = p.base();
            let mut row = vec![num(*t)];
            if let PhasePoint::Angle { phi, .. } = p {
                row.push(num(x[0]));
                row.push(num(x[1]));
                row.push(num(*phi));
            } else {
                let v = p.velocity(&cfg.model);
                for i in 0..3 {
                    row.push(num(x[i]));
                }
                for i in 0..3 {
                    row.push(num(v[i]));
                }
            }
            row.push(num(sys.theta_observable(p)));
            row.push(num(sys.volume_divergence(p)));
            row
        })
        .collect();

    let mut out = OutputWriter::new(root, "simulate")?;
    out.write_csv("orbit.csv", &header, &rows)?;
    out.write_json(
        "summary.json",
        &json!({
            "model": cfg.model.name(),
            "samples": rows.len(),
            "time": cfg.run.time,
            "sample_dt": cfg.integrator.step * cfg.run.sample_every as f64,
        }),
    )?;
    let dir = out.finish("simulate", cfg)?;
    println!("simulate: {} samples -> {}", rows.len(), dir.display());
    Ok(0)
}

/// `lyapunov`: full spectrum with convergence history.
pub fn lyapunov(cfg: &RunConfig, root: &Path) -> Result<i32> {
    let sys = flow_system(cfg)?;
    let p0 = start_point(cfg, &sys)?;
    let report = lyapunov_spectrum(&sys, &p0, &lyapunov_config(cfg))?;

    let mut out = OutputWriter::new(root, "lyapunov")?;
    out.write_json("spectrum.json", &report)?;
    let mut header = vec!["t".to_string()];
    for i in 0..report.exponents.len() {
        header.push(format!("lambda{}", i + 1));
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = report
        .history
        .iter()
        .map(|(t, ex)| {
            let mut row = vec![num(*t)];
            row.extend(ex.iter().map(|x| num(*x)));
            row
        })
        .collect();
    out.write_csv("history.csv", &header_refs, &rows)?;
    let dir = out.finish("lyapunov", cfg)?;

    let spectrum = report
        .exponents
        .iter()
        .map(|x| format!("{x:+.6}"))
        .collect::<Vec<_>>()
        .join("  ");
    println!(
        "lyapunov: [{spectrum}]  sum {:+.6}  drift {:.2e}  converged {}",
        report.sum,
        spectrum_sum_drift(&report),
        report.converged
    );
    println!("lyapunov: report -> {}", dir.display());
    Ok(if report.converged { 0 } else { EXIT_NONCONVERGED })
}

/// `entropy`: batch-mean entropy production estimate.
pub fn entropy(cfg: &RunConfig, root: &Path) -> Result<i32> {
    let sys = flow_system(cfg)?;
    let p0 = start_point(cfg, &sys)?;
    let est = entropy_production(
        &sys,
        &p0,
        cfg.run.time,
        cfg.run.transient,
        cfg.run.batches,
        &cfg.integrator.to_core(),
    )?;

    let mut out = OutputWriter::new(root, "entropy")?;
    out.write_json("entropy.json", &est)?;
    let dir = out.finish("entropy", cfg)?;
    println!(
        "entropy: {} +/- {}  (theta mean {:.3e}) -> {}",
        est.value,
        est.std_error,
        est.theta_mean,
        dir.display()
    );
    Ok(0)
}

/// `variance`: integrated variance of the alignment observable, with the
/// windowed estimator and its batch-means cross-check.
pub fn variance(cfg: &RunConfig, root: &Path) -> Result<i32> {
    let sys = flow_system(cfg)?;
    let p0 = start_point(cfg, &sys)?;
    let icfg = cfg.integrator.to_core();
    let start = sys.flow(&p0, cfg.run.transient, &icfg)?;
    let series = sys.observable_series(
        &start,
        cfg.run.time,
        &icfg,
        cfg.run.sample_every,
        |p| sys.theta_observable(p),
    )?;
    let dt = icfg.step * cfg.run.sample_every as f64;

    let mut out = OutputWriter::new(root, "variance")?;
    match dynamical_variance(&series, dt) {
        Ok(est) => {
            out.write_json("variance.json", &est)?;
            let dir = out.finish("variance", cfg)?;
            println!(
                "variance: {} +/- {}  window {} lags  band [{}, {}] -> {}",
                est.value,
                est.std_error,
                est.window,
                est.band.0,
                est.band.1,
                dir.display()
            );
            Ok(0)
        }
        Err(CoreError::InsufficientLength { needed, have }) => {
            out.write_json(
                "variance.json",
                &json!({
                    "converged": false,
                    "reason": "series too short to resolve the correlation window",
                    "needed": needed,
                    "have": have,
                }),
            )?;
            let dir = out.finish("variance", cfg)?;
            println!(
                "variance: unresolved (need {needed} samples, have {have}) -> {}",
                dir.display()
            );
            Ok(EXIT_NONCONVERGED)
        }
        Err(e) => Err(e.into()),
    }
}

/// `entropy-curve`: entropy production across the coupling grid with a
/// slope/curvature fit at the origin.
pub fn entropy_curve(cfg: &RunConfig, root: &Path) -> Result<i32> {
    let field = cfg
        .field
        .as_ref()
        .and_then(|f| f.external)
        .ok_or_else(|| CoreError::InvalidParameter {
            name: "field.external",
            why: "the coupling curve needs an external field to rescale".into(),
        })?;

    let icfg = cfg.integrator.to_core();
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut points: Vec<CurvePoint> = Vec::new();
    for (idx, &s) in cfg.run.s_grid.iter().enumerate() {
        let fields = thermoflow_core::FieldConfig::gaussian(field, s);
        let sys = FlowSystem::new(cfg.model, fields)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed.wrapping_add(idx as u64));
        let p0 = match &cfg.run.start {
            Some(_) => start_point(cfg, &sys)?,
            None => sample_start(&sys.model, &mut rng),
        };
        let est = entropy_production(
            &sys,
            &p0,
            cfg.run.time,
            cfg.run.transient,
            cfg.run.batches,
            &icfg,
        )?;
        rows.push(vec![
            num(s),
            num(est.value),
            num(est.std_error),
            num(est.theta_mean),
        ]);
        if s != 0.0 {
            points.push(CurvePoint {
                s,
                e: est.value,
                sigma: est.std_error.max(1e-300),
            });
        }
    }

    let fit = fit_entropy_curve(&points)?;
    let mut out = OutputWriter::new(root, "entropy-curve")?;
    out.write_csv("curve.csv", &["s", "e", "std_error", "theta_mean"], &rows)?;
    out.write_json("fit.json", &fit)?;
    let dir = out.finish("entropy-curve", cfg)?;
    println!(
        "entropy-curve: e'(0) = {} +/- {}   e''(0) = {} +/- {} -> {}",
        fit.slope,
        fit.slope_err,
        fit.second_derivative,
        fit.second_derivative_err,
        dir.display()
    );
    Ok(0)
}

/// `criteria`: randomized supremum scan of the hyperbolicity criteria.
pub fn criteria(cfg: &RunConfig, root: &Path) -> Result<i32> {
    let field = cfg.field.as_ref().and_then(|f| f.external);
    let scale = cfg.field.as_ref().map_or(0.0, |f| f.scale);

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut reports = Vec::new();
    for tag_name in &cfg.criteria.tags {
        let tag = match tag_name.as_str() {
            "k" => CriterionTag::K,
            "k-weyl" => CriterionTag::KWeyl,
            _ => CriterionTag::KOne,
        };
        let report = scan_criterion(
            &cfg.model,
            field.as_ref(),
            scale,
            tag,
            cfg.criteria.points,
            cfg.criteria.planes,
            cfg.run.seed,
        )?;
        rows.push(vec![
            report.tag.name().to_string(),
            num(report.supremum),
            report.negative.to_string(),
            num(report.worst_point[0]),
            num(report.worst_point[1]),
            num(report.worst_point[2]),
        ]);
        reports.push(json!({
            "tag": report.tag.name(),
            "supremum": report.supremum,
            "negative": report.negative,
            "margin": NEGATIVITY_MARGIN,
            "points": report.points,
            "planes_per_point": report.planes_per_point,
            "worst_point": report.worst_point,
            "worst_plane": { "xi": report.worst_plane.xi, "eta": report.worst_plane.eta },
        }));
    }

    let mut out = OutputWriter::new(root, "criteria")?;
    out.write_csv(
        "criteria.csv",
        &["tag", "supremum", "negative", "x1", "x2", "x3"],
        &rows,
    )?;
    out.write_json("criteria.json", &json!({ "scans": reports }))?;
    let dir = out.finish("criteria", cfg)?;
    for r in &rows {
        println!("criteria: {:8} supremum {}  negative {}", r[0], r[1], r[2]);
    }
    println!("criteria: report -> {}", dir.display());
    Ok(0)
}

/// `identities`: two-step refinement of the operator identity residuals.
pub fn identities(cfg: &RunConfig, root: &Path) -> Result<i32> {
    let field = cfg.field.as_ref().and_then(|f| f.external);
    let scale = cfg.field.as_ref().map_or(0.0, |f| f.scale);
    let rows = identity_suite(
        &cfg.model,
        field.as_ref(),
        scale,
        cfg.identities.step,
        cfg.identities.points,
        cfg.run.seed,
    )?;

    let all_accepted = rows.iter().all(|r| r.accepted());
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.identity.to_string(),
                r.case.to_string(),
                num(r.coarse),
                num(r.fine),
                r.ratio.map(num).unwrap_or_default(),
                r.exact.to_string(),
            ]
        })
        .collect();

    let mut out = OutputWriter::new(root, "identities")?;
    out.write_csv(
        "identities.csv",
        &["identity", "case", "coarse", "fine", "ratio", "exact"],
        &csv_rows,
    )?;
    out.write_json(
        "identities.json",
        &json!({
            "rows": rows,
            "ratio_band": [3.5, 4.5],
            "exact_floor": scenarios::IDENTITY_EXACT_FLOOR,
            "all_accepted": all_accepted,
        }),
    )?;
    let dir = out.finish("identities", cfg)?;

    for r in &rows {
        match r.ratio {
            Some(ratio) if !r.exact => {
                println!(
                    "identities: {:22} {} ratio {:7.3}",
                    r.identity, r.case, ratio
                );
            }
            _ => println!("identities: {:22} {} exact", r.identity, r.case),
        }
    }
    println!(
        "identities: all_accepted {} -> {}",
        all_accepted,
        dir.display()
    );
    Ok(0)
}

/// `scenario`: one named study end to end, or `list` for the catalog.
pub fn scenario(name: &str, cfg: &RunConfig, root: &Path) -> Result<i32> {
    if name == "list" {
        for (n, description) in SCENARIOS {
            println!("{n:20} {description}");
        }
        return Ok(0);
    }
    let outcome: ScenarioOutcome = run_scenario(name, cfg.run.seed)?;

    let mut out = OutputWriter::new(root, "scenario")?;
    out.write_json("scenario.json", &outcome)?;
    for table in &outcome.tables {
        let rows: Vec<Vec<String>> = table
            .rows
            .iter()
            .map(|row| row.iter().map(|x| num(*x)).collect())
            .collect();
        out.write_csv(&format!("{}.csv", table.name), &table.columns, &rows)?;
    }
    let check_rows: Vec<Vec<String>> = outcome
        .checks
        .iter()
        .map(|c| {
            vec![
                c.name.to_string(),
                c.kind.to_string(),
                num(c.observed),
                num(c.target),
                num(c.tolerance),
                c.passed.to_string(),
            ]
        })
        .collect();
    out.write_csv(
        "checks.csv",
        &["check", "kind", "observed", "target", "tolerance", "passed"],
        &check_rows,
    )?;
    let dir = out.finish("scenario", cfg)?;

    println!("scenario {}: {}", outcome.name, outcome.description);
    for c in &outcome.checks {
        println!(
            "  [{}] {:40} observed {:+.6e}  target {:+.6e}  tol {:.2e}",
            if c.passed { "pass" } else { "FAIL" },
            c.name,
            c.observed,
            c.target,
            c.tolerance
        );
    }
    println!(
        "scenario {}: {} -> {}",
        outcome.name,
        if outcome.passed() { "pass" } else { "FAIL" },
        dir.display()
    );
    Ok(if outcome.converged { 0 } else { EXIT_NONCONVERGED })
}
