use std::time::Instant;
use thermoflow_core::dynamics::holonomy::{circulation, find_closed_orbit, octagon_axis_orbit};
use thermoflow_core::*;

fn main() {
    let m = ManifoldModel::Octagon;
    let band = octagon_band_form(0.45, 0.8, 0).unwrap();
    let icfg1 = IntegratorConfig::with_step(1e-3);
    let icfg5 = IntegratorConfig::with_step(0.05);

    // 1. Magnetic exponents at lambda in {0.25, 0.5}.
    for lam in [0.25f64, 0.5] {
        let sys = FlowSystem::new(m, FieldConfig::magnetic(lam)).unwrap();
        let p0 = PhasePoint::angle(0.13, -0.05, 0.31);
        let cfg = LyapunovConfig {
            time: 1.0e4,
            transient: 20.0,
            integrator: icfg1,
            ..LyapunovConfig::default()
        };
        let t0 = Instant::now();
        let rep = lyapunov_spectrum(&sys, &p0, &cfg).unwrap();
        let drift = drift_of(&rep);
        println!(
            "mag lam={lam}: exps {:?} sum {:.4e} drift {:.2e} conv {} [{:?}]",
            rep.exponents,
            rep.sum,
            drift,
            rep.converged,
            t0.elapsed()
        );
    }

    // 2. Gradient-null: holonomy + entropy at s = 0.1.
    let pot = field_from_potential(&m, PotentialSpec::octagon(0.05, 0.5)).unwrap();
    let sys_g = FlowSystem::geodesic(m);
    let guess = octagon_axis_orbit(0).unwrap();
    let t0 = Instant::now();
    let orbit = find_closed_orbit(&sys_g, &guess.start, guess.period, &icfg1, 1e-10, 25).unwrap();
    let circ = circulation(&sys_g, &pot, &orbit, &icfg1).unwrap();
    println!(
        "holonomy: circ {:.3e} period {:.12} [{:?}]",
        circ,
        orbit.period,
        t0.elapsed()
    );
    let sys_pot = FlowSystem::new(m, FieldConfig::gaussian(pot, 0.1)).unwrap();
    let p0 = PhasePoint::angle(0.11, 0.07, 0.83);
    let t0 = Instant::now();
    let e = entropy_production(&sys_pot, &p0, 4.0e5, 50.0, 20, &icfg5).unwrap();
    println!(
        "gradient-null e: {:.3e} +- {:.3e} ratio {:.2} [{:?}]",
        e.value,
        e.std_error,
        e.value / e.std_error,
        t0.elapsed()
    );
    let cfg = LyapunovConfig {
        time: 1.0e4,
        transient: 20.0,
        integrator: icfg1,
        ..LyapunovConfig::default()
    };
    let rep = lyapunov_spectrum(&sys_pot, &p0, &cfg).unwrap();
    println!(
        "gradient-null spectrum: {:?} sum {:.3e} drift {:.2e}",
        rep.exponents,
        rep.sum,
        drift_of(&rep)
    );

    // 3. Positivity witness at s = 0.2.
    let sys_b = FlowSystem::new(m, FieldConfig::gaussian(band, 0.2)).unwrap();
    let t0 = Instant::now();
    let e = entropy_production(&sys_b, &p0, 2.0e5, 50.0, 20, &icfg5).unwrap();
    println!(
        "positivity e: {:.4e} +- {:.2e} ratio {:.1} [{:?}]",
        e.value,
        e.std_error,
        e.value / e.std_error,
        t0.elapsed()
    );
    let rep = lyapunov_spectrum(&sys_b, &p0, &cfg).unwrap();
    println!(
        "positivity spectrum: {:?} sum {:.4e} drift {:.2e} (e+sum {:.2e})",
        rep.exponents,
        rep.sum,
        drift_of(&rep),
        e.value + rep.sum
    );
    let scan = scan_criterion(&m, Some(&band), 0.2, CriterionTag::K, 256, 4, 11).unwrap();
    println!(
        "positivity scan: sup {:.4} negative {}",
        scan.supremum, scan.negative
    );

    // 4. Coboundary null: three closed-form derivatives under the band flow.
    let rotor = octagon_rotor_probe();
    let band1 = octagon_band_form(0.3, 0.8, 1).unwrap();
    let s_flow = 0.2;
    let names = ["base-bump", "rotor-pair", "band-pair"];
    for (k, name) in names.iter().enumerate() {
        let t0 = Instant::now();
        let run = observable_variance(&sys_b, &p0, 1.0e5, 50.0, 5, &icfg5, |p| {
            let x = p.base();
            let y = p.velocity(&m);
            match k {
                0 => pot.theta(&m, &x, &y),
                1 => pair_derivative(&m, &rotor, &band, s_flow, &x, &y),
                _ => pair_derivative(&m, &band1, &band, s_flow, &x, &y),
            }
        })
        .unwrap();
        let est = run.estimate;
        println!(
            "cobound {name}: var {:.3e} +- {:.3e} band ({:.3e},{:.3e}) window {} static {:.3e} batch {:.3e} [{:?}]",
            est.value,
            est.std_error,
            est.band.0,
            est.band.1,
            est.window,
            est.static_variance,
            run.batch_oracle,
            t0.elapsed()
        );
    }
    let run = observable_variance(&sys_b, &p0, 1.0e5, 50.0, 5, &icfg5, |p| {
        sys_b.theta_observable(p)
    })
    .unwrap();
    println!(
        "cobound reference theta: var {:.3e} +- {:.3e}",
        run.estimate.value, run.estimate.std_error
    );

    // 5. Magnetic variance vs run length at lambda = 0.5 (and 0.25).
    for (lam, t_run) in [(0.5f64, 1.0e5), (0.5, 4.0e5), (0.5, 1.6e6), (0.25, 4.0e5)] {
        let cfgf = FieldConfig {
            external: Some(band),
            scale: 0.0,
            lorentz: Some(LorentzForce::SurfaceUniform { strength: lam }),
            generalized: None,
        };
        let sys = FlowSystem::new(m, cfgf).unwrap();
        let t0 = Instant::now();
        let run = observable_variance(&sys, &p0, t_run, 50.0, 5, &icfg5, |p| {
            sys.theta_observable(p)
        })
        .unwrap();
        let est = run.estimate;
        println!(
            "mag var lam={lam} T={t_run:.0e}: {:.4e} +- {:.2e} window {} band ({:.4e},{:.4e}) batch {:.4e} [{:?}]",
            est.value, est.std_error, est.window, est.band.0, est.band.1, run.batch_oracle,
            t0.elapsed()
        );
    }
    let run = observable_variance(&sys_g_band(m, band), &p0, 4.0e5, 50.0, 5, &icfg5, |p| {
        sys_g_band(m, band).theta_observable(p)
    })
    .unwrap();
    println!(
        "geodesic var T=4e5 h=.05: {:.4e} +- {:.2e} window {} band ({:.4e},{:.4e}) batch {:.4e}",
        run.estimate.value,
        run.estimate.std_error,
        run.estimate.window,
        run.estimate.band.0,
        run.estimate.band.1,
        run.batch_oracle
    );

    // 6. Theorem-A dress rehearsal at the final parameters.
    let t_all = Instant::now();
    let grid = [-0.15f64, -0.1, -0.05, 0.05, 0.1, 0.15];
    let mut pts = Vec::new();
    for (i, &s) in grid.iter().enumerate() {
        let sys = FlowSystem::new(m, FieldConfig::gaussian(band, s)).unwrap();
        let start = PhasePoint::angle(0.11 + 0.03 * i as f64, 0.07 - 0.02 * i as f64, 0.83 + 0.41 * i as f64);
        let t0 = Instant::now();
        let e = entropy_production(&sys, &start, 2.0e6, 50.0, 20, &icfg5).unwrap();
        println!(
            "curve s={s}: e {:.5e} +- {:.2e} [{:?}]",
            e.value,
            e.std_error,
            t0.elapsed()
        );
        pts.push(CurvePoint {
            s,
            e: e.value,
            sigma: e.std_error,
        });
    }
    let fit = fit_entropy_curve(&pts).unwrap();
    println!(
        "fit: slope {:.3e} +- {:.2e} curv {:.5e} +- {:.2e} chi2 {:.2} dof {}",
        fit.slope,
        fit.slope_err,
        fit.second_derivative,
        fit.second_derivative_err,
        fit.chi_squared,
        fit.dof
    );
    let a2 = 0.45f64 * 0.45;
    println!(
        "theoremA: curv/A^2 {:.5} vs geod var (above); total [{:?}]",
        fit.second_derivative / a2,
        t_all.elapsed()
    );
}

fn sys_g_band(m: ManifoldModel, band: ExternalField) -> FlowSystem {
    FlowSystem::new(m, FieldConfig::gaussian(band, 0.0)).unwrap()
}

fn octagon_rotor_probe() -> ExternalField {
    serde_json::from_value(serde_json::json!({
        "kind": "octagon-rotor", "amplitude": 0.1, "support": 0.6
    }))
    .unwrap()
}

/// d/dt of u = <V(x), y> along the thermostat flow with forcing s*E.
fn pair_derivative(
    m: &ManifoldModel,
    v_field: &ExternalField,
    e_field: &ExternalField,
    s: f64,
    x: &[f64; 3],
    y: &[f64; 3],
) -> f64 {
    let n = m.dim();
    let g = m.metric(x);
    let inner = |a: &[f64; 3], b: &[f64; 3]| -> f64 {
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += g[i][j] * a[i] * b[j];
            }
        }
        acc
    };
    let v = v_field.vector(m, x);
    let dv = v_field.covariant_gradient(m, x);
    let e = e_field.vector(m, x);
    let mut nabla_y_v = [0.0f64; 3];
    for i in 0..n {
        for k in 0..n {
            nabla_y_v[i] += dv[i][k] * y[k];
        }
    }
    inner(&nabla_y_v, y) + s * (inner(&v, &e) - inner(&e, y) * inner(&v, y))
}

fn drift_of(rep: &LyapunovReport) -> f64 {
    let tail = rep.history.len() / 4;
    let last = rep.sum;
    rep.history[rep.history.len() - tail.max(1)..]
        .iter()
        .map(|(_, ex)| (ex.iter().sum::<f64>() - last).abs())
        .fold(0.0, f64::max)
}
