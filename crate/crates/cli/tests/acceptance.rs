//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `EXPECTED_FAILURES` are reported as FAIL without
//! failing the process; any other failure exits nonzero.

use std::f64::consts::{LN_2, PI};
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use hjks_cli::bench::preset_config;
use hjks_cli::config::parse_config_with;
use hjks_cli::config::Overrides;
use hjks_cli::manifest::{RunManifest, RunStatus};
use hjks_cli::run::run;
use hjks_core::benettin::{spectrum, OracleError, OracleOptions, OracleSystem, Spectrum};
use hjks_core::kicked::{run_kicked, KickedOptions};
use hjks_core::matkernel::{phase_functions_direct, phase_functions_inverted, sym_eigen, SymMatrix};
use hjks_core::quantum::{
    classical_rotor_orbit, density_decay_ks, ensemble_density_decay, entropy_rate, evolve, hybrid_ks, quantum_ks,
    sample_positions, trace_mb_orbit, unitarity_drift, Evolution, MbOrbit, OrbitOptions, Rotor, WaveState,
    DEFAULT_SUBSTEPS, HYBRID_TOLERANCE,
};
use hjks_core::riccati::{evolve_ks, EvolveOptions};
use hjks_core::systems::{continuous_model, continuous_potential, kick_function, KickedModel, Potential, ScalarField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 0;
const EXPECTED_FAILURES: [u32; 2] = [3, 7];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn run_preset(name: &str, dir: &Path) -> RunManifest {
    let config = preset_config(name, SEED, &dir.join(name)).expect("preset parses");
    run(&config, true).expect("preset output is writable")
}

fn within(value: f64, expected: f64, tol: f64) -> bool {
    (value - expected).abs() <= tol
}

// ln cosh x without overflow.
fn ln_cosh(x: f64) -> f64 {
    let x = x.abs();
    x - LN_2 + (-2.0 * x).exp().ln_1p()
}

struct QuarticRun {
    k: f64,
    q: Vec<f64>,
    p: Vec<f64>,
}

fn criterion1(dir: &Path, out: &mut Option<QuarticRun>) -> Outcome {
    let m = run_preset("example1", dir);
    let k = m.value("k").unwrap_or(f64::NAN);
    let state = &m.details["initial_state"];
    let read = |key: &str| -> Vec<f64> { serde_json::from_value(state[key].clone()).unwrap() };
    *out = Some(QuarticRun {
        k,
        q: read("q"),
        p: read("p"),
    });
    let pass = m.status == RunStatus::Ok && within(k, 0.6126, 0.05 * 0.6126);
    outcome(pass, format!("quartic3 k = {k:.5} at t = 1e4 (0.6126 ± 5%)"))
}

fn criterion2(ex1: Option<&QuarticRun>) -> Outcome {
    let Some(ex1) = ex1 else {
        return outcome(false, "criterion 1 produced no orbit");
    };
    let model = continuous_model("quartic3", 3, 0.0).unwrap();
    let opts = OracleOptions {
        horizon: 1e4,
        dt: 1e-3,
        renorm_interval: 1.0,
        ..Default::default()
    };
    let sp = spectrum(OracleSystem::Continuous(model.as_ref()), &ex1.q, &ex1.p, &opts).unwrap();
    let rel = (ex1.k - sp.k_oracle).abs() / sp.k_oracle.abs();
    outcome(
        rel <= 0.02,
        format!(
            "Riccati {:.5} vs Benettin {:.5} ± {:.1e}, relative gap {rel:.2e} (≤ 2%)",
            ex1.k, sp.k_oracle, sp.k_error
        ),
    )
}

fn criterion3(dir: &Path) -> Outcome {
    let m = run_preset("example2", dir);
    let k = m.value("k").unwrap_or(f64::NAN);
    let pass = m.status == RunStatus::Ok && within(k, 1.5e5, 0.1 * 1.5e5);
    outcome(
        pass,
        format!("kicked-quartic k = {k:.4e} after 1e7 kicks (1.5e5 ± 10%)"),
    )
}

fn criterion4(dir: &Path) -> Outcome {
    let mut failures = Vec::new();

    let inv = run_preset("inverted-1d", dir);
    let trailing = inv.value("k_trailing").unwrap_or(f64::NAN);
    let cesaro = inv.value("k").unwrap_or(f64::NAN);
    // σ = tanh t, integrand tanh 2t, so the running mean is ln cosh(2t)/(2t).
    let cesaro_exact = ln_cosh(200.0) / 200.0;
    if !within(trailing, 1.0, 1e-3) {
        failures.push(format!("inverted-1d k = {trailing}"));
    }
    if !within(cesaro, cesaro_exact, 1e-9) {
        failures.push(format!("inverted-1d running mean {cesaro} vs {cesaro_exact}"));
    }

    let omega = 2.0;
    let dt = 1e-3;
    let model = continuous_model("quadratic", 1, omega).unwrap();
    let opts = EvolveOptions {
        t_max: 1000.0,
        dt,
        sample_every: 0.0,
        ..Default::default()
    };
    let est = evolve_ks(model.as_ref(), &[1.0], &[0.0], &opts).unwrap();
    if est.k.abs() > 1e-3 {
        failures.push(format!("harmonic k = {}", est.k));
    }
    let expected_poles = ((1000.0 * omega / PI) + 0.5).floor() as usize;
    if est.poles.len() != expected_poles {
        failures.push(format!("{} poles, expected {expected_poles}", est.poles.len()));
    }
    let worst_pole = est
        .poles
        .iter()
        .enumerate()
        .map(|(i, e)| (e.time - (i as f64 + 0.5) * PI / omega).abs())
        .fold(0.0_f64, f64::max);
    if worst_pole > dt {
        failures.push(format!("pole off schedule by {worst_pole:.2e}"));
    }

    // σ(t) = −ω tan ωt checked at grid times at least 0.05 from any pole,
    // early and late in the run.
    let mut worst_sigma = 0.0_f64;
    let mut checked = 0;
    for n in (50..3000).step_by(50).chain((997_000..1_000_000).step_by(250)) {
        let t = n as f64 * dt;
        let phase = (omega * t / PI + 0.5).rem_euclid(1.0);
        if phase.min(1.0 - phase) * PI / omega < 0.05 {
            continue;
        }
        let short = EvolveOptions {
            t_max: t,
            ..opts.clone()
        };
        let e = evolve_ks(model.as_ref(), &[1.0], &[0.0], &short).unwrap();
        let sigma = e.sigma_state.sigma().unwrap().get(0, 0);
        let exact = -omega * (omega * e.elapsed).tan();
        worst_sigma = worst_sigma.max((sigma - exact).abs() / exact.abs().max(1.0));
        checked += 1;
    }
    if worst_sigma > 1e-6 {
        failures.push(format!("σ deviates by {worst_sigma:.2e}"));
    }

    let detail = format!(
        "inverted-1d k = {trailing:.7}; harmonic k = {:.2e}, {} poles within {worst_pole:.1e}, σ error {worst_sigma:.1e} at {checked} times",
        est.k,
        est.poles.len()
    );
    if failures.is_empty() {
        outcome(true, detail)
    } else {
        outcome(false, format!("{detail}; {}", failures.join("; ")))
    }
}

fn criterion5(dir: &Path) -> Outcome {
    let m = run_preset("golden", dir);
    let k = m.value("k_trailing").unwrap_or(f64::NAN);
    let exact = ((3.0 + 5f64.sqrt()) / 2.0).ln();
    outcome(
        within(k, exact, 1e-6),
        format!("k = {k:.9} vs ln((3+√5)/2) = {exact:.9} after 1e3 kicks"),
    )
}

struct RotorRun {
    evo: Evolution,
    psi0: WaveState,
    orbit: Option<MbOrbit>,
    rotor: Rotor,
}

fn rotor_run() -> RotorRun {
    let rotor = Rotor {
        strength: 5.0,
        period: 1.0,
    };
    let psi0 = WaveState::uniform(2048, 1.0).unwrap();
    let evo = evolve(&psi0, rotor, 1000, DEFAULT_SUBSTEPS).unwrap();
    RotorRun {
        evo,
        psi0,
        orbit: None,
        rotor,
    }
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn criterion6(r: &mut RotorRun) -> Outcome {
    let q0 = sample_positions(&r.psi0, 1, &mut ChaCha8Rng::seed_from_u64(SEED))[0];
    let orbit = match trace_mb_orbit(&r.evo, q0, &OrbitOptions::default()) {
        Ok(o) => o,
        Err(e) => return outcome(false, format!("MB orbit from q0 = {q0:.6}: {e}")),
    };
    let full = quantum_ks(&orbit, None).unwrap();
    let density = density_decay_ks(&orbit).unwrap();
    let windows = [62.5, 125.0, 250.0, 500.0, 1000.0];
    let ks: Vec<f64> = windows
        .iter()
        .map(|&w| quantum_ks(&orbit, Some((0.0, w))).map_or(f64::NAN, |k| k.k))
        .collect();
    let slope = least_squares_slope(
        &windows.iter().map(|w| w.ln()).collect::<Vec<_>>(),
        &ks.iter().map(|k| k.abs().ln()).collect::<Vec<_>>(),
    );
    let gap = (full.k - density).abs();
    let pass = full.k.abs() <= 0.01 && slope < 0.0 && gap <= 1e-3;
    let detail = format!(
        "q0 = {q0:.4}: k_mb = {:.3e}, k_density = {density:.3e}, gap {gap:.1e}; |k| over 62.5..1000 periods {:?}, log-log slope {slope:.2}",
        full.k,
        ks.iter().map(|k| format!("{:.1e}", k.abs())).collect::<Vec<_>>()
    );
    r.orbit = Some(orbit);
    outcome(pass, detail)
}

fn criterion7(r: &RotorRun) -> Outcome {
    let Some(orbit) = &r.orbit else {
        return outcome(false, "criterion 6 produced no MB orbit");
    };
    let k_mb = quantum_ks(orbit, None).unwrap().k;
    let classical = classical_rotor_orbit(0.5, 0.3, r.rotor, 1000).unwrap();
    let h = match hybrid_ks(&r.evo, &classical, HYBRID_TOLERANCE) {
        Ok(h) => h,
        Err(e) => return outcome(false, format!("hybrid: {e}")),
    };
    let stable = [h.first_half, h.second_half]
        .iter()
        .all(|v| (v - h.k).abs() <= 0.2 * h.k.abs());
    let pass = h.k > 0.0 && stable && k_mb.abs() <= 0.01;
    outcome(
        pass,
        format!(
            "k_hyb = {:.3} (halves {:.3}, {:.3}; {} periods dropped) vs |k_mb| = {:.1e}",
            h.k,
            h.first_half,
            h.second_half,
            h.flagged,
            k_mb.abs()
        ),
    )
}

fn criterion8(r: &RotorRun) -> Outcome {
    let short = r.evo.truncated(50);
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    rng.set_stream(1);
    let q0s = sample_positions(&r.psi0, 100, &mut rng);
    let opts = OrbitOptions {
        tolerance: 1e-6,
        ..Default::default()
    };
    let summary = ensemble_density_decay(&short, &q0s, &opts);
    let kbar = entropy_rate(&short, 0.5 * short.duration()).growth_rate();
    let z = (summary.mean - kbar) / summary.standard_error;
    outcome(
        z.abs() <= 3.0 && summary.failures == 0,
        format!(
            "mean density decay {:.5} ± {:.5} over {} orbits vs entropy rate {kbar:.5}, z = {z:.2}",
            summary.mean,
            summary.standard_error,
            summary.values.len()
        ),
    )
}

fn random_sym(rng: &mut impl Rng, n: usize, scale: f64) -> SymMatrix {
    SymMatrix::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

fn matkernel_properties(rng: &mut ChaCha8Rng) -> Result<(), String> {
    for case in 0..1000 {
        let n = 1 + case % 4;
        let sigma = random_sym(rng, n, 3.0);
        let eig = sym_eigen(&sigma).map_err(|e| e.to_string())?;
        let (sin, cos) = phase_functions_direct(&sigma);
        let sin_exact = eig.reconstruct_with(|s| -2.0 * s / (1.0 + s * s));
        let cos_exact = eig.reconstruct_with(|s| (1.0 - s * s) / (1.0 + s * s));
        if (&sin - &sin_exact).frobenius_norm() > 1e-12 || (&cos - &cos_exact).frobenius_norm() > 1e-12 {
            return Err(format!(
                "case {case}: direct phase functions disagree with the eigen form"
            ));
        }
        if eig.values.iter().all(|v| v.abs() > 1e-3) {
            let (sin_t, cos_t) = phase_functions_inverted(&sigma.inverse().map_err(|e| e.to_string())?);
            let d = (&sin - &sin_t).frobenius_norm() + (&cos - &cos_t).frobenius_norm();
            if d > 1e-8 {
                return Err(format!("case {case}: σ and τ representations differ by {d:.1e}"));
            }
        }
        for m in [&sin, &cos] {
            let bound = sym_eigen(m).map_err(|e| e.to_string())?.values[0]
                .abs()
                .max(sym_eigen(m).map_err(|e| e.to_string())?.values[n - 1].abs());
            if bound > 1.0 + 1e-12 {
                return Err(format!(
                    "case {case}: phase function eigenvalue {bound} outside [−1, 1]"
                ));
            }
        }
    }
    Ok(())
}

fn fd_check(name: &str, eval: &dyn Fn(&[f64]) -> ScalarField, q: &[f64]) -> Result<(), String> {
    let h = 1e-5;
    let ScalarField {
        gradient: grad,
        hessian: hess,
        ..
    } = eval(q);
    let n = q.len();
    for i in 0..n {
        let mut plus = q.to_vec();
        let mut minus = q.to_vec();
        plus[i] += h;
        minus[i] -= h;
        let (fp, fm) = (eval(&plus), eval(&minus));
        let fd = (fp.value - fm.value) / (2.0 * h);
        if (fd - grad[i]).abs() > 1e-6 * grad[i].abs().max(1.0) {
            return Err(format!("{name}: ∂{i} = {} vs {fd} at {q:?}", grad[i]));
        }
        for j in 0..n {
            let fd = (fp.gradient[j] - fm.gradient[j]) / (2.0 * h);
            if (fd - hess.get(i, j)).abs() > 1e-6 * hess.get(i, j).abs().max(1.0) {
                return Err(format!("{name}: ∂{i}∂{j} = {} vs {fd} at {q:?}", hess.get(i, j)));
            }
        }
    }
    Ok(())
}

fn systems_properties(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let potentials: Vec<(&str, Box<dyn Potential>)> = vec![
        ("quartic3", continuous_potential("quartic3", 3, 0.0).unwrap()),
        ("quadratic", continuous_potential("quadratic", 2, 1.7).unwrap()),
        ("inverted-1d", continuous_potential("inverted-1d", 1, 0.0).unwrap()),
    ];
    let kicks = [
        ("kicked-quartic", kick_function("kicked-quartic", 3, 0.0).unwrap()),
        ("rotor", kick_function("rotor", 1, 5.0).unwrap()),
    ];
    for _ in 0..100 {
        for (name, v) in &potentials {
            let q: Vec<f64> = (0..v.dim()).map(|_| rng.random_range(-1.5..1.5)).collect();
            fd_check(name, &|x| v.eval(x, 0.0), &q)?;
        }
        for (name, f) in &kicks {
            let q: Vec<f64> = (0..f.dim()).map(|_| rng.random_range(-1.5..1.5)).collect();
            fd_check(name, &|x| f.eval(x), &q)?;
        }
    }
    Ok(())
}

// Zero-sum is exact at any horizon; pair sums of Gram-Schmidt exponents
// vanish only as 1/t, so a fourfold longer run must at least halve them.
fn pairing_converges(
    name: &str,
    horizon: f64,
    run: impl Fn(f64) -> Result<Spectrum, OracleError>,
) -> Result<(), String> {
    let short = run(horizon).map_err(|e| e.to_string())?;
    let long = run(4.0 * horizon).map_err(|e| e.to_string())?;
    for sp in [&short, &long] {
        if sp.total_sum.abs() > 1e-9 {
            return Err(format!("{name}: total sum {:.2e}", sp.total_sum));
        }
    }
    for (i, ((a, _), (b, _))) in short.pair_sums.iter().zip(&long.pair_sums).enumerate() {
        if b.abs() > 0.5 * a.abs() + 1e-9 {
            return Err(format!(
                "{name}: pair sum {} goes {a:.2e} → {b:.2e} over a 4× longer run",
                i + 1
            ));
        }
    }
    Ok(())
}

fn benettin_properties(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let opts = |horizon: f64, dt: f64| OracleOptions {
        horizon,
        dt,
        renorm_interval: 1.0,
        ..Default::default()
    };
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-0.5..0.5)).collect() };

    let rotor = KickedModel::new(kick_function("rotor", 1, 5.0).unwrap(), 1.0).unwrap();
    let (q, p) = (draw(1), draw(1));
    pairing_converges("rotor", 2500.0, |h| {
        spectrum(OracleSystem::Kicked(&rotor), &q, &p, &opts(h, 1.0))
    })?;

    let quartic = KickedModel::new(kick_function("kicked-quartic", 3, 0.0).unwrap(), 0.05).unwrap();
    let (q, p) = (draw(3), draw(3));
    pairing_converges("kicked-quartic", 2000.0, |h| {
        spectrum(OracleSystem::Kicked(&quartic), &q, &p, &opts(h, 0.05))
    })?;

    let flow = continuous_model("quartic3", 3, 0.0).unwrap();
    let potential = continuous_potential("quartic3", 3, 0.0).unwrap();
    let (q, p) =
        hjks_core::systems::sample_energy_surface(potential.as_ref(), 1.0, 2.0, rng).map_err(|e| e.to_string())?;
    pairing_converges("quartic3", 100.0, |h| {
        spectrum(OracleSystem::Continuous(flow.as_ref()), &q, &p, &opts(h, 1e-3))
    })
}

fn quantum_properties() -> Result<f64, String> {
    let rotor = Rotor {
        strength: 5.0,
        period: 1.0,
    };
    let psi = WaveState::gaussian(2048, 1.0, 1.0, 0.4).map_err(|e| e.to_string())?;
    let drift = unitarity_drift(&psi, rotor, 10_000).map_err(|e| e.to_string())?;
    if drift > 1e-10 {
        return Err(format!("norm drift {drift:.2e} over 1e4 periods"));
    }
    Ok(drift)
}

const DETERMINISM_CONFIGS: [&str; 3] = [
    "engine = \"continuous\"\n[continuous]\nmodel = \"quartic3\"\nenergy = 1.0\nt_max = 20.0\ndt = 1.0e-3\nsample_every = 0.5\n",
    "engine = \"kicked\"\n[kicked]\nmodel = \"kicked-quartic\"\nT = 1.0e-4\nsteps = 20000\nenergy = 1.0\nsample_every = 100\n",
    "engine = \"rotor-quantum\"\n[rotor-quantum]\ngrid = 128\nperiods = 12\norbits = 2\nensemble = 3\nensemble_periods = 10\n",
];

fn determinism(dir: &Path) -> Result<(), String> {
    for (i, text) in DETERMINISM_CONFIGS.iter().enumerate() {
        let mut files = Vec::new();
        for rep in 0..2 {
            let overrides = Overrides {
                seed: Some(7),
                out: Some(dir.join(format!("det{i}_{rep}"))),
                ..Default::default()
            };
            let config = parse_config_with(text, &overrides).map_err(|e| e.to_string())?;
            let m = run(&config, true).map_err(|e| e.to_string())?;
            files.push(m.files);
        }
        if files[0].is_empty() || files[0] != files[1] {
            return Err(format!("config {i}: outputs differ between identical seeded runs"));
        }
    }
    Ok(())
}

fn criterion9(dir: &Path) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut failures = Vec::new();
    let mut note = |label: &str, r: Result<(), String>| {
        if let Err(e) = r {
            failures.push(format!("{label}: {e}"));
        }
    };
    note("matkernel", matkernel_properties(&mut rng));
    note("systems", systems_properties(&mut rng));
    note("benettin", benettin_properties(&mut rng));
    let drift = quantum_properties();
    let drift_text = drift.as_ref().map_or("n/a".to_string(), |d| format!("{d:.1e}"));
    note("quantum", drift.map(|_| ()));
    note("determinism", determinism(dir));
    let kicked_check = run_kicked(
        &KickedModel::new(kick_function("quadratic-kick", 1, -1.0).unwrap(), 1.0).unwrap(),
        &[0.0],
        &[0.0],
        &KickedOptions::default(),
    );
    note("kicked", kicked_check.map(|_| ()).map_err(|e| e.to_string()));
    if failures.is_empty() {
        outcome(
            true,
            format!("1e3 matrix cases, FD derivatives, symplectic pairing, norm drift {drift_text} over 1e4 periods, seeded CSV determinism"),
        )
    } else {
        outcome(false, failures.join("; "))
    }
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        }
    }
}

// `ACCEPTANCE_ONLY=6,7` runs a subset; the rest print SKIP.
fn selected() -> Option<Vec<u32>> {
    let list = std::env::var("ACCEPTANCE_ONLY").ok()?;
    Some(list.split(',').filter_map(|x| x.trim().parse().ok()).collect())
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temporary directory");
    let dir = dir.path();
    let only = selected();
    let wanted = |id: u32| only.as_ref().is_none_or(|l| l.contains(&id));
    let mut unexpected = 0;
    let mut report = |id: u32, name: &str, f: &mut dyn FnMut() -> Outcome| {
        if !wanted(id) {
            println!("SKIP criterion {id} ({name})");
            return;
        }
        let start = Instant::now();
        let o = guarded(f);
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "{status} criterion {id} ({name}, {:.1} s): {}",
            start.elapsed().as_secs_f64(),
            o.detail
        );
        if !o.pass && !EXPECTED_FAILURES.contains(&id) {
            unexpected += 1;
        }
    };

    let mut ex1 = None;
    report(1, "quartic3 flow", &mut || criterion1(dir, &mut ex1));
    report(2, "Riccati vs Benettin", &mut || {
        if ex1.is_none() {
            criterion1(dir, &mut ex1);
        }
        criterion2(ex1.as_ref())
    });
    report(3, "kicked quartic", &mut || criterion3(dir));
    report(4, "analytic Riccati fixtures", &mut || criterion4(dir));
    report(5, "golden kicked map", &mut || criterion5(dir));
    let mut rotor = [6, 7, 8].into_iter().any(wanted).then(rotor_run);
    report(6, "quantum rotor regularity", &mut || {
        criterion6(rotor.as_mut().unwrap())
    });
    report(7, "hybrid contrast", &mut || {
        let r = rotor.as_mut().unwrap();
        if r.orbit.is_none() {
            criterion6(r);
        }
        criterion7(r)
    });
    report(8, "ensemble identity", &mut || criterion8(rotor.as_ref().unwrap()));
    report(9, "property suites", &mut || criterion9(dir));

    if unexpected > 0 {
        println!("{unexpected} unexpected failure(s)");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
