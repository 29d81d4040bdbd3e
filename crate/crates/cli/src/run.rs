//! Executes a validated [`RunConfig`] and writes its outputs.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use hjks_core::benettin::{spectrum, OracleOptions, OracleSystem};
use hjks_core::kicked::{run_kicked, KickedEstimate, KickedOptions};
use hjks_core::quantum::{
    classical_rotor_orbit, ensemble_density_decay, entropy_rate, evolve, hybrid_ks, quantum_ks, sample_positions,
    trace_mb_orbit, OrbitOptions, QuantumError, QuantumKsEstimate, Rotor, WaveState,
};
use hjks_core::riccati::{evolve_ks, EvolveOptions, KsEstimate};
use hjks_core::systems::{
    continuous_model, continuous_potential, kick_function, sample_energy_surface, sample_kicked_surface, KickedModel,
    ModelError,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::{
    ContinuousSettings, InitialCondition, KickedSettings, OracleSettings, OracleTarget, OrbitStarts, QuantumSettings,
    RotorInitial, RunConfig, Settings,
};
use crate::manifest::{RunManifest, RunStatus};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIAGNOSTIC: i32 = 3;

pub fn exit_code(manifest: &RunManifest) -> i32 {
    match manifest.status {
        RunStatus::Ok => EXIT_OK,
        RunStatus::DiagnosticFailure => EXIT_DIAGNOSTIC,
    }
}

/// Progress lines go to stderr unless `quiet`.
pub(crate) struct Log {
    pub quiet: bool,
}

impl Log {
    pub fn line(&self, text: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", text.as_ref());
        }
    }
}

/// Runs the configured engine, writes CSV series and `manifest.json` into
/// `config.out`, and returns the manifest. Engine failures are recorded in
/// the manifest; only I/O problems are returned as errors.
pub fn run(config: &RunConfig, quiet: bool) -> io::Result<RunManifest> {
    let log = Log { quiet };
    let dir = config.out.as_path();
    fs::create_dir_all(dir)?;
    let echo = serde_json::to_value(config).map_err(io::Error::other)?;
    let mut m = RunManifest::new(config.engine.name(), config.seed, echo);
    let start = Instant::now();
    match &config.settings {
        Settings::Continuous(s) => run_continuous(s, config.seed, dir, &mut m, &log)?,
        Settings::Kicked(s) => run_kicked_engine(s, config.seed, dir, &mut m, &log)?,
        Settings::Oracle(s) => run_oracle(s, config.seed, dir, &mut m, &log)?,
        Settings::RotorQuantum(s) => run_quantum(s, config.seed, dir, &mut m, &log)?,
        Settings::Bench(s) => crate::bench::run_bench(s, config.seed, dir, &mut m, &log)?,
    }
    m.wall_time_seconds = start.elapsed().as_secs_f64();
    m.write(dir)?;
    Ok(m)
}

fn write_file(
    dir: &Path,
    name: &str,
    m: &mut RunManifest,
    body: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(dir.join(name))?);
    body(&mut w)?;
    w.flush()?;
    drop(w);
    m.record_file(dir, name)
}

fn initial_state(
    initial: &InitialCondition,
    seed: u64,
    draw: impl FnOnce(f64, f64, &mut ChaCha8Rng) -> Result<(Vec<f64>, Vec<f64>), ModelError>,
) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    match initial {
        InitialCondition::Explicit { q, p } => Ok((q.clone(), p.clone())),
        InitialCondition::EnergySurface { energy, half_width } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            draw(*energy, *half_width, &mut rng)
        }
    }
}

fn continuous_initial(s: &ContinuousSettings, seed: u64) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    initial_state(&s.initial, seed, |energy, half_width, rng| {
        let potential = continuous_potential(&s.model, s.dim, s.param)?;
        sample_energy_surface(potential.as_ref(), energy, half_width, rng)
    })
}

fn kicked_model(s: &KickedSettings) -> Result<KickedModel, ModelError> {
    KickedModel::new(kick_function(&s.model, s.dim, s.param)?, s.period)
}

fn kicked_initial(s: &KickedSettings, model: &KickedModel, seed: u64) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    initial_state(&s.initial, seed, |energy, half_width, rng| {
        sample_kicked_surface(model, energy, half_width, rng)
    })
}

fn record_initial(m: &mut RunManifest, q: &[f64], p: &[f64]) {
    m.detail("initial_state", json!({ "q": q, "p": p }));
}

fn report_continuous(est: &KsEstimate, dir: &Path, m: &mut RunManifest) -> io::Result<()> {
    m.estimate("k", est.k, None);
    m.estimate("k_trailing", est.k_trailing, None);
    m.estimate("elapsed", est.elapsed, None);
    if let Some(drift) = est.max_energy_drift {
        m.estimate("max_energy_drift", drift, None);
    }
    m.event("poles", est.pole_count());
    m.event("chart_switches", est.switch_count as u64);
    m.event("steps", est.steps);
    write_file(dir, "series.csv", m, |w| est.write_csv(w))?;
    write_file(dir, "poles.csv", m, |w| {
        writeln!(w, "t,slot,sign")?;
        for e in &est.poles {
            writeln!(w, "{:.10e},{},{}", e.time, e.slot, e.sign)?;
        }
        Ok(())
    })
}

fn run_continuous(s: &ContinuousSettings, seed: u64, dir: &Path, m: &mut RunManifest, log: &Log) -> io::Result<()> {
    let prepared =
        continuous_model(&s.model, s.dim, s.param).and_then(|model| Ok((model, continuous_initial(s, seed)?)));
    let (model, (q, p)) = match prepared {
        Ok(x) => x,
        Err(e) => {
            m.fail(e.to_string());
            return Ok(());
        }
    };
    record_initial(m, &q, &p);
    log.line(format!("continuous: {} to t = {} with dt = {}", s.model, s.t_max, s.dt));
    let opts = EvolveOptions {
        t_max: s.t_max,
        dt: s.dt,
        sample_every: s.sample_every,
        switch_threshold: s.switch_threshold,
        escape_bound: s.escape_bound,
    };
    match evolve_ks(model.as_ref(), &q, &p, &opts) {
        Ok(est) => report_continuous(&est, dir, m),
        Err(e) => {
            if let Some(partial) = e.partial() {
                report_continuous(partial, dir, m)?;
            }
            m.fail(e.to_string());
            Ok(())
        }
    }
}

fn report_kicked(est: &KickedEstimate, dir: &Path, m: &mut RunManifest) -> io::Result<()> {
    m.estimate("k", est.k, None);
    m.estimate("k_trailing", est.k_trailing, None);
    m.estimate("ks_sum", est.ks_sum, None);
    m.event("steps", est.steps);
    m.event("sign_flips", est.sign_flips.len() as u64);
    write_file(dir, "series.csv", m, |w| est.write_csv(w))
}

fn run_kicked_engine(s: &KickedSettings, seed: u64, dir: &Path, m: &mut RunManifest, log: &Log) -> io::Result<()> {
    let prepared = kicked_model(s).and_then(|model| {
        let state = kicked_initial(s, &model, seed)?;
        Ok((model, state))
    });
    let (model, (q, p)) = match prepared {
        Ok(x) => x,
        Err(e) => {
            m.fail(e.to_string());
            return Ok(());
        }
    };
    record_initial(m, &q, &p);
    log.line(format!(
        "kicked: {} for {} kicks with T = {:e}",
        s.model, s.steps, s.period
    ));
    let opts = KickedOptions {
        steps: s.steps,
        sample_every: s.sample_every,
        escape_bound: s.escape_bound,
    };
    match run_kicked(&model, &q, &p, &opts) {
        Ok(est) => report_kicked(&est, dir, m),
        Err(e) => {
            if let Some(partial) = e.partial() {
                report_kicked(partial, dir, m)?;
            }
            m.fail(e.to_string());
            Ok(())
        }
    }
}

fn run_oracle(s: &OracleSettings, seed: u64, dir: &Path, m: &mut RunManifest, log: &Log) -> io::Result<()> {
    let result = match &s.target {
        OracleTarget::Continuous(c) => {
            let prepared =
                continuous_model(&c.model, c.dim, c.param).and_then(|model| Ok((model, continuous_initial(c, seed)?)));
            match prepared {
                Err(e) => Err(e.to_string()),
                Ok((model, (q, p))) => {
                    record_initial(m, &q, &p);
                    log.line(format!("oracle: {} to t = {}", c.model, c.t_max));
                    let opts = OracleOptions {
                        horizon: c.t_max,
                        dt: c.dt,
                        renorm_interval: s.renorm_interval,
                        sample_every: c.sample_every,
                        escape_bound: c.escape_bound,
                    };
                    spectrum(OracleSystem::Continuous(model.as_ref()), &q, &p, &opts).map_err(|e| e.to_string())
                }
            }
        }
        OracleTarget::Kicked(k) => {
            let prepared = kicked_model(k).and_then(|model| {
                let state = kicked_initial(k, &model, seed)?;
                Ok((model, state))
            });
            match prepared {
                Err(e) => Err(e.to_string()),
                Ok((model, (q, p))) => {
                    record_initial(m, &q, &p);
                    log.line(format!("oracle: {} for {} kicks", k.model, k.steps));
                    let opts = OracleOptions {
                        horizon: k.steps as f64,
                        dt: k.period,
                        renorm_interval: s.renorm_interval,
                        sample_every: k.sample_every as f64,
                        escape_bound: k.escape_bound,
                    };
                    spectrum(OracleSystem::Kicked(&model), &q, &p, &opts).map_err(|e| e.to_string())
                }
            }
        }
    };
    let sp = match result {
        Ok(sp) => sp,
        Err(e) => {
            m.fail(e);
            return Ok(());
        }
    };
    m.estimate("k_oracle", sp.k_oracle, Some(sp.k_error));
    m.estimate("total_sum", sp.total_sum, None);
    for (i, (l, e)) in sp.exponents.iter().zip(&sp.errors).enumerate() {
        m.estimate(format!("lambda{}", i + 1), *l, Some(*e));
    }
    for (i, (v, e)) in sp.pair_sums.iter().enumerate() {
        m.estimate(format!("pair_sum{}", i + 1), *v, Some(*e));
    }
    m.estimate("final_renorm_interval", sp.final_interval, None);
    m.event("renormalizations", sp.renorm_count);
    write_file(dir, "spectrum.csv", m, |w| sp.write_csv(w))
}

fn rotor_state(s: &QuantumSettings) -> Result<WaveState, QuantumError> {
    match s.initial {
        RotorInitial::Uniform => WaveState::uniform(s.grid, s.hbar),
        RotorInitial::Gaussian { center, width } => WaveState::gaussian(s.grid, s.hbar, center, width),
        RotorInitial::PlaneWave { m } => WaveState::plane_wave(s.grid, s.hbar, m),
    }
}

fn run_quantum(s: &QuantumSettings, seed: u64, dir: &Path, m: &mut RunManifest, log: &Log) -> io::Result<()> {
    let rotor = Rotor {
        strength: s.strength,
        period: s.period,
    };
    let prepared = rotor_state(s).and_then(|psi0| Ok((evolve(&psi0, rotor, s.periods, s.substeps)?, psi0)));
    let (evo, psi0) = match prepared {
        Ok(x) => x,
        Err(e) => {
            m.fail(e.to_string());
            return Ok(());
        }
    };
    log.line(format!(
        "rotor-quantum: {} periods on {} points, K = {}, hbar = {}",
        s.periods, s.grid, s.strength, s.hbar
    ));
    m.estimate("norm_drift", evo.norm_drift, None);
    let rate = entropy_rate(&evo, 0.5 * evo.duration());
    m.estimate("entropy_growth_rate", rate.growth_rate(), None);
    if let (Some(slope), Some(over_t)) = (rate.kbar_slope.last(), rate.kbar_over_t.last()) {
        m.estimate("kbar_slope", *slope, None);
        m.estimate("kbar_over_t", *over_t, None);
    }
    write_file(dir, "entropy.csv", m, |w| rate.write_csv(w))?;
    if s.record {
        write_file(dir, "evolution.bin", m, |w| evo.write_record(w))?;
    }

    let opts = OrbitOptions {
        substeps: s.substeps,
        tolerance: s.tolerance,
    };
    let starts = match &s.orbits {
        OrbitStarts::Explicit(q0) => q0.clone(),
        OrbitStarts::Sampled(n) => sample_positions(&psi0, *n, &mut ChaCha8Rng::seed_from_u64(seed)),
    };
    let mut node_failures = 0;
    let mut failure = None;
    let mut max_abs = 0.0_f64;
    for (i, &q0) in starts.iter().enumerate() {
        log.line(format!("  MB orbit {i} from q0 = {q0:.6}"));
        let name = format!("orbit_{i:03}.csv");
        match trace_mb_orbit(&evo, q0, &opts) {
            Ok(orbit) => {
                write_file(dir, &name, m, |w| orbit.write_csv(w))?;
                m.estimate(format!("orbit{i}.identity_residual"), orbit.identity_residual(), None);
                match QuantumKsEstimate::from_orbit(&orbit) {
                    Ok(k) => {
                        m.estimate(format!("orbit{i}.k_mb"), k.k_mb, None);
                        m.estimate(format!("orbit{i}.k_density"), k.k_density, None);
                        max_abs = max_abs.max(k.k_mb.abs());
                    }
                    Err(e) => failure = Some(format!("orbit {i}: {e}")),
                }
                for (j, fraction) in [0.0625, 0.125, 0.25, 0.5].iter().enumerate() {
                    if let Ok(w) = quantum_ks(&orbit, Some((0.0, fraction * orbit.duration()))) {
                        m.estimate(format!("orbit{i}.k_mb_window{j}"), w.k, None);
                    }
                }
            }
            Err(QuantumError::Node { t, partial, .. }) => {
                node_failures += 1;
                write_file(dir, &name, m, |w| partial.write_csv(w))?;
                failure = Some(format!("orbit {i} from q0 = {q0:.6} reached a node at t = {t:.6}"));
            }
            Err(e) => failure = Some(format!("orbit {i}: {e}")),
        }
    }
    m.detail("orbit_starts", json!(starts));
    if !starts.is_empty() {
        m.estimate("max_abs_k_mb", max_abs, None);
    }
    m.event("node_failures", node_failures);

    if let Some((q0, p0)) = s.hybrid {
        log.line(format!("  hybrid along the classical orbit from ({q0}, {p0})"));
        let hybrid =
            classical_rotor_orbit(q0, p0, rotor, s.periods).and_then(|c| hybrid_ks(&evo, &c, s.hybrid_tolerance));
        match hybrid {
            Ok(h) => {
                m.estimate("hybrid.k", h.k, None);
                m.estimate("hybrid.first_half", h.first_half, None);
                m.estimate("hybrid.second_half", h.second_half, None);
                m.event("hybrid_flagged_periods", h.flagged as u64);
                m.detail("hybrid_low_confidence", json!(h.low_confidence));
                write_file(dir, "hybrid.csv", m, |w| {
                    writeln!(w, "t,lapS_mean")?;
                    for (t, v) in &h.series {
                        writeln!(w, "{t:.10e},{v:.12e}")?;
                    }
                    Ok(())
                })?;
            }
            Err(e) => failure = Some(format!("hybrid: {e}")),
        }
    }

    if s.ensemble > 0 {
        log.line(format!(
            "  ensemble of {} MB orbits over {} periods",
            s.ensemble, s.ensemble_periods
        ));
        let short = evo.truncated(s.ensemble_periods);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let q0s = sample_positions(&psi0, s.ensemble, &mut rng);
        let ens_opts = OrbitOptions {
            substeps: s.substeps,
            tolerance: s.ensemble_tolerance,
        };
        let summary = ensemble_density_decay(&short, &q0s, &ens_opts);
        let kbar = entropy_rate(&short, 0.5 * short.duration()).growth_rate();
        m.estimate("ensemble.mean_k_density", summary.mean, Some(summary.standard_error));
        m.estimate("ensemble.kbar", kbar, None);
        m.estimate("ensemble.z_score", (summary.mean - kbar) / summary.standard_error, None);
        m.event("ensemble_failures", summary.failures as u64);
        write_file(dir, "ensemble.csv", m, |w| {
            writeln!(w, "index,k_density")?;
            for (i, v) in summary.values.iter().enumerate() {
                writeln!(w, "{i},{v:.12e}")?;
            }
            Ok(())
        })?;
    }
    if let Some(f) = failure {
        m.fail(f);
    }
    Ok(())
}
