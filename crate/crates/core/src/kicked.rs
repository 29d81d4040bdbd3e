//! Discrete-time KS engine for systems that move freely between kicks.
//!
//! Between kicks σ solves σ̇ + σ² = 0 exactly, σ(t) = (t − nT + σₙ⁻¹)⁻¹, and
//! each kick subtracts ∇∇f. That gives the iteration
//!
//! ```text
//! σₙ₊₁ = σₙ(I + Tσₙ)⁻¹ − ∇∇f(qₙ₊₁)
//! ```
//!
//! and the KS invariant k = lim (NT)⁻¹ Σₙ ln|det(I + Tσₙ)|.

use std::io::{self, Write};

use thiserror::Error;

use crate::integrate::CompensatedSum;
use crate::matkernel::{MatError, Matrix, SymMatrix};
use crate::riccati::DEFAULT_ESCAPE_BOUND;
use crate::systems::{KickedModel, ScalarField};

#[derive(Debug, Error)]
pub enum KickedError {
    #[error("I + Tσ is singular at kick {n}: a pole of σ falls exactly on a kick")]
    Degenerate { n: u64, partial: Box<KickedEstimate> },
    #[error("orbit escaped at kick {n} (|state| = {norm:.3e})")]
    Escape {
        n: u64,
        norm: f64,
        partial: Box<KickedEstimate>,
    },
    #[error("non-finite state at kick {n}")]
    NonFinite { n: u64, partial: Box<KickedEstimate> },
    #[error("initial condition has dimension {actual}, model has {expected}")]
    Dimension { expected: usize, actual: usize },
    #[error("invalid options: {0}")]
    InvalidOptions(String),
}

impl KickedError {
    pub fn partial(&self) -> Option<&KickedEstimate> {
        match self {
            Self::Degenerate { partial, .. } | Self::Escape { partial, .. } | Self::NonFinite { partial, .. } => {
                Some(partial)
            }
            _ => None,
        }
    }
}

/// Orbit and σ just after kick `n`.
#[derive(Debug, Clone)]
pub struct KickedState {
    pub n: u64,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub sigma: SymMatrix,
    ks: CompensatedSum,
    /// Kicks whose free flight crossed an odd number of σ poles.
    pub sign_flips: Vec<u64>,
}

impl KickedState {
    pub fn new(q0: &[f64], p0: &[f64]) -> Self {
        Self {
            n: 0,
            q: q0.to_vec(),
            p: p0.to_vec(),
            sigma: SymMatrix::zeros(q0.len()),
            ks: CompensatedSum::default(),
            sign_flips: Vec::new(),
        }
    }

    /// Σ ln|det(I + Tσₘ)| over the kicks taken so far.
    pub fn ks_sum(&self) -> f64 {
        self.ks.value()
    }
}

/// Orbit map over one period: qₙ₊₁ = qₙ + pₙT, pₙ₊₁ = pₙ − ∇f(qₙ₊₁).
/// Returns the kick field at qₙ₊₁.
pub fn orbit_step(q: &mut [f64], p: &mut [f64], model: &KickedModel) -> ScalarField {
    let t = model.period;
    for (qi, pi) in q.iter_mut().zip(p.iter()) {
        *qi += pi * t;
    }
    let f = model.kick.eval(q);
    for (pi, g) in p.iter_mut().zip(&f.gradient) {
        *pi -= g;
    }
    f
}

/// One period: free flight, then the kick. Returns ln|det(I + Tσₙ)|.
pub fn kick_step(state: &mut KickedState, model: &KickedModel) -> Result<f64, MatError> {
    let n = state.q.len();
    let t = model.period;
    let sigma = state.sigma.to_dense();
    let m = &Matrix::identity(n) + &sigma.scale(t);
    let lu = m.lu();
    let (log_det, sign) = lu.log_abs_det()?;
    // σ and I + Tσ commute, so σ(I + Tσ)⁻¹ = (I + Tσ)⁻¹σ
    let flown = SymMatrix::symmetric_part(&lu.solve(&sigma)?);

    let f = orbit_step(&mut state.q, &mut state.p, model);
    state.sigma = &flown - &f.hessian;
    if sign < 0.0 {
        state.sign_flips.push(state.n);
    }
    state.ks.add(log_det);
    state.n += 1;
    Ok(log_det)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KickedSample {
    pub n: u64,
    pub t: f64,
    pub k_running: f64,
    pub log_det_increment: f64,
}

#[derive(Debug, Clone)]
pub struct KickedEstimate {
    pub steps: u64,
    pub period: f64,
    pub ks_sum: f64,
    /// ks_sum / (N T).
    pub k: f64,
    /// Rate over the second half of the run.
    pub k_trailing: f64,
    pub samples: Vec<KickedSample>,
    pub sign_flips: Vec<u64>,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub sigma: SymMatrix,
}

impl KickedEstimate {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "n,t,k_running,log_det_increment")?;
        for s in &self.samples {
            writeln!(
                w,
                "{},{:.10e},{:.12e},{:.12e}",
                s.n, s.t, s.k_running, s.log_det_increment
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct KickedOptions {
    pub steps: u64,
    /// Sample stride in kicks; 0 disables the series.
    pub sample_every: u64,
    pub escape_bound: f64,
}

impl Default for KickedOptions {
    fn default() -> Self {
        Self {
            steps: 1000,
            sample_every: 0,
            escape_bound: DEFAULT_ESCAPE_BOUND,
        }
    }
}

/// Iterates [`kick_step`] from σ₀ = 0.
pub fn run_kicked(
    model: &KickedModel,
    q0: &[f64],
    p0: &[f64],
    opts: &KickedOptions,
) -> Result<KickedEstimate, KickedError> {
    let dim = model.dim();
    if q0.len() != dim || p0.len() != dim {
        return Err(KickedError::Dimension {
            expected: dim,
            actual: q0.len().max(p0.len()),
        });
    }
    if opts.steps == 0 {
        return Err(KickedError::InvalidOptions("steps must be at least 1".into()));
    }
    let period = model.period;
    let half = opts.steps / 2;
    let mut state = KickedState::new(q0, p0);
    let mut half_sum = 0.0;
    let mut samples = Vec::new();

    let finish = |state: &KickedState, samples: Vec<KickedSample>, half_sum: f64| {
        let n = state.n;
        let sum = state.ks_sum();
        let elapsed = n as f64 * period;
        let tail = n.saturating_sub(half) as f64 * period;
        KickedEstimate {
            steps: n,
            period,
            ks_sum: sum,
            k: if n > 0 { sum / elapsed } else { 0.0 },
            k_trailing: if n > half { (sum - half_sum) / tail } else { 0.0 },
            samples,
            sign_flips: state.sign_flips.clone(),
            q: state.q.clone(),
            p: state.p.clone(),
            sigma: state.sigma.clone(),
        }
    };

    if opts.sample_every > 0 {
        samples.push(KickedSample {
            n: 0,
            t: 0.0,
            k_running: 0.0,
            log_det_increment: 0.0,
        });
    }
    while state.n < opts.steps {
        let increment = match kick_step(&mut state, model) {
            Ok(x) => x,
            Err(MatError::Singular) => {
                let n = state.n;
                return Err(KickedError::Degenerate {
                    n,
                    partial: Box::new(finish(&state, samples, half_sum)),
                });
            }
            Err(_) => {
                let n = state.n;
                return Err(KickedError::NonFinite {
                    n,
                    partial: Box::new(finish(&state, samples, half_sum)),
                });
            }
        };
        let n = state.n;
        if !(state.q.iter().chain(&state.p).all(|v| v.is_finite()) && state.sigma.is_finite()) {
            return Err(KickedError::NonFinite {
                n,
                partial: Box::new(finish(&state, samples, half_sum)),
            });
        }
        let norm = model.excursion(&state.q, &state.p);
        if norm > opts.escape_bound {
            return Err(KickedError::Escape {
                n,
                norm,
                partial: Box::new(finish(&state, samples, half_sum)),
            });
        }
        if n == half {
            half_sum = state.ks_sum();
        }
        if opts.sample_every > 0 && (n.is_multiple_of(opts.sample_every) || n == opts.steps) {
            let t = n as f64 * period;
            samples.push(KickedSample {
                n,
                t,
                k_running: state.ks_sum() / t,
                log_det_increment: increment,
            });
        }
    }
    Ok(finish(&state, samples, half_sum))
}
