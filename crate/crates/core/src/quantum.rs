//! Quantum kicked rotor and its Madelung-Bohm (MB) orbits.
//!
//! ψ lives on M equispaced points of [0, 2π) with ∑|ψ|²Δq = 1. A period is
//! free flight, exact in the momentum basis (p = ħm), followed by the kick
//! ψ → exp(−iK cos q/ħ)ψ. Writing ψ = exp(iS/ħ + R), MB orbits follow
//! q̇ = ∂S/∂q, and along them d ln|ψ|²/dt = −∂²S/∂q². The per-orbit quantum
//! KS invariant is the time average of ∂²S.
//!
//! Within a period ψ(q, t) = Σ cₘ exp(−iħm²τ/2) exp(imq) is known exactly
//! from the coefficients just after the previous kick, so orbits read the
//! field at any RK4 stage time directly from those coefficients.

use std::f64::consts::{PI, TAU};
use std::io::{self, Read, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::integrate::DormandPrince;
use crate::kicked::orbit_step;
use crate::systems::{KickedModel, RotorKick};

/// Density below this fraction of the peak counts as a node.
pub const NODE_EPSILON: f64 = 1e-12;
pub const DEFAULT_SUBSTEPS: usize = 32;
/// Shortest averaging window accepted by [`quantum_ks`], in periods.
pub const MIN_WINDOW_PERIODS: f64 = 10.0;
/// Local error tolerance of the quadrature in [`hybrid_ks`].
pub const HYBRID_TOLERANCE: f64 = 1e-6;
/// Modes whose |cₘ| falls below this fraction of the largest are
/// dropped from off-grid evaluation.
const BAND_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum QuantumError {
    #[error("grid size {0} is not a power of two")]
    GridSize(usize),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("orbit from q0 = {q0:.6} reached a node at t = {t:.6}")]
    Node { q0: f64, t: f64, partial: Box<MbOrbit> },
    #[error("averaging window of {periods:.2} periods is shorter than the minimum {MIN_WINDOW_PERIODS}")]
    WindowTooShort { periods: f64 },
    #[error("window contains node-flagged samples")]
    FlaggedWindow,
    #[error("orbit endpoint at t = {t:.6} sits on a node")]
    EndpointAtNode { t: f64 },
    #[error("evolution record: {0}")]
    Record(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// H = p²/2 + K cos q Σδ(t − nT).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotor {
    pub strength: f64,
    pub period: f64,
}

impl Default for Rotor {
    fn default() -> Self {
        Self {
            strength: 5.0,
            period: 1.0,
        }
    }
}

fn check_grid(len: usize) -> Result<(), QuantumError> {
    if len < 2 || !len.is_power_of_two() {
        return Err(QuantumError::GridSize(len));
    }
    Ok(())
}

fn check_positive(name: &str, x: f64) -> Result<(), QuantumError> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(QuantumError::Parameter(format!("{name} must be positive, got {x}")));
    }
    Ok(())
}

/// Integer wavenumber of FFT bin `k`.
fn wavenumber(k: usize, len: usize) -> i64 {
    if k < len / 2 {
        k as i64
    } else {
        k as i64 - len as i64
    }
}

/// Wavefunction sampled on the grid.
#[derive(Debug, Clone)]
pub struct WaveState {
    pub hbar: f64,
    pub t: f64,
    amplitudes: Vec<Complex64>,
    norm: f64,
}

impl WaveState {
    /// Samples `f` on the grid and normalizes.
    pub fn from_fn(len: usize, hbar: f64, f: impl Fn(f64) -> Complex64) -> Result<Self, QuantumError> {
        check_grid(len)?;
        check_positive("hbar", hbar)?;
        let dq = TAU / len as f64;
        let amplitudes: Vec<Complex64> = (0..len).map(|j| f(j as f64 * dq)).collect();
        let norm = grid_norm(&amplitudes);
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(QuantumError::Parameter(
                "wavefunction has zero or non-finite norm".into(),
            ));
        }
        let scale = norm.sqrt().recip();
        let amplitudes = amplitudes.into_iter().map(|a| a * scale).collect();
        Ok(Self {
            hbar,
            t: 0.0,
            amplitudes,
            norm: 1.0,
        })
    }

    pub fn uniform(len: usize, hbar: f64) -> Result<Self, QuantumError> {
        Self::from_fn(len, hbar, |_| Complex64::new(1.0, 0.0))
    }

    pub fn plane_wave(len: usize, hbar: f64, m: i64) -> Result<Self, QuantumError> {
        Self::from_fn(len, hbar, |q| Complex64::from_polar(1.0, m as f64 * q))
    }

    /// Real Gaussian of position width `width` centred at `center`,
    /// summed over the nearest periodic images.
    pub fn gaussian(len: usize, hbar: f64, center: f64, width: f64) -> Result<Self, QuantumError> {
        check_positive("width", width)?;
        Self::from_fn(len, hbar, |q| {
            let s: f64 = (-3..=3)
                .map(|k| {
                    let d = q - center + k as f64 * TAU;
                    (-d * d / (4.0 * width * width)).exp()
                })
                .sum();
            Complex64::new(s, 0.0)
        })
    }

    /// Takes amplitudes as given, without renormalizing.
    pub fn from_amplitudes(amplitudes: Vec<Complex64>, hbar: f64, t: f64) -> Result<Self, QuantumError> {
        check_grid(amplitudes.len())?;
        check_positive("hbar", hbar)?;
        let norm = grid_norm(&amplitudes);
        Ok(Self {
            hbar,
            t,
            amplitudes,
            norm,
        })
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn dq(&self) -> f64 {
        TAU / self.len() as f64
    }

    pub fn position(&self, j: usize) -> f64 {
        j as f64 * self.dq()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    /// ∑|ψ|²Δq as of the last step.
    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn density(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    fn refresh_norm(&mut self) {
        self.norm = grid_norm(&self.amplitudes);
    }
}

fn grid_norm(a: &[Complex64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>() * TAU / a.len() as f64
}

/// −∑|ψ|² ln|ψ|² Δq with 0·ln 0 = 0.
pub fn position_entropy(state: &WaveState) -> f64 {
    entropy_of(&state.amplitudes)
}

fn entropy_of(a: &[Complex64]) -> f64 {
    let dq = TAU / a.len() as f64;
    -a.iter()
        .map(|z| {
            let d = z.norm_sqr();
            if d > 0.0 {
                d * d.ln()
            } else {
                0.0
            }
        })
        .sum::<f64>()
        * dq
}

/// FFT plans and kick phases for one grid size, ħ and rotor.
pub struct Propagator {
    len: usize,
    hbar: f64,
    rotor: Rotor,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    kick_phase: Vec<Complex64>,
    buf: Vec<Complex64>,
}

impl Propagator {
    pub fn new(len: usize, hbar: f64, rotor: Rotor) -> Result<Self, QuantumError> {
        check_grid(len)?;
        check_positive("hbar", hbar)?;
        check_positive("period", rotor.period)?;
        if !rotor.strength.is_finite() {
            return Err(QuantumError::Parameter("kick strength must be finite".into()));
        }
        let mut planner = FftPlanner::new();
        let dq = TAU / len as f64;
        let kick_phase = (0..len)
            .map(|j| Complex64::from_polar(1.0, -rotor.strength * (j as f64 * dq).cos() / hbar))
            .collect();
        Ok(Self {
            len,
            hbar,
            rotor,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
            kick_phase,
            buf: vec![Complex64::default(); len],
        })
    }

    pub fn rotor(&self) -> Rotor {
        self.rotor
    }

    fn check_state(&self, state: &WaveState) -> Result<(), QuantumError> {
        if state.len() != self.len || state.hbar != self.hbar {
            return Err(QuantumError::Parameter(format!(
                "state (M = {}, hbar = {}) does not match propagator (M = {}, hbar = {})",
                state.len(),
                state.hbar,
                self.len,
                self.hbar
            )));
        }
        Ok(())
    }

    /// Fourier coefficients cₘ with ψ(q) = Σ cₘ e^{imq}, in FFT bin order.
    pub fn coefficients(&mut self, psi: &[Complex64]) -> Vec<Complex64> {
        self.buf.copy_from_slice(psi);
        self.forward.process(&mut self.buf);
        let scale = 1.0 / self.len as f64;
        self.buf.iter().map(|c| c * scale).collect()
    }

    pub fn synthesize(&mut self, coeffs: &[Complex64]) -> Vec<Complex64> {
        self.buf.copy_from_slice(coeffs);
        self.inverse.process(&mut self.buf);
        self.buf.clone()
    }

    fn free_phase(&self, k: usize, tau: f64) -> Complex64 {
        let m = wavenumber(k, self.len) as f64;
        Complex64::from_polar(1.0, -0.5 * self.hbar * m * m * tau)
    }

    /// Exact free flight over `tau`.
    pub fn free_flight(&mut self, state: &mut WaveState, tau: f64) {
        self.buf.copy_from_slice(&state.amplitudes);
        self.forward.process(&mut self.buf);
        let scale = 1.0 / self.len as f64;
        for k in 0..self.len {
            let phase = self.free_phase(k, tau);
            self.buf[k] *= phase * scale;
        }
        self.inverse.process(&mut self.buf);
        state.amplitudes.copy_from_slice(&self.buf);
        state.t += tau;
        state.refresh_norm();
    }

    pub fn kick(&self, state: &mut WaveState) {
        for (a, k) in state.amplitudes.iter_mut().zip(&self.kick_phase) {
            *a *= k;
        }
        state.refresh_norm();
    }

    /// One period in `substeps` free-flight pieces followed by the kick;
    /// `on_substep` sees the state after every piece (the last one before
    /// the kick).
    pub fn period_with(&mut self, state: &mut WaveState, substeps: usize, mut on_substep: impl FnMut(&WaveState)) {
        let tau = self.rotor.period / substeps.max(1) as f64;
        for _ in 0..substeps.max(1) {
            self.free_flight(state, tau);
            on_substep(state);
        }
        self.kick(state);
    }

    pub fn period(&mut self, state: &mut WaveState) {
        self.free_flight(state, self.rotor.period);
        self.kick(state);
    }
}

/// One kick period applied to a copy of `state`.
pub fn split_step(state: &WaveState, rotor: &Rotor, substeps: usize) -> Result<WaveState, QuantumError> {
    let mut prop = Propagator::new(state.len(), state.hbar, *rotor)?;
    let mut next = state.clone();
    prop.period_with(&mut next, substeps, |_| {});
    Ok(next)
}

/// Velocity ∂S, curvature ∂²S and ln|ψ|² on the grid.
#[derive(Debug, Clone)]
pub struct MadelungFields {
    pub v: Vec<f64>,
    pub lap_s: Vec<f64>,
    pub logdens: Vec<f64>,
    /// False where |ψ|² < NODE_EPSILON · max|ψ|².
    pub valid: Vec<bool>,
}

/// Spectral Madelung fields of `state`.
pub fn madelung_fields(state: &WaveState) -> MadelungFields {
    let len = state.len();
    let mut planner = FftPlanner::new();
    let forward = planner.plan_fft_forward(len);
    let inverse = planner.plan_fft_inverse(len);
    let mut c = state.amplitudes.clone();
    forward.process(&mut c);
    let scale = 1.0 / len as f64;
    let mut d1: Vec<Complex64> = (0..len)
        .map(|k| c[k] * Complex64::new(0.0, wavenumber(k, len) as f64 * scale))
        .collect();
    let mut d2: Vec<Complex64> = (0..len)
        .map(|k| {
            let m = wavenumber(k, len) as f64;
            c[k] * (-m * m * scale)
        })
        .collect();
    inverse.process(&mut d1);
    inverse.process(&mut d2);
    let density = state.density();
    let peak = density.iter().cloned().fold(0.0, f64::max);
    let mut fields = MadelungFields {
        v: Vec::with_capacity(len),
        lap_s: Vec::with_capacity(len),
        logdens: Vec::with_capacity(len),
        valid: Vec::with_capacity(len),
    };
    for j in 0..len {
        let psi = state.amplitudes[j];
        let ok = density[j] >= NODE_EPSILON * peak && density[j] > 0.0;
        let (v, lap) = if ok {
            let r1 = d1[j] / psi;
            let r2 = d2[j] / psi;
            (state.hbar * r1.im, state.hbar * (r2 - r1 * r1).im)
        } else {
            (f64::NAN, f64::NAN)
        };
        fields.v.push(v);
        fields.lap_s.push(lap);
        fields.logdens.push(density[j].ln());
        fields.valid.push(ok);
    }
    fields
}

/// Fields at one off-grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointField {
    pub density: f64,
    pub v: f64,
    pub lap_s: f64,
    pub logdens: f64,
}

/// Σ cₘ exp(i(mq − am²/2)) and its first two q-derivatives for
/// m = m_lo, m_lo + 1, …; a = ħτ is the free-flight phase.
fn synthesize_point(coeffs: &[Complex64], m_lo: i64, q: f64, a: f64) -> (Complex64, Complex64, Complex64) {
    // interleaved phase recurrences over m ≡ m_lo + r (mod L):
    // z_{m+L} = z_m·R_m, R_m = exp(i(Lq − aL(2m + L)/2)), R_{m+L} = R_m·exp(−iaL²)
    const L: usize = 8;
    let lf = L as f64;
    let (mut zr, mut zi) = ([0.0; L], [0.0; L]);
    let (mut rr, mut ri) = ([0.0; L], [0.0; L]);
    let mut m = [0.0; L];
    for r in 0..L {
        let mr = (m_lo + r as i64) as f64;
        let (s, c) = (mr * q - 0.5 * a * mr * mr).sin_cos();
        (zr[r], zi[r]) = (c, s);
        let (s, c) = (lf * q - 0.5 * a * lf * (2.0 * mr + lf)).sin_cos();
        (rr[r], ri[r]) = (c, s);
        m[r] = mr;
    }
    let (di, dr) = (-a * lf * lf).sin_cos();
    let mut acc = [[0.0; L]; 6];
    let chunks = coeffs.chunks_exact(L);
    let tail = chunks.remainder();
    for chunk in chunks {
        let (mut cr, mut ci) = ([0.0; L], [0.0; L]);
        for r in 0..L {
            cr[r] = chunk[r].re;
            ci[r] = chunk[r].im;
        }
        for r in 0..L {
            let tr = cr[r] * zr[r] - ci[r] * zi[r];
            let ti = cr[r] * zi[r] + ci[r] * zr[r];
            acc[0][r] += tr;
            acc[1][r] += ti;
            acc[2][r] += tr * m[r];
            acc[3][r] += ti * m[r];
            acc[4][r] += tr * m[r] * m[r];
            acc[5][r] += ti * m[r] * m[r];
            let nzr = zr[r] * rr[r] - zi[r] * ri[r];
            zi[r] = zr[r] * ri[r] + zi[r] * rr[r];
            zr[r] = nzr;
            let nrr = rr[r] * dr - ri[r] * di;
            ri[r] = rr[r] * di + ri[r] * dr;
            rr[r] = nrr;
            m[r] += lf;
        }
    }
    for (r, c) in tail.iter().enumerate() {
        let tr = c.re * zr[r] - c.im * zi[r];
        let ti = c.re * zi[r] + c.im * zr[r];
        acc[0][r] += tr;
        acc[1][r] += ti;
        acc[2][r] += tr * m[r];
        acc[3][r] += ti * m[r];
        acc[4][r] += tr * m[r] * m[r];
        acc[5][r] += ti * m[r] * m[r];
    }
    let sum = |k: usize| acc[k].iter().sum::<f64>();
    let s0 = Complex64::new(sum(0), sum(1));
    let s1 = Complex64::new(sum(2), sum(3));
    let s2 = Complex64::new(sum(4), sum(5));
    (s0, Complex64::new(-s1.im, s1.re), -s2)
}

fn point_field(coeffs: &[Complex64], m_lo: i64, q: f64, a: f64, hbar: f64) -> PointField {
    let (psi, d1, d2) = synthesize_point(coeffs, m_lo, q, a);
    let r1 = d1 / psi;
    let r2 = d2 / psi;
    let density = psi.norm_sqr();
    PointField {
        density,
        v: hbar * r1.im,
        lap_s: hbar * (r2 - r1 * r1).im,
        logdens: density.ln(),
    }
}

/// Coefficients just after each kick, with per-period diagnostics.
#[derive(Debug, Clone)]
pub struct Evolution {
    pub rotor: Rotor,
    pub hbar: f64,
    pub len: usize,
    pub substeps: usize,
    /// Bin-ordered cₘ at t = nT⁺, n = 0..=periods.
    coefficients: Vec<Vec<Complex64>>,
    /// Position entropy at t = nT.
    pub entropy: Vec<f64>,
    /// Peak grid density at t = nT.
    pub peak_density: Vec<f64>,
    /// max |‖ψ‖² − 1| seen.
    pub norm_drift: f64,
}

impl Evolution {
    pub fn periods(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn duration(&self) -> f64 {
        self.periods() as f64 * self.rotor.period
    }

    pub fn coefficients(&self, n: usize) -> &[Complex64] {
        &self.coefficients[n]
    }

    /// The first `periods` periods of this evolution.
    pub fn truncated(&self, periods: usize) -> Evolution {
        let keep = periods.min(self.periods()) + 1;
        Evolution {
            coefficients: self.coefficients[..keep].to_vec(),
            entropy: self.entropy[..keep].to_vec(),
            peak_density: self.peak_density[..keep].to_vec(),
            ..self.clone()
        }
    }

    /// ψ on the grid at t = nT⁺.
    pub fn state(&self, n: usize) -> WaveState {
        let mut prop = Propagator::new(self.len, self.hbar, self.rotor).expect("validated on construction");
        let amps = prop.synthesize(&self.coefficients[n]);
        let mut s = WaveState::from_amplitudes(amps, self.hbar, n as f64 * self.rotor.period).expect("validated");
        s.t = n as f64 * self.rotor.period;
        s
    }

    fn from_states(
        states: impl IntoIterator<Item = Vec<Complex64>>,
        rotor: Rotor,
        hbar: f64,
        len: usize,
        substeps: usize,
    ) -> Result<Self, QuantumError> {
        let mut prop = Propagator::new(len, hbar, rotor)?;
        let mut evo = Self {
            rotor,
            hbar,
            len,
            substeps,
            coefficients: Vec::new(),
            entropy: Vec::new(),
            peak_density: Vec::new(),
            norm_drift: 0.0,
        };
        for psi in states {
            evo.push(&mut prop, &psi);
        }
        if evo.coefficients.is_empty() {
            return Err(QuantumError::Record("no snapshots".into()));
        }
        Ok(evo)
    }

    fn push(&mut self, prop: &mut Propagator, psi: &[Complex64]) {
        self.coefficients.push(prop.coefficients(psi));
        self.entropy.push(entropy_of(psi));
        self.peak_density
            .push(psi.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max));
        self.norm_drift = self.norm_drift.max((grid_norm(psi) - 1.0).abs());
    }

    /// Flat little-endian record: M, ħ, K, T, substeps, then ψ at each
    /// t = nT⁺ as interleaved (re, im) pairs.
    pub fn write_record<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(&(self.len as u64).to_le_bytes())?;
        w.write_all(&self.hbar.to_le_bytes())?;
        w.write_all(&self.rotor.strength.to_le_bytes())?;
        w.write_all(&self.rotor.period.to_le_bytes())?;
        w.write_all(&(self.substeps as u64).to_le_bytes())?;
        let mut prop = Propagator::new(self.len, self.hbar, self.rotor).map_err(io::Error::other)?;
        for c in &self.coefficients {
            for z in prop.synthesize(c) {
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_record<R: Read>(mut r: R) -> Result<Self, QuantumError> {
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8], QuantumError> {
            r.read_exact(&mut word)
                .map_err(|e| QuantumError::Record(format!("truncated header: {e}")))?;
            Ok(word)
        };
        let len = u64::from_le_bytes(next(&mut r)?) as usize;
        let hbar = f64::from_le_bytes(next(&mut r)?);
        let strength = f64::from_le_bytes(next(&mut r)?);
        let period = f64::from_le_bytes(next(&mut r)?);
        let substeps = u64::from_le_bytes(next(&mut r)?) as usize;
        check_grid(len)?;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        let frame = len * 16;
        if payload.is_empty() || payload.len() % frame != 0 {
            return Err(QuantumError::Record(format!(
                "payload of {} bytes is not a whole number of {len}-point snapshots",
                payload.len()
            )));
        }
        let f = |b: &[u8]| f64::from_le_bytes(b.try_into().expect("8-byte chunk"));
        let states = payload.chunks(frame).map(|snap| {
            snap.chunks(16)
                .map(|p| Complex64::new(f(&p[..8]), f(&p[8..])))
                .collect::<Vec<_>>()
        });
        Self::from_states(states, Rotor { strength, period }, hbar, len, substeps)
    }
}

/// Evolves `initial` for `periods` kicks, recording the state after each.
pub fn evolve(initial: &WaveState, rotor: Rotor, periods: usize, substeps: usize) -> Result<Evolution, QuantumError> {
    if substeps == 0 {
        return Err(QuantumError::Parameter("substeps must be at least 1".into()));
    }
    let mut prop = Propagator::new(initial.len(), initial.hbar, rotor)?;
    let mut evo = Evolution {
        rotor,
        hbar: initial.hbar,
        len: initial.len(),
        substeps,
        coefficients: Vec::with_capacity(periods + 1),
        entropy: Vec::with_capacity(periods + 1),
        peak_density: Vec::with_capacity(periods + 1),
        norm_drift: 0.0,
    };
    let mut state = initial.clone();
    evo.push(&mut prop, &state.amplitudes);
    for _ in 0..periods {
        prop.period(&mut state);
        evo.push(&mut prop, &state.amplitudes);
    }
    Ok(evo)
}

/// max |‖ψ‖² − 1| over `periods` kicks without recording.
pub fn unitarity_drift(initial: &WaveState, rotor: Rotor, periods: usize) -> Result<f64, QuantumError> {
    let mut prop = Propagator::new(initial.len(), initial.hbar, rotor)?;
    prop.check_state(initial)?;
    let mut state = initial.clone();
    let start = state.norm();
    let mut worst = 0.0_f64;
    for _ in 0..periods {
        prop.period(&mut state);
        worst = worst.max((state.norm() - start).abs());
    }
    Ok(worst)
}

/// Coefficients of one period restricted to the modes that matter.
struct Band {
    m_lo: i64,
    coeffs: Vec<Complex64>,
    node_level: f64,
    hbar: f64,
}

impl Band {
    fn new(evo: &Evolution, n: usize) -> Self {
        let c = &evo.coefficients[n];
        let len = evo.len;
        let weight = |k: usize| c[k].norm();
        let top = (0..len).map(weight).fold(0.0, f64::max);
        let kept: Vec<i64> = (0..len)
            .filter(|&k| weight(k) >= BAND_TOLERANCE * top)
            .map(|k| wavenumber(k, len))
            .collect();
        let m_lo = kept.iter().copied().min().unwrap_or(0);
        let m_hi = kept.iter().copied().max().unwrap_or(0);
        let bin = |m: i64| if m < 0 { (m + len as i64) as usize } else { m as usize };
        Self {
            m_lo,
            coeffs: (m_lo..=m_hi).map(|m| c[bin(m)]).collect(),
            node_level: NODE_EPSILON * evo.peak_density[n],
            hbar: evo.hbar,
        }
    }

    /// Fields at position q a time τ after the period starts.
    fn field(&self, q: f64, tau: f64) -> PointField {
        point_field(&self.coeffs, self.m_lo, q, self.hbar * tau, self.hbar)
    }

    fn is_node(&self, f: &PointField) -> bool {
        !(f.density >= self.node_level && f.density > 0.0 && f.v.is_finite() && f.lap_s.is_finite())
    }
}

/// Fields at an arbitrary point and time inside the recorded evolution.
pub fn field_at(evo: &Evolution, q: f64, t: f64) -> PointField {
    let n = ((t / evo.rotor.period).floor().max(0.0) as usize).min(evo.periods().saturating_sub(1));
    Band::new(evo, n).field(q, t - n as f64 * evo.rotor.period)
}

/// One Madelung-Bohm orbit sampled at every substep.
#[derive(Debug, Clone, Default)]
pub struct MbOrbit {
    pub q0: f64,
    pub period: f64,
    pub times: Vec<f64>,
    /// Continuous lift of q.
    pub positions: Vec<f64>,
    pub lap_s: Vec<f64>,
    pub logdens: Vec<f64>,
    pub node_flags: Vec<bool>,
    /// ∫₀ᵗ ∂²S dt along the orbit.
    pub lap_integral: Vec<f64>,
    /// Accepted integrator steps.
    pub steps: u64,
}

impl MbOrbit {
    pub fn wrapped(&self, i: usize) -> f64 {
        self.positions[i].rem_euclid(TAU)
    }

    pub fn duration(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0) - self.times.first().copied().unwrap_or(0.0)
    }

    /// ∫ (d ln|ψ|²/dt + ∂²S) dt over the orbit; zero up to integration error.
    pub fn identity_residual(&self) -> f64 {
        let last = self.times.len() - 1;
        (self.logdens[last] - self.logdens[0]) + self.lap_integral[last]
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,q,lapS,logdens,node_flag")?;
        for i in 0..self.times.len() {
            writeln!(
                w,
                "{:.10e},{:.12e},{:.12e},{:.12e},{}",
                self.times[i],
                self.wrapped(i),
                self.lap_s[i],
                self.logdens[i],
                u8::from(self.node_flags[i])
            )?;
        }
        Ok(())
    }
}

/// Sampling and accuracy settings for MB orbits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitOptions {
    /// Samples recorded per period.
    pub substeps: usize,
    /// Absolute and relative local error tolerance of the stepper.
    pub tolerance: f64,
}

impl Default for OrbitOptions {
    fn default() -> Self {
        Self {
            substeps: DEFAULT_SUBSTEPS,
            tolerance: 1e-8,
        }
    }
}

/// Integrates q̇ = ∂S(q, t) together with ∫∂²S dt by adaptive
/// Dormand-Prince steps over the whole evolution, sampling `substeps` times
/// per period. The field is evaluated exactly at every stage time.
pub fn trace_mb_orbit(evo: &Evolution, q0: f64, opts: &OrbitOptions) -> Result<MbOrbit, QuantumError> {
    if opts.substeps == 0 {
        return Err(QuantumError::Parameter("substeps must be at least 1".into()));
    }
    if !(opts.tolerance > 0.0) {
        return Err(QuantumError::Parameter("tolerance must be positive".into()));
    }
    let substeps = opts.substeps;
    let period = evo.rotor.period;
    let h = period / substeps as f64;
    let cap = evo.periods() * substeps + 1;
    let mut orbit = MbOrbit {
        q0,
        period,
        times: Vec::with_capacity(cap),
        positions: Vec::with_capacity(cap),
        lap_s: Vec::with_capacity(cap),
        logdens: Vec::with_capacity(cap),
        node_flags: Vec::with_capacity(cap),
        lap_integral: Vec::with_capacity(cap),
        steps: 0,
    };
    let mut dp = DormandPrince::new(2, opts.tolerance, opts.tolerance);
    dp.h_min = 1e-12 * period;
    let mut y = [q0, 0.0];
    let mut step = h;

    let record = |orbit: &mut MbOrbit, t: f64, y: &[f64; 2], f: PointField, flagged: bool| {
        orbit.times.push(t);
        orbit.positions.push(y[0]);
        orbit.lap_s.push(f.lap_s);
        orbit.logdens.push(f.logdens);
        orbit.node_flags.push(flagged);
        orbit.lap_integral.push(y[1]);
    };

    for n in 0..evo.periods() {
        let band = Band::new(evo, n);
        let t_start = n as f64 * period;
        if n == 0 {
            let f = band.field(y[0], 0.0);
            let flagged = band.is_node(&f);
            record(&mut orbit, 0.0, &y, f, flagged);
            if flagged {
                return Err(QuantumError::Node {
                    q0,
                    t: 0.0,
                    partial: Box::new(orbit),
                });
            }
        }
        for j in 0..substeps {
            let mut rhs = |tau: f64, y: &[f64], dy: &mut [f64]| {
                let f = band.field(y[0], tau);
                dy[0] = f.v;
                dy[1] = f.lap_s;
            };
            let advanced = dp.integrate(
                &mut rhs,
                j as f64 * h,
                (j + 1) as f64 * h,
                &mut y,
                step,
                &mut orbit.steps,
            );
            let t = t_start + (j + 1) as f64 * h;
            match advanced {
                Ok(next) => step = next,
                Err(stall) => {
                    let f = band.field(y[0], stall.t);
                    record(&mut orbit, t_start + stall.t, &y, f, true);
                    return Err(QuantumError::Node {
                        q0,
                        t: t_start + stall.t,
                        partial: Box::new(orbit),
                    });
                }
            }
            let f = band.field(y[0], (j + 1) as f64 * h);
            let flagged = band.is_node(&f);
            record(&mut orbit, t, &y, f, flagged);
            if flagged {
                return Err(QuantumError::Node {
                    q0,
                    t,
                    partial: Box::new(orbit),
                });
            }
        }
    }
    Ok(orbit)
}

/// Final-position change when the tolerance is divided by 2⁵, the error
/// reduction of halving every step of a fifth-order method.
pub fn step_halving_error(evo: &Evolution, q0: f64, opts: &OrbitOptions) -> Result<f64, QuantumError> {
    let a = trace_mb_orbit(evo, q0, opts)?;
    let fine = OrbitOptions {
        tolerance: opts.tolerance / 32.0,
        ..*opts
    };
    let b = trace_mb_orbit(evo, q0, &fine)?;
    Ok((a.positions.last().unwrap() - b.positions.last().unwrap()).abs())
}

/// Window average of ∂²S with its running series.
#[derive(Debug, Clone)]
pub struct KsWindow {
    pub k: f64,
    pub t0: f64,
    pub t1: f64,
    /// (t, running average from t0).
    pub running: Vec<(f64, f64)>,
}

fn sample_index(orbit: &MbOrbit, t: f64) -> usize {
    match orbit
        .times
        .binary_search_by(|x| x.partial_cmp(&t).expect("finite times"))
    {
        Ok(i) => i,
        Err(i) => i.min(orbit.times.len() - 1),
    }
}

/// Time average of ∂²S along an MB orbit over [t0, t1] (whole orbit by
/// default).
pub fn quantum_ks(orbit: &MbOrbit, window: Option<(f64, f64)>) -> Result<KsWindow, QuantumError> {
    if orbit.times.is_empty() {
        return Err(QuantumError::WindowTooShort { periods: 0.0 });
    }
    let (t0, t1) = window.unwrap_or((orbit.times[0], *orbit.times.last().unwrap()));
    let (i0, i1) = (sample_index(orbit, t0), sample_index(orbit, t1));
    let span = orbit.times[i1] - orbit.times[i0];
    let periods = span / orbit.period;
    if periods + 1e-9 < MIN_WINDOW_PERIODS {
        return Err(QuantumError::WindowTooShort { periods });
    }
    if orbit.node_flags[i0..=i1].iter().any(|&f| f) {
        return Err(QuantumError::FlaggedWindow);
    }
    let base = orbit.lap_integral[i0];
    let running = (i0 + 1..=i1)
        .map(|i| {
            let t = orbit.times[i];
            (t, (orbit.lap_integral[i] - base) / (t - orbit.times[i0]))
        })
        .collect();
    Ok(KsWindow {
        k: (orbit.lap_integral[i1] - base) / span,
        t0: orbit.times[i0],
        t1: orbit.times[i1],
        running,
    })
}

/// −[ln|ψ|²(end) − ln|ψ|²(start)] / t along the orbit.
pub fn density_decay_ks(orbit: &MbOrbit) -> Result<f64, QuantumError> {
    let last = orbit
        .times
        .len()
        .checked_sub(1)
        .ok_or(QuantumError::EndpointAtNode { t: 0.0 })?;
    for i in [0, last] {
        if orbit.node_flags[i] {
            return Err(QuantumError::EndpointAtNode { t: orbit.times[i] });
        }
    }
    let span = orbit.times[last] - orbit.times[0];
    if !(span > 0.0) {
        return Err(QuantumError::WindowTooShort { periods: 0.0 });
    }
    Ok(-(orbit.logdens[last] - orbit.logdens[0]) / span)
}

/// Standard-map orbit: positions (continuous lift) and momenta just after
/// each kick, starting with (q₀, p₀).
#[derive(Debug, Clone)]
pub struct ClassicalOrbit {
    pub period: f64,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

/// Iterates the kicked engine's orbit map with f = K cos q.
pub fn classical_rotor_orbit(q0: f64, p0: f64, rotor: Rotor, n_steps: usize) -> Result<ClassicalOrbit, QuantumError> {
    let model = KickedModel::new(
        Box::new(RotorKick {
            strength: rotor.strength,
        }),
        rotor.period,
    )
    .map_err(|e| QuantumError::Parameter(e.to_string()))?;
    let mut q = [q0];
    let mut p = [p0];
    let mut orbit = ClassicalOrbit {
        period: rotor.period,
        q: vec![q0],
        p: vec![p0],
    };
    for _ in 0..n_steps {
        orbit_step(&mut q, &mut p, &model);
        orbit.q.push(q[0]);
        orbit.p.push(p[0]);
    }
    Ok(orbit)
}

#[derive(Debug, Clone)]
pub struct HybridEstimate {
    pub k: f64,
    pub first_half: f64,
    pub second_half: f64,
    /// Periods entering the average.
    pub samples: usize,
    /// Periods dropped because the classical path met a node.
    pub flagged: usize,
    /// More than 10% of periods were dropped.
    pub low_confidence: bool,
    /// (start of period, mean ∂²S over that period) for every used period.
    pub series: Vec<(f64, f64)>,
}

/// Time average of ∂²S of the quantum state along a classical orbit. Each
/// free flight q_n + p_n τ is integrated by adaptive quadrature of the exact
/// field, so the odd spikes next to near-nodes cancel as in a principal value.
pub fn hybrid_ks(evo: &Evolution, orbit: &ClassicalOrbit, tolerance: f64) -> Result<HybridEstimate, QuantumError> {
    if !(tolerance > 0.0) {
        return Err(QuantumError::Parameter("tolerance must be positive".into()));
    }
    if (orbit.period - evo.rotor.period).abs() > 1e-12 * evo.rotor.period {
        return Err(QuantumError::Parameter(
            "classical orbit period differs from the evolution".into(),
        ));
    }
    let periods = evo.periods().min(orbit.q.len() - 1);
    if (periods as f64) < MIN_WINDOW_PERIODS {
        return Err(QuantumError::WindowTooShort {
            periods: periods as f64,
        });
    }
    let period = evo.rotor.period;
    let half = periods / 2;
    let mut dp = DormandPrince::new(1, tolerance, tolerance);
    dp.h_min = 1e-12 * period;
    let mut step = period / DEFAULT_SUBSTEPS as f64;
    let mut steps = 0;
    let mut sums = [0.0; 2];
    let mut counts = [0usize; 2];
    let mut flagged = 0;
    let mut series = Vec::with_capacity(periods);
    for n in 0..periods {
        let band = Band::new(evo, n);
        let (q, p) = (orbit.q[n], orbit.p[n]);
        let mut node = false;
        let mut rhs = |tau: f64, _: &[f64], dy: &mut [f64]| {
            let f = band.field(q + p * tau, tau);
            node |= band.is_node(&f);
            dy[0] = f.lap_s;
        };
        let mut y = [0.0];
        let done = dp.integrate(&mut rhs, 0.0, period, &mut y, step, &mut steps);
        match done {
            Ok(next) if !node => step = next,
            _ => {
                flagged += 1;
                step = period / DEFAULT_SUBSTEPS as f64;
                continue;
            }
        }
        let slot = usize::from(n >= half);
        sums[slot] += y[0];
        counts[slot] += 1;
        series.push((n as f64 * period, y[0] / period));
    }
    let total = counts[0] + counts[1];
    let mean = |s: f64, c: usize| if c > 0 { s / (c as f64 * period) } else { f64::NAN };
    Ok(HybridEstimate {
        k: mean(sums[0] + sums[1], total),
        first_half: mean(sums[0], counts[0]),
        second_half: mean(sums[1], counts[1]),
        samples: total,
        flagged,
        low_confidence: flagged * 10 > periods,
        series,
    })
}

/// Position entropy and its growth-rate estimates per period.
#[derive(Debug, Clone)]
pub struct EntropyRate {
    pub window: f64,
    pub times: Vec<f64>,
    pub entropy: Vec<f64>,
    /// Least-squares slope over the trailing window (NaN at t = 0).
    pub kbar_slope: Vec<f64>,
    /// entropy(t)/t (NaN at t = 0).
    pub kbar_over_t: Vec<f64>,
}

impl EntropyRate {
    /// [entropy(t) − entropy(0)] / t at the last sample.
    pub fn growth_rate(&self) -> f64 {
        let last = self.times.len() - 1;
        (self.entropy[last] - self.entropy[0]) / self.times[last]
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,entropy,kbar_slope,kbar_over_t")?;
        for i in 0..self.times.len() {
            writeln!(
                w,
                "{:.10e},{:.12e},{:.12e},{:.12e}",
                self.times[i], self.entropy[i], self.kbar_slope[i], self.kbar_over_t[i]
            )?;
        }
        Ok(())
    }
}

/// Entropy series of the evolution with slopes over a trailing `window`.
pub fn entropy_rate(evo: &Evolution, window: f64) -> EntropyRate {
    let times: Vec<f64> = (0..evo.entropy.len()).map(|n| n as f64 * evo.rotor.period).collect();
    let entropy = evo.entropy.clone();
    let mut kbar_slope = Vec::with_capacity(times.len());
    let mut kbar_over_t = Vec::with_capacity(times.len());
    let mut lo = 0;
    for i in 0..times.len() {
        while times[i] - times[lo] > window + 1e-12 {
            lo += 1;
        }
        kbar_slope.push(least_squares_slope(&times[lo..=i], &entropy[lo..=i]));
        kbar_over_t.push(if times[i] > 0.0 {
            entropy[i] / times[i]
        } else {
            f64::NAN
        });
    }
    EntropyRate {
        window,
        times,
        entropy,
        kbar_slope,
        kbar_over_t,
    }
}

fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.len() < 2 {
        return f64::NAN;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Draws positions from |ψ|² by rejection against the Fourier-interpolated
/// density.
pub fn sample_positions<R: Rng>(state: &WaveState, count: usize, rng: &mut R) -> Vec<f64> {
    let len = state.len();
    let mut planner = FftPlanner::new();
    let mut c = state.amplitudes.clone();
    planner.plan_fft_forward(len).process(&mut c);
    let m_lo = -(len as i64) / 2;
    let coeffs: Vec<Complex64> = (m_lo..len as i64 / 2)
        .map(|m| {
            let k = if m < 0 { (m + len as i64) as usize } else { m as usize };
            c[k] / len as f64
        })
        .collect();
    let peak = state.density().into_iter().fold(0.0, f64::max);
    let envelope = 1.25 * peak;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let q = rng.random::<f64>() * TAU;
        let d = synthesize_point(&coeffs, m_lo, q, 0.0).0.norm_sqr();
        if rng.random::<f64>() * envelope < d {
            out.push(q);
        }
    }
    out
}

/// Per-orbit and ensemble estimates for one evolution.
#[derive(Debug, Clone)]
pub struct QuantumKsEstimate {
    pub k_mb: f64,
    pub k_density: f64,
    pub k_hybrid: Option<f64>,
    pub kbar: Option<f64>,
    pub window_start: f64,
    pub window_end: f64,
}

impl QuantumKsEstimate {
    pub fn from_orbit(orbit: &MbOrbit) -> Result<Self, QuantumError> {
        let w = quantum_ks(orbit, None)?;
        Ok(Self {
            k_mb: w.k,
            k_density: density_decay_ks(orbit)?,
            k_hybrid: None,
            kbar: None,
            window_start: w.t0,
            window_end: w.t1,
        })
    }
}

/// Mean and standard error of density-decay estimates over an ensemble.
#[derive(Debug, Clone)]
pub struct EnsembleSummary {
    pub values: Vec<f64>,
    pub mean: f64,
    pub standard_error: f64,
    /// Orbits dropped because they met a node.
    pub failures: usize,
}

pub fn ensemble_density_decay(evo: &Evolution, q0s: &[f64], opts: &OrbitOptions) -> EnsembleSummary {
    let mut values = Vec::with_capacity(q0s.len());
    let mut failures = 0;
    for &q0 in q0s {
        match trace_mb_orbit(evo, q0, opts).and_then(|o| density_decay_ks(&o)) {
            Ok(k) => values.push(k),
            Err(_) => failures += 1,
        }
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    EnsembleSummary {
        standard_error: (var / n).sqrt(),
        mean,
        values,
        failures,
    }
}

/// Angle difference folded into (−π, π].
pub fn circle_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}
