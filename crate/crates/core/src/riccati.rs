//! Continuous-time KS engine.
//!
//! Along an orbit ξ(t) the position Hessian of the action, σ = S_qq, obeys the
//! matrix Riccati equation
//!
//! ```text
//! σ̇ + K₁₁ + K₁₂σ + σK₂₁ + σK₂₂σ = 0,   σ(0) = 0,
//! ```
//!
//! with K = ∇ξ∇ξH split into blocks. Writing σ = −tan Θ, the KS invariant is
//! the time average of the bounded integrand
//!
//! ```text
//! tr[ ½(K₁₁ − K₂₂) sin 2Θ + ½(K₁₂ + K₂₁) cos 2Θ ],
//! ```
//!
//! which is the principal-value average of tr σ.
//!
//! σ has simple poles whenever an eigenvalue of Θ passes (m − ½)π. The
//! engine never integrates through them in σ itself: it carries the
//! Lagrangian plane in one of N + 1 charts. Chart k stores
//! ρ = −tan(Θ + αₖ) with αₖ = kπ/(N+1), i.e. σ seen after rotating every
//! (qᵢ, pᵢ) plane by αₖ. ρ obeys the same Riccati equation with rotated
//! Hessian blocks. Chart 0 is σ itself; for N = 1 chart 1 is −τ = −σ⁻¹.
//! With N + 1 charts at least one keeps every eigenvalue of ρ below
//! cot(π/(2N+2)), so a bounded chart always exists.

use std::f64::consts::PI;
use std::io::{self, Write};

use thiserror::Error;

use crate::integrate::Rk4;
use crate::matkernel::{
    packed_index, phase_functions_direct, phase_functions_inverted, shift_phase, sym_eigen, MatError, Matrix, SymEigen,
    SymMatrix,
};
use crate::systems::{Hamiltonian, HessianBlocks};

pub const DEFAULT_SWITCH_THRESHOLD: f64 = 10.0;
pub const DEFAULT_ESCAPE_BOUND: f64 = 1e6;

/// One coordinate chart of the Lagrangian Grassmannian.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Chart {
    pub index: usize,
    pub count: usize,
}

impl Chart {
    pub fn direct(dim: usize) -> Self {
        Self {
            index: 0,
            count: dim + 1,
        }
    }

    pub fn angle(&self) -> f64 {
        self.index as f64 * PI / self.count as f64
    }

    pub fn is_direct(&self) -> bool {
        self.index == 0
    }

    /// Eigenvalue of the chart matrix at which σ has a pole; the direct chart
    /// has none (σ itself diverges there).
    pub fn pole_level(&self) -> Option<f64> {
        if self.is_direct() {
            None
        } else {
            let (s, c) = self.angle().sin_cos();
            Some(c / s)
        }
    }

    pub fn label(&self) -> String {
        if self.is_direct() {
            "direct".to_string()
        } else if 2 * self.index == self.count {
            "inverted".to_string()
        } else {
            format!("chart{}/{}", self.index, self.count)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoleEvent {
    pub time: f64,
    /// Index of the crossing eigenvalue in descending order.
    pub slot: usize,
    /// +1 when the symplectic phase increases through the pole.
    pub sign: i8,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchEvent {
    pub time: f64,
    pub from: usize,
    pub to: usize,
}

/// σ restricted to an orbit, held in whichever chart keeps it bounded.
#[derive(Debug, Clone)]
pub struct SigmaState {
    pub chart: Chart,
    pub matrix: SymMatrix,
    pub pole_count: Vec<u64>,
    pub poles: Vec<PoleEvent>,
    pub switches: Vec<SwitchEvent>,
}

/// Angle of an eigen-direction modulo π, measured from the nearest pole of
/// a chart whose poles sit at `pole`.
fn distance_to_pole(theta: f64, pole: f64) -> f64 {
    let d = (theta - pole).rem_euclid(PI);
    d.min(PI - d)
}

impl SigmaState {
    /// σ(0) = 0.
    pub fn new(dim: usize) -> Self {
        Self::from_sigma(SymMatrix::zeros(dim))
    }

    pub fn from_sigma(sigma: SymMatrix) -> Self {
        let n = sigma.order();
        Self {
            chart: Chart::direct(n),
            matrix: sigma,
            pole_count: vec![0; n],
            poles: Vec::new(),
            switches: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.order()
    }

    /// Eigen-angles of Θ (mod π) and the chart eigen-decomposition.
    fn phases(&self, eig: &SymEigen) -> Vec<f64> {
        let alpha = self.chart.angle();
        eig.values.iter().map(|&l| -l.atan() - alpha).collect()
    }

    /// The chart matrix re-expressed in `target`.
    pub fn in_chart(&self, target: Chart) -> Result<SymMatrix, MatError> {
        if target == self.chart {
            return Ok(self.matrix.clone());
        }
        let eig = sym_eigen(&self.matrix)?;
        let alpha = target.angle();
        let thetas = self.phases(&eig);
        let mut values = eig.values.clone();
        for (v, th) in values.iter_mut().zip(&thetas) {
            *v = -(th + alpha).tan();
        }
        let shifted = SymEigen {
            values,
            vectors: eig.vectors,
        };
        Ok(shifted.reconstruct())
    }

    /// σ in the direct chart; diverges at a pole.
    pub fn sigma(&self) -> Result<SymMatrix, MatError> {
        self.in_chart(Chart::direct(self.dim()))
    }

    /// ‖σ‖_F from the chart matrix by the Möbius map
    /// σ = (ρ cos α + sin α)(cos α − ρ sin α)⁻¹, without diagonalizing.
    fn sigma_frobenius(&self) -> Option<f64> {
        let n = self.dim();
        let (s, c) = self.chart.angle().sin_cos();
        let rho = self.matrix.to_dense();
        let id = Matrix::identity(n);
        let num = &rho.scale(c) + &id.scale(s);
        let den = &id.scale(c) - &rho.scale(s);
        let sigma = num.mul(&den.inverse().ok()?);
        let f = sigma.frobenius_norm();
        f.is_finite().then_some(f)
    }

    /// (sin 2Θ, cos 2Θ) in the original frame.
    pub fn phase_functions(&self) -> (SymMatrix, SymMatrix) {
        chart_phase_functions(&self.matrix, self.chart)
    }

    /// Moves to a better-conditioned chart when the current one is near a
    /// pole, and back to the direct chart once σ is comfortably bounded.
    /// Returns whether a switch happened.
    pub fn maybe_switch(&mut self, time: f64, threshold: f64) -> Result<bool, MatError> {
        if self.matrix.frobenius_norm() <= threshold {
            if self.chart.is_direct() {
                return Ok(false);
            }
            // the eigen-decomposition is only needed when a return is plausible
            let bound = 0.25 * threshold * (self.dim() as f64).sqrt();
            if self.sigma_frobenius().is_none_or(|f| f > bound) {
                return Ok(false);
            }
        }
        let eig = sym_eigen(&self.matrix)?;
        let thetas = self.phases(&eig);
        let norm = eig.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let target = if norm > threshold {
            self.best_chart(&thetas)
        } else if !self.chart.is_direct() {
            let sigma_norm = thetas.iter().fold(0.0_f64, |a, th| a.max(th.tan().abs()));
            if sigma_norm <= 0.25 * threshold {
                Chart::direct(self.dim())
            } else {
                return Ok(false);
            }
        } else {
            return Ok(false);
        };
        if target == self.chart {
            return Ok(false);
        }
        let alpha = target.angle();
        let values = thetas.iter().map(|th| -(th + alpha).tan()).collect();
        let moved = SymEigen {
            values,
            vectors: eig.vectors,
        }
        .reconstruct();
        if !moved.is_finite() {
            // retried on the next step
            return Ok(false);
        }
        self.switches.push(SwitchEvent {
            time,
            from: self.chart.index,
            to: target.index,
        });
        self.chart = target;
        self.matrix = moved;
        Ok(true)
    }

    fn best_chart(&self, thetas: &[f64]) -> Chart {
        let count = self.chart.count;
        let mut best = (self.chart.index, f64::NEG_INFINITY);
        for index in 0..count {
            let alpha = index as f64 * PI / count as f64;
            let margin = thetas
                .iter()
                .map(|th| distance_to_pole(th + alpha, 0.5 * PI))
                .fold(f64::INFINITY, f64::min);
            if margin > best.1 + 1e-12 {
                best = (index, margin);
            }
        }
        Chart { index: best.0, count }
    }

    fn log_crossings(&mut self, before: &[f64], after: &[f64], t0: f64, h: f64) {
        let Some(level) = self.chart.pole_level() else {
            return;
        };
        for (slot, (&b, &a)) in before.iter().zip(after).enumerate() {
            if (b > level) != (a > level) {
                let frac = ((b - level) / (b - a)).clamp(0.0, 1.0);
                self.pole_count[slot] += 1;
                self.poles.push(PoleEvent {
                    time: t0 + frac * h,
                    slot,
                    sign: if b > level { 1 } else { -1 },
                });
            }
        }
    }

    pub fn total_poles(&self) -> u64 {
        self.pole_count.iter().sum()
    }
}

/// (sin 2Θ, cos 2Θ) in the original frame from a chart matrix.
pub fn chart_phase_functions(matrix: &SymMatrix, chart: Chart) -> (SymMatrix, SymMatrix) {
    let (s, c) = phase_functions_direct(matrix);
    if chart.is_direct() {
        (s, c)
    } else {
        shift_phase(&s, &c, chart.angle())
    }
}

/// (sin 2Θ, cos 2Θ) from τ = σ⁻¹.
pub fn inverted_phase_functions(tau: &SymMatrix) -> (SymMatrix, SymMatrix) {
    phase_functions_inverted(tau)
}

/// σ̇ = −(K₁₁ + K₁₂σ + σK₂₁ + σK₂₂σ), symmetrized.
pub fn sigma_rhs(sigma: &SymMatrix, k: &HessianBlocks) -> SymMatrix {
    let s = sigma.to_dense();
    let k12s = k.k12.mul(&s);
    // σK₂₁ = (K₁₂σ)ᵀ, so K₁₂σ + σK₂₁ has symmetric part 2·sym(K₁₂σ)
    let cross = SymMatrix::symmetric_part(&k12s).scale(2.0);
    let quad = sigma.sandwich(&k.k22);
    -&(&(&k.k11 + &cross) + &quad)
}

/// τ̇ = τK₁₁τ + τK₁₂ + K₂₁τ + K₂₂ for τ = σ⁻¹, symmetrized.
pub fn tau_rhs(tau: &SymMatrix, k: &HessianBlocks) -> SymMatrix {
    let t = tau.to_dense();
    let cross = SymMatrix::symmetric_part(&t.mul(&k.k12)).scale(2.0);
    &(&tau.sandwich(&k.k11) + &cross) + &k.k22
}

/// Riccati right-hand side for a chart matrix.
pub fn chart_rhs(matrix: &SymMatrix, chart: Chart, k: &HessianBlocks) -> SymMatrix {
    if chart.is_direct() {
        sigma_rhs(matrix, k)
    } else {
        sigma_rhs(matrix, &k.rotated(chart.angle()))
    }
}

/// tr[½(K₁₁ − K₂₂) sin 2Θ + ½(K₁₂ + K₂₁) cos 2Θ] from phase functions.
pub fn ks_integrand_from_phase(sin2: &SymMatrix, cos2: &SymMatrix, k: &HessianBlocks) -> f64 {
    let n = k.dim();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let diff = k.k11.get(i, j) - k.k22.get(i, j);
            let cross = k.k12.get(i, j) + k.k12.get(j, i);
            acc += diff * sin2.get(j, i) + cross * cos2.get(j, i);
        }
    }
    0.5 * acc
}

/// KS integrand for the current state.
pub fn ks_integrand(state: &SigmaState, k: &HessianBlocks) -> f64 {
    let (s, c) = state.phase_functions();
    ks_integrand_from_phase(&s, &c, k)
}

#[derive(Debug, Clone)]
pub struct EvolveOptions {
    pub t_max: f64,
    pub dt: f64,
    /// Time between recorded samples; 0 disables the series.
    pub sample_every: f64,
    pub switch_threshold: f64,
    pub escape_bound: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            t_max: 100.0,
            dt: 1e-3,
            sample_every: 1.0,
            switch_threshold: DEFAULT_SWITCH_THRESHOLD,
            escape_bound: DEFAULT_ESCAPE_BOUND,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KsSample {
    pub t: f64,
    pub k_running: f64,
    pub integrand: f64,
    pub energy_drift: f64,
    pub pole_count: u64,
    pub representation: String,
}

/// Running time-average of the KS integrand.
#[derive(Debug, Clone)]
pub struct KsEstimate {
    pub elapsed: f64,
    pub integral: f64,
    /// integral / elapsed
    pub k: f64,
    /// Average over the trailing half of the run; free of the O(1/t)
    /// start-up transient carried by `k`.
    pub k_trailing: f64,
    pub samples: Vec<KsSample>,
    /// Largest relative energy deviation for autonomous models.
    pub max_energy_drift: Option<f64>,
    pub poles: Vec<PoleEvent>,
    pub switch_count: usize,
    pub steps: u64,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub sigma_state: SigmaState,
}

impl KsEstimate {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,k_running,integrand,energy_drift,pole_count,representation")?;
        for s in &self.samples {
            writeln!(
                w,
                "{:.10e},{:.15e},{:.15e},{:.6e},{},{}",
                s.t, s.k_running, s.integrand, s.energy_drift, s.pole_count, s.representation
            )?;
        }
        Ok(())
    }

    pub fn pole_count(&self) -> u64 {
        self.sigma_state.total_poles()
    }
}

#[derive(Debug, Error)]
pub enum RiccatiError {
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error("initial condition has dimension {actual}, model has {expected}")]
    Dimension { expected: usize, actual: usize },
    #[error("orbit escaped at t = {t:.6} (|ξ| = {norm:.3e} > {bound:.1e}); try a smaller dt")]
    Escape {
        t: f64,
        norm: f64,
        bound: f64,
        partial: Box<KsEstimate>,
    },
    #[error("non-finite state at t = {t:.6}")]
    NonFinite { t: f64, partial: Box<KsEstimate> },
    #[error(transparent)]
    Linear(#[from] MatError),
}

impl RiccatiError {
    pub fn partial(&self) -> Option<&KsEstimate> {
        match self {
            RiccatiError::Escape { partial, .. } | RiccatiError::NonFinite { partial, .. } => Some(partial),
            _ => None,
        }
    }
}

/// Dense scratch space for the right-hand side in a fixed chart, so the
/// inner RK4 loop does not allocate.
struct ChartWorkspace {
    n: usize,
    rot: (f64, f64),
    shift: (f64, f64),
    rho: Vec<f64>,
    k11: Vec<f64>,
    k12: Vec<f64>,
    k22: Vec<f64>,
    half_diff: Vec<f64>,
    half_cross: Vec<f64>,
    a: Vec<f64>,
    t1: Vec<f64>,
    t2: Vec<f64>,
}

impl ChartWorkspace {
    fn new(n: usize, chart: Chart) -> Self {
        let z = || vec![0.0; n * n];
        Self {
            n,
            rot: chart.angle().sin_cos(),
            shift: (2.0 * chart.angle()).sin_cos(),
            rho: z(),
            k11: z(),
            k12: z(),
            k22: z(),
            half_diff: z(),
            half_cross: z(),
            a: z(),
            t1: z(),
            t2: z(),
        }
    }

    fn set_chart(&mut self, chart: Chart) {
        self.rot = chart.angle().sin_cos();
        self.shift = (2.0 * chart.angle()).sin_cos();
    }

    fn load(&mut self, packed: &[f64], k: &HessianBlocks) {
        let n = self.n;
        let (s, c) = self.rot;
        for i in 0..n {
            for j in 0..n {
                let ij = i * n + j;
                self.rho[ij] = packed[packed_index(i, j)];
                let a11 = k.k11.get(i, j);
                let a22 = k.k22.get(i, j);
                let a12 = k.k12.get(i, j);
                let a21 = k.k12.get(j, i);
                let cross = a12 + a21;
                self.half_diff[ij] = 0.5 * (a11 - a22);
                self.half_cross[ij] = 0.5 * cross;
                self.k11[ij] = c * c * a11 + c * s * cross + s * s * a22;
                self.k22[ij] = s * s * a11 - c * s * cross + c * c * a22;
                self.k12[ij] = c * s * (a22 - a11) + c * c * a12 - s * s * a21;
            }
        }
    }

    /// ρ̇ in packed form.
    fn rhs(&mut self, out: &mut [f64]) {
        let n = self.n;
        // t1 = K₁₂ρ, t2 = K₂₂ρ
        for i in 0..n {
            for j in 0..n {
                let mut x = 0.0;
                let mut y = 0.0;
                for l in 0..n {
                    x += self.k12[i * n + l] * self.rho[l * n + j];
                    y += self.k22[i * n + l] * self.rho[l * n + j];
                }
                self.t1[i * n + j] = x;
                self.t2[i * n + j] = y;
            }
        }
        for i in 0..n {
            for j in 0..=i {
                let mut quad = 0.0;
                for l in 0..n {
                    quad += self.rho[i * n + l] * self.t2[l * n + j];
                }
                let cross = self.t1[i * n + j] + self.t1[j * n + i];
                let k11 = 0.5 * (self.k11[i * n + j] + self.k11[j * n + i]);
                out[packed_index(i, j)] = -(k11 + cross + quad);
            }
        }
    }

    /// Integrand from the chart matrix; false if I + ρ² failed to factor.
    fn integrand(&mut self) -> Option<f64> {
        let n = self.n;
        // t1 = I + ρ²
        for i in 0..n {
            for j in 0..n {
                let mut x = if i == j { 1.0 } else { 0.0 };
                for l in 0..n {
                    x += self.rho[i * n + l] * self.rho[l * n + j];
                }
                self.t1[i * n + j] = x;
            }
        }
        spd_inverse_in_place(n, &mut self.t1, &mut self.t2, &mut self.a)?;
        let (s2, c2) = self.shift;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                // chart sin, cos; sym part of −2Aρ
                let mut ar = 0.0;
                let mut ra = 0.0;
                for l in 0..n {
                    ar += self.a[i * n + l] * self.rho[l * n + j];
                    ra += self.rho[i * n + l] * self.a[l * n + j];
                }
                let sin = -(ar + ra);
                let cos = 2.0 * self.a[i * n + j] - if i == j { 1.0 } else { 0.0 };
                let sin0 = sin * c2 - cos * s2;
                let cos0 = cos * c2 + sin * s2;
                acc += self.half_diff[j * n + i] * sin0 + self.half_cross[j * n + i] * cos0;
            }
        }
        Some(acc)
    }
}

/// Inverts the SPD matrix `m` into `inv` via Cholesky, using `l` as scratch.
fn spd_inverse_in_place(n: usize, m: &mut [f64], l: &mut [f64], inv: &mut [f64]) -> Option<()> {
    l.iter_mut().for_each(|x| *x = 0.0);
    for j in 0..n {
        let mut d = m[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut x = m[i * n + j];
            for k in 0..j {
                x -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = x / d;
        }
    }
    // columns of L⁻¹ into m (lower triangular)
    m.iter_mut().for_each(|x| *x = 0.0);
    for c in 0..n {
        for i in c..n {
            let mut x = if i == c { 1.0 } else { 0.0 };
            for k in c..i {
                x -= l[i * n + k] * m[k * n + c];
            }
            m[i * n + c] = x / l[i * n + i];
        }
    }
    // inv = L⁻ᵀ L⁻¹
    for i in 0..n {
        for j in 0..n {
            let mut x = 0.0;
            for k in i.max(j)..n {
                x += m[k * n + i] * m[k * n + j];
            }
            inv[i * n + j] = x;
        }
    }
    Some(())
}

/// Number of eigenvalues of `matrix` above `level`, from the inertia of
/// LDLᵀ; `None` when a pivot is too small to trust.
fn count_above(matrix: &SymMatrix, level: f64) -> Option<usize> {
    let n = matrix.order();
    let mut d = vec![0.0; n];
    let mut l = vec![0.0; n * n];
    let scale = 1.0 + matrix.frobenius_norm() + level.abs();
    let mut count = 0;
    for j in 0..n {
        let mut dj = matrix.get(j, j) - level;
        for k in 0..j {
            dj -= l[j * n + k] * l[j * n + k] * d[k];
        }
        if dj.abs() < 1e-10 * scale {
            return None;
        }
        d[j] = dj;
        if dj > 0.0 {
            count += 1;
        }
        for i in j + 1..n {
            let mut x = matrix.get(i, j);
            for k in 0..j {
                x -= l[i * n + k] * l[j * n + k] * d[k];
            }
            l[i * n + j] = x / dj;
        }
    }
    Some(count)
}

/// Integrates Hamilton's equations, the chart Riccati equation and the KS
/// integral jointly with fixed-step RK4.
pub fn evolve_ks(
    model: &dyn Hamiltonian,
    q0: &[f64],
    p0: &[f64],
    opts: &EvolveOptions,
) -> Result<KsEstimate, RiccatiError> {
    let n = model.dim();
    if q0.len() != n || p0.len() != n {
        return Err(RiccatiError::Dimension {
            expected: n,
            actual: q0.len().max(p0.len()),
        });
    }
    if !(opts.dt > 0.0 && opts.dt.is_finite()) {
        return Err(RiccatiError::InvalidOptions(format!(
            "dt must be positive, got {}",
            opts.dt
        )));
    }
    if !(opts.t_max > 0.0 && opts.t_max.is_finite()) {
        return Err(RiccatiError::InvalidOptions(format!(
            "t_max must be positive, got {}",
            opts.t_max
        )));
    }
    if !(opts.switch_threshold > 1.0) {
        return Err(RiccatiError::InvalidOptions("switch_threshold must exceed 1".into()));
    }

    let steps = (opts.t_max / opts.dt).round().max(1.0) as u64;
    let half_step = steps / 2;
    let sample_stride = if opts.sample_every > 0.0 {
        ((opts.sample_every / opts.dt).round() as u64).max(1)
    } else {
        0
    };
    let m = n * (n + 1) / 2;
    let len = 2 * n + m + 1;
    let integral_ix = 2 * n + m;

    let mut y = vec![0.0; len];
    y[..n].copy_from_slice(q0);
    y[n..2 * n].copy_from_slice(p0);
    let mut state = SigmaState::new(n);
    let autonomous = model.is_autonomous();
    let e0 = model.energy(q0, p0, 0.0);
    let energy_scale = if e0.abs() > 0.0 { e0.abs() } else { 1.0 };
    let mut max_drift = 0.0_f64;
    let mut rk = Rk4::new(len);
    let mut samples = Vec::new();
    let mut integral_half = 0.0;
    let mut time_half = 0.0;
    let mut ws = ChartWorkspace::new(n, state.chart);
    let mut prev_matrix = state.matrix.clone();
    let mut prev_count = state.chart.pole_level().and_then(|l| count_above(&state.matrix, l));

    let drift = |y: &[f64], t: f64| -> f64 {
        if autonomous {
            (model.energy(&y[..n], &y[n..2 * n], t) - e0).abs() / energy_scale
        } else {
            0.0
        }
    };

    let snapshot =
        |y: &[f64], t: f64, state: &SigmaState, samples: Vec<KsSample>, ih: f64, th: f64, max_drift: f64, step: u64| {
            let integral = y[integral_ix];
            KsEstimate {
                elapsed: t,
                integral,
                k: if t > 0.0 { integral / t } else { 0.0 },
                k_trailing: if t > th { (integral - ih) / (t - th) } else { 0.0 },
                samples,
                max_energy_drift: autonomous.then_some(max_drift),
                poles: state.poles.clone(),
                switch_count: state.switches.len(),
                steps: step,
                q: y[..n].to_vec(),
                p: y[n..2 * n].to_vec(),
                sigma_state: state.clone(),
            }
        };

    let record = |y: &[f64], t: f64, state: &SigmaState, drift: f64| -> KsSample {
        let blocks = model.hessian_blocks(&y[..n], &y[n..2 * n], t);
        KsSample {
            t,
            k_running: if t > 0.0 { y[integral_ix] / t } else { 0.0 },
            integrand: ks_integrand(state, &blocks),
            energy_drift: drift,
            pole_count: state.total_poles(),
            representation: state.chart.label(),
        }
    };

    if sample_stride > 0 {
        samples.push(record(&y, 0.0, &state, 0.0));
    }

    for step in 1..=steps {
        let t0 = (step - 1) as f64 * opts.dt;
        let mut rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
            let (q, rest) = y.split_at(n);
            let p = &rest[..n];
            let (vel, blocks) = model.velocity_and_hessian(q, p, t);
            dy[..n].copy_from_slice(&vel.dq);
            dy[n..2 * n].copy_from_slice(&vel.dp);
            ws.load(&y[2 * n..2 * n + m], &blocks);
            ws.rhs(&mut dy[2 * n..2 * n + m]);
            dy[integral_ix] = ws.integrand().unwrap_or(f64::NAN);
        };
        rk.step(&mut rhs, t0, &mut y, opts.dt);
        let t = step as f64 * opts.dt;
        state.matrix.packed_mut().copy_from_slice(&y[2 * n..2 * n + m]);

        if !y.iter().all(|v| v.is_finite()) {
            let partial = snapshot(&y, t, &state, samples, integral_half, time_half, max_drift, step);
            return Err(RiccatiError::NonFinite {
                t,
                partial: Box::new(partial),
            });
        }
        let norm = y[..2 * n].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > opts.escape_bound {
            let partial = snapshot(&y, t, &state, samples, integral_half, time_half, max_drift, step);
            return Err(RiccatiError::Escape {
                t,
                norm,
                bound: opts.escape_bound,
                partial: Box::new(partial),
            });
        }

        if let Some(level) = state.chart.pole_level() {
            let now = count_above(&state.matrix, level);
            if now.is_none() || now != prev_count {
                let before = sym_eigen(&prev_matrix)?.values;
                let after = sym_eigen(&state.matrix)?.values;
                state.log_crossings(&before, &after, t0, opts.dt);
            }
            prev_count = now;
        }
        if state.maybe_switch(t, opts.switch_threshold)? {
            ws.set_chart(state.chart);
            prev_count = state.chart.pole_level().and_then(|l| count_above(&state.matrix, l));
        }
        prev_matrix.clone_from(&state.matrix);
        y[2 * n..2 * n + m].copy_from_slice(state.matrix.packed());

        let d = drift(&y, t);
        max_drift = max_drift.max(d);
        if step == half_step {
            integral_half = y[integral_ix];
            time_half = t;
        }
        if sample_stride > 0 && (step % sample_stride == 0 || step == steps) {
            samples.push(record(&y, t, &state, d));
        }
    }

    let t = steps as f64 * opts.dt;
    Ok(snapshot(
        &y,
        t,
        &state,
        samples,
        integral_half,
        time_half,
        max_drift,
        steps,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{InvertedOscillator, Quadratic, Quartic3, StandardForm};
    use approx::assert_abs_diff_eq;

    fn blocks_1d(k11: f64) -> HessianBlocks {
        HessianBlocks::standard(SymMatrix::scalar(1, k11))
    }

    #[test]
    fn sigma_rhs_at_origin_is_minus_k11() {
        let b = StandardForm::new(Quartic3).hessian_blocks(&[0.2, 0.4, -0.1], &[0.0; 3], 0.0);
        let d = sigma_rhs(&SymMatrix::zeros(3), &b);
        assert_eq!(d, -&b.k11);
    }

    #[test]
    fn tau_rhs_at_pole_is_identity() {
        let b = StandardForm::new(Quartic3).hessian_blocks(&[0.2, 0.4, -0.1], &[0.0; 3], 0.0);
        assert_eq!(tau_rhs(&SymMatrix::zeros(3), &b), SymMatrix::identity(3));
    }

    #[test]
    fn scalar_rhs_closed_forms() {
        // V = −q²/2: σ̇ = 1 − σ²
        let d = sigma_rhs(&SymMatrix::scalar(1, 0.3), &blocks_1d(-1.0));
        assert_abs_diff_eq!(d.get(0, 0), 1.0 - 0.09, epsilon = 1e-15);
        // V = q²/2: τ̇ = 1 + τ²
        let d = tau_rhs(&SymMatrix::scalar(1, 0.3), &blocks_1d(1.0));
        assert_abs_diff_eq!(d.get(0, 0), 1.09, epsilon = 1e-15);
    }

    #[test]
    fn tau_rhs_is_conjugated_sigma_rhs() {
        let model = CanonicalRotationFixture::model();
        let b = model.hessian_blocks(&[0.3, -0.4, 0.5], &[0.1, 0.2, -0.3], 0.0);
        let sigma = SymMatrix::from_packed(3, vec![0.7, 0.2, -1.1, 0.05, 0.3, 0.4]).unwrap();
        let tau = sigma.inverse().unwrap();
        let expected = tau.sandwich(&sigma_rhs(&sigma, &b)).scale(-1.0);
        let got = tau_rhs(&tau, &b);
        assert!((&expected - &got).frobenius_norm() <= 1e-10 * expected.frobenius_norm());
    }

    #[test]
    fn inverted_chart_matches_tau_form() {
        // N = 1: chart 1 holds −τ
        let b = blocks_1d(2.5);
        let chart = Chart { index: 1, count: 2 };
        let tau = SymMatrix::scalar(1, 0.37);
        let via_chart = -&chart_rhs(&-&tau, chart, &b);
        assert_abs_diff_eq!(via_chart.get(0, 0), tau_rhs(&tau, &b).get(0, 0), epsilon = 1e-14);
        assert_eq!(chart.label(), "inverted");
    }

    struct CanonicalRotationFixture;
    impl CanonicalRotationFixture {
        fn model() -> crate::systems::CanonicalRotation<StandardForm<Quartic3>> {
            crate::systems::CanonicalRotation::new(StandardForm::new(Quartic3), 0.4)
        }
    }

    #[test]
    fn integrand_values() {
        let state = SigmaState::new(1);
        assert_eq!(ks_integrand(&state, &blocks_1d(-1.0)), 0.0);
        // σ = tanh t for the inverted oscillator: integrand = tanh 2t
        let t: f64 = 0.8;
        let state = SigmaState::from_sigma(SymMatrix::scalar(1, t.tanh()));
        assert_abs_diff_eq!(
            ks_integrand(&state, &blocks_1d(-1.0)),
            (2.0 * t).tanh(),
            epsilon = 1e-14
        );
        // isotropic ω = 1 gives K₁₁ = K₂₂ and zero integrand at any σ
        let state = SigmaState::from_sigma(SymMatrix::scalar(1, 3.7));
        assert_eq!(ks_integrand(&state, &blocks_1d(1.0)), 0.0);
    }

    #[test]
    fn switch_is_noop_for_small_sigma() {
        let mut s = SigmaState::from_sigma(SymMatrix::scalar(2, 0.5));
        assert!(!s.maybe_switch(0.0, 10.0).unwrap());
        assert!(s.chart.is_direct());
    }

    #[test]
    fn chart_round_trip_preserves_sigma() {
        let sigma = SymMatrix::from_packed(3, vec![0.7, 0.2, -1.1, 0.05, 0.3, 0.4]).unwrap();
        let mut s = SigmaState::from_sigma(sigma.clone());
        for index in 1..4 {
            let chart = Chart { index, count: 4 };
            let m = s.in_chart(chart).unwrap();
            s.matrix = m;
            s.chart = chart;
        }
        let back = s.sigma().unwrap();
        assert!((&back - &sigma).frobenius_norm() <= 1e-10 * sigma.frobenius_norm());
    }

    #[test]
    fn large_sigma_moves_to_bounded_chart() {
        let mut s = SigmaState::from_sigma(SymMatrix::diagonal(&[50.0, 0.0, -0.3]));
        let (s0, c0) = s.phase_functions();
        assert!(s.maybe_switch(1.0, 10.0).unwrap());
        assert!(!s.chart.is_direct());
        assert!(s.matrix.spectral_norm().unwrap() <= 1.0 / (PI / 8.0).tan() + 1e-12);
        let (s1, c1) = s.phase_functions();
        assert!((&s0 - &s1).frobenius_norm() < 1e-12);
        assert!((&c0 - &c1).frobenius_norm() < 1e-12);
        assert_eq!(s.switches.len(), 1);
    }

    #[test]
    fn free_particle_gives_zero() {
        let model = StandardForm::new(crate::systems::Free { dim: 2 });
        let est = evolve_ks(
            &model,
            &[0.1, 0.2],
            &[1.0, -0.5],
            &EvolveOptions {
                t_max: 5.0,
                dt: 0.01,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(est.k, 0.0);
        assert_eq!(est.integral, 0.0);
    }

    #[test]
    fn inverted_oscillator_average() {
        let est = evolve_ks(
            &StandardForm::new(InvertedOscillator),
            &[0.0],
            &[0.0],
            &EvolveOptions {
                t_max: 20.0,
                dt: 1e-3,
                ..Default::default()
            },
        )
        .unwrap();
        // ∫₀ᵗ tanh 2s ds = ½ ln cosh 2t
        let exact = 0.5 * (40.0f64).cosh().ln() / 20.0;
        assert_abs_diff_eq!(est.k, exact, epsilon = 1e-10);
        assert_abs_diff_eq!(est.k_trailing, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn harmonic_poles_on_schedule() {
        let omega = 1.0;
        let model = StandardForm::new(Quadratic::isotropic(1, omega).unwrap());
        let dt = 1e-3;
        let est = evolve_ks(
            &model,
            &[0.3],
            &[0.0],
            &EvolveOptions {
                t_max: 20.0,
                dt,
                sample_every: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(est.poles.len(), 6);
        for (m, pole) in est.poles.iter().enumerate() {
            let expect = (m as f64 + 0.5) * PI / omega;
            assert!((pole.time - expect).abs() < dt, "pole {m} at {}", pole.time);
            assert_eq!(pole.sign, 1);
        }
        assert!(est.k.abs() < 1e-3);
    }

    #[test]
    fn rejects_bad_options() {
        let model = StandardForm::new(InvertedOscillator);
        let bad = EvolveOptions {
            dt: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            evolve_ks(&model, &[0.0], &[0.0], &bad),
            Err(RiccatiError::InvalidOptions(_))
        ));
    }

    #[test]
    fn escape_carries_partial_result() {
        let model = StandardForm::new(InvertedOscillator);
        let err = evolve_ks(
            &model,
            &[1.0],
            &[0.0],
            &EvolveOptions {
                t_max: 100.0,
                dt: 1e-2,
                escape_bound: 1e3,
                ..Default::default()
            },
        )
        .unwrap_err();
        let partial = err.partial().expect("partial result");
        assert!(partial.elapsed > 5.0 && partial.elapsed < 10.0);
        assert!(partial.k > 0.5);
    }
}
