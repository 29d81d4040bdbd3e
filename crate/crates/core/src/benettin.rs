//! Tangent-space Lyapunov spectrum by repeated Gram-Schmidt
//! renormalization (Benettin et al.), the independent cross-check for the
//! Riccati and kicked engines.
//!
//! The orbit is advanced with the same RK4 stepper and the same velocity
//! evaluation as [`crate::riccati::evolve_ks`], so for equal `dt` both see a
//! bit-identical trajectory.

use std::io::{self, Write};

use thiserror::Error;

use crate::integrate::Rk4;
use crate::systems::{Hamiltonian, HessianBlocks, KickedModel};

/// Largest per-interval stretch tolerated before the interval is shortened.
pub const MAX_STRETCH: f64 = 1e6;
const BLOCKS: usize = 20;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("tangent vectors overflowed before the first renormalization; use a shorter renorm interval")]
    Overflow,
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error("orbit escaped at t = {t:.6}")]
    Escape { t: f64 },
    #[error("initial condition has dimension {actual}, model has {expected}")]
    Dimension { expected: usize, actual: usize },
}

/// 2N tangent vectors of length 2N with accumulated stretching logs.
#[derive(Debug, Clone)]
pub struct TangentFrame {
    pub dim: usize,
    /// Column-major: vector k occupies `basis[k*2N .. (k+1)*2N]`.
    pub basis: Vec<f64>,
    pub log_norms: Vec<f64>,
    pub renorm_count: u64,
}

impl TangentFrame {
    pub fn identity(n: usize) -> Self {
        let d = 2 * n;
        let mut basis = vec![0.0; d * d];
        for k in 0..d {
            basis[k * d + k] = 1.0;
        }
        Self {
            dim: n,
            basis,
            log_norms: vec![0.0; d],
            renorm_count: 0,
        }
    }

    /// Modified Gram-Schmidt; adds ln‖·‖ of each orthogonalized vector to
    /// `log_norms`. Returns the largest stretch factor seen.
    pub fn renormalize(&mut self) -> Result<f64, OracleError> {
        let d = 2 * self.dim;
        let mut largest = 0.0_f64;
        for k in 0..d {
            for j in 0..k {
                let (head, tail) = self.basis.split_at_mut(k * d);
                let vj = &head[j * d..(j + 1) * d];
                let vk = &mut tail[..d];
                let dot: f64 = vj.iter().zip(vk.iter()).map(|(a, b)| a * b).sum();
                for (x, y) in vk.iter_mut().zip(vj) {
                    *x -= dot * y;
                }
            }
            let vk = &mut self.basis[k * d..(k + 1) * d];
            let norm = vk.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm.is_finite() && norm > 0.0) {
                return Err(OracleError::Overflow);
            }
            for x in vk.iter_mut() {
                *x /= norm;
            }
            self.log_norms[k] += norm.ln();
            largest = largest.max(norm);
        }
        self.renorm_count += 1;
        Ok(largest)
    }

    /// max |⟨vᵢ, vⱼ⟩ − δᵢⱼ|
    pub fn gram_residual(&self) -> f64 {
        let d = 2 * self.dim;
        let mut worst = 0.0_f64;
        for i in 0..d {
            for j in 0..d {
                let dot: f64 = (0..d).map(|r| self.basis[i * d + r] * self.basis[j * d + r]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }
}

/// δ̇ = J·K·δ with J = (0, I; −I, 0).
pub fn tangent_rhs(k: &HessianBlocks, delta: &[f64], out: &mut [f64]) {
    let n = k.dim();
    let (dq, dp) = delta.split_at(n);
    for i in 0..n {
        let mut a = 0.0;
        let mut b = 0.0;
        for j in 0..n {
            // K₂₁ = K₁₂ᵀ
            a += k.k12.get(j, i) * dq[j] + k.k22.get(i, j) * dp[j];
            b += k.k11.get(i, j) * dq[j] + k.k12.get(i, j) * dp[j];
        }
        out[i] = a;
        out[n + i] = -b;
    }
}

#[derive(Debug, Clone)]
pub struct OracleOptions {
    /// Total time (continuous) or number of kicks (kicked).
    pub horizon: f64,
    pub dt: f64,
    /// Initial renormalization interval, in time units or kicks.
    pub renorm_interval: f64,
    pub sample_every: f64,
    pub escape_bound: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            horizon: 100.0,
            dt: 1e-3,
            renorm_interval: 1.0,
            sample_every: 0.0,
            escape_bound: crate::riccati::DEFAULT_ESCAPE_BOUND,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpectrumSample {
    pub t: f64,
    pub exponents: Vec<f64>,
    pub k_oracle: f64,
}

#[derive(Debug, Clone)]
pub struct Spectrum {
    /// Gram-Schmidt order, which is descending for converged runs.
    pub exponents: Vec<f64>,
    /// Standard error of each exponent from block averaging.
    pub errors: Vec<f64>,
    /// Sum of the positive exponents.
    pub k_oracle: f64,
    pub k_error: f64,
    /// λᵢ + λ₂ₙ₊₁₋ᵢ with block standard errors, i = 1..N.
    pub pair_sums: Vec<(f64, f64)>,
    pub total_sum: f64,
    pub elapsed: f64,
    pub renorm_count: u64,
    /// Interval in force at the end, after any shortening.
    pub final_interval: f64,
    pub samples: Vec<SpectrumSample>,
}

impl Spectrum {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let d = self.exponents.len();
        write!(w, "t")?;
        for i in 1..=d {
            write!(w, ",lambda{i}")?;
        }
        writeln!(w, ",k_oracle")?;
        for s in &self.samples {
            write!(w, "{:.10e}", s.t)?;
            for l in &s.exponents {
                write!(w, ",{l:.12e}")?;
            }
            writeln!(w, ",{:.12e}", s.k_oracle)?;
        }
        Ok(())
    }
}

/// System whose spectrum is requested.
pub enum OracleSystem<'a> {
    Continuous(&'a dyn Hamiltonian),
    Kicked(&'a KickedModel),
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Accumulates block statistics and the final summary.
struct Ledger {
    dims: usize,
    block_len: f64,
    next_block: f64,
    last_logs: Vec<f64>,
    last_time: f64,
    block_rates: Vec<Vec<f64>>,
    samples: Vec<SpectrumSample>,
    sample_every: f64,
    next_sample: f64,
}

impl Ledger {
    fn new(dims: usize, horizon: f64, sample_every: f64) -> Self {
        Self {
            dims,
            block_len: horizon / BLOCKS as f64,
            next_block: horizon / BLOCKS as f64,
            last_logs: vec![0.0; dims],
            last_time: 0.0,
            block_rates: Vec::new(),
            samples: Vec::new(),
            sample_every,
            next_sample: sample_every,
        }
    }

    fn positive_sum(exps: &[f64]) -> f64 {
        exps.iter().filter(|&&l| l > 0.0).sum()
    }

    fn observe(&mut self, t: f64, logs: &[f64]) {
        if t + 1e-9 * self.block_len >= self.next_block {
            let span = t - self.last_time;
            let rates = logs.iter().zip(&self.last_logs).map(|(a, b)| (a - b) / span).collect();
            self.block_rates.push(rates);
            self.last_logs = logs.to_vec();
            self.last_time = t;
            self.next_block += self.block_len;
        }
        if self.sample_every > 0.0 && t + 1e-9 >= self.next_sample {
            let exponents: Vec<f64> = logs.iter().map(|l| l / t).collect();
            self.samples.push(SpectrumSample {
                t,
                k_oracle: Self::positive_sum(&exponents),
                exponents,
            });
            self.next_sample += self.sample_every;
        }
    }

    fn finish(self, t: f64, frame: &TangentFrame, interval: f64) -> Spectrum {
        let d = self.dims;
        let exponents: Vec<f64> = frame.log_norms.iter().map(|l| l / t).collect();
        let column = |i: usize| -> Vec<f64> { self.block_rates.iter().map(|r| r[i]).collect() };
        let errors = (0..d).map(|i| mean_and_se(&column(i)).1).collect();
        let positive: Vec<usize> = (0..d).filter(|&i| exponents[i] > 0.0).collect();
        let k_oracle = positive.iter().map(|&i| exponents[i]).sum();
        let k_blocks: Vec<f64> = self
            .block_rates
            .iter()
            .map(|r| positive.iter().map(|&i| r[i]).sum())
            .collect();
        let k_error = mean_and_se(&k_blocks).1;
        let pair_sums = (0..d / 2)
            .map(|i| {
                let blocks: Vec<f64> = self.block_rates.iter().map(|r| r[i] + r[d - 1 - i]).collect();
                (exponents[i] + exponents[d - 1 - i], mean_and_se(&blocks).1)
            })
            .collect();
        Spectrum {
            total_sum: exponents.iter().sum(),
            exponents,
            errors,
            k_oracle,
            k_error,
            pair_sums,
            elapsed: t,
            renorm_count: frame.renorm_count,
            final_interval: interval,
            samples: self.samples,
        }
    }
}

/// Lyapunov spectrum and KS sum for a continuous or kicked system.
pub fn spectrum(
    system: OracleSystem<'_>,
    q0: &[f64],
    p0: &[f64],
    opts: &OracleOptions,
) -> Result<Spectrum, OracleError> {
    if !(opts.horizon > 0.0) {
        return Err(OracleError::InvalidOptions("horizon must be positive".into()));
    }
    if !(opts.renorm_interval > 0.0) {
        return Err(OracleError::InvalidOptions("renorm interval must be positive".into()));
    }
    match system {
        OracleSystem::Continuous(model) => continuous_spectrum(model, q0, p0, opts),
        OracleSystem::Kicked(model) => kicked_spectrum(model, q0, p0, opts),
    }
}

fn continuous_spectrum(
    model: &dyn Hamiltonian,
    q0: &[f64],
    p0: &[f64],
    opts: &OracleOptions,
) -> Result<Spectrum, OracleError> {
    let n = model.dim();
    if q0.len() != n || p0.len() != n {
        return Err(OracleError::Dimension {
            expected: n,
            actual: q0.len().max(p0.len()),
        });
    }
    if !(opts.dt > 0.0) {
        return Err(OracleError::InvalidOptions("dt must be positive".into()));
    }
    let d = 2 * n;
    let len = d + d * d;
    let mut y = vec![0.0; len];
    y[..n].copy_from_slice(q0);
    y[n..d].copy_from_slice(p0);
    let mut frame = TangentFrame::identity(n);
    y[d..].copy_from_slice(&frame.basis);

    let steps = (opts.horizon / opts.dt).round().max(1.0) as u64;
    let mut interval_steps = ((opts.renorm_interval / opts.dt).round() as u64).max(1);
    let mut since_renorm = 0u64;
    let mut rk = Rk4::new(len);
    let mut ledger = Ledger::new(d, steps as f64 * opts.dt, opts.sample_every);

    let mut rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        let (q, rest) = y.split_at(n);
        let p = &rest[..n];
        let (vel, blocks) = model.velocity_and_hessian(q, p, t);
        dy[..n].copy_from_slice(&vel.dq);
        dy[n..d].copy_from_slice(&vel.dp);
        for k in 0..d {
            let off = d + k * d;
            tangent_rhs(&blocks, &y[off..off + d], &mut dy[off..off + d]);
        }
    };

    for step in 1..=steps {
        let t0 = (step - 1) as f64 * opts.dt;
        rk.step(&mut rhs, t0, &mut y, opts.dt);
        let t = step as f64 * opts.dt;
        since_renorm += 1;
        let norm = y[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm <= opts.escape_bound) {
            return Err(OracleError::Escape { t });
        }
        if since_renorm >= interval_steps || step == steps {
            frame.basis.copy_from_slice(&y[d..]);
            let stretch = frame.renormalize()?;
            y[d..].copy_from_slice(&frame.basis);
            since_renorm = 0;
            if stretch > MAX_STRETCH && interval_steps > 1 {
                interval_steps = (interval_steps / 2).max(1);
            }
            ledger.observe(t, &frame.log_norms);
        }
    }
    let t = steps as f64 * opts.dt;
    Ok(ledger.finish(t, &frame, interval_steps as f64 * opts.dt))
}

fn kicked_spectrum(model: &KickedModel, q0: &[f64], p0: &[f64], opts: &OracleOptions) -> Result<Spectrum, OracleError> {
    let n = model.dim();
    if q0.len() != n || p0.len() != n {
        return Err(OracleError::Dimension {
            expected: n,
            actual: q0.len().max(p0.len()),
        });
    }
    let d = 2 * n;
    let period = model.period;
    let kicks = opts.horizon.round().max(1.0) as u64;
    let mut interval = (opts.renorm_interval.round() as u64).max(1);
    let mut q = q0.to_vec();
    let mut p = p0.to_vec();
    let mut frame = TangentFrame::identity(n);
    let mut ledger = Ledger::new(d, kicks as f64 * period, opts.sample_every * period);
    let mut since = 0u64;
    let mut scratch = vec![0.0; n];

    for kick in 1..=kicks {
        for i in 0..n {
            q[i] += p[i] * period;
        }
        let f = model.kick.eval(&q);
        for i in 0..n {
            p[i] -= f.gradient[i];
        }
        if !(model.excursion(&q, &p) <= opts.escape_bound) {
            return Err(OracleError::Escape {
                t: kick as f64 * period,
            });
        }
        for k in 0..d {
            let v = &mut frame.basis[k * d..(k + 1) * d];
            let (dq, dp) = v.split_at_mut(n);
            for i in 0..n {
                dq[i] += period * dp[i];
            }
            for i in 0..n {
                scratch[i] = (0..n).map(|j| f.hessian.get(i, j) * dq[j]).sum();
            }
            for i in 0..n {
                dp[i] -= scratch[i];
            }
        }
        since += 1;
        if since >= interval || kick == kicks {
            let stretch = frame.renormalize()?;
            since = 0;
            if stretch > MAX_STRETCH && interval > 1 {
                interval = (interval / 2).max(1);
            }
            ledger.observe(kick as f64 * period, &frame.log_norms);
        }
    }
    let t = kicks as f64 * period;
    Ok(ledger.finish(t, &frame, interval as f64))
}
