//! Catalog of compiled-in dynamical systems.
//!
//! Continuous models implement [`Hamiltonian`]; the common `p²/2 + V(q,t)`
//! case goes through [`StandardForm`] over a [`Potential`]. Kicked models are
//! a [`Kick`] function applied every `period` with free flight in between.

use rand::Rng;
use thiserror::Error;

use crate::matkernel::{sym_eigen, MatError, Matrix, SymMatrix};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown model {0:?}")]
    UnknownModel(String),
    #[error("frequency matrix must be positive definite (smallest eigenvalue {0:.3e})")]
    NotPositiveDefinite(f64),
    #[error("kick period must be positive, got {0}")]
    BadPeriod(f64),
    #[error("model {model} expects dimension {expected}, got {actual}")]
    Dimension {
        model: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("energy {energy} is below the potential minimum found by the sampler")]
    EnergyUnreachable { energy: f64 },
    #[error(transparent)]
    Linear(#[from] MatError),
}

/// Value, gradient and Hessian of a scalar function of position.
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: SymMatrix,
}

pub trait Potential: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, q: &[f64], t: f64) -> ScalarField;
    fn is_autonomous(&self) -> bool {
        true
    }
}

/// Second derivatives ∇ξ∇ξH split into N×N blocks; K₂₁ = K₁₂ᵀ.
#[derive(Debug, Clone)]
pub struct HessianBlocks {
    pub k11: SymMatrix,
    pub k12: Matrix,
    pub k22: SymMatrix,
}

impl HessianBlocks {
    pub fn standard(k11: SymMatrix) -> Self {
        let n = k11.order();
        Self {
            k11,
            k12: Matrix::zeros(n),
            k22: SymMatrix::identity(n),
        }
    }

    pub fn k21(&self) -> Matrix {
        self.k12.transpose()
    }

    pub fn dim(&self) -> usize {
        self.k11.order()
    }

    /// Full 2N×2N Hessian.
    pub fn full(&self) -> Matrix {
        let n = self.dim();
        Matrix::from_fn(2 * n, |i, j| match (i < n, j < n) {
            (true, true) => self.k11.get(i, j),
            (true, false) => self.k12.get(i, j - n),
            (false, true) => self.k12.get(j, i - n),
            (false, false) => self.k22.get(i - n, j - n),
        })
    }

    /// Blocks after the phase-space rotation q' = c q + s p, p' = −s q + c p
    /// (orthogonal and symplectic, so K' = R K Rᵀ).
    pub fn rotated(&self, angle: f64) -> HessianBlocks {
        if angle == 0.0 {
            return self.clone();
        }
        let (s, c) = angle.sin_cos();
        let k12 = &self.k12;
        let k21 = self.k21();
        let k11 = self.k11.to_dense();
        let k22 = self.k22.to_dense();
        let cross = k12 + &k21;
        let new11 = &(&k11.scale(c * c) + &cross.scale(c * s)) + &k22.scale(s * s);
        let new22 = &(&k11.scale(s * s) - &cross.scale(c * s)) + &k22.scale(c * c);
        let new12 = &(&(&k22 - &k11).scale(c * s) + &k12.scale(c * c)) - &k21.scale(s * s);
        HessianBlocks {
            k11: SymMatrix::symmetric_part(&new11),
            k12: new12,
            k22: SymMatrix::symmetric_part(&new22),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HamiltonianKind {
    StandardForm,
    General,
}

/// Right-hand side of Hamilton's equations.
#[derive(Debug, Clone)]
pub struct PhaseVelocity {
    pub dq: Vec<f64>,
    pub dp: Vec<f64>,
}

pub trait Hamiltonian: Send + Sync {
    fn dim(&self) -> usize;
    fn kind(&self) -> HamiltonianKind;
    fn is_autonomous(&self) -> bool;
    fn energy(&self, q: &[f64], p: &[f64], t: f64) -> f64;
    fn velocity(&self, q: &[f64], p: &[f64], t: f64) -> PhaseVelocity;
    fn hessian_blocks(&self, q: &[f64], p: &[f64], t: f64) -> HessianBlocks;

    /// Velocity and Hessian together; standard-form models evaluate the
    /// potential once.
    fn velocity_and_hessian(&self, q: &[f64], p: &[f64], t: f64) -> (PhaseVelocity, HessianBlocks) {
        (self.velocity(q, p, t), self.hessian_blocks(q, p, t))
    }
}

/// H = p²/2 + V(q, t).
pub struct StandardForm<P> {
    pub potential: P,
}

impl<P: Potential> StandardForm<P> {
    pub fn new(potential: P) -> Self {
        Self { potential }
    }
}

impl<P: Potential> Hamiltonian for StandardForm<P> {
    fn dim(&self) -> usize {
        self.potential.dim()
    }

    fn kind(&self) -> HamiltonianKind {
        HamiltonianKind::StandardForm
    }

    fn is_autonomous(&self) -> bool {
        self.potential.is_autonomous()
    }

    fn energy(&self, q: &[f64], p: &[f64], t: f64) -> f64 {
        0.5 * p.iter().map(|x| x * x).sum::<f64>() + self.potential.eval(q, t).value
    }

    fn velocity(&self, q: &[f64], p: &[f64], t: f64) -> PhaseVelocity {
        let v = self.potential.eval(q, t);
        PhaseVelocity {
            dq: p.to_vec(),
            dp: v.gradient.iter().map(|g| -g).collect(),
        }
    }

    fn hessian_blocks(&self, q: &[f64], _p: &[f64], t: f64) -> HessianBlocks {
        HessianBlocks::standard(self.potential.eval(q, t).hessian)
    }

    fn velocity_and_hessian(&self, q: &[f64], p: &[f64], t: f64) -> (PhaseVelocity, HessianBlocks) {
        let v = self.potential.eval(q, t);
        (
            PhaseVelocity {
                dq: p.to_vec(),
                dp: v.gradient.iter().map(|g| -g).collect(),
            },
            HessianBlocks::standard(v.hessian),
        )
    }
}

/// A model seen through a fixed canonical rotation of every (qᵢ, pᵢ) plane.
///
/// The result is a general-kind Hamiltonian with non-zero K₁₂ even when the
/// inner model is standard form; it has the same Lyapunov spectrum.
pub struct CanonicalRotation<H> {
    pub inner: H,
    pub angle: f64,
}

impl<H: Hamiltonian> CanonicalRotation<H> {
    pub fn new(inner: H, angle: f64) -> Self {
        Self { inner, angle }
    }

    /// Coordinates of the inner model from rotated ones.
    fn inner_coords(&self, q: &[f64], p: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (s, c) = self.angle.sin_cos();
        let qi = q.iter().zip(p).map(|(a, b)| c * a - s * b).collect();
        let pi = q.iter().zip(p).map(|(a, b)| s * a + c * b).collect();
        (qi, pi)
    }

    pub fn to_rotated(&self, q: &[f64], p: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (s, c) = self.angle.sin_cos();
        let qr = q.iter().zip(p).map(|(a, b)| c * a + s * b).collect();
        let pr = q.iter().zip(p).map(|(a, b)| -s * a + c * b).collect();
        (qr, pr)
    }
}

impl<H: Hamiltonian> Hamiltonian for CanonicalRotation<H> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn kind(&self) -> HamiltonianKind {
        HamiltonianKind::General
    }

    fn is_autonomous(&self) -> bool {
        self.inner.is_autonomous()
    }

    fn energy(&self, q: &[f64], p: &[f64], t: f64) -> f64 {
        let (qi, pi) = self.inner_coords(q, p);
        self.inner.energy(&qi, &pi, t)
    }

    fn velocity(&self, q: &[f64], p: &[f64], t: f64) -> PhaseVelocity {
        let (qi, pi) = self.inner_coords(q, p);
        let v = self.inner.velocity(&qi, &pi, t);
        let (dq, dp) = self.to_rotated(&v.dq, &v.dp);
        PhaseVelocity { dq, dp }
    }

    fn hessian_blocks(&self, q: &[f64], p: &[f64], t: f64) -> HessianBlocks {
        let (qi, pi) = self.inner_coords(q, p);
        self.inner.hessian_blocks(&qi, &pi, t).rotated(self.angle)
    }
}

fn check_dim(model: &'static str, expected: usize, q: &[f64]) {
    assert_eq!(q.len(), expected, "{model}: dimension mismatch");
}

/// −½[(q₁−q₂)² + (q₂−q₃)² + (q₃−q₁)²] + Σ cᵢ qᵢ⁴
fn coupled_quartic(q: &[f64], coeffs: [f64; 3]) -> ScalarField {
    let d12 = q[0] - q[1];
    let d23 = q[1] - q[2];
    let d31 = q[2] - q[0];
    let mut value = -0.5 * (d12 * d12 + d23 * d23 + d31 * d31);
    let mut gradient = vec![-(d12 - d31), -(d23 - d12), -(d31 - d23)];
    let mut hessian = SymMatrix::from_fn(3, |i, j| if i == j { -2.0 } else { 1.0 });
    for i in 0..3 {
        let x = q[i];
        value += coeffs[i] * x.powi(4);
        gradient[i] += 4.0 * coeffs[i] * x.powi(3);
        hessian.set(i, i, hessian.get(i, i) + 12.0 * coeffs[i] * x * x);
    }
    ScalarField {
        value,
        gradient,
        hessian,
    }
}

/// Three coupled anharmonic oscillators with quartic weights (1, 2, 3).
#[derive(Debug, Clone, Copy, Default)]
pub struct Quartic3;

impl Potential for Quartic3 {
    fn dim(&self) -> usize {
        3
    }

    fn eval(&self, q: &[f64], _t: f64) -> ScalarField {
        check_dim("quartic3", 3, q);
        coupled_quartic(q, [1.0, 2.0, 3.0])
    }
}

/// V = ½ qᵀΩ²q with constant positive-definite Ω².
#[derive(Debug, Clone)]
pub struct Quadratic {
    omega_sq: SymMatrix,
    frequencies: Vec<f64>,
}

impl Quadratic {
    pub fn new(omega_sq: SymMatrix) -> Result<Self, ModelError> {
        let eig = sym_eigen(&omega_sq)?;
        let smallest = *eig.values.last().expect("order ≥ 1");
        if smallest <= 0.0 {
            return Err(ModelError::NotPositiveDefinite(smallest));
        }
        let frequencies = eig.values.iter().map(|l| l.sqrt()).collect();
        Ok(Self { omega_sq, frequencies })
    }

    pub fn isotropic(n: usize, omega: f64) -> Result<Self, ModelError> {
        Self::new(SymMatrix::scalar(n, omega * omega))
    }

    /// Characteristic frequencies, descending.
    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn omega_sq(&self) -> &SymMatrix {
        &self.omega_sq
    }
}

impl Potential for Quadratic {
    fn dim(&self) -> usize {
        self.omega_sq.order()
    }

    fn eval(&self, q: &[f64], _t: f64) -> ScalarField {
        let gradient = self.omega_sq.mul_vec(q);
        let value = 0.5 * q.iter().zip(&gradient).map(|(a, b)| a * b).sum::<f64>();
        ScalarField {
            value,
            gradient,
            hessian: self.omega_sq.clone(),
        }
    }
}

/// Builds the standard-form model V = ½qᵀΩ²q.
pub fn quadratic_model(omega_sq: SymMatrix) -> Result<StandardForm<Quadratic>, ModelError> {
    Ok(StandardForm::new(Quadratic::new(omega_sq)?))
}

/// V = −q²/2: σ(t) = tanh t and a Lyapunov pair ±1.
#[derive(Debug, Clone, Copy, Default)]
pub struct InvertedOscillator;

impl Potential for InvertedOscillator {
    fn dim(&self) -> usize {
        1
    }

    fn eval(&self, q: &[f64], _t: f64) -> ScalarField {
        check_dim("inverted-1d", 1, q);
        ScalarField {
            value: -0.5 * q[0] * q[0],
            gradient: vec![-q[0]],
            hessian: SymMatrix::scalar(1, -1.0),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Free {
    pub dim: usize,
}

impl Potential for Free {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, _q: &[f64], _t: f64) -> ScalarField {
        ScalarField {
            value: 0.0,
            gradient: vec![0.0; self.dim],
            hessian: SymMatrix::zeros(self.dim),
        }
    }
}

/// Kick potential f(q) applied as f(q)·Σδ(t − nT).
pub trait Kick: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, q: &[f64]) -> ScalarField;

    /// Period in each coordinate when f is periodic; positions then never
    /// count toward the escape bound.
    fn angle_period(&self) -> Option<f64> {
        None
    }
}

/// Coupled quartic kick with unit quartic weights.
#[derive(Debug, Clone, Copy, Default)]
pub struct KickedQuartic;

impl Kick for KickedQuartic {
    fn dim(&self) -> usize {
        3
    }

    fn eval(&self, q: &[f64]) -> ScalarField {
        check_dim("kicked-quartic", 3, q);
        coupled_quartic(q, [1.0, 1.0, 1.0])
    }
}

/// f(q) = K cos q, the kicked rotor.
#[derive(Debug, Clone, Copy)]
pub struct RotorKick {
    pub strength: f64,
}

/// (f, ∇f, ∇∇f) for the rotor kick.
pub fn rotor_kick(q: f64, strength: f64) -> (f64, f64, f64) {
    let (s, c) = q.sin_cos();
    (strength * c, -strength * s, -strength * c)
}

impl Kick for RotorKick {
    fn dim(&self) -> usize {
        1
    }

    fn eval(&self, q: &[f64]) -> ScalarField {
        check_dim("rotor", 1, q);
        let (f, g, h) = rotor_kick(q[0], self.strength);
        ScalarField {
            value: f,
            gradient: vec![g],
            hessian: SymMatrix::scalar(1, h),
        }
    }

    fn angle_period(&self) -> Option<f64> {
        Some(std::f64::consts::TAU)
    }
}

/// f(q) = ½ qᵀAq with constant curvature A (any sign).
#[derive(Debug, Clone)]
pub struct QuadraticKick {
    pub curvature: SymMatrix,
}

impl Kick for QuadraticKick {
    fn dim(&self) -> usize {
        self.curvature.order()
    }

    fn eval(&self, q: &[f64]) -> ScalarField {
        let gradient = self.curvature.mul_vec(q);
        let value = 0.5 * q.iter().zip(&gradient).map(|(a, b)| a * b).sum::<f64>();
        ScalarField {
            value,
            gradient,
            hessian: self.curvature.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FreeKick {
    pub dim: usize,
}

impl Kick for FreeKick {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, _q: &[f64]) -> ScalarField {
        ScalarField {
            value: 0.0,
            gradient: vec![0.0; self.dim],
            hessian: SymMatrix::zeros(self.dim),
        }
    }
}

/// Free motion interrupted every `period` by a kick.
pub struct KickedModel {
    pub kick: Box<dyn Kick>,
    pub period: f64,
}

impl KickedModel {
    pub fn new(kick: Box<dyn Kick>, period: f64) -> Result<Self, ModelError> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(ModelError::BadPeriod(period));
        }
        Ok(Self { kick, period })
    }

    pub fn dim(&self) -> usize {
        self.kick.dim()
    }

    /// Largest of ‖q‖∞ (non-periodic kicks only) and ‖p‖∞.
    pub fn excursion(&self, q: &[f64], p: &[f64]) -> f64 {
        let pm = p.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if self.kick.angle_period().is_some() {
            return pm;
        }
        q.iter().fold(pm, |m, v| m.max(v.abs()))
    }
}

/// Name → continuous model. `param` is the frequency for "quadratic"
/// (isotropic, dimension `dim`) and ignored elsewhere.
pub fn continuous_model(name: &str, dim: usize, param: f64) -> Result<Box<dyn Hamiltonian>, ModelError> {
    Ok(match name {
        "quartic3" => Box::new(StandardForm::new(Quartic3)),
        "inverted-1d" => Box::new(StandardForm::new(InvertedOscillator)),
        "free" => Box::new(StandardForm::new(Free { dim })),
        "quadratic" => Box::new(StandardForm::new(Quadratic::isotropic(dim, param)?)),
        other => return Err(ModelError::UnknownModel(other.to_string())),
    })
}

/// Name → potential of a standard-form continuous model, with the same
/// names and `param` meaning as [`continuous_model`].
pub fn continuous_potential(name: &str, dim: usize, param: f64) -> Result<Box<dyn Potential>, ModelError> {
    Ok(match name {
        "quartic3" => Box::new(Quartic3),
        "inverted-1d" => Box::new(InvertedOscillator),
        "free" => Box::new(Free { dim }),
        "quadratic" => Box::new(Quadratic::isotropic(dim, param)?),
        other => return Err(ModelError::UnknownModel(other.to_string())),
    })
}

/// Name → kick function. `param` is K for "rotor" and the constant curvature
/// for "quadratic-kick".
pub fn kick_function(name: &str, dim: usize, param: f64) -> Result<Box<dyn Kick>, ModelError> {
    Ok(match name {
        "kicked-quartic" => Box::new(KickedQuartic),
        "rotor" => Box::new(RotorKick { strength: param }),
        "quadratic-kick" => Box::new(QuadraticKick {
            curvature: SymMatrix::scalar(dim, param),
        }),
        "free" => Box::new(FreeKick { dim }),
        other => return Err(ModelError::UnknownModel(other.to_string())),
    })
}

/// Draws (q, p) with H(q, p) = `energy` for a standard-form potential:
/// q uniform over the allowed part of the box |qᵢ| ≤ `half_width`, p uniform
/// in direction with |p| = √(2(E − V)).
pub fn sample_energy_surface<P: Potential + ?Sized, R: Rng>(
    potential: &P,
    energy: f64,
    half_width: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    let n = potential.dim();
    for _ in 0..1_000_000 {
        let q: Vec<f64> = (0..n).map(|_| rng.random_range(-half_width..half_width)).collect();
        let v = potential.eval(&q, 0.0).value;
        if v >= energy {
            continue;
        }
        let dir = loop {
            let d: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let r2: f64 = d.iter().map(|x| x * x).sum();
            if r2 > 1e-4 && r2 <= 1.0 {
                let r = r2.sqrt();
                break d.into_iter().map(|x| x / r).collect::<Vec<_>>();
            }
        };
        let speed = (2.0 * (energy - v)).sqrt();
        let p = dir.into_iter().map(|x| x * speed).collect();
        return Ok((q, p));
    }
    Err(ModelError::EnergyUnreachable { energy })
}

struct KickAsPotential<'a>(&'a dyn Kick);

impl Potential for KickAsPotential<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn eval(&self, q: &[f64], _t: f64) -> ScalarField {
        self.0.eval(q)
    }
}

/// Draws (q, p) for a kicked model on the effective surface
/// T|p|²/2 + f(q) = `energy`, the energy of the flow obtained by rescaling
/// time with √T.
pub fn sample_kicked_surface<R: Rng>(
    model: &KickedModel,
    energy: f64,
    half_width: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    let (q, p) = sample_energy_surface(&KickAsPotential(model.kick.as_ref()), energy, half_width, rng)?;
    let scale = model.period.sqrt().recip();
    Ok((q, p.into_iter().map(|x| x * scale).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quartic3_hand_values() {
        let v = Quartic3.eval(&[0.0, 0.0, 0.0], 0.0);
        assert_eq!(v.value, 0.0);
        assert_eq!(v.gradient, vec![0.0; 3]);
        let v = Quartic3.eval(&[1.0, 0.0, 0.0], 0.0);
        assert_abs_diff_eq!(v.value, 0.0, epsilon = 1e-15);
        let h = Quartic3.eval(&[1.0, 1.0, 1.0], 0.0).hessian;
        assert_eq!(h.get(0, 0), -2.0 + 12.0);
        assert_eq!(h.get(1, 1), -2.0 + 24.0);
        assert_eq!(h.get(2, 2), -2.0 + 36.0);
        assert_eq!(h.get(0, 2), 1.0);
    }

    #[test]
    fn kicked_quartic_hand_values() {
        let f = KickedQuartic.eval(&[0.0; 3]);
        assert_eq!((f.value, f.gradient.clone()), (0.0, vec![0.0; 3]));
        assert_abs_diff_eq!(KickedQuartic.eval(&[1.0, 1.0, 1.0]).value, 3.0);
    }

    #[test]
    fn rotor_kick_values() {
        let k = 2.5;
        assert_eq!(rotor_kick(0.0, k), (k, 0.0, -k));
        let (f, g, h) = rotor_kick(std::f64::consts::FRAC_PI_2, k);
        assert_abs_diff_eq!(f, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g, -k, epsilon = 1e-15);
        assert_abs_diff_eq!(h, 0.0, epsilon = 1e-15);
        for q in [0.3, -1.7, 4.0] {
            let a = rotor_kick(q, k);
            let b = rotor_kick(q + std::f64::consts::TAU, k);
            assert_abs_diff_eq!(a.0, b.0, epsilon = 1e-14);
            assert_abs_diff_eq!(a.1, b.1, epsilon = 1e-14);
        }
    }

    #[test]
    fn quadratic_frequencies() {
        let q = Quadratic::new(SymMatrix::identity(2)).unwrap();
        assert_eq!(q.frequencies(), &[1.0, 1.0]);
        let q = Quadratic::new(SymMatrix::diagonal(&[1.0, 4.0])).unwrap();
        assert_abs_diff_eq!(q.frequencies()[0], 2.0);
        assert_abs_diff_eq!(q.frequencies()[1], 1.0);
        assert!(matches!(
            Quadratic::new(SymMatrix::diagonal(&[1.0, -4.0])),
            Err(ModelError::NotPositiveDefinite(_))
        ));
        assert!(Quadratic::new(SymMatrix::zeros(2)).is_err());
    }

    #[test]
    fn rotated_blocks_stay_symmetric_and_invert() {
        let b = StandardForm::new(Quartic3).hessian_blocks(&[0.3, -0.2, 0.9], &[0.0; 3], 0.0);
        let r = b.rotated(0.7);
        let back = r.rotated(-0.7);
        assert_abs_diff_eq!((&back.k11 - &b.k11).frobenius_norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!((&back.k22 - &b.k22).frobenius_norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!((&back.k12 - &b.k12).frobenius_norm(), 0.0, epsilon = 1e-12);
        // full-matrix route: R K Rᵀ
        let n = 3;
        let (s, c) = 0.7f64.sin_cos();
        let rot = Matrix::from_fn(2 * n, |i, j| {
            let same = i % n == j % n;
            match (i < n, j < n, same) {
                (true, true, true) | (false, false, true) => c,
                (true, false, true) => s,
                (false, true, true) => -s,
                _ => 0.0,
            }
        });
        let expect = rot.mul(&b.full()).mul(&rot.transpose());
        assert_abs_diff_eq!((&expect - &r.full()).frobenius_norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn names_resolve() {
        for name in ["quartic3", "inverted-1d", "free", "quadratic"] {
            assert!(continuous_model(name, 1, 1.0).is_ok(), "{name}");
        }
        for name in ["kicked-quartic", "rotor", "quadratic-kick", "free"] {
            assert!(kick_function(name, 1, 1.0).is_ok(), "{name}");
        }
        assert!(continuous_model("nope", 1, 1.0).is_err());
        assert!(KickedModel::new(Box::new(FreeKick { dim: 1 }), 0.0).is_err());
    }

    #[test]
    fn energy_surface_sample_hits_target() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let h = StandardForm::new(Quartic3);
        for _ in 0..20 {
            let (q, p) = sample_energy_surface(&Quartic3, 1.0, 2.0, &mut rng).unwrap();
            assert_abs_diff_eq!(h.energy(&q, &p, 0.0), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn kicked_surface_samples_hit_the_effective_energy() {
        use rand::SeedableRng;
        let model = KickedModel::new(Box::new(KickedQuartic), 1e-4).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let (q, p) = sample_kicked_surface(&model, 2.0, 2.5, &mut rng).unwrap();
            let kinetic: f64 = p.iter().map(|x| 0.5 * model.period * x * x).sum();
            assert_abs_diff_eq!(kinetic + KickedQuartic.eval(&q).value, 2.0, epsilon = 1e-10);
        }
    }
}
