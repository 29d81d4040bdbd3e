//! Fixed-step classical Runge-Kutta shared by the Riccati engine and the
//! tangent-space oracle, an adaptive Dormand-Prince stepper for MB orbits,
//! and compensated summation.

/// Scratch buffers for [`Rk4::step`], sized once per state length.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(len: usize) -> Self {
        Self {
            k1: vec![0.0; len],
            k2: vec![0.0; len],
            k3: vec![0.0; len],
            k4: vec![0.0; len],
            tmp: vec![0.0; len],
        }
    }

    /// Advances `y` from `t` to `t + h`; `f(t, y, dy)` writes the derivative.
    pub fn step<F>(&mut self, f: &mut F, t: f64, y: &mut [f64], h: f64)
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let n = y.len();
        f(t, y, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * h * self.k1[i];
        }
        f(t + 0.5 * h, &self.tmp, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * h * self.k2[i];
        }
        f(t + 0.5 * h, &self.tmp, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = y[i] + h * self.k3[i];
        }
        f(t + h, &self.tmp, &mut self.k4);
        for i in 0..n {
            y[i] += h / 6.0 * (self.k1[i] + 2.0 * (self.k2[i] + self.k3[i]) + self.k4[i]);
        }
    }
}

/// Adaptive Dormand-Prince 5(4) with mixed absolute/relative error control.
#[derive(Debug, Clone)]
pub struct DormandPrince {
    pub atol: f64,
    pub rtol: f64,
    /// Smallest step accepted before giving up.
    pub h_min: f64,
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y5: Vec<f64>,
}

/// The step size fell below `h_min` at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepUnderflow {
    pub t: f64,
}

const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

impl DormandPrince {
    pub fn new(len: usize, atol: f64, rtol: f64) -> Self {
        Self {
            atol,
            rtol,
            h_min: 1e-14,
            k: std::array::from_fn(|_| vec![0.0; len]),
            tmp: vec![0.0; len],
            y5: vec![0.0; len],
        }
    }

    /// Advances `y` from `t0` to exactly `t1`, starting with step `h` and
    /// returning the step size to try next. Counts accepted steps in `steps`.
    pub fn integrate<F>(
        &mut self,
        f: &mut F,
        t0: f64,
        t1: f64,
        y: &mut [f64],
        mut h: f64,
        steps: &mut u64,
    ) -> Result<f64, StepUnderflow>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let n = y.len();
        let mut t = t0;
        let span = t1 - t0;
        if span <= 0.0 {
            return Ok(h);
        }
        h = h.min(span).max(self.h_min);
        f(t, y, &mut self.k[0]);
        loop {
            let last = t + h >= t1 - 1e-14 * span.abs().max(1.0);
            let h_try = if last { t1 - t } else { h };
            for s in 1..7 {
                let (done, rest) = self.k.split_at_mut(s);
                for i in 0..n {
                    self.tmp[i] = y[i] + h_try * (0..s).map(|j| DP_A[s][j] * done[j][i]).sum::<f64>();
                }
                f(t + DP_C[s] * h_try, &self.tmp, &mut rest[0]);
            }
            let mut err = 0.0_f64;
            for i in 0..n {
                let mut y5 = y[i];
                let mut e = 0.0;
                for s in 0..7 {
                    y5 += h_try * DP_B[s] * self.k[s][i];
                    e += h_try * DP_E[s] * self.k[s][i];
                }
                self.y5[i] = y5;
                let scale = self.atol + self.rtol * y[i].abs().max(y5.abs());
                let r = (e / scale).abs();
                // NaN must win, which f64::max would not do
                if !(r <= err) {
                    err = r;
                }
            }
            if err <= 1.0 && err.is_finite() {
                t = if last { t1 } else { t + h_try };
                y.copy_from_slice(&self.y5);
                // first-same-as-last: stage 7 was evaluated at the new point
                let (first, rest) = self.k.split_at_mut(6);
                first[0].copy_from_slice(&rest[0]);
                *steps += 1;
                let grow = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                h = h_try * grow;
                if last {
                    return Ok(h.max(self.h_min));
                }
            } else {
                let shrink = if err.is_finite() {
                    (0.9 * err.powf(-0.25)).clamp(0.1, 0.5)
                } else {
                    0.1
                };
                h = h_try * shrink;
                if h < self.h_min {
                    return Err(StepUnderflow { t });
                }
            }
        }
    }
}

/// Neumaier compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}
