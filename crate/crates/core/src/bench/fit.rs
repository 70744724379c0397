//! Levenberg-Marquardt least squares for the three calibration line shapes.
//!
//! Data are mapped to unit scale before fitting (x onto `[0, 1]`, y to zero
//! mean and unit spread) and parameters are mapped back afterwards, so the
//! damping and tolerances do not depend on physical units.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

const MAX_ITERATIONS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitKind {
    /// `offset + amplitude / (1 + ((x - center) / width)^2)`, width is the HWHM.
    Lorentzian,
    /// `amplitude * exp(-x / decay) + offset`.
    ExponentialDecay,
    /// `amplitude * cos(2 pi frequency x + phase) + offset`.
    Sinusoid,
}

impl FitKind {
    pub fn parameter_names(self) -> &'static [&'static str] {
        match self {
            FitKind::Lorentzian => &["center", "width", "amplitude", "offset"],
            FitKind::ExponentialDecay => &["amplitude", "decay", "offset"],
            FitKind::Sinusoid => &["amplitude", "frequency", "phase", "offset"],
        }
    }

    pub fn parameter_count(self) -> usize {
        self.parameter_names().len()
    }

    /// Evaluates the model with parameters in the order of
    /// [`parameter_names`](Self::parameter_names).
    pub fn eval(self, params: &[f64], x: f64) -> f64 {
        match self {
            FitKind::Lorentzian => {
                let z = (x - params[0]) / params[1];
                params[3] + params[2] / (1.0 + z * z)
            }
            FitKind::ExponentialDecay => params[0] * (-x / params[1]).exp() + params[2],
            FitKind::Sinusoid => params[0] * (TAU * params[1] * x + params[2]).cos() + params[3],
        }
    }

    /// Value and gradient with respect to the parameters.
    fn eval_with_gradient(self, p: &[f64], x: f64, grad: &mut [f64]) -> f64 {
        match self {
            FitKind::Lorentzian => {
                let z = (x - p[0]) / p[1];
                let d = 1.0 / (1.0 + z * z);
                let dz = -2.0 * p[2] * z * d * d;
                grad[0] = dz * (-1.0 / p[1]);
                grad[1] = dz * (-z / p[1]);
                grad[2] = d;
                grad[3] = 1.0;
                p[3] + p[2] * d
            }
            FitKind::ExponentialDecay => {
                let e = (-x / p[1]).exp();
                grad[0] = e;
                grad[1] = p[0] * e * x / (p[1] * p[1]);
                grad[2] = 1.0;
                p[0] * e + p[2]
            }
            FitKind::Sinusoid => {
                let arg = TAU * p[1] * x + p[2];
                let (s, c) = arg.sin_cos();
                grad[0] = c;
                grad[1] = -p[0] * s * TAU * x;
                grad[2] = -p[0] * s;
                grad[3] = 1.0;
                p[0] * c + p[3]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub kind: FitKind,
    pub params: Vec<f64>,
    /// One standard error per parameter; infinite when not determined.
    pub stderr: Vec<f64>,
    /// Euclidean norm of the residuals in data units.
    pub residual_norm: f64,
    /// Parameters whose standard error exceeds their magnitude.
    pub poorly_determined: Vec<bool>,
    pub iterations: usize,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        let k = self
            .kind
            .parameter_names()
            .iter()
            .position(|n| *n == name)?;
        Some(self.params[k])
    }

    pub fn stderr_of(&self, name: &str) -> Option<f64> {
        let k = self
            .kind
            .parameter_names()
            .iter()
            .position(|n| *n == name)?;
        Some(self.stderr[k])
    }

    pub fn is_poorly_determined(&self, name: &str) -> bool {
        self.kind
            .parameter_names()
            .iter()
            .position(|n| *n == name)
            .is_some_and(|k| self.poorly_determined[k])
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.kind.eval(&self.params, x)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("x and y differ in length")]
    LengthMismatch,
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("no convergence after {} iterations", best.iterations)]
    NoConvergence { best: Box<FitResult> },
}

/// Affine map between data units and unit scale.
#[derive(Debug, Clone, Copy)]
struct Scale {
    x0: f64,
    xs: f64,
    y0: f64,
    ys: f64,
}

impl Scale {
    fn new(xs: &[f64], ys: &[f64]) -> Self {
        let (lo, hi) = xs
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
                (a.min(x), b.max(x))
            });
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let spread = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt();
        let positive = |v: f64| if v > 0.0 && v.is_finite() { v } else { 1.0 };
        Self {
            x0: lo,
            xs: positive(hi - lo),
            y0: mean,
            ys: positive(spread),
        }
    }

    /// Parameters in unit scale to parameters in data units.
    fn unscale(&self, kind: FitKind, p: &[f64]) -> Vec<f64> {
        match kind {
            FitKind::Lorentzian => vec![
                self.x0 + self.xs * p[0],
                self.xs * p[1].abs(),
                self.ys * p[2],
                self.y0 + self.ys * p[3],
            ],
            FitKind::ExponentialDecay => {
                let decay = self.xs * p[1];
                vec![
                    self.ys * p[0] * (self.x0 / decay).exp(),
                    decay,
                    self.y0 + self.ys * p[2],
                ]
            }
            FitKind::Sinusoid => {
                let (mut amplitude, mut phase) = (p[0], p[2]);
                let mut frequency = p[1] / self.xs;
                if frequency < 0.0 {
                    frequency = -frequency;
                    phase = -phase;
                }
                if amplitude < 0.0 {
                    amplitude = -amplitude;
                    phase += PI;
                }
                phase -= TAU * frequency * self.x0;
                vec![
                    self.ys * amplitude,
                    frequency,
                    wrap_phase(phase),
                    self.y0 + self.ys * p[3],
                ]
            }
        }
    }

    /// Standard errors in unit scale to data units (first order).
    fn unscale_stderr(&self, kind: FitKind, p: &[f64], e: &[f64]) -> Vec<f64> {
        match kind {
            FitKind::Lorentzian => vec![
                self.xs * e[0],
                self.xs * e[1],
                self.ys * e[2],
                self.ys * e[3],
            ],
            FitKind::ExponentialDecay => {
                let decay = self.xs * p[1];
                let growth = (self.x0 / decay).exp();
                vec![
                    self.ys * growth * e[0].hypot(p[0] * self.x0 / (self.xs * p[1] * p[1]) * e[1]),
                    self.xs * e[1],
                    self.ys * e[2],
                ]
            }
            FitKind::Sinusoid => vec![
                self.ys * e[0],
                e[1] / self.xs,
                e[2].hypot(TAU * self.x0 / self.xs * e[1]),
                self.ys * e[3],
            ],
        }
    }
}

fn wrap_phase(phase: f64) -> f64 {
    let wrapped = (phase + PI).rem_euclid(TAU) - PI;
    if wrapped <= -PI {
        wrapped + TAU
    } else {
        wrapped
    }
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Starting point in unit scale.
fn initial_guess(kind: FitKind, u: &[f64], v: &[f64]) -> Vec<f64> {
    let n = u.len();
    match kind {
        FitKind::Lorentzian => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| u[a].total_cmp(&u[b]));
            let baseline = median(v);
            let dev: Vec<f64> = order.iter().map(|&k| v[k] - baseline).collect();
            let peak = (0..n)
                .max_by(|&a, &b| dev[a].abs().total_cmp(&dev[b].abs()))
                .unwrap_or(0);
            let half = dev[peak].abs() / 2.0;
            let mut left = peak;
            while left > 0 && dev[left - 1].abs() >= half {
                left -= 1;
            }
            let mut right = peak;
            while right + 1 < n && dev[right + 1].abs() >= half {
                right += 1;
            }
            let step = 1.0 / (n.max(2) - 1) as f64;
            let width = ((u[order[right]] - u[order[left]]) / 2.0).max(step / 2.0);
            vec![u[order[peak]], width, dev[peak], baseline]
        }
        FitKind::ExponentialDecay => {
            let first = (0..n).min_by(|&a, &b| u[a].total_cmp(&u[b])).unwrap_or(0);
            let tail: Vec<usize> = {
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| u[b].total_cmp(&u[a]));
                order.truncate((n / 10).max(1));
                order
            };
            let offset = tail.iter().map(|&k| v[k]).sum::<f64>() / tail.len() as f64;
            // decay at a third of the x range
            vec![v[first] - offset, 1.0 / 3.0, offset]
        }
        FitKind::Sinusoid => {
            let mean = v.iter().sum::<f64>() / n as f64;
            let mut buffer: Vec<Complex<f64>> =
                v.iter().map(|&y| Complex::new(y - mean, 0.0)).collect();
            FftPlanner::new().plan_fft_forward(n).process(&mut buffer);
            let bin = (1..=n / 2)
                .max_by(|&a, &b| buffer[a].norm().total_cmp(&buffer[b].norm()))
                .unwrap_or(1);
            // samples are 1 / (n - 1) apart in unit scale
            let frequency = bin as f64 * (n - 1) as f64 / n as f64;
            let amplitude = 2.0 * buffer[bin].norm() / n as f64;
            vec![amplitude.max(1e-3), frequency, buffer[bin].arg(), mean]
        }
    }
}

struct Problem<'a> {
    kind: FitKind,
    u: &'a [f64],
    v: &'a [f64],
}

impl Problem<'_> {
    fn residuals(&self, p: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.u.len(),
            self.u
                .iter()
                .zip(self.v)
                .map(|(&u, &v)| self.kind.eval(p, u) - v),
        )
    }

    fn jacobian(&self, p: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let m = p.len();
        let mut r = DVector::zeros(self.u.len());
        let mut jac = DMatrix::zeros(self.u.len(), m);
        let mut grad = vec![0.0; m];
        for (row, (&u, &v)) in self.u.iter().zip(self.v).enumerate() {
            r[row] = self.kind.eval_with_gradient(p, u, &mut grad) - v;
            for (col, g) in grad.iter().enumerate() {
                jac[(row, col)] = *g;
            }
        }
        (r, jac)
    }
}

fn cost(r: &DVector<f64>) -> f64 {
    r.norm_squared()
}

/// Standard errors from `s^2 (J^T J)^-1`. Parameters with a vanishing
/// Jacobian column are undetermined and get infinite error.
fn standard_errors(jac: &DMatrix<f64>, residual_sq: f64) -> Vec<f64> {
    let (n, m) = jac.shape();
    let norms: Vec<f64> = (0..m).map(|c| jac.column(c).norm()).collect();
    let largest = norms.iter().cloned().fold(0.0, f64::max);
    let active: Vec<usize> = (0..m)
        .filter(|&c| norms[c] > 1e-10 * largest.max(1e-300))
        .collect();
    let mut errors = vec![f64::INFINITY; m];
    if active.is_empty() || n <= m {
        return errors;
    }
    let sub = DMatrix::from_fn(n, active.len(), |r, c| jac[(r, active[c])]);
    let s2 = residual_sq / (n - m) as f64;
    if let Some(inv) = (sub.transpose() * &sub).try_inverse() {
        for (k, &c) in active.iter().enumerate() {
            let var = s2 * inv[(k, k)];
            errors[c] = if var >= 0.0 {
                var.sqrt()
            } else {
                f64::INFINITY
            };
        }
    }
    errors
}

/// Least-squares fit of `kind` to `(xs, ys)`; needs at least twice as many
/// points as parameters.
pub fn fit_model(kind: FitKind, xs: &[f64], ys: &[f64]) -> Result<FitResult, FitError> {
    if xs.len() != ys.len() {
        return Err(FitError::LengthMismatch);
    }
    let needed = 2 * kind.parameter_count();
    if xs.len() < needed {
        return Err(FitError::TooFewPoints {
            needed,
            got: xs.len(),
        });
    }
    if !xs.iter().chain(ys).all(|v| v.is_finite()) {
        return Err(FitError::NonFinite);
    }

    let scale = Scale::new(xs, ys);
    let u: Vec<f64> = xs.iter().map(|x| (x - scale.x0) / scale.xs).collect();
    let v: Vec<f64> = ys.iter().map(|y| (y - scale.y0) / scale.ys).collect();
    let problem = Problem { kind, u: &u, v: &v };

    let mut p = initial_guess(kind, &u, &v);
    let (mut r, mut jac) = problem.jacobian(&p);
    let mut current = cost(&r);
    let mut lambda = 1e-3;
    let mut converged = current < 1e-28;
    let mut iterations = 0;

    while !converged && iterations < MAX_ITERATIONS {
        iterations += 1;
        let jtj = jac.transpose() * &jac;
        let gradient = jac.transpose() * &r;
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for k in 0..p.len() {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-&gradient)) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let trial_r = problem.residuals(&trial);
            let trial_cost = cost(&trial_r);
            if trial_cost.is_finite() && trial_cost <= current {
                let step_small =
                    step.norm() <= 1e-12 * (1e-12 + DVector::from_vec(p.clone()).norm());
                let gain_small = current - trial_cost <= 1e-14 * current;
                p = trial;
                current = trial_cost;
                (r, jac) = problem.jacobian(&p);
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                converged = step_small || gain_small || current < 1e-28;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no downhill step at any damping: a minimum to working precision
            converged = true;
        }
    }

    let unit_errors = standard_errors(&jac, current);
    let params = scale.unscale(kind, &p);
    let stderr = scale.unscale_stderr(kind, &p, &unit_errors);
    let poorly_determined = params
        .iter()
        .zip(&stderr)
        .map(|(value, error)| !error.is_finite() || *error > value.abs())
        .collect();
    let result = FitResult {
        kind,
        params,
        stderr,
        residual_norm: current.sqrt() * scale.ys,
        poorly_determined,
        iterations,
    };
    if converged {
        Ok(result)
    } else {
        Err(FitError::NoConvergence {
            best: Box::new(result),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|k| a + (b - a) * k as f64 / (n - 1) as f64)
            .collect()
    }

    #[test]
    fn exact_lorentzian_is_recovered() {
        let truth = [5.0012e9, 1.7e6, -0.42, 0.93];
        let xs = linspace(4.98e9, 5.02e9, 201);
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| FitKind::Lorentzian.eval(&truth, x))
            .collect();
        let fit = fit_model(FitKind::Lorentzian, &xs, &ys).unwrap();
        for (got, want) in fit.params.iter().zip(truth) {
            assert!(((got - want) / want).abs() < 1e-6, "{got} vs {want}");
        }
        assert!(fit.residual_norm < 1e-9);
    }

    #[test]
    fn noisy_exponential_decay() {
        let truth = [0.8, 10e-6, 0.1];
        let xs = linspace(0.0, 50e-6, 101);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noise = Normal::new(0.0, 0.01 * truth[0]).unwrap();
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| FitKind::ExponentialDecay.eval(&truth, x) + noise.sample(&mut rng))
            .collect();
        let fit = fit_model(FitKind::ExponentialDecay, &xs, &ys).unwrap();
        let decay = fit.get("decay").unwrap();
        assert!((decay / 10e-6 - 1.0).abs() < 0.05, "decay {decay}");
        assert!(!fit.is_poorly_determined("decay"));
    }

    #[test]
    fn constant_data_flags_the_decay() {
        let xs = linspace(0.0, 50e-6, 60);
        let ys = vec![0.37; 60];
        let fit = fit_model(FitKind::ExponentialDecay, &xs, &ys).unwrap();
        assert!(fit.get("amplitude").unwrap().abs() < 1e-9);
        assert!(fit.is_poorly_determined("decay"));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 1e-3).unwrap();
        let ys: Vec<f64> = (0..60).map(|_| 0.37 + noise.sample(&mut rng)).collect();
        let fit = match fit_model(FitKind::ExponentialDecay, &xs, &ys) {
            Ok(f) => f,
            Err(FitError::NoConvergence { best }) => *best,
            Err(e) => panic!("{e}"),
        };
        // noise alone is best matched by a slow drift whose decay and
        // amplitude trade off against the offset
        assert!(fit.is_poorly_determined("decay"));
        assert!(xs.iter().all(|&x| (fit.eval(x) - 0.37).abs() < 5e-3));
    }

    #[test]
    fn sinusoid_from_spectrum_guess() {
        let truth = [0.35, 1.0, PI, 0.5];
        let xs = linspace(0.0, 1.0, 101);
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| FitKind::Sinusoid.eval(&truth, x))
            .collect();
        let fit = fit_model(FitKind::Sinusoid, &xs, &ys).unwrap();
        assert!((fit.get("frequency").unwrap() - 1.0).abs() < 1e-8);
        assert!((fit.get("amplitude").unwrap() - 0.35).abs() < 1e-8);
        let phase = fit.get("phase").unwrap();
        assert!((wrap_phase(phase - PI)).abs() < 1e-6, "phase {phase}");

        // offset x range and several periods
        let truth = [2.0, 3.7e7, 0.4, -1.0];
        let xs = linspace(20e-9, 180e-9, 121);
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| FitKind::Sinusoid.eval(&truth, x))
            .collect();
        let fit = fit_model(FitKind::Sinusoid, &xs, &ys).unwrap();
        assert!((fit.get("frequency").unwrap() / 3.7e7 - 1.0).abs() < 1e-8);
        for &x in &xs {
            assert!((fit.eval(x) - FitKind::Sinusoid.eval(&truth, x)).abs() < 1e-6);
        }
    }

    #[test]
    fn input_checks() {
        assert_eq!(
            fit_model(FitKind::Lorentzian, &[1.0; 7], &[1.0; 7]),
            Err(FitError::TooFewPoints { needed: 8, got: 7 })
        );
        assert_eq!(
            fit_model(FitKind::Sinusoid, &[0.0; 8], &[1.0; 9]),
            Err(FitError::LengthMismatch)
        );
        let mut ys = vec![1.0; 8];
        ys[3] = f64::NAN;
        assert_eq!(
            fit_model(FitKind::Sinusoid, &linspace(0.0, 1.0, 8), &ys),
            Err(FitError::NonFinite)
        );
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cases: [(FitKind, &[f64]); 3] = [
            (FitKind::Lorentzian, &[0.4, 0.1, -1.2, 0.3]),
            (FitKind::ExponentialDecay, &[1.1, 0.3, -0.2]),
            (FitKind::Sinusoid, &[0.7, 2.3, 0.4, 0.1]),
        ];
        for (kind, p) in cases {
            for &x in &[0.0, 0.3, 0.77] {
                let mut grad = vec![0.0; p.len()];
                kind.eval_with_gradient(p, x, &mut grad);
                for k in 0..p.len() {
                    let h = 1e-6;
                    let mut hi = p.to_vec();
                    let mut lo = p.to_vec();
                    hi[k] += h;
                    lo[k] -= h;
                    let numeric = (kind.eval(&hi, x) - kind.eval(&lo, x)) / (2.0 * h);
                    assert!((numeric - grad[k]).abs() < 1e-6, "{kind:?} {k}");
                }
            }
        }
    }
}
