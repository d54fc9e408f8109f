//! Damped-cosine fitting and ensemble-size estimates.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector, Matrix5, Vector5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Executor;

/// Bounds on the fitted decay time, ns.
pub const TAU_MIN_NS: f64 = 0.1;
pub const TAU_MAX_NS: f64 = 1e5;
/// Convergence threshold on the projected gradient of the half sum of
/// squared residuals, evaluated on samples standardized to unit range.
pub const GRADIENT_TOL: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 500;

/// `A·e^{−t/τ}·cos(2πft + φ) + B`
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DampedCosine {
    pub amplitude: f64,
    pub decay_ns: f64,
    pub frequency_ghz: f64,
    pub phase_rad: f64,
    pub offset: f64,
}

impl DampedCosine {
    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude
            * (-t / self.decay_ns).exp()
            * (TAU * self.frequency_ghz * t + self.phase_rad).cos()
            + self.offset
    }

    pub fn sample(&self, times: &[f64]) -> Vec<f64> {
        times.iter().map(|&t| self.eval(t)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DampedCosineFit {
    #[serde(flatten)]
    pub model: DampedCosine,
    pub residual_rms: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
}

/// Least-squares fit of a single exponentially damped cosine.
///
/// Initial guesses: frequency from the peak of a direct Fourier transform of
/// the linearly detrended samples, offset from the mean, decay from a
/// regression of the log of per-period half ranges; amplitude and phase then
/// follow from a linear solve. Refinement is Levenberg–Marquardt on
/// `(A, 1/τ, f, φ, B)` with `τ` clamped to `[TAU_MIN_NS, TAU_MAX_NS]`.
///
/// Requires at least four periods sampled at eight or more points per period.
pub fn fit_damped_cosine(times: &[f64], values: &[f64]) -> Result<DampedCosineFit> {
    if times.len() != values.len() {
        return Err(Error::InsufficientSamples(format!(
            "{} times vs {} values",
            times.len(),
            values.len()
        )));
    }
    let n = times.len();
    if n < 32 {
        return Err(Error::InsufficientSamples(format!(
            "need at least 32 samples, got {n}"
        )));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InsufficientSamples(
            "sample times must be strictly increasing".into(),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InsufficientSamples("non-finite sample".into()));
    }

    let span = times[n - 1] - times[0];
    let spacing = span / (n - 1) as f64;
    let mean = values.iter().sum::<f64>() / n as f64;
    let scale = values
        .iter()
        .map(|v| (v - mean).abs())
        .fold(0.0, f64::max);
    if scale <= 1e-12 * mean.abs().max(1e-300) || scale == 0.0 {
        return Err(Error::NoOscillation);
    }

    let f0 = fourier_peak(times, values, span, spacing).ok_or(Error::NoOscillation)?;
    if f0 * span < 4.0 {
        return Err(Error::InsufficientSamples(format!(
            "{:.2} periods in the window, need at least 4",
            f0 * span
        )));
    }
    if f0 * spacing > 1.0 / 8.0 {
        return Err(Error::InsufficientSamples(format!(
            "{:.1} samples per period, need at least 8",
            1.0 / (f0 * spacing)
        )));
    }

    // work on standardized samples so the gradient test is scale free
    let unit: Vec<f64> = values.iter().map(|v| (v - mean) / scale).collect();
    let tau0 = envelope_decay(times, &unit, f0).clamp(TAU_MIN_NS, TAU_MAX_NS);
    let (a0, phi0, b0) = linear_amplitude_phase(times, &unit, f0, tau0)?;
    let start = Vector5::new(a0, 1.0 / tau0, f0, phi0, b0);
    let (mut p, iterations, gradient_norm, cost) = levenberg_marquardt(times, &unit, start)?;
    p[0] *= scale;
    p[4] = p[4] * scale + mean;
    let cost = cost * scale * scale;

    let (mut amplitude, mut phase) = (p[0], p[3]);
    if amplitude < 0.0 {
        amplitude = -amplitude;
        phase += PI;
    }
    phase = wrap_phase(phase);
    Ok(DampedCosineFit {
        model: DampedCosine {
            amplitude,
            decay_ns: 1.0 / p[1],
            frequency_ghz: p[2],
            phase_rad: phase,
            offset: p[4],
        },
        residual_rms: (2.0 * cost / n as f64).sqrt(),
        iterations,
        gradient_norm,
    })
}

fn wrap_phase(phi: f64) -> f64 {
    let mut p = phi.rem_euclid(TAU);
    if p > PI {
        p -= TAU;
    }
    p
}

/// Frequency of the largest Fourier component of the linearly detrended
/// samples, or `None` when the peak is below one cycle per window.
fn fourier_peak(times: &[f64], values: &[f64], span: f64, spacing: f64) -> Option<f64> {
    let n = times.len() as f64;
    let tm = times.iter().sum::<f64>() / n;
    let ym = values.iter().sum::<f64>() / n;
    let sxx: f64 = times.iter().map(|t| (t - tm).powi(2)).sum();
    let sxy: f64 = times
        .iter()
        .zip(values)
        .map(|(t, y)| (t - tm) * (y - ym))
        .sum();
    let slope = sxy / sxx;
    let resid: Vec<f64> = times
        .iter()
        .zip(values)
        .map(|(t, y)| y - ym - slope * (t - tm))
        .collect();

    let power = |f: f64| {
        let (mut re, mut im) = (0.0, 0.0);
        for (t, y) in times.iter().zip(&resid) {
            let (s, c) = (TAU * f * t).sin_cos();
            re += y * c;
            im += y * s;
        }
        re * re + im * im
    };

    let nyquist = 0.5 / spacing;
    let df = 1.0 / (8.0 * span);
    let steps = (nyquist / df).ceil() as usize;
    let (mut best_k, mut best_p) = (0, f64::NEG_INFINITY);
    for k in 0..=steps {
        let p = power(k as f64 * df);
        if p > best_p {
            best_p = p;
            best_k = k;
        }
    }
    if !(best_p > 0.0) {
        return None;
    }
    // golden-section refinement inside the neighbouring bins
    let (mut lo, mut hi) = (
        (best_k as f64 - 1.0).max(0.0) * df,
        (best_k as f64 + 1.0) * df,
    );
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..80 {
        let a = hi - g * (hi - lo);
        let b = lo + g * (hi - lo);
        if power(a) > power(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let f = 0.5 * (lo + hi);
    if f * span < 1.0 {
        return None;
    }
    Some(f)
}

/// Decay time from a straight-line fit of `ln(half range)` over successive
/// one-period windows. Returns `TAU_MAX_NS` when no decay is visible.
fn envelope_decay(times: &[f64], values: &[f64], f: f64) -> f64 {
    let period = 1.0 / f;
    let t0 = times[0];
    let mut pts = Vec::new();
    let mut start = 0;
    while start < times.len() {
        let end = times[start..]
            .iter()
            .position(|&t| t >= times[start] + period)
            .map(|p| start + p)
            .unwrap_or(times.len());
        if end == times.len() && times[end - 1] - times[start] < 0.75 * period {
            break;
        }
        let w = &values[start..end];
        let (mn, mx) = w
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let half = 0.5 * (mx - mn);
        if half > 0.0 {
            let tc = 0.5 * (times[start] + times[end - 1]) - t0;
            pts.push((tc, half.ln()));
        }
        start = end;
    }
    if pts.len() < 2 {
        return TAU_MAX_NS;
    }
    let m = pts.len() as f64;
    let xm = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - xm).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - xm) * (p.1 - ym)).sum();
    let slope = sxy / sxx;
    if slope < 0.0 {
        -1.0 / slope
    } else {
        TAU_MAX_NS
    }
}

/// Linear least squares for `a·e^{−t/τ}cos + b·e^{−t/τ}sin + B` at fixed
/// `f, τ`; returns `(A, φ, B)`.
fn linear_amplitude_phase(
    times: &[f64],
    values: &[f64],
    f: f64,
    tau: f64,
) -> Result<(f64, f64, f64)> {
    let n = times.len();
    let design = DMatrix::from_fn(n, 3, |i, j| {
        let t = times[i];
        let e = (-t / tau).exp();
        match j {
            0 => e * (TAU * f * t).cos(),
            1 => e * (TAU * f * t).sin(),
            _ => 1.0,
        }
    });
    let y = DVector::from_column_slice(values);
    let sol = design
        .clone()
        .svd(true, true)
        .solve(&y, 1e-14)
        .map_err(|e| Error::InsufficientSamples(format!("linear seed failed: {e}")))?;
    let (a, b, off) = (sol[0], sol[1], sol[2]);
    Ok((a.hypot(b), (-b).atan2(a), off))
}

struct Eval {
    residuals: DVector<f64>,
    jacobian: DMatrix<f64>,
    cost: f64,
}

fn evaluate(times: &[f64], values: &[f64], p: &Vector5<f64>) -> Eval {
    let n = times.len();
    let (a, lam, f, phi, b) = (p[0], p[1], p[2], p[3], p[4]);
    let mut residuals = DVector::zeros(n);
    let mut jacobian = DMatrix::zeros(n, 5);
    for (i, (&t, &y)) in times.iter().zip(values).enumerate() {
        let e = (-lam * t).exp();
        let (s, c) = (TAU * f * t + phi).sin_cos();
        residuals[i] = a * e * c + b - y;
        jacobian[(i, 0)] = e * c;
        jacobian[(i, 1)] = -t * a * e * c;
        jacobian[(i, 2)] = -a * e * s * TAU * t;
        jacobian[(i, 3)] = -a * e * s;
        jacobian[(i, 4)] = 1.0;
    }
    let cost = 0.5 * residuals.norm_squared();
    Eval {
        residuals,
        jacobian,
        cost,
    }
}

const LAMBDA_MIN: f64 = 1.0 / TAU_MAX_NS;
const LAMBDA_MAX: f64 = 1.0 / TAU_MIN_NS;

fn clamp_params(mut p: Vector5<f64>) -> Vector5<f64> {
    p[1] = p[1].clamp(LAMBDA_MIN, LAMBDA_MAX);
    p[2] = p[2].max(0.0);
    p
}

/// Gradient with components pointing out of an active bound removed.
fn projected_gradient(p: &Vector5<f64>, g: &Vector5<f64>) -> Vector5<f64> {
    let fixed = pinned(p, g);
    Vector5::from_fn(|k, _| if fixed[k] { 0.0 } else { g[k] })
}

fn next_gradient_norm(p: &Vector5<f64>, e: &Eval) -> f64 {
    let grad: Vector5<f64> = (e.jacobian.transpose() * &e.residuals)
        .fixed_rows::<5>(0)
        .into_owned();
    projected_gradient(p, &grad).norm()
}

/// Parameters pinned at a bound whose gradient pushes them further out.
fn pinned(p: &Vector5<f64>, g: &Vector5<f64>) -> [bool; 5] {
    let mut fixed = [false; 5];
    fixed[1] = (p[1] <= LAMBDA_MIN && g[1] > 0.0) || (p[1] >= LAMBDA_MAX && g[1] < 0.0);
    fixed[2] = p[2] <= 0.0 && g[2] > 0.0;
    fixed
}

fn levenberg_marquardt(
    times: &[f64],
    values: &[f64],
    start: Vector5<f64>,
) -> Result<(Vector5<f64>, usize, f64, f64)> {
    let mut p = clamp_params(start);
    let mut cur = evaluate(times, values, &p);
    let mut mu = 1e-3;
    let mut gnorm = f64::INFINITY;
    let y_norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    for iter in 0..MAX_ITERATIONS {
        let jt = cur.jacobian.transpose();
        let jtj: Matrix5<f64> = (&jt * &cur.jacobian).fixed_view::<5, 5>(0, 0).into_owned();
        let grad: Vector5<f64> = (&jt * &cur.residuals).fixed_rows::<5>(0).into_owned();
        gnorm = projected_gradient(&p, &grad).norm();
        if gnorm < GRADIENT_TOL {
            return Ok((p, iter, gnorm, cur.cost));
        }
        let fixed = pinned(&p, &grad);
        let mut improved = false;
        while mu < 1e16 {
            let mut lhs = jtj;
            let mut rhs = -grad;
            for k in 0..5 {
                lhs[(k, k)] += mu * jtj[(k, k)].max(1e-12);
                if fixed[k] {
                    lhs.row_mut(k).fill(0.0);
                    lhs.column_mut(k).fill(0.0);
                    lhs[(k, k)] = 1.0;
                    rhs[k] = 0.0;
                }
            }
            let Some(step) = lhs.cholesky().map(|c| c.solve(&rhs)) else {
                mu *= 4.0;
                continue;
            };
            let trial = clamp_params(p + step);
            if trial == p {
                break;
            }
            let next = evaluate(times, values, &trial);
            // below cost resolution, fall back to the gradient as merit
            let flat = next.cost <= cur.cost * (1.0 + 16.0 * f64::EPSILON)
                && next_gradient_norm(&trial, &next) < gnorm;
            if next.cost.is_finite() && (next.cost < cur.cost || flat) {
                p = trial;
                cur = next;
                mu = (mu / 3.0).max(1e-15);
                improved = true;
                break;
            }
            mu *= 4.0;
        }
        if !improved {
            // no representable step lowers the cost: converged if the gradient
            // is within rounding of J^T y, otherwise stuck
            let floor = 64.0 * f64::EPSILON * cur.jacobian.norm() * y_norm;
            if gnorm <= floor {
                return Ok((p, iter, gnorm, cur.cost));
            }
            return Err(Error::NonConvergence {
                iterations: iter,
                gradient_norm: gnorm,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: MAX_ITERATIONS,
        gradient_norm: gnorm,
    })
}

/// `N = g_ens² / (2 g²)`: each spin contributes both `|0⟩→|±1⟩` transitions.
pub fn estimate_ensemble_size(g_ens_ghz: f64, g_single_ghz: f64) -> Result<f64> {
    if !(g_single_ghz > 0.0) {
        return Err(Error::param("g_single", "must be > 0"));
    }
    Ok(g_ens_ghz * g_ens_ghz / (2.0 * g_single_ghz * g_single_ghz))
}

/// Number of centers in a slab: density (cm⁻³) × area (μm²) × thickness (μm).
pub fn density_cross_check(density_cm3: f64, area_um2: f64, thickness_um: f64) -> Result<f64> {
    for (name, v) in [
        ("density", density_cm3),
        ("area", area_um2),
        ("thickness", thickness_um),
    ] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::param(name, format!("must be finite and >= 0, got {v}")));
        }
    }
    // 1 μm³ = 1e−12 cm³
    Ok(density_cm3 * area_um2 * thickness_um * 1e-12)
}

/// Inputs for the density × volume estimate and the coupling inversion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportInputs {
    pub g_single_ghz: f64,
    pub density_cm3: f64,
    pub area_um2: f64,
    pub thickness_um: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub coupling_detected: bool,
    pub g_ens_spectroscopy_ghz: Option<f64>,
    pub rabi_frequency_ghz: Option<f64>,
    pub rabi_decay_ns: Option<f64>,
    /// `|f_rabi − g_spec| / g_spec`
    pub spectroscopy_vs_rabi: Option<f64>,
    pub n_from_coupling: Option<f64>,
    pub n_from_density: f64,
    /// `|N_coupling − N_density| / N_coupling`
    pub n_discrepancy: Option<f64>,
    pub notes: Vec<String>,
}

/// Cross-validate the coupling seen in spectroscopy, the Rabi frequency and
/// the two ensemble-size estimates.
pub fn consistency_report(
    spectro_gap_ghz: Option<f64>,
    rabi_fit: Option<&DampedCosineFit>,
    inputs: &ReportInputs,
) -> Result<ConsistencyReport> {
    let mut notes = Vec::new();
    let n_from_density =
        density_cross_check(inputs.density_cm3, inputs.area_um2, inputs.thickness_um)?;
    let coupling_detected = spectro_gap_ghz.is_some_and(|g| g > 0.0) && inputs.g_single_ghz > 0.0;
    if !coupling_detected {
        notes.push("no coupling: spectroscopy shows no avoided crossing".to_string());
    }
    let gap = spectro_gap_ghz.filter(|_| coupling_detected);
    let n_from_coupling = match gap {
        Some(g) => Some(estimate_ensemble_size(g, inputs.g_single_ghz)?),
        None => None,
    };
    let rabi_frequency_ghz = rabi_fit.map(|f| f.model.frequency_ghz);
    let spectroscopy_vs_rabi = match (gap, rabi_frequency_ghz) {
        (Some(g), Some(f)) => Some((f - g).abs() / g),
        _ => None,
    };
    let n_discrepancy = n_from_coupling.map(|n| (n - n_from_density).abs() / n);
    if let Some(d) = n_discrepancy {
        if d > 0.05 {
            notes.push(format!(
                "ensemble-size estimates differ by {:.1}%",
                100.0 * d
            ));
        }
    }
    Ok(ConsistencyReport {
        coupling_detected,
        g_ens_spectroscopy_ghz: gap,
        rabi_frequency_ghz,
        rabi_decay_ns: rabi_fit.map(|f| f.model.decay_ns),
        spectroscopy_vs_rabi,
        n_from_coupling,
        n_from_density,
        n_discrepancy,
        notes,
    })
}

/// Add uniform noise in `[−amplitude, amplitude]` from a seeded ChaCha8 stream.
pub fn add_uniform_noise(values: &[f64], amplitude: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    values
        .iter()
        .map(|v| {
            if amplitude > 0.0 {
                v + rng.gen_range(-amplitude..=amplitude)
            } else {
                *v
            }
        })
        .collect()
}

/// Fit `truth` sampled on `times` plus uniform noise, once per seed.
pub fn noisy_fit_trials(
    truth: &DampedCosine,
    times: &[f64],
    noise_amplitude: f64,
    seeds: &[u64],
    exec: &Executor,
) -> Vec<Result<DampedCosineFit>> {
    let clean = truth.sample(times);
    exec.map(seeds, |&seed| {
        let noisy = add_uniform_noise(&clean, noise_amplitude, seed);
        fit_damped_cosine(times, &noisy)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::collective_coupling;
    use crate::spectroscopy::linspace;

    fn paper_like() -> DampedCosine {
        DampedCosine {
            amplitude: 0.5,
            decay_ns: 20.0,
            frequency_ghz: 0.0704,
            phase_rad: 0.0,
            offset: 0.5,
        }
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn noiseless_round_trip() {
        let truth = paper_like();
        let t = linspace(0.0, 100.0, 401);
        let fit = fit_damped_cosine(&t, &truth.sample(&t)).unwrap();
        let m = fit.model;
        assert!(rel(m.amplitude, 0.5) < 1e-6);
        assert!(rel(m.decay_ns, 20.0) < 1e-6);
        assert!(rel(m.frequency_ghz, 0.0704) < 1e-6);
        assert!(m.phase_rad.abs() < 1e-6);
        assert!(rel(m.offset, 0.5) < 1e-6);
        assert!(fit.residual_rms < 1e-8);
    }

    #[test]
    fn recovers_phase_and_negative_amplitude_convention() {
        let truth = DampedCosine {
            amplitude: 0.3,
            decay_ns: 45.0,
            frequency_ghz: 0.11,
            phase_rad: 2.5,
            offset: -0.2,
        };
        let t = linspace(0.0, 120.0, 600);
        let m = fit_damped_cosine(&t, &truth.sample(&t)).unwrap().model;
        assert!(rel(m.frequency_ghz, 0.11) < 1e-8);
        assert!((m.phase_rad - 2.5).abs() < 1e-7);
        assert!(m.amplitude > 0.0);
    }

    #[test]
    fn constant_trace_has_no_oscillation() {
        let t = linspace(0.0, 100.0, 401);
        let y = vec![0.42; t.len()];
        assert!(matches!(fit_damped_cosine(&t, &y), Err(Error::NoOscillation)));
    }

    #[test]
    fn too_few_periods_rejected() {
        let truth = DampedCosine {
            frequency_ghz: 0.02,
            ..paper_like()
        };
        let t = linspace(0.0, 100.0, 401);
        assert!(matches!(
            fit_damped_cosine(&t, &truth.sample(&t)),
            Err(Error::InsufficientSamples(_))
        ));
        let t = linspace(0.0, 100.0, 10);
        assert!(fit_damped_cosine(&t, &paper_like().sample(&t)).is_err());
    }

    #[test]
    fn undamped_trace_hits_decay_bound() {
        let truth = DampedCosine {
            decay_ns: f64::INFINITY,
            ..paper_like()
        };
        let t = linspace(0.0, 100.0, 401);
        let fit = fit_damped_cosine(&t, &truth.sample(&t)).unwrap();
        assert!(rel(fit.model.frequency_ghz, 0.0704) < 1e-6);
        assert!(fit.model.decay_ns >= 0.999 * TAU_MAX_NS);
    }

    #[test]
    fn scale_equivariance() {
        let t = linspace(0.0, 100.0, 401);
        let y = paper_like().sample(&t);
        let base = fit_damped_cosine(&t, &y).unwrap().model;
        for k in [0.01, 3.0, 250.0] {
            let ys: Vec<f64> = y.iter().map(|v| v * k).collect();
            let m = fit_damped_cosine(&t, &ys).unwrap().model;
            assert!(rel(m.amplitude, k * base.amplitude) < 1e-9);
            assert!(rel(m.offset, k * base.offset) < 1e-9);
            assert!(rel(m.frequency_ghz, base.frequency_ghz) < 1e-9);
            assert!(rel(m.decay_ns, base.decay_ns) < 1e-9);
            assert!((m.phase_rad - base.phase_rad).abs() < 1e-9);
        }
    }

    #[test]
    fn noisy_monte_carlo() {
        let t = linspace(0.0, 100.0, 401);
        let seeds: Vec<u64> = (0..100).collect();
        let truth = paper_like();
        let fits = noisy_fit_trials(&truth, &t, 0.01, &seeds, &Executor::with_threads(0).unwrap());
        let pass = fits
            .iter()
            .filter(|r| {
                r.as_ref().is_ok_and(|f| {
                    rel(f.model.frequency_ghz, 0.0704) < 0.005 && rel(f.model.decay_ns, 20.0) < 0.05
                })
            })
            .count();
        assert!(pass >= 95, "only {pass}/100 seeds passed");
    }

    #[test]
    fn noise_is_seeded() {
        let y = vec![0.0; 50];
        assert_eq!(add_uniform_noise(&y, 0.1, 7), add_uniform_noise(&y, 0.1, 7));
        assert_ne!(add_uniform_noise(&y, 0.1, 7), add_uniform_noise(&y, 0.1, 8));
        assert!(add_uniform_noise(&y, 0.1, 7).iter().all(|v| v.abs() <= 0.1));
    }

    #[test]
    fn ensemble_size_from_coupling() {
        let n = estimate_ensemble_size(0.070, 8.8e-6).unwrap();
        assert!(rel(n, 3.2e7) < 0.02);
        assert!(rel(n, 3.1637e7) < 1e-4);
        let g = 8.8e-6;
        assert!(rel(estimate_ensemble_size(2f64.sqrt() * g, g).unwrap(), 1.0) < 1e-12);
        assert!(estimate_ensemble_size(0.07, 0.0).is_err());
        for n in [1.0, 17.0, 3.2e7] {
            let back = estimate_ensemble_size(collective_coupling(g, n), g).unwrap();
            assert!(rel(back, n) < 1e-12);
        }
    }

    #[test]
    fn density_volume_estimate() {
        let n = density_cross_check(1.1e18, 40.0, 0.7).unwrap();
        assert!(rel(n, 3.08e7) < 1e-9);
        assert!(rel(density_cross_check(2.2e18, 40.0, 0.7).unwrap(), 2.0 * n) < 1e-12);
        assert!(rel(density_cross_check(1.1e18, 80.0, 0.7).unwrap(), 2.0 * n) < 1e-12);
        assert_eq!(density_cross_check(1.1e18, 40.0, 0.0).unwrap(), 0.0);
        assert!(density_cross_check(-1.0, 40.0, 0.7).is_err());
    }

    #[test]
    fn report_flags_missing_coupling() {
        let inputs = ReportInputs {
            g_single_ghz: 8.8e-6,
            density_cm3: 1.1e18,
            area_um2: 40.0,
            thickness_um: 0.7,
        };
        let r = consistency_report(None, None, &inputs).unwrap();
        assert!(!r.coupling_detected);
        assert!(r.n_from_coupling.is_none());
        assert!(!r.notes.is_empty());

        let r = consistency_report(Some(0.0704), None, &inputs).unwrap();
        assert!(r.coupling_detected);
        assert!(r.n_discrepancy.unwrap() < 0.05);
    }
}
