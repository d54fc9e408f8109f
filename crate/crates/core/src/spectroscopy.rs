//! Bias sweeps of the coupled spectrum and extraction of the vacuum Rabi
//! splitting.
//!
//! At each flux bias the Hamiltonian is diagonalized and every transition out
//! of the ground state is weighted by `|⟨k| σz⊗I |ground⟩|²`, the squared
//! matrix element of the flux drive.

use serde::{Deserialize, Serialize};

use crate::device::{
    collective_drive, collective_hamiltonian, collective_index, coupled_hamiltonian_collective,
    coupled_hamiltonian_exact, exact_drive, flux_to_epsilon, EnsembleParams, QubitParams,
    SpinModel,
};
use crate::error::{Error, Result};
use crate::par::Executor;
use crate::quantum::{eigh_matrix, CMatrix, Eigen};

/// Weights below this are treated as "not driven".
pub const WEIGHT_FLOOR: f64 = 1e-10;
/// Separations below this are a level crossing, not an anti-crossing (GHz).
pub const CROSSING_FLOOR_GHZ: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelKind {
    /// Four-level single-excitation model with a bright and a dark mode.
    Collective,
    /// Full `2·3ⁿ` Hilbert space of `spins` identical NV centers.
    Exact { spins: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceModel {
    pub qubit: QubitParams,
    pub ensemble: EnsembleParams,
    pub kind: ModelKind,
}

impl DeviceModel {
    pub fn collective(qubit: QubitParams, ensemble: EnsembleParams) -> Self {
        DeviceModel {
            qubit,
            ensemble,
            kind: ModelKind::Collective,
        }
    }

    pub fn exact(qubit: QubitParams, ensemble: EnsembleParams, spins: usize) -> Self {
        DeviceModel {
            qubit,
            ensemble,
            kind: ModelKind::Exact { spins },
        }
    }

    fn diagonalize(&self, epsilon_ghz: f64) -> Result<(Eigen, CMatrix)> {
        let qp = self.qubit.with_epsilon(epsilon_ghz);
        match self.kind {
            ModelKind::Collective => {
                let h = coupled_hamiltonian_collective(&qp, &self.ensemble);
                Ok((eigh_matrix(h.matrix()), collective_drive(&qp)))
            }
            ModelKind::Exact { spins } => {
                let h = coupled_hamiltonian_exact(&qp, &self.ensemble, spins)?;
                Ok((
                    eigh_matrix(h.matrix()),
                    exact_drive(spins, SpinModel::Triplet),
                ))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub frequency_ghz: f64,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPoint {
    pub bias_mphi0: f64,
    pub epsilon_ghz: f64,
    /// Transitions to every excited eigenstate, in ascending frequency.
    pub transitions: Vec<Transition>,
}

impl SpectrumPoint {
    /// The two transitions with the largest drive weight, if both are driven.
    pub fn weighted_pair(&self) -> Option<(Transition, Transition)> {
        let mut best: Option<Transition> = None;
        let mut second: Option<Transition> = None;
        for t in &self.transitions {
            if best.is_none_or(|b| t.weight > b.weight) {
                second = best;
                best = Some(*t);
            } else if second.is_none_or(|s| t.weight > s.weight) {
                second = Some(*t);
            }
        }
        match (best, second) {
            (Some(a), Some(b)) if b.weight > WEIGHT_FLOOR => Some((a, b)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumResult {
    pub model: ModelKind,
    /// Collective coupling used by the model (GHz); for the exact model this
    /// is `√(2n)·g`.
    pub g_ens_ghz: f64,
    pub points: Vec<SpectrumPoint>,
}

/// Transitions at one bias point.
pub fn spectrum_point(model: &DeviceModel, bias_mphi0: f64) -> Result<SpectrumPoint> {
    let epsilon_ghz = flux_to_epsilon(bias_mphi0 * 1e-3, model.qubit.ip_na);
    let (eig, drive) = model.diagonalize(epsilon_ghz)?;
    let dg = &drive * eig.vector(0);
    let transitions = (1..eig.values.len())
        .map(|k| Transition {
            frequency_ghz: (eig.values[k] - eig.values[0]).max(0.0),
            weight: eig.vector(k).dotc(&dg).norm_sqr(),
        })
        .collect();
    Ok(SpectrumPoint {
        bias_mphi0,
        epsilon_ghz,
        transitions,
    })
}

/// Diagonalize the model at each bias (flux offset in mΦ₀ from `3Φ₀/2`).
pub fn sweep_spectrum(
    model: &DeviceModel,
    bias_grid_mphi0: &[f64],
    exec: &Executor,
) -> Result<SpectrumResult> {
    if bias_grid_mphi0.is_empty() {
        return Err(Error::param("bias_grid", "must be non-empty"));
    }
    model.qubit.validate()?;
    model.ensemble.validate()?;
    let points = exec.try_map(bias_grid_mphi0, |&b| spectrum_point(model, b))?;
    let g_ens_ghz = match model.kind {
        ModelKind::Collective => model.ensemble.collective_coupling(),
        ModelKind::Exact { spins } => {
            crate::device::collective_coupling(model.ensemble.g_single_ghz, spins as f64)
        }
    };
    Ok(SpectrumResult {
        model: model.kind,
        g_ens_ghz,
        points,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Splitting {
    pub gap_ghz: f64,
    pub bias_mphi0: f64,
}

/// Minimum separation between the two drive-weighted branches, refined by a
/// parabola through the grid minimum and its neighbours.
pub fn extract_splitting(s: &SpectrumResult) -> Result<Splitting> {
    let seps: Vec<Option<f64>> = s
        .points
        .iter()
        .map(|p| {
            p.weighted_pair()
                .map(|(a, b)| (a.frequency_ghz - b.frequency_ghz).abs())
        })
        .collect();
    let (imin, smin) = seps
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| {
            Error::NoAvoidedCrossing("no bias point has two drive-weighted branches".into())
        })?;
    if imin == 0 || imin + 1 >= seps.len() {
        return Err(Error::NoAvoidedCrossing(
            "separation minimum lies on the edge of the bias grid".into(),
        ));
    }
    let (Some(sl), Some(sr)) = (seps[imin - 1], seps[imin + 1]) else {
        return Err(Error::NoAvoidedCrossing(
            "branch pair missing next to the separation minimum".into(),
        ));
    };
    let xs = [
        s.points[imin - 1].bias_mphi0,
        s.points[imin].bias_mphi0,
        s.points[imin + 1].bias_mphi0,
    ];
    let (x, gap) = parabola_vertex(xs, [sl, smin, sr]).unwrap_or((xs[1], smin));
    if gap < CROSSING_FLOOR_GHZ {
        return Err(Error::NoAvoidedCrossing(format!(
            "branches cross (minimum separation {gap:.3e} GHz)"
        )));
    }
    Ok(Splitting {
        gap_ghz: gap,
        bias_mphi0: x,
    })
}

/// Vertex of the parabola through three points, when it opens upward and the
/// vertex lies inside the bracket.
fn parabola_vertex(x: [f64; 3], y: [f64; 3]) -> Option<(f64, f64)> {
    let d01 = (y[1] - y[0]) / (x[1] - x[0]);
    let d12 = (y[2] - y[1]) / (x[2] - x[1]);
    let a = (d12 - d01) / (x[2] - x[0]);
    if !(a > 0.0) {
        return None;
    }
    let b = d01 - a * (x[0] + x[1]);
    let xv = -b / (2.0 * a);
    if xv < x[0] || xv > x[2] {
        return None;
    }
    // Newton form: y0 + d01 (x − x0) + a (x − x0)(x − x1)
    let yv = y[0] + d01 * (xv - x[0]) + a * (xv - x[0]) * (xv - x[1]);
    Some((xv, yv))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Visibility {
    /// Drive weight into states dominated by `{|e,0⟩, |g,B⟩}`.
    pub bright_weight: f64,
    /// Drive weight into states dominated by the dark mode `|g,D⟩`.
    pub dark_weight: f64,
    pub epsilon_ghz: f64,
}

/// Drive weights into the bright (symmetric, `D+E`) and dark
/// (antisymmetric, `D−E`) ensemble branches with the qubit tuned onto the
/// bright transition. If `F = D + E` is below `Δ` the qubit sits at `ε = 0`.
pub fn dark_state_visibility(qp: &QubitParams, ep: &EnsembleParams) -> Visibility {
    use collective_index::*;
    let target = ep.d_ghz + ep.e_ghz;
    let epsilon_ghz = (target * target - qp.delta_ghz * qp.delta_ghz).max(0.0).sqrt();
    let q = qp.with_epsilon(epsilon_ghz);
    let h = collective_hamiltonian(q.splitting(), ep.d_ghz, ep.e_ghz, ep.collective_coupling());
    let eig = eigh_matrix(h.matrix());
    let dg = collective_drive(&q) * eig.vector(0);
    let mut bright = 0.0;
    let mut dark = 0.0;
    for k in 1..4 {
        let v = eig.vector(k);
        let w = v.dotc(&dg).norm_sqr();
        let p_dark = v[DARK].norm_sqr();
        let p_coupled = v[QUBIT_EXCITED].norm_sqr() + v[BRIGHT].norm_sqr();
        if p_dark > p_coupled {
            dark += w;
        } else {
            bright += w;
        }
    }
    Visibility {
        bright_weight: bright,
        dark_weight: dark,
        epsilon_ghz,
    }
}

/// Uniform grid of `points` values from `min` to `max` inclusive.
pub fn linspace(min: f64, max: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![min],
        n => (0..n)
            .map(|i| {
                if i + 1 == n {
                    max
                } else {
                    min + (max - min) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::collective_coupling;

    fn default_model() -> DeviceModel {
        DeviceModel::collective(QubitParams::default(), EnsembleParams::default())
    }

    #[test]
    fn uncoupled_sweep_has_no_gap() {
        let mut m = default_model();
        m.ensemble.g_single_ghz = 0.0;
        let grid = linspace(-0.5, 0.5, 81);
        let s = sweep_spectrum(&m, &grid, &Executor::sequential()).unwrap();
        for p in &s.points {
            let f = m.qubit.with_epsilon(p.epsilon_ghz).splitting();
            let has_qubit = p
                .transitions
                .iter()
                .any(|t| (t.frequency_ghz - f).abs() < 1e-12 && t.weight > 0.5 * 0.0);
            let has_nv = p
                .transitions
                .iter()
                .any(|t| (t.frequency_ghz - 2.878).abs() < 1e-12);
            assert!(has_qubit && has_nv);
        }
        assert!(matches!(
            extract_splitting(&s),
            Err(Error::NoAvoidedCrossing(_))
        ));
    }

    #[test]
    fn resonant_gap_is_g_ens() {
        let m = default_model();
        let s = sweep_spectrum(&m, &linspace(-0.5, 0.5, 81), &Executor::sequential()).unwrap();
        let sp = extract_splitting(&s).unwrap();
        let g_ens = collective_coupling(8.8e-6, 3.2e7);
        assert!((sp.gap_ghz - g_ens).abs() < 1e-6);
        assert!(sp.bias_mphi0.abs() < 1e-9);
    }

    #[test]
    fn gap_is_stable_under_grid_refinement() {
        let m = default_model();
        let ex = Executor::sequential();
        // even point counts miss the exact resonance
        let coarse = extract_splitting(&sweep_spectrum(&m, &linspace(-0.5, 0.5, 80), &ex).unwrap())
            .unwrap();
        let fine = extract_splitting(&sweep_spectrum(&m, &linspace(-0.5, 0.5, 160), &ex).unwrap())
            .unwrap();
        assert!((coarse.gap_ghz - fine.gap_ghz).abs() < 1e-5);
    }

    #[test]
    fn far_detuned_branches_are_bare() {
        let m = default_model();
        let d: f64 = 2.878;
        // F − D = 1 GHz
        let f = d + 1.0;
        let eps = (f * f - d * d).sqrt();
        let bias = eps / flux_to_epsilon(1e-3, 300.0);
        let p = spectrum_point(&m, bias).unwrap();
        let (a, b) = p.weighted_pair().unwrap();
        let (hi, lo) = if a.frequency_ghz > b.frequency_ghz { (a, b) } else { (b, a) };
        assert!((hi.frequency_ghz / f - 1.0).abs() < 1e-3);
        assert!((lo.frequency_ghz / d - 1.0).abs() < 1e-3);
    }

    #[test]
    fn spectrum_is_even_in_bias() {
        let mut m = default_model();
        let ex = Executor::sequential();
        for kind in [ModelKind::Collective, ModelKind::Exact { spins: 1 }] {
            m.kind = kind;
            m.ensemble.g_single_ghz = 1e-3;
            let grid = linspace(-0.4, 0.4, 17);
            let s = sweep_spectrum(&m, &grid, &ex).unwrap();
            let n = s.points.len();
            for i in 0..n {
                let (l, r) = (&s.points[i], &s.points[n - 1 - i]);
                for (a, b) in l.transitions.iter().zip(&r.transitions) {
                    assert!((a.frequency_ghz - b.frequency_ghz).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn weight_sum_rule() {
        for kind in [ModelKind::Collective, ModelKind::Exact { spins: 2 }] {
            let mut m = default_model();
            m.kind = kind;
            m.ensemble.g_single_ghz = 2e-3;
            for bias in [-0.3, 0.0, 0.17] {
                let eps = flux_to_epsilon(bias * 1e-3, m.qubit.ip_na);
                let (eig, drive) = m.diagonalize(eps).unwrap();
                let g = eig.vector(0);
                let dg = &drive * &g;
                let total = dg.norm_squared();
                let diag = g.dotc(&dg).norm_sqr();
                let p = spectrum_point(&m, bias).unwrap();
                let sum: f64 = p.transitions.iter().map(|t| t.weight).sum();
                assert!((sum + diag - total).abs() < 1e-9, "{kind:?} {bias}");
            }
        }
    }

    #[test]
    fn empty_grid_rejected() {
        assert!(sweep_spectrum(&default_model(), &[], &Executor::sequential()).is_err());
    }

    #[test]
    fn dark_state_weights() {
        let qp = QubitParams::default();
        let ep = EnsembleParams {
            e_ghz: 5e-4,
            ..EnsembleParams::default()
        };
        let v = dark_state_visibility(&qp, &ep);
        assert!(v.dark_weight < 1e-12);
        assert!(v.bright_weight > 0.99);

        let at = |e: f64| {
            let ep = EnsembleParams {
                e_ghz: e,
                ..EnsembleParams::default()
            };
            dark_state_visibility(&qp, &ep).bright_weight
        };
        let (minus, zero, plus) = (at(-1e-9), at(0.0), at(1e-9));
        assert!((plus - minus).abs() < 1e-6);
        assert!((plus - zero).abs() < 1e-6);
    }

    #[test]
    fn parabola_vertex_recovers_minimum() {
        let f = |x: f64| 2.0 * (x - 0.3).powi(2) + 1.5;
        let (x, y) = parabola_vertex([0.0, 0.25, 0.5], [f(0.0), f(0.25), f(0.5)]).unwrap();
        assert!((x - 0.3).abs() < 1e-12 && (y - 1.5).abs() < 1e-12);
        assert!(parabola_vertex([0.0, 1.0, 2.0], [0.0, 1.0, 0.0]).is_none());
    }

    #[test]
    fn linspace_endpoints() {
        let g = linspace(-0.2, 0.2, 81);
        assert_eq!(g.len(), 81);
        assert_eq!(g[0], -0.2);
        assert_eq!(g[80], 0.2);
        assert!(g[40].abs() < 1e-15);
    }
}
