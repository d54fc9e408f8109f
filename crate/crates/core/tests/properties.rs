use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fluxnv::device::{collective_coupling, flux_to_epsilon};
use fluxnv::dynamics::{CollectiveFamily, DissipationSpec, Event, ReadoutMap, Simulation};
use fluxnv::inference::estimate_ensemble_size;
use fluxnv::quantum::{
    eigh, min_eigenvalue, propagate, Basis, CMatrix, CVector, Collapse, Lindbladian, Operator,
    QuantumState,
};

fn random_hermitian(dim: usize, seed: u64) -> Operator {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = CMatrix::from_fn(dim, dim, |_, _| {
        Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    });
    let h = (&a + a.adjoint()) * Complex64::from(0.5);
    Operator::hamiltonian(h, Basis::anonymous(dim)).unwrap()
}

fn random_state(dim: usize, seed: u64) -> QuantumState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let v = CVector::from_fn(dim, |_, _| {
        Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    });
    let n = v.norm();
    QuantumState::pure(v / Complex64::from(n), Basis::anonymous(dim)).unwrap()
}

fn reconstruction_error(h: &Operator) -> f64 {
    let eig = eigh(h).unwrap();
    let rebuilt = eig.apply_fn(Complex64::from);
    (h.matrix() - rebuilt).norm() / h.matrix().norm()
}

fn unitarity_error(v: &CMatrix) -> f64 {
    let n = v.nrows();
    (v.adjoint() * v - DMatrix::<Complex64>::identity(n, n)).norm()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn semigroup(dim in 2usize..10, seed in any::<u64>(), t1 in 0.0f64..5.0, t2 in 0.0f64..5.0) {
        let h = random_hermitian(dim, seed);
        let psi = random_state(dim, seed);
        let two = propagate(&h, &propagate(&h, &psi, t1).unwrap(), t2).unwrap();
        let one = propagate(&h, &psi, t1 + t2).unwrap();
        let diff = (two.as_vector().unwrap() - one.as_vector().unwrap()).norm();
        prop_assert!(diff < 1e-9, "diff {diff}");
        prop_assert!((two.as_vector().unwrap().norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn eigh_reconstructs(exp in 0u32..5, seed in any::<u64>()) {
        let dim = 2 * 3usize.pow(exp);
        let h = random_hermitian(dim, seed);
        prop_assert!(reconstruction_error(&h) < 1e-10);
        let eig = eigh(&h).unwrap();
        prop_assert!(unitarity_error(&eig.vectors) < 1e-10);
        prop_assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn flux_bias_is_linear_and_odd(x in -5e-3f64..5e-3, y in -5e-3f64..5e-3, ip in 10.0f64..1000.0) {
        let f = |p: f64| flux_to_epsilon(p, ip);
        prop_assert!((f(-x) + f(x)).abs() <= 1e-15 * f(x).abs().max(1.0));
        prop_assert!((f(x + y) - f(x) - f(y)).abs() <= 1e-12 * (f(x).abs() + f(y).abs()).max(1e-12));
    }

    #[test]
    fn ensemble_size_round_trip(n in 1.0f64..1e9, g in 1e-7f64..1e-3) {
        let back = estimate_ensemble_size(collective_coupling(g, n), g).unwrap();
        prop_assert!((back - n).abs() <= 1e-12 * n);
    }

    #[test]
    fn readout_is_monotone(c in 0.0f64..0.5, p0 in 0.0f64..0.5, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let m = ReadoutMap::new(c, p0).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(m.apply(lo) <= m.apply(hi));
    }

    #[test]
    fn lindblad_keeps_trace_and_positivity(dim in 2usize..6, seed in any::<u64>(), rate in 0.0f64..0.5) {
        let h = random_hermitian(dim, seed).scale(0.2);
        let l = random_hermitian(dim, seed.wrapping_add(1));
        let lind = Lindbladian::new(&h, &[Collapse::new(l, rate)]).unwrap();
        let mut rho = random_state(dim, seed).to_density_matrix();
        for _ in 0..200 {
            rho = lind.step(&rho, 0.01).unwrap();
        }
        // 2 ns of evolution
        prop_assert!((rho.trace().re - 1.0).abs() < 2e-9);
        prop_assert!(min_eigenvalue(&rho) >= -1e-9);
        prop_assert!(((&rho - rho.adjoint()).norm()) < 1e-12);
    }

    #[test]
    fn collective_dynamics_stay_physical(
        detuning in -0.2f64..0.2,
        e in 0.0f64..1e-3,
        gamma in 0.0f64..0.2,
        hold in 0.0f64..30.0,
    ) {
        let fam = CollectiveFamily { d_ghz: 2.878, e_ghz: e, g_ens_ghz: 0.0704 };
        let diss = DissipationSpec::from_lifetimes(150.0, 250.0, gamma).unwrap();
        let mut sim = Simulation::new(&fam, &diss, 0.01).unwrap();
        sim.apply(&Event::PiPulse).unwrap();
        sim.apply(&Event::SetDetuning { detuning_ghz: detuning }).unwrap();
        sim.apply(&Event::Hold { duration_ns: hold }).unwrap();
        let rho = sim.density();
        prop_assert!((rho.trace().re - 1.0).abs() < 1e-9 * hold.max(1.0));
        prop_assert!(min_eigenvalue(rho) >= -1e-9);
    }
}

#[test]
fn eigh_reconstructs_at_full_exact_dimension() {
    // 2·3⁶, the six-spin exact model
    let h = random_hermitian(1458, 11);
    assert!(reconstruction_error(&h) < 1e-10);
}
