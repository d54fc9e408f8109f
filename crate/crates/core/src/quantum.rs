//! Dense complex linear algebra and quantum-state primitives.
//!
//! Units: Hamiltonians are ordinary frequencies in GHz (h = 1) and times are
//! in ns, so a propagator over `t` is `exp(-i 2π H t)`. Dissipation rates are
//! inverse lifetimes in 1/ns and enter the master equation without a 2π.

use std::f64::consts::{FRAC_1_SQRT_2, TAU};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Relative Frobenius tolerance for Hermiticity checks.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Norm / trace tolerance for state validation.
pub const STATE_TOL: f64 = 1e-9;
/// Largest per-step trace change accepted by [`Lindbladian::step`].
pub const TRACE_DRIFT_LIMIT: f64 = 1e-6;

const I: C64 = C64::new(0.0, 1.0);

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// One tensor factor of a Hilbert space, with a label per basis level.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subsystem {
    pub name: String,
    pub levels: Vec<String>,
}

impl Subsystem {
    pub fn new(name: impl Into<String>, levels: &[&str]) -> Self {
        Subsystem {
            name: name.into(),
            levels: levels.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.levels.len()
    }
}

/// Ordered list of tensor factors. The full dimension is the product of the
/// factor dimensions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Basis {
    pub subsystems: Vec<Subsystem>,
}

impl Basis {
    pub fn single(sub: Subsystem) -> Self {
        Basis {
            subsystems: vec![sub],
        }
    }

    pub fn dim(&self) -> usize {
        self.subsystems.iter().map(Subsystem::dim).product()
    }

    pub fn concat(&self, other: &Basis) -> Basis {
        let mut subsystems = self.subsystems.clone();
        subsystems.extend(other.subsystems.iter().cloned());
        Basis { subsystems }
    }

    /// Unstructured basis of the given dimension.
    pub fn anonymous(dim: usize) -> Self {
        let levels: Vec<String> = (0..dim).map(|k| k.to_string()).collect();
        Basis::single(Subsystem {
            name: "h".into(),
            levels,
        })
    }
}

/// Dense complex square matrix tagged with its basis.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    matrix: CMatrix,
    basis: Basis,
}

impl Operator {
    pub fn new(matrix: CMatrix, basis: Basis) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Dimension(format!(
                "operator must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.nrows() != basis.dim() {
            return Err(Error::Dimension(format!(
                "matrix dimension {} does not match basis dimension {}",
                matrix.nrows(),
                basis.dim()
            )));
        }
        Ok(Operator { matrix, basis })
    }

    /// Construct and require Hermiticity to within [`HERMITIAN_TOL`].
    pub fn hamiltonian(matrix: CMatrix, basis: Basis) -> Result<Self> {
        let op = Operator::new(matrix, basis)?;
        let deviation = op.hermitian_deviation();
        if deviation > HERMITIAN_TOL {
            return Err(Error::NotHermitian { deviation });
        }
        Ok(op)
    }

    pub fn identity(basis: Basis) -> Self {
        let d = basis.dim();
        Operator {
            matrix: CMatrix::identity(d, d),
            basis,
        }
    }

    pub fn zeros(basis: Basis) -> Self {
        let d = basis.dim();
        Operator {
            matrix: CMatrix::zeros(d, d),
            basis,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    /// `‖A − A†‖_F / ‖A‖_F` (absolute when `A = 0`).
    pub fn hermitian_deviation(&self) -> f64 {
        let diff = (&self.matrix - self.matrix.adjoint()).norm();
        let scale = self.matrix.norm();
        if scale > 0.0 {
            diff / scale
        } else {
            diff
        }
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian_deviation() <= HERMITIAN_TOL
    }

    pub fn scale(&self, factor: f64) -> Operator {
        Operator {
            matrix: &self.matrix * c(factor),
            basis: self.basis.clone(),
        }
    }

    pub fn adjoint(&self) -> Operator {
        Operator {
            matrix: self.matrix.adjoint(),
            basis: self.basis.clone(),
        }
    }

    pub fn add(&self, other: &Operator) -> Result<Operator> {
        self.same_space(other)?;
        Ok(Operator {
            matrix: &self.matrix + &other.matrix,
            basis: self.basis.clone(),
        })
    }

    pub fn sub(&self, other: &Operator) -> Result<Operator> {
        self.same_space(other)?;
        Ok(Operator {
            matrix: &self.matrix - &other.matrix,
            basis: self.basis.clone(),
        })
    }

    pub fn mul(&self, other: &Operator) -> Result<Operator> {
        self.same_space(other)?;
        Ok(Operator {
            matrix: &self.matrix * &other.matrix,
            basis: self.basis.clone(),
        })
    }

    fn same_space(&self, other: &Operator) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::Dimension(format!(
                "operand dimensions differ: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(())
    }

    /// `⟨a|A|b⟩` for column vectors `a`, `b`.
    pub fn matrix_element(&self, bra: &CVector, ket: &CVector) -> C64 {
        bra.dotc(&(&self.matrix * ket))
    }
}

/// Tensor product; basis labels are concatenated.
pub fn kron(a: &Operator, b: &Operator) -> Operator {
    Operator {
        matrix: a.matrix.kronecker(&b.matrix),
        basis: a.basis.concat(&b.basis),
    }
}

/// Pauli matrices and the qubit ladder operator in a two-level basis
/// `{|0⟩, |1⟩}` where `σz|0⟩ = +|0⟩`.
pub mod pauli {
    use super::*;

    pub fn sigma_x(basis: Basis) -> Operator {
        let m = CMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)]);
        Operator::new(m, basis).expect("two-level basis")
    }

    pub fn sigma_y(basis: Basis) -> Operator {
        let m = CMatrix::from_row_slice(2, 2, &[c(0.0), -I, I, c(0.0)]);
        Operator::new(m, basis).expect("two-level basis")
    }

    pub fn sigma_z(basis: Basis) -> Operator {
        let m = CMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c(-1.0)]);
        Operator::new(m, basis).expect("two-level basis")
    }

    /// `|1⟩⟨0|`, lowering from the `σz = +1` level to the `σz = −1` level.
    pub fn sigma_minus(basis: Basis) -> Operator {
        let m = CMatrix::from_row_slice(2, 2, &[c(0.0), c(0.0), c(1.0), c(0.0)]);
        Operator::new(m, basis).expect("two-level basis")
    }

    pub fn two_level() -> Basis {
        Basis::single(Subsystem::new("q", &["0", "1"]))
    }
}

/// Spin-1 operators in the `{|+1⟩, |0⟩, |−1⟩}` basis, with the standard
/// normalization `[Sx, Sy] = i Sz`.
pub mod spin1 {
    use super::*;

    pub fn basis(name: &str) -> Basis {
        Basis::single(Subsystem::new(name, &["+1", "0", "-1"]))
    }

    pub fn sx(basis: Basis) -> Operator {
        let s = c(FRAC_1_SQRT_2);
        let z = c(0.0);
        let m = CMatrix::from_row_slice(3, 3, &[z, s, z, s, z, s, z, s, z]);
        Operator::new(m, basis).expect("three-level basis")
    }

    pub fn sy(basis: Basis) -> Operator {
        let s = FRAC_1_SQRT_2;
        let z = c(0.0);
        let m = CMatrix::from_row_slice(
            3,
            3,
            &[z, -I * s, z, I * s, z, -I * s, z, I * s, z],
        );
        Operator::new(m, basis).expect("three-level basis")
    }

    pub fn sz(basis: Basis) -> Operator {
        let m = CMatrix::from_diagonal(&CVector::from_vec(vec![c(1.0), c(0.0), c(-1.0)]));
        Operator::new(m, basis).expect("three-level basis")
    }
}

/// Eigendecomposition of a Hermitian operator with ascending eigenvalues.
#[derive(Clone, Debug)]
pub struct Eigen {
    pub values: Vec<f64>,
    /// Unitary matrix whose columns are the eigenvectors.
    pub vectors: CMatrix,
}

impl Eigen {
    pub fn vector(&self, k: usize) -> CVector {
        self.vectors.column(k).into_owned()
    }

    /// `V diag(f(λ)) V†`.
    pub fn apply_fn(&self, f: impl Fn(f64) -> C64) -> CMatrix {
        let mut scaled = self.vectors.clone();
        for (k, &lam) in self.values.iter().enumerate() {
            let w = f(lam);
            for r in 0..scaled.nrows() {
                scaled[(r, k)] *= w;
            }
        }
        scaled * self.vectors.adjoint()
    }
}

/// Hermitian eigendecomposition. Rejects non-Hermitian input.
pub fn eigh(h: &Operator) -> Result<Eigen> {
    let deviation = h.hermitian_deviation();
    if deviation > HERMITIAN_TOL {
        return Err(Error::NotHermitian { deviation });
    }
    Ok(eigh_matrix(&h.matrix))
}

/// Relative residual `‖HV − VΛ‖ / ‖H‖` above which a decomposition is refined.
const EIGEN_RESIDUAL_TOL: f64 = 1e-12;

/// Eigendecomposition of a matrix already known to be Hermitian.
///
/// The complex QR iteration occasionally leaves a few eigenvectors accurate
/// only to ~1e−8. When the residual shows this, the nearly diagonal
/// `V†HV` is diagonalized again and the two bases are composed.
pub(crate) fn eigh_matrix(m: &CMatrix) -> Eigen {
    let sym = (m + m.adjoint()) * c(0.5);
    let scale = sym.norm();
    let dec = SymmetricEigen::new(sym.clone());
    let residual = {
        let mut r = &sym * &dec.eigenvectors;
        for (k, &lam) in dec.eigenvalues.iter().enumerate() {
            let v = dec.eigenvectors.column(k) * c(lam);
            let mut col = r.column_mut(k);
            col -= v;
        }
        r.norm()
    };
    let dec = if residual > EIGEN_RESIDUAL_TOL * scale {
        let v = dec.eigenvectors;
        let inner = v.adjoint() * &sym * &v;
        let inner = (&inner + inner.adjoint()) * c(0.5);
        let second = SymmetricEigen::new(inner);
        SymmetricEigen {
            eigenvectors: v * second.eigenvectors,
            eigenvalues: second.eigenvalues,
        }
    } else {
        dec
    };
    let n = dec.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dec.eigenvalues[a].total_cmp(&dec.eigenvalues[b]));
    let values = order.iter().map(|&k| dec.eigenvalues[k]).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &dec.eigenvectors.column(src));
    }
    Eigen { values, vectors }
}

/// `U = exp(−i 2π H t)` for a time-independent Hamiltonian in GHz and `t` in ns.
pub fn propagator(h: &Operator, t_ns: f64) -> Result<CMatrix> {
    if t_ns < 0.0 || !t_ns.is_finite() {
        return Err(Error::param("t", format!("duration must be >= 0, got {t_ns}")));
    }
    let eig = eigh(h)?;
    Ok(eig.apply_fn(|lam| (-I * (TAU * lam * t_ns)).exp()))
}

/// State vector or density matrix over a labelled basis.
#[derive(Clone, Debug, PartialEq)]
pub enum StateData {
    Vector(CVector),
    Density(CMatrix),
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantumState {
    data: StateData,
    basis: Basis,
}

impl QuantumState {
    /// Pure state; requires `‖ψ‖ = 1` within [`STATE_TOL`].
    pub fn pure(psi: CVector, basis: Basis) -> Result<Self> {
        let s = QuantumState {
            data: StateData::Vector(psi),
            basis,
        };
        s.validate()?;
        Ok(s)
    }

    /// Density matrix; requires unit trace, Hermiticity and positivity.
    pub fn density(rho: CMatrix, basis: Basis) -> Result<Self> {
        let s = QuantumState {
            data: StateData::Density(rho),
            basis,
        };
        s.validate()?;
        Ok(s)
    }

    /// Computational basis state `|k⟩`.
    pub fn basis_state(k: usize, basis: Basis) -> Result<Self> {
        let d = basis.dim();
        if k >= d {
            return Err(Error::Dimension(format!("level {k} out of range for dim {d}")));
        }
        let mut v = CVector::zeros(d);
        v[k] = c(1.0);
        QuantumState::pure(v, basis)
    }

    pub fn data(&self) -> &StateData {
        &self.data
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        match &self.data {
            StateData::Vector(v) => v.len(),
            StateData::Density(m) => m.nrows(),
        }
    }

    pub fn as_vector(&self) -> Option<&CVector> {
        match &self.data {
            StateData::Vector(v) => Some(v),
            StateData::Density(_) => None,
        }
    }

    pub fn as_density(&self) -> Option<&CMatrix> {
        match &self.data {
            StateData::Density(m) => Some(m),
            StateData::Vector(_) => None,
        }
    }

    pub fn to_density_matrix(&self) -> CMatrix {
        match &self.data {
            StateData::Vector(v) => v * v.adjoint(),
            StateData::Density(m) => m.clone(),
        }
    }

    pub fn populations(&self) -> Vec<f64> {
        match &self.data {
            StateData::Vector(v) => v.iter().map(|a| a.norm_sqr()).collect(),
            StateData::Density(m) => (0..m.nrows()).map(|k| m[(k, k)].re).collect(),
        }
    }

    /// Check the representation invariants.
    pub fn validate(&self) -> Result<()> {
        if self.dim() != self.basis.dim() {
            return Err(Error::Dimension(format!(
                "state dimension {} does not match basis dimension {}",
                self.dim(),
                self.basis.dim()
            )));
        }
        match &self.data {
            StateData::Vector(v) => {
                let norm = v.norm();
                if (norm - 1.0).abs() > STATE_TOL {
                    return Err(Error::InvalidState(format!("norm {norm} != 1")));
                }
            }
            StateData::Density(m) => density_violation(m)?,
        }
        Ok(())
    }
}

fn density_violation(m: &CMatrix) -> Result<()> {
    if !m.is_square() {
        return Err(Error::InvalidState("density matrix must be square".into()));
    }
    let tr = m.trace();
    if (tr.re - 1.0).abs() > STATE_TOL || tr.im.abs() > STATE_TOL {
        return Err(Error::InvalidState(format!("trace {tr} != 1")));
    }
    let herm = (m - m.adjoint()).norm();
    if herm > HERMITIAN_TOL * m.norm().max(1.0) {
        return Err(Error::InvalidState(format!(
            "density matrix not Hermitian (deviation {herm:.3e})"
        )));
    }
    let min_eig = eigh_matrix(m).values[0];
    if min_eig < -STATE_TOL {
        return Err(Error::InvalidState(format!(
            "negative eigenvalue {min_eig:.3e}"
        )));
    }
    Ok(())
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(m: &CMatrix) -> f64 {
    eigh_matrix(m).values[0]
}

/// Evolve `state` under `h` for `t_ns`. Norm (or trace) is preserved.
pub fn propagate(h: &Operator, state: &QuantumState, t_ns: f64) -> Result<QuantumState> {
    if h.dim() != state.dim() {
        return Err(Error::Dimension(format!(
            "Hamiltonian dim {} vs state dim {}",
            h.dim(),
            state.dim()
        )));
    }
    let u = propagator(h, t_ns)?;
    let data = match &state.data {
        StateData::Vector(v) => StateData::Vector(&u * v),
        StateData::Density(m) => StateData::Density(&u * m * u.adjoint()),
    };
    Ok(QuantumState {
        data,
        basis: state.basis.clone(),
    })
}

/// A jump operator with its rate (1/ns).
#[derive(Clone, Debug)]
pub struct Collapse {
    pub op: Operator,
    pub rate: f64,
}

impl Collapse {
    pub fn new(op: Operator, rate: f64) -> Self {
        Collapse { op, rate }
    }
}

/// Precomputed generator of
/// `dρ/dt = −i2π[H, ρ] + Σ γ_k (L_k ρ L_k† − ½{L_k†L_k, ρ})`.
#[derive(Clone, Debug)]
pub struct Lindbladian {
    /// `2πH − (i/2) Σ γ L†L`
    h_eff: CMatrix,
    h_eff_adj: CMatrix,
    jumps: Vec<(CMatrix, CMatrix, f64)>,
}

impl Lindbladian {
    pub fn new(h: &Operator, collapses: &[Collapse]) -> Result<Self> {
        if !h.is_hermitian() {
            return Err(Error::NotHermitian {
                deviation: h.hermitian_deviation(),
            });
        }
        let mut h_eff = h.matrix() * c(TAU);
        let mut jumps = Vec::with_capacity(collapses.len());
        for col in collapses {
            if col.op.dim() != h.dim() {
                return Err(Error::Dimension(format!(
                    "collapse operator dim {} vs Hamiltonian dim {}",
                    col.op.dim(),
                    h.dim()
                )));
            }
            if !(col.rate >= 0.0) || !col.rate.is_finite() {
                return Err(Error::param("rate", format!("must be >= 0, got {}", col.rate)));
            }
            if col.rate == 0.0 {
                continue;
            }
            let l = col.op.matrix().clone();
            let ld = l.adjoint();
            h_eff -= (&ld * &l) * (I * (0.5 * col.rate));
            jumps.push((l, ld, col.rate));
        }
        let h_eff_adj = h_eff.adjoint();
        Ok(Lindbladian {
            h_eff,
            h_eff_adj,
            jumps,
        })
    }

    pub fn dim(&self) -> usize {
        self.h_eff.nrows()
    }

    /// Right-hand side `dρ/dt`.
    pub fn rhs(&self, rho: &CMatrix) -> CMatrix {
        let mut out = (&self.h_eff * rho - rho * &self.h_eff_adj) * (-I);
        for (l, ld, rate) in &self.jumps {
            out += (l * rho * ld) * c(*rate);
        }
        out
    }

    /// One classical RK4 step of length `dt_ns`.
    pub fn step(&self, rho: &CMatrix, dt_ns: f64) -> Result<CMatrix> {
        if !(dt_ns > 0.0) || !dt_ns.is_finite() {
            return Err(Error::param("dt", format!("must be > 0, got {dt_ns}")));
        }
        let h = c(dt_ns);
        let half = c(0.5 * dt_ns);
        let k1 = self.rhs(rho);
        let k2 = self.rhs(&(rho + &k1 * half));
        let k3 = self.rhs(&(rho + &k2 * half));
        let k4 = self.rhs(&(rho + &k3 * h));
        let next = rho + (k1 + (k2 + k3) * c(2.0) + k4) * c(dt_ns / 6.0);
        let drift = (next.trace() - rho.trace()).norm();
        if !(drift <= TRACE_DRIFT_LIMIT) {
            return Err(Error::TraceDrift { drift });
        }
        Ok(next)
    }
}

/// Single RK4 step of the Lindblad master equation.
pub fn lindblad_step(
    h: &Operator,
    collapses: &[Collapse],
    rho: &CMatrix,
    dt_ns: f64,
) -> Result<CMatrix> {
    Lindbladian::new(h, collapses)?.step(rho, dt_ns)
}
