//! Dense statevector quantum simulator.
//!
//! A `q`-qubit pure state is stored as 2^q complex amplitudes. Qubit 0 is the
//! most significant bit of the basis index, so the ket |x_0 x_1 … x_{q-1}⟩
//! lives at index Σ_j x_j · 2^(q-1-j) and |10⟩ is index 2. Gates act in place
//! on pairs of amplitudes; expectations are exact (no shot sampling).

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Hard cap on the register size: 2^12 = 4096 amplitudes.
pub const MAX_QUBITS: usize = 12;

/// Rotation axis for single-qubit rotation gates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// A gate in a circuit description.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gate {
    /// Single-qubit rotation by `angle` radians about `axis`.
    Rotation { axis: Axis, angle: f64, qubit: usize },
    /// Controlled-NOT: flips `target` when `control` is |1⟩.
    Cnot { control: usize, target: usize },
    /// Controlled single-qubit unitary U(α,β,γ) = Rz(α)·Ry(β)·Rz(γ) acting on
    /// `target` when `control` is |1⟩.
    Cu {
        control: usize,
        target: usize,
        alpha: f64,
        beta: f64,
        gamma: f64,
    },
}

impl Gate {
    pub fn apply(&self, state: &mut StateVector) -> Result<()> {
        match *self {
            Gate::Rotation { axis, angle, qubit } => state.apply_rotation(axis, angle, qubit),
            Gate::Cnot { control, target } => state.apply_cnot(control, target),
            Gate::Cu {
                control,
                target,
                alpha,
                beta,
                gamma,
            } => state.apply_cu(control, target, alpha, beta, gamma),
        }
    }
}

/// 2x2 single-qubit rotation matrix, row-major [u00, u01, u10, u11].
pub fn rotation_matrix(axis: Axis, angle: f64) -> [Complex64; 4] {
    let half = angle / 2.0;
    let (c, s) = (half.cos(), half.sin());
    match axis {
        Axis::X => [
            Complex64::new(c, 0.0),
            Complex64::new(0.0, -s),
            Complex64::new(0.0, -s),
            Complex64::new(c, 0.0),
        ],
        Axis::Y => [
            Complex64::new(c, 0.0),
            Complex64::new(-s, 0.0),
            Complex64::new(s, 0.0),
            Complex64::new(c, 0.0),
        ],
        Axis::Z => [
            Complex64::from_polar(1.0, -half),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::from_polar(1.0, half),
        ],
    }
}

/// The U(α,β,γ) = Rz(α)·Ry(β)·Rz(γ) block of a CU gate, row-major.
pub fn cu_unitary(alpha: f64, beta: f64, gamma: f64) -> [Complex64; 4] {
    let (cb, sb) = ((beta / 2.0).cos(), (beta / 2.0).sin());
    [
        Complex64::from_polar(cb, -(alpha + gamma) / 2.0),
        -Complex64::from_polar(sb, -(alpha - gamma) / 2.0),
        Complex64::from_polar(sb, (alpha - gamma) / 2.0),
        Complex64::from_polar(cb, (alpha + gamma) / 2.0),
    ]
}

/// Pure quantum state of `num_qubits` qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    num_qubits: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// |0…0⟩ on `q` qubits. Requires 1 ≤ q ≤ 12.
    pub fn zero(q: usize) -> Result<Self> {
        if q < 1 || q > MAX_QUBITS {
            return Err(Error::Config(format!(
                "qubit count must be in 1..={MAX_QUBITS}, got {q}"
            )));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << q];
        amps[0] = Complex64::new(1.0, 0.0);
        Ok(Self { num_qubits: q, amps })
    }

    /// Build from raw amplitudes; the length must be a power of two and the
    /// norm must be 1 within 1e-10.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        let dim = amps.len();
        if !dim.is_power_of_two() || dim < 2 {
            return Err(Error::Validation(format!(
                "amplitude count {dim} is not a power of two >= 2"
            )));
        }
        let q = dim.trailing_zeros() as usize;
        if q > MAX_QUBITS {
            return Err(Error::Config(format!(
                "qubit count must be in 1..={MAX_QUBITS}, got {q}"
            )));
        }
        let norm_sqr: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if (norm_sqr - 1.0).abs() > 1e-10 {
            return Err(Error::Validation(format!(
                "state norm² = {norm_sqr}, expected 1"
            )));
        }
        Ok(Self { num_qubits: q, amps })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    fn bit_mask(&self, qubit: usize) -> usize {
        1 << (self.num_qubits - 1 - qubit)
    }

    fn check_qubit(&self, qubit: usize, role: &str) -> Result<()> {
        if qubit >= self.num_qubits {
            return Err(Error::Argument(format!(
                "{role} qubit {qubit} out of range for {} qubits",
                self.num_qubits
            )));
        }
        Ok(())
    }

    /// Apply a 2x2 matrix `m` (row-major) to `qubit`.
    fn apply_one_qubit(&mut self, m: &[Complex64; 4], qubit: usize) {
        let mask = self.bit_mask(qubit);
        for i in 0..self.amps.len() {
            if i & mask == 0 {
                let j = i | mask;
                let a0 = self.amps[i];
                let a1 = self.amps[j];
                self.amps[i] = m[0] * a0 + m[1] * a1;
                self.amps[j] = m[2] * a0 + m[3] * a1;
            }
        }
    }

    /// Rotation gate about `axis` by `angle` radians on `qubit`.
    pub fn apply_rotation(&mut self, axis: Axis, angle: f64, qubit: usize) -> Result<()> {
        self.check_qubit(qubit, "rotation")?;
        self.apply_one_qubit(&rotation_matrix(axis, angle), qubit);
        Ok(())
    }

    /// CNOT with the given control and target.
    pub fn apply_cnot(&mut self, control: usize, target: usize) -> Result<()> {
        self.check_qubit(control, "control")?;
        self.check_qubit(target, "target")?;
        if control == target {
            return Err(Error::Argument(format!(
                "control and target must differ, both are {control}"
            )));
        }
        let cmask = self.bit_mask(control);
        let tmask = self.bit_mask(target);
        for i in 0..self.amps.len() {
            if i & cmask != 0 && i & tmask == 0 {
                let j = i | tmask;
                self.amps.swap(i, j);
            }
        }
        Ok(())
    }

    /// Controlled-U with U = Rz(α)·Ry(β)·Rz(γ) on the target qubit.
    pub fn apply_cu(
        &mut self,
        control: usize,
        target: usize,
        alpha: f64,
        beta: f64,
        gamma: f64,
    ) -> Result<()> {
        self.check_qubit(control, "control")?;
        self.check_qubit(target, "target")?;
        if control == target {
            return Err(Error::Argument(format!(
                "control and target must differ, both are {control}"
            )));
        }
        let m = cu_unitary(alpha, beta, gamma);
        let cmask = self.bit_mask(control);
        let tmask = self.bit_mask(target);
        for i in 0..self.amps.len() {
            if i & cmask != 0 && i & tmask == 0 {
                let j = i | tmask;
                let a0 = self.amps[i];
                let a1 = self.amps[j];
                self.amps[i] = m[0] * a0 + m[1] * a1;
                self.amps[j] = m[2] * a0 + m[3] * a1;
            }
        }
        Ok(())
    }

    /// Exact ⟨Z⟩ on `qubit`: +1 weight for basis states with the bit clear,
    /// −1 with it set. Always in [−1, 1].
    pub fn expectation_z(&self, qubit: usize) -> Result<f64> {
        self.check_qubit(qubit, "observable")?;
        let mask = self.bit_mask(qubit);
        let mut value = 0.0;
        for (i, a) in self.amps.iter().enumerate() {
            let w = a.norm_sqr();
            if i & mask == 0 {
                value += w;
            } else {
                value -= w;
            }
        }
        Ok(value.clamp(-1.0, 1.0))
    }

    /// ⟨self|other⟩ = Σ conj(self_i)·other_i.
    pub fn inner_product(&self, other: &StateVector) -> Result<Complex64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch(format!(
                "inner product between dims {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// Squared overlap |⟨self|other⟩|².
    pub fn fidelity(&self, other: &StateVector) -> Result<f64> {
        Ok(self.inner_product(other)?.norm_sqr())
    }

    /// Partial trace onto the qubits in `keep` (any order; the subsystem's
    /// qubit order follows the sorted keep list). `keep` must be a nonempty
    /// proper subset of the register.
    pub fn reduced_density(&self, keep: &[usize]) -> Result<DensityMatrix> {
        let q = self.num_qubits;
        let mut keep_sorted = keep.to_vec();
        keep_sorted.sort_unstable();
        keep_sorted.dedup();
        if keep_sorted.len() != keep.len() {
            return Err(Error::Argument("keep set has duplicate qubits".into()));
        }
        if keep_sorted.is_empty() || keep_sorted.len() >= q {
            return Err(Error::Argument(format!(
                "keep set must be a nonempty proper subset of 0..{q}"
            )));
        }
        if let Some(&bad) = keep_sorted.iter().find(|&&i| i >= q) {
            return Err(Error::Argument(format!(
                "keep qubit {bad} out of range for {q} qubits"
            )));
        }

        let env: Vec<usize> = (0..q).filter(|i| !keep_sorted.contains(i)).collect();
        let keep_masks: Vec<usize> = keep_sorted.iter().map(|&i| self.bit_mask(i)).collect();
        let env_masks: Vec<usize> = env.iter().map(|&i| self.bit_mask(i)).collect();

        let kd = 1 << keep_sorted.len();
        let ed = 1 << env.len();
        // Full index with the sub-register's bits spread onto their positions.
        let assemble = |sub: usize, masks: &[usize]| -> usize {
            let mut idx = 0;
            for (r, &m) in masks.iter().enumerate() {
                if sub & (1 << (masks.len() - 1 - r)) != 0 {
                    idx |= m;
                }
            }
            idx
        };

        let mut entries = vec![Complex64::new(0.0, 0.0); kd * kd];
        for a in 0..kd {
            let ia = assemble(a, &keep_masks);
            for b in 0..kd {
                let ib = assemble(b, &keep_masks);
                let mut acc = Complex64::new(0.0, 0.0);
                for e in 0..ed {
                    let ie = assemble(e, &env_masks);
                    acc += self.amps[ia | ie] * self.amps[ib | ie].conj();
                }
                entries[a * kd + b] = acc;
            }
        }
        Ok(DensityMatrix { dim: kd, entries })
    }
}

/// Hermitian, unit-trace density matrix (row-major storage).
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    dim: usize,
    entries: Vec<Complex64>,
}

impl DensityMatrix {
    pub fn from_entries(dim: usize, entries: Vec<Complex64>) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {dim}x{dim} matrix",
                entries.len()
            )));
        }
        let m = Self { dim, entries };
        m.check_hermitian()?;
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        self.entries[row * self.dim + col]
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|i| self.entry(i, i)).sum()
    }

    fn check_hermitian(&self) -> Result<()> {
        for r in 0..self.dim {
            for c in r..self.dim {
                let d = (self.entry(r, c) - self.entry(c, r).conj()).norm();
                if d > 1e-10 {
                    return Err(Error::Validation(format!(
                        "matrix not Hermitian at ({r},{c}): deviation {d:.3e}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Eigenvalues by cyclic Jacobi on the Hermitian matrix, ascending.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        self.check_hermitian()?;
        Ok(hermitian_eigenvalues(self.dim, self.entries.clone()))
    }

    /// Von Neumann entropy −Σ λ log₂ λ in bits, with 0·log 0 := 0.
    /// Eigenvalues are clamped to [0, 1] after a −1e-10 tolerance check.
    pub fn von_neumann_entropy(&self) -> Result<f64> {
        let eigs = self.eigenvalues()?;
        let mut s = 0.0;
        for lambda in eigs {
            if lambda < -1e-10 {
                return Err(Error::Validation(format!(
                    "density matrix has negative eigenvalue {lambda:.3e}"
                )));
            }
            let lambda = lambda.clamp(0.0, 1.0);
            if lambda > 0.0 {
                s -= lambda * lambda.log2();
            }
        }
        Ok(s.max(0.0))
    }
}

/// Cyclic Jacobi eigenvalue iteration for an n×n Hermitian matrix.
///
/// Each (p,q) step factors the phase out of the off-diagonal entry and
/// applies the classic real Jacobi rotation, preserving hermiticity.
fn hermitian_eigenvalues(n: usize, mut a: Vec<Complex64>) -> Vec<f64> {
    if n == 1 {
        return vec![a[0].re];
    }
    let scale: f64 = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt().max(1.0);
    let tol = 1e-28 * scale * scale;
    for _sweep in 0..60 {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| a[p * n + q].norm_sqr())
            .sum();
        if off <= tol {
            break;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                let r = apq.norm();
                if r <= 1e-300 {
                    continue;
                }
                let phase = apq / r;
                let app = a[p * n + p].re;
                let aqq = a[q * n + q].re;
                let tau = (aqq - app) / (2.0 * r);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                // Column update with V[p][p]=c, V[p][q]=s·phase,
                // V[q][p]=−s·conj(phase), V[q][q]=c; then rows by hermiticity.
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * phase.conj() * akq;
                    a[k * n + q] = s * phase * akp + c * akq;
                }
                for k in 0..n {
                    a[p * n + k] = a[k * n + p].conj();
                    a[q * n + k] = a[k * n + q].conj();
                }
                a[p * n + p] = Complex64::new(app - t * r, 0.0);
                a[q * n + q] = Complex64::new(aqq + t * r, 0.0);
                a[p * n + q] = Complex64::new(0.0, 0.0);
                a[q * n + p] = Complex64::new(0.0, 0.0);
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| a[i * n + i].re).collect();
    eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eigs
}
