//! Dense-matrix reference oracles for the integration tests.
//!
//! Everything here is built straight from textbook definitions (Kronecker
//! embeddings, entrywise controlled blocks, outer-product partial trace,
//! eigensolver from nalgebra via the real symmetric embedding) and never
//! calls the simulator's pair-update code paths it is used to check.

#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use esqfl_core::esqnn::{Arch, EsqnnParams, ModelConfig};
use esqfl_core::qsim::{Axis, Gate, StateVector};

pub type C = Complex64;

fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

/// Dense complex matrix, row-major.
#[derive(Clone, Debug)]
pub struct CMat {
    pub n: usize,
    pub a: Vec<C>,
}

impl CMat {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            a: vec![c(0.0, 0.0); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.a[i * n + i] = c(1.0, 0.0);
        }
        m
    }

    pub fn get(&self, r: usize, col: usize) -> C {
        self.a[r * self.n + col]
    }

    pub fn set(&mut self, r: usize, col: usize, v: C) {
        self.a[r * self.n + col] = v;
    }

    pub fn mul(&self, other: &CMat) -> CMat {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = CMat::zeros(n);
        for r in 0..n {
            for k in 0..n {
                let x = self.get(r, k);
                if x.norm_sqr() == 0.0 {
                    continue;
                }
                for col in 0..n {
                    out.a[r * n + col] += x * other.get(k, col);
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[C]) -> Vec<C> {
        assert_eq!(self.n, v.len());
        (0..self.n)
            .map(|r| (0..self.n).map(|k| self.get(r, k) * v[k]).sum())
            .collect()
    }

    pub fn dagger(&self) -> CMat {
        let mut out = CMat::zeros(self.n);
        for r in 0..self.n {
            for col in 0..self.n {
                out.set(col, r, self.get(r, col).conj());
            }
        }
        out
    }

    pub fn kron(&self, other: &CMat) -> CMat {
        let n = self.n * other.n;
        let mut out = CMat::zeros(n);
        for r1 in 0..self.n {
            for c1 in 0..self.n {
                for r2 in 0..other.n {
                    for c2 in 0..other.n {
                        out.set(
                            r1 * other.n + r2,
                            c1 * other.n + c2,
                            self.get(r1, c1) * other.get(r2, c2),
                        );
                    }
                }
            }
        }
        out
    }

    /// max |(U†U − I)_{ij}|.
    pub fn max_unitarity_defect(&self) -> f64 {
        let p = self.dagger().mul(self);
        let mut worst = 0.0f64;
        for r in 0..self.n {
            for col in 0..self.n {
                let expect = if r == col { c(1.0, 0.0) } else { c(0.0, 0.0) };
                worst = worst.max((p.get(r, col) - expect).norm());
            }
        }
        worst
    }
}

fn mat2(a: [C; 4]) -> CMat {
    CMat { n: 2, a: a.to_vec() }
}

fn mat2_mul(a: [C; 4], b: [C; 4]) -> [C; 4] {
    [
        a[0] * b[0] + a[1] * b[2],
        a[0] * b[1] + a[1] * b[3],
        a[2] * b[0] + a[3] * b[2],
        a[2] * b[1] + a[3] * b[3],
    ]
}

pub fn rot2(axis: Axis, angle: f64) -> [C; 4] {
    let h = angle / 2.0;
    match axis {
        Axis::X => [
            c(h.cos(), 0.0),
            c(0.0, -h.sin()),
            c(0.0, -h.sin()),
            c(h.cos(), 0.0),
        ],
        Axis::Y => [
            c(h.cos(), 0.0),
            c(-h.sin(), 0.0),
            c(h.sin(), 0.0),
            c(h.cos(), 0.0),
        ],
        Axis::Z => [
            C::from_polar(1.0, -h),
            c(0.0, 0.0),
            c(0.0, 0.0),
            C::from_polar(1.0, h),
        ],
    }
}

/// U(α,β,γ) as the literal product Rz(α)·Ry(β)·Rz(γ).
pub fn cu2(alpha: f64, beta: f64, gamma: f64) -> [C; 4] {
    mat2_mul(rot2(Axis::Z, alpha), mat2_mul(rot2(Axis::Y, beta), rot2(Axis::Z, gamma)))
}

/// Embed a 2x2 matrix on `qubit` of a `q`-qubit register (qubit 0 is the
/// most significant index bit): I ⊗ … ⊗ U ⊗ … ⊗ I.
pub fn embed_single(q: usize, qubit: usize, u: [C; 4]) -> CMat {
    let left = CMat::identity(1 << qubit);
    let right = CMat::identity(1 << (q - 1 - qubit));
    left.kron(&mat2(u)).kron(&right)
}

/// Full 2^q matrix of one gate, built entrywise from its definition.
pub fn gate_matrix(q: usize, gate: &Gate) -> CMat {
    let dim = 1 << q;
    let bit = |qubit: usize| 1usize << (q - 1 - qubit);
    match *gate {
        Gate::Rotation { axis, angle, qubit } => embed_single(q, qubit, rot2(axis, angle)),
        Gate::Cnot { control, target } => {
            let (cm, tm) = (bit(control), bit(target));
            let mut m = CMat::zeros(dim);
            for col in 0..dim {
                let row = if col & cm != 0 { col ^ tm } else { col };
                m.set(row, col, c(1.0, 0.0));
            }
            m
        }
        Gate::Cu {
            control,
            target,
            alpha,
            beta,
            gamma,
        } => {
            let u = cu2(alpha, beta, gamma);
            let (cm, tm) = (bit(control), bit(target));
            let mut m = CMat::zeros(dim);
            for i in 0..dim {
                if i & cm == 0 {
                    m.set(i, i, c(1.0, 0.0));
                } else if i & tm == 0 {
                    let j = i | tm;
                    m.set(i, i, u[0]);
                    m.set(i, j, u[1]);
                    m.set(j, i, u[2]);
                    m.set(j, j, u[3]);
                }
            }
            m
        }
    }
}

/// Product of the circuit's gate matrices in application order.
pub fn circuit_matrix(q: usize, gates: &[Gate]) -> CMat {
    let mut m = CMat::identity(1 << q);
    for g in gates {
        m = gate_matrix(q, g).mul(&m);
    }
    m
}

/// Random normalized amplitudes.
pub fn random_state<R: Rng>(q: usize, rng: &mut R) -> Vec<C> {
    let mut v: Vec<C> = (0..1usize << q)
        .map(|_| c(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let norm = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    for a in &mut v {
        *a /= norm;
    }
    v
}

pub fn to_statevector(amps: &[C]) -> StateVector {
    StateVector::from_amplitudes(amps.to_vec()).expect("normalized by construction")
}

/// Random feasible power split built back to front with strict margins, so
/// every ν_j exceeds u′ times the later sum.
pub fn random_feasible_nu<R: Rng>(
    levels: usize,
    u_prime: f64,
    rng: &mut R,
) -> esqfl_core::channel::PowerAllocation {
    let mut unnormalized = vec![0.0f64; levels];
    unnormalized[levels - 1] = 1.0;
    let mut suffix = 1.0;
    for j in (0..levels - 1).rev() {
        let margin = rng.random_range(0.1..2.0);
        unnormalized[j] = u_prime * suffix * (1.0 + margin);
        suffix += unnormalized[j];
    }
    let total: f64 = unnormalized.iter().sum();
    let mut nu: Vec<f64> = unnormalized.iter().map(|v| v / total).collect();
    let correction: f64 = 1.0 - nu.iter().sum::<f64>();
    nu[0] += correction;
    esqfl_core::channel::PowerAllocation::new(nu).expect("feasible by construction")
}

/// Random circuit over rotations, CNOTs and CUs (rotations only on a single
/// qubit, where no two-qubit gate exists).
pub fn random_circuit<R: Rng>(q: usize, gates: usize, rng: &mut R) -> Vec<Gate> {
    use std::f64::consts::PI;
    (0..gates)
        .map(|_| match if q < 2 { 0 } else { rng.random_range(0..3) } {
            0 => Gate::Rotation {
                axis: match rng.random_range(0..3) {
                    0 => Axis::X,
                    1 => Axis::Y,
                    _ => Axis::Z,
                },
                angle: rng.random_range(-PI..PI),
                qubit: rng.random_range(0..q),
            },
            1 => {
                let control = rng.random_range(0..q);
                let mut target = rng.random_range(0..q);
                while target == control {
                    target = rng.random_range(0..q);
                }
                Gate::Cnot { control, target }
            }
            _ => {
                let control = rng.random_range(0..q);
                let mut target = rng.random_range(0..q);
                while target == control {
                    target = rng.random_range(0..q);
                }
                Gate::Cu {
                    control,
                    target,
                    alpha: rng.random_range(-PI..PI),
                    beta: rng.random_range(-PI..PI),
                    gamma: rng.random_range(-PI..PI),
                }
            }
        })
        .collect()
}

pub fn max_amp_error(actual: &[C], expected: &[C]) -> f64 {
    actual
        .iter()
        .zip(expected)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max)
}

/// Reduced density matrix by forming the full outer product and tracing out
/// the complement, with bit placement computed from scratch.
pub fn reduced_density_oracle(q: usize, amps: &[C], keep: &[usize]) -> Vec<Vec<C>> {
    let mut keep = keep.to_vec();
    keep.sort_unstable();
    let env: Vec<usize> = (0..q).filter(|i| !keep.contains(i)).collect();
    let kd = 1usize << keep.len();
    let ed = 1usize << env.len();
    let place = |sub: usize, positions: &[usize]| -> usize {
        let mut idx = 0usize;
        for (r, &qubit) in positions.iter().enumerate() {
            if sub & (1 << (positions.len() - 1 - r)) != 0 {
                idx |= 1 << (q - 1 - qubit);
            }
        }
        idx
    };
    // Full outer product, then partial trace.
    let dim = 1usize << q;
    let mut full = vec![vec![c(0.0, 0.0); dim]; dim];
    for (i, ai) in amps.iter().enumerate() {
        for (j, aj) in amps.iter().enumerate() {
            full[i][j] = ai * aj.conj();
        }
    }
    let mut rho = vec![vec![c(0.0, 0.0); kd]; kd];
    for a in 0..kd {
        for b in 0..kd {
            for e in 0..ed {
                let ia = place(a, &keep) | place(e, &env);
                let ib = place(b, &keep) | place(e, &env);
                rho[a][b] += full[ia][ib];
            }
        }
    }
    rho
}

/// Hermitian eigenvalues through nalgebra on the real symmetric embedding
/// [[X, −Y], [Y, X]]; each eigenvalue of X+iY appears twice.
pub fn hermitian_eigenvalues_oracle(rho: &[Vec<C>]) -> Vec<f64> {
    let n = rho.len();
    let mut m = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for r in 0..n {
        for col in 0..n {
            let z = rho[r][col];
            m[(r, col)] = z.re;
            m[(r + n, col + n)] = z.re;
            m[(r, col + n)] = -z.im;
            m[(r + n, col)] = z.im;
        }
    }
    let mut eigs: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eigs.into_iter().step_by(2).collect()
}

pub fn entropy_from_eigenvalues(eigs: &[f64]) -> f64 {
    eigs.iter()
        .filter(|&&l| l > 1e-14)
        .map(|&l| -l * l.log2())
        .sum()
}

/// Dense-route forward pass of the model: encoder matrices then layer
/// matrices multiplied onto |0…0⟩.
pub fn dense_forward(
    model: &ModelConfig,
    params: &EsqnnParams,
    features: &[f64],
    depth: usize,
) -> Vec<C> {
    use std::f64::consts::PI;
    let q = model.num_qubits;
    let mut state = vec![c(0.0, 0.0); 1 << q];
    state[0] = c(1.0, 0.0);
    for qubit in 0..q {
        let f = &features[4 * qubit..4 * qubit + 4];
        for (axis, value) in [
            (Axis::Y, f[0]),
            (Axis::Z, f[1]),
            (Axis::Y, f[2]),
            (Axis::Z, f[3]),
        ] {
            state = embed_single(q, qubit, rot2(axis, PI * value)).matvec(&state);
        }
    }
    for layer in 0..depth {
        for i in 0..q {
            let gates: Vec<Gate> = match model.arch {
                Arch::Esqnn => vec![Gate::Cu {
                    control: i,
                    target: (i + 1) % q,
                    alpha: params.get(layer, i, 0),
                    beta: params.get(layer, i, 1),
                    gamma: params.get(layer, i, 2),
                }],
                Arch::VanillaSqnn => vec![
                    Gate::Rotation {
                        axis: Axis::X,
                        angle: params.get(layer, i, 0),
                        qubit: i,
                    },
                    Gate::Rotation {
                        axis: Axis::Y,
                        angle: params.get(layer, i, 1),
                        qubit: i,
                    },
                    Gate::Rotation {
                        axis: Axis::Z,
                        angle: params.get(layer, i, 2),
                        qubit: i,
                    },
                ],
            };
            for g in gates {
                state = gate_matrix(q, &g).matvec(&state);
            }
        }
        if model.arch == Arch::VanillaSqnn {
            for i in 0..q {
                state = gate_matrix(
                    q,
                    &Gate::Cnot {
                        control: i,
                        target: (i + 1) % q,
                    },
                )
                .matvec(&state);
            }
        }
    }
    state
}

/// Observable ⟨Z_c⟩ from raw amplitudes.
pub fn dense_expectation_z(q: usize, amps: &[C], qubit: usize) -> f64 {
    let mask = 1usize << (q - 1 - qubit);
    amps.iter()
        .enumerate()
        .map(|(i, a)| {
            if i & mask == 0 {
                a.norm_sqr()
            } else {
                -a.norm_sqr()
            }
        })
        .sum()
}

/// Softmax over scaled observables, recomputed locally.
pub fn dense_softmax(obs: &[f64], scale: f64) -> Vec<f64> {
    let exps: Vec<f64> = obs.iter().map(|&v| (scale * v).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Depth-l combined loss evaluated entirely through the dense route, with an
/// explicitly frozen teacher state.
pub struct DenseLossOracle {
    pub model: ModelConfig,
    pub lambda: f64,
    pub scale: f64,
}

impl DenseLossOracle {
    pub fn teacher(&self, params: &EsqnnParams, features: &[f64]) -> Vec<C> {
        dense_forward(&self.model, params, features, self.model.num_layers)
    }

    pub fn loss(
        &self,
        params: &EsqnnParams,
        features: &[f64],
        label: usize,
        depth: usize,
        teacher: &[C],
    ) -> f64 {
        let q = self.model.num_qubits;
        let state = dense_forward(&self.model, params, features, depth);
        let obs: Vec<f64> = (0..self.model.num_classes)
            .map(|cq| dense_expectation_z(q, &state, cq))
            .collect();
        let probs = dense_softmax(&obs, self.scale);
        let ce = -(probs[label].max(1e-12)).ln();
        if depth == self.model.num_layers {
            return self.lambda * ce;
        }
        let overlap: C = teacher
            .iter()
            .zip(&state)
            .map(|(t, s)| t.conj() * s)
            .sum();
        let fd = 1.0 - overlap.norm_sqr();
        self.lambda * ce + (1.0 - self.lambda) * fd
    }
}
