//! Exact statevector simulation of small qubit registers.
//!
//! Basis ordering is little-endian: qubit `j` of basis index `k` is bit `j`
//! of `k`. All arithmetic is double-precision complex; there is no shot
//! sampling, so expectations are exact up to rounding.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest register the simulator will allocate.
pub const MAX_QUBITS: usize = 20;

/// Row-major 2x2 complex matrix.
pub type Mat2 = [[Complex64; 2]; 2];

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Pauli axis of a single-qubit rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    /// `exp(-i angle/2 P)` for this axis.
    pub fn rotation(self, angle: f64) -> Mat2 {
        let (s, c) = (angle / 2.0).sin_cos();
        match self {
            Axis::X => [
                [Complex64::new(c, 0.0), Complex64::new(0.0, -s)],
                [Complex64::new(0.0, -s), Complex64::new(c, 0.0)],
            ],
            Axis::Y => [
                [Complex64::new(c, 0.0), Complex64::new(-s, 0.0)],
                [Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
            ],
            Axis::Z => [
                [Complex64::new(c, -s), ZERO],
                [ZERO, Complex64::new(c, s)],
            ],
        }
    }
}

/// A single gate application.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Gate {
    Rx { target: usize, theta: f64 },
    Ry { target: usize, theta: f64 },
    Rz { target: usize, theta: f64 },
    U3 { target: usize, theta: f64, phi: f64, lambda: f64 },
    Cnot { control: usize, target: usize },
    Crx { control: usize, target: usize, theta: f64 },
    Cry { control: usize, target: usize, theta: f64 },
    Crz { control: usize, target: usize, theta: f64 },
}

impl Gate {
    pub fn target(&self) -> usize {
        match *self {
            Gate::Rx { target, .. }
            | Gate::Ry { target, .. }
            | Gate::Rz { target, .. }
            | Gate::U3 { target, .. }
            | Gate::Cnot { target, .. }
            | Gate::Crx { target, .. }
            | Gate::Cry { target, .. }
            | Gate::Crz { target, .. } => target,
        }
    }

    pub fn control(&self) -> Option<usize> {
        match *self {
            Gate::Cnot { control, .. }
            | Gate::Crx { control, .. }
            | Gate::Cry { control, .. }
            | Gate::Crz { control, .. } => Some(control),
            _ => None,
        }
    }

    /// The 2x2 block acting on the target. For controlled gates this is
    /// the block applied on the control = 1 subspace.
    pub fn block(&self) -> Mat2 {
        match *self {
            Gate::Rx { theta, .. } | Gate::Crx { theta, .. } => Axis::X.rotation(theta),
            Gate::Ry { theta, .. } | Gate::Cry { theta, .. } => Axis::Y.rotation(theta),
            Gate::Rz { theta, .. } | Gate::Crz { theta, .. } => Axis::Z.rotation(theta),
            Gate::U3 {
                theta, phi, lambda, ..
            } => u3(theta, phi, lambda),
            Gate::Cnot { .. } => [[ZERO, ONE], [ONE, ZERO]],
        }
    }

    pub fn validate(&self, num_qubits: usize) -> Result<()> {
        let target = self.target();
        if target >= num_qubits {
            return Err(Error::Index {
                index: target,
                qubits: num_qubits,
            });
        }
        if let Some(control) = self.control() {
            if control >= num_qubits || control == target {
                return Err(Error::Index {
                    index: control,
                    qubits: num_qubits,
                });
            }
        }
        Ok(())
    }
}

/// Standard three-angle single-qubit gate.
pub fn u3(theta: f64, phi: f64, lambda: f64) -> Mat2 {
    let (s, c) = (theta / 2.0).sin_cos();
    [
        [
            Complex64::new(c, 0.0),
            -Complex64::from_polar(s, lambda),
        ],
        [
            Complex64::from_polar(s, phi),
            Complex64::from_polar(c, phi + lambda),
        ],
    ]
}

/// Pauli-Z measured on one qubit (0-based index).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PauliZ(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    num_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl QuantumState {
    /// `|0...0>` on `num_qubits` qubits.
    pub fn zero(num_qubits: usize) -> Result<Self> {
        check_size(num_qubits)?;
        let mut amplitudes = vec![ZERO; 1 << num_qubits];
        amplitudes[0] = ONE;
        Ok(Self {
            num_qubits,
            amplitudes,
        })
    }

    /// Wraps explicit amplitudes; they must already be normalised.
    pub fn from_amplitudes(num_qubits: usize, amplitudes: Vec<Complex64>) -> Result<Self> {
        check_size(num_qubits)?;
        if amplitudes.len() != 1 << num_qubits {
            return Err(Error::Geometry(format!(
                "{} amplitudes for {num_qubits} qubits",
                amplitudes.len()
            )));
        }
        let state = Self {
            num_qubits,
            amplitudes,
        };
        if (state.norm_sqr() - 1.0).abs() > 1e-10 {
            return Err(Error::Data(format!(
                "state norm^2 {} is not 1",
                state.norm_sqr()
            )));
        }
        Ok(state)
    }

    #[inline]
    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    #[inline]
    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Multiplies every amplitude by `e^{i phi}`.
    pub fn with_global_phase(&self, phi: f64) -> Self {
        let phase = Complex64::from_polar(1.0, phi);
        Self {
            num_qubits: self.num_qubits,
            amplitudes: self.amplitudes.iter().map(|a| a * phase).collect(),
        }
    }

    pub fn apply(&mut self, gate: &Gate) -> Result<()> {
        gate.validate(self.num_qubits)?;
        match gate.control() {
            Some(control) => self.apply_controlled(control, gate.target(), &gate.block()),
            None => self.apply_single(gate.target(), &gate.block()),
        }
        Ok(())
    }

    /// Applies `m` to `target`. Indices are not validated.
    pub(crate) fn apply_single(&mut self, target: usize, m: &Mat2) {
        let stride = 1usize << target;
        let amps = &mut self.amplitudes;
        for base in (0..amps.len()).step_by(stride << 1) {
            for i in base..base + stride {
                let a0 = amps[i];
                let a1 = amps[i + stride];
                amps[i] = m[0][0] * a0 + m[0][1] * a1;
                amps[i + stride] = m[1][0] * a0 + m[1][1] * a1;
            }
        }
    }

    /// Applies `m` to `target` on the `control = 1` subspace.
    pub(crate) fn apply_controlled(&mut self, control: usize, target: usize, m: &Mat2) {
        let stride = 1usize << target;
        let cmask = 1usize << control;
        let amps = &mut self.amplitudes;
        for base in (0..amps.len()).step_by(stride << 1) {
            for i in base..base + stride {
                if i & cmask == 0 {
                    continue;
                }
                let a0 = amps[i];
                let a1 = amps[i + stride];
                amps[i] = m[0][0] * a0 + m[0][1] * a1;
                amps[i + stride] = m[1][0] * a0 + m[1][1] * a1;
            }
        }
    }

    /// Controlled-X without the complex multiplies.
    pub(crate) fn apply_cnot(&mut self, control: usize, target: usize) {
        let tmask = 1usize << target;
        let cmask = 1usize << control;
        for i in 0..self.amplitudes.len() {
            if i & cmask != 0 && i & tmask == 0 {
                self.amplitudes.swap(i, i | tmask);
            }
        }
    }

    /// `P(qubit = 0) - P(qubit = 1)`.
    pub fn expectation_z(&self, qubit: usize) -> Result<f64> {
        if qubit >= self.num_qubits {
            return Err(Error::Index {
                index: qubit,
                qubits: self.num_qubits,
            });
        }
        let mask = 1usize << qubit;
        // rounding can push |<Z>| a few ulps past one
        let e: f64 = self
            .amplitudes
            .iter()
            .enumerate()
            .map(|(k, a)| {
                let p = a.norm_sqr();
                if k & mask == 0 {
                    p
                } else {
                    -p
                }
            })
            .sum();
        Ok(e.clamp(-1.0, 1.0))
    }

    /// `<Z_l>` for every qubit `l`, in one pass over the amplitudes.
    pub fn expectations(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.num_qubits];
        for (k, a) in self.amplitudes.iter().enumerate() {
            let p = a.norm_sqr();
            for (l, e) in out.iter_mut().enumerate() {
                if (k >> l) & 1 == 0 {
                    *e += p;
                } else {
                    *e -= p;
                }
            }
        }
        out.iter_mut().for_each(|e| *e = e.clamp(-1.0, 1.0));
        out
    }
}

fn check_size(num_qubits: usize) -> Result<()> {
    if num_qubits == 0 || num_qubits > MAX_QUBITS {
        return Err(Error::Size {
            qubits: num_qubits,
            max: MAX_QUBITS,
        });
    }
    Ok(())
}

pub fn init_state(num_qubits: usize) -> Result<QuantumState> {
    QuantumState::zero(num_qubits)
}

/// Value-style gate application: returns `U |state>`.
pub fn apply_gate(state: &QuantumState, gate: &Gate) -> Result<QuantumState> {
    let mut out = state.clone();
    out.apply(gate)?;
    Ok(out)
}

pub fn expectation_z(state: &QuantumState, obs: PauliZ) -> Result<f64> {
    state.expectation_z(obs.0)
}

pub fn expectation_all(state: &QuantumState) -> Vec<f64> {
    state.expectations()
}
