//! Trainable U3CU3 circuits and their parameter-shift derivatives.
//!
//! A block is a U3 on every qubit followed, when there are at least two
//! qubits, by an entangling U3 on each ring pair `(i, i + 1 mod q)`.
//! U3 is realised as `RZ(phi) RY(theta) RZ(lambda)` and the ring entangler
//! as `CNOT (1 x U3) CNOT`, i.e. the same three rotations with `Z_c P_t`
//! generators. Every trainable angle therefore drives a rotation whose
//! generator squares to the identity, which keeps the two-point shift rule
//! exact and the circuit `2 pi`-periodic in each angle.

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::{Angle, Circuit, GradRequest, Op, SHIFT};
use crate::encoding::UploadPlan;
use crate::error::{Error, Result};
use crate::statevector::{Axis, QuantumState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PqcSpec {
    pub qubits: usize,
    pub blocks: usize,
}

impl PqcSpec {
    pub fn new(qubits: usize, blocks: usize) -> Result<Self> {
        if qubits == 0 || qubits > crate::statevector::MAX_QUBITS {
            return Err(Error::Config(format!("unsupported qubit count {qubits}")));
        }
        Ok(Self { qubits, blocks })
    }

    pub fn params_per_block(&self) -> usize {
        if self.qubits >= 2 {
            6 * self.qubits
        } else {
            3
        }
    }

    pub fn num_params(&self) -> usize {
        self.blocks * self.params_per_block()
    }

    pub fn has_entanglers(&self) -> bool {
        self.qubits >= 2
    }

    /// Gate list with parameter indices starting at `offset`.
    pub fn ops(&self, offset: usize) -> Vec<Op> {
        let q = self.qubits;
        let mut ops = Vec::new();
        let mut k = offset;
        for _ in 0..self.blocks {
            for target in 0..q {
                push_u3(&mut ops, target, k);
                k += 3;
            }
            if q >= 2 {
                for control in 0..q {
                    let target = (control + 1) % q;
                    ops.push(Op::Cnot { control, target });
                    push_u3(&mut ops, target, k);
                    ops.push(Op::Cnot { control, target });
                    k += 3;
                }
            }
        }
        ops
    }

    pub fn circuit(&self) -> Circuit {
        Circuit::new(self.qubits, self.ops(0)).expect("ring indices are in range")
    }
}

/// `RZ(phi) RY(theta) RZ(lambda)` on `target`, parameters `[theta, phi, lambda]` at `k`.
pub(crate) fn push_u3(ops: &mut Vec<Op>, target: usize, k: usize) {
    let rot = |axis, idx| Op::Rotation {
        axis,
        target,
        angle: Angle::Param(idx),
    };
    ops.push(rot(Axis::Z, k + 2));
    ops.push(rot(Axis::Y, k));
    ops.push(rot(Axis::Z, k + 1));
}

/// Trainable angles, kept reduced modulo `2 pi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite parameter at index {i}")));
        }
        Ok(Self(values.into_iter().map(wrap).collect()))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    /// Uniform on `[0, 2 pi)`.
    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        Self((0..len).map(|_| rng.gen_range(0.0..TAU)).collect())
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `theta <- theta - lr * grad`, then re-reduced.
    pub fn sgd_step(&mut self, grad: &[f64], lr: f64) {
        assert_eq!(grad.len(), self.0.len());
        for (t, g) in self.0.iter_mut().zip(grad) {
            *t = wrap(*t - lr * g);
        }
    }
}

fn wrap(v: f64) -> f64 {
    let r = v.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

fn check_params(spec: &PqcSpec, params: &ParamVector) -> Result<()> {
    if params.len() != spec.num_params() {
        return Err(Error::Geometry(format!(
            "PQC expects {} parameters, got {}",
            spec.num_params(),
            params.len()
        )));
    }
    Ok(())
}

pub fn pqc_forward(state: &QuantumState, spec: &PqcSpec, params: &ParamVector) -> Result<QuantumState> {
    check_params(spec, params)?;
    spec.circuit().run_from(state, params.values(), &[])
}

/// `d<Z_observable>/d theta_k` for every `k` by the shift rule.
pub fn param_shift_grad(
    spec: &PqcSpec,
    params: &ParamVector,
    input_state: &QuantumState,
    observable: usize,
) -> Result<Vec<f64>> {
    param_shift_grad_with_shift(spec, params, input_state, observable, SHIFT)
}

/// As [`param_shift_grad`] with an explicit shift; anything other than
/// `pi/2` gives a wrong derivative and exists for negative controls.
pub fn param_shift_grad_with_shift(
    spec: &PqcSpec,
    params: &ParamVector,
    input_state: &QuantumState,
    observable: usize,
    shift: f64,
) -> Result<Vec<f64>> {
    check_params(spec, params)?;
    let weights = one_hot(spec.qubits, observable)?;
    let g = spec.circuit().gradients(
        input_state,
        params.values(),
        &[],
        &weights,
        GradRequest {
            params: true,
            inputs: false,
            shift,
        },
    )?;
    Ok(g.params)
}

/// `d<Z_observable>/d row_j` through the upload angles, for the circuit
/// `PQC(encode_row(row))`.
pub fn input_shift_grad(
    plan: &UploadPlan,
    spec: &PqcSpec,
    params: &ParamVector,
    row: &[f64],
    observable: usize,
) -> Result<Vec<f64>> {
    check_params(spec, params)?;
    if plan.qubits != spec.qubits {
        return Err(Error::Geometry(format!(
            "upload plan has {} qubits, PQC has {}",
            plan.qubits, spec.qubits
        )));
    }
    let weights = one_hot(spec.qubits, observable)?;
    let mut ops = plan.ops(0, row.len());
    ops.extend(spec.ops(0));
    let circuit = Circuit::new(spec.qubits, ops)?;
    let init = QuantumState::zero(spec.qubits)?;
    let g = circuit.gradients(
        &init,
        params.values(),
        row,
        &weights,
        GradRequest {
            params: false,
            inputs: true,
            shift: SHIFT,
        },
    )?;
    Ok(g.inputs)
}

fn one_hot(qubits: usize, index: usize) -> Result<Vec<f64>> {
    if index >= qubits {
        return Err(Error::Index { index, qubits });
    }
    let mut w = vec![0.0; qubits];
    w[index] = 1.0;
    Ok(w)
}
