//! Gate lists whose rotation angles are bound late, either to trainable
//! parameters or to uploaded data, plus exact parameter-shift derivatives.
//!
//! Every rotation here is `exp(-i a P / 2)` for a Pauli `P`, so the
//! expectation of any observable is a sinusoid in `a` with unit frequency
//! and the two-point shift rule at `±pi/2` is exact. A parameter may occur
//! several times; its derivative is the sum over occurrences.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::statevector::{Axis, QuantumState};

/// Shift used by the parameter-shift rule.
pub const SHIFT: f64 = FRAC_PI_2;

/// Where a rotation gets its angle from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Angle {
    Fixed(f64),
    /// Trainable parameter `index`.
    Param(usize),
    /// `scale * inputs[index]`.
    Input { index: usize, scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Op {
    Rotation { axis: Axis, target: usize, angle: Angle },
    Cnot { control: usize, target: usize },
}

/// Gate invocations grouped by where their angle came from.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpTally {
    pub input_rotations: u64,
    pub param_rotations: u64,
    pub fixed_rotations: u64,
    pub cnots: u64,
}

impl OpTally {
    fn record(&mut self, op: &Op) {
        match op {
            Op::Rotation { angle, .. } => match angle {
                Angle::Fixed(_) => self.fixed_rotations += 1,
                Angle::Param(_) => self.param_rotations += 1,
                Angle::Input { .. } => self.input_rotations += 1,
            },
            Op::Cnot { .. } => self.cnots += 1,
        }
    }
}

impl std::ops::AddAssign for OpTally {
    fn add_assign(&mut self, rhs: Self) {
        self.input_rotations += rhs.input_rotations;
        self.param_rotations += rhs.param_rotations;
        self.fixed_rotations += rhs.fixed_rotations;
        self.cnots += rhs.cnots;
    }
}

/// What [`Circuit::gradients`] should compute.
#[derive(Debug, Clone, Copy)]
pub struct GradRequest {
    pub params: bool,
    pub inputs: bool,
    pub shift: f64,
}

impl Default for GradRequest {
    fn default() -> Self {
        Self {
            params: true,
            inputs: true,
            shift: SHIFT,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub inputs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    num_qubits: usize,
    ops: Vec<Op>,
    num_params: usize,
    num_inputs: usize,
}

impl Circuit {
    pub fn new(num_qubits: usize, ops: Vec<Op>) -> Result<Self> {
        let check = |q: usize| {
            if q >= num_qubits {
                Err(Error::Index {
                    index: q,
                    qubits: num_qubits,
                })
            } else {
                Ok(())
            }
        };
        let mut num_params = 0;
        let mut num_inputs = 0;
        for op in &ops {
            match *op {
                Op::Rotation { target, angle, .. } => {
                    check(target)?;
                    match angle {
                        Angle::Param(k) => num_params = num_params.max(k + 1),
                        Angle::Input { index, .. } => num_inputs = num_inputs.max(index + 1),
                        Angle::Fixed(_) => {}
                    }
                }
                Op::Cnot { control, target } => {
                    check(control)?;
                    check(target)?;
                    if control == target {
                        return Err(Error::Index {
                            index: control,
                            qubits: num_qubits,
                        });
                    }
                }
            }
        }
        Ok(Self {
            num_qubits,
            ops,
            num_params,
            num_inputs,
        })
    }

    #[inline]
    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    #[inline]
    pub fn ops(&self) -> &[Op] {
        &self.ops
    }

    /// One more than the largest parameter index referenced.
    #[inline]
    pub fn num_params(&self) -> usize {
        self.num_params
    }

    #[inline]
    pub fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    /// Gate invocations performed by one run.
    pub fn tally(&self) -> OpTally {
        let mut t = OpTally::default();
        for op in &self.ops {
            t.record(op);
        }
        t
    }

    fn check_bindings(&self, params: &[f64], inputs: &[f64]) -> Result<()> {
        if params.len() < self.num_params {
            return Err(Error::Geometry(format!(
                "circuit needs {} parameters, got {}",
                self.num_params,
                params.len()
            )));
        }
        if inputs.len() < self.num_inputs {
            return Err(Error::Geometry(format!(
                "circuit needs {} inputs, got {}",
                self.num_inputs,
                inputs.len()
            )));
        }
        if let Some(i) = inputs.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite input at index {i}")));
        }
        Ok(())
    }

    /// Runs the circuit on `|0...0>`.
    pub fn run(&self, params: &[f64], inputs: &[f64]) -> Result<QuantumState> {
        let init = QuantumState::zero(self.num_qubits)?;
        self.run_from(&init, params, inputs)
    }

    pub fn run_from(
        &self,
        init: &QuantumState,
        params: &[f64],
        inputs: &[f64],
    ) -> Result<QuantumState> {
        let mut tally = OpTally::default();
        self.run_tallied(init, params, inputs, &mut tally)
    }

    /// As [`Circuit::run_from`], counting every gate as it is applied.
    pub fn run_tallied(
        &self,
        init: &QuantumState,
        params: &[f64],
        inputs: &[f64],
        tally: &mut OpTally,
    ) -> Result<QuantumState> {
        self.check_state(init)?;
        self.check_bindings(params, inputs)?;
        let mut state = init.clone();
        for op in &self.ops {
            apply(&mut state, op, params, inputs, 0.0);
            tally.record(op);
        }
        Ok(state)
    }

    fn check_state(&self, state: &QuantumState) -> Result<()> {
        if state.num_qubits() != self.num_qubits {
            return Err(Error::Geometry(format!(
                "{}-qubit state fed to a {}-qubit circuit",
                state.num_qubits(),
                self.num_qubits
            )));
        }
        Ok(())
    }

    /// Derivatives of `sum_l weights[l] <Z_l>` at the output, by the shift
    /// rule applied to each angle occurrence.
    ///
    /// The prefix state before each differentiated gate is built once and
    /// reused for both shifted evaluations.
    pub fn gradients(
        &self,
        init: &QuantumState,
        params: &[f64],
        inputs: &[f64],
        weights: &[f64],
        request: GradRequest,
    ) -> Result<Gradients> {
        self.check_state(init)?;
        self.check_bindings(params, inputs)?;
        if weights.len() != self.num_qubits {
            return Err(Error::Geometry(format!(
                "{} observable weights for {} qubits",
                weights.len(),
                self.num_qubits
            )));
        }
        let mut grads = Gradients {
            params: vec![0.0; if request.params { self.num_params } else { 0 }],
            inputs: vec![0.0; if request.inputs { self.num_inputs } else { 0 }],
        };
        if weights.iter().all(|&w| w == 0.0) {
            return Ok(grads);
        }

        let mut prefix = init.clone();
        for (t, op) in self.ops.iter().enumerate() {
            let slot = match op {
                Op::Rotation {
                    angle: Angle::Param(k),
                    ..
                } if request.params => Some((&mut grads.params[*k], 1.0)),
                Op::Rotation {
                    angle: Angle::Input { index, scale },
                    ..
                } if request.inputs => Some((&mut grads.inputs[*index], *scale)),
                _ => None,
            };
            if let Some((acc, coeff)) = slot {
                let plus = self.shifted_value(&prefix, t, params, inputs, weights, request.shift);
                let minus = self.shifted_value(&prefix, t, params, inputs, weights, -request.shift);
                *acc += coeff * 0.5 * (plus - minus);
            }
            apply(&mut prefix, op, params, inputs, 0.0);
        }
        Ok(grads)
    }

    fn shifted_value(
        &self,
        prefix: &QuantumState,
        at: usize,
        params: &[f64],
        inputs: &[f64],
        weights: &[f64],
        shift: f64,
    ) -> f64 {
        let mut state = prefix.clone();
        apply(&mut state, &self.ops[at], params, inputs, shift);
        for op in &self.ops[at + 1..] {
            apply(&mut state, op, params, inputs, 0.0);
        }
        weighted_z(&state, weights)
    }
}

#[inline]
fn resolve(angle: Angle, params: &[f64], inputs: &[f64]) -> f64 {
    match angle {
        Angle::Fixed(v) => v,
        Angle::Param(k) => params[k],
        Angle::Input { index, scale } => scale * inputs[index],
    }
}

#[inline]
fn apply(state: &mut QuantumState, op: &Op, params: &[f64], inputs: &[f64], shift: f64) {
    match *op {
        Op::Rotation {
            axis,
            target,
            angle,
        } => {
            let a = resolve(angle, params, inputs) + shift;
            state.apply_single(target, &axis.rotation(a));
        }
        Op::Cnot { control, target } => state.apply_cnot(control, target),
    }
}

/// `sum_l weights[l] <Z_l>`.
pub fn weighted_z(state: &QuantumState, weights: &[f64]) -> f64 {
    state
        .expectations()
        .iter()
        .zip(weights)
        .map(|(e, w)| e * w)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_indices() {
        let op = Op::Rotation {
            axis: Axis::X,
            target: 3,
            angle: Angle::Fixed(0.0),
        };
        assert!(Circuit::new(2, vec![op]).is_err());
        assert!(Circuit::new(2, vec![Op::Cnot { control: 0, target: 0 }]).is_err());
    }

    #[test]
    fn counts_bindings() {
        let c = Circuit::new(
            2,
            vec![
                Op::Rotation { axis: Axis::Y, target: 0, angle: Angle::Input { index: 4, scale: 1.0 } },
                Op::Rotation { axis: Axis::Y, target: 1, angle: Angle::Param(2) },
                Op::Cnot { control: 0, target: 1 },
            ],
        )
        .unwrap();
        assert_eq!(c.num_params(), 3);
        assert_eq!(c.num_inputs(), 5);
        let t = c.tally();
        assert_eq!((t.input_rotations, t.param_rotations, t.cnots), (1, 1, 1));
        assert!(c.run(&[0.0; 2], &[0.0; 5]).is_err());
        assert!(c.run(&[0.0; 3], &[0.0; 4]).is_err());
    }

    #[test]
    fn shared_parameter_sums_occurrences() {
        // RY(a) RY(a) |0> = RY(2a)|0>, so <Z> = cos 2a and d/da = -2 sin 2a.
        let c = Circuit::new(
            1,
            vec![
                Op::Rotation { axis: Axis::Y, target: 0, angle: Angle::Param(0) },
                Op::Rotation { axis: Axis::Y, target: 0, angle: Angle::Param(0) },
            ],
        )
        .unwrap();
        let a = 0.37;
        let init = QuantumState::zero(1).unwrap();
        let g = c.gradients(&init, &[a], &[], &[1.0], GradRequest::default()).unwrap();
        assert!((g.params[0] + 2.0 * (2.0 * a).sin()).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_short_circuit() {
        let c = Circuit::new(
            1,
            vec![Op::Rotation { axis: Axis::X, target: 0, angle: Angle::Param(0) }],
        )
        .unwrap();
        let init = QuantumState::zero(1).unwrap();
        let g = c.gradients(&init, &[1.0], &[], &[0.0], GradRequest::default()).unwrap();
        assert_eq!(g.params, vec![0.0]);
    }
}
