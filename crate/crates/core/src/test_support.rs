//! Dense-matrix reference used only by unit tests.

use num_complex::Complex64;

use crate::circuit::{Angle, Op};
use crate::statevector::{Gate, Mat2};

pub type Dense = Vec<Vec<Complex64>>;

const O: Complex64 = Complex64::new(0.0, 0.0);
const I1: Complex64 = Complex64::new(1.0, 0.0);

fn kron(a: &Dense, b: &Dense) -> Dense {
    let (n, m) = (a.len(), b.len());
    let mut out = vec![vec![O; n * m]; n * m];
    for i in 0..n {
        for j in 0..n {
            for k in 0..m {
                for l in 0..m {
                    out[i * m + k][j * m + l] = a[i][j] * b[k][l];
                }
            }
        }
    }
    out
}

fn from2(m: &Mat2) -> Dense {
    vec![m[0].to_vec(), m[1].to_vec()]
}

/// Tensor product with qubit 0 as the least significant factor.
fn embed(q: usize, factors: impl Fn(usize) -> Dense) -> Dense {
    let mut out = vec![vec![I1]];
    for j in (0..q).rev() {
        out = kron(&out, &factors(j));
    }
    out
}

fn add(a: &Dense, b: &Dense) -> Dense {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

pub fn single(q: usize, target: usize, m: &Mat2) -> Dense {
    let id = vec![vec![I1, O], vec![O, I1]];
    embed(q, |j| if j == target { from2(m) } else { id.clone() })
}

pub fn controlled(q: usize, control: usize, target: usize, m: &Mat2) -> Dense {
    let id = vec![vec![I1, O], vec![O, I1]];
    let p0 = vec![vec![I1, O], vec![O, O]];
    let p1 = vec![vec![O, O], vec![O, I1]];
    let off = embed(q, |j| if j == control { p0.clone() } else { id.clone() });
    let on = embed(q, |j| {
        if j == control {
            p1.clone()
        } else if j == target {
            from2(m)
        } else {
            id.clone()
        }
    });
    add(&off, &on)
}

pub fn gate(q: usize, g: &Gate) -> Dense {
    match g.control() {
        Some(c) => controlled(q, c, g.target(), &g.block()),
        None => single(q, g.target(), &g.block()),
    }
}

pub fn op(q: usize, op: &Op, params: &[f64], inputs: &[f64]) -> Dense {
    match *op {
        Op::Rotation { axis, target, angle } => {
            let a = match angle {
                Angle::Fixed(v) => v,
                Angle::Param(k) => params[k],
                Angle::Input { index, scale } => scale * inputs[index],
            };
            single(q, target, &axis.rotation(a))
        }
        Op::Cnot { control, target } => {
            let x = [[O, I1], [I1, O]];
            controlled(q, control, target, &x)
        }
    }
}

pub fn matvec(m: &Dense, v: &[Complex64]) -> Vec<Complex64> {
    m.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

pub fn z_expectation(v: &[Complex64], qubit: usize) -> f64 {
    v.iter()
        .enumerate()
        .map(|(k, a)| if (k >> qubit) & 1 == 0 { a.norm_sqr() } else { -a.norm_sqr() })
        .sum()
}
