//! Small classical layers with hand-written backward passes: a convolution
//! lowered through im2col, and a dense layer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{col2im_adjoint, im2col_with, ConvGeometry, PatchMatrix};
use crate::error::{Error, Result};
use crate::tensor::Tensor3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    geometry: ConvGeometry,
    out_channels: usize,
    /// `out_channels x (kh * kw * C_in)`, row-major, columns in im2col order.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub input: Option<Tensor3>,
}

impl Conv2d {
    /// He-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(
        in_shape: (usize, usize, usize),
        kernel: (usize, usize),
        stride: usize,
        pad: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let geometry = ConvGeometry::new(in_shape, kernel, stride, pad)?;
        if out_channels == 0 {
            return Err(Error::Config("convolution needs output channels".into()));
        }
        let fan_in = geometry.cols();
        let bound = (6.0 / fan_in as f64).sqrt();
        Ok(Self {
            geometry,
            out_channels,
            weights: (0..out_channels * fan_in).map(|_| rng.gen_range(-bound..bound)).collect(),
            bias: vec![0.0; out_channels],
        })
    }

    pub fn geometry(&self) -> &ConvGeometry {
        &self.geometry
    }

    pub fn out_shape(&self) -> (usize, usize, usize) {
        (self.geometry.out_height, self.geometry.out_width, self.out_channels)
    }

    pub fn in_shape(&self) -> (usize, usize, usize) {
        (self.geometry.in_height, self.geometry.in_width, self.geometry.in_channels)
    }

    fn check(&self, x: &Tensor3) -> Result<()> {
        if x.shape() != self.in_shape() {
            return Err(Error::Geometry(format!(
                "convolution expects {:?}, got {:?}",
                self.in_shape(),
                x.shape()
            )));
        }
        Ok(())
    }

    /// Linear output, no activation.
    pub fn forward(&self, x: &Tensor3) -> Result<Tensor3> {
        self.check(x)?;
        let p = im2col_with(x, &self.geometry);
        let cols = p.cols();
        let (h, w, c) = self.out_shape();
        let mut out = Vec::with_capacity(h * w * c);
        for i in 0..p.rows() {
            let row = p.row(i);
            for o in 0..c {
                let wr = &self.weights[o * cols..(o + 1) * cols];
                out.push(self.bias[o] + wr.iter().zip(row).map(|(a, b)| a * b).sum::<f64>());
            }
        }
        Tensor3::new(h, w, c, out)
    }

    pub fn backward(&self, x: &Tensor3, upstream: &Tensor3, want_input: bool) -> Result<ConvGrad> {
        self.check(x)?;
        if upstream.shape() != self.out_shape() {
            return Err(Error::Geometry("convolution upstream shape mismatch".into()));
        }
        let p = im2col_with(x, &self.geometry);
        let cols = p.cols();
        let c = self.out_channels;
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = vec![0.0; c];
        let mut gp = vec![0.0; if want_input { p.rows() * cols } else { 0 }];
        for i in 0..p.rows() {
            let row = p.row(i);
            let up = &upstream.values()[i * c..(i + 1) * c];
            for (o, &g) in up.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                gb[o] += g;
                let wr = &self.weights[o * cols..(o + 1) * cols];
                gw[o * cols..(o + 1) * cols]
                    .iter_mut()
                    .zip(row)
                    .for_each(|(a, v)| *a += g * v);
                if want_input {
                    gp[i * cols..(i + 1) * cols]
                        .iter_mut()
                        .zip(wr)
                        .for_each(|(a, v)| *a += g * v);
                }
            }
        }
        let input = if want_input {
            Some(col2im_adjoint(&PatchMatrix::from_values(self.geometry, gp)?)?)
        } else {
            None
        };
        Ok(ConvGrad {
            weights: gw,
            bias: gb,
            input,
        })
    }

    pub fn sgd_step(&mut self, g: &ConvGrad, lr: f64) {
        self.weights.iter_mut().zip(&g.weights).for_each(|(w, d)| *w -= lr * d);
        self.bias.iter_mut().zip(&g.bias).for_each(|(b, d)| *b -= lr * d);
    }
}

pub fn relu(x: &Tensor3) -> Tensor3 {
    let mut y = x.clone();
    y.values_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// Masks `upstream` where the pre-activation was not positive.
pub fn relu_backward(pre: &Tensor3, upstream: &Tensor3) -> Tensor3 {
    let mut g = upstream.clone();
    g.values_mut()
        .iter_mut()
        .zip(pre.values())
        .for_each(|(g, p)| {
            if *p <= 0.0 {
                *g = 0.0
            }
        });
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs x inputs`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| rng.gen_range(-bound..bound)).collect(),
            bias: vec![0.0; outputs],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.inputs);
        (0..self.outputs)
            .map(|o| {
                let w = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                self.bias[o] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    /// Returns `(d weights, d bias, d input)`.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut gw = vec![0.0; self.weights.len()];
        let mut gx = vec![0.0; self.inputs];
        for (o, &g) in upstream.iter().enumerate() {
            let w = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            for j in 0..self.inputs {
                gw[o * self.inputs + j] = g * x[j];
                gx[j] += g * w[j];
            }
        }
        (gw, upstream.to_vec(), gx)
    }

    pub fn sgd_step(&mut self, gw: &[f64], gb: &[f64], lr: f64) {
        self.weights.iter_mut().zip(gw).for_each(|(w, d)| *w -= lr * d);
        self.bias.iter_mut().zip(gb).for_each(|(b, d)| *b -= lr * d);
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Cross-entropy of `softmax(logits)` against `label`, and its gradient.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let p = softmax(logits);
    let loss = -p[label].max(f64::MIN_POSITIVE).ln();
    let mut g = p;
    g[label] -= 1.0;
    (loss, g)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random(shape: (usize, usize, usize), rng: &mut ChaCha8Rng) -> Tensor3 {
        let n = shape.0 * shape.1 * shape.2;
        Tensor3::new(shape.0, shape.1, shape.2, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn conv_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Conv2d::new((4, 4, 2), (3, 3), 2, 1, 3, &mut rng).unwrap();
        conv.bias = vec![0.1, -0.2, 0.3];
        let x = random((4, 4, 2), &mut rng);
        let up = random(conv.out_shape(), &mut rng);
        let g = conv.backward(&x, &up, true).unwrap();
        let f = |c: &Conv2d, x: &Tensor3| c.forward(x).unwrap().dot(&up);
        let h = 1e-6;
        for k in 0..conv.weights.len() {
            let mut a = conv.clone();
            a.weights[k] += h;
            let mut b = conv.clone();
            b.weights[k] -= h;
            assert!(((f(&a, &x) - f(&b, &x)) / (2.0 * h) - g.weights[k]).abs() < 1e-7);
        }
        let gi = g.input.unwrap();
        for k in 0..x.values().len() {
            let mut a = x.clone();
            a.values_mut()[k] += h;
            let mut b = x.clone();
            b.values_mut()[k] -= h;
            assert!(((f(&conv, &a) - f(&conv, &b)) / (2.0 * h) - gi.values()[k]).abs() < 1e-7);
        }
    }

    #[test]
    fn dense_and_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = Dense::new(3, 2, &mut rng);
        let x = [0.3, -0.5, 0.9];
        let (loss, g) = softmax_cross_entropy(&d.forward(&x), 1);
        assert!(loss > 0.0);
        assert!((g.iter().sum::<f64>()).abs() < 1e-12);
        let (gw, _, _) = d.backward(&x, &g);
        let h = 1e-6;
        for k in 0..gw.len() {
            let mut a = d.clone();
            a.weights[k] += h;
            let mut b = d.clone();
            b.weights[k] -= h;
            let fd = (softmax_cross_entropy(&a.forward(&x), 1).0 - softmax_cross_entropy(&b.forward(&x), 1).0) / (2.0 * h);
            assert!((fd - gw[k]).abs() < 1e-7);
        }
        let p = softmax(&[1000.0, 0.0]);
        assert!(p[0] > 0.999 && p.iter().all(|v| v.is_finite()));
    }
}
