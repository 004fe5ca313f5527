//! The quantum proposal head and its classical teacher.
//!
//! Both map a feature tensor to an objectness map with `2k` channels and
//! a box-delta map with `4k` channels on the same grid.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{Circuit, GradRequest};
use crate::classical::{relu, relu_backward, Conv2d, ConvGrad};
use crate::encoding::UploadPlan;
use crate::error::{Error, Result};
use crate::pqc::{push_u3, ParamVector};
use crate::qconv::{LayerGrad, QConvConfig, QConvLayer};
use crate::statevector::QuantumState;
use crate::tensor::Tensor3;

/// One-qubit 1x1 quantum filter: per position the `C` input values are
/// uploaded in turn, each upload followed by its own U3, and the single
/// `<Z>` is mapped to every output channel by `scale_o z + offset_o`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseFilter {
    pub channels: usize,
    pub plan: UploadPlan,
    pub theta: ParamVector,
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseGrad {
    pub theta: Vec<f64>,
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
    pub input: Tensor3,
}

impl PointwiseFilter {
    pub fn new<R: Rng + ?Sized>(channels: usize, outputs: usize, plan: UploadPlan, rng: &mut R) -> Result<Self> {
        if plan.qubits != 1 {
            return Err(Error::Config("pointwise filters use a single qubit".into()));
        }
        if channels == 0 || outputs == 0 {
            return Err(Error::Config("pointwise filter needs inputs and outputs".into()));
        }
        Ok(Self {
            channels,
            plan,
            theta: ParamVector::random(3 * channels, rng),
            scale: (0..outputs).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            offset: vec![0.0; outputs],
        })
    }

    pub fn outputs(&self) -> usize {
        self.scale.len()
    }

    pub fn circuit(&self) -> Circuit {
        let mut ops = Vec::with_capacity(4 * self.channels);
        for (j, upload) in self.plan.ops(0, self.channels).into_iter().enumerate() {
            ops.push(upload);
            push_u3(&mut ops, 0, 3 * j);
        }
        Circuit::new(1, ops).expect("single-qubit filter")
    }

    fn check(&self, x: &Tensor3) -> Result<()> {
        if x.channels() != self.channels {
            return Err(Error::Geometry(format!(
                "pointwise filter expects {} channels, got {}",
                self.channels,
                x.channels()
            )));
        }
        Ok(())
    }

    /// The measured `<Z>` at every position, in `[-1, 1]`.
    pub fn features(&self, x: &Tensor3) -> Result<Vec<f64>> {
        self.check(x)?;
        let circuit = self.circuit();
        let init = QuantumState::zero(1)?;
        let c = self.channels;
        x.values()
            .par_chunks(c)
            .map(|v| Ok(circuit.run_from(&init, self.theta.values(), v)?.expectation_z(0)?))
            .collect()
    }

    pub fn forward(&self, x: &Tensor3) -> Result<Tensor3> {
        let z = self.features(x)?;
        let o = self.outputs();
        let mut out = Vec::with_capacity(z.len() * o);
        for zi in z {
            out.extend(self.scale.iter().zip(&self.offset).map(|(a, b)| a * zi + b));
        }
        Tensor3::new(x.height(), x.width(), o, out)
    }

    pub fn backward(&self, x: &Tensor3, upstream: &Tensor3) -> Result<PointwiseGrad> {
        self.check(x)?;
        let o = self.outputs();
        if upstream.shape() != (x.height(), x.width(), o) {
            return Err(Error::Geometry("pointwise upstream shape mismatch".into()));
        }
        let circuit = self.circuit();
        let init = QuantumState::zero(1)?;
        let c = self.channels;
        let theta = self.theta.values();
        let per_pos: Vec<(f64, Vec<f64>, Vec<f64>)> = x
            .values()
            .par_chunks(c)
            .zip(upstream.values().par_chunks(o))
            .map(|(v, up)| -> Result<_> {
                let z = circuit.run_from(&init, theta, v)?.expectation_z(0)?;
                let gz: f64 = up.iter().zip(&self.scale).map(|(g, a)| g * a).sum();
                let g = circuit.gradients(&init, theta, v, &[gz], GradRequest::default())?;
                Ok((z, g.params, g.inputs))
            })
            .collect::<Result<_>>()?;
        let mut grad = PointwiseGrad {
            theta: vec![0.0; theta.len()],
            scale: vec![0.0; o],
            offset: vec![0.0; o],
            input: Tensor3::zeros(x.height(), x.width(), c),
        };
        for (i, (z, gt, gi)) in per_pos.iter().enumerate() {
            let up = &upstream.values()[i * o..(i + 1) * o];
            for k in 0..o {
                grad.scale[k] += up[k] * z;
                grad.offset[k] += up[k];
            }
            grad.theta.iter_mut().zip(gt).for_each(|(a, b)| *a += b);
            grad.input.values_mut()[i * c..(i + 1) * c].copy_from_slice(gi);
        }
        Ok(grad)
    }

    pub fn sgd_step(&mut self, g: &PointwiseGrad, lr: f64) {
        self.theta.sgd_step(&g.theta, lr);
        self.scale.iter_mut().zip(&g.scale).for_each(|(w, d)| *w -= lr * d);
        self.offset.iter_mut().zip(&g.offset).for_each(|(w, d)| *w -= lr * d);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub in_shape: (usize, usize, usize),
    pub stride: usize,
    pub mid_channels: usize,
    pub anchors: usize,
    pub qubits: usize,
    pub pqc_blocks: usize,
}

impl HeadConfig {
    pub fn grid(&self) -> (usize, usize) {
        let (h, w, _) = self.in_shape;
        ((h - 1) / self.stride + 1, (w - 1) / self.stride + 1)
    }
}

/// Output pair of a proposal head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub cls: Tensor3,
    pub reg: Tensor3,
}

impl HeadOutput {
    /// Both maps flattened, objectness first.
    pub fn logits(&self) -> Vec<f64> {
        self.cls.values().iter().chain(self.reg.values()).copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrpnHead {
    pub config: HeadConfig,
    pub trunk: QConvLayer,
    pub cls: PointwiseFilter,
    pub reg: PointwiseFilter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QrpnGrad {
    pub trunk: LayerGrad,
    pub cls: PointwiseGrad,
    pub reg: PointwiseGrad,
}

impl QrpnGrad {
    pub fn is_finite(&self) -> bool {
        let pw = |g: &PointwiseGrad| g.theta.iter().chain(&g.scale).chain(&g.offset).all(|v| v.is_finite());
        self.trunk.is_finite() && pw(&self.cls) && pw(&self.reg)
    }
}

impl QrpnHead {
    pub fn new<R: Rng + ?Sized>(config: HeadConfig, rng: &mut R) -> Result<Self> {
        let trunk_cfg = QConvConfig {
            stride: config.stride,
            qubits: config.qubits,
            pqc_blocks: config.pqc_blocks,
            ..QConvConfig::new(config.in_shape, config.mid_channels)
        };
        let mut trunk = QConvLayer::new(trunk_cfg, rng)?;
        // a small positive bias keeps most ReLUs open at the start
        trunk.bias.iter_mut().for_each(|b| *b = 0.5);
        let plan = UploadPlan::ry(1);
        let cls = PointwiseFilter::new(config.mid_channels, 2 * config.anchors, plan, rng)?;
        let reg = PointwiseFilter::new(config.mid_channels, 4 * config.anchors, plan, rng)?;
        Ok(Self { config, trunk, cls, reg })
    }

    pub fn num_params(&self) -> usize {
        let pw = |p: &PointwiseFilter| p.theta.len() + p.scale.len() + p.offset.len();
        self.trunk.num_params() + pw(&self.cls) + pw(&self.reg)
    }

    pub fn forward(&self, x: &Tensor3) -> Result<HeadOutput> {
        let mid = self.trunk.forward(x)?;
        Ok(HeadOutput {
            cls: self.cls.forward(&mid)?,
            reg: self.reg.forward(&mid)?,
        })
    }

    /// Gradients for upstream gradients on both maps. The input gradient of
    /// the trunk is not formed since the head sits on the image.
    pub fn backward(&self, x: &Tensor3, g_cls: &Tensor3, g_reg: &Tensor3) -> Result<QrpnGrad> {
        let mid = self.trunk.forward(x)?;
        let cls = self.cls.backward(&mid, g_cls)?;
        let reg = self.reg.backward(&mid, g_reg)?;
        let mut g_mid = cls.input.clone();
        g_mid
            .values_mut()
            .iter_mut()
            .zip(reg.input.values())
            .for_each(|(a, b)| *a += b);
        let trunk = self.trunk.backward(x, &g_mid, false)?;
        Ok(QrpnGrad { trunk, cls, reg })
    }

    pub fn sgd_step(&mut self, g: &QrpnGrad, lr: f64) {
        self.trunk.sgd_step(&g.trunk, lr);
        self.cls.sgd_step(&g.cls, lr);
        self.reg.sgd_step(&g.reg, lr);
    }
}

/// Classical teacher with the same output shapes: 3x3 conv + ReLU, then
/// two 1x1 convs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalHead {
    pub config: HeadConfig,
    pub trunk: Conv2d,
    pub cls: Conv2d,
    pub reg: Conv2d,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalGrad {
    pub trunk: ConvGrad,
    pub cls: ConvGrad,
    pub reg: ConvGrad,
}

impl ClassicalHead {
    pub fn new<R: Rng + ?Sized>(config: HeadConfig, rng: &mut R) -> Result<Self> {
        let trunk = Conv2d::new(config.in_shape, (3, 3), config.stride, 1, config.mid_channels, rng)?;
        let mid = trunk.out_shape();
        let mut cls = Conv2d::new(mid, (1, 1), 1, 0, 2 * config.anchors, rng)?;
        let mut reg = Conv2d::new(mid, (1, 1), 1, 0, 4 * config.anchors, rng)?;
        // start with small predictions, as is usual for proposal heads
        cls.weights.iter_mut().chain(reg.weights.iter_mut()).for_each(|w| *w *= 0.1);
        Ok(Self { config, trunk, cls, reg })
    }

    pub fn forward(&self, x: &Tensor3) -> Result<HeadOutput> {
        let mid = relu(&self.trunk.forward(x)?);
        Ok(HeadOutput {
            cls: self.cls.forward(&mid)?,
            reg: self.reg.forward(&mid)?,
        })
    }

    pub fn backward(&self, x: &Tensor3, g_cls: &Tensor3, g_reg: &Tensor3) -> Result<ClassicalGrad> {
        let pre = self.trunk.forward(x)?;
        let mid = relu(&pre);
        let cls = self.cls.backward(&mid, g_cls, true)?;
        let reg = self.reg.backward(&mid, g_reg, true)?;
        let mut g_mid = cls.input.clone().expect("requested");
        g_mid
            .values_mut()
            .iter_mut()
            .zip(reg.input.as_ref().expect("requested").values())
            .for_each(|(a, b)| *a += b);
        let trunk = self.trunk.backward(x, &relu_backward(&pre, &g_mid), false)?;
        Ok(ClassicalGrad { trunk, cls, reg })
    }

    pub fn sgd_step(&mut self, g: &ClassicalGrad, lr: f64) {
        self.trunk.sgd_step(&g.trunk, lr);
        self.cls.sgd_step(&g.cls, lr);
        self.reg.sgd_step(&g.reg, lr);
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn config(in_shape: (usize, usize, usize)) -> HeadConfig {
        HeadConfig {
            in_shape,
            stride: 2,
            mid_channels: 3,
            anchors: 3,
            qubits: 4,
            pqc_blocks: 1,
        }
    }

    #[test]
    fn shapes_match_between_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for shape in [(1, 1, 3), (5, 7, 2), (8, 8, 3)] {
            let cfg = config(shape);
            let q = QrpnHead::new(cfg, &mut rng).unwrap().forward(&Tensor3::zeros(shape.0, shape.1, shape.2)).unwrap();
            let c = ClassicalHead::new(cfg, &mut rng).unwrap().forward(&Tensor3::zeros(shape.0, shape.1, shape.2)).unwrap();
            let (gh, gw) = cfg.grid();
            assert_eq!(q.cls.shape(), (gh, gw, 6));
            assert_eq!(q.reg.shape(), (gh, gw, 12));
            assert_eq!(q.cls.shape(), c.cls.shape());
            assert_eq!(q.reg.shape(), c.reg.shape());
        }
    }

    #[test]
    fn constant_input_gives_constant_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut cfg = config((6, 6, 2));
        cfg.stride = 1;
        let mut head = QrpnHead::new(cfg, &mut rng).unwrap();
        head.trunk.theta = ParamVector::zeros(head.trunk.theta.len());
        head.cls.theta = ParamVector::zeros(head.cls.theta.len());
        let out = head.forward(&Tensor3::zeros(6, 6, 2)).unwrap();
        for y in 0..6 {
            for x in 0..6 {
                assert_eq!(out.cls.pixel(y, x), out.cls.pixel(0, 0));
                assert_eq!(out.reg.pixel(y, x), out.reg.pixel(0, 0));
            }
        }
    }

    #[test]
    fn pointwise_features_are_bounded_and_single_qubit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = PointwiseFilter::new(4, 6, UploadPlan::ry(1), &mut rng).unwrap();
        assert_eq!(f.circuit().num_qubits(), 1);
        assert_eq!(f.circuit().tally().cnots, 0);
        let x = Tensor3::new(2, 1, 4, (0..8).map(|i| i as f64 * 0.7 - 2.0).collect()).unwrap();
        assert!(f.features(&x).unwrap().iter().all(|z| (-1.0..=1.0).contains(z)));
    }

    #[test]
    fn quantum_head_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut cfg = config((3, 3, 2));
        cfg.qubits = 2;
        let head = QrpnHead::new(cfg, &mut rng).unwrap();
        let x = Tensor3::new(3, 3, 2, (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let out = head.forward(&x).unwrap();
        let rand_like = |t: &Tensor3, rng: &mut ChaCha8Rng| {
            let (h, w, c) = t.shape();
            Tensor3::new(h, w, c, (0..h * w * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
        };
        let gc = rand_like(&out.cls, &mut rng);
        let gr = rand_like(&out.reg, &mut rng);
        let g = head.backward(&x, &gc, &gr).unwrap();
        let obj = |h: &QrpnHead| {
            let o = h.forward(&x).unwrap();
            o.cls.dot(&gc) + o.reg.dot(&gr)
        };
        let eps = 1e-6;
        let check = |analytic: f64, bump: &dyn Fn(&mut QrpnHead, f64)| {
            let mut a = head.clone();
            bump(&mut a, eps);
            let mut b = head.clone();
            bump(&mut b, -eps);
            let fd = (obj(&a) - obj(&b)) / (2.0 * eps);
            assert!((fd - analytic).abs() <= 1e-4 * fd.abs().max(1.0), "{analytic} vs {fd}");
        };
        for k in 0..head.cls.theta.len() {
            check(g.cls.theta[k], &|h, e| {
                let mut v = h.cls.theta.values().to_vec();
                v[k] += e;
                h.cls.theta = ParamVector::new(v).unwrap();
            });
        }
        for k in 0..head.reg.scale.len() {
            check(g.reg.scale[k], &|h, e| h.reg.scale[k] += e);
        }
        for k in 0..head.trunk.theta.len() {
            check(g.trunk.theta[k], &|h, e| {
                let mut v = h.trunk.theta.values().to_vec();
                v[k] += e;
                h.trunk.theta = ParamVector::new(v).unwrap();
            });
        }
        for k in 0..head.trunk.weights.len() {
            check(g.trunk.weights[k], &|h, e| h.trunk.weights[k] += e);
        }
    }

    #[test]
    fn classical_head_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let head = ClassicalHead::new(config((4, 4, 2)), &mut rng).unwrap();
        let x = Tensor3::new(4, 4, 2, (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let out = head.forward(&x).unwrap();
        let gc = Tensor3::filled(2, 2, 6, 0.3);
        let gr = Tensor3::filled(2, 2, 12, -0.2);
        let _ = out;
        let g = head.backward(&x, &gc, &gr).unwrap();
        let obj = |h: &ClassicalHead| {
            let o = h.forward(&x).unwrap();
            o.cls.dot(&gc) + o.reg.dot(&gr)
        };
        for k in 0..head.trunk.weights.len() {
            let mut a = head.clone();
            a.trunk.weights[k] += 1e-6;
            let mut b = head.clone();
            b.trunk.weights[k] -= 1e-6;
            let fd = (obj(&a) - obj(&b)) / 2e-6;
            assert!((fd - g.trunk.weights[k]).abs() < 1e-6);
        }
    }
}
