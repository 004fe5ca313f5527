//! The quantum convolution layer.
//!
//! Forward pass per output position: take the im2col row, upload it onto
//! the register, run the PQC once, read `<Z>` on every qubit and map the
//! `q` expectations to `C_out` channels with an affine map and ReLU. The
//! per-channel baseline instead runs upload + PQC once per input channel
//! and averages the expectation vectors before the same reconstruction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{Circuit, GradRequest, Op, OpTally, SHIFT};
use crate::costmodel::GateCounters;
use crate::encoding::{col2im_adjoint, im2col_with, split_channels, ConvGeometry, PatchMatrix, UploadAxis, UploadPlan};
use crate::error::{Error, Result};
use crate::pqc::{ParamVector, PqcSpec};
use crate::statevector::QuantumState;
use crate::tensor::Tensor3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvMode {
    /// One upload + PQC per patch, all channels on the same register.
    Fast,
    /// One upload + PQC per patch and input channel.
    PerChannel,
}

impl std::str::FromStr for ConvMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast" => Ok(ConvMode::Fast),
            "baseline" | "per_channel" | "per-channel" => Ok(ConvMode::PerChannel),
            other => Err(Error::Config(format!("unknown convolution mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for ConvMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ConvMode::Fast => "fast",
            ConvMode::PerChannel => "baseline",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QConvConfig {
    pub in_shape: (usize, usize, usize),
    pub kernel: (usize, usize),
    pub stride: usize,
    pub pad: usize,
    pub qubits: usize,
    pub upload_axis: UploadAxis,
    pub angle_scale: f64,
    pub pqc_blocks: usize,
    pub out_channels: usize,
    pub mode: ConvMode,
    /// Run the PQC after every `qubits` uploads instead of once at the end.
    pub interleaved: bool,
}

impl QConvConfig {
    /// 3x3 kernel, stride 1, pad 1, four qubits, RY uploads scaled by pi,
    /// two U3CU3 blocks, fast mode.
    pub fn new(in_shape: (usize, usize, usize), out_channels: usize) -> Self {
        Self {
            in_shape,
            kernel: (3, 3),
            stride: 1,
            pad: 1,
            qubits: 4,
            upload_axis: UploadAxis::Y,
            angle_scale: std::f64::consts::PI,
            pqc_blocks: 2,
            out_channels,
            mode: ConvMode::Fast,
            interleaved: false,
        }
    }
}

/// Gradients of one layer; `input` is present when it was requested.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub theta: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub input: Option<Tensor3>,
}

impl LayerGrad {
    pub fn is_finite(&self) -> bool {
        self.theta
            .iter()
            .chain(&self.weights)
            .chain(&self.bias)
            .chain(self.input.iter().flat_map(|t| t.values()))
            .all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &LayerGrad) {
        let add = |a: &mut Vec<f64>, b: &[f64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.theta, &other.theta);
        add(&mut self.weights, &other.weights);
        add(&mut self.bias, &other.bias);
        match (&mut self.input, &other.input) {
            (Some(a), Some(b)) => a.values_mut().iter_mut().zip(b.values()).for_each(|(x, y)| *x += y),
            (None, Some(b)) => self.input = Some(b.clone()),
            _ => {}
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.theta
            .iter_mut()
            .chain(self.weights.iter_mut())
            .chain(self.bias.iter_mut())
            .for_each(|v| *v *= s);
        if let Some(t) = &mut self.input {
            t.values_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QConvLayer {
    config: QConvConfig,
    geometry: ConvGeometry,
    pqc: PqcSpec,
    plan: UploadPlan,
    pub theta: ParamVector,
    /// Reconstruction matrix, `out_channels x qubits`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Per-row results of a backward sweep, reduced afterwards in row order.
struct RowGrad {
    features: Vec<f64>,
    pre_grad: Vec<f64>,
    theta: Vec<f64>,
    input: Vec<f64>,
}

impl QConvLayer {
    /// Random angles on `[0, 2 pi)`, reconstruction weights uniform on
    /// `+-1/sqrt(q)`, zero bias.
    pub fn new<R: rand::Rng + ?Sized>(config: QConvConfig, rng: &mut R) -> Result<Self> {
        let mut layer = Self::with_zero_params(config)?;
        layer.theta = ParamVector::random(layer.pqc.num_params(), rng);
        let bound = 1.0 / (config.qubits as f64).sqrt();
        layer
            .weights
            .iter_mut()
            .for_each(|w| *w = rng.gen_range(-bound..bound));
        Ok(layer)
    }

    pub fn with_zero_params(config: QConvConfig) -> Result<Self> {
        let geometry = ConvGeometry::new(config.in_shape, config.kernel, config.stride, config.pad)?;
        let pqc = PqcSpec::new(config.qubits, config.pqc_blocks)?;
        let plan = UploadPlan::new(config.qubits, config.upload_axis, config.angle_scale)?;
        if config.out_channels == 0 {
            return Err(Error::Config("layer needs at least one output channel".into()));
        }
        Ok(Self {
            config,
            geometry,
            pqc,
            plan,
            theta: ParamVector::zeros(pqc.num_params()),
            weights: vec![0.0; config.out_channels * config.qubits],
            bias: vec![0.0; config.out_channels],
        })
    }

    /// Rebuilds derived fields and checks parameter shapes, e.g. after
    /// deserialising.
    pub fn validate(&self) -> Result<()> {
        let fresh = Self::with_zero_params(self.config)?;
        if fresh.geometry != self.geometry || fresh.pqc != self.pqc || fresh.plan != self.plan {
            return Err(Error::Format("layer record inconsistent with its config".into()));
        }
        if self.theta.len() != fresh.theta.len()
            || self.weights.len() != fresh.weights.len()
            || self.bias.len() != fresh.bias.len()
        {
            return Err(Error::Format("layer parameter lengths do not match config".into()));
        }
        if !self.weights.iter().chain(&self.bias).all(|v| v.is_finite()) {
            return Err(Error::Data("non-finite reconstruction weights".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn config(&self) -> &QConvConfig {
        &self.config
    }

    #[inline]
    pub fn geometry(&self) -> &ConvGeometry {
        &self.geometry
    }

    #[inline]
    pub fn pqc(&self) -> &PqcSpec {
        &self.pqc
    }

    #[inline]
    pub fn plan(&self) -> &UploadPlan {
        &self.plan
    }

    pub fn out_shape(&self) -> (usize, usize, usize) {
        (self.geometry.out_height, self.geometry.out_width, self.config.out_channels)
    }

    pub fn num_params(&self) -> usize {
        self.theta.len() + self.weights.len() + self.bias.len()
    }

    pub fn zero_grad(&self, with_input: bool) -> LayerGrad {
        LayerGrad {
            theta: vec![0.0; self.theta.len()],
            weights: vec![0.0; self.weights.len()],
            bias: vec![0.0; self.bias.len()],
            input: with_input.then(|| {
                let (h, w, c) = self.config.in_shape;
                Tensor3::zeros(h, w, c)
            }),
        }
    }

    pub fn sgd_step(&mut self, grad: &LayerGrad, lr: f64) {
        self.theta.sgd_step(&grad.theta, lr);
        self.weights.iter_mut().zip(&grad.weights).for_each(|(w, g)| *w -= lr * g);
        self.bias.iter_mut().zip(&grad.bias).for_each(|(b, g)| *b -= lr * g);
    }

    /// Upload + PQC gate list for a row of `len` values, and how many PQC
    /// invocations one run of it contains.
    fn row_circuit(&self, len: usize) -> (Circuit, u64) {
        let uploads = self.plan.ops(0, len);
        let pqc_ops = self.pqc.ops(0);
        let mut ops: Vec<Op> = Vec::with_capacity(uploads.len() + pqc_ops.len());
        let blocks = if self.config.interleaved {
            let mut n = 0;
            for group in uploads.chunks(self.config.qubits) {
                ops.extend_from_slice(group);
                ops.extend_from_slice(&pqc_ops);
                n += 1;
            }
            n
        } else {
            ops.extend(uploads);
            ops.extend(pqc_ops);
            1
        };
        let circuit = Circuit::new(self.config.qubits, ops).expect("layer circuits are well formed");
        (circuit, blocks)
    }

    fn check_input(&self, x: &Tensor3) -> Result<()> {
        if x.shape() != self.config.in_shape {
            return Err(Error::Geometry(format!(
                "layer expects input {:?}, got {:?}",
                self.config.in_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Measured `q`-vectors for every patch row, plus gate counts.
    pub fn features(&self, x: &Tensor3) -> Result<(Vec<Vec<f64>>, GateCounters)> {
        self.check_input(x)?;
        let patches = im2col_with(x, &self.geometry);
        let channels = self.config.in_shape.2;
        let row_len = match self.config.mode {
            ConvMode::Fast => patches.cols(),
            ConvMode::PerChannel => patches.cols() / channels,
        };
        let (circuit, blocks_per_run) = self.row_circuit(row_len);
        let init = QuantumState::zero(self.config.qubits)?;
        let theta = self.theta.values();

        let per_row: Vec<(Vec<f64>, GateCounters)> = (0..patches.rows())
            .into_par_iter()
            .map(|i| {
                let row = patches.row(i);
                let mut tally = OpTally::default();
                let mut counters = GateCounters::default();
                let f = match self.config.mode {
                    ConvMode::Fast => {
                        counters.trainable_blocks += blocks_per_run;
                        circuit.run_tallied(&init, theta, row, &mut tally)?.expectations()
                    }
                    ConvMode::PerChannel => {
                        let mut acc = vec![0.0; self.config.qubits];
                        for values in split_channels(row, channels)? {
                            counters.trainable_blocks += blocks_per_run;
                            let e = circuit.run_tallied(&init, theta, &values, &mut tally)?.expectations();
                            acc.iter_mut().zip(&e).for_each(|(a, v)| *a += v);
                        }
                        acc.iter_mut().for_each(|a| *a /= channels as f64);
                        acc
                    }
                };
                counters.absorb(&tally);
                counters.patches_processed += 1;
                Ok((f, counters))
            })
            .collect::<Result<_>>()?;

        let mut total = GateCounters::default();
        let mut features = Vec::with_capacity(per_row.len());
        for (f, c) in per_row {
            total += c;
            features.push(f);
        }
        Ok((features, total))
    }

    fn reconstruct(&self, f: &[f64], out: &mut [f64]) {
        let q = self.config.qubits;
        for (o, slot) in out.iter_mut().enumerate() {
            let w = &self.weights[o * q..(o + 1) * q];
            let pre: f64 = self.bias[o] + w.iter().zip(f).map(|(a, b)| a * b).sum::<f64>();
            *slot = pre.max(0.0);
        }
    }

    pub fn forward(&self, x: &Tensor3) -> Result<Tensor3> {
        Ok(self.forward_counted(x)?.0)
    }

    pub fn forward_counted(&self, x: &Tensor3) -> Result<(Tensor3, GateCounters)> {
        let (features, counters) = self.features(x)?;
        let (h, w, c) = self.out_shape();
        let mut out = Tensor3::zeros(h, w, c);
        for (i, f) in features.iter().enumerate() {
            self.reconstruct(f, &mut out.values_mut()[i * c..(i + 1) * c]);
        }
        Ok((out, counters))
    }

    /// Gradients of `<upstream, forward(x)>`.
    ///
    /// Quantum angles and inputs are differentiated with the shift rule;
    /// the reconstruction with ordinary linear-layer algebra.
    pub fn backward(&self, x: &Tensor3, upstream: &Tensor3, want_input: bool) -> Result<LayerGrad> {
        self.backward_with_shift(x, upstream, want_input, SHIFT)
    }

    pub fn backward_with_shift(
        &self,
        x: &Tensor3,
        upstream: &Tensor3,
        want_input: bool,
        shift: f64,
    ) -> Result<LayerGrad> {
        self.check_input(x)?;
        if upstream.shape() != self.out_shape() {
            return Err(Error::Geometry(format!(
                "upstream gradient {:?} does not match output {:?}",
                upstream.shape(),
                self.out_shape()
            )));
        }
        let patches = im2col_with(x, &self.geometry);
        let channels = self.config.in_shape.2;
        let q = self.config.qubits;
        let c_out = self.config.out_channels;
        let row_len = match self.config.mode {
            ConvMode::Fast => patches.cols(),
            ConvMode::PerChannel => patches.cols() / channels,
        };
        let (circuit, _) = self.row_circuit(row_len);
        let init = QuantumState::zero(q)?;
        let theta = self.theta.values();
        let request = GradRequest {
            params: true,
            inputs: want_input,
            shift,
        };

        let rows: Vec<RowGrad> = (0..patches.rows())
            .into_par_iter()
            .map(|i| -> Result<RowGrad> {
                let row = patches.row(i);
                let up = &upstream.values()[i * c_out..(i + 1) * c_out];
                let split = match self.config.mode {
                    ConvMode::Fast => vec![row.to_vec()],
                    ConvMode::PerChannel => split_channels(row, channels)?,
                };
                let mut features = vec![0.0; q];
                for values in &split {
                    let e = circuit.run_from(&init, theta, values)?.expectations();
                    features.iter_mut().zip(&e).for_each(|(a, v)| *a += v);
                }
                let n = split.len() as f64;
                features.iter_mut().for_each(|a| *a /= n);

                let mut pre_grad = vec![0.0; c_out];
                let mut f_grad = vec![0.0; q];
                for o in 0..c_out {
                    let w = &self.weights[o * q..(o + 1) * q];
                    let pre = self.bias[o] + w.iter().zip(&features).map(|(a, b)| a * b).sum::<f64>();
                    if pre > 0.0 && up[o] != 0.0 {
                        pre_grad[o] = up[o];
                        f_grad.iter_mut().zip(w).for_each(|(g, wv)| *g += up[o] * wv);
                    }
                }
                f_grad.iter_mut().for_each(|g| *g /= n);

                let mut theta_grad = vec![0.0; theta.len()];
                let mut input = vec![0.0; if want_input { row.len() } else { 0 }];
                for (c, values) in split.iter().enumerate() {
                    let g = circuit.gradients(&init, theta, values, &f_grad, request)?;
                    theta_grad.iter_mut().zip(&g.params).for_each(|(a, b)| *a += b);
                    if want_input {
                        // channel c of the row sits at positions c, c + C, ...
                        let stride = split.len();
                        for (j, v) in g.inputs.iter().enumerate() {
                            input[j * stride + c] += v;
                        }
                    }
                }
                Ok(RowGrad {
                    features,
                    pre_grad,
                    theta: theta_grad,
                    input,
                })
            })
            .collect::<Result<_>>()?;

        let mut grad = self.zero_grad(false);
        let mut patch_grad = Vec::with_capacity(if want_input { patches.rows() * patches.cols() } else { 0 });
        for r in &rows {
            for o in 0..c_out {
                if r.pre_grad[o] != 0.0 {
                    grad.bias[o] += r.pre_grad[o];
                    for l in 0..q {
                        grad.weights[o * q + l] += r.pre_grad[o] * r.features[l];
                    }
                }
            }
            grad.theta.iter_mut().zip(&r.theta).for_each(|(a, b)| *a += b);
            patch_grad.extend_from_slice(&r.input);
        }
        if want_input {
            let p = PatchMatrix::from_values(self.geometry, patch_grad)?;
            grad.input = Some(col2im_adjoint(&p)?);
        }
        Ok(grad)
    }
}

pub fn qconv_forward(layer: &QConvLayer, x: &Tensor3) -> Result<Tensor3> {
    layer.forward(x)
}

pub fn qconv_backward(layer: &QConvLayer, x: &Tensor3, upstream: &Tensor3) -> Result<LayerGrad> {
    layer.backward(x, upstream, true)
}

/// Non-overlapping average pooling; `window = 1` is the identity.
pub fn pool(features: &Tensor3, window: usize) -> Result<Tensor3> {
    let (h, w, c) = features.shape();
    if window == 0 || h % window != 0 || w % window != 0 {
        return Err(Error::Geometry(format!(
            "pool window {window} does not divide {h}x{w}"
        )));
    }
    if window == 1 {
        return Ok(features.clone());
    }
    let (oh, ow) = (h / window, w / window);
    let mut out = Tensor3::zeros(oh, ow, c);
    let norm = (window * window) as f64;
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let i = out.index(y / window, x / window, ch);
                out.values_mut()[i] += features.get(y, x, ch) / norm;
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`pool`].
pub fn pool_backward(upstream: &Tensor3, window: usize, in_shape: (usize, usize, usize)) -> Result<Tensor3> {
    let (h, w, c) = in_shape;
    if window == 0 || h % window != 0 || w % window != 0 || upstream.shape() != (h / window, w / window, c) {
        return Err(Error::Geometry("pool gradient shape mismatch".into()));
    }
    let norm = (window * window) as f64;
    let mut out = Tensor3::zeros(h, w, c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out.set(y, x, ch, upstream.get(y / window, x / window, ch) / norm);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn tiny(in_shape: (usize, usize, usize), kernel: (usize, usize), q: usize, c_out: usize) -> QConvConfig {
        QConvConfig {
            kernel,
            pad: 0,
            qubits: q,
            pqc_blocks: 1,
            ..QConvConfig::new(in_shape, c_out)
        }
    }

    fn random_tensor<R: Rng>(shape: (usize, usize, usize), rng: &mut R) -> Tensor3 {
        let (h, w, c) = shape;
        Tensor3::new(h, w, c, (0..h * w * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_everything_reads_ground_state() {
        let cfg = QConvConfig::new((3, 3, 2), 6);
        let mut layer = QConvLayer::with_zero_params(cfg).unwrap();
        // identity in the left block, zeros below
        for o in 0..4 {
            layer.weights[o * 4 + o] = 1.0;
        }
        let out = layer.forward(&Tensor3::zeros(3, 3, 2)).unwrap();
        assert_eq!(out.shape(), (3, 3, 6));
        for y in 0..3 {
            for x in 0..3 {
                assert_eq!(out.pixel(y, x), &[1.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
            }
        }
    }

    #[test]
    fn single_pixel_single_qubit_chain() {
        let cfg = tiny((1, 1, 1), (1, 1), 1, 1);
        let mut layer = QConvLayer::with_zero_params(cfg).unwrap();
        layer.weights = vec![1.0];
        for v in [-0.9, -0.2, 0.0, 0.3, 0.7] {
            let x = Tensor3::new(1, 1, 1, vec![v]).unwrap();
            let out = layer.forward(&x).unwrap();
            assert_abs_diff_eq!(out.values()[0], (PI * v).cos().max(0.0), epsilon = 1e-12);
        }
    }

    #[test]
    fn features_are_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let layer = QConvLayer::new(QConvConfig::new((4, 4, 3), 2), &mut rng).unwrap();
        let (f, _) = layer.features(&random_tensor((4, 4, 3), &mut rng)).unwrap();
        assert!(f.iter().flatten().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn shape_errors() {
        let layer = QConvLayer::with_zero_params(QConvConfig::new((3, 3, 2), 2)).unwrap();
        assert!(matches!(layer.forward(&Tensor3::zeros(3, 3, 1)), Err(Error::Geometry(_))));
        assert!(layer.backward(&Tensor3::zeros(3, 3, 2), &Tensor3::zeros(3, 3, 1), true).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let layer = QConvLayer::new(tiny((3, 3, 2), (2, 2), 2, 3), &mut rng).unwrap();
        let g = layer
            .backward(&random_tensor((3, 3, 2), &mut rng), &Tensor3::zeros(2, 2, 3), true)
            .unwrap();
        assert_eq!(g, layer.zero_grad(true));
    }

    #[test]
    fn single_patch_theta_gradient_is_analytic() {
        // out = ReLU(w cos(theta) + b) on |0>, upstream 1.
        let cfg = tiny((1, 1, 1), (1, 1), 1, 1);
        let mut layer = QConvLayer::with_zero_params(cfg).unwrap();
        let (w, b) = (0.8, 0.1);
        layer.weights = vec![w];
        layer.bias = vec![b];
        let x = Tensor3::zeros(1, 1, 1);
        let up = Tensor3::filled(1, 1, 1, 1.0);
        for theta in [0.3, 1.0, 2.0, 4.0] {
            layer.theta = ParamVector::new(vec![theta, 0.0, 0.0]).unwrap();
            let g = layer.backward(&x, &up, false).unwrap();
            let active = w * theta.cos() + b > 0.0;
            let expect = if active { -w * theta.sin() } else { 0.0 };
            assert_abs_diff_eq!(g.theta[0], expect, epsilon = 1e-12);
            assert_abs_diff_eq!(g.weights[0], if active { theta.cos() } else { 0.0 }, epsilon = 1e-12);
        }
    }

    fn objective(layer: &QConvLayer, x: &Tensor3, up: &Tensor3) -> f64 {
        layer.forward(x).unwrap().dot(up)
    }

    fn check_against_fd(mode: ConvMode, interleaved: bool, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = QConvConfig {
            mode,
            interleaved,
            ..tiny((3, 3, 2), (2, 2), 2, 3)
        };
        let mut layer = QConvLayer::new(cfg, &mut rng).unwrap();
        layer.bias = vec![0.4, 0.5, 0.6];
        let x = random_tensor((3, 3, 2), &mut rng);
        let up = random_tensor(layer.out_shape(), &mut rng);
        let g = layer.backward(&x, &up, true).unwrap();
        let h = 1e-6;
        let fd = |f: &dyn Fn(&mut QConvLayer, f64)| {
            let mut a = layer.clone();
            f(&mut a, h);
            let mut b = layer.clone();
            f(&mut b, -h);
            (objective(&a, &x, &up) - objective(&b, &x, &up)) / (2.0 * h)
        };
        let close = |a: f64, b: f64| assert!((a - b).abs() <= 1e-4 * b.abs().max(1.0), "{a} vs {b}");
        for k in 0..layer.theta.len() {
            let d = fd(&|l: &mut QConvLayer, e| {
                let mut v = l.theta.values().to_vec();
                v[k] += e;
                l.theta = ParamVector::new(v).unwrap();
            });
            close(g.theta[k], d);
        }
        for k in 0..layer.weights.len() {
            close(g.weights[k], fd(&|l: &mut QConvLayer, e| l.weights[k] += e));
        }
        for k in 0..layer.bias.len() {
            close(g.bias[k], fd(&|l: &mut QConvLayer, e| l.bias[k] += e));
        }
        let gi = g.input.unwrap();
        for k in 0..x.values().len() {
            let mut a = x.clone();
            a.values_mut()[k] += h;
            let mut b = x.clone();
            b.values_mut()[k] -= h;
            let d = (objective(&layer, &a, &up) - objective(&layer, &b, &up)) / (2.0 * h);
            close(gi.values()[k], d);
        }
    }

    #[test]
    fn fast_layer_gradient_matches_fd() {
        check_against_fd(ConvMode::Fast, false, 13);
    }

    #[test]
    fn baseline_layer_gradient_matches_fd() {
        check_against_fd(ConvMode::PerChannel, false, 14);
    }

    #[test]
    fn interleaved_layer_gradient_matches_fd() {
        check_against_fd(ConvMode::Fast, true, 15);
    }

    #[test]
    fn block_counts_per_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for c in [1, 3, 5] {
            let cfg = tiny((4, 4, c), (2, 2), 2, 2);
            let fast = QConvLayer::new(cfg, &mut rng).unwrap();
            let base = QConvLayer::new(QConvConfig { mode: ConvMode::PerChannel, ..cfg }, &mut rng).unwrap();
            let x = random_tensor((4, 4, c), &mut rng);
            let (_, cf) = fast.forward_counted(&x).unwrap();
            let (_, cb) = base.forward_counted(&x).unwrap();
            assert_eq!(cf.trainable_blocks, 9);
            assert_eq!(cb.trainable_blocks, 9 * c as u64);
            assert_eq!(cf.encoding_rotations, 9 * 4 * c as u64);
            assert_eq!(cb.encoding_rotations, cf.encoding_rotations);
            assert_eq!(cf.patches_processed, 9);
        }
    }

    #[test]
    fn single_channel_modes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let cfg = tiny((4, 4, 1), (2, 2), 2, 3);
        let fast = QConvLayer::new(cfg, &mut rng).unwrap();
        let mut base = fast.clone();
        base.config.mode = ConvMode::PerChannel;
        let x = random_tensor((4, 4, 1), &mut rng);
        assert_eq!(fast.forward(&x).unwrap(), base.forward(&x).unwrap());
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let layer = QConvLayer::new(QConvConfig::new((5, 5, 3), 4), &mut rng).unwrap();
        let x = random_tensor((5, 5, 3), &mut rng);
        let a = layer.forward(&x).unwrap();
        let b = layer.forward(&x).unwrap();
        assert!(a.values().iter().zip(b.values()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn pool_examples() {
        let t = Tensor3::new(2, 2, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(pool(&t, 1).unwrap(), t);
        assert_eq!(pool(&t, 2).unwrap().values(), &[1.5]);
        assert_eq!(pool(&Tensor3::filled(2, 2, 1, 0.7), 2).unwrap().values(), &[0.7]);
        assert!(pool(&Tensor3::zeros(3, 2, 1), 2).is_err());
    }

    #[test]
    fn pool_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let x = random_tensor((4, 6, 2), &mut rng);
        let y = random_tensor((2, 3, 2), &mut rng);
        let lhs = pool(&x, 2).unwrap().dot(&y);
        let rhs = x.dot(&pool_backward(&y, 2, (4, 6, 2)).unwrap());
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
