//! Shift-rule gradients against central finite differences and, for one
//! qubit, against the closed form `-sin(theta)`.

use anyhow::bail;
use fqc_core::encoding::{encode_row, UploadPlan};
use fqc_core::pqc::{input_shift_grad, param_shift_grad_with_shift, pqc_forward, ParamVector, PqcSpec};
use fqc_core::qconv::{QConvConfig, QConvLayer};
use fqc_core::statevector::QuantumState;
use fqc_core::Tensor3;
use rand::Rng;
use serde::Serialize;

use crate::config::{GradCheckConfig, RunConfig};
use crate::output::{component_rng, stream, write_json};

const FD_STEP: f64 = 1e-6;
const ANALYTIC_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub checked: usize,
    /// Largest `|shift - reference|`.
    pub worst_abs: f64,
    /// Largest `|shift - reference| / max(|reference|, 1)`.
    pub worst_rel: f64,
    /// Which of the two errors the tolerance applies to.
    pub metric: &'static str,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyticPoint {
    pub theta: f64,
    pub shift_rule: f64,
    pub minus_sin_theta: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub shift: f64,
    pub suites: Vec<SuiteReport>,
    pub analytic: Vec<AnalyticPoint>,
    pub worst_abs_error: f64,
    pub pass: bool,
}

struct Tracker {
    checked: usize,
    abs: f64,
    rel: f64,
}

impl Tracker {
    fn new() -> Self {
        Self { checked: 0, abs: 0.0, rel: 0.0 }
    }

    fn push(&mut self, got: f64, reference: f64) {
        let e = (got - reference).abs();
        self.checked += 1;
        // f64::max drops NaN; a NaN anywhere has to stick and fail
        if e.is_nan() || self.abs.is_nan() {
            self.abs = f64::NAN;
            self.rel = f64::NAN;
            return;
        }
        self.abs = self.abs.max(e);
        self.rel = self.rel.max(e / reference.abs().max(1.0));
    }

    fn finish(self, name: &str, metric: &'static str, tolerance: f64) -> SuiteReport {
        let err = if metric == "abs" { self.abs } else { self.rel };
        SuiteReport {
            name: name.into(),
            checked: self.checked,
            worst_abs: self.abs,
            worst_rel: self.rel,
            metric,
            tolerance,
            pass: err <= tolerance,
        }
    }
}

fn random_row<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn z(state: &QuantumState, qubit: usize) -> anyhow::Result<f64> {
    Ok(state.expectation_z(qubit)?)
}

/// Random PQC instances cycling through `1..=max_qubits` qubits and
/// `1..=max_blocks` blocks, each fed a random uploaded state.
fn pqc_suite<R: Rng>(cfg: &GradCheckConfig, rng: &mut R) -> anyhow::Result<SuiteReport> {
    let mut t = Tracker::new();
    for i in 0..cfg.instances {
        let q = 1 + i % cfg.max_qubits;
        let blocks = 1 + (i / cfg.max_qubits) % cfg.max_blocks;
        let spec = PqcSpec::new(q, blocks)?;
        let params = ParamVector::random(spec.num_params(), rng);
        let row = random_row(2 * q + 1, rng);
        let input = encode_row(&row, &UploadPlan::ry(q))?;
        let obs = i % q;
        let g = param_shift_grad_with_shift(&spec, &params, &input, obs, cfg.shift)?;
        for (k, gk) in g.iter().enumerate() {
            let at = |d: f64| -> anyhow::Result<f64> {
                let mut v = params.values().to_vec();
                v[k] += d;
                z(&pqc_forward(&input, &spec, &ParamVector::new(v)?)?, obs)
            };
            t.push(*gk, (at(FD_STEP)? - at(-FD_STEP)?) / (2.0 * FD_STEP));
        }
    }
    Ok(t.finish("pqc_params", "abs", cfg.tolerance))
}

/// One qubit, one block from `|0>`: only the polar angle matters and
/// `d<Z>/d theta = -sin(theta)`.
fn analytic_suite(cfg: &GradCheckConfig) -> anyhow::Result<(SuiteReport, Vec<AnalyticPoint>)> {
    let spec = PqcSpec::new(1, 1)?;
    let zero = QuantumState::zero(1)?;
    let mut t = Tracker::new();
    let mut points = Vec::new();
    for i in 0..16 {
        let theta = -3.0 + 0.4 * i as f64;
        let params = ParamVector::new(vec![theta, 0.7, -0.4])?;
        let g = param_shift_grad_with_shift(&spec, &params, &zero, 0, cfg.shift)?;
        let expect = -theta.sin();
        t.push(g[0], expect);
        t.push(g[1], 0.0);
        t.push(g[2], 0.0);
        points.push(AnalyticPoint {
            theta,
            shift_rule: g[0],
            minus_sin_theta: expect,
            error: (g[0] - expect).abs(),
        });
    }
    Ok((t.finish("single_qubit_analytic", "abs", ANALYTIC_TOL), points))
}

/// Derivatives through the upload angles. These always use the exact
/// shift, so they stay a control when the parameter shift is corrupted.
fn input_suite<R: Rng>(cfg: &GradCheckConfig, rng: &mut R) -> anyhow::Result<SuiteReport> {
    let mut t = Tracker::new();
    for i in 0..cfg.instances.min(20) {
        let q = 1 + i % cfg.max_qubits;
        let spec = PqcSpec::new(q, 1 + i % cfg.max_blocks)?;
        let plan = UploadPlan::ry(q);
        let params = ParamVector::random(spec.num_params(), rng);
        let row = random_row(2 * q + 1, rng);
        let obs = i % q;
        let g = input_shift_grad(&plan, &spec, &params, &row, obs)?;
        for k in 0..row.len() {
            let at = |d: f64| -> anyhow::Result<f64> {
                let mut r = row.clone();
                r[k] += d;
                z(&pqc_forward(&encode_row(&r, &plan)?, &spec, &params)?, obs)
            };
            t.push(g[k], (at(FD_STEP)? - at(-FD_STEP)?) / (2.0 * FD_STEP));
        }
    }
    Ok(t.finish("pqc_inputs", "abs", cfg.tolerance))
}

/// A whole layer on a 3x3x2 input with a 2x2 kernel and two qubits,
/// objective `<forward(x), u>` for a random `u`.
fn layer_suite<R: Rng>(cfg: &GradCheckConfig, rng: &mut R) -> anyhow::Result<SuiteReport> {
    let lc = QConvConfig {
        kernel: (2, 2),
        pad: 0,
        qubits: 2,
        pqc_blocks: 1,
        ..QConvConfig::new((3, 3, 2), 3)
    };
    let mut layer = QConvLayer::new(lc, rng)?;
    // keep every reconstruction unit away from its ReLU kink
    layer.bias = vec![0.4, 0.5, 0.6];
    let x = Tensor3::new(3, 3, 2, random_row(18, rng))?;
    let (h, w, c) = layer.out_shape();
    let up = Tensor3::new(h, w, c, random_row(h * w * c, rng))?;
    let g = layer.backward_with_shift(&x, &up, true, cfg.shift)?;
    let obj = |l: &QConvLayer, x: &Tensor3| -> anyhow::Result<f64> { Ok(l.forward(x)?.dot(&up)) };
    let mut t = Tracker::new();
    for k in 0..layer.theta.len() {
        let at = |d: f64| -> anyhow::Result<f64> {
            let mut l = layer.clone();
            let mut v = l.theta.values().to_vec();
            v[k] += d;
            l.theta = ParamVector::new(v)?;
            obj(&l, &x)
        };
        t.push(g.theta[k], (at(FD_STEP)? - at(-FD_STEP)?) / (2.0 * FD_STEP));
    }
    for k in 0..layer.weights.len() {
        let at = |d: f64| -> anyhow::Result<f64> {
            let mut l = layer.clone();
            l.weights[k] += d;
            obj(&l, &x)
        };
        t.push(g.weights[k], (at(FD_STEP)? - at(-FD_STEP)?) / (2.0 * FD_STEP));
    }
    for k in 0..layer.bias.len() {
        let at = |d: f64| -> anyhow::Result<f64> {
            let mut l = layer.clone();
            l.bias[k] += d;
            obj(&l, &x)
        };
        t.push(g.bias[k], (at(FD_STEP)? - at(-FD_STEP)?) / (2.0 * FD_STEP));
    }
    let gi = g.input.expect("input gradient was requested");
    for k in 0..x.values().len() {
        let at = |d: f64| -> anyhow::Result<f64> {
            let mut xx = x.clone();
            xx.values_mut()[k] += d;
            obj(&layer, &xx)
        };
        t.push(gi.values()[k], (at(FD_STEP)? - at(-FD_STEP)?) / (2.0 * FD_STEP));
    }
    Ok(t.finish("qconv_layer", "rel", cfg.layer_tolerance))
}

/// Runs every suite. Never fails on a tolerance miss; that is in the report.
pub fn check(cfg: &GradCheckConfig, seed: u64) -> anyhow::Result<GradCheckReport> {
    let mut rng = component_rng(seed, stream::GRAD_CHECK);
    let (analytic, points) = analytic_suite(cfg)?;
    let suites = vec![
        pqc_suite(cfg, &mut rng)?,
        analytic,
        input_suite(cfg, &mut rng)?,
        layer_suite(cfg, &mut rng)?,
    ];
    let worst_abs_error = suites.iter().map(|s| s.worst_abs).fold(0.0, f64::max);
    let pass = suites.iter().all(|s| s.pass);
    Ok(GradCheckReport {
        seed,
        shift: cfg.shift,
        suites,
        analytic: points,
        worst_abs_error,
        pass,
    })
}

pub fn run(cfg: &RunConfig) -> anyhow::Result<GradCheckReport> {
    let report = check(&cfg.grad_check, cfg.seed)?;
    let path = cfg.output_dir.join("grad_check.json");
    write_json(&path, &report)?;
    for s in &report.suites {
        println!(
            "{:<22} {:>5} checks  worst abs {:.3e}  worst rel {:.3e}  ({} tol {:.0e})  {}",
            s.name,
            s.checked,
            s.worst_abs,
            s.worst_rel,
            s.metric,
            s.tolerance,
            if s.pass { "ok" } else { "FAIL" }
        );
    }
    println!("worst absolute error {:.3e}; report in {}", report.worst_abs_error, path.display());
    if !report.pass {
        bail!("gradient check failed (shift {})", report.shift);
    }
    Ok(report)
}
