//! Gate counters and the analytic running-time model comparing channel
//! uploading with per-channel quantum convolution.
//!
//! Analytic terms use unit constants, `log2` inside the QRAM setup term
//! and the natural log in `log(1/delta)`:
//!
//! ```text
//! T_S  = log2(H' W')^2
//! fast:     T_E = (sqrt(2^q) k_E + C t_E k_E) log(1/delta)
//!           T_T = (sqrt(2^q) k_T +   t_T k_T) log(1/delta),  k_T = rho k_E
//! baseline: T'_E = C (sqrt(2^q) k_E + t_E k_E) log(1/delta)
//!           T'_T = C (sqrt(2^q) k_T + t_T k_T) log(1/delta)
//! ```

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::circuit::OpTally;
use crate::error::{Error, Result};
use crate::qconv::{ConvMode, QConvLayer};
use crate::tensor::Tensor3;

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateCounters {
    pub encoding_rotations: u64,
    /// PQC invocations (one per patch in fast mode, `C` per patch otherwise).
    pub trainable_blocks: u64,
    pub trainable_gates: u64,
    pub two_qubit_gates: u64,
    pub patches_processed: u64,
}

impl GateCounters {
    pub(crate) fn absorb(&mut self, t: &OpTally) {
        self.encoding_rotations += t.input_rotations;
        self.trainable_gates += t.param_rotations;
        self.two_qubit_gates += t.cnots;
    }
}

impl std::ops::AddAssign for GateCounters {
    fn add_assign(&mut self, rhs: Self) {
        self.encoding_rotations += rhs.encoding_rotations;
        self.trainable_blocks += rhs.trainable_blocks;
        self.trainable_gates += rhs.trainable_gates;
        self.two_qubit_gates += rhs.two_qubit_gates;
        self.patches_processed += rhs.patches_processed;
    }
}

pub fn count_forward(layer: &QConvLayer, x: &Tensor3) -> Result<GateCounters> {
    Ok(layer.forward_counted(x)?.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityParams {
    pub out_height: usize,
    pub out_width: usize,
    pub channels: usize,
    pub qubits: usize,
    pub kappa_e: f64,
    pub rho: f64,
    pub delta: f64,
    pub t_e: f64,
    pub t_t: f64,
}

impl ComplexityParams {
    /// `kappa_E = 1`, `rho = 1`, `delta = 0.01`, unit gate times.
    pub fn new(out_height: usize, out_width: usize, channels: usize, qubits: usize) -> Self {
        Self {
            out_height,
            out_width,
            channels,
            qubits,
            kappa_e: 1.0,
            rho: 1.0,
            delta: 0.01,
            t_e: 1.0,
            t_t: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Domain(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.out_height == 0 || self.out_width == 0 || self.channels == 0 || self.qubits == 0 {
            return Err(Error::Domain("sizes must be positive".into()));
        }
        for (name, v) in [("kappa_e", self.kappa_e), ("rho", self.rho), ("t_e", self.t_e), ("t_t", self.t_t)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuntimeEstimate {
    pub setup: f64,
    pub encoding: f64,
    pub trainable: f64,
    pub total: f64,
}

pub fn analytic_runtime(p: &ComplexityParams, mode: ConvMode) -> Result<RuntimeEstimate> {
    p.validate()?;
    let setup = ((p.out_height * p.out_width) as f64).log2().powi(2);
    let log_inv = (1.0 / p.delta).ln();
    let sqrt_d = 2f64.powf(p.qubits as f64 / 2.0);
    let c = p.channels as f64;
    let kappa_t = p.rho * p.kappa_e;
    let (encoding, trainable) = match mode {
        ConvMode::Fast => (
            (sqrt_d * p.kappa_e + c * p.t_e * p.kappa_e) * log_inv,
            (sqrt_d * kappa_t + p.t_t * kappa_t) * log_inv,
        ),
        ConvMode::PerChannel => (
            c * (sqrt_d * p.kappa_e + p.t_e * p.kappa_e) * log_inv,
            c * (sqrt_d * kappa_t + p.t_t * kappa_t) * log_inv,
        ),
    };
    Ok(RuntimeEstimate {
        setup,
        encoding,
        trainable,
        total: setup + encoding + trainable,
    })
}

/// Fast total over baseline total.
pub fn runtime_ratio(p: &ComplexityParams) -> Result<f64> {
    Ok(analytic_runtime(p, ConvMode::Fast)?.total / analytic_runtime(p, ConvMode::PerChannel)?.total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub mode: ConvMode,
    pub layer: crate::qconv::QConvConfig,
    pub reps: usize,
    pub warmup: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub mode: ConvMode,
    #[serde(rename = "C")]
    pub channels: usize,
    pub q: usize,
    pub patches: u64,
    pub trainable_blocks: u64,
    pub encoding_rotations: u64,
    pub mean_ms: f64,
    pub std_ms: f64,
    /// Individual repetition times; not part of the CSV.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub samples_ms: Vec<f64>,
}

pub const CSV_HEADER: &str = "mode,C,q,patches,trainable_blocks,encoding_rotations,mean_ms,std_ms";

impl BenchRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.6},{:.6}",
            self.mode,
            self.channels,
            self.q,
            self.patches,
            self.trainable_blocks,
            self.encoding_rotations,
            self.mean_ms,
            self.std_ms
        )
    }

    /// The row with timings blanked, for determinism comparisons.
    pub fn counters_only(&self) -> BenchRow {
        BenchRow {
            mean_ms: 0.0,
            std_ms: 0.0,
            samples_ms: Vec::new(),
            ..self.clone()
        }
    }
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Times `reps` forwards of a layer built from each config on `inputs`
/// (one input per config, matching its shape). Warmup runs are discarded.
pub fn bench_wallclock(configs: &[(BenchConfig, QConvLayer, Tensor3)]) -> Result<Vec<BenchRow>> {
    configs
        .iter()
        .map(|(cfg, layer, x)| {
            if cfg.reps < 2 {
                return Err(Error::Config("benchmark needs at least two repetitions".into()));
            }
            let (_, counters) = layer.forward_counted(x)?;
            for _ in 0..cfg.warmup {
                std::hint::black_box(layer.forward(x)?);
            }
            let mut samples = Vec::with_capacity(cfg.reps);
            for _ in 0..cfg.reps {
                let t = Instant::now();
                std::hint::black_box(layer.forward(x)?);
                samples.push(t.elapsed().as_secs_f64() * 1e3);
            }
            let (mean_ms, std_ms) = mean_std(&samples);
            Ok(BenchRow {
                mode: cfg.mode,
                channels: cfg.layer.in_shape.2,
                q: cfg.layer.qubits,
                patches: counters.patches_processed,
                trainable_blocks: counters.trainable_blocks,
                encoding_rotations: counters.encoding_rotations,
                mean_ms,
                std_ms,
                samples_ms: samples,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_point(c: usize) -> ComplexityParams {
        ComplexityParams::new(16, 16, c, 4)
    }

    #[test]
    fn one_channel_is_a_tie() {
        let p = grid_point(1);
        let f = analytic_runtime(&p, ConvMode::Fast).unwrap();
        let b = analytic_runtime(&p, ConvMode::PerChannel).unwrap();
        assert!((f.total - b.total).abs() < 1e-12);
        assert_eq!(runtime_ratio(&p).unwrap(), 1.0);
    }

    #[test]
    fn doubling_channels() {
        let (p1, p2) = (grid_point(8), grid_point(16));
        let b1 = analytic_runtime(&p1, ConvMode::PerChannel).unwrap();
        let b2 = analytic_runtime(&p2, ConvMode::PerChannel).unwrap();
        assert!((b2.encoding - 2.0 * b1.encoding).abs() < 1e-9);
        assert!((b2.trainable - 2.0 * b1.trainable).abs() < 1e-9);
        let f1 = analytic_runtime(&p1, ConvMode::Fast).unwrap();
        let f2 = analytic_runtime(&p2, ConvMode::Fast).unwrap();
        let log_inv = (100f64).ln();
        assert!((f2.encoding - f1.encoding - 8.0 * log_inv).abs() < 1e-9);
        assert_eq!(f2.trainable, f1.trainable);
        assert_eq!(f1.setup, 64.0);
    }

    #[test]
    fn ratio_falls_with_channels() {
        let mut last = f64::INFINITY;
        for c in 1..200 {
            let r = runtime_ratio(&grid_point(c)).unwrap();
            assert!(r <= 1.0 && r < last || c == 1);
            last = r;
        }
        assert!(last < 0.6);
    }

    #[test]
    fn domain_errors() {
        let mut p = grid_point(4);
        p.delta = 1.0;
        assert!(matches!(analytic_runtime(&p, ConvMode::Fast), Err(Error::Domain(_))));
        p.delta = 0.5;
        p.kappa_e = 0.0;
        assert!(analytic_runtime(&p, ConvMode::Fast).is_err());
    }

    #[test]
    fn monotone_in_every_input() {
        let base = grid_point(8);
        let bumps: [fn(&mut ComplexityParams); 5] = [
            |p| p.channels += 1,
            |p| p.t_e *= 1.5,
            |p| p.t_t *= 1.5,
            |p| p.kappa_e *= 1.5,
            |p| p.delta /= 2.0,
        ];
        for mode in [ConvMode::Fast, ConvMode::PerChannel] {
            let t0 = analytic_runtime(&base, mode).unwrap().total;
            for bump in bumps {
                let mut p = base;
                bump(&mut p);
                let t1 = analytic_runtime(&p, mode).unwrap().total;
                // the fast trainable term does not see C, but encoding does
                assert!(t1 > t0, "{mode}: {t1} <= {t0}");
            }
        }
    }

    #[test]
    fn mean_std_small_cases() {
        assert_eq!(mean_std(&[2.0, 4.0]), (3.0, 2f64.sqrt()));
        assert_eq!(mean_std(&[5.0]), (5.0, 0.0));
    }

    #[test]
    fn csv_header_is_fixed() {
        let row = BenchRow {
            mode: ConvMode::Fast,
            channels: 8,
            q: 4,
            patches: 4,
            trainable_blocks: 4,
            encoding_rotations: 288,
            mean_ms: 1.5,
            std_ms: 0.25,
            samples_ms: vec![],
        };
        let csv = to_csv(&[row]);
        assert_eq!(csv, format!("{CSV_HEADER}\nfast,8,4,4,4,288,1.500000,0.250000\n"));
    }
}
