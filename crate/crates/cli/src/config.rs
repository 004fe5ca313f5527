//! Run configuration: one TOML file, every key optional, unknown keys
//! rejected. Command-line flags are applied on top by `main`.

use std::f64::consts::FRAC_PI_2;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use fqc_core::costmodel::ComplexityParams;
use fqc_core::encoding::UploadAxis;
use serde::{Deserialize, Serialize};

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "FQC_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub grad_check: GradCheckConfig,
    pub bench: BenchConfig,
    pub qrpn: QrpnConfig,
    pub cost: CostConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            output_dir: PathBuf::from("fqc-out"),
            grad_check: GradCheckConfig::default(),
            bench: BenchConfig::default(),
            qrpn: QrpnConfig::default(),
            cost: CostConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub instances: usize,
    pub max_qubits: usize,
    pub max_blocks: usize,
    pub tolerance: f64,
    pub layer_tolerance: f64,
    /// Shift used by the rule under test; anything but pi/2 should fail.
    pub shift: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            instances: 100,
            max_qubits: 4,
            max_blocks: 2,
            tolerance: 1e-5,
            layer_tolerance: 1e-4,
            shift: FRAC_PI_2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub channels: Vec<usize>,
    pub size: usize,
    pub qubits: usize,
    pub pqc_blocks: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub reps: usize,
    pub warmup: usize,
    pub upload_axis: UploadAxis,
    /// Skip the classification run.
    pub skip_train: bool,
    pub train: ClassifierConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            channels: vec![1, 8, 16],
            size: 32,
            qubits: 4,
            pqc_blocks: 2,
            kernel: 3,
            stride: 1,
            pad: 1,
            reps: 20,
            warmup: 2,
            upload_axis: UploadAxis::Y,
            skip_train: false,
            train: ClassifierConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    /// CIFAR-10 binary batch; without one a seeded stand-in is generated.
    pub dataset: Option<PathBuf>,
    pub classes: [u8; 2],
    pub samples: usize,
    pub epochs: usize,
    pub lr: f64,
    pub kernel: usize,
    pub out_channels: usize,
    pub qubits: usize,
    pub pqc_blocks: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            classes: [0, 1],
            samples: 500,
            epochs: 15,
            lr: 1e-2,
            kernel: 4,
            out_channels: 8,
            qubits: 4,
            pqc_blocks: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QrpnConfig {
    pub gammas: Vec<f64>,
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub teacher_epochs: usize,
    pub teacher_lr: f64,
    pub image_size: usize,
    pub train_samples: usize,
    pub eval_samples: usize,
    pub max_boxes: usize,
    pub stride: usize,
    pub mid_channels: usize,
    pub qubits: usize,
    pub pqc_blocks: usize,
    pub anchor_size: f64,
    pub anchor_ratios: Vec<f64>,
    pub top_k: usize,
    /// Teacher checkpoint to load. Defaults to `teacher.json` in the
    /// output directory; ignored when `train_teacher` is set.
    pub teacher: Option<PathBuf>,
    pub train_teacher: bool,
}

impl Default for QrpnConfig {
    fn default() -> Self {
        Self {
            gammas: vec![0.0, 0.1, 0.3, 0.5],
            lambda: 1.0,
            lr: 1e-2,
            epochs: 15,
            teacher_epochs: 60,
            teacher_lr: 1e-2,
            image_size: 16,
            train_samples: 128,
            eval_samples: 128,
            max_boxes: 2,
            stride: 2,
            mid_channels: 8,
            qubits: 4,
            pqc_blocks: 2,
            anchor_size: 6.0,
            anchor_ratios: vec![0.5, 1.0, 2.0],
            top_k: 8,
            teacher: None,
            train_teacher: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    pub channels: Vec<usize>,
    pub qubits: Vec<usize>,
    pub out_height: usize,
    pub out_width: usize,
    pub kappa_e: f64,
    pub rho: f64,
    pub delta: f64,
    pub t_e: f64,
    pub t_t: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            channels: vec![1, 2, 4, 8, 16, 32, 64, 128, 256],
            qubits: vec![4, 8],
            out_height: 32,
            out_width: 32,
            kappa_e: 1.0,
            rho: 1.0,
            delta: 0.01,
            t_e: 1.0,
            t_t: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub samples: usize,
    pub image_size: usize,
    pub max_boxes: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            samples: 100,
            image_size: 32,
            max_boxes: 3,
        }
    }
}

impl CostConfig {
    pub fn params(&self, channels: usize, qubits: usize) -> ComplexityParams {
        ComplexityParams {
            kappa_e: self.kappa_e,
            rho: self.rho,
            delta: self.delta,
            t_e: self.t_e,
            t_t: self.t_t,
            ..ComplexityParams::new(self.out_height, self.out_width, channels, qubits)
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Range checks run before any command starts work.
    pub fn validate(&self) -> anyhow::Result<()> {
        let g = &self.grad_check;
        if g.instances == 0 || !(1..=8).contains(&g.max_qubits) || g.max_blocks == 0 {
            bail!("grad_check: instances, max_qubits (1..=8) and max_blocks must be positive");
        }
        if !(g.tolerance > 0.0 && g.layer_tolerance > 0.0 && g.shift.is_finite() && g.shift != 0.0) {
            bail!("grad_check: tolerances must be positive and the shift finite and non-zero");
        }
        let b = &self.bench;
        if b.channels.is_empty() || b.channels.contains(&0) {
            bail!("bench.channels must be a non-empty list of positive counts");
        }
        if b.reps < 2 || b.qubits == 0 || b.qubits > 12 || b.kernel == 0 || b.stride == 0 || b.size == 0 {
            bail!("bench: reps >= 2, 1 <= qubits <= 12 and positive sizes required");
        }
        let t = &b.train;
        if t.classes[0] == t.classes[1] || t.classes.iter().any(|&c| c > 9) {
            bail!("bench.train.classes must be two distinct CIFAR-10 labels");
        }
        if t.samples < 2 || t.epochs == 0 || !(t.lr >= 0.0) || t.kernel == 0 || 32 % t.kernel != 0 {
            bail!("bench.train: samples >= 2, epochs >= 1, lr >= 0 and a kernel dividing 32 required");
        }
        let q = &self.qrpn;
        if q.gammas.is_empty() || q.gammas.iter().any(|g| !(0.0..=1.0).contains(g)) {
            bail!("qrpn.gammas must be a non-empty list within [0, 1]");
        }
        if !(q.lambda > 0.0) || !(q.lr >= 0.0) || !(q.teacher_lr >= 0.0) {
            bail!("qrpn: lambda must be positive and learning rates non-negative");
        }
        if !(4..=64).contains(&q.image_size) || q.train_samples == 0 || q.eval_samples == 0 || q.stride == 0 {
            bail!("qrpn: image_size in 4..=64 and positive sample counts and stride required");
        }
        if q.mid_channels == 0 || q.qubits == 0 || q.qubits > 12 || q.top_k == 0 {
            bail!("qrpn: mid_channels, qubits (<= 12) and top_k must be positive");
        }
        if !(q.anchor_size > 0.0) || q.anchor_ratios.is_empty() || q.anchor_ratios.iter().any(|r| !(*r > 0.0)) {
            bail!("qrpn: anchor size and ratios must be positive");
        }
        let c = &self.cost;
        if c.channels.is_empty() || c.channels.contains(&0) || c.qubits.is_empty() || c.qubits.contains(&0) {
            bail!("cost: channel and qubit lists must be non-empty and positive");
        }
        for &ch in &c.channels {
            for &qb in &c.qubits {
                self.cost.params(ch, qb).validate()?;
            }
        }
        let s = &self.synth;
        if !(4..=64).contains(&s.image_size) {
            bail!("synth.image_size must lie in 4..=64");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("sede = 3").is_err());
        assert!(RunConfig::from_toml("[bench]\nchanels = [1]").is_err());
    }

    #[test]
    fn partial_sections_merge_with_defaults() {
        let cfg = RunConfig::from_toml("seed = 9\n[qrpn]\ngammas = [0.0, 0.3]\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.qrpn.gammas, vec![0.0, 0.3]);
        assert_eq!(cfg.qrpn.epochs, 15);
    }

    #[test]
    fn out_of_range_values_fail_validation() {
        let mut cfg = RunConfig::default();
        cfg.qrpn.gammas = vec![1.2];
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.bench.channels = vec![];
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.cost.delta = 1.0;
        assert!(cfg.validate().is_err());
    }
}
