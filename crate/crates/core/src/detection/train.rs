//! SGD loops for the classical teacher and the distilled quantum head.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::anchors::{AnchorConfig, AnchorSet};
use super::heads::{ClassicalHead, HeadConfig, HeadOutput, QrpnHead};
use super::loss::{c2q_flat, proposal_recall, rpn_losses, total_loss, KdConfig, LabelRule, TaskLoss};
use super::synth::Sample;
use crate::error::{Error, Result};
use crate::tensor::Tensor3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub kd: KdConfig,
    pub labels: LabelRule,
    pub anchors: AnchorConfig,
    /// Proposals kept per image when measuring recall.
    pub top_k: usize,
    pub recall_iou: f64,
    /// Seed of the per-epoch sample shuffle.
    pub shuffle_seed: u64,
}

impl TrainConfig {
    pub fn new(epochs: usize, lr: f64, kd: KdConfig) -> Self {
        Self {
            epochs,
            lr,
            kd,
            labels: LabelRule::default(),
            anchors: AnchorConfig::default(),
            top_k: 8,
            recall_iou: 0.5,
            shuffle_seed: 0,
        }
    }

    pub fn anchor_set(&self, head: &HeadConfig) -> Result<AnchorSet> {
        let (h, w, _) = head.in_shape;
        AnchorSet::new(&self.anchors, head.grid(), head.stride, (h, w))
    }
}

/// One line of a training log. Epoch 0 is measured before any update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub gamma: f64,
    pub l_cls: f64,
    pub l_reg: f64,
    pub l_c2q: f64,
    pub total: f64,
    pub recall: f64,
}

#[derive(Default)]
struct Running {
    cls: f64,
    reg: f64,
    c2q: f64,
    total: f64,
    n: usize,
}

impl Running {
    fn push(&mut self, task: &TaskLoss, c2q: f64, total: f64) {
        self.cls += task.cls_mean();
        self.reg += task.reg_mean();
        self.c2q += c2q;
        self.total += total;
        self.n += 1;
    }

    fn record(&self, epoch: usize, gamma: f64, recall: f64) -> EpochRecord {
        let n = self.n.max(1) as f64;
        EpochRecord {
            epoch,
            gamma,
            l_cls: self.cls / n,
            l_reg: self.reg / n,
            l_c2q: self.c2q / n,
            total: self.total / n,
            recall,
        }
    }
}

/// Pooled recall: matched gt boxes over all gt boxes.
pub fn dataset_recall(
    forward: impl Fn(&Tensor3) -> Result<HeadOutput>,
    data: &[Sample],
    anchors: &AnchorSet,
    top_k: usize,
    iou: f64,
) -> Result<f64> {
    let (mut hit, mut total) = (0, 0);
    for s in data {
        let out = forward(&s.image)?;
        if let Some((h, t)) = proposal_recall(&out.cls, &out.reg, anchors, &s.boxes, top_k, iou) {
            hit += h;
            total += t;
        }
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}

fn check_finite(what: &str, epoch: usize, sample: usize, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Training(format!("{what} is {v} at epoch {epoch}, sample {sample}")))
    }
}

fn order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    idx.shuffle(&mut rng);
    idx
}

/// Per-sample SGD on the task loss (`gamma` is ignored).
pub fn train_teacher(
    head: &mut ClassicalHead,
    data: &[Sample],
    eval: &[Sample],
    cfg: &TrainConfig,
    mut log: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    let anchors = cfg.anchor_set(&head.config)?;
    let task_cfg = KdConfig { gamma: 0.0, ..cfg.kd };
    let mut records = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..=cfg.epochs {
        let mut run = Running::default();
        let idx = if epoch == 0 { (0..data.len()).collect() } else { order(data.len(), cfg.shuffle_seed, epoch) };
        for i in idx {
            let s = &data[i];
            let out = head.forward(&s.image)?;
            let task = rpn_losses(&out.cls, &out.reg, &anchors, &s.boxes, &cfg.labels)?;
            let total = total_loss(&task, 0.0, &task_cfg)?;
            check_finite("teacher loss", epoch, i, total)?;
            run.push(&task, 0.0, total);
            if epoch > 0 {
                let (a, b, _) = task_cfg.coefficients(task.n_cls, task.n_reg);
                let mut gc = task.cls_grad;
                gc.values_mut().iter_mut().for_each(|v| *v *= a);
                let mut gr = task.reg_grad;
                gr.values_mut().iter_mut().for_each(|v| *v *= b);
                let g = head.backward(&s.image, &gc, &gr)?;
                head.sgd_step(&g, cfg.lr);
            }
        }
        let recall = dataset_recall(|x| head.forward(x), eval, &anchors, cfg.top_k, cfg.recall_iou)?;
        let rec = run.record(epoch, 0.0, recall);
        log(&rec);
        records.push(rec);
    }
    Ok(records)
}

/// Per-sample SGD on the distillation objective, with parameter-shift
/// gradients for every quantum angle.
pub fn train_qrpn(
    head: &mut QrpnHead,
    teacher: &ClassicalHead,
    data: &[Sample],
    eval: &[Sample],
    cfg: &TrainConfig,
    mut log: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    cfg.kd.validate()?;
    let (t, h) = (teacher.config, head.config);
    if (t.in_shape, t.stride, t.anchors) != (h.in_shape, h.stride, h.anchors) {
        return Err(Error::Config("teacher and student produce different output shapes".into()));
    }
    let anchors = cfg.anchor_set(&head.config)?;
    let targets: Vec<Vec<f64>> = data
        .iter()
        .map(|s| Ok(teacher.forward(&s.image)?.logits()))
        .collect::<Result<_>>()?;
    let gamma = cfg.kd.gamma;
    let mut records = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..=cfg.epochs {
        let mut run = Running::default();
        let idx = if epoch == 0 { (0..data.len()).collect() } else { order(data.len(), cfg.shuffle_seed, epoch) };
        for i in idx {
            let s = &data[i];
            let out = head.forward(&s.image)?;
            let task = rpn_losses(&out.cls, &out.reg, &anchors, &s.boxes, &cfg.labels)?;
            let (c2q, c2q_grad) = c2q_flat(&out.logits(), &targets[i]);
            let total = total_loss(&task, c2q, &cfg.kd)?;
            check_finite("loss", epoch, i, total)?;
            run.push(&task, c2q, total);
            if epoch == 0 {
                continue;
            }
            let (a, b, c) = cfg.kd.coefficients(task.n_cls, task.n_reg);
            let n_cls = task.cls_grad.values().len();
            let mut gc = task.cls_grad;
            gc.values_mut()
                .iter_mut()
                .zip(&c2q_grad[..n_cls])
                .for_each(|(v, d)| *v = a * *v + c * d);
            let mut gr = task.reg_grad;
            gr.values_mut()
                .iter_mut()
                .zip(&c2q_grad[n_cls..])
                .for_each(|(v, d)| *v = b * *v + c * d);
            let g = head.backward(&s.image, &gc, &gr)?;
            if !g.is_finite() {
                return Err(Error::Training(format!("non-finite gradient at epoch {epoch}, sample {i}")));
            }
            head.sgd_step(&g, cfg.lr);
        }
        let recall = dataset_recall(|x| head.forward(x), eval, &anchors, cfg.top_k, cfg.recall_iou)?;
        let rec = run.record(epoch, gamma, recall);
        log(&rec);
        records.push(rec);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::super::synth::synth_dataset;
    use super::*;

    fn setup(seed: u64) -> (HeadConfig, Vec<Sample>, ChaCha8Rng) {
        let cfg = HeadConfig {
            in_shape: (8, 8, 3),
            stride: 4,
            mid_channels: 2,
            anchors: 3,
            qubits: 2,
            pqc_blocks: 1,
        };
        (cfg, synth_dataset(seed, 3, 8, 1).unwrap(), ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn zero_lr_keeps_parameters_and_loss() {
        let (hc, data, mut rng) = setup(1);
        let teacher = ClassicalHead::new(hc, &mut rng).unwrap();
        let mut head = QrpnHead::new(hc, &mut rng).unwrap();
        let before = head.clone();
        let cfg = TrainConfig::new(2, 0.0, KdConfig::new(0.0, 1.0).unwrap());
        let recs = train_qrpn(&mut head, &teacher, &data, &data, &cfg, |_| {}).unwrap();
        assert_eq!(head, before);
        assert_eq!(recs.len(), 3);
        assert!(recs.windows(2).all(|w| (w[0].total - w[1].total).abs() < 1e-12));
    }

    #[test]
    fn reruns_are_identical() {
        let run = || {
            let (hc, data, mut rng) = setup(2);
            let mut teacher = ClassicalHead::new(hc, &mut rng).unwrap();
            let tc = TrainConfig::new(1, 1e-2, KdConfig::new(0.0, 1.0).unwrap());
            train_teacher(&mut teacher, &data, &data, &tc, |_| {}).unwrap();
            let mut head = QrpnHead::new(hc, &mut rng).unwrap();
            let cfg = TrainConfig::new(1, 1e-2, KdConfig::new(0.3, 1.0).unwrap());
            train_qrpn(&mut head, &teacher, &data, &data, &cfg, |_| {}).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn student_matching_teacher_starts_at_zero_c2q() {
        let (hc, data, mut rng) = setup(3);
        let teacher = ClassicalHead::new(hc, &mut rng).unwrap();
        let mut head = QrpnHead::new(hc, &mut rng).unwrap();
        // a teacher whose logits are all non-positive matches a student
        // whose logits are all non-positive too
        let mut t = teacher.clone();
        t.cls.bias.iter_mut().chain(t.reg.bias.iter_mut()).for_each(|b| *b = -100.0);
        head.cls.scale.iter_mut().chain(head.reg.scale.iter_mut()).for_each(|a| *a = 0.0);
        head.cls.offset.iter_mut().chain(head.reg.offset.iter_mut()).for_each(|b| *b = -1.0);
        let cfg = TrainConfig::new(0, 1e-2, KdConfig::new(0.3, 1.0).unwrap());
        let recs = train_qrpn(&mut head, &t, &data, &data, &cfg, |_| {}).unwrap();
        assert_eq!(recs[0].l_c2q, 0.0);
    }

    #[test]
    fn mismatched_teacher_is_rejected() {
        let (hc, data, mut rng) = setup(4);
        let teacher = ClassicalHead::new(HeadConfig { anchors: 2, ..hc }, &mut rng).unwrap();
        let mut head = QrpnHead::new(hc, &mut rng).unwrap();
        let cfg = TrainConfig::new(1, 1e-2, KdConfig::new(0.3, 1.0).unwrap());
        assert!(train_qrpn(&mut head, &teacher, &data, &data, &cfg, |_| {}).is_err());
    }
}
