//! Proposal losses, the classical-to-quantum distillation distance, and
//! their combination.

use serde::{Deserialize, Serialize};

use super::anchors::{AnchorSet, BBox};
use crate::classical::softmax;
use crate::error::{Error, Result};
use crate::tensor::Tensor3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdConfig {
    pub gamma: f64,
    pub lambda: f64,
}

impl KdConfig {
    pub fn new(gamma: f64, lambda: f64) -> Result<Self> {
        let cfg = Self { gamma, lambda };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        Ok(())
    }

    /// Weights on `sum L_cls`, `sum L_reg` and `L_c2q`.
    pub fn coefficients(&self, n_cls: usize, n_reg: usize) -> (f64, f64, f64) {
        let g = self.gamma;
        (
            (1.0 - g) / n_cls.max(1) as f64,
            self.lambda * (1.0 - g) / n_reg.max(1) as f64,
            g,
        )
    }
}

/// `|| ReLU(student) - ReLU(teacher) ||_2` over all elements.
pub fn c2q_loss(student: &Tensor3, teacher: &Tensor3) -> Result<f64> {
    student.same_shape(teacher)?;
    Ok(c2q_flat(student.values(), teacher.values()).0)
}

/// Distance and its gradient with respect to the student logits; the
/// gradient is taken as zero where the distance vanishes.
pub fn c2q_flat(student: &[f64], teacher: &[f64]) -> (f64, Vec<f64>) {
    let diff: Vec<f64> = student
        .iter()
        .zip(teacher)
        .map(|(s, t)| s.max(0.0) - t.max(0.0))
        .collect();
    let norm = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
    let grad = if norm > 0.0 {
        diff.iter()
            .zip(student)
            .map(|(d, s)| if *s > 0.0 { d / norm } else { 0.0 })
            .collect()
    } else {
        vec![0.0; diff.len()]
    };
    (norm, grad)
}

/// Anchor label: object, background, or left out of the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Positive(usize),
    Negative,
    Ignored,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelRule {
    pub positive_iou: f64,
    pub negative_iou: f64,
    /// Kept negatives per positive (at least `min_negatives`).
    pub negative_ratio: usize,
    pub min_negatives: usize,
}

impl Default for LabelRule {
    fn default() -> Self {
        Self {
            positive_iou: 0.7,
            negative_iou: 0.3,
            negative_ratio: 3,
            min_negatives: 8,
        }
    }
}

/// Labels every anchor against the clipped-anchor IoU with each gt box.
/// Negatives are thinned deterministically by taking every n-th one.
pub fn assign_labels(anchors: &AnchorSet, gt: &[BBox], rule: &LabelRule) -> Result<Vec<Label>> {
    if let Some(b) = gt.iter().find(|b| !(b.area() > 0.0)) {
        return Err(Error::Data(format!("ground-truth box {b:?} has zero area")));
    }
    let n = anchors.len();
    let mut best = vec![(0.0f64, usize::MAX); n];
    let mut best_per_gt = vec![0.0f64; gt.len()];
    let ious: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let a = anchors.clipped(i);
            gt.iter().map(|g| a.iou(g)).collect()
        })
        .collect();
    for (i, row) in ious.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v > best[i].0 {
                best[i] = (v, j);
            }
            best_per_gt[j] = best_per_gt[j].max(v);
        }
    }
    let mut labels: Vec<Label> = best
        .iter()
        .map(|&(v, j)| {
            if j != usize::MAX && v >= rule.positive_iou {
                Label::Positive(j)
            } else if v <= rule.negative_iou {
                Label::Negative
            } else {
                Label::Ignored
            }
        })
        .collect();
    for (j, &b) in best_per_gt.iter().enumerate() {
        if b <= 0.0 {
            continue;
        }
        for (i, row) in ious.iter().enumerate() {
            if row[j] == b && !matches!(labels[i], Label::Positive(_)) {
                labels[i] = Label::Positive(j);
            }
        }
    }
    let positives = labels.iter().filter(|l| matches!(l, Label::Positive(_))).count();
    let keep = (rule.negative_ratio * positives).max(rule.min_negatives);
    let negatives: Vec<usize> = (0..n).filter(|&i| labels[i] == Label::Negative).collect();
    if negatives.len() > keep {
        let step = negatives.len() as f64 / keep as f64;
        let kept: std::collections::BTreeSet<usize> =
            (0..keep).map(|t| negatives[(t as f64 * step) as usize]).collect();
        for i in negatives {
            if !kept.contains(&i) {
                labels[i] = Label::Ignored;
            }
        }
    }
    Ok(labels)
}

/// Summed proposal losses with their sample counts and gradients of the
/// sums with respect to the head outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskLoss {
    pub cls_sum: f64,
    pub n_cls: usize,
    pub reg_sum: f64,
    pub n_reg: usize,
    pub cls_grad: Tensor3,
    pub reg_grad: Tensor3,
}

impl TaskLoss {
    pub fn cls_mean(&self) -> f64 {
        self.cls_sum / self.n_cls.max(1) as f64
    }

    pub fn reg_mean(&self) -> f64 {
        if self.n_reg == 0 {
            0.0
        } else {
            self.reg_sum / self.n_reg as f64
        }
    }
}

fn smooth_l1(x: f64) -> (f64, f64) {
    if x.abs() < 1.0 {
        (0.5 * x * x, x)
    } else {
        (x.abs() - 0.5, x.signum())
    }
}

/// Channel `2a + 1` of `cls` is the object logit of anchor `a` (channel
/// `2a` the background logit); `reg` carries `(tx, ty, tw, th)` in
/// channels `4a..4a + 4`.
pub fn rpn_losses(
    cls: &Tensor3,
    reg: &Tensor3,
    anchors: &AnchorSet,
    gt: &[BBox],
    rule: &LabelRule,
) -> Result<TaskLoss> {
    let (h, w) = anchors.grid;
    let k = anchors.k;
    if cls.shape() != (h, w, 2 * k) || reg.shape() != (h, w, 4 * k) {
        return Err(Error::Geometry(format!(
            "head outputs {:?} / {:?} do not match {h}x{w} grid with {k} anchors",
            cls.shape(),
            reg.shape()
        )));
    }
    let labels = assign_labels(anchors, gt, rule)?;
    let mut out = TaskLoss {
        cls_sum: 0.0,
        n_cls: 0,
        reg_sum: 0.0,
        n_reg: 0,
        cls_grad: Tensor3::zeros(h, w, 2 * k),
        reg_grad: Tensor3::zeros(h, w, 4 * k),
    };
    for (i, label) in labels.iter().enumerate() {
        let target = match label {
            Label::Positive(_) => 1,
            Label::Negative => 0,
            Label::Ignored => continue,
        };
        let logits = &cls.values()[2 * i..2 * i + 2];
        let p = softmax(logits);
        out.cls_sum += -p[target].max(f64::MIN_POSITIVE).ln();
        out.n_cls += 1;
        let g = &mut out.cls_grad.values_mut()[2 * i..2 * i + 2];
        g[0] += p[0] - if target == 0 { 1.0 } else { 0.0 };
        g[1] += p[1] - if target == 1 { 1.0 } else { 0.0 };

        if let Label::Positive(j) = *label {
            let t = gt[j].deltas_from(&anchors.boxes[i])?;
            let pred = &reg.values()[4 * i..4 * i + 4];
            let g = &mut out.reg_grad.values_mut()[4 * i..4 * i + 4];
            for c in 0..4 {
                let (l, d) = smooth_l1(pred[c] - t[c]);
                out.reg_sum += l;
                g[c] += d;
            }
            out.n_reg += 1;
        }
    }
    Ok(out)
}

/// `(1 - g)/N_c sum L_cls + lambda (1 - g)/N_r sum L_reg + g L_c2q`.
pub fn total_loss(task: &TaskLoss, l_c2q: f64, cfg: &KdConfig) -> Result<f64> {
    cfg.validate()?;
    if !(l_c2q >= 0.0 && l_c2q.is_finite() && task.reg_sum >= 0.0 && task.cls_sum.is_finite()) {
        return Err(Error::Domain("loss components must be finite and non-negative".into()));
    }
    let (a, b, c) = cfg.coefficients(task.n_cls, task.n_reg);
    Ok(a * task.cls_sum + b * task.reg_sum + c * l_c2q)
}

/// Fraction of gt boxes matched at IoU >= `iou` by one of the `top_k`
/// highest-scoring decoded proposals; `None` when there are no gt boxes.
pub fn proposal_recall(
    cls: &Tensor3,
    reg: &Tensor3,
    anchors: &AnchorSet,
    gt: &[BBox],
    top_k: usize,
    iou: f64,
) -> Option<(usize, usize)> {
    if gt.is_empty() {
        return None;
    }
    let mut scored: Vec<(f64, usize)> = (0..anchors.len())
        .map(|i| (softmax(&cls.values()[2 * i..2 * i + 2])[1], i))
        .collect();
    // stable order: score descending, then anchor index
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let proposals: Vec<BBox> = scored
        .iter()
        .take(top_k)
        .map(|&(_, i)| {
            BBox::apply_deltas(&anchors.boxes[i], &reg.values()[4 * i..4 * i + 4])
                .clip(anchors.image.1 as f64, anchors.image.0 as f64)
        })
        .collect();
    let hit = gt
        .iter()
        .filter(|g| proposals.iter().any(|p| p.iou(g) >= iou))
        .count();
    Some((hit, gt.len()))
}

#[cfg(test)]
mod tests {
    use super::super::anchors::AnchorConfig;
    use super::*;

    fn t(v: Vec<f64>) -> Tensor3 {
        Tensor3::new(1, 1, v.len(), v).unwrap()
    }

    #[test]
    fn c2q_examples() {
        assert_eq!(c2q_loss(&t(vec![1.0, 0.0]), &t(vec![0.0, 0.0])).unwrap(), 1.0);
        assert_eq!(c2q_loss(&t(vec![-5.0; 3]), &t(vec![-1.0; 3])).unwrap(), 0.0);
        let x = t(vec![0.3, -0.2, 1.7]);
        assert_eq!(c2q_loss(&x, &x).unwrap(), 0.0);
        assert!(c2q_loss(&x, &t(vec![0.0])).is_err());
    }

    #[test]
    fn c2q_gradient_matches_fd() {
        let s = [0.4, -0.3, 1.2, 0.05];
        let tt = [0.1, 0.5, 0.2, -1.0];
        let (_, g) = c2q_flat(&s, &tt);
        for k in 0..4 {
            let mut a = s;
            a[k] += 1e-7;
            let mut b = s;
            b[k] -= 1e-7;
            let fd = (c2q_flat(&a, &tt).0 - c2q_flat(&b, &tt).0) / 2e-7;
            assert!((fd - g[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn total_loss_endpoints() {
        let task = TaskLoss {
            cls_sum: 3.0,
            n_cls: 6,
            reg_sum: 1.0,
            n_reg: 2,
            cls_grad: Tensor3::zeros(1, 1, 1),
            reg_grad: Tensor3::zeros(1, 1, 1),
        };
        let g0 = KdConfig::new(0.0, 1.0).unwrap();
        assert_eq!(total_loss(&task, 9.0, &g0).unwrap(), 0.5 + 0.5);
        let g1 = KdConfig::new(1.0, 1.0).unwrap();
        assert_eq!(total_loss(&task, 9.0, &g1).unwrap(), 9.0);
        let g3 = KdConfig::new(0.3, 2.0).unwrap();
        let (a, b, c) = g3.coefficients(6, 2);
        assert!((a - 0.7 / 6.0).abs() < 1e-15 && (b - 1.4 / 2.0).abs() < 1e-15 && c == 0.3);
        assert!(KdConfig::new(1.5, 1.0).is_err());
        assert!(KdConfig::new(-0.1, 1.0).is_err());
    }

    fn grid() -> AnchorSet {
        AnchorSet::new(&AnchorConfig::default(), (4, 4), 4, (16, 16)).unwrap()
    }

    #[test]
    fn every_gt_gets_a_positive() {
        let a = grid();
        let gts = [BBox::new(1.0, 2.0, 6.0, 9.0), BBox::new(9.0, 9.0, 15.0, 12.0)];
        let labels = assign_labels(&a, &gts, &LabelRule::default()).unwrap();
        for j in 0..2 {
            assert!(labels.contains(&Label::Positive(j)));
        }
        assert!(assign_labels(&a, &[BBox::new(1.0, 1.0, 1.0, 5.0)], &LabelRule::default()).is_err());
    }

    #[test]
    fn no_gt_means_no_regression() {
        let a = grid();
        let cls = Tensor3::zeros(4, 4, 6);
        let reg = Tensor3::zeros(4, 4, 12);
        let l = rpn_losses(&cls, &reg, &a, &[], &LabelRule::default()).unwrap();
        assert_eq!((l.reg_sum, l.n_reg), (0.0, 0));
        assert_eq!(l.n_cls, 8);
        assert!((l.cls_mean() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn anchor_equal_to_gt_has_zero_targets() {
        let a = grid();
        let gt = a.boxes[5 * 3 + 1];
        let labels = assign_labels(&a, &[gt], &LabelRule::default()).unwrap();
        assert_eq!(labels[16], Label::Positive(0));
        let l = rpn_losses(&Tensor3::zeros(4, 4, 6), &Tensor3::zeros(4, 4, 12), &a, &[gt], &LabelRule::default())
            .unwrap();
        assert_eq!(l.reg_grad.values()[64..68], [0.0; 4]);
    }

    #[test]
    fn recall_counts_hits() {
        let a = grid();
        let gt = a.boxes[7];
        let mut cls = Tensor3::zeros(4, 4, 6);
        cls.values_mut()[2 * 7 + 1] = 5.0;
        let reg = Tensor3::zeros(4, 4, 12);
        assert_eq!(proposal_recall(&cls, &reg, &a, &[gt], 1, 0.5), Some((1, 1)));
        assert_eq!(proposal_recall(&cls, &reg, &a, &[], 1, 0.5), None);
    }
}
