//! Image classifier built on one quantum convolution: qconv, flatten, a
//! dense layer and softmax cross-entropy.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classical::{softmax_cross_entropy, Dense};
use crate::error::{Error, Result};
use crate::qconv::{QConvConfig, QConvLayer};
use crate::tensor::Tensor3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantumClassifier {
    pub conv: QConvLayer,
    pub dense: Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub epoch: usize,
    pub iteration: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Accuracy of the predictions made just before each update.
    pub running_accuracy: f64,
    /// Accuracy over the training set with the end-of-epoch parameters.
    pub accuracy: f64,
}

impl QuantumClassifier {
    pub fn new<R: Rng + ?Sized>(conv: QConvConfig, classes: usize, rng: &mut R) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Config("classifier needs at least two classes".into()));
        }
        let mut conv = QConvLayer::new(conv, rng)?;
        conv.bias.iter_mut().for_each(|b| *b = 0.5);
        let (h, w, c) = conv.out_shape();
        let dense = Dense::new(h * w * c, classes, rng);
        Ok(Self { conv, dense })
    }

    fn features(&self, x: &Tensor3) -> Result<Vec<f64>> {
        Ok(self.conv.forward(x)?.into_values())
    }

    pub fn logits(&self, x: &Tensor3) -> Result<Vec<f64>> {
        Ok(self.dense.forward(&self.features(x)?))
    }

    pub fn predict(&self, x: &Tensor3) -> Result<usize> {
        let l = self.logits(x)?;
        Ok((0..l.len()).fold(0, |best, i| if l[i] > l[best] { i } else { best }))
    }

    /// One SGD step on a single sample; returns the loss and whether the
    /// pre-update prediction was right.
    pub fn step(&mut self, x: &Tensor3, label: usize, lr: f64) -> Result<(f64, bool)> {
        let features = self.features(x)?;
        let logits = self.dense.forward(&features);
        if label >= logits.len() {
            return Err(Error::Data(format!("label {label} out of range")));
        }
        let predicted = (0..logits.len()).fold(0, |b, i| if logits[i] > logits[b] { i } else { b });
        let (loss, g) = softmax_cross_entropy(&logits, label);
        if !loss.is_finite() {
            return Err(Error::Training(format!("loss is {loss}")));
        }
        let (gw, gb, gx) = self.dense.backward(&features, &g);
        let (h, w, c) = self.conv.out_shape();
        let up = Tensor3::new(h, w, c, gx)?;
        let cg = self.conv.backward(x, &up, false)?;
        self.dense.sgd_step(&gw, &gb, lr);
        self.conv.sgd_step(&cg, lr);
        Ok((loss, predicted == label))
    }
}

/// Per-sample SGD with a seeded shuffle each epoch.
pub fn train_classifier(
    model: &mut QuantumClassifier,
    data: &[(Tensor3, usize)],
    epochs: usize,
    lr: f64,
    seed: u64,
    mut on_iteration: impl FnMut(&IterationRecord),
    mut on_epoch: impl FnMut(&ClassifierEpoch),
) -> Result<Vec<ClassifierEpoch>> {
    if data.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(epochs);
    let mut iteration = 0;
    for epoch in 1..=epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut right) = (0.0, 0usize);
        for &i in &order {
            let (x, y) = &data[i];
            let (loss, ok) = model.step(x, *y, lr)?;
            iteration += 1;
            on_iteration(&IterationRecord { epoch, iteration, loss });
            loss_sum += loss;
            right += ok as usize;
        }
        let mut correct = 0;
        for (x, y) in data {
            correct += (model.predict(x)? == *y) as usize;
        }
        let rec = ClassifierEpoch {
            epoch,
            mean_loss: loss_sum / data.len() as f64,
            running_accuracy: right as f64 / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        };
        on_epoch(&rec);
        out.push(rec);
    }
    Ok(out)
}

/// Trailing moving average with the given window (`len - window + 1` values).
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || xs.len() < window {
        return Vec::new();
    }
    xs.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moving_average_basics() {
        assert_eq!(moving_average(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.5, 2.5, 3.5]);
        assert!(moving_average(&[1.0], 2).is_empty());
    }

    #[test]
    fn learns_a_trivial_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = QConvConfig {
            kernel: (2, 2),
            stride: 2,
            pad: 0,
            qubits: 2,
            pqc_blocks: 1,
            ..QConvConfig::new((4, 4, 1), 2)
        };
        let mut model = QuantumClassifier::new(cfg, 2, &mut rng).unwrap();
        let data: Vec<(Tensor3, usize)> = (0..8)
            .map(|i| (Tensor3::filled(4, 4, 1, if i % 2 == 0 { -0.8 } else { 0.8 }), i % 2))
            .collect();
        let log = train_classifier(&mut model, &data, 30, 0.2, 2, |_| {}, |_| {}).unwrap();
        assert!(log.last().unwrap().mean_loss < log[0].mean_loss);
        assert_eq!(log.last().unwrap().accuracy, 1.0);
    }
}
