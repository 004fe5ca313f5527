//! Toy region-proposal detection with a quantum head distilled from a
//! classical teacher.

pub mod anchors;
pub mod heads;
pub mod loss;
pub mod synth;
pub mod train;

pub use anchors::{AnchorConfig, AnchorSet, BBox};
pub use heads::{ClassicalHead, HeadConfig, HeadOutput, PointwiseFilter, QrpnHead};
pub use loss::{c2q_loss, proposal_recall, rpn_losses, total_loss, KdConfig, LabelRule, TaskLoss};
pub use synth::{synth_dataset, Sample};
pub use train::{dataset_recall, train_qrpn, train_teacher, EpochRecord, TrainConfig};
