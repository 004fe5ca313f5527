//! Distillation sweep: one classical teacher, one quantum student per
//! `gamma`, all students starting from the same parameters.

use std::path::PathBuf;

use anyhow::{bail, Context};
use fqc_core::detection::{
    synth_dataset, train_qrpn, train_teacher, AnchorConfig, ClassicalHead, EpochRecord, HeadConfig, KdConfig,
    QrpnHead, Sample, TrainConfig,
};
use fqc_core::io::Checkpoint;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{QrpnConfig, RunConfig};
use crate::output::{write_json, write_jsonl, write_text};

pub const TEACHER_KIND: &str = "classical_head";
pub const STUDENT_KIND: &str = "qrpn_head";
pub const SUMMARY_HEADER: &str =
    "gamma,initial_recall,final_recall,initial_c2q,final_c2q,c2q_drop,final_l_cls,final_l_reg,final_total";
/// The evaluation images come from this offset of the run seed.
pub const EVAL_SEED_OFFSET: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaSummary {
    pub gamma: f64,
    pub initial_recall: f64,
    pub final_recall: f64,
    pub initial_c2q: f64,
    pub final_c2q: f64,
    /// `1 - final_c2q / initial_c2q`.
    pub c2q_drop: f64,
    pub final_l_cls: f64,
    pub final_l_reg: f64,
    pub final_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QrpnReport {
    pub seed: u64,
    pub teacher_recall: f64,
    pub runs: Vec<GammaSummary>,
}

pub fn head_config(q: &QrpnConfig) -> HeadConfig {
    HeadConfig {
        in_shape: (q.image_size, q.image_size, 3),
        stride: q.stride,
        mid_channels: q.mid_channels,
        anchors: q.anchor_ratios.len(),
        qubits: q.qubits,
        pqc_blocks: q.pqc_blocks,
    }
}

fn train_config(q: &QrpnConfig, epochs: usize, lr: f64, gamma: f64) -> anyhow::Result<TrainConfig> {
    let mut tc = TrainConfig::new(epochs, lr, KdConfig::new(gamma, q.lambda)?);
    tc.anchors = AnchorConfig {
        sizes: vec![q.anchor_size],
        ratios: q.anchor_ratios.clone(),
    };
    tc.top_k = q.top_k;
    Ok(tc)
}

pub fn datasets(q: &QrpnConfig, seed: u64) -> anyhow::Result<(Vec<Sample>, Vec<Sample>)> {
    Ok((
        synth_dataset(seed, q.train_samples, q.image_size, q.max_boxes)?,
        synth_dataset(seed.wrapping_add(EVAL_SEED_OFFSET), q.eval_samples, q.image_size, q.max_boxes)?,
    ))
}

fn teacher_path(cfg: &RunConfig) -> PathBuf {
    cfg.qrpn.teacher.clone().unwrap_or_else(|| cfg.output_dir.join("teacher.json"))
}

fn gamma_tag(g: f64) -> String {
    format!("gamma_{g}")
}

fn summarise(gamma: f64, recs: &[EpochRecord]) -> GammaSummary {
    let (first, last) = (&recs[0], recs.last().expect("epoch 0 is always recorded"));
    GammaSummary {
        gamma,
        initial_recall: first.recall,
        final_recall: last.recall,
        initial_c2q: first.l_c2q,
        final_c2q: last.l_c2q,
        c2q_drop: if first.l_c2q > 0.0 { 1.0 - last.l_c2q / first.l_c2q } else { 0.0 },
        final_l_cls: last.l_cls,
        final_l_reg: last.l_reg,
        final_total: last.total,
    }
}

pub fn summary_csv(runs: &[GammaSummary]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in runs {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.gamma,
            r.initial_recall,
            r.final_recall,
            r.initial_c2q,
            r.final_c2q,
            r.c2q_drop,
            r.final_l_cls,
            r.final_l_reg,
            r.final_total
        ));
    }
    out
}

pub fn run(cfg: &RunConfig) -> anyhow::Result<QrpnReport> {
    let q = &cfg.qrpn;
    let out = &cfg.output_dir;
    let hc = head_config(q);
    let (data, eval) = datasets(q, cfg.seed)?;
    // teacher first, student second, from one generator; the teacher draw
    // happens even when it is loaded so students do not depend on that
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut teacher = ClassicalHead::new(hc, &mut rng)?;
    let student = QrpnHead::new(hc, &mut rng)?;

    let tpath = teacher_path(cfg);
    if q.train_teacher {
        let tc = train_config(q, q.teacher_epochs, q.teacher_lr, 0.0)?;
        let log = train_teacher(&mut teacher, &data, &eval, &tc, |r| {
            eprintln!("teacher epoch {:>3}  loss {:.4}  recall {:.3}", r.epoch, r.total, r.recall)
        })?;
        write_jsonl(&out.join("teacher_log.jsonl"), &log)?;
        Checkpoint::new(TEACHER_KIND, cfg.seed, q.teacher_epochs as u64, teacher.clone()).save(&tpath)?;
    } else {
        if !tpath.exists() {
            bail!(
                "no teacher checkpoint at {}; run with --train-teacher to train one, \
                 or point --teacher at an existing checkpoint",
                tpath.display()
            );
        }
        let ck: Checkpoint<ClassicalHead> = Checkpoint::load(&tpath, TEACHER_KIND)
            .with_context(|| format!("loading teacher from {}", tpath.display()))?;
        if ck.payload.config != hc {
            bail!(
                "teacher in {} was built for {:?}, this run needs {:?}",
                tpath.display(),
                ck.payload.config,
                hc
            );
        }
        teacher = ck.payload;
    }
    let anchors = train_config(q, 0, 0.0, 0.0)?.anchor_set(&hc)?;
    let teacher_recall = fqc_core::detection::dataset_recall(|x| teacher.forward(x), &eval, &anchors, q.top_k, 0.5)?;
    println!("teacher recall {teacher_recall:.3}");

    let mut runs = Vec::with_capacity(q.gammas.len());
    for &gamma in &q.gammas {
        let mut head = student.clone();
        let tc = train_config(q, q.epochs, q.lr, gamma)?;
        let recs = train_qrpn(&mut head, &teacher, &data, &eval, &tc, |r| {
            eprintln!(
                "gamma {gamma} epoch {:>3}  total {:.4}  c2q {:.3}  recall {:.3}",
                r.epoch, r.total, r.l_c2q, r.recall
            )
        })?;
        let tag = gamma_tag(gamma);
        write_jsonl(&out.join(format!("qrpn_{tag}.jsonl")), &recs)?;
        Checkpoint::new(STUDENT_KIND, cfg.seed, q.epochs as u64, head).save(&out.join(format!("qrpn_{tag}.json")))?;
        let s = summarise(gamma, &recs);
        println!(
            "gamma {:<4} recall {:.3} -> {:.3}  c2q {:.3} -> {:.3}",
            gamma, s.initial_recall, s.final_recall, s.initial_c2q, s.final_c2q
        );
        runs.push(s);
    }
    write_text(&out.join("summary.csv"), &summary_csv(&runs))?;
    let report = QrpnReport {
        seed: cfg.seed,
        teacher_recall,
        runs,
    };
    write_json(&out.join("summary.json"), &report)?;
    Ok(report)
}
