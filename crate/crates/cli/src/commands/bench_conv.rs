//! Wall-clock and gate-count comparison of fast against per-channel
//! convolution, then a short classification run on 32x32 RGB images.

use std::time::Instant;

use anyhow::{bail, Context};
use fqc_core::classifier::{moving_average, train_classifier, ClassifierEpoch, IterationRecord, QuantumClassifier};
use fqc_core::costmodel::{analytic_runtime, bench_wallclock, to_csv, BenchConfig as Timing, BenchRow, ComplexityParams};
use fqc_core::io::{cifar_surrogate, decode_cifar10, load_cifar10_binary, Checkpoint, LabeledImage};
use fqc_core::qconv::{ConvMode, QConvConfig, QConvLayer};
use fqc_core::Tensor3;
use rand::Rng;
use serde::Serialize;

use crate::config::{BenchConfig, ClassifierConfig, RunConfig};
use crate::output::{component_rng, component_seed, stream, write_json, write_jsonl, write_text};

pub const EPOCH_CSV_HEADER: &str = "epoch,mean_loss,running_accuracy,accuracy,loss_ma5";
const MA_WINDOW: usize = 5;

/// Counter-only view of one channel count, plus the analytic prediction
/// for the same geometry.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CounterCheck {
    #[serde(rename = "C")]
    pub channels: usize,
    /// Baseline trainable blocks over fast trainable blocks.
    pub block_ratio: f64,
    pub encoding_rotations_fast: u64,
    pub encoding_rotations_baseline: u64,
    /// `H_out * W_out * k_h * k_w * C`.
    pub encoding_rotations_expected: u64,
    pub analytic_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifierSummary {
    pub dataset: String,
    pub samples: usize,
    pub classes: [u8; 2],
    pub epochs: usize,
    pub lr: f64,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    pub loss_moving_average: Vec<f64>,
    pub moving_average_non_increasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifierRun {
    pub summary: ClassifierSummary,
    pub epochs: Vec<ClassifierEpoch>,
    pub iterations: Vec<IterationRecord>,
    #[serde(skip)]
    pub model: QuantumClassifier,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub counters: Vec<CounterCheck>,
    pub classifier: Option<ClassifierSummary>,
}

fn layer_config(cfg: &BenchConfig, channels: usize, mode: ConvMode) -> QConvConfig {
    QConvConfig {
        kernel: (cfg.kernel, cfg.kernel),
        stride: cfg.stride,
        pad: cfg.pad,
        qubits: cfg.qubits,
        upload_axis: cfg.upload_axis,
        pqc_blocks: cfg.pqc_blocks,
        mode,
        ..QConvConfig::new((cfg.size, cfg.size, channels), cfg.qubits)
    }
}

fn random_tensor<R: Rng>(shape: (usize, usize, usize), rng: &mut R) -> anyhow::Result<Tensor3> {
    let (h, w, c) = shape;
    Ok(Tensor3::new(h, w, c, (0..h * w * c).map(|_| rng.gen_range(-1.0..1.0)).collect())?)
}

/// Times both modes for every channel count on one thread. Within a
/// channel count both modes share the input and the parameter draw.
pub fn bench_rows(cfg: &BenchConfig, seed: u64) -> anyhow::Result<Vec<BenchRow>> {
    let mut jobs = Vec::new();
    for &c in &cfg.channels {
        let x = random_tensor((cfg.size, cfg.size, c), &mut component_rng(seed ^ c as u64, stream::BENCH_INPUT))?;
        for mode in [ConvMode::Fast, ConvMode::PerChannel] {
            let lc = layer_config(cfg, c, mode);
            let layer = QConvLayer::new(lc, &mut component_rng(seed ^ c as u64, stream::BENCH_LAYER))?;
            let timing = Timing {
                mode,
                layer: lc,
                reps: cfg.reps,
                warmup: cfg.warmup,
            };
            jobs.push((timing, layer, x.clone()));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build()?;
    Ok(pool.install(|| bench_wallclock(&jobs))?)
}

pub fn counter_checks(cfg: &BenchConfig, rows: &[BenchRow]) -> anyhow::Result<Vec<CounterCheck>> {
    let mut out = Vec::new();
    for &c in &cfg.channels {
        let pick = |m: ConvMode| {
            rows.iter()
                .find(|r| r.channels == c && r.mode == m)
                .context("benchmark row missing")
        };
        let (f, b) = (pick(ConvMode::Fast)?, pick(ConvMode::PerChannel)?);
        let layer = QConvLayer::with_zero_params(layer_config(cfg, c, ConvMode::Fast))?;
        let (ho, wo, _) = layer.out_shape();
        let p = ComplexityParams::new(ho, wo, c, cfg.qubits);
        let analytic_ratio =
            analytic_runtime(&p, ConvMode::Fast)?.total / analytic_runtime(&p, ConvMode::PerChannel)?.total;
        out.push(CounterCheck {
            channels: c,
            block_ratio: b.trainable_blocks as f64 / f.trainable_blocks as f64,
            encoding_rotations_fast: f.encoding_rotations,
            encoding_rotations_baseline: b.encoding_rotations,
            encoding_rotations_expected: (ho * wo * cfg.kernel * cfg.kernel * c) as u64,
            analytic_ratio,
        });
    }
    Ok(out)
}

/// Two-class subset relabelled to `0` and `1`. Without a dataset file a
/// seeded stand-in in the same binary format is decoded instead; its
/// labels are already `0` and `1`.
pub fn load_dataset(cfg: &ClassifierConfig, seed: u64) -> anyhow::Result<(String, Vec<(Tensor3, usize)>)> {
    let (name, records): (String, Vec<LabeledImage>) = match &cfg.dataset {
        Some(p) => {
            let recs = load_cifar10_binary(p)?;
            let picked = recs
                .into_iter()
                .filter_map(|r| {
                    let i = cfg.classes.iter().position(|&c| c == r.label)?;
                    Some(LabeledImage { image: r.image, label: i as u8 })
                })
                .take(cfg.samples)
                .collect();
            (p.display().to_string(), picked)
        }
        None => (
            "surrogate".into(),
            decode_cifar10(&cifar_surrogate(component_seed(seed, stream::SURROGATE), cfg.samples))?,
        ),
    };
    let data: Vec<(Tensor3, usize)> = records.into_iter().map(|r| (r.image, r.label as usize)).collect();
    if !(data.iter().any(|d| d.1 == 0) && data.iter().any(|d| d.1 == 1)) {
        bail!("{name}: need samples of both classes {:?}", cfg.classes);
    }
    Ok((name, data))
}

pub fn train(cfg: &ClassifierConfig, seed: u64) -> anyhow::Result<ClassifierRun> {
    let (dataset, data) = load_dataset(cfg, seed)?;
    let conv = QConvConfig {
        kernel: (cfg.kernel, cfg.kernel),
        stride: cfg.kernel,
        pad: 0,
        qubits: cfg.qubits,
        pqc_blocks: cfg.pqc_blocks,
        ..QConvConfig::new((32, 32, 3), cfg.out_channels)
    };
    let mut rng = component_rng(seed, stream::CLASSIFIER);
    let mut model = QuantumClassifier::new(conv, 2, &mut rng)?;
    let mut iterations = Vec::new();
    let started = Instant::now();
    let epochs = train_classifier(
        &mut model,
        &data,
        cfg.epochs,
        cfg.lr,
        rng.gen(),
        |it| iterations.push(it.clone()),
        |e| {
            eprintln!(
                "epoch {:>3}  loss {:.4}  acc {:.3}  ({:.1?})",
                e.epoch,
                e.mean_loss,
                e.accuracy,
                started.elapsed()
            )
        },
    )?;
    let losses: Vec<f64> = epochs.iter().map(|e| e.mean_loss).collect();
    let ma = moving_average(&losses, MA_WINDOW);
    let summary = ClassifierSummary {
        dataset,
        samples: data.len(),
        classes: cfg.classes,
        epochs: cfg.epochs,
        lr: cfg.lr,
        final_accuracy: epochs.last().map_or(0.0, |e| e.accuracy),
        best_accuracy: epochs.iter().map(|e| e.accuracy).fold(0.0, f64::max),
        moving_average_non_increasing: ma.windows(2).all(|w| w[1] <= w[0]),
        loss_moving_average: ma,
    };
    Ok(ClassifierRun {
        summary,
        epochs,
        iterations,
        model,
    })
}

pub fn epochs_csv(epochs: &[ClassifierEpoch]) -> String {
    let losses: Vec<f64> = epochs.iter().map(|e| e.mean_loss).collect();
    let ma = moving_average(&losses, MA_WINDOW);
    let mut out = format!("{EPOCH_CSV_HEADER}\n");
    for (i, e) in epochs.iter().enumerate() {
        let m = (i + 1).checked_sub(MA_WINDOW).map_or(String::new(), |j| ma[j].to_string());
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch, e.mean_loss, e.running_accuracy, e.accuracy, m
        ));
    }
    out
}

/// Files with timings: `bench.csv`, `bench.json`. Everything else is a
/// pure function of the config and seed.
pub fn run(cfg: &RunConfig) -> anyhow::Result<BenchReport> {
    let b = &cfg.bench;
    let out = &cfg.output_dir;
    let rows = bench_rows(b, cfg.seed)?;
    let counters = counter_checks(b, &rows)?;
    write_text(&out.join("bench.csv"), &to_csv(&rows))?;
    write_json(&out.join("bench.json"), &rows)?;
    let counter_rows: Vec<BenchRow> = rows.iter().map(BenchRow::counters_only).collect();
    write_json(
        &out.join("bench_counters.json"),
        &serde_json::json!({ "rows": counter_rows, "checks": counters }),
    )?;
    for r in &rows {
        println!(
            "{:<8} C={:<4} blocks {:>8}  rotations {:>9}  {:>10.3} ms +- {:.3}",
            r.mode.to_string(),
            r.channels,
            r.trainable_blocks,
            r.encoding_rotations,
            r.mean_ms,
            r.std_ms
        );
    }
    let classifier = if b.skip_train {
        None
    } else {
        let run = train(&b.train, cfg.seed)?;
        write_jsonl(&out.join("classifier_log.jsonl"), &run.iterations)?;
        write_text(&out.join("classifier_epochs.csv"), &epochs_csv(&run.epochs))?;
        write_json(&out.join("classifier_summary.json"), &run.summary)?;
        Checkpoint::new("quantum_classifier", cfg.seed, run.iterations.len() as u64, run.model.clone())
            .save(&out.join("classifier.json"))?;
        println!(
            "classifier on {} ({} samples): final accuracy {:.3}",
            run.summary.dataset, run.summary.samples, run.summary.final_accuracy
        );
        Some(run.summary)
    };
    Ok(BenchReport {
        rows,
        counters,
        classifier,
    })
}
