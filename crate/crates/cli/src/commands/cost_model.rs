//! Analytic runtime table, fast against per-channel, over a `(q, C)` grid.

use fqc_core::costmodel::{analytic_runtime, RuntimeEstimate};
use fqc_core::qconv::ConvMode;
use serde::Serialize;

use crate::config::{CostConfig, RunConfig};
use crate::output::{write_json, write_text};

pub const HEADER: &str = "C,q,out_height,out_width,kappa_e,rho,delta,t_e,t_t,\
fast_setup,fast_encoding,fast_trainable,fast_total,\
baseline_setup,baseline_encoding,baseline_trainable,baseline_total,ratio";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostRow {
    #[serde(rename = "C")]
    pub channels: usize,
    pub q: usize,
    pub fast: RuntimeEstimate,
    pub baseline: RuntimeEstimate,
    /// Fast total over baseline total.
    pub ratio: f64,
}

pub fn table(cfg: &CostConfig) -> anyhow::Result<Vec<CostRow>> {
    let mut rows = Vec::new();
    for &q in &cfg.qubits {
        for &c in &cfg.channels {
            let p = cfg.params(c, q);
            let fast = analytic_runtime(&p, ConvMode::Fast)?;
            let baseline = analytic_runtime(&p, ConvMode::PerChannel)?;
            rows.push(CostRow {
                channels: c,
                q,
                ratio: fast.total / baseline.total,
                fast,
                baseline,
            });
        }
    }
    Ok(rows)
}

pub fn to_csv(cfg: &CostConfig, rows: &[CostRow]) -> String {
    let mut out = format!("{HEADER}\n");
    for r in rows {
        let (f, b) = (&r.fast, &r.baseline);
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.channels,
            r.q,
            cfg.out_height,
            cfg.out_width,
            cfg.kappa_e,
            cfg.rho,
            cfg.delta,
            cfg.t_e,
            cfg.t_t,
            f.setup,
            f.encoding,
            f.trainable,
            f.total,
            b.setup,
            b.encoding,
            b.trainable,
            b.total,
            r.ratio
        ));
    }
    out
}

pub fn run(cfg: &RunConfig) -> anyhow::Result<Vec<CostRow>> {
    let rows = table(&cfg.cost)?;
    write_text(&cfg.output_dir.join("cost_model.csv"), &to_csv(&cfg.cost, &rows))?;
    write_json(&cfg.output_dir.join("cost_model.json"), &rows)?;
    println!("{:>5} {:>3} {:>14} {:>14} {:>8}", "C", "q", "fast", "baseline", "ratio");
    for r in &rows {
        println!(
            "{:>5} {:>3} {:>14.2} {:>14.2} {:>8.4}",
            r.channels, r.q, r.fast.total, r.baseline.total, r.ratio
        );
    }
    Ok(rows)
}
