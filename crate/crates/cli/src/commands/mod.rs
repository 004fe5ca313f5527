//! One module per subcommand. Each `run` takes a validated config, writes
//! its files and returns the report it wrote.

pub mod bench_conv;
pub mod cost_model;
pub mod grad_check;
pub mod synth_data;
pub mod train_qrpn;
