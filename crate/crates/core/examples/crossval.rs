//! A small K-fold study over several models, emitted in every report format.
//!
//!     cargo run --release --example crossval

use seatrack::cli::model_grid;
use seatrack::evaluation::{emit_report, Report, ReportFormat};
use seatrack::models::{ModelKind, ModelSpec};
use seatrack::nn::AdamConfig;
use seatrack::seq2seq::Aggregation;
use seatrack::synth::{generate, SynthConfig};
use seatrack::training::{cross_validate, CrossValConfig, TrainConfig};

fn main() -> seatrack::Result<()> {
    let ds = generate(&SynthConfig {
        per_route: 20,
        ..Default::default()
    })?;
    let (trajs, _) = ds.prepare(900.0)?;
    let specs: Vec<ModelSpec> = model_grid(
        &[ModelKind::Linear, ModelKind::Mlp, ModelKind::EncDec],
        &[Aggregation::Attn],
        true,
        2,
    )
    .into_iter()
    .map(|s| ModelSpec { q: 8, hidden: 64, ..s })
    .collect();
    let train = TrainConfig {
        max_epochs: 20,
        batch_size: 32,
        adam: AdamConfig::with_lr(3e-3),
        patience: 5,
        ..Default::default()
    };
    let cfg = CrossValConfig::new(3, 12, 12, 2, train);
    let res = cross_validate(&trajs, &specs, &cfg)?;
    let report = Report {
        entries: res.entries,
        delta_min: 15.0,
        columns: Report::default_columns(12, 15.0),
        distance_origin: res.start_centroid,
        bin_nmi: 10.0,
    };
    for f in ReportFormat::ALL {
        let bytes = emit_report(&report, f)?;
        let text = String::from_utf8_lossy(&bytes);
        println!("== {} ==", f.file_name());
        for line in text.lines().take(12) {
            println!("{line}");
        }
    }
    Ok(())
}
