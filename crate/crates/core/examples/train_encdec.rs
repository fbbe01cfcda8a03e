//! Train a labeled attention encoder-decoder on the synthetic branching
//! scenario, then inspect its forecasts and attention weights.
//!
//!     cargo run --release --example train_encdec

use seatrack::evaluation::evaluate;
use seatrack::models::{AnyModel, ModelKind, ModelSpec};
use seatrack::nn::AdamConfig;
use seatrack::seq2seq::Aggregation;
use seatrack::synth::{generate, SynthConfig};
use seatrack::training::{standardizer_for, train, TrainConfig};
use seatrack::windowing::{segment_all, validation_split};

fn main() -> seatrack::Result<()> {
    let ds = generate(&SynthConfig {
        per_route: 30,
        ..Default::default()
    })?;
    let (trajs, _) = ds.prepare(900.0)?;
    let ids: Vec<u64> = trajs.iter().map(|t| t.id).collect();
    let (rest, test_ids) = validation_split(&ids, 0.2, 1)?;
    let (train_ids, val_ids) = validation_split(&rest, 0.1, 2)?;
    let pick = |want: &[u64]| trajs.iter().filter(|t| want.contains(&t.id)).collect::<Vec<_>>();
    let (tr, va, te) = (pick(&train_ids), pick(&val_ids), pick(&test_ids));
    let st = standardizer_for(&tr)?;
    let train_s = segment_all(tr.iter().copied(), 12, 12, &st, 2)?;
    let val_s = segment_all(va.iter().copied(), 12, 12, &st, 2)?;
    let test_s = segment_all(te.iter().copied(), 12, 12, &st, 2)?;
    println!("{} train / {} val / {} test windows", train_s.len(), val_s.len(), test_s.len());

    let spec = ModelSpec {
        q: 16,
        ..ModelSpec::new(ModelKind::EncDec, true, 2).with_aggregation(Aggregation::Attn)
    };
    let mut model = spec.build(0)?;
    let cfg = TrainConfig {
        max_epochs: 80,
        batch_size: 32,
        adam: AdamConfig::with_lr(3e-3),
        patience: 15,
        seed: 0,
        ..Default::default()
    };
    let rep = train(&mut model, &train_s, &val_s, &cfg)?;
    print!("{}", rep.to_text());

    let eval = evaluate(&model, &test_s, &st, &spec.display_name(), None)?;
    let mae: Vec<String> = eval.mae_per_horizon.iter().map(|v| format!("{v:.2}")).collect();
    println!("test MAE per step (nmi): {}", mae.join(" "));

    if let AnyModel::EncDec(m) = &model {
        let s = &test_s[0];
        let trace = m.encdec_forward(&s.input, s.psi.as_deref())?;
        let alphas = trace.dec.alphas();
        println!("attention weights of the first test window (rows: decode step, cols: input step)");
        for j in 0..alphas.rows() {
            let row: Vec<String> = alphas.row(j).iter().map(|a| format!("{a:.2}")).collect();
            println!("  j={:>2}: {}", j + 1, row.join(" "));
        }
    }
    Ok(())
}
