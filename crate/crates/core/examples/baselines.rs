//! Linear regression in closed form against the MLP, both labeled and not.
//!
//!     cargo run --release --example baselines

use seatrack::evaluation::evaluate;
use seatrack::models::{ModelKind, ModelSpec};
use seatrack::nn::AdamConfig;
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
    let st = standardizer_for(&pick(&train_ids))?;
    let seg = |want: &[u64]| segment_all(pick(want), 12, 12, &st, 2);
    let (train_s, val_s, test_s) = (seg(&train_ids)?, seg(&val_ids)?, seg(&test_ids)?);

    let cfg = TrainConfig {
        max_epochs: 60,
        batch_size: 32,
        adam: AdamConfig::with_lr(1e-3),
        patience: 10,
        ..Default::default()
    };
    println!("{:<22} {:>8} {:>8} {:>8}", "model", "1h", "2h", "3h");
    for kind in [ModelKind::Linear, ModelKind::Mlp] {
        for labeled in [false, true] {
            let spec = ModelSpec {
                hidden: 128,
                ..ModelSpec::new(kind, labeled, 2)
            };
            let mut m = spec.build(0)?;
            train(&mut m, &train_s, &val_s, &cfg)?;
            let e = evaluate(&m, &test_s, &st, &spec.display_name(), None)?;
            let at = |j: usize| e.mae_per_horizon[j - 1];
            println!("{:<22} {:>8.2} {:>8.2} {:>8.2}", spec.display_name(), at(4), at(8), at(12));
        }
    }
    Ok(())
}
