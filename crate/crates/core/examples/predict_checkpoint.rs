//! Save a trained model to a checkpoint, load it back and forecast the next
//! three hours from one twelve-step input.
//!
//!     cargo run --release --example predict_checkpoint

use seatrack::models::{AnyModel, ModelKind, ModelSpec, Trainable};
use seatrack::nn::{AdamConfig, Checkpoint, Matrix};
use seatrack::synth::{generate, SynthConfig};
use seatrack::training::{standardizer_for, train, TrainConfig};
use seatrack::windowing::{one_hot, segment_all, validation_split};

fn main() -> seatrack::Result<()> {
    let ds = generate(&SynthConfig {
        per_route: 20,
        ..Default::default()
    })?;
    let (trajs, _) = ds.prepare(900.0)?;
    let ids: Vec<u64> = trajs.iter().map(|t| t.id).collect();
    let (train_ids, val_ids) = validation_split(&ids, 0.1, 0)?;
    let pick = |want: &[u64]| trajs.iter().filter(|t| want.contains(&t.id)).collect::<Vec<_>>();
    let st = standardizer_for(&pick(&train_ids))?;
    let train_s = segment_all(pick(&train_ids), 12, 12, &st, 2)?;
    let val_s = segment_all(pick(&val_ids), 12, 12, &st, 2)?;

    let spec = ModelSpec {
        hidden: 64,
        ..ModelSpec::new(ModelKind::Mlp, true, 2)
    };
    let mut model = spec.build(0)?;
    let cfg = TrainConfig {
        max_epochs: 40,
        batch_size: 32,
        adam: AdamConfig::with_lr(1e-3),
        patience: 10,
        ..Default::default()
    };
    train(&mut model, &train_s, &val_s, &cfg)?;

    let dir = tempfile_dir();
    let path = dir.join("model.ckpt");
    model.to_checkpoint(&spec, &st, cfg.adam).save(&path)?;
    let (spec2, st2, loaded) = AnyModel::from_checkpoint(&Checkpoint::load(&path)?)?;
    println!("reloaded {} from {}", spec2.display_name(), path.display());

    let traj = &trajs[0];
    let input: Vec<f64> = traj.states[..12].iter().flat_map(|p| st2.apply(*p)).collect();
    let x = Matrix::from_vec(12, 2, input)?;
    let psi = one_hot(traj.label.unwrap_or(0), 2)?;
    let y = loaded.predict(&x, Some(&psi))?;
    println!("step  predicted (lat, lon)     actual (lat, lon)");
    for j in 0..y.rows() {
        let p = st2.invert([y.get(j, 0), y.get(j, 1)]);
        let a = traj.states[12 + j];
        println!("{:>4}  {:.4} {:.4}      {:.4} {:.4}", j + 1, p.lat, p.lon, a.lat, a.lon);
    }
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("seatrack-example-{}", std::process::id()));
    std::fs::create_dir_all(&d).expect("temp dir");
    d
}
