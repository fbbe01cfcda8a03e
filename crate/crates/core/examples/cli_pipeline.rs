//! The command-line pipeline driven in-process: synth, prepare, train,
//! evaluate, predict, then a replay from the training manifest.
//!
//!     cargo run --release --example cli_pipeline [WORKDIR]

use seatrack::cli::run;

fn step(args: &str) -> seatrack::Result<()> {
    println!("$ seatrack {args}");
    let argv: Vec<String> = args.split_whitespace().map(str::to_string).collect();
    run(&argv, &mut std::io::stdout())
}

fn main() -> seatrack::Result<()> {
    let work = std::env::args()
        .nth(1)
        .unwrap_or_else(|| std::env::temp_dir().join("seatrack-cli").display().to_string());
    let w = work.as_str();
    step(&format!("synth --per-route 20 --seed 3 --out {w}/synth"))?;
    step(&format!(
        "prepare --input {w}/synth/ais.csv --polygons {w}/synth/polygons.txt --out {w}/prep"
    ))?;
    step(&format!(
        "train --input {w}/prep/trajectories.txt --model encdec --agg attn --labeled --q 8 \
         --epochs 15 --batch 32 --lr 3e-3 --patience 5 --out {w}/train"
    ))?;
    step(&format!(
        "evaluate --checkpoint {w}/train/model.ckpt --input {w}/prep/trajectories.txt --out {w}/eval"
    ))?;
    print!("{}", std::fs::read_to_string(format!("{w}/eval/report.txt")).unwrap_or_default());

    let traj = std::fs::read_to_string(format!("{w}/prep/trajectories.txt")).unwrap_or_default();
    let first: Vec<String> = traj
        .lines()
        .filter(|l| !l.starts_with('#'))
        .take(12)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            format!("{} {}", f[4], f[5])
        })
        .collect();
    std::fs::write(format!("{w}/input.txt"), first.join("\n") + "\n").ok();
    step(&format!(
        "predict --checkpoint {w}/train/model.ckpt --input {w}/input.txt --label 0 --out {w}/pred"
    ))?;

    step(&format!("replay --manifest {w}/train/manifest.txt --out {w}/train-replay"))?;
    let a = std::fs::read(format!("{w}/train/model.ckpt")).unwrap_or_default();
    let b = std::fs::read(format!("{w}/train-replay/model.ckpt")).unwrap_or_default();
    println!("replayed checkpoint identical: {}", a == b);
    Ok(())
}
