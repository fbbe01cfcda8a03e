//! Sliding-window supervision and trajectory-level folds.
//!
//!     cargo run --release --example windowing

use seatrack::synth::{generate, SynthConfig};
use seatrack::training::standardizer_for;
use seatrack::windowing::{kfold_split, segment, window_count, SampleSet};

fn main() -> seatrack::Result<()> {
    for (t, ell, h) in [(40, 12, 12), (24, 12, 12), (23, 12, 12), (10, 3, 2)] {
        println!("T={t:>2} ell={ell:>2} h={h:>2}: {} windows", window_count(t, ell, h));
    }

    let ds = generate(&SynthConfig {
        per_route: 10,
        ..Default::default()
    })?;
    let (trajs, _) = ds.prepare(900.0)?;
    let refs: Vec<_> = trajs.iter().collect();
    let st = standardizer_for(&refs)?;
    let first = &trajs[0];
    let windows = segment(first, 12, 12, &st, 2)?;
    println!(
        "trajectory {} (label {:?}, {} states) gives {} windows",
        first.id,
        first.label,
        first.len(),
        windows.len()
    );
    let w = &windows[0];
    println!(
        "  window 0: input {:?}, target {:?}, psi {:?}",
        w.input.shape(),
        w.target.shape(),
        w.psi
    );

    let ids: Vec<u64> = trajs.iter().map(|t| t.id).collect();
    let plan = kfold_split(&ids, 5, 0)?;
    println!("fold sizes: {:?}", plan.fold_sizes());
    let split = plan.split(0, 0.1)?;
    println!(
        "fold 0: {} train, {} validation, {} test trajectories",
        split.train.len(),
        split.val.len(),
        split.test.len()
    );

    let all = seatrack::windowing::segment_all(refs.iter().copied(), 12, 12, &st, 2)?;
    let set = SampleSet {
        ell: 12,
        h: 12,
        patterns: 2,
        standardizer: st,
        samples: all,
    };
    let mut bytes = Vec::new();
    set.write_to(&mut bytes)
        .map_err(|e| seatrack::Error::InvalidInput(e.to_string()))?;
    let back = SampleSet::read_from(bytes.as_slice())?;
    println!("{} windows serialized to {} bytes and read back ({} windows)", set.samples.len(), bytes.len(), back.samples.len());
    Ok(())
}
