//! Raw AIS reports to labeled trajectories: write a DMA-style CSV, parse it
//! back, split tracks on gaps, label them by origin/destination polygons and
//! resample onto a 15-minute grid.
//!
//!     cargo run --release --example ais_pipeline

use seatrack::ais::{self, parse_records, PatternSpec, SchemaConfig};
use seatrack::synth::{generate, write_dma_csv, SynthConfig};

fn main() -> seatrack::Result<()> {
    let ds = generate(&SynthConfig {
        per_route: 20,
        ..Default::default()
    })?;
    let mut csv = Vec::new();
    write_dma_csv(&mut csv, &ds.records)?;
    let text = String::from_utf8_lossy(&csv);
    println!("CSV head:");
    for line in text.lines().take(3) {
        println!("  {line}");
    }

    let parsed = parse_records(csv.as_slice(), &SchemaConfig::default())?;
    println!("{} reports parsed, {} rows dropped", parsed.records.len(), parsed.dropped);

    // the polygon file format: a name line, then `lat lon` vertex lines
    let poly_text = ds.patterns.to_text();
    let patterns = PatternSpec::parse(&poly_text, "polygons")?;
    println!("origin {} with {} vertices", patterns.origin.name, patterns.origin.vertices().len());

    let tracks = ais::assemble_trajectories(&parsed.records, ais::DEFAULT_GAP_SEC, Some("Cargo"));
    println!("{} cargo tracks after gap splitting", tracks.len());

    let (trajs, stats) = ais::prepare(
        &parsed.records,
        ais::DEFAULT_GAP_SEC,
        None,
        Some(&patterns),
        15.0 * 60.0,
    )?;
    for (j, n) in stats.per_pattern.iter().enumerate() {
        println!("pattern {}: {n} trajectories", patterns.pattern_name(j));
    }
    println!("{} tracks matched no pattern", stats.unmatched);
    let lens: Vec<usize> = trajs.iter().map(|t| t.len()).collect();
    println!(
        "resampled lengths: min {} max {}",
        lens.iter().min().unwrap_or(&0),
        lens.iter().max().unwrap_or(&0)
    );

    let mut out = Vec::new();
    ais::write_trajectories(&mut out, &trajs[..1]).map_err(|e| seatrack::Error::InvalidInput(e.to_string()))?;
    println!("canonical trajectory file, first rows:");
    for line in String::from_utf8_lossy(&out).lines().take(5) {
        println!("  {line}");
    }
    Ok(())
}
