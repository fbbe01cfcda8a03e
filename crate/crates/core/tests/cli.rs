use std::path::{Path, PathBuf};
use std::process::Command;

use seatrack::ais::load_trajectories;
use seatrack::cli::run;

fn argv(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn run_ok(s: &str) -> String {
    let mut out = Vec::new();
    if let Err(e) = run(&argv(s), &mut out) {
        panic!("`{s}` failed: {e}");
    }
    String::from_utf8(out).unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_seatrack"))
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

fn stamp(sec: i64) -> String {
    chrono::DateTime::from_timestamp(sec, 0)
        .unwrap()
        .format("%d/%m/%Y %H:%M:%S")
        .to_string()
}

/// Three vessels over two hours: one runs O to A (north), one O to B
/// (east), one passes far from every polygon.
fn write_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let mut csv = String::from("# Timestamp,Type of mobile,MMSI,Latitude,Longitude,Ship type\n");
    let t0 = 1_709_251_200;
    for i in 0..=24 {
        let t = t0 + 300 * i;
        let f = i as f64 / 24.0;
        let rows = [
            (211000001u64, 55.0 + 0.5 * f, 10.0),
            (211000002, 55.0, 10.0 + 0.8 * f),
            (211000003, 56.0, 11.0 + 0.5 * f),
        ];
        for (mmsi, lat, lon) in rows {
            csv.push_str(&format!("{},Class A,{mmsi},{lat:.6},{lon:.6},Cargo\n", stamp(t)));
        }
    }
    let polys = "O\n54.9 9.9\n54.9 10.1\n55.1 10.1\n55.1 9.9\n\n\
                 A\n55.35 9.9\n55.35 10.1\n55.6 10.1\n55.6 9.9\n\n\
                 B\n54.9 10.6\n54.9 10.9\n55.1 10.9\n55.1 10.6\n";
    let c = dir.join("fixture.csv");
    let g = dir.join("polygons.txt");
    std::fs::write(&c, csv).unwrap();
    std::fs::write(&g, polys).unwrap();
    (c, g)
}

#[test]
fn prepare_fixture_yields_two_labeled_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (csv, polys) = write_fixture(d);
    let out = run_ok(&format!(
        "prepare --input {} --polygons {} --out {}",
        csv.display(),
        polys.display(),
        p(d, "prep")
    ));
    assert!(out.contains("pattern (O,A): 1"), "{out}");
    assert!(out.contains("pattern (O,B): 1"), "{out}");
    assert!(out.contains("unmatched: 1"), "{out}");
    let trajs = load_trajectories(&d.join("prep/trajectories.txt")).unwrap();
    assert_eq!(trajs.len(), 2);
    let mut labels: Vec<(u64, Option<usize>)> = trajs.iter().map(|t| (t.mmsi, t.label)).collect();
    labels.sort();
    assert_eq!(labels, vec![(211000001, Some(0)), (211000002, Some(1))]);
    for t in &trajs {
        assert_eq!(t.states.len(), 9, "two hours at 15 min");
    }
    assert!(d.join("prep/manifest.txt").exists());
}

#[test]
fn empty_csv_succeeds_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("empty.csv"), "").unwrap();
    let o = bin()
        .args(argv(&format!("prepare --input {} --out {}", p(d, "empty.csv"), p(d, "prep"))))
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    assert!(load_trajectories(&d.join("prep/trajectories.txt")).unwrap().is_empty());
}

#[test]
fn malformed_polygons_exit_nonzero_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (csv, _) = write_fixture(d);
    std::fs::write(d.join("bad.txt"), "O\n54.9 9.9\nnot a vertex\n").unwrap();
    let o = bin()
        .args(argv(&format!(
            "prepare --input {} --polygons {} --out {}",
            csv.display(),
            p(d, "bad.txt"),
            p(d, "prep")
        )))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "{err}");
    assert!(lines[0].starts_with("error kind=parse msg="), "{err}");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = bin().args(["train", "--epoch", "3"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error kind=usage"));
}

#[test]
fn labeled_model_on_unlabeled_data_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run_ok(&format!("synth --per-route 3 --out {}", p(d, "syn")));
    run_ok(&format!("prepare --input {} --out {}", p(d, "syn/ais.csv"), p(d, "prep")));
    let mut sink = Vec::new();
    let e = run(
        &argv(&format!(
            "train --input {} --model linear --labeled --out {}",
            p(d, "prep/trajectories.txt"),
            p(d, "tr")
        )),
        &mut sink,
    )
    .unwrap_err();
    assert_eq!(e.kind(), "config_mismatch");
    assert!(!d.join("tr").exists());
}

/// synth, prepare, a short MLP training run, predict; then replay the
/// training manifest and compare every output byte.
#[test]
fn predict_rows_and_bitwise_replay() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run_ok(&format!("synth --per-route 6 --seed 2 --out {}", p(d, "syn")));
    run_ok(&format!(
        "prepare --input {} --polygons {} --out {}",
        p(d, "syn/ais.csv"),
        p(d, "syn/polygons.txt"),
        p(d, "prep")
    ));
    run_ok(&format!(
        "train --input {} --model mlp --labeled --hidden 16 --epochs 4 --batch 16 --lr 1e-3 \
         --patience 2 --out {}",
        p(d, "prep/trajectories.txt"),
        p(d, "tr")
    ));

    let trajs = load_trajectories(&d.join("prep/trajectories.txt")).unwrap();
    let t = &trajs[0];
    let rows: String = t.states[..12]
        .iter()
        .map(|s| format!("{} {}\n", s.lat, s.lon))
        .collect();
    std::fs::write(d.join("seq.txt"), rows).unwrap();
    let label = t.label.unwrap();
    let out = run_ok(&format!(
        "predict --checkpoint {} --input {} --label {label} --out {}",
        p(d, "tr/model.ckpt"),
        p(d, "seq.txt"),
        p(d, "pred")
    ));
    assert_eq!(out.lines().count(), 12);
    let file = std::fs::read_to_string(d.join("pred/predictions.txt")).unwrap();
    assert_eq!(file, out);
    for line in file.lines() {
        let v: Vec<f64> = line.split(' ').map(|x| x.parse().unwrap()).collect();
        assert_eq!(v.len(), 2);
        assert!((54.0..57.0).contains(&v[0]) && (9.0..13.0).contains(&v[1]), "{line}");
    }

    run_ok(&format!("replay --manifest {} --out {}", p(d, "tr/manifest.txt"), p(d, "tr2")));
    for f in ["model.ckpt", "train_report.txt"] {
        assert_eq!(
            std::fs::read(d.join("tr").join(f)).unwrap(),
            std::fs::read(d.join("tr2").join(f)).unwrap(),
            "{f}"
        );
    }
    let m1 = std::fs::read_to_string(d.join("tr/manifest.txt")).unwrap();
    let m2 = std::fs::read_to_string(d.join("tr2/manifest.txt")).unwrap();
    assert_eq!(m1.replace(&p(d, "tr"), ""), m2.replace(&p(d, "tr2"), ""));

    std::fs::write(d.join("prep/trajectories.txt"), "# tampered\n").unwrap();
    let mut sink = Vec::new();
    let e = run(
        &argv(&format!("replay --manifest {} --out {}", p(d, "tr/manifest.txt"), p(d, "tr3"))),
        &mut sink,
    )
    .unwrap_err();
    assert_eq!(e.kind(), "config_mismatch");
}

#[test]
fn crossval_k2_lists_every_requested_model() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run_ok(&format!("synth --per-route 5 --seed 4 --out {}", p(d, "syn")));
    run_ok(&format!(
        "prepare --input {} --polygons {} --out {}",
        p(d, "syn/ais.csv"),
        p(d, "syn/polygons.txt"),
        p(d, "prep")
    ));
    let table = run_ok(&format!(
        "crossval --input {} --folds 2 --model linear,mlp,encdec --agg max,attn --labeled \
         --q 4 --hidden 8 --epochs 2 --batch 32 --lr 1e-3 --patience 1 --out {}",
        p(d, "prep/trajectories.txt"),
        p(d, "cv")
    ));
    for name in ["Linear", "MLP", "EncDec-MAX", "EncDec-ATTN"] {
        assert!(table.contains(name), "{name} missing from\n{table}");
    }
    for f in ["report.txt", "report.kv", "cdf.dat", "mae_vs_distance.dat", "runs.txt", "manifest.txt"] {
        assert!(d.join("cv").join(f).exists(), "{f}");
    }
    let runs = std::fs::read_to_string(d.join("cv/runs.txt")).unwrap();
    assert_eq!(runs.lines().count(), 8 * 2);
}
