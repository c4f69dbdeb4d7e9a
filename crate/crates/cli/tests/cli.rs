use std::path::Path;
use std::process::{Command, Output};

use mrf_core::io::{load_pgm, read_energy_csv, write_cost_volume};
use mrf_core::run::{build_potentials, RunConfig, Source};
use mrf_core::{energy, PairwiseKind, UnaryVolume};

fn mrf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrf")).args(args).output().expect("binary runs")
}

fn csv_rows(dir: &Path) -> Vec<mrf_core::io::EnergyRow> {
    read_energy_csv(std::fs::File::open(dir.join("energy.csv")).unwrap()).unwrap()
}

#[test]
fn trwp_report_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = mrf(&[
        "infer", "--method", "trwp", "--dirs", "4", "--iters", "50", "--pairwise", "tl", "--trunc", "2",
        "--max-disp", "6", "--height", "12", "--width", "14", "--out", out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("energy.csv")).unwrap();
    assert!(text.starts_with("iteration,energy,forward_ms\n"));
    let rows = csv_rows(dir.path());
    assert_eq!(rows.len(), 50);
    assert!(rows.iter().enumerate().all(|(k, r)| r.iteration == k + 1));
    assert!(rows.windows(2).all(|w| w[1].forward_ms >= w[0].forward_ms));
}

#[test]
fn csv_energy_matches_label_maps() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    for dirs in ["4", "8"] {
        let o = mrf(&[
            "infer", "--method", "isgmr", "--dirs", dirs, "--iters", "5", "--max-disp", "5", "--height", "10",
            "--width", "9", "--seed", "3", "--precision", "f64", "--out", out,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let cfg = RunConfig {
            connectivity: dirs.parse().unwrap(),
            max_disp: 5,
            seed: 3,
            pairwise: PairwiseKind::TruncatedLinear { tau: 2.0 },
            source: Source::Synthetic { height: 10, width: 9 },
            ..RunConfig::default()
        };
        let pot = build_potentials(&cfg).unwrap();
        let rows = csv_rows(dir.path());
        for (file, row) in [("labels_first.pgm", &rows[0]), ("labels_final.pgm", &rows[4])] {
            let img = load_pgm(dir.path().join(file)).unwrap();
            assert_eq!(img.maxval, 65535);
            let labels: Vec<u8> = img.data.iter().map(|&v| v as u8).collect();
            let e = energy(&pot, &labels, 4).unwrap();
            assert!((e - row.energy).abs() <= 1e-9 * e.abs().max(1.0), "{file}: {e} vs {}", row.energy);
        }
    }
}

#[test]
fn cost_volume_input() {
    let dir = tempfile::tempdir().unwrap();
    let vol_path = dir.path().join("u.mpcv");
    let data: Vec<f32> = (0..4 * 5 * 3).map(|v| ((v * 7) % 5) as f32).collect();
    write_cost_volume(&vol_path, &UnaryVolume::new(4, 5, 3, data).unwrap()).unwrap();
    let out = dir.path().join("res");
    let o = mrf(&[
        "infer", "--method", "sgm", "--unary-file", vol_path.to_str().unwrap(), "--pairwise", "potts", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let img = load_pgm(out.join("labels_final.pgm")).unwrap();
    assert_eq!((img.height, img.width), (4, 5));
    assert!(img.data.iter().all(|&v| v < 3));
}

#[test]
fn grad_check_succeeds() {
    let o = mrf(&["grad-check", "--engine", "isgmr"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{stdout}{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout.contains("max relative error"));
    assert!(mrf(&["grad-check", "--engine", "trwp"]).status.success());
}

#[test]
fn invalid_flags_fail() {
    assert!(!mrf(&["infer", "--method", "isgmr", "--dirs", "6"]).status.success());
    assert!(!mrf(&["infer", "--method", "sgm", "--iters", "3", "--out", "/nonexistent/x"]).status.success());
    assert!(!mrf(&["infer", "--method", "trwp", "--unary-file", "/nonexistent.mpcv"]).status.success());
    let o = mrf(&["infer", "--method", "trwp", "--left", "a.pgm"]);
    assert!(!o.status.success());
}
