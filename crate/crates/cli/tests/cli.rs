use std::path::Path;
use std::process::{Command, Output};

fn splatbridge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splatbridge"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn splatbridge")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: &[&str] = &[
    "--set",
    "synthetic.frames=16",
    "--set",
    "mapper.map_iters=10",
    "--set",
    "bridge.iterations=2",
];

fn with_small<'a>(head: &[&'a str], tail: &[&'a str]) -> Vec<&'a str> {
    head.iter().chain(SMALL).chain(tail).copied().collect()
}

#[test]
fn run_then_render_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = splatbridge(&with_small(&["--output", out], &["run"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = stdout(&o);
    assert!(report.contains("ate_rmse_cm = "), "{report}");
    assert!(report.contains("fps = "));
    for f in ["trajectory.txt", "metrics.txt", "frames.csv", "map.ckpt", "config.txt", "viewpoints.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }

    let ckpt = dir.path().join("map.ckpt");
    let traj = dir.path().join("trajectory.txt");
    let png = dir.path().join("frame3.png");
    let o = splatbridge(&with_small(
        &["--output", out],
        &[
            "render",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--trajectory",
            traj.to_str().unwrap(),
            "--frame",
            "3",
            "--out",
            png.to_str().unwrap(),
        ],
    ));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let bytes = std::fs::read(&png).unwrap();
    assert_eq!(&bytes[..8], b"\x89PNG\r\n\x1a\n");
    let dim = |at: usize| u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap());
    assert_eq!((dim(16), dim(20)), (64, 64));

    let o = splatbridge(&with_small(
        &[],
        &["eval", "--checkpoint", ckpt.to_str().unwrap(), "--trajectory", traj.to_str().unwrap()],
    ));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let eval = stdout(&o);
    let ate = |s: &str| s.lines().find(|l| l.starts_with("ate_rmse_cm")).map(str::to_owned);
    assert_eq!(ate(&eval), ate(&report));
}

#[test]
fn config_file_is_reusable() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let o = splatbridge(&with_small(&["--output", a.to_str().unwrap()], &["run"]));
    assert!(o.status.success());
    let b = dir.path().join("b");
    let cfg = a.join("config.txt");
    let o = splatbridge(&["--config", cfg.to_str().unwrap(), "--output", b.to_str().unwrap(), "run"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let read = |d: &Path| std::fs::read(d.join("trajectory.txt")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn synthetic_sequence_runs_through_tum_loader() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    let size = [
        "--set",
        "synthetic.width=96",
        "--set",
        "synthetic.height=72",
        "--set",
        "synthetic.fx=90",
        "--set",
        "synthetic.fy=90",
        "--set",
        "synthetic.cx=47.5",
        "--set",
        "synthetic.cy=35.5",
        "--set",
        "synthetic.frames=10",
        "--set",
        "synthetic.line_length=0.5",
    ];
    let mut args: Vec<&str> = vec!["--output", seq.to_str().unwrap()];
    args.extend(size);
    args.push("synth");
    let o = splatbridge(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["rgb.txt", "depth.txt", "groundtruth.txt"] {
        assert!(seq.join(f).is_file(), "{f}");
    }

    let out = dir.path().join("out");
    let o = splatbridge(&[
        "--dataset",
        seq.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
        "--set",
        "tum.downsample=1",
        "--set",
        "tum.intrinsics=90,90,47.5,35.5,96,72",
        "--set",
        "bridge.beta=5",
        "--set",
        "mapper.map_iters=5",
        "--set",
        "bridge.iterations=2",
        "run",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = stdout(&o);
    assert!(report.contains("frames = 10"), "{report}");
    assert!(!report.contains("ate_rmse_cm = absent"), "{report}");
}

#[test]
fn sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = splatbridge(&with_small(&["--output", out], &["sweep", "--t", "1,2", "--alpha", "0.75"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv, stdout(&o));
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",ok")), "{csv}");
}

#[test]
fn errors_carry_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    let o = splatbridge(&["--dataset", missing.to_str().unwrap(), "--output", dir.path().to_str().unwrap(), "run"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("error code=missing-index-file"), "{err}");

    let o = splatbridge(&["--set", "bridge.alpha=2", "run"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error code=config"));

    let o = splatbridge(&["--set", "no.such.key=1", "run"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error code=config"));
}
