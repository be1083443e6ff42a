use std::path::Path;
use std::process::{Command, Output};

use orient3d::io;
use orient3d::lieops::{self, DiffusionParams, EnhanceParams, Threshold};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orient3d"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn prepare(dir: &Path) {
    ok(dir, &["phantom", "--out", "clean.vol", "--grid", "16"]);
    ok(
        dir,
        &[
            "noise",
            "--in",
            "clean.vol",
            "--out",
            "noisy.vol",
            "--sigma-rel",
            "0.3",
            "--seed",
            "1",
        ],
    );
    ok(
        dir,
        &[
            "make-wavelets",
            "--out",
            "w.stk",
            "--grid",
            "16",
            "--order",
            "1",
        ],
    );
}

#[test]
fn file_pipeline_matches_in_process_enhance() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepare(dir);
    ok(
        dir,
        &[
            "transform",
            "--in",
            "noisy.vol",
            "--stack",
            "w.stk",
            "--out",
            "u.scr",
        ],
    );
    ok(
        dir,
        &[
            "diffuse", "--in", "u.scr", "--out", "d.scr", "--t", "3", "--p", "1.5",
        ],
    );
    ok(
        dir,
        &[
            "reconstruct",
            "--in",
            "d.scr",
            "--stack",
            "w.stk",
            "--out",
            "r.vol",
        ],
    );
    let (piped, _) = io::read_volume(&dir.join("r.vol")).unwrap();

    let (noisy, _) = io::read_volume(&dir.join("noisy.vol")).unwrap();
    let (stack, _) = io::read_stack(&dir.join("w.stk")).unwrap();
    let params = EnhanceParams {
        diffusion: DiffusionParams {
            t_end: 3.0,
            ..DiffusionParams::default()
        },
        threshold: Some(Threshold::default()),
        ..EnhanceParams::default()
    };
    let direct = lieops::enhance(&noisy, &stack, &params).unwrap();
    let scale = direct.max_abs();
    for (a, b) in piped.data.iter().zip(&direct.data) {
        assert!((a - b).abs() <= 1e-12 * scale);
    }

    ok(
        dir,
        &[
            "enhance",
            "--in",
            "noisy.vol",
            "--stack",
            "w.stk",
            "--out",
            "e.vol",
            "--t",
            "3",
        ],
    );
    let (cli, _) = io::read_volume(&dir.join("e.vol")).unwrap();
    assert_eq!(cli, direct);
}

#[test]
fn header_records_manifest_without_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepare(dir);
    let (_, header) = io::read_volume(&dir.join("noisy.vol")).unwrap();
    assert_eq!(header.manifest.command, "noise");
    assert_eq!(header.manifest.seed, Some(1));
    assert_eq!(header.manifest.params["sigma_rel"], 0.3);
    assert!(header.manifest.params.get("out").is_none());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepare(dir);
    assert_eq!(run(dir, &["transform", "--bogus"]).status.code(), Some(2));
    std::fs::write(dir.join("junk.vol"), b"NOTAVOLUME-------------").unwrap();
    let out = run(dir, &["slice", "--in", "junk.vol", "--out", "s.pgm"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad magic"));
    let strict = run(
        dir,
        &[
            "reconstruct",
            "--in",
            "missing.scr",
            "--out",
            "x.vol",
            "--stack",
            "w.stk",
        ],
    );
    assert_eq!(strict.status.code(), Some(3));
    ok(
        dir,
        &[
            "transform",
            "--in",
            "noisy.vol",
            "--stack",
            "w.stk",
            "--out",
            "u.scr",
        ],
    );
    let refused = run(
        dir,
        &[
            "reconstruct",
            "--in",
            "u.scr",
            "--stack",
            "w.stk",
            "--out",
            "x.vol",
            "--strict",
            "--eps",
            "10",
        ],
    );
    assert_eq!(refused.status.code(), Some(4));
    assert!(!dir.join("x.vol").exists());
    let bad_eps = run(
        dir,
        &[
            "reconstruct",
            "--in",
            "u.scr",
            "--stack",
            "w.stk",
            "--out",
            "x.vol",
            "--eps",
            "0",
        ],
    );
    assert_eq!(bad_eps.status.code(), Some(2));
}

#[test]
fn config_file_supplies_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepare(dir);
    std::fs::write(dir.join("run.toml"), "seed = 9\n[noise]\nsigma = 0.25\n").unwrap();
    ok(
        dir,
        &[
            "noise",
            "--config",
            "run.toml",
            "--in",
            "clean.vol",
            "--out",
            "a.vol",
        ],
    );
    ok(
        dir,
        &[
            "noise",
            "--in",
            "clean.vol",
            "--out",
            "b.vol",
            "--sigma",
            "0.25",
            "--seed",
            "9",
        ],
    );
    assert_eq!(
        io::read_volume(&dir.join("a.vol")).unwrap().0,
        io::read_volume(&dir.join("b.vol")).unwrap().0
    );
    ok(
        dir,
        &[
            "noise",
            "--config",
            "run.toml",
            "--in",
            "clean.vol",
            "--out",
            "c.vol",
            "--seed",
            "2",
        ],
    );
    assert_eq!(
        io::read_volume(&dir.join("c.vol")).unwrap().1.manifest.seed,
        Some(2)
    );
    // A top-level key is ignored by subcommands without that flag.
    ok(
        dir,
        &[
            "slice",
            "--config",
            "run.toml",
            "--in",
            "clean.vol",
            "--out",
            "c.pgm",
        ],
    );
}

#[test]
fn exports() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["phantom", "--out", "clean.vol", "--grid", "16"]);
    ok(
        dir,
        &[
            "make-wavelets",
            "--out",
            "w.stk",
            "--grid",
            "12",
            "--order",
            "0",
            "--dump-spectra",
            "s.csv",
            "--dump-orientations",
            "o.csv",
            "--slices",
            "k",
            "--patch",
            "7",
        ],
    );
    let spectra = std::fs::read_to_string(dir.join("s.csv")).unwrap();
    assert!(spectra.starts_with("l,window,even,odd\n"));
    assert_eq!(spectra.lines().count(), 18);
    assert_eq!(
        std::fs::read_to_string(dir.join("o.csv"))
            .unwrap()
            .lines()
            .count(),
        13
    );
    assert!(
        dir.join("k/kernel0_real_z.pgm").exists() && dir.join("k/kernel0_real_z.pgm.json").exists()
    );
    ok(
        dir,
        &[
            "slice",
            "--in",
            "clean.vol",
            "--out",
            "c.pgm",
            "--axis",
            "x",
            "--index",
            "3",
        ],
    );
    assert!(std::fs::read(dir.join("c.pgm"))
        .unwrap()
        .starts_with(b"P5\n16 16\n255\n"));
    let m = run(dir, &["metrics", "--a", "clean.vol", "--b", "clean.vol"]);
    assert!(String::from_utf8_lossy(&m.stdout).contains("psnr_db=200"));
    let report = run(dir, &["mpsi-report", "--stack", "w.stk", "--shells", "4"]);
    assert_eq!(String::from_utf8_lossy(&report.stdout).lines().count(), 6);
}
