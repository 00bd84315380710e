//! Drives the installed binary end to end through every subcommand on a
//! miniature dataset.

use std::path::Path;
use std::process::Command;

fn lsfa(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_lsfa"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = lsfa(args);
    assert!(
        out.status.success(),
        "lsfa {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn subcommands_compose() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_owned();

    let data = p("data");
    ok(&[
        "gen", "--out-dir", &data, "--seed", "5", "--clips", "2", "--frames", "8", "--height",
        "64", "--width", "64", "--gop-length", "4",
    ]);
    assert!(Path::new(&data).join("clip_0000.lsfa").exists());
    assert!(Path::new(&data).join("clip_0001.gt.txt").exists());

    // Same seed, same bytes on disk.
    let data2 = p("data2");
    ok(&[
        "gen", "--out-dir", &data2, "--seed", "5", "--clips", "2", "--frames", "8", "--height",
        "64", "--width", "64", "--gop-length", "4",
    ]);
    assert_eq!(
        std::fs::read(Path::new(&data).join("clip_0000.lsfa")).unwrap(),
        std::fs::read(Path::new(&data2).join("clip_0000.lsfa")).unwrap()
    );

    let weights = p("w.lsfw");
    let train_args = [
        "train", "--data-dir", &data, "--out", &weights, "--seed", "3", "--gop-length", "4",
        "--steps", "4", "--batch-size", "1",
    ];
    ok(&train_args);
    let first = std::fs::read(&weights).unwrap();
    ok(&train_args);
    assert_eq!(first, std::fs::read(&weights).unwrap(), "training is not seed-stable");

    let stream = Path::new(&data).join("clip_0000.lsfa");
    let stream = stream.to_str().unwrap();
    let dets = p("dets.txt");
    let timing = p("timing.toml");
    let detect_args = [
        "detect", "--stream", stream, "--weights", &weights, "--out", &dets, "--timing-out",
        &timing, "--gop-length", "4",
    ];
    ok(&detect_args);
    let det_bytes = std::fs::read(&dets).unwrap();
    ok(&detect_args);
    assert_eq!(det_bytes, std::fs::read(&dets).unwrap(), "detection is not stable");
    let timing_text = std::fs::read_to_string(&timing).unwrap();
    assert!(timing_text.contains("gop_length = 4"));

    let gt = Path::new(&data).join("clip_0000.gt.txt");
    let report = ok(&[
        "eval", "--dets", &dets, "--gt", gt.to_str().unwrap(), "--speed-window", "3",
    ]);
    assert!(report.contains("map = "), "eval output missing scores:\n{report}");
    assert!(report.contains("map_slow = "));

    // Config file values flow through; the command-line overrides them.
    let cfg_path = p("cfg.toml");
    std::fs::write(&cfg_path, "gop_length = 4\n[train]\nsteps = 4\n").unwrap();
    ok(&[
        "detect", "--config", &cfg_path, "--stream", stream, "--weights", &weights, "--out",
        &p("dets_cfg.txt"),
    ]);

    let prof = ok(&[
        "profile", "--stream", stream, "--weights", &weights, "--sweep", "2,4", "--repeats", "1",
    ]);
    assert!(prof.contains("t_key_ms") && prof.contains("fps"), "profile table:\n{prof}");
    let rows: Vec<&str> = prof
        .lines()
        .filter(|l| {
            let mut it = l.split_whitespace();
            matches!(it.next(), Some("2") | Some("4"))
        })
        .collect();
    assert_eq!(rows.len(), 2, "profile table:\n{prof}");

    let viz_dir = p("viz");
    ok(&[
        "viz", "--stream", stream, "--weights", &weights, "--frame", "1", "--channels", "0,3",
        "--out-dir", &viz_dir, "--gop-length", "4",
    ]);
    assert!(Path::new(&viz_dir).join("feature_c000.png").exists());
    assert!(Path::new(&viz_dir).join("feature_c003.png").exists());

    // Round-trip raw frames through the png encoder path.
    let frames_dir = p("frames");
    std::fs::create_dir_all(&frames_dir).unwrap();
    for t in 0..4u8 {
        let img = image::RgbImage::from_fn(32, 32, |x, y| {
            image::Rgb([x as u8 * 8, y as u8 * 8, t * 40])
        });
        img.save(Path::new(&frames_dir).join(format!("f{t:03}.png"))).unwrap();
    }
    let encoded = p("frames.lsfa");
    ok(&[
        "encode", "--frames-dir", &frames_dir, "--out", &encoded, "--gop-length", "4",
    ]);
    ok(&[
        "detect", "--stream", &encoded, "--weights", &weights, "--out", &p("dets_png.txt"),
        "--gop-length", "4",
    ]);

    let table = ok(&[
        "ablate", "--train-dir", &data, "--val-dir", &data, "--gop-length", "4", "--steps", "2",
        "--batch-size", "1",
    ]);
    for name in ["frame_baseline", "propagation_only", "with_residual", "with_tiny", "full"] {
        assert!(table.contains(name), "ablation table missing {name}:\n{table}");
    }
}

#[test]
fn seeds_are_mandatory() {
    let out = lsfa(&["gen", "--out-dir", "/tmp/nowhere"]);
    assert!(!out.status.success(), "gen must demand a seed");
    let out = lsfa(&["train", "--data-dir", "/tmp/nowhere", "--out", "/tmp/w.lsfw"]);
    assert!(!out.status.success(), "train must demand a seed");
}

#[test]
fn flag_overrides_reject_bad_values() {
    let out = lsfa(&[
        "detect", "--stream", "x.lsfa", "--weights", "w.lsfw", "--out", "d.txt",
        "--score-thresh", "1.5",
    ]);
    assert!(!out.status.success());
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("score_thresh") || msg.contains("config"), "stderr: {msg}");
}
