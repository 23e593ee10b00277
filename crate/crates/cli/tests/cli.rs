use std::path::Path;
use std::process::{Command, Output};

fn reenact(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reenact"))
        .args(args)
        .env("RUST_BACKTRACE", "0")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(out.status.success(), "{text}\n{}", String::from_utf8_lossy(&out.stderr));
    text
}

#[test]
fn demo_run_render_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let demo = tmp.path().join("demo");
    let d = demo.to_str().unwrap();
    ok(&reenact(&["demo", d, "--frames", "6"]));
    let cfg = demo.join("session.json");
    let cfg = cfg.to_str().unwrap();

    let run = ok(&reenact(&["--config", cfg, "--log-level", "warn", "run"]));
    assert!(run.contains("6 frames"), "{run}");
    assert!(demo.join("session/frames/video.y4m").exists());

    let video = demo.join("edit.y4m");
    let frames = demo.join("edit");
    ok(&reenact(&[
        "--config",
        cfg,
        "render",
        "--alpha",
        "-0.5",
        "--zeta",
        "0.25",
        "--out",
        video.to_str().unwrap(),
        "--frames-dir",
        frames.to_str().unwrap(),
    ]));
    let bytes = std::fs::read(&video).unwrap();
    assert_eq!(bytes.windows(6).filter(|w| w == b"FRAME\n").count(), 6);
    assert!(frames.join("00005.png").exists());

    let report = demo.join("report.json");
    let eval = ok(&reenact(&["--config", cfg, "eval", "--metric", "id", "--report", report.to_str().unwrap()]));
    assert!(eval.contains("baseline reverse"), "{eval}");
    let parsed: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(parsed["frame_count"], 6);

    let catalog = demo.join("channels.json");
    ok(&reenact(&["--config", cfg, "mine-channels", "--out", catalog.to_str().unwrap()]));
    assert!(catalog.exists());
    let traj = demo.join("pose.v2t");
    ok(&reenact(&["--config", cfg, "pose-match", "--out", traj.to_str().unwrap()]));
    assert_eq!(&std::fs::read(&traj).unwrap()[..8], b"V2SGTRJ1");
}

#[test]
fn errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(!reenact(&["run"]).status.success());
    assert!(!reenact(&["--config", "/nonexistent/session.json", "run"]).status.success());
    let demo = tmp.path().join("demo");
    ok(&reenact(&["demo", demo.to_str().unwrap(), "--frames", "4"]));
    let cfg = demo.join("session.json");
    let bad = reenact(&["--config", cfg.to_str().unwrap(), "render", "--zeta", "2"]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("zeta"));
    assert!(!Path::new(&demo.join("session/render.y4m")).exists());
    let co = reenact(&["--config", cfg.to_str().unwrap(), "render", "--rigid-source", "codriving"]);
    assert!(!co.status.success());
}
