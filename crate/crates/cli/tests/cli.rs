use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use docrectify::image::Image;
use docrectify::io::{load_image, save_image};
use docrectify::model::{Model, ModelConfig};
use docrectify::train::save_model;

fn docrectify(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_docrectify"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = docrectify(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str]) -> i32 {
    docrectify(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn ld_column(csv: &Path) -> Vec<f64> {
    let text = std::fs::read_to_string(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("name,ssim,ms_ssim,ld"));
    lines.map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect()
}

#[test]
fn synth_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        ok(&["synth", "--out", s(d), "--count", "4", "--size", "64", "--seed", "7"]);
    }
    let (ca, cb) = (dir_contents(&a), dir_contents(&b));
    assert_eq!(ca.len(), 4 * 4 + 1);
    assert!(ca.contains_key("manifest.json") && ca.contains_key("000003.dgrid"));
    assert!(ca == cb);
}

#[test]
fn identity_grid_returns_the_input() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("page.ppm");
    let data = (0..37 * 29 * 3).map(|i| (i * 37 % 256) as f32 / 255.0).collect();
    let img = Image::new(37, 29, 3, data).unwrap();
    save_image(&img, &input).unwrap();
    let out = tmp.path().join("out.ppm");
    let grid = tmp.path().join("out.dgrid");
    ok(&["dewarp", "--identity-grid", "--no-postproc", "--in", s(&input), "--out", s(&out), "--grid-out", s(&grid)]);
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&input).unwrap());
    assert!(grid.exists());
}

#[test]
fn strict_postproc_budget_writes_the_input() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("page.pgm");
    let img = Image::gray_from_fn(40, 30, |r, c| 0.5 + ((r * 7919 + c * 104_729) % 13) as f32 / 255.0);
    save_image(&img, &input).unwrap();
    let out = tmp.path().join("out.pgm");
    ok(&["postproc", "--in", s(&input), "--out", s(&out), "--rho", "1.0"]);
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&input).unwrap());
}

#[test]
fn short_training_and_resume_write_logs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["synth", "--out", s(&data), "--count", "3", "--size", "32", "--seed", "1"]);
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "[model]\ninput_size = 32\nbase_width = 8\n\n[train]\nbatch_size = 2\n").unwrap();
    let ckpt = tmp.path().join("model.rnv2");
    ok(&["train", "--data", s(&data), "--out", s(&ckpt), "--steps", "2", "--config", s(&cfg)]);
    let log = std::fs::read_to_string(tmp.path().join("model.rnv2.loss.csv")).unwrap();
    let rows: Vec<&str> = log.lines().collect();
    assert_eq!(rows[0], "step,grid_loss,edge_loss,total");
    assert_eq!(rows.len(), 3);
    assert!(rows[2].starts_with("2,"));

    let resumed = tmp.path().join("resumed.rnv2");
    let log2 = tmp.path().join("resumed.csv");
    ok(&[
        "train", "--data", s(&data), "--out", s(&resumed), "--resume", s(&ckpt), "--steps", "3", "--log", s(&log2),
        "--config", s(&cfg),
    ]);
    let rows2 = std::fs::read_to_string(&log2).unwrap();
    assert_eq!(rows2.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect::<Vec<_>>(), ["3"]);

    let out = tmp.path().join("out.ppm");
    let input = data.join("000000.warped.ppm");
    ok(&["dewarp", "--model", s(&resumed), "--in", s(&input), "--out", s(&out)]);
    let img = load_image(&out).unwrap();
    assert_eq!((img.width(), img.height()), (32, 32));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x.ppm");
    assert_eq!(code(&["dewarp", "--bogus"]), 1);
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["dewarp", "--identity-grid", "--in", "/nonexistent/in.ppm", "--out", s(&out)]), 2);

    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[postproc]\nrh0 = 0.5\n").unwrap();
    let o = docrectify(&["synth", "--out", s(&tmp.path().join("d")), "--config", s(&bad)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("rh0"));
    std::fs::write(&bad, "[postproc]\nrho = 0.0\n").unwrap();
    assert_eq!(code(&["synth", "--out", s(&tmp.path().join("d")), "--config", s(&bad)]), 3);

    let pairs = tmp.path().join("pairs.json");
    std::fs::write(&pairs, "[]").unwrap();
    assert_eq!(code(&["eval", "--pairs", s(&pairs), "--out", s(&tmp.path().join("r.csv"))]), 3);

    let mut model = Model::<f32>::new(ModelConfig { input_size: 32, base_width: 8 }, 0).unwrap();
    let last = model.params.len() - 1;
    model.params.values_mut(last).fill(f32::NAN);
    let broken = tmp.path().join("nan.rnv2");
    save_model(&model, &broken).unwrap();
    let input = tmp.path().join("in.ppm");
    save_image(&Image::filled(32, 32, &[0.5, 0.5, 0.5]), &input).unwrap();
    assert_eq!(code(&["dewarp", "--model", s(&broken), "--in", s(&input), "--out", s(&out)]), 4);
    assert!(!out.exists());
}

#[test]
fn eval_reports_and_records_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let scan = Image::gray_from_fn(200, 190, |r, c| 0.5 + 0.3 * ((r as f32) * 0.3).sin() * ((c as f32) * 0.2).cos());
    save_image(&scan, &tmp.path().join("scan.pgm")).unwrap();
    std::fs::write(
        tmp.path().join("pairs.json"),
        r#"[{"name": "same", "rectified": "scan.pgm", "scan": "scan.pgm"},
            {"name": "gone", "rectified": "missing.pgm", "scan": "scan.pgm"}]"#,
    )
    .unwrap();
    let csv = tmp.path().join("report.csv");
    let json = tmp.path().join("report.json");
    let o = ok(&["eval", "--pairs", s(&tmp.path().join("pairs.json")), "--out", s(&csv), "--json", s(&json)]);
    assert!(!o.stdout.is_empty());
    assert_eq!(ld_column(&csv).len(), 1);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&json).unwrap()).unwrap();
    assert_eq!(report["failures"][0]["name"], "gone");
}

/// synth, train at desk scale, rectify 32 held-out pages and score them
/// against the identity map. Takes several minutes on one core.
#[test]
fn full_smoke() {
    const HELD_OUT: usize = 32;
    let tmp = tempfile::tempdir().unwrap();
    let p = |n: &str| -> PathBuf { tmp.path().join(n) };
    std::fs::write(
        p("desk.toml"),
        "[model]\ninput_size = 64\nbase_width = 8\n\n[train]\nsteps = 500\nlr = 0.001\nbatch_size = 4\n",
    )
    .unwrap();
    let held = HELD_OUT.to_string();
    ok(&["synth", "--out", s(&p("train")), "--count", "256", "--size", "64", "--seed", "7", "--config", s(&p("desk.toml"))]);
    ok(&["synth", "--out", s(&p("held")), "--count", &held, "--size", "64", "--seed", "12345"]);
    ok(&["train", "--data", s(&p("train")), "--out", s(&p("model.rnv2")), "--config", s(&p("desk.toml"))]);

    let mut pairs = vec![];
    for i in 0..HELD_OUT {
        let warped = p("held").join(format!("{i:06}.warped.ppm"));
        let (model_out, identity_out) = (p(&format!("model{i}.ppm")), p(&format!("identity{i}.ppm")));
        ok(&["dewarp", "--model", s(&p("model.rnv2")), "--in", s(&warped), "--out", s(&model_out), "--config", s(&p("desk.toml"))]);
        ok(&["dewarp", "--identity-grid", "--in", s(&warped), "--out", s(&identity_out)]);
        let flat = format!("held/{i:06}.flat.ppm");
        pairs.push(serde_json::json!({"name": format!("model{i}"), "rectified": format!("model{i}.ppm"), "scan": flat}));
        pairs.push(serde_json::json!({"name": format!("identity{i}"), "rectified": format!("identity{i}.ppm"), "scan": flat}));
    }
    std::fs::write(p("pairs.json"), serde_json::to_vec(&pairs).unwrap()).unwrap();
    ok(&["eval", "--pairs", s(&p("pairs.json")), "--out", s(&p("report.csv"))]);
    let ld = ld_column(&p("report.csv"));
    assert_eq!(ld.len(), 2 * HELD_OUT);
    let mean = |parity: usize| ld.iter().skip(parity).step_by(2).sum::<f64>() / HELD_OUT as f64;
    let (model, identity) = (mean(0), mean(1));
    eprintln!("mean LD over {HELD_OUT} held-out pages: model {model:.3}, identity {identity:.3}");
    assert!(model < identity, "model {model} identity {identity}");
}
