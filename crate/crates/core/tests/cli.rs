use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use collab_motion::cli::TRIANGULATION_HEADER;
use collab_motion::data::{load_any, load_dataset, load_sequences, make_split, SplitKind};
use collab_motion::geometry::{format_camera, Camera, Vec3};
use collab_motion::metrics::{parse_report_csv, Metric, Role, HORIZONS_MS, REPORT_HEADER};
use collab_motion::model::{make_variant, CollabModel, ModelConfig};
use nalgebra::{Matrix3, Rotation3};

const SMALL: [&str; 10] = [
    "--set", "d_model=16", "--set", "gcn_hidden=16", "--set", "gcn_layers=2", "--set", "subsequences=3", "--set",
    "max_steps=3",
];

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_collab-motion")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = bin(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, count: usize) -> PathBuf {
    let data = dir.join("data");
    ok(&["synth", "--seed", "4", "--count", &count.to_string(), "--frames", "200", "--out", p(&data)]);
    data
}

fn small_config() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        gcn_hidden: 16,
        gcn_layers: 2,
        ..ModelConfig::default()
    }
}

#[test]
fn synth_writes_a_loadable_reproducible_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let a = synth(tmp.path(), 5);
    let b = tmp.path().join("again");
    ok(&["synth", "--seed", "4", "--count", "5", "--frames", "200", "--out", p(&b)]);
    for name in ["index.csv", "a01_c1_r0.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let seqs = load_dataset(&a).unwrap();
    assert_eq!(seqs.len(), 5);
    for s in &seqs {
        assert_eq!((s.frames(), s.joints(), s.fps()), (100, 18, 25.0));
        assert!(s.leader.data().iter().chain(s.follower.data()).all(|v| v.is_finite()));
    }

    let empty = tmp.path().join("empty");
    ok(&["synth", "--count", "0", "--out", p(&empty)]);
    let names: Vec<_> = fs::read_dir(&empty).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, ["index.csv"]);
    assert!(load_dataset(&empty).unwrap().is_empty());
}

#[test]
fn zero_epochs_checkpoint_is_the_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 8);
    let mut counts = Vec::new();
    for variant in ["base", "xia"] {
        let out = tmp.path().join(variant);
        let mut args = vec!["train", "--data", p(&data), "--out", p(&out), "--variant", variant, "--seed", "5", "--epochs", "0"];
        args.extend_from_slice(&SMALL);
        ok(&args);
        let (model, _) = CollabModel::load(&out.join("model.ckpt")).unwrap();
        let fresh = make_variant(variant.parse().unwrap(), &small_config(), 5).unwrap();
        assert_eq!(model.params(), fresh.params());
        assert_eq!(fs::read_to_string(out.join("loss.csv")).unwrap().trim(), "epoch,step,loss");
        counts.push(model.param_count());
    }
    assert!(counts[1] > counts[0], "{counts:?}");
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nowhere");
    let out = bin(&["train", "--data", p(&missing), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere"));

    let out = bin(&["train", "--set", "learning_rate=0.1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));

    let cfg = tmp.path().join("exp.txt");
    fs::write(&cfg, "epochs = 1\nwarmup = 3\n").unwrap();
    let out = bin(&["train", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warmup"));
}

#[test]
fn train_eval_predict_report() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 115);
    let run = tmp.path().join("run");
    let mut args = vec!["train", "--data", p(&data), "--out", p(&run), "--variant", "xia"];
    args.extend_from_slice(&SMALL);
    ok(&args);
    let loss = fs::read_to_string(run.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 4);

    let mut args = vec!["eval", "--data", p(&data), "--out", p(&run), "--variant", "xia"];
    args.extend_from_slice(&SMALL);
    let table = ok(&args);
    assert!(table.contains("AVG"));

    let csv = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some(REPORT_HEADER));
    let rows = parse_report_csv(&csv, "metrics.csv").unwrap();
    let split = make_split(&load_any(&data).unwrap(), SplitKind::CommonAerials).unwrap();
    let mut aerials: Vec<u32> = split.test.iter().map(|s| s.aerial).collect();
    aerials.sort_unstable();
    aerials.dedup();
    assert_eq!(rows.len(), 4 * 3 * 2 * (aerials.len() + 1));

    // Every test sequence contributes the same number of samples, so the
    // AVG row is the mean over aerials weighted by sequence count.
    for metric in Metric::ALL {
        for role in Role::ALL {
            for ms in HORIZONS_MS {
                let cell = |a: Option<u32>| {
                    rows.iter()
                        .find(|r| r.metric == metric && r.role == role && r.aerial == a && r.horizon_ms == ms)
                        .unwrap()
                        .value_mm
                };
                let weighted: f64 = aerials
                    .iter()
                    .map(|&a| cell(Some(a)) * split.test.iter().filter(|s| s.aerial == a).count() as f64)
                    .sum::<f64>()
                    / split.test.len() as f64;
                assert!((cell(None) - weighted).abs() < 1e-6 * weighted.max(1.0), "{metric:?} {role:?} {ms}");
            }
        }
    }

    let pred = tmp.path().join("pred.csv");
    let input = data.join("a01_c1_r0.csv");
    ok(&["predict", "--checkpoint", p(&run.join("model.ckpt")), "--input", p(&input), "--frames", "25", "--out", p(&pred)]);
    let out = load_sequences(&pred).unwrap();
    assert_eq!((out.len(), out[0].frames(), out[0].joints()), (1, 25, 18));
    // Forecasts continue from the last observed frame in input coordinates.
    let src = &load_sequences(&input).unwrap()[0];
    let last = src.leader.pose(src.frames() - 1);
    let first = out[0].leader.pose(0);
    let jump = last.joints.iter().zip(&first.joints).map(|(a, b)| (a - b).norm()).sum::<f64>() / 18.0;
    assert!(jump < 500.0, "{jump}");

    let plots = tmp.path().join("plots");
    let other = tmp.path().join("other.csv");
    fs::write(&other, &csv).unwrap();
    ok(&[
        "plotdata",
        "--report",
        &format!("xia={}", p(&run.join("metrics.csv"))),
        "--report",
        &format!("copy={}", p(&other)),
        "--out",
        p(&plots),
    ]);
    let jme = fs::read_to_string(plots.join("jme_follower.csv")).unwrap();
    let lines: Vec<&str> = jme.lines().collect();
    assert_eq!(lines[0], "horizon_ms,xia,copy");
    let horizons: Vec<u32> = lines[1..].iter().map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(horizons, HORIZONS_MS);
    for (line, ms) in lines[1..].iter().zip(HORIZONS_MS) {
        let cells: Vec<f64> = line.split(',').skip(1).map(|c| c.parse().unwrap()).collect();
        let expected = rows
            .iter()
            .find(|r| r.metric == Metric::Jme && r.role == Role::Follower && r.aerial.is_none() && r.horizon_ms == ms)
            .unwrap()
            .value_mm;
        assert_eq!(cells.len(), 2);
        assert!(cells.iter().all(|c| (c - expected).abs() < 1e-6));
    }
    assert_eq!(fs::read_dir(&plots).unwrap().count(), 6);
}

#[test]
fn eval_rejects_a_mismatched_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 8);
    let run = tmp.path().join("run");
    let mut args = vec!["train", "--data", p(&data), "--out", p(&run), "--epochs", "0"];
    args.extend_from_slice(&SMALL);
    ok(&args);
    let out = bin(&["eval", "--data", p(&data), "--out", p(&run), "--set", "d_model=24"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.ckpt"));
}

fn look_at(center: Vec3) -> Camera {
    let k = Matrix3::new(1000.0, 0.0, 640.0, 0.0, 1000.0, 360.0, 0.0, 0.0, 1.0);
    let r = Rotation3::look_at_rh(&(-center), &Vec3::z());
    let t = -(r * center);
    let flip = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
    Camera::new(k, flip * r.matrix(), flip * t).unwrap()
}

#[test]
fn triangulate_command() {
    let tmp = tempfile::tempdir().unwrap();
    let cams = [look_at(Vec3::new(4000.0, 0.0, 1500.0)), look_at(Vec3::new(0.0, 4200.0, 1300.0))];
    let rig = tmp.path().join("rig.txt");
    fs::write(&rig, format!("{}\n{}", format_camera(&cams[0]), format_camera(&cams[1]))).unwrap();

    let x = Vec3::new(120.0, -80.0, 900.0);
    let (a, b) = (cams[0].project(&x).unwrap(), cams[1].project(&x).unwrap());
    let obs = tmp.path().join("obs.csv");
    fs::write(
        &obs,
        format!(
            "id,cam_a,u_a,v_a,cam_b,u_b,v_b\nhead,0,{},{},1,{},{}\nbad,0,1,2,7,3,4\n",
            a.x, a.y, b.x, b.y
        ),
    )
    .unwrap();
    let out = tmp.path().join("points.csv");
    ok(&["triangulate", "--cameras", p(&rig), "--observations", p(&obs), "--out", p(&out)]);
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], TRIANGULATION_HEADER);
    let f: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(f[0], "head");
    let got = Vec3::new(f[1].parse().unwrap(), f[2].parse().unwrap(), f[3].parse().unwrap());
    assert!((got - x).norm() < 1e-6);
    assert!(f[4].parse::<f64>().unwrap() < 1e-6 && f[5].is_empty());
    assert!(lines[2].starts_with("bad,,,,,") && lines[2].contains("unknown camera 7"));

    fs::write(&obs, "").unwrap();
    ok(&["triangulate", "--cameras", p(&rig), "--observations", p(&obs), "--out", p(&out)]);
    assert_eq!(fs::read_to_string(&out).unwrap(), format!("{TRIANGULATION_HEADER}\n"));
}
