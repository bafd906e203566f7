use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use dttd_core::dataio::{load_checkpoint, parse_metrics_csv, save_checkpoint, write_scene, Checkpoint};
use dttd_core::geometry::CameraIntrinsics;
use dttd_core::metrics::{auc, AucConfig, ErrorTrace};
use dttd_core::network::{lr_at, Fault, LrSchedule, Model, ModelConfig, Variant};
use dttd_core::synthdata::{cube_spec, generate_scene, multi_object_spec, NoiseModel, SceneSpec};
use dttd_harness::cli::main_with_args;
use dttd_harness::config::{GenSpec, ModelChoice, Preset, RunRecord, TrainConfig};
use dttd_harness::eval::{evaluate, ModelPredictor, OraclePredictor};
use dttd_harness::gen::generate;
use dttd_harness::gradcheck::run_gradcheck;
use dttd_harness::sweep::{least_squares, run_sweep};
use dttd_harness::train::run_train;

fn small_camera() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 110.0,
        fy: 110.0,
        cx: 40.0,
        cy: 30.0,
        width: 80,
        height: 60,
    }
}

fn small_cube(seed: u64, frames: usize) -> SceneSpec {
    SceneSpec {
        intrinsics: small_camera(),
        ..cube_spec(seed, frames)
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) {
    fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
}

fn run(args: &[&str]) -> i32 {
    let mut all = vec!["dttd"];
    all.extend_from_slice(args);
    main_with_args(all)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Relative path to bytes for every file under `root`.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn toy_checkpoint(trained: Vec<u8>, seed: u64) -> Checkpoint {
    let m = Model::init(ModelConfig::toy(), seed).unwrap();
    Checkpoint {
        config: m.config,
        params: m.params,
        trained_objects: trained,
    }
}

#[test]
fn gen_writes_every_frame_and_replays_identically() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    write_json(
        &spec,
        &GenSpec {
            scene: small_cube(3, 10),
            target_depth_add_m: None,
        },
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(run(&["gen", "--spec", s(&spec), "--out", s(&a)]), 0);
    assert_eq!(run(&["gen", "--spec", s(&spec), "--out", s(&b)]), 0);
    for i in 0..10 {
        for kind in ["color.ppm", "depth.pgm", "mask.pgm"] {
            assert!(a.join(format!("frames/{i:06}.{kind}")).is_file());
        }
    }
    assert!(a.join("run.json").is_file());
    assert_eq!(tree(&a), tree(&b));

    let c = dir.path().join("c");
    assert_eq!(run(&["replay", "--run", s(&a.join("run.json")), "--out", s(&c)]), 0);
    assert_eq!(tree(&a), tree(&c));
}

#[test]
fn gen_summary_reports_zero_depth_add_without_noise() {
    let (scene, summary) = generate(&GenSpec {
        scene: small_cube(4, 3),
        target_depth_add_m: None,
    })
    .unwrap();
    assert_eq!(summary.frames, 3);
    assert_eq!(scene.frames.len(), 3);
    let text = summary.render();
    assert!(text.contains("object 1 cube mean depth-ADD 0.000 m"), "{text}");
}

#[test]
fn gen_calibrates_to_target() {
    let (_, summary) = generate(&GenSpec {
        scene: small_cube(5, 6),
        target_depth_add_m: Some(0.05),
    })
    .unwrap();
    let v = summary.objects[0].2.unwrap();
    assert!((v - 0.05).abs() < 0.01, "{v}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    assert_eq!(run(&["gen", "--spec", "/nonexistent/spec.json", "--out", s(&out)]), 3);
    assert_eq!(run(&["gen", "--bogus"]), 1);

    let mut bad = small_cube(1, 1);
    bad.objects[0].translation_min[2] = 0.0;
    let spec = dir.path().join("bad.json");
    write_json(
        &spec,
        &GenSpec {
            scene: bad,
            target_depth_add_m: None,
        },
    );
    assert_eq!(run(&["gen", "--spec", s(&spec), "--out", s(&out)]), 1);

    let toy = dir.path().join("toy.json");
    fs::write(&toy, "\"toy\"").unwrap();
    assert_eq!(run(&["gradcheck", "--config", s(&toy), "--seed", "2"]), 0);
    let desk = dir.path().join("desk.json");
    fs::write(&desk, "\"desk\"").unwrap();
    assert_eq!(run(&["gradcheck", "--config", s(&desk), "--seed", "2"]), 1);
}

#[test]
fn gradcheck_fault_names_parameter_and_is_deterministic() {
    let cfg = ModelConfig::toy();
    let a = run_gradcheck(&cfg, 5, &Fault::default()).unwrap();
    let b = run_gradcheck(&cfg, 5, &Fault::default()).unwrap();
    assert!(a.passes(), "{}", a.render());
    assert_eq!(a.render(), b.render());
    assert!(a.checks.iter().any(|c| c.block == "primitive.softmax"));
    assert!(a.checks.iter().any(|c| c.block == "gff"));

    let fault = Fault {
        double_gradient_of: Some("head.out.w".into()),
    };
    let bad = run_gradcheck(&cfg, 5, &fault).unwrap();
    let msg = bad.failure().unwrap().to_string();
    assert!(msg.contains("head.out.w"), "{msg}");
    assert_eq!(bad.failure().unwrap().exit_code(), 2);
}

fn scene_dir(dir: &Path, name: &str, spec: &SceneSpec) -> PathBuf {
    let root = dir.join(name);
    write_scene(&generate_scene(spec).unwrap(), &root).unwrap();
    root
}

fn toy_train_config() -> TrainConfig {
    TrainConfig {
        model: ModelChoice::Preset(Preset::Toy),
        batch_size: 2,
        peak_lr: 1e-3,
        end_lr: 1e-4,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_epochs_checkpoint_is_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let scene = generate_scene(&small_cube(1, 2)).unwrap();
    let out = dir.path().join("t");
    let outcome = run_train(&[scene], &toy_train_config(), 0, 9, &out).unwrap();
    assert!(outcome.steps.is_empty());
    let init = Model::init(ModelConfig::toy(), 9).unwrap();
    let ckpt = load_checkpoint(&out.join("model.ckpt")).unwrap();
    assert!(ckpt.params.bitwise_eq(&init.params));
    assert_eq!(
        fs::read_to_string(out.join("loss.csv")).unwrap(),
        "step,lr,L_ADD,L_CD,total\n"
    );
}

#[test]
fn loss_log_follows_schedule_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let scene = scene_dir(dir.path(), "scene", &small_cube(2, 5));
    let config = dir.path().join("train.json");
    write_json(&config, &toy_train_config());
    let out = dir.path().join("run");
    let args = [
        "train",
        "--scene",
        s(&scene),
        "--config",
        s(&config),
        "--epochs",
        "2",
        "--seed",
        "4",
        "--out",
        s(&out),
    ];
    assert_eq!(run(&args), 0);
    for e in 0..=2 {
        assert!(out.join(format!("checkpoints/epoch_{e:03}.ckpt")).is_file());
    }

    // 5 samples in batches of 2 give 3 steps per epoch.
    let schedule = LrSchedule {
        peak_lr: 1e-3,
        end_lr: 1e-4,
        warmup_steps: 3,
        total_steps: 6,
    };
    let log = fs::read_to_string(out.join("loss.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("step,lr,L_ADD,L_CD,total"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert_eq!(r[1], lr_at(r[0] as usize, &schedule));
        assert!((r[4] - (r[2] + 0.3 * r[3])).abs() < 1e-12);
    }

    let again = dir.path().join("again");
    assert_eq!(
        run(&["replay", "--run", s(&out.join("run.json")), "--out", s(&again)]),
        0
    );
    assert_eq!(tree(&out), tree(&again));
}

#[test]
fn desk_smoke_run_halves_the_loss() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = cube_spec(17, 200);
    spec.noise = NoiseModel::none();
    let scene = generate_scene(&spec).unwrap();
    let config = TrainConfig {
        model: ModelChoice::Preset(Preset::Desk),
        peak_lr: 2e-3,
        end_lr: 2e-4,
        ..TrainConfig::default()
    };
    let outcome = run_train(&[scene], &config, 5, 1, dir.path()).unwrap();
    let m = &outcome.epoch_means;
    assert_eq!(m.len(), 5);
    assert!(m[4] < 0.5 * m[0], "epoch means {m:?}");
}

#[test]
fn oracle_evaluation_is_perfect() {
    let scene = generate_scene(&multi_object_spec(3, 4)).unwrap();
    let out = evaluate(&scene, &OraclePredictor, "oracle").unwrap();
    assert_eq!(out.rows.len(), 3);
    for r in &out.rows {
        assert_eq!(r.add_auc, Some(100.0));
        assert_eq!(r.adds_auc, Some(100.0));
        assert_eq!(r.add_1cm, Some(100.0));
        assert_eq!(r.adds_1cm, Some(100.0));
    }
    assert!(out.warnings.is_empty());
}

#[test]
fn eval_is_deterministic_and_warns_on_untrained_objects() {
    let dir = tempfile::tempdir().unwrap();
    let scene_path = scene_dir(dir.path(), "scene", &multi_object_spec(6, 4));
    let ckpt = dir.path().join("m.ckpt");
    save_checkpoint(&toy_checkpoint(vec![1], 3), &ckpt).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(
        run(&["eval", "--scene", s(&scene_path), "--ckpt", s(&ckpt), "--out", s(&a)]),
        0
    );
    assert_eq!(
        run(&["eval", "--scene", s(&scene_path), "--ckpt", s(&ckpt), "--out", s(&b)]),
        0
    );
    assert_eq!(tree(&a), tree(&b));

    let metrics = fs::read_to_string(a.join("metrics.csv")).unwrap();
    let parsed = parse_metrics_csv(&metrics).unwrap();
    assert_eq!(parsed.len(), 4);
    assert!(parsed[0].1[1].is_some());
    for (name, vals) in &parsed[1..3] {
        assert!(vals[1..].iter().all(Option::is_none), "{name}: {vals:?}");
    }
    let record: RunRecord = serde_json::from_str(&fs::read_to_string(a.join("run.json")).unwrap()).unwrap();
    assert_eq!(record.warnings.len(), 2);
    assert!(record.warnings[0].contains("not in the checkpoint"));

    // AUC recomputed from the per-frame records.
    let records = fs::read_to_string(a.join("records.csv")).unwrap();
    let mut lines = records.lines();
    assert_eq!(lines.next(), Some("frame,object,depth_add_m,add_m,adds_m,variant"));
    let adds: Vec<f64> = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!(f[1], "1");
            assert_eq!(f[5], "full");
            f[3].parse().unwrap()
        })
        .collect();
    let recomputed = auc(&ErrorTrace::from_errors(1, adds), &AucConfig::default()).unwrap();
    assert!((recomputed - parsed[0].1[1].unwrap()).abs() <= 0.1);
}

#[test]
fn eval_metrics_ignore_frame_order() {
    let mut scene = generate_scene(&multi_object_spec(7, 5)).unwrap();
    let p = ModelPredictor::new(toy_checkpoint(vec![1, 2, 3], 8));
    let forward_order = evaluate(&scene, &p, "x").unwrap();
    scene.frames.reverse();
    let reversed = evaluate(&scene, &p, "x").unwrap();
    assert_eq!(forward_order.rows, reversed.rows);
}

#[test]
fn sweep_levels_tags_and_skips() {
    let dir = tempfile::tempdir().unwrap();
    let spec = GenSpec {
        scene: small_cube(0, 4),
        target_depth_add_m: None,
    };
    let ckpt = toy_checkpoint(vec![1], 1);
    let variants = vec![("a".to_string(), ckpt.clone()), ("b".to_string(), ckpt.clone())];
    let out = run_sweep(&spec, &variants, &[0.0, 1e-5, 0.05], &[11]).unwrap();
    assert_eq!(out.warnings.len(), 1, "{:?}", out.warnings);
    assert!(out.warnings[0].contains("level 0.00001"), "{:?}", out.warnings);
    for r in out.records.iter().filter(|r| r.level == 0.0) {
        assert!(r.record.depth_add_m <= 0.0005);
    }
    let curve = |tag: &str| {
        out.bins
            .iter()
            .filter(|b| b.variant == tag)
            .map(|b| (b.seed, b.level, b.count, b.mean_depth_add_m, b.mean_add_m))
            .collect::<Vec<_>>()
    };
    assert_eq!(curve("a"), curve("b"));
    assert_eq!(curve("a").len(), 4);

    // The same skip through the command line ends up in run.json.
    let spec_path = dir.path().join("spec.json");
    write_json(&spec_path, &spec);
    let ckpt_path = dir.path().join("m.ckpt");
    save_checkpoint(&ckpt, &ckpt_path).unwrap();
    let run_dir = dir.path().join("sweep");
    let tagged = format!("full={}", s(&ckpt_path));
    let code = run(&[
        "sweep",
        "--spec",
        s(&spec_path),
        "--ckpt",
        &tagged,
        "--levels",
        "0,0.00001,0.05",
        "--seeds",
        "11",
        "--out",
        s(&run_dir),
    ]);
    assert_eq!(code, 0);
    let record: RunRecord = serde_json::from_str(&fs::read_to_string(run_dir.join("run.json")).unwrap()).unwrap();
    assert_eq!(record.warnings.len(), 1);
    for f in ["sweep_records.csv", "sweep_bins.csv", "sweep_slopes.csv"] {
        assert!(run_dir.join(f).is_file());
    }
}

#[test]
fn least_squares_recovers_a_line() {
    let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64 * 0.1, 0.3 * i as f64 * 0.1 + 0.02)).collect();
    let (slope, intercept) = least_squares(&pts).unwrap();
    assert!((slope - 0.3).abs() < 1e-12 && (intercept - 0.02).abs() < 1e-12);
    assert_eq!(least_squares(&[(1.0, 2.0), (1.0, 3.0)]), None);
}

#[test]
fn variant_is_read_from_checkpoint_switches() {
    for v in Variant::ALL {
        let m = Model::init(ModelConfig::toy().with_variant(v), 0).unwrap();
        let p = ModelPredictor::new(Checkpoint {
            config: m.config,
            params: m.params,
            trained_objects: vec![1],
        });
        assert_eq!(p.variant(), v);
    }
}
