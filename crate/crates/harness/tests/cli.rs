use std::path::Path;
use std::process::{Command, Output};

use graphprune_core::SimConfig;
use graphprune_harness::plot::{read_points, TRAINING_DATA};
use graphprune_train::log::{Header, LogWriter, Record, UpdateRecord, LOG_FORMAT};
use graphprune_train::DecodeSpec;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphprune")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_documents_every_flag() {
    let cases: &[(&str, &[&str])] = &[
        ("train", &["--config", "--scale", "--seed", "--out", "--total-timesteps", "--resume"]),
        ("eval", &["--strategy", "--n", "--budget", "--checkpoint", "--seed", "--out", "--log-dir", "--plot"]),
        ("render", &["--log", "--checkpoint", "--worker", "--episode", "--step", "--pixels", "--out"]),
        ("replay", &["--log"]),
        ("plot", &["--log", "--report", "--out", "--ema"]),
    ];
    let top = ok(&["--help"]);
    for (cmd, flags) in cases {
        assert!(top.contains(cmd));
        let help = ok(&[cmd, "--help"]);
        for f in *flags {
            assert!(help.contains(f), "{cmd} --help lacks {f}");
        }
    }
}

#[test]
fn bad_input_exits_nonzero_and_names_the_key() {
    let out = run(&["eval", "--bogus"]);
    assert!(!out.status.success());

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "scale = \"tiny\"\nclip_parameter = -1.0\n").unwrap();
    let out = run(&["eval", "--config", s(&cfg), "--n", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("clip_parameter"));

    std::fs::write(&cfg, "gamma = 0.9\n").unwrap();
    let out = run(&["train", "--config", s(&cfg)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma"));
}

#[test]
fn eval_reports_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        ok(&["eval", "--scale", "tiny", "--strategy", "none", "--n", "5", "--seed", "7", "--out", s(out)]);
    }
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(v["step_budget"], 100);
    assert_eq!(v["strategies"][0]["episodes"].as_array().unwrap().len(), 5);
}

#[test]
fn train_eval_replay_render_plot_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, "scale = \"tiny\"\nupdate_frequency = 64\ncheckpoint_every = 64\n").unwrap();
    ok(&["train", "--config", s(&cfg), "--seed", "3", "--total-timesteps", "128", "--out", s(&run_dir)]);
    let log = run_dir.join("train.jsonl");
    assert!(ok(&["replay", "--log", s(&log)]).contains(" 0 divergences"));

    // Resuming from the newest checkpoint with a longer budget.
    ok(&["train", "--config", s(&cfg), "--seed", "3", "--total-timesteps", "192", "--out", s(&run_dir), "--resume"]);
    let ck = run_dir.join("checkpoints/step-000000192.json");
    assert!(ck.exists());

    let evals = dir.path().join("evals");
    let report = dir.path().join("report.json");
    ok(&[
        "eval", "--config", s(&cfg), "--strategy", "all", "--n", "3", "--seed", "5", "--budget", "20",
        "--checkpoint", s(&ck), "--log-dir", s(&evals), "--out", s(&report), "--plot", s(&evals),
    ]);
    for name in ["none", "random", "learned", "learned-noisy"] {
        let log = evals.join(format!("eval-{name}.jsonl"));
        assert!(ok(&["replay", "--log", s(&log)]).contains(" 0 divergences"), "{name}");
    }
    assert!(evals.join("eval_coverage.png").exists());

    let png = dir.path().join("map.png");
    ok(&["render", "--log", s(&log), "--worker", "1", "--episode", "0", "--step", "5", "--out", s(&png)]);
    let img = image::open(&png).unwrap();
    assert_eq!((img.width(), img.height()), (128, 128));
    ok(&["render", "--checkpoint", s(&ck), "--pixels", "1", "--out", s(&png)]);
    assert!(dir.path().join("map-w0.png").exists() && dir.path().join("map-w1.png").exists());

    let plots = dir.path().join("plots");
    ok(&["plot", "--log", s(&log), "--out", s(&plots)]);
    for f in ["value_loss.png", "episode_reward.png", "coverage.png", TRAINING_DATA] {
        assert!(plots.join(f).exists(), "{f}");
    }
    ok(&["plot", "--report", s(&report), "--out", s(&plots)]);
}

fn update(step: u64, value_loss: f64, reward: Option<f64>) -> Record {
    Record::Update(UpdateRecord {
        global_step: step,
        update_idx: step / 10,
        value_loss,
        policy_loss: 0.0,
        entropy: 0.0,
        approx_kl: 0.0,
        clip_fraction: 0.0,
        epochs: 1,
        steps_applied: 1,
        early_stopped: false,
        grad_norm: 0.0,
        mean_episode_reward: reward,
        mean_coverage: reward.map(|r| r / 2.0),
        episodes: 1,
        tree_size_mean: 0.0,
        prune_count_mean: 0.0,
    })
}

#[test]
fn plotted_series_equal_logged_values() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("ramp.jsonl");
    let header = Header {
        format: LOG_FORMAT,
        source: "synthetic".into(),
        sim: SimConfig::default(),
        decode: DecodeSpec {
            components: 1,
            gated: false,
            sigma_min: 1.0,
        },
        settings: serde_json::Value::Null,
    };
    let mut w = LogWriter::create(&log, &header).unwrap();
    let ramp: Vec<(u64, f64, Option<f64>)> = (0..20)
        .map(|i| (10 * (i + 1), 1.0 / (i + 1) as f64, (i % 3 != 1).then(|| 0.1 * i as f64 + 1.0 / 3.0)))
        .collect();
    for &(x, v, r) in &ramp {
        w.write(&update(x, v, r)).unwrap();
    }
    w.flush().unwrap();
    let out = dir.path().join("plots");
    ok(&["plot", "--log", s(&log), "--out", s(&out)]);
    let pts = read_points(&out.join(TRAINING_DATA)).unwrap();
    let series = |name: &str| pts.iter().filter(|p| p.series == name).map(|p| (p.x, p.y)).collect::<Vec<_>>();
    let expect_loss: Vec<(f64, f64)> = ramp.iter().map(|&(x, v, _)| (x as f64, v)).collect();
    let expect_reward: Vec<(f64, f64)> = ramp.iter().filter_map(|&(x, _, r)| r.map(|r| (x as f64, r))).collect();
    let expect_cov: Vec<(f64, f64)> = expect_reward.iter().map(|&(x, r)| (x, r / 2.0)).collect();
    assert_eq!(series("value_loss"), expect_loss);
    assert_eq!(series("episode_reward"), expect_reward);
    assert_eq!(series("coverage"), expect_cov);

    ok(&["plot", "--log", s(&log), "--out", s(&out), "--ema", "0.5"]);
    let smoothed = read_points(&out.join(TRAINING_DATA)).unwrap();
    assert_ne!(smoothed, pts);
    assert!(!run(&["plot", "--log", s(&log), "--out", s(&out), "--ema", "1.5"]).status.success());
}
