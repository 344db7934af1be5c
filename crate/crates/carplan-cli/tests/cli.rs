//! CLI behavior: exit codes, config precedence, resolved-config artifacts,
//! and the edge cases of each subcommand.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_carplan"))
}

fn run(args: &[&str], cwd: &Path) -> std::process::Output {
    bin().args(args).current_dir(cwd).output().expect("spawn carplan")
}

fn assert_ok(args: &[&str], cwd: &Path) {
    let out = run(args, cwd);
    assert!(
        out.status.success(),
        "carplan {args:?}:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    // Usage error → 1.
    let out = run(&["train", "--corpus"], root);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["not-a-command"], root);
    assert_eq!(out.status.code(), Some(1));
    // Data error → 2.
    let out = run(&["train", "--corpus", "missing.jsonl", "--out", "x"], root);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["eval", "--corpus", "missing.jsonl", "--out", "x", "--mode", "open"], root);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_data_zero_count_writes_empty_valid_file() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert_ok(&["gen-data", "--out", "g", "--count", "0", "--seed", "1"], root);
    let corpus = std::fs::read_to_string(root.join("g/corpus.jsonl")).unwrap();
    assert!(corpus.is_empty());
    assert!(root.join("g/resolved_config.toml").exists());
    assert!(root.join("g/manifest.json").exists());
}

#[test]
fn gen_data_single_topology_tags_all_records() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert_ok(
        &["gen-data", "--out", "g", "--count", "5", "--seed", "2", "--topology", "curved"],
        root,
    );
    let corpus = std::fs::read_to_string(root.join("g/corpus.jsonl")).unwrap();
    for line in corpus.lines() {
        assert!(line.contains("\"topology\":\"curved\""));
    }
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(root.join("run.toml"), "count = 3\nseed = 9\ntopology = \"straight\"\n")
        .unwrap();
    assert_ok(
        &["gen-data", "--out", "g", "--config", "run.toml", "--count", "2"],
        root,
    );
    let resolved = std::fs::read_to_string(root.join("g/resolved_config.toml")).unwrap();
    assert!(resolved.contains("count = 2"), "flag must beat file: {resolved}");
    assert!(resolved.contains("seed = 9"), "file value should survive: {resolved}");
    let corpus = std::fs::read_to_string(root.join("g/corpus.jsonl")).unwrap();
    assert_eq!(corpus.lines().count(), 2);
}

#[test]
fn zero_lr_smoke_run_exits_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert_ok(&["gen-data", "--out", "g", "--count", "2", "--seed", "4"], root);
    assert_ok(
        &[
            "train", "--corpus", "g/corpus.jsonl", "--out", "t", "--steps", "3", "--lr", "0",
            "--d-model", "16", "--modes", "2", "--experts", "0", "--topk", "0", "--shared",
            "0", "--dpe", "off", "--future-steps", "10",
        ],
        root,
    );
    assert!(root.join("t/model.ckpt").exists());
    assert!(root.join("t/metrics.csv").exists());
}

#[test]
fn ablation_flags_reproduce_paper_configurations() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert_ok(&["gen-data", "--out", "g", "--count", "2", "--seed", "6"], root);
    // Table-style baseline: DPE off, no experts.
    assert_ok(
        &[
            "train", "--corpus", "g/corpus.jsonl", "--out", "base", "--steps", "2",
            "--d-model", "16", "--modes", "2", "--dpe", "off", "--experts", "0", "--topk",
            "0", "--shared", "0", "--future-steps", "10",
        ],
        root,
    );
    let resolved = std::fs::read_to_string(root.join("base/resolved_config.toml")).unwrap();
    assert!(resolved.contains("dpe = \"off\"") && resolved.contains("experts = 0"));
    // Full configuration: 16 routed, top-2, two shared experts.
    assert_ok(
        &[
            "train", "--corpus", "g/corpus.jsonl", "--out", "full", "--steps", "2",
            "--d-model", "16", "--modes", "2", "--dpe", "agent_map", "--experts", "16",
            "--topk", "2", "--shared", "2", "--future-steps", "10",
        ],
        root,
    );
    let resolved = std::fs::read_to_string(root.join("full/resolved_config.toml")).unwrap();
    assert!(resolved.contains("experts = 16"));
    assert!(resolved.contains("topk = 2"));
    assert!(resolved.contains("shared = 2"));
    // The mlp-router ablation row parses too.
    assert_ok(
        &[
            "train", "--corpus", "g/corpus.jsonl", "--out", "mlp", "--steps", "2",
            "--d-model", "16", "--modes", "2", "--dpe", "off", "--experts", "4", "--topk",
            "2", "--shared", "0", "--router", "mlp", "--future-steps", "10",
        ],
        root,
    );
}

#[test]
fn eval_expert_replay_is_near_perfect_and_untrained_model_is_finite() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert_ok(
        &["gen-data", "--out", "g", "--count", "4", "--seed", "8", "--topology", "straight"],
        root,
    );
    // Upper-bound sanity: log replay in NR mode.
    assert_ok(
        &[
            "eval", "--corpus", "g/corpus.jsonl", "--out", "replay", "--mode", "nr",
            "--planner", "expert_replay",
        ],
        root,
    );
    let csv = std::fs::read_to_string(root.join("replay/metrics.csv")).unwrap();
    let mean = csv.lines().last().unwrap();
    let fields: Vec<&str> = mean.split(',').collect();
    assert_eq!(fields[0], "mean");
    let collision_free: f64 = fields[1].parse().unwrap();
    let compliance: f64 = fields[2].parse().unwrap();
    let composite: f64 = fields[7].parse().unwrap();
    assert_eq!(collision_free, 1.0);
    assert_eq!(compliance, 1.0);
    assert!(composite >= 80.0, "expert replay composite {composite}");

    // Untrained checkpoint: metrics finite, no crash.
    assert_ok(
        &[
            "train", "--corpus", "g/corpus.jsonl", "--out", "t", "--steps", "1",
            "--d-model", "16", "--modes", "2", "--experts", "4", "--topk", "2", "--shared",
            "1", "--future-steps", "10",
        ],
        root,
    );
    assert_ok(
        &[
            "eval", "--corpus", "g/corpus.jsonl", "--checkpoint", "t/model.ckpt", "--out",
            "raw", "--mode", "nr",
        ],
        root,
    );
    let csv = std::fs::read_to_string(root.join("raw/metrics.csv")).unwrap();
    for line in csv.lines().skip(1) {
        for field in line.split(',').skip(1) {
            let v: f64 = field.parse().unwrap();
            assert!(v.is_finite());
        }
    }
}

#[test]
fn eval_horizon_mismatch_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    // Corpus with short 20-step logs, checkpoint that plans 40.
    assert_ok(
        &["gen-data", "--out", "short", "--count", "2", "--seed", "3", "--future-steps", "20"],
        root,
    );
    assert_ok(
        &["gen-data", "--out", "longer", "--count", "2", "--seed", "3", "--future-steps", "60"],
        root,
    );
    assert_ok(
        &[
            "train", "--corpus", "longer/corpus.jsonl", "--out", "t", "--steps", "1",
            "--d-model", "16", "--modes", "2", "--experts", "0", "--topk", "0", "--shared",
            "0", "--dpe", "off", "--future-steps", "40",
        ],
        root,
    );
    let out = run(
        &[
            "eval", "--corpus", "short/corpus.jsonl", "--checkpoint", "t/model.ckpt",
            "--out", "e", "--mode", "open",
        ],
        root,
    );
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("horizon mismatch"), "{stderr}");
}

#[test]
fn render_trace_and_telemetry_panels() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert_ok(&["gen-data", "--out", "g", "--count", "2", "--seed", "14"], root);
    assert_ok(
        &[
            "train", "--corpus", "g/corpus.jsonl", "--out", "t", "--steps", "2",
            "--d-model", "16", "--modes", "2", "--experts", "4", "--topk", "2", "--shared",
            "1", "--future-steps", "10",
        ],
        root,
    );
    assert_ok(
        &[
            "eval", "--corpus", "g/corpus.jsonl", "--checkpoint", "t/model.ckpt", "--out",
            "e", "--mode", "nr", "--save-traces",
        ],
        root,
    );
    // Find the trace for the first scenario seed.
    let trace = std::fs::read_dir(root.join("e"))
        .unwrap()
        .filter_map(|e| e.ok())
        .find(|e| e.file_name().to_string_lossy().starts_with("trace_"))
        .expect("trace file written");
    let trace_path = trace.path();
    assert_ok(
        &[
            "render", "--corpus", "g/corpus.jsonl", "--index", "0", "--trace",
            trace_path.to_str().unwrap(), "--telemetry", "t/expert_usage.json", "--out",
            "out.svg",
        ],
        root,
    );
    let svg = std::fs::read_to_string(root.join("out.svg")).unwrap();
    assert!(svg.contains("ego-path"));
    assert!(svg.contains("expert-hist"));
    // Malformed trace → data error.
    std::fs::write(root.join("broken.jsonl"), "{not json}\n").unwrap();
    let out = run(
        &[
            "render", "--corpus", "g/corpus.jsonl", "--trace", "broken.jsonl", "--out",
            "x.svg",
        ],
        root,
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn grad_check_passes_and_flags_verification_failures() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let out = run(&["grad-check"], root);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
    // A hopeless epsilon turns truncation error into a verification failure.
    let out = run(&["grad-check", "--epsilon", "0.3", "--tolerance", "1e-9"], root);
    assert_eq!(out.status.code(), Some(3));
}
