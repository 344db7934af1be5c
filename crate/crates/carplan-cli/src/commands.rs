//! Subcommand implementations. Every run is deterministic in (config, seed)
//! and writes its fully resolved configuration next to its outputs.

use std::io::Write as _;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use toml::Value;

use carplan::model::{CarPlan, DpeMode, ExpertUsage, ModelConfig, RouterMode};
use carplan::render::{render_svg, RenderInput};
use carplan::scene::{
    generate_scenario, load_corpus, GeneratorConfig, Scenario, Topology,
};
use carplan::sim::{
    rollout, score, AgentMode, ExpertReplayPlanner, ModelPlanner, RolloutConfig,
    RolloutTrace, SimRecord,
};
use carplan::training::{
    self, grad_check_total_loss, open_loop_eval, prepare_samples, LossWeights, TrainConfig,
};

use crate::config::{ensure_out_dir, resolve, write_resolved, FileConfig};
use crate::{data_err, parse_path, CliError, CliResult};

// ── gen-data ────────────────────────────────────────────────────────

#[derive(Args)]
pub struct GenDataArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Key-value config file; flags override file entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of scenarios to generate.
    #[arg(long)]
    count: Option<usize>,
    /// Base seed; scenario k uses seed base+k (infeasible seeds are skipped).
    #[arg(long)]
    seed: Option<u64>,
    /// straight | curved | intersection | lane_change | mix
    #[arg(long)]
    topology: Option<String>,
    #[arg(long)]
    min_agents: Option<usize>,
    #[arg(long)]
    max_agents: Option<usize>,
    #[arg(long)]
    goal_distance: Option<f64>,
    /// Logged future steps (10 Hz).
    #[arg(long)]
    future_steps: Option<usize>,
}

#[derive(Serialize)]
struct Manifest {
    count: usize,
    base_seed: u64,
    seeds: Vec<u64>,
    skipped_seeds: Vec<u64>,
    topology: String,
}

pub fn gen_data(args: GenDataArgs) -> CliResult {
    let file = FileConfig::load(args.config.as_ref())?;
    let count = resolve(args.count, file.take_usize("count"), 100);
    let base_seed = resolve(args.seed, file.take_u64("seed"), 0);
    let topology_str =
        resolve(args.topology.clone(), file.take_str("topology"), "mix".to_string());
    let topology = parse_topology(&topology_str)?;
    let mut generator = GeneratorConfig {
        topology,
        min_agents: resolve(args.min_agents, file.take_usize("min_agents"), 0),
        max_agents: resolve(args.max_agents, file.take_usize("max_agents"), 6),
        goal_distance: resolve(args.goal_distance, file.take_f64("goal_distance"), 40.0),
        future_steps: resolve(args.future_steps, file.take_usize("future_steps"), 80),
        ..GeneratorConfig::default()
    };
    if let Some(v) = file.take_f64("agent_speed_min") {
        generator.agent_speed.0 = v;
    }
    if let Some(v) = file.take_f64("agent_speed_max") {
        generator.agent_speed.1 = v;
    }
    if let Some(v) = file.take_bool("pedestrians") {
        generator.pedestrians = v;
    }
    if generator.min_agents > generator.max_agents {
        return Err(CliError::Usage("min_agents exceeds max_agents".into()));
    }

    ensure_out_dir(&args.out)?;
    let (scenarios, seeds, skipped) = generate_corpus(&generator, base_seed, count)?;
    carplan::scene::write_corpus(&args.out.join("corpus.jsonl"), &scenarios).map_err(data_err)?;
    let manifest = Manifest {
        count: scenarios.len(),
        base_seed,
        seeds,
        skipped_seeds: skipped,
        topology: topology_str.clone(),
    };
    std::fs::write(
        args.out.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest).map_err(data_err)?,
    )
    .map_err(data_err)?;
    write_resolved(
        &args.out,
        &[
            ("command", Value::String("gen-data".into())),
            ("count", Value::Integer(count as i64)),
            ("seed", Value::Integer(base_seed as i64)),
            ("topology", Value::String(topology_str)),
            ("min_agents", Value::Integer(generator.min_agents as i64)),
            ("max_agents", Value::Integer(generator.max_agents as i64)),
            ("goal_distance", Value::Float(generator.goal_distance)),
            ("future_steps", Value::Integer(generator.future_steps as i64)),
        ],
    )?;
    println!("wrote {} scenarios to {}", scenarios.len(), args.out.join("corpus.jsonl").display());
    Ok(())
}

fn parse_topology(s: &str) -> Result<Option<Topology>, CliError> {
    if s == "mix" {
        return Ok(None);
    }
    s.parse::<Topology>().map(Some).map_err(CliError::Usage)
}

/// Walk the seed stream until `count` scenarios exist; infeasible seeds are
/// recorded and skipped so corpora stay reproducible.
pub fn generate_corpus(
    config: &GeneratorConfig,
    base_seed: u64,
    count: usize,
) -> Result<(Vec<Scenario>, Vec<u64>, Vec<u64>), CliError> {
    let mut scenarios = Vec::with_capacity(count);
    let mut seeds = Vec::with_capacity(count);
    let mut skipped = Vec::new();
    let mut seed = base_seed;
    while scenarios.len() < count {
        if skipped.len() > count * 2 + 64 {
            return Err(CliError::Data(format!(
                "generator config is infeasible: {} of {} seeds failed",
                skipped.len(),
                skipped.len() + scenarios.len()
            )));
        }
        match generate_scenario(config, seed) {
            Ok(s) => {
                scenarios.push(s);
                seeds.push(seed);
            }
            Err(_) => skipped.push(seed),
        }
        seed += 1;
    }
    Ok((scenarios, seeds, skipped))
}

// ── train ───────────────────────────────────────────────────────────

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// off | agent | map | agent_map (displacement-prediction target set).
    #[arg(long)]
    dpe: Option<String>,
    /// Routed expert count; 0 disables the mixture.
    #[arg(long)]
    experts: Option<usize>,
    #[arg(long)]
    topk: Option<usize>,
    /// Shared expert count (paper setting: 0 or 2).
    #[arg(long)]
    shared: Option<usize>,
    /// scene_aware | mlp
    #[arg(long)]
    router: Option<String>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    modes: Option<usize>,
    /// Planning horizon in steps (10 Hz).
    #[arg(long)]
    future_steps: Option<usize>,
    /// Balance-loss weight λ_bal (1 = on, 0 = off).
    #[arg(long)]
    lambda_bal: Option<f64>,
    /// Displacement-loss weight λ_disp.
    #[arg(long)]
    lambda_disp: Option<f64>,
}

pub fn train(args: TrainArgs) -> CliResult {
    let file = FileConfig::load(args.config.as_ref())?;
    parse_path(&args.corpus)?;
    let corpus = load_corpus(&args.corpus).map_err(data_err)?;
    if corpus.is_empty() {
        return Err(CliError::Data("corpus is empty".into()));
    }

    let dpe_str = resolve(args.dpe.clone(), file.take_str("dpe"), "agent_map".into());
    let router_str = resolve(args.router.clone(), file.take_str("router"), "scene_aware".into());
    let model_config = ModelConfig {
        d_model: resolve(args.d_model, file.take_usize("d_model"), 64),
        num_modes: resolve(args.modes, file.take_usize("modes"), 6),
        routed_experts: resolve(args.experts, file.take_usize("experts"), 16),
        top_k: resolve(args.topk, file.take_usize("topk"), 2),
        shared_experts: resolve(args.shared, file.take_usize("shared"), 2),
        dpe: dpe_str.parse::<DpeMode>().map_err(CliError::Usage)?,
        router: router_str.parse::<RouterMode>().map_err(CliError::Usage)?,
        future_steps: resolve(args.future_steps, file.take_usize("future_steps"), 40),
        history_steps: corpus[0].history_steps,
        seed: resolve(args.seed, file.take_u64("seed"), 0),
        ..ModelConfig::default()
    };
    model_config.validate().map_err(CliError::Usage)?;

    let train_config = TrainConfig {
        lr: resolve(args.lr, file.take_f64("lr"), 1e-3),
        steps: resolve(args.steps, file.take_usize("steps"), 500),
        batch_size: resolve(args.batch, file.take_usize("batch"), 8),
        seed: resolve(args.seed, file.take_u64("seed"), 0),
        weights: LossWeights {
            plan: 1.0,
            disp: resolve(args.lambda_disp, file.take_f64("lambda_disp"), 1.0),
            bal: resolve(args.lambda_bal, file.take_f64("lambda_bal"), 1.0),
        },
        clip_norm: 1.0,
    };

    let mut model = CarPlan::new(model_config.clone());
    let samples = prepare_samples(&corpus, &model).map_err(data_err)?;
    let log = training::train(&mut model, &samples, &train_config).map_err(data_err)?;

    ensure_out_dir(&args.out)?;
    model.save(&args.out.join("model.ckpt")).map_err(data_err)?;
    write_metrics_csv(&args.out.join("metrics.csv"), &log)?;
    write_usage_json(&args.out.join("expert_usage.json"), &log.usage)?;
    write_resolved(
        &args.out,
        &[
            ("command", Value::String("train".into())),
            ("corpus", Value::String(args.corpus.display().to_string())),
            ("steps", Value::Integer(train_config.steps as i64)),
            ("lr", Value::Float(train_config.lr)),
            ("batch", Value::Integer(train_config.batch_size as i64)),
            ("seed", Value::Integer(train_config.seed as i64)),
            ("dpe", Value::String(dpe_str)),
            ("router", Value::String(router_str)),
            ("experts", Value::Integer(model_config.routed_experts as i64)),
            ("topk", Value::Integer(model_config.top_k as i64)),
            ("shared", Value::Integer(model_config.shared_experts as i64)),
            ("d_model", Value::Integer(model_config.d_model as i64)),
            ("modes", Value::Integer(model_config.num_modes as i64)),
            ("future_steps", Value::Integer(model_config.future_steps as i64)),
            ("lambda_disp", Value::Float(train_config.weights.disp)),
            ("lambda_bal", Value::Float(train_config.weights.bal)),
        ],
    )?;
    let last = log.steps.last().map(|s| s.loss.total).unwrap_or(f64::NAN);
    println!("trained {} steps; final total loss {:.6}", log.steps.len(), last);
    Ok(())
}

fn write_metrics_csv(path: &PathBuf, log: &training::TrainLog) -> CliResult {
    let mut f = std::fs::File::create(path).map_err(data_err)?;
    writeln!(f, "step,l_plan,l_disp,l_bal,l_total,grad_norm").map_err(data_err)?;
    for s in &log.steps {
        writeln!(
            f,
            "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
            s.step, s.loss.plan, s.loss.disp, s.loss.bal, s.loss.total, s.grad_norm
        )
        .map_err(data_err)?;
    }
    Ok(())
}

fn write_usage_json(path: &PathBuf, usage: &[ExpertUsage]) -> CliResult {
    std::fs::write(path, serde_json::to_vec_pretty(usage).map_err(data_err)?).map_err(data_err)
}

// ── eval ────────────────────────────────────────────────────────────

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// open | nr | r
    #[arg(long)]
    mode: String,
    /// Required unless --planner expert_replay.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// model | expert_replay
    #[arg(long, default_value = "model")]
    planner: String,
    /// Closed-loop horizon in steps; defaults to each scenario's log length.
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, default_value_t = 10)]
    replan: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write one rollout trace file per scenario.
    #[arg(long, default_value_t = false)]
    save_traces: bool,
}

pub fn eval(args: EvalArgs) -> CliResult {
    parse_path(&args.corpus)?;
    let corpus = load_corpus(&args.corpus).map_err(data_err)?;
    if corpus.is_empty() {
        return Err(CliError::Data("corpus is empty".into()));
    }
    ensure_out_dir(&args.out)?;

    let model = match (&args.checkpoint, args.planner.as_str()) {
        (Some(path), _) => {
            parse_path(path)?;
            let model = CarPlan::load(path).map_err(data_err)?;
            for s in &corpus {
                if s.future_steps < model.config.future_steps {
                    return Err(CliError::Data(format!(
                        "horizon mismatch: checkpoint plans {} steps but corpus logs only {}",
                        model.config.future_steps, s.future_steps
                    )));
                }
                if s.history_steps != model.config.history_steps {
                    return Err(CliError::Data(format!(
                        "horizon mismatch: checkpoint expects {}-step history, corpus has {}",
                        model.config.history_steps, s.history_steps
                    )));
                }
            }
            Some(model)
        }
        (None, "expert_replay") => None,
        (None, _) => {
            return Err(CliError::Usage(
                "--checkpoint is required unless --planner expert_replay".into(),
            ))
        }
    };

    match args.mode.as_str() {
        "open" => {
            let model = model.ok_or_else(|| {
                CliError::Usage("open-loop evaluation needs a model checkpoint".into())
            })?;
            let rows = open_loop_eval(&model, &corpus).map_err(data_err)?;
            let mut f = std::fs::File::create(args.out.join("metrics.csv")).map_err(data_err)?;
            writeln!(f, "seed,ade,fde,min_ade").map_err(data_err)?;
            for r in &rows {
                writeln!(f, "{},{:.6},{:.6},{:.6}", r.seed, r.ade, r.fde, r.min_ade)
                    .map_err(data_err)?;
            }
            let n = rows.len() as f64;
            writeln!(
                f,
                "mean,{:.6},{:.6},{:.6}",
                rows.iter().map(|r| r.ade).sum::<f64>() / n,
                rows.iter().map(|r| r.fde).sum::<f64>() / n,
                rows.iter().map(|r| r.min_ade).sum::<f64>() / n
            )
            .map_err(data_err)?;
        }
        "nr" | "r" => {
            let agent_mode = if args.mode == "nr" {
                AgentMode::NonReactive
            } else {
                AgentMode::Reactive
            };
            let mut usage_out: Vec<ExpertUsage> = Vec::new();
            let mut f = std::fs::File::create(args.out.join("metrics.csv")).map_err(data_err)?;
            writeln!(
                f,
                "seed,collision_free,drivable_compliance,progress,arrived,comfort_rms_jerk,comfort_score,composite"
            )
            .map_err(data_err)?;
            let mut sums = [0.0f64; 7];
            for s in &corpus {
                let cfg = RolloutConfig {
                    mode: agent_mode,
                    horizon_steps: args.horizon,
                    replan_interval: args.replan,
                    seed: args.seed,
                };
                let trace = match (&model, args.planner.as_str()) {
                    (_, "expert_replay") => {
                        let horizon =
                            model.as_ref().map(|m| m.config.future_steps).unwrap_or(40);
                        let mut p = ExpertReplayPlanner::new(horizon);
                        rollout(&mut p, s, &cfg)
                    }
                    (Some(m), _) => {
                        let mut p = ModelPlanner::new(m.fork());
                        let trace = rollout(&mut p, s, &cfg);
                        merge_usage(&mut usage_out, &p.usage);
                        trace
                    }
                    (None, other) => {
                        return Err(CliError::Usage(format!("unknown planner: {other}")))
                    }
                };
                if args.save_traces {
                    write_trace_jsonl(&args.out.join(format!("trace_{}.jsonl", s.seed)), &trace)?;
                }
                let report = score(&trace, s);
                writeln!(
                    f,
                    "{},{},{},{:.6},{},{:.6},{:.6},{:.6}",
                    s.seed,
                    report.collision_free,
                    report.drivable_compliance,
                    report.progress_ratio,
                    report.arrived,
                    report.comfort_rms_jerk,
                    report.comfort_score,
                    report.composite
                )
                .map_err(data_err)?;
                sums[0] += report.collision_free as f64;
                sums[1] += report.drivable_compliance as f64;
                sums[2] += report.progress_ratio;
                sums[3] += report.arrived as f64;
                sums[4] += report.comfort_rms_jerk;
                sums[5] += report.comfort_score;
                sums[6] += report.composite;
            }
            let n = corpus.len() as f64;
            writeln!(
                f,
                "mean,{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                sums[0] / n,
                sums[1] / n,
                sums[2] / n,
                sums[3] / n,
                sums[4] / n,
                sums[5] / n,
                sums[6] / n
            )
            .map_err(data_err)?;
            if !usage_out.is_empty() {
                write_usage_json(&args.out.join("expert_usage.json"), &usage_out)?;
            }
        }
        other => return Err(CliError::Usage(format!("unknown mode: {other} (open|nr|r)"))),
    }

    write_resolved(
        &args.out,
        &[
            ("command", Value::String("eval".into())),
            ("corpus", Value::String(args.corpus.display().to_string())),
            ("mode", Value::String(args.mode.clone())),
            ("planner", Value::String(args.planner.clone())),
            ("seed", Value::Integer(args.seed as i64)),
            ("replan", Value::Integer(args.replan as i64)),
        ],
    )?;
    println!("wrote {}", args.out.join("metrics.csv").display());
    Ok(())
}


fn merge_usage(into: &mut Vec<ExpertUsage>, from: &[ExpertUsage]) {
    if into.is_empty() {
        into.extend(from.iter().cloned());
        return;
    }
    for (a, b) in into.iter_mut().zip(from) {
        for (x, y) in a.counts.iter_mut().zip(&b.counts) {
            *x += y;
        }
    }
}

fn write_trace_jsonl(path: &PathBuf, trace: &RolloutTrace) -> CliResult {
    let mut f = std::fs::File::create(path).map_err(data_err)?;
    for rec in &trace.records {
        let line = serde_json::to_vec(rec).map_err(data_err)?;
        f.write_all(&line).map_err(data_err)?;
        f.write_all(b"\n").map_err(data_err)?;
    }
    Ok(())
}

// ── render ──────────────────────────────────────────────────────────

#[derive(Args)]
pub struct RenderArgs {
    /// Corpus file providing the scenario (map, logs).
    #[arg(long)]
    corpus: PathBuf,
    /// Index of the scenario within the corpus.
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Optional rollout trace (JSON Lines of per-step records).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Optional checkpoint: draws the model's candidate trajectories.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Optional expert-usage JSON for the score-histogram panel.
    #[arg(long)]
    telemetry: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

pub fn render(args: RenderArgs) -> CliResult {
    parse_path(&args.corpus)?;
    let corpus = load_corpus(&args.corpus).map_err(data_err)?;
    let scenario = corpus
        .get(args.index)
        .ok_or_else(|| CliError::Data(format!("corpus has no scenario index {}", args.index)))?;

    let trace = match &args.trace {
        Some(path) => {
            parse_path(path)?;
            Some(read_trace_jsonl(path, scenario)?)
        }
        None => None,
    };
    let plan = match &args.checkpoint {
        Some(path) => {
            parse_path(path)?;
            let model = CarPlan::load(path).map_err(data_err)?;
            Some(model.infer(scenario).0)
        }
        None => None,
    };
    let usage: Option<Vec<ExpertUsage>> = match &args.telemetry {
        Some(path) => {
            parse_path(path)?;
            let text = std::fs::read_to_string(path).map_err(data_err)?;
            Some(serde_json::from_str(&text).map_err(data_err)?)
        }
        None => None,
    };

    let svg = render_svg(&RenderInput {
        scenario,
        plan: plan.as_ref(),
        trace: trace.as_ref(),
        usage: usage.as_deref(),
    });
    std::fs::write(&args.out, svg).map_err(data_err)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn read_trace_jsonl(path: &PathBuf, scenario: &Scenario) -> Result<RolloutTrace, CliError> {
    let text = std::fs::read_to_string(path).map_err(data_err)?;
    let mut records: Vec<SimRecord> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: SimRecord = serde_json::from_str(line)
            .map_err(|e| CliError::Data(format!("trace line {}: {e}", i + 1)))?;
        records.push(rec);
    }
    if records.is_empty() {
        return Err(CliError::Data("trace file has no records".into()));
    }
    let events = records.iter().flat_map(|r| r.events.iter().cloned()).collect();
    Ok(RolloutTrace {
        mode: AgentMode::NonReactive,
        seed: scenario.seed,
        dt: scenario.dt,
        records,
        events,
    })
}

// ── grad-check ──────────────────────────────────────────────────────

#[derive(Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 3)]
    seed: u64,
}

pub fn grad_check(args: GradCheckArgs) -> CliResult {
    let started = std::time::Instant::now();
    let config = ModelConfig::tiny();
    let mut model = CarPlan::new(config);
    let mut scenario = generate_scenario(
        &GeneratorConfig {
            topology: Some(Topology::Straight),
            min_agents: 2,
            max_agents: 2,
            ..GeneratorConfig::default()
        },
        args.seed,
    )
    .map_err(data_err)?;
    scenario.map.truncate(2);
    let samples = prepare_samples(&[scenario], &model).map_err(data_err)?;
    let report =
        grad_check_total_loss(&mut model, &samples, &LossWeights::default(), args.epsilon)
            .map_err(data_err)?;
    for block in &report.blocks {
        println!("{:<40} {:.3e}", block.name, block.max_rel_error);
    }
    println!(
        "max relative error {:.6e} over {} parameters in {:.1?}",
        report.max_rel_error,
        model.params.total_scalars(),
        started.elapsed()
    );
    if report.passes(args.tolerance) {
        println!("PASS (tolerance {:.1e})", args.tolerance);
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "max relative error {:.3e} exceeds {:.1e}",
            report.max_rel_error, args.tolerance
        )))
    }
}
