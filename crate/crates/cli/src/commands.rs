use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use exactpc::cftp::{CftpEngine, CftpResult, SampleBudget};
use exactpc::hypergraph::DEFAULT_MAX_K;
use exactpc::io::{instance_to_string_with_meta, read_instance, read_replay, FORMAT_VERSION};
use exactpc::learning::{learn_from_oracle, learn_from_samples, learn_population, relative_error, LearnConfig, LearnResult};
use exactpc::model::{
    make_bimodal_path_instance, make_clique_instance, make_path_instance, make_random_instance, validate_instance,
    Instance, TargetShape,
};
use exactpc::verify::coalescence_benchmark;
use exactpc::verify::suite::{run_criterion, CriterionReport};
use exactpc::{Error, LssOracle, SeedTree, TargetDistribution};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::{BenchArgs, EngineChoice, Family, GenArgs, LearnArgs, LearnerArgs, SampleArgs, TargetKind, VerifyArgs};

pub const EXIT_ACCEPTANCE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;

/// A command failure and the exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::ReplayExhausted { .. } => EXIT_BUDGET,
            _ => EXIT_USAGE,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self { code: EXIT_USAGE, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_USAGE, message: message.into() }
}

/// What a command prints and the status it exits with.
#[derive(Debug)]
pub struct Output {
    pub stdout: String,
    pub code: i32,
}

impl Output {
    fn ok(stdout: String) -> Self {
        Self { stdout, code: 0 }
    }
}

fn envelope(command: &str, config: &impl Serialize, body: (&str, Value)) -> String {
    let mut map = serde_json::Map::new();
    map.insert("format_version".into(), json!(FORMAT_VERSION));
    map.insert("command".into(), json!(command));
    map.insert("config".into(), serde_json::to_value(config).expect("config serializes"));
    map.insert(body.0.into(), body.1);
    let mut text = serde_json::to_string_pretty(&Value::Object(map)).expect("report serializes");
    text.push('\n');
    text
}

fn emit(text: String, out: Option<&Path>) -> Result<String, Failure> {
    match out {
        Some(path) => {
            std::fs::write(path, &text)?;
            Ok(String::new())
        }
        None => Ok(text),
    }
}

pub fn gen(args: &GenArgs) -> Result<Output, Failure> {
    let mut rng = SeedTree::new(args.seed).derive("gen", 0).rng();
    let shape = match args.target {
        TargetKind::Uniform => TargetShape::Uniform,
        TargetKind::Random => TargetShape::Random { phi: args.phi },
    };
    let instance = match args.family {
        Family::BimodalPath => make_bimodal_path_instance(args.n)?,
        Family::Path => make_path_instance(args.n, shape, &mut rng)?,
        Family::Clique => make_clique_instance(args.n, args.k, shape, &mut rng)?,
        Family::Random => make_random_instance(args.n, args.k, args.phi, &mut rng)?,
    };
    let meta = json!({ "command": "gen", "config": args });
    let text = instance_to_string_with_meta(&instance, Some(meta));
    Ok(Output::ok(emit(text, args.out.as_deref())?))
}

fn learn_config(learner: &LearnerArgs, instance: &Instance, for_sampler: bool) -> LearnConfig {
    let phi = learner.phi.or(instance.phi).unwrap_or(2.0);
    let base = if for_sampler { LearnConfig::for_sampler(instance.n(), phi) } else { LearnConfig { phi, ..LearnConfig::default() } };
    LearnConfig {
        epsilon: learner.epsilon.unwrap_or(base.epsilon),
        delta: learner.delta,
        sample_constant: learner.sample_constant,
        ..base
    }
}

/// The oracle and, for replays, the number of recorded samples.
fn open_oracle(instance: &Instance, replay: Option<&Path>, seed: SeedTree) -> Result<(LssOracle, Option<usize>), Failure> {
    Ok(match replay {
        Some(path) => {
            let samples = read_replay(path, &instance.comparisons)?;
            let len = samples.len();
            (LssOracle::replay(instance.comparisons.clone(), samples)?, Some(len))
        }
        None => (LssOracle::simulated(instance, seed), None),
    })
}

#[derive(Serialize)]
struct LearnDiagnostics {
    /// `(|1 - D/estimate|_∞, |1 - estimate/D|_∞)` against the instance target.
    relative_error_to_target: (f64, f64),
    within_epsilon: bool,
    oracle_samples_drawn: u64,
}

fn run_learning(
    learner: &LearnerArgs,
    instance: &Instance,
    oracle: &mut LssOracle,
    config: &LearnConfig,
    fixed_samples: Option<usize>,
) -> Result<LearnResult, Failure> {
    if learner.population_mode {
        return Ok(learn_population(instance, config)?);
    }
    match fixed_samples {
        None => Ok(learn_from_oracle(oracle, config)?),
        Some(0) => Err(usage("--num-samples must be positive")),
        Some(count) => Ok(learn_from_samples(oracle, config, count)?),
    }
}

pub fn learn_cmd(args: &LearnArgs) -> Result<Output, Failure> {
    let instance = check_instance(&args.instance)?;
    let config = learn_config(&args.learner, &instance, false);
    let root = SeedTree::new(args.seed);
    let (mut oracle, recorded) = open_oracle(&instance, args.replay.as_deref(), root.derive("oracle", 0))?;
    // a replay is used in full unless a size is given
    let result = run_learning(&args.learner, &instance, &mut oracle, &config, args.num_samples.or(recorded))?;
    let errors = relative_error(&instance.target, &result.estimate())?;
    let diagnostics = LearnDiagnostics {
        relative_error_to_target: errors,
        within_epsilon: errors.0.max(errors.1) <= config.epsilon,
        oracle_samples_drawn: oracle.samples_drawn(),
    };
    let config_echo = json!({ "args": args, "learner": config });
    let text = envelope("learn", &config_echo, ("result", json!({ "learn": result, "diagnostics": diagnostics })));
    Ok(Output::ok(emit(text, args.out.as_deref())?))
}

fn read_estimate(path: &Path, n: usize) -> Result<TargetDistribution, Failure> {
    let value: Value = serde_json::from_str(&std::fs::read_to_string(path)?)
        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let array = value
        .pointer("/result/learn/estimate")
        .or_else(|| value.get("target"))
        .unwrap_or(&value);
    let probs: Vec<f64> = serde_json::from_value(array.clone())
        .map_err(|_| usage(format!("{}: expected an estimate array", path.display())))?;
    if probs.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: probs.len() }.into());
    }
    Ok(TargetDistribution::from_weights(probs)?)
}

#[derive(Serialize)]
struct SampleSummary {
    engine: &'static str,
    requested: usize,
    samples_written: usize,
    oracle_samples_consumed: u64,
    coupling_samples: u64,
    learning_samples: u64,
    coupling_runs: u64,
    mean_coalescence_steps: f64,
    mean_rejection_loops: f64,
    budget_exceeded: bool,
    replay_exhausted: bool,
    seed: u64,
    learned: Option<LearnResult>,
}

pub fn sample(args: &SampleArgs) -> Result<Output, Failure> {
    let instance = check_instance(&args.instance)?;
    let n = instance.n();
    let k = instance.comparisons.k();
    if k > DEFAULT_MAX_K {
        return Err(usage(format!("set size {k} exceeds the supported maximum {DEFAULT_MAX_K}")));
    }
    let root = SeedTree::new(args.seed);
    let (mut oracle, _) = open_oracle(&instance, args.replay.as_deref(), root.derive("oracle", 0))?;
    let mut coins = root.derive("coins", 0).rng();

    let thinned = match args.engine {
        EngineChoice::Naive => false,
        EngineChoice::Param => true,
        EngineChoice::Auto => args.estimate.is_some() || instance.phi.is_some() || args.learner.phi.is_some(),
    };
    let mut learned = None;
    let mut learning_samples = 0;
    let estimate = if !thinned {
        None
    } else if let Some(path) = &args.estimate {
        Some(read_estimate(path, n)?)
    } else {
        let config = learn_config(&args.learner, &instance, true);
        let result = run_learning(&args.learner, &instance, &mut oracle, &config, None)?;
        learning_samples = oracle.samples_drawn();
        let estimate = result.estimate();
        learned = Some(result);
        Some(estimate)
    };

    let mut budget = args.budget.map_or_else(SampleBudget::default, SampleBudget::capped);
    let mut trace = match &args.trace {
        Some(path) => Some(BufWriter::new(File::create(path)?)),
        None => None,
    };
    let mut states = Vec::with_capacity(args.num_samples);
    let (mut coupling_samples, mut runs) = (0u64, 0u64);
    let mut budget_exceeded = false;
    let mut replay_exhausted = false;
    {
        let mut engine = CftpEngine::new(&mut oracle, &mut coins);
        if let Some(t) = trace.as_mut() {
            engine = engine.trace(t);
        }
        for _ in 0..args.num_samples {
            let out = match &estimate {
                None => engine.naive(&mut budget),
                Some(est) => engine.with_estimate(est, &mut budget),
            };
            let out = match out {
                Ok(out) => out,
                Err(Error::ReplayExhausted { .. }) => {
                    replay_exhausted = true;
                    break;
                }
                Err(e) => return Err(e.into()),
            };
            coupling_samples += out.steps;
            runs += out.loops;
            match out.result {
                CftpResult::Sample(x) => states.push(x),
                _ => {
                    budget_exceeded = true;
                    break;
                }
            }
        }
    }
    if let Some(mut t) = trace {
        t.flush()?;
    }

    let config_echo = json!({ "args": args, "learner": learn_config(&args.learner, &instance, true) });
    let mut stream = format!("# format_version={FORMAT_VERSION}\n# config={}\n", serde_json::to_string(&config_echo).unwrap());
    for s in &states {
        stream.push_str(&s.to_string());
        stream.push('\n');
    }
    std::fs::write(&args.out, stream)?;

    let summary = SampleSummary {
        engine: if estimate.is_some() { "param" } else { "naive" },
        requested: args.num_samples,
        samples_written: states.len(),
        oracle_samples_consumed: oracle.samples_drawn(),
        coupling_samples,
        learning_samples,
        coupling_runs: runs,
        mean_coalescence_steps: if runs > 0 { coupling_samples as f64 / runs as f64 } else { 0.0 },
        mean_rejection_loops: if states.is_empty() { 0.0 } else { runs as f64 / states.len() as f64 },
        budget_exceeded,
        replay_exhausted,
        seed: args.seed,
        learned,
    };
    let code = if budget_exceeded || replay_exhausted { EXIT_BUDGET } else { 0 };
    let text = envelope("sample", &config_echo, ("summary", serde_json::to_value(&summary).unwrap()));
    Ok(Output { stdout: text, code })
}

pub fn bench(args: &BenchArgs) -> Result<Output, Failure> {
    let report = coalescence_benchmark(&args.sizes, args.trials, SeedTree::new(args.seed), args.budget)?;
    if let Some(path) = &args.table {
        std::fs::write(path, report.to_table())?;
    }
    let overrun = report.rows.iter().any(|r| r.budget_exceeded > 0);
    let text = envelope("bench", args, ("report", serde_json::to_value(&report).unwrap()));
    let stdout = emit(text, args.out.as_deref())?;
    Ok(Output { stdout, code: if overrun { EXIT_BUDGET } else { 0 } })
}

/// Runs a fixed pipeline twice in fresh directories and compares every
/// artifact byte for byte.
pub fn determinism_check() -> Result<CriterionReport, Failure> {
    let run = |dir: &Path| -> Result<Vec<(String, Vec<u8>)>, Failure> {
        let instance = dir.join("instance.json");
        let learned = dir.join("learn.json");
        let samples = dir.join("samples.txt");
        let trace = dir.join("trace.txt");
        let bench_out = dir.join("bench.json");
        let table = dir.join("bench.tsv");
        let mut stdout = Vec::new();
        let gen_args = GenArgs { family: Family::Random, n: 5, k: 3, target: TargetKind::Random, phi: 2.0, seed: 7, out: Some(instance.clone()) };
        stdout.push(gen(&gen_args)?.stdout);
        let learner = LearnerArgs { epsilon: Some(0.3), delta: 0.05, phi: None, sample_constant: 200.0, population_mode: false };
        let learn_args = LearnArgs {
            instance: instance.clone(),
            replay: None,
            out: Some(learned.clone()),
            seed: 11,
            num_samples: None,
            learner: learner.clone(),
        };
        stdout.push(learn_cmd(&learn_args)?.stdout);
        let sample_args = SampleArgs {
            instance: instance.clone(),
            replay: None,
            out: samples.clone(),
            seed: 13,
            engine: EngineChoice::Auto,
            num_samples: 200,
            budget: None,
            estimate: None,
            trace: Some(trace.clone()),
            learner,
        };
        stdout.push(sample(&sample_args)?.stdout);
        let bench_args = BenchArgs { sizes: vec![3, 5], trials: 20, seed: 17, budget: None, out: Some(bench_out.clone()), table: Some(table.clone()) };
        stdout.push(bench(&bench_args)?.stdout);
        let mut artifacts = vec![("stdout".to_string(), stdout.concat().into_bytes())];
        for path in [instance, learned, samples, trace, bench_out, table] {
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            artifacts.push((name, std::fs::read(&path)?));
        }
        Ok(artifacts)
    };
    // same paths both times, since paths are part of the echoed config
    let dir = scratch_dir()?;
    let a = run(&dir);
    let b = a.as_ref().ok().map(|_| run(&dir));
    let _ = std::fs::remove_dir_all(&dir);
    let (a, b) = (a?, b.expect("first run succeeded")?);
    let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0.as_str()).collect();
    let detail = if differing.is_empty() {
        format!("gen, learn, sample (with trace) and bench repeated with the same seeds: {} artifacts identical", a.len())
    } else {
        format!("artifacts differ between identical runs: {}", differing.join(", "))
    };
    Ok(CriterionReport { id: 12, name: "determinism of CLI outputs".into(), pass: differing.is_empty(), detail })
}

fn scratch_dir() -> Result<PathBuf, Failure> {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    let dir = std::env::temp_dir().join(format!("exactpc-verify-{}-{nanos}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

pub fn verify(args: &VerifyArgs) -> Result<Output, Failure> {
    if let Some(bad) = args.criteria.iter().find(|&&c| !(1..=12).contains(&c)) {
        return Err(usage(format!("unknown criterion {bad}")));
    }
    let wanted = |id: u32| args.criteria.is_empty() || args.criteria.contains(&id);
    let mut reports = Vec::new();
    for id in (1..=11).filter(|&id| wanted(id)) {
        reports.push(run_criterion(id)?);
    }
    if wanted(12) {
        reports.push(determinism_check()?);
    }
    let all_pass = reports.iter().all(|r| r.pass);
    let mut lines: String = reports.iter().map(|r| r.line() + "\n").collect();
    let text = envelope("verify", args, ("criteria", json!({ "all_pass": all_pass, "reports": reports })));
    if let Some(path) = &args.out {
        std::fs::write(path, text)?;
    } else {
        lines.push_str(&text);
    }
    Ok(Output { stdout: lines, code: if all_pass { 0 } else { EXIT_ACCEPTANCE } })
}

/// Reads an instance and checks connectivity and any declared ratio bound.
fn check_instance(path: &Path) -> Result<Instance, Failure> {
    let instance = read_instance(path)?;
    if let Some(phi) = instance.phi {
        let report = validate_instance(&instance.target, &instance.comparisons, phi)?;
        if !report.valid {
            return Err(usage(format!("{}: instance violates its declared ratio bound {phi}", path.display())));
        }
    }
    if !instance.comparisons.is_connected() {
        return Err(Error::Disconnected.into());
    }
    Ok(instance)
}
