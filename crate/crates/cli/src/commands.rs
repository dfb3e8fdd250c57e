use std::fs;
use std::path::Path;
use std::process::ExitCode;

use olpi::bellman::{check_global_optimality, check_local_optimality, greedy_policy, value_iteration, OPTIMALITY_TOL};
use olpi::classical::run_classical_pi;
use olpi::instances::{
    build_counterexample, counterexample_mubar, counterexample_mustar, generate_random, GeneratorParams,
};
use olpi::oracle::run_comparison;
use olpi::runlog::{replay, RunLogError, RunLogFile, RunSpec};
use olpi::verify::{verify_pi_trace, verify_run, Finding, VerificationReport};
use olpi::{
    load_instance, run_online_pi, save_instance, CostVector, ImprovementRule, MdpInstance, OnlineConfig, OnlineMode,
    StationaryPolicy,
};

use crate::{Algorithm, CompareArgs, GenArgs, ModeArg, RuleArg, SolveArgs, TableFormat, VerifyArgs};

pub const EXIT_FAILED_CHECKS: u8 = 1;
pub const EXIT_INVALID: u8 = 2;
pub const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn invalid(message: impl Into<String>) -> Self {
        Self { code: EXIT_INVALID, message: message.into() }
    }
}

impl From<olpi::ModelError> for CliError {
    fn from(e: olpi::ModelError) -> Self {
        Self::invalid(e.to_string())
    }
}

impl From<RunLogError> for CliError {
    fn from(e: RunLogError) -> Self {
        Self::invalid(e.to_string())
    }
}

type CliResult = Result<ExitCode, CliError>;

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::invalid(format!("cannot read {}: {}", path.display(), e)))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::invalid(format!("cannot write {}: {}", path.display(), e)))
}

fn resolve_instance(arg: &str) -> Result<MdpInstance, CliError> {
    if arg == "counterexample" && !Path::new(arg).exists() {
        return Ok(build_counterexample());
    }
    let text = read(Path::new(arg))?;
    load_instance(&text).map_err(|e| CliError::invalid(format!("{}: {}", arg, e)))
}

fn resolve_policy(instance: &MdpInstance, arg: &str) -> Result<StationaryPolicy, CliError> {
    let policy = match arg {
        "first" => StationaryPolicy::first_actions(instance),
        "mubar" => counterexample_mubar(instance)?,
        "mustar" => counterexample_mustar(instance)?,
        labels => {
            let parts: Vec<&str> = labels.split(',').map(str::trim).collect();
            StationaryPolicy::from_labels(instance, &parts)?
        }
    };
    Ok(policy)
}

fn resolve_x0(instance: &MdpInstance, x0: usize) -> Result<usize, CliError> {
    if x0 == 0 || x0 > instance.n() {
        return Err(CliError::invalid(format!("--x0 {} outside 1..={}", x0, instance.n())));
    }
    Ok(x0 - 1)
}

fn rule(arg: RuleArg) -> ImprovementRule {
    match arg {
        RuleArg::Argmin => ImprovementRule::Argmin,
        RuleArg::FirstImproving => ImprovementRule::FirstImproving,
    }
}

fn state_set(states: &[usize]) -> String {
    let parts: Vec<String> = states.iter().map(|x| (x + 1).to_string()).collect();
    format!("{{{}}}", parts.join(","))
}

pub fn solve(args: &SolveArgs) -> CliResult {
    let instance = resolve_instance(&args.instance)?;
    let initial = resolve_policy(&instance, &args.initial)?;
    let (file, converged) = match args.algorithm {
        Algorithm::Vi => {
            let j0 = CostVector::zeros(instance.n());
            let result = value_iteration(&instance, &j0, args.tol, args.max_iters)?;
            println!("algorithm: vi, {} iterations", result.iterations);
            let file = RunLogFile::from_vi(&instance, &j0, args.tol, args.max_iters, &result);
            println!("J = {}", result.values);
            println!("greedy policy = {}", greedy_policy(&instance, &result.values)?.describe(&instance));
            (file, result.converged)
        }
        Algorithm::Pi => {
            let trace = run_classical_pi(&instance, &initial, args.max_iters)?;
            println!("algorithm: pi, {} evaluations", trace.iterates.len());
            println!("J = {}", trace.final_cost());
            println!("policy = {}", trace.final_policy().describe(&instance));
            if check_global_optimality(&instance, trace.final_policy(), OPTIMALITY_TOL)? {
                println!("globally optimal");
            }
            (RunLogFile::from_pi(&instance, &trace, args.max_iters), trace.converged())
        }
        Algorithm::Online | Algorithm::Rollout => {
            let seed = args
                .seed
                .ok_or_else(|| CliError::invalid("--seed is required for online and rollout runs"))?;
            let mode = match (args.algorithm, args.mode) {
                (Algorithm::Rollout, _) => OnlineMode::Rollout,
                (_, ModeArg::Plain) => OnlineMode::Plain,
                (_, ModeArg::Exploration) => OnlineMode::Exploration,
            };
            let config = OnlineConfig {
                mode,
                improvement_rule: rule(args.rule),
                epsilon_improve: args.epsilon,
                max_steps: args.max_steps,
                stable_window: args.stable_window,
                seed,
            };
            let x0 = resolve_x0(&instance, args.x0)?;
            let log = run_online_pi(&instance, x0, &initial, &config)?;
            println!(
                "algorithm: {} ({}), seed {}, {} steps, {}",
                if mode == OnlineMode::Rollout { "rollout" } else { "online" },
                mode.as_str(),
                seed,
                log.steps.len(),
                if log.converged() { "converged" } else { "max steps reached" }
            );
            println!("J = {}", log.final_cost);
            println!("policy = {}", log.final_policy.describe(&instance));
            let changes = log.policy_changes();
            let mut summary = vec![if changes == 0 {
                "policy unchanged".to_string()
            } else {
                format!("policy changed at {} steps", changes)
            }];
            if check_local_optimality(&instance, &log.final_policy, &log.recurrent_estimate, OPTIMALITY_TOL)? {
                summary.push(format!("locally optimal over {}", state_set(&log.recurrent_estimate)));
            }
            summary.push(
                if check_global_optimality(&instance, &log.final_policy, OPTIMALITY_TOL)? {
                    "globally optimal"
                } else {
                    "not globally optimal"
                }
                .to_string(),
            );
            println!("{}", summary.join("; "));
            (RunLogFile::from_online(&instance, &log), log.converged())
        }
    };
    write(&args.log, &file.to_text())?;
    println!("run log: {}", args.log.display());
    if converged {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("not converged within limits");
        Ok(ExitCode::from(EXIT_NOT_CONVERGED))
    }
}

pub fn verify(args: &VerifyArgs) -> CliResult {
    let instance = resolve_instance(&args.instance)?;
    let text = read(&args.log)?;
    let file = RunLogFile::parse(&text)?;
    file.check_digest(&instance)?;

    let mut report = match &file.header.run {
        RunSpec::Online { .. } => verify_run(&instance, &file.to_online(&instance)?),
        RunSpec::Pi { .. } => verify_pi_trace(&instance, &file.to_pi(&instance)?),
        RunSpec::Vi { .. } => VerificationReport::default(),
    };
    let replayed = replay(&instance, &file.header)?;
    let original = file.to_text();
    let replay_text = replayed.to_text();
    let finding = match original.lines().zip(replay_text.lines()).position(|(a, b)| a != b) {
        None if original.lines().count() == replay_text.lines().count() => Finding {
            check: "replay",
            passed: true,
            step: None,
            detail: "header config and seed reproduce the log exactly".into(),
        },
        None => Finding { check: "replay", passed: false, step: None, detail: "replay has a different length".into() },
        Some(line) => Finding {
            check: "replay",
            passed: false,
            step: None,
            detail: format!("replay diverges at line {}", line + 1),
        },
    };
    report.push(finding);
    print!("{}", report);
    if report.passed() {
        println!("verification passed");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("verification failed");
        Ok(ExitCode::from(EXIT_FAILED_CHECKS))
    }
}

pub fn gen(args: &GenArgs) -> CliResult {
    let params = GeneratorParams {
        n: args.n,
        max_actions: args.max_actions,
        branching: args.branching,
        cost_range: (args.cost_min, args.cost_max),
        discount: args.discount,
        seed: args.seed,
    };
    let instance = generate_random(&params)?;
    write(&args.output, &save_instance(&instance))?;
    println!("wrote {} (n={}, seed={}, {})", args.output.display(), instance.n(), args.seed, instance.digest());
    Ok(ExitCode::SUCCESS)
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::invalid(format!("invalid --seeds {:?}", spec));
    let mut seeds = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((lo, hi)) = part.split_once("..") {
            let lo: u64 = lo.parse().map_err(|_| bad())?;
            let hi: u64 = hi.parse().map_err(|_| bad())?;
            if lo > hi {
                return Err(bad());
            }
            seeds.extend(lo..=hi);
        } else {
            seeds.push(part.parse().map_err(|_| bad())?);
        }
    }
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

pub fn compare(args: &CompareArgs) -> CliResult {
    let instance = resolve_instance(&args.instance)?;
    let mu0 = resolve_policy(&instance, &args.initial)?;
    let x0 = resolve_x0(&instance, args.x0)?;
    let seeds = parse_seeds(&args.seeds)?;
    let template = OnlineConfig {
        mode: OnlineMode::Plain,
        improvement_rule: rule(args.rule),
        epsilon_improve: args.epsilon,
        max_steps: args.max_steps,
        stable_window: args.stable_window,
        seed: 0,
    };
    let table =
        run_comparison(&instance, x0, &mu0, &seeds, &template).map_err(|e| CliError::invalid(e.to_string()))?;
    let text = match args.format {
        TableFormat::Csv => table.to_csv(),
        TableFormat::Jsonl => table.to_json_lines(),
    };
    match &args.output {
        Some(path) => write(path, &text)?,
        None => print!("{}", text),
    }
    Ok(ExitCode::SUCCESS)
}
