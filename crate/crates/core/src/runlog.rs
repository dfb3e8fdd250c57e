//! Run-log files: one JSON object per line.
//!
//! The first line is a `header` carrying the tool version, the instance
//! digest and everything needed to replay the run (algorithm, configuration,
//! seed, initial state and policy). Body lines are `step` records (on-line
//! runs), `iterate` records (classical PI) or `sweep` records (value
//! iteration). The last line is a `footer` with the final policy, final cost
//! vector and result flags. States are 1-based, actions are labels, and floats
//! are written in shortest round-trip form so a replay reproduces the body
//! byte for byte.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bellman::{check_global_optimality, check_invariant_set, check_local_optimality, value_iteration, OPTIMALITY_TOL};
use crate::classical::{run_classical_pi, PiIterate, PiTermination, PiTrace};
use crate::error::ModelError;
use crate::model::{CostVector, MdpInstance, StationaryPolicy};
use crate::online::{run_online_pi, ExplorationRecord, OnlineConfig, OnlineMode, OnlineRunLog, StepRecord, Termination};

pub const TOOL_NAME: &str = "olpi";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum RunLogError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("malformed run log: {0}")]
    Malformed(String),
    #[error("instance digest mismatch: log has {expected}, instance is {found}")]
    DigestMismatch { expected: String, found: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case", deny_unknown_fields)]
pub enum RunSpec {
    Online { config: OnlineConfig, x0: usize, initial_policy: Vec<String> },
    Pi { initial_policy: Vec<String>, max_iters: usize },
    Vi { initial_cost: Vec<f64>, tol: f64, max_iters: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub tool: String,
    pub version: String,
    pub instance_digest: String,
    pub run: RunSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExploreLine {
    pub state: usize,
    pub q: Vec<f64>,
    pub action: String,
    pub changed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepLine {
    pub k: usize,
    pub state: usize,
    pub q: Vec<f64>,
    pub action: String,
    pub changed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explore: Option<ExploreLine>,
    pub next: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterateLine {
    pub k: usize,
    pub policy: Vec<String>,
    pub cost: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepLine {
    pub k: usize,
    pub delta: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Flags {
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_opt: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invariant: Option<bool>,
    pub global_opt: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Footer {
    pub final_policy: Vec<String>,
    pub final_cost: Vec<f64>,
    pub termination: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_changes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visit_counts: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recurrent_set: Option<Vec<usize>>,
    pub flags: Flags,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line {
    Header(Header),
    Step(StepLine),
    Iterate(IterateLine),
    Sweep(SweepLine),
    Footer(Footer),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Body {
    Steps(Vec<StepLine>),
    Iterates(Vec<IterateLine>),
    Sweeps(Vec<SweepLine>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunLogFile {
    pub header: Header,
    pub body: Body,
    pub footer: Footer,
}

fn labels(instance: &MdpInstance, policy: &StationaryPolicy) -> Vec<String> {
    policy.labels(instance).into_iter().map(String::from).collect()
}

fn one_based(states: &[usize]) -> Vec<usize> {
    states.iter().map(|x| x + 1).collect()
}

fn header(instance: &MdpInstance, run: RunSpec) -> Header {
    Header {
        tool: TOOL_NAME.to_string(),
        version: TOOL_VERSION.to_string(),
        instance_digest: instance.digest(),
        run,
    }
}

impl RunLogFile {
    pub fn from_online(instance: &MdpInstance, log: &OnlineRunLog) -> Self {
        let label = |x: usize, u: usize| instance.action(x, u).label.clone();
        let steps = log
            .steps
            .iter()
            .map(|s| StepLine {
                k: s.k,
                state: s.state + 1,
                q: s.q_factors.clone(),
                action: label(s.state, s.action),
                changed: s.changed,
                explore: s.exploration.as_ref().map(|e| ExploreLine {
                    state: e.state + 1,
                    q: e.q_factors.clone(),
                    action: label(e.state, e.action),
                    changed: e.changed,
                }),
                next: s.next_state + 1,
                cost: s.cost_snapshot.as_ref().map(|c| c.as_slice().to_vec()),
            })
            .collect();
        let (local_opt, invariant) = if log.config.mode == OnlineMode::Plain {
            (
                check_local_optimality(instance, &log.final_policy, &log.recurrent_estimate, OPTIMALITY_TOL).ok(),
                check_invariant_set(instance, &log.final_policy, &log.recurrent_estimate).ok(),
            )
        } else {
            (None, None)
        };
        RunLogFile {
            header: header(
                instance,
                RunSpec::Online {
                    config: log.config.clone(),
                    x0: log.x0 + 1,
                    initial_policy: labels(instance, &log.initial_policy),
                },
            ),
            body: Body::Steps(steps),
            footer: Footer {
                final_policy: labels(instance, &log.final_policy),
                final_cost: log.final_cost.as_slice().to_vec(),
                termination: match log.termination {
                    Termination::Converged => "converged",
                    Termination::MaxSteps => "max_steps",
                }
                .to_string(),
                policy_changes: Some(log.policy_changes()),
                visit_counts: Some(log.visit_counts.clone()),
                recurrent_set: Some(one_based(&log.recurrent_estimate)),
                flags: Flags {
                    converged: log.converged(),
                    local_opt,
                    invariant,
                    global_opt: check_global_optimality(instance, &log.final_policy, OPTIMALITY_TOL).unwrap_or(false),
                },
            },
        }
    }

    pub fn from_pi(instance: &MdpInstance, trace: &PiTrace, max_iters: usize) -> Self {
        let iterates = trace
            .iterates
            .iter()
            .enumerate()
            .map(|(k, it)| IterateLine { k, policy: labels(instance, &it.policy), cost: it.cost.as_slice().to_vec() })
            .collect();
        let initial = &trace.iterates[0].policy;
        RunLogFile {
            header: header(instance, RunSpec::Pi { initial_policy: labels(instance, initial), max_iters }),
            body: Body::Iterates(iterates),
            footer: Footer {
                final_policy: labels(instance, trace.final_policy()),
                final_cost: trace.final_cost().as_slice().to_vec(),
                termination: match trace.termination {
                    PiTermination::PolicyRepeated => "policy_repeated",
                    PiTermination::MaxIters => "max_iters",
                }
                .to_string(),
                policy_changes: Some(trace.iterates.len() - 1),
                visit_counts: None,
                recurrent_set: None,
                flags: Flags {
                    converged: trace.converged(),
                    local_opt: None,
                    invariant: None,
                    global_opt: check_global_optimality(instance, trace.final_policy(), OPTIMALITY_TOL)
                        .unwrap_or(false),
                },
            },
        }
    }

    /// Logs a value-iteration run; the footer policy is greedy for the final iterate.
    pub fn from_vi(
        instance: &MdpInstance,
        initial: &CostVector,
        tol: f64,
        max_iters: usize,
        result: &crate::bellman::Iterated,
    ) -> Self {
        let policy = crate::bellman::greedy_unchecked(instance, result.values.as_slice());
        RunLogFile {
            header: header(instance, RunSpec::Vi { initial_cost: initial.as_slice().to_vec(), tol, max_iters }),
            body: Body::Sweeps(
                result.deltas.iter().enumerate().map(|(k, &delta)| SweepLine { k: k + 1, delta }).collect(),
            ),
            footer: Footer {
                final_policy: labels(instance, &policy),
                final_cost: result.values.as_slice().to_vec(),
                termination: if result.converged { "converged" } else { "max_iters" }.to_string(),
                policy_changes: None,
                visit_counts: None,
                recurrent_set: None,
                flags: Flags {
                    converged: result.converged,
                    local_opt: None,
                    invariant: None,
                    global_opt: check_global_optimality(instance, &policy, OPTIMALITY_TOL).unwrap_or(false),
                },
            },
        }
    }

    pub fn to_text(&self) -> String {
        let mut lines = vec![Line::Header(self.header.clone())];
        match &self.body {
            Body::Steps(s) => lines.extend(s.iter().cloned().map(Line::Step)),
            Body::Iterates(s) => lines.extend(s.iter().cloned().map(Line::Iterate)),
            Body::Sweeps(s) => lines.extend(s.iter().cloned().map(Line::Sweep)),
        }
        lines.push(Line::Footer(self.footer.clone()));
        lines
            .iter()
            .map(|l| serde_json::to_string(l).expect("run-log lines serialize") + "\n")
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self, RunLogError> {
        let mut lines = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let line: Line = serde_json::from_str(raw)
                .map_err(|e| RunLogError::Parse { line: i + 1, message: e.to_string() })?;
            lines.push(line);
        }
        let mut iter = lines.into_iter();
        let header = match iter.next() {
            Some(Line::Header(h)) => h,
            _ => return Err(RunLogError::Malformed("first line must be a header".into())),
        };
        let mut rest: Vec<Line> = iter.collect();
        let footer = match rest.pop() {
            Some(Line::Footer(f)) => f,
            _ => return Err(RunLogError::Malformed("last line must be a footer".into())),
        };
        let body = match &header.run {
            RunSpec::Online { .. } => Body::Steps(
                rest.into_iter()
                    .map(|l| match l {
                        Line::Step(s) => Ok(s),
                        _ => Err(RunLogError::Malformed("expected step records".into())),
                    })
                    .collect::<Result<_, _>>()?,
            ),
            RunSpec::Pi { .. } => Body::Iterates(
                rest.into_iter()
                    .map(|l| match l {
                        Line::Iterate(s) => Ok(s),
                        _ => Err(RunLogError::Malformed("expected iterate records".into())),
                    })
                    .collect::<Result<_, _>>()?,
            ),
            RunSpec::Vi { .. } => Body::Sweeps(
                rest.into_iter()
                    .map(|l| match l {
                        Line::Sweep(s) => Ok(s),
                        _ => Err(RunLogError::Malformed("expected sweep records".into())),
                    })
                    .collect::<Result<_, _>>()?,
            ),
        };
        Ok(RunLogFile { header, body, footer })
    }

    pub fn check_digest(&self, instance: &MdpInstance) -> Result<(), RunLogError> {
        let found = instance.digest();
        if found != self.header.instance_digest {
            return Err(RunLogError::DigestMismatch { expected: self.header.instance_digest.clone(), found });
        }
        Ok(())
    }

    /// Rebuilds the in-memory on-line run log.
    pub fn to_online(&self, instance: &MdpInstance) -> Result<OnlineRunLog, RunLogError> {
        let (config, x0, initial) = match &self.header.run {
            RunSpec::Online { config, x0, initial_policy } => (config, *x0, initial_policy),
            _ => return Err(RunLogError::Malformed("not an on-line run".into())),
        };
        let steps = match &self.body {
            Body::Steps(s) => s,
            _ => return Err(RunLogError::Malformed("not an on-line run".into())),
        };
        let n = instance.n();
        let state = |s: usize| -> Result<usize, RunLogError> {
            if s == 0 || s > n {
                Err(RunLogError::Malformed(format!("state {} out of range", s)))
            } else {
                Ok(s - 1)
            }
        };
        let action = |x: usize, label: &str| -> Result<usize, RunLogError> {
            instance
                .action_index(x, label)
                .ok_or_else(|| ModelError::UnknownAction { state: x + 1, label: label.to_string() }.into())
        };
        let recurrent = self
            .footer
            .recurrent_set
            .as_ref()
            .ok_or_else(|| RunLogError::Malformed("footer lacks recurrent_set".into()))?
            .iter()
            .map(|&s| state(s))
            .collect::<Result<_, _>>()?;
        let steps = steps
            .iter()
            .map(|s| {
                let x = state(s.state)?;
                Ok(StepRecord {
                    k: s.k,
                    state: x,
                    q_factors: s.q.clone(),
                    action: action(x, &s.action)?,
                    changed: s.changed,
                    exploration: s
                        .explore
                        .as_ref()
                        .map(|e| -> Result<ExplorationRecord, RunLogError> {
                            let xb = state(e.state)?;
                            Ok(ExplorationRecord {
                                state: xb,
                                q_factors: e.q.clone(),
                                action: action(xb, &e.action)?,
                                changed: e.changed,
                            })
                        })
                        .transpose()?,
                    next_state: state(s.next)?,
                    cost_snapshot: s.cost.clone().map(CostVector::new),
                })
            })
            .collect::<Result<Vec<_>, RunLogError>>()?;
        Ok(OnlineRunLog {
            config: config.clone(),
            x0: state(x0)?,
            initial_policy: StationaryPolicy::from_labels(instance, initial)?,
            initial_cost: crate::bellman::evaluate_policy_exact(
                instance,
                &StationaryPolicy::from_labels(instance, initial)?,
            )?,
            steps,
            final_policy: StationaryPolicy::from_labels(instance, &self.footer.final_policy)?,
            final_cost: CostVector::new(self.footer.final_cost.clone()),
            visit_counts: self.footer.visit_counts.clone().unwrap_or_default(),
            recurrent_estimate: recurrent,
            termination: match self.footer.termination.as_str() {
                "converged" => Termination::Converged,
                "max_steps" => Termination::MaxSteps,
                other => return Err(RunLogError::Malformed(format!("unknown termination {:?}", other))),
            },
        })
    }

    /// Rebuilds a classical PI trace.
    pub fn to_pi(&self, instance: &MdpInstance) -> Result<PiTrace, RunLogError> {
        let iterates = match &self.body {
            Body::Iterates(its) if !its.is_empty() => its,
            _ => return Err(RunLogError::Malformed("not a policy iteration run".into())),
        };
        let iterates = iterates
            .iter()
            .map(|it| {
                Ok(PiIterate {
                    policy: StationaryPolicy::from_labels(instance, &it.policy)?,
                    cost: CostVector::new(it.cost.clone()),
                })
            })
            .collect::<Result<Vec<_>, RunLogError>>()?;
        let termination = match self.footer.termination.as_str() {
            "policy_repeated" => PiTermination::PolicyRepeated,
            "max_iters" => PiTermination::MaxIters,
            other => return Err(RunLogError::Malformed(format!("unknown termination {:?}", other))),
        };
        Ok(PiTrace { iterates, termination })
    }
}

/// Re-executes the run described by `header` on `instance`.
pub fn replay(instance: &MdpInstance, header: &Header) -> Result<RunLogFile, RunLogError> {
    let found = instance.digest();
    if found != header.instance_digest {
        return Err(RunLogError::DigestMismatch { expected: header.instance_digest.clone(), found });
    }
    let mut file = match &header.run {
        RunSpec::Online { config, x0, initial_policy } => {
            if *x0 == 0 || *x0 > instance.n() {
                return Err(RunLogError::Malformed(format!("x0 {} out of range", x0)));
            }
            let mu0 = StationaryPolicy::from_labels(instance, initial_policy)?;
            let log = run_online_pi(instance, x0 - 1, &mu0, config)?;
            RunLogFile::from_online(instance, &log)
        }
        RunSpec::Pi { initial_policy, max_iters } => {
            let mu0 = StationaryPolicy::from_labels(instance, initial_policy)?;
            let trace = run_classical_pi(instance, &mu0, *max_iters)?;
            RunLogFile::from_pi(instance, &trace, *max_iters)
        }
        RunSpec::Vi { initial_cost, tol, max_iters } => {
            let j0 = CostVector::new(initial_cost.clone());
            let result = value_iteration(instance, &j0, *tol, *max_iters)?;
            RunLogFile::from_vi(instance, &j0, *tol, *max_iters, &result)
        }
    };
    // Keep the recorded tool identity so a replay compares on content only.
    file.header.tool = header.tool.clone();
    file.header.version = header.version.clone();
    Ok(file)
}
