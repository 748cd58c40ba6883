//! State trajectories, plan validation and the on-disk dataset formats.
//!
//! A trajectory file looks like
//!
//! ```text
//! TRAJ1 blocksworld bw-4-0
//! goal: (on b2 b1)
//! state: (clear b1) (clear b2) (handempty) (ontable b1) (ontable b2)
//! state: (clear b1) (holding b2) (ontable b1)
//! state: (clear b2) (handempty) (on b2 b1) (ontable b1)
//! plan: (pick-up b2) (stack b2 b1)
//! ```
//!
//! Atoms appear in canonical order. The trailing `plan:` line is optional;
//! without it the actions are recovered from consecutive states.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::pddl::{AtomId, GroundedTask, SymbolicState};
use crate::search::Plan;

pub const TRAJ_MAGIC: &str = "TRAJ1";

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub domain_id: String,
    pub problem_id: String,
    /// `s_0 .. s_T`
    pub states: Vec<SymbolicState>,
    pub plan: Plan,
    pub goal: Vec<AtomId>,
}

impl Trajectory {
    pub fn task_id(&self) -> String {
        format!("{}/{}", self.domain_id, self.problem_id)
    }

    /// Number of actions, `T`.
    pub fn len(&self) -> usize {
        self.plan.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plan.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvalidReason {
    UnknownAction,
    Inapplicable,
    GoalUnsatisfied,
}

impl fmt::Display for InvalidReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InvalidReason::UnknownAction => "unknown-action",
            InvalidReason::Inapplicable => "inapplicable",
            InvalidReason::GoalUnsatisfied => "goal-unsatisfied",
        })
    }
}

/// `step` is 1-based over plan actions; a goal failure is attributed to
/// step `T` (0 for an empty plan).
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid plan at step {step}: {reason}")]
pub struct InvalidPlan {
    pub step: usize,
    pub reason: InvalidReason,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Validation {
    Valid,
    Invalid(InvalidPlan),
}

impl Validation {
    pub fn is_valid(&self) -> bool {
        matches!(self, Validation::Valid)
    }
}

/// Folds `apply` over the plan. Fails on the first bad step rather than
/// returning a partial trajectory.
pub fn reconstruct(task: &GroundedTask, plan: &Plan) -> Result<Trajectory, InvalidPlan> {
    let mut states = Vec::with_capacity(plan.len() + 1);
    states.push(task.initial.clone());
    for (i, name) in plan.actions.iter().enumerate() {
        let step = i + 1;
        let action = task
            .action_id(name)
            .map(|a| &task.actions[a])
            .ok_or(InvalidPlan { step, reason: InvalidReason::UnknownAction })?;
        let next = task
            .apply(states.last().unwrap(), action)
            .map_err(|_| InvalidPlan { step, reason: InvalidReason::Inapplicable })?;
        states.push(next);
    }
    if !task.goal_satisfied(states.last().unwrap()) {
        return Err(InvalidPlan { step: plan.len(), reason: InvalidReason::GoalUnsatisfied });
    }
    let mut plan = plan.clone();
    plan.actions = plan
        .actions
        .iter()
        .map(|n| task.actions[task.action_id(n).unwrap()].name.clone())
        .collect();
    Ok(Trajectory {
        domain_id: task.domain_name.clone(),
        problem_id: task.problem_name.clone(),
        states,
        plan,
        goal: task.goal.clone(),
    })
}

/// Total plan check; never panics on malformed input.
pub fn validate(task: &GroundedTask, plan: &Plan) -> Validation {
    match reconstruct(task, plan) {
        Ok(_) => Validation::Valid,
        Err(e) => Validation::Invalid(e),
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TrajectoryFormatError {
    #[error("expected header '{TRAJ_MAGIC} <domain> <problem>', found '{0}'")]
    Version(String),
    #[error("line {line}: malformed atom list '{text}'")]
    MalformedAtom { line: usize, text: String },
    #[error("line {line}: unknown atom {atom}")]
    UnknownAtom { line: usize, atom: String },
    #[error("line {line}: expected '{expected}'")]
    MissingSection { line: usize, expected: &'static str },
    #[error("trajectory has no states")]
    NoStates,
    #[error("stored states are not a valid execution: {0}")]
    Inconsistent(String),
}

pub fn write_trajectory(task: &GroundedTask, traj: &Trajectory) -> String {
    let mut out = format!("{TRAJ_MAGIC} {} {}\n", traj.domain_id, traj.problem_id);
    out.push_str("goal:");
    for &g in &traj.goal {
        out.push(' ');
        out.push_str(task.atom_name(g));
    }
    out.push('\n');
    for s in &traj.states {
        out.push_str("state:");
        for a in s.iter() {
            out.push(' ');
            out.push_str(task.atom_name(a));
        }
        out.push('\n');
    }
    out.push_str("plan:");
    for a in &traj.plan.actions {
        out.push(' ');
        out.push_str(a);
    }
    out.push('\n');
    out
}

/// Splits `(a b) (c d)` into `["(a b)", "(c d)"]`.
fn split_atoms(text: &str) -> Option<Vec<String>> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut cur = String::new();
    for c in text.chars() {
        match c {
            '(' => {
                if depth > 0 {
                    return None;
                }
                depth = 1;
                cur.push(c);
            }
            ')' => {
                if depth == 0 {
                    return None;
                }
                depth = 0;
                cur.push(c);
                out.push(std::mem::take(&mut cur));
            }
            c if depth == 0 && !c.is_whitespace() => return None,
            c => {
                if depth > 0 {
                    cur.push(c);
                }
            }
        }
    }
    (depth == 0).then_some(out)
}

pub fn read_trajectory(text: &str, task: &GroundedTask) -> Result<Trajectory, TrajectoryFormatError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    let (_, header) = lines.next().ok_or_else(|| TrajectoryFormatError::Version(String::new()))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 3 || parts[0] != TRAJ_MAGIC {
        return Err(TrajectoryFormatError::Version(header.to_string()));
    }
    let atoms_of = |line: usize, body: &str| -> Result<Vec<AtomId>, TrajectoryFormatError> {
        let atoms = split_atoms(body).ok_or_else(|| TrajectoryFormatError::MalformedAtom { line, text: body.to_string() })?;
        atoms
            .into_iter()
            .map(|a| task.atom_id(&a).ok_or(TrajectoryFormatError::UnknownAtom { line, atom: a }))
            .collect()
    };

    let (goal_line, goal_text) = lines.next().ok_or(TrajectoryFormatError::MissingSection { line: 2, expected: "goal:" })?;
    let goal_body = goal_text
        .strip_prefix("goal:")
        .ok_or(TrajectoryFormatError::MissingSection { line: goal_line, expected: "goal:" })?;
    let mut goal = atoms_of(goal_line, goal_body)?;
    goal.sort_unstable();

    let mut states = Vec::new();
    let mut plan = None;
    for (line, text) in lines {
        if let Some(body) = text.strip_prefix("state:") {
            if plan.is_some() {
                return Err(TrajectoryFormatError::MissingSection { line, expected: "end of file after plan:" });
            }
            states.push(SymbolicState::from_atoms(task.num_atoms(), atoms_of(line, body)?));
        } else if let Some(body) = text.strip_prefix("plan:") {
            let actions = split_atoms(body).ok_or_else(|| TrajectoryFormatError::MalformedAtom { line, text: body.to_string() })?;
            plan = Some(Plan::new(actions));
        } else {
            return Err(TrajectoryFormatError::MissingSection { line, expected: "state:" });
        }
    }
    if states.is_empty() {
        return Err(TrajectoryFormatError::NoStates);
    }

    let plan = match plan {
        Some(p) => p,
        None => recover_plan(task, &states)?,
    };
    if plan.len() + 1 != states.len() {
        return Err(TrajectoryFormatError::Inconsistent(format!(
            "{} states but {} actions",
            states.len(),
            plan.len()
        )));
    }
    for (t, name) in plan.actions.iter().enumerate() {
        let ok = task
            .action_id(name)
            .and_then(|a| task.apply(&states[t], &task.actions[a]).ok())
            .is_some_and(|next| next == states[t + 1]);
        if !ok {
            return Err(TrajectoryFormatError::Inconsistent(format!("step {} ({name})", t + 1)));
        }
    }
    Ok(Trajectory {
        domain_id: parts[1].to_string(),
        problem_id: parts[2].to_string(),
        states,
        plan,
        goal,
    })
}

/// Picks, for every consecutive pair, the canonically first action linking
/// them.
fn recover_plan(task: &GroundedTask, states: &[SymbolicState]) -> Result<Plan, TrajectoryFormatError> {
    let mut ids = Vec::new();
    for (t, pair) in states.windows(2).enumerate() {
        let a = task
            .successors(&pair[0])
            .into_iter()
            .find(|(_, s)| *s == pair[1])
            .map(|(a, _)| a)
            .ok_or_else(|| TrajectoryFormatError::Inconsistent(format!("no action links states {t} and {}", t + 1)))?;
        ids.push(a);
    }
    Ok(Plan::from_action_ids(task, &ids))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SplitName {
    Train,
    Validation,
    Interpolation,
    Extrapolation,
}

impl SplitName {
    pub const ALL: [SplitName; 4] =
        [SplitName::Train, SplitName::Validation, SplitName::Interpolation, SplitName::Extrapolation];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Interpolation => "interpolation",
            SplitName::Extrapolation => "extrapolation",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SplitName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| format!("unknown split '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub split: SplitName,
    pub domain: String,
    pub problem: PathBuf,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitManifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ManifestError {
    #[error("line {line}: expected 'split<TAB>domain<TAB>problem<TAB>size'")]
    Malformed { line: usize },
    #[error("problem {0} appears in more than one split")]
    Overlap(PathBuf),
    #[error("extrapolation size {size} does not exceed the training maximum {train_max}")]
    NotExtrapolating { size: usize, train_max: usize },
}

impl SplitManifest {
    pub fn split(&self, name: SplitName) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == name)
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}\t{}\t{}\t{}\n", e.split, e.domain, e.problem.display(), e.size))
            .collect()
    }

    /// Parses and checks split integrity. `#` lines are comments.
    pub fn parse(text: &str) -> Result<Self, ManifestError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let malformed = ManifestError::Malformed { line: i + 1 };
            if f.len() != 4 {
                return Err(malformed);
            }
            entries.push(ManifestEntry {
                split: f[0].parse().map_err(|_| ManifestError::Malformed { line: i + 1 })?,
                domain: f[1].to_string(),
                problem: PathBuf::from(f[2]),
                size: f[3].trim().parse().map_err(|_| malformed)?,
            });
        }
        let manifest = Self { entries };
        manifest.check()?;
        Ok(manifest)
    }

    pub fn check(&self) -> Result<(), ManifestError> {
        let mut seen = std::collections::HashMap::<&Path, SplitName>::new();
        for e in &self.entries {
            if let Some(prev) = seen.insert(&e.problem, e.split) {
                if prev != e.split || self.entries.iter().filter(|x| x.problem == e.problem).count() > 1 {
                    return Err(ManifestError::Overlap(e.problem.clone()));
                }
            }
        }
        if let Some(train_max) = self.split(SplitName::Train).map(|e| e.size).max() {
            if let Some(e) = self.split(SplitName::Extrapolation).find(|e| e.size <= train_max) {
                return Err(ManifestError::NotExtrapolating { size: e.size, train_max });
            }
        }
        Ok(())
    }
}
