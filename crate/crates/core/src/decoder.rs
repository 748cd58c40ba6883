//! Neuro-symbolic plan decoding: follow the model's predicted embedding by
//! always stepping to the nearest valid symbolic successor.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::str::FromStr;

use crate::encoders::{Encoder, EncoderError};
use crate::models::{predict, EmbeddedTrajectory, Memory, ModelError, OracleDeltaModel, TargetMode, TransitionModel};
use crate::pddl::{GroundedTask, SymbolicState};
use crate::search::Plan;
use crate::trajectory::{reconstruct, validate, Validation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Distance {
    Euclidean,
    Cosine,
}

impl Distance {
    pub fn for_mode(mode: TargetMode) -> Self {
        match mode {
            TargetMode::Delta => Distance::Euclidean,
            TargetMode::State => Distance::Cosine,
        }
    }

    pub fn between(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Distance::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Distance::Cosine => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - dot / (na * nb)
                }
            }
        }
    }
}

impl FromStr for Distance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euclidean" => Ok(Distance::Euclidean),
            "cosine" => Ok(Distance::Cosine),
            other => Err(format!("unknown distance '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RevisitPolicy {
    Allow,
    /// Step back into an already visited state only if every successor is one.
    AvoidIfAlternative,
}

impl FromStr for RevisitPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "allow" => Ok(RevisitPolicy::Allow),
            "avoid" | "avoid-if-alternative" => Ok(RevisitPolicy::AvoidIfAlternative),
            other => Err(format!("unknown revisit policy '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    pub beam_width: usize,
    pub max_steps: usize,
    /// `None` picks the distance matching the model's mode.
    pub distance: Option<Distance>,
    pub revisit: RevisitPolicy,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { beam_width: 3, max_steps: 100, distance: None, revisit: RevisitPolicy::AvoidIfAlternative }
    }
}

impl DecodeConfig {
    pub fn greedy() -> Self {
        Self { beam_width: 1, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Success,
    HorizonExceeded,
    DeadEnd,
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Outcome::Success => "success",
            Outcome::HorizonExceeded => "horizon-exceeded",
            Outcome::DeadEnd => "dead-end",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub action: String,
    pub distance: f64,
    pub successors: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub outcome: Outcome,
    /// Actions taken by the returned rollout; a valid plan on success.
    pub plan: Plan,
    pub visited: usize,
    pub steps: Vec<StepRecord>,
    pub model_calls: usize,
}

impl RolloutResult {
    pub fn succeeded(&self) -> bool {
        self.outcome == Outcome::Success
    }

    /// One line per step: `t <action> dist=<v> |succ|=<n>`.
    pub fn log(&self) -> String {
        let mut out = String::new();
        for (t, s) in self.steps.iter().enumerate() {
            let _ = writeln!(out, "{t} {} dist={} |succ|={}", s.action, s.distance, s.successors);
        }
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("decoded plan failed replay: {0}")]
    Unsound(String),
}

#[derive(Debug, Clone)]
pub struct Candidate {
    pub action: usize,
    pub state: SymbolicState,
    pub embedding: Vec<f64>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("no candidates to choose from")]
pub struct EmptyCandidates;

/// Candidate indices ordered by distance to `target`; equal distances keep
/// the candidates' order, which is canonical action order.
pub fn rank_candidates(target: &[f64], candidates: &[Candidate], distance: Distance) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(usize, f64)> =
        candidates.iter().enumerate().map(|(i, c)| (i, distance.between(&c.embedding, target))).collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
    ranked
}

/// Index of the candidate nearest to `target`.
pub fn select_successor(target: &[f64], candidates: &[Candidate], distance: Distance) -> Result<(usize, f64), EmptyCandidates> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let d = distance.between(&c.embedding, target);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.ok_or(EmptyCandidates)
}

struct Rollout<'a> {
    task: &'a GroundedTask,
    model: &'a dyn TransitionModel,
    encoder: &'a Encoder,
    goal: Vec<f64>,
    distance: Distance,
    cache: HashMap<SymbolicState, Vec<f64>>,
    model_calls: usize,
}

impl Rollout<'_> {
    fn embed(&mut self, s: &SymbolicState) -> Result<Vec<f64>, EncoderError> {
        if let Some(v) = self.cache.get(s) {
            return Ok(v.clone());
        }
        let v = self.encoder.embed_state(s, &self.task.goal, self.task)?;
        self.cache.insert(s.clone(), v.clone());
        Ok(v)
    }

    fn candidates(&mut self, s: &SymbolicState) -> Result<Vec<Candidate>, EncoderError> {
        self.task
            .successors(s)
            .into_iter()
            .map(|(action, state)| {
                let embedding = self.embed(&state)?;
                Ok(Candidate { action, state, embedding })
            })
            .collect()
    }

    fn predict(&mut self, memory: &Memory, s: &SymbolicState) -> Result<(Vec<f64>, Memory), DecodeError> {
        let phi = self.embed(s)?;
        self.model_calls += 1;
        Ok(predict(self.model, memory, &phi, &self.goal)?)
    }
}

#[derive(Clone)]
struct Beam {
    state: SymbolicState,
    actions: Vec<usize>,
    steps: Vec<StepRecord>,
    score: f64,
    memory: Memory,
    visited: HashSet<SymbolicState>,
}

fn finish(task: &GroundedTask, beam: Beam, outcome: Outcome, model_calls: usize) -> Result<RolloutResult, DecodeError> {
    let plan = Plan::from_action_ids(task, &beam.actions);
    if outcome == Outcome::Success {
        if let Validation::Invalid(e) = validate(task, &plan) {
            return Err(DecodeError::Unsound(e.to_string()));
        }
    }
    Ok(RolloutResult { outcome, visited: beam.actions.len(), plan, steps: beam.steps, model_calls })
}

/// Greedy rollout when `beam_width == 1`, beam search otherwise.
pub fn decode(
    task: &GroundedTask,
    model: &dyn TransitionModel,
    encoder: &Encoder,
    config: &DecodeConfig,
) -> Result<RolloutResult, DecodeError> {
    if config.beam_width <= 1 {
        greedy_decode(task, model, encoder, config)
    } else {
        beam_decode(task, model, encoder, config)
    }
}

pub fn greedy_decode(
    task: &GroundedTask,
    model: &dyn TransitionModel,
    encoder: &Encoder,
    config: &DecodeConfig,
) -> Result<RolloutResult, DecodeError> {
    let mut r = start(task, model, encoder, config)?;
    let mut beam = initial_beam(task, model);
    for _ in 0..config.max_steps {
        if task.goal_satisfied(&beam.state) {
            return finish(task, beam, Outcome::Success, r.model_calls);
        }
        let mut cands = r.candidates(&beam.state)?;
        if cands.is_empty() {
            return finish(task, beam, Outcome::DeadEnd, r.model_calls);
        }
        let n = cands.len();
        let (v, memory) = r.predict(&beam.memory, &beam.state)?;
        apply_revisit_policy(&mut cands, &beam.visited, config.revisit);
        let (i, d) = select_successor(&v, &cands, r.distance).expect("non-empty");
        let c = cands.swap_remove(i);
        advance(task, &mut beam, c, d, n, memory);
    }
    let outcome = if task.goal_satisfied(&beam.state) { Outcome::Success } else { Outcome::HorizonExceeded };
    finish(task, beam, outcome, r.model_calls)
}

fn start<'a>(
    task: &'a GroundedTask,
    model: &'a dyn TransitionModel,
    encoder: &'a Encoder,
    config: &DecodeConfig,
) -> Result<Rollout<'a>, DecodeError> {
    let goal = encoder.embed_goal(&task.goal, task)?;
    if goal.len() != model.width() {
        return Err(ModelError::DimensionMismatch { expected: model.width(), found: goal.len() }.into());
    }
    Ok(Rollout {
        task,
        model,
        encoder,
        goal,
        distance: config.distance.unwrap_or(Distance::for_mode(model.mode())),
        cache: HashMap::new(),
        model_calls: 0,
    })
}

fn initial_beam(task: &GroundedTask, model: &dyn TransitionModel) -> Beam {
    Beam {
        state: task.initial.clone(),
        actions: Vec::new(),
        steps: Vec::new(),
        score: 0.0,
        memory: model.initial_memory(),
        visited: HashSet::from([task.initial.clone()]),
    }
}

fn apply_revisit_policy(cands: &mut Vec<Candidate>, visited: &HashSet<SymbolicState>, policy: RevisitPolicy) {
    if policy == RevisitPolicy::AvoidIfAlternative && cands.iter().any(|c| !visited.contains(&c.state)) {
        cands.retain(|c| !visited.contains(&c.state));
    }
}

fn advance(task: &GroundedTask, beam: &mut Beam, c: Candidate, d: f64, n: usize, memory: Memory) {
    beam.steps.push(StepRecord { action: task.actions[c.action].name.clone(), distance: d, successors: n });
    beam.actions.push(c.action);
    beam.score += d;
    beam.memory = memory;
    beam.visited.insert(c.state.clone());
    beam.state = c.state;
}

/// Keeps up to `beam_width` rollouts ranked by cumulative distance, each
/// expanded by its `beam_width` nearest successors. Returns the best-ranked
/// rollout that reaches the goal.
pub fn beam_decode(
    task: &GroundedTask,
    model: &dyn TransitionModel,
    encoder: &Encoder,
    config: &DecodeConfig,
) -> Result<RolloutResult, DecodeError> {
    let width = config.beam_width.max(1);
    let mut r = start(task, model, encoder, config)?;
    let mut beams = vec![initial_beam(task, model)];
    for _ in 0..config.max_steps {
        if let Some(i) = beams.iter().position(|b| task.goal_satisfied(&b.state)) {
            return finish(task, beams.swap_remove(i), Outcome::Success, r.model_calls);
        }
        let mut next: Vec<Beam> = Vec::new();
        for beam in &beams {
            let mut cands = r.candidates(&beam.state)?;
            if cands.is_empty() {
                continue;
            }
            let n = cands.len();
            let (v, memory) = r.predict(&beam.memory, &beam.state)?;
            apply_revisit_policy(&mut cands, &beam.visited, config.revisit);
            for (i, d) in rank_candidates(&v, &cands, r.distance).into_iter().take(width) {
                let mut child = beam.clone();
                advance(task, &mut child, cands[i].clone(), d, n, memory.clone());
                next.push(child);
            }
        }
        if next.is_empty() {
            let first = beams.swap_remove(0);
            return finish(task, first, Outcome::DeadEnd, r.model_calls);
        }
        next.sort_by(|a, b| a.score.total_cmp(&b.score));
        let mut seen = HashSet::new();
        next.retain(|b| seen.insert(b.state.clone()));
        next.truncate(width);
        beams = next;
    }
    if let Some(i) = beams.iter().position(|b| task.goal_satisfied(&b.state)) {
        return finish(task, beams.swap_remove(i), Outcome::Success, r.model_calls);
    }
    finish(task, beams.swap_remove(0), Outcome::HorizonExceeded, r.model_calls)
}

/// Embeds every state of a plan's trajectory and its goal.
pub fn embed_plan(task: &GroundedTask, plan: &Plan, encoder: &Encoder) -> Result<EmbeddedTrajectory, DecodeError> {
    let traj = reconstruct(task, plan).map_err(|e| DecodeError::Unsound(e.to_string()))?;
    let states = traj.states.iter().map(|s| encoder.embed_state(s, &task.goal, task)).collect::<Result<Vec<_>, _>>()?;
    Ok(EmbeddedTrajectory { states, goal: encoder.embed_goal(&task.goal, task)? })
}

/// Replays an expert plan through the oracle model, resolving choices
/// between successors with identical embeddings in canonical action order.
/// The result is a plan of the same length whose embedded trajectory equals
/// the expert's; the original plan is returned if the replay diverges.
pub fn canonicalize_plan(
    task: &GroundedTask,
    plan: &Plan,
    encoder: &Encoder,
    revisit: RevisitPolicy,
) -> Result<Plan, DecodeError> {
    let expert = embed_plan(task, plan, encoder)?;
    let oracle = OracleDeltaModel::new(&expert);
    let config = DecodeConfig { beam_width: 1, max_steps: plan.len(), distance: Some(Distance::Euclidean), revisit };
    let result = greedy_decode(task, &oracle, encoder, &config)?;
    let same_length = result.plan.len() == plan.len();
    if result.succeeded() && same_length && result.steps.iter().all(|s| s.distance == 0.0) {
        Ok(Plan { actions: result.plan.actions, provenance: plan.provenance.clone() })
    } else {
        Ok(plan.clone())
    }
}
