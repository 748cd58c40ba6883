use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::{canonicalize_plan, decode, embed_plan, Outcome};
use crate::encoders::{
    collect_vocabulary, read_matrix, write_matrix, Encoder, EncodingMode, FsfDomain, FsfLayout, WlVocabulary,
};
use crate::models::{
    build_pairs, train_recurrent, train_tree_ensemble, EmbeddedTrajectory, ModelKind, OracleDeltaModel,
    SavedModel, TransitionModel,
};
use crate::pddl::GroundedTask;
use crate::search::{solve, Plan};
use crate::trajectory::{read_trajectory, reconstruct, validate, write_trajectory, ManifestEntry, SplitName, Trajectory};

use super::cache::{digest, Cache};
use super::config::ExperimentConfig;
use super::coverage::{compute_coverage, Coverage};
use super::dataset::{domain_text, prepare_dataset, Dataset};
use super::HarnessError;

const UNSOLVED: &str = "UNSOLVED";

/// How one decoding attempt ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Success,
    HorizonExceeded,
    DeadEnd,
    /// The decoder claimed success but the plan did not validate.
    Invalid(String),
    /// The instance could not be decoded at all (encoding, model or
    /// missing expert plan).
    Error(String),
}

impl Status {
    pub fn is_success(&self) -> bool {
        matches!(self, Status::Success)
    }
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Status::Success => f.write_str("success"),
            Status::HorizonExceeded => f.write_str("horizon-exceeded"),
            Status::DeadEnd => f.write_str("dead-end"),
            Status::Invalid(m) => write!(f, "invalid: {m}"),
            Status::Error(m) => write!(f, "error: {m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceOutcome {
    pub split: String,
    pub problem: String,
    pub size: usize,
    pub seed: u64,
    pub status: Status,
    pub plan: Vec<String>,
    pub model_calls: usize,
    /// Distance between the prediction and the chosen successor, per step.
    pub distances: Vec<f64>,
    /// Share of the initial state's embedding mass in the OOV bucket.
    pub oov_mass: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCoverage {
    pub split: String,
    pub instances: usize,
    pub coverage: Coverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub domain: String,
    pub label: String,
    pub seeds: Vec<u64>,
    pub splits: Vec<SplitCoverage>,
    /// Search on the same instances, when requested.
    pub planner_ref: Vec<SplitCoverage>,
    pub outcomes: Vec<InstanceOutcome>,
    /// Expert plan lengths of the training split.
    pub train_plan_lengths: Vec<usize>,
    pub embedding_width: usize,
    /// Stage failures that did not stop the run.
    pub failures: Vec<String>,
}

impl CoverageReport {
    pub fn coverage(&self, split: SplitName) -> Option<Coverage> {
        self.splits.iter().find(|s| s.split == split.as_str()).map(|s| s.coverage)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(format!("report: {e}")))
    }
}

/// A trained model together with the digest identifying it in the cache.
pub struct TrainedModel {
    pub model: SavedModel,
    pub digest: String,
}

pub struct ReadyEncoder {
    pub encoder: Encoder,
    pub digest: String,
}

/// The staged, cached experiment for one configuration.
pub struct Pipeline {
    pub config: ExperimentConfig,
    pub dataset: Dataset,
    pub cache: Cache,
    domain: &'static str,
    pool: rayon::ThreadPool,
}

fn stage_err(stage: &str, entry: &ManifestEntry, detail: impl std::fmt::Display) -> HarnessError {
    HarnessError::Stage { stage: stage.to_string(), problem: entry.problem.display().to_string(), detail: detail.to_string() }
}

impl Pipeline {
    pub fn open(config: ExperimentConfig) -> Result<Self, HarnessError> {
        let domain = domain_text(&config.domain)?;
        let dataset = prepare_dataset(&config)?;
        let mut cache = Cache::new(config.data_dir.join("cache"));
        cache.force = config.force;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))?;
        Ok(Self { config, dataset, cache, domain, pool })
    }

    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }

    fn problem_digest(&self, entry: &ManifestEntry) -> Result<(String, String), HarnessError> {
        let text = self.dataset.problem_text(entry)?;
        Ok((digest(&[self.domain, text.as_str()]), text))
    }

    pub fn task(&self, entry: &ManifestEntry) -> Result<GroundedTask, HarnessError> {
        let text = self.dataset.problem_text(entry)?;
        Ok(GroundedTask::from_texts(self.domain, &text)?)
    }

    /// Expert plan from the configured search tiers, with its cache key.
    pub fn expert_plan(&self, entry: &ManifestEntry) -> Result<(Plan, String), HarnessError> {
        let (pd, text) = self.problem_digest(entry)?;
        let key = digest(&[pd.as_str(), &format!("{:?}", self.config.gen.search)]);
        let out = self.cache.get_or_compute("plan", &key, || -> Result<String, HarnessError> {
            let task = GroundedTask::from_texts(self.domain, &text)?;
            Ok(match solve(&task, &self.config.gen.search) {
                Ok(plan) => plan.to_text(),
                Err(e) => format!("{UNSOLVED} {e}\n"),
            })
        })?;
        if let Some(reason) = out.strip_prefix(UNSOLVED) {
            return Err(stage_err("plan", entry, reason.trim()));
        }
        Ok((Plan::parse(&out), key))
    }

    pub fn trajectory(&self, entry: &ManifestEntry) -> Result<(GroundedTask, Trajectory, String), HarnessError> {
        let (plan, plan_key) = self.expert_plan(entry)?;
        let task = self.task(entry)?;
        let key = digest(&["traj", plan_key.as_str()]);
        let text = self.cache.get_or_compute("traj", &key, || -> Result<String, HarnessError> {
            let traj = reconstruct(&task, &plan).map_err(|e| stage_err("traj", entry, e))?;
            Ok(write_trajectory(&task, &traj))
        })?;
        let traj = read_trajectory(&text, &task).map_err(|e| stage_err("traj", entry, e))?;
        Ok((task, traj, key))
    }

    /// Training trajectories that could be built; failures are returned as
    /// messages.
    fn training_trajectories(&self, split: SplitName) -> (Vec<(GroundedTask, Trajectory, String)>, Vec<String>) {
        let results: Vec<_> =
            self.install(|| self.dataset.entries(split).par_iter().map(|e| self.trajectory(e)).collect());
        let mut ok = Vec::new();
        let mut failed = Vec::new();
        for r in results {
            match r {
                Ok(t) => ok.push(t),
                Err(e) => failed.push(e.to_string()),
            }
        }
        (ok, failed)
    }

    /// WL vocabulary over the training trajectories, or the FSF layout sized
    /// to the largest problem of the domain.
    pub fn encoder(&self) -> Result<ReadyEncoder, HarnessError> {
        match self.config.encoder {
            EncodingMode::Wl => {
                let (trajs, _) = self.training_trajectories(SplitName::Train);
                if trajs.is_empty() {
                    return Err(HarnessError::NoTrainingData);
                }
                let k = self.config.wl_iterations;
                let mut parts: Vec<String> = trajs.iter().map(|t| t.2.clone()).collect();
                parts.sort();
                parts.push(format!("wl k={k}"));
                let key = digest(&parts);
                let text = self.cache.get_or_compute("vocab", &key, || -> Result<String, HarnessError> {
                    let vocab = collect_vocabulary(trajs.iter().map(|(t, tr, _)| (t, tr)), k);
                    Ok(vocab.to_text())
                })?;
                let vocab = WlVocabulary::parse(&text)?;
                let normalize = self.config.normalize;
                Ok(ReadyEncoder {
                    encoder: Encoder::Wl { vocab, normalize },
                    digest: digest(&[key.as_str(), &format!("normalize={normalize}")]),
                })
            }
            EncodingMode::Fsf => {
                let domain: FsfDomain = self.config.domain.parse()?;
                let capacity = self.dataset.max_objects()?;
                Ok(ReadyEncoder {
                    encoder: Encoder::Fsf(FsfLayout::new(domain, capacity)),
                    digest: digest(&[format!("fsf {} {capacity}", self.config.domain)]),
                })
            }
        }
    }

    /// Expert plan re-resolved so that ties between successors with equal
    /// embeddings follow canonical action order.
    pub fn canonical_plan(&self, entry: &ManifestEntry, enc: &ReadyEncoder) -> Result<(Plan, String), HarnessError> {
        let (task, traj, traj_key) = self.trajectory(entry)?;
        let key = digest(&["canon", traj_key.as_str(), &enc.digest, &format!("{:?}", self.config.decode.revisit)]);
        let text = self.cache.get_or_compute("canon", &key, || -> Result<String, HarnessError> {
            let plan = canonicalize_plan(&task, &traj.plan, &enc.encoder, self.config.decode.revisit)
                .map_err(|e| stage_err("canon", entry, e))?;
            Ok(plan.to_text())
        })?;
        Ok((Plan::parse(&text), key))
    }

    /// Embedded canonical expert trajectory: state rows, then the goal row.
    pub fn embedded(&self, entry: &ManifestEntry, enc: &ReadyEncoder) -> Result<(EmbeddedTrajectory, String), HarnessError> {
        let (plan, canon_key) = self.canonical_plan(entry, enc)?;
        let key = digest(&["embed", canon_key.as_str()]);
        let text = self.cache.get_or_compute("embed", &key, || -> Result<String, HarnessError> {
            let task = self.task(entry)?;
            let e = embed_plan(&task, &plan, &enc.encoder).map_err(|e| stage_err("embed", entry, e))?;
            let mut rows = e.states;
            rows.push(e.goal);
            Ok(write_matrix(&rows))
        })?;
        let mut rows = read_matrix(&text)?;
        let goal = rows.pop().ok_or_else(|| stage_err("embed", entry, "empty matrix"))?;
        Ok((EmbeddedTrajectory { states: rows, goal }, key))
    }

    fn embedded_split(&self, split: SplitName, enc: &ReadyEncoder) -> (Vec<(EmbeddedTrajectory, String)>, Vec<String>) {
        let results: Vec<_> =
            self.install(|| self.dataset.entries(split).par_iter().map(|e| self.embedded(e, enc)).collect());
        let mut ok = Vec::new();
        let mut failed = Vec::new();
        for r in results {
            match r {
                Ok(t) => ok.push(t),
                Err(e) => failed.push(e.to_string()),
            }
        }
        (ok, failed)
    }

    /// Trains (or loads) the configured model for one seed. Tree training is
    /// deterministic, so its cache key leaves the seed out.
    pub fn train(&self, enc: &ReadyEncoder, seed: u64) -> Result<TrainedModel, HarnessError> {
        let (train, _) = self.embedded_split(SplitName::Train, enc);
        let (val, _) = self.embedded_split(SplitName::Validation, enc);
        if train.is_empty() {
            return Err(HarnessError::NoTrainingData);
        }
        let mode = self.config.mode;
        let mut parts: Vec<String> = vec![self.config.model.to_string(), mode.to_string()];
        match self.config.model {
            ModelKind::Tree => parts.push(format!("{:?}", self.config.tree)),
            ModelKind::Recurrent => parts.push(format!("{:?} seed={seed}", self.config.recurrent)),
            ModelKind::Oracle => return Err(HarnessError::Config("the oracle model is not trained".into())),
        }
        parts.extend(train.iter().map(|t| format!("train {}", t.1)));
        parts.extend(val.iter().map(|t| format!("val {}", t.1)));
        let key = digest(&parts);
        let text = self.cache.get_or_compute("model", &key, || -> Result<String, HarnessError> {
            let train: Vec<EmbeddedTrajectory> = train.into_iter().map(|t| t.0).collect();
            let val: Vec<EmbeddedTrajectory> = val.into_iter().map(|t| t.0).collect();
            let started = Instant::now();
            let model = match self.config.model {
                ModelKind::Tree => {
                    let tp = build_pairs(&train, mode)?;
                    let vp = build_pairs(&val, mode)?;
                    let vp = if vp.is_empty() { tp.clone() } else { vp };
                    let (m, report) = self.install(|| train_tree_ensemble(&tp, &vp, mode, &self.config.tree))?;
                    log::info!(
                        "tree model: {} rounds, {} constant dims, val mse {:.4e}",
                        m.rounds,
                        report.constant_dims,
                        report.val_mse.get(report.best_round).copied().unwrap_or(f64::NAN)
                    );
                    SavedModel::Tree(m)
                }
                ModelKind::Recurrent => {
                    let cfg = crate::models::RecurrentConfig { seed, ..self.config.recurrent };
                    let (m, report) = train_recurrent(&train, &val, mode, &cfg)?;
                    log::info!("recurrent model: best epoch {}, {} params", report.best_epoch, m.parameter_count());
                    SavedModel::Recurrent(m)
                }
                ModelKind::Oracle => unreachable!(),
            };
            log::info!("trained {} in {:.1}s", self.config.label(), started.elapsed().as_secs_f64());
            Ok(model.to_json())
        })?;
        Ok(TrainedModel { model: SavedModel::from_json(&text)?, digest: key })
    }

    /// Decodes one instance and validates the result. Never fails: problems
    /// are recorded in the outcome's status.
    pub fn solve(&self, entry: &ManifestEntry, model: Option<&TrainedModel>, enc: &ReadyEncoder, seed: u64) -> InstanceOutcome {
        let base = InstanceOutcome {
            split: entry.split.to_string(),
            problem: entry.problem.display().to_string(),
            size: entry.size,
            seed,
            status: Status::Error(String::new()),
            plan: Vec::new(),
            model_calls: 0,
            distances: Vec::new(),
            oov_mass: 0.0,
            wall_ms: 0,
        };
        match self.solve_inner(entry, model, enc, &base) {
            Ok(o) => o,
            Err(e) => InstanceOutcome { status: Status::Error(e.to_string()), ..base },
        }
    }

    fn solve_inner(
        &self,
        entry: &ManifestEntry,
        model: Option<&TrainedModel>,
        enc: &ReadyEncoder,
        base: &InstanceOutcome,
    ) -> Result<InstanceOutcome, HarnessError> {
        let (pd, _) = self.problem_digest(entry)?;
        let oracle;
        let (model, model_key): (&dyn TransitionModel, String) = match model {
            Some(m) => (m.model.as_model(), m.digest.clone()),
            None => {
                let (expert, key) = self.embedded(entry, enc)?;
                oracle = OracleDeltaModel::new(&expert);
                (&oracle, key)
            }
        };
        let key = digest(&["decode", pd.as_str(), &model_key, &enc.digest, &format!("{:?}", self.config.decode)]);
        let text = self.cache.get_or_compute("decode", &key, || -> Result<String, HarnessError> {
            let task = self.task(entry)?;
            let init = enc.encoder.embed_state(&task.initial, &task.goal, &task)?;
            let oov_mass = match enc.encoder {
                Encoder::Wl { .. } => {
                    let total: f64 = init.iter().sum();
                    if total > 0.0 {
                        init.last().copied().unwrap_or(0.0) / total
                    } else {
                        0.0
                    }
                }
                Encoder::Fsf(_) => 0.0,
            };
            let started = Instant::now();
            let result = decode(&task, model, &enc.encoder, &self.config.decode);
            let wall_ms = started.elapsed().as_millis() as u64;
            let record = match result {
                Ok(r) => {
                    let status = match r.outcome {
                        Outcome::Success => match validate(&task, &r.plan) {
                            v if v.is_valid() => Status::Success,
                            crate::trajectory::Validation::Invalid(e) => Status::Invalid(e.to_string()),
                            crate::trajectory::Validation::Valid => unreachable!(),
                        },
                        Outcome::HorizonExceeded => Status::HorizonExceeded,
                        Outcome::DeadEnd => Status::DeadEnd,
                    };
                    DecodeRecord {
                        status,
                        plan: r.plan.actions,
                        model_calls: r.model_calls,
                        distances: r.steps.iter().map(|s| s.distance).collect(),
                        oov_mass,
                        wall_ms,
                    }
                }
                Err(e) => DecodeRecord {
                    status: Status::Error(e.to_string()),
                    plan: Vec::new(),
                    model_calls: 0,
                    distances: Vec::new(),
                    oov_mass,
                    wall_ms,
                },
            };
            Ok(serde_json::to_string(&record).expect("records serialize"))
        })?;
        let r: DecodeRecord =
            serde_json::from_str(&text).map_err(|e| stage_err("decode", entry, format!("cached record: {e}")))?;
        Ok(InstanceOutcome {
            status: r.status,
            plan: r.plan,
            model_calls: r.model_calls,
            distances: r.distances,
            oov_mass: r.oov_mass,
            wall_ms: r.wall_ms,
            ..base.clone()
        })
    }

    /// Runs every stage and evaluates the configured splits for every seed.
    pub fn run(&self) -> Result<CoverageReport, HarnessError> {
        let mut failures = Vec::new();
        let (train, train_failed) = self.training_trajectories(SplitName::Train);
        failures.extend(train_failed);
        let (_, val_failed) = self.training_trajectories(SplitName::Validation);
        failures.extend(val_failed);
        let train_plan_lengths: Vec<usize> = train.iter().map(|t| t.1.plan.len()).collect();
        let enc = self.encoder()?;
        let mut trained: HashMap<String, Arc<TrainedModel>> = HashMap::new();
        let mut per_seed_model = Vec::new();
        for &seed in &self.config.seeds {
            let m = match self.config.model {
                ModelKind::Oracle => None,
                _ => {
                    let t = self.train(&enc, seed)?;
                    Some(trained.entry(t.digest.clone()).or_insert_with(|| Arc::new(t)).clone())
                }
            };
            per_seed_model.push(m);
        }
        let mut outcomes = Vec::new();
        let mut splits = Vec::new();
        let mut planner_ref = Vec::new();
        for &split in &self.config.eval_splits {
            let entries = self.dataset.entries(split);
            let mut per_seed = Vec::new();
            for (&seed, model) in self.config.seeds.iter().zip(&per_seed_model) {
                let results: Vec<InstanceOutcome> = self.install(|| {
                    entries.par_iter().map(|e| self.solve(e, model.as_deref(), &enc, seed)).collect()
                });
                per_seed.push(results.iter().map(|o| o.status.is_success()).collect::<Vec<_>>());
                for o in &results {
                    if let Status::Error(m) | Status::Invalid(m) = &o.status {
                        failures.push(format!("{} seed {seed}: {m}", o.problem));
                    }
                }
                outcomes.extend(results);
            }
            let coverage = compute_coverage(&per_seed, &self.config.seeds)?;
            splits.push(SplitCoverage { split: split.to_string(), instances: entries.len(), coverage });
            if self.config.gen.planner_ref {
                let solved: Vec<bool> =
                    self.install(|| entries.par_iter().map(|e| self.expert_plan(e).is_ok()).collect());
                let coverage = compute_coverage(&[solved], &[0])?;
                planner_ref.push(SplitCoverage { split: split.to_string(), instances: entries.len(), coverage });
            }
        }
        Ok(CoverageReport {
            domain: self.config.domain.clone(),
            label: self.config.label(),
            seeds: self.config.seeds.clone(),
            splits,
            planner_ref,
            outcomes,
            train_plan_lengths,
            embedding_width: enc.encoder.width(),
            failures,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DecodeRecord {
    status: Status,
    plan: Vec<String>,
    model_calls: usize,
    distances: Vec<f64>,
    oov_mass: f64,
    wall_ms: u64,
}

/// Plan-length, OOV and distance statistics used to tell supervision drift
/// from implementation faults when coverage misses a target.
pub fn calibration_report(report: &CoverageReport) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(out, "calibration for {} {}", report.domain, report.label);
    let _ = writeln!(out, "  embedding width {}", report.embedding_width);
    let _ = writeln!(out, "  training plan lengths {}", summarize(report.train_plan_lengths.iter().map(|&l| l as f64)));
    for s in &report.splits {
        let rows: Vec<&InstanceOutcome> = report.outcomes.iter().filter(|o| o.split == s.split).collect();
        let solved: Vec<&&InstanceOutcome> = rows.iter().filter(|o| o.status.is_success()).collect();
        let _ = writeln!(out, "  {} ({} instance runs, {} solved)", s.split, rows.len(), solved.len());
        let _ = writeln!(out, "    solved plan lengths {}", summarize(solved.iter().map(|o| o.plan.len() as f64)));
        let _ = writeln!(out, "    oov mass {}", summarize(rows.iter().map(|o| o.oov_mass)));
        let mut statuses: HashMap<String, usize> = HashMap::new();
        for o in &rows {
            let key = match &o.status {
                Status::Error(_) => "error".to_string(),
                Status::Invalid(_) => "invalid".to_string(),
                other => other.to_string(),
            };
            *statuses.entry(key).or_default() += 1;
        }
        let mut statuses: Vec<_> = statuses.into_iter().collect();
        statuses.sort();
        let _ = writeln!(out, "    outcomes {statuses:?}");
        let mut by_size: std::collections::BTreeMap<usize, (usize, usize)> = Default::default();
        for o in &rows {
            let e = by_size.entry(o.size).or_default();
            e.0 += o.status.is_success() as usize;
            e.1 += 1;
        }
        let sizes: Vec<String> = by_size.iter().map(|(k, (a, b))| format!("{k}:{a}/{b}")).collect();
        let _ = writeln!(out, "    solved by size {}", sizes.join(" "));
        for (label, ok) in [("solved", true), ("unsolved", false)] {
            let d = rows.iter().filter(|o| o.status.is_success() == ok).flat_map(|o| o.distances.iter().copied());
            let _ = writeln!(out, "    step distance ({label}) {}", summarize(d));
        }
        let mut buckets: Vec<(f64, usize)> = Vec::new();
        for o in &rows {
            for (t, d) in o.distances.iter().enumerate() {
                let b = t / 10;
                if buckets.len() <= b {
                    buckets.resize(b + 1, (0.0, 0));
                }
                buckets[b].0 += d;
                buckets[b].1 += 1;
            }
        }
        let profile: Vec<String> =
            buckets.iter().map(|(s, n)| if *n > 0 { format!("{:.3}", s / *n as f64) } else { "-".into() }).collect();
        let _ = writeln!(out, "    mean distance per 10 steps [{}]", profile.join(" "));
    }
    out
}

fn summarize(values: impl Iterator<Item = f64>) -> String {
    let mut v: Vec<f64> = values.collect();
    if v.is_empty() {
        return "n=0".to_string();
    }
    v.sort_by(f64::total_cmp);
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    format!(
        "n={} min={:.3} median={:.3} mean={:.3} max={:.3}",
        v.len(),
        v[0],
        v[v.len() / 2],
        mean,
        v[v.len() - 1]
    )
}
