use std::fs;
use std::path::{Path, PathBuf};

use crate::pddl::{builtin, parse_domain, parse_problem, ProblemDescription};
use crate::trajectory::{ManifestEntry, SplitManifest, SplitName};

use super::cache::digest;
use super::config::{ExperimentConfig, SplitSpec};
use super::generators::InstanceGenerator;
use super::HarnessError;

pub const MANIFEST: &str = "manifest.tsv";

/// Where a dataset's problems came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Generated { stamp: String },
    External(PathBuf),
}

/// Problems of one domain with their split manifest. Relative manifest
/// paths resolve against `root`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub domain: String,
    pub root: PathBuf,
    pub manifest: SplitManifest,
    pub source: Source,
}

impl Dataset {
    pub fn problem_path(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.problem.is_absolute() {
            entry.problem.clone()
        } else {
            self.root.join(&entry.problem)
        }
    }

    pub fn problem_text(&self, entry: &ManifestEntry) -> Result<String, HarnessError> {
        let path = self.problem_path(entry);
        fs::read_to_string(&path).map_err(|e| HarnessError::Io { path, source: e })
    }

    pub fn entries(&self, split: SplitName) -> Vec<&ManifestEntry> {
        self.manifest.split(split).collect()
    }

    /// Largest object count over every split.
    pub fn max_objects(&self) -> Result<usize, HarnessError> {
        let domain = parse_domain(domain_text(&self.domain)?)?;
        let mut max = 0;
        for e in &self.manifest.entries {
            max = max.max(parse_problem(&self.problem_text(e)?, &domain)?.object_count());
        }
        Ok(max)
    }
}

pub fn domain_text(domain: &str) -> Result<&'static str, HarnessError> {
    builtin::domain_text(domain).ok_or_else(|| HarnessError::UnsupportedDomain(domain.to_string()))
}

/// The size parameter of a parsed problem: blocks, balls, goal atoms or
/// cells depending on the domain.
pub fn size_of(domain: &str, problem: &ProblemDescription) -> usize {
    let of_type = |ty: &str| problem.objects.iter().filter(|(_, t)| t == ty).count();
    match domain {
        "gripper" => of_type("ball"),
        "logistics" => problem.goal.len(),
        _ => problem.object_count(),
    }
}

/// Writes `spec.count` problems for one split under `root/problems/<split>`.
pub fn generate_instances(
    generator: &InstanceGenerator,
    split: SplitName,
    spec: &SplitSpec,
    root: &Path,
) -> Result<Vec<ManifestEntry>, HarnessError> {
    let dir = root.join("problems").join(split.as_str());
    fs::create_dir_all(&dir).map_err(|e| HarnessError::Io { path: dir.clone(), source: e })?;
    let salt = SplitName::ALL.iter().position(|&s| s == split).unwrap() as u64;
    let mut out = Vec::new();
    for (i, size) in spec.assignments().into_iter().enumerate() {
        let name = format!("{}-{}-{:03}-n{size}", generator.domain, split, i + 1);
        let text = generator.generate(&name, size, salt << 20 | i as u64);
        let rel = PathBuf::from("problems").join(split.as_str()).join(format!("{name}.pddl"));
        let path = root.join(&rel);
        fs::write(&path, text).map_err(|e| HarnessError::Io { path, source: e })?;
        out.push(ManifestEntry { split, domain: generator.domain.clone(), problem: rel, size });
    }
    Ok(out)
}

/// Reads `<dir>/<split>/*.pddl` (or `<dir>/<domain>/<split>/*.pddl`).
pub fn ingest_external(domain: &str, dir: &Path) -> Result<SplitManifest, HarnessError> {
    let base = if dir.join(domain).is_dir() { dir.join(domain) } else { dir.to_path_buf() };
    let parsed_domain = parse_domain(domain_text(domain)?)?;
    let mut entries = Vec::new();
    for split in SplitName::ALL {
        let d = base.join(split.as_str());
        if !d.is_dir() {
            continue;
        }
        let mut files: Vec<PathBuf> = fs::read_dir(&d)
            .map_err(|e| HarnessError::Io { path: d.clone(), source: e })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "pddl"))
            .collect();
        files.sort();
        for path in files {
            let text = fs::read_to_string(&path).map_err(|e| HarnessError::Io { path: path.clone(), source: e })?;
            let problem = parse_problem(&text, &parsed_domain)?;
            let problem_path = fs::canonicalize(&path).unwrap_or(path);
            entries.push(ManifestEntry {
                split,
                domain: domain.to_string(),
                problem: problem_path,
                size: size_of(domain, &problem),
            });
        }
    }
    let manifest = SplitManifest { entries };
    manifest.check()?;
    Ok(manifest)
}

fn generation_stamp(config: &ExperimentConfig) -> String {
    let splits: Vec<String> =
        SplitName::ALL.iter().map(|&s| format!("{s}:{:?}", config.gen.scaled(s))).collect();
    let stamp = digest(&[config.domain.clone(), config.gen.seed.to_string(), splits.join(";")]);
    format!("generated seed={} key={}", config.gen.seed, &stamp[..16])
}

/// Loads the domain's dataset under `data_dir/<domain>`, generating it (or
/// ingesting the external directory) when the manifest is missing or was
/// produced from different settings.
pub fn prepare_dataset(config: &ExperimentConfig) -> Result<Dataset, HarnessError> {
    let root = config.data_dir.join(&config.domain);
    let manifest_path = root.join(MANIFEST);
    let source = match &config.external_dir {
        Some(dir) => Source::External(dir.clone()),
        None => Source::Generated { stamp: generation_stamp(config) },
    };
    let header = match &source {
        Source::Generated { stamp } => format!("# source: {stamp}"),
        Source::External(dir) => format!("# source: external {}", dir.display()),
    };
    if !config.force {
        if let Ok(text) = fs::read_to_string(&manifest_path) {
            if text.lines().next() == Some(header.as_str()) {
                let manifest = SplitManifest::parse(&text)?;
                return Ok(Dataset { domain: config.domain.clone(), root, manifest, source });
            }
        }
    }
    let manifest = match &source {
        Source::External(dir) => ingest_external(&config.domain, dir)?,
        Source::Generated { .. } => {
            let generator = InstanceGenerator::new(&config.domain, config.gen.seed)?;
            let mut entries = Vec::new();
            for split in SplitName::ALL {
                entries.extend(generate_instances(&generator, split, &config.gen.scaled(split), &root)?);
            }
            let manifest = SplitManifest { entries };
            manifest.check()?;
            manifest
        }
    };
    fs::create_dir_all(&root).map_err(|e| HarnessError::Io { path: root.clone(), source: e })?;
    let text = format!("{header}\n{}", manifest.to_text());
    fs::write(&manifest_path, text).map_err(|e| HarnessError::Io { path: manifest_path, source: e })?;
    Ok(Dataset { domain: config.domain.clone(), root, manifest, source })
}
