use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use crate::decoder::DecodeConfig;
use crate::encoders::EncodingMode;
use crate::models::{ModelKind, RecurrentConfig, TargetMode, TreeConfig};
use crate::search::{SearchConfig, Strategy, Tier};
use crate::trajectory::SplitName;

use super::HarnessError;

/// Sizes and instance count of one split. Instances are spread evenly over
/// the sizes, so each size gets `count / sizes.len()` give or take one; with
/// fewer instances than sizes, evenly spaced sizes are used.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub sizes: Vec<usize>,
    pub count: usize,
}

impl SplitSpec {
    pub fn new(sizes: impl IntoIterator<Item = usize>, count: usize) -> Self {
        Self { sizes: sizes.into_iter().collect(), count }
    }

    /// Size of every instance, in generation order.
    pub fn assignments(&self) -> Vec<usize> {
        if self.sizes.is_empty() {
            return Vec::new();
        }
        (0..self.count).map(|i| self.sizes[i * self.sizes.len() / self.count]).collect()
    }
}

/// Default splits for a bundled domain: the published size lists and
/// instance counts.
pub fn default_splits(domain: &str) -> Result<BTreeMap<SplitName, SplitSpec>, HarnessError> {
    use SplitName::*;
    let specs = match domain {
        "blocksworld" => [
            (Train, SplitSpec::new([4, 6, 7], 9)),
            (Validation, SplitSpec::new([8], 3)),
            (Interpolation, SplitSpec::new([5], 3)),
            (Extrapolation, SplitSpec::new(9..=17, 20)),
        ],
        "gripper" => [
            (Train, SplitSpec::new([2, 4, 6, 8], 4)),
            (Validation, SplitSpec::new([9, 10], 2)),
            (Interpolation, SplitSpec::new([3, 5, 7], 3)),
            (Extrapolation, SplitSpec::new((12..=42).step_by(2), 16)),
        ],
        "logistics" => [
            (Train, SplitSpec::new([1, 3, 5], 12)),
            (Validation, SplitSpec::new([6], 4)),
            (Interpolation, SplitSpec::new([2, 4], 9)),
            (Extrapolation, SplitSpec::new(7..=15, 18)),
        ],
        "visitall" => [
            (Train, SplitSpec::new([1, 3, 4, 6, 10, 11, 12, 14, 16], 207)),
            (Validation, SplitSpec::new([18, 20], 24)),
            (Interpolation, SplitSpec::new([2, 5, 8, 9, 15], 37)),
            (Extrapolation, SplitSpec::new(24..=121, 219)),
        ],
        other => return Err(HarnessError::UnsupportedDomain(other.to_string())),
    };
    Ok(specs.into_iter().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub seed: u64,
    /// Multiplies every split's instance count, keeping at least one.
    pub scale: f64,
    pub splits: BTreeMap<SplitName, SplitSpec>,
    pub search: SearchConfig,
    /// Also run the planner on the evaluated splits as a reference row.
    pub planner_ref: bool,
}

impl GenConfig {
    pub fn for_domain(domain: &str) -> Result<Self, HarnessError> {
        Ok(Self {
            seed: 0,
            scale: 1.0,
            splits: default_splits(domain)?,
            search: SearchConfig::default(),
            planner_ref: false,
        })
    }

    pub fn scaled(&self, split: SplitName) -> SplitSpec {
        let spec = self.splits.get(&split).cloned().unwrap_or(SplitSpec { sizes: Vec::new(), count: 0 });
        let count = ((spec.count as f64 * self.scale).round() as usize).max(spec.count.min(1));
        SplitSpec { count, ..spec }
    }
}

/// Everything one run of the pipeline depends on.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub domain: String,
    pub encoder: EncodingMode,
    pub model: ModelKind,
    pub mode: TargetMode,
    pub seeds: Vec<u64>,
    pub wl_iterations: usize,
    pub normalize: bool,
    pub tree: TreeConfig,
    pub recurrent: RecurrentConfig,
    pub decode: DecodeConfig,
    pub eval_splits: Vec<SplitName>,
    pub gen: GenConfig,
    pub data_dir: PathBuf,
    /// Directory of externally sourced problems, `<split>/*.pddl`.
    pub external_dir: Option<PathBuf>,
    pub jobs: usize,
    pub force: bool,
}

impl ExperimentConfig {
    pub fn new(domain: &str) -> Result<Self, HarnessError> {
        Ok(Self {
            domain: domain.to_string(),
            encoder: EncodingMode::Wl,
            model: ModelKind::Tree,
            mode: TargetMode::Delta,
            seeds: vec![0, 1, 2],
            wl_iterations: crate::encoders::DEFAULT_ITERATIONS,
            normalize: false,
            tree: TreeConfig::default(),
            recurrent: RecurrentConfig::default(),
            decode: DecodeConfig::default(),
            eval_splits: vec![SplitName::Interpolation, SplitName::Extrapolation],
            gen: GenConfig::for_domain(domain)?,
            data_dir: PathBuf::from("data"),
            external_dir: None,
            jobs: 0,
            force: false,
        })
    }

    /// Column label in the style `WL-tree delta`.
    pub fn label(&self) -> String {
        format!("{}-{} {}", self.encoder.to_string().to_uppercase(), self.model, self.mode)
    }

    /// Applies `key = value` lines. Blank lines and `#` comments are skipped.
    /// `domain` must be set before the file is applied, since split defaults
    /// depend on it.
    pub fn apply_text(&mut self, text: &str) -> Result<(), HarnessError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected 'key = value'", i + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| HarnessError::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("bad value '{v}' for {key}"))
        }
        fn flag(key: &str, v: &str) -> Result<bool, String> {
            match v {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(format!("bad value '{v}' for {key}")),
            }
        }
        let parts: Vec<&str> = key.split('.').collect();
        match parts.as_slice() {
            ["domain"] => {
                if value != self.domain {
                    self.gen.splits = default_splits(value).map_err(|e| e.to_string())?;
                }
                self.domain = value.to_string();
            }
            ["encoder"] => self.encoder = value.parse()?,
            ["model"] => self.model = value.parse()?,
            ["mode"] => self.mode = value.parse()?,
            ["data_dir"] => self.data_dir = PathBuf::from(value),
            ["jobs"] => self.jobs = num(key, value)?,
            ["train", "seeds"] => self.seeds = parse_list(value)?.into_iter().map(|v| v as u64).collect(),
            ["train", "wl_iterations"] => self.wl_iterations = num(key, value)?,
            ["train", "normalize"] => self.normalize = flag(key, value)?,
            ["train", "tree", field] => {
                let t = &mut self.tree;
                match *field {
                    "max_depth" => t.max_depth = num(key, value)?,
                    "learning_rate" => t.learning_rate = num(key, value)?,
                    "max_rounds" => t.max_rounds = num(key, value)?,
                    "patience" => t.patience = num(key, value)?,
                    "lambda" => t.lambda = num(key, value)?,
                    "min_child_weight" => t.min_child_weight = num(key, value)?,
                    "max_bins" => t.max_bins = num(key, value)?,
                    _ => return Err(format!("unknown key '{key}'")),
                }
            }
            ["train", "rnn", field] => {
                let r = &mut self.recurrent;
                match *field {
                    "hidden" => r.hidden = num(key, value)?,
                    "embed" => r.embed = num(key, value)?,
                    "learning_rate" => r.learning_rate = num(key, value)?,
                    "batch_size" => r.batch_size = num(key, value)?,
                    "epochs" => r.max_epochs = num(key, value)?,
                    "patience" => r.patience = num(key, value)?,
                    "clip_norm" => r.clip_norm = num(key, value)?,
                    _ => return Err(format!("unknown key '{key}'")),
                }
            }
            ["decode", "beam_width"] => self.decode.beam_width = num(key, value)?,
            ["decode", "max_steps"] => self.decode.max_steps = num(key, value)?,
            ["decode", "distance"] => self.decode.distance = Some(value.parse()?),
            ["decode", "revisit"] => self.decode.revisit = value.parse()?,
            ["decode", "splits"] => {
                self.eval_splits = value.split(',').map(|s| s.trim().parse()).collect::<Result<_, _>>()?
            }
            ["gen", "seed"] => self.gen.seed = num(key, value)?,
            ["gen", "scale"] => self.gen.scale = num(key, value)?,
            ["gen", "planner_ref"] => self.gen.planner_ref = flag(key, value)?,
            ["gen", "external_dir"] => self.external_dir = Some(PathBuf::from(value)),
            ["gen", "search"] => self.gen.search = parse_search(value)?,
            ["gen", split, field] => {
                let split: SplitName = split.parse()?;
                let spec = self.gen.splits.entry(split).or_insert(SplitSpec { sizes: Vec::new(), count: 0 });
                match *field {
                    "sizes" => spec.sizes = parse_list(value)?,
                    "count" => spec.count = num(key, value)?,
                    _ => return Err(format!("unknown key '{key}'")),
                }
            }
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }
}

/// Comma-separated integers and ranges: `4,6,7`, `9-17`, `12-42:2`.
pub fn parse_list(text: &str) -> Result<Vec<usize>, String> {
    let bad = || format!("bad list '{text}'");
    let mut out = Vec::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (range, step) = match item.split_once(':') {
            Some((r, s)) => (r, s.parse::<usize>().map_err(|_| bad())?),
            None => (item, 1),
        };
        match range.split_once('-') {
            Some((a, b)) => {
                let a: usize = a.trim().parse().map_err(|_| bad())?;
                let b: usize = b.trim().parse().map_err(|_| bad())?;
                if a > b || step == 0 {
                    return Err(bad());
                }
                out.extend((a..=b).step_by(step));
            }
            None => out.push(range.parse().map_err(|_| bad())?),
        }
    }
    Ok(out)
}

/// Search tiers as `strategy:seconds[:expansions]`, comma separated.
pub fn parse_search(text: &str) -> Result<SearchConfig, String> {
    let mut tiers = Vec::new();
    for item in text.split(',').map(str::trim) {
        let f: Vec<&str> = item.split(':').collect();
        let bad = || format!("bad search tier '{item}'");
        if f.len() < 2 || f.len() > 3 {
            return Err(bad());
        }
        let strategy: Strategy = f[0].parse()?;
        let secs: f64 = f[1].parse().map_err(|_| bad())?;
        let expansions = match f.get(2) {
            Some(e) => e.parse().map_err(|_| bad())?,
            None => usize::MAX,
        };
        if secs <= 0.0 || expansions == 0 {
            return Err(bad());
        }
        tiers.push(Tier::new(strategy, Duration::from_secs_f64(secs), expansions));
    }
    Ok(SearchConfig { tiers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::RevisitPolicy;

    #[test]
    fn published_split_counts() {
        let bw = default_splits("blocksworld").unwrap();
        assert_eq!(bw[&SplitName::Train].assignments(), vec![4, 4, 4, 6, 6, 6, 7, 7, 7]);
        let ex = bw[&SplitName::Extrapolation].assignments();
        assert_eq!(ex.len(), 20);
        assert_eq!((ex[0], ex[19]), (9, 17));
        let g = default_splits("gripper").unwrap();
        assert_eq!(g[&SplitName::Extrapolation].sizes.len(), 16);
        let v = default_splits("visitall").unwrap();
        assert_eq!(v[&SplitName::Extrapolation].count, 219);
        assert_eq!(*v[&SplitName::Extrapolation].sizes.last().unwrap(), 121);
    }

    #[test]
    fn list_syntax() {
        assert_eq!(parse_list("4,6,7").unwrap(), vec![4, 6, 7]);
        assert_eq!(parse_list("9-12").unwrap(), vec![9, 10, 11, 12]);
        assert_eq!(parse_list("12-18:2, 30").unwrap(), vec![12, 14, 16, 18, 30]);
        assert!(parse_list("5-2").is_err());
        assert!(parse_list("x").is_err());
    }

    #[test]
    fn config_file_overrides_defaults() {
        let mut c = ExperimentConfig::new("visitall").unwrap();
        c.apply_text(
            "# CI split\n\
             gen.scale = 0.5\n\
             gen.extrapolation.sizes = 24-60\n\
             gen.extrapolation.count = 40\n\
             train.seeds = 1,2\n\
             train.tree.max_depth = 6\n\
             decode.beam_width = 1   # greedy\n\
             decode.revisit = allow\n\
             gen.search = astar_hmax:2:50000,gbfs_hadd:30\n",
        )
        .unwrap();
        assert_eq!(c.gen.scaled(SplitName::Extrapolation).count, 20);
        assert_eq!(c.gen.splits[&SplitName::Extrapolation].sizes.len(), 37);
        assert_eq!(c.seeds, vec![1, 2]);
        assert_eq!(c.tree.max_depth, 6);
        assert_eq!(c.decode.beam_width, 1);
        assert_eq!(c.decode.revisit, RevisitPolicy::Allow);
        assert_eq!(c.gen.search.tiers.len(), 2);
        assert_eq!(c.gen.search.tiers[0].max_expansions, 50_000);
    }

    #[test]
    fn bad_lines_name_the_line() {
        let mut c = ExperimentConfig::new("gripper").unwrap();
        let e = c.apply_text("train.seeds = 1\nnonsense\n").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        let e = c.apply_text("train.bogus = 1").unwrap_err();
        assert!(e.to_string().contains("unknown key"), "{e}");
    }

    #[test]
    fn every_table_column_is_expressible() {
        let mut c = ExperimentConfig::new("blocksworld").unwrap();
        let mut labels = Vec::new();
        for enc in ["wl", "fsf"] {
            for model in ["recurrent", "tree"] {
                for mode in ["state", "delta"] {
                    c.set("encoder", enc).unwrap();
                    c.set("model", model).unwrap();
                    c.set("mode", mode).unwrap();
                    labels.push(c.label());
                }
            }
        }
        assert_eq!(labels.len(), 8);
        assert!(labels.contains(&"FSF-tree state".to_string()));
    }

    #[test]
    fn scaling_spreads_over_the_size_range() {
        let mut g = GenConfig::for_domain("blocksworld").unwrap();
        g.scale = 0.01;
        assert_eq!(g.scaled(SplitName::Train).count, 1);
        g.scale = 0.2;
        assert_eq!(g.scaled(SplitName::Extrapolation).assignments(), vec![9, 11, 13, 15]);
    }
}
