use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use stategp::decoder::embed_plan;
use stategp::encoders::write_matrix;
use stategp::harness::{
    calibration_report, render_csv, render_svg, render_table, size_of, CoverageReport,
    ExperimentConfig, Pipeline, Status,
};
use stategp::models::ModelKind;
use stategp::pddl::{builtin, parse_domain, parse_problem, GroundedTask};
use stategp::search::{solve, Plan};
use stategp::trajectory::{reconstruct, write_trajectory, ManifestEntry, SplitName};

#[derive(Parser, Debug)]
#[command(name = "stategp", version, about = "Learn transition models over planning-state embeddings and decode plans with them")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// blocksworld, gripper, logistics or visitall
    #[arg(long, global = true, default_value = "blocksworld")]
    domain: String,
    /// wl or fsf
    #[arg(long, global = true)]
    encoder: Option<String>,
    /// tree, recurrent or oracle
    #[arg(long, global = true)]
    model: Option<String>,
    /// state or delta
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Run with this single seed instead of the configured list
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key = value` settings file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (0 = one per core)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Use problems from `<dir>/<split>/*.pddl` instead of generating them
    #[arg(long, global = true)]
    external_dir: Option<PathBuf>,
    /// Recompute every stage instead of reading the cache
    #[arg(long, global = true)]
    force: bool,
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate (or ingest) the domain's splits and check the training splits are solvable
    Gen,
    /// Solve one problem with the search planner
    Plan {
        problem: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Replay a plan and write its state trajectory
    Traj {
        problem: PathBuf,
        plan: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Build the encoder over the training split and print its size
    Vocab {
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Embed the states of a plan (or just the initial state)
    Embed {
        problem: PathBuf,
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Train the configured model for each seed
    Train,
    /// Decode one problem with the trained model
    Solve {
        problem: PathBuf,
        /// Print the per-step rollout log
        #[arg(long)]
        log: bool,
    },
    /// Run the full pipeline and report coverage
    Eval {
        /// Also print plan-length, OOV and distance statistics
        #[arg(long)]
        calibrate: bool,
    },
    /// Combine saved reports into a table, CSV and optional charts
    Report {
        /// Report files; defaults to every report under the data directory
        reports: Vec<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write one SVG bar chart per split into this directory
        #[arg(long)]
        plot: Option<PathBuf>,
    },
}

fn build_config(g: &Global) -> Result<ExperimentConfig> {
    let mut c = ExperimentConfig::new(&g.domain)?;
    if let Some(path) = &g.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        c.apply_text(&text)?;
    }
    let set = |c: &mut ExperimentConfig, k: &str, v: &Option<String>| -> Result<()> {
        if let Some(v) = v {
            c.set(k, v).map_err(anyhow::Error::msg)?;
        }
        Ok(())
    };
    set(&mut c, "encoder", &g.encoder)?;
    set(&mut c, "model", &g.model)?;
    set(&mut c, "mode", &g.mode)?;
    if let Some(s) = g.seed {
        c.seeds = vec![s];
    }
    if let Some(j) = g.jobs {
        c.jobs = j;
    }
    if let Some(d) = &g.data_dir {
        c.data_dir = d.clone();
    }
    if let Some(d) = &g.external_dir {
        c.external_dir = Some(d.clone());
    }
    c.force = g.force;
    Ok(c)
}

fn write_or_print(output: &Option<PathBuf>, text: &str) -> Result<()> {
    match output {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_task(domain: &str, problem: &Path) -> Result<GroundedTask> {
    let d = builtin::domain_text(domain).with_context(|| format!("unsupported domain '{domain}'"))?;
    let text = fs::read_to_string(problem).with_context(|| format!("reading {}", problem.display()))?;
    Ok(GroundedTask::from_texts(d, &text)?)
}

fn adhoc_entry(domain: &str, problem: &Path) -> Result<ManifestEntry> {
    let d = parse_domain(builtin::domain_text(domain).context("unsupported domain")?)?;
    let text = fs::read_to_string(problem).with_context(|| format!("reading {}", problem.display()))?;
    let size = size_of(domain, &parse_problem(&text, &d)?);
    let problem = fs::canonicalize(problem)?;
    Ok(ManifestEntry { split: SplitName::Extrapolation, domain: domain.to_string(), problem, size })
}

fn report_path(config: &ExperimentConfig) -> PathBuf {
    let slug = config.label().to_lowercase().replace(' ', "-");
    config.data_dir.join("reports").join(format!("{}-{slug}.json", config.domain))
}

/// `Ok(true)` when every stage succeeded.
fn run(command: Command, config: ExperimentConfig) -> Result<bool> {
    match command {
        Command::Gen => {
            let pipeline = Pipeline::open(config)?;
            let mut ok = true;
            for split in SplitName::ALL {
                let entries = pipeline.dataset.entries(split);
                println!("{split}: {} problems", entries.len());
                if matches!(split, SplitName::Train | SplitName::Validation) {
                    for e in entries {
                        match pipeline.expert_plan(e) {
                            Ok((plan, _)) => log::info!("{}: plan of length {}", e.problem.display(), plan.len()),
                            Err(err) => {
                                eprintln!("{err}");
                                ok = false;
                            }
                        }
                    }
                }
            }
            println!("manifest: {}", pipeline.dataset.root.join(stategp::harness::MANIFEST).display());
            Ok(ok)
        }
        Command::Plan { problem, output } => {
            let task = load_task(&config.domain, &problem)?;
            match solve(&task, &config.gen.search) {
                Ok(plan) => {
                    write_or_print(&output, &plan.to_text())?;
                    if let Some(p) = &plan.provenance {
                        eprintln!("; {} steps, {} expansions, {:?}", plan.len(), p.expansions, p.wall_time);
                    }
                    Ok(true)
                }
                Err(e) => {
                    eprintln!("unsolved: {e}");
                    Ok(false)
                }
            }
        }
        Command::Traj { problem, plan, output } => {
            let task = load_task(&config.domain, &problem)?;
            let plan = Plan::parse(&fs::read_to_string(&plan)?);
            let traj = reconstruct(&task, &plan)?;
            write_or_print(&output, &write_trajectory(&task, &traj))?;
            Ok(true)
        }
        Command::Vocab { output } => {
            let pipeline = Pipeline::open(config)?;
            let enc = pipeline.encoder()?;
            eprintln!("{} encoder, width {}", enc.encoder.mode(), enc.encoder.width());
            if let stategp::encoders::Encoder::Wl { vocab, .. } = &enc.encoder {
                if output.is_some() {
                    write_or_print(&output, &vocab.to_text())?;
                }
            }
            Ok(true)
        }
        Command::Embed { problem, plan } => {
            let pipeline = Pipeline::open(config)?;
            let enc = pipeline.encoder()?;
            let task = load_task(&pipeline.config.domain, &problem)?;
            let plan = match plan {
                Some(p) => Plan::parse(&fs::read_to_string(p)?),
                None => Plan::default(),
            };
            let rows = if plan.is_empty() {
                vec![enc.encoder.embed_state(&task.initial, &task.goal, &task)?]
            } else {
                embed_plan(&task, &plan, &enc.encoder)?.states
            };
            print!("{}", write_matrix(&rows));
            Ok(true)
        }
        Command::Train => {
            if config.model == ModelKind::Oracle {
                bail!("the oracle model needs no training");
            }
            let pipeline = Pipeline::open(config)?;
            let enc = pipeline.encoder()?;
            for &seed in &pipeline.config.seeds {
                let m = pipeline.train(&enc, seed)?;
                println!("seed {seed}: {}", pipeline.cache.path("model", &m.digest).display());
            }
            Ok(true)
        }
        Command::Solve { problem, log } => {
            let pipeline = Pipeline::open(config)?;
            let enc = pipeline.encoder()?;
            let entry = adhoc_entry(&pipeline.config.domain, &problem)?;
            let seed = pipeline.config.seeds.first().copied().unwrap_or(0);
            let model = match pipeline.config.model {
                ModelKind::Oracle => None,
                _ => Some(pipeline.train(&enc, seed)?),
            };
            let outcome = pipeline.solve(&entry, model.as_ref(), &enc, seed);
            if log {
                for (t, (a, d)) in outcome.plan.iter().zip(&outcome.distances).enumerate() {
                    eprintln!("{t} {a} dist={d:.4}");
                }
            }
            println!("; {}", outcome.status);
            for a in &outcome.plan {
                println!("{a}");
            }
            Ok(!matches!(outcome.status, Status::Error(_) | Status::Invalid(_)))
        }
        Command::Eval { calibrate } => {
            let path = report_path(&config);
            let pipeline = Pipeline::open(config)?;
            let report = pipeline.run()?;
            fs::create_dir_all(path.parent().unwrap())?;
            fs::write(&path, report.to_json())?;
            print!("{}", render_table(std::slice::from_ref(&report)));
            if calibrate {
                print!("{}", calibration_report(&report));
            }
            for f in &report.failures {
                eprintln!("failure: {f}");
            }
            eprintln!("report: {}", path.display());
            Ok(report.failures.is_empty())
        }
        Command::Report { reports, csv, plot } => {
            let files = if reports.is_empty() {
                let dir = config.data_dir.join("reports");
                let mut v: Vec<PathBuf> = fs::read_dir(&dir)
                    .with_context(|| format!("reading {}", dir.display()))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x == "json"))
                    .collect();
                v.sort();
                v
            } else {
                reports
            };
            let mut loaded = Vec::new();
            for f in &files {
                loaded.push(CoverageReport::from_json(&fs::read_to_string(f)?)?);
            }
            print!("{}", render_table(&loaded));
            if let Some(path) = csv {
                fs::write(&path, render_csv(&loaded))?;
            }
            if let Some(dir) = plot {
                fs::create_dir_all(&dir)?;
                let mut splits: Vec<String> = Vec::new();
                for r in &loaded {
                    for s in &r.splits {
                        if !splits.contains(&s.split) {
                            splits.push(s.split.clone());
                        }
                    }
                }
                for s in splits {
                    let path = dir.join(format!("coverage-{s}.svg"));
                    fs::write(&path, render_svg(&loaded, &s))?;
                    eprintln!("wrote {}", path.display());
                }
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.global.verbose {
        "info"
    } else {
        "warn"
    }))
    .init();
    let config = match build_config(&cli.global) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    match run(cli.command, config) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
