//! The `sfl` command line: train, eval, heatmap, export-graph, coverage
//! and replay over run bundles.
//!
//! Relative paths resolve against the output root (`--out-root`, or the
//! `SFL_OUTPUT_ROOT` environment variable, default `.`).

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::agent::{random_baseline, Agent, AgentError, EpisodeTrace, EvalMode};
use crate::checkpoint::{self, CheckpointError};
use crate::config::{ConfigError, SflConfig};
use crate::gridworld::{
    geodesic_distance, ActionMode, Cell, GridMap, GridState, Heading, MapError, TabularDynamics, World,
    DEFAULT_STATE_CAP,
};
use crate::metrics::{binomial_se, mean_se};
use crate::rng::{stream, Stream};
use crate::similarity::{heatmap, write_heatmap_csv, SimilarityError};
use crate::successor::{analytic_sr, AnalyticSf, SrError};

pub const OUTPUT_ROOT_ENV: &str = "SFL_OUTPUT_ROOT";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TRACES_FILE: &str = "traces.jsonl";
pub const EVAL_FILE: &str = "eval.jsonl";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Sr(#[from] SrError),
    #[error("bad --set `{0}`: expected section.key=value")]
    BadOverride(String),
    #[error("bad state `{0}`: expected x,y,heading[,doors]")]
    BadState(String),
    #[error("state {0} is not a valid state of this map")]
    InvalidState(GridState),
    #[error("map has no goal cell; pass --goal")]
    NoGoal,
    #[error("episode {episode} not in {path}; traced episodes: {available}")]
    NoTrace {
        episode: u64,
        path: PathBuf,
        available: String,
    },
    #[error("malformed trace line in {path}: {source}")]
    Trace { path: PathBuf, source: serde_json::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(name = "sfl", version, about = "Successor feature landmarks on gridworlds")]
pub struct Cli {
    /// Directory that relative output and checkpoint paths resolve against.
    #[arg(long, env = OUTPUT_ROOT_ENV, default_value = ".", global = true)]
    pub out_root: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an agent and write a run bundle plus metrics stream.
    Train(TrainArgs),
    /// Evaluate goal reaching for one or more run bundles.
    Eval(EvalArgs),
    /// Write the SFS heatmap for a reference state as CSV.
    Heatmap(HeatmapArgs),
    /// Write the landmark graph as a DOT document.
    ExportGraph(ExportArgs),
    /// Report state coverage of a run.
    Coverage(CoverageArgs),
    /// Print a traced training episode.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub map: PathBuf,
    /// TOML config; unspecified keys keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Config override, e.g. `--set graph.landmark_cap=30`. Repeatable;
    /// wins over the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200_000)]
    pub steps: u64,
    /// Run directory; defaults to `run<seed>` under the output root.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Record every n-th episode in the trace file; 0 disables tracing.
    #[arg(long, default_value_t = 100)]
    pub trace_every: u64,
    /// Also snapshot the bundle every n steps under `snapshots/`.
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpawnArg {
    Fixed,
    Random,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run bundle; repeat to aggregate over seeds.
    #[arg(long, required = true)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 100)]
    pub budget: usize,
    /// Spawn protocol; defaults to the run's `agent.eval_mode`.
    #[arg(long)]
    pub mode: Option<SpawnArg>,
    /// Fixed-spawn start; defaults to the map start.
    #[arg(long)]
    pub start: Option<String>,
    /// Fixed-spawn goal; defaults to the map goal cell facing east.
    #[arg(long)]
    pub goal: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Reference state as `x,y,heading[,doors]`, e.g. `1,1,N`.
    #[arg(long)]
    pub ref_state: String,
    /// Use the exact successor representation instead of the learned SF.
    #[arg(long)]
    pub analytic: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CoverageArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub episode: u64,
    /// Print one frame per step instead of the summary path.
    #[arg(long)]
    pub frames: bool,
}

/// Layers `key=value` overrides onto a TOML document and parses the result.
pub fn resolve_config(file: Option<&str>, overrides: &[String]) -> Result<SflConfig, CliError> {
    let mut doc: toml::Table = match file {
        Some(text) => text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?,
        None => toml::Table::new(),
    };
    for item in overrides {
        let (key, raw) = item.split_once('=').ok_or_else(|| CliError::BadOverride(item.clone()))?;
        let path: Vec<&str> = key.trim().split('.').collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(CliError::BadOverride(item.clone()));
        }
        let value = format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
        let (last, parents) = path.split_last().expect("split yields at least one part");
        let mut table = &mut doc;
        for p in parents {
            let entry = table
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = entry.as_table_mut().ok_or_else(|| CliError::BadOverride(item.clone()))?;
        }
        table.insert(last.to_string(), value);
    }
    Ok(SflConfig::from_toml(&doc.to_string())?)
}

fn parse_state(text: &str) -> Result<GridState, CliError> {
    text.parse().map_err(|_| CliError::BadState(text.to_string()))
}

fn resolve(root: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

fn json_line<W: Write, T: Serialize>(w: &mut W, path: &Path, value: &T) -> Result<(), CliError> {
    let line = serde_json::to_string(value).expect("records are always serializable");
    writeln!(w, "{line}").map_err(io_err(path))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let root = cli.out_root;
    match cli.command {
        Command::Train(a) => train(&root, a),
        Command::Eval(a) => eval(&root, a),
        Command::Heatmap(a) => heatmap_cmd(&root, a),
        Command::ExportGraph(a) => export_graph(&root, a),
        Command::Coverage(a) => coverage_cmd(&root, a),
        Command::Replay(a) => replay(&root, a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn train(root: &Path, a: TrainArgs) -> Result<(), CliError> {
    let map = GridMap::load(&a.map)?;
    let text = match &a.config {
        Some(p) => Some(fs::read_to_string(p).map_err(io_err(p))?),
        None => None,
    };
    let config = resolve_config(text.as_deref(), &a.overrides)?;
    let dir = resolve(root, &a.out.unwrap_or_else(|| PathBuf::from(format!("run{}", a.seed))));
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let metrics_path = dir.join(METRICS_FILE);
    let traces_path = dir.join(TRACES_FILE);
    let mut metrics = create(&metrics_path)?;
    let mut traces = create(&traces_path)?;

    let mut agent = Agent::new(map, config, a.seed)?;
    let mut next_snapshot = a.checkpoint_every;
    while agent.steps() < a.steps {
        let trace = agent.explore_episode()?;
        json_line(&mut metrics, &metrics_path, &agent.metrics(&trace))?;
        if a.trace_every > 0 && trace.episode % a.trace_every == 0 {
            json_line(&mut traces, &traces_path, &trace)?;
        }
        if a.checkpoint_every > 0 && agent.steps() >= next_snapshot {
            checkpoint::save(&dir.join("snapshots").join(format!("step{next_snapshot}")), &agent, a.seed)?;
            next_snapshot += a.checkpoint_every;
        }
    }
    metrics.flush().map_err(io_err(&metrics_path))?;
    traces.flush().map_err(io_err(&traces_path))?;
    checkpoint::save(&dir, &agent, a.seed)?;
    println!(
        "{}: {} steps, {} episodes, {} landmarks, {} edges, coverage {:.1}%, config {}",
        dir.display(),
        agent.steps(),
        agent.counters().episodes,
        agent.graph().len(),
        agent.graph().num_edges(),
        agent.coverage_pct(),
        agent.config_hash()
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct TrialRecord {
    trial: usize,
    start: String,
    goal: String,
    geodesic: Option<usize>,
    bin: Option<usize>,
    success: bool,
    steps: usize,
    planned: bool,
    baseline_success: bool,
    config_hash: String,
}

/// Quantile thresholds splitting `values` into `bins` groups.
fn bin_edges(values: &[usize], bins: usize) -> Vec<usize> {
    let mut v = values.to_vec();
    v.sort_unstable();
    if v.is_empty() || bins < 2 {
        return Vec::new();
    }
    (1..bins).map(|k| v[(k * v.len() / bins).min(v.len() - 1)]).collect()
}

fn bin_of(edges: &[usize], d: usize) -> usize {
    edges.iter().filter(|&&e| d >= e).count()
}

fn eval(root: &Path, a: EvalArgs) -> Result<(), CliError> {
    let mut rates = Vec::new();
    let mut baseline_rates = Vec::new();
    for ckpt in &a.checkpoint {
        let dir = resolve(root, ckpt);
        let (agent, meta) = checkpoint::load(&dir)?;
        let map = agent.world().clone();
        let mode = match a.mode {
            Some(SpawnArg::Fixed) => EvalMode::FixedSpawn,
            Some(SpawnArg::Random) => EvalMode::RandomSpawn,
            None => agent.config().agent.eval_mode,
        };
        let mut rng = stream(a.seed, Stream::Eval);
        let mut base_rng = stream(a.seed, Stream::Baseline);
        let pairs: Vec<(GridState, GridState)> = match mode {
            EvalMode::FixedSpawn => {
                let start = a.start.as_deref().map(parse_state).transpose()?.unwrap_or_else(|| map.start_state());
                let goal = match a.goal.as_deref() {
                    Some(g) => parse_state(g)?,
                    None => {
                        let (x, y) = map.goal().ok_or(CliError::NoGoal)?;
                        GridState::new(x, y, Heading::E)
                    }
                };
                for s in [&start, &goal] {
                    if !map.is_valid(s) {
                        return Err(CliError::InvalidState(*s));
                    }
                }
                vec![(start, goal); a.trials]
            }
            EvalMode::RandomSpawn => {
                let states = map.states().map_err(AgentError::from)?;
                let mut out = Vec::with_capacity(a.trials);
                while out.len() < a.trials {
                    let s = states[rng.random_range(0..states.len())];
                    let g = states[rng.random_range(0..states.len())];
                    if s != g && geodesic_distance(&map, &s, &g).is_some() {
                        out.push((s, g));
                    }
                }
                out
            }
        };
        let geodesics: Vec<Option<usize>> = pairs.iter().map(|(s, g)| geodesic_distance(&map, s, g)).collect();
        let known: Vec<usize> = geodesics.iter().flatten().copied().collect();
        let edges = match mode {
            EvalMode::RandomSpawn => bin_edges(&known, agent.config().agent.difficulty_bins),
            EvalMode::FixedSpawn => Vec::new(),
        };
        let path = dir.join(EVAL_FILE);
        let mut out = create(&path)?;
        let mut wins = 0;
        let mut base_wins = 0;
        let bins = edges.len() + 1;
        let mut per_bin = vec![(0usize, 0usize); bins];
        for (trial, ((start, goal), geo)) in pairs.iter().zip(&geodesics).enumerate() {
            let o = agent.evaluate(start, goal, a.budget, &mut rng)?;
            let b = random_baseline(&map, start, goal, a.budget, &mut base_rng);
            let bin = geo.map(|d| bin_of(&edges, d));
            if let Some(bin) = bin {
                per_bin[bin].0 += o.success as usize;
                per_bin[bin].1 += 1;
            }
            wins += o.success as usize;
            base_wins += b.success as usize;
            let rec = TrialRecord {
                trial,
                start: start.to_string(),
                goal: goal.to_string(),
                geodesic: *geo,
                bin,
                success: o.success,
                steps: o.steps,
                planned: o.planned,
                baseline_success: b.success,
                config_hash: meta.config_hash.clone(),
            };
            json_line(&mut out, &path, &rec)?;
        }
        out.flush().map_err(io_err(&path))?;
        let n = pairs.len();
        println!(
            "{} (seed {}): success {:.3} ± {:.3}, random baseline {:.3} ± {:.3}, {} trials, config {}",
            dir.display(),
            meta.seed,
            wins as f64 / n as f64,
            binomial_se(wins, n),
            base_wins as f64 / n as f64,
            binomial_se(base_wins, n),
            n,
            meta.config_hash
        );
        if bins > 1 {
            for (i, (w, t)) in per_bin.iter().enumerate() {
                let lo = if i == 0 { 0 } else { edges[i - 1] };
                println!("  bin {i} (geodesic >= {lo}): {w}/{t}");
            }
        }
        rates.push(wins as f64 / n as f64);
        baseline_rates.push(base_wins as f64 / n as f64);
    }
    if rates.len() > 1 {
        println!("success over seeds: {}", mean_se(&rates));
        println!("random baseline over seeds: {}", mean_se(&baseline_rates));
    }
    Ok(())
}

fn heatmap_cmd(root: &Path, a: HeatmapArgs) -> Result<(), CliError> {
    let dir = resolve(root, &a.checkpoint);
    let (agent, meta) = checkpoint::load(&dir)?;
    let map = agent.world();
    let reference = parse_state(&a.ref_state)?;
    if map.state_index(&reference).is_none() {
        return Err(CliError::InvalidState(reference));
    }
    let rows = if a.analytic {
        let dynamics = TabularDynamics::from_grid(map, ActionMode::Full, DEFAULT_STATE_CAP).map_err(AgentError::from)?;
        let sr = analytic_sr(&dynamics, agent.config().sf.gamma)?;
        heatmap(map, &AnalyticSf::new(map, &sr), &reference)?
    } else {
        heatmap(map, &agent.sf_source(), &reference)?
    };
    let name = format!(
        "heatmap_{}_{}_{}{}.csv",
        reference.x,
        reference.y,
        reference.heading,
        if a.analytic { "_analytic" } else { "" }
    );
    let path = a.out.map(|p| resolve(root, &p)).unwrap_or_else(|| dir.join(name));
    let mut out = create(&path)?;
    write_heatmap_csv(&mut out, &rows, &meta.config_hash).map_err(io_err(&path))?;
    out.flush().map_err(io_err(&path))?;
    println!("{} rows -> {}", rows.len(), path.display());
    Ok(())
}

fn export_graph(root: &Path, a: ExportArgs) -> Result<(), CliError> {
    let dir = resolve(root, &a.checkpoint);
    let (agent, meta) = checkpoint::load(&dir)?;
    let dot = agent.graph().to_dot(|s: &GridState| format!("x={}, y={}, heading={}", s.x, s.y, s.heading));
    let path = a.out.map(|p| resolve(root, &p)).unwrap_or_else(|| dir.join("graph.dot"));
    fs::write(&path, format!("// config_hash={}\n{dot}", meta.config_hash)).map_err(io_err(&path))?;
    println!(
        "{} landmarks, {} edges -> {}",
        agent.graph().len(),
        agent.graph().num_edges(),
        path.display()
    );
    Ok(())
}

/// Map with visited cells as `.`, unvisited passable cells as `?`.
pub fn render_visits(map: &GridMap, visited: impl Fn(usize, usize) -> bool) -> String {
    let mut out = String::new();
    for y in 0..map.height() {
        for x in 0..map.width() {
            let c = map.cell(x, y);
            out.push(match c {
                Cell::Wall => '#',
                _ if visited(x, y) => '.',
                _ => '?',
            });
        }
        out.push('\n');
    }
    out
}

fn coverage_cmd(root: &Path, a: CoverageArgs) -> Result<(), CliError> {
    let dir = resolve(root, &a.checkpoint);
    let (agent, meta) = checkpoint::load(&dir)?;
    let visits = agent.visits();
    println!(
        "coverage {:.1}% of {} cells after {} steps (config {})",
        agent.coverage_pct(),
        agent.world().num_cells(),
        meta.counters.step,
        meta.config_hash
    );
    print!("{}", render_visits(agent.world(), |x, y| visits.get(&(x, y)).is_some_and(|&n| n > 0)));
    Ok(())
}

fn heading_glyph(h: Heading) -> char {
    match h {
        Heading::N => '^',
        Heading::E => '>',
        Heading::S => 'v',
        Heading::W => '<',
    }
}

fn frame(map: &GridMap, marks: &[(usize, usize, char)]) -> String {
    let mut rows: Vec<Vec<char>> = map.render().lines().map(|l| l.chars().collect()).collect();
    for &(x, y, c) in marks {
        rows[y][x] = c;
    }
    rows.into_iter().map(|r| r.into_iter().collect::<String>() + "\n").collect()
}

fn replay(root: &Path, a: ReplayArgs) -> Result<(), CliError> {
    let dir = resolve(root, &a.checkpoint);
    let (agent, _) = checkpoint::load(&dir)?;
    let map = agent.world();
    let path = dir.join(TRACES_FILE);
    let file = File::open(&path).map_err(io_err(&path))?;
    let mut seen = Vec::new();
    let mut found: Option<EpisodeTrace<GridState>> = None;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err(&path))?;
        let trace: EpisodeTrace<GridState> =
            serde_json::from_str(&line).map_err(|source| CliError::Trace { path: path.clone(), source })?;
        if trace.episode == a.episode {
            found = Some(trace);
            break;
        }
        seen.push(trace.episode.to_string());
    }
    let Some(trace) = found else {
        return Err(CliError::NoTrace {
            episode: a.episode,
            path,
            available: seen.join(","),
        });
    };
    println!(
        "episode {} from step {}: {} steps, frontier {:?}, success {}",
        trace.episode, trace.start_step, trace.steps, trace.frontier_id, trace.success
    );
    for p in &trace.plans {
        println!("  plan at step {}: {:?} (weight {:.4})", p.created_at_step, p.waypoints, p.total_weight);
    }
    for (step, l) in &trace.localizations {
        println!("  step {step}: localized to landmark {l}");
    }
    let landmarks: Vec<(usize, usize, char)> = agent
        .graph()
        .landmarks()
        .iter()
        .map(|l| (l.snapshot.x, l.snapshot.y, char::from_digit((l.id % 36) as u32, 36).unwrap_or('L')))
        .collect();
    if a.frames {
        for (t, tr) in trace.transitions.iter().enumerate() {
            let s = &tr.next_state;
            let mut marks = landmarks.clone();
            marks.push((s.x, s.y, heading_glyph(s.heading)));
            println!("t={} action={} {:?}", t + 1, tr.action, tr.source_policy);
            print!("{}", frame(map, &marks));
        }
    } else {
        let mut marks: Vec<(usize, usize, char)> = Vec::new();
        for tr in &trace.transitions {
            marks.push((tr.state.x, tr.state.y, '*'));
        }
        marks.extend(landmarks);
        if let Some(last) = trace.transitions.last() {
            let s = &last.next_state;
            marks.push((s.x, s.y, heading_glyph(s.heading)));
        }
        print!("{}", frame(map, &marks));
    }
    Ok(())
}
