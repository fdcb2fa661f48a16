use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use sematype::replay::{check_uaf, format_trace, gen_trace, parse_trace, replay_with, GenConfig, ReplayConfig, UafProbe};
use sematype::{analyze_graph, parse_graph, EncodingLayout, FlowCallGraph, Verdict, WeightedDag};

mod analysis;

#[derive(Debug, Parser)]
#[command(name = "sematype", version, about = "SemaType analysis, trace replay and UAF probing")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Width of the nID field.
    #[arg(long, global = true, env = "SEMATYPE_NID_BITS", default_value_t = 16)]
    nid_bits: u32,
    /// Width of the rID field (and of the rID aggregation mask).
    #[arg(long, global = true, env = "SEMATYPE_RID_BITS", default_value_t = 14)]
    rid_bits: u32,
    /// Width of the size field; defaults to whatever the other two leave.
    #[arg(long, global = true, env = "SEMATYPE_SIZE_BITS")]
    size_bits: Option<u32>,
    #[arg(long, global = true, env = "SEMATYPE_SEED", default_value_t = 0)]
    seed: u64,
    /// Write output here instead of stdout.
    #[arg(long, global = true, env = "SEMATYPE_OUT")]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Weigh a call graph and report nIDs, paths and SemaType bounds.
    Analyze {
        graph: PathBuf,
        /// Most paths listed in the report.
        #[arg(long, default_value_t = 256)]
        max_paths: usize,
    },
    /// Replay a trace and check allocation segregation.
    Replay { graph: PathBuf, trace: PathBuf },
    /// Does any attacker object land where the dangling one lived?
    CheckUaf {
        graph: PathBuf,
        trace: PathBuf,
        #[arg(long)]
        dangling: String,
        #[arg(long = "attacker", required = true, value_delimiter = ',')]
        attackers: Vec<String>,
    },
    /// Emit a random trace that is valid for the graph.
    GenTrace {
        graph: PathBuf,
        #[arg(long, default_value_t = 200)]
        events: usize,
        #[arg(long, default_value_t = 3)]
        recursion_bound: u32,
        #[arg(long, default_value_t = 4)]
        loop_bound: u32,
        #[arg(long, default_value_t = 1)]
        threads: u32,
        #[arg(long, default_value_t = 0.3)]
        free_prob: f64,
        #[arg(long, default_value_t = 1.0)]
        final_free_prob: f64,
    },
}

enum Failure {
    Input(anyhow::Error),
    Invariant(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

type Outcome = Result<(), Failure>;

impl Global {
    fn layout(&self) -> anyhow::Result<EncodingLayout> {
        let size_bits = match self.size_bits {
            Some(s) => s,
            None => 62u32
                .checked_sub(self.nid_bits + self.rid_bits)
                .ok_or_else(|| anyhow!("nid-bits + rid-bits must stay below 62"))?,
        };
        Ok(EncodingLayout::new(self.nid_bits, self.rid_bits, size_bits)?)
    }

    fn emit(&self, body: &str) -> anyhow::Result<()> {
        match &self.out {
            Some(p) => fs::write(p, body).with_context(|| format!("writing {}", p.display())),
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(body.as_bytes())?;
                Ok(out.flush()?)
            }
        }
    }

    fn emit_json(&self, value: &impl Serialize) -> anyhow::Result<()> {
        let mut body = serde_json::to_string_pretty(value)?;
        body.push('\n');
        self.emit(&body)
    }
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_graph(path: &Path) -> anyhow::Result<(FlowCallGraph, WeightedDag)> {
    let g = parse_graph(&read(path)?).with_context(|| format!("in {}", path.display()))?;
    let wd = analyze_graph(&g).with_context(|| format!("analyzing {}", path.display()))?;
    Ok((g, wd))
}

fn run(cli: Cli) -> Outcome {
    let layout = cli.global.layout()?;
    let replay_cfg = ReplayConfig::new(layout);
    match &cli.command {
        Command::Analyze { graph, max_paths } => {
            let (g, wd) = load_graph(graph)?;
            let report = analysis::analysis_report(&g, &wd, &layout, *max_paths);
            if let Some(w) = &report.capacity_warning {
                eprintln!("warning: {w}");
            }
            cli.global.emit_json(&report)?;
        }
        Command::Replay { graph, trace } => {
            let (_, wd) = load_graph(graph)?;
            let events = parse_trace(&read(trace)?, wd.dag().graph()).with_context(|| format!("in {}", trace.display()))?;
            let report = replay_with(&wd, &events, &replay_cfg).context("replay aborted")?;
            cli.global.emit_json(&report)?;
            if report.verdict == Verdict::Fail {
                return Err(Failure::Invariant(format!("{} segregation violations", report.violations.len())));
            }
        }
        Command::CheckUaf { graph, trace, dangling, attackers } => {
            let (_, wd) = load_graph(graph)?;
            let events = parse_trace(&read(trace)?, wd.dag().graph()).with_context(|| format!("in {}", trace.display()))?;
            let probe = UafProbe { dangling_object: dangling.clone(), attacker_objects: attackers.clone() };
            let report = check_uaf(&wd, &events, &probe, &replay_cfg).context("probe failed")?;
            cli.global.emit_json(&report)?;
        }
        Command::GenTrace { graph, events, recursion_bound, loop_bound, threads, free_prob, final_free_prob } => {
            let (_, wd) = load_graph(graph)?;
            let cfg = GenConfig {
                seed: cli.global.seed,
                n_events: *events,
                recursion_bound: *recursion_bound,
                loop_bound: *loop_bound,
                threads: *threads,
                free_prob: *free_prob,
                final_free_prob: *final_free_prob,
            };
            let trace = gen_trace(&wd, &cfg).context("bad generator bounds")?;
            let header = format!(
                "# seed={} events={} recursion_bound={} loop_bound={} threads={}\n",
                cfg.seed, cfg.n_events, cfg.recursion_bound, cfg.loop_bound, cfg.threads
            );
            cli.global.emit(&(header + &format_trace(&trace)))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Invariant(msg)) => {
            eprintln!("invariant violated: {msg}");
            ExitCode::from(1)
        }
    }
}
