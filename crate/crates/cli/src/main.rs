use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use declassiflow_core::cfg::{expand_loops, Cfg};
use declassiflow_core::ir::{parse_program, pretty_print, Program};
use declassiflow_core::pipeline::{apply_config, emit_report, run_pipeline, Format, Report, RunConfig};

const EXIT_USAGE: u8 = 1;
const EXIT_ANALYSIS: u8 = 2;
const EXIT_FAIL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "declassiflow",
    version,
    about = "Knowledge-guided speculation barrier placement for mini-IR programs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Knowledge, frontiers and summaries.
    Analyze(Common),
    /// Analysis followed by refinement of functions that are not fully declassified.
    Refine(Common),
    /// Analysis, refinement and barrier placement.
    Protect(Common),
    /// Places barriers and checks the protected program.
    Verify(Common),
    /// Every pass.
    Pipeline(Common),
}

#[derive(Args)]
struct Common {
    /// Mini-IR source file.
    file: PathBuf,
    /// TOML file with limits and entry constraints.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    emit_knowledge: bool,
    #[arg(long)]
    emit_frontiers: bool,
    /// Also place barriers (implied by protect, verify and pipeline).
    #[arg(long)]
    protect: bool,
    /// Also refine (implied by every subcommand but analyze).
    #[arg(long)]
    refine: bool,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "json")]
    format: Format,
    /// Record wall time per phase.
    #[arg(long)]
    timing: bool,
    /// Shuffle the worklist with this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Speculation window in instructions.
    #[arg(long)]
    window: Option<usize>,
    /// Nested mispredictions per path.
    #[arg(long)]
    depth: Option<usize>,
    /// Argument and input domain for verification, as LO..HI.
    #[arg(long, value_parser = parse_domain)]
    domain: Option<(i32, i32)>,
    /// Verify the program as written, without barriers.
    #[arg(long)]
    unprotected: bool,
    /// Print each function's CFG in DOT format and stop.
    #[arg(long)]
    dump_cfg: bool,
    /// Print the loop-expanded program and stop.
    #[arg(long)]
    dump_expanded: bool,
}

fn parse_domain(s: &str) -> Result<(i32, i32), String> {
    let (lo, hi) = s.split_once("..").ok_or("expected LO..HI")?;
    let lo: i32 = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: i32 = hi.trim().trim_start_matches('=').parse().map_err(|e| format!("{e}"))?;
    if lo > hi {
        return Err(format!("empty domain {lo}..{hi}"));
    }
    Ok((lo, hi))
}

enum Failure {
    Usage(String),
    Analysis(String),
}

fn dump(p: &Program, c: &Common) -> Result<String, Failure> {
    let mut out = String::new();
    if c.dump_cfg {
        for f in &p.functions {
            out.push_str(&Cfg::build(f).to_dot(&f.name));
        }
    }
    if c.dump_expanded {
        let mut fs = Vec::new();
        for f in &p.functions {
            fs.push(expand_loops(f).map_err(|e| Failure::Analysis(e.to_string()))?.function);
        }
        out.push_str(&pretty_print(&Program::new(fs)));
    }
    Ok(out)
}

fn run(cmd: &Command) -> Result<(String, Option<PathBuf>, bool), Failure> {
    let (c, refine, protect, verify) = match cmd {
        Command::Analyze(c) => (c, c.refine, c.protect, false),
        Command::Refine(c) => (c, true, c.protect, false),
        Command::Protect(c) => (c, true, true, false),
        Command::Verify(c) | Command::Pipeline(c) => (c, true, true, true),
    };
    let text = std::fs::read_to_string(&c.file).map_err(|e| Failure::Usage(format!("{}: {e}", c.file.display())))?;
    let p = parse_program(&text).map_err(|e| Failure::Analysis(format!("{}: {e}", c.file.display())))?;
    if c.dump_cfg || c.dump_expanded {
        return Ok((dump(&p, c)?, c.out.clone(), true));
    }

    let mut cfg = RunConfig::default();
    if let Some(path) = &c.config {
        let t = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        apply_config(&mut cfg, &t).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    }
    cfg.refine &= refine;
    cfg.protect = protect;
    cfg.verify = verify;
    cfg.verify_unprotected = c.unprotected;
    cfg.emit_knowledge = c.emit_knowledge;
    cfg.emit_frontiers = c.emit_frontiers;
    cfg.timing = c.timing;
    cfg.seed = c.seed;
    if let Some(w) = c.window {
        cfg.verify_limits.window = w;
    }
    if let Some(d) = c.depth {
        cfg.verify_limits.depth = d;
    }
    if let Some((lo, hi)) = c.domain {
        cfg.verify_limits.domain = lo..=hi;
    }

    let out = run_pipeline(&p, &cfg).map_err(|e| Failure::Analysis(e.to_string()))?;
    let report = Report::new(&p, &out, &cfg);
    let mut s = emit_report(&report, c.format);
    if !s.ends_with('\n') {
        s.push('\n');
    }
    Ok((s, c.out.clone(), report.verified()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli.command) {
        Ok((text, out, verified)) => {
            if let Some(path) = out {
                if let Err(e) = std::fs::write(&path, text) {
                    eprintln!("error: {}: {e}", path.display());
                    return ExitCode::from(EXIT_USAGE);
                }
            } else {
                print!("{text}");
            }
            if verified {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAIL)
            }
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Analysis(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_ANALYSIS)
        }
    }
}
