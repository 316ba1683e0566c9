use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use sparse_sched::exec::{emit_c, ExecOptions, ExecStats};
use sparse_sched::gen::{random_sparse, rng, skewed};
use sparse_sched::lower::{LowerOptions, Recovery};
use sparse_sched::notation::parse_expression;
use sparse_sched::pipeline::{Job, RunOptions, TOLERANCE};
use sparse_sched::tensor::{
    pack, parse_coo, write_frostt, write_matrix_market, CooFormat, CooTensor, DenseTensor, Format,
    Inputs,
};

#[derive(Parser, Debug)]
#[command(
    name = "sparse-sched",
    version,
    about = "Schedule, lower and run sparse tensor algebra"
)]
#[command(args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    /// Index notation, or `@PATH` to read it from a file.
    #[arg(long)]
    expr: Option<String>,

    /// Input binding; FMT is one letter per level, `d` dense or `s` compressed.
    #[arg(long = "tensor", value_name = "NAME=PATH:FMT")]
    tensors: Vec<String>,

    /// Schedule file; without one the statement runs unscheduled.
    #[arg(long)]
    schedule: Option<PathBuf>,

    #[arg(long = "action", value_enum, conflicts_with = "action")]
    action_flag: Option<Action>,

    #[arg(value_enum)]
    action: Option<Action>,

    /// Write the artifact here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed for the generators.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Run the outermost CPUThread loop on this many threads.
    #[arg(long)]
    threads: Option<usize>,

    /// Coordinate recovery for position loops.
    #[arg(long, value_enum, default_value_t = RecoveryArg::Track)]
    recovery: RecoveryArg,

    /// Re-derive every loop variable at each compute point and check it.
    #[arg(long)]
    check_recovery: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Action {
    Run,
    Verify,
    Emit,
    Stats,
    DumpGraph,
    DumpIr,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RecoveryArg {
    Track,
    Search,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Matrix with geometrically distributed row lengths, rows shuffled.
    GenSkewed {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long)]
        nnz: usize,
        #[arg(long)]
        base: f64,
    },
    /// Uniformly random tensor; density 1 gives a dense one.
    GenRandom {
        /// Comma separated, e.g. `40,50`.
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 1.0)]
        density: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Returns whether the action succeeded; only `verify` can report failure
/// without an error.
fn dispatch(cli: &Cli) -> Result<bool> {
    if let Some(cmd) = &cli.command {
        let coo = match cmd {
            Command::GenSkewed {
                rows,
                cols,
                nnz,
                base,
            } => skewed(*rows, *cols, *nnz, *base, cli.seed)?,
            Command::GenRandom { dims, density } => {
                random_sparse(dims, *density, &mut rng(cli.seed))
            }
        };
        let text = match cli.out.as_deref() {
            Some(p)
                if CooFormat::from_path(&p.to_string_lossy()) == Some(CooFormat::MatrixMarket) =>
            {
                if coo.order() != 2 {
                    bail!("MatrixMarket files hold matrices; use a .tns path");
                }
                write_matrix_market(&coo)
            }
            _ => write_frostt(&coo),
        };
        write_out(cli.out.as_deref(), &text)?;
        return Ok(true);
    }

    let action = cli
        .action_flag
        .or(cli.action)
        .ok_or_else(|| anyhow!("no action given"))?;
    let expr = match cli.expr.as_deref() {
        Some(e) => match e.strip_prefix('@') {
            Some(path) => fs::read_to_string(path).with_context(|| format!("reading {path}"))?,
            None => e.to_string(),
        },
        None => bail!("--expr is required"),
    };
    let inputs = load_inputs(&cli.tensors)?;
    for name in parse_expression(&expr)?.inputs() {
        if !inputs.contains_key(&name) {
            bail!("tensor '{name}' is not bound; pass --tensor {name}=PATH:FMT");
        }
    }
    let schedule = match &cli.schedule {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    let job = Job::new(&expr, &inputs, &schedule)?;
    let opts = RunOptions {
        lower: LowerOptions {
            recovery: match cli.recovery {
                RecoveryArg::Track => Recovery::Track,
                RecoveryArg::Search => Recovery::Search,
            },
            verify_recovery: cli.check_recovery,
        },
        exec: ExecOptions {
            trace: false,
            threads: cli.threads,
        },
    };
    let out = cli.out.as_deref();
    match action {
        Action::Run => {
            let (y, _) = job.run(&inputs, opts)?;
            write_out(out, &dense_text(&y))?;
        }
        Action::Verify => {
            let err = job.verify(&inputs, opts)?;
            let pass = err <= TOLERANCE;
            let verdict = if pass { "PASS" } else { "FAIL" };
            write_out(out, &format!("max relative error: {err:e}\n{verdict}\n"))?;
            return Ok(pass);
        }
        Action::Emit => write_out(out, &emit_c(&job.kernel(opts.lower)?))?,
        Action::Stats => {
            let (_, stats) = job.run(&inputs, opts)?;
            write_out(out, &stats_text(&stats))?;
        }
        Action::DumpGraph => write_out(out, &job.stmt.graph.to_dot(&job.stmt.provenance))?,
        Action::DumpIr => write_out(out, &job.kernel(opts.lower)?.pretty())?,
    }
    Ok(true)
}

fn load_inputs(bindings: &[String]) -> Result<Inputs> {
    let mut inputs = Inputs::new();
    for b in bindings {
        let (name, rest) = b
            .split_once('=')
            .ok_or_else(|| anyhow!("tensor binding '{b}' is not NAME=PATH:FMT"))?;
        let (path, fmt) = rest
            .rsplit_once(':')
            .ok_or_else(|| anyhow!("tensor binding '{b}' has no level formats"))?;
        let fmt: Format = fmt
            .parse()
            .with_context(|| format!("formats of '{name}'"))?;
        let kind = CooFormat::from_path(path)
            .ok_or_else(|| anyhow!("{path}: expected a .mtx or .tns file"))?;
        let text = fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
        let coo: CooTensor = parse_coo(&text, kind).with_context(|| path.to_string())?;
        if coo.order() != fmt.order() {
            bail!(
                "{name}: file has order {}, formats give {}",
                coo.order(),
                fmt.order()
            );
        }
        let tensor = pack(&coo, &fmt).with_context(|| format!("packing {name}"))?;
        if inputs.insert(name.to_string(), tensor).is_some() {
            bail!("tensor '{name}' is bound twice");
        }
    }
    Ok(inputs)
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// One line per entry in row-major order: 0-based coordinates, then the value.
fn dense_text(y: &DenseTensor) -> String {
    let mut out = String::new();
    let mut coord = vec![0usize; y.dims.len()];
    for v in &y.vals {
        for c in &coord {
            let _ = write!(out, "{c} ");
        }
        let _ = writeln!(out, "{v:e}");
        for l in (0..coord.len()).rev() {
            coord[l] += 1;
            if coord[l] < y.dims[l] {
                break;
            }
            coord[l] = 0;
        }
    }
    out
}

fn stats_text(s: &ExecStats) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "body executions: {}", s.body_executions);
    let _ = writeln!(out, "guard passes: {}", s.guard_passes);
    let _ = writeln!(out, "guard failures: {}", s.guard_failures);
    for (var, n) in &s.loop_iterations {
        let _ = writeln!(out, "loop {var}: {n} iterations");
    }
    for (var, work) in &s.instance_work {
        let (min, max) = (
            work.iter().min().copied().unwrap_or(0),
            work.iter().max().copied().unwrap_or(0),
        );
        let mean = if work.is_empty() {
            0.0
        } else {
            work.iter().sum::<u64>() as f64 / work.len() as f64
        };
        let _ = writeln!(
            out,
            "parallel {var}: {} chunks, work min {min} max {max} mean {mean:.3}",
            work.len()
        );
        if let Some((_, body)) = work.split_last() {
            if let (Some(lo), Some(hi)) = (body.iter().min(), body.iter().max()) {
                if *lo > 0 {
                    let _ = writeln!(
                        out,
                        "parallel {var}: non-tail max/min {:.3}",
                        *hi as f64 / *lo as f64
                    );
                }
            }
        }
    }
    out
}
