//! Batch front end: `asm`, `dis`, `run` and `trace-diff`.
//!
//! Exit codes for `run`: 0 root finished, 2 root blocked (deadlock),
//! 3 trap, 4 tick limit. Every command exits 1 on I/O, parse or usage
//! errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::asm::{assemble_sources, disassemble};
use crate::image::MemoryImage;
use crate::native::{self, NativeError, SchedulerLayout};
use crate::trace::{self, TraceDiff};
use crate::vm::{RootOutcome, Vm, VmConfig, VmError, DEFAULT_CAPACITY};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_DEADLOCK: i32 = 2;
pub const EXIT_TRAP: i32 = 3;
pub const EXIT_TICK_LIMIT: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "bvm", version, about = "Bounded-execution bytecode VM")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Assemble one or more .bva sources (linked in order) into a .bvi image.
    Asm {
        #[arg(required = true)]
        sources: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// List an image as assembly source.
    Dis {
        image: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run an image from its entry thread.
    Run(RunConfig),
    /// Compare two trace files line by line.
    TraceDiff { left: PathBuf, right: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TraceView {
    /// Every executed instruction.
    Full,
    /// Only non-root threads, renumbered; comparable across schedulers
    /// that interleave workers the same way.
    Workers,
}

#[derive(Debug, Clone, Args)]
pub struct RunConfig {
    pub image: PathBuf,
    /// Memory capacity in words.
    #[arg(long = "mem", env = "BVM_MEM", default_value_t = DEFAULT_CAPACITY as u64,
          value_parser = clap::value_parser!(u64).range(1..))]
    pub mem: u64,
    /// Instructions per bounded run of the root thread.
    #[arg(long, env = "BVM_SLICE", default_value_t = 100_000,
          value_parser = clap::value_parser!(u64).range(1..))]
    pub slice: u64,
    /// Write the execution trace to this file.
    #[arg(long, env = "BVM_TRACE")]
    pub trace: Option<PathBuf>,
    #[arg(long, env = "BVM_TRACE_VIEW", value_enum, default_value_t = TraceView::Full)]
    pub trace_view: TraceView,
    /// Stop with exit code 4 after this many instructions.
    #[arg(long, env = "BVM_MAX_TICKS", default_value_t = 10_000_000)]
    pub max_ticks: u64,
    /// Poke a word before running: `symbol=value` or `address=value`.
    #[arg(long = "set", value_name = "CELL=VALUE")]
    pub set: Vec<String>,
    /// Schedule with the host reference scheduler instead of the
    /// image's own scheduler loop.
    #[arg(long, env = "BVM_NATIVE")]
    pub native: bool,
}

impl RunConfig {
    pub fn new(image: impl Into<PathBuf>) -> RunConfig {
        RunConfig {
            image: image.into(),
            mem: DEFAULT_CAPACITY as u64,
            slice: 100_000,
            trace: None,
            trace_view: TraceView::Full,
            max_ticks: 10_000_000,
            set: Vec::new(),
            native: false,
        }
    }
}

pub fn main_with(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Asm { sources, output } => cmd_asm(&sources, &output),
        Command::Dis { image, output } => cmd_dis(&image, output.as_deref()),
        Command::Run(config) => cmd_run(&config),
        Command::TraceDiff { left, right } => cmd_trace_diff(&left, &right),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}

pub fn cmd_asm(sources: &[PathBuf], output: &Path) -> Result<i32> {
    let texts = sources
        .iter()
        .map(|p| fs::read_to_string(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = sources.iter().map(|p| p.display().to_string()).collect();
    let inputs: Vec<(&str, &str)> = names.iter().map(String::as_str).zip(texts.iter().map(String::as_str)).collect();
    match assemble_sources(&inputs) {
        Ok(image) => {
            fs::write(output, image.to_bvi()).with_context(|| format!("writing {}", output.display()))?;
            Ok(EXIT_OK)
        }
        Err(e) => {
            eprintln!("{e}");
            Ok(EXIT_ERROR)
        }
    }
}

fn read_image(path: &Path) -> Result<MemoryImage> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    MemoryImage::from_bvi(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn cmd_dis(image: &Path, output: Option<&Path>) -> Result<i32> {
    let listing = disassemble(&read_image(image)?);
    match output {
        Some(p) => fs::write(p, listing).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(listing.as_bytes())?,
    }
    Ok(EXIT_OK)
}

fn parse_poke(image: &MemoryImage, spec: &str) -> Result<(u32, i32)> {
    let (cell, value) = spec.split_once('=').ok_or_else(|| anyhow!("expected CELL=VALUE, got `{spec}`"))?;
    let addr = match cell.parse::<u32>() {
        Ok(a) => a,
        Err(_) => image.symbol(cell).ok_or_else(|| anyhow!("unknown symbol `{cell}`"))?,
    };
    let value = value.parse::<i32>().with_context(|| format!("bad value in `{spec}`"))?;
    Ok((addr, value))
}

/// Everything a run produced, independent of how it is reported.
#[derive(Debug)]
pub struct RunReport {
    pub exit_code: i32,
    pub message: String,
    pub cells: Vec<(u32, i32)>,
    pub trace: Option<String>,
}

pub fn execute(config: &RunConfig, image: &MemoryImage) -> Result<RunReport> {
    let root = image.entry_tcb.ok_or_else(|| anyhow!("image has no entry thread"))?;
    let mut vm = Vm::new(VmConfig {
        capacity: usize::try_from(config.mem)?,
        max_ticks: Some(config.max_ticks),
        ..VmConfig::default()
    });
    vm.load_image(image)?;
    for spec in &config.set {
        let (addr, value) = parse_poke(image, spec)?;
        vm.write_i32(addr, value).ok_or_else(|| anyhow!("address {addr} outside memory"))?;
    }
    if config.trace.is_some() {
        vm.enable_tracing();
    }

    let outcome = if config.native {
        let layout = SchedulerLayout::from_image(image)?;
        match native::run(&mut vm, &layout) {
            Ok(exit) => Ok(exit),
            Err(NativeError::Vm(e)) => Err(e),
            Err(e) => bail!(e),
        }
    } else {
        vm.run_root(root, config.slice)
    };
    let (exit_code, message) = match outcome {
        Ok(exit) => match exit.outcome {
            RootOutcome::Finished => (EXIT_OK, format!("finished after {} ticks", exit.ticks)),
            RootOutcome::Deadlock => {
                (EXIT_DEADLOCK, format!("deadlock: root thread blocked after {} ticks", exit.ticks))
            }
        },
        Err(VmError::Trap(t)) => (EXIT_TRAP, t.to_string()),
        Err(e @ VmError::TickLimit { .. }) => (EXIT_TICK_LIMIT, e.to_string()),
        Err(e) => bail!(e),
    };

    let cells = image.results.iter().map(|&a| (a, vm.read_i32(a).unwrap_or(0))).collect();
    let trace = config.trace.as_ref().map(|_| {
        let entries = vm.take_trace();
        match config.trace_view {
            TraceView::Full => trace::render(&entries),
            TraceView::Workers => trace::render(&trace::workers_view(&entries, root)),
        }
    });
    Ok(RunReport { exit_code, message, cells, trace })
}

pub fn cmd_run(config: &RunConfig) -> Result<i32> {
    let image = read_image(&config.image)?;
    let report = execute(config, &image)?;
    if let (Some(path), Some(text)) = (&config.trace, &report.trace) {
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    let mut out = std::io::stdout().lock();
    for (addr, value) in &report.cells {
        writeln!(out, "cell {addr} = {value}")?;
    }
    eprintln!("{}", report.message);
    Ok(report.exit_code)
}

pub fn cmd_trace_diff(left: &Path, right: &Path) -> Result<i32> {
    let a = fs::read_to_string(left).with_context(|| format!("reading {}", left.display()))?;
    let b = fs::read_to_string(right).with_context(|| format!("reading {}", right.display()))?;
    match trace::diff_text(&a, &b) {
        TraceDiff::Identical => {
            println!("traces identical");
            Ok(EXIT_OK)
        }
        TraceDiff::Diverges { line, left: l, right: r } => {
            let tick = l.as_deref().or(r.as_deref()).and_then(|s| s.split('\t').next()).unwrap_or("?");
            let show = |s: Option<String>| s.unwrap_or_else(|| "<end of trace>".to_string());
            println!("traces diverge at line {line} (tick {tick})");
            println!("< {}", show(l));
            println!("> {}", show(r));
            Ok(EXIT_ERROR)
        }
    }
}
