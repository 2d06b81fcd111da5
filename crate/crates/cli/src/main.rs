//! `tclif` command-line entry point.

use std::alloc::{GlobalAlloc, Layout, System};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};

use clap::{Args, Parser, Subcommand};
use tclif::bptt::{memory_report, write_memory_csv, HeapMeter};
use tclif::gradcheck::{run_all, GradcheckOptions};
use tclif::train::{
    evaluate, fit, load_checkpoint, load_datasets, save_checkpoint, write_metrics_csv, TrainConfig, Trainer,
};
use tclif::{Error, Network};

struct CountingAlloc;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);
static BASELINE: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            let now = CURRENT.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(now, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }
}

#[global_allocator]
static GLOBAL: CountingAlloc = CountingAlloc;

struct ProcessHeap;

impl HeapMeter for ProcessHeap {
    fn reset_peak(&self) {
        let now = CURRENT.load(Ordering::Relaxed);
        BASELINE.store(now, Ordering::Relaxed);
        PEAK.store(now, Ordering::Relaxed);
    }

    fn peak_bytes(&self) -> usize {
        PEAK.load(Ordering::Relaxed).saturating_sub(BASELINE.load(Ordering::Relaxed))
    }
}

const EXIT_INPUT: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_VERIFY: u8 = 4;

#[derive(Parser)]
#[command(name = "tclif", version, about = "Train and verify two-compartment spiking networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write metrics.csv, config.json and model.tclf.
    Train(RunArgs),
    /// Evaluate a checkpoint on the test split.
    Eval {
        /// Checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Cross-check online and reverse-mode gradients against oracles.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for gradcheck.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Stored-real counts and heap peaks of both trainers versus sequence length.
    Memprofile {
        #[command(flatten)]
        run: RunArgs,
        /// Sequence lengths to measure.
        #[arg(long, value_delimiter = ',', default_value = "49,98,196,392,784")]
        lengths: Vec<usize>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON config; keys mirror the config field names.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config override `KEY=VALUE`, applied after the file. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory, created if absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Apply the optimizer after every time step.
    #[arg(long)]
    update_per_step: bool,
    /// Disable both reset pathways (test mode).
    #[arg(long)]
    no_reset: bool,
}

impl RunArgs {
    fn config(&self) -> Result<TrainConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                TrainConfig::from_json(&text)?
            }
            None => TrainConfig::default(),
        };
        self.apply(&mut cfg)?;
        Ok(cfg)
    }

    fn apply(&self, cfg: &mut TrainConfig) -> Result<(), Error> {
        for kv in &self.overrides {
            cfg.apply_override(kv)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.update_per_step {
            cfg.update_per_step = true;
        }
        if self.no_reset {
            cfg.reset = false;
        }
        if cfg.data_dir.is_none() {
            cfg.data_dir = std::env::var_os("TCLIF_DATA_DIR").map(PathBuf::from);
        }
        Ok(())
    }

    fn out_dir(&self, default: &str) -> Result<PathBuf, Error> {
        let dir = self.out.clone().unwrap_or_else(|| PathBuf::from(default));
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Diverged { .. } | Error::Resource { .. } => EXIT_NUMERIC,
        _ => EXIT_INPUT,
    }
}

fn run_train(args: &RunArgs) -> Result<(), Error> {
    let cfg = args.config()?;
    let data = load_datasets(&cfg, None)?;
    let out = args.out_dir("runs/latest")?;
    fs::write(out.join("config.json"), cfg.to_json())?;
    let mut trainer = Trainer::new(cfg)?;
    let rows = fit(&mut trainer, data.train.as_ref(), data.test.as_ref(), &mut |m| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  train {:.4}  test {:.4}  {:.1}s",
            m.epoch, m.train_loss, m.train_acc, m.test_acc, m.wallclock_s
        );
    })?;
    write_metrics_csv(&rows, fs::File::create(out.join("metrics.csv"))?)?;
    save_checkpoint(out.join("model.tclf"), &trainer.cfg, &trainer.net)?;
    Ok(())
}

fn run_eval(checkpoint: &Path, args: &RunArgs) -> Result<(), Error> {
    let (mut cfg, net) = load_checkpoint(checkpoint)?;
    cfg.data_dir = None;
    args.apply(&mut cfg)?;
    let data = load_datasets(&cfg, None)?;
    let acc = evaluate(&net, data.test.as_ref(), cfg.batch_size, cfg.seed)?;
    println!("test_acc {acc}");
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        let doc = serde_json::json!({ "test_acc": acc, "samples": data.test.len() });
        fs::write(dir.join("eval.json"), doc.to_string())?;
    }
    Ok(())
}

fn run_gradcheck(seed: u64, out: Option<&Path>, inject_fault: bool) -> Result<bool, Error> {
    let mut opts = GradcheckOptions {
        seed,
        ..GradcheckOptions::default()
    };
    opts.eprop.invert_traces = inject_fault;
    let reports = run_all(&opts)?;
    let mut csv = String::from("suite,instances,max_rel_err,tolerance,pass\n");
    for r in &reports {
        println!(
            "{} {:<18} max_rel_err={:.3e} tol={:.0e} instances={}",
            if r.passed() { "PASS" } else { "FAIL" },
            r.name,
            r.max_rel_err,
            r.tolerance,
            r.instances
        );
        csv.push_str(&format!(
            "{},{},{:e},{:e},{}\n",
            r.name,
            r.instances,
            r.max_rel_err,
            r.tolerance,
            r.passed()
        ));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("gradcheck.csv"), csv)?;
    }
    let failed: Vec<_> = reports.iter().filter(|r| !r.passed()).map(|r| r.name).collect();
    if !failed.is_empty() {
        eprintln!("failing suites: {}", failed.join(", "));
    }
    Ok(failed.is_empty())
}

fn run_memprofile(args: &RunArgs, lengths: &[usize]) -> Result<(), Error> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            TrainConfig::from_json(&text)?
        }
        // Pixel-stream defaults: one input per step.
        None => TrainConfig {
            arch: vec![1, 128, 10],
            frame_size: 1,
            ..TrainConfig::default()
        },
    };
    args.apply(&mut cfg)?;
    let net = Network::init(&cfg.network_spec(), &mut tclif::network::decay_rng(cfg.seed, 0))?;
    let rows = memory_report(&net, lengths, cfg.batch_size.min(8), cfg.seed, &ProcessHeap)?;
    let out = args.out_dir("runs/memprofile")?;
    write_memory_csv(&rows, fs::File::create(out.join("memory.csv"))?)?;
    write_memory_csv(&rows, std::io::stdout().lock())?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => run_train(args).map(|()| true),
        Command::Eval { checkpoint, run } => run_eval(checkpoint, run).map(|()| true),
        Command::Gradcheck {
            seed,
            out,
            inject_fault,
        } => run_gradcheck(*seed, out.as_deref(), *inject_fault),
        Command::Memprofile { run, lengths } => run_memprofile(run, lengths).map(|()| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_VERIFY),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
