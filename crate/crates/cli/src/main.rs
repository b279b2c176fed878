//! `xlmimo`: Monte Carlo driver for blind channel estimation and data
//! detection experiments.
//!
//! Exit codes: 0 on success, 1 for configuration errors, 2 for runtime
//! failures.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use xlmimo::harness::{
    emit_csv, emit_plot_data, run_experiment, run_experiment_with_threads, scaling_benchmark, write_scaling_csv,
    thread_pool, ExperimentConfig, Metric, Prepared, ScalingConfig,
};
use xlmimo::waveform::dump_frame;
use xlmimo::Error;

#[derive(Parser, Debug)]
#[command(name = "xlmimo", version, about = "Blind near-field XL-MIMO channel estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a Monte Carlo experiment and write the result table as CSV.
    Run(RunArgs),
    /// Time B-OMP against dictionary size and BCD against array size.
    Bench(BenchArgs),
    /// Write the polar dictionary grid as CSV.
    DumpDictionary(CommonArgs),
    /// Write the received frame, precoders and channels of one trial.
    DumpFrame(DumpFrameArgs),
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// JSON experiment configuration; defaults are used for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the trial count.
    #[arg(long)]
    trials: Option<usize>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    threads: Option<usize>,
    /// Directory for B-OMP and BCD traces of trial 0 at the first grid point.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Prefix for gnuplot data files (`<prefix>_ser.dat`, `<prefix>_nmse.dat`).
    #[arg(long)]
    plot_data: Option<PathBuf>,
    /// Record per-scheme wall time (output is then not byte-reproducible).
    #[arg(long)]
    wall_time: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// JSON scaling-benchmark configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct DumpFrameArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file prefix.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Trial index to draw.
    #[arg(long, default_value_t = 0)]
    trial: u64,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_)
            | Error::SeparabilityViolated { .. }
            | Error::InvalidGrid(_)
            | Error::InvalidOrder(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, Failure> {
    Ok(match path {
        Some(p) => ExperimentConfig::from_path(p)?,
        None => ExperimentConfig::default(),
    })
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    Ok(BufWriter::new(File::create(path)?))
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, Failure> {
    match threads {
        None => Ok(f()),
        Some(n) => Ok(thread_pool(n)?.install(f)),
    }
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let mut config = load_config(args.common.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(trials) = args.trials {
        config.trials = trials;
    }
    config.record_wall_time |= args.wall_time;
    config.validate()?;

    let table = match args.threads {
        Some(n) => run_experiment_with_threads(&config, n)?,
        None => run_experiment(&config)?,
    };
    let mut out = output(args.common.out.as_deref())?;
    emit_csv(&table, &mut out)?;
    out.flush()?;

    if let Some(prefix) = &args.plot_data {
        for (metric, suffix) in [(Metric::Ser, "_ser.dat"), (Metric::Nmse, "_nmse.dat")] {
            let mut path = prefix.clone().into_os_string();
            path.push(suffix);
            let mut f = create(Path::new(&path))?;
            emit_plot_data(&table, metric, &mut f)?;
            f.flush()?;
        }
    }

    if let Some(dir) = &args.trace {
        std::fs::create_dir_all(dir)?;
        let prepared = Prepared::new(&config)?;
        let point = config.grid()[0];
        let (_, trace) = prepared.run_trial_traced(&point, 0, true)?;
        let mut f = create(&dir.join("bomp_trace.csv"))?;
        xlmimo::bomp::write_trace_csv(&trace.bomp, &mut f)?;
        f.flush()?;
        let mut f = create(&dir.join("bcd_trace.csv"))?;
        xlmimo::refine::write_trace_csv(&trace.bcd, &mut f)?;
        f.flush()?;
    }
    Ok(())
}

fn bench(args: BenchArgs) -> Result<(), Failure> {
    let mut config = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<ScalingConfig>(&text).map_err(|e| Failure::Config(e.to_string()))?
        }
        None => ScalingConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let report = with_threads(args.threads, || scaling_benchmark(&config))??;
    let mut out = output(args.out.as_deref())?;
    write_scaling_csv(&report, &mut out)?;
    out.flush()?;
    eprintln!("B-OMP time vs Q: log-log slope {:.3}", report.bomp_slope);
    eprintln!("BCD time vs N:   log-log slope {:.3}", report.bcd_slope);
    Ok(())
}

fn dump_dictionary(args: CommonArgs) -> Result<(), Failure> {
    let config = load_config(args.config.as_deref())?;
    let prepared = Prepared::new(&config)?;
    let mut out = output(args.out.as_deref())?;
    prepared.dict.write_csv(&mut out)?;
    out.flush()?;
    Ok(())
}

fn dump_frame_cmd(args: DumpFrameArgs) -> Result<(), Failure> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let prepared = Prepared::new(&config)?;
    let point = config.grid()[0];
    let draw = prepared.draw(&point, args.trial)?;
    let frame = draw
        .frame
        .ok_or_else(|| Failure::Config("frame dimensions violate T ≥ K(S+1); no blind frame to dump".into()))?;
    dump_frame(&frame, &args.out)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Bench(a) => bench(a),
        Command::DumpDictionary(a) => dump_dictionary(a),
        Command::DumpFrame(a) => dump_frame_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("configuration error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
