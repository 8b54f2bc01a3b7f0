use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use circlekam_cli::{run, Command, ExperimentConfig, Failure, Format, Options};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "circlekam",
    version,
    about = "Rotation numbers of circle maps and KAM conjugacy experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    /// TOML experiment description
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Result file; standard output when absent
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Overrides the seed in the config
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    verbose: bool,
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Subcommand, Clone, Copy)]
enum Sub {
    /// Rotation number of a single lift, optionally over a torus driver
    #[command(name = "rotno-map")]
    RotnoMap,
    /// Rotation number of a scalar or planar ODE
    #[command(name = "rotno-ode")]
    RotnoOde,
    /// Random composition of rotations or conjugated rotations
    Compose,
    /// KAM conjugacy of a near-rotation map
    Kam,
    /// Diophantine certificate of a frequency vector
    Dioph,
    /// Parameter sweep producing staircase or tongue data
    Sweep,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::RotnoMap => Command::RotnoMap,
            Sub::RotnoOde => Command::RotnoOde,
            Sub::Compose => Command::Compose,
            Sub::Kam => Command::Kam,
            Sub::Dioph => Command::Dioph,
            Sub::Sweep => Command::Sweep,
        }
    }
}

#[derive(ValueEnum, Clone, Copy)]
enum FormatArg {
    Csv,
    Jsonl,
}

fn load(path: Option<&PathBuf>) -> Result<ExperimentConfig, Failure> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    ExperimentConfig::parse(&text).map_err(Failure::Config)
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Failure::Config(circlekam_cli::ConfigError::new(
                "--jobs",
                "must be at least 1",
            )));
        }
        // only fails if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let config = load(cli.config.as_ref())?;
    let opts = Options {
        command: Some(cli.command.into()),
        seed: cli.seed,
        verbose: cli.verbose,
    };
    let mut log = |line: String| eprintln!("{line}");
    let report = run(&config, &opts, &mut log)?;
    let format = match cli.format {
        Some(FormatArg::Csv) => Format::Csv,
        Some(FormatArg::Jsonl) => Format::Jsonl,
        None => config.output.format.unwrap_or_default(),
    };
    let bytes = report.render(format);
    let out = cli
        .out
        .clone()
        .or_else(|| config.output.path.as_ref().map(PathBuf::from));
    match out {
        Some(path) => std::fs::write(&path, bytes).map_err(|e| Failure::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }),
        None => std::io::stdout().write_all(&bytes).map_err(|e| Failure::Io {
            path: "stdout".into(),
            message: e.to_string(),
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.diagnostic());
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
