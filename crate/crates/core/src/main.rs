//! `seeker` command line: batch sensor-leak analysis over IR files.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use seeker::config::{default_sensor_config, load_config, SourceSinkConfig};
use seeker::graphs::{build_callgraph, build_cfg, callgraph_to_dot, cfg_to_dot, EntryPointModel};
use seeker::ir::parse_program;
use seeker::report::{
    batch_to_text, collect_apps, run_batch, summarize, to_json, AppStatus, BatchOptions,
    BatchReport,
};

#[derive(Parser, Debug)]
#[command(
    name = "seeker",
    version,
    about = "Detects sensor data leaks in three-address IR programs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Analyze one `.ir` file or a directory tree of them
    Analyze {
        /// IR file or directory to scan
        input: PathBuf,
        /// Source/sink configuration file (default: built-in sensor config)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Per-app time budget in seconds
        #[arg(long, default_value_t = 20 * 60)]
        budget: u64,
        /// Number of apps analyzed concurrently
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Skip apps whose code never mentions android.hardware.sensor
        #[arg(long)]
        prefilter: bool,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Write the report to this file instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print CFG and call-graph DOT dumps to stdout
        #[arg(long)]
        dump_graphs: bool,
        /// Exit 0 even when some apps fail to parse
        #[arg(long)]
        allow_parse_errors: bool,
    },
}

fn load_configuration(path: Option<&PathBuf>) -> Result<SourceSinkConfig, String> {
    match path {
        None => Ok(default_sensor_config()),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|err| format!("cannot read config {}: {err}", path.display()))?;
            load_config(&text).map_err(|err| format!("{}: {err}", path.display()))
        }
    }
}

fn dump_graphs_for(apps: &[(String, PathBuf)]) {
    for (id, path) in apps {
        let Ok(text) = std::fs::read_to_string(path) else {
            continue;
        };
        let Ok(program) = parse_program(&text) else {
            continue;
        };
        println!("# graphs for {id}");
        let callgraph = build_callgraph(&program, &EntryPointModel::default_android());
        print!("{}", callgraph_to_dot(&callgraph));
        for method in program.methods() {
            print!("{}", cfg_to_dot(&build_cfg(method), method));
        }
    }
}

fn run() -> Result<u8, String> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err)
            if matches!(
                err.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
            ) =>
        {
            print!("{err}");
            return Ok(0);
        }
        Err(err) => {
            eprint!("{err}");
            return Ok(1);
        }
    };

    let Command::Analyze {
        input,
        config,
        budget,
        workers,
        prefilter,
        format,
        out,
        dump_graphs,
        allow_parse_errors,
    } = cli.command;

    let config = load_configuration(config.as_ref())?;
    for warning in &config.warnings {
        eprintln!("warning: {warning}");
    }

    let apps =
        collect_apps(&input).map_err(|err| format!("cannot scan {}: {err}", input.display()))?;
    if apps.is_empty() {
        eprintln!("warning: no .ir files under {}", input.display());
    }
    if dump_graphs {
        dump_graphs_for(&apps);
    }

    let options = BatchOptions {
        budget: Duration::from_secs(budget),
        workers,
        prefilter,
    };
    let reports = run_batch(&apps, &config, &options);
    let summary = summarize(&reports);
    let any_parse_error = reports.iter().any(|r| r.status == AppStatus::ParseError);
    let batch = BatchReport {
        apps: reports,
        summary,
    };

    let rendered = match format {
        Format::Json => to_json(&batch),
        Format::Text => batch_to_text(&batch),
    };
    match out {
        Some(path) => std::fs::write(&path, rendered)
            .map_err(|err| format!("cannot write {}: {err}", path.display()))?,
        None => print!("{rendered}"),
    }

    Ok(if any_parse_error && !allow_parse_errors {
        2
    } else {
        0
    })
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}
