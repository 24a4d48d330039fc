use clap::{Args, Parser, Subcommand};
use cohsync::experiment::{self, Overrides};
use cohsync::manifest::LoadedManifest;
use cohsync::{io_err, output_root, Result, OUTPUT_ROOT_ENV};
use cohsync_core::verify::{run_suite, SuiteOptions};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Debug, Parser)]
#[command(name = "cohsync", version, about = "Scale-free almost output synchronization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ManifestArgs {
    /// Experiment manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Output root; the run is written to `<out>/<name>/`.
    #[arg(long, env = OUTPUT_ROOT_ENV)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Design the protocol of a manifest and write `design.json`.
    Design {
        #[command(flatten)]
        common: ManifestArgs,
    },
    /// Design and simulate a manifest; exit 0 iff every agent passes.
    Simulate {
        #[command(flatten)]
        common: ManifestArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long = "t-end")]
        t_end: Option<f64>,
    },
    /// Write the communication graph of a manifest as an edge list.
    Graph {
        #[command(flatten)]
        common: ManifestArgs,
    },
    /// Run the verification suite and write `report.txt` and `report.json`.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, env = OUTPUT_ROOT_ENV)]
        out: Option<PathBuf>,
        /// Relative corruption of the Riccati solution checked for its
        /// residual (negative control).
        #[arg(long = "corrupt-p", default_value_t = 0.0)]
        corrupt_p: f64,
    },
}

fn run_dir(common: &ManifestArgs) -> Result<(LoadedManifest, PathBuf)> {
    let loaded = LoadedManifest::load(&common.manifest)?;
    let dir = output_root(common.out.as_deref(), &loaded).join(&loaded.manifest.name);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    Ok((loaded, dir))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Design { common } => {
            let (loaded, dir) = run_dir(&common)?;
            let (model, protocol) = experiment::build_protocol(&loaded)?;
            let dump = experiment::design_dump(&loaded.manifest.name, &model, &protocol)?;
            let path = dir.join(experiment::DESIGN_FILE);
            experiment::write_json(&path, &dump)?;
            println!("{}", path.display());
            Ok(true)
        }
        Command::Simulate { common, seed, dt, t_end } => {
            let loaded = LoadedManifest::load(&common.manifest)?;
            let loaded = Overrides { seed, dt, t_end }.apply(&loaded)?;
            let root = output_root(common.out.as_deref(), &loaded);
            let start = Instant::now();
            let outcome = experiment::run_experiment(&loaded, &root)?;
            let s = &outcome.summary;
            let slowest = s
                .per_agent
                .iter()
                .filter_map(|a| a.settling_time)
                .fold(f64::NEG_INFINITY, f64::max);
            println!(
                "{}: {} agents, settled {}, latest settling {:.3} s, gains flat {}, {}",
                s.name,
                s.agents,
                s.all_settled,
                slowest,
                s.all_flat,
                if s.pass { "PASS" } else { "FAIL" }
            );
            println!("{}", outcome.dir.display());
            eprintln!("elapsed {:.2} s", start.elapsed().as_secs_f64());
            Ok(s.pass)
        }
        Command::Graph { common } => {
            let (loaded, dir) = run_dir(&common)?;
            let graph = loaded.graph()?;
            let path = dir.join("graph.json");
            experiment::write_json(&path, &graph.to_edge_list())?;
            println!("{}", path.display());
            Ok(true)
        }
        Command::Verify { seed, out, corrupt_p } => {
            let report = run_suite(&SuiteOptions { seed, corrupt_p });
            let dir = out.unwrap_or_else(|| PathBuf::from("runs")).join("verify");
            std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let text = report.render_text();
            write_text(&dir.join("report.txt"), &text)?;
            experiment::write_json(&dir.join("report.json"), &report)?;
            print!("{text}");
            Ok(report.passed())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
