use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use splatbridge::config::{DatasetSource, RunConfig};
use splatbridge::dataset::write_tum_sequence;
use splatbridge::pipeline::{evaluate, load_source, render_frame, run, sweep, write_artifacts, write_sweep_csv};
use splatbridge::splat_map::GaussianMap;
use splatbridge::trajectory::Trajectory;
use splatbridge::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "splatbridge", version, about = "RGB-D SLAM with an online Gaussian-splatting map")]
struct Cli {
    /// Key-value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// TUM-layout directory, or `synthetic`.
    #[arg(long, global = true)]
    dataset: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Configuration override `key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the full pipeline and write all artifacts.
    Run,
    /// Run the pipeline over a grid of joint-optimization iterations and α.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
        t: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0.75")]
        alpha: Vec<f64>,
        /// Runs per grid point; the fastest is reported.
        #[arg(long, default_value_t = 1)]
        repeats: usize,
    },
    /// Re-render one frame from a checkpoint and trajectory.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        frame: usize,
        /// PNG path; defaults to `<output>/render_<frame>.png`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute metrics from a saved trajectory and checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
    },
    /// Write the configured synthetic sequence in TUM layout.
    Synth,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        cfg.apply_override(kv)?;
    }
    if let Some(d) = &cli.dataset {
        cfg.set("dataset", d)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.output {
        cfg.output = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output.clone().unwrap_or_else(|| PathBuf::from("output"))
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let dir = output_dir(&cfg);
    match &cli.command {
        Command::Run => {
            let out = run(&cfg)?;
            write_artifacts(&out, &cfg, &dir)?;
            print!("{}", out.report.to_kv_string());
            info!("artifacts written to {}", dir.display());
        }
        Command::Sweep { t, alpha, repeats } => {
            let rows = sweep(&cfg, t, alpha, *repeats)?;
            std::fs::create_dir_all(&dir)?;
            let path = dir.join("sweep.csv");
            write_sweep_csv(&rows, &path)?;
            print!("{}", std::fs::read_to_string(&path)?);
        }
        Command::Render {
            checkpoint,
            trajectory,
            frame,
            out,
        } => {
            let map = GaussianMap::load(checkpoint)?;
            let traj = Trajectory::load_tum(trajectory)?;
            let pose = traj
                .poses
                .get(*frame)
                .ok_or_else(|| Error::Config(format!("frame {frame} is outside the trajectory ({} poses)", traj.len())))?
                .1;
            let k = match &cfg.dataset {
                DatasetSource::Synthetic => cfg.synthetic.intrinsics,
                DatasetSource::Tum(_) => load_source(&cfg)?.frame(0)?.intrinsics,
            };
            let path = out.clone().unwrap_or_else(|| dir.join(format!("render_{frame:05}.png")));
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            render_frame(&map, &k, &pose, &cfg).save_png(&path)?;
            println!("{}", path.display());
        }
        Command::Eval { checkpoint, trajectory } => {
            let map = GaussianMap::load(checkpoint)?;
            let traj = Trajectory::load_tum(trajectory)?;
            let source = load_source(&cfg)?;
            let report = evaluate(source.as_ref(), &traj, &map, &BTreeSet::new(), &cfg)?;
            print!("{}", report.deterministic_kv());
        }
        Command::Synth => {
            let mut c = cfg.clone();
            c.dataset = DatasetSource::Synthetic;
            let source = load_source(&c)?;
            let frames = (0..source.len()).map(|i| source.frame(i)).collect::<Result<Vec<_>>>()?;
            let gt = source.ground_truth().map(|g| &g.trajectory);
            write_tum_sequence(&dir, &frames, gt)?;
            println!("{}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error code={} message=\"{}\"", e.code(), e.to_string().replace('"', "'"));
            ExitCode::FAILURE
        }
    }
}
