//! `canopy`: batch front end for segmentation, stratification, occlusion
//! reports, accuracy evaluation, tiled runs and synthetic forests.
//!
//! Every run writes its outputs plus `manifest.json` into `--out`; `canopy
//! replay` reruns a manifest and compares output hashes.
//!
//! Exit codes: 0 success, 2 input error, 3 internal invariant violation.

mod commands;
mod manifest;
mod plots;
mod settings;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use manifest::{hash_all, RunManifest, MANIFEST_FILE};
use settings::Settings;

#[derive(Debug, Parser)]
#[command(name = "canopy", version, about = "Individual tree segmentation for airborne LiDAR point clouds")]
pub struct Cli {
    /// Seed for every random draw (forge); defaults to the seed in the forge input, else 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Flat `key = value` file overriding configuration defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Generate a synthetic forest from a JSON spec.
    Forge(ForgeArgs),
    /// Segment a point cloud into tree crowns.
    Segment(SegmentArgs),
    /// Split a point cloud into canopy layers.
    Stratify(StratifyArgs),
    /// Point-density budget across canopy layers.
    Occlusion(OcclusionArgs),
    /// Match crowns to field stems and score them.
    Evaluate(EvaluateArgs),
    /// Tiled master/worker segmentation.
    Dist(DistArgs),
    /// Rerun a manifest and compare output hashes.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ForgeArgs {
    #[arg(long)]
    pub spec: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SegmentArgs {
    /// Point file (`x y z class` per line).
    #[arg(long)]
    pub cloud: PathBuf,
    /// ESRI ASCII terrain model; without it an absolute cloud is normalized
    /// against a DEM built from its ground returns.
    #[arg(long)]
    pub dem: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct StratifyArgs {
    #[arg(long)]
    pub cloud: PathBuf,
    #[arg(long)]
    pub dem: Option<PathBuf>,
    /// Segment every layer and write the merged, layer-tagged crowns.
    #[arg(long)]
    pub then_segment: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct OcclusionArgs {
    /// One or more layers.csv files.
    #[arg(long, required = true, num_args = 1..)]
    pub layers: Vec<PathBuf>,
    /// Density needed to segment the top layer, pt/m2.
    #[arg(long, default_value_t = 4.0, allow_hyphen_values = true)]
    pub pcd_min: f64,
    /// Use this theta instead of fitting one.
    #[arg(long, allow_hyphen_values = true)]
    pub theta: Option<f64>,
    /// Cloud density when a layers file lacks its `# point_density` line.
    #[arg(long)]
    pub pcd: Option<f64>,
    #[arg(long, default_value_t = 5)]
    pub horizon: u32,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub crowns: PathBuf,
    #[arg(long)]
    pub stems: PathBuf,
    /// Rectangular plot `xmin,ymin,xmax,ymax`.
    #[arg(long, conflicts_with = "plot_file", allow_hyphen_values = true)]
    pub plot: Option<String>,
    /// Plot polygon, one `x,y` vertex per line.
    #[arg(long)]
    pub plot_file: Option<PathBuf>,
    #[arg(long, default_value = "plot")]
    pub plot_id: String,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DistArgs {
    /// Tile layout JSON (`tile_size_m` and tiles with extents and point files).
    #[arg(long, conflicts_with_all = ["cloud", "tile_size"])]
    pub tiles: Option<PathBuf>,
    /// Whole cloud to tile on a regular grid instead of a layout.
    #[arg(long, requires = "tile_size")]
    pub cloud: Option<PathBuf>,
    #[arg(long)]
    pub tile_size: Option<f64>,
    #[arg(long)]
    pub dem: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Stratify first and run the protocol once per layer.
    #[arg(long)]
    pub strata: bool,
    /// Seam false positives per km of shared tile edge.
    #[arg(long, default_value_t = 96.0)]
    pub bias_coeff: f64,
    /// Inject a failure: `worker:task` (the worker's task-th assignment, from 0).
    #[arg(long = "fail")]
    pub faults: Vec<String>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Forge(_) => "forge",
            Command::Segment(_) => "segment",
            Command::Stratify(_) => "stratify",
            Command::Occlusion(_) => "occlusion",
            Command::Evaluate(_) => "evaluate",
            Command::Dist(_) => "dist",
            Command::Replay(_) => "replay",
        }
    }

    /// Makes every input path absolute so a manifest replays from anywhere.
    fn absolutize(&mut self) -> Result<()> {
        let abs = |p: &mut PathBuf| -> Result<()> {
            if p.is_relative() {
                *p = std::env::current_dir()?.join(&*p);
            }
            Ok(())
        };
        let abs_opt = |p: &mut Option<PathBuf>| -> Result<()> { p.as_mut().map_or(Ok(()), abs) };
        match self {
            Command::Forge(a) => abs(&mut a.spec)?,
            Command::Segment(a) => {
                abs(&mut a.cloud)?;
                abs_opt(&mut a.dem)?;
            }
            Command::Stratify(a) => {
                abs(&mut a.cloud)?;
                abs_opt(&mut a.dem)?;
            }
            Command::Occlusion(a) => a.layers.iter_mut().try_for_each(abs)?,
            Command::Evaluate(a) => {
                abs(&mut a.crowns)?;
                abs(&mut a.stems)?;
                abs_opt(&mut a.plot_file)?;
            }
            Command::Dist(a) => {
                abs_opt(&mut a.tiles)?;
                abs_opt(&mut a.cloud)?;
                abs_opt(&mut a.dem)?;
            }
            Command::Replay(a) => abs(&mut a.manifest)?,
        }
        Ok(())
    }
}

/// Classified failure; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    Input(String),
    Invariant(String),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Input(m) | Failure::Invariant(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for Failure {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return match f {
                Failure::Input(_) => 2,
                Failure::Invariant(_) => 3,
            };
        }
        if let Some(e) = cause.downcast_ref::<canopy::Error>() {
            return match e {
                canopy::Error::ProtocolViolation(_) => 3,
                _ => 2,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return 2;
        }
    }
    3
}

/// Runs one command into `out` and writes its manifest.
fn run_into(command: &Command, out: &Path, seed: Option<u64>, threads: Option<usize>, settings: &Settings) -> Result<RunManifest> {
    std::fs::create_dir_all(out).map_err(|e| Failure::Input(format!("creating {}: {e}", out.display())))?;
    let start = Instant::now();
    let outcome = commands::run(command, &commands::Ctx { out, seed, settings })?;
    let manifest = RunManifest {
        command: command.name().to_string(),
        invocation: command.clone(),
        seed: outcome.seed,
        threads,
        settings: settings.clone(),
        inputs: hash_all(&outcome.inputs, None)?,
        outputs: hash_all(&outcome.outputs, Some(out))?,
        wall_time_s: start.elapsed().as_secs_f64(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    manifest.write(out)?;
    Ok(manifest)
}

fn replay(args: &ReplayArgs, out: Option<&Path>) -> Result<()> {
    let recorded = RunManifest::read(&args.manifest).map_err(|e| Failure::Input(format!("{e:#}")))?;
    if matches!(recorded.invocation, Command::Replay(_)) {
        return Err(Failure::Input("a replay manifest cannot be replayed".into()).into());
    }
    for input in &recorded.inputs {
        let now = manifest::sha256_file(&input.path).map_err(|e| Failure::Input(format!("{e:#}")))?;
        if now != input.sha256 {
            return Err(Failure::Input(format!("input {} changed since the recorded run", input.path.display())).into());
        }
    }
    let source_dir = args.manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    let out = out.map_or_else(|| source_dir.join("replay"), Path::to_path_buf);
    if out.canonicalize().ok() == source_dir.canonicalize().ok() {
        return Err(Failure::Input("replay output directory must differ from the recorded one".into()).into());
    }
    let fresh = run_into(&recorded.invocation, &out, Some(recorded.seed), recorded.threads, &recorded.settings)?;
    let mut differing = Vec::new();
    for (a, b) in recorded.outputs.iter().zip(&fresh.outputs) {
        if a != b {
            differing.push(a.path.display().to_string());
        }
    }
    if recorded.outputs.len() != fresh.outputs.len() {
        differing.push(format!("{} outputs recorded, {} produced", recorded.outputs.len(), fresh.outputs.len()));
    }
    if !differing.is_empty() {
        return Err(Failure::Invariant(format!("replay differs: {}", differing.join(", "))).into());
    }
    println!("replay: {} outputs byte-identical in {}", fresh.outputs.len(), out.display());
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Input("--threads must be at least 1".into()).into());
        }
        // A second call in one process (tests) keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut command = cli.command;
    if let Command::Replay(args) = &mut command {
        args.manifest = std::path::absolute(&args.manifest)?;
        return replay(args, cli.out.as_deref());
    }
    let out = cli
        .out
        .ok_or_else(|| Failure::Input("--out <dir> is required".into()))?;
    let settings = match &cli.config {
        Some(path) => Settings::from_file(path)?,
        None => Settings::default(),
    };
    command.absolutize()?;
    let m = run_into(&command, &out, cli.seed, cli.threads, &settings)?;
    eprintln!("wrote {} outputs and {MANIFEST_FILE} to {}", m.outputs.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| execute(cli))) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(3),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_classes_map_to_exit_codes() {
        let input: anyhow::Error = canopy::Error::Parse { line: 3, message: "bad".into() }.into();
        assert_eq!(exit_code(&input), 2);
        let proto: anyhow::Error = canopy::Error::ProtocolViolation("x".into()).into();
        assert_eq!(exit_code(&proto), 3);
        let io: anyhow::Error = std::io::Error::from(std::io::ErrorKind::NotFound).into();
        assert_eq!(exit_code(&io.context("reading dem")), 2);
        assert_eq!(exit_code(&Failure::Invariant("y".into()).into()), 3);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
