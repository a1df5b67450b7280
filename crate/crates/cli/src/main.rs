//! `objmap`: build, compare, explore and score object maps.

use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use objmap_core::exploration::sim::{random_tabletop, SceneSpec, SimScene};
use objmap_core::exploration::{explore, trace_csv, Policy};
use objmap_core::pipeline::synthetic::{generate_sequence, ground_truth_map, SequenceSpec};
use objmap_core::pipeline::{
    eval_map, read_frames, run_mapping, to_canonical_json, to_canonical_line, write_frames, Config, Mapper,
    ObjectMapFile,
};
use objmap_core::topomap::{build_topo_map, match_maps};
use objmap_core::PipelineError;

const SCHEMA_HELP: &str = "\
Input formats:
  frames   JSON lines, one frame per line: {frame_id, timestamp, camera: {rotation, translation},
           intrinsics: {fx, fy, cx, cy, width, height}, detections: [{label, bbox, confidence}],
           points: [{uv, xyz}], segments: [[x0, y0, x1, y1]]}; frame_id strictly increasing
  map      {schema_version, objects: [{id, label, kind, t, yaw, s, inlier_count, ...}], provenance}
  scene    {table, objects, seed, intrinsics, sensor} as written by `objmap gen-scene --kind tabletop`
  config   any subset of {association, parameterization, mapping, topomap, exploration}
See README.md for the full field lists.";

#[derive(Parser)]
#[command(name = "objmap", version, about = "Object-level semantic mapping toolkit", after_help = SCHEMA_HELP)]
struct Cli {
    /// JSON file overriding any subset of the default configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every stochastic component.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run data association over a frame stream; one report line per frame.
    Associate(IoArgs),
    /// Build an object map from a frame stream.
    Map(IoArgs),
    /// Match two object maps and estimate the transform from the first to the second.
    Match(MatchArgs),
    /// Explore a simulated tabletop scene with a view-selection policy.
    Explore(ExploreArgs),
    /// Score a map against ground truth.
    Eval(EvalArgs),
    /// Generate a synthetic frame sequence or tabletop scene.
    GenScene(GenArgs),
}

#[derive(Args)]
struct IoArgs {
    /// Frame stream (JSON lines).
    #[arg(long = "in")]
    input: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MatchArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExploreArgs {
    /// Scene file written by `gen-scene --kind tabletop`.
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, value_enum, default_value_t = PolicyArg::Nbv)]
    policy: PolicyArg,
    /// Final map file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-step CSV trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Final metrics against the scene's ground truth.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Nbv,
    Random,
    Coverage,
    Init,
}

impl From<PolicyArg> for Policy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Nbv => Policy::Nbv,
            PolicyArg::Random => Policy::Random,
            PolicyArg::Coverage => Policy::Coverage,
            PolicyArg::Init => Policy::Init,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SceneKind {
    /// A camera panning inside a room; writes frames and a ground-truth map.
    Sequence,
    /// Objects on a table for exploration; writes the scene.
    Tabletop,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value_t = SceneKind::Sequence)]
    kind: SceneKind,
    #[arg(long)]
    objects: Option<usize>,
    /// Sequence length (sequences only).
    #[arg(long)]
    frames: Option<usize>,
    /// Frames (sequence) or scene (tabletop) file.
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth map file.
    #[arg(long)]
    gt: Option<PathBuf>,
}

enum CliError {
    /// Bad arguments or input that fails validation.
    Invalid(String),
    /// The inputs were fine but the work failed.
    Runtime(String),
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Io(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display()))),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Runtime(e.to_string())),
    }
}

fn canonical<T: Serialize>(v: &T) -> Result<String, CliError> {
    to_canonical_json(v).map_err(|e| CliError::Runtime(e.to_string()))
}

fn load_config(path: Option<&Path>) -> Result<Config, CliError> {
    match path {
        None => Ok(Config::default()),
        Some(p) => Config::from_json(&read_text(p)?).map_err(|e| CliError::Invalid(format!("config: {e}"))),
    }
}

fn load_frames(path: &Path) -> Result<Vec<objmap_core::pipeline::Frame>, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    read_frames(BufReader::new(file)).map_err(|e| match e {
        PipelineError::Io(_) => CliError::Runtime(format!("{}: {e}", path.display())),
        _ => CliError::Invalid(format!("{}: {e}", path.display())),
    })
}

fn load_map(path: &Path) -> Result<ObjectMapFile, CliError> {
    ObjectMapFile::from_json(&read_text(path)?).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = load_config(cli.config.as_deref())?;
    let seed = cli.seed;
    match cli.command {
        Command::Associate(a) => {
            let frames = load_frames(&a.input)?;
            let mut mapper = Mapper::new(config, seed);
            let mut text = String::new();
            for f in &frames {
                let report = mapper.process_frame(f).report;
                text.push_str(&to_canonical_line(&report).map_err(|e| CliError::Runtime(e.to_string()))?);
                text.push('\n');
            }
            emit(a.out.as_deref(), &text)
        }
        Command::Map(a) => {
            let frames = load_frames(&a.input)?;
            let (_, map) = run_mapping(&frames, &config, seed);
            emit(a.out.as_deref(), &map.to_json()?)
        }
        Command::Match(a) => {
            let (ma, mb) = (load_map(&a.a)?, load_map(&a.b)?);
            let t = &config.topomap;
            let ga = build_topo_map(ma.topo_nodes(), t.k_nn, t.d_max);
            let gb = build_topo_map(mb.topo_nodes(), t.k_nn, t.d_max);
            let result = match_maps(&ga, &gb, t, seed).map_err(|e| CliError::Runtime(e.to_string()))?;
            emit(a.out.as_deref(), &canonical(&result)?)
        }
        Command::Explore(a) => {
            let scene: SimScene = serde_json::from_str(&read_text(&a.scene)?)
                .map_err(|e| CliError::Invalid(format!("{}: {e}", a.scene.display())))?;
            scene
                .validate()
                .map_err(|e| CliError::Invalid(format!("{}: {e}", a.scene.display())))?;
            let run = explore(&scene, a.policy.into(), &config, seed);
            if let Some(p) = &a.trace {
                emit(Some(p), &trace_csv(&run))?;
            }
            if let Some(p) = &a.metrics {
                emit(Some(p), &canonical(&run.final_metrics)?)?;
            }
            emit(a.out.as_deref(), &run.final_map.to_json()?)
        }
        Command::Eval(a) => {
            let (m, g) = (load_map(&a.map)?, load_map(&a.gt)?);
            emit(a.out.as_deref(), &canonical(&eval_map(&m, &g))?)
        }
        Command::GenScene(a) => match a.kind {
            SceneKind::Sequence => {
                let mut spec = SequenceSpec::default();
                if let Some(n) = a.objects {
                    spec.objects = n;
                }
                if let Some(n) = a.frames {
                    spec.frames = n;
                }
                if spec.frames == 0 {
                    return Err(CliError::Invalid("--frames must be positive".into()));
                }
                let seq = generate_sequence(seed, &spec);
                let mut buf = Vec::new();
                write_frames(&mut buf, &seq.frames)?;
                emit(Some(&a.out), &String::from_utf8(buf).expect("JSON is UTF-8"))?;
                if let Some(gt) = &a.gt {
                    emit(Some(gt), &seq.ground_truth.to_json()?)?;
                }
                Ok(())
            }
            SceneKind::Tabletop => {
                let mut spec = SceneSpec::default();
                if let Some(n) = a.objects {
                    spec.objects = n;
                }
                let scene = random_tabletop(seed, &spec);
                emit(Some(&a.out), &canonical(&scene)?)?;
                if let Some(gt) = &a.gt {
                    emit(Some(gt), &ground_truth_map(&scene).to_json()?)?;
                }
                Ok(())
            }
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            if code != 0 {
                eprintln!("\n{SCHEMA_HELP}");
            }
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Invalid(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
