use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use meshflow_cli::artifacts::write_atomic;
use meshflow_cli::pipeline::{load_normalized, normalize_margin, obj_bytes};
use meshflow_cli::verify::{run_suite, Suite};
use meshflow_cli::{run_pipeline, PipelineConfig};
use meshflow_core::fieldgen::{make_watertight, FieldGenParams};
use meshflow_core::render::{canonical_views, filter_decision, FilterThresholds};
use meshflow_core::sample::{build_bundle, SamplingParams};
use meshflow_core::Vec3;
use meshflow_flow::schedule::{DdpmSchedule, EdmSchedule};
use meshflow_flow::toy::{write_loss_csv, ToyTarget, DEFAULT_HIDDEN, DEFAULT_SAMPLING_STEPS};
use meshflow_flow::{shift_timestep, train_toy_rf, LogitNormalSampler, ToyVelocityNet, TrainConfig};
use meshflow_nn::vae::reference::{cube_points, loss_checks};
use meshflow_nn::vae::{eikonal_loss, normal_loss, sdf_loss, FieldOracle, GradientMode, DEFAULT_FD_STEP};
use meshflow_nn::{probe, ArchConfig, BackboneWeights};

#[derive(Parser)]
#[command(name = "meshflow", version, about = "Mesh-to-field data pipeline and kernel checks")]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for asset processing; overrides the config.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output root; overrides the config.
    #[arg(long, global = true, env = "MESHFLOW_OUTPUT")]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, clean and normalize a mesh; print its statistics.
    Ingest {
        mesh: PathBuf,
        /// Also write the normalized mesh as OBJ.
        #[arg(long)]
        obj: Option<PathBuf>,
    },
    /// Print the filter report for one mesh.
    Filter {
        mesh: PathBuf,
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Make one mesh watertight; writes udf.sfgd and watertight.obj.
    Fieldgen {
        mesh: PathBuf,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Draw a labeled sample bundle from a (watertight) mesh.
    Sample {
        mesh: PathBuf,
        #[arg(long, default_value = "samples.sfsb")]
        name: String,
    },
    /// Scheduler and timestep utilities.
    #[command(subcommand)]
    Sched(SchedCmd),
    /// Backbone kernel probes.
    #[command(subcommand)]
    Arch(ArchCmd),
    /// Geometry losses of a closed-form or gridded field, as CSV rows.
    VaeLoss(VaeLossArgs),
    /// Run self-check suites; prints one JSON line per check.
    Verify {
        #[arg(value_enum, default_value = "all")]
        suite: Suite,
    },
    /// Run the full batch pipeline over an input directory.
    Pipeline {
        /// Input directory; overrides the config.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Keep records whose inputs, config and artifacts are unchanged.
        #[arg(long)]
        resume: bool,
    },
}

#[derive(Subcommand)]
enum SchedCmd {
    /// Shift a timestep from `n` to `m` tokens.
    Shift {
        #[arg(long)]
        t: f64,
        #[arg(long)]
        n: u64,
        #[arg(long)]
        m: u64,
    },
    /// EDM noise level.
    Sigma {
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 0.002)]
        sigma_min: f64,
        #[arg(long, default_value_t = 80.0)]
        sigma_max: f64,
        #[arg(long, default_value_t = 7.0)]
        rho: f64,
    },
    /// Cumulative alpha products of a linear DDPM schedule.
    AlphaBar {
        #[arg(long, default_value_t = 1e-4)]
        start: f64,
        #[arg(long, default_value_t = 0.02)]
        end: f64,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
    },
    /// Logit-normal timestep draws, one per line.
    SampleT {
        #[arg(long, default_value_t = 0.0)]
        m: f64,
        #[arg(long, default_value_t = 1.0)]
        s: f64,
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Train the 2-D toy velocity net and report sample moments.
    TrainToy {
        #[arg(long, value_enum, default_value = "point")]
        target: ToyKind,
        #[arg(long, default_value_t = 6000)]
        steps: usize,
        /// Loss curve CSV, relative to the output root.
        #[arg(long)]
        loss_csv: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ToyKind {
    Point,
    Gaussian,
}

#[derive(Subcommand)]
enum ArchCmd {
    /// Perturb skip inputs and report which decoder outputs move.
    ProbeSkip,
    /// Deviation of an upcycled MoE block from its dense source.
    MoeEquiv,
    /// Run one set of weights at several sequence lengths.
    Extrapolate {
        #[arg(long, value_delimiter = ',', default_value = "512,2048,4096")]
        lengths: Vec<usize>,
    },
    /// Write randomly initialized backbone weights and their manifest.
    Init {
        /// Full-size configuration instead of the toy one.
        #[arg(long)]
        full: bool,
        #[arg(long, default_value = "backbone.sfma")]
        name: String,
    },
}

#[derive(Args)]
struct VaeLossArgs {
    #[arg(long, value_enum, default_value = "sphere")]
    field: FieldKind,
    /// Grid file for `--field grid`.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long, default_value_t = 4096)]
    samples: usize,
    /// Use central differences instead of analytic gradients.
    #[arg(long)]
    fd: bool,
    /// Print the reference-value table instead.
    #[arg(long)]
    reference: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum FieldKind {
    Sphere,
    Box,
    Plane,
    Grid,
}

fn load_config(cli: &Cli) -> Result<Option<PipelineConfig>> {
    let Some(path) = &cli.config else { return Ok(None) };
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    if let Some(o) = &cli.output {
        cfg.output = Some(o.clone());
    }
    Ok(Some(cfg))
}

fn output_root(cli: &Cli, cfg: Option<&PipelineConfig>) -> PathBuf {
    cli.output
        .clone()
        .or_else(|| cfg.and_then(|c| c.output.clone()))
        .unwrap_or_else(|| PathBuf::from("meshflow-out"))
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("mesh").to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = load_config(&cli)?;
    let fieldgen = cfg.as_ref().map(|c| c.fieldgen).unwrap_or_default();
    let sampling = cfg.as_ref().map(|c| c.sampling).unwrap_or_default();
    let filter = cfg.as_ref().map(|c| c.filter).unwrap_or_default();
    let seed = cli.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
    let out = output_root(&cli, cfg.as_ref());

    match &cli.command {
        Command::Ingest { mesh, obj } => {
            let m = load_normalized(mesh, normalize_margin(&fieldgen))?;
            if let Some(path) = obj {
                std::fs::write(path, obj_bytes(&m)?).with_context(|| format!("writing {}", path.display()))?;
            }
            print_json(&serde_json::json!({
                "vertices": m.vertex_count(),
                "triangles": m.triangle_count(),
                "surface_area": m.surface_area(),
                "watertight": m.is_watertight(),
            }))?;
        }
        Command::Filter { mesh, resolution } => {
            let th = FilterThresholds {
                resolution: resolution.unwrap_or(filter.resolution),
                ..filter
            };
            let m = load_normalized(mesh, normalize_margin(&fieldgen))?;
            print_json(&filter_decision(&m, &canonical_views(th.resolution)?, &th))?;
        }
        Command::Fieldgen { mesh, resolution, tau } => {
            let mut params = match resolution {
                Some(r) => FieldGenParams {
                    resolution: *r,
                    tau: 3.0 / *r as f64,
                    ..fieldgen
                },
                None => fieldgen,
            };
            if let Some(t) = tau {
                params.tau = *t;
            }
            let m = load_normalized(mesh, normalize_margin(&params))?;
            let result = make_watertight(&m, &params)?;
            let dir = stem(mesh);
            let mut udf = Vec::new();
            result.udf.write_to(&mut udf)?;
            let a = write_atomic(&out, &format!("{dir}/udf.sfgd"), &udf)?;
            let b = write_atomic(&out, &format!("{dir}/watertight.obj"), &obj_bytes(&result.mesh)?)?;
            print_json(&serde_json::json!({
                "visible_cells": result.visible_cells,
                "triangles": result.mesh.triangle_count(),
                "watertight": result.mesh.is_watertight(),
                "components": result.components,
                "artifacts": [a, b],
            }))?;
        }
        Command::Sample { mesh, name } => {
            let m = load_normalized(mesh, normalize_margin(&fieldgen))?;
            let params = SamplingParams { seed, ..sampling };
            let (bundle, stats) = build_bundle(&m, &params)?;
            let rec = write_atomic(&out, &format!("{}/{name}", stem(mesh)), &bundle.to_bytes())?;
            print_json(&serde_json::json!({ "stats": stats, "artifact": rec }))?;
        }
        Command::Sched(cmd) => sched(cmd, seed, &out)?,
        Command::Arch(cmd) => arch(cmd, seed, &out)?,
        Command::VaeLoss(args) => vae_loss(args, seed)?,
        Command::Verify { suite } => {
            let results = run_suite(*suite);
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            for r in &results {
                writeln!(lock, "{}", serde_json::to_string(r)?)?;
            }
            let failed = results.iter().filter(|r| !r.pass).count();
            log::info!("{} checks, {failed} failed", results.len());
            return Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
        Command::Pipeline { input, resume } => {
            let mut cfg = match (cfg, input) {
                (Some(mut c), Some(i)) => {
                    c.input = i.clone();
                    c
                }
                (Some(c), None) => c,
                (None, Some(i)) => {
                    let mut c = PipelineConfig::new(i.clone());
                    c.seed = seed;
                    c.jobs = cli.jobs.unwrap_or(1);
                    c
                }
                (None, None) => bail!("pipeline needs --input or --config"),
            };
            cfg.output = Some(out.clone());
            let summary = run_pipeline(&cfg, &out, *resume)?;
            println!(
                "{} assets: {} kept, {} rejected, {} failed, {} reused",
                summary.total, summary.kept, summary.rejected, summary.failed, summary.reused
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn sched(cmd: &SchedCmd, seed: u64, out: &Path) -> Result<()> {
    match cmd {
        SchedCmd::Shift { t, n, m } => println!("{}", shift_timestep(*t, *n, *m)?),
        SchedCmd::Sigma {
            t,
            sigma_min,
            sigma_max,
            rho,
        } => println!("{}", EdmSchedule::new(*sigma_min, *sigma_max, *rho)?.sigma(*t)?),
        SchedCmd::AlphaBar { start, end, steps } => {
            let s = DdpmSchedule::linear(*start, *end, *steps)?;
            let stdout = std::io::stdout();
            let mut w = BufWriter::new(stdout.lock());
            for (i, a) in s.alpha_bar().iter().enumerate() {
                writeln!(w, "{i}\t{a}")?;
            }
        }
        SchedCmd::SampleT { m, s, count } => {
            let sampler = LogitNormalSampler::new(*m, *s, seed)?;
            for t in sampler.take(*count) {
                println!("{t}");
            }
        }
        SchedCmd::TrainToy { target, steps, loss_csv } => {
            let target = match target {
                ToyKind::Point => ToyTarget::PointMass { at: vec![2.0, 3.0] },
                ToyKind::Gaussian => ToyTarget::Gaussian {
                    mean: vec![0.0, 0.0],
                    std: 1.0,
                },
            };
            let net = ToyVelocityNet::new(2, DEFAULT_HIDDEN, seed)?;
            let mut sampler = LogitNormalSampler::new(0.0, 1.0, seed.wrapping_add(1))?;
            let cfg = TrainConfig {
                steps: *steps,
                seed: seed.wrapping_add(2),
                ..Default::default()
            };
            let t = target.clone();
            let result = train_toy_rf(move |r| t.sample(r), net, &mut sampler, &cfg)?;
            if let Some(name) = loss_csv {
                let mut buf = Vec::new();
                write_loss_csv(&result.losses, &mut buf)?;
                write_atomic(out, name, &buf)?;
            }
            let samples = result.net.generate(10_000, DEFAULT_SAMPLING_STEPS, seed.wrapping_add(3))?;
            let n = samples.len() as f64;
            let mean = [0, 1].map(|i| samples.iter().map(|p| p[i]).sum::<f64>() / n);
            let var = [0, 1].map(|i| samples.iter().map(|p| (p[i] - mean[i]).powi(2)).sum::<f64>() / (n - 1.0));
            print_json(&serde_json::json!({
                "target": target,
                "final_loss": result.losses.last(),
                "sample_mean": mean,
                "sample_variance": var,
            }))?;
        }
    }
    Ok(())
}

fn arch(cmd: &ArchCmd, seed: u64, out: &Path) -> Result<()> {
    match cmd {
        ArchCmd::ProbeSkip => {
            let r = probe::skip_probe(seed);
            print_json(&serde_json::json!({
                "identity_error": r.identity_error,
                "upstream_change": r.upstream_change,
                "target_change": r.target_change,
            }))?;
        }
        ArchCmd::MoeEquiv => println!("{:e}", probe::moe_dense_equivalence_error(seed)),
        ArchCmd::Extrapolate { lengths } => {
            for (l, finite, shape) in probe::length_extrapolation(seed, lengths) {
                println!("{l}\tfinite={finite}\tshape={shape}");
            }
        }
        ArchCmd::Init { full, name } => {
            let cfg = if *full { ArchConfig::full() } else { ArchConfig::toy() };
            let w = BackboneWeights::random(&cfg, seed)?;
            let mut bytes = Vec::new();
            w.write_to(&mut bytes)?;
            let a = write_atomic(out, name, &bytes)?;
            let b = write_atomic(out, &format!("{name}.manifest"), w.manifest().as_bytes())?;
            print_json(&[a, b])?;
        }
    }
    Ok(())
}

fn vae_loss(args: &VaeLossArgs, seed: u64) -> Result<()> {
    use meshflow_nn::vae::loss::loss_csv_row;
    if args.reference {
        println!("check,deviation,tolerance,pass");
        for c in loss_checks() {
            println!("{},{:e},{:e},{}", c.name, c.deviation, c.tolerance, c.pass());
        }
        return Ok(());
    }
    let field = match args.field {
        FieldKind::Sphere => FieldOracle::Sphere {
            center: Vec3::zeros(),
            radius: 0.5,
        },
        FieldKind::Box => FieldOracle::Box {
            center: Vec3::zeros(),
            half: Vec3::new(0.5, 0.4, 0.3),
        },
        FieldKind::Plane => FieldOracle::Plane {
            normal: Vec3::z(),
            offset: 0.0,
        },
        FieldKind::Grid => {
            let path = args.grid.as_ref().context("--field grid needs --grid")?;
            FieldOracle::load_grid(path)?
        }
    };
    let mode = if args.fd {
        GradientMode::Central { h: DEFAULT_FD_STEP }
    } else {
        GradientMode::Analytic
    };
    let x = cube_points(args.samples, seed);
    // project onto the zero level set along the gradient
    let (surf, normals): (Vec<Vec3>, Vec<Vec3>) = x
        .iter()
        .filter_map(|p| {
            let g = field.gradient(p, mode);
            (g.norm() > 1e-8).then(|| (p - g.normalize() * field.value(p), g.normalize()))
        })
        .unzip();
    let residual: Vec<f64> = surf.iter().map(|p| field.value(p)).collect();
    println!("loss,value,samples");
    println!("{}", loss_csv_row("sdf", sdf_loss(&residual, &vec![0.0; residual.len()])?, surf.len()));
    println!("{}", loss_csv_row("normal", normal_loss(&field, &surf, &normals, mode)?, surf.len()));
    println!("{}", loss_csv_row("eikonal", eikonal_loss(&field, &x, mode)?, x.len()));
    Ok(())
}
