//! Command-line pipeline.
//!
//! Every subcommand reads an optional `--config` file, applies `--key value`
//! overrides (any config key), accepts one optional positional input path, and
//! writes its artifacts under `output_dir`. Exit codes: 0 success, 1 invalid
//! input or usage, 2 runtime failure.

use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, Command};
use log::warn;

use crate::appearance::{fit_colors, StrandColors};
use crate::dynamics::{fit_head_sphere, simulate, PoseTrack};
use crate::io::{self, PipelineConfig};
use crate::metrics::{analyze, MotionMatrix};
use crate::skinning::{apply_skinning, build_skinning, GuideAnimation};
use crate::splat::render_groom;
use crate::strand::resample_groom;
use crate::{Error, Result, Vec3};

const COMMANDS: &[(&str, &str)] = &[
    ("make-synthetic", "write a deterministic synthetic groom with ground-truth colors"),
    ("resample", "resample every strand of a groom to `resample_points` points"),
    ("simulate", "simulate guide strands and write a GAN1 animation"),
    ("skin", "transfer guide motion to a dense groom"),
    ("fit-colors", "fit per-segment strand colors to rendered targets"),
    ("splat", "render a groom (or an animation frame) for every camera"),
    ("metrics", "PC1 explained variance and temporal smoothness of an animation"),
];

fn command() -> Command {
    let mut cmd = Command::new("hairkit")
        .about("Strand hair simulation, skinning, splatting and rigidity metrics")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .after_help("Any config key may be given as `--key value`, overriding the config file.");
    for (name, about) in COMMANDS {
        cmd = cmd.subcommand(
            Command::new(*name)
                .about(*about)
                .arg(Arg::new("config").long("config").value_name("FILE").help("key = value config file"))
                .arg(
                    Arg::new("args")
                        .value_name("INPUT | --KEY VALUE")
                        .num_args(0..)
                        .allow_hyphen_values(true)
                        .trailing_var_arg(true)
                        .action(ArgAction::Append),
                ),
        );
    }
    cmd
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidInput(_) | Error::Config(_) | Error::Format { .. } | Error::DegenerateStrand { .. } => 1,
        Error::Io { .. } | Error::SimulationDiverged { .. } => 2,
    }
}

/// Runs the CLI on a full argv (program name first) and returns the exit code.
pub fn run(argv: Vec<String>) -> i32 {
    let mut cmd = command();
    let matches = match cmd.try_get_matches_from_mut(argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let rest: Vec<String> = sub.get_many::<String>("args").map(|v| v.cloned().collect()).unwrap_or_default();

    let (cfg, input) = match configure(sub.get_one::<String>("config").map(Path::new), &rest) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(help) = cmd.find_subcommand_mut(name) {
                eprintln!("{}", help.render_usage());
            }
            return 1;
        }
    };
    let result = match name {
        "make-synthetic" => make_synthetic(&cfg),
        "resample" => resample(&cfg, input),
        "simulate" => run_simulate(&cfg, input),
        "skin" => skin(&cfg, input),
        "fit-colors" => fit(&cfg, input),
        "splat" => splat(&cfg, input),
        "metrics" => metrics(&cfg, input),
        _ => unreachable!("clap only accepts known subcommands"),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn configure(config: Option<&Path>, rest: &[String]) -> Result<(PipelineConfig, Option<PathBuf>)> {
    let mut cfg = match config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let mut input = None;
    let mut it = rest.iter();
    while let Some(arg) = it.next() {
        if let Some(key) = arg.strip_prefix("--") {
            let (key, value) = match key.split_once('=') {
                Some((k, v)) => (k, v.to_string()),
                None => {
                    let v = it
                        .next()
                        .ok_or_else(|| Error::Config(format!("flag --{key} needs a value")))?;
                    (key, v.clone())
                }
            };
            cfg.set(key, &value).map_err(|e| match e {
                Error::Config(m) if m.starts_with("unknown key") => Error::Config(format!("unknown flag --{key}")),
                other => other,
            })?;
        } else if input.is_none() {
            input = Some(PathBuf::from(arg));
        } else {
            return Err(Error::Config(format!("unexpected extra argument `{arg}`")));
        }
    }
    cfg.validate()?;
    Ok((cfg, input))
}

/// First of: positional input, config key, default file in `output_dir`.
fn input_path(positional: Option<PathBuf>, key: &Option<PathBuf>, cfg: &PipelineConfig, default: &str) -> Result<PathBuf> {
    let path = positional.or_else(|| key.clone()).unwrap_or_else(|| cfg.out(default));
    existing(path)
}

fn existing(path: PathBuf) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::Config(format!("input {} does not exist", path.display())))
    }
}

fn output_path(cfg: &PipelineConfig, default: &str) -> PathBuf {
    cfg.output.clone().unwrap_or_else(|| cfg.out(default))
}

fn make_synthetic(cfg: &PipelineConfig) -> Result<String> {
    let groom = io::make_synthetic(cfg.style, cfg.strands, cfg.points, cfg.seed)?;
    let colors = io::synthetic_colors(&groom);
    let out = output_path(cfg, "groom.grm1");
    io::save_groom(&out, &groom, Some(&colors))?;
    Ok(format!(
        "make-synthetic: {} {} strands x {} points (seed {}) -> {}",
        cfg.style,
        groom.strand_count(),
        groom.points_per_strand(),
        cfg.seed,
        out.display()
    ))
}

fn resample(cfg: &PipelineConfig, input: Option<PathBuf>) -> Result<String> {
    let path = input_path(input, &cfg.groom, cfg, "groom.grm1")?;
    let file = io::load_groom(&path)?;
    let groom = resample_groom(&file.groom, cfg.resample_points)?;
    let colors = file.colors.filter(|c| c.matches(&groom));
    let out = output_path(cfg, "resampled.grm1");
    io::save_groom(&out, &groom, colors.as_ref())?;
    Ok(format!(
        "resample: {} strands {} -> {} points -> {}",
        groom.strand_count(),
        file.groom.points_per_strand(),
        groom.points_per_strand(),
        out.display()
    ))
}

fn run_simulate(cfg: &PipelineConfig, input: Option<PathBuf>) -> Result<String> {
    let path = input_path(input, &cfg.guides, cfg, "guides.grm1")?;
    let guides = io::load_groom(&path)?.groom;
    let colliders = match &cfg.colliders {
        Some(p) => io::load_colliders(&existing(p.clone())?)?,
        None => fit_head_sphere(&guides.roots()),
    };
    let track = match &cfg.track {
        Some(p) => io::load_track(&existing(p.clone())?)?,
        None => PoseTrack::identity(),
    };
    let anim = simulate(&guides, &cfg.params, &cfg.sim, &colliders, &track, cfg.frame_count, cfg.frame_dt)?;
    let out = output_path(cfg, "guides.gan1");
    io::save_animation(&out, &anim)?;
    Ok(format!(
        "simulate: {} frames of {} guides -> {}",
        anim.frame_count(),
        guides.strand_count(),
        out.display()
    ))
}

fn skin(cfg: &PipelineConfig, input: Option<PathBuf>) -> Result<String> {
    let anim_path = input_path(input, &cfg.anim, cfg, "guides.gan1")?;
    let guides = io::load_animation(&anim_path, cfg.frame_dt)?;
    let dense = io::load_groom(&existing(cfg.groom.clone().unwrap_or_else(|| cfg.out("groom.grm1")))?)?.groom;
    let map = build_skinning(&dense, guides.rest(), cfg.k, cfg.epsilon)?;
    let frames = apply_skinning(&map, &guides, &dense)?;
    let anim = GuideAnimation::new(frames, cfg.frame_dt)?;
    let out = output_path(cfg, "dense.gan1");
    io::save_animation(&out, &anim)?;
    io::save_skinning(&cfg.out("skinning.skn1"), &map)?;
    Ok(format!(
        "skin: {} dense strands x {} frames (k={}) -> {}",
        dense.strand_count(),
        anim.frame_count(),
        map.k,
        out.display()
    ))
}

fn cameras(cfg: &PipelineConfig) -> Result<Vec<crate::splat::Camera>> {
    let path = cfg
        .cameras
        .clone()
        .ok_or_else(|| Error::Config("`cameras` must name a cameras file".into()))?;
    io::load_cameras(&existing(path)?)
}

fn fit(cfg: &PipelineConfig, input: Option<PathBuf>) -> Result<String> {
    let path = input_path(input, &cfg.groom, cfg, "groom.grm1")?;
    let groom = io::load_groom(&path)?.groom;
    let target_path = existing(cfg.target_groom.clone().unwrap_or_else(|| path.clone()))?;
    let target = io::load_groom(&target_path)?;
    let target_colors = target.colors.ok_or_else(|| {
        Error::invalid(format!("{} has no COL0 colors to render targets from", target_path.display()))
    })?;
    let cams = cameras(cfg)?;

    let mut images = Vec::with_capacity(cams.len());
    let mut masks = Vec::with_capacity(cams.len());
    for (i, cam) in cams.iter().enumerate() {
        let r = render_groom(&target.groom, &target_colors, cam, cfg.fit.background)?;
        masks.push(r.weights.transmittance.iter().map(|&t| if 1.0 - t >= 1e-3 { 1.0 } else { 0.0 }).collect());
        io::save_ppm(&cfg.out(&format!("target_{i}.ppm")), &r.image)?;
        images.push(r.image);
    }
    let result = fit_colors(&groom, &cams, &images, &masks, &cfg.fit)?;
    let out = output_path(cfg, "colored.grm1");
    io::save_groom(&out, &groom, Some(&result.colors))?;
    io::write_atomic(&cfg.out("fit_log.csv"), io::format_fit_log(&result.log).as_bytes())?;
    let last = result.log.last().map_or(0.0, |e| e.total);
    Ok(format!(
        "fit-colors: {} strands, {} cameras, {} iterations, final loss {last:.6} -> {}",
        groom.strand_count(),
        cams.len(),
        result.log.len(),
        out.display()
    ))
}

fn splat(cfg: &PipelineConfig, input: Option<PathBuf>) -> Result<String> {
    let path = input_path(input, &cfg.groom, cfg, "colored.grm1")?;
    let file = io::load_groom(&path)?;
    let colors = match file.colors {
        Some(c) => c,
        None => {
            warn!("{} has no colors; rendering mid gray", path.display());
            StrandColors::for_groom(&file.groom, Vec3::repeat(0.5))
        }
    };
    let (groom, tag) = match &cfg.anim {
        Some(p) => {
            let anim = io::load_animation(&existing(p.clone())?, cfg.frame_dt)?;
            let f = cfg.frame.unwrap_or(anim.frame_count() - 1);
            let frame = anim
                .frames
                .get(f)
                .ok_or_else(|| Error::invalid(format!("frame {f} out of range for {} frames", anim.frame_count())))?;
            if !frame.same_shape(&file.groom) {
                return Err(Error::invalid("animation frames and colored groom differ in shape"));
            }
            (frame.clone(), format!("_f{f:04}"))
        }
        None => (file.groom, String::new()),
    };
    let cams = cameras(cfg)?;
    for (i, cam) in cams.iter().enumerate() {
        let r = render_groom(&groom, &colors, cam, cfg.fit.background)?;
        io::save_ppm(&cfg.out(&format!("render_{i}{tag}.ppm")), &r.image)?;
        io::write_atomic(&cfg.out(&format!("render_{i}{tag}.f32")), &io::encode_raw_planes(&r.image))?;
    }
    Ok(format!(
        "splat: {} strands, {} cameras -> {}",
        groom.strand_count(),
        cams.len(),
        cfg.out(&format!("render_*{tag}.ppm")).display()
    ))
}

fn metrics(cfg: &PipelineConfig, input: Option<PathBuf>) -> Result<String> {
    let path = input_path(input, &cfg.anim, cfg, "dense.gan1")?;
    let anim = io::load_animation(&path, cfg.frame_dt)?;
    let report = analyze(&MotionMatrix::from_animation(&anim)?, cfg.components)?;
    io::write_atomic(&cfg.out("metrics.csv"), io::format_metrics(&report).as_bytes())?;
    io::write_atomic(&cfg.out("pc_tracks.csv"), io::format_pc_tracks(&report).as_bytes())?;
    Ok(format!(
        "metrics: pc1={} ts={} components={} ({} frames) -> {}",
        report.pc1_percent,
        report.ts,
        report.components,
        anim.frame_count(),
        cfg.out("metrics.csv").display()
    ))
}
