use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use plume::features::{init_random, load_weights, FeatureNetwork, MiniNetSpec};
use plume::fields::{soft_mask_from_density, vf32};
use plume::gradcheck::run_gradcheck;
use plume::render::render_view;
use plume::stylize::{
    blend_sequence, eval_views, flicker_views, stylize_frames, stylize_sequence, temporal_flicker_metric,
    IterationReport,
};
use plume::{BlendMode, CameraPose, GrayImage, Objective, RenderConfig, ScalarField3, StylizeConfig, VelocitySequence};

use crate::flags::ConfigFlags;
use crate::{CliError, ModelArgs};

type CliResult<T = ()> = Result<T, CliError>;

fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))
}

fn load_density(path: &Path) -> CliResult<ScalarField3> {
    Ok(vf32::read(path)?.into_scalar()?)
}

fn load_network(weights: Option<&Path>, seed: u64) -> CliResult<FeatureNetwork> {
    match weights {
        Some(p) if !p.is_file() => Err(CliError::Input(format!("weight file not found: {}", p.display()))),
        Some(p) => Ok(load_weights(p)?),
        None => {
            log::info!("no --weights given, using random orthogonal weights (seed {seed})");
            Ok(init_random(&MiniNetSpec::default(), seed)?)
        }
    }
}

fn load_image(path: &Path) -> CliResult<GrayImage> {
    let img = image::open(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        .into_luma16();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect();
    Ok(GrayImage::from_vec(h as usize, w as usize, data)?)
}

fn objective(model: &ModelArgs, cfg: &StylizeConfig) -> CliResult<Objective> {
    let style = model.style.as_deref().map(load_image).transpose()?;
    let content = model.content.as_deref().map(load_image).transpose()?;
    let has_style = style.is_some() && cfg.beta > 0.0;
    let has_content = content.is_some() && cfg.alpha > 0.0 && !cfg.content_layers.is_empty();
    if !has_style && !has_content {
        return Err(CliError::Input(
            "nothing to optimize: give --style (with beta > 0) and/or --content (with alpha > 0)".into(),
        ));
    }
    let net = load_network(model.weights.as_deref(), cfg.seed)?;
    Ok(Objective::new(net, style.as_ref(), content, cfg)?)
}

fn write_text(path: &Path, text: &str) -> CliResult {
    Ok(plume::write_atomic(path, text.as_bytes())?)
}

/// Writes `img * scale` as PGM.
fn write_scaled(img: &GrayImage, scale: f64, path: &Path, bits: u8) -> CliResult {
    Ok(img.map(|v| v * scale).write_pgm(path, bits)?)
}

fn exposure(img: &GrayImage) -> f64 {
    let m = img.max();
    if m > 0.0 {
        1.0 / m
    } else {
        1.0
    }
}

pub fn stylize_frame(density: &Path, model: &ModelArgs, out: &Path, bits: u8, flags: &ConfigFlags) -> CliResult {
    let cfg = flags.resolve()?;
    let d = load_density(density)?;
    let obj = objective(model, &cfg)?;
    create_dir(out)?;
    println!("iter,scale,loss");
    let observer = |r: &IterationReport<'_>| println!("{},{},{:.9e}", r.iter, r.scale, r.loss);
    let res = plume::stylize::stylize_frame(&d, &obj, &cfg, 0, Some(&observer))?;

    vf32::write_scalar(out.join("stylized.vf32"), &res.density)?;
    vf32::write_scalar(out.join("phi.vf32"), &res.phi)?;
    vf32::write_vector(out.join("psi.vf32"), &res.psi)?;
    vf32::write_vector(out.join("velocity.vf32"), &res.velocity)?;
    write_text(&out.join("config.txt"), &cfg.to_text())?;

    let mut csv = String::from("stage,loss\ninput");
    for (i, l) in res.checkpoints.iter().enumerate() {
        if i > 0 {
            csv.push_str(&format!("scale{}", cfg.scales - i));
        }
        csv.push_str(&format!(",{l:.9e}\n"));
    }
    write_text(&out.join("checkpoints.csv"), &csv)?;

    let rcfg = RenderConfig::new(cfg.gamma);
    for (i, pose) in eval_views(&cfg, &d).iter().enumerate() {
        let before = render_view(&d, pose, &rcfg)?;
        let after = render_view(&res.density, pose, &rcfg)?;
        let k = exposure(&before);
        write_scaled(&before, k, &out.join(format!("view_{i:02}_before.pgm")), bits)?;
        write_scaled(&after, k, &out.join(format!("view_{i:02}_after.pgm")), bits)?;
    }
    Ok(())
}

pub struct SeqInputs {
    pub density_dir: PathBuf,
    pub velocity_dir: PathBuf,
    pub sim_dt: f64,
    pub model: ModelArgs,
    pub out: PathBuf,
    pub compare_window: bool,
    pub bits: u8,
    pub config: ConfigFlags,
}

pub fn stylize_seq(args: &SeqInputs) -> CliResult {
    let cfg = args.config.resolve()?;
    let paths = vf32::list_frames(&args.density_dir)?;
    if paths.is_empty() {
        return Err(CliError::Input(format!("no frame_NNNN.vf32 files in {}", args.density_dir.display())));
    }
    let densities = paths.iter().map(|p| load_density(p)).collect::<CliResult<Vec<_>>>()?;
    let seq = VelocitySequence::read_dir(&args.velocity_dir, args.sim_dt)?;
    let obj = objective(&args.model, &cfg)?;

    let log: Mutex<Vec<(usize, usize, usize, f64)>> = Mutex::new(Vec::new());
    let observer = |r: &IterationReport<'_>| {
        log.lock().expect("loss log").push((r.frame, r.iter, r.scale, r.loss));
    };
    let no_window = StylizeConfig {
        window: 0,
        ..cfg.clone()
    };
    let (stylized, velocities, baseline) = if cfg.blend == BlendMode::Velocity && cfg.sweeps == 1 {
        // Both windows share the independent per-frame pass.
        let frames = stylize_frames(&densities, &obj, &cfg, Some(&observer))?;
        let (out, vel) = blend_sequence(&densities, &frames, &seq, &cfg)?;
        let base = if args.compare_window {
            Some(blend_sequence(&densities, &frames, &seq, &no_window)?.0)
        } else {
            None
        };
        (out, vel, base)
    } else {
        let res = stylize_sequence(&densities, &seq, &obj, &cfg, Some(&observer))?;
        let base = if args.compare_window {
            Some(stylize_sequence(&densities, &seq, &obj, &no_window, None)?.densities)
        } else {
            None
        };
        (res.densities, res.velocities, base)
    };

    let mut rows = log.into_inner().expect("loss log");
    // Frames run concurrently; a stable sort restores a deterministic order.
    rows.sort_by_key(|r| r.0);
    println!("frame,iter,scale,loss");
    for (f, i, s, l) in rows {
        println!("{f},{i},{s},{l:.9e}");
    }

    let ddir = args.out.join("density");
    let vdir = args.out.join("velocity");
    let rdir = args.out.join("render");
    for dir in [&ddir, &vdir, &rdir] {
        create_dir(dir)?;
    }
    let rcfg = RenderConfig::new(cfg.gamma);
    let center = CameraPose::new(cfg.theta1, cfg.theta2).looking_at(densities[0].center());
    let k = exposure(&render_view(&densities[0], &center, &rcfg)?);
    for (t, (d, v)) in stylized.iter().zip(&velocities).enumerate() {
        let name = vf32::frame_file_name(t);
        vf32::write_scalar(ddir.join(&name), d)?;
        vf32::write_vector(vdir.join(&name), v)?;
        let img = render_view(d, &center, &rcfg)?;
        write_scaled(&img, k, &rdir.join(name.replace(".vf32", ".pgm")), args.bits)?;
    }
    write_text(&args.out.join("config.txt"), &cfg.to_text())?;

    if let Some(base) = baseline {
        let poses = flicker_views(&cfg, &densities[0]);
        let with = flicker(&stylized, &seq, &poses, &rcfg)?;
        let without = flicker(&base, &seq, &poses, &rcfg)?;
        log::info!("flicker: window {} -> {with:.6e}, window 0 -> {without:.6e}", cfg.window);
        write_text(
            &args.out.join("flicker.csv"),
            &format!("window,flicker\n0,{without:.9e}\n{},{with:.9e}\n", cfg.window),
        )?;
    }
    Ok(())
}

fn flicker(frames: &[ScalarField3], seq: &VelocitySequence, poses: &[CameraPose], rcfg: &RenderConfig) -> CliResult<f64> {
    let renders = frames
        .iter()
        .map(|d| poses.iter().map(|p| render_view(d, p, rcfg)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()?;
    Ok(temporal_flicker_metric(&renders, seq, poses)?)
}

pub fn render(density: &Path, out: &Path, theta1: f64, theta2: f64, gamma: f64, normalize: bool, bits: u8) -> CliResult {
    let d = load_density(density)?;
    let pose = CameraPose::new(theta1, theta2).looking_at(d.centroid());
    let img = render_view(&d, &pose, &RenderConfig::new(gamma))?;
    let k = if normalize { exposure(&img) } else { 1.0 };
    write_scaled(&img, k, out, bits)
}

pub fn make_mask(density: &Path, out: &Path, threshold: f64, blur: f64) -> CliResult {
    let d = load_density(density)?;
    let mask = soft_mask_from_density(&d, threshold, blur)?;
    Ok(vf32::write_scalar(out, mask.field())?)
}

pub fn gradcheck(seed: u64, seeds: u64, tolerance: f64, corrupt: Option<&str>) -> CliResult {
    let mut failing: Vec<String> = Vec::new();
    println!("seed,component,max_rel_error,probes,skipped");
    for s in seed..seed.saturating_add(seeds.max(1)) {
        let report = run_gradcheck(s, corrupt)?;
        for c in &report.checks {
            println!("{s},{},{:.3e},{},{}", c.name, c.max_rel_error, c.probes, c.skipped);
        }
        for c in report.failing(tolerance) {
            failing.push(format!("{} (seed {s}, error {:.3e})", c.name, c.max_rel_error));
        }
    }
    if failing.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(format!("gradient mismatch above {tolerance:e}: {}", failing.join(", "))))
    }
}

pub fn info(files: &[PathBuf]) -> CliResult {
    for path in files {
        let mut magic = [0u8; 4];
        std::fs::File::open(path)
            .and_then(|mut f| f.read_exact(&mut magic))
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        match &magic {
            b"VF32" => {
                let h = vf32::read_header(path)?;
                println!(
                    "{}: VF32 v{} channels={} dims={}x{}x{} spacing={}",
                    path.display(),
                    h.version,
                    h.channels,
                    h.dims.nx,
                    h.dims.ny,
                    h.dims.nz,
                    h.spacing
                );
            }
            b"NSTW" => {
                let net = load_weights(path)?;
                println!(
                    "{}: NSTW layers={} in_channels={} mean={} scale={}",
                    path.display(),
                    net.layers().len(),
                    net.input_channels(),
                    net.mean(),
                    net.scale()
                );
                for layer in net.layers() {
                    println!("  {} {:?}", layer.name, layer.kind);
                }
            }
            _ => return Err(CliError::Input(format!("{}: neither a VF32 nor an NSTW file", path.display()))),
        }
    }
    Ok(())
}
