//! Command-line interface for the lung CT registration pipeline.

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use pulmoreg::error::Error as RegError;
use pulmoreg::eval::{eval_fissure, eval_jacobian_field, eval_tre, GridGeometry};
use pulmoreg::image::Image3D;
use pulmoreg::io::{
    read_displacement_field, read_landmark_pairs, read_metaimage, write_correspondences_csv,
    write_displacement_field, write_landmarks, write_metaimage, ElementType,
};
use pulmoreg::optimizer::preregister;
use pulmoreg::phantom::{make_phantom, PhantomParams};
use pulmoreg::pipeline::{
    displacement_field, preprocess_to_isotropic, register, sweep, RegistrationConfig,
    SweepParameter,
};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "pulmoreg",
    about = "Deformable lung CT registration with regularized keypoint correspondences",
    version
)]
struct Cli {
    /// JSON configuration file (all fields optional).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for phantom generation.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Extra factor on the adapted boundary weight (challenge mode).
    #[arg(long, global = true)]
    boundary_weight_multiplier: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ImagePairArgs {
    #[arg(long)]
    fixed: PathBuf,
    #[arg(long)]
    moving: PathBuf,
    #[arg(long)]
    fixed_mask: PathBuf,
    #[arg(long)]
    moving_mask: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Full registration: preprocessing, keypoints, multilevel optimization.
    Register {
        #[command(flatten)]
        images: ImagePairArgs,
        /// Output directory for displacement.mhd, warped.mhd, report.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Mask pre-registration only; writes the pre-alignment field and the
    /// pre-aligned moving image.
    Preprocess {
        #[command(flatten)]
        images: ImagePairArgs,
        #[arg(long)]
        out: PathBuf,
        /// Isotropic resolution of the resampled outputs, mm.
        #[arg(long, default_value_t = 1.0)]
        resolution: f64,
    },
    /// Keypoint correspondences only; writes correspondences.csv.
    Keypoints {
        #[command(flatten)]
        images: ImagePairArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Landmark distances under a displacement field.
    EvalTre {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        landmarks_fixed: PathBuf,
        #[arg(long)]
        landmarks_moving: PathBuf,
        /// Snap transformed landmarks to the nearest voxel center of this
        /// (moving) image's grid.
        #[arg(long)]
        snap_to: Option<PathBuf>,
    },
    /// Fissure surface distance under a displacement field.
    EvalFissure {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        fixed_fissure: PathBuf,
        #[arg(long)]
        moving_fissure: PathBuf,
    },
    /// Jacobian determinant statistics of a displacement field.
    EvalJacobian {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        mask: PathBuf,
    },
    /// Synthetic lung phantom with ground truth.
    Phantom {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 2.0)]
        spacing: f64,
        #[arg(long, default_value_t = 10.0)]
        amplitude: f64,
        #[arg(long, default_value_t = 200)]
        landmarks: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
    },
    /// Parameter sensitivity sweep: one parameter times each factor.
    Sweep {
        #[command(flatten)]
        images: ImagePairArgs,
        #[arg(long)]
        landmarks_fixed: PathBuf,
        #[arg(long)]
        landmarks_moving: PathBuf,
        /// One of: alpha, alpha_kp, gamma, eta.
        #[arg(long)]
        param: String,
        /// Comma-separated factors (default 10^-5..10^5).
        #[arg(long)]
        factors: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: failed to configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e
                .downcast_ref::<RegError>()
                .map(|r| matches!(r, RegError::Numerical(_)))
                .unwrap_or(false);
            ExitCode::from(if numerical { 2 } else { 1 })
        }
    }
}

fn load_config(
    cli_config: &Option<PathBuf>,
    multiplier: Option<f64>,
) -> anyhow::Result<RegistrationConfig> {
    let mut config: RegistrationConfig = match cli_config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => RegistrationConfig::default(),
    };
    if let Some(m) = multiplier {
        config.boundary_multiplier = m;
    }
    Ok(config)
}

fn load_pair(images: &ImagePairArgs) -> anyhow::Result<(Image3D, Image3D, Image3D, Image3D)> {
    Ok((
        read_metaimage(&images.fixed)?,
        read_metaimage(&images.moving)?,
        read_metaimage(&images.fixed_mask)?,
        read_metaimage(&images.moving_mask)?,
    ))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Register { images, out } => {
            let config = load_config(&cli.config, cli.boundary_weight_multiplier)?;
            let (fixed, moving, fm, mm) = load_pair(&images)?;
            fs::create_dir_all(&out)?;
            let result = register(&fixed, &moving, &fm, &mm, &config, |stage, level, info| {
                if info.iteration % 10 == 0 || info.iteration == 1 {
                    eprintln!(
                        "[{stage} level {level}] iteration {:3}  J = {:.6e}  |g| = {:.3e}",
                        info.iteration, info.value, info.grad_norm
                    );
                }
            })?;
            write_displacement_field(&result.displacement, out.join("displacement.mhd"), false)?;
            write_metaimage(&result.warped, out.join("warped.mhd"), ElementType::Float, false)?;
            if !result.correspondences.is_empty() {
                write_correspondences_csv(out.join("correspondences.csv"), &result.correspondences)?;
            }
            write_json(&out.join("report.json"), &result.report)?;
            let r = &result.report;
            println!(
                "registered: {} keypoints, J = {:.4e}, det grad y in [{:.3}, {:.3}] (mean {:.3}), fold free: {}",
                r.keypoint_count,
                r.final_terms.total,
                r.jacobian.min,
                r.jacobian.max,
                r.jacobian.mean,
                r.fold_free
            );
            println!("outputs in {}", out.display());
            Ok(())
        }
        Command::Preprocess {
            images,
            out,
            resolution,
        } => {
            let (fixed, moving, fm, mm) = load_pair(&images)?;
            fs::create_dir_all(&out)?;
            let pre = preregister(&fm, &mm, &Default::default())?;
            let (fixed_iso, fixed_mask_iso) = preprocess_to_isotropic(&fixed, &fm, resolution);
            write_metaimage(&fixed_iso, out.join("fixed_iso.mhd"), ElementType::Float, false)?;
            write_metaimage(
                &fixed_mask_iso,
                out.join("fixed_mask_iso.mhd"),
                ElementType::UChar,
                false,
            )?;
            let reference = pre
                .deformable
                .clone()
                .unwrap_or_else(|| trivial_transform(&fixed, &pre));
            let field = displacement_field(&reference, &fixed);
            write_displacement_field(&field, out.join("prealignment.mhd"), false)?;
            let masked_moving = mask_multiply(&moving, &mm);
            let warped = pulmoreg::pipeline::warp_image(&masked_moving, &fixed_iso, &reference);
            write_metaimage(
                &warped,
                out.join("moving_prealigned.mhd"),
                ElementType::Float,
                false,
            )?;
            println!("preprocessing outputs in {}", out.display());
            Ok(())
        }
        Command::Keypoints { images, out } => {
            let config = load_config(&cli.config, cli.boundary_weight_multiplier)?;
            let (fixed, moving, fm, mm) = load_pair(&images)?;
            fs::create_dir_all(&out)?;
            let corr = keypoints_only(&fixed, &moving, &fm, &mm, &config)?;
            write_correspondences_csv(out.join("correspondences.csv"), &corr)?;
            println!("{} correspondences written to {}", corr.len(), out.display());
            Ok(())
        }
        Command::EvalTre {
            field,
            landmarks_fixed,
            landmarks_moving,
            snap_to,
        } => {
            let field = read_displacement_field(&field)?;
            let landmarks = read_landmark_pairs(&landmarks_fixed, &landmarks_moving)?;
            let snap = match &snap_to {
                Some(p) => Some(GridGeometry::from(&read_metaimage(p)?)),
                None => None,
            };
            let report = eval_tre(&landmarks, &field, snap)?;
            println!(
                "landmarks: {} evaluated, {} excluded",
                report.distances.len(),
                report.excluded
            );
            println!("TRE mean {:.3} mm, std {:.3} mm", report.mean, report.std);
            for (thr, frac) in &report.cumulative {
                println!("  <= {:4.1} mm : {:5.1} %", thr, frac * 100.0);
            }
            Ok(())
        }
        Command::EvalFissure {
            field,
            fixed_fissure,
            moving_fissure,
        } => {
            let field = read_displacement_field(&field)?;
            let ff = read_metaimage(&fixed_fissure)?;
            let mf = read_metaimage(&moving_fissure)?;
            let report = eval_fissure(&ff, &mf, &field)?;
            println!(
                "fissure distance over {} voxels: mean {:.3} mm, std {:.3} mm",
                report.count, report.mean, report.std
            );
            Ok(())
        }
        Command::EvalJacobian { field, mask } => {
            let field = read_displacement_field(&field)?;
            let mask = read_metaimage(&mask)?;
            let r = eval_jacobian_field(&field, &mask)?;
            println!("det grad y over {} lung voxels:", r.count);
            println!(
                "  mean {:.3}  std {:.3}  min {:.3}  Q1 {:.3}  Q99 {:.3}  max {:.3}",
                r.mean, r.std, r.min, r.q01, r.q99, r.max
            );
            Ok(())
        }
        Command::Phantom {
            out,
            size,
            spacing,
            amplitude,
            landmarks,
            noise,
        } => {
            let params = PhantomParams {
                size,
                spacing,
                amplitude_mm: amplitude,
                num_landmarks: landmarks,
                noise_hu: noise,
                ..PhantomParams::default()
            };
            let ph = make_phantom(cli.seed, &params);
            fs::create_dir_all(&out)?;
            write_metaimage(&ph.fixed, out.join("fixed.mhd"), ElementType::Float, false)?;
            write_metaimage(&ph.moving, out.join("moving.mhd"), ElementType::Float, false)?;
            write_metaimage(&ph.fixed_mask, out.join("fixed_mask.mhd"), ElementType::UChar, false)?;
            write_metaimage(&ph.moving_mask, out.join("moving_mask.mhd"), ElementType::UChar, false)?;
            write_displacement_field(&ph.truth, out.join("truth.mhd"), false)?;
            write_landmarks(out.join("landmarks_fixed.csv"), &ph.landmarks.fixed)?;
            write_landmarks(out.join("landmarks_moving.csv"), &ph.landmarks.moving)?;
            println!(
                "phantom (seed {}, {size}^3 at {spacing} mm, {amplitude} mm warp) in {}",
                cli.seed,
                out.display()
            );
            Ok(())
        }
        Command::Sweep {
            images,
            landmarks_fixed,
            landmarks_moving,
            param,
            factors,
            out,
        } => {
            let config = load_config(&cli.config, cli.boundary_weight_multiplier)?;
            let Some(parameter) = SweepParameter::parse(&param) else {
                bail!("unknown sweep parameter {param:?}; use alpha, alpha_kp, gamma or eta");
            };
            let (fixed, moving, fm, mm) = load_pair(&images)?;
            let landmarks = read_landmark_pairs(&landmarks_fixed, &landmarks_moving)?;
            let factors: Vec<f64> = match &factors {
                Some(list) => list
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .context("parsing --factors")?,
                None => (-5..=5).map(|k| 10f64.powi(k)).collect(),
            };
            fs::create_dir_all(&out)?;
            let cells = sweep(&fixed, &moving, &fm, &mm, &landmarks, &config, parameter, &factors);
            println!("{:>12}  {:>10}  {:>10}", "factor", "mean TRE", "std");
            for cell in &cells {
                match (cell.mean_tre, &cell.error) {
                    (Some(mean), _) => println!(
                        "{:>12.2e}  {:>10.3}  {:>10.3}",
                        cell.factor,
                        mean,
                        cell.std_tre.unwrap_or(f64::NAN)
                    ),
                    (None, Some(err)) => println!("{:>12.2e}  failed: {err}", cell.factor),
                    _ => {}
                }
            }
            write_json(&out.join("sweep.json"), &cells)?;
            Ok(())
        }
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Pre-registration wrapped onto a trivial control grid (affine only).
fn trivial_transform(
    fixed: &Image3D,
    pre: &pulmoreg::optimizer::PreRegistration,
) -> pulmoreg::transform::BSplineTransform {
    let extent = [
        (fixed.dims[0] - 1) as f64 * fixed.spacing[0],
        (fixed.dims[1] - 1) as f64 * fixed.spacing[1],
        (fixed.dims[2] - 1) as f64 * fixed.spacing[2],
    ];
    let mut t = pulmoreg::transform::BSplineTransform::new([2, 2, 2], fixed.origin, extent);
    let mut reference = vec![[0.0; 3]; 8];
    for k in 0..2 {
        for j in 0..2 {
            for i in 0..2 {
                let idx = t.node_index([i, j, k]);
                reference[idx] = pre.displacement(t.node_position([i, j, k]));
            }
        }
    }
    t = t.with_reference(reference);
    t
}

/// The sparse stage in isolation, mirroring the pipeline's preprocessing.
fn keypoints_only(
    fixed: &Image3D,
    moving: &Image3D,
    fixed_mask: &Image3D,
    moving_mask: &Image3D,
    config: &RegistrationConfig,
) -> anyhow::Result<pulmoreg::keypoints::CorrespondenceSet> {
    use pulmoreg::keypoints::find_correspondences;
    use pulmoreg::optimizer::level_image;

    let masked_fixed = mask_multiply(fixed, fixed_mask);
    let masked_moving = mask_multiply(moving, moving_mask);
    let pre = if config.prereg_enabled {
        preregister(fixed_mask, moving_mask, &config.prereg_params())?
    } else {
        pulmoreg::optimizer::PreRegistration::identity()
    };
    let res = config.keypoint_resolution_mm;
    let fixed_res = level_image(&masked_fixed, Some(res), false);
    let mask_res = level_image(fixed_mask, Some(res), true);
    let reference = pre
        .deformable
        .clone()
        .unwrap_or_else(|| trivial_transform(fixed, &pre));
    let moving_pre = pulmoreg::pipeline::warp_image(&masked_moving, &fixed_res, &reference);
    Ok(find_correspondences(
        &fixed_res,
        &mask_res,
        &moving_pre,
        &reference,
        &config.keypoint_params(),
    ))
}

fn mask_multiply(img: &Image3D, mask: &Image3D) -> Image3D {
    let mut out = img.clone();
    for (v, m) in out.values.iter_mut().zip(mask.values.iter()) {
        if *m <= 0.5 {
            *v = 0.0;
        }
    }
    out
}
