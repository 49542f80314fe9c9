//! The CLI verbs: read inputs, run a pipeline stage, write files.
//!
//! Output directory layout:
//!
//! | file | written by |
//! |---|---|
//! | `mesh_forward.txt`, `mesh_inverse.txt` | `mesh` |
//! | `v_ref.txt`, `v_obj.txt`, `dv_clean.txt`, `dv_noisy.txt` | `simulate` |
//! | `truth_pixels.txt`, `truth_elements.txt`, `truth.pgm`, `manifest.toml` | `simulate` |
//! | `recon_field.txt`, `recon_history.txt`, `iterations.csv`, `recon.pgm` | `reconstruct` |
//! | `eval.csv`, `profiles.csv` | `evaluate` |
//! | `sweep.csv` | `sweep` |
//! | `timing_<verb>.csv` | every verb that computes |
//!
//! Timings live in their own files so that every other output is
//! byte-identical across runs with the same seed.

use std::fs;
use std::path::{Path, PathBuf};

use eit_core::metrics::relative_error_image;
use eit_core::{
    assign_conductivity, io, profile, psnr, Image, ProfileLine, ReconResult, VoltageFrame,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::pipeline::{self, Geometry, InverseModel, Timings};

pub const DATA_FILE: &str = "dv_noisy.txt";
pub const TRUTH_FILE: &str = "truth_pixels.txt";
pub const FIELD_FILE: &str = "recon_field.txt";
pub const HISTORY_FILE: &str = "recon_history.txt";

fn out_path(cfg: &PipelineConfig, name: &str) -> PathBuf {
    cfg.output.dir.join(name)
}

fn prepare_dir(cfg: &PipelineConfig) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.output.dir).map_err(|e| CliError::output(&cfg.output.dir, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::output(path, e))
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::input(path, e))
}

fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<(), CliError> {
    let fail = |e: csv::Error| CliError::input(path, e);
    let mut w = csv::Writer::from_path(path).map_err(fail)?;
    for r in rows {
        w.serialize(r).map_err(fail)?;
    }
    w.flush().map_err(|e| CliError::output(path, e))
}

fn write_pgm(image: &Image<f64>, stem: &Path) -> Result<(), CliError> {
    io::write_pgm(image, stem).map_err(|e| match e {
        eit_core::error::EitError::Io(e) => CliError::output(stem, e),
        other => other.into(),
    })
}

#[derive(Serialize)]
struct TimingRow<'a> {
    phase: &'a str,
    ms: f64,
}

fn write_timings(cfg: &PipelineConfig, verb: &str, timings: &Timings) -> Result<(), CliError> {
    write_csv(
        &out_path(cfg, &format!("timing_{verb}.csv")),
        timings.0.iter().map(|(phase, d)| TimingRow {
            phase,
            ms: d.as_secs_f64() * 1e3,
        }),
    )
}

fn geometry(cfg: &PipelineConfig, timings: &mut Timings) -> Result<Geometry, CliError> {
    timings.time("mesh", || Geometry::build(cfg))
}

/// Writes both meshes with their electrodes.
pub fn mesh(cfg: &PipelineConfig) -> Result<(), CliError> {
    let mut timings = Timings::default();
    let geo = geometry(cfg, &mut timings)?;
    prepare_dir(cfg)?;
    write(
        &out_path(cfg, "mesh_forward.txt"),
        io::format_mesh(&geo.forward_mesh, Some(&geo.forward_layout)),
    )?;
    write(
        &out_path(cfg, "mesh_inverse.txt"),
        io::format_mesh(&geo.inverse_mesh, Some(&geo.inverse_layout)),
    )?;
    write_timings(cfg, "mesh", &timings)
}

#[derive(Serialize)]
struct Manifest<'a> {
    seed: u64,
    snr_db: f64,
    electrodes: usize,
    current_ma: f64,
    measurements: usize,
    reference_conductivity: f64,
    phantom: String,
    forward_elements: usize,
    inverse_elements: usize,
    difference: &'a str,
    files: Vec<&'a str>,
}

/// Simulates the reference and object frames and the noisy difference datum.
pub fn simulate(cfg: &PipelineConfig) -> Result<(), CliError> {
    let spec = cfg.phantom_spec()?;
    let mut timings = Timings::default();
    let geo = geometry(cfg, &mut timings)?;
    let sim = timings.time("forward", || pipeline::simulate(cfg, &geo, &spec))?;
    let grid = timings.time("raster_lookup", || {
        eit_core::mesh::RasterGrid::new(&geo.inverse_mesh, cfg.mesh.raster)
    })?;
    let truth = pipeline::truth_image(&grid, &spec)?;
    let truth_elements = assign_conductivity(&geo.inverse_mesh, &spec)?;

    prepare_dir(cfg)?;
    let frames = [
        ("v_ref.txt", &sim.v_ref),
        ("v_obj.txt", &sim.v_obj),
        ("dv_clean.txt", &sim.dv_clean),
        (DATA_FILE, &sim.dv_noisy),
    ];
    for (name, frame) in frames {
        write(
            &out_path(cfg, name),
            io::format_frames(std::slice::from_ref(frame)),
        )?;
    }
    write(
        &out_path(cfg, TRUTH_FILE),
        io::format_element_values(truth.pixels()),
    )?;
    write(
        &out_path(cfg, "truth_elements.txt"),
        io::format_element_values(truth_elements.values()),
    )?;
    write_pgm(&truth, &out_path(cfg, "truth"))?;
    let manifest = Manifest {
        seed: cfg.noise.seed,
        snr_db: cfg.noise.snr_db,
        electrodes: cfg.electrodes.count,
        current_ma: cfg.electrodes.current_ma,
        measurements: sim.dv_clean.len(),
        reference_conductivity: cfg.phantom.reference,
        phantom: match (&cfg.phantom.model, &cfg.phantom.file) {
            (Some(k), _) => format!("lung model {k}"),
            (None, Some(f)) => f.display().to_string(),
            _ => unreachable!("validated config"),
        },
        forward_elements: geo.forward_mesh.element_count(),
        inverse_elements: geo.inverse_mesh.element_count(),
        difference: "dv = -(v_obj - v_ref)",
        files: frames
            .iter()
            .map(|(n, _)| *n)
            .chain([TRUTH_FILE, "truth_elements.txt", "truth.pgm"])
            .collect(),
    };
    let text = toml::to_string(&manifest).map_err(|e| CliError::Config(e.to_string()))?;
    write(&out_path(cfg, "manifest.toml"), text)?;
    write(&out_path(cfg, "config.toml"), cfg.to_toml())?;
    write_timings(cfg, "simulate", &timings)
}

#[derive(Serialize)]
struct IterationRow {
    iteration: usize,
    data_residual: f64,
    step_norm: f64,
}

fn read_frames(path: &Path, electrodes: usize) -> Result<Vec<VoltageFrame<f64>>, CliError> {
    let frames: Vec<VoltageFrame<f64>> =
        io::parse_frames(&read(path)?).map_err(|e| CliError::input(path, e))?;
    if let Some(f) = frames.iter().find(|f| f.electrodes() != electrodes) {
        return Err(CliError::input(
            path,
            format!(
                "frame has {} electrodes, config has {electrodes}",
                f.electrodes()
            ),
        ));
    }
    Ok(frames)
}

fn write_result(
    cfg: &PipelineConfig,
    model: &InverseModel,
    prefix: &str,
    result: &ReconResult<f64>,
) -> Result<(), CliError> {
    let field = model.conductivity(&result.final_field);
    write(
        &out_path(cfg, &format!("{prefix}{FIELD_FILE}")),
        io::format_element_values(&field),
    )?;
    let history: Vec<Vec<f64>> = result
        .history
        .iter()
        .map(|h| model.conductivity(h))
        .collect();
    write(
        &out_path(cfg, &format!("{prefix}{HISTORY_FILE}")),
        io::format_element_frames(&history),
    )?;
    write_csv(
        &out_path(cfg, &format!("{prefix}iterations.csv")),
        result.diagnostics.iter().map(|d| IterationRow {
            iteration: d.iteration,
            data_residual: d.data_residual,
            step_norm: d.step_norm,
        }),
    )?;
    write_pgm(
        &model.render(&field)?,
        &out_path(cfg, &format!("{prefix}recon")),
    )
}

/// Reconstructs every frame in `data` (default `<out>/dv_noisy.txt`).
/// Returns the termination reason of each frame.
pub fn reconstruct(
    cfg: &PipelineConfig,
    data: Option<&Path>,
) -> Result<Vec<&'static str>, CliError> {
    let data_path = data.map_or_else(|| out_path(cfg, DATA_FILE), Path::to_path_buf);
    let frames = read_frames(&data_path, cfg.electrodes.count)?;
    let mut timings = Timings::default();
    let geo = geometry(cfg, &mut timings)?;
    let model = InverseModel::build(cfg, &geo, &mut timings)?;
    let config = model.solver_config(cfg);
    let kind = cfg.solver.kind;
    let system = timings.time("factorization", || model.system(kind, config.rho))?;

    let results: Vec<Result<ReconResult<f64>, CliError>> = timings.time("reconstruction", || {
        frames
            .par_iter()
            .map(|f| model.solve(system.as_ref(), kind, &config, f.values()))
            .collect()
    });
    prepare_dir(cfg)?;
    let prefix = |t: usize| {
        if frames.len() == 1 {
            String::new()
        } else {
            format!("frame{t}_")
        }
    };
    let mut reasons = Vec::with_capacity(results.len());
    let mut failures = String::new();
    for (t, r) in results.iter().enumerate() {
        match r {
            Ok(r) => {
                write_result(cfg, &model, &prefix(t), r)?;
                for d in &r.diagnostics {
                    timings
                        .0
                        .push((format!("iteration_{}_frame_{t}", d.iteration), d.wall_time));
                }
                reasons.push(r.termination.as_str());
            }
            Err(e) => {
                let mut msg = format!("frame {t}: {e}\n");
                let mut source = std::error::Error::source(e);
                while let Some(s) = source {
                    msg.push_str(&format!("  caused by: {s}\n"));
                    source = s.source();
                }
                failures.push_str(&msg);
            }
        }
    }
    write_timings(cfg, "reconstruct", &timings)?;
    if let Some(Err(e)) = results.into_iter().find(Result::is_err) {
        write(&out_path(cfg, "diagnostics.txt"), failures)?;
        return Err(e);
    }
    Ok(reasons)
}

/// What a reconstruction is compared against.
#[derive(Clone, Debug)]
pub enum Reference {
    /// Pixel truth written by `simulate`.
    Truth(PathBuf),
    /// Final iterate of another reconstruction, rendered on the same raster
    /// (a surrogate truth, e.g. a TV result).
    Result(PathBuf),
}

#[derive(Serialize)]
struct EvalRow {
    iteration: usize,
    re: f64,
    psnr: f64,
}

#[derive(Serialize)]
struct ProfileRow {
    line: usize,
    sample: usize,
    col: f64,
    row: f64,
    reference: f64,
    recon: f64,
}

fn read_history(path: &Path, elements: usize) -> Result<Vec<Vec<f64>>, CliError> {
    let frames: Vec<Vec<f64>> =
        io::parse_element_frames(&read(path)?).map_err(|e| CliError::input(path, e))?;
    if frames.is_empty() {
        return Err(CliError::input(path, "no element values"));
    }
    if let Some(f) = frames.iter().find(|f| f.len() != elements) {
        return Err(CliError::input(
            path,
            format!("{} element values, inverse mesh has {elements}", f.len()),
        ));
    }
    Ok(frames)
}

/// RE and PSNR of every iterate plus profile lines through the final one.
/// All inputs are read and checked before anything is written.
pub fn evaluate(
    cfg: &PipelineConfig,
    result: Option<&Path>,
    reference: Option<Reference>,
) -> Result<(), CliError> {
    let result_path = result.map_or_else(|| out_path(cfg, HISTORY_FILE), Path::to_path_buf);
    let reference = reference.unwrap_or_else(|| Reference::Truth(out_path(cfg, TRUTH_FILE)));
    let raster = cfg.mesh.raster;
    // existence first, so a missing file fails before any meshing
    for p in [
        &result_path,
        match &reference {
            Reference::Truth(p) | Reference::Result(p) => p,
        },
    ] {
        if !p.is_file() {
            return Err(CliError::input(p, "file not found"));
        }
    }
    let mut timings = Timings::default();
    let geo = geometry(cfg, &mut timings)?;
    let grid = timings.time("raster_lookup", || {
        eit_core::mesh::RasterGrid::new(&geo.inverse_mesh, raster)
    })?;
    let elements = geo.inverse_mesh.element_count();
    let history = read_history(&result_path, elements)?;
    let truth = match &reference {
        Reference::Truth(p) => {
            let px: Vec<f64> =
                io::parse_element_values(&read(p)?).map_err(|e| CliError::input(p, e))?;
            if px.len() != raster * raster {
                return Err(CliError::input(
                    p,
                    format!("{} pixels, raster is {raster}x{raster}", px.len()),
                ));
            }
            Image::new(raster, raster, px)?
        }
        Reference::Result(p) => {
            let frames = read_history(p, elements)?;
            grid.render(frames.last().expect("non-empty"))?
        }
    };
    let images = history
        .iter()
        .map(|h| grid.render(h))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::with_capacity(images.len());
    for (n, img) in images.iter().enumerate() {
        rows.push(EvalRow {
            iteration: n + 1,
            re: relative_error_image(img, &truth)?,
            psnr: psnr(img, &truth)?,
        });
    }
    let last = images.last().expect("non-empty");
    let mut profile_rows = Vec::new();
    for (l, spec) in cfg.profiles().iter().enumerate() {
        let line = ProfileLine {
            start: spec.start,
            end: spec.end,
            samples: spec.samples,
        };
        let (a, b) = (profile(&truth, &line)?, profile(last, &line)?);
        let step = 1.0 / (spec.samples - 1) as f64;
        for s in 0..spec.samples {
            let t = s as f64 * step;
            profile_rows.push(ProfileRow {
                line: l,
                sample: s,
                col: spec.start[0] + (spec.end[0] - spec.start[0]) * t,
                row: spec.start[1] + (spec.end[1] - spec.start[1]) * t,
                reference: a[s],
                recon: b[s],
            });
        }
    }
    prepare_dir(cfg)?;
    write_csv(&out_path(cfg, "eval.csv"), rows)?;
    write_csv(&out_path(cfg, "profiles.csv"), profile_rows)?;
    write_timings(cfg, "evaluate", &timings)
}

/// Simulates once, then reconstructs every grid cell. Returns the table that
/// was written to `sweep.csv`.
pub fn sweep(cfg: &PipelineConfig) -> Result<Vec<pipeline::SweepCell>, CliError> {
    let spec = cfg.phantom_spec()?;
    let mut timings = Timings::default();
    let geo = geometry(cfg, &mut timings)?;
    let sim = timings.time("forward", || pipeline::simulate(cfg, &geo, &spec))?;
    let model = InverseModel::build(cfg, &geo, &mut timings)?;
    let truth = model.truth_image(&spec)?;
    let cells = timings.time("sweep", || {
        pipeline::sweep(cfg, &model, sim.dv_noisy.values(), &truth)
    })?;
    prepare_dir(cfg)?;
    write_csv(&out_path(cfg, "sweep.csv"), &cells)?;
    write_timings(cfg, "sweep", &timings)?;
    Ok(cells)
}

/// Renders an element-value file (one block or several frames) or a pixel
/// file to 16-bit PGM. Returns the written stems.
pub fn render(cfg: &PipelineConfig, input: Option<&Path>) -> Result<Vec<PathBuf>, CliError> {
    let input = input.map_or_else(|| out_path(cfg, FIELD_FILE), Path::to_path_buf);
    let text = read(&input)?;
    let blocks: Vec<Vec<f64>> =
        io::parse_element_frames(&text).map_err(|e| CliError::input(&input, e))?;
    if blocks.is_empty() {
        return Err(CliError::input(&input, "no values"));
    }
    let raster = cfg.mesh.raster;
    let mut timings = Timings::default();
    let geo = geometry(cfg, &mut timings)?;
    let elements = geo.inverse_mesh.element_count();
    let grid = eit_core::mesh::RasterGrid::new(&geo.inverse_mesh, raster)?;
    let images = blocks
        .iter()
        .map(|b| match b.len() {
            n if n == elements => Ok(grid.render(b)?),
            n if n == raster * raster => Ok(Image::new(raster, raster, b.clone())?),
            n => Err(CliError::input(
                &input,
                format!(
                    "{n} values fit neither {elements} elements nor a {raster}x{raster} raster"
                ),
            )),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let stem = input
        .file_stem()
        .map_or_else(|| "image".to_string(), |s| s.to_string_lossy().into_owned());
    prepare_dir(cfg)?;
    let mut stems = Vec::new();
    for (t, img) in images.iter().enumerate() {
        let name = if images.len() == 1 {
            format!("{stem}_image")
        } else {
            format!("{stem}_{t:03}")
        };
        let path = out_path(cfg, &name);
        write_pgm(img, &path)?;
        stems.push(path);
    }
    Ok(stems)
}
