//! In-memory pipeline stages shared by the commands, the sweep and the tests.

use std::time::{Duration, Instant};

use eit_core::mesh::{place_electrodes_at_angles, RasterGrid};
use eit_core::metrics::relative_error_image;
use eit_core::{
    add_noise, assign_conductivity, build_difference_operators, generate_disk_mesh,
    place_electrodes, psnr, reconstruct_tikhonov, sensitivity_matrix, signed_difference,
    simulate_frame, AdmmSystem, ConductivityField, DifferenceOperators, ElectrodeLayout, Image,
    PhantomSpec, ReconResult, SensitivityMatrix, SolverConfig, TriMesh, VoltageFrame,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{PipelineConfig, SolverKind};
use crate::error::CliError;

/// Wall time per named phase, in execution order.
#[derive(Clone, Debug, Default)]
pub struct Timings(pub Vec<(String, Duration)>);

impl Timings {
    pub fn time<R>(&mut self, phase: &str, f: impl FnOnce() -> R) -> R {
        let start = Instant::now();
        let out = f();
        self.0.push((phase.to_string(), start.elapsed()));
        out
    }

    pub fn get(&self, phase: &str) -> Option<Duration> {
        self.0.iter().find(|(p, _)| p == phase).map(|&(_, d)| d)
    }
}

/// Meshes and electrodes for both discretizations.
pub struct Geometry {
    pub forward_mesh: TriMesh<f64>,
    pub forward_layout: ElectrodeLayout<f64>,
    pub inverse_mesh: TriMesh<f64>,
    pub inverse_layout: ElectrodeLayout<f64>,
}

impl Geometry {
    pub fn build(cfg: &PipelineConfig) -> Result<Self, CliError> {
        let inverse_mesh = generate_disk_mesh(cfg.mesh.radius, cfg.mesh.inverse_elements)?;
        let inverse_layout = place_electrodes(&inverse_mesh, cfg.electrodes.count)?;
        let forward_mesh = generate_disk_mesh(cfg.mesh.radius, cfg.mesh.forward_elements)?;
        // the fine mesh carries the same electrode angles
        let forward_layout = place_electrodes_at_angles(&forward_mesh, inverse_layout.angles())?;
        Ok(Self {
            forward_mesh,
            forward_layout,
            inverse_mesh,
            inverse_layout,
        })
    }
}

pub struct Simulation {
    pub v_ref: VoltageFrame<f64>,
    pub v_obj: VoltageFrame<f64>,
    pub dv_clean: VoltageFrame<f64>,
    pub dv_noisy: VoltageFrame<f64>,
}

/// Reference and object frames on the fine mesh, their signed difference and
/// the noisy copy.
pub fn simulate(
    cfg: &PipelineConfig,
    geo: &Geometry,
    spec: &PhantomSpec<f64>,
) -> Result<Simulation, CliError> {
    let mesh = &geo.forward_mesh;
    let current = cfg.electrodes.current_ma;
    let sigma0 = ConductivityField::homogeneous(mesh.element_count(), cfg.phantom.reference)?;
    let v_ref = simulate_frame(mesh, &geo.forward_layout, &sigma0, current)?;
    let v_obj = simulate_frame(
        mesh,
        &geo.forward_layout,
        &assign_conductivity(mesh, spec)?,
        current,
    )?;
    let dv_clean = signed_difference(&v_obj, &v_ref)?;
    let dv_noisy = add_noise(&dv_clean, cfg.noise.snr_db, cfg.noise.seed)?;
    Ok(Simulation {
        v_ref,
        v_obj,
        dv_clean,
        dv_noisy,
    })
}

/// Everything a reconstruction needs on the coarse mesh.
pub struct InverseModel {
    pub mesh: TriMesh<f64>,
    pub sigma0: f64,
    pub s: SensitivityMatrix<f64>,
    pub d: DifferenceOperators<f64>,
    pub grid: RasterGrid<f64>,
    pub boundary: Vec<usize>,
    pub mask: Option<Vec<usize>>,
}

impl InverseModel {
    pub fn build(
        cfg: &PipelineConfig,
        geo: &Geometry,
        timings: &mut Timings,
    ) -> Result<Self, CliError> {
        let mesh = geo.inverse_mesh.clone();
        let sigma0 = cfg.phantom.reference;
        let reference = ConductivityField::homogeneous(mesh.element_count(), sigma0)?;
        let s = timings.time("sensitivity", || {
            sensitivity_matrix(
                &mesh,
                &geo.inverse_layout,
                &reference,
                cfg.electrodes.current_ma,
            )
        })?;
        let d = timings.time("difference_operators", || build_difference_operators(&mesh));
        let grid = timings.time("raster_lookup", || RasterGrid::new(&mesh, cfg.mesh.raster))?;
        let mask = cfg.solver.mask_radius.map(|r| {
            (0..mesh.element_count())
                .filter(|&k| {
                    let c = mesh.centroids()[k];
                    c[0].hypot(c[1]) <= r
                })
                .collect()
        });
        Ok(Self {
            boundary: mesh.boundary_elements(),
            mesh,
            sigma0,
            s,
            d,
            grid,
            mask,
        })
    }

    pub fn solver_config(&self, cfg: &PipelineConfig) -> SolverConfig<f64> {
        cfg.solver_config(self.mask.clone())
    }

    /// Factors the σ-update system; `None` for the direct solver.
    pub fn system(
        &self,
        kind: SolverKind,
        rho: f64,
    ) -> Result<Option<AdmmSystem<'_, f64>>, CliError> {
        match kind.regularizer() {
            Some(_) => Ok(Some(AdmmSystem::new(&self.s, &self.d, rho)?)),
            None => Ok(None),
        }
    }

    /// One reconstruction of `data`; `system` must come from [`Self::system`]
    /// with the same kind and `config.rho`.
    pub fn solve(
        &self,
        system: Option<&AdmmSystem<'_, f64>>,
        kind: SolverKind,
        config: &SolverConfig<f64>,
        data: &[f64],
    ) -> Result<ReconResult<f64>, CliError> {
        match (kind.regularizer(), system) {
            (Some(reg), Some(sys)) => Ok(sys.reconstruct(data, config, reg, &self.boundary)?),
            (None, _) => {
                let start = Instant::now();
                let field = reconstruct_tikhonov(&self.s, data, config.lambda)?;
                Ok(eit_core::inverse::direct_result(
                    &self.s,
                    data,
                    field,
                    start.elapsed(),
                ))
            }
            (Some(_), None) => Err(CliError::Config(
                "iterative solver needs a factored system".into(),
            )),
        }
    }

    /// `σ₀ + δσ` per element.
    pub fn conductivity(&self, delta: &[f64]) -> Vec<f64> {
        delta.iter().map(|d| self.sigma0 + d).collect()
    }

    pub fn render(&self, sigma: &[f64]) -> Result<Image<f64>, CliError> {
        Ok(self.grid.render(sigma)?)
    }

    pub fn truth_image(&self, spec: &PhantomSpec<f64>) -> Result<Image<f64>, CliError> {
        truth_image(&self.grid, spec)
    }

    /// Dice overlap per inclusion between `image > threshold` and the true
    /// inclusion, each restricted to the half-plane `x·sgn(x_center) > 0` so a
    /// symmetric pair is scored lung by lung.
    pub fn dice(&self, image: &Image<f64>, spec: &PhantomSpec<f64>, threshold: f64) -> Vec<f64> {
        let n = self.grid.resolution();
        spec.inclusions
            .iter()
            .map(|inc| {
                let side = inc.center[0].signum();
                let (mut both, mut truth, mut recon) = (0usize, 0usize, 0usize);
                for row in 0..n {
                    for col in 0..n {
                        let v = image.get(row, col);
                        let p = self.grid.pixel_center(row, col);
                        if v.is_nan() || (side != 0.0 && p[0] * side <= 0.0) {
                            continue;
                        }
                        let t = inc.contains(p);
                        let r = v > threshold;
                        truth += usize::from(t);
                        recon += usize::from(r);
                        both += usize::from(t && r);
                    }
                }
                if truth + recon == 0 {
                    1.0
                } else {
                    2.0 * both as f64 / (truth + recon) as f64
                }
            })
            .collect()
    }
}

/// The phantom sampled at pixel centers inside the mesh; NaN elsewhere.
pub fn truth_image(
    grid: &RasterGrid<f64>,
    spec: &PhantomSpec<f64>,
) -> Result<Image<f64>, CliError> {
    let n = grid.resolution();
    let mut px = vec![f64::NAN; n * n];
    for row in 0..n {
        for col in 0..n {
            if grid.element_at(row, col).is_some() {
                px[row * n + col] = spec.value_at(grid.pixel_center(row, col));
            }
        }
    }
    Ok(Image::new(n, n, px)?)
}

/// Final-iterate quality of one reconstruction.
pub fn score(
    model: &InverseModel,
    result: &ReconResult<f64>,
    truth: &Image<f64>,
) -> Result<(f64, f64), CliError> {
    let img = model.render(&model.conductivity(&result.final_field))?;
    Ok((relative_error_image(&img, truth)?, psnr(&img, truth)?))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepCell {
    pub cell: usize,
    pub ratio: f64,
    pub lambda: f64,
    pub rho: f64,
    pub delta: f64,
    pub re: Option<f64>,
    pub psnr: Option<f64>,
    pub iterations: Option<usize>,
    pub termination: Option<&'static str>,
    pub error: Option<String>,
}

/// One reconstruction per `(ratio, delta)` pair, δ varying fastest. Cells run
/// concurrently; the output is in cell order and a failing cell is recorded
/// rather than aborting the sweep.
pub fn sweep(
    cfg: &PipelineConfig,
    model: &InverseModel,
    data: &[f64],
    truth: &Image<f64>,
) -> Result<Vec<SweepCell>, CliError> {
    if cfg.sweep.ratios.is_empty() || cfg.sweep.deltas.is_empty() {
        return Err(CliError::Config("sweep: grid is empty".into()));
    }
    let rho = cfg.solver.rho;
    let kind = cfg.solver.kind;
    let system = model.system(kind, rho)?;
    let base = model.solver_config(cfg);
    let grid: Vec<(f64, f64)> = cfg
        .sweep
        .ratios
        .iter()
        .flat_map(|&r| cfg.sweep.deltas.iter().map(move |&d| (r, d)))
        .collect();
    Ok(grid
        .into_par_iter()
        .enumerate()
        .map(|(cell, (ratio, delta))| {
            let config = SolverConfig {
                lambda: ratio * rho,
                delta,
                ..base.clone()
            };
            let mut out = SweepCell {
                cell,
                ratio,
                lambda: config.lambda,
                rho,
                delta,
                re: None,
                psnr: None,
                iterations: None,
                termination: None,
                error: None,
            };
            let run = model
                .solve(system.as_ref(), kind, &config, data)
                .and_then(|r| Ok((score(model, &r, truth)?, r)));
            match run {
                Ok(((re, p), r)) => {
                    out.re = Some(re);
                    out.psnr = Some(p);
                    out.iterations = Some(r.iterations());
                    out.termination = Some(r.termination.as_str());
                }
                Err(e) => out.error = Some(e.to_string()),
            }
            out
        })
        .collect())
}
