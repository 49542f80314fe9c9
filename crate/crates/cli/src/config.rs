//! Run configuration, one TOML file per run.

use std::fs;
use std::path::{Path, PathBuf};

use eit_core::{io, lung_model, PhantomSpec, Regularizer, SolverConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSection {
    /// Disk radius in meters.
    pub radius: f64,
    /// Element target of the simulation mesh.
    pub forward_elements: usize,
    /// Element target of the reconstruction mesh.
    pub inverse_elements: usize,
    /// Raster side length in pixels.
    pub raster: usize,
}

impl Default for MeshSection {
    fn default() -> Self {
        Self {
            radius: 0.1,
            forward_elements: 4096,
            inverse_elements: 1024,
            raster: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElectrodeSection {
    pub count: usize,
    /// Injected current; voltages come out in mV.
    pub current_ma: f64,
}

impl Default for ElectrodeSection {
    fn default() -> Self {
        Self {
            count: 16,
            current_ma: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSection {
    /// Built-in lung model 1..=10.
    #[serde(default)]
    pub model: Option<u32>,
    /// Phantom TOML file, relative to the config file.
    pub file: Option<PathBuf>,
    /// Homogeneous σ₀ used for the reference frame and the linearization.
    pub reference: f64,
}

impl Default for PhantomSection {
    fn default() -> Self {
        Self {
            model: Some(7),
            file: None,
            reference: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    /// `inf` disables noise.
    pub snr_db: f64,
    pub seed: u64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            snr_db: 50.0,
            seed: 42,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Nwatv,
    Fotv,
    Tv,
    Tikhonov,
}

impl SolverKind {
    pub fn regularizer(self) -> Option<Regularizer> {
        match self {
            Self::Nwatv => Some(Regularizer::Nwatv),
            Self::Fotv => Some(Regularizer::FirstOrderTv),
            Self::Tv => Some(Regularizer::IsotropicTv),
            Self::Tikhonov => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Nwatv => "nwatv",
            Self::Fotv => "fotv",
            Self::Tv => "tv",
            Self::Tikhonov => "tikhonov",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub kind: SolverKind,
    pub lambda: f64,
    pub rho: f64,
    pub delta: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Only elements with centroid radius at most this value may change.
    pub mask_radius: Option<f64>,
    pub lambda_b: f64,
    pub preprocess: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        let p = SolverConfig::<f64>::lung_2d();
        Self {
            kind: SolverKind::Nwatv,
            lambda: p.lambda,
            rho: p.rho,
            delta: p.delta,
            max_iters: p.max_iters,
            tol: p.tol,
            mask_radius: None,
            lambda_b: p.lambda_b,
            preprocess: p.enable_preprocess,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

/// A straight sampling line in pixel coordinates `(col, row)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    pub start: [f64; 2],
    pub end: [f64; 2],
    pub samples: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// Defaults to the horizontal line through the lung centers.
    pub profiles: Vec<ProfileSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// λ/ρ values; λ = ratio·ρ with ρ from `[solver]`.
    pub ratios: Vec<f64>,
    pub deltas: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            // 5e-4·10^(2i/3) and 1e-2·10^((j−2)/2)
            ratios: vec![
                5e-4,
                2.320794416806389e-3,
                1.0772173450159416e-2,
                5e-2,
                0.23207944168063893,
                1.077217345015942,
                5.0,
            ],
            deltas: vec![1e-3, 3.1622776601683794e-3, 1e-2, 3.162277660168379e-2, 0.1],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mesh: MeshSection,
    pub electrodes: ElectrodeSection,
    pub phantom: PhantomSection,
    pub noise: NoiseSection,
    pub solver: SolverSection,
    pub output: OutputSection,
    pub evaluate: EvaluateSection,
    pub sweep: SweepSection,
}

fn field(name: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{name}: {reason}"))
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(field(name, format!("must be positive and finite, got {v}")))
    }
}

impl PipelineConfig {
    /// Parses and validates; relative paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(f) = &cfg.phantom.file {
            cfg.phantom.file = Some(base.join(f));
        }
        if cfg.output.dir.is_relative() {
            cfg.output.dir = base.join(&cfg.output.dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        positive("mesh.radius", self.mesh.radius)?;
        if self.mesh.inverse_elements < eit_core::mesh::MIN_TARGET_ELEMENTS {
            return Err(field("mesh.inverse_elements", "must be at least 64"));
        }
        if self.mesh.forward_elements < self.mesh.inverse_elements {
            return Err(field(
                "mesh.forward_elements",
                "must not be below mesh.inverse_elements",
            ));
        }
        if self.mesh.raster == 0 {
            return Err(field("mesh.raster", "must be at least 1"));
        }
        if self.electrodes.count < 4 {
            return Err(field("electrodes.count", "need at least 4 electrodes"));
        }
        positive("electrodes.current_ma", self.electrodes.current_ma)?;
        match (&self.phantom.model, &self.phantom.file) {
            (Some(_), Some(_)) => {
                return Err(field("phantom", "set either `model` or `file`, not both"))
            }
            (None, None) => return Err(field("phantom", "one of `model` or `file` is required")),
            (Some(k), None) if !(1..=10).contains(k) => {
                return Err(field(
                    "phantom.model",
                    format!("must be in 1..=10, got {k}"),
                ))
            }
            (None, Some(f)) if !f.is_file() => {
                return Err(field(
                    "phantom.file",
                    format!("{} does not exist", f.display()),
                ))
            }
            _ => {}
        }
        positive("phantom.reference", self.phantom.reference)?;
        if self.noise.snr_db.is_nan() {
            return Err(field("noise.snr_db", "must be a number or inf"));
        }
        let s = &self.solver;
        positive("solver.lambda", s.lambda)?;
        positive("solver.rho", s.rho)?;
        positive("solver.delta", s.delta)?;
        positive("solver.tol", s.tol)?;
        positive("solver.lambda_b", s.lambda_b)?;
        if s.max_iters == 0 {
            return Err(field("solver.max_iters", "must be at least 1"));
        }
        if let Some(r) = s.mask_radius {
            positive("solver.mask_radius", r)?;
        }
        for p in &self.evaluate.profiles {
            if p.samples < 2 {
                return Err(field(
                    "evaluate.profiles",
                    "each line needs at least 2 samples",
                ));
            }
        }
        for &r in &self.sweep.ratios {
            positive("sweep.ratios", r)?;
        }
        for &d in &self.sweep.deltas {
            positive("sweep.deltas", d)?;
        }
        Ok(())
    }

    pub fn phantom_spec(&self) -> Result<PhantomSpec<f64>, CliError> {
        match (&self.phantom.model, &self.phantom.file) {
            (Some(k), _) => Ok(lung_model(*k)?),
            (None, Some(f)) => {
                let text = fs::read_to_string(f).map_err(|e| CliError::input(f, e))?;
                io::phantom_from_toml(&text).map_err(|e| CliError::input(f, e))
            }
            (None, None) => Err(field("phantom", "one of `model` or `file` is required")),
        }
    }

    /// Solver parameters for the inverse mesh with `elements` elements.
    pub fn solver_config(&self, mask: Option<Vec<usize>>) -> SolverConfig<f64> {
        let s = &self.solver;
        SolverConfig {
            lambda: s.lambda,
            rho: s.rho,
            delta: s.delta,
            max_iters: s.max_iters,
            tol: s.tol,
            mask,
            lambda_b: s.lambda_b,
            enable_preprocess: s.preprocess,
        }
    }

    pub fn profiles(&self) -> Vec<ProfileSpec> {
        if !self.evaluate.profiles.is_empty() {
            return self.evaluate.profiles.clone();
        }
        // lung centers sit at y = -0.1·radius
        let n = self.mesh.raster as f64;
        let row = 0.55 * n - 0.5;
        vec![ProfileSpec {
            start: [0.0, row],
            end: [n - 1.0, row],
            samples: self.mesh.raster.max(2),
        }]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_file_matches_the_defaults() {
        let text = include_str!("../paper-2d.cfg");
        let cfg = PipelineConfig::from_toml(text, Path::new("/base")).unwrap();
        let mut expected = PipelineConfig::default();
        expected.output.dir = PathBuf::from("/base/out");
        assert_eq!(cfg, expected);
    }

    #[test]
    fn errors_name_the_field() {
        let err = PipelineConfig::from_toml("[solver]\nrho = -1.0\n", Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("solver.rho"), "{err}");
        let err =
            PipelineConfig::from_toml("[solver]\nkind = \"fer\"\n", Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("kind"), "{err}");
        let err = PipelineConfig::from_toml("[phantom]\nmodel = 11\n", Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("phantom.model"), "{err}");
        let err = PipelineConfig::from_toml("[phantom]\nfile = \"nope.toml\"\n", Path::new("."))
            .unwrap_err();
        assert!(err.to_string().contains("does not exist"), "{err}");
    }

    #[test]
    fn infinite_snr_parses() {
        let cfg = PipelineConfig::from_toml("[noise]\nsnr_db = inf\n", Path::new(".")).unwrap();
        assert!(cfg.noise.snr_db.is_infinite());
    }

    #[test]
    fn default_sweep_spans_four_decades() {
        let s = SweepSection::default();
        assert_eq!((s.ratios.len(), s.deltas.len()), (7, 5));
        assert!((s.ratios[6] / s.ratios[0] - 1e4).abs() < 1e-6);
        assert!((s.deltas[4] / s.deltas[0] - 1e2).abs() < 1e-9);
        for (i, r) in s.ratios.iter().enumerate() {
            assert!((r / (5e-4 * 10f64.powf(2.0 * i as f64 / 3.0)) - 1.0).abs() < 1e-14);
        }
        for (j, d) in s.deltas.iter().enumerate() {
            assert!((d / (0.01 * 10f64.powf((j as f64 - 2.0) / 2.0)) - 1.0).abs() < 1e-14);
        }
    }
}
