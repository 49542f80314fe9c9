//! Linearized difference-imaging reconstruction.
//!
//! The main solver minimizes
//!
//! ```text
//! ½‖S δσ − δV‖² + λ‖p · D δσ‖₁,     p = (ζ; ζ),  ζ = 1/(|D δσ|² + δ)
//! ```
//!
//! by ADMM on the splitting `z = D δσ`. Each iteration performs, in order,
//!
//! 1. the σ-update `((1/ρ)SᵀS + DᵀD) δσ = (1/ρ)SᵀδV + Dᵀz − Dᵀy/ρ`,
//!    followed by the optional mask,
//! 2. the z-update, an element-wise soft threshold at `λp/ρ`,
//! 3. the weight update `p ← (ζ(δσ); ζ(δσ))`,
//! 4. the dual ascent `y ← y + ρ(D δσ − z)`,
//!
//! and stops once `‖δσ_{n+1} − δσ_n‖ < tol` or after `M` iterations. The
//! σ-update matrix does not change between iterations, so it is factored
//! once per `(S, D, ρ)`.
//!
//! The same loop with `p ≡ 1` gives first-order (anisotropic) TV, and with a
//! group shrinkage of the paired `(x, y)` components gives isotropic TV.
//! Tikhonov is a direct solve.

use std::time::{Duration, Instant};

use crate::error::{check_len, invalid, EitError, Result};
use crate::forward::SensitivityMatrix;
use crate::linalg::{DenseCholesky, DenseMatrix};
use crate::mesh::DifferenceOperators;
use crate::scalar::{distance, norm2, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig<T> {
    pub lambda: T,
    pub rho: T,
    /// Floor in the edge weight `1/(|Dδσ|² + delta)`.
    pub delta: T,
    pub max_iters: usize,
    pub tol: T,
    /// Elements allowed to change; everything else is held at zero.
    pub mask: Option<Vec<usize>>,
    pub lambda_b: T,
    pub enable_preprocess: bool,
}

impl<T: Real> SolverConfig<T> {
    /// Parameters of the 2D lung simulations (λ = 5e-13, ρ = 1e-10, δ = 0.01,
    /// M = 20, tol = 1e-5); no mask and no boundary preprocessing.
    pub fn lung_2d() -> Self {
        Self {
            lambda: T::lit(5e-13),
            rho: T::lit(1e-10),
            delta: T::lit(0.01),
            max_iters: 20,
            tol: T::lit(1e-5),
            mask: None,
            lambda_b: T::lit(1e-7),
            enable_preprocess: false,
        }
    }

    pub fn validate(&self, elements: usize) -> Result<()> {
        let positive = |name, v: T| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(name, format!("must be positive, got {v}")))
            }
        };
        if !(self.lambda >= T::zero()) || !self.lambda.is_finite() {
            return Err(invalid(
                "lambda",
                format!("must be non-negative, got {}", self.lambda),
            ));
        }
        positive("rho", self.rho)?;
        positive("delta", self.delta)?;
        positive("tol", self.tol)?;
        if self.enable_preprocess {
            positive("lambda_b", self.lambda_b)?;
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters", "must be at least 1"));
        }
        if let Some(mask) = &self.mask {
            if let Some(&bad) = mask.iter().find(|&&k| k >= elements) {
                return Err(invalid("mask", format!("element {bad} out of range")));
            }
        }
        Ok(())
    }
}

/// Iterate tuple of the ADMM loop.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmmState<T> {
    pub delta_sigma: Vec<T>,
    pub z: Vec<T>,
    pub p: Vec<T>,
    pub y: Vec<T>,
    pub iteration: usize,
}

impl<T: Real> AdmmState<T> {
    /// `δσ = 0, z = 0, y = 0, p = 1`.
    pub fn initial(elements: usize) -> Self {
        Self {
            delta_sigma: vec![T::zero(); elements],
            z: vec![T::zero(); 2 * elements],
            p: vec![T::one(); 2 * elements],
            y: vec![T::zero(); 2 * elements],
            iteration: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Tolerance,
    MaxIterations,
    /// Non-iterative solve.
    Direct,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Tolerance => "tol",
            Self::MaxIterations => "max_iters",
            Self::Direct => "direct",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationDiagnostics<T> {
    pub iteration: usize,
    /// `‖S δσ − δV‖` against the (possibly preprocessed) data.
    pub data_residual: T,
    /// `‖δσ_{n+1} − δσ_n‖`
    pub step_norm: T,
    pub wall_time: Duration,
}

#[derive(Clone, Debug)]
pub struct ReconResult<T> {
    pub history: Vec<Vec<T>>,
    pub final_field: Vec<T>,
    pub diagnostics: Vec<IterationDiagnostics<T>>,
    pub termination: Termination,
    pub final_state: Option<AdmmState<T>>,
    /// Diagonal shift added to the σ-update matrix when it failed to factor.
    pub diagonal_floor: Option<T>,
}

impl<T: Real> ReconResult<T> {
    pub fn iterations(&self) -> usize {
        self.diagnostics.len()
    }

    pub fn mean_iteration_time(&self) -> Duration {
        if self.diagnostics.is_empty() {
            return Duration::ZERO;
        }
        self.diagnostics
            .iter()
            .map(|d| d.wall_time)
            .sum::<Duration>()
            / self.diagnostics.len() as u32
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regularizer {
    /// Nonlinear weighted anisotropic TV.
    Nwatv,
    /// Anisotropic TV with unit weights.
    FirstOrderTv,
    /// Isotropic TV via group shrinkage.
    IsotropicTv,
}

/// `h_g(x) = x − g·sgn(x)` for `|x| > g`, else `0`.
#[inline]
pub fn soft_threshold<T: Real>(x: T, g: T) -> T {
    debug_assert!(g >= T::zero());
    if x.abs() > g {
        x - g * x.signum()
    } else {
        T::zero()
    }
}

/// `ζ_k = 1/(|(Dδσ)_k|² + delta)` duplicated into the x- and y-blocks.
pub fn nwatv_weights<T: Real>(delta_sigma: &[T], d: &DifferenceOperators<T>, delta: T) -> Vec<T> {
    weights_from_gradient(&d.apply(delta_sigma), delta)
}

fn weights_from_gradient<T: Real>(g: &[T], delta: T) -> Vec<T> {
    let n = g.len() / 2;
    let zeta: Vec<T> = (0..n)
        .map(|k| (g[k] * g[k] + g[n + k] * g[n + k] + delta).recip())
        .collect();
    zeta.iter().chain(zeta.iter()).copied().collect()
}

/// Element-wise `z[k] = h_{λp[k]/ρ}(w[k])`.
pub fn z_update<T: Real>(w: &[T], p: &[T], lambda: T, rho: T) -> Vec<T> {
    debug_assert_eq!(w.len(), p.len());
    let ratio = lambda / rho;
    w.iter()
        .zip(p)
        .map(|(&wk, &pk)| soft_threshold(wk, ratio * pk))
        .collect()
}

/// Group shrinkage on `(w[k], w[N+k])`: scales each pair by
/// `max(0, 1 − (λ/ρ)/|w_k|)`.
pub fn group_shrink<T: Real>(w: &[T], lambda: T, rho: T) -> Vec<T> {
    let n = w.len() / 2;
    let g = lambda / rho;
    let mut z = vec![T::zero(); w.len()];
    for k in 0..n {
        let norm = w[k].hypot(w[n + k]);
        if norm > g {
            let s = T::one() - g / norm;
            z[k] = s * w[k];
            z[n + k] = s * w[n + k];
        }
    }
    z
}

/// `y + ρ(Dδσ − z)`
pub fn dual_update<T: Real>(
    y: &[T],
    d: &DifferenceOperators<T>,
    delta_sigma: &[T],
    z: &[T],
    rho: T,
) -> Vec<T> {
    dual_step(y, &d.apply(delta_sigma), z, rho)
}

fn dual_step<T: Real>(y: &[T], d_sigma: &[T], z: &[T], rho: T) -> Vec<T> {
    y.iter()
        .zip(d_sigma)
        .zip(z)
        .map(|((&yk, &gk), &zk)| yk + rho * (gk - zk))
        .collect()
}

/// Zeroes every entry outside the element subset `mask`.
pub fn apply_mask<T: Real>(delta_sigma: &[T], mask: &[usize]) -> Vec<T> {
    let mut out = vec![T::zero(); delta_sigma.len()];
    for &k in mask {
        out[k] = delta_sigma[k];
    }
    out
}

fn mask_in_place<T: Real>(x: &mut [T], keep: &[bool]) {
    for (v, &k) in x.iter_mut().zip(keep) {
        if !k {
            *v = T::zero();
        }
    }
}

/// Removes the part of `δV` explained by boundary-element columns:
/// `δV − S_b (S_bᵀS_b + λ_b I)⁻¹ S_bᵀ δV`.
pub fn preprocess_boundary<T: Real>(
    delta_v: &[T],
    s: &SensitivityMatrix<T>,
    boundary_elements: &[usize],
    lambda_b: T,
) -> Result<Vec<T>> {
    check_len("preprocess: data", s.rows(), delta_v.len())?;
    if !(lambda_b > T::zero()) {
        return Err(invalid(
            "lambda_b",
            format!("must be positive, got {lambda_b}"),
        ));
    }
    if boundary_elements.is_empty() {
        return Err(invalid("boundary_elements", "must be nonempty"));
    }
    if let Some(&bad) = boundary_elements.iter().find(|&&k| k >= s.cols()) {
        return Err(invalid(
            "boundary_elements",
            format!("element {bad} out of range"),
        ));
    }
    let sb = s.matrix().select_columns(boundary_elements);
    let mut normal = sb.gram();
    normal.add_diagonal(lambda_b);
    let coef = DenseCholesky::factor(&normal)?.solve(&sb.t_matvec(delta_v));
    let fitted = sb.matvec(&coef);
    Ok(delta_v.iter().zip(&fitted).map(|(&v, &f)| v - f).collect())
}

/// `(SᵀS + λI)⁻¹ Sᵀ δV`, evaluated through the smaller of the two equivalent
/// normal systems.
pub fn reconstruct_tikhonov<T: Real>(
    s: &SensitivityMatrix<T>,
    delta_v: &[T],
    lambda: T,
) -> Result<Vec<T>> {
    check_len("tikhonov: data", s.rows(), delta_v.len())?;
    if !(lambda > T::zero()) || !lambda.is_finite() {
        return Err(invalid("lambda", format!("must be positive, got {lambda}")));
    }
    let a = s.matrix();
    if a.rows() < a.cols() {
        // Sᵀ(SSᵀ + λI)⁻¹δV
        let mut outer = a.transpose().gram();
        outer.add_diagonal(lambda);
        let coef = DenseCholesky::factor(&outer)?.solve(delta_v);
        Ok(a.t_matvec(&coef))
    } else {
        let mut normal = a.gram();
        normal.add_diagonal(lambda);
        Ok(DenseCholesky::factor(&normal)?.solve(&a.t_matvec(delta_v)))
    }
}

fn sigma_tolerance<T: Real>() -> T {
    T::lit(1e-8).max(T::epsilon() * T::lit(1e3))
}

/// Factored σ-update system `(1/ρ)SᵀS + DᵀD` shared by every reconstruction
/// with the same `(S, D, ρ)`.
#[derive(Clone, Debug)]
pub struct AdmmSystem<'a, T> {
    s: &'a SensitivityMatrix<T>,
    d: &'a DifferenceOperators<T>,
    rho: T,
    normal: DenseMatrix<T>,
    factor: DenseCholesky<T>,
    floor: Option<T>,
}

impl<'a, T: Real> AdmmSystem<'a, T> {
    pub fn new(s: &'a SensitivityMatrix<T>, d: &'a DifferenceOperators<T>, rho: T) -> Result<Self> {
        check_len("admm: difference operator columns", s.cols(), d.elements())?;
        if !(rho > T::zero()) || !rho.is_finite() {
            return Err(invalid("rho", format!("must be positive, got {rho}")));
        }
        let mut normal = s.matrix().gram();
        normal.scale(rho.recip());
        d.stacked().add_gram_to(&mut normal, T::one());
        let (factor, floor) = match DenseCholesky::factor(&normal) {
            Ok(f) => (f, None),
            Err(EitError::NotPositiveDefinite { .. }) => {
                let n = T::from_usize_lossy(normal.rows());
                let shift = T::lit(1e-12) * normal.trace() / n;
                normal.add_diagonal(shift);
                (DenseCholesky::factor(&normal)?, Some(shift))
            }
            Err(e) => return Err(e),
        };
        Ok(Self {
            s,
            d,
            rho,
            normal,
            factor,
            floor,
        })
    }

    pub fn rho(&self) -> T {
        self.rho
    }

    pub fn diagonal_floor(&self) -> Option<T> {
        self.floor
    }

    /// Solves the σ-update system for a given right-hand side, refining until
    /// the relative residual is below 1e-8.
    pub fn solve(&self, rhs: &[T]) -> Result<Vec<T>> {
        let b_norm = norm2(rhs);
        let mut x = self.factor.solve(rhs);
        if b_norm == T::zero() {
            return Ok(x);
        }
        let tol = sigma_tolerance::<T>();
        let mut rel = T::infinity();
        for _ in 0..4 {
            let ax = self.normal.matvec(&x);
            let r: Vec<T> = rhs.iter().zip(&ax).map(|(&b, &a)| b - a).collect();
            rel = norm2(&r) / b_norm;
            if rel <= tol {
                return Ok(x);
            }
            let dx = self.factor.solve(&r);
            x.iter_mut().zip(&dx).for_each(|(a, &b)| *a += b);
        }
        let (lo, hi) = self.factor.diagonal_range();
        Err(EitError::SigmaUpdateResidual {
            residual: rel.to_f64_lossy(),
            min_diag: (lo * lo).to_f64_lossy(),
            max_diag: (hi * hi).to_f64_lossy(),
        })
    }

    /// `(1/ρ)SᵀδV + Dᵀz − Dᵀy/ρ`
    pub fn rhs(&self, data_term: &[T], z: &[T], y: &[T]) -> Vec<T> {
        let inv_rho = self.rho.recip();
        let w: Vec<T> = z
            .iter()
            .zip(y)
            .map(|(&zk, &yk)| zk - yk * inv_rho)
            .collect();
        let dt = self.d.apply_transpose(&w);
        data_term.iter().zip(&dt).map(|(&a, &b)| a + b).collect()
    }

    /// Runs the ADMM loop for one data frame. `config.rho` must equal the
    /// `ρ` the system was factored with.
    pub fn reconstruct(
        &self,
        delta_v: &[T],
        config: &SolverConfig<T>,
        regularizer: Regularizer,
        boundary_elements: &[usize],
    ) -> Result<ReconResult<T>> {
        let n = self.s.cols();
        check_len("admm: data", self.s.rows(), delta_v.len())?;
        config.validate(n)?;
        if config.rho != self.rho {
            return Err(invalid(
                "rho",
                "config rho differs from the factored system",
            ));
        }
        let data: Vec<T> = if config.enable_preprocess {
            preprocess_boundary(delta_v, self.s, boundary_elements, config.lambda_b)?
        } else {
            delta_v.to_vec()
        };
        let keep: Option<Vec<bool>> = config.mask.as_ref().map(|m| {
            let mut keep = vec![false; n];
            m.iter().for_each(|&k| keep[k] = true);
            keep
        });

        let inv_rho = self.rho.recip();
        let data_term: Vec<T> = self
            .s
            .matrix()
            .t_matvec(&data)
            .into_iter()
            .map(|v| v * inv_rho)
            .collect();

        let mut state = AdmmState::initial(n);
        let mut history = Vec::with_capacity(config.max_iters);
        let mut diagnostics = Vec::with_capacity(config.max_iters);
        let mut termination = Termination::MaxIterations;

        for iteration in 1..=config.max_iters {
            let started = Instant::now();
            let wrap = |e| EitError::Iteration {
                iteration,
                source: Box::new(e),
            };

            let rhs = self.rhs(&data_term, &state.z, &state.y);
            let mut sigma = self.solve(&rhs).map_err(wrap)?;
            if let Some(keep) = &keep {
                mask_in_place(&mut sigma, keep);
            }

            let d_sigma = self.d.apply(&sigma);
            let w: Vec<T> = d_sigma
                .iter()
                .zip(&state.y)
                .map(|(&g, &yk)| g + yk * inv_rho)
                .collect();
            let z = match regularizer {
                Regularizer::Nwatv | Regularizer::FirstOrderTv => {
                    z_update(&w, &state.p, config.lambda, self.rho)
                }
                Regularizer::IsotropicTv => group_shrink(&w, config.lambda, self.rho),
            };
            if regularizer == Regularizer::Nwatv {
                state.p = weights_from_gradient(&d_sigma, config.delta);
            }
            state.y = dual_step(&state.y, &d_sigma, &z, self.rho);
            state.z = z;

            let step_norm = distance(&sigma, &state.delta_sigma);
            let predicted = self.s.apply(&sigma);
            let data_residual = distance(&predicted, &data);
            state.delta_sigma = sigma;
            state.iteration = iteration;
            history.push(state.delta_sigma.clone());
            diagnostics.push(IterationDiagnostics {
                iteration,
                data_residual,
                step_norm,
                wall_time: started.elapsed(),
            });
            if step_norm < config.tol {
                termination = Termination::Tolerance;
                break;
            }
        }

        Ok(ReconResult {
            final_field: state.delta_sigma.clone(),
            history,
            diagnostics,
            termination,
            final_state: Some(state),
            diagonal_floor: self.floor,
        })
    }
}

/// One σ-update from scratch: solves
/// `((1/ρ)SᵀS + DᵀD) δσ = (1/ρ)SᵀδV + Dᵀz − Dᵀy/ρ`.
pub fn sigma_update<T: Real>(
    s: &SensitivityMatrix<T>,
    delta_v: &[T],
    d: &DifferenceOperators<T>,
    z: &[T],
    y: &[T],
    rho: T,
) -> Result<Vec<T>> {
    check_len("sigma update: data", s.rows(), delta_v.len())?;
    check_len("sigma update: z", 2 * s.cols(), z.len())?;
    check_len("sigma update: y", 2 * s.cols(), y.len())?;
    let system = AdmmSystem::new(s, d, rho)?;
    let data_term: Vec<T> = s
        .matrix()
        .t_matvec(delta_v)
        .into_iter()
        .map(|v| v / rho)
        .collect();
    system.solve(&system.rhs(&data_term, z, y))
}

fn run<T: Real>(
    s: &SensitivityMatrix<T>,
    delta_v: &[T],
    d: &DifferenceOperators<T>,
    config: &SolverConfig<T>,
    regularizer: Regularizer,
    boundary_elements: &[usize],
) -> Result<ReconResult<T>> {
    config.validate(s.cols())?;
    AdmmSystem::new(s, d, config.rho)?.reconstruct(delta_v, config, regularizer, boundary_elements)
}

/// Weighted anisotropic TV reconstruction. `boundary_elements` is only used
/// when `config.enable_preprocess` is set.
pub fn reconstruct_nwatv<T: Real>(
    s: &SensitivityMatrix<T>,
    delta_v: &[T],
    d: &DifferenceOperators<T>,
    config: &SolverConfig<T>,
    boundary_elements: &[usize],
) -> Result<ReconResult<T>> {
    run(s, delta_v, d, config, Regularizer::Nwatv, boundary_elements)
}

/// The same ADMM loop with the weights frozen at one.
pub fn reconstruct_fotv<T: Real>(
    s: &SensitivityMatrix<T>,
    delta_v: &[T],
    d: &DifferenceOperators<T>,
    config: &SolverConfig<T>,
    boundary_elements: &[usize],
) -> Result<ReconResult<T>> {
    run(
        s,
        delta_v,
        d,
        config,
        Regularizer::FirstOrderTv,
        boundary_elements,
    )
}

/// Isotropic TV by ADMM with group shrinkage.
pub fn reconstruct_tv_isotropic<T: Real>(
    s: &SensitivityMatrix<T>,
    delta_v: &[T],
    d: &DifferenceOperators<T>,
    config: &SolverConfig<T>,
    boundary_elements: &[usize],
) -> Result<ReconResult<T>> {
    run(
        s,
        delta_v,
        d,
        config,
        Regularizer::IsotropicTv,
        boundary_elements,
    )
}

/// Wraps a direct solution as a single-iteration result.
pub fn direct_result<T: Real>(
    s: &SensitivityMatrix<T>,
    delta_v: &[T],
    field: Vec<T>,
    elapsed: Duration,
) -> ReconResult<T> {
    let data_residual = distance(&s.apply(&field), delta_v);
    ReconResult {
        history: vec![field.clone()],
        diagnostics: vec![IterationDiagnostics {
            iteration: 1,
            data_residual,
            step_norm: norm2(&field),
            wall_time: elapsed,
        }],
        final_field: field,
        termination: Termination::Direct,
        final_state: None,
        diagonal_floor: None,
    }
}
