//! Reconstruction quality measures: relative error, PSNR and line profiles.
//!
//! All functions skip NaN (out-of-domain) entries, so the same code serves
//! raw element vectors and rasterized images.

use crate::error::{check_len, invalid, EitError, Result};
use crate::image::Image;
use crate::scalar::Real;

/// `‖σ_n − σ*‖₂ / ‖σ*‖₂` over positions where both are defined.
pub fn relative_error<T: Real>(sigma_n: &[T], sigma_star: &[T]) -> Result<T> {
    check_len("relative error", sigma_star.len(), sigma_n.len())?;
    let (num, den) = sigma_n
        .iter()
        .zip(sigma_star)
        .filter(|(a, b)| !a.is_nan() && !b.is_nan())
        .fold((T::zero(), T::zero()), |(num, den), (&a, &b)| {
            (num + (a - b) * (a - b), den + b * b)
        });
    if den == T::zero() {
        return Err(EitError::Undefined(
            "relative error against a zero reference",
        ));
    }
    Ok((num / den).sqrt())
}

/// Relative error between two images of equal shape.
pub fn relative_error_image<T: Real>(sigma_n: &Image<T>, sigma_star: &Image<T>) -> Result<T> {
    check_shape(sigma_n, sigma_star)?;
    relative_error(sigma_n.pixels(), sigma_star.pixels())
}

fn check_shape<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<()> {
    check_len("image width", b.width(), a.width())?;
    check_len("image height", b.height(), a.height())
}

/// `10·log10(max σ_n² / MSE)` over in-domain pixels, where MSE is the mean
/// squared difference. Identical images give `+∞`.
pub fn psnr<T: Real>(sigma_n: &Image<T>, sigma_star: &Image<T>) -> Result<T> {
    check_shape(sigma_n, sigma_star)?;
    let mut peak = T::zero();
    let mut sum = T::zero();
    let mut count = 0usize;
    for (&a, &b) in sigma_n.pixels().iter().zip(sigma_star.pixels()) {
        if a.is_nan() || b.is_nan() {
            continue;
        }
        peak = peak.max(a * a);
        sum += (a - b) * (a - b);
        count += 1;
    }
    if count == 0 {
        return Err(EitError::Undefined(
            "PSNR over an image with no in-domain pixels",
        ));
    }
    if sum == T::zero() {
        return Ok(T::infinity());
    }
    let mse = sum / T::from_usize_lossy(count);
    Ok(T::lit(10.0) * (peak / mse).log10())
}

/// Sampling line in fractional pixel coordinates `(col, row)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProfileLine<T> {
    pub start: [T; 2],
    pub end: [T; 2],
    pub samples: usize,
}

impl<T: Real> ProfileLine<T> {
    pub fn transposed(&self) -> Self {
        Self {
            start: [self.start[1], self.start[0]],
            end: [self.end[1], self.end[0]],
            samples: self.samples,
        }
    }
}

/// Nearest-pixel samples at equally spaced points from `start` to `end`
/// inclusive. A zero-length line yields the single start pixel.
pub fn profile<T: Real>(image: &Image<T>, line: &ProfileLine<T>) -> Result<Vec<T>> {
    let inside = |p: [T; 2]| {
        p[0] > -T::lit(0.5)
            && p[1] > -T::lit(0.5)
            && p[0] < T::from_usize_lossy(image.width()) - T::lit(0.5)
            && p[1] < T::from_usize_lossy(image.height()) - T::lit(0.5)
    };
    if !inside(line.start) || !inside(line.end) {
        return Err(invalid(
            "profile line",
            "endpoints must lie inside the image",
        ));
    }
    let pick = |p: [T; 2]| {
        let col = p[0].round().to_usize().unwrap_or(0).min(image.width() - 1);
        let row = p[1].round().to_usize().unwrap_or(0).min(image.height() - 1);
        image.get(row, col)
    };
    if line.start == line.end || line.samples <= 1 {
        return Ok(vec![pick(line.start)]);
    }
    let last = T::from_usize_lossy(line.samples - 1);
    Ok((0..line.samples)
        .map(|s| {
            let t = T::from_usize_lossy(s) / last;
            pick([
                line.start[0] + (line.end[0] - line.start[0]) * t,
                line.start[1] + (line.end[1] - line.start[1]) * t,
            ])
        })
        .collect())
}

/// Per-iteration quality table for one reconstruction.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport<T> {
    pub re_per_iter: Vec<T>,
    pub psnr_per_iter: Vec<T>,
    pub wall_times: Vec<f64>,
    pub profile_samples: Vec<Vec<T>>,
}

/// RE and PSNR for each image in `history` against `truth`.
pub fn evaluate_images<T: Real>(history: &[Image<T>], truth: &Image<T>) -> Result<EvalReport<T>> {
    let mut report = EvalReport {
        re_per_iter: Vec::with_capacity(history.len()),
        psnr_per_iter: Vec::with_capacity(history.len()),
        ..Default::default()
    };
    for img in history {
        report.re_per_iter.push(relative_error_image(img, truth)?);
        report.psnr_per_iter.push(psnr(img, truth)?);
    }
    Ok(report)
}
