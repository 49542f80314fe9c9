//! Parametric conductivity phantoms: a background with elliptical inclusions.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::forward::ConductivityField;
use crate::mesh::{Point, TriMesh};
use crate::scalar::Real;

pub const LUNG_BACKGROUND: f64 = 1.0;
pub const LUNG_INCLUSION: f64 = 1.1;

/// Ellipse given by its center and two semi-axis vectors. A point `p` lies
/// inside when `‖M⁻¹(p − c)‖ ≤ 1` with `M = [axis_a axis_b]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct Inclusion<T> {
    pub center: Point<T>,
    pub axis_a: Point<T>,
    pub axis_b: Point<T>,
    pub value: T,
}

impl<T: Real> Inclusion<T> {
    fn determinant(&self) -> T {
        self.axis_a[0] * self.axis_b[1] - self.axis_b[0] * self.axis_a[1]
    }

    pub fn contains(&self, p: Point<T>) -> bool {
        let det = self.determinant();
        let d = [p[0] - self.center[0], p[1] - self.center[1]];
        // Cramer's rule for M·(s, t) = d
        let s = (d[0] * self.axis_b[1] - self.axis_b[0] * d[1]) / det;
        let t = (self.axis_a[0] * d[1] - d[0] * self.axis_a[1]) / det;
        s * s + t * t <= T::one()
    }

    /// Mirror image under `x → −x`.
    pub fn mirrored(&self) -> Self {
        Self {
            center: [-self.center[0], self.center[1]],
            axis_a: [-self.axis_a[0], self.axis_a[1]],
            axis_b: [-self.axis_b[0], self.axis_b[1]],
            value: self.value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct PhantomSpec<T> {
    pub background: T,
    #[serde(default = "Vec::new")]
    pub inclusions: Vec<Inclusion<T>>,
}

impl<T: Real> PhantomSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.background > T::zero()) || !self.background.is_finite() {
            return Err(invalid(
                "background",
                format!("must be positive, got {}", self.background),
            ));
        }
        for (i, inc) in self.inclusions.iter().enumerate() {
            if !(inc.value > T::zero()) || !inc.value.is_finite() {
                return Err(invalid(
                    "inclusion value",
                    format!("inclusion {i} has non-positive value {}", inc.value),
                ));
            }
            let scale = (inc.axis_a[0].hypot(inc.axis_a[1])) * (inc.axis_b[0].hypot(inc.axis_b[1]));
            if !(inc.determinant().abs() > T::epsilon() * scale) {
                return Err(invalid(
                    "inclusion axes",
                    format!("inclusion {i} has linearly dependent semi-axes"),
                ));
            }
        }
        Ok(())
    }

    /// Conductivity at `p`; the first inclusion containing it wins.
    pub fn value_at(&self, p: Point<T>) -> T {
        self.inclusions
            .iter()
            .find(|inc| inc.contains(p))
            .map_or(self.background, |inc| inc.value)
    }

    /// Index of the first inclusion containing `p`.
    pub fn inclusion_at(&self, p: Point<T>) -> Option<usize> {
        self.inclusions.iter().position(|inc| inc.contains(p))
    }
}

/// The two-ellipse lung model number `k` (1 through 10); the ellipses grow
/// with `k`.
pub fn lung_model<T: Real>(k: u32) -> Result<PhantomSpec<T>> {
    if !(1..=10).contains(&k) {
        return Err(invalid(
            "lung model",
            format!("k must be in 1..=10, got {k}"),
        ));
    }
    let k = f64::from(k);
    let c = 0.012 + 0.001 * k;
    let long = 0.024 + 0.002 * k;
    let short = 0.006 + 0.0005 * k;
    let lit = |x: f64| T::lit(x);
    let left = Inclusion {
        center: [lit(0.04), lit(-0.01)],
        axis_a: [lit(c), lit(long)],
        axis_b: [lit(-c), lit(short)],
        value: lit(LUNG_INCLUSION),
    };
    let right = Inclusion {
        center: [lit(-0.04), lit(-0.01)],
        axis_a: [lit(-c), lit(long)],
        axis_b: [lit(c), lit(short)],
        value: lit(LUNG_INCLUSION),
    };
    Ok(PhantomSpec {
        background: lit(LUNG_BACKGROUND),
        inclusions: vec![left, right],
    })
}

/// Element conductivities by centroid membership.
pub fn assign_conductivity<T: Real>(
    mesh: &TriMesh<T>,
    spec: &PhantomSpec<T>,
) -> Result<ConductivityField<T>> {
    spec.validate()?;
    ConductivityField::new(mesh.centroids().iter().map(|&c| spec.value_at(c)).collect())
}

/// Per-element inclusion index (`None` for background).
pub fn inclusion_labels<T: Real>(mesh: &TriMesh<T>, spec: &PhantomSpec<T>) -> Vec<Option<usize>> {
    mesh.centroids()
        .iter()
        .map(|&c| spec.inclusion_at(c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_disk_mesh;

    #[test]
    fn model_seven_axes() {
        let spec: PhantomSpec<f64> = lung_model(7).unwrap();
        let l = &spec.inclusions[0];
        assert!((l.axis_a[0] - 0.019).abs() < 1e-15);
        assert!((l.axis_a[1] - 0.038).abs() < 1e-15);
        assert!((l.axis_b[0] + 0.019).abs() < 1e-15);
        assert!((l.axis_b[1] - 0.0095).abs() < 1e-15);
        assert_eq!(spec.background, 1.0);
        assert!(spec.inclusions.iter().all(|i| i.value == 1.1));
        assert_eq!(spec.inclusions[1], l.mirrored());
    }

    #[test]
    fn model_one_axis() {
        let spec: PhantomSpec<f64> = lung_model(1).unwrap();
        assert!((spec.inclusions[0].axis_a[0] - 0.013).abs() < 1e-15);
        assert!((spec.inclusions[0].axis_a[1] - 0.026).abs() < 1e-15);
    }

    #[test]
    fn model_index_bounds() {
        assert!(lung_model::<f64>(0).is_err());
        assert!(lung_model::<f64>(11).is_err());
    }

    #[test]
    fn empty_and_outside_inclusions_give_background() {
        let mesh = generate_disk_mesh(0.1, 256).unwrap();
        let empty = PhantomSpec {
            background: 2.0,
            inclusions: vec![],
        };
        assert!(assign_conductivity(&mesh, &empty)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 2.0));
        let outside = PhantomSpec {
            background: 2.0,
            inclusions: vec![Inclusion {
                center: [0.5, 0.5],
                axis_a: [0.05, 0.0],
                axis_b: [0.0, 0.02],
                value: 3.0,
            }],
        };
        assert!(assign_conductivity(&mesh, &outside)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 2.0));
    }

    #[test]
    fn rejects_invalid_specs() {
        let mut spec: PhantomSpec<f64> = lung_model(3).unwrap();
        spec.inclusions[0].axis_b = [
            2.0 * spec.inclusions[0].axis_a[0],
            2.0 * spec.inclusions[0].axis_a[1],
        ];
        assert!(spec.validate().is_err());
        let mut spec: PhantomSpec<f64> = lung_model(3).unwrap();
        spec.background = 0.0;
        assert!(spec.validate().is_err());
        let mut spec: PhantomSpec<f64> = lung_model(3).unwrap();
        spec.inclusions[1].value = -1.0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn first_inclusion_wins_on_overlap() {
        let inc = |value| Inclusion {
            center: [0.0, 0.0],
            axis_a: [0.03, 0.0],
            axis_b: [0.0, 0.03],
            value,
        };
        let spec = PhantomSpec {
            background: 1.0,
            inclusions: vec![inc(1.5), inc(2.5)],
        };
        assert_eq!(spec.value_at([0.0, 0.0]), 1.5);
    }
}
