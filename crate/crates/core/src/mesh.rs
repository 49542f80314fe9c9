//! Triangular meshes of the disk, electrode placement, element-wise
//! difference operators and rasterization.

use std::collections::HashMap;

use crate::error::{check_len, invalid, EitError, Result};
use crate::image::Image;
use crate::linalg::CsrMatrix;
use crate::scalar::Real;

pub type Point<T> = [T; 2];

/// Fewest elements `generate_disk_mesh` accepts.
pub const MIN_TARGET_ELEMENTS: usize = 64;

/// A neighbor counts as lying along an axis when its centroid displacement
/// along that axis exceeds this fraction of the centroid distance.
pub const DIRECTION_THRESHOLD: f64 = 0.2;

/// Unstructured triangulation with counter-clockwise elements.
#[derive(Clone, Debug)]
pub struct TriMesh<T> {
    nodes: Vec<Point<T>>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<(usize, usize)>,
    centroids: Vec<Point<T>>,
    areas: Vec<T>,
    neighbors: Vec<Vec<usize>>,
}

fn signed_area<T: Real>(a: Point<T>, b: Point<T>, c: Point<T>) -> T {
    ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])) / T::lit(2.0)
}

impl<T: Real> TriMesh<T> {
    /// Builds a mesh from raw nodes and triangles. Clockwise triangles are
    /// reoriented; degenerate triangles, non-manifold edges and boundaries
    /// that are not a single closed loop are rejected.
    pub fn from_parts(nodes: Vec<Point<T>>, mut triangles: Vec<[usize; 3]>) -> Result<Self> {
        if triangles.is_empty() {
            return Err(EitError::InvalidMesh("no triangles".into()));
        }
        let mut areas = Vec::with_capacity(triangles.len());
        let mut centroids = Vec::with_capacity(triangles.len());
        for (k, tri) in triangles.iter_mut().enumerate() {
            if tri.iter().any(|&v| v >= nodes.len()) {
                return Err(EitError::InvalidMesh(format!(
                    "triangle {k} references a missing node"
                )));
            }
            let [a, b, c] = tri.map(|v| nodes[v]);
            let mut area = signed_area(a, b, c);
            if area < T::zero() {
                tri.swap(1, 2);
                area = -area;
            }
            if !(area > T::zero()) {
                return Err(EitError::InvalidMesh(format!("triangle {k} is degenerate")));
            }
            areas.push(area);
            let three = T::lit(3.0);
            centroids.push([(a[0] + b[0] + c[0]) / three, (a[1] + b[1] + c[1]) / three]);
        }

        let mut edge_owners: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (k, tri) in triangles.iter().enumerate() {
            for e in 0..3 {
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                edge_owners.entry((a.min(b), a.max(b))).or_default().push(k);
            }
        }

        let mut neighbors = vec![Vec::new(); triangles.len()];
        let mut next_on_boundary: HashMap<usize, usize> = HashMap::new();
        for (k, tri) in triangles.iter().enumerate() {
            for e in 0..3 {
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                let owners = &edge_owners[&(a.min(b), a.max(b))];
                match owners.as_slice() {
                    [_] => {
                        if next_on_boundary.insert(a, b).is_some() {
                            return Err(EitError::InvalidMesh(format!(
                                "boundary node {a} starts two boundary edges"
                            )));
                        }
                    }
                    [p, q] => neighbors[k].push(if *p == k { *q } else { *p }),
                    _ => {
                        return Err(EitError::InvalidMesh(format!(
                            "edge ({a}, {b}) shared by more than two triangles"
                        )))
                    }
                }
            }
        }

        let start = *next_on_boundary
            .keys()
            .min()
            .ok_or_else(|| EitError::InvalidMesh("no boundary".into()))?;
        let mut boundary_edges = Vec::with_capacity(next_on_boundary.len());
        let mut cur = start;
        loop {
            let nxt = *next_on_boundary.get(&cur).ok_or_else(|| {
                EitError::InvalidMesh(format!("boundary loop broken at node {cur}"))
            })?;
            boundary_edges.push((cur, nxt));
            cur = nxt;
            if cur == start || boundary_edges.len() > next_on_boundary.len() {
                break;
            }
        }
        if cur != start || boundary_edges.len() != next_on_boundary.len() {
            return Err(EitError::InvalidMesh(
                "boundary is not a single closed loop".into(),
            ));
        }

        Ok(Self {
            nodes,
            triangles,
            boundary_edges,
            centroids,
            areas,
            neighbors,
        })
    }

    pub fn nodes(&self) -> &[Point<T>] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[(usize, usize)] {
        &self.boundary_edges
    }

    pub fn centroids(&self) -> &[Point<T>] {
        &self.centroids
    }

    pub fn areas(&self) -> &[T] {
        &self.areas
    }

    pub fn neighbors(&self, element: usize) -> &[usize] {
        &self.neighbors[element]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn element_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn total_area(&self) -> T {
        self.areas.iter().copied().sum()
    }

    /// Boundary nodes in loop order (counter-clockwise).
    pub fn boundary_nodes(&self) -> Vec<usize> {
        self.boundary_edges.iter().map(|&(a, _)| a).collect()
    }

    /// Elements with at least one edge on the boundary, ascending.
    pub fn boundary_elements(&self) -> Vec<usize> {
        (0..self.element_count())
            .filter(|&k| self.neighbors[k].len() < 3)
            .collect()
    }

    pub fn max_boundary_edge_length(&self) -> T {
        self.boundary_edges
            .iter()
            .map(|&(a, b)| self.edge_length(a, b))
            .fold(T::zero(), T::max)
    }

    pub fn edge_length(&self, a: usize, b: usize) -> T {
        let (p, q) = (self.nodes[a], self.nodes[b]);
        (p[0] - q[0]).hypot(p[1] - q[1])
    }

    /// Gradients of the three P1 basis functions on element `k` (constant
    /// per element).
    pub fn basis_gradients(&self, k: usize) -> [Point<T>; 3] {
        let [a, b, c] = self.triangles[k].map(|v| self.nodes[v]);
        let two_area = T::lit(2.0) * self.areas[k];
        [
            [(b[1] - c[1]) / two_area, (c[0] - b[0]) / two_area],
            [(c[1] - a[1]) / two_area, (a[0] - c[0]) / two_area],
            [(a[1] - b[1]) / two_area, (b[0] - a[0]) / two_area],
        ]
    }

    /// Gradient of the piecewise-linear nodal field `u` on element `k`.
    pub fn gradient(&self, k: usize, u: &[T]) -> Point<T> {
        let g = self.basis_gradients(k);
        let tri = self.triangles[k];
        let mut out = [T::zero(); 2];
        for (gi, &v) in g.iter().zip(&tri) {
            out[0] += gi[0] * u[v];
            out[1] += gi[1] * u[v];
        }
        out
    }

    /// Axis-aligned bounding box `(min, max)` of the nodes.
    pub fn bounding_box(&self) -> (Point<T>, Point<T>) {
        let mut lo = [T::infinity(); 2];
        let mut hi = [T::neg_infinity(); 2];
        for p in &self.nodes {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        (lo, hi)
    }

    /// Barycentric membership test with a small relative tolerance so that
    /// points on shared edges belong to both neighbors.
    pub fn contains(&self, k: usize, p: Point<T>) -> bool {
        let [a, b, c] = self.triangles[k].map(|v| self.nodes[v]);
        let area = self.areas[k];
        let eps = -T::lit(1e-10) * area;
        signed_area(p, b, c) >= eps && signed_area(a, p, c) >= eps && signed_area(a, b, p) >= eps
    }
}

/// Deterministic concentric-ring triangulation of the disk of `radius`
/// centered at the origin.
///
/// Ring `i` of `L` carries `6i` equally spaced nodes starting at angle zero,
/// which gives `6L²` triangles and `3L(L+1)+1` nodes. `L` is chosen so that
/// the element count is as close as possible to `target_elements`.
pub fn generate_disk_mesh<T: Real>(radius: T, target_elements: usize) -> Result<TriMesh<T>> {
    if !(radius > T::zero()) || !radius.is_finite() {
        return Err(invalid("radius", format!("must be positive, got {radius}")));
    }
    if target_elements < MIN_TARGET_ELEMENTS {
        return Err(invalid(
            "target_elements",
            format!("must be at least {MIN_TARGET_ELEMENTS}, got {target_elements}"),
        ));
    }
    let rings = ((target_elements as f64 / 6.0).sqrt().round() as usize).max(3);
    disk_mesh_with_rings(radius, rings)
}

/// Concentric-ring disk mesh with exactly `rings` rings.
pub fn disk_mesh_with_rings<T: Real>(radius: T, rings: usize) -> Result<TriMesh<T>> {
    if rings == 0 {
        return Err(invalid("rings", "must be at least 1"));
    }
    let ring_start = |i: usize| if i == 0 { 0 } else { 1 + 3 * i * (i - 1) };
    let mut nodes = vec![[T::zero(), T::zero()]];
    for i in 1..=rings {
        let count = 6 * i;
        for k in 0..count {
            let theta = T::TAU() * T::from_usize_lossy(k) / T::from_usize_lossy(count);
            let r = if i == rings {
                radius
            } else {
                radius * T::from_usize_lossy(i) / T::from_usize_lossy(rings)
            };
            nodes.push([r * theta.cos(), r * theta.sin()]);
        }
    }

    let mut triangles = Vec::with_capacity(6 * rings * rings);
    for k in 0..6 {
        triangles.push([0, 1 + k, 1 + (k + 1) % 6]);
    }
    for i in 2..=rings {
        let (m, n) = (6 * (i - 1), 6 * i);
        let inner = |a: usize| ring_start(i - 1) + a % m;
        let outer = |b: usize| ring_start(i) + b % n;
        let (mut a, mut b) = (0, 0);
        while a < m || b < n {
            // Advance whichever ring's next node comes first in angle.
            let take_outer = a == m || (b < n && (b + 1) * m <= (a + 1) * n);
            if take_outer {
                triangles.push([inner(a), outer(b), outer(b + 1)]);
                b += 1;
            } else {
                triangles.push([inner(a), outer(b), inner(a + 1)]);
                a += 1;
            }
        }
    }
    TriMesh::from_parts(nodes, triangles)
}

/// Point electrodes on boundary nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct ElectrodeLayout<T> {
    angles: Vec<T>,
    node_ids: Vec<usize>,
}

fn node_angle<T: Real>(p: Point<T>) -> T {
    let a = p[1].atan2(p[0]);
    if a < T::zero() {
        a + T::TAU()
    } else {
        a
    }
}

fn circular_distance<T: Real>(a: T, b: T) -> T {
    let d = (a - b).abs() % T::TAU();
    d.min(T::TAU() - d)
}

impl<T: Real> ElectrodeLayout<T> {
    /// Wraps explicit electrode nodes, e.g. from a mesh file.
    pub fn from_node_ids(mesh: &TriMesh<T>, node_ids: Vec<usize>) -> Result<Self> {
        if node_ids.len() < 4 {
            return Err(invalid(
                "electrodes",
                format!("need at least 4, got {}", node_ids.len()),
            ));
        }
        let boundary = mesh.boundary_nodes();
        for (i, id) in node_ids.iter().enumerate() {
            if !boundary.contains(id) {
                return Err(invalid(
                    "electrodes",
                    format!("node {id} is not on the boundary"),
                ));
            }
            if let Some(j) = node_ids[..i].iter().position(|x| x == id) {
                return Err(EitError::ElectrodeCollision {
                    first: j,
                    second: i,
                    node: *id,
                });
            }
        }
        let angles = node_ids
            .iter()
            .map(|&v| node_angle(mesh.nodes()[v]))
            .collect();
        Ok(Self { angles, node_ids })
    }

    pub fn count(&self) -> usize {
        self.node_ids.len()
    }

    /// Angles of the electrode nodes in `[0, 2π)`.
    pub fn angles(&self) -> &[T] {
        &self.angles
    }

    pub fn node_ids(&self) -> &[usize] {
        &self.node_ids
    }

    /// Node of electrode `i`, with indices taken cyclically.
    pub fn node(&self, i: usize) -> usize {
        self.node_ids[i % self.node_ids.len()]
    }
}

/// Places `count` electrodes at the boundary nodes nearest to the uniform
/// angles `2πi/count`.
pub fn place_electrodes<T: Real>(mesh: &TriMesh<T>, count: usize) -> Result<ElectrodeLayout<T>> {
    if count < 4 {
        return Err(invalid(
            "electrode count",
            format!("must be at least 4, got {count}"),
        ));
    }
    let angles: Vec<T> = (0..count)
        .map(|i| T::TAU() * T::from_usize_lossy(i) / T::from_usize_lossy(count))
        .collect();
    place_electrodes_at_angles(mesh, &angles)
}

/// Snaps each angle to its nearest boundary node.
pub fn place_electrodes_at_angles<T: Real>(
    mesh: &TriMesh<T>,
    angles: &[T],
) -> Result<ElectrodeLayout<T>> {
    let boundary = mesh.boundary_nodes();
    if angles.len() < 4 {
        return Err(invalid(
            "electrode count",
            format!("must be at least 4, got {}", angles.len()),
        ));
    }
    let boundary_angles: Vec<T> = boundary
        .iter()
        .map(|&v| node_angle(mesh.nodes()[v]))
        .collect();
    let mut node_ids: Vec<usize> = Vec::with_capacity(angles.len());
    for (i, &target) in angles.iter().enumerate() {
        let mut best = 0;
        for (b, &a) in boundary_angles.iter().enumerate() {
            if circular_distance(a, target) < circular_distance(boundary_angles[best], target) {
                best = b;
            }
        }
        let node = boundary[best];
        if let Some(j) = node_ids.iter().position(|&x| x == node) {
            return Err(EitError::ElectrodeCollision {
                first: j,
                second: i,
                node,
            });
        }
        node_ids.push(node);
    }
    ElectrodeLayout::from_node_ids(mesh, node_ids)
}

/// First-order difference operators along x and y on element values.
#[derive(Clone, Debug)]
pub struct DifferenceOperators<T> {
    dx: CsrMatrix<T>,
    dy: CsrMatrix<T>,
    d: CsrMatrix<T>,
}

impl<T: Real> DifferenceOperators<T> {
    pub fn dx(&self) -> &CsrMatrix<T> {
        &self.dx
    }

    pub fn dy(&self) -> &CsrMatrix<T> {
        &self.dy
    }

    /// The stacked `2N × N` operator `(Dx; Dy)`.
    pub fn stacked(&self) -> &CsrMatrix<T> {
        &self.d
    }

    pub fn elements(&self) -> usize {
        self.dx.cols()
    }

    /// `D x`, length `2N`.
    pub fn apply(&self, x: &[T]) -> Vec<T> {
        self.d.matvec(x)
    }

    /// `Dᵀ w` for `w` of length `2N`.
    pub fn apply_transpose(&self, w: &[T]) -> Vec<T> {
        self.d.t_matvec(w)
    }
}

/// Scaling of each difference row.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DifferenceWeighting {
    /// `(σ_l − σ_k)/Δx`, a consistent derivative estimate.
    #[default]
    InverseSpacing,
    /// Plain jumps `σ_l − σ_k`.
    Unit,
}

/// Per-element single-neighbor forward differences.
///
/// Row `k` of `Dx` is `(σ_l − σ_k)/Δx` for the edge neighbor `l` with the
/// largest centroid offset `Δx`, provided `Δx > 0.2·|Δ|`; otherwise the row is
/// zero. `Dy` likewise.
pub fn build_difference_operators<T: Real>(mesh: &TriMesh<T>) -> DifferenceOperators<T> {
    build_difference_operators_weighted(mesh, DifferenceWeighting::InverseSpacing)
}

/// Same neighbor selection as [`build_difference_operators`] with a choice
/// of row scaling.
pub fn build_difference_operators_weighted<T: Real>(
    mesh: &TriMesh<T>,
    weighting: DifferenceWeighting,
) -> DifferenceOperators<T> {
    let n = mesh.element_count();
    let threshold = T::lit(DIRECTION_THRESHOLD);
    let mut axes = [Vec::new(), Vec::new()];
    for k in 0..n {
        let ck = mesh.centroids()[k];
        for (axis, triplets) in axes.iter_mut().enumerate() {
            let mut best: Option<(usize, T)> = None;
            for &l in mesh.neighbors(k) {
                let cl = mesh.centroids()[l];
                let delta = [cl[0] - ck[0], cl[1] - ck[1]];
                let along = delta[axis];
                if along > threshold * delta[0].hypot(delta[1])
                    && best.is_none_or(|(_, b)| along > b)
                {
                    best = Some((l, along));
                }
            }
            if let Some((l, along)) = best {
                let w = match weighting {
                    DifferenceWeighting::InverseSpacing => along.recip(),
                    DifferenceWeighting::Unit => T::one(),
                };
                triplets.push((k, k, -w));
                triplets.push((k, l, w));
            }
        }
    }
    let [tx, ty] = axes;
    let dx = CsrMatrix::from_triplets(n, n, &tx);
    let dy = CsrMatrix::from_triplets(n, n, &ty);
    let d = dx.vstack(&dy);
    DifferenceOperators { dx, dy, d }
}

/// Uniform bucket grid over the mesh bounding box for point location.
#[derive(Clone, Debug)]
pub struct PointLocator<T> {
    origin: Point<T>,
    cell: T,
    cells: usize,
    buckets: Vec<Vec<usize>>,
}

impl<T: Real> PointLocator<T> {
    pub fn new(mesh: &TriMesh<T>) -> Self {
        let (lo, hi) = mesh.bounding_box();
        let cells = ((mesh.element_count() as f64).sqrt().ceil() as usize).max(1);
        let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]);
        let cell = extent / T::from_usize_lossy(cells) * T::lit(1.000_001);
        let mut buckets = vec![Vec::new(); cells * cells];
        let to_cell = |v: T, o: T| -> usize {
            (((v - o) / cell).floor().to_usize().unwrap_or(0)).min(cells - 1)
        };
        for (k, tri) in mesh.triangles().iter().enumerate() {
            let pts = tri.map(|v| mesh.nodes()[v]);
            let (x0, x1) = (
                pts.iter().map(|p| p[0]).fold(T::infinity(), T::min),
                pts.iter().map(|p| p[0]).fold(T::neg_infinity(), T::max),
            );
            let (y0, y1) = (
                pts.iter().map(|p| p[1]).fold(T::infinity(), T::min),
                pts.iter().map(|p| p[1]).fold(T::neg_infinity(), T::max),
            );
            for cy in to_cell(y0, lo[1])..=to_cell(y1, lo[1]) {
                for cx in to_cell(x0, lo[0])..=to_cell(x1, lo[0]) {
                    buckets[cy * cells + cx].push(k);
                }
            }
        }
        Self {
            origin: lo,
            cell,
            cells,
            buckets,
        }
    }

    /// Lowest-index element containing `p`, if any.
    pub fn locate(&self, mesh: &TriMesh<T>, p: Point<T>) -> Option<usize> {
        let rel = [
            (p[0] - self.origin[0]) / self.cell,
            (p[1] - self.origin[1]) / self.cell,
        ];
        if rel.iter().any(|&r| r < -T::lit(1e-9) || r.is_nan()) {
            return None;
        }
        let cx = rel[0].floor().to_usize()?.min(self.cells - 1);
        let cy = rel[1].floor().to_usize()?.min(self.cells - 1);
        if rel[0] > T::from_usize_lossy(self.cells) + T::one()
            || rel[1] > T::from_usize_lossy(self.cells) + T::one()
        {
            return None;
        }
        self.buckets[cy * self.cells + cx]
            .iter()
            .copied()
            .find(|&k| mesh.contains(k, p))
    }
}

/// Pixel → element lookup for a square raster over the mesh bounding box.
#[derive(Clone, Debug)]
pub struct RasterGrid<T> {
    resolution: usize,
    origin: Point<T>,
    pixel: T,
    element_of_pixel: Vec<Option<usize>>,
    elements: usize,
}

impl<T: Real> RasterGrid<T> {
    pub fn new(mesh: &TriMesh<T>, resolution: usize) -> Result<Self> {
        if resolution == 0 {
            return Err(invalid("resolution", "must be at least 1"));
        }
        let (lo, hi) = mesh.bounding_box();
        let half = T::lit(0.5);
        let center = [(lo[0] + hi[0]) * half, (lo[1] + hi[1]) * half];
        let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]);
        let pixel = extent / T::from_usize_lossy(resolution);
        let origin = [center[0] - extent * half, center[1] + extent * half];
        let locator = PointLocator::new(mesh);
        let mut grid = Self {
            resolution,
            origin,
            pixel,
            element_of_pixel: Vec::with_capacity(resolution * resolution),
            elements: mesh.element_count(),
        };
        for row in 0..resolution {
            for col in 0..resolution {
                let p = grid.pixel_center(row, col);
                grid.element_of_pixel.push(locator.locate(mesh, p));
            }
        }
        Ok(grid)
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Physical coordinates of a pixel center.
    pub fn pixel_center(&self, row: usize, col: usize) -> Point<T> {
        let half = T::lit(0.5);
        [
            self.origin[0] + (T::from_usize_lossy(col) + half) * self.pixel,
            self.origin[1] - (T::from_usize_lossy(row) + half) * self.pixel,
        ]
    }

    /// Fractional `(col, row)` pixel coordinates of a physical point.
    pub fn to_pixel(&self, p: Point<T>) -> Point<T> {
        let half = T::lit(0.5);
        [
            (p[0] - self.origin[0]) / self.pixel - half,
            (self.origin[1] - p[1]) / self.pixel - half,
        ]
    }

    pub fn element_at(&self, row: usize, col: usize) -> Option<usize> {
        self.element_of_pixel[row * self.resolution + col]
    }

    pub fn render(&self, values: &[T]) -> Result<Image<T>> {
        check_len("rasterize: element values", self.elements, values.len())?;
        let data = self
            .element_of_pixel
            .iter()
            .map(|e| e.map_or(T::nan(), |k| values[k]))
            .collect();
        Image::new(self.resolution, self.resolution, data)
    }
}

/// Piecewise-constant element field sampled at pixel centers; pixels outside
/// the mesh are NaN.
pub fn rasterize<T: Real>(mesh: &TriMesh<T>, values: &[T], resolution: usize) -> Result<Image<T>> {
    check_len(
        "rasterize: element values",
        mesh.element_count(),
        values.len(),
    )?;
    RasterGrid::new(mesh, resolution)?.render(values)
}

/// Moves an element field between meshes: each target element takes the
/// source value at its centroid, or `fallback` if the centroid is outside.
pub fn transfer_by_centroid<T: Real>(
    source: &TriMesh<T>,
    values: &[T],
    target: &TriMesh<T>,
    fallback: T,
) -> Result<Vec<T>> {
    check_len(
        "transfer: element values",
        source.element_count(),
        values.len(),
    )?;
    let locator = PointLocator::new(source);
    Ok(target
        .centroids()
        .iter()
        .map(|&c| locator.locate(source, c).map_or(fallback, |k| values[k]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_inverse_mesh_counts() {
        let mesh = generate_disk_mesh(0.1, 1024).unwrap();
        assert_eq!(mesh.element_count(), 1014);
        assert_eq!(mesh.node_count(), 547);
        assert_eq!(mesh.boundary_edges().len(), 78);
    }

    #[test]
    fn coarse_mesh_area_close_to_disk() {
        let mesh = generate_disk_mesh(1.0f64, 64).unwrap();
        let area = mesh.total_area();
        assert!((area - std::f64::consts::PI).abs() / std::f64::consts::PI < 0.05);
        let n = mesh.element_count() as f64;
        assert!((n - 64.0).abs() / 64.0 <= 0.3);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(generate_disk_mesh(0.0f64, 1024).is_err());
        assert!(generate_disk_mesh(-1.0f64, 1024).is_err());
        assert!(generate_disk_mesh(0.1f64, 63).is_err());
    }

    #[test]
    fn boundary_nodes_on_circle() {
        let r = 0.1f64;
        let mesh = generate_disk_mesh(r, 4096).unwrap();
        for v in mesh.boundary_nodes() {
            let p = mesh.nodes()[v];
            assert!((p[0].hypot(p[1]) - r).abs() <= 1e-9 * r);
        }
        assert!(mesh.areas().iter().all(|&a| a > 0.0));
        let edges = mesh.boundary_edges();
        for w in edges.windows(2) {
            assert_eq!(w[0].1, w[1].0);
        }
        assert_eq!(edges.last().unwrap().1, edges[0].0);
    }

    #[test]
    fn reference_triangle_basis_gradients() {
        let mesh =
            TriMesh::from_parts(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 2, 1]]).unwrap();
        // reoriented to counter-clockwise
        assert_eq!(mesh.triangles()[0], [0, 1, 2]);
        let g = mesh.basis_gradients(0);
        assert_eq!(g, [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn rejects_degenerate_and_nonmanifold() {
        let degenerate =
            TriMesh::from_parts(vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], vec![[0, 1, 2]]);
        assert!(degenerate.is_err());
        let nodes = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, -1.0]];
        let fan = TriMesh::from_parts(nodes, vec![[0, 1, 2], [1, 3, 2], [0, 1, 4], [0, 1, 3]]);
        assert!(fan.is_err());
    }

    #[test]
    fn sixteen_electrodes_nearly_uniform() {
        let mesh = generate_disk_mesh(0.1f64, 1024).unwrap();
        let layout = place_electrodes(&mesh, 16).unwrap();
        assert_eq!(layout.count(), 16);
        let edge_angle = mesh.max_boundary_edge_length() / 0.1;
        let ideal = std::f64::consts::TAU / 16.0;
        for i in 0..16 {
            let a = layout.angles()[i];
            let b = layout.angles()[(i + 1) % 16];
            let gap = (b - a).rem_euclid(std::f64::consts::TAU);
            assert!((gap - ideal).abs() <= edge_angle + 1e-12);
        }
    }

    #[test]
    fn four_electrodes_at_quadrants() {
        let mesh = generate_disk_mesh(0.1f64, 1024).unwrap();
        let layout = place_electrodes(&mesh, 4).unwrap();
        // uniform boundary nodes: nearest is at most half a spacing away
        let half_edge = std::f64::consts::PI / mesh.boundary_nodes().len() as f64 + 1e-12;
        for (i, &a) in layout.angles().iter().enumerate() {
            let ideal = i as f64 * std::f64::consts::FRAC_PI_2;
            assert!(
                circular_distance(a, ideal) <= half_edge,
                "{a} {ideal} {half_edge}"
            );
        }
    }

    #[test]
    fn too_many_electrodes_collide() {
        let mesh = generate_disk_mesh(0.1, 64).unwrap();
        assert!(matches!(
            place_electrodes(&mesh, 64),
            Err(EitError::ElectrodeCollision { .. })
        ));
    }

    #[test]
    fn difference_rows_have_at_most_two_entries() {
        let mesh = generate_disk_mesh(0.1, 1024).unwrap();
        let ops = build_difference_operators(&mesh);
        for r in 0..ops.stacked().rows() {
            let row: Vec<_> = ops.stacked().row(r).collect();
            assert!(row.is_empty() || row.len() == 2);
            let sum: f64 = row.iter().map(|&(_, v)| v).sum();
            assert_eq!(sum, 0.0);
        }
    }

    #[test]
    fn rasterize_resolution_one_takes_center_element() {
        let mesh = generate_disk_mesh(0.1, 256).unwrap();
        let values: Vec<f64> = (0..mesh.element_count()).map(|k| k as f64).collect();
        let img = rasterize(&mesh, &values, 1).unwrap();
        let k = img.get(0, 0) as usize;
        assert!(mesh.contains(k, [0.0, 0.0]));
        assert!(rasterize(&mesh, &values[1..], 8).is_err());
    }
}
