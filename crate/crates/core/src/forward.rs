//! P1 finite-element forward model with point electrodes, the neighboring
//! measurement protocol, the linearized sensitivity matrix and measurement
//! noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{check_len, invalid, EitError, Result};
use crate::linalg::{CsrMatrix, DenseMatrix, SkylineCholesky};
use crate::mesh::{ElectrodeLayout, Point, TriMesh};
use crate::scalar::{norm2, Real};

/// Sign relating the sensitivity matrix to measured voltage differences:
/// `S·δσ ≈ LINEARIZATION_SIGN · (V[σ₀ + δσ] − V[σ₀])`.
///
/// Raising the conductivity lowers every transfer voltage, while the entries
/// of `S` are the plain gradient products, so the two differ by a sign. The
/// value is checked against two forward solves in the test suite.
pub const LINEARIZATION_SIGN: f64 = -1.0;

/// Strictly positive per-element conductivity (S/m).
#[derive(Clone, Debug, PartialEq)]
pub struct ConductivityField<T> {
    values: Vec<T>,
}

impl<T: Real> ConductivityField<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if let Some((k, &v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > T::zero()) || !v.is_finite())
        {
            return Err(EitError::NonPositiveConductivity {
                element: k,
                value: v.to_f64_lossy(),
            });
        }
        Ok(Self { values })
    }

    pub fn homogeneous(elements: usize, value: T) -> Result<Self> {
        Self::new(vec![value; elements])
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, c: T) -> Result<Self> {
        Self::new(self.values.iter().map(|&v| v * c).collect())
    }

    /// The common value if every element carries the same conductivity.
    pub fn homogeneous_value(&self) -> Option<T> {
        let first = *self.values.first()?;
        self.values.iter().all(|&v| v == first).then_some(first)
    }
}

/// Assembles the P1 stiffness matrix `K_ab = Σ_k σ_k·|T_k|·∇φ_a·∇φ_b`.
pub fn assemble_stiffness<T: Real>(
    mesh: &TriMesh<T>,
    sigma: &ConductivityField<T>,
) -> Result<CsrMatrix<T>> {
    check_len("stiffness: conductivity", mesh.element_count(), sigma.len())?;
    let mut triplets = Vec::with_capacity(9 * mesh.element_count());
    for (k, tri) in mesh.triangles().iter().enumerate() {
        let g = mesh.basis_gradients(k);
        let w = sigma.values()[k] * mesh.areas()[k];
        for a in 0..3 {
            for b in 0..3 {
                let v = w * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                triplets.push((tri[a], tri[b], v));
            }
        }
    }
    let n = mesh.node_count();
    Ok(CsrMatrix::from_triplets(n, n, &triplets))
}

/// Neighboring (adjacent-pair) drive and measurement protocol.
///
/// Drive `j` injects between electrodes `j` and `j+1`; measurement `i` reads
/// `u(e_i) − u(e_{i+1})`. Measurement pairs sharing an electrode with the drive
/// pair are skipped, leaving `E(E−3)` readings ordered drive-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NeighboringProtocol {
    electrodes: usize,
}

impl NeighboringProtocol {
    pub fn new(electrodes: usize) -> Result<Self> {
        if electrodes < 4 {
            return Err(invalid(
                "electrodes",
                format!("need at least 4, got {electrodes}"),
            ));
        }
        Ok(Self { electrodes })
    }

    pub fn electrodes(&self) -> usize {
        self.electrodes
    }

    pub fn measurement_count(&self) -> usize {
        self.electrodes * (self.electrodes - 3)
    }

    pub fn is_measured(&self, drive: usize, measure: usize) -> bool {
        let e = self.electrodes;
        drive < e
            && measure < e
            && measure != drive
            && measure != (drive + 1) % e
            && (measure + 1) % e != drive
    }

    /// `(drive, measure)` pairs in frame order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let e = self.electrodes;
        (0..e)
            .flat_map(|j| (0..e).map(move |i| (j, i)))
            .filter(|&(j, i)| self.is_measured(j, i))
            .collect()
    }

    /// Flat frame index of `(drive, measure)`.
    pub fn index_of(&self, drive: usize, measure: usize) -> Option<usize> {
        if !self.is_measured(drive, measure) {
            return None;
        }
        let skipped = (0..measure)
            .filter(|&i| !self.is_measured(drive, i))
            .count();
        Some(drive * (self.electrodes - 3) + measure - skipped)
    }
}

/// Nodal potentials for every drive pattern.
#[derive(Clone, Debug)]
pub struct DrivePotentials<T> {
    potentials: Vec<Vec<T>>,
    current: T,
}

impl<T: Real> DrivePotentials<T> {
    /// Potential vector for drive `j`.
    pub fn pattern(&self, j: usize) -> &[T] {
        &self.potentials[j]
    }

    pub fn patterns(&self) -> usize {
        self.potentials.len()
    }

    pub fn current(&self) -> T {
        self.current
    }
}

fn residual_tolerance<T: Real>() -> T {
    T::lit(1e-10).max(T::epsilon() * T::lit(1e5))
}

/// Factorized Neumann problem for one conductivity.
///
/// The stiffness matrix is singular along constants; a rank-one term on a
/// single ground node makes it definite without changing solutions for
/// balanced sources, and potentials are then shifted to zero mean over the
/// electrode nodes.
#[derive(Clone, Debug)]
pub struct ForwardSolver<T> {
    stiffness: CsrMatrix<T>,
    factor: SkylineCholesky<T>,
    ground: usize,
}

impl<T: Real> ForwardSolver<T> {
    pub fn new(mesh: &TriMesh<T>, sigma: &ConductivityField<T>) -> Result<Self> {
        let stiffness = assemble_stiffness(mesh, sigma)?;
        Self::from_stiffness(stiffness)
    }

    pub fn from_stiffness(stiffness: CsrMatrix<T>) -> Result<Self> {
        let ground = 0;
        let n = stiffness.rows();
        let mut triplets: Vec<(usize, usize, T)> = (0..n)
            .flat_map(|r| stiffness.row(r).map(move |(c, v)| (r, c, v)))
            .collect();
        triplets.push((ground, ground, stiffness.get(ground, ground)));
        let grounded = CsrMatrix::from_triplets(n, n, &triplets);
        let factor = SkylineCholesky::factor(&grounded)?;
        Ok(Self {
            stiffness,
            factor,
            ground,
        })
    }

    pub fn stiffness(&self) -> &CsrMatrix<T> {
        &self.stiffness
    }

    pub fn ground_node(&self) -> usize {
        self.ground
    }

    /// Solves `K u = f` for a source vector with zero net current, with one
    /// step of iterative refinement. Returns the potential and the relative
    /// residual `‖Ku − f‖/‖f‖`.
    pub fn solve_balanced(&self, f: &[T]) -> (Vec<T>, T) {
        let mut u = self.factor.solve(f);
        let mut ku = self.stiffness.matvec(&u);
        ku[self.ground] += self.stiffness.get(self.ground, self.ground) * u[self.ground];
        let r: Vec<T> = f.iter().zip(&ku).map(|(&a, &b)| a - b).collect();
        let du = self.factor.solve(&r);
        u.iter_mut().zip(&du).for_each(|(a, &b)| *a += b);
        let ku = self.stiffness.matvec(&u);
        let res: Vec<T> = f.iter().zip(&ku).map(|(&a, &b)| a - b).collect();
        let rel = norm2(&res) / norm2(f);
        (u, rel)
    }

    /// Potentials for every adjacent-pair drive: `+I` at electrode `j`, `−I`
    /// at electrode `j+1`, grounded to zero mean over the electrode nodes.
    pub fn solve_potentials(
        &self,
        layout: &ElectrodeLayout<T>,
        current: T,
    ) -> Result<DrivePotentials<T>> {
        let n = self.stiffness.rows();
        if let Some(&bad) = layout.node_ids().iter().find(|&&v| v >= n) {
            return Err(invalid(
                "electrode layout",
                format!("node {bad} not in mesh"),
            ));
        }
        let e = layout.count();
        let tol = residual_tolerance::<T>();
        let potentials = (0..e)
            .into_par_iter()
            .map(|j| {
                let mut f = vec![T::zero(); n];
                f[layout.node(j)] += current;
                f[layout.node(j + 1)] -= current;
                let (mut u, rel) = self.solve_balanced(&f);
                if !(rel <= tol) {
                    return Err(EitError::DriveSolveFailed {
                        drive: j,
                        residual: rel.to_f64_lossy(),
                    });
                }
                let mean =
                    layout.node_ids().iter().map(|&v| u[v]).sum::<T>() / T::from_usize_lossy(e);
                u.iter_mut().for_each(|x| *x -= mean);
                Ok(u)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DrivePotentials {
            potentials,
            current,
        })
    }
}

/// One scan of differential boundary voltages under the neighboring protocol.
#[derive(Clone, Debug, PartialEq)]
pub struct VoltageFrame<T> {
    protocol: NeighboringProtocol,
    values: Vec<T>,
}

impl<T: Real> VoltageFrame<T> {
    pub fn new(electrodes: usize, values: Vec<T>) -> Result<Self> {
        let protocol = NeighboringProtocol::new(electrodes)?;
        check_len("voltage frame", protocol.measurement_count(), values.len())?;
        Ok(Self { protocol, values })
    }

    pub fn protocol(&self) -> NeighboringProtocol {
        self.protocol
    }

    pub fn electrodes(&self) -> usize {
        self.protocol.electrodes()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, drive: usize, measure: usize) -> Option<T> {
        self.protocol
            .index_of(drive, measure)
            .map(|p| self.values[p])
    }

    pub fn norm(&self) -> T {
        norm2(&self.values)
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, c: T) -> Self {
        Self {
            protocol: self.protocol,
            values: self.values.iter().map(|&v| v * c).collect(),
        }
    }

    /// `self − other`
    pub fn difference(&self, other: &Self) -> Result<Self> {
        check_len("frame difference", self.len(), other.len())?;
        Ok(Self {
            protocol: self.protocol,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| a - b)
                .collect(),
        })
    }
}

/// Reads `V_i^j = u^j(e_i) − u^j(e_{i+1})` for every protocol pair.
pub fn extract_voltages<T: Real>(
    potentials: &DrivePotentials<T>,
    layout: &ElectrodeLayout<T>,
) -> Result<VoltageFrame<T>> {
    let protocol = NeighboringProtocol::new(layout.count())?;
    check_len("drive patterns", layout.count(), potentials.patterns())?;
    let values = protocol
        .pairs()
        .into_iter()
        .map(|(j, i)| {
            let u = potentials.pattern(j);
            u[layout.node(i)] - u[layout.node(i + 1)]
        })
        .collect();
    VoltageFrame::new(layout.count(), values)
}

/// Assemble, solve and measure in one call.
pub fn simulate_frame<T: Real>(
    mesh: &TriMesh<T>,
    layout: &ElectrodeLayout<T>,
    sigma: &ConductivityField<T>,
    current: T,
) -> Result<VoltageFrame<T>> {
    let solver = ForwardSolver::new(mesh, sigma)?;
    let potentials = solver.solve_potentials(layout, current)?;
    extract_voltages(&potentials, layout)
}

/// `LINEARIZATION_SIGN · (v − v_ref)`, the datum the sensitivity matrix
/// predicts.
pub fn signed_difference<T: Real>(
    v: &VoltageFrame<T>,
    v_ref: &VoltageFrame<T>,
) -> Result<VoltageFrame<T>> {
    Ok(v.difference(v_ref)?.scaled(T::lit(LINEARIZATION_SIGN)))
}

/// Linearization of the boundary voltages about a homogeneous conductivity.
#[derive(Clone, Debug)]
pub struct SensitivityMatrix<T> {
    matrix: DenseMatrix<T>,
    sigma0: T,
    mesh_elements: usize,
    mesh_nodes: usize,
}

impl<T: Real> SensitivityMatrix<T> {
    /// Wraps an explicit matrix (tests and externally computed operators).
    pub fn from_matrix(matrix: DenseMatrix<T>, sigma0: T) -> Self {
        let mesh_elements = matrix.cols();
        Self {
            matrix,
            sigma0,
            mesh_elements,
            mesh_nodes: 0,
        }
    }

    pub fn matrix(&self) -> &DenseMatrix<T> {
        &self.matrix
    }

    pub fn sigma0(&self) -> T {
        self.sigma0
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.cols()
    }

    /// `(elements, nodes)` of the mesh the matrix was computed on.
    pub fn mesh_shape(&self) -> (usize, usize) {
        (self.mesh_elements, self.mesh_nodes)
    }

    pub fn apply(&self, delta_sigma: &[T]) -> Vec<T> {
        self.matrix.matvec(delta_sigma)
    }
}

/// `S_pq = (1/I)·|T_q|·∇u₀^j·∇u₀^i` for protocol row `p = (j, i)`, with the
/// reference potentials computed at the homogeneous conductivity `sigma0`.
pub fn sensitivity_matrix<T: Real>(
    mesh: &TriMesh<T>,
    layout: &ElectrodeLayout<T>,
    sigma0: &ConductivityField<T>,
    current: T,
) -> Result<SensitivityMatrix<T>> {
    check_len(
        "sensitivity: conductivity",
        mesh.element_count(),
        sigma0.len(),
    )?;
    let s0 = sigma0.homogeneous_value().ok_or_else(|| {
        invalid(
            "sigma0",
            "linearization requires a homogeneous reference conductivity",
        )
    })?;
    if current == T::zero() || !current.is_finite() {
        return Err(invalid("current", "must be finite and nonzero"));
    }
    let protocol = NeighboringProtocol::new(layout.count())?;
    let solver = ForwardSolver::new(mesh, sigma0)?;
    let potentials = solver.solve_potentials(layout, current)?;

    let n = mesh.element_count();
    let gradients: Vec<Vec<Point<T>>> = (0..layout.count())
        .into_par_iter()
        .map(|j| {
            let u = potentials.pattern(j);
            (0..n).map(|k| mesh.gradient(k, u)).collect()
        })
        .collect();

    let pairs = protocol.pairs();
    let mut data = vec![T::zero(); pairs.len() * n];
    data.par_chunks_mut(n)
        .zip(pairs.par_iter())
        .for_each(|(row, &(j, i))| {
            for (q, out) in row.iter_mut().enumerate() {
                let (a, b) = (gradients[j][q], gradients[i][q]);
                *out = mesh.areas()[q] * (a[0] * b[0] + a[1] * b[1]) / current;
            }
        });
    Ok(SensitivityMatrix {
        matrix: DenseMatrix::from_row_major(pairs.len(), n, data)?,
        sigma0: s0,
        mesh_elements: n,
        mesh_nodes: mesh.node_count(),
    })
}

/// Adds i.i.d. Gaussian noise at the given SNR (dB, relative to the frame's
/// Euclidean norm). An infinite SNR returns the frame unchanged.
pub fn add_noise<T: Real>(
    frame: &VoltageFrame<T>,
    snr_db: f64,
    seed: u64,
) -> Result<VoltageFrame<T>> {
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(invalid(
            "snr_db",
            format!("must be finite or +inf, got {snr_db}"),
        ));
    }
    if snr_db == f64::INFINITY {
        return Ok(frame.clone());
    }
    let norm = frame.norm().to_f64_lossy();
    if norm == 0.0 {
        return Err(EitError::Undefined(
            "SNR is undefined for an all-zero frame",
        ));
    }
    let std = norm * 10f64.powf(-snr_db / 20.0) / (frame.len() as f64).sqrt();
    let normal = Normal::new(0.0, std).map_err(|e| invalid("snr_db", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = frame
        .values()
        .iter()
        .map(|&v| v + T::lit(normal.sample(&mut rng)))
        .collect();
    VoltageFrame::new(frame.electrodes(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_disk_mesh, place_electrodes};

    #[test]
    fn reference_triangle_local_stiffness() {
        // Hand computation for vertices (0,0), (1,0), (0,1) with unit σ:
        // grads (-1,-1), (1,0), (0,1) and area 1/2.
        let mesh =
            TriMesh::from_parts(vec![[0.0f64, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]])
                .unwrap();
        let sigma = ConductivityField::homogeneous(1, 1.0).unwrap();
        let k = assemble_stiffness(&mesh, &sigma).unwrap();
        let expected = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for (a, row) in expected.iter().enumerate() {
            for (b, &v) in row.iter().enumerate() {
                assert!((k.get(a, b) - v).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn stiffness_annihilates_constants_and_is_linear() {
        let mesh = generate_disk_mesh(0.1f64, 256).unwrap();
        let sigma = ConductivityField::homogeneous(mesh.element_count(), 1.0).unwrap();
        let k = assemble_stiffness(&mesh, &sigma).unwrap();
        let ones = vec![1.0; mesh.node_count()];
        assert!(k.matvec(&ones).iter().all(|v| v.abs() < 1e-12));
        assert!(k.is_symmetric(1e-14));
        let k3 = assemble_stiffness(&mesh, &sigma.scaled(3.0).unwrap()).unwrap();
        for r in 0..k.rows() {
            for (c, v) in k.row(r) {
                assert!((k3.get(r, c) - 3.0 * v).abs() <= 1e-14 * v.abs().max(1.0));
            }
        }
    }

    #[test]
    fn rejects_nonpositive_conductivity() {
        assert!(matches!(
            ConductivityField::new(vec![1.0, 0.0, 2.0]),
            Err(EitError::NonPositiveConductivity { element: 1, .. })
        ));
        assert!(ConductivityField::new(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn protocol_shape_and_index_map() {
        let p = NeighboringProtocol::new(16).unwrap();
        assert_eq!(p.measurement_count(), 208);
        let pairs = p.pairs();
        assert_eq!(pairs.len(), 208);
        for (idx, &(j, i)) in pairs.iter().enumerate() {
            assert_eq!(p.index_of(j, i), Some(idx));
            assert_eq!(idx / 13, j);
        }
        assert_eq!(p.index_of(3, 3), None);
        assert_eq!(p.index_of(3, 4), None);
        assert_eq!(p.index_of(3, 2), None);
        assert_eq!(p.index_of(0, 15), None);
        assert!(NeighboringProtocol::new(3).is_err());
    }

    #[test]
    fn potentials_have_zero_electrode_mean() {
        let mesh = generate_disk_mesh(0.1, 1024).unwrap();
        let layout = place_electrodes(&mesh, 16).unwrap();
        let sigma = ConductivityField::homogeneous(mesh.element_count(), 1.0).unwrap();
        let pots = ForwardSolver::new(&mesh, &sigma)
            .unwrap()
            .solve_potentials(&layout, 1e-3)
            .unwrap();
        for j in 0..16 {
            let mean: f64 = layout
                .node_ids()
                .iter()
                .map(|&v| pots.pattern(j)[v])
                .sum::<f64>()
                / 16.0;
            assert!(mean.abs() < 1e-15);
        }
    }

    #[test]
    fn noise_edge_cases() {
        let frame = VoltageFrame::new(4, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        assert_eq!(add_noise(&frame, f64::INFINITY, 1).unwrap(), frame);
        let a = add_noise(&frame, 30.0, 7).unwrap();
        let b = add_noise(&frame, 30.0, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, frame);
        let zero = VoltageFrame::new(4, vec![0.0; 4]).unwrap();
        assert!(add_noise(&zero, 50.0, 1).is_err());
        assert!(add_noise(&frame, f64::NAN, 1).is_err());
    }

    #[test]
    fn sensitivity_rejects_inhomogeneous_reference() {
        let mesh = generate_disk_mesh(0.1, 64).unwrap();
        let layout = place_electrodes(&mesh, 4).unwrap();
        let mut v = vec![1.0; mesh.element_count()];
        v[0] = 1.5;
        let sigma = ConductivityField::new(v).unwrap();
        assert!(sensitivity_matrix(&mesh, &layout, &sigma, 1e-3).is_err());
    }
}
