use std::time::Instant;

use eit_core::forward::ForwardSolver;
use eit_core::mesh::place_electrodes_at_angles;
use eit_core::*;

const R: f64 = 0.1;

fn homogeneous(mesh: &TriMesh<f64>, v: f64) -> ConductivityField<f64> {
    ConductivityField::homogeneous(mesh.element_count(), v).unwrap()
}

/// Neumann function of the disk for a boundary source at `s` and sink at `t`:
/// `u = I/(πσ)·ln(|x − t|/|x − s|)`, up to a constant.
fn analytic(x: Point<f64>, s: Point<f64>, t: Point<f64>, current: f64, sigma: f64) -> f64 {
    let d = |a: Point<f64>, b: Point<f64>| (a[0] - b[0]).hypot(a[1] - b[1]);
    current / (std::f64::consts::PI * sigma) * (d(x, t) / d(x, s)).ln()
}

/// Relative L² error of the FEM potential for injection between two
/// opposite-ish boundary nodes, excluding nodes within two boundary edges of
/// either injection point.
fn oracle_error(target: usize) -> f64 {
    let mesh = generate_disk_mesh(R, target).unwrap();
    let layout = place_electrodes(&mesh, 16).unwrap();
    let (src, snk) = (layout.node(0), layout.node(5));
    let solver = ForwardSolver::new(&mesh, &homogeneous(&mesh, 1.0)).unwrap();
    let mut f = vec![0.0; mesh.node_count()];
    f[src] = 1.0;
    f[snk] = -1.0;
    let (u, rel) = solver.solve_balanced(&f);
    assert!(rel < 1e-10);

    let (ps, pt) = (mesh.nodes()[src], mesh.nodes()[snk]);
    let exclusion = 2.0 * mesh.max_boundary_edge_length();
    let keep: Vec<usize> = (0..mesh.node_count())
        .filter(|&v| {
            let p = mesh.nodes()[v];
            (p[0] - ps[0]).hypot(p[1] - ps[1]) > exclusion
                && (p[0] - pt[0]).hypot(p[1] - pt[1]) > exclusion
        })
        .collect();
    let exact: Vec<f64> = keep
        .iter()
        .map(|&v| analytic(mesh.nodes()[v], ps, pt, 1.0, 1.0))
        .collect();
    let fem: Vec<f64> = keep.iter().map(|&v| u[v]).collect();
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let (me, mf) = (mean(&exact), mean(&fem));
    let num: f64 = exact
        .iter()
        .zip(&fem)
        .map(|(e, f)| ((f - mf) - (e - me)).powi(2))
        .sum();
    let den: f64 = exact.iter().map(|e| (e - me).powi(2)).sum();
    (num / den).sqrt()
}

#[test]
fn matches_analytic_disk_potential() {
    let started = Instant::now();
    let fine = oracle_error(16384);
    let coarse = oracle_error(4096);
    assert!(fine < 0.02, "relative error {fine}");
    assert!(fine < coarse, "refinement did not help: {coarse} -> {fine}");
    assert!(started.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn reciprocity_and_conductivity_scaling() {
    let mesh = generate_disk_mesh(R, 1024).unwrap();
    let layout = place_electrodes(&mesh, 16).unwrap();
    let sigma = assign_conductivity(&mesh, &lung_model(7).unwrap()).unwrap();
    let v = simulate_frame(&mesh, &layout, &sigma, 1.0).unwrap();
    assert_eq!(v.len(), 208);
    let tol = 1e-8 * v.max_abs();
    for (j, i) in v.protocol().pairs() {
        let a = v.get(j, i).unwrap();
        let b = v.get(i, j).expect("protocol is symmetric");
        assert!((a - b).abs() <= tol, "V[{i}][{j}] = {a} vs {b}");
    }
    for c in [0.5, 2.0, 10.0] {
        let vc = simulate_frame(&mesh, &layout, &sigma.scaled(c).unwrap(), 1.0).unwrap();
        for (a, b) in vc.values().iter().zip(v.values()) {
            assert!((a - b / c).abs() <= 1e-10 * v.max_abs(), "c = {c}");
        }
    }
}

#[test]
fn voltages_scale_with_current() {
    let mesh = generate_disk_mesh(R, 256).unwrap();
    let layout = place_electrodes(&mesh, 8).unwrap();
    let sigma = homogeneous(&mesh, 1.0);
    let v1 = simulate_frame(&mesh, &layout, &sigma, 1.0).unwrap();
    let v3 = simulate_frame(&mesh, &layout, &sigma, 3.0).unwrap();
    for (a, b) in v3.values().iter().zip(v1.values()) {
        assert!((a - 3.0 * b).abs() <= 1e-12 * v1.max_abs());
    }
}

#[test]
fn sensitivity_scales_inverse_square() {
    let mesh = generate_disk_mesh(R, 256).unwrap();
    let layout = place_electrodes(&mesh, 16).unwrap();
    let s1 = sensitivity_matrix(&mesh, &layout, &homogeneous(&mesh, 1.0), 1.0).unwrap();
    for c in [0.5, 2.0, 4.0] {
        let sc = sensitivity_matrix(&mesh, &layout, &homogeneous(&mesh, c), 1.0).unwrap();
        let scale = s1.matrix().max_abs();
        for (a, b) in sc.matrix().as_slice().iter().zip(s1.matrix().as_slice()) {
            assert!((a - b / (c * c)).abs() <= 1e-10 * scale);
        }
    }
}

#[test]
fn sign_convention_matches_two_forward_solves() {
    let mesh = generate_disk_mesh(R, 1024).unwrap();
    let layout = place_electrodes(&mesh, 16).unwrap();
    let sigma0 = homogeneous(&mesh, 1.0);
    let s = sensitivity_matrix(&mesh, &layout, &sigma0, 1.0).unwrap();
    let eps = 1e-3;
    let delta: Vec<f64> = mesh
        .centroids()
        .iter()
        .map(|c| {
            if (c[0] - 0.03).hypot(c[1]) < 0.025 {
                eps
            } else {
                0.0
            }
        })
        .collect();
    let perturbed: Vec<f64> = delta.iter().map(|d| 1.0 + d).collect();
    let v0 = simulate_frame(&mesh, &layout, &sigma0, 1.0).unwrap();
    let v1 = simulate_frame(
        &mesh,
        &layout,
        &ConductivityField::new(perturbed).unwrap(),
        1.0,
    )
    .unwrap();
    let dv = signed_difference(&v1, &v0).unwrap();
    let predicted = s.apply(&delta);
    let err = |sign: f64| {
        let num: f64 = predicted
            .iter()
            .zip(dv.values())
            .map(|(p, d)| (p - sign * d).powi(2))
            .sum();
        num.sqrt() / dv.norm()
    };
    assert!(err(1.0) < 0.05, "linearization error {}", err(1.0));
    assert!(err(-1.0) > 1.5, "opposite sign should not fit");
    assert_eq!(LINEARIZATION_SIGN, -1.0);
}

#[test]
fn model_seven_linearization_fidelity() {
    let inv = generate_disk_mesh(R, 1024).unwrap();
    let fwd = generate_disk_mesh(R, 4096).unwrap();
    let li = place_electrodes(&inv, 16).unwrap();
    let lf = place_electrodes_at_angles(&fwd, li.angles()).unwrap();
    let spec = lung_model(7).unwrap();
    let v0 = simulate_frame(&fwd, &lf, &homogeneous(&fwd, 1.0), 1.0).unwrap();
    let v1 = simulate_frame(&fwd, &lf, &assign_conductivity(&fwd, &spec).unwrap(), 1.0).unwrap();
    let dv = signed_difference(&v1, &v0).unwrap();
    let s = sensitivity_matrix(&inv, &li, &homogeneous(&inv, 1.0), 1.0).unwrap();
    let truth: Vec<f64> = assign_conductivity(&inv, &spec)
        .unwrap()
        .values()
        .iter()
        .map(|v| v - 1.0)
        .collect();
    let predicted = s.apply(&truth);
    let num: f64 = predicted
        .iter()
        .zip(dv.values())
        .map(|(p, d)| (p - d).powi(2))
        .sum();
    let rel = num.sqrt() / dv.norm();
    assert!(rel < 0.15, "linearization error {rel}");
}

#[test]
fn column_correlation_decays_with_distance() {
    let mesh = generate_disk_mesh(R, 1024).unwrap();
    let layout = place_electrodes(&mesh, 16).unwrap();
    let s = sensitivity_matrix(&mesh, &layout, &homogeneous(&mesh, 1.0), 1.0).unwrap();
    let col = |k: usize| {
        let c = s.matrix().column(k);
        let n = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        c.into_iter().map(|x| x / n).collect::<Vec<_>>()
    };
    let reference = 0;
    let c0 = col(reference);
    let p0 = mesh.centroids()[reference];
    let mut by_distance: Vec<(f64, f64)> = (1..mesh.element_count())
        .map(|k| {
            let p = mesh.centroids()[k];
            let corr: f64 = c0.iter().zip(col(k)).map(|(a, b)| a * b).sum();
            ((p[0] - p0[0]).hypot(p[1] - p0[1]), corr.abs())
        })
        .collect();
    by_distance.sort_by(|a, b| a.0.total_cmp(&b.0));
    let avg = |xs: &[(f64, f64)]| xs.iter().map(|x| x.1).sum::<f64>() / xs.len() as f64;
    let near = avg(&by_distance[..20]);
    let far = avg(&by_distance[by_distance.len() - 200..]);
    assert!(near > 0.9, "near-column correlation {near}");
    assert!(far < 0.5 * near, "far {far} vs near {near}");
}

#[test]
fn electrode_potentials_have_zero_mean_for_every_drive() {
    let mesh = generate_disk_mesh(R, 1024).unwrap();
    let layout = place_electrodes(&mesh, 16).unwrap();
    let sigma = assign_conductivity(&mesh, &lung_model(3).unwrap()).unwrap();
    let pots = ForwardSolver::new(&mesh, &sigma)
        .unwrap()
        .solve_potentials(&layout, 1.0)
        .unwrap();
    for j in 0..pots.patterns() {
        let u = pots.pattern(j);
        let mean: f64 = layout.node_ids().iter().map(|&v| u[v]).sum::<f64>() / 16.0;
        let scale = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(mean.abs() <= 1e-12 * scale);
    }
}

#[test]
fn single_precision_forward_solve() {
    let mesh = generate_disk_mesh(0.1f32, 256).unwrap();
    let layout = place_electrodes(&mesh, 8).unwrap();
    let sigma = ConductivityField::homogeneous(mesh.element_count(), 1.0f32).unwrap();
    let v32 = simulate_frame(&mesh, &layout, &sigma, 1.0).unwrap();

    let mesh64 = generate_disk_mesh(0.1f64, 256).unwrap();
    // rounding can break angle ties differently, so reuse the f32 nodes
    let layout64 = ElectrodeLayout::from_node_ids(&mesh64, layout.node_ids().to_vec()).unwrap();
    let v64 = simulate_frame(&mesh64, &layout64, &homogeneous(&mesh64, 1.0), 1.0).unwrap();
    for (a, b) in v32.values().iter().zip(v64.values()) {
        assert!((f64::from(*a) - b).abs() <= 1e-4 * v64.max_abs());
    }
}
