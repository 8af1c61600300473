use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use perfhom::acceptance::random_pencil;
use perfhom::assembly::{assemble_stiffness, assemble_weighted_mass, DofMap};
use perfhom::cell::local_spectrum;
use perfhom::geometry::{build_cell_mesh, build_domain_mesh, CellGeometry, Triangulation};
use perfhom::linalg::SparseSym;
use perfhom::materials::{preset_coefficients, preset_density, CoefficientPreset, DensityCase};
use perfhom::pencil::{
    deflate_constants, pencil_oracle_eigenvalues, solve_indefinite_dense, solve_indefinite_pencil,
};

fn negative_count(m: &DMatrix<f64>) -> usize {
    SymmetricEigen::new(m.clone()).eigenvalues.iter().filter(|&&v| v < 0.0).count()
}

// Sylvester: with K SPD, the number of negative eigenvalues of K − σB equals
// the number of pencil eigenvalues strictly between 0 and σ.
#[test]
fn inertia_counts_match_computed_spectrum() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let n = rng.gen_range(4..=20);
        let (k, b) = random_pencil(&mut rng, n);
        let oracle = pencil_oracle_eigenvalues(&k, &b).unwrap();
        let pos = oracle.iter().filter(|&&x| x > 0.0).count();
        let neg = oracle.iter().filter(|&&x| x < 0.0).count();
        let spec = solve_indefinite_pencil(&SparseSym::from_dense(&k), &SparseSym::from_dense(&b), pos, neg).unwrap();
        for (i, p) in spec.positive.iter().enumerate() {
            let next = spec.positive.get(i + 1).map_or(p.lambda * 2.0, |q| q.lambda);
            let sigma = 0.5 * (p.lambda + next);
            if (next - p.lambda).abs() < 1e-8 * p.lambda {
                continue;
            }
            assert_eq!(negative_count(&(&k - &b * sigma)), i + 1, "sigma {sigma}");
        }
        for (i, p) in spec.negative.iter().enumerate() {
            let next = spec.negative.get(i + 1).map_or(p.lambda * 2.0, |q| q.lambda);
            let sigma = 0.5 * (p.lambda + next);
            if (next - p.lambda).abs() < 1e-8 * p.lambda.abs() {
                continue;
            }
            assert_eq!(negative_count(&(&k - &b * sigma)), i + 1, "sigma {sigma}");
        }
    }
}

#[test]
fn seeded_vectors_are_b_orthonormal_with_matching_signs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let n = rng.gen_range(3..=25);
        let (k, b) = random_pencil(&mut rng, n);
        let bs = SparseSym::from_dense(&b);
        let oracle = pencil_oracle_eigenvalues(&k, &b).unwrap();
        let pos = oracle.iter().filter(|&&x| x > 0.0).count().min(3);
        let neg = oracle.iter().filter(|&&x| x < 0.0).count().min(3);
        let spec = solve_indefinite_pencil(&SparseSym::from_dense(&k), &bs, pos, neg).unwrap();
        for side in [&spec.positive, &spec.negative] {
            for (i, p) in side.iter().enumerate() {
                for (j, q) in side.iter().enumerate() {
                    let g = bs.form(&p.vector, &q.vector);
                    let want = if i == j { p.lambda.signum() } else { 0.0 };
                    assert!((g - want).abs() < 1e-9, "{g} vs {want}");
                }
            }
        }
        for p in &spec.positive {
            for q in &spec.negative {
                assert!(bs.form(&p.vector, &q.vector).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn deflated_cell_pencil_matches_householder_oracle() {
    let mesh = build_cell_mesh(&CellGeometry::square(8)).unwrap();
    let coeff = preset_coefficients(CoefficientPreset::Identity, &mesh).unwrap();
    let rho = preset_density(DensityCase::PositiveAvg, &mesh).unwrap();
    let map = DofMap::periodic(&mesh, false);
    let k = assemble_stiffness(&mesh, &coeff, &map).unwrap().matrix.to_dense();
    let b = assemble_weighted_mass(&mesh, &rho, &map).unwrap().matrix.to_dense();
    let n = k.nrows();

    // Columns 2..n of the reflector sending B1 to a multiple of e₁ span {u : (B1)ᵀu = 0}.
    let c = &b * DVector::from_element(n, 1.0);
    let mut v = c.clone();
    v[0] -= c.norm();
    let h = DMatrix::identity(n, n) - &v * v.transpose() * (2.0 / v.norm_squared());
    let q = h.columns(1, n - 1).into_owned();
    let kr = q.transpose() * &k * &q;
    let br = q.transpose() * &b * &q;
    let oracle = pencil_oracle_eigenvalues(&kr, &br).unwrap();
    let first_negative = oracle.iter().copied().filter(|&x| x < 0.0).fold(f64::NEG_INFINITY, f64::max);

    let local = local_spectrum(&mesh, &coeff, &rho).unwrap();
    assert!(
        ((local.lambda1neg - first_negative) / first_negative).abs() < 1e-9,
        "{} vs {}",
        local.lambda1neg,
        first_negative
    );

    let deflated = deflate_constants(&SparseSym::from_dense(&k), &SparseSym::from_dense(&b)).unwrap();
    let (kd, bd) = deflated.to_dense();
    let reduced = pencil_oracle_eigenvalues(&kd, &bd).unwrap();
    assert_eq!(reduced.len(), oracle.len());
    for (a, o) in reduced.iter().zip(&oracle) {
        assert!(((a - o) / o).abs() < 1e-8, "{a} vs {o}");
    }
}

#[test]
fn krylov_path_agrees_with_dense_solver() {
    let geom = CellGeometry::square(8);
    let cell = build_cell_mesh(&geom).unwrap();
    let mesh = build_domain_mesh(4, 8, &geom).unwrap();
    let coeff = preset_coefficients(CoefficientPreset::Identity, &cell).unwrap().on_domain(&mesh, &cell).unwrap();
    let rho = preset_density(DensityCase::PositiveAvg, &cell).unwrap().on_domain(&mesh, &cell).unwrap();
    let map = DofMap::dirichlet(mesh.num_vertices(), &mesh.dirichlet_boundary);
    let k = assemble_stiffness(&mesh, &coeff, &map).unwrap().matrix;
    let b = assemble_weighted_mass(&mesh, &rho, &map).unwrap().matrix;
    assert!(k.dim() > 600, "dimension {} stays on the dense path", k.dim());

    let sparse = solve_indefinite_pencil(&k, &b, 3, 3).unwrap();
    let dense = solve_indefinite_dense(&k.to_dense(), &b.to_dense(), 3, 3).unwrap();
    for (s, d) in [(&sparse.positive, &dense.positive), (&sparse.negative, &dense.negative)] {
        for (x, y) in s.iter().zip(d.iter()) {
            assert!(((x.lambda - y.lambda) / y.lambda).abs() < 1e-9, "{} vs {}", x.lambda, y.lambda);
        }
    }
}
