use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use perfhom::acceptance::random_pencil;
use perfhom::assembly::{assemble_mass, assemble_stiffness, assemble_weighted_mass, DofMap};
use perfhom::cell::Regime;
use perfhom::config::{parse_config, RunConfig};
use perfhom::geometry::{build_cell_mesh, CellGeometry, Triangulation};
use perfhom::harness::Format;
use perfhom::linalg::SparseSym;
use perfhom::materials::{CoefficientField, CoefficientPreset, DensityField};
use perfhom::pencil::{pencil_oracle_eigenvalues, solve_indefinite_pencil};

fn random_tensor() -> impl Strategy<Value = [[f64; 2]; 2]> {
    (0.2..3.0f64, 0.2..3.0f64, -0.5..0.5f64).prop_map(|(a, b, c)| {
        // LLᵀ with a lower-triangular L of positive diagonal.
        [[a * a, a * c], [a * c, c * c + b * b]]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn assembled_operators_are_symmetric_with_constant_kernel(
        m in prop::sample::select(vec![8usize, 16]),
        tensors in prop::collection::vec(random_tensor(), 1..4),
        weights in prop::collection::vec(-2.0..2.0f64, 1..4),
    ) {
        let mesh = build_cell_mesh(&CellGeometry::square(m)).unwrap();
        let nt = mesh.num_triangles();
        let coeff = CoefficientField::from_tensors("random", (0..nt).map(|t| tensors[t % tensors.len()]).collect()).unwrap();
        let values: Vec<f64> = (0..nt).map(|t| weights[t % weights.len()]).collect();
        let rho = DensityField::from_values("random", values.clone(), &mesh).unwrap();
        for map in [DofMap::free(mesh.num_vertices()), DofMap::periodic(&mesh, false)] {
            let k = assemble_stiffness(&mesh, &coeff, &map).unwrap().matrix;
            let m = assemble_mass(&mesh, &map).unwrap().matrix;
            let b = assemble_weighted_mass(&mesh, &rho, &map).unwrap().matrix;
            for op in [&k, &m, &b] {
                prop_assert!(op.max_asymmetry() < 1e-13);
            }
            let ones = vec![1.0; map.num_dofs];
            let scale = k.norm_inf();
            prop_assert!(k.matvec(&ones).iter().all(|x| x.abs() < 1e-12 * scale));
            prop_assert!((m.form(&ones, &ones) - mesh.total_area()).abs() < 1e-12);
            let integral: f64 = values.iter().zip(mesh.areas()).map(|(v, a)| v * a).sum();
            prop_assert!((b.form(&ones, &ones) - integral).abs() < 1e-12);
        }
    }

    #[test]
    fn pencil_signs_follow_weighted_norms(seed in any::<u64>(), n in 2usize..16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (k, b): (DMatrix<f64>, DMatrix<f64>) = random_pencil(&mut rng, n);
        let oracle = pencil_oracle_eigenvalues(&k, &b).unwrap();
        let pos = oracle.iter().filter(|&&x| x > 0.0).count();
        let neg = oracle.iter().filter(|&&x| x < 0.0).count();
        let bs = SparseSym::from_dense(&b);
        let spec = solve_indefinite_pencil(&SparseSym::from_dense(&k), &bs, pos, neg).unwrap();
        prop_assert_eq!(spec.positive.len(), pos);
        prop_assert_eq!(spec.negative.len(), neg);
        for p in spec.positive.iter().chain(&spec.negative) {
            let form = bs.form(&p.vector, &p.vector);
            prop_assert!((form - p.lambda.signum()).abs() < 1e-9);
            prop_assert!((p.lambda * p.mu - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn configs_round_trip_through_text(
        regime in prop::sample::select(vec![Regime::MPos, Regime::MZero, Regime::MNeg]),
        m in prop::sample::select(vec![8usize, 16]),
        mask in 1u8..16,
        count in 1usize..5,
        refine in 1usize..3,
        layered in any::<bool>(),
        flags in any::<[bool; 3]>(),
        formats in prop::sample::subsequence(vec![Format::Csv, Format::Json, Format::Svg], 1..=3),
        seed in any::<u64>(),
        dir in "[a-z][a-z0-9_]{0,8}",
    ) {
        let mut cfg = RunConfig::for_regime(regime);
        cfg.geometry = CellGeometry::square(m);
        cfg.s = m;
        cfg.n_values = [1usize, 2, 4, 8].iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, &n)| n).collect();
        cfg.limit_grid = cfg.n_values.last().unwrap() * m * refine;
        cfg.count = count;
        cfg.coefficients = if layered { CoefficientPreset::Layered } else { CoefficientPreset::Identity };
        cfg.diagnostics.corrector_energy = flags[0];
        cfg.diagnostics.factorization = flags[1];
        cfg.diagnostics.pairing = flags[2];
        cfg.formats = formats;
        cfg.seed = seed;
        cfg.output_dir = dir;
        prop_assert!(cfg.plan().violations().is_empty());
        let back = parse_config(&cfg.to_text()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
