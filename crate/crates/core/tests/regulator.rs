use nalgebra::DMatrix;
use proptest::prelude::*;

use nes_core::plant::{self, PlantModel};

fn plant_strategy() -> impl Strategy<Value = PlantModel> {
    (1usize..=4, 1usize..=3)
        .prop_flat_map(|(n, m)| (Just(n), Just(m), 1..=n.min(m)))
        .prop_flat_map(|(n, m, p)| {
            (
                prop::collection::vec(-2.0f64..2.0, n * n),
                prop::collection::vec(-2.0f64..2.0, n * m),
                prop::collection::vec(-2.0f64..2.0, p * n),
                Just((n, m, p)),
            )
        })
        .prop_map(|(a, b, c, (n, m, p))| {
            PlantModel::new(
                DMatrix::from_row_slice(n, n, &a),
                DMatrix::from_row_slice(n, m, &b),
                DMatrix::from_row_slice(p, n, &c),
            )
            .unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn kronecker_and_blocked_routes_agree(p in plant_strategy()) {
        prop_assume!(plant::check_regulator_rank(&p));
        let (psi1, g1) = plant::solve_regulator_equations(&p).unwrap();
        let (psi2, g2) = plant::solve_regulator_blocked(&p).unwrap();
        let scale = 1.0 + psi1.amax().max(g1.amax());
        prop_assert!((&psi1 - &psi2).amax() <= 1e-8 * scale);
        prop_assert!((&g1 - &g2).amax() <= 1e-8 * scale);
        let (r1, r2) = plant::regulator_residuals(&p, &psi1, &g1);
        prop_assert!(r1.max(r2) <= 1e-9 * scale);
    }

    #[test]
    fn synthesized_gains_are_schur_stable(p in plant_strategy()) {
        prop_assume!(plant::check_controllability(&p) && plant::check_regulator_rank(&p));
        if let Ok(g) = plant::synthesize_gains(&p, 1.0, 1.0) {
            prop_assert!(plant::spectral_radius(&(p.a() - p.b() * &g.k)) < 1.0);
        }
    }
}

#[test]
fn rank_deficient_plant_is_rejected() {
    // pole at 1 with zero output coupling
    let p = PlantModel::from_rows(&[vec![1.0]], &[vec![0.0]], &[vec![1.0]]).unwrap();
    assert!(!plant::check_regulator_rank(&p));
    assert!(plant::solve_regulator_equations(&p).is_err());
    assert!(plant::solve_regulator_blocked(&p).is_err());
}
