//! Property-based invariants (proptest): quadrature structure, operator
//! linearity and the annulus bound under randomized inputs.

use std::sync::Arc;

use proptest::prelude::*;

use fracext::fractional::frac_lap_spectral;
use fracext::grid::{
    annulus_profile, integrate_bulk, verify_annulus_bound, GridFunction, HalfSpaceGrid, Region,
    TorusGrid,
};
use fracext::weights::Weight;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Exact weight integrals are additive over subdivision points.
    #[test]
    fn weight_cell_integral_additive(
        alpha in -0.9_f64..0.9,
        a in 0.0_f64..4.0,
        b in 0.0_f64..4.0,
        c in 0.0_f64..4.0,
    ) {
        let w = Weight::power_law(alpha).unwrap();
        let mut t = [a, b, c];
        t.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let lhs = w.cell_integral(t[0], t[1]).unwrap() + w.cell_integral(t[1], t[2]).unwrap();
        let rhs = w.cell_integral(t[0], t[2]).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
    }

    /// Bulk integration is monotone: adding a nonnegative field cannot
    /// decrease the integral.
    #[test]
    fn integrate_bulk_monotone(seed in 0u64..1000, shift in 0.0_f64..2.0) {
        let g = Arc::new(HalfSpaceGrid::new(1, 4.0, 16, 2.0, 12, 1.5).unwrap());
        let mut rng = fracext::util::SplitMix64::new(seed);
        let base: Vec<f64> = (0..g.node_count()).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let bumped: Vec<f64> = base.iter().map(|v| v + shift).collect();
        let w = Weight::power_law(0.3).unwrap();
        let f1 = GridFunction::new(g.clone(), base).unwrap();
        let f2 = GridFunction::new(g, bumped).unwrap();
        let i1 = integrate_bulk(&f1, &w, Region::Whole).unwrap();
        let i2 = integrate_bulk(&f2, &w, Region::Whole).unwrap();
        prop_assert!(i1 <= i2 + 1e-12);
    }

    /// The spectral operator is linear over random mode combinations.
    #[test]
    fn spectral_linearity(
        a in -3.0_f64..3.0,
        b in -3.0_f64..3.0,
        s in 0.1_f64..0.9,
    ) {
        let t = TorusGrid::new(1, 64, 2.0 * std::f64::consts::PI).unwrap();
        let va: Vec<f64> = (0..64).map(|i| t.coord(i).sin()).collect();
        let vb: Vec<f64> = (0..64).map(|i| (3.0 * t.coord(i)).cos()).collect();
        let comb: Vec<f64> = va.iter().zip(&vb).map(|(x, y)| a * x + b * y).collect();
        let la = frac_lap_spectral(&t, &va, s).unwrap();
        let lb = frac_lap_spectral(&t, &vb, s).unwrap();
        let lc = frac_lap_spectral(&t, &comb, s).unwrap();
        for i in 0..64 {
            prop_assert!((lc[i] - (a * la[i] + b * lb[i])).abs() < 1e-10);
        }
    }

    /// The annulus bound holds for every nonnegative field, and the profile
    /// is nondecreasing in the radius.
    #[test]
    fn annulus_bound_holds_for_nonnegative_fields(
        seed in 0u64..10_000,
        r in 4.0_f64..7.9,
    ) {
        let g = Arc::new(HalfSpaceGrid::new(1, 16.0, 32, 8.0, 24, 1.3).unwrap());
        let mut rng = fracext::util::SplitMix64::new(seed);
        let vals: Vec<f64> = (0..g.node_count()).map(|_| rng.next_f64() * 2.0).collect();
        let h = GridFunction::new(g, vals).unwrap();
        let chk = verify_annulus_bound(&h, r).unwrap();
        prop_assert!(chk.holds, "lhs {} rhs {}", chk.lhs, chk.rhs);
        let eta1 = annulus_profile(&h, r / 2.0).unwrap();
        let eta2 = annulus_profile(&h, r).unwrap();
        prop_assert!(eta1 <= eta2 + 1e-12);
    }
}
