//! The diffusion coefficient mu(x) and its structural conditions.
//!
//! Weights are integrated exactly per cell: closed form for power laws,
//! exact panel sums for tabulated weights. Nothing in the crate ever samples
//! mu pointwise at x = 0, where a power law with negative exponent is
//! unbounded (but integrable).

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub enum WeightKind {
    /// mu(x) = x^alpha with alpha in (-1, 1).
    PowerLaw { alpha: f64 },
    /// Piecewise-constant in panels: value `values[p]` on
    /// `[breaks[p], breaks[p+1])`.
    Tabulated { breaks: Vec<f64>, values: Vec<f64> },
}

/// A diffusion coefficient with exact per-cell integrals.
#[derive(Debug, Clone)]
pub struct Weight {
    kind: WeightKind,
}

/// Outcome of the growth condition scan (integral of mu up to R versus R^2).
#[derive(Debug, Clone)]
pub struct GrowthCheck {
    /// max over the scanned radii of (integral_0^R mu) / R^2
    pub c_hat: f64,
    /// true when every scanned ratio is finite
    pub ok: bool,
    /// raised when the ratio at the largest radius exceeds twice the ratio
    /// at the smallest: the quadratic growth bound is trending toward failure
    pub growing: bool,
    /// the per-radius ratios, in input order
    pub ratios: Vec<f64>,
}

impl Weight {
    pub fn power_law(alpha: f64) -> Result<Self> {
        if !(alpha > -1.0 && alpha < 1.0) || !alpha.is_finite() {
            return Err(Error::Domain(format!(
                "power-law exponent must lie in (-1, 1), got {alpha}"
            )));
        }
        Ok(Self {
            kind: WeightKind::PowerLaw { alpha },
        })
    }

    /// The unweighted case mu = 1.
    pub fn unit() -> Self {
        Self {
            kind: WeightKind::PowerLaw { alpha: 0.0 },
        }
    }

    pub fn tabulated(breaks: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breaks.len() != values.len() + 1 || values.is_empty() {
            return Err(Error::Shape(format!(
                "tabulated weight needs breaks.len() == values.len() + 1, got {} and {}",
                breaks.len(),
                values.len()
            )));
        }
        if breaks.windows(2).any(|w| w[1] <= w[0]) || breaks[0] != 0.0 {
            return Err(Error::Argument(
                "tabulated breakpoints must start at 0 and increase strictly".into(),
            ));
        }
        if values.iter().any(|&v| !v.is_finite() || v <= 0.0) {
            return Err(Error::Domain(
                "tabulated weight values must be finite and positive".into(),
            ));
        }
        Ok(Self {
            kind: WeightKind::Tabulated { breaks, values },
        })
    }

    pub fn kind(&self) -> &WeightKind {
        &self.kind
    }

    pub fn alpha(&self) -> Option<f64> {
        match self.kind {
            WeightKind::PowerLaw { alpha } => Some(alpha),
            WeightKind::Tabulated { .. } => None,
        }
    }

    /// Exact integral of mu over [a, b].
    pub fn cell_integral(&self, a: f64, b: f64) -> Result<f64> {
        if !(a >= 0.0 && b >= a) {
            return Err(Error::Argument(format!(
                "cell_integral needs 0 <= a <= b, got a={a}, b={b}"
            )));
        }
        match &self.kind {
            WeightKind::PowerLaw { alpha } => {
                let p = alpha + 1.0;
                Ok((b.powf(p) - a.powf(p)) / p)
            }
            WeightKind::Tabulated { breaks, values } => panel_integral(breaks, values, a, b, |v| v),
        }
    }

    /// Exact integral of 1/mu over [a, b]; errors when 1/mu fails to be
    /// integrable on the interval.
    pub fn inv_cell_integral(&self, a: f64, b: f64) -> Result<f64> {
        if !(a >= 0.0 && b >= a) {
            return Err(Error::Argument(format!(
                "inv_cell_integral needs 0 <= a <= b, got a={a}, b={b}"
            )));
        }
        match &self.kind {
            WeightKind::PowerLaw { alpha } => {
                let p = 1.0 - alpha;
                Ok((b.powf(p) - a.powf(p)) / p)
            }
            WeightKind::Tabulated { breaks, values } => {
                panel_integral(breaks, values, a, b, |v| 1.0 / v)
            }
        }
    }

    /// Sampled lower bound for the Muckenhoupt A2 constant over [0, b_max].
    ///
    /// Scans every interval with endpoints on a `samples + 1`-point lattice
    /// (the lattice includes 0, where power-law weights attain their A2
    /// constant) and returns the largest normalized product
    /// (int mu)(int 1/mu)/(b-a)^2. This is a lower bound for the true
    /// supremum and is nondecreasing in `samples`.
    pub fn a2_constant(&self, b_max: f64, samples: usize) -> Result<f64> {
        if samples < 16 {
            return Err(Error::Argument(format!(
                "a2_constant needs at least 16 samples, got {samples}"
            )));
        }
        if !(b_max > 0.0) {
            return Err(Error::Argument("b_max must be positive".into()));
        }
        let pts: Vec<f64> = (0..=samples)
            .map(|i| b_max * i as f64 / samples as f64)
            .collect();
        // prefix integrals from 0 keep the scan O(samples^2) with O(samples)
        // exact integrations
        let mut pref_mu = vec![0.0; pts.len()];
        let mut pref_inv = vec![0.0; pts.len()];
        for i in 1..pts.len() {
            pref_mu[i] = pref_mu[i - 1] + self.cell_integral(pts[i - 1], pts[i])?;
            pref_inv[i] = pref_inv[i - 1] + self.inv_cell_integral(pts[i - 1], pts[i])?;
        }
        let mut kappa: f64 = 0.0;
        for i in 0..pts.len() {
            for j in (i + 1)..pts.len() {
                let len = pts[j] - pts[i];
                let prod = (pref_mu[j] - pref_mu[i]) * (pref_inv[j] - pref_inv[i]);
                if !prod.is_finite() {
                    return Err(Error::Domain(
                        "A2 test failed: 1/mu not integrable on a sampled interval".into(),
                    ));
                }
                kappa = kappa.max(prod / (len * len));
            }
        }
        Ok(kappa)
    }

    /// Scan the quadratic growth condition over the given radii (all >= 1).
    pub fn check_growth(&self, r_list: &[f64]) -> Result<GrowthCheck> {
        if r_list.is_empty() {
            return Err(Error::Argument(
                "check_growth needs a nonempty radius list".into(),
            ));
        }
        if r_list.iter().any(|&r| r < 1.0) {
            return Err(Error::Argument("growth radii must be >= 1".into()));
        }
        let mut ratios = Vec::with_capacity(r_list.len());
        for &r in r_list {
            ratios.push(self.cell_integral(0.0, r)? / (r * r));
        }
        let c_hat = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (mut rmin, mut rmax) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut at_min, mut at_max) = (0.0, 0.0);
        for (&r, &c) in r_list.iter().zip(&ratios) {
            if r < rmin {
                rmin = r;
                at_min = c;
            }
            if r > rmax {
                rmax = r;
                at_max = c;
            }
        }
        Ok(GrowthCheck {
            c_hat,
            ok: c_hat.is_finite(),
            growing: at_max > 2.0 * at_min,
            ratios,
        })
    }
}

fn panel_integral(
    breaks: &[f64],
    values: &[f64],
    a: f64,
    b: f64,
    map: impl Fn(f64) -> f64,
) -> Result<f64> {
    let top = *breaks.last().unwrap();
    if b > top + 1e-12 * top.max(1.0) {
        return Err(Error::Domain(format!(
            "tabulated weight covers [0, {top}], requested up to {b}"
        )));
    }
    let mut total = 0.0;
    for p in 0..values.len() {
        let lo = breaks[p].max(a);
        let hi = breaks[p + 1].min(b);
        if hi > lo {
            total += (hi - lo) * map(values[p]);
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::SplitMix64;

    #[test]
    fn power_cell_integrals_match_closed_forms() {
        let w = Weight::power_law(0.0).unwrap();
        assert!((w.cell_integral(0.0, 1.0).unwrap() - 1.0).abs() < 1e-15);

        let w = Weight::power_law(0.5).unwrap();
        assert!((w.cell_integral(0.0, 1.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);

        let w = Weight::power_law(-0.5).unwrap();
        // 2 * 4^{1/2} = 4
        assert!((w.cell_integral(0.0, 4.0).unwrap() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn cell_integral_rejects_reversed_interval() {
        let w = Weight::unit();
        assert!(matches!(w.cell_integral(2.0, 1.0), Err(Error::Argument(_))));
    }

    #[test]
    fn alpha_outside_open_interval_rejected() {
        assert!(Weight::power_law(1.0).is_err());
        assert!(Weight::power_law(-1.0).is_err());
        assert!(Weight::power_law(f64::NAN).is_err());
    }

    #[test]
    fn additivity_holds_for_random_triples() {
        let kinds = [
            Weight::power_law(0.7).unwrap(),
            Weight::power_law(-0.6).unwrap(),
            Weight::tabulated(vec![0.0, 0.5, 1.5, 4.0, 10.0], vec![2.0, 0.3, 1.1, 5.0]).unwrap(),
        ];
        let mut rng = SplitMix64::new(7);
        for w in &kinds {
            for _ in 0..1000 {
                let mut t = [
                    rng.uniform(0.0, 9.0),
                    rng.uniform(0.0, 9.0),
                    rng.uniform(0.0, 9.0),
                ];
                t.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let (a, b, c) = (t[0], t[1], t[2]);
                let lhs = w.cell_integral(a, b).unwrap() + w.cell_integral(b, c).unwrap();
                let rhs = w.cell_integral(a, c).unwrap();
                assert!(
                    (lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0),
                    "additivity violated: {lhs} vs {rhs}"
                );
            }
        }
    }

    #[test]
    fn a2_constant_unit_weight_is_one() {
        let w = Weight::unit();
        let k = w.a2_constant(5.0, 32).unwrap();
        assert!((k - 1.0).abs() < 1e-12, "kappa = {k}");
    }

    #[test]
    fn a2_constant_matches_power_law_closed_form() {
        // intervals anchored at a = 0 give (int x^a)(int x^-a)/b^2 = 1/(1-a^2)
        for &(alpha, expect) in &[(0.5, 4.0 / 3.0), (0.9, 100.0 / 19.0)] {
            let w = Weight::power_law(alpha).unwrap();
            let k = w.a2_constant(2.0, 64).unwrap();
            assert!(
                k >= expect - 1e-9 && k <= expect + 1e-9,
                "alpha={alpha}: kappa={k}, expected {expect}"
            );
        }
    }

    #[test]
    fn a2_converges_with_panel_count() {
        let w = Weight::power_law(0.5).unwrap();
        let k = w.a2_constant(1.0, 128).unwrap();
        assert!((k - 4.0 / 3.0).abs() / (4.0 / 3.0) < 1e-6);
    }

    #[test]
    fn a2_scan_nondecreasing_under_nested_refinement() {
        let w =
            Weight::tabulated(vec![0.0, 0.5, 1.0, 2.0, 4.0], vec![3.0, 0.2, 1.5, 0.7]).unwrap();
        let k32 = w.a2_constant(4.0, 32).unwrap();
        let k64 = w.a2_constant(4.0, 64).unwrap();
        let k128 = w.a2_constant(4.0, 128).unwrap();
        assert!(k64 >= k32 - 1e-12);
        assert!(k128 >= k64 - 1e-12);
    }

    #[test]
    fn growth_check_closed_forms() {
        let w = Weight::unit();
        let g = w.check_growth(&[1.0, 2.0, 4.0]).unwrap();
        // max over R of R/R^2 is attained at the smallest radius
        assert!((g.c_hat - 1.0).abs() < 1e-14);
        assert!(g.ok && !g.growing);

        let w = Weight::power_law(0.5).unwrap();
        let g = w.check_growth(&[1.0, 2.0, 4.0, 8.0]).unwrap();
        // (2/3) R^{3/2} / R^2 maximal at R = 1
        assert!((g.c_hat - 2.0 / 3.0).abs() < 1e-14);
        assert!(g.ok && !g.growing);
    }

    #[test]
    fn growth_check_flags_cubic_table() {
        // piecewise-constant table with integral ~ R^3 on the scanned list:
        // mu(x) = 3x^2 sampled on fine panels
        let n = 4000;
        let top = 8.0;
        let breaks: Vec<f64> = (0..=n).map(|i| top * i as f64 / n as f64).collect();
        let values: Vec<f64> = (0..n)
            .map(|i| {
                let a = breaks[i];
                let b = breaks[i + 1];
                // exact panel average of 3x^2 keeps int_0^R mu = R^3 at panel ends
                (b * b * b - a * a * a) / (b - a)
            })
            .collect();
        let w = Weight::tabulated(breaks, values).unwrap();
        let g = w.check_growth(&[1.0, 2.0, 4.0, 8.0]).unwrap();
        assert!(g.ok, "finite ratios are still 'ok'");
        assert!(g.growing, "cubic growth must raise the flag");
        assert!((g.ratios[0] - 1.0).abs() < 1e-10);
        assert!((g.ratios[3] - 8.0).abs() < 1e-9);
    }

    #[test]
    fn tabulated_rejects_nonpositive_values() {
        assert!(Weight::tabulated(vec![0.0, 1.0], vec![0.0]).is_err());
        assert!(Weight::tabulated(vec![0.0, 1.0], vec![-2.0]).is_err());
    }
}
