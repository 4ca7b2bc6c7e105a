//! The acceptance pipeline: ten desk-scale checks with quantitative oracles,
//! each returning a pass/fail record. `verify-all` runs them in order and
//! the integration suite runs them as individual tests.

use std::sync::Arc;
use std::time::Instant;

use crate::extension::{dn_operator_fit, extend, PoissonKernel};
use crate::fractional::{frac_lap_pv, frac_lap_spectral, FracOrder};
use crate::geometry::{
    capacity_phi, default_eps_grad, poincare_audit_with_sensitivity, symmetry_fit, PhiFamily,
};
use crate::grid::{GridFunction, HalfSpaceGrid, TorusGrid};
use crate::oracle::dense_smallest_generalized;
use crate::solver::{
    boundary_reaction, bulk_reaction, energy, energy_growth, layer_setup, residual, solve_layer,
    ClampSpec, LayerSetup, Solution,
};
use crate::stability::{assemble, assemble_destabilized, min_rayleigh, monotone_certificate};
use crate::util::SplitMix64;
use crate::weights::Weight;

/// Outcome of one acceptance criterion.
#[derive(Debug, Clone)]
pub struct Criterion {
    pub id: usize,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

fn criterion(id: usize, name: &'static str, f: impl FnOnce() -> (bool, String)) -> Criterion {
    let t0 = Instant::now();
    let (pass, detail) = f();
    Criterion {
        id,
        name,
        pass,
        detail,
        seconds: t0.elapsed().as_secs_f64(),
    }
}

fn check(acc: &mut Vec<String>, ok: &mut bool, cond: bool, msg: String) {
    if !cond {
        *ok = false;
        acc.push(msg);
    }
}

/// 1. Poisson normalization constants and unit kernel mass.
pub fn criterion_1() -> Criterion {
    criterion(1, "poisson normalization", || {
        let mut ok = true;
        let mut bad = Vec::new();
        let pk10 = PoissonKernel::new(1, 0.0).unwrap();
        check(
            &mut bad,
            &mut ok,
            (pk10.normalization() - 1.0 / std::f64::consts::PI).abs() < 1e-8,
            format!("C_1,0 = {}", pk10.normalization()),
        );
        let pk20 = PoissonKernel::new(2, 0.0).unwrap();
        check(
            &mut bad,
            &mut ok,
            (pk20.normalization() - 0.5 / std::f64::consts::PI).abs() < 1e-8,
            format!("C_2,0 = {}", pk20.normalization()),
        );
        // kernel mass against closed forms (log-gamma oracle): the mass is
        // height-independent by the kernel's exact self-similarity, so the
        // content of the check is the normalization itself plus the sampled
        // kernel rows on a real grid at three heights
        for &alpha in &[-0.5_f64, 0.0, 0.5] {
            let pk1 = PoissonKernel::new(1, alpha).unwrap();
            let beta = std::f64::consts::PI.sqrt()
                * (crate::oracle::ln_gamma(0.5 * (1.0 - alpha))
                    - crate::oracle::ln_gamma(1.0 - 0.5 * alpha))
                .exp();
            let mass1 = pk1.normalization() * beta;
            check(
                &mut bad,
                &mut ok,
                (mass1 - 1.0).abs() < 1e-6,
                format!("n=1 alpha={alpha}: closed-form mass {mass1}"),
            );
            let pk2 = PoissonKernel::new(2, alpha).unwrap();
            let mass2 = pk2.normalization() * 2.0 * std::f64::consts::PI / (1.0 - alpha);
            check(
                &mut bad,
                &mut ok,
                (mass2 - 1.0).abs() < 1e-6,
                format!("n=2 alpha={alpha}: closed-form mass {mass2}"),
            );
            // discrete kernel rows on a grid: three heights, unit row sums
            let g = Arc::new(HalfSpaceGrid::new(1, 8.0, 64, 2.0, 8, 1.0).unwrap());
            let v: Vec<f64> = (0..64)
                .map(|i| (2.0 * std::f64::consts::PI * g.y_coord(i) / 8.0).cos())
                .collect();
            let (_u, rep) = extend(&v, &g, FracOrder::from_alpha(alpha).unwrap()).unwrap();
            check(
                &mut bad,
                &mut ok,
                rep.row_sum_dev < 1e-6,
                format!(
                    "n=1 alpha={alpha}: discrete row-sum deviation {}",
                    rep.row_sum_dev
                ),
            );
        }
        (
            ok,
            if ok {
                "constants and masses within tolerance".into()
            } else {
                bad.join("; ")
            },
        )
    })
}

/// 2. Dirichlet-to-Neumann correspondence across Fourier modes.
pub fn criterion_2() -> Criterion {
    criterion(2, "dirichlet-to-neumann correspondence", || {
        let mut ok = true;
        let mut bad = Vec::new();
        let fit0 =
            dn_operator_fit(FracOrder::from_alpha(0.0).unwrap(), &[1, 2, 3], 256, 128).unwrap();
        check(
            &mut bad,
            &mut ok,
            (fit0.d - 1.0).abs() <= 1e-3 && fit0.spread < 1e-3 && !fit0.unresolved,
            format!("alpha=0: d = {}, spread = {}", fit0.d, fit0.spread),
        );
        for &alpha in &[-0.5, 0.5] {
            let fit = dn_operator_fit(
                FracOrder::from_alpha(alpha).unwrap(),
                &[1, 2, 3, 4],
                256,
                128,
            )
            .unwrap();
            check(
                &mut bad,
                &mut ok,
                fit.spread < 2e-2 && !fit.unresolved,
                format!("alpha={alpha}: d = {}, spread = {}", fit.d, fit.spread),
            );
        }
        (
            ok,
            if ok {
                format!("d(0) = {:.6}, spreads within bounds", fit0.d)
            } else {
                bad.join("; ")
            },
        )
    })
}

/// 3. PV vs spectral route agreement on trig polynomials.
pub fn criterion_3() -> Criterion {
    criterion(3, "operator cross-validation", || {
        let grid = TorusGrid::new(1, 256, 2.0 * std::f64::consts::PI).unwrap();
        let v: Vec<f64> = (0..256)
            .map(|i| {
                let y = grid.coord(i);
                y.cos() + 0.5 * (2.0 * y).sin() - 0.3 * (3.0 * y).cos()
                    + 0.2 * (4.0 * y).sin()
                    + 0.1 * (5.0 * y).cos()
            })
            .collect();
        let mut ok = true;
        let mut worsts = Vec::new();
        for &s in &[0.25, 0.5, 0.75] {
            let sp = frac_lap_spectral(&grid, &v, s).unwrap();
            let pv = frac_lap_pv(&grid, &v, s, 2.0 * grid.spacing()).unwrap();
            let scale = sp.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
            let diff = sp
                .iter()
                .zip(&pv.values)
                .fold(0.0_f64, |a, (&x, &y)| a.max((x - y).abs()))
                / scale;
            worsts.push(format!("s={s}: {diff:.2e}"));
            if diff >= 1e-3 {
                ok = false;
            }
        }
        (ok, worsts.join(", "))
    })
}

fn layer_setup_1d(n_y: usize, m: usize, perturb: Option<(f64, f64)>) -> LayerSetup {
    let g = Arc::new(HalfSpaceGrid::new(1, 40.0, n_y, 20.0, m, 2.0).unwrap());
    let profile: Vec<f64> = (0..n_y).map(|i| (g.y_coord(i) / 2.0).tanh()).collect();
    layer_setup(
        Weight::unit(),
        boundary_reaction("scaled_sine").unwrap(),
        bulk_reaction("zero").unwrap(),
        g,
        &profile,
        Some(ClampSpec {
            dims: vec![0],
            half_width: 19.0,
        }),
        perturb,
    )
    .unwrap()
}

fn layer_error_middle_half(sol: &Solution) -> f64 {
    let g = sol.u.grid().clone();
    let pi = std::f64::consts::PI;
    let mut worst = 0.0_f64;
    for yi in 0..g.n_y() {
        let y = g.y_coord(yi);
        if y.abs() > 10.0 {
            continue;
        }
        for j in 0..=g.m() {
            let x = g.x_nodes()[j];
            if x > 10.0 {
                continue;
            }
            let want = 2.0 / pi * (y / (1.0 + x)).atan();
            worst = worst.max((sol.u.at(yi, j) - want).abs());
        }
    }
    worst
}

/// 4. Layer reproduction at 256 x 128 with a refinement-order study.
pub fn criterion_4() -> Criterion {
    criterion(4, "layer reproduction", || {
        let (sol, _p) =
            solve_layer(layer_setup_1d(256, 128, Some((0.05, 3.0))), 1e-9, 60, 2).unwrap();
        let err_fine = layer_error_middle_half(&sol);
        let mut ok = sol.converged && err_fine < 5e-3;
        let mut detail = format!("err(256x128, perturbed) = {err_fine:.3e}");
        // refinement order from unperturbed runs
        let mut errs = Vec::new();
        for &(n_y, m) in &[(64usize, 32usize), (128, 64), (256, 128)] {
            let (s, _) = solve_layer(layer_setup_1d(n_y, m, None), 1e-9, 60, 2).unwrap();
            errs.push(layer_error_middle_half(&s));
        }
        let xs: Vec<f64> = [64.0_f64, 128.0, 256.0].iter().map(|n| -(n.ln())).collect();
        let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
        let (order, _) = crate::util::linear_fit(&xs, &ys);
        detail.push_str(&format!(
            ", errors {:?}, observed order {order:.2}",
            errs.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>()
        ));
        if order < 1.5 {
            ok = false;
        }
        (ok, detail)
    })
}

/// 5. Stability audit: certified layer and destabilized counterform.
pub fn criterion_5() -> Criterion {
    criterion(5, "stability audit", || {
        let mut ok = true;
        let mut bad = Vec::new();
        let (sol, p) = solve_layer(layer_setup_1d(256, 128, None), 1e-9, 60, 1).unwrap();
        let cert = monotone_certificate(&sol.u, 0, Some(19.0)).unwrap();
        check(&mut bad, &mut ok, cert, "monotone certificate false".into());
        let form = assemble(&p, &sol.u).unwrap();
        let r = min_rayleigh(&form, 1e-6, 400, 1).unwrap();
        check(
            &mut bad,
            &mut ok,
            r.lambda >= -1e-6 * form.scale,
            format!("lambda_min = {} below -1e-6 scale", r.lambda),
        );
        // certificate and eigensolver must agree
        check(
            &mut bad,
            &mut ok,
            cert == (r.lambda >= -1e-6 * form.scale),
            "certificate and eigensolver disagree".into(),
        );
        // destabilized form on the 8x coarsened grid vs the dense oracle
        let (sol_c, p_c) = solve_layer(layer_setup_1d(32, 16, None), 1e-9, 60, 1).unwrap();
        let dform = assemble_destabilized(&p_c, &sol_c.u, 10.0).unwrap();
        let rd = min_rayleigh(&dform, 1e-7, 800, 3).unwrap();
        check(
            &mut bad,
            &mut ok,
            rd.lambda < -0.1 * dform.scale,
            format!("destabilized lambda = {}", rd.lambda),
        );
        let dense = dense_smallest_generalized(
            &|v, out| dform.a.apply(v, out),
            &dform.b_diag,
            dform.a.free(),
        );
        check(
            &mut bad,
            &mut ok,
            (rd.lambda - dense).abs() <= 0.05 * dense.abs(),
            format!("iterative {} vs dense {}", rd.lambda, dense),
        );
        (
            ok,
            if ok {
                format!(
                    "lambda = {:.3e}, destabilized {:.4} (dense {:.4})",
                    r.lambda, rd.lambda, dense
                )
            } else {
                bad.join("; ")
            },
        )
    })
}

fn layer_setup_2d(n_y: usize, m: usize) -> LayerSetup {
    let g = Arc::new(HalfSpaceGrid::new(2, 40.0, n_y, 20.0, m, 2.0).unwrap());
    let profile: Vec<f64> = (0..n_y).map(|i| (g.y_coord(i) / 2.0).tanh()).collect();
    layer_setup(
        Weight::unit(),
        boundary_reaction("scaled_sine").unwrap(),
        bulk_reaction("zero").unwrap(),
        g,
        &profile,
        Some(ClampSpec {
            dims: vec![0],
            half_width: 19.0,
        }),
        None,
    )
    .unwrap()
}

/// 6. Geometric Poincare instance on the certified stable n = 2 layer.
pub fn criterion_6() -> Criterion {
    criterion(6, "geometric poincare instance", || {
        let (sol, _p) = solve_layer(layer_setup_2d(64, 48), 1e-8, 60, 1).unwrap();
        let mut ok = sol.converged;
        let mut bad = Vec::new();
        if !ok {
            bad.push("solver did not converge".into());
        }
        let cert = monotone_certificate(&sol.u, 0, Some(19.0)).unwrap();
        check(
            &mut bad,
            &mut ok,
            cert,
            "layer not certified monotone".into(),
        );
        let g = sol.u.grid().clone();
        let eps = default_eps_grad(&sol.u).unwrap();
        let mut details = Vec::new();
        let fams = [
            PhiFamily::Capacity { r: 4.0 },
            PhiFamily::Capacity { r: 8.0 },
            PhiFamily::Bump { r: 8.0 },
        ];
        for fam in fams {
            let phi = match fam {
                PhiFamily::Capacity { r } => capacity_phi(r, &g).unwrap(),
                PhiFamily::Bump { .. } => GridFunction::from_fn(g.clone(), |y, x| {
                    fam.value((y[0] * y[0] + y[1] * y[1] + x * x).sqrt())
                })
                .unwrap(),
            };
            let gsq = GridFunction::from_fn(g.clone(), |y, x| {
                fam.grad_sq((y[0] * y[0] + y[1] * y[1] + x * x).sqrt())
            })
            .unwrap();
            let (b, _b10, sens) =
                poincare_audit_with_sensitivity(&sol.u, &Weight::unit(), &phi, Some(&gsq), eps)
                    .unwrap();
            check(
                &mut bad,
                &mut ok,
                b.holds,
                format!("{fam:?}: budget fails (slack {})", b.slack),
            );
            check(
                &mut bad,
                &mut ok,
                sens < 0.01 || (b.lhs_curv + b.lhs_tan) < 1e-8 * b.rhs,
                format!("{fam:?}: eps sensitivity {sens}"),
            );
            check(
                &mut bad,
                &mut ok,
                b.lhs_curv + b.lhs_tan < 1e-8 * b.rhs,
                format!(
                    "{fam:?}: 1-D layer lhs not negligible ({} vs rhs {})",
                    b.lhs_curv + b.lhs_tan,
                    b.rhs
                ),
            );
            details.push(format!(
                "{fam:?}: slack/rhs = {:.2e}",
                b.slack / b.rhs.max(1e-300)
            ));
        }
        (
            ok,
            if ok {
                details.join(", ")
            } else {
                bad.join("; ")
            },
        )
    })
}

/// 7. Symmetry conclusion on the layer plus the counterexample rejection.
pub fn criterion_7() -> Criterion {
    criterion(7, "one-dimensional symmetry", || {
        let (sol, _p) = solve_layer(layer_setup_2d(64, 48), 1e-8, 60, 1).unwrap();
        let mut ok = true;
        let mut bad = Vec::new();
        let fit = symmetry_fit(&sol.u, &Weight::unit(), Some(19.0)).unwrap();
        check(
            &mut bad,
            &mut ok,
            fit.residual < 5e-2,
            format!("layer residual {}", fit.residual),
        );
        check(
            &mut bad,
            &mut ok,
            fit.profile_rms < 5e-2,
            format!("layer profile rms {}", fit.profile_rms),
        );
        // the unbounded saddle counterexample
        let g = sol.u.grid().clone();
        let saddle = GridFunction::from_fn(g.clone(), |y, _x| y[0] * y[0] - y[1] * y[1]).unwrap();
        let cfit = symmetry_fit(&saddle, &Weight::unit(), Some(16.0)).unwrap();
        check(
            &mut bad,
            &mut ok,
            cfit.residual > 0.5,
            format!("saddle residual {}", cfit.residual),
        );
        let eg = energy_growth(&saddle, &Weight::unit(), &[2.0, 4.0, 8.0, 16.0]).unwrap();
        let ex = eg.fitted_exponent.unwrap_or(0.0);
        check(
            &mut bad,
            &mut ok,
            ex >= 4.5,
            format!("saddle energy-growth exponent {ex}"),
        );
        (
            ok,
            if ok {
                format!(
                    "layer residual {:.2e}, rms {:.2e}; saddle residual {:.3}, exponent {:.2}",
                    fit.residual, fit.profile_rms, cfit.residual, ex
                )
            } else {
                bad.join("; ")
            },
        )
    })
}

/// 8. Quadratic energy growth of the flat layer.
pub fn criterion_8() -> Criterion {
    criterion(8, "energy growth of the flat layer", || {
        let g = Arc::new(HalfSpaceGrid::new(2, 40.0, 64, 20.0, 48, 2.0).unwrap());
        let pi = std::f64::consts::PI;
        let u = GridFunction::from_fn(g, |y, x| 2.0 / pi * (y[0] / (1.0 + x)).atan()).unwrap();
        let eg = energy_growth(&u, &Weight::unit(), &[2.0, 4.0, 8.0, 16.0]).unwrap();
        let ex = eg.fitted_exponent.unwrap_or(f64::INFINITY);
        (
            ex <= 2.05,
            format!("fitted exponent {ex:.3} over dyadic radii"),
        )
    })
}

/// 9. Annulus bound on random fields and the closed-form case.
pub fn criterion_9() -> Criterion {
    criterion(9, "annulus bound", || {
        let mut ok = true;
        let mut bad = Vec::new();
        let g = Arc::new(HalfSpaceGrid::new(1, 24.0, 192, 12.0, 144, 1.0).unwrap());
        let one = GridFunction::constant(g.clone(), 1.0).unwrap();
        let r = 9.0;
        let chk = crate::grid::verify_annulus_bound(&one, r).unwrap();
        let lhs_exact = std::f64::consts::PI / 4.0 * r.ln();
        let rhs_exact = std::f64::consts::PI / 2.0 * r.ln() + std::f64::consts::PI / 2.0;
        check(
            &mut bad,
            &mut ok,
            chk.holds
                && (chk.lhs - lhs_exact).abs() / lhs_exact < 0.03
                && (chk.rhs - rhs_exact).abs() / rhs_exact < 0.03,
            format!(
                "closed form: lhs {} vs {}, rhs {} vs {}",
                chk.lhs, lhs_exact, chk.rhs, rhs_exact
            ),
        );
        let gs = Arc::new(HalfSpaceGrid::new(1, 16.0, 48, 8.0, 40, 1.5).unwrap());
        let mut rng = SplitMix64::new(2024);
        let mut all_hold = true;
        for _ in 0..100 {
            let vals: Vec<f64> = (0..gs.node_count()).map(|_| rng.next_f64() * 3.0).collect();
            let h = GridFunction::new(gs.clone(), vals).unwrap();
            let rr = 4.0 + 3.9 * rng.next_f64();
            let c = crate::grid::verify_annulus_bound(&h, rr).unwrap();
            all_hold &= c.holds;
        }
        check(
            &mut bad,
            &mut ok,
            all_hold,
            "a seeded random field failed".into(),
        );
        (
            ok,
            if ok {
                "closed form within 3%, 100/100 random fields hold".into()
            } else {
                bad.join("; ")
            },
        )
    })
}

/// 10. A2 constants and the gradient/energy compatibility test.
pub fn criterion_10() -> Criterion {
    criterion(10, "structural infrastructure", || {
        let mut ok = true;
        let mut bad = Vec::new();
        for &alpha in &[0.0, 0.5, 0.9] {
            let w = Weight::power_law(alpha).unwrap();
            let kappa = w.a2_constant(2.0, 64).unwrap();
            let expect = 1.0 / (1.0 - alpha * alpha);
            check(
                &mut bad,
                &mut ok,
                (kappa - expect).abs() / expect < 1e-6,
                format!("A2(alpha={alpha}) = {kappa} vs {expect}"),
            );
        }
        // gradient/energy finite-difference compatibility on a mixed problem
        let g = Arc::new(HalfSpaceGrid::new(1, 4.0, 16, 2.0, 12, 2.0).unwrap());
        let p = crate::solver::BoundaryReactionProblem {
            weight: Weight::power_law(0.4).unwrap(),
            f: boundary_reaction("scaled_sine").unwrap(),
            g: bulk_reaction("power_g").unwrap(),
            grid: g.clone(),
            top_bc: vec![0.1; 16],
            clamp: None,
        };
        let mut rng = SplitMix64::new(42);
        let mut uv = vec![0.0; g.node_count()];
        for v in uv.iter_mut() {
            *v = rng.uniform(-0.7, 0.7);
        }
        for yi in 0..16 {
            uv[g.idx(yi, g.m())] = 0.1;
        }
        let u = GridFunction::new(g.clone(), uv).unwrap();
        let r = residual(&p, &u).unwrap();
        let free = p.free_mask();
        let h = 1e-5;
        let mut worst = 0.0_f64;
        for dir in 0..20 {
            let mut rng_d = SplitMix64::new(900 + dir);
            let delta: Vec<f64> = (0..g.node_count())
                .map(|i| {
                    if free[i] {
                        rng_d.uniform(-1.0, 1.0)
                    } else {
                        0.0
                    }
                })
                .collect();
            let mut up = u.values().to_vec();
            let mut dn = u.values().to_vec();
            for i in 0..up.len() {
                up[i] += h * delta[i];
                dn[i] -= h * delta[i];
            }
            let ep = energy(&p, &GridFunction::new(g.clone(), up).unwrap()).unwrap();
            let en = energy(&p, &GridFunction::new(g.clone(), dn).unwrap()).unwrap();
            let fd = (ep - en) / (2.0 * h);
            let dot: f64 = r.iter().zip(&delta).map(|(&a, &b)| a * b).sum();
            worst = worst.max((fd - dot).abs() / dot.abs().max(1e-12));
        }
        check(
            &mut bad,
            &mut ok,
            worst < 1e-6,
            format!("gradient/energy mismatch {worst}"),
        );
        (
            ok,
            if ok {
                format!("A2 exact, compatibility {worst:.2e}")
            } else {
                bad.join("; ")
            },
        )
    })
}

/// Runs the whole suite in order.
pub fn run_all() -> Vec<Criterion> {
    vec![
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(),
        criterion_6(),
        criterion_7(),
        criterion_8(),
        criterion_9(),
        criterion_10(),
    ]
}
