//! The second-variation quadratic form and its smallest Rayleigh quotient.
//!
//! The form A is *the same object* as the solver's Newton matrix (shared
//! assembly; the tests pin this with a coefficient hash). The normalizing
//! form B is the weighted mass plus a boundary mass term: the destabilizing
//! term of the second variation lives on the boundary, and without boundary
//! mass the quotient degenerates under grading refinement.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::solver::{
    assemble_operator, coefficients, AssembledOperator, BoundaryReactionProblem, ShiftedSlope,
};
use crate::util::SplitMix64;

/// Discretized second-variation form A with its normalizing mass form B.
pub struct StabilityForm {
    pub a: AssembledOperator,
    /// diagonal of B (weighted mass + boundary mass); 1.0 at non-free nodes
    pub b_diag: Vec<f64>,
    /// max(1, |u|_inf) of the audited state
    pub scale: f64,
}

/// Assembles the stability form at state u; A is bit-identical to the
/// solver's Newton matrix at the same state.
pub fn assemble(p: &BoundaryReactionProblem, u: &GridFunction) -> Result<StabilityForm> {
    let a = assemble_operator(p, u)?;
    let b_diag = mass_form(p)?;
    Ok(StabilityForm {
        a,
        b_diag,
        scale: u.max_abs().max(1.0),
    })
}

/// Assembles the artificially destabilized form: f' shifted by `shift`
/// (f and F untouched). Used by audits that need a constructed violation.
pub fn assemble_destabilized(
    p: &BoundaryReactionProblem,
    u: &GridFunction,
    shift: f64,
) -> Result<StabilityForm> {
    let modified = BoundaryReactionProblem {
        weight: p.weight.clone(),
        f: Arc::new(ShiftedSlope {
            inner: p.f.clone(),
            shift,
        }),
        g: p.g.clone(),
        grid: p.grid.clone(),
        top_bc: p.top_bc.clone(),
        clamp: p.clamp.clone(),
    };
    assemble(&modified, u)
}

fn mass_form(p: &BoundaryReactionProblem) -> Result<Vec<f64>> {
    let g = &p.grid;
    let co = coefficients(g, &p.weight)?;
    let x = g.x_nodes();
    let m = g.m();
    let hn = co.bdry_mass;
    // mass-lumped weighted masses per level: (W_{j-1} + W_j)/2
    let mut level = vec![0.0; m + 1];
    for j in 0..=m {
        let mut s = 0.0;
        if j > 0 {
            s += p.weight.cell_integral(x[j - 1], x[j])?;
        }
        if j < m {
            s += p.weight.cell_integral(x[j], x[j + 1])?;
        }
        level[j] = 0.5 * s * hn;
    }
    let free = p.free_mask();
    let mut b = vec![1.0; g.node_count()];
    for yi in 0..g.nodes_per_level() {
        for j in 0..m {
            let id = g.idx(yi, j);
            if !free[id] {
                continue;
            }
            b[id] = level[j] + if j == 0 { hn } else { 0.0 };
        }
    }
    Ok(b)
}

/// Result of the smallest-Rayleigh-quotient iteration.
#[derive(Debug, Clone)]
pub struct RayleighResult {
    pub lambda: f64,
    pub xi: Vec<f64>,
    pub iters: usize,
    pub converged: bool,
    /// accepted Rayleigh quotients, nonincreasing by construction
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// CG for the shifted system (A - sigma B) z = rhs; reports indefiniteness.
fn shifted_cg(
    form: &StabilityForm,
    sigma: f64,
    rhs: &[f64],
    z: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
) -> std::result::Result<(), ()> {
    let n = rhs.len();
    let free = form.a.free();
    for v in z.iter_mut() {
        *v = 0.0;
    }
    let apply = |v: &[f64], out: &mut [f64]| {
        form.a.apply(v, out);
        for i in 0..n {
            if free[i] {
                out[i] -= sigma * form.b_diag[i] * v[i];
            }
        }
    };
    // Jacobi preconditioner of the shifted operator
    let mut pre = form.a.preconditioner();
    for i in 0..n {
        if free[i] {
            pre[i] = (pre[i] - sigma * form.b_diag[i]).max(1e-12 * pre[i].abs().max(1e-300));
        }
    }
    let mut r = rhs.to_vec();
    let norm0 = dot(&r, &r).sqrt();
    if norm0 == 0.0 {
        return Ok(());
    }
    let mut zv: Vec<f64> = r.iter().zip(&pre).map(|(&ri, &pi)| ri / pi).collect();
    let mut p = zv.clone();
    let mut rz = dot(&r, &zv);
    let mut ap = vec![0.0; n];
    for _ in 0..max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(());
        }
        let alpha = rz / pap;
        for i in 0..n {
            z[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if dot(&r, &r).sqrt() <= rel_tol * norm0 {
            return Ok(());
        }
        for i in 0..n {
            zv[i] = r[i] / pre[i];
        }
        let rzn = dot(&r, &zv);
        let beta = rzn / rz;
        rz = rzn;
        for i in 0..n {
            p[i] = zv[i] + beta * p[i];
        }
    }
    Ok(())
}

/// Gershgorin lower bound for the pencil (A, diag B): the off-diagonal row
/// sums of the stiffness cannot exceed its diagonal, so
/// lambda_min >= min_i diag_reaction_i / b_i.
fn gershgorin_lower(form: &StabilityForm) -> f64 {
    let free = form.a.free();
    let mut lo = f64::INFINITY;
    for i in 0..form.b_diag.len() {
        if free[i] {
            lo = lo.min(form.a.diag[i] / form.b_diag[i]);
        }
    }
    if lo.is_finite() {
        lo
    } else {
        0.0
    }
}

/// Smallest generalized eigenvalue of (A, B) by shifted inverse iteration
/// with a two-vector Ritz update (which keeps the Rayleigh-quotient sequence
/// nonincreasing) and deflation-free restarts on stagnation. The shift
/// starts below the Gershgorin bound and tightens geometrically toward the
/// quotient; indefinite solves back it off.
pub fn min_rayleigh(
    form: &StabilityForm,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<RayleighResult> {
    if tol <= 0.0 {
        return Err(Error::Argument("tolerance must be positive".into()));
    }
    let n = form.b_diag.len();
    let free = form.a.free();
    let nf = free.iter().filter(|&&f| f).count();
    if nf == 0 {
        return Err(Error::Argument("no free nodes to iterate on".into()));
    }
    let mut rng = SplitMix64::new(seed);
    let mut x = vec![0.0; n];
    for i in 0..n {
        if free[i] {
            x[i] = rng.uniform(-1.0, 1.0);
        }
    }
    let b_norm = |v: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            if free[i] {
                s += form.b_diag[i] * v[i] * v[i];
            }
        }
        s.sqrt()
    };
    let normalize = |v: &mut [f64]| {
        let nb = b_norm(v);
        for vi in v.iter_mut() {
            *vi /= nb;
        }
    };
    normalize(&mut x);
    let mut ax = vec![0.0; n];
    form.a.apply(&x, &mut ax);
    let mut lambda = dot(&x, &ax);
    let mut history = vec![lambda];
    let gersh = gershgorin_lower(form);
    let mut sigma = gersh - 1e-3 * (1.0 + gersh.abs());
    let mut stagnant = 0;
    let mut best_resid = f64::INFINITY;
    let mut converged = false;
    let mut iters = 0;

    for _ in 0..max_iter {
        iters += 1;
        // convergence check: |A x - lambda B x| <= tol |B x|
        let mut resid = 0.0;
        let mut bxn = 0.0;
        for i in 0..n {
            if free[i] {
                let bx = form.b_diag[i] * x[i];
                resid += (ax[i] - lambda * bx) * (ax[i] - lambda * bx);
                bxn += bx * bx;
            }
        }
        let resid = resid.sqrt();
        if std::env::var("FRACEXT_DEBUG_EIG").is_ok() {
            eprintln!("eig iter {iters}: lambda {lambda:.14e} resid {:.3e} thresh {:.3e} sigma-gap {:.3e}",
                resid, tol * bxn.sqrt(), lambda - sigma);
        }
        if resid <= tol * bxn.sqrt() {
            converged = true;
            break;
        }
        if resid < 0.9 * best_resid {
            best_resid = resid;
            stagnant = 0;
        } else {
            stagnant += 1;
        }
        // inverse-iteration solve strictly below the smallest eigenvalue;
        // a stagnating run enriches the right-hand side with seeded noise
        // (the Ritz projection keeps the quotient monotone regardless)
        let mut rhs: Vec<f64> = (0..n)
            .map(|i| if free[i] { form.b_diag[i] * x[i] } else { 0.0 })
            .collect();
        if stagnant >= 4 {
            let amp = bxn.sqrt() / (nf as f64).sqrt();
            for (i, r) in rhs.iter_mut().enumerate() {
                if free[i] {
                    *r += 0.5 * amp * rng.uniform(-1.0, 1.0) * form.b_diag[i];
                }
            }
            stagnant = 0;
        }
        let mut z = vec![0.0; n];
        let mut ok = false;
        for _try in 0..12 {
            if shifted_cg(form, sigma, &rhs, &mut z, 1e-10, 3000).is_ok() {
                ok = true;
                break;
            }
            // overshoot: retreat geometrically from the quotient
            sigma = lambda - 2.0 * (lambda - sigma).max(1e-12 * (1.0 + lambda.abs()));
        }
        if !ok {
            return Err(Error::Internal(
                "shifted solves stayed indefinite; cannot bracket the smallest eigenvalue".into(),
            ));
        }
        // two-vector Ritz step on span{x, z}: B-orthonormalize z against x,
        // then solve the plain symmetric 2x2 problem. The Ritz vector
        // minimizes the quotient over the span, so rq(x) never increases.
        let bdot = |a: &[f64], b: &[f64]| -> f64 {
            let mut s = 0.0;
            for i in 0..n {
                if free[i] {
                    s += form.b_diag[i] * a[i] * b[i];
                }
            }
            s
        };
        let proj = bdot(&x, &z) / bdot(&x, &x);
        for i in 0..n {
            z[i] -= proj * x[i];
        }
        let zb = bdot(&z, &z).sqrt();
        if zb > 1e-14 {
            for zi in z.iter_mut() {
                *zi /= zb;
            }
            let mut az = vec![0.0; n];
            form.a.apply(&z, &mut az);
            // with B-orthonormal {x, z}: [[axx, axz], [axz, azz]]
            let (axx, axz, azz) = (dot(&x, &ax), dot(&x, &az), dot(&z, &az));
            let half_tr = 0.5 * (axx + azz);
            let rad = (0.25 * (axx - azz) * (axx - azz) + axz * axz).sqrt();
            let theta = half_tr - rad; // smaller eigenvalue
                                       // eigenvector (c0, c1) of the 2x2
            let (c0, c1) = if axz.abs() > 1e-300 {
                // row 2 of (A - theta I) c = 0: c ~ (theta - azz, axz)
                let v = (theta - azz, axz);
                let nv = (v.0 * v.0 + v.1 * v.1).sqrt();
                (v.0 / nv, v.1 / nv)
            } else if axx <= azz {
                (1.0, 0.0)
            } else {
                (0.0, 1.0)
            };
            for i in 0..n {
                x[i] = c0 * x[i] + c1 * z[i];
            }
            normalize(&mut x);
            form.a.apply(&x, &mut ax);
            lambda = dot(&x, &ax);
        }
        history.push(lambda);
        // tighten the shift toward the quotient for a near-quadratic endgame
        sigma = sigma.max(lambda - 0.3 * (lambda - sigma));
    }
    Ok(RayleighResult {
        lambda,
        xi: x,
        iters,
        converged,
        history,
    })
}

/// True iff all discrete forward differences along the given y-direction are
/// strictly positive inside the window (monotone layers are stable, and the
/// certificate avoids eigensolving altogether).
pub fn monotone_certificate(
    u: &GridFunction,
    direction: usize,
    window_half_width: Option<f64>,
) -> Result<bool> {
    let g = u.grid().clone();
    if direction >= g.n() {
        return Err(Error::Argument(format!(
            "direction {direction} out of range for n = {}",
            g.n()
        )));
    }
    let ny = g.n_y();
    let w = window_half_width.unwrap_or(f64::INFINITY);
    for yi in 0..g.nodes_per_level() {
        let (i1, i2) = if g.n() == 1 {
            (yi, 0)
        } else {
            (yi / ny, yi % ny)
        };
        let id = if direction == 0 { i1 } else { i2 };
        if id + 1 >= ny {
            continue; // wrap pair is outside any window by convention
        }
        let y0 = g.y_coord(id);
        let y1 = g.y_coord(id + 1);
        if y0.abs() > w || y1.abs() > w {
            continue;
        }
        let next = if direction == 0 {
            (i1 + 1) * if g.n() == 1 { 1 } else { ny } + if g.n() == 1 { 0 } else { i2 }
        } else {
            i1 * ny + (i2 + 1)
        };
        for j in 0..=g.m() {
            if u.at(next, j) - u.at(yi, j) <= 0.0 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}
