//! Level-set geometry of u and the numerical audits of the geometric
//! Poincare inequality and the one-dimensional symmetry conclusion.
//!
//! All slice estimators are node-based: the total curvature uses the
//! divergence of the normalized horizontal gradient (one fewer derivative
//! squared than the Hessian formula), the tangential term differentiates
//! |grad_y u| along the rotated normal, and every integral uses the exact
//! weight cell-integrals in x. The capacity test functions carry analytic
//! gradients; a sampled phi falls back to discrete differencing.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{gradient, GridFunction, HalfSpaceGrid};
use crate::weights::Weight;

/// Per-slice mask of regular points: |grad_y u| > eps_grad.
/// `count == 0` signals a slice without regular points; the estimators then
/// return zero fields and the budget integrals skip the slice.
#[derive(Debug, Clone)]
pub struct RegularMask {
    pub mask: Vec<bool>,
    pub eps_grad: f64,
    pub count: usize,
}

fn slice_gradients(u: &GridFunction, j: usize) -> (Vec<f64>, Vec<f64>) {
    let g = u.grid().clone();
    let ny = g.n_y();
    let h = g.h_y();
    let mut g1 = vec![0.0; ny * ny];
    let mut g2 = vec![0.0; ny * ny];
    for i1 in 0..ny {
        for i2 in 0..ny {
            let up1 = u.at(((i1 + 1) % ny) * ny + i2, j);
            let dn1 = u.at(((i1 + ny - 1) % ny) * ny + i2, j);
            let up2 = u.at(i1 * ny + (i2 + 1) % ny, j);
            let dn2 = u.at(i1 * ny + (i2 + ny - 1) % ny, j);
            g1[i1 * ny + i2] = (up1 - dn1) / (2.0 * h);
            g2[i1 * ny + i2] = (up2 - dn2) / (2.0 * h);
        }
    }
    (g1, g2)
}

/// Builds the regular-point mask of a fixed-x slice.
pub fn regular_mask(u: &GridFunction, x_index: usize, eps_grad: f64) -> Result<RegularMask> {
    if u.grid().n() != 2 {
        return Err(Error::Argument("slice masks need n = 2".into()));
    }
    if x_index > u.grid().m() {
        return Err(Error::Argument(format!("x index {x_index} out of range")));
    }
    let (g1, g2) = slice_gradients(u, x_index);
    let mask: Vec<bool> = g1
        .iter()
        .zip(&g2)
        .map(|(&a, &b)| (a * a + b * b).sqrt() > eps_grad)
        .collect();
    let count = mask.iter().filter(|&&m| m).count();
    Ok(RegularMask {
        mask,
        eps_grad,
        count,
    })
}

/// Total curvature K = |div_y (grad_y u / |grad_y u|)| on the masked nodes
/// of a slice (zero elsewhere). For n = 1 level sets are points and K = 0 by
/// convention.
pub fn total_curvature(u: &GridFunction, x_index: usize, mask: &RegularMask) -> Result<Vec<f64>> {
    let g = u.grid().clone();
    if g.n() == 1 {
        return Ok(vec![0.0; g.nodes_per_level()]);
    }
    let ny = g.n_y();
    let h = g.h_y();
    let (g1, g2) = slice_gradients(u, x_index);
    // guarded unit normals everywhere (garbage direction only where the
    // gradient vanishes, and those nodes are off-mask)
    let mut n1 = vec![0.0; ny * ny];
    let mut n2 = vec![0.0; ny * ny];
    for k in 0..ny * ny {
        let norm = (g1[k] * g1[k] + g2[k] * g2[k]).sqrt();
        if norm > 1e-300 {
            n1[k] = g1[k] / norm;
            n2[k] = g2[k] / norm;
        }
    }
    let mut out = vec![0.0; ny * ny];
    for i1 in 0..ny {
        for i2 in 0..ny {
            let k = i1 * ny + i2;
            if !mask.mask[k] {
                continue;
            }
            let d1 =
                (n1[((i1 + 1) % ny) * ny + i2] - n1[((i1 + ny - 1) % ny) * ny + i2]) / (2.0 * h);
            let d2 = (n2[i1 * ny + (i2 + 1) % ny] - n2[i1 * ny + (i2 + ny - 1) % ny]) / (2.0 * h);
            out[k] = (d1 + d2).abs();
        }
    }
    Ok(out)
}

/// |grad_L |grad_y u||: the tangential derivative of the gradient magnitude
/// along the level line, on masked nodes.
///
/// The magnitude is differentiated through the chain rule
/// grad|g| = (H g)/|g| with the centered-difference Hessian H, which is
/// exact on quadratics; differencing |g| itself leaks O(h^2) into the
/// tangential direction even for radial fields.
pub fn tangential_gradient_norm(
    u: &GridFunction,
    x_index: usize,
    mask: &RegularMask,
) -> Result<Vec<f64>> {
    let g = u.grid().clone();
    if g.n() != 2 {
        return Err(Error::Argument(
            "the tangential gradient needs n = 2".into(),
        ));
    }
    let ny = g.n_y();
    let h = g.h_y();
    let (g1, g2) = slice_gradients(u, x_index);
    let at = |i1: usize, i2: usize| u.at((i1 % ny) * ny + (i2 % ny), x_index);
    let mut out = vec![0.0; ny * ny];
    for i1 in 0..ny {
        for i2 in 0..ny {
            let k = i1 * ny + i2;
            if !mask.mask[k] {
                continue;
            }
            let (ip1, im1) = ((i1 + 1) % ny, (i1 + ny - 1) % ny);
            let (ip2, im2) = ((i2 + 1) % ny, (i2 + ny - 1) % ny);
            // symmetric expression forms keep the estimator bit-exact under
            // the grid's rotation group
            let h11 = ((at(ip1, i2) + at(im1, i2)) - 2.0 * at(i1, i2)) / (h * h);
            let h22 = ((at(i1, ip2) + at(i1, im2)) - 2.0 * at(i1, i2)) / (h * h);
            let h12 =
                ((at(ip1, ip2) + at(im1, im2)) - (at(ip1, im2) + at(im1, ip2))) / (4.0 * h * h);
            let norm = (g1[k] * g1[k] + g2[k] * g2[k]).sqrt().max(1e-300);
            let dm1 = (h11 * g1[k] + h12 * g2[k]) / norm;
            let dm2 = (h12 * g1[k] + h22 * g2[k]) / norm;
            let (t1, t2) = (-g2[k] / norm, g1[k] / norm);
            out[k] = (t1 * dm1 + t2 * dm2).abs();
        }
    }
    Ok(out)
}

/// The phi test family of the audits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhiFamily {
    /// log R inside B_sqrt(R), 2 log(R/|X|) in the annulus, 0 outside.
    Capacity { r: f64 },
    /// smooth radial bump (1 - |X|^2/R^2)_+^2.
    Bump { r: f64 },
}

impl PhiFamily {
    pub fn value(&self, radius: f64) -> f64 {
        match *self {
            PhiFamily::Capacity { r } => {
                if radius <= r.sqrt() {
                    r.ln()
                } else if radius < r {
                    2.0 * (r / radius).ln()
                } else {
                    0.0
                }
            }
            PhiFamily::Bump { r } => {
                let q = 1.0 - radius * radius / (r * r);
                if q > 0.0 {
                    q * q
                } else {
                    0.0
                }
            }
        }
    }

    /// |grad phi|^2, exact.
    pub fn grad_sq(&self, radius: f64) -> f64 {
        match *self {
            PhiFamily::Capacity { r } => {
                if radius > r.sqrt() && radius < r {
                    4.0 / (radius * radius)
                } else {
                    0.0
                }
            }
            PhiFamily::Bump { r } => {
                let q = 1.0 - radius * radius / (r * r);
                if q > 0.0 {
                    let d = -4.0 * radius * q / (r * r);
                    d * d
                } else {
                    0.0
                }
            }
        }
    }

    pub fn support_radius(&self) -> f64 {
        match *self {
            PhiFamily::Capacity { r } | PhiFamily::Bump { r } => r,
        }
    }
}

fn node_radius(g: &HalfSpaceGrid, yi: usize, j: usize) -> f64 {
    let ny = g.n_y();
    let (y1, y2) = if g.n() == 1 {
        (g.y_coord(yi), 0.0)
    } else {
        (g.y_coord(yi / ny), g.y_coord(yi % ny))
    };
    (y1 * y1 + y2 * y2 + g.x_nodes()[j] * g.x_nodes()[j]).sqrt()
}

/// Samples the capacity function phi_R on the grid.
pub fn capacity_phi(r: f64, grid: &Arc<HalfSpaceGrid>) -> Result<GridFunction> {
    if r < 4.0 {
        return Err(Error::Argument(format!(
            "capacity radius must be >= 4, got {r}"
        )));
    }
    if r > grid.inscribed_radius() {
        return Err(Error::Argument(format!(
            "capacity radius {r} exceeds the inscribed radius {}",
            grid.inscribed_radius()
        )));
    }
    let fam = PhiFamily::Capacity { r };
    let mut vals = vec![0.0; grid.node_count()];
    for yi in 0..grid.nodes_per_level() {
        for j in 0..=grid.m() {
            vals[grid.idx(yi, j)] = fam.value(node_radius(grid, yi, j));
        }
    }
    GridFunction::new(grid.clone(), vals)
}

/// The three integrals of the geometric Poincare inequality with verdict.
#[derive(Debug, Clone, Copy)]
pub struct PoincareBudget {
    pub lhs_curv: f64,
    pub lhs_tan: f64,
    pub rhs: f64,
    pub holds: bool,
    pub slack: f64,
}

const TOL_GEO: f64 = 1e-6;

/// Assembles the three budget integrals slice by slice.
///
/// `phi` may be any grid function vanishing outside a ball inside the box
/// (checked); analytic |grad phi|^2 is used for the built-in family,
/// discrete differencing otherwise.
pub fn poincare_audit(
    u: &GridFunction,
    w: &Weight,
    phi: &GridFunction,
    phi_grad_sq: Option<&GridFunction>,
    eps_grad: f64,
) -> Result<PoincareBudget> {
    let g = u.grid().clone();
    if g.n() != 2 {
        return Err(Error::Argument("the Poincare audit needs n = 2".into()));
    }
    if phi.grid().as_ref() != g.as_ref() {
        return Err(Error::Shape("phi lives on a different grid".into()));
    }
    // compact support check: phi must vanish outside some ball inside the box
    let inscribed = g.inscribed_radius();
    for yi in 0..g.nodes_per_level() {
        for j in 0..=g.m() {
            if phi.at(yi, j) != 0.0 && node_radius(&g, yi, j) > inscribed + 1e-12 {
                return Err(Error::Argument(
                    "phi does not vanish outside a ball inside the box".into(),
                ));
            }
        }
    }
    let grad_sq_field = match phi_grad_sq {
        Some(f) => f.clone(),
        None => crate::grid::gradient_norm_sq(phi)?,
    };
    // mu-weighted level masses
    let x = g.x_nodes();
    let m = g.m();
    let mut level = vec![0.0; m + 1];
    for j in 0..=m {
        let mut s = 0.0;
        if j > 0 {
            s += w.cell_integral(x[j - 1], x[j])?;
        }
        if j < m {
            s += w.cell_integral(x[j], x[j + 1])?;
        }
        level[j] = 0.5 * s;
    }
    let h2 = g.h_y() * g.h_y();
    let mut lhs_curv = 0.0;
    let mut lhs_tan = 0.0;
    let mut rhs = 0.0;
    for j in 0..=m {
        let mask = regular_mask(u, j, eps_grad)?;
        let curv = total_curvature(u, j, &mask)?;
        let tang = tangential_gradient_norm(u, j, &mask)?;
        let (g1, g2) = slice_gradients(u, j);
        let mut sc = 0.0;
        let mut st = 0.0;
        let mut sr = 0.0;
        for k in 0..g.nodes_per_level() {
            let p = phi.at(k, j);
            let gsq = g1[k] * g1[k] + g2[k] * g2[k];
            if mask.mask[k] {
                sc += p * p * curv[k] * curv[k] * gsq;
                st += p * p * tang[k] * tang[k];
            }
            sr += gsq * grad_sq_field.at(k, j);
        }
        lhs_curv += level[j] * h2 * sc;
        lhs_tan += level[j] * h2 * st;
        rhs += level[j] * h2 * sr;
    }
    let slack = rhs - lhs_curv - lhs_tan;
    Ok(PoincareBudget {
        lhs_curv,
        lhs_tan,
        rhs,
        holds: slack >= -TOL_GEO * rhs,
        slack,
    })
}

/// Runs the audit at eps_grad and eps_grad/10; the relative spread of the
/// left-hand side quantifies the mask sensitivity.
pub fn poincare_audit_with_sensitivity(
    u: &GridFunction,
    w: &Weight,
    phi: &GridFunction,
    phi_grad_sq: Option<&GridFunction>,
    eps_grad: f64,
) -> Result<(PoincareBudget, PoincareBudget, f64)> {
    let a = poincare_audit(u, w, phi, phi_grad_sq, eps_grad)?;
    let b = poincare_audit(u, w, phi, phi_grad_sq, eps_grad / 10.0)?;
    let la = a.lhs_curv + a.lhs_tan;
    let lb = b.lhs_curv + b.lhs_tan;
    let sens = (la - lb).abs() / la.abs().max(lb.abs()).max(1e-300 * a.rhs.max(1e-300));
    Ok((a, b, sens))
}

/// Default mask threshold: 1e-6 of the largest horizontal gradient.
pub fn default_eps_grad(u: &GridFunction) -> Result<f64> {
    let comps = gradient(u)?;
    let mut worst = 0.0_f64;
    let per = u.grid().nodes_per_level();
    for yi in 0..per {
        for j in 0..=u.grid().m() {
            let mut s = 0.0;
            for c in comps.iter().take(u.grid().n()) {
                s += c.at(yi, j) * c.at(yi, j);
            }
            worst = worst.max(s.sqrt());
        }
    }
    Ok(1e-6 * worst)
}

/// One-dimensional symmetry diagnostics.
#[derive(Debug, Clone)]
pub struct SymmetryFit {
    /// principal direction; `None` when the horizontal gradient vanishes
    pub omega: Option<[f64; 2]>,
    /// relative mass of the gradient orthogonal to omega, in [0, 1]
    pub residual: f64,
    /// RMS misfit of u against the best binned 1-D profile, over the range
    pub profile_rms: f64,
}

/// Fits the best direction omega and 1-D profile u_o(omega . y, x).
///
/// `window_half_width` restricts the statistics to |y_d| <= w; layer states
/// wrap at the torus seam and the window keeps the wrap columns out.
pub fn symmetry_fit(
    u: &GridFunction,
    w: &Weight,
    window_half_width: Option<f64>,
) -> Result<SymmetryFit> {
    let g = u.grid().clone();
    if g.n() != 2 {
        return Err(Error::Argument("the symmetry fit needs n = 2".into()));
    }
    let ny = g.n_y();
    let win = window_half_width.unwrap_or(f64::INFINITY);
    let x = g.x_nodes();
    let m = g.m();
    let mut level = vec![0.0; m + 1];
    for j in 0..=m {
        let mut s = 0.0;
        if j > 0 {
            s += w.cell_integral(x[j - 1], x[j])?;
        }
        if j < m {
            s += w.cell_integral(x[j], x[j + 1])?;
        }
        level[j] = 0.5 * s;
    }
    // mu-weighted second-moment matrix of the horizontal gradient
    let mut m11 = 0.0;
    let mut m12 = 0.0;
    let mut m22 = 0.0;
    for j in 0..=m {
        let (g1, g2) = slice_gradients(u, j);
        for i1 in 0..ny {
            if g.y_coord(i1).abs() > win {
                continue;
            }
            for i2 in 0..ny {
                if g.y_coord(i2).abs() > win {
                    continue;
                }
                let k = i1 * ny + i2;
                m11 += level[j] * g1[k] * g1[k];
                m12 += level[j] * g1[k] * g2[k];
                m22 += level[j] * g2[k] * g2[k];
            }
        }
    }
    let trace = m11 + m22;
    if trace <= 1e-300 {
        return Ok(SymmetryFit {
            omega: None,
            residual: 0.0,
            profile_rms: 0.0,
        });
    }
    // eigenpair of the 2x2 moment matrix
    let half = 0.5 * (m11 + m22);
    let rad = (0.25 * (m11 - m22) * (m11 - m22) + m12 * m12).sqrt();
    let (l_max, l_min) = (half + rad, half - rad);
    let omega = {
        let (c0, c1) = if m12.abs() > 1e-300 {
            (m12, l_max - m11)
        } else if m11 >= m22 {
            (1.0, 0.0)
        } else {
            (0.0, 1.0)
        };
        let n = (c0 * c0 + c1 * c1).sqrt();
        [c0 / n, c1 / n]
    };
    let residual = (l_min.max(0.0) / trace).sqrt();

    // binned 1-D profile in s = omega . y per height
    let h = g.h_y();
    let s_of = |i1: usize, i2: usize| omega[0] * g.y_coord(i1) + omega[1] * g.y_coord(i2);
    let mut s_min = f64::INFINITY;
    let mut s_max = f64::NEG_INFINITY;
    let mut u_min = f64::INFINITY;
    let mut u_max = f64::NEG_INFINITY;
    for i1 in 0..ny {
        if g.y_coord(i1).abs() > win {
            continue;
        }
        for i2 in 0..ny {
            if g.y_coord(i2).abs() > win {
                continue;
            }
            let s = s_of(i1, i2);
            s_min = s_min.min(s);
            s_max = s_max.max(s);
            for j in 0..=m {
                let v = u.at(i1 * ny + i2, j);
                u_min = u_min.min(v);
                u_max = u_max.max(v);
            }
        }
    }
    let bins = (((s_max - s_min) / h).ceil() as usize + 1).max(1);
    let bin_of = |s: f64| (((s - s_min) / h) as usize).min(bins - 1);
    let mut sums = vec![0.0; bins * (m + 1)];
    let mut counts = vec![0usize; bins * (m + 1)];
    for i1 in 0..ny {
        if g.y_coord(i1).abs() > win {
            continue;
        }
        for i2 in 0..ny {
            if g.y_coord(i2).abs() > win {
                continue;
            }
            let b = bin_of(s_of(i1, i2));
            for j in 0..=m {
                sums[b * (m + 1) + j] += u.at(i1 * ny + i2, j);
                counts[b * (m + 1) + j] += 1;
            }
        }
    }
    let range = (u_max - u_min).max(1e-300);
    let mut ss = 0.0;
    let mut nn = 0usize;
    for i1 in 0..ny {
        if g.y_coord(i1).abs() > win {
            continue;
        }
        for i2 in 0..ny {
            if g.y_coord(i2).abs() > win {
                continue;
            }
            let b = bin_of(s_of(i1, i2));
            for j in 0..=m {
                let mean = sums[b * (m + 1) + j] / counts[b * (m + 1) + j] as f64;
                let e = u.at(i1 * ny + i2, j) - mean;
                ss += e * e;
                nn += 1;
            }
        }
    }
    let profile_rms = (ss / nn as f64).sqrt() / range;
    Ok(SymmetryFit {
        omega: Some(omega),
        residual,
        profile_rms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid2(l_y: f64, n_y: usize, l_x: f64, m: usize) -> Arc<HalfSpaceGrid> {
        Arc::new(HalfSpaceGrid::new(2, l_y, n_y, l_x, m, 1.5).unwrap())
    }

    #[test]
    fn planar_level_sets_have_zero_curvature() {
        let g = grid2(8.0, 64, 2.0, 8);
        let (w1, w2) = (0.6, 0.8);
        let u = GridFunction::from_fn(g.clone(), |y, _x| w1 * y[0] + w2 * y[1]).unwrap();
        let mask = regular_mask(&u, 3, 1e-8).unwrap();
        assert!(mask.count > 0);
        // the plane wraps at the torus seam: assert away from the seam rows
        let ny = g.n_y();
        let interior = |i: usize| -> bool {
            let (i1, i2) = (i / ny, i % ny);
            g.y_coord(i1).abs() <= 2.5 && g.y_coord(i2).abs() <= 2.5
        };
        let k = total_curvature(&u, 3, &mask).unwrap();
        for (i, &v) in k.iter().enumerate() {
            if mask.mask[i] && interior(i) {
                assert!(v.abs() < 1e-8, "node {i}: K = {v}");
            }
        }
        let t = tangential_gradient_norm(&u, 3, &mask).unwrap();
        for (i, &v) in t.iter().enumerate() {
            if mask.mask[i] && interior(i) {
                assert!(v.abs() < 1e-8, "node {i}: |grad_L| = {v}");
            }
        }
    }

    #[test]
    fn circular_level_sets_curvature_one_over_r() {
        let g = grid2(6.0, 128, 2.0, 8);
        let u = GridFunction::from_fn(g.clone(), |y, _x| y[0] * y[0] + y[1] * y[1]).unwrap();
        let mask = regular_mask(&u, 2, 1e-6).unwrap();
        let k = total_curvature(&u, 2, &mask).unwrap();
        let ny = g.n_y();
        for i1 in 0..ny {
            for i2 in 0..ny {
                let (y1, y2) = (g.y_coord(i1), g.y_coord(i2));
                let r = y1.hypot(y2);
                if !(1.0..=2.0).contains(&r) {
                    continue;
                }
                let got = k[i1 * ny + i2];
                assert!(
                    (got - 1.0 / r).abs() <= 2e-2 / r,
                    "r={r}: K={got} vs {}",
                    1.0 / r
                );
            }
        }
        // |grad u| = 2r constant on circles: tangential term vanishes
        let t = tangential_gradient_norm(&u, 2, &mask).unwrap();
        for i1 in 0..ny {
            for i2 in 0..ny {
                let r = g.y_coord(i1).hypot(g.y_coord(i2));
                if (1.0..=2.0).contains(&r) {
                    assert!(t[i1 * ny + i2].abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn saddle_curvature_matches_hand_oracle() {
        // level sets of y1^2 - y2^2 are hyperbolas; the analytic level-set
        // curvature is (u11 u2^2 - 2 u12 u1 u2 + u22 u1^2)/|grad u|^3
        let g = grid2(6.0, 128, 2.0, 8);
        let u = GridFunction::from_fn(g.clone(), |y, _x| y[0] * y[0] - y[1] * y[1]).unwrap();
        let mask = regular_mask(&u, 1, 1e-6).unwrap();
        let k = total_curvature(&u, 1, &mask).unwrap();
        let ny = g.n_y();
        let samples = [
            (1.0_f64, 0.4_f64),
            (1.2, -0.7),
            (-1.5, 0.8),
            (0.9, 1.3),
            (-1.1, -1.6),
            (1.8, 0.3),
            (0.5, -1.2),
            (-1.9, 1.0),
            (1.4, 1.1),
            (-0.8, -0.9),
        ];
        for &(ys1, ys2) in &samples {
            let i1 = ((ys1 + 3.0) / g.h_y()).round() as usize;
            let i2 = ((ys2 + 3.0) / g.h_y()).round() as usize;
            let (y1, y2) = (g.y_coord(i1), g.y_coord(i2));
            let (u1, u2) = (2.0 * y1, -2.0 * y2);
            let (u11, u22, u12) = (2.0, -2.0, 0.0);
            let grad = u1.hypot(u2);
            let want = (u11 * u2 * u2 - 2.0 * u12 * u1 * u2 + u22 * u1 * u1).abs() / grad.powi(3);
            let got = k[i1 * ny + i2];
            assert!(
                (got - want).abs() <= 2e-2 * want.max(0.1),
                "at ({y1},{y2}): K={got} vs {want}"
            );
        }
    }

    #[test]
    fn tangential_gradient_elliptic_oracle() {
        // u = y1^2 + 4 y2^2: |grad_L |grad u|| = 24 |y1 y2| / (y1^2 + 16 y2^2)
        let g = grid2(6.0, 128, 2.0, 8);
        let u = GridFunction::from_fn(g.clone(), |y, _x| y[0] * y[0] + 4.0 * y[1] * y[1]).unwrap();
        let mask = regular_mask(&u, 1, 1e-6).unwrap();
        let t = tangential_gradient_norm(&u, 1, &mask).unwrap();
        let ny = g.n_y();
        let samples = [
            (1.0_f64, 0.5_f64),
            (0.8, -0.6),
            (-1.2, 0.4),
            (1.5, 0.9),
            (-0.7, -1.1),
            (1.1, -0.3),
            (0.6, 1.2),
            (-1.4, 0.7),
            (0.9, -0.8),
            (-1.0, -0.5),
        ];
        for &(ys1, ys2) in &samples {
            let i1 = ((ys1 + 3.0) / g.h_y()).round() as usize;
            let i2 = ((ys2 + 3.0) / g.h_y()).round() as usize;
            let (y1, y2) = (g.y_coord(i1), g.y_coord(i2));
            let want = 24.0 * (y1 * y2).abs() / (y1 * y1 + 16.0 * y2 * y2);
            let got = t[i1 * ny + i2];
            assert!(
                (got - want).abs() <= 2e-2 * want.max(0.1),
                "at ({y1},{y2}): {got} vs {want}"
            );
        }
    }

    #[test]
    fn capacity_phi_branches_and_gradient_bound() {
        let g = grid2(24.0, 64, 12.0, 24);
        let r = 9.0;
        let phi = capacity_phi(r, &g).unwrap();
        let fam = PhiFamily::Capacity { r };
        // continuity at the interfaces
        assert!((fam.value(r.sqrt()) - r.ln()).abs() < 1e-14);
        assert!((fam.value(r.sqrt() + 1e-12) - r.ln()).abs() < 1e-9);
        assert_eq!(fam.value(r), 0.0);
        // |grad phi| * |X| <= 2 exactly on the middle branch
        let mut worst = 0.0_f64;
        for yi in 0..g.nodes_per_level() {
            for j in 0..=g.m() {
                let rad = node_radius(&g, yi, j);
                worst = worst.max(fam.grad_sq(rad).sqrt() * rad);
            }
        }
        assert!(worst <= 2.0 + 1e-6, "C2 = {worst}");
        // discrete-gradient sanity on the sampled field, middle branch only
        let comps = gradient(&phi).unwrap();
        let mut worst_disc = 0.0_f64;
        for yi in 0..g.nodes_per_level() {
            for j in 1..g.m() {
                let rad = node_radius(&g, yi, j);
                if rad > r.sqrt() * 1.2 && rad < r * 0.9 {
                    let mut s = 0.0;
                    for c in &comps {
                        s += c.at(yi, j) * c.at(yi, j);
                    }
                    worst_disc = worst_disc.max(s.sqrt() * rad);
                }
            }
        }
        assert!(worst_disc <= 2.0 + 0.5, "discrete C2 = {worst_disc}");
        assert!(capacity_phi(100.0, &g).is_err());
        assert!(capacity_phi(3.0, &g).is_err());
    }

    #[test]
    fn poincare_budget_flat_layer() {
        // u = u_o(y1, x): flat level sets, both left-hand terms vanish
        let g = grid2(24.0, 48, 12.0, 16);
        let u = GridFunction::from_fn(g.clone(), |y, x| (y[0] / (1.0 + x)).tanh()).unwrap();
        let phi = capacity_phi(9.0, &g).unwrap();
        let fam = PhiFamily::Capacity { r: 9.0 };
        let gsq = GridFunction::from_fn(g.clone(), |y, x| {
            fam.grad_sq((y[0] * y[0] + y[1] * y[1] + x * x).sqrt())
        })
        .unwrap();
        let eps = default_eps_grad(&u).unwrap();
        let b = poincare_audit(&u, &Weight::unit(), &phi, Some(&gsq), eps).unwrap();
        assert!(b.rhs > 0.0);
        assert!(
            b.lhs_curv + b.lhs_tan < 1e-8 * b.rhs,
            "curv {} tan {} rhs {}",
            b.lhs_curv,
            b.lhs_tan,
            b.rhs
        );
        assert!(b.holds);
    }

    #[test]
    fn poincare_budget_counterexample_reported() {
        // the unbounded saddle: budget computed, no verdict asserted
        let g = grid2(24.0, 48, 12.0, 16);
        let u = GridFunction::from_fn(g.clone(), |y, _x| y[0] * y[0] - y[1] * y[1]).unwrap();
        let phi = capacity_phi(4.0, &g).unwrap();
        let eps = default_eps_grad(&u).unwrap();
        let b = poincare_audit(&u, &Weight::unit(), &phi, None, eps).unwrap();
        assert!(b.rhs.is_finite() && b.lhs_curv.is_finite() && b.lhs_tan.is_finite());
        assert!(b.lhs_curv > 0.0);
    }

    #[test]
    fn poincare_rejects_unsupported_phi() {
        let g = grid2(24.0, 48, 12.0, 16);
        let u = GridFunction::from_fn(g.clone(), |y, x| (y[0] + x).sin()).unwrap();
        let one = GridFunction::constant(g.clone(), 1.0).unwrap();
        let eps = default_eps_grad(&u).unwrap();
        assert!(matches!(
            poincare_audit(&u, &Weight::unit(), &one, None, eps),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn rotation_equivariance_on_the_grid_symmetry_group() {
        let g = grid2(8.0, 32, 2.0, 8);
        let ny = g.n_y();
        let u = GridFunction::from_fn(g.clone(), |y, _x| {
            (0.7 * y[0] + 0.2 * y[1]).sin() + 0.3 * (y[0] * y[1] / 4.0).cos()
        })
        .unwrap();
        // rotate the field by 90 degrees: (y1, y2) -> (-y2, y1)
        let mut rv = vec![0.0; g.node_count()];
        for i1 in 0..ny {
            for i2 in 0..ny {
                // node (i1, i2) of the rotated field reads (i2, N-i1)
                let src = (i2, (ny - i1) % ny);
                for j in 0..=g.m() {
                    rv[g.idx(i1 * ny + i2, j)] = u.at(src.0 * ny + src.1, j);
                }
            }
        }
        let ur = GridFunction::new(g.clone(), rv).unwrap();
        let mask = regular_mask(&u, 2, 1e-6).unwrap();
        let mask_r = regular_mask(&ur, 2, 1e-6).unwrap();
        let k = total_curvature(&u, 2, &mask).unwrap();
        let kr = total_curvature(&ur, 2, &mask_r).unwrap();
        let t = tangential_gradient_norm(&u, 2, &mask).unwrap();
        let tr = tangential_gradient_norm(&ur, 2, &mask_r).unwrap();
        for i1 in 0..ny {
            for i2 in 0..ny {
                let src = (i2, (ny - i1) % ny);
                assert_eq!(kr[i1 * ny + i2].to_bits(), k[src.0 * ny + src.1].to_bits());
                assert_eq!(tr[i1 * ny + i2].to_bits(), t[src.0 * ny + src.1].to_bits());
            }
        }
    }

    #[test]
    fn scaling_invariances() {
        let g = grid2(16.0, 32, 8.0, 8);
        let u = GridFunction::from_fn(g.clone(), |y, x| {
            (y[0] * 0.9 + 0.4 * y[1]).sin() * (1.0 + x)
        })
        .unwrap();
        let u2 =
            GridFunction::new(g.clone(), u.values().iter().map(|&v| 2.0 * v).collect()).unwrap();
        let eps = default_eps_grad(&u).unwrap();
        let eps2 = default_eps_grad(&u2).unwrap();
        let mask = regular_mask(&u, 2, eps).unwrap();
        let mask2 = regular_mask(&u2, 2, eps2).unwrap();
        assert_eq!(mask.mask, mask2.mask);
        let k = total_curvature(&u, 2, &mask).unwrap();
        let k2 = total_curvature(&u2, 2, &mask2).unwrap();
        for i in 0..k.len() {
            assert!((k[i] - k2[i]).abs() <= 1e-10 * k[i].abs().max(1.0));
        }
        // budgets scale by 4
        let phi = capacity_phi(4.0, &g).unwrap();
        let b1 = poincare_audit(&u, &Weight::unit(), &phi, None, eps).unwrap();
        let b2 = poincare_audit(&u2, &Weight::unit(), &phi, None, eps2).unwrap();
        assert!((b2.rhs - 4.0 * b1.rhs).abs() <= 1e-9 * b1.rhs.abs());
        assert!((b2.lhs_curv - 4.0 * b1.lhs_curv).abs() <= 1e-9 * b1.lhs_curv.abs().max(1e-300));
        // symmetry residual invariant under u -> a u + b
        let ua = GridFunction::new(
            g.clone(),
            u.values().iter().map(|&v| -1.7 * v + 0.3).collect(),
        )
        .unwrap();
        let s1 = symmetry_fit(&u, &Weight::unit(), None).unwrap();
        let s2 = symmetry_fit(&ua, &Weight::unit(), None).unwrap();
        assert!((s1.residual - s2.residual).abs() < 1e-10);
    }

    #[test]
    fn symmetry_fit_recovers_oblique_layer() {
        let g = grid2(40.0, 128, 8.0, 12);
        let (w1, w2) = (0.6, 0.8);
        let u = GridFunction::from_fn(g.clone(), |y, x| {
            ((w1 * y[0] + w2 * y[1]) / 2.0).tanh() * (-x / 8.0).exp()
        })
        .unwrap();
        let fit = symmetry_fit(&u, &Weight::unit(), Some(12.0)).unwrap();
        let om = fit.omega.unwrap();
        let angle = (om[0] * w1 + om[1] * w2).abs().min(1.0).acos();
        assert!(angle < 1e-3, "angle error {angle}");
        // centered differences leak O(h^2) of the gradient into the
        // orthogonal direction; this is the discrete floor of the metric
        assert!(fit.residual < 1e-3, "residual {}", fit.residual);
        // binned averaging with bin width h floors the misfit at the
        // in-bin variation of the profile
        assert!(fit.profile_rms < 2e-2, "profile rms {}", fit.profile_rms);
    }

    #[test]
    fn symmetry_fit_saddle_residual_large() {
        let g = grid2(20.0, 64, 8.0, 12);
        let u = GridFunction::from_fn(g.clone(), |y, _x| y[0] * y[0] - y[1] * y[1]).unwrap();
        let fit = symmetry_fit(&u, &Weight::unit(), Some(8.0)).unwrap();
        // gradient directions fill the circle: residual = 1/sqrt(2)
        assert!(fit.residual > 0.5, "residual {}", fit.residual);
        assert!((fit.residual - 1.0 / 2.0_f64.sqrt()).abs() < 0.05);
    }

    #[test]
    fn symmetry_fit_constant_field_undefined() {
        let g = grid2(8.0, 32, 2.0, 8);
        let u = GridFunction::constant(g, 3.0).unwrap();
        let fit = symmetry_fit(&u, &Weight::unit(), None).unwrap();
        assert!(fit.omega.is_none());
        assert_eq!(fit.residual, 0.0);
    }

    #[test]
    fn mask_is_monotone_in_the_threshold() {
        let g = grid2(8.0, 32, 2.0, 8);
        let u = GridFunction::from_fn(g, |y, _x| (y[0]).sin() * (0.5 * y[1]).cos()).unwrap();
        let loose = regular_mask(&u, 2, 1e-6).unwrap();
        let tight = regular_mask(&u, 2, 0.3).unwrap();
        assert!(tight.count < loose.count);
        for (t, l) in tight.mask.iter().zip(&loose.mask) {
            assert!(!t | l, "tight mask must be a subset");
        }
    }

    #[test]
    fn bump_family_values() {
        let fam = PhiFamily::Bump { r: 8.0 };
        assert_eq!(fam.value(8.0), 0.0);
        assert_eq!(fam.value(9.0), 0.0);
        assert!((fam.value(0.0) - 1.0).abs() < 1e-15);
        // gradient magnitude peaks inside and vanishes at both ends
        assert_eq!(fam.grad_sq(0.0), 0.0);
        assert_eq!(fam.grad_sq(8.0), 0.0);
        assert!(fam.grad_sq(4.0) > 0.0);
        let _ = PI;
    }
}
