//! Graded half-space grids, sampled fields, weighted quadrature and annulus
//! integral utilities.
//!
//! The y-directions live on a periodic torus of side `l_y` with uniform
//! spacing, coordinates centered so nodes span [-l_y/2, l_y/2). The x
//! direction covers [0, l_x] with the graded nodes x_j = l_x (j/M)^gamma,
//! clustering toward the degenerate boundary x = 0 for gamma > 1.

use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::weights::Weight;

/// Tensor grid for the truncated half-space.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpaceGrid {
    n: usize,
    l_y: f64,
    n_y: usize,
    l_x: f64,
    m: usize,
    gamma: f64,
    x_nodes: Vec<f64>,
}

/// Periodic boundary grid (the trace of a [`HalfSpaceGrid`] at x = 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorusGrid {
    pub n: usize,
    pub n_y: usize,
    pub l_y: f64,
}

impl TorusGrid {
    pub fn new(n: usize, n_y: usize, l_y: f64) -> Result<Self> {
        if n != 1 && n != 2 {
            return Err(Error::Argument(format!(
                "torus dimension must be 1 or 2, got {n}"
            )));
        }
        if n_y < 8 {
            return Err(Error::Argument(format!(
                "need at least 8 nodes per direction, got {n_y}"
            )));
        }
        if !(l_y > 0.0) {
            return Err(Error::Argument("torus side must be positive".into()));
        }
        Ok(Self { n, n_y, l_y })
    }

    pub fn spacing(&self) -> f64 {
        self.l_y / self.n_y as f64
    }

    /// Centered node coordinate in one direction.
    pub fn coord(&self, i: usize) -> f64 {
        -0.5 * self.l_y + i as f64 * self.spacing()
    }

    pub fn node_count(&self) -> usize {
        self.n_y.pow(self.n as u32)
    }

    /// Flat index of a (multi-)node; for n = 1 pass `i2 = 0`.
    pub fn idx(&self, i1: usize, i2: usize) -> usize {
        if self.n == 1 {
            i1
        } else {
            i1 * self.n_y + i2
        }
    }
}

impl HalfSpaceGrid {
    pub fn new(n: usize, l_y: f64, n_y: usize, l_x: f64, m: usize, gamma: f64) -> Result<Self> {
        if n != 1 && n != 2 {
            return Err(Error::Argument(format!("n must be 1 or 2, got {n}")));
        }
        if !(l_y > 0.0 && l_x > 0.0) {
            return Err(Error::Argument("box sides must be positive".into()));
        }
        if n_y < 8 || m < 8 {
            return Err(Error::Argument(format!(
                "need N_y >= 8 and M >= 8, got N_y={n_y}, M={m}"
            )));
        }
        if !(gamma >= 1.0) {
            return Err(Error::Argument(format!(
                "grading exponent must be >= 1, got {gamma}"
            )));
        }
        let x_nodes: Vec<f64> = (0..=m)
            .map(|j| l_x * (j as f64 / m as f64).powf(gamma))
            .collect();
        debug_assert!(x_nodes.windows(2).all(|w| w[1] > w[0]));
        debug_assert_eq!(x_nodes[0], 0.0);
        Ok(Self {
            n,
            l_y,
            n_y,
            l_x,
            m,
            gamma,
            x_nodes,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn l_y(&self) -> f64 {
        self.l_y
    }
    pub fn n_y(&self) -> usize {
        self.n_y
    }
    pub fn l_x(&self) -> f64 {
        self.l_x
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn x_nodes(&self) -> &[f64] {
        &self.x_nodes
    }
    pub fn h_y(&self) -> f64 {
        self.l_y / self.n_y as f64
    }

    /// Centered y-coordinate of node index i in any y-direction.
    pub fn y_coord(&self, i: usize) -> f64 {
        -0.5 * self.l_y + i as f64 * self.h_y()
    }

    pub fn boundary(&self) -> TorusGrid {
        TorusGrid {
            n: self.n,
            n_y: self.n_y,
            l_y: self.l_y,
        }
    }

    /// Number of y-nodes (per x-level).
    pub fn nodes_per_level(&self) -> usize {
        self.n_y.pow(self.n as u32)
    }

    pub fn node_count(&self) -> usize {
        self.nodes_per_level() * (self.m + 1)
    }

    /// Flat index; `yi` is the flattened y-node index, `j` the x-index.
    #[inline]
    pub fn idx(&self, yi: usize, j: usize) -> usize {
        yi * (self.m + 1) + j
    }

    /// Largest radius r with B_r^+ inside the truncated, centered box.
    pub fn inscribed_radius(&self) -> f64 {
        (0.5 * self.l_y).min(self.l_x)
    }

    /// Trapezoid weights of the graded x-mesh (mass of node j).
    pub fn x_trapezoid_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.m + 1];
        for j in 0..self.m {
            let dx = self.x_nodes[j + 1] - self.x_nodes[j];
            w[j] += 0.5 * dx;
            w[j + 1] += 0.5 * dx;
        }
        w
    }
}

/// Region restriction for bulk integrals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    Whole,
    /// Half-ball B_r^+ centered at the origin of the centered coordinates.
    Ball(f64),
}

/// A sampled scalar field on a [`HalfSpaceGrid`];
/// immutable after construction, all entries finite.
#[derive(Debug, Clone)]
pub struct GridFunction {
    grid: Arc<HalfSpaceGrid>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Arc<HalfSpaceGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::Shape(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.node_count()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite entry at flat index {k}")));
        }
        Ok(Self { grid, values })
    }

    /// Builds a field by evaluating `f(y, x)` at every node
    /// (`y` has length n, centered coordinates).
    pub fn from_fn(grid: Arc<HalfSpaceGrid>, f: impl Fn(&[f64], f64) -> f64) -> Result<Self> {
        let mut values = vec![0.0; grid.node_count()];
        let ny = grid.n_y;
        let per = grid.nodes_per_level();
        for yi in 0..per {
            let y = if grid.n == 1 {
                vec![grid.y_coord(yi)]
            } else {
                vec![grid.y_coord(yi / ny), grid.y_coord(yi % ny)]
            };
            for j in 0..=grid.m {
                values[grid.idx(yi, j)] = f(&y, grid.x_nodes[j]);
            }
        }
        Self::new(grid, values)
    }

    pub fn constant(grid: Arc<HalfSpaceGrid>, c: f64) -> Result<Self> {
        let n = grid.node_count();
        Self::new(grid, vec![c; n])
    }

    pub fn grid(&self) -> &Arc<HalfSpaceGrid> {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn at(&self, yi: usize, j: usize) -> f64 {
        self.values[self.grid.idx(yi, j)]
    }

    /// Boundary trace (x = 0 level), in flattened y order.
    pub fn boundary_trace(&self) -> Vec<f64> {
        let per = self.grid.nodes_per_level();
        (0..per).map(|yi| self.at(yi, 0)).collect()
    }

    /// Fixed-x slice, flattened y order.
    pub fn slice(&self, j: usize) -> Vec<f64> {
        let per = self.grid.nodes_per_level();
        (0..per).map(|yi| self.at(yi, j)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |a, &b| a.max(b.abs()))
    }

    /// Writes the field as CSV: header `y1[,y2],x,value`, rows in
    /// lexicographic index order, 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let g = &self.grid;
        if g.n == 1 {
            writeln!(out, "y1,x,value")?;
        } else {
            writeln!(out, "y1,y2,x,value")?;
        }
        let ny = g.n_y;
        for yi in 0..g.nodes_per_level() {
            for j in 0..=g.m {
                let v = self.at(yi, j);
                if g.n == 1 {
                    writeln!(
                        out,
                        "{:.16e},{:.16e},{:.16e}",
                        g.y_coord(yi),
                        g.x_nodes[j],
                        v
                    )?;
                } else {
                    writeln!(
                        out,
                        "{:.16e},{:.16e},{:.16e},{:.16e}",
                        g.y_coord(yi / ny),
                        g.y_coord(yi % ny),
                        g.x_nodes[j],
                        v
                    )?;
                }
            }
        }
        Ok(())
    }

    /// Reads a field written by [`GridFunction::write_csv`] back onto `grid`.
    pub fn read_csv<R: BufRead>(grid: Arc<HalfSpaceGrid>, input: R) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.node_count());
        for (ln, line) in input.lines().enumerate() {
            let line = line?;
            if ln == 0 {
                continue; // header
            }
            if line.trim().is_empty() {
                continue;
            }
            let v = line
                .rsplit(',')
                .next()
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Data(format!("bad CSV row {}", ln + 1)))?;
            values.push(v);
        }
        Self::new(grid, values)
    }
}

/// Integral of F over the (restricted) half-space with weight `w`:
/// per cell, the exact integral of mu over the x-extent times the y-cell
/// measure times the corner-averaged F. Ball restrictions keep cells whose
/// centers lie in B_R^+.
pub fn integrate_bulk(f: &GridFunction, w: &Weight, region: Region) -> Result<f64> {
    if let Region::Ball(r) = region {
        if !(r >= 0.0) {
            return Err(Error::Argument("ball radius must be nonnegative".into()));
        }
        let diag = (0.5 * f.grid.l_y * (f.grid.n as f64).sqrt()).hypot(f.grid.l_x);
        if r > diag {
            return Err(Error::Argument(format!(
                "ball radius {r} exceeds the truncated box diagonal {diag}"
            )));
        }
    }
    let g = f.grid.clone();
    let hy = g.h_y();
    let y_measure = hy.powi(g.n as i32);
    let mut w_cells = Vec::with_capacity(g.m);
    for j in 0..g.m {
        w_cells.push(w.cell_integral(g.x_nodes[j], g.x_nodes[j + 1])?);
    }
    let ny = g.n_y;
    let mut total = 0.0;
    if g.n == 1 {
        for i in 0..ny {
            let ip = (i + 1) % ny;
            let yc = g.y_coord(i) + 0.5 * hy;
            for j in 0..g.m {
                if let Region::Ball(r) = region {
                    let xc = 0.5 * (g.x_nodes[j] + g.x_nodes[j + 1]);
                    if yc * yc + xc * xc > r * r {
                        continue;
                    }
                }
                let avg = 0.25 * (f.at(i, j) + f.at(ip, j) + f.at(i, j + 1) + f.at(ip, j + 1));
                total += w_cells[j] * y_measure * avg;
            }
        }
    } else {
        for i1 in 0..ny {
            let i1p = (i1 + 1) % ny;
            let y1c = g.y_coord(i1) + 0.5 * hy;
            for i2 in 0..ny {
                let i2p = (i2 + 1) % ny;
                let y2c = g.y_coord(i2) + 0.5 * hy;
                let (a, b, c, d) = (i1 * ny + i2, i1 * ny + i2p, i1p * ny + i2, i1p * ny + i2p);
                for j in 0..g.m {
                    if let Region::Ball(r) = region {
                        let xc = 0.5 * (g.x_nodes[j] + g.x_nodes[j + 1]);
                        if y1c * y1c + y2c * y2c + xc * xc > r * r {
                            continue;
                        }
                    }
                    let avg = 0.125
                        * (f.at(a, j)
                            + f.at(b, j)
                            + f.at(c, j)
                            + f.at(d, j)
                            + f.at(a, j + 1)
                            + f.at(b, j + 1)
                            + f.at(c, j + 1)
                            + f.at(d, j + 1));
                    total += w_cells[j] * y_measure * avg;
                }
            }
        }
    }
    Ok(total)
}

/// Periodic trapezoid (= rectangle) rule over the y-torus.
pub fn integrate_boundary(grid: &TorusGrid, f_vals: &[f64]) -> Result<f64> {
    if f_vals.len() != grid.node_count() {
        return Err(Error::Shape(format!(
            "boundary array has {} entries, torus has {} nodes",
            f_vals.len(),
            grid.node_count()
        )));
    }
    let measure = grid.spacing().powi(grid.n as i32);
    Ok(measure * crate::util::comp_sum(f_vals.iter().copied()))
}

/// eta(rho) = integral of a nonnegative field over B_rho^+.
pub fn annulus_profile(h: &GridFunction, rho: f64) -> Result<f64> {
    if h.values.iter().any(|&v| v < 0.0) {
        return Err(Error::Domain(
            "annulus profile requires a nonnegative field".into(),
        ));
    }
    integrate_bulk(h, &Weight::unit(), Region::Ball(rho))
}

/// Two sides of the annulus bound, cf. [`verify_annulus_bound`].
#[derive(Debug, Clone, Copy)]
pub struct AnnulusCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Checks that the integral of h/(2|X|^2) over the annulus
/// sqrt(R) <= |X| <= R is dominated by
/// 2 int_sqrt(R)^R t^-3 eta(t) dt + eta(R)/R^2.
pub fn verify_annulus_bound(h: &GridFunction, big_r: f64) -> Result<AnnulusCheck> {
    if big_r < 4.0 {
        return Err(Error::Argument(format!("R must be >= 4, got {big_r}")));
    }
    if h.values.iter().any(|&v| v < 0.0) {
        return Err(Error::Domain(
            "annulus bound requires a nonnegative field".into(),
        ));
    }
    let g = h.grid.clone();
    if big_r > g.inscribed_radius() {
        return Err(Error::Argument(format!(
            "R = {big_r} outside the inscribed radius {}",
            g.inscribed_radius()
        )));
    }
    let sqrt_r = big_r.sqrt();

    // one pass over cells: record (center radius, cell mass)
    let hy = g.h_y();
    let y_measure = hy.powi(g.n as i32);
    let ny = g.n_y;
    let per = g.nodes_per_level();
    let mut cells: Vec<(f64, f64)> = Vec::with_capacity(per * g.m);
    let mut lhs = 0.0;
    for yi in 0..per {
        let (i1, i2) = if g.n == 1 {
            (yi, 0)
        } else {
            (yi / ny, yi % ny)
        };
        let y1c = g.y_coord(i1) + 0.5 * hy;
        let y2c = if g.n == 2 {
            g.y_coord(i2) + 0.5 * hy
        } else {
            0.0
        };
        let i1p = (i1 + 1) % ny;
        let i2p = (i2 + 1) % ny;
        for j in 0..g.m {
            let xc = 0.5 * (g.x_nodes[j] + g.x_nodes[j + 1]);
            let r2 = y1c * y1c + y2c * y2c + xc * xc;
            let dx = g.x_nodes[j + 1] - g.x_nodes[j];
            let avg = if g.n == 1 {
                0.25 * (h.at(i1, j) + h.at(i1p, j) + h.at(i1, j + 1) + h.at(i1p, j + 1))
            } else {
                let (a, b, c, d) = (i1 * ny + i2, i1 * ny + i2p, i1p * ny + i2, i1p * ny + i2p);
                0.125
                    * (h.at(a, j)
                        + h.at(b, j)
                        + h.at(c, j)
                        + h.at(d, j)
                        + h.at(a, j + 1)
                        + h.at(b, j + 1)
                        + h.at(c, j + 1)
                        + h.at(d, j + 1))
            };
            let mass = dx * y_measure * avg;
            let r = r2.sqrt();
            cells.push((r, mass));
            if r >= sqrt_r && r <= big_r {
                lhs += mass / (2.0 * r2);
            }
        }
    }

    // staircase eta(t) via sorted prefix masses
    cells.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let radii: Vec<f64> = cells.iter().map(|c| c.0).collect();
    let mut prefix = Vec::with_capacity(cells.len() + 1);
    prefix.push(0.0);
    for c in &cells {
        prefix.push(prefix.last().unwrap() + c.1);
    }
    let eta = |t: f64| -> f64 {
        // number of cells with center radius <= t
        let k = radii.partition_point(|&r| r <= t);
        prefix[k]
    };

    // composite trapezoid of 2 t^-3 eta(t) on [sqrt(R), R]
    let samples = 256;
    let mut integral = 0.0;
    let dt = (big_r - sqrt_r) / samples as f64;
    for k in 0..=samples {
        let t = sqrt_r + k as f64 * dt;
        let v = 2.0 * t.powi(-3) * eta(t);
        let w = if k == 0 || k == samples { 0.5 } else { 1.0 };
        integral += w * v * dt;
    }
    let rhs = integral + eta(big_r) / (big_r * big_r);
    let tol_quad = 1e-2;
    Ok(AnnulusCheck {
        lhs,
        rhs,
        holds: lhs <= rhs * (1.0 + tol_quad) + 1e-300,
    })
}

/// Node-based gradient field: centered second-order differences in y
/// (periodic wrap), nonuniform three-point stencils in x (one-sided at the
/// two ends). Components ordered y1 [, y2], x.
pub fn gradient(f: &GridFunction) -> Result<Vec<GridFunction>> {
    let g = f.grid.clone();
    if g.n_y < 3 || g.m + 1 < 3 {
        return Err(Error::Resolution(
            "gradient needs at least 3 nodes per direction".into(),
        ));
    }
    let ny = g.n_y;
    let per = g.nodes_per_level();
    let hy = g.h_y();
    let mut comps: Vec<Vec<f64>> = vec![vec![0.0; g.node_count()]; g.n + 1];

    for yi in 0..per {
        let (i1, i2) = if g.n == 1 {
            (yi, 0)
        } else {
            (yi / ny, yi % ny)
        };
        for j in 0..=g.m {
            // y derivatives (periodic centered)
            if g.n == 1 {
                let up = f.at((i1 + 1) % ny, j);
                let dn = f.at((i1 + ny - 1) % ny, j);
                comps[0][g.idx(yi, j)] = (up - dn) / (2.0 * hy);
            } else {
                let up1 = f.at(((i1 + 1) % ny) * ny + i2, j);
                let dn1 = f.at(((i1 + ny - 1) % ny) * ny + i2, j);
                comps[0][g.idx(yi, j)] = (up1 - dn1) / (2.0 * hy);
                let up2 = f.at(i1 * ny + (i2 + 1) % ny, j);
                let dn2 = f.at(i1 * ny + (i2 + ny - 1) % ny, j);
                comps[1][g.idx(yi, j)] = (up2 - dn2) / (2.0 * hy);
            }
            // x derivative (nonuniform 3-point), written in difference form
            // so constant fields map to exactly zero
            let x = &g.x_nodes;
            let d = if j == 0 {
                let (a, b) = (x[1] - x[0], x[2] - x[0]);
                b / (a * (b - a)) * (f.at(yi, 1) - f.at(yi, 0))
                    - a / (b * (b - a)) * (f.at(yi, 2) - f.at(yi, 0))
            } else if j == g.m {
                let (a, b) = (x[g.m] - x[g.m - 1], x[g.m] - x[g.m - 2]);
                b / (a * (b - a)) * (f.at(yi, g.m) - f.at(yi, g.m - 1))
                    - a / (b * (b - a)) * (f.at(yi, g.m) - f.at(yi, g.m - 2))
            } else {
                let (a, b) = (x[j] - x[j - 1], x[j + 1] - x[j]);
                a / (b * (a + b)) * (f.at(yi, j + 1) - f.at(yi, j))
                    - b / (a * (a + b)) * (f.at(yi, j - 1) - f.at(yi, j))
            };
            comps[g.n][g.idx(yi, j)] = d;
        }
    }
    comps
        .into_iter()
        .map(|v| GridFunction::new(g.clone(), v))
        .collect()
}

/// Pointwise squared norm of the full gradient as a field.
pub fn gradient_norm_sq(f: &GridFunction) -> Result<GridFunction> {
    let comps = gradient(f)?;
    let g = f.grid.clone();
    let mut v = vec![0.0; g.node_count()];
    for c in &comps {
        for (vi, ci) in v.iter_mut().zip(c.values()) {
            *vi += ci * ci;
        }
    }
    GridFunction::new(g, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::SplitMix64;
    use std::f64::consts::PI;

    fn grid(n: usize, l_y: f64, n_y: usize, l_x: f64, m: usize, gamma: f64) -> Arc<HalfSpaceGrid> {
        Arc::new(HalfSpaceGrid::new(n, l_y, n_y, l_x, m, gamma).unwrap())
    }

    #[test]
    fn x_nodes_invariants() {
        let g = grid(1, 4.0, 16, 2.0, 16, 2.0);
        assert_eq!(g.x_nodes()[0], 0.0);
        assert_eq!(*g.x_nodes().last().unwrap(), 2.0);
        assert!(g.x_nodes().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn gamma_one_reproduces_uniform_grid() {
        let g = grid(1, 4.0, 16, 3.0, 24, 1.0);
        for (j, &x) in g.x_nodes().iter().enumerate() {
            let uniform = 3.0 * j as f64 / 24.0;
            assert!(
                (x - uniform).abs() <= 1e-15 * 3.0,
                "j={j}: {x} vs {uniform}"
            );
        }
    }

    #[test]
    fn bulk_constant_unit_weight() {
        let g = grid(1, 3.0, 16, 2.0, 16, 1.5);
        let f = GridFunction::constant(g, 1.0).unwrap();
        let v = integrate_bulk(&f, &Weight::unit(), Region::Whole).unwrap();
        assert!((v - 6.0).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn bulk_constant_sqrt_weight_is_exact() {
        let g = grid(1, 3.0, 16, 2.0, 16, 2.0);
        let f = GridFunction::constant(g, 1.0).unwrap();
        let w = Weight::power_law(0.5).unwrap();
        let v = integrate_bulk(&f, &w, Region::Whole).unwrap();
        let exact = 3.0 * 2.0_f64.powf(1.5) * (2.0 / 3.0);
        assert!((v - exact).abs() < 1e-12, "got {v}, exact {exact}");
    }

    #[test]
    fn bulk_saddle_over_half_ball_matches_midpoint_oracle() {
        // independent oracle: dense uniform midpoint rule over the bounding box
        let g = grid(2, 4.0, 48, 2.0, 48, 1.0);
        let f = GridFunction::from_fn(g, |y, _x| y[0] * y[0] - y[1] * y[1]).unwrap();
        let v = integrate_bulk(&f, &Weight::unit(), Region::Ball(1.0)).unwrap();
        let k = 120usize;
        let step = 2.2 / k as f64;
        let mut oracle = 0.0;
        for a in 0..k {
            let y1 = -1.1 + (a as f64 + 0.5) * step;
            for b in 0..k {
                let y2 = -1.1 + (b as f64 + 0.5) * step;
                for c in 0..k / 2 {
                    let x = (c as f64 + 0.5) * step;
                    if y1 * y1 + y2 * y2 + x * x <= 1.0 {
                        oracle += (y1 * y1 - y2 * y2) * step * step * step;
                    }
                }
            }
        }
        // both are ~0 by symmetry; agreement to 1e-3 absolute
        assert!((v - oracle).abs() < 1e-3, "got {v}, oracle {oracle}");
    }

    #[test]
    fn bulk_rejects_oversized_ball() {
        let g = grid(1, 3.0, 16, 2.0, 16, 1.0);
        let f = GridFunction::constant(g, 1.0).unwrap();
        assert!(integrate_bulk(&f, &Weight::unit(), Region::Ball(100.0)).is_err());
    }

    #[test]
    fn grid_function_rejects_non_finite() {
        let g = grid(1, 3.0, 16, 2.0, 16, 1.0);
        let mut vals = vec![0.0; g.node_count()];
        vals[3] = f64::NAN;
        assert!(matches!(GridFunction::new(g, vals), Err(Error::Data(_))));
    }

    #[test]
    fn bulk_linearity_and_monotonicity() {
        let g = grid(1, 3.0, 16, 2.0, 12, 1.7);
        let mut rng = SplitMix64::new(11);
        let va: Vec<f64> = (0..g.node_count())
            .map(|_| rng.uniform(-1.0, 1.0))
            .collect();
        let vb: Vec<f64> = (0..g.node_count())
            .map(|_| rng.uniform(-1.0, 1.0))
            .collect();
        let fa = GridFunction::new(g.clone(), va.clone()).unwrap();
        let fb = GridFunction::new(g.clone(), vb.clone()).unwrap();
        let comb: Vec<f64> = va
            .iter()
            .zip(&vb)
            .map(|(a, b)| 2.5 * a - 1.25 * b)
            .collect();
        let fc = GridFunction::new(g.clone(), comb).unwrap();
        let w = Weight::power_law(0.3).unwrap();
        let ia = integrate_bulk(&fa, &w, Region::Whole).unwrap();
        let ib = integrate_bulk(&fb, &w, Region::Whole).unwrap();
        let ic = integrate_bulk(&fc, &w, Region::Whole).unwrap();
        assert!((ic - (2.5 * ia - 1.25 * ib)).abs() < 1e-12);

        // monotonicity: fa <= fa + positive
        let vd: Vec<f64> = va.iter().map(|a| a + 0.3).collect();
        let fd = GridFunction::new(g, vd).unwrap();
        let id = integrate_bulk(&fd, &w, Region::Whole).unwrap();
        assert!(ia <= id);
    }

    #[test]
    fn bulk_refinement_converges_second_order() {
        // smooth integrand with x-dependence; doubling both resolutions must
        // cut the error by >= 3.5
        let exact = {
            // int_0^2 x cos(pi x / 2) dx  (times L_y = 3 for the y factor 1)
            // = [2x/pi sin(pi x/2) + 4/pi^2 cos(pi x /2)]_0^2 = -8/pi^2
            3.0 * (-8.0 / (PI * PI))
        };
        let f_expr = |x: f64| x * (PI * x / 2.0).cos();
        let coarse = {
            let g = grid(1, 3.0, 16, 2.0, 16, 1.3);
            let f = GridFunction::from_fn(g, |_y, x| f_expr(x)).unwrap();
            integrate_bulk(&f, &Weight::unit(), Region::Whole).unwrap()
        };
        let fine = {
            let g = grid(1, 3.0, 32, 2.0, 32, 1.3);
            let f = GridFunction::from_fn(g, |_y, x| f_expr(x)).unwrap();
            integrate_bulk(&f, &Weight::unit(), Region::Whole).unwrap()
        };
        let (e1, e2) = ((coarse - exact).abs(), (fine - exact).abs());
        assert!(e1 / e2 >= 3.5, "errors {e1} -> {e2}, ratio {}", e1 / e2);
    }

    #[test]
    fn boundary_integrals_match_closed_forms() {
        let t = TorusGrid::new(1, 64, 5.0).unwrap();
        let ones = vec![1.0; 64];
        assert!((integrate_boundary(&t, &ones).unwrap() - 5.0).abs() < 1e-12);

        let cos1: Vec<f64> = (0..64)
            .map(|i| (2.0 * PI * t.coord(i) / 5.0).cos())
            .collect();
        assert!(integrate_boundary(&t, &cos1).unwrap().abs() < 1e-12);

        let cos2: Vec<f64> = (0..64)
            .map(|i| (2.0 * PI * t.coord(i) / 5.0).cos().powi(2))
            .collect();
        assert!((integrate_boundary(&t, &cos2).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn boundary_integral_rejects_bad_length() {
        let t = TorusGrid::new(1, 64, 5.0).unwrap();
        assert!(matches!(
            integrate_boundary(&t, &[1.0; 63]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn annulus_profile_examples() {
        let g = grid(1, 8.0, 64, 4.0, 48, 1.0);
        let one = GridFunction::constant(g.clone(), 1.0).unwrap();
        // half-disk area pi rho^2 / 2 at small rho, 3% at desk resolution
        let rho = 1.5;
        let got = annulus_profile(&one, rho).unwrap();
        let exact = PI * rho * rho / 2.0;
        assert!(
            (got - exact).abs() / exact < 0.03,
            "got {got}, exact {exact}"
        );

        assert_eq!(annulus_profile(&one, 0.0).unwrap(), 0.0);

        // indicator of x > rho vanishes on B_rho^+
        let chi =
            GridFunction::from_fn(g.clone(), |_y, x| if x > rho { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(annulus_profile(&chi, rho).unwrap(), 0.0);

        // profile nondecreasing in rho
        let mut rng = SplitMix64::new(3);
        let vals: Vec<f64> = (0..g.node_count()).map(|_| rng.next_f64()).collect();
        let h = GridFunction::new(g, vals).unwrap();
        let mut last = 0.0;
        for k in 1..=8 {
            let v = annulus_profile(&h, 0.5 * k as f64).unwrap();
            assert!(v >= last - 1e-300);
            last = v;
        }
    }

    #[test]
    fn annulus_profile_rejects_negative_field() {
        let g = grid(1, 8.0, 16, 4.0, 16, 1.0);
        let h = GridFunction::constant(g, -1.0).unwrap();
        assert!(matches!(annulus_profile(&h, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn annulus_bound_closed_form_case() {
        let g = grid(1, 24.0, 192, 12.0, 144, 1.0);
        let one = GridFunction::constant(g, 1.0).unwrap();
        let r = 9.0;
        let chk = verify_annulus_bound(&one, r).unwrap();
        let lhs_exact = PI / 4.0 * r.ln(); // half-annulus integral of 1/(2|X|^2)
        let rhs_exact = PI / 2.0 * r.ln() + PI / 2.0;
        assert!(chk.holds);
        assert!(
            (chk.lhs - lhs_exact).abs() / lhs_exact < 0.03,
            "lhs {}",
            chk.lhs
        );
        assert!(
            (chk.rhs - rhs_exact).abs() / rhs_exact < 0.03,
            "rhs {}",
            chk.rhs
        );
    }

    #[test]
    fn annulus_bound_zero_field() {
        let g = grid(1, 16.0, 32, 8.0, 32, 1.0);
        let zero = GridFunction::constant(g, 0.0).unwrap();
        let chk = verify_annulus_bound(&zero, 4.0).unwrap();
        assert_eq!(chk.lhs, 0.0);
        assert_eq!(chk.rhs, 0.0);
        assert!(chk.holds);
    }

    #[test]
    fn annulus_bound_random_fields_always_hold() {
        let g = grid(1, 16.0, 48, 8.0, 40, 1.5);
        let mut rng = SplitMix64::new(2024);
        for case in 0..100 {
            let vals: Vec<f64> = (0..g.node_count()).map(|_| rng.next_f64() * 3.0).collect();
            let h = GridFunction::new(g.clone(), vals).unwrap();
            let r = 4.0 + 3.9 * rng.next_f64();
            let chk = verify_annulus_bound(&h, r).unwrap();
            assert!(
                chk.holds,
                "case {case}: lhs {} > rhs {} at R={r}",
                chk.lhs, chk.rhs
            );
        }
    }

    #[test]
    fn gradient_exactness() {
        let g = grid(1, 4.0, 32, 2.0, 24, 2.0);
        // constants -> exactly zero
        let c = GridFunction::constant(g.clone(), 3.25).unwrap();
        let gc = gradient(&c).unwrap();
        assert!(gc
            .iter()
            .all(|comp| comp.values().iter().all(|&v| v == 0.0)));

        // x^2 on the graded mesh: d/dx exact at every node
        let q = GridFunction::from_fn(g.clone(), |_y, x| x * x).unwrap();
        let gq = gradient(&q).unwrap();
        for yi in 0..g.nodes_per_level() {
            for j in 0..=g.m() {
                let want = 2.0 * g.x_nodes()[j];
                let got = gq[1].at(yi, j);
                assert!((got - want).abs() < 1e-10, "j={j}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn gradient_y_order_at_least_1_9() {
        let err = |n_y: usize| -> f64 {
            let g = grid(1, 4.0, n_y, 2.0, 16, 1.0);
            let f =
                GridFunction::from_fn(g.clone(), |y, _x| (2.0 * PI * y[0] / 4.0).sin()).unwrap();
            let gy = gradient(&f).unwrap();
            let mut worst = 0.0_f64;
            for yi in 0..g.n_y() {
                let want = 2.0 * PI / 4.0 * (2.0 * PI * g.y_coord(yi) / 4.0).cos();
                worst = worst.max((gy[0].at(yi, 3) - want).abs());
            }
            worst
        };
        let (e1, e2) = (err(32), err(64));
        let order = (e1 / e2).log2();
        assert!(order >= 1.9, "observed order {order}");
    }

    #[test]
    fn csv_roundtrip() {
        let g = grid(2, 2.0, 8, 1.0, 8, 1.0);
        let f = GridFunction::from_fn(g.clone(), |y, x| y[0] + 2.0 * y[1] - x).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let back = GridFunction::read_csv(g, std::io::BufReader::new(&buf[..])).unwrap();
        assert_eq!(f.values(), back.values());
        let head = String::from_utf8_lossy(&buf);
        assert!(head.starts_with("y1,y2,x,value"));
    }
}
