//! Verification-only oracles, independent of the implementation paths they
//! check: a dense Jacobi eigensolver for small stability forms and a
//! Lanczos-free log-gamma for closed-form kernel constants.
//!
//! Nothing in the production pipelines calls into this module; it exists for
//! the acceptance suite and the tests.

/// Dense symmetric eigensolver (cyclic Jacobi rotations). Returns the
/// eigenvalues in ascending order.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for row in &a {
        assert_eq!(row.len(), n, "matrix must be square");
    }
    let off = |a: &Vec<Vec<f64>>| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i][j] * a[i][j];
                }
            }
        }
        s
    };
    let scale: f64 = (0..n).map(|i| a[i][i].abs()).fold(1e-300, f64::max);
    for _sweep in 0..100 {
        if off(&a).sqrt() <= 1e-14 * scale * n as f64 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ev
}

/// Smallest generalized eigenvalue of (A, diag(B)) from a dense matrix-build
/// of the operator: A is probed column by column with unit vectors.
pub fn dense_smallest_generalized(
    apply: &dyn Fn(&[f64], &mut [f64]),
    b_diag: &[f64],
    free: &[bool],
) -> f64 {
    let idx: Vec<usize> = (0..free.len()).filter(|&i| free[i]).collect();
    let nf = idx.len();
    assert!(
        nf <= 4000,
        "dense oracle limited to small instances, got {nf}"
    );
    let mut probe = vec![0.0; free.len()];
    let mut out = vec![0.0; free.len()];
    let mut a = vec![vec![0.0; nf]; nf];
    for (col, &ic) in idx.iter().enumerate() {
        probe[ic] = 1.0;
        apply(&probe, &mut out);
        probe[ic] = 0.0;
        for (row, &ir) in idx.iter().enumerate() {
            a[row][col] = out[ir];
        }
    }
    // symmetric scaling by B^{-1/2}
    let d: Vec<f64> = idx.iter().map(|&i| b_diag[i].sqrt()).collect();
    for r in 0..nf {
        for c in 0..nf {
            a[r][c] /= d[r] * d[c];
        }
    }
    // enforce exact symmetry against roundoff before the rotations
    for r in 0..nf {
        for c in (r + 1)..nf {
            let v = 0.5 * (a[r][c] + a[c][r]);
            a[r][c] = v;
            a[c][r] = v;
        }
    }
    jacobi_eigenvalues(a)[0]
}

/// log Gamma by the Lanczos approximation (g = 7, n = 9), |rel| < 1e-13 on
/// the positive axis.
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_matches_hand_eigenvalues() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3
        let ev = jacobi_eigenvalues(vec![vec![2.0, 1.0], vec![1.0, 2.0]]);
        assert!((ev[0] - 1.0).abs() < 1e-12 && (ev[1] - 3.0).abs() < 1e-12);

        // tridiagonal -1,2,-1 of size 5: eigenvalues 2 - 2cos(k pi / 6)
        let n = 5;
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            a[i][i] = 2.0;
            if i > 0 {
                a[i][i - 1] = -1.0;
                a[i - 1][i] = -1.0;
            }
        }
        let ev = jacobi_eigenvalues(a);
        for (k, &l) in ev.iter().enumerate() {
            let expect = 2.0 - 2.0 * ((k + 1) as f64 * std::f64::consts::PI / 6.0).cos();
            assert!((l - expect).abs() < 1e-12, "k={k}: {l} vs {expect}");
        }
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-13);
        assert!((ln_gamma(2.0)).abs() < 1e-13);
        assert!((ln_gamma(5.0) - 24.0_f64.ln()).abs() < 1e-12);
        // Gamma(1/2) = sqrt(pi)
        assert!((ln_gamma(0.5) - 0.5 * std::f64::consts::PI.ln()).abs() < 1e-12);
    }
}
