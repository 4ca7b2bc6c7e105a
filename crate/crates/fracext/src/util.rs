//! Shared numerical utilities: deterministic RNG, quadrature panels, FFT,
//! least-squares fits and bit-level hashing.
//!
//! Everything here is allocation-light and fully deterministic: fixed
//! summation orders, no threading, no global state.

/// SplitMix64 pseudo-random generator.
///
/// Used for seeded property suites and perturbed initializers. The stream is
/// part of the artifact's reproducibility contract, so we keep our own
/// implementation rather than depending on an external generator whose
/// stream could change between versions.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}

/// FNV-1a hash over the exact bit patterns of a float slice.
///
/// Used to assert that two assembly paths produced bit-identical
/// coefficients.
pub fn hash_f64_slice(seed: u64, xs: &[f64]) -> u64 {
    let mut h = seed ^ 0xcbf2_9ce4_8422_2325;
    for &x in xs {
        for b in x.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
    }
    h
}

/// Neumaier compensated sum; sequential and deterministic.
pub fn comp_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = 0.0;
    let mut c = 0.0;
    for x in xs {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

// 16-point Gauss-Legendre rule on [-1, 1] (positive half; rule is symmetric).
pub(crate) const GL16_X: [f64; 8] = [
    0.09501250983763744,
    0.28160355077925891,
    0.45801677765722739,
    0.61787624440264375,
    0.75540440835500303,
    0.86563120238783174,
    0.94457502307323258,
    0.98940093499164993,
];
pub(crate) const GL16_W: [f64; 8] = [
    0.18945061045506850,
    0.18260341504492359,
    0.16915651939500254,
    0.14959598881657673,
    0.12462897125553387,
    0.09515851168249278,
    0.06225352393864789,
    0.02715245941175409,
];

/// 16-point Gauss-Legendre quadrature on [a, b].
pub fn gauss16<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let mut s = 0.0;
    for k in 0..8 {
        s += GL16_W[k] * (f(c + r * GL16_X[k]) + f(c - r * GL16_X[k]));
    }
    s * r
}

/// Composite 16-point Gauss over `panels` equal panels of [a, b].
pub fn gauss16_panels<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, panels: usize) -> f64 {
    let n = panels.max(1);
    let w = (b - a) / n as f64;
    let mut s = 0.0;
    for p in 0..n {
        s += gauss16(f, a + p as f64 * w, a + (p + 1) as f64 * w);
    }
    s
}

/// Panel-doubling adaptive quadrature: doubles the panel count until two
/// successive composite values agree to `rel_tol` (or `max_panels` is hit).
pub fn integrate_adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel_tol: f64) -> f64 {
    let mut panels = 2;
    let mut prev = gauss16_panels(f, a, b, panels);
    loop {
        panels *= 2;
        let cur = gauss16_panels(f, a, b, panels);
        let scale = cur.abs().max(prev.abs()).max(1e-300);
        if (cur - prev).abs() <= rel_tol * scale || panels >= 1 << 14 {
            return cur;
        }
        prev = cur;
    }
}

/// Complex radix-2 FFT, in place over split re/im arrays.
///
/// `inverse` applies the conjugate transform *without* the 1/N factor.
/// Length must be a power of two.
pub fn fft(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    assert_eq!(n, im.len());
    assert!(n.is_power_of_two(), "fft length must be a power of two");
    // bit reversal permutation
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * std::f64::consts::PI / len as f64;
        let (wr, wi) = (ang.cos(), ang.sin());
        let mut i = 0;
        while i < n {
            let (mut cr, mut ci) = (1.0, 0.0);
            for k in 0..len / 2 {
                let (ur, ui) = (re[i + k], im[i + k]);
                let (vr, vi) = (
                    re[i + k + len / 2] * cr - im[i + k + len / 2] * ci,
                    re[i + k + len / 2] * ci + im[i + k + len / 2] * cr,
                );
                re[i + k] = ur + vr;
                im[i + k] = ui + vi;
                re[i + k + len / 2] = ur - vr;
                im[i + k + len / 2] = ui - vi;
                let ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
            i += len;
        }
        len <<= 1;
    }
}

/// Circular convolution of two real sequences of power-of-two length via FFT.
pub fn circular_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len();
    assert_eq!(n, b.len());
    let mut ar: Vec<f64> = a.to_vec();
    let mut ai = vec![0.0; n];
    let mut br: Vec<f64> = b.to_vec();
    let mut bi = vec![0.0; n];
    fft(&mut ar, &mut ai, false);
    fft(&mut br, &mut bi, false);
    for k in 0..n {
        let (r, i) = (ar[k] * br[k] - ai[k] * bi[k], ar[k] * bi[k] + ai[k] * br[k]);
        ar[k] = r;
        ai[k] = i;
    }
    fft(&mut ar, &mut ai, true);
    let inv = 1.0 / n as f64;
    ar.iter().map(|&x| x * inv).collect()
}

/// Least-squares slope of y against x (returns `(slope, intercept)`).
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let sx = comp_sum(x.iter().copied());
    let sy = comp_sum(y.iter().copied());
    let sxx = comp_sum(x.iter().map(|&v| v * v));
    let sxy = comp_sum(x.iter().zip(y).map(|(&a, &b)| a * b));
    let denom = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / denom;
    (slope, (sy - slope * sx) / n)
}

/// Least-squares fit of `y ~ c0*b0 + c1*b1` over two basis columns.
/// Returns `(c0, c1, rms_residual)`.
pub fn fit_two_basis(b0: &[f64], b1: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = y.len();
    let (mut a00, mut a01, mut a11, mut r0, mut r1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        a00 += b0[i] * b0[i];
        a01 += b0[i] * b1[i];
        a11 += b1[i] * b1[i];
        r0 += b0[i] * y[i];
        r1 += b1[i] * y[i];
    }
    let det = a00 * a11 - a01 * a01;
    let c0 = (a11 * r0 - a01 * r1) / det;
    let c1 = (a00 * r1 - a01 * r0) / det;
    let mut ss = 0.0;
    for i in 0..n {
        let e = y[i] - c0 * b0[i] - c1 * b1[i];
        ss += e * e;
    }
    (c0, c1, (ss / n as f64).sqrt())
}
