//! Divided differences of `exp`, stable at coincident and clustered points.
//!
//! `exp[z_0, …, z_n]` is evaluated by a Taylor series around the mean when
//! the points are clustered (spread ≤ 1) and by the two-sided recurrence
//! `(f[S∖min] − f[S∖max]) / (max − min)` otherwise.

const SERIES_SPREAD: f64 = 1.0;
const MAX_POINTS: usize = 8;
const MAX_TERMS: usize = 60;

/// `exp[z_0, …, z_n]` for up to 8 points.
pub fn exp_divdiff(z: &[f64]) -> f64 {
    assert!(!z.is_empty() && z.len() <= MAX_POINTS, "1..=8 points supported");
    let mut buf = [0.0f64; MAX_POINTS];
    buf[..z.len()].copy_from_slice(z);
    let pts = &mut buf[..z.len()];
    pts.sort_unstable_by(|a, b| a.total_cmp(b));
    sorted(pts)
}

fn sorted(z: &[f64]) -> f64 {
    let n = z.len();
    if n == 1 {
        return z[0].exp();
    }
    let spread = z[n - 1] - z[0];
    if spread <= SERIES_SPREAD {
        return series(z);
    }
    (sorted(&z[1..]) - sorted(&z[..n - 1])) / spread
}

/// `e^μ Σ_j h_j(z − μ) / (n + j)!` with `h_j` the complete homogeneous
/// symmetric polynomials, built one degree at a time through
/// `h_j(w_0..w_m) = h_j(w_0..w_{m−1}) + w_m h_{j−1}(w_0..w_m)`.
fn series(z: &[f64]) -> f64 {
    let n = z.len() - 1;
    let mu = z.iter().sum::<f64>() / z.len() as f64;
    let mut w = [0.0f64; MAX_POINTS];
    let mut r = 0.0f64;
    for (wi, &zi) in w.iter_mut().zip(z) {
        *wi = zi - mu;
        r = r.max(wi.abs());
    }
    let w = &w[..z.len()];
    // hs[m] = h_j(w_0..w_m) for the current degree j
    let mut hs = [1.0f64; MAX_POINTS];
    let nfact = (1..=n).map(|k| k as f64).product::<f64>();
    let mut fact = nfact;
    // |h_j| / (n+j)! <= r^j / (n! j!)
    let mut bound = 1.0 / nfact;
    let mut sum = 1.0 / nfact;
    for j in 1..MAX_TERMS {
        let mut prev = 0.0;
        for (m, &wm) in w.iter().enumerate() {
            prev += wm * hs[m];
            hs[m] = prev;
        }
        fact *= (n + j) as f64;
        bound *= r / j as f64;
        sum += hs[n] / fact;
        if bound <= 1e-17 * sum {
            break;
        }
    }
    mu.exp() * sum
}

/// Two-point fast path.
#[inline]
pub fn exp_dd2(a: f64, b: f64) -> f64 {
    let d = b - a;
    if d.abs() > SERIES_SPREAD {
        (b.exp() - a.exp()) / d
    } else {
        let mu = 0.5 * (a + b);
        let x = 0.5 * d;
        // sinh(x)/x
        let x2 = x * x;
        let s = 1.0
            + x2 / 6.0
                * (1.0 + x2 / 20.0 * (1.0 + x2 / 42.0 * (1.0 + x2 / 72.0 * (1.0 + x2 / 110.0 * (1.0 + x2 / 156.0)))));
        mu.exp() * s
    }
}

/// Three-point fast path.
#[inline]
pub fn exp_dd3(a: f64, b: f64, c: f64) -> f64 {
    let (mut x, mut y, mut z) = (a, b, c);
    if x > y {
        std::mem::swap(&mut x, &mut y);
    }
    if y > z {
        std::mem::swap(&mut y, &mut z);
    }
    if x > y {
        std::mem::swap(&mut x, &mut y);
    }
    let spread = z - x;
    if spread <= SERIES_SPREAD {
        series(&[x, y, z])
    } else {
        (exp_dd2(y, z) - exp_dd2(x, y)) / spread
    }
}
