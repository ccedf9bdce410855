//! Independent numerical oracles for the verification suites: adaptive
//! quadrature over 1-D Gaussian integrands, periodogram slope fits,
//! sample statistics, and rank correlation. Everything here is
//! deliberately brute-force and shares no code with the closed-form
//! implementations it cross-checks.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Probability density of N(mean, var) at x.
pub fn gaussian_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    (-0.5 * d * d / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
                + rec(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    rec(f, a, fa, b, fb, whole, m, fm, tol, 50)
}

/// Integration window covering both Gaussians out to `k` standard deviations.
pub fn gaussian_support(means: &[f64], vars: &[f64], k: f64) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (&m, &v) in means.iter().zip(vars) {
        let s = v.sqrt();
        lo = lo.min(m - k * s);
        hi = hi.max(m + k * s);
    }
    (lo, hi)
}

/// Panel boundaries at every structural scale of the two Gaussians, so a
/// peak much narrower than the window cannot slip between the initial
/// samples of the adaptive rule.
fn gaussian_breakpoints(means: &[f64], vars: &[f64]) -> Vec<f64> {
    let (lo, hi) = gaussian_support(means, vars, 12.0);
    let mut pts = vec![lo, hi];
    for (&m, &v) in means.iter().zip(vars) {
        let s = v.sqrt();
        for k in [-8.0, -4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0, 8.0] {
            let x = m + k * s;
            if x > lo && x < hi {
                pts.push(x);
            }
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// Adaptive Simpson over a stratified partition of the Gaussian support.
fn integrate_gaussian_pair(
    f: &dyn Fn(f64) -> f64,
    means: &[f64],
    vars: &[f64],
    tol: f64,
) -> f64 {
    let pts = gaussian_breakpoints(means, vars);
    let per_panel = tol / (pts.len() - 1) as f64;
    pts.windows(2)
        .map(|w| adaptive_simpson(f, w[0], w[1], per_panel))
        .sum()
}

/// Log-density of N(mean, var) at x; keeps the KL integrand finite where
/// the pdf itself would underflow.
pub fn gaussian_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (d * d / var + (2.0 * std::f64::consts::PI * var).ln())
}

/// KL(p || q) between 1-D Gaussians by quadrature of p * (ln p - ln q).
pub fn kl_quadrature(mp: f64, vp: f64, mq: f64, vq: f64, tol: f64) -> f64 {
    let f = move |x: f64| {
        let lp = gaussian_log_pdf(x, mp, vp);
        let lq = gaussian_log_pdf(x, mq, vq);
        lp.exp() * (lp - lq)
    };
    integrate_gaussian_pair(&f, &[mp, mq], &[vp, vq], tol)
}

/// Hellinger distance between 1-D Gaussians by quadrature of the
/// squared-Hellinger integrand (sqrt(p) - sqrt(q))^2 / 2.
pub fn hellinger_quadrature(mp: f64, vp: f64, mq: f64, vq: f64, tol: f64) -> f64 {
    let f = move |x: f64| {
        let d = gaussian_pdf(x, mp, vp).sqrt() - gaussian_pdf(x, mq, vq).sqrt();
        0.5 * d * d
    };
    integrate_gaussian_pair(&f, &[mp, mq], &[vp, vq], tol)
        .max(0.0)
        .sqrt()
}

/// Total variation distance between 1-D Gaussians by quadrature of |p - q| / 2.
pub fn tv_quadrature(mp: f64, vp: f64, mq: f64, vq: f64, tol: f64) -> f64 {
    let f = move |x: f64| 0.5 * (gaussian_pdf(x, mp, vp) - gaussian_pdf(x, mq, vq)).abs();
    integrate_gaussian_pair(&f, &[mp, mq], &[vp, vq], tol)
}

/// Standard normal CDF by quadrature (independent of any erf implementation).
pub fn normal_cdf_quadrature(z: f64, tol: f64) -> f64 {
    let lo = -(z.abs() + 2.0).max(12.0);
    if z <= lo {
        return 0.0;
    }
    let f = |x: f64| gaussian_pdf(x, 0.0, 1.0);
    adaptive_simpson(&f, lo, z, tol)
}

/// Sample mean.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (population normalization).
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// Lag-k sample autocorrelation.
pub fn autocorrelation(xs: &[f64], lag: usize) -> f64 {
    let m = mean(xs);
    let denom: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    let num: f64 = xs
        .windows(lag + 1)
        .map(|w| (w[0] - m) * (w[lag] - m))
        .sum();
    num / denom
}

/// Pearson correlation of paired samples.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let mx = mean(xs);
    let my = mean(ys);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Fractional ranks with ties averaged.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (ties averaged).
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    pearson(&ranks(xs), &ranks(ys))
}

/// Periodogram |FFT(x)|^2 / n at the positive frequencies k/n, k = 1..n/2.
pub fn periodogram(xs: &[f64]) -> Vec<(f64, f64)> {
    let n = xs.len();
    let mut buf: Vec<Complex64> = xs.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    (1..n / 2)
        .map(|k| (k as f64 / n as f64, buf[k].norm_sqr() / n as f64))
        .collect()
}

/// Least-squares slope of log10(power) against log10(frequency) over the
/// mid-band `f_lo..f_hi`, with powers averaged in log-spaced bins to tame
/// periodogram variance.
pub fn log_log_slope(spectrum: &[(f64, f64)], f_lo: f64, f_hi: f64) -> f64 {
    let bins = 24;
    let l_lo = f_lo.log10();
    let l_hi = f_hi.log10();
    let width = (l_hi - l_lo) / bins as f64;
    let mut sums = vec![(0.0f64, 0usize); bins];
    for &(f, p) in spectrum {
        if f < f_lo || f > f_hi || p <= 0.0 {
            continue;
        }
        let b = (((f.log10() - l_lo) / width) as usize).min(bins - 1);
        sums[b].0 += p;
        sums[b].1 += 1;
    }
    let pts: Vec<(f64, f64)> = sums
        .iter()
        .enumerate()
        .filter(|(_, (_, n))| *n > 0)
        .map(|(b, (s, n))| {
            let center = l_lo + (b as f64 + 0.5) * width;
            (center, (s / *n as f64).log10())
        })
        .collect();
    let mx = mean(&pts.iter().map(|p| p.0).collect::<Vec<_>>());
    let my = mean(&pts.iter().map(|p| p.1).collect::<Vec<_>>());
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in &pts {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

/// Central finite difference of a scalar function of one coordinate.
pub fn central_difference(f: &mut dyn FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}
