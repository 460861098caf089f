//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use dpsl::Rng64;
use ndarray::Array2;

/// The batch generator used to build `fixtures/dpsl_batches.json`: each row
/// is `(u_i + 0.01) / sum` for uniform draws `u_i`.
pub fn fixture_batch(seed: u64, rows: usize, k: usize) -> Array2<f64> {
    let mut rng = Rng64::new(seed);
    let mut probs = Array2::zeros((rows, k));
    for mut row in probs.rows_mut() {
        for v in row.iter_mut() {
            *v = rng.uniform() + 0.01;
        }
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    probs
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    eps: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * eps {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, eps: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(&f, a, b, fa, fm, fb, whole, eps, 50)
}

/// `int_0^x t^(a-1) (1-t)^(b-1) dt` for `x <= 1/2`. For `a < 1` the
/// endpoint singularity is removed with `t = u^(1/a)`.
fn lower_integral(a: f64, b: f64, x: f64) -> f64 {
    const EPS: f64 = 1e-15;
    if a < 1.0 {
        adaptive_simpson(
            |u: f64| (1.0 - u.powf(1.0 / a)).powf(b - 1.0),
            0.0,
            x.powf(a),
            EPS,
        ) / a
    } else {
        adaptive_simpson(
            |t: f64| t.powf(a - 1.0) * (1.0 - t).powf(b - 1.0),
            0.0,
            x,
            EPS,
        )
    }
}

/// Beta CDF from the density by quadrature; the normalizer is also
/// integrated rather than taken from log-gamma.
pub fn quad_beta_cdf(x: f64, a: f64, b: f64) -> f64 {
    let norm = lower_integral(a, b, 0.5) + lower_integral(b, a, 0.5);
    if x <= 0.5 {
        lower_integral(a, b, x) / norm
    } else {
        1.0 - lower_integral(b, a, 1.0 - x) / norm
    }
}

/// Two-sided Kolmogorov–Smirnov statistic of `samples` against `cdf`.
pub fn ks_distance(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}
