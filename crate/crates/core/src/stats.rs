//! Sample summaries and the two-sample Kolmogorov–Smirnov test.

/// Mean and standard error `sd / √n` (sample sd with `n − 1`).
///
/// Deviations are taken from the first value so a constant sample gives an
/// exact mean and a zero error.
pub fn summarize(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let shift = values[0];
    let (mut s1, mut s2) = (0.0, 0.0);
    for &v in values {
        let d = v - shift;
        s1 += d;
        s2 += d * d;
    }
    let nf = n as f64;
    let mean_d = s1 / nf;
    if n < 2 {
        return (shift + mean_d, f64::NAN);
    }
    let var = ((s2 - nf * mean_d * mean_d) / (nf - 1.0)).max(0.0);
    (shift + mean_d, (var / nf).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample KS statistic with the asymptotic Kolmogorov p-value
/// (effective-size correction of Stephens).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut a: Vec<f64> = a.to_vec();
    let mut b: Vec<f64> = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return KsResult {
            statistic: f64::NAN,
            p_value: f64::NAN,
        };
    }
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    KsResult {
        statistic: d,
        p_value: kolmogorov_q(lambda),
    }
}

/// `Q(λ) = 2 Σ_{j≥1} (−1)^{j−1} exp(−2 j² λ²)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    let mut prev = 0.0;
    for j in 1..=200 {
        let jf = f64::from(j);
        let term = sign * 2.0 * (-2.0 * jf * jf * lambda * lambda).exp();
        sum += term;
        if term.abs() <= 1e-12 * prev || term.abs() <= 1e-300 {
            return sum.clamp(0.0, 1.0);
        }
        sign = -sign;
        prev = term.abs();
    }
    // Series has not settled: λ is tiny and the p-value is 1.
    1.0
}
