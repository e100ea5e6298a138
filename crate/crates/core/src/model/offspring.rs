//! Offspring laws evaluated at a point.

/// Hard cap on summation length for unbounded families.
const MAX_TERMS: u32 = 100_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OffspringLaw {
    Deterministic(u32),
    Binary { p0: f64, p2: f64 },
    Poisson(f64),
}

fn ln_factorial(k: u32) -> f64 {
    (2..=k).map(|j| f64::from(j).ln()).sum()
}

impl OffspringLaw {
    pub fn pmf(&self, k: u32) -> f64 {
        match *self {
            OffspringLaw::Deterministic(k0) => f64::from(u8::from(k == k0)),
            OffspringLaw::Binary { p0, p2 } => match k {
                0 => p0,
                2 => p2,
                _ => 0.0,
            },
            OffspringLaw::Poisson(lambda) => {
                if lambda == 0.0 {
                    return f64::from(u8::from(k == 0));
                }
                (f64::from(k) * lambda.ln() - lambda - ln_factorial(k)).exp()
            }
        }
    }

    /// Largest k with positive mass, `None` when unbounded.
    pub fn support_max(&self) -> Option<u32> {
        match *self {
            OffspringLaw::Deterministic(k0) => Some(k0),
            OffspringLaw::Binary { p2, .. } => Some(if p2 > 0.0 { 2 } else { 0 }),
            OffspringLaw::Poisson(0.0) => Some(0),
            OffspringLaw::Poisson(_) => None,
        }
    }

    pub fn total_mass(&self) -> f64 {
        match *self {
            OffspringLaw::Deterministic(_) => 1.0,
            OffspringLaw::Binary { p0, p2 } => p0 + p2,
            OffspringLaw::Poisson(_) => self.pgf(1.0, MAX_TERMS),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            OffspringLaw::Deterministic(k0) => f64::from(k0),
            OffspringLaw::Binary { p2, .. } => 2.0 * p2,
            OffspringLaw::Poisson(lambda) => lambda,
        }
    }

    /// `Σ_k k^ℓ p_k`.
    pub fn moment(&self, ell: u32) -> f64 {
        let ell_i = i32::try_from(ell).unwrap_or(i32::MAX);
        match *self {
            OffspringLaw::Deterministic(k0) => f64::from(k0).powi(ell_i),
            OffspringLaw::Binary { p0, p2 } => {
                if ell == 0 {
                    p0 + p2
                } else {
                    p2 * 2f64.powi(ell_i)
                }
            }
            OffspringLaw::Poisson(lambda) => poisson_moment(lambda, ell),
        }
    }

    /// `Σ_{k ≤ k_max} p_k w^k`.
    pub fn pgf(&self, w: f64, k_max: u32) -> f64 {
        match *self {
            OffspringLaw::Deterministic(k0) => {
                if k0 <= k_max {
                    w.powi(k0 as i32)
                } else {
                    0.0
                }
            }
            OffspringLaw::Binary { p0, p2 } => {
                if k_max >= 2 {
                    p0 + p2 * w * w
                } else {
                    p0
                }
            }
            OffspringLaw::Poisson(lambda) => {
                let mut term = (-lambda).exp();
                let mut sum = term;
                for k in 1..=k_max {
                    term *= lambda * w / f64::from(k);
                    sum += term;
                    if term == 0.0 {
                        break;
                    }
                }
                sum
            }
        }
    }

    /// Derivative in `w` of the truncated series [`pgf`](Self::pgf).
    pub fn pgf_derivative(&self, w: f64, k_max: u32) -> f64 {
        match *self {
            OffspringLaw::Deterministic(k0) => {
                if k0 == 0 || k0 > k_max {
                    0.0
                } else {
                    f64::from(k0) * w.powi(k0 as i32 - 1)
                }
            }
            OffspringLaw::Binary { p2, .. } => {
                if k_max >= 2 {
                    2.0 * p2 * w
                } else {
                    0.0
                }
            }
            OffspringLaw::Poisson(lambda) => {
                if k_max == 0 {
                    0.0
                } else {
                    lambda * self.pgf(w, k_max - 1)
                }
            }
        }
    }

    /// Exact `Σ_{k > k_max} p_k r^k`.
    pub fn tail(&self, r: f64, k_max: u32) -> f64 {
        match *self {
            OffspringLaw::Deterministic(k0) => {
                if k0 > k_max {
                    r.powi(k0 as i32)
                } else {
                    0.0
                }
            }
            OffspringLaw::Binary { p2, .. } => {
                if k_max < 2 {
                    p2 * r * r
                } else {
                    0.0
                }
            }
            OffspringLaw::Poisson(lambda) => {
                if lambda == 0.0 || r == 0.0 {
                    return 0.0;
                }
                let lr = (lambda * r).ln();
                let mut k = k_max + 1;
                let mut ln_fact = ln_factorial(k);
                let mut sum = 0.0;
                loop {
                    let term = (f64::from(k) * lr - lambda - ln_fact).exp();
                    sum += term;
                    let past_mode = f64::from(k) > lambda * r;
                    if (past_mode && term <= sum * 1e-18) || k >= k_max + MAX_TERMS {
                        break sum;
                    }
                    k += 1;
                    ln_fact += f64::from(k).ln();
                }
            }
        }
    }

    /// Inverse CDF at `u ∈ [0, 1)`, truncated at `k_max` with the residual
    /// mass assigned to `k_max`.
    pub fn sample(&self, u: f64, k_max: u32) -> u32 {
        match *self {
            OffspringLaw::Deterministic(k0) => k0.min(k_max),
            OffspringLaw::Binary { p0, .. } => {
                if u < p0 {
                    0
                } else {
                    2.min(k_max)
                }
            }
            OffspringLaw::Poisson(lambda) => {
                let mut pk = (-lambda).exp();
                let mut cdf = pk;
                for k in 0..k_max {
                    if u < cdf {
                        return k;
                    }
                    pk *= lambda / f64::from(k + 1);
                    cdf += pk;
                }
                k_max
            }
        }
    }
}

fn poisson_moment(lambda: f64, ell: u32) -> f64 {
    if ell == 0 {
        return 1.0;
    }
    if lambda == 0.0 {
        return 0.0;
    }
    let ln_lambda = lambda.ln();
    let ell_f = f64::from(ell);
    // ln p_k, updated incrementally
    let mut ln_p = ln_lambda - lambda;
    let mut sum = 0.0;
    let mut k = 1u32;
    loop {
        let kf = f64::from(k);
        let term = (ell_f * kf.ln() + ln_p).exp();
        sum += term;
        if (kf > lambda + ell_f && term <= sum * 1e-18) || k >= MAX_TERMS {
            return sum;
        }
        k += 1;
        ln_p += ln_lambda - f64::from(k).ln();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn poisson_touchard_moments() {
        // Touchard polynomials at 1/2, scaled by 2^ℓ (integers).
        let law = OffspringLaw::Poisson(0.5);
        let scaled = [1.0, 1.0, 3.0, 11.0, 49.0, 257.0];
        for (ell, want) in scaled.iter().enumerate() {
            let got = law.moment(ell as u32) * 2f64.powi(ell as i32);
            assert_relative_eq!(got, *want, max_relative = 1e-12);
        }
        assert_relative_eq!(law.moment(10), 5160.5966796875, max_relative = 1e-12);
        assert_relative_eq!(
            law.moment(20) * 2f64.powi(20),
            2.8331488778927672e17,
            max_relative = 1e-12
        );
    }

    #[test]
    fn poisson_tail_and_pgf() {
        let law = OffspringLaw::Poisson(0.5);
        assert_relative_eq!(law.tail(2.0, 20), 1.2435686401704539e-20, max_relative = 1e-9);
        assert_relative_eq!(law.pgf(0.0, 64), 0.6065306597126334, max_relative = 1e-15);
        for &w in &[0.0, 0.3, 1.0, 1.7, 2.0] {
            let exact = (0.5 * (w - 1.0f64)).exp();
            assert!((law.pgf(w, 40) - exact).abs() < 1e-10);
        }
    }

    #[test]
    fn binary_values() {
        let law = OffspringLaw::Binary { p0: 0.5, p2: 0.5 };
        assert_eq!(law.mean(), 1.0);
        assert_eq!(law.pgf(0.5, 64), 0.625);
        assert_eq!(law.moment(3), 4.0);
        assert_eq!(law.tail(1.0, 2), 0.0);
        assert_eq!(law.sample(0.49, 64), 0);
        assert_eq!(law.sample(0.5, 64), 2);
    }

    #[test]
    fn truncated_sampling_puts_residual_on_cap() {
        let law = OffspringLaw::Poisson(50.0);
        assert_eq!(law.sample(0.999_999, 3), 3);
        assert_eq!(OffspringLaw::Deterministic(9).sample(0.1, 4), 4);
    }

    #[test]
    fn poisson_inverse_cdf_matches_pmf() {
        let law = OffspringLaw::Poisson(1.3);
        let mut cdf = 0.0;
        for k in 0..6 {
            cdf += law.pmf(k);
            assert_eq!(law.sample(cdf - 1e-9, 64), k);
            assert_eq!(law.sample(cdf + 1e-9, 64), k + 1);
        }
    }

    #[test]
    fn pgf_derivative_matches_differences() {
        let laws = [
            OffspringLaw::Poisson(0.8),
            OffspringLaw::Binary { p0: 0.3, p2: 0.7 },
            OffspringLaw::Deterministic(3),
            OffspringLaw::Deterministic(0),
        ];
        for law in laws {
            for &w in &[0.1, 0.6, 1.0, 1.4] {
                let h = 1e-6;
                let fd = (law.pgf(w + h, 64) - law.pgf(w - h, 64)) / (2.0 * h);
                assert!((law.pgf_derivative(w, 64) - fd).abs() < 1e-7, "{law:?} at {w}");
            }
        }
        assert_eq!(OffspringLaw::Binary { p0: 0.5, p2: 0.5 }.pgf_derivative(1.0, 64), 1.0);
    }
}
