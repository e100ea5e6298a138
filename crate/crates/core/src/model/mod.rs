//! Model definition: coefficient catalog, discount, reward family.
//!
//! Coefficients act componentwise on positions. Scalar quantities (branch
//! rate, Poisson mean, put payoff) read the first coordinate; the Gaussian
//! bump uses the full Euclidean distance to its centre.

mod offspring;
mod report;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use offspring::OffspringLaw;
pub use report::{
    check_assumptions, chebyshev_tail_estimate, linspace_points, moment_report,
    series_tail_bound, value_bound, AssumptionReport, Lipschitz, MomentReport, TailBound,
    DEFAULT_L_MAX,
};

/// Default truncation of the offspring series.
pub const DEFAULT_K_MAX: u32 = 64;

/// Scalar coefficient used for drift and diffusion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Coefficient {
    Constant { value: f64 },
    Affine { intercept: f64, slope: f64 },
    /// `slope · x`, the geometric Brownian motion shape.
    Linear { slope: f64 },
}

impl Coefficient {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Coefficient::Constant { value } => value,
            Coefficient::Affine { intercept, slope } => intercept + slope * x,
            Coefficient::Linear { slope } => slope * x,
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match *self {
            Coefficient::Constant { .. } => 0.0,
            Coefficient::Affine { slope, .. } | Coefficient::Linear { slope } => slope.abs(),
        }
    }

    fn params(&self) -> Vec<f64> {
        match *self {
            Coefficient::Constant { value } => vec![value],
            Coefficient::Affine { intercept, slope } => vec![intercept, slope],
            Coefficient::Linear { slope } => vec![slope],
        }
    }
}

/// Nonnegative rate function, used for the branch rate and the Poisson mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateFn {
    Constant { value: f64 },
    /// `max / (1 + exp(-(x - center) / width))`
    Logistic { max: f64, center: f64, width: f64 },
}

impl RateFn {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            RateFn::Constant { value } => value,
            RateFn::Logistic { max, center, width } => max / (1.0 + (-(x - center) / width).exp()),
        }
    }

    pub fn sup(&self) -> f64 {
        match *self {
            RateFn::Constant { value } => value,
            RateFn::Logistic { max, .. } => max,
        }
    }

    pub fn inf(&self) -> f64 {
        match *self {
            RateFn::Constant { value } => value,
            RateFn::Logistic { .. } => 0.0,
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match *self {
            RateFn::Constant { .. } => 0.0,
            RateFn::Logistic { max, width, .. } => max.abs() / (4.0 * width),
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        let ok = match *self {
            RateFn::Constant { value } => value.is_finite() && value >= 0.0,
            RateFn::Logistic { max, center, width } => {
                max.is_finite() && max >= 0.0 && center.is_finite() && width > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("{what}: bad rate parameters {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Offspring {
    Deterministic { k: u32 },
    Binary { p0: f64, p2: f64 },
    Poisson { mean: RateFn },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardFn {
    Constant { value: f64 },
    /// `min(K_g, max(strike - x, 0))`
    Put { strike: f64 },
    /// `amplitude · exp(-|x - center|² / width²)`
    Bump { amplitude: f64, center: f64, width: f64 },
}

impl RewardFn {
    pub fn eval(&self, x: &[f64], k_g: f64) -> f64 {
        match *self {
            RewardFn::Constant { value } => value,
            RewardFn::Put { strike } => (strike - x[0]).max(0.0).min(k_g),
            RewardFn::Bump {
                amplitude,
                center,
                width,
            } => {
                let r2: f64 = x.iter().map(|&xi| (xi - center) * (xi - center)).sum();
                amplitude * (-r2 / (width * width)).exp()
            }
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match *self {
            RewardFn::Constant { .. } => 0.0,
            RewardFn::Put { .. } => 1.0,
            RewardFn::Bump {
                amplitude, width, ..
            } => amplitude.abs() * std::f64::consts::SQRT_2 * (-0.5f64).exp() / width,
        }
    }
}

/// Generation-indexed rewards `g_0..g_D`; `g_n = g_D` beyond the last level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardFamily {
    pub depth: usize,
    pub levels: Vec<RewardFn>,
}

impl RewardFamily {
    pub fn single(g: RewardFn) -> Self {
        RewardFamily {
            depth: 0,
            levels: vec![g],
        }
    }

    pub fn level(&self, n: usize) -> &RewardFn {
        &self.levels[n.min(self.depth)]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub dimension: usize,
    pub drift: Coefficient,
    pub diffusion: Coefficient,
    pub branch_rate: RateFn,
    pub alpha_bar: f64,
    pub offspring: Offspring,
    pub gamma: f64,
    pub reward: RewardFamily,
    pub k_g: f64,
}

impl ModelSpec {
    /// Structural checks. Pointwise assumptions (rate below its bound,
    /// rewards inside `[0, K_g]`) live in [`check_assumptions`].
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::invalid(msg));
        if self.dimension == 0 {
            return fail("dimension must be at least 1".into());
        }
        for (name, c) in [("drift", &self.drift), ("diffusion", &self.diffusion)] {
            if c.params().iter().any(|p| !p.is_finite()) {
                return fail(format!("{name}: non-finite parameter"));
            }
        }
        self.branch_rate.validate("branch_rate")?;
        if !(self.alpha_bar.is_finite() && self.alpha_bar > 0.0) {
            return fail(format!("alpha_bar must be positive, got {}", self.alpha_bar));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return fail(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.k_g.is_finite() && self.k_g >= 1.0) {
            return fail(format!("k_g must be at least 1, got {}", self.k_g));
        }
        match &self.offspring {
            Offspring::Deterministic { .. } => {}
            Offspring::Binary { p0, p2 } => {
                if !(*p0 >= 0.0 && *p2 >= 0.0) {
                    return fail("binary offspring probabilities must be nonnegative".into());
                }
            }
            Offspring::Poisson { mean } => mean.validate("offspring mean")?,
        }
        if self.reward.levels.len() != self.reward.depth + 1 {
            return fail(format!(
                "reward depth {} needs {} levels, got {}",
                self.reward.depth,
                self.reward.depth + 1,
                self.reward.levels.len()
            ));
        }
        for g in &self.reward.levels {
            let ok = match *g {
                RewardFn::Constant { value } => value.is_finite(),
                RewardFn::Put { strike } => strike.is_finite(),
                RewardFn::Bump {
                    amplitude,
                    center,
                    width,
                } => amplitude.is_finite() && center.is_finite() && width > 0.0,
            };
            if !ok {
                return fail(format!("bad reward parameters {g:?}"));
            }
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.reward.depth + 1
    }

    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = self.drift.eval(xi);
        }
    }

    pub fn diffusion_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = self.diffusion.eval(xi);
        }
    }

    pub fn branch_rate(&self, x: &[f64]) -> f64 {
        self.branch_rate.eval(x[0])
    }

    pub fn offspring_law(&self, x: &[f64]) -> OffspringLaw {
        self.offspring_law_at(x[0])
    }

    pub(crate) fn offspring_law_at(&self, x0: f64) -> OffspringLaw {
        match &self.offspring {
            Offspring::Deterministic { k } => OffspringLaw::Deterministic(*k),
            Offspring::Binary { p0, p2 } => OffspringLaw::Binary { p0: *p0, p2: *p2 },
            Offspring::Poisson { mean } => OffspringLaw::Poisson(mean.eval(x0)),
        }
    }

    pub fn mean_offspring(&self, x: &[f64]) -> f64 {
        self.offspring_law(x).mean()
    }

    /// Offspring generating function truncated after `k_max`.
    pub fn generating_function(&self, x: &[f64], w: f64, k_max: u32) -> Result<f64> {
        if !(w >= 0.0) {
            return Err(Error::invalid(format!("generating function needs w >= 0, got {w}")));
        }
        if k_max == 0 {
            return Err(Error::invalid("k_max must be at least 1"));
        }
        Ok(self.offspring_law(x).pgf(w, k_max))
    }

    pub fn reward(&self, n: usize, x: &[f64]) -> f64 {
        self.reward.level(n).eval(x, self.k_g)
    }

    /// Equal rewards at every generation.
    pub fn is_generation_symmetric(&self) -> bool {
        self.reward.levels.windows(2).all(|w| w[0] == w[1])
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        fingerprint_of(self)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }
}

pub(crate) fn fingerprint_of<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("model types serialize");
    hex::encode(Sha256::digest(&bytes))
}
