//! Fixture models shared by the benchmarks.

use stopline::model::{Coefficient, Offspring, RateFn, RewardFamily, RewardFn};
use stopline::{Discounting, McSettings, ModelSpec, SolverSettings};

/// Brownian particles branching at rate 1 into 0 or 2 children, bump reward.
pub fn bump_model() -> ModelSpec {
    ModelSpec {
        dimension: 1,
        drift: Coefficient::Constant { value: 0.0 },
        diffusion: Coefficient::Constant { value: 1.0 },
        branch_rate: RateFn::Constant { value: 1.0 },
        alpha_bar: 1.0,
        offspring: Offspring::Binary { p0: 0.5, p2: 0.5 },
        gamma: 1.0,
        reward: RewardFamily::single(RewardFn::Bump {
            amplitude: 2.0,
            center: 0.0,
            width: 1.0,
        }),
        k_g: 2.0,
    }
}

/// Critical binary branching at rate 1 on a Brownian motion.
pub fn yule_model() -> ModelSpec {
    ModelSpec {
        offspring: Offspring::Deterministic { k: 2 },
        ..bump_model()
    }
}

/// Geometric Brownian motion with a put payoff and no branching.
pub fn put_model() -> ModelSpec {
    ModelSpec {
        dimension: 1,
        drift: Coefficient::Linear { slope: 0.05 },
        diffusion: Coefficient::Linear { slope: 0.4 },
        branch_rate: RateFn::Constant { value: 0.0 },
        alpha_bar: 1.0,
        offspring: Offspring::Deterministic { k: 1 },
        gamma: 0.05,
        reward: RewardFamily::single(RewardFn::Put { strike: 1.0 }),
        k_g: 1.0,
    }
}

pub fn bump_grid(n_cells: usize) -> SolverSettings {
    SolverSettings::on(-8.0, 8.0, n_cells)
}

pub fn mc(reps: usize) -> McSettings {
    McSettings {
        reps,
        dt: 0.01,
        seed: 1,
        discounting: Discounting::TreeLength,
        ..McSettings::default()
    }
}
