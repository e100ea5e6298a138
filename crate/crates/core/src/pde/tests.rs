use super::*;
use crate::model::{Offspring, RateFn, RewardFamily};

fn put_model() -> ModelSpec {
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

fn put_exact(x: f64) -> f64 {
    let beta = 2.0 * 0.05 / (0.4 * 0.4);
    let xs = beta / (beta + 1.0);
    if x <= xs {
        1.0 - x
    } else {
        (1.0 - xs) * (x / xs).powf(-beta)
    }
}

fn bump_model(gamma: f64) -> ModelSpec {
    ModelSpec {
        dimension: 1,
        drift: Coefficient::Constant { value: 0.0 },
        diffusion: Coefficient::Constant { value: 1.0 },
        branch_rate: RateFn::Constant { value: 1.0 },
        alpha_bar: 1.0,
        offspring: Offspring::Binary { p0: 0.5, p2: 0.5 },
        gamma,
        reward: RewardFamily::single(RewardFn::Bump {
            amplitude: 2.0,
            center: 0.0,
            width: 1.0,
        }),
        k_g: 2.0,
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn operator_examples() {
    let mut spec = put_model();
    spec.drift = Coefficient::Constant { value: 0.0 };
    spec.diffusion = Coefficient::Constant { value: 2f64.sqrt() };
    spec.gamma = 0.3;
    let v = apply_operator(&spec, 0.7, 1.5, -2.0, 4.0, 9.0, 64).unwrap();
    assert!((v - (4.0 - 0.3 * 1.5)).abs() < 1e-14);

    let mut one = bump_model(0.5);
    one.offspring = Offspring::Deterministic { k: 1 };
    let r = apply_operator(&one, 0.2, 1.0, 0.0, 0.0, 1.0, 64).unwrap();
    assert!((r + 0.5).abs() < 1e-14);
}

#[test]
fn perpetual_put_closed_form() {
    let spec = put_model();
    let settings = SolverSettings::on(1e-3, 4.0, 2000);
    let grid = solve_scalar(&spec, &settings).unwrap();
    let h = settings.step();
    let beta: f64 = 0.625;
    let x_star = beta / (beta + 1.0);
    let lev = &grid.levels[0];
    let mut worst: f64 = 0.0;
    for (i, x) in grid.nodes().into_iter().enumerate() {
        if (x - x_star).abs() > 5.0 * h {
            let e = put_exact(x);
            worst = worst.max((lev.values[i] - e).abs() / e);
        }
    }
    assert!(worst < 0.01, "relative error {worst}");
    let last_contact = (0..=settings.n_cells).filter(|&i| lev.contact[i]).max().unwrap();
    let x_free = grid.node(last_contact);
    assert!((x_free - x_star).abs() <= 2.0 * h, "free boundary {x_free} vs {x_star}");
    // contact set is an interval starting at the left end
    assert!((0..=last_contact).all(|i| lev.contact[i]));
    // extension past the right end follows the decaying mode
    assert!((grid.value(0, 6.0) - put_exact(6.0)).abs() / put_exact(6.0) < 0.02);
}

#[test]
fn constant_obstacle_is_exact() {
    let families = [
        Offspring::Binary { p0: 0.5, p2: 0.5 },
        Offspring::Deterministic { k: 3 },
        Offspring::Poisson {
            mean: RateFn::Constant { value: 0.5 },
        },
    ];
    for offspring in families {
        let mut spec = bump_model(1.0);
        spec.offspring = offspring;
        spec.reward = RewardFamily::single(RewardFn::Constant { value: 1.0 });
        let grid = solve_scalar(&spec, &SolverSettings::on(-4.0, 4.0, 200)).unwrap();
        let lev = &grid.levels[0];
        assert!(lev.values.iter().all(|v| (v - 1.0).abs() < 1e-8));
        assert!(lev.contact.iter().all(|&c| c));
        let res = residual_report(&grid).unwrap();
        assert_eq!(res[0].contact_cells, 201);
        assert!(res[0].max_obstacle_violation.abs() < 1e-12);
    }
}

#[test]
fn single_child_rate_drops_out() {
    let settings = SolverSettings::on(-6.0, 6.0, 300);
    let solve = |alpha: f64| {
        let mut spec = bump_model(1.0);
        spec.offspring = Offspring::Deterministic { k: 1 };
        spec.branch_rate = RateFn::Constant { value: alpha };
        spec.alpha_bar = alpha.max(1.0);
        solve_scalar(&spec, &settings).unwrap().levels[0].values.clone()
    };
    let base = solve(0.0);
    for alpha in [0.5, 2.0] {
        assert!(sup_diff(&base, &solve(alpha)) < 10.0 * settings.tol_fp);
    }
}

#[test]
fn equal_levels_collapse_to_scalar() {
    let settings = SolverSettings::on(-6.0, 6.0, 300);
    let spec = bump_model(1.0);
    let scalar = solve_scalar(&spec, &settings).unwrap();
    let mut deep = spec.clone();
    deep.reward = RewardFamily {
        depth: 3,
        levels: vec![spec.reward.levels[0].clone(); 4],
    };
    let grid = solve_generation_system(&deep, &settings).unwrap();
    assert_eq!(grid.levels.len(), 4);
    for lev in &grid.levels {
        assert!(sup_diff(&lev.values, &scalar.levels[0].values) < 1e-8);
    }
}

#[test]
fn constant_deep_level_and_comparison() {
    let settings = SolverSettings::on(-6.0, 6.0, 300);
    let mut spec = bump_model(1.0);
    spec.reward = RewardFamily {
        depth: 1,
        levels: vec![
            RewardFn::Bump {
                amplitude: 2.0,
                center: 0.0,
                width: 1.0,
            },
            RewardFn::Constant { value: 1.0 },
        ],
    };
    let grid = solve_generation_system(&spec, &settings).unwrap();
    assert!(grid.levels[1].values.iter().all(|v| (v - 1.0).abs() < 1e-8));
    // level 0 has source α·G(1) = α
    let lev = &grid.levels[0];
    assert!(lev.values.iter().zip(&lev.obstacle).all(|(v, g)| *v >= g - 1e-12));
    assert!(lev.values.iter().all(|v| *v <= 2.0 + 1e-12));

    let scalar = solve_scalar(&bump_model(1.0), &settings).unwrap();
    let mut higher = spec.clone();
    higher.reward = RewardFamily {
        depth: 1,
        levels: vec![
            RewardFn::Bump {
                amplitude: 2.0,
                center: 0.0,
                width: 1.5,
            },
            spec.reward.levels[0].clone(),
        ],
    };
    let grid = solve_generation_system(&higher, &settings).unwrap();
    let tol = 1e-10;
    assert!(grid.levels[0]
        .values
        .iter()
        .zip(&grid.levels[1].values)
        .all(|(a, b)| *a >= b - tol));
    assert!(sup_diff(&grid.levels[1].values, &scalar.levels[0].values) < 1e-8);
}

#[test]
fn psor_agrees_with_policy_iteration() {
    let mut settings = SolverSettings::on(-5.0, 5.0, 100);
    let spec = bump_model(1.0);
    let a = solve_scalar(&spec, &settings).unwrap();
    settings.linear_solver = LinearSolver::Psor;
    let b = solve_scalar(&spec, &settings).unwrap();
    assert!(sup_diff(&a.levels[0].values, &b.levels[0].values) < 1e-7);
    assert_ne!(a.model_hash, b.model_hash);
    assert_eq!(a.model_fingerprint, b.model_fingerprint);
}

#[test]
fn domain_doubling_bias_is_small() {
    let spec = bump_model(1.0);
    let narrow = solve_scalar(&spec, &SolverSettings::on(-6.0, 6.0, 600)).unwrap();
    let wide = solve_scalar(&spec, &SolverSettings::on(-12.0, 12.0, 1200)).unwrap();
    for x in [-3.0, -1.0, 0.0, 0.5, 2.0, 4.0] {
        let d = (narrow.value(0, x) - wide.value(0, x)).abs();
        assert!(d < 1e-6, "x = {x}: {d}");
    }
    // the far-field extension beyond the narrow domain tracks the wide solve
    let d = (narrow.value(0, 8.0) - wide.value(0, 8.0)).abs();
    assert!(d < 1e-3, "{d}");
}

#[test]
fn picard_is_monotone_and_bounded() {
    let spec = bump_model(1.0);
    let grid = solve_scalar(&spec, &SolverSettings::on(-6.0, 6.0, 300)).unwrap();
    let log = grid.log.as_ref().unwrap();
    let lev = &log.levels[0];
    assert_eq!(lev.init, InitKind::RewardMax);
    assert!(lev.monotone);
    assert!(lev.ratios.iter().all(|r| *r < 1.0));
    let values = &grid.levels[0].values;
    let g = &grid.levels[0].obstacle;
    assert!(values.iter().zip(g).all(|(v, g)| *v >= *g - 1e-12 && *v <= 2.0 + 1e-12));
    // far from the bump v solves 2v = ½ + ½v²
    let far = 2.0 - 3f64.sqrt();
    assert!((grid.value(0, 30.0) - far).abs() < 1e-6);
    assert!(!log.uniqueness_condition_met);
    assert!(!log.warnings.is_empty());
}

#[test]
fn residual_report_on_put() {
    let spec = put_model();
    let settings = SolverSettings::on(1e-3, 4.0, 800);
    let grid = solve_scalar(&spec, &settings).unwrap();
    let r = &residual_report(&grid).unwrap()[0];
    assert!(r.max_obstacle_violation <= 0.0);
    assert!(r.max_residual_free < 1e-10);
    assert!(r.min_residual_contact >= -1e-12);
    let x_star = 0.625 / 1.625;
    let expected = ((x_star - 1e-3) / settings.step()).floor() as usize + 1;
    assert!((r.contact_cells as i64 - expected as i64).abs() <= 2);

    let empty = ValueGrid::unsolved(&spec, &settings);
    assert!(matches!(residual_report(&empty), Err(Error::Unsolved)));
}

#[test]
fn grid_csv_and_lookup() {
    let spec = bump_model(1.0);
    let grid = solve_scalar(&spec, &SolverSettings::on(-2.0, 2.0, 4)).unwrap();
    let mut buf = Vec::new();
    grid.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "n,x,v,g,contact");
    assert_eq!(lines.len(), 6);
    assert!(lines[1].starts_with("0,-2,"));
    let v = &grid.levels[0].values;
    assert_eq!(grid.value(0, -1.0), v[1]);
    assert!((grid.value(0, -0.5) - 0.5 * (v[1] + v[2])).abs() < 1e-15);
    assert!((grid.value(0, 2.0 + 1e-12) - v[4]).abs() < 1e-9);
    assert!(grid.contact_gap(0, 0.0) >= 0.0);
}

#[test]
fn rejects_bad_settings() {
    let spec = bump_model(1.0);
    assert!(solve_scalar(&spec, &SolverSettings::on(1.0, -1.0, 10)).is_err());
    assert!(solve_scalar(&spec, &SolverSettings::on(-1.0, 1.0, 1)).is_err());
    let mut two = spec.clone();
    two.dimension = 2;
    assert!(solve_scalar(&two, &SolverSettings::default()).is_err());
}

