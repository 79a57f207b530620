//! Property-based invariants over randomized inputs.

use dvbolt::cli;
use dvbolt::collision::{CollisionOperator, KernelSpec};
use dvbolt::geometry::{backward_exit, Domain};
use dvbolt::scalar::{add_scaled, norm, norm_sq};
use dvbolt::solver::{conservation_projection, initial_field, InitialRecipe};
use dvbolt::velocity::{VelocityGrid, WeightSpec};
use proptest::prelude::*;
use std::sync::OnceLock;

fn small_engine() -> &'static (VelocityGrid<f64>, CollisionOperator<f64>) {
    static CELL: OnceLock<(VelocityGrid<f64>, CollisionOperator<f64>)> = OnceLock::new();
    CELL.get_or_init(|| {
        let grid = VelocityGrid::<f64>::new(3.0, 1.0).unwrap();
        let kernel = KernelSpec::new(1.0, 1.0).unwrap();
        let op = CollisionOperator::new(&grid, &kernel).unwrap();
        (grid, op)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ball_exit_round_trips_and_lands_on_boundary(
        x in prop::array::uniform3(-0.57_f64..0.57),
        v in prop::array::uniform3(-3.0_f64..3.0),
    ) {
        prop_assume!(norm(v) > 1e-3);
        let d = Domain::<f64>::unit_ball();
        prop_assume!(d.is_interior(x));
        let (t_b, x_b) = backward_exit(&d, x, v).unwrap();
        prop_assert!(t_b > 0.0);
        prop_assert!(t_b <= d.diameter() / norm(v) + 1e-12);
        let back = add_scaled(x_b, t_b, v);
        for c in 0..3 {
            prop_assert!((back[c] - x[c]).abs() < 1e-12);
        }
        prop_assert!(d.level_set(x_b).abs() <= 1e-10 * (1.0 + norm_sq(x_b)));
    }

    #[test]
    fn slab_exit_round_trips(
        x1 in -0.99_f64..0.99,
        v in prop::array::uniform3(-4.0_f64..4.0),
    ) {
        prop_assume!(v[0].abs() > 1e-3);
        let d = Domain::slab(1.0_f64);
        let x = [x1, 0.3, -0.8];
        let (t_b, x_b) = backward_exit(&d, x, v).unwrap();
        prop_assert!(t_b >= 0.0);
        prop_assert!((x_b[0].abs() - 1.0).abs() < 1e-12);
        let back = add_scaled(x_b, t_b, v);
        prop_assert!((back[0] - x1).abs() < 1e-12);
    }

    #[test]
    fn projection_hits_target_and_is_idempotent(
        scale in 0.5_f64..2.0,
        jitter in 0.0_f64..0.2,
    ) {
        let (grid, _) = small_engine();
        let wspec = WeightSpec::default_spec();
        let mut field =
            initial_field(InitialRecipe::Equilibrium, grid, &wspec, 4, 1.0).unwrap();
        for (i, x) in field.values.iter_mut().enumerate() {
            *x *= scale + jitter * ((i % 7) as f64 / 7.0);
        }
        let target = 2.0 * grid.mu_mass;
        conservation_projection(&mut field, grid, target).unwrap();
        let mass = field.mass(grid);
        prop_assert!((mass / target - 1.0).abs() < 1e-13);
        let factor = conservation_projection(&mut field, grid, target).unwrap();
        prop_assert!((factor - 1.0).abs() < 1e-14);
    }

    #[test]
    fn gain_and_loss_nonnegative_on_nonnegative_fields(seed in 0_u64..500) {
        let (grid, op) = small_engine();
        let mut rng = dvbolt::rng::CounterRng::new(seed);
        let f: Vec<f64> = (0..grid.len()).map(|_| rng.uniform::<f64>()).collect();
        let mut gain = vec![0.0; grid.len()];
        op.gain_field(&f, &mut gain);
        prop_assert!(gain.iter().all(|&g| g >= 0.0));
        let idx = (rng.next_u64() % grid.len() as u64) as usize;
        let (g, l) = op.collide(&f, &f, idx).unwrap();
        prop_assert!(g >= 0.0 && l >= 0.0);
    }

    #[test]
    fn scenario_round_trips_for_random_valid_configs(
        seed in any::<u64>(),
        kappa in 0.0_f64..1.0,
        n_x in 2_usize..64,
        every in 1_usize..10,
        depth in 0.01_f64..1.0,
    ) {
        let mut s = cli::Scenario::default();
        s.name = format!("prop-{seed}");
        s.rng.seed = seed;
        s.kernel.kappa = kappa;
        s.grid.n_x = n_x;
        s.output.every = every;
        s.initial.recipe = "vacuum_hole".into();
        s.initial.depth = depth;
        s.checks.list = vec!["cycle_bound".into(), "l2_growth".into()];
        let text = toml::to_string(&s).unwrap();
        let back = cli::parse_scenario(&text).unwrap();
        prop_assert_eq!(s, back);
    }
}
