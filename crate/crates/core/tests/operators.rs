//! Reference-grid operator checks that are too heavy for module unit tests:
//! exact equilibrium preservation of one transport step, kernel symmetry on
//! random pairs, refinement behavior of the nullspace residuals and of the
//! sampled kernel/envelope ratio.

use dvbolt::collision::{kernel_envelope, CollisionOperator, KernelSpec};
use dvbolt::rng::CounterRng;
use dvbolt::solver::{initial_field, picard_iterate, InitialRecipe, SolverConfig};
use dvbolt::velocity::{nu_of_v, VelocityGrid, WeightSpec};
use std::sync::OnceLock;

fn ref_engine() -> &'static (VelocityGrid<f64>, CollisionOperator<f64>) {
    static CELL: OnceLock<(VelocityGrid<f64>, CollisionOperator<f64>)> = OnceLock::new();
    CELL.get_or_init(|| {
        let grid = VelocityGrid::<f64>::new(6.0, 0.75).unwrap();
        let kernel = KernelSpec::new(1.0, 1.0).unwrap();
        let op = CollisionOperator::new(&grid, &kernel).unwrap();
        (grid, op)
    })
}

#[test]
fn reference_transport_step_keeps_equilibrium_to_1e10() {
    let (grid, op) = ref_engine();
    let wspec = WeightSpec::default_spec();
    let field = initial_field(InitialRecipe::Equilibrium, grid, &wspec, 32, 1.0).unwrap();
    let config = SolverConfig::<f64>::default();
    let (next, report) = picard_iterate(&field, &config, op, &wspec, 0.0052).unwrap();
    let norms = next.norms(grid, &wspec).unwrap();
    assert!(norms.winf <= 1e-10, "winf {}", norms.winf);
    assert_eq!(report.clipped_negatives, 0);
    assert!(report.i_factor_range.0 > 0.0 && report.i_factor_range.1 <= 1.0);
}

#[test]
fn reference_gamma_plus_of_sqrt_mu_is_nu_sqrt_mu() {
    let (grid, op) = ref_engine();
    let f: Vec<f64> = grid.mu.iter().map(|m| m.sqrt()).collect();
    let (gp, _) = op.gamma(&f);
    for v in (0..grid.len()).step_by(53) {
        let expected = f[v] * op.nu()[v];
        assert!(
            (gp[v] - expected).abs() <= 1e-12 * expected.max(1e-300),
            "node {v}"
        );
    }
}

#[test]
fn reference_nu_value_and_maxwell_kernel_constancy() {
    let (grid, _) = ref_engine();
    let hard = KernelSpec::new(1.0, 1.0).unwrap();
    let nu0 = nu_of_v(grid, &hard, [0.0; 3]).unwrap();
    let continuum = 2.0 * std::f64::consts::PI * (8.0 / std::f64::consts::PI).sqrt();
    assert!((nu0 - continuum).abs() < 0.06, "nu(0) = {nu0}");

    let maxwell = KernelSpec::new(0.0, 1.0).unwrap();
    let expected = 2.0 * std::f64::consts::PI * grid.mu_mass;
    for &v in [[0.0, 0.0, 0.0], [3.0, 0.0, 0.0], [6.0, 6.0, 6.0]].iter() {
        let nu = nu_of_v(grid, &maxwell, v).unwrap();
        assert!((nu - expected).abs() < 1e-12, "nu({v:?}) = {nu}");
    }
}

#[test]
fn reference_kernel_symmetry_100_pairs() {
    let (grid, op) = ref_engine();
    let n = grid.len();
    let mut rng = CounterRng::new(77);
    let fs: Vec<Vec<f64>> = (0..10)
        .map(|_| (0..n).map(|_| rng.uniform::<f64>() - 0.5).collect())
        .collect();
    let gs: Vec<Vec<f64>> = (0..10)
        .map(|_| (0..n).map(|_| rng.uniform::<f64>() - 0.5).collect())
        .collect();
    let kfs: Vec<Vec<f64>> = fs.iter().map(|f| op.k_apply(f)).collect();
    let kgs: Vec<Vec<f64>> = gs.iter().map(|g| op.k_apply(g)).collect();
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
    let mut sup = 0.0_f64;
    for (f, kf) in fs.iter().zip(&kfs) {
        for (g, kg) in gs.iter().zip(&kgs) {
            let defect = (dot(kf, g) - dot(f, kg)).abs()
                / (dot(f, f).sqrt() * dot(g, g).sqrt());
            sup = sup.max(defect);
        }
    }
    assert!(sup <= 1e-6, "symmetry defect over 100 pairs: {sup:e}");
}

#[test]
fn nullspace_residual_decreases_under_refinement() {
    let kernel = KernelSpec::new(1.0, 1.0).unwrap();
    let residual = |dv: f64| -> f64 {
        let grid = VelocityGrid::<f64>::new(4.5, dv).unwrap();
        let op = CollisionOperator::new(&grid, &kernel).unwrap();
        let g: Vec<f64> = grid.mu.iter().map(|m| m.sqrt()).collect();
        let kg = op.k_apply(&g);
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..grid.len() {
            num += (op.nu()[i] * g[i] - kg[i]).powi(2);
            den += (op.nu()[i] * g[i]).powi(2);
        }
        (num / den).sqrt()
    };
    let coarse = residual(0.75);
    let fine = residual(0.5);
    assert!(coarse < 0.1, "coarse residual {coarse}");
    assert!(fine < 0.62 * coarse, "no refinement gain: {coarse} -> {fine}");
}

#[test]
fn kernel_envelope_ratio_stable_under_refinement() {
    // Sample the symmetrized kernel at node pairs common to both lattices
    // and compare the sup of |k| / envelope.
    let kernel = KernelSpec::new(1.0, 1.0).unwrap();
    let sup_ratio = |dv: f64| -> f64 {
        let grid = VelocityGrid::<f64>::new(6.0, dv).unwrap();
        let op = CollisionOperator::new(&grid, &kernel).unwrap();
        // pairs on the dv = 0.75 sub-lattice so both grids hit the same
        // physical points
        let mut pairs = Vec::new();
        let step = (0.75 / dv).round() as i32;
        let reach = 4;
        for di in [-2_i32, -1, 1, 2] {
            for dj in [0_i32, 1] {
                for base in 0..reach {
                    let v = (base * step, 0, 0);
                    let e = (v.0 + di * step, dj * step, step);
                    pairs.push((v, e));
                }
            }
        }
        let mut sup = 0.0_f64;
        for ((vi, vj, vk), (ei, ej, ek)) in pairs {
            let v_idx = grid.flat(vi, vj, vk);
            let e_idx = grid.flat(ei, ej, ek);
            let row_v = op.k_row(v_idx);
            let row_e = op.k_row(e_idx);
            let k_sym = (row_v[e_idx] + row_e[v_idx]) / (2.0 * grid.quad_weight);
            let env = kernel_envelope(grid.nodes[v_idx], grid.nodes[e_idx]).unwrap();
            sup = sup.max(k_sym.abs() / env);
        }
        sup
    };
    let coarse = sup_ratio(0.75);
    let fine = sup_ratio(0.375);
    let drift = (fine - coarse).abs() / coarse;
    assert!(
        drift <= 0.10,
        "kernel/envelope sup ratio drift {:.1}% ({coarse} -> {fine})",
        100.0 * drift
    );
}

#[test]
fn collide_reference_equilibrium_defect_is_tiny() {
    let (grid, op) = ref_engine();
    let mu = grid.mu.clone();
    let mut gain = vec![0.0; grid.len()];
    op.gain_field(&mu, &mut gain);
    // discrete mass defect of the collision operator at equilibrium
    let defect: f64 = gain
        .iter()
        .zip(op.nu().iter().zip(mu.iter()))
        .map(|(&g, (&nu, &m))| (g - nu * m) * grid.quad_weight)
        .sum();
    assert!(defect.abs() < 1e-15, "equilibrium mass defect {defect:e}");
}
