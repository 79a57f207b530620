//! Time advancement on the slab: semi-Lagrangian transport of the mild form
//! along backward characteristics with an exponential integrating factor,
//! diffuse-reflection wall coupling, Picard iteration on the frozen-source
//! linear problem, and the global march that chains local solves.

use crate::collision::CollisionOperator;
use crate::error::{Error, Result};
use crate::scalar::{pairwise_sum, Real};
use crate::velocity::{
    compute_norms, half_space_flux, FieldKind, NormRecord, VelocityGrid, WeightSpec,
};
use rayon::prelude::*;

/// Distribution sampled on slab cells x velocity lattice.
///
/// `values` is cell-major: values[cell * n_v + node]. In the nonlinear mode
/// the values are F >= 0; in the linear homogeneous mode they hold the
/// signed deviation g = F - mu.
#[derive(Clone, Debug)]
pub struct DistributionField<T> {
    pub n_x: usize,
    pub dx: T,
    pub half_width: T,
    pub values: Vec<T>,
    pub time: T,
    pub kind: FieldKind,
}

impl<T: Real> DistributionField<T> {
    pub fn cell_center(&self, i: usize) -> T {
        -self.half_width + self.dx * (T::c(i as f64) + T::c(0.5))
    }

    pub fn cell(&self, i: usize, n_v: usize) -> &[T] {
        &self.values[i * n_v..(i + 1) * n_v]
    }

    /// Total mass, fixed-order reduction.
    pub fn mass(&self, grid: &VelocityGrid<T>) -> T {
        let n_v = grid.len();
        let per_cell: Vec<T> = (0..self.n_x)
            .map(|c| {
                let cell = self.cell(c, n_v);
                let terms: Vec<T> = match self.kind {
                    FieldKind::Distribution => cell.to_vec(),
                    FieldKind::Deviation => cell
                        .iter()
                        .zip(grid.mu.iter())
                        .map(|(&g, &m)| g + m)
                        .collect(),
                };
                pairwise_sum(&terms) * grid.quad_weight
            })
            .collect();
        pairwise_sum(&per_cell) * self.dx
    }

    pub fn norms(&self, grid: &VelocityGrid<T>, wspec: &WeightSpec<T>) -> Result<NormRecord<T>> {
        compute_norms(grid, wspec, self.dx, &self.values, self.kind)
    }
}

/// Step-size policy and iteration tolerances of the march.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig<T> {
    /// Local lifespan constant: t_hat0 = 1 / (c_hat_rho (1 + sup|wf|)).
    pub c_hat_rho: T,
    /// Transport step cap dt <= dt_cap_factor * dx / R_v.
    pub dt_cap_factor: T,
    /// Sup-norm tolerance on successive weighted Picard iterates.
    pub picard_tol: T,
    pub picard_max_iters: usize,
    /// Amplitude threshold whose first crossing time is monitored.
    pub delta_target: T,
    /// Guard on the initial weighted amplitude accepted by the march.
    pub m0_cap: T,
    pub t_end: T,
    pub conservation_projection: bool,
    /// March the signed deviation with frozen frequency nu and no gain.
    pub linear_homogeneous: bool,
}

impl<T: Real> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            c_hat_rho: T::c(10.0),
            dt_cap_factor: T::c(0.5),
            picard_tol: T::c(1e-10),
            picard_max_iters: 50,
            delta_target: T::c(0.1),
            m0_cap: T::c(1e4),
            t_end: T::one(),
            conservation_projection: true,
            linear_homogeneous: false,
        }
    }
}

/// Outcome of one accepted Picard step.
#[derive(Clone, Copy, Debug)]
pub struct StepReport<T> {
    pub time: T,
    pub dt: T,
    pub iteration_count: usize,
    pub final_contraction_ratio: T,
    /// Relative mass change of the raw transport update (before projection).
    pub mass_drift: T,
    pub min_f: T,
    pub norms: NormRecord<T>,
    /// Range of the exponential integrating factor across the field.
    pub i_factor_range: (T, T),
    pub clipped_negatives: usize,
}

/// One diagnostics row of a march, mirrored into the CSV output.
#[derive(Clone, Copy, Debug)]
pub struct DiagnosticsRow<T> {
    pub t: T,
    pub mass: T,
    pub l2: T,
    pub winf: T,
    pub gauss_l1v_sup: T,
    pub min_f: T,
    pub min_r_over_nu: T,
    pub contraction_ratio: T,
}

/// Finished march with its recorded history.
pub struct MarchResult<T> {
    pub field: DistributionField<T>,
    pub rows: Vec<DiagnosticsRow<T>>,
    pub reports: Vec<StepReport<T>>,
    pub below_delta_time: Option<T>,
    pub clipped_total: usize,
}

/// Wall emission state for one transport step.
struct WallEmission<T> {
    /// Discrete normalization 1 / sum_{v1>0} mu v1 dv^3, chosen so the
    /// equilibrium flux is re-emitted exactly on the lattice.
    c_mu_h: T,
    flux_left: T,
    flux_right: T,
}

impl<T: Real> WallEmission<T> {
    fn incoming_left(&self, mu_v: T) -> T {
        self.c_mu_h * mu_v * self.flux_left
    }
    fn incoming_right(&self, mu_v: T) -> T {
        self.c_mu_h * mu_v * self.flux_right
    }
}

/// Discrete wall normalization constant for a grid.
pub fn wall_normalization<T: Real>(grid: &VelocityGrid<T>) -> T {
    let q = half_space_flux(grid, &grid.mu, [T::one(), T::zero(), T::zero()]);
    T::one() / q
}

/// Incoming velocity slice of the diffuse-reflection condition: for every
/// v with v.n < 0, F_in(v) = c_mu_h mu(v) * outgoing flux of `f_at_wall`.
///
/// The normalization is the discrete one from [`wall_normalization`], so an
/// equilibrium wall slice is re-emitted exactly.
pub fn apply_diffuse_bc<T: Real>(
    grid: &VelocityGrid<T>,
    f_at_wall: &[T],
    n: [T; 3],
) -> Vec<T> {
    let flux = half_space_flux(grid, f_at_wall, n);
    let c = wall_normalization(grid);
    grid.nodes
        .iter()
        .zip(grid.mu.iter())
        .map(|(&v, &mu)| {
            if crate::scalar::dot(v, n) < T::zero() {
                c * mu * flux
            } else {
                T::zero()
            }
        })
        .collect()
}

/// Spatial interpolation of one velocity column at position x.
///
/// Linear between cell centers; in the half-cell next to a wall the stencil
/// blends toward the wall emission for rays entering from that wall and
/// falls back to the nearest cell otherwise, so every weight stays in [0,1].
#[inline]
#[allow(clippy::too_many_arguments)]
fn interp_column<T: Real>(
    field: &DistributionField<T>,
    n_v: usize,
    node: usize,
    v1: T,
    x: T,
    wall: Option<&WallEmission<T>>,
    mu_v: T,
) -> T {
    let h = field.half_width;
    let s = (x + h) / field.dx - T::c(0.5);
    let last = field.n_x - 1;
    if s <= T::zero() {
        // between the left wall and the first center
        let lambda = ((x + h) / (field.dx * T::c(0.5))).max(T::zero()).min(T::one());
        let cell0 = field.values[node];
        if v1 > T::zero() {
            if let Some(w) = wall {
                return (T::one() - lambda) * w.incoming_left(mu_v) + lambda * cell0;
            }
        }
        cell0
    } else if s >= T::c(last as f64) {
        let lambda = ((h - x) / (field.dx * T::c(0.5))).max(T::zero()).min(T::one());
        let cell_last = field.values[last * n_v + node];
        if v1 < T::zero() {
            if let Some(w) = wall {
                return (T::one() - lambda) * w.incoming_right(mu_v) + lambda * cell_last;
            }
        }
        cell_last
    } else {
        let i0 = s.floor();
        let theta = s - i0;
        let i0 = i0.as_f64() as usize;
        let a = field.values[i0 * n_v + node];
        let b = field.values[(i0 + 1) * n_v + node];
        (T::one() - theta) * a + theta * b
    }
}

/// Exponential-integrator source factor (1 - exp(-r tau)) / r, stable as
/// r -> 0.
#[inline]
fn source_factor<T: Real>(r: T, tau: T) -> T {
    let a = r * tau;
    if a < T::c(1e-12) {
        tau
    } else {
        -(-a).exp_m1() / r
    }
}

/// One semi-Lagrangian transport step of the mild form.
///
/// For each (cell, node) the backward foot x - v1 dt either stays interior,
/// in which case the update is exp(-R dt) F(foot) plus the exponentially
/// integrated frozen source, or hits a wall at tau* < dt, in which case the
/// emitted diffuse value is propagated forward with the same integrating
/// factor. `r_field` and `source` are frozen coefficient fields (cell-major)
/// and must be nonnegative in the nonlinear mode.
pub fn transport_duhamel_step<T: Real>(
    field: &DistributionField<T>,
    grid: &VelocityGrid<T>,
    r_field: &[T],
    source: &[T],
    dt: T,
) -> Result<(DistributionField<T>, (T, T))> {
    if !(dt > T::zero()) {
        return Err(Error::InvalidInput("transport step needs dt > 0".into()));
    }
    if r_field.iter().any(|&r| r < T::zero()) {
        return Err(Error::ContractViolation(
            "negative collision frequency in transport".into(),
        ));
    }
    let two_h = field.half_width + field.half_width;
    if grid.radius * dt > two_h - field.dx {
        return Err(Error::InvalidInput(format!(
            "dt {} too large: a characteristic could cross both walls",
            dt
        )));
    }
    let n_v = grid.len();
    let n_x = field.n_x;
    let h = field.half_width;

    // Phase A: outgoing traces on both walls give the new emission fluxes.
    // Outgoing feet stay interior, so no wall value is needed here.
    let r_mid = |x: T, node: usize| -> T {
        interp_r(field, r_field, n_v, node, x)
    };
    let transported_at = |x_target: T, node: usize, v1: T| -> T {
        let foot = x_target - v1 * dt;
        let x_m = x_target - v1 * dt * T::c(0.5);
        let r = r_mid(x_m, node);
        let e = (-r * dt).exp();
        let src = interp_plain(field, source, n_v, node, x_m);
        e * interp_column(field, n_v, node, v1, foot, None, grid.mu[node])
            + src * source_factor(r, dt)
    };
    let mut out_left = vec![T::zero(); n_v];
    let mut out_right = vec![T::zero(); n_v];
    for (node, &v) in grid.nodes.iter().enumerate() {
        if v[0] < T::zero() {
            out_left[node] = transported_at(-h, node, v[0]);
        } else if v[0] > T::zero() {
            out_right[node] = transported_at(h, node, v[0]);
        }
    }
    let wall = WallEmission {
        c_mu_h: wall_normalization(grid),
        flux_left: half_space_flux(grid, &out_left, [-T::one(), T::zero(), T::zero()]),
        flux_right: half_space_flux(grid, &out_right, [T::one(), T::zero(), T::zero()]),
    };

    // Phase B: full field update.
    let cells: Vec<(Vec<T>, T, T)> = (0..n_x)
        .into_par_iter()
        .map(|ci| {
            let x_i = field.cell_center(ci);
            let mut cell = vec![T::zero(); n_v];
            let mut e_min = T::infinity();
            let mut e_max = -T::infinity();
            for node in 0..n_v {
                let v1 = grid.nodes[node][0];
                let mu_v = grid.mu[node];
                let foot = x_i - v1 * dt;
                let (tau, start) = if v1 > T::zero() && foot < -h {
                    let tau = (x_i + h) / v1;
                    (tau, Some(wall.incoming_left(mu_v)))
                } else if v1 < T::zero() && foot > h {
                    let tau = (x_i - h) / v1;
                    (tau, Some(wall.incoming_right(mu_v)))
                } else {
                    (dt, None)
                };
                let x_m = x_i - v1 * tau * T::c(0.5);
                let r = interp_r(field, r_field, n_v, node, x_m);
                let e = (-r * tau).exp();
                e_min = e_min.min(e);
                e_max = e_max.max(e);
                let src = interp_plain(field, source, n_v, node, x_m);
                let upstream = match start {
                    Some(wall_value) => wall_value,
                    None => interp_column(field, n_v, node, v1, foot, Some(&wall), mu_v),
                };
                cell[node] = e * upstream + src * source_factor(r, tau);
            }
            (cell, e_min, e_max)
        })
        .collect();

    let mut values = Vec::with_capacity(n_x * n_v);
    let mut e_min = T::infinity();
    let mut e_max = -T::infinity();
    for (cell, lo, hi) in cells {
        values.extend_from_slice(&cell);
        e_min = e_min.min(lo);
        e_max = e_max.max(hi);
    }
    Ok((
        DistributionField {
            n_x,
            dx: field.dx,
            half_width: field.half_width,
            values,
            time: field.time + dt,
            kind: field.kind,
        },
        (e_min, e_max),
    ))
}

#[inline]
fn interp_plain<T: Real>(
    field: &DistributionField<T>,
    data: &[T],
    n_v: usize,
    node: usize,
    x: T,
) -> T {
    let h = field.half_width;
    let s = (x + h) / field.dx - T::c(0.5);
    let last = field.n_x - 1;
    if s <= T::zero() {
        data[node]
    } else if s >= T::c(last as f64) {
        data[last * n_v + node]
    } else {
        let i0 = s.floor();
        let theta = s - i0;
        let i0 = i0.as_f64() as usize;
        (T::one() - theta) * data[i0 * n_v + node] + theta * data[(i0 + 1) * n_v + node]
    }
}

#[inline]
fn interp_r<T: Real>(
    field: &DistributionField<T>,
    r_field: &[T],
    n_v: usize,
    node: usize,
    x: T,
) -> T {
    interp_plain(field, r_field, n_v, node, x)
}

/// Coefficient fields of one Picard sweep: the variable collision frequency
/// and the frozen gain source, both cell-major.
fn sweep_coefficients<T: Real>(
    field: &DistributionField<T>,
    engine: &CollisionOperator<T>,
    linear: bool,
) -> (Vec<T>, Vec<T>) {
    let n_v = engine.grid.len();
    if linear {
        let mut r = Vec::with_capacity(field.n_x * n_v);
        for _ in 0..field.n_x {
            r.extend_from_slice(engine.nu());
        }
        let source = vec![T::zero(); field.n_x * n_v];
        return (r, source);
    }
    let per_cell: Vec<(Vec<T>, Vec<T>)> = (0..field.n_x)
        .into_par_iter()
        .map(|ci| {
            let cell = field.cell(ci, n_v);
            let mut r = vec![T::zero(); n_v];
            engine.a_of(cell, &mut r);
            let mut gain = vec![T::zero(); n_v];
            engine.gain_field(cell, &mut gain);
            (r, gain)
        })
        .collect();
    let mut r_field = Vec::with_capacity(field.n_x * n_v);
    let mut source = Vec::with_capacity(field.n_x * n_v);
    for (r, g) in per_cell {
        r_field.extend_from_slice(&r);
        source.extend_from_slice(&g);
    }
    (r_field, source)
}

/// Picard iteration for one time step: solve the linear transport problem
/// with frequency R(f^m) and source Q_+(F^m, F^m) until the weighted
/// sup-difference of successive iterates drops below picard_tol.
pub fn picard_iterate<T: Real>(
    field: &DistributionField<T>,
    config: &SolverConfig<T>,
    engine: &CollisionOperator<T>,
    wspec: &WeightSpec<T>,
    dt: T,
) -> Result<(DistributionField<T>, StepReport<T>)> {
    let n_v = engine.grid.len();
    let linear = config.linear_homogeneous;
    // weight w / sqrt(mu) for the iterate metric
    let hweight: Vec<T> = engine
        .grid
        .nodes
        .iter()
        .zip(engine.grid.mu.iter())
        .map(|(&v, &m)| crate::velocity::weight_w(wspec, v) / m.sqrt())
        .collect();

    let mut current = field.clone();
    let mut prev_diff = T::infinity();
    let mut max_ratio = T::zero();
    let mut iterations = 0usize;
    let mut i_range;
    loop {
        let (r_field, source) = sweep_coefficients(&current, engine, linear);
        let (next, e_range) = transport_duhamel_step(field, &engine.grid, &r_field, &source, dt)?;
        i_range = e_range;
        iterations += 1;
        let diff = weighted_sup_diff(&next.values, &current.values, &hweight, n_v);
        let converged = diff <= config.picard_tol || linear;
        if !linear && prev_diff.is_finite() && prev_diff > T::zero() {
            max_ratio = max_ratio.max(diff / prev_diff);
        }
        prev_diff = diff;
        current = next;
        if converged {
            break;
        }
        if iterations >= config.picard_max_iters {
            return Err(Error::StepRejected(format!(
                "picard did not reach {:e} within {} sweeps (last diff {:e})",
                config.picard_tol, config.picard_max_iters, diff
            )));
        }
    }

    let mut clipped = 0usize;
    if !linear {
        let mut min_val = T::infinity();
        let mut min_at = 0usize;
        for (i, x) in current.values.iter().enumerate() {
            if *x < min_val {
                min_val = *x;
                min_at = i;
            }
        }
        if min_val < T::c(-1e-12) {
            let cell = min_at / n_v;
            let node = min_at % n_v;
            let (i, j, k) = engine.grid.coords(node);
            return Err(Error::PositivityViolation(format!(
                "distribution dropped to {min_val:e} at t = {}, cell {cell} \
                 (x1 = {}), velocity node ({i}, {j}, {k})",
                current.time,
                current.cell_center(cell)
            )));
        }
        if min_val < T::zero() {
            for x in &mut current.values {
                if *x < T::zero() {
                    *x = T::zero();
                    clipped += 1;
                }
            }
        }
    }

    let norms = current.norms(&engine.grid, wspec)?;
    let mass_before = field.mass(&engine.grid);
    let mass_after = current.mass(&engine.grid);
    let drift = if mass_before != T::zero() {
        mass_after / mass_before - T::one()
    } else {
        T::zero()
    };
    let report = StepReport {
        time: current.time,
        dt,
        iteration_count: iterations,
        final_contraction_ratio: max_ratio,
        mass_drift: drift,
        min_f: norms.min_value,
        norms,
        i_factor_range: i_range,
        clipped_negatives: clipped,
    };
    Ok((current, report))
}

fn weighted_sup_diff<T: Real>(a: &[T], b: &[T], hweight: &[T], n_v: usize) -> T {
    let mut sup = T::zero();
    for (ca, cb) in a.chunks_exact(n_v).zip(b.chunks_exact(n_v)) {
        for ((x, y), w) in ca.iter().zip(cb.iter()).zip(hweight.iter()) {
            sup = sup.max(((*x - *y) * *w).abs());
        }
    }
    sup
}

/// Rescale the distribution to a target mass. Positivity is preserved and
/// the result is idempotent up to rounding.
pub fn conservation_projection<T: Real>(
    field: &mut DistributionField<T>,
    grid: &VelocityGrid<T>,
    target_mass: T,
) -> Result<T> {
    let current = field.mass(grid);
    if !(current > T::zero()) {
        return Err(Error::DegenerateState(format!(
            "cannot project mass {current:e} onto {target_mass:e}"
        )));
    }
    let factor = target_mass / current;
    for x in &mut field.values {
        *x = *x * factor;
    }
    Ok(factor)
}

/// Advance the field by exactly one local lifespan t_hat0 = 1/(C (1 + |h|)).
pub fn solve_local<T: Real>(
    field: &DistributionField<T>,
    config: &SolverConfig<T>,
    engine: &CollisionOperator<T>,
    wspec: &WeightSpec<T>,
    target_mass: Option<T>,
) -> Result<(DistributionField<T>, Vec<StepReport<T>>)> {
    let norms = field.norms(&engine.grid, wspec)?;
    let t_hat = T::one() / (config.c_hat_rho * (T::one() + norms.winf));
    solve_until(field, config, engine, wspec, field.time + t_hat, t_hat, target_mass)
}

fn solve_until<T: Real>(
    field: &DistributionField<T>,
    config: &SolverConfig<T>,
    engine: &CollisionOperator<T>,
    wspec: &WeightSpec<T>,
    t_stop: T,
    t_hat: T,
    target_mass: Option<T>,
) -> Result<(DistributionField<T>, Vec<StepReport<T>>)> {
    let mut current = field.clone();
    let mut reports = Vec::new();
    let tiny = T::c(1e-12);
    while current.time < t_stop - tiny {
        let (next, report) = step_once(&current, config, engine, wspec, t_stop, t_hat, target_mass)?;
        current = next;
        reports.push(report);
    }
    Ok((current, reports))
}

/// One accepted step toward t_stop, halving dt on Picard rejection and
/// applying the mass projection when enabled.
#[allow(clippy::too_many_arguments)]
fn step_once<T: Real>(
    field: &DistributionField<T>,
    config: &SolverConfig<T>,
    engine: &CollisionOperator<T>,
    wspec: &WeightSpec<T>,
    t_stop: T,
    t_hat: T,
    target_mass: Option<T>,
) -> Result<(DistributionField<T>, StepReport<T>)> {
    let dt_cap = config.dt_cap_factor * field.dx / engine.grid.radius;
    let tiny = T::c(1e-12);
    let mut dt = (t_stop - field.time).min(dt_cap).min(t_hat);
    loop {
        match picard_iterate(field, config, engine, wspec, dt) {
            Ok((mut next, report)) => {
                if config.conservation_projection && !config.linear_homogeneous {
                    if let Some(target) = target_mass {
                        conservation_projection(&mut next, &engine.grid, target)?;
                    }
                }
                return Ok((next, report));
            }
            Err(Error::StepRejected(why)) => {
                dt = dt * T::c(0.5);
                if dt < tiny {
                    return Err(Error::StepRejected(format!(
                        "step size collapsed while retrying: {why}"
                    )));
                }
            }
            Err(other) => return Err(other),
        }
    }
}

/// March to t_end, recording diagnostics at the configured cadence.
pub fn march_global<T: Real>(
    field: &DistributionField<T>,
    config: &SolverConfig<T>,
    engine: &CollisionOperator<T>,
    wspec: &WeightSpec<T>,
    output_every: usize,
) -> Result<MarchResult<T>> {
    let initial_norms = field.norms(&engine.grid, wspec)?;
    if initial_norms.winf > config.m0_cap {
        return Err(Error::InvalidInput(format!(
            "initial weighted amplitude {} exceeds the configured cap {}",
            initial_norms.winf, config.m0_cap
        )));
    }
    let target_mass = field.mass(&engine.grid);
    let mut rows = Vec::new();
    let mut reports: Vec<StepReport<T>> = Vec::new();
    let mut below_delta_time = None;
    let mut clipped_total = 0usize;

    let row_of = |f: &DistributionField<T>, norms: &NormRecord<T>, ratio: T| -> DiagnosticsRow<T> {
        DiagnosticsRow {
            t: f.time,
            mass: norms.mass,
            l2: norms.l2,
            winf: norms.winf,
            gauss_l1v_sup: norms.gauss_l1v_sup,
            min_f: norms.min_value,
            min_r_over_nu: min_r_over_nu(f, engine),
            contraction_ratio: ratio,
        }
    };
    rows.push(row_of(field, &initial_norms, T::zero()));
    if initial_norms.winf <= config.delta_target {
        below_delta_time = Some(field.time);
    }

    let mut current = field.clone();
    let tiny = T::c(1e-12);
    let mut steps_since_row = 0usize;
    while current.time < config.t_end - tiny {
        let norms = current.norms(&engine.grid, wspec)?;
        let t_hat = T::one() / (config.c_hat_rho * (T::one() + norms.winf));
        let local_stop = (current.time + t_hat).min(config.t_end);
        while current.time < local_stop - tiny {
            let (next, rep) =
                step_once(&current, config, engine, wspec, local_stop, t_hat, Some(target_mass))?;
            current = next;
            clipped_total += rep.clipped_negatives;
            if below_delta_time.is_none() && rep.norms.winf <= config.delta_target {
                below_delta_time = Some(rep.time);
            }
            steps_since_row += 1;
            if steps_since_row >= output_every.max(1) {
                steps_since_row = 0;
                rows.push(row_of(&current, &rep.norms, rep.final_contraction_ratio));
            }
            reports.push(rep);
        }
    }
    if steps_since_row != 0 {
        let norms = current.norms(&engine.grid, wspec)?;
        let last_ratio = reports
            .last()
            .map(|r| r.final_contraction_ratio)
            .unwrap_or_else(T::zero);
        rows.push(row_of(&current, &norms, last_ratio));
    }

    Ok(MarchResult {
        field: current,
        rows,
        reports,
        below_delta_time,
        clipped_total,
    })
}

/// Minimum over cells and nodes of R(f) / nu for the current field.
pub fn min_r_over_nu<T: Real>(field: &DistributionField<T>, engine: &CollisionOperator<T>) -> T {
    let n_v = engine.grid.len();
    let per_cell: Vec<T> = (0..field.n_x)
        .into_par_iter()
        .map(|ci| {
            let cell = field.cell(ci, n_v);
            let dist: Vec<T> = match field.kind {
                FieldKind::Distribution => cell.to_vec(),
                FieldKind::Deviation => cell
                    .iter()
                    .zip(engine.grid.mu.iter())
                    .map(|(&g, &m)| g + m)
                    .collect(),
            };
            let mut r = vec![T::zero(); n_v];
            engine.a_of(&dist, &mut r);
            r.iter()
                .zip(engine.nu().iter())
                .map(|(&a, &b)| a / b)
                .fold(T::infinity(), T::min)
        })
        .collect();
    per_cell.into_iter().fold(T::infinity(), T::min)
}

/// Shipped initial-data recipes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitialRecipe<T> {
    Equilibrium,
    /// f0 proportional to sqrt(mu) cos(pi x1 / h), scaled to the target
    /// weighted amplitude and projected onto zero perturbation mass.
    SmallPerturbation { target_winf: T },
    /// Same shape at large amplitude (the distribution stays nonnegative).
    LargeAmplitude { target_winf: T },
    /// F = mu scaled down by `depth` on |x1| < hole_half_width, then
    /// renormalized to the equilibrium mass.
    VacuumHole { hole_half_width: T, depth: T },
}

/// Build the initial field of a recipe on n_x uniform slab cells.
pub fn initial_field<T: Real>(
    recipe: InitialRecipe<T>,
    grid: &VelocityGrid<T>,
    wspec: &WeightSpec<T>,
    n_x: usize,
    half_width: T,
) -> Result<DistributionField<T>> {
    if n_x == 0 || !(half_width > T::zero()) {
        return Err(Error::InvalidInput("empty slab".into()));
    }
    let n_v = grid.len();
    let dx = (half_width + half_width) / T::c(n_x as f64);
    let mut field = DistributionField {
        n_x,
        dx,
        half_width,
        values: Vec::with_capacity(n_x * n_v),
        time: T::zero(),
        kind: FieldKind::Distribution,
    };
    let centers: Vec<T> = (0..n_x)
        .map(|i| -half_width + dx * (T::c(i as f64) + T::c(0.5)))
        .collect();
    match recipe {
        InitialRecipe::Equilibrium => {
            for _ in 0..n_x {
                field.values.extend_from_slice(&grid.mu);
            }
        }
        InitialRecipe::SmallPerturbation { target_winf }
        | InitialRecipe::LargeAmplitude { target_winf } => {
            if !(target_winf > T::zero()) {
                return Err(Error::InvalidInput("perturbation amplitude must be positive".into()));
            }
            // raw shape f = sqrt(mu) cos(pi x / h); peak |w f| = max(w sqrt(mu))
            let pi = T::c(std::f64::consts::PI);
            let mut peak = T::zero();
            for (node, &v) in grid.nodes.iter().enumerate() {
                let wsm = crate::velocity::weight_w(wspec, v) * grid.mu[node].sqrt();
                peak = peak.max(wsm);
            }
            let cos_max = centers
                .iter()
                .map(|&x| (pi * x / half_width).cos().abs())
                .fold(T::zero(), T::max);
            let eps = target_winf / (peak * cos_max);
            if eps >= T::one() {
                return Err(Error::InvalidInput(format!(
                    "amplitude {target_winf} would make the distribution negative"
                )));
            }
            for &x in &centers {
                let profile = T::one() + eps * (pi * x / half_width).cos();
                for m in grid.mu.iter() {
                    field.values.push(*m * profile);
                }
            }
            // project onto zero perturbation mass: the cosine already sums to
            // zero over symmetric centers; remove the rounding remainder.
            let target = grid.mu_mass * (half_width + half_width);
            conservation_projection(&mut field, grid, target)?;
        }
        InitialRecipe::VacuumHole { hole_half_width, depth } => {
            if !(depth > T::zero() && depth <= T::one()) {
                return Err(Error::InvalidInput("hole depth must lie in (0, 1]".into()));
            }
            if !(hole_half_width > T::zero() && hole_half_width < half_width) {
                return Err(Error::InvalidInput("hole must be a proper subinterval".into()));
            }
            for &x in &centers {
                let factor = if x.abs() < hole_half_width {
                    T::one() - depth
                } else {
                    T::one()
                };
                for m in grid.mu.iter() {
                    field.values.push(*m * factor);
                }
            }
            let target = grid.mu_mass * (half_width + half_width);
            conservation_projection(&mut field, grid, target)?;
        }
    }
    Ok(field)
}

/// Deviation-field variant of a recipe for the linear homogeneous march.
pub fn initial_deviation<T: Real>(
    recipe: InitialRecipe<T>,
    grid: &VelocityGrid<T>,
    wspec: &WeightSpec<T>,
    n_x: usize,
    half_width: T,
) -> Result<DistributionField<T>> {
    let f = initial_field(recipe, grid, wspec, n_x, half_width)?;
    let n_v = grid.len();
    let mut values = Vec::with_capacity(f.values.len());
    for c in 0..n_x {
        for (node, &x) in f.cell(c, n_v).iter().enumerate() {
            values.push(x - grid.mu[node]);
        }
    }
    Ok(DistributionField {
        values,
        kind: FieldKind::Deviation,
        ..f
    })
}
