//! Truncated cubic velocity lattice, Maxwellian, weight functions, collision
//! frequency and the norm diagnostics used throughout the solver and the
//! verification suite.

use crate::collision::KernelSpec;
use crate::error::{Error, Result};
use crate::scalar::{norm_sq, pairwise_sum, Real};

/// (2*pi)^(-3/2), the Maxwellian normalization.
pub const MAXWELLIAN_NORM: f64 = 0.063_493_635_934_240_97;

/// Normalized global Maxwellian with zero bulk velocity and unit temperature.
#[inline]
pub fn maxwellian<T: Real>(v: [T; 3]) -> T {
    T::c(MAXWELLIAN_NORM) * (-norm_sq(v) / (T::one() + T::one())).exp()
}

/// Velocity weight parameters: w(v) = (1 + rho^2 |v|^2)^beta * exp(varpi |v|^2).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightSpec<T> {
    pub rho: T,
    pub beta: T,
    pub varpi: T,
}

impl<T: Real> WeightSpec<T> {
    pub fn new(rho: T, beta: T, varpi: T) -> Self {
        Self { rho, beta, varpi }
    }

    /// Defaults used by solver runs: rho = 2, beta = 5/2, varpi = 1/64.
    pub fn default_spec() -> Self {
        Self::new(T::c(2.0), T::c(2.5), T::c(1.0 / 64.0))
    }

    /// Parameter ranges for the strict (global-theorem) setting.
    pub fn validate_strict(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.rho > T::one()) {
            problems.push(format!("rho must be > 1, got {}", self.rho));
        }
        if !(self.beta >= T::c(2.5)) {
            problems.push(format!("beta must be >= 5/2, got {}", self.beta));
        }
        if !(self.varpi >= T::zero() && self.varpi <= T::c(1.0 / 64.0)) {
            problems.push(format!("varpi must lie in [0, 1/64], got {}", self.varpi));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigInvalid(problems))
        }
    }

    /// Wider ranges valid for the small-amplitude setting.
    pub fn validate_relaxed(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.rho > T::one()) {
            problems.push(format!("rho must be > 1, got {}", self.rho));
        }
        if !(self.beta > T::c(1.5)) {
            problems.push(format!("beta must be > 3/2, got {}", self.beta));
        }
        if !(self.varpi >= T::zero() && self.varpi < T::c(0.25)) {
            problems.push(format!("varpi must lie in [0, 1/4), got {}", self.varpi));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigInvalid(problems))
        }
    }
}

/// w(v) = (1 + rho^2 |v|^2)^beta * exp(varpi |v|^2), always >= 1.
#[inline]
pub fn weight_w<T: Real>(spec: &WeightSpec<T>, v: [T; 3]) -> T {
    let s = norm_sq(v);
    (T::one() + spec.rho * spec.rho * s).powf(spec.beta) * (spec.varpi * s).exp()
}

/// w~(v) = 1 / (w(v) sqrt(mu(v))), the wall-measure weight.
#[inline]
pub fn weight_w_tilde<T: Real>(spec: &WeightSpec<T>, v: [T; 3]) -> T {
    T::one() / (weight_w(spec, v) * maxwellian(v).sqrt())
}

/// Cubic velocity lattice {v : |v|_inf <= radius} with spacing `spacing`.
#[derive(Clone, Debug)]
pub struct VelocityGrid<T> {
    pub radius: T,
    pub spacing: T,
    /// Lattice indices run over -half..=half per axis.
    pub half: i32,
    /// Nodes per axis, 2*half + 1.
    pub side: usize,
    /// Node positions, row-major in (i, j, k).
    pub nodes: Vec<[T; 3]>,
    /// Quadrature weight per node, spacing^3.
    pub quad_weight: T,
    /// Maxwellian evaluated at the nodes.
    pub mu: Vec<T>,
    /// Lattice Maxwellian mass, sum(mu) * quad_weight.
    pub mu_mass: T,
}

impl<T: Real> VelocityGrid<T> {
    pub fn new(radius: T, spacing: T) -> Result<Self> {
        if !(radius > T::zero()) || !(spacing > T::zero()) {
            return Err(Error::InvalidInput(
                "velocity grid needs positive radius and spacing".into(),
            ));
        }
        let half_f = (radius / spacing).as_f64().round();
        let half = half_f as i32;
        if half < 1 {
            return Err(Error::InvalidInput(
                "velocity grid must contain at least 3 nodes per axis".into(),
            ));
        }
        if ((radius / spacing).as_f64() - half_f).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "radius {radius} must be an integer multiple of spacing {spacing}"
            )));
        }
        let side = (2 * half + 1) as usize;
        let mut nodes = Vec::with_capacity(side * side * side);
        for i in -half..=half {
            for j in -half..=half {
                for k in -half..=half {
                    nodes.push([
                        spacing * T::c(i as f64),
                        spacing * T::c(j as f64),
                        spacing * T::c(k as f64),
                    ]);
                }
            }
        }
        let quad_weight = spacing * spacing * spacing;
        let mu: Vec<T> = nodes.iter().map(|&v| maxwellian(v)).collect();
        let mu_mass = pairwise_sum(&mu) * quad_weight;
        Ok(Self {
            radius,
            spacing,
            half,
            side,
            nodes,
            quad_weight,
            mu,
            mu_mass,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Flat index of lattice coordinates (i, j, k) in -half..=half.
    #[inline]
    pub fn flat(&self, i: i32, j: i32, k: i32) -> usize {
        let h = self.half;
        (((i + h) as usize * self.side) + (j + h) as usize) * self.side + (k + h) as usize
    }

    /// Lattice coordinates of a flat index.
    #[inline]
    pub fn coords(&self, idx: usize) -> (i32, i32, i32) {
        let s = self.side;
        let k = (idx % s) as i32 - self.half;
        let j = ((idx / s) % s) as i32 - self.half;
        let i = (idx / (s * s)) as i32 - self.half;
        (i, j, k)
    }

    /// Index of the node nearest to the origin-shifted lattice point, if inside.
    #[inline]
    pub fn try_flat(&self, i: i32, j: i32, k: i32) -> Option<usize> {
        let h = self.half;
        if i < -h || i > h || j < -h || j > h || k < -h || k > h {
            None
        } else {
            Some(self.flat(i, j, k))
        }
    }
}

/// Collision frequency against the Maxwellian background at an arbitrary
/// velocity: nu(v) = sum_u 2*pi*b0 |v-u|^kappa mu(u) dv^3.
///
/// The angular factor integrates exactly to 2*pi for the |cos theta| cross
/// section, so no sphere quadrature is involved here.
pub fn nu_of_v<T: Real>(grid: &VelocityGrid<T>, kernel: &KernelSpec<T>, v: [T; 3]) -> Result<T> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty velocity grid".into()));
    }
    let two_pi_b0 = T::c(2.0 * std::f64::consts::PI) * kernel.b0;
    let kappa = kernel.kappa;
    let terms: Vec<T> = grid
        .nodes
        .iter()
        .zip(grid.mu.iter())
        .map(|(&u, &mu_u)| {
            let g = norm_sq(crate::scalar::sub(v, u)).sqrt();
            g.powf(kappa) * mu_u
        })
        .collect();
    Ok(two_pi_b0 * pairwise_sum(&terms) * grid.quad_weight)
}

/// nu at every lattice node plus its minimum nu0.
pub fn nu_table<T: Real>(grid: &VelocityGrid<T>, kernel: &KernelSpec<T>) -> Result<(Vec<T>, T)> {
    let mut table = Vec::with_capacity(grid.len());
    for &v in &grid.nodes {
        table.push(nu_of_v(grid, kernel, v)?);
    }
    let nu0 = table.iter().cloned().fold(T::infinity(), T::min);
    Ok((table, nu0))
}

/// Outgoing half-space flux at a wall: sum over v.n > 0 of F(v) (v.n) dv^3.
pub fn half_space_flux<T: Real>(grid: &VelocityGrid<T>, f_at_wall: &[T], n: [T; 3]) -> T {
    let terms: Vec<T> = grid
        .nodes
        .iter()
        .zip(f_at_wall.iter())
        .filter_map(|(&v, &f)| {
            let vn = crate::scalar::dot(v, n);
            if vn > T::zero() {
                Some(f * vn)
            } else {
                None
            }
        })
        .collect();
    pairwise_sum(&terms) * grid.quad_weight
}

/// What the values in a stored field mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    /// Values are the distribution F itself; the perturbation is (F - mu)/sqrt(mu).
    Distribution,
    /// Values are the deviation g = F - mu; the perturbation is g/sqrt(mu).
    Deviation,
}

/// Norm diagnostics of one field snapshot.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NormRecord<T> {
    /// L2 norm of the perturbation f over space x velocity.
    pub l2: T,
    /// sup |w f|.
    pub winf: T,
    /// sup_x of the Gaussian-damped L1_v moment of the weighted perturbation.
    pub gauss_l1v_sup: T,
    /// Total mass of F.
    pub mass: T,
    /// Minimum stored F value.
    pub min_value: T,
}

/// Norms of a spatially sampled field.
///
/// `values` is laid out cell-major: values[cell * grid.len() + node]. The
/// spatial measure of one cell is `cell_measure`. All reductions are
/// fixed-order pairwise sums.
pub fn compute_norms<T: Real>(
    grid: &VelocityGrid<T>,
    wspec: &WeightSpec<T>,
    cell_measure: T,
    values: &[T],
    kind: FieldKind,
) -> Result<NormRecord<T>> {
    let n_v = grid.len();
    assert_eq!(values.len() % n_v, 0, "field length must be cells * nodes");
    let n_cells = values.len() / n_v;
    if values.iter().any(|x| !x.is_finite()) {
        return Err(Error::DataCorrupt("NaN or infinity in field".into()));
    }

    let w: Vec<T> = grid.nodes.iter().map(|&v| weight_w(wspec, v)).collect();
    let sqrt_mu: Vec<T> = grid.mu.iter().map(|&m| m.sqrt()).collect();
    let eighth = T::c(0.125);
    let gauss: Vec<T> = grid
        .nodes
        .iter()
        .map(|&v| (-norm_sq(v) * eighth).exp())
        .collect();

    let mut l2_cells = Vec::with_capacity(n_cells);
    let mut mass_cells = Vec::with_capacity(n_cells);
    let mut winf = T::zero();
    let mut gauss_sup = T::zero();
    let mut min_value = T::infinity();
    let mut scratch = vec![T::zero(); n_v];
    let mut scratch_mass = vec![T::zero(); n_v];
    let mut scratch_gauss = vec![T::zero(); n_v];

    for c in 0..n_cells {
        let cell = &values[c * n_v..(c + 1) * n_v];
        for i in 0..n_v {
            let stored = cell[i];
            min_value = min_value.min(stored);
            let (f_pert, f_mass) = match kind {
                FieldKind::Distribution => ((stored - grid.mu[i]) / sqrt_mu[i], stored),
                FieldKind::Deviation => (stored / sqrt_mu[i], stored + grid.mu[i]),
            };
            scratch[i] = f_pert * f_pert;
            scratch_mass[i] = f_mass;
            scratch_gauss[i] = gauss[i] * (w[i] * f_pert).abs();
            winf = winf.max((w[i] * f_pert).abs());
        }
        l2_cells.push(pairwise_sum(&scratch) * grid.quad_weight);
        mass_cells.push(pairwise_sum(&scratch_mass) * grid.quad_weight);
        gauss_sup = gauss_sup.max(pairwise_sum(&scratch_gauss) * grid.quad_weight);
    }

    Ok(NormRecord {
        l2: (pairwise_sum(&l2_cells) * cell_measure).sqrt(),
        winf,
        gauss_l1v_sup: gauss_sup,
        mass: pairwise_sum(&mass_cells) * cell_measure,
        min_value,
    })
}
