//! Bilinear collision operator on the velocity lattice: gain/loss split, the
//! perturbative operators Gamma_±, the variable collision frequency R(f), the
//! linearized operator K and the Grad kernel envelope.
//!
//! The sphere integral uses a fixed 32-point product quadrature (4 polar
//! Gauss nodes split at the |cos theta| kink times 8 azimuths, all weights
//! pi/8) realized in a frame aligned with the relative velocity, so the
//! angular factor of the loss term integrates to exactly 2*pi. Post-collision
//! velocities are evaluated by trilinear interpolation on the lattice,
//! clamped to zero outside. The gain quadrature is normalized once per grid
//! so that the discrete Q(mu, mu) vanishes identically, which keeps the
//! global Maxwellian an exact fixed point of the solver.

use crate::error::{Error, Result};
use crate::scalar::{add_scaled, dot, norm, norm_sq, pairwise_sum, tangent_frame, Real};
use crate::velocity::VelocityGrid;

/// Hard-potential collision kernel B(v-u, w) = b0 |v-u|^kappa |cos theta|.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelSpec<T> {
    pub kappa: T,
    pub b0: T,
}

impl<T: Real> KernelSpec<T> {
    pub fn new(kappa: T, b0: T) -> Result<Self> {
        let spec = Self { kappa, b0 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.kappa >= T::zero() && self.kappa <= T::one()) {
            problems.push(format!("kappa must lie in [0, 1], got {}", self.kappa));
        }
        if !(self.b0 > T::zero()) {
            problems.push(format!("b0 must be positive, got {}", self.b0));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigInvalid(problems))
        }
    }

    /// Hard-sphere-like default: kappa = 1, b0 = 1.
    pub fn default_spec() -> Self {
        Self {
            kappa: T::one(),
            b0: T::one(),
        }
    }
}

/// Pointwise envelope of the Grad kernel of K:
/// (s + 1/s) exp(-s^2/8) exp(-(|v|^2-|eta|^2)^2 / (8 s^2)) with s = |v - eta|.
pub fn kernel_envelope<T: Real>(v: [T; 3], eta: [T; 3]) -> Result<T> {
    let s_sq = norm_sq(crate::scalar::sub(v, eta));
    if !(s_sq > T::zero()) {
        return Err(Error::SingularInput("kernel envelope at v = eta".into()));
    }
    let s = s_sq.sqrt();
    let eight = T::c(8.0);
    let d = norm_sq(v) - norm_sq(eta);
    Ok((s + s.recip()) * (-s_sq / eight).exp() * (-(d * d) / (eight * s_sq)).exp())
}

/// Truncation radii of the collision quadratures, in velocity units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadratureConfig<T> {
    /// Background integration ball |u| <= u_ball_radius for the gain term.
    pub u_ball_radius: T,
    /// Gain pair cut |v - u| <= z_cut; widened automatically until every
    /// lattice node has at least one integration partner.
    pub z_cut: T,
    /// Relative-velocity cut of the linearized operator K, whose kernel
    /// decays like exp(-|v-u|^2/8) and therefore needs a wider range.
    pub k_z_cut: T,
}

impl<T: Real> QuadratureConfig<T> {
    pub fn default_for(grid_radius: T) -> Self {
        Self {
            u_ball_radius: T::c(0.75) * grid_radius,
            z_cut: grid_radius,
            k_z_cut: T::c(1.5) * grid_radius,
        }
    }
}

/// Number of sphere-quadrature nodes.
pub const N_OMEGA: usize = 32;

/// Distinct stencil configurations after folding antipodal node pairs.
const N_OMEGA_FOLDED: usize = 16;

// Gauss-Legendre 2-point nodes on [0, 1]; the polar cosines are +/- these,
// with weight 1/2 each, so sum w |c| integrates |cos| exactly.
const POLAR_HALF_NODES: [f64; 2] = [0.211_324_865_405_187_13, 0.788_675_134_594_812_9];

struct OmegaStencil<T> {
    /// Quadrature weight: dv^3 * b0 * |z|^kappa * |c| * pi/8.
    w_gain: T,
    /// Flat offset (padded layout) of the base corner for the parallel shift.
    par_off: i32,
    perp_off: i32,
    par_w: [T; 8],
    perp_w: [T; 8],
}

struct ZEntry {
    d: [i32; 3],
    positive_half: bool,
    /// Start of this entry's folded stencil block in the flat array.
    stencil_start: usize,
}

/// Output nodes served by one relative offset, stored as runs of consecutive
/// flat indices along the k-axis so the hot loop is unit-stride.
struct PairList {
    /// Runs of v with both v and v+d inside the integration ball
    /// (positive-half offsets only); the pair product goes to both nodes.
    both_runs: Vec<(u32, u16)>,
    /// Runs of v outside the ball with v+d inside it; contribution to v only.
    rim_runs: Vec<(u32, u16)>,
    n_both: usize,
    n_rim: usize,
}

fn push_run(runs: &mut Vec<(u32, u16)>, v: u32) {
    if let Some(last) = runs.last_mut() {
        if last.0 + last.1 as u32 == v && last.1 < u16::MAX {
            last.1 += 1;
            return;
        }
    }
    runs.push((v, 1));
}

/// Precomputed collision quadrature engine for one (grid, kernel) pair.
pub struct CollisionOperator<T: Real> {
    pub grid: VelocityGrid<T>,
    pub kernel: KernelSpec<T>,
    pub quad: QuadratureConfig<T>,
    /// Collision frequency at every node and its minimum.
    nu: Vec<T>,
    nu0: T,
    /// |v-u|^kappa lookup over the relative lattice.
    zpow: Vec<T>,
    rel_side: usize,
    /// Euclidean integration ball, flat node indices.
    ball: Vec<u32>,
    in_ball: Vec<bool>,
    z_entries: Vec<ZEntry>,
    stencils: Vec<OmegaStencil<T>>,
    /// Physical shift pairs (a_par, a_perp) per stencil, kept out of the hot
    /// table; used by consistency tests.
    #[cfg_attr(not(test), allow(dead_code))]
    shift_vectors: Vec<([T; 3], [T; 3])>,
    pair_lists: Vec<PairList>,
    /// Padded flat index of every cube node.
    cube_to_pad: Vec<u32>,
    /// Padded-cube geometry for clamped trilinear stencils.
    pad: usize,
    side_p: usize,
    /// Per-node factor normalizing the discrete gain so Q(mu, mu) = 0.
    eq_correction: Vec<T>,
    sqrt_mu: Vec<T>,
    /// exp(-|v|^2/4) at every node, shared Gaussian factor of K.
    q_gauss: Vec<T>,
}

impl<T: Real> CollisionOperator<T> {
    pub fn new(grid: &VelocityGrid<T>, kernel: &KernelSpec<T>) -> Result<Self> {
        Self::with_quadrature(grid, kernel, QuadratureConfig::default_for(grid.radius))
    }

    pub fn with_quadrature(
        grid: &VelocityGrid<T>,
        kernel: &KernelSpec<T>,
        quad: QuadratureConfig<T>,
    ) -> Result<Self> {
        kernel.validate()?;
        if grid.is_empty() {
            return Err(Error::InvalidInput("empty velocity grid".into()));
        }
        let side = grid.side;
        let half = grid.half;
        let dv = grid.spacing;

        // |z|^kappa over relative offsets, indexed by (d + 2*half) per axis.
        let rel_side = 2 * side - 1;
        let mut zpow = vec![T::zero(); rel_side * rel_side * rel_side];
        for di in -2 * half..=2 * half {
            for dj in -2 * half..=2 * half {
                for dk in -2 * half..=2 * half {
                    let idx = rel_index(rel_side, half, di, dj, dk);
                    let z = [
                        dv * T::c(di as f64),
                        dv * T::c(dj as f64),
                        dv * T::c(dk as f64),
                    ];
                    zpow[idx] = norm(z).powf(kernel.kappa);
                }
            }
        }

        let ball_r_sq = quad.u_ball_radius * quad.u_ball_radius * (T::one() + T::c(1e-12));
        let mut ball = Vec::new();
        let mut in_ball = vec![false; grid.len()];
        for (idx, &v) in grid.nodes.iter().enumerate() {
            if norm_sq(v) <= ball_r_sq {
                ball.push(idx as u32);
                in_ball[idx] = true;
            }
        }
        if ball.is_empty() {
            return Err(Error::InvalidInput("u-ball contains no lattice node".into()));
        }

        // Widen the pair cut until every output node has at least one
        // integration partner, so the equilibrium normalization below is
        // well defined at the far lattice corners. Distances are compared in
        // integer lattice units, immune to rounding in any precision.
        let mut needed_sq_units = 0i64;
        for idx in 0..grid.len() {
            let (i, j, k) = grid.coords(idx);
            let mut best = i64::MAX;
            for &ui in &ball {
                let (a, b, c) = grid.coords(ui as usize);
                let d = ((i - a) as i64).pow(2) + ((j - b) as i64).pow(2)
                    + ((k - c) as i64).pow(2);
                best = best.min(d);
            }
            needed_sq_units = needed_sq_units.max(best);
        }
        let requested_sq_units =
            ((quad.z_cut / dv).as_f64().powi(2) * (1.0 + 1e-9)).floor() as i64;
        let z_sq_units_max = requested_sq_units.max(needed_sq_units);
        let mut quad = quad;
        quad.z_cut = dv * T::c((z_sq_units_max as f64).sqrt());

        let pad = (z_sq_units_max as f64).sqrt().floor() as usize + 2;
        let side_p = side + 2 * pad;

        // Sphere nodes per relative offset z, in a frame aligned with z.
        let z_range = (z_sq_units_max as f64).sqrt().ceil() as i32;
        let mut z_entries = Vec::new();
        let mut stencils = Vec::new();
        let mut shift_vectors = Vec::new();
        let pi = std::f64::consts::PI;
        // per-node weight pi/8 times 2 for the antipodal fold
        let w_omega = T::c(pi / 4.0);
        for di in -z_range..=z_range {
            for dj in -z_range..=z_range {
                for dk in -z_range..=z_range {
                    if di == 0 && dj == 0 && dk == 0 {
                        continue;
                    }
                    let rr = (di * di + dj * dj + dk * dk) as i64;
                    if rr > z_sq_units_max {
                        continue;
                    }
                    let z = [
                        dv * T::c(di as f64),
                        dv * T::c(dj as f64),
                        dv * T::c(dk as f64),
                    ];
                    let z_norm = norm(z);
                    let w_base =
                        grid.quad_weight * kernel.b0 * z_norm.powf(kernel.kappa) * w_omega;
                    let stencil_start = stencils.len();
                    for (omega, c) in omega_nodes(z) {
                        // parallel shift (z.omega) omega = |z| c omega
                        let zc = z_norm * c;
                        let a_par = [zc * omega[0], zc * omega[1], zc * omega[2]];
                        let a_perp = [z[0] - a_par[0], z[1] - a_par[1], z[2] - a_par[2]];
                        let (par_off, par_w) = trilinear_stencil(dv, side_p, a_par);
                        let (perp_off, perp_w) = trilinear_stencil(dv, side_p, a_perp);
                        stencils.push(OmegaStencil {
                            w_gain: w_base * c.abs(),
                            par_off,
                            perp_off,
                            par_w,
                            perp_w,
                        });
                        shift_vectors.push((a_par, a_perp));
                    }
                    z_entries.push(ZEntry {
                        d: [di, dj, dk],
                        positive_half: (di > 0)
                            || (di == 0 && dj > 0)
                            || (di == 0 && dj == 0 && dk > 0),
                        stencil_start,
                    });
                }
            }
        }

        let sqrt_mu: Vec<T> = grid.mu.iter().map(|&m| m.sqrt()).collect();
        let quarter = T::c(0.25);
        let q_gauss: Vec<T> = grid
            .nodes
            .iter()
            .map(|&v| (-norm_sq(v) * quarter).exp())
            .collect();

        // Per-offset output runs for the offset-major gain loop. Runs stay
        // inside one (i, j) row so flat and padded indices advance together.
        let mut pair_lists = Vec::with_capacity(z_entries.len());
        for entry in &z_entries {
            let mut both_runs = Vec::new();
            let mut rim_runs = Vec::new();
            let (mut n_both, mut n_rim) = (0usize, 0usize);
            let d = entry.d;
            for i in -half..=half {
                let ui = i + d[0];
                if ui < -half || ui > half {
                    continue;
                }
                for j in -half..=half {
                    let uj = j + d[1];
                    if uj < -half || uj > half {
                        continue;
                    }
                    for k in -half..=half {
                        let uk = k + d[2];
                        if uk < -half || uk > half {
                            continue;
                        }
                        let vi = grid.flat(i, j, k);
                        let uf = grid.flat(ui, uj, uk);
                        if !in_ball[uf] {
                            continue;
                        }
                        if in_ball[vi] {
                            if entry.positive_half {
                                push_run(&mut both_runs, vi as u32);
                                n_both += 1;
                            }
                        } else {
                            push_run(&mut rim_runs, vi as u32);
                            n_rim += 1;
                        }
                    }
                }
            }
            pair_lists.push(PairList {
                both_runs,
                rim_runs,
                n_both,
                n_rim,
            });
        }

        let mut cube_to_pad = Vec::with_capacity(grid.len());
        for vi in 0..grid.len() {
            let (i, j, k) = grid.coords(vi);
            let p = pad as i32;
            let sp = side_p as i32;
            cube_to_pad
                .push((((i + half + p) * sp + (j + half + p)) * sp + (k + half + p)) as u32);
        }

        let mut op = Self {
            grid: grid.clone(),
            kernel: *kernel,
            quad,
            nu: Vec::new(),
            nu0: T::zero(),
            zpow,
            rel_side,
            ball,
            in_ball,
            z_entries,
            stencils,
            shift_vectors,
            pair_lists,
            cube_to_pad,
            pad,
            side_p,
            eq_correction: vec![T::one(); grid.len()],
            sqrt_mu,
            q_gauss,
        };

        // Collision frequency through the same reduction as the loss term.
        let mut nu = vec![T::zero(); grid.len()];
        op.a_of(&op.grid.mu.clone(), &mut nu);
        op.nu0 = nu.iter().cloned().fold(T::infinity(), T::min);
        op.nu = nu;

        // Normalize the raw gain so the discrete Q(mu, mu) vanishes node-wise.
        let mut raw = vec![T::zero(); grid.len()];
        let mut padbuf = vec![T::zero(); op.padded_len()];
        op.gain_raw_same(&op.grid.mu.clone(), &mut raw, &mut padbuf);
        let mut correction = Vec::with_capacity(grid.len());
        for i in 0..grid.len() {
            if !(raw[i] > T::zero()) {
                return Err(Error::ContractViolation(format!(
                    "raw equilibrium gain vanished at node {i}; enlarge z_cut"
                )));
            }
            correction.push(op.grid.mu[i] * op.nu[i] / raw[i]);
        }
        op.eq_correction = correction;
        Ok(op)
    }

    pub fn nu(&self) -> &[T] {
        &self.nu
    }

    pub fn nu0(&self) -> T {
        self.nu0
    }

    pub fn equilibrium_correction(&self) -> &[T] {
        &self.eq_correction
    }

    pub fn padded_len(&self) -> usize {
        self.side_p * self.side_p * self.side_p
    }

    /// Number of symmetric and ordered pair visits per gain evaluation.
    pub fn pair_counts(&self) -> (usize, usize) {
        let both = self.pair_lists.iter().map(|l| l.n_both).sum();
        let rim = self.pair_lists.iter().map(|l| l.n_rim).sum();
        (both, rim)
    }

    /// Copy a velocity function into the zero-padded cube layout.
    pub fn pad_field(&self, f: &[T], out: &mut [T]) {
        debug_assert_eq!(f.len(), self.grid.len());
        debug_assert_eq!(out.len(), self.padded_len());
        out.iter_mut().for_each(|x| *x = T::zero());
        let side = self.grid.side;
        let sp = self.side_p;
        for i in 0..side {
            for j in 0..side {
                let src = (i * side + j) * side;
                let dst = ((i + self.pad) * sp + (j + self.pad)) * sp + self.pad;
                out[dst..dst + side].copy_from_slice(&f[src..src + side]);
            }
        }
    }

    #[inline]
    fn padded_flat(&self, i: i32, j: i32, k: i32) -> usize {
        let h = self.grid.half;
        let p = self.pad as i32;
        let sp = self.side_p as i32;
        (((i + h + p) * sp + (j + h + p)) * sp + (k + h + p)) as usize
    }

    /// A g (v) = 2 pi b0 dv^3 sum_u |v-u|^kappa g(u), the angular-exact
    /// loss-side integral against an arbitrary velocity function.
    pub fn a_of(&self, g: &[T], out: &mut [T]) {
        let n = self.grid.len();
        debug_assert_eq!(g.len(), n);
        debug_assert_eq!(out.len(), n);
        let factor = T::c(2.0 * std::f64::consts::PI) * self.kernel.b0 * self.grid.quad_weight;
        let side = self.grid.side as i32;
        let rel = self.rel_side;
        let half = self.grid.half;
        let mut terms = vec![T::zero(); n];
        for vi in 0..n {
            let (i, j, k) = self.grid.coords(vi);
            let mut t = 0usize;
            for ui in 0..side {
                for uj in 0..side {
                    let base = rel_index(rel, half, ui - half - i, uj - half - j, -half - k);
                    for uk in 0..side {
                        terms[t] = self.zpow[base + uk as usize] * g[t];
                        t += 1;
                    }
                }
            }
            out[vi] = factor * pairwise_sum(&terms);
        }
    }

    /// Variable collision frequency R(f) = A(mu + sqrt(mu) f) for a
    /// perturbation f at one spatial point.
    pub fn r_of_f(&self, f_pert: &[T]) -> Vec<T> {
        let dist: Vec<T> = self
            .grid
            .mu
            .iter()
            .zip(self.sqrt_mu.iter())
            .zip(f_pert.iter())
            .map(|((&m, &s), &f)| m + s * f)
            .collect();
        let mut out = vec![T::zero(); self.grid.len()];
        self.a_of(&dist, &mut out);
        out
    }

    /// Raw (un-normalized) same-argument gain, pair-symmetric accumulation.
    ///
    /// Offset-major loop: each relative offset streams its 32 stencils once
    /// and serves every output node on its precomputed lists, keeping the
    /// padded field resident in cache.
    fn gain_raw_same(&self, f: &[T], out: &mut [T], padbuf: &mut [T]) {
        self.pad_field(f, padbuf);
        out.iter_mut().for_each(|x| *x = T::zero());
        let side = self.grid.side;
        let sidei = side as i32;

        for (entry, lists) in self.z_entries.iter().zip(self.pair_lists.iter()) {
            if lists.n_both == 0 && lists.n_rim == 0 {
                continue;
            }
            let sten =
                &self.stencils[entry.stencil_start..entry.stencil_start + N_OMEGA_FOLDED];
            // flat cube offset of +d
            let doff = ((entry.d[0] * sidei + entry.d[1]) * sidei + entry.d[2]) as isize;
            for &(start, len) in &lists.both_runs {
                for t in 0..len as usize {
                    let vi = start as usize + t;
                    let vp = self.cube_to_pad[vi] as usize;
                    let s = self.omega_sum_at(padbuf, vp, sten);
                    out[vi] += s;
                    out[(vi as isize + doff) as usize] += s;
                }
            }
            for &(start, len) in &lists.rim_runs {
                for t in 0..len as usize {
                    let vi = start as usize + t;
                    let vp = self.cube_to_pad[vi] as usize;
                    out[vi] += self.omega_sum_at(padbuf, vp, sten);
                }
            }
        }

        // Diagonal z = 0: only a Maxwell (kappa = 0) kernel contributes.
        if self.kernel.kappa == T::zero() {
            let diag =
                self.grid.quad_weight * self.kernel.b0 * T::c(2.0 * std::f64::consts::PI);
            for &vi32 in &self.ball {
                let vi = vi32 as usize;
                out[vi] += diag * f[vi] * f[vi];
            }
        }
    }

    #[inline]
    fn omega_sum_at(&self, pad: &[T], vp: usize, sten: &[OmegaStencil<T>]) -> T {
        let sp = self.side_p;
        let sp2 = sp * sp;
        let mut acc = T::zero();
        for st in sten {
            let pb = (vp as i64 + st.perp_off as i64) as usize;
            let qb = (vp as i64 + st.par_off as i64) as usize;
            let s_perp = stencil_dot(pad, pb, sp, sp2, &st.perp_w);
            let s_par = stencil_dot(pad, qb, sp, sp2, &st.par_w);
            acc += st.w_gain * s_perp * s_par;
        }
        acc
    }

    #[inline]
    fn omega_sum(&self, pad1: &[T], pad2: &[T], vp: usize, start: usize) -> T {
        let sp = self.side_p;
        let sp2 = sp * sp;
        let mut acc = T::zero();
        for st in &self.stencils[start..start + N_OMEGA_FOLDED] {
            let pb = (vp as i64 + st.perp_off as i64) as usize;
            let qb = (vp as i64 + st.par_off as i64) as usize;
            let s_perp = stencil_dot(pad1, pb, sp, sp2, &st.perp_w);
            let s_par = stencil_dot(pad2, qb, sp, sp2, &st.par_w);
            acc += st.w_gain * s_perp * s_par;
        }
        acc
    }

    /// Normalized gain Q_+(F, F) for one spatial cell, written into `out`.
    pub fn gain_field(&self, f: &[T], out: &mut [T]) {
        let mut padbuf = vec![T::zero(); self.padded_len()];
        self.gain_field_with(f, out, &mut padbuf);
    }

    /// Same as [`gain_field`] with a caller-provided pad buffer.
    pub fn gain_field_with(&self, f: &[T], out: &mut [T], padbuf: &mut [T]) {
        self.gain_raw_same(f, out, padbuf);
        for (o, &c) in out.iter_mut().zip(self.eq_correction.iter()) {
            *o = *o * c;
        }
    }

    /// Ordered gain row at one node for possibly distinct arguments.
    fn gain_node_ordered(&self, pad1: &[T], pad2: &[T], f1: &[T], f2: &[T], vi: usize) -> T {
        let half = self.grid.half;
        let (i, j, k) = self.grid.coords(vi);
        let vp = self.padded_flat(i, j, k);
        let mut acc = T::zero();
        for entry in &self.z_entries {
            let (ui, uj, uk) = (i + entry.d[0], j + entry.d[1], k + entry.d[2]);
            if ui < -half || ui > half || uj < -half || uj > half || uk < -half || uk > half {
                continue;
            }
            let uf = self.grid.flat(ui, uj, uk);
            if !self.in_ball[uf] {
                continue;
            }
            acc += self.omega_sum(pad1, pad2, vp, entry.stencil_start);
        }
        if self.kernel.kappa == T::zero() && self.in_ball[vi] {
            let diag =
                self.grid.quad_weight * self.kernel.b0 * T::c(2.0 * std::f64::consts::PI);
            acc += diag * f1[vi] * f2[vi];
        }
        acc * self.eq_correction[vi]
    }

    /// Gain and loss of the bilinear collision operator at one node.
    ///
    /// gain = sum_{u,w} B F1(u') F2(v'), loss = F2(v) * A F1 (v).
    pub fn collide(&self, f1: &[T], f2: &[T], v_idx: usize) -> Result<(T, T)> {
        if f1.iter().any(|x| !x.is_finite()) || f2.iter().any(|x| !x.is_finite()) {
            return Err(Error::DataCorrupt("NaN in collision arguments".into()));
        }
        let mut pad1 = vec![T::zero(); self.padded_len()];
        self.pad_field(f1, &mut pad1);
        let pad2 = if std::ptr::eq(f1, f2) {
            None
        } else {
            let mut p = vec![T::zero(); self.padded_len()];
            self.pad_field(f2, &mut p);
            Some(p)
        };
        let pad2_ref = pad2.as_deref().unwrap_or(&pad1);
        let gain = self.gain_node_ordered(&pad1, pad2_ref, f1, f2, v_idx);
        let loss = f2[v_idx] * self.loss_rate(f1, v_idx);
        Ok((gain, loss))
    }

    /// A F1 at one node through the same reduction as `a_of`.
    fn loss_rate(&self, f1: &[T], vi: usize) -> T {
        let factor = T::c(2.0 * std::f64::consts::PI) * self.kernel.b0 * self.grid.quad_weight;
        let side = self.grid.side as i32;
        let rel = self.rel_side;
        let half = self.grid.half;
        let (i, j, k) = self.grid.coords(vi);
        let mut terms = vec![T::zero(); self.grid.len()];
        let mut t = 0usize;
        for ui in 0..side {
            for uj in 0..side {
                let base = rel_index(rel, half, ui - half - i, uj - half - j, -half - k);
                for uk in 0..side {
                    terms[t] = self.zpow[base + uk as usize] * f1[t];
                    t += 1;
                }
            }
        }
        factor * pairwise_sum(&terms)
    }

    /// Perturbative gain and loss: Gamma_± (f, f).
    ///
    /// Gamma_+ = Q_+(sqrt(mu) f, sqrt(mu) f) / sqrt(mu) and
    /// Gamma_- = f * A(sqrt(mu) f).
    pub fn gamma(&self, f_pert: &[T]) -> (Vec<T>, Vec<T>) {
        let g: Vec<T> = self
            .sqrt_mu
            .iter()
            .zip(f_pert.iter())
            .map(|(&s, &f)| s * f)
            .collect();
        let mut gain = vec![T::zero(); self.grid.len()];
        self.gain_field(&g, &mut gain);
        let gamma_plus: Vec<T> = gain
            .iter()
            .zip(self.sqrt_mu.iter())
            .map(|(&q, &s)| q / s)
            .collect();
        let mut a_g = vec![T::zero(); self.grid.len()];
        self.a_of(&g, &mut a_g);
        let gamma_minus: Vec<T> = f_pert
            .iter()
            .zip(a_g.iter())
            .map(|(&f, &a)| f * a)
            .collect();
        (gamma_plus, gamma_minus)
    }

    /// Weighted Gamma_+ at a single node; cheap path for sampled checks.
    pub fn gamma_plus_node(&self, g_pad: &[T], g: &[T], v_idx: usize) -> T {
        self.gain_node_ordered(g_pad, g_pad, g, g, v_idx) / self.sqrt_mu[v_idx]
    }

    /// Apply the symmetrized linearized scattering operator K.
    ///
    /// K = K_gain - K_loss with
    ///   K_loss f (v) = int B sqrt(mu(v) mu(u)) f(u),
    ///   K_gain f (v) = int B [ sqrt(mu(u) mu(u')) f(v') + sqrt(mu(u) mu(v')) f(u') ],
    /// so that (nu - K) annihilates the collision invariants. The gain part
    /// is symmetrized as (K2 + K2^T)/2, restoring the symmetry of the exact
    /// kernel that trilinear interpolation would otherwise break.
    ///
    /// The relative-velocity range is quad.k_z_cut, independent of the gain
    /// pair cut; geometry is generated on the fly per offset.
    pub fn k_apply(&self, f: &[T]) -> Vec<T> {
        use rayon::prelude::*;
        let n = self.grid.len();
        let geom = self.k_geometry();
        let mut fpad = vec![T::zero(); geom.padded_len()];
        geom.pad_into(self.grid.side, f, &mut fpad);

        let n_chunks = 16usize.min(geom.z_list.len().max(1));
        let partials: Vec<(Vec<T>, Vec<T>)> = (0..n_chunks)
            .into_par_iter()
            .map(|ci| {
                let mut fw = vec![T::zero(); n];
                let mut sc = vec![T::zero(); geom.padded_len()];
                let mut zi = ci;
                while zi < geom.z_list.len() {
                    self.k_process_offset(&geom, geom.z_list[zi], &fpad, f, &mut fw, &mut sc);
                    zi += n_chunks;
                }
                (fw, sc)
            })
            .collect();

        let mut forward = vec![T::zero(); n];
        let mut scatter = vec![T::zero(); geom.padded_len()];
        for (fw, sc) in &partials {
            for (a, &b) in forward.iter_mut().zip(fw) {
                *a += b;
            }
            for (a, &b) in scatter.iter_mut().zip(sc) {
                *a += b;
            }
        }
        let mut adjoint = vec![T::zero(); n];
        geom.fold_into(self.grid.side, &scatter, &mut adjoint);

        let mut out = vec![T::zero(); n];
        let mut kl = vec![T::zero(); n];
        self.k_loss(f, &mut kl);
        let half = T::c(0.5);
        for v in 0..n {
            out[v] = half * (forward[v] + adjoint[v]) - kl[v];
        }
        out
    }

    /// K_loss f (v) = 2 pi b0 dv^3 sqrt(mu(v)) sum_u |v-u|^kappa sqrt(mu(u)) f(u).
    fn k_loss(&self, f: &[T], out: &mut [T]) {
        let weighted: Vec<T> = self
            .sqrt_mu
            .iter()
            .zip(f.iter())
            .map(|(&s, &x)| s * x)
            .collect();
        self.a_of(&weighted, out);
        for (o, &s) in out.iter_mut().zip(self.sqrt_mu.iter()) {
            *o = *o * s;
        }
    }

    fn k_geometry(&self) -> KGeometry {
        let dv = self.grid.spacing.as_f64();
        let units = self.quad.k_z_cut.as_f64() / dv;
        let cap = 2 * self.grid.half;
        let sq_max = ((units * units) * (1.0 + 1e-9)).floor() as i64;
        let sq_max = sq_max.min(3 * (cap as i64) * (cap as i64));
        let zr = ((sq_max as f64).sqrt().floor() as i32).min(cap);
        let mut z_list = Vec::new();
        for di in -zr..=zr {
            for dj in -zr..=zr {
                for dk in -zr..=zr {
                    if di == 0 && dj == 0 && dk == 0 {
                        continue;
                    }
                    if (di * di + dj * dj + dk * dk) as i64 > sq_max {
                        continue;
                    }
                    z_list.push([di, dj, dk]);
                }
            }
        }
        let pad = zr as usize + 2;
        KGeometry {
            pad,
            side_p: self.grid.side + 2 * pad,
            z_list,
        }
    }

    /// Process one relative offset of the K quadrature: gather into `fw`
    /// (forward action) and scatter into `sc` (transpose action).
    fn k_process_offset(
        &self,
        geom: &KGeometry,
        d: [i32; 3],
        fpad: &[T],
        f: &[T],
        fw: &mut [T],
        sc: &mut [T],
    ) {
        let half = self.grid.half;
        let side = self.grid.side;
        let dv = self.grid.spacing;
        let sp = geom.side_p;
        let sp2 = sp * sp;
        let corners = [0usize, 1, sp, sp + 1, sp2, sp2 + 1, sp2 + sp, sp2 + sp + 1];
        let norm3 = T::c(crate::velocity::MAXWELLIAN_NORM);
        let z = [
            dv * T::c(d[0] as f64),
            dv * T::c(d[1] as f64),
            dv * T::c(d[2] as f64),
        ];
        let z_norm = norm(z);
        let w_base = self.grid.quad_weight
            * self.kernel.b0
            * z_norm.powf(self.kernel.kappa)
            * T::c(std::f64::consts::PI / 4.0);

        // clipped index box where both v and u = v + d are lattice nodes
        let lo = [
            (-half).max(-half - d[0]),
            (-half).max(-half - d[1]),
            (-half).max(-half - d[2]),
        ];
        let hi = [
            half.min(half - d[0]),
            half.min(half - d[1]),
            half.min(half - d[2]),
        ];
        if lo[0] > hi[0] || lo[1] > hi[1] || lo[2] > hi[2] {
            return;
        }

        let quarter = T::c(0.25);
        let half_t = T::c(0.5);
        let mut axis_par = vec![T::zero(); 3 * side];
        let mut axis_perp = vec![T::zero(); 3 * side];

        for (omega, c) in omega_nodes(z) {
            let zc = z_norm * c;
            let a_par = [zc * omega[0], zc * omega[1], zc * omega[2]];
            let a_perp = [z[0] - a_par[0], z[1] - a_par[1], z[2] - a_par[2]];
            let (par_off, par_w) = trilinear_stencil(dv, sp, a_par);
            let (perp_off, perp_w) = trilinear_stencil(dv, sp, a_perp);
            let base_par = (-norm_sq(a_par) * quarter).exp();
            let base_perp = (-norm_sq(a_perp) * quarter).exp();
            let w = w_base * c.abs();
            for ax in 0..3 {
                for i in 0..side {
                    let x = dv * T::c((i as i32 - half) as f64);
                    axis_par[ax * side + i] = (-x * a_par[ax] * half_t).exp();
                    axis_perp[ax * side + i] = (-x * a_perp[ax] * half_t).exp();
                }
            }
            for i in lo[0]..=hi[0] {
                let pxi = (i + half) as usize;
                let exi_par = axis_par[pxi];
                let exi_perp = axis_perp[pxi];
                for j in lo[1]..=hi[1] {
                    let pyj = side + (j + half) as usize;
                    let exj_par = exi_par * axis_par[pyj];
                    let exj_perp = exi_perp * axis_perp[pyj];
                    let row_v = self.grid.flat(i, j, lo[2]);
                    let row_u = self.grid.flat(i + d[0], j + d[1], lo[2] + d[2]);
                    let row_p = geom.padded_flat(side, half, i, j, lo[2]);
                    for (t, k) in (lo[2]..=hi[2]).enumerate() {
                        let vi = row_v + t;
                        let uf = row_u + t;
                        let pzk = 2 * side + (k + half) as usize;
                        let coeff = w * norm3 * self.q_gauss[vi] * self.q_gauss[uf];
                        let e_par = base_par * exj_par * axis_par[pzk];
                        let e_perp = base_perp * exj_perp * axis_perp[pzk];
                        let vp = row_p + t;
                        let pb = (vp as i64 + par_off as i64) as usize;
                        let qb = (vp as i64 + perp_off as i64) as usize;
                        let f_par = stencil_dot(fpad, pb, sp, sp2, &par_w);
                        let f_perp = stencil_dot(fpad, qb, sp, sp2, &perp_w);
                        fw[vi] += coeff * (e_perp * f_par + e_par * f_perp);
                        let s1 = coeff * e_perp * f[vi];
                        let s2 = coeff * e_par * f[vi];
                        for (cix, &coff) in corners.iter().enumerate() {
                            sc[pb + coff] += s1 * par_w[cix];
                            sc[qb + coff] += s2 * perp_w[cix];
                        }
                    }
                }
            }
        }
    }

    /// Row of the raw discrete kernel: out[eta] = k(v, eta) * dv^3, so that
    /// K f (v) = sum_eta out[eta] f(eta). Symmetrize by averaging with the
    /// transposed row when comparing against the pointwise envelope.
    pub fn k_row(&self, v_idx: usize) -> Vec<T> {
        let n = self.grid.len();
        let geom = self.k_geometry();
        let half = self.grid.half;
        let side = self.grid.side;
        let dv = self.grid.spacing;
        let sp = geom.side_p;
        let sp2 = sp * sp;
        let corners = [0usize, 1, sp, sp + 1, sp2, sp2 + 1, sp2 + sp, sp2 + sp + 1];
        let norm3 = T::c(crate::velocity::MAXWELLIAN_NORM);
        let (i, j, k) = self.grid.coords(v_idx);
        let v = self.grid.nodes[v_idx];
        let vp = geom.padded_flat(side, half, i, j, k);
        let qv = self.q_gauss[v_idx];
        let mut scatter = vec![T::zero(); geom.padded_len()];
        for &d in &geom.z_list {
            let (ui, uj, uk) = (i + d[0], j + d[1], k + d[2]);
            if ui < -half || ui > half || uj < -half || uj > half || uk < -half || uk > half {
                continue;
            }
            let uf = self.grid.flat(ui, uj, uk);
            let qu = self.q_gauss[uf];
            let z = [
                dv * T::c(d[0] as f64),
                dv * T::c(d[1] as f64),
                dv * T::c(d[2] as f64),
            ];
            let z_norm = norm(z);
            let w_base = self.grid.quad_weight
                * self.kernel.b0
                * z_norm.powf(self.kernel.kappa)
                * T::c(std::f64::consts::PI / 4.0);
            for (omega, c) in omega_nodes(z) {
                let zc = z_norm * c;
                let a_par = [zc * omega[0], zc * omega[1], zc * omega[2]];
                let a_perp = [z[0] - a_par[0], z[1] - a_par[1], z[2] - a_par[2]];
                let (par_off, par_w) = trilinear_stencil(dv, sp, a_par);
                let (perp_off, perp_w) = trilinear_stencil(dv, sp, a_perp);
                let e_perp =
                    (-(dot(v, a_perp) + norm_sq(a_perp) * T::c(0.5)) * T::c(0.5)).exp();
                let e_par = (-(dot(v, a_par) + norm_sq(a_par) * T::c(0.5)) * T::c(0.5)).exp();
                let w = w_base * c.abs() * norm3 * qu * qv;
                let pb = (vp as i64 + par_off as i64) as usize;
                let qb = (vp as i64 + perp_off as i64) as usize;
                for (cix, &coff) in corners.iter().enumerate() {
                    scatter[pb + coff] += w * e_perp * par_w[cix];
                    scatter[qb + coff] += w * e_par * perp_w[cix];
                }
            }
        }
        let mut out = vec![T::zero(); n];
        geom.fold_into(side, &scatter, &mut out);
        // subtract the loss-type part, pointwise in eta
        let factor = T::c(2.0 * std::f64::consts::PI) * self.kernel.b0 * self.grid.quad_weight;
        let sv = self.sqrt_mu[v_idx];
        for (eta, o) in out.iter_mut().enumerate() {
            let (ei, ej, ek) = self.grid.coords(eta);
            let rel = rel_index(self.rel_side, half, ei - i, ej - j, ek - k);
            *o = *o - factor * self.zpow[rel] * sv * self.sqrt_mu[eta];
        }
        out
    }
}

/// Padded-cube geometry for the K quadrature, wider than the gain padding.
struct KGeometry {
    pad: usize,
    side_p: usize,
    z_list: Vec<[i32; 3]>,
}

impl KGeometry {
    fn padded_len(&self) -> usize {
        self.side_p * self.side_p * self.side_p
    }

    #[inline]
    fn padded_flat(&self, _side: usize, half: i32, i: i32, j: i32, k: i32) -> usize {
        let p = self.pad as i32;
        let sp = self.side_p as i32;
        (((i + half + p) * sp + (j + half + p)) * sp + (k + half + p)) as usize
    }

    fn pad_into<T: Real>(&self, side: usize, f: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|x| *x = T::zero());
        let sp = self.side_p;
        for i in 0..side {
            for j in 0..side {
                let src = (i * side + j) * side;
                let dst = ((i + self.pad) * sp + (j + self.pad)) * sp + self.pad;
                out[dst..dst + side].copy_from_slice(&f[src..src + side]);
            }
        }
    }

    fn fold_into<T: Real>(&self, side: usize, scatter: &[T], out: &mut [T]) {
        let sp = self.side_p;
        for i in 0..side {
            for j in 0..side {
                let dst = (i * side + j) * side;
                let src = ((i + self.pad) * sp + (j + self.pad)) * sp + self.pad;
                out[dst..dst + side].copy_from_slice(&scatter[src..src + side]);
            }
        }
    }
}

/// Distinct sphere-quadrature configurations for a relative velocity z, as
/// (omega, polar cosine) pairs in a deterministic frame aligned with z.
///
/// The full 32-point set is antipodally symmetric and the reflection map
/// depends on omega only through the line it spans, so nodes omega and
/// -omega produce identical shifts; the 16 nodes with positive polar cosine
/// are returned and carry twice the single-node weight.
fn omega_nodes<T: Real>(z: [T; 3]) -> impl Iterator<Item = ([T; 3], T)> {
    let z_norm = norm(z);
    let z_hat = [z[0] / z_norm, z[1] / z_norm, z[2] / z_norm];
    let (e1, e2) = tangent_frame(z_hat);
    let pi = std::f64::consts::PI;
    POLAR_HALF_NODES
        .iter()
        .flat_map(move |&c_abs| {
            (0..8).map(move |j| {
                let c = T::c(c_abs);
                let sin = (T::one() - c * c).max(T::zero()).sqrt();
                let phi = T::c(2.0 * pi * j as f64 / 8.0);
                let omega = [
                    sin * (phi.cos() * e1[0] + phi.sin() * e2[0]) + c * z_hat[0],
                    sin * (phi.cos() * e1[1] + phi.sin() * e2[1]) + c * z_hat[1],
                    sin * (phi.cos() * e1[2] + phi.sin() * e2[2]) + c * z_hat[2],
                ];
                (omega, c)
            })
        })
        .collect::<Vec<_>>()
        .into_iter()
}

#[inline(always)]
fn stencil_dot<T: Real>(pad: &[T], base: usize, sp: usize, sp2: usize, w: &[T; 8]) -> T {
    debug_assert!(base + sp2 + sp + 1 < pad.len());
    // Offsets are in range by construction: the padding margin covers every
    // stencil shift of every in-cube node.
    unsafe {
        *pad.get_unchecked(base) * w[0]
            + *pad.get_unchecked(base + 1) * w[1]
            + *pad.get_unchecked(base + sp) * w[2]
            + *pad.get_unchecked(base + sp + 1) * w[3]
            + *pad.get_unchecked(base + sp2) * w[4]
            + *pad.get_unchecked(base + sp2 + 1) * w[5]
            + *pad.get_unchecked(base + sp2 + sp) * w[6]
            + *pad.get_unchecked(base + sp2 + sp + 1) * w[7]
    }
}

#[inline]
fn rel_index(rel_side: usize, half: i32, di: i32, dj: i32, dk: i32) -> usize {
    let off = 2 * half;
    (((di + off) as usize * rel_side) + (dj + off) as usize) * rel_side + (dk + off) as usize
}

/// Trilinear stencil of a fixed physical shift: flat padded base offset plus
/// the 8 corner weights, corners ordered (0,0,0),(0,0,1),(0,1,0),(0,1,1),
/// (1,0,0),(1,0,1),(1,1,0),(1,1,1).
fn trilinear_stencil<T: Real>(dv: T, side_p: usize, a: [T; 3]) -> (i32, [T; 8]) {
    let mut base = [0i32; 3];
    let mut frac = [T::zero(); 3];
    for c in 0..3 {
        let delta = a[c] / dv;
        let fl = delta.floor();
        base[c] = fl.as_f64() as i32;
        frac[c] = delta - fl;
    }
    let (fx, fy, fz) = (frac[0], frac[1], frac[2]);
    let one = T::one();
    let w = [
        (one - fx) * (one - fy) * (one - fz),
        (one - fx) * (one - fy) * fz,
        (one - fx) * fy * (one - fz),
        (one - fx) * fy * fz,
        fx * (one - fy) * (one - fz),
        fx * (one - fy) * fz,
        fx * fy * (one - fz),
        fx * fy * fz,
    ];
    let sp = side_p as i32;
    let off = (base[0] * sp + base[1]) * sp + base[2];
    (off, w)
}

/// Post-collision pair of (v, u) for a unit vector omega.
pub fn post_collision<T: Real>(v: [T; 3], u: [T; 3], omega: [T; 3]) -> ([T; 3], [T; 3]) {
    let g = crate::scalar::sub(v, u);
    let h = dot(g, omega);
    (add_scaled(v, -h, omega), add_scaled(u, h, omega))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::velocity::{nu_of_v, VelocityGrid};

    fn small_grid() -> VelocityGrid<f64> {
        VelocityGrid::new(3.0, 0.75).unwrap()
    }

    fn engine(kappa: f64) -> CollisionOperator<f64> {
        let grid = small_grid();
        let kernel = KernelSpec::new(kappa, 1.0).unwrap();
        CollisionOperator::new(&grid, &kernel).unwrap()
    }

    #[test]
    fn post_collision_conserves_momentum_and_energy() {
        let v: [f64; 3] = [0.3, -1.2, 0.7];
        let u: [f64; 3] = [-0.5, 0.4, 2.0];
        let omega = {
            let raw = [0.48, -0.6, 0.64];
            let n = norm(raw);
            [raw[0] / n, raw[1] / n, raw[2] / n]
        };
        let (vp, up) = post_collision(v, u, omega);
        for c in 0..3 {
            assert!((vp[c] + up[c] - v[c] - u[c]).abs() < 1e-14);
        }
        let e0 = norm_sq(v) + norm_sq(u);
        let e1 = norm_sq(vp) + norm_sq(up);
        assert!((e1 - e0).abs() < 1e-13);
    }

    #[test]
    fn stencil_shifts_conserve_energy() {
        // a_par . a_perp = 0 by construction, which is the energy identity
        // |v'|^2 + |u'|^2 = |v|^2 + |u|^2 for the reflection map.
        let op = engine(1.0);
        for entry in op.z_entries.iter().step_by(17) {
            for idx in entry.stencil_start..entry.stencil_start + N_OMEGA_FOLDED {
                let (a_par, a_perp) = op.shift_vectors[idx];
                assert!(dot(a_par, a_perp).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn nu_matches_standalone_sum() {
        let op = engine(1.0);
        let grid = small_grid();
        let kernel = KernelSpec::new(1.0, 1.0).unwrap();
        for idx in [0usize, 100, 364, 500] {
            let direct = nu_of_v(&grid, &kernel, grid.nodes[idx]).unwrap();
            assert!((op.nu()[idx] - direct).abs() / direct < 1e-13);
        }
    }

    #[test]
    fn nu_constant_for_maxwell_kernel() {
        let op = engine(0.0);
        let expected = 2.0 * std::f64::consts::PI * op.grid.mu_mass;
        for &nu in op.nu() {
            assert!((nu - expected).abs() < 1e-12, "nu {nu} vs {expected}");
        }
    }

    #[test]
    fn nu_zero_value_for_hard_kernel() {
        // nu(0) = 2 pi E|u| with E|u| = sqrt(8/pi) in the continuum.
        let grid = VelocityGrid::<f64>::new(6.0, 0.75).unwrap();
        let kernel = KernelSpec::new(1.0, 1.0).unwrap();
        let nu0 = nu_of_v(&grid, &kernel, [0.0; 3]).unwrap();
        let continuum = 2.0 * std::f64::consts::PI * (8.0 / std::f64::consts::PI).sqrt();
        // the |u| kink at the origin gives an O(dv^2) lattice defect
        let defect = (nu0 - continuum).abs();
        assert!(defect < 0.06, "nu(0) = {nu0} vs {continuum}");
        let fine = VelocityGrid::<f64>::new(6.0, 0.375).unwrap();
        let nu0_fine = nu_of_v(&fine, &kernel, [0.0; 3]).unwrap();
        assert!((nu0_fine - continuum).abs() < 0.3 * defect);
        // growth with |v|
        let nu3 = nu_of_v(&grid, &kernel, [3.0, 0.0, 0.0]).unwrap();
        assert!(nu3 > nu0);
    }

    #[test]
    fn equilibrium_gain_equals_loss_exactly() {
        let op = engine(1.0);
        let mu = op.grid.mu.clone();
        let mut gain = vec![0.0; op.grid.len()];
        op.gain_field(&mu, &mut gain);
        for v in 0..op.grid.len() {
            let loss = mu[v] * op.nu()[v];
            assert!(
                (gain[v] - loss).abs() <= 1e-13 * loss.max(1e-300),
                "node {v}: gain {} loss {}",
                gain[v],
                loss
            );
        }
    }

    #[test]
    fn collide_node_matches_field_path_at_equilibrium() {
        let op = engine(1.0);
        let mu = op.grid.mu.clone();
        for idx in [0usize, 50, 364, 700] {
            let (gain, loss) = op.collide(&mu, &mu, idx).unwrap();
            assert!((gain - loss).abs() <= 1e-12 * loss.max(1e-300));
            assert!((loss - mu[idx] * op.nu()[idx]).abs() <= 1e-15 * loss.max(1e-300));
        }
    }

    #[test]
    fn maxwell_kernel_loss_is_mass_times_b0_2pi() {
        let op = engine(0.0);
        let mut rng = crate::rng::CounterRng::new(momentum_seed());
        let f1: Vec<f64> = (0..op.grid.len()).map(|_| rng.uniform::<f64>()).collect();
        let f2: Vec<f64> = (0..op.grid.len()).map(|_| rng.uniform::<f64>()).collect();
        let mass: f64 = f1.iter().sum::<f64>() * op.grid.quad_weight;
        let idx = 123;
        let (_, loss) = op.collide(&f1, &f2, idx).unwrap();
        let expected = f2[idx] * 2.0 * std::f64::consts::PI * mass;
        assert!((loss - expected).abs() < 1e-10 * expected.abs().max(1.0));
    }

    fn momentum_seed() -> u64 {
        40
    }

    #[test]
    fn gain_nonnegative_for_nonnegative_inputs() {
        let op = engine(1.0);
        let mut rng = crate::rng::CounterRng::new(17);
        let f: Vec<f64> = (0..op.grid.len()).map(|_| rng.uniform::<f64>()).collect();
        let mut gain = vec![0.0; op.grid.len()];
        op.gain_field(&f, &mut gain);
        for (v, &g) in gain.iter().enumerate() {
            assert!(g >= 0.0, "negative gain {g} at node {v}");
        }
    }

    #[test]
    fn gain_even_for_even_inputs() {
        let op = engine(1.0);
        let g = &op.grid;
        // even random field: assign by |coords| class
        let mut rng = crate::rng::CounterRng::new(23);
        let mut f = vec![0.0; g.len()];
        for idx in 0..g.len() {
            let (i, j, k) = g.coords(idx);
            if (i, j, k) <= (-i, -j, -k) {
                f[idx] = rng.uniform::<f64>();
            }
        }
        for idx in 0..g.len() {
            let (i, j, k) = g.coords(idx);
            let neg = g.flat(-i, -j, -k);
            if f[idx] == 0.0 {
                f[idx] = f[neg];
            }
        }
        let mut gain = vec![0.0; g.len()];
        op.gain_field(&f, &mut gain);
        for idx in 0..g.len() {
            let (i, j, k) = g.coords(idx);
            let neg = g.flat(-i, -j, -k);
            let scale = gain[idx].abs().max(1e-30);
            assert!(
                (gain[idx] - gain[neg]).abs() <= 1e-11 * scale,
                "gain not even at {:?}",
                (i, j, k)
            );
        }
    }

    #[test]
    fn gamma_of_zero_vanishes_and_sqrt_mu_is_eigen() {
        let op = engine(1.0);
        let zero = vec![0.0; op.grid.len()];
        let (gp, gm) = op.gamma(&zero);
        assert!(gp.iter().all(|&x| x == 0.0));
        assert!(gm.iter().all(|&x| x == 0.0));

        // f = sqrt(mu): Gamma_+ = sqrt(mu) nu exactly after normalization.
        let f: Vec<f64> = op.grid.mu.iter().map(|m| m.sqrt()).collect();
        let (gp, gm) = op.gamma(&f);
        for v in 0..op.grid.len() {
            let expected = f[v] * op.nu()[v];
            assert!(
                (gp[v] - expected).abs() <= 1e-12 * expected.max(1e-300),
                "node {v}"
            );
            assert!((gm[v] - expected).abs() <= 1e-12 * expected.max(1e-300));
        }
    }

    #[test]
    fn gamma_minus_is_f_times_a_of_weighted_f() {
        let op = engine(1.0);
        let mut rng = crate::rng::CounterRng::new(31);
        let f: Vec<f64> = (0..op.grid.len())
            .map(|_| rng.uniform::<f64>() - 0.5)
            .collect();
        let (_, gm) = op.gamma(&f);
        let g: Vec<f64> = op
            .grid
            .mu
            .iter()
            .zip(f.iter())
            .map(|(m, x)| m.sqrt() * x)
            .collect();
        let mut a = vec![0.0; op.grid.len()];
        op.a_of(&g, &mut a);
        for v in (0..op.grid.len()).step_by(37) {
            assert!((gm[v] - f[v] * a[v]).abs() < 1e-14 * (1.0 + a[v].abs()));
        }
    }

    #[test]
    fn r_of_f_reference_cases() {
        let op = engine(1.0);
        let zero = vec![0.0; op.grid.len()];
        let r = op.r_of_f(&zero);
        for v in 0..op.grid.len() {
            assert!((r[v] - op.nu()[v]).abs() < 1e-14 * op.nu()[v]);
        }
        // F = 2 mu, i.e. f = sqrt(mu)
        let f: Vec<f64> = op.grid.mu.iter().map(|m| m.sqrt()).collect();
        let r2 = op.r_of_f(&f);
        for v in 0..op.grid.len() {
            assert!((r2[v] - 2.0 * op.nu()[v]).abs() < 1e-13 * op.nu()[v]);
        }
        // nonnegative for a random nonnegative distribution
        let mut rng = crate::rng::CounterRng::new(77);
        let f_rand: Vec<f64> = op
            .grid
            .mu
            .iter()
            .map(|&m| {
                let u: f64 = rng.uniform();
                (2.0 * u * m).max(0.0) / m.sqrt() - m.sqrt()
            })
            .collect();
        let r3 = op.r_of_f(&f_rand);
        assert!(r3.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn k_of_zero_is_zero_and_k_sqrt_mu_close_to_nu_sqrt_mu() {
        let op = engine(1.0);
        let zero = vec![0.0; op.grid.len()];
        let kz = op.k_apply(&zero);
        assert!(kz.iter().all(|&x| x == 0.0));

        let f: Vec<f64> = op.grid.mu.iter().map(|m| m.sqrt()).collect();
        let kf = op.k_apply(&f);
        // Relative L2 defect of K sqrt(mu) = nu sqrt(mu). On this small cube
        // the domain truncation alone contributes ~10%; the interpolation
        // part decays like dv^2 (see the nullspace refinement test).
        let mut num = 0.0;
        let mut den = 0.0;
        for v in 0..op.grid.len() {
            let expected = op.nu()[v] * f[v];
            num += (kf[v] - expected).powi(2);
            den += expected.powi(2);
        }
        let defect = (num / den).sqrt();
        assert!(defect < 0.25, "K sqrt(mu) defect {defect}");
    }

    #[test]
    fn k_is_symmetric() {
        let op = engine(1.0);
        let n = op.grid.len();
        let mut rng = crate::rng::CounterRng::new(53);
        let mut sup = 0.0_f64;
        for _ in 0..4 {
            let f: Vec<f64> = (0..n).map(|_| rng.uniform::<f64>() - 0.5).collect();
            let g: Vec<f64> = (0..n).map(|_| rng.uniform::<f64>() - 0.5).collect();
            let kf = op.k_apply(&f);
            let kg = op.k_apply(&g);
            let kf_g: f64 = kf.iter().zip(&g).map(|(a, b)| a * b).sum();
            let f_kg: f64 = f.iter().zip(&kg).map(|(a, b)| a * b).sum();
            let nf = f.iter().map(|x| x * x).sum::<f64>().sqrt();
            let ng = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            sup = sup.max((kf_g - f_kg).abs() / (nf * ng));
        }
        assert!(sup < 1e-12, "symmetry defect {sup}");
    }

    #[test]
    fn kernel_envelope_values() {
        // |v - eta| = 1 on the equal-energy shell
        let v = [1.0, 0.5, 0.0];
        let eta = [0.5, 1.0, 0.0];
        let e = kernel_envelope(v, eta).unwrap();
        let s = norm(crate::scalar::sub(v, eta));
        assert!((s - 2.0_f64.sqrt() / 2.0).abs() < 1e-14);
        let expected = (s + 1.0 / s) * (-s * s / 8.0_f64).exp();
        assert!((e - expected).abs() < 1e-14);

        let v1 = [1.0, 0.0, 0.0];
        let e1 = kernel_envelope(v1, [0.0, 1.0, 0.0]).unwrap();
        let s1 = 2.0_f64.sqrt();
        assert!((e1 - (s1 + 1.0 / s1) * (-0.25_f64).exp()).abs() < 1e-14);

        // symmetric under swap, singular at v = eta, decays along equal norms
        let a = [0.3, -0.4, 1.1];
        let b = [-0.9, 0.2, 0.5];
        assert_eq!(kernel_envelope(a, b).unwrap(), kernel_envelope(b, a).unwrap());
        assert!(kernel_envelope(a, a).is_err());
        let far = kernel_envelope([5.0, 0.0, 0.0], [-5.0, 0.0, 0.0]).unwrap();
        assert!(far < 4e-5);
    }

    #[test]
    fn envelope_unit_separation_value() {
        // equal norms, separation 1: (1 + 1) e^{-1/8}
        let v = [0.5, 0.5, 0.0];
        let eta = [0.5, -0.5, 0.0];
        let e = kernel_envelope(v, eta).unwrap();
        assert!((e - 2.0 * (-0.125_f64).exp()).abs() < 1e-14);
        assert!((e - 1.764993805169191).abs() < 1e-12);
    }

    #[test]
    fn gain_field_bitwise_deterministic() {
        let op = engine(1.0);
        let mut rng = crate::rng::CounterRng::new(99);
        let f: Vec<f64> = (0..op.grid.len()).map(|_| rng.uniform::<f64>()).collect();
        let mut a = vec![0.0; op.grid.len()];
        let mut b = vec![0.0; op.grid.len()];
        op.gain_field(&f, &mut a);
        op.gain_field(&f, &mut b);
        assert_eq!(a, b);
    }

    #[test]
    fn collision_mass_defect_measured_on_random_field() {
        // The quadrature does not conserve mass exactly away from
        // equilibrium; the defect is measured here and the solver removes
        // it by projection.
        let op = engine(1.0);
        let g = &op.grid;
        let mut rng = crate::rng::CounterRng::new(61);
        let f: Vec<f64> = g
            .mu
            .iter()
            .map(|&m| m * (0.5 + rng.uniform::<f64>()))
            .collect();
        let mut gain = vec![0.0; g.len()];
        op.gain_field(&f, &mut gain);
        let mut a = vec![0.0; g.len()];
        op.a_of(&f, &mut a);
        let defect: f64 = gain
            .iter()
            .zip(f.iter().zip(a.iter()))
            .map(|(&gn, (&fv, &av))| (gn - fv * av) * g.quad_weight)
            .sum();
        let scale: f64 = f
            .iter()
            .zip(a.iter())
            .map(|(&fv, &av)| fv * av * g.quad_weight)
            .sum();
        let rel = (defect / scale).abs();
        assert!(rel < 2e-2, "relative collision mass defect {rel:.3e}");
    }

    #[test]
    fn collide_rejects_nan() {
        let op = engine(1.0);
        let mut f = op.grid.mu.clone();
        f[3] = f64::NAN;
        assert!(matches!(
            op.collide(&f, &op.grid.mu.clone(), 0),
            Err(Error::DataCorrupt(_))
        ));
    }

    #[test]
    fn engine_works_in_f32() {
        let grid = VelocityGrid::<f32>::new(3.0, 1.0).unwrap();
        let kernel = KernelSpec::new(1.0_f32, 1.0).unwrap();
        let op = CollisionOperator::new(&grid, &kernel).unwrap();
        let mut gain = vec![0.0_f32; grid.len()];
        op.gain_field(&grid.mu.clone(), &mut gain);
        for v in 0..grid.len() {
            let loss = grid.mu[v] * op.nu()[v];
            assert!((gain[v] - loss).abs() <= 1e-5 * loss.max(1e-30));
        }
    }
}
