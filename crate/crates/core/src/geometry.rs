//! Level-set domains, backward exit times and the diffuse-reflection
//! back-time cycle machinery.

use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::scalar::{add_scaled, dot, norm, norm_sq, tangent_frame, Real};
use rayon::prelude::*;

/// sqrt(2*pi), the wall-measure normalization constant.
pub const C_MU: f64 = 2.506_628_274_631_000_5;

/// Relative grazing cut: boundary starts with |v.n| < GRAZING_CUT * |v| are rejected.
pub const GRAZING_CUT: f64 = 1e-8;

/// Supported domain shapes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape<T> {
    /// {x : |x| < 1}.
    UnitBall,
    /// {x : |x1| < half_width}, unbounded in the tangential directions.
    Slab { half_width: T },
}

/// Bounded convex domain described by a level set xi(x) < 0.
#[derive(Clone, Copy, Debug)]
pub struct Domain<T> {
    pub shape: Shape<T>,
    /// Lower bound on the level-set Hessian; 0 marks a non-strictly-convex shape.
    pub convexity_constant: T,
}

impl<T: Real> Domain<T> {
    pub fn unit_ball() -> Self {
        Self {
            shape: Shape::UnitBall,
            convexity_constant: T::c(2.0),
        }
    }

    pub fn slab(half_width: T) -> Self {
        Self {
            shape: Shape::Slab { half_width },
            convexity_constant: T::zero(),
        }
    }

    /// Level set: negative inside, zero on the boundary, positive outside.
    pub fn level_set(&self, x: [T; 3]) -> T {
        match self.shape {
            Shape::UnitBall => norm_sq(x) - T::one(),
            Shape::Slab { half_width } => x[0] * x[0] - half_width * half_width,
        }
    }

    /// Scale-free boundary tolerance |xi(x)| <= 1e-10 (1 + |x|^2).
    fn boundary_tol(&self, x: [T; 3]) -> T {
        T::c(1e-10) * (T::one() + norm_sq(x))
    }

    pub fn is_interior(&self, x: [T; 3]) -> bool {
        self.level_set(x) < -self.boundary_tol(x)
    }

    pub fn on_boundary(&self, x: [T; 3]) -> bool {
        self.level_set(x).abs() <= self.boundary_tol(x)
    }

    pub fn in_closure(&self, x: [T; 3]) -> bool {
        self.level_set(x) <= self.boundary_tol(x)
    }

    /// Outward unit normal at a boundary point.
    pub fn normal(&self, x: [T; 3]) -> Result<[T; 3]> {
        if !self.on_boundary(x) {
            return Err(Error::DomainViolation(format!(
                "normal requested away from the boundary, xi = {:e}",
                self.level_set(x)
            )));
        }
        Ok(match self.shape {
            Shape::UnitBall => {
                let inv = T::one() / norm(x);
                [x[0] * inv, x[1] * inv, x[2] * inv]
            }
            Shape::Slab { .. } => {
                if x[0] > T::zero() {
                    [T::one(), T::zero(), T::zero()]
                } else {
                    [-T::one(), T::zero(), T::zero()]
                }
            }
        })
    }

    /// Domain diameter, used by trajectory sanity bounds.
    pub fn diameter(&self) -> T {
        match self.shape {
            Shape::UnitBall => T::c(2.0),
            Shape::Slab { half_width } => (T::one() + T::one()) * half_width,
        }
    }
}

/// Backward exit time and exit point: the first boundary hit of x - tau*v.
///
/// Closed-form solves: a quadratic for the ball, a linear equation for the
/// slab (in the slab a ray with v1 = 0 never exits and is rejected).
pub fn backward_exit<T: Real>(
    domain: &Domain<T>,
    x: [T; 3],
    v: [T; 3],
) -> Result<(T, [T; 3])> {
    let speed_sq = norm_sq(v);
    if !(speed_sq > T::zero()) {
        return Err(Error::InvalidInput("backward exit of a zero velocity".into()));
    }
    if !self_in_closure(domain, x) {
        return Err(Error::DomainViolation(format!(
            "start point outside the closed domain, xi = {:e}",
            domain.level_set(x)
        )));
    }
    let t_b = match domain.shape {
        Shape::UnitBall => {
            // |x - t v|^2 = 1, positive root.
            let q = dot(x, v);
            let disc = q * q + speed_sq * (T::one() - norm_sq(x));
            (q + disc.max(T::zero()).sqrt()) / speed_sq
        }
        Shape::Slab { half_width } => {
            if v[0] == T::zero() {
                return Err(Error::InvalidInput(
                    "slab ray with zero normal velocity never exits".into(),
                ));
            }
            if v[0] > T::zero() {
                (x[0] + half_width) / v[0]
            } else {
                (x[0] - half_width) / v[0]
            }
        }
    };
    let t_b = t_b.max(T::zero());
    let x_b = add_scaled(x, -t_b, v);
    Ok((t_b, snap_to_boundary(domain, x_b)))
}

fn self_in_closure<T: Real>(domain: &Domain<T>, x: [T; 3]) -> bool {
    domain.in_closure(x)
}

/// Project a near-boundary point exactly onto the boundary.
fn snap_to_boundary<T: Real>(domain: &Domain<T>, x: [T; 3]) -> [T; 3] {
    match domain.shape {
        Shape::UnitBall => {
            let r = norm(x);
            if r > T::zero() {
                let inv = T::one() / r;
                [x[0] * inv, x[1] * inv, x[2] * inv]
            } else {
                x
            }
        }
        Shape::Slab { half_width } => {
            let s = if x[0] >= T::zero() { half_width } else { -half_width };
            [s, x[1], x[2]]
        }
    }
}

/// Draw an outgoing velocity from the wall probability measure
/// d sigma = c_mu mu(v) (v.n) dv on {v.n > 0}.
///
/// The flux component is inverse-CDF sampled (u = sqrt(-2 ln U)) and the
/// tangential components are standard Gaussians, so the draw is
/// rejection-free and fully determined by the rng state.
pub fn sample_diffuse_velocity<T: Real>(
    domain: &Domain<T>,
    x: [T; 3],
    rng: &mut CounterRng,
) -> Result<[T; 3]> {
    if !domain.on_boundary(x) {
        return Err(Error::DomainViolation(
            "diffuse sampling away from the boundary".into(),
        ));
    }
    let n = domain.normal(x)?;
    Ok(sample_diffuse_against_normal(n, rng))
}

/// Same draw given an outward normal directly (used by wall quadratures).
pub fn sample_diffuse_against_normal<T: Real>(n: [T; 3], rng: &mut CounterRng) -> [T; 3] {
    let u: T = rng.uniform();
    let flux = (-(T::one() + T::one()) * u.ln()).sqrt();
    let (g1, g2) = rng.normal_pair::<T>();
    let (e1, e2) = tangent_frame(n);
    [
        flux * n[0] + g1 * e1[0] + g2 * e2[0],
        flux * n[1] + g1 * e1[1] + g2 * e2[1],
        flux * n[2] + g1 * e1[2] + g2 * e2[2],
    ]
}

/// One node of a back-time cycle.
#[derive(Clone, Copy, Debug)]
pub struct CycleNode<T> {
    pub time: T,
    pub position: [T; 3],
    pub velocity: [T; 3],
}

/// Backward trajectory with diffuse re-emission at every wall hit.
#[derive(Clone, Debug)]
pub struct BackTimeCycle<T> {
    /// Node 0 is the starting phase point; node k >= 1 sits on the boundary.
    pub nodes: Vec<CycleNode<T>>,
    /// True when the last node time dropped to or below zero.
    pub terminated_at_initial: bool,
}

/// Build the diffuse back-time cycle from (t, x, v).
///
/// Bounces are appended until the node time drops to or below zero or k_max
/// boundary nodes have been generated. Every boundary node carries a freshly
/// sampled outgoing velocity.
pub fn build_cycle<T: Real>(
    domain: &Domain<T>,
    t: T,
    x: [T; 3],
    v: [T; 3],
    k_max: usize,
    rng: &mut CounterRng,
) -> Result<BackTimeCycle<T>> {
    if !(t > T::zero()) {
        return Err(Error::InvalidInput("cycle start time must be positive".into()));
    }
    let speed = norm(v);
    if !(speed > T::zero()) {
        return Err(Error::InvalidInput("cycle start velocity must be nonzero".into()));
    }
    if domain.on_boundary(x) {
        let n = domain.normal(x)?;
        let vn = dot(v, n);
        if vn.abs() < T::c(GRAZING_CUT) * speed {
            return Err(Error::GrazingRejected(format!(
                "start with |v.n|/|v| = {:e}",
                (vn / speed).abs()
            )));
        }
        if vn < T::zero() {
            return Err(Error::GrazingRejected(
                "start lies on the incoming boundary set".into(),
            ));
        }
    } else if !domain.is_interior(x) {
        return Err(Error::DomainViolation("cycle start outside the domain".into()));
    }

    let mut nodes = vec![CycleNode {
        time: t,
        position: x,
        velocity: v,
    }];
    let mut terminated = false;
    while nodes.len() <= k_max {
        let last = *nodes.last().unwrap();
        let (t_b, x_b) = backward_exit(domain, last.position, last.velocity)?;
        let t_next = last.time - t_b;
        let v_next = sample_diffuse_velocity(domain, x_b, rng)?;
        nodes.push(CycleNode {
            time: t_next,
            position: x_b,
            velocity: v_next,
        });
        if t_next <= T::zero() {
            terminated = true;
            break;
        }
    }
    Ok(BackTimeCycle {
        nodes,
        terminated_at_initial: terminated,
    })
}

/// Monte-Carlo estimate of the probability that the cycle still has positive
/// time after k boundary nodes, with its standard error.
///
/// Samples are sharded over seed-derived substreams and reduced in shard
/// order, so the estimate is reproducible for any worker count.
pub fn cycle_escape_probability<T: Real>(
    domain: &Domain<T>,
    t: T,
    x: [T; 3],
    v: [T; 3],
    k: usize,
    n_samples: usize,
    rng: &CounterRng,
) -> Result<(T, T)> {
    if k < 1 || n_samples < 1 {
        return Err(Error::InvalidInput(
            "cycle escape probability needs k >= 1 and n_samples >= 1".into(),
        ));
    }
    let survivors = survival_counts(domain, t, x, v, k, n_samples, rng)?;
    let p = T::c(survivors[k - 1] as f64 / n_samples as f64);
    let std_err = (p * (T::one() - p) / T::c(n_samples as f64)).sqrt();
    Ok((p, std_err))
}

/// Number of walks whose node time is still positive after 1..=k_max bounces.
///
/// One walk serves every k, so the survival table is exactly nonincreasing.
pub fn survival_counts<T: Real>(
    domain: &Domain<T>,
    t: T,
    x: [T; 3],
    v: [T; 3],
    k_max: usize,
    n_samples: usize,
    rng: &CounterRng,
) -> Result<Vec<u64>> {
    // First leg is deterministic: it consumes no wall draw.
    let (t_b, x_b) = backward_exit(domain, x, v)?;
    let t1 = t - t_b;
    if t1 <= T::zero() {
        return Ok(vec![0; k_max]);
    }

    const SHARD: usize = 4096;
    let n_shards = n_samples.div_ceil(SHARD);
    let partials: Vec<Vec<u64>> = (0..n_shards)
        .into_par_iter()
        .map(|shard| {
            let mut stream = rng.substream(shard as u64);
            let lo = shard * SHARD;
            let hi = ((shard + 1) * SHARD).min(n_samples);
            let mut counts = vec![0u64; k_max];
            for _ in lo..hi {
                counts[0] += 1; // t1 > 0 holds for every walk
                let mut time = t1;
                let mut pos = x_b;
                for kk in 1..k_max {
                    let vel = sample_diffuse_against_normal(
                        domain.normal(pos).expect("cycle node on boundary"),
                        &mut stream,
                    );
                    let (t_b, x_next) =
                        backward_exit(domain, pos, vel).expect("cycle leg exits");
                    time = time - t_b;
                    if time <= T::zero() {
                        break;
                    }
                    counts[kk] += 1;
                    pos = x_next;
                }
            }
            counts
        })
        .collect();

    let mut total = vec![0u64; k_max];
    for part in &partials {
        for (acc, c) in total.iter_mut().zip(part) {
            *acc += c;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_exit_along_axis() {
        let d = Domain::<f64>::unit_ball();
        let (t_b, x_b) = backward_exit(&d, [0.5, 0.0, 0.0], [1.0, 0.0, 0.0]).unwrap();
        assert!((t_b - 1.5).abs() < 1e-14);
        assert!((x_b[0] + 1.0).abs() < 1e-14 && x_b[1].abs() < 1e-14);

        let (t_b, x_b) = backward_exit(&d, [0.0; 3], [0.0, 2.0, 0.0]).unwrap();
        assert!((t_b - 0.5).abs() < 1e-14);
        assert!((x_b[1] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn slab_exit() {
        let d = Domain::slab(1.0_f64);
        let (t_b, x_b) = backward_exit(&d, [0.2, 0.3, -0.7], [-0.6, 0.1, 0.4]).unwrap();
        assert!((t_b - 4.0 / 3.0).abs() < 1e-14);
        assert!((x_b[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn exit_errors() {
        let d = Domain::<f64>::unit_ball();
        assert!(matches!(
            backward_exit(&d, [0.5, 0.0, 0.0], [0.0; 3]),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            backward_exit(&d, [2.0, 0.0, 0.0], [1.0, 0.0, 0.0]),
            Err(Error::DomainViolation(_))
        ));
        let s = Domain::slab(1.0_f64);
        assert!(matches!(
            backward_exit(&s, [0.0; 3], [0.0, 1.0, 0.0]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn exit_round_trip_and_bound() {
        let d = Domain::<f64>::unit_ball();
        let mut rng = CounterRng::new(21);
        for _ in 0..500 {
            let x = [
                0.9 * (2.0 * rng.uniform::<f64>() - 1.0),
                0.5 * (2.0 * rng.uniform::<f64>() - 1.0),
                0.5 * (2.0 * rng.uniform::<f64>() - 1.0),
            ];
            if !d.is_interior(x) {
                continue;
            }
            let (g1, g2) = rng.normal_pair::<f64>();
            let (g3, _) = rng.normal_pair::<f64>();
            let v = [g1, g2, g3];
            let speed = norm(v);
            if speed < 1e-3 {
                continue;
            }
            let (t_b, x_b) = backward_exit(&d, x, v).unwrap();
            assert!(t_b > 0.0 && t_b <= d.diameter() / speed + 1e-12);
            // forward transport restores the start point
            let back = add_scaled(x_b, t_b, v);
            for c in 0..3 {
                assert!((back[c] - x[c]).abs() < 1e-12);
            }
            assert!(d.level_set(x_b).abs() <= 1e-10 * (1.0 + norm_sq(x_b)));
            let n = d.normal(x_b).unwrap();
            assert!(dot(v, n) <= 1e-12);
        }
    }

    #[test]
    fn diffuse_sampling_moments() {
        let d = Domain::<f64>::unit_ball();
        let x = [0.0, 0.0, -1.0];
        let n = d.normal(x).unwrap();
        let mut rng = CounterRng::new(101);
        let n_samples = 1_000_000usize;
        let (mut sum_n, mut sum_t1, mut sum_t2) = (0.0, 0.0, 0.0);
        for _ in 0..n_samples {
            let v = sample_diffuse_velocity(&d, x, &mut rng).unwrap();
            assert!(dot(v, n) > 0.0);
            let (e1, e2) = tangent_frame(n);
            sum_n += dot(v, n);
            sum_t1 += dot(v, e1);
            sum_t2 += dot(v, e2);
        }
        let mean_n = sum_n / n_samples as f64;
        // E[v.n] under the wall measure is sqrt(2 pi)/2; flux component has
        // variance 2 - pi/2, so 3 sigma of the mean is ~0.002.
        let expected = (2.0 * std::f64::consts::PI).sqrt() / 2.0;
        let sigma = ((2.0 - std::f64::consts::PI / 2.0) / n_samples as f64).sqrt();
        assert!(
            (mean_n - expected).abs() < 3.0 * sigma,
            "mean {mean_n} expected {expected}"
        );
        let sigma_t = (1.0 / n_samples as f64).sqrt();
        assert!((sum_t1 / n_samples as f64).abs() < 3.0 * sigma_t);
        assert!((sum_t2 / n_samples as f64).abs() < 3.0 * sigma_t);
    }

    #[test]
    fn diffuse_sampling_needs_boundary_point() {
        let d = Domain::<f64>::unit_ball();
        let mut rng = CounterRng::new(1);
        assert!(matches!(
            sample_diffuse_velocity(&d, [0.1, 0.0, 0.0], &mut rng),
            Err(Error::DomainViolation(_))
        ));
    }

    #[test]
    fn cycle_short_start_terminates_before_any_bounce() {
        let d = Domain::<f64>::unit_ball();
        let mut rng = CounterRng::new(2);
        let c = build_cycle(&d, 1.0, [0.5, 0.0, 0.0], [1.0, 0.0, 0.0], 10, &mut rng).unwrap();
        assert!(c.terminated_at_initial);
        assert_eq!(c.nodes.len(), 2);
        assert!((c.nodes[1].time + 0.5).abs() < 1e-14);
        assert!((c.nodes[1].position[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn cycle_first_bounce_time() {
        let d = Domain::<f64>::unit_ball();
        let mut rng = CounterRng::new(3);
        let c = build_cycle(&d, 2.0, [0.5, 0.0, 0.0], [1.0, 0.0, 0.0], 10, &mut rng).unwrap();
        assert!((c.nodes[1].time - 0.5).abs() < 1e-14);
        assert!((c.nodes[1].position[0] + 1.0).abs() < 1e-12);
        // invariants: consecutive exits and outgoing sampled velocities
        for w in c.nodes.windows(2) {
            let (t_b, x_b) = backward_exit(&d, w[0].position, w[0].velocity).unwrap();
            assert!((w[1].time - (w[0].time - t_b)).abs() < 1e-12);
            for c in 0..3 {
                assert!((w[1].position[c] - x_b[c]).abs() < 1e-12);
            }
        }
        for node in &c.nodes[1..] {
            let n = d.normal(node.position).unwrap();
            assert!(dot(node.velocity, n) > 0.0);
        }
    }

    #[test]
    fn cycle_chord_arithmetic() {
        // From x1 = (-1,0,0) with velocity (-0.5,0,0) the backward chord has
        // length 2 at speed 0.5, so the next time drops by 4.
        let d = Domain::<f64>::unit_ball();
        let (t_b, x_b) = backward_exit(&d, [-1.0, 0.0, 0.0], [-0.5, 0.0, 0.0]).unwrap();
        assert!((t_b - 4.0).abs() < 1e-13);
        assert!((x_b[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cycle_rejects_grazing_and_incoming_starts() {
        let d = Domain::<f64>::unit_ball();
        let mut rng = CounterRng::new(4);
        // tangential start on the boundary
        assert!(matches!(
            build_cycle(&d, 1.0, [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], 5, &mut rng),
            Err(Error::GrazingRejected(_))
        ));
        // incoming start on the boundary
        assert!(matches!(
            build_cycle(&d, 1.0, [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], 5, &mut rng),
            Err(Error::GrazingRejected(_))
        ));
    }

    #[test]
    fn escape_probability_zero_when_first_leg_reaches_initial_time() {
        let d = Domain::<f64>::unit_ball();
        let rng = CounterRng::new(5);
        let (p, se) =
            cycle_escape_probability(&d, 0.1, [0.5, 0.0, 0.0], [1.0, 0.0, 0.0], 20, 1000, &rng)
                .unwrap();
        assert_eq!(p, 0.0);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn escape_probability_monotone_in_k() {
        let d = Domain::<f64>::unit_ball();
        let rng = CounterRng::new(6);
        let counts =
            survival_counts(&d, 3.0, [0.0, 0.0, 0.0], [2.0, 0.0, 0.0], 12, 20_000, &rng).unwrap();
        for w in counts.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(counts[0] == 20_000); // t1 = 3 - 0.5 > 0 for every walk
    }

    #[test]
    fn escape_probability_deterministic_across_worker_counts() {
        let d = Domain::<f64>::unit_ball();
        let rng = CounterRng::new(7);
        let args = (1.5, [0.25, 0.0, 0.0], [3.0, 0.0, 0.0]);
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = pool1
            .install(|| survival_counts(&d, args.0, args.1, args.2, 8, 30_000, &rng))
            .unwrap();
        let b = pool4
            .install(|| survival_counts(&d, args.0, args.1, args.2, 8, 30_000, &rng))
            .unwrap();
        assert_eq!(a, b);
    }
}
