//! Scenario configuration, run orchestration and machine-readable outputs.
//!
//! A scenario is a flat TOML document with sections mirroring the module
//! names. Parsing validates every field and reports the full list of
//! violations. Runs write a diagnostics CSV, one JSON report per enabled
//! check and a manifest that reproduces the run byte-for-byte.

use crate::collision::{CollisionOperator, KernelSpec, QuadratureConfig};
use crate::error::{Error, Result};
use crate::geometry::Domain;
use crate::rng::CounterRng;
use crate::solver::{
    initial_deviation, initial_field, march_global, DiagnosticsRow, InitialRecipe, MarchResult,
    SolverConfig,
};
use crate::velocity::{VelocityGrid, WeightSpec};
use crate::verify;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const PLOT_FILE: &str = "plot_data.csv";
pub const OUT_DIR_ENV: &str = "DVBOLT_OUT_DIR";

const KNOWN_CHECKS: &[&str] = &[
    "decay_rate",
    "l2_growth",
    "r_lower_bound",
    "cycle_bound",
    "kernel_bounds",
    "gain_bound",
    "nullspace",
];

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    pub shape: String,
    pub half_width: f64,
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self {
            shape: "slab".into(),
            half_width: 1.0,
        }
    }
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    pub kappa: f64,
    pub b0: f64,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self { kappa: 1.0, b0: 1.0 }
    }
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct WeightSection {
    pub rho: f64,
    pub beta: f64,
    pub varpi: f64,
    /// Enforce the strict parameter ranges of the global statement.
    pub theorem_mode: bool,
}

impl Default for WeightSection {
    fn default() -> Self {
        Self {
            rho: 2.0,
            beta: 2.5,
            varpi: 1.0 / 64.0,
            theorem_mode: true,
        }
    }
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub r_v: f64,
    pub dv: f64,
    pub n_x: usize,
    /// Sphere-quadrature size; fixed by the scheme and validated.
    pub omega_nodes: usize,
    pub u_ball_radius: Option<f64>,
    pub z_cut: Option<f64>,
    pub k_z_cut: Option<f64>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            r_v: 6.0,
            dv: 0.75,
            n_x: 32,
            omega_nodes: crate::collision::N_OMEGA,
            u_ball_radius: None,
            z_cut: None,
            k_z_cut: None,
        }
    }
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub march: bool,
    pub c_hat_rho: f64,
    pub dt_cap_factor: f64,
    pub picard_tol: f64,
    pub picard_max_iters: usize,
    pub delta_target: f64,
    pub m0_cap: f64,
    pub t_end: f64,
    pub conservation_projection: bool,
    pub linear_homogeneous: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::<f64>::default();
        Self {
            march: true,
            c_hat_rho: d.c_hat_rho,
            dt_cap_factor: d.dt_cap_factor,
            picard_tol: d.picard_tol,
            picard_max_iters: d.picard_max_iters,
            delta_target: d.delta_target,
            m0_cap: d.m0_cap,
            t_end: d.t_end,
            conservation_projection: d.conservation_projection,
            linear_homogeneous: d.linear_homogeneous,
        }
    }
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    pub recipe: String,
    pub target_winf: f64,
    pub hole_half_width: f64,
    pub depth: f64,
}

impl Default for InitialSection {
    fn default() -> Self {
        Self {
            recipe: "equilibrium".into(),
            target_winf: 0.1,
            hole_half_width: 0.3,
            depth: 1.0,
        }
    }
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Record one diagnostics row every this many accepted steps.
    pub every: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { every: 1 }
    }
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RngSection {
    pub seed: u64,
}

impl Default for RngSection {
    fn default() -> Self {
        Self { seed: 20_260_808 }
    }
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ChecksSection {
    pub list: Vec<String>,
    pub fit_window: [f64; 2],
    /// Minimum fitted decay rate and r^2 for the decay check to pass.
    pub decay_min_rate: f64,
    pub decay_min_r_squared: f64,
    pub cycle_t0: f64,
    pub cycle_k_max: usize,
    pub cycle_samples: usize,
    pub cycle_slope_min_r_squared: f64,
    pub kernel_pairs: usize,
    pub gain_fields: usize,
    /// Margin constant c of t~ = (2/nu0) ln(c M0).
    pub r_margin_c: f64,
    pub r_min_ratio: f64,
    pub gauss_threshold: f64,
}

impl Default for ChecksSection {
    fn default() -> Self {
        Self {
            list: Vec::new(),
            fit_window: [0.2, 1.0],
            decay_min_rate: 0.0,
            decay_min_r_squared: 0.0,
            cycle_t0: 1.0,
            cycle_k_max: 50,
            cycle_samples: 100_000,
            cycle_slope_min_r_squared: 0.9,
            kernel_pairs: 200,
            gain_fields: 1000,
            r_margin_c: 4.0,
            r_min_ratio: 0.5,
            gauss_threshold: 1.0,
        }
    }
}

/// A fully resolved run configuration.
#[derive(Serialize, Deserialize, Debug, Clone, PartialEq, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub geometry: GeometrySection,
    pub kernel: KernelSection,
    pub weight: WeightSection,
    pub grid: GridSection,
    pub solver: SolverSection,
    pub initial: InitialSection,
    pub output: OutputSection,
    pub rng: RngSection,
    pub checks: ChecksSection,
}

/// Parse and fully validate a scenario, reporting every violation at once.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let scenario: Scenario = toml::from_str(text)
        .map_err(|e| Error::ConfigInvalid(vec![format!("toml parse error: {e}")]))?;
    validate_scenario(&scenario)?;
    Ok(scenario)
}

pub fn validate_scenario(s: &Scenario) -> Result<()> {
    let mut problems = Vec::new();
    match s.geometry.shape.as_str() {
        "slab" => {
            if !(s.geometry.half_width > 0.0) {
                problems.push("geometry.half_width must be positive".into());
            }
        }
        "unit_ball" => {
            if s.solver.march {
                problems.push(
                    "geometry.shape unit_ball supports cycle verification only; \
                     the march requires the slab"
                        .into(),
                );
            }
        }
        other => problems.push(format!("geometry.shape '{other}' unknown (slab, unit_ball)")),
    }
    if !(0.0..=1.0).contains(&s.kernel.kappa) {
        problems.push(format!("kernel.kappa must lie in [0, 1], got {}", s.kernel.kappa));
    }
    if !(s.kernel.b0 > 0.0) {
        problems.push(format!("kernel.b0 must be positive, got {}", s.kernel.b0));
    }
    let wspec = WeightSpec::new(s.weight.rho, s.weight.beta, s.weight.varpi);
    let wcheck = if s.weight.theorem_mode {
        wspec.validate_strict()
    } else {
        wspec.validate_relaxed()
    };
    if let Err(Error::ConfigInvalid(mut list)) = wcheck {
        problems.append(&mut list);
    }
    if !(s.grid.r_v > 0.0) || !(s.grid.dv > 0.0) {
        problems.push("grid.r_v and grid.dv must be positive".into());
    } else if ((s.grid.r_v / s.grid.dv) - (s.grid.r_v / s.grid.dv).round()).abs() > 1e-9 {
        problems.push(format!(
            "grid.r_v = {} must be an integer multiple of grid.dv = {}",
            s.grid.r_v, s.grid.dv
        ));
    }
    if s.grid.n_x < 2 {
        problems.push("grid.n_x must be at least 2".into());
    }
    if s.grid.omega_nodes != crate::collision::N_OMEGA {
        problems.push(format!(
            "grid.omega_nodes is fixed at {} by the scheme",
            crate::collision::N_OMEGA
        ));
    }
    if !(s.solver.picard_tol > 0.0) {
        problems.push("solver.picard_tol must be positive".into());
    }
    if s.solver.picard_max_iters == 0 {
        problems.push("solver.picard_max_iters must be at least 1".into());
    }
    if !(s.solver.c_hat_rho > 0.0) {
        problems.push("solver.c_hat_rho must be positive".into());
    }
    if !(s.solver.dt_cap_factor > 0.0) {
        problems.push("solver.dt_cap_factor must be positive".into());
    }
    if s.solver.t_end < 0.0 {
        problems.push("solver.t_end must be nonnegative".into());
    }
    if !(s.solver.m0_cap > 0.0) {
        problems.push("solver.m0_cap must be positive".into());
    }
    match s.initial.recipe.as_str() {
        "equilibrium" => {}
        "small_perturbation" | "large_amplitude" => {
            if !(s.initial.target_winf > 0.0) {
                problems.push("initial.target_winf must be positive".into());
            }
        }
        "vacuum_hole" => {
            if !(s.initial.depth > 0.0 && s.initial.depth <= 1.0) {
                problems.push("initial.depth must lie in (0, 1]".into());
            }
            if !(s.initial.hole_half_width > 0.0
                && s.initial.hole_half_width < s.geometry.half_width)
            {
                problems.push("initial.hole_half_width must be a proper subinterval".into());
            }
        }
        other => problems.push(format!(
            "initial.recipe '{other}' unknown (equilibrium, small_perturbation, \
             large_amplitude, vacuum_hole)"
        )),
    }
    for check in &s.checks.list {
        if !KNOWN_CHECKS.contains(&check.as_str()) {
            problems.push(format!("checks.list entry '{check}' unknown ({KNOWN_CHECKS:?})"));
        }
    }
    if s.checks.fit_window[1] <= s.checks.fit_window[0] {
        problems.push("checks.fit_window must be an increasing pair".into());
    }
    if s.checks.cycle_k_max == 0 || s.checks.cycle_samples == 0 {
        problems.push("checks.cycle_k_max and cycle_samples must be positive".into());
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::ConfigInvalid(problems))
    }
}

/// FNV-1a hash of the canonical serialized scenario.
pub fn config_hash(scenario: &Scenario) -> String {
    let text = toml::to_string(scenario).unwrap_or_default();
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

fn build_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| format!("v{}", env!("CARGO_PKG_VERSION")))
}

/// Outcome of one executed check.
#[derive(Serialize, Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub pass: bool,
    pub seed: u64,
    pub config_hash: String,
    pub grid: String,
    pub report: serde_json::Value,
}

/// Everything a finished run produced.
pub struct RunSummary {
    pub scenario: Scenario,
    pub out_dir: PathBuf,
    pub marched: bool,
    pub rows: Vec<DiagnosticsRow<f64>>,
    pub checks: Vec<CheckOutcome>,
    pub clipped_total: usize,
    /// Minimum over cells of the spatial density of the final state.
    pub final_min_cell_density: Option<f64>,
    pub final_time: Option<f64>,
}

impl RunSummary {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn full_precision(x: f64) -> String {
    format!("{x:.16e}")
}

/// Render diagnostics rows as the canonical CSV text.
pub fn diagnostics_csv(rows: &[DiagnosticsRow<f64>]) -> String {
    let mut out = String::from("t,mass,l2,winf,gauss_l1v_sup,min_F,min_R_over_nu,contraction_ratio\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            full_precision(r.t),
            full_precision(r.mass),
            full_precision(r.l2),
            full_precision(r.winf),
            full_precision(r.gauss_l1v_sup),
            full_precision(r.min_f),
            full_precision(r.min_r_over_nu),
            full_precision(r.contraction_ratio),
        );
    }
    out
}

/// Parse a diagnostics CSV produced by [`diagnostics_csv`].
pub fn read_diagnostics_csv(text: &str) -> Result<Vec<DiagnosticsRow<f64>>> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::DataCorrupt(format!(
                "diagnostics line {} has {} fields",
                lineno + 1,
                fields.len()
            )));
        }
        let parse = |i: usize| -> Result<f64> {
            fields[i]
                .parse()
                .map_err(|e| Error::DataCorrupt(format!("line {}: {e}", lineno + 1)))
        };
        rows.push(DiagnosticsRow {
            t: parse(0)?,
            mass: parse(1)?,
            l2: parse(2)?,
            winf: parse(3)?,
            gauss_l1v_sup: parse(4)?,
            min_f: parse(5)?,
            min_r_over_nu: parse(6)?,
            contraction_ratio: parse(7)?,
        });
    }
    Ok(rows)
}

/// Execute a scenario: march when enabled, then run the configured checks.
///
/// Artifacts land in `out_dir`: the manifest, the diagnostics CSV when a
/// march ran, and one JSON file per check under checks/.
pub fn run_scenario(scenario: &Scenario, out_dir: &Path) -> Result<RunSummary> {
    validate_scenario(scenario)?;
    std::fs::create_dir_all(out_dir)?;
    let hash = config_hash(scenario);
    let seed = scenario.rng.seed;
    let root_rng = CounterRng::new(seed);

    let grid = VelocityGrid::<f64>::new(scenario.grid.r_v, scenario.grid.dv)?;
    let wspec = WeightSpec::new(scenario.weight.rho, scenario.weight.beta, scenario.weight.varpi);
    let kernel = KernelSpec::new(scenario.kernel.kappa, scenario.kernel.b0)?;
    let grid_desc = format!(
        "slab n_x={} R_v={} dv={} nodes={}",
        scenario.grid.n_x,
        scenario.grid.r_v,
        scenario.grid.dv,
        grid.len()
    );

    let needs_engine = scenario.solver.march
        || scenario.checks.list.iter().any(|c| {
            matches!(c.as_str(), "kernel_bounds" | "gain_bound" | "nullspace" | "r_lower_bound" | "decay_rate")
        });
    let engine = if needs_engine {
        let mut quad = QuadratureConfig::default_for(grid.radius);
        if let Some(r) = scenario.grid.u_ball_radius {
            quad.u_ball_radius = r;
        }
        if let Some(z) = scenario.grid.z_cut {
            quad.z_cut = z;
        }
        if let Some(z) = scenario.grid.k_z_cut {
            quad.k_z_cut = z;
        }
        Some(CollisionOperator::with_quadrature(&grid, &kernel, quad)?)
    } else {
        None
    };

    // March
    let mut rows: Vec<DiagnosticsRow<f64>> = Vec::new();
    let mut marched = false;
    let mut below_delta_time = None;
    let mut clipped_total = 0usize;
    let mut initial_winf = 0.0_f64;
    let mut final_min_cell_density = None;
    let mut final_time = None;
    if scenario.solver.march && scenario.solver.t_end > 0.0 {
        let engine = engine.as_ref().expect("march needs the collision engine");
        let config = solver_config(scenario);
        let recipe = recipe_of(scenario)?;
        let field = if scenario.solver.linear_homogeneous {
            initial_deviation(recipe, &grid, &wspec, scenario.grid.n_x, scenario.geometry.half_width)?
        } else {
            initial_field(recipe, &grid, &wspec, scenario.grid.n_x, scenario.geometry.half_width)?
        };
        initial_winf = field.norms(&grid, &wspec)?.winf;
        let result: MarchResult<f64> =
            match march_global(&field, &config, engine, &wspec, scenario.output.every) {
                Ok(r) => r,
                Err(e) => {
                    // leave a dump describing the failing state before
                    // propagating the abort
                    let _ = std::fs::write(
                        out_dir.join("abort.txt"),
                        format!("march aborted: {e}\nscenario: {}\n", scenario.name),
                    );
                    return Err(e);
                }
            };
        rows = result.rows;
        below_delta_time = result.below_delta_time;
        clipped_total = result.clipped_total;
        marched = true;
        let n_v = grid.len();
        let fin = &result.field;
        final_min_cell_density = Some(
            (0..fin.n_x)
                .map(|c| {
                    crate::scalar::pairwise_sum(fin.cell(c, n_v)) * grid.quad_weight
                })
                .fold(f64::INFINITY, f64::min),
        );
        final_time = Some(fin.time);
        std::fs::write(out_dir.join(DIAGNOSTICS_FILE), diagnostics_csv(&rows))?;
    } else if scenario
        .checks
        .list
        .iter()
        .any(|c| matches!(c.as_str(), "decay_rate" | "l2_growth" | "r_lower_bound"))
    {
        // verify-only invocation against an existing run directory
        let path = out_dir.join(DIAGNOSTICS_FILE);
        let text = std::fs::read_to_string(&path).map_err(|_| {
            Error::IncompleteRun(format!(
                "checks need diagnostics but {} is missing",
                path.display()
            ))
        })?;
        rows = read_diagnostics_csv(&text)?;
        initial_winf = rows.first().map(|r| r.winf).unwrap_or(0.0);
    }

    // Checks
    let checks_dir = out_dir.join("checks");
    if !scenario.checks.list.is_empty() {
        std::fs::create_dir_all(&checks_dir)?;
    }
    let mut outcomes = Vec::new();
    for name in &scenario.checks.list {
        let outcome = run_check(
            name,
            scenario,
            &grid,
            &wspec,
            engine.as_ref(),
            &rows,
            below_delta_time,
            initial_winf,
            &root_rng,
            seed,
            &hash,
            &grid_desc,
        )?;
        let path = checks_dir.join(format!("{name}.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&outcome).unwrap())?;
        outcomes.push(outcome);
    }

    // Manifest: the resolved scenario plus provenance, written last.
    let manifest = Manifest {
        scenario: scenario.clone(),
        provenance: Provenance {
            config_hash: hash,
            seed,
            grid: grid_desc,
            nu0: engine.as_ref().map(|e| e.nu0()),
            build: build_describe(),
            marched,
            clipped_negatives: clipped_total,
        },
    };
    std::fs::write(
        out_dir.join(MANIFEST_FILE),
        toml::to_string_pretty(&manifest).map_err(|e| Error::DataCorrupt(e.to_string()))?,
    )?;

    Ok(RunSummary {
        scenario: scenario.clone(),
        out_dir: out_dir.to_path_buf(),
        marched,
        rows,
        checks: outcomes,
        clipped_total,
        final_min_cell_density,
        final_time,
    })
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    scenario: Scenario,
    provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct Provenance {
    config_hash: String,
    seed: u64,
    grid: String,
    nu0: Option<f64>,
    build: String,
    marched: bool,
    clipped_negatives: usize,
}

pub fn solver_config(scenario: &Scenario) -> SolverConfig<f64> {
    SolverConfig {
        c_hat_rho: scenario.solver.c_hat_rho,
        dt_cap_factor: scenario.solver.dt_cap_factor,
        picard_tol: scenario.solver.picard_tol,
        picard_max_iters: scenario.solver.picard_max_iters,
        delta_target: scenario.solver.delta_target,
        m0_cap: scenario.solver.m0_cap,
        t_end: scenario.solver.t_end,
        conservation_projection: scenario.solver.conservation_projection,
        linear_homogeneous: scenario.solver.linear_homogeneous,
    }
}

pub fn recipe_of(scenario: &Scenario) -> Result<InitialRecipe<f64>> {
    Ok(match scenario.initial.recipe.as_str() {
        "equilibrium" => InitialRecipe::Equilibrium,
        "small_perturbation" => InitialRecipe::SmallPerturbation {
            target_winf: scenario.initial.target_winf,
        },
        "large_amplitude" => InitialRecipe::LargeAmplitude {
            target_winf: scenario.initial.target_winf,
        },
        "vacuum_hole" => InitialRecipe::VacuumHole {
            hole_half_width: scenario.initial.hole_half_width,
            depth: scenario.initial.depth,
        },
        other => {
            return Err(Error::ConfigInvalid(vec![format!(
                "initial.recipe '{other}' unknown"
            )]))
        }
    })
}

#[allow(clippy::too_many_arguments)]
fn run_check(
    name: &str,
    scenario: &Scenario,
    grid: &VelocityGrid<f64>,
    wspec: &WeightSpec<f64>,
    engine: Option<&CollisionOperator<f64>>,
    rows: &[DiagnosticsRow<f64>],
    below_delta_time: Option<f64>,
    initial_winf: f64,
    root_rng: &CounterRng,
    seed: u64,
    hash: &str,
    grid_desc: &str,
) -> Result<CheckOutcome> {
    let cfg = &scenario.checks;
    let need_engine = || {
        engine.ok_or_else(|| {
            Error::IncompleteRun(format!("check {name} needs the collision engine"))
        })
    };
    let need_rows = || -> Result<()> {
        if rows.is_empty() {
            Err(Error::IncompleteRun(format!(
                "check {name} needs a finished march"
            )))
        } else {
            Ok(())
        }
    };
    let (pass, report) = match name {
        "decay_rate" => {
            need_rows()?;
            let nu0 = need_engine()?.nu0();
            let rep = verify::fit_decay_rate(
                rows,
                (cfg.fit_window[0], cfg.fit_window[1]),
                nu0,
                below_delta_time,
            )?;
            let pass = rep.fitted_rate.is_finite()
                && rep.fitted_rate >= cfg.decay_min_rate
                && rep.r_squared >= cfg.decay_min_r_squared;
            (pass, serde_json::to_value(&rep).unwrap())
        }
        "l2_growth" => {
            need_rows()?;
            let rep = verify::check_l2_growth(rows)?;
            let pass = rep.fitted_growth_constant.is_finite()
                && !rep.violated
                && !rep.zero_start_defect;
            (pass, serde_json::to_value(&rep).unwrap())
        }
        "r_lower_bound" => {
            need_rows()?;
            let nu0 = need_engine()?.nu0();
            let rep = verify::check_r_lower_bound(
                rows,
                nu0,
                initial_winf,
                cfg.r_margin_c,
                cfg.gauss_threshold,
            )?;
            let pass = rep.min_ratio_after_t_tilde >= cfg.r_min_ratio;
            (pass, serde_json::to_value(&rep).unwrap())
        }
        "cycle_bound" => {
            let domain = Domain::<f64>::unit_ball();
            let k_list: Vec<usize> = (1..=cfg.cycle_k_max).collect();
            let rep = verify::check_cycle_bound(
                &domain,
                cfg.cycle_t0,
                &k_list,
                cfg.cycle_samples,
                &root_rng.substream(2),
            )?;
            let pass = rep.monotone
                && rep.log_slope < 0.0
                && rep.slope_r_squared >= cfg.cycle_slope_min_r_squared
                && rep.smallest_k_below_percent.is_some();
            (pass, serde_json::to_value(&rep).unwrap())
        }
        "kernel_bounds" => {
            let rep = verify::check_kernel_bounds(
                need_engine()?,
                wspec,
                cfg.kernel_pairs,
                &root_rng.substream(3),
            )?;
            let pass = rep.sup_ratio.is_finite()
                && rep.fitted_c_alpha0.is_finite()
                && rep.fitted_c_alpha2.is_finite()
                && rep.envelope_violation <= 0.05;
            (pass, serde_json::to_value(&rep).unwrap())
        }
        "gain_bound" => {
            let rep = verify::check_gain_bound(
                need_engine()?,
                wspec,
                cfg.gain_fields,
                &root_rng.substream(4),
            )?;
            let pass = rep.sup_ratio.is_finite() && rep.sup_ratio > 0.0;
            (pass, serde_json::to_value(&rep).unwrap())
        }
        "nullspace" => {
            let rep =
                verify::check_equilibrium_nullspace(need_engine()?, &root_rng.substream(5))?;
            let pass = rep
                .residuals
                .iter()
                .all(|r| r.is_finite() && *r < 0.5 * rep.control_residual);
            (pass, serde_json::to_value(&rep).unwrap())
        }
        other => {
            return Err(Error::ConfigInvalid(vec![format!("unknown check '{other}'")]));
        }
    };
    let _ = grid;
    Ok(CheckOutcome {
        name: name.to_string(),
        pass,
        seed,
        config_hash: hash.to_string(),
        grid: grid_desc.to_string(),
        report,
    })
}

/// Long-form plot table of a finished run: rows (t, series, value) for every
/// diagnostics column plus the fitted exponential envelope when the decay
/// check produced one.
pub fn emit_plot_data(run_dir: &Path) -> Result<PathBuf> {
    let diag_path = run_dir.join(DIAGNOSTICS_FILE);
    let text = std::fs::read_to_string(&diag_path).map_err(|_| {
        Error::IncompleteRun(format!("no diagnostics at {}", diag_path.display()))
    })?;
    let rows = read_diagnostics_csv(&text)?;
    if rows.is_empty() {
        return Err(Error::IncompleteRun("diagnostics file has no rows".into()));
    }
    let mut out = String::from("t,series,value\n");
    let series: [(&str, fn(&DiagnosticsRow<f64>) -> f64); 7] = [
        ("mass", |r| r.mass),
        ("l2", |r| r.l2),
        ("winf", |r| r.winf),
        ("gauss_l1v_sup", |r| r.gauss_l1v_sup),
        ("min_F", |r| r.min_f),
        ("min_R_over_nu", |r| r.min_r_over_nu),
        ("contraction_ratio", |r| r.contraction_ratio),
    ];
    for r in &rows {
        for (name, get) in &series {
            let _ = writeln!(out, "{},{},{}", full_precision(r.t), name, full_precision(get(r)));
        }
    }
    // fitted envelope from the decay check, when present
    let decay_path = run_dir.join("checks").join("decay_rate.json");
    if let Ok(decay_text) = std::fs::read_to_string(&decay_path) {
        if let Ok(value) = serde_json::from_str::<serde_json::Value>(&decay_text) {
            let rep = &value["report"];
            if let (Some(rate), Some(r0)) = (rep["fitted_rate"].as_f64(), rows.first()) {
                let amp = rep["envelope_prefactor"].as_f64().unwrap_or(r0.winf);
                for r in &rows {
                    let env = amp * (-rate * (r.t - rows[0].t)).exp();
                    let _ = writeln!(
                        out,
                        "{},fitted_envelope,{}",
                        full_precision(r.t),
                        full_precision(env)
                    );
                }
            }
        }
    }
    let path = run_dir.join(PLOT_FILE);
    std::fs::write(&path, out)?;
    Ok(path)
}
