//! Study orchestration: configuration, amplitude sweeps, convergence-order
//! fitting, and report/CSV serialization.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::euler_poisson::{
    ep_solve, solve_poisson, EPParams, EpError, FilterPolicy, FluidState,
};
use crate::expansion::{
    background_residuals, compute_remainders, exp_taylor_tail, profile_rates,
    remainder_bound_check, ExpansionError, ProfileRates, RemainderTable,
};
use crate::grid::{field_norms, Field1D, GridError, SpatialGrid};
use crate::kdv::{
    find_sound_speed, solve_hierarchy, soliton, ExpansionProfile, KdvError, SoundSpeed,
};
use crate::kinetic::{
    chi_basis, gram_matrix, maxwellian, moments, p1_identity_check, project_p0, project_p1,
    DistributionSlice, KineticError, MaxwellianParams, VelocityGrid,
};
use crate::landau::{window_check, LandauError};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("config error: {0}")]
    Config(String),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Kdv(#[from] KdvError),
    #[error(transparent)]
    Ep(#[from] EpError),
    #[error(transparent)]
    Expansion(#[from] ExpansionError),
    #[error(transparent)]
    Kinetic(#[from] KineticError),
    #[error(transparent)]
    Landau(#[from] LandauError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("order fit needs positive errors and at least 3 points")]
    BadFitData,
}

// ---------------------------------------------------------------------------
// configuration

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    pub length: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitialSpec {
    Soliton {
        c: f64,
        #[serde(default)]
        x0: Option<f64>,
    },
    Sine {
        /// `(mode, amplitude)` pairs
        modes: Vec<(usize, f64)>,
    },
}

fn default_resolutions() -> Vec<usize> {
    Vec::new()
}

fn default_filter() -> String {
    "off".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tolerances {
    #[serde(default = "Tolerances::default_poisson")]
    pub poisson: f64,
    #[serde(default = "Tolerances::default_order_low")]
    pub order_low: f64,
    #[serde(default = "Tolerances::default_order_high")]
    pub order_high: f64,
}

impl Tolerances {
    fn default_poisson() -> f64 {
        1e-12
    }
    fn default_order_low() -> f64 {
        1.7
    }
    fn default_order_high() -> f64 {
        2.3
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            poisson: Self::default_poisson(),
            order_low: Self::default_order_low(),
            order_high: Self::default_order_high(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KineticSpec {
    #[serde(default = "KineticSpec::default_m")]
    pub m: usize,
    #[serde(default = "KineticSpec::default_vmax")]
    pub vmax: f64,
    #[serde(default = "KineticSpec::default_epsilon")]
    pub epsilon: f64,
    /// Weight order; must dominate every requested derivative order.
    #[serde(default = "KineticSpec::default_l")]
    pub l: i32,
    /// Gaussian weight strength; the analysis only pins it to (0, 1).
    #[serde(default = "KineticSpec::default_q1")]
    pub q1: f64,
    /// Weight relaxation exponent.
    #[serde(default = "KineticSpec::default_q2")]
    pub q2: f64,
    /// Upper-window constant of the amplitude-collisionality check.
    #[serde(default = "KineticSpec::default_c_tilde")]
    pub c_tilde: f64,
}

impl KineticSpec {
    fn default_m() -> usize {
        32
    }
    fn default_vmax() -> f64 {
        10.0
    }
    fn default_epsilon() -> f64 {
        1e-3
    }
    fn default_l() -> i32 {
        2
    }
    fn default_q1() -> f64 {
        0.1
    }
    fn default_q2() -> f64 {
        1.0
    }
    fn default_c_tilde() -> f64 {
        1.0
    }
}

impl Default for KineticSpec {
    fn default() -> Self {
        Self {
            m: Self::default_m(),
            vmax: Self::default_vmax(),
            epsilon: Self::default_epsilon(),
            l: Self::default_l(),
            q1: Self::default_q1(),
            q2: Self::default_q2(),
            c_tilde: Self::default_c_tilde(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyConfig {
    pub grid: GridSpec,
    pub initial: InitialSpec,
    pub deltas: Vec<f64>,
    #[serde(default = "default_resolutions")]
    pub resolutions: Vec<usize>,
    pub t_final: f64,
    pub output_times: Vec<f64>,
    #[serde(default)]
    pub second_order: bool,
    #[serde(default = "default_filter")]
    pub filter: String,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub kinetic: KineticSpec,
    #[serde(default = "StudyConfig::default_kdv_dt")]
    pub kdv_dt: f64,
    #[serde(default)]
    pub output_dir: Option<String>,
}

impl StudyConfig {
    fn default_kdv_dt() -> f64 {
        1e-3
    }

    pub fn from_toml_str(text: &str) -> Result<Self, StudyError> {
        let cfg: StudyConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<(Self, String), StudyError> {
        let text = fs::read_to_string(path)?;
        let cfg = Self::from_toml_str(&text)?;
        Ok((cfg, config_hash(&text)))
    }

    pub fn filter_policy(&self) -> Result<FilterPolicy, StudyError> {
        match self.filter.as_str() {
            "off" => Ok(FilterPolicy::Off),
            "auto" => Ok(FilterPolicy::Auto),
            "on" => Ok(FilterPolicy::On),
            other => Err(StudyError::Config(format!(
                "filter must be off|auto|on, got {other:?}"
            ))),
        }
    }

    pub fn validate(&self) -> Result<(), StudyError> {
        if self.deltas.is_empty() {
            return Err(StudyError::Config("need at least one delta".into()));
        }
        for w in self.deltas.windows(2) {
            if w[1] >= w[0] {
                return Err(StudyError::Config(
                    "deltas must be strictly decreasing".into(),
                ));
            }
        }
        for &d in &self.deltas {
            if !(d > 0.0 && d < 1.0) {
                return Err(StudyError::Config(format!("delta {d} outside (0,1)")));
            }
        }
        if !(self.t_final > 0.0) {
            return Err(StudyError::Config("t_final must be positive".into()));
        }
        let mut prev = 0.0;
        for &t in &self.output_times {
            if t < prev || t > self.t_final + 1e-12 {
                return Err(StudyError::Config(
                    "output times must be ascending within (0, t_final]".into(),
                ));
            }
            prev = t;
        }
        match &self.initial {
            InitialSpec::Soliton { c, .. } => {
                if !(*c > 0.0 && *c <= 1.0) {
                    return Err(StudyError::Config(format!(
                        "soliton speed c = {c} outside (0, 1]"
                    )));
                }
            }
            InitialSpec::Sine { modes } => {
                let total: f64 = modes.iter().map(|(_, a)| a.abs()).sum();
                if total > 0.5 {
                    return Err(StudyError::Config(format!(
                        "sine packet total amplitude {total} exceeds 0.5 (smooth regime)"
                    )));
                }
            }
        }
        self.filter_policy()?;
        Ok(())
    }

    /// Resolutions to run: `resolutions` when given, else just the grid's n.
    pub fn resolution_list(&self) -> Vec<usize> {
        if self.resolutions.is_empty() {
            vec![self.grid.n]
        } else {
            self.resolutions.clone()
        }
    }

    pub fn build_initial(&self, grid: &SpatialGrid, a: SoundSpeed) -> Field1D {
        match &self.initial {
            InitialSpec::Soliton { c, x0 } => {
                let center = x0.unwrap_or(grid.length() / 2.0);
                soliton(grid, *c, center, a)
            }
            InitialSpec::Sine { modes } => {
                let l = grid.length();
                Field1D::from_fn(grid, |x| {
                    modes
                        .iter()
                        .map(|&(m, amp)| {
                            amp * (2.0 * std::f64::consts::PI * m as f64 * x / l).sin()
                        })
                        .sum()
                })
            }
        }
    }
}

pub fn config_hash(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    format!("{:x}", hasher.finalize())
}

// ---------------------------------------------------------------------------
// order fitting

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrderFit {
    pub slope: f64,
    pub pairwise: Vec<f64>,
}

/// Least-squares slope of `log error` against `log delta`, plus the
/// pairwise two-point estimates.
pub fn fit_order(errors: &[f64], deltas: &[f64]) -> Result<OrderFit, StudyError> {
    if errors.len() != deltas.len() || errors.len() < 3 {
        return Err(StudyError::BadFitData);
    }
    if errors.iter().any(|&e| !(e > 0.0)) || deltas.iter().any(|&d| !(d > 0.0)) {
        return Err(StudyError::BadFitData);
    }
    let xs: Vec<f64> = deltas.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let pairwise = xs
        .windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (y[1] - y[0]) / (x[1] - x[0]))
        .collect();
    Ok(OrderFit { slope, pairwise })
}

// ---------------------------------------------------------------------------
// convergence study

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldErrors {
    /// L2 error at each output time.
    pub l2: Vec<f64>,
    /// Sup-norm error at each output time.
    pub linf: Vec<f64>,
    pub sup_l2: f64,
    pub sup_linf: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaErrors {
    pub delta: f64,
    pub r: FieldErrors,
    pub u: FieldErrors,
    pub theta: FieldErrors,
    pub pi: FieldErrors,
    pub filter_active: bool,
    pub filter_r2_dissipated: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldOrders {
    pub l2: OrderFit,
    pub linf: OrderFit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolutionReport {
    pub n: usize,
    pub per_delta: Vec<DeltaErrors>,
    pub orders: Option<ResolutionOrders>,
    pub trivially_converged: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolutionOrders {
    pub r: FieldOrders,
    pub u: FieldOrders,
    pub theta: FieldOrders,
    pub pi: FieldOrders,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub package_version: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub schema_version: u32,
    pub provenance: Provenance,
    pub resolutions: Vec<ResolutionReport>,
    /// Largest change of any fitted order between consecutive resolutions.
    pub max_order_drift: Option<f64>,
    pub pass: bool,
}

/// KdV-side reference data at the output times.
pub struct ReferenceStates {
    pub times: Vec<f64>,
    pub profiles: Vec<ExpansionProfile>,
}

/// Solve the hierarchy from the configured initial data and return the
/// expansion profiles at `t = 0` and each output time.
pub fn run_kdv_trajectory(config: &StudyConfig) -> Result<ReferenceStates, StudyError> {
    config.validate()?;
    let a = find_sound_speed()?;
    let grid = SpatialGrid::new(config.grid.n, config.grid.length)?;
    let initial = config.build_initial(&grid, a);
    reference_states(&initial, &grid, a, &config.output_times, config.kdv_dt)
}

fn reference_states(
    initial: &Field1D,
    grid: &SpatialGrid,
    a: SoundSpeed,
    output_times: &[f64],
    dt: f64,
) -> Result<ReferenceStates, StudyError> {
    let mut times = vec![0.0];
    times.extend_from_slice(output_times);
    let zero = Field1D::zeros(grid.n());
    let mut profiles = vec![ExpansionProfile::build(initial, &zero, grid, a)?];
    let mut rho1 = initial.clone();
    let mut rho2 = zero.clone();
    let mut t_cur = 0.0;
    for &t_out in output_times {
        let span = t_out - t_cur;
        if span > 1e-14 {
            let steps = (span / dt).ceil().max(1.0);
            let traj = solve_hierarchy(&rho1, &rho2, grid, a, span, span / steps)?;
            let end = traj.final_state();
            rho1 = end.rho1.clone();
            rho2 = end.rho2.clone().expect("hierarchy solve fills rho2");
            t_cur = t_out;
        }
        profiles.push(ExpansionProfile::build(&rho1, &rho2, grid, a)?);
    }
    Ok(ReferenceStates { times, profiles })
}

fn expansion_target(
    profile: &ExpansionProfile,
    delta: f64,
    second_order: bool,
) -> (Field1D, Field1D, Field1D, Field1D) {
    let d2 = if second_order { delta * delta } else { 0.0 };
    let r = profile
        .rho1
        .zip_with(&profile.rho2, |r1, r2| 1.0 + delta * r1 + d2 * r2);
    let u = profile.u1_1.axpy(delta, &profile.u1_2, d2);
    let theta = profile
        .theta1
        .zip_with(&profile.theta2, |t1, t2| 1.5 * (1.0 + delta * t1 + d2 * t2));
    let pi = profile.phi1.axpy(delta, &profile.phi2, d2);
    (r, u, theta, pi)
}

fn run_single_delta(
    config: &StudyConfig,
    grid: &SpatialGrid,
    a: SoundSpeed,
    refs: &ReferenceStates,
    delta: f64,
) -> Result<DeltaErrors, StudyError> {
    // dt is governed by the CFL clamp inside ep_solve
    let params = EPParams::new(delta, a, config.tolerances.poisson, 1.0)?;
    let (r0, u0, theta0, pi_target0) =
        expansion_target(&refs.profiles[0], delta, config.second_order);
    let pi0 = solve_poisson(&r0, &params, &pi_target0, grid)?;
    let initial = FluidState {
        r: r0,
        u: u0,
        theta: theta0,
        pi: pi0,
        time: 0.0,
    };
    let traj = ep_solve(
        &initial,
        &params,
        grid,
        config.t_final,
        &refs.times[1..],
        config.filter_policy()?,
    )?;

    let mut errs = DeltaErrors {
        delta,
        r: FieldErrors {
            l2: vec![],
            linf: vec![],
            sup_l2: 0.0,
            sup_linf: 0.0,
        },
        u: FieldErrors {
            l2: vec![],
            linf: vec![],
            sup_l2: 0.0,
            sup_linf: 0.0,
        },
        theta: FieldErrors {
            l2: vec![],
            linf: vec![],
            sup_l2: 0.0,
            sup_linf: 0.0,
        },
        pi: FieldErrors {
            l2: vec![],
            linf: vec![],
            sup_l2: 0.0,
            sup_linf: 0.0,
        },
        filter_active: traj.filter.active,
        filter_r2_dissipated: traj.filter.r2_dissipated,
    };

    for (state, profile) in traj.states.iter().zip(&refs.profiles[1..]) {
        let (rt, ut, th_t, pi_t) = expansion_target(profile, delta, config.second_order);
        for (field, target, acc) in [
            (&state.r, &rt, &mut errs.r),
            (&state.u, &ut, &mut errs.u),
            (&state.theta, &th_t, &mut errs.theta),
            (&state.pi, &pi_t, &mut errs.pi),
        ] {
            let (l2, linf) = field_norms(&field.sub(target), grid)?;
            acc.l2.push(l2);
            acc.linf.push(linf);
            acc.sup_l2 = acc.sup_l2.max(l2);
            acc.sup_linf = acc.sup_linf.max(linf);
        }
    }
    Ok(errs)
}

pub fn run_convergence_study(
    config: &StudyConfig,
    config_sha256: &str,
) -> Result<ConvergenceReport, StudyError> {
    config.validate()?;
    let a = find_sound_speed()?;
    let mut resolutions = Vec::new();

    for n in config.resolution_list() {
        let grid = SpatialGrid::new(n, config.grid.length)?;
        let initial = config.build_initial(&grid, a);
        let refs = reference_states(&initial, &grid, a, &config.output_times, config.kdv_dt)?;

        let per_delta: Result<Vec<DeltaErrors>, StudyError> = config
            .deltas
            .par_iter()
            .map(|&delta| run_single_delta(config, &grid, a, &refs, delta))
            .collect();
        let per_delta = per_delta?;

        let trivial = per_delta.iter().all(|d| {
            d.r.sup_l2 < 1e-13 && d.u.sup_l2 < 1e-13 && d.theta.sup_l2 < 1e-13 && d.pi.sup_l2 < 1e-13
        });

        let (orders, pass) = if trivial || config.deltas.len() < 3 {
            (None, trivial)
        } else {
            let fit_field = |get: &dyn Fn(&DeltaErrors) -> (f64, f64)| -> Result<FieldOrders, StudyError> {
                let l2: Vec<f64> = per_delta.iter().map(|d| get(d).0).collect();
                let linf: Vec<f64> = per_delta.iter().map(|d| get(d).1).collect();
                Ok(FieldOrders {
                    l2: fit_order(&l2, &config.deltas)?,
                    linf: fit_order(&linf, &config.deltas)?,
                })
            };
            let orders = ResolutionOrders {
                r: fit_field(&|d| (d.r.sup_l2, d.r.sup_linf))?,
                u: fit_field(&|d| (d.u.sup_l2, d.u.sup_linf))?,
                theta: fit_field(&|d| (d.theta.sup_l2, d.theta.sup_linf))?,
                pi: fit_field(&|d| (d.pi.sup_l2, d.pi.sup_linf))?,
            };
            let lo = config.tolerances.order_low;
            let hi = config.tolerances.order_high;
            let in_range = |f: &FieldOrders| {
                (lo..=hi).contains(&f.l2.slope) && (lo..=hi).contains(&f.linf.slope)
            };
            let pass = in_range(&orders.r)
                && in_range(&orders.u)
                && in_range(&orders.theta)
                && in_range(&orders.pi);
            (Some(orders), pass)
        };

        resolutions.push(ResolutionReport {
            n,
            per_delta,
            orders,
            trivially_converged: trivial,
            pass,
        });
    }

    let max_order_drift = if resolutions.len() >= 2 {
        let mut drift = 0.0_f64;
        for w in resolutions.windows(2) {
            if let (Some(a), Some(b)) = (&w[0].orders, &w[1].orders) {
                for (fa, fb) in [
                    (&a.r, &b.r),
                    (&a.u, &b.u),
                    (&a.theta, &b.theta),
                    (&a.pi, &b.pi),
                ] {
                    drift = drift.max((fa.l2.slope - fb.l2.slope).abs());
                    drift = drift.max((fa.linf.slope - fb.linf.slope).abs());
                }
            }
        }
        Some(drift)
    } else {
        None
    };

    let pass = resolutions.iter().all(|r| r.pass);
    Ok(ConvergenceReport {
        schema_version: REPORT_SCHEMA_VERSION,
        provenance: Provenance {
            config_sha256: config_sha256.to_string(),
            package_version: env!("CARGO_PKG_VERSION").to_string(),
        },
        resolutions,
        max_order_drift,
        pass,
    })
}

// ---------------------------------------------------------------------------
// expansion (remainder) check

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaylorCheck {
    pub delta: f64,
    pub value: f64,
    pub expect: f64,
    pub rel_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpansionReport {
    pub schema_version: u32,
    pub table: RemainderTable,
    /// Sup norms of the four background-equation defects per delta.
    pub background_residuals: Vec<(f64, [f64; 4])>,
    pub background_pass: bool,
    pub taylor: TaylorCheck,
    pub pass: bool,
}

pub fn run_expansion_check(config: &StudyConfig) -> Result<ExpansionReport, StudyError> {
    config.validate()?;
    let a = find_sound_speed()?;
    let grid = SpatialGrid::new(config.grid.n, config.grid.length)?;
    let rho1 = config.build_initial(&grid, a);
    let rho2 = Field1D::zeros(grid.n());
    let profile = ExpansionProfile::build(&rho1, &rho2, &grid, a)?;
    let rates: ProfileRates = profile_rates(&profile, &grid, a)?;

    let mut sweep = Vec::new();
    let mut bg = Vec::new();
    for &delta in &config.deltas {
        let rem = compute_remainders(&profile, &rates, delta, &grid, a)?;
        sweep.push((delta, rem));
        bg.push((delta, background_residuals(&profile, &rates, delta, &grid, a)?));
    }
    let table = remainder_bound_check(&sweep, 2, &grid)?;
    let background_pass = bg.iter().all(|(_, r)| r.iter().all(|&v| v < 1e-8));

    // compensated exponential tail against its analytic small-amplitude limit
    let c = 0.7_f64;
    let delta_t = 1e-3;
    let value = exp_taylor_tail(delta_t * c) / (delta_t * delta_t * delta_t);
    let expect = -c * c * c / 6.0;
    let rel_err = (value - expect).abs() / expect.abs();
    let taylor = TaylorCheck {
        delta: delta_t,
        value,
        expect,
        rel_err,
        pass: rel_err < 1e-2,
    };

    let pass = table.pass && background_pass && taylor.pass;
    Ok(ExpansionReport {
        schema_version: REPORT_SCHEMA_VERSION,
        table,
        background_residuals: bg,
        background_pass,
        taylor,
        pass,
    })
}

// ---------------------------------------------------------------------------
// kinetic identity suite

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckLine {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KineticReport {
    pub schema_version: u32,
    pub checks: Vec<CheckLine>,
    pub pass: bool,
}

pub fn run_kinetic_check(
    spec: &KineticSpec,
    delta: f64,
    strict_window: bool,
) -> Result<KineticReport, StudyError> {
    let vgrid = VelocityGrid::uniform(spec.m, spec.vmax)?;
    let mut checks = Vec::new();
    let mut push = |name: &str, value: f64, threshold: f64| {
        checks.push(CheckLine {
            name: name.to_string(),
            value,
            threshold,
            pass: value <= threshold,
        });
    };

    for (label, params) in [
        ("global", MaxwellianParams::new(1.0, [0.0; 3], 1.5)?),
        (
            "shifted",
            MaxwellianParams::new(1.3, [0.2, -0.1, 0.0], 1.7)?,
        ),
    ] {
        let basis = chi_basis(&params, &vgrid);
        let gram = gram_matrix(&basis, &vgrid);
        let mut worst = 0.0_f64;
        for (i, row) in gram.iter().enumerate() {
            for (j, &val) in row.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((val - expect).abs());
            }
        }
        push(&format!("gram_identity_{label}"), worst, 1e-8);

        let m = maxwellian(&params, &vgrid);
        let h = DistributionSlice::from_fn(&vgrid, |v| {
            let r2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
            (0.4 + 0.7 * v[0] - 0.2 * v[1] * v[2] + 0.05 * r2) * (-r2 / 2.5).exp()
        });
        let scale = h.max_abs();
        let p0 = project_p0(&h, &basis, &vgrid);
        let p0p0 = project_p0(&p0, &basis, &vgrid);
        push(
            &format!("p0_idempotent_{label}"),
            p0p0.sub(&p0).max_abs() / scale,
            1e-10,
        );
        let p1 = project_p1(&h, &basis, &vgrid);
        let mom = moments(&p1, &vgrid)?;
        let micro = mom.rho.abs().max(
            mom.momentum
                .iter()
                .fold(0.0_f64, |m, v| m.max(v.abs()))
                .max(mom.energy_density.abs()),
        ) / scale;
        push(&format!("p1_microscopic_{label}"), micro, 1e-10);
        let p0m = project_p0(&m, &basis, &vgrid);
        push(
            &format!("p0_reproduces_maxwellian_{label}"),
            p0m.sub(&m).max_abs() / m.max_abs(),
            1e-10,
        );
    }

    for j in 1..=3 {
        let (eb, ea) =
            p1_identity_check(&MaxwellianParams::new(1.0, [0.0; 3], 1.5)?, &vgrid, j)?;
        push(&format!("burnett_b_identity_j{j}"), eb, 1e-7);
        push(&format!("burnett_a_identity_j{j}"), ea, 1e-7);
    }

    // weight time-derivative identity against centered differences
    let wp = crate::landau::WeightParams::new(spec.l, spec.q1, spec.q2)?;
    let mut weight_err = 0.0_f64;
    for (alpha, beta, t, v) in [
        (0usize, [0usize, 0, 0], 0.3, [0.6, -1.0, 2.1]),
        (1, [1, 0, 0], 1.5, [2.0, 0.8, -0.3]),
    ] {
        let analytic = crate::landau::weight_w2_time_derivative(alpha, beta, t, v, &wp)?;
        let h = 1e-5;
        let wplus = crate::landau::weight_w(alpha, beta, t + h, v, &wp)?;
        let wminus = crate::landau::weight_w(alpha, beta, t - h, v, &wp)?;
        let fd = (wplus * wplus - wminus * wminus) / (2.0 * h);
        weight_err = weight_err.max((analytic - fd).abs() / fd.abs());
    }
    push("weight_derivative_identity", weight_err, 1e-6);

    if strict_window && !window_check(delta, spec.epsilon, spec.c_tilde) {
        checks.push(CheckLine {
            name: "amplitude_window".into(),
            value: delta,
            threshold: spec.epsilon.powf(2.0 / 5.0) / spec.c_tilde,
            pass: false,
        });
    }

    let pass = checks.iter().all(|c| c.pass);
    Ok(KineticReport {
        schema_version: REPORT_SCHEMA_VERSION,
        checks,
        pass,
    })
}

// ---------------------------------------------------------------------------
// serialization helpers

/// Write `t,x,value` rows for a sequence of snapshots; floats carry 17
/// significant digits.
pub fn write_trajectory_csv(
    path: &Path,
    times: &[f64],
    fields: &[Field1D],
    grid: &SpatialGrid,
) -> Result<(), StudyError> {
    let mut out = String::from("t,x,value\n");
    for (t, f) in times.iter().zip(fields) {
        for (x, v) in grid.nodes().iter().zip(f.values()) {
            out.push_str(&format!("{t:.16e},{x:.16e},{v:.16e}\n"));
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), StudyError> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text)?;
    Ok(())
}

/// Dump the native rows of the collision-frequency table.
pub fn write_sigma_csv(path: &Path, rows: &[(f64, f64, f64)]) -> Result<(), StudyError> {
    let mut out = String::from("v_abs,lambda_parallel,lambda_perp\n");
    for (s, par, perp) in rows {
        out.push_str(&format!("{s:.16e},{par:.16e},{perp:.16e}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

/// One field of the fluid trajectory as `t,x,value` CSV.
pub fn write_fluid_csv(
    path: &Path,
    times: &[f64],
    states: &[crate::euler_poisson::FluidState],
    pick: impl Fn(&crate::euler_poisson::FluidState) -> &Field1D,
    grid: &SpatialGrid,
) -> Result<(), StudyError> {
    let fields: Vec<Field1D> = states.iter().map(|s| pick(s).clone()).collect();
    write_trajectory_csv(path, times, &fields, grid)
}

impl From<serde_json::Error> for StudyError {
    fn from(e: serde_json::Error) -> Self {
        StudyError::Config(format!("json serialization: {e}"))
    }
}
