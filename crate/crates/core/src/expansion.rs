//! Background profiles and remainder audits.
//!
//! The expansion fields combine into slowly varying background profiles;
//! substituting those into the fluid system leaves remainder terms of a
//! known order in the amplitude. This module builds the backgrounds,
//! assembles the four remainders term by term, verifies the background
//! equations as algebraic identities, and checks that the remainder norms
//! stay bounded uniformly across an amplitude sweep.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{
    dealiased_product, field_norms, spectral_derivative, Field1D, GridError, SpatialGrid,
};
use crate::kdv::{
    kdv2_rhs, kdv_rhs, source_h11_dot, ExpansionProfile, KdvError, SoundSpeed,
};

#[derive(Debug, Error)]
pub enum ExpansionError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Kdv(#[from] KdvError),
    #[error("background density not positive (min = {0}); amplitude too large")]
    NonPositiveBackground(f64),
    #[error("delta = {0} outside (0, 0.5]")]
    BadDelta(f64),
}

/// Slowly varying background `(rho_bar, u_bar, theta_bar, phi_bar)`.
#[derive(Debug, Clone)]
pub struct BackgroundProfile {
    pub rho_bar: Field1D,
    pub u_bar: Field1D,
    pub theta_bar: Field1D,
    pub phi_bar: Field1D,
    pub delta: f64,
}

/// Pointwise combination of the expansion orders:
/// `rho_bar = 1 + d rho1 + d^2 rho2`, `u_bar = d u1 + d^2 u2`,
/// `theta_bar = 3/2 (1 + d theta1 + d^2 theta2)`, `phi_bar = d phi1 + d^2 phi2`.
pub fn build_background(
    profile: &ExpansionProfile,
    delta: f64,
) -> Result<BackgroundProfile, ExpansionError> {
    if !(delta > 0.0 && delta <= 0.5) {
        return Err(ExpansionError::BadDelta(delta));
    }
    let d2 = delta * delta;
    let rho_bar = profile
        .rho1
        .zip_with(&profile.rho2, |r1, r2| 1.0 + delta * r1 + d2 * r2);
    let u_bar = profile.u1_1.axpy(delta, &profile.u1_2, d2);
    let theta_bar = profile
        .theta1
        .zip_with(&profile.theta2, |t1, t2| 1.5 * (1.0 + delta * t1 + d2 * t2));
    let phi_bar = profile.phi1.axpy(delta, &profile.phi2, d2);
    let rmin = rho_bar
        .values()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if !(rmin > 0.0) {
        return Err(ExpansionError::NonPositiveBackground(rmin));
    }
    Ok(BackgroundProfile {
        rho_bar,
        u_bar,
        theta_bar,
        phi_bar,
        delta,
    })
}

/// Time derivatives of every expansion field, taken through the flow
/// equations and the order relations — never by differencing snapshots.
#[derive(Debug, Clone)]
pub struct ProfileRates {
    pub rho1_t: Field1D,
    pub rho2_t: Field1D,
    pub u1_t: Field1D,
    pub u2_t: Field1D,
    pub theta1_t: Field1D,
    pub theta2_t: Field1D,
    pub phi1_t: Field1D,
    pub phi2_t: Field1D,
}

pub fn profile_rates(
    profile: &ExpansionProfile,
    grid: &SpatialGrid,
    a: SoundSpeed,
) -> Result<ProfileRates, ExpansionError> {
    let rho1_t = kdv_rhs(&profile.rho1, grid, a)?;
    let rho2_t = kdv2_rhs(&profile.rho1, &profile.rho2, grid, a)?;
    let u1_t = rho1_t.scale(a.value());
    let h11_dot = source_h11_dot(&profile.rho1, grid, a)?;
    let u2_t = rho2_t.scale(a.value()).add(&h11_dot);
    let theta1_t = rho1_t.scale(2.0 / 3.0);
    let cross = dealiased_product(&profile.rho1, &rho1_t, grid)?;
    let theta2_t = rho2_t.axpy(2.0 / 3.0, &cross, -2.0 / 9.0);
    let phi1_t = rho1_t.clone();
    let rho1_t_xx = spectral_derivative(&rho1_t, grid, 2)?;
    let phi2_t = rho2_t.add(&rho1_t_xx).sub(&cross);
    Ok(ProfileRates {
        rho1_t,
        rho2_t,
        u1_t,
        u2_t,
        theta1_t,
        theta2_t,
        phi1_t,
        phi2_t,
    })
}

/// The four remainder fields left by the background substitution.
#[derive(Debug, Clone)]
pub struct RemainderSet {
    pub r1: Field1D,
    pub r2: Field1D,
    pub r3: Field1D,
    pub r4: Field1D,
}

/// Stable evaluation of `1 + z + z^2/2 - e^z`.
///
/// Direct subtraction loses every digit when the result is later divided
/// by the cube of a small amplitude, so the tail series is summed
/// explicitly for small arguments.
pub fn exp_taylor_tail(z: f64) -> f64 {
    if z.abs() < 0.1 {
        let mut term = z * z * z / 6.0;
        let mut sum = term;
        let mut n = 4.0;
        while term.abs() > 1e-300 {
            term *= z / n;
            sum += term;
            n += 1.0;
            if term.abs() <= f64::EPSILON * sum.abs() || n > 40.0 {
                break;
            }
        }
        -sum
    } else {
        1.0 + z + 0.5 * z * z - z.exp()
    }
}

/// Assemble the four remainder displays term by term.
pub fn compute_remainders(
    profile: &ExpansionProfile,
    rates: &ProfileRates,
    delta: f64,
    grid: &SpatialGrid,
    a: SoundSpeed,
) -> Result<RemainderSet, ExpansionError> {
    let av = a.value();
    let d1 = |f: &Field1D| spectral_derivative(f, grid, 1);
    let prod = |f: &Field1D, g: &Field1D| dealiased_product(f, g, grid);
    let p = profile;

    let u1_x = d1(&p.u1_1)?;
    let u2_x = d1(&p.u1_2)?;
    let th1_x = d1(&p.theta1)?;
    let th2_x = d1(&p.theta2)?;
    let phi1_x = d1(&p.phi1)?;
    let phi2_x = d1(&p.phi2)?;

    // R1
    let r1 = rates
        .rho2_t
        .add(&d1(&prod(&p.rho1, &p.u1_2)?)?)
        .add(&d1(&prod(&p.rho2, &p.u1_1)?)?)
        .add(&d1(&prod(&p.rho2, &p.u1_2)?)?.scale(delta));

    // R2, by delta block
    let u1u2 = prod(&p.u1_1, &p.u1_2)?;
    let u1u2_x = d1(&u1u2)?;
    let r2_0 = prod(&p.rho1, &rates.u1_t)?
        .add(&rates.u2_t)
        .sub(&prod(&p.rho2, &u1_x)?.scale(av))
        .sub(&prod(&p.rho1, &u2_x)?.scale(av))
        .add(&u1u2_x)
        .add(&prod(&prod(&p.rho1, &p.u1_1)?, &u1_x)?)
        .add(&d1(&prod(&p.rho1, &p.theta2)?)?)
        .add(&d1(&prod(&p.rho2, &p.theta1)?)?)
        .add(&prod(&p.rho1, &phi2_x)?)
        .add(&prod(&p.rho2, &phi1_x)?);
    let r2_1 = prod(&p.rho2, &rates.u1_t)?
        .add(&prod(&p.rho1, &rates.u2_t)?)
        .sub(&prod(&p.rho2, &u2_x)?.scale(av))
        .add(&prod(&p.u1_2, &u2_x)?)
        .add(&prod(&p.rho1, &u1u2_x)?)
        .add(&prod(&prod(&p.rho2, &p.u1_1)?, &u1_x)?)
        .add(&d1(&prod(&p.rho2, &p.theta2)?)?)
        .add(&prod(&p.rho2, &phi2_x)?);
    let r2_2 = prod(&p.rho2, &rates.u2_t)?
        .add(&prod(&prod(&p.rho1, &p.u1_2)?, &u2_x)?)
        .add(&prod(&p.rho2, &u1u2_x)?);
    let r2_3 = prod(&prod(&p.rho2, &p.u1_2)?, &u2_x)?;
    let r2 = r2_0
        .axpy(1.0, &r2_1, delta)
        .axpy(1.0, &r2_2, delta * delta)
        .axpy(1.0, &r2_3, delta * delta * delta);

    // R3; the leading time derivative carries the 3/2 of the temperature
    // normalization so the background identity closes exactly
    let r3_0 = rates
        .theta2_t
        .scale(1.5)
        .add(&prod(&p.theta1, &u2_x)?)
        .add(&prod(&p.theta2, &u1_x)?)
        .add(&prod(&p.u1_1, &th2_x)?.scale(1.5))
        .add(&prod(&p.u1_2, &th1_x)?.scale(1.5));
    let r3_1 = prod(&p.theta2, &u2_x)?.add(&prod(&p.u1_2, &th2_x)?.scale(1.5));
    let r3 = r3_0.axpy(1.0, &r3_1, delta);

    // R4, with the exponential tail evaluated stably
    let phi2_xx = spectral_derivative(&p.phi2, grid, 2)?;
    let phi1phi2 = prod(&p.phi1, &p.phi2)?;
    let phi2_sq = prod(&p.phi2, &p.phi2)?;
    let d3 = delta * delta * delta;
    let tail = p.phi1.zip_with(&p.phi2, |f1, f2| {
        exp_taylor_tail(delta * f1 + delta * delta * f2) / d3
    });
    let r4 = phi2_xx
        .sub(&phi1phi2)
        .axpy(1.0, &phi2_sq, -0.5 * delta)
        .add(&tail);

    Ok(RemainderSet { r1, r2, r3, r4 })
}

/// Sup norms of the four background-equation defects
/// `LHS - delta^power * remainder`; these are algebraic identities given the
/// cascade, so anything above spectral round-off flags a transcription bug.
pub fn background_residuals(
    profile: &ExpansionProfile,
    rates: &ProfileRates,
    delta: f64,
    grid: &SpatialGrid,
    a: SoundSpeed,
) -> Result<[f64; 4], ExpansionError> {
    let bg = build_background(profile, delta)?;
    let rem = compute_remainders(profile, rates, delta, grid, a)?;
    let av = a.value();
    let inv_d = 1.0 / delta;
    let d2 = delta * delta;
    let d1 = |f: &Field1D| spectral_derivative(f, grid, 1);
    let prod = |f: &Field1D, g: &Field1D| dealiased_product(f, g, grid);

    let rho_bar_t = rates.rho1_t.axpy(delta, &rates.rho2_t, d2);
    let u_bar_t = rates.u1_t.axpy(delta, &rates.u2_t, d2);
    let theta_bar_t = rates
        .theta1_t
        .axpy(1.5 * delta, &rates.theta2_t, 1.5 * d2);
    let phi_bar = &bg.phi_bar;

    // density line
    let e1 = rho_bar_t
        .axpy(1.0, &d1(&bg.rho_bar)?, -av * inv_d)
        .add(&d1(&prod(&bg.rho_bar, &bg.u_bar)?)?.scale(inv_d))
        .axpy(1.0, &rem.r1, -d2);

    // momentum line
    let u_bar_x = d1(&bg.u_bar)?;
    let e2 = prod(&bg.rho_bar, &u_bar_t)?
        .sub(&prod(&bg.rho_bar, &u_bar_x)?.scale(av * inv_d))
        .add(&prod(&prod(&bg.rho_bar, &bg.u_bar)?, &u_bar_x)?.scale(inv_d))
        .add(&d1(&prod(&bg.rho_bar, &bg.theta_bar)?)?.scale(2.0 / 3.0 * inv_d))
        .add(&prod(&bg.rho_bar, &d1(phi_bar)?)?.scale(inv_d))
        .axpy(1.0, &rem.r2, -d2);

    // temperature line
    let theta_bar_x = d1(&bg.theta_bar)?;
    let e3 = theta_bar_t
        .axpy(1.0, &theta_bar_x, -av * inv_d)
        .add(&prod(&bg.theta_bar, &u_bar_x)?.scale(2.0 / 3.0 * inv_d))
        .add(&prod(&bg.u_bar, &theta_bar_x)?.scale(inv_d))
        .axpy(1.0, &rem.r3, -d2);

    // Poisson line: -delta d_x^2 phi_bar - rho_bar + e^{phi_bar} + delta^3 R4
    let phi_bar_xx = spectral_derivative(phi_bar, grid, 2)?;
    let e4 = Field1D::new(
        (0..grid.n())
            .map(|i| {
                -delta * phi_bar_xx.values()[i] - bg.rho_bar.values()[i]
                    + phi_bar.values()[i].exp()
                    + delta * d2 * rem.r4.values()[i]
            })
            .collect(),
    );

    Ok([e1.max_abs(), e2.max_abs(), e3.max_abs(), e4.max_abs()])
}

/// One row of the sweep table: H^k norms of the four remainders.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemainderRecord {
    pub delta: f64,
    pub k: usize,
    pub norms: [f64; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemainderTable {
    pub records: Vec<RemainderRecord>,
    pub pass: bool,
}

/// Sobolev norm `(sum_{j<=k} ||d_x^j f||^2)^{1/2}`.
pub fn h_norm(f: &Field1D, grid: &SpatialGrid, k: usize) -> Result<f64, ExpansionError> {
    let mut total = 0.0;
    let (l2, _) = field_norms(f, grid)?;
    total += l2 * l2;
    let mut current = f.clone();
    for _ in 0..k {
        current = spectral_derivative(&current, grid, 1)?;
        let (l2, _) = field_norms(&current, grid)?;
        total += l2 * l2;
    }
    Ok(total.sqrt())
}

/// Flag PASS when, for every remainder component, the largest H^k norm in
/// the sweep is within 3x of the smallest (uniform boundedness in delta).
pub fn remainder_bound_check(
    sweep: &[(f64, RemainderSet)],
    k: usize,
    grid: &SpatialGrid,
) -> Result<RemainderTable, ExpansionError> {
    assert!(k <= 2, "remainder audit only tracks spatial norms up to H^2");
    let mut records = Vec::with_capacity(sweep.len());
    for (delta, rem) in sweep {
        records.push(RemainderRecord {
            delta: *delta,
            k,
            norms: [
                h_norm(&rem.r1, grid, k)?,
                h_norm(&rem.r2, grid, k)?,
                h_norm(&rem.r3, grid, k)?,
                h_norm(&rem.r4, grid, k)?,
            ],
        });
    }
    let mut pass = true;
    for comp in 0..4 {
        let max = records.iter().map(|r| r.norms[comp]).fold(0.0, f64::max);
        let min = records
            .iter()
            .map(|r| r.norms[comp])
            .fold(f64::INFINITY, f64::min);
        if max > 0.0 && max > 3.0 * min {
            pass = false;
        }
    }
    Ok(RemainderTable { records, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Field1D;
    use crate::kdv::{find_sound_speed, soliton, ExpansionProfile};

    fn grid(n: usize, length: f64) -> SpatialGrid {
        SpatialGrid::new(n, length).unwrap()
    }

    fn zero_profile(n: usize) -> ExpansionProfile {
        let z = Field1D::zeros(n);
        ExpansionProfile {
            rho1: z.clone(),
            u1_1: z.clone(),
            theta1: z.clone(),
            phi1: z.clone(),
            rho2: z.clone(),
            u1_2: z.clone(),
            theta2: z.clone(),
            phi2: z,
        }
    }

    fn zero_rates(n: usize) -> ProfileRates {
        let z = Field1D::zeros(n);
        ProfileRates {
            rho1_t: z.clone(),
            rho2_t: z.clone(),
            u1_t: z.clone(),
            u2_t: z.clone(),
            theta1_t: z.clone(),
            theta2_t: z.clone(),
            phi1_t: z.clone(),
            phi2_t: z,
        }
    }

    #[test]
    fn background_of_zero_profile_is_equilibrium() {
        let profile = zero_profile(64);
        let bg = build_background(&profile, 0.1).unwrap();
        assert!(bg.rho_bar.map(|v| v - 1.0).max_abs() == 0.0);
        assert!(bg.u_bar.max_abs() == 0.0);
        assert!(bg.theta_bar.map(|v| v - 1.5).max_abs() == 0.0);
        assert!(bg.phi_bar.max_abs() == 0.0);
    }

    #[test]
    fn background_constant_example() {
        let g = grid(64, 10.0);
        let a = find_sound_speed().unwrap();
        let rho1 = Field1D::constant(64, 0.1);
        let rho2 = Field1D::zeros(64);
        let profile = ExpansionProfile::build(&rho1, &rho2, &g, a).unwrap();
        let bg = build_background(&profile, 0.1).unwrap();
        assert!((bg.rho_bar.values()[0] - 1.01).abs() < 1e-14);
        // theta_bar = 3/2 (1 + d theta1 + d^2 theta2)
        let th2 = -0.01 / 9.0;
        let expect = 1.5 * (1.0 + 0.1 * (2.0 / 3.0 * 0.1) + 0.01 * th2);
        assert!((bg.theta_bar.values()[0] - expect).abs() < 1e-13);
    }

    #[test]
    fn background_is_linear_in_the_orders() {
        let g = grid(64, 12.0);
        let a = find_sound_speed().unwrap();
        let rho1 = Field1D::from_fn(&g, |x| 0.2 * (2.0 * std::f64::consts::PI * x / 12.0).sin());
        let rho2 = Field1D::from_fn(&g, |x| 0.1 * (4.0 * std::f64::consts::PI * x / 12.0).cos());
        let profile = ExpansionProfile::build(&rho1, &rho2, &g, a).unwrap();
        let delta = 0.2;
        let bg = build_background(&profile, delta).unwrap();
        let diff = bg.rho_bar.values()[7]
            - (1.0 + delta * profile.rho1.values()[7] + delta * delta * profile.rho2.values()[7]);
        assert!(diff.abs() < 1e-15);
    }

    #[test]
    fn background_rejects_large_amplitude() {
        let profile = {
            let mut p = zero_profile(32);
            p.rho1 = Field1D::constant(32, -3.0);
            p
        };
        assert!(matches!(
            build_background(&profile, 0.5),
            Err(ExpansionError::NonPositiveBackground(_))
        ));
        assert!(matches!(
            build_background(&zero_profile(32), 0.7),
            Err(ExpansionError::BadDelta(_))
        ));
    }

    #[test]
    fn remainders_vanish_for_zero_profile() {
        let g = grid(64, 10.0);
        let a = find_sound_speed().unwrap();
        let rem = compute_remainders(&zero_profile(64), &zero_rates(64), 0.1, &g, a).unwrap();
        assert!(rem.r1.max_abs() == 0.0);
        assert!(rem.r2.max_abs() == 0.0);
        assert!(rem.r3.max_abs() == 0.0);
        assert!(rem.r4.max_abs() == 0.0);
    }

    #[test]
    fn r4_taylor_limit() {
        // phi1 = c constant, phi2 = 0: R4 -> -c^3/6 as delta -> 0
        let g = grid(32, 10.0);
        let a = find_sound_speed().unwrap();
        let c = 0.7;
        let mut profile = zero_profile(32);
        profile.phi1 = Field1D::constant(32, c);
        let expect = -c * c * c / 6.0;
        for delta in [1e-2, 1e-3] {
            let rem = compute_remainders(&profile, &zero_rates(32), delta, &g, a).unwrap();
            let got = rem.r4.values()[0];
            assert!(
                (got - expect).abs() / expect.abs() < 1e-2,
                "delta={delta}: R4={got} vs {expect}"
            );
        }
    }

    #[test]
    fn exp_tail_matches_direct_evaluation_at_moderate_z() {
        for z in [0.5_f64, -0.5, 1.5, -2.0] {
            let direct = 1.0 + z + 0.5 * z * z - z.exp();
            assert!((exp_taylor_tail(z) - direct).abs() < 1e-14);
        }
        // and stays accurate where direct subtraction would not
        let z = 1e-5;
        let exact = -(z * z * z / 6.0) * (1.0 + z / 4.0 + z * z / 20.0);
        assert!((exp_taylor_tail(z) - exact).abs() / exact.abs() < 1e-12);
    }

    #[test]
    fn background_identities_close_for_soliton() {
        let g = grid(512, 40.0);
        let a = find_sound_speed().unwrap();
        let rho1 = soliton(&g, 0.5, 20.0, a);
        let rho2 = Field1D::zeros(512);
        let profile = ExpansionProfile::build(&rho1, &rho2, &g, a).unwrap();
        let rates = profile_rates(&profile, &g, a).unwrap();
        let res = background_residuals(&profile, &rates, 0.1, &g, a).unwrap();
        for (i, r) in res.iter().enumerate() {
            assert!(*r < 1e-8, "background equation {i} defect {r:e}");
        }
    }

    #[test]
    fn remainder_norms_are_delta_uniform_for_soliton() {
        let g = grid(256, 40.0);
        let a = find_sound_speed().unwrap();
        let rho1 = soliton(&g, 0.5, 20.0, a);
        let rho2 = Field1D::zeros(256);
        let profile = ExpansionProfile::build(&rho1, &rho2, &g, a).unwrap();
        let rates = profile_rates(&profile, &g, a).unwrap();
        let mut sweep = Vec::new();
        for delta in [0.2, 0.1, 0.05] {
            let rem = compute_remainders(&profile, &rates, delta, &g, a).unwrap();
            sweep.push((delta, rem));
        }
        let table = remainder_bound_check(&sweep, 2, &g).unwrap();
        assert!(table.pass, "table: {table:?}");
        // the sweep is mild: norms should vary by well under 20 percent
        for comp in 0..4 {
            let max = table.records.iter().map(|r| r.norms[comp]).fold(0.0, f64::max);
            let min = table
                .records
                .iter()
                .map(|r| r.norms[comp])
                .fold(f64::INFINITY, f64::min);
            assert!(max / min < 1.2, "component {comp} varies {max}/{min}");
        }
    }

    #[test]
    fn corrupted_remainder_fails_the_uniformity_check() {
        let g = grid(128, 40.0);
        let a = find_sound_speed().unwrap();
        let rho1 = soliton(&g, 0.5, 20.0, a);
        let rho2 = Field1D::zeros(128);
        let profile = ExpansionProfile::build(&rho1, &rho2, &g, a).unwrap();
        let rates = profile_rates(&profile, &g, a).unwrap();
        let mut sweep = Vec::new();
        for delta in [0.2, 0.1, 0.05] {
            let mut rem = compute_remainders(&profile, &rates, delta, &g, a).unwrap();
            rem.r4 = rem.r4.scale(1.0 / delta); // negative control
            sweep.push((delta, rem));
        }
        let table = remainder_bound_check(&sweep, 2, &g).unwrap();
        assert!(!table.pass);
    }

    #[test]
    fn zero_sweep_passes() {
        let g = grid(32, 10.0);
        let z = RemainderSet {
            r1: Field1D::zeros(32),
            r2: Field1D::zeros(32),
            r3: Field1D::zeros(32),
            r4: Field1D::zeros(32),
        };
        let table = remainder_bound_check(&[(0.1, z.clone()), (0.05, z)], 2, &g).unwrap();
        assert!(table.pass);
        assert!(table.records.iter().all(|r| r.norms.iter().all(|&n| n == 0.0)));
    }
}
