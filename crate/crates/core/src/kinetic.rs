//! Velocity-space toolkit: Maxwellians, moments, the orthogonal collision
//! invariant basis, macroscopic/microscopic projections, and the Burnett
//! polynomials with their projection identities.

use thiserror::Error;

/// Gas constant fixed at 2/3; the energy convention `E = (3/2) K theta =
//  theta` and the chi4 normalization both depend on this value.
pub const K_GAS: f64 = 2.0 / 3.0;

#[derive(Debug, Error)]
pub enum KineticError {
    #[error("velocity grid needs vmax >= 8 and at least 8 points per axis (got m={m}, vmax={vmax})")]
    BadGrid { m: usize, vmax: f64 },
    #[error("Maxwellian parameters must have rho > 0 and theta > 0 (rho={rho}, theta={theta})")]
    BadParams { rho: f64, theta: f64 },
    #[error("distribution has {got} samples but grid has {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("non-finite values in distribution")]
    NonFinite,
    #[error("moments are unphysical (rho = {0})")]
    UnphysicalMoments(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadratureKind {
    /// Uniform tensor grid with trapezoid weights; spectrally accurate for
    /// Gaussian-decay integrands and keeps pointwise products trivial.
    Uniform,
    /// Gauss-Hermite nodes with weights rescaled for plain dv integration.
    GaussHermite,
}

/// Tensor-product velocity grid on `[-vmax, vmax]^3`.
#[derive(Debug, Clone)]
pub struct VelocityGrid {
    m: usize,
    vmax: f64,
    axis: Vec<f64>,
    axis_weights: Vec<f64>,
    kind: QuadratureKind,
}

impl VelocityGrid {
    pub fn uniform(m: usize, vmax: f64) -> Result<Self, KineticError> {
        if m < 8 || !(vmax >= 8.0) {
            return Err(KineticError::BadGrid { m, vmax });
        }
        let h = 2.0 * vmax / (m - 1) as f64;
        let axis: Vec<f64> = (0..m).map(|i| -vmax + i as f64 * h).collect();
        let mut axis_weights = vec![h; m];
        axis_weights[0] = 0.5 * h;
        axis_weights[m - 1] = 0.5 * h;
        Ok(Self {
            m,
            vmax,
            axis,
            axis_weights,
            kind: QuadratureKind::Uniform,
        })
    }

    /// Gauss-Hermite nodes for weight `exp(-v^2)`, with the weight folded
    /// back in so that `sum w_i f(v_i) ~ int f dv`.
    pub fn gauss_hermite(m: usize) -> Result<Self, KineticError> {
        if m < 8 {
            return Err(KineticError::BadGrid { m, vmax: 0.0 });
        }
        let (nodes, weights) = hermite_nodes(m);
        let vmax = nodes.last().copied().unwrap_or(0.0);
        if !(vmax >= 8.0) {
            // too few nodes to cover the Maxwellian support
            return Err(KineticError::BadGrid { m, vmax });
        }
        let axis_weights = nodes
            .iter()
            .zip(&weights)
            .map(|(&x, &w)| w * (x * x).exp())
            .collect();
        Ok(Self {
            m,
            vmax,
            axis: nodes,
            axis_weights,
            kind: QuadratureKind::GaussHermite,
        })
    }

    pub fn kind(&self) -> QuadratureKind {
        self.kind
    }

    pub fn points_per_axis(&self) -> usize {
        self.m
    }

    pub fn vmax(&self) -> f64 {
        self.vmax
    }

    pub fn axis(&self) -> &[f64] {
        &self.axis
    }

    pub fn axis_weights(&self) -> &[f64] {
        &self.axis_weights
    }

    pub fn len(&self) -> usize {
        self.m * self.m * self.m
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn velocity(&self, idx: usize) -> [f64; 3] {
        let k = idx % self.m;
        let j = (idx / self.m) % self.m;
        let i = idx / (self.m * self.m);
        [self.axis[i], self.axis[j], self.axis[k]]
    }

    #[inline]
    pub fn weight(&self, idx: usize) -> f64 {
        let k = idx % self.m;
        let j = (idx / self.m) % self.m;
        let i = idx / (self.m * self.m);
        self.axis_weights[i] * self.axis_weights[j] * self.axis_weights[k]
    }
}

/// Orthonormal-Hermite root finder: sign-change scan plus bisection, with
/// weights from the Christoffel identity `w_i = 1 / sum_n p_n(x_i)^2`.
fn hermite_nodes(m: usize) -> (Vec<f64>, Vec<f64>) {
    let p = |x: f64, upto: usize| -> Vec<f64> {
        let mut vals = Vec::with_capacity(upto + 1);
        let mut p0 = std::f64::consts::PI.powf(-0.25);
        vals.push(p0);
        if upto == 0 {
            return vals;
        }
        let mut p1 = std::f64::consts::SQRT_2 * x * p0;
        vals.push(p1);
        for n in 1..upto {
            let next = x * (2.0 / (n as f64 + 1.0)).sqrt() * p1
                - (n as f64 / (n as f64 + 1.0)).sqrt() * p0;
            p0 = p1;
            p1 = next;
            vals.push(p1);
        }
        vals
    };
    let pm = |x: f64| *p(x, m).last().unwrap();

    let xmax = (2.0 * m as f64 + 1.0).sqrt() + 1.0;
    let scan = 40 * m;
    let mut roots = Vec::new();
    let mut prev_x = 0.0;
    let mut prev_f = pm(0.0);
    for i in 1..=scan {
        let x = xmax * i as f64 / scan as f64;
        let f = pm(x);
        if prev_f == 0.0 {
            roots.push(prev_x);
        } else if prev_f.signum() != f.signum() {
            let (mut lo, mut hi, mut flo) = (prev_x, x, prev_f);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                let fm = pm(mid);
                if fm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if fm.signum() == flo.signum() {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        prev_x = x;
        prev_f = f;
    }
    let mut nodes: Vec<f64> = Vec::with_capacity(m);
    if m % 2 == 1 {
        nodes.push(0.0);
    }
    for r in roots {
        nodes.push(r);
        nodes.push(-r);
    }
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    debug_assert_eq!(nodes.len(), m, "missed Hermite roots");
    let weights = nodes
        .iter()
        .map(|&x| 1.0 / p(x, m - 1).iter().map(|v| v * v).sum::<f64>())
        .collect();
    (nodes, weights)
}

/// Fluid parameters of a local Maxwellian; `K` is fixed at 2/3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxwellianParams {
    pub rho: f64,
    pub u: [f64; 3],
    pub theta: f64,
}

impl MaxwellianParams {
    pub fn new(rho: f64, u: [f64; 3], theta: f64) -> Result<Self, KineticError> {
        if !(rho > 0.0) || !(theta > 0.0) || !rho.is_finite() || !theta.is_finite() {
            return Err(KineticError::BadParams { rho, theta });
        }
        Ok(Self { rho, u, theta })
    }
}

/// A distribution sampled on a [`VelocityGrid`] at one spatial location.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionSlice {
    values: Vec<f64>,
}

impl DistributionSlice {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(vgrid: &VelocityGrid) -> Self {
        Self {
            values: vec![0.0; vgrid.len()],
        }
    }

    pub fn from_fn(vgrid: &VelocityGrid, f: impl Fn([f64; 3]) -> f64) -> Self {
        Self {
            values: (0..vgrid.len()).map(|i| f(vgrid.velocity(i))).collect(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Quadrature of `f g` over velocity space.
pub fn v_inner(f: &DistributionSlice, g: &DistributionSlice, vgrid: &VelocityGrid) -> f64 {
    (0..vgrid.len())
        .map(|i| vgrid.weight(i) * f.values[i] * g.values[i])
        .sum()
}

/// Quadrature-weighted L2 norm over velocity space.
pub fn v_norm(f: &DistributionSlice, vgrid: &VelocityGrid) -> f64 {
    v_inner(f, f, vgrid).sqrt()
}

/// Pointwise Maxwellian value at one velocity.
pub fn maxwellian_value(params: &MaxwellianParams, v: [f64; 3]) -> f64 {
    let kt = K_GAS * params.theta;
    let norm = params.rho / (2.0 * std::f64::consts::PI * kt).powf(1.5);
    let dv2 = (v[0] - params.u[0]).powi(2)
        + (v[1] - params.u[1]).powi(2)
        + (v[2] - params.u[2]).powi(2);
    norm * (-dv2 / (2.0 * kt)).exp()
}

/// Sample the local Maxwellian on the grid.
pub fn maxwellian(params: &MaxwellianParams, vgrid: &VelocityGrid) -> DistributionSlice {
    DistributionSlice::from_fn(vgrid, |v| maxwellian_value(params, v))
}

/// Raw moments against the collision invariants `1, v, |v|^2/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub rho: f64,
    pub momentum: [f64; 3],
    /// `rho (theta + |u|^2 / 2)` under the `E = theta` convention.
    pub energy_density: f64,
}

pub fn moments(f: &DistributionSlice, vgrid: &VelocityGrid) -> Result<Moments, KineticError> {
    if f.len() != vgrid.len() {
        return Err(KineticError::LengthMismatch {
            got: f.len(),
            want: vgrid.len(),
        });
    }
    if f.values.iter().any(|v| !v.is_finite()) {
        return Err(KineticError::NonFinite);
    }
    let mut rho = 0.0;
    let mut momentum = [0.0; 3];
    let mut energy = 0.0;
    for i in 0..vgrid.len() {
        let w = vgrid.weight(i) * f.values[i];
        let v = vgrid.velocity(i);
        rho += w;
        momentum[0] += w * v[0];
        momentum[1] += w * v[1];
        momentum[2] += w * v[2];
        energy += w * 0.5 * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    }
    Ok(Moments {
        rho,
        momentum,
        energy_density: energy,
    })
}

/// Exact algebraic inversion of the moment relations.
pub fn fit_params(m: &Moments) -> Result<MaxwellianParams, KineticError> {
    if !(m.rho > 0.0) {
        return Err(KineticError::UnphysicalMoments(m.rho));
    }
    let u = [
        m.momentum[0] / m.rho,
        m.momentum[1] / m.rho,
        m.momentum[2] / m.rho,
    ];
    let u2 = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
    let theta = m.energy_density / m.rho - 0.5 * u2;
    MaxwellianParams::new(m.rho, u, theta)
}

/// The five orthonormal fields spanning the collision invariants, plus the
/// `chi_i / M` ratios kept as explicit polynomials (never a quotient of two
/// Gaussians).
#[derive(Debug, Clone)]
pub struct ChiBasis {
    pub params: MaxwellianParams,
    pub chi: Vec<DistributionSlice>,
    ratio: Vec<DistributionSlice>,
}

pub fn chi_basis(params: &MaxwellianParams, vgrid: &VelocityGrid) -> ChiBasis {
    let m = maxwellian(params, vgrid);
    let kt = K_GAS * params.theta;
    let s_rho = params.rho.sqrt();
    let s_krt = (K_GAS * params.rho * params.theta).sqrt();
    let s_6rho = (6.0 * params.rho).sqrt();

    let mut ratio = Vec::with_capacity(5);
    ratio.push(DistributionSlice::from_fn(vgrid, |_| 1.0 / s_rho));
    for axis in 0..3 {
        ratio.push(DistributionSlice::from_fn(vgrid, |v| {
            (v[axis] - params.u[axis]) / s_krt
        }));
    }
    ratio.push(DistributionSlice::from_fn(vgrid, |v| {
        let dv2 = (v[0] - params.u[0]).powi(2)
            + (v[1] - params.u[1]).powi(2)
            + (v[2] - params.u[2]).powi(2);
        (dv2 / kt - 3.0) / s_6rho
    }));
    let chi = ratio.iter().map(|r| r.zip_with(&m, |p, mv| p * mv)).collect();
    ChiBasis {
        params: *params,
        chi,
        ratio,
    }
}

/// Gram matrix `<chi_i, chi_j / M>`; identity up to quadrature error.
pub fn gram_matrix(basis: &ChiBasis, vgrid: &VelocityGrid) -> [[f64; 5]; 5] {
    let mut g = [[0.0; 5]; 5];
    for i in 0..5 {
        for j in i..5 {
            let val = v_inner(&basis.chi[i], &basis.ratio[j], vgrid);
            g[i][j] = val;
            g[j][i] = val;
        }
    }
    g
}

/// Macroscopic projection `P0 h = sum_i <h, chi_i/M> chi_i`.
pub fn project_p0(
    h: &DistributionSlice,
    basis: &ChiBasis,
    vgrid: &VelocityGrid,
) -> DistributionSlice {
    let mut out = DistributionSlice::new(vec![0.0; h.len()]);
    for i in 0..5 {
        let coeff = v_inner(h, &basis.ratio[i], vgrid);
        for (o, c) in out.values.iter_mut().zip(basis.chi[i].values()) {
            *o += coeff * c;
        }
    }
    out
}

/// Microscopic projection `P1 h = h - P0 h`.
pub fn project_p1(
    h: &DistributionSlice,
    basis: &ChiBasis,
    vgrid: &VelocityGrid,
) -> DistributionSlice {
    h.sub(&project_p0(h, basis, vgrid))
}

/// Burnett polynomial `A_j(v) = ((|v|^2 - 5)/2) v_j`, 1-based index.
pub fn burnett_a_hat(j: usize, v: [f64; 3]) -> f64 {
    assert!((1..=3).contains(&j), "Burnett index must be 1..=3");
    let v2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    0.5 * (v2 - 5.0) * v[j - 1]
}

/// Burnett polynomial `B_ij(v) = v_i v_j - delta_ij |v|^2 / 3`, 1-based.
pub fn burnett_b_hat(i: usize, j: usize, v: [f64; 3]) -> f64 {
    assert!(
        (1..=3).contains(&i) && (1..=3).contains(&j),
        "Burnett indices must be 1..=3"
    );
    let v2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    let kron = if i == j { 1.0 } else { 0.0 };
    v[i - 1] * v[j - 1] - kron * v2 / 3.0
}

/// Relative errors of the two microscopic projection identities: the
/// quadratic flux `P1(v_1 v_j M)` against the scaled `B` polynomial, and the
/// cubic flux `P1((v_i |v|^2 / 2 - v_i u.v) M)` against the scaled `A`
/// polynomial, both evaluated at `i = j`.
pub fn p1_identity_check(
    params: &MaxwellianParams,
    vgrid: &VelocityGrid,
    j: usize,
) -> Result<(f64, f64), KineticError> {
    assert!((1..=3).contains(&j), "index must be 1..=3");
    let basis = chi_basis(params, vgrid);
    let m = maxwellian(params, vgrid);
    let kt = K_GAS * params.theta;
    let s = kt.sqrt();
    let u = params.u;

    let lhs_b = {
        let h = DistributionSlice::from_fn(vgrid, |v| v[0] * v[j - 1])
            .zip_with(&m, |p, mv| p * mv);
        project_p1(&h, &basis, vgrid)
    };
    let rhs_b = DistributionSlice::from_fn(vgrid, |v| {
        let w = [(v[0] - u[0]) / s, (v[1] - u[1]) / s, (v[2] - u[2]) / s];
        kt * burnett_b_hat(1, j, w)
    })
    .zip_with(&m, |p, mv| p * mv);
    let err_b = v_norm(&lhs_b.sub(&rhs_b), vgrid) / v_norm(&rhs_b, vgrid);

    let lhs_a = {
        let h = DistributionSlice::from_fn(vgrid, |v| {
            let v2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
            let uv = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
            0.5 * v[j - 1] * v2 - v[j - 1] * uv
        })
        .zip_with(&m, |p, mv| p * mv);
        project_p1(&h, &basis, vgrid)
    };
    let rhs_a = DistributionSlice::from_fn(vgrid, |v| {
        let w = [(v[0] - u[0]) / s, (v[1] - u[1]) / s, (v[2] - u[2]) / s];
        kt.powf(1.5) * burnett_a_hat(j, w)
    })
    .zip_with(&m, |p, mv| p * mv);
    let err_a = v_norm(&lhs_a.sub(&rhs_a), vgrid) / v_norm(&rhs_a, vgrid);

    Ok((err_b, err_a))
}
