//! Continuum predictions on the straight cylinder `T⁺ = ℝ/ℓℤ × (0, π)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::elliptic::EllipticContext;
use crate::error::{Error, Result};
use crate::lattice::{CylinderDomain, Site};

type C = Complex64;

const I: C = C::new(0.0, 1.0);

/// Sign label `[±]`: `z^[+] = z`, `z^[-] = z̄`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub const ALL: [Sign; 2] = [Sign::Plus, Sign::Minus];

    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn apply(self, z: C) -> C {
        match self {
            Sign::Plus => z,
            Sign::Minus => z.conj(),
        }
    }
}

/// Conformal data of a discrete cylinder: the modulus `ℓ` and the scale of a
/// lattice step in `T⁺` units.
///
/// The continuum boundary is placed on the rows of boundary vertices, where
/// the discrete Dirichlet conditions hold. A straight `W × H` domain therefore
/// has continuum height `(H+1)δ` and `ℓ = πW/(H+1)`. For a general domain `ℓ`
/// is `π` times the Dirichlet energy of the discrete harmonic measure of the
/// top boundary, which reproduces the same value on straight domains.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CylinderGeometry {
    pub ell: f64,
    /// `T⁺` length of one lattice step.
    pub step: f64,
}

impl CylinderGeometry {
    pub fn new(ell: f64) -> Result<CylinderGeometry> {
        if !(ell > 0.0 && ell.is_finite()) {
            return Err(Error::Precondition(format!("ℓ = {ell} must be positive")));
        }
        Ok(CylinderGeometry { ell, step: f64::NAN })
    }

    pub fn straight(width: usize, height: usize) -> CylinderGeometry {
        let step = PI / (height as f64 + 1.0);
        CylinderGeometry { ell: step * width as f64, step }
    }

    pub fn from_domain(domain: &CylinderDomain) -> Result<CylinderGeometry> {
        if domain.is_straight() {
            let h = domain.top_profile()[0] - domain.bottom_profile()[0];
            return Ok(CylinderGeometry::straight(domain.width(), h as usize));
        }
        let ell = PI * top_measure_energy(domain)?;
        Ok(CylinderGeometry { ell, step: ell / domain.width() as f64 })
    }

    /// `T⁺` position of the lattice site `(col, row)`; exact for straight
    /// domains whose bottom profile is zero.
    pub fn site_point(&self, col: f64, row: f64) -> C {
        C::new(col * self.step, (row + 1.0) * self.step)
    }

    pub fn vertex_point(&self, site: Site) -> C {
        self.site_point(site.col as f64, site.row as f64)
    }

    /// Centre of the face with lower-left corner `(gap, row)`.
    pub fn face_point(&self, gap: usize, row: i64) -> C {
        self.site_point(gap as f64 + 0.5, row as f64 + 0.5)
    }

    pub fn context(&self) -> Result<EllipticContext> {
        EllipticContext::new(self.ell)
    }
}

/// Dirichlet energy `Σ (u(x) - u(y))²` of the discrete harmonic function
/// equal to 0 below the domain and 1 above it.
fn top_measure_energy(domain: &CylinderDomain) -> Result<f64> {
    let n = domain.vertices().len();
    let w = domain.width() as i64;
    let bottom = domain.bottom_profile();
    let mut nbrs: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut diag = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut boundary_edges: Vec<(usize, f64)> = Vec::new();
    for (i, v) in domain.vertices().iter().enumerate() {
        let s = v.site;
        for (dc, dr) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
            let col = (s.col as i64 + dc).rem_euclid(w) as usize;
            let t = Site { col, row: s.row + dr };
            diag[i] += 1.0;
            match domain.vertex_index(t) {
                Some(j) => nbrs[i].push(j),
                None => {
                    let value = if t.row < bottom[col] { 0.0 } else { 1.0 };
                    rhs[i] += value;
                    boundary_edges.push((i, value));
                }
            }
        }
    }
    let apply = |x: &[f64], out: &mut [f64]| {
        for i in 0..n {
            out[i] = diag[i] * x[i] - nbrs[i].iter().map(|&j| x[j]).sum::<f64>();
        }
    };
    let u = conjugate_gradient(&apply, &rhs, 1e-13, 20 * n + 100)?;
    let mut energy = 0.0;
    for i in 0..n {
        for &j in &nbrs[i] {
            if j > i {
                energy += (u[i] - u[j]).powi(2);
            }
        }
    }
    for (i, value) in boundary_edges {
        energy += (u[i] - value).powi(2);
    }
    Ok(energy)
}

fn conjugate_gradient(
    apply: &dyn Fn(&[f64], &mut [f64]),
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    for _ in 0..max_iter {
        if rr.sqrt() <= tol * b_norm {
            return Ok(x);
        }
        apply(&p, &mut ap);
        let alpha = rr / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    Err(Error::Numerical("harmonic measure solve did not converge".into()))
}

/// `log|1 - e^{2πiẑ/ℓ}|` where `ẑ = ±z` has non-negative imaginary part.
fn log_decaying(z: C, ell: f64) -> f64 {
    let zh = if z.im >= 0.0 { z } else { -z };
    let e = (I * (2.0 * PI / ell) * zh).exp();
    (C::new(1.0, 0.0) - e).norm().ln()
}

/// Relative size below which paired image terms stop the summation.
const IMAGE_TOL: f64 = 1e-12;

/// Dirichlet Green's function of `T⁺`, normalized as `-(2π)⁻¹ log|z₂ - z₁| + O(1)`.
///
/// Images under `z ↦ z - 2πin` and `z ↦ z̄` are summed in pairs. Each term
/// `-(2π)⁻¹ log|2 sin(πz/ℓ)|` splits into `-|Im z|/(2ℓ)` plus an exponentially
/// small remainder; the linear parts sum to the zero mode
/// `y_<(π - y_>)/(πℓ)`, and the remainders converge absolutely.
pub fn green(z1: C, z2: C, geom: &CylinderGeometry) -> Result<f64> {
    let ell = geom.ell;
    for z in [z1, z2] {
        if !(z.im >= 0.0 && z.im <= PI) {
            return Err(Error::Precondition(format!("{z} lies outside the closed cylinder")));
        }
    }
    let dx = (z2.re - z1.re) - ell * ((z2.re - z1.re) / ell).round();
    let d = C::new(dx, z2.im - z1.im);
    if d.norm() < 1e-14 * ell {
        return Err(Error::Pole("coincident points".into()));
    }
    let (lo, hi) = if z1.im < z2.im { (z1.im, z2.im) } else { (z2.im, z1.im) };
    let zero_mode = lo * (PI - hi) / (PI * ell);
    let a = C::new(dx, z2.im - z1.im);
    let b = C::new(dx, z2.im + z1.im);
    let mut sum = log_decaying(a, ell) - log_decaying(b, ell);
    let mut n = 1i64;
    loop {
        let shift = C::new(0.0, 2.0 * PI * n as f64);
        let t = log_decaying(a - shift, ell) - log_decaying(b - shift, ell) + log_decaying(a + shift, ell)
            - log_decaying(b + shift, ell);
        sum += t;
        if t.abs() < IMAGE_TOL * sum.abs().max(1e-3) || n > 10_000 {
            break;
        }
        n += 1;
    }
    Ok(zero_mode - sum / (2.0 * PI))
}

/// Wirtinger derivative pair `∂^{[s1]}_{z1} ∂^{[s2]}_{z2} G` by central
/// differences with step `h`.
pub fn green_mixed_derivative(z1: C, z2: C, s1: Sign, s2: Sign, geom: &CylinderGeometry, h: f64) -> Result<C> {
    // ∂ = ½(∂x - i∂y), ∂̄ = ½(∂x + i∂y).
    let dirs = |s: Sign| -> [(C, C); 2] {
        let k = match s {
            Sign::Plus => -1.0,
            Sign::Minus => 1.0,
        };
        [(C::new(h, 0.0), C::new(0.5, 0.0)), (C::new(0.0, h), C::new(0.0, 0.5 * k))]
    };
    let mut acc = C::new(0.0, 0.0);
    for (e1, c1) in dirs(s1) {
        for (e2, c2) in dirs(s2) {
            let f = |a: f64, b: f64| green(z1 + e1 * a, z2 + e2 * b, geom);
            let second = (f(1.0, 1.0)? - f(1.0, -1.0)? - f(-1.0, 1.0)? + f(-1.0, -1.0)?) / (4.0 * h * h);
            acc += c1 * c2 * second;
        }
    }
    Ok(acc)
}

pub fn hm_top(z: C) -> f64 {
    z.im / PI
}

pub fn h2_pred(z1: C, z2: C, m2: f64, geom: &CylinderGeometry) -> Result<f64> {
    Ok(green(z1, z2, geom)? / PI + m2 * hm_top(z1) * hm_top(z2))
}

pub fn h3_pred(z1: C, z2: C, z3: C, m3: f64) -> f64 {
    m3 * hm_top(z1) * hm_top(z2) * hm_top(z3)
}

/// `(M₂(μ), M₃(μ)) = (-℘(z_μ) - c, ℘'(z_μ))`.
pub fn moments_of_mu(mu: f64, ctx: &EllipticContext) -> Result<(f64, f64)> {
    let z = ctx.mu_point(mu).z_mu;
    Ok((-ctx.wp(z)?.re - ctx.c_ell, ctx.wp_deriv(z, 1)?.re))
}

/// `M₃² + 4 Π (M₂ + eᵢ + c)`.
pub fn cubic_residual(m2: f64, m3: f64, ctx: &EllipticContext) -> f64 {
    let c = ctx.c_ell;
    m3 * m3 + 4.0 * (m2 + ctx.e1 + c) * (m2 + ctx.e2 + c) * (m2 + ctx.e3 + c)
}

/// `|M₃|` below this value is treated as zero, leaving `μ` on `[0, ½]`.
pub const M3_ZERO_TOL: f64 = 1e-10;

/// Result of fitting `μ` to a moment pair.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MuFit {
    pub mu: f64,
    pub z_mu: C,
    /// `M₂(μ) - M₂`.
    pub m2_residual: f64,
    /// `M₃(μ) - M₃`.
    pub m3_residual: f64,
    pub cubic_residual: f64,
}

/// Fits `μ` by bisection of `M₂(μ)` on `[0, ½]`, then picks the branch
/// `μ` or `1 - μ` whose `M₃(μ)` has the sign of `M₃`.
pub fn mu_from_moments(m2: f64, m3: f64, ctx: &EllipticContext) -> Result<MuFit> {
    if !(m2 >= 0.0) {
        return Err(Error::Precondition(format!("M₂ = {m2} must be non-negative")));
    }
    let m2_of = |mu: f64| moments_of_mu(mu, ctx).map(|(a, _)| a);
    // Strict monotonicity on [0, ½] is checked on a grid before bisecting.
    const GRID: usize = 64;
    let mut prev = m2_of(0.0)?;
    for k in 1..=GRID {
        let v = m2_of(0.5 * k as f64 / GRID as f64)?;
        if !(v > prev) {
            return Err(Error::Numerical(format!("M₂(μ) not increasing on [0, ½] at grid point {k}")));
        }
        prev = v;
    }
    let (lo_val, hi_val) = (-ctx.e3 - ctx.c_ell, -ctx.e2 - ctx.c_ell);
    let slack = 1e-12 * hi_val.abs().max(1.0);
    if m2 < lo_val - slack || m2 > hi_val + slack {
        return Err(Error::Range(format!(
            "M₂ = {m2} outside the attainable range [{lo_val}, {hi_val}] for ℓ = {}",
            ctx.ell
        )));
    }
    let (mut lo, mut hi) = (0.0f64, 0.5f64);
    if m2 <= lo_val {
        hi = 0.0;
    } else if m2 >= hi_val {
        lo = 0.5;
    } else {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if m2_of(mid)? < m2 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-15 {
                break;
            }
        }
    }
    let mut mu = 0.5 * (lo + hi);
    let (_, m3_half) = moments_of_mu(mu, ctx)?;
    if m3.abs() > M3_ZERO_TOL && m3_half.signum() != m3.signum() && mu > 0.0 && mu < 0.5 {
        mu = 1.0 - mu;
    }
    let (fit2, fit3) = moments_of_mu(mu, ctx)?;
    Ok(MuFit {
        mu,
        z_mu: ctx.mu_point(mu).z_mu,
        m2_residual: fit2 - m2,
        m3_residual: fit3 - m3,
        cubic_residual: cubic_residual(m2, m3, ctx),
    })
}

/// Tail weight bound for the truncated discrete Gaussian.
pub const DG_TAIL_TOL: f64 = 1e-14;

/// Centered discrete Gaussian with weights `e^{-½ℓ(k-μ)²}` on `k ∈ ℤ`,
/// shifted by `a_μ` so that its mean is zero.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiscreteGaussianDist {
    pub mu: f64,
    pub ell: f64,
    pub truncation: usize,
    /// Normalizing constant `Z_μ`.
    pub z_norm: f64,
    pub a_mu: f64,
    /// Support points `k - a_μ`.
    pub support: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Builds the distribution; `truncation = None` picks `K` from the tail bound.
pub fn discrete_gaussian(mu: f64, ell: f64, truncation: Option<usize>) -> Result<DiscreteGaussianDist> {
    if !(ell > 0.0) {
        return Err(Error::Precondition(format!("ℓ = {ell} must be positive")));
    }
    let mu = mu.rem_euclid(1.0);
    let k_trunc = truncation.unwrap_or_else(|| (8.0 / ell.sqrt()).ceil() as usize + 2);
    let weight = |k: i64| (-0.5 * ell * (k as f64 - mu).powi(2)).exp();
    let ks: Vec<i64> = (-(k_trunc as i64)..=k_trunc as i64 + 1).collect();
    let weights: Vec<f64> = ks.iter().map(|&k| weight(k)).collect();
    let z_norm: f64 = weights.iter().sum();
    let tail = (weight(-(k_trunc as i64) - 1) + weight(k_trunc as i64 + 2)) / z_norm;
    if tail > DG_TAIL_TOL {
        return Err(Error::Precision(format!("truncation K = {k_trunc} leaves tail mass {tail:e}")));
    }
    let probs: Vec<f64> = weights.iter().map(|w| w / z_norm).collect();
    let a_mu: f64 = ks.iter().zip(&probs).map(|(&k, p)| k as f64 * p).sum();
    let support = ks.iter().map(|&k| k as f64 - a_mu).collect();
    Ok(DiscreteGaussianDist { mu, ell, truncation: k_trunc, z_norm, a_mu, support, probs })
}

pub fn dg_moment(dist: &DiscreteGaussianDist, n: u32) -> f64 {
    dist.support.iter().zip(&dist.probs).map(|(x, p)| p * x.powi(n as i32)).sum()
}

/// Cumulant from moments via `κₙ = mₙ - Σ_{k<n} C(n-1,k-1) κ_k m_{n-k}`.
pub fn dg_cumulant(dist: &DiscreteGaussianDist, n: u32) -> f64 {
    let n = n as usize;
    let m: Vec<f64> = (0..=n).map(|k| dg_moment(dist, k as u32)).collect();
    let mut kappa = vec![0.0; n + 1];
    for j in 1..=n {
        let mut v = m[j];
        for k in 1..j {
            v -= binomial(j - 1, k - 1) * kappa[k] * m[j - k];
        }
        kappa[j] = v;
    }
    kappa[n]
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `(-1)^{n-1} ℘^{(n-2)}(z_μ)` for `n ≥ 3`; the `n`-th cumulant of `ξ_μ` and the
/// coefficient of `hm_top(z₁)⋯hm_top(zₙ)` in the connected correlations.
pub fn connected_coefficient(n: usize, mu: f64, ctx: &EllipticContext) -> Result<f64> {
    if n < 3 {
        return Err(Error::Precondition(format!("n = {n} must be at least 3")));
    }
    let z = ctx.mu_point(mu).z_mu;
    let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
    Ok(sign * ctx.wp_deriv(z, n - 2)?.re)
}

/// Cumulant `κₙ` of `ξ_μ` from the elliptic side, `2 ≤ n ≤ 8`.
pub fn predicted_cumulant(n: usize, mu: f64, ctx: &EllipticContext) -> Result<f64> {
    if n == 2 {
        Ok(moments_of_mu(mu, ctx)?.0)
    } else {
        connected_coefficient(n, mu, ctx)
    }
}

/// Raw moment of order `n` assembled from predicted cumulants.
pub fn predicted_moment(n: usize, mu: f64, ctx: &EllipticContext) -> Result<f64> {
    let mut kappa = vec![0.0; n + 1];
    for (k, item) in kappa.iter_mut().enumerate().skip(2) {
        *item = predicted_cumulant(k, mu, ctx)?;
    }
    let mut m = vec![0.0; n + 1];
    m[0] = 1.0;
    for j in 1..=n {
        m[j] = (1..=j).map(|k| binomial(j - 1, k - 1) * kappa[k] * m[j - k]).sum();
    }
    Ok(m[n])
}

pub fn f2_pred(s1: Sign, s2: Sign, z1: C, z2: C, mu: f64, ctx: &EllipticContext) -> Result<C> {
    let zm = ctx.mu_point(mu).z_mu;
    let arg = s2.apply(z2) - s1.apply(z1);
    Ok((ctx.wp(arg)? - ctx.wp(zm)?) * (s1.value() * s2.value() * 4.0 / (PI * PI)))
}

pub fn f3_sum_pred(s1: Sign, s2: Sign, s3: Sign, mu: f64, ctx: &EllipticContext) -> Result<C> {
    let zm = ctx.mu_point(mu).z_mu;
    let s = s1.value() * s2.value() * s3.value();
    Ok(I * s * (2.0 / PI).powi(3) * ctx.wp_deriv(zm, 1)?)
}

/// All `n`-cycles of `{0, …, n-1}` as successor arrays.
fn cycles(n: usize) -> Vec<Vec<usize>> {
    fn perms(rest: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
        if k == rest.len() {
            out.push(rest.clone());
            return;
        }
        for i in k..rest.len() {
            rest.swap(k, i);
            perms(rest, k + 1, out);
            rest.swap(k, i);
        }
    }
    let mut orders = Vec::new();
    let mut tail: Vec<usize> = (1..n).collect();
    perms(&mut tail, 0, &mut orders);
    orders
        .into_iter()
        .map(|order| {
            let mut succ = vec![0; n];
            let mut cur = 0;
            for &next in &order {
                succ[cur] = next;
                cur = next;
            }
            succ[cur] = 0;
            succ
        })
        .collect()
}

/// `Σ_{σ ∈ Cₙ} Π_k f_μ(z_{σ(k)} - z_k)` over the `n`-cycles, `2 ≤ n ≤ 7`.
pub fn cycle_sum(points: &[C], mu: f64, ctx: &EllipticContext) -> Result<C> {
    let n = points.len();
    if !(2..=7).contains(&n) {
        return Err(Error::Precondition(format!("cycle sums need 2..=7 points, got {n}")));
    }
    let mut f = vec![vec![C::new(0.0, 0.0); n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                f[i][j] = ctx.f_mu(points[j] - points[i], mu)?;
            }
        }
    }
    Ok(cycles(n)
        .iter()
        .map(|succ| (0..n).map(|k| f[k][succ[k]]).product::<C>())
        .sum())
}

/// Closed form `(-2i/π)ⁿ ℘^{(n-2)}(z_μ)` of the cycle sum for `n ≥ 3`.
pub fn cycle_sum_closed_form(n: usize, mu: f64, ctx: &EllipticContext) -> Result<C> {
    let z = ctx.mu_point(mu).z_mu;
    Ok((C::new(0.0, -2.0 / PI)).powi(n as i32) * ctx.wp_deriv(z, n - 2)?)
}

/// Elliptic predictions for one `(ℓ, μ)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictionSet {
    pub ell: f64,
    pub mu: f64,
    pub z_mu: C,
    pub c_ell: f64,
    pub e: [f64; 3],
    /// `M₂ … M₆` from the discrete Gaussian.
    pub moments: Vec<f64>,
    /// `κ₂ … κ₆` from `℘` at `z_μ`.
    pub cumulants: Vec<f64>,
    /// `κ₂ … κ₆` by direct summation of the discrete Gaussian.
    pub cumulants_summed: Vec<f64>,
    pub cubic_residual: f64,
    pub fit: Option<MuFit>,
}

impl PredictionSet {
    pub fn new(ell: f64, mu: f64) -> Result<PredictionSet> {
        let ctx = EllipticContext::new(ell)?;
        Self::build(&ctx, mu, None)
    }

    pub fn from_moments(ell: f64, m2: f64, m3: f64) -> Result<PredictionSet> {
        let ctx = EllipticContext::new(ell)?;
        let fit = mu_from_moments(m2, m3, &ctx)?;
        Self::build(&ctx, fit.mu, Some(fit))
    }

    fn build(ctx: &EllipticContext, mu: f64, fit: Option<MuFit>) -> Result<PredictionSet> {
        let dist = discrete_gaussian(mu, ctx.ell, None)?;
        let (m2, m3) = moments_of_mu(mu, ctx)?;
        Ok(PredictionSet {
            ell: ctx.ell,
            mu,
            z_mu: ctx.mu_point(mu).z_mu,
            c_ell: ctx.c_ell,
            e: [ctx.e1, ctx.e2, ctx.e3],
            moments: (2..=6).map(|n| dg_moment(&dist, n)).collect(),
            cumulants: (2..=6).map(|n| predicted_cumulant(n, mu, ctx)).collect::<Result<_>>()?,
            cumulants_summed: (2..=6).map(|n| dg_cumulant(&dist, n)).collect(),
            cubic_residual: cubic_residual(m2, m3, ctx),
            fit,
        })
    }
}
