//! Jacobi theta functions, Weierstrass functions on `Λ = ℓℤ + 2πiℤ` and the
//! model functions `g_μ`, `f_μ`.
//!
//! Theta functions use the conventions
//! `θ₁(w) = -i Σ (-1)ⁿ q^{(n+½)²} e^{(2n+1)πiw}` and `θ₃(w) = Σ q^{n²} e^{2πinw}`
//! with `q = e^{iπτ}`, so `θ₁(w+1) = -θ₁(w)` and `θ₃(w+1) = θ₃(w)`. Series are
//! summed around their dominant term with a common real scale factor, which
//! keeps arguments with large imaginary part in range. When `Im τ < 1` the
//! modular transformation `τ → -1/τ` is applied first.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

type C = Complex64;

const I: C = C::new(0.0, 1.0);

/// Relative size of the last retained series term.
const SERIES_TOL: f64 = 1e-17;

/// Highest derivative order supported for `θ` and `log θ`.
pub const MAX_DERIV: usize = 8;

/// Highest derivative order of `℘` exposed by [`wp_deriv`].
pub const MAX_WP_DERIV: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    One,
    Three,
}

/// `θ^{(k)}(w) = scale_factor · d[k]` with `scale_factor = e^{log_scale}`.
#[derive(Clone, Debug)]
struct Scaled {
    log_scale: f64,
    d: Vec<C>,
}

impl Scaled {
    fn value(&self, k: usize) -> C {
        self.d[k] * self.log_scale.exp()
    }
}

/// Direct series for `θ` and its first `nd` derivatives.
fn series(kind: Kind, w: C, tau: C, nd: usize) -> Result<Scaled> {
    let t = tau.im;
    if t <= 0.0 {
        return Err(Error::Precondition(format!("Im τ = {t} must be positive")));
    }
    // Exponent of term n, written in the shifted index m = n + ½ for θ₁ and
    // m = n for θ₃: iπτ m² + 2πi m w (+ iπ n for the alternating sign).
    let offset = match kind {
        Kind::One => 0.5,
        Kind::Three => 0.0,
    };
    let center = (-w.im / t - offset).round() as i64;
    // Terms decay like e^{-π t (m - m*)²}; the polynomial derivative factors
    // grow at most like |m|^nd.
    let budget = -SERIES_TOL.ln() + nd as f64 * (2.0 + center.unsigned_abs() as f64).ln().max(1.0) * 2.0;
    let half = ((budget / (PI * t)).sqrt()).ceil() as i64 + 2;
    if half > 200_000 {
        return Err(Error::Precision(format!("theta series needs {half} terms at τ = {tau}")));
    }
    let exponent = |n: i64| -> C {
        let m = n as f64 + offset;
        let mut e = I * PI * tau * (m * m) + I * (2.0 * PI * m) * w;
        if kind == Kind::One && n.rem_euclid(2) == 1 {
            e += I * PI;
        }
        e
    };
    let log_scale = (center - half..=center + half)
        .map(|n| exponent(n).re)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut d = vec![C::new(0.0, 0.0); nd + 1];
    for n in center - half..=center + half {
        let m = n as f64 + offset;
        let e = exponent(n);
        let base = C::from_polar((e.re - log_scale).exp(), e.im);
        let factor = I * (2.0 * PI * m);
        let mut p = base;
        for item in d.iter_mut() {
            *item += p;
            p *= factor;
        }
    }
    if kind == Kind::One {
        for item in d.iter_mut() {
            *item *= -I;
        }
    }
    Ok(Scaled { log_scale, d })
}

/// Derivatives `(log g)^{(1..=n)}` from `g^{(0..=n)}`.
fn log_derivatives(g: &[C]) -> Vec<C> {
    let n = g.len() - 1;
    let mut binom = vec![vec![0.0f64; n + 1]; n + 1];
    for i in 0..=n {
        binom[i][0] = 1.0;
        for j in 1..=i {
            binom[i][j] = binom[i - 1][j - 1] + if j < i { binom[i - 1][j] } else { 0.0 };
        }
    }
    let mut f = vec![C::new(0.0, 0.0); n + 1];
    for k in 1..=n {
        let mut acc = g[k];
        for j in 0..k.saturating_sub(1) {
            acc -= f[j + 1] * g[k - 1 - j] * binom[k - 1][j];
        }
        f[k] = acc / g[0];
    }
    f
}

fn prefactor(kind: Kind, tau: C) -> C {
    let root = (-I * tau).powf(-0.5);
    match kind {
        Kind::One => -I * root,
        Kind::Three => root,
    }
}

fn use_transform(tau: C) -> bool {
    tau.im < 1.0
}

/// `θ(w; τ)` as a scaled value, applying the modular transformation when useful.
fn theta_scaled(kind: Kind, w: C, tau: C) -> Result<Scaled> {
    if !use_transform(tau) {
        return series(kind, w, tau, 0);
    }
    let tp = -tau.inv();
    let inner = series(kind, w * tp, tp, 0)?;
    let e = I * PI * tp * w * w;
    let d0 = inner.d[0] * prefactor(kind, tau) * C::from_polar(1.0, e.im);
    Ok(Scaled { log_scale: inner.log_scale + e.re, d: vec![d0] })
}

/// `(log θ)^{(1..=n)}(w; τ)`.
fn theta_log_derivs(kind: Kind, w: C, tau: C, n: usize) -> Result<Vec<C>> {
    if !use_transform(tau) {
        let s = series(kind, w, tau, n)?;
        return Ok(log_derivatives(&s.d));
    }
    let tp = -tau.inv();
    let s = series(kind, w * tp, tp, n)?;
    let inner = log_derivatives(&s.d);
    let mut out = vec![C::new(0.0, 0.0); n + 1];
    let mut pow = C::new(1.0, 0.0);
    for k in 1..=n {
        pow *= tp;
        out[k] = pow * inner[k];
    }
    if n >= 1 {
        out[1] += I * (2.0 * PI) * tp * w;
    }
    if n >= 2 {
        out[2] += I * (2.0 * PI) * tp;
    }
    Ok(out)
}

/// Odd derivatives `θ₁'(0)` and `θ₁'''(0)`.
fn theta1_odd_derivs0(tau: C) -> Result<(C, C)> {
    if !use_transform(tau) {
        let s = series(Kind::One, C::new(0.0, 0.0), tau, 3)?;
        return Ok((s.value(1), s.value(3)));
    }
    let tp = -tau.inv();
    let s = series(Kind::One, C::new(0.0, 0.0), tp, 3)?;
    let (a1, a3) = (s.value(1), s.value(3));
    let p = prefactor(Kind::One, tau);
    // θ₁(w;τ) = P e^{iπτ'w²} θ₁(wτ';τ'), expanded to third order at w = 0.
    let d1 = p * tp * a1;
    let d3 = p * (tp.powi(3) * a3 + 6.0 * I * PI * tp * tp * a1);
    Ok((d1, d3))
}

pub fn theta1(w: C, tau: C) -> Result<C> {
    Ok(theta_scaled(Kind::One, w, tau)?.value(0))
}

pub fn theta3(w: C, tau: C) -> Result<C> {
    Ok(theta_scaled(Kind::Three, w, tau)?.value(0))
}

pub fn theta1_prime0(tau: C) -> Result<C> {
    Ok(theta1_odd_derivs0(tau)?.0)
}

/// `θ₁`'s series without the modular transformation; exposed for cross-checks.
pub fn theta1_direct(w: C, tau: C) -> Result<C> {
    Ok(series(Kind::One, w, tau, 0)?.value(0))
}

/// `θ₃`'s series without the modular transformation.
pub fn theta3_direct(w: C, tau: C) -> Result<C> {
    Ok(series(Kind::Three, w, tau, 0)?.value(0))
}

fn lattice_distance(w: C, tau: C) -> f64 {
    // Distance from w to the nearest point of ℤ + τℤ (τ purely imaginary here
    // or at least with positive imaginary part).
    let k = (w.im / tau.im).round();
    let r = w - tau * k;
    let j = r.re.round();
    (r - j).norm()
}

/// Pole proximity threshold in the normalized variable `w`.
pub const POLE_TOL: f64 = 1e-12;

/// `g_μ(w) = (2/πi) θ₁'(0) θ₃(w+μ) / (θ₃(μ) θ₁(w))`.
pub fn g_mu(w: C, mu: f64, tau: C) -> Result<C> {
    if lattice_distance(w, tau) < POLE_TOL {
        return Err(Error::Pole(format!(
            "g_μ at w = {w}: simple pole with residue 2/(πi) at lattice points"
        )));
    }
    let t1p = theta1_prime0(tau)?;
    let a = theta_scaled(Kind::Three, w + mu, tau)?;
    let b = theta_scaled(Kind::Three, C::new(mu, 0.0), tau)?;
    let c = theta_scaled(Kind::One, w, tau)?;
    let ratio = a.d[0] / (b.d[0] * c.d[0]) * (a.log_scale - b.log_scale - c.log_scale).exp();
    Ok(t1p * ratio * (2.0 / PI) / I)
}

/// Numerical data attached to the lattice `Λ = ℓℤ + 2πiℤ`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EllipticContext {
    pub ell: f64,
    pub tau: C,
    pub q: C,
    /// `θ₁'''(0) / (3 θ₁'(0) ℓ²)`, the constant in `℘ = -(log θ₁)''/ℓ² + a`.
    a: f64,
    pub c_ell: f64,
    /// Imaginary part discarded when forming `c_ell`.
    pub c_imag_residue: f64,
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
}

impl EllipticContext {
    pub fn new(ell: f64) -> Result<EllipticContext> {
        if !(ell > 0.0 && ell.is_finite()) {
            return Err(Error::Precondition(format!("ℓ = {ell} must be positive and finite")));
        }
        let tau = I * (2.0 * PI / ell);
        let q = (I * PI * tau).exp();
        let (d1, d3) = theta1_odd_derivs0(tau)?;
        let a_c = d3 / (d1 * 3.0 * ell * ell);
        let mut ctx = EllipticContext {
            ell,
            tau,
            q,
            a: a_c.re,
            c_ell: 0.0,
            c_imag_residue: 0.0,
            e1: 0.0,
            e2: 0.0,
            e3: 0.0,
        };
        let c = ctx.zeta(C::new(0.0, PI))? / (I * PI);
        ctx.c_ell = c.re;
        ctx.c_imag_residue = c.im.abs().max(a_c.im.abs());
        ctx.e1 = ctx.wp(C::new(ell / 2.0, 0.0))?.re;
        ctx.e2 = ctx.wp(C::new(0.0, PI))?.re;
        ctx.e3 = ctx.wp(C::new(ell / 2.0, PI))?.re;
        Ok(ctx)
    }

    /// Half periods `ω₁/2 = ℓ/2`, `ω₂/2 = πi`, `(ω₁+ω₂)/2`.
    pub fn half_periods(&self) -> [C; 3] {
        [C::new(self.ell / 2.0, 0.0), C::new(0.0, PI), C::new(self.ell / 2.0, PI)]
    }

    /// Representative of `z` modulo `Λ` with real part in `[-ℓ/2, ℓ/2)` and
    /// imaginary part in `[-π, π)`.
    pub fn reduce(&self, z: C) -> C {
        let x = z.re - self.ell * (z.re / self.ell + 0.5).floor();
        let y = z.im - 2.0 * PI * (z.im / (2.0 * PI) + 0.5).floor();
        C::new(x, y)
    }

    fn check_pole(&self, z: C) -> Result<C> {
        let r = self.reduce(z);
        if r.norm() < POLE_TOL * self.ell {
            return Err(Error::Pole(format!("z = {z} is a lattice point")));
        }
        Ok(r)
    }

    fn log_theta1_derivs(&self, z: C, n: usize) -> Result<Vec<C>> {
        theta_log_derivs(Kind::One, z / self.ell, self.tau, n)
    }

    /// Weierstrass `℘(z)`.
    pub fn wp(&self, z: C) -> Result<C> {
        let r = self.check_pole(z)?;
        let l = self.log_theta1_derivs(r, 2)?;
        Ok(-l[2] / (self.ell * self.ell) + self.a)
    }

    /// `℘^{(k)}(z)` for `1 ≤ k ≤ 6`.
    pub fn wp_deriv(&self, z: C, k: usize) -> Result<C> {
        if k == 0 {
            return self.wp(z);
        }
        if k > MAX_WP_DERIV {
            return Err(Error::Precondition(format!("derivative order {k} exceeds {MAX_WP_DERIV}")));
        }
        let r = self.check_pole(z)?;
        let l = self.log_theta1_derivs(r, k + 2)?;
        Ok(-l[k + 2] / self.ell.powi(k as i32 + 2))
    }

    /// Weierstrass `ζ(z)` (not reduced modulo the lattice, since `ζ` is only
    /// quasi-periodic).
    pub fn zeta(&self, z: C) -> Result<C> {
        if z.norm() < POLE_TOL * self.ell {
            return Err(Error::Pole("ζ at the origin".into()));
        }
        let l = self.log_theta1_derivs(z, 1)?;
        Ok(l[1] / self.ell - z * self.a)
    }

    /// `g_μ` in the rescaled variable: `f_μ(z) = g_μ(z/ℓ) / ℓ`.
    pub fn f_mu(&self, z: C, mu: f64) -> Result<C> {
        Ok(g_mu(z / self.ell, mu, self.tau)? / self.ell)
    }

    pub fn mu_point(&self, mu: f64) -> MuPoint {
        MuPoint { mu: mu.rem_euclid(1.0), z_mu: C::new((0.5 - mu) * self.ell, PI) }
    }
}

/// `c = (2/ω₂) ζ(ω₂/2)`.
pub fn c_const(ctx: &EllipticContext) -> f64 {
    ctx.c_ell
}

pub fn wp(z: C, ctx: &EllipticContext) -> Result<C> {
    ctx.wp(z)
}

pub fn wp_deriv(z: C, ctx: &EllipticContext, k: usize) -> Result<C> {
    ctx.wp_deriv(z, k)
}

pub fn zeta_w(z: C, ctx: &EllipticContext) -> Result<C> {
    ctx.zeta(z)
}

pub fn f_mu(z: C, ctx: &EllipticContext, mu: f64) -> Result<C> {
    ctx.f_mu(z, mu)
}

/// The zero `z_μ = (½ - μ) ℓ + πi` of `f_μ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuPoint {
    pub mu: f64,
    pub z_mu: C,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// `℘` from its Fourier expansion in `v = πz/ℓ` with `p = q² = e^{-4π²/ℓ}`:
    /// `(π/ℓ)² [csc² v - 1/3 + 8 Σ n pⁿ/(1-pⁿ) (1 - cos 2nv)]`.
    fn wp_qseries(z: C, ell: f64) -> C {
        let v = z * (PI / ell);
        let q2 = (-4.0 * PI * PI / ell).exp();
        let s = v.sin();
        let mut acc = s.powi(-2) - 1.0 / 3.0;
        for n in 1..200 {
            let qn = q2.powi(n);
            let term = (1.0 - (v * (2.0 * n as f64)).cos()) * (8.0 * n as f64 * qn / (1.0 - qn));
            acc += term;
            if term.norm() < 1e-18 {
                break;
            }
        }
        acc * (PI / ell).powi(2)
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn random_point(r: &mut ChaCha8Rng, ell: f64) -> C {
        C::new(r.gen_range(-0.45..0.45) * ell, r.gen_range(-0.9..0.9) * PI)
    }

    #[test]
    fn theta_parity_and_zero() {
        let tau = C::new(0.1, 0.8);
        assert!(theta1(C::new(0.0, 0.0), tau).unwrap().norm() < 1e-15);
        let w = C::new(0.23, 0.11);
        assert!((theta1(-w, tau).unwrap() + theta1(w, tau).unwrap()).norm() < 1e-13);
        assert!((theta3(-w, tau).unwrap() - theta3(w, tau).unwrap()).norm() < 1e-13);
    }

    #[test]
    fn theta_periodicity() {
        let mut r = rng();
        for _ in 0..50 {
            let tau = C::new(0.0, r.gen_range(0.3..3.0));
            let w = C::new(r.gen_range(-1.0..1.0), r.gen_range(-0.5..0.5) * tau.im);
            let a = theta1(w + 1.0, tau).unwrap();
            let b = theta1(w, tau).unwrap();
            assert!((a + b).norm() < 1e-12 * b.norm().max(1.0));
            let c3 = theta3(w + 1.0, tau).unwrap();
            assert!((c3 - theta3(w, tau).unwrap()).norm() < 1e-12 * c3.norm().max(1.0));
        }
    }

    #[test]
    fn modular_transform_agrees_with_direct_series() {
        for t in [0.3, 0.5, 0.9] {
            let tau = C::new(0.0, t);
            for w in [C::new(0.17, 0.05), C::new(-0.4, 0.2), C::new(0.3, -0.1)] {
                let a = theta1(w, tau).unwrap();
                let b = theta1_direct(w, tau).unwrap();
                assert!((a - b).norm() < 1e-11 * b.norm(), "θ₁ τ={tau} w={w}: {a} vs {b}");
                let a = theta3(w, tau).unwrap();
                let b = theta3_direct(w, tau).unwrap();
                assert!((a - b).norm() < 1e-11 * b.norm(), "θ₃ τ={tau} w={w}: {a} vs {b}");
            }
            let h = 1e-5;
            let fd = (theta1_direct(C::new(h, 0.0), tau).unwrap() - theta1_direct(C::new(-h, 0.0), tau).unwrap()) / (2.0 * h);
            assert!((theta1_prime0(tau).unwrap() - fd).norm() < 1e-8 * fd.norm());
        }
    }

    #[test]
    fn wp_matches_q_series() {
        let mut r = rng();
        for ell in [PI, 2.0 * PI, 3.0 * PI, 12.0] {
            let ctx = EllipticContext::new(ell).unwrap();
            for _ in 0..20 {
                let z = random_point(&mut r, ell);
                let a = ctx.wp(z).unwrap();
                let b = wp_qseries(z, ell);
                assert!((a - b).norm() < 1e-10 * b.norm().max(1.0), "ℓ={ell} z={z}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn laurent_normalization() {
        let ctx = EllipticContext::new(2.0 * PI).unwrap();
        for z in [C::new(0.01, 0.0), C::new(0.0, 0.02), C::new(0.01, 0.01)] {
            let rem = ctx.wp(z).unwrap() - z.powi(-2);
            assert!(rem.norm() < 1e-5, "{rem}");
        }
        assert!(matches!(ctx.wp(C::new(2.0 * PI, 2.0 * PI)), Err(Error::Pole(_))));
    }

    #[test]
    fn wp_derivatives_match_finite_differences() {
        let ctx = EllipticContext::new(2.5 * PI).unwrap();
        let z = C::new(1.1, 0.7);
        let h = 1e-4;
        for k in 0..MAX_WP_DERIV {
            let fd = (ctx.wp_deriv(z + h, k).unwrap() - ctx.wp_deriv(z - h, k).unwrap()) / (2.0 * h);
            let an = ctx.wp_deriv(z, k + 1).unwrap();
            assert!((fd - an).norm() < 1e-6 * an.norm().max(1.0), "k={k}: {fd} vs {an}");
        }
    }

    #[test]
    fn critical_points_and_cubic() {
        let mut r = rng();
        for ell in [PI, 2.0 * PI, 3.0 * PI] {
            let ctx = EllipticContext::new(ell).unwrap();
            for h in ctx.half_periods() {
                assert!(ctx.wp_deriv(h, 1).unwrap().norm() < 1e-10);
            }
            for _ in 0..20 {
                let z = random_point(&mut r, ell);
                let p = ctx.wp(z).unwrap();
                let d = ctx.wp_deriv(z, 1).unwrap();
                let rhs = (p - ctx.e1) * (p - ctx.e2) * (p - ctx.e3) * 4.0;
                assert!((d * d - rhs).norm() < 1e-9 * rhs.norm().max(1.0));
            }
            let c = ctx.c_ell;
            assert!(ctx.e2 + c < ctx.e3 + c && ctx.e3 + c < 0.0 && 0.0 < ctx.e1 + c);
        }
    }

    #[test]
    fn even_and_odd() {
        let mut r = rng();
        let ctx = EllipticContext::new(2.0 * PI).unwrap();
        for _ in 0..50 {
            let z = random_point(&mut r, ctx.ell);
            assert!((ctx.wp(-z).unwrap() - ctx.wp(z).unwrap()).norm() < 1e-10);
            assert!((ctx.wp_deriv(-z, 1).unwrap() + ctx.wp_deriv(z, 1).unwrap()).norm() < 1e-10);
        }
    }

    #[test]
    fn c_constant_closed_form_and_smoothness() {
        let mut prev: Option<f64> = None;
        for i in 0..40 {
            let ell = 2.0 + 0.25 * i as f64;
            let ctx = EllipticContext::new(ell).unwrap();
            assert!(ctx.c_imag_residue < 1e-12);
            let closed = -ctx.a - 1.0 / ell;
            assert!((ctx.c_ell - closed).abs() < 1e-10);
            if let Some(p) = prev {
                assert!((ctx.c_ell - p).abs() < 0.25);
            }
            prev = Some(ctx.c_ell);
        }
    }

    #[test]
    fn g_mu_residue_and_quasiperiodicity() {
        let mut r = rng();
        let tau = C::new(0.0, 1.0);
        for _ in 0..50 {
            let mu: f64 = r.gen_range(0.0..1.0);
            let w = C::new(r.gen_range(-0.5..0.5), r.gen_range(-0.4..0.4));
            let g = g_mu(w, mu, tau).unwrap();
            assert!((g_mu(w + 1.0, mu, tau).unwrap() + g).norm() < 1e-10 * g.norm().max(1.0));
            let shifted = g_mu(w + tau, mu, tau).unwrap();
            let expected = -(C::new(0.0, -2.0 * PI * mu)).exp() * g;
            assert!((shifted - expected).norm() < 1e-10 * g.norm().max(1.0));
        }
        let eps = 1e-7;
        let res = g_mu(C::new(eps, 0.0), 0.3, tau).unwrap() * eps;
        assert!((res - 2.0 / (PI * I)).norm() < 1e-6);
        assert!(matches!(g_mu(tau, 0.3, tau), Err(Error::Pole(_))));
    }

    #[test]
    fn f_mu_zero_and_product_identity() {
        let mut r = rng();
        let ctx = EllipticContext::new(2.0 * PI).unwrap();
        for _ in 0..20 {
            let mu: f64 = r.gen_range(0.0..1.0);
            let zm = ctx.mu_point(mu).z_mu;
            assert!(ctx.f_mu(zm, mu).unwrap().norm() < 1e-10);
            let z = random_point(&mut r, ctx.ell);
            let lhs = ctx.f_mu(z, mu).unwrap() * ctx.f_mu(-z, mu).unwrap() * (PI * PI / 4.0);
            let rhs = ctx.wp(z).unwrap() - ctx.wp(zm).unwrap();
            assert!((lhs - rhs).norm() < 1e-10 * rhs.norm().max(1.0));
        }
    }
}
