//! Height functions, exact determinantal moments and Monte Carlo estimates.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kasteleyn::{CouplingTable, KasteleynSystem};
use crate::lattice::{CylinderDomain, DimerCover, DualPath, DualVertex, Edge};

/// Height values on all dual vertices, indexed like
/// [`CylinderDomain::dual_vertices`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeightField {
    pub values: Vec<i64>,
}

impl HeightField {
    pub fn at(&self, domain: &CylinderDomain, v: DualVertex) -> Option<i64> {
        domain.dual_index(v).map(|i| self.values[i])
    }
}

fn indicator(cover: &DimerCover, e: Edge) -> i64 {
    i64::from(cover.contains(e))
}

/// Height of `cover` relative to `reference`, zero on the outer face.
/// Every dual edge is checked for consistency after the breadth-first fill.
pub fn height_from_cover(
    cover: &DimerCover,
    reference: &DimerCover,
    domain: &CylinderDomain,
) -> Result<HeightField> {
    let n = domain.n_faces() + 2;
    let mut adj: Vec<Vec<(usize, i64)>> = vec![Vec::new(); n];
    let mut checks = Vec::new();
    for e in domain.edges() {
        let g = domain.edge_geometry(e);
        let step = domain.cross(e, g.right).expect("edge borders its right face");
        let inc = i64::from(step.sign) * (indicator(cover, e) - indicator(reference, e));
        let (r, l) = (
            domain.dual_index(g.right).expect("dual vertex"),
            domain.dual_index(g.left).expect("dual vertex"),
        );
        adj[r].push((l, inc));
        adj[l].push((r, -inc));
        checks.push((r, l, inc));
    }
    let mut values: Vec<Option<i64>> = vec![None; n];
    values[0] = Some(0);
    let mut queue = VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        let hu = values[u].expect("visited");
        for &(v, inc) in &adj[u] {
            if values[v].is_none() {
                values[v] = Some(hu + inc);
                queue.push_back(v);
            }
        }
    }
    for (r, l, inc) in checks {
        if values[l] != values[r].map(|x| x + inc) {
            return Err(Error::Numerical(format!(
                "height is path dependent across dual vertices {r} and {l}; the cover is invalid"
            )));
        }
    }
    Ok(HeightField { values: values.into_iter().map(|v| v.unwrap_or(0)).collect() })
}

/// Sum of `sign · (1[e ∈ cover] - 1[e ∈ reference])` along a dual path.
pub fn height_along(path: &DualPath, cover: &DimerCover, reference: &DimerCover) -> i64 {
    path.steps
        .iter()
        .map(|s| i64::from(s.sign) * (indicator(cover, s.edge) - indicator(reference, s.edge)))
        .sum()
}

/// Height on the top face.
pub fn top_height(cover: &DimerCover, reference: &DimerCover, domain: &CylinderDomain) -> Result<i64> {
    let path = domain.dual_path(0, DualVertex::Top)?;
    Ok(height_along(&path, cover, reference))
}

/// Joint edge probabilities in the real gauge, where
/// `P[e_1..e_k] = det T(w_j, b_l) · Π S(b_l, w_l)`.
struct JointProb<'a> {
    system: &'a KasteleynSystem,
    table: &'a CouplingTable,
}

impl JointProb<'_> {
    fn of(&self, edges: &[Edge]) -> f64 {
        let mut distinct: Vec<Edge> = Vec::with_capacity(edges.len());
        for &e in edges {
            if !distinct.contains(&e) {
                distinct.push(e);
            }
        }
        for i in 0..distinct.len() {
            for j in 0..i {
                if distinct[i].black == distinct[j].black || distinct[i].white == distinct[j].white {
                    return 0.0;
                }
            }
        }
        let t = self.table.real();
        let m = |j: usize, k: usize| t[(distinct[j].white, distinct[k].black)];
        let det = match distinct.len() {
            0 => 1.0,
            1 => m(0, 0),
            2 => m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0),
            3 => {
                m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1))
                    - m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0))
                    + m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0))
            }
            _ => unreachable!("at most three edges"),
        };
        distinct.iter().fold(det, |acc, &e| acc * self.system.real_entry(e))
    }
}

/// `E[Π_k ħ(v_k)]` for up to three dual vertices given by their dual paths
/// from the outer face, where `ħ` is the height minus its mean.
pub fn exact_centered_product(
    system: &KasteleynSystem,
    table: &CouplingTable,
    paths: &[&DualPath],
) -> Result<f64> {
    let n = paths.len();
    if n > 3 {
        return Err(Error::TooLarge(format!("exact moments limited to order 3, got {n}")));
    }
    if n == 0 {
        return Ok(1.0);
    }
    let jp = JointProb { system, table };
    let steps: Vec<Vec<(Edge, f64, f64)>> = paths
        .iter()
        .map(|p| p.steps.iter().map(|s| (s.edge, f64::from(s.sign), jp.of(&[s.edge]))).collect())
        .collect();

    // E[Π (X_i - p_i)] = Σ_S Π_{i∉S} (-p_i) · P[edges of S].
    let centered = |items: &[(Edge, f64)]| -> f64 {
        let k = items.len();
        let mut total = 0.0;
        let mut buf = Vec::with_capacity(k);
        for mask in 0u32..(1 << k) {
            buf.clear();
            let mut coef = 1.0;
            for (i, &(e, p)) in items.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    buf.push(e);
                } else {
                    coef *= -p;
                }
            }
            if coef != 0.0 {
                total += coef * jp.of(&buf);
            }
        }
        total
    };

    let total: f64 = steps[0]
        .par_iter()
        .map(|&(e0, s0, p0)| match n {
            1 => 0.0,
            2 => steps[1].iter().map(|&(e1, s1, p1)| s0 * s1 * centered(&[(e0, p0), (e1, p1)])).sum(),
            _ => steps[1]
                .iter()
                .flat_map(|&(e1, s1, p1)| {
                    steps[2].iter().map(move |&(e2, s2, p2)| (e1, s1, p1, e2, s2, p2))
                })
                .map(|(e1, s1, p1, e2, s2, p2)| {
                    s0 * s1 * s2 * centered(&[(e0, p0), (e1, p1), (e2, p2)])
                })
                .sum(),
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    Ok(total)
}

/// Exact `n`-th centered moment of the top-face height, `n ∈ {2, 3}`.
pub fn exact_moment(system: &KasteleynSystem, table: &CouplingTable, n: usize) -> Result<f64> {
    exact_moment_via(system, table, n, 0)
}

/// As [`exact_moment`], with the dual path entering through gap `start_gap`.
pub fn exact_moment_via(
    system: &KasteleynSystem,
    table: &CouplingTable,
    n: usize,
    start_gap: usize,
) -> Result<f64> {
    if !(2..=3).contains(&n) {
        return Err(Error::TooLarge(format!(
            "exact top moments are computed for orders 2 and 3 only, got {n}"
        )));
    }
    let path = system.domain().dual_path(start_gap, DualVertex::Top)?;
    let paths = vec![&path; n];
    exact_centered_product(system, table, &paths)
}

/// Mean of the top-face height relative to the reference cover.
pub fn exact_mean_top(system: &KasteleynSystem, table: &CouplingTable, reference: &DimerCover) -> Result<f64> {
    let path = system.domain().dual_path(0, DualVertex::Top)?;
    Ok(path
        .steps
        .iter()
        .map(|s| f64::from(s.sign) * (table.edge_probability(system, s.edge) - indicator(reference, s.edge) as f64))
        .sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

/// Minimum sample count for Monte Carlo estimators.
pub const MIN_SAMPLES: usize = 1000;

/// Sample covariance of two height series with a jackknife standard error.
pub fn empirical_h2(h1: &[f64], h2: &[f64]) -> Result<Estimate> {
    let n = h1.len();
    if n != h2.len() {
        return Err(Error::Precondition("series lengths differ".into()));
    }
    if n < MIN_SAMPLES {
        return Err(Error::Precondition(format!("need at least {MIN_SAMPLES} samples, got {n}")));
    }
    let nf = n as f64;
    let (m1, m2) = (h1.iter().sum::<f64>() / nf, h2.iter().sum::<f64>() / nf);
    let (mut sx, mut sy, mut sxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in h1.iter().zip(h2) {
        let (x, y) = (a - m1, b - m2);
        sx += x;
        sy += y;
        sxy += x * y;
    }
    let cov = |sx: f64, sy: f64, sxy: f64, k: f64| sxy / k - (sx / k) * (sy / k);
    let full = cov(sx, sy, sxy, nf);
    let mut acc = 0.0;
    for (&a, &b) in h1.iter().zip(h2) {
        let (x, y) = (a - m1, b - m2);
        let loo = cov(sx - x, sy - y, sxy - x * y, nf - 1.0);
        acc += (loo - full) * (loo - full);
    }
    Ok(Estimate { value: full, se: ((nf - 1.0) / nf * acc).sqrt() })
}

/// `k`-th central moment (`k` in 2..=4) with a jackknife standard error.
pub fn central_moment(samples: &[f64], k: u32) -> Result<Estimate> {
    let n = samples.len();
    if !(2..=4).contains(&k) {
        return Err(Error::Precondition(format!("central moment order {k} unsupported")));
    }
    if n < MIN_SAMPLES {
        return Err(Error::Precondition(format!("need at least {MIN_SAMPLES} samples, got {n}")));
    }
    let nf = n as f64;
    let shift = samples.iter().sum::<f64>() / nf;
    let mut s = [0.0f64; 5];
    for &x in samples {
        let y = x - shift;
        let mut p = 1.0;
        for item in s.iter_mut() {
            *item += p;
            p *= y;
        }
    }
    let from_sums = |s: &[f64; 5]| -> f64 {
        let m = s[0];
        let r: Vec<f64> = (0..5).map(|j| s[j] / m).collect();
        let mu = r[1];
        match k {
            2 => r[2] - mu * mu,
            3 => r[3] - 3.0 * mu * r[2] + 2.0 * mu.powi(3),
            _ => r[4] - 4.0 * mu * r[3] + 6.0 * mu * mu * r[2] - 3.0 * mu.powi(4),
        }
    };
    let full = from_sums(&s);
    let mut acc = 0.0;
    for &x in samples {
        let y = x - shift;
        let mut loo = s;
        let mut p = 1.0;
        for item in loo.iter_mut() {
            *item -= p;
            p *= y;
        }
        let v = from_sums(&loo);
        acc += (v - full) * (v - full);
    }
    Ok(Estimate { value: full, se: ((nf - 1.0) / nf * acc).sqrt() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    MonteCarlo,
    ExactDeterminantal,
}

/// Moments of the top-face height. Exact entries carry zero standard error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub domain_hash: String,
    pub delta: f64,
    pub method: Method,
    #[serde(rename = "M2")]
    pub m2: Option<f64>,
    #[serde(rename = "M3")]
    pub m3: Option<f64>,
    #[serde(rename = "M4")]
    pub m4: Option<f64>,
    pub se2: Option<f64>,
    pub se3: Option<f64>,
    pub se4: Option<f64>,
    pub n_samples: usize,
    pub seed: Option<u64>,
}

impl MomentReport {
    pub fn exact(system: &KasteleynSystem, table: &CouplingTable) -> Result<MomentReport> {
        let d = system.domain();
        Ok(MomentReport {
            domain_hash: d.hash_hex(),
            delta: d.delta(),
            method: Method::ExactDeterminantal,
            m2: Some(exact_moment(system, table, 2)?),
            m3: Some(exact_moment(system, table, 3)?),
            m4: None,
            se2: Some(0.0),
            se3: Some(0.0),
            se4: None,
            n_samples: 0,
            seed: None,
        })
    }

    pub fn monte_carlo(domain: &CylinderDomain, heights: &[f64], seed: u64) -> Result<MomentReport> {
        let m = [central_moment(heights, 2)?, central_moment(heights, 3)?, central_moment(heights, 4)?];
        Ok(MomentReport {
            domain_hash: domain.hash_hex(),
            delta: domain.delta(),
            method: Method::MonteCarlo,
            m2: Some(m[0].value),
            m3: Some(m[1].value),
            m4: Some(m[2].value),
            se2: Some(m[0].se),
            se3: Some(m[1].se),
            se4: Some(m[2].se),
            n_samples: heights.len(),
            seed: Some(seed),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Site;
    use crate::sampling::enumerate_covers;
    use std::sync::Arc;

    fn setup(w: usize, h: usize) -> (KasteleynSystem, CouplingTable) {
        let s = KasteleynSystem::assemble(Arc::new(CylinderDomain::straight(w, h).unwrap())).unwrap();
        let t = s.invert().unwrap();
        (s, t)
    }

    fn enumerated_top_moments(s: &KasteleynSystem) -> (f64, f64, f64) {
        let d = s.domain();
        let reference = d.reference_cover().unwrap();
        let hs: Vec<f64> = enumerate_covers(d)
            .unwrap()
            .iter()
            .map(|c| top_height(c, &reference, d).unwrap() as f64)
            .collect();
        let n = hs.len() as f64;
        let mean = hs.iter().sum::<f64>() / n;
        let m = |k: i32| hs.iter().map(|h| (h - mean).powi(k)).sum::<f64>() / n;
        (mean, m(2), m(3))
    }

    #[test]
    fn reference_has_zero_height() {
        let d = CylinderDomain::straight(8, 4).unwrap();
        let r = d.reference_cover().unwrap();
        let h = height_from_cover(&r, &r, &d).unwrap();
        assert!(h.values.iter().all(|&v| v == 0));
        assert_eq!(top_height(&r, &r, &d).unwrap(), 0);
    }

    #[test]
    fn horizontal_bottom_row_changes_top_height_by_one() {
        let d = CylinderDomain::straight(4, 2).unwrap();
        let reference = d.reference_cover().unwrap();
        let covers = enumerate_covers(&d).unwrap();
        for c in &covers {
            let field = height_from_cover(c, &reference, &d).unwrap();
            let top = field.at(&d, DualVertex::Top).unwrap();
            assert_eq!(top, top_height(c, &reference, &d).unwrap());
        }
        // Bottom row dominoes on columns {0,1}, {2,3} and top row on {1,2},
        // {3,0}. The path through gap 0 crosses the bottom domino with its
        // white end (1,0) on the right, and no top-row domino.
        let pair = |a: (usize, i64), b: (usize, i64)| {
            d.edge_between(Site::new(a.0, a.1), Site::new(b.0, b.1)).unwrap()
        };
        let edges = [pair((0, 0), (1, 0)), pair((2, 0), (3, 0)), pair((1, 1), (2, 1)), pair((3, 1), (0, 1))];
        let mut matching = vec![0; 4];
        for e in edges {
            matching[e.white] = e.black;
        }
        let cover = DimerCover { matching };
        assert!(d.is_perfect_matching(&cover));
        assert_eq!(top_height(&cover, &reference, &d).unwrap(), -1);
        let mirrored = [pair((0, 0), (1, 0)), pair((2, 0), (3, 0)), pair((0, 1), (1, 1)), pair((2, 1), (3, 1))];
        let mut matching = vec![0; 4];
        for e in mirrored {
            matching[e.white] = e.black;
        }
        assert_eq!(top_height(&DimerCover { matching }, &reference, &d).unwrap(), 0);
    }

    #[test]
    fn exact_moments_match_enumeration() {
        for (w, h) in [(4, 2), (6, 4), (4, 4)] {
            let (s, t) = setup(w, h);
            let (mean, m2, m3) = enumerated_top_moments(&s);
            let r = s.domain().reference_cover().unwrap();
            assert!((exact_mean_top(&s, &t, &r).unwrap() - mean).abs() < 1e-10);
            assert!((exact_moment(&s, &t, 2).unwrap() - m2).abs() < 1e-10, "{w}x{h}");
            assert!((exact_moment(&s, &t, 3).unwrap() - m3).abs() < 1e-10, "{w}x{h}");
        }
    }

    #[test]
    fn exact_second_moment_is_path_independent() {
        let (s, t) = setup(8, 4);
        let a = exact_moment_via(&s, &t, 2, 0).unwrap();
        for g in 1..8 {
            assert!((exact_moment_via(&s, &t, 2, g).unwrap() - a).abs() < 1e-12);
        }
        assert!(a > 0.0);
        assert!(exact_moment(&s, &t, 4).is_err());
    }

    #[test]
    fn jackknife_of_known_series() {
        let xs: Vec<f64> = (0..2000).map(|i| (i % 4) as f64).collect();
        let v = central_moment(&xs, 2).unwrap();
        assert!((v.value - 1.25).abs() < 1e-12);
        assert!(v.se > 0.0 && v.se < 0.05);
        let c = empirical_h2(&xs, &xs).unwrap();
        assert!((c.value - 1.25).abs() < 1e-12);
        let zeros = vec![0.0; 2000];
        assert_eq!(empirical_h2(&zeros, &zeros).unwrap().value, 0.0);
        assert!(central_moment(&xs[..10], 2).is_err());
    }

    #[test]
    fn report_serializes_with_documented_keys() {
        let (s, t) = setup(4, 2);
        let r = MomentReport::exact(&s, &t).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        for key in ["domain_hash", "delta", "method", "M2", "M3", "M4", "se2", "se3", "se4", "n_samples", "seed"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["method"], "exact_determinantal");
    }
}
