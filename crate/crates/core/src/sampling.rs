//! Exact dimer sampling, enumeration of covers and joint edge probabilities.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kasteleyn::{CouplingTable, KasteleynSystem};
use crate::lattice::{CylinderDomain, Edge};
use crate::linalg;

pub use crate::lattice::DimerCover;

/// Largest `|Σ p - 1|` tolerated at a sampling step before the remaining
/// table is recomputed from scratch.
pub const DRIFT_TOL: f64 = 1e-8;

/// Largest domain, in vertices, accepted by [`enumerate_covers`].
pub const ENUMERATION_LIMIT: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeProbability {
    /// Probability clamped to `[0, 1]`.
    pub value: f64,
    /// Imaginary part of the raw determinant product.
    pub imag_residue: f64,
    /// Distance the real part was moved by clamping.
    pub clamp_residue: f64,
}

/// Probability that all edges in `edges` belong to the random cover.
pub fn multi_edge_probability(
    table: &CouplingTable,
    system: &KasteleynSystem,
    edges: &[Edge],
) -> Result<EdgeProbability> {
    let n = edges.len();
    for i in 0..n {
        if system.real_entry(edges[i]) == 0.0 {
            return Err(Error::Precondition(format!("{:?} is not an edge", edges[i])));
        }
        for j in 0..i {
            if edges[i].black == edges[j].black || edges[i].white == edges[j].white {
                return Err(Error::Precondition(format!(
                    "edges {:?} and {:?} share a vertex",
                    edges[j], edges[i]
                )));
            }
        }
    }
    if n == 0 {
        return Ok(EdgeProbability { value: 1.0, imag_residue: 0.0, clamp_residue: 0.0 });
    }
    let m = DMatrix::from_fn(n, n, |j, k| table.coupling(edges[j].white, edges[k].black));
    let mut raw: Complex64 = m.determinant();
    for e in edges {
        raw *= system.k(*e);
    }
    let clamped = raw.re.clamp(0.0, 1.0);
    let clamp_residue = (raw.re - clamped).abs();
    if raw.im.abs() > 1e-10 || clamp_residue > 1e-10 {
        log::warn!("edge probability {raw} clamped to {clamped}");
    }
    Ok(EdgeProbability { value: clamped, imag_residue: raw.im.abs(), clamp_residue })
}

/// All perfect matchings of a small domain, by backtracking over whites in
/// index order.
pub fn enumerate_covers(domain: &CylinderDomain) -> Result<Vec<DimerCover>> {
    let nv = domain.vertices().len();
    if nv > ENUMERATION_LIMIT {
        return Err(Error::TooLarge(format!(
            "enumeration limited to {ENUMERATION_LIMIT} vertices, domain has {nv}"
        )));
    }
    if domain.n_black() != domain.n_white() {
        return Ok(Vec::new());
    }
    let nbrs: Vec<Vec<usize>> =
        (0..domain.n_white()).map(|w| domain.white_neighbors(w).into_iter().map(|(b, _)| b).collect()).collect();
    let mut out = Vec::new();
    let mut used = vec![false; domain.n_black()];
    let mut current = vec![usize::MAX; domain.n_white()];

    fn go(
        w: usize,
        nbrs: &[Vec<usize>],
        used: &mut [bool],
        current: &mut [usize],
        out: &mut Vec<DimerCover>,
    ) {
        if w == nbrs.len() {
            out.push(DimerCover { matching: current.to_vec() });
            return;
        }
        for &b in &nbrs[w] {
            if !used[b] {
                used[b] = true;
                current[w] = b;
                go(w + 1, nbrs, used, current, out);
                used[b] = false;
            }
        }
    }
    go(0, &nbrs, &mut used, &mut current, &mut out);
    Ok(out)
}

/// Per-sample random stream: the master seed selects the key, the sample
/// index selects the stream, so batches are reproducible under any schedule.
pub fn sample_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Sequential conditional sampler working on a private copy of the real
/// gauge table.
pub struct Sampler<'a> {
    system: &'a KasteleynSystem,
    table: &'a CouplingTable,
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl<'a> Sampler<'a> {
    pub fn new(system: &'a KasteleynSystem, table: &'a CouplingTable) -> Sampler<'a> {
        let neighbors = (0..system.n()).map(|w| system.white_row(w).collect()).collect();
        Sampler { system, table, neighbors }
    }

    /// One exact sample using the stream `(master_seed, index)`.
    pub fn sample(&self, master_seed: u64, index: u64) -> Result<DimerCover> {
        let mut rng = sample_rng(master_seed, index);
        self.sample_with(&mut rng)
    }

    pub fn sample_with<R: Rng>(&self, rng: &mut R) -> Result<DimerCover> {
        let n = self.system.n();
        let src = self.table.real();
        // Row-major live table; active blacks occupy columns 0..m.
        let mut t = vec![0.0; n * n];
        for w in 0..n {
            for b in 0..n {
                t[w * n + b] = src[(w, b)];
            }
        }
        let mut col_of: Vec<usize> = (0..n).collect();
        let mut black_at: Vec<usize> = (0..n).collect();
        let mut matching = vec![usize::MAX; n];
        let mut probs: Vec<(usize, f64)> = Vec::with_capacity(4);

        for w in 0..n {
            let m = n - w;
            let collect = |t: &[f64], probs: &mut Vec<(usize, f64)>| -> f64 {
                probs.clear();
                let mut total = 0.0;
                for &(b, s) in &self.neighbors[w] {
                    let c = col_of[b];
                    if c < m {
                        let p = s * t[w * n + c];
                        total += p;
                        probs.push((b, p));
                    }
                }
                total
            };
            let mut total = collect(&t, &mut probs);
            if (total - 1.0).abs() > DRIFT_TOL {
                log::debug!("sampler drift {:.3e} at step {w}; refactorizing", total - 1.0);
                self.refactorize(&mut t, n, w, &black_at)?;
                total = collect(&t, &mut probs);
                if (total - 1.0).abs() > DRIFT_TOL {
                    return Err(Error::Numerical(format!(
                        "conditional probabilities sum to {total} at step {w} after refactorization"
                    )));
                }
            }
            let u: f64 = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = probs.last().map(|x| x.0).ok_or_else(|| {
                Error::Numerical(format!("white {w} has no available neighbor"))
            })?;
            for &(b, p) in &probs {
                acc += p.max(0.0);
                if u < acc {
                    chosen = b;
                    break;
                }
            }
            matching[w] = chosen;

            let c = col_of[chosen];
            let last = m - 1;
            // Move the chosen column to position `last`, outside the new active range.
            if c != last {
                for row in w..n {
                    t.swap(row * n + c, row * n + last);
                }
                let other = black_at[last];
                black_at.swap(c, last);
                col_of[other] = c;
                col_of[chosen] = last;
            }
            let pivot = t[w * n + last];
            if pivot.abs() < 1e-300 {
                return Err(Error::Numerical(format!("zero pivot at step {w}")));
            }
            let (head, tail) = t.split_at_mut((w + 1) * n);
            let prow = &head[w * n..w * n + last];
            tail.par_chunks_mut(n).with_min_len(64).for_each(|row| {
                let f = row[last] / pivot;
                if f != 0.0 {
                    for (x, &y) in row[..last].iter_mut().zip(prow) {
                        *x -= f * y;
                    }
                }
            });
        }
        Ok(DimerCover { matching })
    }

    /// Replaces the live table rows `w..n`, columns `0..n-w` by the inverse of
    /// the corresponding Kasteleyn submatrix.
    fn refactorize(&self, t: &mut [f64], n: usize, w: usize, black_at: &[usize]) -> Result<()> {
        let m = n - w;
        let mut sub = DMatrix::zeros(m, m);
        for (j, wi) in (w..n).enumerate() {
            for &(b, s) in &self.neighbors[wi] {
                if let Some(i) = black_at[..m].iter().position(|&x| x == b) {
                    sub[(i, j)] = s;
                }
            }
        }
        let (_, inv) = linalg::lu_inverse(sub)?;
        for (j, wi) in (w..n).enumerate() {
            for i in 0..m {
                t[wi * n + i] = inv[(j, i)];
            }
        }
        Ok(())
    }

    /// Draws `count` samples in parallel and maps each through `f`.
    pub fn sample_map<T, F>(&self, master_seed: u64, count: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&DimerCover) -> T + Sync,
    {
        (0..count as u64)
            .into_par_iter()
            .map(|i| self.sample(master_seed, i).map(|c| f(&c)))
            .collect()
    }
}

/// One exact sample with stream index 0 of `seed`.
pub fn sample_cover(system: &KasteleynSystem, table: &CouplingTable, seed: u64) -> Result<DimerCover> {
    Sampler::new(system, table).sample(seed, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;
    use std::sync::Arc;

    fn setup(w: usize, h: usize) -> (KasteleynSystem, CouplingTable) {
        let s = KasteleynSystem::assemble(Arc::new(CylinderDomain::straight(w, h).unwrap())).unwrap();
        let t = s.invert().unwrap();
        (s, t)
    }

    #[test]
    fn enumeration_count_matches_determinant() {
        for (w, h) in [(4, 2), (6, 4), (4, 4)] {
            let (s, _) = setup(w, h);
            let covers = enumerate_covers(s.domain()).unwrap();
            let from_det = (s.log_abs_det() - s.n() as f64 * s.domain().delta().ln()).exp();
            assert!((covers.len() as f64 - from_det).abs() < 1e-9 * from_det, "{w}x{h}");
            assert!(covers.iter().all(|c| s.domain().is_perfect_matching(c)));
        }
    }

    #[test]
    fn single_edge_matches_enumeration_frequency() {
        let (s, t) = setup(4, 2);
        let covers = enumerate_covers(s.domain()).unwrap();
        for e in s.domain().edges() {
            let freq = covers.iter().filter(|c| c.contains(e)).count() as f64 / covers.len() as f64;
            let p = multi_edge_probability(&t, &s, &[e]).unwrap();
            assert!((p.value - freq).abs() < 1e-12);
            assert!(p.imag_residue < 1e-12);
        }
    }

    #[test]
    fn incompatible_pair_has_zero_probability() {
        let mut found = 0;
        // A one-column spike forces its lowest domino, which rules out pairs
        // using the spike's second vertex elsewhere.
        let spike = CylinderDomain::staircase(4, vec![0, 2, 2, 2], vec![6; 4]).unwrap();
        for d in [CylinderDomain::straight(6, 4).unwrap(), spike] {
            let s = KasteleynSystem::assemble(Arc::new(d)).unwrap();
            let t = s.invert().unwrap();
            let covers = enumerate_covers(s.domain()).unwrap();
            let edges = s.domain().edges();
            for (i, &a) in edges.iter().enumerate() {
                for &b in &edges[..i] {
                    if a.black == b.black || a.white == b.white {
                        continue;
                    }
                    if covers.iter().any(|c| c.contains(a) && c.contains(b)) {
                        continue;
                    }
                    let p = multi_edge_probability(&t, &s, &[a, b]).unwrap();
                    assert!(p.value.abs() < 1e-10);
                    found += 1;
                }
            }
        }
        assert!(found > 0);
    }

    #[test]
    fn empty_and_shared_vertex_sets() {
        let (s, t) = setup(4, 2);
        assert_eq!(multi_edge_probability(&t, &s, &[]).unwrap().value, 1.0);
        let w0 = s.domain().white_neighbors(0);
        let e1 = Edge { black: w0[0].0, white: 0 };
        let e2 = Edge { black: w0[1].0, white: 0 };
        assert!(multi_edge_probability(&t, &s, &[e1, e2]).is_err());
    }

    #[test]
    fn enumeration_guard() {
        let d = CylinderDomain::straight(8, 4).unwrap();
        assert!(matches!(enumerate_covers(&d), Err(Error::TooLarge(_))));
    }

    #[test]
    fn samples_are_deterministic_and_valid() {
        let (s, t) = setup(8, 4);
        let sampler = Sampler::new(&s, &t);
        let a = sampler.sample(42, 3).unwrap();
        let b = sampler.sample(42, 3).unwrap();
        assert_eq!(a, b);
        assert!(s.domain().is_perfect_matching(&a));
        assert_eq!(sample_cover(&s, &t, 9).unwrap(), sampler.sample(9, 0).unwrap());
        let many = sampler.sample_map(7, 200, |c| c.clone()).unwrap();
        assert!(many.iter().all(|c| s.domain().is_perfect_matching(c)));
        let distinct: std::collections::HashSet<_> = many.iter().collect();
        assert!(distinct.len() > 10);
    }

    #[test]
    fn sampler_hits_every_cover_of_small_domain() {
        let (s, t) = setup(4, 2);
        let covers = enumerate_covers(s.domain()).unwrap();
        let sampler = Sampler::new(&s, &t);
        let mut counts: HashMap<DimerCover, usize> = HashMap::new();
        for c in sampler.sample_map(1, 2000, |c| c.clone()).unwrap() {
            *counts.entry(c).or_default() += 1;
        }
        assert_eq!(counts.len(), covers.len());
    }

    #[test]
    fn refactorization_restores_table() {
        let (s, t) = setup(6, 4);
        let sampler = Sampler::new(&s, &t);
        let n = s.n();
        let mut live = vec![0.0; n * n];
        let black_at: Vec<usize> = (0..n).collect();
        sampler.refactorize(&mut live, n, 0, &black_at).unwrap();
        for w in 0..n {
            for b in 0..n {
                assert!((live[w * n + b] - t.real()[(w, b)]).abs() < 1e-12);
            }
        }
    }
}
