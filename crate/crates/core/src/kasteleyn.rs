//! Kasteleyn matrix, its inverse (the coupling table) and discrete complex
//! analysis diagnostics.
//!
//! Around each white vertex the weights are `δ, iδ, -δ, -iδ` for the black
//! neighbor below, right, above and left, with an extra factor `-1` on edges
//! crossing the seam. Every weight satisfies `K(b,w) ∈ conj(η_b η_w) ℝ`, so
//! `S(b,w) = η_b η_w K(b,w) / δ` is a real `±1` matrix. All factorizations run
//! on `S`; complex values are restored on demand.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{CylinderDomain, Dir, DualVertex, Edge, Site, VertexType};
use crate::linalg;

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Clone, Copy, Debug)]
struct Neighbor {
    black: usize,
    dir: Dir,
    sign: f64,
}

#[derive(Debug)]
pub struct KasteleynSystem {
    domain: Arc<CylinderDomain>,
    around_white: Vec<Vec<Neighbor>>,
    log_abs_det: OnceLock<f64>,
}

fn base_weight(dir: Dir) -> Complex64 {
    match dir {
        Dir::Down => Complex64::new(1.0, 0.0),
        Dir::Right => I,
        Dir::Up => Complex64::new(-1.0, 0.0),
        Dir::Left => -I,
    }
}

impl KasteleynSystem {
    /// Assembles the weights and checks the alternating product around every
    /// square face.
    pub fn assemble(domain: Arc<CylinderDomain>) -> Result<KasteleynSystem> {
        if domain.n_black() != domain.n_white() {
            return Err(Error::InvalidDomain(format!(
                "Kasteleyn matrix is not square: {} black vs {} white vertices",
                domain.n_black(),
                domain.n_white()
            )));
        }
        let delta = domain.delta();
        let mut around_white = Vec::with_capacity(domain.n_white());
        for w in 0..domain.n_white() {
            let ws = domain.white(w).site;
            let wt = domain.white(w).ty;
            let mut list = Vec::with_capacity(4);
            for (b, dir) in domain.white_neighbors(w) {
                let mut k = base_weight(dir) * delta;
                if domain.crosses_seam(ws, dir) {
                    k = -k;
                }
                let real = k * domain.black(b).ty.eta() * wt.eta() / delta;
                debug_assert!(real.im.abs() < 1e-12 && (real.re.abs() - 1.0).abs() < 1e-12);
                list.push(Neighbor { black: b, dir, sign: real.re.signum() });
            }
            around_white.push(list);
        }
        let system = KasteleynSystem { domain, around_white, log_abs_det: OnceLock::new() };
        for (face, product) in system.face_products() {
            if (product + 1.0).norm() > 1e-12 {
                return Err(Error::FaceCondition { face: face.to_string(), product });
            }
        }
        Ok(system)
    }

    pub fn domain(&self) -> &CylinderDomain {
        &self.domain
    }

    pub fn domain_arc(&self) -> Arc<CylinderDomain> {
        Arc::clone(&self.domain)
    }

    pub fn n(&self) -> usize {
        self.around_white.len()
    }

    /// `K(b, w)`, zero unless `b` and `w` are adjacent.
    pub fn k(&self, e: Edge) -> Complex64 {
        let s = self.real_entry(e);
        if s == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let d = &self.domain;
        let eta = d.black(e.black).ty.eta() * d.white(e.white).ty.eta();
        eta.conj() * s * d.delta()
    }

    /// The real gauge entry `S(b, w) ∈ {-1, 0, 1}`.
    pub fn real_entry(&self, e: Edge) -> f64 {
        self.around_white[e.white]
            .iter()
            .find(|n| n.black == e.black)
            .map_or(0.0, |n| n.sign)
    }

    /// Whether the edge crosses the seam.
    pub fn cut_flag(&self, e: Edge) -> bool {
        let d = &self.domain;
        self.around_white[e.white]
            .iter()
            .find(|n| n.black == e.black)
            .is_some_and(|n| d.crosses_seam(d.white(e.white).site, n.dir))
    }

    /// Neighbors of white `w` as `(black, S(b,w))`.
    pub fn white_row(&self, w: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.around_white[w].iter().map(|n| (n.black, n.sign))
    }

    /// The real gauge matrix indexed `(black, white)`.
    pub fn real_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        for (w, list) in self.around_white.iter().enumerate() {
            for nb in list {
                m[(nb.black, w)] = nb.sign;
            }
        }
        m
    }

    /// Alternating products `Π K(w→b) / Π K(b→w)` around each square face,
    /// traversed counterclockwise.
    pub fn face_products(&self) -> Vec<(DualVertex, Complex64)> {
        let d = &self.domain;
        let mut out = Vec::with_capacity(d.n_faces());
        for v in d.dual_vertices() {
            let DualVertex::Face { gap, row } = v else { continue };
            let h = (gap + 1) % d.width();
            let corners = [
                Site::new(gap, row),
                Site::new(h, row),
                Site::new(h, row + 1),
                Site::new(gap, row + 1),
            ];
            let mut prod = Complex64::new(1.0, 0.0);
            for i in 0..4 {
                let (a, b) = (corners[i], corners[(i + 1) % 4]);
                let e = d.edge_between(a, b).expect("face edge");
                let k = self.k(e) / d.delta();
                if d.white_index(a).is_some() {
                    prod *= k;
                } else {
                    prod /= k;
                }
            }
            out.push((v, prod));
        }
        out
    }

    /// `log |det K|`, or `-inf` when the domain has no dimer cover.
    pub fn log_abs_det(&self) -> f64 {
        *self.log_abs_det.get_or_init(|| {
            let n = self.n() as f64;
            match linalg::lu_log_abs_det(self.real_matrix()) {
                Ok(l) => l + n * self.domain.delta().ln(),
                Err(_) => f64::NEG_INFINITY,
            }
        })
    }

    /// Dense inverse. Fails when the matrix is numerically singular.
    pub fn invert(&self) -> Result<CouplingTable> {
        let s = self.real_matrix();
        let (logdet, inv) = linalg::lu_inverse(s)?;
        let _ = self
            .log_abs_det
            .set(logdet + self.n() as f64 * self.domain.delta().ln());
        let table = CouplingTable::from_real_inverse(self, inv);
        Ok(table)
    }
}

/// `log |det K|` of the assembled system, `-inf` when there is no cover.
pub fn partition_function_log(system: &KasteleynSystem) -> f64 {
    system.log_abs_det()
}

/// Dense `K⁻¹`, stored in the real gauge: `K⁻¹(w,b) = η_w η_b T(w,b) / δ`.
#[derive(Clone, Debug)]
pub struct CouplingTable {
    inv: DMatrix<f64>,
    delta: f64,
    eta_w: Vec<Complex64>,
    eta_b: Vec<Complex64>,
    cut_column: usize,
    residual: f64,
}

impl CouplingTable {
    fn from_real_inverse(system: &KasteleynSystem, inv: DMatrix<f64>) -> CouplingTable {
        let d = system.domain();
        let mut table = CouplingTable {
            inv,
            delta: d.delta(),
            eta_w: (0..d.n_white()).map(|w| d.white(w).ty.eta()).collect(),
            eta_b: (0..d.n_black()).map(|b| d.black(b).ty.eta()).collect(),
            cut_column: d.cut_column(),
            residual: 0.0,
        };
        table.residual = table.identity_residual(system);
        table
    }

    /// `max |K K⁻¹ - I|`, computed from the sparse rows of `K`.
    fn identity_residual(&self, system: &KasteleynSystem) -> f64 {
        let n = system.n();
        let mut worst: f64 = 0.0;
        // (S T)(b, b') = Σ_w S(b,w) T(w,b'); accumulate column by column of T.
        let mut acc = vec![0.0; n];
        for bp in 0..n {
            acc.iter_mut().for_each(|x| *x = 0.0);
            for w in 0..n {
                let t = self.inv[(w, bp)];
                for (b, s) in system.white_row(w) {
                    acc[b] += s * t;
                }
            }
            for (b, &x) in acc.iter().enumerate() {
                let target = if b == bp { 1.0 } else { 0.0 };
                worst = worst.max((x - target).abs());
            }
        }
        worst
    }

    pub fn n(&self) -> usize {
        self.inv.nrows()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn cut_column(&self) -> usize {
        self.cut_column
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// `K⁻¹(w, b)`.
    pub fn coupling(&self, w: usize, b: usize) -> Complex64 {
        self.eta_w[w] * self.eta_b[b] * (self.inv[(w, b)] / self.delta)
    }

    /// The real gauge inverse `T = S⁻¹`, indexed `(white, black)`.
    pub fn real(&self) -> &DMatrix<f64> {
        &self.inv
    }

    /// `K(b,w) K⁻¹(w,b)`, the probability that edge `e` is in the cover.
    pub fn edge_probability(&self, system: &KasteleynSystem, e: Edge) -> f64 {
        system.real_entry(e) * self.inv[(e.white, e.black)]
    }

    /// `F_w(b) = conj(η_w) K⁻¹(w, b)` at a lattice site, zero off the domain.
    pub fn f_w(&self, domain: &CylinderDomain, w: usize, s: Site) -> Complex64 {
        match domain.black_index(s) {
            Some(b) => self.eta_w[w].conj() * self.coupling(w, b),
            None => Complex64::new(0.0, 0.0),
        }
    }
}

/// Largest violation of `F(u♯) - F(u♭) = i (F(u⁺) - F(u⁻))` over white
/// vertices `u ≠ w`, where `F = F_w` is extended by zero off the domain and
/// values across the seam carry a factor `-1`.
pub fn discrete_cr_residual(table: &CouplingTable, domain: &CylinderDomain, w: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for u in 0..domain.n_white() {
        if u == w {
            continue;
        }
        let us = domain.white(u).site;
        let f = |d: Dir| {
            let v = table.f_w(domain, w, domain.step(us, d));
            if domain.crosses_seam(us, d) {
                -v
            } else {
                v
            }
        };
        let r = f(Dir::Up) - f(Dir::Down) - I * (f(Dir::Right) - f(Dir::Left));
        worst = worst.max(r.norm());
    }
    worst
}

/// Rectangle of sites in unwrapped column coordinates: columns
/// `col0 .. col0 + ncols` (taken modulo `W` for lookups) and rows
/// `row0 ..= row1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patch {
    pub col0: i64,
    pub ncols: usize,
    pub row0: i64,
    pub row1: i64,
}

impl Patch {
    fn contains(&self, x: i64, r: i64) -> bool {
        x >= self.col0 && x < self.col0 + self.ncols as i64 && r >= self.row0 && r <= self.row1
    }

    fn strictly_contains(&self, x: i64, r: i64) -> bool {
        x > self.col0 && x < self.col0 + self.ncols as i64 - 1 && r > self.row0 && r < self.row1
    }
}

/// A discrete primitive `G_w` on one parity class of white sites.
#[derive(Clone, Debug)]
pub struct Primitive {
    /// Values keyed by unwrapped `(x, row)`.
    pub values: HashMap<(i64, i64), Complex64>,
    /// Largest mismatch between an increment and the corresponding difference.
    pub residual: f64,
}

impl Primitive {
    pub fn get(&self, x: i64, row: i64) -> Option<Complex64> {
        self.values.get(&(x, row)).copied()
    }

    /// Shifts by a purely imaginary constant so that `Im G` vanishes at the
    /// given site.
    pub fn normalize_imag_at(&mut self, x: i64, row: i64) -> Result<()> {
        let c = self
            .get(x, row)
            .ok_or_else(|| Error::Precondition(format!("no value at ({x}, {row})")))?;
        for v in self.values.values_mut() {
            *v -= Complex64::new(0.0, c.im);
        }
        Ok(())
    }
}

fn sheet_sign(domain: &CylinderDomain, x: i64) -> f64 {
    let k = (x - domain.cut_column() as i64).div_euclid(domain.width() as i64);
    if k.rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    }
}

fn wrap(domain: &CylinderDomain, x: i64) -> usize {
    x.rem_euclid(domain.width() as i64) as usize
}

/// `F_w` at the unwrapped black site `(x, row)`, including the sheet sign.
fn f_unwrapped(table: &CouplingTable, domain: &CylinderDomain, w: usize, x: i64, row: i64) -> Complex64 {
    table.f_w(domain, w, Site::new(wrap(domain, x), row)) * sheet_sign(domain, x)
}

/// Integrates `G(b⁺) - G(b⁻) = 2δ F_w(b)`, `G(b♯) - G(b♭) = 2iδ F_w(b)` over
/// the white sites of `patch` that share the column parity of `base`,
/// starting from `G(base) = 0`.
pub fn primitive_gw(
    table: &CouplingTable,
    domain: &CylinderDomain,
    w: usize,
    base: (i64, i64),
    patch: Patch,
) -> Result<Primitive> {
    let width = domain.width() as i64;
    if patch.ncols as i64 >= width {
        return Err(Error::Precondition(format!(
            "patch of {} columns winds around a cylinder of width {width}",
            patch.ncols
        )));
    }
    if !patch.contains(base.0, base.1) {
        return Err(Error::Precondition("base vertex outside the patch".into()));
    }
    let base_site = Site::new(wrap(domain, base.0), base.1);
    if VertexType::of_site(base_site.col, base_site.row).color != crate::lattice::Color::White {
        return Err(Error::Precondition(format!("base {base_site} is not a white site")));
    }
    let ws = domain.white(w).site;
    let parity = base.0.rem_euclid(2);
    if (ws.col as i64) % 2 != parity {
        let x0 = ws.col as i64 + width * (patch.col0 - ws.col as i64).div_euclid(width);
        for x in [x0, x0 + width] {
            if patch.strictly_contains(x, ws.row) {
                return Err(Error::Precondition(format!(
                    "patch surrounds the singular vertex {ws}; the primitive has monodromy there"
                )));
            }
        }
    }

    let delta = domain.delta();
    let mut adj: HashMap<(i64, i64), Vec<((i64, i64), Complex64)>> = HashMap::new();
    let mut link = |a: (i64, i64), b: (i64, i64), inc: Complex64| {
        adj.entry(a).or_default().push((b, inc));
        adj.entry(b).or_default().push((a, -inc));
    };
    for x in patch.col0..patch.col0 + patch.ncols as i64 {
        for r in patch.row0..=patch.row1 {
            let s = Site::new(wrap(domain, x), r);
            if domain.black_index(s).is_none() {
                continue;
            }
            let f = f_unwrapped(table, domain, w, x, r);
            if (x + 1).rem_euclid(2) == parity && patch.contains(x - 1, r) && patch.contains(x + 1, r) {
                link((x - 1, r), (x + 1, r), f * (2.0 * delta));
            }
            if x.rem_euclid(2) == parity && patch.contains(x, r - 1) && patch.contains(x, r + 1) {
                link((x, r - 1), (x, r + 1), f * I * (2.0 * delta));
            }
        }
    }

    let mut values = HashMap::new();
    values.insert(base, Complex64::new(0.0, 0.0));
    let mut queue = VecDeque::from([base]);
    while let Some(u) = queue.pop_front() {
        let gu = values[&u];
        if let Some(list) = adj.get(&u) {
            for &(v, inc) in list {
                values.entry(v).or_insert_with(|| {
                    queue.push_back(v);
                    gu + inc
                });
            }
        }
    }
    let mut residual: f64 = 0.0;
    for (u, list) in &adj {
        let Some(gu) = values.get(u) else { continue };
        for (v, inc) in list {
            if let Some(gv) = values.get(v) {
                residual = residual.max((gv - gu - inc).norm());
            }
        }
    }
    Ok(Primitive { values, residual })
}

/// Additive monodromy of `G_w` along the small counterclockwise loop through
/// the four diagonal neighbors of `w`.
pub fn monodromy_around(table: &CouplingTable, domain: &CylinderDomain, w: usize) -> Complex64 {
    let ws = domain.white(w).site;
    let (x, r) = (ws.col as i64, ws.row);
    let f = |dx: i64, dr: i64| f_unwrapped(table, domain, w, x + dx, r + dr) * sheet_sign(domain, x);
    let two_delta = 2.0 * domain.delta();
    (f(1, 0) * I - f(0, 1) - f(-1, 0) * I + f(0, -1)) * two_delta
}

/// The four combinations `F^{[±±]}` at a pair of whites and a pair of blacks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingComponents {
    pub f_pp: Complex64,
    pub f_mp: Complex64,
    pub f_pm: Complex64,
    pub f_mm: Complex64,
}

impl CouplingComponents {
    /// Recovers `K⁻¹(w, b)` from `η_w²` and `η_b²`.
    pub fn reconstruct(&self, eta_w_sq: f64, eta_b_sq: f64) -> Complex64 {
        (self.f_pp + self.f_mp * eta_w_sq + self.f_pm * eta_b_sq + self.f_mm * (eta_w_sq * eta_b_sq)) * 0.25
    }
}

/// Splits the four couplings between a (W0, W1) pair of whites and a (B0, B1)
/// pair of blacks into the components `F^{[±±]}`.
pub fn extract_components(
    table: &CouplingTable,
    domain: &CylinderDomain,
    whites: [usize; 2],
    blacks: [usize; 2],
) -> Result<CouplingComponents> {
    let wt = whites.map(|w| domain.white(w).ty.subtype);
    let bt = blacks.map(|b| domain.black(b).ty.subtype);
    if wt[0] == wt[1] || bt[0] == bt[1] {
        return Err(Error::Precondition(
            "component extraction needs one vertex of each subtype in both pairs".into(),
        ));
    }
    for &w in &whites {
        for &b in &blacks {
            if domain.edge_dir(Edge { black: b, white: w }).is_some() {
                return Err(Error::Precondition(format!(
                    "white {} and black {} are adjacent",
                    domain.white(w).site,
                    domain.black(b).site
                )));
            }
        }
    }
    let zero = Complex64::new(0.0, 0.0);
    let mut c = CouplingComponents { f_pp: zero, f_mp: zero, f_pm: zero, f_mm: zero };
    for &w in &whites {
        let ew = domain.white(w).ty.eta_sq();
        for &b in &blacks {
            let eb = domain.black(b).ty.eta_sq();
            let k = table.coupling(w, b);
            c.f_pp += k;
            c.f_mp += k * ew;
            c.f_pm += k * eb;
            c.f_mm += k * (ew * eb);
        }
    }
    Ok(c)
}

/// The two whites and two blacks of the 2×2 block with lower-left site
/// `(col, row)`.
pub fn block_at(domain: &CylinderDomain, col: usize, row: i64) -> Option<([usize; 2], [usize; 2])> {
    let c1 = (col + 1) % domain.width();
    let sites = [Site::new(col, row), Site::new(c1, row + 1), Site::new(c1, row), Site::new(col, row + 1)];
    let mut whites = Vec::new();
    let mut blacks = Vec::new();
    for s in sites {
        if let Some(w) = domain.white_index(s) {
            whites.push(w);
        } else if let Some(b) = domain.black_index(s) {
            blacks.push(b);
        } else {
            return None;
        }
    }
    Some(([whites[0], whites[1]], [blacks[0], blacks[1]]))
}
