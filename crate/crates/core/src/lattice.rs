//! Black-and-white Temperleyan cylinders on the square grid.
//!
//! A domain is a set of lattice sites `(col, row)` where columns wrap modulo the
//! width `W` and column `c` occupies rows `bottom[c] .. top[c]`. Sites directly
//! outside the domain but adjacent to it form the bottom and top boundaries.
//!
//! Colors and subtypes are fixed globally: a site is black iff `col + row` is
//! even, and its subtype is 1 on even columns and 0 on odd columns. With this
//! choice the lower-left site `(0, 0)` of a straight cylinder is `B1`, vertical
//! neighbors share a subtype and horizontal neighbors have opposite subtypes.

use std::collections::VecDeque;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Color {
    Black,
    White,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VertexType {
    pub color: Color,
    pub subtype: u8,
}

impl VertexType {
    pub const B0: VertexType = VertexType { color: Color::Black, subtype: 0 };
    pub const B1: VertexType = VertexType { color: Color::Black, subtype: 1 };
    pub const W0: VertexType = VertexType { color: Color::White, subtype: 0 };
    pub const W1: VertexType = VertexType { color: Color::White, subtype: 1 };

    /// Type of the lattice site `(col, row)`. Only the parity of `col` matters
    /// for the subtype, which is consistent around the cylinder because the
    /// width is even.
    pub fn of_site(col: usize, row: i64) -> VertexType {
        let color = if (col as i64 + row).rem_euclid(2) == 0 { Color::Black } else { Color::White };
        let subtype = if col % 2 == 0 { 1 } else { 0 };
        VertexType { color, subtype }
    }

    pub fn eta(self) -> Complex64 {
        if self.subtype == 0 {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 1.0)
        }
    }

    /// `eta^2`, which is `+1` for subtype 0 and `-1` for subtype 1.
    pub fn eta_sq(self) -> f64 {
        if self.subtype == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

impl fmt::Display for VertexType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self.color {
            Color::Black => 'B',
            Color::White => 'W',
        };
        write!(f, "{c}{}", self.subtype)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Site {
    pub col: usize,
    pub row: i64,
}

impl Site {
    pub fn new(col: usize, row: i64) -> Site {
        Site { col, row }
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.col, self.row)
    }
}

/// The four lattice directions, listed counterclockwise starting from below.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Dir {
    Down,
    Right,
    Up,
    Left,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::Down, Dir::Right, Dir::Up, Dir::Left];

    pub fn is_vertical(self) -> bool {
        matches!(self, Dir::Down | Dir::Up)
    }

    pub fn opposite(self) -> Dir {
        match self {
            Dir::Down => Dir::Up,
            Dir::Up => Dir::Down,
            Dir::Left => Dir::Right,
            Dir::Right => Dir::Left,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Vertex {
    pub site: Site,
    pub ty: VertexType,
}

/// A dual vertex: the outer (bottom) face, the top face, or the square face
/// whose lower-left corner is `(gap, row)` and upper-right corner is
/// `(gap + 1, row + 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DualVertex {
    Outer,
    Top,
    Face { gap: usize, row: i64 },
}

impl fmt::Display for DualVertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DualVertex::Outer => write!(f, "outer face"),
            DualVertex::Top => write!(f, "top face"),
            DualVertex::Face { gap, row } => write!(f, "square face at gap {gap}, row {row}"),
        }
    }
}

/// A primal edge given by its black and white color-class indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub black: usize,
    pub white: usize,
}

/// Geometry of a primal edge in canonical orientation: `p` is the lower (for
/// vertical edges) or left (for horizontal edges) endpoint, `q` the other one.
/// `left` and `right` are the dual vertices on either side of `p -> q`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EdgeGeometry {
    pub p: Site,
    pub q: Site,
    pub dir: Dir,
    pub left: DualVertex,
    pub right: DualVertex,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DualStep {
    pub from: DualVertex,
    pub to: DualVertex,
    pub edge: Edge,
    /// `+1` when the black endpoint lies to the right of the crossing direction.
    pub sign: i8,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DualPath {
    pub start: DualVertex,
    pub steps: Vec<DualStep>,
}

impl DualPath {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn end(&self) -> DualVertex {
        self.steps.last().map_or(self.start, |s| s.to)
    }

    pub fn vertices(&self) -> Vec<DualVertex> {
        std::iter::once(self.start).chain(self.steps.iter().map(|s| s.to)).collect()
    }

    pub fn reversed(&self) -> DualPath {
        let steps = self
            .steps
            .iter()
            .rev()
            .map(|s| DualStep { from: s.to, to: s.from, edge: s.edge, sign: -s.sign })
            .collect();
        DualPath { start: self.end(), steps }
    }
}

/// A perfect matching, stored as `matching[white_index] = black_index`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DimerCover {
    pub matching: Vec<usize>,
}

impl DimerCover {
    pub fn contains(&self, e: Edge) -> bool {
        self.matching.get(e.white) == Some(&e.black)
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.matching.iter().enumerate().map(|(white, &black)| Edge { black, white })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    BottomCorner { site: Site, found: String },
    TopCorner { site: Site, found: String },
    BottomBoundaryType { site: Site, found: String },
    TopBoundaryType { site: Site, found: String },
    ColorCount { black: usize, white: usize },
    Adjacency { a: Site, b: Site },
    Disconnected { col: usize },
}

impl Violation {
    /// The column the violation is attributed to, when there is one.
    pub fn column(&self) -> Option<usize> {
        match self {
            Violation::BottomCorner { site, .. }
            | Violation::TopCorner { site, .. }
            | Violation::BottomBoundaryType { site, .. }
            | Violation::TopBoundaryType { site, .. }
            | Violation::Adjacency { a: site, .. } => Some(site.col),
            Violation::Disconnected { col } => Some(*col),
            Violation::ColorCount { .. } => None,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::BottomCorner { site, found } => {
                write!(f, "column {}: bottom corner {site} has type {found}, expected B1", site.col)
            }
            Violation::TopCorner { site, found } => {
                write!(f, "column {}: top corner {site} has type {found}, expected W1", site.col)
            }
            Violation::BottomBoundaryType { site, found } => write!(
                f,
                "column {}: bottom boundary vertex {site} has type {found}; black bottom boundary vertices must be B0 so that the adjacent corners are B1",
                site.col
            ),
            Violation::TopBoundaryType { site, found } => write!(
                f,
                "column {}: top boundary vertex {site} has type {found}; white top boundary vertices must be W0 so that the adjacent corners are W1",
                site.col
            ),
            Violation::ColorCount { black, white } => {
                write!(f, "domain has {black} black and {white} white vertices")
            }
            Violation::Adjacency { a, b } => write!(f, "column {}: sites {a} and {b} break the type adjacency table", a.col),
            Violation::Disconnected { col } => {
                write!(f, "column {col}: no row shared with column {}", col + 1)
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct CylinderDomain {
    width: usize,
    bottom: Vec<i64>,
    top: Vec<i64>,
    cut_column: usize,
    col_start: Vec<usize>,
    vertices: Vec<Vertex>,
    blacks: Vec<usize>,
    whites: Vec<usize>,
    class_index: Vec<usize>,
    boundary_bottom: Vec<Site>,
    boundary_top: Vec<Site>,
    face_start: Vec<usize>,
    face_lo: Vec<i64>,
    face_count: usize,
}

impl PartialEq for CylinderDomain {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.bottom == other.bottom
            && self.top == other.top
            && self.cut_column == other.cut_column
    }
}

impl CylinderDomain {
    /// Straight cylinder with `width` columns and `height` rows `0 .. height`.
    pub fn straight(width: usize, height: usize) -> Result<CylinderDomain> {
        if width < 4 || width % 2 != 0 {
            return Err(Error::InvalidDomain(format!(
                "width {width} must be even and at least 4"
            )));
        }
        if height < 2 || height % 2 != 0 {
            return Err(Error::InvalidDomain(format!(
                "odd height {height}: a straight cylinder needs an even height of at least 2 for its corners to be B1 at the bottom and W1 at the top"
            )));
        }
        let domain = CylinderDomain::from_profiles_unchecked(
            width,
            vec![0; width],
            vec![height as i64; width],
        )?;
        domain.ensure_valid()?;
        Ok(domain)
    }

    /// Staircase cylinder from explicit per-column profiles, validated.
    pub fn staircase(width: usize, bottom: Vec<i64>, top: Vec<i64>) -> Result<CylinderDomain> {
        let domain = CylinderDomain::from_profiles_unchecked(width, bottom, top)?;
        domain.ensure_valid()?;
        Ok(domain)
    }

    /// Builds the graph for the given profiles, checking only what is needed
    /// for the graph to exist: an even width of at least 4, one profile entry
    /// per column and nonempty columns. Temperleyan rules are not checked.
    pub fn from_profiles_unchecked(
        width: usize,
        bottom: Vec<i64>,
        top: Vec<i64>,
    ) -> Result<CylinderDomain> {
        if width < 4 || width % 2 != 0 {
            return Err(Error::InvalidDomain(format!(
                "width {width} must be even and at least 4"
            )));
        }
        if bottom.len() != width || top.len() != width {
            return Err(Error::InvalidDomain(format!(
                "profiles have lengths {} and {}, expected {width}",
                bottom.len(),
                top.len()
            )));
        }
        if let Some(c) = (0..width).find(|&c| bottom[c] >= top[c]) {
            return Err(Error::InvalidDomain(format!(
                "column {c}: bottom {} is not below top {}",
                bottom[c], top[c]
            )));
        }

        let mut col_start = Vec::with_capacity(width + 1);
        let mut vertices = Vec::new();
        for c in 0..width {
            col_start.push(vertices.len());
            for r in bottom[c]..top[c] {
                vertices.push(Vertex { site: Site::new(c, r), ty: VertexType::of_site(c, r) });
            }
        }
        col_start.push(vertices.len());

        let mut blacks = Vec::new();
        let mut whites = Vec::new();
        let mut class_index = Vec::with_capacity(vertices.len());
        for (i, v) in vertices.iter().enumerate() {
            match v.ty.color {
                Color::Black => {
                    class_index.push(blacks.len());
                    blacks.push(i);
                }
                Color::White => {
                    class_index.push(whites.len());
                    whites.push(i);
                }
            }
        }

        let mut face_start = Vec::with_capacity(width + 1);
        let mut face_lo = Vec::with_capacity(width);
        let mut face_count = 0;
        for g in 0..width {
            let h = (g + 1) % width;
            let lo = bottom[g].max(bottom[h]);
            let hi = top[g].min(top[h]) - 1;
            face_start.push(face_count);
            face_lo.push(lo);
            face_count += (hi - lo).max(0) as usize;
        }
        face_start.push(face_count);

        let mut domain = CylinderDomain {
            width,
            bottom,
            top,
            cut_column: 0,
            col_start,
            vertices,
            blacks,
            whites,
            class_index,
            boundary_bottom: Vec::new(),
            boundary_top: Vec::new(),
            face_start,
            face_lo,
            face_count,
        };

        let mut bot = Vec::new();
        let mut topb = Vec::new();
        for v in &domain.vertices {
            for d in Dir::ALL {
                let s = domain.step(v.site, d);
                if domain.contains(s) {
                    continue;
                }
                if s.row < domain.bottom[s.col] {
                    bot.push(s);
                } else {
                    topb.push(s);
                }
            }
        }
        bot.sort();
        bot.dedup();
        topb.sort();
        topb.dedup();
        domain.boundary_bottom = bot;
        domain.boundary_top = topb;
        Ok(domain)
    }

    /// Same domain with a different seam column.
    pub fn with_cut_column(mut self, cut_column: usize) -> Result<CylinderDomain> {
        if cut_column >= self.width {
            return Err(Error::InvalidDomain(format!(
                "cut column {cut_column} outside 0..{}",
                self.width
            )));
        }
        self.cut_column = cut_column;
        Ok(self)
    }

    fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        match report.violations.first() {
            None => Ok(()),
            Some(v) => Err(Error::InvalidDomain(format!(
                "{v} ({} violation(s) in total)",
                report.violations.len()
            ))),
        }
    }

    /// Checks the Temperleyan corner rules, boundary typing, the color count,
    /// the type adjacency table and connectivity of neighboring columns.
    ///
    /// A bottom corner is a domain vertex having both its lower neighbor and a
    /// horizontal neighbor in the bottom boundary; top corners are defined the
    /// same way with the upper neighbor.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let w = self.width;

        for v in &self.vertices {
            let s = v.site;
            let below = self.step(s, Dir::Down);
            let above = self.step(s, Dir::Up);
            let sides = [self.step(s, Dir::Left), self.step(s, Dir::Right)];
            let in_bottom = |t: Site| !self.contains(t) && t.row < self.bottom[t.col];
            let in_top = |t: Site| !self.contains(t) && t.row >= self.top[t.col];
            if in_bottom(below) && sides.iter().any(|&t| in_bottom(t)) && v.ty != VertexType::B1 {
                violations.push(Violation::BottomCorner { site: s, found: v.ty.to_string() });
            }
            if in_top(above) && sides.iter().any(|&t| in_top(t)) && v.ty != VertexType::W1 {
                violations.push(Violation::TopCorner { site: s, found: v.ty.to_string() });
            }
            for d in [Dir::Right, Dir::Up] {
                let t = self.step(s, d);
                if !self.contains(t) {
                    continue;
                }
                let tt = VertexType::of_site(t.col, t.row);
                let expected_sub = if d.is_vertical() { v.ty.subtype } else { 1 - v.ty.subtype };
                if tt.color == v.ty.color || tt.subtype != expected_sub {
                    violations.push(Violation::Adjacency { a: s, b: t });
                }
            }
        }

        for &s in &self.boundary_bottom {
            let ty = VertexType::of_site(s.col, s.row);
            if ty.color == Color::Black && ty != VertexType::B0 {
                violations.push(Violation::BottomBoundaryType { site: s, found: ty.to_string() });
            }
        }
        for &s in &self.boundary_top {
            let ty = VertexType::of_site(s.col, s.row);
            if ty.color == Color::White && ty != VertexType::W0 {
                violations.push(Violation::TopBoundaryType { site: s, found: ty.to_string() });
            }
        }

        if self.blacks.len() != self.whites.len() {
            violations.push(Violation::ColorCount {
                black: self.blacks.len(),
                white: self.whites.len(),
            });
        }

        for c in 0..w {
            let n = (c + 1) % w;
            if self.bottom[c].max(self.bottom[n]) >= self.top[c].min(self.top[n]) {
                violations.push(Violation::Disconnected { col: c });
            }
        }

        ValidationReport { violations }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Mesh size `1 / W`.
    pub fn delta(&self) -> f64 {
        1.0 / self.width as f64
    }

    pub fn bottom_profile(&self) -> &[i64] {
        &self.bottom
    }

    pub fn top_profile(&self) -> &[i64] {
        &self.top
    }

    pub fn cut_column(&self) -> usize {
        self.cut_column
    }

    /// True when both profiles are constant.
    pub fn is_straight(&self) -> bool {
        self.bottom.iter().all(|&b| b == self.bottom[0]) && self.top.iter().all(|&t| t == self.top[0])
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn n_black(&self) -> usize {
        self.blacks.len()
    }

    pub fn n_white(&self) -> usize {
        self.whites.len()
    }

    pub fn black(&self, i: usize) -> Vertex {
        self.vertices[self.blacks[i]]
    }

    pub fn white(&self, i: usize) -> Vertex {
        self.vertices[self.whites[i]]
    }

    pub fn boundary_bottom(&self) -> &[Site] {
        &self.boundary_bottom
    }

    pub fn boundary_top(&self) -> &[Site] {
        &self.boundary_top
    }

    pub fn step(&self, s: Site, d: Dir) -> Site {
        let w = self.width;
        match d {
            Dir::Down => Site::new(s.col, s.row - 1),
            Dir::Up => Site::new(s.col, s.row + 1),
            Dir::Right => Site::new((s.col + 1) % w, s.row),
            Dir::Left => Site::new((s.col + w - 1) % w, s.row),
        }
    }

    /// Whether moving from `s` in direction `d` crosses the seam between
    /// columns `cut_column - 1` and `cut_column`.
    pub fn crosses_seam(&self, s: Site, d: Dir) -> bool {
        match d {
            Dir::Right => (s.col + 1) % self.width == self.cut_column,
            Dir::Left => s.col == self.cut_column,
            _ => false,
        }
    }

    pub fn contains(&self, s: Site) -> bool {
        s.col < self.width && s.row >= self.bottom[s.col] && s.row < self.top[s.col]
    }

    pub fn vertex_index(&self, s: Site) -> Option<usize> {
        if self.contains(s) {
            Some(self.col_start[s.col] + (s.row - self.bottom[s.col]) as usize)
        } else {
            None
        }
    }

    pub fn black_index(&self, s: Site) -> Option<usize> {
        let v = self.vertex_index(s)?;
        (self.vertices[v].ty.color == Color::Black).then(|| self.class_index[v])
    }

    pub fn white_index(&self, s: Site) -> Option<usize> {
        let v = self.vertex_index(s)?;
        (self.vertices[v].ty.color == Color::White).then(|| self.class_index[v])
    }

    /// Domain neighbors of a white vertex as `(black index, direction from the
    /// white vertex to the black one)`, in counterclockwise order from below.
    pub fn white_neighbors(&self, w: usize) -> Vec<(usize, Dir)> {
        let s = self.white(w).site;
        Dir::ALL
            .iter()
            .filter_map(|&d| self.black_index(self.step(s, d)).map(|b| (b, d)))
            .collect()
    }

    pub fn black_neighbors(&self, b: usize) -> Vec<(usize, Dir)> {
        let s = self.black(b).site;
        Dir::ALL
            .iter()
            .filter_map(|&d| self.white_index(self.step(s, d)).map(|w| (w, d)))
            .collect()
    }

    /// The direction from white `w` to black `b` if they are adjacent.
    pub fn edge_dir(&self, e: Edge) -> Option<Dir> {
        let ws = self.white(e.white).site;
        Dir::ALL.into_iter().find(|&d| self.black_index(self.step(ws, d)) == Some(e.black))
    }

    pub fn edges(&self) -> Vec<Edge> {
        (0..self.n_white())
            .flat_map(|w| self.white_neighbors(w).into_iter().map(move |(b, _)| Edge { black: b, white: w }))
            .collect()
    }

    pub fn n_faces(&self) -> usize {
        self.face_count
    }

    pub fn has_face(&self, gap: usize, row: i64) -> bool {
        self.face_index(gap, row).is_some()
    }

    fn face_index(&self, gap: usize, row: i64) -> Option<usize> {
        if gap >= self.width || row < self.face_lo[gap] {
            return None;
        }
        let k = (row - self.face_lo[gap]) as usize;
        let idx = self.face_start[gap] + k;
        (idx < self.face_start[gap + 1]).then_some(idx)
    }

    /// All dual vertices: outer face, top face, then the square faces.
    pub fn dual_vertices(&self) -> Vec<DualVertex> {
        let mut out = vec![DualVertex::Outer, DualVertex::Top];
        for g in 0..self.width {
            for k in 0..(self.face_start[g + 1] - self.face_start[g]) {
                out.push(DualVertex::Face { gap: g, row: self.face_lo[g] + k as i64 });
            }
        }
        out
    }

    /// Dense index of a dual vertex, consistent with [`Self::dual_vertices`].
    pub fn dual_index(&self, v: DualVertex) -> Option<usize> {
        match v {
            DualVertex::Outer => Some(0),
            DualVertex::Top => Some(1),
            DualVertex::Face { gap, row } => self.face_index(gap, row).map(|i| i + 2),
        }
    }

    fn face_or(&self, gap: usize, row: i64, missing: DualVertex) -> DualVertex {
        if self.has_face(gap, row) {
            DualVertex::Face { gap, row }
        } else {
            missing
        }
    }

    /// Which big face lies beside column `col` at the level of rows
    /// `row .. row + 1` when no square face is there.
    fn side_face(&self, col: usize, row: i64) -> DualVertex {
        if row < self.bottom[col] {
            DualVertex::Outer
        } else {
            DualVertex::Top
        }
    }

    pub fn edge_geometry(&self, e: Edge) -> EdgeGeometry {
        let bs = self.black(e.black).site;
        let ws = self.white(e.white).site;
        let w = self.width;
        let (p, q, dir) = if bs.col == ws.col {
            if bs.row < ws.row {
                (bs, ws, Dir::Up)
            } else {
                (ws, bs, Dir::Up)
            }
        } else if (bs.col + 1) % w == ws.col {
            (bs, ws, Dir::Right)
        } else {
            (ws, bs, Dir::Right)
        };
        let (left, right) = match dir {
            Dir::Right => (
                self.face_or(p.col, p.row, DualVertex::Top),
                self.face_or(p.col, p.row - 1, DualVertex::Outer),
            ),
            _ => {
                let lc = (p.col + w - 1) % w;
                let rc = (p.col + 1) % w;
                (
                    self.face_or(lc, p.row, self.side_face(lc, p.row)),
                    self.face_or(p.col, p.row, self.side_face(rc, p.row)),
                )
            }
        };
        EdgeGeometry { p, q, dir, left, right }
    }

    /// The step crossing edge `e` away from dual vertex `from`, or `None` if
    /// `from` is not on either side of `e`.
    pub fn cross(&self, e: Edge, from: DualVertex) -> Option<DualStep> {
        let g = self.edge_geometry(e);
        let black_is_q = self.black_index(g.q) == Some(e.black);
        let (to, right_site_is_q) = if from == g.right {
            (g.left, true)
        } else if from == g.left {
            (g.right, false)
        } else {
            return None;
        };
        let sign = if black_is_q == right_site_is_q { 1 } else { -1 };
        Some(DualStep { from, to, edge: e, sign })
    }

    /// Boundary edges of a square face in the order bottom, top, left, right.
    pub fn face_edges(&self, gap: usize, row: i64) -> [Edge; 4] {
        let w = self.width;
        let h = (gap + 1) % w;
        let e = |a: Site, b: Site| self.edge_between(a, b).expect("face corners lie in the domain");
        [
            e(Site::new(gap, row), Site::new(h, row)),
            e(Site::new(gap, row + 1), Site::new(h, row + 1)),
            e(Site::new(gap, row), Site::new(gap, row + 1)),
            e(Site::new(h, row), Site::new(h, row + 1)),
        ]
    }

    /// Neighbors of a dual vertex reached by crossing one primal edge.
    /// For square faces the vertical moves (through the bottom and top edges)
    /// come first.
    pub fn dual_neighbors(&self, v: DualVertex) -> Vec<DualStep> {
        match v {
            DualVertex::Face { gap, row } => self
                .face_edges(gap, row)
                .iter()
                .filter_map(|&e| self.cross(e, v))
                .collect(),
            _ => self.edges().into_iter().filter_map(|e| self.cross(e, v)).collect(),
        }
    }

    /// Lowest horizontal edge in the gap between columns `gap` and `gap + 1`.
    pub fn bottom_edge_of_gap(&self, gap: usize) -> Option<Edge> {
        let h = (gap + 1) % self.width;
        let r = self.bottom[gap].max(self.bottom[h]);
        if r >= self.top[gap].min(self.top[h]) {
            return None;
        }
        self.edge_between(Site::new(gap, r), Site::new(h, r))
    }

    /// The edge joining two domain sites of opposite colors.
    pub fn edge_between(&self, a: Site, b: Site) -> Option<Edge> {
        match self.black_index(a) {
            Some(black) => Some(Edge { black, white: self.white_index(b)? }),
            None => Some(Edge { black: self.black_index(b)?, white: self.white_index(a)? }),
        }
    }

    /// Shortest dual path from the outer face, entering through the lowest
    /// edge of gap `start_gap`, to `target`. Neither the outer face nor the top
    /// face is used as an intermediate vertex. Ties are broken by preferring
    /// vertical moves, so on straight cylinders a target in the start gap is
    /// reached by a straight vertical path.
    pub fn dual_path(&self, start_gap: usize, target: DualVertex) -> Result<DualPath> {
        let start = DualVertex::Outer;
        if target == start {
            return Ok(DualPath { start, steps: Vec::new() });
        }
        if self.dual_index(target).is_none() {
            return Err(Error::Precondition(format!("{target} is not a dual vertex of the domain")));
        }
        let first_edge = self
            .bottom_edge_of_gap(start_gap % self.width)
            .ok_or_else(|| Error::Precondition(format!("gap {start_gap} has no horizontal edge")))?;
        let first = self.cross(first_edge, start).expect("lowest gap edge borders the outer face");

        let n = self.face_count + 2;
        let mut parent: Vec<Option<DualStep>> = vec![None; n];
        let mut seen = vec![false; n];
        seen[0] = true;
        let first_idx = self.dual_index(first.to).expect("dual vertex");
        seen[first_idx] = true;
        parent[first_idx] = Some(first);
        let mut queue = VecDeque::from([first.to]);
        while let Some(v) = queue.pop_front() {
            if v == target {
                break;
            }
            if v == DualVertex::Top {
                continue;
            }
            for st in self.dual_neighbors(v) {
                let j = self.dual_index(st.to).expect("dual vertex");
                if !seen[j] {
                    seen[j] = true;
                    parent[j] = Some(st);
                    queue.push_back(st.to);
                }
            }
        }
        let ti = self.dual_index(target).expect("checked above");
        if !seen[ti] {
            return Err(Error::Precondition(format!("{target} unreachable from gap {start_gap}")));
        }
        let mut steps = Vec::new();
        let mut cur = target;
        while cur != start {
            let st = parent[self.dual_index(cur).expect("dual vertex")].expect("BFS tree");
            steps.push(st);
            cur = st.from;
        }
        steps.reverse();
        Ok(DualPath { start, steps })
    }

    /// Stable short identifier of the domain geometry and seam.
    pub fn hash_hex(&self) -> String {
        let desc = format!(
            "w={};bottom={:?};top={:?};cut={}",
            self.width, self.bottom, self.top, self.cut_column
        );
        let digest = Sha256::digest(desc.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn is_perfect_matching(&self, cover: &DimerCover) -> bool {
        if cover.matching.len() != self.n_white() {
            return false;
        }
        let mut used = vec![false; self.n_black()];
        for e in cover.edges() {
            if e.black >= used.len() || used[e.black] || self.edge_dir(e).is_none() {
                return false;
            }
            used[e.black] = true;
        }
        true
    }

    /// A fixed reference cover: vertical dominoes stacked from the bottom on
    /// straight cylinders, otherwise an augmenting-path maximum matching with
    /// whites and their neighbors scanned in index order.
    pub fn reference_cover(&self) -> Result<DimerCover> {
        if self.n_black() != self.n_white() {
            return Err(Error::NoCover(format!(
                "{} black vs {} white vertices",
                self.n_black(),
                self.n_white()
            )));
        }
        if self.is_straight() && (self.top[0] - self.bottom[0]) % 2 == 0 {
            let mut matching = vec![0; self.n_white()];
            for (w, m) in matching.iter_mut().enumerate() {
                let s = self.white(w).site;
                let partner = if (s.row - self.bottom[s.col]) % 2 == 0 { s.row + 1 } else { s.row - 1 };
                *m = self.black_index(Site::new(s.col, partner)).expect("brick partner");
            }
            return Ok(DimerCover { matching });
        }
        self.augmenting_matching()
    }

    fn augmenting_matching(&self) -> Result<DimerCover> {
        let nw = self.n_white();
        let adj: Vec<Vec<usize>> = (0..nw)
            .map(|w| {
                let mut v: Vec<usize> = self.white_neighbors(w).into_iter().map(|(b, _)| b).collect();
                v.sort_unstable();
                v
            })
            .collect();
        let mut black_match: Vec<Option<usize>> = vec![None; self.n_black()];

        fn augment(
            w: usize,
            adj: &[Vec<usize>],
            visited: &mut [bool],
            black_match: &mut [Option<usize>],
        ) -> bool {
            for &b in &adj[w] {
                if visited[b] {
                    continue;
                }
                visited[b] = true;
                let free = match black_match[b] {
                    None => true,
                    Some(w2) => augment(w2, adj, visited, black_match),
                };
                if free {
                    black_match[b] = Some(w);
                    return true;
                }
            }
            false
        }

        for w in 0..nw {
            let mut visited = vec![false; self.n_black()];
            if !augment(w, &adj, &mut visited, &mut black_match) {
                return Err(Error::NoCover(format!(
                    "white vertex {} cannot be matched",
                    self.white(w).site
                )));
            }
        }
        let mut matching = vec![0; nw];
        for (b, m) in black_match.iter().enumerate() {
            matching[m.expect("perfect matching")] = b;
        }
        Ok(DimerCover { matching })
    }
}

/// Parsed domain description file.
///
/// Grammar, one `key = value` pair per line, `#` starts a comment:
///
/// ```text
/// width = 12
/// height = 8                       # straight cylinder, rows 0..height
/// bottom_profile = 2,2,0,0,...     # or explicit profiles, one entry per column
/// top_profile = 8,8,8,8,...
/// cut_column = 0                   # optional
/// ```
///
/// Exactly one of `height` or the pair `bottom_profile`/`top_profile` must be
/// given.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub width: usize,
    pub height: Option<usize>,
    pub bottom_profile: Option<Vec<i64>>,
    pub top_profile: Option<Vec<i64>>,
    #[serde(default)]
    pub cut_column: usize,
}

impl DomainSpec {
    pub fn straight(width: usize, height: usize) -> DomainSpec {
        DomainSpec { width, height: Some(height), bottom_profile: None, top_profile: None, cut_column: 0 }
    }

    pub fn parse(text: &str) -> Result<DomainSpec> {
        let mut width = None;
        let mut height = None;
        let mut bottom = None;
        let mut top = None;
        let mut cut = 0;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse { line: line_no, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let int = |v: &str| -> Result<i64> {
                v.trim().parse::<i64>().map_err(|e| err(format!("`{v}` is not an integer: {e}")))
            };
            let uint = |v: &str| -> Result<usize> {
                v.parse::<usize>().map_err(|e| err(format!("`{v}` is not a nonnegative integer: {e}")))
            };
            match key {
                "width" => width = Some(uint(value)?),
                "height" => height = Some(uint(value)?),
                "cut_column" => cut = uint(value)?,
                "bottom_profile" | "top_profile" => {
                    let v = value.split(',').map(int).collect::<Result<Vec<_>>>()?;
                    if key == "bottom_profile" {
                        bottom = Some(v);
                    } else {
                        top = Some(v);
                    }
                }
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        let width = width.ok_or(Error::Parse { line: 0, msg: "missing `width`".into() })?;
        match (&height, &bottom, &top) {
            (Some(_), None, None) | (None, Some(_), Some(_)) => {}
            _ => {
                return Err(Error::Parse {
                    line: 0,
                    msg: "give either `height` or both `bottom_profile` and `top_profile`".into(),
                })
            }
        }
        Ok(DomainSpec { width, height, bottom_profile: bottom, top_profile: top, cut_column: cut })
    }

    pub fn build(&self) -> Result<CylinderDomain> {
        let d = match self.height {
            Some(h) => CylinderDomain::straight(self.width, h)?,
            None => CylinderDomain::staircase(
                self.width,
                self.bottom_profile.clone().unwrap_or_default(),
                self.top_profile.clone().unwrap_or_default(),
            )?,
        };
        d.with_cut_column(self.cut_column)
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[i64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut s = format!("width = {}\n", self.width);
        if let Some(h) = self.height {
            s += &format!("height = {h}\n");
        }
        if let (Some(b), Some(t)) = (&self.bottom_profile, &self.top_profile) {
            s += &format!("bottom_profile = {}\ntop_profile = {}\n", join(b), join(t));
        }
        s += &format!("cut_column = {}\n", self.cut_column);
        s
    }
}

/// Profiles of the twelve-column staircase example used throughout the tests.
pub fn example_staircase_profiles() -> (usize, Vec<i64>, Vec<i64>) {
    (
        12,
        vec![2, 2, 0, 0, 0, 2, 2, 4, 4, 4, 2, 2],
        vec![8, 8, 8, 8, 10, 10, 10, 10, 10, 10, 10, 8],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn straight_4x2_counts() {
        let d = CylinderDomain::straight(4, 2).unwrap();
        assert_eq!(d.vertices().len(), 8);
        assert_eq!((d.n_black(), d.n_white()), (4, 4));
        assert!(d.validate().is_valid());
        assert_eq!(d.white(0).ty, VertexType::W1);
        assert_eq!(d.white(1).ty, VertexType::W0);
        assert_eq!(d.black(0).ty, VertexType::B1);
    }

    #[test]
    fn odd_dimensions_rejected() {
        assert!(matches!(CylinderDomain::straight(4, 3), Err(Error::InvalidDomain(_))));
        assert!(matches!(CylinderDomain::straight(5, 4), Err(Error::InvalidDomain(_))));
        assert!(CylinderDomain::straight(2, 2).is_err());
    }

    #[test]
    fn large_straight_is_valid() {
        let d = CylinderDomain::straight(64, 32).unwrap();
        assert_eq!(d.vertices().len(), 2048);
        assert!(d.validate().is_valid());
    }

    #[test]
    fn types_follow_adjacency_table() {
        // B0's vertical neighbors are W0, horizontal ones W1; B1 symmetric.
        for col in 0..6 {
            for row in -3..3 {
                let t = VertexType::of_site(col, row);
                if t.color != Color::Black {
                    continue;
                }
                let up = VertexType::of_site(col, row + 1);
                let right = VertexType::of_site((col + 1) % 6, row);
                assert_eq!(up.subtype, t.subtype);
                assert_eq!(right.subtype, 1 - t.subtype);
                assert_eq!(up.color, Color::White);
            }
        }
        assert_eq!(VertexType::B0.eta(), Complex64::new(1.0, 0.0));
        assert_eq!(VertexType::W1.eta(), Complex64::new(0.0, 1.0));
    }

    #[test]
    fn flat_staircase_equals_straight() {
        let a = CylinderDomain::staircase(8, vec![0; 8], vec![4; 8]).unwrap();
        let b = CylinderDomain::straight(8, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.vertices(), b.vertices());
    }

    #[test]
    fn example_staircase_is_valid() {
        let (w, b, t) = example_staircase_profiles();
        let d = CylinderDomain::staircase(w, b, t).unwrap();
        assert!(d.validate().is_valid(), "{:?}", d.validate());
        assert!(!d.is_straight());
    }

    #[test]
    fn w0_bottom_corner_rejected_with_column() {
        let err = CylinderDomain::staircase(4, vec![2, 0, 2, 2], vec![6; 4]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("column 1"), "{msg}");
        let d = CylinderDomain::from_profiles_unchecked(4, vec![2, 0, 2, 2], vec![6; 4]).unwrap();
        let r = d.validate();
        assert!(r.violations.iter().any(|v| matches!(
            v,
            Violation::BottomCorner { site, .. } if *site == Site::new(1, 0)
        )));
    }

    #[test]
    fn shifted_bottom_reports_boundary_typing() {
        let d = CylinderDomain::from_profiles_unchecked(8, vec![1; 8], vec![5; 8]).unwrap();
        let r = d.validate();
        assert!(!r.is_valid());
        assert!(r
            .violations
            .iter()
            .any(|v| matches!(v, Violation::BottomBoundaryType { .. })));
        assert!(r.violations.iter().any(|v| matches!(v, Violation::TopBoundaryType { .. })));
    }

    #[test]
    fn color_imbalance_reported() {
        let d = CylinderDomain::from_profiles_unchecked(4, vec![0; 4], vec![3, 2, 2, 2]).unwrap();
        let r = d.validate();
        assert!(r.violations.iter().any(|v| matches!(v, Violation::ColorCount { black: 5, white: 4 })));
    }

    #[test]
    fn straight_reference_cover_is_bricks() {
        for (w, h) in [(4, 2), (6, 4)] {
            let d = CylinderDomain::straight(w, h).unwrap();
            let c = d.reference_cover().unwrap();
            assert!(d.is_perfect_matching(&c));
            assert_eq!(c.matching.len(), w * h / 2);
            for e in c.edges() {
                assert!(d.edge_dir(e).unwrap().is_vertical());
            }
        }
    }

    #[test]
    fn staircase_reference_cover_is_perfect() {
        let (w, b, t) = example_staircase_profiles();
        let d = CylinderDomain::staircase(w, b, t).unwrap();
        let c = d.reference_cover().unwrap();
        assert!(d.is_perfect_matching(&c));
        assert_eq!(c, d.reference_cover().unwrap());
    }

    #[test]
    fn dual_path_basics() {
        let d = CylinderDomain::straight(4, 4).unwrap();
        assert!(d.dual_path(0, DualVertex::Outer).unwrap().is_empty());
        let p = d.dual_path(1, DualVertex::Top).unwrap();
        // One crossing per row: rows 0..4 give four horizontal edges.
        assert_eq!(p.len(), 4);
        assert_eq!(p.vertices().len(), 5);
        for s in &p.steps {
            assert!(!d.edge_dir(s.edge).unwrap().is_vertical());
        }
        assert_eq!(p.end(), DualVertex::Top);
    }

    #[test]
    fn disjoint_targets_give_disjoint_paths() {
        let d = CylinderDomain::straight(8, 6).unwrap();
        let a = d.dual_path(1, DualVertex::Face { gap: 1, row: 3 }).unwrap();
        let b = d.dual_path(5, DualVertex::Face { gap: 5, row: 2 }).unwrap();
        let va = a.vertices();
        for v in b.vertices().iter().skip(1) {
            assert!(!va.contains(v));
        }
        let ea: Vec<_> = a.steps.iter().map(|s| s.edge).collect();
        assert!(b.steps.iter().all(|s| !ea.contains(&s.edge)));
    }

    #[test]
    fn edge_sides_are_distinct_and_consistent() {
        let (w, b, t) = example_staircase_profiles();
        let d = CylinderDomain::staircase(w, b, t).unwrap();
        for e in d.edges() {
            let g = d.edge_geometry(e);
            assert_ne!(g.left, g.right, "{e:?}");
            let s = d.cross(e, g.right).unwrap();
            let back = d.cross(e, s.to).unwrap();
            assert_eq!(back.to, g.right);
            assert_eq!(back.sign, -s.sign);
        }
    }

    #[test]
    fn domain_spec_round_trip() {
        let text = "# staircase\nwidth = 12\nbottom_profile = 2,2,0,0,0,2,2,4,4,4,2,2\ntop_profile = 8,8,8,8,10,10,10,10,10,10,10,8\ncut_column = 3\n";
        let spec = DomainSpec::parse(text).unwrap();
        assert_eq!(spec.cut_column, 3);
        assert_eq!(DomainSpec::parse(&spec.to_text()).unwrap(), spec);
        let d = spec.build().unwrap();
        assert_eq!(d.cut_column(), 3);
        assert!(DomainSpec::parse("width = 4\nheight = 2\ncolor = red").is_err());
        assert!(DomainSpec::parse("height = 2").is_err());
        assert!(DomainSpec::parse("width = 4").is_err());
    }

    #[test]
    fn hash_depends_on_cut() {
        let d = CylinderDomain::straight(8, 4).unwrap();
        let h0 = d.hash_hex();
        let h1 = d.clone().with_cut_column(2).unwrap().hash_hex();
        assert_ne!(h0, h1);
        assert_eq!(h0.len(), 16);
    }

    proptest! {
        #[test]
        fn reversed_path_negates_signs(w in 2usize..6, h in 1usize..5, gap in 0usize..12, row in 0i64..8) {
            let (w, h) = (2 * w, 2 * h);
            let d = CylinderDomain::straight(w, h).unwrap();
            let gap = gap % w;
            let row = row % (h as i64 - 1).max(1);
            let target = if h >= 2 && d.has_face(gap, row) { DualVertex::Face { gap, row } } else { DualVertex::Top };
            let p = d.dual_path(gap, target).unwrap();
            let r = p.reversed();
            prop_assert_eq!(r.len(), p.len());
            for (a, b) in p.steps.iter().rev().zip(&r.steps) {
                prop_assert_eq!(a.sign, -b.sign);
                prop_assert_eq!(a.edge, b.edge);
            }
            for win in p.steps.windows(2) {
                prop_assert_eq!(win[0].to, win[1].from);
            }
        }

        #[test]
        fn straight_cylinders_validate(w in 2usize..20, h in 1usize..10) {
            let d = CylinderDomain::straight(2 * w, 2 * h).unwrap();
            prop_assert!(d.validate().is_valid());
            let c = d.reference_cover().unwrap();
            prop_assert!(d.is_perfect_matching(&c));
        }
    }
}
