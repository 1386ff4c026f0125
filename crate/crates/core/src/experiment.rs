//! Experiment configurations and the runs behind the command-line tool.

use std::f64::consts::PI;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::height_stats::{exact_centered_product, exact_moment, top_height, MomentReport};
use crate::kasteleyn::{block_at, extract_components, CouplingTable, KasteleynSystem};
use crate::lattice::{CylinderDomain, DimerCover, DomainSpec, DualVertex};
use crate::prediction::{
    f2_pred, h2_pred, mu_from_moments, predicted_cumulant, CylinderGeometry, MuFit, PredictionSet, Sign,
};
use crate::sampling::Sampler;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Validate,
    Sample,
    Moments,
    Couplings,
    Predict,
    Convergence,
}

impl ExperimentKind {
    pub fn is_stochastic(self, n_samples: usize) -> bool {
        match self {
            ExperimentKind::Sample => true,
            ExperimentKind::Moments => n_samples > 0,
            _ => false,
        }
    }
}

/// Straight cylinders `W × W/aspect` for each width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSequence {
    pub widths: Vec<usize>,
    #[serde(default = "default_aspect")]
    pub aspect: usize,
}

fn default_aspect() -> usize {
    2
}

/// A pair of continuum points, each given as `(x/ℓ, y/π)`.
pub type PointPair = [[f64; 2]; 2];

pub const DEFAULT_H2_PAIRS: [PointPair; 2] = [[[0.3, 0.4], [0.65, 0.6]], [[0.25, 0.5], [0.5, 0.5]]];
pub const DEFAULT_F2_PAIRS: [PointPair; 2] = [[[0.3, 0.4], [0.65, 0.6]], [[0.2, 0.3], [0.45, 0.7]]];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Option<ExperimentKind>,
    pub domain: Option<DomainSpec>,
    /// Domain description file; used when `domain` is absent.
    pub domain_file: Option<PathBuf>,
    pub mesh: Option<MeshSequence>,
    #[serde(default)]
    pub n_samples: usize,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub ell: Option<f64>,
    pub mu: Option<f64>,
    #[serde(rename = "M2")]
    pub m2: Option<f64>,
    #[serde(rename = "M3")]
    pub m3: Option<f64>,
    pub h2_points: Option<Vec<PointPair>>,
    pub f2_points: Option<Vec<PointPair>>,
}

impl ExperimentConfig {
    pub fn for_domain(spec: DomainSpec) -> ExperimentConfig {
        ExperimentConfig { domain: Some(spec), ..Default::default() }
    }

    /// Checks the fields needed by `kind`.
    pub fn check(&self, kind: ExperimentKind) -> Result<()> {
        if kind.is_stochastic(self.n_samples) && self.seed.is_none() {
            return Err(Error::Config(format!("a seed is required for {kind:?} runs")));
        }
        match kind {
            ExperimentKind::Convergence => {
                let mesh = self.mesh.as_ref().ok_or_else(|| Error::Config("convergence needs a mesh sequence".into()))?;
                if mesh.widths.len() < 2 {
                    return Err(Error::Config("a mesh sequence needs at least two widths".into()));
                }
                if mesh.aspect == 0 {
                    return Err(Error::Config("aspect must be positive".into()));
                }
                if mesh.widths.windows(2).any(|p| p[1] <= p[0]) {
                    return Err(Error::Config("mesh widths must be strictly increasing".into()));
                }
                for &w in &mesh.widths {
                    if w % mesh.aspect != 0 || w / mesh.aspect == 0 {
                        return Err(Error::Config(format!("width {w} is not a positive multiple of aspect {}", mesh.aspect)));
                    }
                }
            }
            ExperimentKind::Predict => {
                if self.ell.is_none() {
                    return Err(Error::Config("predict needs `ell`".into()));
                }
                match (self.mu, self.m2, self.m3) {
                    (Some(_), None, None) | (None, Some(_), Some(_)) => {}
                    _ => return Err(Error::Config("predict needs either `mu` or both `M2` and `M3`".into())),
                }
            }
            _ => {
                if self.domain.is_none() && self.domain_file.is_none() {
                    return Err(Error::Config("no domain given".into()));
                }
            }
        }
        if kind == ExperimentKind::Sample && self.n_samples == 0 {
            return Err(Error::Config("n_samples must be positive for sampling".into()));
        }
        Ok(())
    }

    pub fn domain_spec(&self) -> Result<DomainSpec> {
        if let Some(spec) = &self.domain {
            return Ok(spec.clone());
        }
        let path = self.domain_file.as_ref().ok_or_else(|| Error::Config("no domain given".into()))?;
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        DomainSpec::parse(&text)
    }

    pub fn build_domain(&self) -> Result<Arc<CylinderDomain>> {
        Ok(Arc::new(self.domain_spec()?.build()?))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidateOutcome {
    pub domain_hash: String,
    pub valid: bool,
    pub violations: Vec<String>,
    pub n_black: usize,
    pub n_white: usize,
    /// Largest deviation of a face alternating product from `-1`.
    pub face_product_error: Option<f64>,
    /// `log Z`, the log of the number of covers.
    pub log_partition: Option<f64>,
}

pub fn run_validate(config: &ExperimentConfig) -> Result<ValidateOutcome> {
    config.check(ExperimentKind::Validate)?;
    let spec = config.domain_spec()?;
    let domain = match spec.height {
        Some(h) => CylinderDomain::straight(spec.width, h)?,
        None => CylinderDomain::from_profiles_unchecked(
            spec.width,
            spec.bottom_profile.clone().unwrap_or_default(),
            spec.top_profile.clone().unwrap_or_default(),
        )?,
    }
    .with_cut_column(spec.cut_column)?;
    let report = domain.validate();
    let mut outcome = ValidateOutcome {
        domain_hash: domain.hash_hex(),
        valid: report.is_valid(),
        violations: report.violations.iter().map(|v| v.to_string()).collect(),
        n_black: domain.n_black(),
        n_white: domain.n_white(),
        face_product_error: None,
        log_partition: None,
    };
    if outcome.valid {
        let system = KasteleynSystem::assemble(Arc::new(domain))?;
        outcome.face_product_error = Some(
            system
                .face_products()
                .iter()
                .map(|(_, p)| (p + 1.0).norm())
                .fold(0.0, f64::max),
        );
        let log_abs_det = system.log_abs_det();
        outcome.log_partition = log_abs_det.is_finite().then(|| log_abs_det - system.n() as f64 * system.domain().delta().ln());
    }
    Ok(outcome)
}

pub fn run_sample(config: &ExperimentConfig) -> Result<(Arc<CylinderDomain>, Vec<DimerCover>)> {
    config.check(ExperimentKind::Sample)?;
    let domain = config.build_domain()?;
    let system = KasteleynSystem::assemble(domain.clone())?;
    let table = system.invert()?;
    let seed = config.seed.expect("checked");
    let covers = Sampler::new(&system, &table).sample_map(seed, config.n_samples, |c| c.clone())?;
    Ok((domain, covers))
}

pub fn run_couplings(config: &ExperimentConfig) -> Result<(Arc<CylinderDomain>, CouplingTable)> {
    config.check(ExperimentKind::Couplings)?;
    let domain = config.build_domain()?;
    let system = KasteleynSystem::assemble(domain.clone())?;
    let table = system.invert()?;
    Ok((domain, table))
}

pub fn run_predict(config: &ExperimentConfig) -> Result<PredictionSet> {
    config.check(ExperimentKind::Predict)?;
    let ell = config.ell.expect("checked");
    match (config.mu, config.m2, config.m3) {
        (Some(mu), _, _) => PredictionSet::new(ell, mu),
        (None, Some(m2), Some(m3)) => PredictionSet::from_moments(ell, m2, m3),
        _ => unreachable!("checked"),
    }
}

/// Exact and sampled moments set against the discrete Gaussian fitted to the
/// exact `(M₂, M₃)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictionComparison {
    pub ell: f64,
    pub fit: MuFit,
    pub kappa2: f64,
    pub kappa4: f64,
    /// `κ₄ + 3κ₂²`.
    pub predicted_m4: f64,
    pub measured_m4: Option<f64>,
    pub se4: Option<f64>,
    pub z_m4: Option<f64>,
    /// Sampled `M₂` against the exact value.
    pub z_m2: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentsOutcome {
    pub exact: MomentReport,
    pub monte_carlo: Option<MomentReport>,
    pub comparison: PredictionComparison,
}

pub fn run_moments(config: &ExperimentConfig) -> Result<MomentsOutcome> {
    config.check(ExperimentKind::Moments)?;
    let domain = config.build_domain()?;
    let system = KasteleynSystem::assemble(domain.clone())?;
    let table = system.invert()?;
    let exact = MomentReport::exact(&system, &table)?;
    let (m2, m3) = (exact.m2.expect("exact M2"), exact.m3.expect("exact M3"));
    let geom = CylinderGeometry::from_domain(&domain)?;
    let ctx = geom.context()?;
    let fit = mu_from_moments(m2, m3, &ctx)?;
    let kappa2 = predicted_cumulant(2, fit.mu, &ctx)?;
    let kappa4 = predicted_cumulant(4, fit.mu, &ctx)?;
    let predicted_m4 = kappa4 + 3.0 * kappa2 * kappa2;
    let monte_carlo = if config.n_samples > 0 {
        let seed = config.seed.expect("checked");
        let reference = domain.reference_cover()?;
        let heights = Sampler::new(&system, &table).sample_map(seed, config.n_samples, |c| {
            top_height(c, &reference, &domain).map(|h| h as f64)
        })?;
        let heights = heights.into_iter().collect::<Result<Vec<f64>>>()?;
        Some(MomentReport::monte_carlo(&domain, &heights, seed)?)
    } else {
        None
    };
    let measured_m4 = monte_carlo.as_ref().and_then(|r| r.m4);
    let se4 = monte_carlo.as_ref().and_then(|r| r.se4);
    let z = |v: Option<f64>, se: Option<f64>, target: f64| match (v, se) {
        (Some(v), Some(se)) if se > 0.0 => Some((v - target) / se),
        _ => None,
    };
    let z_m2 = monte_carlo.as_ref().and_then(|r| z(r.m2, r.se2, m2));
    Ok(MomentsOutcome {
        comparison: PredictionComparison {
            ell: ctx.ell,
            fit,
            kappa2,
            kappa4,
            predicted_m4,
            measured_m4,
            se4,
            z_m4: z(measured_m4, se4, predicted_m4),
            z_m2,
        },
        exact,
        monte_carlo,
    })
}

/// A discrete quantity at a pair of points against its continuum prediction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointComparison {
    pub points: [Complex64; 2],
    pub value: Complex64,
    pub prediction: Complex64,
    /// `|value - prediction| / |prediction|`.
    pub relative_error: f64,
}

impl PointComparison {
    fn new(points: [Complex64; 2], value: Complex64, prediction: Complex64) -> PointComparison {
        PointComparison { points, value, prediction, relative_error: (value - prediction).norm() / prediction.norm() }
    }
}

/// Exact data of one straight mesh compared with the continuum.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeshResult {
    pub width: usize,
    pub height: usize,
    pub delta: f64,
    pub ell: f64,
    pub m2: f64,
    pub m3: f64,
    pub fit: MuFit,
    pub h2: Vec<PointComparison>,
    pub f2: Vec<PointComparison>,
}

fn nearest_cell(geom: &CylinderGeometry, width: usize, height: usize, p: [f64; 2]) -> Result<(usize, i64)> {
    if !(0.0..1.0).contains(&p[0]) || !(0.0 < p[1] && p[1] < 1.0) {
        return Err(Error::Config(format!("point {p:?} is not in [0,1) × (0,1)")));
    }
    let col = ((p[0] * geom.ell / geom.step) - 0.5).round() as i64;
    let row = ((p[1] * PI / geom.step) - 1.5).round() as i64;
    let col = col.clamp(0, width as i64 - 2) as usize;
    let row = row.clamp(0, height as i64 - 2);
    Ok((col, row))
}

/// Exact `H₂` at face pairs and `F₂^{[++]}` at 2×2 block pairs on a straight
/// `width × height` cylinder. Points are the cells nearest to the given
/// fractions; predictions are evaluated at the cell centres.
pub fn mesh_comparison(width: usize, height: usize, h2_pairs: &[PointPair], f2_pairs: &[PointPair]) -> Result<MeshResult> {
    let domain = Arc::new(CylinderDomain::straight(width, height)?);
    let system = KasteleynSystem::assemble(domain.clone())?;
    let table = system.invert()?;
    let geom = CylinderGeometry::straight(width, height);
    let ctx = geom.context()?;
    let m2 = exact_moment(&system, &table, 2)?;
    let m3 = exact_moment(&system, &table, 3)?;
    let fit = mu_from_moments(m2, m3, &ctx)?;
    let mut h2 = Vec::new();
    for pair in h2_pairs {
        let cells = [nearest_cell(&geom, width, height, pair[0])?, nearest_cell(&geom, width, height, pair[1])?];
        let paths = cells
            .iter()
            .map(|&(gap, row)| domain.dual_path(0, DualVertex::Face { gap, row }))
            .collect::<Result<Vec<_>>>()?;
        let value = exact_centered_product(&system, &table, &[&paths[0], &paths[1]])?;
        let z = cells.map(|(g, r)| geom.face_point(g, r));
        let pred = h2_pred(z[0], z[1], m2, &geom)?;
        h2.push(PointComparison::new(z, value.into(), pred.into()));
    }
    let mut f2 = Vec::new();
    for pair in f2_pairs {
        let cells = [nearest_cell(&geom, width, height, pair[0])?, nearest_cell(&geom, width, height, pair[1])?];
        let blocks = cells
            .iter()
            .map(|&(c, r)| block_at(&domain, c, r).ok_or_else(|| Error::Precondition(format!("no block at ({c},{r})"))))
            .collect::<Result<Vec<_>>>()?;
        let (w1, b1) = blocks[0];
        let (w2, b2) = blocks[1];
        let value = extract_components(&table, &domain, w1, b2)?.f_pp * extract_components(&table, &domain, w2, b1)?.f_pp;
        let z = cells.map(|(c, r)| geom.face_point(c, r));
        // Couplings transform as forms; the product scales with ℓ².
        let pred = f2_pred(Sign::Plus, Sign::Plus, z[0], z[1], fit.mu, &ctx)? * (ctx.ell * ctx.ell);
        f2.push(PointComparison::new(z, value, pred));
    }
    Ok(MeshResult { width, height, delta: domain.delta(), ell: ctx.ell, m2, m3, fit, h2, f2 })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceRow {
    #[serde(rename = "W")]
    pub width: usize,
    #[serde(rename = "H")]
    pub height: usize,
    pub delta: f64,
    pub quantity: String,
    pub value: f64,
    pub error: f64,
    pub prediction: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub meshes: Vec<MeshResult>,
    /// Per point pair, whether the `H₂` relative error decreases strictly.
    pub h2_decreasing: Vec<bool>,
    pub f2_decreasing: Vec<bool>,
    /// `max μ - min μ` over the meshes.
    pub mu_spread: f64,
    pub flags: Vec<String>,
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|p| p[1] < p[0])
}

impl ConvergenceTable {
    pub fn from_meshes(meshes: Vec<MeshResult>) -> ConvergenceTable {
        let series = |pick: &dyn Fn(&MeshResult) -> &Vec<PointComparison>| -> Vec<bool> {
            let k = meshes.first().map(|m| pick(m).len()).unwrap_or(0);
            (0..k)
                .map(|i| strictly_decreasing(&meshes.iter().map(|m| pick(m)[i].relative_error).collect::<Vec<_>>()))
                .collect()
        };
        let h2_decreasing = series(&|m| &m.h2);
        let f2_decreasing = series(&|m| &m.f2);
        let mus: Vec<f64> = meshes.iter().map(|m| m.fit.mu).collect();
        let mu_spread = mus.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - mus.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut flags = Vec::new();
        for (i, ok) in h2_decreasing.iter().enumerate() {
            if !ok {
                flags.push(format!("H2 pair {i}: relative error not strictly decreasing"));
            }
        }
        for (i, ok) in f2_decreasing.iter().enumerate() {
            if !ok {
                flags.push(format!("F2 pair {i}: relative error not strictly decreasing"));
            }
        }
        ConvergenceTable { meshes, h2_decreasing, f2_decreasing, mu_spread, flags }
    }

    pub fn rows(&self) -> Vec<ConvergenceRow> {
        let mut rows = Vec::new();
        for m in &self.meshes {
            let row = |quantity: String, value: f64, error: f64, prediction: f64| ConvergenceRow {
                width: m.width,
                height: m.height,
                delta: m.delta,
                quantity,
                value,
                error,
                prediction,
                residual: value - prediction,
            };
            rows.push(row("mu".into(), m.fit.mu, 0.0, m.fit.mu));
            rows.push(row("M2".into(), m.m2, 0.0, m.m2 + m.fit.m2_residual));
            rows.push(row("M3".into(), m.m3, 0.0, m.m3 + m.fit.m3_residual));
            for (i, c) in m.h2.iter().enumerate() {
                rows.push(row(format!("H2[{i}]"), c.value.re, c.relative_error, c.prediction.re));
            }
            for (i, c) in m.f2.iter().enumerate() {
                rows.push(row(format!("F2_re[{i}]"), c.value.re, c.relative_error, c.prediction.re));
                rows.push(row(format!("F2_im[{i}]"), c.value.im, c.relative_error, c.prediction.im));
            }
        }
        rows
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "W,H,delta,quantity,value,error,prediction,residual")?;
        for r in self.rows() {
            writeln!(
                out,
                "{},{},{:e},{},{:e},{:e},{:e},{:e}",
                r.width, r.height, r.delta, r.quantity, r.value, r.error, r.prediction, r.residual
            )?;
        }
        Ok(())
    }
}

pub fn run_convergence(config: &ExperimentConfig) -> Result<ConvergenceTable> {
    config.check(ExperimentKind::Convergence)?;
    let mesh = config.mesh.as_ref().expect("checked");
    let h2_pairs = config.h2_points.clone().unwrap_or_else(|| DEFAULT_H2_PAIRS.to_vec());
    let f2_pairs = config.f2_points.clone().unwrap_or_else(|| DEFAULT_F2_PAIRS.to_vec());
    let meshes = mesh
        .widths
        .iter()
        .map(|&w| mesh_comparison(w, w / mesh.aspect, &h2_pairs, &f2_pairs))
        .collect::<Result<Vec<_>>>()?;
    let table = ConvergenceTable::from_meshes(meshes);
    for flag in &table.flags {
        log::warn!("{flag}");
    }
    Ok(table)
}
