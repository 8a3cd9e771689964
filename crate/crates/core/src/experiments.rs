//! Configuration-driven verification experiments.
//!
//! Every experiment reads an [`ExperimentConfig`], produces a
//! [`SweepResult`] of tables and pass flags, and can write the tables as
//! versioned CSV plus a JSON summary that echoes the full configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{bump_data, bump_sources, solenoidal_data, BumpSum};
use crate::error::{Error, Result};
use crate::field::StaggeredField;
use crate::green::{load_targets_csv, HelmholtzKernel};
use crate::grid::{presets, BoundaryLabel, FieldKind, GridDomain, Mask};
use crate::io::write_atomic;
use crate::material::{Gamma, MaterialLaw, WeightExponent};
use crate::maxwell::{assemble, harmonic_fields, kernel_basis, neumann_series, MaxwellOperatorMatrix, Resolvent, Side};
use crate::operators::{discrete_grad, norm_w, random_vector, weighted_norm};
use crate::statics::{check_steps, build_B, MagnetostaticData, StaticProblemData, StaticSolver};
use crate::whole_space::{
    limiting_absorption_sweep, loglog_slope, maxwell_residual, pair_norm, radiation_defect, rot_norm, solve_on_grid,
    solve_whole_space, source_divergences, sphere_points, static_on_grid, IsotropicBlockConstants,
};

pub const CSV_HEADER: &str = "# maxlow-csv v1";

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    WholeSpaceSolve,
    LowfreqSweep,
    LimabsSweep,
    NeumannCheck,
    Spectrum,
    StaticSolve,
    VerifyB1,
    EstimateProbe,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::WholeSpaceSolve,
        ExperimentKind::LowfreqSweep,
        ExperimentKind::LimabsSweep,
        ExperimentKind::NeumannCheck,
        ExperimentKind::Spectrum,
        ExperimentKind::StaticSolve,
        ExperimentKind::VerifyB1,
        ExperimentKind::EstimateProbe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::WholeSpaceSolve => "whole-space-solve",
            ExperimentKind::LowfreqSweep => "lowfreq-sweep",
            ExperimentKind::LimabsSweep => "limabs-sweep",
            ExperimentKind::NeumannCheck => "neumann-check",
            ExperimentKind::Spectrum => "spectrum",
            ExperimentKind::StaticSolve => "static-solve",
            ExperimentKind::VerifyB1 => "verify-b1",
            ExperimentKind::EstimateProbe => "estimate-probe",
        }
    }
}

/// Bounded test geometries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Geometry {
    SolidCube,
    Cavity,
    BoxRing,
    RingObstacle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub geometry: Geometry,
    /// Cells per side of the box.
    pub n: usize,
    /// Obstacle (or hole, or frame) size in cells.
    pub m: usize,
    /// Thickness in cells of slab-like geometries.
    pub thickness: usize,
    pub h: f64,
    pub label: BoundaryLabel,
}

impl GridConfig {
    pub fn cavity() -> Self {
        GridConfig { geometry: Geometry::Cavity, n: 8, m: 2, thickness: 1, h: 0.25, label: BoundaryLabel::Gamma1 }
    }

    pub fn build(&self) -> Result<GridDomain> {
        match self.geometry {
            Geometry::SolidCube => presets::solid_cube(self.n, self.h, self.label),
            Geometry::Cavity => presets::cube_with_cavity(self.n, self.m, self.h, self.label),
            Geometry::BoxRing => presets::box_ring(self.n, self.m, self.thickness, self.h, self.label),
            Geometry::RingObstacle => presets::ring_obstacle(self.n, self.m, self.thickness, self.h, self.label),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialConfig {
    pub eps0: f64,
    pub mu0: f64,
    /// Amplitude of a random SPD perturbation; zero for the homogeneous law.
    pub random_amplitude: f64,
    pub material_seed: u64,
}

impl Default for MaterialConfig {
    fn default() -> Self {
        MaterialConfig { eps0: 1.0, mu0: 1.0, random_amplitude: 0.0, material_seed: 0 }
    }
}

impl MaterialConfig {
    pub fn law(&self, domain: &GridDomain) -> Result<MaterialLaw> {
        if self.random_amplitude == 0.0 {
            MaterialLaw::homogeneous(self.eps0, self.mu0)
        } else {
            MaterialLaw::random_spd(domain.len(FieldKind::Cell), self.eps0, self.mu0, self.random_amplitude, self.material_seed)
        }
    }

    pub fn constants(&self) -> Result<IsotropicBlockConstants> {
        IsotropicBlockConstants::new(self.eps0, self.mu0)
    }
}

/// Source grid and support of the seeded whole-space data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub n: usize,
    pub h: f64,
    pub radius: f64,
}

/// Centered cubical evaluation grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub n: usize,
    pub h: f64,
}

impl BoxConfig {
    fn build(&self) -> Result<Arc<GridDomain>> {
        Ok(Arc::new(GridDomain::whole_space([self.n; 3], self.h, [0.0; 3])?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub residual_drop: f64,
    pub final_fraction: f64,
    pub band_factor: f64,
    pub neumann_relative: f64,
    pub ratio_relative: f64,
    pub kernel_exact: f64,
    pub static_relative: f64,
    pub moment_absolute: f64,
    pub rank_relative: f64,
    pub outgoing_min: f64,
    pub incoming_max: f64,
    pub refinement_factor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            residual_drop: 3.0,
            final_fraction: 0.1,
            band_factor: 2.0,
            neumann_relative: 1e-8,
            ratio_relative: 0.2,
            kernel_exact: 1e-12,
            static_relative: 1e-8,
            moment_absolute: 1e-8,
            rank_relative: 1e-8,
            outgoing_min: 1.0,
            incoming_max: 0.3,
            refinement_factor: 2.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub dump_fields: bool,
}

/// One experiment run. Parsed from a single JSON document; missing keys
/// take the per-experiment defaults of [`ExperimentConfig::defaults`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Data-generation seed; required.
    pub seed: Option<u64>,
    pub grid: GridConfig,
    pub material: MaterialConfig,
    pub source: SourceConfig,
    pub test_box: BoxConfig,
    /// Frequencies; multiples of `sigma_min` for `neumann-check`.
    pub frequencies: Vec<f64>,
    pub omega: f64,
    pub deltas: Vec<f64>,
    /// Weight exponent of solution norms.
    pub solution_weight: f64,
    /// Weight exponent of data norms.
    pub data_weight: f64,
    pub samples: usize,
    pub radii: Vec<f64>,
    pub sphere_points: usize,
    /// Side length of the residual box of the two-grid study.
    pub residual_box: f64,
    /// Bounded-domain mode of `lowfreq-sweep`.
    pub bounded: bool,
    pub expected_dims: Option<[usize; 2]>,
    pub invariance_seeds: Vec<u64>,
    pub targets_csv: Option<PathBuf>,
    pub tolerances: Tolerances,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn defaults(kind: ExperimentKind) -> Self {
        let mut c = ExperimentConfig {
            experiment: kind,
            seed: None,
            grid: GridConfig::cavity(),
            material: MaterialConfig::default(),
            source: SourceConfig { n: 16, h: 0.125, radius: 0.8 },
            test_box: BoxConfig { n: 13, h: 0.25 },
            frequencies: vec![1.0, 0.5, 0.25, 0.125, 0.0625],
            omega: 1.0,
            deltas: vec![1e-1, 1e-2, 1e-3, 1e-4],
            solution_weight: -1.0,
            data_weight: 1.0,
            samples: 20,
            radii: vec![4.0, 8.0, 16.0, 32.0],
            sphere_points: 200,
            residual_box: 1.0,
            bounded: false,
            expected_dims: None,
            invariance_seeds: vec![11, 12],
            targets_csv: None,
            tolerances: Tolerances::default(),
            output: OutputConfig::default(),
        };
        match kind {
            ExperimentKind::WholeSpaceSolve => {
                c.source = SourceConfig { n: 24, h: 0.125, radius: 1.0 };
            }
            ExperimentKind::NeumannCheck => c.frequencies = vec![0.05, 0.1, 0.2, 0.4],
            ExperimentKind::EstimateProbe => {
                c.samples = 50;
                c.frequencies = (0..=6).map(|k| 10f64.powf(-3.0 + 0.5 * k as f64)).collect();
            }
            _ => {}
        }
        c
    }

    /// Parses a JSON document, filling missing keys from the defaults of its
    /// `experiment` (or of `kind` when the document names none).
    pub fn from_json(text: &str, kind: Option<ExperimentKind>) -> Result<Self> {
        let mut doc: serde_json::Value = serde_json::from_str(text)?;
        let named = match doc.get("experiment") {
            Some(v) => Some(serde_json::from_value::<ExperimentKind>(v.clone())?),
            None => None,
        };
        let kind = match (named, kind) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::Config(format!("config is for {} but {} was requested", a.name(), b.name())))
            }
            (Some(a), _) | (None, Some(a)) => a,
            (None, None) => return Err(Error::Config("config names no experiment".into())),
        };
        let mut merged = serde_json::to_value(Self::defaults(kind))?;
        if let Some(obj) = doc.as_object_mut() {
            obj.remove("experiment");
        }
        merge(&mut merged, doc);
        Ok(serde_json::from_value(merged)?)
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::Config("a data seed is required".into()))
    }

    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        let t = &self.tolerances;
        let tols = [
            t.residual_drop,
            t.final_fraction,
            t.band_factor,
            t.neumann_relative,
            t.ratio_relative,
            t.kernel_exact,
            t.static_relative,
            t.moment_absolute,
            t.rank_relative,
            t.outgoing_min,
            t.incoming_max,
            t.refinement_factor,
        ];
        if tols.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        let needs_freq = matches!(
            self.experiment,
            ExperimentKind::LowfreqSweep | ExperimentKind::NeumannCheck | ExperimentKind::EstimateProbe
        );
        if needs_freq {
            if self.frequencies.is_empty() {
                return Err(Error::Config("empty frequency list".into()));
            }
            if self.frequencies.iter().any(|w| !(w.is_finite() && *w != 0.0)) {
                return Err(Error::Config("frequencies must be finite and nonzero".into()));
            }
        }
        if matches!(self.experiment, ExperimentKind::WholeSpaceSolve | ExperimentKind::LimabsSweep) && !(self.omega.is_finite() && self.omega != 0.0) {
            return Err(Error::Config("omega must be finite and nonzero".into()));
        }
        if self.experiment == ExperimentKind::LimabsSweep && self.deltas.is_empty() {
            return Err(Error::Config("empty delta list".into()));
        }
        if self.samples == 0 && matches!(self.experiment, ExperimentKind::LowfreqSweep | ExperimentKind::EstimateProbe) {
            return Err(Error::Config("samples must be positive".into()));
        }
        WeightExponent::new(self.solution_weight)?;
        WeightExponent::new(self.data_weight)?;
        Ok(())
    }
}

fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// A table cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Num(f64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Num(v) if v.is_finite() => format!("{v:.17e}"),
            Cell::Num(v) => v.to_string(),
            Cell::Text(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
            Cell::Text(s) => s.clone(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(v) => Some(*v as f64),
            Cell::Num(v) => Some(*v),
            Cell::Text(_) => None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table { name: name.into(), columns: columns.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Numeric column by name.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        self.rows.iter().map(|r| r[j].as_f64()).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{CSV_HEADER}");
        let _ = writeln!(s, "{}", self.columns.join(","));
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(Cell::csv).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }
}

/// Tables, fitted slopes and pass flags of one run.
#[derive(Clone, Debug, Serialize)]
pub struct SweepResult {
    pub experiment: ExperimentKind,
    pub tables: Vec<Table>,
    pub slopes: BTreeMap<String, f64>,
    pub flags: BTreeMap<String, bool>,
    pub notes: Vec<String>,
}

impl SweepResult {
    fn new(experiment: ExperimentKind) -> Self {
        SweepResult { experiment, tables: Vec::new(), slopes: BTreeMap::new(), flags: BTreeMap::new(), notes: Vec::new() }
    }

    pub fn passed(&self) -> bool {
        self.flags.values().all(|&f| f)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    fn flag(&mut self, name: &str, ok: bool) {
        self.flags.insert(name.into(), ok);
    }
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn band(v: &[f64]) -> f64 {
    let mx = v.iter().copied().fold(0.0, f64::max);
    let mn = v.iter().copied().fold(f64::INFINITY, f64::min);
    mx / mn
}

fn source_grid(c: &SourceConfig) -> Result<Arc<GridDomain>> {
    Ok(Arc::new(GridDomain::whole_space([c.n; 3], c.h, [0.0; 3])?))
}

/// Runs the experiment named by the configuration.
pub fn run(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    match cfg.experiment {
        ExperimentKind::WholeSpaceSolve => run_whole_space(cfg),
        ExperimentKind::LowfreqSweep => run_lowfreq_convergence(cfg),
        ExperimentKind::LimabsSweep => run_limabs(cfg),
        ExperimentKind::NeumannCheck => run_neumann_check(cfg),
        ExperimentKind::Spectrum => run_spectrum(cfg),
        ExperimentKind::StaticSolve => run_static(cfg),
        ExperimentKind::VerifyB1 => run_verify_b1(cfg),
        ExperimentKind::EstimateProbe => run_estimate_probe(cfg),
    }
}

/// Two-grid residual study of the representation formulas, radiation
/// defects of the outgoing solution and of the incoming control, and
/// optional evaluation at user targets.
pub fn run_whole_space(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let seed = cfg.seed()?;
    let c = cfg.material.constants()?;
    let w = Complex64::new(cfg.omega, 0.0);
    let mut out = SweepResult::new(ExperimentKind::WholeSpaceSolve);
    let (bf, bg) = bump_sources(cfg.source.radius, seed);

    let mut res = Table::new("two-grid", &["level", "h", "residual", "reduction"]);
    let mut prev: Option<f64> = None;
    let mut worst = f64::INFINITY;
    for level in 0..2usize {
        let n = cfg.source.n << level;
        let h = cfg.source.h / (1 << level) as f64;
        let grid = Arc::new(GridDomain::whole_space([n; 3], h, [0.0; 3])?);
        let k = HelmholtzKernel::new(w, c.eps0, c.mu0)?;
        let m = ((cfg.residual_box / h).round() as usize).max(2);
        let target = Arc::new(GridDomain::whole_space([m; 3], h, [0.0; 3])?);
        let (e, hh) = solve_on_grid(&bf.sample(&grid, FieldKind::Edge), &bg.sample(&grid, FieldKind::Face), &k, &target)?;
        let r = maxwell_residual(&e, &hh, &bf.sample(&target, FieldKind::Edge), &bg.sample(&target, FieldKind::Face), w, c)?;
        let red = prev.map_or(f64::NAN, |p| p / r);
        if prev.is_some() {
            worst = worst.min(red);
        }
        res.push(vec![level.into(), h.into(), r.into(), red.into()]);
        prev = Some(r);
    }
    out.flag("residual_reduction", worst >= cfg.tolerances.residual_drop);
    out.tables.push(res);

    let grid = source_grid(&cfg.source)?;
    let (f, g) = bump_data(&grid, cfg.source.radius, seed);
    let mut rad = Table::new("radiation", &["wave", "radius", "defect"]);
    for (name, kernel) in [("outgoing", HelmholtzKernel::new(w, c.eps0, c.mu0)?), ("incoming", HelmholtzKernel::incoming(w, c.eps0, c.mu0)?)] {
        let mut samples = Vec::with_capacity(cfg.radii.len());
        for &r in &cfg.radii {
            let pts = sphere_points(r, cfg.sphere_points);
            let s = solve_whole_space(&f, &g, &kernel, &pts)?;
            samples.push(pts.iter().zip(s.e.iter().zip(&s.h)).map(|(x, (e, h))| (*x, *e, *h)).collect::<Vec<_>>());
        }
        let rep = radiation_defect(&samples, c)?;
        for (r, d) in rep.radii.iter().zip(&rep.defects) {
            rad.push(vec![name.into(), (*r).into(), (*d).into()]);
        }
        out.slopes.insert(format!("{name}_decay_exponent"), rep.decay_exponent);
        if name == "outgoing" {
            out.flag("outgoing_decay", rep.decay_exponent >= cfg.tolerances.outgoing_min);
        } else {
            out.flag("incoming_control", rep.decay_exponent < cfg.tolerances.incoming_max);
        }
    }
    out.tables.push(rad);

    if let Some(path) = &cfg.targets_csv {
        let pts = load_targets_csv(path)?;
        let s = solve_whole_space(&f, &g, &HelmholtzKernel::new(w, c.eps0, c.mu0)?, &pts)?;
        let mut t = Table::new(
            "targets",
            &["x", "y", "z", "e1_re", "e1_im", "e2_re", "e2_im", "e3_re", "e3_im", "h1_re", "h1_im", "h2_re", "h2_im", "h3_re", "h3_im"],
        );
        for (x, (e, h)) in pts.iter().zip(s.e.iter().zip(&s.h)) {
            let mut row: Vec<Cell> = x.iter().map(|v| Cell::Num(*v)).collect();
            for v in e.iter().chain(h.iter()) {
                row.push(v.re.into());
                row.push(v.im.into());
            }
            t.push(row);
        }
        out.tables.push(t);
    }
    Ok(out)
}

fn sorted_frequencies(cfg: &ExperimentConfig) -> Vec<f64> {
    let mut ws = cfg.frequencies.clone();
    ws.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
    ws
}

/// `|(E, H)_omega - (E, H)_0|` along the frequency list (descending), and the
/// sampled operator-norm proxy `sup |(L_omega - L_0) d| / |d|` over seeded
/// normalized divergence-free data.
pub fn run_lowfreq_convergence(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    if cfg.bounded {
        return run_lowfreq_bounded(cfg);
    }
    let seed = cfg.seed()?;
    let c = cfg.material.constants()?;
    let ws = sorted_frequencies(cfg);
    let grid = source_grid(&cfg.source)?;
    let target = cfg.test_box.build()?;
    let t = WeightExponent::new(cfg.solution_weight)?;
    let s = WeightExponent::new(cfg.data_weight)?;
    let rho_e = StaggeredField::zeros(&grid, FieldKind::Node);
    let rho_m = StaggeredField::zeros(&grid, FieldKind::Cell);

    let sweep = |f: &StaggeredField, g: &StaggeredField| -> Result<Vec<f64>> {
        let (e0, h0) = static_on_grid(f, g, &rho_e, &rho_m, c, &target)?;
        ws.iter()
            .map(|&w| {
                let k = HelmholtzKernel::new(Complex64::new(w, 0.0), c.eps0, c.mu0)?;
                let (e, h) = solve_on_grid(f, g, &k, &target)?;
                pair_norm(&e.sub(&e0)?, &h.sub(&h0)?, t)
            })
            .collect()
    };
    let (f, g) = solenoidal_data(&grid, cfg.source.radius, seed)?;
    let diffs = sweep(&f, &g)?;
    let mut proxy = vec![0.0f64; ws.len()];
    for k in 0..cfg.samples {
        let (f, g) = solenoidal_data(&grid, cfg.source.radius, seed.wrapping_add(1 + k as u64))?;
        let dn = pair_norm(&f, &g, s)?;
        for (p, d) in proxy.iter_mut().zip(sweep(&f, &g)?) {
            *p = p.max(d / dn);
        }
    }
    let mut out = SweepResult::new(ExperimentKind::LowfreqSweep);
    let mut tab = Table::new("convergence", &["omega", "difference", "norm_proxy"]);
    for ((w, d), p) in ws.iter().zip(&diffs).zip(&proxy) {
        tab.push(vec![(*w).into(), (*d).into(), (*p).into()]);
    }
    out.tables.push(tab);
    let aw: Vec<f64> = ws.iter().map(|w| w.abs()).collect();
    if ws.len() >= 2 {
        out.slopes.insert("difference".into(), loglog_slope(&aw, &diffs));
        out.slopes.insert("norm_proxy".into(), loglog_slope(&aw, &proxy));
    }
    out.flag("difference_decreasing", strictly_decreasing(&diffs));
    out.flag("final_fraction", diffs[diffs.len() - 1] < cfg.tolerances.final_fraction * diffs[0] || diffs.len() == 1);
    out.flag("proxy_decreasing", strictly_decreasing(&proxy));
    Ok(out)
}

fn build_operator(cfg: &ExperimentConfig) -> Result<MaxwellOperatorMatrix> {
    let domain = Arc::new(cfg.grid.build()?);
    let law = cfg.material.law(&domain)?;
    assemble(&domain, &law)
}

/// Bounded mode: resolvent solutions against the static pair solution for
/// kernel-free data `d = M u`.
fn run_lowfreq_bounded(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let seed = cfg.seed()?;
    let op = build_operator(cfg)?;
    let spec = kernel_basis(&op)?;
    let solver = StaticSolver::new(&op)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = random_vector(&vec![true; op.n()], &mut rng);
    let d = op.apply_m(&u)?;
    let (df, dg) = op.to_fields(&d)?;
    let el = StaticProblemData { g: dg, f: StaggeredField::zeros(op.domain(), FieldKind::Node), zeta: vec![ZERO; solver.b1.d] };
    let mg = MagnetostaticData { f: df, g: StaggeredField::zeros(op.domain(), FieldKind::Cell), theta: vec![ZERO; solver.b2.d] };
    let (e0, h0, _) = solver.solve_pair(&el, &mg)?;
    let u0 = op.from_fields(&e0.field, &h0.field)?;
    let n0 = op.lambda_norm(&u0);
    let ws = sorted_frequencies(cfg);
    let mut diffs = Vec::with_capacity(ws.len());
    for &w in &ws {
        let uw = Resolvent::new(&op, Some(&spec), Complex64::new(w, 0.0))?.solve(&d);
        let diff: Vec<Complex64> = uw.iter().zip(&u0).map(|(a, b)| a - b).collect();
        diffs.push(op.lambda_norm(&diff) / n0);
    }
    let mut out = SweepResult::new(ExperimentKind::LowfreqSweep);
    let mut tab = Table::new("convergence", &["omega", "difference"]);
    for (w, d) in ws.iter().zip(&diffs) {
        tab.push(vec![(*w).into(), (*d).into()]);
    }
    out.tables.push(tab);
    if ws.len() >= 2 {
        let aw: Vec<f64> = ws.iter().map(|w| w.abs()).collect();
        out.slopes.insert("difference".into(), loglog_slope(&aw, &diffs));
    }
    out.flag("difference_decreasing", strictly_decreasing(&diffs));
    out.notes.push(format!("sigma_min = {:.6e}", spec.sigma_min));
    Ok(out)
}

/// Differences between the solutions at `omega + i delta` and `omega`.
pub fn run_limabs(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let seed = cfg.seed()?;
    let c = cfg.material.constants()?;
    let grid = source_grid(&cfg.source)?;
    let target = cfg.test_box.build()?;
    let (f, g) = bump_data(&grid, cfg.source.radius, seed);
    let mut deltas = cfg.deltas.clone();
    deltas.sort_by(|a, b| b.total_cmp(a));
    let rows = limiting_absorption_sweep(&f, &g, cfg.omega, &deltas, c, &target, WeightExponent::new(cfg.solution_weight)?)?;
    let mut out = SweepResult::new(ExperimentKind::LimabsSweep);
    let mut tab = Table::new("absorption", &["delta", "difference"]);
    for r in &rows {
        tab.push(vec![r.delta.into(), r.difference.into()]);
    }
    out.tables.push(tab);
    let d: Vec<f64> = rows.iter().map(|r| r.difference).collect();
    if rows.len() >= 2 && rows.iter().all(|r| r.delta > 0.0) {
        out.slopes.insert("difference".into(), loglog_slope(&deltas, &d));
    }
    out.flag("difference_decreasing", strictly_decreasing(&d));
    out.flag("final_fraction", d.len() == 1 || d[d.len() - 1] < cfg.tolerances.final_fraction * d[0]);
    Ok(out)
}

/// Neumann series against direct resolvent solves at fractions of
/// `sigma_min`, plus the zero-data and pure-kernel checks.
pub fn run_neumann_check(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    if let Some(x) = cfg.frequencies.iter().find(|x| x.abs() >= 1.0) {
        return Err(Error::Config(format!("frequency factor {x} is not below sigma_min")));
    }
    let seed = cfg.seed()?;
    let tol = &cfg.tolerances;
    let op = build_operator(cfg)?;
    let spec = kernel_basis(&op)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = random_vector(&vec![true; op.n()], &mut rng);
    let mut out = SweepResult::new(ExperimentKind::NeumannCheck);
    let mut tab = Table::new(
        "series",
        &["data", "factor", "omega", "relative_error", "terms", "fitted_ratio", "predicted_ratio", "ratio_deviation"],
    );
    let mut worst_err: f64 = 0.0;
    let mut worst_ratio: f64 = 0.0;
    let mut factors = cfg.frequencies.clone();
    factors.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    for &x in &factors {
        let w = Complex64::new(x * spec.sigma_min, 0.0);
        let ns = neumann_series(&op, &spec, w, &d, 1e-15)?;
        let u = Resolvent::new(&op, Some(&spec), w)?.solve(&d);
        let diff: Vec<Complex64> = u.iter().zip(&ns.solution).map(|(a, b)| a - b).collect();
        let err = op.lambda_norm(&diff) / op.lambda_norm(&u);
        let dg = &ns.diagnostics;
        let dev = (dg.fitted_ratio - dg.predicted_ratio).abs() / dg.predicted_ratio;
        worst_err = worst_err.max(err);
        worst_ratio = worst_ratio.max(dev);
        tab.push(vec![
            "random".into(),
            x.into(),
            w.re.into(),
            err.into(),
            dg.term_norms.len().into(),
            dg.fitted_ratio.into(),
            dg.predicted_ratio.into(),
            dev.into(),
        ]);
    }
    let x0 = factors[0];
    let w0 = Complex64::new(x0 * spec.sigma_min, 0.0);
    let zero = neumann_series(&op, &spec, w0, &vec![ZERO; op.n()], 1e-15)?;
    let zero_ok = zero.solution.iter().all(|v| *v == ZERO);
    tab.push(vec!["zero".into(), x0.into(), w0.re.into(), if zero_ok { 0.0 } else { f64::INFINITY }.into(), 1usize.into(), f64::NAN.into(), f64::NAN.into(), f64::NAN.into()]);
    // pure kernel data: L_omega(Lambda k) = -i k / omega
    let mut kernel_err = 0.0;
    if spec.kernel_dim() > 0 {
        let mut k = vec![ZERO; op.n()];
        for j in 0..spec.kernel_dim() {
            let kv = spec.kernel_vector(j);
            let c = Complex64::new(((j * 7919) % 13) as f64 - 6.0, ((j * 104729) % 11) as f64 - 5.0);
            for (a, b) in k.iter_mut().zip(&kv) {
                *a += c * b;
            }
        }
        let ns = neumann_series(&op, &spec, w0, &op.apply_lambda(&k), 1e-15)?;
        let i = Complex64::new(0.0, 1.0);
        let expect: Vec<Complex64> = k.iter().map(|v| -i * v / w0).collect();
        let diff: Vec<Complex64> = ns.solution.iter().zip(&expect).map(|(a, b)| a - b).collect();
        kernel_err = op.lambda_norm(&diff) / op.lambda_norm(&expect);
        tab.push(vec!["kernel".into(), x0.into(), w0.re.into(), kernel_err.into(), ns.diagnostics.term_norms.len().into(), f64::NAN.into(), f64::NAN.into(), f64::NAN.into()]);
    }
    out.tables.push(tab);
    out.flag("series_matches_resolvent", worst_err <= tol.neumann_relative);
    out.flag("term_ratio", worst_ratio <= tol.ratio_relative);
    out.flag("zero_data", zero_ok);
    out.flag("kernel_term_exact", kernel_err <= tol.kernel_exact);
    out.notes.push(format!("sigma_min = {:.6e}, kernel dimension {}", spec.sigma_min, spec.kernel_dim()));
    Ok(out)
}

/// Spectrum, kernel and harmonic-field dimensions, and their invariance
/// under random SPD material laws.
pub fn run_spectrum(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let domain = Arc::new(cfg.grid.build()?);
    let mut out = SweepResult::new(ExperimentKind::Spectrum);
    let mut dims = Table::new("dimensions", &["law", "electric", "magnetic", "ambiguous"]);
    let mut laws = vec![("configured".to_string(), cfg.material.law(&domain)?)];
    for &s in &cfg.invariance_seeds {
        let amp = if cfg.material.random_amplitude > 0.0 { cfg.material.random_amplitude } else { 0.3 };
        laws.push((format!("random-{s}"), MaterialLaw::random_spd(domain.len(FieldKind::Cell), cfg.material.eps0, cfg.material.mu0, amp, s)?));
    }
    let mut found = Vec::new();
    for (name, law) in &laws {
        let op = assemble(&domain, law)?;
        let he = harmonic_fields(&op, Side::Electric)?;
        let hm = harmonic_fields(&op, Side::Magnetic)?;
        let amb = he.rank.ambiguous || hm.rank.ambiguous;
        dims.push(vec![name.as_str().into(), he.dim().into(), hm.dim().into(), amb.into()]);
        found.push([he.dim(), hm.dim()]);
        if amb {
            out.notes.push(format!("{name}: rank decision ambiguous"));
        }
    }
    let op = assemble(&domain, &laws[0].1)?;
    let spec = kernel_basis(&op)?;
    let mut ev = Table::new("eigenvalues", &["index", "eigenvalue"]);
    for (i, l) in spec.eigenvalues.iter().enumerate() {
        ev.push(vec![i.into(), (*l).into()]);
    }
    out.flag("dimensions_invariant", found.windows(2).all(|w| w[0] == w[1]));
    if let Some(e) = cfg.expected_dims {
        out.flag("expected_dimensions", found[0] == e);
    }
    out.flag("kernel_orthonormal", spec.orthonormality_defect <= 1e-10);
    out.notes.push(format!(
        "rank {} of {}, kernel dims {:?}, sigma_min {:.6e}",
        spec.rank.rank,
        op.n(),
        spec.kernel_dims,
        spec.sigma_min
    ));
    out.tables.push(dims);
    out.tables.push(ev);
    Ok(out)
}

fn write_node_part(op: &MaxwellOperatorMatrix, v: &[Complex64]) -> StaggeredField {
    let mut f = StaggeredField::zeros(op.domain(), FieldKind::Node);
    for (&i, x) in op.nodes.iter().zip(v) {
        f.values_mut()[i] = *x;
    }
    f
}

fn write_cell_part(op: &MaxwellOperatorMatrix, v: &[Complex64]) -> StaggeredField {
    let mut f = StaggeredField::zeros(op.domain(), FieldKind::Cell);
    for (&i, x) in op.cells.iter().zip(v) {
        f.values_mut()[i] = *x;
    }
    f
}

fn dump(cfg: &ExperimentConfig, name: &str, f: &StaggeredField) -> Result<()> {
    if let (true, Some(dir)) = (cfg.output.dump_fields, &cfg.output.dir) {
        std::fs::create_dir_all(dir)?;
        f.write_sfld(dir.join(format!("{name}.sfld")))?;
    }
    Ok(())
}

/// Static round trips on a bounded domain: zero data, manufactured
/// electric and magnetic fields, unit moments and the joint pair solve.
pub fn run_static(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let seed = cfg.seed()?;
    let tol = &cfg.tolerances;
    let op = build_operator(cfg)?;
    let s = StaticSolver::new(&op)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SweepResult::new(ExperimentKind::StaticSolve);
    let mut tab = Table::new("round-trip", &["case", "relative_error", "rotation", "divergence", "moments", "gram_condition"]);

    let zero_e = StaticProblemData {
        g: StaggeredField::zeros(op.domain(), FieldKind::Face),
        f: StaggeredField::zeros(op.domain(), FieldKind::Node),
        zeta: vec![ZERO; s.b1.d],
    };
    let zero_m = MagnetostaticData {
        f: StaggeredField::zeros(op.domain(), FieldKind::Edge),
        g: StaggeredField::zeros(op.domain(), FieldKind::Cell),
        theta: vec![ZERO; s.b2.d],
    };
    let ze = s.solve_electric(&zero_e)?;
    let zm = s.solve_magnetic(&zero_m)?;
    let zero_ok = ze.field.max_abs() == 0.0 && zm.field.max_abs() == 0.0;
    tab.push(vec!["zero".into(), (ze.field.max_abs() + zm.field.max_abs()).into(), 0.0.into(), 0.0.into(), 0.0.into(), f64::NAN.into()]);

    let e_star = random_vector(&vec![true; op.n_e()], &mut rng);
    let h_star = random_vector(&vec![true; op.n_f()], &mut rng);
    let el = StaticProblemData {
        g: op.face_field(&op.curl.apply(&e_star)),
        f: write_node_part(&op, &s.div_eps(&e_star)),
        zeta: s.moments(Side::Electric, &e_star),
    };
    let mg = MagnetostaticData {
        f: op.edge_field(&s.rot_dual(&h_star)),
        g: write_cell_part(&op, &s.div_mu(&h_star)),
        theta: s.moments(Side::Magnetic, &h_star),
    };
    let se = s.solve_electric(&el)?;
    let sm = s.solve_magnetic(&mg)?;
    let rel = |x: &StaggeredField, star: &[Complex64], side: Side| -> Result<f64> {
        let (v, a) = match side {
            Side::Electric => (op.edge_part(x)?, &op.a_e),
            Side::Magnetic => (op.face_part(x)?, &op.a_f),
        };
        let d: Vec<Complex64> = v.iter().zip(star).map(|(p, q)| p - q).collect();
        Ok(norm_w(&d, a) / norm_w(star, a))
    };
    let ee = rel(&se.field, &e_star, Side::Electric)?;
    let em = rel(&sm.field, &h_star, Side::Magnetic)?;
    for (name, sol, err) in [("electric", &se, ee), ("magnetic", &sm, em)] {
        tab.push(vec![
            name.into(),
            err.into(),
            sol.residuals.rotation.into(),
            sol.residuals.divergence.into(),
            sol.residuals.moments.into(),
            sol.gram_condition.into(),
        ]);
    }
    let again = s.solve_electric(&el)?;
    let deterministic = again.field.values() == se.field.values();

    let mut unit_ok = true;
    for l in 0..s.b1.d {
        let mut zeta = vec![ZERO; s.b1.d];
        zeta[l] = Complex64::new(1.0, 0.0);
        let sol = s.solve_electric(&StaticProblemData { zeta, ..zero_e.clone() })?;
        let e = op.edge_part(&sol.field)?;
        let m = s.moments(Side::Electric, &e);
        let merr = m.iter().enumerate().map(|(j, v)| (v - if j == l { 1.0 } else { 0.0 }).norm()).fold(0.0, f64::max);
        unit_ok &= merr <= tol.moment_absolute && sol.residuals.rotation <= tol.static_relative && sol.residuals.divergence <= tol.static_relative;
        tab.push(vec![format!("unit-moment-{l}").as_str().into(), f64::NAN.into(), sol.residuals.rotation.into(), sol.residuals.divergence.into(), merr.into(), sol.gram_condition.into()]);
        dump(cfg, &format!("harmonic-{l}"), &sol.field)?;
    }

    // joint solve of M (E, H) = (F, G) with F = -rot H*
    let pair_f = mg.f.scaled(Complex64::new(-1.0, 0.0));
    let (pe, ph, pres) = s.solve_pair(&el, &MagnetostaticData { f: pair_f, ..mg.clone() })?;
    let pair_err = rel(&pe.field, &e_star, Side::Electric)?.max(rel(&ph.field, &h_star, Side::Magnetic)?);
    tab.push(vec!["pair".into(), pair_err.into(), pres.into(), pe.residuals.divergence.max(ph.residuals.divergence).into(), pe.residuals.moments.max(ph.residuals.moments).into(), f64::NAN.into()]);
    dump(cfg, "static-e", &se.field)?;
    dump(cfg, "static-h", &sm.field)?;

    out.flag("zero_data", zero_ok);
    out.flag("electric_round_trip", ee <= tol.static_relative && se.residuals.rotation.max(se.residuals.divergence) <= tol.static_relative);
    out.flag("magnetic_round_trip", em <= tol.static_relative && sm.residuals.rotation.max(sm.residuals.divergence) <= tol.static_relative);
    out.flag("moments", se.residuals.moments.max(sm.residuals.moments) <= tol.moment_absolute);
    out.flag("unit_moments", unit_ok);
    out.flag("pair", pair_err <= tol.static_relative && pres <= tol.static_relative);
    out.flag("deterministic", deterministic);
    out.notes.push(format!("|B1| = {}, |B2| = {}", s.b1.d, s.b2.d));
    out.tables.push(tab);
    Ok(out)
}

/// Construction steps of both moment sets plus the zeroed-element
/// negative control.
pub fn run_verify_b1(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let op = build_operator(cfg)?;
    let mut out = SweepResult::new(ExperimentKind::VerifyB1);
    let mut tab = Table::new(
        "steps",
        &["side", "case", "basis", "collar_dim", "domain_dim", "step1_ratio", "step2_ratio", "step3_ratio", "passed"],
    );
    for side in [Side::Electric, Side::Magnetic] {
        let sname = match side {
            Side::Electric => "electric",
            Side::Magnetic => "magnetic",
        };
        let b = build_B(&op, side)?;
        let r = check_steps(&op, &b)?;
        let row = |case: &str, r: &crate::statics::StepsReport| -> Vec<Cell> {
            vec![
                sname.into(),
                case.into(),
                r.dims.0.into(),
                r.dims.1.into(),
                r.dims.2.into(),
                r.step1_ratio.into(),
                r.step2_ratio.into(),
                r.step3_ratio.into(),
                r.passed().into(),
            ]
        };
        tab.push(row("built", &r));
        out.flag(&format!("{sname}_steps"), r.passed());
        if r.ambiguous_rank {
            out.notes.push(format!("{sname}: rank decision ambiguous"));
        }
        for (l, e) in b.elements.iter().enumerate() {
            dump(cfg, &format!("b{}-{l}", if side == Side::Electric { 1 } else { 2 }), e)?;
        }
        if b.d > 0 {
            let bad = check_steps(&op, &b.with_zeroed(&op, 0))?;
            tab.push(row("zeroed-element", &bad));
            out.flag(&format!("{sname}_negative_control"), !bad.step3_nondegenerate);
        }
    }
    out.tables.push(tab);
    Ok(out)
}

fn scalar_probe(grid: &Arc<GridDomain>, b: &BumpSum) -> StaggeredField {
    StaggeredField::from_fn(grid, FieldKind::Node, |x, _| b.eval(x, 0))
}

/// Sampled ratios of the a-priori estimates: the weighted Poincare
/// estimate on two grids, the static Maxwell estimate on the bounded
/// domain, and the frequency band of the whole-space a-priori ratio.
pub fn run_estimate_probe(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let seed = cfg.seed()?;
    let tol = &cfg.tolerances;
    let mut out = SweepResult::new(ExperimentKind::EstimateProbe);
    let tm1 = WeightExponent::new(-1.0)?;

    // |u|_{-1} / |grad u| for compactly supported scalars
    let mut pt = Table::new("poincare", &["level", "h", "samples", "max_ratio"]);
    let mut maxima = Vec::new();
    for level in 0..2usize {
        let n = cfg.source.n << level;
        let h = cfg.source.h / (1 << level) as f64;
        let grid = Arc::new(GridDomain::whole_space([n; 3], h, [0.0; 3])?);
        let mut worst: f64 = 0.0;
        for k in 0..cfg.samples {
            let spread = cfg.source.radius / 4.0;
            let b = BumpSum::random(2, cfg.source.radius - spread, spread, seed.wrapping_add(k as u64));
            let u = scalar_probe(&grid, &b);
            let gu = discrete_grad(&u, Mask::Unmasked)?;
            let den = weighted_norm(&gu, WeightExponent::ZERO, Gamma::Identity)?;
            if den > 0.0 {
                worst = worst.max(weighted_norm(&u, tm1, Gamma::Identity)? / den);
            }
        }
        pt.push(vec![level.into(), h.into(), cfg.samples.into(), worst.into()]);
        maxima.push(worst);
    }
    let stab = maxima[1] / maxima[0];
    out.slopes.insert("poincare_refinement_ratio".into(), stab);
    out.flag("poincare_stable", stab <= tol.refinement_factor && stab >= 1.0 / tol.refinement_factor && maxima.iter().all(|m| m.is_finite()));
    out.tables.push(pt);

    // |E|_eps / (|rot E| + |div eps E| + sum |moments|) on the bounded domain
    let op = build_operator(cfg)?;
    let s = StaticSolver::new(&op)?;
    let w_n: Vec<f64> = {
        let w = op.domain().geometric_weights(FieldKind::Node);
        op.nodes.iter().map(|&i| w[i]).collect()
    };
    let mut mt = Table::new("maxwell-estimate", &["sample", "ratio", "skipped"]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for k in 0..=cfg.samples {
        // the last probe lies in the excluded set rot = div = 0, moments = 0
        let e = if k < cfg.samples { random_vector(&vec![true; op.n_e()], &mut rng) } else { vec![ZERO; op.n_e()] };
        let den = norm_w(&op.curl.apply(&e), &op.w_f)
            + norm_w(&s.div_eps(&e), &w_n)
            + s.moments(Side::Electric, &e).iter().map(|m| m.norm()).sum::<f64>();
        if den == 0.0 {
            mt.push(vec![k.into(), f64::NAN.into(), "ratio undefined: rot, div and moments vanish".into()]);
            continue;
        }
        let r = norm_w(&e, &op.a_e) / den;
        worst = worst.max(r);
        mt.push(vec![k.into(), r.into(), "".into()]);
    }
    out.slopes.insert("maxwell_estimate_max_ratio".into(), worst);
    out.flag("maxwell_estimate_finite", worst.is_finite() && worst > 0.0);
    out.tables.push(mt);

    // frequency band of |(E, H)|_{R_t} / (|(F, G)|_s + |omega|^{-1} |div (F, G)|_s)
    let c = cfg.material.constants()?;
    let grid = source_grid(&cfg.source)?;
    let target = cfg.test_box.build()?;
    let t = WeightExponent::new(cfg.solution_weight)?;
    let sw = WeightExponent::new(cfg.data_weight)?;
    let (f, g) = bump_data(&grid, cfg.source.radius, seed);
    let (df, dg) = source_divergences(&f, &g)?;
    let dn = pair_norm(&f, &g, sw)?;
    let divn = pair_norm(&df, &dg, sw)?;
    let mut ws = cfg.frequencies.clone();
    ws.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    let mut at = Table::new("a-priori", &["omega", "ratio"]);
    let mut ratios = Vec::new();
    for &w in &ws {
        let k = HelmholtzKernel::new(Complex64::new(w, 0.0), c.eps0, c.mu0)?;
        let (e, h) = solve_on_grid(&f, &g, &k, &target)?;
        let r = rot_norm(&e, &h, t)? / (dn + divn / w.abs());
        at.push(vec![w.into(), r.into()]);
        ratios.push(r);
    }
    let b = band(&ratios);
    out.slopes.insert("a_priori_band".into(), b);
    out.flag("a_priori_band", b <= tol.band_factor);
    out.tables.push(at);
    Ok(out)
}

/// Machine-readable record of one run, written even when the run failed.
#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub schema: &'static str,
    pub experiment: ExperimentKind,
    pub passed: bool,
    pub flags: BTreeMap<String, bool>,
    pub slopes: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    pub files: Vec<String>,
    pub error: Option<String>,
    pub config: ExperimentConfig,
}

/// Writes one CSV per table and `summary.json` into `dir`.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, outcome: &Result<SweepResult>) -> Result<RunSummary> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut summary = RunSummary {
        schema: "maxlow-summary v1",
        experiment: cfg.experiment,
        passed: false,
        flags: BTreeMap::new(),
        slopes: BTreeMap::new(),
        notes: Vec::new(),
        files: Vec::new(),
        error: None,
        config: cfg.clone(),
    };
    match outcome {
        Ok(r) => {
            for t in &r.tables {
                let name = format!("{}-{}.csv", cfg.experiment.name(), t.name);
                write_atomic(&dir.join(&name), t.to_csv().as_bytes())?;
                files.push(name);
            }
            summary.passed = r.passed();
            summary.flags = r.flags.clone();
            summary.slopes = r.slopes.clone();
            summary.notes = r.notes.clone();
        }
        Err(e) => summary.error = Some(e.to_string()),
    }
    summary.files = files;
    let json = serde_json::to_vec_pretty(&summary)?;
    write_atomic(&dir.join("summary.json"), &json)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(kind: ExperimentKind) -> ExperimentConfig {
        let mut c = ExperimentConfig::defaults(kind);
        c.seed = Some(1);
        c
    }

    #[test]
    fn json_overrides_merge_into_defaults() {
        let c = ExperimentConfig::from_json(r#"{"experiment":"limabs-sweep","seed":3,"source":{"n":8}}"#, None).unwrap();
        assert_eq!(c.seed, Some(3));
        assert_eq!(c.source.n, 8);
        assert_eq!(c.source.h, 0.125);
        assert_eq!(c.experiment, ExperimentKind::LimabsSweep);
        assert!(ExperimentConfig::from_json(r#"{"experiment":"spectrum","bogus":1}"#, None).is_err());
        assert!(ExperimentConfig::from_json(r#"{"experiment":"spectrum"}"#, Some(ExperimentKind::StaticSolve)).is_err());
    }

    #[test]
    fn seed_is_mandatory_and_lists_are_checked() {
        let mut c = ExperimentConfig::defaults(ExperimentKind::LowfreqSweep);
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.seed = Some(0);
        c.frequencies.clear();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.frequencies = vec![1.0, 0.0];
        assert!(c.validate().is_err());
        c.frequencies = vec![1.0];
        c.tolerances.band_factor = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn single_frequency_gives_single_row() {
        let mut c = cfg(ExperimentKind::LowfreqSweep);
        c.frequencies = vec![0.0625];
        c.samples = 1;
        c.source = SourceConfig { n: 8, h: 0.25, radius: 0.8 };
        c.test_box = BoxConfig { n: 4, h: 0.5 };
        let r = run(&c).unwrap();
        assert_eq!(r.tables[0].rows.len(), 1);
    }

    #[test]
    fn neumann_factors_at_or_above_sigma_min_are_rejected() {
        let mut c = cfg(ExperimentKind::NeumannCheck);
        c.frequencies = vec![0.1, 1.0];
        assert!(matches!(run(&c), Err(Error::Config(_))));
    }

    #[test]
    fn verify_b1_on_solid_cube_reports_zero_and_passes() {
        let mut c = cfg(ExperimentKind::VerifyB1);
        c.grid = GridConfig { geometry: Geometry::SolidCube, n: 4, m: 0, thickness: 1, h: 0.5, label: BoundaryLabel::Gamma1 };
        let r = run(&c).unwrap();
        assert!(r.passed());
        assert_eq!(r.tables[0].column("basis").unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn csv_has_version_header_and_is_deterministic() {
        let mut t = Table::new("x", &["a", "b"]);
        t.push(vec![1usize.into(), 0.1.into()]);
        t.push(vec!["p,q".into(), f64::NAN.into()]);
        let s = t.to_csv();
        assert!(s.starts_with("# maxlow-csv v1\na,b\n1,1.00000000000000006e-1\n"));
        assert!(s.contains("\"p,q\",NaN"));
        assert_eq!(s, t.to_csv());
    }

    #[test]
    fn summary_is_written_on_failure() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(ExperimentKind::Spectrum);
        let s = write_outputs(dir.path(), &c, &Err(Error::Config("boom".into()))).unwrap();
        assert!(!s.passed);
        let text = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
        assert!(text.contains("boom"));
        assert!(text.contains("\"invariance_seeds\""));
    }
}
