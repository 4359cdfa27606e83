//! Sweep plans, their execution, and the CSV/JSON artefacts they produce.
//!
//! Every CSV starts with a schema line `# platehomog table=<kind> version=<n>`
//! followed by a header row. Floats are written with `{:.16e}` so a
//! read-write cycle reproduces the file byte for byte.

use crate::assembly::{chi_norm, Cell};
use crate::cell_mesh::{CellMesh, MeshError};
use crate::cell_problems::{CellProblemError, CellSolver, Force, Mode};
use crate::fiber_spectrum::{self, EigenOptions, KornConvention, SpectrumError, KORN_RATIOS};
use crate::fit;
use crate::homogenised::{self, HomogenisedError};
use crate::material::{rotation_about_y1, ElasticityTensor, MaterialError, MaterialField};
use crate::resolvent_lab::{self, ChiGrid, GapSpec, OutputComponent, ResolventError, Theorem};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid plan: {0}")]
    Config(String),
    #[error("{table} table is missing column '{column}'")]
    MissingColumn { table: TableKind, column: String },
    #[error("bad schema line: {0}")]
    Schema(String),
    #[error("column '{column}', row {row}: cannot parse '{value}' as a number")]
    Parse { column: String, row: usize, value: String },
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Cell(#[from] CellProblemError),
    #[error(transparent)]
    Homogenised(#[from] HomogenisedError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(transparent)]
    Resolvent(#[from] ResolventError),
}

pub type Result<T> = std::result::Result<T, SweepError>;

/// Kinds of tabular output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableKind {
    Spectrum,
    Rates,
    Theorem,
    Homog,
    Korn,
}

impl TableKind {
    pub const ALL: [TableKind; 5] = [TableKind::Spectrum, TableKind::Rates, TableKind::Theorem, TableKind::Homog, TableKind::Korn];

    pub fn name(self) -> &'static str {
        match self {
            TableKind::Spectrum => "spectrum",
            TableKind::Rates => "rates",
            TableKind::Theorem => "theorem",
            TableKind::Homog => "homog",
            TableKind::Korn => "korn",
        }
    }

    /// Columns every table of this kind must carry. Spectrum tables need at
    /// least `lam1`; further `lamK` columns are optional.
    pub fn required_columns(self) -> Vec<String> {
        let v: Vec<&str> = match self {
            TableKind::Spectrum => vec!["chi1", "chi2", "chi_mag", "lam1", "status"],
            TableKind::Rates => vec![
                "mode",
                "depth",
                "chi_mag",
                "err_L2_inplane",
                "err_L2_vert",
                "err_H1_inplane",
                "err_H1_vert",
                "status",
            ],
            TableKind::Theorem => vec!["theorem", "gamma", "delta", "eps", "sup_gap", "argmax_chi_mag", "status"],
            TableKind::Homog => return homog_columns(),
            TableKind::Korn => {
                let mut c = vec!["chi_mag"];
                c.extend(KORN_RATIOS);
                c.push("status");
                c
            }
        };
        v.into_iter().map(String::from).collect()
    }
}

impl std::fmt::Display for TableKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TableKind {
    type Err = SweepError;
    fn from_str(s: &str) -> Result<Self> {
        TableKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| SweepError::Schema(format!("unknown table kind '{s}'")))
    }
}

fn homog_columns() -> Vec<String> {
    let mut c = Vec::new();
    for i in 0..6 {
        for j in i..6 {
            c.push(format!("L_{}{}", i + 1, j + 1));
        }
    }
    for b in ["L1", "L2"] {
        for i in 0..3 {
            for j in i..3 {
                c.push(format!("{b}_{}{}", i + 1, j + 1));
            }
        }
    }
    c
}

/// Float formatting used in every table.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// A typed CSV table held as strings, so unknown columns survive a round trip.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub kind: TableKind,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(kind: TableKind, header: Vec<String>) -> Self {
        Self { kind, header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| SweepError::MissingColumn { table: self.kind, column: name.to_string() })
    }

    pub fn column(&self, name: &str) -> Result<Vec<&str>> {
        let i = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[i].as_str()).collect())
    }

    pub fn column_f64(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.column_index(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(row, r)| {
                r[i].parse::<f64>().map_err(|_| SweepError::Parse { column: name.to_string(), row, value: r[i].clone() })
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# platehomog table={} version={SCHEMA_VERSION}", self.kind)?;
        let mut cw = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        cw.write_record(&self.header)?;
        for r in &self.rows {
            cw.write_record(r)?;
        }
        cw.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("CSV output is UTF-8"))
    }

    /// Parses a table, checking the schema line and the required columns.
    pub fn read_csv<R: Read>(mut r: R, expected: Option<TableKind>) -> Result<Table> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        let (first, rest) = text.split_once('\n').ok_or_else(|| SweepError::Schema("empty file".into()))?;
        let kind = parse_schema_line(first)?;
        if let Some(e) = expected {
            if e != kind {
                return Err(SweepError::Schema(format!("expected a {e} table, found {kind}")));
            }
        }
        let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(rest.as_bytes());
        let header: Vec<String> = rd.headers()?.iter().map(String::from).collect();
        let mut table = Table::new(kind, header);
        for rec in rd.records() {
            table.rows.push(rec?.iter().map(String::from).collect());
        }
        for c in kind.required_columns() {
            table.column_index(&c)?;
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path, expected: Option<TableKind>) -> Result<Table> {
        Table::read_csv(std::fs::File::open(path)?, expected)
    }
}

fn parse_schema_line(line: &str) -> Result<TableKind> {
    let bad = || SweepError::Schema(line.to_string());
    let rest = line.trim_end_matches('\r').strip_prefix("# platehomog ").ok_or_else(bad)?;
    let mut kind = None;
    let mut version = None;
    for part in rest.split_whitespace() {
        match part.split_once('=') {
            Some(("table", k)) => kind = Some(k.parse::<TableKind>()?),
            Some(("version", v)) => version = v.parse::<u32>().ok(),
            _ => return Err(bad()),
        }
    }
    match (kind, version) {
        (Some(k), Some(SCHEMA_VERSION)) => Ok(k),
        (Some(_), Some(v)) => Err(SweepError::Schema(format!("unsupported schema version {v}"))),
        _ => Err(bad()),
    }
}

/// One phase of a material description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PhaseSpec {
    Isotropic {
        lambda: f64,
        mu: f64,
    },
    Cubic {
        c11: f64,
        c12: f64,
        c44: f64,
        /// Rotation angle about the y1 axis (radians); non-zero angles break
        /// planar symmetry.
        #[serde(default)]
        rotation_y1: f64,
    },
    /// 21 upper-triangular Voigt entries, row by row.
    Voigt {
        upper: Vec<f64>,
    },
}

impl PhaseSpec {
    pub fn build(&self) -> std::result::Result<ElasticityTensor, MaterialError> {
        match self {
            PhaseSpec::Isotropic { lambda, mu } => ElasticityTensor::isotropic(*lambda, *mu),
            PhaseSpec::Cubic { c11, c12, c44, rotation_y1 } => {
                let c = ElasticityTensor::cubic(*c11, *c12, *c44)?;
                if *rotation_y1 == 0.0 {
                    Ok(c)
                } else {
                    c.rotated(&rotation_about_y1(*rotation_y1))
                }
            }
            PhaseSpec::Voigt { upper } => ElasticityTensor::from_upper_triangle(upper),
        }
    }
}

/// Phases plus their in-plane arrangement. Without a raster the first phase
/// fills the cell; `checkerboard = n` alternates the first two phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSpec {
    pub phases: Vec<PhaseSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raster: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkerboard: Option<usize>,
}

impl MaterialSpec {
    pub fn build(&self) -> Result<MaterialField> {
        let phases = self.phases.iter().map(PhaseSpec::build).collect::<std::result::Result<Vec<_>, _>>()?;
        if phases.is_empty() {
            return Err(SweepError::Config("material needs at least one phase".into()));
        }
        let raster = match (&self.raster, self.checkerboard) {
            (Some(_), Some(_)) => return Err(SweepError::Config("give either raster or checkerboard, not both".into())),
            (Some(r), None) => r.clone(),
            (None, Some(n)) => {
                if phases.len() < 2 || n == 0 {
                    return Err(SweepError::Config("checkerboard needs two phases and n >= 1".into()));
                }
                (0..n).map(|i| (0..n).map(|j| (i + j) % 2).collect()).collect()
            }
            (None, None) => vec![vec![0]],
        };
        Ok(MaterialField::new(raster, phases)?)
    }
}

/// A list of |chi| or epsilon values, explicit or log-spaced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Values {
    List(Vec<f64>),
    Log { min: f64, max: f64, count: usize },
}

impl Values {
    pub fn resolve(&self, what: &str) -> Result<Vec<f64>> {
        let v = match self {
            Values::List(v) => v.clone(),
            Values::Log { min, max, count } => {
                if *count == 0 || !(*min > 0.0) || max < min {
                    return Err(SweepError::Config(format!("{what}: need 0 < min <= max and count >= 1")));
                }
                fit::logspace(*min, *max, *count)
            }
        };
        if v.is_empty() {
            return Err(SweepError::Config(format!("{what}: empty grid")));
        }
        if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(SweepError::Config(format!("{what}: values must be positive and finite")));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumPlan {
    #[serde(default = "default_direction")]
    pub direction: [f64; 2],
    pub magnitudes: Values,
    #[serde(default = "default_nev")]
    pub nev: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnsatzPlan {
    pub mode: Mode,
    pub force: String,
    #[serde(default = "default_direction")]
    pub direction: [f64; 2],
    pub magnitudes: Values,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoremPlan {
    pub theorem: Theorem,
    pub gamma: f64,
    #[serde(default)]
    pub delta: f64,
    #[serde(default = "default_component")]
    pub component: OutputComponent,
    pub eps: Values,
    #[serde(default)]
    pub grid: ChiGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KornPlan {
    pub magnitudes: Values,
    #[serde(default = "default_korn_directions")]
    pub directions: usize,
    #[serde(default = "default_korn_random")]
    pub n_random: usize,
    #[serde(default = "default_korn_eigen")]
    pub n_eigen: usize,
    #[serde(default)]
    pub convention: KornConvention,
}

fn default_direction() -> [f64; 2] {
    [1.0, 0.0]
}
fn default_nev() -> usize {
    4
}
fn default_component() -> OutputComponent {
    OutputComponent::All
}
fn default_korn_directions() -> usize {
    4
}
fn default_korn_random() -> usize {
    8
}
fn default_korn_eigen() -> usize {
    4
}
fn default_mesh() -> [usize; 3] {
    [8, 8, 8]
}
fn default_seed() -> u64 {
    7
}

/// Plan kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanKind {
    Spectrum,
    AnsatzRates,
    Theorem,
    Homogenise,
    Korn,
}

impl PlanKind {
    pub fn table(self) -> TableKind {
        match self {
            PlanKind::Spectrum => TableKind::Spectrum,
            PlanKind::AnsatzRates => TableKind::Rates,
            PlanKind::Theorem => TableKind::Theorem,
            PlanKind::Homogenise => TableKind::Homog,
            PlanKind::Korn => TableKind::Korn,
        }
    }
}

/// Acceptance tolerances; any field can be overridden in a plan file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Eigenvalue slopes 4 and 2.
    pub spectrum_slope: f64,
    /// Flat slope of the fourth eigenvalue.
    pub spectrum_flat: f64,
    pub ansatz_slope: f64,
    pub theorem_slope: f64,
    /// In-plane slope of the bending comparison.
    pub theorem_inplane_slope: f64,
    /// Vertical slope of the general comparison.
    pub theorem_general_slope: f64,
    pub exact: f64,
    pub solvability: f64,
    pub korn_change: f64,
    pub eigen_residual: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            spectrum_slope: 0.15,
            spectrum_flat: 0.2,
            ansatz_slope: 0.25,
            theorem_slope: 0.3,
            theorem_inplane_slope: 0.4,
            theorem_general_slope: 0.2,
            exact: 1e-10,
            solvability: 1e-10,
            korn_change: 0.1,
            eigen_residual: 1e-10,
        }
    }
}

impl Tolerances {
    /// Allowed slope deviation of a theorem sweep.
    pub fn theorem(&self, theorem: Theorem, component: OutputComponent) -> f64 {
        match (theorem, component) {
            (Theorem::Bending, OutputComponent::InPlane) => self.theorem_inplane_slope,
            (Theorem::General, _) => self.theorem_general_slope,
            _ => self.theorem_slope,
        }
    }
}

/// A complete sweep description, usually read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    pub plan: PlanKind,
    #[serde(default = "default_mesh")]
    pub mesh: [usize; 3],
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub material: MaterialSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ansatz: Option<AnsatzPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theorem: Option<TheoremPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub korn: Option<KornPlan>,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl PlanConfig {
    /// Checks everything that can be checked without solving.
    pub fn validate(&self) -> Result<MaterialField> {
        let field = self.material.build()?;
        CellMesh::new(self.mesh[0], self.mesh[1], self.mesh[2])?;
        let missing = |s: &str| SweepError::Config(format!("plan '{}' needs a [{s}] section", self.plan_name()));
        match self.plan {
            PlanKind::Spectrum => {
                let s = self.spectrum.as_ref().ok_or_else(|| missing("spectrum"))?;
                s.magnitudes.resolve("spectrum.magnitudes")?;
                if s.nev == 0 || chi_norm(s.direction) == 0.0 {
                    return Err(SweepError::Config("spectrum needs nev >= 1 and a non-zero direction".into()));
                }
            }
            PlanKind::AnsatzRates => {
                let a = self.ansatz.as_ref().ok_or_else(|| missing("ansatz"))?;
                a.magnitudes.resolve("ansatz.magnitudes")?;
                Force::preset(&a.force)?;
                if chi_norm(a.direction) == 0.0 {
                    return Err(SweepError::Config("ansatz direction must be non-zero".into()));
                }
                if a.mode.parity().is_some() && !field.planar_symmetric() {
                    return Err(CellProblemError::NotPlanar(a.mode).into());
                }
            }
            PlanKind::Theorem => {
                let t = self.theorem.as_ref().ok_or_else(|| missing("theorem"))?;
                t.eps.resolve("theorem.eps")?;
                t.grid.validate()?;
                t.theorem.check_parameters(t.gamma, t.delta)?;
                if t.theorem != Theorem::General && !field.planar_symmetric() {
                    return Err(ResolventError::NotPlanar(t.theorem).into());
                }
            }
            PlanKind::Korn => {
                let k = self.korn.as_ref().ok_or_else(|| missing("korn"))?;
                k.magnitudes.resolve("korn.magnitudes")?;
                if k.directions == 0 || k.n_random + k.n_eigen == 0 {
                    return Err(SweepError::Config("korn needs directions >= 1 and at least one sample".into()));
                }
            }
            PlanKind::Homogenise => {}
        }
        Ok(field)
    }

    fn plan_name(&self) -> String {
        serde_json::to_value(self.plan).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
    }

    pub fn solver(&self, field: MaterialField) -> Result<CellSolver> {
        let mesh = CellMesh::new(self.mesh[0], self.mesh[1], self.mesh[2])?;
        Ok(CellSolver::new(Cell::new(mesh, field))?)
    }
}

/// Machine-readable run summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub plan: PlanConfig,
    pub slopes: BTreeMap<String, f64>,
    pub constants: BTreeMap<String, f64>,
    pub pass: bool,
    pub tolerances: Tolerances,
}

impl Summary {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Table plus summary of one executed plan.
#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub table: Table,
    pub summary: Summary,
}

impl SweepOutput {
    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.table.save(&dir.join(format!("{stem}.csv")))?;
        std::fs::write(dir.join(format!("{stem}.json")), self.summary.to_json()?)?;
        Ok(())
    }
}

fn status_of<E: std::fmt::Display>(r: &std::result::Result<(), E>) -> String {
    match r {
        Ok(()) => "ok".into(),
        Err(e) => format!("error: {e}").replace(['\n', ','], " "),
    }
}

/// Executes a validated plan.
pub fn run_plan(cfg: &PlanConfig) -> Result<SweepOutput> {
    let field = cfg.validate()?;
    let solver = cfg.solver(field)?;
    let tol = cfg.tolerances;
    let mut slopes = BTreeMap::new();
    let mut constants = BTreeMap::new();
    let (table, pass) = match cfg.plan {
        PlanKind::Spectrum => {
            let p = cfg.spectrum.as_ref().expect("validated");
            let mags = p.magnitudes.resolve("spectrum.magnitudes")?;
            let nev = p.nev.max(4);
            let mut header: Vec<String> = ["chi1", "chi2", "chi_mag"].map(String::from).to_vec();
            header.extend((1..=nev).map(|k| format!("lam{k}")));
            header.push("status".into());
            let mut table = Table::new(TableKind::Spectrum, header);
            let opts = EigenOptions { seed: cfg.seed, ..EigenOptions::default() };
            let cell = solver.cell();
            let pass = match fiber_spectrum::scaling_sweep(cell, p.direction, &mags, nev, &opts) {
                Ok(rep) => {
                    for r in &rep.records {
                        let mut row = vec![fmt_f64(r.chi[0]), fmt_f64(r.chi[1]), fmt_f64(chi_norm(r.chi))];
                        row.extend(r.eigenvalues.iter().take(nev).map(|&v| fmt_f64(v)));
                        let worst = r.residuals.iter().cloned().fold(0.0, f64::max);
                        row.push(if worst <= tol.eigen_residual { "ok".into() } else { format!("residual {worst:.3e}") });
                        table.push(row);
                    }
                    slopes.insert("lam1".into(), rep.slope_first.slope);
                    slopes.insert("lam2+lam3".into(), rep.slope_pair.slope);
                    slopes.insert("lam4".into(), rep.slope_fourth.slope);
                    constants.insert("quartic_constant".into(), rep.quartic_constant);
                    (rep.slope_first.slope - 4.0).abs() <= tol.spectrum_slope
                        && (rep.slope_pair.slope - 2.0).abs() <= tol.spectrum_slope
                        && rep.slope_fourth.slope.abs() <= tol.spectrum_flat
                }
                Err(SpectrumError::Fit(e)) => return Err(SweepError::Config(format!("spectrum fit: {e}"))),
                Err(e) => return Err(e.into()),
            };
            (table, pass)
        }
        PlanKind::AnsatzRates => {
            let p = cfg.ansatz.as_ref().expect("validated");
            let mags = p.magnitudes.resolve("ansatz.magnitudes")?;
            let force = Force::preset(&p.force)?;
            let study = resolvent_lab::ansatz_rates(&solver, &force, p.mode, p.direction, &mags)?;
            let mut table = Table::new(TableKind::Rates, TableKind::Rates.required_columns());
            for r in &study.rows {
                let e = r.errors.map(|e| [e.l2[0], e.l2[1], e.h1[0], e.h1[1]]).unwrap_or([f64::NAN; 4]);
                let mut row = vec![p.mode.to_string(), r.depth.to_string(), fmt_f64(r.chi_mag)];
                row.extend(e.map(fmt_f64));
                row.push(r.status.replace(',', " "));
                table.push(row);
            }
            let expected = resolvent_lab::expected_slopes(p.mode);
            let mut pass = true;
            for (d, fits) in study.slopes.iter().enumerate() {
                for (c, name) in ["inplane", "vert"].iter().enumerate() {
                    match fits[c] {
                        Some(f) => {
                            slopes.insert(format!("depth{d}_H1_{name}"), f.slope);
                            pass &= (f.slope - expected[d][c]).abs() <= tol.ansatz_slope;
                        }
                        None => pass = false,
                    }
                }
            }
            if let Some(s) = study.f3_sensitivity {
                constants.insert("f3_sensitivity".into(), s);
                pass &= s <= 1e-12;
            }
            (table, pass)
        }
        PlanKind::Theorem => {
            let p = cfg.theorem.as_ref().expect("validated");
            let eps = p.eps.resolve("theorem.eps")?;
            let mut spec = GapSpec::new(p.theorem, p.gamma, p.delta, p.component);
            spec.seed = cfg.seed;
            let sweep = resolvent_lab::theorem_sweep(&solver, &spec, &eps, &p.grid)?;
            let mut header = TableKind::Theorem.required_columns();
            header.insert(3, "component".into());
            let mut table = Table::new(TableKind::Theorem, header);
            for r in &sweep.rows {
                table.push(vec![
                    r.theorem.to_string(),
                    fmt_f64(r.gamma),
                    fmt_f64(r.delta),
                    r.component.name().to_string(),
                    fmt_f64(r.eps),
                    fmt_f64(r.sup_gap),
                    fmt_f64(r.argmax_chi_mag),
                    r.status.clone(),
                ]);
            }
            constants.insert("predicted_slope".into(), sweep.predicted);
            if let Some(a) = sweep.argmax_slope {
                constants.insert("argmax_slope".into(), a);
            }
            let pass = match sweep.fit {
                Some(f) => {
                    slopes.insert("eps".into(), f.slope);
                    (f.slope - sweep.predicted).abs() <= tol.theorem(p.theorem, p.component)
                }
                None => false,
            };
            (table, pass)
        }
        PlanKind::Homogenise => {
            let l = homogenised::compute_l(&solver)?;
            let mut table = Table::new(TableKind::Homog, homog_columns());
            table.push(l.flat_entries().into_iter().map(fmt_f64).collect());
            constants.insert("L2_11".into(), l.l2[0][0]);
            constants.insert("L1_11".into(), l.l1[0][0]);
            let cross = l.cross_block_ratio();
            constants.insert("cross_block_ratio".into(), cross);
            let pass = !solver.cell().field().planar_symmetric() || cross <= tol.exact;
            (table, pass)
        }
        PlanKind::Korn => {
            let p = cfg.korn.as_ref().expect("validated");
            let mags = p.magnitudes.resolve("korn.magnitudes")?;
            let mut header: Vec<String> = vec!["chi1".into(), "chi2".into(), "chi_mag".into()];
            header.extend(KORN_RATIOS.map(String::from));
            header.push("status".into());
            let mut table = Table::new(TableKind::Korn, header);
            let opts = EigenOptions { seed: cfg.seed, ..EigenOptions::default() };
            let mut overall = [0.0f64; 5];
            let mut pass = true;
            for &r in &mags {
                for k in 0..p.directions {
                    let ang = std::f64::consts::PI * k as f64 / p.directions as f64 + 0.1;
                    let chi = [r * ang.cos(), r * ang.sin()];
                    let res = fiber_spectrum::korn_probe(solver.cell(), chi, p.n_random, p.n_eigen, cfg.seed, p.convention, &opts);
                    let mut row = vec![fmt_f64(chi[0]), fmt_f64(chi[1]), fmt_f64(r)];
                    match &res {
                        Ok(rep) => {
                            for (o, v) in overall.iter_mut().zip(rep.max_ratios) {
                                *o = o.max(v);
                            }
                            pass &= rep.max_ratios.iter().all(|v| v.is_finite());
                            row.extend(rep.max_ratios.map(fmt_f64));
                        }
                        Err(_) => {
                            pass = false;
                            row.extend([f64::NAN; 5].map(fmt_f64));
                        }
                    }
                    row.push(status_of(&res.map(|_| ())));
                    table.push(row);
                }
            }
            for (name, v) in KORN_RATIOS.iter().zip(overall) {
                constants.insert(format!("max_{name}"), v);
            }
            (table, pass)
        }
    };
    Ok(SweepOutput { table, summary: Summary { plan: cfg.clone(), slopes, constants, pass, tolerances: tol } })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iso() -> MaterialSpec {
        MaterialSpec { phases: vec![PhaseSpec::Isotropic { lambda: 1.0, mu: 1.0 }], raster: None, checkerboard: None }
    }

    fn sample_table() -> Table {
        let mut t = Table::new(TableKind::Theorem, TableKind::Theorem.required_columns());
        t.header.push("note".into());
        t.push(vec![
            "membrane".into(),
            fmt_f64(0.0),
            fmt_f64(0.0),
            fmt_f64(0.125),
            fmt_f64(1.0 / 3.0),
            fmt_f64(f64::NAN),
            "ok".into(),
            "kept".into(),
        ]);
        t
    }

    #[test]
    fn csv_round_trip_is_bitwise() {
        let t = sample_table();
        let s = t.to_csv_string().unwrap();
        let back = Table::read_csv(s.as_bytes(), Some(TableKind::Theorem)).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_csv_string().unwrap(), s);
        assert_eq!(back.column_f64("sup_gap").unwrap()[0].to_bits(), (1.0f64 / 3.0).to_bits());
        assert_eq!(back.column("note").unwrap(), vec!["kept"]);
    }

    #[test]
    fn missing_column_is_named() {
        let s = "# platehomog table=rates version=1\nmode,depth,chi_mag,err_L2_inplane,err_L2_vert,err_H1_inplane,status\n";
        match Table::read_csv(s.as_bytes(), None) {
            Err(SweepError::MissingColumn { column, .. }) => assert_eq!(column, "err_H1_vert"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schema_line_is_checked() {
        let s = sample_table().to_csv_string().unwrap();
        assert!(matches!(Table::read_csv(s.as_bytes(), Some(TableKind::Korn)), Err(SweepError::Schema(_))));
        let v2 = s.replace("version=1", "version=2");
        assert!(matches!(Table::read_csv(v2.as_bytes(), None), Err(SweepError::Schema(_))));
        assert!(Table::read_csv("chi_mag\n".as_bytes(), None).is_err());
    }

    #[test]
    fn empty_grid_is_rejected() {
        let cfg = PlanConfig {
            plan: PlanKind::Spectrum,
            mesh: [2, 2, 2],
            seed: 1,
            material: iso(),
            spectrum: Some(SpectrumPlan { direction: [1.0, 0.0], magnitudes: Values::List(vec![]), nev: 4 }),
            ansatz: None,
            theorem: None,
            korn: None,
            tolerances: Tolerances::default(),
        };
        assert!(matches!(cfg.validate(), Err(SweepError::Config(_))));
    }

    #[test]
    fn theorem_parameters_are_validated() {
        let mut cfg = PlanConfig {
            plan: PlanKind::Theorem,
            mesh: [2, 2, 2],
            seed: 1,
            material: iso(),
            spectrum: None,
            ansatz: None,
            theorem: Some(TheoremPlan {
                theorem: Theorem::Membrane,
                gamma: -3.0,
                delta: 0.0,
                component: OutputComponent::All,
                eps: Values::List(vec![0.1]),
                grid: ChiGrid::default(),
            }),
            korn: None,
            tolerances: Tolerances::default(),
        };
        assert!(cfg.validate().is_err());
        cfg.theorem.as_mut().unwrap().gamma = 0.0;
        assert!(cfg.validate().is_ok());
        cfg.plan = PlanKind::Korn;
        assert!(matches!(cfg.validate(), Err(SweepError::Config(_))));
    }

    #[test]
    fn homogenise_plan_writes_one_row() {
        let cfg = PlanConfig {
            plan: PlanKind::Homogenise,
            mesh: [2, 2, 4],
            seed: 1,
            material: iso(),
            spectrum: None,
            ansatz: None,
            theorem: None,
            korn: None,
            tolerances: Tolerances::default(),
        };
        let out = run_plan(&cfg).unwrap();
        assert_eq!(out.table.rows.len(), 1);
        assert_eq!(out.table.header.len(), 33);
        let l2 = out.table.column_f64("L2_11").unwrap()[0];
        assert!((l2 - 8.0 / 3.0).abs() < 1e-10);
        assert!(out.summary.pass);
        let json: serde_json::Value = serde_json::from_str(&out.summary.to_json().unwrap()).unwrap();
        for key in ["plan", "slopes", "constants", "pass", "tolerances"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }
}
