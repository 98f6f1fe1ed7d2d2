//! Declarative experiment configurations and the runner that turns them
//! into CSV and VTK files.

use std::cell::RefCell;
use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    self, error_norms, prolongate, ConditionMode, ErrorNorms, LanczosOptions, Spectrum, VonMisesFormula,
};
use crate::assembly::{
    assemble_system, build_level, AssemblyOptions, GhostScaling, Level, Material, MaterialCase, PlaneModel,
};
use crate::error::{Error, Result};
use crate::geometry::{
    generate_random_inclusions_with, EllipseLevelSet, InclusionSet, RandomInclusionBounds,
};
use crate::linalg::Csr;
use crate::mesh::{build_hierarchy, ElementTag, MeshLevel};
use crate::multigrid::{build_transfer, write_history, CoarseOperator, MgHierarchy, MgOptions, MgPcgSolver, TransferKind};
use crate::saddle::{
    augment, compute_gamma_s, AugmentMode, AugmentedSystem, DirectSolver, DualPreconditioner, PowerOptions,
    PreconditionerKind, PreconditionerStiffness, PrimalSolver, SolveReport, UzawaOptions, UzawaResult,
};
use crate::vtk::write_vtk;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Convergence,
    Preconditioners,
    MultiInclusion,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::Preconditioners => "preconditioners",
            ExperimentKind::MultiInclusion => "multi_inclusion",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// 50 elements per side, five levels.
    Paper,
    /// Sized to finish within minutes on one core.
    Desk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub n0: usize,
    pub levels: usize,
}

impl MeshConfig {
    pub fn preset(kind: ExperimentKind, preset: Preset) -> Self {
        match (preset, kind) {
            (Preset::Paper, _) => Self { n0: 50, levels: 5 },
            // 35 random inclusions cannot be kept apart at h = 1/25
            (Preset::Desk, ExperimentKind::MultiInclusion) => Self { n0: 50, levels: 3 },
            (Preset::Desk, _) => Self { n0: 25, levels: 4 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialConfig {
    pub cases: Vec<MaterialCase>,
    pub nu: f64,
    pub model: PlaneModel,
}

impl Default for MaterialConfig {
    fn default() -> Self {
        Self {
            cases: MaterialCase::ALL.to_vec(),
            nu: 0.3,
            model: PlaneModel::PlaneStrain,
        }
    }
}

impl MaterialConfig {
    pub fn material(&self, case: MaterialCase) -> Result<Material> {
        let base = case.material();
        let mut m = Material::new(base.e_matrix, base.e_inclusion[0], self.nu)?;
        m.model = self.model;
        Ok(m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InclusionSource {
    /// The single rotated ellipse of the benchmark.
    #[default]
    Reference,
    Explicit,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InclusionConfig {
    pub source: InclusionSource,
    /// Used with `source = "explicit"`.
    pub list: Vec<EllipseLevelSet>,
    /// Inclusion counts for `source = "random"`.
    pub counts: Vec<usize>,
    pub bounds: RandomInclusionBounds,
}

impl Default for InclusionConfig {
    fn default() -> Self {
        Self {
            source: InclusionSource::Reference,
            list: Vec::new(),
            counts: vec![5, 15, 25, 35],
            bounds: RandomInclusionBounds::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PrimalKind {
    /// MG-PCG on every level above the coarsest.
    #[default]
    Multigrid,
    Direct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub preconditioners: Vec<PreconditionerKind>,
    pub preconditioner_stiffness: PreconditionerStiffness,
    pub tol_dual: f64,
    pub tol_primal: f64,
    /// The reference solution is computed with tolerances divided by this.
    pub reference_tightening: f64,
    pub max_dual_it: usize,
    pub eps_g: f64,
    pub ghost_scaling: GhostScaling,
    pub gamma_override: Option<f64>,
    pub primal: PrimalKind,
    pub nu1: usize,
    pub nu2: usize,
    pub max_primal_it: usize,
    pub transfer: TransferKind,
    pub coarse_operator: CoarseOperator,
    pub condition_mode: ConditionMode,
    /// Dense condition estimates are used up to this many multipliers,
    /// Lanczos above.
    pub dense_limit: usize,
    pub von_mises: VonMisesFormula,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            preconditioners: vec![PreconditionerKind::Feti],
            preconditioner_stiffness: PreconditionerStiffness::Augmented,
            tol_dual: 1e-12,
            tol_primal: 1e-14,
            reference_tightening: 10.0,
            max_dual_it: 1000,
            eps_g: 0.1,
            ghost_scaling: GhostScaling::Stiffness,
            gamma_override: None,
            primal: PrimalKind::Multigrid,
            nu1: 3,
            nu2: 3,
            max_primal_it: 500,
            transfer: TransferKind::DualBasis,
            coarse_operator: CoarseOperator::Galerkin,
            condition_mode: ConditionMode::Dense,
            dense_limit: 300,
            von_mises: VonMisesFormula::Full,
        }
    }
}

impl SolverConfig {
    pub fn assembly(&self) -> AssemblyOptions {
        AssemblyOptions {
            eps_g: self.eps_g,
            ghost_scaling: self.ghost_scaling,
            ..Default::default()
        }
    }

    pub fn mg(&self) -> MgOptions {
        MgOptions {
            nu1: self.nu1,
            nu2: self.nu2,
            transfer: self.transfer,
            coarse_operator: self.coarse_operator,
            max_it: self.max_primal_it,
            ..Default::default()
        }
    }

    pub fn uzawa(&self, tightening: f64) -> UzawaOptions {
        UzawaOptions {
            tol_dual: self.tol_dual / tightening,
            tol_primal: self.tol_primal / tightening,
            max_it: self.max_dual_it,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub vtk: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("output"),
            vtk: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    pub mesh: MeshConfig,
    #[serde(default)]
    pub material: MaterialConfig,
    #[serde(default)]
    pub inclusions: InclusionConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    /// The benchmark defaults for one experiment.
    pub fn preset(kind: ExperimentKind, preset: Preset) -> Self {
        let mut cfg = Self {
            experiment: kind,
            seed: 0,
            mesh: MeshConfig::preset(kind, preset),
            material: MaterialConfig::default(),
            inclusions: InclusionConfig::default(),
            solver: SolverConfig::default(),
            output: OutputConfig::default(),
        };
        match kind {
            ExperimentKind::Convergence => {}
            ExperimentKind::Preconditioners => {
                cfg.solver.preconditioners = vec![
                    PreconditionerKind::Identity,
                    PreconditionerKind::Simple,
                    PreconditionerKind::Lacour,
                    PreconditionerKind::Feti,
                ];
            }
            ExperimentKind::MultiInclusion => {
                cfg.material.cases = vec![MaterialCase::Hard];
                cfg.inclusions.source = InclusionSource::Random;
            }
        }
        cfg
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("field `{field}`: {why}")));
        if self.mesh.n0 < 2 {
            return bad("mesh.n0", "must be at least 2");
        }
        if self.mesh.levels < 2 {
            return bad("mesh.levels", "need at least 2 levels");
        }
        let s = &self.solver;
        for (name, v) in [
            ("solver.tol_dual", s.tol_dual),
            ("solver.tol_primal", s.tol_primal),
            ("solver.reference_tightening", s.reference_tightening),
        ] {
            if !(v > 0.0) {
                return bad(name, "must be positive");
            }
        }
        if !(s.eps_g >= 0.0) {
            return bad("solver.eps_g", "must be non-negative");
        }
        if let Some(g) = s.gamma_override {
            if !(g >= 0.0) {
                return bad("solver.gamma_override", "must be non-negative");
            }
        }
        if s.preconditioners.is_empty() {
            return bad("solver.preconditioners", "list is empty");
        }
        if s.max_dual_it == 0 || s.max_primal_it == 0 {
            return bad("solver.max_*_it", "must be positive");
        }
        if self.material.cases.is_empty() {
            return bad("material.cases", "list is empty");
        }
        if !(self.material.nu > 0.0 && self.material.nu < 0.5) {
            return bad("material.nu", "must lie in (0, 0.5)");
        }
        match self.inclusions.source {
            InclusionSource::Explicit if self.inclusions.list.is_empty() => {
                return bad("inclusions.list", "explicit source needs at least one inclusion")
            }
            InclusionSource::Random if self.inclusions.counts.is_empty() => {
                return bad("inclusions.counts", "random source needs at least one count")
            }
            _ => {}
        }
        Ok(())
    }
}

/// Mesh levels over one inclusion set with the transfers between them.
pub struct Hierarchy {
    pub levels: Vec<Level>,
    pub transfers: Vec<Csr>,
}

pub fn build_levels(mesh: &MeshConfig, inc: &InclusionSet, opts: &AssemblyOptions, transfer: TransferKind) -> Result<Hierarchy> {
    let levels = build_hierarchy(mesh.n0, mesh.levels)?
        .iter()
        .map(|m| build_level(m, inc, opts))
        .collect::<Result<Vec<_>>>()?;
    let transfers = levels
        .windows(2)
        .map(|w| build_transfer(&w[0], &w[1], transfer, MgOptions::default().drop_tol))
        .collect::<Result<Vec<_>>>()?;
    Ok(Hierarchy { levels, transfers })
}

/// Augmented system of level `l`.
pub fn augmented_system(level: &Level, mat: &Material, cfg: &SolverConfig) -> Result<AugmentedSystem> {
    let sys = assemble_system(level, mat, &cfg.assembly())?;
    let gamma = match cfg.gamma_override {
        Some(g) => g,
        None => compute_gamma_s(&sys.a, &sys.b, &PowerOptions::default())?,
    };
    Ok(augment(sys, gamma, AugmentMode::Explicit))
}

pub enum Primal {
    Direct(DirectSolver),
    Multigrid(MgPcgSolver),
}

impl Primal {
    pub fn as_solver(&self) -> &dyn PrimalSolver {
        match self {
            Primal::Direct(d) => d,
            Primal::Multigrid(m) => m,
        }
    }

    fn take_traces(&self) -> Vec<Vec<crate::multigrid::MgStep>> {
        match self {
            Primal::Direct(_) => Vec::new(),
            Primal::Multigrid(m) => m.take_traces(),
        }
    }
}

/// Direct solve on the coarsest level (or when configured), MG-PCG over
/// levels `0..=l` otherwise.
pub fn primal_solver(
    h: &Hierarchy,
    l: usize,
    aug: &AugmentedSystem,
    mat: &Material,
    cfg: &SolverConfig,
    traced: bool,
) -> Result<Primal> {
    let a = aug.matrix().into_owned();
    if l == 0 || cfg.primal == PrimalKind::Direct {
        return Ok(Primal::Direct(DirectSolver::new(&a)?));
    }
    let transfers = h.transfers[..l].to_vec();
    let mg = match cfg.coarse_operator {
        CoarseOperator::Galerkin => MgHierarchy::galerkin(a, transfers, cfg.mg())?,
        CoarseOperator::Reassembled => {
            let mut mats = Vec::with_capacity(l + 1);
            for lv in &h.levels[..l] {
                mats.push(augmented_system(lv, mat, cfg)?.matrix().into_owned());
            }
            mats.push(a);
            MgHierarchy::from_matrices(mats, transfers, cfg.mg())?
        }
    };
    Ok(Primal::Multigrid(if traced {
        MgPcgSolver::traced(mg)
    } else {
        MgPcgSolver::new(mg)
    }))
}

/// One Uzawa solve of level `l` (0-based) with the given preconditioner.
pub struct LevelSolve {
    pub result: UzawaResult,
    pub traces: Vec<Vec<crate::multigrid::MgStep>>,
}

pub fn solve_level(
    h: &Hierarchy,
    l: usize,
    mat: &Material,
    cfg: &SolverConfig,
    kind: PreconditionerKind,
    tightening: f64,
    traced: bool,
) -> Result<LevelSolve> {
    let aug = augmented_system(&h.levels[l], mat, cfg)?;
    let primal = primal_solver(h, l, &aug, mat, cfg, traced)?;
    let p = DualPreconditioner::for_system(kind, &aug, cfg.preconditioner_stiffness)?;
    let mut result = crate::saddle::uzawa(&aug, &p, primal.as_solver(), &cfg.uzawa(tightening), None)?;
    result.report.level = l + 1;
    Ok(LevelSolve {
        result,
        traces: primal.take_traces(),
    })
}

/// Spectra of the preconditioned Schur complement of level `l`, one per
/// preconditioner kind. The dense Schur complement is formed once.
pub fn level_spectra(
    h: &Hierarchy,
    l: usize,
    mat: &Material,
    cfg: &SolverConfig,
    kinds: &[PreconditionerKind],
) -> Result<Vec<Result<Spectrum>>> {
    let aug = augmented_system(&h.levels[l], mat, cfg)?;
    let primal = primal_solver(h, l, &aug, mat, cfg, false)?;
    let mode = if aug.m() > cfg.dense_limit {
        ConditionMode::Lanczos
    } else {
        cfg.condition_mode
    };
    let dense = match mode {
        ConditionMode::Dense => Some(analysis::schur_dense(&aug, primal.as_solver(), cfg.tol_primal)?),
        ConditionMode::Lanczos => None,
    };
    Ok(kinds
        .iter()
        .map(|&kind| {
            let p = DualPreconditioner::for_system(kind, &aug, cfg.preconditioner_stiffness)?;
            match &dense {
                Some(s) => analysis::spectrum_dense(s, &p.to_dense()),
                None => analysis::estimate_condition(
                    &aug,
                    primal.as_solver(),
                    &p,
                    ConditionMode::Lanczos,
                    cfg.tol_primal,
                    &LanczosOptions::default(),
                ),
            }
        })
        .collect())
}

/// Inclusions for a run; `count` is only used by the random source.
pub fn inclusion_set(cfg: &ExperimentConfig, count: usize) -> Result<InclusionSet> {
    match cfg.inclusions.source {
        InclusionSource::Reference => InclusionSet::single(EllipseLevelSet::reference()),
        InclusionSource::Explicit => InclusionSet::new(cfg.inclusions.list.clone()),
        InclusionSource::Random => random_resolved_inclusions(count, cfg.seed, &cfg.inclusions.bounds, cfg.mesh.n0, &cfg.solver.assembly()),
    }
}

/// Random inclusions that the coarsest mesh resolves one by one and that
/// never share a coarse element.
pub fn random_resolved_inclusions(
    count: usize,
    seed: u64,
    bounds: &RandomInclusionBounds,
    n0: usize,
    opts: &AssemblyOptions,
) -> Result<InclusionSet> {
    let mesh = MeshLevel::new(n0)?;
    let taken: RefCell<HashSet<usize>> = RefCell::new(HashSet::new());
    let set = generate_random_inclusions_with(count, seed, bounds, |cand| {
        let Ok(single) = InclusionSet::single(*cand) else { return false };
        let Ok(level) = build_level(&mesh, &single, opts) else { return false };
        let touched: Vec<usize> = (0..mesh.num_elements())
            .filter(|&e| level.cls.tag(e) != ElementTag::Matrix)
            .collect();
        let mut t = taken.borrow_mut();
        if touched.iter().any(|e| t.contains(e)) {
            return false;
        }
        t.extend(touched);
        true
    })?;
    Ok(set)
}

/// Files written and rows that failed.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub failures: Vec<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            2
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Progress on stderr and MG residual histories on disk.
    pub verbose: bool,
}

fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.10e}")
    } else {
        "nan".into()
    }
}

fn progress(opts: &RunOptions, msg: impl FnOnce() -> String) {
    if opts.verbose {
        eprintln!("{}", msg());
    }
}

pub const CONVERGENCE_HEADER: [&str; 10] = [
    "h",
    "l2_soft",
    "h1_semi_soft",
    "energy_soft",
    "l2_hard",
    "h1_semi_hard",
    "energy_hard",
    "l2_equal",
    "h1_semi_equal",
    "energy_equal",
];

pub fn condition_header() -> Vec<String> {
    let mut h = vec!["h".to_string()];
    for case in MaterialCase::ALL {
        for p in ["s", "simple", "dirichlet", "lacour", "feti"] {
            h.push(format!("{p}_{}", case.name()));
        }
    }
    h
}

pub const ITERATION_HEADER: [&str; 6] = [
    "case",
    "level",
    "preconditioner",
    "dual_iters",
    "total_primal_iters",
    "avg_primal_per_dual",
];

pub const MULTI_HEADER: [&str; 7] = [
    "inclusions",
    "case",
    "level",
    "preconditioner",
    "dual_iters",
    "total_primal_iters",
    "avg_primal_per_dual",
];

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>], out: &mut Outcome) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    out.files.push(path.to_path_buf());
    Ok(())
}

fn strings(h: &[&str]) -> Vec<String> {
    h.iter().map(|s| s.to_string()).collect()
}

fn history_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let d = cfg.output.dir.join("history");
    fs::create_dir_all(&d)?;
    Ok(d)
}

fn dump_traces(
    cfg: &ExperimentConfig,
    tag: &str,
    traces: &[Vec<crate::multigrid::MgStep>],
    out: &mut Outcome,
) -> Result<()> {
    // the initial primal solve is representative of all of them
    if let Some(first) = traces.first() {
        let path = history_dir(cfg)?.join(format!("{tag}.csv"));
        write_history(first, fs::File::create(&path)?)?;
        out.files.push(path);
    }
    Ok(())
}

pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output.dir)?;
    let mut out = Outcome::default();
    let used = cfg.output.dir.join("config.toml");
    fs::write(&used, cfg.to_toml_string())?;
    out.files.push(used);
    match cfg.experiment {
        ExperimentKind::Convergence => run_convergence(cfg, opts, &mut out)?,
        ExperimentKind::Preconditioners => run_preconditioners(cfg, opts, &mut out)?,
        ExperimentKind::MultiInclusion => run_multi(cfg, opts, &mut out)?,
    }
    Ok(out)
}

/// Per case: errors of levels `1..N−1` against level `N`.
pub fn convergence_errors(
    h: &Hierarchy,
    mat: &Material,
    cfg: &SolverConfig,
    kind: PreconditionerKind,
) -> Result<Vec<ErrorNorms>> {
    let last = h.levels.len() - 1;
    let u_f = solve_level(h, last, mat, cfg, kind, cfg.reference_tightening, false)?.result.x;
    let fine = &h.levels[last];
    let mut rows = Vec::with_capacity(last);
    for l in 0..last {
        let u = solve_level(h, l, mat, cfg, kind, 1.0, false)?.result.x;
        let lifted: DVector<f64> = prolongate(&u, &h.transfers[l..]);
        rows.push(error_norms(fine, mat, &u_f, &lifted));
    }
    Ok(rows)
}

fn run_convergence(cfg: &ExperimentConfig, opts: &RunOptions, out: &mut Outcome) -> Result<()> {
    let inc = inclusion_set(cfg, 0)?;
    let h = build_levels(&cfg.mesh, &inc, &cfg.solver.assembly(), cfg.solver.transfer)?;
    let nrows = cfg.mesh.levels - 1;
    let kind = cfg.solver.preconditioners[0];
    let mut table: Vec<Vec<String>> = (0..nrows).map(|l| vec![fmt(h.levels[l].mesh.h())]).collect();
    for case in MaterialCase::ALL {
        let norms = if cfg.material.cases.contains(&case) {
            progress(opts, || format!("convergence: {} case", case.name()));
            match cfg.material.material(case).and_then(|m| convergence_errors(&h, &m, &cfg.solver, kind)) {
                Ok(n) => Some(n),
                Err(e) => {
                    out.failures.push(format!("convergence {}: {e}", case.name()));
                    None
                }
            }
        } else {
            None
        };
        for (l, row) in table.iter_mut().enumerate() {
            let n = norms.as_ref().map(|v| v[l]);
            row.push(fmt(n.map_or(f64::NAN, |n| n.l2)));
            row.push(fmt(n.map_or(f64::NAN, |n| n.h1_semi)));
            row.push(fmt(n.map_or(f64::NAN, |n| n.energy)));
        }
    }
    write_csv(
        &cfg.output.dir.join("example1.csv"),
        &strings(&CONVERGENCE_HEADER),
        &table,
        out,
    )
}

fn report_row(mut prefix: Vec<String>, r: &SolveReport) -> Vec<String> {
    prefix.extend(r.csv_row());
    prefix
}

/// Kept in place of a failed solve.
fn sentinel_row(mut prefix: Vec<String>, level: usize, kind: PreconditionerKind) -> Vec<String> {
    prefix.extend([level.to_string(), kind.name().into(), "-1".into(), "-1".into(), "nan".into()]);
    prefix
}

fn run_preconditioners(cfg: &ExperimentConfig, opts: &RunOptions, out: &mut Outcome) -> Result<()> {
    let inc = inclusion_set(cfg, 0)?;
    let h = build_levels(&cfg.mesh, &inc, &cfg.solver.assembly(), cfg.solver.transfer)?;
    let nl = h.levels.len();

    let mut cond: Vec<Vec<String>> = (0..nl).map(|l| vec![fmt(h.levels[l].mesh.h())]).collect();
    for case in MaterialCase::ALL {
        let mat = cfg.material.material(case)?;
        for (l, row) in cond.iter_mut().enumerate() {
            if !cfg.material.cases.contains(&case) {
                row.extend(PreconditionerKind::ALL.iter().map(|_| fmt(f64::NAN)));
                continue;
            }
            progress(opts, || format!("condition: {} L{}", case.name(), l + 1));
            let spectra = level_spectra(&h, l, &mat, &cfg.solver, &PreconditionerKind::ALL)
                .unwrap_or_else(|e| {
                    let msg = e.to_string();
                    PreconditionerKind::ALL.iter().map(|_| Err(Error::InvalidInput(msg.clone()))).collect()
                });
            for (kind, s) in PreconditionerKind::ALL.iter().zip(spectra) {
                let k = match s {
                    Ok(s) => s.kappa(),
                    Err(e) => {
                        out.failures.push(format!("condition {} L{} {}: {e}", case.name(), l + 1, kind.name()));
                        f64::NAN
                    }
                };
                row.push(fmt(k));
            }
        }
    }
    write_csv(&cfg.output.dir.join("example1_cond.csv"), &condition_header(), &cond, out)?;

    let mut iters = Vec::new();
    for &case in &cfg.material.cases {
        let mat = cfg.material.material(case)?;
        for l in 1..nl {
            for &kind in &cfg.solver.preconditioners {
                progress(opts, || format!("iterations: {} L{} {}", case.name(), l + 1, kind.name()));
                match solve_level(&h, l, &mat, &cfg.solver, kind, 1.0, opts.verbose) {
                    Ok(s) => {
                        if opts.verbose {
                            let tag = format!("{}_L{}_{}", case.name(), l + 1, kind.name());
                            dump_traces(cfg, &tag, &s.traces, out)?;
                        }
                        iters.push(report_row(vec![case.name().into()], &s.result.report));
                    }
                    Err(e) => {
                        out.failures.push(format!("iterations {} L{} {}: {e}", case.name(), l + 1, kind.name()));
                        iters.push(sentinel_row(vec![case.name().into()], l + 1, kind));
                    }
                }
            }
        }
    }
    write_csv(&cfg.output.dir.join("table1.csv"), &strings(&ITERATION_HEADER), &iters, out)
}

fn run_multi(cfg: &ExperimentConfig, opts: &RunOptions, out: &mut Outcome) -> Result<()> {
    let counts: Vec<usize> = match cfg.inclusions.source {
        InclusionSource::Random => cfg.inclusions.counts.clone(),
        _ => vec![inclusion_set(cfg, 0)?.len()],
    };
    let mut rows = Vec::new();
    let mut stress_rows = Vec::new();
    for &count in &counts {
        let built = inclusion_set(cfg, count).and_then(|inc| {
            let h = build_levels(&cfg.mesh, &inc, &cfg.solver.assembly(), cfg.solver.transfer)?;
            Ok((inc, h))
        });
        let (inc, h) = match built {
            Ok(v) => v,
            Err(e) => {
                out.failures.push(format!("{count} inclusions: {e}"));
                for &case in &cfg.material.cases {
                    for l in 1..cfg.mesh.levels {
                        for &kind in &cfg.solver.preconditioners {
                            rows.push(sentinel_row(vec![count.to_string(), case.name().into()], l + 1, kind));
                        }
                    }
                }
                continue;
            }
        };
        let inc_path = cfg.output.dir.join(format!("inclusions_{count}.toml"));
        fs::write(&inc_path, inc.to_toml_string())?;
        out.files.push(inc_path);
        for &case in &cfg.material.cases {
            let mat = cfg.material.material(case)?;
            let last = h.levels.len() - 1;
            let mut finest: Option<DVector<f64>> = None;
            for l in 1..h.levels.len() {
                for &kind in &cfg.solver.preconditioners {
                    progress(opts, || format!("multi: {count} inclusions, {} L{} {}", case.name(), l + 1, kind.name()));
                    match solve_level(&h, l, &mat, &cfg.solver, kind, 1.0, opts.verbose) {
                        Ok(s) => {
                            if opts.verbose {
                                let tag = format!("multi{count}_{}_L{}_{}", case.name(), l + 1, kind.name());
                                dump_traces(cfg, &tag, &s.traces, out)?;
                            }
                            rows.push(report_row(vec![count.to_string(), case.name().into()], &s.result.report));
                            if l == last {
                                finest = Some(s.result.x);
                            }
                        }
                        Err(e) => {
                            out.failures.push(format!("{count} inclusions L{} {}: {e}", l + 1, kind.name()));
                            rows.push(sentinel_row(vec![count.to_string(), case.name().into()], l + 1, kind));
                        }
                    }
                }
            }
            if let Some(u) = finest {
                let field = analysis::von_mises(&h.levels[last], &mat, &u, cfg.solver.von_mises);
                stress_rows.push(vec![
                    count.to_string(),
                    case.name().to_string(),
                    fmt(field.mean(|s| s.subdomain == 0)),
                    fmt(field.mean(|s| s.subdomain != 0)),
                ]);
                if cfg.output.vtk {
                    let path = cfg.output.dir.join(format!("stress_{count}_{}.vtk", case.name()));
                    let f = std::io::BufWriter::new(fs::File::create(&path)?);
                    write_vtk(&h.levels[last], &u, &field, f)?;
                    out.files.push(path);
                }
            }
        }
    }
    write_csv(&cfg.output.dir.join("table2.csv"), &strings(&MULTI_HEADER), &rows, out)?;
    write_csv(
        &cfg.output.dir.join("stress_summary.csv"),
        &strings(&["inclusions", "case", "mean_von_mises_matrix", "mean_von_mises_inclusions"]),
        &stress_rows,
        out,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_toml() {
        for kind in [ExperimentKind::Convergence, ExperimentKind::Preconditioners, ExperimentKind::MultiInclusion] {
            for p in [Preset::Desk, Preset::Paper] {
                let cfg = ExperimentConfig::preset(kind, p);
                let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
                assert_eq!(cfg, back);
            }
        }
    }

    #[test]
    fn unknown_fields_are_reported_with_location() {
        let text = "experiment = \"convergence\"\n[mesh]\nn0 = 25\nlevels = 4\nbogus = 1\n";
        let err = ExperimentConfig::from_toml_str(text).unwrap_err().to_string();
        assert!(err.contains("bogus") && err.contains("line 5"), "{err}");
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut cfg = ExperimentConfig::preset(ExperimentKind::Convergence, Preset::Desk);
        cfg.solver.tol_dual = 0.0;
        assert!(cfg.validate().unwrap_err().to_string().contains("tol_dual"));
        let mut cfg = ExperimentConfig::preset(ExperimentKind::Convergence, Preset::Desk);
        cfg.mesh.levels = 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn condition_header_lists_every_case() {
        let h = condition_header();
        assert_eq!(h.len(), 16);
        assert_eq!(h[1], "s_soft");
        assert_eq!(h[15], "feti_equal");
    }
}
