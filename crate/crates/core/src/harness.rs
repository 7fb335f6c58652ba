//! Experiment configuration, tradeoff-curve search and CSV output.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::amp::{run_amp, run_sc_amp, AmpConfig};
use crate::codes::{code_by_id, LinearCode};
use crate::denoisers::{Denoiser, DenoiserKind, HardDecisionKind, POST_BP_ROUNDS};
use crate::design::{sample_design, simulate, BaseMatrix, DensityParams, DesignSpec, SystemParams};
use crate::state_evolution::{sc_se_run, se_run_iid, SeConfig, SeContext};
use crate::{par, Error, Result};

/// Writes `bytes` to a temporary file next to `path` and renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Single SE evaluations and the density search

/// Everything needed to run SE at a given `(Eb/N0, μ)`.
#[derive(Clone, Debug)]
pub struct SeProblem<'a> {
    pub code: &'a LinearCode,
    pub base: BaseMatrix,
    pub denoiser: DenoiserKind,
    pub hard: HardDecisionKind,
    pub post_bp_rounds: usize,
    pub sigma2: f64,
    pub se: SeConfig,
    pub seed: u64,
}

/// Converged SE outcome at one density.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SePoint {
    pub mu: f64,
    pub ber: f64,
    pub uer: f64,
    pub ber_se: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl<'a> SeProblem<'a> {
    pub fn new(code: &'a LinearCode, denoiser: DenoiserKind) -> Self {
        Self {
            code,
            base: BaseMatrix::iid(),
            denoiser,
            hard: HardDecisionKind::Sign,
            post_bp_rounds: POST_BP_ROUNDS,
            sigma2: 1.0,
            se: SeConfig::default(),
            seed: 0,
        }
    }

    pub fn build_denoiser(&self, ebn0_db: f64) -> Result<Denoiser> {
        let energy = crate::design::energy_from_ebn0(ebn0_db, self.code.k(), self.code.d(), self.sigma2)?;
        Ok(Denoiser::new(self.denoiser, self.hard, self.code, energy)?.with_post_bp_rounds(self.post_bp_rounds))
    }

    /// Runs SE to its fixed point and reports the predicted error rates.
    pub fn evaluate(&self, den: &Denoiser, ebn0_db: f64, mu: f64) -> Result<SePoint> {
        let params = DensityParams::from_ebn0(self.code, mu, ebn0_db, self.sigma2)?;
        let ctx = SeContext::new(self.code, den);
        let cfg = SeConfig { predict: true, ..self.se };
        let (pred, iterations, converged) = if self.base.is_iid() {
            let traj = se_run_iid(&params, &ctx, &cfg, self.seed)?;
            (traj.final_prediction(), traj.states.len(), traj.converged)
        } else {
            let traj = sc_se_run(&params, &self.base, &ctx, &cfg, self.seed)?;
            (traj.final_prediction(), traj.states.len(), traj.converged)
        };
        let pred = pred.ok_or_else(|| Error::InvalidParameter("state evolution ran zero iterations".into()))?;
        log::debug!("se ebn0={ebn0_db} mu={mu:.6e} ber={:.3e} iters={iterations}", pred.ber);
        Ok(SePoint { mu, ber: pred.ber, uer: pred.uer, ber_se: pred.ber_se, iterations, converged })
    }
}

/// Bounds and resolution of the density search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuSearch {
    pub lo: f64,
    pub hi: f64,
    /// Geometric bisection steps after the coarse pass.
    pub steps: usize,
    /// Points in the coarse monotonicity check.
    pub coarse: usize,
    /// Points in the fallback grid scan.
    pub grid: usize,
}

impl MuSearch {
    /// `[10⁻³, 10]·k/d`.
    pub fn for_code(code: &LinearCode) -> Self {
        Self::scaled(code, 1e-3, 10.0)
    }

    pub fn scaled(code: &LinearCode, lo: f64, hi: f64) -> Self {
        let r = code.rate();
        Self { lo: lo * r, hi: hi * r, steps: 30, coarse: 5, grid: 41 }
    }

    fn check(&self) -> Result<()> {
        if !(self.lo > 0.0 && self.lo < self.hi && self.hi.is_finite()) {
            return Err(Error::InvalidParameter(format!("need 0 < μ_lo < μ_hi, got [{}, {}]", self.lo, self.hi)));
        }
        if self.coarse < 2 || self.grid < 2 {
            return Err(Error::InvalidParameter("coarse and grid scans need at least 2 points".into()));
        }
        Ok(())
    }
}

/// Result of [`max_se_at_ebn0`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaxSe {
    /// `μ*`, or 0 when the target fails at the lower bound.
    pub mu: f64,
    /// `S* = μ*·k`.
    pub spectral_efficiency: f64,
    /// SE outcome at `μ*` (at `μ_lo` when unreachable).
    pub point: SePoint,
    pub unreachable: bool,
    /// The target holds at the upper bound.
    pub saturated: bool,
    /// False when the coarse check found a non-monotone BER and a grid
    /// scan was used instead of bisection.
    pub monotone: bool,
    pub evaluations: usize,
}

fn geomspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| match i {
            0 => lo,
            _ if i + 1 == n => hi,
            _ => (a + (b - a) * i as f64 / (n - 1) as f64).exp(),
        })
        .collect()
}

/// Largest density whose converged SE BER is at most `target_ber`.
pub fn max_se_at_ebn0(problem: &SeProblem<'_>, ebn0_db: f64, target_ber: f64, search: &MuSearch) -> Result<MaxSe> {
    search.check()?;
    if !(target_ber > 0.0 && target_ber < 0.5) {
        return Err(Error::InvalidParameter(format!("target BER must lie in (0, 1/2), got {target_ber}")));
    }
    let den = problem.build_denoiser(ebn0_db)?;
    let k = problem.code.k() as f64;
    let mut evaluations = 0;
    let mut eval = |mu: f64| -> Result<SePoint> {
        evaluations += 1;
        problem.evaluate(&den, ebn0_db, mu)
    };
    let ok = |p: &SePoint| p.ber <= target_ber;

    let coarse_mu = geomspace(search.lo, search.hi, search.coarse);
    let mut coarse = Vec::with_capacity(coarse_mu.len());
    for &mu in &coarse_mu {
        coarse.push(eval(mu)?);
    }
    let flags: Vec<bool> = coarse.iter().map(ok).collect();
    let first_fail = flags.iter().position(|f| !f).unwrap_or(flags.len());
    let monotone = flags[first_fail..].iter().all(|f| !f);

    let finish = |best: Option<SePoint>, low: SePoint, monotone: bool, saturated: bool, evaluations: usize| match best {
        Some(p) => MaxSe {
            mu: p.mu,
            spectral_efficiency: p.mu * k,
            point: p,
            unreachable: false,
            saturated,
            monotone,
            evaluations,
        },
        None => MaxSe {
            mu: 0.0,
            spectral_efficiency: 0.0,
            point: low,
            unreachable: true,
            saturated: false,
            monotone,
            evaluations,
        },
    };

    if !monotone {
        log::warn!("SE BER is not monotone in μ at {ebn0_db} dB; falling back to a grid scan");
        let mut best = None;
        let mut low = None;
        for mu in geomspace(search.lo, search.hi, search.grid) {
            let p = eval(mu)?;
            low.get_or_insert(p);
            if ok(&p) {
                best = Some(p);
            }
        }
        let saturated = best.is_some_and(|p| p.mu == search.hi);
        return Ok(finish(best, low.expect("grid is nonempty"), false, saturated, evaluations));
    }
    if first_fail == 0 {
        return Ok(finish(None, coarse[0], true, false, evaluations));
    }
    if first_fail == coarse.len() {
        return Ok(finish(coarse.last().copied(), coarse[0], true, true, evaluations));
    }
    let mut good = coarse[first_fail - 1];
    let mut bad = coarse_mu[first_fail];
    for _ in 0..search.steps {
        let mid = (good.mu * bad).sqrt();
        let p = eval(mid)?;
        if ok(&p) {
            good = p;
        } else {
            bad = mid;
        }
    }
    Ok(finish(Some(good), coarse[0], true, false, evaluations))
}

/// Smallest Eb/N0 (to within `tol_db`) at which the target BER is met at
/// density `mu`, searched in `[lo_db, hi_db]`. `None` if even `hi_db` fails.
pub fn min_ebn0_at_density(
    problem: &SeProblem<'_>,
    mu: f64,
    target_ber: f64,
    lo_db: f64,
    hi_db: f64,
    tol_db: f64,
) -> Result<Option<f64>> {
    if !(lo_db < hi_db) || !(tol_db > 0.0) {
        return Err(Error::InvalidParameter("need lo_db < hi_db and tol_db > 0".into()));
    }
    let ok = |db: f64| -> Result<bool> {
        let den = problem.build_denoiser(db)?;
        Ok(problem.evaluate(&den, db, mu)?.ber <= target_ber)
    };
    if !ok(hi_db)? {
        return Ok(None);
    }
    if ok(lo_db)? {
        return Ok(Some(lo_db));
    }
    let (mut lo, mut hi) = (lo_db, hi_db);
    while hi - lo > tol_db {
        let mid = 0.5 * (lo + hi);
        if ok(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

// ---------------------------------------------------------------------------
// Sweeps

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Se,
    Simulate,
    Both,
}

fn default_users() -> usize {
    20_000
}
fn default_seeds() -> Vec<u64> {
    vec![1]
}
fn default_denoiser() -> String {
    "bayes".into()
}
fn default_bp_rounds() -> usize {
    1
}
fn default_post_bp_rounds() -> usize {
    POST_BP_ROUNDS
}
fn default_hard() -> String {
    "sign".into()
}
fn default_target() -> f64 {
    1e-4
}
fn default_sigma2() -> f64 {
    1.0
}
fn default_tol() -> f64 {
    1e-6
}
fn default_steps() -> usize {
    30
}

/// A sweep as read from its JSON configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub code: String,
    #[serde(default)]
    pub design: DesignSpec,
    #[serde(rename = "L", default = "default_users")]
    pub users: usize,
    #[serde(rename = "EbN0_db", default)]
    pub ebn0_db: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_denoiser")]
    pub denoiser: String,
    /// Overrides the AMP and SE iteration caps.
    #[serde(default)]
    pub max_iter: Option<usize>,
    #[serde(default = "default_bp_rounds")]
    pub bp_rounds: usize,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_target")]
    pub target_ber: f64,
    /// Fixed density; when absent SE rows search for `μ*` and AMP rows
    /// run at the SE result.
    #[serde(default)]
    pub mu: Option<f64>,
    /// Search bounds on `μ`; defaults to `[10⁻³, 10]·k/d`.
    #[serde(default)]
    pub mu_bounds: Option<[f64; 2]>,
    #[serde(default = "default_steps")]
    pub bisection_steps: usize,
    #[serde(default = "default_post_bp_rounds")]
    pub post_bp_rounds: usize,
    #[serde(default = "default_hard")]
    pub hard_decision: String,
    #[serde(default)]
    pub mc: Option<usize>,
    #[serde(default = "default_sigma2")]
    pub sigma2: f64,
    #[serde(default = "default_tol")]
    pub se_tol: f64,
    #[serde(default = "default_tol")]
    pub amp_tol: f64,
    /// Fill the `wall_time` column.
    #[serde(default)]
    pub timing: bool,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl SweepSpec {
    pub fn new(code: impl Into<String>) -> Self {
        serde_json::from_value(serde_json::json!({ "code": code.into() })).expect("defaults deserialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.users == 0 {
            return bad("L must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if !(self.target_ber > 0.0 && self.target_ber < 0.5) {
            return bad(format!("target_ber must lie in (0, 1/2), got {}", self.target_ber));
        }
        if let Some([lo, hi]) = self.mu_bounds {
            if !(lo > 0.0 && lo < hi && hi.is_finite()) {
                return bad(format!("mu_bounds must satisfy 0 < lo < hi, got [{lo}, {hi}]"));
            }
        }
        if let Some(mu) = self.mu {
            if !(mu > 0.0 && mu.is_finite()) {
                return bad(format!("mu must be positive, got {mu}"));
            }
        }
        if self.ebn0_db.iter().any(|v| !v.is_finite()) {
            return bad("EbN0_db entries must be finite".into());
        }
        if !(self.sigma2 > 0.0) {
            return bad(format!("sigma2 must be positive, got {}", self.sigma2));
        }
        if self.mc == Some(0) {
            return bad("mc must be positive".into());
        }
        if self.mode == Mode::Simulate && self.mu.is_none() {
            return bad("simulate mode needs a fixed mu".into());
        }
        code_by_id(&self.code).map_err(|e| Error::Config(format!("code {:?}: {e}", self.code)))?;
        self.design.base_matrix()?;
        self.denoiser_kind()?;
        HardDecisionKind::parse(&self.hard_decision)?;
        Ok(())
    }

    pub fn denoiser_kind(&self) -> Result<DenoiserKind> {
        DenoiserKind::parse(&self.denoiser, self.bp_rounds)
    }

    pub fn se_config(&self) -> SeConfig {
        let base = SeConfig::default();
        SeConfig { mc: self.mc, max_iter: self.max_iter.unwrap_or(base.max_iter), tol: self.se_tol, ..base }
    }

    pub fn amp_config(&self) -> Result<AmpConfig> {
        let base = if self.design.base_matrix()?.is_iid() { AmpConfig::default() } else { AmpConfig::coupled() };
        Ok(AmpConfig { max_iter: self.max_iter.unwrap_or(base.max_iter), tol: self.amp_tol, ..base })
    }

    pub fn search(&self, code: &LinearCode) -> MuSearch {
        let mut s = MuSearch::for_code(code);
        if let Some([lo, hi]) = self.mu_bounds {
            s.lo = lo;
            s.hi = hi;
        }
        s.steps = self.bisection_steps;
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "SE")]
    Se,
    #[serde(rename = "AMP")]
    Amp,
}

/// One CSV row: the echoed spec followed by the outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub code: String,
    pub d: usize,
    pub k: usize,
    pub design: String,
    pub omega: Option<usize>,
    pub lambda: Option<usize>,
    #[serde(rename = "L")]
    pub users: usize,
    pub denoiser: String,
    pub bp_rounds: usize,
    pub post_bp_rounds: usize,
    pub hard_decision: String,
    pub max_iter: usize,
    pub tol: f64,
    pub target_ber: f64,
    pub mu_lo: Option<f64>,
    pub mu_hi: Option<f64>,
    pub bisection_steps: Option<usize>,
    pub mc: Option<usize>,
    pub sigma2: f64,
    pub method: Method,
    pub seed: u64,
    pub ebn0_db: f64,
    pub energy: f64,
    pub mu: Option<f64>,
    pub spectral_efficiency: Option<f64>,
    #[serde(rename = "L_actual")]
    pub users_actual: Option<usize>,
    pub n_tilde: Option<usize>,
    pub ber: Option<f64>,
    pub uer: Option<f64>,
    pub ber_se: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub unreachable: Option<bool>,
    pub monotone: Option<bool>,
    pub wall_time: Option<f64>,
    pub error: Option<String>,
}

/// CSV header, also written for an empty sweep.
pub const RESULT_COLUMNS: &[&str] = &[
    "code",
    "d",
    "k",
    "design",
    "omega",
    "lambda",
    "L",
    "denoiser",
    "bp_rounds",
    "post_bp_rounds",
    "hard_decision",
    "max_iter",
    "tol",
    "target_ber",
    "mu_lo",
    "mu_hi",
    "bisection_steps",
    "mc",
    "sigma2",
    "method",
    "seed",
    "ebn0_db",
    "energy",
    "mu",
    "spectral_efficiency",
    "L_actual",
    "n_tilde",
    "ber",
    "uer",
    "ber_se",
    "iterations",
    "converged",
    "unreachable",
    "monotone",
    "wall_time",
    "error",
];

pub fn write_rows<W: Write>(out: W, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(RESULT_COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Rounds `L` down to a multiple of the `C` column blocks and picks `ñ`,
/// a positive multiple of the `R` row blocks, closest to `L/(μd)`.
pub fn realize_dimensions(users: usize, mu: f64, d: usize, base: &BaseMatrix) -> Result<(usize, usize)> {
    let (r, c) = (base.rows(), base.cols());
    let users = users / c * c;
    if users == 0 {
        return Err(Error::InvalidParameter(format!("L must be at least the {c} column blocks")));
    }
    if !(mu > 0.0) {
        return Err(Error::InvalidParameter(format!("μ must be positive, got {mu}")));
    }
    let blocks = (users as f64 / (mu * d as f64) / r as f64).round().max(1.0) as usize;
    Ok((users, blocks * r))
}

struct Job {
    ebn0_db: f64,
    seed: u64,
}

struct Setup {
    code: LinearCode,
    base: BaseMatrix,
    kind: DenoiserKind,
    hard: HardDecisionKind,
    search: MuSearch,
    se: SeConfig,
    amp: AmpConfig,
}

impl ResultRow {
    fn echo(spec: &SweepSpec, setup: &Setup, method: Method, job: &Job) -> Self {
        let (design, omega, lambda) = match spec.design {
            DesignSpec::Iid => ("iid", None, None),
            DesignSpec::Coupled { omega, lambda } => ("coupled", Some(omega), Some(lambda)),
        };
        let searched = spec.mu.is_none() && method == Method::Se;
        let (max_iter, tol) = match method {
            Method::Se => (setup.se.max_iter, setup.se.tol),
            Method::Amp => (setup.amp.max_iter, setup.amp.tol),
        };
        Self {
            code: spec.code.clone(),
            d: setup.code.d(),
            k: setup.code.k(),
            design: design.into(),
            omega,
            lambda,
            users: spec.users,
            denoiser: setup.kind.name().into(),
            bp_rounds: spec.bp_rounds,
            post_bp_rounds: spec.post_bp_rounds,
            hard_decision: setup.hard.name().into(),
            max_iter,
            tol,
            target_ber: spec.target_ber,
            mu_lo: searched.then_some(setup.search.lo),
            mu_hi: searched.then_some(setup.search.hi),
            bisection_steps: searched.then_some(setup.search.steps),
            mc: (method == Method::Se).then_some(spec.mc).flatten(),
            sigma2: spec.sigma2,
            method,
            seed: job.seed,
            ebn0_db: job.ebn0_db,
            energy: crate::design::energy_from_ebn0(job.ebn0_db, setup.code.k(), setup.code.d(), spec.sigma2)
                .unwrap_or(f64::NAN),
            mu: None,
            spectral_efficiency: None,
            users_actual: None,
            n_tilde: None,
            ber: None,
            uer: None,
            ber_se: None,
            iterations: None,
            converged: None,
            unreachable: None,
            monotone: None,
            wall_time: None,
            error: None,
        }
    }

    fn set_mu(&mut self, mu: f64) {
        self.mu = Some(mu);
        self.spectral_efficiency = Some(mu * self.k as f64);
    }
}

fn se_row(spec: &SweepSpec, setup: &Setup, job: &Job) -> (ResultRow, Option<f64>) {
    let start = Instant::now();
    let mut row = ResultRow::echo(spec, setup, Method::Se, job);
    let problem = SeProblem {
        code: &setup.code,
        base: setup.base.clone(),
        denoiser: setup.kind,
        hard: setup.hard,
        post_bp_rounds: spec.post_bp_rounds,
        sigma2: spec.sigma2,
        se: setup.se,
        seed: job.seed,
    };
    let outcome = match spec.mu {
        Some(mu) => {
            problem.build_denoiser(job.ebn0_db).and_then(|den| problem.evaluate(&den, job.ebn0_db, mu)).inspect(|_| {
                row.set_mu(mu);
            })
        }
        None => max_se_at_ebn0(&problem, job.ebn0_db, spec.target_ber, &setup.search).map(|m| {
            row.set_mu(m.mu);
            row.unreachable = Some(m.unreachable);
            row.monotone = Some(m.monotone);
            m.point
        }),
    };
    let mu_out = match outcome {
        Ok(p) => {
            row.ber = Some(p.ber);
            row.uer = Some(p.uer);
            row.ber_se = Some(p.ber_se);
            row.iterations = Some(p.iterations);
            row.converged = Some(p.converged);
            row.mu.filter(|&m| m > 0.0)
        }
        Err(e) => {
            row.error = Some(e.to_string());
            None
        }
    };
    if spec.timing {
        row.wall_time = Some(start.elapsed().as_secs_f64());
    }
    (row, mu_out)
}

/// One finite-size decode; the returned row carries empirical error rates.
fn amp_row(spec: &SweepSpec, setup: &Setup, job: &Job, mu: Option<f64>) -> ResultRow {
    let start = Instant::now();
    let mut row = ResultRow::echo(spec, setup, Method::Amp, job);
    let result = (|| -> Result<()> {
        let mu = mu.ok_or_else(|| Error::InvalidParameter("no positive density to simulate at".into()))?;
        let (users, n_tilde) = realize_dimensions(spec.users, mu, setup.code.d(), &setup.base)?;
        let energy = crate::design::energy_from_ebn0(job.ebn0_db, setup.code.k(), setup.code.d(), spec.sigma2)?;
        let params = SystemParams::new(users, n_tilde, &setup.code, spec.sigma2, energy)?;
        row.users_actual = Some(users);
        row.n_tilde = Some(n_tilde);
        row.set_mu(params.mu());
        let design = sample_design(&setup.base, n_tilde, users, job.seed)?;
        let inst = simulate(&params, &setup.code, &design, job.seed)?;
        let den = Denoiser::new(setup.kind, setup.hard, &setup.code, energy)?.with_post_bp_rounds(spec.post_bp_rounds);
        let (history, converged) = if setup.base.is_iid() {
            let run = run_amp(inst.y.view(), design.a.view(), &den, &setup.amp, Some(inst.x.view()))?;
            (run.history, run.converged)
        } else {
            let run = run_sc_amp(inst.y.view(), &design, &den, &setup.amp, Some(inst.x.view()))?;
            (run.history, run.converged)
        };
        let last = history.last().ok_or_else(|| Error::InvalidParameter("AMP ran zero iterations".into()))?;
        let ber = last.ber.unwrap_or(f64::NAN);
        let bits = (users * setup.code.d()) as f64;
        row.ber = Some(ber);
        row.uer = last.uer;
        row.ber_se = Some((ber * (1.0 - ber) / bits).sqrt());
        row.iterations = Some(history.len());
        row.converged = Some(converged);
        Ok(())
    })();
    if let Err(e) = result {
        row.error = Some(e.to_string());
    }
    if spec.timing {
        row.wall_time = Some(start.elapsed().as_secs_f64());
    }
    row
}

/// Runs every `(Eb/N0, seed)` pair. Per-point failures become rows with
/// the `error` column set.
pub fn sweep_rows(spec: &SweepSpec) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let code = code_by_id(&spec.code)?;
    let setup = Setup {
        base: spec.design.base_matrix()?,
        kind: spec.denoiser_kind()?,
        hard: HardDecisionKind::parse(&spec.hard_decision)?,
        search: spec.search(&code),
        se: spec.se_config(),
        amp: spec.amp_config()?,
        code,
    };
    let jobs: Vec<Job> =
        spec.ebn0_db.iter().flat_map(|&ebn0_db| spec.seeds.iter().map(move |&seed| Job { ebn0_db, seed })).collect();
    let per_job = par::map_indexed(jobs.len(), |i| {
        let job = &jobs[i];
        let mut rows = Vec::with_capacity(2);
        let mut mu = spec.mu;
        if spec.mode != Mode::Simulate {
            let (row, found) = se_row(spec, &setup, job);
            rows.push(row);
            mu = spec.mu.or(found);
        }
        if spec.mode != Mode::Se {
            rows.push(amp_row(spec, &setup, job, mu));
        }
        rows
    });
    Ok(per_job.into_iter().flatten().collect())
}

/// Runs the sweep and, if `spec.output` is set, writes the CSV atomically.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<ResultRow>> {
    let rows = sweep_rows(spec)?;
    if let Some(path) = &spec.output {
        let mut buf = Vec::new();
        write_rows(&mut buf, &rows)?;
        write_atomic(path, &buf)?;
    }
    Ok(rows)
}
