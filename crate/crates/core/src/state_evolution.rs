//! State evolution: the deterministic covariance recursions that track AMP
//! in the large-system limit, and the error rates they predict.
//!
//! iid design:
//!
//! ```text
//! Σᵗ⁺¹ = σ²I + dμ·E[(η_t(x̄+g) − x̄)(η_t(x̄+g) − x̄)ᵀ],   g ~ N(0, Σᵗ)
//! ```
//!
//! Coupled design, for row blocks `r` and column blocks `c`:
//!
//! ```text
//! Φ_rᵗ   = σ²I + dμ_in·Σ_c W_rc Ψ_cᵗ
//! T_cᵗ   = [Σ_r W_rc (Φ_rᵗ)⁻¹]⁻¹
//! Ψ_cᵗ⁺¹ = E[(η_{t,c}(x̄+g_c) − x̄)(·)ᵀ],   g_c ~ N(0, T_cᵗ)
//! ```
//!
//! Expectations are Monte Carlo averages with `x̄` the codeword of the
//! all-zero message. Because the code is linear and the denoisers commute
//! with codeword sign flips, averaging over a uniformly random codeword
//! multiplies the all-zero error covariance entry-wise by
//! `K_jk = 1{coordinates j and k always carry the same bit}`. That
//! projection is applied by default, which keeps `Σ` diagonal for every code
//! without repeated coordinates.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::amp::{coupling_matrices, CovEstimate};
use crate::codes::LinearCode;
use crate::cov::Cov;
use crate::denoisers::{Denoiser, DenoiserKind};
use crate::design::{BaseMatrix, DensityParams};
use crate::rng::{self, domain};
use crate::{par, Error, Result};

/// Monte Carlo samples per work item.
pub const MC_CHUNK: usize = 256;

/// `max(10⁴, 50·d)`, or 2000 for BP on long codes.
pub fn default_mc(den: &Denoiser) -> usize {
    match den.kind() {
        DenoiserKind::Bp { .. } if den.d() >= 256 => 2000,
        _ => (50 * den.d()).max(10_000),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeConfig {
    /// Samples per expectation; `None` picks [`default_mc`].
    pub mc: Option<usize>,
    pub max_iter: usize,
    /// Stop when no diagonal entry moves by more than `tol·σ²`.
    pub tol: f64,
    /// Reuse the same Gaussian draws in every iteration, which makes the
    /// recursion a deterministic map with a proper fixed point. Otherwise
    /// draws are fresh per iteration.
    pub common_random_numbers: bool,
    pub covariance: CovEstimate,
    /// Average over codewords through the coordinate-class mask.
    pub codeword_average: bool,
    /// Estimate error rates alongside each step.
    pub predict: bool,
}

impl Default for SeConfig {
    fn default() -> Self {
        Self {
            mc: None,
            max_iter: 200,
            tol: 1e-6,
            common_random_numbers: true,
            covariance: CovEstimate::Auto,
            codeword_average: true,
            predict: true,
        }
    }
}

/// Monte Carlo error rates with standard errors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorPrediction {
    pub uer: f64,
    pub ber: f64,
    pub uer_se: f64,
    pub ber_se: f64,
}

impl ErrorPrediction {
    fn average(parts: &[ErrorPrediction]) -> Self {
        let n = parts.len().max(1) as f64;
        let mean = |f: fn(&ErrorPrediction) -> f64| parts.iter().map(f).sum::<f64>() / n;
        let pooled = |f: fn(&ErrorPrediction) -> f64| parts.iter().map(|p| f(p).powi(2)).sum::<f64>().sqrt() / n;
        Self { uer: mean(|p| p.uer), ber: mean(|p| p.ber), uer_se: pooled(|p| p.uer_se), ber_se: pooled(|p| p.ber_se) }
    }
}

/// Codeword of the all-zero message.
pub fn reference_codeword(d: usize, energy: f64) -> Vec<f64> {
    vec![energy.sqrt(); d]
}

/// `K` for a code: ones where two coordinates share a generator row.
pub fn codeword_mask(code: &LinearCode) -> Vec<usize> {
    code.coordinate_classes()
}

fn mask_cov(m: Cov, classes: &[usize]) -> Cov {
    match m {
        Cov::Diagonal(v) => Cov::Diagonal(v),
        Cov::Full(mut f) => {
            let d = f.nrows();
            for i in 0..d {
                for j in 0..d {
                    if classes[i] != classes[j] {
                        f[(i, j)] = 0.0;
                    }
                }
            }
            Cov::Full(f)
        }
    }
}

/// `E·K`, or `E·I` without codeword averaging.
fn signal_cov(d: usize, energy: f64, classes: Option<&[usize]>, full: bool) -> Cov {
    match classes {
        Some(cl) if full => Cov::Full(DMatrix::from_fn(d, d, |i, j| if cl[i] == cl[j] { energy } else { 0.0 })),
        _ => Cov::zeros(d, full).add_identity(energy),
    }
}

struct McOutcome {
    mse: Cov,
    pred: ErrorPrediction,
}

struct Chunk {
    diag: Vec<f64>,
    full: Option<DMatrix<f64>>,
    user_errors: usize,
    bit_frac: f64,
    bit_frac_sq: f64,
}

/// One Monte Carlo pass: samples `g ~ N(0, sigma)`, denoises `x̄ + g` and
/// accumulates the error covariance and hard-decision errors.
#[allow(clippy::too_many_arguments)]
fn mc_pass(
    den: &Denoiser,
    sigma: &Cov,
    reference: &[f64],
    mc: usize,
    seed: u64,
    tags: [u64; 3],
    full: bool,
    predict: bool,
) -> Result<McOutcome> {
    let d = den.d();
    let (sigma_psd, floored) = sigma.floor_psd();
    if floored {
        log::warn!("state evolution covariance had negative eigenvalues; floored at 0");
    }
    let factor = sigma_psd.sampler();
    let prep = den.prepare(&sigma_psd)?;
    let parts = par::map_chunks(mc, MC_CHUNK, |c, range| {
        let mut rng = rng::stream(seed, &[tags[0], tags[1], tags[2], c as u64]);
        let mut ws = prep.workspace();
        let mut w = vec![0.0; d];
        let mut g = vec![0.0; d];
        let mut s = vec![0.0; d];
        let mut eta = vec![0.0; d];
        let mut hard = vec![0.0; d];
        let mut err = vec![0.0; d];
        let mut out = Chunk {
            diag: vec![0.0; d],
            full: full.then(|| DMatrix::zeros(d, d)),
            user_errors: 0,
            bit_frac: 0.0,
            bit_frac_sq: 0.0,
        };
        for _ in range {
            for v in w.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            factor.apply(&w, &mut g);
            for ((sj, &xj), &gj) in s.iter_mut().zip(reference).zip(&g) {
                *sj = xj + gj;
            }
            prep.denoise(&s, &mut eta, &mut ws, None);
            for ((e, &h), &xj) in err.iter_mut().zip(&eta).zip(reference) {
                *e = h - xj;
            }
            for (a, e) in out.diag.iter_mut().zip(&err) {
                *a += e * e;
            }
            if let Some(f) = out.full.as_mut() {
                for i in 0..d {
                    for j in 0..d {
                        f[(i, j)] += err[i] * err[j];
                    }
                }
            }
            if predict {
                prep.hard_decision(&s, &eta, &mut hard, &mut ws);
                let wrong = hard.iter().zip(reference).filter(|(a, b)| a != b).count();
                out.user_errors += usize::from(wrong > 0);
                let f = wrong as f64 / d as f64;
                out.bit_frac += f;
                out.bit_frac_sq += f * f;
            }
        }
        out
    });
    let mut diag = vec![0.0; d];
    let mut fullm = full.then(|| DMatrix::zeros(d, d));
    let (mut users, mut bf, mut bf2) = (0usize, 0.0, 0.0);
    for p in parts {
        for (a, b) in diag.iter_mut().zip(&p.diag) {
            *a += b;
        }
        if let (Some(a), Some(b)) = (fullm.as_mut(), p.full.as_ref()) {
            *a += b;
        }
        users += p.user_errors;
        bf += p.bit_frac;
        bf2 += p.bit_frac_sq;
    }
    let n = mc as f64;
    let mse = match fullm {
        Some(f) => Cov::Full(f / n).symmetrized(),
        None => Cov::Diagonal(diag.into_iter().map(|v| v / n).collect()),
    };
    let uer = users as f64 / n;
    let ber = bf / n;
    let pred = ErrorPrediction {
        uer,
        ber,
        uer_se: (uer * (1.0 - uer) / n).sqrt(),
        ber_se: ((bf2 / n - ber * ber).max(0.0) / n).sqrt(),
    };
    Ok(McOutcome { mse, pred })
}

fn stream_tags(cfg: &SeConfig, block: usize, t: usize) -> [u64; 3] {
    let round = if cfg.common_random_numbers { 0 } else { t as u64 + 1 };
    [domain::STATE_EVOLUTION, block as u64, round]
}

fn resolve_mc(cfg: &SeConfig, den: &Denoiser) -> Result<usize> {
    let mc = cfg.mc.unwrap_or_else(|| default_mc(den));
    if mc == 0 {
        return Err(Error::InvalidParameter("Monte Carlo sample count must be positive".into()));
    }
    Ok(mc)
}

/// Everything an SE run needs besides the parameters.
#[derive(Clone, Debug)]
pub struct SeContext<'a> {
    pub denoiser: &'a Denoiser,
    /// Coordinate classes for codeword averaging.
    pub classes: Vec<usize>,
    pub reference: Vec<f64>,
}

impl<'a> SeContext<'a> {
    pub fn new(code: &LinearCode, denoiser: &'a Denoiser) -> Self {
        Self { denoiser, classes: codeword_mask(code), reference: reference_codeword(code.d(), denoiser.energy()) }
    }

    /// Uses a different reference codeword (given as BPSK symbols).
    pub fn with_reference(mut self, reference: Vec<f64>) -> Self {
        self.reference = reference;
        self
    }

    fn full(&self, cfg: &SeConfig) -> bool {
        cfg.covariance.full_for(self.denoiser)
    }

    fn project(&self, m: Cov, cfg: &SeConfig) -> Cov {
        if cfg.codeword_average {
            mask_cov(m, &self.classes)
        } else {
            m
        }
    }

    fn check(&self, params: &DensityParams) -> Result<()> {
        if params.d != self.denoiser.d() || self.reference.len() != params.d {
            return Err(Error::Dimension("denoiser, reference codeword and parameters disagree on d".into()));
        }
        if (params.energy - self.denoiser.energy()).abs() > 1e-12 * params.energy {
            return Err(Error::InvalidParameter("denoiser energy differs from the system energy".into()));
        }
        if !(params.mu >= 0.0) || !(params.sigma2 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need μ ≥ 0 and σ² > 0 (μ={}, σ²={})",
                params.mu, params.sigma2
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// iid

#[derive(Clone, Debug, PartialEq)]
pub struct SeStateIid {
    pub t: usize,
    pub sigma: Cov,
    pub mc: usize,
    /// Error rates of `h_t(x̄ + g)`, `g ~ N(0, Σᵗ)`.
    pub prediction: Option<ErrorPrediction>,
}

/// `Σ⁰ = σ²I + dμE·K` (equal to `(σ² + dμE)·I` for codes without repeated
/// coordinates).
pub fn se_init_iid(params: &DensityParams, ctx: &SeContext<'_>, cfg: &SeConfig) -> Result<SeStateIid> {
    ctx.check(params)?;
    let full = ctx.full(cfg);
    let classes = cfg.codeword_average.then_some(ctx.classes.as_slice());
    let psi = signal_cov(params.d, params.energy, classes, full);
    let sigma = psi.scale(params.d as f64 * params.mu).add_identity(params.sigma2);
    Ok(SeStateIid { t: 0, sigma, mc: resolve_mc(cfg, ctx.denoiser)?, prediction: None })
}

/// One step `Σᵗ → Σᵗ⁺¹`. The returned pair is the input state with its
/// prediction filled in and the next state.
pub fn se_step_iid(
    state: &SeStateIid,
    params: &DensityParams,
    ctx: &SeContext<'_>,
    cfg: &SeConfig,
    seed: u64,
) -> Result<(SeStateIid, SeStateIid)> {
    let full = ctx.full(cfg);
    let sigma = if full { state.sigma.clone() } else { state.sigma.diagonal_part() };
    let out =
        mc_pass(ctx.denoiser, &sigma, &ctx.reference, state.mc, seed, stream_tags(cfg, 0, state.t), full, cfg.predict)?;
    let mse = ctx.project(out.mse, cfg);
    let next = mse.scale(params.d as f64 * params.mu).add_identity(params.sigma2);
    let (next, _) = next.floor_psd();
    let mut done = state.clone();
    done.prediction = cfg.predict.then_some(out.pred);
    Ok((done, SeStateIid { t: state.t + 1, sigma: next, mc: state.mc, prediction: None }))
}

#[derive(Clone, Debug)]
pub struct SeTrajectory<S> {
    /// States `0..T`, each with the prediction made from it.
    pub states: Vec<S>,
    /// The state after the last step (no prediction).
    pub last: S,
    pub converged: bool,
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn se_run_iid(
    params: &DensityParams,
    ctx: &SeContext<'_>,
    cfg: &SeConfig,
    seed: u64,
) -> Result<SeTrajectory<SeStateIid>> {
    let mut state = se_init_iid(params, ctx, cfg)?;
    let mut states = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        let (done, next) = se_step_iid(&state, params, ctx, cfg, seed)?;
        let change = max_abs_diff(&next.sigma.diag(), &done.sigma.diag());
        states.push(done);
        state = next;
        if change < cfg.tol * params.sigma2 {
            converged = true;
            break;
        }
    }
    Ok(SeTrajectory { states, last: state, converged })
}

impl SeTrajectory<SeStateIid> {
    /// Prediction from the last state that has one.
    pub fn final_prediction(&self) -> Option<ErrorPrediction> {
        self.states.last().and_then(|s| s.prediction)
    }
}

/// Asymptotic error rates `P(h(x̄+g) ≠ x̄)` and per-bit average for
/// `g ~ N(0, Σ)`, from an independent stream.
pub fn predict_error_iid(sigma: &Cov, ctx: &SeContext<'_>, mc: usize, seed: u64) -> Result<ErrorPrediction> {
    if mc == 0 {
        return Err(Error::InvalidParameter("Monte Carlo sample count must be positive".into()));
    }
    let out = mc_pass(ctx.denoiser, sigma, &ctx.reference, mc, seed, [domain::PREDICTION, 0, 0], false, true)?;
    Ok(out.pred)
}

// ---------------------------------------------------------------------------
// Spatially coupled

#[derive(Clone, Debug, PartialEq)]
pub struct SeStateSc {
    pub t: usize,
    pub phi: Vec<Cov>,
    pub psi: Vec<Cov>,
    pub tmat: Vec<Cov>,
    pub mc: usize,
    /// Per column block, from `T_cᵗ`.
    pub block_predictions: Option<Vec<ErrorPrediction>>,
}

impl SeStateSc {
    /// Block-averaged prediction.
    pub fn prediction(&self) -> Option<ErrorPrediction> {
        self.block_predictions.as_ref().map(|b| ErrorPrediction::average(b))
    }
}

/// `μ_in = (R/C)·μ`.
pub fn mu_in(params: &DensityParams, base: &BaseMatrix) -> f64 {
    params.mu * base.rows() as f64 / base.cols() as f64
}

fn phi_from_psi(psi: &[Cov], base: &BaseMatrix, params: &DensityParams, full: bool) -> Vec<Cov> {
    let w = base.w();
    let scale = params.d as f64 * mu_in(params, base);
    (0..base.rows())
        .map(|r| {
            let mut acc = Cov::zeros(params.d, full);
            for (c, p) in psi.iter().enumerate() {
                if w[[r, c]] != 0.0 {
                    acc = acc.add(&p.scale(w[[r, c]]));
                }
            }
            acc.scale(scale).add_identity(params.sigma2)
        })
        .collect()
}

/// `Ψ_c⁰ = E·K` in every block, with `Φ⁰` and `T⁰` derived from it.
pub fn sc_se_init(params: &DensityParams, base: &BaseMatrix, ctx: &SeContext<'_>, cfg: &SeConfig) -> Result<SeStateSc> {
    ctx.check(params)?;
    let full = ctx.full(cfg);
    let classes = cfg.codeword_average.then_some(ctx.classes.as_slice());
    let psi = vec![signal_cov(params.d, params.energy, classes, full); base.cols()];
    let phi = phi_from_psi(&psi, base, params, full);
    let (tmat, _) = coupling_matrices(&phi, base.w())?;
    Ok(SeStateSc { t: 0, phi, psi, tmat, mc: resolve_mc(cfg, ctx.denoiser)?, block_predictions: None })
}

pub fn sc_se_step(
    state: &SeStateSc,
    params: &DensityParams,
    base: &BaseMatrix,
    ctx: &SeContext<'_>,
    cfg: &SeConfig,
    seed: u64,
) -> Result<(SeStateSc, SeStateSc)> {
    let full = ctx.full(cfg);
    let mut psi = Vec::with_capacity(base.cols());
    let mut preds = Vec::with_capacity(base.cols());
    for (c, tc) in state.tmat.iter().enumerate() {
        let tc = if full { tc.clone() } else { tc.diagonal_part() };
        let out = mc_pass(
            ctx.denoiser,
            &tc,
            &ctx.reference,
            state.mc,
            seed,
            stream_tags(cfg, c, state.t),
            full,
            cfg.predict,
        )?;
        psi.push(ctx.project(out.mse, cfg));
        preds.push(out.pred);
    }
    let phi = phi_from_psi(&psi, base, params, full);
    let (tmat, _) = coupling_matrices(&phi, base.w())?;
    let mut done = state.clone();
    done.block_predictions = cfg.predict.then_some(preds);
    Ok((done, SeStateSc { t: state.t + 1, phi, psi, tmat, mc: state.mc, block_predictions: None }))
}

pub fn sc_se_run(
    params: &DensityParams,
    base: &BaseMatrix,
    ctx: &SeContext<'_>,
    cfg: &SeConfig,
    seed: u64,
) -> Result<SeTrajectory<SeStateSc>> {
    let mut state = sc_se_init(params, base, ctx, cfg)?;
    let mut states = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        let (done, next) = sc_se_step(&state, params, base, ctx, cfg, seed)?;
        let a: Vec<f64> = done.tmat.iter().flat_map(Cov::diag).collect();
        let b: Vec<f64> = next.tmat.iter().flat_map(Cov::diag).collect();
        let change = max_abs_diff(&a, &b);
        states.push(done);
        state = next;
        if change < cfg.tol * params.sigma2 {
            converged = true;
            break;
        }
    }
    Ok(SeTrajectory { states, last: state, converged })
}

impl SeTrajectory<SeStateSc> {
    pub fn final_prediction(&self) -> Option<ErrorPrediction> {
        self.states.last().and_then(SeStateSc::prediction)
    }
}

/// Block-averaged error rates for the covariances `T_c`.
pub fn predict_error_sc(tmat: &[Cov], ctx: &SeContext<'_>, mc: usize, seed: u64) -> Result<ErrorPrediction> {
    let parts = tmat
        .iter()
        .enumerate()
        .map(|(c, t)| {
            let out =
                mc_pass(ctx.denoiser, t, &ctx.reference, mc, seed, [domain::PREDICTION, c as u64, 0], false, true)?;
            Ok(out.pred)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorPrediction::average(&parts))
}

// ---------------------------------------------------------------------------
// Trajectory CSV

/// Largest `d` for which every diagonal entry gets its own column.
pub const CSV_DIAG_COLUMNS: usize = 16;

/// One trajectory row per (iteration, block).
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub t: usize,
    /// `None` for iid runs.
    pub block: Option<usize>,
    pub diag: Vec<f64>,
    pub prediction: Option<ErrorPrediction>,
}

pub fn iid_rows(traj: &SeTrajectory<SeStateIid>) -> Vec<TrajectoryRow> {
    traj.states
        .iter()
        .map(|s| TrajectoryRow { t: s.t, block: None, diag: s.sigma.diag(), prediction: s.prediction })
        .collect()
}

pub fn sc_rows(traj: &SeTrajectory<SeStateSc>) -> Vec<TrajectoryRow> {
    let mut rows = Vec::new();
    for s in &traj.states {
        for (c, t) in s.tmat.iter().enumerate() {
            rows.push(TrajectoryRow {
                t: s.t,
                block: Some(c),
                diag: t.diag(),
                prediction: s.block_predictions.as_ref().map(|p| p[c]),
            });
        }
    }
    rows
}

/// Writes `t, block, diag_mean, diag_min, diag_max, [diag_0..], ber, uer,
/// ber_se, uer_se, mc, seed`.
pub fn write_trajectory_csv<W: Write>(out: W, rows: &[TrajectoryRow], mc: usize, seed: u64) -> Result<()> {
    let d = rows.first().map_or(0, |r| r.diag.len());
    let per_entry = d <= CSV_DIAG_COLUMNS;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string(), "block".into(), "diag_mean".into(), "diag_min".into(), "diag_max".into()];
    if per_entry {
        header.extend((0..d).map(|j| format!("diag_{j}")));
    }
    header.extend(["ber", "uer", "ber_se", "uer_se", "mc", "seed"].map(String::from));
    w.write_record(&header)?;
    for r in rows {
        let mean = r.diag.iter().sum::<f64>() / r.diag.len().max(1) as f64;
        let min = r.diag.iter().copied().fold(f64::INFINITY, f64::min);
        let max = r.diag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut rec = vec![
            r.t.to_string(),
            r.block.map_or_else(|| "iid".to_string(), |b| b.to_string()),
            mean.to_string(),
            min.to_string(),
            max.to_string(),
        ];
        if per_entry {
            rec.extend(r.diag.iter().map(f64::to_string));
        }
        let p = r.prediction;
        let opt = |f: fn(&ErrorPrediction) -> f64| p.as_ref().map_or(String::new(), |p| f(p).to_string());
        rec.push(opt(|p| p.ber));
        rec.push(opt(|p| p.uer));
        rec.push(opt(|p| p.ber_se));
        rec.push(opt(|p| p.uer_se));
        rec.push(mc.to_string());
        rec.push(seed.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trajectory_csv(path: impl AsRef<Path>, rows: &[TrajectoryRow], mc: usize, seed: u64) -> Result<()> {
    let mut buf = Vec::new();
    write_trajectory_csv(&mut buf, rows, mc, seed)?;
    crate::harness::write_atomic(path.as_ref(), &buf)
}
