//! Matrix AMP decoders for iid and spatially coupled designs.
//!
//! iid design, starting from `X⁰ = 0`:
//!
//! ```text
//! Zᵗ   = Y − A·Xᵗ + (1/ñ)·Zᵗ⁻¹·[Σ_ℓ η'_{t−1}(s_ℓᵗ⁻¹)]ᵀ
//! Sᵗ   = Xᵗ + Aᵀ·Zᵗ
//! Xᵗ⁺¹ = η_t(Sᵗ)            row by row, with Σ̂ᵗ = ZᵗᵀZᵗ/ñ
//! ```
//!
//! The coupled decoder replaces the memory term and `AᵀZ` by block-weighted
//! versions built from `Q_rc = Φ̂_r⁻¹·T̂_c`, where `Φ̂_r` is the empirical
//! covariance of the residual rows in row block `r` and
//! `T̂_c = [Σ_r W_rc Φ̂_r⁻¹]⁻¹`.

use nalgebra::DMatrix;
use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::cov::Cov;
use crate::denoisers::{Denoiser, JacobianMode, Prepared};
use crate::design::DesignMatrix;
use crate::{par, Error, Result};

/// Which entries of the effective covariance are estimated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovEstimate {
    /// Full for denoisers that read the whole matrix (Bayes, MAP), diagonal
    /// otherwise.
    #[default]
    Auto,
    Diagonal,
    Full,
}

impl CovEstimate {
    pub fn full_for(self, den: &Denoiser) -> bool {
        match self {
            CovEstimate::Auto => den.uses_full_covariance(),
            CovEstimate::Diagonal => false,
            CovEstimate::Full => true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmpConfig {
    pub max_iter: usize,
    /// Stop when `‖Δ diag Σ̂‖/‖diag Σ̂‖` falls below this.
    pub tol: f64,
    pub covariance: CovEstimate,
    pub jacobian: JacobianMode,
    /// `Xᵗ⁺¹ ← (1−δ)·η(Sᵗ) + δ·Xᵗ`; `0` disables damping.
    pub damping: f64,
}

impl Default for AmpConfig {
    fn default() -> Self {
        Self { max_iter: 300, tol: 1e-6, covariance: CovEstimate::Auto, jacobian: JacobianMode::Auto, damping: 0.0 }
    }
}

impl AmpConfig {
    /// Defaults for the coupled decoder, whose decoding wave needs more
    /// iterations.
    pub fn coupled() -> Self {
        Self { max_iter: 500, ..Self::default() }
    }
}

/// `(1/rows)·Σ_i z_i z_iᵀ`, or only its diagonal.
pub fn estimate_cov(z: ArrayView2<'_, f64>, full: bool) -> Cov {
    let (n, d) = z.dim();
    let scale = 1.0 / n.max(1) as f64;
    if full {
        let parts = par::map_chunks(n, par::ROW_CHUNK, |_, r| {
            let block = z.slice(s![r, ..]);
            block.t().dot(&block)
        });
        let mut acc = Array2::<f64>::zeros((d, d));
        for p in parts {
            acc += &p;
        }
        let m = DMatrix::from_fn(d, d, |i, j| 0.5 * (acc[[i, j]] + acc[[j, i]]) * scale);
        Cov::Full(m)
    } else {
        let parts = par::map_chunks(n, par::ROW_CHUNK, |_, r| {
            let mut v = vec![0.0; d];
            for row in z.slice(s![r, ..]).rows() {
                for (a, x) in v.iter_mut().zip(row) {
                    *a += x * x;
                }
            }
            v
        });
        let mut acc = vec![0.0; d];
        for p in parts {
            for (a, b) in acc.iter_mut().zip(p) {
                *a += b;
            }
        }
        Cov::Diagonal(acc.into_iter().map(|v| v * scale).collect())
    }
}

/// Smallest diagonal entry of a covariance estimate, relative to `E`.
pub const COV_FLOOR: f64 = 1e-12;

/// Lifts the diagonal so that no entry is below `floor`; the noiseless
/// channel otherwise drives `Σ̂` to exactly zero.
fn floor_cov(c: Cov, floor: f64) -> Cov {
    match c {
        Cov::Diagonal(v) => Cov::Diagonal(v.into_iter().map(|x| x.max(floor)).collect()),
        Cov::Full(m) => {
            let low = m.diagonal().min();
            if low < floor {
                Cov::Full(m).add_identity(floor - low)
            } else {
                Cov::Full(m)
            }
        }
    }
}

/// Empirical `(UER, BER)`.
pub fn measure_error(x_hat: ArrayView2<'_, f64>, x: ArrayView2<'_, f64>) -> Result<(f64, f64)> {
    if x_hat.dim() != x.dim() {
        return Err(Error::Dimension(format!("estimate is {:?}, truth is {:?}", x_hat.dim(), x.dim())));
    }
    let (l, d) = x.dim();
    if l == 0 || d == 0 {
        return Ok((0.0, 0.0));
    }
    let mut users = 0usize;
    let mut bits = 0usize;
    for (a, b) in x_hat.rows().into_iter().zip(x.rows()) {
        let wrong = a.iter().zip(b).filter(|(p, q)| p != q).count();
        bits += wrong;
        users += usize::from(wrong > 0);
    }
    Ok((users as f64 / l as f64, bits as f64 / (l * d) as f64))
}

/// Output of the row-wise denoising step.
struct Denoised {
    x: Array2<f64>,
    hard: Option<Array2<f64>>,
    jacobian: Cov,
}

/// Denoises `s` (rows of one column block) with `prep`.
fn denoise_rows(s: ArrayView2<'_, f64>, prep: &Prepared<'_>, mode: JacobianMode, hard: bool) -> Denoised {
    let (l, d) = s.dim();
    let parts = par::map_chunks(l, par::ROW_CHUNK, |_, range| {
        let mut ws = prep.workspace();
        let mut jac = prep.jacobian_sum(mode);
        let rows = range.len();
        let mut x = Array2::<f64>::zeros((rows, d));
        let mut h = if hard { Array2::<f64>::zeros((rows, d)) } else { Array2::zeros((0, d)) };
        let mut srow = vec![0.0; d];
        let mut out = vec![0.0; d];
        let mut hrow = vec![0.0; d];
        for (k, i) in range.enumerate() {
            for (a, b) in srow.iter_mut().zip(s.row(i)) {
                *a = *b;
            }
            prep.denoise(&srow, &mut out, &mut ws, Some(&mut jac));
            x.row_mut(k).iter_mut().zip(&out).for_each(|(a, b)| *a = *b);
            if hard {
                prep.hard_decision(&srow, &out, &mut hrow, &mut ws);
                h.row_mut(k).iter_mut().zip(&hrow).for_each(|(a, b)| *a = *b);
            }
        }
        (x, h, jac)
    });
    let mut total = prep.jacobian_sum(mode);
    let mut xs = Vec::with_capacity(parts.len());
    let mut hs = Vec::with_capacity(parts.len());
    for (x, h, jac) in parts {
        total.merge(&jac);
        xs.push(x);
        hs.push(h);
    }
    let cat = |v: Vec<Array2<f64>>| -> Array2<f64> {
        if v.is_empty() {
            return Array2::zeros((0, d));
        }
        let views: Vec<_> = v.iter().map(|a| a.view()).collect();
        ndarray::concatenate(Axis(0), &views).expect("row blocks share the column count")
    };
    Denoised { x: cat(xs), hard: hard.then(|| cat(hs)), jacobian: prep.finish_jacobian(total) }
}

fn check_finite(a: &Array2<f64>, t: usize) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(t))
    }
}

fn relative_change(new: &[f64], old: &[f64]) -> f64 {
    let num: f64 = new.iter().zip(old).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let den: f64 = old.iter().map(|a| a * a).sum::<f64>().sqrt();
    if den > 0.0 {
        num / den
    } else if num == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// iid AMP iterate.
///
/// After a step from `t`, `x` holds `Xᵗ⁺¹` while `z`, `s`, `sigma_hat` and
/// `onsager` hold the quantities of iteration `t`.
#[derive(Clone, Debug)]
pub struct AmpState {
    pub t: usize,
    pub x: Array2<f64>,
    /// Hard decisions `h_t(Sᵗ)`, when requested.
    pub x_hard: Option<Array2<f64>>,
    pub z: Array2<f64>,
    pub s: Array2<f64>,
    pub sigma_hat: Cov,
    /// `Σ_ℓ η'_t(s_ℓᵗ)`.
    pub onsager: Cov,
}

impl AmpState {
    /// `X⁰ = 0` with all memory terms zero.
    pub fn init(users: usize, n_tilde: usize, d: usize) -> Self {
        Self {
            t: 0,
            x: Array2::zeros((users, d)),
            x_hard: None,
            z: Array2::zeros((n_tilde, d)),
            s: Array2::zeros((users, d)),
            sigma_hat: Cov::zeros(d, false),
            onsager: Cov::zeros(d, false),
        }
    }
}

fn check_shapes(y: ArrayView2<'_, f64>, a: ArrayView2<'_, f64>, x: &Array2<f64>, d: usize) -> Result<()> {
    if y.nrows() != a.nrows() || a.ncols() != x.nrows() || y.ncols() != d || x.ncols() != d {
        return Err(Error::Dimension(format!(
            "Y is {:?}, A is {:?}, X is {:?}, code length {d}",
            y.dim(),
            a.dim(),
            x.dim()
        )));
    }
    Ok(())
}

/// One iid AMP iteration.
pub fn amp_step_iid(
    state: &AmpState,
    y: ArrayView2<'_, f64>,
    a: ArrayView2<'_, f64>,
    denoiser: &Denoiser,
    cfg: &AmpConfig,
    hard: bool,
) -> Result<AmpState> {
    let d = denoiser.d();
    check_shapes(y, a, &state.x, d)?;
    let n_tilde = a.nrows() as f64;
    let mut z = &y - &par::matmul(a, state.x.view());
    if state.t > 0 {
        let memory = state.onsager.transpose().scale(1.0 / n_tilde).right_mul_rows(state.z.view());
        z += &memory;
    }
    check_finite(&z, state.t)?;
    let sigma_hat = floor_cov(estimate_cov(z.view(), cfg.covariance.full_for(denoiser)), COV_FLOOR * denoiser.energy());
    let s = &state.x + &par::matmul(a.t(), z.view());
    check_finite(&s, state.t)?;
    let prep = denoiser.prepare(&sigma_hat)?;
    let out = denoise_rows(s.view(), &prep, cfg.jacobian, hard);
    let mut x = out.x;
    if cfg.damping > 0.0 {
        x = x * (1.0 - cfg.damping) + &state.x * cfg.damping;
    }
    check_finite(&x, state.t)?;
    Ok(AmpState { t: state.t + 1, x, x_hard: out.hard, z, s, sigma_hat, onsager: out.jacobian })
}

/// Per-iteration record of a decoder run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmpIteration {
    pub t: usize,
    /// Mean of the diagonal of the effective covariance estimate(s).
    pub sigma_diag_mean: f64,
    pub rel_change: f64,
    pub uer: Option<f64>,
    pub ber: Option<f64>,
    /// BER per column block (one entry for iid designs).
    pub block_ber: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct AmpRun<S> {
    pub state: S,
    pub history: Vec<AmpIteration>,
    pub converged: bool,
}

fn block_ber(hard: &Array2<f64>, x: ArrayView2<'_, f64>, blocks: usize) -> Vec<f64> {
    let per = x.nrows() / blocks;
    (0..blocks)
        .map(|c| {
            let r = c * per..(c + 1) * per;
            measure_error(hard.slice(s![r.clone(), ..]), x.slice(s![r, ..])).map_or(f64::NAN, |e| e.1)
        })
        .collect()
}

/// Runs iid AMP until the covariance estimate settles or `max_iter` is
/// reached. `truth` is used only to record error rates.
pub fn run_amp(
    y: ArrayView2<'_, f64>,
    a: ArrayView2<'_, f64>,
    denoiser: &Denoiser,
    cfg: &AmpConfig,
    truth: Option<ArrayView2<'_, f64>>,
) -> Result<AmpRun<AmpState>> {
    let mut state = AmpState::init(a.ncols(), a.nrows(), denoiser.d());
    let mut history = Vec::new();
    let mut prev: Option<Vec<f64>> = None;
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        state = amp_step_iid(&state, y, a, denoiser, cfg, true)?;
        let diag = state.sigma_hat.diag();
        let rel = prev.as_ref().map_or(f64::INFINITY, |p| relative_change(&diag, p));
        let mut rec = AmpIteration {
            t: state.t - 1,
            sigma_diag_mean: diag.iter().sum::<f64>() / diag.len() as f64,
            rel_change: rel,
            uer: None,
            ber: None,
            block_ber: Vec::new(),
        };
        if let (Some(x), Some(h)) = (truth, state.x_hard.as_ref()) {
            let (u, b) = measure_error(h.view(), x)?;
            rec.uer = Some(u);
            rec.ber = Some(b);
            rec.block_ber = vec![b];
        }
        log::debug!("amp t={} diag={:.6e} change={:.3e}", rec.t, rec.sigma_diag_mean, rel);
        history.push(rec);
        prev = Some(diag);
        if rel < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(AmpRun { state, history, converged })
}

// ---------------------------------------------------------------------------
// Spatially coupled AMP

/// Coupled AMP iterate; fields follow [`AmpState`].
#[derive(Clone, Debug)]
pub struct ScAmpState {
    pub t: usize,
    pub x: Array2<f64>,
    pub x_hard: Option<Array2<f64>>,
    pub z: Array2<f64>,
    pub z_tilde: Array2<f64>,
    pub v: Array2<f64>,
    pub s: Array2<f64>,
    /// `Q_rc`, row-major over `(r, c)`.
    pub q: Vec<Cov>,
    pub phi_hat: Vec<Cov>,
    pub t_hat: Vec<Cov>,
    /// `Σ_{ℓ∈ℒ_c} η'_{t,c}(s_ℓᵗ)` per column block.
    pub onsager: Vec<Cov>,
}

impl ScAmpState {
    pub fn init(design: &DesignMatrix, d: usize) -> Self {
        let (r, c) = (design.base.rows(), design.base.cols());
        Self {
            t: 0,
            x: Array2::zeros((design.users(), d)),
            x_hard: None,
            z: Array2::zeros((design.n_tilde(), d)),
            z_tilde: Array2::zeros((design.n_tilde(), d)),
            v: Array2::zeros((design.users(), d)),
            s: Array2::zeros((design.users(), d)),
            q: vec![Cov::zeros(d, false); r * c],
            phi_hat: vec![Cov::zeros(d, false); r],
            t_hat: vec![Cov::zeros(d, false); c],
            onsager: vec![Cov::zeros(d, false); c],
        }
    }
}

/// `T_c = [Σ_r W_rc Φ_r⁻¹]⁻¹` and `Q_rc = Φ_r⁻¹·T_c` from the row-block
/// covariances.
pub fn coupling_matrices(phi: &[Cov], w: &Array2<f64>) -> Result<(Vec<Cov>, Vec<Cov>)> {
    let (rb, cb) = w.dim();
    let d = phi[0].dim();
    let full = phi.iter().any(Cov::is_full);
    let phi_inv = phi.iter().map(Cov::inverse_spd).collect::<Result<Vec<_>>>()?;
    let mut t = Vec::with_capacity(cb);
    for c in 0..cb {
        let mut acc = Cov::zeros(d, full);
        for r in 0..rb {
            if w[[r, c]] != 0.0 {
                acc = acc.add(&phi_inv[r].scale(w[[r, c]]));
            }
        }
        t.push(acc.symmetrized().inverse_spd()?);
    }
    let mut q = Vec::with_capacity(rb * cb);
    for pi in &phi_inv {
        for tc in &t {
            q.push(pi.mul(tc));
        }
    }
    Ok((t, q))
}

/// One coupled AMP iteration.
pub fn sc_amp_step(
    state: &ScAmpState,
    y: ArrayView2<'_, f64>,
    design: &DesignMatrix,
    denoiser: &Denoiser,
    cfg: &AmpConfig,
    hard: bool,
) -> Result<ScAmpState> {
    let d = denoiser.d();
    let a = design.a.view();
    check_shapes(y, a, &state.x, d)?;
    let w = design.base.w();
    let (rb, cb) = w.dim();
    let (rpb, upb) = (design.rows_per_block(), design.users_per_block());
    let full = cfg.covariance.full_for(denoiser);

    // memory term: row block r uses (R/ñ)·Σ_c W_rc·Q_rc·J_cᵀ
    let mut z_tilde = Array2::<f64>::zeros(state.z.dim());
    if state.t > 0 {
        let scale = 1.0 / rpb as f64;
        for r in 0..rb {
            let mut m = Cov::zeros(d, false);
            for c in 0..cb {
                if w[[r, c]] != 0.0 {
                    let term = state.q[r * cb + c].mul(&state.onsager[c].transpose()).scale(w[[r, c]] * scale);
                    m = m.add(&term);
                }
            }
            let rows = r * rpb..(r + 1) * rpb;
            let part = m.right_mul_rows(state.z.slice(s![rows.clone(), ..]));
            z_tilde.slice_mut(s![rows, ..]).assign(&part);
        }
    }
    let mut z = &y - &par::matmul(a, state.x.view());
    z += &z_tilde;
    check_finite(&z, state.t)?;

    let floor = COV_FLOOR * denoiser.energy();
    let phi_hat: Vec<Cov> =
        (0..rb).map(|r| floor_cov(estimate_cov(z.slice(s![r * rpb..(r + 1) * rpb, ..]), full), floor)).collect();
    let (t_hat, q) = coupling_matrices(&phi_hat, w)?;

    let mut v = Array2::<f64>::zeros(state.x.dim());
    for r in 0..rb {
        let rows = r * rpb..(r + 1) * rpb;
        let p = par::matmul(a.slice(s![rows.clone(), ..]).t(), z.slice(s![rows, ..]));
        for c in 0..cb {
            if w[[r, c]] == 0.0 {
                continue;
            }
            let users = c * upb..(c + 1) * upb;
            let part = q[r * cb + c].right_mul_rows(p.slice(s![users.clone(), ..]));
            let mut dst = v.slice_mut(s![users, ..]);
            dst += &part;
        }
    }
    let s = &state.x + &v;
    check_finite(&s, state.t)?;

    let mut x = Array2::<f64>::zeros(state.x.dim());
    let mut x_hard = hard.then(|| Array2::<f64>::zeros(state.x.dim()));
    let mut onsager = Vec::with_capacity(cb);
    for (c, tc) in t_hat.iter().enumerate() {
        let users = c * upb..(c + 1) * upb;
        let prep = denoiser.prepare(tc)?;
        let out = denoise_rows(s.slice(s![users.clone(), ..]), &prep, cfg.jacobian, hard);
        x.slice_mut(s![users.clone(), ..]).assign(&out.x);
        if let (Some(dst), Some(h)) = (x_hard.as_mut(), out.hard.as_ref()) {
            dst.slice_mut(s![users, ..]).assign(h);
        }
        onsager.push(out.jacobian);
    }
    if cfg.damping > 0.0 {
        x = x * (1.0 - cfg.damping) + &state.x * cfg.damping;
    }
    check_finite(&x, state.t)?;
    Ok(ScAmpState { t: state.t + 1, x, x_hard, z, z_tilde, v, s, q, phi_hat, t_hat, onsager })
}

/// Runs coupled AMP; convergence is tracked on the stacked diagonals of
/// `T̂_c`.
pub fn run_sc_amp(
    y: ArrayView2<'_, f64>,
    design: &DesignMatrix,
    denoiser: &Denoiser,
    cfg: &AmpConfig,
    truth: Option<ArrayView2<'_, f64>>,
) -> Result<AmpRun<ScAmpState>> {
    let mut state = ScAmpState::init(design, denoiser.d());
    let mut history = Vec::new();
    let mut prev: Option<Vec<f64>> = None;
    let mut converged = false;
    let blocks = design.base.cols();
    for _ in 0..cfg.max_iter {
        state = sc_amp_step(&state, y, design, denoiser, cfg, true)?;
        let diag: Vec<f64> = state.t_hat.iter().flat_map(Cov::diag).collect();
        let rel = prev.as_ref().map_or(f64::INFINITY, |p| relative_change(&diag, p));
        let mut rec = AmpIteration {
            t: state.t - 1,
            sigma_diag_mean: diag.iter().sum::<f64>() / diag.len() as f64,
            rel_change: rel,
            uer: None,
            ber: None,
            block_ber: Vec::new(),
        };
        if let (Some(x), Some(h)) = (truth, state.x_hard.as_ref()) {
            let (u, b) = measure_error(h.view(), x)?;
            rec.uer = Some(u);
            rec.ber = Some(b);
            rec.block_ber = block_ber(h, x, blocks);
        }
        history.push(rec);
        prev = Some(diag);
        if rel < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(AmpRun { state, history, converged })
}
