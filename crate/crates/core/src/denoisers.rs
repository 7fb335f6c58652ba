//! Row-wise denoisers, their Jacobians and hard decisions.
//!
//! A denoiser maps an effective observation `s = x + g`, `g ~ N(0, Σ)`, to
//! an estimate of the codeword `x ∈ {±√E}^d`:
//!
//! * Bayes: the posterior mean over the enumerated codebook.
//! * Marginal: `√E·tanh(√E·s_j/Σ_jj)` per coordinate, ignoring the code.
//! * BP: `𝓡` flooding rounds of belief propagation on the Tanner graph
//!   started from the channel LLRs `2√E·s_j/Σ_jj`.
//!
//! [`Denoiser`] holds what depends only on the code; [`Denoiser::prepare`]
//! adds what depends on `Σ` and returns a [`Prepared`] denoiser that is
//! applied row by row with a per-thread [`RowWorkspace`].

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::codes::{enumerate_codebook, Codebook, LinearCode, TannerGraph};
use crate::cov::Cov;
use crate::{Error, Result};

/// Magnitude cap on BP messages.
pub const LLR_CLAMP: f64 = 30.0;
/// Cap on `|tanh⁻¹|` arguments in the check-node rule.
pub const ATANH_CLAMP: f64 = 1.0 - 1e-12;
/// Rounds of the BP decoder run after AMP for hard decisions.
pub const POST_BP_ROUNDS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DenoiserKind {
    Bayes,
    Marginal,
    Bp {
        rounds: usize,
    },
    /// `η ≡ 0`.
    Zero,
}

impl DenoiserKind {
    pub fn name(&self) -> &'static str {
        match self {
            DenoiserKind::Bayes => "bayes",
            DenoiserKind::Marginal => "marginal",
            DenoiserKind::Bp { .. } => "bp",
            DenoiserKind::Zero => "zero",
        }
    }

    pub fn bp_rounds(&self) -> Option<usize> {
        match self {
            DenoiserKind::Bp { rounds } => Some(*rounds),
            _ => None,
        }
    }

    /// Parses `bayes`, `marginal`, `bp` (with `bp_rounds`) or `zero`.
    pub fn parse(name: &str, bp_rounds: usize) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "bayes" => Ok(DenoiserKind::Bayes),
            "marginal" => Ok(DenoiserKind::Marginal),
            "bp" => Ok(DenoiserKind::Bp { rounds: bp_rounds }),
            "zero" => Ok(DenoiserKind::Zero),
            other => Err(Error::InvalidParameter(format!("unknown denoiser {other:?}"))),
        }
    }
}

impl fmt::Display for DenoiserKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DenoiserKind::Bp { rounds } => write!(f, "bp({rounds})"),
            other => f.write_str(other.name()),
        }
    }
}

/// How a soft estimate becomes a codeword decision.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HardDecisionKind {
    /// Entry-wise sign of the denoiser output.
    #[default]
    Sign,
    /// Most likely codeword given `s`.
    Map,
    /// Sign of the LLRs after a long BP run on `s`.
    PostBp,
}

impl HardDecisionKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().replace('-', "_").as_str() {
            "sign" => Ok(Self::Sign),
            "map" => Ok(Self::Map),
            "post_bp" | "postbp" => Ok(Self::PostBp),
            other => Err(Error::InvalidParameter(format!("unknown hard decision {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Sign => "sign",
            Self::Map => "map",
            Self::PostBp => "post_bp",
        }
    }
}

/// Which Jacobian entries feed the Onsager term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JacobianMode {
    /// Full for Bayes, whose exact Jacobian comes with the posterior
    /// covariance at no extra cost; diagonal otherwise.
    #[default]
    Auto,
    Diagonal,
    Full,
}

impl JacobianMode {
    pub fn resolve(self, kind: DenoiserKind) -> JacobianMode {
        match self {
            JacobianMode::Auto if kind == DenoiserKind::Bayes => JacobianMode::Full,
            JacobianMode::Auto => JacobianMode::Diagonal,
            m => m,
        }
    }
}

// ---------------------------------------------------------------------------
// Free-standing denoisers

fn check_variances(diag: &[f64]) -> Result<()> {
    match diag.iter().position(|&v| !(v > 0.0)) {
        Some(j) => Err(Error::InvalidParameter(format!("variance {j} is {} (must be positive)", diag[j]))),
        None => Ok(()),
    }
}

#[inline]
fn marginal_entry(s: f64, var: f64, sqrt_e: f64) -> f64 {
    sqrt_e * ((sqrt_e * s) / var).tanh()
}

/// `√E·tanh(√E·s_j/Σ_jj)`.
pub fn marginal_denoise(s: &[f64], diag: &[f64], energy: f64) -> Result<Vec<f64>> {
    if s.len() != diag.len() {
        return Err(Error::Dimension(format!("s has {} entries, Σ has {}", s.len(), diag.len())));
    }
    check_variances(diag)?;
    let a = energy.sqrt();
    Ok(s.iter().zip(diag).map(|(&x, &v)| marginal_entry(x, v, a)).collect())
}

/// Posterior mean of `x` over `book` given `s = x + N(0, Σ)`.
pub fn bayes_denoise(s: &[f64], sigma: &Cov, book: &Codebook) -> Result<Vec<f64>> {
    let table = BayesTable::new(book, sigma)?;
    let mut w = vec![0.0; book.len()];
    let mut out = vec![0.0; book.d()];
    table.posterior(s, &mut w);
    table.mean(&w, &mut out);
    Ok(out)
}

/// The codeword with the largest posterior weight; ties go to the
/// lexicographically smallest sign pattern.
pub fn map_hard_decision(s: &[f64], sigma: &Cov, book: &Codebook) -> Result<Vec<f64>> {
    let table = BayesTable::new(book, sigma)?;
    let m = table.argmax(s);
    Ok(book.word(m).to_vec())
}

/// Entry-wise sign, `0 ↦ +√E`.
pub fn sign_hard_decision(x: &[f64], energy: f64) -> Vec<f64> {
    let a = energy.sqrt();
    x.iter().map(|&v| if v < 0.0 { -a } else { a }).collect()
}

/// State of one BP run.
#[derive(Clone, Debug, Default)]
pub struct BpWorkspace {
    /// Variable-to-check messages, indexed by edge.
    pub v2c: Vec<f64>,
    /// Check-to-variable messages, indexed by edge.
    pub c2v: Vec<f64>,
    /// Final LLRs.
    pub llr: Vec<f64>,
    /// Rounds actually run.
    pub rounds: usize,
    tanh: Vec<f64>,
    prefix: Vec<f64>,
}

impl BpWorkspace {
    pub fn new(graph: &TannerGraph) -> Self {
        let max_deg = (0..graph.num_checks()).map(|i| graph.check_neighbors(i).len()).max().unwrap_or(0);
        Self {
            v2c: vec![0.0; graph.num_edges()],
            c2v: vec![0.0; graph.num_edges()],
            llr: vec![0.0; graph.num_vars()],
            rounds: 0,
            tanh: vec![0.0; max_deg],
            prefix: vec![0.0; max_deg + 1],
        }
    }
}

#[inline]
fn clamp_msg(x: f64) -> f64 {
    x.clamp(-LLR_CLAMP, LLR_CLAMP)
}

/// Channel LLRs `2·(√E·s_j)/Σ_jj`.
fn channel_llr(s: &[f64], diag: &[f64], sqrt_e: f64, out: &mut Vec<f64>) {
    out.clear();
    out.extend(s.iter().zip(diag).map(|(&x, &v)| 2.0 * ((sqrt_e * x) / v)));
}

fn syndrome_ok(graph: &TannerGraph, llr: &[f64]) -> bool {
    (0..graph.num_checks()).all(|i| graph.check_neighbors(i).iter().filter(|&&j| llr[j] < 0.0).count() % 2 == 0)
}

/// Flooding BP from channel LLRs `lam`. With `early_stop`, stops once the
/// hard decisions satisfy every check.
fn run_bp(graph: &TannerGraph, lam: &[f64], rounds: usize, early_stop: bool, ws: &mut BpWorkspace) {
    for e in 0..graph.num_edges() {
        ws.v2c[e] = clamp_msg(lam[graph.edge_var(e)]);
        ws.c2v[e] = 0.0;
    }
    ws.llr.copy_from_slice(lam);
    ws.rounds = 0;
    if early_stop && syndrome_ok(graph, &ws.llr) {
        return;
    }
    for _ in 0..rounds {
        for i in 0..graph.num_checks() {
            let edges = graph.check_edges(i);
            let deg = edges.len();
            let base = edges.start;
            for a in 0..deg {
                ws.tanh[a] = (ws.v2c[base + a] / 2.0).tanh();
            }
            ws.prefix[0] = 1.0;
            for a in 0..deg {
                ws.prefix[a + 1] = ws.prefix[a] * ws.tanh[a];
            }
            let mut suffix = 1.0;
            for a in (0..deg).rev() {
                let p = (ws.prefix[a] * suffix).clamp(-ATANH_CLAMP, ATANH_CLAMP);
                ws.c2v[base + a] = clamp_msg(2.0 * p.atanh());
                suffix *= ws.tanh[a];
            }
        }
        for (j, &l) in lam.iter().enumerate().take(graph.num_vars()) {
            let edges = graph.var_edges(j);
            let total = edges.iter().fold(l, |acc, &e| acc + ws.c2v[e]);
            ws.llr[j] = total;
            for &e in edges {
                ws.v2c[e] = clamp_msg(total - ws.c2v[e]);
            }
        }
        ws.rounds += 1;
        if early_stop && syndrome_ok(graph, &ws.llr) {
            return;
        }
    }
}

/// `𝓡` rounds of BP; entry `j` of the output is `√E·tanh(L_j/2)`.
pub fn bp_denoise(
    s: &[f64],
    diag: &[f64],
    graph: &TannerGraph,
    rounds: usize,
    energy: f64,
) -> Result<(Vec<f64>, BpWorkspace)> {
    if s.len() != graph.num_vars() || diag.len() != graph.num_vars() {
        return Err(Error::Dimension(format!(
            "graph has {} variables, s has {}, Σ has {}",
            graph.num_vars(),
            s.len(),
            diag.len()
        )));
    }
    check_variances(diag)?;
    let a = energy.sqrt();
    let mut lam = Vec::new();
    channel_llr(s, diag, a, &mut lam);
    let mut ws = BpWorkspace::new(graph);
    run_bp(graph, &lam, rounds, false, &mut ws);
    let out = ws.llr.iter().map(|&l| a * (l / 2.0).tanh()).collect();
    Ok((out, ws))
}

/// `D_jj = (E − η_j²)/Σ_jj`.
pub fn bp_jacobian_diag(eta: &[f64], diag: &[f64], energy: f64) -> Vec<f64> {
    eta.iter().zip(diag).map(|(&h, &v)| (energy - h * h) / v).collect()
}

/// Hard bit decisions after up to `rounds` BP rounds with early stopping.
/// A zero LLR decides bit 0.
pub fn post_bp_decode(s: &[f64], diag: &[f64], graph: &TannerGraph, rounds: usize, energy: f64) -> Result<Vec<u8>> {
    if s.len() != graph.num_vars() || diag.len() != graph.num_vars() {
        return Err(Error::Dimension("post-BP input length differs from the code length".into()));
    }
    check_variances(diag)?;
    let mut lam = Vec::new();
    channel_llr(s, diag, energy.sqrt(), &mut lam);
    let mut ws = BpWorkspace::new(graph);
    run_bp(graph, &lam, rounds, true, &mut ws);
    Ok(ws.llr.iter().map(|&l| u8::from(l < 0.0)).collect())
}

// ---------------------------------------------------------------------------
// BP Jacobians

#[derive(Clone, Copy, Debug, PartialEq)]
struct Dual {
    v: f64,
    t: f64,
}

impl Dual {
    fn mul(self, o: Dual) -> Dual {
        Dual { v: self.v * o.v, t: self.v * o.t + self.t * o.v }
    }
}

fn clamp_dual(x: Dual, cap: f64) -> Dual {
    if x.v > cap || x.v < -cap {
        Dual { v: x.v.clamp(-cap, cap), t: 0.0 }
    } else {
        x
    }
}

/// `∂L_j/∂λ_{j1}` for all `j`, by forward differentiation through the
/// same flooding schedule as [`run_bp`].
fn bp_llr_tangent(graph: &TannerGraph, lam: &[f64], rounds: usize, j1: usize) -> Vec<f64> {
    let dlam = |j: usize| if j == j1 { 1.0 } else { 0.0 };
    let n_e = graph.num_edges();
    let mut v2c: Vec<Dual> = (0..n_e)
        .map(|e| {
            let j = graph.edge_var(e);
            clamp_dual(Dual { v: lam[j], t: dlam(j) }, LLR_CLAMP)
        })
        .collect();
    let mut c2v = vec![Dual { v: 0.0, t: 0.0 }; n_e];
    for _ in 0..rounds {
        for i in 0..graph.num_checks() {
            let edges = graph.check_edges(i);
            let base = edges.start;
            let deg = edges.len();
            let th: Vec<Dual> = (0..deg)
                .map(|a| {
                    let m = v2c[base + a];
                    let t = (m.v / 2.0).tanh();
                    Dual { v: t, t: (1.0 - t * t) / 2.0 * m.t }
                })
                .collect();
            let mut prefix = vec![Dual { v: 1.0, t: 0.0 }; deg + 1];
            for a in 0..deg {
                prefix[a + 1] = prefix[a].mul(th[a]);
            }
            let mut suffix = Dual { v: 1.0, t: 0.0 };
            for a in (0..deg).rev() {
                let p = clamp_dual(prefix[a].mul(suffix), ATANH_CLAMP);
                let l = Dual { v: 2.0 * p.v.atanh(), t: 2.0 * p.t / (1.0 - p.v * p.v) };
                c2v[base + a] = clamp_dual(l, LLR_CLAMP);
                suffix = suffix.mul(th[a]);
            }
        }
        for (j, &l) in lam.iter().enumerate().take(graph.num_vars()) {
            let edges = graph.var_edges(j);
            let total = edges
                .iter()
                .fold(Dual { v: l, t: dlam(j) }, |acc, &e| Dual { v: acc.v + c2v[e].v, t: acc.t + c2v[e].t });
            for &e in edges {
                v2c[e] = clamp_dual(Dual { v: total.v - c2v[e].v, t: total.t - c2v[e].t }, LLR_CLAMP);
            }
        }
    }
    (0..graph.num_vars()).map(|j| graph.var_edges(j).iter().fold(dlam(j), |acc, &e| acc + c2v[e].t)).collect()
}

/// Jacobian of the BP denoiser with its path constants.
#[derive(Clone, Debug)]
pub struct JacobianResult {
    /// `D[j, j1] = ∂η_j/∂s_{j1}`.
    pub d: DMatrix<f64>,
    /// `C[j, j1]`, with `C[j, j] = 1`.
    pub c: DMatrix<f64>,
    pub mode: JacobianMode,
}

/// Full Jacobian of [`bp_denoise`] when the computation graph of every
/// output is a tree (`2𝓡 < girth`).
///
/// `D_jj = (E − η_j²)/Σ_jj` and `D_{j,j1} = (E − η_j²)/Σ_{j1j1}·C_{j,j1}`,
/// where `C_{j,j1}` multiplies the check-hop factors `c(1−t²)/(1−c²t²)`
/// along the path from `j1` to `j` (`t = tanh(m/2)` of the incoming message,
/// `c` the product of the other `tanh` values at that check). Variables
/// farther than `𝓡` check hops apart get `0`.
pub fn bp_jacobian_full(
    s: &[f64],
    diag: &[f64],
    graph: &TannerGraph,
    rounds: usize,
    energy: f64,
) -> Result<JacobianResult> {
    if let Some(g) = graph.girth() {
        if 2 * rounds >= g {
            return Err(Error::RoundsExceedGirth { rounds, girth: g });
        }
    }
    let (eta, _) = bp_denoise(s, diag, graph, rounds, energy)?;
    let dim = s.len();
    let mut lam = Vec::new();
    channel_llr(s, diag, energy.sqrt(), &mut lam);
    let mut c = DMatrix::zeros(dim, dim);
    for j1 in 0..dim {
        let col = bp_llr_tangent(graph, &lam, rounds, j1);
        for (j, v) in col.into_iter().enumerate() {
            c[(j, j1)] = if j == j1 { 1.0 } else { v };
        }
    }
    let d = DMatrix::from_fn(dim, dim, |j, j1| (energy - eta[j] * eta[j]) / diag[j1] * c[(j, j1)]);
    Ok(JacobianResult { d, c, mode: JacobianMode::Full })
}

/// Exact Jacobian of [`bp_denoise`] for any number of rounds, including the
/// feedback that cycles add once `2𝓡 ≥ girth`.
pub fn bp_jacobian_exact(
    s: &[f64],
    diag: &[f64],
    graph: &TannerGraph,
    rounds: usize,
    energy: f64,
) -> Result<DMatrix<f64>> {
    let (eta, _) = bp_denoise(s, diag, graph, rounds, energy)?;
    let dim = s.len();
    let mut lam = Vec::new();
    channel_llr(s, diag, energy.sqrt(), &mut lam);
    let mut d = DMatrix::zeros(dim, dim);
    for j1 in 0..dim {
        let col = bp_llr_tangent(graph, &lam, rounds, j1);
        for (j, v) in col.into_iter().enumerate() {
            d[(j, j1)] = (energy - eta[j] * eta[j]) / diag[j1] * v;
        }
    }
    Ok(d)
}

// ---------------------------------------------------------------------------
// Bayes tables

/// `b_m = Σ⁻¹x_m` and `c_m = −½·x_mᵀΣ⁻¹x_m` for every codeword, so that the
/// log posterior weight of `x_m` given `s` is `c_m + b_m·s`.
#[derive(Clone, Debug)]
struct BayesTable {
    words: ndarray::Array2<f64>,
    b: ndarray::Array2<f64>,
    c: Vec<f64>,
    lex: Vec<usize>,
}

impl BayesTable {
    fn new(book: &Codebook, sigma: &Cov) -> Result<Self> {
        if sigma.dim() != book.d() {
            return Err(Error::Dimension(format!("Σ is {0}×{0}, codebook length is {1}", sigma.dim(), book.d())));
        }
        let inv = sigma.inverse_spd()?;
        let words = book.words().clone();
        let b = inv.right_mul_rows(words.view());
        let c = words.rows().into_iter().zip(b.rows()).map(|(x, bx)| -0.5 * x.dot(&bx)).collect();
        let mut lex: Vec<usize> = (0..words.nrows()).collect();
        lex.sort_by(|&p, &q| words.row(p).iter().partial_cmp(words.row(q).iter()).expect("finite codewords"));
        Ok(Self { words, b, c, lex })
    }

    /// Normalized posterior weights.
    fn posterior(&self, s: &[f64], w: &mut [f64]) {
        let mut max = f64::NEG_INFINITY;
        for (m, wm) in w.iter_mut().enumerate() {
            let row = self.b.row(m);
            let mut acc = self.c[m];
            for (bj, sj) in row.iter().zip(s) {
                acc += bj * sj;
            }
            *wm = acc;
            max = max.max(acc);
        }
        let mut total = 0.0;
        for wm in w.iter_mut() {
            *wm = (*wm - max).exp();
            total += *wm;
        }
        for wm in w.iter_mut() {
            *wm /= total;
        }
    }

    fn mean(&self, w: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (m, &wm) in w.iter().enumerate() {
            for (o, x) in out.iter_mut().zip(self.words.row(m)) {
                *o += wm * x;
            }
        }
    }

    /// Adds `Cov(x | s) = Σ_m w_m (x_m − η)(x_m − η)ᵀ` to `acc`.
    fn add_covariance(&self, w: &[f64], eta: &[f64], acc: &mut DMatrix<f64>) {
        let d = eta.len();
        let mut diff = vec![0.0; d];
        for (m, &wm) in w.iter().enumerate() {
            if wm == 0.0 {
                continue;
            }
            for ((df, x), e) in diff.iter_mut().zip(self.words.row(m)).zip(eta) {
                *df = x - e;
            }
            for a in 0..d {
                let wa = wm * diff[a];
                for b in 0..d {
                    acc[(a, b)] += wa * diff[b];
                }
            }
        }
    }

    fn argmax(&self, s: &[f64]) -> usize {
        let mut best = self.lex[0];
        let mut best_val = f64::NEG_INFINITY;
        for &m in &self.lex {
            let v = self.c[m] + self.b.row(m).iter().zip(s).map(|(b, x)| b * x).sum::<f64>();
            if v > best_val {
                best_val = v;
                best = m;
            }
        }
        best
    }
}

// ---------------------------------------------------------------------------
// Prepared denoisers

/// Code-dependent part of a denoiser.
#[derive(Clone, Debug)]
pub struct Denoiser {
    kind: DenoiserKind,
    hard: HardDecisionKind,
    energy: f64,
    d: usize,
    codebook: Option<Codebook>,
    graph: TannerGraph,
    post_bp_rounds: usize,
}

impl Denoiser {
    pub fn new(kind: DenoiserKind, hard: HardDecisionKind, code: &LinearCode, energy: f64) -> Result<Self> {
        if !(energy > 0.0) {
            return Err(Error::InvalidParameter(format!("energy must be positive, got {energy}")));
        }
        let needs_book = kind == DenoiserKind::Bayes || hard == HardDecisionKind::Map;
        let codebook = if needs_book { Some(enumerate_codebook(code, energy)?) } else { None };
        Ok(Self {
            kind,
            hard,
            energy,
            d: code.d(),
            codebook,
            graph: code.graph().clone(),
            post_bp_rounds: POST_BP_ROUNDS,
        })
    }

    pub fn with_post_bp_rounds(mut self, rounds: usize) -> Self {
        self.post_bp_rounds = rounds;
        self
    }

    pub fn kind(&self) -> DenoiserKind {
        self.kind
    }

    pub fn hard_kind(&self) -> HardDecisionKind {
        self.hard
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Whether the denoiser reads off-diagonal entries of `Σ`.
    pub fn uses_full_covariance(&self) -> bool {
        self.codebook.is_some()
    }

    pub fn prepare(&self, sigma: &Cov) -> Result<Prepared<'_>> {
        if sigma.dim() != self.d {
            return Err(Error::Dimension(format!("Σ is {0}×{0}, code length is {1}", sigma.dim(), self.d)));
        }
        let diag = sigma.diag();
        if self.kind != DenoiserKind::Zero {
            check_variances(&diag).map_err(|_| Error::SingularCovariance)?;
        }
        let table = match &self.codebook {
            Some(book) => Some(BayesTable::new(book, sigma)?),
            None => None,
        };
        let inv = if self.kind == DenoiserKind::Bayes { Some(sigma.inverse_spd()?) } else { None };
        Ok(Prepared { den: self, diag, table, inv })
    }
}

/// Per-thread scratch space.
#[derive(Clone, Debug)]
pub struct RowWorkspace {
    weights: Vec<f64>,
    lam: Vec<f64>,
    bp: BpWorkspace,
}

/// Running sum of Jacobians over rows.
#[derive(Clone, Debug)]
pub struct JacobianSum {
    mode: JacobianMode,
    diag: Vec<f64>,
    full: Option<DMatrix<f64>>,
}

impl JacobianSum {
    pub fn merge(&mut self, other: &JacobianSum) {
        for (a, b) in self.diag.iter_mut().zip(&other.diag) {
            *a += b;
        }
        if let (Some(a), Some(b)) = (&mut self.full, &other.full) {
            *a += b;
        }
    }
}

/// A denoiser bound to one covariance `Σ`.
#[derive(Clone, Debug)]
pub struct Prepared<'a> {
    den: &'a Denoiser,
    diag: Vec<f64>,
    table: Option<BayesTable>,
    inv: Option<Cov>,
}

impl Prepared<'_> {
    pub fn workspace(&self) -> RowWorkspace {
        RowWorkspace {
            weights: vec![0.0; self.table.as_ref().map_or(0, |t| t.words.nrows())],
            lam: Vec::with_capacity(self.den.d),
            bp: BpWorkspace::new(&self.den.graph),
        }
    }

    pub fn jacobian_sum(&self, mode: JacobianMode) -> JacobianSum {
        let d = self.den.d;
        let mode = mode.resolve(self.den.kind);
        let full = (mode == JacobianMode::Full || self.den.kind == DenoiserKind::Bayes).then(|| DMatrix::zeros(d, d));
        JacobianSum { mode, diag: vec![0.0; d], full }
    }

    /// Writes `η(s)` into `out` and adds `η'(s)` to `jac`.
    ///
    /// Bayes rows add the posterior covariance; [`Prepared::finish_jacobian`]
    /// applies the common `Σ⁻¹` factor once.
    pub fn denoise(&self, s: &[f64], out: &mut [f64], ws: &mut RowWorkspace, jac: Option<&mut JacobianSum>) {
        let den = self.den;
        let a = den.energy.sqrt();
        match den.kind {
            DenoiserKind::Zero => out.fill(0.0),
            DenoiserKind::Marginal => {
                for ((o, &x), &v) in out.iter_mut().zip(s).zip(&self.diag) {
                    *o = marginal_entry(x, v, a);
                }
                if let Some(jac) = jac {
                    self.add_separable(out, jac);
                }
            }
            DenoiserKind::Bp { rounds } => {
                channel_llr(s, &self.diag, a, &mut ws.lam);
                run_bp(&den.graph, &ws.lam, rounds, false, &mut ws.bp);
                for (o, &l) in out.iter_mut().zip(&ws.bp.llr) {
                    *o = a * (l / 2.0).tanh();
                }
                if let Some(jac) = jac {
                    match jac.mode {
                        JacobianMode::Full => {
                            for j1 in 0..den.d {
                                let col = bp_llr_tangent(&den.graph, &ws.lam, rounds, j1);
                                let full = jac.full.as_mut().expect("full accumulator");
                                for (j, v) in col.into_iter().enumerate() {
                                    let dj = (den.energy - out[j] * out[j]) / self.diag[j1] * v;
                                    full[(j, j1)] += dj;
                                    if j == j1 {
                                        jac.diag[j] += dj;
                                    }
                                }
                            }
                        }
                        _ => self.add_separable(out, jac),
                    }
                }
            }
            DenoiserKind::Bayes => {
                let t = self.table.as_ref().expect("bayes table");
                t.posterior(s, &mut ws.weights);
                t.mean(&ws.weights, out);
                if let Some(jac) = jac {
                    t.add_covariance(&ws.weights, out, jac.full.as_mut().expect("full accumulator"));
                }
            }
        }
    }

    fn add_separable(&self, out: &[f64], jac: &mut JacobianSum) {
        let e = self.den.energy;
        for (j, (&h, &v)) in out.iter().zip(&self.diag).enumerate() {
            let dj = (e - h * h) / v;
            jac.diag[j] += dj;
            if let Some(f) = jac.full.as_mut() {
                f[(j, j)] += dj;
            }
        }
    }

    /// Converts an accumulated sum into `Σ_ℓ η'(s_ℓ)`.
    pub fn finish_jacobian(&self, jac: JacobianSum) -> Cov {
        let out = match (&self.inv, jac.full) {
            (Some(inv), Some(cov_sum)) => Cov::Full(cov_sum).mul(inv),
            (None, Some(full)) => Cov::Full(full),
            (_, None) => Cov::Diagonal(jac.diag),
        };
        match jac.mode {
            JacobianMode::Full => out,
            _ => out.diagonal_part(),
        }
    }

    /// Codeword decision for the row with observation `s` and denoised
    /// estimate `eta`.
    pub fn hard_decision(&self, s: &[f64], eta: &[f64], out: &mut [f64], ws: &mut RowWorkspace) {
        let den = self.den;
        let a = den.energy.sqrt();
        match den.hard {
            HardDecisionKind::Sign => {
                for (o, &h) in out.iter_mut().zip(eta) {
                    *o = if h < 0.0 { -a } else { a };
                }
            }
            HardDecisionKind::Map => {
                let t = self.table.as_ref().expect("codebook for MAP decisions");
                out.copy_from_slice(t.words.row(t.argmax(s)).as_slice().expect("contiguous rows"));
            }
            HardDecisionKind::PostBp => {
                channel_llr(s, &self.diag, a, &mut ws.lam);
                run_bp(&den.graph, &ws.lam, den.post_bp_rounds, true, &mut ws.bp);
                for (o, &l) in out.iter_mut().zip(&ws.bp.llr) {
                    *o = if l < 0.0 { -a } else { a };
                }
            }
        }
    }
}
