//! System parameters, design matrices and the channel.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::codes::{bpsk_map, LinearCode};
use crate::rng::{self, domain};
use crate::{par, Error, Result};

/// `E = 10^{dB/10} · 2σ² · k/d`.
pub fn energy_from_ebn0(ebn0_db: f64, k: usize, d: usize, sigma2: f64) -> Result<f64> {
    if k == 0 || d == 0 || !(sigma2 > 0.0) || !ebn0_db.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "need k, d, σ² > 0 and finite Eb/N0 (k={k}, d={d}, σ²={sigma2}, Eb/N0={ebn0_db} dB)"
        )));
    }
    Ok(10f64.powf(ebn0_db / 10.0) * 2.0 * sigma2 * k as f64 / d as f64)
}

/// `Eb/N0 = (E·d/k)/(2σ²)`, in dB.
pub fn ebn0_db_from_energy(energy: f64, k: usize, d: usize, sigma2: f64) -> f64 {
    10.0 * ((energy * d as f64 / k as f64) / (2.0 * sigma2)).log10()
}

/// Scalars that fix the large-system limit: everything except `L` and `n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityParams {
    pub d: usize,
    pub k: usize,
    /// User density `L/n`.
    pub mu: f64,
    pub sigma2: f64,
    pub energy: f64,
}

impl DensityParams {
    pub fn from_ebn0(code: &LinearCode, mu: f64, ebn0_db: f64, sigma2: f64) -> Result<Self> {
        let energy = energy_from_ebn0(ebn0_db, code.k(), code.d(), sigma2)?;
        Ok(Self { d: code.d(), k: code.k(), mu, sigma2, energy })
    }

    pub fn ebn0_db(&self) -> f64 {
        ebn0_db_from_energy(self.energy, self.k, self.d, self.sigma2)
    }

    /// `S = μ·k` payload bits per channel use.
    pub fn spectral_efficiency(&self) -> f64 {
        self.mu * self.k as f64
    }
}

/// A finite system: `L` users, signature length `ñ`, `n = ñ·d` channel uses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub users: usize,
    pub n_tilde: usize,
    pub d: usize,
    pub k: usize,
    pub sigma2: f64,
    pub energy: f64,
}

impl SystemParams {
    pub fn new(users: usize, n_tilde: usize, code: &LinearCode, sigma2: f64, energy: f64) -> Result<Self> {
        if users == 0 || n_tilde == 0 {
            return Err(Error::InvalidParameter("L and ñ must be positive".into()));
        }
        if !(sigma2 >= 0.0) || !(energy > 0.0) {
            return Err(Error::InvalidParameter(format!("need σ² ≥ 0 and E > 0 (σ²={sigma2}, E={energy})")));
        }
        Ok(Self { users, n_tilde, d: code.d(), k: code.k(), sigma2, energy })
    }

    /// Picks `ñ = round(L/(μ·d))` for a requested density.
    pub fn from_density(users: usize, mu: f64, code: &LinearCode, sigma2: f64, energy: f64) -> Result<Self> {
        if !(mu > 0.0) {
            return Err(Error::InvalidParameter(format!("μ must be positive, got {mu}")));
        }
        let n_tilde = (users as f64 / (mu * code.d() as f64)).round().max(1.0) as usize;
        Self::new(users, n_tilde, code, sigma2, energy)
    }

    pub fn n(&self) -> usize {
        self.n_tilde * self.d
    }

    pub fn mu(&self) -> f64 {
        self.users as f64 / self.n() as f64
    }

    /// `μ_in = (R/C)·μ`.
    pub fn mu_in(&self, base: &BaseMatrix) -> f64 {
        self.mu() * base.rows() as f64 / base.cols() as f64
    }

    pub fn ebn0_db(&self) -> f64 {
        ebn0_db_from_energy(self.energy, self.k, self.d, self.sigma2)
    }

    pub fn spectral_efficiency(&self) -> f64 {
        self.mu() * self.k as f64
    }

    pub fn density(&self) -> DensityParams {
        DensityParams { d: self.d, k: self.k, mu: self.mu(), sigma2: self.sigma2, energy: self.energy }
    }
}

/// Block variance profile `W` (`R × C`, columns sum to 1).
#[derive(Clone, Debug, PartialEq)]
pub struct BaseMatrix {
    omega: usize,
    lambda: usize,
    w: Array2<f64>,
}

impl BaseMatrix {
    /// The `1 × 1` matrix `[1]`.
    pub fn iid() -> Self {
        Self { omega: 1, lambda: 1, w: Array2::ones((1, 1)) }
    }

    /// `(Λ+ω−1) × Λ` band with `W[r,c] = 1/ω` for `c ≤ r ≤ c+ω−1`.
    pub fn omega_lambda(omega: usize, lambda: usize) -> Result<Self> {
        if omega < 1 || lambda + 1 < 2 * omega {
            return Err(Error::InvalidParameter(format!("need ω ≥ 1 and Λ ≥ 2ω−1 (ω={omega}, Λ={lambda})")));
        }
        let w = Array2::from_shape_fn((lambda + omega - 1, lambda), |(r, c)| {
            if c <= r && r < c + omega {
                1.0 / omega as f64
            } else {
                0.0
            }
        });
        Ok(Self { omega, lambda, w })
    }

    pub fn omega(&self) -> usize {
        self.omega
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    /// `R`.
    pub fn rows(&self) -> usize {
        self.w.nrows()
    }

    /// `C`.
    pub fn cols(&self) -> usize {
        self.w.ncols()
    }

    pub fn w(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn is_iid(&self) -> bool {
        self.w.dim() == (1, 1)
    }
}

/// How the design matrix is drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum DesignSpec {
    #[default]
    Iid,
    Coupled {
        omega: usize,
        lambda: usize,
    },
}

impl DesignSpec {
    pub fn base_matrix(&self) -> Result<BaseMatrix> {
        match *self {
            DesignSpec::Iid => Ok(BaseMatrix::iid()),
            DesignSpec::Coupled { omega, lambda } => BaseMatrix::omega_lambda(omega, lambda),
        }
    }
}

/// `ñ × L` design matrix with its block structure.
#[derive(Clone, Debug)]
pub struct DesignMatrix {
    pub a: Array2<f64>,
    pub base: BaseMatrix,
}

impl DesignMatrix {
    pub fn n_tilde(&self) -> usize {
        self.a.nrows()
    }

    pub fn users(&self) -> usize {
        self.a.ncols()
    }

    pub fn rows_per_block(&self) -> usize {
        self.n_tilde() / self.base.rows()
    }

    pub fn users_per_block(&self) -> usize {
        self.users() / self.base.cols()
    }

    /// `r(i)`.
    pub fn row_block(&self, i: usize) -> usize {
        i / self.rows_per_block()
    }

    /// `c(ℓ)`.
    pub fn col_block(&self, l: usize) -> usize {
        l / self.users_per_block()
    }
}

/// Draws `A` with `A[i,ℓ] ~ N(0, W[r(i),c(ℓ)]·R/ñ)`.
///
/// Row `i` uses its own stream, and entries in zero-variance blocks are
/// exactly zero. The iid design is the base matrix `[1]`, so both specs
/// share one sampler.
pub fn sample_design(spec: &BaseMatrix, n_tilde: usize, users: usize, seed: u64) -> Result<DesignMatrix> {
    let (r_blocks, c_blocks) = (spec.rows(), spec.cols());
    if n_tilde == 0 || users == 0 || !n_tilde.is_multiple_of(r_blocks) || !users.is_multiple_of(c_blocks) {
        return Err(Error::Dimension(format!(
            "ñ={n_tilde} must be a positive multiple of R={r_blocks} and L={users} of C={c_blocks}"
        )));
    }
    let (rpb, upb) = (n_tilde / r_blocks, users / c_blocks);
    let scale: Array2<f64> = spec.w.mapv(|w| (w / rpb as f64).sqrt());
    let mut a = Array2::<f64>::zeros((n_tilde, users));
    par::for_each_row_chunk_mut(&mut a, 1, |i, mut row| {
        let mut rng = rng::stream(seed, &[domain::DESIGN, i as u64]);
        let r = i / rpb;
        for (l, v) in row.iter_mut().enumerate() {
            let s = scale[[r, l / upb]];
            if s > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                *v = s * z;
            }
        }
    });
    Ok(DesignMatrix { a, base: spec.clone() })
}

/// One channel use of the whole system.
#[derive(Clone, Debug)]
pub struct TransmissionInstance {
    /// `L × k` message bits.
    pub u: Array2<u8>,
    /// `L × d` BPSK codewords.
    pub x: Array2<f64>,
    /// `ñ × d` noise.
    pub noise: Array2<f64>,
    /// `ñ × d` channel output `A·X + noise`.
    pub y: Array2<f64>,
    pub params: SystemParams,
}

/// Draws messages and noise and forms `Y = A·X + ε`.
pub fn simulate(
    params: &SystemParams,
    code: &LinearCode,
    design: &DesignMatrix,
    seed: u64,
) -> Result<TransmissionInstance> {
    if design.n_tilde() != params.n_tilde || design.users() != params.users {
        return Err(Error::Dimension(format!(
            "design is {}×{}, parameters ask for ñ={} and L={}",
            design.n_tilde(),
            design.users(),
            params.n_tilde,
            params.users
        )));
    }
    if code.d() != params.d || code.k() != params.k {
        return Err(Error::Dimension("code does not match the system parameters".into()));
    }
    let (l, d, k) = (params.users, code.d(), code.k());
    let rows = par::map_indexed(l, |user| -> Result<(Vec<u8>, Vec<f64>)> {
        let mut rng = rng::stream(seed, &[domain::MESSAGE, user as u64]);
        let u: Vec<u8> = (0..k).map(|_| rng.random::<bool>() as u8).collect();
        let x = bpsk_map(&code.encode(&u)?, params.energy)?;
        Ok((u, x))
    });
    let mut u = Array2::<u8>::zeros((l, k));
    let mut x = Array2::<f64>::zeros((l, d));
    for (i, row) in rows.into_iter().enumerate() {
        let (ui, xi) = row?;
        u.row_mut(i).assign(&ndarray::ArrayView1::from(&ui));
        x.row_mut(i).assign(&ndarray::ArrayView1::from(&xi));
    }
    let sigma = params.sigma2.sqrt();
    let mut noise = Array2::<f64>::zeros((params.n_tilde, d));
    if sigma > 0.0 {
        par::for_each_row_chunk_mut(&mut noise, 1, |i, mut row| {
            let mut rng = rng::stream(seed, &[domain::NOISE, i as u64]);
            for v in row.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v = sigma * z;
            }
        });
    }
    let mut y = par::matmul(design.a.view(), x.view());
    if sigma > 0.0 {
        y += &noise;
    }
    Ok(TransmissionInstance { u, x, noise, y, params: *params })
}

/// `σ̂² = ‖Y‖²_F/n − d·μ·E`, with `n` the number of entries of `Y`.
///
/// Can be negative at finite `n`; it is returned unclamped.
pub fn estimate_noise_variance(y: ArrayView2<'_, f64>, mu: f64, d: usize, energy: f64) -> f64 {
    let n = y.len() as f64;
    y.iter().map(|v| v * v).sum::<f64>() / n - d as f64 * mu * energy
}

/// Variance handed to decoders when working from the estimate.
pub fn decoder_noise_variance(estimate: f64) -> f64 {
    estimate.max(1e-9)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::hamming74;

    #[test]
    fn energy_examples() {
        assert!((energy_from_ebn0(0.0, 4, 4, 0.5).unwrap() - 1.0).abs() < 1e-15);
        let e = energy_from_ebn0(6.0, 360, 720, 0.5).unwrap();
        assert!((e - 10f64.powf(0.6) / 2.0).abs() < 1e-12);
        assert!((ebn0_db_from_energy(e, 360, 720, 0.5) - 6.0).abs() < 1e-12);
        assert!(energy_from_ebn0(1.0, 0, 4, 1.0).is_err());
        assert!(energy_from_ebn0(1.0, 4, 4, 0.0).is_err());
    }

    #[test]
    fn base_matrix_shape() {
        let b = BaseMatrix::omega_lambda(3, 7).unwrap();
        assert_eq!((b.rows(), b.cols()), (9, 7));
        for c in 0..7 {
            assert!((b.w().column(c).sum() - 1.0).abs() < 1e-15);
        }
        assert!(BaseMatrix::omega_lambda(3, 4).is_err());
        assert!(BaseMatrix::omega_lambda(0, 4).is_err());
        assert_eq!(BaseMatrix::omega_lambda(1, 1).unwrap(), BaseMatrix::iid());
    }

    #[test]
    fn coupled_zero_blocks_are_exactly_zero() {
        let base = BaseMatrix::omega_lambda(2, 3).unwrap();
        let a = sample_design(&base, 40, 30, 3).unwrap();
        for i in 0..40 {
            for l in 0..30 {
                if base.w()[[a.row_block(i), a.col_block(l)]] == 0.0 {
                    assert_eq!(a.a[[i, l]], 0.0);
                } else {
                    assert_ne!(a.a[[i, l]], 0.0);
                }
            }
        }
        assert!(sample_design(&base, 41, 30, 3).is_err());
    }

    #[test]
    fn noiseless_channel_is_exact() {
        let code = hamming74();
        let p = SystemParams::new(20, 10, &code, 0.0, 2.0).unwrap();
        let a = sample_design(&BaseMatrix::iid(), 10, 20, 1).unwrap();
        let t = simulate(&p, &code, &a, 2).unwrap();
        assert_eq!(t.y, par::matmul(a.a.view(), t.x.view()));
        for row in t.x.rows() {
            let bits: Vec<u8> = row.iter().map(|&v| u8::from(v < 0.0)).collect();
            assert!(code.is_codeword(&bits));
        }
    }
}
