use ampmac::codes::*;
use ampmac::cov::Cov;
use ampmac::denoisers::*;
use ampmac::design::*;
use ampmac::state_evolution::*;
use nalgebra::{DMatrix, SymmetricEigen};
use statrs::distribution::{ContinuousCDF, Normal};

/// Gauss–Hermite nodes and weights (weight `e^{−x²}`) by Golub–Welsch.
fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    let j = DMatrix::from_fn(n, n, |a, b| if a.abs_diff(b) == 1 { (a.max(b) as f64 / 2.0).sqrt() } else { 0.0 });
    let eig = SymmetricEigen::new(j);
    let sqrt_pi = std::f64::consts::PI.sqrt();
    (0..n).map(|i| (eig.eigenvalues[i], sqrt_pi * eig.eigenvectors[(0, i)].powi(2))).collect()
}

/// `E_z f(z)` for `z ~ N(0, 1)`.
fn gaussian_mean<F: Fn(f64) -> f64>(rule: &[(f64, f64)], f: F) -> f64 {
    rule.iter().map(|&(x, w)| w * f(std::f64::consts::SQRT_2 * x)).sum::<f64>() / std::f64::consts::PI.sqrt()
}

/// Fixed point of `Σ ↦ σ² + μ·mmse(Σ)` for BPSK, from `Σ⁰ = σ² + μE`.
fn scalar_fixed_point(sigma2: f64, mu: f64, energy: f64) -> f64 {
    let rule = gauss_hermite(120);
    let a = energy.sqrt();
    let mut s = sigma2 + mu * energy;
    for _ in 0..10_000 {
        let mse = gaussian_mean(&rule, |z| {
            let y = a + s.sqrt() * z;
            (a * (a * y / s).tanh() - a).powi(2)
        });
        let next = sigma2 + mu * mse;
        if (next - s).abs() < 1e-15 * s {
            return next;
        }
        s = next;
    }
    s
}

#[test]
fn gauss_hermite_rule_integrates_moments() {
    let rule = gauss_hermite(40);
    assert!((gaussian_mean(&rule, |_| 1.0) - 1.0).abs() < 1e-12);
    assert!((gaussian_mean(&rule, |z| z * z) - 1.0).abs() < 1e-12);
    assert!((gaussian_mean(&rule, |z| z.powi(4)) - 3.0).abs() < 1e-11);
}

#[test]
fn uncoded_fixed_point_matches_quadrature() {
    let code = uncoded(1);
    for (db, mu) in [(6.0, 0.5), (8.0, 1.0), (3.0, 0.3)] {
        let params = DensityParams::from_ebn0(&code, mu, db, 1.0).unwrap();
        let want = scalar_fixed_point(1.0, mu, params.energy);
        for kind in [DenoiserKind::Bayes, DenoiserKind::Marginal] {
            let den = Denoiser::new(kind, HardDecisionKind::Sign, &code, params.energy).unwrap();
            let ctx = SeContext::new(&code, &den);
            let cfg = SeConfig { mc: Some(200_000), ..SeConfig::default() };
            let traj = se_run_iid(&params, &ctx, &cfg, 1).unwrap();
            assert!(traj.converged);
            let got = traj.last.sigma.get(0, 0);
            assert!((got - want).abs() < 2e-3 * want, "{db} dB μ={mu} {kind}: {got} vs {want}");
        }
    }
}

#[test]
fn uncoded_ber_is_gaussian_tail() {
    let code = uncoded(1);
    let den = Denoiser::new(DenoiserKind::Marginal, HardDecisionKind::Sign, &code, 2.0).unwrap();
    let ctx = SeContext::new(&code, &den);
    let normal = Normal::new(0.0, 1.0).unwrap();
    for sigma in [0.5, 1.0, 2.0] {
        let pred = predict_error_iid(&Cov::Diagonal(vec![sigma]), &ctx, 200_000, 3).unwrap();
        let q = 1.0 - normal.cdf((2.0f64 / sigma).sqrt());
        assert!((pred.ber - q).abs() < 3.0 * pred.ber_se, "{} vs {q} (se {})", pred.ber, pred.ber_se);
        assert_eq!(pred.ber, pred.uer);
    }
}

#[test]
fn single_block_coupled_se_equals_iid_se() {
    let code = hamming74();
    let params = DensityParams::from_ebn0(&code, 0.4, 6.0, 1.0).unwrap();
    let den = Denoiser::new(DenoiserKind::Bayes, HardDecisionKind::Sign, &code, params.energy).unwrap();
    let ctx = SeContext::new(&code, &den);
    let cfg = SeConfig { mc: Some(5_000), max_iter: 25, ..SeConfig::default() };
    let iid = se_run_iid(&params, &ctx, &cfg, 2).unwrap();
    let sc = sc_se_run(&params, &BaseMatrix::omega_lambda(1, 1).unwrap(), &ctx, &cfg, 2).unwrap();
    assert_eq!(iid.states.len(), sc.states.len());
    for (a, b) in iid.states.iter().zip(&sc.states) {
        for (x, y) in a.sigma.diag().iter().zip(b.tmat[0].diag()) {
            assert!((x - y).abs() <= 1e-8 * x.abs());
        }
        assert_eq!(a.prediction.unwrap().ber, b.prediction().unwrap().ber);
    }
}

#[test]
fn coupled_initialization_and_boundary_advantage() {
    let code = hamming74();
    let params = DensityParams::from_ebn0(&code, 0.5, 6.0, 1.0).unwrap();
    let base = BaseMatrix::omega_lambda(3, 7).unwrap();
    let den = Denoiser::new(DenoiserKind::Bayes, HardDecisionKind::Sign, &code, params.energy).unwrap();
    let ctx = SeContext::new(&code, &den);
    let cfg = SeConfig { mc: Some(20_000), ..SeConfig::default() };
    let s0 = sc_se_init(&params, &base, &ctx, &cfg).unwrap();
    for psi in &s0.psi {
        assert_eq!(psi.diag(), vec![params.energy; 7]);
    }
    let (_, s1) = sc_se_step(&s0, &params, &base, &ctx, &cfg, 4).unwrap();
    let mean = |c: &Cov| c.diag().iter().sum::<f64>() / 7.0;
    let center = mean(&s1.tmat[3]);
    assert!(mean(&s1.tmat[0]) < center);
    assert!(mean(&s1.tmat[6]) < center);

    let (done, _) = sc_se_step(&s1, &params, &base, &ctx, &cfg, 4).unwrap();
    let preds = done.block_predictions.unwrap();
    for c in 0..3 {
        let (a, b) = (preds[c], preds[6 - c]);
        let se = (a.ber_se.powi(2) + b.ber_se.powi(2)).sqrt();
        assert!((a.ber - b.ber).abs() < 4.0 * se + 1e-12, "block {c}: {} vs {}", a.ber, b.ber);
    }
}

#[test]
fn bayes_trajectory_is_monotone() {
    let code = hamming74();
    for (db, mu) in [(6.0, 0.3), (6.0, 0.5), (8.0, 0.6)] {
        let params = DensityParams::from_ebn0(&code, mu, db, 1.0).unwrap();
        let den = Denoiser::new(DenoiserKind::Bayes, HardDecisionKind::Sign, &code, params.energy).unwrap();
        let ctx = SeContext::new(&code, &den);
        let traj = se_run_iid(&params, &ctx, &SeConfig::default(), 7).unwrap();
        for pair in traj.states.windows(2) {
            for (a, b) in pair[0].sigma.diag().iter().zip(pair[1].sigma.diag()) {
                assert!(b <= a + 1e-12 * a, "{db} dB μ={mu}: {a} -> {b}");
            }
        }
    }
}

#[test]
fn reference_codeword_does_not_matter() {
    let code = hamming74();
    let params = DensityParams::from_ebn0(&code, 0.3, 6.0, 1.0).unwrap();
    let den = Denoiser::new(DenoiserKind::Bayes, HardDecisionKind::Sign, &code, params.energy).unwrap();
    let cfg = SeConfig { mc: Some(50_000), ..SeConfig::default() };
    let base = se_run_iid(&params, &SeContext::new(&code, &den), &cfg, 5).unwrap();
    let word = bpsk_map(&code.encode(&[1, 0, 1, 1]).unwrap(), params.energy).unwrap();
    let other = se_run_iid(&params, &SeContext::new(&code, &den).with_reference(word), &cfg, 5).unwrap();
    let (a, b) = (base.last.sigma.diag(), other.last.sigma.diag());
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 0.02 * x, "{x} vs {y}");
    }
    let (pa, pb) = (base.final_prediction().unwrap(), other.final_prediction().unwrap());
    assert!((pa.ber - pb.ber).abs() < 4.0 * (pa.ber_se.powi(2) + pb.ber_se.powi(2)).sqrt());
}

#[test]
fn repetition_keeps_the_class_structure() {
    let code = repetition(3);
    let params = DensityParams::from_ebn0(&code, 0.3, 6.0, 1.0).unwrap();
    let den = Denoiser::new(DenoiserKind::Bayes, HardDecisionKind::Sign, &code, params.energy).unwrap();
    let ctx = SeContext::new(&code, &den);
    let s0 = se_init_iid(&params, &ctx, &SeConfig::default()).unwrap();
    let expect = 3.0 * 0.3 * params.energy;
    assert!((s0.sigma.get(0, 1) - expect).abs() < 1e-12);
    assert!((s0.sigma.get(0, 0) - (1.0 + expect)).abs() < 1e-12);
}

#[test]
fn fresh_draws_differ_from_common_numbers() {
    let code = hamming74();
    let params = DensityParams::from_ebn0(&code, 0.3, 6.0, 1.0).unwrap();
    let den = Denoiser::new(DenoiserKind::Bayes, HardDecisionKind::Sign, &code, params.energy).unwrap();
    let ctx = SeContext::new(&code, &den);
    let crn = SeConfig { mc: Some(20_000), max_iter: 5, ..SeConfig::default() };
    let fresh = SeConfig { common_random_numbers: false, ..crn };
    let a = se_run_iid(&params, &ctx, &crn, 1).unwrap();
    let b = se_run_iid(&params, &ctx, &fresh, 1).unwrap();
    assert_eq!(a.states[0].sigma, b.states[0].sigma);
    assert_ne!(a.last.sigma, b.last.sigma);
    let again = se_run_iid(&params, &ctx, &fresh, 1).unwrap();
    assert_eq!(b.last.sigma, again.last.sigma);
}

#[test]
fn trajectory_csv_layout() {
    let code = hamming74();
    let params = DensityParams::from_ebn0(&code, 0.3, 6.0, 1.0).unwrap();
    let den = Denoiser::new(DenoiserKind::Bayes, HardDecisionKind::Sign, &code, params.energy).unwrap();
    let ctx = SeContext::new(&code, &den);
    let cfg = SeConfig { mc: Some(2_000), max_iter: 4, ..SeConfig::default() };
    let traj = se_run_iid(&params, &ctx, &cfg, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traj.csv");
    save_trajectory_csv(&path, &iid_rows(&traj), 2_000, 1).unwrap();
    let mut r = csv::Reader::from_path(&path).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(&header[..5], &["t", "block", "diag_mean", "diag_min", "diag_max"]);
    assert_eq!(header[5], "diag_0");
    assert_eq!(header.last().unwrap(), "seed");
    assert_eq!(header.len(), 5 + 7 + 6);
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), traj.states.len());
    assert_eq!(&rows[0][1], "iid");

    let base = BaseMatrix::omega_lambda(2, 3).unwrap();
    let sc = sc_se_run(&params, &base, &ctx, &cfg, 1).unwrap();
    assert_eq!(sc_rows(&sc).len(), sc.states.len() * 3);
}

#[test]
fn default_sample_counts() {
    let den = |code: &LinearCode, kind| Denoiser::new(kind, HardDecisionKind::Sign, code, 1.0).unwrap();
    assert_eq!(default_mc(&den(&hamming74(), DenoiserKind::Bayes)), 10_000);
    assert_eq!(default_mc(&den(&uncoded(400), DenoiserKind::Marginal)), 20_000);
    assert_eq!(default_mc(&den(&ldpc648_r12(), DenoiserKind::Bp { rounds: 2 })), 2_000);
}
