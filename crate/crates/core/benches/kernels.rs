//! Kernel timings for the compiled backend.
//!
//! `cargo bench -p ampmac` measures the rayon backend on a one-thread pool
//! and on a pool with every available core; `cargo bench -p ampmac
//! --no-default-features` measures the sequential backend.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use ampmac::amp::{amp_step_iid, AmpConfig, AmpState};
use ampmac::codes::{hamming74, ldpc648_r12};
use ampmac::denoisers::{Denoiser, DenoiserKind, HardDecisionKind};
use ampmac::design::{energy_from_ebn0, sample_design, simulate, BaseMatrix, DensityParams, SystemParams};
use ampmac::par;
use ampmac::state_evolution::{se_init_iid, se_step_iid, SeConfig, SeContext};

type Runner = Box<dyn Fn(&mut (dyn FnMut() + Send))>;

fn pools() -> Vec<(String, Runner)> {
    #[cfg(feature = "parallel")]
    {
        let max = std::thread::available_parallelism().map_or(1, |n| n.get());
        let mut sizes = vec![1];
        if max > 1 {
            sizes.push(max);
        }
        sizes
            .into_iter()
            .map(|n| {
                let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
                let run: Runner = Box::new(move |f| pool.install(f));
                (format!("rayon-{n}"), run)
            })
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let run: Runner = Box::new(|f| f());
        vec![(par::backend().to_string(), run)]
    }
}

fn bench_matmul(c: &mut Criterion) {
    let design = sample_design(&BaseMatrix::iid(), 1000, 2000, 1).unwrap();
    let x = sample_design(&BaseMatrix::iid(), 2000, 7, 2).unwrap().a;
    let mut g = c.benchmark_group("matmul_1000x2000x7");
    for (name, run) in pools() {
        g.bench_function(BenchmarkId::from_parameter(&name), |b| {
            b.iter(|| run(&mut || drop(std::hint::black_box(par::matmul(design.a.view(), x.view())))))
        });
    }
    g.finish();
}

fn bench_amp_step(c: &mut Criterion) {
    let code = hamming74();
    let energy = energy_from_ebn0(6.0, 4, 7, 1.0).unwrap();
    let sys = SystemParams::new(2000, 1000, &code, 1.0, energy).unwrap();
    let design = sample_design(&BaseMatrix::iid(), 1000, 2000, 3).unwrap();
    let inst = simulate(&sys, &code, &design, 3).unwrap();
    let cfg = AmpConfig::default();
    let mut g = c.benchmark_group("amp_step_hamming");
    g.sample_size(20);
    for kind in [DenoiserKind::Bayes, DenoiserKind::Marginal] {
        let den = Denoiser::new(kind, HardDecisionKind::Sign, &code, energy).unwrap();
        let state =
            amp_step_iid(&AmpState::init(2000, 1000, 7), inst.y.view(), design.a.view(), &den, &cfg, false).unwrap();
        for (name, run) in pools() {
            g.bench_function(BenchmarkId::new(kind.name(), &name), |b| {
                b.iter(|| {
                    run(&mut || {
                        let next = amp_step_iid(&state, inst.y.view(), design.a.view(), &den, &cfg, false).unwrap();
                        drop(std::hint::black_box(next));
                    })
                })
            });
        }
    }
    g.finish();
}

fn bench_se_pass(c: &mut Criterion) {
    let mut g = c.benchmark_group("se_step");
    g.sample_size(10);
    let cases = [(hamming74(), DenoiserKind::Bayes, 20_000), (ldpc648_r12(), DenoiserKind::Bp { rounds: 2 }, 200)];
    for (code, kind, mc) in cases {
        let params = DensityParams::from_ebn0(&code, 0.3, 6.0, 1.0).unwrap();
        let den = Denoiser::new(kind, HardDecisionKind::Sign, &code, params.energy).unwrap();
        let ctx = SeContext::new(&code, &den);
        let cfg = SeConfig { mc: Some(mc), ..SeConfig::default() };
        let state = se_init_iid(&params, &ctx, &cfg).unwrap();
        for (name, run) in pools() {
            g.bench_function(BenchmarkId::new(format!("{}-{}", code.name(), kind.name()), &name), |b| {
                b.iter(|| run(&mut || drop(std::hint::black_box(se_step_iid(&state, &params, &ctx, &cfg, 1).unwrap()))))
            });
        }
    }
    g.finish();
}

criterion_group!(benches, bench_matmul, bench_amp_step, bench_se_pass);
criterion_main!(benches);
