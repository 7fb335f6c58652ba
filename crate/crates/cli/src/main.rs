use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rand::Rng;
use rand_distr::StandardNormal;

use ampmac::amp::{run_amp, run_sc_amp, AmpIteration};
use ampmac::codes::code_by_id;
use ampmac::denoisers::{
    bp_denoise, bp_jacobian_diag, bp_jacobian_exact, bp_jacobian_full, Denoiser, HardDecisionKind,
};
use ampmac::design::{energy_from_ebn0, sample_design, simulate, DensityParams, DesignSpec, SystemParams};
use ampmac::harness::{self, realize_dimensions, write_rows, Mode, SweepSpec};
use ampmac::rng::{self, domain};
use ampmac::state_evolution::{iid_rows, sc_rows, sc_se_run, se_run_iid, write_trajectory_csv, SeContext};
use ampmac::Error;

#[derive(Parser, Debug)]
#[command(
    name = "ampmac",
    version,
    about = "Coded many-user Gaussian multiple access: AMP decoding and state evolution"
)]
struct Cli {
    /// Log filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One finite-size AMP decode; prints UER and BER.
    Simulate {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        seed: Option<u64>,
        /// Print one line per iteration.
        #[arg(long)]
        trace: bool,
    },
    /// State-evolution trajectory as CSV.
    Se {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Spectral efficiency vs Eb/N0 sweep as CSV.
    Sweep {
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Girth of a code's Tanner graph.
    Girth {
        #[arg(long)]
        code: String,
        /// Also print length, dimension and graph size.
        #[arg(short, long)]
        verbose: bool,
    },
    /// Compare BP denoiser Jacobians with central finite differences.
    ValidateJacobian {
        #[arg(long)]
        code: String,
        /// Largest number of BP rounds to check.
        #[arg(long, default_value_t = 3)]
        max_rounds: usize,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long = "ebn0", default_value_t = 4.0)]
        ebn0_db: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma2: f64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

/// Flags mirroring the JSON configuration; any flag given overrides the file.
#[derive(Args, Debug, Default)]
struct SpecArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    code: Option<String>,
    /// iid or coupled.
    #[arg(long)]
    design: Option<String>,
    #[arg(long)]
    omega: Option<usize>,
    #[arg(long)]
    lambda: Option<usize>,
    #[arg(short = 'L', long = "users")]
    users: Option<usize>,
    #[arg(long = "ebn0", value_delimiter = ',', allow_negative_numbers = true)]
    ebn0_db: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    denoiser: Option<String>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    bp_rounds: Option<usize>,
    /// se, simulate or both.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    target_ber: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    mu_lo: Option<f64>,
    #[arg(long)]
    mu_hi: Option<f64>,
    #[arg(long)]
    bisection_steps: Option<usize>,
    #[arg(long)]
    post_bp_rounds: Option<usize>,
    #[arg(long)]
    hard_decision: Option<String>,
    #[arg(long)]
    mc: Option<usize>,
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long)]
    se_tol: Option<f64>,
    #[arg(long)]
    amp_tol: Option<f64>,
    #[arg(long)]
    timing: bool,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(Error::Config(_)) | Some(Error::Json(_)) => Failure::Usage(e),
            _ => Failure::Runtime(e),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

type CmdResult = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(anyhow!(msg.into()))
}

impl SpecArgs {
    /// Any failure here is a usage error.
    fn resolve(&self) -> Result<SweepSpec, Failure> {
        self.merge().map_err(|f| match f {
            Failure::Runtime(e) => Failure::Usage(e),
            u => u,
        })
    }

    fn merge(&self) -> Result<SweepSpec, Failure> {
        let mut spec = match &self.config {
            Some(path) => SweepSpec::load(path)?,
            None => {
                let code = self.code.clone().ok_or_else(|| usage("--code is required without --config"))?;
                SweepSpec::new(code)
            }
        };
        if let Some(v) = &self.code {
            spec.code = v.clone();
        }
        if self.design.is_some() || self.omega.is_some() || self.lambda.is_some() {
            let (omega0, lambda0) = match spec.design {
                DesignSpec::Coupled { omega, lambda } => (omega, lambda),
                DesignSpec::Iid => (1, 1),
            };
            let kind = match self.design.as_deref() {
                Some(k) => k.to_ascii_lowercase(),
                None if matches!(spec.design, DesignSpec::Iid) && self.omega.is_none() && self.lambda.is_none() => {
                    "iid".into()
                }
                None => "coupled".into(),
            };
            spec.design = match kind.as_str() {
                "iid" => DesignSpec::Iid,
                "coupled" => {
                    DesignSpec::Coupled { omega: self.omega.unwrap_or(omega0), lambda: self.lambda.unwrap_or(lambda0) }
                }
                other => return Err(usage(format!("unknown design {other:?} (expected iid or coupled)"))),
            };
        }
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    spec.$field = v.clone();
                }
            )*};
        }
        set!(
            users,
            ebn0_db,
            seeds,
            denoiser,
            bp_rounds,
            target_ber,
            post_bp_rounds,
            hard_decision,
            sigma2,
            se_tol,
            amp_tol
        );
        if self.max_iter.is_some() {
            spec.max_iter = self.max_iter;
        }
        if self.mu.is_some() {
            spec.mu = self.mu;
        }
        if self.mc.is_some() {
            spec.mc = self.mc;
        }
        if let Some(n) = self.bisection_steps {
            spec.bisection_steps = n;
        }
        if self.mu_lo.is_some() || self.mu_hi.is_some() {
            let code = code_by_id(&spec.code)?;
            let default = spec.search(&code);
            spec.mu_bounds = Some([self.mu_lo.unwrap_or(default.lo), self.mu_hi.unwrap_or(default.hi)]);
        }
        if let Some(m) = &self.mode {
            spec.mode = serde_json::from_value(serde_json::Value::String(m.to_ascii_lowercase()))
                .map_err(|_| usage(format!("unknown mode {m:?} (expected se, simulate or both)")))?;
        }
        if self.timing {
            spec.timing = true;
        }
        if self.output.is_some() {
            spec.output = self.output.clone();
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn single_point(spec: &SweepSpec, seed: Option<u64>) -> Result<(f64, u64, f64), Failure> {
    let ebn0 = match spec.ebn0_db.as_slice() {
        [v] => *v,
        [] => return Err(usage("--ebn0 is required")),
        _ => return Err(usage("give exactly one Eb/N0 value")),
    };
    let seed = seed.unwrap_or(spec.seeds[0]);
    let mu = spec.mu.ok_or_else(|| usage("--mu is required"))?;
    Ok((ebn0, seed, mu))
}

fn cmd_simulate(args: &SpecArgs, seed: Option<u64>, trace: bool) -> CmdResult {
    if seed.is_none() && std::env::var_os("CI").is_some() {
        return Err(usage("--seed is mandatory for simulate when CI is set"));
    }
    let spec = args.resolve()?;
    let (ebn0, seed, mu) = single_point(&spec, seed)?;
    let code = code_by_id(&spec.code)?;
    let base = spec.design.base_matrix()?;
    let (users, n_tilde) = realize_dimensions(spec.users, mu, code.d(), &base)?;
    let energy = energy_from_ebn0(ebn0, code.k(), code.d(), spec.sigma2)?;
    let params = SystemParams::new(users, n_tilde, &code, spec.sigma2, energy)?;
    let hard = HardDecisionKind::parse(&spec.hard_decision)?;
    let den = Denoiser::new(spec.denoiser_kind()?, hard, &code, energy)?.with_post_bp_rounds(spec.post_bp_rounds);
    let design = sample_design(&base, n_tilde, users, seed)?;
    let inst = simulate(&params, &code, &design, seed)?;
    let cfg = spec.amp_config()?;
    let (history, converged): (Vec<AmpIteration>, bool) = if base.is_iid() {
        let run = run_amp(inst.y.view(), design.a.view(), &den, &cfg, Some(inst.x.view()))?;
        (run.history, run.converged)
    } else {
        let run = run_sc_amp(inst.y.view(), &design, &den, &cfg, Some(inst.x.view()))?;
        (run.history, run.converged)
    };
    let mut out = std::io::stdout().lock();
    let io = |e: std::io::Error| Failure::Runtime(e.into());
    if trace {
        for h in &history {
            writeln!(
                out,
                "t={} sigma={:.6e} change={:.3e} ber={:.6e}",
                h.t,
                h.sigma_diag_mean,
                h.rel_change,
                h.ber.unwrap_or(f64::NAN)
            )
            .map_err(io)?;
        }
    }
    let last = history.last().ok_or_else(|| Failure::Runtime(anyhow!("AMP ran zero iterations")))?;
    writeln!(
        out,
        "code={} L={} n_tilde={} mu={:.6} S={:.6} ebn0_db={} seed={} iterations={} converged={}",
        spec.code,
        users,
        n_tilde,
        params.mu(),
        params.spectral_efficiency(),
        ebn0,
        seed,
        history.len(),
        converged
    )
    .map_err(io)?;
    writeln!(out, "UER={:.6e} BER={:.6e}", last.uer.unwrap_or(f64::NAN), last.ber.unwrap_or(f64::NAN)).map_err(io)?;
    Ok(())
}

fn cmd_se(args: &SpecArgs, seed: Option<u64>) -> CmdResult {
    let spec = args.resolve()?;
    let (ebn0, seed, mu) = single_point(&spec, seed)?;
    let code = code_by_id(&spec.code)?;
    let base = spec.design.base_matrix()?;
    let hard = HardDecisionKind::parse(&spec.hard_decision)?;
    let params = DensityParams::from_ebn0(&code, mu, ebn0, spec.sigma2)?;
    let den =
        Denoiser::new(spec.denoiser_kind()?, hard, &code, params.energy)?.with_post_bp_rounds(spec.post_bp_rounds);
    let ctx = SeContext::new(&code, &den);
    let cfg = spec.se_config();
    let (rows, mc) = if base.is_iid() {
        let traj = se_run_iid(&params, &ctx, &cfg, seed)?;
        (iid_rows(&traj), traj.last.mc)
    } else {
        let traj = sc_se_run(&params, &base, &ctx, &cfg, seed)?;
        (sc_rows(&traj), traj.last.mc)
    };
    match &spec.output {
        Some(path) => ampmac::state_evolution::save_trajectory_csv(path, &rows, mc, seed)?,
        None => write_trajectory_csv(std::io::stdout().lock(), &rows, mc, seed)?,
    }
    Ok(())
}

fn cmd_sweep(args: &SpecArgs) -> CmdResult {
    let spec = args.resolve()?;
    if spec.mode == Mode::Simulate && spec.mu.is_none() {
        return Err(usage("simulate mode needs --mu"));
    }
    let rows = harness::run_sweep(&spec)?;
    if spec.output.is_none() {
        write_rows(std::io::stdout().lock(), &rows)?;
    }
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        log::warn!("{failed} of {} points failed; see the error column", rows.len());
    }
    Ok(())
}

fn cmd_girth(code: &str, verbose: bool) -> CmdResult {
    let code = code_by_id(code)?;
    let g = code.girth().map_or_else(|| "inf".to_string(), |g| g.to_string());
    if verbose {
        let graph = code.graph();
        println!(
            "{} d={} k={} checks={} edges={} girth={}",
            code.name(),
            code.d(),
            code.k(),
            graph.num_checks(),
            graph.num_edges(),
            g
        );
    } else {
        println!("{g}");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_validate_jacobian(
    code: &str,
    max_rounds: usize,
    samples: usize,
    ebn0_db: f64,
    sigma2: f64,
    step: f64,
    seed: u64,
) -> CmdResult {
    let code = code_by_id(code)?;
    let graph = code.graph();
    let d = code.d();
    let energy = energy_from_ebn0(ebn0_db, code.k(), d, sigma2)?;
    let girth = code.girth();
    println!(
        "code={} d={} girth={} E={:.6} samples={samples}",
        code.name(),
        d,
        girth.map_or("inf".into(), |g| g.to_string()),
        energy
    );
    println!("rounds  diag_formula  full_formula  exact");
    let mut rng = rng::stream(seed, &[domain::TEST_INPUT]);
    let inputs: Vec<(Vec<f64>, Vec<f64>)> = (0..samples)
        .map(|_| {
            let diag: Vec<f64> = (0..d).map(|_| sigma2 * (0.5 + rng.sample::<f64, _>(StandardNormal).abs())).collect();
            let s: Vec<f64> =
                diag.iter().map(|v| energy.sqrt() + v.sqrt() * rng.sample::<f64, _>(StandardNormal)).collect();
            (s, diag)
        })
        .collect();
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-12);
    for rounds in 1..=max_rounds {
        let (mut e_diag, mut e_full, mut e_exact) = (0.0f64, Some(0.0f64), 0.0f64);
        for (s, diag) in &inputs {
            let fd = finite_difference(s, |x| bp_denoise(x, diag, graph, rounds, energy).map(|r| r.0), step)?;
            let (eta, _) = bp_denoise(s, diag, graph, rounds, energy)?;
            let jd = bp_jacobian_diag(&eta, diag, energy);
            for j in 0..d {
                e_diag = e_diag.max(rel(jd[j], fd[j][j]));
            }
            let exact = bp_jacobian_exact(s, diag, graph, rounds, energy)?;
            let full = bp_jacobian_full(s, diag, graph, rounds, energy).ok();
            for j in 0..d {
                for j1 in 0..d {
                    let scale = fd[j][j1].abs().max(fd[j][j].abs() * 1e-3);
                    let err = |v: f64| (v - fd[j][j1]).abs() / scale.max(1e-12);
                    e_exact = e_exact.max(err(exact[(j, j1)]));
                    e_full = match (e_full, &full) {
                        (Some(m), Some(f)) => Some(m.max(err(f.d[(j, j1)]))),
                        _ => None,
                    };
                }
            }
        }
        println!(
            "{rounds:>6}  {e_diag:>12.3e}  {:>12}  {e_exact:>9.3e}",
            e_full.map_or("n/a".to_string(), |e| format!("{e:.3e}"))
        );
    }
    Ok(())
}

/// `fd[j][j1] = ∂f_j/∂x_{j1}` by central differences.
fn finite_difference<F>(x: &[f64], f: F, h: f64) -> Result<Vec<Vec<f64>>, Failure>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, Error>,
{
    let d = x.len();
    let mut out = vec![vec![0.0; d]; d];
    let mut xp = x.to_vec();
    for j1 in 0..d {
        let step = h * x[j1].abs().max(1.0);
        xp[j1] = x[j1] + step;
        let plus = f(&xp)?;
        xp[j1] = x[j1] - step;
        let minus = f(&xp)?;
        xp[j1] = x[j1];
        for j in 0..d {
            out[j][j1] = (plus[j] - minus[j]) / (2.0 * step);
        }
    }
    Ok(out)
}

fn configure_threads() -> anyhow::Result<()> {
    let Some(raw) = std::env::var_os("AMPMAC_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .to_str()
        .and_then(|s| s.trim().parse().ok())
        .filter(|&n| n > 0)
        .context("AMPMAC_THREADS must be a positive integer")?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    configure_threads().map_err(Failure::Usage)?;
    match &cli.cmd {
        Command::Simulate { spec, seed, trace } => cmd_simulate(spec, *seed, *trace),
        Command::Se { spec, seed } => cmd_se(spec, *seed),
        Command::Sweep { spec } => cmd_sweep(spec),
        Command::Girth { code, verbose } => cmd_girth(code, *verbose),
        Command::ValidateJacobian { code, max_rounds, samples, ebn0_db, sigma2, step, seed } => {
            cmd_validate_jacobian(code, *max_rounds, *samples, *ebn0_db, *sigma2, *step, *seed)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
