//! The `symnet` command line: loads a network configuration, runs the
//! requested pipeline stage and writes its artifacts.
//!
//! Exit status is 0 on success, 1 when a certificate fails, synthesis is
//! infeasible or a closed-loop invariant breaks, and 2 on usage,
//! configuration or input errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use rayon::prelude::*;

use crate::abstraction::{build_symbolic_model, persist, SymbolicModel};
use crate::certificates::{
    check_certificate, default_theta_grid, derive_augmented_storage, validate_storage_mc, AugStorageFn,
    StorageCertificate,
};
use crate::codec::hex;
use crate::composition::{
    check_composition_lmi, check_internal_input_match, compose_alt_sim, error_bound, internal_input_overrides,
    AltSimFn, NetworkSpec, RelationBound,
};
use crate::config::{InputMode, NetworkConfig, ShrinkRule};
use crate::error::{Error, Result};
use crate::matcert::{Matrix, SymMatrix};
use crate::sim::{check_mismatch_bound, export_csv, paired_runs, simulate_closed_loop, summarize, MismatchCheck, Policy};
use crate::synthesis::{check_assume_guarantee, restrict_internal_inputs, safety_fixed_point, save_controller, Controller, SafetySpec};
use crate::system::{BoxUnion, Grid, Hyperbox};

/// Upper bound on the number of internal-input points per subsystem.
const INPUT_POINT_LIMIT: usize = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Check the per-mode storage certificates.
    CheckCert,
    /// Build and persist the symbolic models.
    Abstract,
    /// Check the composition inequality and print the mismatch bound.
    ComposeCheck,
    /// Synthesize safety controllers on the symbolic models.
    Synthesize,
    /// Run the closed loop and the paired mismatch check.
    Simulate,
    /// Run every stage and write a combined report.
    Report,
}

#[derive(Clone, Debug, Parser)]
#[command(name = "symnet", version, about = "Compositional symbolic models and safety controllers for networks of switched systems")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// Network configuration (TOML).
    pub config: PathBuf,
    /// Output directory (default: `<config stem>.out` next to the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for the data-parallel stages.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Relation parameter ψ in (0, 1).
    #[arg(long)]
    pub psi: Option<f64>,
    /// Mode choice among allowed modes in simulation.
    #[arg(long)]
    pub policy: Option<Policy>,
    /// Seed for Monte-Carlo checks and the random policy.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Absolute eigenvalue tolerance for the matrix inequalities.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Override the number of subsystems.
    #[arg(long)]
    pub count: Option<usize>,
}

/// Result of one command: the text report and whether every check passed.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub report: String,
    pub passed: bool,
    pub out_dir: PathBuf,
}

/// Exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Certificate(_)
        | Error::UnsupportedCertificate(_)
        | Error::DwellViolation { .. }
        | Error::SynthesisInfeasible { .. }
        | Error::RefinementDomain { .. }
        | Error::Invariant(_) => 1,
        Error::Input(_)
        | Error::Parameter(_)
        | Error::Network(_)
        | Error::Format(_)
        | Error::Version { .. }
        | Error::Config(_)
        | Error::Io(_) => 2,
    }
}

/// Runs the command and prints its report; returns the exit status.
pub fn run(cli: &Cli) -> i32 {
    match execute(cli) {
        Ok(o) => {
            print!("{}", o.report);
            if o.passed {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("symnet: {e}");
            exit_code(&e)
        }
    }
}

/// Parses `args` (including the program name) and runs them.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) => {
            let _ = e.print();
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<Outcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Parameter(format!("cannot start worker pool: {e}")))?;
    pool.install(|| execute_inner(cli))
}

fn execute_inner(cli: &Cli) -> Result<Outcome> {
    let mut cfg = NetworkConfig::load(&cli.config)?;
    if let Some(n) = cli.count {
        if n == 0 {
            return Err(Error::Config("--count must be >= 1".into()));
        }
        cfg.network.count = Some(n);
    }
    let out_dir = match &cli.out {
        Some(d) => d.clone(),
        None => default_out_dir(&cli.config),
    };
    std::fs::create_dir_all(&out_dir)?;
    let mut ctx = Context::new(cfg, cli, out_dir.clone())?;
    let mut report = String::new();
    let staged = match cli.command {
        Command::CheckCert => ctx.check_cert(&mut report),
        Command::Abstract => ctx.abstraction(&mut report),
        Command::ComposeCheck => ctx.compose_check(&mut report),
        Command::Synthesize => ctx.synthesize_stage(&mut report),
        Command::Simulate => ctx.simulate(&mut report),
        Command::Report => ctx.full_report(&mut report),
    };
    let passed = match staged {
        Ok(b) => b,
        Err(e) if exit_code(&e) == 1 => {
            let _ = writeln!(report, "result = FAIL ({e})");
            false
        }
        Err(e) => return Err(e),
    };
    let name = cli
        .command
        .to_possible_value()
        .map_or_else(|| "report".to_string(), |v| v.get_name().to_string());
    std::fs::write(out_dir.join(format!("{name}.txt")), &report)?;
    Ok(Outcome { report, passed, out_dir })
}

/// Index of the first subsystem equal to each one, used to build shared
/// artifacts once.
fn first_equal<T: PartialEq>(items: &[T]) -> Vec<usize> {
    (0..items.len())
        .map(|i| (0..i).find(|&j| items[j] == items[i]).unwrap_or(i))
        .collect()
}

fn fmt_box(b: &BoxUnion) -> String {
    let (lo, hi) = b.hull();
    let parts: Vec<String> = lo.iter().zip(&hi).map(|(a, b)| format!("[{a}, {b}]")).collect();
    parts.join(" x ")
}

struct Composed {
    augs: Vec<AugStorageFn>,
    alt: AltSimFn,
    bound: RelationBound,
    lmi_ok: bool,
    lmi_margin: f64,
}

struct Context {
    cfg: NetworkConfig,
    net: NetworkSpec,
    tol: Option<f64>,
    psi: f64,
    seed: Option<u64>,
    policy: Option<Policy>,
    out: PathBuf,
    certs: Option<Vec<(StorageCertificate, bool)>>,
    composed: Option<Composed>,
    models: Option<Vec<SymbolicModel>>,
}

impl Context {
    fn new(cfg: NetworkConfig, cli: &Cli, out: PathBuf) -> Result<Self> {
        let net = cfg.build_network()?;
        let psi = cli
            .psi
            .or_else(|| cfg.spec.as_ref().map(|s| s.psi))
            .unwrap_or(0.99);
        if !(psi > 0.0 && psi < 1.0) {
            return Err(Error::Config(format!("psi must lie in (0, 1), got {psi}")));
        }
        if let Some(t) = cli.tol {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("--tol must be a nonnegative number, got {t}")));
            }
        }
        Ok(Self {
            cfg,
            net,
            tol: cli.tol,
            psi,
            seed: cli.seed,
            policy: cli.policy,
            out,
            certs: None,
            composed: None,
            models: None,
        })
    }

    fn has_certificates(&self) -> bool {
        self.cfg.subsystems.iter().all(|s| s.certificate.is_some())
    }

    fn certificates(&mut self) -> Result<&[(StorageCertificate, bool)]> {
        if self.certs.is_none() {
            self.certs = Some(self.cfg.build_certificates(&self.net.subsystems)?);
        }
        Ok(self.certs.as_deref().unwrap_or_default())
    }

    fn check_cert(&mut self, report: &mut String) -> Result<bool> {
        let theta = default_theta_grid();
        let tol = self.tol;
        let subs = self.net.subsystems.clone();
        let certs = self.certificates()?.to_vec();
        let keys: Vec<_> = subs.iter().zip(&certs).map(|(s, c)| (s, &c.0)).collect();
        let same = first_equal(&keys);
        let _ = writeln!(report, "[check-cert]");
        let mut ok = true;
        for i in 0..subs.len() {
            if same[i] != i {
                let _ = writeln!(report, "subsystem {}: same as subsystem {}", i + 1, same[i] + 1);
                continue;
            }
            let chk = check_certificate(&subs[i], &certs[i].0, &theta, tol)?;
            let _ = writeln!(report, "subsystem {}:", i + 1);
            for m in &chk.modes {
                let theta = m.theta.map_or_else(|| "none".to_string(), |t| format!("{t:.2}"));
                let alpha = m.alpha_margin.map_or_else(|| "n/a".to_string(), |a| format!("{a:.6e}"));
                let _ = writeln!(
                    report,
                    "  mode {}: theta = {theta}, lmi margin = {:.6e}, alpha margin = {alpha}",
                    m.mode, m.margin
                );
            }
            let storage = if certs[i].1 { "common" } else { "multiple" };
            let _ = writeln!(report, "  storage = {storage}");
            let _ = writeln!(report, "  mu = {:.6}", chk.mu);
            let _ = writeln!(report, "  kappa_max = {}", chk.kappa_max);
            let _ = writeln!(report, "  epsilon = {}", chk.epsilon_exp);
            let _ = writeln!(
                report,
                "  dwell bound = {}, configured k_d = {}",
                chk.dwell_bound, chk.dwell_time
            );
            for (q, m) in &chk.qtilde_margins {
                let _ = writeln!(report, "  qtilde margin (mode {q}) = {m:.6e}");
            }
            let pass = chk.passed();
            let _ = writeln!(report, "  result = {}", if pass { "PASS" } else { "FAIL" });
            ok &= pass;
        }
        Ok(ok)
    }

    fn composed(&mut self) -> Result<&Composed> {
        if self.composed.is_none() {
            let eta = self.cfg.abstraction.eta;
            let k_d = self.cfg.abstraction.k_d;
            let certs = self.certificates()?.to_vec();
            let augs = certs
                .iter()
                .zip(&self.net.subsystems)
                .map(|((c, common), s)| derive_augmented_storage(c, eta, k_d, &s.lipschitz, *common))
                .collect::<Result<Vec<_>>>()?;
            let r_list: Vec<SymMatrix> = augs.iter().map(|a| a.r.clone()).collect();
            let (lmi_ok, lmi_margin) = check_composition_lmi(&self.net, &r_list, self.tol.unwrap_or(1e-8))?;
            let alt = compose_alt_sim(&self.net, &augs)?;
            let bound = error_bound(&alt, self.psi)?;
            self.composed = Some(Composed {
                augs,
                alt,
                bound,
                lmi_ok,
                lmi_margin,
            });
        }
        Ok(self.composed.as_ref().expect("composed above"))
    }

    fn compose_check(&mut self, report: &mut String) -> Result<bool> {
        let c = self.composed()?;
        let _ = writeln!(report, "[compose-check]");
        let _ = writeln!(report, "composition lmi max eigenvalue = {:.6e}", c.lmi_margin);
        let _ = writeln!(report, "alpha_tilde = {} s^{}", c.alt.alpha_tilde.coeff, c.alt.alpha_tilde.exp);
        let _ = writeln!(report, "sigma_tilde = {}", c.alt.sigma_tilde);
        let _ = writeln!(report, "eps_tilde = {:.6e}", c.alt.eps_tilde);
        let _ = writeln!(report, "psi = {}", c.bound.psi);
        let _ = writeln!(report, "phi = {:.6e}", c.bound.phi);
        let _ = writeln!(report, "rho = {}", c.bound.rho);
        let _ = writeln!(report, "eps_hat = {:.6e}", c.bound.eps_hat);
        let _ = writeln!(report, "result = {}", if c.lmi_ok { "PASS" } else { "FAIL" });
        Ok(c.lmi_ok)
    }

    fn build_models(&mut self) -> Result<&[SymbolicModel]> {
        if self.models.is_none() {
            let a = &self.cfg.abstraction;
            let subs = &self.net.subsystems;
            let overrides: Vec<Option<Vec<Vec<f64>>>> = match a.inputs {
                InputMode::Grid => vec![None; subs.len()],
                InputMode::Coupled => {
                    let grids = subs
                        .iter()
                        .map(|s| Grid::new(&s.state_set, a.eta))
                        .collect::<Result<Vec<_>>>()?;
                    internal_input_overrides(&self.net, &grids, INPUT_POINT_LIMIT)?
                        .into_iter()
                        .map(Some)
                        .collect()
                }
            };
            let keys: Vec<_> = subs.iter().zip(&overrides).collect();
            let same = first_equal(&keys);
            let unique: Vec<usize> = (0..subs.len()).filter(|&i| same[i] == i).collect();
            let built = unique
                .par_iter()
                .map(|&i| build_symbolic_model(&subs[i], a.eta, a.varpi, overrides[i].clone()))
                .collect::<Result<Vec<_>>>()?;
            let models = (0..subs.len())
                .map(|i| {
                    let k = unique.iter().position(|&u| u == same[i]).expect("unique index");
                    built[k].clone()
                })
                .collect();
            self.models = Some(models);
        }
        Ok(self.models.as_deref().unwrap_or_default())
    }

    fn abstraction(&mut self, report: &mut String) -> Result<bool> {
        let models = self.build_models()?.to_vec();
        let _ = writeln!(report, "[abstract]");
        let _ = writeln!(
            report,
            "eta = {}, varpi = {}, k_d = {}",
            self.cfg.abstraction.eta, self.cfg.abstraction.varpi, self.cfg.abstraction.k_d
        );
        let digests: Vec<[u8; 32]> = models.iter().map(|m| m.digest()).collect();
        let same = first_equal(&digests);
        let mut ok = true;
        for (i, m) in models.iter().enumerate() {
            if same[i] != i {
                let _ = writeln!(report, "subsystem {}: same model as subsystem {}", i + 1, same[i] + 1);
                continue;
            }
            let path = self.out.join(format!("model_{}.bin", i + 1));
            persist(m, &path)?;
            let _ = writeln!(
                report,
                "subsystem {}: {} grid points, {} internal inputs, {} states, {} transitions, {} non-progressing, digest {}",
                i + 1,
                m.num_grid(),
                m.num_inputs(),
                m.num_states(),
                m.num_transitions(),
                m.non_progressing_count(),
                hex(&digests[i])
            );
        }
        if self.cfg.abstraction.inputs == InputMode::Coupled {
            let matched = check_internal_input_match(&self.net, &models)?;
            let _ = writeln!(report, "internal input match = {}", if matched.ok { "yes" } else { "no" });
            if let Some((i, w)) = &matched.counterexample {
                let _ = writeln!(report, "  subsystem {} lacks input {w:?}", i + 1);
            }
            ok &= matched.ok;
        }
        let samples = self.cfg.abstraction.mc_samples;
        if self.has_certificates() && samples > 0 {
            let seed = self.seed.unwrap_or(0);
            let augs = self.composed()?.augs.clone();
            for (i, m) in models.iter().enumerate() {
                if same[i] != i {
                    continue;
                }
                let r = validate_storage_mc(&self.net.subsystems[i], m, &augs[i], samples, seed)?;
                if r.samples == 0 {
                    let _ = writeln!(
                        report,
                        "subsystem {}: storage check vacuous, all {} draws leave the state set",
                        i + 1,
                        r.skipped_out_of_domain + r.skipped_no_witness
                    );
                    continue;
                }
                let v = r.max_violation();
                let _ = writeln!(
                    report,
                    "subsystem {}: storage check over {} samples, max violation = {v:.3e} ({} outside the state set, {} without witness)",
                    i + 1,
                    r.samples,
                    r.skipped_out_of_domain,
                    r.skipped_no_witness
                );
                ok &= v <= 1e-9;
            }
        }
        let _ = writeln!(report, "result = {}", if ok { "PASS" } else { "FAIL" });
        Ok(ok)
    }

    fn shrink(&mut self) -> Result<f64> {
        match self.cfg.shrink_rule()? {
            ShrinkRule::Fixed(v) => Ok(v),
            ShrinkRule::EpsHat => Ok(self.composed()?.bound.eps_hat),
        }
    }

    /// Internal-input restriction of subsystem `i` under the assumed
    /// outputs of the subsystems feeding it.
    fn restricted(&self, i: usize, model: &SymbolicModel, assumed: &BoxUnion) -> Result<SymbolicModel> {
        let rows = self.net.input_range(i);
        let feeding: Vec<usize> = (0..self.net.len())
            .filter(|&j| {
                let cols = self.net.output_range(j);
                rows.clone().any(|r| cols.clone().any(|c| self.net.coupling.get(r, c) != 0.0))
            })
            .collect();
        if feeding.is_empty() {
            return Ok(model.clone());
        }
        let (alo, ahi) = assumed.hull();
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        let mut cols = Vec::new();
        for &j in &feeding {
            if self.net.output_range(j).len() != alo.len() {
                return Err(Error::Config(format!(
                    "spec.assumed_output has dimension {} but subsystem {} has {} internal outputs",
                    alo.len(),
                    j + 1,
                    self.net.output_range(j).len()
                )));
            }
            lo.extend_from_slice(&alo);
            hi.extend_from_slice(&ahi);
            cols.extend(self.net.output_range(j));
        }
        let mut m_row = Matrix::zeros(rows.len(), cols.len());
        for (r, row) in rows.enumerate() {
            for (k, &c) in cols.iter().enumerate() {
                m_row.set(r, k, self.net.coupling.get(row, c));
            }
        }
        let joint = BoxUnion::single(Hyperbox::new(lo, hi)?);
        restrict_internal_inputs(model, &joint, &m_row)
    }

    fn synthesize(&mut self, report: &mut String) -> Result<(Vec<SymbolicModel>, Vec<Controller>, SafetySpec)> {
        let spec = self.cfg.safety_spec()?;
        let assumed = self.cfg.assumed_output()?;
        let shrink = self.shrink()?;
        let models = self.build_models()?.to_vec();
        let _ = writeln!(report, "[synthesize]");
        let _ = writeln!(report, "safe set = {}", fmt_box(&spec.safe_set));
        let _ = writeln!(report, "shrink = {shrink:.6e}");
        if let Some(a) = &assumed {
            let _ = writeln!(report, "assumed internal outputs = {}", fmt_box(a));
            let n = self.net.len();
            let subs = &self.net.subsystems;
            let state_sets: Vec<BoxUnion> = subs.iter().map(|s| s.state_set.clone()).collect();
            let c1: Vec<Matrix> = subs.iter().map(|s| s.c1.clone()).collect();
            let c2: Vec<Matrix> = subs.iter().map(|s| s.c2.clone()).collect();
            check_assume_guarantee(&state_sets, &c1, &c2, &vec![spec.clone(); n], &vec![a.clone(); n])
                .map_err(|e| Error::Invariant(format!("assume-guarantee check failed: {e}")))?;
            let _ = writeln!(report, "assume-guarantee = covered");
        }
        let restricted = match &assumed {
            None => models.clone(),
            Some(a) => {
                let same = first_equal(&models.iter().map(|m| m.digest()).collect::<Vec<_>>());
                let mut out: Vec<SymbolicModel> = Vec::with_capacity(models.len());
                for (i, m) in models.iter().enumerate() {
                    let r = self.restricted(i, m, a)?;
                    if same[i] != i && out[same[i]] == r {
                        out.push(out[same[i]].clone());
                    } else {
                        out.push(r);
                    }
                }
                out
            }
        };
        let digests: Vec<[u8; 32]> = restricted.iter().map(|m| m.digest()).collect();
        let same = first_equal(&digests);
        let mut controllers: Vec<Controller> = Vec::with_capacity(restricted.len());
        for (i, m) in restricted.iter().enumerate() {
            if same[i] != i {
                controllers.push(controllers[same[i]].clone());
                let _ = writeln!(report, "subsystem {}: same controller as subsystem {}", i + 1, same[i] + 1);
                continue;
            }
            let ctrl = safety_fixed_point(m, &spec, shrink).inspect_err(|_| {
                let _ = writeln!(report, "subsystem {}: empty controller domain", i + 1);
            })?;
            save_controller(&ctrl, m, &self.out.join(format!("controller_{}.bin", i + 1)))?;
            std::fs::write(self.out.join(format!("controller_{}.csv", i + 1)), ctrl.to_csv(m))?;
            let _ = writeln!(
                report,
                "subsystem {}: domain {} of {} product states after {} sweep(s), digest {}",
                i + 1,
                ctrl.domain_size(),
                ctrl.product.len(),
                ctrl.iterations,
                hex(&ctrl.digest())
            );
            controllers.push(ctrl);
        }
        Ok((restricted, controllers, spec))
    }

    fn full_report(&mut self, report: &mut String) -> Result<bool> {
        let mut ok = true;
        if self.has_certificates() {
            ok &= self.check_cert(report)?;
            report.push('\n');
            ok &= self.compose_check(report)?;
            report.push('\n');
        }
        ok &= self.abstraction(report)?;
        report.push('\n');
        Ok(self.simulate(report)? && ok)
    }

    fn synthesize_stage(&mut self, report: &mut String) -> Result<bool> {
        self.synthesize(report)?;
        let _ = writeln!(report, "result = PASS");
        Ok(true)
    }

    fn simulate(&mut self, report: &mut String) -> Result<bool> {
        let (restricted, controllers, spec) = self.synthesize(report)?;
        let sim = self.cfg.simulation()?.clone();
        let x0 = self.cfg.initial_states(&self.net.subsystems)?;
        let policy = match self.policy {
            Some(p) => p,
            None => self.cfg.policy()?,
        };
        let seed = self.seed.unwrap_or(sim.seed);
        let _ = writeln!(report, "\n[simulate]");
        let _ = writeln!(report, "horizon = {}, policy = {}, seed = {seed}", sim.horizon, format!("{policy:?}").to_lowercase());
        let log = simulate_closed_loop(&self.net, &restricted, &controllers, &x0, sim.horizon, policy, seed)?;
        let dims: Vec<usize> = self.net.subsystems.iter().map(|s| s.state_dim()).collect();
        let csv = self.out.join("trajectory.csv");
        export_csv(&log, &dims, &csv)?;
        let summary = summarize(&log, spec.red_mode);
        let _ = writeln!(report, "steps = {}", summary.steps);
        let _ = writeln!(report, "min state = {}", summary.min_state);
        let _ = writeln!(report, "max state = {}", summary.max_state);
        let _ = writeln!(report, "longest red run = {}", summary.longest_red_run);
        let _ = writeln!(report, "trajectory = {}", csv.display());

        let mut ok = true;
        let unsafe_step = log.states.iter().position(|xs| {
            xs.iter()
                .zip(&self.net.subsystems)
                .any(|(x, s)| !spec.safe_set.contains(&s.c1.mul_vec_unchecked(x)))
        });
        if let Some(k) = unsafe_step {
            let _ = writeln!(report, "safety = violated at step {k}");
            ok = false;
        } else {
            let _ = writeln!(report, "safety = held");
        }
        if let Some(limit) = spec.fairness_limit {
            let fair = summary.longest_red_run <= limit;
            let _ = writeln!(report, "fairness (red runs <= {limit}) = {}", if fair { "held" } else { "violated" });
            ok &= fair;
        }

        if self.has_certificates() && sim.paired_horizon > 0 {
            let models = self.build_models()?.to_vec();
            let bound = self.composed()?.bound;
            let augs = self.composed()?.augs.clone();
            let xh0: Option<Vec<usize>> = models.iter().zip(&x0).map(|(m, x)| m.nearest_grid(x)).collect();
            let steps = sim.paired_horizon.min(log.modes.len());
            match xh0 {
                None => {
                    let _ = writeln!(report, "mismatch check = skipped (initial state off the grid)");
                }
                Some(xh0) => {
                    let run = paired_runs(&self.net, &models, &augs, &x0, &xh0, &log.modes[..steps])?;
                    match check_mismatch_bound(&run, &bound) {
                        MismatchCheck::Checked { max_mismatch } => {
                            let held = max_mismatch <= bound.eps_hat + 1e-9;
                            let _ = writeln!(
                                report,
                                "mismatch over {steps} steps = {max_mismatch:.6e} (bound {:.6e}) {}",
                                bound.eps_hat,
                                if held { "held" } else { "violated" }
                            );
                            ok &= held;
                        }
                        MismatchCheck::Skipped { reason } => {
                            let _ = writeln!(report, "mismatch check = skipped ({reason})");
                        }
                    }
                }
            }
        }
        let _ = writeln!(report, "result = {}", if ok { "PASS" } else { "FAIL" });
        Ok(ok)
    }
}

/// Output directory used when `--out` is absent.
pub fn default_out_dir(config: &Path) -> PathBuf {
    let stem = config.file_stem().and_then(|s| s.to_str()).unwrap_or("symnet");
    config.with_file_name(format!("{stem}.out"))
}
