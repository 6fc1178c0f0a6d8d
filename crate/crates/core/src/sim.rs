//! Closed-loop simulation of the concrete network under refined
//! controllers, paired concrete/abstract runs, and CSV logs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::abstraction::SymbolicModel;
use crate::certificates::{sup_dist, AugStorageFn};
use crate::composition::{compose_symbolic_network, interconnect_concrete, JointState, NetworkSpec, RelationBound};
use crate::error::{Error, Result};
use crate::synthesis::{refine_controller, Controller};
use crate::system::Mode;

/// Choice among the modes a controller allows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Policy {
    /// Smallest allowed mode.
    Lex,
    /// Uniform among allowed modes, seeded.
    Random,
    /// Allowed mode used least recently; ties go to the smaller index.
    #[default]
    Fair,
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lex" => Ok(Policy::Lex),
            "random" => Ok(Policy::Random),
            "fair" => Ok(Policy::Fair),
            _ => Err(Error::Input(format!("unknown policy '{s}' (expected lex, random or fair)"))),
        }
    }
}

/// One record per time step, starting at time 0.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryLog {
    pub time: Vec<usize>,
    pub states: Vec<Vec<Vec<f64>>>,
    pub modes: Vec<Vec<Mode>>,
    /// Red-run counters per subsystem.
    pub counters: Vec<Vec<usize>>,
}

impl TrajectoryLog {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    fn push(&mut self, t: usize, s: &JointState, c: &[usize]) {
        self.time.push(t);
        self.states.push(s.x.clone());
        self.modes.push(s.p.clone());
        self.counters.push(c.to_vec());
    }
}

struct Chooser {
    policy: Policy,
    rng: ChaCha8Rng,
    last_used: Vec<Vec<Option<usize>>>,
}

impl Chooser {
    fn pick(&mut self, i: usize, t: usize, allowed: &[Mode]) -> Mode {
        let m = match self.policy {
            Policy::Lex => allowed[0],
            Policy::Random => allowed[self.rng.gen_range(0..allowed.len())],
            Policy::Fair => *allowed
                .iter()
                .min_by_key(|m| (self.last_used[i][m.0].map_or(-1, |v| v as i64), m.0))
                .unwrap(),
        };
        self.last_used[i][m.0] = Some(t);
        m
    }
}

/// Runs the concrete network for `horizon` steps. Each subsystem picks its
/// next mode among those its refined controller allows at the current state.
/// Initial modes are chosen by the same policy among those whose
/// `(x̂₀, p, 0)` lies in the domain.
#[allow(clippy::too_many_arguments)]
pub fn simulate_closed_loop(
    net: &NetworkSpec,
    models: &[SymbolicModel],
    controllers: &[Controller],
    x0: &[Vec<f64>],
    horizon: usize,
    policy: Policy,
    seed: u64,
) -> Result<TrajectoryLog> {
    let n = net.len();
    if models.len() != n || controllers.len() != n || x0.len() != n {
        return Err(Error::Input(format!("expected {n} models, controllers and initial states")));
    }
    let sys = interconnect_concrete(net)?;
    let mut chooser = Chooser {
        policy,
        rng: ChaCha8Rng::seed_from_u64(seed),
        last_used: models.iter().map(|m| vec![None; m.modes]).collect(),
    };
    let at_step = |k: usize, e: Error| match e {
        Error::RefinementDomain { detail, .. } => Error::RefinementDomain { step: Some(k), detail },
        other => other,
    };

    let mut p0 = Vec::with_capacity(n);
    let mut c = Vec::with_capacity(n);
    for i in 0..n {
        let prod = &controllers[i].product;
        let options: Vec<Mode> = (0..models[i].modes)
            .map(Mode)
            .filter(|&p| {
                refine_controller(&controllers[i], &models[i], &x0[i], p, 0, prod.initial_counter(p)).is_ok()
            })
            .collect();
        if options.is_empty() {
            return Err(Error::RefinementDomain {
                step: Some(0),
                detail: format!("initial state {:?} of subsystem {} is outside the controller domain", x0[i], i + 1),
            });
        }
        let p = chooser.pick(i, 0, &options);
        p0.push(p);
        c.push(prod.initial_counter(p));
    }
    let mut s = JointState {
        x: x0.to_vec(),
        p: p0,
        l: vec![0; n],
    };
    let mut log = TrajectoryLog::default();
    log.push(0, &s, &c);
    for k in 0..horizon {
        let mut u = Vec::with_capacity(n);
        for i in 0..n {
            let allowed = refine_controller(&controllers[i], &models[i], &s.x[i], s.p[i], s.l[i], c[i])
                .map_err(|e| at_step(k, e))?;
            u.push(chooser.pick(i, k + 1, &allowed));
        }
        s = sys.step(&s, &u)?;
        for i in 0..n {
            c[i] = controllers[i].product.advance(c[i], s.p[i]).ok_or_else(|| {
                Error::Invariant(format!("subsystem {} exceeded its red-run limit at step {}", i + 1, k + 1))
            })?;
        }
        log.push(k + 1, &s, &c);
    }
    Ok(log)
}

/// Concrete and abstract output runs driven by the same mode sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedRun {
    pub concrete: Vec<Vec<Vec<f64>>>,
    pub abstract_: Vec<Vec<Vec<f64>>>,
    /// `Σ μᵢ 𝒱ᵢ` at time 0.
    pub initial_storage: f64,
}

/// Runs the concrete network and its abstraction side by side. The abstract
/// successor is the grid point nearest to the abstract image.
/// `mode_seq[k]` is the mode tuple active at step `k`.
pub fn paired_runs(
    net: &NetworkSpec,
    models: &[SymbolicModel],
    aug: &[AugStorageFn],
    x0: &[Vec<f64>],
    xh0: &[usize],
    mode_seq: &[Vec<Mode>],
) -> Result<PairedRun> {
    let nm = compose_symbolic_network(models, net)?;
    let sys = interconnect_concrete(net)?;
    let n = net.len();
    let first = mode_seq
        .first()
        .ok_or_else(|| Error::Input("mode sequence is empty".into()))?;
    let mut s = JointState {
        x: x0.to_vec(),
        p: first.clone(),
        l: vec![0; n],
    };
    let mut abs: Vec<(usize, Mode, usize)> = (0..n).map(|i| (xh0[i], first[i], 0)).collect();
    let initial_storage: f64 = (0..n)
        .map(|i| net.weights[i] * aug[i].value(&x0[i], &models[i].grid.point(xh0[i]), 0))
        .sum();
    let abs_out = |abs: &[(usize, Mode, usize)]| -> Vec<Vec<f64>> {
        models.iter().zip(abs).map(|(m, a)| m.h1(a.0)).collect()
    };
    let mut run = PairedRun {
        concrete: vec![sys.outputs(&s)],
        abstract_: vec![abs_out(&abs)],
        initial_storage,
    };
    for (k, u) in mode_seq.iter().enumerate().skip(1) {
        let ws = nm.internal_input_indices(&abs)?;
        let lists = nm
            .component_successors(&abs, u)?
            .ok_or_else(|| Error::Input(format!("mode tuple at step {k} violates the dwell time")))?;
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            let m = &models[i];
            let (x, p, _) = abs[i];
            let image = net.subsystems[i].modes[p.0].apply(&m.grid.point(x), &m.inputs[ws[i]]);
            let best = lists[i]
                .iter()
                .min_by(|a, b| {
                    sup_dist(&m.grid.point(a.0), &image).total_cmp(&sup_dist(&m.grid.point(b.0), &image))
                })
                .ok_or_else(|| Error::RefinementDomain {
                    step: Some(k),
                    detail: format!("abstract run of subsystem {} left the grid", i + 1),
                })?;
            next.push(*best);
        }
        abs = next;
        s = sys.step(&s, u)?;
        run.concrete.push(sys.outputs(&s));
        run.abstract_.push(abs_out(&abs));
    }
    Ok(run)
}

#[derive(Clone, Debug, PartialEq)]
pub enum MismatchCheck {
    Checked { max_mismatch: f64 },
    /// The initial states are not related, so no bound applies.
    Skipped { reason: String },
}

/// Largest sup-norm difference between paired output runs.
pub fn check_mismatch_bound(run: &PairedRun, bound: &RelationBound) -> MismatchCheck {
    if run.initial_storage > bound.phi {
        log::warn!(
            "initial states not related: storage {} exceeds phi {}",
            run.initial_storage,
            bound.phi
        );
        return MismatchCheck::Skipped {
            reason: format!("initial storage {} exceeds phi {}", run.initial_storage, bound.phi),
        };
    }
    let max_mismatch = run
        .concrete
        .iter()
        .zip(&run.abstract_)
        .flat_map(|(c, a)| c.iter().zip(a).map(|(y, yh)| sup_dist(y, yh)))
        .fold(0.0, f64::max);
    MismatchCheck::Checked { max_mismatch }
}

/// `v` with 9 significant digits, trailing zeros trimmed.
pub fn fmt_sig(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let e = v.abs().log10().floor() as i32;
    if (-5..9).contains(&e) {
        let s = format!("{:.*}", (8 - e).max(0) as usize, v);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{v:.8e}")
    }
}

pub fn to_csv(log: &TrajectoryLog, dims: &[usize]) -> String {
    let mut out = String::from("time");
    for (i, &d) in dims.iter().enumerate() {
        for j in 0..d {
            let _ = write!(out, ",x_{}_{}", i + 1, j + 1);
        }
    }
    for i in 0..dims.len() {
        let _ = write!(out, ",mode_{}", i + 1);
    }
    for i in 0..dims.len() {
        let _ = write!(out, ",counter_{}", i + 1);
    }
    out.push('\n');
    for k in 0..log.len() {
        let _ = write!(out, "{}", log.time[k]);
        for x in &log.states[k] {
            for v in x {
                let _ = write!(out, ",{}", fmt_sig(*v));
            }
        }
        for m in &log.modes[k] {
            let _ = write!(out, ",{m}");
        }
        for c in &log.counters[k] {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    out
}

pub fn export_csv(log: &TrajectoryLog, dims: &[usize], path: &Path) -> Result<()> {
    fs::write(path, to_csv(log, dims))?;
    Ok(())
}

/// Aggregate figures of a closed-loop run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub steps: usize,
    pub min_state: f64,
    pub max_state: f64,
    pub longest_red_run: usize,
}

pub fn summarize(log: &TrajectoryLog, red: Mode) -> RunSummary {
    let all = log.states.iter().flatten().flatten().copied();
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let n = log.modes.first().map_or(0, |m| m.len());
    let mut longest = 0;
    for i in 0..n {
        let mut run = 0;
        for m in &log.modes {
            run = if m[i] == red { run + 1 } else { 0 };
            longest = longest.max(run);
        }
    }
    RunSummary {
        steps: log.len().saturating_sub(1),
        min_state: lo,
        max_state: hi,
        longest_red_run: longest,
    }
}
