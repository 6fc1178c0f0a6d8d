//! Static interconnections of switched subsystems, the compositional
//! matrix-inequality check and the network-level output-mismatch bound.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::abstraction::SymbolicModel;
use crate::certificates::{sup_dist, AugStorageFn};
use crate::error::{Error, Result};
use crate::matcert::{max_eigval, Matrix, SymMatrix};
use crate::system::{BoxUnion, Grid, Mode, PowerK, SwitchedSubsystem};
use crate::transition::counter_update;

/// Inclusion slack for the interval check of `M·∏𝕐₂ ⊆ ∏𝕎`.
const INCLUSION_SLACK: f64 = 1e-9;

/// Resolution used to compare internal-input points exactly.
const POINT_KEY_RES: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct NetworkSpec {
    pub subsystems: Vec<SwitchedSubsystem>,
    /// Rows: stacked internal inputs. Columns: stacked internal outputs.
    pub coupling: Matrix,
    pub weights: Vec<f64>,
    in_offsets: Vec<usize>,
    out_offsets: Vec<usize>,
}

impl NetworkSpec {
    pub fn new(subsystems: Vec<SwitchedSubsystem>, coupling: Matrix, weights: Vec<f64>) -> Result<Self> {
        if subsystems.is_empty() {
            return Err(Error::Network("network has no subsystems".into()));
        }
        if weights.len() != subsystems.len() {
            return Err(Error::Network(format!(
                "{} weights for {} subsystems",
                weights.len(),
                subsystems.len()
            )));
        }
        if let Some(i) = weights.iter().position(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(Error::Network(format!("weight of subsystem {} must be positive", i + 1)));
        }
        let mut in_offsets = vec![0];
        let mut out_offsets = vec![0];
        for s in &subsystems {
            in_offsets.push(in_offsets.last().unwrap() + s.input_dim());
            out_offsets.push(out_offsets.last().unwrap() + s.output_dim());
        }
        let (qw, qy) = (*in_offsets.last().unwrap(), *out_offsets.last().unwrap());
        if coupling.rows() != qw || coupling.cols() != qy {
            return Err(Error::Network(format!(
                "coupling matrix is {}x{}, expected {qw}x{qy}",
                coupling.rows(),
                coupling.cols()
            )));
        }
        let net = Self {
            subsystems,
            coupling,
            weights,
            in_offsets,
            out_offsets,
        };
        net.check_inclusion()?;
        Ok(net)
    }

    pub fn len(&self) -> usize {
        self.subsystems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsystems.is_empty()
    }

    pub fn input_range(&self, i: usize) -> std::ops::Range<usize> {
        self.in_offsets[i]..self.in_offsets[i + 1]
    }

    pub fn output_range(&self, i: usize) -> std::ops::Range<usize> {
        self.out_offsets[i]..self.out_offsets[i + 1]
    }

    pub fn total_inputs(&self) -> usize {
        *self.in_offsets.last().unwrap()
    }

    pub fn total_outputs(&self) -> usize {
        *self.out_offsets.last().unwrap()
    }

    /// Interval image of `M·∏ hull(C₂ᵢ 𝕏ᵢ)` checked against the hull of each
    /// internal-input set.
    fn check_inclusion(&self) -> Result<()> {
        let mut y_lo = Vec::new();
        let mut y_hi = Vec::new();
        for s in &self.subsystems {
            let (lo, hi) = s.state_set.hull();
            for r in 0..s.c2.rows() {
                let (mut a, mut b) = (0.0, 0.0);
                for c in 0..s.c2.cols() {
                    let v = s.c2.get(r, c);
                    let (p, q) = (v * lo[c], v * hi[c]);
                    a += p.min(q);
                    b += p.max(q);
                }
                y_lo.push(a);
                y_hi.push(b);
            }
        }
        for (i, s) in self.subsystems.iter().enumerate() {
            if s.input_dim() == 0 {
                continue;
            }
            let (w_lo, w_hi) = s.internal_input_set.hull();
            for (k, row) in self.input_range(i).enumerate() {
                let (mut a, mut b) = (0.0, 0.0);
                for c in 0..self.total_outputs() {
                    let v = self.coupling.get(row, c);
                    let (p, q) = (v * y_lo[c], v * y_hi[c]);
                    a += p.min(q);
                    b += p.max(q);
                }
                let slack = INCLUSION_SLACK * (1.0 + w_hi[k].abs().max(w_lo[k].abs()));
                if a < w_lo[k] - slack || b > w_hi[k] + slack {
                    return Err(Error::Network(format!(
                        "internal input {} of subsystem {}: coupled outputs range over \
                         [{a}, {b}], outside [{}, {}]",
                        k + 1,
                        i + 1,
                        w_lo[k],
                        w_hi[k]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Stacked internal outputs routed through `M`, split per subsystem.
    pub fn route(&self, ys: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let y: Vec<f64> = ys.iter().flatten().copied().collect();
        let w = self.coupling.mul_vec_unchecked(&y);
        (0..self.len()).map(|i| w[self.input_range(i)].to_vec()).collect()
    }

    /// Internal inputs induced by concrete states.
    pub fn internal_inputs(&self, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let ys: Vec<Vec<f64>> = self
            .subsystems
            .iter()
            .zip(xs)
            .map(|(s, x)| s.c2.mul_vec_unchecked(x))
            .collect();
        self.route(&ys)
    }
}

/// Joint augmented state of an interconnection.
#[derive(Clone, Debug, PartialEq)]
pub struct JointState {
    pub x: Vec<Vec<f64>>,
    pub p: Vec<Mode>,
    pub l: Vec<usize>,
}

/// The interconnected system: internal channels closed through `M`, the
/// external input is the mode tuple.
#[derive(Clone, Debug)]
pub struct Interconnected {
    pub net: NetworkSpec,
}

pub fn interconnect_concrete(net: &NetworkSpec) -> Result<Interconnected> {
    for (i, s) in net.subsystems.iter().enumerate() {
        s.validate()
            .map_err(|e| Error::Network(format!("subsystem {}: {e}", i + 1)))?;
    }
    Ok(Interconnected { net: net.clone() })
}

impl Interconnected {
    pub fn step(&self, s: &JointState, u: &[Mode]) -> Result<JointState> {
        let n = self.net.len();
        if s.x.len() != n || s.p.len() != n || s.l.len() != n || u.len() != n {
            return Err(Error::Input(format!("joint state or input is not of length {n}")));
        }
        let ws = self.net.internal_inputs(&s.x);
        let mut next = JointState {
            x: Vec::with_capacity(n),
            p: Vec::with_capacity(n),
            l: Vec::with_capacity(n),
        };
        for (i, sub) in self.net.subsystems.iter().enumerate() {
            sub.check_mode(u[i])?;
            let (p, l) = counter_update(s.p[i], s.l[i], u[i], sub.dwell_time)?;
            next.x.push(crate::system::step(sub, s.p[i], &s.x[i], &ws[i])?);
            next.p.push(p);
            next.l.push(l);
        }
        Ok(next)
    }

    /// Stacked external outputs.
    pub fn outputs(&self, s: &JointState) -> Vec<Vec<f64>> {
        self.net
            .subsystems
            .iter()
            .zip(&s.x)
            .map(|(sub, x)| sub.c1.mul_vec_unchecked(x))
            .collect()
    }
}

/// `R_δ` with blocks `R̃_{ab} = diag(μᵢ Rᵢ^{ab})` over the ordering
/// `[w₁; …; w_N; y₁; …; y_N]`.
pub fn assemble_rdelta(net: &NetworkSpec, r_list: &[SymMatrix]) -> Result<SymMatrix> {
    if r_list.len() != net.len() {
        return Err(Error::Network(format!(
            "{} supply matrices for {} subsystems",
            r_list.len(),
            net.len()
        )));
    }
    let qw = net.total_inputs();
    let dim = qw + net.total_outputs();
    if dim == 0 {
        return Err(Error::Network("network has no internal channels".into()));
    }
    let mut full = Matrix::zeros(dim, dim);
    for (i, r) in r_list.iter().enumerate() {
        let wi = net.input_range(i);
        let yi = net.output_range(i);
        let nw = wi.len();
        if r.dim() != nw + yi.len() {
            return Err(Error::Network(format!(
                "supply matrix of subsystem {} is {}x{}, expected {}",
                i + 1,
                r.dim(),
                r.dim(),
                nw + yi.len()
            )));
        }
        let mu = net.weights[i];
        let place = |local: usize| {
            if local < nw {
                wi.start + local
            } else {
                qw + yi.start + local - nw
            }
        };
        for a in 0..r.dim() {
            for b in 0..r.dim() {
                full.set(place(a), place(b), mu * r.get(a, b));
            }
        }
    }
    SymMatrix::from_matrix(&full)
}

/// Checks `[M; I]ᵀ R_δ [M; I] ⪯ 0`; the margin is its largest eigenvalue.
pub fn check_composition_lmi(net: &NetworkSpec, r_list: &[SymMatrix], tol: f64) -> Result<(bool, f64)> {
    if net.total_outputs() == 0 {
        return Ok((true, 0.0));
    }
    let rd = assemble_rdelta(net, r_list)?;
    let t = Matrix::from_blocks(&[vec![&net.coupling], vec![&Matrix::identity(net.total_outputs())]])?;
    let g = rd.congruence(&t)?;
    let margin = max_eigval(&g);
    Ok((margin <= tol, margin))
}

fn point_key(v: &[f64]) -> Vec<i64> {
    v.iter().map(|x| (x / POINT_KEY_RES).round() as i64).collect()
}

/// Distinct internal-output points `C₂ x̂` over a grid.
pub fn grid_outputs(sub: &SwitchedSubsystem, grid: &Grid) -> Vec<Vec<f64>> {
    let mut set = BTreeMap::new();
    for i in 0..grid.len() {
        let y = sub.c2.mul_vec_unchecked(&grid.point(i));
        set.entry(point_key(&y)).or_insert(y);
    }
    set.into_values().collect()
}

/// `{(M y)ᵢ : y ∈ ∏ Ŷⱼ}`, built as a Minkowski sum over the neighbours that
/// feed subsystem `i`. Sorted by key.
pub fn projected_internal_inputs(
    net: &NetworkSpec,
    i: usize,
    y_sets: &[Vec<Vec<f64>>],
    limit: usize,
) -> Result<Vec<Vec<f64>>> {
    let rows = net.input_range(i);
    let dim = rows.len();
    let mut acc: BTreeMap<Vec<i64>, Vec<f64>> = BTreeMap::new();
    acc.insert(point_key(&vec![0.0; dim]), vec![0.0; dim]);
    for (j, ys) in y_sets.iter().enumerate() {
        let cols = net.output_range(j);
        let feeds = rows
            .clone()
            .any(|r| cols.clone().any(|c| net.coupling.get(r, c) != 0.0));
        if !feeds {
            continue;
        }
        let images: Vec<Vec<f64>> = ys
            .iter()
            .map(|y| {
                rows.clone()
                    .map(|r| cols.clone().zip(y).map(|(c, v)| net.coupling.get(r, c) * v).sum())
                    .collect()
            })
            .collect();
        let mut next = BTreeMap::new();
        for s in acc.values() {
            for img in &images {
                let v: Vec<f64> = s.iter().zip(img).map(|(a, b)| a + b).collect();
                next.entry(point_key(&v)).or_insert(v);
                if next.len() > limit {
                    return Err(Error::Network(format!(
                        "internal-input set of subsystem {} exceeds {limit} points",
                        i + 1
                    )));
                }
            }
        }
        acc = next;
    }
    Ok(acc.into_values().collect())
}

/// Override points for every subsystem's internal inputs, so that
/// `∏Ŵᵢ` matches `M ∏Ŷ₂ᵢ` componentwise.
pub fn internal_input_overrides(net: &NetworkSpec, grids: &[Grid], limit: usize) -> Result<Vec<Vec<Vec<f64>>>> {
    if grids.len() != net.len() {
        return Err(Error::Network("one grid per subsystem is required".into()));
    }
    let y_sets: Vec<Vec<Vec<f64>>> = net
        .subsystems
        .iter()
        .zip(grids)
        .map(|(s, g)| grid_outputs(s, g))
        .collect();
    (0..net.len())
        .map(|i| projected_internal_inputs(net, i, &y_sets, limit))
        .collect()
}

/// Outcome of the internal-input match.
#[derive(Clone, Debug, PartialEq)]
pub struct InputMatch {
    pub ok: bool,
    /// Subsystem (zero-based) and a point in exactly one of the two sets.
    pub counterexample: Option<(usize, Vec<f64>)>,
}

/// Compares each model's internal-input points with the `M`-image of the
/// neighbours' abstract outputs.
pub fn check_internal_input_match(net: &NetworkSpec, models: &[SymbolicModel]) -> Result<InputMatch> {
    if models.len() != net.len() {
        return Err(Error::Network("one model per subsystem is required".into()));
    }
    let grids: Vec<Grid> = models.iter().map(|m| m.grid.clone()).collect();
    let expected = internal_input_overrides(net, &grids, 10_000_000)?;
    for (i, (m, exp)) in models.iter().zip(&expected).enumerate() {
        if net.input_range(i).is_empty() {
            continue;
        }
        let have: BTreeMap<Vec<i64>, &Vec<f64>> = m.inputs.iter().map(|w| (point_key(w), w)).collect();
        let want: BTreeMap<Vec<i64>, &Vec<f64>> = exp.iter().map(|w| (point_key(w), w)).collect();
        if let Some((_, w)) = want.iter().find(|(k, _)| !have.contains_key(*k)) {
            return Ok(InputMatch {
                ok: false,
                counterexample: Some((i, (*w).clone())),
            });
        }
        if let Some((_, w)) = have.iter().find(|(k, _)| !want.contains_key(*k)) {
            return Ok(InputMatch {
                ok: false,
                counterexample: Some((i, (*w).clone())),
            });
        }
    }
    Ok(InputMatch {
        ok: true,
        counterexample: None,
    })
}

/// Network-level `(α̃, σ̃, ε̃)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AltSimFn {
    pub alpha_tilde: PowerK,
    pub sigma_tilde: f64,
    pub eps_tilde: f64,
}

/// `σ̃ = max σᵢ`, `ε̃ = Σ μᵢ εᵢ`, and `α̃ = ᾱ⁻¹` with
/// `ᾱ(s) = max_{Σ sᵢ = s} Σ αᵢ⁻¹(sᵢ/μᵢ)` in closed form.
pub fn compose_alt_sim(net: &NetworkSpec, aug_list: &[AugStorageFn]) -> Result<AltSimFn> {
    if aug_list.len() != net.len() {
        return Err(Error::Network(format!(
            "{} storage functions for {} subsystems",
            aug_list.len(),
            net.len()
        )));
    }
    let b = aug_list[0].alpha.exp;
    if aug_list.iter().any(|f| (f.alpha.exp - b).abs() > 1e-12) {
        return Err(Error::UnsupportedCertificate(
            "lower bounds with different exponents have no closed-form composition".into(),
        ));
    }
    // αᵢ⁻¹(sᵢ/μᵢ) = dᵢ sᵢ^r with r = 1/b.
    let r = 1.0 / b;
    let d: Vec<f64> = aug_list
        .iter()
        .zip(&net.weights)
        .map(|(f, mu)| f.alpha.coeff.powf(-r) * mu.powf(-r))
        .collect();
    let bar_coeff = if r < 1.0 {
        let e = 1.0 / (1.0 - r);
        d.iter().map(|x| x.powf(e)).sum::<f64>().powf(1.0 - r)
    } else {
        d.iter().copied().fold(0.0, f64::max)
    };
    let bar = PowerK::new(bar_coeff, r)?;
    let sigma_tilde = aug_list.iter().map(|f| f.sigma).fold(0.0, f64::max);
    if !(sigma_tilde > 0.0 && sigma_tilde < 1.0) {
        return Err(Error::Certificate(format!("sigma {sigma_tilde} outside (0, 1)")));
    }
    let eps_tilde = aug_list
        .iter()
        .zip(&net.weights)
        .map(|(f, mu)| mu * f.eps_offset)
        .sum();
    Ok(AltSimFn {
        alpha_tilde: bar.inverse(),
        sigma_tilde,
        eps_tilde,
    })
}

/// Relation data for the approximate alternating simulation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelationBound {
    pub psi: f64,
    pub phi: f64,
    pub eps_hat: f64,
    pub rho: f64,
}

pub fn error_bound(f: &AltSimFn, psi: f64) -> Result<RelationBound> {
    if !(psi > 0.0 && psi < 1.0) {
        return Err(Error::Parameter(format!("psi must lie in (0, 1), got {psi}")));
    }
    let phi = f.eps_tilde / ((1.0 - f.sigma_tilde) * psi);
    Ok(RelationBound {
        psi,
        phi,
        eps_hat: f.alpha_tilde.inverse().eval(phi),
        rho: 1.0 - (1.0 - psi) * (1.0 - f.sigma_tilde),
    })
}

/// One component of a network-level abstract state: grid index, mode, counter.
pub type Component = (usize, Mode, usize);

/// Product of subsystem abstractions with internal inputs closed through
/// `M`. Successors are computed on demand.
pub struct NetworkModel<'a> {
    pub models: &'a [SymbolicModel],
    pub net: &'a NetworkSpec,
}

pub fn compose_symbolic_network<'a>(models: &'a [SymbolicModel], net: &'a NetworkSpec) -> Result<NetworkModel<'a>> {
    let m = check_internal_input_match(net, models)?;
    if let Some((i, w)) = m.counterexample {
        return Err(Error::Network(format!(
            "internal inputs of subsystem {} do not match the coupled outputs at {w:?}",
            i + 1
        )));
    }
    Ok(NetworkModel { models, net })
}

impl NetworkModel<'_> {
    /// Internal-input indices picked out by the abstract outputs of `state`.
    pub fn internal_input_indices(&self, state: &[Component]) -> Result<Vec<usize>> {
        let ys: Vec<Vec<f64>> = self
            .models
            .iter()
            .zip(state)
            .map(|(m, c)| m.h2(c.0))
            .collect();
        let ws = self.net.route(&ys);
        self.models
            .iter()
            .zip(&ws)
            .enumerate()
            .map(|(i, (m, w))| {
                m.input_index_of(w).ok_or_else(|| {
                    Error::Network(format!("subsystem {}: internal input {w:?} is not in its model", i + 1))
                })
            })
            .collect()
    }

    /// Per-component successor lists; `None` when `u` is not admissible.
    pub fn component_successors(&self, state: &[Component], u: &[Mode]) -> Result<Option<Vec<Vec<Component>>>> {
        let ws = self.internal_input_indices(state)?;
        let mut out = Vec::with_capacity(state.len());
        for (i, m) in self.models.iter().enumerate() {
            let (x, p, l) = state[i];
            if u[i].0 >= m.modes {
                return Ok(None);
            }
            let Ok((p2, l2)) = counter_update(p, l, u[i], m.k_d) else {
                return Ok(None);
            };
            out.push(
                m.successors(x, p, ws[i])
                    .iter()
                    .map(|&s| (s as usize, p2, l2))
                    .collect(),
            );
        }
        Ok(Some(out))
    }

    /// Fully enumerated product successors, in lexicographic order.
    pub fn successors(&self, state: &[Component], u: &[Mode]) -> Result<Option<Vec<Vec<Component>>>> {
        let Some(lists) = self.component_successors(state, u)? else {
            return Ok(None);
        };
        let mut acc: Vec<Vec<Component>> = vec![Vec::new()];
        for list in &lists {
            acc = acc
                .iter()
                .flat_map(|prefix| {
                    list.iter().map(move |c| {
                        let mut v = prefix.clone();
                        v.push(*c);
                        v
                    })
                })
                .collect();
        }
        Ok(Some(acc))
    }
}

/// Result of sampling the network-level decrease condition.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkMcReport {
    /// `max 𝒮̃′ − σ̃𝒮̃ − ε̃` over accepted samples.
    pub max_violation: f64,
    pub samples: usize,
    pub skipped: usize,
}

fn sample_box(s: &BoxUnion, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let b = &s.boxes()[rng.gen_range(0..s.boxes().len())];
    b.lower
        .iter()
        .zip(&b.upper)
        .map(|(l, u)| rng.gen_range(*l..=*u))
        .collect()
}

/// Samples joint concrete and abstract states and checks
/// `𝒮̃′ ≤ σ̃𝒮̃ + ε̃` with `𝒮̃ = Σ μᵢ 𝒱ᵢ`. Draws whose concrete successor
/// leaves a state set, or that have no abstract successor, are skipped.
pub fn validate_network_mc(
    net: &NetworkSpec,
    models: &[SymbolicModel],
    aug: &[AugStorageFn],
    alt: &AltSimFn,
    samples: usize,
    seed: u64,
) -> Result<NetworkMcReport> {
    let nm = compose_symbolic_network(models, net)?;
    let sys = interconnect_concrete(net)?;
    const CHUNK: usize = 256;
    let chunks = samples.div_ceil(CHUNK);
    let parts: Vec<Result<NetworkMcReport>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let mut rep = NetworkMcReport {
                max_violation: f64::NEG_INFINITY,
                samples: 0,
                skipped: 0,
            };
            'draw: for _ in 0..CHUNK.min(samples - c * CHUNK) {
                let mut js = JointState {
                    x: Vec::new(),
                    p: Vec::new(),
                    l: Vec::new(),
                };
                let mut abs = Vec::new();
                let mut u = Vec::new();
                for (sub, m) in net.subsystems.iter().zip(models) {
                    js.x.push(sample_box(&sub.state_set, &mut rng));
                    let p = Mode(rng.gen_range(0..m.modes));
                    let l = rng.gen_range(0..m.k_d);
                    js.p.push(p);
                    js.l.push(l);
                    abs.push((rng.gen_range(0..m.num_grid()), p, l));
                    u.push(if l + 1 < m.k_d { p } else { Mode(rng.gen_range(0..m.modes)) });
                }
                let next = sys.step(&js, &u)?;
                if net
                    .subsystems
                    .iter()
                    .zip(&next.x)
                    .any(|(s, x)| !s.state_set.contains(x))
                {
                    rep.skipped += 1;
                    continue;
                }
                let ws = nm.internal_input_indices(&abs)?;
                let mut before = 0.0;
                let mut after = 0.0;
                for i in 0..net.len() {
                    let m = &models[i];
                    let (x, p, l) = abs[i];
                    let xh = m.grid.point(x);
                    let image = net.subsystems[i].modes[p.0].apply(&xh, &m.inputs[ws[i]]);
                    let Some(best) = m
                        .successors(x, p, ws[i])
                        .iter()
                        .map(|&s| m.grid.point(s as usize))
                        .min_by(|a, b| sup_dist(a, &image).total_cmp(&sup_dist(b, &image)))
                    else {
                        rep.skipped += 1;
                        continue 'draw;
                    };
                    before += net.weights[i] * aug[i].value(&js.x[i], &xh, l);
                    after += net.weights[i] * aug[i].value(&next.x[i], &best, next.l[i]);
                }
                rep.max_violation = rep
                    .max_violation
                    .max(after - alt.sigma_tilde * before - alt.eps_tilde);
                rep.samples += 1;
            }
            Ok(rep)
        })
        .collect();
    parts.into_iter().try_fold(
        NetworkMcReport {
            max_violation: f64::NEG_INFINITY,
            samples: 0,
            skipped: 0,
        },
        |a, b| {
            let b = b?;
            Ok(NetworkMcReport {
                max_violation: a.max_violation.max(b.max_violation),
                samples: a.samples + b.samples,
                skipped: a.skipped + b.skipped,
            })
        },
    )
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::abstraction::build_symbolic_model;
    use crate::certificates::StorageShape;
    use crate::system::tests::traffic_link;
    use crate::system::{Hyperbox, ModeDynamics};
    use approx::assert_abs_diff_eq;

    /// Ring of `n` traffic links: link `i + 1` receives the outflow of link `i`.
    pub fn traffic_ring(n: usize) -> NetworkSpec {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set((i + 1) % n, i, 1.0);
        }
        NetworkSpec::new(vec![traffic_link(); n], m, vec![1.0; n]).unwrap()
    }

    fn traffic_q() -> SymMatrix {
        SymMatrix::from_rows(&[vec![0.3527, 0.0937], vec![0.0937, -0.6785]]).unwrap()
    }

    fn scalar_sub(a: f64, coupled: bool) -> SwitchedSubsystem {
        let d = if coupled { Matrix::new(1, 1, vec![0.2]).unwrap() } else { Matrix::zeros(1, 0) };
        let mode = ModeDynamics::new(Matrix::new(1, 1, vec![a]).unwrap(), d, vec![0.1]).unwrap();
        let w = if coupled {
            BoxUnion::single(Hyperbox::cube(1, 0.0, 1.0).unwrap())
        } else {
            BoxUnion::point0()
        };
        let c2 = if coupled { Matrix::identity(1) } else { Matrix::zeros(0, 1) };
        SwitchedSubsystem::new(
            BoxUnion::single(Hyperbox::cube(1, 0.0, 1.0).unwrap()),
            w,
            vec![mode.clone(), mode],
            Matrix::identity(1),
            c2,
            2,
        )
        .unwrap()
    }

    #[test]
    fn inclusion_is_checked() {
        let mut m = Matrix::zeros(3, 3);
        for i in 0..3 {
            m.set((i + 1) % 3, i, 2.0);
        }
        assert!(matches!(
            NetworkSpec::new(vec![traffic_link(); 3], m, vec![1.0; 3]),
            Err(Error::Network(_))
        ));
        assert!(NetworkSpec::new(vec![traffic_link(); 3], Matrix::zeros(2, 3), vec![1.0; 3]).is_err());
    }

    #[test]
    fn lone_subsystem_matches_direct_step() {
        let sub = scalar_sub(0.5, false);
        let net = NetworkSpec::new(vec![sub.clone()], Matrix::zeros(0, 0), vec![1.0]).unwrap();
        let sys = interconnect_concrete(&net).unwrap();
        let s = JointState {
            x: vec![vec![0.4]],
            p: vec![Mode(0)],
            l: vec![0],
        };
        let n = sys.step(&s, &[Mode(0)]).unwrap();
        assert_eq!(n.x[0], crate::system::step(&sub, Mode(0), &[0.4], &[]).unwrap());
    }

    #[test]
    fn cross_coupled_pair_matches_stacked_affine() {
        let a = scalar_sub(0.5, true);
        let b = scalar_sub(0.3, true);
        let m = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]], 2).unwrap();
        let net = NetworkSpec::new(vec![a, b], m, vec![1.0, 1.0]).unwrap();
        let sys = interconnect_concrete(&net).unwrap();
        let s = JointState {
            x: vec![vec![0.4], vec![0.9]],
            p: vec![Mode(0), Mode(1)],
            l: vec![1, 1],
        };
        let n = sys.step(&s, &[Mode(1), Mode(1)]).unwrap();
        // [0.5 0.2; 0.2 0.3]·[0.4; 0.9] + 0.1
        assert_abs_diff_eq!(n.x[0][0], 0.5 * 0.4 + 0.2 * 0.9 + 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(n.x[1][0], 0.3 * 0.9 + 0.2 * 0.4 + 0.1, epsilon = 1e-15);
        assert_eq!((n.p.clone(), n.l.clone()), (vec![Mode(1), Mode(1)], vec![0, 1]));
    }

    #[test]
    fn ring_routes_neighbour_outflow() {
        let net = traffic_ring(25);
        let mut xs = vec![vec![0.0, 0.0]; 25];
        xs[0][1] = 7.0;
        xs[24][1] = 3.0;
        let ws = net.internal_inputs(&xs);
        assert_eq!(ws[1], vec![7.0]);
        assert_eq!(ws[0], vec![3.0]);
        assert_eq!(ws[2], vec![0.0]);
    }

    #[test]
    fn rdelta_assembly() {
        let net = traffic_ring(1);
        let rd = assemble_rdelta(&net, &[traffic_q()]).unwrap();
        assert_eq!(rd, traffic_q());
        let net2 = traffic_ring(2);
        let rd = assemble_rdelta(&net2, &[traffic_q(), traffic_q()]).unwrap();
        assert_eq!(rd.dim(), 4);
        assert_eq!(rd.get(0, 0), 0.3527);
        assert_eq!(rd.get(1, 1), 0.3527);
        assert_eq!(rd.get(0, 2), 0.0937);
        assert_eq!(rd.get(0, 3), 0.0);
        assert_eq!(rd.get(3, 3), -0.6785);
        assert_eq!(assemble_rdelta(&traffic_ring(25), &vec![traffic_q(); 25]).unwrap().dim(), 50);
    }

    #[test]
    fn composition_lmi_examples() {
        let net = traffic_ring(25);
        let (ok, margin) = check_composition_lmi(&net, &vec![traffic_q(); 25], 1e-8).unwrap();
        assert!(ok && margin <= 1e-8, "{margin}");
        let neg = SymMatrix::identity(2).neg();
        assert!(check_composition_lmi(&traffic_ring(3), &vec![neg; 3], 0.0).unwrap().0);
    }

    fn aug(sigma: f64, eps: f64, a: f64) -> AugStorageFn {
        AugStorageFn {
            alpha: PowerK::quadratic(a).unwrap(),
            sigma,
            eps_offset: eps,
            r: traffic_q(),
            shape: StorageShape::Common {
                z: SymMatrix::identity(2),
            },
        }
    }

    #[test]
    fn alt_sim_examples() {
        let one = compose_alt_sim(&traffic_ring(1), &[aug(0.98, 0.5, 1.0)]).unwrap();
        assert_abs_diff_eq!(one.alpha_tilde.coeff, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(one.alpha_tilde.exp, 2.0, epsilon = 1e-12);
        assert_eq!((one.sigma_tilde, one.eps_tilde), (0.98, 0.5));

        let two = compose_alt_sim(&traffic_ring(2), &[aug(0.98, 0.5, 1.0), aug(0.7, 0.25, 1.0)]).unwrap();
        assert_eq!(two.sigma_tilde, 0.98);
        assert_abs_diff_eq!(two.eps_tilde, 0.75, epsilon = 1e-15);

        let all = compose_alt_sim(&traffic_ring(25), &vec![aug(0.98, 0.0, 1.0); 25]).unwrap();
        assert_abs_diff_eq!(all.alpha_tilde.coeff, 1.0 / 25.0, epsilon = 1e-12);
        assert_abs_diff_eq!(all.alpha_tilde.exp, 2.0, epsilon = 1e-12);

        let mut mixed = aug(0.98, 0.0, 1.0);
        mixed.alpha = PowerK::new(1.0, 3.0).unwrap();
        assert!(matches!(
            compose_alt_sim(&traffic_ring(2), &[aug(0.98, 0.0, 1.0), mixed]),
            Err(Error::UnsupportedCertificate(_))
        ));
    }

    #[test]
    fn error_bound_examples() {
        let f = AltSimFn {
            alpha_tilde: PowerK::quadratic(1.0).unwrap(),
            sigma_tilde: 0.5,
            eps_tilde: 0.1,
        };
        let b = error_bound(&f, 0.5).unwrap();
        assert_abs_diff_eq!(b.phi, 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(b.eps_hat, 0.4f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(b.rho, 0.75, epsilon = 1e-12);
        let z = error_bound(&AltSimFn { eps_tilde: 0.0, ..f }, 0.5).unwrap();
        assert_eq!((z.phi, z.eps_hat), (0.0, 0.0));
        let sweep: Vec<f64> = (1..10)
            .map(|k| error_bound(&f, k as f64 / 10.0).unwrap().eps_hat)
            .collect();
        assert!(sweep.windows(2).all(|w| w[1] < w[0]));
        assert!(error_bound(&f, 1.0).is_err());
    }

    fn ring_models(n: usize, eta: f64, override_inputs: bool) -> (NetworkSpec, Vec<SymbolicModel>) {
        let net = traffic_ring(n);
        let grids: Vec<Grid> = net
            .subsystems
            .iter()
            .map(|s| Grid::new(&s.state_set, eta).unwrap())
            .collect();
        let ov = internal_input_overrides(&net, &grids, 1 << 20).unwrap();
        let models = net
            .subsystems
            .iter()
            .zip(&ov)
            .map(|(s, o)| {
                if override_inputs {
                    build_symbolic_model(s, eta, eta, Some(o.clone())).unwrap()
                } else {
                    build_symbolic_model(s, eta, 2.0 * eta, None).unwrap()
                }
            })
            .collect();
        (net, models)
    }

    #[test]
    fn input_match_examples() {
        let (net, models) = ring_models(3, 6.0, true);
        assert!(check_internal_input_match(&net, &models).unwrap().ok);
        let (net, models) = ring_models(3, 6.0, false);
        let m = check_internal_input_match(&net, &models).unwrap();
        assert!(!m.ok);
        assert!(m.counterexample.is_some());

        let lone = NetworkSpec::new(vec![scalar_sub(0.5, false)], Matrix::zeros(0, 0), vec![1.0]).unwrap();
        let model = build_symbolic_model(&lone.subsystems[0], 0.25, 0.0, None).unwrap();
        assert!(check_internal_input_match(&lone, &[model]).unwrap().ok);
    }

    #[test]
    fn product_matches_brute_force() {
        let a = scalar_sub(0.5, true);
        let b = scalar_sub(0.3, true);
        let m = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]], 2).unwrap();
        let net = NetworkSpec::new(vec![a, b], m, vec![1.0, 1.0]).unwrap();
        let grids: Vec<Grid> = net
            .subsystems
            .iter()
            .map(|s| Grid::new(&s.state_set, 0.5).unwrap())
            .collect();
        let ov = internal_input_overrides(&net, &grids, 100).unwrap();
        let models: Vec<SymbolicModel> = net
            .subsystems
            .iter()
            .zip(&ov)
            .map(|(s, o)| build_symbolic_model(s, 0.5, 0.5, Some(o.clone())).unwrap())
            .collect();
        assert_eq!(models[0].num_grid(), 3);
        let nm = compose_symbolic_network(&models, &net).unwrap();
        let mut states = 0;
        for x0 in 0..3 {
            for x1 in 0..3 {
                for p0 in 0..2 {
                    for p1 in 0..2 {
                        for l in 0..2 {
                            states += 1;
                            let st = [(x0, Mode(p0), l), (x1, Mode(p1), l)];
                            for u0 in 0..2 {
                                for u1 in 0..2 {
                                    let u = [Mode(u0), Mode(u1)];
                                    let got = nm.successors(&st, &u).unwrap();
                                    let c0 = counter_update(Mode(p0), l, u[0], 2).ok();
                                    let c1 = counter_update(Mode(p1), l, u[1], 2).ok();
                                    let (Some(c0), Some(c1)) = (c0, c1) else {
                                        assert!(got.is_none());
                                        continue;
                                    };
                                    let g0 = models[0].grid.point(x0);
                                    let g1 = models[1].grid.point(x1);
                                    let mut want = Vec::new();
                                    for s0 in crate::abstraction::successors_of_image(
                                        &models[0].grid,
                                        &net.subsystems[0].modes[p0].apply(&g0, &g1),
                                    ) {
                                        for s1 in crate::abstraction::successors_of_image(
                                            &models[1].grid,
                                            &net.subsystems[1].modes[p1].apply(&g1, &g0),
                                        ) {
                                            want.push(vec![
                                                (s0 as usize, c0.0, c0.1),
                                                (s1 as usize, c1.0, c1.1),
                                            ]);
                                        }
                                    }
                                    assert_eq!(got.unwrap(), want);
                                }
                            }
                        }
                    }
                }
            }
        }
        assert!(states <= 200);
    }

    #[test]
    fn sampled_network_decrease() {
        let (net, models) = ring_models(3, 3.0, true);
        let q = traffic_q();
        let augs: Vec<AugStorageFn> = (0..3)
            .map(|_| AugStorageFn {
                alpha: PowerK::quadratic(1.0).unwrap(),
                sigma: 0.98,
                eps_offset: crate::certificates::gamma_bound(&SymMatrix::identity(2), &net.subsystems[0].state_set)
                    .unwrap()
                    .eval(3.0),
                r: q.clone(),
                shape: StorageShape::Common {
                    z: SymMatrix::identity(2),
                },
            })
            .collect();
        let alt = compose_alt_sim(&net, &augs).unwrap();
        let rep = validate_network_mc(&net, &models, &augs, &alt, 1000, 3).unwrap();
        assert!(rep.samples > 0);
        assert!(rep.max_violation <= 1e-8, "{rep:?}");
    }
}
