//! Safety controllers on symbolic models: maximal fixed point over the
//! model extended with a red-run counter, assume-guarantee input
//! restriction, and refinement to concrete states.
//!
//! # Controller file layout
//!
//! ```text
//! magic "SYMNETC\0", version u32
//! spec digest [u8; 32], model digest [u8; 32], shrink f64
//! state_dim u32, modes u64, k_d u64, fairness slots u64
//! varint record count, then per record:
//!   zigzag grid multi-index, varint mode, varint counter,
//!   varint fairness counter, u64 allowed-mode bitmask
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::abstraction::SymbolicModel;
use crate::certificates::sup_dist;
use crate::codec::{sha256, Reader, Writer};
use crate::error::{Error, Result};
use crate::matcert::Matrix;
use crate::system::{BoxUnion, Mode};
use crate::transition::counter_update;

const MAGIC: &[u8; 8] = b"SYMNETC\0";
pub const CONTROLLER_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct SafetySpec {
    /// Safe set over external outputs.
    pub safe_set: BoxUnion,
    /// Longest admissible run of consecutive steps in `red_mode`.
    pub fairness_limit: Option<usize>,
    pub red_mode: Mode,
}

impl SafetySpec {
    pub fn new(safe_set: BoxUnion, fairness_limit: Option<usize>, red_mode: Mode) -> Result<Self> {
        if safe_set.boxes().is_empty() {
            return Err(Error::Input("safe set is empty".into()));
        }
        if fairness_limit == Some(0) {
            return Err(Error::Input("fairness limit must be at least 1".into()));
        }
        Ok(Self {
            safe_set,
            fairness_limit,
            red_mode,
        })
    }

    pub fn digest(&self, shrink: f64) -> [u8; 32] {
        let mut w = Writer::default();
        w.varint(self.safe_set.boxes().len() as u64);
        for b in self.safe_set.boxes() {
            w.varint(b.dim() as u64);
            for v in b.lower.iter().chain(&b.upper) {
                w.f64(*v);
            }
        }
        w.varint(self.fairness_limit.map_or(0, |f| f as u64 + 1));
        w.varint(self.red_mode.0 as u64);
        w.f64(shrink);
        sha256(&w.buf)
    }
}

/// Symbolic model extended with a red-run counter. The counter equals the
/// length of the red run ending at the current step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpecProduct {
    pub grid_len: usize,
    pub modes: usize,
    pub k_d: usize,
    /// Number of counter values: `limit + 1`, or 1 without fairness.
    pub slots: usize,
    pub red_mode: Option<Mode>,
}

pub fn build_spec_product(model: &SymbolicModel, spec: &SafetySpec) -> Result<SpecProduct> {
    if spec.safe_set.dim() != model.c1.rows() {
        return Err(Error::Input(format!(
            "safe set has dimension {}, external outputs have {}",
            spec.safe_set.dim(),
            model.c1.rows()
        )));
    }
    if model.modes > 64 {
        return Err(Error::Input("at most 64 modes are supported".into()));
    }
    if spec.fairness_limit.is_some() && spec.red_mode.0 >= model.modes {
        return Err(Error::Input(format!("red mode {} does not exist", spec.red_mode)));
    }
    Ok(SpecProduct {
        grid_len: model.num_grid(),
        modes: model.modes,
        k_d: model.k_d,
        slots: spec.fairness_limit.map_or(1, |f| f + 1),
        red_mode: spec.fairness_limit.map(|_| spec.red_mode),
    })
}

impl SpecProduct {
    pub fn len(&self) -> usize {
        self.grid_len * self.modes * self.k_d * self.slots
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, p: Mode, l: usize, c: usize) -> usize {
        ((x * self.modes + p.0) * self.k_d + l) * self.slots + c
    }

    pub fn decode(&self, s: usize) -> (usize, Mode, usize, usize) {
        let c = s % self.slots;
        let r = s / self.slots;
        let l = r % self.k_d;
        let r = r / self.k_d;
        (r / self.modes, Mode(r % self.modes), l, c)
    }

    /// Counter value for a run that starts in mode `p`.
    pub fn initial_counter(&self, p: Mode) -> usize {
        match self.red_mode {
            Some(r) if r == p => 1,
            _ => 0,
        }
    }

    /// Counter after entering mode `p2`; `None` past the limit.
    #[inline]
    pub fn advance(&self, c: usize, p2: Mode) -> Option<usize> {
        match self.red_mode {
            Some(r) if r == p2 => (c + 1 < self.slots).then_some(c + 1),
            _ => Some(0),
        }
    }

    /// Counter values compatible with mode `p`.
    pub fn consistent(&self, p: Mode, c: usize) -> bool {
        match self.red_mode {
            Some(r) if r == p => c >= 1,
            Some(_) => c == 0,
            None => true,
        }
    }
}

/// Allowed-mode bitmasks over the product with the safety automaton; zero
/// outside the domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Controller {
    pub product: SpecProduct,
    pub moves: Vec<u64>,
    pub spec_digest: [u8; 32],
    pub model_digest: [u8; 32],
    pub shrink: f64,
    pub iterations: usize,
}

impl Controller {
    pub fn allowed(&self, x: usize, p: Mode, l: usize, c: usize) -> u64 {
        self.moves[self.product.index(x, p, l, c)]
    }

    pub fn domain_size(&self) -> usize {
        self.moves.iter().filter(|&&m| m != 0).count()
    }

    pub fn digest(&self) -> [u8; 32] {
        sha256(&self.to_bytes_with(None))
    }
}

pub fn modes_of(mask: u64) -> Vec<Mode> {
    (0..64).filter(|b| mask >> b & 1 == 1).map(Mode).collect()
}

/// Moves from `s` that keep every successor of every unmasked internal
/// input inside `inside`.
fn safe_moves(
    model: &SymbolicModel,
    prod: &SpecProduct,
    active: &[usize],
    inside: &[bool],
    s: usize,
) -> u64 {
    let (x, p, l, c) = prod.decode(s);
    let mut mask = 0u64;
    'u: for u in model.admissible_inputs(p, l) {
        let Ok((p2, l2)) = counter_update(p, l, u, prod.k_d) else {
            continue;
        };
        let Some(c2) = prod.advance(c, p2) else {
            continue;
        };
        for &w in active {
            let succ = model.successors(x, p, w);
            if succ.is_empty() {
                continue 'u;
            }
            if succ
                .iter()
                .any(|&t| !inside[prod.index(t as usize, p2, l2, c2)])
            {
                continue 'u;
            }
        }
        mask |= 1 << u.0;
    }
    mask
}

/// Greatest fixed point of the safety operator, with the safe set
/// deflated by `shrink` in the sup norm. Sweeps are Jacobi-style, so the
/// result does not depend on the worker count.
pub fn safety_fixed_point(model: &SymbolicModel, spec: &SafetySpec, shrink: f64) -> Result<Controller> {
    if !(shrink >= 0.0 && shrink.is_finite()) {
        return Err(Error::Parameter(format!("shrink must be nonnegative, got {shrink}")));
    }
    let prod = build_spec_product(model, spec)?;
    let active: Vec<usize> = (0..model.num_inputs()).filter(|&w| model.input_mask[w]).collect();
    let safe_grid: Vec<bool> = (0..model.num_grid())
        .into_par_iter()
        .map(|x| spec.safe_set.contains_deflated(&model.h1(x), shrink))
        .collect();
    let progressing: Vec<bool> = (0..model.num_grid() * model.modes)
        .into_par_iter()
        .map(|i| !model.is_non_progressing(i / model.modes, Mode(i % model.modes)))
        .collect();
    let mut inside: Vec<bool> = (0..prod.len())
        .into_par_iter()
        .map(|s| {
            let (x, p, _, c) = prod.decode(s);
            safe_grid[x] && progressing[x * model.modes + p.0] && prod.consistent(p, c)
        })
        .collect();
    let mut iterations = 0;
    let moves = loop {
        iterations += 1;
        let moves: Vec<u64> = (0..prod.len())
            .into_par_iter()
            .map(|s| if inside[s] { safe_moves(model, &prod, &active, &inside, s) } else { 0 })
            .collect();
        let next: Vec<bool> = moves.iter().map(|&m| m != 0).collect();
        log::debug!(
            "fixed point sweep {iterations}: {} states",
            next.iter().filter(|&&b| b).count()
        );
        if next == inside {
            break moves;
        }
        inside = next;
    };
    if moves.iter().all(|&m| m == 0) {
        return Err(Error::SynthesisInfeasible { iterations });
    }
    Ok(Controller {
        product: prod,
        moves,
        spec_digest: spec.digest(shrink),
        model_digest: model.digest(),
        shrink,
        iterations,
    })
}

/// Interval hull of `M_row · assumed`.
fn image_hull(m_row: &Matrix, assumed: &BoxUnion) -> (Vec<f64>, Vec<f64>) {
    let (lo, hi) = assumed.hull();
    (0..m_row.rows())
        .map(|r| {
            (0..m_row.cols()).fold((0.0, 0.0), |(a, b), c| {
                let v = m_row.get(r, c);
                let (p, q) = (v * lo[c], v * hi[c]);
                (a + p.min(q), b + p.max(q))
            })
        })
        .unzip()
}

/// Masks every internal input outside the interval hull of
/// `M_row · assumed`. States left without inputs become non-progressing.
pub fn restrict_internal_inputs(
    model: &SymbolicModel,
    assumed_output_set: &BoxUnion,
    m_row: &Matrix,
) -> Result<SymbolicModel> {
    if m_row.rows() != model.input_dim || m_row.cols() != assumed_output_set.dim() {
        return Err(Error::Input(format!(
            "coupling block is {}x{}, expected {}x{}",
            m_row.rows(),
            m_row.cols(),
            model.input_dim,
            assumed_output_set.dim()
        )));
    }
    let (lo, hi) = image_hull(m_row, assumed_output_set);
    let mask: Vec<bool> = model
        .inputs
        .iter()
        .zip(&model.input_mask)
        .map(|(w, &m)| {
            m && w
                .iter()
                .zip(lo.iter().zip(&hi))
                .all(|(v, (a, b))| *v >= a - 1e-9 && *v <= b + 1e-9)
        })
        .collect();
    let mut out = model.clone();
    out.set_input_mask(mask)?;
    let flagged = out.non_progressing_count();
    if flagged > 0 {
        log::warn!("input restriction leaves {flagged} (state, mode) pairs non-progressing");
    }
    Ok(out)
}

/// Checks that every guarantee covers the assumptions built on it: the
/// internal outputs of subsystem `j` under its safe set stay inside the
/// set that its neighbours assume. Requires `h₁ = identity`; other output
/// maps fall back to the whole state set.
pub fn check_assume_guarantee(
    state_sets: &[BoxUnion],
    c1: &[Matrix],
    c2: &[Matrix],
    specs: &[SafetySpec],
    assumed: &[BoxUnion],
) -> Result<()> {
    for j in 0..specs.len() {
        let (mut lo, mut hi) = state_sets[j].hull();
        let n = lo.len();
        if c1[j] == Matrix::identity(n) {
            let (slo, shi) = specs[j].safe_set.hull();
            for d in 0..n {
                lo[d] = lo[d].max(slo[d]);
                hi[d] = hi[d].min(shi[d]);
            }
        }
        let guarantee = BoxUnion::single(crate::system::Hyperbox {
            lower: lo,
            upper: hi,
        });
        let (ylo, yhi) = image_hull(&c2[j], &guarantee);
        let (alo, ahi) = assumed[j].hull();
        for d in 0..ylo.len() {
            if ylo[d] < alo[d] - 1e-9 || yhi[d] > ahi[d] + 1e-9 {
                return Err(Error::Input(format!(
                    "subsystem {} guarantees internal output {} in [{}, {}], neighbours assume [{}, {}]",
                    j + 1,
                    d + 1,
                    ylo[d],
                    yhi[d],
                    alo[d],
                    ahi[d]
                )));
            }
        }
    }
    Ok(())
}

/// Allowed modes at a concrete state: the moves at its nearest grid point.
pub fn refine_controller(
    ctrl: &Controller,
    model: &SymbolicModel,
    x: &[f64],
    p: Mode,
    l: usize,
    c: usize,
) -> Result<Vec<Mode>> {
    let Some(g) = model.nearest_grid(x) else {
        return Err(Error::RefinementDomain {
            step: None,
            detail: format!("state {x:?} has no grid neighbour"),
        });
    };
    if sup_dist(&model.grid.point(g), x) > model.eta / 2.0 + 1e-9 {
        return Err(Error::RefinementDomain {
            step: None,
            detail: format!("state {x:?} is farther than eta/2 from the grid"),
        });
    }
    if p.0 >= ctrl.product.modes || l >= ctrl.product.k_d || c >= ctrl.product.slots {
        return Err(Error::RefinementDomain {
            step: None,
            detail: format!("mode {p}, counter {l}, fairness counter {c} out of range"),
        });
    }
    let mask = ctrl.allowed(g, p, l, c);
    if mask == 0 {
        return Err(Error::RefinementDomain {
            step: None,
            detail: format!(
                "grid point {:?} (mode {p}, counter {l}, fairness {c}) is outside the controller domain",
                model.grid.point(g)
            ),
        });
    }
    Ok(modes_of(mask))
}

impl Controller {
    fn to_bytes_with(&self, model: Option<&SymbolicModel>) -> Vec<u8> {
        let prod = &self.product;
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(CONTROLLER_FORMAT_VERSION);
        w.bytes(&self.spec_digest);
        w.bytes(&self.model_digest);
        w.f64(self.shrink);
        let dim = model.map_or(0, |m| m.grid.dim());
        w.u32(dim as u32);
        w.u64(prod.modes as u64);
        w.u64(prod.k_d as u64);
        w.u64(prod.slots as u64);
        let records: Vec<usize> = (0..self.moves.len()).filter(|&s| self.moves[s] != 0).collect();
        w.varint(records.len() as u64);
        for s in records {
            let (x, p, l, c) = prod.decode(s);
            match model {
                Some(m) => {
                    for k in m.grid.index_of(x) {
                        w.zigzag(k);
                    }
                }
                None => w.varint(x as u64),
            }
            w.varint(p.0 as u64);
            w.varint(l as u64);
            w.varint(c as u64);
            w.u64(self.moves[s]);
        }
        w.buf
    }

    pub fn to_bytes(&self, model: &SymbolicModel) -> Vec<u8> {
        self.to_bytes_with(Some(model))
    }

    /// Reads a controller written for `model`; the model digest must match.
    pub fn from_bytes(bytes: &[u8], model: &SymbolicModel) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a controller file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CONTROLLER_FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CONTROLLER_FORMAT_VERSION,
            });
        }
        let spec_digest: [u8; 32] = r.take(32)?.try_into().unwrap();
        let model_digest: [u8; 32] = r.take(32)?.try_into().unwrap();
        if model_digest != model.digest() {
            return Err(Error::Format("controller was synthesized for a different model".into()));
        }
        let shrink = r.f64()?;
        let dim = r.u32()? as usize;
        let modes = r.u64()? as usize;
        let k_d = r.u64()? as usize;
        let slots = r.u64()? as usize;
        if dim != model.grid.dim() || modes != model.modes || k_d != model.k_d || slots == 0 {
            return Err(Error::Format("controller header does not match the model".into()));
        }
        let product = SpecProduct {
            grid_len: model.num_grid(),
            modes,
            k_d,
            slots,
            red_mode: None,
        };
        let mut moves = vec![0u64; product.len()];
        let n = r.len(dim + 11)?;
        for _ in 0..n {
            let k: Vec<i64> = (0..dim).map(|_| r.zigzag()).collect::<Result<_>>()?;
            let x = model
                .grid
                .lookup(&k)
                .ok_or_else(|| Error::Format(format!("record index {k:?} is not on the grid")))?;
            let p = r.varint()? as usize;
            let l = r.varint()? as usize;
            let c = r.varint()? as usize;
            if p >= modes || l >= k_d || c >= slots {
                return Err(Error::Format("controller record out of range".into()));
            }
            moves[product.index(x, Mode(p), l, c)] = r.u64()?;
        }
        if r.remaining() != 0 {
            return Err(Error::Format("trailing bytes after controller records".into()));
        }
        Ok(Self {
            product,
            moves,
            spec_digest,
            model_digest,
            shrink,
            iterations: 0,
        })
    }

    /// One row per domain element: grid point, mode, counters, allowed modes.
    pub fn to_csv(&self, model: &SymbolicModel) -> String {
        let dim = model.grid.dim();
        let mut out = String::new();
        let head: Vec<String> = (1..=dim).map(|d| format!("x_{d}")).collect();
        let _ = writeln!(out, "{},mode,counter,fairness,allowed", head.join(","));
        for (s, &m) in self.moves.iter().enumerate() {
            if m == 0 {
                continue;
            }
            let (x, p, l, c) = self.product.decode(s);
            let pt: Vec<String> = model.grid.point(x).iter().map(|v| format!("{v:.9}")).collect();
            let allowed: Vec<String> = modes_of(m).iter().map(|q| q.to_string()).collect();
            let _ = writeln!(out, "{},{p},{l},{c},{}", pt.join(","), allowed.join("|"));
        }
        out
    }
}

pub fn save_controller(ctrl: &Controller, model: &SymbolicModel, path: &Path) -> Result<()> {
    fs::write(path, ctrl.to_bytes(model))?;
    Ok(())
}

pub fn load_controller(path: &Path, model: &SymbolicModel) -> Result<Controller> {
    Controller::from_bytes(&fs::read(path)?, model)
}
