//! Finite symbolic models over an η-grid with full η-ball successor sets.
//!
//! A symbolic state is `(x̂, p, l)` with `x̂` a grid index. Successors of
//! `(x̂, p, ŵ)` do not depend on the counter, so they are stored once per
//! `(x̂, p, ŵ)` in a CSR layout; the `(p′, l′)` part comes from
//! [`counter_update`].
//!
//! # File layout
//!
//! ```text
//! magic   8   "SYMNETM\0"
//! version u32
//! eta f64, varpi f64, k_d u64, modes u64, state_dim u32, input_dim u32
//! kind u8 (0 dense box grid, 1 listed), lo[i64; dim], hi[i64; dim]
//! body_len u64, digest [u8; 32] = sha256(body)
//! body:
//!   listed grids: varint count, then zigzag coordinate deltas per point
//!   inputs: varint count, f64 bits per coordinate
//!   mask: one byte per input
//!   C1, C2: varint rows, varint cols, f64 bits
//!   successor lists: per key, varint length, varint first, varint gaps
//! ```
//! All integers are little-endian.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::codec::{sha256, Reader, Writer};
use crate::error::{Error, Result};
use crate::matcert::Matrix;
use crate::system::{quantize_set, Grid, Mode, SwitchedSubsystem};
use crate::transition::counter_update;

/// Slack on the sup-norm ball test `‖f − x̂′‖∞ ≤ η`.
pub const BALL_SLACK: f64 = 1e-12;
/// Resolution used to match internal-input points by value.
const INPUT_KEY_RES: f64 = 1e-9;
/// Largest `(x̂, p, ŵ)` table built in memory.
const MAX_KEYS: u128 = 1 << 30;

const MAGIC: &[u8; 8] = b"SYMNETM\0";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct SymbolicModel {
    pub grid: Grid,
    pub eta: f64,
    pub varpi: f64,
    pub k_d: usize,
    pub modes: usize,
    /// Internal-input points `Ŵ`, sorted lexicographically.
    pub inputs: Vec<Vec<f64>>,
    pub input_dim: usize,
    /// `false` marks internal inputs removed by assume-guarantee restriction.
    pub input_mask: Vec<bool>,
    pub c1: Matrix,
    pub c2: Matrix,
    offsets: Vec<u64>,
    targets: Vec<u32>,
    input_index: HashMap<Vec<i64>, usize>,
}

fn input_key(w: &[f64]) -> Vec<i64> {
    w.iter().map(|v| (v / INPUT_KEY_RES).round() as i64).collect()
}

fn build_input_index(inputs: &[Vec<f64>]) -> HashMap<Vec<i64>, usize> {
    inputs
        .iter()
        .enumerate()
        .map(|(i, w)| (input_key(w), i))
        .collect()
}

/// Every grid point within sup-norm distance `η` of `image`, in grid
/// order. At most three candidates per axis are tested.
pub fn successors_of_image(grid: &Grid, image: &[f64]) -> Vec<u32> {
    let eta = grid.eta();
    let dim = grid.dim();
    let mut ranges = Vec::with_capacity(dim);
    for &y in image {
        let lo = ((y - eta) / eta - 1e-9).ceil() as i64;
        let hi = ((y + eta) / eta + 1e-9).floor() as i64;
        let ks: Vec<i64> = (lo..=hi)
            .filter(|k| (y - *k as f64 * eta).abs() <= eta + BALL_SLACK)
            .collect();
        if ks.is_empty() {
            return Vec::new();
        }
        ranges.push(ks);
    }
    let mut out = Vec::new();
    let mut pos = vec![0usize; dim];
    let mut k: Vec<i64> = ranges.iter().map(|r| r[0]).collect();
    loop {
        if let Some(i) = grid.lookup(&k) {
            out.push(i as u32);
        }
        let mut d = dim;
        loop {
            if d == 0 {
                return out;
            }
            d -= 1;
            if pos[d] + 1 < ranges[d].len() {
                pos[d] += 1;
                k[d] = ranges[d][pos[d]];
                break;
            }
            pos[d] = 0;
            k[d] = ranges[d][0];
        }
    }
}

/// Grid points `x̂′` with `‖f_p(x̂, ŵ) − x̂′‖∞ ≤ η`, as coordinates.
pub fn abstract_successors(
    sub: &SwitchedSubsystem,
    grid: &Grid,
    x_hat: usize,
    p: Mode,
    w_hat: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let image = crate::system::step(sub, p, &grid.point(x_hat), w_hat)?;
    Ok(successors_of_image(grid, &image)
        .into_iter()
        .map(|i| grid.point(i as usize))
        .collect())
}

/// Builds the symbolic model. With no override, `Ŵ = [𝕎]_ϖ`; override
/// points must lie in `𝕎` (they are sorted and deduplicated).
pub fn build_symbolic_model(
    sub: &SwitchedSubsystem,
    eta: f64,
    varpi: f64,
    internal_input_override: Option<Vec<Vec<f64>>>,
) -> Result<SymbolicModel> {
    sub.validate()?;
    let grid = Grid::new(&sub.state_set, eta)?;
    if grid.len() > u32::MAX as usize {
        return Err(Error::Parameter(format!(
            "grid with {} points exceeds the supported size",
            grid.len()
        )));
    }
    let wset = &sub.internal_input_set;
    let q = wset.dim();
    let mut inputs = match internal_input_override {
        Some(points) => {
            for w in &points {
                let inside = w.len() == q
                    && wset.boxes().iter().any(|b| {
                        w.iter()
                            .zip(b.lower.iter().zip(&b.upper))
                            .all(|(v, (l, u))| *v >= l - 1e-9 && *v <= u + 1e-9)
                    });
                if !inside {
                    return Err(Error::Parameter(format!(
                        "internal input override point {w:?} is not in the internal input set"
                    )));
                }
            }
            points
        }
        None if q == 0 => vec![vec![]],
        None => {
            if !(varpi > 0.0) {
                return Err(Error::Parameter(
                    "internal input quantization must be > 0 without an override".into(),
                ));
            }
            quantize_set(wset, varpi)?
        }
    };
    if !(varpi >= 0.0 && varpi <= wset.span()) {
        return Err(Error::Parameter(format!(
            "internal input quantization {varpi} must lie in [0, span = {}]",
            wset.span()
        )));
    }
    inputs.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    inputs.dedup_by(|a, b| input_key(a) == input_key(b));
    if inputs.is_empty() {
        return Err(Error::Parameter("internal input set is empty".into()));
    }

    let m = sub.num_modes();
    let nw = inputs.len();
    let keys = grid.len() as u128 * m as u128 * nw as u128;
    if keys > MAX_KEYS {
        return Err(Error::Parameter(format!(
            "transition table needs {keys} (state, mode, input) keys, limit is {MAX_KEYS}; \
             coarsen eta or varpi"
        )));
    }
    let per_state: Vec<Vec<Vec<u32>>> = (0..grid.len())
        .into_par_iter()
        .map(|x| {
            let xp = grid.point(x);
            let mut lists = Vec::with_capacity(m * nw);
            for mode in &sub.modes {
                let ax = mode.a.mul_vec_unchecked(&xp);
                for w in &inputs {
                    // Same operation order as `ModeDynamics::apply`.
                    let dw = mode.d.mul_vec_unchecked(w);
                    let image: Vec<f64> = ax
                        .iter()
                        .zip(&dw)
                        .zip(&mode.b)
                        .map(|((a, d), b)| a + (d + b))
                        .collect();
                    lists.push(successors_of_image(&grid, &image));
                }
            }
            lists
        })
        .collect();

    let mut offsets = Vec::with_capacity(grid.len() * m * nw + 1);
    offsets.push(0u64);
    let total: usize = per_state.iter().flatten().map(Vec::len).sum();
    let mut targets = Vec::with_capacity(total);
    for lists in per_state {
        for l in lists {
            targets.extend_from_slice(&l);
            offsets.push(targets.len() as u64);
        }
    }
    let input_index = build_input_index(&inputs);
    Ok(SymbolicModel {
        grid,
        eta,
        varpi,
        k_d: sub.dwell_time,
        modes: m,
        input_mask: vec![true; nw],
        input_dim: q,
        inputs,
        c1: sub.c1.clone(),
        c2: sub.c2.clone(),
        offsets,
        targets,
        input_index,
    })
}

impl SymbolicModel {
    pub fn num_grid(&self) -> usize {
        self.grid.len()
    }

    pub fn num_inputs(&self) -> usize {
        self.inputs.len()
    }

    /// `|grid| · m · k_d`.
    pub fn num_states(&self) -> usize {
        self.grid.len() * self.modes * self.k_d
    }

    pub fn num_transitions(&self) -> usize {
        self.targets.len()
    }

    #[inline]
    fn key(&self, x: usize, p: usize, w: usize) -> usize {
        (x * self.modes + p) * self.inputs.len() + w
    }

    /// Successor grid indices of `(x̂, p, ŵ)`, ignoring the input mask.
    #[inline]
    pub fn successors(&self, x: usize, p: Mode, w: usize) -> &[u32] {
        let k = self.key(x, p.0, w);
        &self.targets[self.offsets[k] as usize..self.offsets[k + 1] as usize]
    }

    /// Full transition `((x̂, p, l), u, ŵ) ↦ {(x̂′, p′, l′)}`; `None` when `u`
    /// is not admissible or `ŵ` is masked out.
    pub fn transition(
        &self,
        x: usize,
        p: Mode,
        l: usize,
        u: Mode,
        w: usize,
    ) -> Option<(Mode, usize, &[u32])> {
        if !self.input_mask[w] || u.0 >= self.modes {
            return None;
        }
        let (p2, l2) = counter_update(p, l, u, self.k_d).ok()?;
        Some((p2, l2, self.successors(x, p, w)))
    }

    /// Admissible external inputs at counter `l` in mode `p`.
    pub fn admissible_inputs(&self, p: Mode, l: usize) -> Vec<Mode> {
        if l + 1 < self.k_d {
            vec![p]
        } else {
            (0..self.modes).map(Mode).collect()
        }
    }

    /// True when every unmasked internal input leaves the grid under mode `p`.
    pub fn is_non_progressing(&self, x: usize, p: Mode) -> bool {
        (0..self.inputs.len())
            .filter(|&w| self.input_mask[w])
            .all(|w| self.successors(x, p, w).is_empty())
    }

    /// Count of `(x̂, p)` pairs flagged non-progressing.
    pub fn non_progressing_count(&self) -> usize {
        (0..self.grid.len())
            .flat_map(|x| (0..self.modes).map(move |p| (x, p)))
            .filter(|&(x, p)| self.is_non_progressing(x, Mode(p)))
            .count()
    }

    pub fn h1(&self, x: usize) -> Vec<f64> {
        self.c1.mul_vec_unchecked(&self.grid.point(x))
    }

    pub fn h2(&self, x: usize) -> Vec<f64> {
        self.c2.mul_vec_unchecked(&self.grid.point(x))
    }

    pub fn input_index_of(&self, w: &[f64]) -> Option<usize> {
        self.input_index.get(&input_key(w)).copied()
    }

    /// Nearest grid point in the sup norm; axis ties go to the smaller index.
    pub fn nearest_grid(&self, x: &[f64]) -> Option<usize> {
        nearest_grid(&self.grid, x)
    }

    /// Replaces the input mask; used by assume-guarantee restriction.
    pub fn set_input_mask(&mut self, mask: Vec<bool>) -> Result<()> {
        if mask.len() != self.inputs.len() {
            return Err(Error::Input("input mask has wrong length".into()));
        }
        self.input_mask = mask;
        Ok(())
    }

    /// Canonical body bytes (everything the digest covers).
    fn body(&self) -> Vec<u8> {
        let mut w = Writer::default();
        if !self.grid.is_dense() {
            w.varint(self.grid.len() as u64);
            let mut prev = vec![0i64; self.grid.dim()];
            for i in 0..self.grid.len() {
                let k = self.grid.index_of(i);
                for d in 0..k.len() {
                    w.zigzag(k[d] - prev[d]);
                }
                prev = k;
            }
        }
        w.varint(self.inputs.len() as u64);
        for p in &self.inputs {
            for v in p {
                w.f64(*v);
            }
        }
        for &b in &self.input_mask {
            w.u8(b as u8);
        }
        for c in [&self.c1, &self.c2] {
            w.varint(c.rows() as u64);
            w.varint(c.cols() as u64);
            for v in c.data() {
                w.f64(*v);
            }
        }
        for k in 0..self.offsets.len() - 1 {
            let s = &self.targets[self.offsets[k] as usize..self.offsets[k + 1] as usize];
            w.varint(s.len() as u64);
            let mut prev = 0u32;
            for (j, t) in s.iter().enumerate() {
                w.varint(u64::from(if j == 0 { *t } else { t - prev }));
                prev = *t;
            }
        }
        w.buf
    }

    /// SHA-256 of the canonical body.
    pub fn digest(&self) -> [u8; 32] {
        sha256(&self.body())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let body = self.body();
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(MODEL_FORMAT_VERSION);
        w.f64(self.eta);
        w.f64(self.varpi);
        w.u64(self.k_d as u64);
        w.u64(self.modes as u64);
        w.u32(self.grid.dim() as u32);
        w.u32(self.input_dim as u32);
        w.u8(if self.grid.is_dense() { 0 } else { 1 });
        let (lo, hi) = self.grid.bounds();
        for v in lo.iter().chain(&hi) {
            w.i64(*v);
        }
        w.u64(body.len() as u64);
        w.bytes(&sha256(&body));
        w.bytes(&body);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a symbolic model file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != MODEL_FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let eta = r.f64()?;
        let varpi = r.f64()?;
        let k_d = r.u64()? as usize;
        let modes = r.u64()? as usize;
        let dim = r.u32()? as usize;
        let input_dim = r.u32()? as usize;
        let kind = r.u8()?;
        let mut lo = Vec::with_capacity(dim);
        for _ in 0..dim {
            lo.push(r.i64()?);
        }
        let mut hi = Vec::with_capacity(dim);
        for _ in 0..dim {
            hi.push(r.i64()?);
        }
        let body_len = r.u64()? as usize;
        let digest: [u8; 32] = r.take(32)?.try_into().unwrap();
        let body = r.take(body_len)?;
        if r.remaining() != 0 {
            return Err(Error::Format("trailing bytes after model body".into()));
        }
        if sha256(body) != digest {
            return Err(Error::Format("model digest mismatch".into()));
        }
        if k_d == 0 || modes == 0 || !(eta > 0.0) {
            return Err(Error::Format("invalid model header".into()));
        }

        let mut r = Reader::new(body);
        let grid = match kind {
            0 => Grid::from_dense(eta, lo, hi)?,
            1 => {
                let n = r.len(dim)?;
                let mut pts = Vec::with_capacity(n);
                let mut prev = vec![0i64; dim];
                for _ in 0..n {
                    let mut k = Vec::with_capacity(dim);
                    for v in &prev {
                        k.push(v + r.zigzag()?);
                    }
                    prev = k.clone();
                    pts.push(k);
                }
                Grid::from_indices(eta, dim, pts)?
            }
            _ => return Err(Error::Format(format!("unknown grid kind {kind}"))),
        };
        let nw = r.len(8 * input_dim)?;
        let mut inputs = Vec::with_capacity(nw);
        for _ in 0..nw {
            let mut p = Vec::with_capacity(input_dim);
            for _ in 0..input_dim {
                p.push(r.f64()?);
            }
            inputs.push(p);
        }
        let input_mask = r.take(nw)?.iter().map(|b| *b != 0).collect();
        let mut mats = Vec::with_capacity(2);
        for _ in 0..2 {
            let rows = r.varint()? as usize;
            let cols = r.varint()? as usize;
            let n = rows
                .checked_mul(cols)
                .filter(|n| n * 8 <= r.remaining())
                .ok_or_else(|| Error::Format("matrix size exceeds input".into()))?;
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(r.f64()?);
            }
            mats.push(Matrix::new(rows, cols, data).map_err(|e| Error::Format(e.to_string()))?);
        }
        let c2 = mats.pop().unwrap();
        let c1 = mats.pop().unwrap();
        let keys = grid.len() * modes * nw;
        let mut offsets = Vec::with_capacity(keys + 1);
        offsets.push(0u64);
        let mut targets = Vec::new();
        for _ in 0..keys {
            let n = r.len(1)?;
            let mut prev = 0u64;
            for j in 0..n {
                let v = r.varint()?;
                let t = if j == 0 { v } else { prev + v };
                if t >= grid.len() as u64 {
                    return Err(Error::Format("successor index off the grid".into()));
                }
                targets.push(t as u32);
                prev = t;
            }
            offsets.push(targets.len() as u64);
        }
        if r.remaining() != 0 {
            return Err(Error::Format("trailing bytes in model body".into()));
        }
        let input_index = build_input_index(&inputs);
        Ok(SymbolicModel {
            grid,
            eta,
            varpi,
            k_d,
            modes,
            inputs,
            input_dim,
            input_mask,
            c1,
            c2,
            offsets,
            targets,
            input_index,
        })
    }
}

/// Nearest grid index in the sup norm, or `None` if that point is off-grid.
pub fn nearest_grid(grid: &Grid, x: &[f64]) -> Option<usize> {
    if x.len() != grid.dim() {
        return None;
    }
    let eta = grid.eta();
    let k: Vec<i64> = x
        .iter()
        .map(|v| (v / eta - 0.5 - 1e-9).ceil() as i64)
        .collect();
    grid.lookup(&k)
}

pub fn persist(model: &SymbolicModel, path: &Path) -> Result<()> {
    fs::write(path, model.to_bytes())?;
    Ok(())
}

pub fn load(path: &Path) -> Result<SymbolicModel> {
    SymbolicModel::from_bytes(&fs::read(path)?)
}

/// Digest recorded in a model file header, without decoding the body.
pub fn header_digest(bytes: &[u8]) -> Result<[u8; 32]> {
    let mut r = Reader::new(bytes);
    r.take(8 + 4 + 8 + 8 + 8 + 8)?;
    let dim = r.u32()? as usize;
    r.take(4 + 1 + 16 * dim + 8)?;
    Ok(r.take(32)?.try_into().unwrap())
}
