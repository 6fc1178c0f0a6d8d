//! Concrete switched subsystems and the set-quantization primitives.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcert::Matrix;

/// Slack used when snapping box bounds onto the η-lattice.
const SNAP_SLACK: f64 = 1e-9;

/// Axis-aligned box `∏ [lower_i, upper_i]`. A zero-dimensional box is
/// allowed and stands for the one-point set `ℝ⁰`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperbox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Hyperbox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Input(format!(
                "box bounds have dimensions {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !l.is_finite() || !u.is_finite() {
                return Err(Error::Input(format!("box bound {i} is not finite")));
            }
            if l >= u {
                return Err(Error::Input(format!(
                    "box bound {i}: lower {l} must be < upper {u}"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// Cube `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    /// Shortest edge; infinite for the zero-dimensional box.
    pub fn min_edge(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .fold(f64::INFINITY, f64::min)
    }

    /// Integer index range `ceil(lower/η) ..= floor(upper/η)` per axis.
    fn index_range(&self, eta: f64) -> (Vec<i64>, Vec<i64>) {
        let lo = self
            .lower
            .iter()
            .map(|l| (l / eta - SNAP_SLACK).ceil() as i64)
            .collect();
        let hi = self
            .upper
            .iter()
            .map(|u| (u / eta + SNAP_SLACK).floor() as i64)
            .collect();
        (lo, hi)
    }
}

/// Finite union of boxes of equal dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxUnion {
    boxes: Vec<Hyperbox>,
}

impl BoxUnion {
    pub fn new(boxes: Vec<Hyperbox>) -> Result<Self> {
        let first = boxes
            .first()
            .ok_or_else(|| Error::Input("box union must contain at least one box".into()))?;
        if boxes.iter().any(|b| b.dim() != first.dim()) {
            return Err(Error::Input("boxes in a union must share the dimension".into()));
        }
        Ok(Self { boxes })
    }

    pub fn single(b: Hyperbox) -> Self {
        Self { boxes: vec![b] }
    }

    /// The one-point set of dimension zero, used for absent internal inputs.
    pub fn point0() -> Self {
        Self::single(Hyperbox {
            lower: vec![],
            upper: vec![],
        })
    }

    pub fn boxes(&self) -> &[Hyperbox] {
        &self.boxes
    }

    pub fn dim(&self) -> usize {
        self.boxes[0].dim()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.boxes.iter().any(|b| b.contains(x))
    }

    /// Minimum over boxes of the shortest edge.
    pub fn span(&self) -> f64 {
        self.boxes
            .iter()
            .map(Hyperbox::min_edge)
            .fold(f64::INFINITY, f64::min)
    }

    /// Componentwise bounding box `(lower, upper)`.
    pub fn hull(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for b in &self.boxes {
            for i in 0..d {
                lo[i] = lo[i].min(b.lower[i]);
                hi[i] = hi[i].max(b.upper[i]);
            }
        }
        (lo, hi)
    }

    /// Euclidean diameter, bounded by that of the hull.
    pub fn diameter2(&self) -> f64 {
        let (lo, hi) = self.hull();
        lo.iter()
            .zip(&hi)
            .map(|(l, h)| (h - l) * (h - l))
            .sum::<f64>()
            .sqrt()
    }

    /// Shrinks every box by `r` on each side; boxes that vanish are dropped.
    /// Returns `None` when nothing is left.
    pub fn deflate(&self, r: f64) -> Option<BoxUnion> {
        let boxes: Vec<Hyperbox> = self
            .boxes
            .iter()
            .filter_map(|b| {
                let lower: Vec<f64> = b.lower.iter().map(|l| l + r).collect();
                let upper: Vec<f64> = b.upper.iter().map(|u| u - r).collect();
                lower
                    .iter()
                    .zip(&upper)
                    .all(|(l, u)| l <= u)
                    .then_some(Hyperbox { lower, upper })
            })
            .collect();
        (!boxes.is_empty()).then_some(BoxUnion { boxes })
    }

    /// Closed-membership test on a deflated union without constructing it.
    pub fn contains_deflated(&self, x: &[f64], r: f64) -> bool {
        self.boxes.iter().any(|b| {
            x.len() == b.dim()
                && x
                    .iter()
                    .zip(b.lower.iter().zip(&b.upper))
                    .all(|(v, (l, u))| *v >= l + r && *v <= u - r)
        })
    }
}

/// Free-function form of [`BoxUnion::span`].
pub fn span(s: &BoxUnion) -> f64 {
    s.span()
}

#[derive(Clone, Debug, PartialEq)]
enum GridRepr {
    /// Single box: mixed-radix addressing, nothing materialized.
    Dense { lo: Vec<i64>, extent: Vec<u64> },
    /// Union of boxes: sorted, deduplicated point list.
    Listed {
        points: Vec<i64>,
        index: HashMap<Vec<i64>, usize>,
    },
}

/// The quantized set `[S]_η`, stored as integer multi-indices `k` with
/// coordinates `k·η`, in lexicographic order.
#[derive(Clone, Debug)]
pub struct Grid {
    eta: f64,
    dim: usize,
    len: usize,
    repr: GridRepr,
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.eta.to_bits() == other.eta.to_bits()
            && self.dim == other.dim
            && self.len == other.len
            && (0..self.len).all(|i| self.index_of(i) == other.index_of(i))
    }
}

impl Grid {
    pub fn new(s: &BoxUnion, eta: f64) -> Result<Self> {
        check_eta(s, eta)?;
        let dim = s.dim();
        if let [b] = s.boxes() {
            let (lo, hi) = b.index_range(eta);
            let extent: Vec<u64> = lo.iter().zip(&hi).map(|(l, h)| (h - l + 1) as u64).collect();
            let len = extent.iter().try_fold(1usize, |acc, e| acc.checked_mul(*e as usize));
            let len = len.ok_or_else(|| Error::Parameter("grid size overflows".into()))?;
            return Ok(Self {
                eta,
                dim,
                len,
                repr: GridRepr::Dense { lo, extent },
            });
        }
        let mut all: Vec<Vec<i64>> = Vec::new();
        for b in s.boxes() {
            let (lo, hi) = b.index_range(eta);
            let mut k = lo.clone();
            loop {
                all.push(k.clone());
                if !advance(&mut k, &lo, &hi) {
                    break;
                }
            }
        }
        all.sort();
        all.dedup();
        let len = all.len();
        let index = all.iter().enumerate().map(|(i, k)| (k.clone(), i)).collect();
        Ok(Self {
            eta,
            dim,
            len,
            repr: GridRepr::Listed {
                points: all.concat(),
                index,
            },
        })
    }

    /// Number of points of `[S]_η` without materializing anything for a
    /// single box.
    pub fn count(s: &BoxUnion, eta: f64) -> Result<usize> {
        Ok(Self::new(s, eta)?.len())
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Multi-index of point `i`.
    pub fn index_of(&self, i: usize) -> Vec<i64> {
        match &self.repr {
            GridRepr::Dense { lo, extent } => {
                let mut k = vec![0i64; self.dim];
                let mut rem = i as u64;
                for d in (0..self.dim).rev() {
                    k[d] = lo[d] + (rem % extent[d]) as i64;
                    rem /= extent[d];
                }
                k
            }
            GridRepr::Listed { points, .. } => points[i * self.dim..(i + 1) * self.dim].to_vec(),
        }
    }

    /// Coordinates `k·η` of point `i`.
    pub fn point(&self, i: usize) -> Vec<f64> {
        self.index_of(i)
            .into_iter()
            .map(|k| k as f64 * self.eta)
            .collect()
    }

    /// Position of a multi-index on the grid.
    pub fn lookup(&self, k: &[i64]) -> Option<usize> {
        if k.len() != self.dim {
            return None;
        }
        match &self.repr {
            GridRepr::Dense { lo, extent } => {
                let mut idx: u64 = 0;
                for d in 0..self.dim {
                    let off = k[d] - lo[d];
                    if off < 0 || off as u64 >= extent[d] {
                        return None;
                    }
                    idx = idx * extent[d] + off as u64;
                }
                Some(idx as usize)
            }
            GridRepr::Listed { index, .. } => index.get(k).copied(),
        }
    }

    /// Per-axis bounding index range `(lo, hi)`.
    pub fn bounds(&self) -> (Vec<i64>, Vec<i64>) {
        match &self.repr {
            GridRepr::Dense { lo, extent } => {
                let hi = lo.iter().zip(extent).map(|(l, e)| l + *e as i64 - 1).collect();
                (lo.clone(), hi)
            }
            GridRepr::Listed { points, .. } => {
                let mut lo = vec![i64::MAX; self.dim];
                let mut hi = vec![i64::MIN; self.dim];
                for p in points.chunks(self.dim.max(1)).take(self.len) {
                    for d in 0..self.dim {
                        lo[d] = lo[d].min(p[d]);
                        hi[d] = hi[d].max(p[d]);
                    }
                }
                (lo, hi)
            }
        }
    }

    /// Rebuilds a grid from an explicit sorted list of multi-indices.
    pub(crate) fn from_indices(eta: f64, dim: usize, indices: Vec<Vec<i64>>) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Format("grid indices not strictly increasing".into()));
        }
        if indices.iter().any(|k| k.len() != dim) {
            return Err(Error::Format("grid index of wrong dimension".into()));
        }
        let len = indices.len();
        let index = indices.iter().enumerate().map(|(i, k)| (k.clone(), i)).collect();
        Ok(Self {
            eta,
            dim,
            len,
            repr: GridRepr::Listed {
                points: indices.concat(),
                index,
            },
        })
    }

    /// Rebuilds a dense single-box grid from its index bounds.
    pub(crate) fn from_dense(eta: f64, lo: Vec<i64>, hi: Vec<i64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(l, h)| h < l) {
            return Err(Error::Format("invalid dense grid bounds".into()));
        }
        let extent: Vec<u64> = lo.iter().zip(&hi).map(|(l, h)| (h - l + 1) as u64).collect();
        let len = extent.iter().product::<u64>() as usize;
        Ok(Self {
            eta,
            dim: lo.len(),
            len,
            repr: GridRepr::Dense { lo, extent },
        })
    }

    pub(crate) fn is_dense(&self) -> bool {
        matches!(self.repr, GridRepr::Dense { .. })
    }
}

fn check_eta(s: &BoxUnion, eta: f64) -> Result<()> {
    let sp = s.span();
    if !(eta > 0.0) || !eta.is_finite() || eta > sp {
        return Err(Error::Parameter(format!(
            "quantization parameter {eta} must lie in (0, span = {sp}]"
        )));
    }
    Ok(())
}

/// Odometer increment of `k` within `[lo, hi]`; false once exhausted.
fn advance(k: &mut [i64], lo: &[i64], hi: &[i64]) -> bool {
    for d in (0..k.len()).rev() {
        if k[d] < hi[d] {
            k[d] += 1;
            return true;
        }
        k[d] = lo[d];
    }
    false
}

/// `[S]_η` as explicit coordinates, lexicographic order.
pub fn quantize_set(s: &BoxUnion, eta: f64) -> Result<Vec<Vec<f64>>> {
    let g = Grid::new(s, eta)?;
    Ok((0..g.len()).map(|i| g.point(i)).collect())
}

/// Comparison function `s ↦ coeff·s^exp`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerK {
    pub coeff: f64,
    pub exp: f64,
}

impl PowerK {
    pub fn new(coeff: f64, exp: f64) -> Result<Self> {
        if !(coeff > 0.0 && coeff.is_finite() && exp > 0.0 && exp.is_finite()) {
            return Err(Error::Parameter(format!(
                "K-infinity power function needs coeff > 0 and exp > 0, got ({coeff}, {exp})"
            )));
        }
        Ok(Self { coeff, exp })
    }

    pub fn linear(coeff: f64) -> Result<Self> {
        Self::new(coeff, 1.0)
    }

    pub fn quadratic(coeff: f64) -> Result<Self> {
        Self::new(coeff, 2.0)
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.coeff * s.powf(self.exp)
    }

    pub fn inverse(&self) -> PowerK {
        PowerK {
            coeff: self.coeff.powf(-1.0 / self.exp),
            exp: 1.0 / self.exp,
        }
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &PowerK) -> PowerK {
        PowerK {
            coeff: self.coeff * inner.coeff.powf(self.exp),
            exp: self.exp * inner.exp,
        }
    }
}

/// Mode index, zero-based internally and printed one-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Mode(pub usize);

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0 + 1)
    }
}

/// Affine dynamics `x ↦ A x + D w + B` of a single mode.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeDynamics {
    pub a: Matrix,
    pub d: Matrix,
    pub b: Vec<f64>,
}

impl ModeDynamics {
    pub fn new(a: Matrix, d: Matrix, b: Vec<f64>) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n || d.rows() != n || b.len() != n {
            return Err(Error::Input(format!(
                "mode dynamics shapes inconsistent: A {}x{}, D {}x{}, B {}",
                a.rows(),
                a.cols(),
                d.rows(),
                d.cols(),
                b.len()
            )));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite affine term".into()));
        }
        Ok(Self { a, d, b })
    }

    pub fn apply(&self, x: &[f64], w: &[f64]) -> Vec<f64> {
        let mut y = self.a.mul_vec_unchecked(x);
        let dw = self.d.mul_vec_unchecked(w);
        for ((yi, di), bi) in y.iter_mut().zip(&dw).zip(&self.b) {
            *yi += di + bi;
        }
        y
    }
}

/// Black-box per-mode map for probing incremental properties of nonlinear
/// dynamics. Affine modes implement it too.
pub trait ModeMap: Send + Sync {
    fn apply(&self, x: &[f64], w: &[f64]) -> Vec<f64>;
}

impl ModeMap for ModeDynamics {
    fn apply(&self, x: &[f64], w: &[f64]) -> Vec<f64> {
        ModeDynamics::apply(self, x, w)
    }
}

impl<F> ModeMap for F
where
    F: Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync,
{
    fn apply(&self, x: &[f64], w: &[f64]) -> Vec<f64> {
        self(x, w)
    }
}

/// Discrete-time switched subsystem with internal inputs and outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct SwitchedSubsystem {
    pub state_set: BoxUnion,
    pub internal_input_set: BoxUnion,
    pub modes: Vec<ModeDynamics>,
    pub c1: Matrix,
    pub c2: Matrix,
    pub dwell_time: usize,
    /// Lipschitz bound `ℓ` of the external output map in the sup norm.
    pub lipschitz: PowerK,
}

impl SwitchedSubsystem {
    /// Validates shapes and fills `ℓ(s) = ‖C1‖∞·s` (or `s` when `C1 = 0`).
    pub fn new(
        state_set: BoxUnion,
        internal_input_set: BoxUnion,
        modes: Vec<ModeDynamics>,
        c1: Matrix,
        c2: Matrix,
        dwell_time: usize,
    ) -> Result<Self> {
        let l = c1.norm_inf();
        let lipschitz = PowerK::linear(if l > 0.0 { l } else { 1.0 })?;
        let sub = Self {
            state_set,
            internal_input_set,
            modes,
            c1,
            c2,
            dwell_time,
            lipschitz,
        };
        sub.validate()?;
        Ok(sub)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.state_dim();
        let q = self.internal_input_set.dim();
        if self.modes.is_empty() {
            return Err(Error::Input("subsystem needs at least one mode".into()));
        }
        if self.dwell_time == 0 {
            return Err(Error::Input("dwell time must be >= 1".into()));
        }
        for (p, m) in self.modes.iter().enumerate() {
            if m.a.rows() != n || m.d.cols() != q {
                return Err(Error::Input(format!(
                    "mode {}: expected A {n}x{n} and D {n}x{q}, got A {}x{} and D {}x{}",
                    p + 1,
                    m.a.rows(),
                    m.a.cols(),
                    m.d.rows(),
                    m.d.cols()
                )));
            }
        }
        if self.c1.cols() != n || self.c2.cols() != n {
            return Err(Error::Input(format!(
                "output maps must have {n} columns, got C1 {} and C2 {}",
                self.c1.cols(),
                self.c2.cols()
            )));
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.state_set.dim()
    }

    pub fn input_dim(&self) -> usize {
        self.internal_input_set.dim()
    }

    pub fn output_dim(&self) -> usize {
        self.c2.rows()
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub(crate) fn check_mode(&self, p: Mode) -> Result<&ModeDynamics> {
        self.modes.get(p.0).ok_or_else(|| {
            Error::Input(format!("mode {p} out of range 1..={}", self.modes.len()))
        })
    }
}

/// One step `A_p x + D_p w + B_p`.
pub fn step(sub: &SwitchedSubsystem, p: Mode, x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    let m = sub.check_mode(p)?;
    if x.len() != sub.state_dim() || w.len() != sub.input_dim() {
        return Err(Error::Input(format!(
            "step expects x of length {} and w of length {}, got {} and {}",
            sub.state_dim(),
            sub.input_dim(),
            x.len(),
            w.len()
        )));
    }
    Ok(m.apply(x, w))
}

/// External and internal outputs `(C1 x, C2 x)`.
pub fn outputs(sub: &SwitchedSubsystem, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok((sub.c1.mul_vec(x)?, sub.c2.mul_vec(x)?))
}

/// Dwell-time check. Time 0 counts as a switching instant, so the first
/// switch must also wait `k_d` steps.
pub fn validate_switching_signal(seq: &[Mode], k_d: usize) -> bool {
    let mut last = 0usize;
    for t in 1..seq.len() {
        if seq[t] != seq[t - 1] {
            if t - last < k_d {
                return false;
            }
            last = t;
        }
    }
    true
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    pub fn traffic_link() -> SwitchedSubsystem {
        let r = 1.0 / 3.0;
        let a = Matrix::from_rows(&[vec![0.9 - r, 0.0], vec![r, 0.65 - r]], 2).unwrap();
        let d = Matrix::column(&[r, 0.0]);
        let modes = vec![
            ModeDynamics::new(a.clone(), d.clone(), vec![0.0, 0.0]).unwrap(),
            ModeDynamics::new(a, d, vec![12.0, 0.0]).unwrap(),
        ];
        SwitchedSubsystem::new(
            BoxUnion::single(Hyperbox::cube(2, 0.0, 60.0).unwrap()),
            BoxUnion::single(Hyperbox::cube(1, 0.0, 60.0).unwrap()),
            modes,
            Matrix::identity(2),
            Matrix::from_rows(&[vec![0.0, 1.0]], 2).unwrap(),
            1,
        )
        .unwrap()
    }

    fn interval(lo: f64, hi: f64) -> BoxUnion {
        BoxUnion::single(Hyperbox::new(vec![lo], vec![hi]).unwrap())
    }

    #[test]
    fn step_examples() {
        let sub = traffic_link();
        let y = step(&sub, Mode(1), &[10.0, 10.0], &[5.0]).unwrap();
        assert_abs_diff_eq!(y[0], 19.0 + 1.0 / 3.0, epsilon = 1e-3);
        assert_abs_diff_eq!(y[1], 6.5, epsilon = 1e-3);
        assert!(matches!(
            step(&sub, Mode(0), &[1.0], &[0.0]),
            Err(Error::Input(_))
        ));
        assert!(step(&sub, Mode(2), &[1.0, 1.0], &[0.0]).is_err());
    }

    #[test]
    fn outputs_examples() {
        let sub = traffic_link();
        let (y1, y2) = outputs(&sub, &[3.0, 7.0]).unwrap();
        assert_eq!(y1, vec![3.0, 7.0]);
        assert_eq!(y2, vec![7.0]);
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize_set(&interval(0.0, 1.0), 0.5).unwrap(), vec![
            vec![0.0],
            vec![0.5],
            vec![1.0]
        ]);
        let sq = BoxUnion::single(Hyperbox::cube(2, 0.0, 1.0).unwrap());
        assert_eq!(quantize_set(&sq, 0.5).unwrap().len(), 9);
        assert_eq!(quantize_set(&interval(0.2, 0.9), 0.5).unwrap(), vec![vec![0.5]]);
        assert!(matches!(
            quantize_set(&interval(0.0, 1.0), 1.5),
            Err(Error::Parameter(_))
        ));
        assert!(quantize_set(&interval(0.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn traffic_grid_count() {
        let x = BoxUnion::single(Hyperbox::cube(2, 0.0, 60.0).unwrap());
        assert_eq!(Grid::count(&x, 0.03).unwrap(), 2001 * 2001);
    }

    #[test]
    fn span_examples() {
        let b = BoxUnion::single(Hyperbox::new(vec![0.0, 0.0], vec![2.0, 1.0]).unwrap());
        assert_eq!(span(&b), 1.0);
        let u = BoxUnion::new(vec![
            Hyperbox::new(vec![0.0], vec![1.0]).unwrap(),
            Hyperbox::new(vec![5.0], vec![5.3]).unwrap(),
        ])
        .unwrap();
        assert_abs_diff_eq!(span(&u), 0.3, epsilon = 1e-12);
        let t = BoxUnion::single(Hyperbox::cube(2, 0.0, 60.0).unwrap());
        assert_eq!(span(&t), 60.0);
    }

    #[test]
    fn union_grid_dedups_and_orders() {
        let u = BoxUnion::new(vec![
            Hyperbox::new(vec![0.0], vec![1.0]).unwrap(),
            Hyperbox::new(vec![0.5], vec![2.0]).unwrap(),
        ])
        .unwrap();
        let pts = quantize_set(&u, 0.5).unwrap();
        assert_eq!(pts, (0..5).map(|k| vec![k as f64 * 0.5]).collect::<Vec<_>>());
        let g = Grid::new(&u, 0.5).unwrap();
        assert_eq!(g.lookup(&[3]), Some(3));
        assert_eq!(g.lookup(&[7]), None);
    }

    #[test]
    fn switching_examples() {
        let m = |v: &[usize]| v.iter().map(|&p| Mode(p - 1)).collect::<Vec<_>>();
        assert!(validate_switching_signal(&m(&[1, 1, 1, 1]), 5));
        assert!(validate_switching_signal(&m(&[1, 1, 2, 2, 1]), 2));
        assert!(!validate_switching_signal(&m(&[1, 2, 1]), 2));
    }

    #[test]
    fn powerk_inverse_and_compose() {
        let f = PowerK::new(3.0, 2.0).unwrap();
        let g = f.inverse();
        assert_abs_diff_eq!(g.eval(f.eval(1.7)), 1.7, epsilon = 1e-12);
        let h = f.compose(&PowerK::linear(2.0).unwrap());
        assert_abs_diff_eq!(h.eval(1.5), 3.0 * 9.0, epsilon = 1e-12);
        assert!(PowerK::new(0.0, 1.0).is_err());
    }

    #[test]
    fn deflate_drops_empty_boxes() {
        let b = BoxUnion::single(Hyperbox::cube(2, 0.0, 1.0).unwrap());
        assert!(b.deflate(0.6).is_none());
        let d = b.deflate(0.25).unwrap();
        assert!(d.contains(&[0.25, 0.75]));
        assert!(!d.contains(&[0.2, 0.5]));
    }

    fn box_strategy() -> impl Strategy<Value = (Hyperbox, f64)> {
        (1usize..4, 0.1f64..1.0).prop_flat_map(|(dim, eta)| {
            (
                proptest::collection::vec((-3.0f64..3.0, 0.15f64..3.0), dim),
                Just(eta),
            )
                .prop_map(|(bounds, eta)| {
                    let lower: Vec<f64> = bounds.iter().map(|b| b.0).collect();
                    let upper: Vec<f64> = bounds.iter().map(|b| b.0 + b.1 + eta).collect();
                    (Hyperbox::new(lower, upper).unwrap(), eta)
                })
        })
    }

    proptest! {
        #[test]
        fn grid_count_matches_brute_force((b, eta) in box_strategy()) {
            let s = BoxUnion::single(b.clone());
            let pts = quantize_set(&s, eta).unwrap();
            let brute: usize = b.lower.iter().zip(&b.upper).map(|(l, u)| {
                (-1000i64..1000).filter(|k| {
                    let v = *k as f64 * eta;
                    v >= l - 1e-9 * eta.max(1.0) && v <= u + 1e-9 * eta.max(1.0)
                }).count()
            }).product();
            prop_assert_eq!(pts.len(), brute);
            prop_assert!(!pts.is_empty());
            for p in &pts {
                for (d, v) in p.iter().enumerate() {
                    let k = (v / eta).round();
                    prop_assert!((v - k * eta).abs() <= 1e-12);
                    prop_assert!(*v >= b.lower[d] - 1e-8 && *v <= b.upper[d] + 1e-8);
                }
            }
            prop_assert!(pts.windows(2).all(|w| w[0] < w[1]));
        }

        #[test]
        fn step_is_affine(
            a in proptest::collection::vec(-2.0f64..2.0, 4),
            d in proptest::collection::vec(-2.0f64..2.0, 2),
            b in proptest::collection::vec(-2.0f64..2.0, 2),
            x in proptest::collection::vec(-5.0f64..5.0, 4),
            w in proptest::collection::vec(-5.0f64..5.0, 2),
        ) {
            let mode = ModeDynamics::new(
                Matrix::new(2, 2, a).unwrap(), Matrix::column(&d), b).unwrap();
            let sub = SwitchedSubsystem::new(
                BoxUnion::single(Hyperbox::cube(2, -10.0, 10.0).unwrap()),
                BoxUnion::single(Hyperbox::cube(1, -10.0, 10.0).unwrap()),
                vec![mode], Matrix::identity(2), Matrix::identity(2), 1).unwrap();
            let p = Mode(0);
            let s = |x: &[f64], w: &[f64]| step(&sub, p, x, w).unwrap();
            let xs = [x[0] + x[2], x[1] + x[3]];
            let ws = [w[0] + w[1]];
            let lhs = s(&xs, &ws);
            let a1 = s(&x[..2], &w[..1]);
            let a2 = s(&x[2..], &w[1..]);
            let z = s(&[0.0, 0.0], &[0.0]);
            for i in 0..2 {
                prop_assert!((lhs[i] - a1[i] - a2[i] + z[i]).abs() <= 1e-12);
            }
        }
    }
}
