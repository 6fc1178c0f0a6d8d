//! Transition-system semantics over augmented states `(x, p, l)`.

use crate::error::{Error, Result};
use crate::system::{outputs, step, validate_switching_signal, Mode, SwitchedSubsystem};

/// Augmented state: continuous state, active mode and dwell counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AugState {
    pub x: Vec<f64>,
    pub p: Mode,
    pub l: usize,
}

/// Mode and counter after applying external input `u` (the requested next
/// mode) in `(p, l)`. Shared by the concrete and the symbolic semantics.
pub fn counter_update(p: Mode, l: usize, u: Mode, k_d: usize) -> Result<(Mode, usize)> {
    let top = k_d - 1;
    if l < top {
        if u != p {
            return Err(Error::DwellViolation {
                from: p.0 + 1,
                to: u.0 + 1,
                counter: l,
                limit: top,
            });
        }
        Ok((p, l + 1))
    } else if u == p {
        Ok((p, top))
    } else {
        Ok((u, 0))
    }
}

pub fn successor_concrete(
    sub: &SwitchedSubsystem,
    s: &AugState,
    u: Mode,
    w: &[f64],
) -> Result<AugState> {
    sub.check_mode(u)?;
    let (p, l) = counter_update(s.p, s.l, u, sub.dwell_time)?;
    let x = step(sub, s.p, &s.x, w)?;
    Ok(AugState { x, p, l })
}

/// A finite run: `horizon + 1` augmented states and their external outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Run {
    pub states: Vec<AugState>,
    pub outputs: Vec<Vec<f64>>,
}

/// Iterates the transition system from `(x0, mode_seq[0], 0)`. The input
/// at step `k` is `mode_seq[k + 1]`, or the current mode past the end.
pub fn generate_run(
    sub: &SwitchedSubsystem,
    x0: &[f64],
    mode_seq: &[Mode],
    w_seq: &[Vec<f64>],
    horizon: usize,
) -> Result<Run> {
    let p0 = *mode_seq
        .first()
        .ok_or_else(|| Error::Input("mode sequence is empty".into()))?;
    if mode_seq.len() < horizon || w_seq.len() < horizon {
        return Err(Error::Input(format!(
            "sequences shorter than horizon {horizon} (modes {}, inputs {})",
            mode_seq.len(),
            w_seq.len()
        )));
    }
    sub.check_mode(p0)?;
    let mut s = AugState {
        x: x0.to_vec(),
        p: p0,
        l: 0,
    };
    let mut run = Run {
        states: Vec::with_capacity(horizon + 1),
        outputs: Vec::with_capacity(horizon + 1),
    };
    run.outputs.push(outputs(sub, &s.x)?.0);
    run.states.push(s.clone());
    for (k, w) in w_seq.iter().take(horizon).enumerate() {
        let u = mode_seq.get(k + 1).copied().unwrap_or(s.p);
        s = successor_concrete(sub, &s, u, w)?;
        run.outputs.push(outputs(sub, &s.x)?.0);
        run.states.push(s.clone());
    }
    Ok(run)
}

/// Compares the raw difference equation against the transition-system run
/// with exact float equality.
pub fn check_run_equivalence(
    sub: &SwitchedSubsystem,
    x0: &[f64],
    mode_seq: &[Mode],
    w_seq: &[Vec<f64>],
    horizon: usize,
) -> bool {
    if !validate_switching_signal(mode_seq, sub.dwell_time) {
        return false;
    }
    let Ok(run) = generate_run(sub, x0, mode_seq, w_seq, horizon) else {
        return false;
    };
    let mut x = x0.to_vec();
    let Ok((y, _)) = outputs(sub, &x) else {
        return false;
    };
    if y != run.outputs[0] {
        return false;
    }
    for k in 0..horizon {
        x = match step(sub, mode_seq[k], &x, &w_seq[k]) {
            Ok(v) => v,
            Err(_) => return false,
        };
        match outputs(sub, &x) {
            Ok((y, _)) if y == run.outputs[k + 1] => {}
            _ => return false,
        }
    }
    true
}
