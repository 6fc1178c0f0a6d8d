//! Network configuration files (TOML).
//!
//! ```toml
//! [network]
//! count = 3                     # copies of a lone [[subsystem]] template
//! weights = [1.0]               # one per subsystem, or one for all
//! [network.coupling]
//! kind = "ring"                 # ring | all_to_all | triples
//! value = 1.0                   # block value for ring / all_to_all
//! entries = [[1, 2, 0.5]]       # 1-based (row, col, value) for triples
//!
//! [[subsystem]]
//! state_set = [{ lower = [0, 0], upper = [60, 60] }]
//! internal_input_set = [{ lower = [0], upper = [60] }]   # omit to derive from the coupling
//! c1 = [[1, 0], [0, 1]]
//! c2 = [[0, 1]]
//! [[subsystem.mode]]
//! a = [[0.5667, 0], [0.3333, 0.3167]]
//! d = [[0.3333], [0]]
//! b = [0, 0]
//! [subsystem.certificate]
//! epsilon = 2.0
//! [[subsystem.certificate.mode]]
//! z = [[1, 0], [0, 1]]
//! q = [[0.3527, 0.0937], [0.0937, -0.6785]]
//! kappa = 0.98
//! alpha = { coeff = 1.0, exp = 2.0 }
//!
//! [abstraction]
//! eta = 1.0
//! varpi = 1.0
//! k_d = 1
//! inputs = "coupled"            # coupled | grid
//!
//! [spec]
//! safe_set = [{ lower = [0, 0], upper = [30, 30] }]
//! assumed_output = [{ lower = [0], upper = [30] }]
//! fairness_limit = 2
//! red_mode = 1
//! psi = 0.99
//! shrink = "eps_hat"            # or a number
//!
//! [simulation]
//! x0 = [10.0, 10.0]             # per subsystem, or one state for all
//! horizon = 1000
//! seed = 7
//! policy = "fair"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::certificates::{ModeCertificate, StorageCertificate};
use crate::composition::NetworkSpec;
use crate::error::{Error, Result};
use crate::matcert::{Matrix, SymMatrix};
use crate::sim::Policy;
use crate::synthesis::SafetySpec;
use crate::system::{BoxUnion, Hyperbox, Mode, ModeDynamics, PowerK, SwitchedSubsystem};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub network: NetworkBlock,
    #[serde(rename = "subsystem")]
    pub subsystems: Vec<SubsystemBlock>,
    pub abstraction: AbstractionBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<SpecBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationBlock>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    pub coupling: CouplingBlock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingKind {
    /// Block `(i + 1, i)` and `(1, N)` equal `value·I`.
    Ring,
    /// Every off-diagonal block equals `value·I`.
    AllToAll,
    /// Explicit sparse entries.
    Triples,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingBlock {
    pub kind: CouplingKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub entries: Vec<(usize, usize, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxBlock {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeBlock {
    pub a: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub d: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaBlock {
    pub coeff: f64,
    pub exp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertModeBlock {
    pub z: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub kappa: f64,
    pub alpha: AlphaBlock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateBlock {
    pub epsilon: f64,
    /// Forces the common or the multiple storage construction; by default
    /// the common one is used exactly when all modes share `Z` and `Q`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub common: Option<bool>,
    #[serde(rename = "mode")]
    pub modes: Vec<CertModeBlock>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsystemBlock {
    pub state_set: Vec<BoxBlock>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub internal_input_set: Vec<BoxBlock>,
    pub c1: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub c2: Vec<Vec<f64>>,
    #[serde(rename = "mode")]
    pub modes: Vec<ModeBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<CertificateBlock>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// `Ŵᵢ` is the `M`-image of the neighbours' abstract outputs.
    #[default]
    Coupled,
    /// `Ŵᵢ = [𝕎ᵢ]_ϖ`.
    Grid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbstractionBlock {
    pub eta: f64,
    pub varpi: f64,
    pub k_d: usize,
    #[serde(default)]
    pub inputs: InputMode,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
}

fn default_mc_samples() -> usize {
    10_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Shrink {
    Value(f64),
    Named(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecBlock {
    pub safe_set: Vec<BoxBlock>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub assumed_output: Vec<BoxBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fairness_limit: Option<usize>,
    #[serde(default = "default_red")]
    pub red_mode: usize,
    #[serde(default = "default_psi")]
    pub psi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shrink: Option<Shrink>,
}

fn default_red() -> usize {
    1
}

fn default_psi() -> f64 {
    0.99
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationBlock {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub x0: Vec<Vec<f64>>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_paired_horizon")]
    pub paired_horizon: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<String>,
}

fn default_horizon() -> usize {
    1000
}

fn default_paired_horizon() -> usize {
    500
}

/// How much the safe set is deflated before synthesis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ShrinkRule {
    EpsHat,
    Fixed(f64),
}

fn cfg_err(at: &str, e: impl std::fmt::Display) -> Error {
    Error::Config(format!("{at}: {e}"))
}

fn boxes(at: &str, list: &[BoxBlock]) -> Result<BoxUnion> {
    let b = list
        .iter()
        .enumerate()
        .map(|(k, b)| Hyperbox::new(b.lower.clone(), b.upper.clone()).map_err(|e| cfg_err(&format!("{at}[{}]", k + 1), e)))
        .collect::<Result<Vec<_>>>()?;
    BoxUnion::new(b).map_err(|e| cfg_err(at, e))
}

fn matrix(at: &str, rows: &[Vec<f64>], cols: usize) -> Result<Matrix> {
    let m = Matrix::from_rows(rows, cols).map_err(|e| cfg_err(at, e))?;
    if m.cols() != cols && !rows.is_empty() {
        return Err(cfg_err(at, format!("expected {cols} columns, got {}", m.cols())));
    }
    Ok(m)
}

fn sym(at: &str, rows: &[Vec<f64>], dim: usize, warn: bool) -> Result<SymMatrix> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(cfg_err(at, format!("expected a {dim}x{dim} matrix")));
    }
    let asym = rows
        .iter()
        .enumerate()
        .any(|(i, r)| r.iter().enumerate().any(|(j, v)| (v - rows[j][i]).abs() > 1e-12 * (1.0 + v.abs())));
    if asym && warn {
        log::warn!("{at}: matrix is not symmetric, using (A + Aᵀ)/2");
    }
    SymMatrix::from_rows(rows).map_err(|e| cfg_err(at, e))
}

/// Interval hull of `C x` over the hull of `set`.
fn image_hull(c: &Matrix, set: &BoxUnion) -> (Vec<f64>, Vec<f64>) {
    let (lo, hi) = set.hull();
    (0..c.rows())
        .map(|r| {
            (0..c.cols()).fold((0.0, 0.0), |(a, b), k| {
                let (p, q) = (c.get(r, k) * lo[k], c.get(r, k) * hi[k]);
                (a + p.min(q), b + p.max(q))
            })
        })
        .unzip()
}

/// Replaces the internal-input sets flagged in `derived` by the hull of
/// the coupling image of the neighbours' internal outputs.
fn derive_internal_inputs(
    subs: Vec<SwitchedSubsystem>,
    m: &Matrix,
    derived: &[bool],
) -> Result<Vec<SwitchedSubsystem>> {
    if !derived.iter().any(|&d| d) {
        return Ok(subs);
    }
    let (mut ylo, mut yhi) = (Vec::new(), Vec::new());
    for s in &subs {
        let (lo, hi) = image_hull(&s.c2, &s.state_set);
        ylo.extend(lo);
        yhi.extend(hi);
    }
    let mut row = 0;
    let mut out = Vec::with_capacity(subs.len());
    for (i, s) in subs.into_iter().enumerate() {
        let q = s.input_dim();
        if !derived[i] || q == 0 {
            row += q;
            out.push(s);
            continue;
        }
        let (lo, hi): (Vec<f64>, Vec<f64>) = (row..row + q)
            .map(|r| {
                (0..m.cols()).fold((0.0, 0.0), |(a, b), c| {
                    let (p, q) = (m.get(r, c) * ylo[c], m.get(r, c) * yhi[c]);
                    (a + p.min(q), b + p.max(q))
                })
            })
            .unzip();
        row += q;
        let w = BoxUnion::single(Hyperbox::new(lo, hi).map_err(|e| cfg_err(&format!("subsystem[{}]", i + 1), e))?);
        log::debug!("subsystem {}: derived internal-input set {:?}", i + 1, w.hull());
        out.push(
            SwitchedSubsystem::new(s.state_set, w, s.modes, s.c1, s.c2, s.dwell_time)
                .map_err(|e| cfg_err(&format!("subsystem[{}]", i + 1), e))?,
        );
    }
    Ok(out)
}

impl NetworkConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Number of subsystems after applying `count`.
    pub fn count(&self) -> usize {
        self.network.count.unwrap_or(self.subsystems.len())
    }

    /// Subsystem blocks expanded to `count` entries.
    fn expanded(&self) -> Result<Vec<&SubsystemBlock>> {
        let n = self.count();
        match self.subsystems.len() {
            0 => Err(Error::Config("no [[subsystem]] blocks".into())),
            1 => Ok(vec![&self.subsystems[0]; n]),
            k if k == n => Ok(self.subsystems.iter().collect()),
            k => Err(Error::Config(format!(
                "network.count = {n} but {k} [[subsystem]] blocks are given (use one template or {n})"
            ))),
        }
    }

    pub fn build_subsystems(&self) -> Result<Vec<SwitchedSubsystem>> {
        let k_d = self.abstraction.k_d;
        if k_d == 0 {
            return Err(Error::Config("abstraction.k_d must be >= 1".into()));
        }
        self.expanded()?
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                let at = format!("subsystem[{}]", i + 1);
                let x = boxes(&format!("{at}.state_set"), &s.state_set)?;
                let n = x.dim();
                let w = if s.internal_input_set.is_empty() {
                    // Placeholder of the right dimension; build_network
                    // replaces it by the coupling image.
                    match s.modes.iter().find_map(|m| m.d.first()) {
                        Some(row) => BoxUnion::single(Hyperbox::cube(row.len(), 0.0, 1.0)?),
                        None => BoxUnion::point0(),
                    }
                } else {
                    boxes(&format!("{at}.internal_input_set"), &s.internal_input_set)?
                };
                let q = w.dim();
                let modes = s
                    .modes
                    .iter()
                    .enumerate()
                    .map(|(p, m)| {
                        let mat = format!("{at}.mode[{}]", p + 1);
                        let a = matrix(&format!("{mat}.a"), &m.a, n)?;
                        let d = if m.d.is_empty() {
                            Matrix::zeros(n, q)
                        } else {
                            matrix(&format!("{mat}.d"), &m.d, q)?
                        };
                        ModeDynamics::new(a, d, m.b.clone()).map_err(|e| cfg_err(&mat, e))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let c1 = matrix(&format!("{at}.c1"), &s.c1, n)?;
                let c2 = matrix(&format!("{at}.c2"), &s.c2, n)?;
                SwitchedSubsystem::new(x, w, modes, c1, c2, k_d).map_err(|e| cfg_err(&at, e))
            })
            .collect()
    }

    pub fn build_network(&self) -> Result<NetworkSpec> {
        let subs = self.build_subsystems()?;
        let n = subs.len();
        let qw: Vec<usize> = subs.iter().map(|s| s.input_dim()).collect();
        let qy: Vec<usize> = subs.iter().map(|s| s.output_dim()).collect();
        let rows: usize = qw.iter().sum();
        let cols: usize = qy.iter().sum();
        let off = |v: &[usize], i: usize| v[..i].iter().sum::<usize>();
        let mut m = Matrix::zeros(rows, cols);
        let c = &self.network.coupling;
        let mut block = |i: usize, j: usize, v: f64| -> Result<()> {
            if qw[i] != qy[j] {
                return Err(Error::Config(format!(
                    "network.coupling: subsystem {} has {} internal inputs but subsystem {} has {} internal outputs",
                    i + 1,
                    qw[i],
                    j + 1,
                    qy[j]
                )));
            }
            for k in 0..qw[i] {
                m.set(off(&qw, i) + k, off(&qy, j) + k, v);
            }
            Ok(())
        };
        match c.kind {
            CouplingKind::Ring => {
                let v = c.value.unwrap_or(1.0);
                if n > 1 {
                    for j in 0..n {
                        block((j + 1) % n, j, v)?;
                    }
                }
            }
            CouplingKind::AllToAll => {
                let v = c
                    .value
                    .ok_or_else(|| Error::Config("network.coupling.value is required for all_to_all".into()))?;
                for i in 0..n {
                    for j in 0..n {
                        if i != j {
                            block(i, j, v)?;
                        }
                    }
                }
            }
            CouplingKind::Triples => {
                for (k, &(r, col, v)) in c.entries.iter().enumerate() {
                    if r == 0 || col == 0 || r > rows || col > cols {
                        return Err(Error::Config(format!(
                            "network.coupling.entries[{}]: ({r}, {col}) outside the {rows}x{cols} coupling matrix",
                            k + 1
                        )));
                    }
                    m.set(r - 1, col - 1, v);
                }
            }
        }
        let weights = match &self.network.weights {
            None => vec![1.0; n],
            Some(w) if w.len() == 1 => vec![w[0]; n],
            Some(w) if w.len() == n => w.clone(),
            Some(w) => {
                return Err(Error::Config(format!(
                    "network.weights has {} entries for {n} subsystems",
                    w.len()
                )))
            }
        };
        let derived: Vec<bool> = self.expanded()?.iter().map(|s| s.internal_input_set.is_empty()).collect();
        let subs = derive_internal_inputs(subs, &m, &derived)?;
        NetworkSpec::new(subs, m, weights).map_err(|e| cfg_err("network", e))
    }

    /// Certificates with the common/multiple choice for each subsystem.
    pub fn build_certificates(&self, subs: &[SwitchedSubsystem]) -> Result<Vec<(StorageCertificate, bool)>> {
        let blocks = self.expanded()?;
        blocks
            .iter()
            .zip(subs)
            .enumerate()
            .map(|(i, (&s, sub))| {
                let at = format!("subsystem[{}].certificate", i + 1);
                // Replicated templates report their warnings once.
                let warn = !blocks[..i].iter().any(|&b| std::ptr::eq(b, s));
                let c = s
                    .certificate
                    .as_ref()
                    .ok_or_else(|| Error::Config(format!("{at}: missing")))?;
                if c.modes.len() != sub.num_modes() {
                    return Err(cfg_err(
                        &at,
                        format!("{} mode blocks for {} modes", c.modes.len(), sub.num_modes()),
                    ));
                }
                let n = sub.state_dim();
                let qs = sub.input_dim() + sub.output_dim();
                let modes = c
                    .modes
                    .iter()
                    .enumerate()
                    .map(|(p, m)| {
                        let mat = format!("{at}.mode[{}]", p + 1);
                        Ok(ModeCertificate {
                            z: sym(&format!("{mat}.z"), &m.z, n, warn)?,
                            q: sym(&format!("{mat}.q"), &m.q, qs, warn)?,
                            kappa: m.kappa,
                            alpha_lower: PowerK::new(m.alpha.coeff, m.alpha.exp)
                                .map_err(|e| cfg_err(&format!("{mat}.alpha"), e))?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let cert = StorageCertificate::new(modes, c.epsilon, &sub.state_set).map_err(|e| cfg_err(&at, e))?;
                let common = c.common.unwrap_or_else(|| cert.is_common());
                Ok((cert, common))
            })
            .collect()
    }

    pub fn spec(&self) -> Result<&SpecBlock> {
        self.spec
            .as_ref()
            .ok_or_else(|| Error::Config("[spec] block is required for this command".into()))
    }

    pub fn safety_spec(&self) -> Result<SafetySpec> {
        let s = self.spec()?;
        if s.red_mode == 0 {
            return Err(Error::Config("spec.red_mode is 1-based".into()));
        }
        SafetySpec::new(boxes("spec.safe_set", &s.safe_set)?, s.fairness_limit, Mode(s.red_mode - 1))
            .map_err(|e| cfg_err("spec", e))
    }

    pub fn assumed_output(&self) -> Result<Option<BoxUnion>> {
        let s = self.spec()?;
        if s.assumed_output.is_empty() {
            Ok(None)
        } else {
            boxes("spec.assumed_output", &s.assumed_output).map(Some)
        }
    }

    pub fn shrink_rule(&self) -> Result<ShrinkRule> {
        match &self.spec()?.shrink {
            None => Ok(ShrinkRule::EpsHat),
            Some(Shrink::Named(s)) if s == "eps_hat" => Ok(ShrinkRule::EpsHat),
            Some(Shrink::Value(v)) if *v >= 0.0 => Ok(ShrinkRule::Fixed(*v)),
            Some(other) => Err(Error::Config(format!(
                "spec.shrink: expected \"eps_hat\" or a nonnegative number, got {other:?}"
            ))),
        }
    }

    pub fn simulation(&self) -> Result<&SimulationBlock> {
        self.simulation
            .as_ref()
            .ok_or_else(|| Error::Config("[simulation] block is required for this command".into()))
    }

    pub fn policy(&self) -> Result<Policy> {
        match self.simulation.as_ref().and_then(|s| s.policy.as_deref()) {
            None => Ok(Policy::default()),
            Some(p) => p.parse().map_err(|e| cfg_err("simulation.policy", e)),
        }
    }

    /// Initial states expanded to one per subsystem.
    pub fn initial_states(&self, subs: &[SwitchedSubsystem]) -> Result<Vec<Vec<f64>>> {
        let sim = self.simulation()?;
        let x0: Vec<Vec<f64>> = match sim.x0.len() {
            0 => subs.iter().map(|s| vec![10.0; s.state_dim()]).collect(),
            1 => vec![sim.x0[0].clone(); subs.len()],
            k if k == subs.len() => sim.x0.clone(),
            k => {
                return Err(Error::Config(format!(
                    "simulation.x0 has {k} states for {} subsystems",
                    subs.len()
                )))
            }
        };
        for (i, (x, s)) in x0.iter().zip(subs).enumerate() {
            if x.len() != s.state_dim() {
                return Err(Error::Config(format!(
                    "simulation.x0[{}]: expected {} entries",
                    i + 1,
                    s.state_dim()
                )));
            }
        }
        Ok(x0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINI: &str = r#"
[network]
count = 2
[network.coupling]
kind = "ring"

[[subsystem]]
state_set = [{ lower = [0.0], upper = [1.0] }]
internal_input_set = [{ lower = [0.0], upper = [1.0] }]
c1 = [[1.0]]
c2 = [[1.0]]
[[subsystem.mode]]
a = [[0.5]]
d = [[0.2]]
b = [0.1]
[subsystem.certificate]
epsilon = 2.0
[[subsystem.certificate.mode]]
z = [[1.0]]
q = [[0.1, 0.0], [0.0, -0.2]]
kappa = 0.5
alpha = { coeff = 1.0, exp = 2.0 }

[abstraction]
eta = 0.1
varpi = 0.1
k_d = 1
"#;

    #[test]
    fn parse_and_build() {
        let cfg = NetworkConfig::parse(MINI).unwrap();
        let net = cfg.build_network().unwrap();
        assert_eq!(net.len(), 2);
        assert_eq!(net.coupling.get(1, 0), 1.0);
        assert_eq!(net.coupling.get(0, 1), 1.0);
        let certs = cfg.build_certificates(&net.subsystems).unwrap();
        assert!(certs[0].1);
    }

    #[test]
    fn integer_literals_are_numbers() {
        let cfg = NetworkConfig::parse(&MINI.replace("upper = [1.0] }]\ninternal", "upper = [1] }]\ninternal")).unwrap();
        assert_eq!(cfg.subsystems[0].state_set[0].upper, vec![1.0]);
    }

    #[test]
    fn round_trip_is_identity() {
        let cfg = NetworkConfig::parse(MINI).unwrap();
        let text = cfg.to_toml().unwrap();
        assert_eq!(NetworkConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn errors_name_the_location() {
        let bad = MINI.replace("a = [[0.5]]", "a = [[0.5, 1.0]]");
        let e = NetworkConfig::parse(&bad).unwrap().build_network().unwrap_err();
        assert!(e.to_string().contains("subsystem[1].mode[1].a"), "{e}");
        let bad = MINI.replace("kind = \"ring\"", "kind = \"star\"");
        assert!(matches!(NetworkConfig::parse(&bad), Err(Error::Config(_))));
        let bad = MINI.replace("count = 2", "count = 2\ncolour = 1");
        assert!(NetworkConfig::parse(&bad).is_err());
    }
}
