//! Incremental-passivity storage certificates for affine modes, the dwell
//! bound, and the augmented storage function handed to composition.
//!
//! Storage functions are quadratic, `S_p(x, x̂) = (x − x̂)ᵀ Z_p (x − x̂)`, and
//! supply rates act on `[w − ŵ; C2 (x − x̂)]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::abstraction::SymbolicModel;
use crate::error::{Error, Result};
use crate::matcert::{
    default_tol, is_psd, max_eigval, min_dominance_scale, min_eigval, pos_neg_split, Matrix,
    SymMatrix,
};
use crate::system::{BoxUnion, Mode, ModeDynamics, ModeMap, PowerK, SwitchedSubsystem};
use crate::transition::counter_update;

/// `θ ∈ {1.01, 1.02, …, 1.20}`.
pub fn default_theta_grid() -> Vec<f64> {
    (101..=120).map(|k| k as f64 / 100.0).collect()
}

/// Samples per independently seeded Monte-Carlo chunk.
const MC_CHUNK: usize = 256;

/// `γ(s) = quad·s² + lin·s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaBound {
    pub quad: f64,
    pub lin: f64,
}

impl GammaBound {
    pub fn eval(&self, s: f64) -> f64 {
        self.quad * s * s + self.lin * s
    }
}

/// Per-mode part of a certificate.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeCertificate {
    pub z: SymMatrix,
    /// Supply rate on `[w − ŵ; y₂ − ŷ₂]`, blocks `(Q11, Q12; Q21, Q22)`.
    pub q: SymMatrix,
    pub kappa: f64,
    pub alpha_lower: PowerK,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StorageCertificate {
    pub modes: Vec<ModeCertificate>,
    pub epsilon_exp: f64,
    pub mu: f64,
    pub gammas: Vec<GammaBound>,
}

impl StorageCertificate {
    /// Validates the per-mode data and derives `μ` and the `γ_p`.
    pub fn new(
        modes: Vec<ModeCertificate>,
        epsilon_exp: f64,
        state_set: &BoxUnion,
    ) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::Certificate("certificate has no modes".into()));
        }
        if !(epsilon_exp > 1.0) {
            return Err(Error::Certificate(format!(
                "dwell exponent must be > 1, got {epsilon_exp}"
            )));
        }
        let n = state_set.dim();
        for (p, m) in modes.iter().enumerate() {
            if m.z.dim() != n {
                return Err(Error::Certificate(format!(
                    "mode {}: Z is {}x{}, state dimension is {n}",
                    p + 1,
                    m.z.dim(),
                    m.z.dim()
                )));
            }
            if !(m.kappa > 0.0 && m.kappa < 1.0) {
                return Err(Error::Certificate(format!(
                    "mode {}: kappa {} must lie in (0, 1)",
                    p + 1,
                    m.kappa
                )));
            }
            if min_eigval(&m.z) <= 1e-12 * m.z.norm().max(1.0) {
                return Err(Error::Certificate(format!(
                    "mode {}: Z is not positive definite",
                    p + 1
                )));
            }
        }
        let mu = compute_mu(&modes.iter().map(|m| m.z.clone()).collect::<Vec<_>>())?;
        let gammas = modes
            .iter()
            .map(|m| gamma_bound(&m.z, state_set))
            .collect::<Result<_>>()?;
        Ok(Self {
            modes,
            epsilon_exp,
            mu,
            gammas,
        })
    }

    pub fn kappa_max(&self) -> f64 {
        self.modes.iter().map(|m| m.kappa).fold(0.0, f64::max)
    }

    /// True when every mode shares `Z` and `Q`.
    pub fn is_common(&self) -> bool {
        let f = &self.modes[0];
        self.modes.iter().all(|m| m.z == f.z && m.q == f.q)
    }
}

/// Left and right block matrices of the affine storage inequality.
fn delta_p_blocks(
    mode: &ModeDynamics,
    c2: &Matrix,
    z: &SymMatrix,
    q: &SymMatrix,
    kappa: f64,
    theta: f64,
) -> Result<(SymMatrix, SymMatrix)> {
    let n = mode.a.rows();
    let qw = mode.d.cols();
    let qy = c2.rows();
    if z.dim() != n || q.dim() != qw + qy || c2.cols() != n {
        return Err(Error::Certificate(format!(
            "certificate shapes inconsistent: n={n}, internal inputs {qw}, internal outputs {qy}, \
             Z {}x{}, Q {}x{}",
            z.dim(),
            z.dim(),
            q.dim(),
            q.dim()
        )));
    }
    let zm = z.to_matrix();
    let at = mode.a.transpose();
    let dt = mode.d.transpose();
    let za = zm.mul(&mode.a)?;
    let zd = zm.mul(&mode.d)?;
    let lhs = Matrix::from_blocks(&[
        vec![&at.mul(&za)?.scale(theta), &at.mul(&zd)?],
        vec![&dt.mul(&za)?, &dt.mul(&zd)?.scale(theta)],
    ])?;
    let q11 = q.block(0, qw, 0, qw);
    let q12 = q.block(0, qw, qw, qw + qy);
    let q21 = q.block(qw, qw + qy, 0, qw);
    let q22 = q.block(qw, qw + qy, qw, qw + qy);
    let c2t = c2.transpose();
    let rhs = Matrix::from_blocks(&[
        vec![&zm.scale(kappa).add(&c2t.mul(&q22.mul(c2)?)?)?, &c2t.mul(&q21)?],
        vec![&q12.mul(c2)?, &q11],
    ])?;
    Ok((SymMatrix::from_matrix(&lhs)?, SymMatrix::from_matrix(&rhs)?))
}

/// Smallest eigenvalue of `RHS − LHS`; nonnegative means feasible.
pub fn delta_p_margin(
    mode: &ModeDynamics,
    c2: &Matrix,
    z: &SymMatrix,
    q: &SymMatrix,
    kappa: f64,
    theta: f64,
) -> Result<f64> {
    let (lhs, rhs) = delta_p_blocks(mode, c2, z, q, kappa, theta)?;
    Ok(min_eigval(&rhs.sub(&lhs)?))
}

pub fn verify_delta_p_affine(
    mode: &ModeDynamics,
    c2: &Matrix,
    z: &SymMatrix,
    q: &SymMatrix,
    kappa: f64,
    theta: f64,
    tol: f64,
) -> Result<bool> {
    if !(theta > 1.0) || !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::Certificate(format!(
            "need theta > 1 and kappa in (0, 1), got theta={theta}, kappa={kappa}"
        )));
    }
    let (lhs, rhs) = delta_p_blocks(mode, c2, z, q, kappa, theta)?;
    Ok(is_psd(&rhs.sub(&lhs)?, tol))
}

/// First `θ` in the grid for which the storage inequality holds, with its
/// margin. `tol = None` uses the norm-scaled default.
pub fn scan_theta(
    mode: &ModeDynamics,
    c2: &Matrix,
    z: &SymMatrix,
    q: &SymMatrix,
    kappa: f64,
    theta_grid: &[f64],
    tol: Option<f64>,
) -> Result<Option<(f64, f64)>> {
    for &theta in theta_grid {
        let (lhs, rhs) = delta_p_blocks(mode, c2, z, q, kappa, theta)?;
        let diff = rhs.sub(&lhs)?;
        let margin = min_eigval(&diff);
        if margin >= -tol.unwrap_or_else(|| default_tol(&diff)) {
            return Ok(Some((theta, margin)));
        }
    }
    Ok(None)
}

/// `max_{p,p′} min{c : Z_p ⪯ c Z_p′}`.
pub fn compute_mu(z_list: &[SymMatrix]) -> Result<f64> {
    let mut mu: f64 = 1.0;
    for (i, a) in z_list.iter().enumerate() {
        for (j, b) in z_list.iter().enumerate() {
            if i != j {
                mu = mu.max(min_dominance_scale(a, b)?);
            } else if min_eigval(a) <= 1e-12 * a.norm().max(1.0) {
                return Err(Error::Certificate(format!(
                    "storage matrix {} is not positive definite",
                    i + 1
                )));
            }
        }
    }
    Ok(mu)
}

/// `γ(s) = λmax(Z)·(n s² + 2√n D₂ s)`, valid for quadratic storage on a set
/// of Euclidean diameter `D₂`.
pub fn gamma_bound(z: &SymMatrix, state_set: &BoxUnion) -> Result<GammaBound> {
    let d2 = state_set.diameter2();
    if !d2.is_finite() {
        return Err(Error::Parameter("state set must be bounded".into()));
    }
    let n = z.dim() as f64;
    let lmax = max_eigval(z);
    Ok(GammaBound {
        quad: lmax * n,
        lin: lmax * 2.0 * n.sqrt() * d2,
    })
}

/// Smallest `k_d ≥ 1` with `μ κ^{(k_d − 1)/ε} ≤ 1`.
pub fn min_dwell_time(mu: f64, kappa_max: f64, epsilon_exp: f64) -> Result<usize> {
    if !(mu >= 1.0) || !(kappa_max > 0.0 && kappa_max < 1.0) || !(epsilon_exp > 1.0) {
        return Err(Error::Parameter(format!(
            "dwell bound needs mu >= 1, kappa in (0,1), eps > 1; got {mu}, {kappa_max}, {epsilon_exp}"
        )));
    }
    let bound = epsilon_exp * mu.ln() / (1.0 / kappa_max).ln() + 1.0;
    let mut k = ((bound - 1e-9).ceil() as usize).max(1);
    while mu * kappa_max.powf((k as f64 - 1.0) / epsilon_exp) > 1.0 + 1e-12 {
        k += 1;
    }
    Ok(k)
}

/// `Q̃ = κ^{−(k_d−1)/ε} A₊ + κ^{−1/ε} A₋` with `A = Σ Q_p`; zero for `k_d = 1`.
pub fn construct_qtilde(
    q_list: &[SymMatrix],
    kappa_max: f64,
    epsilon_exp: f64,
    k_d: usize,
) -> Result<SymMatrix> {
    let a = sum_sym(q_list)?;
    if k_d <= 1 {
        return Ok(SymMatrix::zeros(a.dim()));
    }
    let (plus, minus) = pos_neg_split(&a);
    let c_min = kappa_max.powf(-1.0 / epsilon_exp);
    let c_max = kappa_max.powf(-((k_d - 1) as f64) / epsilon_exp);
    let qt = plus.scale(c_max).add(&minus.scale(c_min))?;
    for (q, margin) in qtilde_margins(&qt, q_list, kappa_max, epsilon_exp, k_d)? {
        let diff = qt.sub(&a.scale(kappa_max.powf(-(q as f64) / epsilon_exp)))?;
        if margin < -default_tol(&diff) {
            return Err(Error::Invariant(format!(
                "Q-tilde check failed at q={q} with margin {margin:.3e}"
            )));
        }
    }
    Ok(qt)
}

/// `(q, λmin(Q̃ − κ^{−q/ε} Σ Q_p))` for `q ∈ {1, …, k_d − 1}`.
pub fn qtilde_margins(
    qt: &SymMatrix,
    q_list: &[SymMatrix],
    kappa_max: f64,
    epsilon_exp: f64,
    k_d: usize,
) -> Result<Vec<(usize, f64)>> {
    let a = sum_sym(q_list)?;
    (1..k_d)
        .map(|q| {
            let diff = qt.sub(&a.scale(kappa_max.powf(-(q as f64) / epsilon_exp)))?;
            Ok((q, min_eigval(&diff)))
        })
        .collect()
}

fn sum_sym(list: &[SymMatrix]) -> Result<SymMatrix> {
    let first = list
        .first()
        .ok_or_else(|| Error::Certificate("empty supply-rate list".into()))?;
    list[1..].iter().try_fold(first.clone(), |acc, q| acc.add(q))
}

/// Quadratic part of an augmented storage function.
#[derive(Clone, Debug, PartialEq)]
pub enum StorageShape {
    /// `𝒱 = (x − x̂)ᵀ Z (x − x̂)`.
    Common { z: SymMatrix },
    /// `𝒱 = κ^{−l/ε} Σ_p (x − x̂)ᵀ Z_p (x − x̂)`.
    Multiple {
        z_sum: SymMatrix,
        kappa: f64,
        epsilon_exp: f64,
    },
}

/// Data `(α, σ, ε, R)` of an augmented storage function.
#[derive(Clone, Debug, PartialEq)]
pub struct AugStorageFn {
    pub alpha: PowerK,
    pub sigma: f64,
    pub eps_offset: f64,
    pub r: SymMatrix,
    pub shape: StorageShape,
}

impl AugStorageFn {
    pub fn value(&self, x: &[f64], x_hat: &[f64], l: usize) -> f64 {
        let d: Vec<f64> = x.iter().zip(x_hat).map(|(a, b)| a - b).collect();
        match &self.shape {
            StorageShape::Common { z } => z.quad_form(&d),
            StorageShape::Multiple {
                z_sum,
                kappa,
                epsilon_exp,
            } => kappa.powf(-(l as f64) / epsilon_exp) * z_sum.quad_form(&d),
        }
    }

    /// `[w − ŵ; y₂ − ŷ₂]ᵀ R [w − ŵ; y₂ − ŷ₂]`.
    pub fn supply(&self, dw: &[f64], dy: &[f64]) -> f64 {
        let v: Vec<f64> = dw.iter().chain(dy).copied().collect();
        self.r.quad_form(&v)
    }
}

/// `α = (max_p ℓ ∘ α_p⁻¹)⁻¹` in closed form; needs a shared exponent.
fn combined_alpha(alphas: &[PowerK], ell: &PowerK) -> Result<PowerK> {
    let b = alphas[0].exp;
    if alphas.iter().any(|a| (a.exp - b).abs() > 1e-12) {
        return Err(Error::UnsupportedCertificate(
            "lower bounds with different exponents have no closed-form maximum".into(),
        ));
    }
    let a_min = alphas.iter().map(|a| a.coeff).fold(f64::INFINITY, f64::min);
    let branch = ell.compose(&PowerK::new(a_min, b)?.inverse());
    Ok(branch.inverse())
}

/// Builds `(α, σ, ε, R)` for the grid model with parameter `η`.
///
/// Common case: `σ = κ`, `R = Q`, `ε = γ(η)`. Multiple case:
/// `σ = κ^{(ε−1)/ε}`, `R = Q̃`, `ε = κ^{−k_d/ε} Σ_p γ_p(η)`.
pub fn derive_augmented_storage(
    cert: &StorageCertificate,
    eta: f64,
    k_d: usize,
    lipschitz_ell: &PowerK,
    common: bool,
) -> Result<AugStorageFn> {
    let kappa = cert.kappa_max();
    let alphas: Vec<PowerK> = cert.modes.iter().map(|m| m.alpha_lower).collect();
    let alpha = combined_alpha(&alphas, lipschitz_ell)?;
    if common {
        if !cert.is_common() {
            return Err(Error::Certificate(
                "common storage requested but modes carry different Z or Q".into(),
            ));
        }
        let m = &cert.modes[0];
        return Ok(AugStorageFn {
            alpha,
            sigma: kappa,
            eps_offset: cert.gammas[0].eval(eta),
            r: m.q.clone(),
            shape: StorageShape::Common { z: m.z.clone() },
        });
    }
    let k_min = min_dwell_time(cert.mu, kappa, cert.epsilon_exp)?;
    if k_d < k_min {
        return Err(Error::Certificate(format!(
            "dwell time {k_d} is below the admissible minimum {k_min} (mu = {:.6})",
            cert.mu
        )));
    }
    let q_list: Vec<SymMatrix> = cert.modes.iter().map(|m| m.q.clone()).collect();
    let r = if k_d == 1 {
        // With k_d = 1 the counter stays at 0 and the supply sum enters
        // with weight κ⁰ = 1.
        sum_sym(&q_list)?
    } else {
        construct_qtilde(&q_list, kappa, cert.epsilon_exp, k_d)?
    };
    let gamma_sum: f64 = cert.gammas.iter().map(|g| g.eval(eta)).sum();
    let z_sum = sum_sym(&cert.modes.iter().map(|m| m.z.clone()).collect::<Vec<_>>())?;
    Ok(AugStorageFn {
        alpha,
        sigma: kappa.powf((cert.epsilon_exp - 1.0) / cert.epsilon_exp),
        eps_offset: kappa.powf(-(k_d as f64) / cert.epsilon_exp) * gamma_sum,
        r,
        shape: StorageShape::Multiple {
            z_sum,
            kappa,
            epsilon_exp: cert.epsilon_exp,
        },
    })
}

/// Maxima found by [`validate_storage_mc`].
#[derive(Clone, Debug, PartialEq)]
pub struct McReport {
    /// `max (𝒮′ − σ𝒮 − ε − supply)` over accepted samples.
    pub eq4_max: f64,
    /// `max (α(‖h₁x − h₁x̂‖) − 𝒮)` over accepted samples.
    pub eq3_max: f64,
    pub samples: usize,
    /// Draws whose concrete successor left the state set.
    pub skipped_out_of_domain: usize,
    /// Draws without an abstract successor within `η`.
    pub skipped_no_witness: usize,
}

impl McReport {
    pub fn max_violation(&self) -> f64 {
        self.eq4_max.max(self.eq3_max)
    }
}

fn sample_box_union(s: &BoxUnion, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let b = &s.boxes()[rng.gen_range(0..s.boxes().len())];
    b.lower
        .iter()
        .zip(&b.upper)
        .map(|(l, u)| rng.gen_range(*l..=*u))
        .collect()
}

fn chunk_rng(seed: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64);
    rng
}

/// Monte-Carlo check of the storage inequalities on random concrete and
/// abstract states. The abstract witness is the successor nearest to the
/// abstract image.
pub fn validate_storage_mc(
    sub: &SwitchedSubsystem,
    model: &SymbolicModel,
    f: &AugStorageFn,
    samples: usize,
    seed: u64,
) -> Result<McReport> {
    let qw = model.input_dim;
    if f.r.dim() != qw + sub.output_dim() {
        return Err(Error::Certificate(format!(
            "R is {}x{}, expected {}",
            f.r.dim(),
            f.r.dim(),
            qw + sub.output_dim()
        )));
    }
    let active: Vec<usize> = (0..model.num_inputs()).filter(|&w| model.input_mask[w]).collect();
    if active.is_empty() {
        return Err(Error::Input("model has no active internal inputs".into()));
    }
    let chunks = samples.div_ceil(MC_CHUNK);
    let partial: Vec<McReport> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(seed, c);
            let n = MC_CHUNK.min(samples - c * MC_CHUNK);
            let mut rep = McReport {
                eq4_max: f64::NEG_INFINITY,
                eq3_max: f64::NEG_INFINITY,
                samples: 0,
                skipped_out_of_domain: 0,
                skipped_no_witness: 0,
            };
            for _ in 0..n {
                let x = sample_box_union(&sub.state_set, &mut rng);
                let xh_idx = rng.gen_range(0..model.num_grid());
                let xh = model.grid.point(xh_idx);
                let p = Mode(rng.gen_range(0..model.modes));
                let l = rng.gen_range(0..model.k_d);
                let u = if l + 1 < model.k_d {
                    p
                } else {
                    Mode(rng.gen_range(0..model.modes))
                };
                let w = sample_box_union(&sub.internal_input_set, &mut rng);
                let wi = active[rng.gen_range(0..active.len())];
                let wh = &model.inputs[wi];
                let (_, l2) = counter_update(p, l, u, model.k_d).expect("admissible by construction");

                let mode = &sub.modes[p.0];
                let x2 = mode.apply(&x, &w);
                if !sub.state_set.contains(&x2) {
                    rep.skipped_out_of_domain += 1;
                    continue;
                }
                let image = mode.apply(&xh, wh);
                let succ = model.successors(xh_idx, p, wi);
                let Some(&best) = succ.iter().min_by(|a, b| {
                    let da = sup_dist(&model.grid.point(**a as usize), &image);
                    let db = sup_dist(&model.grid.point(**b as usize), &image);
                    da.total_cmp(&db)
                }) else {
                    rep.skipped_no_witness += 1;
                    continue;
                };
                let xh2 = model.grid.point(best as usize);

                let v = f.value(&x, &xh, l);
                let v2 = f.value(&x2, &xh2, l2);
                let dw: Vec<f64> = w.iter().zip(wh).map(|(a, b)| a - b).collect();
                let y = sub.c2.mul_vec_unchecked(&x);
                let yh = sub.c2.mul_vec_unchecked(&xh);
                let dy: Vec<f64> = y.iter().zip(&yh).map(|(a, b)| a - b).collect();
                let eq4 = v2 - (f.sigma * v + f.eps_offset + f.supply(&dw, &dy));
                let h = sub.c1.mul_vec_unchecked(&x);
                let hh = sub.c1.mul_vec_unchecked(&xh);
                let eq3 = f.alpha.eval(sup_dist(&h, &hh)) - v;
                rep.eq4_max = rep.eq4_max.max(eq4);
                rep.eq3_max = rep.eq3_max.max(eq3);
                rep.samples += 1;
            }
            rep
        })
        .collect();
    Ok(partial.into_iter().fold(
        McReport {
            eq4_max: f64::NEG_INFINITY,
            eq3_max: f64::NEG_INFINITY,
            samples: 0,
            skipped_out_of_domain: 0,
            skipped_no_witness: 0,
        },
        |a, b| McReport {
            eq4_max: a.eq4_max.max(b.eq4_max),
            eq3_max: a.eq3_max.max(b.eq3_max),
            samples: a.samples + b.samples,
            skipped_out_of_domain: a.skipped_out_of_domain + b.skipped_out_of_domain,
            skipped_no_witness: a.skipped_no_witness + b.skipped_no_witness,
        },
    ))
}

pub(crate) fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Sampled check of the per-mode storage inequality for a black-box map:
/// returns `max S(f(x,w), f(x̂,ŵ)) − κ S(x,x̂) − supply` over the samples.
#[allow(clippy::too_many_arguments)]
pub fn sampled_delta_p_violation(
    map: &dyn ModeMap,
    c2: &Matrix,
    cert: &ModeCertificate,
    state_set: &BoxUnion,
    input_set: &BoxUnion,
    samples: usize,
    seed: u64,
) -> f64 {
    let chunks = samples.div_ceil(MC_CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(seed, c);
            let n = MC_CHUNK.min(samples - c * MC_CHUNK);
            let mut worst = f64::NEG_INFINITY;
            for _ in 0..n {
                let x = sample_box_union(state_set, &mut rng);
                let xh = sample_box_union(state_set, &mut rng);
                let w = sample_box_union(input_set, &mut rng);
                let wh = sample_box_union(input_set, &mut rng);
                let d: Vec<f64> = x.iter().zip(&xh).map(|(a, b)| a - b).collect();
                let fx = map.apply(&x, &w);
                let fh = map.apply(&xh, &wh);
                let df: Vec<f64> = fx.iter().zip(&fh).map(|(a, b)| a - b).collect();
                let dy = c2.mul_vec_unchecked(&d);
                let t: Vec<f64> = w.iter().zip(&wh).map(|(a, b)| a - b).chain(dy).collect();
                let v = cert.z.quad_form(&df) - cert.kappa * cert.z.quad_form(&d) - cert.q.quad_form(&t);
                worst = worst.max(v);
            }
            worst
        })
        .reduce(|| f64::NEG_INFINITY, f64::max)
}

/// Per-mode result of a certificate check.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeCheck {
    pub mode: Mode,
    pub theta: Option<f64>,
    /// `λmin(RHS − LHS)` at the chosen `θ`, or the best over the grid.
    pub margin: f64,
    /// `λmin(Z) − a` for quadratic lower bounds `a s²`.
    pub alpha_margin: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CertificateCheck {
    pub modes: Vec<ModeCheck>,
    pub mu: f64,
    pub kappa_max: f64,
    pub epsilon_exp: f64,
    pub dwell_bound: usize,
    pub dwell_time: usize,
    pub common: bool,
    pub qtilde_margins: Vec<(usize, f64)>,
}

impl CertificateCheck {
    pub fn passed(&self) -> bool {
        self.modes
            .iter()
            .all(|m| m.theta.is_some() && m.alpha_margin.is_none_or(|a| a >= -1e-12))
            && (self.common || self.dwell_time >= self.dwell_bound)
            && self.qtilde_margins.iter().all(|(_, m)| *m >= -1e-9)
    }
}

/// Runs every per-mode and cross-mode check for one subsystem.
pub fn check_certificate(
    sub: &SwitchedSubsystem,
    cert: &StorageCertificate,
    theta_grid: &[f64],
    tol: Option<f64>,
) -> Result<CertificateCheck> {
    if cert.modes.len() != sub.num_modes() {
        return Err(Error::Certificate(format!(
            "certificate has {} modes, subsystem has {}",
            cert.modes.len(),
            sub.num_modes()
        )));
    }
    let mut modes = Vec::new();
    for (p, (dyn_p, mc)) in sub.modes.iter().zip(&cert.modes).enumerate() {
        let found = scan_theta(dyn_p, &sub.c2, &mc.z, &mc.q, mc.kappa, theta_grid, tol)?;
        let margin = match found {
            Some((_, m)) => m,
            None => theta_grid
                .iter()
                .map(|&t| delta_p_margin(dyn_p, &sub.c2, &mc.z, &mc.q, mc.kappa, t))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max),
        };
        let alpha_margin = ((mc.alpha_lower.exp - 2.0).abs() < 1e-12)
            .then(|| min_eigval(&mc.z) - mc.alpha_lower.coeff);
        modes.push(ModeCheck {
            mode: Mode(p),
            theta: found.map(|f| f.0),
            margin,
            alpha_margin,
        });
    }
    let kappa = cert.kappa_max();
    let common = cert.is_common();
    let dwell_bound = min_dwell_time(cert.mu, kappa, cert.epsilon_exp)?;
    let qtilde_margins = if common || sub.dwell_time < 2 {
        Vec::new()
    } else {
        let q_list: Vec<SymMatrix> = cert.modes.iter().map(|m| m.q.clone()).collect();
        let qt = construct_qtilde(&q_list, kappa, cert.epsilon_exp, sub.dwell_time)?;
        qtilde_margins(&qt, &q_list, kappa, cert.epsilon_exp, sub.dwell_time)?
    };
    Ok(CertificateCheck {
        modes,
        mu: cert.mu,
        kappa_max: kappa,
        epsilon_exp: cert.epsilon_exp,
        dwell_bound,
        dwell_time: sub.dwell_time,
        common,
        qtilde_margins,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::abstraction::build_symbolic_model;
    use crate::system::tests::traffic_link;
    use crate::system::Hyperbox;
    use approx::assert_abs_diff_eq;

    pub fn traffic_cert(kappa: f64) -> StorageCertificate {
        let q = SymMatrix::from_rows(&[vec![0.3527, 0.0937], vec![0.0937, -0.6785]]).unwrap();
        let m = ModeCertificate {
            z: SymMatrix::identity(2),
            q,
            kappa,
            alpha_lower: PowerK::quadratic(1.0).unwrap(),
        };
        StorageCertificate::new(
            vec![m.clone(), m],
            2.0,
            &BoxUnion::single(Hyperbox::cube(2, 0.0, 60.0).unwrap()),
        )
        .unwrap()
    }

    fn scalar_mode(a: f64) -> ModeDynamics {
        ModeDynamics::new(Matrix::new(1, 1, vec![a]).unwrap(), Matrix::zeros(1, 1), vec![0.0]).unwrap()
    }

    #[test]
    fn delta_p_examples() {
        let c2 = Matrix::zeros(1, 1);
        let z = SymMatrix::identity(1);
        let q = SymMatrix::zeros(2);
        assert!(verify_delta_p_affine(&scalar_mode(0.0), &c2, &z, &q, 0.5, 1.1, 1e-9).unwrap());
        assert!(!verify_delta_p_affine(&scalar_mode(0.9), &c2, &z, &q, 0.5, 1.1, 1e-9).unwrap());
        assert!(matches!(
            verify_delta_p_affine(&scalar_mode(0.0), &c2, &z, &SymMatrix::zeros(3), 0.5, 1.1, 1e-9),
            Err(Error::Certificate(_))
        ));
    }

    #[test]
    fn traffic_theta_scan() {
        let sub = traffic_link();
        let cert = traffic_cert(0.98);
        let m = &cert.modes[0];
        let grid = default_theta_grid();
        let (theta, margin) =
            scan_theta(&sub.modes[0], &sub.c2, &m.z, &m.q, m.kappa, &grid, None).unwrap().unwrap();
        assert_abs_diff_eq!(theta, 1.01, epsilon = 1e-12);
        assert!(margin >= -1e-9);
        assert_eq!(
            scan_theta(&sub.modes[0], &sub.c2, &m.z, &m.q, m.kappa, &[1.07], None)
                .unwrap()
                .map(|t| t.0),
            Some(1.07)
        );
        assert!(scan_theta(&sub.modes[0], &sub.c2, &m.z, &m.q, 0.01, &grid, None)
            .unwrap()
            .is_none());
    }

    #[test]
    fn mu_examples() {
        let i2 = SymMatrix::identity(2);
        assert_eq!(compute_mu(&[i2.clone(), i2.clone()]).unwrap(), 1.0);
        assert_abs_diff_eq!(compute_mu(&[i2.scale(2.0), i2.clone()]).unwrap(), 2.0, epsilon = 1e-12);
        assert!(compute_mu(&[i2.clone(), SymMatrix::diag(&[1.0, 0.0])]).is_err());
    }

    #[test]
    fn gamma_examples() {
        let g = gamma_bound(
            &SymMatrix::identity(2),
            &BoxUnion::single(Hyperbox::cube(2, 0.0, 1.0).unwrap()),
        )
        .unwrap();
        assert_abs_diff_eq!(g.quad, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g.lin, 4.0, epsilon = 1e-12);
        let g1 = gamma_bound(
            &SymMatrix::identity(1),
            &BoxUnion::single(Hyperbox::cube(1, 0.0, 1.0).unwrap()),
        )
        .unwrap();
        assert_eq!((g1.quad, g1.lin), (1.0, 2.0));
        assert_eq!(g1.eval(0.0), 0.0);
    }

    #[test]
    fn dwell_examples() {
        assert_eq!(min_dwell_time(1.0, 0.5, 2.0).unwrap(), 1);
        assert_eq!(min_dwell_time(1.63, 0.7, 1.01).unwrap(), 3);
        assert_eq!(min_dwell_time(std::f64::consts::E, 1.0 / std::f64::consts::E, 2.0).unwrap(), 3);
        for &(mu, kappa, eps) in &[(1.63, 0.7, 1.01), (3.0, 0.9, 1.5), (1.01, 0.2, 4.0)] {
            let k = min_dwell_time(mu, kappa, eps).unwrap();
            assert!(mu * kappa.powf((k as f64 - 1.0) / eps) <= 1.0 + 1e-12);
            if k >= 2 {
                assert!(mu * kappa.powf((k as f64 - 2.0) / eps) > 1.0);
            }
        }
    }

    #[test]
    fn qtilde_examples() {
        let q = SymMatrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let qt = construct_qtilde(std::slice::from_ref(&q), 0.7, 1.01, 3).unwrap();
        let c = 0.7f64.powf(-2.0 / 1.01);
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(qt.get(i, j), c * q.get(i, j), epsilon = 1e-12);
            }
        }
        let qn = q.neg();
        let qt = construct_qtilde(std::slice::from_ref(&qn), 0.7, 1.01, 3).unwrap();
        let c = 0.7f64.powf(-1.0 / 1.01);
        assert_abs_diff_eq!(qt.get(0, 1), c * qn.get(0, 1), epsilon = 1e-12);
        assert_eq!(construct_qtilde(&[q], 0.7, 1.01, 1).unwrap(), SymMatrix::zeros(2));
    }

    #[test]
    fn augmented_storage_examples() {
        let cert = traffic_cert(0.98);
        let ell = PowerK::linear(1.0).unwrap();
        let f = derive_augmented_storage(&cert, 0.03, 1, &ell, true).unwrap();
        assert_eq!(f.sigma, 0.98);
        assert_eq!(f.r, cert.modes[0].q);
        assert_abs_diff_eq!(f.eps_offset, cert.gammas[0].eval(0.03), epsilon = 1e-15);
        let f0 = derive_augmented_storage(&cert, 0.0, 1, &ell, true).unwrap();
        assert_eq!(f0.eps_offset, 0.0);

        let mut multi = cert.clone();
        multi.modes[1].z = SymMatrix::identity(2).scale(1.5);
        multi.modes[0].kappa = 0.7;
        multi.modes[1].kappa = 0.7;
        multi.epsilon_exp = 1.01;
        multi.mu = compute_mu(&[multi.modes[0].z.clone(), multi.modes[1].z.clone()]).unwrap();
        assert!(matches!(
            derive_augmented_storage(&multi, 0.1, 1, &ell, false),
            Err(Error::Certificate(msg)) if msg.contains("minimum 3")
        ));
        let f = derive_augmented_storage(&multi, 0.1, 3, &ell, false).unwrap();
        assert_abs_diff_eq!(f.sigma, 0.99647, epsilon = 1e-5);
    }

    #[test]
    fn mc_validation_traffic() {
        let sub = traffic_link();
        let model = build_symbolic_model(&sub, 2.0, 2.0, None).unwrap();
        let cert = traffic_cert(0.98);
        let f = derive_augmented_storage(&cert, 2.0, 1, &sub.lipschitz, true).unwrap();
        let rep = validate_storage_mc(&sub, &model, &f, 4000, 7).unwrap();
        assert!(rep.max_violation() <= 1e-9, "{rep:?}");
        assert!(rep.samples > 1000);

        let bad = traffic_cert(0.5);
        let f = derive_augmented_storage(&bad, 2.0, 1, &sub.lipschitz, true).unwrap();
        let rep = validate_storage_mc(&sub, &model, &f, 4000, 7).unwrap();
        assert!(rep.eq4_max > 0.0, "{rep:?}");
    }

    #[test]
    fn mc_is_seed_deterministic_across_workers() {
        let sub = traffic_link();
        let model = build_symbolic_model(&sub, 3.0, 3.0, None).unwrap();
        let f = derive_augmented_storage(&traffic_cert(0.98), 3.0, 1, &sub.lipschitz, true).unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let a = one.install(|| validate_storage_mc(&sub, &model, &f, 3000, 5).unwrap());
        let b = validate_storage_mc(&sub, &model, &f, 3000, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn black_box_map_check() {
        let cert = ModeCertificate {
            z: SymMatrix::identity(1),
            q: SymMatrix::zeros(1),
            kappa: 0.5,
            alpha_lower: PowerK::quadratic(1.0).unwrap(),
        };
        let x = BoxUnion::single(Hyperbox::cube(1, -1.0, 1.0).unwrap());
        let contraction = |x: &[f64], _w: &[f64]| vec![0.5 * x[0].sin()];
        let expansion = |x: &[f64], _w: &[f64]| vec![1.5 * x[0]];
        let c2 = Matrix::zeros(0, 1);
        let w = BoxUnion::single(Hyperbox::cube(1, 0.0, 1.0).unwrap());
        let cert1 = ModeCertificate { q: SymMatrix::zeros(1), ..cert };
        assert!(sampled_delta_p_violation(&contraction, &c2, &cert1, &x, &w, 2000, 1) <= 0.0);
        assert!(sampled_delta_p_violation(&expansion, &c2, &cert1, &x, &w, 2000, 1) > 0.0);
    }
}
