//! Deterministic and sampled Q-learning error recursions together with every
//! comparison system, the exact switching policy and per-step invariant checks.

use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::certify::Certification;
use crate::error::{Error, Result};
use crate::lyapunov::envelope;
use crate::mdp::{
    greedy_policy, max_values, orthant_distance_inf, sign_parts, DeterministicPolicy, Mdp, OptimalSolution,
    Policy, QVector, StochasticPolicy,
};
use crate::switching::{check_alpha, PolicyStructure};

/// Gap below which the switching mixture collapses to a point mass.
const MIXTURE_GAP: f64 = 1e-12;

/// Random words consumed per sampled step (two `f64` draws).
const WORDS_PER_STEP: u128 = 4;

/// At most this many violations are stored; all are counted.
const STORED_VIOLATIONS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Deterministic,
    Stochastic,
}

impl FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "det" | "deterministic" => Ok(RunMode::Deterministic),
            "stoch" | "stochastic" => Ok(RunMode::Stochastic),
            other => Err(Error::Parameter(format!("unknown mode `{other}` (expected det or stoch)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub alpha: f64,
    pub horizon: usize,
    pub mode: RunMode,
    pub q0: QVector,
    pub seed: u64,
    pub record_residuals: bool,
}

impl RunConfig {
    pub fn deterministic(alpha: f64, horizon: usize, q0: QVector) -> Self {
        Self { alpha, horizon, mode: RunMode::Deterministic, q0, seed: 0, record_residuals: true }
    }

    pub fn stochastic(alpha: f64, horizon: usize, q0: QVector, seed: u64) -> Self {
        Self { alpha, horizon, mode: RunMode::Stochastic, q0, seed, record_residuals: true }
    }

    pub fn validate(&self, mdp: &Mdp) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.q0.len() != mdp.layout().len() {
            return Err(Error::Dimension { expected: mdp.layout().len(), actual: self.q0.len() });
        }
        if self.q0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }
}

/// One observed transition, 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
    pub reward: f64,
}

/// State at step `k`; `w`, `mu` and `pi_plus` drive the transition to `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub e: DVector<f64>,
    pub e_plus: DVector<f64>,
    pub e_minus: DVector<f64>,
    pub ell: DVector<f64>,
    pub u: DVector<f64>,
    pub z_minus: DVector<f64>,
    pub z_plus: DVector<f64>,
    pub w: DVector<f64>,
    pub w_plus: DVector<f64>,
    pub w_minus: DVector<f64>,
    pub mu: StochasticPolicy,
    pub pi_plus: DeterministicPolicy,
    pub residual_lower: Option<DVector<f64>>,
    pub residual_upper: Option<DVector<f64>>,
    pub sampled: Option<Sample>,
    pub q_norm_inf: f64,
    pub envelope_minus: f64,
    pub envelope_plus: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvariantKind {
    Sandwich,
    SignDomination,
    OneStepSign,
    Reconstruction,
    Residual,
    QBound,
    NoiseBound,
    NoiseSignParts,
    EnvelopeMinus,
    EnvelopePlus,
    Orthant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub k: usize,
    pub kind: InvariantKind,
    /// Amount by which the inequality fails, beyond tolerance.
    pub magnitude: f64,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub config: RunConfig,
    pub steps: Vec<StepRecord>,
    pub w_max: f64,
    pub beta_minus: f64,
    pub beta_plus: f64,
    pub c_minus: f64,
    pub c_plus: f64,
    pub violations: Vec<Violation>,
    pub violation_count: usize,
    pub first_violation: Option<usize>,
}

impl Trace {
    pub fn is_clean(&self) -> bool {
        self.violation_count == 0
    }

    pub fn last(&self) -> &StepRecord {
        self.steps.last().expect("a trace holds at least the initial step")
    }
}

/// `W_max = (1 + sqrt(|S||A|))^2 (R_max + (1 + gamma) max{||Q_0||_inf, R_max / (1 - gamma)})^2`.
pub fn compute_w_max(mdp: &Mdp, q0: &QVector) -> f64 {
    let n = mdp.layout().len() as f64;
    let g = mdp.gamma();
    let r = mdp.reward_max();
    let bound = q0.amax().max(r / (1.0 - g));
    (1.0 + n.sqrt()).powi(2) * (r + (1.0 + g) * bound).powi(2)
}

/// `max{||Q_0||_inf, R_max / (1 - gamma)}`.
pub fn q_bound(mdp: &Mdp, q0: &QVector) -> f64 {
    q0.amax().max(mdp.reward_max() / (1.0 - mdp.gamma()))
}

/// `Q_{k+1} = Q_k + alpha D (F(Q_k) - Q_k)`.
pub fn deterministic_step(mdp: &Mdp, alpha: f64, q: &QVector) -> Result<QVector> {
    check_alpha(alpha)?;
    let f = mdp.bellman(q)?;
    let mut next = q.clone();
    for i in 0..q.len() {
        next[i] += alpha * mdp.sampling()[i] * (f[i] - q[i]);
    }
    Ok(next)
}

/// Inverse-CDF sampler for `(s, a) ~ d` and `s' ~ P(. | s, a)`.
#[derive(Debug, Clone)]
pub struct Sampler {
    pair_cdf: Vec<f64>,
    next_cdf: Vec<Vec<f64>>,
}

fn cumulative(weights: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

fn invert(cdf: &[f64], u: f64) -> usize {
    let total = *cdf.last().unwrap();
    let i = cdf.partition_point(|c| *c <= u * total);
    // rounding can push u past the last cumulative weight; never land on a zero-mass tail
    let mut i = i.min(cdf.len() - 1);
    while i > 0 && cdf[i] == cdf[i - 1] && (i == cdf.len() - 1 || cdf[i] == total) {
        i -= 1;
    }
    i
}

impl Sampler {
    pub fn new(mdp: &Mdp) -> Self {
        let n = mdp.layout().len();
        let p = mdp.transition();
        Self {
            pair_cdf: cumulative(mdp.sampling().iter().copied()),
            next_cdf: (0..n).map(|i| cumulative(p.row(i).iter().copied())).collect(),
        }
    }

    /// The sample of step `k` under `seed`; a pure function of `(seed, k)`.
    pub fn draw(&self, mdp: &Mdp, rng: &mut ChaCha8Rng, k: usize) -> Sample {
        rng.set_word_pos(k as u128 * WORDS_PER_STEP);
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        let i = invert(&self.pair_cdf, u1);
        let (state, action) = mdp.layout().pair(i);
        let next_state = invert(&self.next_cdf[i], u2);
        Sample { state, action, next_state, reward: mdp.reward(state, action, next_state) }
    }
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Output of one sampled step.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticStep {
    pub q_next: QVector,
    pub w: DVector<f64>,
    pub sample: Sample,
}

/// One asynchronous Q-learning update from the step-`k` sample of `rng`, with the
/// noise `w_k = e_{(s,a)} delta_k - D (F(Q_k) - Q_k)`.
pub fn stochastic_step(
    mdp: &Mdp,
    alpha: f64,
    q: &QVector,
    sampler: &Sampler,
    rng: &mut ChaCha8Rng,
    k: usize,
) -> Result<StochasticStep> {
    check_alpha(alpha)?;
    let f = mdp.bellman(q)?;
    Ok(stochastic_step_with(mdp, alpha, q, &f, sampler, rng, k))
}

fn stochastic_step_with(
    mdp: &Mdp,
    alpha: f64,
    q: &QVector,
    f: &QVector,
    sampler: &Sampler,
    rng: &mut ChaCha8Rng,
    k: usize,
) -> StochasticStep {
    let l = mdp.layout();
    let sample = sampler.draw(mdp, rng, k);
    let i = l.index(sample.state, sample.action);
    let next_value = (0..l.num_actions).map(|a| q[l.index(sample.next_state, a)]).fold(f64::NEG_INFINITY, f64::max);
    let td = sample.reward + mdp.gamma() * next_value - q[i];
    let mut w = DVector::from_fn(q.len(), |j, _| -mdp.sampling()[j] * (f[j] - q[j]));
    w[i] += td;
    let mut q_next = q.clone();
    q_next[i] += alpha * td;
    StochasticStep { q_next, w, sample }
}

/// `mu` with `(Pi^mu e)(s) = max_a {e(s,a) - A*(s,a)}`: a two-point mixture of the
/// anchor action (which must be optimal) and the state-wise error maximizer.
pub fn exact_switching_policy_with(
    e: &DVector<f64>,
    sol: &OptimalSolution,
    anchor: &DeterministicPolicy,
) -> Result<StochasticPolicy> {
    let l = sol.layout();
    if e.len() != l.len() {
        return Err(Error::Dimension { expected: l.len(), actual: e.len() });
    }
    let pi_plus = greedy_policy(l, e);
    let mut rows = Vec::with_capacity(l.num_states);
    for s in 0..l.num_states {
        let target = (0..l.num_actions)
            .map(|a| e[l.index(s, a)] - sol.advantage[l.index(s, a)])
            .fold(f64::NEG_INFINITY, f64::max);
        let lo_a = anchor.action(s);
        let hi_a = pi_plus.action(s);
        let lo = e[l.index(s, lo_a)];
        let hi = e[l.index(s, hi_a)];
        let mut row = vec![0.0; l.num_actions];
        if hi - lo > MIXTURE_GAP && lo_a != hi_a {
            let lambda = ((target - lo) / (hi - lo)).clamp(0.0, 1.0);
            row[lo_a] = 1.0 - lambda;
            row[hi_a] = lambda;
        } else {
            row[lo_a] = 1.0;
        }
        rows.push(row);
    }
    StochasticPolicy::new(rows)
}

/// [`exact_switching_policy_with`] anchored at the tie-broken greedy optimal policy.
pub fn exact_switching_policy(e: &DVector<f64>, sol: &OptimalSolution) -> Result<StochasticPolicy> {
    exact_switching_policy_with(e, sol, &sol.greedy_optimal_policy())
}

fn apply_det(structure: &PolicyStructure, pi: &DeterministicPolicy, x: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(x.len());
    structure.apply_actions(pi.actions(), x.as_slice(), out.as_mut_slice());
    out
}

/// Largest `a_i - b_i - tol` (positive means `a <= b + tol` fails).
fn excess(a: &DVector<f64>, b: &DVector<f64>, tol: f64) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x - y - tol).fold(f64::NEG_INFINITY, f64::max)
}

struct Recorder {
    violations: Vec<Violation>,
    count: usize,
    first: Option<usize>,
}

impl Recorder {
    fn check(&mut self, k: usize, kind: InvariantKind, magnitude: f64) {
        if magnitude > 0.0 || magnitude.is_nan() {
            self.count += 1;
            self.first.get_or_insert(k);
            if self.violations.len() < STORED_VIOLATIONS {
                self.violations.push(Violation { k, kind, magnitude });
            }
        }
    }
}

/// Simulates `horizon` steps and checks every pathwise invariant on the way.
///
/// All comparison systems consume the same noise realization as the main
/// recursion. Deterministic envelopes are checked pathwise; in sampled mode they
/// bound only the mean and are left to [`crate::experiments::monte_carlo_bounds`].
pub fn run(mdp: &Mdp, sol: &OptimalSolution, config: &RunConfig, certs: &Certification) -> Result<Trace> {
    config.validate(mdp)?;
    if certs.alpha != config.alpha {
        return Err(Error::CertificateMismatch {
            expected: format!("alpha = {}", certs.alpha),
            actual: format!("alpha = {}", config.alpha),
        });
    }
    let l = mdp.layout();
    let alpha = config.alpha;
    let structure = certs.full_structure();
    let pi_star = &certs.pi_minus_star;
    let stochastic = config.mode == RunMode::Stochastic;
    let w_max = if stochastic { compute_w_max(mdp, &config.q0) } else { 0.0 };
    let q_cap = q_bound(mdp, &config.q0);
    let sampler = Sampler::new(mdp);
    let mut rng = seeded_rng(config.seed);

    let mut q = config.q0.clone();
    let mut e = &q - &sol.q_star;
    let (e0_plus, e0_minus) = sign_parts(&e);
    let (e0p2, e0m2) = (e0_plus.norm(), e0_minus.norm());
    let mut ell = e.clone();
    let mut u = e.clone();
    let mut z_minus = e0_minus.clone();
    let mut z_plus = e0_plus.clone();

    let mut rec = Recorder { violations: Vec::new(), count: 0, first: None };
    let mut steps = Vec::with_capacity(config.horizon + 1);
    for k in 0..=config.horizon {
        let e_inf = e.amax();
        let tau = 1e-9 * (1.0 + e_inf);
        let (e_plus, e_minus) = sign_parts(&e);
        let v_diff = max_values(l, &q) - &sol.v_star;
        let pi_plus = greedy_policy(l, &e);
        let mu = exact_switching_policy_with(&e, sol, pi_star)?;
        let residual_lower = &v_diff - pi_star.select(l, &e);
        let residual_upper = pi_plus.select(l, &e) - &v_diff;
        let env_minus = envelope(&certs.negative, k, e0m2, alpha, w_max)?;
        let env_plus = envelope(&certs.positive, k, e0p2, alpha, w_max)?;
        let q_norm = q.amax();

        rec.check(k, InvariantKind::Sandwich, excess(&ell, &e, tau).max(excess(&e, &u, tau)));
        rec.check(k, InvariantKind::SignDomination, excess(&e_minus, &z_minus, tau).max(excess(&e_plus, &z_plus, tau)));
        rec.check(k, InvariantKind::Residual, -residual_lower.min().min(residual_upper.min()) - tau);
        rec.check(k, InvariantKind::QBound, q_norm - q_cap - tau);
        rec.check(k, InvariantKind::Orthant, (orthant_distance_inf(&e) - e_minus.amax()).abs() - tau);
        if !stochastic {
            rec.check(k, InvariantKind::EnvelopeMinus, e_minus.amax() - env_minus - tau);
            rec.check(k, InvariantKind::EnvelopePlus, e_plus.amax() - env_plus - tau);
        }

        let last = k == config.horizon;
        let f = mdp.bellman(&q)?;
        let (q_next, w, sampled) = if last {
            (q.clone(), DVector::zeros(l.len()), None)
        } else if stochastic {
            let st = stochastic_step_with(mdp, alpha, &q, &f, &sampler, &mut rng, k);
            (st.q_next, st.w, Some(st.sample))
        } else {
            let mut next = q.clone();
            for i in 0..l.len() {
                next[i] += alpha * mdp.sampling()[i] * (f[i] - q[i]);
            }
            (next, DVector::zeros(l.len()), None)
        };
        let (w_plus, w_minus) = sign_parts(&w);
        if stochastic && !last {
            let w2 = w.norm_squared();
            rec.check(k, InvariantKind::NoiseBound, w2 - w_max - tau);
            rec.check(
                k,
                InvariantKind::NoiseSignParts,
                (w_plus.norm_squared() - w2).max(w_minus.norm_squared() - w2),
            );
        }

        if !last {
            let e_next = &q_next - &sol.q_star;
            let mut recon = structure.apply(&mu, &e);
            recon.axpy(alpha, &w, 1.0);
            rec.check(k, InvariantKind::Reconstruction, (&e_next - recon).amax() - 1e-10 * (1.0 + e_inf));

            let (en_plus, en_minus) = sign_parts(&e_next);
            let mut bound_minus = apply_det(structure, pi_star, &e_minus);
            bound_minus.axpy(alpha, &w_minus, 1.0);
            let mut bound_plus = apply_det(structure, &pi_plus, &e_plus);
            bound_plus.axpy(alpha, &w_plus, 1.0);
            rec.check(
                k,
                InvariantKind::OneStepSign,
                excess(&en_minus, &bound_minus, tau).max(excess(&en_plus, &bound_plus, tau)),
            );
        }

        let (ell_n, u_n, zm_n, zp_n) = if last {
            (ell.clone(), u.clone(), z_minus.clone(), z_plus.clone())
        } else {
            let mut a = apply_det(structure, pi_star, &ell);
            a.axpy(alpha, &w, 1.0);
            let mut b = apply_det(structure, &pi_plus, &u);
            b.axpy(alpha, &w, 1.0);
            let mut c = apply_det(structure, pi_star, &z_minus);
            c.axpy(alpha, &w_minus, 1.0);
            let mut d = apply_det(structure, &pi_plus, &z_plus);
            d.axpy(alpha, &w_plus, 1.0);
            (a, b, c, d)
        };

        steps.push(StepRecord {
            k,
            e: e.clone(),
            e_plus,
            e_minus,
            ell: std::mem::replace(&mut ell, ell_n),
            u: std::mem::replace(&mut u, u_n),
            z_minus: std::mem::replace(&mut z_minus, zm_n),
            z_plus: std::mem::replace(&mut z_plus, zp_n),
            w,
            w_plus,
            w_minus,
            mu,
            pi_plus,
            residual_lower: config.record_residuals.then_some(residual_lower),
            residual_upper: config.record_residuals.then_some(residual_upper),
            sampled,
            q_norm_inf: q_norm,
            envelope_minus: env_minus,
            envelope_plus: env_plus,
        });
        q = q_next;
        e = &q - &sol.q_star;
    }

    Ok(Trace {
        config: config.clone(),
        steps,
        w_max,
        beta_minus: certs.beta_minus(),
        beta_plus: certs.beta_plus(),
        c_minus: certs.negative.c_constant_upper(),
        c_plus: certs.positive.c_constant_upper(),
        violations: rec.violations,
        violation_count: rec.count,
        first_violation: rec.first,
    })
}

/// Empirical moments of the noise at a fixed `Q` over `samples` one-step draws.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseMoments {
    pub samples: usize,
    pub mean: DVector<f64>,
    pub max_norm2: f64,
    /// Draws where `||w^+||^2` or `||w^-||^2` exceeded `||w||^2`.
    pub sign_part_violations: usize,
}

/// Resamples step `0..samples` of `seed` at the fixed iterate `q`.
pub fn noise_moments(mdp: &Mdp, q: &QVector, samples: usize, seed: u64) -> Result<NoiseMoments> {
    let l = mdp.layout();
    if q.len() != l.len() {
        return Err(Error::Dimension { expected: l.len(), actual: q.len() });
    }
    let f = mdp.bellman(q)?;
    let drift = DVector::from_fn(q.len(), |j, _| mdp.sampling()[j] * (f[j] - q[j]));
    let drift2 = drift.norm_squared();
    let sampler = Sampler::new(mdp);
    let mut rng = seeded_rng(seed);
    let mut td_sum = DVector::zeros(q.len());
    let mut max_norm2 = 0.0f64;
    let mut sign_part_violations = 0;
    for k in 0..samples {
        let sample = sampler.draw(mdp, &mut rng, k);
        let i = l.index(sample.state, sample.action);
        let next_value =
            (0..l.num_actions).map(|a| q[l.index(sample.next_state, a)]).fold(f64::NEG_INFINITY, f64::max);
        let td = sample.reward + mdp.gamma() * next_value - q[i];
        td_sum[i] += td;
        // w = td e_i - drift differs from -drift only in coordinate i
        let wi = td - drift[i];
        let norm2 = drift2 - drift[i] * drift[i] + wi * wi;
        let (mut plus2, mut minus2) = (0.0, 0.0);
        for j in 0..q.len() {
            let v = if j == i { wi } else { -drift[j] };
            if v > 0.0 {
                plus2 += v * v;
            } else {
                minus2 += v * v;
            }
        }
        let total = plus2 + minus2;
        if plus2 > total || minus2 > total || (total - norm2).abs() > 1e-12 * (1.0 + norm2) {
            sign_part_violations += 1;
        }
        max_norm2 = max_norm2.max(total);
    }
    let mean = td_sum / samples.max(1) as f64 - drift;
    Ok(NoiseMoments { samples, mean, max_norm2, sign_part_violations })
}

/// One row of the exported trace table. Sampled indices are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub e_inf: f64,
    pub e_plus_inf: f64,
    pub e_minus_inf: f64,
    pub ell_inf: f64,
    pub u_inf: f64,
    pub z_minus_inf: f64,
    pub z_plus_inf: f64,
    pub envelope_minus: f64,
    pub envelope_plus: f64,
    pub orthant_distance: f64,
    pub sandwich_ok: bool,
    pub sign_ok: bool,
    pub s: Option<usize>,
    pub a: Option<usize>,
    pub s_next: Option<usize>,
    pub r: Option<f64>,
}

impl Trace {
    pub fn rows(&self) -> Vec<TraceRow> {
        let bad = |kind: InvariantKind, k: usize| self.violations.iter().any(|v| v.k == k && v.kind == kind);
        self.steps
            .iter()
            .map(|st| TraceRow {
                k: st.k,
                e_inf: st.e.amax(),
                e_plus_inf: st.e_plus.amax(),
                e_minus_inf: st.e_minus.amax(),
                ell_inf: st.ell.amax(),
                u_inf: st.u.amax(),
                z_minus_inf: st.z_minus.amax(),
                z_plus_inf: st.z_plus.amax(),
                envelope_minus: st.envelope_minus,
                envelope_plus: st.envelope_plus,
                orthant_distance: orthant_distance_inf(&st.e),
                sandwich_ok: !bad(InvariantKind::Sandwich, st.k),
                sign_ok: !bad(InvariantKind::SignDomination, st.k),
                s: st.sampled.map(|x| x.state + 1),
                a: st.sampled.map(|x| x.action + 1),
                s_next: st.sampled.map(|x| x.next_state + 1),
                r: st.sampled.map(|x| x.reward),
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        for row in self.rows() {
            writer.serialize(row)?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Full vectors per step as JSON, for small instances.
    pub fn vector_dump(&self) -> serde_json::Value {
        let v = |x: &DVector<f64>| x.iter().copied().collect::<Vec<f64>>();
        let steps: Vec<serde_json::Value> = self
            .steps
            .iter()
            .map(|st| {
                serde_json::json!({
                    "k": st.k,
                    "e": v(&st.e),
                    "ell": v(&st.ell),
                    "u": v(&st.u),
                    "z_minus": v(&st.z_minus),
                    "z_plus": v(&st.z_plus),
                    "w": v(&st.w),
                    "mu": st.mu.rows(),
                    "pi_plus": st.pi_plus.actions().iter().map(|a| a + 1).collect::<Vec<_>>(),
                })
            })
            .collect();
        serde_json::json!({ "w_max": self.w_max, "steps": steps })
    }
}

pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut reader = csv::Reader::from_reader(input);
    reader.deserialize().map(|r| r.map_err(Error::from)).collect()
}
