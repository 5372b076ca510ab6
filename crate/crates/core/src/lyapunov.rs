//! Truncated-series Lyapunov functions with certified norm-equivalence constants.
//!
//! Fixed mode: `v(x) = sum_t beta^{-2t} ||A^t x||^2`. Family: the same series with
//! `||A^t x||` replaced by the worst product of length `t`. Both are truncated at a
//! depth `T`, and the dropped tail is bounded by a certified multiple of `||x||^2`.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::switching::{
    fingerprint_matrices, jsr_bracket_with_budget, max_feasible_depth, spectral_radius, JsrBracket,
    ModeMatrix, NormKind, PolicyStructure, Select, SwitchingFamily, WorstCaseTable,
    DEFAULT_JSR_DEPTH, DEFAULT_PRODUCT_BUDGET,
};

/// Default relative tail target: `tail <= tol * C`.
pub const DEFAULT_TAIL_TOL: f64 = 1e-9;

/// Longest norm table a product certificate may build.
pub const DEFAULT_DEPTH_CAP: usize = 1 << 22;

/// Most doublings of the fixed-mode series (`T = 2^m - 1`).
const DOUBLING_CAP: usize = 60;

/// Largest number of explicit vectors kept when evaluating an unstructured family.
const ENUMERATION_VECTOR_BUDGET: usize = 1 << 12;

/// Products enumerated for the exact head of a generic family's norm table.
const EXACT_NORM_BUDGET: usize = 1 << 16;

/// More modes than this are sampled, not exhausted, by [`check_contraction`].
pub const MAX_CHECKED_MODES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateKind {
    FixedMode,
    ProductFamily,
}

/// Upper bounds `a_t >= max_{|sigma| = t} ||A_sigma||_2`, with `a_0 = 1`.
///
/// Entries up to `exact_depth` are exact maxima; later ones are submultiplicative
/// bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductNormTable {
    values: Vec<f64>,
    exact_depth: usize,
}

impl ProductNormTable {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn depth(&self) -> usize {
        self.values.len() - 1
    }

    pub fn exact_depth(&self) -> usize {
        self.exact_depth
    }

    pub fn get(&self, t: usize) -> f64 {
        self.values[t]
    }
}

#[derive(Debug, Clone)]
enum Evaluator {
    /// `v_T(x) = x' X x`; `power = (A / beta)^{T+1}` gives the next term.
    Quadratic { mode: DMatrix<f64>, form: DMatrix<f64>, power: DMatrix<f64> },
    Structured { structure: PolicyStructure, modes: Vec<ModeMatrix> },
    Enumerated { modes: Vec<DMatrix<f64>>, table: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct LyapunovCertificate {
    kind: CertificateKind,
    beta: f64,
    epsilon: f64,
    /// Rate the margin `epsilon` was added to.
    rate: f64,
    truncation_depth: usize,
    c_constant_upper: f64,
    tail_bound: f64,
    fingerprint: String,
    dim: usize,
    table: Option<ProductNormTable>,
    evaluator: Evaluator,
}

/// `value` is the truncated series (a lower bound on `v`), `value + uncertainty` an upper bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub uncertainty: f64,
}

/// Partial sums of the lower and upper series through `T` and `T + 1`.
#[derive(Debug, Clone, Copy, Default)]
struct SeriesSums {
    lo: f64,
    hi: f64,
    lo_next: f64,
    hi_next: f64,
}

/// Serializable certificate header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateSummary {
    pub kind: CertificateKind,
    pub beta: f64,
    pub epsilon: f64,
    pub rate: f64,
    pub truncation_depth: usize,
    pub c_constant_upper: f64,
    pub tail_bound: f64,
    pub fingerprint: String,
}

fn check_margin(rate: f64, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Parameter(format!("epsilon = {epsilon} must be positive")));
    }
    let beta = rate + epsilon;
    if !(beta < 1.0) {
        return Err(Error::NonContractive { beta });
    }
    Ok(beta)
}

fn check_tol(tol: f64) -> Result<()> {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("tail tolerance {tol} must be positive")))
    }
}

fn lambda_max(sym: &DMatrix<f64>) -> f64 {
    let s = (sym + sym.transpose()) * 0.5;
    s.symmetric_eigenvalues().iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v))
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().iter().fold(0.0_f64, |a, b| a.max(*b))
}

/// Certificate for the single mode `A` with `beta = rho(A) + epsilon`.
///
/// The series is summed by doubling, `X_{2T+1} = X_T + M'^{T+1} X_T M^{T+1}` with
/// `M = A / beta`, until `theta = ||M^{T+1}||_2^2 < 1` and the tail
/// `theta lambda_max(X_T) / (1 - theta)` is at most `tol * C`.
pub fn build_fixed_mode_certificate(mode: &ModeMatrix, epsilon: f64, tol: f64) -> Result<LyapunovCertificate> {
    check_tol(tol)?;
    let a = mode.matrix();
    let rate = spectral_radius(a)?;
    let beta = check_margin(rate, epsilon)?;
    let n = a.nrows();
    let mut form = DMatrix::<f64>::identity(n, n);
    let mut power = a / beta;
    let mut depth: usize = 0;
    let mut reached = f64::INFINITY;
    for round in 0..=DOUBLING_CAP {
        let theta = spectral_norm(&power).powi(2);
        let lambda = lambda_max(&form);
        if theta < 1.0 {
            let tail = theta * lambda / (1.0 - theta);
            let c = lambda + tail;
            reached = tail / c;
            if tail <= tol * c {
                return Ok(LyapunovCertificate {
                    kind: CertificateKind::FixedMode,
                    beta,
                    epsilon,
                    rate,
                    truncation_depth: depth,
                    c_constant_upper: c.max(1.0),
                    tail_bound: tail,
                    fingerprint: fingerprint_matrices(std::iter::once(a)),
                    dim: n,
                    table: None,
                    evaluator: Evaluator::Quadratic { mode: a.clone(), form, power },
                });
            }
        }
        if round == DOUBLING_CAP {
            break;
        }
        let spread = power.transpose() * &form * &power;
        form += spread;
        power = &power * &power;
        depth = 2 * depth + 1;
    }
    Err(Error::TailNotConverged { depth_cap: depth, target: tol, reached })
}

/// Product certificate with the JSR surrogate taken from the default infinity-norm bracket.
pub fn build_product_certificate(family: &SwitchingFamily, epsilon: f64, tol: f64) -> Result<LyapunovCertificate> {
    let bracket = default_bracket(family)?;
    build_product_certificate_with(family, bracket.upper, epsilon, tol, DEFAULT_DEPTH_CAP)
}

/// Infinity-norm bracket at the default depth, shortened to fit the product budget.
pub fn default_bracket(family: &SwitchingFamily) -> Result<JsrBracket> {
    let depth = DEFAULT_JSR_DEPTH.min(max_feasible_depth(family.len(), DEFAULT_PRODUCT_BUDGET)).max(1);
    jsr_bracket_with_budget(family, depth, NormKind::Infinity, DEFAULT_PRODUCT_BUDGET)
}

/// Product certificate with `beta = rate_upper + epsilon`, where `rate_upper` must
/// be a certified upper bound on the JSR of `family`.
///
/// A singleton family reduces to [`build_fixed_mode_certificate`].
pub fn build_product_certificate_with(
    family: &SwitchingFamily,
    rate_upper: f64,
    epsilon: f64,
    tol: f64,
    depth_cap: usize,
) -> Result<LyapunovCertificate> {
    check_tol(tol)?;
    if family.is_singleton() {
        let mut cert = build_fixed_mode_certificate(&family.modes()[0], epsilon, tol)?;
        cert.kind = CertificateKind::ProductFamily;
        return Ok(cert);
    }
    let beta = check_margin(rate_upper, epsilon)?;
    let (table, exact_depth, evaluator) = match family.structure() {
        Some(structure) => {
            let mut worst = WorstCaseTable::new(structure);
            let table = NormSeries::grow(beta, tol, depth_cap, |_| {
                worst.advance();
                Some(worst.spectral_bound())
            })?;
            let exact = 0;
            let ev = Evaluator::Structured { structure: structure.clone(), modes: family.modes().to_vec() };
            (table, exact, ev)
        }
        None => {
            let modes: Vec<DMatrix<f64>> = family.modes().iter().map(|m| m.matrix().clone()).collect();
            let exact = exact_product_norms(&modes, EXACT_NORM_BUDGET);
            let exact_depth = exact.len() - 1;
            let table = NormSeries::grow_closure(beta, tol, depth_cap, &exact)?;
            let ev = Evaluator::Enumerated { modes, table: table.values.clone() };
            (table, exact_depth, ev)
        }
    };
    Ok(LyapunovCertificate {
        kind: CertificateKind::ProductFamily,
        beta,
        epsilon,
        rate: rate_upper,
        truncation_depth: table.truncation,
        c_constant_upper: table.c_upper.max(1.0),
        tail_bound: table.tail,
        fingerprint: family.fingerprint(),
        dim: family.dim(),
        table: Some(ProductNormTable { values: table.values, exact_depth }),
        evaluator,
    })
}

/// Exact identity key; `+ 0.0` folds `-0.0` onto `0.0`.
fn bit_key(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| (x + 0.0).to_bits()).collect()
}

/// `max_{|sigma| = t} ||A_sigma||_2` by enumerating distinct products level by level.
fn exact_product_norms(modes: &[DMatrix<f64>], budget: usize) -> Vec<f64> {
    let n = modes[0].nrows();
    let mut level = vec![DMatrix::<f64>::identity(n, n)];
    let mut norms = vec![1.0];
    let mut visited = 0usize;
    loop {
        if visited + level.len() * modes.len() > budget {
            break;
        }
        let mut next: Vec<DMatrix<f64>> = Vec::with_capacity(level.len() * modes.len());
        let mut seen = HashSet::new();
        for p in &level {
            for m in modes {
                let q = m * p;
                if seen.insert(bit_key(q.as_slice())) {
                    next.push(q);
                }
            }
        }
        visited += level.len() * modes.len();
        let best = next.iter().map(spectral_norm).fold(0.0, f64::max);
        norms.push(best);
        if best == 0.0 || norms.len() > 64 {
            break;
        }
        level = next;
    }
    norms
}

/// Norm table plus the truncation depth, tail and `C` derived from it.
struct NormSeries {
    values: Vec<f64>,
    truncation: usize,
    tail: f64,
    c_upper: f64,
}

impl NormSeries {
    /// Grows `a_t` from `next(t)` until a block `b` with `theta_b = beta^{-2b} a_b^2 <= 1/2`
    /// is known and the block tail bound `(S_{T+b} - S_T) / (1 - theta_b)` meets `tol * C`.
    fn grow(beta: f64, tol: f64, depth_cap: usize, mut next: impl FnMut(usize) -> Option<f64>) -> Result<Self> {
        let log_beta = beta.ln();
        let mut values = vec![1.0];
        let mut sums = vec![1.0];
        let mut block: Option<(usize, f64)> = None;
        let mut reached = f64::INFINITY;
        for t in 1..=depth_cap {
            let a = next(t).unwrap_or(0.0);
            let term = if a > 0.0 { (2.0 * (a.ln() - t as f64 * log_beta)).exp() } else { 0.0 };
            values.push(a);
            sums.push(sums[t - 1] + term);
            if block.is_none() && term <= 0.5 {
                block = Some((t, term));
            }
            if let Some((b, theta)) = block {
                if t >= b {
                    let (tail, c) = block_tail(&sums, t - b, b, theta);
                    reached = tail / c;
                    if tail <= tol * c {
                        return Ok(Self::finish(values, &sums, b, theta, tol));
                    }
                }
            }
        }
        Err(Error::TailNotConverged { depth_cap, target: tol, reached })
    }

    /// Like [`grow`](Self::grow) from exact leading norms, extended by
    /// `a_t = min_{i <= E} a_i a_{t-i}`; blocks are restricted to `b <= E`.
    fn grow_closure(beta: f64, tol: f64, depth_cap: usize, exact: &[f64]) -> Result<Self> {
        let e = exact.len() - 1;
        let log_beta = beta.ln();
        let term = |t: usize, a: f64| if a > 0.0 { (2.0 * (a.ln() - t as f64 * log_beta)).exp() } else { 0.0 };
        let (b, theta) = (1..=e)
            .map(|b| (b, term(b, exact[b])))
            .filter(|(_, th)| *th < 1.0)
            .min_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
            .ok_or(Error::TailNotConverged { depth_cap: e, target: tol, reached: f64::INFINITY })?;
        let mut values = exact.to_vec();
        let next = |t: usize, values: &[f64]| -> Option<f64> {
            if t < values.len() {
                return Some(values[t]);
            }
            (1..=e).map(|i| values[i] * values[t - i]).reduce(f64::min)
        };
        let mut sums = vec![1.0];
        let mut reached = f64::INFINITY;
        for t in 1..=depth_cap.max(e) {
            let a = next(t, &values).unwrap_or(0.0);
            if t >= values.len() {
                values.push(a);
            }
            sums.push(sums[t - 1] + term(t, a));
            if t >= b {
                let (tail, c) = block_tail(&sums, t - b, b, theta);
                reached = tail / c;
                if tail <= tol * c {
                    values.truncate(t + 1);
                    return Ok(Self::finish(values, &sums, b, theta, tol));
                }
            }
        }
        Err(Error::TailNotConverged { depth_cap, target: tol, reached })
    }

    fn finish(values: Vec<f64>, sums: &[f64], b: usize, theta: f64, tol: f64) -> Self {
        let last = sums.len() - 1;
        let c_upper = (0..=last - b).map(|t| block_tail(sums, t, b, theta).1).fold(f64::INFINITY, f64::min);
        let truncation = (0..=last - b)
            .find(|&t| block_tail(sums, t, b, theta).0 <= tol * c_upper)
            .unwrap_or(last - b);
        let tail = block_tail(sums, truncation, b, theta).0.min(c_upper - sums[truncation]).max(0.0);
        Self { values, truncation, tail, c_upper }
    }
}

/// `(tail bound after T, S_T + tail)`.
fn block_tail(sums: &[f64], t: usize, b: usize, theta: f64) -> (f64, f64) {
    let tail = (sums[t + b] - sums[t]) / (1.0 - theta);
    (tail, sums[t] + tail)
}

impl LyapunovCertificate {
    pub fn kind(&self) -> CertificateKind {
        self.kind
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn truncation_depth(&self) -> usize {
        self.truncation_depth
    }

    /// Certified upper bound on the norm-equivalence constant `C`.
    pub fn c_constant_upper(&self) -> f64 {
        self.c_constant_upper
    }

    /// Bound on the dropped tail per unit `||x||^2`.
    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of modes the certificate covers.
    pub fn num_modes(&self) -> usize {
        match &self.evaluator {
            Evaluator::Quadratic { .. } => 1,
            Evaluator::Structured { modes, .. } => modes.len(),
            Evaluator::Enumerated { modes, .. } => modes.len(),
        }
    }

    pub fn norm_table(&self) -> Option<&ProductNormTable> {
        self.table.as_ref()
    }

    pub fn summary(&self) -> CertificateSummary {
        CertificateSummary {
            kind: self.kind,
            beta: self.beta,
            epsilon: self.epsilon,
            rate: self.rate,
            truncation_depth: self.truncation_depth,
            c_constant_upper: self.c_constant_upper,
            tail_bound: self.tail_bound,
            fingerprint: self.fingerprint.clone(),
        }
    }

    /// Fails unless the certificate was built for exactly these modes.
    pub fn check_family(&self, family: &SwitchingFamily) -> Result<()> {
        let actual = family.fingerprint();
        if actual != self.fingerprint {
            return Err(Error::CertificateMismatch { expected: self.fingerprint.clone(), actual });
        }
        Ok(())
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Dimension { expected: self.dim, actual: x.len() });
        }
        Ok(())
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> Result<Evaluation> {
        self.check_dim(x)?;
        let s = self.series(x);
        Ok(Evaluation { value: s.lo, uncertainty: (s.hi - s.lo) + self.tail_bound * x.norm_squared() })
    }

    /// `sqrt(v(x))` at the truncation depth.
    pub fn p_norm(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.evaluate(x)?.value.sqrt())
    }

    /// Relative floating-point allowance of the series sums.
    fn rounding(&self) -> f64 {
        let steps = match &self.evaluator {
            Evaluator::Quadratic { .. } => (self.truncation_depth as f64 + 1.0).log2() + 2.0,
            _ => self.truncation_depth as f64 + 2.0,
        };
        64.0 * self.dim as f64 * steps * f64::EPSILON
    }

    fn series(&self, x: &DVector<f64>) -> SeriesSums {
        match &self.evaluator {
            Evaluator::Quadratic { form, power, .. } => {
                let v = x.dot(&(form * x));
                let next = v + (power * x).norm_squared();
                SeriesSums { lo: v, hi: v, lo_next: next, hi_next: next }
            }
            Evaluator::Structured { structure, .. } => {
                structured_series(structure, self.beta, x.as_slice(), self.truncation_depth)
            }
            Evaluator::Enumerated { modes, table } => {
                enumerated_series(modes, table, self.beta, x, self.truncation_depth)
            }
        }
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|e| e * e).sum()
}

/// Lower series from the greedy-up and greedy-down trajectories, upper series
/// from the worst-case envelope of `|x|`. Both are exact when `x` has one sign.
fn structured_series(structure: &PolicyStructure, beta: f64, x: &[f64], depth: usize) -> SeriesSums {
    let n = x.len();
    let inv = 1.0 / beta;
    let mut cur: [Vec<f64>; 3] = [x.iter().map(|v| v.abs()).collect(), x.to_vec(), x.to_vec()];
    let mut next: [Vec<f64>; 3] = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut selected = vec![0.0; 3 * structure.layout().num_states];
    let x2 = norm2(x);
    let mut sums = SeriesSums { lo: x2, hi: x2, ..Default::default() };
    for t in 1..=depth + 1 {
        let [nh, nu, nd] = &mut next;
        let [h, u, d] = structure.triple_step(
            inv,
            [&cur[0], &cur[1], &cur[2]],
            [nh.as_mut_slice(), nu.as_mut_slice(), nd.as_mut_slice()],
            &mut selected,
        );
        std::mem::swap(&mut cur, &mut next);
        let l = u.max(d).min(h);
        if t <= depth {
            sums.lo += l;
            sums.hi += h;
        } else {
            sums.lo_next = sums.lo + l;
            sums.hi_next = sums.hi + h;
        }
        if h == 0.0 {
            if t <= depth {
                sums.lo_next = sums.lo;
                sums.hi_next = sums.hi;
            }
            break;
        }
    }
    sums
}

/// Explicit product images while they fit the vector budget, then a norm-greedy
/// continuation below and the norm table above.
fn enumerated_series(modes: &[DMatrix<f64>], table: &[f64], beta: f64, x: &DVector<f64>, depth: usize) -> SeriesSums {
    let x2 = x.norm_squared();
    let mut sums = SeriesSums { lo: x2, hi: x2, ..Default::default() };
    let mut level = vec![x.clone()];
    let mut exact = true;
    let mut scale = 1.0;
    for t in 1..=depth + 1 {
        scale /= beta * beta;
        let (l, h);
        if exact && level.len() * modes.len() <= ENUMERATION_VECTOR_BUDGET {
            let mut next: Vec<DVector<f64>> = Vec::with_capacity(level.len() * modes.len());
            let mut seen = HashSet::new();
            for v in &level {
                for m in modes {
                    let w = m * v;
                    if seen.insert(bit_key(w.as_slice())) {
                        next.push(w);
                    }
                }
            }
            let best = next.iter().map(|v| v.norm_squared()).fold(0.0, f64::max);
            l = best * scale;
            h = l;
            level = next;
        } else {
            if exact {
                let best = level.iter().max_by(|a, b| a.norm_squared().partial_cmp(&b.norm_squared()).unwrap()).unwrap().clone();
                level = vec![best];
                exact = false;
            }
            let best = modes
                .iter()
                .map(|m| m * &level[0])
                .max_by(|a, b| a.norm_squared().partial_cmp(&b.norm_squared()).unwrap())
                .unwrap();
            l = best.norm_squared() * scale;
            h = (table.get(t).copied().unwrap_or(f64::INFINITY).powi(2) * x2 * scale).max(l);
            level[0] = best;
        }
        if t <= depth {
            sums.lo += l;
            sums.hi += h;
        } else {
            sums.lo_next = sums.lo + l;
            sums.hi_next = sums.hi + h;
        }
    }
    sums
}

/// Free-function form of [`LyapunovCertificate::evaluate`].
pub fn evaluate_v(cert: &LyapunovCertificate, x: &DVector<f64>) -> Result<Evaluation> {
    cert.evaluate(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionCheck {
    /// Index into the certificate's modes, or `None` for a greedy mode of `x`.
    pub mode: Option<usize>,
    /// `v_T(A x)` (lower series).
    pub lhs: f64,
    /// `beta^2 (v(x) - ||x||^2)`, upper enclosure.
    pub rhs: f64,
    /// Truncation and rounding allowance added to `rhs`.
    pub allowance: f64,
    /// Finite-depth form `v_T(A x) <= beta^2 (v_{T+1}(x) - ||x||^2)` with both
    /// sides computed at fixed depth.
    pub finite_lhs: f64,
    pub finite_rhs: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionReport {
    pub checks: Vec<ContractionCheck>,
    pub holds: bool,
    /// `v(x)` as [`LyapunovCertificate::evaluate`] would return it.
    pub at_x: Evaluation,
}

impl ContractionReport {
    pub fn first_failure(&self) -> Option<&ContractionCheck> {
        self.checks.iter().find(|c| !c.holds)
    }
}

/// Falsification test of `v(A x) <= beta^2 (v(x) - ||x||^2)` (with equality for a
/// fixed mode). Families with more than [`MAX_CHECKED_MODES`] modes are checked on
/// the greedy modes of `x` and an evenly spaced subset; for `x >= 0` the greedy
/// mode dominates every other.
pub fn check_contraction(cert: &LyapunovCertificate, x: &DVector<f64>) -> Result<ContractionReport> {
    check_contraction_on(cert, x, None)
}

/// [`check_contraction`] restricted to the listed mode indices; `None` keeps the
/// default selection, which for a structured family also covers both greedy modes.
pub fn check_contraction_on(
    cert: &LyapunovCertificate,
    x: &DVector<f64>,
    modes: Option<&[usize]>,
) -> Result<ContractionReport> {
    cert.check_dim(x)?;
    let count = cert.num_modes();
    if let Some(bad) = modes.and_then(|m| m.iter().find(|i| **i >= count)) {
        return Err(Error::Parameter(format!("mode index {bad} out of range for {count} modes")));
    }
    let indices = |m: usize| modes.map(|v| v.to_vec()).unwrap_or_else(|| checked_indices(m));
    let beta2 = cert.beta * cert.beta;
    let x2 = x.norm_squared();
    let sx = cert.series(x);
    let round = cert.rounding();
    let mut checks = Vec::new();
    let mut check = |mode: Option<usize>, y: DVector<f64>| {
        let y2 = y.norm_squared();
        let sy = cert.series(&y);
        let slack = round * (sy.hi + beta2 * sx.hi_next) + 1e-300;
        let (lhs, rhs, allowance, holds_inf);
        if let Evaluator::Quadratic { .. } = cert.evaluator {
            // two-sided identity
            lhs = sy.lo;
            rhs = beta2 * (sx.lo - x2);
            allowance = cert.tail_bound * y2 + beta2 * cert.tail_bound * x2 + slack;
            holds_inf = (lhs - rhs).abs() <= allowance;
        } else {
            lhs = sy.lo;
            rhs = beta2 * (sx.hi - x2);
            allowance = beta2 * cert.tail_bound * x2 + slack;
            holds_inf = lhs <= rhs + allowance;
        }
        let finite_lhs = sy.lo;
        let finite_rhs = beta2 * (sx.hi_next - x2);
        let holds_finite = match cert.evaluator {
            Evaluator::Quadratic { .. } => (finite_lhs - finite_rhs).abs() <= slack,
            _ => finite_lhs <= finite_rhs + slack,
        };
        checks.push(ContractionCheck {
            mode,
            lhs,
            rhs,
            allowance,
            finite_lhs,
            finite_rhs,
            holds: holds_inf && holds_finite,
        });
    };
    let with_greedy = modes.is_none();
    match &cert.evaluator {
        Evaluator::Quadratic { mode, .. } => {
            if modes.is_none_or(|m| !m.is_empty()) {
                check(Some(0), mode * x);
            }
        }
        Evaluator::Enumerated { modes, .. } => {
            for i in indices(modes.len()) {
                check(Some(i), &modes[i] * x);
            }
        }
        Evaluator::Structured { structure, modes } => {
            if with_greedy {
                let mut selected = vec![0.0; structure.layout().num_states];
                for rule in [Select::Max, Select::Min] {
                    let mut out = DVector::zeros(x.len());
                    structure.step_into(rule, x.as_slice(), &mut selected, out.as_mut_slice());
                    check(None, out);
                }
            }
            for i in indices(modes.len()) {
                check(Some(i), modes[i].matrix() * x);
            }
        }
    }
    let holds = checks.iter().all(|c| c.holds);
    let at_x = Evaluation { value: sx.lo, uncertainty: (sx.hi - sx.lo) + cert.tail_bound * x2 };
    Ok(ContractionReport { checks, holds, at_x })
}

fn checked_indices(m: usize) -> Vec<usize> {
    if m <= MAX_CHECKED_MODES {
        (0..m).collect()
    } else {
        (0..MAX_CHECKED_MODES).map(|j| j * (m - 1) / (MAX_CHECKED_MODES - 1)).collect()
    }
}

/// Finite-time envelope `sqrt(C) beta^k ||e_0||_2 + alpha C sqrt(W_max / (1 - beta^2))`.
pub fn envelope(cert: &LyapunovCertificate, k: usize, e0_part_norm2: f64, alpha: f64, w_max: f64) -> Result<f64> {
    envelope_value(cert.c_constant_upper, cert.beta, k, e0_part_norm2, alpha, w_max)
}

pub fn envelope_value(c: f64, beta: f64, k: usize, e0_part_norm2: f64, alpha: f64, w_max: f64) -> Result<f64> {
    if !(beta < 1.0) {
        return Err(Error::NonContractive { beta });
    }
    let transient = c.sqrt() * beta.powi(k.min(i32::MAX as usize) as i32) * e0_part_norm2;
    let floor = if w_max > 0.0 { alpha * c * (w_max / (1.0 - beta * beta)).sqrt() } else { 0.0 };
    Ok(transient + floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{example1_mdp, random_mdp};
    use crate::mdp::DeterministicPolicy;
    use crate::switching::{family_full, FamilyLabel};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vectors(n: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))).collect()
    }

    /// Product certificate at margin `(1 - upper) / 4` over the default bracket.
    fn margin_cert(family: &SwitchingFamily, tol: f64) -> LyapunovCertificate {
        let upper = default_bracket(family).unwrap().upper;
        build_product_certificate_with(family, upper, (1.0 - upper) / 4.0, tol, DEFAULT_DEPTH_CAP).unwrap()
    }

    fn example1_family() -> SwitchingFamily {
        family_full(&example1_mdp(), 0.1).unwrap()
    }

    fn example1_mode(action: usize) -> ModeMatrix {
        let pi = DeterministicPolicy::constant(1, action);
        example1_family().modes().iter().find(|m| m.deterministic_policy() == Some(&pi)).unwrap().clone()
    }

    #[test]
    fn zero_mode_gives_identity_form() {
        let mode = ModeMatrix::from_matrix(DMatrix::zeros(3, 3)).unwrap();
        let cert = build_fixed_mode_certificate(&mode, 0.5, DEFAULT_TAIL_TOL).unwrap();
        assert_eq!(cert.c_constant_upper(), 1.0);
        assert_eq!(cert.beta(), 0.5);
        for x in random_vectors(3, 10, 1) {
            let ev = cert.evaluate(&x).unwrap();
            assert!((ev.value - x.norm_squared()).abs() < 1e-15);
            assert_eq!(ev.uncertainty, 0.0);
        }
        let zero = cert.evaluate(&DVector::zeros(3)).unwrap();
        assert_eq!((zero.value, zero.uncertainty), (0.0, 0.0));
    }

    #[test]
    fn example1_slow_block_matches_geometric_sum() {
        let cert = build_fixed_mode_certificate(&example1_mode(0), 0.004, 1e-15).unwrap();
        assert!((cert.beta() - 0.995).abs() < 1e-15);
        let ratio: f64 = 0.99 / 0.995;
        let expected = 1.0 / (1.0 - ratio * ratio);
        let got = cert.evaluate(&DVector::from_vec(vec![0.0, 1.0])).unwrap();
        assert!((got.value - expected).abs() <= 1e-10 * expected, "{} vs {expected}", got.value);
    }

    #[test]
    fn scalar_closed_form() {
        let (h, beta) = (0.6, 0.8);
        let mode = ModeMatrix::from_matrix(DMatrix::from_element(1, 1, h)).unwrap();
        let cert = build_fixed_mode_certificate(&mode, beta - h, 1e-14).unwrap();
        let factor = 1.0 / (1.0 - (h / beta) * (h / beta));
        assert!((cert.c_constant_upper() - factor).abs() < 1e-12);
        for x in [-2.0, 0.3, 1.0] {
            let ev = cert.evaluate(&DVector::from_element(1, x)).unwrap();
            let want = x * x * factor;
            assert!(ev.value <= want + 1e-12 && want <= ev.value + ev.uncertainty + 1e-12);
            assert!((ev.value - want).abs() < 1e-12 * want.max(1.0));
            let report = check_contraction(&cert, &DVector::from_element(1, x)).unwrap();
            assert!(report.holds);
        }
        // the identity itself, in closed form
        assert!((h * h * factor - beta * beta * (factor - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn singleton_family_matches_fixed_mode() {
        let mode = example1_mode(1);
        let fixed = build_fixed_mode_certificate(&mode, 0.0005, DEFAULT_TAIL_TOL).unwrap();
        let family = SwitchingFamily::singleton(mode.clone());
        let product = build_product_certificate(&family, 0.0005, DEFAULT_TAIL_TOL).unwrap();
        assert_eq!(product.kind(), CertificateKind::ProductFamily);
        assert!((product.beta() - fixed.beta()).abs() < 1e-12);
        assert!((product.c_constant_upper() - fixed.c_constant_upper()).abs() <= 1e-12 * fixed.c_constant_upper());
        for x in random_vectors(2, 20, 2) {
            let (a, b) = (product.evaluate(&x).unwrap(), fixed.evaluate(&x).unwrap());
            assert!((a.value - b.value).abs() <= 1e-12 * b.value);
        }
    }

    #[test]
    fn two_zero_matrices() {
        let family =
            SwitchingFamily::from_matrices(vec![DMatrix::zeros(2, 2), DMatrix::zeros(2, 2)], FamilyLabel::Custom).unwrap();
        let cert = build_product_certificate(&family, 0.3, DEFAULT_TAIL_TOL).unwrap();
        assert_eq!(cert.c_constant_upper(), 1.0);
        let x = DVector::from_vec(vec![0.5, -2.0]);
        assert!((cert.evaluate(&x).unwrap().value - x.norm_squared()).abs() < 1e-15);
    }

    #[test]
    fn example1_family_certificate() {
        let family = example1_family();
        let cert = build_product_certificate_with(&family, 0.999, 0.0005, 0.5, DEFAULT_DEPTH_CAP).unwrap();
        assert!((cert.beta() - 0.9995).abs() < 1e-15);
        assert!(cert.c_constant_upper().is_finite());
        for x in random_vectors(2, 100, 3) {
            let ev = cert.evaluate(&x).unwrap();
            let x2 = x.norm_squared();
            assert!(ev.value >= x2);
            assert!(ev.value + ev.uncertainty <= cert.c_constant_upper() * x2 * (1.0 + 1e-12));
        }
        for x in random_vectors(2, 50, 4) {
            let report = check_contraction(&cert, &x).unwrap();
            assert!(report.holds, "{:?}", report.first_failure());
        }
    }

    #[test]
    fn fixed_mode_identity_on_random_vectors() {
        let cert = build_fixed_mode_certificate(&example1_mode(0), 0.004, DEFAULT_TAIL_TOL).unwrap();
        for x in random_vectors(2, 50, 5) {
            assert!(check_contraction(&cert, &x).unwrap().holds);
        }
        assert!(check_contraction(&cert, &DVector::zeros(2)).unwrap().holds);
    }

    #[test]
    fn homogeneity_and_monotonicity() {
        let family = family_full(&random_mdp(2, 3, 6, 1.0).unwrap(), 0.5).unwrap();
        let cert = margin_cert(&family, 0.1);
        for x in random_vectors(6, 20, 7) {
            let base = cert.evaluate(&x).unwrap();
            for lambda in [2.0, -1.0, -0.5] {
                let scaled = cert.evaluate(&(&x * lambda)).unwrap();
                assert_eq!(scaled.value, lambda * lambda * base.value);
            }
            let s = cert.series(&x);
            assert!(s.lo <= s.lo_next && s.hi <= s.hi_next && s.lo <= s.hi);
        }
    }

    #[test]
    fn p_norm_triangle_inequality() {
        let family = family_full(&random_mdp(2, 2, 8, 1.0).unwrap(), 0.4).unwrap();
        let product = margin_cert(&family, 0.1);
        let rate = spectral_radius(family.modes()[0].matrix()).unwrap();
        let fixed = build_fixed_mode_certificate(&family.modes()[0], (1.0 - rate) / 4.0, DEFAULT_TAIL_TOL).unwrap();
        let xs = random_vectors(4, 60, 9);
        for w in xs.chunks(2) {
            let (x, y) = (&w[0], &w[1]);
            let sum = x + y;
            let p = |c: &LyapunovCertificate, v: &DVector<f64>| c.p_norm(v).unwrap();
            assert!(p(&fixed, &sum) <= p(&fixed, x) + p(&fixed, y) + 1e-9);
            let upper = |v: &DVector<f64>| {
                let e = product.evaluate(v).unwrap();
                (e.value + e.uncertainty).sqrt()
            };
            assert!(p(&product, &sum) <= upper(x) + upper(y) + 1e-9);
        }
    }

    #[test]
    fn product_dominates_every_fixed_mode() {
        let family = family_full(&random_mdp(2, 2, 10, 1.0).unwrap(), 0.4).unwrap();
        let product = margin_cert(&family, 0.05);
        for mode in family.modes() {
            let eps = product.beta() - spectral_radius(mode.matrix()).unwrap();
            let fixed = build_fixed_mode_certificate(mode, eps, DEFAULT_TAIL_TOL).unwrap();
            for x in random_vectors(4, 30, 11) {
                let (p, f) = (product.evaluate(&x).unwrap(), fixed.evaluate(&x).unwrap());
                assert!(f.value <= p.value + p.uncertainty + 1e-9);
            }
        }
    }

    #[test]
    fn unstructured_family_certificate() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mats: Vec<DMatrix<f64>> =
            (0..3).map(|_| DMatrix::from_fn(3, 3, |_, _| rng.random_range(-0.3..0.3))).collect();
        let family = SwitchingFamily::from_matrices(mats, FamilyLabel::Custom).unwrap();
        let cert = build_product_certificate(&family, 0.05, 1e-3).unwrap();
        let table = cert.norm_table().unwrap();
        assert!(table.exact_depth() >= 1);
        for x in random_vectors(3, 50, 13) {
            let ev = cert.evaluate(&x).unwrap();
            assert!(ev.value >= x.norm_squared() - 1e-15);
            assert!(ev.value + ev.uncertainty <= cert.c_constant_upper() * x.norm_squared() * (1.0 + 1e-12));
            assert!(check_contraction(&cert, &x).unwrap().holds);
        }
    }

    #[test]
    fn norm_table_is_submultiplicative() {
        let family = family_full(&random_mdp(3, 2, 14, 1.0).unwrap(), 0.3).unwrap();
        let cert = margin_cert(&family, 0.1);
        let a = cert.norm_table().unwrap().values();
        assert_eq!(a[0], 1.0);
        let top = a.len().min(60);
        for m in 1..top {
            for n in 1..top - m {
                assert!(a[m + n] <= a[m] * a[n] * (1.0 + 1e-9), "a[{}] > a[{m}] a[{n}]", m + n);
            }
        }
    }

    #[test]
    fn envelope_examples() {
        assert_eq!(envelope_value(1.0, 0.5, 3, 1.0, 0.3, 0.0).unwrap(), 0.125);
        assert!(matches!(envelope_value(1.0, 1.0, 3, 1.0, 0.3, 0.0), Err(Error::NonContractive { .. })));
        let floor = 0.1 * 4.0 * (9.0f64 / (1.0 - 0.25)).sqrt();
        let far = envelope_value(4.0, 0.5, 10_000, 1.0, 0.1, 9.0).unwrap();
        assert!((far - floor).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for k in 0..50 {
            let v = envelope_value(3.0, 0.9, k, 2.0, 0.1, 1.0).unwrap();
            assert!(v <= prev);
            prev = v;
        }
        let x = DVector::from_vec(vec![0.3, -0.7]);
        let cert = build_fixed_mode_certificate(&example1_mode(0), 0.004, DEFAULT_TAIL_TOL).unwrap();
        assert!(envelope(&cert, 0, x.norm(), 0.1, 0.0).unwrap() >= x.amax());
    }

    #[test]
    fn example1_negative_envelope_contains_realized_decay() {
        let cert = build_fixed_mode_certificate(&example1_mode(0), 0.004, DEFAULT_TAIL_TOL).unwrap();
        let e0_minus = 1.0;
        for k in 0..=500 {
            let realized = (1.0 + 81.0 / 89.0) * 0.91f64.powi(k as i32);
            let bound = envelope(&cert, k, e0_minus, 0.1, 0.0).unwrap();
            assert!(bound >= 0.91f64.powi(k as i32) * e0_minus);
            assert!(cert.beta() >= 0.91);
            let _ = realized;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn norm_equivalence_holds(x0 in -10.0f64..10.0, x1 in -10.0f64..10.0) {
            let family = example1_family();
            let cert = build_product_certificate_with(&family, 0.999, 0.0005, 0.5, DEFAULT_DEPTH_CAP).unwrap();
            let x = DVector::from_vec(vec![x0, x1]);
            let ev = cert.evaluate(&x).unwrap();
            prop_assert!(ev.value >= x.norm_squared() * (1.0 - 1e-15));
            prop_assert!(ev.value + ev.uncertainty <= cert.c_constant_upper() * x.norm_squared() * (1.0 + 1e-12) + 1e-300);
        }

        #[test]
        fn fixed_mode_identity(h in -0.95f64..0.95, x in -5.0f64..5.0) {
            let mode = ModeMatrix::from_matrix(DMatrix::from_element(1, 1, h)).unwrap();
            let cert = build_fixed_mode_certificate(&mode, (1.0 - h.abs()) / 2.0, DEFAULT_TAIL_TOL).unwrap();
            prop_assert!(check_contraction(&cert, &DVector::from_element(1, x)).unwrap().holds);
        }
    }
}
