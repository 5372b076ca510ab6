//! Mode matrices `A_pi = I - alpha D + alpha gamma D P Pi^pi`, switching families
//! over `Theta` / `Theta*`, spectral radii and joint-spectral-radius brackets.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mdp::{
    DeterministicPolicy, Layout, Mdp, OptimalSolution, Policy, PolicySet, StochasticPolicy,
    POLICY_ENUMERATION_LIMIT,
};

/// Default product-tree depth of [`jsr_bracket`].
pub const DEFAULT_JSR_DEPTH: usize = 10;

/// Default cap on the number of products visited by [`jsr_bracket`].
pub const DEFAULT_PRODUCT_BUDGET: usize = 1_000_000;

/// Matrices closer than this (max-abs) are treated as the same mode.
pub const MODE_DEDUP_TOLERANCE: f64 = 1e-14;

/// Pruning margin of the product tree.
const PRUNE_MARGIN: f64 = 1e-12;

const SCHUR_ITERATIONS_PER_DIM: usize = 200;

pub fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::StepSize(alpha))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModePolicy {
    Deterministic(DeterministicPolicy),
    Stochastic(StochasticPolicy),
    /// A raw matrix not generated by an MDP policy.
    Unlabeled,
}

impl From<DeterministicPolicy> for ModePolicy {
    fn from(p: DeterministicPolicy) -> Self {
        ModePolicy::Deterministic(p)
    }
}

impl From<StochasticPolicy> for ModePolicy {
    fn from(p: StochasticPolicy) -> Self {
        ModePolicy::Stochastic(p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeMatrix {
    matrix: DMatrix<f64>,
    policy: ModePolicy,
    alpha: Option<f64>,
}

impl ModeMatrix {
    /// Wraps an arbitrary square matrix (used for families not built from an MDP).
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Dimension { expected: matrix.nrows(), actual: matrix.ncols() });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { matrix, policy: ModePolicy::Unlabeled, alpha: None })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn policy(&self) -> &ModePolicy {
        &self.policy
    }

    pub fn deterministic_policy(&self) -> Option<&DeterministicPolicy> {
        match &self.policy {
            ModePolicy::Deterministic(p) => Some(p),
            _ => None,
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Builds `A_mu = I - alpha D + alpha gamma D P Pi^mu` entrywise.
pub fn build_mode_matrix<P>(mdp: &Mdp, alpha: f64, policy: &P) -> Result<ModeMatrix>
where
    P: Policy + Clone + Into<ModePolicy>,
{
    check_alpha(alpha)?;
    let layout = mdp.layout();
    if policy.num_states() != layout.num_states {
        return Err(Error::Dimension { expected: layout.num_states, actual: policy.num_states() });
    }
    let n = layout.len();
    let d = mdp.sampling();
    let p = mdp.transition();
    let gamma = mdp.gamma();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let scale = alpha * gamma * d[i];
        for j in 0..n {
            let (next, action) = layout.pair(j);
            m[(i, j)] = scale * p[(i, next)] * policy.weight(next, action);
        }
        m[(i, i)] += 1.0 - alpha * d[i];
    }
    Ok(ModeMatrix { matrix: m, policy: policy.clone().into(), alpha: Some(alpha) })
}

/// The shared structure of every `A_pi` for one `(mdp, alpha)`:
/// `A_pi y = (1 - alpha d) . y + G (Pi^pi y)` with `G = alpha gamma D P`.
///
/// Because the policy only picks one entry of `y` per next state, `max_pi A_pi y`
/// over a rectangular policy set is attained by a single greedy policy whenever
/// `y >= 0`. This gives exact worst-case products without enumerating them.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyStructure {
    layout: Layout,
    base: Vec<f64>,
    /// Row-major `n x |S|`.
    coupling: Vec<f64>,
    allowed: Vec<Vec<usize>>,
}

impl PolicyStructure {
    pub fn new(mdp: &Mdp, alpha: f64, allowed: Vec<Vec<usize>>) -> Result<Self> {
        check_alpha(alpha)?;
        let layout = mdp.layout();
        if allowed.len() != layout.num_states || allowed.iter().any(Vec::is_empty) {
            return Err(Error::InvalidPolicy("every state needs at least one allowed action".into()));
        }
        let n = layout.len();
        let ns = layout.num_states;
        let d = mdp.sampling();
        let p = mdp.transition();
        let base = (0..n).map(|i| 1.0 - alpha * d[i]).collect();
        let mut coupling = vec![0.0; n * ns];
        for i in 0..n {
            let scale = alpha * mdp.gamma() * d[i];
            for s in 0..ns {
                coupling[i * ns + s] = scale * p[(i, s)];
            }
        }
        Ok(Self { layout, base, coupling, allowed })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn allowed(&self) -> &[Vec<usize>] {
        &self.allowed
    }

    /// Number of policies in the rectangular set.
    pub fn num_policies(&self) -> f64 {
        self.allowed.iter().map(|a| a.len() as f64).product()
    }

    fn finish(&self, x: &[f64], selected: &[f64], out: &mut [f64]) {
        let ns = self.layout.num_states;
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.coupling[i * ns..(i + 1) * ns];
            let mut acc = self.base[i] * x[i];
            for (g, v) in row.iter().zip(selected) {
                acc += g * v;
            }
            *o = acc;
        }
    }

    /// `out = A_pi x` for a deterministic action choice per state.
    pub fn apply_actions(&self, actions: &[usize], x: &[f64], out: &mut [f64]) {
        let l = self.layout;
        let selected: Vec<f64> = (0..l.num_states).map(|s| x[l.index(s, actions[s])]).collect();
        self.finish(x, &selected, out);
    }

    /// `A_mu x` for any policy.
    pub fn apply(&self, policy: &impl Policy, x: &DVector<f64>) -> DVector<f64> {
        let selected = policy.select(self.layout, x);
        let mut out = DVector::zeros(x.len());
        self.finish(x.as_slice(), selected.as_slice(), out.as_mut_slice());
        out
    }

    /// Allowed action per state maximizing `score(y(s,a))`, smallest index on ties.
    pub fn greedy_by(&self, y: &[f64], score: impl Fn(f64) -> f64) -> Vec<usize> {
        let l = self.layout;
        self.allowed
            .iter()
            .enumerate()
            .map(|(s, acts)| {
                let mut best = acts[0];
                let mut best_score = score(y[l.index(s, best)]);
                for &a in &acts[1..] {
                    let v = score(y[l.index(s, a)]);
                    if v > best_score {
                        best = a;
                        best_score = v;
                    }
                }
                best
            })
            .collect()
    }

    /// Writes `y(s, a_s)` into `selected`, where `a_s` is the allowed action with
    /// the largest (or smallest) entry.
    pub fn select_into(&self, rule: Select, y: &[f64], selected: &mut [f64]) {
        let l = self.layout;
        for (s, acts) in self.allowed.iter().enumerate() {
            let mut v = y[l.index(s, acts[0])];
            for &a in &acts[1..] {
                let c = y[l.index(s, a)];
                v = match rule {
                    Select::Max => v.max(c),
                    Select::Min => v.min(c),
                };
            }
            selected[s] = v;
        }
    }

    /// `out = A_g y` for the greedy policy `g` picked by `rule`; `selected` is scratch of length `|S|`.
    pub fn step_into(&self, rule: Select, y: &[f64], selected: &mut [f64], out: &mut [f64]) {
        self.select_into(rule, y, selected);
        self.finish(y, selected, out);
    }

    /// One scaled step of three greedy trajectories at once:
    /// `max`-greedy on `hi` and `up`, `min`-greedy on `down`, each times `scale`.
    /// Returns the squared Euclidean norms of the three results.
    pub fn triple_step(&self, scale: f64, cur: [&[f64]; 3], next: [&mut [f64]; 3], selected: &mut [f64]) -> [f64; 3] {
        let l = self.layout;
        let ns = l.num_states;
        let [hi, up, down] = cur;
        let (sh, rest) = selected.split_at_mut(ns);
        let (su, sd) = rest.split_at_mut(ns);
        for (s, acts) in self.allowed.iter().enumerate() {
            let j = l.index(s, acts[0]);
            let (mut h, mut u, mut d) = (hi[j], up[j], down[j]);
            for &a in &acts[1..] {
                let j = l.index(s, a);
                h = h.max(hi[j]);
                u = u.max(up[j]);
                d = d.min(down[j]);
            }
            sh[s] = h;
            su[s] = u;
            sd[s] = d;
        }
        let [oh, ou, od] = next;
        let mut norms = [0.0; 3];
        for i in 0..oh.len() {
            let row = &self.coupling[i * ns..(i + 1) * ns];
            let b = self.base[i];
            let (mut h, mut u, mut d) = (b * hi[i], b * up[i], b * down[i]);
            for s in 0..ns {
                let g = row[s];
                h += g * sh[s];
                u += g * su[s];
                d += g * sd[s];
            }
            let (h, u, d) = (h * scale, u * scale, d * scale);
            oh[i] = h;
            ou[i] = u;
            od[i] = d;
            norms[0] += h * h;
            norms[1] += u * u;
            norms[2] += d * d;
        }
        norms
    }

    /// `out = max_pi A_pi y` componentwise; exact for `y >= 0`.
    pub fn upper_step(&self, y: &[f64], out: &mut [f64]) {
        let mut selected = vec![0.0; self.layout.num_states];
        self.step_into(Select::Max, y, &mut selected, out);
    }

    /// `out = max_pi A_pi 1` iterated `k` times; `||.||_inf` of the result is
    /// `max_{|sigma| = k} ||A_sigma||_inf`.
    pub fn worst_case_inf_norms(&self, depth: usize) -> Vec<f64> {
        let n = self.layout.len();
        let mut y = vec![1.0; n];
        let mut next = vec![0.0; n];
        let mut selected = vec![0.0; self.layout.num_states];
        let mut norms = Vec::with_capacity(depth + 1);
        norms.push(1.0);
        for _ in 0..depth {
            self.step_into(Select::Max, &y, &mut selected, &mut next);
            std::mem::swap(&mut y, &mut next);
            norms.push(y.iter().fold(0.0_f64, |m, v| m.max(*v)));
        }
        norms
    }

    /// Dense `A_pi`.
    pub fn mode_matrix(&self, actions: &[usize]) -> DMatrix<f64> {
        let l = self.layout;
        let n = l.len();
        let ns = l.num_states;
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for s in 0..ns {
                m[(i, l.index(s, actions[s]))] = self.coupling[i * ns + s];
            }
            m[(i, i)] += self.base[i];
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Select {
    Max,
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyLabel {
    /// All deterministic policies.
    Full,
    /// Optimal policies only.
    Optimal,
    Singleton,
    Custom,
}

#[derive(Debug, Clone)]
pub struct SwitchingFamily {
    modes: Vec<ModeMatrix>,
    label: FamilyLabel,
    structure: Option<PolicyStructure>,
}

impl SwitchingFamily {
    /// A family of raw matrices (no MDP structure).
    pub fn from_matrices(matrices: Vec<DMatrix<f64>>, label: FamilyLabel) -> Result<Self> {
        let modes = matrices.into_iter().map(ModeMatrix::from_matrix).collect::<Result<Vec<_>>>()?;
        Self::from_modes(modes, label)
    }

    pub fn from_modes(modes: Vec<ModeMatrix>, label: FamilyLabel) -> Result<Self> {
        let first = modes.first().ok_or_else(|| Error::Parameter("empty switching family".into()))?;
        let dim = first.dim();
        let alpha = first.alpha;
        for m in &modes {
            if m.dim() != dim {
                return Err(Error::Dimension { expected: dim, actual: m.dim() });
            }
            if m.alpha != alpha {
                return Err(Error::Parameter("modes were built with different step sizes".into()));
            }
        }
        Ok(Self { modes: dedup_modes(modes), label, structure: None })
    }

    pub fn singleton(mode: ModeMatrix) -> Self {
        Self { modes: vec![mode], label: FamilyLabel::Singleton, structure: None }
    }

    pub fn modes(&self) -> &[ModeMatrix] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn is_singleton(&self) -> bool {
        self.modes.len() == 1
    }

    pub fn dim(&self) -> usize {
        self.modes[0].dim()
    }

    pub fn label(&self) -> FamilyLabel {
        self.label
    }

    pub fn alpha(&self) -> Option<f64> {
        self.modes[0].alpha
    }

    pub fn structure(&self) -> Option<&PolicyStructure> {
        self.structure.as_ref()
    }

    /// SHA-256 over the mode matrices (dimension, then entries column-major).
    pub fn fingerprint(&self) -> String {
        fingerprint_matrices(self.modes.iter().map(ModeMatrix::matrix))
    }
}

pub(crate) fn fingerprint_matrices<'a>(matrices: impl Iterator<Item = &'a DMatrix<f64>>) -> String {
    let mut hasher = Sha256::new();
    for m in matrices {
        hasher.update((m.nrows() as u64).to_le_bytes());
        for v in m.iter() {
            hasher.update(v.to_le_bytes());
        }
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn dedup_modes(modes: Vec<ModeMatrix>) -> Vec<ModeMatrix> {
    let mut seen_bits = HashSet::new();
    let mut kept: Vec<ModeMatrix> = Vec::with_capacity(modes.len());
    let pairwise = modes.len() <= 4096;
    for mode in modes {
        let bits: Vec<u64> = mode.matrix.iter().map(|v| v.to_bits()).collect();
        if !seen_bits.insert(bits) {
            continue;
        }
        if pairwise
            && kept.iter().any(|k| (&k.matrix - &mode.matrix).amax() <= MODE_DEDUP_TOLERANCE)
        {
            continue;
        }
        kept.push(mode);
    }
    kept
}

fn family_from_set(mdp: &Mdp, alpha: f64, set: PolicySet, label: FamilyLabel) -> Result<SwitchingFamily> {
    check_alpha(alpha)?;
    let policies = set.enumerate(POLICY_ENUMERATION_LIMIT)?;
    let structure = PolicyStructure::new(mdp, alpha, set.choices().to_vec())?;
    let modes = policies
        .into_iter()
        .map(|pi| ModeMatrix {
            matrix: structure.mode_matrix(pi.actions()),
            policy: ModePolicy::Deterministic(pi),
            alpha: Some(alpha),
        })
        .collect();
    let modes = dedup_modes(modes);
    let label = if modes.len() == 1 { FamilyLabel::Singleton } else { label };
    Ok(SwitchingFamily { modes, label, structure: Some(structure) })
}

/// `M_alpha = {A_pi : pi in Theta}`.
pub fn family_full(mdp: &Mdp, alpha: f64) -> Result<SwitchingFamily> {
    family_from_set(mdp, alpha, PolicySet::all(mdp.layout()), FamilyLabel::Full)
}

/// `M_alpha^- = {A_pi : pi in Theta*}`.
pub fn family_optimal(mdp: &Mdp, alpha: f64, sol: &OptimalSolution) -> Result<SwitchingFamily> {
    family_from_set(mdp, alpha, sol.optimal_policies(), FamilyLabel::Optimal)
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::Dimension { expected: m.nrows(), actual: m.ncols() });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    match m.nrows() {
        0 => Ok(0.0),
        1 => Ok(m[(0, 0)].abs()),
        _ => {
            // an unbounded iteration count can cycle forever on clustered spectra
            let cap = SCHUR_ITERATIONS_PER_DIM * m.nrows();
            let scale = m.amax().max(f64::MIN_POSITIVE);
            let schur = [f64::EPSILON, 1e-14 * scale, 1e-12 * scale]
                .into_iter()
                .find_map(|eps| m.clone().try_schur(eps, cap))
                .ok_or_else(|| Error::Parameter("Schur iteration for the spectral radius did not converge".into()))?;
            Ok(schur.complex_eigenvalues().iter().fold(0.0_f64, |r, z| r.max(z.norm())))
        }
    }
}

/// `(rho_-^star, pi_-^star)`: the smallest single-mode spectral radius, ties
/// broken towards the lexicographically smallest policy.
pub fn rho_minus_star(family: &SwitchingFamily) -> Result<(f64, DeterministicPolicy)> {
    let mut best: Option<(f64, &DeterministicPolicy)> = None;
    for mode in family.modes() {
        let pi = mode
            .deterministic_policy()
            .ok_or_else(|| Error::Parameter("family modes carry no deterministic policy".into()))?;
        let rho = spectral_radius(mode.matrix())?;
        let better = match best {
            None => true,
            Some((r, p)) => rho < r - 1e-13 * r.max(1.0) || (rho <= r + 1e-13 * r.max(1.0) && pi < p),
        };
        if better {
            best = Some((rho, pi));
        }
    }
    let (rho, pi) = best.ok_or_else(|| Error::Parameter("empty switching family".into()))?;
    Ok((rho, pi.clone()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Infinity,
    Spectral,
}

impl std::str::FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inf" | "infinity" => Ok(NormKind::Infinity),
            "2" | "spectral" => Ok(NormKind::Spectral),
            other => Err(Error::Parameter(format!("unknown norm `{other}`"))),
        }
    }
}

pub fn matrix_norm(m: &DMatrix<f64>, norm: NormKind) -> f64 {
    match norm {
        NormKind::Infinity => m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max),
        NormKind::Spectral => m.singular_values().iter().fold(0.0_f64, |a, b| a.max(*b)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsrBracket {
    pub lower: f64,
    pub upper: f64,
    /// Product length `T` of the bound.
    pub depth: usize,
    pub norm_used: NormKind,
    /// Products whose norm and spectral radius were computed.
    pub products_evaluated: usize,
}

impl JsrBracket {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, value: f64, tol: f64) -> bool {
        self.lower - tol <= value && value <= self.upper + tol
    }
}

/// Number of products of length `1..=depth` over `modes` matrices.
pub fn product_count(modes: usize, depth: usize) -> f64 {
    (1..=depth).map(|k| (modes as f64).powi(k as i32)).sum()
}

/// Largest depth whose full product tree fits in `budget`.
pub fn max_feasible_depth(modes: usize, budget: usize) -> usize {
    let mut depth = 0;
    while depth < 64 && product_count(modes, depth + 1) <= budget as f64 {
        depth += 1;
    }
    depth
}

/// JSR bracket with the default product budget.
pub fn jsr_bracket(family: &SwitchingFamily, depth: usize, norm: NormKind) -> Result<JsrBracket> {
    jsr_bracket_with_budget(family, depth, norm, DEFAULT_PRODUCT_BUDGET)
}

/// Branch-and-bound over the product tree.
///
/// Lower bound: `max rho(A_sigma)^{1/k}` over visited products. Upper bound: for
/// each level `k`, the max over length-`k` words of `min_{j <= k} ||prefix_j||^{1/j}`;
/// subtrees whose prefix bound is already within `PRUNE_MARGIN` of the lower bound
/// are cut. Policy-structured families also use the exact worst-case product
/// norms from [`PolicyStructure`].
pub fn jsr_bracket_with_budget(
    family: &SwitchingFamily,
    depth: usize,
    norm: NormKind,
    budget: usize,
) -> Result<JsrBracket> {
    if depth == 0 {
        return Err(Error::Parameter("JSR depth must be at least 1".into()));
    }
    let m = family.len();
    if product_count(m, depth) > budget as f64 {
        return Err(Error::ProductBudget { budget, max_feasible_depth: max_feasible_depth(m, budget) });
    }
    let mut search = ProductSearch {
        modes: family.modes().iter().map(|x| x.matrix().clone()).collect(),
        norm,
        depth,
        lower: 0.0,
        level_max: vec![f64::NEG_INFINITY; depth + 1],
        pruned_at: vec![false; depth + 1],
        evaluated: 0,
    };
    let n = family.dim();
    let mut products = vec![DMatrix::identity(n, n); depth + 1];
    search.descend(1, f64::INFINITY, &mut products)?;

    let mut lower = search.lower;
    let mut structured_upper = f64::INFINITY;
    if let Some(structure) = family.structure() {
        let (bound, greedy_lower) = structured_bounds(structure, depth, norm)?;
        structured_upper = bound;
        lower = lower.max(greedy_lower);
    }

    let mut upper = f64::INFINITY;
    let mut pruned_so_far = false;
    for k in 1..=depth {
        pruned_so_far |= search.pruned_at[k];
        let mut level = search.level_max[k];
        if pruned_so_far {
            level = level.max(lower + PRUNE_MARGIN);
        }
        if level.is_finite() {
            upper = upper.min(level);
        }
    }
    upper = upper.min(structured_upper).max(lower);
    Ok(JsrBracket { lower, upper, depth, norm_used: norm, products_evaluated: search.evaluated })
}

struct ProductSearch {
    modes: Vec<DMatrix<f64>>,
    norm: NormKind,
    depth: usize,
    lower: f64,
    level_max: Vec<f64>,
    pruned_at: Vec<bool>,
    evaluated: usize,
}

impl ProductSearch {
    /// `products[k-1]` holds the current prefix of length `k-1`.
    fn descend(&mut self, k: usize, parent_bound: f64, products: &mut [DMatrix<f64>]) -> Result<()> {
        let exponent = 1.0 / k as f64;
        for i in 0..self.modes.len() {
            let (done, rest) = products.split_at_mut(k);
            let q = &mut rest[0];
            self.modes[i].mul_to(&done[k - 1], q);
            self.evaluated += 1;
            let scaled_norm = matrix_norm(q, self.norm).powf(exponent);
            let bound = parent_bound.min(scaled_norm);
            // rho <= any induced norm, so skip the eigenvalues when they cannot help
            if scaled_norm > self.lower {
                let rho = spectral_radius(q)?.powf(exponent);
                self.lower = self.lower.max(rho);
            }
            if bound <= self.lower + PRUNE_MARGIN {
                self.pruned_at[k] = true;
                continue;
            }
            self.level_max[k] = self.level_max[k].max(bound);
            if k < self.depth {
                self.descend(k + 1, bound, products)?;
            }
        }
        Ok(())
    }
}

/// Upper bound from exact worst-case products and a lower bound from the greedy
/// product sequence.
fn structured_bounds(structure: &PolicyStructure, depth: usize, norm: NormKind) -> Result<(f64, f64)> {
    let n = structure.layout().len();
    let mut upper = f64::INFINITY;
    match norm {
        NormKind::Infinity => {
            for (k, v) in structure.worst_case_inf_norms(depth).into_iter().enumerate().skip(1) {
                upper = upper.min(v.powf(1.0 / k as f64));
            }
        }
        NormKind::Spectral => {
            let mut table = WorstCaseTable::new(structure);
            for k in 1..=depth {
                table.advance();
                upper = upper.min(table.spectral_bound().powf(1.0 / k as f64));
            }
        }
    }
    // spectral radius of the greedy product along the all-ones envelope
    let mut y = vec![1.0; n];
    let mut next = vec![0.0; n];
    let mut product = DMatrix::identity(n, n);
    let mut lower = 0.0_f64;
    for k in 1..=depth {
        let actions = structure.greedy_by(&y, |v| v);
        product = structure.mode_matrix(&actions) * product;
        lower = lower.max(spectral_radius(&product)?.powf(1.0 / k as f64));
        structure.upper_step(&y, &mut next);
        std::mem::swap(&mut y, &mut next);
    }
    Ok((upper, lower))
}

/// Column-wise worst-case envelopes `Y_k = [y_k(e_1) ... y_k(e_n)]` of a
/// policy-structured family, where `y_k(x)` is the componentwise max of
/// `A_sigma x` over all length-`k` products.
///
/// `||Y_k||_1 = max_sigma ||A_sigma||_1` and `||y_k(1)||_inf = max_sigma ||A_sigma||_inf`
/// exactly, so `sqrt` of their product bounds `max_sigma ||A_sigma||_2` and is
/// submultiplicative in `k`.
#[derive(Debug, Clone)]
pub struct WorstCaseTable<'a> {
    structure: &'a PolicyStructure,
    /// Column-major `n x n`.
    columns: Vec<f64>,
    ones: Vec<f64>,
    scratch: Vec<f64>,
    selected: Vec<f64>,
    depth: usize,
}

impl<'a> WorstCaseTable<'a> {
    pub fn new(structure: &'a PolicyStructure) -> Self {
        let n = structure.layout().len();
        let mut columns = vec![0.0; n * n];
        for j in 0..n {
            columns[j * n + j] = 1.0;
        }
        let selected = vec![0.0; structure.layout().num_states];
        Self { structure, columns, ones: vec![1.0; n], scratch: vec![0.0; n], selected, depth: 0 }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn advance(&mut self) {
        let n = self.ones.len();
        for j in 0..n {
            let col = &mut self.columns[j * n..(j + 1) * n];
            self.structure.step_into(Select::Max, col, &mut self.selected, &mut self.scratch);
            col.copy_from_slice(&self.scratch);
        }
        self.structure.step_into(Select::Max, &self.ones, &mut self.selected, &mut self.scratch);
        std::mem::swap(&mut self.ones, &mut self.scratch);
        self.depth += 1;
    }

    pub fn max_one_norm(&self) -> f64 {
        let n = self.ones.len();
        self.columns.chunks(n.max(1)).map(|c| c.iter().sum::<f64>()).fold(0.0, f64::max)
    }

    pub fn max_inf_norm(&self) -> f64 {
        self.ones.iter().fold(0.0_f64, |m, v| m.max(*v))
    }

    /// Upper bound on `max_sigma ||A_sigma||_2` at the current depth.
    pub fn spectral_bound(&self) -> f64 {
        (self.max_one_norm() * self.max_inf_norm()).sqrt()
    }
}
