//! Finite discounted MDPs, the Bellman optimality operator and exact `Q*`.
//!
//! State-action vectors use the action-block ordering
//! `(1,1), (2,1), ..., (|S|,1), (1,2), ..., (|S|,|A|)`. With 1-based labels the
//! pair `(s, a)` sits at position `(a-1)|S| + s`; internally everything is
//! 0-based, so [`Layout::index`] returns `a * |S| + s`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A state-action table in action-block ordering (`Q`, `Q*`, errors `e = Q - Q*`).
pub type QVector = DVector<f64>;

/// Row-sum / simplex tolerance applied when validating probabilities.
pub const PROBABILITY_TOLERANCE: f64 = 1e-12;

/// Default stopping tolerance of [`solve_q_star`].
pub const DEFAULT_SOLVER_TOL: f64 = 1e-10;

/// Value-iteration cap of [`solve_q_star`].
pub const SOLVER_ITERATION_CAP: usize = 1_000_000;

/// Guard for enumerating deterministic policies.
pub const POLICY_ENUMERATION_LIMIT: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Layout {
    pub num_states: usize,
    pub num_actions: usize,
}

impl Layout {
    pub fn new(num_states: usize, num_actions: usize) -> Self {
        Self { num_states, num_actions }
    }

    /// Number of state-action pairs.
    pub fn len(&self) -> usize {
        self.num_states * self.num_actions
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, state: usize, action: usize) -> usize {
        action * self.num_states + state
    }

    #[inline]
    pub fn pair(&self, index: usize) -> (usize, usize) {
        (index % self.num_states, index / self.num_states)
    }
}

/// On-disk MDP description. Arrays are indexed `[a][s]` and `[a][s][s']`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpFile {
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    pub transitions: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewards: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_rewards: Option<Vec<Vec<f64>>>,
    pub sampling: Vec<Vec<f64>>,
}

/// A validated finite MDP `(P, r, gamma)` together with the sampling distribution `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    layout: Layout,
    gamma: f64,
    /// `|S||A| x |S|`, row `(s,a)` is `P(. | s, a)`.
    transition: DMatrix<f64>,
    /// `r(s,a,s')` stored at `index(s,a) * |S| + s'`.
    reward: Vec<f64>,
    expected_reward: DVector<f64>,
    sampling: DVector<f64>,
    reward_max: f64,
}

fn pair_label(s: usize, a: usize) -> String {
    format!("(s={}, a={})", s + 1, a + 1)
}

impl Mdp {
    /// Builds an MDP from dense arrays in action-block ordering.
    ///
    /// `reward` holds `r(s,a,s')` at `index(s,a) * |S| + s'`.
    pub fn new(
        layout: Layout,
        gamma: f64,
        transition: DMatrix<f64>,
        reward: Vec<f64>,
        sampling: DVector<f64>,
    ) -> Result<Self> {
        let n = layout.len();
        let ns = layout.num_states;
        if ns == 0 || layout.num_actions == 0 {
            return Err(Error::InvalidMdp("state and action counts must be positive".into()));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidMdp(format!("discount gamma = {gamma} must lie in (0, 1)")));
        }
        if transition.nrows() != n || transition.ncols() != ns {
            return Err(Error::InvalidMdp(format!(
                "transition matrix is {}x{}, expected {}x{}",
                transition.nrows(),
                transition.ncols(),
                n,
                ns
            )));
        }
        if reward.len() != n * ns {
            return Err(Error::InvalidMdp(format!(
                "reward table has {} entries, expected {}",
                reward.len(),
                n * ns
            )));
        }
        if sampling.len() != n {
            return Err(Error::InvalidMdp(format!(
                "sampling distribution has {} entries, expected {}",
                sampling.len(),
                n
            )));
        }
        for i in 0..n {
            let (s, a) = layout.pair(i);
            let row = transition.row(i);
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidMdp(format!(
                    "transition row for {} has a negative or non-finite entry",
                    pair_label(s, a)
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
                return Err(Error::InvalidMdp(format!(
                    "transition row for {} sums to {sum}",
                    pair_label(s, a)
                )));
            }
            if !sampling[i].is_finite() || sampling[i] <= 0.0 {
                return Err(Error::InvalidMdp(format!(
                    "sampling probability d{} = {} must be positive",
                    pair_label(s, a),
                    sampling[i]
                )));
            }
        }
        let total: f64 = sampling.iter().sum();
        if (total - 1.0).abs() > PROBABILITY_TOLERANCE {
            return Err(Error::InvalidMdp(format!("sampling distribution sums to {total}")));
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidMdp("rewards must be finite".into()));
        }

        let expected_reward = DVector::from_fn(n, |i, _| {
            (0..ns).map(|sp| transition[(i, sp)] * reward[i * ns + sp]).sum()
        });
        let reward_max = reward.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
        Ok(Self { layout, gamma, transition, reward, expected_reward, sampling, reward_max })
    }

    pub fn from_file(file: &MdpFile) -> Result<Self> {
        let layout = Layout::new(file.num_states, file.num_actions);
        let (ns, na) = (file.num_states, file.num_actions);
        let shape_err = |what: &str| Error::InvalidMdp(format!("field `{what}` has the wrong shape"));
        if file.transitions.len() != na || file.sampling.len() != na {
            return Err(shape_err(if file.transitions.len() != na { "transitions" } else { "sampling" }));
        }
        let n = layout.len();
        let mut transition = DMatrix::zeros(n, ns);
        let mut sampling = DVector::zeros(n);
        for a in 0..na {
            if file.transitions[a].len() != ns {
                return Err(shape_err("transitions"));
            }
            if file.sampling[a].len() != ns {
                return Err(shape_err("sampling"));
            }
            for s in 0..ns {
                let row = &file.transitions[a][s];
                if row.len() != ns {
                    return Err(shape_err("transitions"));
                }
                let i = layout.index(s, a);
                for (sp, p) in row.iter().enumerate() {
                    transition[(i, sp)] = *p;
                }
                sampling[i] = file.sampling[a][s];
            }
        }
        let mut reward = vec![0.0; n * ns];
        match (&file.rewards, &file.expected_rewards) {
            (Some(r), None) => {
                if r.len() != na {
                    return Err(shape_err("rewards"));
                }
                for a in 0..na {
                    if r[a].len() != ns {
                        return Err(shape_err("rewards"));
                    }
                    for s in 0..ns {
                        if r[a][s].len() != ns {
                            return Err(shape_err("rewards"));
                        }
                        let i = layout.index(s, a);
                        reward[i * ns..(i + 1) * ns].copy_from_slice(&r[a][s]);
                    }
                }
            }
            (None, Some(r)) => {
                if r.len() != na {
                    return Err(shape_err("expected_rewards"));
                }
                for a in 0..na {
                    if r[a].len() != ns {
                        return Err(shape_err("expected_rewards"));
                    }
                    for s in 0..ns {
                        let i = layout.index(s, a);
                        reward[i * ns..(i + 1) * ns].fill(r[a][s]);
                    }
                }
            }
            (Some(_), Some(_)) => {
                return Err(Error::InvalidMdp(
                    "give either `rewards` or `expected_rewards`, not both".into(),
                ))
            }
            (None, None) => {
                return Err(Error::InvalidMdp("missing `rewards` or `expected_rewards`".into()))
            }
        }
        Self::new(layout, file.gamma, transition, reward, sampling)
    }

    pub fn to_file(&self) -> MdpFile {
        let (ns, na) = (self.layout.num_states, self.layout.num_actions);
        let l = self.layout;
        MdpFile {
            num_states: ns,
            num_actions: na,
            gamma: self.gamma,
            transitions: (0..na)
                .map(|a| {
                    (0..ns)
                        .map(|s| self.transition.row(l.index(s, a)).iter().copied().collect())
                        .collect()
                })
                .collect(),
            rewards: Some(
                (0..na)
                    .map(|a| (0..ns).map(|s| self.rewards_from(s, a).to_vec()).collect())
                    .collect(),
            ),
            expected_rewards: None,
            sampling: (0..na)
                .map(|a| (0..ns).map(|s| self.sampling[l.index(s, a)]).collect())
                .collect(),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: MdpFile = serde_json::from_str(text)?;
        Self::from_file(&file)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("MDP serialization is infallible")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn num_states(&self) -> usize {
        self.layout.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.layout.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Stacked transition matrix `P` (`|S||A| x |S|`).
    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn transition_prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(self.layout.index(s, a), next)]
    }

    pub fn reward(&self, s: usize, a: usize, next: usize) -> f64 {
        self.reward[self.layout.index(s, a) * self.layout.num_states + next]
    }

    fn rewards_from(&self, s: usize, a: usize) -> &[f64] {
        let ns = self.layout.num_states;
        let i = self.layout.index(s, a);
        &self.reward[i * ns..(i + 1) * ns]
    }

    /// Expected one-step reward `R(s,a) = sum_s' P(s'|s,a) r(s,a,s')`.
    pub fn expected_reward(&self) -> &DVector<f64> {
        &self.expected_reward
    }

    /// Diagonal of `D`, i.e. `d(s,a)` in action-block ordering.
    pub fn sampling(&self) -> &DVector<f64> {
        &self.sampling
    }

    /// `R_max = max |r(s,a,s')|` over all triples.
    pub fn reward_max(&self) -> f64 {
        self.reward_max
    }

    fn check_len(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.layout.len() {
            return Err(Error::Dimension { expected: self.layout.len(), actual: v.len() });
        }
        Ok(())
    }

    /// Bellman optimality operator `F(Q) = R + gamma P V_Q`.
    pub fn bellman(&self, q: &QVector) -> Result<QVector> {
        self.check_len(q)?;
        Ok(self.bellman_unchecked(q))
    }

    pub(crate) fn bellman_unchecked(&self, q: &QVector) -> QVector {
        let v = max_values(self.layout, q);
        let mut out = &self.transition * v;
        out *= self.gamma;
        out += &self.expected_reward;
        out
    }

    /// Solves `Q^pi = R + gamma P Pi^pi Q^pi` for any (stochastic or deterministic) policy.
    pub fn evaluate_policy(&self, policy: &impl Policy) -> Result<QVector> {
        let selector = policy_selector_matrix(self.layout, policy)?;
        let n = self.layout.len();
        let mut system = DMatrix::identity(n, n);
        system -= (&self.transition * selector) * self.gamma;
        system
            .lu()
            .solve(&self.expected_reward)
            .ok_or_else(|| Error::InvalidMdp("policy evaluation system is singular".into()))
    }
}

/// Bellman operator as a free function; see [`Mdp::bellman`].
pub fn bellman_operator(mdp: &Mdp, q: &QVector) -> Result<QVector> {
    mdp.bellman(q)
}

/// `V_Q(s) = max_a Q(s,a)`.
pub fn max_values(layout: Layout, q: &QVector) -> DVector<f64> {
    DVector::from_fn(layout.num_states, |s, _| {
        (0..layout.num_actions).map(|a| q[layout.index(s, a)]).fold(f64::NEG_INFINITY, f64::max)
    })
}

/// Greedy policy of `q` with ties broken towards the smallest action index.
pub fn greedy_policy(layout: Layout, q: &QVector) -> DeterministicPolicy {
    let actions = (0..layout.num_states)
        .map(|s| {
            let mut best = 0;
            for a in 1..layout.num_actions {
                if q[layout.index(s, a)] > q[layout.index(s, best)] {
                    best = a;
                }
            }
            best
        })
        .collect();
    DeterministicPolicy(actions)
}

/// Anything that assigns action weights per state.
pub trait Policy {
    fn num_states(&self) -> usize;

    /// Probability of action `a` in state `s`.
    fn weight(&self, state: usize, action: usize) -> f64;

    /// `(Pi^mu q)(s) = sum_a mu(a|s) q(s,a)`.
    fn select(&self, layout: Layout, q: &QVector) -> DVector<f64> {
        DVector::from_fn(layout.num_states, |s, _| {
            (0..layout.num_actions).map(|a| self.weight(s, a) * q[layout.index(s, a)]).sum()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeterministicPolicy(Vec<usize>);

impl DeterministicPolicy {
    pub fn new(actions: Vec<usize>, num_actions: usize) -> Result<Self> {
        if let Some(bad) = actions.iter().find(|a| **a >= num_actions) {
            return Err(Error::InvalidPolicy(format!(
                "action index {bad} out of range for {num_actions} actions"
            )));
        }
        Ok(Self(actions))
    }

    pub fn constant(num_states: usize, action: usize) -> Self {
        Self(vec![action; num_states])
    }

    #[inline]
    pub fn action(&self, state: usize) -> usize {
        self.0[state]
    }

    pub fn actions(&self) -> &[usize] {
        &self.0
    }
}

impl Policy for DeterministicPolicy {
    fn num_states(&self) -> usize {
        self.0.len()
    }

    fn weight(&self, state: usize, action: usize) -> f64 {
        if self.0[state] == action {
            1.0
        } else {
            0.0
        }
    }

    fn select(&self, layout: Layout, q: &QVector) -> DVector<f64> {
        DVector::from_fn(layout.num_states, |s, _| q[layout.index(s, self.0[s])])
    }
}

impl std::fmt::Display for DeterministicPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let labels: Vec<String> = self.0.iter().map(|a| (a + 1).to_string()).collect();
        write!(f, "[{}]", labels.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticPolicy {
    weights: Vec<Vec<f64>>,
}

impl StochasticPolicy {
    pub fn new(weights: Vec<Vec<f64>>) -> Result<Self> {
        let na = weights.first().map_or(0, Vec::len);
        for (s, row) in weights.iter().enumerate() {
            if row.len() != na || na == 0 {
                return Err(Error::InvalidPolicy(format!("row {} has the wrong length", s + 1)));
            }
            if row.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::InvalidPolicy(format!("row {} has a negative weight", s + 1)));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
                return Err(Error::InvalidPolicy(format!("row {} sums to {sum}", s + 1)));
            }
        }
        Ok(Self { weights })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self { weights: vec![vec![1.0 / num_actions as f64; num_actions]; num_states] }
    }

    pub fn point_mass(policy: &DeterministicPolicy, num_actions: usize) -> Self {
        let weights = policy
            .actions()
            .iter()
            .map(|&a| {
                let mut row = vec![0.0; num_actions];
                row[a] = 1.0;
                row
            })
            .collect();
        Self { weights }
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.weights[state]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.weights
    }
}

impl Policy for StochasticPolicy {
    fn num_states(&self) -> usize {
        self.weights.len()
    }

    fn weight(&self, state: usize, action: usize) -> f64 {
        self.weights[state][action]
    }
}

/// Builds the `|S| x |S||A|` selector `Pi^mu`; row `s` holds `mu(a|s)` at column `(s,a)`.
pub fn policy_selector_matrix(layout: Layout, policy: &impl Policy) -> Result<DMatrix<f64>> {
    if policy.num_states() != layout.num_states {
        return Err(Error::Dimension { expected: layout.num_states, actual: policy.num_states() });
    }
    let mut m = DMatrix::zeros(layout.num_states, layout.len());
    for s in 0..layout.num_states {
        for a in 0..layout.num_actions {
            m[(s, layout.index(s, a))] = policy.weight(s, a);
        }
    }
    Ok(m)
}

/// A rectangular set of deterministic policies: state `s` may pick any action in `choices[s]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicySet {
    choices: Vec<Vec<usize>>,
}

impl PolicySet {
    pub fn new(choices: Vec<Vec<usize>>) -> Self {
        Self { choices }
    }

    /// Every deterministic policy `Theta`.
    pub fn all(layout: Layout) -> Self {
        Self { choices: vec![(0..layout.num_actions).collect(); layout.num_states] }
    }

    pub fn choices(&self) -> &[Vec<usize>] {
        &self.choices
    }

    /// Size of the Cartesian product, as a float so it cannot overflow.
    pub fn count(&self) -> f64 {
        self.choices.iter().map(|c| c.len() as f64).product()
    }

    pub fn contains(&self, policy: &DeterministicPolicy) -> bool {
        policy.actions().iter().zip(&self.choices).all(|(a, c)| c.contains(a))
    }

    /// Lazy lexicographic iteration over the product set.
    pub fn iter(&self) -> PolicyIter<'_> {
        let done = self.choices.iter().any(Vec::is_empty);
        PolicyIter { set: self, cursor: vec![0; self.choices.len()], done }
    }

    /// Materializes the set, refusing more than `limit` policies.
    pub fn enumerate(&self, limit: usize) -> Result<Vec<DeterministicPolicy>> {
        let count = self.count();
        if count > limit as f64 {
            return Err(Error::EnumerationGuard { count, limit });
        }
        Ok(self.iter().collect())
    }
}

pub struct PolicyIter<'a> {
    set: &'a PolicySet,
    cursor: Vec<usize>,
    done: bool,
}

impl Iterator for PolicyIter<'_> {
    type Item = DeterministicPolicy;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let item = DeterministicPolicy(
            self.cursor.iter().zip(&self.set.choices).map(|(&i, c)| c[i]).collect(),
        );
        // odometer with the last state varying fastest
        let mut pos = self.cursor.len();
        loop {
            if pos == 0 {
                self.done = true;
                break;
            }
            pos -= 1;
            self.cursor[pos] += 1;
            if self.cursor[pos] < self.set.choices[pos].len() {
                break;
            }
            self.cursor[pos] = 0;
        }
        Some(item)
    }
}

/// `Q*`, `V*`, the advantage `A*` and the optimal action sets.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalSolution {
    layout: Layout,
    pub q_star: QVector,
    pub v_star: DVector<f64>,
    /// `A*(s,a) = V*(s) - Q*(s,a)` in action-block ordering.
    pub advantage: DVector<f64>,
    /// `Phi*(s)`, sorted ascending.
    pub optimal_actions: Vec<Vec<usize>>,
    /// Advantage threshold below which an action counts as optimal.
    pub tie_tolerance: f64,
    /// Requested accuracy `||Q - Q*||_inf <= tolerance_used`.
    pub tolerance_used: f64,
    /// Achieved `||F(q_star) - q_star||_inf`.
    pub residual: f64,
    pub iterations: usize,
}

impl OptimalSolution {
    pub fn layout(&self) -> Layout {
        self.layout
    }

    /// `Theta*` as a lazily enumerable product set.
    pub fn optimal_policies(&self) -> PolicySet {
        PolicySet::new(self.optimal_actions.clone())
    }

    pub fn is_optimal_action(&self, state: usize, action: usize) -> bool {
        self.optimal_actions[state].contains(&action)
    }

    pub fn advantage_at(&self, state: usize, action: usize) -> f64 {
        self.advantage[self.layout.index(state, action)]
    }

    /// Tie-broken greedy optimal policy `pi*`.
    pub fn greedy_optimal_policy(&self) -> DeterministicPolicy {
        DeterministicPolicy(self.optimal_actions.iter().map(|c| c[0]).collect())
    }
}

/// Computes `Q*` by value iteration with a contraction-certified stopping rule,
/// then polishes it by exact evaluation of the greedy policy.
///
/// Stops once `||F(Q) - Q||_inf <= tol (1-gamma) / (2 gamma)`, which guarantees
/// `||Q - Q*||_inf <= tol`.
pub fn solve_q_star(mdp: &Mdp, tol: f64) -> Result<OptimalSolution> {
    if !(tol > 0.0) {
        return Err(Error::Parameter(format!("solver tolerance {tol} must be positive")));
    }
    let layout = mdp.layout();
    let gamma = mdp.gamma();
    let stop = tol * (1.0 - gamma) / (2.0 * gamma);

    let mut q = QVector::zeros(layout.len());
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < SOLVER_ITERATION_CAP {
        let next = mdp.bellman_unchecked(&q);
        residual = (&next - &q).amax();
        iterations += 1;
        if residual <= stop {
            break;
        }
        q = next;
    }
    if residual > stop {
        return Err(Error::SolverNotConverged { iterations, residual });
    }

    // The greedy policy of an accurate Q is optimal; its exact evaluation removes
    // the remaining value-iteration error down to rounding.
    if let Ok(polished) = mdp.evaluate_policy(&greedy_policy(layout, &q)) {
        let polished_residual = (mdp.bellman_unchecked(&polished) - &polished).amax();
        if polished_residual <= residual {
            q = polished;
            residual = polished_residual;
        }
    }

    let v_star = max_values(layout, &q);
    let advantage =
        DVector::from_fn(layout.len(), |i, _| v_star[layout.pair(i).0] - q[i]);
    let tie_tolerance = 1e-8 * (1.0 + q.amax());
    let optimal_actions = (0..layout.num_states)
        .map(|s| {
            (0..layout.num_actions)
                .filter(|&a| advantage[layout.index(s, a)] <= tie_tolerance)
                .collect()
        })
        .collect();
    Ok(OptimalSolution {
        layout,
        q_star: q,
        v_star,
        advantage,
        optimal_actions,
        tie_tolerance,
        tolerance_used: tol,
        residual,
        iterations,
    })
}

/// Splits `x = x_plus - x_minus` into its nonnegative parts.
pub fn sign_parts(x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    (x.map(|v| v.max(0.0)), x.map(|v| (-v).max(0.0)))
}

/// `dist_inf(x, R_+^n) = ||x^-||_inf`.
pub fn orthant_distance_inf(x: &DVector<f64>) -> f64 {
    x.iter().fold(0.0_f64, |m, v| m.max(-v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{example1_mdp, example2_mdp, random_mdp};
    use proptest::prelude::*;

    #[test]
    fn index_round_trip() {
        let l = Layout::new(3, 4);
        let mut seen = vec![false; l.len()];
        for a in 0..4 {
            for s in 0..3 {
                let i = l.index(s, a);
                assert_eq!(l.pair(i), (s, a));
                assert!(!seen[i]);
                seen[i] = true;
            }
        }
        assert!(seen.into_iter().all(|b| b));
        // 1-based formula (a-1)|S| + s
        assert_eq!(l.index(1, 2) + 1, 2 * 3 + 2);
    }

    #[test]
    fn example1_solution() {
        let sol = solve_q_star(&example1_mdp(), DEFAULT_SOLVER_TOL).unwrap();
        assert_eq!(sol.q_star.as_slice(), &[0.0, 0.0]);
        assert_eq!(sol.optimal_actions, vec![vec![0, 1]]);
        let theta: Vec<_> = sol.optimal_policies().iter().collect();
        assert_eq!(theta.len(), 2);
    }

    #[test]
    fn example2_solution() {
        let sol = solve_q_star(&example2_mdp(), DEFAULT_SOLVER_TOL).unwrap();
        let l = sol.layout();
        for s in 0..2 {
            assert!(sol.q_star[l.index(s, 0)].abs() < 1e-10);
            assert!((sol.q_star[l.index(s, 1)] + 1.0).abs() < 1e-10);
        }
        assert_eq!(sol.optimal_policies().count(), 1.0);
        assert_eq!(sol.greedy_optimal_policy().actions(), &[0, 0]);
    }

    #[test]
    fn solver_matches_policy_enumeration() {
        let mdp = random_mdp(3, 2, 7, 1.0).unwrap();
        let sol = solve_q_star(&mdp, DEFAULT_SOLVER_TOL).unwrap();
        // max over all |A|^|S| policies of Q^pi, componentwise
        let mut best = QVector::from_element(6, f64::NEG_INFINITY);
        for pi in PolicySet::all(mdp.layout()).iter() {
            let q = mdp.evaluate_policy(&pi).unwrap();
            best = best.zip_map(&q, f64::max);
        }
        assert!((&best - &sol.q_star).amax() < 1e-8);
    }

    #[test]
    fn optimal_policies_evaluate_to_q_star() {
        for seed in 0..10 {
            let mdp = random_mdp(3, 3, seed, 1.0).unwrap();
            let sol = solve_q_star(&mdp, DEFAULT_SOLVER_TOL).unwrap();
            for pi in sol.optimal_policies().iter() {
                let q = mdp.evaluate_policy(&pi).unwrap();
                assert!((&q - &sol.q_star).amax() <= 10.0 * sol.tolerance_used);
            }
            for i in 0..mdp.layout().len() {
                let (s, a) = mdp.layout().pair(i);
                assert!(sol.advantage[i] >= -1e-10);
                assert_eq!(sol.is_optimal_action(s, a), sol.advantage[i] <= sol.tie_tolerance);
            }
        }
    }

    #[test]
    fn bellman_examples() {
        let mdp = example2_mdp();
        let sol = solve_q_star(&mdp, DEFAULT_SOLVER_TOL).unwrap();
        let fixed = mdp.bellman(&sol.q_star).unwrap();
        assert!((&fixed - &sol.q_star).amax() <= sol.tolerance_used);

        let q = &sol.q_star + QVector::from_vec(vec![1.0, -1.0, 1.0, -1.0]);
        let f = mdp.bellman(&q).unwrap();
        assert!((f[0] - 0.9).abs() < 1e-12);
        assert!((f[1] + 0.9).abs() < 1e-12);

        let zero = example1_mdp().bellman(&QVector::zeros(2)).unwrap();
        assert_eq!(zero.as_slice(), &[0.0, 0.0]);

        assert!(matches!(mdp.bellman(&QVector::zeros(3)), Err(Error::Dimension { .. })));
    }

    #[test]
    fn selector_matrices() {
        let l = Layout::new(1, 2);
        let pi2 = DeterministicPolicy::new(vec![1], 2).unwrap();
        let m = policy_selector_matrix(l, &pi2).unwrap();
        assert_eq!(m.as_slice(), &[0.0, 1.0]);
        let uni = policy_selector_matrix(l, &StochasticPolicy::uniform(1, 2)).unwrap();
        assert_eq!(uni.as_slice(), &[0.5, 0.5]);

        let mdp = random_mdp(3, 3, 1, 1.0).unwrap();
        let sol = solve_q_star(&mdp, DEFAULT_SOLVER_TOL).unwrap();
        for pi in PolicySet::all(mdp.layout()).iter() {
            let sel = policy_selector_matrix(mdp.layout(), &pi).unwrap();
            let via_matrix = &sel * &sol.q_star;
            let direct = pi.select(mdp.layout(), &sol.q_star);
            for s in 0..3 {
                assert_eq!(via_matrix[s], sol.q_star[mdp.layout().index(s, pi.action(s))]);
                assert_eq!(direct[s], via_matrix[s]);
            }
        }
    }

    #[test]
    fn sign_part_examples() {
        let (p, m) = sign_parts(&DVector::from_vec(vec![3.0, -2.0, 0.0]));
        assert_eq!(p.as_slice(), &[3.0, 0.0, 0.0]);
        assert_eq!(m.as_slice(), &[0.0, 2.0, 0.0]);
        let c = 0.7;
        let (p, m) = sign_parts(&DVector::from_vec(vec![c, -c, c, -c]));
        assert_eq!(p.as_slice(), &[c, 0.0, c, 0.0]);
        assert_eq!(m.as_slice(), &[0.0, c, 0.0, c]);
    }

    #[test]
    fn orthant_distance_examples() {
        assert_eq!(orthant_distance_inf(&DVector::from_vec(vec![1.0, 2.0, 3.0])), 0.0);
        assert_eq!(orthant_distance_inf(&DVector::from_vec(vec![-4.0, 5.0])), 4.0);
    }

    #[test]
    fn validation_names_offending_pair() {
        let mut file = example2_mdp().to_file();
        file.transitions[1][0] = vec![0.9, 0.0];
        let err = Mdp::from_file(&file).unwrap_err().to_string();
        assert!(err.contains("(s=1, a=2)"), "{err}");
        assert!(err.contains("0.9"), "{err}");

        let mut file = example2_mdp().to_file();
        file.sampling[0][1] = 0.0;
        assert!(Mdp::from_file(&file).is_err());

        let mut file = example2_mdp().to_file();
        file.gamma = 1.0;
        assert!(Mdp::from_file(&file).is_err());
    }

    #[test]
    fn expected_rewards_form() {
        let text = r#"{"num_states":1,"num_actions":2,"gamma":0.5,
            "transitions":[[[1.0]],[[1.0]]],"expected_rewards":[[1.0],[-2.0]],
            "sampling":[[0.5],[0.5]]}"#;
        let mdp = Mdp::from_json_str(text).unwrap();
        assert_eq!(mdp.expected_reward().as_slice(), &[1.0, -2.0]);
        assert_eq!(mdp.reward_max(), 2.0);
        assert_eq!(mdp.reward(0, 1, 0), -2.0);
    }

    #[test]
    fn file_round_trip() {
        let mdp = random_mdp(2, 3, 9, 1.0).unwrap();
        let back = Mdp::from_json_str(&mdp.to_json_string()).unwrap();
        assert_eq!(back, mdp);
    }

    #[test]
    fn enumeration_guard() {
        let set = PolicySet::all(Layout::new(21, 2));
        assert!(matches!(set.enumerate(POLICY_ENUMERATION_LIMIT), Err(Error::EnumerationGuard { .. })));
        assert_eq!(PolicySet::all(Layout::new(3, 2)).enumerate(10).unwrap().len(), 8);
    }

    proptest! {
        #[test]
        fn sign_parts_reconstruct(x in proptest::collection::vec(-1e6f64..1e6, 0..20)) {
            let x = DVector::from_vec(x);
            let (p, m) = sign_parts(&x);
            prop_assert_eq!(&p - &m, x.clone());
            prop_assert_eq!(&p + &m, x.abs());
            prop_assert!(p.zip_map(&m, f64::min).iter().all(|v| *v == 0.0));
        }

        #[test]
        fn orthant_distance_is_projection(x in proptest::collection::vec(-10f64..10.0, 1..20)) {
            let x = DVector::from_vec(x);
            let brute = x.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max);
            let projected = (&x - x.map(|v| v.max(0.0))).amax();
            prop_assert_eq!(orthant_distance_inf(&x), brute);
            prop_assert_eq!(orthant_distance_inf(&x), projected);
            prop_assert_eq!(orthant_distance_inf(&x) == 0.0, x.iter().all(|v| *v >= 0.0));
        }
    }
}
