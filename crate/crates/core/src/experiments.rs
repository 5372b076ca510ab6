//! Closed-form trajectories of the two worked examples, a seeded random-MDP
//! generator and Monte Carlo checks of the mean bounds.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::certify::Certification;
use crate::dynamics::{run, RunConfig};
use crate::error::{Error, Result};
use crate::mdp::{Layout, Mdp, OptimalSolution, QVector};
use crate::switching::check_alpha;

/// One state, two self-loop actions, zero reward, `gamma = 0.9`, `d = (0.9, 0.1)`.
pub fn example1_mdp() -> Mdp {
    Mdp::new(
        Layout::new(1, 2),
        0.9,
        DMatrix::from_element(2, 1, 1.0),
        vec![0.0, 0.0],
        DVector::from_vec(vec![0.9, 0.1]),
    )
    .expect("example 1 is a valid MDP")
}

/// Two absorbing states; action 1 pays 0, action 2 pays -1; `gamma = 0.9`, `d = 1/4`.
pub fn example2_mdp() -> Mdp {
    let l = Layout::new(2, 2);
    let mut p = DMatrix::zeros(4, 2);
    let mut r = vec![0.0; 8];
    for s in 0..2 {
        for a in 0..2 {
            let i = l.index(s, a);
            p[(i, s)] = 1.0;
            if a == 1 {
                r[i * 2 + s] = -1.0;
            }
        }
    }
    Mdp::new(l, 0.9, p, r, DVector::from_element(4, 0.25)).expect("example 2 is a valid MDP")
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("{name} = {v} must be positive")))
    }
}

const RATIO: f64 = 81.0 / 89.0;

/// `(x_k, y_k)` for example 1 started at `e_0 = (-a, b)`.
pub fn example1_expected(k: usize, alpha: f64, a: f64, b: f64) -> Result<[f64; 2]> {
    check_alpha(alpha)?;
    check_positive("A", a)?;
    check_positive("B", b)?;
    let slow = (1.0 - 0.01 * alpha).powi(k as i32);
    let fast = (1.0 - 0.9 * alpha).powi(k as i32);
    Ok([RATIO * b * slow - (a + RATIO * b) * fast, b * slow])
}

/// `y_k - x_k`, positive at every `k`, so action 2 stays greedy along the trajectory.
pub fn example1_guard(k: usize, alpha: f64, a: f64, b: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_positive("A", a)?;
    check_positive("B", b)?;
    let slow = (1.0 - 0.01 * alpha).powi(k as i32);
    let fast = (1.0 - 0.9 * alpha).powi(k as i32);
    Ok(8.0 / 89.0 * b * slow + (a + RATIO * b) * fast)
}

/// `(1 - 0.025 alpha)^k (c, -c, c, -c)`.
pub fn example2_expected(k: usize, alpha: f64, c: f64) -> Result<[f64; 4]> {
    check_alpha(alpha)?;
    check_positive("c", c)?;
    let m = (1.0 - 0.025 * alpha).powi(k as i32) * c;
    Ok([m, -m, m, -m])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "example", rename_all = "snake_case")]
pub enum ClosedFormOracle {
    Example1 { alpha: f64, a: f64, b: f64 },
    Example2 { alpha: f64, c: f64 },
}

impl ClosedFormOracle {
    pub fn example1(alpha: f64, a: f64, b: f64) -> Result<Self> {
        example1_expected(0, alpha, a, b)?;
        Ok(Self::Example1 { alpha, a, b })
    }

    pub fn example2(alpha: f64, c: f64) -> Result<Self> {
        example2_expected(0, alpha, c)?;
        Ok(Self::Example2 { alpha, c })
    }

    pub fn id(&self) -> u8 {
        match self {
            Self::Example1 { .. } => 1,
            Self::Example2 { .. } => 2,
        }
    }

    pub fn alpha(&self) -> f64 {
        match *self {
            Self::Example1 { alpha, .. } | Self::Example2 { alpha, .. } => alpha,
        }
    }

    pub fn mdp(&self) -> Mdp {
        match self {
            Self::Example1 { .. } => example1_mdp(),
            Self::Example2 { .. } => example2_mdp(),
        }
    }

    pub fn expected(&self, k: usize) -> DVector<f64> {
        match *self {
            Self::Example1 { alpha, a, b } => DVector::from_row_slice(&example1_expected(k, alpha, a, b).unwrap()),
            Self::Example2 { alpha, c } => DVector::from_row_slice(&example2_expected(k, alpha, c).unwrap()),
        }
    }

    pub fn initial_error(&self) -> DVector<f64> {
        self.expected(0)
    }
}

/// Largest `|x_i - y_i| / max(|y_i|, floor)` over components.
pub fn max_relative_error(x: &DVector<f64>, y: &DVector<f64>, floor: f64) -> f64 {
    x.iter().zip(y.iter()).map(|(a, b)| (a - b).abs() / b.abs().max(floor)).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomMdpConfig {
    pub num_states: usize,
    pub num_actions: usize,
    pub seed: u64,
    pub reward_scale: f64,
    pub gamma: f64,
    /// Draw a random strictly positive `d` instead of the uniform one.
    pub random_sampling: bool,
}

impl RandomMdpConfig {
    pub fn new(num_states: usize, num_actions: usize, seed: u64) -> Self {
        Self { num_states, num_actions, seed, reward_scale: 1.0, gamma: 0.9, random_sampling: false }
    }
}

/// Normalized `Exp(1)` draws: a flat-Dirichlet point, strictly positive.
fn simplex_point(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..len).map(|_| -(1.0 - rng.random::<f64>()).ln() + f64::MIN_POSITIVE).collect();
    let total: f64 = draws.iter().sum();
    let mut p: Vec<f64> = draws.iter().map(|x| x / total).collect();
    // put the rounding residue on the largest entry so the row sums to 1 to the last bit
    let residue = 1.0 - p.iter().sum::<f64>();
    let big = (0..len).max_by(|&i, &j| p[i].total_cmp(&p[j])).unwrap();
    p[big] += residue;
    p
}

pub fn random_mdp(num_states: usize, num_actions: usize, seed: u64, reward_scale: f64) -> Result<Mdp> {
    random_mdp_with(&RandomMdpConfig { reward_scale, ..RandomMdpConfig::new(num_states, num_actions, seed) })
}

pub fn random_mdp_with(config: &RandomMdpConfig) -> Result<Mdp> {
    if config.num_states == 0 || config.num_actions == 0 {
        return Err(Error::Parameter("state and action counts must be at least 1".into()));
    }
    if !(config.reward_scale >= 0.0 && config.reward_scale.is_finite()) {
        return Err(Error::Parameter(format!("reward scale {} must be nonnegative", config.reward_scale)));
    }
    let l = Layout::new(config.num_states, config.num_actions);
    let (n, ns) = (l.len(), l.num_states);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut p = DMatrix::zeros(n, ns);
    for i in 0..n {
        for (j, v) in simplex_point(&mut rng, ns).into_iter().enumerate() {
            p[(i, j)] = v;
        }
    }
    let scale = config.reward_scale;
    let r: Vec<f64> = (0..n * ns).map(|_| if scale > 0.0 { rng.random_range(-scale..=scale) } else { 0.0 }).collect();
    let d = if config.random_sampling {
        DVector::from_vec(simplex_point(&mut rng, n))
    } else {
        DVector::from_element(n, 1.0 / n as f64)
    };
    Mdp::new(l, config.gamma, p, r, d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub num_mdps: usize,
    pub max_states: usize,
    pub max_actions: usize,
    pub master_seed: u64,
    pub reward_scale: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { num_mdps: 100, max_states: 4, max_actions: 4, master_seed: 2024, reward_scale: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleMember {
    pub index: usize,
    pub seed: u64,
    pub mdp: Mdp,
    /// Initial iterate, uniform in `[-R_max/(1-gamma), R_max/(1-gamma)]`.
    pub q0: QVector,
}

/// The seed-fixed ensemble; member `i` depends only on `(master_seed, i)`.
pub fn ensemble(config: &EnsembleConfig) -> Result<Vec<EnsembleMember>> {
    if config.max_states == 0 || config.max_actions == 0 {
        return Err(Error::Parameter("ensemble sizes must be at least 1".into()));
    }
    (0..config.num_mdps)
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.master_seed);
            rng.set_stream(index as u64);
            let ns = rng.random_range(1..=config.max_states);
            let na = rng.random_range(1..=config.max_actions);
            let seed: u64 = rng.random();
            let mdp = random_mdp(ns, na, seed, config.reward_scale)?;
            let bound = mdp.reward_max() / (1.0 - mdp.gamma());
            let q0 = DVector::from_fn(mdp.layout().len(), |_, _| {
                if bound > 0.0 {
                    rng.random_range(-bound..=bound)
                } else {
                    0.0
                }
            });
            Ok(EnsembleMember { index, seed, mdp, q0 })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloConfig {
    pub alpha: f64,
    pub horizon: usize,
    pub num_seeds: usize,
    pub base_seed: u64,
    pub q0: QVector,
}

/// Per-step empirical mean of the sign-part norms against the mean envelopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanBoundRow {
    pub k: usize,
    pub mean_minus: f64,
    pub envelope_minus: f64,
    pub mean_plus: f64,
    pub envelope_plus: f64,
    pub halfwidth_minus: f64,
    pub halfwidth_plus: f64,
    /// `-` for the negative side, `+` for the positive side, empty when clean.
    pub flags: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanBoundReport {
    pub alpha: f64,
    pub horizon: usize,
    pub num_seeds: usize,
    pub w_max: f64,
    pub rows: Vec<MeanBoundRow>,
    pub flagged_steps: usize,
    /// Pathwise invariant breaches summed over all seeds.
    pub pathwise_violations: usize,
    pub first_pathwise: Option<(u64, usize)>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn sample_std(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).sqrt()
        }
    }
}

/// Slack added to the mean envelopes: three standard errors.
pub fn statistical_halfwidth(sample_std: f64, num_seeds: usize) -> f64 {
    3.0 * sample_std / (num_seeds as f64).sqrt()
}

/// Runs `num_seeds` sampled trajectories and compares the mean sign-part norms
/// with the noise-aware envelopes plus [`statistical_halfwidth`].
pub fn monte_carlo_bounds(
    mdp: &Mdp,
    sol: &OptimalSolution,
    config: &MonteCarloConfig,
    certs: &Certification,
) -> Result<MeanBoundReport> {
    if config.num_seeds < 2 {
        return Err(Error::Parameter(format!("num_seeds = {} must be at least 2", config.num_seeds)));
    }
    let mut minus = vec![Welford::default(); config.horizon + 1];
    let mut plus = minus.clone();
    let mut envelopes: Vec<(f64, f64)> = Vec::new();
    let mut w_max = 0.0;
    let mut pathwise_violations = 0;
    let mut first_pathwise = None;
    for i in 0..config.num_seeds {
        let seed = config.base_seed.wrapping_add(i as u64);
        let mut run_config = RunConfig::stochastic(config.alpha, config.horizon, config.q0.clone(), seed);
        run_config.record_residuals = false;
        let trace = run(mdp, sol, &run_config, certs)?;
        if trace.violation_count > 0 {
            pathwise_violations += trace.violation_count;
            first_pathwise.get_or_insert((seed, trace.first_violation.unwrap_or(0)));
        }
        for st in &trace.steps {
            minus[st.k].push(st.e_minus.amax());
            plus[st.k].push(st.e_plus.amax());
        }
        if envelopes.is_empty() {
            w_max = trace.w_max;
            envelopes = trace.steps.iter().map(|st| (st.envelope_minus, st.envelope_plus)).collect();
        }
    }
    let rows: Vec<MeanBoundRow> = (0..=config.horizon)
        .map(|k| {
            let (env_m, env_p) = envelopes[k];
            let hw_m = statistical_halfwidth(minus[k].sample_std(), config.num_seeds);
            let hw_p = statistical_halfwidth(plus[k].sample_std(), config.num_seeds);
            let mut flags = String::new();
            if minus[k].mean > env_m + hw_m {
                flags.push('-');
            }
            if plus[k].mean > env_p + hw_p {
                flags.push('+');
            }
            MeanBoundRow {
                k,
                mean_minus: minus[k].mean,
                envelope_minus: env_m,
                mean_plus: plus[k].mean,
                envelope_plus: env_p,
                halfwidth_minus: hw_m,
                halfwidth_plus: hw_p,
                flags,
            }
        })
        .collect();
    let flagged_steps = rows.iter().filter(|r| !r.flags.is_empty()).count();
    Ok(MeanBoundReport {
        alpha: config.alpha,
        horizon: config.horizon,
        num_seeds: config.num_seeds,
        w_max,
        rows,
        flagged_steps,
        pathwise_violations,
        first_pathwise,
    })
}

impl MeanBoundReport {
    pub fn is_clean(&self) -> bool {
        self.flagged_steps == 0 && self.pathwise_violations == 0
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        for row in &self.rows {
            writer.serialize(row)?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Aggregate over ensemble members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub num_mdps: usize,
    pub num_seeds: usize,
    pub flagged_steps: usize,
    pub pathwise_violations: usize,
    pub instances: Vec<MeanBoundReport>,
}

impl EnsembleReport {
    pub fn new(num_seeds: usize) -> Self {
        Self { num_mdps: 0, num_seeds, flagged_steps: 0, pathwise_violations: 0, instances: Vec::new() }
    }

    pub fn push(&mut self, report: MeanBoundReport) {
        self.num_mdps += 1;
        self.flagged_steps += report.flagged_steps;
        self.pathwise_violations += report.pathwise_violations;
        self.instances.push(report);
    }

    pub fn is_clean(&self) -> bool {
        self.flagged_steps == 0 && self.pathwise_violations == 0
    }
}
