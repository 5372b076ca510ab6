//! One-call certification of an `(mdp, alpha)` pair: `rho_-^star`, both JSR
//! brackets and both Lyapunov certificates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lyapunov::{
    build_fixed_mode_certificate, build_product_certificate_with, CertificateSummary, LyapunovCertificate,
    DEFAULT_DEPTH_CAP, DEFAULT_TAIL_TOL,
};
use crate::mdp::{DeterministicPolicy, Mdp, OptimalSolution};
use crate::switching::{
    check_alpha, family_full, family_optimal, jsr_bracket_with_budget, max_feasible_depth, rho_minus_star,
    spectral_radius, JsrBracket, ModeMatrix, NormKind, PolicyStructure, SwitchingFamily, DEFAULT_JSR_DEPTH,
    DEFAULT_PRODUCT_BUDGET,
};

/// Default tail target of the product certificate (relative to its `C`).
pub const DEFAULT_PRODUCT_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct CertifyOptions {
    pub alpha: f64,
    /// Margin over `rho_-^star`; `(1 - rho_-^star) / 10` when absent.
    pub epsilon_minus: Option<f64>,
    /// Margin over the upper JSR bracket of `M_alpha`; `(1 - upper) / 10` when absent.
    pub epsilon_plus: Option<f64>,
    /// Requested product depth; shortened to what the budget allows.
    pub depth: usize,
    pub norm: NormKind,
    pub budget: usize,
    pub fixed_tol: f64,
    pub product_tol: f64,
    pub depth_cap: usize,
}

impl CertifyOptions {
    pub fn new(alpha: f64) -> Self {
        Self {
            alpha,
            epsilon_minus: None,
            epsilon_plus: None,
            depth: DEFAULT_JSR_DEPTH,
            norm: NormKind::Infinity,
            budget: DEFAULT_PRODUCT_BUDGET,
            fixed_tol: DEFAULT_TAIL_TOL,
            product_tol: DEFAULT_PRODUCT_TOL,
            depth_cap: DEFAULT_DEPTH_CAP,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon_minus = Some(epsilon);
        self.epsilon_plus = Some(epsilon);
        self
    }
}

/// Default margin `(1 - rate) / 10`.
pub fn default_epsilon(rate: f64) -> f64 {
    (1.0 - rate) / 10.0
}

#[derive(Debug, Clone)]
pub struct Certification {
    pub alpha: f64,
    pub optimal_family: SwitchingFamily,
    pub full_family: SwitchingFamily,
    /// `rho(A_pi)` for every distinct mode of `M_alpha^-`.
    pub optimal_mode_rhos: Vec<(DeterministicPolicy, f64)>,
    pub rho_minus_star: f64,
    pub pi_minus_star: DeterministicPolicy,
    pub a_minus_star: ModeMatrix,
    pub bracket_minus: JsrBracket,
    pub bracket_plus: JsrBracket,
    pub negative: LyapunovCertificate,
    pub positive: LyapunovCertificate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRate {
    /// 1-based actions per state.
    pub policy: Vec<usize>,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationSummary {
    pub alpha: f64,
    pub optimal_mode_rhos: Vec<PolicyRate>,
    pub rho_minus_star: f64,
    pub pi_minus_star: Vec<usize>,
    pub bracket_minus: JsrBracket,
    pub bracket_plus: JsrBracket,
    pub negative: CertificateSummary,
    pub positive: CertificateSummary,
}

fn one_based(p: &DeterministicPolicy) -> Vec<usize> {
    p.actions().iter().map(|a| a + 1).collect()
}

pub fn certify(mdp: &Mdp, sol: &OptimalSolution, opts: &CertifyOptions) -> Result<Certification> {
    check_alpha(opts.alpha)?;
    if sol.layout() != mdp.layout() {
        return Err(Error::Dimension { expected: mdp.layout().len(), actual: sol.layout().len() });
    }
    let optimal_family = family_optimal(mdp, opts.alpha, sol)?;
    let full_family = family_full(mdp, opts.alpha)?;

    let mut optimal_mode_rhos = Vec::with_capacity(optimal_family.len());
    for mode in optimal_family.modes() {
        let pi = mode.deterministic_policy().expect("MDP modes carry policies").clone();
        optimal_mode_rhos.push((pi, spectral_radius(mode.matrix())?));
    }
    let (rho_minus_star, pi_minus_star) = rho_minus_star(&optimal_family)?;
    let a_minus_star = optimal_family
        .modes()
        .iter()
        .find(|m| m.deterministic_policy() == Some(&pi_minus_star))
        .cloned()
        .expect("minimizer is a mode of the family");

    let bracket = |family: &SwitchingFamily| {
        let depth = opts.depth.min(max_feasible_depth(family.len(), opts.budget)).max(1);
        jsr_bracket_with_budget(family, depth, opts.norm, opts.budget)
    };
    let bracket_minus = bracket(&optimal_family)?;
    let bracket_plus = bracket(&full_family)?;

    // a rate bound of 1 or more leaves no room for any margin
    for rate in [rho_minus_star, bracket_plus.upper] {
        if rate >= 1.0 {
            return Err(Error::NonContractive { beta: rate });
        }
    }
    let eps_minus = opts.epsilon_minus.unwrap_or_else(|| default_epsilon(rho_minus_star));
    let negative = build_fixed_mode_certificate(&a_minus_star, eps_minus, opts.fixed_tol)?;
    let eps_plus = opts.epsilon_plus.unwrap_or_else(|| default_epsilon(bracket_plus.upper));
    let positive =
        build_product_certificate_with(&full_family, bracket_plus.upper, eps_plus, opts.product_tol, opts.depth_cap)?;

    Ok(Certification {
        alpha: opts.alpha,
        optimal_family,
        full_family,
        optimal_mode_rhos,
        rho_minus_star,
        pi_minus_star,
        a_minus_star,
        bracket_minus,
        bracket_plus,
        negative,
        positive,
    })
}

impl Certification {
    /// Structure of `M_alpha`, used to apply any `A_pi` without a dense matrix.
    pub fn full_structure(&self) -> &PolicyStructure {
        self.full_family.structure().expect("MDP families are structured")
    }

    pub fn beta_minus(&self) -> f64 {
        self.negative.beta()
    }

    pub fn beta_plus(&self) -> f64 {
        self.positive.beta()
    }

    /// `rho_-^star <= upper(rho_-)` and `lower(rho_-) <= upper(rho_+)`, each up to `tol`.
    pub fn chain_holds(&self, tol: f64) -> bool {
        self.rho_minus_star <= self.bracket_minus.upper + tol && self.bracket_minus.lower <= self.bracket_plus.upper + tol
    }

    pub fn summary(&self) -> CertificationSummary {
        CertificationSummary {
            alpha: self.alpha,
            optimal_mode_rhos: self
                .optimal_mode_rhos
                .iter()
                .map(|(p, r)| PolicyRate { policy: one_based(p), rho: *r })
                .collect(),
            rho_minus_star: self.rho_minus_star,
            pi_minus_star: one_based(&self.pi_minus_star),
            bracket_minus: self.bracket_minus.clone(),
            bracket_plus: self.bracket_plus.clone(),
            negative: self.negative.summary(),
            positive: self.positive.summary(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{example1_mdp, example2_mdp, random_mdp};
    use crate::mdp::{solve_q_star, DEFAULT_SOLVER_TOL};

    #[test]
    fn example1_pipeline() {
        let mdp = example1_mdp();
        let sol = solve_q_star(&mdp, DEFAULT_SOLVER_TOL).unwrap();
        let c = certify(&mdp, &sol, &CertifyOptions::new(0.1)).unwrap();
        assert!((c.rho_minus_star - 0.991).abs() < 1e-12);
        assert_eq!(c.pi_minus_star.actions(), &[0]);
        assert!((c.bracket_plus.upper - 0.999).abs() < 1e-12);
        assert!(c.bracket_plus.width() <= 1e-10);
        assert!(c.chain_holds(1e-10));
        assert!(c.beta_minus() < c.beta_plus());
    }

    #[test]
    fn example2_pipeline() {
        let mdp = example2_mdp();
        let sol = solve_q_star(&mdp, DEFAULT_SOLVER_TOL).unwrap();
        let c = certify(&mdp, &sol, &CertifyOptions::new(0.4)).unwrap();
        assert!(c.optimal_family.is_singleton());
        assert!((c.rho_minus_star - 0.99).abs() < 1e-12);
        assert!(c.chain_holds(1e-10));
        assert!(c.rho_minus_star <= c.bracket_minus.upper + 1e-10);
        assert!(c.bracket_minus.upper <= c.bracket_plus.upper + 1e-10);
    }

    #[test]
    fn single_action_rates_coincide() {
        let mdp = random_mdp(3, 1, 2, 1.0).unwrap();
        let sol = solve_q_star(&mdp, DEFAULT_SOLVER_TOL).unwrap();
        let c = certify(&mdp, &sol, &CertifyOptions::new(0.3)).unwrap();
        let width = c.bracket_plus.width().max(c.bracket_minus.width());
        assert!((c.rho_minus_star - c.bracket_minus.lower).abs() <= width + 1e-12);
        assert!((c.rho_minus_star - c.bracket_plus.lower).abs() <= width + 1e-12);
    }

    #[test]
    fn summary_round_trip() {
        let mdp = random_mdp(2, 2, 3, 1.0).unwrap();
        let sol = solve_q_star(&mdp, DEFAULT_SOLVER_TOL).unwrap();
        let c = certify(&mdp, &sol, &CertifyOptions::new(0.2)).unwrap();
        let text = serde_json::to_string(&c.summary()).unwrap();
        let back: CertificationSummary = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c.summary());
    }

    #[test]
    fn oversized_epsilon_is_non_contractive() {
        let mdp = example1_mdp();
        let sol = solve_q_star(&mdp, DEFAULT_SOLVER_TOL).unwrap();
        let err = certify(&mdp, &sol, &CertifyOptions::new(0.1).with_epsilon(0.05)).unwrap_err();
        assert!(matches!(err, Error::NonContractive { .. }));
    }

    #[test]
    fn rate_bound_at_or_above_one_is_non_contractive() {
        let mdp = example2_mdp();
        let sol = solve_q_star(&mdp, DEFAULT_SOLVER_TOL).unwrap();
        let opts = CertifyOptions { norm: NormKind::Spectral, ..CertifyOptions::new(0.2) };
        // the 2-norm of these non-normal products stays above 1 through depth 10
        match certify(&mdp, &sol, &opts) {
            Err(Error::NonContractive { beta }) => assert!(beta >= 1.0),
            other => panic!("expected a non-contractive rate, got {other:?}"),
        }
    }
}
