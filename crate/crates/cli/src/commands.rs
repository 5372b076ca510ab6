use std::path::Path;

use serde::{Deserialize, Serialize};

use qswitch::certify::{certify as run_certify, Certification, CertifyOptions};
use qswitch::dynamics::{run, RunConfig};
use qswitch::experiments::{
    example1_expected, example1_guard, example1_mdp, example2_expected, example2_mdp, max_relative_error,
    random_mdp_with, RandomMdpConfig,
};
use qswitch::mdp::{solve_q_star, Layout, Mdp, OptimalSolution, DEFAULT_SOLVER_TOL};
use qswitch::switching::NormKind;
use qswitch::{DVector, Trace};

use crate::args::{CertifyArgs, ExamplesArgs, ModeArg, NormArg, RandomMdpArgs, SimulateArgs, SolveArgs};
use crate::output::{
    check_alpha, fmt_vec, load_mdp, parse_vector, write_atomic, write_json, CliResult, Failure, EXIT_FAILED_CHECKS,
    EXIT_IO, EXIT_SOLVER,
};

#[derive(Debug, Serialize, Deserialize)]
pub struct SolutionReport {
    /// `[a][s]`.
    pub q_star: Vec<Vec<f64>>,
    pub v_star: Vec<f64>,
    /// 1-based optimal actions per state.
    pub optimal_actions: Vec<Vec<usize>>,
    pub optimal_policy_count: f64,
    pub residual: f64,
    pub iterations: usize,
}

fn by_action(l: Layout, q: &DVector<f64>) -> Vec<Vec<f64>> {
    (0..l.num_actions).map(|a| (0..l.num_states).map(|s| q[l.index(s, a)]).collect()).collect()
}

pub fn solve_mdp(mdp: &Mdp, tol: f64) -> CliResult<OptimalSolution> {
    solve_q_star(mdp, tol).map_err(|e| match e {
        qswitch::Error::Parameter(_) => Failure::from(e),
        other => Failure::new(EXIT_SOLVER, other.to_string()),
    })
}

pub fn solve(args: &SolveArgs) -> CliResult {
    let mdp = load_mdp(&args.mdp)?;
    let sol = solve_mdp(&mdp, args.tol)?;
    let l = mdp.layout();
    println!("states {}, actions {}, gamma {}", l.num_states, l.num_actions, mdp.gamma());
    println!("Q* (one row per action):");
    for (a, row) in by_action(l, &sol.q_star).into_iter().enumerate() {
        println!("  a={}: {}", a + 1, fmt_vec(row));
    }
    println!("V*: {}", fmt_vec(sol.v_star.iter().copied()));
    for (s, acts) in sol.optimal_actions.iter().enumerate() {
        let names: Vec<String> = acts.iter().map(|a| (a + 1).to_string()).collect();
        println!("optimal actions at s={}: {{{}}}", s + 1, names.join(", "));
    }
    let count = sol.optimal_policies().count();
    println!("|Theta*| = {count}");
    println!("Bellman residual {:.3e} after {} iterations", sol.residual, sol.iterations);
    if let Some(out) = &args.out {
        let report = SolutionReport {
            q_star: by_action(l, &sol.q_star),
            v_star: sol.v_star.iter().copied().collect(),
            optimal_actions: sol.optimal_actions.iter().map(|v| v.iter().map(|a| a + 1).collect()).collect(),
            optimal_policy_count: count,
            residual: sol.residual,
            iterations: sol.iterations,
        };
        write_json(out, &report)?;
    }
    Ok(())
}

pub fn certify_options(alpha: f64, epsilon: Option<f64>) -> CertifyOptions {
    CertifyOptions { epsilon_minus: epsilon, epsilon_plus: epsilon, ..CertifyOptions::new(alpha) }
}

fn print_certification(c: &Certification) {
    println!("alpha = {}", c.alpha);
    println!("spectral radius of each optimal mode:");
    for (pi, rho) in &c.optimal_mode_rhos {
        println!("  pi = {pi}: rho = {rho:.12}");
    }
    println!("rho_-^star = {:.12} attained by pi = {}", c.rho_minus_star, c.pi_minus_star);
    for (name, b) in [("optimal family", &c.bracket_minus), ("full family", &c.bracket_plus)] {
        println!(
            "JSR bracket, {name}: [{:.12}, {:.12}] (depth {}, width {:.2e}, {} products)",
            b.lower,
            b.upper,
            b.depth,
            b.width(),
            b.products_evaluated
        );
    }
    for (name, cert) in [("negative", &c.negative), ("positive", &c.positive)] {
        println!(
            "{name} certificate: beta = {:.12}, epsilon = {:.3e}, C <= {:.6e}, truncation depth {}, tail <= {:.3e}",
            cert.beta(),
            cert.epsilon(),
            cert.c_constant_upper(),
            cert.truncation_depth(),
            cert.tail_bound()
        );
    }
    let chain = c.chain_holds(1e-10);
    println!(
        "chain rho_-^star <= upper(rho_-) <= upper(rho_+): {:.12} <= {:.12} <= {:.12} [{}]",
        c.rho_minus_star,
        c.bracket_minus.upper,
        c.bracket_plus.upper,
        if chain { "ok" } else { "VIOLATED" }
    );
}

pub fn certify(args: &CertifyArgs) -> CliResult {
    check_alpha(args.alpha)?;
    let mdp = load_mdp(&args.mdp)?;
    let sol = solve_mdp(&mdp, DEFAULT_SOLVER_TOL)?;
    let opts = CertifyOptions {
        depth: args.depth,
        norm: match args.norm {
            NormArg::Inf => NormKind::Infinity,
            NormArg::Two => NormKind::Spectral,
        },
        product_tol: args.product_tol,
        ..certify_options(args.alpha, args.epsilon)
    };
    let c = run_certify(&mdp, &sol, &opts)?;
    print_certification(&c);
    let out = args.out.clone().unwrap_or_else(|| args.mdp.with_extension("certificate.json"));
    write_json(&out, &c.summary())?;
    println!("certificate written to {}", out.display());
    Ok(())
}

fn initial_iterate(args: &SimulateArgs, sol: &OptimalSolution) -> CliResult<DVector<f64>> {
    let n = sol.q_star.len();
    match (&args.q0, &args.e0) {
        (Some(q), _) => parse_vector(q, n, "q0"),
        (None, Some(e)) => Ok(&sol.q_star + parse_vector(e, n, "e0")?),
        (None, None) => Ok(DVector::zeros(n)),
    }
}

fn trace_csv(trace: &Trace) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    trace.write_csv(&mut buf)?;
    Ok(buf)
}

pub fn simulate(args: &SimulateArgs) -> CliResult {
    check_alpha(args.alpha)?;
    let mdp = load_mdp(&args.mdp)?;
    let sol = solve_mdp(&mdp, DEFAULT_SOLVER_TOL)?;
    let q0 = initial_iterate(args, &sol)?;
    let certs = run_certify(&mdp, &sol, &certify_options(args.alpha, args.epsilon))?;
    let config = match args.mode {
        ModeArg::Det => RunConfig::deterministic(args.alpha, args.horizon, q0),
        ModeArg::Stoch => RunConfig::stochastic(args.alpha, args.horizon, q0, args.seed),
    };
    let trace = run(&mdp, &sol, &config, &certs)?;
    write_atomic(&args.out, &trace_csv(&trace)?)?;
    if let Some(dump) = &args.dump {
        write_json(dump, &trace.vector_dump())?;
    }
    let last = trace.last();
    println!("steps {}, W_max {:.6e}", args.horizon, trace.w_max);
    println!(
        "final: |e|_inf = {:.6e}, |e+|_inf = {:.6e}, |e-|_inf = {:.6e}",
        last.e.amax(),
        last.e_plus.amax(),
        last.e_minus.amax()
    );
    println!("final envelopes: negative {:.6e}, positive {:.6e}", last.envelope_minus, last.envelope_plus);
    match trace.first_violation {
        Some(k) => println!("first violation at k = {k} ({} in total)", trace.violation_count),
        None => println!("first violation: none"),
    }
    println!("trace written to {}", args.out.display());
    Ok(())
}

struct Reproduction {
    max_relative_error: f64,
    rows: Vec<(usize, Vec<f64>, Vec<f64>)>,
    trace: Trace,
    certs: Certification,
}

fn reproduce(mdp: &Mdp, alpha: f64, horizon: usize, e0: DVector<f64>, oracle: impl Fn(usize) -> Vec<f64>) -> CliResult<Reproduction> {
    let sol = solve_mdp(mdp, DEFAULT_SOLVER_TOL)?;
    let certs = run_certify(mdp, &sol, &CertifyOptions::new(alpha))?;
    let trace = run(mdp, &sol, &RunConfig::deterministic(alpha, horizon, &sol.q_star + e0), &certs)?;
    let mut worst = 0.0f64;
    let mut rows = Vec::with_capacity(horizon + 1);
    for st in &trace.steps {
        let want = oracle(st.k);
        worst = worst.max(max_relative_error(&st.e, &DVector::from_row_slice(&want), f64::MIN_POSITIVE));
        rows.push((st.k, st.e.iter().copied().collect(), want));
    }
    Ok(Reproduction { max_relative_error: worst, rows, trace, certs })
}

fn table_csv(rows: &[(usize, Vec<f64>, Vec<f64>)]) -> Vec<u8> {
    let dim = rows.first().map_or(0, |r| r.1.len());
    let mut out = String::from("k");
    for i in 1..=dim {
        out.push_str(&format!(",e{i},closed_form{i}"));
    }
    out.push('\n');
    for (k, got, want) in rows {
        out.push_str(&k.to_string());
        for (g, w) in got.iter().zip(want) {
            out.push_str(&format!(",{g:e},{w:e}"));
        }
        out.push('\n');
    }
    out.into_bytes()
}

struct Examples {
    one: Reproduction,
    two: Reproduction,
    guard_ok: bool,
    greedy_ok: bool,
    gap: f64,
}

impl Examples {
    fn compute(alpha1: f64, alpha2: f64, horizon: usize) -> CliResult<Self> {
        check_alpha(alpha1)?;
        check_alpha(alpha2)?;
        let (a, b, c) = (1.0, 1.0, 1.0);
        let one = reproduce(&example1_mdp(), alpha1, horizon, DVector::from_vec(vec![-a, b]), |k| {
            example1_expected(k, alpha1, a, b).unwrap().to_vec()
        })?;
        let guard_ok = (0..=horizon).all(|k| example1_guard(k, alpha1, a, b).unwrap() > 0.0);
        let greedy_ok = one.trace.steps.iter().all(|st| st.pi_plus.action(0) == 1);
        let two = reproduce(&example2_mdp(), alpha2, horizon.min(200), DVector::from_vec(vec![c, -c, c, -c]), |k| {
            example2_expected(k, alpha2, c).unwrap().to_vec()
        })?;
        let gap = two.trace.steps.iter().map(|st| (st.e_plus.amax() - st.e_minus.amax()).abs()).fold(0.0, f64::max);
        Ok(Self { one, two, guard_ok, greedy_ok, gap })
    }

    fn ok(&self) -> bool {
        self.one.max_relative_error <= 1e-9
            && self.two.max_relative_error <= 1e-9
            && self.gap <= 1e-12
            && self.guard_ok
            && self.greedy_ok
            && self.one.trace.is_clean()
            && self.two.trace.is_clean()
    }
}

/// One-line verdict on both closed-form reproductions.
pub fn examples_summary(alpha1: f64, alpha2: f64, horizon: usize) -> Result<String, String> {
    let ex = Examples::compute(alpha1, alpha2, horizon).map_err(|f| f.message)?;
    let detail = format!(
        "relative errors {:.1e} and {:.1e}, sign-part gap {:.1e}",
        ex.one.max_relative_error, ex.two.max_relative_error, ex.gap
    );
    if ex.ok() {
        Ok(detail)
    } else {
        Err(detail)
    }
}

pub fn examples(args: &ExamplesArgs) -> CliResult {
    let ex = Examples::compute(args.alpha1, args.alpha2, args.horizon)?;
    let (one, two) = (&ex.one, &ex.two);
    println!("example 1 (alpha = {}, A = 1, B = 1, {} steps)", args.alpha1, args.horizon);
    println!("  rho_-^star = {:.12} (1 - 0.09 alpha = {:.12})", one.certs.rho_minus_star, 1.0 - 0.09 * args.alpha1);
    println!(
        "  full-family JSR bracket [{:.12}, {:.12}] (1 - 0.01 alpha = {:.12})",
        one.certs.bracket_plus.lower,
        one.certs.bracket_plus.upper,
        1.0 - 0.01 * args.alpha1
    );
    println!("  max relative error against the closed form: {:.3e}", one.max_relative_error);
    println!("  guard y_k > x_k at every step: {}; greedy action 2 at every step: {}", ex.guard_ok, ex.greedy_ok);
    let last = one.trace.last();
    println!("  final |e+|_inf = {:.12e}, final |e-|_inf = {:.12e}", last.e_plus.amax(), last.e_minus.amax());

    println!("example 2 (alpha = {}, c = 1, {} steps)", args.alpha2, args.horizon.min(200));
    println!("  rho_-^star = {:.12} (1 - 0.025 alpha = {:.12})", two.certs.rho_minus_star, 1.0 - 0.025 * args.alpha2);
    println!("  full-family JSR bracket [{:.12}, {:.12}]", two.certs.bracket_plus.lower, two.certs.bracket_plus.upper);
    println!("  max relative error against the closed form: {:.3e}", two.max_relative_error);
    println!("  largest gap between |e+|_inf and |e-|_inf: {:.3e}", ex.gap);

    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)
            .map_err(|e| Failure::new(EXIT_IO, format!("cannot create {}: {e}", dir.display())))?;
        write_atomic(&dir.join("example1.json"), example1_mdp().to_json_string().as_bytes())?;
        write_atomic(&dir.join("example2.json"), example2_mdp().to_json_string().as_bytes())?;
        write_atomic(&dir.join("example1_trajectory.csv"), &table_csv(&one.rows))?;
        write_atomic(&dir.join("example2_trajectory.csv"), &table_csv(&two.rows))?;
        println!("files written to {}", dir.display());
    }
    if ex.ok() {
        Ok(())
    } else {
        Err(Failure::new(EXIT_FAILED_CHECKS, "an example diverged from its closed form"))
    }
}

pub fn random_mdp(args: &RandomMdpArgs) -> CliResult {
    let config = RandomMdpConfig {
        num_states: args.states,
        num_actions: args.actions,
        seed: args.seed,
        reward_scale: args.reward_scale,
        gamma: args.gamma,
        random_sampling: args.random_sampling,
    };
    let mdp = random_mdp_with(&config)?;
    let text = mdp.to_json_string();
    match &args.out {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

pub fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}
