use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qswitch::certify::{certify, Certification};
use qswitch::dynamics::{run, RunConfig};
use qswitch::experiments::{ensemble, example1_mdp, example2_mdp, monte_carlo_bounds, EnsembleConfig, MonteCarloConfig};
use qswitch::lyapunov::check_contraction_on;
use qswitch::mdp::{Mdp, QVector, DEFAULT_SOLVER_TOL};
use qswitch::DVector;

use crate::args::VerifyArgs;
use crate::commands::{certify_options, examples_summary, file_name, solve_mdp};
use crate::output::{check_alpha, load_mdp, write_atomic, CliResult, Failure, EXIT_FAILED_CHECKS};

const LYAPUNOV_SAMPLES: usize = 100;

#[derive(Default)]
struct Tally {
    passed: usize,
    failed: usize,
}

impl Tally {
    fn record(&mut self, label: &str, check: &str, outcome: Result<String, String>) {
        match outcome {
            Ok(detail) => {
                self.passed += 1;
                println!("PASS {label} {check}: {detail}");
            }
            Err(detail) => {
                self.failed += 1;
                println!("FAIL {label} {check}: {detail}");
            }
        }
    }
}

fn lyapunov_checks(c: &Certification, n: usize, seed: u64) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes = c.positive.num_modes();
    let mut checks = 0;
    for _ in 0..LYAPUNOV_SAMPLES {
        let x = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let fixed = check_contraction_on(&c.negative, &x, None).map_err(|e| e.to_string())?;
        if !fixed.holds {
            return Err(format!("negative certificate: {:?}", fixed.first_failure()));
        }
        let pick = [rng.random_range(0..modes)];
        let product = check_contraction_on(&c.positive, &x, Some(&pick)).map_err(|e| e.to_string())?;
        if !product.holds {
            return Err(format!("positive certificate: {:?}", product.first_failure()));
        }
        checks += fixed.checks.len() + product.checks.len();
    }
    Ok(format!("{checks} contraction checks on {LYAPUNOV_SAMPLES} vectors"))
}

fn verify_instance(
    tally: &mut Tally,
    table: &mut String,
    label: &str,
    mdp: &Mdp,
    q0: &QVector,
    args: &VerifyArgs,
    seed: u64,
) -> CliResult {
    let sol = match solve_mdp(mdp, DEFAULT_SOLVER_TOL) {
        Ok(sol) => sol,
        Err(f) => {
            tally.record(label, "solve", Err(f.message));
            return Ok(());
        }
    };
    for &alpha in &args.alpha {
        let tag = format!("alpha={alpha}");
        let c = match certify(mdp, &sol, &certify_options(alpha, args.epsilon)) {
            Ok(c) => c,
            Err(e) => {
                tally.record(label, &format!("{tag} certify"), Err(e.to_string()));
                continue;
            }
        };
        tally.record(
            label,
            &format!("{tag} certify"),
            Ok(format!("beta- {:.9}, beta+ {:.9}", c.beta_minus(), c.beta_plus())),
        );
        let chain = if c.chain_holds(1e-10) {
            Ok(format!("{:.9} <= {:.9} <= {:.9}", c.rho_minus_star, c.bracket_minus.upper, c.bracket_plus.upper))
        } else {
            Err(format!(
                "rho_-^star {} vs brackets [{}, {}] and [{}, {}]",
                c.rho_minus_star, c.bracket_minus.lower, c.bracket_minus.upper, c.bracket_plus.lower, c.bracket_plus.upper
            ))
        };
        tally.record(label, &format!("{tag} chain"), chain);

        let det = run(mdp, &sol, &RunConfig::deterministic(alpha, args.horizon, q0.clone()), &c).map_err(Failure::from)?;
        let outcome = if det.is_clean() {
            Ok(format!("{} steps", args.horizon))
        } else {
            Err(format!("{} violations, first {:?}", det.violation_count, det.violations.first()))
        };
        tally.record(label, &format!("{tag} deterministic"), outcome);

        if args.seeds >= 2 {
            let config = MonteCarloConfig { alpha, horizon: args.horizon, num_seeds: args.seeds, base_seed: seed, q0: q0.clone() };
            let report = monte_carlo_bounds(mdp, &sol, &config, &c).map_err(Failure::from)?;
            let outcome = if report.is_clean() {
                Ok(format!("{} trajectories", args.seeds))
            } else {
                Err(format!(
                    "{} pathwise violations (first {:?}), {} flagged mean steps",
                    report.pathwise_violations, report.first_pathwise, report.flagged_steps
                ))
            };
            tally.record(label, &format!("{tag} stochastic"), outcome);
            for row in &report.rows {
                let _ = writeln!(
                    table,
                    "{label},{alpha},{},{:e},{:e},{:e},{:e},{:e},{:e},{}",
                    row.k,
                    row.mean_minus,
                    row.envelope_minus,
                    row.halfwidth_minus,
                    row.mean_plus,
                    row.envelope_plus,
                    row.halfwidth_plus,
                    row.flags
                );
            }
        }
        tally.record(label, &format!("{tag} lyapunov"), lyapunov_checks(&c, mdp.layout().len(), seed));
    }
    Ok(())
}

pub fn verify(args: &VerifyArgs) -> CliResult {
    for &alpha in &args.alpha {
        check_alpha(alpha)?;
    }
    let mut tally = Tally::default();
    let mut table = String::from(
        "instance,alpha,k,mean_minus,envelope_minus,halfwidth_minus,mean_plus,envelope_plus,halfwidth_plus,flags\n",
    );

    if let Some(path) = &args.mdp {
        let mdp = load_mdp(path)?;
        let q0 = DVector::zeros(mdp.layout().len());
        verify_instance(&mut tally, &mut table, &file_name(path), &mdp, &q0, args, args.seed)?;
    }
    if args.examples {
        tally.record("example1+2", "closed forms", examples_summary(0.1, 0.4, 500));
        for (label, mdp) in [("example1", example1_mdp()), ("example2", example2_mdp())] {
            let q0 = DVector::zeros(mdp.layout().len());
            verify_instance(&mut tally, &mut table, label, &mdp, &q0, args, args.seed)?;
        }
    }
    if let Some(count) = args.random {
        let members = ensemble(&EnsembleConfig { num_mdps: count, master_seed: args.seed, ..EnsembleConfig::default() })?;
        for m in &members {
            let label = format!("random{}", m.index);
            verify_instance(&mut tally, &mut table, &label, &m.mdp, &m.q0, args, m.seed)?;
        }
    }
    if let Some(out) = &args.out {
        write_atomic(out, table.as_bytes())?;
    }

    println!("{} checks passed, {} failed", tally.passed, tally.failed);
    if tally.failed == 0 {
        Ok(())
    } else {
        Err(Failure::new(EXIT_FAILED_CHECKS, format!("{} checks failed", tally.failed)))
    }
}
