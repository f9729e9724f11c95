//! Command-line front end: experiment runs, rate tables, problem export
//! and the fast invariant self-check.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{parse_source_profile, ExperimentConfig};
use crate::error::{Error, Result};
use crate::harness::{emit_csv, run_experiment};
use crate::operator::{deriv2_problem, make_diagonal_problem, Deriv2Case};
use crate::rates::{make_source_element, minimax_rate, RateParams, SourceSpec};

#[derive(Parser)]
#[command(
    name = "specstop",
    version = concat!(env!("CARGO_PKG_VERSION"), " (", env!("CARGO_PKG_NAME"), ")"),
    about = "Spectral cut-off solver for ill-posed systems with repeated measurements"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment described by a config file.
    Run {
        /// Flat key=value config file; see the README for the schema.
        #[arg(long)]
        config: PathBuf,
        /// Output directory for risk_table.csv and risk_table_raw.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (0 = runtime default).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print the optimal-risk table for a parameter grid as CSV.
    Rates {
        #[arg(long)]
        q: f64,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        nu: f64,
        #[arg(long)]
        rho: f64,
        /// Sample size; repeat the flag for a grid.
        #[arg(long = "n", required = true)]
        n: Vec<f64>,
    },
    /// Construct a forward problem and export it as CSV.
    Problem {
        /// "deriv2" or "diagonal".
        #[arg(long)]
        kind: String,
        #[arg(long)]
        m: usize,
        /// deriv2 solution case (1, 2 or 3).
        #[arg(long, default_value_t = 1)]
        case: u8,
        /// Diagonal decay exponent.
        #[arg(long, default_value_t = 2.0)]
        q: f64,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value_t = 1.0)]
        nu: f64,
        #[arg(long, default_value_t = 1.0)]
        rho: f64,
        /// Source profile, e.g. flat:10, single:3, geometric:0.8, power:0.5.
        #[arg(long, default_value = "power:0.5")]
        source: String,
        #[arg(long)]
        export: PathBuf,
    },
    /// Run the fast invariant suite and print one pass/fail line each.
    Selfcheck,
}

/// Parses argv and dispatches; returns the process exit code
/// (0 success, 1 runtime failure, 2 usage error).
pub fn parse_and_dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            threads,
        } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(out) = out {
                cfg.out = Some(out);
            }
            if let Some(threads) = threads {
                cfg.threads = threads;
            }
            let out_dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("."));
            std::fs::create_dir_all(&out_dir)
                .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
            let table = run_experiment(&cfg)?;
            let path = out_dir.join("risk_table.csv");
            emit_csv(&table, &path)?;
            println!("wrote {}", path.display());
            println!("wrote {}", crate::harness::raw_path(&path).display());
            Ok(())
        }
        Command::Rates { q, p, nu, rho, n } => {
            let params = RateParams::new(q, p, nu, rho);
            println!("n,q,p,nu,rho,branch,rate");
            for &ni in &n {
                let (branch, rate) = minimax_rate(ni, &params)?;
                println!("{ni},{q},{p},{nu},{rho},{},{rate}", branch.label());
            }
            Ok(())
        }
        Command::Problem {
            kind,
            m,
            case,
            q,
            scale,
            nu,
            rho,
            source,
            export,
        } => {
            let problem = match kind.as_str() {
                "deriv2" => deriv2_problem(m, Deriv2Case::from_index(case)?)?,
                "diagonal" => {
                    let sigma: Vec<f64> =
                        (1..=m).map(|j| scale * (j as f64).powf(-q / 2.0)).collect();
                    let spec = SourceSpec {
                        nu,
                        rho,
                        profile: parse_source_profile(&source)?,
                    };
                    let xhat = make_source_element(&sigma, &spec)?;
                    make_diagonal_problem(m, q, scale, &xhat)?
                }
                other => return Err(Error::invalid(format!("unknown problem kind {other:?}"))),
            };
            problem.export_csv(&export)?;
            println!("wrote {}", export.display());
            Ok(())
        }
        Command::Selfcheck => selfcheck(),
    }
}

fn report(name: &str, ok: bool, detail: String, failures: &mut usize) {
    if ok {
        println!("PASS {name}");
    } else {
        println!("FAIL {name}: {detail}");
        *failures += 1;
    }
}

/// Fast invariant suite: limit-weight properties, weighted-tail
/// monotonicity, the worked weight example, the bias-variance identity
/// at n = 1000 and the GPD sampler moments.
fn selfcheck() -> Result<()> {
    use crate::estimator::{cutoff_estimate, summarize};
    use crate::noise::{
        gpd_unit_variance_scale, sample_batch, sample_gpd, true_component_variances, NoiseModel,
    };
    use crate::rates::{exact_risk, limit_weights};
    use crate::rng::{derive_stream, mix64, stream_rng};

    let mut failures = 0usize;

    // Limit-weight suite over seeded admissible tuples.
    {
        let mut state = 0x51ec_5eed_u64;
        let mut uniform = move || {
            state = mix64(state);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut ok = true;
        let mut detail = String::new();
        for case in 0..20 {
            let q = 0.5 + 3.5 * uniform();
            let p = 1.0 + (q.min(2.0)) * uniform().max(0.05);
            let eps2 = ((p - 1.0) * (0.05 + 0.9 * uniform())).min(0.95);
            let m = 50 + (uniform() * 200.0) as usize;
            let sigma: Vec<f64> = (1..=m).map(|j| (j as f64).powf(-q / 2.0)).collect();
            let var: Vec<f64> = (1..=m).map(|j| (j as f64).powf(-p)).collect();
            let w = match limit_weights(&var, &sigma, eps2) {
                Ok(w) => w,
                Err(e) => {
                    ok = false;
                    detail = format!("case {case}: {e}");
                    break;
                }
            };
            for j in 0..m {
                if w.d[j] > 1.0 / sigma[j] + 1e-12
                    || w.d[j] <= 0.0
                    || (j > 0 && w.d[j] * sigma[j] > w.d[j - 1] * sigma[j - 1] * (1.0 + 1e-12))
                {
                    ok = false;
                    detail = format!("case {case}: weight property violated at j = {j}");
                }
            }
        }
        report("limit_weight_properties", ok, detail, &mut failures);
    }

    // Worked example of the weight recursion.
    {
        let w = crate::stopping::adaptive_weights(
            &[1.0, 0.125, 1.0 / 27.0],
            &[1.0, 0.5, 1.0 / 3.0],
            0.5,
            3,
        )?;
        let d2: Vec<f64> = w.d.iter().map(|d| d * d).collect();
        let ok = (d2[0] - 1.0).abs() < 1e-12
            && (d2[1] - 3.2867370755152487).abs() < 1e-12
            && (d2[2] - 6.038121565274837).abs() < 1e-12;
        report(
            "weight_recursion_worked_example",
            ok,
            format!("d2 = {d2:?}"),
            &mut failures,
        );
    }

    // Weighted tails are nonincreasing and the rule stops at the first
    // crossing.
    {
        let problem = make_diagonal_problem(30, 2.0, 1.0, &vec![1.0; 30])?;
        let model = NoiseModel::gaussian_profile(1.0, 2.0)?;
        let batch = sample_batch(&problem, &model, 200, derive_stream(5, &[0]))?;
        let s = summarize(&batch)?;
        let out = crate::stopping::adaptive_rule_from_summary(&s, &problem.sigma, 0.5, 0.5, 1.0)?;
        let w = crate::stopping::adaptive_weights(
            &s.s2[..out.m_eff],
            &problem.sigma[..out.m_eff],
            0.5,
            out.m_eff,
        )?;
        let tail = |k: usize| -> f64 {
            (k..out.m_eff)
                .map(|j| w.d[j] * w.d[j] * s.mean[j] * s.mean[j])
                .sum::<f64>()
                .sqrt()
        };
        let mut ok = tail(out.k) <= out.delta_used;
        if out.k > 0 {
            ok &= tail(out.k - 1) > out.delta_used;
        }
        for k in 0..out.m_eff {
            ok &= tail(k + 1) <= tail(k) + 1e-12;
        }
        report(
            "weighted_tail_monotone_first_crossing",
            ok,
            format!("k = {}", out.k),
            &mut failures,
        );
    }

    // Bias-variance identity at n = 1000 (Monte Carlo, 3 standard errors).
    {
        let m = 20;
        let xhat: Vec<f64> = (1..=m).map(|j| (j as f64).powf(-1.0)).collect();
        let problem = make_diagonal_problem(m, 2.0, 1.0, &xhat)?;
        let model = NoiseModel::gaussian_profile(1.0, 2.0)?;
        let vars = true_component_variances(&problem, &model)?;
        let (n, k, reps) = (1000, 5, 200);
        let expected = exact_risk(&problem, &vars, n, k)?;
        let mut sq = Vec::with_capacity(reps);
        for rep in 0..reps {
            let batch = sample_batch(&problem, &model, n, derive_stream(6, &[rep as u64]))?;
            let s = summarize(&batch)?;
            let est = cutoff_estimate(&s.mean, &problem.sigma, k)?;
            sq.push(
                est.iter()
                    .zip(&xhat)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>(),
            );
        }
        let mc = sq.iter().sum::<f64>() / reps as f64;
        let sd = (sq.iter().map(|x| (x - mc) * (x - mc)).sum::<f64>() / (reps as f64 - 1.0)).sqrt();
        let se = sd / (reps as f64).sqrt();
        let ok = (mc - expected).abs() <= 3.0 * se;
        report(
            "bias_variance_identity_n1000",
            ok,
            format!("mc {mc} vs exact {expected} (se {se})"),
            &mut failures,
        );
    }

    // GPD sampler moments at the reference parameters.
    {
        let mut rng = stream_rng(0x6bd1);
        let draws = sample_gpd(0.2, gpd_unit_variance_scale(0.2), 200_000, &mut rng)?;
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let ok = mean.abs() <= 0.01 && (0.95..=1.05).contains(&var);
        report(
            "gpd_sampler_moments",
            ok,
            format!("mean {mean}, var {var}"),
            &mut failures,
        );
    }

    if failures == 0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{failures} selfcheck item(s) failed"
        )))
    }
}
