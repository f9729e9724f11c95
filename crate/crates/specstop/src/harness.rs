//! Seeded Monte Carlo driver: sweep sample sizes, replicate every
//! stopping rule, aggregate relative errors into quartile summaries and
//! serialise them as CSV.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{DeltaMode, ExperimentConfig, NoiseSpec, ProblemSpec, RuleSpec};
use crate::error::{Error, Result};
use crate::estimator::{
    cutoff_estimate, noise_level_from_summary, noise_level_simple, relative_error, summarize,
    BatchSummary,
};
use crate::noise::{sample_batch, true_component_variances, NoiseModel};
use crate::operator::{
    deriv2_problem, make_deriv2, make_diagonal_problem, svd, Deriv2Case, SpectralProblem,
};
use crate::rates::{make_source_element, SourceSpec};
use crate::rng::{derive_stream, hash_str};
use crate::stopping::{
    a_priori_k, adaptive_rule_from_summary, known_p_weights, oracle_k, plain_discrepancy,
    weighted_discrepancy,
};

/// Everything derived once per experiment and shared read-only by the
/// replication workers.
pub struct Prepared {
    pub problem: SpectralProblem,
    pub model: NoiseModel,
    pub var: Vec<f64>,
    pub xhat_norm: f64,
}

/// Builds the problem and noise model a config describes.
pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    let problem = match &config.problem {
        ProblemSpec::Diagonal {
            m,
            q,
            scale,
            nu,
            rho,
            profile,
        } => {
            let sigma: Vec<f64> = (1..=*m)
                .map(|j| scale * (j as f64).powf(-q / 2.0))
                .collect();
            let spec = SourceSpec {
                nu: *nu,
                rho: *rho,
                profile: *profile,
            };
            let xhat = make_source_element(&sigma, &spec)?;
            make_diagonal_problem(*m, *q, *scale, &xhat)?
        }
        ProblemSpec::Deriv2 {
            m,
            case,
            symmetrize,
        } => {
            let case = Deriv2Case::from_index(*case)?;
            if *symmetrize {
                deriv2_problem(*m, case)?
            } else {
                // Direct spectral form of the factor itself; only profile
                // noise makes sense here.
                let (a, x_true, _b) = make_deriv2(*m, case)?;
                let dec = svd(&a)?;
                let mut xhat = vec![0.0; *m];
                for j in 0..*m {
                    xhat[j] = (0..*m).map(|i| x_true[i] * dec.v[(i, j)]).sum();
                }
                SpectralProblem::from_parts(dec.sigma, xhat, Some(4.0))?
            }
        }
    };
    let model = match config.noise {
        NoiseSpec::Gaussian { c, p } => NoiseModel::gaussian_profile(c, p)?,
        NoiseSpec::Rademacher { c, p } => NoiseModel::rademacher_profile(c, p)?,
        NoiseSpec::Gpd { shape, scale } => {
            if problem.factor.is_none() {
                return Err(Error::Config(
                    "gpd_rhs noise needs a symmetrized deriv2 problem".into(),
                ));
            }
            NoiseModel::gpd_rhs(shape, scale)?
        }
    };
    let var = true_component_variances(&problem, &model)?;
    let xhat_norm = problem.xhat_norm();
    if xhat_norm == 0.0 {
        return Err(Error::Config("ground truth is identically zero".into()));
    }
    Ok(Prepared {
        problem,
        model,
        var,
        xhat_norm,
    })
}

/// Output rule: a configured rule after oracle expansion.
#[derive(Debug, Clone, PartialEq)]
enum OutputRule {
    Spec(RuleSpec),
    OracleEmpirical,
    OracleExact,
}

impl OutputRule {
    fn label(&self) -> String {
        match self {
            OutputRule::Spec(r) => r.label(),
            OutputRule::OracleEmpirical => "oracle_empirical".into(),
            OutputRule::OracleExact => "oracle_exact".into(),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            OutputRule::Spec(r) => r.kind(),
            OutputRule::OracleEmpirical | OutputRule::OracleExact => "oracle",
        }
    }
}

fn expand_rules(rules: &[RuleSpec]) -> Vec<OutputRule> {
    let mut out = Vec::new();
    for rule in rules {
        match rule {
            RuleSpec::Oracle => {
                out.push(OutputRule::OracleExact);
                out.push(OutputRule::OracleEmpirical);
            }
            other => out.push(OutputRule::Spec(other.clone())),
        }
    }
    out
}

/// One replication cell: relative error and chosen truncation.
#[derive(Debug, Clone, Copy)]
pub struct RepResult {
    pub rel_err: f64,
    pub k: usize,
}

/// Derives the cell stream and evaluates one rule on one fresh batch.
/// Pure in (config, n, rule, rep); rule variants of the same kind share
/// data so their medians are compared on common draws.
pub fn run_replication(
    prep: &Prepared,
    config: &ExperimentConfig,
    n: usize,
    rule: &RuleSpec,
    rep: usize,
) -> Result<RepResult> {
    let out_rule = match rule {
        RuleSpec::Oracle => OutputRule::OracleEmpirical,
        other => OutputRule::Spec(other.clone()),
    };
    eval_cell(prep, config, n, &out_rule, rep)
}

fn eval_cell(
    prep: &Prepared,
    config: &ExperimentConfig,
    n: usize,
    rule: &OutputRule,
    rep: usize,
) -> Result<RepResult> {
    let problem = &prep.problem;
    let m = problem.m();

    if let OutputRule::OracleExact = rule {
        let (k, risk) = oracle_k(problem, &prep.var, n, m)?;
        return Ok(RepResult {
            rel_err: risk.sqrt() / prep.xhat_norm,
            k,
        });
    }

    let seed = derive_stream(
        config.master_seed,
        &[n as u64, hash_str(rule.kind()), rep as u64],
    );
    let batch = sample_batch(problem, &prep.model, n, seed)?;
    let summary = summarize(&batch)?;

    let (k, _delta) = match rule {
        OutputRule::Spec(RuleSpec::Plain { tau }) => {
            let delta = tau * delta_for(&summary, config.delta_mode)?;
            let out = plain_discrepancy(&summary.mean, delta, m)?;
            (out.k, delta)
        }
        OutputRule::Spec(RuleSpec::KnownP { p, eps, tau }) => {
            let weights = known_p_weights(*p, *eps, m)?;
            let delta = tau
                * match config.delta_mode {
                    DeltaMode::Sample => {
                        crate::stopping::modified_noise_level(&weights, &summary.s2, n)?
                    }
                    DeltaMode::Simple => noise_level_simple(n)?,
                };
            let out = weighted_discrepancy(&weights, &summary.mean, delta, m)?;
            (out.k, delta)
        }
        OutputRule::Spec(RuleSpec::Adaptive { eps1, eps2, tau }) => {
            let out = adaptive_rule_from_summary(&summary, &problem.sigma, *eps1, *eps2, *tau)?;
            (out.k, out.delta_used)
        }
        OutputRule::Spec(RuleSpec::APriori { nu, rho, q, p }) => {
            let q = q.or(problem.decay_q).ok_or_else(|| {
                Error::Config("a_priori rule needs q (problem decay unknown)".into())
            })?;
            let p = p.unwrap_or(default_noise_decay(&prep.model, problem));
            let k = a_priori_k(n, *rho, *nu, q, p)?.min(m);
            (k, 0.0)
        }
        OutputRule::OracleEmpirical => {
            // Truncation minimising the realised error; needs the truth.
            let mut best_k = 0usize;
            let mut err2 = prep.xhat_norm * prep.xhat_norm;
            let mut best = err2;
            for k in 1..=m {
                let j = k - 1;
                let coef = summary.mean[j] / problem.sigma[j];
                err2 += (coef - problem.xhat[j]).powi(2) - problem.xhat[j].powi(2);
                if err2 < best {
                    best = err2;
                    best_k = k;
                }
            }
            (best_k, 0.0)
        }
        OutputRule::Spec(RuleSpec::Oracle) | OutputRule::OracleExact => unreachable!(),
    };

    let est = cutoff_estimate(&summary.mean, &problem.sigma, k)?;
    let rel_err = relative_error(&est, &problem.xhat)?;
    Ok(RepResult { rel_err, k })
}

fn delta_for(summary: &BatchSummary, mode: DeltaMode) -> Result<f64> {
    match mode {
        DeltaMode::Sample => Ok(noise_level_from_summary(summary)),
        DeltaMode::Simple => noise_level_simple(summary.n),
    }
}

/// Fallback variance-decay exponent for the a-priori rule.
fn default_noise_decay(model: &NoiseModel, problem: &SpectralProblem) -> f64 {
    match model.kind {
        crate::noise::NoiseKind::GaussianProfile | crate::noise::NoiseKind::RademacherProfile => {
            model.p
        }
        // Symmetrised factor noise decays like sigma_j(A)^2, half the
        // decay of sigma_j(K)^2.
        crate::noise::NoiseKind::GpdRhs => problem.decay_q.map_or(4.0, |q| q / 2.0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub rule: String,
    pub n: usize,
    pub replications: usize,
    pub median_err: f64,
    pub q25: f64,
    pub q75: f64,
    pub min: f64,
    pub max: f64,
    pub mean_k: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub rule: String,
    pub n: usize,
    pub rep: usize,
    pub rel_err: f64,
    pub k: usize,
}

/// Per-(rule, n) statistics plus the raw replication table.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskTable {
    pub rows: Vec<SummaryRow>,
    pub raw: Vec<RawRow>,
}

impl RiskTable {
    pub fn row(&self, rule: &str, n: usize) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.rule == rule && r.n == n)
    }
}

/// Lower median: the ⌈R/2⌉-th order statistic.
fn lower_median(sorted: &[f64]) -> f64 {
    sorted[(sorted.len() - 1) / 2]
}

/// Nearest-rank quantile: the ⌈p R⌉-th order statistic.
fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let r = (p * sorted.len() as f64).ceil() as usize;
    sorted[r.max(1) - 1]
}

/// Runs every (rule, n, replication) cell, in parallel when configured,
/// and aggregates deterministically in (rule, n, rep) order. Any cell
/// error aborts the run after dumping completed raw rows next to the
/// configured output path.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RiskTable> {
    config.validate()?;
    let prep = prepare(config)?;
    let rules = expand_rules(&config.rules);
    let reps = config.replications;

    let mut cells = Vec::with_capacity(rules.len() * config.n_list.len() * reps);
    for rule in &rules {
        for &n in &config.n_list {
            for rep in 0..reps {
                cells.push((rule.clone(), n, rep));
            }
        }
    }

    let run_all = || -> Vec<(usize, Result<RepResult>)> {
        cells
            .par_iter()
            .enumerate()
            .map(|(idx, (rule, n, rep))| (idx, eval_cell(&prep, config, *n, rule, *rep)))
            .collect()
    };
    let results = if config.threads == 0 {
        run_all()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(run_all)
    };

    let mut outcomes: Vec<Option<RepResult>> = vec![None; cells.len()];
    let mut first_error: Option<Error> = None;
    for (idx, res) in results {
        match res {
            Ok(v) => outcomes[idx] = Some(v),
            Err(e) => {
                if first_error.is_none() {
                    first_error = Some(e);
                }
            }
        }
    }
    if let Some(err) = first_error {
        if let Some(dir) = &config.out {
            let mut partial = Vec::new();
            for (idx, cell) in cells.iter().enumerate() {
                if let Some(v) = outcomes[idx] {
                    partial.push(RawRow {
                        rule: cell.0.label(),
                        n: cell.1,
                        rep: cell.2,
                        rel_err: v.rel_err,
                        k: v.k,
                    });
                }
            }
            let _ = std::fs::create_dir_all(dir);
            let _ = write_raw(&partial, &dir.join("partial_raw.csv"));
        }
        return Err(err);
    }

    let mut raw = Vec::with_capacity(cells.len());
    for (idx, (rule, n, rep)) in cells.iter().enumerate() {
        let v = outcomes[idx].expect("all cells succeeded");
        raw.push(RawRow {
            rule: rule.label(),
            n: *n,
            rep: *rep,
            rel_err: v.rel_err,
            k: v.k,
        });
    }
    raw.sort_by(|a, b| (a.rule.as_str(), a.n, a.rep).cmp(&(b.rule.as_str(), b.n, b.rep)));

    let mut rows = Vec::new();
    for rule in &rules {
        let label = rule.label();
        for &n in &config.n_list {
            let cell_rows: Vec<&RawRow> =
                raw.iter().filter(|r| r.rule == label && r.n == n).collect();
            let mut errs: Vec<f64> = cell_rows.iter().map(|r| r.rel_err).collect();
            errs.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
            let mean_k = cell_rows.iter().map(|r| r.k as f64).sum::<f64>() / cell_rows.len() as f64;
            rows.push(SummaryRow {
                rule: label.clone(),
                n,
                replications: reps,
                median_err: lower_median(&errs),
                q25: nearest_rank(&errs, 0.25),
                q75: nearest_rank(&errs, 0.75),
                min: errs[0],
                max: errs[errs.len() - 1],
                mean_k,
                seed: config.master_seed,
            });
        }
    }
    rows.sort_by(|a, b| (a.rule.as_str(), a.n).cmp(&(b.rule.as_str(), b.n)));
    Ok(RiskTable { rows, raw })
}

/// Sibling path with `_raw` before the extension.
pub fn raw_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy())
        .unwrap_or_default();
    let ext = path
        .extension()
        .map(|e| format!(".{}", e.to_string_lossy()))
        .unwrap_or_default();
    path.with_file_name(format!("{stem}_raw{ext}"))
}

/// Writes the summary table to `path` and the raw replication table to
/// the companion `*_raw` file. Six significant digits throughout.
pub fn emit_csv(table: &RiskTable, path: &Path) -> Result<()> {
    let mut out = String::from("rule,n,R,median_err,q25,q75,min,max,mean_k,seed\n");
    for r in &table.rows {
        writeln!(
            out,
            "{},{},{},{:.5e},{:.5e},{:.5e},{:.5e},{:.5e},{:.5e},{}",
            r.rule, r.n, r.replications, r.median_err, r.q25, r.q75, r.min, r.max, r.mean_k, r.seed
        )
        .expect("string write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))?;
    write_raw(&table.raw, &raw_path(path))
}

fn write_raw(raw: &[RawRow], path: &Path) -> Result<()> {
    let mut out = String::from("rule,n,rep,rel_err,k\n");
    for r in raw {
        writeln!(
            out,
            "{},{},{},{:.5e},{}",
            r.rule, r.n, r.rep, r.rel_err, r.k
        )
        .expect("string write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::SourceProfile;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            problem: ProblemSpec::Diagonal {
                m: 20,
                q: 2.0,
                scale: 1.0,
                nu: 1.0,
                rho: 1.0,
                profile: SourceProfile::Flat(10),
            },
            noise: NoiseSpec::Gaussian { c: 1.0, p: 2.0 },
            n_list: vec![50, 100],
            replications: 5,
            rules: vec![
                RuleSpec::Plain { tau: 1.0 },
                RuleSpec::Adaptive {
                    eps1: 0.5,
                    eps2: 0.5,
                    tau: 1.0,
                },
                RuleSpec::Oracle,
            ],
            master_seed: 7,
            delta_mode: DeltaMode::Sample,
            threads: 0,
            out: None,
        }
    }

    #[test]
    fn replication_is_deterministic() {
        let config = small_config();
        let prep = prepare(&config).unwrap();
        let rule = RuleSpec::Plain { tau: 1.0 };
        let a = run_replication(&prep, &config, 50, &rule, 3).unwrap();
        let b = run_replication(&prep, &config, 50, &rule, 3).unwrap();
        assert_eq!(a.rel_err, b.rel_err);
        assert_eq!(a.k, b.k);
    }

    #[test]
    fn rules_get_distinct_streams() {
        let config = small_config();
        let prep = prepare(&config).unwrap();
        let plain = RuleSpec::Plain { tau: 1.0 };
        let adaptive = RuleSpec::Adaptive {
            eps1: 0.5,
            eps2: 0.5,
            tau: 1.0,
        };
        let a = run_replication(&prep, &config, 50, &plain, 0).unwrap();
        let b = run_replication(&prep, &config, 50, &adaptive, 0).unwrap();
        // Different batches: equal outcomes would need a coincidence of
        // both k and the realised error.
        assert!(a.rel_err != b.rel_err || a.k != b.k);
    }

    #[test]
    fn zero_noise_oracle_error_is_truncation_bias() {
        let mut config = small_config();
        config.noise = NoiseSpec::Gaussian { c: 0.0, p: 2.0 };
        config.rules = vec![RuleSpec::Oracle];
        let prep = prepare(&config).unwrap();
        let r = eval_cell(&prep, &config, 50, &OutputRule::OracleExact, 0).unwrap();
        // Flat(10) source on m = 20: no bias beyond k = 10, zero risk.
        assert_eq!(r.k, 10);
        assert!(r.rel_err.abs() < 1e-12);
    }

    #[test]
    fn experiment_shapes_and_median_rules() {
        let config = small_config();
        let table = run_experiment(&config).unwrap();
        // plain, algorithm1, oracle_exact, oracle_empirical over two n.
        assert_eq!(table.rows.len(), 4 * 2);
        assert_eq!(table.raw.len(), 4 * 2 * 5);
        for row in &table.rows {
            assert!(row.q25 <= row.median_err && row.median_err <= row.q75);
            assert!(row.min <= row.q25 && row.q75 <= row.max);
            assert!(row.median_err >= 0.0);
        }
    }

    #[test]
    fn nearest_rank_examples() {
        // R = 3 with errors {0.1, 0.2, 0.9}: median 0.2, q25 0.1, q75 0.9.
        let sorted = [0.1, 0.2, 0.9];
        assert_eq!(lower_median(&sorted), 0.2);
        assert_eq!(nearest_rank(&sorted, 0.25), 0.1);
        assert_eq!(nearest_rank(&sorted, 0.75), 0.9);
        // Single replication: every statistic is that value.
        let one = [0.4];
        assert_eq!(lower_median(&one), 0.4);
        assert_eq!(nearest_rank(&one, 0.25), 0.4);
        assert_eq!(nearest_rank(&one, 0.75), 0.4);
        // Even count: lower median.
        let four = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(lower_median(&four), 2.0);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let mut config = small_config();
        config.threads = 1;
        let a = run_experiment(&config).unwrap();
        config.threads = 4;
        let b = run_experiment(&config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_emission_round_trip() {
        let config = small_config();
        let table = run_experiment(&config).unwrap();
        let dir = std::env::temp_dir().join("specstop_harness_csv");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("table.csv");
        emit_csv(&table, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "rule,n,R,median_err,q25,q75,min,max,mean_k,seed"
        );
        let first = lines.next().unwrap();
        let fields: Vec<&str> = first.split(',').collect();
        assert_eq!(fields.len(), 10);
        let median: f64 = fields[3].parse().unwrap();
        let row = &table.rows[0];
        assert_eq!(format!("{:.5e}", row.median_err), fields[3]);
        assert!((median - row.median_err).abs() <= 1e-5 * row.median_err.max(1e-300));

        let raw_text = std::fs::read_to_string(raw_path(&path)).unwrap();
        assert_eq!(raw_text.lines().count(), 1 + table.raw.len());
    }

    #[test]
    fn empty_rule_table_is_header_only() {
        let table = RiskTable {
            rows: vec![],
            raw: vec![],
        };
        let dir = std::env::temp_dir().join("specstop_harness_empty");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("empty.csv");
        emit_csv(&table, &path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "rule,n,R,median_err,q25,q75,min,max,mean_k,seed\n"
        );
    }
}
