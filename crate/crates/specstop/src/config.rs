//! Flat key=value run configuration.
//!
//! Unknown keys are errors so that typos never silently fall back to
//! defaults. The schema is documented in the README.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::rates::SourceProfile;

/// Master seed used when a config does not pin one.
pub const DEFAULT_MASTER_SEED: u64 = 20260810;

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSpec {
    Diagonal {
        m: usize,
        q: f64,
        scale: f64,
        nu: f64,
        rho: f64,
        profile: SourceProfile,
    },
    Deriv2 {
        m: usize,
        case: u8,
        symmetrize: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSpec {
    Gaussian { c: f64, p: f64 },
    Rademacher { c: f64, p: f64 },
    Gpd { shape: f64, scale: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum RuleSpec {
    Plain {
        tau: f64,
    },
    KnownP {
        p: f64,
        eps: f64,
        tau: f64,
    },
    Adaptive {
        eps1: f64,
        eps2: f64,
        tau: f64,
    },
    APriori {
        nu: f64,
        rho: f64,
        /// Defaults to the problem's decay exponent.
        q: Option<f64>,
        /// Defaults to the noise profile exponent.
        p: Option<f64>,
    },
    /// Expands to both the exact-risk and the empirical oracle rows.
    Oracle,
}

impl RuleSpec {
    /// Stable label used in output rows. Adaptive variants carry their
    /// eps2 so several can coexist in one run.
    pub fn label(&self) -> String {
        match self {
            RuleSpec::Plain { .. } => "plain".into(),
            RuleSpec::KnownP { .. } => "known_p".into(),
            RuleSpec::Adaptive { eps2, .. } => format!("algorithm1_eps2_{eps2}"),
            RuleSpec::APriori { .. } => "a_priori".into(),
            RuleSpec::Oracle => "oracle".into(),
        }
    }

    /// Kind tag entering stream derivation. Variants of the same rule see
    /// the same data; distinct rules get independent streams.
    pub fn kind(&self) -> &'static str {
        match self {
            RuleSpec::Plain { .. } => "plain",
            RuleSpec::KnownP { .. } => "known_p",
            RuleSpec::Adaptive { .. } => "algorithm1",
            RuleSpec::APriori { .. } => "a_priori",
            RuleSpec::Oracle => "oracle",
        }
    }
}

/// Which data-error estimate the residual is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeltaMode {
    /// √(Σ_j s²_j / n), the sample-based estimate.
    Sample,
    /// 1/√n.
    Simple,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub noise: NoiseSpec,
    pub n_list: Vec<usize>,
    pub replications: usize,
    pub rules: Vec<RuleSpec>,
    pub master_seed: u64,
    pub delta_mode: DeltaMode,
    /// 0 lets the runtime pick.
    pub threads: usize,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    /// The benchmark configuration: symmetrised second-derivative problem,
    /// heavy-tailed right-hand-side noise, plain vs adaptive rules.
    fn default() -> Self {
        ExperimentConfig {
            problem: ProblemSpec::Deriv2 {
                m: 200,
                case: 1,
                symmetrize: true,
            },
            noise: NoiseSpec::Gpd {
                shape: 0.2,
                scale: crate::noise::gpd_unit_variance_scale(0.2),
            },
            n_list: vec![50, 500, 5000],
            replications: 50,
            rules: vec![
                RuleSpec::Plain { tau: 1.0 },
                RuleSpec::Adaptive {
                    eps1: 0.5,
                    eps2: 0.5,
                    tau: 1.0,
                },
                RuleSpec::Adaptive {
                    eps1: 0.5,
                    eps2: 0.1,
                    tau: 1.0,
                },
                RuleSpec::Oracle,
            ],
            master_seed: DEFAULT_MASTER_SEED,
            delta_mode: DeltaMode::Sample,
            threads: 0,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.n_list.is_empty() {
            return Err(Error::Config("n_list must not be empty".into()));
        }
        for w in self.n_list.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Config("n_list must be strictly increasing".into()));
            }
        }
        if self.n_list[0] < 2 {
            return Err(Error::Config("every n must be at least 2".into()));
        }
        if self.rules.is_empty() {
            return Err(Error::Config("at least one rule is required".into()));
        }
        let mut labels: Vec<String> = self.rules.iter().map(|r| r.label()).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != self.rules.len() {
            return Err(Error::Config("duplicate rule labels".into()));
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_str(&text)
    }

    pub fn from_str(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        Self::from_pairs(&pairs)
    }

    fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut b = Builder::default();
        for (key, value) in pairs {
            b.apply(key, value)?;
        }
        b.finish()
    }
}

fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(idx) => &raw[..idx],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected key = value, got {raw:?}",
                lineno + 1
            )));
        };
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .map_err(|_| Error::Config(format!("{key}: expected a number, got {v:?}")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse::<usize>()
        .map_err(|_| Error::Config(format!("{key}: expected an integer, got {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true/false, got {v:?}"
        ))),
    }
}

pub fn parse_source_profile(v: &str) -> Result<SourceProfile> {
    let (name, arg) = v
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("source: expected kind:value, got {v:?}")))?;
    match name.trim() {
        "flat" => Ok(SourceProfile::Flat(parse_usize("source", arg.trim())?)),
        "single" => Ok(SourceProfile::SingleIndex(parse_usize(
            "source",
            arg.trim(),
        )?)),
        "geometric" => Ok(SourceProfile::Geometric(parse_f64("source", arg.trim())?)),
        "power" => Ok(SourceProfile::PowerLaw(parse_f64("source", arg.trim())?)),
        other => Err(Error::Config(format!("source: unknown profile {other:?}"))),
    }
}

/// Mutable accumulation of config keys with deferred validation.
#[derive(Debug)]
struct Builder {
    problem_kind: Option<String>,
    m: usize,
    q: f64,
    scale: f64,
    nu: f64,
    rho: f64,
    profile: SourceProfile,
    case: u8,
    symmetrize: bool,
    noise_kind: Option<String>,
    noise_c: f64,
    noise_p: f64,
    gpd_shape: f64,
    gpd_scale: Option<f64>,
    n_list: Option<Vec<usize>>,
    replications: Option<usize>,
    rules_text: Option<String>,
    eps1: f64,
    eps2: f64,
    tau: f64,
    p_known: f64,
    eps_known: f64,
    apriori_nu: f64,
    apriori_rho: f64,
    apriori_q: Option<f64>,
    apriori_p: Option<f64>,
    master_seed: u64,
    delta_mode: DeltaMode,
    threads: usize,
    out: Option<PathBuf>,
}

impl Default for Builder {
    fn default() -> Self {
        Builder {
            problem_kind: None,
            m: 200,
            q: 2.0,
            scale: 1.0,
            nu: 1.0,
            rho: 1.0,
            profile: SourceProfile::Flat(10),
            case: 1,
            symmetrize: true,
            noise_kind: None,
            noise_c: 1.0,
            noise_p: 2.0,
            gpd_shape: 0.2,
            gpd_scale: None,
            n_list: None,
            replications: None,
            rules_text: None,
            eps1: 0.5,
            eps2: 0.5,
            tau: 1.0,
            p_known: 2.0,
            eps_known: 0.1,
            apriori_nu: 1.0,
            apriori_rho: 1.0,
            apriori_q: None,
            apriori_p: None,
            master_seed: DEFAULT_MASTER_SEED,
            delta_mode: DeltaMode::Sample,
            threads: 0,
            out: None,
        }
    }
}

impl Builder {
    fn apply(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "problem" => self.problem_kind = Some(v.to_string()),
            "m" => self.m = parse_usize(key, v)?,
            "q" => self.q = parse_f64(key, v)?,
            "scale" => self.scale = parse_f64(key, v)?,
            "nu" => self.nu = parse_f64(key, v)?,
            "rho" => self.rho = parse_f64(key, v)?,
            "source" => self.profile = parse_source_profile(v)?,
            "case" => {
                self.case = v
                    .parse::<u8>()
                    .map_err(|_| Error::Config(format!("case: expected 1, 2 or 3, got {v:?}")))?
            }
            "symmetrize" => self.symmetrize = parse_bool(key, v)?,
            "noise" => self.noise_kind = Some(v.to_string()),
            "noise_c" => self.noise_c = parse_f64(key, v)?,
            "noise_p" => self.noise_p = parse_f64(key, v)?,
            "gpd_shape" => self.gpd_shape = parse_f64(key, v)?,
            "gpd_scale" => self.gpd_scale = Some(parse_f64(key, v)?),
            "n_list" => {
                let mut list = Vec::new();
                for item in v.split(',') {
                    list.push(parse_usize(key, item.trim())?);
                }
                self.n_list = Some(list);
            }
            "replications" => self.replications = Some(parse_usize(key, v)?),
            "rules" | "rule" => self.rules_text = Some(v.to_string()),
            "eps1" => self.eps1 = parse_f64(key, v)?,
            "eps2" => self.eps2 = parse_f64(key, v)?,
            "tau" => self.tau = parse_f64(key, v)?,
            "p_known" => self.p_known = parse_f64(key, v)?,
            "eps_known" => self.eps_known = parse_f64(key, v)?,
            "apriori_nu" => self.apriori_nu = parse_f64(key, v)?,
            "apriori_rho" => self.apriori_rho = parse_f64(key, v)?,
            "apriori_q" => self.apriori_q = Some(parse_f64(key, v)?),
            "apriori_p" => self.apriori_p = Some(parse_f64(key, v)?),
            "master_seed" => {
                self.master_seed = v
                    .parse::<u64>()
                    .map_err(|_| Error::Config(format!("master_seed: expected u64, got {v:?}")))?
            }
            "delta_mode" => {
                self.delta_mode = match v {
                    "sample" => DeltaMode::Sample,
                    "simple" => DeltaMode::Simple,
                    _ => {
                        return Err(Error::Config(format!(
                            "delta_mode: expected sample or simple, got {v:?}"
                        )))
                    }
                }
            }
            "threads" => self.threads = parse_usize(key, v)?,
            "out" => self.out = Some(PathBuf::from(v)),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    fn parse_rule(&self, item: &str) -> Result<RuleSpec> {
        let item = item.trim();
        let (name, args) = match item.split_once('(') {
            Some((name, rest)) => {
                let rest = rest
                    .strip_suffix(')')
                    .ok_or_else(|| Error::Config(format!("rule {item:?}: missing ')'")))?;
                (name.trim(), Some(rest))
            }
            None => (item, None),
        };
        let mut eps1 = self.eps1;
        let mut eps2 = self.eps2;
        let mut tau = self.tau;
        let mut p = self.p_known;
        let mut eps = self.eps_known;
        let mut nu = self.apriori_nu;
        let mut rho = self.apriori_rho;
        let mut q = self.apriori_q;
        let mut pp = self.apriori_p;
        if let Some(args) = args {
            for pair in args.split(',') {
                let pair = pair.trim();
                if pair.is_empty() {
                    continue;
                }
                let Some((k, v)) = pair.split_once('=') else {
                    return Err(Error::Config(format!(
                        "rule {item:?}: bad parameter {pair:?}"
                    )));
                };
                let (k, v) = (k.trim(), v.trim());
                match k {
                    "eps1" => eps1 = parse_f64(k, v)?,
                    "eps2" => eps2 = parse_f64(k, v)?,
                    "tau" => tau = parse_f64(k, v)?,
                    "p" => p = parse_f64(k, v)?,
                    "eps" => eps = parse_f64(k, v)?,
                    "nu" => nu = parse_f64(k, v)?,
                    "rho" => rho = parse_f64(k, v)?,
                    "q" => q = Some(parse_f64(k, v)?),
                    "noise_p" => pp = Some(parse_f64(k, v)?),
                    other => {
                        return Err(Error::Config(format!(
                            "rule {item:?}: unknown parameter {other:?}"
                        )))
                    }
                }
            }
        }
        match name {
            "plain" => Ok(RuleSpec::Plain { tau }),
            "known_p" => Ok(RuleSpec::KnownP { p, eps, tau }),
            "algorithm1" => Ok(RuleSpec::Adaptive { eps1, eps2, tau }),
            "a_priori" => Ok(RuleSpec::APriori { nu, rho, q, p: pp }),
            "oracle" => Ok(RuleSpec::Oracle),
            other => Err(Error::Config(format!("unknown rule {other:?}"))),
        }
    }

    fn finish(self) -> Result<ExperimentConfig> {
        let problem = match self.problem_kind.as_deref().unwrap_or("deriv2") {
            "diagonal" => ProblemSpec::Diagonal {
                m: self.m,
                q: self.q,
                scale: self.scale,
                nu: self.nu,
                rho: self.rho,
                profile: self.profile,
            },
            "deriv2" => ProblemSpec::Deriv2 {
                m: self.m,
                case: self.case,
                symmetrize: self.symmetrize,
            },
            other => return Err(Error::Config(format!("unknown problem kind {other:?}"))),
        };
        let noise = match self.noise_kind.as_deref().unwrap_or(match &problem {
            ProblemSpec::Deriv2 { .. } => "gpd_rhs",
            ProblemSpec::Diagonal { .. } => "gaussian_profile",
        }) {
            "gaussian_profile" => NoiseSpec::Gaussian {
                c: self.noise_c,
                p: self.noise_p,
            },
            "rademacher_profile" => NoiseSpec::Rademacher {
                c: self.noise_c,
                p: self.noise_p,
            },
            "gpd_rhs" => NoiseSpec::Gpd {
                shape: self.gpd_shape,
                scale: self
                    .gpd_scale
                    .unwrap_or_else(|| crate::noise::gpd_unit_variance_scale(self.gpd_shape)),
            },
            other => return Err(Error::Config(format!("unknown noise kind {other:?}"))),
        };
        let rules = match &self.rules_text {
            None => ExperimentConfig::default().rules,
            Some(text) => {
                let mut rules = Vec::new();
                for item in text.split(';') {
                    if item.trim().is_empty() {
                        continue;
                    }
                    rules.push(self.parse_rule(item)?);
                }
                rules
            }
        };
        let config = ExperimentConfig {
            problem,
            noise,
            n_list: self.n_list.unwrap_or_else(|| vec![50, 500, 5000]),
            replications: self.replications.unwrap_or(50),
            rules,
            master_seed: self.master_seed,
            delta_mode: self.delta_mode,
            threads: self.threads,
            out: self.out,
        };
        config.validate()?;
        Ok(config)
    }
}
