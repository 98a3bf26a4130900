//! The bundled acceptance suite: one entry per criterion, each a list of
//! bundled experiment configs whose claims must all pass.

use crate::experiments::{derived_seed, run_experiment, ClaimResult, ExperimentConfig, ExperimentError, ExperimentReport};

pub const BUNDLED: &[(&str, &str)] = &[
    ("kd_uniform", include_str!("../configs/kd_uniform.cfg")),
    ("kd_t_over_d", include_str!("../configs/kd_t_over_d.cfg")),
    ("kd_rate", include_str!("../configs/kd_rate.cfg")),
    ("complete_like_leaf_vrrw", include_str!("../configs/complete_like_leaf_vrrw.cfg")),
    ("complete_like_leaf_finite", include_str!("../configs/complete_like_leaf_finite.cfg")),
    ("d_partite_limit", include_str!("../configs/d_partite_limit.cfg")),
    ("d_partite_dirichlet", include_str!("../configs/d_partite_dirichlet.cfg")),
    ("d_partite_leaf_vrrw", include_str!("../configs/d_partite_leaf_vrrw.cfg")),
    ("mixture", include_str!("../configs/mixture.cfg")),
    ("engines", include_str!("../configs/engines.cfg")),
    ("markov_identities", include_str!("../configs/markov_identities.cfg")),
    ("hj_algebra", include_str!("../configs/hj_algebra.cfg")),
    ("martingale", include_str!("../configs/martingale.cfg")),
    ("k3_anomaly", include_str!("../configs/k3_anomaly.cfg")),
];

pub fn bundled_config(name: &str) -> Option<Result<ExperimentConfig, ExperimentError>> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| ExperimentConfig::parse(text))
}

#[derive(Clone, Copy, Debug)]
pub struct Criterion {
    pub number: u32,
    pub name: &'static str,
    pub configs: &'static [&'static str],
}

pub const CRITERIA: &[Criterion] = &[
    Criterion { number: 1, name: "uniform limit on K_d", configs: &["kd_uniform"] },
    Criterion { number: 2, name: "deterministic limit of T_i - t/d", configs: &["kd_t_over_d"] },
    Criterion { number: 3, name: "rate exponent for d > 3", configs: &["kd_rate"] },
    Criterion { number: 4, name: "leaf growth exponent", configs: &["complete_like_leaf_vrrw"] },
    Criterion { number: 5, name: "complete-like leaf finiteness", configs: &["complete_like_leaf_finite"] },
    Criterion { number: 6, name: "d-partite limits", configs: &["d_partite_limit", "d_partite_dirichlet"] },
    Criterion { number: 7, name: "d-partite leaf log-exponent", configs: &["d_partite_leaf_vrrw"] },
    Criterion { number: 8, name: "mixture theorem", configs: &["mixture"] },
    Criterion { number: 9, name: "engine equivalence", configs: &["engines"] },
    Criterion { number: 10, name: "Markov-chain identities", configs: &["markov_identities"] },
    Criterion { number: 11, name: "H/J algebra", configs: &["hj_algebra"] },
    Criterion { number: 12, name: "stochastic-approximation decomposition", configs: &["martingale"] },
    Criterion { number: 13, name: "K_3 anomaly (trend evidence)", configs: &["k3_anomaly"] },
];

#[derive(Clone, Debug)]
pub struct CriterionOutcome {
    pub criterion: Criterion,
    pub passed: bool,
    /// Claims that passed only on the repeat with a fresh seed.
    pub retried: Vec<String>,
    pub claims: Vec<ClaimResult>,
    pub reports: Vec<ExperimentReport>,
    pub error: Option<String>,
}

impl CriterionOutcome {
    pub fn line(&self) -> String {
        let status = if self.passed { "PASS" } else { "FAIL" };
        let mut parts: Vec<String> = self
            .claims
            .iter()
            .map(|c| {
                let tol = c.tolerance.map(|t| format!(" tol {t:e}")).unwrap_or_default();
                format!("{}={:.4e}{tol} {:?}", c.id, c.estimate, c.verdict)
            })
            .collect();
        if !self.retried.is_empty() {
            parts.push(format!("passed on repeat: {}", self.retried.join(",")));
        }
        if let Some(e) = &self.error {
            parts.push(format!("error: {e}"));
        }
        format!(
            "criterion {:>2} {status} {}: {}",
            self.criterion.number,
            self.criterion.name,
            parts.join("; ")
        )
    }
}

/// Run one config; a run whose only failures are statistical claims is
/// repeated once with a derived seed, and those claims fail only if they
/// fail again.
pub fn run_with_retry(cfg: &ExperimentConfig) -> Result<(Vec<ClaimResult>, Vec<String>, Vec<ExperimentReport>), ExperimentError> {
    let first = run_experiment(cfg)?;
    let mut claims = first.body.claims.clone();
    let mut reports = vec![first.clone()];
    let failed: Vec<usize> = (0..claims.len()).filter(|&k| !claims[k].passed()).collect();
    let mut retried = Vec::new();
    if !failed.is_empty() && !first.body.truncated && failed.iter().all(|&k| claims[k].kind.is_statistical()) {
        let second = run_experiment(&cfg.with_seed(derived_seed(cfg.experiment.seed, 1)))?;
        for &k in &failed {
            if second.body.claims[k].passed() {
                retried.push(claims[k].id.clone());
            }
            claims[k] = second.body.claims[k].clone();
        }
        reports.push(second);
    }
    Ok((claims, retried, reports))
}

pub fn run_criterion(c: &Criterion) -> CriterionOutcome {
    let mut out = CriterionOutcome {
        criterion: *c,
        passed: true,
        retried: Vec::new(),
        claims: Vec::new(),
        reports: Vec::new(),
        error: None,
    };
    for name in c.configs {
        let res = bundled_config(name)
            .expect("criterion references a bundled config")
            .and_then(|cfg| run_with_retry(&cfg));
        match res {
            Ok((claims, retried, reports)) => {
                out.passed &= reports.last().is_some_and(|r| !r.body.truncated) && claims.iter().all(ClaimResult::passed);
                out.claims.extend(claims);
                out.retried.extend(retried);
                out.reports.extend(reports);
            }
            Err(e) => {
                out.passed = false;
                out.error = Some(e.to_string());
            }
        }
    }
    out
}

pub fn run_all() -> Vec<CriterionOutcome> {
    CRITERIA.iter().map(run_criterion).collect()
}
