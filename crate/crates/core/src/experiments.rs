//! Preset experiments with their pass/fail checks.
//!
//! * `exp1`: ideal storage balancing IID Laplace imbalance, where greedy is
//!   optimal and OMG must land within its certificate.
//! * `exp2`: lossy, leaky storage with a deficit penalty tripled during the
//!   day, where OMG must beat greedy.
//! * `exp3-synthetic`: a storage co-located with a synthetic wind farm,
//!   checked for the ordering clairvoyant <= OMG <= greedy <= no storage.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;

use crate::clairvoyant::DpGrids;
use crate::config::{ConfigFile, ConfigError, SimSection};
use crate::cost::{CostSpec, RateSchedule, SupportBounds};
use crate::process::{Distribution, IidSpec, ProcessSpec, WindPriceSpec};
use crate::sim::{compare, paired, run, Comparison, PolicySpec, SimError, SimResult};
use crate::storage::{InflowSet, StorageParams};
use crate::tuning::{TuneMethod, TuneOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Experiment {
    #[serde(rename = "exp1")]
    Exp1,
    #[serde(rename = "exp2")]
    Exp2,
    #[serde(rename = "exp3-synthetic")]
    Exp3Synthetic,
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exp1" => Ok(Experiment::Exp1),
            "exp2" => Ok(Experiment::Exp2),
            "exp3-synthetic" | "exp3" => Ok(Experiment::Exp3Synthetic),
            other => Err(format!("unknown experiment `{other}` (expected exp1, exp2 or exp3-synthetic)")),
        }
    }
}

impl std::fmt::Display for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Experiment::Exp1 => "exp1",
            Experiment::Exp2 => "exp2",
            Experiment::Exp3Synthetic => "exp3-synthetic",
        })
    }
}

/// Level range of the per-unit experiments.
const UNIT_S_MAX: f64 = 1.0;
const LAPLACE_SIGMA: f64 = 0.149;
/// Imbalance support of the per-unit experiments, about ten standard deviations.
const LAPLACE_CLIP: f64 = 1.5;
const WIND_SIGMA: f64 = 20.1;

fn unit_process() -> ProcessSpec {
    ProcessSpec::Iid(IidSpec {
        delta: Distribution::Laplace {
            mean: 0.0,
            sigma: LAPLACE_SIGMA,
        },
        price: Distribution::PointMass { value: 1.0 },
        joint: None,
        supports: SupportBounds::new((-LAPLACE_CLIP, LAPLACE_CLIP), (1.0, 1.0)),
    })
}

impl Experiment {
    pub fn default_seed(&self) -> u64 {
        2024
    }

    pub fn default_replications(&self) -> u32 {
        match self {
            Experiment::Exp1 | Experiment::Exp2 => 50,
            Experiment::Exp3Synthetic => 30,
        }
    }

    /// The preset as a configuration file.
    pub fn config(&self) -> ConfigFile {
        let sim = SimSection {
            horizon: 1000,
            s1: Some(0.5 * UNIT_S_MAX),
            seed: self.default_seed(),
            replications: self.default_replications(),
            keep_trajectory: false,
        };
        match self {
            Experiment::Exp1 => ConfigFile {
                storage: StorageParams {
                    lambda: 1.0,
                    s_min: 0.0,
                    s_max: UNIT_S_MAX,
                    u_min: -UNIT_S_MAX / 10.0,
                    u_max: UNIT_S_MAX / 10.0,
                    mu_c: 1.0,
                    mu_d: 1.0,
                },
                cost: CostSpec::Balancing {
                    q_plus: RateSchedule::Constant(1.0),
                    q_minus: RateSchedule::Constant(1.0),
                },
                inflow: InflowSet::default(),
                process: unit_process(),
                policies: vec![
                    PolicySpec::omg(TuneMethod::MaxWeight),
                    PolicySpec::Greedy { name: None },
                    PolicySpec::NoStorage { name: None },
                ],
                sim,
                imbalance_sign: 1,
                steps_per_hour: 1,
                tune: TuneOptions::default(),
            },
            Experiment::Exp2 => ConfigFile {
                storage: StorageParams {
                    lambda: 0.9975,
                    s_min: 0.0,
                    s_max: UNIT_S_MAX,
                    u_min: -UNIT_S_MAX / 10.0,
                    u_max: UNIT_S_MAX / 10.0,
                    mu_c: 0.85,
                    mu_d: 0.85,
                },
                cost: CostSpec::DayNightDeficit {
                    day_multiplier: 3.0,
                    base_rate: 1.0,
                },
                inflow: InflowSet::default(),
                process: unit_process(),
                policies: vec![
                    PolicySpec::omg(TuneMethod::MaxWeight),
                    PolicySpec::omg(TuneMethod::MinBound),
                    PolicySpec::Greedy { name: None },
                    PolicySpec::NoStorage { name: None },
                ],
                sim,
                imbalance_sign: 1,
                // five-minute steps
                steps_per_hour: 12,
                tune: TuneOptions::default(),
            },
            Experiment::Exp3Synthetic => {
                let s_max = 5.0 * WIND_SIGMA;
                ConfigFile {
                    storage: StorageParams {
                        lambda: 1.0,
                        s_min: 0.0,
                        s_max,
                        u_min: -s_max / 20.0,
                        u_max: s_max / 20.0,
                        mu_c: 1.0,
                        mu_d: 1.0,
                    },
                    cost: CostSpec::CoLocated {},
                    inflow: InflowSet::default(),
                    process: ProcessSpec::WindPrice(WindPriceSpec {
                        sigma_delta: WIND_SIGMA,
                        ..WindPriceSpec::default()
                    }),
                    policies: vec![
                        PolicySpec::omg(TuneMethod::MaxWeight),
                        PolicySpec::Greedy { name: None },
                        PolicySpec::NoStorage { name: None },
                        PolicySpec::Clairvoyant {
                            grids: DpGrids::default(),
                            name: None,
                        },
                    ],
                    sim: SimSection {
                        horizon: 360,
                        s1: Some(0.5 * s_max),
                        ..sim
                    },
                    imbalance_sign: 1,
                    steps_per_hour: 1,
                    tune: TuneOptions::default(),
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Check {
            name: name.into(),
            passed,
            detail,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub experiment: Experiment,
    pub note: Option<String>,
    pub result: SimResult,
    pub comparison: Comparison,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Plain-text comparison table followed by the checks.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let ns = self.result.j_no_storage;
        let _ = writeln!(out, "{}: {} replications, T = {}, seed {}", self.experiment, self.result.replications, self.result.horizon, self.result.seed);
        if let Some(note) = &self.note {
            let _ = writeln!(out, "note: {note}");
        }
        let _ = writeln!(
            out,
            "{:<14} {:>12} {:>10} {:>8} {:>10} {:>22}",
            "policy", "J", "SE", "% of ns", "bound", "VoS interval"
        );
        for row in &self.comparison.ranking {
            let j = row.mean.unwrap_or(f64::NAN);
            let pct = if ns != 0.0 { 100.0 * j / ns } else { f64::NAN };
            let bound = row.certified_bound.map_or("-".to_string(), |b| format!("{b:.6}"));
            let vos = row.vos.map_or("-".to_string(), |v| format!("[{:.4}, {:.4}]", v.lo, v.hi));
            let _ = writeln!(
                out,
                "{:<14} {:>12.6} {:>10.6} {:>8.2} {:>10} {:>22}",
                row.name,
                j,
                row.se.unwrap_or(f64::NAN),
                pct,
                bound,
                vos
            );
        }
        for c in &self.checks {
            let _ = writeln!(out, "[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        out
    }
}

/// Runs a preset, optionally overriding seed and replication count.
pub fn reproduce(exp: Experiment, seed: Option<u64>, replications: Option<u32>) -> Result<Report, ConfigError> {
    let mut cfg = exp.config();
    if let Some(s) = seed {
        cfg.sim.seed = s;
    }
    if let Some(r) = replications {
        cfg.sim.replications = r;
    }
    let config = cfg.to_sim_config()?;
    let result = run(&config)?;
    Ok(evaluate(exp, result)?)
}

fn mean(result: &SimResult, name: &str) -> Result<f64, SimError> {
    result
        .policy(name)
        .and_then(|p| p.mean)
        .ok_or_else(|| SimError::UnknownPolicy(name.into()))
}

fn violations_check(result: &SimResult) -> Check {
    let total: u64 = result.policies.iter().map(|p| p.violations).sum();
    Check::new("no level violations", total == 0, format!("{total} aborted replications"))
}

/// Applies the preset's acceptance inequalities to a finished run.
pub fn evaluate(exp: Experiment, result: SimResult) -> Result<Report, SimError> {
    let comparison = compare(&[&result])?;
    let mut checks = vec![violations_check(&result)];
    let mut note = None;
    match exp {
        Experiment::Exp1 => {
            let omg = "omg-maxw";
            let bound = result.policy(omg).and_then(|p| p.certified_bound).unwrap_or(f64::NAN);
            let d = paired(&result, omg, "greedy")?;
            let (j_omg, j_greedy) = (mean(&result, omg)?, mean(&result, "greedy")?);
            checks.push(Check::new(
                "greedy is no worse than OMG",
                j_greedy <= j_omg + 3.0 * d.se,
                format!("J(greedy) = {j_greedy:.6} <= J(OMG) + 3 SE = {:.6}", j_omg + 3.0 * d.se),
            ));
            checks.push(Check::new(
                "OMG within its certificate of greedy",
                j_omg <= j_greedy + bound + 3.0 * d.se,
                format!(
                    "J(OMG) = {j_omg:.6} <= J(greedy) + M/W + 3 SE = {:.6} (M/W = {bound:.6})",
                    j_greedy + bound + 3.0 * d.se
                ),
            ));
        }
        Experiment::Exp2 => {
            let omg = "omg-maxw";
            let bound = result.policy(omg).and_then(|p| p.certified_bound).unwrap_or(f64::NAN);
            let d = paired(&result, omg, "greedy")?;
            let (j_omg, j_greedy) = (mean(&result, omg)?, mean(&result, "greedy")?);
            checks.push(Check::new(
                "OMG cheaper than greedy on average",
                j_omg < j_greedy,
                format!("J(OMG) = {j_omg:.6} < J(greedy) = {j_greedy:.6}"),
            ));
            checks.push(Check::new(
                "sign test favours OMG",
                d.a_better > d.b_better && d.sign_test_p < 0.05,
                format!("OMG cheaper on {}/{} seeds, p = {:.3e}", d.a_better, d.deltas.len(), d.sign_test_p),
            ));
            let worst = d.deltas.iter().fold(f64::NEG_INFINITY, |m, x| m.max(*x));
            checks.push(Check::new(
                "J(OMG) - M/W <= J(greedy) on every seed",
                d.deltas.len() == result.replications as usize && d.deltas.iter().all(|x| *x - bound <= 0.0),
                format!("max per-seed J(OMG) - J(greedy) = {worst:.6}, M/W = {bound:.6}"),
            ));
        }
        Experiment::Exp3Synthetic => {
            note = Some(
                "synthetic wind/price traces: orderings and bounds are meaningful, absolute cost levels are not".to_string(),
            );
            let omg = "omg-maxw";
            let bound = result.policy(omg).and_then(|p| p.certified_bound).unwrap_or(f64::NAN);
            let ns = result.j_no_storage;
            // DP grid slack: 1% of the no-storage cost.
            let slack = 0.01 * ns;
            let j = |n: &str| mean(&result, n);
            let (jc, jo, jg, jn) = (j("clairvoyant")?, j(omg)?, j("greedy")?, j("no-storage")?);
            let se = |a: &str, b: &str| paired(&result, a, b).map(|d| d.se);
            let (se_co, se_og, se_gn) = (se("clairvoyant", omg)?, se(omg, "greedy")?, se("greedy", "no-storage")?);
            checks.push(Check::new(
                "clairvoyant <= OMG",
                jc <= jo + 3.0 * se_co + slack,
                format!("{jc:.4} <= {jo:.4} + 3 SE + slack = {:.4}", jo + 3.0 * se_co + slack),
            ));
            checks.push(Check::new(
                "OMG <= greedy",
                jo <= jg + 3.0 * se_og,
                format!("{jo:.4} <= {jg:.4} + 3 SE = {:.4}", jg + 3.0 * se_og),
            ));
            checks.push(Check::new(
                "greedy <= no storage",
                jg <= jn + 3.0 * se_gn,
                format!("{jg:.4} <= {jn:.4} + 3 SE = {:.4}", jn + 3.0 * se_gn),
            ));
            let vos = ns - jc;
            let (lo, hi) = (ns - jo, ns - jo + bound);
            checks.push(Check::new(
                "VoS interval contains J(ns) - J(clairvoyant)",
                vos >= lo - slack - 3.0 * se_co && vos <= hi + slack + 3.0 * se_co,
                format!(
                    "J(ns) - J(clairvoyant) = {vos:.4} vs [{lo:.4}, {hi:.4}] (+- slack {slack:.4} and 3 SE {:.4})",
                    3.0 * se_co
                ),
            ));
        }
    }
    Ok(Report {
        experiment: exp,
        note,
        result,
        comparison,
        checks,
    })
}
