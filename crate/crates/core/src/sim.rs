//! Simulation engine: runs every policy on common disturbance draws,
//! aggregates costs across replications and compares policies pairwise.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};
use thiserror::Error;

use crate::clairvoyant::{clairvoyant_plan, DpGrids};
use crate::cost::{Calendar, CostError, CostSpec, StageContext, StageCost, SubgradientBounds, SupportBounds};
use crate::policy::{greedy_step, no_storage_step, omg_step, Decision};
use crate::process::{ProcessError, ProcessSpec, Realization};
use crate::storage::{InflowSet, Storage, StorageError, StorageState};
use crate::tuning::{tune, vos_interval, OmgParams, TuneError, TuneMethod, TuneOptions, VosInterval};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Process(#[from] ProcessError),
    #[error(transparent)]
    Tune(#[from] TuneError),
    #[error("results were produced with different seeds, replications or horizons")]
    MismatchedSeeds,
    #[error("unknown policy `{0}`")]
    UnknownPolicy(String),
    #[error("cannot build thread pool: {0}")]
    ThreadPool(String),
}

/// A policy as requested in a configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    Omg {
        #[serde(default = "default_method")]
        method: TuneMethod,
        /// Required together with `w` when `method` is `fixed`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gamma: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        w: Option<f64>,
        #[serde(default)]
        enforce_level_constraint: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
    Greedy {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
    NoStorage {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
    Clairvoyant {
        #[serde(default)]
        grids: DpGrids,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
}

fn default_method() -> TuneMethod {
    TuneMethod::MaxWeight
}

impl PolicySpec {
    pub fn omg(method: TuneMethod) -> Self {
        PolicySpec::Omg {
            method,
            gamma: None,
            w: None,
            enforce_level_constraint: false,
            name: None,
        }
    }

    pub fn name(&self) -> String {
        match self {
            PolicySpec::Omg { name: Some(n), .. }
            | PolicySpec::Greedy { name: Some(n) }
            | PolicySpec::NoStorage { name: Some(n) }
            | PolicySpec::Clairvoyant { name: Some(n), .. } => n.clone(),
            PolicySpec::Omg { method, .. } => format!("omg-{method}"),
            PolicySpec::Greedy { .. } => "greedy".into(),
            PolicySpec::NoStorage { .. } => "no-storage".into(),
            PolicySpec::Clairvoyant { .. } => "clairvoyant".into(),
        }
    }
}

/// A policy ready to run.
#[derive(Clone, Debug, PartialEq)]
pub enum PolicyKind {
    Omg {
        params: OmgParams,
        enforce_level_constraint: bool,
    },
    Greedy,
    NoStorage,
    Clairvoyant(DpGrids),
}

impl PolicyKind {
    fn label(&self) -> &'static str {
        match self {
            PolicyKind::Omg { .. } => "omg",
            PolicyKind::Greedy => "greedy",
            PolicyKind::NoStorage => "no_storage",
            PolicyKind::Clairvoyant(_) => "clairvoyant",
        }
    }
}

/// Everything needed for a run.
#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub storage: Storage,
    pub cost: CostSpec,
    pub inflow: InflowSet,
    pub process: ProcessSpec,
    pub policies: Vec<PolicySpec>,
    pub horizon: u64,
    pub s1: f64,
    pub seed: u64,
    pub replications: u32,
    pub calendar: Calendar,
    /// `-1` flips the sign of every imbalance draw before use.
    pub imbalance_sign: f64,
    pub tune: TuneOptions,
    /// Keep the per-step trajectory of replication 0.
    pub keep_trajectory: bool,
}

/// Outcome of the offline phase: supports, bounds and tuned policies.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub supports: SupportBounds,
    pub bounds: SubgradientBounds,
    pub policies: Vec<(String, PolicyKind)>,
}

impl SimConfig {
    /// Supports as seen by the cost, after the imbalance sign is applied.
    pub fn effective_supports(&self) -> Result<SupportBounds, SimError> {
        let mut s = self.process.supports()?;
        if self.imbalance_sign < 0.0 {
            (s.delta_min, s.delta_max) = (-s.delta_max, -s.delta_min);
        }
        s.check()?;
        Ok(s)
    }

    pub fn subgradient_bounds(&self) -> Result<SubgradientBounds, SimError> {
        let supports = self.effective_supports()?;
        Ok(self.cost.global_subgradient_bounds(&supports, &self.storage, &self.inflow)?)
    }

    /// Tunes OMG parameters once.
    pub fn tune(&self, method: TuneMethod) -> Result<OmgParams, SimError> {
        Ok(tune(&self.storage, &self.subgradient_bounds()?, method, &self.tune)?)
    }

    /// Validates the configuration and runs every tuner.
    pub fn prepare(&self) -> Result<Prepared, SimError> {
        if self.horizon == 0 {
            return Err(SimError::Config("horizon must be at least 1".into()));
        }
        if self.replications == 0 {
            return Err(SimError::Config("replications must be at least 1".into()));
        }
        if !self.storage.level_ok(self.s1) || !self.s1.is_finite() {
            return Err(SimError::Config(format!(
                "initial level {} outside [{}, {}]",
                self.s1, self.storage.s_min, self.storage.s_max
            )));
        }
        if self.imbalance_sign != 1.0 && self.imbalance_sign != -1.0 {
            return Err(SimError::Config("imbalance_sign must be 1 or -1".into()));
        }
        if !self.inflow.is_valid() {
            return Err(SimError::Config("inflow interval must be finite with f_min <= f_max".into()));
        }
        if self.policies.is_empty() {
            return Err(SimError::Config("no policies to run".into()));
        }
        self.process.check()?;
        if let Some(n) = self.process.horizon_limit() {
            if (n as u64) < self.horizon {
                return Err(ProcessError::TraceTooShort {
                    available: n,
                    needed: self.horizon,
                }
                .into());
            }
        }
        let supports = self.effective_supports()?;
        let bounds = self.cost.global_subgradient_bounds(&supports, &self.storage, &self.inflow)?;

        let mut policies: Vec<(String, PolicyKind)> = Vec::new();
        for spec in &self.policies {
            let name = spec.name();
            if policies.iter().any(|(n, _)| *n == name) {
                return Err(SimError::Config(format!("duplicate policy name `{name}`")));
            }
            let kind = match spec {
                PolicySpec::Omg {
                    method,
                    gamma,
                    w,
                    enforce_level_constraint,
                    ..
                } => {
                    let params = match (method, gamma, w) {
                        (TuneMethod::Fixed, Some(g), Some(w)) => OmgParams::fixed(&self.storage, bounds, *g, *w)?,
                        (TuneMethod::Fixed, _, _) => {
                            return Err(SimError::Config("fixed OMG parameters need both gamma and w".into()))
                        }
                        (m, None, None) => tune(&self.storage, &bounds, *m, &self.tune)?,
                        _ => return Err(SimError::Config("gamma and w are only accepted with method `fixed`".into())),
                    };
                    PolicyKind::Omg {
                        params,
                        enforce_level_constraint: *enforce_level_constraint,
                    }
                }
                PolicySpec::Greedy { .. } => PolicyKind::Greedy,
                PolicySpec::NoStorage { .. } => PolicyKind::NoStorage,
                PolicySpec::Clairvoyant { grids, .. } => {
                    if !grids.is_valid() {
                        return Err(SimError::Config("DP grids need at least 3 points each".into()));
                    }
                    PolicyKind::Clairvoyant(*grids)
                }
            };
            policies.push((name, kind));
        }
        Ok(Prepared {
            supports,
            bounds,
            policies,
        })
    }
}

/// Longer runs keep aggregates only.
pub const MAX_TRAJECTORY_STEPS: u64 = 100_000;

/// One step of a recorded trajectory; `s` is the level at the start of step `t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: u64,
    pub s: f64,
    pub u: f64,
    pub f: f64,
    pub delta: f64,
    pub price: f64,
    pub g: f64,
}

/// A replication aborted because the level left its box or the ramp was violated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Abort {
    pub replication: u32,
    pub t: u64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyResult {
    pub name: String,
    pub kind: String,
    /// Average cost per replication; `None` when the replication aborted.
    pub costs: Vec<Option<f64>>,
    pub mean: Option<f64>,
    /// Standard error of the mean across completed replications.
    pub se: Option<f64>,
    pub violations: u64,
    pub aborted: Vec<Abort>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<OmgParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certified_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vos: Option<VosInterval>,
    #[serde(skip_serializing, default)]
    pub trajectory: Option<Vec<TrajectoryRow>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub seed: u64,
    pub replications: u32,
    pub horizon: u64,
    pub supports: SupportBounds,
    pub subgradient_bounds: SubgradientBounds,
    /// Average cost of never operating the storage, per replication.
    pub no_storage_costs: Vec<f64>,
    pub j_no_storage: f64,
    pub policies: Vec<PolicyResult>,
}

impl SimResult {
    pub fn policy(&self, name: &str) -> Option<&PolicyResult> {
        self.policies.iter().find(|p| p.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("results serialize")
    }
}

/// Mean and standard error of a sample.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

struct RepOutcome {
    cost: Option<f64>,
    violation: Option<Abort>,
    trajectory: Option<Vec<TrajectoryRow>>,
}

fn contexts(config: &SimConfig, draws: &[Realization]) -> Vec<StageContext> {
    draws
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut ctx = config.calendar.context(i as u64 + 1, config.imbalance_sign * r.delta, r.price);
            ctx.q_plus = r.q_plus;
            ctx.q_minus = r.q_minus;
            ctx
        })
        .collect()
}

fn simulate_policy(config: &SimConfig, kind: &PolicyKind, ctxs: &[StageContext], replication: u32, record: bool) -> RepOutcome {
    let storage = &config.storage;
    let cost: &dyn StageCost = &config.cost;
    let plan = match kind {
        PolicyKind::Clairvoyant(grids) => Some(clairvoyant_plan(config.s1, ctxs, cost, storage, &config.inflow, grids)),
        _ => None,
    };
    let mut state = StorageState::initial(config.s1);
    let mut total = 0.0;
    let mut rows = record.then(Vec::new);
    for (i, ctx) in ctxs.iter().enumerate() {
        let d: Decision = match kind {
            PolicyKind::Omg {
                params,
                enforce_level_constraint,
            } => omg_step(state.s, ctx, cost, storage, &config.inflow, params, *enforce_level_constraint),
            PolicyKind::Greedy => greedy_step(state.s, ctx, cost, storage, &config.inflow),
            PolicyKind::NoStorage => no_storage_step(ctx, cost, storage, &config.inflow),
            PolicyKind::Clairvoyant(_) => plan.as_ref().expect("plan")[i],
        };
        let g = cost.evaluate(d.u, d.f, ctx, storage);
        if let Some(rows) = rows.as_mut() {
            rows.push(TrajectoryRow {
                t: ctx.t,
                s: state.s,
                u: d.u,
                f: d.f,
                delta: ctx.delta,
                price: ctx.price,
                g,
            });
        }
        let abort = |reason: String| RepOutcome {
            cost: None,
            violation: Some(Abort {
                replication,
                t: ctx.t,
                reason,
            }),
            trajectory: None,
        };
        match storage.step(state, d.u) {
            Ok(next) if storage.level_ok(next.s) => state = next,
            Ok(next) => return abort(format!("level {} left [{}, {}]", next.s, storage.s_min, storage.s_max)),
            Err(e) => return abort(e.to_string()),
        }
        total += g;
    }
    RepOutcome {
        cost: Some(total / ctxs.len() as f64),
        violation: None,
        trajectory: rows,
    }
}

/// Runs the configuration on the global rayon pool.
pub fn run(config: &SimConfig) -> Result<SimResult, SimError> {
    let prepared = config.prepare()?;
    let reps: Vec<u32> = (0..config.replications).collect();
    let outcomes = reps
        .par_iter()
        .map(|&r| -> Result<(f64, Vec<RepOutcome>), SimError> {
            let draws = config.process.stream(config.seed, u64::from(r))?.take_realizations(config.horizon)?;
            let ctxs = contexts(config, &draws);
            let baseline = simulate_policy(config, &PolicyKind::NoStorage, &ctxs, r, false)
                .cost
                .expect("idle operation is always feasible");
            let per_policy = prepared
                .policies
                .iter()
                .map(|(_, kind)| simulate_policy(config, kind, &ctxs, r, config.keep_trajectory && r == 0 && config.horizon <= MAX_TRAJECTORY_STEPS))
                .collect();
            Ok((baseline, per_policy))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let no_storage_costs: Vec<f64> = outcomes.iter().map(|(b, _)| *b).collect();
    let (j_no_storage, _) = mean_se(&no_storage_costs);
    let mut outcomes: Vec<Vec<RepOutcome>> = outcomes.into_iter().map(|(_, o)| o).collect();

    let mut policies = Vec::with_capacity(prepared.policies.len());
    for (k, (name, kind)) in prepared.policies.iter().enumerate() {
        let mut costs = Vec::with_capacity(outcomes.len());
        let mut aborted = Vec::new();
        let mut trajectory = None;
        for (r, rep) in outcomes.iter_mut().enumerate() {
            let o = &mut rep[k];
            costs.push(o.cost);
            if let Some(a) = o.violation.take() {
                aborted.push(a);
            }
            if r == 0 {
                trajectory = o.trajectory.take();
            }
        }
        let done: Vec<f64> = costs.iter().flatten().copied().collect();
        let (mean, se) = if done.is_empty() {
            (None, None)
        } else {
            let (m, s) = mean_se(&done);
            (Some(m), Some(s))
        };
        let params = match kind {
            PolicyKind::Omg { params, .. } => Some(*params),
            _ => None,
        };
        let certified_bound = params.map(|p| p.certified_bound);
        let vos = match (mean, certified_bound) {
            (Some(m), Some(b)) => Some(vos_interval(j_no_storage, m, b)),
            _ => None,
        };
        policies.push(PolicyResult {
            name: name.clone(),
            kind: kind.label().into(),
            costs,
            mean,
            se,
            violations: aborted.len() as u64,
            aborted,
            params,
            certified_bound,
            vos,
            trajectory,
        });
    }

    Ok(SimResult {
        seed: config.seed,
        replications: config.replications,
        horizon: config.horizon,
        supports: prepared.supports,
        subgradient_bounds: prepared.bounds,
        no_storage_costs,
        j_no_storage,
        policies,
    })
}

/// Runs on a dedicated pool of `threads` workers.
pub fn run_with_threads(config: &SimConfig, threads: usize) -> Result<SimResult, SimError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| SimError::ThreadPool(e.to_string()))?;
    pool.install(|| run(config))
}

/// Per-seed differences `a - b` over replications both policies completed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedDelta {
    pub a: String,
    pub b: String,
    pub deltas: Vec<f64>,
    pub mean: f64,
    pub se: f64,
    /// Seeds on which `a` was strictly cheaper.
    pub a_better: u32,
    pub b_better: u32,
    pub ties: u32,
    /// Two-sided sign test p-value.
    pub sign_test_p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub rank: usize,
    pub name: String,
    pub mean: Option<f64>,
    pub se: Option<f64>,
    pub certified_bound: Option<f64>,
    pub vos: Option<VosInterval>,
    pub violations: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub j_no_storage: f64,
    pub ranking: Vec<RankRow>,
    pub pairs: Vec<PairedDelta>,
}

/// Two-sided sign test on `wins` versus `losses`, ties dropped.
pub fn sign_test(wins: u32, losses: u32) -> f64 {
    let n = u64::from(wins + losses);
    if n == 0 {
        return 1.0;
    }
    let k = u64::from(wins.min(losses));
    let binom = Binomial::new(0.5, n).expect("valid binomial");
    (2.0 * binom.cdf(k)).min(1.0)
}

/// Paired comparison of two policies of one result.
pub fn paired(result: &SimResult, a: &str, b: &str) -> Result<PairedDelta, SimError> {
    let pa = result.policy(a).ok_or_else(|| SimError::UnknownPolicy(a.into()))?;
    let pb = result.policy(b).ok_or_else(|| SimError::UnknownPolicy(b.into()))?;
    Ok(paired_results(pa, pb))
}

fn paired_results(pa: &PolicyResult, pb: &PolicyResult) -> PairedDelta {
    let deltas: Vec<f64> = pa
        .costs
        .iter()
        .zip(&pb.costs)
        .filter_map(|(x, y)| Some((*x)? - (*y)?))
        .collect();
    let a_better = deltas.iter().filter(|d| **d < 0.0).count() as u32;
    let b_better = deltas.iter().filter(|d| **d > 0.0).count() as u32;
    let ties = deltas.len() as u32 - a_better - b_better;
    let (mean, se) = if deltas.is_empty() { (f64::NAN, f64::NAN) } else { mean_se(&deltas) };
    PairedDelta {
        a: pa.name.clone(),
        b: pb.name.clone(),
        mean,
        se,
        a_better,
        b_better,
        ties,
        sign_test_p: sign_test(a_better, b_better),
        deltas,
    }
}

/// Ranks every policy of the given results by mean cost and pairs each with
/// every lower-ranked one. All results must share seed, replications and horizon.
pub fn compare(results: &[&SimResult]) -> Result<Comparison, SimError> {
    let first = results.first().ok_or(SimError::Config("nothing to compare".into()))?;
    if results.iter().any(|r| {
        r.seed != first.seed
            || r.replications != first.replications
            || r.horizon != first.horizon
            || r.no_storage_costs != first.no_storage_costs
    }) {
        return Err(SimError::MismatchedSeeds);
    }
    let mut all: Vec<&PolicyResult> = Vec::new();
    for r in results {
        for p in &r.policies {
            if all.iter().any(|q| q.name == p.name) {
                return Err(SimError::Config(format!("policy `{}` appears twice", p.name)));
            }
            all.push(p);
        }
    }
    all.sort_by(|a, b| {
        let key = |p: &PolicyResult| p.mean.unwrap_or(f64::INFINITY);
        key(a).total_cmp(&key(b))
    });
    let ranking = all
        .iter()
        .enumerate()
        .map(|(i, p)| RankRow {
            rank: i + 1,
            name: p.name.clone(),
            mean: p.mean,
            se: p.se,
            certified_bound: p.certified_bound,
            vos: p.vos,
            violations: p.violations,
        })
        .collect();
    let mut pairs = Vec::new();
    for i in 0..all.len() {
        for j in i + 1..all.len() {
            pairs.push(paired_results(all[i], all[j]));
        }
    }
    Ok(Comparison {
        j_no_storage: first.j_no_storage,
        ranking,
        pairs,
    })
}

/// Trajectory rows as CSV with header `t,s,u,f,delta,price,g`.
pub fn trajectory_csv(rows: &[TrajectoryRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::RateSchedule;
    use crate::process::{Distribution, IidSpec};
    use crate::storage::StorageParams;

    fn config(cost: CostSpec, delta: Distribution, price: Distribution, policies: Vec<PolicySpec>) -> SimConfig {
        SimConfig {
            storage: StorageParams {
                lambda: 1.0,
                s_min: 0.0,
                s_max: 1.0,
                u_min: -0.1,
                u_max: 0.1,
                mu_c: 1.0,
                mu_d: 1.0,
            }
            .validate()
            .unwrap(),
            cost,
            inflow: InflowSet::default(),
            process: ProcessSpec::Iid(IidSpec {
                delta,
                price,
                joint: None,
                supports: SupportBounds::new((-1.5, 1.5), (0.0, 2.0)),
            }),
            policies,
            horizon: 100,
            s1: 0.5,
            seed: 7,
            replications: 4,
            calendar: Calendar::default(),
            imbalance_sign: 1.0,
            tune: TuneOptions::default(),
            keep_trajectory: true,
        }
    }

    fn balancing() -> CostSpec {
        CostSpec::Balancing {
            q_plus: RateSchedule::Constant(1.0),
            q_minus: RateSchedule::Constant(1.0),
        }
    }

    fn all_policies() -> Vec<PolicySpec> {
        vec![
            PolicySpec::omg(TuneMethod::MaxWeight),
            PolicySpec::Greedy { name: None },
            PolicySpec::NoStorage { name: None },
        ]
    }

    #[test]
    fn idle_arbitrage_costs_nothing() {
        let c = config(
            CostSpec::Arbitrage {},
            Distribution::PointMass { value: 0.0 },
            Distribution::PointMass { value: 1.0 },
            vec![PolicySpec::NoStorage { name: None }],
        );
        let r = run(&c).unwrap();
        assert_eq!(r.policy("no-storage").unwrap().mean, Some(0.0));
    }

    #[test]
    fn zero_imbalance_costs_nothing() {
        let c = config(
            balancing(),
            Distribution::PointMass { value: 0.0 },
            Distribution::PointMass { value: 1.0 },
            vec![PolicySpec::Greedy { name: None }, PolicySpec::NoStorage { name: None }],
        );
        let r = run(&c).unwrap();
        for p in &r.policies {
            assert_eq!(p.mean, Some(0.0), "{}", p.name);
        }
    }

    #[test]
    fn laplace_balancing_runs_feasibly() {
        let c = config(
            balancing(),
            Distribution::Laplace { mean: 0.0, sigma: 0.149 },
            Distribution::PointMass { value: 1.0 },
            all_policies(),
        );
        let r = run(&c).unwrap();
        for p in &r.policies {
            assert_eq!(p.violations, 0, "{}", p.name);
            assert!(p.mean.unwrap().is_finite());
        }
        let omg = r.policy("omg-maxw").unwrap();
        assert!((omg.certified_bound.unwrap() - 0.0125).abs() < 1e-15);
        let traj = omg.trajectory.as_ref().unwrap();
        assert_eq!(traj.len(), 100);
        assert!(trajectory_csv(traj).starts_with("t,s,u,f,delta,price,g\n"));
    }

    #[test]
    fn identical_policies_pair_to_zero() {
        let c = config(
            balancing(),
            Distribution::Laplace { mean: 0.0, sigma: 0.149 },
            Distribution::PointMass { value: 1.0 },
            vec![
                PolicySpec::Greedy { name: None },
                PolicySpec::Greedy {
                    name: Some("greedy-2".into()),
                },
            ],
        );
        let r = run(&c).unwrap();
        let d = paired(&r, "greedy", "greedy-2").unwrap();
        assert!(d.deltas.iter().all(|x| *x == 0.0));
        assert_eq!((d.ties, d.sign_test_p), (4, 1.0));
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let c = config(
            balancing(),
            Distribution::Laplace { mean: 0.0, sigma: 0.149 },
            Distribution::PointMass { value: 1.0 },
            all_policies(),
        );
        let a = run_with_threads(&c, 1).unwrap().to_json();
        let b = run_with_threads(&c, 4).unwrap().to_json();
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_seeds_rejected() {
        let mut c = config(
            balancing(),
            Distribution::Laplace { mean: 0.0, sigma: 0.149 },
            Distribution::PointMass { value: 1.0 },
            vec![PolicySpec::Greedy { name: None }],
        );
        let a = run(&c).unwrap();
        c.seed = 8;
        c.policies = vec![PolicySpec::NoStorage { name: None }];
        let b = run(&c).unwrap();
        assert_eq!(compare(&[&a, &b]), Err(SimError::MismatchedSeeds));
        c.seed = 7;
        let b = run(&c).unwrap();
        let cmp = compare(&[&a, &b]).unwrap();
        assert_eq!(cmp.ranking[0].name, "greedy");
        assert_eq!(cmp.pairs.len(), 1);
    }

    #[test]
    fn infeasible_fixed_parameters_abort() {
        // gamma far outside the admissible interval drives the level out of its box
        let mut c = config(
            balancing(),
            Distribution::Laplace { mean: 0.0, sigma: 0.149 },
            Distribution::PointMass { value: 1.0 },
            vec![PolicySpec::omg(TuneMethod::MaxWeight)],
        );
        let mut prepared = c.prepare().unwrap();
        if let PolicyKind::Omg { params, .. } = &mut prepared.policies[0].1 {
            params.gamma = -10.0;
        }
        let ctxs = contexts(&c, &c.process.stream(1, 0).unwrap().take_realizations(100).unwrap());
        let o = simulate_policy(&c, &prepared.policies[0].1, &ctxs, 0, false);
        assert!(o.cost.is_none() && o.violation.is_some());
        c.policies = vec![PolicySpec::Omg {
            method: TuneMethod::Fixed,
            gamma: Some(-10.0),
            w: Some(0.4),
            enforce_level_constraint: false,
            name: None,
        }];
        assert!(matches!(c.prepare(), Err(SimError::Tune(TuneError::Inadmissible(_)))));
    }

    #[test]
    fn sign_test_values() {
        assert_eq!(sign_test(0, 0), 1.0);
        assert!((sign_test(10, 0) - 2.0 * 0.5f64.powi(10)).abs() < 1e-15);
        assert_eq!(sign_test(5, 5), 1.0);
    }
}
