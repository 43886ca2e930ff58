//! Per-step decision rules: the online modified greedy step, the greedy
//! step and the do-nothing baseline.

use serde::{Deserialize, Serialize};

use crate::cost::{CostSpec, StageContext, StageCost};
use crate::scalar::{argmin_with_tiebreak, golden_section};
use crate::storage::{InflowSet, StorageParams};
use crate::tuning::OmgParams;

/// How a step's decision was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// Every subgradient of the objective is non-negative: discharge fully.
    ShortcutMin,
    /// Every subgradient of the objective is non-positive: charge fully.
    ShortcutMax,
    ClosedForm,
    Breakpoints,
    GoldenSection,
    Idle,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decision {
    pub u: f64,
    pub f: f64,
    /// Value of the step program at `(u, f)`.
    pub objective_value: f64,
    pub route: Route,
}

/// Preference between two equally good operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TieBreak {
    Charge,
    Idle,
}

impl TieBreak {
    fn prefers(self, a: f64, b: f64) -> bool {
        match self {
            TieBreak::Charge => a > b,
            TieBreak::Idle => a.abs() < b.abs(),
        }
    }
}

/// Minimizes `bias * u + weight * min_f g(u, f)` over `u` in `[lo, hi]`.
///
/// Piecewise-linear costs are solved exactly by enumerating their kinks;
/// anything else falls back to golden-section search.
#[allow(clippy::too_many_arguments)]
pub fn minimize_step(
    cost: &dyn StageCost,
    ctx: &StageContext,
    storage: &StorageParams,
    inflow: &InflowSet,
    bias: f64,
    weight: f64,
    (lo, hi): (f64, f64),
    tie: TieBreak,
) -> Decision {
    let value = |u: f64| bias * u + weight * cost.evaluate(u, cost.best_inflow(u, ctx, storage, inflow), ctx, storage);
    let mut candidates = vec![lo, hi];
    let route = match cost.kinks(ctx, storage, inflow) {
        Some(kinks) => {
            candidates.extend(kinks.into_iter().filter(|k| *k > lo && *k < hi));
            Route::Breakpoints
        }
        None => {
            let (x, _) = golden_section(value, lo, hi, 1e-10);
            candidates.push(x);
            if lo < 0.0 && hi > 0.0 {
                candidates.push(0.0);
            }
            Route::GoldenSection
        }
    };
    let (u, objective_value) = argmin_with_tiebreak(&candidates, value, |a, b| tie.prefers(a, b)).expect("non-empty");
    Decision {
        u,
        f: cost.best_inflow(u, ctx, storage, inflow),
        objective_value,
        route,
    }
}

/// One step of the online modified greedy algorithm at level `s`.
///
/// Minimizes `lambda (s + gamma) u + w g(u, f)` over the ramp box. With
/// `enforce_level_constraint` the box is further cut to the level-safe
/// operations; since the step objective is convex in `u`, projecting the
/// unconstrained minimizer onto that cut is exact.
#[allow(clippy::too_many_arguments)]
pub fn omg_step(
    s: f64,
    ctx: &StageContext,
    cost: &dyn StageCost,
    storage: &StorageParams,
    inflow: &InflowSet,
    params: &OmgParams,
    enforce_level_constraint: bool,
) -> Decision {
    let bias = storage.lambda * (s + params.gamma);
    let w = params.w;
    let objective = |u: f64, f: f64| bias * u + w * cost.evaluate(u, f, ctx, storage);
    let finish = |u: f64, route: Route| {
        let f = cost.best_inflow(u, ctx, storage, inflow);
        Decision {
            u,
            f,
            objective_value: objective(u, f),
            route,
        }
    };

    let mut d = if bias + w * params.bounds.d_lo >= 0.0 {
        finish(storage.u_min, Route::ShortcutMin)
    } else if bias + w * params.bounds.d_hi <= 0.0 {
        finish(storage.u_max, Route::ShortcutMax)
    } else if let Some(u) = closed_form(cost.builtin(), bias, w, ctx, storage, inflow) {
        finish(u, Route::ClosedForm)
    } else {
        minimize_step(cost, ctx, storage, inflow, bias, w, (storage.u_min, storage.u_max), TieBreak::Charge)
    };

    if enforce_level_constraint {
        let (lo, hi) = storage.level_safe_interval(s);
        let clamped = d.u.clamp(lo, hi.max(lo));
        if clamped != d.u {
            d = finish(clamped, d.route);
        }
    }
    d
}

/// Closed-form minimizers for lossless arbitrage and balancing without
/// controllable inflow. Residual imbalance is `delta - u`.
fn closed_form(
    spec: Option<&CostSpec>,
    bias: f64,
    w: f64,
    ctx: &StageContext,
    storage: &StorageParams,
    inflow: &InflowSet,
) -> Option<f64> {
    if !storage.is_lossless() || !inflow.is_zero() {
        return None;
    }
    match spec? {
        CostSpec::Arbitrage {} => {
            if bias + w * ctx.price > 0.0 {
                Some(storage.u_min)
            } else {
                Some(storage.u_max)
            }
        }
        spec @ CostSpec::Balancing { .. } => {
            let (qp, qm) = spec.residual_rates(ctx)?;
            if bias >= w * qp {
                Some(storage.u_min)
            } else if bias <= -w * qm {
                Some(storage.u_max)
            } else {
                Some(ctx.delta.clamp(storage.u_min, storage.u_max))
            }
        }
        _ => None,
    }
}

/// Minimizes the realized stage cost over operations that keep the level
/// feasible; ties go to the operation closest to idle.
pub fn greedy_step(
    s: f64,
    ctx: &StageContext,
    cost: &dyn StageCost,
    storage: &StorageParams,
    inflow: &InflowSet,
) -> Decision {
    let (lo, hi) = storage.level_safe_interval(s);
    assert!(lo <= hi + crate::storage::BOUND_TOL, "empty level-safe interval [{lo}, {hi}] at s = {s}");
    minimize_step(cost, ctx, storage, inflow, 0.0, 1.0, (lo, hi.max(lo)), TieBreak::Idle)
}

/// `u = 0`, with the inflow chosen optimally.
pub fn no_storage_step(ctx: &StageContext, cost: &dyn StageCost, storage: &StorageParams, inflow: &InflowSet) -> Decision {
    let f = cost.best_inflow(0.0, ctx, storage, inflow);
    Decision {
        u: 0.0,
        f,
        objective_value: cost.evaluate(0.0, f, ctx, storage),
        route: Route::Idle,
    }
}
