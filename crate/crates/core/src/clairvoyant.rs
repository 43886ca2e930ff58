//! Hindsight-optimal operation of a realized trace by backward induction on
//! a level grid.
//!
//! Value functions live on an evenly spaced level grid and are linearly
//! interpolated. At each grid level the operation is chosen from an even
//! grid over the level-safe interval, its endpoints, idle, the cost's kinks
//! and every operation landing exactly on a grid node. The plan is the
//! forward rollout of those value functions from the true initial level, so
//! it is always feasible; its cost converges to the hindsight optimum as the
//! grids are refined.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{StageContext, StageCost};
use crate::policy::{Decision, Route};
use crate::storage::{InflowSet, StorageParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpGrids {
    pub s_grid_points: usize,
    pub u_grid_points: usize,
}

impl Default for DpGrids {
    fn default() -> Self {
        DpGrids {
            s_grid_points: 401,
            u_grid_points: 201,
        }
    }
}

impl DpGrids {
    pub fn is_valid(&self) -> bool {
        self.s_grid_points >= 3 && self.u_grid_points >= 3
    }
}

struct LevelGrid {
    lo: f64,
    step: f64,
    n: usize,
}

impl LevelGrid {
    fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.lo + self.step * (self.n - 1) as f64
        } else {
            self.lo + self.step * i as f64
        }
    }

    fn interpolate(&self, values: &[f64], s: f64) -> f64 {
        if self.step == 0.0 {
            return values[0];
        }
        let x = ((s - self.lo) / self.step).clamp(0.0, (self.n - 1) as f64);
        let i = (x.floor() as usize).min(self.n - 2);
        let frac = x - i as f64;
        values[i] * (1.0 - frac) + values[i + 1] * frac
    }
}

fn candidates(
    s: f64,
    ctx: &StageContext,
    cost: &dyn StageCost,
    storage: &StorageParams,
    inflow: &InflowSet,
    grid: &LevelGrid,
    u_points: usize,
) -> Vec<f64> {
    let (lo, hi) = storage.level_safe_interval(s);
    let hi = hi.max(lo);
    let mut out = Vec::with_capacity(u_points + 8);
    for k in 0..u_points {
        out.push(lo + (hi - lo) * k as f64 / (u_points - 1) as f64);
    }
    out.push(hi);
    if lo < 0.0 && hi > 0.0 {
        out.push(0.0);
    }
    if let Some(kinks) = cost.kinks(ctx, storage, inflow) {
        out.extend(kinks.into_iter().filter(|k| *k > lo && *k < hi));
    }
    if grid.step > 0.0 {
        let base = storage.lambda * s;
        let first = ((base + lo - grid.lo) / grid.step).ceil().max(0.0) as usize;
        let last = (((base + hi - grid.lo) / grid.step).floor() as usize).min(grid.n - 1);
        for i in first..=last {
            let u = grid.node(i) - base;
            if u > lo && u < hi {
                out.push(u);
            }
        }
    }
    out
}

/// Best operation at level `s` given the next-stage values; ties go to the
/// operation closest to idle.
#[allow(clippy::too_many_arguments)]
fn best_operation(
    s: f64,
    ctx: &StageContext,
    cost: &dyn StageCost,
    storage: &StorageParams,
    inflow: &InflowSet,
    grid: &LevelGrid,
    next: &[f64],
    u_points: usize,
) -> (f64, f64, f64) {
    let mut best: (f64, f64, f64) = (0.0, 0.0, f64::INFINITY);
    for u in candidates(s, ctx, cost, storage, inflow, grid, u_points) {
        let f = cost.best_inflow(u, ctx, storage, inflow);
        let v = cost.evaluate(u, f, ctx, storage) + grid.interpolate(next, storage.lambda * s + u);
        let tol = 1e-12 * (1.0 + v.abs().max(best.2.abs()));
        if best.2 == f64::INFINITY || v < best.2 - tol || (v <= best.2 + tol && u.abs() < best.0.abs()) {
            best = (u, f, v);
        }
    }
    best
}

/// Plans the whole trace with hindsight. `contexts[t]` describes step `t + 1`.
/// The returned decisions carry the stage cost as `objective_value`.
pub fn clairvoyant_plan(
    s1: f64,
    contexts: &[StageContext],
    cost: &dyn StageCost,
    storage: &StorageParams,
    inflow: &InflowSet,
    grids: &DpGrids,
) -> Vec<Decision> {
    let n = grids.s_grid_points.max(3);
    let u_points = grids.u_grid_points.max(3);
    let grid = LevelGrid {
        lo: storage.s_min,
        step: (storage.s_max - storage.s_min) / (n - 1) as f64,
        n,
    };
    let horizon = contexts.len();

    // values[t] is the cost-to-go from stage t + 1 on the grid; values[T] = 0.
    let mut values = vec![vec![0.0; n]; horizon + 1];
    for t in (0..horizon).rev() {
        let (head, tail) = values.split_at_mut(t + 1);
        let next = &tail[0];
        let ctx = &contexts[t];
        head[t] = (0..n)
            .into_par_iter()
            .map(|i| best_operation(grid.node(i), ctx, cost, storage, inflow, &grid, next, u_points).2)
            .collect();
    }

    let mut s = s1;
    let mut plan = Vec::with_capacity(horizon);
    for (t, ctx) in contexts.iter().enumerate() {
        let (u, f, _) = best_operation(s, ctx, cost, storage, inflow, &grid, &values[t + 1], u_points);
        plan.push(Decision {
            u,
            f,
            objective_value: cost.evaluate(u, f, ctx, storage),
            route: Route::Breakpoints,
        });
        s = (storage.lambda * s + u).clamp(storage.s_min, storage.s_max);
    }
    plan
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{Calendar, CostSpec, RateSchedule};
    use crate::policy::greedy_step;

    fn ideal() -> StorageParams {
        StorageParams {
            lambda: 1.0,
            s_min: 0.0,
            s_max: 1.0,
            u_min: -0.1,
            u_max: 0.1,
            mu_c: 1.0,
            mu_d: 1.0,
        }
    }

    #[test]
    fn single_step_matches_greedy() {
        let cal = Calendar::default();
        let bal = CostSpec::Balancing {
            q_plus: RateSchedule::Constant(1.0),
            q_minus: RateSchedule::Constant(2.0),
        };
        for (cost, delta, price, s) in [
            (bal.clone(), -0.05, 0.0, 0.5),
            (bal.clone(), 0.3, 0.0, 0.95),
            (CostSpec::Arbitrage {}, 0.0, 3.0, 0.04),
            (CostSpec::CoLocated {}, -0.2, 3.0, 0.5),
        ] {
            let ctx = cal.context(1, delta, price);
            let plan = clairvoyant_plan(s, &[ctx], &cost, &ideal(), &InflowSet::default(), &DpGrids::default());
            let g = greedy_step(s, &ctx, &cost, &ideal(), &InflowSet::default());
            assert!((plan[0].u - g.u).abs() < 1e-12, "{cost:?}: {} vs {}", plan[0].u, g.u);
        }
    }

    #[test]
    fn constant_price_arbitrage_empties_the_store() {
        let cal = Calendar::default();
        let contexts: Vec<_> = (1..=20).map(|t| cal.context(t, 0.0, 2.0)).collect();
        let plan = clairvoyant_plan(0.5, &contexts, &CostSpec::Arbitrage {}, &ideal(), &InflowSet::default(), &DpGrids::default());
        let total: f64 = plan.iter().map(|d| d.objective_value).sum();
        // telescoping: p (s_end - s_1) with s_end = s_min
        assert!((total - 2.0 * (0.0 - 0.5)).abs() < 1e-9, "{total}");
    }

    #[test]
    fn buys_low_sells_high() {
        let cal = Calendar::default();
        let prices = [1.0, 1.0, 5.0, 5.0];
        let contexts: Vec<_> = prices.iter().enumerate().map(|(t, &p)| cal.context(t as u64 + 1, 0.0, p)).collect();
        let plan = clairvoyant_plan(0.0, &contexts, &CostSpec::Arbitrage {}, &ideal(), &InflowSet::default(), &DpGrids::default());
        let us: Vec<f64> = plan.iter().map(|d| d.u).collect();
        for (u, want) in us.iter().zip([0.1, 0.1, -0.1, -0.1]) {
            assert!((u - want).abs() < 1e-12, "{us:?}");
        }
    }

    #[test]
    fn finer_grids_do_not_get_worse() {
        let cal = Calendar::default();
        let cost = CostSpec::CoLocated {};
        let contexts: Vec<_> = (1..=48u64)
            .map(|t| {
                let x = t as f64;
                cal.context(t, 0.15 * (0.7 * x).sin(), 3.0 + 2.0 * (0.26 * x).cos())
            })
            .collect();
        let st = StorageParams { lambda: 0.99, ..ideal() };
        let total = |n: usize| -> f64 {
            let grids = DpGrids {
                s_grid_points: n,
                u_grid_points: n / 2 + 1,
            };
            clairvoyant_plan(0.3, &contexts, &cost, &st, &InflowSet::default(), &grids)
                .iter()
                .map(|d| d.objective_value)
                .sum()
        };
        let coarse = total(101);
        let fine = total(401);
        assert!(fine <= coarse + 1e-3 * coarse.abs().max(1.0), "{fine} vs {coarse}");
    }
}
