//! Stage cost families, their partial subdifferentials in `u`, and the
//! global subgradient bounds that drive parameter tuning.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::golden_section;
use crate::storage::{InflowSet, StorageParams};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum CostError {
    #[error("penalty rate {name} = {value} must be finite and non-negative")]
    NegativeRate { name: &'static str, value: f64 },
    #[error("cost is not convex in u: {0}")]
    NonConvex(&'static str),
    #[error("custom cost has no subgradient bounds; supply them explicitly")]
    UnboundedSubgradient,
    #[error("support interval {0} is empty or not finite")]
    InvalidSupport(&'static str),
}

/// A penalty rate that is either constant or switches between day and night.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RateSchedule {
    Constant(f64),
    DayNight { day: f64, night: f64 },
}

impl RateSchedule {
    pub fn at(&self, day: bool) -> f64 {
        match *self {
            RateSchedule::Constant(q) => q,
            RateSchedule::DayNight { day: d, night: n } => {
                if day {
                    d
                } else {
                    n
                }
            }
        }
    }

    pub fn max(&self) -> f64 {
        match *self {
            RateSchedule::Constant(q) => q,
            RateSchedule::DayNight { day, night } => day.max(night),
        }
    }

    fn check(&self, name: &'static str) -> Result<(), CostError> {
        let values = match *self {
            RateSchedule::Constant(q) => [q, q],
            RateSchedule::DayNight { day, night } => [day, night],
        };
        match values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            Some(&value) => Err(CostError::NegativeRate { name, value }),
            None => Ok(()),
        }
    }
}

fn three() -> f64 {
    3.0
}

fn one() -> f64 {
    1.0
}

/// The built-in stage cost families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostSpec {
    /// `p * h(u)`: negated profit from buying and selling at the bus price.
    Arbitrage {},
    /// `q+ [r]+ + q- [r]-` on the residual imbalance `r`.
    Balancing {
        q_plus: RateSchedule,
        q_minus: RateSchedule,
    },
    /// `p [r]-`: residual demand bought at the bus price, surplus curtailed.
    CoLocated {},
    /// `base * m [r]-` with `m = day_multiplier` during 7am-7pm and 1 otherwise.
    DayNightDeficit {
        #[serde(default = "three")]
        day_multiplier: f64,
        #[serde(default = "one")]
        base_rate: f64,
    },
}

/// Maps 1-based step indices onto hours of the day.
///
/// Step 1 starts at midnight; day hours are `[7, 19)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Calendar {
    pub steps_per_hour: u32,
}

impl Default for Calendar {
    fn default() -> Self {
        Calendar { steps_per_hour: 1 }
    }
}

impl Calendar {
    pub fn hour_of_day(&self, t: u64) -> u64 {
        let sph = u64::from(self.steps_per_hour.max(1));
        (t.saturating_sub(1) / sph) % 24
    }

    pub fn is_day(&self, t: u64) -> bool {
        (7..19).contains(&self.hour_of_day(t))
    }

    pub fn context(&self, t: u64, delta: f64, price: f64) -> StageContext {
        StageContext {
            t,
            delta,
            price,
            day: self.is_day(t),
            q_plus: None,
            q_minus: None,
        }
    }
}

/// Everything a stage cost needs besides the decision `(u, f)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageContext {
    pub t: u64,
    pub delta: f64,
    pub price: f64,
    pub day: bool,
    /// Per-step override of the positive-imbalance rate (from a trace).
    pub q_plus: Option<f64>,
    /// Per-step override of the negative-imbalance rate (from a trace).
    pub q_minus: Option<f64>,
}

/// Compact supports of the disturbances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupportBounds {
    pub delta_min: f64,
    pub delta_max: f64,
    pub price_min: f64,
    pub price_max: f64,
    /// Largest per-step `q_plus` override that can occur.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_plus_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_minus_max: Option<f64>,
}

impl SupportBounds {
    pub fn new(delta: (f64, f64), price: (f64, f64)) -> Self {
        SupportBounds {
            delta_min: delta.0,
            delta_max: delta.1,
            price_min: price.0,
            price_max: price.1,
            q_plus_max: None,
            q_minus_max: None,
        }
    }

    pub fn check(&self) -> Result<(), CostError> {
        let ok = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !ok(self.delta_min, self.delta_max) {
            return Err(CostError::InvalidSupport("delta"));
        }
        if !ok(self.price_min, self.price_max) {
            return Err(CostError::InvalidSupport("price"));
        }
        Ok(())
    }

    pub fn clamp_delta(&self, delta: f64) -> f64 {
        delta.clamp(self.delta_min, self.delta_max)
    }

    pub fn clamp_price(&self, price: f64) -> f64 {
        price.clamp(self.price_min, self.price_max)
    }

    pub fn contains(&self, delta: f64, price: f64) -> bool {
        (self.delta_min..=self.delta_max).contains(&delta)
            && (self.price_min..=self.price_max).contains(&price)
    }
}

/// Lower and upper bound on every partial subgradient of the stage cost.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgradientBounds {
    pub d_lo: f64,
    pub d_hi: f64,
}

impl SubgradientBounds {
    pub fn new(d_lo: f64, d_hi: f64) -> Option<Self> {
        (d_lo.is_finite() && d_hi.is_finite() && d_lo <= d_hi).then_some(SubgradientBounds { d_lo, d_hi })
    }

    pub fn spread(&self) -> f64 {
        self.d_hi - self.d_lo
    }

    pub fn contains(&self, xi: f64, tol: f64) -> bool {
        xi >= self.d_lo - tol && xi <= self.d_hi + tol
    }
}

/// A convex stage cost `g_t(u, f, delta, p)`.
///
/// `subgradient_interval` returns the one-sided derivatives `[g'(u-), g'(u+)]`,
/// which is the partial subdifferential at interior points.
pub trait StageCost: Send + Sync {
    fn evaluate(&self, u: f64, f: f64, ctx: &StageContext, storage: &StorageParams) -> f64;

    fn subgradient_interval(&self, u: f64, f: f64, ctx: &StageContext, storage: &StorageParams) -> (f64, f64);

    fn global_subgradient_bounds(
        &self,
        supports: &SupportBounds,
        storage: &StorageParams,
        inflow: &InflowSet,
    ) -> Result<SubgradientBounds, CostError>;

    /// Kinks in `u` of `u -> min_f g(u, f)`, when that function is piecewise
    /// linear. `None` sends solvers down the golden-section path.
    fn kinks(&self, _ctx: &StageContext, _storage: &StorageParams, _inflow: &InflowSet) -> Option<Vec<f64>> {
        None
    }

    /// The inflow minimizing the cost at fixed `u`; ties go to the smallest `|f|`.
    fn best_inflow(&self, u: f64, ctx: &StageContext, storage: &StorageParams, inflow: &InflowSet) -> f64 {
        if inflow.f_min == inflow.f_max {
            return inflow.f_min;
        }
        let (f, _) = golden_section(
            |f| self.evaluate(u, f, ctx, storage),
            inflow.f_min,
            inflow.f_max,
            1e-12,
        );
        f
    }

    /// The built-in family behind this cost, if any; enables closed-form steps.
    fn builtin(&self) -> Option<&CostSpec> {
        None
    }
}

impl CostSpec {
    pub fn validate(&self) -> Result<(), CostError> {
        match self {
            CostSpec::Arbitrage {} | CostSpec::CoLocated {} => Ok(()),
            CostSpec::Balancing { q_plus, q_minus } => {
                q_plus.check("q_plus")?;
                q_minus.check("q_minus")
            }
            CostSpec::DayNightDeficit {
                day_multiplier,
                base_rate,
            } => {
                RateSchedule::Constant(*day_multiplier).check("day_multiplier")?;
                RateSchedule::Constant(*base_rate).check("base_rate")
            }
        }
    }

    /// Rejects combinations for which `g_t` is not convex in `u` over the
    /// declared supports.
    ///
    /// With conversion losses `h` is convex with a kink at zero, so any term
    /// that rewards increasing `h(u)` (negative price in arbitrage, or a
    /// positive-imbalance penalty while `delta + f` can be positive) becomes
    /// concave across the kink.
    pub fn check_convex(
        &self,
        supports: &SupportBounds,
        storage: &StorageParams,
        inflow: &InflowSet,
    ) -> Result<(), CostError> {
        self.validate()?;
        supports.check()?;
        let lossless = storage.is_lossless();
        match self {
            CostSpec::Arbitrage {} if !lossless && supports.price_min < 0.0 => {
                Err(CostError::NonConvex("arbitrage with conversion losses needs non-negative prices"))
            }
            CostSpec::CoLocated {} if supports.price_min < 0.0 => {
                Err(CostError::NonConvex("co-located cost needs non-negative prices"))
            }
            CostSpec::Balancing { q_plus, .. }
                if !lossless
                    && q_plus.max().max(supports.q_plus_max.unwrap_or(0.0)) > 0.0
                    && supports.delta_max + inflow.f_max > 0.0 =>
            {
                Err(CostError::NonConvex(
                    "balancing with conversion losses and q_plus > 0 needs delta + f <= 0",
                ))
            }
            _ => Ok(()),
        }
    }

    /// Rates `(q+, q-)` of the residual-imbalance penalty, or `None` for arbitrage.
    pub fn residual_rates(&self, ctx: &StageContext) -> Option<(f64, f64)> {
        match self {
            CostSpec::Arbitrage {} => None,
            CostSpec::Balancing { q_plus, q_minus } => Some((
                ctx.q_plus.unwrap_or_else(|| q_plus.at(ctx.day)),
                ctx.q_minus.unwrap_or_else(|| q_minus.at(ctx.day)),
            )),
            CostSpec::CoLocated {} => Some((0.0, ctx.price)),
            CostSpec::DayNightDeficit {
                day_multiplier,
                base_rate,
            } => {
                let m = if ctx.day { *day_multiplier } else { 1.0 };
                Some((0.0, base_rate * m))
            }
        }
    }

    pub fn needs_price(&self) -> bool {
        matches!(self, CostSpec::Arbitrage {} | CostSpec::CoLocated {})
    }
}

fn penalty(r: f64, q_plus: f64, q_minus: f64) -> f64 {
    q_plus * r.max(0.0) + q_minus * (-r).max(0.0)
}

impl StageCost for CostSpec {
    fn builtin(&self) -> Option<&CostSpec> {
        Some(self)
    }

    fn evaluate(&self, u: f64, f: f64, ctx: &StageContext, storage: &StorageParams) -> f64 {
        match self.residual_rates(ctx) {
            None => ctx.price * storage.convert(u),
            Some((qp, qm)) => penalty(storage.residual_imbalance(ctx.delta, u, f), qp, qm),
        }
    }

    fn subgradient_interval(&self, u: f64, f: f64, ctx: &StageContext, storage: &StorageParams) -> (f64, f64) {
        let (h_left, h_right) = storage.convert_slopes(u);
        let (a, b) = match self.residual_rates(ctx) {
            None => (ctx.price * h_left, ctx.price * h_right),
            Some((qp, qm)) => {
                // r decreases in u, so the right derivative of g sees the
                // left derivative of the penalty and vice versa.
                let r = storage.residual_imbalance(ctx.delta, u, f);
                let pen_right = if r >= 0.0 { qp } else { -qm };
                let pen_left = if r > 0.0 { qp } else { -qm };
                (-pen_right * h_left, -pen_left * h_right)
            }
        };
        (a.min(b), a.max(b))
    }

    fn global_subgradient_bounds(
        &self,
        supports: &SupportBounds,
        storage: &StorageParams,
        inflow: &InflowSet,
    ) -> Result<SubgradientBounds, CostError> {
        self.check_convex(supports, storage, inflow)?;
        let (mu_c, mu_d) = (storage.mu_c, storage.mu_d);
        let (lo, hi) = match self {
            CostSpec::Arbitrage {} => {
                let (pl, ph) = (supports.price_min, supports.price_max);
                ((pl * mu_d).min(pl / mu_c), (ph * mu_d).max(ph / mu_c))
            }
            CostSpec::Balancing { q_plus, q_minus } => {
                let qp = q_plus.max().max(supports.q_plus_max.unwrap_or(0.0));
                let qm = q_minus.max().max(supports.q_minus_max.unwrap_or(0.0));
                // Positive residuals only coexist with discharging once losses
                // are present (see check_convex), hence mu_d on the low side.
                (-qp * mu_d, qm / mu_c)
            }
            CostSpec::CoLocated {} => (0.0, supports.price_max / mu_c),
            CostSpec::DayNightDeficit {
                day_multiplier,
                base_rate,
            } => (0.0, base_rate * day_multiplier.max(1.0) / mu_c),
        };
        // normalise -0.0
        Ok(SubgradientBounds {
            d_lo: lo + 0.0,
            d_hi: hi + 0.0,
        })
    }

    fn kinks(&self, ctx: &StageContext, storage: &StorageParams, inflow: &InflowSet) -> Option<Vec<f64>> {
        let mut out = vec![0.0];
        if self.residual_rates(ctx).is_some() {
            out.push(storage.convert_inverse(ctx.delta + inflow.f_min));
            if inflow.f_max != inflow.f_min {
                out.push(storage.convert_inverse(ctx.delta + inflow.f_max));
            }
        }
        Some(out)
    }

    fn best_inflow(&self, u: f64, ctx: &StageContext, storage: &StorageParams, inflow: &InflowSet) -> f64 {
        if inflow.f_min == inflow.f_max || self.residual_rates(ctx).is_none() {
            return inflow.clamp(0.0);
        }
        // convex piecewise linear in f with its only kink where r = 0
        let zeroing = inflow.clamp(storage.convert(u) - ctx.delta);
        let candidates = [inflow.clamp(0.0), zeroing, inflow.f_min, inflow.f_max];
        let mut best = candidates[0];
        let mut best_val = self.evaluate(u, best, ctx, storage);
        for &f in &candidates[1..] {
            let v = self.evaluate(u, f, ctx, storage);
            if v < best_val - 1e-12 * (1.0 + best_val.abs()) || (v <= best_val && f.abs() < best.abs()) {
                best = f;
                best_val = v;
            }
        }
        best
    }
}

/// User-supplied cost: evaluation and subdifferential closures plus explicit
/// subgradient bounds. The library never infers bounds for custom costs.
pub struct CustomCost<E, S> {
    pub evaluate: E,
    pub subgradient: S,
    pub bounds: Option<SubgradientBounds>,
}

impl<E, S> StageCost for CustomCost<E, S>
where
    E: Fn(f64, f64, &StageContext, &StorageParams) -> f64 + Send + Sync,
    S: Fn(f64, f64, &StageContext, &StorageParams) -> (f64, f64) + Send + Sync,
{
    fn evaluate(&self, u: f64, f: f64, ctx: &StageContext, storage: &StorageParams) -> f64 {
        (self.evaluate)(u, f, ctx, storage)
    }

    fn subgradient_interval(&self, u: f64, f: f64, ctx: &StageContext, storage: &StorageParams) -> (f64, f64) {
        (self.subgradient)(u, f, ctx, storage)
    }

    fn global_subgradient_bounds(
        &self,
        _supports: &SupportBounds,
        _storage: &StorageParams,
        _inflow: &InflowSet,
    ) -> Result<SubgradientBounds, CostError> {
        self.bounds.ok_or(CostError::UnboundedSubgradient)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn storage(mu: f64) -> StorageParams {
        StorageParams {
            lambda: 1.0,
            s_min: 0.0,
            s_max: 100.0,
            u_min: -10.0,
            u_max: 10.0,
            mu_c: mu,
            mu_d: mu,
        }
    }

    fn ctx(delta: f64, price: f64) -> StageContext {
        Calendar::default().context(1, delta, price)
    }

    fn balancing(qp: f64, qm: f64) -> CostSpec {
        CostSpec::Balancing {
            q_plus: RateSchedule::Constant(qp),
            q_minus: RateSchedule::Constant(qm),
        }
    }

    #[test]
    fn evaluate_examples() {
        let arb = CostSpec::Arbitrage {}.evaluate(10.0, 0.0, &ctx(0.0, 1.0), &storage(0.85));
        assert!((arb - 10.0 / 0.85).abs() < 1e-12);
        assert_eq!(balancing(1.0, 1.0).evaluate(-3.0, 0.0, &ctx(-3.0, 0.0), &storage(1.0)), 0.0);
        assert_eq!(CostSpec::CoLocated {}.evaluate(0.0, 0.0, &ctx(-5.0, 2.0), &storage(1.0)), 10.0);
    }

    #[test]
    fn day_night_multiplier_follows_calendar() {
        let cost = CostSpec::DayNightDeficit {
            day_multiplier: 3.0,
            base_rate: 1.0,
        };
        let cal = Calendar { steps_per_hour: 12 };
        // 07:00 is step 7*12 + 1
        let night = cal.context(7 * 12, -1.0, 0.0);
        let day = cal.context(7 * 12 + 1, -1.0, 0.0);
        let st = storage(1.0);
        assert_eq!(cost.evaluate(0.0, 0.0, &night, &st), 1.0);
        assert_eq!(cost.evaluate(0.0, 0.0, &day, &st), 3.0);
        assert!(cal.is_day(19 * 12));
        assert!(!cal.is_day(19 * 12 + 1));
        assert!(!cal.is_day(24 * 12 + 1));
    }

    #[test]
    fn subgradient_examples() {
        let st = storage(1.0);
        assert_eq!(CostSpec::Arbitrage {}.subgradient_interval(4.0, 0.0, &ctx(0.0, 3.0), &st), (3.0, 3.0));
        let bal = balancing(1.0, 1.0);
        assert_eq!(bal.subgradient_interval(1.0, 0.0, &ctx(5.0, 0.0), &st), (-1.0, -1.0));
        assert_eq!(balancing(3.0, 2.0).subgradient_interval(2.0, 0.0, &ctx(2.0, 0.0), &st), (-3.0, 2.0));
    }

    #[test]
    fn arbitrage_kink_with_losses() {
        let st = storage(0.8);
        let (lo, hi) = CostSpec::Arbitrage {}.subgradient_interval(0.0, 0.0, &ctx(0.0, 2.0), &st);
        assert!((lo - 1.6).abs() < 1e-12 && (hi - 2.5).abs() < 1e-12);
    }

    #[test]
    fn global_bounds_examples() {
        let inflow = InflowSet::default();
        let st = storage(1.0);
        let sup = SupportBounds::new((-5.0, 5.0), (10.0, 50.0));
        let b = CostSpec::Arbitrage {}.global_subgradient_bounds(&sup, &st, &inflow).unwrap();
        assert_eq!((b.d_lo, b.d_hi), (10.0, 50.0));
        let b = balancing(3.0, 1.0).global_subgradient_bounds(&sup, &st, &inflow).unwrap();
        assert_eq!((b.d_lo, b.d_hi), (-3.0, 1.0));
        let sup = SupportBounds::new((-5.0, 5.0), (0.0, 10.0));
        let b = CostSpec::CoLocated {}.global_subgradient_bounds(&sup, &st, &inflow).unwrap();
        assert_eq!((b.d_lo, b.d_hi), (0.0, 10.0));
    }

    #[test]
    fn lossy_bounds_cover_the_kink() {
        let inflow = InflowSet::default();
        let st = storage(0.85);
        let sup = SupportBounds::new((-1.0, 1.0), (10.0, 50.0));
        let b = CostSpec::Arbitrage {}.global_subgradient_bounds(&sup, &st, &inflow).unwrap();
        assert!((b.d_lo - 8.5).abs() < 1e-12 && (b.d_hi - 50.0 / 0.85).abs() < 1e-12);
        let dn = CostSpec::DayNightDeficit {
            day_multiplier: 3.0,
            base_rate: 1.0,
        };
        let b = dn.global_subgradient_bounds(&sup, &st, &inflow).unwrap();
        assert_eq!(b.d_lo, 0.0);
        assert!((b.d_hi - 3.0 / 0.85).abs() < 1e-12);
    }

    #[test]
    fn trace_rate_overrides_widen_bounds() {
        let mut sup = SupportBounds::new((-1.0, 1.0), (0.0, 1.0));
        sup.q_minus_max = Some(7.0);
        let b = balancing(1.0, 1.0)
            .global_subgradient_bounds(&sup, &storage(1.0), &InflowSet::default())
            .unwrap();
        assert_eq!((b.d_lo, b.d_hi), (-1.0, 7.0));
    }

    #[test]
    fn nonconvex_combinations_are_rejected() {
        let inflow = InflowSet::default();
        let sup = SupportBounds::new((-1.0, 1.0), (-5.0, 5.0));
        assert!(matches!(
            CostSpec::Arbitrage {}.global_subgradient_bounds(&sup, &storage(0.9), &inflow),
            Err(CostError::NonConvex(_))
        ));
        assert!(matches!(
            balancing(1.0, 1.0).global_subgradient_bounds(&sup, &storage(0.9), &inflow),
            Err(CostError::NonConvex(_))
        ));
        assert!(balancing(0.0, 1.0).global_subgradient_bounds(&sup, &storage(0.9), &inflow).is_ok());
    }

    #[test]
    fn custom_cost_requires_bounds() {
        let custom = CustomCost {
            evaluate: |u: f64, _f: f64, _c: &StageContext, _s: &StorageParams| u * u,
            subgradient: |u: f64, _f: f64, _c: &StageContext, _s: &StorageParams| (2.0 * u, 2.0 * u),
            bounds: None,
        };
        let sup = SupportBounds::new((0.0, 0.0), (0.0, 0.0));
        assert_eq!(
            custom.global_subgradient_bounds(&sup, &storage(1.0), &InflowSet::default()),
            Err(CostError::UnboundedSubgradient)
        );
    }

    #[test]
    fn negative_rate_rejected() {
        assert!(matches!(balancing(-1.0, 1.0).validate(), Err(CostError::NegativeRate { .. })));
    }

    #[test]
    fn schedule_parses_both_shapes() {
        let c: CostSpec =
            serde_json::from_str(r#"{"family":"balancing","q_plus":1.0,"q_minus":{"day":3.0,"night":1.0}}"#).unwrap();
        assert_eq!(
            c,
            CostSpec::Balancing {
                q_plus: RateSchedule::Constant(1.0),
                q_minus: RateSchedule::DayNight { day: 3.0, night: 1.0 }
            }
        );
        assert!(serde_json::from_str::<CostSpec>(r#"{"family":"arbitrage","oops":1}"#).is_err());
    }

    /// A random convex instance: cost, storage, supports, inflow and a point in them.
    #[derive(Debug, Clone)]
    struct Instance {
        cost: CostSpec,
        storage: StorageParams,
        supports: SupportBounds,
        inflow: InflowSet,
    }

    fn arb_instance() -> impl Strategy<Value = Instance> {
        (0usize..4, 0.5f64..=1.0, 0.5f64..=1.0, any::<bool>(), 0.0f64..5.0, 0.0f64..5.0, -10.0f64..0.0, 0.0f64..10.0, 0.0f64..3.0)
            .prop_map(|(family, mu_c, mu_d, lossless, qa, qb, dlo, dhi, fw)| {
                let (mu_c, mu_d) = if lossless { (1.0, 1.0) } else { (mu_c, mu_d) };
                let storage = StorageParams { lambda: 1.0, s_min: 0.0, s_max: 100.0, u_min: -10.0, u_max: 10.0, mu_c, mu_d };
                let mut supports = SupportBounds::new((dlo, dhi), (qa.min(qb), qa.max(qb) + 0.5));
                let mut inflow = InflowSet::new(-fw, fw).unwrap();
                let cost = match family {
                    0 => CostSpec::Arbitrage {},
                    1 => {
                        if !lossless {
                            // keep delta + f <= 0 so q_plus > 0 stays convex
                            supports.delta_min = dlo - 5.0;
                            supports.delta_max = dlo;
                            inflow = InflowSet::new(-fw, 0.0).unwrap();
                        }
                        CostSpec::Balancing { q_plus: RateSchedule::Constant(qa), q_minus: RateSchedule::DayNight { day: qb, night: 0.5 * qb } }
                    }
                    2 => CostSpec::CoLocated {},
                    _ => CostSpec::DayNightDeficit { day_multiplier: 1.0 + qa, base_rate: 0.2 + qb },
                };
                Instance { cost, storage, supports, inflow }
            })
    }

    fn point(inst: &Instance, a: f64, b: f64, c: f64, day: bool) -> (f64, StageContext) {
        let s = &inst.supports;
        let delta = s.delta_min + a * (s.delta_max - s.delta_min);
        let price = s.price_min + b * (s.price_max - s.price_min);
        let f = inst.inflow.f_min + c * (inst.inflow.f_max - inst.inflow.f_min);
        (f, StageContext { t: 1, delta, price, day, q_plus: None, q_minus: None })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn convex_in_u(inst in arb_instance(), a in 0.0f64..=1.0, b in 0.0f64..=1.0, c in 0.0f64..=1.0,
                       u1 in -10.0f64..=10.0, u2 in -10.0f64..=10.0, theta in 0.0f64..=1.0, day: bool) {
            let (f, cx) = point(&inst, a, b, c, day);
            let g = |u: f64| inst.cost.evaluate(u, f, &cx, &inst.storage);
            let mid = theta * u1 + (1.0 - theta) * u2;
            prop_assert!(g(mid) <= theta * g(u1) + (1.0 - theta) * g(u2) + 1e-9);
        }

        #[test]
        fn subgradient_inequality(inst in arb_instance(), a in 0.0f64..=1.0, b in 0.0f64..=1.0, c in 0.0f64..=1.0,
                                  u in -10.0f64..=10.0, u2 in -10.0f64..=10.0, w in 0.0f64..=1.0, day: bool) {
            let (f, cx) = point(&inst, a, b, c, day);
            let (lo, hi) = inst.cost.subgradient_interval(u, f, &cx, &inst.storage);
            prop_assert!(lo <= hi);
            let xi = lo + w * (hi - lo);
            let g = |u: f64| inst.cost.evaluate(u, f, &cx, &inst.storage);
            prop_assert!(g(u2) >= g(u) + xi * (u2 - u) - 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100_000))]

        #[test]
        fn subgradients_inside_global_bounds(inst in arb_instance(), a in 0.0f64..=1.0, b in 0.0f64..=1.0, c in 0.0f64..=1.0,
                                             u in -10.0f64..=10.0, day: bool) {
            let bounds = inst.cost.global_subgradient_bounds(&inst.supports, &inst.storage, &inst.inflow).unwrap();
            let (f, cx) = point(&inst, a, b, c, day);
            let (lo, hi) = inst.cost.subgradient_interval(u, f, &cx, &inst.storage);
            prop_assert!(bounds.contains(lo, 1e-12) && bounds.contains(hi, 1e-12),
                "[{lo}, {hi}] not inside {bounds:?}");
        }
    }
}
