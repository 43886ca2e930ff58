//! Generalized storage: parameters, validation, dynamics and bus conversion.
//!
//! A generalized storage is the scalar linear system `s' = lambda * s + u`
//! with box constraints on the level `s` and the per-step operation `u`.
//! Batteries, deferrable demand and aggregated thermostatic loads all fit
//! this shape; they differ only in the sign and range of the level bounds.

use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance used for ramp and level comparisons during simulation.
pub const BOUND_TOL: f64 = 1e-9;

/// Raw physical description of a storage, as read from configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageParams {
    /// Per-step retention factor in (0, 1].
    pub lambda: f64,
    pub s_min: f64,
    pub s_max: f64,
    /// Maximum discharge per step, negated (so `u_min <= 0`).
    pub u_min: f64,
    /// Maximum charge per step.
    pub u_max: f64,
    /// Charging efficiency in (0, 1].
    #[serde(default = "one")]
    pub mu_c: f64,
    /// Discharging efficiency in (0, 1].
    #[serde(default = "one")]
    pub mu_d: f64,
}

fn one() -> f64 {
    1.0
}

/// The inequality that made a parameter set unusable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Inequality {
    /// `0 < lambda <= 1`
    LambdaRange,
    /// `0 < mu_c <= 1`
    ChargeEfficiencyRange,
    /// `0 < mu_d <= 1`
    DischargeEfficiencyRange,
    /// `s_min <= s_max`
    LevelOrder,
    /// `u_min <= 0 <= u_max`
    RampSigns,
    /// `lambda * s_min + u_max >= s_min`
    FeasibleFromBottom,
    /// `lambda * s_max + u_min <= s_max`
    FeasibleFromTop,
    /// `lambda * s_max + u_max >= s_max`
    ControllableUp,
    /// `lambda * s_min + u_min <= s_min`
    ControllableDown,
}

impl fmt::Display for Inequality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = match self {
            Inequality::LambdaRange => "0 < lambda <= 1",
            Inequality::ChargeEfficiencyRange => "0 < mu_c <= 1",
            Inequality::DischargeEfficiencyRange => "0 < mu_d <= 1",
            Inequality::LevelOrder => "s_min <= s_max",
            Inequality::RampSigns => "u_min <= 0 <= u_max",
            Inequality::FeasibleFromBottom => "lambda*s_min + u_max >= s_min (feasibility)",
            Inequality::FeasibleFromTop => "lambda*s_max + u_min <= s_max (feasibility)",
            Inequality::ControllableUp => "lambda*s_max + u_max >= s_max (controllability)",
            Inequality::ControllableDown => "lambda*s_min + u_min <= s_min (controllability)",
        };
        f.write_str(text)
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum StorageError {
    #[error("infeasible storage: violates {0}")]
    InfeasibleStorage(Inequality),
    #[error(
        "storage is not frequently acting: u_max - u_min = {ramp_range} >= s_max - s_min = {level_range}; \
         shorten the control interval"
    )]
    NonFrequentActing { ramp_range: f64, level_range: f64 },
    #[error("operation u = {u} outside ramp limits [{u_min}, {u_max}]")]
    RampViolation { u: f64, u_min: f64, u_max: f64 },
    #[error("non-finite storage parameter")]
    NonFinite,
}

impl StorageParams {
    /// Checks every defining inequality and returns the validated storage.
    ///
    /// The comparisons are exact: the inequalities are closed, so boundary
    /// cases such as `lambda * s_max + u_max == s_max` are accepted.
    pub fn validate(self) -> Result<Storage, StorageError> {
        let p = self;
        let all = [p.lambda, p.s_min, p.s_max, p.u_min, p.u_max, p.mu_c, p.mu_d];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(StorageError::NonFinite);
        }
        let checks = [
            (p.lambda > 0.0 && p.lambda <= 1.0, Inequality::LambdaRange),
            (p.mu_c > 0.0 && p.mu_c <= 1.0, Inequality::ChargeEfficiencyRange),
            (p.mu_d > 0.0 && p.mu_d <= 1.0, Inequality::DischargeEfficiencyRange),
            (p.s_min <= p.s_max, Inequality::LevelOrder),
            (p.u_min <= 0.0 && p.u_max >= 0.0, Inequality::RampSigns),
            (p.lambda * p.s_min + p.u_max >= p.s_min, Inequality::FeasibleFromBottom),
            (p.lambda * p.s_max + p.u_min <= p.s_max, Inequality::FeasibleFromTop),
            (p.lambda * p.s_max + p.u_max >= p.s_max, Inequality::ControllableUp),
            (p.lambda * p.s_min + p.u_min <= p.s_min, Inequality::ControllableDown),
        ];
        if let Some((_, which)) = checks.iter().find(|(ok, _)| !ok) {
            return Err(StorageError::InfeasibleStorage(*which));
        }
        let ramp_range = p.u_max - p.u_min;
        let level_range = p.s_max - p.s_min;
        if ramp_range >= level_range {
            return Err(StorageError::NonFrequentActing {
                ramp_range,
                level_range,
            });
        }
        Ok(Storage(p))
    }

    /// Energy drawn from the bus by operation `u`.
    pub fn convert(&self, u: f64) -> f64 {
        u.max(0.0) / self.mu_c - self.mu_d * (-u).max(0.0)
    }

    /// Inverse of [`convert`](Self::convert).
    pub fn convert_inverse(&self, energy: f64) -> f64 {
        if energy >= 0.0 {
            energy * self.mu_c
        } else {
            energy / self.mu_d
        }
    }

    /// Left and right derivatives of the conversion at `u`.
    pub fn convert_slopes(&self, u: f64) -> (f64, f64) {
        let left = if u > 0.0 { 1.0 / self.mu_c } else { self.mu_d };
        let right = if u < 0.0 { self.mu_d } else { 1.0 / self.mu_c };
        (left, right)
    }

    /// True when both conversion efficiencies are exactly one.
    pub fn is_lossless(&self) -> bool {
        self.mu_c == 1.0 && self.mu_d == 1.0
    }

    /// Residual imbalance `delta - h(u) + f` left on the bus.
    pub fn residual_imbalance(&self, delta: f64, u: f64, f: f64) -> f64 {
        delta - self.convert(u) + f
    }

    /// Operations that keep the next level inside `[s_min, s_max]`,
    /// intersected with the ramp box.
    pub fn level_safe_interval(&self, s: f64) -> (f64, f64) {
        let lo = self.u_min.max(self.s_min - self.lambda * s);
        let hi = self.u_max.min(self.s_max - self.lambda * s);
        (lo, hi)
    }
}

/// A storage whose parameters satisfy every defining inequality.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Storage(StorageParams);

impl Storage {
    pub fn params(&self) -> &StorageParams {
        &self.0
    }

    /// Advances the level by one step without clamping.
    pub fn step(&self, state: StorageState, u: f64) -> Result<StorageState, StorageError> {
        if u < self.u_min - BOUND_TOL || u > self.u_max + BOUND_TOL {
            return Err(StorageError::RampViolation {
                u,
                u_min: self.u_min,
                u_max: self.u_max,
            });
        }
        Ok(StorageState {
            s: self.lambda * state.s + u,
            t: state.t + 1,
        })
    }

    /// Whether `s` lies in the level box up to [`BOUND_TOL`].
    pub fn level_ok(&self, s: f64) -> bool {
        s >= self.s_min - BOUND_TOL && s <= self.s_max + BOUND_TOL
    }
}

impl Deref for Storage {
    type Target = StorageParams;

    fn deref(&self) -> &StorageParams {
        &self.0
    }
}

/// Storage level together with the (1-based) step index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StorageState {
    pub s: f64,
    pub t: u64,
}

impl StorageState {
    pub fn initial(s: f64) -> Self {
        StorageState { s, t: 1 }
    }
}

/// Closed interval of admissible controllable inflow per step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InflowSet {
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for InflowSet {
    fn default() -> Self {
        InflowSet {
            f_min: 0.0,
            f_max: 0.0,
        }
    }
}

impl InflowSet {
    pub fn new(f_min: f64, f_max: f64) -> Option<Self> {
        (f_min.is_finite() && f_max.is_finite() && f_min <= f_max)
            .then_some(InflowSet { f_min, f_max })
    }

    pub fn is_valid(&self) -> bool {
        self.f_min.is_finite() && self.f_max.is_finite() && self.f_min <= self.f_max
    }

    pub fn is_zero(&self) -> bool {
        self.f_min == 0.0 && self.f_max == 0.0
    }

    pub fn clamp(&self, f: f64) -> f64 {
        f.clamp(self.f_min, self.f_max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(lambda: f64, s: (f64, f64), u: (f64, f64), mu: f64) -> StorageParams {
        StorageParams {
            lambda,
            s_min: s.0,
            s_max: s.1,
            u_min: u.0,
            u_max: u.1,
            mu_c: mu,
            mu_d: mu,
        }
    }

    #[test]
    fn nas_battery_is_valid() {
        assert!(params(0.97, (0.0, 100.0), (-10.0, 10.0), 0.85).validate().is_ok());
    }

    #[test]
    fn wide_ramp_is_not_frequent_acting() {
        let err = params(1.0, (0.0, 1.0), (-2.0, 2.0), 1.0).validate().unwrap_err();
        assert!(matches!(err, StorageError::NonFrequentActing { .. }));
    }

    #[test]
    fn leaky_storage_cannot_hold_its_floor() {
        let err = params(0.5, (10.0, 20.0), (-1.0, 1.0), 1.0).validate().unwrap_err();
        assert_eq!(err, StorageError::InfeasibleStorage(Inequality::FeasibleFromBottom));
    }

    #[test]
    fn out_of_range_efficiency_is_named() {
        let err = params(1.0, (0.0, 10.0), (-1.0, 1.0), 1.2).validate().unwrap_err();
        assert_eq!(err, StorageError::InfeasibleStorage(Inequality::ChargeEfficiencyRange));
    }

    #[test]
    fn step_arithmetic() {
        let nas = params(0.97, (0.0, 100.0), (-10.0, 10.0), 0.85).validate().unwrap();
        let s = nas.step(StorageState { s: 100.0, t: 1 }, -10.0).unwrap();
        assert!((s.s - 87.0).abs() < 1e-12);
        assert_eq!(s.t, 2);
        assert_eq!(nas.step(StorageState::initial(0.0), 10.0).unwrap().s, 10.0);
        let ideal = params(1.0, (0.0, 100.0), (-10.0, 10.0), 1.0).validate().unwrap();
        assert_eq!(ideal.step(StorageState::initial(50.0), 0.0).unwrap().s, 50.0);
    }

    #[test]
    fn step_rejects_ramp_violation() {
        let st = params(1.0, (0.0, 100.0), (-10.0, 10.0), 1.0).validate().unwrap();
        assert!(st.step(StorageState::initial(50.0), 10.0 + 5e-10).is_ok());
        assert!(matches!(
            st.step(StorageState::initial(50.0), 10.1),
            Err(StorageError::RampViolation { .. })
        ));
    }

    #[test]
    fn conversion_and_residual() {
        let p = params(1.0, (0.0, 100.0), (-10.0, 10.0), 0.85);
        assert!((p.convert(10.0) - 10.0 / 0.85).abs() < 1e-12);
        assert_eq!(p.convert(0.0), 0.0);
        assert!((p.convert(-10.0) + 8.5).abs() < 1e-12);
        assert!((p.residual_imbalance(5.0, 10.0, 0.0) - (5.0 - 10.0 / 0.85)).abs() < 1e-12);
        assert_eq!(p.residual_imbalance(0.0, 0.0, 2.0), 2.0);
        let ideal = params(1.0, (0.0, 100.0), (-10.0, 10.0), 1.0);
        assert_eq!(ideal.residual_imbalance(-3.0, -3.0, 0.0), 0.0);
    }

    #[test]
    fn convert_inverse_roundtrip() {
        let p = params(1.0, (0.0, 100.0), (-10.0, 10.0), 0.85);
        for u in [-7.5, -0.1, 0.0, 0.3, 9.0] {
            assert!((p.convert_inverse(p.convert(u)) - u).abs() < 1e-12);
        }
    }

    fn arb_valid_storage() -> impl Strategy<Value = Storage> {
        (0.3f64..=1.0, -50.0f64..50.0, 1.0f64..100.0, 0.01f64..0.45, 0.01f64..0.45, 0.5f64..=1.0, 0.5f64..=1.0)
            .prop_filter_map("invalid storage", |(lambda, s_min, width, a, b, mu_c, mu_d)| {
                let s_max = s_min + width;
                StorageParams {
                    lambda,
                    s_min,
                    s_max,
                    u_min: -a * width,
                    u_max: b * width,
                    mu_c,
                    mu_d,
                }
                .validate()
                .ok()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn every_level_has_a_feasible_operation(st in arb_valid_storage(), frac in 0.0f64..=1.0) {
            let s = st.s_min + frac * (st.s_max - st.s_min);
            let (lo, hi) = st.level_safe_interval(s);
            prop_assert!(lo <= hi + 1e-12, "empty interval [{lo}, {hi}] at s = {s}");
        }
    }

    proptest! {
        #[test]
        fn conversion_is_monotone_and_lossy(mu_c in 0.05f64..=1.0, mu_d in 0.05f64..=1.0,
                                            u1 in -100.0f64..100.0, u2 in -100.0f64..100.0) {
            let p = StorageParams { lambda: 1.0, s_min: 0.0, s_max: 1.0, u_min: 0.0, u_max: 0.0, mu_c, mu_d };
            let (a, b) = if u1 <= u2 { (u1, u2) } else { (u2, u1) };
            prop_assert!(p.convert(a) <= p.convert(b));
            prop_assert!(p.convert(u1) >= u1 - 1e-12 * u1.abs());
        }

        #[test]
        fn step_is_affine(s1 in -100.0f64..100.0, s2 in -100.0f64..100.0, u in -1.0f64..1.0, lambda in 0.01f64..=1.0) {
            let st = Storage(StorageParams { lambda, s_min: -200.0, s_max: 200.0, u_min: -1.0, u_max: 1.0, mu_c: 1.0, mu_d: 1.0 });
            let a = st.step(StorageState::initial(s1), u).unwrap().s;
            let b = st.step(StorageState::initial(s2), u).unwrap().s;
            prop_assert!(((a - b) - lambda * (s1 - s2)).abs() <= 1e-12 * (1.0 + s1.abs() + s2.abs()));
        }
    }
}
