//! Offline parameter selection: the admissible `(gamma, w)` region, the
//! max-weight and min-bound tuners, and the sub-optimality certificate.
//!
//! For a fixed weight `w` the shift `gamma` must lie in
//! `[kappa_min(w), kappa_max(w)]`; that interval shrinks linearly in `w` and
//! collapses to a point at `w = w_max`. The certificate is `M(gamma) / w`
//! where `M` is a sum of two maxima of convex quadratics in `gamma`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::SubgradientBounds;
use crate::scalar::golden_section;
use crate::storage::{Storage, StorageParams};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum TuneError {
    #[error("empty shift interval: kappa_min = {kappa_min} > kappa_max = {kappa_max} (weight above w_max?)")]
    EmptyInterval { kappa_min: f64, kappa_max: f64 },
    #[error("subgradient bounds coincide; the weight is unbounded and needs a ceiling")]
    DegenerateSlope,
    #[error("weight must be positive, got {0}")]
    NonPositiveWeight(f64),
    #[error("parameters not admissible: {0}")]
    Inadmissible(String),
    #[error("numerical failure in tuner: {0}")]
    NumericalFailure(String),
    #[error("no-storage cost is zero; percentage savings undefined")]
    ZeroBaseline,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TuneMethod {
    /// `w = w_max`, shift from the collapsed interval.
    #[serde(rename = "maxw")]
    MaxWeight,
    /// Minimizes the certified bound over the admissible region.
    #[serde(rename = "mins")]
    MinBound,
    /// Supplied by the user.
    #[serde(rename = "fixed")]
    Fixed,
}

impl std::fmt::Display for TuneMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TuneMethod::MaxWeight => "maxw",
            TuneMethod::MinBound => "mins",
            TuneMethod::Fixed => "fixed",
        })
    }
}

/// Tuned algorithm parameters together with their certificate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmgParams {
    pub gamma: f64,
    pub w: f64,
    pub bounds: SubgradientBounds,
    /// `M(gamma) / w` in cost units per step.
    pub certified_bound: f64,
    pub method: TuneMethod,
}

impl OmgParams {
    /// Builds user-supplied parameters after checking admissibility.
    pub fn fixed(storage: &Storage, bounds: SubgradientBounds, gamma: f64, w: f64) -> Result<Self, TuneError> {
        let params = OmgParams {
            gamma,
            w,
            bounds,
            certified_bound: subopt_bound(storage, gamma, w),
            method: TuneMethod::Fixed,
        };
        params.check_admissible(storage)?;
        Ok(params)
    }

    /// Verifies `kappa_min(w) <= gamma <= kappa_max(w)` and `0 < w <= w_max`
    /// (relative tolerance 1e-9).
    pub fn check_admissible(&self, storage: &StorageParams) -> Result<(), TuneError> {
        if !(self.w > 0.0) || !self.w.is_finite() || !self.gamma.is_finite() {
            return Err(TuneError::NonPositiveWeight(self.w));
        }
        let tol = |x: f64| 1e-9 * (1.0 + x.abs());
        if let Ok(wm) = w_max(storage, &self.bounds) {
            if self.w > wm + tol(wm) {
                return Err(TuneError::Inadmissible(format!("w = {} exceeds w_max = {wm}", self.w)));
            }
        }
        let (lo, hi) = kappa_interval(storage, &self.bounds, self.w)?;
        if self.gamma < lo - tol(lo) || self.gamma > hi + tol(hi) {
            return Err(TuneError::Inadmissible(format!(
                "gamma = {} outside [{lo}, {hi}]",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Shift interval `[kappa_min(w), kappa_max(w)]` for weight `w`.
///
/// Rounding at `w = w_max` can leave the endpoints crossed by a few ulps;
/// such intervals are collapsed to their midpoint.
pub fn kappa_interval(storage: &StorageParams, bounds: &SubgradientBounds, w: f64) -> Result<(f64, f64), TuneError> {
    if !(w > 0.0) {
        return Err(TuneError::NonPositiveWeight(w));
    }
    let p = storage;
    let kappa_min = (-w * bounds.d_lo + p.u_max - p.s_max) / p.lambda;
    let kappa_max = (-w * bounds.d_hi - p.s_min + p.u_min) / p.lambda;
    if kappa_min <= kappa_max {
        return Ok((kappa_min, kappa_max));
    }
    let scale = 1.0 + kappa_min.abs().max(kappa_max.abs());
    if kappa_min - kappa_max <= 1e-9 * scale {
        let mid = 0.5 * (kappa_min + kappa_max);
        Ok((mid, mid))
    } else {
        Err(TuneError::EmptyInterval { kappa_min, kappa_max })
    }
}

/// Largest admissible weight.
pub fn w_max(storage: &StorageParams, bounds: &SubgradientBounds) -> Result<f64, TuneError> {
    let spread = bounds.spread();
    if spread <= 0.0 {
        return Err(TuneError::DegenerateSlope);
    }
    let p = storage;
    Ok(((p.s_max - p.s_min) - (p.u_max - p.u_min)) / spread)
}

/// The quadratic pieces of the certificate numerator at shift `gamma`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundTerms {
    /// Operation term, half the largest squared shifted ramp limit.
    pub m_u: f64,
    /// Level term, largest squared shifted level bound.
    pub m_b: f64,
    /// `m_u + lambda (1 - lambda) m_b`.
    pub m: f64,
}

pub fn bound_terms(storage: &StorageParams, gamma: f64) -> BoundTerms {
    let p = storage;
    let leak = 1.0 - p.lambda;
    let m_u = 0.5 * (p.u_min + leak * gamma).powi(2).max((p.u_max + leak * gamma).powi(2));
    let m_b = (p.s_min + gamma).powi(2).max((p.s_max + gamma).powi(2));
    BoundTerms {
        m_u,
        m_b,
        m: m_u + p.lambda * leak * m_b,
    }
}

/// Certified sub-optimality `M(gamma) / w` under IID disturbances.
pub fn subopt_bound(storage: &StorageParams, gamma: f64, w: f64) -> f64 {
    bound_terms(storage, gamma).m / w
}

/// Closed-form certificate for a lossless-in-time storage with symmetric ramps:
/// `spread * u_max / (4 (rho - 1))` where `rho` is level range over ramp range.
pub fn ideal_bound_closed_form(spread: f64, u_max: f64, rho: f64) -> f64 {
    spread * u_max / (4.0 * (rho - 1.0))
}

/// Exact minimizer of `M(gamma)` over `[lo, hi]`.
///
/// `M` is convex and piecewise quadratic; its minimum sits at an endpoint,
/// at a switch point of one of the two maxima, or at the vertex of one of
/// the four quadratic pieces. All of them are evaluated.
pub fn min_numerator_on(storage: &StorageParams, lo: f64, hi: f64) -> (f64, f64) {
    let p = storage;
    let k = 1.0 - p.lambda;
    let c = p.lambda * k;
    let mut candidates = vec![lo, hi, -(p.s_min + p.s_max) / 2.0];
    if k > 0.0 {
        candidates.push(-(p.u_min + p.u_max) / (2.0 * k));
    }
    let denom = k * k + 2.0 * c;
    if denom > 0.0 {
        for ux in [p.u_min, p.u_max] {
            for sy in [p.s_min, p.s_max] {
                candidates.push(-(k * ux + 2.0 * c * sy) / denom);
            }
        }
    }
    let mut best = (lo, bound_terms(p, lo).m);
    for g in candidates {
        let g = g.clamp(lo, hi);
        let m = bound_terms(p, g).m;
        if m < best.1 {
            best = (g, m);
        }
    }
    best
}

/// Knobs for the tuners.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneOptions {
    /// Log-spaced weight grid size for the min-bound search.
    pub grid_points: usize,
    /// Smallest weight tried, as a fraction of `w_max`.
    pub w_floor_ratio: f64,
    /// Stand-in for `w_max` when the subgradient bounds coincide.
    pub w_ceiling: f64,
}

impl Default for TuneOptions {
    fn default() -> Self {
        TuneOptions {
            grid_points: 4096,
            w_floor_ratio: 1e-9,
            w_ceiling: 1e6,
        }
    }
}

/// Shift for `w = w_max`, where the admissible interval is a single point.
fn max_weight_gamma(storage: &StorageParams, bounds: &SubgradientBounds) -> f64 {
    let p = storage;
    (bounds.d_lo * (p.s_min - p.u_min) - bounds.d_hi * (p.s_max - p.u_max)) / (p.lambda * bounds.spread())
}

/// Max-weight tuning: `w = w_max` and the collapsed shift.
pub fn tune_max_weight(storage: &Storage, bounds: &SubgradientBounds) -> Result<OmgParams, TuneError> {
    let w = w_max(storage, bounds)?;
    let gamma = max_weight_gamma(storage, bounds);
    let (lo, hi) = kappa_interval(storage, bounds, w)?;
    let tol = 1e-9 * (1.0 + gamma.abs());
    if (gamma - lo).abs() > tol || (gamma - hi).abs() > tol {
        return Err(TuneError::NumericalFailure(format!(
            "max-weight shift {gamma} does not match collapsed interval [{lo}, {hi}]"
        )));
    }
    Ok(OmgParams {
        gamma,
        w,
        bounds: *bounds,
        certified_bound: subopt_bound(storage, gamma, w),
        method: TuneMethod::MaxWeight,
    })
}

/// Min-bound tuning over `0 < w <= w_max`.
///
/// The inner problem in `gamma` is solved exactly for every weight. The
/// outer problem is a dense log-spaced grid followed by golden-section
/// refinement in the bracket around the best grid point.
pub fn tune_min_bound(storage: &Storage, bounds: &SubgradientBounds, options: &TuneOptions) -> Result<OmgParams, TuneError> {
    let top = w_max(storage, bounds)?;
    let at_top = max_weight_gamma(storage, bounds);
    min_bound_search(storage, bounds, top, Some(at_top), options)
}

fn min_bound_search(
    storage: &Storage,
    bounds: &SubgradientBounds,
    top: f64,
    gamma_at_top: Option<f64>,
    options: &TuneOptions,
) -> Result<OmgParams, TuneError> {
    let inner = |w: f64| -> Result<(f64, f64), TuneError> {
        if w == top {
            if let Some(g) = gamma_at_top {
                return Ok((g, bound_terms(storage, g).m / w));
            }
        }
        let (lo, hi) = kappa_interval(storage, bounds, w)?;
        let (g, m) = min_numerator_on(storage, lo, hi);
        Ok((g, m / w))
    };

    let n = options.grid_points.max(2);
    let floor = top * options.w_floor_ratio;
    let ratio = (top / floor).ln();
    let mut grid: Vec<f64> = (0..n).map(|i| floor * (ratio * i as f64 / n as f64).exp()).collect();
    grid.push(top);

    let values = grid
        .par_iter()
        .map(|&w| inner(w).map(|(_, phi)| phi))
        .collect::<Result<Vec<f64>, _>>()?;
    let (best_idx, grid_best) = values
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    if !grid_best.is_finite() {
        return Err(TuneError::NumericalFailure("no finite bound on the weight grid".into()));
    }

    let a = grid[best_idx.saturating_sub(1)];
    let b = grid[(best_idx + 1).min(grid.len() - 1)];
    let phi = |w: f64| inner(w).map(|(_, v)| v).unwrap_or(f64::INFINITY);
    let (w_ref, phi_ref) = golden_section(phi, a, b, 1e-12);

    let w = if phi_ref < grid_best { w_ref } else { grid[best_idx] };
    let (gamma, bound) = inner(w)?;
    if !bound.is_finite() || bound > grid_best {
        return Err(TuneError::NumericalFailure(format!(
            "refined bound {bound} is worse than grid minimum {grid_best}"
        )));
    }
    Ok(OmgParams {
        gamma,
        w,
        bounds: *bounds,
        certified_bound: bound,
        method: TuneMethod::MinBound,
    })
}

/// Runs the requested tuner. Coinciding subgradient bounds leave the weight
/// unbounded; `options.w_ceiling` then stands in for `w_max` and the shift is
/// chosen to minimize the bound inside the (non-degenerate) interval.
pub fn tune(
    storage: &Storage,
    bounds: &SubgradientBounds,
    method: TuneMethod,
    options: &TuneOptions,
) -> Result<OmgParams, TuneError> {
    match (method, w_max(storage, bounds)) {
        (TuneMethod::MaxWeight, Ok(_)) => tune_max_weight(storage, bounds),
        (TuneMethod::MinBound, Ok(_)) => tune_min_bound(storage, bounds, options),
        (TuneMethod::Fixed, _) => Err(TuneError::Inadmissible("fixed parameters are not tuned".into())),
        (_, Err(TuneError::DegenerateSlope)) => {
            let top = options.w_ceiling;
            match method {
                TuneMethod::MaxWeight => {
                    let (lo, hi) = kappa_interval(storage, bounds, top)?;
                    let (gamma, m) = min_numerator_on(storage, lo, hi);
                    Ok(OmgParams {
                        gamma,
                        w: top,
                        bounds: *bounds,
                        certified_bound: m / top,
                        method,
                    })
                }
                _ => min_bound_search(storage, bounds, top, None, options),
            }
        }
        (_, Err(e)) => Err(e),
    }
}

/// Value-of-storage bracket.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VosInterval {
    pub lo: f64,
    pub hi: f64,
    pub j_no_storage: f64,
}

impl VosInterval {
    /// Upper bound on the fractional savings any policy can achieve.
    pub fn savings_upper_fraction(&self) -> Result<f64, TuneError> {
        if self.j_no_storage == 0.0 {
            return Err(TuneError::ZeroBaseline);
        }
        Ok(self.hi / self.j_no_storage)
    }
}

/// `[J_ns - J_omg, J_ns - J_omg + bound]`.
pub fn vos_interval(j_no_storage: f64, j_omg: f64, bound: f64) -> VosInterval {
    let lo = j_no_storage - j_omg;
    VosInterval {
        lo,
        hi: lo + bound,
        j_no_storage,
    }
}
