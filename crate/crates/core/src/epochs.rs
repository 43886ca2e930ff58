//! Regenerative-epoch statistics of a finite Markov chain and the
//! Markov-modulated sub-optimality bound.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::process::{MarkovChain, ProcessError};
use crate::storage::StorageParams;
use crate::tuning::bound_terms;

/// Moments of the return time `dt` to the reference state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub e_dt: f64,
    pub e_dt2: f64,
    pub e_lambda_dt: f64,
}

impl EpochStats {
    /// Statistics of an IID process viewed as a one-state chain.
    pub fn iid(lambda: f64) -> Self {
        EpochStats {
            e_dt: 1.0,
            e_dt2: 1.0,
            e_lambda_dt: lambda,
        }
    }
}

/// Exact epoch statistics from first-passage linear systems.
///
/// With `Q` the transition matrix restricted to non-return states, hitting
/// times `h` solve `(I - Q) h = 1`, second moments `m` solve
/// `(I - Q) m = 1 + 2 Q h`, and discounted hits `z` solve
/// `(I - lambda Q) z = lambda P[., r]`.
pub fn markov_epoch_stats(chain: &MarkovChain, return_state: usize, lambda: f64) -> Result<EpochStats, ProcessError> {
    chain.check()?;
    let n = chain.len();
    if return_state >= n {
        return Err(ProcessError::InvalidState(return_state));
    }
    let p = chain.transition();
    let others: Vec<usize> = (0..n).filter(|&j| j != return_state).collect();
    let k = others.len();
    let row_r = |j: usize| p[return_state][j];

    if k == 0 {
        return Ok(EpochStats::iid(lambda));
    }

    let q = DMatrix::from_fn(k, k, |a, b| p[others[a]][others[b]]);
    let eye = DMatrix::<f64>::identity(k, k);
    let lu = (&eye - &q).lu();
    let solve = |lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>, rhs: DVector<f64>| {
        lu.solve(&rhs).ok_or(ProcessError::NotIrreducible)
    };

    let h = solve(&lu, DVector::from_element(k, 1.0))?;
    let m = solve(&lu, DVector::from_element(k, 1.0) + 2.0 * &q * &h)?;
    let to_r = DVector::from_fn(k, |a, _| p[others[a]][return_state]);
    let z = (&eye - lambda * &q)
        .lu()
        .solve(&(lambda * to_r))
        .ok_or(ProcessError::NotIrreducible)?;

    let mut e_dt = 1.0;
    let mut e_dt2 = 1.0;
    let mut e_lambda_dt = lambda * row_r(return_state);
    for (a, &j) in others.iter().enumerate() {
        e_dt += row_r(j) * h[a];
        e_dt2 += row_r(j) * (2.0 * h[a] + m[a]);
        e_lambda_dt += lambda * row_r(j) * z[a];
    }
    Ok(EpochStats {
        e_dt,
        e_dt2,
        e_lambda_dt,
    })
}

/// Monte-Carlo estimate of the epoch statistics from `epochs` simulated
/// returns, started at the return state.
pub fn monte_carlo_epoch_stats(
    chain: &MarkovChain,
    return_state: usize,
    lambda: f64,
    epochs: usize,
    seed: u64,
) -> Result<EpochStats, ProcessError> {
    chain.check()?;
    if return_state >= chain.len() {
        return Err(ProcessError::InvalidState(return_state));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut s1, mut s2, mut sl) = (0.0, 0.0, 0.0);
    for _ in 0..epochs {
        let mut state = return_state;
        let mut dt: u64 = 0;
        loop {
            state = chain.next_state(state, rng.random::<f64>());
            dt += 1;
            if state == return_state {
                break;
            }
        }
        let d = dt as f64;
        s1 += d;
        s2 += d * d;
        sl += lambda.powf(d);
    }
    let n = epochs.max(1) as f64;
    Ok(EpochStats {
        e_dt: s1 / n,
        e_dt2: s2 / n,
        e_lambda_dt: sl / n,
    })
}

/// Certificate under Markov-modulated disturbances:
/// `((E[dt^2]/E[dt]) M_u + (lambda (1 - E[lambda^dt]) / E[dt]) M_b) / w`.
pub fn markov_bound(storage: &StorageParams, gamma: f64, w: f64, stats: &EpochStats) -> f64 {
    let t = bound_terms(storage, gamma);
    let a = stats.e_dt2 / stats.e_dt;
    let b = storage.lambda * (1.0 - stats.e_lambda_dt) / stats.e_dt;
    (a * t.m_u + b * t.m_b) / w
}
