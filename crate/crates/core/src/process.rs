//! Disturbance generators: IID draws, finite Markov chains, recorded traces
//! and a synthetic wind/price stand-in.
//!
//! Every generator is a value owned by one replication. Its output depends
//! only on `(seed, replication)`.

use std::collections::VecDeque;
use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::SupportBounds;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum ProcessError {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("transition row {row} sums to {sum}, expected 1")]
    RowSum { row: usize, sum: f64 },
    #[error("transition matrix must be square with one emission per state")]
    Shape,
    #[error("Markov chain is not irreducible")]
    NotIrreducible,
    #[error("state index {0} out of range")]
    InvalidState(usize),
    #[error("emission of state {0} lies outside the declared supports")]
    EmissionOutOfSupport(usize),
    #[error("trace line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("trace line {line}: time index jumps from {previous} to {found}")]
    Gap { line: u64, previous: u64, found: u64 },
    #[error("trace line {line}: time index {found} does not increase past {previous}")]
    NonMonotone { line: u64, previous: u64, found: u64 },
    #[error("trace is missing required column `{0}`")]
    MissingColumn(&'static str),
    #[error("trace is empty")]
    EmptyTrace,
    #[error("trace has {available} steps but {needed} were requested")]
    TraceTooShort { available: usize, needed: u64 },
    #[error("cannot read trace: {0}")]
    Io(String),
}

/// Marginal distribution of one disturbance coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Distribution {
    /// Parameterized by standard deviation; scale is `sigma / sqrt(2)`.
    Laplace { mean: f64, sigma: f64 },
    Uniform { lo: f64, hi: f64 },
    PointMass { value: f64 },
    Empirical { samples: Vec<f64> },
}

impl Distribution {
    pub fn check(&self) -> Result<(), ProcessError> {
        let bad = |m: &str| Err(ProcessError::InvalidDistribution(m.to_string()));
        match self {
            Distribution::Laplace { mean, sigma } => {
                if !(mean.is_finite() && sigma.is_finite() && *sigma > 0.0) {
                    return bad("laplace needs finite mean and sigma > 0");
                }
            }
            Distribution::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return bad("uniform needs finite lo <= hi");
                }
            }
            Distribution::PointMass { value } => {
                if !value.is_finite() {
                    return bad("point mass must be finite");
                }
            }
            Distribution::Empirical { samples } => {
                if samples.is_empty() || samples.iter().any(|x| !x.is_finite()) {
                    return bad("empirical needs at least one finite sample");
                }
            }
        }
        Ok(())
    }

    /// One draw, before truncation.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Distribution::Laplace { mean, sigma } => {
                let b = sigma / std::f64::consts::SQRT_2;
                let mut r = rng.random::<f64>();
                while r == 0.0 {
                    r = rng.random::<f64>();
                }
                let v = r - 0.5;
                mean - b * v.signum() * (1.0 - 2.0 * v.abs()).ln()
            }
            Distribution::Uniform { lo, hi } => {
                if lo == hi {
                    *lo
                } else {
                    lo + (hi - lo) * rng.random::<f64>()
                }
            }
            Distribution::PointMass { value } => *value,
            Distribution::Empirical { samples } => samples[rng.random_range(0..samples.len())],
        }
    }
}

/// Independent draws of `(delta, price)` clipped to `supports`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IidSpec {
    pub delta: Distribution,
    pub price: Distribution,
    /// When set, `(delta, price)` pairs are drawn jointly from these samples
    /// and the marginals above are ignored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint: Option<Vec<(f64, f64)>>,
    pub supports: SupportBounds,
}

impl IidSpec {
    pub fn check(&self) -> Result<(), ProcessError> {
        self.delta.check()?;
        self.price.check()?;
        if let Some(j) = &self.joint {
            if j.is_empty() || j.iter().any(|(d, p)| !d.is_finite() || !p.is_finite()) {
                return Err(ProcessError::InvalidDistribution("joint samples must be finite and non-empty".into()));
            }
        }
        self.supports
            .check()
            .map_err(|e| ProcessError::InvalidDistribution(e.to_string()))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let (d, p) = match &self.joint {
            Some(j) => j[rng.random_range(0..j.len())],
            None => {
                let d = self.delta.sample(rng);
                (d, self.price.sample(rng))
            }
        };
        (self.supports.clamp_delta(d), self.supports.clamp_price(p))
    }
}

/// Finite-state chain whose state determines `(delta, price)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkovChain {
    transition: Vec<Vec<f64>>,
    emissions: Vec<(f64, f64)>,
    #[serde(default)]
    initial: usize,
}

impl MarkovChain {
    pub fn new(transition: Vec<Vec<f64>>, emissions: Vec<(f64, f64)>, initial: usize) -> Result<Self, ProcessError> {
        let chain = MarkovChain {
            transition,
            emissions,
            initial,
        };
        chain.check()?;
        Ok(chain)
    }

    /// Row-stochastic to 1e-12 and irreducible.
    pub fn check(&self) -> Result<(), ProcessError> {
        let n = self.transition.len();
        if n == 0 || self.emissions.len() != n || self.transition.iter().any(|r| r.len() != n) {
            return Err(ProcessError::Shape);
        }
        if self.initial >= n {
            return Err(ProcessError::InvalidState(self.initial));
        }
        for (row, r) in self.transition.iter().enumerate() {
            let sum: f64 = r.iter().sum();
            if r.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
                return Err(ProcessError::RowSum { row, sum });
            }
        }
        if !self.is_irreducible() {
            return Err(ProcessError::NotIrreducible);
        }
        Ok(())
    }

    fn reach(&self, from: usize, reverse: bool) -> Vec<bool> {
        let n = self.len();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([from]);
        seen[from] = true;
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                let p = if reverse { self.transition[j][i] } else { self.transition[i][j] };
                if p > 0.0 && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen
    }

    fn is_irreducible(&self) -> bool {
        self.reach(0, false).iter().all(|&x| x) && self.reach(0, true).iter().all(|&x| x)
    }

    pub fn len(&self) -> usize {
        self.transition.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transition.is_empty()
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn emission(&self, state: usize) -> (f64, f64) {
        self.emissions[state]
    }

    /// Inverse-CDF transition from `state` given a uniform draw in `[0, 1)`.
    pub fn next_state(&self, state: usize, uniform: f64) -> usize {
        let row = &self.transition[state];
        let mut acc = 0.0;
        let mut last = state;
        for (j, &p) in row.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last = j;
                if uniform < acc {
                    return j;
                }
            }
        }
        last
    }

    pub fn check_supports(&self, supports: &SupportBounds) -> Result<(), ProcessError> {
        match self.emissions.iter().position(|&(d, p)| !supports.contains(d, p)) {
            Some(i) => Err(ProcessError::EmissionOutOfSupport(i)),
            None => Ok(()),
        }
    }

    /// Tight supports of the emissions.
    pub fn emission_supports(&self) -> SupportBounds {
        let fold = |f: fn(&(f64, f64)) -> f64| {
            self.emissions
                .iter()
                .map(f)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
        };
        SupportBounds::new(fold(|e| e.0), fold(|e| e.1))
    }
}

/// One transition followed by the emission of the new state.
pub fn markov_next<R: Rng + ?Sized>(chain: &MarkovChain, state: usize, rng: &mut R) -> (usize, (f64, f64)) {
    let next = chain.next_state(state, rng.random::<f64>());
    (next, chain.emission(next))
}

/// One step of a recorded trace. `q_plus`/`q_minus` override the balancing rates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: u64,
    pub delta: f64,
    pub price: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_plus: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_minus: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub has_price: bool,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Tight supports of the recorded values, including rate overrides.
    pub fn supports(&self) -> SupportBounds {
        let mut s = SupportBounds::new((f64::INFINITY, f64::NEG_INFINITY), (f64::INFINITY, f64::NEG_INFINITY));
        for r in &self.records {
            s.delta_min = s.delta_min.min(r.delta);
            s.delta_max = s.delta_max.max(r.delta);
            s.price_min = s.price_min.min(r.price);
            s.price_max = s.price_max.max(r.price);
            if let Some(q) = r.q_plus {
                s.q_plus_max = Some(s.q_plus_max.map_or(q, |m| m.max(q)));
            }
            if let Some(q) = r.q_minus {
                s.q_minus_max = Some(s.q_minus_max.map_or(q, |m| m.max(q)));
            }
        }
        s
    }
}

/// Parses a trace CSV with header `t,delta,price[,q_plus,q_minus]`.
///
/// `price` may be omitted unless `require_price` is set, in which case its
/// absence is `MissingColumn`. Times must run 1, 2, 3, ... without gaps.
/// Line numbers count the header as line 1.
pub fn load_trace<R: Read>(reader: R, require_price: bool) -> Result<Trace, ProcessError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| ProcessError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let t_col = col("t").ok_or(ProcessError::MissingColumn("t"))?;
    let d_col = col("delta").ok_or(ProcessError::MissingColumn("delta"))?;
    let p_col = col("price");
    if require_price && p_col.is_none() {
        return Err(ProcessError::MissingColumn("price"));
    }
    let qp_col = col("q_plus");
    let qm_col = col("q_minus");

    let mut records = Vec::new();
    let mut previous = 0u64;
    for row in rdr.records() {
        let row = row.map_err(|e| ProcessError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize, name: &str| -> Result<f64, ProcessError> {
            let raw = row.get(i).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| ProcessError::Parse {
                    line,
                    message: format!("column `{name}`: cannot parse {raw:?}"),
                })
        };
        let optional = |c: Option<usize>, name: &str| -> Result<Option<f64>, ProcessError> {
            match c {
                Some(i) if !row.get(i).unwrap_or("").is_empty() => field(i, name).map(Some),
                _ => Ok(None),
            }
        };
        let raw_t = row.get(t_col).unwrap_or("");
        let t: u64 = raw_t.parse().map_err(|_| ProcessError::Parse {
            line,
            message: format!("column `t`: cannot parse {raw_t:?}"),
        })?;
        if t <= previous {
            return Err(ProcessError::NonMonotone { line, previous, found: t });
        }
        if t != previous + 1 {
            return Err(ProcessError::Gap { line, previous, found: t });
        }
        previous = t;
        records.push(TraceRecord {
            t,
            delta: field(d_col, "delta")?,
            price: match p_col {
                Some(i) => field(i, "price")?,
                None => 0.0,
            },
            q_plus: optional(qp_col, "q_plus")?,
            q_minus: optional(qm_col, "q_minus")?,
        });
    }
    if records.is_empty() {
        return Err(ProcessError::EmptyTrace);
    }
    Ok(Trace {
        records,
        has_price: p_col.is_some(),
    })
}

pub fn load_trace_path(path: &Path, require_price: bool) -> Result<Trace, ProcessError> {
    let file = std::fs::File::open(path).map_err(|e| ProcessError::Io(format!("{}: {e}", path.display())))?;
    load_trace(std::io::BufReader::new(file), require_price)
}

/// Synthetic co-located wind farm: AR(1) imbalance and a daily price cycle
/// with Gaussian noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindPriceSpec {
    /// Stationary standard deviation of the imbalance.
    pub sigma_delta: f64,
    /// Lag-one autocorrelation of the imbalance.
    pub phi: f64,
    /// Imbalance is clipped to `+-clip_sigmas * sigma_delta`.
    pub clip_sigmas: f64,
    pub price_mean: f64,
    pub price_amplitude: f64,
    /// Hour of the daily price peak.
    pub peak_hour: f64,
    pub price_noise_sd: f64,
    pub price_min: f64,
    pub price_max: f64,
    pub steps_per_hour: u32,
}

impl Default for WindPriceSpec {
    fn default() -> Self {
        WindPriceSpec {
            sigma_delta: 20.1,
            phi: 0.8,
            clip_sigmas: 5.0,
            price_mean: 32.0,
            price_amplitude: 10.0,
            peak_hour: 18.0,
            price_noise_sd: 4.0,
            price_min: 5.0,
            price_max: 80.0,
            steps_per_hour: 1,
        }
    }
}

impl WindPriceSpec {
    pub fn check(&self) -> Result<(), ProcessError> {
        let ok = self.sigma_delta > 0.0
            && self.phi.abs() < 1.0
            && self.clip_sigmas > 0.0
            && self.price_noise_sd >= 0.0
            && self.price_min <= self.price_max
            && self.steps_per_hour >= 1
            && [self.price_mean, self.price_amplitude, self.peak_hour, self.price_min, self.price_max]
                .iter()
                .all(|x| x.is_finite());
        if ok {
            Ok(())
        } else {
            Err(ProcessError::InvalidDistribution("wind/price parameters out of range".into()))
        }
    }

    pub fn supports(&self) -> SupportBounds {
        let c = self.clip_sigmas * self.sigma_delta;
        SupportBounds::new((-c, c), (self.price_min, self.price_max))
    }
}

/// Any disturbance source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProcessSpec {
    Iid(IidSpec),
    Markov {
        chain: MarkovChain,
        /// Defaults to the emission range.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        supports: Option<SupportBounds>,
    },
    /// CSV playback; replications all see the same trace.
    Trace {
        path: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        supports: Option<SupportBounds>,
    },
    /// An already-loaded trace.
    Records {
        trace: Trace,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        supports: Option<SupportBounds>,
    },
    WindPrice(WindPriceSpec),
}

/// One step of disturbance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Realization {
    pub delta: f64,
    pub price: f64,
    pub q_plus: Option<f64>,
    pub q_minus: Option<f64>,
}

impl Realization {
    pub fn new(delta: f64, price: f64) -> Self {
        Realization {
            delta,
            price,
            q_plus: None,
            q_minus: None,
        }
    }
}

/// Deterministic RNG for replication `stream` of `seed`.
pub fn replication_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl ProcessSpec {
    /// Loads file-backed traces so the spec is self-contained.
    pub fn resolve(self, require_price: bool) -> Result<ProcessSpec, ProcessError> {
        match self {
            ProcessSpec::Trace { path, supports } => Ok(ProcessSpec::Records {
                trace: load_trace_path(Path::new(&path), require_price)?,
                supports,
            }),
            ProcessSpec::Records { trace, supports } => {
                if require_price && !trace.has_price {
                    return Err(ProcessError::MissingColumn("price"));
                }
                Ok(ProcessSpec::Records { trace, supports })
            }
            other => Ok(other),
        }
    }

    pub fn check(&self) -> Result<(), ProcessError> {
        match self {
            ProcessSpec::Iid(spec) => spec.check(),
            ProcessSpec::Markov { chain, supports } => {
                chain.check()?;
                match supports {
                    Some(s) => chain.check_supports(s),
                    None => Ok(()),
                }
            }
            ProcessSpec::Trace { .. } => Ok(()),
            ProcessSpec::Records { trace, supports } => {
                if trace.is_empty() {
                    return Err(ProcessError::EmptyTrace);
                }
                if let Some(s) = supports {
                    if let Some(i) = trace.records.iter().position(|r| !s.contains(r.delta, r.price)) {
                        return Err(ProcessError::EmissionOutOfSupport(i));
                    }
                }
                Ok(())
            }
            ProcessSpec::WindPrice(w) => w.check(),
        }
    }

    /// Compact supports of every realization the process can emit.
    pub fn supports(&self) -> Result<SupportBounds, ProcessError> {
        match self {
            ProcessSpec::Iid(spec) => Ok(spec.supports),
            ProcessSpec::Markov { chain, supports } => Ok(supports.unwrap_or_else(|| chain.emission_supports())),
            ProcessSpec::Trace { path, supports } => match supports {
                Some(s) => Ok(*s),
                None => Ok(load_trace_path(Path::new(path), false)?.supports()),
            },
            ProcessSpec::Records { trace, supports } => {
                let tight = trace.supports();
                Ok(match supports {
                    Some(s) => SupportBounds {
                        q_plus_max: s.q_plus_max.or(tight.q_plus_max),
                        q_minus_max: s.q_minus_max.or(tight.q_minus_max),
                        ..*s
                    },
                    None => tight,
                })
            }
            ProcessSpec::WindPrice(w) => Ok(w.supports()),
        }
    }

    /// The generator for one replication. Traces must already be resolved.
    pub fn stream(&self, seed: u64, replication: u64) -> Result<DisturbanceStream, ProcessError> {
        let rng = replication_rng(seed, replication);
        let state = match self {
            ProcessSpec::Iid(spec) => StreamState::Iid(spec.clone()),
            ProcessSpec::Markov { chain, .. } => StreamState::Markov {
                chain: chain.clone(),
                state: chain.initial(),
            },
            ProcessSpec::Trace { path, .. } => StreamState::Trace {
                trace: load_trace_path(Path::new(path), false)?,
                next: 0,
            },
            ProcessSpec::Records { trace, .. } => StreamState::Trace {
                trace: trace.clone(),
                next: 0,
            },
            ProcessSpec::WindPrice(w) => StreamState::WindPrice {
                spec: w.clone(),
                delta: None,
                t: 0,
            },
        };
        Ok(DisturbanceStream { rng, state })
    }

    /// Number of available steps, when bounded.
    pub fn horizon_limit(&self) -> Option<usize> {
        match self {
            ProcessSpec::Records { trace, .. } => Some(trace.len()),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
enum StreamState {
    Iid(IidSpec),
    Markov { chain: MarkovChain, state: usize },
    Trace { trace: Trace, next: usize },
    WindPrice { spec: WindPriceSpec, delta: Option<f64>, t: u64 },
}

/// A per-replication generator of realizations.
#[derive(Clone, Debug)]
pub struct DisturbanceStream {
    rng: ChaCha8Rng,
    state: StreamState,
}

impl DisturbanceStream {
    /// The next realization, or `None` when a trace is exhausted.
    pub fn next_realization(&mut self) -> Option<Realization> {
        let rng = &mut self.rng;
        match &mut self.state {
            StreamState::Iid(spec) => {
                let (d, p) = spec.sample(rng);
                Some(Realization::new(d, p))
            }
            StreamState::Markov { chain, state } => {
                let (next, (d, p)) = markov_next(chain, *state, rng);
                *state = next;
                Some(Realization::new(d, p))
            }
            StreamState::Trace { trace, next } => {
                let r = trace.records.get(*next)?;
                *next += 1;
                Some(Realization {
                    delta: r.delta,
                    price: r.price,
                    q_plus: r.q_plus,
                    q_minus: r.q_minus,
                })
            }
            StreamState::WindPrice { spec, delta, t } => {
                *t += 1;
                let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
                let d = match *delta {
                    None => spec.sigma_delta * std_normal.sample(rng),
                    Some(prev) => {
                        spec.phi * prev + spec.sigma_delta * (1.0 - spec.phi * spec.phi).sqrt() * std_normal.sample(rng)
                    }
                };
                *delta = Some(d);
                let hour = ((*t - 1) as f64 / f64::from(spec.steps_per_hour)) % 24.0;
                let cycle = (2.0 * std::f64::consts::PI * (hour - spec.peak_hour) / 24.0).cos();
                let p = spec.price_mean + spec.price_amplitude * cycle + spec.price_noise_sd * std_normal.sample(rng);
                let sup = spec.supports();
                Some(Realization::new(sup.clamp_delta(d), sup.clamp_price(p)))
            }
        }
    }

    /// Collects the next `n` realizations.
    pub fn take_realizations(&mut self, n: u64) -> Result<Vec<Realization>, ProcessError> {
        let mut out = Vec::with_capacity(n as usize);
        for _ in 0..n {
            match self.next_realization() {
                Some(r) => out.push(r),
                None => {
                    return Err(ProcessError::TraceTooShort {
                        available: out.len(),
                        needed: n,
                    })
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wide() -> SupportBounds {
        SupportBounds::new((-1e9, 1e9), (-1e9, 1e9))
    }

    #[test]
    fn point_mass_and_collapsed_uniform() {
        let spec = IidSpec {
            delta: Distribution::PointMass { value: 0.0 },
            price: Distribution::Uniform { lo: 2.0, hi: 2.0 },
            joint: None,
            supports: wide(),
        };
        let mut rng = replication_rng(1, 0);
        for _ in 0..10 {
            assert_eq!(spec.sample(&mut rng), (0.0, 2.0));
        }
    }

    #[test]
    fn laplace_moments() {
        let d = Distribution::Laplace { mean: 0.0, sigma: 0.149 };
        let mut rng = replication_rng(2024, 0);
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!(mean.abs() < 0.001, "mean {mean}");
        assert!((sd - 0.149).abs() < 0.002, "sd {sd}");
    }

    #[test]
    fn truncation_is_by_clipping() {
        let spec = IidSpec {
            delta: Distribution::Laplace { mean: 0.0, sigma: 5.0 },
            price: Distribution::Uniform { lo: -10.0, hi: 10.0 },
            joint: None,
            supports: SupportBounds::new((-1.0, 1.0), (0.0, 3.0)),
        };
        let mut rng = replication_rng(3, 0);
        let draws: Vec<_> = (0..10_000).map(|_| spec.sample(&mut rng)).collect();
        assert!(draws.iter().all(|&(d, p)| spec.supports.contains(d, p)));
        assert!(draws.iter().any(|&(d, _)| d == 1.0));
        assert!(draws.iter().any(|&(_, p)| p == 0.0));
    }

    #[test]
    fn same_seed_same_stream() {
        let p = ProcessSpec::WindPrice(WindPriceSpec::default());
        let a = p.stream(9, 3).unwrap().take_realizations(50).unwrap();
        let b = p.stream(9, 3).unwrap().take_realizations(50).unwrap();
        let c = p.stream(9, 4).unwrap().take_realizations(50).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn permutation_chain_alternates() {
        let c = MarkovChain::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![(0.0, 0.0), (1.0, 1.0)], 0).unwrap();
        let mut rng = replication_rng(0, 0);
        let mut s = 0;
        for k in 1..10 {
            let (next, e) = markov_next(&c, s, &mut rng);
            assert_eq!(next, k % 2);
            assert_eq!(e, c.emission(next));
            s = next;
        }
    }

    #[test]
    fn identity_chain_rejected() {
        let c = MarkovChain::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![(0.0, 0.0); 2], 0);
        assert_eq!(c, Err(ProcessError::NotIrreducible));
        let c = MarkovChain::new(vec![vec![0.5, 0.4], vec![0.5, 0.5]], vec![(0.0, 0.0); 2], 0);
        assert!(matches!(c, Err(ProcessError::RowSum { row: 0, .. })));
    }

    #[test]
    fn symmetric_chain_stationary_distribution() {
        let c = MarkovChain::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]], vec![(0.0, 0.0); 2], 0).unwrap();
        let mut rng = replication_rng(5, 0);
        let n = 1_000_000;
        let mut s = 0;
        let mut zeros = 0usize;
        for _ in 0..n {
            s = markov_next(&c, s, &mut rng).0;
            zeros += usize::from(s == 0);
        }
        assert!((zeros as f64 / n as f64 - 0.5).abs() < 0.002);
    }

    #[test]
    fn trace_happy_path() {
        let csv = "t,delta,price\n1,0.5,30\n2,-1.0,31.5\n3,0,29\n";
        let tr = load_trace(csv.as_bytes(), true).unwrap();
        assert_eq!(tr.len(), 3);
        assert_eq!(tr.records[1].delta, -1.0);
        let s = tr.supports();
        assert_eq!((s.delta_min, s.delta_max, s.price_min, s.price_max), (-1.0, 0.5, 29.0, 31.5));
    }

    #[test]
    fn trace_gap_reports_line() {
        let csv = "t,delta,price\n1,0,1\n2,0,1\n4,0,1\n";
        assert_eq!(
            load_trace(csv.as_bytes(), true),
            Err(ProcessError::Gap {
                line: 4,
                previous: 2,
                found: 4
            })
        );
        let csv = "t,delta,price\n1,0,1\n1,0,1\n";
        assert!(matches!(load_trace(csv.as_bytes(), true), Err(ProcessError::NonMonotone { line: 3, .. })));
    }

    #[test]
    fn trace_missing_price() {
        let csv = "t,delta\n1,0\n";
        assert_eq!(load_trace(csv.as_bytes(), true), Err(ProcessError::MissingColumn("price")));
        assert!(load_trace(csv.as_bytes(), false).is_ok());
        assert!(matches!(
            load_trace("t,delta,price\n1,x,1\n".as_bytes(), true),
            Err(ProcessError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn trace_rate_overrides() {
        let csv = "t,delta,price,q_plus,q_minus\n1,0,1,2,3\n2,0,1,5,1\n";
        let tr = load_trace(csv.as_bytes(), true).unwrap();
        let s = tr.supports();
        assert_eq!((s.q_plus_max, s.q_minus_max), (Some(5.0), Some(3.0)));
    }

    #[test]
    fn wind_price_stays_in_supports() {
        let spec = WindPriceSpec::default();
        let sup = spec.supports();
        let xs = ProcessSpec::WindPrice(spec).stream(1, 0).unwrap().take_realizations(5000).unwrap();
        assert!(xs.iter().all(|r| sup.contains(r.delta, r.price)));
        let mean = xs.iter().map(|r| r.delta).sum::<f64>() / xs.len() as f64;
        let sd = (xs.iter().map(|r| (r.delta - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
        assert!((sd - 20.1).abs() < 2.5, "sd {sd}");
    }
}
