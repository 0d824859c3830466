//! Reproducible Brownian paths.
//!
//! Every Gaussian draw is a pure function of `(seed, stream, counter)`, so
//! paths can be generated in any order, on any number of workers, and come
//! out bit-identical.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RandomnessError {
    #[error("invalid path arguments: {0}")]
    InvalidArgument(String),
    #[error("insert time {0} duplicates an existing grid node")]
    GridConflict(f64),
    #[error("insert time {0} lies outside the open interval (0, T)")]
    OutOfRange(f64),
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Domain tags keep increments, bridge draws and samplers from sharing counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Increment = 1,
    Bridge = 2,
    Sampler = 3,
}

/// Stateless counter-based generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u64, domain: Domain) -> Self {
        let key = mix(mix(mix(seed) ^ stream) ^ (domain as u64).wrapping_mul(GOLDEN));
        Self { key }
    }

    #[inline]
    pub fn bits(&self, counter: u64) -> u64 {
        mix(self.key ^ mix(counter.wrapping_mul(0xD6E8_FEB8_6659_FD93)))
    }

    /// Uniform on the open interval `(0, 1)`.
    #[inline]
    pub fn uniform(&self, counter: u64) -> f64 {
        ((self.bits(counter) >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Standard normal via Box–Muller on counters `2c` and `2c + 1`.
    #[inline]
    pub fn normal(&self, counter: u64) -> f64 {
        let u1 = self.uniform(counter.wrapping_mul(2));
        let u2 = self.uniform(counter.wrapping_mul(2).wrapping_add(1));
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// A sampled Brownian path on an increasing time grid starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    pub t_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub seed: u64,
    pub stream_id: u64,
}

impl BrownianPath {
    pub fn horizon(&self) -> f64 {
        *self.t_grid.last().expect("paths are never empty")
    }

    pub fn steps(&self) -> usize {
        self.t_grid.len() - 1
    }

    /// Increment over grid interval `k`.
    #[inline]
    pub fn increment(&self, k: usize) -> f64 {
        self.values[k + 1] - self.values[k]
    }

    /// Value at a grid node equal to `t`, if any.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        self.t_grid
            .binary_search_by(|x| x.total_cmp(&t))
            .ok()
            .map(|i| self.values[i])
    }

    /// Linear interpolation between grid nodes (exact on nodes).
    pub fn interpolate(&self, t: f64) -> f64 {
        match self.t_grid.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(i) => self.values[i],
            Err(0) => self.values[0],
            Err(i) if i >= self.t_grid.len() => *self.values.last().unwrap(),
            Err(i) => {
                let (t0, t1) = (self.t_grid[i - 1], self.t_grid[i]);
                let (w0, w1) = (self.values[i - 1], self.values[i]);
                w0 + (t - t0) / (t1 - t0) * (w1 - w0)
            }
        }
    }

    /// CSV dump with columns `t,w`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,w\n");
        for (t, w) in self.t_grid.iter().zip(&self.values) {
            out.push_str(&format!("{t:.16e},{w:.16e}\n"));
        }
        out
    }

    /// A path with the same grid and provenance but `shift(t)` added to every value.
    pub fn shifted(&self, shift: impl Fn(f64) -> f64) -> Self {
        Self {
            values: self.t_grid.iter().zip(&self.values).map(|(&t, &w)| w + shift(t)).collect(),
            ..self.clone()
        }
    }
}

pub fn sample_path(seed: u64, stream_id: u64, horizon: f64, steps: usize) -> Result<BrownianPath, RandomnessError> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(RandomnessError::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    if steps == 0 {
        return Err(RandomnessError::InvalidArgument("steps must be at least 1".into()));
    }
    let rng = CounterRng::new(seed, stream_id, Domain::Increment);
    let dt = horizon / steps as f64;
    let scale = dt.sqrt();
    let mut t_grid = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity(steps + 1);
    t_grid.push(0.0);
    values.push(0.0);
    let mut w = 0.0;
    for k in 0..steps {
        w += scale * rng.normal(k as u64);
        values.push(w);
        t_grid.push(if k + 1 == steps { horizon } else { (k + 1) as f64 * dt });
    }
    Ok(BrownianPath { t_grid, values, seed, stream_id })
}

/// Brownian-bridge draw at `s ∈ (t1, t2)` conditioned on the endpoints.
///
/// The Gaussian is keyed by the bit pattern of `s`, so the draw does not
/// depend on which other points have been inserted.
pub fn bridge_value(seed: u64, stream_id: u64, (t1, w1): (f64, f64), (t2, w2): (f64, f64), s: f64) -> f64 {
    let rng = CounterRng::new(seed, stream_id, Domain::Bridge);
    let span = t2 - t1;
    let mean = w1 + (s - t1) / span * (w2 - w1);
    let var = (t2 - s) * (s - t1) / span;
    mean + var.max(0.0).sqrt() * rng.normal(s.to_bits())
}

/// Inserts `insert_times` by sequential Brownian-bridge sampling. Original nodes are unchanged.
pub fn refine_path(path: &BrownianPath, insert_times: &[f64]) -> Result<BrownianPath, RandomnessError> {
    let horizon = path.horizon();
    let mut inserts: Vec<f64> = insert_times.to_vec();
    inserts.sort_by(f64::total_cmp);
    for w in inserts.windows(2) {
        if w[0] == w[1] {
            return Err(RandomnessError::GridConflict(w[0]));
        }
    }
    for &s in &inserts {
        if !(s > 0.0 && s < horizon) {
            return Err(RandomnessError::OutOfRange(s));
        }
        if path.t_grid.binary_search_by(|x| x.total_cmp(&s)).is_ok() {
            return Err(RandomnessError::GridConflict(s));
        }
    }

    let mut t_grid = Vec::with_capacity(path.t_grid.len() + inserts.len());
    let mut values = Vec::with_capacity(t_grid.capacity());
    let mut next = inserts.iter().peekable();
    for k in 0..path.t_grid.len() {
        let (t, w) = (path.t_grid[k], path.values[k]);
        while let Some(&&s) = next.peek() {
            if s >= t {
                break;
            }
            let left = (*t_grid.last().unwrap(), *values.last().unwrap());
            let v = bridge_value(path.seed, path.stream_id, left, (t, w), s);
            t_grid.push(s);
            values.push(v);
            next.next();
        }
        t_grid.push(t);
        values.push(w);
    }
    Ok(BrownianPath { t_grid, values, seed: path.seed, stream_id: path.stream_id })
}

/// Role of a stream within one replica.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamRole {
    Common,
    InitialPositions,
    Idiosyncratic(usize),
}

/// Packs `(replica, role)` into a stream id; distinct inputs give distinct ids.
pub fn stream_id(replica: u32, role: StreamRole) -> u64 {
    let low = match role {
        StreamRole::Common => 0u64,
        StreamRole::InitialPositions => 1,
        StreamRole::Idiosyncratic(i) => {
            assert!(i < (1 << 31), "particle index too large for stream packing");
            2 + i as u64
        }
    };
    ((replica as u64) << 32) | low
}

/// Common path plus one idiosyncratic path per particle.
#[derive(Debug, Clone)]
pub struct NoiseBundle {
    pub common: BrownianPath,
    pub idiosyncratic: Vec<BrownianPath>,
    pub replica: u32,
}

impl NoiseBundle {
    pub fn generate(seed: u64, replica: u32, n: usize, horizon: f64, steps: usize) -> Result<Self, RandomnessError> {
        let common = sample_path(seed, stream_id(replica, StreamRole::Common), horizon, steps)?;
        let idiosyncratic = (0..n)
            .map(|i| sample_path(seed, stream_id(replica, StreamRole::Idiosyncratic(i)), horizon, steps))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { common, idiosyncratic, replica })
    }

    /// Same idiosyncratic paths, different common path.
    pub fn with_common(mut self, common: BrownianPath) -> Self {
        self.common = common;
        self
    }

    pub fn n(&self) -> usize {
        self.idiosyncratic.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_dump_lists_every_node() {
        let p = sample_path(3, 0, 1.0, 4).unwrap();
        let csv = p.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,w");
        assert_eq!(lines.len(), 6);
        assert!(lines[1].starts_with("0.0000000000000000e0,0.0000000000000000e0"));
    }

    #[test]
    fn starts_at_zero_and_is_deterministic() {
        let a = sample_path(7, 3, 1.0, 100).unwrap();
        let b = sample_path(7, 3, 1.0, 100).unwrap();
        assert_eq!(a.values[0], 0.0);
        assert_eq!(a, b);
        assert_eq!(a.horizon(), 1.0);
        let c = sample_path(7, 4, 1.0, 100).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn argument_validation() {
        assert!(sample_path(0, 0, 0.0, 10).is_err());
        assert!(sample_path(0, 0, 1.0, 0).is_err());
    }

    #[test]
    fn increment_variance_band() {
        // 10^5 increments with dt = 0.01, collected across streams.
        let mut xs = Vec::with_capacity(100_000);
        for stream in 0..100 {
            let p = sample_path(2024, stream, 10.0, 1000).unwrap();
            xs.extend((0..p.steps()).map(|k| p.increment(k)));
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((0.0094..=0.0106).contains(&var), "variance {var}");
    }

    #[test]
    fn bridge_midpoint_is_symmetric() {
        let path = BrownianPath { t_grid: vec![0.0, 1.0], values: vec![0.0, 0.0], seed: 1, stream_id: 0 };
        // Conditional mean 0: average over many replicas.
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let reps = 100_000;
        for seed in 0..reps {
            let p = BrownianPath { seed, ..path.clone() };
            let r = refine_path(&p, &[0.5]).unwrap();
            sum += r.values[1];
            sumsq += r.values[1] * r.values[1];
        }
        let n = reps as f64;
        let mean = sum / n;
        let var = sumsq / n - mean * mean;
        // sd of the mean is 0.5/sqrt(n); sd of the variance estimate ~ 0.25*sqrt(2/n).
        assert!(mean.abs() < 3.0 * 0.5 / n.sqrt(), "mean {mean}");
        assert!((var - 0.25).abs() < 3.0 * 0.25 * (2.0 / n).sqrt(), "var {var}");
    }

    #[test]
    fn refinement_keeps_original_nodes() {
        let p = sample_path(11, 5, 1.0, 10).unwrap();
        let r = refine_path(&p, &[0.05, 0.55, 0.57, 0.999]).unwrap();
        assert_eq!(r.t_grid.len(), 15);
        assert!(r.t_grid.windows(2).all(|w| w[0] < w[1]));
        for (t, w) in p.t_grid.iter().zip(&p.values) {
            assert_eq!(r.value_at(*t), Some(*w));
        }
        assert_eq!(r, refine_path(&p, &[0.999, 0.57, 0.55, 0.05]).unwrap());
    }

    #[test]
    fn refinement_errors() {
        let p = sample_path(11, 5, 1.0, 10).unwrap();
        assert_eq!(refine_path(&p, &[0.5]), Err(RandomnessError::GridConflict(0.5)));
        assert_eq!(refine_path(&p, &[0.25, 0.25]), Err(RandomnessError::GridConflict(0.25)));
        assert_eq!(refine_path(&p, &[1.0]), Err(RandomnessError::OutOfRange(1.0)));
        assert_eq!(refine_path(&p, &[-0.1]), Err(RandomnessError::OutOfRange(-0.1)));
    }

    #[test]
    fn stream_ids_are_distinct() {
        let mut ids = vec![stream_id(0, StreamRole::Common), stream_id(0, StreamRole::InitialPositions)];
        ids.extend((0..1000).map(|i| stream_id(0, StreamRole::Idiosyncratic(i))));
        ids.push(stream_id(1, StreamRole::Common));
        let mut sorted = ids.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), ids.len());
    }

    #[test]
    fn bundle_layout() {
        let nb = NoiseBundle::generate(3, 2, 4, 1.0, 8).unwrap();
        assert_eq!(nb.n(), 4);
        let mut ids: Vec<u64> = nb.idiosyncratic.iter().map(|p| p.stream_id).collect();
        ids.push(nb.common.stream_id);
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 5);
    }
}
