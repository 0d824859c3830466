//! CDF representations, quantiles, and the 1-D Wasserstein distance.
//!
//! Two concrete CDFs are supported: [`StepCdf`], the right-continuous
//! empirical CDF of a sample, and [`GridFunction`], a mesh CDF that is
//! piecewise linear between cell centers, equal to the end values between
//! the outermost centers and the domain edges, and exactly `0` / `1` outside
//! the domain. Both are linear between their breakpoints, which lets
//! `∫|F − G|` be integrated exactly.

use std::str::FromStr;

use thiserror::Error;

use crate::randomness::{CounterRng, Domain};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error("empty sample")]
    EmptyInput,
    #[error("non-finite value {0} in input")]
    NonFinite(f64),
    #[error("invalid grid function: {0}")]
    InvalidGrid(String),
    #[error("invalid initial distribution: {0}")]
    InvalidDistribution(String),
    #[error("distance is unbounded: supports cannot be bracketed")]
    UnboundedDistance,
}

/// Standard normal CDF.
#[inline]
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal density.
#[inline]
pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// A distribution function that is linear between consecutive breakpoints,
/// vanishes left of `support().0` and equals one right of `support().1`.
pub trait Cdf {
    fn eval(&self, x: f64) -> f64;
    /// All points where the function may fail to be linear, ascending.
    fn breakpoints(&self) -> Vec<f64>;
    fn support(&self) -> (f64, f64);
}

/// Right-continuous empirical CDF `F(x) = #{i : xᵢ ≤ x} / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCdf {
    sorted: Vec<f64>,
}

pub fn empirical_cdf(positions: &[f64]) -> Result<StepCdf, MeasureError> {
    StepCdf::new(positions.to_vec())
}

impl StepCdf {
    pub fn new(mut points: Vec<f64>) -> Result<Self, MeasureError> {
        if points.is_empty() {
            return Err(MeasureError::EmptyInput);
        }
        if let Some(&x) = points.iter().find(|x| !x.is_finite()) {
            return Err(MeasureError::NonFinite(x));
        }
        points.sort_by(f64::total_cmp);
        Ok(Self { sorted: points })
    }

    /// Wraps an already sorted sample.
    pub(crate) fn from_sorted(sorted: Vec<f64>) -> Self {
        debug_assert!(sorted.windows(2).all(|w| w[0] <= w[1]));
        Self { sorted }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// CSV of the jump points, columns `x,F`; ties collapse to one row.
    pub fn to_csv(&self) -> String {
        let n = self.sorted.len() as f64;
        let mut out = String::from("x,F\n");
        for (k, x) in self.sorted.iter().enumerate() {
            if self.sorted.get(k + 1) != Some(x) {
                out.push_str(&format!("{x:.16e},{:.16e}\n", (k + 1) as f64 / n));
            }
        }
        out
    }

    /// Order statistics `x₍₁₎ ≤ … ≤ x₍ₙ₎`.
    pub fn order_statistics(&self) -> &[f64] {
        &self.sorted
    }

    /// Generalized inverse `inf{x : F(x) ≥ ξ}`.
    pub fn quantile(&self, xi: f64) -> f64 {
        let n = self.sorted.len();
        let nf = n as f64;
        let mut k = (xi * nf).ceil().clamp(1.0, nf) as usize;
        while k > 1 && (k - 1) as f64 / nf >= xi {
            k -= 1;
        }
        while k < n && (k as f64) / nf < xi {
            k += 1;
        }
        self.sorted[k - 1]
    }
}

impl Cdf for StepCdf {
    fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&p| p <= x) as f64 / self.sorted.len() as f64
    }

    fn breakpoints(&self) -> Vec<f64> {
        let mut b = self.sorted.clone();
        b.dedup();
        b
    }

    fn support(&self) -> (f64, f64) {
        (self.sorted[0], *self.sorted.last().unwrap())
    }
}

/// Mesh CDF with values at cell centers `x_min + (j + ½)·dx`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub x_min: f64,
    pub dx: f64,
    pub values: Vec<f64>,
}

/// Slack allowed on range and monotonicity checks for floating-point noise.
pub const GRID_TOLERANCE: f64 = 1e-12;

impl GridFunction {
    pub fn new(x_min: f64, x_max: f64, values: Vec<f64>) -> Result<Self, MeasureError> {
        if values.is_empty() {
            return Err(MeasureError::EmptyInput);
        }
        if !(x_min.is_finite() && x_max.is_finite() && x_min < x_max) {
            return Err(MeasureError::InvalidGrid(format!("bad domain [{x_min}, {x_max}]")));
        }
        let g = Self { x_min, dx: (x_max - x_min) / values.len() as f64, values };
        g.check()?;
        Ok(g)
    }

    /// Samples `f` at the cell centers.
    pub fn sample(x_min: f64, x_max: f64, cells: usize, f: impl Fn(f64) -> f64) -> Result<Self, MeasureError> {
        let dx = (x_max - x_min) / cells as f64;
        let values = (0..cells).map(|j| f(x_min + (j as f64 + 0.5) * dx)).collect();
        Self::new(x_min, x_max, values)
    }

    pub(crate) fn from_parts_unchecked(x_min: f64, dx: f64, values: Vec<f64>) -> Self {
        Self { x_min, dx, values }
    }

    /// Range `[0, 1]` and nondecreasing, within [`GRID_TOLERANCE`].
    pub fn check(&self) -> Result<(), MeasureError> {
        for (j, &v) in self.values.iter().enumerate() {
            if !v.is_finite() || !(-GRID_TOLERANCE..=1.0 + GRID_TOLERANCE).contains(&v) {
                return Err(MeasureError::InvalidGrid(format!("value {v} at cell {j} outside [0, 1]")));
            }
        }
        if let Some(j) = self.values.windows(2).position(|w| w[1] < w[0] - GRID_TOLERANCE) {
            return Err(MeasureError::InvalidGrid(format!("decreasing between cells {j} and {}", j + 1)));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.values.len()
    }

    pub fn x_max(&self) -> f64 {
        self.x_min + self.dx * self.values.len() as f64
    }

    #[inline]
    pub fn center(&self, j: usize) -> f64 {
        self.x_min + (j as f64 + 0.5) * self.dx
    }

    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(|j| self.center(j))
    }

    /// Generalized inverse of the piecewise-linear interpretation.
    pub fn quantile(&self, xi: f64) -> f64 {
        let j = self.values.partition_point(|&v| v < xi);
        if j == 0 {
            return self.x_min;
        }
        if j == self.values.len() {
            return self.x_max();
        }
        let (lo, hi) = (self.values[j - 1], self.values[j]);
        self.center(j - 1) + (xi - lo) / (hi - lo) * self.dx
    }

    /// Same grid, values mapped cell by cell.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.values.iter().map(|&u| f(u)).collect()
    }
}

impl Cdf for GridFunction {
    fn eval(&self, x: f64) -> f64 {
        let x_max = self.x_max();
        if x < self.x_min {
            return 0.0;
        }
        if x > x_max {
            return 1.0;
        }
        let s = (x - self.x_min) / self.dx - 0.5;
        if s <= 0.0 {
            return self.values[0];
        }
        let j = s.floor() as usize;
        if j + 1 >= self.values.len() {
            return *self.values.last().unwrap();
        }
        let frac = s - j as f64;
        self.values[j] + frac * (self.values[j + 1] - self.values[j])
    }

    fn breakpoints(&self) -> Vec<f64> {
        let mut b = Vec::with_capacity(self.values.len() + 2);
        b.push(self.x_min);
        b.extend(self.centers());
        b.push(self.x_max());
        b
    }

    fn support(&self) -> (f64, f64) {
        (self.x_min, self.x_max())
    }
}

/// Either concrete representation.
#[derive(Debug, Clone, Copy)]
pub enum AnyCdf<'a> {
    Step(&'a StepCdf),
    Grid(&'a GridFunction),
}

impl Cdf for AnyCdf<'_> {
    fn eval(&self, x: f64) -> f64 {
        match self {
            AnyCdf::Step(f) => f.eval(x),
            AnyCdf::Grid(g) => g.eval(x),
        }
    }
    fn breakpoints(&self) -> Vec<f64> {
        match self {
            AnyCdf::Step(f) => f.breakpoints(),
            AnyCdf::Grid(g) => g.breakpoints(),
        }
    }
    fn support(&self) -> (f64, f64) {
        match self {
            AnyCdf::Step(f) => f.support(),
            AnyCdf::Grid(g) => g.support(),
        }
    }
}

/// `∫ |F − G| dx`, integrated exactly over the merged breakpoint set.
pub fn w1<F: Cdf + ?Sized, G: Cdf + ?Sized>(f: &F, g: &G) -> f64 {
    let mut pts = f.breakpoints();
    pts.extend(g.breakpoints());
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts.windows(2)
        .map(|w| {
            let (lo, hi) = (w[0], w[1]);
            let len = hi - lo;
            // Both functions are linear on (lo, hi); two interior samples pin the difference.
            let a = lo + 0.25 * len;
            let b = lo + 0.75 * len;
            let da = f.eval(a) - g.eval(a);
            let db = f.eval(b) - g.eval(b);
            let slope = (db - da) / (0.5 * len);
            let d0 = da - 0.25 * len * slope;
            let d1 = db + 0.25 * len * slope;
            abs_linear_integral(d0, d1, len)
        })
        .sum()
}

/// `∫₀ᴸ |d(s)| ds` for `d` linear from `d0` to `d1`.
#[inline]
pub(crate) fn abs_linear_integral(d0: f64, d1: f64, len: f64) -> f64 {
    if d0 * d1 >= 0.0 {
        0.5 * (d0.abs() + d1.abs()) * len
    } else {
        0.5 * (d0 * d0 + d1 * d1) / (d0.abs() + d1.abs()) * len
    }
}

/// Coupling metric between a mesh CDF and an empirical CDF.
pub fn l1_cdf_distance(u: &GridFunction, f: &StepCdf) -> f64 {
    w1(u, f)
}

/// Equal-size samples: `(1/n) Σ |x₍ᵢ₎ − y₍ᵢ₎|`.
pub fn w1_sorted_samples(x: &StepCdf, y: &StepCdf) -> f64 {
    assert_eq!(x.len(), y.len(), "samples must have equal size");
    let n = x.len() as f64;
    x.order_statistics().iter().zip(y.order_statistics()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n
}

/// One component of an initial law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Component {
    PointMass(f64),
    Uniform(f64, f64),
    Gaussian { mean: f64, sd: f64 },
}

/// `ψ(z) = zΦ(z) + φ(z)`, the antiderivative of `Φ`.
#[inline]
fn psi(z: f64) -> f64 {
    z * norm_cdf(z) + norm_pdf(z)
}

impl Component {
    fn cdf(&self, x: f64) -> f64 {
        match *self {
            Component::PointMass(x0) => (x >= x0) as u8 as f64,
            Component::Uniform(a, b) => ((x - a) / (b - a)).clamp(0.0, 1.0),
            Component::Gaussian { mean, sd } => norm_cdf((x - mean) / sd),
        }
    }

    /// `∫_{-∞}^x F`.
    fn integrated_cdf(&self, x: f64) -> f64 {
        match *self {
            Component::PointMass(x0) => (x - x0).max(0.0),
            Component::Uniform(a, b) => {
                if x <= a {
                    0.0
                } else if x >= b {
                    x - 0.5 * (a + b)
                } else {
                    (x - a) * (x - a) / (2.0 * (b - a))
                }
            }
            Component::Gaussian { mean, sd } => sd * psi((x - mean) / sd),
        }
    }

    /// CDF of the component convolved with a centered Gaussian of variance `var`.
    fn smoothed_cdf(&self, x: f64, var: f64) -> f64 {
        if var <= 0.0 {
            return self.cdf(x);
        }
        let tau = var.sqrt();
        match *self {
            Component::PointMass(x0) => norm_cdf((x - x0) / tau),
            Component::Gaussian { mean, sd } => norm_cdf((x - mean) / (sd * sd + var).sqrt()),
            Component::Uniform(a, b) => tau / (b - a) * (psi((x - a) / tau) - psi((x - b) / tau)),
        }
    }

    fn effective_support(&self) -> (f64, f64) {
        match *self {
            Component::PointMass(x0) => (x0, x0),
            Component::Uniform(a, b) => (a, b),
            Component::Gaussian { mean, sd } => (mean - 6.0 * sd, mean + 6.0 * sd),
        }
    }

    fn sample(&self, rng: &CounterRng, counter: u64) -> f64 {
        match *self {
            Component::PointMass(x0) => x0,
            Component::Uniform(a, b) => a + (b - a) * rng.uniform(counter),
            Component::Gaussian { mean, sd } => mean + sd * rng.normal(counter),
        }
    }

    fn validate(&self) -> Result<(), MeasureError> {
        let ok = match *self {
            Component::PointMass(x0) => x0.is_finite(),
            Component::Uniform(a, b) => a.is_finite() && b.is_finite() && a < b,
            Component::Gaussian { mean, sd } => mean.is_finite() && sd.is_finite() && sd > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(MeasureError::InvalidDistribution(format!("{self:?}")))
        }
    }
}

/// Finite mixture of point masses, uniforms and Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialDistribution {
    components: Vec<(f64, Component)>,
}

impl InitialDistribution {
    pub fn single(c: Component) -> Result<Self, MeasureError> {
        Self::mixture(vec![(1.0, c)])
    }

    pub fn point_mass(x0: f64) -> Self {
        Self { components: vec![(1.0, Component::PointMass(x0))] }
    }

    /// Weights are normalized to sum to one.
    pub fn mixture(components: Vec<(f64, Component)>) -> Result<Self, MeasureError> {
        if components.is_empty() {
            return Err(MeasureError::InvalidDistribution("no components".into()));
        }
        let total: f64 = components.iter().map(|(w, _)| *w).sum();
        for (w, c) in &components {
            if !(w.is_finite() && *w > 0.0) {
                return Err(MeasureError::InvalidDistribution(format!("weight {w}")));
            }
            c.validate()?;
        }
        Ok(Self { components: components.into_iter().map(|(w, c)| (w / total, c)).collect() })
    }

    pub fn components(&self) -> &[(f64, Component)] {
        &self.components
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.components.iter().map(|(w, c)| w * c.cdf(x)).sum()
    }

    pub fn integrated_cdf(&self, x: f64) -> f64 {
        self.components.iter().map(|(w, c)| w * c.integrated_cdf(x)).sum()
    }

    /// `(F ⋆ N(0, var))(x)`.
    pub fn smoothed_cdf(&self, x: f64, var: f64) -> f64 {
        self.components.iter().map(|(w, c)| w * c.smoothed_cdf(x, var)).sum()
    }

    /// Support hull; Gaussians are cut at six standard deviations.
    pub fn effective_support(&self) -> (f64, f64) {
        self.components.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, c)| {
            let (a, b) = c.effective_support();
            (lo.min(a), hi.max(b))
        })
    }

    /// `n` i.i.d. draws; draw `i` uses counters derived from `i` only.
    pub fn sample(&self, n: usize, seed: u64, stream: u64) -> Vec<f64> {
        let rng = CounterRng::new(seed, stream, Domain::Sampler);
        (0..n as u64)
            .map(|i| {
                let pick = rng.uniform(3 * i);
                let mut acc = 0.0;
                let mut chosen = self.components.last().unwrap().1;
                for (w, c) in &self.components {
                    acc += w;
                    if pick < acc {
                        chosen = *c;
                        break;
                    }
                }
                chosen.sample(&rng, 3 * i + 1)
            })
            .collect()
    }

    /// Cell averages of the CDF on a uniform grid.
    pub fn grid_cell_averages(&self, x_min: f64, x_max: f64, cells: usize) -> Result<GridFunction, MeasureError> {
        let dx = (x_max - x_min) / cells as f64;
        let values = (0..cells)
            .map(|j| {
                let lo = x_min + j as f64 * dx;
                let hi = lo + dx;
                if self.cdf(hi) <= 0.0 {
                    0.0
                } else if self.cdf(lo) >= 1.0 {
                    1.0
                } else {
                    ((self.integrated_cdf(hi) - self.integrated_cdf(lo)) / dx).clamp(0.0, 1.0)
                }
            })
            .collect();
        GridFunction::new(x_min, x_max, values)
    }
}

impl FromStr for InitialDistribution {
    type Err = MeasureError;

    /// `point(x)`, `uniform(a, b)`, `gaussian(mean, sd)`, or a `+`-separated
    /// mixture of `w*component` terms.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |m: String| MeasureError::InvalidDistribution(m);
        let mut terms = Vec::new();
        let mut depth = 0i32;
        let mut start = 0;
        for (i, ch) in s.char_indices() {
            match ch {
                '(' => depth += 1,
                ')' => depth -= 1,
                '+' if depth == 0 => {
                    terms.push(&s[start..i]);
                    start = i + 1;
                }
                _ => {}
            }
        }
        terms.push(&s[start..]);
        let mut components = Vec::new();
        for term in terms {
            let term = term.trim();
            let (weight, body) = match term.find('*') {
                Some(star) if !term[..star].contains('(') => {
                    let w: f64 = term[..star].trim().parse().map_err(|_| bad(format!("bad weight in `{term}`")))?;
                    (w, term[star + 1..].trim())
                }
                _ => (1.0, term),
            };
            let open = body.find('(').ok_or_else(|| bad(format!("expected `name(args)`, got `{body}`")))?;
            if !body.ends_with(')') {
                return Err(bad(format!("missing `)` in `{body}`")));
            }
            let name = body[..open].trim();
            let args: Vec<f64> = body[open + 1..body.len() - 1]
                .split(',')
                .map(|a| a.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| bad(format!("bad arguments in `{body}`")))?;
            let c = match (name, args.as_slice()) {
                ("point", [x0]) => Component::PointMass(*x0),
                ("uniform", [a, b]) => Component::Uniform(*a, *b),
                ("gaussian", [m, sd]) => Component::Gaussian { mean: *m, sd: *sd },
                _ => return Err(bad(format!("unknown component `{body}`"))),
            };
            components.push((weight, c));
        }
        Self::mixture(components)
    }
}
