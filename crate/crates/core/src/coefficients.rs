//! Model coefficients `b`, `σ`, `γ` on `[0, 1]` and their integral transforms
//!
//! ```text
//! B(r) = ∫₀ʳ b          Σ(r) = ½∫₀ʳ σ²      Γ(r) = ½∫₀ʳ γ²
//! G(r) = ∫₀ʳ γ          S(r) = ∫₀ʳ σ
//! ```
//!
//! Each transform is tabulated at the nodes `k/K` with an 8-point
//! Gauss–Legendre rule per subinterval; off-node values integrate from the
//! nearest lower node with the same rule.

use thiserror::Error;

use crate::expr::CoefficientExpr;
use crate::quadrature::gl8;

/// Density of the validation sample grid relative to the table resolution.
pub const SAMPLE_FACTOR: usize = 10;
/// Out-of-range tolerance for transform arguments; inside it values clamp.
pub const DOMAIN_TOLERANCE: f64 = 1e-12;
pub const MIN_TABLE_RESOLUTION: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoefficientError {
    #[error("table resolution {0} is below the minimum of {MIN_TABLE_RESOLUTION}")]
    Resolution(usize),
    #[error("coefficient `{name}` is not finite at a = {at}")]
    NotEvaluable { name: &'static str, at: f64 },
    #[error("σ is degenerate: sampled inf σ = {inf} ≤ 0")]
    NondegeneracyViolated { inf: f64 },
    #[error("γ is not positive: sampled inf γ = {inf} ≤ 0")]
    PositivityViolated { inf: f64 },
    #[error("argument {0} lies outside [0, 1]")]
    Domain(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transform {
    /// `B(r) = ∫₀ʳ b`
    B,
    /// `Σ(r) = ½∫₀ʳ σ²`
    Sigma,
    /// `Γ(r) = ½∫₀ʳ γ²`
    Gamma,
    /// `G(r) = ∫₀ʳ γ`
    G,
    /// `S(r) = ∫₀ʳ σ`
    S,
}

impl Transform {
    pub const ALL: [Transform; 5] =
        [Transform::B, Transform::Sigma, Transform::Gamma, Transform::G, Transform::S];

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub inf_sigma: f64,
    pub inf_gamma: f64,
    pub sup_abs_b: f64,
    pub sup_abs_sigma: f64,
    pub sup_abs_gamma: f64,
    /// Sampled `inf σ`.
    pub c_sigma: f64,
    /// Violations that were downgraded because degenerate coefficients were allowed.
    pub warnings: Vec<CoefficientError>,
}

/// Immutable coefficient bundle; share it freely across threads.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    pub b: CoefficientExpr,
    pub sigma: CoefficientExpr,
    pub gamma: CoefficientExpr,
    pub b_prime: CoefficientExpr,
    pub gamma_prime: CoefficientExpr,
    resolution: usize,
    tables: [Vec<f64>; 5],
    samples: Samples,
}

/// Coefficient values on the dense grid `k / (SAMPLE_FACTOR·K)`.
#[derive(Debug, Clone)]
pub struct Samples {
    pub grid: Vec<f64>,
    pub b: Vec<f64>,
    pub sigma: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl CoefficientSet {
    pub fn build(
        b: CoefficientExpr,
        sigma: CoefficientExpr,
        gamma: CoefficientExpr,
        resolution: usize,
    ) -> Result<Self, CoefficientError> {
        if resolution < MIN_TABLE_RESOLUTION {
            return Err(CoefficientError::Resolution(resolution));
        }
        let m = SAMPLE_FACTOR * resolution;
        let grid: Vec<f64> = (0..=m).map(|k| k as f64 / m as f64).collect();
        let sample = |e: &CoefficientExpr, name: &'static str| -> Result<Vec<f64>, CoefficientError> {
            grid.iter()
                .map(|&a| {
                    let v = e.eval(a);
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(CoefficientError::NotEvaluable { name, at: a })
                    }
                })
                .collect()
        };
        let samples = Samples {
            b: sample(&b, "b")?,
            sigma: sample(&sigma, "sigma")?,
            gamma: sample(&gamma, "gamma")?,
            grid,
        };

        let mut cs = Self {
            b_prime: b.derivative(),
            gamma_prime: gamma.derivative(),
            b,
            sigma,
            gamma,
            resolution,
            tables: Default::default(),
            samples,
        };
        let rule = gl8();
        let h = 1.0 / resolution as f64;
        for which in Transform::ALL {
            let mut table = Vec::with_capacity(resolution + 1);
            let mut acc = 0.0;
            table.push(0.0);
            for k in 0..resolution {
                let lo = k as f64 * h;
                let hi = (k + 1) as f64 * h;
                acc += rule.integrate(lo, hi, |a| cs.integrand(which, a));
                if !acc.is_finite() {
                    return Err(CoefficientError::NotEvaluable { name: which.name(), at: hi });
                }
                table.push(acc);
            }
            cs.tables[which.index()] = table;
        }
        Ok(cs)
    }

    /// Parses the three expressions and builds the tables.
    pub fn from_sources(b: &str, sigma: &str, gamma: &str, resolution: usize) -> Result<Self, crate::Error> {
        Ok(Self::build(b.parse()?, sigma.parse()?, gamma.parse()?, resolution)?)
    }

    /// Constant coefficients `(b₀, σ₀, γ₀)`.
    pub fn constant(b: f64, sigma: f64, gamma: f64) -> Self {
        Self::build(
            CoefficientExpr::constant(b),
            CoefficientExpr::constant(sigma),
            CoefficientExpr::constant(gamma),
            MIN_TABLE_RESOLUTION,
        )
        .expect("constant coefficients are always evaluable")
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn samples(&self) -> &Samples {
        &self.samples
    }

    pub fn table(&self, which: Transform) -> &[f64] {
        &self.tables[which.index()]
    }

    #[inline]
    fn integrand(&self, which: Transform, a: f64) -> f64 {
        match which {
            Transform::B => self.b.eval(a),
            Transform::Sigma => {
                let s = self.sigma.eval(a);
                0.5 * s * s
            }
            Transform::Gamma => {
                let g = self.gamma.eval(a);
                0.5 * g * g
            }
            Transform::G => self.gamma.eval(a),
            Transform::S => self.sigma.eval(a),
        }
    }

    /// Checks non-degeneracy of `σ` and positivity of `γ` on the dense sample grid.
    pub fn validate(&self, allow_degenerate: bool) -> Result<ValidationReport, CoefficientError> {
        let s = &self.samples;
        let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let inf_sigma = min(&s.sigma);
        let inf_gamma = min(&s.gamma);
        let mut warnings = Vec::new();
        for violation in [
            (inf_sigma <= 0.0).then_some(CoefficientError::NondegeneracyViolated { inf: inf_sigma }),
            (inf_gamma <= 0.0).then_some(CoefficientError::PositivityViolated { inf: inf_gamma }),
        ]
        .into_iter()
        .flatten()
        {
            if !allow_degenerate {
                return Err(violation);
            }
            warnings.push(violation);
        }
        Ok(ValidationReport {
            inf_sigma,
            inf_gamma,
            sup_abs_b: sup(&s.b),
            sup_abs_sigma: sup(&s.sigma),
            sup_abs_gamma: sup(&s.gamma),
            c_sigma: inf_sigma,
            warnings,
        })
    }

    /// Evaluates a transform at `r ∈ [0, 1]`, clamping within [`DOMAIN_TOLERANCE`].
    pub fn eval_transform(&self, which: Transform, r: f64) -> Result<f64, CoefficientError> {
        if !(-DOMAIN_TOLERANCE..=1.0 + DOMAIN_TOLERANCE).contains(&r) {
            return Err(CoefficientError::Domain(r));
        }
        Ok(self.transform(which, r.clamp(0.0, 1.0)))
    }

    /// Unchecked transform evaluation; `r` is clamped to `[0, 1]`.
    #[inline]
    pub fn transform(&self, which: Transform, r: f64) -> f64 {
        let r = r.clamp(0.0, 1.0);
        let k = ((r * self.resolution as f64) as usize).min(self.resolution);
        let node = k as f64 / self.resolution as f64;
        let base = self.tables[which.index()][k];
        if r <= node {
            return base;
        }
        base + gl8().integrate(node, r, |a| self.integrand(which, a))
    }

    /// Sup over the sample grid of `|b|`, `|σ|`, `|γ|`.
    pub fn sup_abs(&self) -> (f64, f64, f64) {
        let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        (sup(&self.samples.b), sup(&self.samples.sigma), sup(&self.samples.gamma))
    }
}

impl Transform {
    fn name(self) -> &'static str {
        match self {
            Transform::B => "B",
            Transform::Sigma => "Sigma",
            Transform::Gamma => "Gamma",
            Transform::G => "G",
            Transform::S => "S",
        }
    }
}
