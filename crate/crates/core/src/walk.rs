//! Step distributions of the reference walk.

use serde::{Deserialize, Serialize};

use crate::error::{PolylabError, Result};
use crate::lattice::{Point, MAX_DIM};

/// Finite-support step law `q(z) = P(ω_1 = z)` on `Z^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDistribution {
    dim: usize,
    /// Sorted by point, strictly positive probabilities.
    steps: Vec<(Point, f64)>,
    /// Mass of the untruncated law that lies beyond the support (0 unless built by truncation).
    truncated_tail: f64,
}

impl StepDistribution {
    /// Validates and builds a custom step law.
    ///
    /// Rejects totals off by more than `1e-9`, any probability outside `(0, 1)`,
    /// duplicate offsets, and offsets that do not fit in dimension `dim`.
    pub fn new(dim: usize, steps: Vec<(Point, f64)>) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(PolylabError::InvalidParameter(format!(
                "dimension {dim} not in 1..=3"
            )));
        }
        if steps.is_empty() {
            return Err(PolylabError::InvalidParameter("empty step distribution".into()));
        }
        let mut steps = steps;
        steps.sort_by_key(|a| a.0);
        for w in steps.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(PolylabError::InvalidParameter(format!(
                    "duplicate step offset {}",
                    w[0].0
                )));
            }
        }
        let mut total = 0.0;
        for &(z, q) in &steps {
            if !z.fits_dim(dim) {
                return Err(PolylabError::InvalidParameter(format!(
                    "offset {z} has nonzero coordinates beyond dimension {dim}"
                )));
            }
            if !(q > 0.0 && q < 1.0) {
                return Err(PolylabError::InvalidParameter(format!(
                    "step probability {q} at {z} not in (0, 1)"
                )));
            }
            total += q;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(PolylabError::InvalidParameter(format!(
                "step probabilities sum to {total}, expected 1"
            )));
        }
        Ok(StepDistribution {
            dim,
            steps,
            truncated_tail: 0.0,
        })
    }

    /// Simple random walk: mass `1/(2d)` on each of `±e_j`.
    pub fn srw(dim: usize) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(PolylabError::InvalidParameter(format!(
                "dimension {dim} not in 1..=3"
            )));
        }
        let q = 1.0 / (2 * dim) as f64;
        let mut steps = Vec::with_capacity(2 * dim);
        for j in 0..dim {
            let mut e = [0i64; MAX_DIM];
            e[j] = 1;
            steps.push((Point(e), q));
            e[j] = -1;
            steps.push((Point(e), q));
        }
        Self::new(dim, steps)
    }

    /// Symmetric one-dimensional law with `q(z) ∝ |z|^{-exponent}` for `1 <= |z| <= cutoff`.
    ///
    /// The untruncated law's mass beyond the cutoff is kept in
    /// [`truncated_tail`](Self::truncated_tail); the retained part is renormalized.
    pub fn power_law_1d(exponent: f64, cutoff: u32) -> Result<Self> {
        if !(exponent > 1.0) || !exponent.is_finite() || cutoff < 1 {
            return Err(PolylabError::InvalidParameter(format!(
                "power law needs exponent > 1 and cutoff >= 1, got ({exponent}, {cutoff})"
            )));
        }
        let weights: Vec<f64> = (1..=cutoff).map(|k| (k as f64).powf(-exponent)).collect();
        let head: f64 = weights.iter().sum();
        let norm = 2.0 * head;
        let mut steps = Vec::with_capacity(2 * cutoff as usize);
        for (k, w) in (1..=cutoff as i64).zip(&weights) {
            steps.push((Point::new1(k), w / norm));
            steps.push((Point::new1(-k), w / norm));
        }
        let mut dist = Self::new(1, steps)?;
        let tail = zeta_tail(exponent, cutoff as f64);
        dist.truncated_tail = tail / (head + tail);
        Ok(dist)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> &[(Point, f64)] {
        &self.steps
    }

    pub fn support_size(&self) -> usize {
        self.steps.len()
    }

    pub fn truncated_tail(&self) -> f64 {
        self.truncated_tail
    }

    pub fn prob(&self, z: Point) -> f64 {
        self.steps
            .binary_search_by(|s| s.0.cmp(&z))
            .map(|i| self.steps[i].1)
            .unwrap_or(0.0)
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self.steps.iter().map(|&(_, q)| q * q.ln()).sum::<f64>()
    }

    pub fn max_step_prob(&self) -> f64 {
        self.steps.iter().map(|s| s.1).fold(0.0, f64::max)
    }

    /// Componentwise bounds `(min, max)` of the support.
    pub fn bounds(&self) -> (Point, Point) {
        let mut lo = [i64::MAX; MAX_DIM];
        let mut hi = [i64::MIN; MAX_DIM];
        for (z, _) in &self.steps {
            for j in 0..MAX_DIM {
                lo[j] = lo[j].min(z.0[j]);
                hi[j] = hi[j].max(z.0[j]);
            }
        }
        (Point(lo), Point(hi))
    }
}

/// `sum_{k > m} k^{-s}` by Euler–Maclaurin.
fn zeta_tail(s: f64, m: f64) -> f64 {
    let integral = m.powf(1.0 - s) / (s - 1.0);
    integral - 0.5 * m.powf(-s) + s * m.powf(-s - 1.0) / 12.0
        - s * (s + 1.0) * (s + 2.0) * m.powf(-s - 3.0) / 720.0
}

/// Offset in a custom step list: a bare integer in one dimension, a coordinate list otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepOffset {
    Scalar(i64),
    Vector(Vec<i64>),
}

/// Walk section of an experiment config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WalkSpec {
    Srw { d: usize },
    PowerLaw { exponent: f64, cutoff: u32 },
    Custom { d: usize, steps: Vec<(StepOffset, f64)> },
}

impl WalkSpec {
    pub fn build(&self) -> Result<StepDistribution> {
        match self {
            WalkSpec::Srw { d } => StepDistribution::srw(*d),
            WalkSpec::PowerLaw { exponent, cutoff } => {
                StepDistribution::power_law_1d(*exponent, *cutoff)
            }
            WalkSpec::Custom { d, steps } => {
                let mut pts = Vec::with_capacity(steps.len());
                for (off, q) in steps {
                    let coords = match off {
                        StepOffset::Scalar(x) => vec![*x],
                        StepOffset::Vector(v) => v.clone(),
                    };
                    if coords.len() != *d {
                        return Err(PolylabError::InvalidParameter(format!(
                            "step offset {coords:?} does not have {d} coordinates"
                        )));
                    }
                    let p = Point::from_slice(&coords).ok_or_else(|| {
                        PolylabError::InvalidParameter(format!("offset {coords:?} too long"))
                    })?;
                    pts.push((p, *q));
                }
                StepDistribution::new(*d, pts)
            }
        }
    }
}
