//! Random small instances for the oracle suite and the test corpora.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::env_field::EnvironmentLaw;
use crate::lattice::Point;
use crate::pspm::{Pspm, Site};
use crate::walk::StepDistribution;

/// One of the four laws with randomly drawn parameters.
pub fn random_law<R: Rng>(rng: &mut R) -> EnvironmentLaw {
    match rng.random_range(0..4) {
        0 => EnvironmentLaw::Gaussian {
            mean: rng.random_range(-1.0..1.0),
            sd: rng.random_range(0.3..2.0),
        },
        1 => EnvironmentLaw::Exponential {
            rate: rng.random_range(0.5..2.0),
        },
        2 => {
            let lo = rng.random_range(-2.0..0.0);
            EnvironmentLaw::Bernoulli {
                p: rng.random_range(0.1..0.9),
                lo,
                hi: lo + rng.random_range(0.5..3.0),
            }
        }
        _ => {
            let lo = rng.random_range(-2.0..0.5);
            EnvironmentLaw::Uniform {
                lo,
                hi: lo + rng.random_range(0.5..3.0),
            }
        }
    }
}

/// `β` in `(0, 0.8 β_max]`, or in `(0, 2]` when every exponential moment exists.
pub fn random_beta<R: Rng>(rng: &mut R, law: &EnvironmentLaw) -> f64 {
    let cap = if law.beta_max().is_finite() { 0.8 * law.beta_max() } else { 2.0 };
    cap * rng.random_range(0.05..=1.0)
}

/// A one-dimensional step distribution with `1..=max_support` distinct steps in `[-3, 3]`.
pub fn random_walk_1d<R: Rng>(rng: &mut R, max_support: usize) -> StepDistribution {
    let size = rng.random_range(1..=max_support.clamp(1, 7));
    let mut offsets: Vec<i64> = (-3..=3).collect();
    offsets.shuffle(rng);
    offsets.truncate(size);
    if size == 1 {
        // a single step must have probability one, which the constructor rejects
        offsets.push(if offsets[0] == 3 { -3 } else { 3 });
    }
    let raw: Vec<f64> = offsets.iter().map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut steps: Vec<(Point, f64)> = offsets
        .iter()
        .zip(&raw)
        .map(|(&x, &w)| (Point::new1(x), w / total))
        .collect();
    let head: f64 = steps[1..].iter().map(|s| s.1).sum();
    steps[0].1 = 1.0 - head;
    StepDistribution::new(1, steps).expect("generated walk is valid")
}

/// A random element of `S` with at most `max_support` atoms spread over up to
/// `max_levels` levels, total mass `norm`.
pub fn random_pspm<R: Rng>(
    rng: &mut R,
    dim: usize,
    max_support: usize,
    max_levels: u32,
    norm: f64,
) -> Pspm {
    let size = rng.random_range(1..=max_support.max(1));
    let mut sites = BTreeSet::new();
    while sites.len() < size {
        let mut c = [0i64; 3];
        for v in c.iter_mut().take(dim) {
            *v = rng.random_range(-4..=4);
        }
        sites.insert(Site::new(rng.random_range(1..=max_levels.max(1)), Point(c)));
    }
    let raw: Vec<f64> = sites.iter().map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let atoms = sites
        .into_iter()
        .zip(raw)
        .map(|(s, w)| (s, norm * w / total))
        .collect();
    Pspm::new(dim, atoms).expect("generated element is valid")
}

/// A random level relabelling with per-level translations covering the levels of `f`.
pub fn random_orbit_map<R: Rng>(rng: &mut R, f: &Pspm) -> BTreeMap<u32, (u32, Point)> {
    let levels = f.levels();
    let mut targets: Vec<u32> = (1..=(levels.len() as u32 + 3)).collect();
    targets.shuffle(rng);
    levels
        .into_iter()
        .zip(targets)
        .map(|(l, t)| {
            let mut c = [0i64; 3];
            for v in c.iter_mut().take(f.dim()) {
                *v = rng.random_range(-20..=20);
            }
            (l, (t, Point(c)))
        })
        .collect()
}
