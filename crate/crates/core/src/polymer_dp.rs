//! Quenched partition functions and endpoint distributions by dynamic programming.
//!
//! The endpoint distribution is stored as normalized masses on a bounding
//! box together with the scalar `log Z_n`; the normalization is redone on
//! every step, so no quantity ever leaves double-precision range.

use std::collections::BTreeMap;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env_field::{EnvironmentLaw, SeededField};
use crate::error::{PolylabError, Result};
use crate::lattice::{Point, MAX_DIM};
use crate::numeric::{checkpoint_grid, log_sum_exp, mean_se, LogSumExp};
use crate::rng::derive_seed;
use crate::walk::StepDistribution;

/// Maximum number of paths enumerated by the brute-force oracles.
pub const ENUMERATION_GUARD: u128 = 10_000_000;

/// Support truncation: sites with `f_n(x) < tau_rel * max f_n` are dropped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub tau_rel: f64,
    pub ledger_warn: f64,
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation {
            tau_rel: 1e-14,
            ledger_warn: 1e-6,
        }
    }
}

/// Endpoint weights after `n` steps.
#[derive(Clone, Debug)]
pub struct PolymerState {
    n: u64,
    dim: usize,
    lo: Point,
    shape: [usize; MAX_DIM],
    /// `f_n` on the box `lo + [0, shape)`, row-major with the last coordinate fastest.
    mass: Vec<f64>,
    log_z: f64,
    dropped_mass: f64,
    warned: bool,
}

impl PolymerState {
    /// `n = 0`: unit mass at the origin, `log Z_0 = 0`.
    pub fn init(dim: usize) -> Self {
        PolymerState {
            n: 0,
            dim,
            lo: Point::ORIGIN,
            shape: [1; MAX_DIM],
            mass: vec![1.0],
            log_z: 0.0,
            dropped_mass: 0.0,
            warned: false,
        }
    }

    /// Walk started at `origin` instead of 0.
    pub fn init_at(dim: usize, origin: Point) -> Self {
        PolymerState {
            lo: origin,
            ..Self::init(dim)
        }
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    /// Cumulative fraction of endpoint mass removed by truncation.
    pub fn dropped_mass(&self) -> f64 {
        self.dropped_mass
    }

    /// `F_n = log Z_n / n`; undefined at `n = 0`.
    pub fn free_energy(&self) -> Result<f64> {
        if self.n == 0 {
            return Err(PolylabError::Domain("free energy is undefined at n = 0".into()));
        }
        Ok(self.log_z / self.n as f64)
    }

    fn point_at(&self, idx: usize) -> Point {
        let s2 = self.shape[2];
        let s1 = self.shape[1];
        let i2 = idx % s2;
        let i1 = (idx / s2) % s1;
        let i0 = idx / (s1 * s2);
        self.lo + Point([i0 as i64, i1 as i64, i2 as i64])
    }

    /// Nonzero entries of `f_n`, sorted lexicographically.
    pub fn endpoint_distribution(&self) -> Vec<(Point, f64)> {
        self.mass
            .iter()
            .enumerate()
            .filter(|(_, &m)| m > 0.0)
            .map(|(i, &m)| (self.point_at(i), m))
            .collect()
    }

    /// Visits the nonzero entries of `f_n` in lexicographic order without collecting them.
    pub fn for_each_atom(&self, mut visit: impl FnMut(Point, f64)) {
        for (i, &m) in self.mass.iter().enumerate() {
            if m > 0.0 {
                visit(self.point_at(i), m);
            }
        }
    }

    /// `f_n(x)`, zero outside the stored box.
    pub fn mass_at(&self, x: Point) -> f64 {
        let rel = x - self.lo;
        let mut idx = 0usize;
        for j in 0..MAX_DIM {
            let c = rel.0[j];
            if c < 0 || c as usize >= self.shape[j] {
                return 0.0;
            }
            idx = idx * self.shape[j] + c as usize;
        }
        self.mass[idx]
    }

    /// `x ↦ log Z_n(x)` on the support.
    pub fn log_weights(&self) -> Vec<(Point, f64)> {
        self.endpoint_distribution()
            .into_iter()
            .map(|(x, m)| (x, m.ln() + self.log_z))
            .collect()
    }

    pub fn support_size(&self) -> usize {
        self.mass.iter().filter(|&&m| m > 0.0).count()
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// One step of `Z_n(x) = Σ_y Z_{n-1}(y) e^{β η(n,x)} P(y,x)`.
    ///
    /// With `truncation`, mass dropped here is added to the ledger, and
    /// `log Z_n` treats the dropped part as growing at the rate of the
    /// retained part.
    pub fn advance(
        &self,
        walk: &StepDistribution,
        field: &SeededField,
        beta: f64,
        truncation: Option<&Truncation>,
    ) -> Result<PolymerState> {
        field.law.check_beta(beta)?;
        if walk.dim() != self.dim {
            return Err(PolylabError::InvalidParameter(format!(
                "walk dimension {} does not match state dimension {}",
                walk.dim(),
                self.dim
            )));
        }
        let time = self.n + 1;
        let (slo, shi) = walk.bounds();
        let mut shape = [1usize; MAX_DIM];
        for j in 0..MAX_DIM {
            shape[j] = self.shape[j] + (shi.0[j] - slo.0[j]) as usize;
        }
        let lo = self.lo + slo;
        let volume = shape.iter().product();
        let mut conv = vec![0.0f64; volume];
        let [s0, s1, s2] = self.shape;
        for &(z, q) in walk.steps() {
            let o = z - slo;
            for i0 in 0..s0 {
                for i1 in 0..s1 {
                    let old = (i0 * s1 + i1) * s2;
                    let new = ((i0 + o.0[0] as usize) * shape[1] + i1 + o.0[1] as usize) * shape[2]
                        + o.0[2] as usize;
                    let src = &self.mass[old..old + s2];
                    let dst = &mut conv[new..new + s2];
                    for (d, &m) in dst.iter_mut().zip(src) {
                        *d += q * m;
                    }
                }
            }
        }

        let mut next = PolymerState {
            n: time,
            dim: self.dim,
            lo,
            shape,
            mass: conv,
            log_z: 0.0,
            dropped_mass: self.dropped_mass,
            warned: self.warned,
        };
        // β η(n, x) for occupied cells, in cell order
        let mut energy = Vec::new();
        let mut top = f64::NEG_INFINITY;
        let row = field.row(time, 1);
        let mut idx = 0;
        for i0 in 0..shape[0] as i64 {
            for i1 in 0..shape[1] as i64 {
                for i2 in 0..shape[2] as i64 {
                    if next.mass[idx] > 0.0 {
                        let e = beta * row.at(lo + Point([i0, i1, i2]));
                        energy.push(e);
                        top = top.max(e);
                    }
                    idx += 1;
                }
            }
        }
        let mut raw_total = 0.0;
        let mut staged = energy.iter();
        for m in next.mass.iter_mut().filter(|m| **m > 0.0) {
            *m *= (staged.next().expect("one energy per occupied cell") - top).exp();
            raw_total += *m;
        }
        let prev_total = self.total_mass();
        next.log_z = self.log_z + raw_total.ln() + top - prev_total.ln();
        let scale = prev_total / raw_total;
        for m in next.mass.iter_mut() {
            *m *= scale;
        }

        if let Some(t) = truncation {
            let peak = next.mass.iter().cloned().fold(0.0, f64::max);
            let cut = t.tau_rel * peak;
            let mut dropped = 0.0;
            for m in next.mass.iter_mut() {
                if *m > 0.0 && *m < cut {
                    dropped += *m;
                    *m = 0.0;
                }
            }
            next.dropped_mass += dropped;
            if next.dropped_mass > t.ledger_warn && !next.warned {
                warn!(
                    "truncation ledger {:.3e} exceeds {:.1e} at n = {}",
                    next.dropped_mass, t.ledger_warn, time
                );
                next.warned = true;
            }
        }
        next.crop();
        Ok(next)
    }

    /// Shrinks the box to the smallest one holding every nonzero cell.
    fn crop(&mut self) {
        let mut lo_i = [usize::MAX; MAX_DIM];
        let mut hi_i = [0usize; MAX_DIM];
        let [_, s1, s2] = self.shape;
        let mut any = false;
        for (idx, &m) in self.mass.iter().enumerate() {
            if m > 0.0 {
                any = true;
                let c = [idx / (s1 * s2), (idx / s2) % s1, idx % s2];
                for j in 0..MAX_DIM {
                    lo_i[j] = lo_i[j].min(c[j]);
                    hi_i[j] = hi_i[j].max(c[j]);
                }
            }
        }
        if !any {
            return;
        }
        let new_shape = [
            hi_i[0] - lo_i[0] + 1,
            hi_i[1] - lo_i[1] + 1,
            hi_i[2] - lo_i[2] + 1,
        ];
        if new_shape == self.shape {
            return;
        }
        let mut out = Vec::with_capacity(new_shape.iter().product());
        for i0 in lo_i[0]..=hi_i[0] {
            for i1 in lo_i[1]..=hi_i[1] {
                let base = (i0 * s1 + i1) * s2;
                out.extend_from_slice(&self.mass[base + lo_i[2]..=base + hi_i[2]]);
            }
        }
        self.lo = self.lo + Point([lo_i[0] as i64, lo_i[1] as i64, lo_i[2] as i64]);
        self.shape = new_shape;
        self.mass = out;
    }
}

/// Runs `n` steps from the origin, calling `visit` after every step.
pub fn run_polymer(
    walk: &StepDistribution,
    field: &SeededField,
    beta: f64,
    n: u64,
    truncation: Option<&Truncation>,
    mut visit: impl FnMut(&PolymerState),
) -> Result<PolymerState> {
    let mut state = PolymerState::init(walk.dim());
    for _ in 0..n {
        state = state.advance(walk, field, beta, truncation)?;
        visit(&state);
    }
    Ok(state)
}

fn check_guard(walk: &StepDistribution, n: u64) -> Result<()> {
    let paths = (walk.support_size() as u128).checked_pow(n as u32);
    match paths {
        Some(p) if p <= ENUMERATION_GUARD && n <= u32::MAX as u64 => Ok(()),
        _ => Err(PolylabError::Size(format!(
            "{}^{} paths exceed the enumeration guard of {}",
            walk.support_size(),
            n,
            ENUMERATION_GUARD
        ))),
    }
}

/// `x ↦ log Z_n(x)` by enumerating every `n`-step path.
pub fn brute_force_log_weights(
    walk: &StepDistribution,
    field: &SeededField,
    beta: f64,
    n: u64,
) -> Result<BTreeMap<Point, f64>> {
    check_guard(walk, n)?;
    let steps = walk.steps();
    let log_q: Vec<f64> = steps.iter().map(|s| s.1.ln()).collect();
    let mut acc: BTreeMap<Point, LogSumExp> = BTreeMap::new();
    // odometer over step indices
    let n = n as usize;
    let mut choice = vec![0usize; n];
    loop {
        let mut x = Point::ORIGIN;
        let mut logw = 0.0;
        for (i, &c) in choice.iter().enumerate() {
            x = x + steps[c].0;
            logw += log_q[c] + beta * field.evaluate(i as u64 + 1, x);
        }
        acc.entry(x).or_default().push(logw);
        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok(acc.into_iter().map(|(x, l)| (x, l.value())).collect());
            }
            pos -= 1;
            choice[pos] += 1;
            if choice[pos] < steps.len() {
                break;
            }
            choice[pos] = 0;
        }
    }
}

/// Exact `log Z_n` from path enumeration; the oracle for [`PolymerState::advance`].
pub fn brute_force_log_z(
    walk: &StepDistribution,
    field: &SeededField,
    beta: f64,
    n: u64,
) -> Result<f64> {
    let w = brute_force_log_weights(walk, field, beta, n)?;
    Ok(log_sum_exp(w.values().copied()))
}

/// `|log Z_n − log Σ_y Z_k(y) (Z_{n−k} ∘ θ_{k,y})|`, everything by enumeration.
pub fn shift_identity_check(
    walk: &StepDistribution,
    field: &SeededField,
    beta: f64,
    n: u64,
    k: u64,
) -> Result<f64> {
    if k > n {
        return Err(PolylabError::InvalidParameter(format!("k = {k} exceeds n = {n}")));
    }
    check_guard(walk, n)?;
    let lhs = brute_force_log_z(walk, field, beta, n)?;
    let head = brute_force_log_weights(walk, field, beta, k)?;
    let mut rhs = LogSumExp::new();
    for (y, log_zk) in head {
        let tail = brute_force_log_z(walk, &field.shift_view(k, y), beta, n - k)?;
        rhs.push(log_zk + tail);
    }
    Ok((lhs - rhs.value()).abs())
}

/// Inputs of a replica run: one polymer per seed on independent fields.
#[derive(Clone, Debug)]
pub struct ReplicaSpec {
    pub law: EnvironmentLaw,
    pub walk: StepDistribution,
    pub beta: f64,
    pub n: u64,
    pub base_seed: u64,
    pub num_seeds: u64,
    pub truncation: Option<Truncation>,
}

impl ReplicaSpec {
    /// Field seed of replica `index`.
    pub fn field_seed(&self, index: u64) -> u64 {
        derive_seed(self.base_seed, "replica", index)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Checkpoint {
    pub n: u64,
    pub log_z: f64,
    pub free_energy: f64,
    pub dropped_mass: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicaSeries {
    pub seed: u64,
    pub checkpoints: Vec<Checkpoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplicaSummary {
    pub beta: f64,
    pub n: u64,
    pub mean_f: f64,
    pub se_f: f64,
    pub lambda: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicaRun {
    pub series: Vec<ReplicaSeries>,
    pub summary: ReplicaSummary,
}

/// Runs one polymer per seed, recording `F_i` on the checkpoint grid.
///
/// Seeds run in parallel on the current rayon pool; results come back in seed order.
pub fn run_replicas(spec: &ReplicaSpec) -> Result<ReplicaRun> {
    spec.law.validate()?;
    spec.law.check_beta(spec.beta)?;
    if spec.n == 0 || spec.num_seeds == 0 {
        return Err(PolylabError::InvalidParameter(
            "replica runs need n >= 1 and at least one seed".into(),
        ));
    }
    let grid = checkpoint_grid(spec.n);
    let series: Result<Vec<ReplicaSeries>> = (0..spec.num_seeds)
        .into_par_iter()
        .map(|index| {
            let seed = spec.field_seed(index);
            let field = SeededField::new(seed, spec.law);
            let mut checkpoints = Vec::with_capacity(grid.len());
            let mut next = 0usize;
            run_polymer(
                &spec.walk,
                &field,
                spec.beta,
                spec.n,
                spec.truncation.as_ref(),
                |state| {
                    if next < grid.len() && state.n() == grid[next] {
                        checkpoints.push(Checkpoint {
                            n: state.n(),
                            log_z: state.log_z(),
                            free_energy: state.log_z() / state.n() as f64,
                            dropped_mass: state.dropped_mass(),
                        });
                        next += 1;
                    }
                },
            )?;
            Ok(ReplicaSeries { seed, checkpoints })
        })
        .collect();
    let series = series?;
    let finals: Vec<f64> = series
        .iter()
        .map(|s| s.checkpoints.last().map(|c| c.free_energy).unwrap_or(f64::NAN))
        .collect();
    let (mean_f, se_f) = mean_se(&finals);
    let lambda = spec.law.lambda(spec.beta);
    Ok(ReplicaRun {
        series,
        summary: ReplicaSummary {
            beta: spec.beta,
            n: spec.n,
            mean_f,
            se_f,
            lambda,
            gap: lambda - mean_f,
        },
    })
}
