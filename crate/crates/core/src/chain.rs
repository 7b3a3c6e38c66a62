//! The endpoint Markov chain on partitioned subprobability measures.
//!
//! One step sends `f` to
//!
//! ```text
//! F(u) = Σ_{v∼u} f(v) e^{βη_u} P(v,u) / D,
//! D    = Σ_w Σ_{v∼w} f(v) e^{βη_w} P(v,w) + (1 − ‖f‖) e^{λ(β)},
//! ```
//!
//! where `v ∼ u` means same level. `log D` is the free-energy increment; its
//! mean over a fresh environment is the energy functional `R(f)`.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::env_field::{EnvironmentLaw, SeededField};
use crate::error::{PolylabError, Result};
use crate::numeric::{log_sum_exp, mean_se};
use crate::polymer_dp::Truncation;
use crate::pspm::{atoms_json, wasserstein, DistanceMode, EmpiricalMeasure, Pspm, Site};
use crate::rng::derive_seed;
use crate::walk::StepDistribution;

/// Atoms kept per element before distances are evaluated in [`stationarity_gap`].
pub const GAP_ATOMS: usize = 32;

/// Parameters shared by every update of a chain.
#[derive(Clone, Debug)]
pub struct UpdateContext {
    pub walk: StepDistribution,
    pub beta: f64,
    pub law: EnvironmentLaw,
    pub alpha: f64,
    /// Root of the RNG streams used for fresh environment rows.
    pub stream: u64,
    pub truncation: Option<Truncation>,
}

impl UpdateContext {
    /// Validates `α > 1` and `0 < αβ < β_max`.
    pub fn new(
        walk: StepDistribution,
        beta: f64,
        law: EnvironmentLaw,
        alpha: f64,
        stream: u64,
    ) -> Result<Self> {
        law.validate()?;
        law.check_beta(beta)?;
        if !(alpha > 1.0) {
            return Err(PolylabError::InvalidParameter(format!("alpha = {alpha} must exceed 1")));
        }
        if !(alpha * beta < law.beta_max()) {
            return Err(PolylabError::Domain(format!(
                "alpha * beta = {} must stay below beta_max = {}",
                alpha * beta,
                law.beta_max()
            )));
        }
        Ok(UpdateContext {
            walk,
            beta,
            law,
            alpha,
            stream,
            truncation: None,
        })
    }

    pub fn with_truncation(mut self, truncation: Option<Truncation>) -> Self {
        self.truncation = truncation;
        self
    }

    pub fn lambda(&self) -> f64 {
        self.law.lambda(self.beta)
    }
}

/// Default `α`: 2 for laws with all exponential moments, otherwise the
/// midpoint of `(1, β_max/β)` capped at 2.
pub fn auto_alpha(beta: f64, law: &EnvironmentLaw) -> f64 {
    let bmax = law.beta_max();
    if bmax.is_infinite() {
        2.0
    } else {
        (0.5 * (1.0 + bmax / beta)).min(2.0)
    }
}

/// Disorder on `N × Z^d` at a fixed time.
pub trait SiteEnvironment {
    fn eta(&self, site: Site) -> f64;
}

impl<F: Fn(Site) -> f64> SiteEnvironment for F {
    fn eta(&self, site: Site) -> f64 {
        self(site)
    }
}

/// Time slice `i` of a seeded field; level 1 reads exactly `η(i, x)`.
#[derive(Clone, Copy, Debug)]
pub struct FieldRow<'a> {
    pub field: &'a SeededField,
    pub time: u64,
}

impl SiteEnvironment for FieldRow<'_> {
    fn eta(&self, site: Site) -> f64 {
        self.field.evaluate_level(self.time, site.level, site.x)
    }
}

/// `u ↦ Σ_{v∼u} f(v) P(v,u)`, sorted by site.
pub fn spread(f: &Pspm, walk: &StepDistribution) -> Vec<(Site, f64)> {
    let mut acc: BTreeMap<Site, f64> = BTreeMap::new();
    for &(v, m) in f.atoms() {
        for &(z, q) in walk.steps() {
            *acc.entry(Site::new(v.level, v.x + z)).or_insert(0.0) += m * q;
        }
    }
    acc.into_iter().filter(|e| e.1 > 0.0).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct UpdateOutcome {
    pub next: Pspm,
    /// `log D`.
    pub log_ratio: f64,
    /// Mass removed by truncation in this step; the kept atoms are rescaled
    /// to the untruncated norm.
    pub dropped: f64,
}

/// Norm deficits at or below this are rounding residue of a unit-norm state.
///
/// The slack term multiplies a deficit by `e^{λ(β)}/D` each step, so an
/// unfiltered rounding error grows geometrically along a unit-norm chain.
pub const NORM_SLACK_TOL: f64 = 1e-12;

fn log_slack(f: &Pspm, lambda: f64) -> f64 {
    let slack = 1.0 - f.norm();
    if slack > NORM_SLACK_TOL {
        slack.ln() + lambda
    } else {
        f64::NEG_INFINITY
    }
}

/// One chain step under the given environment row.
pub fn apply_update(f: &Pspm, ctx: &UpdateContext, env: &impl SiteEnvironment) -> UpdateOutcome {
    let lambda = ctx.lambda();
    let weights = spread(f, &ctx.walk);
    let log_num: Vec<f64> = weights
        .iter()
        .map(|&(u, w)| w.ln() + ctx.beta * env.eta(u))
        .collect();
    let log_d = log_sum_exp(log_num.iter().copied().chain([log_slack(f, lambda)]));
    let mut atoms: Vec<(Site, f64)> = weights
        .iter()
        .zip(&log_num)
        .map(|(&(u, _), &l)| (u, (l - log_d).exp()))
        .filter(|a| a.1 > 0.0)
        .collect();
    let mut dropped = 0.0;
    if let Some(t) = &ctx.truncation {
        // as in the polymer DP, the dropped part is assumed to evolve like the rest
        let cut = t.tau_rel * atoms.iter().map(|a| a.1).fold(0.0, f64::max);
        let before: f64 = atoms.iter().map(|a| a.1).sum();
        atoms.retain(|a| {
            if a.1 < cut {
                dropped += a.1;
                false
            } else {
                true
            }
        });
        if dropped > 0.0 {
            let scale = before / (before - dropped);
            atoms.iter_mut().for_each(|a| a.1 *= scale);
        }
    }
    UpdateOutcome {
        next: Pspm::from_sorted_unchecked(f.dim(), atoms),
        log_ratio: log_d,
        dropped,
    }
}

/// One chain step with a fresh environment row keyed by `row_seed`.
pub fn apply_update_seeded(f: &Pspm, ctx: &UpdateContext, row_seed: u64) -> UpdateOutcome {
    let field = SeededField::new(derive_seed(ctx.stream, "row", row_seed), ctx.law);
    apply_update(f, ctx, &FieldRow { field: &field, time: 1 })
}

/// Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

/// `log D` for `samples` independent rows, with the spread weights precomputed.
fn log_d_samples(f: &Pspm, ctx: &UpdateContext, samples: usize, seed: u64, tag: &str) -> Vec<f64> {
    let weights = spread(f, &ctx.walk);
    let log_w: Vec<f64> = weights.iter().map(|w| w.1.ln()).collect();
    let slack = log_slack(f, ctx.lambda());
    (0..samples as u64)
        .map(|m| {
            let field = SeededField::new(derive_seed(seed, tag, m), ctx.law);
            let terms = weights
                .iter()
                .zip(&log_w)
                .map(|(&(u, _), &lw)| lw + ctx.beta * field.evaluate_level(1, u.level, u.x));
            log_sum_exp(terms.chain([slack]))
        })
        .collect()
}

/// `R(f) = E log D`; exactly `λ(β)` for the zero element.
pub fn energy_r(f: &Pspm, ctx: &UpdateContext, samples: usize, seed: u64) -> Result<Estimate> {
    if samples < 2 {
        return Err(PolylabError::InvalidParameter("energy estimate needs at least 2 samples".into()));
    }
    if f.is_empty() {
        return Ok(Estimate {
            mean: ctx.lambda(),
            se: 0.0,
        });
    }
    let (mean, se) = mean_se(&log_d_samples(f, ctx, samples, seed, "energy"));
    Ok(Estimate { mean, se })
}

/// `∫ R dμ` for a uniform empirical measure; per-atom errors combined in quadrature.
pub fn lifted_r(mu: &EmpiricalMeasure, ctx: &UpdateContext, samples: usize, seed: u64) -> Result<Estimate> {
    let per_atom: Result<Vec<Estimate>> = mu
        .atoms()
        .par_iter()
        .enumerate()
        .map(|(k, f)| energy_r(f, ctx, samples, derive_seed(seed, "lifted", k as u64)))
        .collect();
    let per_atom = per_atom?;
    let n = per_atom.len() as f64;
    Ok(Estimate {
        mean: per_atom.iter().map(|e| e.mean).sum::<f64>() / n,
        se: per_atom.iter().map(|e| e.se * e.se).sum::<f64>().sqrt() / n,
    })
}

/// States `f_0..f_n` of one chain run and its free-energy increments.
#[derive(Clone, Debug)]
pub struct ChainTrajectory {
    pub field_seed: u64,
    pub states: Vec<Pspm>,
    /// `log_ratios[i]` is the increment producing `states[i + 1]`.
    pub log_ratios: Vec<f64>,
    pub dropped_mass: f64,
}

impl ChainTrajectory {
    pub fn n(&self) -> usize {
        self.log_ratios.len()
    }

    /// `Σ log D_i`, equal to `log Z_n` when the chain starts from a unit mass.
    pub fn log_z(&self) -> f64 {
        self.log_ratios.iter().sum()
    }

    pub fn free_energy(&self) -> Result<f64> {
        if self.log_ratios.is_empty() {
            return Err(PolylabError::Domain("free energy is undefined at n = 0".into()));
        }
        Ok(self.log_z() / self.n() as f64)
    }

    /// `μ_i`: uniform measure on `f_0..f_i`.
    pub fn empirical_measure(&self, i: usize) -> Result<EmpiricalMeasure> {
        if i >= self.states.len() {
            return Err(PolylabError::InvalidParameter(format!(
                "trajectory has no state {i}"
            )));
        }
        EmpiricalMeasure::new(self.states[..=i].to_vec())
    }

    /// One JSON object per state: `{i, logRatio, norm, top_atoms}` with the 8 heaviest atoms.
    pub fn export_lines(&self) -> Vec<Value> {
        self.states
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let mut top = f.ranked_atoms();
                top.truncate(8);
                let log_ratio = if i == 0 { Value::Null } else { json!(self.log_ratios[i - 1]) };
                json!({
                    "i": i,
                    "logRatio": log_ratio,
                    "norm": f.norm(),
                    "top_atoms": atoms_json(f.dim(), &top),
                })
            })
            .collect()
    }
}

/// Iterates the update from `initial` (default: unit mass at the origin) using
/// the rows `η(i, ·)` of the field seeded by `field_seed`, so that a
/// polymer run on the same field sees identical disorder.
pub fn run_chain(
    ctx: &UpdateContext,
    n: usize,
    field_seed: u64,
    initial: Option<Pspm>,
) -> Result<ChainTrajectory> {
    let field = SeededField::new(field_seed, ctx.law);
    let mut state = initial.unwrap_or_else(|| Pspm::unit(ctx.walk.dim()));
    if state.dim() != ctx.walk.dim() {
        return Err(PolylabError::InvalidParameter("initial state dimension mismatch".into()));
    }
    let mut states = Vec::with_capacity(n + 1);
    let mut log_ratios = Vec::with_capacity(n);
    let mut dropped_mass = 0.0;
    for i in 1..=n as u64 {
        let out = apply_update(&state, ctx, &FieldRow { field: &field, time: i });
        log_ratios.push(out.log_ratio);
        dropped_mass += out.dropped;
        states.push(std::mem::replace(&mut state, out.next));
    }
    states.push(state);
    Ok(ChainTrajectory {
        field_seed,
        states,
        log_ratios,
        dropped_mass,
    })
}

fn subsample(len: usize, m: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, len, m).into_vec();
    idx.sort_unstable();
    idx
}

/// `W_α(μ̂, 𝒯μ̂)` for a uniform `m`-atom subsample `μ̂` of the states up to
/// `upto`; `𝒯μ̂` takes `per_atom` sampled updates of every atom.
pub fn stationarity_gap(
    traj: &ChainTrajectory,
    upto: usize,
    ctx: &UpdateContext,
    m: usize,
    per_atom: usize,
    seed: u64,
) -> Result<f64> {
    let len = upto + 1;
    if upto >= traj.states.len() || m == 0 || m > len || per_atom == 0 {
        return Err(PolylabError::InvalidParameter(format!(
            "cannot draw {m} atoms from {len} states"
        )));
    }
    let picked: Vec<Pspm> = subsample(len, m, derive_seed(seed, "gap-subsample", upto as u64))
        .into_iter()
        .map(|i| traj.states[i].truncate(GAP_ATOMS))
        .collect();
    let mut before = Vec::with_capacity(m * per_atom);
    let mut after = Vec::with_capacity(m * per_atom);
    for (k, f) in picked.iter().enumerate() {
        for r in 0..per_atom {
            let row = derive_seed(seed, "gap-row", (k * per_atom + r) as u64);
            before.push(f.clone());
            after.push(apply_update_seeded(f, ctx, row).next.truncate(GAP_ATOMS));
        }
    }
    let mu = EmpiricalMeasure::new(before)?;
    let nu = EmpiricalMeasure::new(after)?;
    wasserstein(&mu, &nu, ctx.alpha, DistanceMode::Auto)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MomentCheck {
    pub estimate: f64,
    pub se: f64,
    pub bound: f64,
}

/// Centered fourth moment of `W = log Σ_u Σ_{v∼u} f(v) e^{βη_u} P(v,u)` for a
/// unit-norm `f`, against `32 · 5 (e^{λ(−β)} + e^{λ(β)})`.
pub fn fourth_moment_check(f: &Pspm, ctx: &UpdateContext, samples: usize, seed: u64) -> Result<MomentCheck> {
    if (f.norm() - 1.0).abs() > 1e-12 {
        return Err(PolylabError::Norm(format!("fourth moment check needs ‖f‖ = 1, got {}", f.norm())));
    }
    if samples < 2 {
        return Err(PolylabError::InvalidParameter("need at least 2 samples".into()));
    }
    let w = log_d_samples(f, ctx, samples, seed, "fourth");
    let (mean_w, _) = mean_se(&w);
    let centered: Vec<f64> = w.iter().map(|x| (x - mean_w).powi(4)).collect();
    let (estimate, se) = mean_se(&centered);
    let bound = 32.0 * 5.0 * (ctx.law.lambda(-ctx.beta).exp() + ctx.lambda().exp());
    Ok(MomentCheck { estimate, se, bound })
}

/// `E D^{−α}` against `2^α e^{λ(−αβ)}`.
pub fn negative_moment_check(f: &Pspm, ctx: &UpdateContext, samples: usize, seed: u64) -> Result<MomentCheck> {
    if samples < 2 {
        return Err(PolylabError::InvalidParameter("need at least 2 samples".into()));
    }
    let vals: Vec<f64> = log_d_samples(f, ctx, samples, seed, "negative")
        .into_iter()
        .map(|l| (-ctx.alpha * l).exp())
        .collect();
    let (estimate, se) = mean_se(&vals);
    let bound = 2f64.powf(ctx.alpha) * ctx.law.lambda(-ctx.alpha * ctx.beta).exp();
    Ok(MomentCheck { estimate, se, bound })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariationalSeed {
    pub seed: u64,
    pub free_energy: f64,
    pub lifted_r: f64,
    pub lifted_r_se: f64,
    pub diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariationalSummary {
    pub beta: f64,
    pub n: usize,
    pub lambda: f64,
    pub mean_f: f64,
    pub se_f: f64,
    pub mean_lifted_r: f64,
    pub lambda_minus_f: f64,
    pub per_seed: Vec<VariationalSeed>,
}

/// Settings for [`variational_gap`].
#[derive(Clone, Copy, Debug)]
pub struct VariationalSettings {
    pub n: usize,
    pub base_seed: u64,
    pub num_seeds: u64,
    /// Atoms drawn from `μ_{n−1}`.
    pub subsample: usize,
    /// Environment rows per atom.
    pub samples: usize,
}

/// Compares `F_n` with `ℛ(μ_{n−1})` over independent chains.
pub fn variational_gap(ctx: &UpdateContext, settings: &VariationalSettings) -> Result<VariationalSummary> {
    let per_seed: Result<Vec<VariationalSeed>> = (0..settings.num_seeds)
        .into_par_iter()
        .map(|k| {
            let seed = derive_seed(settings.base_seed, "replica", k);
            let traj = run_chain(ctx, settings.n, seed, None)?;
            let free_energy = traj.free_energy()?;
            let pool = settings.n; // states f_0..f_{n-1}
            let m = settings.subsample.min(pool);
            let atoms = subsample(pool, m, derive_seed(seed, "variational-subsample", 0))
                .into_iter()
                .map(|i| traj.states[i].clone())
                .collect();
            let mu = EmpiricalMeasure::new(atoms)?;
            let est = lifted_r(&mu, ctx, settings.samples, derive_seed(seed, "variational", 0))?;
            Ok(VariationalSeed {
                seed,
                free_energy,
                lifted_r: est.mean,
                lifted_r_se: est.se,
                diff: est.mean - free_energy,
            })
        })
        .collect();
    let per_seed = per_seed?;
    let fs: Vec<f64> = per_seed.iter().map(|s| s.free_energy).collect();
    let (mean_f, se_f) = mean_se(&fs);
    let mean_lifted_r = per_seed.iter().map(|s| s.lifted_r).sum::<f64>() / per_seed.len() as f64;
    let lambda = ctx.lambda();
    Ok(VariationalSummary {
        beta: ctx.beta,
        n: settings.n,
        lambda,
        mean_f,
        se_f,
        mean_lifted_r,
        lambda_minus_f: lambda - mean_f,
        per_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Point;
    use crate::polymer_dp::run_polymer;

    fn ctx(beta: f64) -> UpdateContext {
        UpdateContext::new(
            StepDistribution::srw(1).unwrap(),
            beta,
            EnvironmentLaw::standard_gaussian(),
            2.0,
            7,
        )
        .unwrap()
    }

    fn s1(level: u32, x: i64) -> Site {
        Site::new(level, Point::new1(x))
    }

    #[test]
    fn context_validation() {
        let walk = StepDistribution::srw(1).unwrap();
        let exp1 = EnvironmentLaw::Exponential { rate: 1.0 };
        assert!(UpdateContext::new(walk.clone(), 0.4, exp1, 2.0, 0).is_ok());
        assert!(UpdateContext::new(walk.clone(), 0.6, exp1, 2.0, 0).is_err());
        assert!(UpdateContext::new(walk.clone(), 0.4, exp1, 1.0, 0).is_err());
        assert!(UpdateContext::new(walk, 0.0, exp1, 1.5, 0).is_err());
    }

    #[test]
    fn auto_alpha_rule() {
        assert_eq!(auto_alpha(3.0, &EnvironmentLaw::standard_gaussian()), 2.0);
        let exp1 = EnvironmentLaw::Exponential { rate: 1.0 };
        assert_eq!(auto_alpha(0.5, &exp1), 1.5);
        assert_eq!(auto_alpha(0.1, &exp1), 2.0);
        let a = auto_alpha(0.9, &exp1);
        assert!(a > 1.0 && a * 0.9 < 1.0);
    }

    #[test]
    fn zero_is_fixed() {
        let c = ctx(0.8);
        for row in 0..20 {
            let out = apply_update_seeded(&Pspm::zero(1), &c, row);
            assert!(out.next.is_empty());
            assert_eq!(out.log_ratio, c.lambda());
        }
    }

    #[test]
    fn unit_norm_preserved_and_interior_stays_interior() {
        let c = ctx(1.0);
        let f = Pspm::new(1, vec![(s1(1, 0), 0.6), (s1(2, 3), 0.4)]).unwrap();
        let g = Pspm::new(1, vec![(s1(1, 0), 0.3), (s1(2, 3), 0.1)]).unwrap();
        for row in 0..50 {
            let a = apply_update_seeded(&f, &c, row);
            assert!((a.next.norm() - 1.0).abs() < 1e-12);
            let b = apply_update_seeded(&g, &c, row);
            assert!(b.next.norm() > 0.0 && b.next.norm() < 1.0);
        }
    }

    #[test]
    fn levels_never_mix() {
        let c = ctx(1.0);
        let f = Pspm::new(1, vec![(s1(1, 0), 0.5), (s1(4, 0), 0.5)]).unwrap();
        let out = apply_update_seeded(&f, &c, 3);
        let level_mass = |l: u32| out.next.atoms().iter().filter(|a| a.0.level == l).map(|a| a.1).sum::<f64>();
        assert_eq!(out.next.levels(), vec![1, 4]);
        assert!((level_mass(1) + level_mass(4) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chain_matches_polymer_on_same_field() {
        let c = ctx(0.9);
        let traj = run_chain(&c, 60, 1234, None).unwrap();
        let field = SeededField::new(1234, c.law);
        let mut checked = 0;
        run_polymer(&c.walk, &field, c.beta, 60, None, |s| {
            let partial: f64 = traj.log_ratios[..s.n() as usize].iter().sum();
            assert!((partial - s.log_z()).abs() < 1e-10);
            checked += 1;
        })
        .unwrap();
        assert_eq!(checked, 60);
    }

    #[test]
    fn run_chain_zero_steps() {
        let traj = run_chain(&ctx(1.0), 0, 1, None).unwrap();
        assert_eq!(traj.states, vec![Pspm::unit(1)]);
        assert!(traj.free_energy().is_err());
    }

    #[test]
    fn energy_of_zero_is_lambda() {
        let c = ctx(1.3);
        let e = energy_r(&Pspm::zero(1), &c, 10, 0).unwrap();
        assert_eq!(e, Estimate { mean: c.lambda(), se: 0.0 });
        let mu = EmpiricalMeasure::new(vec![Pspm::zero(1)]).unwrap();
        assert_eq!(lifted_r(&mu, &c, 10, 0).unwrap().mean, c.lambda());
        assert!(energy_r(&Pspm::unit(1), &c, 1, 0).is_err());
    }

    #[test]
    fn lifted_single_atom_equals_energy() {
        let c = ctx(1.0);
        let f = Pspm::unit(1);
        let mu = EmpiricalMeasure::new(vec![f.clone()]).unwrap();
        let lifted = lifted_r(&mu, &c, 200, 5).unwrap();
        let direct = energy_r(&f, &c, 200, derive_seed(5, "lifted", 0)).unwrap();
        assert_eq!(lifted, direct);
    }

    #[test]
    fn gap_of_zero_states_vanishes() {
        let c = ctx(1.0);
        let traj = run_chain(&c, 10, 3, Some(Pspm::zero(1))).unwrap();
        assert!(traj.states.iter().all(|s| s.is_empty()));
        assert_eq!(stationarity_gap(&traj, 10, &c, 4, 1, 9).unwrap(), 0.0);
        assert_eq!(stationarity_gap(&traj, 0, &c, 1, 1, 9).unwrap(), 0.0);
        assert!(stationarity_gap(&traj, 10, &c, 12, 1, 9).is_err());
    }

    #[test]
    fn fourth_moment_rejects_subunit_norm() {
        let c = ctx(0.5);
        let half = Pspm::new(1, vec![(s1(1, 0), 0.5)]).unwrap();
        assert!(matches!(fourth_moment_check(&half, &c, 100, 0), Err(PolylabError::Norm(_))));
        let m = fourth_moment_check(&Pspm::unit(1), &c, 2000, 0).unwrap();
        assert!(m.estimate <= m.bound);
    }

    #[test]
    fn export_lines_shape() {
        let traj = run_chain(&ctx(1.0), 3, 3, None).unwrap();
        let lines = traj.export_lines();
        assert_eq!(lines.len(), 4);
        assert!(lines[0]["logRatio"].is_null());
        assert!(lines[2]["logRatio"].is_f64());
        assert_eq!(lines[1]["top_atoms"].as_array().unwrap().len(), 2);
    }
}
