//! Localization statistics for endpoint distributions: ε-atoms, their time
//! averages, and windows of bounded diameter carrying most of the mass.

use std::collections::HashMap;

use serde::Serialize;
use serde_json::{json, Value};

use crate::env_field::{EnvironmentLaw, SeededField};
use crate::error::{PolylabError, Result};
use crate::lattice::Point;
use crate::polymer_dp::{PolymerState, Truncation};
use crate::walk::StepDistribution;

/// Sites carrying strictly more than `eps`.
pub fn atom_set(f: &[(Point, f64)], eps: f64) -> Vec<Point> {
    f.iter().filter(|a| a.1 > eps).map(|a| a.0).collect()
}

pub fn atomic_mass(f: &[(Point, f64)], eps: f64) -> f64 {
    f.iter().filter(|a| a.1 > eps).map(|a| a.1).sum()
}

/// Threshold sequence `ε_i`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EpsSchedule {
    Constant { eps: f64 },
    /// `ε_i = 1 / log(e + i)`.
    LogDecay,
}

impl EpsSchedule {
    pub fn value(&self, i: usize) -> f64 {
        match *self {
            EpsSchedule::Constant { eps } => eps,
            EpsSchedule::LogDecay => 1.0 / (std::f64::consts::E + i as f64).ln(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            EpsSchedule::Constant { eps } if !(0.0..1.0).contains(&eps) => Err(
                PolylabError::InvalidParameter(format!("eps = {eps} must lie in [0, 1)")),
            ),
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            EpsSchedule::Constant { eps } => format!("const:{eps}"),
            EpsSchedule::LogDecay => "log_decay".to_string(),
        }
    }

    pub fn values(&self, n: usize) -> Vec<f64> {
        (0..n).map(|i| self.value(i)).collect()
    }
}

/// Constant 0.2, 0.05, 0.01 and the logarithmic decay.
pub fn default_schedules() -> Vec<EpsSchedule> {
    vec![
        EpsSchedule::Constant { eps: 0.2 },
        EpsSchedule::Constant { eps: 0.05 },
        EpsSchedule::Constant { eps: 0.01 },
        EpsSchedule::LogDecay,
    ]
}

/// `(1/n) Σ_i atomic_mass(f_i, ε_i)`.
pub fn apa_average(series: &[Vec<(Point, f64)>], schedule: &[f64]) -> Result<f64> {
    if series.is_empty() {
        return Err(PolylabError::Size("empty series".into()));
    }
    if schedule.len() < series.len() {
        return Err(PolylabError::Size(format!(
            "schedule has {} values for {} steps",
            schedule.len(),
            series.len()
        )));
    }
    if let Some(e) = schedule.iter().find(|e| !(0.0..1.0).contains(*e)) {
        return Err(PolylabError::InvalidParameter(format!("eps = {e} must lie in [0, 1)")));
    }
    let total: f64 = series.iter().zip(schedule).map(|(f, &e)| atomic_mass(f, e)).sum();
    Ok(total / series.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GeoWindow {
    pub flag: bool,
    pub window_mass: f64,
    /// False when the mass is only a lower bound (d ≥ 2).
    pub exact: bool,
}

fn check_geo(delta: f64, k: i64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(PolylabError::InvalidParameter(format!("delta = {delta} must lie in (0, 1)")));
    }
    if k < 0 {
        return Err(PolylabError::InvalidParameter(format!("K = {k} must be non-negative")));
    }
    Ok(())
}

/// Largest mass in an interval of length `k`; support must be one-dimensional.
fn window_1d(f: &[(Point, f64)], k: i64) -> f64 {
    let mut pts: Vec<(i64, f64)> = f.iter().map(|a| (a.0 .0[0], a.1)).collect();
    pts.sort_by_key(|p| p.0);
    let (mut best, mut cur, mut lo) = (0.0f64, 0.0f64, 0usize);
    for hi in 0..pts.len() {
        cur += pts[hi].1;
        while pts[hi].0 - pts[lo].0 > k {
            cur -= pts[lo].1;
            lo += 1;
        }
        best = best.max(cur);
    }
    best
}

fn ball_offsets(dim: usize, r: i64) -> Vec<Point> {
    let mut out = Vec::new();
    let span = |d: usize| if d < dim { -r..=r } else { 0..=0 };
    for a in span(0) {
        for b in span(1) {
            for c in span(2) {
                if a.abs() + b.abs() + c.abs() <= r {
                    out.push(Point([a, b, c]));
                }
            }
        }
    }
    out
}

/// Best ℓ1 ball of radius `⌊k/2⌋` centred on a support point.
fn window_balls(f: &[(Point, f64)], dim: usize, k: i64) -> f64 {
    let r = k / 2;
    let offsets = ball_offsets(dim, r);
    let index: HashMap<Point, f64> = f.iter().copied().collect();
    f.iter()
        .map(|&(c, _)| {
            if offsets.len() < f.len() {
                offsets.iter().filter_map(|&o| index.get(&(c + o))).sum::<f64>()
            } else {
                f.iter().filter(|a| (a.0 - c).l1() as i64 <= r).map(|a| a.1).sum::<f64>()
            }
        })
        .fold(0.0, f64::max)
}

/// Supports larger than this use only the [`BALL_CENTERS`] heaviest sites as
/// ball centres when observing a polymer state in d ≥ 2.
pub const BALL_CENTER_LIMIT: usize = 4096;
pub const BALL_CENTERS: usize = 64;

/// Whether some set of diameter at most `k` holds more than `1 − δ`.
///
/// Exact in one dimension; in higher dimension the window is searched among
/// ℓ1 balls only, so the flag can under-report but never over-reports.
pub fn geo_indicator(f: &[(Point, f64)], dim: usize, delta: f64, k: i64) -> Result<GeoWindow> {
    check_geo(delta, k)?;
    let (window_mass, exact) = if dim == 1 {
        (window_1d(f, k), true)
    } else {
        (window_balls(f, dim, k), false)
    };
    Ok(GeoWindow {
        flag: window_mass > 1.0 - delta,
        window_mass,
        exact,
    })
}

/// Fraction of steps flagged by [`geo_indicator`].
pub fn density_average(series: &[Vec<(Point, f64)>], dim: usize, delta: f64, k: i64) -> Result<f64> {
    if series.is_empty() {
        return Err(PolylabError::Size("empty series".into()));
    }
    let mut hits = 0usize;
    for f in series {
        hits += geo_indicator(f, dim, delta, k)?.flag as usize;
    }
    Ok(hits as f64 / series.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SufficientCondition {
    pub holds: bool,
    pub lhs: f64,
    pub rhs: f64,
}

/// `βλ′(β) − λ(β)` against the entropy of the step distribution.
pub fn localization_sufficient(
    beta: f64,
    law: &EnvironmentLaw,
    walk: &StepDistribution,
) -> Result<SufficientCondition> {
    if !(beta >= 0.0 && beta < law.beta_max()) {
        return Err(PolylabError::Domain(format!(
            "beta = {beta} must lie in [0, {})",
            law.beta_max()
        )));
    }
    let lhs = beta * law.lambda_prime(beta)? - law.lambda(beta);
    let rhs = walk.entropy();
    Ok(SufficientCondition {
        holds: lhs > rhs,
        lhs,
        rhs,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LocalizationRecord {
    pub i: usize,
    pub eps: f64,
    pub atomic_mass: f64,
    pub max_atom: f64,
    pub geo_flag: bool,
    pub window_mass: f64,
}

/// Per-step localization records for one schedule.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocalizationSeries {
    pub schedule: EpsSchedule,
    pub delta: f64,
    pub k: i64,
    pub dim: usize,
    pub records: Vec<LocalizationRecord>,
}

impl LocalizationSeries {
    pub fn new(schedule: EpsSchedule, delta: f64, k: i64, dim: usize) -> Result<Self> {
        schedule.validate()?;
        check_geo(delta, k)?;
        Ok(LocalizationSeries {
            schedule,
            delta,
            k,
            dim,
            records: Vec::new(),
        })
    }

    /// Appends the record for the next step.
    pub fn observe(&mut self, f: &[(Point, f64)]) -> Result<()> {
        let i = self.records.len();
        let eps = self.schedule.value(i);
        let geo = geo_indicator(f, self.dim, self.delta, self.k)?;
        self.records.push(LocalizationRecord {
            i,
            eps,
            atomic_mass: atomic_mass(f, eps),
            max_atom: f.iter().map(|a| a.1).fold(0.0, f64::max),
            geo_flag: geo.flag,
            window_mass: geo.window_mass,
        });
        Ok(())
    }

    /// Same record as [`observe`](Self::observe), read straight from the DP
    /// box. In d ≥ 2 a large support is searched with balls around its
    /// heaviest sites only, which keeps the flag conservative.
    pub fn observe_state(&mut self, state: &PolymerState) -> Result<()> {
        let i = self.records.len();
        let eps = self.schedule.value(i);
        let (mut mass, mut max_atom) = (0.0, 0.0f64);
        let mut atoms = Vec::new();
        state.for_each_atom(|x, m| {
            if m > eps {
                mass += m;
            }
            max_atom = max_atom.max(m);
            atoms.push((x, m));
        });
        let window_mass = if self.dim == 1 {
            window_1d(&atoms, self.k)
        } else {
            if atoms.len() > BALL_CENTER_LIMIT {
                atoms.select_nth_unstable_by(BALL_CENTERS - 1, |a, b| b.1.total_cmp(&a.1));
                atoms.truncate(BALL_CENTERS);
            }
            let offsets = ball_offsets(self.dim, self.k / 2);
            atoms
                .iter()
                .map(|&(c, _)| offsets.iter().map(|&o| state.mass_at(c + o)).sum::<f64>())
                .fold(0.0, f64::max)
        };
        self.records.push(LocalizationRecord {
            i,
            eps,
            atomic_mass: mass,
            max_atom,
            geo_flag: window_mass > 1.0 - self.delta,
            window_mass,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn apa_average(&self) -> f64 {
        self.records.iter().map(|r| r.atomic_mass).sum::<f64>() / self.records.len() as f64
    }

    pub fn geo_density(&self) -> f64 {
        self.records.iter().filter(|r| r.geo_flag).count() as f64 / self.records.len() as f64
    }

    pub fn csv_header() -> &'static str {
        "i,eps_i,atomic_mass,max_atom,geo_flag,window_mass"
    }

    pub fn csv_rows(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| {
                format!(
                    "{},{},{},{},{},{}",
                    r.i, r.eps, r.atomic_mass, r.max_atom, r.geo_flag as u8, r.window_mass
                )
            })
            .collect()
    }

    pub fn summary(&self, beta: f64) -> Value {
        json!({
            "beta": beta,
            "n": self.records.len(),
            "apa_avg": self.apa_average(),
            "geo_density": self.geo_density(),
            "eps_schedule": self.schedule.label(),
            "delta": self.delta,
            "K": self.k,
            "geo_exact": self.dim == 1,
        })
    }
}

/// Records `f_0, …, f_{n−1}` of a polymer run for each schedule.
pub fn localization_run(
    walk: &StepDistribution,
    field: &SeededField,
    beta: f64,
    n: usize,
    truncation: Option<&Truncation>,
    schedules: &[EpsSchedule],
    delta: f64,
    k: i64,
) -> Result<Vec<LocalizationSeries>> {
    if n == 0 {
        return Err(PolylabError::InvalidParameter("localization needs n ≥ 1".into()));
    }
    let dim = walk.dim();
    let mut series: Vec<LocalizationSeries> = schedules
        .iter()
        .map(|&s| LocalizationSeries::new(s, delta, k, dim))
        .collect::<Result<_>>()?;
    let mut state = PolymerState::init(dim);
    for i in 0..n {
        if i > 0 {
            state = state.advance(walk, field, beta, truncation)?;
        }
        for s in &mut series {
            s.observe_state(&state)?;
        }
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: i64) -> Point {
        Point::new1(x)
    }

    #[test]
    fn atom_examples() {
        assert_eq!(atom_set(&[(p(0), 1.0)], 0.5), vec![p(0)]);
        let uniform: Vec<_> = (0..4).map(|x| (p(x), 0.25)).collect();
        assert!(atom_set(&uniform, 0.25).is_empty());
        assert_eq!(atomic_mass(&uniform, 0.25), 0.0);
        let f = [(p(0), 0.6), (p(1), 0.3), (p(2), 0.1)];
        assert_eq!(atom_set(&f, 0.2), vec![p(0), p(1)]);
        assert_eq!(atomic_mass(&f, 0.2), 0.6 + 0.3);
        assert_eq!(atomic_mass(&f, 0.0), 0.6 + 0.3 + 0.1);
    }

    #[test]
    fn apa_errors_and_trivial_cases() {
        let point = vec![(p(0), 1.0)];
        assert_eq!(apa_average(&[point.clone(), point.clone()], &[0.3, 0.3]).unwrap(), 1.0);
        assert!(apa_average(&[point.clone(), point.clone()], &[0.3]).is_err());
        assert!(apa_average(std::slice::from_ref(&point), &[1.0]).is_err());
        assert!(apa_average(&[], &[0.1]).is_err());
        let spread: Vec<_> = (0..20).map(|x| (p(x), 0.05)).collect();
        assert_eq!(apa_average(&[spread], &[0.1]).unwrap(), 0.0);
    }

    #[test]
    fn geo_examples() {
        let g = geo_indicator(&[(p(0), 1.0)], 1, 0.3, 0).unwrap();
        assert_eq!((g.flag, g.window_mass), (true, 1.0));
        let g = geo_indicator(&[(p(0), 0.5), (p(100), 0.5)], 1, 0.4, 10).unwrap();
        assert_eq!((g.flag, g.window_mass), (false, 0.5));
        let g = geo_indicator(&[(p(0), 0.55), (p(1), 0.40), (p(50), 0.05)], 1, 0.1, 1).unwrap();
        assert!(g.flag);
        assert!((g.window_mass - 0.95).abs() < 1e-15);
        assert!(geo_indicator(&[(p(0), 1.0)], 1, 0.0, 1).is_err());
        assert!(geo_indicator(&[(p(0), 1.0)], 1, 0.5, -1).is_err());
    }

    #[test]
    fn geo_balls_are_conservative() {
        // Two atoms at ℓ1 distance 2 fit in a diameter-2 set, and in a radius-1 ball.
        let f = [(Point::new2(0, 0), 0.45), (Point::new2(1, 1), 0.45), (Point::new2(9, 9), 0.1)];
        let g = geo_indicator(&f, 2, 0.2, 2).unwrap();
        assert!(!g.exact);
        assert!(!g.flag); // the ball around either atom misses the other
        let g = geo_indicator(&f, 2, 0.2, 4).unwrap();
        assert!(g.flag && (g.window_mass - 0.9).abs() < 1e-15);
    }

    #[test]
    fn ball_offsets_count() {
        assert_eq!(ball_offsets(1, 3).len(), 7);
        assert_eq!(ball_offsets(2, 1).len(), 5);
        assert_eq!(ball_offsets(3, 1).len(), 7);
        assert_eq!(ball_offsets(3, 2).len(), 25);
    }

    #[test]
    fn sufficient_condition_examples() {
        let exp1 = EnvironmentLaw::Exponential { rate: 1.0 };
        for d in 1..=3 {
            let walk = StepDistribution::srw(d).unwrap();
            let c = localization_sufficient(0.5, &exp1, &walk).unwrap();
            assert!((c.lhs - (1.0 + 0.5f64.ln())).abs() < 1e-12);
            assert!(!c.holds);
        }
        let walk = StepDistribution::srw(1).unwrap();
        let c = localization_sufficient(2.0, &EnvironmentLaw::standard_gaussian(), &walk).unwrap();
        assert!((c.lhs - 2.0).abs() < 1e-12 && c.holds);
        let c = localization_sufficient(1e-6, &EnvironmentLaw::standard_gaussian(), &walk).unwrap();
        assert!(c.lhs >= 0.0 && c.lhs < 1e-11 && !c.holds);
        assert!(localization_sufficient(1.0, &exp1, &walk).is_err());
    }

    #[test]
    fn state_path_matches_slice_path() {
        for (d, beta) in [(1usize, 2.0), (2, 1.5), (3, 0.7)] {
            let walk = StepDistribution::srw(d).unwrap();
            let field = SeededField::new(17, EnvironmentLaw::standard_gaussian());
            let state = crate::polymer_dp::run_polymer(&walk, &field, beta, 9, None, |_| {}).unwrap();
            let f = state.endpoint_distribution();
            assert!(f.len() <= BALL_CENTER_LIMIT);
            let schedule = EpsSchedule::Constant { eps: 0.05 };
            let mut a = LocalizationSeries::new(schedule, 0.6, 4, d).unwrap();
            let mut b = a.clone();
            a.observe(&f).unwrap();
            b.observe_state(&state).unwrap();
            let (ra, rb) = (a.records[0], b.records[0]);
            assert!((ra.atomic_mass - rb.atomic_mass).abs() < 1e-15);
            assert_eq!(ra.max_atom, rb.max_atom);
            assert!((ra.window_mass - rb.window_mass).abs() < 1e-15);
            assert_eq!(ra.geo_flag, rb.geo_flag);
        }
    }

    #[test]
    fn schedules() {
        assert_eq!(EpsSchedule::LogDecay.value(0), 1.0);
        assert!(EpsSchedule::LogDecay.value(100) < 0.22);
        assert!(EpsSchedule::Constant { eps: 1.0 }.validate().is_err());
        assert_eq!(default_schedules().len(), 4);
    }

    #[test]
    fn run_records_from_time_zero() {
        let walk = StepDistribution::srw(1).unwrap();
        let field = SeededField::new(5, EnvironmentLaw::standard_gaussian());
        let series = localization_run(&walk, &field, 1.0, 30, None, &default_schedules(), 0.5, 10).unwrap();
        assert_eq!(series.len(), 4);
        for s in &series {
            assert_eq!(s.len(), 30);
            assert_eq!(s.records[0].max_atom, 1.0);
            assert!(s.records[1].max_atom < 1.0);
            for r in &s.records {
                assert!((0.0..=1.0 + 1e-12).contains(&r.atomic_mass));
                if r.max_atom > r.eps {
                    assert!(r.max_atom <= r.atomic_mass);
                }
                if r.geo_flag {
                    assert!(r.window_mass > 0.5);
                }
            }
        }
        assert_eq!(series[0].csv_rows().len(), 30);
        assert_eq!(series[3].summary(1.0)["eps_schedule"], "log_decay");
    }
}
