//! Partitioned subprobability measures, partial isometries and the `d_α` metric.
//!
//! A [`Pspm`] is a finitely supported subprobability mass function on
//! `N × Z^d` (levels start at 1). Two elements are identified when one is
//! obtained from the other by translating each level and relabeling levels;
//! `d_α` is the quotient metric and vanishes exactly on those orbits.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde_json::{json, Value};

use crate::assignment;
use crate::error::{PolylabError, Result};
use crate::lattice::{Point, MAX_DIM};

/// Largest support the exact metric accepts by default.
pub const DEFAULT_SUPPORT_CAP: usize = 8;

/// In [`DistanceMode::Auto`], pairs with both supports at most this size use the exact metric.
pub const AUTO_EXACT_CAP: usize = 6;

/// Largest number of atoms per empirical measure accepted by [`wasserstein`].
pub const MAX_EMPIRICAL_ATOMS: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Site {
    pub level: u32,
    pub x: Point,
}

impl Site {
    pub fn new(level: u32, x: Point) -> Self {
        Site { level, x }
    }

    /// Difference on `N × Z^d`; `None` stands for `∞` (different levels).
    pub fn diff(self, other: Site) -> Option<Point> {
        (self.level == other.level).then(|| self.x - other.x)
    }
}

/// `‖·‖_1` of a difference, with `∞` as `None`.
fn diff_norm(d: Option<Point>) -> Option<u64> {
    d.map(|p| p.l1())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pspm {
    dim: usize,
    /// Sorted by site; every mass strictly positive.
    atoms: Vec<(Site, f64)>,
    norm: f64,
}

impl Pspm {
    /// Builds an element from raw atoms. Zero masses are discarded.
    pub fn new(dim: usize, atoms: Vec<(Site, f64)>) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(PolylabError::InvalidParameter(format!(
                "dimension {dim} not in 1..=3"
            )));
        }
        let mut atoms: Vec<(Site, f64)> = atoms.into_iter().filter(|a| a.1 != 0.0).collect();
        atoms.sort_by_key(|a| a.0);
        for w in atoms.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(PolylabError::InvalidParameter(format!(
                    "duplicate site ({}, {})",
                    w[0].0.level, w[0].0.x
                )));
            }
        }
        for &(s, m) in &atoms {
            if s.level == 0 || !s.x.fits_dim(dim) {
                return Err(PolylabError::InvalidParameter(format!(
                    "site ({}, {}) invalid for dimension {dim}",
                    s.level, s.x
                )));
            }
            if !(m > 0.0 && m <= 1.0 + 1e-12) {
                return Err(PolylabError::Mass(format!("atom mass {m} not in (0, 1]")));
            }
        }
        let norm = atoms.iter().map(|a| a.1).sum::<f64>();
        if norm > 1.0 + 1e-12 {
            return Err(PolylabError::Mass(format!("total mass {norm} exceeds 1")));
        }
        Ok(Pspm { dim, atoms, norm })
    }

    /// The zero element.
    pub fn zero(dim: usize) -> Self {
        Pspm {
            dim,
            atoms: Vec::new(),
            norm: 0.0,
        }
    }

    /// Unit mass at `(1, 0)`.
    pub fn unit(dim: usize) -> Self {
        Pspm {
            dim,
            atoms: vec![(Site::new(1, Point::ORIGIN), 1.0)],
            norm: 1.0,
        }
    }

    /// Places a pmf on `Z^d` at level 1.
    pub fn embed(dim: usize, pmf: &[(Point, f64)]) -> Result<Self> {
        let total: f64 = pmf.iter().map(|p| p.1).sum();
        if total > 1.0 + 1e-12 {
            return Err(PolylabError::Mass(format!("pmf sums to {total} > 1")));
        }
        if pmf.iter().any(|p| p.1 < 0.0) {
            return Err(PolylabError::Mass("negative pmf entry".into()));
        }
        Self::new(
            dim,
            pmf.iter().map(|&(x, m)| (Site::new(1, x), m)).collect(),
        )
    }

    /// Wraps atoms already known to be sorted, distinct and positive.
    pub(crate) fn from_sorted_unchecked(dim: usize, atoms: Vec<(Site, f64)>) -> Self {
        let norm = atoms.iter().map(|a| a.1).sum();
        Pspm { dim, atoms, norm }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[(Site, f64)] {
        &self.atoms
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn get(&self, site: Site) -> f64 {
        self.atoms
            .binary_search_by(|a| a.0.cmp(&site))
            .map(|i| self.atoms[i].1)
            .unwrap_or(0.0)
    }

    /// The N-support `H_f`.
    pub fn levels(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.atoms.iter().map(|a| a.0.level).collect();
        set.into_iter().collect()
    }

    pub fn max_atom(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).fold(0.0, f64::max)
    }

    /// Atoms sorted by decreasing mass, ties broken by site order.
    pub fn ranked_atoms(&self) -> Vec<(Site, f64)> {
        let mut v = self.atoms.clone();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    }

    /// Keeps the `keep` heaviest atoms.
    pub fn truncate(&self, keep: usize) -> Pspm {
        if keep >= self.atoms.len() {
            return self.clone();
        }
        let mut kept: Vec<(Site, f64)> = self.ranked_atoms().into_iter().take(keep).collect();
        kept.sort_by_key(|a| a.0);
        Pspm::from_sorted_unchecked(self.dim, kept)
    }

    /// Applies `(n, x) ↦ (σ(n), x − x_n)` level by level, so that the result `g`
    /// satisfies `g(σ(n), x) = f(n, x + x_n)`. Levels missing from `map` are kept as is.
    pub fn translate_levels(&self, map: &BTreeMap<u32, (u32, Point)>) -> Result<Pspm> {
        let atoms = self
            .atoms
            .iter()
            .map(|&(s, m)| match map.get(&s.level) {
                Some(&(to, shift)) => (Site::new(to, s.x - shift), m),
                None => (s, m),
            })
            .collect();
        Pspm::new(self.dim, atoms)
    }

    /// Canonical orbit representative: each level shifted so its smallest
    /// site sits at the origin, levels relabeled `1..` by decreasing level mass
    /// (ties broken by the shifted atom lists).
    pub fn canonical(&self) -> Pspm {
        let mut groups: BTreeMap<u32, Vec<(Point, f64)>> = BTreeMap::new();
        for &(s, m) in &self.atoms {
            groups.entry(s.level).or_default().push((s.x, m));
        }
        let mut levels: Vec<(f64, Vec<(Point, f64)>)> = groups
            .into_values()
            .map(|pts| {
                let anchor = pts[0].0;
                let shifted: Vec<(Point, f64)> = pts.iter().map(|&(x, m)| (x - anchor, m)).collect();
                (shifted.iter().map(|p| p.1).sum(), shifted)
            })
            .collect();
        levels.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| cmp_atom_lists(&a.1, &b.1)));
        let mut atoms = Vec::with_capacity(self.atoms.len());
        for (k, (_, pts)) in levels.into_iter().enumerate() {
            for (x, m) in pts {
                atoms.push((Site::new(k as u32 + 1, x), m));
            }
        }
        Pspm::from_sorted_unchecked(self.dim, atoms)
    }

    /// `{"atoms": [[level, [x...], mass], ...]}`
    pub fn to_json(&self) -> Value {
        json!({ "atoms": atoms_json(self.dim, &self.atoms) })
    }

    pub fn from_json(value: &Value) -> Result<Pspm> {
        let bad = |msg: &str| PolylabError::InvalidParameter(format!("pspm json: {msg}"));
        let list = value
            .get("atoms")
            .and_then(Value::as_array)
            .ok_or_else(|| bad("missing `atoms` array"))?;
        let mut dim = None;
        let mut atoms = Vec::with_capacity(list.len());
        for entry in list {
            let e = entry.as_array().filter(|e| e.len() == 3).ok_or_else(|| bad("atom must be [level, [x...], mass]"))?;
            let level = e[0].as_u64().ok_or_else(|| bad("level must be a positive integer"))?;
            let coords: Vec<i64> = e[1]
                .as_array()
                .ok_or_else(|| bad("coordinates must be an array"))?
                .iter()
                .map(|c| c.as_i64().ok_or_else(|| bad("coordinate must be an integer")))
                .collect::<Result<_>>()?;
            let mass = e[2].as_f64().ok_or_else(|| bad("mass must be a number"))?;
            match dim {
                None => dim = Some(coords.len()),
                Some(d) if d != coords.len() => return Err(bad("inconsistent coordinate lengths")),
                _ => {}
            }
            let x = Point::from_slice(&coords).ok_or_else(|| bad("at most 3 coordinates"))?;
            let level = u32::try_from(level).map_err(|_| bad("level too large"))?;
            atoms.push((Site::new(level, x), mass));
        }
        Pspm::new(dim.unwrap_or(1), atoms)
    }
}

pub(crate) fn atoms_json(dim: usize, atoms: &[(Site, f64)]) -> Value {
    Value::Array(
        atoms
            .iter()
            .map(|(s, m)| json!([s.level, s.x.coords(dim), m]))
            .collect(),
    )
}

fn cmp_atom_lists(a: &[(Point, f64)], b: &[(Point, f64)]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = x.0.cmp(&y.0).then(x.1.total_cmp(&y.1));
        if o != Ordering::Equal {
            return o;
        }
    }
    a.len().cmp(&b.len())
}

/// Maximum degree of an isometry; `Infinite` when no pair violates the isometry condition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Degree {
    Finite(u64),
    Infinite,
}

impl Degree {
    /// `2^{-deg}`, exactly 0 for an infinite degree.
    pub fn penalty(self) -> f64 {
        match self {
            Degree::Infinite => 0.0,
            Degree::Finite(m) => 0.5f64.powi(m.min(2000) as i32),
        }
    }

    pub fn to_json(self) -> Value {
        match self {
            Degree::Infinite => json!("inf"),
            Degree::Finite(m) => json!(m),
        }
    }
}

/// Violation level of a pair of sources under a map: `None` when the pair is
/// consistent (`u − v = φ(u) − φ(v)`, with `∞ = ∞`), otherwise
/// `min(‖u − v‖_1, ‖φ(u) − φ(v)‖_1)`.
fn pair_violation(u: Site, v: Site, pu: Site, pv: Site) -> Option<u64> {
    let src = u.diff(v);
    let tgt = pu.diff(pv);
    if src == tgt {
        return None;
    }
    match (diff_norm(src), diff_norm(tgt)) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (Some(a), None) | (None, Some(a)) => Some(a),
        (None, None) => None,
    }
}

/// Finite partial injection `φ : A → N × Z^d`.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Isometry {
    pairs: Vec<(Site, Site)>,
}

impl Isometry {
    pub fn new(mut pairs: Vec<(Site, Site)>) -> Result<Self> {
        pairs.sort();
        let sources: BTreeSet<Site> = pairs.iter().map(|p| p.0).collect();
        let targets: BTreeSet<Site> = pairs.iter().map(|p| p.1).collect();
        if sources.len() != pairs.len() || targets.len() != pairs.len() {
            return Err(PolylabError::InvalidParameter(
                "isometry pairs must have distinct sources and distinct targets".into(),
            ));
        }
        Ok(Isometry { pairs })
    }

    pub fn empty() -> Self {
        Isometry { pairs: Vec::new() }
    }

    pub fn pairs(&self) -> &[(Site, Site)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn apply(&self, u: Site) -> Option<Site> {
        self.pairs
            .binary_search_by(|p| p.0.cmp(&u))
            .ok()
            .map(|i| self.pairs[i].1)
    }

    pub fn degree(&self) -> Degree {
        let mut deg = Degree::Infinite;
        for (i, &(u, pu)) in self.pairs.iter().enumerate() {
            for &(v, pv) in &self.pairs[i + 1..] {
                if let Some(m) = pair_violation(u, v, pu, pv) {
                    deg = deg.min(Degree::Finite(m));
                }
            }
        }
        deg
    }

    pub fn inverse(&self) -> Isometry {
        let mut pairs: Vec<(Site, Site)> = self.pairs.iter().map(|&(a, b)| (b, a)).collect();
        pairs.sort();
        Isometry { pairs }
    }

    /// `θ = ψ ∘ φ` on `{a ∈ A : φ(a) ∈ B}`.
    pub fn then(&self, psi: &Isometry) -> Isometry {
        let pairs = self
            .pairs
            .iter()
            .filter_map(|&(a, b)| psi.apply(b).map(|c| (a, c)))
            .collect();
        Isometry { pairs }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 1.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(PolylabError::InvalidParameter(format!("alpha = {alpha} must exceed 1")))
    }
}

/// `d_{α,φ}(f, g)`.
pub fn d_alpha_phi(f: &Pspm, g: &Pspm, phi: &Isometry, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let mut matched = 0.0;
    for &(u, v) in phi.pairs() {
        matched += (f.get(u) - g.get(v)).abs();
    }
    let mut lone_f = 0.0;
    for &(u, m) in f.atoms() {
        if phi.apply(u).is_none() {
            lone_f += m.powf(alpha);
        }
    }
    let targets: BTreeSet<Site> = phi.pairs().iter().map(|p| p.1).collect();
    let mut lone_g = 0.0;
    for &(v, m) in g.atoms() {
        if !targets.contains(&v) {
            lone_g += m.powf(alpha);
        }
    }
    Ok(alpha * matched + lone_f + lone_g + phi.degree().penalty())
}

/// A distance value together with the isometry attaining it.
#[derive(Clone, Debug, PartialEq)]
pub struct Distance {
    pub value: f64,
    pub map: Isometry,
    pub degree: Degree,
}

/// Working representation shared by the exact search and the heuristic:
/// sources are atoms of `f`, targets atoms of `g`, and a map is a vector of
/// optional target indices.
struct MatchProblem<'a> {
    fs: &'a [(Site, f64)],
    gs: &'a [(Site, f64)],
    /// Change of `d_{α,φ}` relative to the empty map when source `i` is sent to target `j`.
    delta: Vec<Vec<f64>>,
    baseline: f64,
    alpha: f64,
}

impl<'a> MatchProblem<'a> {
    fn new(f: &'a Pspm, g: &'a Pspm, alpha: f64) -> Self {
        let fs = f.atoms();
        let gs = g.atoms();
        let fa: Vec<f64> = fs.iter().map(|a| a.1.powf(alpha)).collect();
        let ga: Vec<f64> = gs.iter().map(|a| a.1.powf(alpha)).collect();
        let delta = fs
            .iter()
            .enumerate()
            .map(|(i, a)| {
                gs.iter()
                    .enumerate()
                    .map(|(j, b)| alpha * (a.1 - b.1).abs() - fa[i] - ga[j])
                    .collect()
            })
            .collect();
        let baseline = fa.iter().sum::<f64>() + ga.iter().sum::<f64>();
        MatchProblem {
            fs,
            gs,
            delta,
            baseline,
            alpha,
        }
    }

    fn degree_of(&self, assign: &[Option<usize>]) -> Degree {
        let pairs: Vec<(Site, Site)> = assign
            .iter()
            .enumerate()
            .filter_map(|(i, j)| j.map(|j| (self.fs[i].0, self.gs[j].0)))
            .collect();
        let mut deg = Degree::Infinite;
        for (k, &(u, pu)) in pairs.iter().enumerate() {
            for &(v, pv) in &pairs[k + 1..] {
                if let Some(m) = pair_violation(u, v, pu, pv) {
                    deg = deg.min(Degree::Finite(m));
                }
            }
        }
        deg
    }

    fn score(&self, assign: &[Option<usize>]) -> f64 {
        let mut s = self.baseline;
        for (i, j) in assign.iter().enumerate() {
            if let Some(j) = j {
                s += self.delta[i][*j];
            }
        }
        s + self.degree_of(assign).penalty()
    }

    /// Recomputes the value from the definition so that exact matches give exact zeros.
    fn finish(&self, assign: &[Option<usize>]) -> Distance {
        let pairs: Vec<(Site, Site)> = assign
            .iter()
            .enumerate()
            .filter_map(|(i, j)| j.map(|j| (self.fs[i].0, self.gs[j].0)))
            .collect();
        let mut used = vec![false; self.gs.len()];
        let mut matched = 0.0;
        let mut lone = 0.0;
        for (i, j) in assign.iter().enumerate() {
            match j {
                Some(j) => {
                    used[*j] = true;
                    matched += (self.fs[i].1 - self.gs[*j].1).abs();
                }
                None => lone += self.fs[i].1.powf(self.alpha),
            }
        }
        for (j, u) in used.iter().enumerate() {
            if !u {
                lone += self.gs[j].1.powf(self.alpha);
            }
        }
        let map = Isometry::new(pairs).expect("assignment is injective");
        let degree = map.degree();
        Distance {
            value: self.alpha * matched + lone + degree.penalty(),
            map,
            degree,
        }
    }
}

/// Exact `d_α` by enumerating every injective partial map between the supports.
///
/// Maps touching sites outside the supports never do better than their
/// restriction to the supports, so they are not enumerated.
pub fn d_alpha_exact(f: &Pspm, g: &Pspm, alpha: f64, support_cap: usize) -> Result<Distance> {
    check_alpha(alpha)?;
    if f.len() > support_cap || g.len() > support_cap {
        return Err(PolylabError::Size(format!(
            "supports {} and {} exceed the exact-metric cap {support_cap}",
            f.len(),
            g.len()
        )));
    }
    let problem = MatchProblem::new(f, g, alpha);
    let s = problem.fs.len();
    // optimistic completion of the remaining rows
    let mut rest = vec![0.0; s + 1];
    for i in (0..s).rev() {
        let best_row = problem.delta[i].iter().cloned().fold(0.0, f64::min);
        rest[i] = rest[i + 1] + best_row;
    }
    let mut search = ExactSearch {
        problem: &problem,
        rest,
        used: vec![false; problem.gs.len()],
        assign: vec![None; s],
        best: f64::INFINITY,
        best_assign: vec![None; s],
    };
    search.descend(0, 0.0, Degree::Infinite);
    let best_assign = search.best_assign.clone();
    Ok(problem.finish(&best_assign))
}

struct ExactSearch<'p, 'a> {
    problem: &'p MatchProblem<'a>,
    rest: Vec<f64>,
    used: Vec<bool>,
    assign: Vec<Option<usize>>,
    best: f64,
    best_assign: Vec<Option<usize>>,
}

impl ExactSearch<'_, '_> {
    fn descend(&mut self, i: usize, partial: f64, deg: Degree) {
        let p = self.problem;
        let bound = p.baseline + partial + self.rest[i] + deg.penalty();
        if bound >= self.best {
            return;
        }
        if i == p.fs.len() {
            self.best = bound;
            self.best_assign.clone_from(&self.assign);
            return;
        }
        for j in 0..p.gs.len() {
            if self.used[j] {
                continue;
            }
            let mut d = deg;
            let (u, pu) = (p.fs[i].0, p.gs[j].0);
            for (k, prev) in self.assign[..i].iter().enumerate() {
                if let Some(jj) = prev {
                    if let Some(m) = pair_violation(u, p.fs[k].0, pu, p.gs[*jj].0) {
                        d = d.min(Degree::Finite(m));
                    }
                }
            }
            self.used[j] = true;
            self.assign[i] = Some(j);
            self.descend(i + 1, partial + p.delta[i][j], d);
            self.assign[i] = None;
            self.used[j] = false;
        }
        self.descend(i + 1, partial, deg);
    }
}

/// Number of heaviest atoms per level used as translation anchors.
const ANCHORS: usize = 4;
/// Number of heaviest sources and targets the local search may move on large supports.
const LOCAL_MOVES: usize = 8;

/// Heuristic upper bound on `d_α`: the best of the empty map, per-level
/// translation alignments anchored at heavy atoms, and a local search
/// (reassign, unmatch, swap) started from those candidates.
///
/// The value is always `d_{α,φ}` of an actual injective map, so it never
/// falls below the exact metric.
pub fn d_alpha_upper(f: &Pspm, g: &Pspm, alpha: f64) -> Result<Distance> {
    check_alpha(alpha)?;
    let problem = MatchProblem::new(f, g, alpha);
    let s = problem.fs.len();
    let empty = vec![None; s];
    let translated = translation_candidate(&problem);
    let mut best_assign = empty.clone();
    let mut best = problem.score(&empty);
    for start in [translated, empty] {
        let improved = local_search(&problem, start);
        let v = problem.score(&improved);
        if v < best {
            best = v;
            best_assign = improved;
        }
    }
    Ok(problem.finish(&best_assign))
}

fn level_groups(atoms: &[(Site, f64)]) -> BTreeMap<u32, Vec<usize>> {
    let mut g: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, a) in atoms.iter().enumerate() {
        g.entry(a.0.level).or_default().push(i);
    }
    g
}

fn heaviest(atoms: &[(Site, f64)], idx: &[usize], k: usize) -> Vec<usize> {
    let mut v = idx.to_vec();
    v.sort_by(|&a, &b| atoms[b].1.total_cmp(&atoms[a].1).then(atoms[a].0.cmp(&atoms[b].0)));
    v.truncate(k);
    v
}

/// Greedy union of per-level translations; the result has infinite degree.
fn translation_candidate(p: &MatchProblem) -> Vec<Option<usize>> {
    let fl = level_groups(p.fs);
    let gl = level_groups(p.gs);
    let g_index: BTreeMap<Site, usize> = p.gs.iter().enumerate().map(|(j, a)| (a.0, j)).collect();
    // best translation per (f level, g level): (gain, pairs)
    let mut options: Vec<(f64, u32, u32, Vec<(usize, usize)>)> = Vec::new();
    for (&lf, fi) in &fl {
        for (&lg, gi) in &gl {
            let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
            let mut tried = BTreeSet::new();
            for &a in &heaviest(p.fs, fi, ANCHORS) {
                for &b in &heaviest(p.gs, gi, ANCHORS) {
                    let t = p.gs[b].0.x - p.fs[a].0.x;
                    if !tried.insert(t) {
                        continue;
                    }
                    let mut gain = 0.0;
                    let mut pairs = Vec::new();
                    for &i in fi {
                        let target = Site::new(lg, p.fs[i].0.x + t);
                        if let Some(&j) = g_index.get(&target) {
                            if p.delta[i][j] < 0.0 {
                                gain -= p.delta[i][j];
                                pairs.push((i, j));
                            }
                        }
                    }
                    if gain > 0.0 && best.as_ref().is_none_or(|b| gain > b.0) {
                        best = Some((gain, pairs));
                    }
                }
            }
            if let Some((gain, pairs)) = best {
                options.push((gain, lf, lg, pairs));
            }
        }
    }
    options.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut used_f = BTreeSet::new();
    let mut used_g = BTreeSet::new();
    let mut assign = vec![None; p.fs.len()];
    for (_, lf, lg, pairs) in options {
        if used_f.contains(&lf) || used_g.contains(&lg) {
            continue;
        }
        used_f.insert(lf);
        used_g.insert(lg);
        for (i, j) in pairs {
            assign[i] = Some(j);
        }
    }
    assign
}

/// First-improvement hill climbing over single-source moves.
fn local_search(p: &MatchProblem, mut assign: Vec<Option<usize>>) -> Vec<Option<usize>> {
    let s = p.fs.len();
    let t = p.gs.len();
    let all_f: Vec<usize> = (0..s).collect();
    let all_g: Vec<usize> = (0..t).collect();
    let movable_f = if s <= LOCAL_MOVES { all_f } else { heaviest(p.fs, &all_f, LOCAL_MOVES) };
    let movable_g = if t <= LOCAL_MOVES { all_g } else { heaviest(p.gs, &all_g, LOCAL_MOVES) };
    let mut current = p.score(&assign);
    let mut rounds = 0;
    loop {
        rounds += 1;
        let mut improved = false;
        let mut taken = vec![false; t];
        for j in assign.iter().flatten() {
            taken[*j] = true;
        }
        'moves: for &i in &movable_f {
            // unmatch
            if assign[i].is_some() {
                let old = assign[i];
                assign[i] = None;
                let v = p.score(&assign);
                if v < current - 1e-15 {
                    current = v;
                    improved = true;
                    break 'moves;
                }
                assign[i] = old;
            }
            // send to a free target
            for &j in &movable_g {
                if taken[j] {
                    continue;
                }
                let old = assign[i];
                assign[i] = Some(j);
                let v = p.score(&assign);
                if v < current - 1e-15 {
                    current = v;
                    improved = true;
                    break 'moves;
                }
                assign[i] = old;
            }
            // swap with another source
            for &k in &movable_f {
                if k <= i || (assign[i].is_none() && assign[k].is_none()) {
                    continue;
                }
                assign.swap(i, k);
                let v = p.score(&assign);
                if v < current - 1e-15 {
                    current = v;
                    improved = true;
                    break 'moves;
                }
                assign.swap(i, k);
            }
        }
        if !improved || rounds > 200 {
            return assign;
        }
    }
}

/// Searches for a level bijection and per-level translations carrying `f` onto `g`
/// (`g(σ(n), x) = f(n, x + x_n)`), returning `n ↦ (σ(n), x_n)`.
pub fn find_orbit(f: &Pspm, g: &Pspm) -> Option<BTreeMap<u32, (u32, Point)>> {
    let split = |h: &Pspm| -> Vec<(u32, Vec<(Point, f64)>)> {
        let mut m: BTreeMap<u32, Vec<(Point, f64)>> = BTreeMap::new();
        for &(s, v) in h.atoms() {
            m.entry(s.level).or_default().push((s.x, v));
        }
        m.into_iter().collect()
    };
    let fl = split(f);
    let gl = split(g);
    if fl.len() != gl.len() {
        return None;
    }
    // translations preserve lexicographic order, so the smallest sites must correspond
    let fits = |a: &[(Point, f64)], b: &[(Point, f64)]| -> Option<Point> {
        if a.len() != b.len() {
            return None;
        }
        let shift = a[0].0 - b[0].0;
        a.iter()
            .zip(b)
            .all(|(p, q)| p.0 - q.0 == shift && p.1 == q.1)
            .then_some(shift)
    };
    fn assign_levels(
        k: usize,
        fl: &[(u32, Vec<(Point, f64)>)],
        gl: &[(u32, Vec<(Point, f64)>)],
        used: &mut Vec<bool>,
        out: &mut BTreeMap<u32, (u32, Point)>,
        fits: &dyn Fn(&[(Point, f64)], &[(Point, f64)]) -> Option<Point>,
    ) -> bool {
        if k == fl.len() {
            return true;
        }
        for j in 0..gl.len() {
            if used[j] {
                continue;
            }
            if let Some(shift) = fits(&fl[k].1, &gl[j].1) {
                used[j] = true;
                out.insert(fl[k].0, (gl[j].0, shift));
                if assign_levels(k + 1, fl, gl, used, out, fits) {
                    return true;
                }
                out.remove(&fl[k].0);
                used[j] = false;
            }
        }
        false
    }
    let mut out = BTreeMap::new();
    let mut used = vec![false; gl.len()];
    assign_levels(0, &fl, &gl, &mut used, &mut out, &fits).then_some(out)
}

/// Uniformly weighted finite collection of elements.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    atoms: Vec<Pspm>,
}

impl EmpiricalMeasure {
    pub fn new(atoms: Vec<Pspm>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(PolylabError::InvalidParameter("empirical measure needs at least one atom".into()));
        }
        Ok(EmpiricalMeasure { atoms })
    }

    pub fn atoms(&self) -> &[Pspm] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.atoms.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DistanceMode {
    Exact,
    Upper,
    /// Exact when both supports are at most [`AUTO_EXACT_CAP`], upper bound otherwise.
    Auto,
}

pub fn distance(f: &Pspm, g: &Pspm, alpha: f64, mode: DistanceMode) -> Result<Distance> {
    match mode {
        DistanceMode::Exact => d_alpha_exact(f, g, alpha, DEFAULT_SUPPORT_CAP),
        DistanceMode::Upper => d_alpha_upper(f, g, alpha),
        DistanceMode::Auto => {
            if f.len() <= AUTO_EXACT_CAP && g.len() <= AUTO_EXACT_CAP {
                d_alpha_exact(f, g, alpha, AUTO_EXACT_CAP)
            } else {
                d_alpha_upper(f, g, alpha)
            }
        }
    }
}

/// `W_α` between two uniform empirical measures with the same number of atoms,
/// solved as an assignment problem.
pub fn wasserstein(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    alpha: f64,
    mode: DistanceMode,
) -> Result<f64> {
    if mu.len() != nu.len() {
        return Err(PolylabError::InvalidParameter(format!(
            "empirical measures have {} and {} atoms",
            mu.len(),
            nu.len()
        )));
    }
    if mu.len() > MAX_EMPIRICAL_ATOMS {
        return Err(PolylabError::Size(format!(
            "{} atoms exceed the assignment limit {MAX_EMPIRICAL_ATOMS}",
            mu.len()
        )));
    }
    let mut cost = Vec::with_capacity(mu.len());
    for f in mu.atoms() {
        let row: Result<Vec<f64>> = nu
            .atoms()
            .iter()
            .map(|g| distance(f, g, alpha, mode).map(|d| d.value))
            .collect();
        cost.push(row?);
    }
    let (total, _) = assignment::solve(&cost);
    Ok(total / mu.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s1(level: u32, x: i64) -> Site {
        Site::new(level, Point::new1(x))
    }

    fn pspm(atoms: &[(u32, i64, f64)]) -> Pspm {
        Pspm::new(1, atoms.iter().map(|&(l, x, m)| (s1(l, x), m)).collect()).unwrap()
    }

    #[test]
    fn embed_examples() {
        let e = Pspm::embed(1, &[(Point::ORIGIN, 1.0)]).unwrap();
        assert_eq!(e, Pspm::unit(1));
        assert!(Pspm::embed(1, &[]).unwrap().is_empty());
        let two = Pspm::embed(1, &[(Point::new1(-1), 0.5), (Point::new1(1), 0.5)]).unwrap();
        assert_eq!(two.len(), 2);
        assert!(two.atoms().iter().all(|a| a.0.level == 1));
        assert_eq!(two.norm(), 1.0);
        assert!(matches!(
            Pspm::embed(1, &[(Point::ORIGIN, 0.7), (Point::new1(1), 0.7)]),
            Err(PolylabError::Mass(_))
        ));
    }

    #[test]
    fn levels_and_norm() {
        let f = pspm(&[(1, 0, 0.2), (3, 5, 0.3), (3, 6, 0.1)]);
        assert_eq!(f.levels(), vec![1, 3]);
        assert!((f.norm() - 0.6).abs() < 1e-15);
        assert_eq!(f.get(s1(3, 5)), 0.3);
        assert_eq!(f.get(s1(2, 5)), 0.0);
    }

    #[test]
    fn degree_examples() {
        let single = Isometry::new(vec![(s1(1, 0), s1(4, 9))]).unwrap();
        assert_eq!(single.degree(), Degree::Infinite);
        let phi = Isometry::new(vec![(s1(1, 0), s1(1, 0)), (s1(1, 3), s1(1, 4))]).unwrap();
        assert_eq!(phi.degree(), Degree::Finite(3));
        // same level in the source, split across levels in the target
        let split = Isometry::new(vec![(s1(1, 0), s1(1, 0)), (s1(1, 5), s1(2, 5))]).unwrap();
        assert_eq!(split.degree(), Degree::Finite(5));
        // different levels map to different levels: consistent
        let levels = Isometry::new(vec![(s1(1, 0), s1(2, 7)), (s1(2, 0), s1(1, -3))]).unwrap();
        assert_eq!(levels.degree(), Degree::Infinite);
        assert!(Isometry::new(vec![(s1(1, 0), s1(1, 0)), (s1(1, 1), s1(1, 0))]).is_err());
        assert!(Isometry::new(vec![(s1(1, 0), s1(1, 0)), (s1(1, 0), s1(1, 1))]).is_err());
    }

    #[test]
    fn penalty_of_infinite_degree_is_exact_zero() {
        assert_eq!(Degree::Infinite.penalty(), 0.0);
        assert_eq!(Degree::Finite(3).penalty(), 0.125);
        assert!(Degree::Finite(u64::MAX).penalty() >= 0.0);
    }

    #[test]
    fn d_alpha_phi_examples() {
        let f = pspm(&[(1, 0, 0.5), (1, 1, 0.5)]);
        let id = Isometry::new(f.atoms().iter().map(|a| (a.0, a.0)).collect()).unwrap();
        assert_eq!(d_alpha_phi(&f, &f, &id, 2.0).unwrap(), 0.0);
        let zero = Pspm::zero(1);
        assert_eq!(d_alpha_phi(&f, &zero, &Isometry::empty(), 2.0).unwrap(), 0.5);
        let g = pspm(&[(1, 2, 0.3)]);
        let v = d_alpha_phi(&f, &g, &Isometry::empty(), 3.0).unwrap();
        assert!((v - (0.125 + 0.125 + 0.027)).abs() < 1e-15);
        assert!(d_alpha_phi(&f, &g, &Isometry::empty(), 1.0).is_err());
    }

    #[test]
    fn exact_examples() {
        let f = pspm(&[(1, 0, 0.4), (1, 2, 0.35), (2, 7, 0.2)]);
        assert_eq!(d_alpha_exact(&f, &f, 2.0, 8).unwrap().value, 0.0);
        let mut map = BTreeMap::new();
        map.insert(1, (2, Point::new1(-5)));
        map.insert(2, (1, Point::new1(3)));
        let g = f.translate_levels(&map).unwrap();
        assert_eq!(d_alpha_exact(&f, &g, 2.0, 8).unwrap().value, 0.0);
        assert_eq!(d_alpha_exact(&Pspm::unit(1), &Pspm::zero(1), 2.0, 8).unwrap().value, 1.0);
        let big = Pspm::new(1, (0..9).map(|x| (s1(1, x), 0.1)).collect()).unwrap();
        assert!(matches!(d_alpha_exact(&big, &f, 2.0, 8), Err(PolylabError::Size(_))));
    }

    #[test]
    fn exact_prefers_cheap_inconsistent_match_over_unmatching() {
        // matching both atoms needs a distance-4 violation, penalty 1/16,
        // cheaper than leaving a 0.5 atom unmatched (0.25 + 0.25)
        let f = pspm(&[(1, 0, 0.5), (1, 4, 0.5)]);
        let g = pspm(&[(1, 0, 0.5), (1, 5, 0.5)]);
        let d = d_alpha_exact(&f, &g, 2.0, 8).unwrap();
        assert_eq!(d.value, 0.0625);
        assert_eq!(d.degree, Degree::Finite(4));
    }

    #[test]
    fn upper_examples() {
        let f = pspm(&[(1, 0, 0.4), (1, 2, 0.35), (2, 7, 0.2)]);
        assert_eq!(d_alpha_upper(&f, &f, 2.0).unwrap().value, 0.0);
        let g = pspm(&[(1, 0, 0.5), (1, 5, 0.5)]);
        let h = pspm(&[(1, 0, 0.5), (1, 4, 0.5)]);
        assert_eq!(d_alpha_upper(&h, &g, 2.0).unwrap().value, 0.0625);
    }

    #[test]
    fn truncate_examples() {
        let f = pspm(&[(1, 0, 0.3), (1, 1, 0.3), (1, 2, 0.1), (2, 0, 0.2)]);
        assert_eq!(f.truncate(10), f);
        assert_eq!(Pspm::unit(1).truncate(1), Pspm::unit(1));
        let t = f.truncate(2);
        assert_eq!(t.atoms(), &[(s1(1, 0), 0.3), (s1(1, 1), 0.3)]);
        assert!((t.norm() - 0.6).abs() < 1e-15);
        let d = d_alpha_exact(&f, &t, 2.0, 8).unwrap().value;
        assert!(d <= 0.1f64.powi(2) + 0.2f64.powi(2) + 1e-15);
    }

    #[test]
    fn canonical_identifies_orbits() {
        let f = pspm(&[(1, 3, 0.2), (1, 5, 0.1), (4, -2, 0.4)]);
        let mut map = BTreeMap::new();
        map.insert(1, (7, Point::new1(10)));
        map.insert(4, (2, Point::new1(-1)));
        let g = f.translate_levels(&map).unwrap();
        assert_eq!(f.canonical(), g.canonical());
        let c = f.canonical();
        assert_eq!(c.atoms()[0], (s1(1, 0), 0.4));
        assert_ne!(f.canonical(), pspm(&[(1, 3, 0.2), (1, 6, 0.1), (4, -2, 0.4)]).canonical());
    }

    #[test]
    fn orbit_search_recovers_witness() {
        let f = pspm(&[(1, 3, 0.2), (1, 5, 0.1), (2, -2, 0.4)]);
        let mut map = BTreeMap::new();
        map.insert(1, (2, Point::new1(4)));
        map.insert(2, (1, Point::new1(-6)));
        let g = f.translate_levels(&map).unwrap();
        let found = find_orbit(&f, &g).unwrap();
        for &(s, m) in f.atoms() {
            let (to, shift) = found[&s.level];
            assert_eq!(g.get(Site::new(to, s.x - shift)), m);
        }
        assert!(find_orbit(&f, &Pspm::unit(1)).is_none());
    }

    #[test]
    fn json_round_trip_and_errors() {
        let f = Pspm::new(
            2,
            vec![(Site::new(1, Point::new2(0, 1)), 0.25), (Site::new(2, Point::new2(-3, 4)), 0.5)],
        )
        .unwrap();
        let text = f.to_json().to_string();
        assert_eq!(text, r#"{"atoms":[[1,[0,1],0.25],[2,[-3,4],0.5]]}"#);
        assert_eq!(Pspm::from_json(&serde_json::from_str(&text).unwrap()).unwrap(), f);
        let bad: Value = serde_json::from_str(r#"{"atoms": [[1, [0], 0.7], [1, [1], 0.7]]}"#).unwrap();
        assert!(matches!(Pspm::from_json(&bad), Err(PolylabError::Mass(_))));
        let bad: Value = serde_json::from_str(r#"{"atoms": [[1, [0], 0.2], [1, [1, 2], 0.2]]}"#).unwrap();
        assert!(Pspm::from_json(&bad).is_err());
    }

    #[test]
    fn wasserstein_basics() {
        let a = pspm(&[(1, 0, 0.6), (1, 1, 0.2)]);
        let b = pspm(&[(1, 0, 0.9)]);
        let mu = EmpiricalMeasure::new(vec![a.clone(), b.clone()]).unwrap();
        assert_eq!(wasserstein(&mu, &mu, 2.0, DistanceMode::Exact).unwrap(), 0.0);
        let one = EmpiricalMeasure::new(vec![a.clone()]).unwrap();
        let other = EmpiricalMeasure::new(vec![b.clone()]).unwrap();
        let d = d_alpha_exact(&a, &b, 2.0, 8).unwrap().value;
        assert_eq!(wasserstein(&one, &other, 2.0, DistanceMode::Exact).unwrap(), d);
        assert!(wasserstein(&one, &mu, 2.0, DistanceMode::Exact).is_err());
        assert!(EmpiricalMeasure::new(vec![]).is_err());
    }
}
