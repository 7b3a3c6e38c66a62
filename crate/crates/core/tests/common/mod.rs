//! Reference computations shared by the integration tests. Nothing here calls
//! the recursions under test.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::{Mutex, MutexGuard};

use polylab::{Point, SeededField, StepDistribution};

/// `x ↦ Z_n(x)` by depth-first enumeration of all paths, in the linear domain.
pub fn enumerate_z(walk: &StepDistribution, field: &SeededField, beta: f64, n: u64) -> BTreeMap<Point, f64> {
    fn go(
        walk: &StepDistribution,
        field: &SeededField,
        beta: f64,
        t: u64,
        n: u64,
        x: Point,
        w: f64,
        out: &mut BTreeMap<Point, f64>,
    ) {
        if t == n {
            *out.entry(x).or_insert(0.0) += w;
            return;
        }
        for &(z, q) in walk.steps() {
            let y = x + z;
            go(walk, field, beta, t + 1, n, y, w * q * (beta * field.evaluate(t + 1, y)).exp(), out);
        }
    }
    let mut out = BTreeMap::new();
    go(walk, field, beta, 0, n, Point::ORIGIN, 1.0, &mut out);
    out
}

pub fn enumerate_log_z(walk: &StepDistribution, field: &SeededField, beta: f64, n: u64) -> f64 {
    enumerate_z(walk, field, beta, n).values().sum::<f64>().ln()
}

/// Total-variation distance between two finitely supported pmfs.
pub fn tv(a: &[(Point, f64)], b: &BTreeMap<Point, f64>) -> f64 {
    let mut diff: BTreeMap<Point, f64> = b.clone();
    for &(x, m) in a {
        *diff.entry(x).or_insert(0.0) -= m;
    }
    0.5 * diff.values().map(|v| v.abs()).sum::<f64>()
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

static SERIAL: Mutex<()> = Mutex::new(());

/// Serializes tests that measure their own runtime.
pub fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Writes a verdict line past the test harness's output capture.
pub fn verdict(id: u32, name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let line = format!("[{tag}] criterion {id:>2} {name}: {detail}\n");
    let _ = std::io::stderr().write_all(line.as_bytes());
}
