//! Disorder laws and the seeded space-time environment.

use serde::{Deserialize, Serialize};

use crate::error::{PolylabError, Result};
use crate::lattice::Point;
use crate::rng::{hash_in_row, hash_site, row_prefix, unit_open};

/// Law of a single disorder variable.
///
/// Serialized as `{"kind": "exponential", "rate": 1.0}` and friends.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvironmentLaw {
    Gaussian { mean: f64, sd: f64 },
    Exponential { rate: f64 },
    /// `hi` with probability `p`, `lo` otherwise.
    Bernoulli { p: f64, lo: f64, hi: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl EnvironmentLaw {
    pub fn standard_gaussian() -> Self {
        EnvironmentLaw::Gaussian { mean: 0.0, sd: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: f64| v.is_finite();
        let ok = match *self {
            EnvironmentLaw::Gaussian { mean, sd } => finite(mean) && finite(sd) && sd > 0.0,
            EnvironmentLaw::Exponential { rate } => finite(rate) && rate > 0.0,
            EnvironmentLaw::Bernoulli { p, lo, hi } => {
                finite(lo) && finite(hi) && p > 0.0 && p < 1.0 && lo < hi
            }
            EnvironmentLaw::Uniform { lo, hi } => finite(lo) && finite(hi) && lo < hi,
        };
        if ok {
            Ok(())
        } else {
            Err(PolylabError::InvalidParameter(format!(
                "degenerate or malformed environment law {self:?}"
            )))
        }
    }

    /// Log moment generating function `log E exp(t η)`; `+inf` where the moment diverges.
    pub fn lambda(&self, t: f64) -> f64 {
        if t == 0.0 {
            return 0.0;
        }
        match *self {
            EnvironmentLaw::Gaussian { mean, sd } => mean * t + 0.5 * sd * sd * t * t,
            EnvironmentLaw::Exponential { rate } => {
                if t >= rate {
                    f64::INFINITY
                } else {
                    -(-t / rate).ln_1p()
                }
            }
            EnvironmentLaw::Bernoulli { p, lo, hi } => {
                log_sum_exp2(p.ln() + t * hi, (1.0 - p).ln() + t * lo)
            }
            EnvironmentLaw::Uniform { lo, hi } => t * lo + log_expm1_over(t * (hi - lo)),
        }
    }

    /// Derivative of [`lambda`](Self::lambda); only defined below `beta_max`.
    pub fn lambda_prime(&self, t: f64) -> Result<f64> {
        let bmax = self.beta_max();
        if !(t < bmax) || !(t > -bmax) || t.is_nan() {
            return Err(PolylabError::Domain(format!(
                "lambda' requested at t = {t}, outside (-{bmax}, {bmax})"
            )));
        }
        Ok(match *self {
            EnvironmentLaw::Gaussian { mean, sd } => mean + sd * sd * t,
            EnvironmentLaw::Exponential { rate } => 1.0 / (rate - t),
            EnvironmentLaw::Bernoulli { p, lo, hi } => {
                let a = p.ln() + t * hi;
                let b = (1.0 - p).ln() + t * lo;
                let m = a.max(b);
                let (wa, wb) = ((a - m).exp(), (b - m).exp());
                (wa * hi + wb * lo) / (wa + wb)
            }
            EnvironmentLaw::Uniform { lo, hi } => {
                let w = hi - lo;
                let s = t * w;
                let core = if s.abs() < 1e-3 {
                    0.5 + s / 12.0 - s * s * s / 720.0
                } else {
                    1.0 / (-(-s).exp_m1()) - 1.0 / s
                };
                lo + w * core
            }
        })
    }

    /// `sup { t >= 0 : lambda(t) and lambda(-t) finite }`.
    pub fn beta_max(&self) -> f64 {
        match *self {
            EnvironmentLaw::Exponential { rate } => rate,
            _ => f64::INFINITY,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            EnvironmentLaw::Gaussian { mean, .. } => mean,
            EnvironmentLaw::Exponential { rate } => 1.0 / rate,
            EnvironmentLaw::Bernoulli { p, lo, hi } => p * hi + (1.0 - p) * lo,
            EnvironmentLaw::Uniform { lo, hi } => 0.5 * (lo + hi),
        }
    }

    /// Inverse CDF at `u` in (0, 1).
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            EnvironmentLaw::Gaussian { mean, sd } => mean + sd * standard_normal_quantile(u),
            EnvironmentLaw::Exponential { rate } => -(-u).ln_1p() / rate,
            EnvironmentLaw::Bernoulli { p, lo, hi } => {
                if u < 1.0 - p {
                    lo
                } else {
                    hi
                }
            }
            EnvironmentLaw::Uniform { lo, hi } => lo + u * (hi - lo),
        }
    }

    /// Checks that `beta` lies in `(0, beta_max)`.
    pub fn check_beta(&self, beta: f64) -> Result<()> {
        let bmax = self.beta_max();
        if beta > 0.0 && beta < bmax {
            Ok(())
        } else {
            Err(PolylabError::Domain(format!(
                "beta = {beta} outside (0, {bmax})"
            )))
        }
    }
}

fn log_sum_exp2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `log((e^s - 1) / s)`, stable for all finite `s`.
fn log_expm1_over(s: f64) -> f64 {
    if s == 0.0 {
        0.0
    } else if s > 30.0 {
        s + (-(-s).exp()).ln_1p() - s.ln()
    } else {
        (s.exp_m1() / s).ln()
    }
}

/// Standard normal quantile, Wichura's AS 241 (PPND16); relative error about 1e-16.
#[allow(clippy::excessive_precision)]
pub fn standard_normal_quantile(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_608,
        1.331_416_678_917_843_774_5e2,
        1.971_590_950_306_551_442_7e3,
        1.373_169_376_550_946_112_5e4,
        4.592_195_393_154_987_145_7e4,
        6.726_577_092_700_870_085_3e4,
        3.343_057_558_358_812_810_5e4,
        2.509_080_928_730_122_672_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091_125_2e1,
        6.871_870_074_920_579_083e2,
        5.394_196_021_424_751_107_7e3,
        2.121_379_430_158_659_586_7e4,
        3.930_789_580_009_271_061e4,
        2.872_908_573_572_194_267_4e4,
        5.226_495_278_852_854_561e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_34,
        4.630_337_846_156_545_295_9,
        5.769_497_221_460_691_405_5,
        3.647_848_324_763_204_605_04,
        1.270_458_252_452_368_382_58,
        2.417_807_251_774_506_117_7e-1,
        2.272_384_498_926_918_458_33e-2,
        7.745_450_142_783_414_076_4e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_821_87,
        1.676_384_830_183_803_849_4,
        6.897_673_349_851_000_045_5e-1,
        1.481_039_764_274_800_745_9e-1,
        1.519_866_656_361_645_719_66e-2,
        5.475_938_084_995_344_946e-4,
        1.050_750_071_644_416_843_24e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_2,
        5.463_784_911_164_114_369_9,
        1.784_826_539_917_291_335_8,
        2.965_605_718_285_048_912_3e-1,
        2.653_218_952_657_612_309_3e-2,
        1.242_660_947_388_078_438_6e-3,
        2.711_555_568_743_487_578_15e-5,
        2.010_334_399_292_288_132_65e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_879_376_9e-1,
        1.369_298_809_227_358_053_1e-1,
        1.487_536_129_085_061_485_25e-2,
        7.868_691_311_456_132_591e-4,
        1.846_318_317_510_054_681_8e-5,
        1.421_511_758_316_445_888_7e-7,
        2.044_263_103_389_939_785_64e-15,
    ];
    fn poly(c: &[f64; 8], x: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
    }

    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        r -= 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Deterministic realization of an i.i.d. space-time environment.
///
/// `evaluate(i, x)` returns `η(i + k, x + y)` where `(k, y)` are the offsets of
/// this view. Values are computed on demand from a hash of the shifted site,
/// so nothing is stored and shifted views share all randomness with the base.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeededField {
    pub seed: u64,
    pub law: EnvironmentLaw,
    pub time_offset: u64,
    pub space_offset: Point,
}

impl SeededField {
    pub fn new(seed: u64, law: EnvironmentLaw) -> Self {
        SeededField {
            seed,
            law,
            time_offset: 0,
            space_offset: Point::ORIGIN,
        }
    }

    #[inline]
    pub fn evaluate(&self, i: u64, x: Point) -> f64 {
        self.evaluate_level(i, 1, x)
    }

    /// Environment on `N x Z^d` at time `i`: level 1 coincides with [`evaluate`](Self::evaluate),
    /// other levels are independent copies.
    #[inline]
    pub fn evaluate_level(&self, i: u64, level: u32, x: Point) -> f64 {
        let bits = hash_site(
            self.seed,
            i + self.time_offset,
            level,
            x + self.space_offset,
        );
        self.law.quantile(unit_open(bits))
    }

    /// Time slice `i` at `level`, for evaluating many sites of one row.
    pub fn row(&self, i: u64, level: u32) -> RowView {
        RowView {
            prefix: row_prefix(self.seed, i + self.time_offset, level),
            space_offset: self.space_offset,
            law: self.law,
        }
    }

    /// The shifted environment `θ_{k,y} η`.
    pub fn shift_view(&self, k: u64, y: Point) -> SeededField {
        SeededField {
            time_offset: self.time_offset + k,
            space_offset: self.space_offset + y,
            ..*self
        }
    }
}

/// One time slice of a [`SeededField`]; `at(x)` equals `evaluate_level(i, level, x)`.
#[derive(Clone, Copy, Debug)]
pub struct RowView {
    prefix: u64,
    space_offset: Point,
    law: EnvironmentLaw,
}

impl RowView {
    #[inline]
    pub fn at(&self, x: Point) -> f64 {
        self.law.quantile(unit_open(hash_in_row(self.prefix, x + self.space_offset)))
    }
}
