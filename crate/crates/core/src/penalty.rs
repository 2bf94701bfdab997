//! Penalty family `rho`, its convex conjugate `rho*`, the link `s = (rho*)'` and
//! its derivative `s'`, together with the polynomial-growth exponents.
//!
//! For `rho(x) = |x|^p / p` with `p > 1` everything is closed form with the dual
//! exponent `Q = p / (p - 1)`:
//!
//! ```text
//! rho*(x) = |x|^Q / Q,   s(x) = sign(x) |x|^(Q-1),   s'(x) = (Q-1) |x|^(Q-2)
//! ```
//!
//! `p = 1` is kept as a sentinel: only the linear-programming path accepts it.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clip applied to `|x|` in `s'` when `Q < 2`, where `s'` blows up at the origin.
pub const LINK_PRIME_EPS: f64 = 1e-8;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// User-supplied conjugate, link and link derivative.
#[derive(Clone)]
pub struct CustomPenalty {
    pub name: String,
    pub conjugate: ScalarFn,
    pub link: ScalarFn,
    pub link_prime: ScalarFn,
}

impl fmt::Debug for CustomPenalty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomPenalty").field("name", &self.name).finish()
    }
}

#[derive(Clone, Debug)]
pub enum PenaltyKind {
    PNorm { p: f64 },
    Custom(CustomPenalty),
}

/// Growth exponents `(Q1, Q2, q1, q2)`: `Q1, Q2` bound `s` from above, `q1, q2`
/// from below.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthExponents {
    pub upper_1: f64,
    pub upper_2: f64,
    pub lower_1: f64,
    pub lower_2: f64,
}

impl GrowthExponents {
    pub fn uniform(q: f64) -> Self {
        Self { upper_1: q, upper_2: q, lower_1: q, lower_2: q }
    }

    /// `Q = Q1 v Q2`.
    pub fn upper_max(&self) -> f64 {
        self.upper_1.max(self.upper_2)
    }

    /// `Q' = Q1 ^ Q2`.
    pub fn upper_min(&self) -> f64 {
        self.upper_1.min(self.upper_2)
    }

    /// `q = q1 v q2`.
    pub fn lower_max(&self) -> f64 {
        self.lower_1.max(self.lower_2)
    }

    /// `q' = q1 ^ q2`.
    pub fn lower_min(&self) -> f64 {
        self.lower_1.min(self.lower_2)
    }

    fn all_finite(&self) -> bool {
        [self.upper_1, self.upper_2, self.lower_1, self.lower_2]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    pub exponents: GrowthExponents,
}

impl PenaltySpec {
    /// `rho(x) = |x|^p / p`. `p = 1` yields the l1 sentinel with infinite exponents.
    pub fn pnorm(p: f64) -> Result<Self> {
        if !p.is_finite() || p < 1.0 {
            return Err(Error::InvalidPenalty(format!("p must be in [1, inf), got {p}")));
        }
        let q = if p == 1.0 { f64::INFINITY } else { p / (p - 1.0) };
        Ok(Self { kind: PenaltyKind::PNorm { p }, exponents: GrowthExponents::uniform(q) })
    }

    pub fn l1() -> Self {
        Self::pnorm(1.0).expect("p = 1 is valid")
    }

    /// A custom penalty given through `rho*`, `s` and `s'`. Exponents are trusted
    /// here and can be checked with [`PenaltySpec::validate_growth`].
    pub fn custom(custom: CustomPenalty, exponents: GrowthExponents) -> Result<Self> {
        if !exponents.all_finite() {
            return Err(Error::InvalidExponents("custom penalties need finite exponents".into()));
        }
        if (custom.link)(0.0) != 0.0 {
            return Err(Error::InvalidPenalty(format!("{}: s(0) must be 0", custom.name)));
        }
        Ok(Self { kind: PenaltyKind::Custom(custom), exponents })
    }

    pub fn is_l1(&self) -> bool {
        matches!(self.kind, PenaltyKind::PNorm { p } if p == 1.0)
    }

    /// `p` for p-norm penalties.
    pub fn p(&self) -> Option<f64> {
        match self.kind {
            PenaltyKind::PNorm { p } => Some(p),
            PenaltyKind::Custom(_) => None,
        }
    }

    /// Dual exponent `Q = p / (p - 1)` for p-norm penalties with `p > 1`.
    pub fn dual_exponent(&self) -> Option<f64> {
        match self.kind {
            PenaltyKind::PNorm { p } if p > 1.0 => Some(p / (p - 1.0)),
            _ => None,
        }
    }

    /// Error unless the conjugate and link are defined.
    pub fn require_smooth(&self) -> Result<()> {
        if self.is_l1() {
            Err(Error::UndefinedForL1)
        } else {
            Ok(())
        }
    }

    /// `rho(x)` for p-norm penalties (including `p = 1`). Custom penalties only
    /// expose `rho` through [`PenaltySpec::penalty_at_link`].
    pub fn penalty(&self, x: f64) -> Option<f64> {
        match self.kind {
            PenaltyKind::PNorm { p: 1.0 } => Some(x.abs()),
            PenaltyKind::PNorm { p: 2.0 } => Some(0.5 * x * x),
            PenaltyKind::PNorm { p } => Some(x.abs().powf(p) / p),
            PenaltyKind::Custom(_) => None,
        }
    }

    /// `rho(s(u))` through the equality case of Young's inequality,
    /// `rho(s(u)) = u s(u) - rho*(u)`. Defined for every smooth penalty.
    pub fn penalty_at_link(&self, u: f64) -> Result<f64> {
        self.require_smooth()?;
        Ok(u * self.link_unchecked(u) - self.conjugate_unchecked(u))
    }

    pub fn conjugate(&self, x: f64) -> Result<f64> {
        self.require_smooth()?;
        if !x.is_finite() {
            return Err(Error::NonFinite("conjugate argument"));
        }
        Ok(self.conjugate_unchecked(x))
    }

    pub fn link(&self, x: f64) -> Result<f64> {
        self.require_smooth()?;
        if !x.is_finite() {
            return Err(Error::NonFinite("link argument"));
        }
        Ok(self.link_unchecked(x))
    }

    pub fn link_prime(&self, x: f64) -> Result<f64> {
        self.require_smooth()?;
        if !x.is_finite() {
            return Err(Error::NonFinite("link derivative argument"));
        }
        Ok(self.link_prime_unchecked(x))
    }

    // The unchecked variants assume `require_smooth` has passed; used in hot loops.

    #[inline]
    pub(crate) fn conjugate_unchecked(&self, x: f64) -> f64 {
        match &self.kind {
            PenaltyKind::PNorm { p } if *p == 2.0 => 0.5 * x * x,
            PenaltyKind::PNorm { p } => {
                let q = p / (p - 1.0);
                x.abs().powf(q) / q
            }
            PenaltyKind::Custom(c) => (c.conjugate)(x),
        }
    }

    #[inline]
    pub(crate) fn link_unchecked(&self, x: f64) -> f64 {
        match &self.kind {
            PenaltyKind::PNorm { p } if *p == 2.0 => x,
            PenaltyKind::PNorm { p } => {
                let q = p / (p - 1.0);
                x.signum() * x.abs().powf(q - 1.0)
            }
            PenaltyKind::Custom(c) => (c.link)(x),
        }
    }

    #[inline]
    pub(crate) fn link_prime_unchecked(&self, x: f64) -> f64 {
        match &self.kind {
            PenaltyKind::PNorm { p } if *p == 2.0 => 1.0,
            PenaltyKind::PNorm { p } => {
                let q = p / (p - 1.0);
                let ax = if q < 2.0 { x.abs().max(LINK_PRIME_EPS) } else { x.abs() };
                (q - 1.0) * ax.powf(q - 2.0)
            }
            PenaltyKind::Custom(c) => (c.link_prime)(x),
        }
    }

    /// Fit the growth constants on a grid of nonzero `(x1, x2)` pairs.
    ///
    /// With `r = |x1 / x2|`, the two inequalities are
    ///
    /// ```text
    /// c |s(x2)/x2| (r^(q1-2) ^ r^(q2-2)) <= s'(x1)  <= C |s(x2)/x2| (r^(Q1-2) v r^(Q2-2))
    /// c |s(x2)|    (r^(q1-1) ^ r^(q2-1)) <= |s(x1)| <= C |s(x2)|    (r^(Q1-1) v r^(Q2-1))
    /// ```
    ///
    /// `c` is the largest and `C` the smallest constant valid for both on the grid.
    /// A finite grid always admits some constants, so non-uniformity is detected by
    /// comparing the constants on the inner half (in `|log r|`) of the grid with
    /// those on the full grid: the log-ratio per unit of extra log-range estimates
    /// how far the declared exponents are off.
    pub fn validate_growth(&self, grid: &[(f64, f64)]) -> Result<GrowthReport> {
        self.require_smooth()?;
        if grid.is_empty() {
            return Err(Error::EmptyGrid);
        }
        if !self.exponents.all_finite() {
            return Err(Error::InvalidExponents("growth exponents must be finite".into()));
        }
        let e = self.exponents;
        let mut ratios = Vec::with_capacity(grid.len());
        for &(x1, x2) in grid {
            if x1 == 0.0 || x2 == 0.0 || !x1.is_finite() || !x2.is_finite() {
                return Err(Error::NonFinite("growth grid requires finite nonzero pairs"));
            }
            let r = (x1 / x2).abs();
            let s1 = self.link_unchecked(x1);
            let s2 = self.link_unchecked(x2);
            let sp1 = self.link_prime_unchecked(x1);
            let slope2 = (s2 / x2).abs();
            let lo_d = slope2 * r.powf(e.lower_1 - 2.0).min(r.powf(e.lower_2 - 2.0));
            let hi_d = slope2 * r.powf(e.upper_1 - 2.0).max(r.powf(e.upper_2 - 2.0));
            let lo_s = s2.abs() * r.powf(e.lower_1 - 1.0).min(r.powf(e.lower_2 - 1.0));
            let hi_s = s2.abs() * r.powf(e.upper_1 - 1.0).max(r.powf(e.upper_2 - 1.0));
            let lower = (sp1 / lo_d).min(s1.abs() / lo_s);
            let upper = (sp1 / hi_d).max(s1.abs() / hi_s);
            ratios.push((r.ln().abs(), lower, upper));
        }
        let fold = |pred: &dyn Fn(f64) -> bool| {
            ratios.iter().filter(|t| pred(t.0)).fold(
                (f64::INFINITY, 0.0f64, 0usize),
                |(c, big_c, k), &(_, lo, hi)| (c.min(lo), big_c.max(hi), k + 1),
            )
        };
        let max_log = ratios.iter().map(|t| t.0).fold(0.0, f64::max);
        let (c, big_c, _) = fold(&|_| true);
        let (c_half, big_c_half, k_half) = fold(&|l| l <= 0.5 * max_log);
        let drift = if k_half == 0 || max_log == 0.0 {
            0.0
        } else {
            let span = 0.5 * max_log;
            let up = (big_c / big_c_half).ln().max(0.0);
            let down = (c_half / c).ln().max(0.0);
            up.max(down) / span
        };
        let violation = !(c > 0.0 && c.is_finite() && big_c.is_finite()) || drift > GROWTH_DRIFT_TOL;
        Ok(GrowthReport { c_lower: c, c_upper: big_c, exponent_drift: drift, violation })
    }
}

/// Largest tolerated exponent mismatch in [`PenaltySpec::validate_growth`].
pub const GROWTH_DRIFT_TOL: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub c_lower: f64,
    pub c_upper: f64,
    pub exponent_drift: f64,
    pub violation: bool,
}

/// All ordered pairs of `k` log-spaced magnitudes in `[lo, hi]`, with alternating signs.
pub fn log_spaced_pairs(lo: f64, hi: f64, k: usize) -> Vec<(f64, f64)> {
    let pts: Vec<f64> = (0..k)
        .map(|i| {
            let t = if k == 1 { 0.0 } else { i as f64 / (k - 1) as f64 };
            let v = (lo.ln() + t * (hi.ln() - lo.ln())).exp();
            if i % 2 == 0 { v } else { -v }
        })
        .collect();
    let mut out = Vec::with_capacity(k * k);
    for &a in &pts {
        for &b in &pts {
            out.push((a, b));
        }
    }
    out
}
