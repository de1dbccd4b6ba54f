//! Missing-aware descriptive statistics.
//!
//! All dispersion uses the sample (n - 1) divisor. Pair-wise statistics drop
//! pairs where either member is missing; rolling windows containing a
//! missing cell are themselves missing.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum StatsError {
    #[error("input lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("input contains a non-finite value")]
    NonFinite,
    #[error("zero variance")]
    DegenerateVariance,
    #[error("all time values are equal")]
    DegenerateTime,
    #[error("window {window} larger than series length {len}")]
    WindowTooLarge { window: usize, len: usize },
    #[error("window must be at least 2, got {0}")]
    WindowTooSmall(usize),
    #[error("need at least 4 usable rolling windows, got {0}")]
    TooFewWindows(usize),
}

pub type Result<T> = std::result::Result<T, StatsError>;

/// Complete pairs of two equally long, possibly-missing columns.
pub fn complete_pairs(x: &[Option<f64>], y: &[Option<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    Ok(x.iter()
        .zip(y)
        .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
        .unzip())
}

fn check(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::TooFewPoints(x.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|x| *x == v[0])
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; `None` for fewer than two values.
pub fn sample_std(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    if is_constant(v) {
        return Some(0.0);
    }
    let m = mean(v);
    let ss: f64 = v.iter().map(|x| (x - m) * (x - m)).sum();
    Some((ss / (v.len() - 1) as f64).sqrt())
}

/// Sample Pearson correlation, clamped to [-1, 1].
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check(x, y)?;
    if is_constant(x) || is_constant(y) {
        return Err(StatsError::DegenerateVariance);
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::DegenerateVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// [`pearson`] after dropping incomplete pairs.
pub fn pearson_missing(x: &[Option<f64>], y: &[Option<f64>]) -> Result<f64> {
    let (x, y) = complete_pairs(x, y)?;
    if x.len() < 2 {
        return Err(StatsError::TooFewPoints(x.len()));
    }
    pearson(&x, &y)
}

/// Ordinary least squares in the units of the inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
}

/// OLS fit of `y` on `x`.
///
/// `y` is taken relative to its first value before centering, so adding an
/// exactly representable constant to `y` leaves the slope bit-identical.
pub fn ols(x: &[f64], y: &[f64]) -> Result<LineFit> {
    check(x, y)?;
    if is_constant(x) {
        return Err(StatsError::DegenerateTime);
    }
    let anchor = y[0];
    let d: Vec<f64> = y.iter().map(|v| v - anchor).collect();
    let (mx, md) = (mean(x), mean(&d));
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in x.iter().zip(&d) {
        let dx = a - mx;
        sxy += dx * (b - md);
        sxx += dx * dx;
    }
    let slope = sxy / sxx;
    Ok(LineFit { slope, intercept: anchor + md - slope * mx })
}

/// Trend line with the slope expressed per minute (`t` in seconds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub slope_per_min: f64,
    pub intercept: f64,
}

pub fn linreg(t_s: &[f64], y: &[f64]) -> Result<Trend> {
    let fit = ols(t_s, y)?;
    Ok(Trend { slope_per_min: fit.slope * 60.0, intercept: fit.intercept })
}

pub fn linreg_missing(t_s: &[f64], y: &[Option<f64>]) -> Result<Trend> {
    if t_s.len() != y.len() {
        return Err(StatsError::LengthMismatch(t_s.len(), y.len()));
    }
    let (t, y): (Vec<f64>, Vec<f64>) = t_s.iter().zip(y).filter_map(|(t, v)| Some((*t, (*v)?))).unzip();
    if t.len() < 2 {
        return Err(StatsError::TooFewPoints(t.len()));
    }
    linreg(&t, &y)
}

/// Sample standard deviation over each contiguous window of `window` cells.
pub fn rolling_std(y: &[Option<f64>], window: usize) -> Result<Vec<Option<f64>>> {
    if window < 2 {
        return Err(StatsError::WindowTooSmall(window));
    }
    if window > y.len() {
        return Err(StatsError::WindowTooLarge { window, len: y.len() });
    }
    if y.iter().flatten().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mut buf = Vec::with_capacity(window);
    Ok(y.windows(window)
        .map(|w| {
            buf.clear();
            for v in w {
                buf.push((*v)?);
            }
            sample_std(&buf)
        })
        .collect())
}

pub const STABILIZATION_EPS: f64 = 1e-9;

/// Late-to-early dispersion ratio.
///
/// Mean rolling std over the last quarter of windows divided by the mean over
/// the first quarter (quarter = floor(windows / 4)). Below 1 means the signal
/// settled. When both means are below [`STABILIZATION_EPS`] the index is 1.
/// An early mean below epsilon with a non-zero late mean divides by epsilon.
pub fn stabilization_index(y: &[Option<f64>], window: usize) -> Result<f64> {
    let rs = rolling_std(y, window)?;
    if rs.len() < 4 {
        return Err(StatsError::TooFewWindows(rs.len()));
    }
    let q = rs.len() / 4;
    let quarter_mean = |part: &[Option<f64>]| {
        let vals: Vec<f64> = part.iter().flatten().copied().collect();
        (!vals.is_empty()).then(|| mean(&vals))
    };
    let usable = rs.iter().flatten().count();
    let early = quarter_mean(&rs[..q]).ok_or(StatsError::TooFewWindows(usable))?;
    let late = quarter_mean(&rs[rs.len() - q..]).ok_or(StatsError::TooFewWindows(usable))?;
    if early < STABILIZATION_EPS && late < STABILIZATION_EPS {
        return Ok(1.0);
    }
    Ok(late / early.max(STABILIZATION_EPS))
}
