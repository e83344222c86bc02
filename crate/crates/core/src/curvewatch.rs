//! Detects the end of the early-learning phase from a training-curve
//! series: fit a saturating curve `f(t) = a * (1 - exp(-b * t^c))` and
//! trigger once the relative drop of its derivative from the first epoch
//! exceeds a threshold (default 0.9).

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CurveError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("epochs must be strictly increasing and >= 1 (offending epoch {0})")]
    BadEpoch(u32),
    #[error("curve value {0} is not finite or outside [0, 1]")]
    BadValue(f64),
    #[error("threshold must be in (0, 1), got {0}")]
    BadThreshold(f64),
    #[error("fitted curve is non-increasing at its first epoch")]
    NonIncreasingFit,
    #[error("t = {t} precedes the first fitted epoch {t0}")]
    BeforeFirstEpoch { t: f64, t0: f64 },
}

/// The monitored (epoch, value) series; epochs strictly increasing, values
/// finite in [0, 1].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    points: Vec<(u32, f64)>,
}

impl CurveSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_points(points: &[(u32, f64)]) -> Result<Self, CurveError> {
        let mut s = Self::new();
        for &(e, v) in points {
            s.push(e, v)?;
        }
        Ok(s)
    }

    pub fn push(&mut self, epoch: u32, value: f64) -> Result<(), CurveError> {
        if epoch < 1 || self.points.last().is_some_and(|&(e, _)| epoch <= e) {
            return Err(CurveError::BadEpoch(epoch));
        }
        if !value.is_finite() || !(0.0..=1.0).contains(&value) {
            return Err(CurveError::BadValue(value));
        }
        self.points.push((epoch, value));
        Ok(())
    }

    pub fn points(&self) -> &[(u32, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn prefix(&self, n: usize) -> CurveSeries {
        CurveSeries {
            points: self.points[..n].to_vec(),
        }
    }
}

/// Parameters of the fitted model `f(t) = a * (1 - exp(-b * t^c))`.
///
/// `degenerate` marks a constant input series, for which the parameters are
/// nominal and the derivative carries no signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Sum of squared residuals at the optimum.
    pub residual: f64,
    /// First epoch of the fitted series; derivative changes are anchored here.
    pub t0: f64,
    pub degenerate: bool,
}

impl CurveFit {
    pub fn value(&self, t: f64) -> f64 {
        self.a * (1.0 - (-self.b * t.powf(self.c)).exp())
    }

    /// Analytic derivative `f'(t) = a*b*c * t^(c-1) * exp(-b * t^c)`.
    pub fn derivative(&self, t: f64) -> f64 {
        self.a * self.b * self.c * t.powf(self.c - 1.0) * (-self.b * t.powf(self.c)).exp()
    }
}

// Parameter bounds: a in (0, 1.5] (values live in [0, 1]), b and c positive
// with generous caps so exp/powf stay finite.
const A_MAX: f64 = 1.5;
const B_MAX: f64 = 1e6;
const C_MAX: f64 = 8.0;
const PENALTY: f64 = 1e12;

fn sse(points: &[(u32, f64)], p: &[f64; 3]) -> f64 {
    let [a, b, c] = *p;
    if !(a > 0.0 && a <= A_MAX && b > 0.0 && b <= B_MAX && c > 0.0 && c <= C_MAX) {
        return PENALTY;
    }
    let mut s = 0.0;
    for &(e, v) in points {
        let t = f64::from(e);
        let r = a * (1.0 - (-b * t.powf(c)).exp()) - v;
        s += r * r;
    }
    if s.is_finite() {
        s
    } else {
        PENALTY
    }
}

/// Nelder-Mead on 3 parameters. Deterministic: fixed coefficients, fixed
/// iteration budget, ties resolved by index order.
fn nelder_mead(points: &[(u32, f64)], start: [f64; 3], max_iter: usize) -> ([f64; 3], f64) {
    const ALPHA: f64 = 1.0; // reflection
    const GAMMA: f64 = 2.0; // expansion
    const RHO: f64 = 0.5; // contraction
    const SIGMA: f64 = 0.5; // shrink

    let mut simplex: Vec<[f64; 3]> = vec![start];
    for i in 0..3 {
        let mut v = start;
        let h = 0.10 * v[i].abs() + 1e-4;
        v[i] += h;
        simplex.push(v);
    }
    let mut f: Vec<f64> = simplex.iter().map(|p| sse(points, p)).collect();

    for _ in 0..max_iter {
        // Order ascending by value (stable; ties keep index order).
        let mut idx: Vec<usize> = (0..4).collect();
        idx.sort_by(|&i, &j| f[i].total_cmp(&f[j]));
        let ordered: Vec<[f64; 3]> = idx.iter().map(|&i| simplex[i]).collect();
        let fo: Vec<f64> = idx.iter().map(|&i| f[i]).collect();
        simplex = ordered;
        f = fo;

        let spread = f[3] - f[0];
        let diam = (0..3)
            .map(|d| {
                simplex
                    .iter()
                    .map(|p| p[d])
                    .fold(f64::NEG_INFINITY, f64::max)
                    - simplex.iter().map(|p| p[d]).fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max);
        if spread < 1e-16 && diam < 1e-12 {
            break;
        }

        let centroid = {
            let mut c = [0.0; 3];
            for p in simplex.iter().take(3) {
                for (cd, &pd) in c.iter_mut().zip(p) {
                    *cd += pd / 3.0;
                }
            }
            c
        };
        let at = |t: f64| -> [f64; 3] {
            let mut p = [0.0; 3];
            for d in 0..3 {
                p[d] = centroid[d] + t * (simplex[3][d] - centroid[d]);
            }
            p
        };

        let reflected = at(-ALPHA);
        let fr = sse(points, &reflected);
        if fr < f[0] {
            let expanded = at(-ALPHA * GAMMA);
            let fe = sse(points, &expanded);
            if fe < fr {
                simplex[3] = expanded;
                f[3] = fe;
            } else {
                simplex[3] = reflected;
                f[3] = fr;
            }
        } else if fr < f[2] {
            simplex[3] = reflected;
            f[3] = fr;
        } else {
            let contracted = if fr < f[3] { at(-RHO) } else { at(RHO) };
            let fc = sse(points, &contracted);
            if fc < f[3].min(fr) {
                simplex[3] = contracted;
                f[3] = fc;
            } else {
                let best = simplex[0];
                for i in 1..4 {
                    for (v, &b) in simplex[i].iter_mut().zip(&best) {
                        *v = b + SIGMA * (*v - b);
                    }
                    f[i] = sse(points, &simplex[i]);
                }
            }
        }
    }

    let mut best = 0;
    for i in 1..4 {
        if f[i] < f[best] {
            best = i;
        }
    }
    (simplex[best], f[best])
}

/// Least-squares fit of `a * (1 - exp(-b * t^c))` by multi-start
/// Nelder-Mead: one start per (b, c) on a coarse grid, a anchored at the
/// series maximum. Deterministic; lowest-residual start wins.
pub fn fit_curve(series: &CurveSeries) -> Result<CurveFit, CurveError> {
    let points = series.points();
    if points.len() < 3 {
        return Err(CurveError::TooFewPoints {
            needed: 3,
            got: points.len(),
        });
    }
    let t0 = f64::from(points[0].0);
    let vmax = points.iter().map(|&(_, v)| v).fold(f64::NEG_INFINITY, f64::max);
    let vmin = points.iter().map(|&(_, v)| v).fold(f64::INFINITY, f64::min);
    if vmax == vmin {
        return Ok(CurveFit {
            a: vmax,
            b: 1e3,
            c: 1.0,
            residual: 0.0,
            t0,
            degenerate: true,
        });
    }

    let a0 = vmax.clamp(1e-6, A_MAX);
    let mut best: Option<([f64; 3], f64)> = None;
    for &b0 in &[0.1, 0.5, 1.0, 2.0] {
        for &c0 in &[0.5, 1.0, 1.5] {
            let (p, r) = nelder_mead(points, [a0, b0, c0], 2000);
            if best.is_none_or(|(_, br)| r < br) {
                best = Some((p, r));
            }
        }
    }
    // Polish: restart from the winner to escape a collapsed simplex.
    let (mut p, mut r) = best.expect("at least one start");
    for _ in 0..2 {
        let (p2, r2) = nelder_mead(points, p, 2000);
        if r2 < r {
            p = p2;
            r = r2;
        }
    }
    Ok(CurveFit {
        a: p[0],
        b: p[1],
        c: p[2],
        residual: r,
        t0,
        degenerate: false,
    })
}

/// Relative derivative change `r(t) = (f'(t0) - f'(t)) / f'(t0)` of a fit,
/// anchored at the first fitted epoch. 0 at `t0`; approaches 1 as the
/// curve saturates.
pub fn relative_derivative_change(fit: &CurveFit, t: f64) -> Result<f64, CurveError> {
    if t < fit.t0 {
        return Err(CurveError::BeforeFirstEpoch { t, t0: fit.t0 });
    }
    let d0 = fit.derivative(fit.t0);
    if fit.degenerate || d0 <= 0.0 || d0.is_nan() {
        return Err(CurveError::NonIncreasingFit);
    }
    Ok((d0 - fit.derivative(t)) / d0)
}

/// Online transition detection: refit on every prefix and return the first
/// epoch whose relative derivative change exceeds `threshold`.
///
/// Degenerate or flat prefixes carry no signal and are skipped; real fit
/// errors propagate.
pub fn detect_transition(
    series: &CurveSeries,
    threshold: f64,
) -> Result<Option<u32>, CurveError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(CurveError::BadThreshold(threshold));
    }
    for n in 3..=series.len() {
        let prefix = series.prefix(n);
        let fit = fit_curve(&prefix)?;
        if fit.degenerate {
            continue;
        }
        let epoch = prefix.points()[n - 1].0;
        match relative_derivative_change(&fit, f64::from(epoch)) {
            Ok(r) if r > threshold => return Ok(Some(epoch)),
            Ok(_) => {}
            // A saturated-flat fit has no usable derivative signal here.
            Err(CurveError::NonIncreasingFit) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(None)
}
