//! Convex piecewise-linear functions `f(p) = max_n (α_n p + β_n)`.

use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub slope: f64,
    pub intercept: f64,
}

impl Segment {
    #[inline]
    pub fn at(&self, p: f64) -> f64 {
        self.slope * p + self.intercept
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CurveError {
    #[error("curve has no segments")]
    Empty,
    #[error("curve domain [{lo}, {hi}] is empty or not finite")]
    BadDomain { lo: f64, hi: f64 },
    #[error("non-finite segment coefficient")]
    NonFinite,
    #[error("need at least two points")]
    TooFewPoints,
    #[error("abscissae must be strictly increasing (point {index})")]
    NotIncreasing { index: usize },
    #[error("slope decreases after point {index}: points are not convex")]
    NotConvex { index: usize },
}

/// Segments are kept in the order they were listed. Evaluation always uses
/// the upper envelope; [`PiecewiseLinearCurve::listed_in_convex_order`] tells
/// whether the listing agrees with it.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinearCurve {
    segments: Vec<Segment>,
    lo: f64,
    hi: f64,
}

const SLOPE_EPS: f64 = 1e-9;

impl PiecewiseLinearCurve {
    pub fn new(segments: Vec<Segment>, lo: f64, hi: f64) -> Result<Self, CurveError> {
        if segments.is_empty() {
            return Err(CurveError::Empty);
        }
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(CurveError::BadDomain { lo, hi });
        }
        if segments.iter().any(|s| !s.slope.is_finite() || !s.intercept.is_finite()) {
            return Err(CurveError::NonFinite);
        }
        Ok(PiecewiseLinearCurve { segments, lo, hi })
    }

    pub fn linear(slope: f64, intercept: f64, lo: f64, hi: f64) -> Result<Self, CurveError> {
        Self::new(alloc::vec![Segment { slope, intercept }], lo, hi)
    }

    pub fn zero(lo: f64, hi: f64) -> Result<Self, CurveError> {
        Self::linear(0.0, 0.0, lo, hi)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn value(&self, p: f64) -> f64 {
        self.segments.iter().map(|s| s.at(p)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Left and right derivative at `p`.
    pub fn subgradient(&self, p: f64) -> (f64, f64) {
        let v = self.value(p);
        let tol = 1e-9 * v.abs().max(1.0);
        let mut left = f64::INFINITY;
        let mut right = f64::NEG_INFINITY;
        for s in &self.segments {
            if (s.at(p) - v).abs() <= tol {
                left = left.min(s.slope);
                right = right.max(s.slope);
            }
        }
        (left, right)
    }

    /// True when listed slopes never decrease, i.e. the listing reads as a
    /// convex function from left to right.
    pub fn listed_in_convex_order(&self) -> bool {
        self.segments
            .windows(2)
            .all(|w| w[1].slope >= w[0].slope - SLOPE_EPS * w[0].slope.abs().max(1.0))
    }

    pub fn is_zero(&self) -> bool {
        self.segments.iter().all(|s| s.slope == 0.0 && s.intercept == 0.0)
    }

    /// Upper envelope restricted to the domain: sorted by slope, duplicate
    /// slopes merged, segments never attaining the max on `[lo, hi]` removed.
    pub fn normalized(&self) -> Self {
        let mut segs = self.segments.clone();
        segs.sort_by(|a, b| a.slope.total_cmp(&b.slope).then(a.intercept.total_cmp(&b.intercept)));
        let mut merged: Vec<Segment> = Vec::with_capacity(segs.len());
        for s in segs {
            if let Some(last) = merged.last_mut() {
                if (s.slope - last.slope).abs() <= 1e-12 * s.slope.abs().max(1.0) {
                    last.intercept = last.intercept.max(s.intercept);
                    continue;
                }
            }
            merged.push(s);
        }
        // hull over the real line
        let mut hull: Vec<Segment> = Vec::with_capacity(merged.len());
        for s in merged {
            while hull.len() >= 2 {
                let a = hull[hull.len() - 2];
                let b = hull[hull.len() - 1];
                if crossing(&a, &s) <= crossing(&a, &b) {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(s);
        }
        // clip to the domain
        let k = hull.len();
        let mut kept = Vec::with_capacity(k);
        for i in 0..k {
            let left = if i == 0 { f64::NEG_INFINITY } else { crossing(&hull[i - 1], &hull[i]) };
            let right = if i + 1 == k { f64::INFINITY } else { crossing(&hull[i], &hull[i + 1]) };
            let active = if self.lo == self.hi {
                left <= self.lo && self.lo <= right
            } else {
                left < self.hi && right > self.lo
            };
            if active {
                kept.push(hull[i]);
            }
        }
        if kept.is_empty() {
            kept.push(hull[0]);
        }
        if self.lo == self.hi {
            kept.truncate(1);
        }
        PiecewiseLinearCurve { segments: kept, lo: self.lo, hi: self.hi }
    }

    /// Interior kinks of the normalized curve, increasing.
    pub fn breakpoints(&self) -> Vec<f64> {
        let n = self.normalized();
        n.segments
            .windows(2)
            .map(|w| crossing(&w[0], &w[1]))
            .filter(|&x| x > self.lo && x < self.hi)
            .collect()
    }

    /// Minimum over the domain.
    pub fn min_value(&self) -> f64 {
        let mut best = self.value(self.lo).min(self.value(self.hi));
        for x in self.breakpoints() {
            best = best.min(self.value(x));
        }
        best
    }

    /// Pointwise sum on the intersection of domains.
    pub fn plus(&self, other: &Self) -> Result<Self, CurveError> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        if lo > hi {
            return Err(CurveError::BadDomain { lo, hi });
        }
        if lo == hi {
            let slope = self.subgradient(lo).1 + other.subgradient(lo).1;
            let v = self.value(lo) + other.value(lo);
            return Self::linear(slope, v - slope * lo, lo, hi);
        }
        let mut xs: Vec<f64> = alloc::vec![lo, hi];
        xs.extend(self.breakpoints().into_iter().filter(|&x| x > lo && x < hi));
        xs.extend(other.breakpoints().into_iter().filter(|&x| x > lo && x < hi));
        xs.sort_by(f64::total_cmp);
        xs.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
        let pts: Vec<(f64, f64)> = xs.iter().map(|&x| (x, self.value(x) + other.value(x))).collect();
        curve_from_points(&pts)
    }

    /// `k·f` for `k ≥ 0`.
    pub fn scaled(&self, k: f64) -> Self {
        assert!(k >= 0.0, "scaling a convex curve by a negative factor");
        let segments = self
            .segments
            .iter()
            .map(|s| Segment { slope: k * s.slope, intercept: k * s.intercept })
            .collect();
        PiecewiseLinearCurve { segments, lo: self.lo, hi: self.hi }
    }

    /// The same function in rescaled power units: `g(p') = f(p'/s)`.
    pub fn rescaled_power(&self, s: f64) -> Self {
        let segments = self
            .segments
            .iter()
            .map(|seg| Segment { slope: seg.slope / s, intercept: seg.intercept })
            .collect();
        PiecewiseLinearCurve { segments, lo: self.lo * s, hi: self.hi * s }
    }
}

/// Abscissa where two non-parallel lines meet.
fn crossing(a: &Segment, b: &Segment) -> f64 {
    (a.intercept - b.intercept) / (b.slope - a.slope)
}

/// Interpolating curve through points with strictly increasing abscissae.
/// Collinear neighbours are merged; a slope decrease beyond `1e-9` (relative)
/// is rejected.
pub fn curve_from_points(points: &[(f64, f64)]) -> Result<PiecewiseLinearCurve, CurveError> {
    if points.len() < 2 {
        return Err(CurveError::TooFewPoints);
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(CurveError::NonFinite);
    }
    let mut slopes = Vec::with_capacity(points.len() - 1);
    for (i, w) in points.windows(2).enumerate() {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        if x1 <= x0 {
            return Err(CurveError::NotIncreasing { index: i + 1 });
        }
        slopes.push((y1 - y0) / (x1 - x0));
    }
    let tol = |a: f64, b: f64| SLOPE_EPS * a.abs().max(b.abs()).max(1.0);
    for (i, w) in slopes.windows(2).enumerate() {
        if w[1] < w[0] - tol(w[0], w[1]) {
            return Err(CurveError::NotConvex { index: i + 1 });
        }
    }
    // merge runs of (nearly) equal slopes into one piece through the run's ends
    let mut segs = Vec::new();
    let mut start = 0;
    for i in 1..=slopes.len() {
        if i == slopes.len() || slopes[i] > slopes[start] + tol(slopes[start], slopes[i]) {
            let (xa, ya) = points[start];
            let (xb, yb) = points[i];
            let slope = (yb - ya) / (xb - xa);
            segs.push(Segment { slope, intercept: ya - slope * xa });
            start = i;
        }
    }
    PiecewiseLinearCurve::new(segs, points[0].0, points[points.len() - 1].0)
}
