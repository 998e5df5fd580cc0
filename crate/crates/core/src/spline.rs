//! Periodic cubic B-spline bases on the unit interval.
//!
//! A basis is built from a strictly increasing set of interior knots in
//! `(0, 1)` plus the boundary pair `{0, 1}`. Exterior knots are obtained by
//! periodic extension: the last three interior knots shifted back by one
//! period on the left, the first three shifted forward on the right.
//! Periodicity of curves is then enforced by identifying the coefficients of
//! the last three raw B-splines with those of the first three, leaving
//! `n_interior + 1` free coefficients.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Spline order (degree + 1). Cubic throughout; the evaluation recurrence is
/// written for general order so other choices remain possible.
pub const SPLINE_ORDER: usize = 4;

/// Identified coefficient pairs at the periodic seam.
pub const IDENTIFIED_PAIRS: usize = SPLINE_ORDER - 1;

/// Tolerance for accepting evaluation points marginally outside `[0, 1]`.
pub const DOMAIN_TOL: f64 = 1e-12;

/// Conditioning threshold beyond which a collocation matrix is treated as
/// rank deficient.
pub const CONDITION_LIMIT: f64 = 1e10;

#[derive(Debug, Error)]
pub enum SplineError {
    #[error("periodic extension needs at least {needed} interior knots, got {got}")]
    TooFewKnots { needed: usize, got: usize },
    #[error("interior knots must be strictly increasing (violation at index {index})")]
    NonMonotone { index: usize },
    #[error("interior knot {value} outside the open unit interval")]
    OutOfDomain { value: f64 },
    #[error("evaluation point {t} outside [0, 1]")]
    DomainViolation { t: f64 },
    #[error("collocation matrix is rank deficient (condition estimate {condition:.3e})")]
    RankDeficient { condition: f64 },
    #[error("least squares needs at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("coefficient count {got} does not match basis dimension {expected}")]
    CoefficientMismatch { expected: usize, got: usize },
    #[error("sample abscissa {t} outside [0, 1]")]
    SampleOutOfDomain { t: f64 },
    #[error("malformed spline record: {0}")]
    BadRecord(String),
}

/// A periodic knot set: interior knots, boundary knots `{0, 1}` and six
/// exterior knots derived by shifting interior knots one period.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    interior: Vec<f64>,
    full: Vec<f64>,
}

impl KnotVector {
    /// Build the full periodic knot vector from interior knots.
    pub fn periodic(interior: &[f64]) -> Result<Self, SplineError> {
        let m = interior.len();
        if m < IDENTIFIED_PAIRS {
            return Err(SplineError::TooFewKnots {
                needed: IDENTIFIED_PAIRS,
                got: m,
            });
        }
        for (i, &k) in interior.iter().enumerate() {
            if !k.is_finite() || k <= 0.0 || k >= 1.0 {
                return Err(SplineError::OutOfDomain { value: k });
            }
            if i > 0 && k <= interior[i - 1] {
                return Err(SplineError::NonMonotone { index: i });
            }
        }
        let mut full = Vec::with_capacity(m + 8);
        // Last three interior knots shifted back one period.
        for &k in &interior[m - 3..] {
            full.push(k - 1.0);
        }
        full.push(0.0);
        full.extend_from_slice(interior);
        full.push(1.0);
        // First three interior knots shifted forward one period.
        for &k in &interior[..3] {
            full.push(k + 1.0);
        }
        Ok(Self {
            interior: interior.to_vec(),
            full,
        })
    }

    pub fn interior(&self) -> &[f64] {
        &self.interior
    }

    /// All knots in ascending order, exterior ones included.
    pub fn full(&self) -> &[f64] {
        &self.full
    }

    pub fn exterior_left(&self) -> &[f64] {
        &self.full[..3]
    }

    pub fn exterior_right(&self) -> &[f64] {
        &self.full[self.full.len() - 3..]
    }

    pub fn n_interior(&self) -> usize {
        self.interior.len()
    }
}

/// Build the full periodic knot vector from interior knots.
pub fn build_periodic_knots(interior: &[f64]) -> Result<KnotVector, SplineError> {
    KnotVector::periodic(interior)
}

fn next_basis_id() -> u64 {
    use std::sync::atomic::{AtomicU64, Ordering};
    static NEXT: AtomicU64 = AtomicU64::new(1);
    NEXT.fetch_add(1, Ordering::Relaxed)
}

/// A periodic B-spline basis with its coefficient identification map.
///
/// Cloning preserves the identity tag: a clone denotes the same basis.
#[derive(Debug, Clone)]
pub struct PeriodicBasis {
    knots: KnotVector,
    order: usize,
    id: u64,
}

impl PeriodicBasis {
    pub fn cubic(knots: KnotVector) -> Self {
        Self {
            knots,
            order: SPLINE_ORDER,
            id: next_basis_id(),
        }
    }

    pub fn knots(&self) -> &KnotVector {
        &self.knots
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Identity tag used to assert basis consistency across evaluations.
    pub fn id(&self) -> u64 {
        self.id
    }

    /// Number of raw B-splines over the full knot vector.
    pub fn raw_count(&self) -> usize {
        self.knots.full().len() - self.order
    }

    /// Number of free coefficients after seam identification.
    pub fn n_free(&self) -> usize {
        self.raw_count() - IDENTIFIED_PAIRS
    }

    /// Pairs `(raw index, free index)` tying the last three raw coefficients
    /// to the first three.
    pub fn identified_pairs(&self) -> [(usize, usize); IDENTIFIED_PAIRS] {
        let n = self.n_free();
        [(n, 0), (n + 1, 1), (n + 2, 2)]
    }

    fn domain_span_range(&self) -> (usize, usize) {
        // Valid spans lie between the boundary knots 0 and 1.
        (self.order - 1, self.knots.full().len() - self.order - 1)
    }

    fn clamp_domain(&self, t: f64) -> Result<f64, SplineError> {
        if t < -DOMAIN_TOL || t > 1.0 + DOMAIN_TOL {
            return Err(SplineError::DomainViolation { t });
        }
        Ok(t.clamp(0.0, 1.0))
    }

    fn find_span(&self, t: f64) -> usize {
        let knots = self.knots.full();
        let (lo, hi) = self.domain_span_range();
        if t >= knots[hi + 1] {
            return hi;
        }
        let mut a = lo;
        let mut b = hi;
        while a < b {
            let mid = (a + b + 1) / 2;
            if knots[mid] <= t {
                a = mid;
            } else {
                b = mid - 1;
            }
        }
        a
    }

    /// The `order` non-vanishing raw B-spline values at `t`, returned as
    /// `(first raw index, values)`. Triangular scheme over the knot span;
    /// the result is non-negative and sums to one by construction.
    pub fn eval_active(&self, t: f64) -> Result<(usize, Vec<f64>), SplineError> {
        let t = self.clamp_domain(t)?;
        let knots = self.knots.full();
        let span = self.find_span(t);
        let k = self.order;
        let mut values = vec![0.0; k];
        let mut left = vec![0.0; k];
        let mut right = vec![0.0; k];
        values[0] = 1.0;
        for j in 1..k {
            left[j] = t - knots[span + 1 - j];
            right[j] = knots[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = values[r] / (right[r + 1] + left[j - r]);
                values[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            values[j] = saved;
        }
        Ok((span + 1 - k, values))
    }

    /// Raw basis vector at `t`: length `raw_count`, at most `order` nonzero
    /// entries.
    pub fn eval_raw(&self, t: f64) -> Result<Vec<f64>, SplineError> {
        let (first, values) = self.eval_active(t)?;
        let mut out = vec![0.0; self.raw_count()];
        for (offset, v) in values.iter().enumerate() {
            out[first + offset] = *v;
        }
        Ok(out)
    }

    fn free_index(&self, raw: usize) -> usize {
        let n = self.n_free();
        if raw < n {
            raw
        } else {
            raw - n
        }
    }

    /// Collocation matrix over the free coefficient space: identified raw
    /// columns are folded onto their free partners.
    pub fn collocation(&self, ts: &[f64]) -> Result<DMatrix<f64>, SplineError> {
        let n = self.n_free();
        let mut matrix = DMatrix::zeros(ts.len(), n);
        for (row, &t) in ts.iter().enumerate() {
            let (first, values) = self.eval_active(t)?;
            for (offset, v) in values.iter().enumerate() {
                matrix[(row, self.free_index(first + offset))] += *v;
            }
        }
        Ok(matrix)
    }

    /// Expand free coefficients to the raw coefficient vector via the
    /// identification map.
    pub fn expand_coefficients(&self, free: &[f64]) -> Result<Vec<f64>, SplineError> {
        let n = self.n_free();
        if free.len() != n {
            return Err(SplineError::CoefficientMismatch {
                expected: n,
                got: free.len(),
            });
        }
        let mut raw = Vec::with_capacity(self.raw_count());
        raw.extend_from_slice(free);
        for (raw_idx, free_idx) in self.identified_pairs() {
            debug_assert_eq!(raw.len(), raw_idx);
            raw.push(free[free_idx]);
        }
        Ok(raw)
    }
}

/// Evaluate all raw B-splines of a basis at `t`.
pub fn eval_basis(basis: &PeriodicBasis, t: f64) -> Result<Vec<f64>, SplineError> {
    basis.eval_raw(t)
}

/// A periodic spline curve: free coefficients over a periodic basis.
#[derive(Debug, Clone)]
pub struct SplineCurve {
    basis: PeriodicBasis,
    coefficients: DVector<f64>,
}

impl SplineCurve {
    pub fn new(basis: PeriodicBasis, coefficients: DVector<f64>) -> Result<Self, SplineError> {
        if coefficients.len() != basis.n_free() {
            return Err(SplineError::CoefficientMismatch {
                expected: basis.n_free(),
                got: coefficients.len(),
            });
        }
        Ok(Self {
            basis,
            coefficients,
        })
    }

    pub fn basis(&self) -> &PeriodicBasis {
        &self.basis
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    /// Curve value at `t` in `[0, 1]`.
    pub fn eval(&self, t: f64) -> Result<f64, SplineError> {
        let (first, values) = self.basis.eval_active(t)?;
        let mut acc = 0.0;
        for (offset, v) in values.iter().enumerate() {
            acc += self.coefficients[self.basis.free_index(first + offset)] * v;
        }
        Ok(acc)
    }

    /// Half the peak-to-peak range of the curve on a uniform grid.
    pub fn amplitude(&self, grid: usize) -> f64 {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for i in 0..grid {
            let t = i as f64 / grid as f64;
            let v = self.eval(t).expect("grid point inside domain");
            min = min.min(v);
            max = max.max(v);
        }
        0.5 * (max - min)
    }
}

/// Evaluate a curve at `t`.
pub fn eval_curve(curve: &SplineCurve, t: f64) -> Result<f64, SplineError> {
    curve.eval(t)
}

/// Phase-indexed samples on the unit interval.
#[derive(Debug, Clone)]
pub struct SampleSet {
    ts: Vec<f64>,
    xs: Vec<f64>,
}

impl SampleSet {
    pub fn new(ts: Vec<f64>, xs: Vec<f64>) -> Result<Self, SplineError> {
        assert_eq!(ts.len(), xs.len(), "sample abscissae/ordinates mismatch");
        let mut ts = ts;
        for t in &mut ts {
            if *t < -DOMAIN_TOL || *t > 1.0 + DOMAIN_TOL {
                return Err(SplineError::SampleOutOfDomain { t: *t });
            }
            *t = t.clamp(0.0, 1.0);
        }
        Ok(Self { ts, xs })
    }

    pub fn len(&self) -> usize {
        self.ts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ts.is_empty()
    }

    pub fn ts(&self) -> &[f64] {
        &self.ts
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    /// Peak-to-peak range of the ordinates.
    pub fn peak_to_peak(&self) -> f64 {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &x in &self.xs {
            min = min.min(x);
            max = max.max(x);
        }
        if self.xs.is_empty() {
            0.0
        } else {
            max - min
        }
    }
}

/// Result of a least-squares projection onto a basis.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub curve: SplineCurve,
    /// Residual sum of squares.
    pub fit_error: f64,
    /// Condition estimate of the collocation matrix.
    pub condition: f64,
}

/// Project samples onto the free coefficient space of `basis` by linear
/// least squares over an orthogonal factorization of the collocation matrix.
pub fn fit_least_squares(basis: &PeriodicBasis, samples: &SampleSet) -> Result<FitResult, SplineError> {
    let n = basis.n_free();
    if samples.len() < n {
        return Err(SplineError::InsufficientSamples {
            needed: n,
            got: samples.len(),
        });
    }
    let matrix = basis.collocation(samples.ts())?;
    let rhs = DVector::from_column_slice(samples.xs());
    let coefficients = solve_least_squares(&matrix, &rhs)?;
    let residual = &rhs - &matrix * &coefficients;
    let fit_error = residual.norm_squared();
    let condition = condition_estimate(&matrix);
    Ok(FitResult {
        curve: SplineCurve::new(basis.clone(), coefficients)?,
        fit_error,
        condition,
    })
}

/// Least-squares solve via column-pivoted QR with a conditioning check.
pub(crate) fn solve_least_squares(
    matrix: &DMatrix<f64>,
    rhs: &DVector<f64>,
) -> Result<DVector<f64>, SplineError> {
    let n = matrix.ncols();
    let qr = matrix.clone().col_piv_qr();
    let r = qr.r();
    let first = r[(0, 0)].abs();
    let last = r[(n - 1, n - 1)].abs();
    let condition = if last > 0.0 { first / last } else { f64::INFINITY };
    if !condition.is_finite() || condition > CONDITION_LIMIT {
        return Err(SplineError::RankDeficient { condition });
    }
    let qt_b = qr.q().transpose() * rhs;
    let mut solution = r
        .solve_upper_triangular(&qt_b)
        .ok_or(SplineError::RankDeficient { condition })?;
    qr.p().inv_permute_rows(&mut solution);
    Ok(solution)
}

pub(crate) fn condition_estimate(matrix: &DMatrix<f64>) -> f64 {
    let qr = matrix.clone().col_piv_qr();
    let r = qr.r();
    let n = matrix.ncols();
    let first = r[(0, 0)].abs();
    let last = r[(n - 1, n - 1)].abs();
    if last > 0.0 {
        first / last
    } else {
        f64::INFINITY
    }
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_floats(line: &str, key: &str) -> Result<Vec<f64>, SplineError> {
    let rest = line
        .strip_prefix(key)
        .ok_or_else(|| SplineError::BadRecord(format!("expected `{key}` line, got `{line}`")))?;
    rest.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| SplineError::BadRecord(format!("bad float `{tok}`")))
        })
        .collect()
}

/// Plain-text spline record: interior knots, free coefficients, fit error.
/// Values are written in shortest round-trip decimal form.
pub fn write_spline_record(curve: &SplineCurve, fit_error: f64) -> String {
    format!(
        "interior_knots: {}\ncoefficients: {}\nfit_error: {}\n",
        join(curve.basis().knots().interior()),
        join(curve.coefficients().as_slice()),
        fit_error,
    )
}

/// Parse a record produced by [`write_spline_record`].
pub fn parse_spline_record(text: &str) -> Result<(SplineCurve, f64), SplineError> {
    let mut lines = text.lines();
    let knots = parse_floats(
        lines
            .next()
            .ok_or_else(|| SplineError::BadRecord("empty record".into()))?,
        "interior_knots:",
    )?;
    let coefficients = parse_floats(
        lines
            .next()
            .ok_or_else(|| SplineError::BadRecord("missing coefficients".into()))?,
        "coefficients:",
    )?;
    let fit_error = parse_floats(
        lines
            .next()
            .ok_or_else(|| SplineError::BadRecord("missing fit_error".into()))?,
        "fit_error:",
    )?;
    if fit_error.len() != 1 {
        return Err(SplineError::BadRecord("fit_error must hold one value".into()));
    }
    let basis = PeriodicBasis::cubic(KnotVector::periodic(&knots)?);
    let curve = SplineCurve::new(basis, DVector::from_vec(coefficients))?;
    Ok((curve, fit_error[0]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Reference Cox-de Boor recursion, written directly from the defining
    /// recurrence with half-open first-order intervals. Test oracle only.
    pub(crate) fn naive_bspline(knots: &[f64], i: usize, k: usize, t: f64) -> f64 {
        if k == 1 {
            let last = i + 2 == knots.len();
            let inside = if last {
                knots[i] <= t && t <= knots[i + 1]
            } else {
                knots[i] <= t && t < knots[i + 1]
            };
            return if inside { 1.0 } else { 0.0 };
        }
        let w = |idx: usize, t: f64| {
            let denom = knots[idx + k - 1] - knots[idx];
            if denom != 0.0 {
                (t - knots[idx]) / denom
            } else {
                0.0
            }
        };
        w(i, t) * naive_bspline(knots, i, k - 1, t)
            + (1.0 - w(i + 1, t)) * naive_bspline(knots, i + 1, k - 1, t)
    }

    fn basis(interior: &[f64]) -> PeriodicBasis {
        PeriodicBasis::cubic(KnotVector::periodic(interior).unwrap())
    }

    #[test]
    fn periodic_extension_matches_shift_rule() {
        let kv = KnotVector::periodic(&[0.25, 0.5, 0.75]).unwrap();
        assert_eq!(kv.exterior_left(), &[-0.75, -0.5, -0.25]);
        assert_eq!(kv.exterior_right(), &[1.25, 1.5, 1.75]);
        assert_eq!(kv.full().len(), 3 + 8);

        let kv = KnotVector::periodic(&[0.1, 0.2, 0.9]).unwrap();
        for (got, want) in kv.exterior_left().iter().zip([-0.9, -0.8, -0.1]) {
            assert_abs_diff_eq!(got, &want, epsilon = 1e-15);
        }
        for (got, want) in kv.exterior_right().iter().zip([1.1, 1.2, 1.9]) {
            assert_abs_diff_eq!(got, &want, epsilon = 1e-15);
        }
    }

    #[test]
    fn too_few_knots_rejected() {
        assert!(matches!(
            KnotVector::periodic(&[0.3, 0.6]),
            Err(SplineError::TooFewKnots { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn invalid_knots_rejected() {
        assert!(matches!(
            KnotVector::periodic(&[0.1, 0.1, 0.5]),
            Err(SplineError::NonMonotone { index: 1 })
        ));
        assert!(matches!(
            KnotVector::periodic(&[0.5, 0.4, 0.8]),
            Err(SplineError::NonMonotone { .. })
        ));
        assert!(matches!(
            KnotVector::periodic(&[0.0, 0.4, 0.8]),
            Err(SplineError::OutOfDomain { .. })
        ));
        assert!(matches!(
            KnotVector::periodic(&[0.2, 0.4, 1.3]),
            Err(SplineError::OutOfDomain { .. })
        ));
    }

    #[test]
    fn counts_and_identification() {
        for m in 3..9 {
            let interior: Vec<f64> = (1..=m).map(|i| i as f64 / (m + 1) as f64).collect();
            let b = basis(&interior);
            assert_eq!(b.raw_count(), m + 4);
            assert_eq!(b.n_free(), m + 1);
            assert_eq!(b.identified_pairs(), [(m + 1, 0), (m + 2, 1), (m + 3, 2)]);
        }
    }

    #[test]
    fn uniform_cubic_central_value() {
        // Cubic B-spline over knots {0,1,2,3,4} peaks at 2/3 at its centre;
        // checked against the reference recursion.
        let knots = [0.0, 1.0, 2.0, 3.0, 4.0];
        let v = naive_bspline(&knots, 0, 4, 2.0);
        assert_abs_diff_eq!(v, 2.0 / 3.0, epsilon = 1e-14);

        // The same value must appear in a periodic basis with uniform knots:
        // scale the knot set onto [0, 0.8] inside the unit interval.
        let b = basis(&[0.2, 0.4, 0.6, 0.8]);
        let raw = b.eval_raw(0.4).unwrap();
        // Raw spline with support [0, 0.8] is index 3 (three exterior ones
        // precede it).
        assert_abs_diff_eq!(raw[3], 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn matches_naive_recursion_on_random_knots() {
        let mut rng = crate::rng::SmallRng::new(11);
        for _ in 0..20 {
            let mut interior: Vec<f64> = (0..5).map(|_| rng.uniform_in(0.05, 0.95)).collect();
            interior.sort_by(|a, b| a.partial_cmp(b).unwrap());
            interior.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
            if interior.len() < 3 {
                continue;
            }
            let b = basis(&interior);
            let full = b.knots().full().to_vec();
            for _ in 0..50 {
                let t = rng.uniform();
                let raw = b.eval_raw(t).unwrap();
                for i in 0..b.raw_count() {
                    let expected = naive_bspline(&full, i, 4, t);
                    assert_abs_diff_eq!(raw[i], expected, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn partition_of_unity_and_support() {
        let b = basis(&[0.15, 0.3, 0.55, 0.8]);
        for i in 0..=1000 {
            let t = i as f64 / 1000.0;
            let raw = b.eval_raw(t).unwrap();
            let sum: f64 = raw.iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
            assert!(raw.iter().all(|&v| v >= 0.0));
            assert!(raw.iter().filter(|&&v| v != 0.0).count() <= 4);
        }
    }

    #[test]
    fn continuity_at_interior_knots() {
        let b = basis(&[0.2, 0.45, 0.7]);
        for &knot in b.knots().interior() {
            let below = b.eval_raw(knot - 1e-13).unwrap();
            let above = b.eval_raw(knot + 1e-13).unwrap();
            for (lo, hi) in below.iter().zip(&above) {
                assert_abs_diff_eq!(lo, hi, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn domain_violation_detected() {
        let b = basis(&[0.25, 0.5, 0.75]);
        assert!(b.eval_raw(1.0 + 1e-13).is_ok());
        assert!(matches!(
            b.eval_raw(1.01),
            Err(SplineError::DomainViolation { .. })
        ));
        assert!(matches!(
            b.eval_raw(-0.2),
            Err(SplineError::DomainViolation { .. })
        ));
    }

    #[test]
    fn constant_coefficients_give_constant_curve() {
        let b = basis(&[0.1, 0.5, 0.6, 0.85]);
        let curve = SplineCurve::new(b.clone(), DVector::from_element(b.n_free(), 3.25)).unwrap();
        for i in 0..=64 {
            let t = i as f64 / 64.0;
            assert_abs_diff_eq!(curve.eval(t).unwrap(), 3.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn curve_is_periodic_with_smooth_seam() {
        let b = basis(&[0.2, 0.4, 0.6, 0.8, 0.9]);
        let mut rng = crate::rng::SmallRng::new(5);
        let coeffs = DVector::from_fn(b.n_free(), |_, _| rng.uniform_in(-2.0, 2.0));
        let curve = SplineCurve::new(b, coeffs).unwrap();
        let eval = |t: f64| curve.eval(t.rem_euclid(1.0)).unwrap();
        let h = 1e-6;
        let d = |t: f64| (eval(t + h) - eval(t - h)) / (2.0 * h);
        let dd = |t: f64| (eval(t + h) - 2.0 * eval(t) + eval(t - h)) / (h * h);
        assert!((eval(0.0) - eval(1.0)).abs() < 1e-9);
        assert!((d(0.0) - d(1.0)).abs() < 1e-9 * d(0.0).abs().max(1.0));
        assert!((dd(0.0) - dd(1.0)).abs() < 1e-3 * dd(0.0).abs().max(1.0));
    }

    #[test]
    fn unit_coefficient_reproduces_raw_spline_with_twin() {
        let b = basis(&[0.25, 0.5, 0.75]);
        let n = b.n_free();
        for free_idx in 0..n {
            let mut coeffs = DVector::zeros(n);
            coeffs[free_idx] = 1.0;
            let curve = SplineCurve::new(b.clone(), coeffs).unwrap();
            for i in 0..=40 {
                let t = i as f64 / 40.0;
                let raw = b.eval_raw(t).unwrap();
                let mut expected = raw[free_idx];
                if free_idx < IDENTIFIED_PAIRS {
                    expected += raw[n + free_idx];
                }
                assert_abs_diff_eq!(curve.eval(t).unwrap(), expected, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn reprojection_recovers_coefficients() {
        let b = basis(&[0.15, 0.35, 0.6, 0.7, 0.9]);
        let mut rng = crate::rng::SmallRng::new(9);
        let coeffs = DVector::from_fn(b.n_free(), |_, _| rng.uniform_in(-1.0, 1.0));
        let curve = SplineCurve::new(b.clone(), coeffs.clone()).unwrap();
        let ts: Vec<f64> = (0..200).map(|i| i as f64 / 200.0).collect();
        let xs: Vec<f64> = ts.iter().map(|&t| curve.eval(t).unwrap()).collect();
        let fit = fit_least_squares(&b, &SampleSet::new(ts, xs).unwrap()).unwrap();
        assert!(fit.fit_error < 1e-18, "fit error {}", fit.fit_error);
        for i in 0..b.n_free() {
            assert_abs_diff_eq!(fit.curve.coefficients()[i], coeffs[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn constant_samples_give_constant_coefficients() {
        let b = basis(&[0.3, 0.5, 0.7]);
        let ts: Vec<f64> = (0..50).map(|i| i as f64 / 50.0).collect();
        let xs = vec![3.7; ts.len()];
        let fit = fit_least_squares(&b, &SampleSet::new(ts, xs).unwrap()).unwrap();
        for i in 0..b.n_free() {
            assert_abs_diff_eq!(fit.curve.coefficients()[i], 3.7, epsilon = 1e-10);
        }
    }

    #[test]
    fn nested_model_residual_monotonicity() {
        // sin(2*pi*t) fitted with 10 free coefficients beats 5.
        let ts: Vec<f64> = (0..500).map(|i| i as f64 / 500.0).collect();
        let xs: Vec<f64> = ts
            .iter()
            .map(|&t| (2.0 * std::f64::consts::PI * t).sin())
            .collect();
        let samples = SampleSet::new(ts, xs).unwrap();
        let small: Vec<f64> = (1..=4).map(|i| i as f64 / 5.0).collect();
        let large: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        let e_small = fit_least_squares(&basis(&small), &samples).unwrap().fit_error;
        let e_large = fit_least_squares(&basis(&large), &samples).unwrap().fit_error;
        assert!(
            e_large < e_small,
            "10-coefficient fit {e_large} not below 5-coefficient fit {e_small}"
        );
    }

    #[test]
    fn insufficient_samples_rejected() {
        let b = basis(&[0.25, 0.5, 0.75]);
        let samples = SampleSet::new(vec![0.1, 0.2, 0.3], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(
            fit_least_squares(&b, &samples),
            Err(SplineError::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn least_squares_is_local_minimum() {
        let b = basis(&[0.2, 0.5, 0.8]);
        let ts: Vec<f64> = (0..120).map(|i| i as f64 / 120.0).collect();
        let xs: Vec<f64> = ts
            .iter()
            .map(|&t| (2.0 * std::f64::consts::PI * t).cos() + 0.3 * (6.0 * t).sin())
            .collect();
        let samples = SampleSet::new(ts.clone(), xs.clone()).unwrap();
        let fit = fit_least_squares(&b, &samples).unwrap();
        let matrix = b.collocation(&ts).unwrap();
        let rhs = DVector::from_column_slice(&xs);
        let mut rng = crate::rng::SmallRng::new(17);
        for _ in 0..25 {
            let mut dir = DVector::from_fn(b.n_free(), |_, _| rng.uniform_in(-1.0, 1.0));
            dir /= dir.norm();
            let perturbed = fit.curve.coefficients() + dir * 1e-6;
            let e = (&rhs - &matrix * perturbed).norm_squared();
            assert!(e >= fit.fit_error - 1e-18);
        }
    }

    #[test]
    fn knot_shift_equivariance() {
        // Shifting all defining knots of a raw B-spline shifts its graph.
        let mut rng = crate::rng::SmallRng::new(23);
        for _ in 0..20 {
            let mut knots: Vec<f64> = (0..5).map(|_| rng.uniform_in(0.0, 2.0)).collect();
            knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
            if knots.windows(2).any(|w| w[1] - w[0] < 1e-3) {
                continue;
            }
            let shift = rng.uniform_in(-3.0, 3.0);
            let shifted: Vec<f64> = knots.iter().map(|k| k + shift).collect();
            for i in 0..=60 {
                let t = knots[0] + (knots[4] - knots[0]) * i as f64 / 60.0;
                let a = naive_bspline(&knots, 0, 4, t);
                let b = naive_bspline(&shifted, 0, 4, t + shift);
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn spline_record_round_trips() {
        let b = basis(&[0.25, 0.5, 0.75]);
        let curve = SplineCurve::new(
            b,
            DVector::from_vec(vec![0.1, -0.7, 1.5, 2.25e-3]),
        )
        .unwrap();
        let text = write_spline_record(&curve, 1.25e-9);
        let (parsed, err) = parse_spline_record(&text).unwrap();
        assert_eq!(parsed.basis().knots().interior(), curve.basis().knots().interior());
        assert_eq!(parsed.coefficients(), curve.coefficients());
        assert_eq!(err, 1.25e-9);
    }
}
