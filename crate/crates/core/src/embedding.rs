//! Angle encoding of planar states.
//!
//! Maps a measured state `(x, z)` to the polar angle of the embedded point
//! `(x - mu_x, sigma * (z - mu_z))`. Indexing control targets by this angle
//! instead of time removes phase shifts from the continuation problem, so
//! oscillatory solutions of autonomous systems become locally unique and no
//! oscillation period is ever needed.

use crate::spline::SampleSet;
use std::f64::consts::TAU;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("state coincides with the polar origin; angle undefined")]
    OriginCoincidence,
    #[error("reference cycle is degenerate: peak-to-peak of {axis} below 1e-9")]
    DegenerateCycle { axis: &'static str },
    #[error("heuristic `{heuristic}` placed the origin outside the cycle bounding box")]
    OriginOutsideCycle { heuristic: &'static str },
    #[error("samples span {span:.4} rad, less than one full winding")]
    IncompleteWinding { span: f64 },
    #[error(transparent)]
    Spline(#[from] crate::spline::SplineError),
}

/// Polar-origin placement heuristics.
///
/// The coordinate-pairing heuristics pick origin components from extremal
/// samples of the reference cycle; they nudge the origin so that spurious
/// controller equilibria land back on unstable nullcline branches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OriginHeuristic {
    /// Per-period means of x and z.
    Mean,
    /// x at the sample with minimal z; z at the sample with maximal x.
    MinMax,
    /// x at the sample with maximal z; z at the sample with minimal x.
    MaxMin,
    /// x at the sample with maximal z; z at the sample with maximal x.
    MaxMax,
    /// x at the sample with minimal z; z at the sample with minimal x.
    MinMin,
    /// Centre of the minimal bounding box.
    Middle,
    /// Fixed origin, kept across updates.
    Manual { mu_x: f64, mu_z: f64 },
}

impl OriginHeuristic {
    pub fn name(&self) -> &'static str {
        match self {
            OriginHeuristic::Mean => "mean",
            OriginHeuristic::MinMax => "min-max",
            OriginHeuristic::MaxMin => "max-min",
            OriginHeuristic::MaxMax => "max-max",
            OriginHeuristic::MinMin => "min-min",
            OriginHeuristic::Middle => "middle",
            OriginHeuristic::Manual { .. } => "manual",
        }
    }
}

/// A timed planar measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarSample {
    pub t: f64,
    pub x: f64,
    pub z: f64,
}

fn next_embedding_id() -> u64 {
    use std::sync::atomic::{AtomicU64, Ordering};
    static NEXT: AtomicU64 = AtomicU64::new(1);
    NEXT.fetch_add(1, Ordering::Relaxed)
}

/// Polar origin, scale factor and provenance of an angle encoding.
///
/// Immutable once constructed; cloning preserves the identity tag.
#[derive(Debug, Clone)]
pub struct AngleEmbedding {
    pub mu_x: f64,
    pub mu_z: f64,
    pub sigma: f64,
    pub heuristic: OriginHeuristic,
    id: u64,
}

impl AngleEmbedding {
    pub fn new(mu_x: f64, mu_z: f64, sigma: f64, heuristic: OriginHeuristic) -> Self {
        assert!(sigma > 0.0, "embedding scale must be positive");
        Self {
            mu_x,
            mu_z,
            sigma,
            heuristic,
            id: next_embedding_id(),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Angle of the embedded state, wrapped to `[0, two pi)`.
    pub fn encode_angle(&self, x: f64, z: f64) -> Result<f64, EmbeddingError> {
        let dx = x - self.mu_x;
        let dz = self.sigma * (z - self.mu_z);
        if dx.hypot(dz) < 1e-12 {
            return Err(EmbeddingError::OriginCoincidence);
        }
        let phi = dz.atan2(dx);
        let wrapped = if phi < 0.0 { phi + TAU } else { phi };
        Ok(if wrapped >= TAU { 0.0 } else { wrapped })
    }

    /// Unwrapped angles along a sample path (monotone up to winding jitter).
    pub fn unwrap_angles(&self, samples: &[PlanarSample]) -> Result<Vec<f64>, EmbeddingError> {
        let mut unwrapped = Vec::with_capacity(samples.len());
        let mut prev = 0.0;
        let mut offset = 0.0;
        for (i, s) in samples.iter().enumerate() {
            let phi = self.encode_angle(s.x, s.z)?;
            if i > 0 {
                let mut delta = phi - prev;
                if delta > std::f64::consts::PI {
                    delta -= TAU;
                } else if delta < -std::f64::consts::PI {
                    delta += TAU;
                }
                offset += delta;
                unwrapped.push(offset);
            } else {
                unwrapped.push(0.0);
            }
            prev = phi;
        }
        Ok(unwrapped)
    }

    /// Pointwise angle encoding without any winding bookkeeping.
    ///
    /// For records already known to cover one winding (such as steady-cycle
    /// records), this is the right projection: least squares is order-free,
    /// so no restriction or sorting is needed, and noisy angles need no
    /// unwrapping.
    pub fn encode_pointwise(&self, samples: &[PlanarSample]) -> Result<SampleSet, EmbeddingError> {
        let mut ts = Vec::with_capacity(samples.len());
        let mut xs = Vec::with_capacity(samples.len());
        for s in samples {
            ts.push(self.encode_angle(s.x, s.z)? / TAU);
            xs.push(s.x);
        }
        Ok(SampleSet::new(ts, xs)?)
    }

    /// Convert timed samples to angle-indexed samples on `[0, 1)`.
    ///
    /// Requires at least one full winding; when the record spans several,
    /// only the final complete winding is kept (the closest approach to the
    /// asymptotic cycle).
    pub fn encode_samples(&self, samples: &[PlanarSample]) -> Result<SampleSet, EmbeddingError> {
        let unwrapped = self.unwrap_angles(samples)?;
        let first = unwrapped.first().copied().unwrap_or(0.0);
        let last = unwrapped.last().copied().unwrap_or(0.0);
        // Winding orientation is irrelevant: a time-reversed record encodes
        // to the same sample set.
        let span = (last - first).abs();
        if span < TAU - 1e-9 {
            return Err(EmbeddingError::IncompleteWinding { span });
        }
        let mut ts = Vec::new();
        let mut xs = Vec::new();
        for (sample, &psi) in samples.iter().zip(&unwrapped) {
            if (last - psi).abs() < TAU {
                let phi = self.encode_angle(sample.x, sample.z)?;
                ts.push(phi / TAU);
                xs.push(sample.x);
            }
        }
        Ok(SampleSet::new(ts, xs)?)
    }
}

fn peak_to_peak(values: impl Iterator<Item = f64>) -> (f64, f64, f64) {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for v in values {
        min = min.min(v);
        max = max.max(v);
    }
    (min, max, max - min)
}

fn sample_at_extremum(cycle: &[PlanarSample], key: impl Fn(&PlanarSample) -> f64, maximal: bool) -> PlanarSample {
    let mut best = cycle[0];
    for s in cycle {
        let better = if maximal { key(s) > key(&best) } else { key(s) < key(&best) };
        if better {
            best = *s;
        }
    }
    best
}

/// Place a polar origin and scale factor from one period of a cycle.
///
/// The scale factor brings x and z excursions into comparable amplitudes:
/// `sigma = ptp(x) / ptp(z)`.
pub fn compute_embedding(
    cycle: &[PlanarSample],
    heuristic: OriginHeuristic,
) -> Result<AngleEmbedding, EmbeddingError> {
    assert!(!cycle.is_empty(), "embedding needs a nonempty cycle");
    let (x_min, x_max, x_ptp) = peak_to_peak(cycle.iter().map(|s| s.x));
    let (z_min, z_max, z_ptp) = peak_to_peak(cycle.iter().map(|s| s.z));
    if x_ptp < 1e-9 {
        return Err(EmbeddingError::DegenerateCycle { axis: "x" });
    }
    if z_ptp < 1e-9 {
        return Err(EmbeddingError::DegenerateCycle { axis: "z" });
    }
    let sigma = x_ptp / z_ptp;
    let (mu_x, mu_z) = match heuristic {
        OriginHeuristic::Mean => {
            let n = cycle.len() as f64;
            (
                cycle.iter().map(|s| s.x).sum::<f64>() / n,
                cycle.iter().map(|s| s.z).sum::<f64>() / n,
            )
        }
        OriginHeuristic::MinMax => (
            sample_at_extremum(cycle, |s| s.z, false).x,
            sample_at_extremum(cycle, |s| s.x, true).z,
        ),
        OriginHeuristic::MaxMin => (
            sample_at_extremum(cycle, |s| s.z, true).x,
            sample_at_extremum(cycle, |s| s.x, false).z,
        ),
        OriginHeuristic::MaxMax => (
            sample_at_extremum(cycle, |s| s.z, true).x,
            sample_at_extremum(cycle, |s| s.x, true).z,
        ),
        OriginHeuristic::MinMin => (
            sample_at_extremum(cycle, |s| s.z, false).x,
            sample_at_extremum(cycle, |s| s.x, false).z,
        ),
        OriginHeuristic::Middle => (0.5 * (x_min + x_max), 0.5 * (z_min + z_max)),
        OriginHeuristic::Manual { mu_x, mu_z } => (mu_x, mu_z),
    };
    if mu_x <= x_min || mu_x >= x_max || mu_z <= z_min || mu_z >= z_max {
        return Err(EmbeddingError::OriginOutsideCycle {
            heuristic: heuristic.name(),
        });
    }
    Ok(AngleEmbedding::new(mu_x, mu_z, sigma, heuristic))
}
