//! Paired traces with a planted query signal and optional attention sinks.
//!
//! Per layer and head, every patch gets a base weight `base_scale·U(0.5, 1.5)`
//! shared by both conditions, and sink patches get `sink_strength` in both.
//! The with-query row additionally carries `signal_strength` on the signal
//! block at the signal layer plus query jitter `N(0, noise_scale²)`, clipped
//! at zero. Both rows are divided by one normalizer so that the larger of the
//! two sums to `visual_mass`.

use laser_core::{AttentionTrace, GridGeometry, PixelRect, Result, LaserError, TokenLayout};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTraceSpec {
    pub layers: usize,
    pub heads: usize,
    pub rows: u32,
    pub cols: u32,
    pub width: u32,
    pub height: u32,
    pub signal_layer: usize,
    /// Top-left patch of the square signal block.
    pub signal_origin: (u32, u32),
    pub signal_size: u32,
    pub signal_strength: f64,
    pub noise_scale: f64,
    pub base_scale: f64,
    pub sink_strength: f64,
    pub sinks: Vec<usize>,
    /// Visual share of the larger of the two attention rows.
    pub visual_mass: f64,
    pub seed: u64,
}

impl Default for SyntheticTraceSpec {
    fn default() -> Self {
        Self {
            layers: 16,
            heads: 8,
            rows: 24,
            cols: 24,
            width: 672,
            height: 672,
            signal_layer: 8,
            signal_origin: (10, 10),
            signal_size: 4,
            signal_strength: 0.5,
            noise_scale: 0.05,
            base_scale: 1.0,
            sink_strength: 0.0,
            sinks: Vec::new(),
            visual_mass: 0.5,
            seed: 0,
        }
    }
}

/// What was planted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub signal_layer: usize,
    pub signal_patches: Vec<usize>,
    pub evidence_box: PixelRect,
    pub sinks: Vec<usize>,
}

impl SyntheticTraceSpec {
    /// Signal/noise ratio before normalization.
    pub fn snr(&self) -> f64 {
        self.signal_strength / self.noise_scale
    }

    pub fn grid(&self) -> Result<GridGeometry> {
        GridGeometry::new(self.rows, self.cols, self.width, self.height)
    }

    /// Copy with a random signal layer, signal position and `sink_count`
    /// sink patches outside the signal block.
    pub fn randomized(&self, seed: u64, sink_count: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec = self.clone();
        spec.seed = rng.random();
        spec.signal_layer = rng.random_range(0..self.layers.max(1));
        let size = self.signal_size.min(self.rows).min(self.cols);
        spec.signal_origin = (rng.random_range(0..=self.rows - size), rng.random_range(0..=self.cols - size));
        let block = spec.signal_patches();
        let patches = (self.rows * self.cols) as usize;
        spec.sinks.clear();
        while spec.sinks.len() < sink_count.min(patches - block.len()) {
            let p = rng.random_range(0..patches);
            if !block.contains(&p) && !spec.sinks.contains(&p) {
                spec.sinks.push(p);
            }
        }
        spec
    }

    pub fn signal_patches(&self) -> Vec<usize> {
        let (r0, c0) = self.signal_origin;
        let mut out = Vec::new();
        for r in r0..(r0 + self.signal_size).min(self.rows) {
            for c in c0..(c0 + self.signal_size).min(self.cols) {
                out.push((r * self.cols + c) as usize);
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(LaserError::Config(m));
        let grid = self.grid()?;
        if self.layers == 0 || self.heads == 0 {
            return fail("layers and heads must be positive".into());
        }
        if self.signal_layer >= self.layers {
            return fail(format!("signal layer {} outside {} layers", self.signal_layer, self.layers));
        }
        let (r, c) = self.signal_origin;
        if self.signal_size == 0 || r + self.signal_size > self.rows || c + self.signal_size > self.cols {
            return fail("signal block outside the grid".into());
        }
        for (name, v) in [
            ("signal_strength", self.signal_strength),
            ("noise_scale", self.noise_scale),
            ("base_scale", self.base_scale),
            ("sink_strength", self.sink_strength),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if self.base_scale == 0.0 {
            return fail("base_scale must be positive".into());
        }
        if !(self.visual_mass > 0.0 && self.visual_mass <= 1.0) {
            return fail(format!("visual_mass {} outside (0, 1]", self.visual_mass));
        }
        if let Some(&s) = self.sinks.iter().find(|&&s| s >= grid.patch_count()) {
            return fail(format!("sink patch {s} outside the grid"));
        }
        Ok(())
    }
}

pub fn gen_synthetic_trace(spec: &SyntheticTraceSpec) -> Result<(AttentionTrace<f64>, SyntheticTruth)> {
    spec.validate()?;
    let grid = spec.grid()?;
    let p = grid.patch_count();
    let signal = spec.signal_patches();
    let mut is_signal = vec![false; p];
    let mut sink = vec![0.0; p];
    for &i in &signal {
        is_signal[i] = true;
    }
    for &s in &spec.sinks {
        sink[s] = spec.sink_strength;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut with = Vec::with_capacity(spec.layers * spec.heads * p);
    let mut without = Vec::with_capacity(spec.layers * spec.heads * p);
    let mut w_row = vec![0.0; p];
    let mut o_row = vec![0.0; p];
    for l in 0..spec.layers {
        for _ in 0..spec.heads {
            for i in 0..p {
                let base = spec.base_scale * rng.random_range(0.5..1.5) + sink[i];
                let jitter: f64 = rng.sample(StandardNormal);
                let planted = if l == spec.signal_layer && is_signal[i] { spec.signal_strength } else { 0.0 };
                o_row[i] = base;
                w_row[i] = (base + planted + spec.noise_scale * jitter).max(0.0);
            }
            let z = w_row.iter().sum::<f64>().max(o_row.iter().sum::<f64>()) / spec.visual_mass;
            with.extend(w_row.iter().map(|v| v / z));
            without.extend(o_row.iter().map(|v| v / z));
        }
    }
    let layout = TokenLayout::contiguous(1, p, 6, 1);
    let trace = AttentionTrace::new(spec.layers, spec.heads, grid, layout, with, without, format!("synthetic/seed={}", spec.seed))?;
    let rects: Vec<PixelRect> = signal.iter().map(|&i| grid.patch_rect(i)).collect::<Result<_>>()?;
    let evidence_box = PixelRect::new(
        rects.iter().map(|r| r.x0).min().unwrap_or(0),
        rects.iter().map(|r| r.y0).min().unwrap_or(0),
        rects.iter().map(|r| r.x1).max().unwrap_or(0),
        rects.iter().map(|r| r.y1).max().unwrap_or(0),
    );
    Ok((trace, SyntheticTruth { signal_layer: spec.signal_layer, signal_patches: signal, evidence_box, sinks: spec.sinks.clone() }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_trace_is_valid_and_seeded() {
        let spec = SyntheticTraceSpec { layers: 4, heads: 2, rows: 6, cols: 6, width: 96, height: 96, signal_layer: 2, signal_origin: (1, 1), signal_size: 2, ..Default::default() };
        let (a, truth) = gen_synthetic_trace(&spec).unwrap();
        let (b, _) = gen_synthetic_trace(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(truth.signal_patches, vec![7, 8, 13, 14]);
        assert_eq!(truth.evidence_box, PixelRect::new(16, 16, 48, 48));
        for row in a.with_query().chunks(36).chain(a.without_query().chunks(36)) {
            assert!(row.iter().sum::<f64>() <= spec.visual_mass + 1e-12);
        }
    }

    #[test]
    fn randomized_keeps_sinks_off_the_signal() {
        let spec = SyntheticTraceSpec::default();
        for seed in 0..20 {
            let r = spec.randomized(seed, 5);
            r.validate().unwrap();
            assert_eq!(r.sinks.len(), 5);
            let block = r.signal_patches();
            assert!(r.sinks.iter().all(|s| !block.contains(s)));
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let base = SyntheticTraceSpec::default();
        for bad in [
            SyntheticTraceSpec { signal_layer: 16, ..base.clone() },
            SyntheticTraceSpec { signal_origin: (22, 0), ..base.clone() },
            SyntheticTraceSpec { noise_scale: -1.0, ..base.clone() },
            SyntheticTraceSpec { visual_mass: 1.5, ..base.clone() },
            SyntheticTraceSpec { sinks: vec![576], ..base.clone() },
        ] {
            assert!(gen_synthetic_trace(&bad).is_err());
        }
    }
}
