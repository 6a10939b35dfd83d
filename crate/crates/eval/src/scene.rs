//! Seeded synthetic scenes: one colored target among distractors.

use laser_core::{ImageBuffer, PixelRect};
use laser_toyvlm::tokenizer::Tokenizer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetColor {
    Red,
    Green,
    Blue,
}

impl TargetColor {
    pub fn channel(self) -> usize {
        match self {
            TargetColor::Red => 0,
            TargetColor::Green => 1,
            TargetColor::Blue => 2,
        }
    }

    /// Saturated color whose dominant channel clears `[lo, hi]` by `margin`
    /// where the byte range allows it.
    pub fn rgb_clear_of(self, lo: u8, hi: u8, margin: u8) -> [u8; 3] {
        let strong = hi.saturating_add(margin).max(200);
        let weak = lo.saturating_sub(margin).min(40);
        let mut c = [weak; 3];
        c[self.channel()] = strong;
        c
    }

    pub fn name(self) -> &'static str {
        match self {
            TargetColor::Red => "red",
            TargetColor::Green => "green",
            TargetColor::Blue => "blue",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub target: TargetColor,
    /// Inclusive range of the target's side length in pixels.
    pub target_size: (u32, u32),
    pub distractors: usize,
    /// Bright patches that attract attention independently of the question.
    pub bright_spots: usize,
    /// Background gray level and texture amplitude.
    pub background: u8,
    pub texture: u8,
    /// Minimum per-channel distance between target and background.
    pub color_margin: u8,
    /// Snap shapes to this pixel grid (1 disables snapping).
    pub align: u32,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 96,
            height: 96,
            target: TargetColor::Red,
            target_size: (16, 24),
            distractors: 2,
            bright_spots: 1,
            background: 125,
            texture: 15,
            color_margin: 60,
            align: 8,
        }
    }
}

/// A generated scene with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: ImageBuffer,
    /// Tight bounds of the target.
    pub truth: PixelRect,
    pub query: String,
    pub query_tokens: Vec<usize>,
}

fn place(rng: &mut ChaCha8Rng, w: u32, h: u32, side: u32, align: u32) -> PixelRect {
    let snap = |v: u32| v / align * align;
    let x0 = snap(rng.random_range(0..=w - side));
    let y0 = snap(rng.random_range(0..=h - side));
    PixelRect::new(x0, y0, x0 + side, y0 + side)
}

fn overlaps(a: &PixelRect, others: &[PixelRect]) -> bool {
    others.iter().any(|b| a.intersect(b).is_some())
}

/// Distractors use the other target colors; bright spots are white.
pub fn gen_synthetic_scene(spec: &SceneSpec, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (spec.width, spec.height);
    let align = spec.align.max(1);
    let lo = spec.background.saturating_sub(spec.texture);
    let hi = spec.background.saturating_add(spec.texture);
    let gray: Vec<u8> = (0..w * h).map(|_| rng.random_range(lo..=hi)).collect();
    let mut image = ImageBuffer::from_gray(w, h, &gray).expect("scene dimensions");

    let max_side = spec.target_size.1.min(w).min(h);
    let min_side = spec.target_size.0.clamp(1, max_side);
    let side = (rng.random_range(min_side..=max_side) / align * align).max(align.min(max_side));
    let truth = place(&mut rng, w, h, side, align);
    let color = spec.target.rgb_clear_of(lo, hi, spec.color_margin);

    let mut taken = vec![truth];
    let others: Vec<TargetColor> =
        [TargetColor::Red, TargetColor::Green, TargetColor::Blue].into_iter().filter(|&c| c != spec.target).collect();
    for i in 0..spec.distractors {
        let side = (rng.random_range(min_side..=max_side) / align * align).max(align.min(max_side));
        if let Some(r) = (0..32).map(|_| place(&mut rng, w, h, side, align)).find(|r| !overlaps(r, &taken)) {
            image.fill_rect(r, others[i % others.len()].rgb_clear_of(lo, hi, spec.color_margin));
            taken.push(r);
        }
    }
    for _ in 0..spec.bright_spots {
        let side = align.max(4).min(w).min(h);
        if let Some(r) = (0..32).map(|_| place(&mut rng, w, h, side, align)).find(|r| !overlaps(r, &taken)) {
            image.fill_rect(r, [255, 255, 255]);
            taken.push(r);
        }
    }
    image.fill_rect(truth, color);
    let query = format!("is there a {} square?", spec.target.name());
    let query_tokens = Tokenizer::new(64).encode(&query);
    Scene { image, truth, query, query_tokens }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_bounded() {
        let spec = SceneSpec::default();
        for seed in 0..50 {
            let a = gen_synthetic_scene(&spec, seed);
            assert_eq!(a, gen_synthetic_scene(&spec, seed));
            assert!(a.truth.area() > 0 && a.truth.x1 <= spec.width && a.truth.y1 <= spec.height);
        }
        assert_ne!(gen_synthetic_scene(&spec, 1).image, gen_synthetic_scene(&spec, 2).image);
    }

    #[test]
    fn target_is_separated_from_background() {
        let spec = SceneSpec { target: TargetColor::Green, ..Default::default() };
        let s = gen_synthetic_scene(&spec, 9);
        assert!(s.query.contains("green"));
        let lo = (spec.background - spec.texture) as i16;
        let hi = (spec.background + spec.texture) as i16;
        let gap = |c: u8| {
            let c = c as i16;
            if c < lo { lo - c } else if c > hi { c - hi } else { 0 }
        };
        let first = s.image.pixel(s.truth.x0, s.truth.y0);
        for y in s.truth.y0..s.truth.y1 {
            for x in s.truth.x0..s.truth.x1 {
                let px = s.image.pixel(x, y);
                assert_eq!(px, first);
                assert!(px.iter().map(|&c| gap(c)).max().unwrap() >= spec.color_margin as i16);
            }
        }
        assert!(first[1] > first[0] && first[1] > first[2]);
    }
}
