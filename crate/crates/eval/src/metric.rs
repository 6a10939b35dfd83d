use laser_core::{LaserError, PatchMap, PixelRect, Result, Scalar};

/// Share of the map's mass on patches whose center lies inside `truth`.
pub fn attention_aggregation<T: Scalar>(map: &PatchMap<T>, truth: &PixelRect) -> Result<f64> {
    let mut inside = 0.0;
    let mut total = 0.0;
    for (rect, v) in map.grid.rects().zip(&map.values) {
        let v = v.as_f64();
        total += v;
        let (cx, cy) = rect.center();
        if truth.contains(cx, cy) {
            inside += v;
        }
    }
    if total <= 0.0 {
        return Err(LaserError::UndefinedMetric("attention aggregation of an all-zero map".into()));
    }
    Ok(inside / total)
}

/// Patches whose center lies inside `truth`, row-major.
pub fn patches_in_box(grid: &laser_core::GridGeometry, truth: &PixelRect) -> Vec<usize> {
    grid.rects()
        .enumerate()
        .filter(|(_, r)| {
            let (cx, cy) = r.center();
            truth.contains(cx, cy)
        })
        .map(|(i, _)| i)
        .collect()
}
