use std::f64::consts::PI;

/// Cosine decay from `base` at step 0 to `base · min_ratio` at the last of
/// `total_steps` steps.
pub fn cosine_lr(base: f64, step: usize, total_steps: usize, min_ratio: f64) -> f64 {
    let floor = base * min_ratio;
    if total_steps <= 1 {
        return base;
    }
    let progress = step.min(total_steps - 1) as f64 / (total_steps - 1) as f64;
    floor + 0.5 * (base - floor) * (1.0 + (PI * progress).cos())
}
