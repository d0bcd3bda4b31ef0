/// Multiplicative decay applied at every tenth of an epoch.
pub const LR_DECAY: f64 = 0.925;

/// Step-decay schedule: `base_lr` is multiplied by [`LR_DECAY`] each time
/// another `ceil(steps_per_epoch / 10)` optimizer steps have been taken,
/// counting across epoch boundaries.
pub fn lr_schedule(step: u64, steps_per_epoch: u64, base_lr: f64) -> f64 {
    // Integer ceil(0.1 * S); never zero so short epochs still decay.
    let boundary = steps_per_epoch.div_ceil(10).max(1);
    let decays = step / boundary;
    base_lr * LR_DECAY.powi(decays.min(i32::MAX as u64) as i32)
}
