pub const LR_INITIAL: f64 = 0.001;
pub const LR_DECAY: f64 = 0.95;

/// Exponentially decayed learning rate, stepped once per epoch.
pub fn lr_schedule(epoch: usize) -> f64 {
    LR_INITIAL * LR_DECAY.powi(epoch as i32)
}
