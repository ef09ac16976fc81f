/// Linear warmup from zero followed by cosine annealing, in (fractional)
/// epochs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub warmup_epochs: f64,
    pub total_epochs: f64,
}

impl LrSchedule {
    pub fn lr_at(&self, epoch: f64) -> f64 {
        let epoch = epoch.clamp(0.0, self.total_epochs);
        if epoch < self.warmup_epochs {
            return self.lr_max * epoch / self.warmup_epochs;
        }
        let span = self.total_epochs - self.warmup_epochs;
        if span <= 0.0 {
            return self.lr_max;
        }
        let t = (epoch - self.warmup_epochs) / span;
        self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}
