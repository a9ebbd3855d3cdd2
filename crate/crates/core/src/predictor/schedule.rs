use super::config::ScheduleKind;

/// Learning-rate schedule over `0..=total` steps with a linear warmup of
/// `ceil(warmup_fraction * total)` steps (at least one).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub kind: ScheduleKind,
    pub peak: f64,
    pub floor: f64,
    pub total: usize,
    pub warmup: usize,
}

impl LrSchedule {
    pub fn new(kind: ScheduleKind, peak: f64, floor: f64, total: usize, warmup_fraction: f64) -> Self {
        let warmup = ((warmup_fraction * total as f64).ceil() as usize).max(1).min(total.max(1));
        Self { kind, peak, floor, total, warmup }
    }

    /// Rate at step `t`: 0 at `t = 0`, `peak` at the end of warmup, and for
    /// the cosine schedule `floor` at `t = total`.
    pub fn at(&self, t: usize) -> f64 {
        if t < self.warmup {
            return self.peak * t as f64 / self.warmup as f64;
        }
        match self.kind {
            ScheduleKind::Cosine => {
                let span = self.total.saturating_sub(self.warmup);
                if span == 0 {
                    return self.peak;
                }
                let progress = ((t - self.warmup) as f64 / span as f64).min(1.0);
                self.floor + 0.5 * (self.peak - self.floor) * (1.0 + (std::f64::consts::PI * progress).cos())
            }
            ScheduleKind::PiecewiseConstant => {
                let frac = t as f64 / self.total.max(1) as f64;
                let lr = if frac < 0.5 {
                    self.peak
                } else if frac < 0.75 {
                    self.peak * 0.1
                } else {
                    self.peak * 0.01
                };
                lr.max(self.floor)
            }
        }
    }

    /// Rate applied by update `step` (0-based): the schedule value after the
    /// update completes, so the first update is not wasted on a zero rate.
    pub fn for_update(&self, step: usize) -> f64 {
        self.at(step + 1)
    }
}
