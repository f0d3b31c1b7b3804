use serde::{Deserialize, Serialize};

/// Hours spent on each checkpoint-related overhead during one run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OverheadLedger {
    pub save_hours: f64,
    pub load_hours: f64,
    pub lost_hours: f64,
    pub reschedule_hours: f64,
}

impl OverheadLedger {
    pub fn total(&self) -> f64 {
        self.save_hours + self.load_hours + self.lost_hours + self.reschedule_hours
    }

    pub fn merge(&mut self, other: &OverheadLedger) {
        self.save_hours += other.save_hours;
        self.load_hours += other.load_hours;
        self.lost_hours += other.lost_hours;
        self.reschedule_hours += other.reschedule_hours;
    }
}
