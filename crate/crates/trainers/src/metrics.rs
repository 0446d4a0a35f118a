//! Line-oriented training metrics.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepType {
    Single,
    CutMix,
}

impl StepType {
    pub fn as_str(self) -> &'static str {
        match self {
            StepType::Single => "single",
            StepType::CutMix => "cutmix",
        }
    }
}

#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub step: usize,
    pub loss_target: f64,
    pub loss_prior: f64,
    pub loss_unmix: f64,
    pub step_type: StepType,
}

pub const METRICS_HEADER: &str = "step,loss_target,loss_prior,loss_unmix,step_type";

/// CSV with a header row, '.' decimals and LF line endings.
pub fn metrics_to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{:.9},{:.9},{:.9},{}\n",
            r.step,
            r.loss_target,
            r.loss_prior,
            r.loss_unmix,
            r.step_type.as_str()
        ));
    }
    out
}
