use super::{StabilityWindow, WeighingConfig, WeightSample};

/// Maximal runs in which no sample deviates by more than `max_step_grams`
/// from its predecessor and which hold at least `min_len` samples.
/// Runs never overlap, so the result is disjoint and ordered by start.
pub fn find_stability_windows(samples: &[WeightSample], max_step_grams: f64, min_len: usize) -> Vec<StabilityWindow> {
    let mut windows = Vec::new();
    if samples.is_empty() {
        return windows;
    }
    let mut start = 0;
    for i in 1..=samples.len() {
        let breaks = i == samples.len() || (samples[i].grams - samples[i - 1].grams).abs() > max_step_grams;
        if breaks {
            if i - start >= min_len.max(1) {
                let (mean, std) = mean_std(samples[start..i].iter().map(|s| s.grams));
                windows.push(StabilityWindow {
                    start_index: start,
                    end_index: i - 1,
                    mean_grams: mean,
                    std_grams: std,
                });
            }
            start = i;
        }
    }
    windows
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StableWeight {
    pub grams: f64,
    pub std_grams: f64,
}

/// Mean and population standard deviation over every sample inside any of
/// the windows; `None` without windows.
pub fn stable_weight(samples: &[WeightSample], windows: &[StabilityWindow]) -> Option<StableWeight> {
    if windows.is_empty() {
        return None;
    }
    let values = windows
        .iter()
        .flat_map(|w| samples[w.start_index..=w.end_index].iter().map(|s| s.grams));
    let (grams, std_grams) = mean_std(values);
    Some(StableWeight { grams, std_grams })
}

pub(crate) fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (n, sum) = values.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// Samples between two weight shifts, with their stable weight.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementPeriod {
    pub samples: Vec<WeightSample>,
    pub windows: Vec<StabilityWindow>,
    pub stable_weight_grams: Option<f64>,
    pub quality_std_grams: Option<f64>,
}

impl MeasurementPeriod {
    pub fn analyze(samples: Vec<WeightSample>, cfg: &WeighingConfig) -> Self {
        let windows = find_stability_windows(&samples, cfg.stability_delta_grams, cfg.stability_len());
        let stable = stable_weight(&samples, &windows);
        Self {
            samples,
            windows,
            stable_weight_grams: stable.map(|s| s.grams),
            quality_std_grams: stable.map(|s| s.std_grams),
        }
    }
}
