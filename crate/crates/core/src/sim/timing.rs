//! Per-cycle compute-time statistics of the control pipeline.

use super::pipeline::Pipeline;
use super::scenario::Scenario;
use super::SimError;

/// Compute-time percentiles in microseconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimingReport {
    pub cycles: usize,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
    pub mean: f64,
}

/// Nearest-rank percentile of sorted samples, `p` in [0, 100].
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of no samples");
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl TimingReport {
    pub fn from_samples(samples: &[f64]) -> Self {
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        Self {
            cycles: s.len(),
            p50: percentile(&s, 50.0),
            p95: percentile(&s, 95.0),
            p99: percentile(&s, 99.0),
            max: s[s.len() - 1],
            mean: s.iter().sum::<f64>() / s.len() as f64,
        }
    }
}

/// Run `cycles` cycles of the scenario's command stream, past its duration
/// if needed, and return each cycle's compute time (admittance, retargeting
/// and controller; the plant is excluded).
pub fn cycle_times(scenario: &Scenario, cycles: usize) -> Result<Vec<f64>, SimError> {
    let mut pipeline = Pipeline::new(scenario)?;
    Ok((0..cycles)
        .map(|k| {
            let t = k as f64 * scenario.dt;
            pipeline.cycle(&scenario.input_at(t), scenario.disturbance_at(t)).compute_us
        })
        .collect())
}
