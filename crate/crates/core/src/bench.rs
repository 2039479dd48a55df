//! Inference benchmarking: per-inference latency distributions with fixed
//! 5 ms histogram bins, summary statistics, and energy-delay-product
//! arithmetic on externally measured energy.
//!
//! Energy is always an input — the tool never estimates it. Timing uses the
//! monotonic clock and the benchmark loop is strictly sequential.

use std::io::{BufRead, Write};
use std::time::{Duration, Instant};

use crate::compress::PruneMask;
use crate::error::{ensure_arg, Error, Result};
use crate::l2mu::{Model, Window};

pub const DEFAULT_BIN_WIDTH_MS: f64 = 5.0;
const WARMUP_RUNS: usize = 10;

/// How long to benchmark: a fixed number of inferences or a wall-clock
/// budget (at least 100 inferences either way).
#[derive(Clone, Copy, Debug)]
pub enum BenchBudget {
    Count(usize),
    Duration(Duration),
}

/// Latency distribution of a benchmark run. Percentiles use the
/// nearest-rank convention on the sorted sample.
#[derive(Clone, Debug, PartialEq)]
pub struct LatencyReport {
    pub latencies_s: Vec<f64>,
    pub bin_width_ms: f64,
    pub mean_s: f64,
    pub median_s: f64,
    pub p95_s: f64,
    pub p99_s: f64,
    /// Contiguous (bin_start_ms, count) pairs covering every observation.
    pub histogram: Vec<(f64, u64)>,
}

impl LatencyReport {
    pub fn from_latencies(latencies_s: Vec<f64>, bin_width_ms: f64) -> Result<Self> {
        ensure_arg!(!latencies_s.is_empty(), "latency report needs at least one measurement");
        ensure_arg!(bin_width_ms > 0.0, "histogram bin width must be positive");
        let mut sorted = latencies_s.clone();
        sorted.sort_by(f64::total_cmp);
        let mean_s = latencies_s.iter().sum::<f64>() / latencies_s.len() as f64;
        let median_s = percentile(&sorted, 50.0);
        let p95_s = percentile(&sorted, 95.0);
        let p99_s = percentile(&sorted, 99.0);

        let first_bin = (sorted[0] * 1000.0 / bin_width_ms).floor() as i64;
        let last_bin = (sorted[sorted.len() - 1] * 1000.0 / bin_width_ms).floor() as i64;
        let mut histogram = Vec::with_capacity((last_bin - first_bin + 1).max(1) as usize);
        for bin in first_bin..=last_bin {
            histogram.push((bin as f64 * bin_width_ms, 0u64));
        }
        for &l in &latencies_s {
            let bin = ((l * 1000.0 / bin_width_ms).floor() as i64 - first_bin) as usize;
            histogram[bin].1 += 1;
        }
        Ok(LatencyReport { latencies_s, bin_width_ms, mean_s, median_s, p95_s, p99_s, histogram })
    }

    pub fn count(&self) -> usize {
        self.latencies_s.len()
    }

    /// Plain-text serialization (shortest-round-trip floats, so reading the
    /// report back reproduces it exactly).
    pub fn write_to(&self, out: &mut dyn Write) -> Result<()> {
        writeln!(out, "latency_report v1")?;
        writeln!(out, "bin_width_ms={}", self.bin_width_ms)?;
        for l in &self.latencies_s {
            writeln!(out, "{l}")?;
        }
        Ok(())
    }

    pub fn read_from(reader: &mut dyn BufRead) -> Result<Self> {
        let mut lines = reader.lines();
        let header =
            lines.next().ok_or_else(|| Error::format("empty latency report"))??;
        if header.trim() != "latency_report v1" {
            return Err(Error::format(format!("bad latency report header '{header}'")));
        }
        let bin_line =
            lines.next().ok_or_else(|| Error::format("latency report missing bin width"))??;
        let bin_width_ms = bin_line
            .trim()
            .strip_prefix("bin_width_ms=")
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| Error::format(format!("bad bin width line '{bin_line}'")))?;
        let mut latencies = Vec::new();
        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            latencies.push(
                line.parse::<f64>()
                    .map_err(|_| Error::format(format!("bad latency value '{line}'")))?,
            );
        }
        LatencyReport::from_latencies(latencies, bin_width_ms)
    }

    /// Histogram as `bin_start_ms,count` CSV lines with a header row.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bin_start_ms,count\n");
        for (start, count) in &self.histogram {
            out.push_str(&format!("{start},{count}\n"));
        }
        out
    }
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Times single-sample inferences one by one on the monotonic clock. The
/// first [`WARMUP_RUNS`] inferences are excluded from the report; samples
/// are cycled round-robin.
pub fn bench_inference<R>(
    mut infer: impl FnMut(&Window<f32>) -> R,
    samples: &[Window<f32>],
    budget: BenchBudget,
    bin_width_ms: f64,
) -> Result<LatencyReport> {
    ensure_arg!(!samples.is_empty(), "benchmark needs at least one sample");
    if let BenchBudget::Count(n) = budget {
        ensure_arg!(n >= 100, "benchmark needs at least 100 inferences, got {n}");
    }

    let mut latencies = Vec::new();
    let started = Instant::now();
    let mut run = 0usize;
    loop {
        let window = &samples[run % samples.len()];
        let before = Instant::now();
        let out = infer(window);
        let elapsed = before.elapsed().as_secs_f64();
        drop(out);
        if run >= WARMUP_RUNS {
            latencies.push(elapsed);
        }
        run += 1;
        match budget {
            BenchBudget::Count(n) => {
                if run >= n {
                    break;
                }
            }
            BenchBudget::Duration(d) => {
                if run >= 100 && started.elapsed() >= d {
                    break;
                }
            }
        }
    }
    LatencyReport::from_latencies(latencies, bin_width_ms)
}

/// Multiplies externally measured per-inference energy (mJ) by inference
/// time (s); the result is in mJ·s.
pub fn energy_delay_product(energy_mj: f64, time_s: f64) -> Result<f64> {
    ensure_arg!(energy_mj > 0.0, "energy must be positive, got {energy_mj}");
    ensure_arg!(time_s > 0.0, "time must be positive, got {time_s}");
    Ok(energy_mj * time_s)
}

/// One summary record: compression metrics plus latency statistics, with
/// accuracy, synaptic operations and EDP columns present only when their
/// inputs were supplied.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    fields: Vec<(&'static str, String)>,
}

impl MetricsRecord {
    pub fn fields(&self) -> &[(&'static str, String)] {
        &self.fields
    }

    /// Comma-separated header row plus one value row.
    pub fn to_csv(&self) -> String {
        let header: Vec<&str> = self.fields.iter().map(|(k, _)| *k).collect();
        let values: Vec<&str> = self.fields.iter().map(|(_, v)| v.as_str()).collect();
        format!("{}\n{}\n", header.join(","), values.join(","))
    }
}

pub fn report_summary(
    model: &Model<f32>,
    mask: Option<&PruneMask>,
    accuracy: Option<f64>,
    synops_per_sample: Option<u64>,
    latency: &LatencyReport,
    energy_mj: Option<f64>,
) -> Result<MetricsRecord> {
    let (nonzero, footprint) = crate::compress::count_nonzero_params(model, mask);
    let mut fields: Vec<(&'static str, String)> = vec![
        ("variant", model.variant.as_str().to_string()),
        ("nonzero_params", nonzero.to_string()),
        ("footprint_bytes", footprint.to_string()),
    ];
    if let Some(acc) = accuracy {
        fields.push(("accuracy", format!("{acc}")));
    }
    if let Some(ops) = synops_per_sample {
        fields.push(("synops_per_sample", ops.to_string()));
    }
    fields.push(("inferences", latency.count().to_string()));
    fields.push(("mean_inference_s", format!("{}", latency.mean_s)));
    fields.push(("median_inference_s", format!("{}", latency.median_s)));
    fields.push(("p95_inference_s", format!("{}", latency.p95_s)));
    fields.push(("p99_inference_s", format!("{}", latency.p99_s)));
    if let Some(energy) = energy_mj {
        let edp = energy_delay_product(energy, latency.mean_s)?;
        fields.push(("mean_energy_mj", format!("{energy}")));
        fields.push(("edp_mj_s", format!("{edp}")));
    }
    Ok(MetricsRecord { fields })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::l2mu::{forward, Dims, PopulationSet, Variant};

    #[test]
    fn warmup_runs_are_excluded_from_the_report() {
        let samples = vec![Window::new(1, 1, vec![0.0]).unwrap()];
        let mut calls = 0usize;
        let report =
            bench_inference(|_| calls += 1, &samples, BenchBudget::Count(120), 5.0).unwrap();
        assert_eq!(calls, 120);
        assert_eq!(report.count(), 110);
    }

    #[test]
    fn constant_time_latencies_land_in_one_bin() {
        let report = LatencyReport::from_latencies(vec![0.0002; 110], 5.0).unwrap();
        assert_eq!(report.histogram.len(), 1);
        assert_eq!(report.histogram[0], (0.0, 110));
        assert!((report.mean_s - report.median_s).abs() < 1e-12);
    }

    #[test]
    fn mean_is_sum_over_count_and_histogram_is_complete() {
        let latencies = vec![0.001, 0.002, 0.0005, 0.030, 0.012];
        let report = LatencyReport::from_latencies(latencies.clone(), 5.0).unwrap();
        let mean = latencies.iter().sum::<f64>() / latencies.len() as f64;
        assert!((report.mean_s - mean).abs() < 1e-15);
        let total: u64 = report.histogram.iter().map(|(_, c)| c).sum();
        assert_eq!(total as usize, latencies.len());
        // Contiguous bins from 0 ms to 30 ms.
        assert_eq!(report.histogram.first().unwrap().0, 0.0);
        assert_eq!(report.histogram.last().unwrap().0, 30.0);
    }

    #[test]
    fn percentiles_use_nearest_rank() {
        let latencies: Vec<f64> = (1..=100).map(|i| i as f64 / 1000.0).collect();
        let report = LatencyReport::from_latencies(latencies, 5.0).unwrap();
        assert_eq!(report.median_s, 0.050);
        assert_eq!(report.p95_s, 0.095);
        assert_eq!(report.p99_s, 0.099);
    }

    #[test]
    fn report_round_trips_losslessly() {
        let report =
            LatencyReport::from_latencies(vec![0.0012345678901234, 0.05, 0.007777777777], 5.0)
                .unwrap();
        let mut bytes = Vec::new();
        report.write_to(&mut bytes).unwrap();
        let back = LatencyReport::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(report, back);

        assert!(LatencyReport::read_from(&mut &b"garbage"[..]).is_err());
    }

    #[test]
    fn too_few_runs_is_an_argument_error() {
        let samples = vec![Window::new(1, 1, vec![0.0]).unwrap()];
        assert!(bench_inference(|_| (), &samples, BenchBudget::Count(99), 5.0).is_err());
    }

    #[test]
    fn timing_overhead_is_small() {
        // No-op target: the measured mean is pure instrumentation overhead,
        // which must stay under 1% of a 1 ms inference.
        let samples = vec![Window::new(1, 1, vec![0.0]).unwrap()];
        let report = bench_inference(|_| (), &samples, BenchBudget::Count(1000), 5.0).unwrap();
        assert!(report.mean_s < 10e-6, "overhead {}s", report.mean_s);
    }

    #[test]
    fn benchmark_outputs_bitmatch_plain_forward() {
        let dims = Dims { n_classes: 3, ..Dims::synth_default() };
        let model: Model<f32> =
            Model::new(Variant::Leaky, dims, &PopulationSet::defaults(Variant::Leaky), 3).unwrap();
        let samples: Vec<Window<f32>> = crate::data::synth_dataset(3, 2, 4)
            .unwrap()
            .into_iter()
            .map(|s| s.window)
            .collect();
        let mut outputs = Vec::new();
        bench_inference(
            |w| outputs.push(forward(&model, w).unwrap()),
            &samples,
            BenchBudget::Count(100),
            5.0,
        )
        .unwrap();
        for (i, logits) in outputs.iter().enumerate() {
            let plain = forward(&model, &samples[i % samples.len()]).unwrap();
            assert_eq!(logits, &plain);
        }
    }

    #[test]
    fn edp_matches_reference_points() {
        let a = energy_delay_product(153.9, 0.03).unwrap();
        assert_eq!(format!("{a:.1}"), "4.6");
        let b = energy_delay_product(727.5, 0.15).unwrap();
        assert_eq!(format!("{b:.1}"), "109.1");
        assert_eq!(energy_delay_product(1.0, 1.0).unwrap(), 1.0);
        assert!(energy_delay_product(0.0, 1.0).is_err());
        assert!(energy_delay_product(1.0, -0.1).is_err());
    }

    #[test]
    fn summary_record_omits_absent_fields() {
        let dims = Dims { n_classes: 3, ..Dims::synth_default() };
        let model: Model<f32> =
            Model::new(Variant::Leaky, dims, &PopulationSet::defaults(Variant::Leaky), 5).unwrap();
        let report = LatencyReport::from_latencies(vec![0.01; 4], 5.0).unwrap();

        let bare = report_summary(&model, None, None, None, &report, None).unwrap();
        assert!(!bare.to_csv().contains("edp_mj_s"));
        assert!(!bare.to_csv().contains("accuracy"));

        let full =
            report_summary(&model, None, Some(0.93), Some(12345), &report, Some(153.9)).unwrap();
        let csv = full.to_csv();
        assert!(csv.contains("accuracy"));
        assert!(csv.contains("synops_per_sample"));
        assert!(csv.contains("edp_mj_s"));
        assert_eq!(csv.lines().count(), 2);
        let header_cols = csv.lines().next().unwrap().split(',').count();
        let value_cols = csv.lines().nth(1).unwrap().split(',').count();
        assert_eq!(header_cols, value_cols);

        // Deterministic for fixed inputs.
        let again =
            report_summary(&model, None, Some(0.93), Some(12345), &report, Some(153.9)).unwrap();
        assert_eq!(full, again);
    }
}
