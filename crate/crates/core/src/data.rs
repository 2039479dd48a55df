//! Dataset handling: raw smartwatch IMU file ingestion, window segmentation,
//! deterministic splits, a synthetic desk-scale task, and the packed binary
//! dataset cache.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure_arg, Error, Result};
use crate::l2mu::Window;

/// Timesteps per window (2 s at 20 Hz).
pub const WINDOW_STEPS: usize = 40;
/// Input channels: accelerometer x,y,z then gyroscope x,y,z.
pub const CHANNELS: usize = 6;

/// Activity letter codes of the hand-oriented general tasks, the default
/// class whitelist (typing, brushing teeth, playing catch, dribbling,
/// writing, clapping, folding clothes).
pub const DEFAULT_WHITELIST: [char; 7] = ['F', 'G', 'O', 'P', 'Q', 'R', 'S'];

/// One line of a raw sensor file.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecord {
    pub subject: u32,
    pub activity: char,
    pub timestamp: i64,
    pub x: f32,
    pub y: f32,
    pub z: f32,
}

/// A labelled 40×6 window.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub window: Window<f32>,
    pub label: u8,
    pub subject: u32,
}

/// Outcome of parsing one raw file; malformed lines are skipped and counted
/// so the caller can warn.
#[derive(Debug)]
pub struct RawParse {
    pub records: Vec<RawRecord>,
    pub malformed: usize,
}

/// Parses a raw sensor file of `subject,activity,timestamp,x,y,z;` lines
/// (trailing semicolon tolerated). Malformed lines are skipped, but more
/// than 10% of them is a format error. `expected_sensor` only labels error
/// messages ("accel" / "gyro").
pub fn parse_raw_file(path: &Path, expected_sensor: &str) -> Result<RawParse> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut malformed = 0usize;
    let mut total = 0usize;
    for line in reader.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        total += 1;
        match parse_line(line) {
            Some(record) => records.push(record),
            None => malformed += 1,
        }
    }
    if total > 0 && malformed * 10 > total {
        return Err(Error::format(format!(
            "{} file {}: {malformed} of {total} lines malformed",
            expected_sensor,
            path.display()
        )));
    }
    Ok(RawParse { records, malformed })
}

fn parse_line(line: &str) -> Option<RawRecord> {
    let line = line.strip_suffix(';').unwrap_or(line);
    let mut fields = line.split(',');
    let subject = fields.next()?.trim().parse().ok()?;
    let activity_field = fields.next()?.trim();
    let mut chars = activity_field.chars();
    let activity = chars.next()?;
    if chars.next().is_some() || !activity.is_ascii_alphabetic() {
        return None;
    }
    let timestamp = fields.next()?.trim().parse().ok()?;
    let x: f32 = fields.next()?.trim().parse().ok()?;
    let y: f32 = fields.next()?.trim().parse().ok()?;
    let z: f32 = fields.next()?.trim().parse().ok()?;
    if fields.next().is_some() || !(x.is_finite() && y.is_finite() && z.is_finite()) {
        return None;
    }
    Some(RawRecord { subject, activity, timestamp, x, y, z })
}

/// Aligns accelerometer and gyroscope streams by sample index per
/// (subject, activity) pair, cuts consecutive non-overlapping windows of
/// [`WINDOW_STEPS`] steps, and labels them by whitelist position. Windows
/// never span subject or activity boundaries; output order is canonical
/// (subject, activity, window index).
pub fn make_windows(
    accel: &[RawRecord],
    gyro: &[RawRecord],
    whitelist: &[char],
) -> Result<Vec<Sample>> {
    ensure_arg!(!whitelist.is_empty(), "class whitelist must not be empty");
    ensure_arg!(whitelist.len() <= 256, "whitelist too large");

    let label_of = |activity: char| -> Option<u8> {
        whitelist.iter().position(|&c| c == activity).map(|i| i as u8)
    };
    type Stream = BTreeMap<(u32, char), Vec<(f32, f32, f32)>>;
    let group = |records: &[RawRecord]| {
        let mut map = Stream::new();
        for r in records {
            if label_of(r.activity).is_some() {
                map.entry((r.subject, r.activity)).or_default().push((r.x, r.y, r.z));
            }
        }
        map
    };
    let accel_groups = group(accel);
    let gyro_groups = group(gyro);

    let mut samples = Vec::new();
    for ((subject, activity), a) in &accel_groups {
        let Some(g) = gyro_groups.get(&(*subject, *activity)) else { continue };
        let aligned = a.len().min(g.len());
        let label = label_of(*activity).expect("grouped records are whitelisted");
        for w in 0..aligned / WINDOW_STEPS {
            let mut data = Vec::with_capacity(WINDOW_STEPS * CHANNELS);
            for t in 0..WINDOW_STEPS {
                let (ax, ay, az) = a[w * WINDOW_STEPS + t];
                let (gx, gy, gz) = g[w * WINDOW_STEPS + t];
                data.extend_from_slice(&[ax, ay, az, gx, gy, gz]);
            }
            samples.push(Sample {
                window: Window::new(WINDOW_STEPS, CHANNELS, data)?,
                label,
                subject: *subject,
            });
        }
    }
    Ok(samples)
}

/// Seeded shuffle followed by a contiguous cut into train/validation/test.
pub fn split(
    samples: &[Sample],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<Sample>, Vec<Sample>, Vec<Sample>)> {
    let (f_train, f_val, f_test) = fractions;
    ensure_arg!(
        (f_train + f_val + f_test - 1.0).abs() < 1e-9,
        "split fractions must sum to 1"
    );
    ensure_arg!(f_train > 0.0 && f_val > 0.0 && f_test > 0.0, "split fractions must be positive");
    ensure_arg!(samples.len() >= 3, "need at least 3 samples to split, got {}", samples.len());

    let n = samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    shuffle(&mut order, &mut ChaCha8Rng::seed_from_u64(seed));

    let n_train = ((n as f64 * f_train).round() as usize).clamp(1, n - 2);
    let n_val = ((n as f64 * f_val).round() as usize).clamp(1, n - n_train - 1);
    let take = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    Ok((
        take(&order[..n_train]),
        take(&order[n_train..n_train + n_val]),
        take(&order[n_train + n_val..]),
    ))
}

/// Leakage-aware alternative: whole subjects are assigned to one split each,
/// greedily filling train then validation by sample count.
pub fn split_by_subject(
    samples: &[Sample],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<Sample>, Vec<Sample>, Vec<Sample>)> {
    let (f_train, f_val, f_test) = fractions;
    ensure_arg!(
        (f_train + f_val + f_test - 1.0).abs() < 1e-9,
        "split fractions must sum to 1"
    );
    let mut subjects: Vec<u32> = samples.iter().map(|s| s.subject).collect();
    subjects.sort_unstable();
    subjects.dedup();
    ensure_arg!(subjects.len() >= 3, "need at least 3 subjects, got {}", subjects.len());
    shuffle(&mut subjects, &mut ChaCha8Rng::seed_from_u64(seed));

    let count_of = |subject: u32| samples.iter().filter(|s| s.subject == subject).count();
    let n = samples.len() as f64;
    let (mut train_subj, mut val_subj, mut test_subj) = (Vec::new(), Vec::new(), Vec::new());
    let mut assigned = 0usize;
    for &subject in &subjects {
        let c = count_of(subject);
        if (assigned as f64) < f_train * n {
            train_subj.push(subject);
        } else if (assigned as f64) < (f_train + f_val) * n {
            val_subj.push(subject);
        } else {
            test_subj.push(subject);
        }
        assigned += c;
    }
    let take = |subj: &[u32]| {
        samples.iter().filter(|s| subj.contains(&s.subject)).cloned().collect::<Vec<_>>()
    };
    Ok((take(&train_subj), take(&val_subj), take(&test_subj)))
}

fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    // Fisher-Yates, spelled out so the byte-identical-across-versions
    // determinism contract depends only on ChaCha output.
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Synthetic desk-scale task: class k is a 6-channel sinusoid at k+1 cycles
/// per window with per-sample random phases and additive Gaussian noise at
/// ≈10 dB SNR. Balanced labels, deterministic per seed.
pub fn synth_dataset(n_classes: usize, n_per_class: usize, seed: u64) -> Result<Vec<Sample>> {
    ensure_arg!(
        (1..=7).contains(&n_classes),
        "n_classes must lie in 1..=7, got {n_classes}"
    );
    ensure_arg!(n_per_class >= 1, "n_per_class must be >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Unit-amplitude sine has power 0.5; 10 dB SNR puts noise power at 0.05.
    let sigma = 0.05_f64.sqrt();
    let mut samples = Vec::with_capacity(n_classes * n_per_class);
    for class in 0..n_classes {
        // Odd harmonics 1, 3, 5, ... keep classes well apart in frequency
        // while staying below the Nyquist bin.
        let cycles = (2 * class + 1) as f64;
        for i in 0..n_per_class {
            let phases: Vec<f64> =
                (0..CHANNELS).map(|_| rng.gen::<f64>() * std::f64::consts::TAU).collect();
            let mut data = Vec::with_capacity(WINDOW_STEPS * CHANNELS);
            for t in 0..WINDOW_STEPS {
                for (c, phase) in phases.iter().enumerate() {
                    let _ = c;
                    let angle = std::f64::consts::TAU * cycles * t as f64 / WINDOW_STEPS as f64;
                    let value = (angle + phase).sin() + sigma * gaussian(&mut rng);
                    data.push(value as f32);
                }
            }
            samples.push(Sample {
                window: Window::new(WINDOW_STEPS, CHANNELS, data)?,
                label: class as u8,
                subject: (10_000 + class * n_per_class + i) as u32,
            });
        }
    }
    Ok(samples)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; keeps the sample stream a pure function of the ChaCha state.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Optional per-channel affine standardization ((x − μ)/σ over the whole
/// set), applied when a cache is prepared with `normalize_input` on. The
/// default pipeline consumes raw values. Returns the per-channel (μ, σ).
pub fn standardize(samples: &mut [Sample]) -> Vec<(f32, f32)> {
    let mut stats = Vec::with_capacity(CHANNELS);
    for c in 0..CHANNELS {
        let mut sum = 0.0_f64;
        let mut count = 0usize;
        for s in samples.iter() {
            for t in 0..s.window.steps() {
                sum += s.window.row(t)[c] as f64;
                count += 1;
            }
        }
        let mean = sum / count.max(1) as f64;
        let mut var = 0.0_f64;
        for s in samples.iter() {
            for t in 0..s.window.steps() {
                let v = s.window.row(t)[c] as f64 - mean;
                var += v * v;
            }
        }
        let std = (var / count.max(1) as f64).sqrt().max(1e-9);
        stats.push((mean as f32, std as f32));
    }
    for s in samples.iter_mut() {
        let (steps, channels) = (s.window.steps(), s.window.channels());
        let mut data = s.window.data().to_vec();
        for t in 0..steps {
            for (c, &(mean, std)) in stats.iter().enumerate() {
                let v = &mut data[t * channels + c];
                *v = (*v - mean) / std;
            }
        }
        s.window = Window::new(steps, channels, data).expect("shape unchanged");
    }
    stats
}

const CACHE_MAGIC: &[u8; 4] = b"L2MD";
const CACHE_VERSION: u16 = 1;

/// Writes the packed dataset cache: magic `L2MD`, version u16, sample count
/// u32, T u16, C u16, then per sample a label byte and T×C little-endian
/// f32 values row-major. Subject ids are not part of the format.
pub fn write_cache(path: &Path, samples: &[Sample]) -> Result<()> {
    ensure_arg!(!samples.is_empty(), "refusing to write an empty dataset cache");
    ensure_arg!(samples.len() <= u32::MAX as usize, "too many samples for the cache format");
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(CACHE_MAGIC)?;
    out.write_all(&CACHE_VERSION.to_le_bytes())?;
    out.write_all(&(samples.len() as u32).to_le_bytes())?;
    out.write_all(&(WINDOW_STEPS as u16).to_le_bytes())?;
    out.write_all(&(CHANNELS as u16).to_le_bytes())?;
    for sample in samples {
        out.write_all(&[sample.label])?;
        for v in sample.window.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a dataset cache written by [`write_cache`]. Subjects are not stored
/// in the format and come back as 0.
pub fn read_cache(path: &Path) -> Result<Vec<Sample>> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut reader, &mut magic, "magic")?;
    if &magic != CACHE_MAGIC {
        return Err(Error::format(format!("bad cache magic {magic:?}, expected L2MD")));
    }
    let version = read_u16(&mut reader, "version")?;
    if version != CACHE_VERSION {
        return Err(Error::format(format!(
            "unsupported cache version {version}, expected {CACHE_VERSION}"
        )));
    }
    let count = read_u32(&mut reader, "sample count")? as usize;
    let steps = read_u16(&mut reader, "window steps")? as usize;
    let channels = read_u16(&mut reader, "channel count")? as usize;
    if steps != WINDOW_STEPS || channels != CHANNELS {
        return Err(Error::format(format!(
            "cache geometry {steps}×{channels} does not match expected {WINDOW_STEPS}×{CHANNELS}"
        )));
    }
    // Grown as data actually arrives; the count field is untrusted input.
    let mut samples = Vec::new();
    for i in 0..count {
        let mut label = [0u8; 1];
        read_exact(&mut reader, &mut label, "sample label")?;
        let mut data = Vec::with_capacity(steps * channels);
        let mut buf = [0u8; 4];
        for _ in 0..steps * channels {
            read_exact(&mut reader, &mut buf, "sample values")?;
            data.push(f32::from_le_bytes(buf));
        }
        samples.push(Sample {
            window: Window::new(steps, channels, data)
                .map_err(|e| Error::format(format!("sample {i}: {e}")))?,
            label: label[0],
            subject: 0,
        });
    }
    let mut rest = [0u8; 1];
    if reader.read(&mut rest)? != 0 {
        return Err(Error::format("trailing bytes after the last sample".to_string()));
    }
    Ok(samples)
}

fn read_exact(reader: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    reader
        .read_exact(buf)
        .map_err(|_| Error::format(format!("cache truncated while reading {what}")))
}

fn read_u16(reader: &mut impl Read, what: &str) -> Result<u16> {
    let mut buf = [0u8; 2];
    read_exact(reader, &mut buf, what)?;
    Ok(u16::from_le_bytes(buf))
}

fn read_u32(reader: &mut impl Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(reader, &mut buf, what)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(subject: u32, activity: char, t: i64, v: f32) -> RawRecord {
        RawRecord { subject, activity, timestamp: t, x: v, y: v + 1.0, z: v + 2.0 }
    }

    #[test]
    fn parses_a_public_format_line() {
        let r = parse_line("1600,A,252207666810782,-0.36476135,8.793503,1.0550842;").unwrap();
        assert_eq!(r.subject, 1600);
        assert_eq!(r.activity, 'A');
        assert_eq!(r.timestamp, 252207666810782);
        assert!((r.z - 1.0550842).abs() < 1e-6);
        // Missing field or junk is rejected, not fatal.
        assert!(parse_line("1600,A,252207666810782,-0.36476135,8.793503").is_none());
        assert!(parse_line("1600,AB,1,0,0,0;").is_none());
        assert!(parse_line("").is_none());
    }

    #[test]
    fn parse_raw_file_counts_malformed_and_caps_them() {
        let dir = tempfile::tempdir().unwrap();
        let ok_path = dir.path().join("ok.txt");
        let mut content = String::from("broken line\n");
        for t in 0..19 {
            content.push_str(&format!("1,F,{t},0.1,0.2,0.3;\n"));
        }
        std::fs::write(&ok_path, content).unwrap();
        let parsed = parse_raw_file(&ok_path, "accel").unwrap();
        assert_eq!(parsed.records.len(), 19);
        assert_eq!(parsed.malformed, 1);

        let bad_path = dir.path().join("bad.txt");
        std::fs::write(&bad_path, "junk\njunk\njunk\n1,F,10,0.1,0.2,0.3;\n").unwrap();
        assert!(matches!(parse_raw_file(&bad_path, "accel"), Err(Error::Format(_))));

        let empty_path = dir.path().join("empty.txt");
        std::fs::write(&empty_path, "").unwrap();
        let parsed = parse_raw_file(&empty_path, "gyro").unwrap();
        assert!(parsed.records.is_empty());

        assert!(matches!(
            parse_raw_file(Path::new("/nonexistent/raw.txt"), "accel"),
            Err(Error::Io(_))
        ));
    }

    #[test]
    fn windows_floor_and_truncate() {
        let accel: Vec<RawRecord> = (0..100).map(|t| record(1, 'F', t, t as f32)).collect();
        let gyro: Vec<RawRecord> = (0..100).map(|t| record(1, 'F', t, -(t as f32))).collect();
        let samples = make_windows(&accel, &gyro, &['F']).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0].label, 0);
        // accel 85 vs gyro 90 aligns at 85 → still 2 windows.
        let samples =
            make_windows(&accel[..85], &gyro[..90], &['F']).unwrap();
        assert_eq!(samples.len(), 2);
        // Channel layout: accel xyz then gyro xyz.
        let row = samples[0].window.row(0);
        assert_eq!(row, &[0.0, 1.0, 2.0, -0.0, 1.0, 2.0]);
    }

    #[test]
    fn windows_respect_subject_activity_boundaries_and_whitelist() {
        let mut accel = Vec::new();
        let mut gyro = Vec::new();
        for subject in [1u32, 2] {
            for activity in ['F', 'G', 'X'] {
                for t in 0..60 {
                    accel.push(record(subject, activity, t, t as f32));
                    gyro.push(record(subject, activity, t, t as f32));
                }
            }
        }
        let samples = make_windows(&accel, &gyro, &['F', 'G']).unwrap();
        // 2 subjects × 2 whitelisted activities × floor(60/40) windows.
        assert_eq!(samples.len(), 4);
        assert!(samples.iter().all(|s| s.label <= 1));
        // Canonical ordering by (subject, activity).
        let keys: Vec<(u32, u8)> = samples.iter().map(|s| (s.subject, s.label)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert!(make_windows(&accel, &gyro, &[]).is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let samples = synth_dataset(2, 5, 3).unwrap();
        let (train, val, test) = split(&samples, (0.6, 0.2, 0.2), 7).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (6, 2, 2));

        let again = split(&samples, (0.6, 0.2, 0.2), 7).unwrap();
        assert_eq!(train, again.0);
        assert_eq!(val, again.1);
        assert_eq!(test, again.2);

        // At n=1000, two seeds agreeing on the whole partition is negligible.
        let big = synth_dataset(2, 500, 3).unwrap();
        let one = split(&big, (0.6, 0.2, 0.2), 8).unwrap();
        let two = split(&big, (0.6, 0.2, 0.2), 9).unwrap();
        assert_ne!(one.0, two.0);

        assert!(split(&samples[..2], (0.6, 0.2, 0.2), 7).is_err());
        assert!(split(&samples, (0.5, 0.2, 0.2), 7).is_err());
    }

    #[test]
    fn split_partitions_are_disjoint_and_exhaustive() {
        let samples = synth_dataset(3, 40, 11).unwrap();
        let (train, val, test) = split(&samples, (0.6, 0.2, 0.2), 13).unwrap();
        assert_eq!(train.len() + val.len() + test.len(), samples.len());
        let key = |s: &Sample| s.subject; // unique per synth sample
        let mut seen: Vec<u32> = train.iter().chain(&val).chain(&test).map(key).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), samples.len());
    }

    #[test]
    fn subject_split_keeps_subjects_whole() {
        let mut samples = Vec::new();
        for subject in 0..10u32 {
            for i in 0..20 {
                let mut s = synth_dataset(1, 1, u64::from(subject) * 100 + i).unwrap().remove(0);
                s.subject = subject;
                samples.push(s);
            }
        }
        let (train, val, test) = split_by_subject(&samples, (0.6, 0.2, 0.2), 3).unwrap();
        assert_eq!(train.len() + val.len() + test.len(), samples.len());
        let subjects = |part: &[Sample]| {
            let mut s: Vec<u32> = part.iter().map(|x| x.subject).collect();
            s.sort_unstable();
            s.dedup();
            s
        };
        let (a, b, c) = (subjects(&train), subjects(&val), subjects(&test));
        assert!(a.iter().all(|s| !b.contains(s) && !c.contains(s)));
        assert!(b.iter().all(|s| !c.contains(s)));
    }

    #[test]
    fn synth_is_deterministic_and_balanced() {
        let a = synth_dataset(3, 10, 42).unwrap();
        let b = synth_dataset(3, 10, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 30);
        for class in 0..3u8 {
            assert_eq!(a.iter().filter(|s| s.label == class).count(), 10);
        }
        assert_ne!(a, synth_dataset(3, 10, 43).unwrap());
    }

    #[test]
    fn synth_classes_have_distinct_dominant_frequencies() {
        // DFT oracle: the class-mean magnitude spectrum peaks at a different
        // bin for every class.
        let samples = synth_dataset(3, 60, 9).unwrap();
        let mut dominant = Vec::new();
        for class in 0..3u8 {
            let mut mean_mag = [0.0_f64; WINDOW_STEPS / 2];
            for s in samples.iter().filter(|s| s.label == class) {
                #[allow(clippy::needless_range_loop)]
                for bin in 1..WINDOW_STEPS / 2 {
                    let (mut re, mut im) = (0.0_f64, 0.0_f64);
                    for t in 0..WINDOW_STEPS {
                        // Channel 0 carries the class frequency like all others.
                        let v = s.window.row(t)[0] as f64;
                        let ang = std::f64::consts::TAU * bin as f64 * t as f64
                            / WINDOW_STEPS as f64;
                        re += v * ang.cos();
                        im -= v * ang.sin();
                    }
                    mean_mag[bin] += (re * re + im * im).sqrt();
                }
            }
            let peak = (1..WINDOW_STEPS / 2)
                .max_by(|&a, &b| mean_mag[a].partial_cmp(&mean_mag[b]).unwrap())
                .unwrap();
            dominant.push(peak);
        }
        assert_eq!(dominant, vec![1, 3, 5]);
    }

    #[test]
    fn rate_features_separate_classes_linearly() {
        // Baseline oracle: multinomial logistic regression on per-channel
        // mean |x| and mean |Δx| must reach 95%, so the task is learnable
        // from rate-like statistics.
        let samples = synth_dataset(3, 100, 17).unwrap();
        let mut features: Vec<Vec<f64>> = samples.iter().map(rate_features).collect();
        let labels: Vec<usize> = samples.iter().map(|s| s.label as usize).collect();

        let n_feat = features[0].len();
        // Standardize features so plain gradient descent converges quickly.
        for j in 0..n_feat {
            let mean = features.iter().map(|f| f[j]).sum::<f64>() / features.len() as f64;
            let var = features.iter().map(|f| (f[j] - mean) * (f[j] - mean)).sum::<f64>()
                / features.len() as f64;
            let std = var.sqrt().max(1e-9);
            for f in &mut features {
                f[j] = (f[j] - mean) / std;
            }
        }
        let mut w = vec![vec![0.0_f64; n_feat + 1]; 3];
        for _ in 0..400 {
            let mut grad = vec![vec![0.0_f64; n_feat + 1]; 3];
            for (f, &y) in features.iter().zip(&labels) {
                let scores: Vec<f64> = w
                    .iter()
                    .map(|wk| {
                        wk[n_feat] + f.iter().zip(wk.iter()).map(|(a, b)| a * b).sum::<f64>()
                    })
                    .collect();
                let max = scores.iter().cloned().fold(f64::MIN, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                for k in 0..3 {
                    let p = exps[k] / z - if k == y { 1.0 } else { 0.0 };
                    for (g, x) in grad[k].iter_mut().zip(f.iter()) {
                        *g += p * x;
                    }
                    grad[k][n_feat] += p;
                }
            }
            for (wk, gk) in w.iter_mut().zip(&grad) {
                for (wv, gv) in wk.iter_mut().zip(gk) {
                    *wv -= 0.5 * gv / samples.len() as f64;
                }
            }
        }
        let mut correct = 0;
        for (f, &y) in features.iter().zip(&labels) {
            let scores: Vec<f64> = w
                .iter()
                .map(|wk| wk[n_feat] + f.iter().zip(wk.iter()).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let pred = (0..3)
                .max_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap())
                .unwrap();
            if pred == y {
                correct += 1;
            }
        }
        let acc = correct as f64 / samples.len() as f64;
        assert!(acc >= 0.95, "logistic baseline accuracy {acc}");
    }

    fn rate_features(s: &Sample) -> Vec<f64> {
        let mut f = Vec::with_capacity(CHANNELS * 2);
        for c in 0..CHANNELS {
            let series: Vec<f64> =
                (0..WINDOW_STEPS).map(|t| s.window.row(t)[c] as f64).collect();
            let mean_abs = series.iter().map(|v| v.abs()).sum::<f64>() / series.len() as f64;
            let mean_delta = series
                .windows(2)
                .map(|p| (p[1] - p[0]).abs())
                .sum::<f64>()
                / (series.len() - 1) as f64;
            f.push(mean_abs);
            f.push(mean_delta);
        }
        f
    }

    #[test]
    fn cache_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.l2md");
        let samples = synth_dataset(3, 4, 5).unwrap();
        write_cache(&path, &samples).unwrap();
        let loaded = read_cache(&path).unwrap();
        assert_eq!(loaded.len(), samples.len());
        for (a, b) in loaded.iter().zip(&samples) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.window.data(), b.window.data());
        }
        // Byte-identical rewrite.
        let path2 = dir.path().join("data2.l2md");
        write_cache(&path2, &loaded).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn cache_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.l2md");
        let samples = synth_dataset(2, 2, 6).unwrap();
        write_cache(&path, &samples).unwrap();

        let bytes = std::fs::read(&path).unwrap();
        let truncated = dir.path().join("trunc.l2md");
        std::fs::write(&truncated, &bytes[..bytes.len() - 7]).unwrap();
        assert!(matches!(read_cache(&truncated), Err(Error::Format(_))));

        let mut magic = bytes.clone();
        magic[0] = b'X';
        let bad_magic = dir.path().join("magic.l2md");
        std::fs::write(&bad_magic, &magic).unwrap();
        assert!(matches!(read_cache(&bad_magic), Err(Error::Format(_))));

        let padded = dir.path().join("padded.l2md");
        let mut extra = bytes;
        extra.push(0);
        std::fs::write(&padded, &extra).unwrap();
        assert!(matches!(read_cache(&padded), Err(Error::Format(_))));
    }

    #[test]
    fn cache_corruption_never_panics() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.l2md");
        write_cache(&path, &synth_dataset(2, 1, 8).unwrap()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let probe = dir.path().join("probe.l2md");
        // Every truncation length in the header region plus a stride through
        // the payload, and every header byte flipped.
        for cut in (0..bytes.len()).step_by(7).chain(0..16.min(bytes.len())) {
            std::fs::write(&probe, &bytes[..cut]).unwrap();
            let _ = read_cache(&probe);
        }
        for i in 0..bytes.len().min(64) {
            let mut mutated = bytes.clone();
            mutated[i] ^= 0xA5;
            std::fs::write(&probe, &mutated).unwrap();
            let _ = read_cache(&probe);
        }
    }
}
