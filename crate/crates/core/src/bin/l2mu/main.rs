//! Command-line surface: dataset preparation, training, pruning and
//! fine-tuning, evaluation, benchmarking, reporting, and the two built-in
//! numeric checks. Every subcommand is deterministic given config, seed and
//! inputs. Exit codes: 0 success, 1 argument error, 2 I/O or format error.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use l2mu::bench::{bench_inference, report_summary, BenchBudget};
use l2mu::checkpoint::{load_checkpoint, save_checkpoint};
use l2mu::compress::{count_effective_synops, count_nonzero_params, fine_tune, global_magnitude_prune};
use l2mu::config::{self, Config};
use l2mu::data::{
    self, make_windows, parse_raw_file, read_cache, split, split_by_subject, synth_dataset,
    write_cache, RawRecord, Sample,
};
use l2mu::grad::finite_difference_check;
use l2mu::l2mu::{forward, Dims, Model, PopulationSet, Variant, Window};
use l2mu::lmu_math::delay_property_nrmse;
use l2mu::train::{evaluate, train_model, Confusion};
use l2mu::{Error, Result};

const USAGE: &str = "\
l2mu — spiking Legendre-memory network runtime

USAGE:
    l2mu <command> [flags]

COMMANDS:
    synth      generate a synthetic dataset cache
                 --out PATH [--classes N] [--per-class N]
    prepare    build a dataset cache from raw sensor files
                 --accel PATH --gyro PATH --out PATH  (PATH = file or directory)
    train      train a model and save a checkpoint
                 --data CACHE --out CKPT [--log PATH]
                 (or --train-data/--val-data/--test-data CACHE)
    prune      apply global magnitude pruning to a checkpoint
                 --checkpoint CKPT --out CKPT [--sparsity S]
    finetune   retrain a pruned checkpoint with its mask pinned
                 --checkpoint CKPT --data CACHE --out CKPT [--log PATH]
    eval       evaluate a checkpoint on a dataset split
                 --checkpoint CKPT --data CACHE [--split train|val|test|all]
    bench      measure single-sample inference latency
                 --checkpoint CKPT --data CACHE [--count N | --seconds S] [--hist PATH]
    report     emit a CSV metrics record
                 --checkpoint CKPT [--data CACHE] [--count N] [--energy-mj E] [--out PATH]
    gradcheck  finite-difference check of the gradient engine
                 [--epsilon E] [--samples N]
    lmucheck   delay-reconstruction check of the memory math
                 [--d N] [--substeps K]

GLOBAL FLAGS:
    --config PATH     flat key = value configuration file
    --seed N          seed for weights, shuffling and splits
    --variant V       leaky | synaptic
    --threads N       worker cap (results do not depend on it)
";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if matches!(err, Error::Argument(_)) {
                eprintln!("\n{USAGE}");
            }
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

struct Cli {
    flags: BTreeMap<String, String>,
}

impl Cli {
    fn get(&self, name: &str) -> Option<&str> {
        self.flags.get(name).map(|s| s.as_str())
    }

    fn required(&self, name: &str) -> Result<&str> {
        self.get(name).ok_or_else(|| Error::arg(format!("missing required flag --{name}")))
    }

    fn parsed<T: std::str::FromStr>(&self, name: &str) -> Result<Option<T>> {
        match self.get(name) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::arg(format!("flag --{name}: cannot parse '{v}'"))),
        }
    }

    fn config(&self) -> Result<Config> {
        let variant = match self.get("variant") {
            Some(v) => Some(Variant::parse(v)?),
            None => None,
        };
        let seed = self.parsed::<u64>("seed")?;
        let threads = self.parsed::<usize>("threads")?;
        config::load(self.get("config").map(Path::new), variant, seed, threads)
    }
}

const GLOBAL_FLAGS: [&str; 4] = ["config", "seed", "variant", "threads"];

fn parse_args(args: &[String], allowed: &[&str]) -> Result<Cli> {
    let mut flags = BTreeMap::new();
    let mut i = 1; // args[0] is the subcommand
    while i < args.len() {
        let arg = &args[i];
        let Some(name) = arg.strip_prefix("--") else {
            return Err(Error::arg(format!("unexpected argument '{arg}'")));
        };
        if !allowed.contains(&name) && !GLOBAL_FLAGS.contains(&name) {
            return Err(Error::arg(format!("unknown flag --{name}")));
        }
        let value = args
            .get(i + 1)
            .ok_or_else(|| Error::arg(format!("flag --{name} needs a value")))?;
        flags.insert(name.to_string(), value.clone());
        i += 2;
    }
    Ok(Cli { flags })
}

fn run(args: &[String]) -> Result<()> {
    let Some(command) = args.first() else {
        return Err(Error::arg("no command given"));
    };
    match command.as_str() {
        "help" | "--help" | "-h" => {
            println!("{USAGE}");
            Ok(())
        }
        "synth" => cmd_synth(&parse_args(args, &["out", "classes", "per-class"])?),
        "prepare" => cmd_prepare(&parse_args(args, &["accel", "gyro", "out"])?),
        "train" => cmd_train(&parse_args(
            args,
            &["data", "train-data", "val-data", "test-data", "out", "log"],
        )?),
        "prune" => cmd_prune(&parse_args(args, &["checkpoint", "out", "sparsity"])?),
        "finetune" => cmd_finetune(&parse_args(
            args,
            &["checkpoint", "data", "train-data", "val-data", "test-data", "out", "log"],
        )?),
        "eval" => cmd_eval(&parse_args(args, &["checkpoint", "data", "split"])?),
        "bench" => cmd_bench(&parse_args(
            args,
            &["checkpoint", "data", "count", "seconds", "hist"],
        )?),
        "report" => cmd_report(&parse_args(
            args,
            &["checkpoint", "data", "count", "energy-mj", "out"],
        )?),
        "gradcheck" => cmd_gradcheck(&parse_args(args, &["epsilon", "samples"])?),
        "lmucheck" => cmd_lmucheck(&parse_args(args, &["d", "substeps", "steps"])?),
        other => Err(Error::arg(format!("unknown command '{other}'"))),
    }
}

fn cmd_synth(cli: &Cli) -> Result<()> {
    let config = cli.config()?;
    let out = PathBuf::from(cli.required("out")?);
    let classes = cli.parsed::<usize>("classes")?.unwrap_or(config.synth_classes);
    let per_class = cli.parsed::<usize>("per-class")?.unwrap_or(config.synth_per_class);
    let mut samples = synth_dataset(classes, per_class, config.train.seed)?;
    if config.normalize_input {
        data::standardize(&mut samples);
    }
    write_cache(&out, &samples)?;
    println!("samples={} classes={classes} out={}", samples.len(), out.display());
    Ok(())
}

fn read_raw_inputs(path: &Path, sensor: &str) -> Result<Vec<RawRecord>> {
    let mut files = Vec::new();
    if path.is_dir() {
        for entry in std::fs::read_dir(path)? {
            let p = entry?.path();
            if p.is_file() {
                files.push(p);
            }
        }
        files.sort();
        if files.is_empty() {
            return Err(Error::arg(format!("{sensor} directory {} is empty", path.display())));
        }
    } else {
        files.push(path.to_path_buf());
    }
    let mut records = Vec::new();
    for file in files {
        let parsed = parse_raw_file(&file, sensor)?;
        if parsed.malformed > 0 {
            eprintln!(
                "warning: {sensor} file {}: skipped {} malformed lines",
                file.display(),
                parsed.malformed
            );
        }
        records.extend(parsed.records);
    }
    Ok(records)
}

fn cmd_prepare(cli: &Cli) -> Result<()> {
    let config = cli.config()?;
    let accel = read_raw_inputs(Path::new(cli.required("accel")?), "accel")?;
    let gyro = read_raw_inputs(Path::new(cli.required("gyro")?), "gyro")?;
    let out = PathBuf::from(cli.required("out")?);
    let mut samples = make_windows(&accel, &gyro, &config.whitelist)?;
    if samples.is_empty() {
        return Err(Error::format("no windows produced; check whitelist and inputs".to_string()));
    }
    if config.normalize_input {
        data::standardize(&mut samples);
    }
    println!("samples={}", samples.len());
    if config.whitelist == data::DEFAULT_WHITELIST {
        let reference = 36_201.0;
        let deviation = 100.0 * (samples.len() as f64 - reference) / reference;
        println!("reference_samples=36201 deviation_pct={deviation:+.2}");
    }
    if config.split_by_subject {
        let (train, val, test) = split_by_subject(&samples, (0.6, 0.2, 0.2), config.train.seed)?;
        for (part, name) in [(&train, "train"), (&val, "val"), (&test, "test")] {
            let path = out.with_extension(format!("{name}.l2md"));
            write_cache(&path, part)?;
            println!("{name}_samples={} out={}", part.len(), path.display());
        }
    } else {
        write_cache(&out, &samples)?;
        println!("out={}", out.display());
    }
    Ok(())
}

fn load_splits(cli: &Cli, config: &Config) -> Result<(Vec<Sample>, Vec<Sample>, Vec<Sample>)> {
    match (cli.get("train-data"), cli.get("val-data"), cli.get("test-data")) {
        (Some(tr), Some(va), Some(te)) => Ok((
            read_cache(Path::new(tr))?,
            read_cache(Path::new(va))?,
            read_cache(Path::new(te))?,
        )),
        (None, None, None) => {
            let samples = read_cache(Path::new(cli.required("data")?))?;
            split(&samples, (0.6, 0.2, 0.2), config.train.seed)
        }
        _ => Err(Error::arg(
            "give either --data or all of --train-data/--val-data/--test-data",
        )),
    }
}

/// Duplicates training progress to stdout and the log file.
struct Tee<W: Write> {
    file: W,
}

impl<W: Write> Write for Tee<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        std::io::stdout().write_all(buf)?;
        self.file.write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        std::io::stdout().flush()?;
        self.file.flush()
    }
}

fn log_path(cli: &Cli, out: &Path) -> PathBuf {
    match cli.get("log") {
        Some(p) => PathBuf::from(p),
        None => {
            let mut os = out.as_os_str().to_owned();
            os.push(".log");
            PathBuf::from(os)
        }
    }
}

fn cmd_train(cli: &Cli) -> Result<()> {
    let config = cli.config()?;
    let out = PathBuf::from(cli.required("out")?);
    let (train, val, test) = load_splits(cli, &config)?;
    let mut log = Tee { file: BufWriter::new(File::create(log_path(cli, &out))?) };
    let (model, metrics) = train_model(&config.train, &train, &val, &test, &mut log)?;
    log.flush()?;
    save_checkpoint(&model, None, &out)?;
    print_confusion(&metrics.confusion);
    println!("checkpoint={}", out.display());
    Ok(())
}

fn cmd_prune(cli: &Cli) -> Result<()> {
    let config = cli.config()?;
    let (mut model, _) = load_checkpoint(Path::new(cli.required("checkpoint")?))?;
    let sparsity = cli.parsed::<f64>("sparsity")?.unwrap_or(config.target_sparsity);
    let (before, _) = count_nonzero_params(&model, None);
    let mask = global_magnitude_prune(&model, sparsity)?;
    mask.apply(&mut model);
    let (after, footprint) = count_nonzero_params(&model, Some(&mask));
    let out = PathBuf::from(cli.required("out")?);
    save_checkpoint(&model, Some(&mask), &out)?;
    println!(
        "sparsity={sparsity} nonzero_before={before} nonzero_after={after} \
         reduction_pct={:.2} footprint_bytes={footprint} checkpoint={}",
        100.0 * (1.0 - after as f64 / before as f64),
        out.display()
    );
    Ok(())
}

fn cmd_finetune(cli: &Cli) -> Result<()> {
    let config = cli.config()?;
    let (model, mask) = load_checkpoint(Path::new(cli.required("checkpoint")?))?;
    let mask = mask.ok_or_else(|| {
        Error::arg("checkpoint has no prune mask; run `prune` first".to_string())
    })?;
    ensure_dims_match(&config, &model)?;
    let (train, val, test) = load_splits(cli, &config)?;
    let out = PathBuf::from(cli.required("out")?);
    let mut log = Tee { file: BufWriter::new(File::create(log_path(cli, &out))?) };
    let (model, metrics) = fine_tune(model, &mask, &config.train, &train, &val, &test, &mut log)?;
    log.flush()?;
    save_checkpoint(&model, Some(&mask), &out)?;
    let (nonzero, footprint) = count_nonzero_params(&model, Some(&mask));
    let synops = count_effective_synops(&model, &test[0])?;
    println!(
        "nonzero={nonzero} footprint_bytes={footprint} synops_per_sample={synops} test_acc={}",
        metrics.test_accuracy
    );
    print_confusion(&metrics.confusion);
    println!("checkpoint={}", out.display());
    Ok(())
}

/// Fine-tuning reuses the training config; its dims must describe the
/// loaded checkpoint.
fn ensure_dims_match(config: &Config, model: &Model<f32>) -> Result<()> {
    if config.train.variant != model.variant || config.train.dims != model.dims {
        return Err(Error::arg(format!(
            "config describes a {} model with dims {:?}, checkpoint holds a {} model with dims {:?}; \
             pass a matching --config/--variant",
            config.train.variant.as_str(),
            config.train.dims,
            model.variant.as_str(),
            model.dims
        )));
    }
    Ok(())
}

fn cmd_eval(cli: &Cli) -> Result<()> {
    let config = cli.config()?;
    let (model, _) = load_checkpoint(Path::new(cli.required("checkpoint")?))?;
    let samples = read_cache(Path::new(cli.required("data")?))?;
    let which = cli.get("split").unwrap_or("test");
    let chosen: Vec<Sample> = match which {
        "all" => samples,
        "train" | "val" | "test" => {
            let (train, val, test) = split(&samples, (0.6, 0.2, 0.2), config.train.seed)?;
            match which {
                "train" => train,
                "val" => val,
                _ => test,
            }
        }
        other => return Err(Error::arg(format!("unknown split '{other}'"))),
    };
    let result = evaluate(&model, &chosen, config.train.threads)?;
    println!("split={which} samples={} accuracy={}", chosen.len(), result.accuracy);
    print_confusion(&result.confusion);
    Ok(())
}

fn print_confusion(confusion: &Confusion) {
    for t in 0..confusion.classes() {
        let row: Vec<String> =
            (0..confusion.classes()).map(|p| confusion.at(t, p).to_string()).collect();
        println!("confusion_row_{t}={}", row.join(","));
    }
}

fn budget_from(cli: &Cli) -> Result<BenchBudget> {
    match (cli.parsed::<usize>("count")?, cli.parsed::<f64>("seconds")?) {
        (Some(_), Some(_)) => Err(Error::arg("give --count or --seconds, not both")),
        (None, Some(s)) => Ok(BenchBudget::Duration(std::time::Duration::from_secs_f64(s))),
        (count, None) => Ok(BenchBudget::Count(count.unwrap_or(200))),
    }
}

fn cmd_bench(cli: &Cli) -> Result<()> {
    let config = cli.config()?;
    let (model, _) = load_checkpoint(Path::new(cli.required("checkpoint")?))?;
    let samples = read_cache(Path::new(cli.required("data")?))?;
    let windows: Vec<Window<f32>> = samples.into_iter().map(|s| s.window).collect();
    let report = bench_inference(
        |w| forward(&model, w).expect("benchmark window matches the model"),
        &windows,
        budget_from(cli)?,
        config.bin_width_ms,
    )?;
    println!(
        "inferences={} mean_s={} median_s={} p95_s={} p99_s={}",
        report.count(),
        report.mean_s,
        report.median_s,
        report.p95_s,
        report.p99_s
    );
    match cli.get("hist") {
        Some(path) => {
            std::fs::write(path, report.histogram_csv())?;
            println!("histogram={path}");
        }
        None => print!("{}", report.histogram_csv()),
    }
    Ok(())
}

fn cmd_report(cli: &Cli) -> Result<()> {
    let config = cli.config()?;
    let (model, mask) = load_checkpoint(Path::new(cli.required("checkpoint")?))?;
    let budget = budget_from(cli)?;

    let (windows, accuracy, synops) = match cli.get("data") {
        Some(path) => {
            let samples = read_cache(Path::new(path))?;
            let (_, _, test) = split(&samples, (0.6, 0.2, 0.2), config.train.seed)?;
            let accuracy = evaluate(&model, &test, config.train.threads)?.accuracy;
            let synops = count_effective_synops(&model, &test[0])?;
            let windows = test.into_iter().map(|s| s.window).collect::<Vec<_>>();
            (windows, Some(accuracy), Some(synops))
        }
        None => {
            // No dataset: time inference on a silent window of the right shape.
            let zeros =
                Window::new(data::WINDOW_STEPS, model.dims.n_channels, vec![
                    0.0;
                    data::WINDOW_STEPS * model.dims.n_channels
                ])?;
            (vec![zeros], None, None)
        }
    };
    let latency = bench_inference(
        |w| forward(&model, w).expect("benchmark window matches the model"),
        &windows,
        budget,
        config.bin_width_ms,
    )?;
    let record = report_summary(
        &model,
        mask.as_ref(),
        accuracy,
        synops,
        &latency,
        cli.parsed::<f64>("energy-mj")?,
    )?;
    match cli.get("out") {
        Some(path) => {
            std::fs::write(path, record.to_csv())?;
            println!("report={path}");
        }
        None => print!("{}", record.to_csv()),
    }
    Ok(())
}

fn cmd_gradcheck(cli: &Cli) -> Result<()> {
    let config = cli.config()?;
    let epsilon = cli.parsed::<f64>("epsilon")?.unwrap_or(1e-5);
    let samples = cli.parsed::<usize>("samples")?.unwrap_or(64);
    // Small two-class rig in 64-bit smoothed mode.
    let dims = Dims {
        n_channels: 2,
        n_expand: 2,
        n_fuse: 3,
        n_harm: 4,
        n_u: 3,
        n_h: 3,
        d: 2,
        theta: 5.0,
        dt: 1.0,
        n_classes: 2,
    };
    let pops: PopulationSet<f64> = PopulationSet::defaults(config.train.variant);
    let model = Model::<f64>::new(config.train.variant, dims, &pops, config.train.seed)?;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.train.seed ^ 0x5bd1_e995);
    let data: Vec<f64> = (0..5 * 2).map(|_| rng.gen_range(-1.0..1.5)).collect();
    let window = Window::new(5, 2, data)?;
    let error = finite_difference_check(&model, &window, 1, epsilon, samples, config.train.seed)?;
    println!("max_rel_error={error}");
    if error > 1e-4 {
        return Err(Error::arg(format!("gradient check failed: {error} > 1e-4")));
    }
    Ok(())
}

fn cmd_lmucheck(cli: &Cli) -> Result<()> {
    let d = cli.parsed::<usize>("d")?.unwrap_or(12);
    let substeps = cli.parsed::<usize>("substeps")?.unwrap_or(32);
    let steps = cli.parsed::<usize>("steps")?.unwrap_or(400);
    let nrmse = delay_property_nrmse(d, 40, steps, &[0.3, 1.1, 2.2], substeps)?;
    println!("d={d} nrmse={nrmse}");
    if nrmse >= 0.15 {
        return Err(Error::arg(format!("delay reconstruction too poor: NRMSE {nrmse} >= 0.15")));
    }
    Ok(())
}
