use anyhow::{bail, Context};
use hmmn_core::ablation::{build_representation, table_position, Modality, TablePosition};
use hmmn_core::data::{generate_synthetic, random_instances, split, RandomSpec};
use hmmn_core::encodings::encode_instance;
use hmmn_core::gradients::{check_gradients, GradCheckConfig, GradCheckReport};
use hmmn_core::model::predict;
use hmmn_core::training::{evaluate, train, Metrics};
use hmmn_core::{
    enumerate_specs, Dataset, Dims, Prediction, RawInstance, RepresentationSpec, SyntheticConfig,
    Variant,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::args::{AblateArgs, AttendArgs, EvalArgs, GenerateArgs, GradcheckArgs, TrainArgs};
use crate::files::{
    fresh_params, load_data, model_dims, relative_ref, to_json, write_json, Checkpoint, Loaded,
    CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};
use crate::heatmap;
use crate::settings::{config_hash, read_config, Settings};
use crate::UsageError;

pub fn generate(args: &GenerateArgs) -> anyhow::Result<()> {
    let mut config: SyntheticConfig = match &args.config {
        Some(path) => read_config(path)?,
        None => SyntheticConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(n) = args.instances {
        config.instances = n;
    }
    if let Some(mode) = args.mode {
        config.mode = mode;
    }
    if let Some(cue) = args.cue {
        config.cue_strength = cue;
    }
    config.validate().map_err(|e| UsageError(e.to_string()))?;

    let vocab_path = args
        .vocab
        .clone()
        .unwrap_or_else(|| args.out.with_extension("vocab.tsv"));
    let (mut dataset, vocab) = generate_synthetic(&config)?;
    dataset.vocab_ref = relative_ref(&args.out, &vocab_path);
    dataset.save(&args.out)?;
    vocab.save(&vocab_path)?;
    eprintln!(
        "wrote {} instances to {} and {} words to {}",
        dataset.len(),
        args.out.display(),
        vocab.len(),
        vocab_path.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainReport<'a> {
    command: &'static str,
    data: String,
    config: &'a Settings,
    config_hash: String,
    dims: Dims,
    train_instances: usize,
    dev_instances: usize,
    metrics: &'a Metrics,
}

pub fn train_cmd(args: &TrainArgs) -> anyhow::Result<()> {
    let settings = Settings::resolve(&args.model)?;
    let loaded = load_data(&args.data)?;
    let (train_set, dev_set) = match &args.dev {
        Some(path) => {
            let dev = Dataset::load(path)?;
            if dev.meta.d_r != loaded.dataset.meta.d_r {
                bail!(
                    "dev set has d_r = {}, training set {}",
                    dev.meta.d_r,
                    loaded.dataset.meta.d_r
                );
            }
            (loaded.dataset.instances.clone(), dev.instances)
        }
        None => {
            let (t, d) = split(&loaded.dataset, settings.dev_fraction, settings.seed)?;
            (t.instances, d.instances)
        }
    };
    if train_set.is_empty() || dev_set.is_empty() {
        bail!(
            "split left {} train and {} dev instances",
            train_set.len(),
            dev_set.len()
        );
    }
    let dims = model_dims(&settings, &loaded);
    let init = fresh_params(&settings, dims)?;
    log::info!(
        "training {} on {} / {} instances, dims {dims:?}",
        settings.variant,
        train_set.len(),
        dev_set.len()
    );
    let (params, metrics) = train(
        &settings.train_config(),
        init,
        &train_set,
        &dev_set,
        &loaded.vocab,
    )?;

    let hash = settings.hash();
    let checkpoint = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        dims,
        variant: settings.variant,
        config: settings.clone(),
        config_hash: hash.clone(),
        best_epoch: metrics.best_epoch,
        dev_accuracy: metrics.overall,
        params,
    };
    write_json(&args.out, &checkpoint)?;
    let metrics_path = args
        .metrics
        .clone()
        .unwrap_or_else(|| args.out.with_extension("metrics.json"));
    write_json(
        &metrics_path,
        &TrainReport {
            command: "train",
            data: args.data.data.display().to_string(),
            config: &settings,
            config_hash: hash,
            dims,
            train_instances: train_set.len(),
            dev_instances: dev_set.len(),
            metrics: &metrics,
        },
    )?;
    print!("{}", metrics.to_table());
    eprintln!(
        "best dev accuracy {:.4} at epoch {}; wrote {} and {}",
        metrics.overall,
        metrics.best_epoch.unwrap_or(0),
        args.out.display(),
        metrics_path.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalReport<'a> {
    command: &'static str,
    data: String,
    checkpoint_config_hash: &'a str,
    variant: Variant,
    metrics: &'a Metrics,
}

pub fn eval(args: &EvalArgs) -> anyhow::Result<()> {
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let loaded = load_data(&args.data)?;
    let params = checkpoint.params_for(&loaded)?;
    let variant = args.variant.unwrap_or(checkpoint.variant);
    let metrics = evaluate(&params, &loaded.dataset.instances, &loaded.vocab, variant)?;
    let report = EvalReport {
        command: "eval",
        data: args.data.data.display().to_string(),
        checkpoint_config_hash: &checkpoint.config_hash,
        variant,
        metrics: &metrics,
    };
    match &args.out {
        Some(path) => {
            write_json(path, &report)?;
            print!("{}", metrics.to_table());
        }
        None => print!("{}", to_json(&report)),
    }
    Ok(())
}

#[derive(Serialize)]
struct AblationRow {
    spec: RepresentationSpec,
    #[serde(flatten)]
    position: TablePosition,
    /// `S` or `V`: which slots the memory has.
    output: char,
    rows: usize,
    cols: usize,
    /// `diverged` when training hit a non-finite loss.
    status: &'static str,
    accuracy: Option<f64>,
    correct: Option<usize>,
    total: usize,
    best_epoch: Option<usize>,
}

#[derive(Serialize)]
struct AblationReport<'a> {
    command: &'static str,
    data: String,
    config: &'a Settings,
    config_hash: String,
    trained: bool,
    dims: Dims,
    rows: Vec<AblationRow>,
}

/// Checks the memory shape of `spec` on `raw`: `d x m` for subtitle-side
/// specs, `d x n` for video-side ones.
fn representation_shape(
    spec: &RepresentationSpec,
    raw: &RawInstance,
    loaded: &Loaded,
    params: &hmmn_core::ModelParams,
) -> anyhow::Result<(usize, usize)> {
    let enc = encode_instance(raw, &loaded.vocab, params)?;
    let mem = build_representation(spec, &enc, &enc.q)?;
    let expected = match spec.output_modality() {
        Modality::Subtitles => raw.m(),
        Modality::Video => raw.n(),
    };
    if mem.shape() != (params.dims().d, expected) {
        bail!(
            "{spec}: memory is {:?}, expected ({}, {expected})",
            mem.shape(),
            params.dims().d
        );
    }
    Ok(mem.shape())
}

pub fn ablate(args: &AblateArgs) -> anyhow::Result<()> {
    let settings = Settings::resolve(&args.model)?;
    let loaded = load_data(&args.data)?;
    let (init, dims) = match &args.checkpoint {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            (ck.params_for(&loaded)?, ck.dims)
        }
        None => {
            let dims = model_dims(&settings, &loaded);
            (fresh_params(&settings, dims)?, dims)
        }
    };
    let (train_set, dev_set) = split(&loaded.dataset, settings.dev_fraction, settings.seed)?;
    if train_set.is_empty() || dev_set.is_empty() {
        bail!(
            "split left {} train and {} dev instances",
            train_set.len(),
            dev_set.len()
        );
    }
    let base_config = settings.train_config();
    let rows = enumerate_specs()
        .into_par_iter()
        .map(|spec| -> anyhow::Result<AblationRow> {
            let variant = Variant::Baseline(spec);
            let (rows, cols) = representation_shape(&spec, &dev_set.instances[0], &loaded, &init)?;
            let outcome = if args.no_train {
                Some(evaluate(&init, &dev_set.instances, &loaded.vocab, variant)?)
            } else {
                let config = hmmn_core::TrainConfig {
                    variant,
                    ..base_config.clone()
                };
                match train(
                    &config,
                    init.clone(),
                    &train_set.instances,
                    &dev_set.instances,
                    &loaded.vocab,
                ) {
                    Ok((_, metrics)) => Some(metrics),
                    Err(e @ hmmn_core::Error::Diverged { .. }) => {
                        log::warn!("{variant}: {e}");
                        None
                    }
                    Err(e) => {
                        return Err(anyhow::Error::new(e).context(format!("training {variant}")))
                    }
                }
            };
            let (accuracy, correct, best_epoch) = match &outcome {
                Some(m) => {
                    log::info!("{spec}: {:.4}", m.overall);
                    (Some(m.overall), Some(m.correct), m.best_epoch)
                }
                None => (None, None, None),
            };
            Ok(AblationRow {
                spec,
                position: table_position(&spec),
                output: spec.output_modality().symbol(),
                rows,
                cols,
                status: if outcome.is_some() { "ok" } else { "diverged" },
                accuracy,
                correct,
                total: dev_set.len(),
                best_epoch,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    let tsv = ablation_tsv(&rows);
    let report = AblationReport {
        command: "ablate",
        data: args.data.data.display().to_string(),
        config: &settings,
        config_hash: config_hash(&settings),
        trained: !args.no_train,
        dims,
        rows,
    };
    match &args.out {
        Some(prefix) => {
            let tsv_path = prefix.with_extension("tsv");
            let json_path = prefix.with_extension("json");
            std::fs::write(&tsv_path, &tsv)
                .with_context(|| format!("writing {}", tsv_path.display()))?;
            write_json(&json_path, &report)?;
            eprintln!("wrote {} and {}", tsv_path.display(), json_path.display());
        }
        None => print!("{tsv}"),
    }
    Ok(())
}

fn ablation_tsv(rows: &[AblationRow]) -> String {
    let mut out =
        String::from("table\trow\tcolumn\tspec\toutput\trows\tcols\taccuracy\tcorrect\ttotal\n");
    for r in rows {
        let (accuracy, correct) = match (r.accuracy, r.correct) {
            (Some(a), Some(c)) => (format!("{a:.4}"), c.to_string()),
            _ => (r.status.to_string(), "-".to_string()),
        };
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.position.table,
            r.position.row,
            r.position.column,
            r.spec,
            r.output,
            r.rows,
            r.cols,
            accuracy,
            correct,
            r.total
        ));
    }
    out
}

#[derive(Serialize)]
struct GradcheckOutput {
    command: &'static str,
    seed: u64,
    dims: Dims,
    instances: usize,
    variant: Variant,
    hops: usize,
    lambda: f64,
    step: f64,
    #[serde(flatten)]
    report: GradCheckReport,
}

fn parse_dims(s: &str) -> Result<Dims, UsageError> {
    match s {
        "toy" => Ok(Dims::toy()),
        "default" => Ok(Dims::default()),
        other => {
            let parts: Vec<usize> = other
                .split(',')
                .map(|p| p.trim().parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|_| {
                    UsageError(format!(
                        "--dims: expected toy, default or d,d_w,d_r; got `{other}`"
                    ))
                })?;
            match parts[..] {
                [d, d_w, d_r] if d > 0 && d_w > 0 && d_r > 0 => Ok(Dims::new(d, d_w, d_r)),
                _ => Err(UsageError(format!(
                    "--dims: expected three positive sizes, got `{other}`"
                ))),
            }
        }
    }
}

/// Returns whether the check passed.
pub fn gradcheck(args: &GradcheckArgs) -> anyhow::Result<bool> {
    let dims = parse_dims(&args.dims)?;
    if args.instances == 0
        || args.hops == 0
        || args.step.is_nan()
        || args.step <= 0.0
        || args.tolerance.is_nan()
        || args.tolerance <= 0.0
    {
        return Err(UsageError(
            "--instances, --hops, --step and --tolerance must be positive".into(),
        )
        .into());
    }
    let spec = RandomSpec {
        dims,
        ..RandomSpec::toy()
    };
    let (vocab, batch) = random_instances(&spec, args.instances, args.seed)?;
    let params = hmmn_core::ModelParams::init(dims, args.lambda, args.hops, args.seed)?;
    let config = GradCheckConfig {
        h: args.step,
        tolerance: args.tolerance,
        max_entries: args.max_entries,
        seed: args.seed,
    };
    let report = check_gradients(&batch, &vocab, &params, args.variant, &config)?;
    println!(
        "{:<4} {:>8} {:>12} {:>12}",
        "", "entries", "max rel", "median rel"
    );
    for (name, m) in [("dW1", &report.w1), ("dW2", &report.w2)] {
        println!(
            "{name:<4} {:>8} {:>12.3e} {:>12.3e}",
            m.entries_checked, m.max_rel_error, m.median_rel_error
        );
    }
    let passed = report.passed;
    println!("{}", if passed { "PASS" } else { "FAIL" });
    if let Some(path) = &args.out {
        write_json(
            path,
            &GradcheckOutput {
                command: "gradcheck",
                seed: args.seed,
                dims,
                instances: args.instances,
                variant: args.variant,
                hops: args.hops,
                lambda: args.lambda,
                step: args.step,
                report,
            },
        )?;
    }
    Ok(passed)
}

#[derive(Serialize)]
struct AttendOutput<'a> {
    command: &'static str,
    data: String,
    index: usize,
    variant: Variant,
    question: &'a [String],
    answers: &'a [Vec<String>],
    subtitles: &'a [Vec<String>],
    gold: usize,
    prediction: &'a Prediction,
}

pub fn attend(args: &AttendArgs) -> anyhow::Result<()> {
    let settings = Settings::resolve(&args.model)?;
    let loaded = load_data(&args.data)?;
    let Some(raw) = loaded.dataset.instances.get(args.index) else {
        return Err(UsageError(format!(
            "--index {} out of range for {} instances",
            args.index,
            loaded.dataset.len()
        ))
        .into());
    };
    let (params, default_variant) = match &args.checkpoint {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            (ck.params_for(&loaded)?, ck.variant)
        }
        None => (
            fresh_params(&settings, model_dims(&settings, &loaded))?,
            settings.variant,
        ),
    };
    let variant = args.model.variant.unwrap_or(default_variant);
    let enc = encode_instance(raw, &loaded.vocab, &params)?;
    let prediction = predict(&enc, &params, variant, true)?;
    let output = AttendOutput {
        command: "attend",
        data: args.data.data.display().to_string(),
        index: args.index,
        variant,
        question: &raw.question,
        answers: &raw.answers,
        subtitles: &raw.subtitles,
        gold: raw.gold,
        prediction: &prediction,
    };
    match &args.out {
        Some(path) => write_json(path, &output)?,
        None => print!("{}", to_json(&output)),
    }
    if args.heatmap {
        let trace = prediction.trace.as_ref().expect("trace requested");
        eprint!("{}", heatmap::render(trace, raw.gold, prediction.argmax));
    }
    Ok(())
}
