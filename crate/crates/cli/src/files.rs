//! Dataset, vocabulary and checkpoint files.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use hmmn_core::{Dataset, Dims, ModelParams, Variant, Vocabulary};
use serde::{Deserialize, Serialize};

use crate::args::DataArgs;
use crate::settings::Settings;

pub const CHECKPOINT_FORMAT: &str = "hmmn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

pub struct Loaded {
    pub dataset: Dataset,
    pub vocab: Vocabulary,
}

/// Loads the dataset and its vocabulary, resolving `vocab_ref` against the
/// dataset's directory unless `--vocab` is given.
pub fn load_data(args: &DataArgs) -> anyhow::Result<Loaded> {
    let dataset = Dataset::load(&args.data)?;
    let vocab_path = match &args.vocab {
        Some(p) => p.clone(),
        None => sibling(&args.data, &dataset.vocab_ref),
    };
    let vocab = Vocabulary::load(&vocab_path)?;
    if dataset.is_empty() {
        bail!("{} holds no instances", args.data.display());
    }
    Ok(Loaded { dataset, vocab })
}

fn sibling(file: &Path, reference: &str) -> PathBuf {
    let r = Path::new(reference);
    if r.is_absolute() {
        return r.to_path_buf();
    }
    file.parent().unwrap_or(Path::new("")).join(r)
}

/// `vocab` as written from the directory holding `dataset`.
pub fn relative_ref(dataset: &Path, vocab: &Path) -> String {
    let parent = dataset.parent().unwrap_or(Path::new(""));
    match vocab.strip_prefix(parent) {
        Ok(rel) if !parent.as_os_str().is_empty() || vocab.is_relative() => {
            rel.display().to_string()
        }
        _ => std::path::absolute(vocab)
            .unwrap_or_else(|_| vocab.to_path_buf())
            .display()
            .to_string(),
    }
}

/// Projection width: `--dim`, else the generator's `d`, else 300.
pub fn model_dims(settings: &Settings, loaded: &Loaded) -> Dims {
    let generated = loaded.dataset.meta.generator.as_ref().map(|g| g.dims.d);
    Dims::new(
        settings.dim.or(generated).unwrap_or(Dims::default().d),
        loaded.vocab.d_w(),
        loaded.dataset.meta.d_r,
    )
}

pub fn fresh_params(settings: &Settings, dims: Dims) -> anyhow::Result<ModelParams> {
    let mut p = ModelParams::init(dims, settings.lambda, settings.hops, settings.seed)?;
    p.normalize_coattention = settings.normalize_coattention;
    Ok(p)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub dims: Dims,
    pub variant: Variant,
    pub config: Settings,
    pub config_hash: String,
    pub best_epoch: Option<usize>,
    pub dev_accuracy: f64,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading checkpoint {}", path.display()))?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .with_context(|| format!("parsing checkpoint {}", path.display()))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            bail!(
                "{}: expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}, found {} v{}",
                path.display(),
                ck.format,
                ck.version
            );
        }
        ck.params.validate()?;
        if ck.params.dims() != ck.dims {
            bail!(
                "{}: declared dims disagree with the stored matrices",
                path.display()
            );
        }
        Ok(ck)
    }

    /// Weights checked against the data they will be applied to.
    pub fn params_for(&self, loaded: &Loaded) -> anyhow::Result<ModelParams> {
        let d = &self.dims;
        if d.d_w != loaded.vocab.d_w() || d.d_r != loaded.dataset.meta.d_r {
            bail!(
                "checkpoint expects d_w = {}, d_r = {}; data has d_w = {}, d_r = {}",
                d.d_w,
                d.d_r,
                loaded.vocab.d_w(),
                loaded.dataset.meta.d_r
            );
        }
        Ok(self.params.clone())
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    std::fs::write(path, to_json(value)).with_context(|| format!("writing {}", path.display()))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s
}
