//! Dataset files, deterministic splits and the synthetic task generator.
//!
//! A dataset file is JSON:
//!
//! ```text
//! {"schema": 1,
//!  "meta": {"name": ..., "seed": ..., "d_r": ..., "generator": {...}},
//!  "vocab_ref": "vocab.tsv",
//!  "instances": [
//!   {"q": [tokens], "answers": [[tokens] x 5], "subtitles": [[tokens], ...],
//!    "frames": [[[f32 x d_r] x regions] x n], "gold": k},
//!   ...
//!  ]}
//! ```
//!
//! Files are written with one instance per line so that load errors point at
//! the offending instance.

use std::fmt;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encodings::{Dims, RawInstance, Vocabulary, NUM_CHOICES};
use crate::error::{Error, Result};
use crate::numerics::{rng_for, Mat, Rng};

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("I/O error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unsupported schema version {found} (expected {SCHEMA_VERSION})")]
    Schema { found: u64 },

    #[error("missing `schema` field")]
    MissingSchema,

    #[error("inconsistent dataset at {field}: {detail}")]
    Inconsistent { field: String, detail: String },

    #[error("vocabulary line {line}: {detail}")]
    Vocab { line: usize, detail: String },
}

impl From<serde_json::Error> for DataError {
    fn from(e: serde_json::Error) -> Self {
        DataError::Json {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

/// Question category taken from the first question token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionType {
    What,
    Who,
    Why,
    How,
    Where,
    Other,
}

impl QuestionType {
    pub const ALL: [QuestionType; 6] = [
        QuestionType::What,
        QuestionType::Who,
        QuestionType::Why,
        QuestionType::How,
        QuestionType::Where,
        QuestionType::Other,
    ];

    pub fn of(question: &[String]) -> Self {
        match question.first().map(|t| t.to_lowercase()).as_deref() {
            Some("what") => QuestionType::What,
            Some("who") => QuestionType::Who,
            Some("why") => QuestionType::Why,
            Some("how") => QuestionType::How,
            Some("where") => QuestionType::Where,
            _ => QuestionType::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QuestionType::What => "what",
            QuestionType::Who => "who",
            QuestionType::Why => "why",
            QuestionType::How => "how",
            QuestionType::Where => "where",
            QuestionType::Other => "other",
        }
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Preprocessing conventions of the original video corpus. Carried as
/// metadata for imported datasets; nothing in this crate acts on them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportConventions {
    /// Subtitles are collected from the clip span widened by this many
    /// seconds on each side.
    pub subtitle_window_seconds: f64,
    /// Frames sampled per clip.
    pub frames_per_clip: usize,
}

impl Default for ImportConventions {
    fn default() -> Self {
        ImportConventions {
            subtitle_window_seconds: 300.0,
            frames_per_clip: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Region feature length shared by every frame.
    pub d_r: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<SyntheticConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub import: Option<ImportConventions>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    /// Path of the vocabulary TSV, relative to the dataset file.
    pub vocab_ref: String,
    pub instances: Vec<RawInstance>,
}

#[derive(Serialize)]
struct HeaderOut<'a> {
    schema: u64,
    meta: &'a DatasetMeta,
    vocab_ref: &'a str,
}

#[derive(Deserialize)]
struct SchemaProbe {
    schema: Option<u64>,
}

#[derive(Deserialize)]
struct DatasetFile {
    meta: DatasetMeta,
    vocab_ref: String,
    instances: Vec<RawInstance>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn question_types(&self) -> Vec<QuestionType> {
        self.instances
            .iter()
            .map(|i| QuestionType::of(&i.question))
            .collect()
    }

    /// Checks every instance against the 5-choice layout and `meta.d_r`.
    pub fn validate(&self) -> std::result::Result<(), DataError> {
        for (i, inst) in self.instances.iter().enumerate() {
            inst.validate(self.meta.d_r).map_err(|e| match e {
                Error::Encoding { field, reason } => DataError::Inconsistent {
                    field: format!("instances[{i}].{field}"),
                    detail: reason,
                },
                other => DataError::Inconsistent {
                    field: format!("instances[{i}]"),
                    detail: other.to_string(),
                },
            })?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let header = serde_json::to_string(&HeaderOut {
            schema: SCHEMA_VERSION,
            meta: &self.meta,
            vocab_ref: &self.vocab_ref,
        })
        .expect("header serializes");
        let mut out = String::with_capacity(header.len() + 64);
        out.push_str(&header[..header.len() - 1]);
        out.push_str(",\"instances\":[");
        for (i, inst) in self.instances.iter().enumerate() {
            out.push_str(if i == 0 { "\n" } else { ",\n" });
            out.push_str(&serde_json::to_string(inst).expect("instance serializes"));
        }
        out.push_str("\n]}\n");
        out
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, DataError> {
        let probe: SchemaProbe = serde_json::from_str(text)?;
        match probe.schema {
            None => return Err(DataError::MissingSchema),
            Some(SCHEMA_VERSION) => {}
            Some(found) => return Err(DataError::Schema { found }),
        }
        let file: DatasetFile = serde_json::from_str(text)?;
        let ds = Dataset {
            meta: file.meta,
            vocab_ref: file.vocab_ref,
            instances: file.instances,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::result::Result<(), DataError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> std::result::Result<Self, DataError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    fn with_instances(&self, instances: Vec<RawInstance>) -> Dataset {
        Dataset {
            meta: self.meta.clone(),
            vocab_ref: self.vocab_ref.clone(),
            instances,
        }
    }
}

/// Seeded shuffle, then the first `round(N · dev_fraction)` instances form
/// the dev set. Returns `(train, dev)`.
pub fn split(dataset: &Dataset, dev_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(Error::Config(format!(
            "dev fraction must lie in (0, 1), got {dev_fraction}"
        )));
    }
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, "split"));
    let n_dev = (n as f64 * dev_fraction).round() as usize;
    let pick = |idx: &[usize]| idx.iter().map(|&i| dataset.instances[i].clone()).collect();
    Ok((
        dataset.with_instances(pick(&order[n_dev..])),
        dataset.with_instances(pick(&order[..n_dev])),
    ))
}

/// One preprocessed clip from an external corpus: already tokenized text and
/// per-frame region features (typically 32 frames of pooled CNN regions).
#[derive(Clone, Debug)]
pub struct PreprocessedClip {
    pub question: Vec<String>,
    pub answers: Vec<Vec<String>>,
    pub gold: usize,
    /// Sentences whose time span overlaps the widened clip window.
    pub subtitles: Vec<Vec<String>>,
    pub frames: Vec<Vec<Vec<f32>>>,
}

/// Wraps preprocessed clips into a dataset. Video decoding, subtitle parsing
/// and feature extraction are expected to have happened upstream.
pub fn import_preprocessed(
    name: &str,
    vocab_ref: &str,
    d_r: usize,
    clips: Vec<PreprocessedClip>,
) -> std::result::Result<Dataset, DataError> {
    let ds = Dataset {
        meta: DatasetMeta {
            name: name.to_string(),
            seed: None,
            d_r,
            generator: None,
            import: Some(ImportConventions::default()),
        },
        vocab_ref: vocab_ref.to_string(),
        instances: clips
            .into_iter()
            .map(|c| RawInstance {
                question: c.question,
                answers: c.answers,
                subtitles: c.subtitles,
                frames: c.frames,
                gold: c.gold,
            })
            .collect(),
    };
    ds.validate()?;
    Ok(ds)
}

/// Whether the question alone can locate the supporting scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CueMode {
    /// The question carries a key token that also appears in the gold scene.
    QuestionSufficient,
    /// Question tokens never occur in the context; only the answer choices
    /// can locate the supporting scene.
    AnswerRequired,
}

/// Synthetic task parameters.
///
/// Every instance holds one gold scene: a subtitle sentence and a frame
/// built from the gold answer's tokens, padded with
/// `round(answer_tokens · (1 − cue) / cue)` noise tokens. Each token of each
/// wrong answer gets a decoy scene of the same length holding that token
/// plus noise, so scene statistics do not reveal which choice is correct.
/// The remaining slots hold noise scenes. Frame regions cycle through the
/// scene's tokens, each region being the token's image under a fixed
/// word-to-region map plus Gaussian noise. The map has entry variance
/// `1/d_r`, so regions keep roughly the norm of their word.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub name: String,
    pub instances: usize,
    /// Subtitle sentences per instance.
    pub m: usize,
    /// Frames per instance.
    pub n: usize,
    pub regions: usize,
    /// Content words shared by answers and context.
    pub vocab_size: usize,
    /// Question-only filler words, never used in the context.
    pub question_vocab: usize,
    /// Length of noise sentences.
    pub tokens_per_sentence: usize,
    pub answer_tokens: usize,
    /// Question length including the leading question word.
    pub question_tokens: usize,
    pub dims: Dims,
    pub cue_strength: f64,
    pub mode: CueMode,
    /// Norm of every word vector.
    pub word_scale: f64,
    /// Standard deviation of per-coordinate region noise.
    pub region_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            name: "synthetic".into(),
            instances: 600,
            m: 10,
            n: 10,
            regions: 4,
            vocab_size: 30,
            question_vocab: 20,
            tokens_per_sentence: 2,
            answer_tokens: 2,
            question_tokens: 1,
            dims: Dims::new(128, 128, 128),
            cue_strength: 1.0,
            mode: CueMode::AnswerRequired,
            word_scale: 3.0,
            region_noise: 0.05,
            seed: 7,
        }
    }
}

/// Question words by type; index 0..5 maps onto the first five
/// [`QuestionType`]s.
const QUESTION_WORDS: [&str; 5] = ["what", "who", "why", "how", "where"];

impl SyntheticConfig {
    pub fn filler_tokens(&self) -> usize {
        let la = self.answer_tokens as f64;
        (la * (1.0 - self.cue_strength) / self.cue_strength).round() as usize
    }

    /// Tokens in the gold and decoy scenes.
    pub fn scene_length(&self) -> usize {
        self.answer_tokens + self.filler_tokens()
    }

    fn scenes_needed(&self) -> usize {
        1 + (NUM_CHOICES - 1) * self.answer_tokens
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("instances", self.instances),
            ("m", self.m),
            ("n", self.n),
            ("regions", self.regions),
            ("vocab_size", self.vocab_size),
            ("question_vocab", self.question_vocab),
            ("tokens_per_sentence", self.tokens_per_sentence),
            ("answer_tokens", self.answer_tokens),
            ("question_tokens", self.question_tokens),
            ("d", self.dims.d),
            ("d_w", self.dims.d_w),
            ("d_r", self.dims.d_r),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if !(self.cue_strength > 0.0 && self.cue_strength <= 1.0) {
            return Err(Error::Config(format!(
                "cue strength must lie in (0, 1], got {}",
                self.cue_strength
            )));
        }
        let need = self.scenes_needed();
        if self.m < need || self.n < need {
            return Err(Error::Config(format!(
                "m and n must be >= {need} to hold the gold and decoy scenes"
            )));
        }
        let key = usize::from(self.mode == CueMode::QuestionSufficient);
        let distinct = NUM_CHOICES * self.answer_tokens
            + key
            + self.scene_length().max(self.tokens_per_sentence);
        if self.vocab_size < distinct {
            return Err(Error::Config(format!("vocab_size must be >= {distinct}")));
        }
        if !(self.word_scale > 0.0 && self.region_noise >= 0.0) {
            return Err(Error::Config(
                "word_scale must be > 0 and region_noise >= 0".into(),
            ));
        }
        Ok(())
    }
}

fn gaussian_vec(rng: &mut Rng, len: usize, std: f64) -> Vec<f64> {
    (0..len)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Picks `k` distinct items of `pool` not in `exclude`.
fn pick_distinct(rng: &mut Rng, pool: &[usize], exclude: &[usize], k: usize) -> Vec<usize> {
    let candidates: Vec<usize> = pool
        .iter()
        .copied()
        .filter(|t| !exclude.contains(t))
        .collect();
    candidates.choose_multiple(rng, k).copied().collect()
}

struct Scene {
    tokens: Vec<usize>,
}

/// Generates the dataset and its vocabulary. Identical configs give
/// identical outputs.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<(Dataset, Vocabulary)> {
    config.validate()?;
    let d_w = config.dims.d_w;
    let d_r = config.dims.d_r;

    let mut names: Vec<String> = QUESTION_WORDS.iter().map(|s| s.to_string()).collect();
    names.extend((0..config.question_vocab).map(|i| format!("q{i}")));
    let content_offset = names.len();
    names.extend((0..config.vocab_size).map(|i| format!("w{i}")));

    let mut vocab_rng = rng_for(config.seed, "synthetic/vocab");
    let vectors: Vec<Vec<f64>> = names
        .iter()
        .map(|_| {
            let v = gaussian_vec(&mut vocab_rng, d_w, 1.0);
            let scale = config.word_scale / crate::numerics::norm(&v);
            v.iter().map(|x| x * scale).collect()
        })
        .collect();
    let vocab = Vocabulary::new(names.iter().cloned().zip(vectors.iter().cloned()).collect())?;

    // fixed word-to-region map, d_r x d_w
    let mut map_rng = rng_for(config.seed, "synthetic/visual");
    let map_std = 1.0 / (d_r as f64).sqrt();
    let visual = Mat::from_fn(d_r, d_w, |_, _| {
        map_std * map_rng.sample::<f64, _>(StandardNormal)
    });
    let region_of = |tok: usize, rng: &mut Rng| -> Vec<f32> {
        let clean = visual.mul_vec(&vectors[tok]).expect("shapes agree");
        clean
            .iter()
            .map(|&x| (x + config.region_noise * rng.sample::<f64, _>(StandardNormal)) as f32)
            .collect()
    };

    let content: Vec<usize> = (content_offset..names.len()).collect();
    let fillers: Vec<usize> = (QUESTION_WORDS.len()..content_offset).collect();
    let mut rng = rng_for(config.seed, "synthetic/instances");
    let mut instances = Vec::with_capacity(config.instances);
    let la = config.answer_tokens;
    let scene_len = config.scene_length();

    for _ in 0..config.instances {
        let qword = rng.random_range(0..QUESTION_WORDS.len());
        let mut question = vec![qword];
        question.extend(
            (1..config.question_tokens).map(|_| fillers[rng.random_range(0..fillers.len())]),
        );

        let answer_pool = pick_distinct(&mut rng, &content, &[], NUM_CHOICES * la);
        let answers: Vec<Vec<usize>> = answer_pool.chunks(la).map(|c| c.to_vec()).collect();
        let gold = rng.random_range(0..NUM_CHOICES);

        let mut reserved = answer_pool.clone();
        let key = match config.mode {
            CueMode::QuestionSufficient => {
                let k = pick_distinct(&mut rng, &content, &reserved, 1)[0];
                reserved.push(k);
                question.insert(1, k);
                Some(k)
            }
            CueMode::AnswerRequired => None,
        };

        let mut scenes = Vec::new();
        let mut gold_tokens = answers[gold].clone();
        gold_tokens.extend(pick_distinct(&mut rng, &content, &reserved, scene_len - la));
        if let Some(k) = key {
            gold_tokens.push(k);
        }
        scenes.push(Scene {
            tokens: gold_tokens,
        });
        for (k, ans) in answers.iter().enumerate() {
            if k == gold {
                continue;
            }
            for &tok in ans {
                let mut tokens = vec![tok];
                tokens.extend(pick_distinct(&mut rng, &content, &reserved, scene_len - 1));
                scenes.push(Scene { tokens });
            }
        }
        let planted = scenes.len();

        let noise_scene = |rng: &mut Rng| Scene {
            tokens: pick_distinct(rng, &content, &reserved, config.tokens_per_sentence),
        };
        let mut sentence_scenes: Vec<&Scene> = scenes.iter().collect();
        let extra_sentences: Vec<Scene> =
            (planted..config.m).map(|_| noise_scene(&mut rng)).collect();
        sentence_scenes.extend(extra_sentences.iter());
        sentence_scenes.shuffle(&mut rng);

        let mut frame_scenes: Vec<&Scene> = scenes.iter().collect();
        let extra_frames: Vec<Scene> = (planted..config.n).map(|_| noise_scene(&mut rng)).collect();
        frame_scenes.extend(extra_frames.iter());
        frame_scenes.shuffle(&mut rng);

        let tok = |i: &usize| names[*i].clone();
        let subtitles = sentence_scenes
            .iter()
            .map(|s| s.tokens.iter().map(tok).collect())
            .collect();
        let frames = frame_scenes
            .iter()
            .map(|s| {
                (0..config.regions)
                    .map(|r| region_of(s.tokens[r % s.tokens.len()], &mut rng))
                    .collect()
            })
            .collect();
        instances.push(RawInstance {
            question: question.iter().map(tok).collect(),
            answers: answers
                .iter()
                .map(|a| a.iter().map(tok).collect())
                .collect(),
            subtitles,
            frames,
            gold,
        });
    }

    let dataset = Dataset {
        meta: DatasetMeta {
            name: config.name.clone(),
            seed: Some(config.seed),
            d_r,
            generator: Some(config.clone()),
            import: None,
        },
        vocab_ref: "vocab.tsv".into(),
        instances,
    };
    Ok((dataset, vocab))
}

/// Shape of fully random instances used for gradient and oracle checks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RandomSpec {
    pub dims: Dims,
    pub vocab: usize,
    pub m: usize,
    pub n: usize,
    pub regions: usize,
    pub max_sentence: usize,
}

impl RandomSpec {
    /// `d = 8, d_w = 6, d_r = 5, m = 4, n = 3`, ten words.
    pub fn toy() -> Self {
        RandomSpec {
            dims: Dims::toy(),
            vocab: 10,
            m: 4,
            n: 3,
            regions: 2,
            max_sentence: 3,
        }
    }
}

/// Random vocabulary (uniform entries) and instances whose sentences draw
/// 1..=`max_sentence` random words and whose regions are uniform in [-1, 1].
pub fn random_instances(
    spec: &RandomSpec,
    count: usize,
    seed: u64,
) -> Result<(Vocabulary, Vec<RawInstance>)> {
    let mut rng = rng_for(seed, "random-instances");
    let entries = (0..spec.vocab)
        .map(|i| {
            let v = (0..spec.dims.d_w)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            (format!("t{i}"), v)
        })
        .collect();
    let vocab = Vocabulary::new(entries)?;
    let sentence = |rng: &mut Rng| -> Vec<String> {
        let len = rng.random_range(1..=spec.max_sentence);
        (0..len)
            .map(|_| format!("t{}", rng.random_range(0..spec.vocab)))
            .collect()
    };
    let instances = (0..count)
        .map(|_| RawInstance {
            question: sentence(&mut rng),
            answers: (0..NUM_CHOICES).map(|_| sentence(&mut rng)).collect(),
            subtitles: (0..spec.m).map(|_| sentence(&mut rng)).collect(),
            frames: (0..spec.n)
                .map(|_| {
                    (0..spec.regions)
                        .map(|_| {
                            (0..spec.dims.d_r)
                                .map(|_| rng.random_range(-1.0f32..1.0))
                                .collect()
                        })
                        .collect()
                })
                .collect(),
            gold: rng.random_range(0..NUM_CHOICES),
        })
        .collect();
    Ok((vocab, instances))
}
