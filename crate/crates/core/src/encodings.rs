//! Projection of raw tokens and regional features into the shared
//! `d`-dimensional space.
//!
//! Sentences (subtitles, the question, each answer choice) are the mean of
//! their projected word vectors. Frames go through an attention over the
//! whole vocabulary: each region is projected by `W2` into word space,
//! soft-assigned to vocabulary words, replaced by the attention-weighted sum
//! of word vectors, mean-pooled over regions and finally projected by `W1`.
//!
//! Out-of-vocabulary tokens contribute a zero word vector but still count in
//! the mean's denominator.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::DataError;
use crate::error::{Error, Result};
use crate::numerics::{rng_for, softmax, Mat};

/// Number of answer choices per question.
pub const NUM_CHOICES: usize = 5;

/// Feature dimensions: `d` shared space, `d_w` word vectors, `d_r` regions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d: usize,
    pub d_w: usize,
    pub d_r: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            d: 300,
            d_w: 300,
            d_r: 512,
        }
    }
}

impl Dims {
    pub fn new(d: usize, d_w: usize, d_r: usize) -> Self {
        Dims { d, d_w, d_r }
    }

    /// Small shape used for gradient checking.
    pub fn toy() -> Self {
        Dims {
            d: 8,
            d_w: 6,
            d_r: 5,
        }
    }
}

/// Fixed word vectors, indexed by token.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    /// `d_w x |V|`, one column per word.
    embeddings: Mat,
}

impl Vocabulary {
    pub fn new(entries: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let d_w = entries.first().map(|(_, v)| v.len()).unwrap_or(0);
        let mut index = HashMap::with_capacity(entries.len());
        let mut tokens = Vec::with_capacity(entries.len());
        let mut columns = Vec::with_capacity(entries.len());
        for (i, (tok, vec)) in entries.into_iter().enumerate() {
            if vec.len() != d_w {
                return Err(Error::encoding(
                    format!("vocabulary[{tok}]"),
                    format!("word vector has length {}, expected {d_w}", vec.len()),
                ));
            }
            if vec.iter().any(|x| !x.is_finite()) {
                return Err(Error::encoding(
                    format!("vocabulary[{tok}]"),
                    "non-finite entry",
                ));
            }
            if index.insert(tok.clone(), i).is_some() {
                return Err(Error::encoding(
                    "vocabulary",
                    format!("duplicate token `{tok}`"),
                ));
            }
            tokens.push(tok);
            columns.push(vec);
        }
        let embeddings = Mat::from_columns(d_w, &columns)?;
        Ok(Vocabulary {
            tokens,
            index,
            embeddings,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn d_w(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn vector(&self, token: &str) -> Option<&[f64]> {
        self.index_of(token).map(|i| self.embeddings.col(i))
    }

    /// `d_w x |V|` matrix of word vectors.
    pub fn embeddings(&self) -> &Mat {
        &self.embeddings
    }

    /// Parses `token<TAB>v1 v2 ... v_dw` lines. Blank lines are skipped.
    pub fn parse_tsv(text: &str) -> std::result::Result<Self, DataError> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line_no = lineno + 1;
            if line.trim().is_empty() {
                continue;
            }
            let (tok, rest) = line.split_once('\t').ok_or_else(|| DataError::Vocab {
                line: line_no,
                detail: "missing tab between token and vector".into(),
            })?;
            let vec = rest
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| DataError::Vocab {
                    line: line_no,
                    detail: format!("bad number: {e}"),
                })?;
            if let Some((_, first)) = entries.first() {
                let first: &Vec<f64> = first;
                if first.len() != vec.len() {
                    return Err(DataError::Vocab {
                        line: line_no,
                        detail: format!(
                            "vector has {} entries, expected {}",
                            vec.len(),
                            first.len()
                        ),
                    });
                }
            }
            entries.push((tok.to_string(), vec));
        }
        Vocabulary::new(entries).map_err(|e| DataError::Vocab {
            line: 0,
            detail: e.to_string(),
        })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, tok) in self.tokens.iter().enumerate() {
            out.push_str(tok);
            out.push('\t');
            for (k, x) in self.embeddings.col(i).iter().enumerate() {
                if k > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{x}");
            }
            out.push('\n');
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> std::result::Result<Self, DataError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DataError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::parse_tsv(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::result::Result<(), DataError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| DataError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }
}

/// The learnable projections plus the fixed hyperparameters of the model.
///
/// `w1` is `d_w x d` and `w2` is `d_r x d_w`; these are the only parameters
/// that receive gradients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub w1: Mat,
    pub w2: Mat,
    pub lambda: f64,
    pub hops: usize,
    /// Row-softmax the inter-modal coattention instead of using raw inner
    /// products. Off by default.
    #[serde(default)]
    pub normalize_coattention: bool,
}

impl ModelParams {
    pub fn new(w1: Mat, w2: Mat, lambda: f64, hops: usize) -> Result<Self> {
        let p = ModelParams {
            w1,
            w2,
            lambda,
            hops,
            normalize_coattention: false,
        };
        p.validate()?;
        Ok(p)
    }

    /// Uniform(-a, a) initialisation with `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn init(dims: Dims, lambda: f64, hops: usize, seed: u64) -> Result<Self> {
        let mut rng = rng_for(seed, "init");
        let mut uniform = |rows: usize, cols: usize| {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.random_range(-a..a)).collect();
            Mat::from_col_major(rows, cols, data)
        };
        let w1 = uniform(dims.d_w, dims.d)?;
        let w2 = uniform(dims.d_r, dims.d_w)?;
        Self::new(w1, w2, lambda, hops)
    }

    pub fn dims(&self) -> Dims {
        Dims {
            d: self.w1.cols(),
            d_w: self.w1.rows(),
            d_r: self.w2.rows(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.w2.cols() != self.w1.rows() {
            return Err(Error::dim(
                "ModelParams",
                format!(
                    "W1 is {:?} but W2 is {:?}",
                    self.w1.shape(),
                    self.w2.shape()
                ),
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if self.hops == 0 {
            return Err(Error::Config("hop count must be >= 1".into()));
        }
        if !self.w1.is_finite() || !self.w2.is_finite() {
            return Err(Error::Config("non-finite parameter entries".into()));
        }
        Ok(())
    }
}

/// One question with its answer choices and both context modalities, before
/// any projection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawInstance {
    #[serde(rename = "q")]
    pub question: Vec<String>,
    pub answers: Vec<Vec<String>>,
    pub subtitles: Vec<Vec<String>>,
    /// `n` frames, each a list of regional feature vectors of length `d_r`.
    pub frames: Vec<Vec<Vec<f32>>>,
    pub gold: usize,
}

impl RawInstance {
    pub fn validate(&self, d_r: usize) -> Result<()> {
        if self.answers.len() != NUM_CHOICES {
            return Err(Error::encoding(
                "answers",
                format!(
                    "expected {NUM_CHOICES} choices, found {}",
                    self.answers.len()
                ),
            ));
        }
        if self.gold >= NUM_CHOICES {
            return Err(Error::encoding(
                "gold",
                format!("index {} out of range", self.gold),
            ));
        }
        if self.subtitles.is_empty() {
            return Err(Error::encoding("subtitles", "no subtitle sentences"));
        }
        if self.frames.is_empty() {
            return Err(Error::encoding("frames", "no frames"));
        }
        for (i, frame) in self.frames.iter().enumerate() {
            if frame.is_empty() {
                return Err(Error::encoding(format!("frames[{i}]"), "no regions"));
            }
            for (r, region) in frame.iter().enumerate() {
                if region.len() != d_r {
                    return Err(Error::encoding(
                        format!("frames[{i}][{r}]"),
                        format!("region has length {}, expected {d_r}", region.len()),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Number of subtitle sentences `m`.
    pub fn m(&self) -> usize {
        self.subtitles.len()
    }

    /// Number of frames `n`.
    pub fn n(&self) -> usize {
        self.frames.len()
    }
}

/// Encoded context and choices: `S` is `d x m`, `V` is `d x n`, `A` is `d x 5`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedInstance {
    pub s: Mat,
    pub v: Mat,
    pub q: Vec<f64>,
    pub a: Mat,
    pub gold: usize,
}

/// Mean of the word vectors of `tokens` (OOV tokens count as zero).
pub fn mean_word_vector(tokens: &[String], vocab: &Vocabulary) -> Result<Vec<f64>> {
    if tokens.is_empty() {
        return Err(Error::encoding("sentence", "empty token list"));
    }
    let mut acc = vec![0.0; vocab.d_w()];
    for tok in tokens {
        if let Some(v) = vocab.vector(tok) {
            crate::numerics::axpy(1.0, v, &mut acc);
        }
    }
    let inv = 1.0 / tokens.len() as f64;
    acc.iter_mut().for_each(|x| *x *= inv);
    Ok(acc)
}

/// Mean over tokens of `W1ᵀ wordvec(token)`.
pub fn encode_sentence(tokens: &[String], vocab: &Vocabulary, w1: &Mat) -> Result<Vec<f64>> {
    if w1.rows() != vocab.d_w() {
        return Err(Error::dim(
            "encode_sentence",
            format!(
                "W1 has {} rows, vocabulary d_w = {}",
                w1.rows(),
                vocab.d_w()
            ),
        ));
    }
    w1.tr_mul_vec(&mean_word_vector(tokens, vocab)?)
}

/// Intermediate values of the frame encoder, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct FramePooling {
    /// Mean over regions of the attended word-vector mixtures (`d_w`).
    pub pooled: Vec<f64>,
    /// `|V| x R` attention over vocabulary words, one column per region.
    pub attention: Mat,
}

/// Regions (`d_r x R`) → pooled word-space representation (`d_w`).
pub fn pool_frame(regions: &Mat, vocab: &Vocabulary, w2: &Mat) -> Result<FramePooling> {
    if regions.cols() == 0 {
        return Err(Error::encoding("frame", "no regions"));
    }
    if vocab.is_empty() {
        return Err(Error::encoding("frame", "empty vocabulary"));
    }
    if w2.rows() != regions.rows() || w2.cols() != vocab.d_w() {
        return Err(Error::dim(
            "pool_frame",
            format!(
                "W2 is {:?}, regions have d_r = {}, vocabulary d_w = {}",
                w2.shape(),
                regions.rows(),
                vocab.d_w()
            ),
        ));
    }
    let emb = vocab.embeddings();
    let z = w2.tr_mul(regions)?;
    let scores = emb.tr_mul(&z)?;
    let mut attention = Mat::zeros(scores.rows(), scores.cols());
    for r in 0..scores.cols() {
        let s = softmax(scores.col(r))?;
        attention.col_mut(r).copy_from_slice(&s);
    }
    let mixtures = emb.mul(&attention)?;
    let inv = 1.0 / regions.cols() as f64;
    let mut pooled = vec![0.0; vocab.d_w()];
    for col in mixtures.columns() {
        crate::numerics::axpy(inv, col, &mut pooled);
    }
    Ok(FramePooling { pooled, attention })
}

fn regions_to_mat(regions: &[Vec<f32>], d_r: usize) -> Result<Mat> {
    let cols: Vec<Vec<f64>> = regions
        .iter()
        .map(|r| r.iter().map(|&x| f64::from(x)).collect())
        .collect();
    Mat::from_columns(d_r, &cols)
}

/// Frame vector `W1ᵀ · mean_r(E · softmax(Eᵀ W2ᵀ r))`.
pub fn encode_frame(
    regions: &[Vec<f32>],
    vocab: &Vocabulary,
    w2: &Mat,
    w1: &Mat,
) -> Result<Vec<f64>> {
    if regions.is_empty() {
        return Err(Error::encoding("frame", "no regions"));
    }
    let mat = regions_to_mat(regions, w2.rows())?;
    let pooled = pool_frame(&mat, vocab, w2)?.pooled;
    w1.tr_mul_vec(&pooled)
}

/// Parameter-independent part of an instance: mean word vectors and region
/// matrices. Training prepares each instance once.
#[derive(Clone, Debug)]
pub struct PreparedInstance {
    pub question: Vec<f64>,
    /// `d_w x 5`
    pub answers: Mat,
    /// `d_w x m`
    pub subtitles: Mat,
    /// One `d_r x R` matrix per frame.
    pub frames: Vec<Mat>,
    pub gold: usize,
}

impl PreparedInstance {
    pub fn new(raw: &RawInstance, vocab: &Vocabulary, d_r: usize) -> Result<Self> {
        raw.validate(d_r)?;
        let d_w = vocab.d_w();
        let with_field = |field: String| {
            move |e: Error| match e {
                Error::Encoding { reason, .. } => Error::Encoding { field, reason },
                other => other,
            }
        };
        let question =
            mean_word_vector(&raw.question, vocab).map_err(with_field("question".into()))?;
        let answers = raw
            .answers
            .iter()
            .enumerate()
            .map(|(k, a)| mean_word_vector(a, vocab).map_err(with_field(format!("answers[{k}]"))))
            .collect::<Result<Vec<_>>>()?;
        let subtitles = raw
            .subtitles
            .iter()
            .enumerate()
            .map(|(i, s)| mean_word_vector(s, vocab).map_err(with_field(format!("subtitles[{i}]"))))
            .collect::<Result<Vec<_>>>()?;
        let frames = raw
            .frames
            .iter()
            .map(|f| regions_to_mat(f, d_r))
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedInstance {
            question,
            answers: Mat::from_columns(d_w, &answers)?,
            subtitles: Mat::from_columns(d_w, &subtitles)?,
            frames,
            gold: raw.gold,
        })
    }

    /// Projects through the current parameters, returning the frame caches
    /// and the pooled `d_w x n` frame matrix alongside the encoding.
    pub fn encode_with_cache(
        &self,
        vocab: &Vocabulary,
        params: &ModelParams,
    ) -> Result<(EncodedInstance, Vec<FramePooling>, Mat)> {
        let w1 = &params.w1;
        let poolings = self
            .frames
            .iter()
            .enumerate()
            .map(|(i, f)| {
                pool_frame(f, vocab, &params.w2).map_err(|e| match e {
                    Error::Encoding { reason, .. } => Error::Encoding {
                        field: format!("frames[{i}]"),
                        reason,
                    },
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let pooled_cols: Vec<&[f64]> = poolings.iter().map(|p| p.pooled.as_slice()).collect();
        let pooled = Mat::from_columns(vocab.d_w(), &pooled_cols)?;
        let enc = EncodedInstance {
            s: w1.tr_mul(&self.subtitles)?,
            v: w1.tr_mul(&pooled)?,
            q: w1.tr_mul_vec(&self.question)?,
            a: w1.tr_mul(&self.answers)?,
            gold: self.gold,
        };
        Ok((enc, poolings, pooled))
    }

    pub fn encode(&self, vocab: &Vocabulary, params: &ModelParams) -> Result<EncodedInstance> {
        Ok(self.encode_with_cache(vocab, params)?.0)
    }
}

/// Encodes every field of `raw` with the current parameters.
pub fn encode_instance(
    raw: &RawInstance,
    vocab: &Vocabulary,
    params: &ModelParams,
) -> Result<EncodedInstance> {
    if params.w1.rows() != vocab.d_w() {
        return Err(Error::dim(
            "encode_instance",
            format!(
                "W1 has {} rows, vocabulary d_w = {}",
                params.w1.rows(),
                vocab.d_w()
            ),
        ));
    }
    PreparedInstance::new(raw, vocab, params.dims().d_r)?.encode(vocab, params)
}
