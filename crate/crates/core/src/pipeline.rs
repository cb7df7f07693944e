//! Pipeline assembly: raw-text tokenization, component orchestration
//! (tagger → parser → ner → textcat), model persistence, staged training,
//! and the benchmark protocol.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::corpus::{holdout_split, kfold_split, Dataset, Sentence, Span, Token};
use crate::error::{Error, Result};
use crate::hash::Rng;
use crate::metrics::{MetricValue, MetricsReport};
use crate::ner::{register_ner, NerActionSet, NerModel};
use crate::nn::{read_blob, load_blob_into, write_blob, ParamStore, Tensor};
use crate::parser::{register_parser, ActionSet, ParserModel};
use crate::tagger::{register_tagger, TagSet, TaggerModel, TrainConfig};
use crate::textcat::{register_textcat, CatLabelSet, TextcatModel};
use crate::tok2vec::{pretrain, train_floret, FloretTable, Tok2Vec};

pub const FORMAT_VERSION: u32 = 1;
pub const MODELS_DIR_ENV: &str = "NLPIPE_MODELS";

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || "…—–“”‘’«»¿¡".contains(c)
}

/// Whitespace split, then leading/trailing punctuation peeled into
/// separate tokens. `has_space_after` is preserved so that `detokenize`
/// reproduces single-space-separated input exactly.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out: Vec<Token> = Vec::new();
    let pieces: Vec<&str> = text.split(' ').collect();
    let last = pieces.len().saturating_sub(1);
    for (pi, piece) in pieces.iter().enumerate() {
        if piece.is_empty() {
            // Consecutive or trailing space: fold into the previous token.
            if let Some(prev) = out.last_mut() {
                prev.has_space_after = true;
            }
            continue;
        }
        let spaced = pi < last;
        let chars: Vec<char> = piece.chars().collect();
        let mut start = 0usize;
        let mut end = chars.len();
        let mut lead: Vec<char> = Vec::new();
        let mut trail: Vec<char> = Vec::new();
        while start < end && is_punct(chars[start]) {
            lead.push(chars[start]);
            start += 1;
        }
        while end > start && is_punct(chars[end - 1]) {
            trail.push(chars[end - 1]);
            end -= 1;
        }
        trail.reverse();
        let mut parts: Vec<String> = Vec::new();
        parts.extend(lead.iter().map(|c| c.to_string()));
        if start < end {
            parts.push(chars[start..end].iter().collect());
        }
        parts.extend(trail.iter().map(|c| c.to_string()));
        let n_parts = parts.len();
        for (j, part) in parts.into_iter().enumerate() {
            out.push(Token { text: part, has_space_after: spaced && j + 1 == n_parts });
        }
    }
    out
}

pub fn detokenize(tokens: &[Token]) -> String {
    let mut out = String::new();
    for token in tokens {
        out.push_str(&token.text);
        if token.has_space_after {
            out.push(' ');
        }
    }
    out
}

/// One fully annotated document, the output of `Pipeline::apply`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedDoc {
    pub tokens: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub upos: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub heads: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub deprels: Option<Vec<String>>,
    pub ents: Vec<Span>,
    #[serde(skip_serializing_if = "IndexMap::is_empty", default)]
    pub cats: IndexMap<String, f64>,
}

/// Persisted model metadata (meta.json).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Meta {
    pub format_version: u32,
    pub name: String,
    pub version: String,
    pub lang: String,
    pub tier: String,
    pub components: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tags: Option<TagSet>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub deprels: Option<ActionSet>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ner_labels: Option<NerActionSet>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cat_labels: Option<CatLabelSet>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub vectors: Option<VectorsMeta>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VectorsMeta {
    pub buckets: usize,
    pub width: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub seeds: [u32; 2],
}

pub struct Pipeline {
    pub config: PipelineConfig,
    pub meta: Meta,
    pub tagger: Option<TaggerModel>,
    pub parser: Option<ParserModel>,
    pub ner: Option<NerModel>,
    pub textcat: Option<TextcatModel>,
    pub floret: Option<FloretTable>,
}

/// Datasets fed to staged training; any subset may be present.
#[derive(Default)]
pub struct TrainData {
    pub treebank_train: Dataset,
    pub treebank_dev: Dataset,
    pub ner_train: Dataset,
    pub ner_dev: Dataset,
    pub cat_train: Dataset,
    pub cat_dev: Dataset,
    /// Unannotated text for pretraining/vectors; falls back to the
    /// annotated training sets when empty.
    pub raw: Dataset,
}

impl TrainData {
    fn unlabeled(&self) -> Dataset {
        if !self.raw.is_empty() {
            return self.raw.clone();
        }
        let mut sentences = self.treebank_train.sentences.clone();
        sentences.extend(self.ner_train.sentences.clone());
        sentences.extend(self.cat_train.sentences.clone());
        Dataset::new(sentences)
    }
}

impl Pipeline {
    /// Run the staged training process: optional pretraining, optional
    /// static vectors, then each enabled component.
    pub fn train(config: &PipelineConfig, data: &TrainData) -> Result<Pipeline> {
        let encoder = Tok2Vec::new(config.tok2vec.clone());
        let stage = |name: &str, e: Error| Error::training(format!("stage {name} failed: {e}"));

        let floret = if config.vectors_enabled {
            Some(
                train_floret(&data.unlabeled(), &config.vectors)
                    .map_err(|e| stage("vectors", e))?,
            )
        } else {
            None
        };

        let pretrained = if config.pretrain_enabled {
            let (store, _losses) =
                pretrain(&encoder, &data.unlabeled(), &config.pretrain, floret.as_ref())
                    .map_err(|e| stage("pretraining", e))?;
            Some(store)
        } else {
            None
        };

        let tagger = if config.tagger_enabled {
            Some(
                TaggerModel::train(
                    encoder.clone(),
                    &data.treebank_train,
                    &data.treebank_dev,
                    pretrained.as_ref(),
                    &config.training,
                    floret.as_ref(),
                )
                .map_err(|e| stage("tagger", e))?,
            )
        } else {
            None
        };

        let parser = if config.parser_enabled {
            let (model, _excluded) = ParserModel::train(
                encoder.clone(),
                &data.treebank_train,
                &data.treebank_dev,
                pretrained.as_ref(),
                &config.training,
                floret.as_ref(),
            )
            .map_err(|e| stage("parser", e))?;
            Some(model)
        } else {
            None
        };

        let ner = if config.ner_enabled {
            Some(
                NerModel::train(
                    encoder.clone(),
                    &data.ner_train,
                    &data.ner_dev,
                    pretrained.as_ref(),
                    &config.training,
                    floret.as_ref(),
                )
                .map_err(|e| stage("ner", e))?,
            )
        } else {
            None
        };

        let textcat = if config.textcat_enabled {
            Some(
                TextcatModel::train(
                    encoder,
                    &data.cat_train,
                    &data.cat_dev,
                    pretrained.as_ref(),
                    &config.training,
                    floret.as_ref(),
                )
                .map_err(|e| stage("textcat", e))?,
            )
        } else {
            None
        };

        let mut components = Vec::new();
        if tagger.is_some() {
            components.push("tagger".to_string());
        }
        if parser.is_some() {
            components.push("parser".to_string());
        }
        if ner.is_some() {
            components.push("ner".to_string());
        }
        if textcat.is_some() {
            components.push("textcat".to_string());
        }
        let meta = Meta {
            format_version: FORMAT_VERSION,
            name: config.name.clone(),
            version: "0.1.0".to_string(),
            lang: config.lang.clone(),
            tier: config.tier.as_str().to_string(),
            components,
            tags: tagger.as_ref().map(|t| t.tags.clone()),
            deprels: parser.as_ref().map(|p| p.actions.clone()),
            ner_labels: ner.as_ref().map(|n| n.actions.clone()),
            cat_labels: textcat.as_ref().map(|t| t.labels.clone()),
            vectors: floret.as_ref().map(|f| VectorsMeta {
                buckets: f.buckets,
                width: f.width,
                n_min: f.n_min,
                n_max: f.n_max,
                seeds: f.seeds,
            }),
        };

        Ok(Pipeline { config: config.clone(), meta, tagger, parser, ner, textcat, floret })
    }

    /// Annotate pre-tokenized text. Never mutates the pipeline.
    pub fn apply_tokens(&self, tokens: Vec<Token>) -> AnnotatedDoc {
        let sent = Sentence { tokens, ..Default::default() };
        let floret = self.floret.as_ref();
        let upos = self.tagger.as_ref().map(|t| t.tag(&sent, floret));
        let (heads, deprels) = match &self.parser {
            Some(p) => {
                let (h, d) = p.parse(&sent, floret);
                (Some(h), Some(d))
            }
            None => (None, None),
        };
        let ents = self.ner.as_ref().map(|n| n.decode_entities(&sent, floret)).unwrap_or_default();
        let cats = match &self.textcat {
            Some(t) if !sent.is_empty() => {
                let probs = t.classify(&sent.texts(), floret);
                t.labels
                    .labels()
                    .iter()
                    .zip(probs)
                    .map(|(l, p)| (l.clone(), p as f64))
                    .collect()
            }
            _ => IndexMap::new(),
        };
        AnnotatedDoc {
            tokens: sent.texts().iter().map(|t| t.to_string()).collect(),
            upos,
            heads,
            deprels,
            ents,
            cats,
        }
    }

    pub fn apply(&self, text: &str) -> AnnotatedDoc {
        self.apply_tokens(tokenize(text))
    }

    /// Write meta.json, the resolved config, and one weight blob per
    /// component into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&self.meta)?)?;
        std::fs::write(dir.join("config.cfg"), self.config.render())?;
        let write_store = |file: &str, store: &ParamStore<f32>| -> Result<()> {
            let mut f = std::fs::File::create(dir.join(file))?;
            write_blob(&mut f, store)
        };
        if let Some(t) = &self.tagger {
            write_store("tagger.bin", &t.params)?;
        }
        if let Some(p) = &self.parser {
            write_store("parser.bin", &p.params)?;
        }
        if let Some(n) = &self.ner {
            write_store("ner.bin", &n.params)?;
        }
        if let Some(t) = &self.textcat {
            write_store("textcat.bin", &t.params)?;
        }
        if let Some(f) = &self.floret {
            let mut store = ParamStore::new();
            store.add("floret.weights".to_string(), f.weights.clone());
            write_store("vectors.bin", &store)?;
        }
        Ok(())
    }

    /// Load a model directory, either a literal path or a name resolved
    /// under `models_dir` (defaulting to the `NLPIPE_MODELS` env var).
    pub fn load(path_or_name: &str, models_dir: Option<&Path>) -> Result<Pipeline> {
        let mut searched = Vec::new();
        let direct = PathBuf::from(path_or_name);
        let dir = if direct.join("meta.json").is_file() {
            direct
        } else {
            searched.push(direct.display().to_string());
            let env_dir = std::env::var(MODELS_DIR_ENV).ok().map(PathBuf::from);
            let base = models_dir.map(Path::to_path_buf).or(env_dir);
            match base {
                Some(base) if base.join(path_or_name).join("meta.json").is_file() => {
                    base.join(path_or_name)
                }
                Some(base) => {
                    searched.push(base.join(path_or_name).display().to_string());
                    return Err(Error::data(format!(
                        "model {path_or_name:?} not found; searched: {}",
                        searched.join(", ")
                    )));
                }
                None => {
                    return Err(Error::data(format!(
                        "model {path_or_name:?} not found; searched: {} (set {MODELS_DIR_ENV} or pass --models-dir)",
                        searched.join(", ")
                    )));
                }
            }
        };
        Pipeline::load_dir(&dir)
    }

    pub fn load_dir(dir: &Path) -> Result<Pipeline> {
        let meta: Meta = serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::data(format!(
                "model format version {} unsupported (expected {FORMAT_VERSION})",
                meta.format_version
            )));
        }
        let config = PipelineConfig::from_file(&dir.join("config.cfg"))?;
        let encoder = Tok2Vec::new(config.tok2vec.clone());
        let read_store = |file: &str, mut store: ParamStore<f32>| -> Result<ParamStore<f32>> {
            let mut f = std::fs::File::open(dir.join(file))?;
            let entries = read_blob(&mut f)?;
            load_blob_into(&mut store, entries)?;
            Ok(store)
        };

        let floret = match &meta.vectors {
            Some(v) => {
                let mut store = ParamStore::new();
                store.add(
                    "floret.weights".to_string(),
                    Tensor::<f32>::zeros(&[v.buckets, v.width]),
                );
                let store = read_store("vectors.bin", store)?;
                Some(FloretTable {
                    buckets: v.buckets,
                    width: v.width,
                    n_min: v.n_min,
                    n_max: v.n_max,
                    seeds: v.seeds,
                    weights: store.value("floret.weights").clone(),
                })
            }
            None => None,
        };

        let mut rng = Rng::new(0);
        let tagger = match &meta.tags {
            Some(tags) => {
                let store = register_tagger::<f32>(&encoder, tags.len(), &mut rng);
                let params = read_store("tagger.bin", store)?;
                Some(TaggerModel { encoder: encoder.clone(), tags: tags.clone(), params })
            }
            None => None,
        };
        let parser = match &meta.deprels {
            Some(actions) => {
                let store = register_parser::<f32>(&encoder, actions.len(), &mut rng);
                let params = read_store("parser.bin", store)?;
                Some(ParserModel { encoder: encoder.clone(), actions: actions.clone(), params })
            }
            None => None,
        };
        let ner = match &meta.ner_labels {
            Some(actions) => {
                let store = register_ner::<f32>(&encoder, actions.len(), &mut rng);
                let params = read_store("ner.bin", store)?;
                Some(NerModel { encoder: encoder.clone(), actions: actions.clone(), params })
            }
            None => None,
        };
        let textcat = match &meta.cat_labels {
            Some(labels) => {
                let store = register_textcat::<f32>(&encoder, labels.len(), &mut rng);
                let params = read_store("textcat.bin", store)?;
                Some(TextcatModel { encoder, labels: labels.clone(), params })
            }
            None => None,
        };

        Ok(Pipeline { config, meta, tagger, parser, ner, textcat, floret })
    }
}

#[derive(Serialize, Deserialize)]
struct CatRecord {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    tokens: Option<Vec<String>>,
    label: String,
}

/// Read a text-categorization corpus from JSON lines; each record is
/// {"text": ..., "label": ...} or {"tokens": [...], "label": ...}.
pub fn read_cats_jsonl(text: &str) -> Result<Dataset> {
    let mut sentences = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: CatRecord = serde_json::from_str(line)
            .map_err(|e| Error::parse(lineno + 1, format!("invalid JSON record: {e}")))?;
        let tokens = match (&record.text, &record.tokens) {
            (Some(t), _) => tokenize(t),
            (None, Some(toks)) => toks.iter().map(|t| Token::new(t.clone())).collect(),
            (None, None) => {
                return Err(Error::parse(lineno + 1, "record needs \"text\" or \"tokens\""))
            }
        };
        sentences.push(Sentence { tokens, cat: Some(record.label), ..Default::default() });
    }
    Ok(Dataset::new(sentences))
}

pub fn write_cats_jsonl(ds: &Dataset) -> Result<String> {
    let mut out = String::new();
    for (i, sent) in ds.sentences.iter().enumerate() {
        let label = sent
            .cat
            .clone()
            .ok_or_else(|| Error::data(format!("sentence {i} has no category label")))?;
        let record = CatRecord {
            text: None,
            tokens: Some(sent.texts().iter().map(|t| t.to_string()).collect()),
            label,
        };
        out.push_str(&serde_json::to_string(&record)?);
        out.push('\n');
    }
    Ok(out)
}

/// Benchmark protocol: k-fold cross-validation for treebank tasks, T
/// independent trials with shifted seeds for held-out tasks.
pub fn benchmark(config: &PipelineConfig, data: &TrainData) -> Result<MetricsReport> {
    let mut report = MetricsReport::default();
    let encoder = Tok2Vec::new(config.tok2vec.clone());
    let k = config.folds;
    let t = config.trials;

    if config.tagger_enabled || config.parser_enabled {
        if data.treebank_train.is_empty() {
            return Err(Error::data("benchmark needs a treebank dataset"));
        }
        let folds = kfold_split(&data.treebank_train, k, config.seed)?;
        let mut accs = Vec::new();
        let mut uass = Vec::new();
        let mut lass = Vec::new();
        for (fold, (train, test)) in folds.iter().enumerate() {
            let cfg = TrainConfig { seed: config.seed + fold as u64, ..config.training.clone() };
            if config.tagger_enabled {
                let model = TaggerModel::train(
                    encoder.clone(),
                    train,
                    &Dataset::default(),
                    None,
                    &cfg,
                    None,
                )?;
                accs.push(model.accuracy(test, None)?);
            }
            if config.parser_enabled {
                let (model, _) = ParserModel::train(
                    encoder.clone(),
                    train,
                    &Dataset::default(),
                    None,
                    &cfg,
                    None,
                )?;
                let (uas, las) = model.attachment(test, None)?;
                uass.push(uas);
                lass.push(las);
            }
        }
        if config.tagger_enabled {
            report.insert("pos_accuracy", MetricValue::from_trials(accs)?);
            report.notes.push(format!("pos_accuracy: {k}-fold cross-validation"));
        }
        if config.parser_enabled {
            report.insert("uas", MetricValue::from_trials(uass)?);
            report.insert("las", MetricValue::from_trials(lass)?);
            report.notes.push(format!("uas/las: {k}-fold cross-validation"));
        }
    }

    if config.ner_enabled {
        if data.ner_train.is_empty() {
            return Err(Error::data("benchmark needs an NER dataset"));
        }
        let mut f1s = Vec::new();
        for trial in 0..t {
            let seed = config.seed + trial as u64;
            let (train, dev, test) = holdout_split(&data.ner_train, (0.8, 0.1, 0.1), seed)?;
            let cfg = TrainConfig { seed, ..config.training.clone() };
            let model = NerModel::train(encoder.clone(), &train, &dev, None, &cfg, None)?;
            let (_, _, f1) = model.f_score(&test, None);
            f1s.push(f1);
        }
        report.insert("ner_f1", MetricValue::from_trials(f1s)?);
        report.notes.push(format!("ner_f1: {t} held-out trials"));
    }

    if config.textcat_enabled {
        if data.cat_train.is_empty() {
            return Err(Error::data("benchmark needs a text categorization dataset"));
        }
        let mut f1s = Vec::new();
        for trial in 0..t {
            let seed = config.seed + trial as u64;
            let (train, dev, test) = holdout_split(&data.cat_train, (0.8, 0.1, 0.1), seed)?;
            let cfg = TrainConfig { seed, ..config.training.clone() };
            let model = TextcatModel::train(encoder.clone(), &train, &dev, None, &cfg, None)?;
            f1s.push(model.macro_f1(&test)?);
        }
        report.insert("textcat_f1", MetricValue::from_trials(f1s)?);
        report.notes.push(format!("textcat_f1: {t} held-out trials"));
    }

    Ok(report)
}
