//! INI-style pipeline configuration. Every default is materialized into
//! the resolved config that gets saved with a trained model, and unknown
//! sections or keys are rejected up front.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::nn::AdamConfig;
use crate::tagger::TrainConfig;
use crate::tok2vec::{FloretConfig, PretrainConfig, Tok2VecConfig};

/// Raw parsed INI: section → key → value, insertion-ordered.
#[derive(Debug, Default)]
pub struct Ini {
    pub sections: IndexMap<String, IndexMap<String, String>>,
}

impl Ini {
    pub fn parse(text: &str) -> Result<Ini> {
        let mut ini = Ini::default();
        let mut current: Option<String> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::parse(lineno + 1, "unterminated section header"))?
                    .trim()
                    .to_string();
                if name.is_empty() {
                    return Err(Error::parse(lineno + 1, "empty section name"));
                }
                ini.sections.entry(name.clone()).or_default();
                current = Some(name);
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(lineno + 1, format!("expected key = value, got {line:?}")))?;
            let section = current
                .clone()
                .ok_or_else(|| Error::parse(lineno + 1, "key outside any section"))?;
            ini.sections
                .get_mut(&section)
                .expect("section inserted above")
                .insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(ini)
    }
}

/// Typed accessor that consumes keys so leftovers can be rejected.
struct Section {
    name: String,
    keys: IndexMap<String, String>,
}

impl Section {
    fn take(&mut self, key: &str) -> Option<String> {
        self.keys.shift_remove(key)
    }

    fn string(&mut self, key: &str, default: &str) -> String {
        self.take(key).unwrap_or_else(|| default.to_string())
    }

    fn opt_string(&mut self, key: &str) -> Option<String> {
        self.take(key).filter(|v| !v.is_empty())
    }

    fn parse_as<T: std::str::FromStr>(&self, key: &str, value: &str) -> Result<T> {
        value.parse().map_err(|_| {
            Error::config(format!(
                "invalid value {value:?} for {}.{key}",
                self.name
            ))
        })
    }

    fn usize(&mut self, key: &str, default: usize) -> Result<usize> {
        match self.take(key) {
            Some(v) => self.parse_as(key, &v),
            None => Ok(default),
        }
    }

    fn u64(&mut self, key: &str, default: u64) -> Result<u64> {
        match self.take(key) {
            Some(v) => self.parse_as(key, &v),
            None => Ok(default),
        }
    }

    fn f64(&mut self, key: &str, default: f64) -> Result<f64> {
        match self.take(key) {
            Some(v) => self.parse_as(key, &v),
            None => Ok(default),
        }
    }

    fn bool(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.take(key).as_deref() {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(Error::config(format!(
                "invalid boolean {v:?} for {}.{key} (use true/false)",
                self.name
            ))),
        }
    }

    fn finish(self) -> Result<()> {
        if let Some(key) = self.keys.keys().next() {
            return Err(Error::config(format!("unknown key {key:?} in section [{}]", self.name)));
        }
        Ok(())
    }
}

/// Model capacity tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tier {
    Md,
    Lg,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Md => "md",
            Tier::Lg => "lg",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PathsConfig {
    pub train: Option<String>,
    pub dev: Option<String>,
    pub raw: Option<String>,
    pub ner_train: Option<String>,
    pub ner_dev: Option<String>,
    pub cat_train: Option<String>,
    pub cat_dev: Option<String>,
    pub output: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub seed: u64,
    pub tier: Tier,
    pub name: String,
    pub lang: String,
    pub pretrain_enabled: bool,
    pub pretrain: PretrainConfig,
    pub vectors_enabled: bool,
    pub vectors: FloretConfig,
    pub tok2vec: Tok2VecConfig,
    pub tagger_enabled: bool,
    pub parser_enabled: bool,
    pub ner_enabled: bool,
    pub textcat_enabled: bool,
    pub training: TrainConfig,
    pub folds: usize,
    pub trials: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: PathsConfig::default(),
            seed: 0,
            tier: Tier::Md,
            name: "pipeline".to_string(),
            lang: "tl".to_string(),
            pretrain_enabled: false,
            pretrain: PretrainConfig::default(),
            vectors_enabled: false,
            vectors: FloretConfig::default(),
            tok2vec: Tok2VecConfig::default(),
            tagger_enabled: true,
            parser_enabled: true,
            ner_enabled: true,
            textcat_enabled: false,
            training: TrainConfig::default(),
            folds: 10,
            trials: 5,
        }
    }
}

const KNOWN_SECTIONS: &[&str] = &[
    "paths",
    "system",
    "pretraining",
    "vectors",
    "components.tok2vec",
    "components.tagger",
    "components.parser",
    "components.ner",
    "components.textcat",
    "training",
    "evaluation",
];

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<PipelineConfig> {
        let ini = Ini::parse(text)?;
        for name in ini.sections.keys() {
            if !KNOWN_SECTIONS.contains(&name.as_str()) {
                return Err(Error::config(format!("unknown section [{name}]")));
            }
        }
        let mut cfg = PipelineConfig::default();
        let section = |name: &str| -> Section {
            Section {
                name: name.to_string(),
                keys: ini.sections.get(name).cloned().unwrap_or_default(),
            }
        };

        let mut s = section("paths");
        cfg.paths.train = s.opt_string("train");
        cfg.paths.dev = s.opt_string("dev");
        cfg.paths.raw = s.opt_string("raw");
        cfg.paths.ner_train = s.opt_string("ner_train");
        cfg.paths.ner_dev = s.opt_string("ner_dev");
        cfg.paths.cat_train = s.opt_string("cat_train");
        cfg.paths.cat_dev = s.opt_string("cat_dev");
        cfg.paths.output = s.opt_string("output");
        s.finish()?;

        let mut s = section("system");
        cfg.seed = s.u64("seed", 0)?;
        cfg.name = s.string("name", "pipeline");
        cfg.lang = s.string("lang", "tl");
        cfg.tier = match s.string("tier", "md").as_str() {
            "md" => Tier::Md,
            "lg" => Tier::Lg,
            other => return Err(Error::config(format!("unknown tier {other:?} (use md or lg)"))),
        };
        s.finish()?;

        let mut s = section("pretraining");
        cfg.pretrain_enabled = s.bool("enabled", false)?;
        cfg.pretrain.n_bytes = s.usize("n_bytes", cfg.pretrain.n_bytes)?;
        cfg.pretrain.epochs = s.usize("epochs", cfg.pretrain.epochs)?;
        cfg.pretrain.batch_size = s.usize("batch_size", cfg.pretrain.batch_size)?;
        cfg.pretrain.adam.lr = s.f64("learning_rate", cfg.pretrain.adam.lr)?;
        s.finish()?;

        let mut s = section("vectors");
        cfg.vectors_enabled = s.bool("enabled", false)?;
        cfg.vectors.buckets = s.usize("buckets", cfg.vectors.buckets)?;
        cfg.vectors.width = s.usize("width", cfg.vectors.width)?;
        cfg.vectors.n_min = s.usize("n_min", cfg.vectors.n_min)?;
        cfg.vectors.n_max = s.usize("n_max", cfg.vectors.n_max)?;
        cfg.vectors.window = s.usize("window", cfg.vectors.window)?;
        cfg.vectors.negatives = s.usize("negatives", cfg.vectors.negatives)?;
        cfg.vectors.epochs = s.usize("epochs", cfg.vectors.epochs)?;
        cfg.vectors.lr = s.f64("learning_rate", cfg.vectors.lr)?;
        s.finish()?;

        let mut s = section("components.tok2vec");
        cfg.tok2vec.width = s.usize("width", cfg.tok2vec.width)?;
        cfg.tok2vec.depth = s.usize("depth", cfg.tok2vec.depth)?;
        cfg.tok2vec.window = s.usize("window", cfg.tok2vec.window)?;
        cfg.tok2vec.attr_width = s.usize("attr_width", cfg.tok2vec.attr_width)?;
        cfg.tok2vec.n_hashes = s.usize("n_hashes", cfg.tok2vec.n_hashes)?;
        cfg.tok2vec.table_rows[0] = s.usize("rows_norm", cfg.tok2vec.table_rows[0])?;
        cfg.tok2vec.table_rows[1] = s.usize("rows_prefix", cfg.tok2vec.table_rows[1])?;
        cfg.tok2vec.table_rows[2] = s.usize("rows_suffix", cfg.tok2vec.table_rows[2])?;
        cfg.tok2vec.table_rows[3] = s.usize("rows_shape", cfg.tok2vec.table_rows[3])?;
        s.finish()?;

        for (name, flag, default) in [
            ("components.tagger", &mut cfg.tagger_enabled, true),
            ("components.parser", &mut cfg.parser_enabled, true),
            ("components.ner", &mut cfg.ner_enabled, true),
            ("components.textcat", &mut cfg.textcat_enabled, false),
        ] {
            let mut s = section(name);
            *flag = s.bool("enabled", default)?;
            s.finish()?;
        }

        let mut s = section("training");
        cfg.training.epochs = s.usize("epochs", cfg.training.epochs)?;
        cfg.training.patience = s.usize("patience", cfg.training.patience)?;
        cfg.training.batch_size = s.usize("batch_size", cfg.training.batch_size)?;
        cfg.training.adam.lr = s.f64("learning_rate", cfg.training.adam.lr)?;
        cfg.training.adam.beta1 = s.f64("beta1", cfg.training.adam.beta1)?;
        cfg.training.adam.beta2 = s.f64("beta2", cfg.training.adam.beta2)?;
        cfg.training.adam.eps = s.f64("eps", cfg.training.adam.eps)?;
        cfg.training.adam.grad_clip = s.f64("grad_clip", cfg.training.adam.grad_clip)?;
        s.finish()?;

        let mut s = section("evaluation");
        cfg.folds = s.usize("folds", 10)?;
        cfg.trials = s.usize("trials", 5)?;
        s.finish()?;

        // The lg tier wires floret vectors into the encoder.
        if cfg.tier == Tier::Lg {
            cfg.vectors_enabled = true;
            cfg.tok2vec.floret_width = cfg.vectors.width;
            if cfg.tok2vec.width == Tok2VecConfig::default().width {
                cfg.tok2vec.width = 128;
            }
        } else if cfg.vectors_enabled {
            cfg.tok2vec.floret_width = cfg.vectors.width;
        }

        if cfg.folds < 2 {
            return Err(Error::config("evaluation.folds must be at least 2"));
        }
        if cfg.trials < 1 {
            return Err(Error::config("evaluation.trials must be at least 1"));
        }
        cfg.pretrain.seed = cfg.seed;
        cfg.vectors.seed = cfg.seed;
        cfg.training.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path)?;
        PipelineConfig::parse(&text)
    }

    /// Serialize with every value materialized; parse(render(c)) == c.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut push = |s: &str| {
            out.push_str(s);
            out.push('\n');
        };
        push("[paths]");
        for (key, value) in [
            ("train", &self.paths.train),
            ("dev", &self.paths.dev),
            ("raw", &self.paths.raw),
            ("ner_train", &self.paths.ner_train),
            ("ner_dev", &self.paths.ner_dev),
            ("cat_train", &self.paths.cat_train),
            ("cat_dev", &self.paths.cat_dev),
            ("output", &self.paths.output),
        ] {
            if let Some(v) = value {
                push(&format!("{key} = {v}"));
            }
        }
        push("");
        push("[system]");
        push(&format!("seed = {}", self.seed));
        push(&format!("name = {}", self.name));
        push(&format!("lang = {}", self.lang));
        push(&format!("tier = {}", self.tier.as_str()));
        push("");
        push("[pretraining]");
        push(&format!("enabled = {}", self.pretrain_enabled));
        push(&format!("n_bytes = {}", self.pretrain.n_bytes));
        push(&format!("epochs = {}", self.pretrain.epochs));
        push(&format!("batch_size = {}", self.pretrain.batch_size));
        push(&format!("learning_rate = {}", self.pretrain.adam.lr));
        push("");
        push("[vectors]");
        push(&format!("enabled = {}", self.vectors_enabled));
        push(&format!("buckets = {}", self.vectors.buckets));
        push(&format!("width = {}", self.vectors.width));
        push(&format!("n_min = {}", self.vectors.n_min));
        push(&format!("n_max = {}", self.vectors.n_max));
        push(&format!("window = {}", self.vectors.window));
        push(&format!("negatives = {}", self.vectors.negatives));
        push(&format!("epochs = {}", self.vectors.epochs));
        push(&format!("learning_rate = {}", self.vectors.lr));
        push("");
        push("[components.tok2vec]");
        push(&format!("width = {}", self.tok2vec.width));
        push(&format!("depth = {}", self.tok2vec.depth));
        push(&format!("window = {}", self.tok2vec.window));
        push(&format!("attr_width = {}", self.tok2vec.attr_width));
        push(&format!("n_hashes = {}", self.tok2vec.n_hashes));
        push(&format!("rows_norm = {}", self.tok2vec.table_rows[0]));
        push(&format!("rows_prefix = {}", self.tok2vec.table_rows[1]));
        push(&format!("rows_suffix = {}", self.tok2vec.table_rows[2]));
        push(&format!("rows_shape = {}", self.tok2vec.table_rows[3]));
        push("");
        for (name, flag) in [
            ("components.tagger", self.tagger_enabled),
            ("components.parser", self.parser_enabled),
            ("components.ner", self.ner_enabled),
            ("components.textcat", self.textcat_enabled),
        ] {
            push(&format!("[{name}]"));
            push(&format!("enabled = {flag}"));
            push("");
        }
        push("[training]");
        push(&format!("epochs = {}", self.training.epochs));
        push(&format!("patience = {}", self.training.patience));
        push(&format!("batch_size = {}", self.training.batch_size));
        push(&format!("learning_rate = {}", self.training.adam.lr));
        push(&format!("beta1 = {}", self.training.adam.beta1));
        push(&format!("beta2 = {}", self.training.adam.beta2));
        push(&format!("eps = {}", self.training.adam.eps));
        push(&format!("grad_clip = {}", self.training.adam.grad_clip));
        push("");
        push("[evaluation]");
        push(&format!("folds = {}", self.folds));
        push(&format!("trials = {}", self.trials));
        out
    }

    /// Adam settings are shared between stages apart from learning rate.
    pub fn adam(&self) -> AdamConfig {
        self.training.adam.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_yields_defaults() {
        let cfg = PipelineConfig::parse("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.folds, 10);
        assert_eq!(cfg.trials, 5);
        assert_eq!(cfg.tok2vec.width, 96);
    }

    #[test]
    fn parses_values_and_comments() {
        let text = "\n# comment\n[system]\nseed = 42\ntier = lg\n; another\n[training]\nepochs = 7\n";
        let cfg = PipelineConfig::parse(text).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.tier, Tier::Lg);
        assert_eq!(cfg.training.epochs, 7);
        assert_eq!(cfg.training.seed, 42);
    }

    #[test]
    fn lg_tier_wires_floret() {
        let cfg = PipelineConfig::parse("[system]\ntier = lg\n").unwrap();
        assert!(cfg.vectors_enabled);
        assert_eq!(cfg.tok2vec.floret_width, cfg.vectors.width);
        assert_eq!(cfg.tok2vec.width, 128);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(PipelineConfig::parse("[system]\nsead = 1\n").is_err());
        assert!(PipelineConfig::parse("[sistema]\nseed = 1\n").is_err());
        assert!(PipelineConfig::parse("[training]\nmomentum = 0.9\n").is_err());
    }

    #[test]
    fn malformed_lines_rejected() {
        assert!(PipelineConfig::parse("[system\nseed = 1\n").is_err());
        assert!(PipelineConfig::parse("seed = 1\n").is_err());
        assert!(PipelineConfig::parse("[system]\nseed\n").is_err());
        assert!(PipelineConfig::parse("[system]\nseed = abc\n").is_err());
        assert!(PipelineConfig::parse("[system]\ntier = trf\n").is_err());
    }

    #[test]
    fn render_round_trips() {
        let text = "[system]\nseed = 9\ntier = lg\n[paths]\ntrain = a.conllu\n[evaluation]\nfolds = 5\ntrials = 3\n";
        let cfg = PipelineConfig::parse(text).unwrap();
        let rendered = cfg.render();
        let reparsed = PipelineConfig::parse(&rendered).unwrap();
        assert_eq!(cfg, reparsed);
        // Defaults are materialized in the rendered form.
        assert!(rendered.contains("batch_size = 8"));
        assert!(rendered.contains("grad_clip = 10"));
    }
}
