//! Per-token POS classification head over the tok2vec output.

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Sentence};
use crate::error::{Error, Result};
use crate::hash::Rng;
use crate::metrics::tag_accuracy;
use crate::nn::{
    init_linear, linear_backward, linear_forward, softmax_xent, AdamConfig, ParamStore, Real,
};
use crate::tok2vec::{FloretTable, Tok2Vec};

/// Ordered, serialization-stable tag inventory.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TagSet {
    labels: Vec<String>,
}

impl TagSet {
    pub fn from_labels(mut labels: Vec<String>) -> Self {
        labels.sort();
        labels.dedup();
        TagSet { labels }
    }

    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let mut labels = Vec::new();
        for (i, sent) in ds.sentences.iter().enumerate() {
            let upos = sent
                .upos
                .as_ref()
                .ok_or_else(|| Error::data(format!("sentence {i} has no upos annotations")))?;
            labels.extend(upos.iter().cloned());
        }
        Ok(Self::from_labels(labels))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 100, patience: 10, batch_size: 8, adam: AdamConfig::default(), seed: 0 }
    }
}

pub struct TaggerModel {
    pub encoder: Tok2Vec,
    pub tags: TagSet,
    pub params: ParamStore<f32>,
}

fn register_head<F: Real>(store: &mut ParamStore<F>, width: usize, n_tags: usize, rng: &mut Rng) {
    init_linear(store, "tag", width, n_tags, rng);
}

/// Loss and gradients for one sentence; shared by training and grad checks.
pub fn tagger_loss<F: Real>(
    encoder: &Tok2Vec,
    store: &mut ParamStore<F>,
    texts: &[&str],
    gold: &[usize],
    floret: Option<&FloretTable>,
) -> Result<F> {
    let tape = encoder.forward(store, texts, floret);
    let logits = linear_forward(&tape.output, store.value("tag.w"), store.value("tag.b"))?;
    let (loss, d_logits) = softmax_xent(&logits, gold)?;
    let (d_ctx, dw, db) = linear_backward(&tape.output, store.value("tag.w"), &d_logits);
    store.add_grad("tag.w", &dw);
    store.add_grad("tag.b", &db);
    encoder.backward(store, &tape, &d_ctx);
    Ok(loss)
}

/// Register every tagger parameter (encoder + head) into a fresh store.
pub fn register_tagger<F: Real>(
    encoder: &Tok2Vec,
    n_tags: usize,
    rng: &mut Rng,
) -> ParamStore<F> {
    let mut store = ParamStore::new();
    encoder.register(&mut store, rng);
    register_head(&mut store, encoder.cfg.width, n_tags, rng);
    store
}

impl TaggerModel {
    /// Train with early stopping on dev tag accuracy. `init` provides
    /// pretrained encoder weights to start from.
    pub fn train(
        encoder: Tok2Vec,
        train: &Dataset,
        dev: &Dataset,
        init: Option<&ParamStore<f32>>,
        cfg: &TrainConfig,
        floret: Option<&FloretTable>,
    ) -> Result<TaggerModel> {
        if train.is_empty() {
            return Err(Error::training("tagger training set is empty"));
        }
        let tags = TagSet::from_dataset(train)?;
        let mut rng = Rng::new(cfg.seed);
        let mut store = register_tagger::<f32>(&encoder, tags.len(), &mut rng);
        if let Some(pretrained) = init {
            copy_encoder_weights(&encoder, pretrained, &mut store);
        }

        let gold: Vec<Vec<usize>> = train
            .sentences
            .iter()
            .map(|s| {
                s.upos
                    .as_ref()
                    .expect("validated above")
                    .iter()
                    .map(|t| tags.index(t).expect("tag from training inventory"))
                    .collect()
            })
            .collect();

        let mut best: Option<(f64, ParamStore<f32>)> = None;
        let mut since_best = 0usize;
        let mut order: Vec<usize> = (0..train.len()).collect();
        for _epoch in 0..cfg.epochs {
            rng.shuffle(&mut order);
            for chunk in order.chunks(cfg.batch_size.max(1)) {
                store.zero_grads();
                for &si in chunk {
                    let sent = &train.sentences[si];
                    if sent.is_empty() {
                        continue;
                    }
                    tagger_loss(&encoder, &mut store, &sent.texts(), &gold[si], floret)?;
                }
                store.adam_step(&cfg.adam)?;
            }

            let model = TaggerModel { encoder: encoder.clone(), tags: tags.clone(), params: store.cast() };
            let eval_set = if dev.is_empty() { train } else { dev };
            let score = model.accuracy(eval_set, floret)?;
            let improved = best.as_ref().map_or(true, |(b, _)| score > *b);
            if improved {
                best = Some((score, store.cast()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    break;
                }
            }
        }

        let (_, params) = best.expect("at least one epoch ran");
        Ok(TaggerModel { encoder, tags, params })
    }

    /// Greedy per-token argmax; ties break toward the lowest label index.
    pub fn tag(&self, sent: &Sentence, floret: Option<&FloretTable>) -> Vec<String> {
        if sent.is_empty() {
            return Vec::new();
        }
        let tape = self.encoder.forward(&self.params, &sent.texts(), floret);
        let logits = linear_forward(&tape.output, self.params.value("tag.w"), self.params.value("tag.b"))
            .expect("head shapes fixed at training time");
        (0..logits.rows())
            .map(|i| {
                let row = logits.row(i);
                let mut best = 0usize;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                self.tags.label(best).to_string()
            })
            .collect()
    }

    /// Tag accuracy over a dataset with gold upos. Unknown gold tags score
    /// as errors rather than failing.
    pub fn accuracy(&self, ds: &Dataset, floret: Option<&FloretTable>) -> Result<f64> {
        let mut gold_all = Vec::new();
        let mut pred_all = Vec::new();
        for (i, sent) in ds.sentences.iter().enumerate() {
            let gold = sent
                .upos
                .as_ref()
                .ok_or_else(|| Error::data(format!("sentence {i} has no upos annotations")))?;
            gold_all.extend(gold.iter().cloned());
            pred_all.extend(self.tag(sent, floret));
        }
        tag_accuracy(&gold_all, &pred_all)
    }
}

/// Copy encoder weight values from a pretrained store into a component's
/// own store (per-component copies, shared initialization).
pub fn copy_encoder_weights(
    encoder: &Tok2Vec,
    from: &ParamStore<f32>,
    to: &mut ParamStore<f32>,
) {
    for name in encoder.param_names() {
        *to.value_mut(&name) = from.value(&name).clone();
    }
}
