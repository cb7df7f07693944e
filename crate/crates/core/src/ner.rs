//! Transition-based named-entity chunker: per-token greedy decoding over
//! BILUO actions with hard legality constraints, so every decode yields a
//! well-formed tag sequence by construction.

use serde::{Deserialize, Serialize};

use crate::corpus::{biluo_to_spans, spans_to_biluo, Dataset, Sentence, Span};
use crate::error::{Error, Result};
use crate::hash::Rng;
use crate::metrics::span_prf;
use crate::nn::{init_linear, linear_backward, linear_forward, softmax_xent, ParamStore, Real};
use crate::tagger::{copy_encoder_weights, TrainConfig};
use crate::tok2vec::{FloretTable, Tok2Vec};

/// One BILUO action, labels open-set (PER/ORG/LOC in the shipped corpora).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NerAction {
    Out,
    Begin(String),
    In(String),
    Last(String),
    Unit(String),
}

impl NerAction {
    pub fn tag(&self) -> String {
        match self {
            NerAction::Out => "O".to_string(),
            NerAction::Begin(t) => format!("B-{t}"),
            NerAction::In(t) => format!("I-{t}"),
            NerAction::Last(t) => format!("L-{t}"),
            NerAction::Unit(t) => format!("U-{t}"),
        }
    }

    pub fn from_tag(tag: &str) -> Result<NerAction> {
        if tag == "O" {
            return Ok(NerAction::Out);
        }
        match tag.split_once('-') {
            Some(("B", t)) => Ok(NerAction::Begin(t.to_string())),
            Some(("I", t)) => Ok(NerAction::In(t.to_string())),
            Some(("L", t)) => Ok(NerAction::Last(t.to_string())),
            Some(("U", t)) => Ok(NerAction::Unit(t.to_string())),
            _ => Err(Error::data(format!("invalid BILUO tag {tag:?}"))),
        }
    }
}

/// Legality of `next` given the previous action (`None` at sentence
/// start). When `is_last` the sequence must not end inside an open entity,
/// so B/I are additionally masked outside entities and I inside.
pub fn legal_next(prev: Option<&NerAction>, next: &NerAction, is_last: bool) -> bool {
    match prev {
        // Outside an entity: anything that does not continue one.
        None | Some(NerAction::Out) | Some(NerAction::Last(_)) | Some(NerAction::Unit(_)) => {
            match next {
                NerAction::In(_) | NerAction::Last(_) => false,
                NerAction::Begin(_) => !is_last,
                NerAction::Out | NerAction::Unit(_) => true,
            }
        }
        // Inside an entity of type t: only continue or close it.
        Some(NerAction::Begin(t)) | Some(NerAction::In(t)) => match next {
            NerAction::In(u) => !is_last && u == t,
            NerAction::Last(u) => u == t,
            _ => false,
        },
    }
}

/// Serialization-stable action inventory: O first, then B/I/L/U per label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NerActionSet {
    pub labels: Vec<String>,
}

impl NerActionSet {
    pub fn from_dataset(ds: &Dataset) -> Self {
        let mut labels: Vec<String> = ds
            .sentences
            .iter()
            .flat_map(|s| s.ents.iter().map(|e| e.label.clone()))
            .collect();
        labels.sort();
        labels.dedup();
        NerActionSet { labels }
    }

    pub fn len(&self) -> usize {
        1 + 4 * self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn action(&self, index: usize) -> NerAction {
        if index == 0 {
            return NerAction::Out;
        }
        let label = self.labels[(index - 1) / 4].clone();
        match (index - 1) % 4 {
            0 => NerAction::Begin(label),
            1 => NerAction::In(label),
            2 => NerAction::Last(label),
            _ => NerAction::Unit(label),
        }
    }

    pub fn index(&self, action: &NerAction) -> Option<usize> {
        let (label, off) = match action {
            NerAction::Out => return Some(0),
            NerAction::Begin(t) => (t, 0),
            NerAction::In(t) => (t, 1),
            NerAction::Last(t) => (t, 2),
            NerAction::Unit(t) => (t, 3),
        };
        self.labels.iter().position(|l| l == label).map(|i| 1 + 4 * i + off)
    }
}

/// Register NER parameters (encoder + linear action head) in a new store.
pub fn register_ner<F: Real>(encoder: &Tok2Vec, n_actions: usize, rng: &mut Rng) -> ParamStore<F> {
    let mut store = ParamStore::new();
    encoder.register(&mut store, rng);
    init_linear(&mut store, "ner", encoder.cfg.width, n_actions, rng);
    store
}

/// Cross-entropy over the gold BILUO action sequence of one sentence.
/// Shared by training and gradient checks.
pub fn ner_loss<F: Real>(
    encoder: &Tok2Vec,
    actions: &NerActionSet,
    store: &mut ParamStore<F>,
    sent: &Sentence,
    floret: Option<&FloretTable>,
) -> Result<F> {
    let tags = spans_to_biluo(sent.len(), &sent.ents)?;
    let gold: Vec<usize> = tags
        .iter()
        .map(|t| {
            let a = NerAction::from_tag(t)?;
            actions
                .index(&a)
                .ok_or_else(|| Error::data(format!("entity label of {t:?} not in inventory")))
        })
        .collect::<Result<_>>()?;
    let tape = encoder.forward(store, &sent.texts(), floret);
    let logits = linear_forward(&tape.output, store.value("ner.w"), store.value("ner.b"))?;
    let (loss, d_logits) = softmax_xent(&logits, &gold)?;
    let (d_ctx, dw, db) = linear_backward(&tape.output, store.value("ner.w"), &d_logits);
    store.add_grad("ner.w", &dw);
    store.add_grad("ner.b", &db);
    encoder.backward(store, &tape, &d_ctx);
    Ok(loss)
}

pub struct NerModel {
    pub encoder: Tok2Vec,
    pub actions: NerActionSet,
    pub params: ParamStore<f32>,
}

impl NerModel {
    /// Train with early stopping on dev span F1 (training-set F1 when the
    /// dev set is empty). Overlapping gold spans fail at conversion.
    pub fn train(
        encoder: Tok2Vec,
        train: &Dataset,
        dev: &Dataset,
        init: Option<&ParamStore<f32>>,
        cfg: &TrainConfig,
        floret: Option<&FloretTable>,
    ) -> Result<NerModel> {
        let actions = NerActionSet::from_dataset(train);
        let usable: Vec<usize> = (0..train.len()).filter(|&i| !train.sentences[i].is_empty()).collect();
        if usable.is_empty() {
            return Err(Error::training("no sentences to train the NER component"));
        }

        let mut rng = Rng::new(cfg.seed);
        let mut store = register_ner::<f32>(&encoder, actions.len(), &mut rng);
        if let Some(pretrained) = init {
            copy_encoder_weights(&encoder, pretrained, &mut store);
        }

        let mut best: Option<(f64, ParamStore<f32>)> = None;
        let mut since_best = 0usize;
        let mut order = usable.clone();
        for _epoch in 0..cfg.epochs {
            rng.shuffle(&mut order);
            for chunk in order.chunks(cfg.batch_size.max(1)) {
                store.zero_grads();
                for &si in chunk {
                    ner_loss(&encoder, &actions, &mut store, &train.sentences[si], floret)?;
                }
                store.adam_step(&cfg.adam)?;
            }

            let model = NerModel {
                encoder: encoder.clone(),
                actions: actions.clone(),
                params: store.cast(),
            };
            let eval_set = if dev.is_empty() { train } else { dev };
            let (_, _, f1) = model.f_score(eval_set, floret);
            let improved = best.as_ref().map_or(true, |(b, _)| f1 > *b);
            if improved {
                best = Some((f1, store.cast()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    break;
                }
            }
        }

        let (_, params) = best.expect("at least one epoch ran");
        Ok(NerModel { encoder, actions, params })
    }

    /// Constrained greedy decode to BILUO tags (always well-formed).
    pub fn decode_tags(&self, sent: &Sentence, floret: Option<&FloretTable>) -> Vec<String> {
        let n = sent.len();
        if n == 0 {
            return Vec::new();
        }
        let tape = self.encoder.forward(&self.params, &sent.texts(), floret);
        let logits = linear_forward(&tape.output, self.params.value("ner.w"), self.params.value("ner.b"))
            .expect("head shapes fixed at training time");
        let mut prev: Option<NerAction> = None;
        let mut tags = Vec::with_capacity(n);
        for i in 0..n {
            let row = logits.row(i);
            let is_last = i + 1 == n;
            let mut best: Option<usize> = None;
            for j in 0..self.actions.len() {
                if !legal_next(prev.as_ref(), &self.actions.action(j), is_last) {
                    continue;
                }
                if best.map_or(true, |b| row[j] > row[b]) {
                    best = Some(j);
                }
            }
            let action = self.actions.action(best.expect("O or L is always legal"));
            tags.push(action.tag());
            prev = Some(action);
        }
        tags
    }

    pub fn decode_entities(&self, sent: &Sentence, floret: Option<&FloretTable>) -> Vec<Span> {
        let tags = self.decode_tags(sent, floret);
        biluo_to_spans(&tags).expect("constrained decode is always valid BILUO")
    }

    /// Micro precision/recall/F1 over a dataset with gold entities.
    /// Spans are shifted to document-level offsets so spans from different
    /// sentences never collide in the set comparison.
    pub fn f_score(&self, ds: &Dataset, floret: Option<&FloretTable>) -> (f64, f64, f64) {
        let mut gold = Vec::new();
        let mut pred = Vec::new();
        let mut offset = 0usize;
        for sent in &ds.sentences {
            for e in &sent.ents {
                gold.push(Span { start: e.start + offset, end: e.end + offset, label: e.label.clone() });
            }
            for e in self.decode_entities(sent, floret) {
                pred.push(Span { start: e.start + offset, end: e.end + offset, label: e.label });
            }
            offset += sent.len();
        }
        span_prf(&gold, &pred)
    }
}
