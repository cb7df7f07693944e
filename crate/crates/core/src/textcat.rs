//! Text categorizer: unweighted ensemble of a hashed bag-of-words linear
//! model and a feed-forward network over mean-pooled contextual vectors.

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Sentence};
use crate::error::{Error, Result};
use crate::hash::{hash32, Rng};
use crate::nn::{
    init_linear, linear_backward, linear_forward, relu, relu_backward, ParamStore, Real, Tensor,
};
use crate::tagger::{copy_encoder_weights, TrainConfig};
use crate::tok2vec::{FloretTable, Tok2Vec};

/// Hashed feature dimension (2^18 buckets).
pub const BOW_DIM: usize = 1 << 18;
pub const TEXTCAT_HIDDEN: usize = 64;
const BOW_SEED: u32 = 0x7c0a_11e5;

/// Ordered category labels; exclusive single-label classification.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CatLabelSet {
    labels: Vec<String>,
}

impl CatLabelSet {
    pub fn new(mut labels: Vec<String>) -> Result<Self> {
        labels.sort();
        labels.dedup();
        if labels.len() < 2 {
            return Err(Error::data("exclusive classification needs at least 2 labels"));
        }
        Ok(CatLabelSet { labels })
    }

    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let labels: Vec<String> = ds
            .sentences
            .iter()
            .filter_map(|s| s.cat.clone())
            .collect();
        CatLabelSet::new(labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// L2-normalized hashed counts of norm-unigrams and norm-bigrams.
pub fn bow_features(texts: &[&str]) -> Vec<(usize, f64)> {
    let norms: Vec<String> = texts.iter().map(|t| t.to_lowercase()).collect();
    let mut counts: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
    for n in &norms {
        let idx = hash32(n.as_bytes(), BOW_SEED) as usize % BOW_DIM;
        *counts.entry(idx).or_insert(0.0) += 1.0;
    }
    for pair in norms.windows(2) {
        let key = format!("{}\u{1f}{}", pair[0], pair[1]);
        let idx = hash32(key.as_bytes(), BOW_SEED) as usize % BOW_DIM;
        *counts.entry(idx).or_insert(0.0) += 1.0;
    }
    let norm = counts.values().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Vec::new();
    }
    counts.into_iter().map(|(i, v)| (i, v / norm)).collect()
}

/// Register textcat parameters (encoder + BoW linear + FFN) in a new store.
pub fn register_textcat<F: Real>(
    encoder: &Tok2Vec,
    n_labels: usize,
    rng: &mut Rng,
) -> ParamStore<F> {
    let mut store = ParamStore::new();
    encoder.register(&mut store, rng);
    init_linear(&mut store, "cat.bow", BOW_DIM, n_labels, rng);
    init_linear(&mut store, "cat.hidden", encoder.cfg.width, TEXTCAT_HIDDEN, rng);
    init_linear(&mut store, "cat.out", TEXTCAT_HIDDEN, n_labels, rng);
    store
}

fn softmax_vec<F: Real>(logits: &[F]) -> Vec<F> {
    let max = logits.iter().cloned().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum = exps.iter().cloned().fold(F::zero(), |a, b| a + b);
    exps.into_iter().map(|e| e / sum).collect()
}

struct ForwardParts<F: Real> {
    probs: Vec<F>,
    bow_p: Vec<F>,
    ffn_p: Vec<F>,
    features: Vec<(usize, f64)>,
    mean: Tensor<F>,
    hidden: Tensor<F>,
    tape: crate::tok2vec::Tok2VecTape<F>,
}

fn ensemble_forward<F: Real>(
    encoder: &Tok2Vec,
    store: &ParamStore<F>,
    texts: &[&str],
    floret: Option<&FloretTable>,
) -> ForwardParts<F> {
    let n_labels = store.value("cat.bow.b").data.len();
    let features = bow_features(texts);
    let bow_w = store.value("cat.bow.w");
    let mut bow_logits: Vec<F> = store.value("cat.bow.b").data.clone();
    for &(idx, v) in &features {
        let row = bow_w.row(idx);
        let v = F::real(v);
        for (l, &w) in bow_logits.iter_mut().zip(row) {
            *l = *l + v * w;
        }
    }

    let tape = encoder.forward(store, texts, floret);
    let n = texts.len();
    let width = encoder.cfg.width;
    let mut mean = Tensor::zeros(&[1, width]);
    for i in 0..n {
        for (m, &v) in mean.data.iter_mut().zip(tape.output.row(i)) {
            *m = *m + v / F::real(n as f64);
        }
    }
    let hidden = relu(
        &linear_forward(&mean, store.value("cat.hidden.w"), store.value("cat.hidden.b"))
            .expect("fixed shapes"),
    );
    let ffn_logits =
        linear_forward(&hidden, store.value("cat.out.w"), store.value("cat.out.b"))
            .expect("fixed shapes");

    let bow_p = softmax_vec(&bow_logits);
    let ffn_p = softmax_vec(&ffn_logits.data);
    let half = F::real(0.5);
    let probs: Vec<F> = (0..n_labels).map(|i| half * bow_p[i] + half * ffn_p[i]).collect();
    ForwardParts { probs, bow_p, ffn_p, features, mean, hidden, tape }
}

/// d(loss)/d(logits) for one softmax head inside the ensemble:
/// dL/dz_j = ½ p_j (g_j − Σ_k g_k p_k), with g = dL/d(ensemble probs).
fn softmax_head_grad<F: Real>(p: &[F], g: &[F]) -> Vec<F> {
    let half = F::real(0.5);
    let dot = p.iter().zip(g).fold(F::zero(), |acc, (&pi, &gi)| acc + pi * gi);
    p.iter().zip(g).map(|(&pi, &gi)| half * pi * (gi - dot)).collect()
}

/// Negative log-likelihood of the gold label under the ensemble, with
/// backprop through both heads and the encoder. Shared by training and
/// gradient checks.
pub fn textcat_loss<F: Real>(
    encoder: &Tok2Vec,
    labels: &CatLabelSet,
    store: &mut ParamStore<F>,
    sent: &Sentence,
    floret: Option<&FloretTable>,
) -> Result<F> {
    if sent.is_empty() {
        return Err(Error::data("cannot categorize an empty document"));
    }
    let gold_label = sent.cat.as_ref().ok_or_else(|| Error::data("document has no category"))?;
    let gold = labels
        .index(gold_label)
        .ok_or_else(|| Error::data(format!("label {gold_label:?} not in label set")))?;

    let texts = sent.texts();
    let parts = ensemble_forward(encoder, store, &texts, floret);
    let p_gold = parts.probs[gold];
    let loss = -p_gold.ln();

    // dL/d(probs): −1/p at the gold index.
    let mut g = vec![F::zero(); parts.probs.len()];
    g[gold] = -F::one() / p_gold;

    let d_bow_logits = softmax_head_grad(&parts.bow_p, &g);
    let d_ffn_logits = softmax_head_grad(&parts.ffn_p, &g);

    store.add_grad("cat.bow.b", &Tensor::from_vec(&[d_bow_logits.len()], d_bow_logits.clone()));
    for &(idx, v) in &parts.features {
        let v = F::real(v);
        let row: Vec<F> = d_bow_logits.iter().map(|&d| d * v).collect();
        store.add_grad_row("cat.bow.w", idx, &row);
    }

    let d_ffn = Tensor::from_vec(&[1, d_ffn_logits.len()], d_ffn_logits);
    let (d_hidden, dw_out, db_out) =
        linear_backward(&parts.hidden, store.value("cat.out.w"), &d_ffn);
    store.add_grad("cat.out.w", &dw_out);
    store.add_grad("cat.out.b", &db_out);
    let d_hidden = relu_backward(&parts.hidden, &d_hidden);
    let (d_mean, dw_h, db_h) =
        linear_backward(&parts.mean, store.value("cat.hidden.w"), &d_hidden);
    store.add_grad("cat.hidden.w", &dw_h);
    store.add_grad("cat.hidden.b", &db_h);

    // Mean pooling: every token row receives d_mean / n.
    let n = texts.len();
    let mut d_ctx = Tensor::zeros(&parts.tape.output.dims);
    for i in 0..n {
        for (d, &v) in d_ctx.row_mut(i).iter_mut().zip(&d_mean.data) {
            *d = v / F::real(n as f64);
        }
    }
    encoder.backward(store, &parts.tape, &d_ctx);
    Ok(loss)
}

pub struct TextcatModel {
    pub encoder: Tok2Vec,
    pub labels: CatLabelSet,
    pub params: ParamStore<f32>,
}

impl TextcatModel {
    /// Train the joint ensemble with early stopping on dev macro-F1
    /// (training-set macro-F1 when the dev set is empty).
    pub fn train(
        encoder: Tok2Vec,
        train: &Dataset,
        dev: &Dataset,
        init: Option<&ParamStore<f32>>,
        cfg: &TrainConfig,
        floret: Option<&FloretTable>,
    ) -> Result<TextcatModel> {
        let labels = CatLabelSet::from_dataset(train)?;
        let usable: Vec<usize> = (0..train.len())
            .filter(|&i| !train.sentences[i].is_empty() && train.sentences[i].cat.is_some())
            .collect();
        if usable.is_empty() {
            return Err(Error::training("no labeled documents to train the categorizer"));
        }
        for &i in &usable {
            let cat = train.sentences[i].cat.as_ref().expect("filtered above");
            if labels.index(cat).is_none() {
                return Err(Error::data(format!("label {cat:?} not in label set")));
            }
        }

        let mut rng = Rng::new(cfg.seed);
        let mut store = register_textcat::<f32>(&encoder, labels.len(), &mut rng);
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
                    textcat_loss(&encoder, &labels, &mut store, &train.sentences[si], floret)?;
                }
                store.adam_step(&cfg.adam)?;
            }

            let model = TextcatModel {
                encoder: encoder.clone(),
                labels: labels.clone(),
                params: store.cast(),
            };
            let eval_set = if dev.is_empty() { train } else { dev };
            let score = model.macro_f1(eval_set)?;
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
        Ok(TextcatModel { encoder, labels, params })
    }

    /// Ensemble probabilities over the label set (sums to 1).
    pub fn classify(&self, texts: &[&str], floret: Option<&FloretTable>) -> Vec<f32> {
        ensemble_forward(&self.encoder, &self.params, texts, floret).probs
    }

    /// Argmax label; ties resolve to the lowest label index.
    pub fn predict(&self, sent: &Sentence, floret: Option<&FloretTable>) -> String {
        let probs = self.classify(&sent.texts(), floret);
        let mut best = 0usize;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = i;
            }
        }
        self.labels.labels()[best].clone()
    }

    pub fn accuracy(&self, ds: &Dataset) -> Result<f64> {
        let mut correct = 0usize;
        let mut total = 0usize;
        for sent in &ds.sentences {
            let gold = sent.cat.as_ref().ok_or_else(|| Error::data("document has no category"))?;
            if self.predict(sent, None) == *gold {
                correct += 1;
            }
            total += 1;
        }
        Ok(correct as f64 / total as f64)
    }

    /// Macro-averaged F1 over the label set.
    pub fn macro_f1(&self, ds: &Dataset) -> Result<f64> {
        let k = self.labels.len();
        let mut tp = vec![0usize; k];
        let mut fp = vec![0usize; k];
        let mut fnn = vec![0usize; k];
        for sent in &ds.sentences {
            let gold = sent.cat.as_ref().ok_or_else(|| Error::data("document has no category"))?;
            let g = self
                .labels
                .index(gold)
                .ok_or_else(|| Error::data(format!("label {gold:?} not in label set")))?;
            let p = self.labels.index(&self.predict(sent, None)).expect("predicted from label set");
            if p == g {
                tp[g] += 1;
            } else {
                fp[p] += 1;
                fnn[g] += 1;
            }
        }
        let mut sum = 0.0;
        for i in 0..k {
            let denom = 2 * tp[i] + fp[i] + fnn[i];
            sum += if denom == 0 { 1.0 } else { 2.0 * tp[i] as f64 / denom as f64 };
        }
        Ok(sum / k as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tok2vec::Tok2VecConfig;

    #[test]
    fn bow_feature_counts() {
        // "ako si juan": 3 unigram keys + 2 bigram keys.
        let feats = bow_features(&["ako", "si", "juan"]);
        assert_eq!(feats.len(), 5);
        let norm: f64 = feats.iter().map(|(_, v)| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        // Single token: one unigram, zero bigrams.
        assert_eq!(bow_features(&["ako"]).len(), 1);
        // Identical docs, identical features.
        assert_eq!(bow_features(&["a", "b"]), bow_features(&["a", "b"]));
    }

    #[test]
    fn bow_unigram_mass_is_order_invariant() {
        let a = bow_features(&["isa", "dalawa", "tatlo"]);
        let b = bow_features(&["tatlo", "isa", "dalawa"]);
        // Compare raw (un-normalized) unigram index sets: shuffling changes
        // bigrams but every unigram bucket stays occupied.
        let uni = |texts: &[&str]| -> std::collections::BTreeSet<usize> {
            texts
                .iter()
                .map(|t| hash32(t.to_lowercase().as_bytes(), BOW_SEED) as usize % BOW_DIM)
                .collect()
        };
        assert_eq!(uni(&["isa", "dalawa", "tatlo"]), uni(&["tatlo", "isa", "dalawa"]));
        assert_ne!(a, b);
    }

    fn tiny_encoder() -> Tok2Vec {
        Tok2Vec::new(Tok2VecConfig {
            table_rows: [200, 50, 100, 50],
            attr_width: 8,
            n_hashes: 3,
            width: 16,
            depth: 1,
            window: 1,
            floret_width: 0,
        })
    }

    fn toy_cat_corpus() -> Dataset {
        // Two classes separable by a keyword.
        let mut sentences = Vec::new();
        let sports = ["laro", "bola", "koponan", "panalo"];
        let weather = ["ulan", "bagyo", "araw", "ulap"];
        for i in 0..16 {
            let mut s = Sentence::from_words(&["balita", "tungkol", "sa", sports[i % 4]]);
            s.cat = Some("sports".to_string());
            sentences.push(s);
            let mut s = Sentence::from_words(&["balita", "tungkol", "sa", weather[i % 4]]);
            s.cat = Some("weather".to_string());
            sentences.push(s);
        }
        Dataset::new(sentences)
    }

    #[test]
    fn probabilities_sum_to_one_for_random_weights() {
        let labels = CatLabelSet::new(vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let encoder = tiny_encoder();
        for seed in 0..20 {
            let mut rng = Rng::new(seed);
            let params = register_textcat::<f32>(&encoder, labels.len(), &mut rng);
            let model = TextcatModel { encoder: encoder.clone(), labels: labels.clone(), params };
            let probs = model.classify(&["isang", "pagsubok", "lamang"], None);
            let sum: f32 = probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6, "sum {sum}");
            assert!(probs.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn ensemble_is_arithmetic_mean() {
        let bow_p = [0.8f64, 0.2];
        let ffn_p = [0.6f64, 0.4];
        let ensemble: Vec<f64> =
            (0..2).map(|i| 0.5 * bow_p[i] + 0.5 * ffn_p[i]).collect();
        assert_eq!(ensemble, vec![0.7, 0.30000000000000004]);
    }

    #[test]
    fn learns_keyword_classes() {
        let corpus = toy_cat_corpus();
        let cfg = TrainConfig { epochs: 100, patience: 100, seed: 1, ..Default::default() };
        let model =
            TextcatModel::train(tiny_encoder(), &corpus, &Dataset::default(), None, &cfg, None)
                .unwrap();
        let acc = model.accuracy(&corpus).unwrap();
        assert!(acc >= 0.99, "training accuracy {acc}");
    }

    #[test]
    fn single_document_trains() {
        let mut s = Sentence::from_words(&["isa"]);
        s.cat = Some("a".to_string());
        let mut t = Sentence::from_words(&["dalawa"]);
        t.cat = Some("b".to_string());
        let corpus = Dataset::new(vec![s, t]);
        let cfg = TrainConfig { epochs: 2, seed: 1, ..Default::default() };
        TextcatModel::train(tiny_encoder(), &corpus, &Dataset::default(), None, &cfg, None).unwrap();
    }

    #[test]
    fn training_deterministic() {
        let corpus = toy_cat_corpus();
        let cfg = TrainConfig { epochs: 3, seed: 7, ..Default::default() };
        let a = TextcatModel::train(tiny_encoder(), &corpus, &Dataset::default(), None, &cfg, None)
            .unwrap();
        let b = TextcatModel::train(tiny_encoder(), &corpus, &Dataset::default(), None, &cfg, None)
            .unwrap();
        assert_eq!(a.params.value("cat.out.w").data, b.params.value("cat.out.w").data);
    }

    #[test]
    fn unknown_label_errors() {
        let corpus = toy_cat_corpus();
        let labels = CatLabelSet::new(vec!["x".into(), "y".into()]).unwrap();
        let mut rng = Rng::new(1);
        let mut store = register_textcat::<f32>(&tiny_encoder(), labels.len(), &mut rng);
        let err = textcat_loss(&tiny_encoder(), &labels, &mut store, &corpus.sentences[0], None);
        assert!(err.is_err());
    }

    #[test]
    fn textcat_grad_check() {
        use crate::nn::grad_check;
        let corpus = toy_cat_corpus();
        let labels = CatLabelSet::from_dataset(&corpus).unwrap();
        let encoder = tiny_encoder();
        let mut rng = Rng::new(2);
        let mut store = register_textcat::<f64>(&encoder, labels.len(), &mut rng);
        let sent = corpus.sentences[0].clone();
        let enc = encoder.clone();
        let mut f = move |s: &mut ParamStore<f64>| {
            s.zero_grads();
            textcat_loss(&enc, &labels, s, &sent, None).unwrap()
        };
        let err = grad_check(&mut f, &mut store, 1e-5, 30);
        assert!(err < 1e-4, "relative error {err}");
    }
}
