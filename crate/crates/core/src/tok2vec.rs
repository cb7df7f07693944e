//! Token-to-vector encoder: multi-hash (Bloom) attribute embeddings mixed
//! and contextualized by residual window layers, floret-style hashed
//! subword static vectors, and the character-cloze pretraining objective.

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::hash::{hash32, Rng};
use crate::nn::{
    init_linear, init_table, linear_backward, linear_forward, relu, relu_backward, softmax_xent,
    AdamConfig, ParamStore, Real, Tensor,
};

/// Attributes hashed into the Bloom tables, derived from the token text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeSet {
    pub norm: String,
    pub prefix: String,
    pub suffix: String,
    pub shape: String,
}

impl AttributeSet {
    pub fn from_text(text: &str) -> Self {
        let norm = text.to_lowercase();
        let chars: Vec<char> = text.chars().collect();
        let prefix: String = chars.iter().take(1).collect();
        let suffix: String = chars.iter().rev().take(3).rev().collect();
        AttributeSet { norm, prefix, suffix, shape: word_shape(text) }
    }
}

/// Character-class pattern: uppercase -> X, lowercase -> x, digit -> d,
/// other characters kept; runs longer than 4 are collapsed to 4.
pub fn word_shape(text: &str) -> String {
    let mut out = String::new();
    let mut last = '\0';
    let mut run = 0usize;
    for ch in text.chars() {
        let mapped = if ch.is_uppercase() {
            'X'
        } else if ch.is_lowercase() {
            'x'
        } else if ch.is_ascii_digit() {
            'd'
        } else {
            ch
        };
        if mapped == last {
            run += 1;
        } else {
            last = mapped;
            run = 1;
        }
        if run <= 4 {
            out.push(mapped);
        }
    }
    out
}

pub const ATTR_NAMES: [&str; 4] = ["norm", "prefix", "suffix", "shape"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tok2VecConfig {
    /// Rows per attribute table, in [norm, prefix, suffix, shape] order.
    pub table_rows: [usize; 4],
    /// Embedding width of each attribute table.
    pub attr_width: usize,
    /// Number of hash seeds per table (the "multi" in multi-hash).
    pub n_hashes: usize,
    /// Output width W of the encoder.
    pub width: usize,
    /// Number of residual window layers.
    pub depth: usize,
    /// Window radius of each context layer.
    pub window: usize,
    /// Extra static-vector feature width (0 = md tier, no floret feature).
    pub floret_width: usize,
}

impl Default for Tok2VecConfig {
    fn default() -> Self {
        Tok2VecConfig {
            table_rows: [4000, 500, 1000, 500],
            attr_width: 16,
            n_hashes: 3,
            width: 96,
            depth: 2,
            window: 1,
            floret_width: 0,
        }
    }
}

impl Tok2VecConfig {
    pub fn concat_width(&self) -> usize {
        self.attr_width * ATTR_NAMES.len() + self.floret_width
    }
}

/// Per-attribute hash seeds. Fixed constants so lookups reproduce across
/// runs and serialized models.
fn attr_seeds(attr: usize, n_hashes: usize) -> Vec<u32> {
    (0..n_hashes)
        .map(|i| (attr as u32 + 1).wrapping_mul(0x9e3779b9).wrapping_add(i as u32))
        .collect()
}

/// Activation tape from one forward pass, consumed by backward.
pub struct Tok2VecTape<F: Real> {
    /// Per token, per attribute, the k hashed row indices.
    rows: Vec<[Vec<usize>; 4]>,
    concat: Tensor<F>,
    mixed: Tensor<F>,
    /// Per context layer: (input, window concat, relu output).
    layers: Vec<(Tensor<F>, Tensor<F>, Tensor<F>)>,
    pub output: Tensor<F>,
}

/// The encoder module. Parameters live in a caller-owned `ParamStore` under
/// the `t2v.` prefix so heads can share one store with their encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tok2Vec {
    pub cfg: Tok2VecConfig,
}

impl Tok2Vec {
    pub fn new(cfg: Tok2VecConfig) -> Self {
        Tok2Vec { cfg }
    }

    /// Register all encoder parameters into `store`.
    pub fn register<F: Real>(&self, store: &mut ParamStore<F>, rng: &mut Rng) {
        for (a, name) in ATTR_NAMES.iter().enumerate() {
            init_table(store, &format!("t2v.{name}"), self.cfg.table_rows[a], self.cfg.attr_width, rng);
        }
        init_linear(store, "t2v.mix", self.cfg.concat_width(), self.cfg.width, rng);
        let ctx_in = (2 * self.cfg.window + 1) * self.cfg.width;
        for l in 0..self.cfg.depth {
            init_linear(store, &format!("t2v.ctx{l}"), ctx_in, self.cfg.width, rng);
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> =
            ATTR_NAMES.iter().map(|n| format!("t2v.{n}")).collect();
        names.push("t2v.mix.w".into());
        names.push("t2v.mix.b".into());
        for l in 0..self.cfg.depth {
            names.push(format!("t2v.ctx{l}.w"));
            names.push(format!("t2v.ctx{l}.b"));
        }
        names
    }

    fn hash_rows(&self, attrs: &AttributeSet) -> [Vec<usize>; 4] {
        let values = [&attrs.norm, &attrs.prefix, &attrs.suffix, &attrs.shape];
        std::array::from_fn(|a| {
            let rows = self.cfg.table_rows[a] as u32;
            attr_seeds(a, self.cfg.n_hashes)
                .iter()
                .map(|&seed| (hash32(values[a].as_bytes(), seed) % rows.max(1)) as usize)
                .collect()
        })
    }

    /// Embed and contextualize a token sequence. `floret` supplies frozen
    /// static vectors for the lg tier; it must match `cfg.floret_width`.
    pub fn forward<F: Real>(
        &self,
        store: &ParamStore<F>,
        texts: &[&str],
        floret: Option<&FloretTable>,
    ) -> Tok2VecTape<F> {
        let n = texts.len();
        let cw = self.cfg.concat_width();
        let mut concat = Tensor::zeros(&[n.max(1), cw]);
        let mut rows_per_token = Vec::with_capacity(n);

        for (i, text) in texts.iter().enumerate() {
            let attrs = AttributeSet::from_text(text);
            let rows = self.hash_rows(&attrs);
            let out = concat.row_mut(i);
            let mut offset = 0usize;
            for (a, name) in ATTR_NAMES.iter().enumerate() {
                let table = store.value(&format!("t2v.{name}"));
                for &r in &rows[a] {
                    for (j, &v) in table.row(r).iter().enumerate() {
                        out[offset + j] += v;
                    }
                }
                offset += self.cfg.attr_width;
            }
            if self.cfg.floret_width > 0 {
                let table = floret.expect("lg-tier encoder needs a floret table");
                for (j, v) in table.lookup(text).into_iter().enumerate() {
                    out[offset + j] = F::real(v as f64);
                }
            }
            rows_per_token.push(rows);
        }

        let concat = Tensor::from_vec(&[n, cw], concat.data[..n * cw].to_vec());
        let mixed_pre = linear_forward(&concat, store.value("t2v.mix.w"), store.value("t2v.mix.b"))
            .expect("mixing layer shapes are fixed by construction");
        let mixed = relu(&mixed_pre);

        let mut x = mixed.clone();
        let mut layers = Vec::with_capacity(self.cfg.depth);
        for l in 0..self.cfg.depth {
            let windowed = self.window_concat(&x);
            let pre = linear_forward(
                &windowed,
                store.value(&format!("t2v.ctx{l}.w")),
                store.value(&format!("t2v.ctx{l}.b")),
            )
            .expect("context layer shapes are fixed by construction");
            let activated = relu(&pre);
            let mut next = x.clone();
            for (o, &a) in next.data.iter_mut().zip(&activated.data) {
                *o += a;
            }
            layers.push((x, windowed, activated));
            x = next;
        }

        Tok2VecTape { rows: rows_per_token, concat, mixed, layers, output: x }
    }

    fn window_concat<F: Real>(&self, x: &Tensor<F>) -> Tensor<F> {
        let n = x.rows();
        let w = self.cfg.window;
        let width = self.cfg.width;
        let mut out = Tensor::zeros(&[n, (2 * w + 1) * width]);
        for i in 0..n {
            for (slot, j) in (i as isize - w as isize..=i as isize + w as isize).enumerate() {
                if j < 0 || j >= n as isize {
                    continue;
                }
                let src = x.row(j as usize);
                out.row_mut(i)[slot * width..(slot + 1) * width].copy_from_slice(src);
            }
        }
        out
    }

    /// Backpropagate `d_out` through the encoder, accumulating parameter
    /// gradients. Floret features are frozen, so no gradient flows there.
    pub fn backward<F: Real>(
        &self,
        store: &mut ParamStore<F>,
        tape: &Tok2VecTape<F>,
        d_out: &Tensor<F>,
    ) {
        let mut dx = d_out.clone();
        for l in (0..self.cfg.depth).rev() {
            let (input, windowed, activated) = &tape.layers[l];
            // Residual: gradient flows both into the layer and past it.
            let d_act = relu_backward(activated, &dx);
            let name = format!("t2v.ctx{l}");
            let (d_windowed, dw, db) =
                linear_backward(windowed, store.value(&format!("{name}.w")), &d_act);
            store.add_grad(&format!("{name}.w"), &dw);
            store.add_grad(&format!("{name}.b"), &db);
            let mut d_input = dx;
            self.window_scatter(&d_windowed, &mut d_input);
            let _ = input;
            dx = d_input;
        }

        let d_mixed = relu_backward(&tape.mixed, &dx);
        let (d_concat, dw, db) = linear_backward(&tape.concat, store.value("t2v.mix.w"), &d_mixed);
        store.add_grad("t2v.mix.w", &dw);
        store.add_grad("t2v.mix.b", &db);

        for (i, rows) in tape.rows.iter().enumerate() {
            let d_row = d_concat.row(i).to_vec();
            let mut offset = 0usize;
            for (a, name) in ATTR_NAMES.iter().enumerate() {
                let slice = &d_row[offset..offset + self.cfg.attr_width];
                for &r in &rows[a] {
                    store.add_grad_row(&format!("t2v.{name}"), r, slice);
                }
                offset += self.cfg.attr_width;
            }
        }
    }

    /// Scatter window-concat gradients back onto token positions.
    fn window_scatter<F: Real>(&self, d_windowed: &Tensor<F>, d_x: &mut Tensor<F>) {
        let n = d_x.rows();
        let w = self.cfg.window;
        let width = self.cfg.width;
        for i in 0..n {
            let src = d_windowed.row(i);
            for (slot, j) in (i as isize - w as isize..=i as isize + w as isize).enumerate() {
                if j < 0 || j >= n as isize {
                    continue;
                }
                let dst = d_x.row_mut(j as usize);
                for (d, &s) in dst.iter_mut().zip(&src[slot * width..(slot + 1) * width]) {
                    *d += s;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Character-cloze pretraining
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    /// Leading/trailing bytes to predict per token.
    pub n_bytes: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig { n_bytes: 4, epochs: 3, batch_size: 8, adam: AdamConfig::default(), seed: 0 }
    }
}

/// Leading and trailing byte targets for one token, padded with 0x00.
pub fn cloze_targets(text: &str, n_bytes: usize) -> Vec<usize> {
    let bytes = text.as_bytes();
    let mut targets = Vec::with_capacity(2 * n_bytes);
    for i in 0..n_bytes {
        targets.push(bytes.get(i).copied().unwrap_or(0) as usize);
    }
    let take = bytes.len().min(n_bytes);
    let tail = &bytes[bytes.len() - take..];
    for i in 0..n_bytes {
        targets.push(tail.get(i).copied().unwrap_or(0) as usize);
    }
    targets
}

pub fn register_cloze_head<F: Real>(
    store: &mut ParamStore<F>,
    width: usize,
    n_bytes: usize,
    rng: &mut Rng,
) {
    init_linear(store, "cloze", width, 2 * n_bytes * 256, rng);
}

/// Mean cross-entropy of the byte-prediction head over contextual vectors,
/// with gradients pushed back through the head into `d_ctx`.
pub fn char_cloze_loss<F: Real>(
    store: &mut ParamStore<F>,
    ctx: &Tensor<F>,
    texts: &[&str],
    n_bytes: usize,
) -> Result<(F, Tensor<F>)> {
    let n = texts.len();
    let positions = 2 * n_bytes;
    let logits = linear_forward(ctx, store.value("cloze.w"), store.value("cloze.b"))?;
    // Reshape [n, positions*256] to [n*positions, 256] rows.
    let flat = Tensor::from_vec(&[n * positions, 256], logits.data.clone());
    let mut gold = Vec::with_capacity(n * positions);
    for text in texts {
        gold.extend(cloze_targets(text, n_bytes));
    }
    let (loss, d_flat) = softmax_xent(&flat, &gold)?;
    let d_logits = Tensor::from_vec(&[n, positions * 256], d_flat.data);
    let (d_ctx, dw, db) = linear_backward(ctx, store.value("cloze.w"), &d_logits);
    store.add_grad("cloze.w", &dw);
    store.add_grad("cloze.b", &db);
    Ok((loss, d_ctx))
}

/// Train the encoder on the character-cloze objective. Returns the trained
/// store (encoder + cloze head) and the per-epoch losses.
pub fn pretrain(
    encoder: &Tok2Vec,
    corpus: &Dataset,
    cfg: &PretrainConfig,
    floret: Option<&FloretTable>,
) -> Result<(ParamStore<f32>, Vec<f64>)> {
    if corpus.is_empty() {
        return Err(Error::training("pretraining corpus is empty"));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut store = ParamStore::<f32>::new();
    encoder.register(&mut store, &mut rng);
    register_cloze_head(&mut store, encoder.cfg.width, cfg.n_bytes, &mut rng);

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for _epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0f64;
        let mut count = 0usize;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            store.zero_grads();
            for &si in chunk {
                let sent = &corpus.sentences[si];
                if sent.is_empty() {
                    continue;
                }
                let texts = sent.texts();
                let tape = encoder.forward(&store, &texts, floret);
                let (loss, d_ctx) = char_cloze_loss(&mut store, &tape.output, &texts, cfg.n_bytes)?;
                encoder.backward(&mut store, &tape, &d_ctx);
                total += loss as f64;
                count += 1;
            }
            if count > 0 {
                store.adam_step(&cfg.adam)?;
            }
        }
        epoch_losses.push(if count > 0 { total / count as f64 } else { 0.0 });
    }
    Ok((store, epoch_losses))
}

// ---------------------------------------------------------------------------
// floret-style hashed subword vectors
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloretConfig {
    pub buckets: usize,
    pub width: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for FloretConfig {
    fn default() -> Self {
        FloretConfig {
            buckets: 50_000,
            width: 32,
            n_min: 3,
            n_max: 5,
            window: 5,
            negatives: 5,
            epochs: 3,
            lr: 0.05,
            seed: 0,
        }
    }
}

/// Hashed bucket table holding both words and character n-grams, two
/// seeded rows per key.
#[derive(Debug, Clone, PartialEq)]
pub struct FloretTable {
    pub buckets: usize,
    pub width: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub seeds: [u32; 2],
    pub weights: Tensor<f32>,
}

impl FloretTable {
    pub fn zeros(buckets: usize, width: usize, n_min: usize, n_max: usize) -> Self {
        FloretTable {
            buckets,
            width,
            n_min,
            n_max,
            seeds: [0x0f10_27e5, 0x7a31_55d9],
            weights: Tensor::zeros(&[buckets, width]),
        }
    }

    /// Keys for a word: the boundary-marked word itself plus its character
    /// n-grams, deduplicated.
    pub fn keys(&self, word: &str) -> Vec<String> {
        let marked: Vec<char> = format!("<{word}>").chars().collect();
        let mut keys = vec![marked.iter().collect::<String>()];
        for n in self.n_min..=self.n_max {
            if n >= marked.len() {
                continue;
            }
            for start in 0..=(marked.len() - n) {
                let gram: String = marked[start..start + n].iter().collect();
                if !keys.contains(&gram) {
                    keys.push(gram);
                }
            }
        }
        keys
    }

    fn bucket_pair(&self, key: &str) -> (usize, usize) {
        let b = self.buckets as u32;
        (
            (hash32(key.as_bytes(), self.seeds[0]) % b) as usize,
            (hash32(key.as_bytes(), self.seeds[1]) % b) as usize,
        )
    }

    /// Word vector: mean over keys of the sum of the two hashed rows.
    /// Total for any input; unknown words simply hash to buckets.
    pub fn lookup(&self, word: &str) -> Vec<f32> {
        let keys = self.keys(word);
        let mut out = vec![0.0f32; self.width];
        for key in &keys {
            let (b1, b2) = self.bucket_pair(key);
            for (o, (&x, &y)) in out
                .iter_mut()
                .zip(self.weights.row(b1).iter().zip(self.weights.row(b2)))
            {
                *o += x + y;
            }
        }
        let inv = 1.0 / keys.len() as f32;
        out.iter_mut().for_each(|v| *v *= inv);
        out
    }
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Skipgram-with-negative-sampling training of a floret table.
pub fn train_floret(corpus: &Dataset, cfg: &FloretConfig) -> Result<FloretTable> {
    if corpus.is_empty() {
        return Err(Error::training("floret training corpus is empty"));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut table = FloretTable::zeros(cfg.buckets, cfg.width, cfg.n_min, cfg.n_max);
    let limit = 0.5 / cfg.width as f64;
    for v in table.weights.data.iter_mut() {
        *v = rng.uniform(limit) as f32;
    }

    // Vocabulary and the unigram^0.75 negative-sampling distribution.
    let mut vocab: Vec<String> = Vec::new();
    let mut vocab_index: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    let mut counts: Vec<f64> = Vec::new();
    for sent in &corpus.sentences {
        for tok in &sent.tokens {
            let id = *vocab_index.entry(tok.text.clone()).or_insert_with(|| {
                vocab.push(tok.text.clone());
                counts.push(0.0);
                vocab.len() - 1
            });
            counts[id] += 1.0;
        }
    }
    let mut cumulative: Vec<f64> = Vec::with_capacity(counts.len());
    let mut acc = 0.0;
    for &c in &counts {
        acc += c.powf(0.75);
        cumulative.push(acc);
    }
    let total = acc;

    // Output (context) vectors per vocabulary word, discarded after training.
    let mut output = vec![0.0f32; vocab.len() * cfg.width];

    let lr = cfg.lr as f32;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for _epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for &si in &order {
            let sent = &corpus.sentences[si];
            for center in 0..sent.len() {
                let word = &sent.tokens[center].text;
                let keys = table.keys(word);
                let pairs: Vec<(usize, usize)> = keys.iter().map(|k| table.bucket_pair(k)).collect();
                let v = table.lookup(word);
                let mut d_v = vec![0.0f32; cfg.width];

                let lo = center.saturating_sub(cfg.window);
                let hi = (center + cfg.window + 1).min(sent.len());
                for ctx in lo..hi {
                    if ctx == center {
                        continue;
                    }
                    let pos_id = vocab_index[&sent.tokens[ctx].text];
                    for k in 0..=cfg.negatives {
                        let (target_id, label) = if k == 0 {
                            (pos_id, 1.0f32)
                        } else {
                            let r = rng.next_f64() * total;
                            let id = cumulative.partition_point(|&c| c < r).min(vocab.len() - 1);
                            (id, 0.0)
                        };
                        let u = &mut output[target_id * cfg.width..(target_id + 1) * cfg.width];
                        let dot: f32 = v.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
                        let g = (sigmoid(dot) - label) * lr;
                        for (dv, &uv) in d_v.iter_mut().zip(u.iter()) {
                            *dv += g * uv;
                        }
                        for (uv, &vv) in u.iter_mut().zip(&v) {
                            *uv -= g * vv;
                        }
                    }
                }

                let share = 1.0 / keys.len() as f32;
                for &(b1, b2) in &pairs {
                    for (j, &dv) in d_v.iter().enumerate() {
                        table.weights.data[b1 * cfg.width + j] -= dv * share;
                        table.weights.data[b2 * cfg.width + j] -= dv * share;
                    }
                }
            }
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sentence;

    fn tiny_encoder() -> Tok2Vec {
        Tok2Vec::new(Tok2VecConfig {
            table_rows: [50, 20, 30, 20],
            attr_width: 5,
            n_hashes: 3,
            width: 8,
            depth: 2,
            window: 1,
            floret_width: 0,
        })
    }

    #[test]
    fn shapes_and_attrs() {
        let a = AttributeSet::from_text("Maynila");
        assert_eq!(a.norm, "maynila");
        assert_eq!(a.prefix, "M");
        assert_eq!(a.suffix, "ila");
        assert_eq!(a.shape, "Xxxxx");
        assert_eq!(word_shape("ABC-123"), "XXX-ddd");
        assert_eq!(word_shape("Aaaaaaaa"), "Xxxxx");
    }

    #[test]
    fn zero_tables_give_zero_vectors() {
        let enc = tiny_encoder();
        let mut store = ParamStore::<f64>::new();
        let mut rng = Rng::new(0);
        enc.register(&mut store, &mut rng);
        for name in enc.param_names() {
            store.value_mut(&name).fill(0.0);
        }
        let tape = enc.forward(&store, &["aso", "ito"], None);
        assert!(tape.output.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn embedding_deterministic() {
        let enc = tiny_encoder();
        let mut store = ParamStore::<f32>::new();
        enc.register(&mut store, &mut Rng::new(4));
        let a = enc.forward(&store, &["bahay"], None);
        let b = enc.forward(&store, &["bahay"], None);
        assert_eq!(a.output.data, b.output.data);
    }

    #[test]
    fn single_row_table_collapses_hashes() {
        let mut enc = tiny_encoder();
        enc.cfg.table_rows = [1, 1, 1, 1];
        let mut store = ParamStore::<f64>::new();
        enc.register(&mut store, &mut Rng::new(1));
        let tape = enc.forward(&store, &["x"], None);
        // Every attribute contribution is k * row 0 of its table.
        let k = enc.cfg.n_hashes as f64;
        for (a, name) in ATTR_NAMES.iter().enumerate() {
            let row = store.value(&format!("t2v.{name}")).row(0);
            let offset = a * enc.cfg.attr_width;
            for (j, &v) in row.iter().enumerate() {
                assert!((tape.concat.data[offset + j] - k * v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn depth_zero_is_identity_on_mixed_vectors() {
        let mut enc = tiny_encoder();
        enc.cfg.depth = 0;
        let mut store = ParamStore::<f64>::new();
        enc.register(&mut store, &mut Rng::new(2));
        let tape = enc.forward(&store, &["isa", "dalawa"], None);
        assert_eq!(tape.output.data, tape.mixed.data);
    }

    #[test]
    fn single_token_window_is_finite() {
        let enc = tiny_encoder();
        let mut store = ParamStore::<f32>::new();
        enc.register(&mut store, &mut Rng::new(3));
        let tape = enc.forward(&store, &["mabuhay"], None);
        assert!(tape.output.is_finite());
        assert_eq!(tape.output.dims, vec![1, 8]);
    }

    #[test]
    fn receptive_field_is_bounded() {
        // Permuting two distant tokens only changes vectors within L*w
        // radius of the edited positions.
        let enc = tiny_encoder(); // L=2, w=1 -> radius 2
        let mut store = ParamStore::<f64>::new();
        enc.register(&mut store, &mut Rng::new(5));
        let base: Vec<&str> = vec!["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"];
        let mut swapped = base.clone();
        swapped.swap(0, 9);
        let out_a = enc.forward(&store, &base, None).output;
        let out_b = enc.forward(&store, &swapped, None).output;
        let radius = enc.cfg.depth * enc.cfg.window;
        for i in 0..base.len() {
            let changed = out_a.row(i).iter().zip(out_b.row(i)).any(|(x, y)| (x - y).abs() > 1e-12);
            let near_edit = i <= radius || i >= 9 - radius;
            if !near_edit {
                assert!(!changed, "token {i} outside the receptive field changed");
            }
        }
        // The edited positions themselves must change.
        assert!(out_a.row(0).iter().zip(out_b.row(0)).any(|(x, y)| (x - y).abs() > 1e-9));
    }

    #[test]
    fn cloze_targets_by_hand() {
        assert_eq!(cloze_targets("bahay", 2), vec![0x62, 0x61, 0x61, 0x79]);
        assert_eq!(cloze_targets("si", 4), vec![0x73, 0x69, 0, 0, 0x73, 0x69, 0, 0]);
    }

    #[test]
    fn cloze_perfect_predictor_zero_loss() {
        // A bias-only head with a huge logit on each target byte.
        let mut store = ParamStore::<f64>::new();
        let n_bytes = 1;
        store.add("cloze.w", Tensor::zeros(&[4, 2 * n_bytes * 256]));
        let mut b = Tensor::zeros(&[2 * n_bytes * 256]);
        let targets = cloze_targets("aa", n_bytes);
        for (pos, &t) in targets.iter().enumerate() {
            b.data[pos * 256 + t] = 1000.0;
        }
        store.add("cloze.b", b);
        let ctx = Tensor::zeros(&[1, 4]);
        let (loss, _) = char_cloze_loss(&mut store, &ctx, &["aa"], n_bytes).unwrap();
        assert!(loss.abs() < 1e-9);
    }

    #[test]
    fn encoder_grad_check() {
        use crate::nn::grad_check;
        let enc = tiny_encoder();
        let mut store = ParamStore::<f64>::new();
        let mut rng = Rng::new(8);
        enc.register(&mut store, &mut rng);
        register_cloze_head(&mut store, enc.cfg.width, 2, &mut rng);
        let enc2 = enc.clone();
        let mut f = move |s: &mut ParamStore<f64>| {
            s.zero_grads();
            let texts = ["aso", "si", "juan"];
            let tape = enc2.forward(s, &texts, None);
            let (loss, d_ctx) = char_cloze_loss(s, &tape.output, &texts, 2).unwrap();
            enc2.backward(s, &tape, &d_ctx);
            loss
        };
        let err = grad_check(&mut f, &mut store, 1e-5, 60);
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn pretrain_loss_decreases_and_is_deterministic() {
        let words = ["ang", "bahay", "ay", "malaki", "si", "juan", "ay", "kumain"];
        let sentences: Vec<Sentence> = (0..60)
            .map(|i| {
                let texts: Vec<&str> = (0..5).map(|j| words[(i + j) % words.len()]).collect();
                Sentence::from_words(&texts)
            })
            .collect();
        let corpus = Dataset::new(sentences);
        let enc = tiny_encoder();
        let cfg = PretrainConfig { epochs: 2, n_bytes: 2, seed: 7, ..Default::default() };
        let (store_a, losses) = pretrain(&enc, &corpus, &cfg, None).unwrap();
        assert_eq!(losses.len(), 2);
        assert!(losses[1] < losses[0], "losses {losses:?}");
        let (store_b, _) = pretrain(&enc, &corpus, &cfg, None).unwrap();
        assert_eq!(store_a.value("t2v.mix.w").data, store_b.value("t2v.mix.w").data);
    }

    #[test]
    fn pretrain_zero_epochs_returns_initialization() {
        let corpus = Dataset::new(vec![Sentence::from_words(&["a"])]);
        let enc = tiny_encoder();
        let cfg = PretrainConfig { epochs: 0, seed: 3, ..Default::default() };
        let (store, losses) = pretrain(&enc, &corpus, &cfg, None).unwrap();
        assert!(losses.is_empty());
        let mut fresh = ParamStore::<f32>::new();
        let mut rng = Rng::new(3);
        enc.register(&mut fresh, &mut rng);
        assert_eq!(store.value("t2v.mix.w").data, fresh.value("t2v.mix.w").data);
    }

    #[test]
    fn pretrain_empty_corpus_errors() {
        let enc = tiny_encoder();
        assert!(pretrain(&enc, &Dataset::default(), &PretrainConfig::default(), None).is_err());
    }

    #[test]
    fn floret_ngram_enumeration() {
        let table = FloretTable::zeros(100, 4, 3, 5);
        let keys = table.keys("aso");
        let expected = ["<aso>", "<as", "aso", "so>", "<aso", "aso>"];
        assert_eq!(keys.len(), expected.len());
        for k in expected {
            assert!(keys.contains(&k.to_string()), "missing key {k}");
        }
    }

    #[test]
    fn floret_lookup_total_and_deterministic() {
        let mut table = FloretTable::zeros(64, 8, 3, 5);
        let mut rng = Rng::new(1);
        for v in table.weights.data.iter_mut() {
            *v = rng.uniform(0.1) as f32;
        }
        let a = table.lookup("hindi-nakita-kailanman");
        assert!(a.iter().all(|v| v.is_finite()));
        assert_eq!(a, table.lookup("hindi-nakita-kailanman"));
        assert_eq!(table.lookup("x").len(), 8);
        // All-zero table gives the zero vector.
        let zero = FloretTable::zeros(64, 8, 3, 5);
        assert!(zero.lookup("kahit-ano").iter().all(|&v| v == 0.0));
    }

    #[test]
    fn floret_training_runs_on_degenerate_corpus() {
        let corpus = Dataset::new(vec![Sentence::from_words(&["aso"; 6])]);
        let cfg = FloretConfig { buckets: 256, width: 8, epochs: 1, ..Default::default() };
        let table = train_floret(&corpus, &cfg).unwrap();
        assert!(table.lookup("aso").iter().all(|v| v.is_finite()));
    }

    #[test]
    fn floret_training_deterministic() {
        let corpus = Dataset::new(vec![
            Sentence::from_words(&["ang", "aso", "ay", "tumakbo"]),
            Sentence::from_words(&["ang", "pusa", "ay", "natulog"]),
        ]);
        let cfg = FloretConfig { buckets: 128, width: 4, epochs: 2, seed: 9, ..Default::default() };
        let a = train_floret(&corpus, &cfg).unwrap();
        let b = train_floret(&corpus, &cfg).unwrap();
        assert_eq!(a.weights.data, b.weights.data);
    }

    #[test]
    fn hash_rows_near_uniform() {
        // Chi-square over 1e5 random keys into 1000 rows, alpha = 0.001.
        let rows = 1000usize;
        let n = 100_000usize;
        let mut counts = vec![0usize; rows];
        let mut rng = Rng::new(42);
        for _ in 0..n {
            let key: String = (0..6).map(|_| (b'a' + rng.next_below(26) as u8) as char).collect();
            counts[(hash32(key.as_bytes(), 0x9e3779b9) % rows as u32) as usize] += 1;
        }
        let expected = n as f64 / rows as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // Wilson-Hilferty critical value for df=999 at alpha 0.001.
        let df = (rows - 1) as f64;
        let z = 3.0902;
        let crit = df * (1.0 - 2.0 / (9.0 * df) + z * (2.0 / (9.0 * df)).sqrt()).powi(3);
        assert!(chi2 < crit, "chi2 {chi2} exceeds critical value {crit}");
    }
}
