//! Greedy arc-eager transition-based dependency parser with a static
//! oracle. Token indices are 1-based; 0 is the ROOT sentinel.

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Sentence};
use crate::error::{Error, Result};
use crate::hash::Rng;
use crate::metrics::attachment_scores;
use crate::nn::{
    init_linear, linear_backward, linear_forward, relu, relu_backward, softmax_xent, ParamStore,
    Real, Tensor,
};
use crate::tagger::TrainConfig;
use crate::tok2vec::{FloretTable, Tok2Vec};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Shift,
    Reduce,
    LeftArc(String),
    RightArc(String),
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Action::Shift => write!(f, "SHIFT"),
            Action::Reduce => write!(f, "REDUCE"),
            Action::LeftArc(l) => write!(f, "LEFT_ARC({l})"),
            Action::RightArc(l) => write!(f, "RIGHT_ARC({l})"),
        }
    }
}

/// The four transition kinds, label-free (for validity masks).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActionKind {
    Shift,
    Reduce,
    LeftArc,
    RightArc,
}

impl Action {
    pub fn kind(&self) -> ActionKind {
        match self {
            Action::Shift => ActionKind::Shift,
            Action::Reduce => ActionKind::Reduce,
            Action::LeftArc(_) => ActionKind::LeftArc,
            Action::RightArc(_) => ActionKind::RightArc,
        }
    }
}

/// Stack/buffer/arcs configuration for one parse.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionState {
    /// Token indices, bottom is the ROOT sentinel 0.
    pub stack: Vec<usize>,
    /// Next buffer token (1-based); tokens `buffer..=n` remain.
    pub buffer: usize,
    pub n: usize,
    /// Per token (index 1..=n at slot i-1): assigned head and label.
    pub heads: Vec<Option<usize>>,
    pub labels: Vec<Option<String>>,
}

impl TransitionState {
    pub fn new(n: usize) -> Self {
        TransitionState {
            stack: vec![0],
            buffer: 1,
            n,
            heads: vec![None; n],
            labels: vec![None; n],
        }
    }

    pub fn buffer_nonempty(&self) -> bool {
        self.buffer <= self.n
    }

    fn top(&self) -> Option<usize> {
        self.stack.last().copied()
    }

    fn has_head(&self, token: usize) -> bool {
        token != 0 && self.heads[token - 1].is_some()
    }

    pub fn is_terminal(&self) -> bool {
        !self.buffer_nonempty() && self.stack == [0]
    }

    pub fn valid_kinds(&self) -> Vec<ActionKind> {
        let mut out = Vec::new();
        let top = self.top();
        if self.buffer_nonempty() {
            out.push(ActionKind::Shift);
            if let Some(t) = top {
                if t != 0 && !self.has_head(t) {
                    out.push(ActionKind::LeftArc);
                }
                out.push(ActionKind::RightArc);
            }
        }
        if let Some(t) = top {
            if self.has_head(t) {
                out.push(ActionKind::Reduce);
            }
        }
        out
    }

    pub fn apply(&mut self, action: &Action) -> Result<()> {
        if !self.valid_kinds().contains(&action.kind()) {
            return Err(Error::data(format!(
                "action {action} is invalid in state stack={:?} buffer={}..{}",
                self.stack, self.buffer, self.n
            )));
        }
        match action {
            Action::Shift => {
                self.stack.push(self.buffer);
                self.buffer += 1;
            }
            Action::Reduce => {
                self.stack.pop();
            }
            Action::LeftArc(label) => {
                let top = self.stack.pop().expect("validity checked");
                self.heads[top - 1] = Some(self.buffer);
                self.labels[top - 1] = Some(label.clone());
            }
            Action::RightArc(label) => {
                let top = *self.stack.last().expect("validity checked");
                self.heads[self.buffer - 1] = Some(top);
                self.labels[self.buffer - 1] = Some(label.clone());
                self.stack.push(self.buffer);
                self.buffer += 1;
            }
        }
        Ok(())
    }
}

/// Validate a head sequence as a single-rooted acyclic tree.
fn check_tree(heads: &[usize]) -> Result<()> {
    let n = heads.len();
    let roots = heads.iter().filter(|&&h| h == 0).count();
    if roots != 1 {
        return Err(Error::data(format!("expected exactly one root, found {roots}")));
    }
    for &h in heads {
        if h > n {
            return Err(Error::data(format!("head {h} out of range")));
        }
    }
    for start in 1..=n {
        let mut cur = heads[start - 1];
        let mut steps = 0;
        while cur != 0 {
            cur = heads[cur - 1];
            steps += 1;
            if steps > n {
                return Err(Error::data(format!("cycle through token {start}")));
            }
        }
    }
    Ok(())
}

/// True iff no two arcs cross, checked over all pairs (ROOT arcs included).
pub fn is_projective(heads: &[usize]) -> Result<bool> {
    check_tree(heads)?;
    let arcs: Vec<(usize, usize)> = heads
        .iter()
        .enumerate()
        .map(|(i, &h)| (h.min(i + 1), h.max(i + 1)))
        .collect();
    for (a, &(i, j)) in arcs.iter().enumerate() {
        for &(k, l) in &arcs[a + 1..] {
            let crosses = (i < k && k < j && j < l) || (k < i && i < l && l < j);
            if crosses {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Static arc-eager oracle. The gold tree must be projective; replaying the
/// returned actions reconstructs it exactly.
pub fn oracle_transitions(heads: &[usize], labels: &[String]) -> Result<Vec<Action>> {
    if !is_projective(heads)? {
        return Err(Error::data("oracle requires a projective gold tree"));
    }
    if heads.len() != labels.len() {
        return Err(Error::data("heads and labels differ in length"));
    }
    let n = heads.len();
    let mut state = TransitionState::new(n);
    let mut actions = Vec::new();
    while state.buffer_nonempty() {
        let b0 = state.buffer;
        let top = state.top().expect("ROOT always present");
        let action = if top != 0 && heads[top - 1] == b0 && !state.has_head(top) {
            Action::LeftArc(labels[top - 1].clone())
        } else if heads[b0 - 1] == top {
            Action::RightArc(labels[b0 - 1].clone())
        } else if state.has_head(top)
            && (b0..=n).all(|t| heads[t - 1] != top)
        {
            Action::Reduce
        } else {
            Action::Shift
        };
        state.apply(&action)?;
        actions.push(action);
    }
    Ok(actions)
}

/// Serialization-stable action inventory derived from the deprel set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSet {
    pub deprels: Vec<String>,
}

impl ActionSet {
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let mut deprels: Vec<String> = Vec::new();
        for (i, sent) in ds.sentences.iter().enumerate() {
            let d = sent
                .deprels
                .as_ref()
                .ok_or_else(|| Error::data(format!("sentence {i} has no deprel annotations")))?;
            deprels.extend(d.iter().cloned());
        }
        deprels.sort();
        deprels.dedup();
        Ok(ActionSet { deprels })
    }

    pub fn len(&self) -> usize {
        2 + 2 * self.deprels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, action: &Action) -> Option<usize> {
        match action {
            Action::Shift => Some(0),
            Action::Reduce => Some(1),
            Action::LeftArc(l) => self.deprels.iter().position(|d| d == l).map(|i| 2 + 2 * i),
            Action::RightArc(l) => self.deprels.iter().position(|d| d == l).map(|i| 3 + 2 * i),
        }
    }

    pub fn action(&self, index: usize) -> Action {
        match index {
            0 => Action::Shift,
            1 => Action::Reduce,
            i => {
                let label = self.deprels[(i - 2) / 2].clone();
                if (i - 2) % 2 == 0 {
                    Action::LeftArc(label)
                } else {
                    Action::RightArc(label)
                }
            }
        }
    }

    fn kind_of(&self, index: usize) -> ActionKind {
        match index {
            0 => ActionKind::Shift,
            1 => ActionKind::Reduce,
            i if (i - 2) % 2 == 0 => ActionKind::LeftArc,
            _ => ActionKind::RightArc,
        }
    }
}

pub const PARSER_HIDDEN: usize = 64;
const FALLBACK_DEPREL: &str = "dep";

/// Register parser parameters (encoder + two-layer head) into a new store.
pub fn register_parser<F: Real>(
    encoder: &Tok2Vec,
    n_actions: usize,
    rng: &mut Rng,
) -> ParamStore<F> {
    let mut store = ParamStore::new();
    encoder.register(&mut store, rng);
    init_linear(&mut store, "parse.hidden", 4 * encoder.cfg.width, PARSER_HIDDEN, rng);
    init_linear(&mut store, "parse.out", PARSER_HIDDEN, n_actions, rng);
    store
}

/// Feature rows: contextual vectors of {s0, s1, b0, b1}, zeros when absent.
fn feature_row<F: Real>(state: &TransitionState, ctx: &Tensor<F>, width: usize) -> Vec<F> {
    let mut row = vec![F::zero(); 4 * width];
    let slots = [
        state.stack.len().checked_sub(1).map(|i| state.stack[i]),
        state.stack.len().checked_sub(2).map(|i| state.stack[i]),
        if state.buffer <= state.n { Some(state.buffer) } else { None },
        if state.buffer + 1 <= state.n { Some(state.buffer + 1) } else { None },
    ];
    for (slot, tok) in slots.into_iter().enumerate() {
        match tok {
            // ROOT and absent slots stay zero.
            Some(t) if t >= 1 => {
                row[slot * width..(slot + 1) * width].copy_from_slice(ctx.row(t - 1));
            }
            _ => {}
        }
    }
    row
}

/// Loss over a sentence's full oracle sequence, with backprop through the
/// head and encoder. Shared by training and gradient checks.
pub fn parser_loss<F: Real>(
    encoder: &Tok2Vec,
    actions: &ActionSet,
    store: &mut ParamStore<F>,
    sent: &Sentence,
    floret: Option<&FloretTable>,
) -> Result<F> {
    let heads = sent.heads.as_ref().ok_or_else(|| Error::data("sentence has no heads"))?;
    let labels = sent.deprels.as_ref().ok_or_else(|| Error::data("sentence has no deprels"))?;
    let oracle = oracle_transitions(heads, labels)?;

    let texts = sent.texts();
    let width = encoder.cfg.width;
    let tape = encoder.forward(store, &texts, floret);

    let mut state = TransitionState::new(sent.len());
    let mut rows: Vec<F> = Vec::new();
    let mut gold: Vec<usize> = Vec::new();
    let mut states: Vec<TransitionState> = Vec::new();
    for action in &oracle {
        rows.extend(feature_row(&state, &tape.output, width));
        gold.push(
            actions
                .index(action)
                .ok_or_else(|| Error::data(format!("action {action} not in inventory")))?,
        );
        states.push(state.clone());
        state.apply(action)?;
    }

    let features = Tensor::from_vec(&[gold.len(), 4 * width], rows);
    let hidden_pre = linear_forward(&features, store.value("parse.hidden.w"), store.value("parse.hidden.b"))?;
    let hidden = relu(&hidden_pre);
    let logits = linear_forward(&hidden, store.value("parse.out.w"), store.value("parse.out.b"))?;
    let (loss, d_logits) = softmax_xent(&logits, &gold)?;

    let (d_hidden, dw_out, db_out) = linear_backward(&hidden, store.value("parse.out.w"), &d_logits);
    store.add_grad("parse.out.w", &dw_out);
    store.add_grad("parse.out.b", &db_out);
    let d_hidden = relu_backward(&hidden, &d_hidden);
    let (d_features, dw_h, db_h) =
        linear_backward(&features, store.value("parse.hidden.w"), &d_hidden);
    store.add_grad("parse.hidden.w", &dw_h);
    store.add_grad("parse.hidden.b", &db_h);

    // Scatter feature gradients back onto contextual token vectors.
    let mut d_ctx = Tensor::zeros(&tape.output.dims);
    for (si, st) in states.iter().enumerate() {
        let slots = [
            st.stack.len().checked_sub(1).map(|i| st.stack[i]),
            st.stack.len().checked_sub(2).map(|i| st.stack[i]),
            if st.buffer <= st.n { Some(st.buffer) } else { None },
            if st.buffer + 1 <= st.n { Some(st.buffer + 1) } else { None },
        ];
        for (slot, tok) in slots.into_iter().enumerate() {
            if let Some(t) = tok {
                if t >= 1 {
                    let src = &d_features.row(si)[slot * width..(slot + 1) * width];
                    for (d, &s) in d_ctx.row_mut(t - 1).iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
    encoder.backward(store, &tape, &d_ctx);
    Ok(loss)
}

pub struct ParserModel {
    pub encoder: Tok2Vec,
    pub actions: ActionSet,
    pub params: ParamStore<f32>,
}

impl ParserModel {
    /// Train on oracle actions with early stopping on dev LAS.
    /// Non-projective sentences are excluded from training (count returned
    /// via `excluded`) but callers keep them for evaluation.
    pub fn train(
        encoder: Tok2Vec,
        train: &Dataset,
        dev: &Dataset,
        init: Option<&ParamStore<f32>>,
        cfg: &TrainConfig,
        floret: Option<&FloretTable>,
    ) -> Result<(ParserModel, usize)> {
        let actions = ActionSet::from_dataset(train)?;
        let usable: Vec<usize> = train
            .sentences
            .iter()
            .enumerate()
            .filter_map(|(i, s)| {
                let heads = s.heads.as_ref()?;
                if !s.is_empty() && is_projective(heads).ok()? {
                    Some(i)
                } else {
                    None
                }
            })
            .collect();
        let excluded = train.len() - usable.len();
        if usable.is_empty() {
            return Err(Error::training("no projective sentences left to train the parser"));
        }

        let mut rng = Rng::new(cfg.seed);
        let mut store = register_parser::<f32>(&encoder, actions.len(), &mut rng);
        if let Some(pretrained) = init {
            crate::tagger::copy_encoder_weights(&encoder, pretrained, &mut store);
        }

        let mut best: Option<(f64, ParamStore<f32>)> = None;
        let mut since_best = 0usize;
        let mut order = usable.clone();
        for _epoch in 0..cfg.epochs {
            rng.shuffle(&mut order);
            for chunk in order.chunks(cfg.batch_size.max(1)) {
                store.zero_grads();
                for &si in chunk {
                    parser_loss(&encoder, &actions, &mut store, &train.sentences[si], floret)?;
                }
                store.adam_step(&cfg.adam)?;
            }

            let model = ParserModel {
                encoder: encoder.clone(),
                actions: actions.clone(),
                params: store.cast(),
            };
            let eval_set = if dev.is_empty() { train } else { dev };
            let (_, las) = model.attachment(eval_set, floret)?;
            let improved = best.as_ref().map_or(true, |(b, _)| las > *b);
            if improved {
                best = Some((las, store.cast()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    break;
                }
            }
        }

        let (_, params) = best.expect("at least one epoch ran");
        Ok((ParserModel { encoder, actions, params }, excluded))
    }

    /// Greedy masked decode. Every token ends up with exactly one head;
    /// leftovers attach to ROOT with the fallback label.
    pub fn parse(&self, sent: &Sentence, floret: Option<&FloretTable>) -> (Vec<usize>, Vec<String>) {
        let n = sent.len();
        if n == 0 {
            return (Vec::new(), Vec::new());
        }
        let tape = self.encoder.forward(&self.params, &sent.texts(), floret);
        let width = self.encoder.cfg.width;
        let mut state = TransitionState::new(n);
        let mut transitions = 0usize;
        loop {
            let valid = state.valid_kinds();
            if valid.is_empty() {
                break;
            }
            let row = feature_row(&state, &tape.output, width);
            let features = Tensor::from_vec(&[1, 4 * width], row);
            let hidden = relu(
                &linear_forward(&features, self.params.value("parse.hidden.w"), self.params.value("parse.hidden.b"))
                    .expect("fixed shapes"),
            );
            let logits =
                linear_forward(&hidden, self.params.value("parse.out.w"), self.params.value("parse.out.b"))
                    .expect("fixed shapes");
            let mut best: Option<usize> = None;
            for i in 0..self.actions.len() {
                if !valid.contains(&self.actions.kind_of(i)) {
                    continue;
                }
                if best.map_or(true, |b| logits.data[i] > logits.data[b]) {
                    best = Some(i);
                }
            }
            let action = self.actions.action(best.expect("valid set nonempty"));
            state.apply(&action).expect("masked choice is valid");
            transitions += 1;
            assert!(transitions <= 2 * n, "arc-eager decode exceeded 2n transitions");
        }

        let heads: Vec<usize> = state.heads.iter().map(|h| h.unwrap_or(0)).collect();
        let labels: Vec<String> = state
            .labels
            .iter()
            .map(|l| l.clone().unwrap_or_else(|| FALLBACK_DEPREL.to_string()))
            .collect();
        (heads, labels)
    }

    /// UAS/LAS over a dataset with gold trees.
    pub fn attachment(&self, ds: &Dataset, floret: Option<&FloretTable>) -> Result<(f64, f64)> {
        let mut gold = Vec::new();
        let mut pred = Vec::new();
        for (i, sent) in ds.sentences.iter().enumerate() {
            let heads = sent
                .heads
                .as_ref()
                .ok_or_else(|| Error::data(format!("sentence {i} has no heads")))?;
            let labels = sent
                .deprels
                .as_ref()
                .ok_or_else(|| Error::data(format!("sentence {i} has no deprels")))?;
            gold.push((heads.clone(), labels.clone()));
            let (ph, pl) = self.parse(sent, floret);
            pred.push((ph, pl));
        }
        attachment_scores(&gold, &pred)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tok2vec::Tok2VecConfig;

    fn strs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn projectivity_examples() {
        assert!(is_projective(&[2, 0, 2]).unwrap());
        // Arcs (2,4) and (1,3) cross.
        assert!(!is_projective(&[0, 4, 1, 1]).unwrap());
        assert!(is_projective(&[0]).unwrap());
    }

    #[test]
    fn projectivity_rejects_bad_trees() {
        assert!(is_projective(&[2, 1]).is_err()); // cycle / no root
        assert!(is_projective(&[0, 0]).is_err()); // two roots
    }

    #[test]
    fn initial_valid_actions() {
        let state = TransitionState::new(3);
        let kinds = state.valid_kinds();
        assert!(kinds.contains(&ActionKind::Shift));
        assert!(kinds.contains(&ActionKind::RightArc));
        assert!(!kinds.contains(&ActionKind::LeftArc));
        assert!(!kinds.contains(&ActionKind::Reduce));
    }

    #[test]
    fn empty_buffer_with_headed_top_only_reduces() {
        let mut state = TransitionState::new(1);
        state.apply(&Action::RightArc("root".into())).unwrap();
        assert_eq!(state.valid_kinds(), vec![ActionKind::Reduce]);
    }

    #[test]
    fn terminal_state_has_no_actions() {
        let mut state = TransitionState::new(1);
        state.apply(&Action::RightArc("root".into())).unwrap();
        state.apply(&Action::Reduce).unwrap();
        assert!(state.valid_kinds().is_empty());
        assert!(state.is_terminal());
    }

    #[test]
    fn apply_shift_and_left_arc() {
        let mut state = TransitionState::new(2);
        state.apply(&Action::Shift).unwrap();
        assert_eq!(state.stack, vec![0, 1]);
        state.apply(&Action::LeftArc("nsubj".into())).unwrap();
        assert_eq!(state.stack, vec![0]);
        assert_eq!(state.heads[0], Some(2));
    }

    #[test]
    fn reduce_with_headless_top_errors() {
        let mut state = TransitionState::new(2);
        state.apply(&Action::Shift).unwrap();
        assert!(state.apply(&Action::Reduce).is_err());
    }

    #[test]
    fn oracle_hand_simulation() {
        let actions = oracle_transitions(&[2, 0, 2], &strs(&["nsubj", "root", "obj"])).unwrap();
        assert_eq!(
            actions,
            vec![
                Action::Shift,
                Action::LeftArc("nsubj".into()),
                Action::RightArc("root".into()),
                Action::RightArc("obj".into()),
            ]
        );
        let actions = oracle_transitions(&[0], &strs(&["root"])).unwrap();
        assert_eq!(actions, vec![Action::RightArc("root".into())]);
    }

    #[test]
    fn oracle_rejects_nonprojective() {
        assert!(oracle_transitions(&[0, 4, 1, 1], &strs(&["a", "b", "c", "d"])).is_err());
    }

    /// Brute-force replay: applying the oracle sequence must reconstruct
    /// the gold arcs exactly.
    fn replay_matches(heads: &[usize]) -> bool {
        let labels: Vec<String> = (0..heads.len()).map(|i| format!("l{}", i % 3)).collect();
        let actions = oracle_transitions(heads, &labels).unwrap();
        let mut state = TransitionState::new(heads.len());
        for a in &actions {
            state.apply(a).unwrap();
        }
        let got: Vec<usize> = state.heads.iter().map(|h| h.unwrap_or(usize::MAX)).collect();
        let got_labels: Vec<Option<String>> = state.labels.clone();
        got == heads && got_labels.iter().zip(&labels).all(|(g, l)| g.as_deref() == Some(l))
    }

    /// Uniform random tree over n tokens: each token picks a head among
    /// ROOT and the others, rejected unless single-rooted and acyclic.
    pub fn random_tree(n: usize, rng: &mut Rng) -> Vec<usize> {
        loop {
            let heads: Vec<usize> = (0..n)
                .map(|i| loop {
                    let h = rng.next_below(n as u64 + 1) as usize;
                    if h != i + 1 {
                        return h;
                    }
                })
                .collect();
            if check_tree(&heads).is_ok() {
                return heads;
            }
        }
    }

    #[test]
    fn oracle_replay_on_random_projective_trees() {
        let mut rng = Rng::new(17);
        let mut checked = 0;
        while checked < 300 {
            let n = 1 + rng.next_below(10) as usize;
            let heads = random_tree(n, &mut rng);
            if !is_projective(&heads).unwrap() {
                continue;
            }
            assert!(replay_matches(&heads), "oracle replay failed for {heads:?}");
            checked += 1;
        }
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

    fn toy_treebank() -> Dataset {
        // Small projective grammar: DET N PART V (ADV).
        let nouns = ["aso", "pusa", "bahay", "bata"];
        let verbs = ["tumakbo", "natulog", "kumain", "umalis"];
        let mut sentences = Vec::new();
        for i in 0..32 {
            let n = nouns[i % nouns.len()];
            let v = verbs[(i / 4) % verbs.len()];
            let mut s = Sentence::from_words(&["ang", n, "ay", v]);
            s.upos = Some(strs(&["DET", "NOUN", "PART", "VERB"]));
            s.heads = Some(vec![2, 4, 4, 0]);
            s.deprels = Some(strs(&["det", "nsubj", "case", "root"]));
            sentences.push(s);
        }
        Dataset::new(sentences)
    }

    #[test]
    fn learns_toy_treebank() {
        let corpus = toy_treebank();
        let cfg = TrainConfig { epochs: 100, patience: 100, seed: 1, ..Default::default() };
        let (model, excluded) =
            ParserModel::train(tiny_encoder(), &corpus, &Dataset::default(), None, &cfg, None).unwrap();
        assert_eq!(excluded, 0);
        let (uas, las) = model.attachment(&corpus, None).unwrap();
        assert!(las >= 0.99, "training LAS {las}");
        assert!(uas >= las);
    }

    #[test]
    fn nonprojective_sentences_are_counted() {
        let mut corpus = toy_treebank();
        let mut bad = Sentence::from_words(&["a", "b", "c", "d"]);
        bad.upos = Some(strs(&["X", "X", "X", "X"]));
        bad.heads = Some(vec![0, 4, 1, 1]);
        bad.deprels = Some(strs(&["root", "dep", "dep", "dep"]));
        corpus.sentences.push(bad);
        let cfg = TrainConfig { epochs: 1, seed: 1, ..Default::default() };
        let (_, excluded) =
            ParserModel::train(tiny_encoder(), &corpus, &Dataset::default(), None, &cfg, None).unwrap();
        assert_eq!(excluded, 1);
    }

    #[test]
    fn every_token_gets_a_head_under_random_weights() {
        let corpus = toy_treebank();
        let actions = ActionSet::from_dataset(&corpus).unwrap();
        for seed in 0..10 {
            let mut rng = Rng::new(seed);
            let params = register_parser::<f32>(&tiny_encoder(), actions.len(), &mut rng);
            let model = ParserModel { encoder: tiny_encoder(), actions: actions.clone(), params };
            let sent = Sentence::from_words(&["isa", "dalawa", "tatlo", "apat", "lima"]);
            let (heads, labels) = model.parse(&sent, None);
            assert_eq!(heads.len(), 5);
            assert_eq!(labels.len(), 5);
            // Total head function reaching ROOT without cycles.
            for start in 1..=5usize {
                let mut cur = heads[start - 1];
                let mut steps = 0;
                while cur != 0 {
                    cur = heads[cur - 1];
                    steps += 1;
                    assert!(steps <= 5, "cycle in decoded heads {heads:?}");
                }
            }
        }
    }

    #[test]
    fn single_token_parses_to_root() {
        let corpus = toy_treebank();
        let cfg = TrainConfig { epochs: 1, seed: 2, ..Default::default() };
        let (model, _) =
            ParserModel::train(tiny_encoder(), &corpus, &Dataset::default(), None, &cfg, None).unwrap();
        let (heads, _) = model.parse(&Sentence::from_words(&["mabuhay"]), None);
        assert_eq!(heads, vec![0]);
    }

    #[test]
    fn training_deterministic() {
        let corpus = toy_treebank();
        let cfg = TrainConfig { epochs: 3, seed: 9, ..Default::default() };
        let (a, _) = ParserModel::train(tiny_encoder(), &corpus, &Dataset::default(), None, &cfg, None).unwrap();
        let (b, _) = ParserModel::train(tiny_encoder(), &corpus, &Dataset::default(), None, &cfg, None).unwrap();
        assert_eq!(a.params.value("parse.out.w").data, b.params.value("parse.out.w").data);
    }

    #[test]
    fn parser_grad_check() {
        use crate::nn::grad_check;
        let corpus = toy_treebank();
        let actions = ActionSet::from_dataset(&corpus).unwrap();
        let encoder = tiny_encoder();
        let mut rng = Rng::new(4);
        let mut store = register_parser::<f64>(&encoder, actions.len(), &mut rng);
        let sent = corpus.sentences[0].clone();
        let enc = encoder.clone();
        let mut f = move |s: &mut ParamStore<f64>| {
            s.zero_grads();
            parser_loss(&enc, &actions, s, &sent, None).unwrap()
        };
        let err = grad_check(&mut f, &mut store, 1e-5, 40);
        assert!(err < 1e-4, "relative error {err}");
    }
}
