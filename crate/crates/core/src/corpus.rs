//! Corpus reading/writing (CoNLL-U, IOB2), span/tag conversion, and
//! deterministic data splits.
//!
//! Heads are stored 1-based with 0 meaning the artificial ROOT, matching
//! the CoNLL-U convention.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::BufRead;

use crate::error::{Error, Result};
use crate::hash::Rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub has_space_after: bool,
}

impl Token {
    pub fn new(text: impl Into<String>) -> Self {
        Token { text: text.into(), has_space_after: true }
    }
}

/// Half-open labeled token interval.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl Span {
    pub fn new(start: usize, end: usize, label: impl Into<String>) -> Self {
        Span { start, end, label: label.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    pub upos: Option<Vec<String>>,
    /// 1-based head per token; 0 = ROOT.
    pub heads: Option<Vec<usize>>,
    pub deprels: Option<Vec<String>>,
    pub ents: Vec<Span>,
    pub cat: Option<String>,
}

impl Sentence {
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Self {
        Sentence {
            tokens: words.iter().map(|w| Token::new(w.as_ref())).collect(),
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub sentences: Vec<Sentence>,
    /// Sentence indices where a new document starts (strictly increasing).
    pub doc_boundaries: Vec<usize>,
}

impl Dataset {
    pub fn new(sentences: Vec<Sentence>) -> Self {
        Dataset { sentences, doc_boundaries: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Entity label excluded from NER corpora at load time.
const MISC: &str = "MISC";

fn validate_tree(heads: &[usize], first_line: usize) -> Result<()> {
    let n = heads.len();
    let roots = heads.iter().filter(|&&h| h == 0).count();
    if roots != 1 {
        return Err(Error::parse(first_line, format!("expected exactly one root, found {roots}")));
    }
    for (i, &h) in heads.iter().enumerate() {
        if h > n {
            return Err(Error::parse(
                first_line,
                format!("HEAD {h} out of range for sentence of length {n}"),
            ));
        }
        // Walk to root; more than n steps means a cycle.
        let mut cur = h;
        let mut steps = 0;
        while cur != 0 {
            cur = heads[cur - 1];
            steps += 1;
            if steps > n {
                return Err(Error::parse(first_line, format!("cycle through token {}", i + 1)));
            }
        }
    }
    Ok(())
}

/// Read a CoNLL-U stream. Multiword-token range lines (`1-2`) and empty-node
/// lines (`1.1`) are skipped. `# newdoc` comments become doc boundaries.
pub fn read_conllu<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut sentences = Vec::new();
    let mut doc_boundaries = Vec::new();

    let mut tokens: Vec<Token> = Vec::new();
    let mut upos: Vec<String> = Vec::new();
    let mut heads: Vec<usize> = Vec::new();
    let mut deprels: Vec<String> = Vec::new();
    let mut block_first_line = 0usize;

    let flush = |tokens: &mut Vec<Token>,
                     upos: &mut Vec<String>,
                     heads: &mut Vec<usize>,
                     deprels: &mut Vec<String>,
                     first_line: usize,
                     sentences: &mut Vec<Sentence>|
     -> Result<()> {
        if tokens.is_empty() {
            return Ok(());
        }
        validate_tree(heads, first_line)?;
        sentences.push(Sentence {
            tokens: std::mem::take(tokens),
            upos: Some(std::mem::take(upos)),
            heads: Some(std::mem::take(heads)),
            deprels: Some(std::mem::take(deprels)),
            ents: Vec::new(),
            cat: None,
        });
        Ok(())
    };

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);

        if line.is_empty() {
            flush(&mut tokens, &mut upos, &mut heads, &mut deprels, block_first_line, &mut sentences)?;
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if comment.trim_start().starts_with("newdoc") {
                doc_boundaries.push(sentences.len());
            }
            continue;
        }

        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(Error::parse(lineno, format!("expected 10 columns, found {}", cols.len())));
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            // Multiword-token range or empty-node line.
            continue;
        }
        if tokens.is_empty() {
            block_first_line = lineno;
        }
        let _: usize = id
            .parse()
            .map_err(|_| Error::parse(lineno, format!("bad token ID {id:?}")))?;
        let head: usize = cols[6]
            .parse()
            .map_err(|_| Error::parse(lineno, format!("bad HEAD {:?}", cols[6])))?;

        let space_after = !cols[9].split('|').any(|f| f == "SpaceAfter=No");
        tokens.push(Token { text: cols[1].to_string(), has_space_after: space_after });
        upos.push(cols[3].to_string());
        heads.push(head);
        deprels.push(cols[7].to_string());
    }
    flush(&mut tokens, &mut upos, &mut heads, &mut deprels, block_first_line, &mut sentences)?;

    // Doc boundaries must point at real sentences and stay strictly increasing.
    doc_boundaries.dedup();
    doc_boundaries.retain(|&b| b < sentences.len());

    Ok(Dataset { sentences, doc_boundaries })
}

/// Write a dataset as CoNLL-U. Every sentence must carry upos, heads, and
/// deprels.
pub fn write_conllu(ds: &Dataset) -> Result<String> {
    let mut out = String::new();
    let boundaries: BTreeSet<usize> = ds.doc_boundaries.iter().copied().collect();
    for (si, sent) in ds.sentences.iter().enumerate() {
        let (upos, heads, deprels) = match (&sent.upos, &sent.heads, &sent.deprels) {
            (Some(u), Some(h), Some(d)) => (u, h, d),
            _ => {
                return Err(Error::data(format!(
                    "sentence {si} is missing upos/heads/deprels annotations"
                )))
            }
        };
        if upos.len() != sent.len() || heads.len() != sent.len() || deprels.len() != sent.len() {
            return Err(Error::data(format!("sentence {si} has inconsistent annotation lengths")));
        }
        if boundaries.contains(&si) {
            out.push_str("# newdoc\n");
        }
        for (i, tok) in sent.tokens.iter().enumerate() {
            let misc = if tok.has_space_after { "_" } else { "SpaceAfter=No" };
            out.push_str(&format!(
                "{}\t{}\t_\t{}\t_\t_\t{}\t{}\t_\t{}\n",
                i + 1,
                tok.text,
                upos[i],
                heads[i],
                deprels[i],
                misc
            ));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Result of reading an IOB2 file: the dataset plus the number of invalid
/// `I-X` openings repaired to `B-X`.
#[derive(Debug)]
pub struct IobRead {
    pub dataset: Dataset,
    pub repairs: usize,
}

/// Read two-column IOB2 (`TOKEN<TAB>TAG`). `I-X` without a preceding
/// `B-X`/`I-X` of the same type is repaired to `B-X` and counted. The MISC
/// label is rejected.
pub fn read_iob<R: BufRead>(reader: R) -> Result<IobRead> {
    let mut sentences = Vec::new();
    let mut tokens: Vec<Token> = Vec::new();
    let mut tags: Vec<String> = Vec::new();
    let mut repairs = 0usize;
    let mut block_first_line = 1usize;

    let flush =
        |tokens: &mut Vec<Token>, tags: &mut Vec<String>, first_line: usize, sentences: &mut Vec<Sentence>, repairs: &mut usize| -> Result<()> {
            if tokens.is_empty() {
                return Ok(());
            }
            let (fixed, n_fixed) = repair_iob(tags);
            *repairs += n_fixed;
            let spans = iob_to_spans(&fixed, first_line)?;
            sentences.push(Sentence {
                tokens: std::mem::take(tokens),
                upos: None,
                heads: None,
                deprels: None,
                ents: spans,
                cat: None,
            });
            tags.clear();
            Ok(())
        };

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            flush(&mut tokens, &mut tags, block_first_line, &mut sentences, &mut repairs)?;
            continue;
        }
        let (text, tag) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(lineno, "expected TOKEN<TAB>TAG"))?;
        check_iob_tag(tag, lineno)?;
        if tokens.is_empty() {
            block_first_line = lineno;
        }
        tokens.push(Token::new(text));
        tags.push(tag.to_string());
    }
    flush(&mut tokens, &mut tags, block_first_line, &mut sentences, &mut repairs)?;

    Ok(IobRead { dataset: Dataset::new(sentences), repairs })
}

fn check_iob_tag(tag: &str, lineno: usize) -> Result<()> {
    if tag == "O" {
        return Ok(());
    }
    let label = match tag.split_once('-') {
        Some(("B", l)) | Some(("I", l)) if !l.is_empty() => l,
        _ => return Err(Error::parse(lineno, format!("tag {tag:?} is outside the IOB2 scheme"))),
    };
    if label == MISC {
        return Err(Error::parse(lineno, "MISC label is not supported for NER corpora"));
    }
    Ok(())
}

/// Repair `I-X` tokens that do not continue a chunk of the same type.
fn repair_iob(tags: &[String]) -> (Vec<String>, usize) {
    let mut out = Vec::with_capacity(tags.len());
    let mut repairs = 0;
    for (i, tag) in tags.iter().enumerate() {
        if let Some(label) = tag.strip_prefix("I-") {
            let continues = i > 0
                && (tags[i - 1] == format!("B-{label}") || out[i - 1] == format!("I-{label}")
                    || out[i - 1] == format!("B-{label}"));
            if !continues {
                out.push(format!("B-{label}"));
                repairs += 1;
                continue;
            }
        }
        out.push(tag.clone());
    }
    (out, repairs)
}

fn iob_to_spans(tags: &[String], first_line: usize) -> Result<Vec<Span>> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, String)> = None;
    for (i, tag) in tags.iter().enumerate() {
        match tag.split_once('-') {
            None => {
                if let Some((start, label)) = open.take() {
                    spans.push(Span::new(start, i, label));
                }
            }
            Some(("B", label)) => {
                if let Some((start, prev)) = open.take() {
                    spans.push(Span::new(start, i, prev));
                }
                open = Some((i, label.to_string()));
            }
            Some(("I", label)) => match &open {
                Some((_, prev)) if prev == label => {}
                _ => {
                    return Err(Error::parse(
                        first_line + i,
                        format!("I-{label} does not continue an open chunk"),
                    ))
                }
            },
            _ => return Err(Error::parse(first_line + i, format!("bad tag {tag:?}"))),
        }
    }
    if let Some((start, label)) = open {
        spans.push(Span::new(start, tags.len(), label));
    }
    Ok(spans)
}

/// Write sentences as two-column IOB2.
pub fn write_iob(ds: &Dataset) -> Result<String> {
    let mut out = String::new();
    for sent in &ds.sentences {
        let tags = spans_to_iob(sent.len(), &sent.ents)?;
        for (tok, tag) in sent.tokens.iter().zip(&tags) {
            out.push_str(&format!("{}\t{}\n", tok.text, tag));
        }
        out.push('\n');
    }
    Ok(out)
}

fn check_spans(len: usize, spans: &[Span]) -> Result<()> {
    let mut prev_end = 0usize;
    let mut sorted: Vec<&Span> = spans.iter().collect();
    sorted.sort_by_key(|s| (s.start, s.end));
    for s in sorted {
        if s.start >= s.end || s.end > len {
            return Err(Error::data(format!(
                "invalid span ({}, {}) for sentence of length {len}",
                s.start, s.end
            )));
        }
        if s.start < prev_end {
            return Err(Error::data(format!("overlapping span at token {}", s.start)));
        }
        prev_end = s.end;
    }
    Ok(())
}

/// Encode spans as BILUO tags over a sentence of `len` tokens.
pub fn spans_to_biluo(len: usize, spans: &[Span]) -> Result<Vec<String>> {
    check_spans(len, spans)?;
    let mut tags = vec!["O".to_string(); len];
    for s in spans {
        if s.end - s.start == 1 {
            tags[s.start] = format!("U-{}", s.label);
        } else {
            tags[s.start] = format!("B-{}", s.label);
            for t in tags.iter_mut().take(s.end - 1).skip(s.start + 1) {
                *t = format!("I-{}", s.label);
            }
            tags[s.end - 1] = format!("L-{}", s.label);
        }
    }
    Ok(tags)
}

/// Encode spans as IOB2 tags.
pub fn spans_to_iob(len: usize, spans: &[Span]) -> Result<Vec<String>> {
    let biluo = spans_to_biluo(len, spans)?;
    Ok(biluo
        .into_iter()
        .map(|t| match t.split_once('-') {
            Some(("U", l)) => format!("B-{l}"),
            Some(("L", l)) => format!("I-{l}"),
            _ => t,
        })
        .collect())
}

/// Decode BILUO tags back to spans. Strict: any scheme violation is an error
/// naming the offending index.
pub fn biluo_to_spans(tags: &[String]) -> Result<Vec<Span>> {
    decode_biluo(tags, true)
}

/// Lenient decoding: invalid fragments are dropped instead of rejected.
pub fn biluo_to_spans_lenient(tags: &[String]) -> Vec<Span> {
    decode_biluo(tags, false).expect("lenient decode cannot fail")
}

fn decode_biluo(tags: &[String], strict: bool) -> Result<Vec<Span>> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, String)> = None;
    for (i, tag) in tags.iter().enumerate() {
        let bad = |msg: &str| Error::data(format!("invalid BILUO at index {i}: {msg}"));
        match tag.split_once('-') {
            None if tag == "O" => {
                if open.is_some() {
                    if strict {
                        return Err(bad("O inside an open entity"));
                    }
                    open = None;
                }
            }
            None => {
                if strict {
                    return Err(bad(&format!("unknown tag {tag:?}")));
                }
            }
            Some(("U", label)) => {
                if open.is_some() {
                    if strict {
                        return Err(bad("U inside an open entity"));
                    }
                    open = None;
                }
                spans.push(Span::new(i, i + 1, label));
            }
            Some(("B", label)) => {
                if open.is_some() {
                    if strict {
                        return Err(bad("B inside an open entity"));
                    }
                }
                open = Some((i, label.to_string()));
            }
            Some(("I", label)) => match &open {
                Some((_, prev)) if prev == label => {}
                _ => {
                    if strict {
                        return Err(bad(&format!("I-{label} without an open {label} entity")));
                    }
                    open = None;
                }
            },
            Some(("L", label)) => match open.take() {
                Some((start, prev)) if prev == label => {
                    spans.push(Span::new(start, i + 1, label));
                }
                _ => {
                    if strict {
                        return Err(bad(&format!("L-{label} without an open {label} entity")));
                    }
                }
            },
            Some(_) => {
                if strict {
                    return Err(bad(&format!("unknown tag {tag:?}")));
                }
            }
        }
    }
    if open.is_some() && strict {
        return Err(Error::data("invalid BILUO: entity still open at sentence end"));
    }
    Ok(spans)
}

/// Shuffle sentence indices with the seeded PRNG and partition into k folds.
/// Returns (train, test) per fold; fold sizes differ by at most one.
pub fn kfold_split(ds: &Dataset, k: usize, seed: u64) -> Result<Vec<(Dataset, Dataset)>> {
    let n = ds.len();
    if k < 2 || k > n {
        return Err(Error::data(format!("k must satisfy 2 <= k <= {n}, got {k}")));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut indices);

    let base = n / k;
    let rem = n % k;
    let mut folds: Vec<Vec<usize>> = Vec::with_capacity(k);
    let mut pos = 0;
    for f in 0..k {
        let size = base + usize::from(f < rem);
        folds.push(indices[pos..pos + size].to_vec());
        pos += size;
    }

    Ok((0..k)
        .map(|f| {
            let test: Vec<Sentence> = folds[f].iter().map(|&i| ds.sentences[i].clone()).collect();
            let train: Vec<Sentence> = folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, fold)| fold.iter().map(|&i| ds.sentences[i].clone()))
                .collect();
            (Dataset::new(train), Dataset::new(test))
        })
        .collect())
}

/// Three-way split with largest-remainder rounding of the requested ratios.
pub fn holdout_split(
    ds: &Dataset,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let (tr, dv, te) = ratios;
    if tr <= 0.0 || dv <= 0.0 || te <= 0.0 {
        return Err(Error::data("split fractions must all be positive"));
    }
    if (tr + dv + te - 1.0).abs() > 1e-9 {
        return Err(Error::data(format!("split fractions must sum to 1, got {}", tr + dv + te)));
    }
    let n = ds.len();
    let mut indices: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut indices);

    let sizes = largest_remainder(n, &[tr, dv, te]);
    let mut parts: Vec<Vec<Sentence>> = Vec::with_capacity(3);
    let mut pos = 0;
    for &size in &sizes {
        parts.push(indices[pos..pos + size].iter().map(|&i| ds.sentences[i].clone()).collect());
        pos += size;
    }
    let mut it = parts.into_iter();
    Ok((
        Dataset::new(it.next().unwrap()),
        Dataset::new(it.next().unwrap()),
        Dataset::new(it.next().unwrap()),
    ))
}

fn largest_remainder(n: usize, ratios: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|&e| e.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for i in 0..(n - assigned) {
        sizes[order[i % ratios.len()]] += 1;
    }
    sizes
}
