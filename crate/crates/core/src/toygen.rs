//! Deterministic generator for small fully annotated corpora: templated
//! Tagalog-like sentences with PER/ORG/LOC slots, projective gold trees,
//! UPOS tags, and one topic label per template. Ships because the real
//! corpora are not redistributable; meant for tests and tutorials.

use crate::corpus::{Dataset, Sentence, Span};
use crate::hash::Rng;

const PEOPLE: [&str; 8] = ["Juan", "Maria", "Pedro", "Ana", "Jose", "Liza", "Ramon", "Nena"];
const ORGS: [&str; 6] = ["Ateneo", "Meralco", "Jollibee", "PAGASA", "DOST", "Bayantel"];
const PLACES: [&str; 6] = ["Manila", "Cebu", "Davao", "Iloilo", "Baguio", "Palawan"];
const NOUNS: [&str; 6] = ["guro", "doktor", "manunulat", "inhinyero", "magsasaka", "abogado"];

fn strs(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn pick<'a>(pool: &[&'a str], rng: &mut Rng) -> &'a str {
    pool[rng.next_below(pool.len() as u64) as usize]
}

fn span(start: usize, end: usize, label: &str) -> Span {
    Span { start, end, label: label.to_string() }
}

/// One fully annotated sentence from template `t` (0..4).
fn build(t: usize, rng: &mut Rng) -> Sentence {
    match t % 4 {
        0 => {
            // Travel: "si PER ay pumunta sa LOC ."
            let p = pick(&PEOPLE, rng);
            let l = pick(&PLACES, rng);
            let mut s = Sentence::from_words(&["si", p, "ay", "pumunta", "sa", l, "."]);
            s.upos = Some(strs(&["PART", "PROPN", "AUX", "VERB", "ADP", "PROPN", "PUNCT"]));
            s.heads = Some(vec![2, 4, 4, 0, 6, 4, 4]);
            s.deprels = Some(strs(&["case", "nsubj", "aux", "root", "case", "obl", "punct"]));
            s.ents = vec![span(1, 2, "PER"), span(5, 6, "LOC")];
            s.cat = Some("paglalakbay".to_string());
            s
        }
        1 => {
            // Business: "ang ORG ay nagbukas ng opisina sa LOC ."
            let o = pick(&ORGS, rng);
            let l = pick(&PLACES, rng);
            let mut s =
                Sentence::from_words(&["ang", o, "ay", "nagbukas", "ng", "opisina", "sa", l, "."]);
            s.upos = Some(strs(&[
                "DET", "PROPN", "AUX", "VERB", "ADP", "NOUN", "ADP", "PROPN", "PUNCT",
            ]));
            s.heads = Some(vec![2, 4, 4, 0, 6, 4, 8, 4, 4]);
            s.deprels = Some(strs(&[
                "det", "nsubj", "aux", "root", "case", "obj", "case", "obl", "punct",
            ]));
            s.ents = vec![span(1, 2, "ORG"), span(7, 8, "LOC")];
            s.cat = Some("negosyo".to_string());
            s
        }
        2 => {
            // Weather: "umuulan nang malakas sa LOC ngayon ."
            let l = pick(&PLACES, rng);
            let mut s = Sentence::from_words(&["umuulan", "nang", "malakas", "sa", l, "ngayon", "."]);
            s.upos = Some(strs(&["VERB", "PART", "ADJ", "ADP", "PROPN", "ADV", "PUNCT"]));
            s.heads = Some(vec![0, 3, 1, 5, 1, 1, 1]);
            s.deprels = Some(strs(&["root", "mark", "advcl", "case", "obl", "advmod", "punct"]));
            s.ents = vec![span(4, 5, "LOC")];
            s.cat = Some("panahon".to_string());
            s
        }
        _ => {
            // Sports: "nanalo si PER sa NOUN kahapon ." (occupation noun
            // reused as the contested event for lexical variety).
            let p = pick(&PEOPLE, rng);
            let n = pick(&NOUNS, rng);
            let mut s = Sentence::from_words(&["nanalo", "si", p, "sa", n, "kahapon", "."]);
            s.upos = Some(strs(&["VERB", "PART", "PROPN", "ADP", "NOUN", "ADV", "PUNCT"]));
            s.heads = Some(vec![0, 3, 1, 5, 1, 1, 1]);
            s.deprels = Some(strs(&["root", "case", "nsubj", "case", "obl", "advmod", "punct"]));
            s.ents = vec![span(2, 3, "PER")];
            s.cat = Some("isports".to_string());
            s
        }
    }
}

/// Generate `n` fully annotated sentences, cycling the four templates.
pub fn generate(n: usize, seed: u64) -> Dataset {
    let mut rng = Rng::new(seed);
    Dataset::new((0..n).map(|i| build(i, &mut rng)).collect())
}

/// The standard 32-sentence corpus used by tests and tutorials.
pub fn toy_corpus() -> Dataset {
    generate(32, 0)
}
