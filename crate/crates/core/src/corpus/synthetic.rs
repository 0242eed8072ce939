//! Deterministic template corpus with gold POS tags and a rule-checkable
//! sentiment label.
//!
//! Template: `<det> <noun> <be> <adj> [and <adj>] [<tail>]`, lengths 4..=14.
//! Adjectives come from disjoint positive / negative sets; nouns and tails
//! are shared between the classes.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AttributeSchema, AttributeValue, LabeledSentence, DEFAULT_MAX_LEN};

pub const NEGATIVE: usize = 0;
pub const POSITIVE: usize = 1;

pub const POSITIVE_ADJECTIVES: [&str; 12] = [
    "great",
    "delicious",
    "friendly",
    "amazing",
    "excellent",
    "fresh",
    "wonderful",
    "tasty",
    "perfect",
    "lovely",
    "fantastic",
    "awesome",
];

pub const NEGATIVE_ADJECTIVES: [&str; 12] = [
    "terrible",
    "awful",
    "rude",
    "bland",
    "horrible",
    "disgusting",
    "stale",
    "cold",
    "slow",
    "dirty",
    "greasy",
    "mediocre",
];

pub const NOUNS: [&str; 30] = [
    "food",
    "pizza",
    "service",
    "staff",
    "waiter",
    "burger",
    "salad",
    "coffee",
    "steak",
    "pasta",
    "soup",
    "dessert",
    "menu",
    "place",
    "room",
    "bar",
    "price",
    "sushi",
    "bread",
    "chicken",
    "owner",
    "manager",
    "music",
    "patio",
    "wine",
    "beer",
    "taco",
    "sandwich",
    "hotel",
    "breakfast",
];

const DETERMINERS: [(&str, &str); 4] = [
    ("the", "DT"),
    ("this", "DT"),
    ("that", "DT"),
    ("our", "PRP$"),
];
const BE: [(&str, &str); 2] = [("is", "VBZ"), ("was", "VBD")];

/// Neutral trailing phrases, `word/TAG` separated by spaces; 2 to 8 tokens.
const TAILS: [&str; 22] = [
    "at/IN night/NN",
    "with/IN friends/NNS",
    "as/IN always/RB",
    "for/IN the/DT price/NN",
    "in/IN the/DT morning/NN",
    "at/IN this/DT location/NN",
    "during/IN lunch/NN today/NN",
    "every/DT single/JJ time/NN",
    "every/DT time/NN we/PRP go/VBP",
    "if/IN you/PRP ask/VBP me/PRP",
    "when/WRB we/PRP visited/VBD last/JJ week/NN",
    "at/IN the/DT new/JJ downtown/NN spot/NN",
    "on/IN our/PRP$ first/JJ visit/NN to/TO town/NN",
    "for/IN a/DT quick/JJ bite/NN after/IN work/NN",
    "as/RB far/RB as/IN i/PRP can/MD tell/VB",
    "even/RB on/IN a/DT busy/JJ friday/NNP night/NN",
    "according/VBG to/TO everyone/NN at/IN our/PRP$ table/NN",
    "when/WRB my/PRP$ family/NN came/VBD here/RB for/IN dinner/NN",
    "after/IN we/PRP waited/VBD for/IN almost/RB an/DT hour/NN",
    "from/IN the/DT moment/NN we/PRP walked/VBD in/IN the/DT door/NN",
    "on/IN the/DT weekend/NN after/IN the/DT long/JJ drive/NN",
    "with/IN my/PRP$ parents/NNS on/IN a/DT rainy/JJ sunday/NNP afternoon/NN",
];

const P_SECOND_ADJ: f64 = 0.4;
const P_TAIL: f64 = 0.6;

fn tail_lengths() -> BTreeMap<usize, Vec<&'static str>> {
    let mut by_len: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for t in TAILS {
        by_len.entry(t.split(' ').count()).or_default().push(t);
    }
    by_len
}

/// `n_per_class` negatives followed by `n_per_class` positives, interleaved
/// deterministically by `seed`.
pub fn generate_synthetic_corpus(seed: u64, n_per_class: usize) -> Vec<LabeledSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tails = tail_lengths();
    let tail_lens: Vec<usize> = tails.keys().copied().collect();
    let schema = AttributeSchema::sentiment_and_length(DEFAULT_MAX_LEN);
    let mut out = Vec::with_capacity(2 * n_per_class);
    for i in 0..2 * n_per_class {
        let class = if i % 2 == 0 { NEGATIVE } else { POSITIVE };
        let adjectives: &[&str] = if class == POSITIVE {
            &POSITIVE_ADJECTIVES
        } else {
            &NEGATIVE_ADJECTIVES
        };
        let mut words: Vec<(&str, &str)> = Vec::with_capacity(14);
        words.push(*DETERMINERS.choose(&mut rng).expect("nonempty"));
        words.push((NOUNS.choose(&mut rng).expect("nonempty"), "NN"));
        words.push(*BE.choose(&mut rng).expect("nonempty"));
        let first = *adjectives.choose(&mut rng).expect("nonempty");
        words.push((first, "JJ"));
        if rng.random_bool(P_SECOND_ADJ) {
            let second = loop {
                let a = *adjectives.choose(&mut rng).expect("nonempty");
                if a != first {
                    break a;
                }
            };
            words.push(("and", "CC"));
            words.push((second, "JJ"));
        }
        if rng.random_bool(P_TAIL) {
            let len = *tail_lens.choose(&mut rng).expect("nonempty");
            let tail = tails[&len].choose(&mut rng).expect("nonempty");
            for pair in tail.split(' ') {
                let (w, t) = pair.split_once('/').expect("word/TAG");
                words.push((w, t));
            }
        }
        let tokens: Vec<String> = words.iter().map(|(w, _)| w.to_string()).collect();
        let tags: Vec<String> = words.iter().map(|(_, t)| t.to_string()).collect();
        let mut attributes = BTreeMap::new();
        attributes.insert("sentiment".to_string(), AttributeValue::Class(class));
        super::extract_direct_attributes(&tokens, &schema, &mut attributes);
        out.push(LabeledSentence {
            tokens,
            pos_tags: Some(tags),
            attributes,
        });
    }
    out
}

/// Rule label: positive iff at least one positive adjective and no negative one.
pub fn oracle_label<S: AsRef<str>>(tokens: &[S]) -> usize {
    let pos = tokens
        .iter()
        .any(|t| POSITIVE_ADJECTIVES.contains(&t.as_ref()));
    let neg = tokens
        .iter()
        .any(|t| NEGATIVE_ADJECTIVES.contains(&t.as_ref()));
    if pos && !neg {
        POSITIVE
    } else {
        NEGATIVE
    }
}

/// Deterministic train / held-out split preserving class balance: the last
/// `test_per_class` sentences of each class are held out.
pub fn split_heldout(
    data: &[LabeledSentence],
    test_per_class: usize,
) -> (Vec<LabeledSentence>, Vec<LabeledSentence>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [NEGATIVE, POSITIVE] {
        let members: Vec<&LabeledSentence> = data
            .iter()
            .filter(|s| s.class_of("sentiment") == Some(class))
            .collect();
        let cut = members.len().saturating_sub(test_per_class);
        train.extend(members[..cut].iter().map(|s| (*s).clone()));
        test.extend(members[cut..].iter().map(|s| (*s).clone()));
    }
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn same_seed_same_corpus() {
        let a = generate_synthetic_corpus(7, 3);
        let b = generate_synthetic_corpus(7, 3);
        assert_eq!(a, b);
        assert_ne!(a, generate_synthetic_corpus(8, 3));
    }

    #[test]
    fn adjective_sets_are_disjoint_and_large_enough() {
        let p: BTreeSet<_> = POSITIVE_ADJECTIVES.iter().collect();
        let n: BTreeSet<_> = NEGATIVE_ADJECTIVES.iter().collect();
        assert!(p.is_disjoint(&n));
        assert!(p.len() >= 10 && n.len() >= 10);
        assert_eq!(NOUNS.iter().collect::<BTreeSet<_>>().len(), 30);
    }

    #[test]
    fn positives_have_only_positive_adjectives() {
        for s in generate_synthetic_corpus(11, 200) {
            let class = s.class_of("sentiment").unwrap();
            let pos = s
                .tokens
                .iter()
                .filter(|t| POSITIVE_ADJECTIVES.contains(&t.as_str()))
                .count();
            let neg = s
                .tokens
                .iter()
                .filter(|t| NEGATIVE_ADJECTIVES.contains(&t.as_str()))
                .count();
            if class == POSITIVE {
                assert!(pos >= 1 && neg == 0, "{:?}", s.tokens);
            }
            assert_eq!(oracle_label(&s.tokens), class);
        }
    }

    #[test]
    fn full_size_corpus_shape() {
        let data = generate_synthetic_corpus(7, 2500);
        assert_eq!(data.len(), 5000);
        let pos = data
            .iter()
            .filter(|s| s.class_of("sentiment") == Some(POSITIVE))
            .count();
        assert_eq!(pos, 2500);
        let lengths: BTreeSet<usize> = data.iter().map(|s| s.len()).collect();
        assert!(lengths.len() >= 5);
        assert!(*lengths.first().unwrap() >= 4 && *lengths.last().unwrap() <= 14);
        for s in &data {
            assert_eq!(s.pos_tags.as_ref().unwrap().len(), s.len());
            assert_eq!(
                s.attributes["length"],
                AttributeValue::Scalar(s.len() as f64)
            );
        }
    }

    #[test]
    fn tails_cover_two_to_eight_tokens() {
        let lens: Vec<usize> = tail_lengths().keys().copied().collect();
        assert_eq!(lens, (2..=8).collect::<Vec<_>>());
    }

    #[test]
    fn heldout_split_is_balanced() {
        let data = generate_synthetic_corpus(1, 50);
        let (train, test) = split_heldout(&data, 10);
        assert_eq!(train.len(), 80);
        assert_eq!(test.len(), 20);
        assert_eq!(
            test.iter()
                .filter(|s| s.class_of("sentiment") == Some(NEGATIVE))
                .count(),
            10
        );
    }
}
