//! Synthetic recommendation data with a planted signal.
//!
//! The catalog holds two kinds of items. Keyword items carry a three-letter
//! code in parentheses, drawn from one letter set for liked items and a
//! disjoint set for disliked ones, so their label is a function of their text.
//! Plain items are numbered titles whose label carries no textual cue. Planted
//! instances put a keyword item in the target slot and plain items in the
//! history. Both domains share the codes and differ in their title nouns.

use rand::seq::IndexedRandom;
use rand::Rng as _;

use crate::corpus::{Domain, HistoryEntry, InteractionRecord, Preference, RecInstance};
use crate::rng::{seeded, Rng, Stream};

const LIKED_LETTERS: [u8; 4] = *b"QZJX";
const DISLIKED_LETTERS: [u8; 4] = *b"KVWF";
const CODES_PER_LABEL: usize = 16;
const PLAIN_PER_NOUN: usize = 8;

const MOVIE_NOUNS: [&str; 12] = [
    "Harbor", "Comet", "Signal", "Outlaw", "Canyon", "Orbit", "Rebel", "Mirage", "Voyage", "Frontier", "Echo", "Raven",
];
const BOOK_NOUNS: [&str; 12] = [
    "Ledger", "Garden", "Atlas", "Sonnet", "Chapel", "Meadow", "Almanac", "Cipher", "Lantern", "Orchard", "Fable",
    "Quill",
];

/// The keyword codes of one label.
pub fn codes(label: Preference) -> Vec<String> {
    let letters = if label.is_like() { LIKED_LETTERS } else { DISLIKED_LETTERS };
    (0..CODES_PER_LABEL)
        .map(|i| [letters[i / 4], letters[i % 4], letters[(i + 1) % 4]].iter().map(|&b| b as char).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticItem {
    pub id: String,
    pub text: String,
    pub label: Preference,
    /// Whether the title carries a keyword code.
    pub planted: bool,
}

/// Every item of a domain: noun × code keyword items, then numbered plain items.
pub fn catalog(domain: Domain) -> Vec<SyntheticItem> {
    let (nouns, prefix): (&[&str], char) = match domain {
        Domain::Movie => (&MOVIE_NOUNS, 'm'),
        Domain::Book => (&BOOK_NOUNS, 'b'),
    };
    let mut items = Vec::new();
    for (ni, noun) in nouns.iter().enumerate() {
        for label in [Preference::Like, Preference::Dislike] {
            for code in codes(label) {
                items.push(SyntheticItem {
                    id: format!("{prefix}{ni}-{code}"),
                    text: format!("{noun} ({code})"),
                    label,
                    planted: true,
                });
            }
        }
        for k in 1..=PLAIN_PER_NOUN {
            let label = if (ni + k) % 2 == 0 { Preference::Like } else { Preference::Dislike };
            items.push(SyntheticItem {
                id: format!("{prefix}{ni}-{k}"),
                text: format!("{noun} {k}"),
                label,
                planted: false,
            });
        }
    }
    items
}

/// Label implied by a title's keyword code, if it has one.
pub fn planted_label(text: &str) -> Option<Preference> {
    let code = text.strip_suffix(')')?.rsplit_once('(')?.1;
    [Preference::Like, Preference::Dislike].into_iter().find(|&l| codes(l).iter().any(|c| c == code))
}

/// `n` instances with a keyword target and 3..=`window` plain history items.
/// With `balanced`, labels alternate like/dislike; otherwise each target is
/// drawn from all keyword items.
pub fn planted_keyword_instances(
    domain: Domain,
    n: usize,
    window: usize,
    balanced: bool,
    seed: u64,
) -> Vec<RecInstance> {
    let (planted, plain): (Vec<_>, Vec<_>) = catalog(domain).into_iter().partition(|i| i.planted);
    let mut rng = seeded(seed ^ ((domain as u64 + 1) << 32), Stream::Synthetic);
    (0..n)
        .map(|i| {
            let target = if balanced {
                let want = if i % 2 == 0 { Preference::Like } else { Preference::Dislike };
                pick(&mut rng, &planted, want)
            } else {
                planted.choose(&mut rng).expect("catalog is non-empty").clone()
            };
            let len = rng.random_range(window.min(3)..=window);
            let history = (0..len)
                .map(|_| {
                    let h = plain.choose(&mut rng).expect("catalog is non-empty");
                    HistoryEntry { item_id: h.id.clone(), text: h.text.clone(), label: h.label }
                })
                .collect();
            RecInstance {
                history,
                target_id: target.id,
                target_text: target.text,
                label: target.label,
                domain,
                user: format!("{domain}-user{i}"),
                target_timestamp: None,
            }
        })
        .collect()
}

fn pick(rng: &mut Rng, items: &[SyntheticItem], label: Preference) -> SyntheticItem {
    loop {
        let item = items.choose(rng).expect("catalog is non-empty");
        if item.label == label {
            return item.clone();
        }
    }
}

/// A raw interaction log for `users` users over the whole catalog. Ratings
/// land above the domain's threshold exactly for liked items; timestamps are
/// strictly increasing when `with_timestamps` is set.
pub fn interaction_log(
    domain: Domain,
    users: usize,
    per_user: std::ops::RangeInclusive<usize>,
    with_timestamps: bool,
    seed: u64,
) -> Vec<InteractionRecord> {
    let items = catalog(domain);
    let (lo, hi, threshold) = match domain {
        Domain::Movie => (1u32, 5u32, 3u32),
        Domain::Book => (1, 10, 5),
    };
    let mut rng = seeded(seed, Stream::Synthetic);
    let mut clock = 964_982_703i64;
    let mut out = Vec::new();
    for u in 0..users {
        let count = rng.random_range(per_user.clone());
        for _ in 0..count {
            let item = items.choose(&mut rng).unwrap();
            let rating = match item.label {
                Preference::Like => rng.random_range(threshold + 1..=hi),
                Preference::Dislike => rng.random_range(lo..=threshold),
            };
            clock += rng.random_range(1..5000);
            out.push(InteractionRecord {
                user_id: format!("u{u}"),
                item_id: item.id.clone(),
                rating: rating as f64,
                timestamp: with_timestamps.then_some(clock),
                item_text: item.text.clone(),
            });
        }
    }
    out
}

/// Render records as a comma-separated log with header
/// `user_id,item_id,rating[,timestamp],title`.
pub fn to_csv(records: &[InteractionRecord]) -> String {
    let with_ts = records.first().is_some_and(|r| r.timestamp.is_some());
    let mut out = String::from(if with_ts {
        "user_id,item_id,rating,timestamp,title\n"
    } else {
        "user_id,item_id,rating,title\n"
    });
    for r in records {
        match r.timestamp {
            Some(ts) if with_ts => {
                out.push_str(&format!("{},{},{},{},{}\n", r.user_id, r.item_id, r.rating, ts, r.item_text))
            }
            _ => out.push_str(&format!("{},{},{},{}\n", r.user_id, r.item_id, r.rating, r.item_text)),
        }
    }
    out
}
