//! Deterministic synthetic chit-chat corpus for hermetic runs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::corpus::{Conversation, Split};
use crate::types::Utterance;

const TOPICS: &[&[&str]] = &[
    &[
        "weather", "rain", "sunny", "cold", "umbrella", "forecast", "warm", "cloudy",
    ],
    &[
        "dinner",
        "restaurant",
        "pizza",
        "hungry",
        "cook",
        "kitchen",
        "menu",
        "noodles",
    ],
    &[
        "movie", "cinema", "ticket", "actor", "film", "popcorn", "tonight", "scene",
    ],
    &[
        "work",
        "office",
        "boss",
        "meeting",
        "project",
        "deadline",
        "salary",
        "colleague",
    ],
    &[
        "travel", "flight", "hotel", "airport", "passport", "beach", "luggage", "trip",
    ],
    &[
        "shopping", "price", "store", "discount", "shirt", "size", "cash", "receipt",
    ],
    &[
        "school", "exam", "teacher", "homework", "class", "study", "grade", "library",
    ],
    &[
        "doctor",
        "sick",
        "fever",
        "medicine",
        "hospital",
        "appointment",
        "headache",
        "rest",
    ],
    &["music", "concert", "song", "guitar", "band", "piano", "radio", "dance"],
    &["sport", "football", "match", "team", "score", "gym", "running", "coach"],
    &[
        "family", "sister", "parents", "birthday", "gift", "wedding", "cousin", "party",
    ],
    &[
        "house",
        "apartment",
        "rent",
        "neighbor",
        "garden",
        "room",
        "move",
        "furniture",
    ],
];

const FILLERS: &[&str] = &[
    "i", "you", "we", "the", "a", "really", "think", "yes", "no", "maybe", "should", "about", "what", "how", "do",
    "is", "that", "great", "sure", "well", "so", "it", "not", "like",
];

fn utterance(rng: &mut ChaCha8Rng, topic: &[&str], previous: Option<&str>) -> Utterance {
    let len = rng.gen_range(3..=9);
    let prev: Vec<&str> = previous.map(|p| p.split_whitespace().collect()).unwrap_or_default();
    let mut words = Vec::with_capacity(len + 1);
    for _ in 0..len {
        let roll: f64 = rng.gen();
        let w = if roll < 0.45 {
            *topic.choose(rng).expect("non-empty")
        } else if roll < 0.65 && !prev.is_empty() {
            *prev.choose(rng).expect("non-empty")
        } else {
            *FILLERS.choose(rng).expect("non-empty")
        };
        words.push(w);
    }
    words.push(if rng.gen_bool(0.3) { "?" } else { "." });
    Utterance::new(words.join(" ")).expect("generated text is non-empty")
}

/// `count` conversations of 1 to 8 utterances on a handful of topics.
///
/// Consecutive utterances share words, so similarity-based scores vary
/// meaningfully between good and poor continuations.
pub fn synthetic_corpus(count: usize, seed: u64, split: Split) -> Vec<Conversation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let topic = TOPICS[rng.gen_range(0..TOPICS.len())];
            let turns = rng.gen_range(1..=8);
            let mut utterances: Vec<Utterance> = Vec::with_capacity(turns);
            for i in 0..turns {
                let prev = utterances.last().map(|u| u.text().to_owned());
                let u = utterance(&mut rng, topic, prev.as_deref()).with_speaker((i % 2) as u8);
                utterances.push(u);
            }
            Conversation::new(utterances, split).expect("at least one turn")
        })
        .collect()
}
