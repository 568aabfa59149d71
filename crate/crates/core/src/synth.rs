//! Synthetic corpus with planted attribute-driven transitions, and the
//! matching knowledge table for the offline oracle.
//!
//! Items are split evenly across genres and ordered into one series per
//! genre. Each user favors a genre and walks its series from a random start,
//! with occasional items from other genres mixed in. The held-out item is
//! always the next unseen item of the favorite series.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{canonicalize_label, Catalog, InteractionSequence, Item, ItemId};
use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::llm::{KnowledgeEntry, KnowledgeTable};

const GENRES: [&str; 12] = [
    "western",
    "horror",
    "musical",
    "documentary",
    "romance",
    "thriller",
    "animation",
    "fantasy",
    "mystery",
    "comedy",
    "war",
    "noir",
];

const SYLLABLES: [&str; 24] = [
    "ka", "lo", "mi", "ru", "ze", "po", "ta", "vi", "ne", "su", "da", "fo", "gi", "hu", "ja", "ke", "lu", "ma",
    "no", "pe", "qui", "ro", "sa", "tu",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_genres: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that an event is drawn from outside the favorite genre.
    pub noise_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 500,
            n_items: 200,
            n_genres: 10,
            min_len: 5,
            max_len: 12,
            noise_prob: 0.2,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub dataset: Dataset,
    pub knowledge: KnowledgeTable,
    /// Series order per genre, as item ids.
    pub series: BTreeMap<String, Vec<ItemId>>,
}

fn pseudo_title(rng: &mut ChaCha8Rng, used: &mut HashSet<String>) -> String {
    loop {
        let mut words = Vec::new();
        for _ in 0..2 {
            let n = rng.random_range(2..=3);
            let w: String = (0..n).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect();
            words.push(w);
        }
        let t = words.join(" ");
        if used.insert(t.clone()) {
            return t;
        }
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<SyntheticCorpus> {
    if cfg.n_genres == 0 || cfg.n_genres > GENRES.len() {
        return Err(Error::invalid(format!("n_genres must be in 1..={}", GENRES.len())));
    }
    if cfg.n_items < 2 * cfg.n_genres {
        return Err(Error::invalid("need at least two items per genre"));
    }
    if cfg.min_len < 2 || cfg.max_len < cfg.min_len {
        return Err(Error::invalid("need 2 <= min_len <= max_len"));
    }
    let per_genre = cfg.n_items / cfg.n_genres;
    if cfg.max_len > per_genre {
        return Err(Error::invalid("max_len may not exceed the series length"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let width = cfg.n_items.to_string().len();
    let mut used = HashSet::new();
    let mut items = Vec::with_capacity(cfg.n_items);
    let mut series: BTreeMap<String, Vec<ItemId>> = BTreeMap::new();
    let mut genre_of = Vec::with_capacity(cfg.n_items);
    for i in 0..cfg.n_items {
        let genre = GENRES[(i % cfg.n_genres).min(cfg.n_genres - 1)];
        let id = ItemId::new(format!("m{i:0width$}"));
        let title = pseudo_title(&mut rng, &mut used);
        items.push(Item::new(id.clone(), &title, vec![genre.to_string()])?);
        series.entry(genre.to_string()).or_default().push(id);
        genre_of.push(genre);
    }
    for list in series.values_mut() {
        list.shuffle(&mut rng);
    }
    let catalog = Catalog::new(items)?;

    let mut sequences = Vec::with_capacity(cfg.n_users);
    let genres: Vec<&String> = series.keys().collect();
    let uw = cfg.n_users.to_string().len();
    for u in 0..cfg.n_users {
        let fav = genres[rng.random_range(0..genres.len())].clone();
        let list = &series[&fav];
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let start = rng.random_range(0..list.len());
        let mut events = Vec::with_capacity(len);
        let mut seen = BTreeSet::new();
        let mut pos = start;
        // Everything but the target may be noise; the target is always the
        // next series item.
        while events.len() + 1 < len {
            if rng.random::<f64>() < cfg.noise_prob {
                let other = genres[rng.random_range(0..genres.len())];
                if *other == fav {
                    continue;
                }
                let pick = series[other].choose(&mut rng).expect("non-empty").clone();
                if seen.insert(pick.clone()) {
                    events.push(pick);
                }
            } else {
                let id = list[pos % list.len()].clone();
                pos += 1;
                seen.insert(id.clone());
                events.push(id);
            }
        }
        events.push(list[pos % list.len()].clone());
        sequences.push(InteractionSequence {
            user_id: format!("u{u:0uw$}"),
            events,
            attributes: vec![fav],
        });
    }

    let mut knowledge = KnowledgeTable::default();
    for (genre, list) in &series {
        let items = list
            .iter()
            .map(|id| canonicalize_label(&catalog.get(id).expect("generated").title))
            .collect::<Result<Vec<_>>>()?;
        knowledge.attributes.insert(
            genre.clone(),
            KnowledgeEntry {
                concepts: vec![format!("love of {genre} stories"), format!("{genre} atmosphere")],
                items,
            },
        );
    }
    let dataset = Dataset { catalog, sequences };
    dataset.validate()?;
    Ok(SyntheticCorpus {
        dataset,
        knowledge,
        series,
    })
}
