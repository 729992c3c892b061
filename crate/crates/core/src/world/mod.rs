//! Synthetic knowledge world: an entity-relation graph with functional
//! relations, a corpus of fact pages derived from it, and the two tools the
//! agent calls against it.

mod query;
mod tools;

use alloc::collections::BTreeMap;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::text;

pub use query::{sample_queries, sample_queries_with_mix, split_queries, Query, DEFAULT_MULTI_HOP_FRACTION};
pub use tools::{
    extract_fact, render_browse, render_search, web_browse, web_search, BrowseEntry, SearchCache,
    SearchResponse, SearchResult, DEFAULT_TOP_K,
};

pub type EntityId = u32;
pub type RelationId = u16;

/// Longest hop chain a world may be configured for.
pub const MAX_HOPS: u8 = 5;
/// Number of leading words of a page body shown as the search snippet.
pub const SNIPPET_WORDS: usize = 10;
const FILLER_WORDS: usize = 12;
const BURIED_FRACTION: f64 = 0.25;

const RELATION_LABELS: [&str; 8] = [
    "mentor", "rival", "founder", "patron", "sibling", "neighbor", "employer", "successor",
];

const SYLLABLES: [&str; 24] = [
    "al", "bor", "cen", "dra", "el", "fen", "gar", "hal", "ith", "jor", "kel", "lun", "mor",
    "nar", "ost", "pel", "quin", "ras", "sel", "tor", "ul", "vin", "wen", "zar",
];

const FILLER: [&str; 24] = [
    "archive", "notes", "record", "index", "county", "ledger", "survey", "annual", "report",
    "volume", "appendix", "listing", "history", "local", "press", "digest", "bulletin",
    "catalog", "section", "summary", "review", "gazette", "edition", "folio",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorldError {
    #[error("invalid world configuration: {0}")]
    Config(String),
    #[error("requested {requested} queries but only {available} distinct solvable chains exist")]
    NotEnoughChains { requested: usize, available: usize },
    #[error("inconsistent world data: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Triple {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
}

/// Where the fact sentences sit in the page body relative to the filler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PageLayout {
    /// Primary fact first; the snippet shows it.
    FactFirst,
    /// Filler first; the snippet shows no fact and the page must be browsed.
    FillerFirst,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Page {
    pub page_id: String,
    pub title: String,
    /// The first fact is the page's primary fact; later ones are asides.
    pub facts: Vec<Triple>,
    pub distractor_text: String,
    pub layout: PageLayout,
}

/// Serializable content of a world. [`KnowledgeWorld`] adds lookup indices.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WorldData {
    pub seed: u64,
    pub hop_depth_range: (u8, u8),
    pub entities: Vec<String>,
    pub relation_labels: Vec<String>,
    pub relations: Vec<Triple>,
    pub pages: BTreeMap<String, Page>,
}

#[derive(Debug, Clone)]
struct PageIndex {
    title_tokens: BTreeSet<String>,
    snippet_tokens: BTreeSet<String>,
    snippet: String,
}

/// A generated world plus the indices the tools need. Read-only after
/// construction, so it can be shared across rollout workers.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "WorldData", into = "WorldData"))]
pub struct KnowledgeWorld {
    data: WorldData,
    /// `objects[subject * n_labels + relation]`
    objects: Vec<EntityId>,
    entity_by_name: BTreeMap<String, EntityId>,
    label_by_name: BTreeMap<String, RelationId>,
    page_by_fact: BTreeMap<Triple, String>,
    page_pos: BTreeMap<String, usize>,
    page_index: Vec<PageIndex>,
}

impl PartialEq for KnowledgeWorld {
    fn eq(&self, other: &Self) -> bool {
        self.data == other.data
    }
}

impl From<KnowledgeWorld> for WorldData {
    fn from(w: KnowledgeWorld) -> Self {
        w.data
    }
}

impl TryFrom<WorldData> for KnowledgeWorld {
    type Error = WorldError;

    fn try_from(data: WorldData) -> Result<Self, WorldError> {
        KnowledgeWorld::from_data(data)
    }
}

impl KnowledgeWorld {
    /// Validates the invariants and builds the lookup indices.
    pub fn from_data(data: WorldData) -> Result<Self, WorldError> {
        let n = data.entities.len();
        let l = data.relation_labels.len();
        if n < 2 || l == 0 {
            return Err(WorldError::Inconsistent("too few entities or labels".into()));
        }
        let mut objects = alloc::vec![EntityId::MAX; n * l];
        for t in &data.relations {
            let (s, r, o) = (t.subject as usize, t.relation as usize, t.object as usize);
            if s >= n || o >= n || r >= l {
                return Err(WorldError::Inconsistent(format!("undeclared endpoint in {t:?}")));
            }
            let slot = &mut objects[s * l + r];
            if *slot != EntityId::MAX {
                return Err(WorldError::Inconsistent(format!(
                    "relation {} of {} has two objects",
                    data.relation_labels[r], data.entities[s]
                )));
            }
            *slot = t.object;
        }
        let mut entity_by_name = BTreeMap::new();
        for (i, name) in data.entities.iter().enumerate() {
            if entity_by_name.insert(name.to_lowercase(), i as EntityId).is_some() {
                return Err(WorldError::Inconsistent(format!("duplicate entity {name}")));
            }
        }
        let label_by_name: BTreeMap<String, RelationId> = data
            .relation_labels
            .iter()
            .enumerate()
            .map(|(i, s)| (s.to_lowercase(), i as RelationId))
            .collect();
        let known: BTreeSet<Triple> = data.relations.iter().copied().collect();
        let mut page_index = Vec::with_capacity(data.pages.len());
        let mut page_by_fact = BTreeMap::new();
        let mut page_pos = BTreeMap::new();
        for (id, page) in &data.pages {
            page_pos.insert(id.clone(), page_pos.len());
            if id != &page.page_id {
                return Err(WorldError::Inconsistent(format!("page key {id} != {}", page.page_id)));
            }
            if page.facts.is_empty() || page.facts.iter().any(|f| !known.contains(f)) {
                return Err(WorldError::Inconsistent(format!("page {id} asserts unknown facts")));
            }
            page_by_fact.entry(page.facts[0]).or_insert_with(|| id.clone());
            let snippet = Self::snippet_of(&data, page);
            page_index.push(PageIndex {
                title_tokens: text::tokens(&page.title).into_iter().collect(),
                snippet_tokens: text::tokens(&snippet).into_iter().collect(),
                snippet,
            });
        }
        Ok(Self { data, objects, entity_by_name, label_by_name, page_by_fact, page_pos, page_index })
    }

    pub fn data(&self) -> &WorldData {
        &self.data
    }

    pub fn seed(&self) -> u64 {
        self.data.seed
    }

    pub fn hop_depth_range(&self) -> RangeInclusive<u8> {
        self.data.hop_depth_range.0..=self.data.hop_depth_range.1
    }

    pub fn n_entities(&self) -> usize {
        self.data.entities.len()
    }

    pub fn n_labels(&self) -> usize {
        self.data.relation_labels.len()
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        &self.data.entities[id as usize]
    }

    pub fn label(&self, id: RelationId) -> &str {
        &self.data.relation_labels[id as usize]
    }

    pub fn entity_by_name(&self, name: &str) -> Option<EntityId> {
        self.entity_by_name.get(&name.to_lowercase()).copied()
    }

    pub fn label_by_name(&self, name: &str) -> Option<RelationId> {
        self.label_by_name.get(&name.to_lowercase()).copied()
    }

    /// The unique object of `(subject, relation)`, if the pair exists.
    pub fn object(&self, subject: EntityId, relation: RelationId) -> Option<EntityId> {
        let l = self.n_labels();
        self.objects
            .get(subject as usize * l + relation as usize)
            .copied()
            .filter(|&o| o != EntityId::MAX)
    }

    /// Follows a relation chain from `start`.
    pub fn follow(&self, start: EntityId, chain: &[RelationId]) -> Option<EntityId> {
        chain.iter().try_fold(start, |e, &r| self.object(e, r))
    }

    pub fn pages(&self) -> impl Iterator<Item = &Page> {
        self.data.pages.values()
    }

    pub fn page(&self, page_id: &str) -> Option<&Page> {
        self.data.pages.get(page_id)
    }

    /// Page carrying `fact` as its primary fact.
    pub fn page_of_fact(&self, fact: Triple) -> Option<&Page> {
        self.page_by_fact.get(&fact).and_then(|id| self.page(id))
    }

    pub fn fact_sentence(&self, t: Triple) -> String {
        format!(
            "{} {} {}.",
            self.entity_name(t.subject),
            self.label(t.relation),
            self.entity_name(t.object)
        )
    }

    fn sentence_in(data: &WorldData, t: &Triple) -> String {
        format!(
            "{} {} {}.",
            data.entities[t.subject as usize],
            data.relation_labels[t.relation as usize],
            data.entities[t.object as usize]
        )
    }

    fn body_in(data: &WorldData, page: &Page) -> String {
        let primary = Self::sentence_in(data, &page.facts[0]);
        let asides: Vec<String> = page.facts[1..].iter().map(|t| Self::sentence_in(data, t)).collect();
        let mut parts: Vec<String> = Vec::new();
        match page.layout {
            PageLayout::FactFirst => {
                parts.push(primary);
                parts.push(page.distractor_text.clone());
            }
            PageLayout::FillerFirst => {
                parts.push(page.distractor_text.clone());
                parts.push(primary);
            }
        }
        parts.extend(asides);
        parts.join(" ")
    }

    fn snippet_of(data: &WorldData, page: &Page) -> String {
        let body = Self::body_in(data, page);
        let words: Vec<&str> = body.split_whitespace().take(SNIPPET_WORDS).collect();
        let mut s = words.join(" ");
        s.push_str(" ...");
        s
    }

    /// Full page text: fact sentences and filler in layout order.
    pub fn page_body(&self, page: &Page) -> String {
        Self::body_in(&self.data, page)
    }

    pub(crate) fn page_position(&self, page_id: &str) -> Option<usize> {
        self.page_pos.get(page_id).copied()
    }

    pub(crate) fn indexed_pages(&self) -> impl Iterator<Item = (&Page, &BTreeSet<String>, &BTreeSet<String>, &str)> {
        self.data
            .pages
            .values()
            .zip(&self.page_index)
            .map(|(p, ix)| (p, &ix.title_tokens, &ix.snippet_tokens, ix.snippet.as_str()))
    }

    pub fn snippet(&self, page_id: &str) -> Option<&str> {
        self.page_position(page_id).map(|i| self.page_index[i].snippet.as_str())
    }
}

fn entity_names<R: Rng>(rng: &mut R, n: usize, reserved: &BTreeSet<String>) -> Vec<String> {
    let mut seen = reserved.clone();
    let mut names = Vec::with_capacity(n);
    let mut syllables = 2;
    let mut misses = 0;
    while names.len() < n {
        let mut name = String::new();
        for _ in 0..syllables {
            name.push_str(SYLLABLES[rng.gen_range(0..SYLLABLES.len())]);
        }
        if seen.insert(name.clone()) {
            let mut cs = name.chars();
            let first = cs.next().map(|c| c.to_ascii_uppercase()).unwrap_or('X');
            names.push(core::iter::once(first).chain(cs).collect());
            misses = 0;
        } else {
            misses += 1;
            if misses > 64 {
                syllables += 1;
                misses = 0;
            }
        }
    }
    names
}

/// Generates a world with `n_entities` entities and `n_relations` relation
/// labels. Every entity has exactly one object for every label, so any chain
/// of labels from any entity has a unique answer. Each triple gets its own
/// page.
pub fn generate_world(
    seed: u64,
    n_entities: usize,
    n_relations: usize,
    hop_depth_range: RangeInclusive<u8>,
) -> Result<KnowledgeWorld, WorldError> {
    if n_entities < 2 {
        return Err(WorldError::Config(format!("need at least 2 entities, got {n_entities}")));
    }
    if n_relations < 1 {
        return Err(WorldError::Config("need at least 1 relation label".into()));
    }
    let (lo, hi) = (*hop_depth_range.start(), *hop_depth_range.end());
    if lo < 1 || hi > MAX_HOPS || lo > hi {
        return Err(WorldError::Config(format!("hop range {lo}..={hi} not within 1..={MAX_HOPS}")));
    }
    let mut rng = crate::rng::stream(seed, &[0x776f_726c_64]);

    let relation_labels: Vec<String> = (0..n_relations)
        .map(|i| match RELATION_LABELS.get(i) {
            Some(l) => l.to_string(),
            None => format!("link{i}"),
        })
        .collect();
    let mut reserved: BTreeSet<String> = FILLER.iter().map(|s| s.to_string()).collect();
    reserved.extend(relation_labels.iter().cloned());
    let entities = entity_names(&mut rng, n_entities, &reserved);

    let mut relations = Vec::with_capacity(n_entities * n_relations);
    for s in 0..n_entities {
        for r in 0..n_relations {
            let mut o = rng.gen_range(0..n_entities - 1);
            if o >= s {
                o += 1;
            }
            relations.push(Triple { subject: s as EntityId, relation: r as RelationId, object: o as EntityId });
        }
    }

    let mut order: Vec<usize> = (0..relations.len()).collect();
    order.shuffle(&mut rng);
    let width = core::cmp::max(4, digits(relations.len()));
    let mut pages = BTreeMap::new();
    for (k, &ti) in order.iter().enumerate() {
        let primary = relations[ti];
        let mut facts = alloc::vec![primary];
        if relations.len() > 1 {
            let mut aside = rng.gen_range(0..relations.len() - 1);
            if aside >= ti {
                aside += 1;
            }
            facts.push(relations[aside]);
        }
        let filler: Vec<&str> = (0..FILLER_WORDS).map(|_| FILLER[rng.gen_range(0..FILLER.len())]).collect();
        let layout = if rng.gen_bool(BURIED_FRACTION) { PageLayout::FillerFirst } else { PageLayout::FactFirst };
        let page_id = format!("p{k:0width$}");
        let page = Page {
            page_id: page_id.clone(),
            title: format!("{} {}", entities[primary.subject as usize], relation_labels[primary.relation as usize]),
            facts,
            distractor_text: filler.join(" "),
            layout,
        };
        pages.insert(page_id, page);
    }

    KnowledgeWorld::from_data(WorldData { seed, hop_depth_range: (lo, hi), entities, relation_labels, relations, pages })
}

fn digits(mut n: usize) -> usize {
    let mut d = 1;
    while n >= 10 {
        n /= 10;
        d += 1;
    }
    d
}
