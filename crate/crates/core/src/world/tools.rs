use alloc::collections::BTreeMap;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{KnowledgeWorld, Triple};
use crate::text;

/// Results returned per search query.
pub const DEFAULT_TOP_K: usize = 10;
const TITLE_WEIGHT: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SearchResult {
    pub title: String,
    pub url: String,
    pub snippet: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SearchResponse {
    Results(Vec<SearchResult>),
    /// Tool failure, shown to the agent as text.
    Error(String),
}

/// Per-worker memory of issued searches, keyed by normalized query text.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SearchCache {
    entries: BTreeMap<String, Vec<SearchResult>>,
    recent: Vec<String>,
}

impl SearchCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, query: &str) -> Option<&[SearchResult]> {
        self.entries.get(&text::normalize_query(query)).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Most recent cached query whose results include `url`.
    pub fn query_for_url(&self, url: &str) -> Option<&str> {
        self.recent
            .iter()
            .rev()
            .find(|q| self.entries[*q].iter().any(|r| r.url == url))
            .map(String::as_str)
    }

    fn insert(&mut self, key: String, results: Vec<SearchResult>) {
        self.recent.retain(|q| q != &key);
        self.recent.push(key.clone());
        self.entries.insert(key, results);
    }
}

fn rank(world: &KnowledgeWorld, query: &BTreeSet<String>, k: usize) -> Vec<SearchResult> {
    let mut scored: Vec<(usize, &str, &str, &str)> = world
        .indexed_pages()
        .map(|(page, title, snippet_tokens, snippet)| {
            let t = query.iter().filter(|w| title.contains(*w)).count();
            let s = query.iter().filter(|w| snippet_tokens.contains(*w)).count();
            (TITLE_WEIGHT * t + s, page.page_id.as_str(), page.title.as_str(), snippet)
        })
        .collect();
    // pages iterate in page_id order and the sort is stable
    scored.sort_by(|a, b| b.0.cmp(&a.0));
    scored
        .into_iter()
        .take(k)
        .map(|(_, url, title, snippet)| SearchResult { title: title.into(), url: url.into(), snippet: snippet.into() })
        .collect()
}

/// Runs each query against the page corpus and returns the top `k` pages
/// by lexical overlap (title matches weigh triple), ties by page id. Every
/// answered query is cached; a cached query returns its cached list.
/// Malformed requests produce in-band errors rather than failing.
pub fn web_search<S: AsRef<str>>(
    world: &KnowledgeWorld,
    cache: &mut SearchCache,
    queries: &[S],
    k: usize,
) -> Vec<(String, SearchResponse)> {
    if queries.is_empty() {
        return alloc::vec![(String::new(), SearchResponse::Error("error: web_search needs at least one query".into()))];
    }
    queries
        .iter()
        .map(|q| {
            let q = q.as_ref();
            let key = text::normalize_query(q);
            if key.is_empty() {
                return (q.into(), SearchResponse::Error("error: empty search query".into()));
            }
            if k == 0 {
                return (q.into(), SearchResponse::Error("error: top-k must be at least 1".into()));
            }
            if let Some(hit) = cache.entries.get(&key) {
                let hit = hit.clone();
                cache.insert(key, hit.clone());
                return (q.into(), SearchResponse::Results(hit));
            }
            let words: BTreeSet<String> = text::tokens(q).into_iter().collect();
            let results = rank(world, &words, k);
            cache.insert(key, results.clone());
            (q.into(), SearchResponse::Results(results))
        })
        .collect()
}

pub type BrowseEntry = (String, String);

/// Returns, for every url in order, the page title and the page's facts that
/// share a word with the originating search query (best overlap first).
/// With an empty originating query the cached query that surfaced the url is
/// used. Unknown urls yield a not-found payload.
pub fn web_browse<S: AsRef<str>>(
    world: &KnowledgeWorld,
    cache: &SearchCache,
    url_list: &[S],
    originating_query: &str,
) -> Vec<BrowseEntry> {
    url_list
        .iter()
        .map(|url| {
            let url = url.as_ref();
            let Some(page) = world.page(url) else {
                return (url.into(), String::from("page not found"));
            };
            let q = if originating_query.trim().is_empty() {
                cache.query_for_url(url).unwrap_or("")
            } else {
                originating_query
            };
            let words: BTreeSet<String> = text::tokens(q).into_iter().collect();
            let mut relevant: Vec<(usize, Triple)> = page
                .facts
                .iter()
                .map(|&f| {
                    let toks = text::tokens(&world.fact_sentence(f));
                    (toks.iter().filter(|t| words.contains(*t)).count(), f)
                })
                .filter(|(n, _)| words.is_empty() || *n > 0)
                .collect();
            relevant.sort_by(|a, b| b.0.cmp(&a.0));
            let body = if relevant.is_empty() {
                format!("{}: nothing relevant to \"{}\"", page.title, q)
            } else {
                let facts: Vec<String> = relevant.iter().map(|(_, f)| world.fact_sentence(*f)).collect();
                format!("{}: {}", page.title, facts.join(" "))
            };
            (url.into(), body)
        })
        .collect()
}

pub fn render_search(responses: &[(String, SearchResponse)]) -> String {
    let mut out = String::new();
    for (q, resp) in responses {
        match resp {
            SearchResponse::Results(rs) => {
                out.push_str(&format!("results for \"{q}\":\n"));
                for (i, r) in rs.iter().enumerate() {
                    out.push_str(&format!("{}. ({}, {}, {})\n", i + 1, r.title, r.url, r.snippet));
                }
            }
            SearchResponse::Error(e) => {
                out.push_str(e);
                out.push('\n');
            }
        }
    }
    out
}

pub fn render_browse(entries: &[BrowseEntry]) -> String {
    let mut out = String::new();
    for (url, info) in entries {
        out.push_str(&format!("({url}, {info})\n"));
    }
    out
}

/// First `<entity> <relation> <entity>` pattern in `text` that is a true
/// fact of the world.
pub fn extract_fact(world: &KnowledgeWorld, text: &str) -> Option<Triple> {
    let words = text::tokens(text);
    words.windows(3).find_map(|w| {
        let s = world.entity_by_name(&w[0])?;
        let r = world.label_by_name(&w[1])?;
        let o = world.entity_by_name(&w[2])?;
        (world.object(s, r) == Some(o)).then_some(Triple { subject: s, relation: r, object: o })
    })
}
