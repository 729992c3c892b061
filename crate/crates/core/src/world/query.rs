use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::{EntityId, KnowledgeWorld, PageLayout, RelationId, Triple, WorldError};

/// Share of sampled queries with two or more hops.
pub const DEFAULT_MULTI_HOP_FRACTION: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Query {
    pub query_id: u32,
    pub surface_form: String,
    pub start: EntityId,
    pub hop_chain: Vec<RelationId>,
    pub answer: EntityId,
    pub answer_name: String,
}

impl Query {
    pub fn hops(&self) -> usize {
        self.hop_chain.len()
    }
}

#[derive(Clone, Copy)]
struct Chain {
    start: EntityId,
    labels: [RelationId; super::MAX_HOPS as usize],
    len: u8,
}

impl Chain {
    fn labels(&self) -> &[RelationId] {
        &self.labels[..self.len as usize]
    }
}

fn buried(world: &KnowledgeWorld, fact: Triple) -> bool {
    world
        .page_of_fact(fact)
        .map(|p| p.layout == PageLayout::FillerFirst)
        .unwrap_or(true)
}

/// All simple chains of exactly `hops` relations that hit at most one page
/// whose snippet hides the fact.
fn chains(world: &KnowledgeWorld, hops: u8) -> Vec<Chain> {
    let mut out = Vec::new();
    let l = world.n_labels() as RelationId;
    let mut path: Vec<EntityId> = Vec::with_capacity(hops as usize + 1);
    let mut chain = Chain { start: 0, labels: [0; super::MAX_HOPS as usize], len: hops };
    for s in 0..world.n_entities() as EntityId {
        chain.start = s;
        path.clear();
        path.push(s);
        walk(world, hops, l, 0, 0, &mut path, &mut chain, &mut out);
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn walk(
    world: &KnowledgeWorld,
    hops: u8,
    n_labels: RelationId,
    depth: u8,
    buried_so_far: u8,
    path: &mut Vec<EntityId>,
    chain: &mut Chain,
    out: &mut Vec<Chain>,
) {
    if depth == hops {
        out.push(*chain);
        return;
    }
    let cur = *path.last().unwrap();
    for r in 0..n_labels {
        let Some(o) = world.object(cur, r) else { continue };
        if path.contains(&o) {
            continue;
        }
        let b = buried_so_far + buried(world, Triple { subject: cur, relation: r, object: o }) as u8;
        if b > 1 {
            continue;
        }
        chain.labels[depth as usize] = r;
        path.push(o);
        walk(world, hops, n_labels, depth + 1, b, path, chain, out);
        path.pop();
    }
}

fn surface_form(world: &KnowledgeWorld, start: EntityId, chain: &[RelationId]) -> String {
    let mut s = String::from("Who is the");
    for (i, &r) in chain.iter().rev().enumerate() {
        if i > 0 {
            s.push_str(" of the");
        }
        s.push(' ');
        s.push_str(world.label(r));
    }
    s.push_str(" of ");
    s.push_str(world.entity_name(start));
    s.push('?');
    s
}

/// Samples `n` distinct queries with the default 75% multi-hop mix.
pub fn sample_queries(world: &KnowledgeWorld, n: usize, rng_seed: u64) -> Result<Vec<Query>, WorldError> {
    sample_queries_with_mix(world, n, rng_seed, DEFAULT_MULTI_HOP_FRACTION)
}

/// Samples `n` distinct queries. `round(n * multi_hop_fraction)` of them have
/// two or more hops (spread evenly over the world's multi-hop depths), the
/// rest one hop. When the world's hop range excludes one side of the split,
/// every query comes from the other side.
pub fn sample_queries_with_mix(
    world: &KnowledgeWorld,
    n: usize,
    rng_seed: u64,
    multi_hop_fraction: f64,
) -> Result<Vec<Query>, WorldError> {
    if !(0.0..=1.0).contains(&multi_hop_fraction) {
        return Err(WorldError::Config(format!("multi-hop fraction {multi_hop_fraction} not in [0, 1]")));
    }
    let range = world.hop_depth_range();
    let (lo, hi) = (*range.start(), *range.end());
    let multi_depths: Vec<u8> = (lo.max(2)..=hi).collect();
    let n_multi = if lo >= 2 {
        n
    } else if multi_depths.is_empty() {
        0
    } else {
        libm::round(n as f64 * multi_hop_fraction) as usize
    };
    let mut per_depth = [0usize; super::MAX_HOPS as usize + 1];
    per_depth[1] = n - n_multi;
    for j in 0..n_multi {
        per_depth[multi_depths[j % multi_depths.len()] as usize] += 1;
    }

    let mut rng = crate::rng::stream(rng_seed, &[world.seed(), 0x7175_6572_79]);
    let mut picked: Vec<Chain> = Vec::with_capacity(n);
    for (hops, &want) in per_depth.iter().enumerate() {
        if want == 0 {
            continue;
        }
        let mut all = chains(world, hops as u8);
        if all.len() < want {
            return Err(WorldError::NotEnoughChains { requested: want, available: all.len() });
        }
        all.shuffle(&mut rng);
        picked.extend_from_slice(&all[..want]);
    }
    picked.shuffle(&mut rng);

    Ok(picked
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let answer = world.follow(c.start, c.labels()).expect("chains follow existing relations");
            Query {
                query_id: i as u32,
                surface_form: surface_form(world, c.start, c.labels()),
                start: c.start,
                hop_chain: c.labels().to_vec(),
                answer,
                answer_name: world.entity_name(answer).into(),
            }
        })
        .collect())
}

/// Disjoint train and held-out sets drawn from one sample.
pub fn split_queries(
    world: &KnowledgeWorld,
    n_train: usize,
    n_heldout: usize,
    rng_seed: u64,
) -> Result<(Vec<Query>, Vec<Query>), WorldError> {
    let mut all = sample_queries(world, n_train + n_heldout, rng_seed)?;
    let heldout = all.split_off(n_train);
    Ok((all, heldout))
}
