//! Ground-truth context selection: multi-hop sentence chains that follow
//! article links, and single-article contexts for dialogue generation.

use std::collections::HashSet;
use std::ops::Range;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{first_paragraph, Article, ArticleStore, SentenceRef};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SelectError {
    #[error("empty frontier: no first-paragraph sentence links to another article")]
    EmptyFrontier,
    #[error("max_hops must be 1 or 2, got {0}")]
    InvalidMaxHops(usize),
    #[error("store has no article with a non-empty first paragraph")]
    EmptyStore,
}

/// Sentences across link-connected articles, one per article, in hop order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HopChain {
    pub refs: Vec<SentenceRef>,
    pub article_ids: Vec<String>,
}

impl HopChain {
    pub fn hops(&self) -> usize {
        self.refs.len().saturating_sub(1)
    }

    /// Checks connectivity, distinctness and first-paragraph membership
    /// against `store`. Returns a description of the first violation.
    pub fn check(&self, store: &ArticleStore) -> Result<(), String> {
        if !(2..=3).contains(&self.refs.len()) {
            return Err(format!("chain has {} refs", self.refs.len()));
        }
        let ids: Vec<&str> = self.refs.iter().map(|r| r.article_id.as_str()).collect();
        if ids != self.article_ids.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err("article_ids disagree with refs".into());
        }
        let distinct: HashSet<&str> = ids.iter().copied().collect();
        if distinct.len() != ids.len() {
            return Err("articles repeat".into());
        }
        for r in &self.refs {
            let article = store
                .get(&r.article_id)
                .ok_or_else(|| format!("unknown article {}", r.article_id))?;
            if r.sentence_index >= article.first_paragraph_end {
                return Err(format!("{r:?} outside first paragraph"));
            }
        }
        for pair in self.refs.windows(2) {
            let article = store.get(&pair[0].article_id).expect("checked above");
            let connected = article.links.iter().any(|l| {
                l.sentence_index == pair[0].sentence_index && l.target_id == pair[1].article_id
            });
            if !connected {
                return Err(format!("{:?} does not link to {}", pair[0], pair[1].article_id));
            }
        }
        Ok(())
    }
}

/// A single article's first paragraph, used as dialogue context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueContext {
    pub article_id: String,
    pub range: Range<usize>,
}

/// First-paragraph sentences of `article` carrying a link to an article in
/// the store that is not in `visited`, each with its usable targets.
fn onward_sentences<'a>(
    store: &ArticleStore,
    article: &'a Article,
    visited: &HashSet<&str>,
) -> Vec<(usize, Vec<&'a str>)> {
    (0..article.first_paragraph_end)
        .filter_map(|s| {
            let mut targets: Vec<&str> = article
                .links
                .iter()
                .filter(|l| l.sentence_index == s && store.link_resolves(article, l))
                .map(|l| l.target_id.as_str())
                .filter(|t| !visited.contains(t))
                .collect();
            targets.sort_unstable();
            targets.dedup();
            (!targets.is_empty()).then_some((s, targets))
        })
        .collect()
}

/// Every (article, sentence) that can start a chain: a first-paragraph
/// sentence of a candidate article with a link to another stored article.
pub fn start_sentences(store: &ArticleStore) -> Vec<SentenceRef> {
    let none = HashSet::new();
    store
        .candidates()
        .flat_map(|a| {
            onward_sentences(store, a, &none)
                .into_iter()
                .map(move |(s, _)| SentenceRef::new(a.id.clone(), s))
        })
        .collect()
}

/// Samples a hop chain. The start sentence is uniform over
/// [`start_sentences`]; each hop follows a uniformly chosen link to an
/// unvisited article. An intermediate article contributes a link-bearing
/// sentence when another hop is possible; the terminal article contributes
/// a uniformly chosen first-paragraph sentence.
pub fn sample_hop_chain(
    store: &ArticleStore,
    rng_seed: u64,
    max_hops: usize,
) -> Result<HopChain, SelectError> {
    if !(1..=2).contains(&max_hops) {
        return Err(SelectError::InvalidMaxHops(max_hops));
    }
    let starts = start_sentences(store);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let start = starts.choose(&mut rng).ok_or(SelectError::EmptyFrontier)?;

    let mut visited: HashSet<&str> = HashSet::new();
    let mut article = store.get(&start.article_id).expect("start resolves");
    visited.insert(article.id.as_str());
    let mut refs = vec![start.clone()];
    let mut sentence = start.sentence_index;

    for hop in 0..max_hops {
        let mut targets: Vec<&str> = article
            .links
            .iter()
            .filter(|l| l.sentence_index == sentence && store.link_resolves(article, l))
            .map(|l| l.target_id.as_str())
            .filter(|t| !visited.contains(t))
            .collect();
        targets.sort_unstable();
        targets.dedup();
        let target = *targets.choose(&mut rng).expect("sentence was chosen with a live link");
        article = store.get(target).expect("target resolves");
        visited.insert(article.id.as_str());

        let onward = if hop + 1 < max_hops {
            onward_sentences(store, article, &visited)
        } else {
            Vec::new()
        };
        if let Some((s, _)) = onward.choose(&mut rng) {
            sentence = *s;
            refs.push(SentenceRef::new(article.id.clone(), sentence));
        } else {
            let range = first_paragraph(article).map_err(|_| SelectError::EmptyFrontier)?;
            sentence = rng.random_range(range);
            refs.push(SentenceRef::new(article.id.clone(), sentence));
            break;
        }
    }
    let article_ids = refs.iter().map(|r| r.article_id.clone()).collect();
    Ok(HopChain { refs, article_ids })
}

/// Uniformly samples an article with a non-empty first paragraph.
pub fn select_dialogue_context(
    store: &ArticleStore,
    rng_seed: u64,
) -> Result<DialogueContext, SelectError> {
    let usable: Vec<&Article> = store
        .articles()
        .iter()
        .filter(|a| first_paragraph(a).is_ok())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let article = usable.choose(&mut rng).ok_or(SelectError::EmptyStore)?;
    Ok(DialogueContext {
        article_id: article.id.clone(),
        range: first_paragraph(article).expect("filtered above"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{filter_linkable, LinkAnnotation};
    use std::collections::BTreeSet;

    fn article(id: &str, n: usize, links: &[(usize, &str)]) -> Article {
        Article {
            id: id.into(),
            title: id.into(),
            sentences: (0..n).map(|i| format!("{id}{i}.")).collect(),
            first_paragraph_end: n,
            links: links
                .iter()
                .map(|&(s, t)| LinkAnnotation {
                    sentence_index: s,
                    start: 0,
                    end: 1,
                    target_id: t.into(),
                })
                .collect(),
        }
    }

    /// Brute-force enumeration of every chain the sampler may return.
    fn all_chains(store: &ArticleStore, max_hops: usize) -> BTreeSet<Vec<(String, usize)>> {
        fn extend(
            store: &ArticleStore,
            path: Vec<(String, usize)>,
            hops_left: usize,
            out: &mut BTreeSet<Vec<(String, usize)>>,
        ) {
            let (id, s) = path.last().unwrap().clone();
            let a = store.get(&id).unwrap();
            let visited: Vec<&str> = path.iter().map(|(i, _)| i.as_str()).collect();
            for l in a.links.iter().filter(|l| l.sentence_index == s) {
                if visited.contains(&l.target_id.as_str()) || !store.contains(&l.target_id) {
                    continue;
                }
                let b = store.get(&l.target_id).unwrap();
                let can_continue = hops_left > 1
                    && (0..b.first_paragraph_end).any(|t| {
                        b.links.iter().any(|m| {
                            m.sentence_index == t
                                && store.contains(&m.target_id)
                                && m.target_id != b.id
                                && !visited.contains(&m.target_id.as_str())
                        })
                    });
                for t in 0..b.first_paragraph_end {
                    let mut next = path.clone();
                    next.push((b.id.clone(), t));
                    let link_bearing = b.links.iter().any(|m| {
                        m.sentence_index == t
                            && store.contains(&m.target_id)
                            && m.target_id != b.id
                            && !visited.contains(&m.target_id.as_str())
                    });
                    if can_continue {
                        if link_bearing {
                            extend(store, next, hops_left - 1, out);
                        }
                    } else {
                        out.insert(next);
                    }
                }
            }
        }
        let mut out = BTreeSet::new();
        for start in start_sentences(store) {
            extend(store, vec![(start.article_id, start.sentence_index)], max_hops, &mut out);
        }
        out
    }

    fn as_pairs(chain: &HopChain) -> Vec<(String, usize)> {
        chain
            .refs
            .iter()
            .map(|r| (r.article_id.clone(), r.sentence_index))
            .collect()
    }

    #[test]
    fn line_chain_is_forced() {
        let store = filter_linkable(
            &ArticleStore::from_articles(vec![
                article("A", 1, &[(0, "B")]),
                article("B", 1, &[(0, "C")]),
                article("C", 1, &[]),
            ])
            .unwrap(),
        );
        let oracle = all_chains(&store, 2);
        assert_eq!(oracle.len(), 1);
        for seed in 0..20 {
            let chain = sample_hop_chain(&store, seed, 2).unwrap();
            assert_eq!(
                as_pairs(&chain),
                vec![("A".into(), 0), ("B".into(), 0), ("C".into(), 0)]
            );
            chain.check(&store).unwrap();
        }
    }

    #[test]
    fn dangling_onward_links_stop_early() {
        let store = ArticleStore::from_articles(vec![
            article("A", 1, &[(0, "B")]),
            article("B", 2, &[(0, "ghost"), (1, "ghost2")]),
        ])
        .unwrap();
        let oracle = all_chains(&store, 2);
        assert!(oracle.iter().all(|c| c.len() == 2));
        for seed in 0..20 {
            let chain = sample_hop_chain(&store, seed, 2).unwrap();
            assert_eq!(chain.refs.len(), 2);
            assert!(oracle.contains(&as_pairs(&chain)));
        }
    }

    #[test]
    fn samples_lie_in_enumerated_set_and_are_deterministic() {
        let store = ArticleStore::from_articles(vec![
            article("A", 3, &[(0, "B"), (2, "C")]),
            article("B", 2, &[(1, "C"), (1, "A")]),
            article("C", 2, &[(0, "A")]),
            article("D", 2, &[(0, "C"), (1, "ghost")]),
        ])
        .unwrap();
        for max_hops in [1, 2] {
            let oracle = all_chains(&store, max_hops);
            for seed in 0..200 {
                let chain = sample_hop_chain(&store, seed, max_hops).unwrap();
                assert!(oracle.contains(&as_pairs(&chain)), "{chain:?}");
                chain.check(&store).unwrap();
                assert_eq!(chain, sample_hop_chain(&store, seed, max_hops).unwrap());
            }
        }
    }

    #[test]
    fn empty_frontier_and_bad_hops() {
        let store = ArticleStore::from_articles(vec![article("A", 1, &[])]).unwrap();
        assert_eq!(sample_hop_chain(&store, 1, 2), Err(SelectError::EmptyFrontier));
        assert_eq!(sample_hop_chain(&store, 1, 3), Err(SelectError::InvalidMaxHops(3)));
    }

    #[test]
    fn dialogue_context_selection() {
        let one = ArticleStore::from_articles(vec![article("A", 3, &[])]).unwrap();
        let ctx = select_dialogue_context(&one, 9).unwrap();
        assert_eq!(ctx, DialogueContext { article_id: "A".into(), range: 0..3 });

        let empty = ArticleStore::from_articles(vec![]).unwrap();
        assert_eq!(select_dialogue_context(&empty, 0), Err(SelectError::EmptyStore));

        let four = ArticleStore::from_articles(
            ["A", "B", "C", "D"].iter().map(|id| article(id, 2, &[])).collect(),
        )
        .unwrap();
        assert_eq!(
            select_dialogue_context(&four, 5).unwrap(),
            select_dialogue_context(&four, 5).unwrap()
        );
        let mut counts = std::collections::HashMap::new();
        for seed in 0..1000 {
            *counts
                .entry(select_dialogue_context(&four, seed).unwrap().article_id)
                .or_insert(0) += 1;
        }
        for id in ["A", "B", "C", "D"] {
            let c = counts[id];
            assert!((190..=310).contains(&c), "{id} drawn {c} times");
        }
    }
}
