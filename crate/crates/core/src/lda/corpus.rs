use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{weighted::WeightedIndex, Distribution, Gamma};

use crate::data::Dataset;
use crate::{Error, Result};

/// Bag-of-words documents over a vocabulary of size `v`. Each document is a
/// list of distinct `(term, count)` pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    v: usize,
    docs: Vec<Vec<(u32, u32)>>,
}

impl Corpus {
    /// Duplicate terms within a document are merged and terms are sorted.
    pub fn new(v: usize, docs: Vec<Vec<(u32, u32)>>) -> Result<Self> {
        if v == 0 {
            return Err(Error::domain("vocabulary must be nonempty"));
        }
        let mut merged = Vec::with_capacity(docs.len());
        for mut doc in docs {
            if let Some(&(t, _)) = doc.iter().find(|(t, _)| *t as usize >= v) {
                return Err(Error::Domain(alloc::format!("term id {t} out of range for vocabulary {v}")));
            }
            if doc.iter().any(|(_, c)| *c == 0) {
                return Err(Error::domain("term counts must be >= 1"));
            }
            doc.sort_unstable_by_key(|(t, _)| *t);
            let mut out: Vec<(u32, u32)> = Vec::with_capacity(doc.len());
            for (t, c) in doc {
                match out.last_mut() {
                    Some(last) if last.0 == t => last.1 += c,
                    _ => out.push((t, c)),
                }
            }
            merged.push(out);
        }
        Ok(Self { v, docs: merged })
    }

    pub fn vocab_size(&self) -> usize {
        self.v
    }

    pub fn docs(&self) -> &[Vec<(u32, u32)>] {
        &self.docs
    }

    pub fn doc(&self, d: usize) -> &[(u32, u32)] {
        &self.docs[d]
    }

    /// N_d.
    pub fn doc_len(&self, d: usize) -> f64 {
        self.docs[d].iter().map(|(_, c)| *c as f64).sum()
    }

    pub fn total_tokens(&self) -> f64 {
        (0..self.docs.len()).map(|d| self.doc_len(d)).sum()
    }
}

impl Dataset for Corpus {
    fn len(&self) -> usize {
        self.docs.len()
    }

    fn subset(&self, indices: &[usize]) -> Self {
        Self {
            v: self.v,
            docs: indices.iter().map(|&i| self.docs[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticCorpusConfig {
    pub k: usize,
    pub v: usize,
    pub docs: usize,
    pub words_per_doc: usize,
    /// Symmetric Dirichlet concentration for per-document proportions.
    pub alpha: f64,
    /// Symmetric Dirichlet concentration for topics; ignored when `disjoint`.
    pub eta: f64,
    /// Topic k is uniform over its own contiguous block of V/K terms.
    pub disjoint: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    /// `k × v` row-stochastic topic matrix.
    pub topics: Vec<f64>,
    /// `docs × k` topic proportions.
    pub proportions: Vec<f64>,
}

fn dirichlet(rng: &mut ChaCha8Rng, conc: f64, len: usize) -> Result<Vec<f64>> {
    let g = Gamma::new(conc, 1.0).map_err(|_| Error::config("alpha", "Dirichlet concentration must be > 0"))?;
    let mut draw: Vec<f64> = (0..len).map(|_| g.sample(rng)).collect();
    let total: f64 = draw.iter().sum();
    if !(total > 0.0) {
        // Every gamma draw underflowed; fall back to a single random corner.
        let j = rand::Rng::random_range(rng, 0..len);
        draw.iter_mut().enumerate().for_each(|(i, p)| *p = if i == j { 1.0 } else { 0.0 });
        return Ok(draw);
    }
    draw.iter_mut().for_each(|p| *p /= total);
    Ok(draw)
}

/// Draws a corpus from the LDA generative process. Deterministic per seed.
pub fn synthetic_corpus(config: &SyntheticCorpusConfig) -> Result<SyntheticCorpus> {
    let SyntheticCorpusConfig { k, v, docs, words_per_doc, .. } = *config;
    if k == 0 {
        return Err(Error::config("k", "must be >= 1"));
    }
    if v < k && config.disjoint {
        return Err(Error::config("v", "disjoint topics need at least one term per topic"));
    }
    if v == 0 {
        return Err(Error::config("v", "must be >= 1"));
    }
    if !(config.alpha > 0.0) {
        return Err(Error::config("alpha", "must be > 0"));
    }
    if !config.disjoint && !(config.eta > 0.0) {
        return Err(Error::config("eta", "must be > 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut topics = Vec::with_capacity(k * v);
    for t in 0..k {
        if config.disjoint {
            let (lo, hi) = (t * v / k, (t + 1) * v / k);
            let p = 1.0 / (hi - lo) as f64;
            topics.extend((0..v).map(|w| if (lo..hi).contains(&w) { p } else { 0.0 }));
        } else {
            topics.extend(dirichlet(&mut rng, config.eta, v)?);
        }
    }
    let word_dists: Vec<WeightedIndex<f64>> = topics
        .chunks_exact(v)
        .map(|row| WeightedIndex::new(row.iter().copied()).map_err(|_| Error::domain("degenerate topic")))
        .collect::<Result<_>>()?;
    let mut proportions = Vec::with_capacity(docs * k);
    let mut out = Vec::with_capacity(docs);
    for _ in 0..docs {
        let theta = dirichlet(&mut rng, config.alpha, k)?;
        let pick = WeightedIndex::new(theta.iter().copied()).map_err(|_| Error::domain("degenerate proportions"))?;
        let mut counts = alloc::vec![0u32; v];
        for _ in 0..words_per_doc {
            let z = pick.sample(&mut rng);
            counts[word_dists[z].sample(&mut rng)] += 1;
        }
        out.push(
            counts
                .iter()
                .enumerate()
                .filter(|(_, c)| **c > 0)
                .map(|(w, c)| (w as u32, *c))
                .collect(),
        );
        proportions.extend(theta);
    }
    Ok(SyntheticCorpus {
        corpus: Corpus::new(v, out)?,
        topics,
        proportions,
    })
}
