//! Byte-pair encoding over integer symbol sequences.
//!
//! Symbols `0..alphabet` are the base alphabet; the i-th merge creates token
//! `alphabet + i`. Training is greedy: at each round the most frequent
//! adjacent pair is merged, ties broken by the lexicographically smallest
//! pair, until the vocabulary budget is spent or no pair occurs twice.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub type Merge = (u32, u32);

/// Replaces non-overlapping occurrences of `pair`, scanning left to right.
fn apply_merge(seq: &[u32], pair: Merge, token: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(seq.len());
    let mut i = 0;
    while i < seq.len() {
        if i + 1 < seq.len() && seq[i] == pair.0 && seq[i + 1] == pair.1 {
            out.push(token);
            i += 2;
        } else {
            out.push(seq[i]);
            i += 1;
        }
    }
    out
}

pub fn bpe_train(corpus: &[Vec<u32>], alphabet: u32, vocab_size: usize) -> Result<Vec<Merge>> {
    if corpus.iter().all(|s| s.is_empty()) {
        return Err(Error::EmptyDataset);
    }
    if vocab_size < alphabet as usize {
        return Err(Error::Codec(format!(
            "vocab size {vocab_size} below alphabet size {alphabet}"
        )));
    }
    if let Some(bad) = corpus.iter().flatten().find(|&&s| s >= alphabet) {
        return Err(Error::Codec(format!("symbol {bad} outside alphabet {alphabet}")));
    }
    let mut seqs: Vec<Vec<u32>> = corpus.to_vec();
    let mut merges = Vec::new();
    while alphabet as usize + merges.len() < vocab_size {
        let mut counts: HashMap<Merge, usize> = HashMap::new();
        for s in &seqs {
            for w in s.windows(2) {
                *counts.entry((w[0], w[1])).or_default() += 1;
            }
        }
        let best = counts
            .into_iter()
            .filter(|(_, c)| *c >= 2)
            .min_by(|(pa, ca), (pb, cb)| cb.cmp(ca).then(pa.cmp(pb)));
        let Some((pair, _)) = best else { break };
        let token = alphabet + merges.len() as u32;
        for s in seqs.iter_mut() {
            *s = apply_merge(s, pair, token);
        }
        merges.push(pair);
    }
    Ok(merges)
}

/// Applies merges in training order.
pub fn bpe_encode(symbols: &[u32], alphabet: u32, merges: &[Merge]) -> Vec<u32> {
    let mut seq = symbols.to_vec();
    for (i, pair) in merges.iter().enumerate() {
        if seq.len() < 2 {
            break;
        }
        seq = apply_merge(&seq, *pair, alphabet + i as u32);
    }
    seq
}

/// Expansion table: base-symbol string for every token id.
pub fn expansions(alphabet: u32, merges: &[Merge]) -> Result<Vec<Vec<u32>>> {
    let mut table: Vec<Vec<u32>> = (0..alphabet).map(|s| vec![s]).collect();
    for (i, (a, b)) in merges.iter().enumerate() {
        let defined = table.len() as u32;
        if *a >= defined || *b >= defined {
            return Err(Error::Codec(format!(
                "merge {i} references undefined token ({a}, {b})"
            )));
        }
        let mut e = table[*a as usize].clone();
        e.extend_from_slice(&table[*b as usize]);
        table.push(e);
    }
    Ok(table)
}

pub fn bpe_decode(tokens: &[u32], table: &[Vec<u32>]) -> Result<Vec<u32>> {
    let mut out = Vec::new();
    for (i, t) in tokens.iter().enumerate() {
        let e = table
            .get(*t as usize)
            .ok_or_else(|| Error::Codec(format!("unknown token {t} at position {i}")))?;
        out.extend_from_slice(e);
    }
    Ok(out)
}
