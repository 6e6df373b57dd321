//! How many distinct source datasets each target token reaches.
//!
//! For every occurrence of a token, count the distinct datasets among its
//! neighbors. `diversity` averages that count over occurrences, `union_count`
//! is the number of distinct datasets across all occurrences together.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDiversity {
    pub diversity: f64,
    pub union_count: usize,
    pub frequency: usize,
}

/// `hits[i]` holds the neighbor dataset ids of the row whose token is `tokens[i]`.
pub fn token_diversity<H, T>(
    hits: &[Vec<H>],
    tokens: &[T],
) -> Result<BTreeMap<String, TokenDiversity>>
where
    H: AsRef<str>,
    T: AsRef<str>,
{
    if hits.len() != tokens.len() {
        return Err(Error::LengthMismatch(format!(
            "{} hit lists but {} tokens",
            hits.len(),
            tokens.len()
        )));
    }
    struct Acc<'a> {
        distinct_sum: usize,
        union: BTreeSet<&'a str>,
        frequency: usize,
    }
    let mut groups: BTreeMap<&str, Acc<'_>> = BTreeMap::new();
    for (row_hits, token) in hits.iter().zip(tokens) {
        let distinct: BTreeSet<&str> = row_hits.iter().map(AsRef::as_ref).collect();
        let acc = groups.entry(token.as_ref()).or_insert_with(|| Acc {
            distinct_sum: 0,
            union: BTreeSet::new(),
            frequency: 0,
        });
        acc.distinct_sum += distinct.len();
        acc.frequency += 1;
        acc.union.extend(distinct);
    }
    Ok(groups
        .into_iter()
        .map(|(token, acc)| {
            (
                token.to_string(),
                TokenDiversity {
                    diversity: acc.distinct_sum as f64 / acc.frequency as f64,
                    union_count: acc.union.len(),
                    frequency: acc.frequency,
                },
            )
        })
        .collect())
}

/// CSV with header `token,frequency,diversity,union_count`.
pub fn to_csv(stats: &BTreeMap<String, TokenDiversity>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["token", "frequency", "diversity", "union_count"])?;
    for (token, s) in stats {
        w.write_record([
            token.as_str(),
            &s.frequency.to_string(),
            &s.diversity.to_string(),
            &s.union_count.to_string(),
        ])?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io("<diversity csv>", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits UTF-8 for UTF-8 input"))
}
