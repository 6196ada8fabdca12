//! Gold file readers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::GoldTriple;
use crate::error::{Error, Result};
use crate::tasks::TripleText;

/// Column layout of an OIE gold file.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum GoldFormat {
    /// `sentence<TAB>head<TAB>relation<TAB>tail`
    #[default]
    Triples,
    /// `sentence<TAB>predicate<TAB>arg0<TAB>arg1[<TAB>more args]`, as
    /// distributed with the OIE2016 benchmark. `arg0` is the head and
    /// `arg1` the tail; further arguments are ignored.
    Benchmark,
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

pub fn parse_oie_gold(text: &str, format: GoldFormat) -> Result<Vec<GoldTriple>> {
    let mut out = Vec::new();
    for (n, line) in lines(text) {
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        let (sentence, head, relation, tail) = match (format, cols.as_slice()) {
            (GoldFormat::Triples, [s, h, r, t]) => (s, h, r, t),
            (GoldFormat::Benchmark, [s, r, h, t, ..]) => (s, h, r, t),
            // a benchmark row with a single argument has no tail
            (GoldFormat::Benchmark, [s, r, h]) => (s, h, r, &""),
            _ => {
                return Err(Error::Eval(format!(
                    "gold line {n}: expected {} tab-separated columns, found {}",
                    match format {
                        GoldFormat::Triples => "4",
                        GoldFormat::Benchmark => "at least 3",
                    },
                    cols.len()
                )))
            }
        };
        out.push(GoldTriple {
            sentence: sentence.to_string(),
            triple: TripleText {
                head: head.to_string(),
                relation: relation.to_string(),
                tail: tail.to_string(),
            },
        });
    }
    Ok(out)
}

/// `id<TAB>value` lines, as used for relation labels and probe tails.
pub fn parse_label_gold(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in lines(text) {
        let Some((id, value)) = line.split_once('\t') else {
            return Err(Error::Eval(format!("gold line {n}: expected id<TAB>value")));
        };
        let id = id.trim();
        if id.is_empty() {
            return Err(Error::Eval(format!("gold line {n}: empty id")));
        }
        if out.insert(id.to_string(), value.trim().to_string()).is_some() {
            return Err(Error::Eval(format!("gold line {n}: duplicate id `{id}`")));
        }
    }
    Ok(out)
}
