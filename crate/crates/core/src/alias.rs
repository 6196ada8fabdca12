//! Predicate dictionaries and relation-phrase linking.
//!
//! Dictionary file, one predicate per line:
//! `predicate_id<TAB>label<TAB>alias1|alias2|...`.
//! Task maps live next to it as `taskmap.<task>.tsv` with
//! `predicate_id<TAB>relation_label` lines; a task map consisting of the
//! single line `*<TAB>*` maps every predicate to itself.
//! Blank lines and lines starting with `#` are ignored everywhere.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::triple::TokenSpan;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredicateEntry {
    pub label: String,
    pub aliases: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TaskMap {
    /// The task category is the predicate inventory itself.
    Identity,
    Explicit(BTreeMap<String, String>),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PredicateDictionary {
    pub entries: BTreeMap<String, PredicateEntry>,
    pub task_maps: BTreeMap<String, TaskMap>,
    /// Normalized alias -> predicates sharing it, only for aliases claimed by more than one predicate.
    pub ambiguous: BTreeMap<String, BTreeSet<String>>,
    // normalized phrase (tokens joined by single spaces) -> (predicate, original alias)
    phrases: BTreeMap<String, Vec<(String, String)>>,
    max_phrase_tokens: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct RelationLink {
    pub span: TokenSpan,
    pub predicate_id: String,
    pub matched_alias: String,
}

fn normalize(phrase: &str) -> String {
    phrase
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

impl PredicateDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a predicate. Labels count as aliases for matching.
    pub fn insert(
        &mut self,
        predicate_id: impl Into<String>,
        label: impl Into<String>,
        aliases: impl IntoIterator<Item = impl Into<String>>,
    ) -> std::result::Result<(), String> {
        let id = predicate_id.into();
        if id.is_empty() {
            return Err("empty predicate id".into());
        }
        if self.entries.contains_key(&id) {
            return Err(format!("duplicate predicate id `{id}`"));
        }
        let label = label.into();
        let aliases: Vec<String> = aliases.into_iter().map(Into::into).collect();
        if aliases.iter().any(|a| a.trim().is_empty()) {
            return Err(format!("empty alias for `{id}`"));
        }
        for phrase in std::iter::once(&label).chain(&aliases) {
            let key = normalize(phrase);
            if key.is_empty() {
                continue;
            }
            self.max_phrase_tokens = self.max_phrase_tokens.max(key.split(' ').count());
            let slot = self.phrases.entry(key.clone()).or_default();
            if slot.iter().any(|(p, _)| p == &id) {
                continue;
            }
            slot.push((id.clone(), phrase.clone()));
            if slot.len() > 1 {
                self.ambiguous
                    .entry(key)
                    .or_default()
                    .extend(slot.iter().map(|(p, _)| p.clone()));
            }
        }
        self.entries.insert(id, PredicateEntry { label, aliases });
        Ok(())
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut dict = Self::new();
        for (line_no, line) in content_lines(text) {
            let err = |message: String| Error::Dictionary {
                path: origin.to_path_buf(),
                line: line_no,
                message,
            };
            let mut cols = line.split('\t');
            let (Some(id), Some(label)) = (cols.next(), cols.next()) else {
                return Err(err("expected predicate_id<TAB>label<TAB>aliases".into()));
            };
            let aliases: Vec<&str> = match cols.next() {
                Some(list) if !list.is_empty() => list.split('|').collect(),
                _ => Vec::new(),
            };
            dict.insert(id.trim(), label.trim(), aliases.iter().map(|a| a.trim()))
                .map_err(err)?;
        }
        Ok(dict)
    }

    /// Loads the dictionary and every sibling `taskmap.<task>.tsv`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut dict = Self::parse(&text, path)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let dir = if dir.as_os_str().is_empty() {
            PathBuf::from(".")
        } else {
            dir
        };
        let mut maps: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("taskmap.") && n.ends_with(".tsv"))
            })
            .collect();
        maps.sort();
        for map_path in maps {
            let name = map_path.file_name().unwrap().to_str().unwrap();
            let task = name["taskmap.".len()..name.len() - ".tsv".len()].to_string();
            let text = fs::read_to_string(&map_path).map_err(|e| Error::io(&map_path, e))?;
            let map = parse_task_map(&text, &map_path)?;
            dict.task_maps.insert(task, map);
        }
        Ok(dict)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_ambiguous(&self, alias: &str) -> bool {
        self.ambiguous.contains_key(&normalize(alias))
    }

    /// Maps a predicate into a task's closed category; `Ok(None)` when outside it.
    pub fn task_relation(&self, predicate_id: &str, task: &str) -> Result<Option<String>> {
        match self.task_maps.get(task) {
            None => Err(Error::UnknownTask(task.to_string())),
            Some(TaskMap::Identity) => Ok(Some(predicate_id.to_string())),
            Some(TaskMap::Explicit(map)) => Ok(map.get(predicate_id).cloned()),
        }
    }

    /// Finds every maximal case-insensitive alias match in `tokens`.
    ///
    /// Overlaps resolve longest-first, then leftmost. A span matching an
    /// ambiguous alias yields one link per predicate. Output is sorted by
    /// span start, then predicate id.
    pub fn link(&self, tokens: &[impl AsRef<str>]) -> Vec<RelationLink> {
        let lowered: Vec<String> = tokens.iter().map(|t| t.as_ref().to_lowercase()).collect();
        let n = lowered.len();
        let mut hits: Vec<(TokenSpan, &Vec<(String, String)>)> = Vec::new();
        for start in 0..n {
            let mut key = String::new();
            for end in start + 1..=n.min(start + self.max_phrase_tokens) {
                if lowered[end - 1].is_empty() || lowered[end - 1].contains(char::is_whitespace) {
                    break;
                }
                if end > start + 1 {
                    key.push(' ');
                }
                key.push_str(&lowered[end - 1]);
                if let Some(preds) = self.phrases.get(&key) {
                    hits.push((TokenSpan { start, end }, preds));
                }
            }
        }
        // longest first, then leftmost
        hits.sort_by(|a, b| {
            b.0.len()
                .cmp(&a.0.len())
                .then(a.0.start.cmp(&b.0.start))
        });
        let mut taken = vec![false; n];
        let mut links = Vec::new();
        for (span, preds) in hits {
            if span.indices().any(|i| taken[i]) {
                continue;
            }
            span.indices().for_each(|i| taken[i] = true);
            for (pred, alias) in preds {
                links.push(RelationLink {
                    span,
                    predicate_id: pred.clone(),
                    matched_alias: alias.clone(),
                });
            }
        }
        links.sort_by(|a, b| {
            a.span
                .start
                .cmp(&b.span.start)
                .then_with(|| a.predicate_id.cmp(&b.predicate_id))
        });
        links
    }
}

fn parse_task_map(text: &str, origin: &Path) -> Result<TaskMap> {
    let lines: Vec<(usize, &str)> = content_lines(text).collect();
    if let [(_, only)] = lines.as_slice() {
        if only.trim() == "*\t*" {
            return Ok(TaskMap::Identity);
        }
    }
    let mut map = BTreeMap::new();
    for (line_no, line) in lines {
        let mut cols = line.split('\t');
        match (cols.next(), cols.next()) {
            (Some(p), Some(r)) if !p.trim().is_empty() && !r.trim().is_empty() => {
                if map.insert(p.trim().to_string(), r.trim().to_string()).is_some() {
                    return Err(Error::Dictionary {
                        path: origin.to_path_buf(),
                        line: line_no,
                        message: format!("predicate `{}` mapped twice", p.trim()),
                    });
                }
            }
            _ => {
                return Err(Error::Dictionary {
                    path: origin.to_path_buf(),
                    line: line_no,
                    message: "expected predicate_id<TAB>relation_label".into(),
                })
            }
        }
    }
    Ok(TaskMap::Explicit(map))
}

pub fn link_relation_phrases(
    tokens: &[impl AsRef<str>],
    dict: &PredicateDictionary,
) -> Vec<RelationLink> {
    dict.link(tokens)
}

pub fn predicate_to_task_relation(
    predicate_id: &str,
    task: &str,
    dict: &PredicateDictionary,
) -> Result<Option<String>> {
    dict.task_relation(predicate_id, task)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn birth_dict() -> PredicateDictionary {
        let text = "# predicates\nplace_of_birth\tplace of birth\tborn in|birthplace\n";
        PredicateDictionary::parse(text, Path::new("dict.tsv")).unwrap()
    }

    fn words(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn loads_entry_with_aliases() {
        let d = birth_dict();
        assert_eq!(d.len(), 1);
        assert_eq!(d.entries["place_of_birth"].aliases, vec!["born in", "birthplace"]);
        assert!(PredicateDictionary::parse("", Path::new("x")).unwrap().is_empty());
    }

    #[test]
    fn duplicate_id_and_empty_alias_report_line() {
        let dup = "a\tA\tx\n\nb\tB\ty\na\tA2\tz\n";
        match PredicateDictionary::parse(dup, Path::new("d.tsv")).unwrap_err() {
            Error::Dictionary { line, .. } => assert_eq!(line, 4),
            e => panic!("{e}"),
        }
        let empty = "a\tA\tx||y\n";
        match PredicateDictionary::parse(empty, Path::new("d.tsv")).unwrap_err() {
            Error::Dictionary { line, message, .. } => {
                assert_eq!(line, 1);
                assert!(message.contains("empty alias"));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn shared_alias_is_flagged_ambiguous() {
        let d = PredicateDictionary::parse(
            "part_of\tpart of\tof\nmember_of\tmember of\tof\n",
            Path::new("d"),
        )
        .unwrap();
        assert_eq!(d.len(), 2);
        assert!(d.is_ambiguous("of"));
        assert!(d.is_ambiguous("OF"));
        assert!(!d.is_ambiguous("part of"));
        let links = d.link(&words("one of them"));
        assert_eq!(links.len(), 2);
        assert_eq!(links[0].span, links[1].span);
        assert_eq!(links[0].predicate_id, "member_of");
        assert_eq!(links[1].predicate_id, "part_of");
    }

    #[test]
    fn links_running_example() {
        let toks = words("Born in Glasgow , Fisher is a graduate of the London Opera Centre .");
        let links = birth_dict().link(&toks);
        assert_eq!(
            links,
            vec![RelationLink {
                span: TokenSpan::new(0, 2),
                predicate_id: "place_of_birth".into(),
                matched_alias: "born in".into(),
            }]
        );
        assert!(birth_dict().link(&words("nothing to see here")).is_empty());
    }

    #[test]
    fn repeated_phrase_gives_two_links() {
        let links = birth_dict().link(&words("born in born in"));
        let spans: Vec<_> = links.iter().map(|l| l.span).collect();
        assert_eq!(spans, vec![TokenSpan::new(0, 2), TokenSpan::new(2, 4)]);
    }

    #[test]
    fn longest_match_wins() {
        let d = PredicateDictionary::parse(
            "p1\tgrad\tgraduate\np2\tgrad of\tgraduate of\n",
            Path::new("d"),
        )
        .unwrap();
        let links = d.link(&words("a graduate of x"));
        assert_eq!(links.len(), 1);
        assert_eq!(links[0].predicate_id, "p2");
        assert_eq!(links[0].span, TokenSpan::new(1, 3));
    }

    #[test]
    fn task_maps() {
        let mut d = birth_dict();
        d.task_maps.insert(
            "tacred".into(),
            TaskMap::Explicit(BTreeMap::from([(
                "place_of_birth".to_string(),
                "city_of_birth".to_string(),
            )])),
        );
        d.task_maps.insert("fewrel".into(), TaskMap::Identity);
        assert_eq!(
            predicate_to_task_relation("place_of_birth", "tacred", &d).unwrap(),
            Some("city_of_birth".into())
        );
        assert_eq!(d.task_relation("spouse", "tacred").unwrap(), None);
        assert_eq!(d.task_relation("spouse", "fewrel").unwrap(), Some("spouse".into()));
        assert!(matches!(d.task_relation("x", "nope"), Err(Error::UnknownTask(_))));
    }

    #[test]
    fn identity_task_map_file() {
        let m = parse_task_map("# all\n*\t*\n", Path::new("t")).unwrap();
        assert_eq!(m, TaskMap::Identity);
        assert!(parse_task_map("a\n", Path::new("t")).is_err());
    }
}
