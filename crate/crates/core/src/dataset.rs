//! Prepared dataset directories.
//!
//! Layout, all tab-separated with one record per line:
//!
//! | file            | columns                 |
//! |-----------------|-------------------------|
//! | `entities.tsv`  | `id kind name`          |
//! | `relations.tsv` | `id name`               |
//! | `items.tsv`     | `id` of each kept item  |
//! | `kg.tsv`        | `head relation tail`    |
//! | `train.tsv`     | `head relation tail`    |
//! | `valid.tsv`     | `head relation tail`    |
//! | `test.tsv`      | `head relation tail`    |
//!
//! Items dropped by the side-fact filter keep their entity row but are
//! absent from `items.tsv`.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::path::Path;

use crate::kg::{DatasetSplit, IdMap, Namespace, LIKES_RELATION};
use crate::{EntityId, Error, KnowledgeGraph, Result, Triple};

#[derive(Debug, Clone)]
pub struct Dataset {
    pub ids: IdMap,
    pub kg: KnowledgeGraph,
    pub split: DatasetSplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub kg_entities: usize,
    pub relations: usize,
    pub likes: usize,
    pub side_facts: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub min_item_facts: usize,
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows = [
            ("users", self.users),
            ("items", self.items),
            ("kg entities", self.kg_entities),
            ("relations", self.relations),
            ("likes", self.likes),
            ("side facts", self.side_facts),
            ("train triples", self.train),
            ("validation likes", self.validation),
            ("test likes", self.test),
            ("min facts per item", self.min_item_facts),
        ];
        for (name, v) in rows {
            writeln!(f, "{name:<20}{v:>10}")?;
        }
        Ok(())
    }
}

fn write_triples(path: &Path, triples: &[Triple]) -> Result<()> {
    let mut s = String::with_capacity(triples.len() * 16);
    for t in triples {
        let _ = writeln!(s, "{}\t{}\t{}", t.head, t.relation, t.tail);
    }
    std::fs::write(path, s)?;
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.split('\t').map(str::to_string).collect()))
        .collect())
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, s: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    s.parse().map_err(|e: T::Err| Error::parse(path, line, format!("{s:?}: {e}")))
}

fn read_triples(path: &Path) -> Result<Vec<Triple>> {
    read_lines(path)?
        .into_iter()
        .map(|(line, f)| {
            if f.len() != 3 {
                return Err(Error::parse(path, line, format!("expected 3 fields, got {}", f.len())));
            }
            Ok(Triple::new(
                parse_field(path, line, &f[0])?,
                parse_field(path, line, &f[1])?,
                parse_field(path, line, &f[2])?,
            ))
        })
        .collect()
}

fn expect_dense(path: &Path, line: usize, id: usize, expected: usize) -> Result<()> {
    if id != expected {
        return Err(Error::parse(path, line, format!("expected id {expected}, got {id}")));
    }
    Ok(())
}

impl Dataset {
    pub fn stats(&self) -> DatasetStats {
        let kg = &self.kg;
        DatasetStats {
            users: kg.user_ids().len(),
            items: kg.item_ids().len(),
            kg_entities: kg.kg_entity_ids().len(),
            relations: kg.relation_count(),
            likes: kg.likes().count(),
            side_facts: kg.side_facts().count(),
            train: self.split.train.len(),
            validation: self.split.validation.len(),
            test: self.split.test.len(),
            min_item_facts: kg.item_ids().iter().map(|&i| kg.side_fact_count(i)).min().unwrap_or(0),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut s = String::new();
        for (id, kind, name) in self.ids.entities() {
            if name.contains(['\t', '\n']) {
                return Err(Error::Construction(format!("entity name {name:?} contains a tab or newline")));
            }
            let _ = writeln!(s, "{id}\t{}\t{name}", kind.as_str());
        }
        std::fs::write(dir.join("entities.tsv"), s)?;

        let mut s = String::new();
        for (id, name) in self.ids.relations() {
            let _ = writeln!(s, "{id}\t{name}");
        }
        std::fs::write(dir.join("relations.tsv"), s)?;

        let mut s = String::new();
        for id in self.kg.item_ids() {
            let _ = writeln!(s, "{id}");
        }
        std::fs::write(dir.join("items.tsv"), s)?;

        write_triples(&dir.join("kg.tsv"), self.kg.triples())?;
        write_triples(&dir.join("train.tsv"), &self.split.train)?;
        write_triples(&dir.join("valid.tsv"), &self.split.validation)?;
        write_triples(&dir.join("test.tsv"), &self.split.test)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("entities.tsv");
        let mut entities = Vec::new();
        for (line, f) in read_lines(&path)? {
            if f.len() != 3 {
                return Err(Error::parse(&path, line, format!("expected 3 fields, got {}", f.len())));
            }
            expect_dense(&path, line, parse_field(&path, line, &f[0])?, entities.len())?;
            let kind: Namespace = parse_field(&path, line, &f[1])?;
            entities.push((kind, f[2].clone()));
        }

        let path = dir.join("relations.tsv");
        let mut relations = Vec::new();
        for (line, f) in read_lines(&path)? {
            if f.len() != 2 {
                return Err(Error::parse(&path, line, format!("expected 2 fields, got {}", f.len())));
            }
            expect_dense(&path, line, parse_field(&path, line, &f[0])?, relations.len())?;
            relations.push(f[1].clone());
        }
        let ids = IdMap::from_tables(entities, relations)?;

        let path = dir.join("items.tsv");
        let mut item_ids = BTreeSet::new();
        for (line, f) in read_lines(&path)? {
            let id: EntityId = parse_field(&path, line, &f[0])?;
            if (id as usize) >= ids.entity_count() || ids.kind(id) != Namespace::Item {
                return Err(Error::parse(&path, line, format!("{id} is not an item entity")));
            }
            item_ids.insert(id);
        }
        let user_ids = ids.ids_of(Namespace::User).collect();
        let kg = KnowledgeGraph::new(
            ids.entity_count(),
            ids.relation_count(),
            read_triples(&dir.join("kg.tsv"))?,
            user_ids,
            item_ids,
            LIKES_RELATION,
        )?;
        let split = DatasetSplit {
            train: read_triples(&dir.join("train.tsv"))?,
            validation: read_triples(&dir.join("valid.tsv"))?,
            test: read_triples(&dir.join("test.tsv"))?,
        };
        for t in split.train.iter().chain(&split.validation).chain(&split.test) {
            if !kg.contains(t) {
                return Err(Error::Construction(format!("split triple {t} is not in the graph")));
            }
        }
        Ok(Self { ids, kg, split })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::split_likes;
    use crate::synthetic::{generate_synthetic_kg, SyntheticSpec};

    fn small() -> Dataset {
        let spec = SyntheticSpec {
            users: 20,
            items: 16,
            attributes: 12,
            ..SyntheticSpec::default()
        };
        let syn = generate_synthetic_kg(&spec, 4).unwrap();
        let split = split_likes(&syn.kg, 0.1, 0.2, 4).unwrap();
        Dataset {
            ids: syn.ids,
            kg: syn.kg,
            split,
        }
    }

    #[test]
    fn round_trip_is_identical() {
        let d = small();
        let dir = tempfile::tempdir().unwrap();
        d.write(dir.path()).unwrap();
        let back = Dataset::read(dir.path()).unwrap();
        assert_eq!(back.kg, d.kg);
        assert_eq!(back.split, d.split);
        assert_eq!(back.stats(), d.stats());
        let again = tempfile::tempdir().unwrap();
        back.write(again.path()).unwrap();
        for f in ["entities.tsv", "relations.tsv", "items.tsv", "kg.tsv", "train.tsv", "valid.tsv", "test.tsv"] {
            assert_eq!(
                std::fs::read(dir.path().join(f)).unwrap(),
                std::fs::read(again.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let d = small();
        let dir = tempfile::tempdir().unwrap();
        d.write(dir.path()).unwrap();
        std::fs::write(dir.path().join("test.tsv"), "0\t0\n").unwrap();
        assert!(matches!(Dataset::read(dir.path()), Err(Error::Parse { line: 1, .. })));
        std::fs::write(dir.path().join("test.tsv"), "0\t0\t0\n").unwrap();
        assert!(Dataset::read(dir.path()).is_err());
        std::fs::remove_file(dir.path().join("kg.tsv")).unwrap();
        assert!(matches!(Dataset::read(dir.path()), Err(Error::Io(_))));
    }
}
