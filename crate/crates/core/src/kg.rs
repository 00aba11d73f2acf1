//! Knowledge-graph triple store.
//!
//! Loads tab-separated `head relation tail` files into an immutable,
//! index-backed multigraph. Vocabularies assign dense integer ids in
//! first-appearance order so loading is single-pass and deterministic.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// A fact triple over dense ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: usize,
    pub rel: usize,
    pub tail: usize,
}

impl Triple {
    pub fn new(head: usize, rel: usize, tail: usize) -> Self {
        Triple { head, rel, tail }
    }
}

/// Name → dense id vocabulary, ids assigned in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocab {
    names: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.ids.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn from_names<I: IntoIterator<Item = S>, S: AsRef<str>>(names: I) -> Self {
        let mut v = Vocab::new();
        for n in names {
            v.intern(n.as_ref());
        }
        v
    }
}

/// Immutable directed multigraph of fact triples with adjacency indices.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: Vocab,
    relations: Vocab,
    triples: Vec<Triple>,
    triple_set: HashSet<Triple>,
    /// Per head entity: (relation, tail) pairs.
    out_adj: Vec<Vec<(usize, usize)>>,
    /// Per tail entity: (relation, head) pairs.
    in_adj: Vec<Vec<(usize, usize)>>,
    duplicates_dropped: usize,
}

impl KnowledgeGraph {
    /// Build a graph from already-interned triples. Duplicates are dropped
    /// and counted.
    pub fn from_parts(entities: Vocab, relations: Vocab, raw_triples: Vec<Triple>) -> Result<Self> {
        let n_e = entities.len();
        let n_r = relations.len();
        let mut triples = Vec::with_capacity(raw_triples.len());
        let mut triple_set = HashSet::with_capacity(raw_triples.len());
        let mut duplicates_dropped = 0;
        for t in raw_triples {
            if t.head >= n_e || t.tail >= n_e {
                let id = t.head.max(t.tail);
                return Err(Error::EntityOutOfRange { id, count: n_e });
            }
            if t.rel >= n_r {
                return Err(Error::RelationOutOfRange { id: t.rel, count: n_r });
            }
            if triple_set.insert(t) {
                triples.push(t);
            } else {
                duplicates_dropped += 1;
            }
        }
        let mut out_adj = vec![Vec::new(); n_e];
        let mut in_adj = vec![Vec::new(); n_e];
        for t in &triples {
            out_adj[t.head].push((t.rel, t.tail));
            in_adj[t.tail].push((t.rel, t.head));
        }
        Ok(KnowledgeGraph {
            entities,
            relations,
            triples,
            triple_set,
            out_adj,
            in_adj,
            duplicates_dropped,
        })
    }

    /// Load a TSV triple file, interning names in first-appearance order.
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::load_with_relations(path, None)
    }

    /// Load a TSV triple file against a fixed relation vocabulary (used when
    /// evaluating on a test graph with a trained model: entity names may be
    /// brand new, relation names must already exist).
    pub fn load_with_relations<P: AsRef<Path>>(
        path: P,
        relations: Option<&Vocab>,
    ) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut entities = Vocab::new();
        let mut rel_vocab = relations.cloned().unwrap_or_default();
        let fixed_relations = relations.is_some();
        let mut raw = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = if line.contains('\t') {
                line.split('\t').map(str::trim).collect()
            } else {
                line.split_whitespace().collect()
            };
            if fields.len() != 3 {
                return Err(Error::MalformedLine {
                    path: path.display().to_string(),
                    line: idx + 1,
                    fields: fields.len(),
                });
            }
            let head = entities.intern(fields[0]);
            let rel = if fixed_relations {
                rel_vocab
                    .get(fields[1])
                    .ok_or_else(|| Error::UnknownRelation(fields[1].to_string()))?
            } else {
                rel_vocab.intern(fields[1])
            };
            let tail = entities.intern(fields[2]);
            raw.push(Triple::new(head, rel, tail));
        }
        if raw.is_empty() {
            return Err(Error::EmptyTripleFile {
                path: path.display().to_string(),
            });
        }
        Self::from_parts(entities, rel_vocab, raw)
    }

    /// Write the triples back out as TSV, one `head<TAB>rel<TAB>tail` per line.
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for t in &self.triples {
            out.push_str(self.entities.name(t.head));
            out.push('\t');
            out.push_str(self.relations.name(t.rel));
            out.push('\t');
            out.push_str(self.entities.name(t.tail));
            out.push('\n');
        }
        let mut f = fs::File::create(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        f.write_all(out.as_bytes()).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_triples(&self) -> usize {
        self.triples.len()
    }

    pub fn duplicates_dropped(&self) -> usize {
        self.duplicates_dropped
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.triple_set.contains(t)
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn out_edges(&self, e: usize) -> &[(usize, usize)] {
        &self.out_adj[e]
    }

    pub fn in_edges(&self, e: usize) -> &[(usize, usize)] {
        &self.in_adj[e]
    }

    fn check_entity(&self, e: usize) -> Result<()> {
        if e >= self.entities.len() {
            return Err(Error::EntityOutOfRange {
                id: e,
                count: self.entities.len(),
            });
        }
        Ok(())
    }

    /// Entities adjacent to `e` ignoring edge direction. Contains `e` itself
    /// only if a self-loop triple exists.
    pub fn undirected_neighbors(&self, e: usize) -> Result<BTreeSet<usize>> {
        self.check_entity(e)?;
        let mut out = BTreeSet::new();
        for &(_, tail) in &self.out_adj[e] {
            out.insert(tail);
        }
        for &(_, head) in &self.in_adj[e] {
            out.insert(head);
        }
        Ok(out)
    }

    /// Resolve a `(head, relation, tail)` name triple against the vocabularies.
    pub fn resolve(&self, head: &str, rel: &str, tail: &str) -> Result<Triple> {
        let h = self
            .entities
            .get(head)
            .ok_or_else(|| Error::UnknownEntity(head.to_string()))?;
        let r = self
            .relations
            .get(rel)
            .ok_or_else(|| Error::UnknownRelation(rel.to_string()))?;
        let t = self
            .entities
            .get(tail)
            .ok_or_else(|| Error::UnknownEntity(tail.to_string()))?;
        Ok(Triple::new(h, r, t))
    }
}

/// Load a bare triple list against existing vocabularies (validation/test
/// positives). Entities not present in `entities` are an error.
pub fn load_triple_list<P: AsRef<Path>>(
    path: P,
    entities: &Vocab,
    relations: &Vocab,
) -> Result<Vec<Triple>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = if line.contains('\t') {
            line.split('\t').map(str::trim).collect()
        } else {
            line.split_whitespace().collect()
        };
        if fields.len() != 3 {
            return Err(Error::MalformedLine {
                path: path.display().to_string(),
                line: idx + 1,
                fields: fields.len(),
            });
        }
        let head = entities
            .get(fields[0])
            .ok_or_else(|| Error::UnknownEntity(fields[0].to_string()))?;
        let rel = relations
            .get(fields[1])
            .ok_or_else(|| Error::UnknownRelation(fields[1].to_string()))?;
        let tail = entities
            .get(fields[2])
            .ok_or_else(|| Error::UnknownEntity(fields[2].to_string()))?;
        out.push(Triple::new(head, rel, tail));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_counts_entities_relations_triples() {
        let f = write_tmp("A\tr\tB\nB\tr\tC\n");
        let g = KnowledgeGraph::load(f.path()).unwrap();
        assert_eq!(g.num_entities(), 3);
        assert_eq!(g.num_relations(), 1);
        assert_eq!(g.num_triples(), 2);
    }

    #[test]
    fn load_deduplicates_and_counts() {
        let f = write_tmp("A\tr\tB\nA\tr\tB\n");
        let g = KnowledgeGraph::load(f.path()).unwrap();
        assert_eq!(g.num_triples(), 1);
        assert_eq!(g.duplicates_dropped(), 1);
    }

    #[test]
    fn load_rejects_malformed_line_with_number() {
        let f = write_tmp("A\tr\tB\nA\tB\n");
        let err = KnowledgeGraph::load(f.path()).unwrap_err();
        match err {
            Error::MalformedLine { line, fields, .. } => {
                assert_eq!(line, 2);
                assert_eq!(fields, 2);
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn load_rejects_empty_file() {
        let f = write_tmp("\n\n");
        assert!(matches!(
            KnowledgeGraph::load(f.path()),
            Err(Error::EmptyTripleFile { .. })
        ));
    }

    #[test]
    fn ids_follow_first_appearance() {
        let f = write_tmp("B\tr2\tA\nA\tr1\tC\n");
        let g = KnowledgeGraph::load(f.path()).unwrap();
        assert_eq!(g.entities().get("B"), Some(0));
        assert_eq!(g.entities().get("A"), Some(1));
        assert_eq!(g.entities().get("C"), Some(2));
        assert_eq!(g.relations().get("r2"), Some(0));
        assert_eq!(g.relations().get("r1"), Some(1));
    }

    #[test]
    fn neighbors_ignore_direction() {
        let f = write_tmp("A\tr\tB\n");
        let g = KnowledgeGraph::load(f.path()).unwrap();
        let a = g.entities().get("A").unwrap();
        let b = g.entities().get("B").unwrap();
        assert_eq!(g.undirected_neighbors(a).unwrap(), [b].into());
        assert_eq!(g.undirected_neighbors(b).unwrap(), [a].into());
    }

    #[test]
    fn neighbors_merge_in_and_out_edges() {
        let f = write_tmp("A\tr1\tB\nC\tr2\tA\n");
        let g = KnowledgeGraph::load(f.path()).unwrap();
        let a = g.entities().get("A").unwrap();
        let got = g.undirected_neighbors(a).unwrap();
        let want: BTreeSet<usize> = [
            g.entities().get("B").unwrap(),
            g.entities().get("C").unwrap(),
        ]
        .into();
        assert_eq!(got, want);
    }

    #[test]
    fn neighbors_empty_for_isolated_entity() {
        // C appears only in a self-contained edge; D is referenced nowhere.
        let f = write_tmp("A\tr\tB\nC\tr\tC\n");
        let g = KnowledgeGraph::load(f.path()).unwrap();
        let c = g.entities().get("C").unwrap();
        // Self-loop keeps the entity in its own neighbor set.
        assert_eq!(g.undirected_neighbors(c).unwrap(), [c].into());
    }

    #[test]
    fn neighbors_reject_out_of_range() {
        let f = write_tmp("A\tr\tB\n");
        let g = KnowledgeGraph::load(f.path()).unwrap();
        assert!(g.undirected_neighbors(99).is_err());
    }

    #[test]
    fn save_then_reload_round_trips() {
        let f = write_tmp("A\tr1\tB\nB\tr2\tC\nC\tr1\tA\n");
        let g = KnowledgeGraph::load(f.path()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        g.save(out.path()).unwrap();
        let g2 = KnowledgeGraph::load(out.path()).unwrap();
        assert_eq!(g.entities(), g2.entities());
        assert_eq!(g.relations(), g2.relations());
        assert_eq!(g.triples(), g2.triples());
    }

    #[test]
    fn fixed_relation_vocab_rejects_unknown() {
        let f = write_tmp("A\tr_new\tB\n");
        let vocab = Vocab::from_names(["r_known"]);
        let err = KnowledgeGraph::load_with_relations(f.path(), Some(&vocab)).unwrap_err();
        assert!(matches!(err, Error::UnknownRelation(name) if name == "r_new"));
    }

    #[test]
    fn adjacency_indices_are_inverses() {
        let f = write_tmp("A\tr\tB\nB\tr\tC\nA\tr2\tC\nC\tr\tA\n");
        let g = KnowledgeGraph::load(f.path()).unwrap();
        for t in g.triples() {
            assert!(g.out_edges(t.head).contains(&(t.rel, t.tail)));
            assert!(g.in_edges(t.tail).contains(&(t.rel, t.head)));
        }
        let total_out: usize = (0..g.num_entities()).map(|e| g.out_edges(e).len()).sum();
        let total_in: usize = (0..g.num_entities()).map(|e| g.in_edges(e).len()).sum();
        assert_eq!(total_out, g.num_triples());
        assert_eq!(total_in, g.num_triples());
    }
}
