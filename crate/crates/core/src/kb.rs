//! Immutable knowledge-base store.
//!
//! Triples are keyed by `(subject, relation)`; rows sharing a key are merged
//! into one triple whose objects keep first-occurrence order. Two retrieval
//! primitives sit on top of the indexes: [`KnowledgeBase::candidate_relations`]
//! lists the outgoing relations of an entity and
//! [`KnowledgeBase::fetch_triples`] returns the triple for a chosen relation,
//! down-sampled to a cap when it is item-based.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::SurfaceMatcher;

/// Default cap on the number of objects returned for an item-based triple.
pub const DEFAULT_OBJECT_CAP: usize = 50;

#[derive(Debug, Error, PartialEq)]
pub enum KbError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid JSON triple file: {0}")]
    Json(String),
    #[error("empty knowledge base")]
    Empty,
    #[error("unknown entity-relation ({entity}, {relation})")]
    UnknownKey { entity: String, relation: String },
    #[error("object cap must be positive")]
    ZeroCap,
    #[error("invalid triple: {0}")]
    InvalidTriple(String),
}

/// Canonical entity surface form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EntityId(String);

impl EntityId {
    pub fn new(surface: impl Into<String>) -> Result<Self, KbError> {
        let surface = surface.into();
        if surface.trim().is_empty() {
            return Err(KbError::InvalidTriple("empty entity".into()));
        }
        Ok(Self(surface))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for EntityId {
    type Error = KbError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<EntityId> for String {
    fn from(value: EntityId) -> Self {
        value.0
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RelationId(String);

impl RelationId {
    pub fn new(name: impl Into<String>) -> Result<Self, KbError> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(KbError::InvalidTriple("empty relation".into()));
        }
        Ok(Self(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for RelationId {
    type Error = KbError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<RelationId> for String {
    fn from(value: RelationId) -> Self {
        value.0
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnowledgeKind {
    /// One object: a single fact about the subject.
    Factual,
    /// Several objects: the subject links to a set of candidate items.
    ItemBased,
}

/// `subject -- relation -- <objects>`.
///
/// Serialized as the JSON array `[subject, relation, [objects...]]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawTriple", into = "RawTriple")]
pub struct KnowledgeTriple {
    subject: EntityId,
    relation: RelationId,
    objects: Vec<EntityId>,
}

#[derive(Serialize, Deserialize)]
struct RawTriple(String, String, Vec<String>);

impl TryFrom<RawTriple> for KnowledgeTriple {
    type Error = KbError;
    fn try_from(raw: RawTriple) -> Result<Self, Self::Error> {
        KnowledgeTriple::new(raw.0, raw.1, raw.2)
    }
}

impl From<KnowledgeTriple> for RawTriple {
    fn from(t: KnowledgeTriple) -> Self {
        RawTriple(
            t.subject.0,
            t.relation.0,
            t.objects.into_iter().map(|o| o.0).collect(),
        )
    }
}

impl KnowledgeTriple {
    /// Builds a triple; duplicate objects are dropped keeping the first.
    pub fn new<S, R, I, O>(subject: S, relation: R, objects: I) -> Result<Self, KbError>
    where
        S: Into<String>,
        R: Into<String>,
        I: IntoIterator<Item = O>,
        O: Into<String>,
    {
        let subject = EntityId::new(subject)?;
        let relation = RelationId::new(relation)?;
        let mut seen = HashSet::new();
        let mut objs = Vec::new();
        for o in objects {
            let o = EntityId::new(o)?;
            if seen.insert(o.clone()) {
                objs.push(o);
            }
        }
        if objs.is_empty() {
            return Err(KbError::InvalidTriple(format!(
                "({subject}, {relation}) has no objects"
            )));
        }
        Ok(Self {
            subject,
            relation,
            objects: objs,
        })
    }

    pub fn subject(&self) -> &EntityId {
        &self.subject
    }

    pub fn relation(&self) -> &RelationId {
        &self.relation
    }

    pub fn objects(&self) -> &[EntityId] {
        &self.objects
    }

    pub fn kind(&self) -> KnowledgeKind {
        if self.objects.len() == 1 {
            KnowledgeKind::Factual
        } else {
            KnowledgeKind::ItemBased
        }
    }

    /// True when every object of `self` is an object of `other` under the
    /// same key; a capped sample is a sub-triple of its source.
    pub fn is_subtriple_of(&self, other: &KnowledgeTriple) -> bool {
        self.subject == other.subject
            && self.relation == other.relation
            && self.objects.iter().all(|o| other.objects.contains(o))
    }
}

#[derive(Debug, Clone, Deserialize)]
struct JsonRow {
    s: String,
    r: String,
    o: String,
}

#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    triples: Vec<KnowledgeTriple>,
    by_subject: HashMap<EntityId, Vec<usize>>,
    by_subject_relation: HashMap<(EntityId, RelationId), usize>,
    lexicon: Vec<EntityId>,
    matcher: SurfaceMatcher,
}

impl KnowledgeBase {
    /// Builds a KB from `(subject, relation, object)` rows. The row number
    /// reported on error is the 1-based position in the iterator.
    pub fn from_rows<I, S>(rows: I) -> Result<Self, KbError>
    where
        I: IntoIterator<Item = (usize, S, S, S)>,
        S: Into<String>,
    {
        let mut triples: Vec<(EntityId, RelationId, Vec<EntityId>)> = Vec::new();
        let mut by_subject_relation: HashMap<(EntityId, RelationId), usize> = HashMap::new();
        for (line, s, r, o) in rows {
            let err = |e: KbError| KbError::Parse {
                line,
                message: e.to_string(),
            };
            let s = EntityId::new(s).map_err(err)?;
            let r = RelationId::new(r).map_err(err)?;
            let o = EntityId::new(o).map_err(err)?;
            match by_subject_relation.get(&(s.clone(), r.clone())) {
                Some(&idx) => {
                    let objs = &mut triples[idx].2;
                    if !objs.contains(&o) {
                        objs.push(o);
                    }
                }
                None => {
                    by_subject_relation.insert((s.clone(), r.clone()), triples.len());
                    triples.push((s, r, vec![o]));
                }
            }
        }
        if triples.is_empty() {
            return Err(KbError::Empty);
        }

        let mut by_subject: HashMap<EntityId, Vec<usize>> = HashMap::new();
        let mut lexicon_set = BTreeSet::new();
        let triples: Vec<KnowledgeTriple> = triples
            .into_iter()
            .enumerate()
            .map(|(idx, (subject, relation, objects))| {
                by_subject.entry(subject.clone()).or_default().push(idx);
                lexicon_set.insert(subject.clone());
                lexicon_set.extend(objects.iter().cloned());
                KnowledgeTriple {
                    subject,
                    relation,
                    objects,
                }
            })
            .collect();
        let lexicon: Vec<EntityId> = lexicon_set.into_iter().collect();
        let matcher = SurfaceMatcher::new(lexicon.iter().map(EntityId::as_str));

        Ok(Self {
            triples,
            by_subject,
            by_subject_relation,
            lexicon,
            matcher,
        })
    }

    /// Parses a triple file: tab-separated `subject\trelation\tobject` lines
    /// (blank and `#` lines skipped) or a JSON array of `{"s","r","o"}`.
    pub fn load(source: &str) -> Result<Self, KbError> {
        if source.trim_start().starts_with('[') {
            let rows: Vec<JsonRow> =
                serde_json::from_str(source).map_err(|e| KbError::Json(e.to_string()))?;
            return Self::from_rows(
                rows.into_iter()
                    .enumerate()
                    .map(|(i, row)| (i + 1, row.s, row.r, row.o)),
            );
        }

        let mut rows = Vec::new();
        for (i, raw) in source.lines().enumerate() {
            let line = i + 1;
            let raw = raw.strip_suffix('\r').unwrap_or(raw);
            if raw.trim().is_empty() || raw.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = raw.split('\t').collect();
            if fields.len() != 3 {
                return Err(KbError::Parse {
                    line,
                    message: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            if let Some(pos) = fields.iter().position(|f| f.trim().is_empty()) {
                return Err(KbError::Parse {
                    line,
                    message: format!("field {} is empty", pos + 1),
                });
            }
            rows.push((line, fields[0], fields[1], fields[2]));
        }
        Self::from_rows(rows)
    }

    pub fn triples(&self) -> &[KnowledgeTriple] {
        &self.triples
    }

    pub fn lexicon(&self) -> &[EntityId] {
        &self.lexicon
    }

    pub fn contains_entity(&self, entity: &EntityId) -> bool {
        self.lexicon.binary_search(entity).is_ok()
    }

    pub fn lookup(&self, entity: &EntityId, relation: &RelationId) -> Option<&KnowledgeTriple> {
        self.by_subject_relation
            .get(&(entity.clone(), relation.clone()))
            .map(|&i| &self.triples[i])
    }

    /// Lexicon entities mentioned in `utterance`, in order of first
    /// occurrence. Overlaps resolve to the longest span, then the leftmost.
    pub fn extract_entities(&self, utterance: &str) -> Vec<EntityId> {
        let mut seen = HashSet::new();
        self.matcher
            .find(utterance)
            .into_iter()
            .filter(|span| seen.insert(span.id))
            .map(|span| self.lexicon[span.id].clone())
            .collect()
    }

    /// Outgoing relations of `entity` in source-file order.
    pub fn candidate_relations(&self, entity: &EntityId) -> Vec<RelationId> {
        self.by_subject
            .get(entity)
            .map(|idxs| {
                idxs.iter()
                    .map(|&i| self.triples[i].relation.clone())
                    .collect()
            })
            .unwrap_or_default()
    }

    /// The triple stored under `(entity, relation)`. Item-based triples with
    /// more than `cap` objects are reduced to a seeded uniform sample of
    /// `cap` objects kept in their original order.
    pub fn fetch_triples(
        &self,
        entity: &EntityId,
        relation: &RelationId,
        cap: usize,
        seed: u64,
    ) -> Result<KnowledgeTriple, KbError> {
        if cap == 0 {
            return Err(KbError::ZeroCap);
        }
        let triple = self
            .lookup(entity, relation)
            .ok_or_else(|| KbError::UnknownKey {
                entity: entity.to_string(),
                relation: relation.to_string(),
            })?;
        if triple.objects.len() <= cap {
            return Ok(triple.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = index::sample(&mut rng, triple.objects.len(), cap).into_vec();
        picked.sort_unstable();
        Ok(KnowledgeTriple {
            subject: triple.subject.clone(),
            relation: triple.relation.clone(),
            objects: picked
                .into_iter()
                .map(|i| triple.objects[i].clone())
                .collect(),
        })
    }
}
