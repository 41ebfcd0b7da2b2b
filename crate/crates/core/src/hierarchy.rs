use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::CoreError;

/// Opaque class identifier as used on the classifier wire protocol.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelId(pub String);

impl LabelId {
    pub fn new(id: impl Into<String>) -> Self {
        LabelId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for LabelId {
    fn from(s: &str) -> Self {
        LabelId(s.to_string())
    }
}

impl From<String> for LabelId {
    fn from(s: String) -> Self {
        LabelId(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelNode {
    pub name: String,
    pub parent: Option<LabelId>,
}

/// A forest of labels where each non-root label has exactly one
/// (immediate) hypernym parent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelHierarchy {
    nodes: BTreeMap<LabelId, LabelNode>,
    roots: BTreeSet<LabelId>,
}

impl LabelHierarchy {
    /// Builds and validates a hierarchy from `(id, name, parent)` triples.
    pub fn from_nodes<I>(entries: I) -> Result<Self, CoreError>
    where
        I: IntoIterator<Item = (LabelId, LabelNode)>,
    {
        let mut nodes = BTreeMap::new();
        let mut names = BTreeSet::new();
        for (id, node) in entries {
            let key = node.name.trim().to_lowercase();
            if !names.insert(key) {
                return Err(CoreError::DuplicateName(node.name.clone()));
            }
            if nodes.insert(id.clone(), node).is_some() {
                return Err(CoreError::HierarchyFormat {
                    line: 0,
                    reason: format!("label id `{id}` defined twice"),
                });
            }
        }
        let mut roots = BTreeSet::new();
        for (id, node) in &nodes {
            match &node.parent {
                None => {
                    roots.insert(id.clone());
                }
                Some(p) if !nodes.contains_key(p) => {
                    return Err(CoreError::UnknownLabel(p.0.clone()));
                }
                Some(_) => {}
            }
        }
        // every chain of parent links must reach a root within |nodes| steps
        for id in nodes.keys() {
            let mut cur = id;
            let mut steps = 0usize;
            while let Some(p) = nodes[cur].parent.as_ref() {
                steps += 1;
                if steps > nodes.len() {
                    return Err(CoreError::HierarchyCycle(id.0.clone()));
                }
                cur = p;
            }
        }
        Ok(LabelHierarchy { nodes, roots })
    }

    /// Parses the tab-separated hierarchy file format:
    /// `label-id<TAB>name<TAB>parent-id-or-"-"`, one record per line.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self, CoreError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(CoreError::HierarchyFormat {
                    line: i + 1,
                    reason: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            let (id, name, parent) = (fields[0].trim(), fields[1].trim(), fields[2].trim());
            if id.is_empty() || name.is_empty() {
                return Err(CoreError::HierarchyFormat {
                    line: i + 1,
                    reason: "empty label id or name".into(),
                });
            }
            let parent = if parent == "-" || parent.is_empty() {
                None
            } else {
                Some(LabelId::new(parent))
            };
            entries.push((
                LabelId::new(id),
                LabelNode {
                    name: name.to_string(),
                    parent,
                },
            ));
        }
        Self::from_nodes(entries)
    }

    /// Inverse of [`LabelHierarchy::parse`]; lines are ordered by label id.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (id, node) in &self.nodes {
            let parent = node.parent.as_ref().map(|p| p.as_str()).unwrap_or("-");
            out.push_str(&format!("{}\t{}\t{}\n", id, node.name, parent));
        }
        out
    }

    pub fn get(&self, id: &LabelId) -> Result<&LabelNode, CoreError> {
        self.nodes
            .get(id)
            .ok_or_else(|| CoreError::UnknownLabel(id.0.clone()))
    }

    pub fn contains(&self, id: &LabelId) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn name(&self, id: &LabelId) -> Result<&str, CoreError> {
        Ok(&self.get(id)?.name)
    }

    pub fn parent(&self, id: &LabelId) -> Result<&LabelId, CoreError> {
        self.get(id)?
            .parent
            .as_ref()
            .ok_or_else(|| CoreError::RootLabel(id.0.clone()))
    }

    pub fn roots(&self) -> &BTreeSet<LabelId> {
        &self.roots
    }

    pub fn ids(&self) -> impl Iterator<Item = &LabelId> {
        self.nodes.keys()
    }

    /// Labels that have a parent, i.e. the ones a classifier can predict.
    pub fn leaves(&self) -> impl Iterator<Item = &LabelId> {
        self.nodes
            .iter()
            .filter(|(_, n)| n.parent.is_some())
            .map(|(id, _)| id)
    }

    /// Looks a label up by id first, then by case-insensitive name.
    pub fn resolve(&self, key: &str) -> Result<LabelId, CoreError> {
        let id = LabelId::new(key);
        if self.nodes.contains_key(&id) {
            return Ok(id);
        }
        let wanted = key.trim().to_lowercase();
        self.nodes
            .iter()
            .find(|(_, n)| n.name.trim().to_lowercase() == wanted)
            .map(|(id, _)| id.clone())
            .ok_or_else(|| CoreError::UnknownLabel(key.to_string()))
    }

    /// True iff both labels share the same immediate parent.
    pub fn same_parent(&self, a: &LabelId, b: &LabelId) -> Result<bool, CoreError> {
        Ok(self.parent(a)? == self.parent(b)?)
    }
}
