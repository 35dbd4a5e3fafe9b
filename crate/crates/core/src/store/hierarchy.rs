use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::StoreError;
use crate::noise::check_field;

/// Label given to entities first seen in the event stream.
pub const DEFAULT_LEAF_LABEL: &str = "entity";

#[derive(Debug, Clone, PartialEq, Eq)]
struct EntityNode {
    label: String,
    parent: Option<String>,
    children: BTreeSet<String>,
}

/// Forest of entities, e.g. account ← campaign group ← campaign ← creative.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntityHierarchy {
    nodes: BTreeMap<String, EntityNode>,
}

/// JSON shape of one hierarchy node: `{id, label, children: [...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestNode {
    pub id: String,
    #[serde(default)]
    pub label: String,
    #[serde(default)]
    pub children: Vec<ForestNode>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ForestDoc {
    Many(Vec<ForestNode>),
    One(ForestNode),
}

impl EntityHierarchy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn add_root(&mut self, id: &str, label: &str) -> Result<(), StoreError> {
        self.insert(id, label, None)
    }

    pub fn add_child(&mut self, parent: &str, id: &str, label: &str) -> Result<(), StoreError> {
        if !self.nodes.contains_key(parent) {
            return Err(StoreError::UnknownEntity(parent.to_string()));
        }
        self.insert(id, label, Some(parent))?;
        self.nodes
            .get_mut(parent)
            .expect("parent checked above")
            .children
            .insert(id.to_string());
        Ok(())
    }

    fn insert(&mut self, id: &str, label: &str, parent: Option<&str>) -> Result<(), StoreError> {
        check_field("entity", id)?;
        if id.is_empty() {
            return Err(StoreError::EmptyEntityId);
        }
        if self.nodes.contains_key(id) {
            return Err(StoreError::DuplicateEntity(id.to_string()));
        }
        self.nodes.insert(
            id.to_string(),
            EntityNode {
                label: label.to_string(),
                parent: parent.map(str::to_string),
                children: BTreeSet::new(),
            },
        );
        Ok(())
    }

    /// Direct children; empty for leaves.
    pub fn children_of(&self, id: &str) -> Result<&BTreeSet<String>, StoreError> {
        self.node(id).map(|n| &n.children)
    }

    pub fn parent_of(&self, id: &str) -> Result<Option<&str>, StoreError> {
        self.node(id).map(|n| n.parent.as_deref())
    }

    pub fn label_of(&self, id: &str) -> Result<&str, StoreError> {
        self.node(id).map(|n| n.label.as_str())
    }

    pub fn is_leaf(&self, id: &str) -> Result<bool, StoreError> {
        self.node(id).map(|n| n.children.is_empty())
    }

    fn node(&self, id: &str) -> Result<&EntityNode, StoreError> {
        self.nodes
            .get(id)
            .ok_or_else(|| StoreError::UnknownEntity(id.to_string()))
    }

    pub fn roots(&self) -> impl Iterator<Item = &str> {
        self.nodes
            .iter()
            .filter(|(_, n)| n.parent.is_none())
            .map(|(id, _)| id.as_str())
    }

    /// Leaves of the subtree rooted at `id` (the entity itself when it is a leaf).
    pub fn leaf_descendants<'a>(&'a self, id: &str) -> Result<Vec<&'a str>, StoreError> {
        let (root, _) = self
            .nodes
            .get_key_value(id)
            .ok_or_else(|| StoreError::UnknownEntity(id.to_string()))?;
        let mut leaves = Vec::new();
        let mut stack = vec![root.as_str()];
        while let Some(current) = stack.pop() {
            let node = &self.nodes[current];
            if node.children.is_empty() {
                leaves.push(current);
            } else {
                stack.extend(node.children.iter().rev().map(String::as_str));
            }
        }
        Ok(leaves)
    }

    /// Parents before children, roots and siblings in id order.
    pub fn topological(&self) -> Vec<(&str, &str, Option<&str>)> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack: Vec<&str> = self.roots().collect();
        stack.reverse();
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            out.push((id, node.label.as_str(), node.parent.as_deref()));
            stack.extend(node.children.iter().rev().map(String::as_str));
        }
        out
    }

    pub fn from_forest(forest: &[ForestNode]) -> Result<Self, StoreError> {
        let mut h = Self::new();
        for root in forest {
            h.add_root(&root.id, &root.label)?;
            h.add_subtree(root)?;
        }
        Ok(h)
    }

    fn add_subtree(&mut self, node: &ForestNode) -> Result<(), StoreError> {
        let mut stack = vec![node];
        while let Some(parent) = stack.pop() {
            for child in &parent.children {
                self.add_child(&parent.id, &child.id, &child.label)?;
                stack.push(child);
            }
        }
        Ok(())
    }

    /// Reads a JSON forest: either one node or an array of root nodes.
    pub fn from_json_reader(reader: impl Read) -> Result<Self, StoreError> {
        let doc: ForestDoc =
            serde_json::from_reader(reader).map_err(|e| StoreError::HierarchyFormat(e.to_string()))?;
        match doc {
            ForestDoc::Many(roots) => Self::from_forest(&roots),
            ForestDoc::One(root) => Self::from_forest(std::slice::from_ref(&root)),
        }
    }

    pub fn to_forest(&self) -> Vec<ForestNode> {
        fn build(h: &EntityHierarchy, id: &str) -> ForestNode {
            let node = &h.nodes[id];
            ForestNode {
                id: id.to_string(),
                label: node.label.clone(),
                children: node.children.iter().map(|c| build(h, c)).collect(),
            }
        }
        self.roots().map(|r| build(self, r)).collect()
    }
}
