use std::collections::HashMap;

use crate::corpus::{DocumentSet, InteractionRecord, PolarityDocuments};
use crate::error::{Error, Result};

/// Dense indices for user and item ids, assigned in order of first
/// appearance in the training records.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EntityIndex {
    users: Vec<String>,
    items: Vec<String>,
    user_pos: HashMap<String, usize>,
    item_pos: HashMap<String, usize>,
}

fn intern(ids: &mut Vec<String>, pos: &mut HashMap<String, usize>, id: &str) {
    if !pos.contains_key(id) {
        pos.insert(id.to_string(), ids.len());
        ids.push(id.to_string());
    }
}

impl EntityIndex {
    pub fn from_records(train: &[InteractionRecord]) -> Self {
        let mut idx = Self::default();
        for r in train {
            intern(&mut idx.users, &mut idx.user_pos, &r.user_id);
            intern(&mut idx.items, &mut idx.item_pos, &r.item_id);
        }
        idx
    }

    pub fn from_ids(users: Vec<String>, items: Vec<String>) -> Self {
        let mut idx = Self::default();
        for u in &users {
            intern(&mut idx.users, &mut idx.user_pos, u);
        }
        for i in &items {
            intern(&mut idx.items, &mut idx.item_pos, i);
        }
        idx
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn user(&self, id: &str) -> Result<usize> {
        self.user_pos.get(id).copied().ok_or_else(|| Error::Lookup { kind: "user", id: id.to_string() })
    }

    pub fn item(&self, id: &str) -> Result<usize> {
        self.item_pos.get(id).copied().ok_or_else(|| Error::Lookup { kind: "item", id: id.to_string() })
    }

    /// Converts records to index triples; fails on the first unknown id.
    pub fn examples(&self, records: &[InteractionRecord]) -> Result<Vec<Example>> {
        records
            .iter()
            .map(|r| Ok(Example { user: self.user(&r.user_id)?, item: self.item(&r.item_id)?, rating: r.rating }))
            .collect()
    }

    /// Documents reordered by user index.
    pub fn user_documents(&self, docs: &DocumentSet) -> Vec<PolarityDocuments> {
        self.users.iter().map(|u| docs.get(u).clone()).collect()
    }
}

/// One `(user, item, rating)` training triple in index form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Example {
    pub user: usize,
    pub item: usize,
    pub rating: f64,
}
