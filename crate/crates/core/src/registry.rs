//! Named strategy tables: backbones and initialization strategies are
//! looked up by the string used in configs and on the command line.

use std::collections::BTreeMap;

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct Registry<T> {
    what: &'static str,
    entries: BTreeMap<&'static str, T>,
}

impl<T> Registry<T> {
    pub fn new(what: &'static str) -> Self {
        Self {
            what,
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, entry: T) -> &mut Self {
        self.entries.insert(name, entry);
        self
    }

    pub fn with(mut self, name: &'static str, entry: T) -> Self {
        self.register(name, entry);
        self
    }

    pub fn get(&self, name: &str) -> Result<&T> {
        self.entries.get(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown {} {name:?}; known: {}",
                self.what,
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }
}
