//! Name-keyed factories for strategy trait objects.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub type Factory<T, P> = fn(&P) -> Result<Box<T>>;

/// Maps strategy names to constructors taking a shared parameter block `P`.
pub struct Registry<T: ?Sized, P> {
    kind: &'static str,
    entries: BTreeMap<&'static str, Factory<T, P>>,
}

impl<T: ?Sized, P> Registry<T, P> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, factory: Factory<T, P>) -> &mut Self {
        self.entries.insert(name, factory);
        self
    }

    pub fn with(mut self, name: &'static str, factory: Factory<T, P>) -> Self {
        self.register(name, factory);
        self
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn build(&self, name: &str, params: &P) -> Result<Box<T>> {
        match self.entries.get(name) {
            Some(f) => f(params),
            None => Err(Error::config(format!(
                "unknown {} '{name}' (known: {})",
                self.kind,
                self.names().collect::<Vec<_>>().join(", ")
            ))),
        }
    }
}
