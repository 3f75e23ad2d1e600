//! Name-keyed registries for interchangeable strategies (ψ² update rules,
//! SVD routes, score estimators).

use std::fmt;

/// Something that can be looked up by a stable, lowercase name.
pub trait Named {
    fn name(&self) -> &'static str;
}

pub struct Registry<T: ?Sized + Named> {
    entries: Vec<Box<T>>,
}

impl<T: ?Sized + Named> Registry<T> {
    pub fn empty() -> Self {
        Registry { entries: Vec::new() }
    }

    /// Adds a strategy, replacing any existing entry with the same name.
    pub fn register(&mut self, entry: Box<T>) -> &mut Self {
        match self.entries.iter().position(|e| e.name() == entry.name()) {
            Some(i) => self.entries[i] = entry,
            None => self.entries.push(entry),
        }
        self
    }

    pub fn get(&self, name: &str) -> Option<&T> {
        self.entries.iter().find(|e| e.name() == name).map(|b| &**b)
    }

    /// Removes and returns the entry with this name.
    pub fn take(&mut self, name: &str) -> Option<Box<T>> {
        let i = self.entries.iter().position(|e| e.name() == name)?;
        Some(self.entries.remove(i))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.name()).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }
}

impl<T: ?Sized + Named> fmt::Debug for Registry<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.names()).finish()
    }
}
