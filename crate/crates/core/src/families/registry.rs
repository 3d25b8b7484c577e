//! Lookup of families by name, including user-registered ones.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock, RwLock};

use super::{Chao, CountFamily, StandardFamily, Zelterman};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct FamilyRegistry {
    entries: BTreeMap<String, Arc<dyn CountFamily>>,
}

impl FamilyRegistry {
    pub fn empty() -> Self {
        FamilyRegistry {
            entries: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = FamilyRegistry::empty();
        for f in StandardFamily::all() {
            r.entries.insert(f.name().to_string(), Arc::new(f));
        }
        r.entries.insert("chao".into(), Arc::new(Chao::default()));
        r.entries.insert("zelterman".into(), Arc::new(Zelterman::default()));
        r
    }

    pub fn register(&mut self, family: Arc<dyn CountFamily>) -> Result<()> {
        let name = family.name().to_string();
        if self.entries.contains_key(&name) {
            return Err(Error::FamilyCollision(name));
        }
        validate(family.as_ref())?;
        self.entries.insert(name, family);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn CountFamily>> {
        self.entries
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownFamily(name.to_string()))
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }
}

fn validate(f: &dyn CountFamily) -> Result<()> {
    let p = f.eta_names().len();
    if p == 0 || p > crate::jet::MAX_PARAMS {
        return Err(Error::Family(format!(
            "family '{}' must have between 1 and {} parameters",
            f.name(),
            crate::jet::MAX_PARAMS
        )));
    }
    if f.links().len() != p {
        return Err(Error::Family(format!(
            "family '{}' declares {p} parameters but {} links",
            f.name(),
            f.links().len()
        )));
    }
    Ok(())
}

fn global() -> &'static RwLock<FamilyRegistry> {
    static REGISTRY: OnceLock<RwLock<FamilyRegistry>> = OnceLock::new();
    REGISTRY.get_or_init(|| RwLock::new(FamilyRegistry::with_builtins()))
}

/// Adds a family to the process-wide registry.
pub fn register_family(family: Arc<dyn CountFamily>) -> Result<()> {
    global().write().expect("family registry poisoned").register(family)
}

/// Looks up a built-in or registered family.
pub fn family(name: &str) -> Result<Arc<dyn CountFamily>> {
    global().read().expect("family registry poisoned").get(name)
}

pub fn family_names() -> Vec<String> {
    global().read().expect("family registry poisoned").names()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_are_present() {
        let r = FamilyRegistry::with_builtins();
        assert_eq!(r.names().len(), 20);
        assert!(r.get("zelterman").is_ok());
        assert!(matches!(r.get("nope"), Err(Error::UnknownFamily(_))));
    }

    #[test]
    fn collision_is_rejected() {
        let mut r = FamilyRegistry::with_builtins();
        let dup = Arc::new(StandardFamily::from_name("ztpoisson").unwrap());
        assert!(matches!(r.register(dup), Err(Error::FamilyCollision(n)) if n == "ztpoisson"));
    }
}
