use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassTable {
    entries: Vec<(u32, String)>,
}

/// Alternative spellings accepted on input, mapped to the canonical name.
const ALIASES: [(&str, &str); 1] = [("ineffective", "insufficient")];

pub fn canonical_name(name: &str) -> &str {
    ALIASES
        .iter()
        .find(|(alias, _)| *alias == name)
        .map_or(name, |(_, canon)| canon)
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl ClassTable {
    pub fn new(entries: Vec<(u32, String)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Config("class table is empty".into()));
        }
        let mut out: Vec<(u32, String)> = Vec::with_capacity(entries.len());
        for (id, name) in entries {
            let name = canonical_name(&name).to_string();
            if !valid_name(&name) {
                return Err(Error::Config(format!("invalid class name `{name}`")));
            }
            if out.iter().any(|(i, n)| *i == id || *n == name) {
                return Err(Error::Config(format!("duplicate class {id} `{name}`")));
            }
            out.push((id, name));
        }
        out.sort_by_key(|(id, _)| *id);
        Ok(Self { entries: out })
    }

    /// The two defect classes of the solder-joint data.
    pub fn solder_joint() -> Self {
        Self::new(vec![(0, "insufficient".into()), (1, "shifting".into())]).expect("static table")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|(id, _)| *id)
    }

    pub fn entries(&self) -> &[(u32, String)] {
        &self.entries
    }

    pub fn contains(&self, id: u32) -> bool {
        self.index_of(id).is_some()
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.entries.binary_search_by_key(&id, |(i, _)| *i).ok()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.index_of(id).map(|i| self.entries[i].1.as_str())
    }

    pub fn id_of(&self, name: &str) -> Option<u32> {
        let name = canonical_name(name);
        self.entries.iter().find(|(_, n)| n == name).map(|(i, _)| *i)
    }
}

impl fmt::Display for ClassTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (id, name) in &self.entries {
            writeln!(f, "{id} {name}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alias_and_lookup() {
        let t = ClassTable::new(vec![(1, "shifting".into()), (0, "ineffective".into())]).unwrap();
        assert_eq!(t.name(0), Some("insufficient"));
        assert_eq!(t.id_of("ineffective"), Some(0));
        assert_eq!(t.index_of(1), Some(1));
        assert_eq!(t, ClassTable::solder_joint());
    }

    #[test]
    fn rejects_duplicates_and_bad_names() {
        assert!(ClassTable::new(vec![(0, "a".into()), (0, "b".into())]).is_err());
        assert!(ClassTable::new(vec![(0, "insufficient".into()), (1, "ineffective".into())]).is_err());
        assert!(ClassTable::new(vec![(0, "a b".into())]).is_err());
        assert!(ClassTable::new(vec![]).is_err());
    }
}
