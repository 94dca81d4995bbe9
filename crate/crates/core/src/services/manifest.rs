use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PluginKind {
    Command,
    Extension,
    Dashboard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PluginEntry {
    pub name: String,
    pub kind: PluginKind,
    #[serde(default)]
    pub parameters: BTreeMap<String, toml::Value>,
}

/// Plugins to load, in file order.
///
/// ```toml
/// [[plugin]]
/// name = "GripperGrip"
/// kind = "extension"
/// [plugin.parameters]
/// timeout_ticks = 500
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PluginManifest {
    #[serde(default, rename = "plugin")]
    pub entries: Vec<PluginEntry>,
}

/// First id handed to extension plugins.
pub const FIRST_EXTENSION_ID: u32 = 256;

impl PluginManifest {
    pub fn from_toml_str(text: &str) -> Result<PluginManifest, ServiceError> {
        let m: PluginManifest = toml::from_str(text).map_err(|e| ServiceError::Manifest(e.message().to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PluginManifest, ServiceError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::Manifest(format!("{}: {e}", path.display())))?;
        PluginManifest::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.name.as_str()) {
                return Err(ServiceError::Manifest(format!("duplicate plugin name '{}'", e.name)));
            }
        }
        Ok(())
    }

    /// Extension ids by plugin name: 256, 257, … in manifest order.
    pub fn extension_ids(&self) -> Vec<(String, u32)> {
        self.entries
            .iter()
            .filter(|e| e.kind == PluginKind::Extension)
            .zip(FIRST_EXTENSION_ID..)
            .map(|(e, id)| (e.name.clone(), id))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_assigns_ids_in_order() {
        let m = PluginManifest::from_toml_str(
            r#"
[[plugin]]
name = "MoveDownUntilForce"
kind = "command"
[plugin.parameters]
threshold_n = 25.0

[[plugin]]
name = "GripperGrip"
kind = "extension"

[[plugin]]
name = "DashboardPlay"
kind = "dashboard"
"#,
        )
        .unwrap();
        assert_eq!(m.entries.len(), 3);
        assert_eq!(m.entries[0].parameters["threshold_n"].as_float(), Some(25.0));
        assert_eq!(m.extension_ids(), vec![("GripperGrip".to_string(), 256)]);
        assert!(PluginManifest::from_toml_str("").unwrap().entries.is_empty());
    }

    #[test]
    fn rejects_duplicates_and_unknown_kinds() {
        let dup = "[[plugin]]\nname = \"A\"\nkind = \"command\"\n[[plugin]]\nname = \"A\"\nkind = \"command\"\n";
        assert!(PluginManifest::from_toml_str(dup).is_err());
        assert!(PluginManifest::from_toml_str("[[plugin]]\nname = \"A\"\nkind = \"other\"\n").is_err());
    }
}
