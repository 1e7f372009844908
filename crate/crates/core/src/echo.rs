use std::fmt;

/// Ordered `key = value` record of the configuration that produced an
/// artifact. Written as `# key = value` comment lines ahead of CSV bodies.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfigEcho {
    entries: Vec<(String, String)>,
}

impl ConfigEcho {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl fmt::Display) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn with(mut self, key: impl Into<String>, value: impl fmt::Display) -> Self {
        self.push(key, value);
        self
    }

    pub fn extend(&mut self, other: &ConfigEcho) {
        self.entries.extend(other.entries.iter().cloned());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Comment block, one `# key = value` line per entry.
    pub fn comment_block(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str("# ");
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v.replace('\n', " "));
            out.push('\n');
        }
        out
    }
}
