use std::fmt::Write;

/// Assembles a control script from preamble definitions and extension snippets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ControlScript {
    preambles: Vec<String>,
    snippets: Vec<(u32, String)>,
}

impl ControlScript {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds helper definitions placed before all snippets.
    pub fn add_preamble(&mut self, text: &str) {
        self.preambles.push(text.trim_end().to_string());
    }

    /// Adds a snippet body, wrapped as the extension function for `id`.
    pub fn add_snippet(&mut self, id: u32, body: &str) {
        self.snippets.push((id, body.trim_end().to_string()));
    }

    pub fn snippet_ids(&self) -> Vec<u32> {
        self.snippets.iter().map(|(id, _)| *id).collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for p in &self.preambles {
            out.push_str(p);
            out.push('\n');
        }
        for (id, body) in &self.snippets {
            let _ = writeln!(out, "def ext_{id}():");
            for line in body.lines() {
                let _ = writeln!(out, "  {line}");
            }
            out.push_str("end\n");
        }
        out
    }
}
