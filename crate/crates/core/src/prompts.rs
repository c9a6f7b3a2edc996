//! Prompt templates. Built-in copies are compiled in; a directory with
//! files of the same names can override them.

use std::path::Path;

use crate::domain::TaskKind;

#[derive(Debug, Clone, PartialEq)]
pub struct Prompts {
    pub extract: String,
    pub transportation: String,
    pub accommodation: String,
    pub dining: String,
    pub attractions: String,
    pub verify: String,
}

impl Default for Prompts {
    fn default() -> Self {
        Prompts {
            extract: include_str!("../prompts/extract.txt").into(),
            transportation: include_str!("../prompts/transportation.txt").into(),
            accommodation: include_str!("../prompts/accommodation.txt").into(),
            dining: include_str!("../prompts/dining.txt").into(),
            attractions: include_str!("../prompts/attractions.txt").into(),
            verify: include_str!("../prompts/verify.txt").into(),
        }
    }
}

impl Prompts {
    /// Built-ins, with any `<name>.txt` present in `dir` taking precedence.
    pub fn from_dir(dir: impl AsRef<Path>) -> std::io::Result<Self> {
        let dir = dir.as_ref();
        let mut prompts = Prompts::default();
        let slots: [(&str, &mut String); 6] = [
            ("extract", &mut prompts.extract),
            ("transportation", &mut prompts.transportation),
            ("accommodation", &mut prompts.accommodation),
            ("dining", &mut prompts.dining),
            ("attractions", &mut prompts.attractions),
            ("verify", &mut prompts.verify),
        ];
        for (name, slot) in slots {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                *slot = std::fs::read_to_string(path)?;
            }
        }
        Ok(prompts)
    }

    pub fn for_task(&self, task: TaskKind) -> &str {
        match task {
            TaskKind::Transportation => &self.transportation,
            TaskKind::Accommodation => &self.accommodation,
            TaskKind::Dining => &self.dining,
            TaskKind::Attractions => &self.attractions,
        }
    }
}

/// Substitutes `{name}` placeholders. Unknown placeholders are left intact,
/// which keeps literal JSON braces in templates untouched.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in vars {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}
