//! Review checklists: one text file per group kind in a checklist
//! directory (`default.txt`, `power.txt`, `compute.txt`, `io.txt`).

use std::path::PathBuf;

const BUILTIN_DEFAULT: &str = include_str!("../../../../checklists/default.txt");

/// Checklist kind for a group name.
pub fn checklist_kind(group_name: &str) -> &'static str {
    let n = group_name.to_ascii_lowercase();
    let tokens: Vec<&str> = n.split(|c: char| !c.is_alphanumeric() && c != '/').collect();
    let has = |words: &[&str]| words.iter().any(|w| tokens.contains(w));
    if has(&["power", "regulator", "supply", "ldo", "buck", "boost"]) {
        "power"
    } else if has(&["compute", "mcu", "processor", "cpu", "fpga", "controller"]) {
        "compute"
    } else if has(&["i/o", "io", "interface", "connector", "usb", "can", "uart", "ethernet"]) {
        "io"
    } else {
        "default"
    }
}

#[derive(Debug, Clone, Default)]
pub struct Checklists {
    dir: Option<PathBuf>,
}

impl Checklists {
    pub fn new(dir: Option<PathBuf>) -> Self {
        Self { dir }
    }

    /// The checklist for `group_name`: `<kind>.txt`, else `default.txt`,
    /// else the built-in default.
    pub fn for_group(&self, group_name: &str) -> String {
        if let Some(dir) = &self.dir {
            for kind in [checklist_kind(group_name), "default"] {
                if let Ok(text) = std::fs::read_to_string(dir.join(format!("{kind}.txt"))) {
                    return text;
                }
            }
        }
        BUILTIN_DEFAULT.to_string()
    }
}
