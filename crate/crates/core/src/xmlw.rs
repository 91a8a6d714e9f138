//! Canonical XML writer: two-space indentation, attributes sorted by name,
//! `None` attributes omitted.

use quick_xml::escape::escape;

pub(crate) struct XmlWriter {
    out: String,
    depth: usize,
}

pub(crate) type Attrs<'a> = Vec<(&'a str, Option<String>)>;

impl XmlWriter {
    pub(crate) fn new() -> Self {
        Self {
            out: String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"),
            depth: 0,
        }
    }

    /// A writer without the XML declaration, for embeddable fragments.
    pub(crate) fn fragment() -> Self {
        Self {
            out: String::new(),
            depth: 0,
        }
    }

    fn start(&mut self, name: &str, mut attrs: Attrs<'_>) {
        attrs.sort_by(|a, b| a.0.cmp(b.0));
        self.out.push_str(&"  ".repeat(self.depth));
        self.out.push('<');
        self.out.push_str(name);
        for (k, v) in attrs {
            if let Some(v) = v {
                self.out.push(' ');
                self.out.push_str(k);
                self.out.push_str("=\"");
                self.out.push_str(&escape_attr(&v));
                self.out.push('"');
            }
        }
    }

    pub(crate) fn open(&mut self, name: &str, attrs: Attrs<'_>) {
        self.start(name, attrs);
        self.out.push_str(">\n");
        self.depth += 1;
    }

    pub(crate) fn empty(&mut self, name: &str, attrs: Attrs<'_>) {
        self.start(name, attrs);
        self.out.push_str("/>\n");
    }

    pub(crate) fn text(&mut self, name: &str, attrs: Attrs<'_>, text: &str) {
        self.start(name, attrs);
        self.out.push('>');
        self.out.push_str(&escape(text));
        self.out.push_str("</");
        self.out.push_str(name);
        self.out.push_str(">\n");
    }

    pub(crate) fn close(&mut self, name: &str) {
        self.depth -= 1;
        self.out.push_str(&"  ".repeat(self.depth));
        self.out.push_str("</");
        self.out.push_str(name);
        self.out.push_str(">\n");
    }

    /// Opens `name` if `has_children`, otherwise writes it as an empty element.
    /// Returns whether a matching `close` is needed.
    pub(crate) fn open_or_empty(&mut self, name: &str, attrs: Attrs<'_>, has_children: bool) -> bool {
        if has_children {
            self.open(name, attrs);
        } else {
            self.empty(name, attrs);
        }
        has_children
    }

    pub(crate) fn finish(self) -> String {
        self.out
    }
}

/// Attribute values additionally escape whitespace that XML parsers would
/// normalize away.
fn escape_attr(v: &str) -> String {
    escape(v)
        .replace('\n', "&#10;")
        .replace('\r', "&#13;")
        .replace('\t', "&#9;")
}

pub(crate) fn num(v: f64) -> String {
    format!("{v}")
}

pub(crate) fn s(v: &str) -> Option<String> {
    Some(v.to_string())
}
