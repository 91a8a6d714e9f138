//! Minimal s-expression reader with byte offsets.

use super::SchematicError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Sexp {
    /// Bare or quoted atom. `quoted` distinguishes `"1"` from `1` where it matters.
    Atom {
        text: String,
        quoted: bool,
        offset: usize,
    },
    List { items: Vec<Sexp>, offset: usize },
}

impl Sexp {
    pub(crate) fn offset(&self) -> usize {
        match self {
            Sexp::Atom { offset, .. } | Sexp::List { offset, .. } => *offset,
        }
    }

    pub(crate) fn as_atom(&self) -> Option<&str> {
        match self {
            Sexp::Atom { text, .. } => Some(text),
            Sexp::List { .. } => None,
        }
    }

    /// The head symbol of a list, e.g. `symbol` for `(symbol ...)`.
    pub(crate) fn head(&self) -> Option<&str> {
        match self {
            Sexp::List { items, .. } => items.first().and_then(|s| match s {
                Sexp::Atom { text, quoted: false, .. } => Some(text.as_str()),
                _ => None,
            }),
            Sexp::Atom { .. } => None,
        }
    }

    /// Items after the head.
    pub(crate) fn args(&self) -> &[Sexp] {
        match self {
            Sexp::List { items, .. } if !items.is_empty() => &items[1..],
            _ => &[],
        }
    }

    /// First child list with the given head.
    pub(crate) fn child(&self, head: &str) -> Option<&Sexp> {
        self.args().iter().find(|c| c.head() == Some(head))
    }

    pub(crate) fn children<'a>(&'a self, head: &'a str) -> impl Iterator<Item = &'a Sexp> + 'a {
        self.args().iter().filter(move |c| c.head() == Some(head))
    }
}

pub(crate) fn parse(text: &str) -> Result<Sexp, SchematicError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
    };
    p.skip_ws();
    let root = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(SchematicError::malformed(
            Some(p.pos),
            "trailing content after top-level expression",
        ));
    }
    Ok(root)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while let Some(&c) = self.src.get(self.pos) {
            if c.is_ascii_whitespace() {
                self.pos += 1;
            } else if c == b';' {
                while self.src.get(self.pos).is_some_and(|c| *c != b'\n') {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn expr(&mut self) -> Result<Sexp, SchematicError> {
        let start = self.pos;
        match self.src.get(self.pos) {
            None => Err(SchematicError::malformed(Some(start), "unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let mut items = Vec::new();
                loop {
                    self.skip_ws();
                    match self.src.get(self.pos) {
                        None => {
                            return Err(SchematicError::malformed(
                                Some(start),
                                "unclosed parenthesis",
                            ))
                        }
                        Some(b')') => {
                            self.pos += 1;
                            return Ok(Sexp::List {
                                items,
                                offset: start,
                            });
                        }
                        Some(_) => items.push(self.expr()?),
                    }
                }
            }
            Some(b')') => Err(SchematicError::malformed(Some(start), "unexpected `)`")),
            Some(b'"') => self.quoted(),
            Some(_) => {
                while let Some(&c) = self.src.get(self.pos) {
                    if c.is_ascii_whitespace() || c == b'(' || c == b')' || c == b'"' {
                        break;
                    }
                    self.pos += 1;
                }
                let text = std::str::from_utf8(&self.src[start..self.pos])
                    .map_err(|_| SchematicError::malformed(Some(start), "invalid UTF-8 in atom"))?;
                Ok(Sexp::Atom {
                    text: text.to_string(),
                    quoted: false,
                    offset: start,
                })
            }
        }
    }

    fn quoted(&mut self) -> Result<Sexp, SchematicError> {
        let start = self.pos;
        self.pos += 1;
        let mut buf = Vec::new();
        loop {
            match self.src.get(self.pos) {
                None => return Err(SchematicError::malformed(Some(start), "unterminated string")),
                Some(b'"') => {
                    self.pos += 1;
                    break;
                }
                Some(b'\\') => {
                    let esc = self.src.get(self.pos + 1).copied().ok_or_else(|| {
                        SchematicError::malformed(Some(self.pos), "dangling escape")
                    })?;
                    buf.push(match esc {
                        b'n' => b'\n',
                        b't' => b'\t',
                        other => other,
                    });
                    self.pos += 2;
                }
                Some(&c) => {
                    buf.push(c);
                    self.pos += 1;
                }
            }
        }
        let text = String::from_utf8(buf)
            .map_err(|_| SchematicError::malformed(Some(start), "invalid UTF-8 in string"))?;
        Ok(Sexp::Atom {
            text,
            quoted: true,
            offset: start,
        })
    }
}
