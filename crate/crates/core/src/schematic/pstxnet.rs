//! Reader and writer for the `pstxnet.dat` net list subset.
//!
//! ```text
//! # comment
//! NET_NAME
//! 'VCC_3V3'
//! NODE_NAME U1 4
//! NODE_NAME C1 1
//!
//! NET_NAME
//! ...
//! ```
//!
//! A `FILE_TYPE` header line is accepted and ignored, as are indented
//! continuation lines (the attribute lines real exports place under each
//! net or node).

use std::collections::HashSet;

use super::{canonicalize_nets, Net, NetNode, SchematicError};

enum State {
    /// Between blocks.
    Idle,
    /// Saw `NET_NAME`, expecting the quoted name.
    NeedName { line: usize },
    /// Inside a block, collecting nodes.
    Nodes { name: String, nodes: Vec<NetNode>, line: usize },
}

pub fn parse_pstxnet(text: &str) -> Result<Vec<Net>, SchematicError> {
    let mut nets = Vec::new();
    let mut seen = HashSet::new();
    let mut state = State::Idle;

    let mut close = |state: State, nets: &mut Vec<Net>| -> Result<(), SchematicError> {
        match state {
            State::Idle => Ok(()),
            State::NeedName { line } => Err(SchematicError::MalformedNetBlock {
                line,
                message: "NET_NAME not followed by a quoted net name".into(),
            }),
            State::Nodes { name, nodes, line } => {
                if nodes.is_empty() {
                    return Err(SchematicError::MalformedNetBlock {
                        line,
                        message: format!("net '{name}' has no NODE_NAME lines"),
                    });
                }
                if !seen.insert(name.clone()) {
                    return Err(SchematicError::DuplicateNetName(name));
                }
                nets.push(Net::new(name, nodes));
                Ok(())
            }
        }
    };

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim_end();
        let trimmed = line.trim_start();
        if trimmed.starts_with('#') {
            continue;
        }
        if trimmed.is_empty() {
            if let State::NeedName { .. } = state {
                // a blank line cannot separate NET_NAME from its name
                return Err(SchematicError::MalformedNetBlock {
                    line: lineno,
                    message: "NET_NAME not followed by a quoted net name".into(),
                });
            }
            close(std::mem::replace(&mut state, State::Idle), &mut nets)?;
            continue;
        }
        let indented = line.len() != trimmed.len();

        state = match state {
            State::NeedName { line: start } => {
                let name = quoted_name(trimmed).ok_or_else(|| SchematicError::MalformedNetBlock {
                    line: lineno,
                    message: "expected a single-quoted net name".into(),
                })?;
                State::Nodes {
                    name,
                    nodes: Vec::new(),
                    line: start,
                }
            }
            s if indented => s,
            s if trimmed.starts_with("FILE_TYPE") => {
                if !matches!(s, State::Idle) || !nets.is_empty() {
                    return Err(SchematicError::MalformedNetBlock {
                        line: lineno,
                        message: "FILE_TYPE header must precede all blocks".into(),
                    });
                }
                s
            }
            s if trimmed == "NET_NAME" => {
                close(s, &mut nets)?;
                State::NeedName { line: lineno }
            }
            State::Nodes { name, mut nodes, line } if keyword(trimmed) == Some("NODE_NAME") => {
                nodes.push(node_fields(trimmed, lineno)?);
                State::Nodes { name, nodes, line }
            }
            _ if keyword(trimmed) == Some("NODE_NAME") => {
                return Err(SchematicError::MalformedNetBlock {
                    line: lineno,
                    message: "NODE_NAME before any NET_NAME".into(),
                })
            }
            _ => {
                return Err(SchematicError::MalformedNetBlock {
                    line: lineno,
                    message: format!("unexpected line `{trimmed}`"),
                })
            }
        };
    }
    close(state, &mut nets)?;
    canonicalize_nets(&mut nets);
    Ok(nets)
}

fn keyword(line: &str) -> Option<&str> {
    line.split_whitespace().next()
}

fn quoted_name(line: &str) -> Option<String> {
    let inner = line.strip_prefix('\'')?;
    let end = inner.rfind('\'')?;
    let tail = inner[end + 1..].trim();
    // exports may end the name line with `;` or `:`
    if !(tail.is_empty() || tail == ";" || tail == ":") {
        return None;
    }
    let name = &inner[..end];
    (!name.is_empty()).then(|| name.to_string())
}

fn node_fields(line: &str, lineno: usize) -> Result<NetNode, SchematicError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    match fields.as_slice() {
        [_, refdes, pin] => Ok(NetNode::new(*refdes, *pin)),
        _ => Err(SchematicError::MalformedNetBlock {
            line: lineno,
            message: "expected `NODE_NAME <refdes> <pin>`".into(),
        }),
    }
}

/// Renders nets in the subset grammar; `parse_pstxnet(render_pstxnet(n))`
/// returns the canonical form of `n`.
pub fn render_pstxnet(nets: &[Net]) -> String {
    let mut out = String::new();
    for (i, net) in nets.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str("NET_NAME\n'");
        out.push_str(&net.name);
        out.push_str("'\n");
        for n in &net.nodes {
            out.push_str("NODE_NAME ");
            out.push_str(&n.designator);
            out.push(' ');
            out.push_str(&n.pin);
            out.push('\n');
        }
    }
    out
}
