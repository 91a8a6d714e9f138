use super::{kicad, structured, validate, Schematic, SchematicError, SourceFormat};

/// Decodes a schematic from raw bytes.
///
/// Without a hint the format is detected from the content: text whose first
/// form is `(kicad_sch` is the KiCad subset, a JSON object is a structured
/// document whose optional `format` field selects DE-HDL.
pub fn ingest_schematic(
    raw: &[u8],
    format_hint: Option<SourceFormat>,
) -> Result<Schematic, SchematicError> {
    let format = match format_hint {
        Some(f) => f,
        None => detect(raw).ok_or(SchematicError::UnknownFormat)?,
    };
    let schematic = match format {
        SourceFormat::KicadSubset => {
            let text = std::str::from_utf8(raw).map_err(|e| {
                SchematicError::malformed(Some(e.valid_up_to()), "input is not valid UTF-8")
            })?;
            kicad::parse_kicad(text)?
        }
        f => structured::parse_document(raw, f)?,
    };
    validate(&schematic)?;
    Ok(schematic)
}

fn detect(raw: &[u8]) -> Option<SourceFormat> {
    let raw = raw.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(raw);
    let start = raw.iter().position(|b| !b.is_ascii_whitespace())?;
    let body = &raw[start..];
    if body.starts_with(b"(") {
        let rest = body[1..]
            .iter()
            .skip_while(|b| b.is_ascii_whitespace())
            .copied()
            .take(9)
            .collect::<Vec<_>>();
        return (rest == b"kicad_sch").then_some(SourceFormat::KicadSubset);
    }
    if body.starts_with(b"{") {
        return structured::sniff_format(body);
    }
    None
}
