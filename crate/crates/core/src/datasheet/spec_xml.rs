//! Compact XML form of a [`DatasheetSpec`].
//!
//! ```xml
//! <datasheet mpn="TPS54331" source_url="...">
//!   <pins>
//!     <pin designator="1" function="BOOT" metadata="..."/>
//!   </pins>
//!   <abs_max_ratings>
//!     <rating limit="28" parameter="VIN" unit="V"/>
//!   </abs_max_ratings>
//!   <rec_operating>
//!     <condition max="28" min="3.5" parameter="VIN" unit="V"/>
//!   </rec_operating>
//!   <blocks><block text="..."/></blocks>
//!   <app_circuits><circuit text="..."/></app_circuits>
//! </datasheet>
//! ```
//!
//! Pins are written in natural designator order; every other list keeps the
//! extraction order. All content lives in attributes so that parsing and
//! re-serializing is a byte-level fixpoint.

use std::collections::HashMap;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::{DatasheetError, DatasheetSpec, OperatingCondition, PartRef, PinSpec, Rating};
use crate::natural::natural_cmp;
use crate::xmlw::{num, s, XmlWriter};

pub fn serialize_spec_xml(spec: &DatasheetSpec) -> String {
    let mut w = XmlWriter::fragment();
    w.open(
        "datasheet",
        vec![
            ("ipn", spec.part.ipn.clone()),
            ("mpn", spec.part.mpn.clone()),
            ("source_url", s(&spec.source_url)),
        ],
    );
    let mut pins: Vec<&PinSpec> = spec.pins.iter().collect();
    pins.sort_by(|a, b| natural_cmp(&a.designator, &b.designator));
    if w.open_or_empty("pins", vec![], !pins.is_empty()) {
        for p in pins {
            w.empty(
                "pin",
                vec![
                    ("designator", s(&p.designator)),
                    ("function", s(&p.function)),
                    ("metadata", p.metadata.clone()),
                ],
            );
        }
        w.close("pins");
    }
    if w.open_or_empty("abs_max_ratings", vec![], !spec.abs_max_ratings.is_empty()) {
        for r in &spec.abs_max_ratings {
            w.empty(
                "rating",
                vec![
                    ("limit", Some(num(r.limit))),
                    ("parameter", s(&r.parameter)),
                    ("unit", s(&r.unit)),
                ],
            );
        }
        w.close("abs_max_ratings");
    }
    if w.open_or_empty("rec_operating", vec![], !spec.rec_operating.is_empty()) {
        for c in &spec.rec_operating {
            w.empty(
                "condition",
                vec![
                    ("max", c.max.map(num)),
                    ("min", c.min.map(num)),
                    ("parameter", s(&c.parameter)),
                    ("typ", c.typ.map(num)),
                    ("unit", s(&c.unit)),
                ],
            );
        }
        w.close("rec_operating");
    }
    for (list, item, values) in [
        ("blocks", "block", &spec.blocks),
        ("app_circuits", "circuit", &spec.app_circuits),
    ] {
        if w.open_or_empty(list, vec![], !values.is_empty()) {
            for v in values {
                w.empty(item, vec![("text", s(v))]);
            }
            w.close(list);
        }
    }
    w.close("datasheet");
    w.finish()
}

fn attrs(e: &BytesStart<'_>) -> Result<HashMap<String, String>, DatasheetError> {
    let mut out = HashMap::new();
    for a in e.attributes() {
        let a = a.map_err(|err| DatasheetError::MalformedSpec(err.to_string()))?;
        let key = String::from_utf8_lossy(a.key.as_ref()).into_owned();
        let value = a
            .unescape_value()
            .map_err(|err| DatasheetError::MalformedSpec(err.to_string()))?
            .into_owned();
        out.insert(key, value);
    }
    Ok(out)
}

fn required(a: &mut HashMap<String, String>, key: &str, element: &str) -> Result<String, DatasheetError> {
    a.remove(key)
        .ok_or_else(|| DatasheetError::MalformedSpec(format!("<{element}> missing `{key}`")))
}

fn number(v: Option<String>, what: &str) -> Result<Option<f64>, DatasheetError> {
    v.map(|t| {
        t.parse::<f64>()
            .map_err(|_| DatasheetError::MalformedSpec(format!("`{what}` is not a number: {t}")))
    })
    .transpose()
}

pub fn parse_spec_xml(xml: &str) -> Result<DatasheetSpec, DatasheetError> {
    let mut reader = Reader::from_str(xml);
    let mut spec: Option<DatasheetSpec> = None;
    loop {
        let event = reader
            .read_event()
            .map_err(|e| DatasheetError::MalformedSpec(format!("at byte {}: {e}", reader.buffer_position())))?;
        let e = match &event {
            Event::Eof => break,
            Event::Start(e) | Event::Empty(e) => e,
            _ => continue,
        };
        let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
        let mut a = attrs(e)?;
        if name == "datasheet" {
            spec = Some(DatasheetSpec {
                part: PartRef {
                    mpn: a.remove("mpn"),
                    ipn: a.remove("ipn"),
                },
                source_url: required(&mut a, "source_url", "datasheet")?,
                pins: vec![],
                abs_max_ratings: vec![],
                rec_operating: vec![],
                blocks: vec![],
                app_circuits: vec![],
            });
            continue;
        }
        let Some(sp) = spec.as_mut() else {
            return Err(DatasheetError::MalformedSpec(format!("<{name}> outside <datasheet>")));
        };
        match name.as_str() {
            "pin" => sp.pins.push(PinSpec {
                designator: required(&mut a, "designator", "pin")?,
                function: required(&mut a, "function", "pin")?,
                metadata: a.remove("metadata"),
            }),
            "rating" => sp.abs_max_ratings.push(Rating {
                limit: number(Some(required(&mut a, "limit", "rating")?), "limit")?.unwrap_or_default(),
                parameter: required(&mut a, "parameter", "rating")?,
                unit: required(&mut a, "unit", "rating")?,
            }),
            "condition" => sp.rec_operating.push(OperatingCondition {
                min: number(a.remove("min"), "min")?,
                typ: number(a.remove("typ"), "typ")?,
                max: number(a.remove("max"), "max")?,
                parameter: required(&mut a, "parameter", "condition")?,
                unit: required(&mut a, "unit", "condition")?,
            }),
            "block" => sp.blocks.push(required(&mut a, "text", "block")?),
            "circuit" => sp.app_circuits.push(required(&mut a, "text", "circuit")?),
            _ => {}
        }
    }
    spec.ok_or_else(|| DatasheetError::MalformedSpec("no <datasheet> element".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DatasheetSpec {
        DatasheetSpec {
            part: PartRef::mpn("TPS54331"),
            source_url: "file:datasheets/TPS54331.txt".into(),
            pins: vec![
                PinSpec {
                    designator: "10".into(),
                    function: "PAD".into(),
                    metadata: None,
                },
                PinSpec {
                    designator: "2".into(),
                    function: "VIN".into(),
                    metadata: Some("3.5 V to 28 V <input> & \"quoted\"\nsecond line".into()),
                },
            ],
            abs_max_ratings: vec![Rating {
                parameter: "VIN".into(),
                limit: 30.0,
                unit: "V".into(),
            }],
            rec_operating: vec![OperatingCondition {
                parameter: "TA".into(),
                min: Some(-40.0),
                typ: None,
                max: Some(0.1 + 0.2),
                unit: "°C".into(),
            }],
            blocks: vec!["Error amp\tand PWM".into()],
            app_circuits: vec![],
        }
    }

    #[test]
    fn pins_in_natural_order() {
        let xml = serialize_spec_xml(&sample());
        assert!(xml.find("designator=\"2\"").unwrap() < xml.find("designator=\"10\"").unwrap());
        assert!(xml.contains("<app_circuits/>"));
    }

    #[test]
    fn parse_serialize_fixpoint() {
        let xml = serialize_spec_xml(&sample());
        let back = parse_spec_xml(&xml).unwrap();
        assert_eq!(serialize_spec_xml(&back), xml);
        assert_eq!(back.pin("2").unwrap().metadata, sample().pins[1].metadata);
        assert_eq!(back.rec_operating[0].max, Some(0.1 + 0.2));
        assert_eq!(back.blocks, sample().blocks);
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_spec_xml("<pins/>").is_err());
        assert!(parse_spec_xml("").is_err());
        assert!(parse_spec_xml("<datasheet>").is_err());
    }
}
