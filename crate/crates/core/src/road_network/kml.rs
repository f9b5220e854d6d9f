//! Streaming KML reader for road geometry.
//!
//! Every `LineString` inside a `Placemark` becomes one [`RoadSegment`].
//! Segment metadata comes from `ExtendedData` (`Data`/`value` pairs or
//! `SchemaData`/`SimpleData`) under configurable, case-insensitive keys.

use std::collections::HashMap;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use serde::{Deserialize, Serialize};

use super::{GeoPoint, NetworkError, RoadNetwork, RoadSegment, DEFAULT_CELL_DEG, DEFAULT_ROAD_LEVEL};

/// Attribute keys and index settings used while reading a KML document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KmlOptions {
    /// Attribute holding the segment identifier; falls back to the
    /// Placemark `id` attribute, then to the placemark ordinal.
    pub id_key: String,
    /// Attribute holding the street name; falls back to the Placemark `<name>`.
    pub name_key: String,
    /// Attribute holding the road level (1, 2 or 3).
    pub level_key: String,
    pub cell_deg: f64,
}

impl Default for KmlOptions {
    fn default() -> Self {
        KmlOptions {
            id_key: "nid".into(),
            name_key: "l_stname_c".into(),
            level_key: "road_level".into(),
            cell_deg: DEFAULT_CELL_DEG,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum KmlError {
    #[error("malformed XML at line {line}: {message}")]
    Xml { line: usize, message: String },
    #[error("placemark `{placemark}`: malformed coordinate token `{token}`")]
    Coordinate { placemark: String, token: String },
    #[error("placemark `{placemark}`: {source}")]
    Point {
        placemark: String,
        #[source]
        source: super::InvalidCoordinate,
    },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Parse outcome: the network plus the number of skipped LineStrings.
#[derive(Debug, Clone)]
pub struct ParsedNetwork {
    pub network: RoadNetwork,
    /// LineStrings with fewer than two coordinates.
    pub warnings: usize,
}

#[derive(Default)]
struct PlacemarkState {
    ordinal: usize,
    id_attr: Option<String>,
    name: Option<String>,
    attrs: HashMap<String, String>,
    lines: Vec<String>,
}

impl PlacemarkState {
    fn label(&self) -> String {
        self.name.clone().or_else(|| self.id_attr.clone()).unwrap_or_else(|| format!("#{}", self.ordinal))
    }
}

fn line_of(bytes: &[u8], pos: u64) -> usize {
    let end = (pos as usize).min(bytes.len());
    1 + bytes[..end].iter().filter(|&&b| b == b'\n').count()
}

fn attr(e: &BytesStart<'_>, key: &[u8]) -> Option<String> {
    e.attributes()
        .flatten()
        .find(|a| a.key.local_name().as_ref() == key)
        .and_then(|a| a.unescape_value().ok().map(|v| v.into_owned()))
}

pub fn parse_kml(bytes: &[u8], opts: &KmlOptions) -> Result<ParsedNetwork, KmlError> {
    let mut reader = Reader::from_reader(bytes);
    reader.config_mut().trim_text(true);

    let xml_err = |reader: &Reader<&[u8]>, message: String| KmlError::Xml {
        line: line_of(bytes, reader.error_position().max(reader.buffer_position())),
        message,
    };

    let mut stack: Vec<Vec<u8>> = Vec::new();
    let mut placemark: Option<PlacemarkState> = None;
    let mut placemarks_seen = 0usize;
    let mut data_key: Option<String> = None;
    let mut coords = String::new();
    let mut segments = Vec::new();
    let mut warnings = 0usize;
    let mut buf = Vec::new();

    loop {
        let event = reader.read_event_into(&mut buf).map_err(|e| xml_err(&reader, e.to_string()))?;
        match event {
            Event::Start(e) => {
                let local = e.local_name().as_ref().to_vec();
                match local.as_slice() {
                    b"Placemark" => {
                        placemark = Some(PlacemarkState {
                            ordinal: placemarks_seen,
                            id_attr: attr(&e, b"id"),
                            ..Default::default()
                        });
                        placemarks_seen += 1;
                    }
                    b"Data" | b"SimpleData" => data_key = attr(&e, b"name"),
                    b"coordinates" => coords.clear(),
                    _ => {}
                }
                stack.push(local);
            }
            Event::End(e) => {
                let local = e.local_name().as_ref().to_vec();
                if stack.pop().as_deref() != Some(local.as_slice()) {
                    return Err(xml_err(&reader, "mismatched end tag".into()));
                }
                match local.as_slice() {
                    b"Placemark" => {
                        if let Some(pm) = placemark.take() {
                            finish_placemark(pm, opts, &mut segments, &mut warnings)?;
                        }
                    }
                    b"Data" | b"SimpleData" => data_key = None,
                    b"coordinates" => {
                        if in_linestring(&stack) {
                            if let Some(pm) = placemark.as_mut() {
                                pm.lines.push(std::mem::take(&mut coords));
                            }
                        }
                    }
                    _ => {}
                }
            }
            Event::Empty(e) => {
                // `<coordinates/>` is an empty LineString
                if e.local_name().as_ref() == b"coordinates" && in_linestring(&stack) {
                    if let Some(pm) = placemark.as_mut() {
                        pm.lines.push(String::new());
                    }
                }
            }
            Event::Text(t) => {
                let text = t.unescape().map_err(|e| xml_err(&reader, e.to_string()))?;
                on_text(&stack, &mut placemark, &data_key, &mut coords, &text);
            }
            Event::CData(t) => {
                let text = String::from_utf8_lossy(t.as_ref()).into_owned();
                on_text(&stack, &mut placemark, &data_key, &mut coords, &text);
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }
    if !stack.is_empty() {
        return Err(KmlError::Xml {
            line: line_of(bytes, bytes.len() as u64),
            message: format!("unexpected end of document inside <{}>", String::from_utf8_lossy(stack.last().unwrap())),
        });
    }
    let network = RoadNetwork::with_cell_size(segments, opts.cell_deg)?;
    Ok(ParsedNetwork { network, warnings })
}

fn in_linestring(stack: &[Vec<u8>]) -> bool {
    stack.iter().any(|s| s.as_slice() == b"LineString")
}

fn on_text(
    stack: &[Vec<u8>],
    placemark: &mut Option<PlacemarkState>,
    data_key: &Option<String>,
    coords: &mut String,
    text: &str,
) {
    let Some(pm) = placemark.as_mut() else { return };
    let Some(top) = stack.last() else { return };
    match top.as_slice() {
        b"coordinates" if in_linestring(stack) => {
            coords.push(' ');
            coords.push_str(text);
        }
        b"name" if stack.len() >= 2 && stack[stack.len() - 2].as_slice() == b"Placemark" => {
            pm.name = Some(text.trim().to_string());
        }
        b"value" | b"SimpleData" => {
            if let Some(k) = data_key {
                pm.attrs.insert(k.to_lowercase(), text.trim().to_string());
            }
        }
        _ => {}
    }
}

fn finish_placemark(
    pm: PlacemarkState,
    opts: &KmlOptions,
    segments: &mut Vec<RoadSegment>,
    warnings: &mut usize,
) -> Result<(), KmlError> {
    let label = pm.label();
    let lookup = |key: &str| pm.attrs.get(&key.to_lowercase()).filter(|v| !v.is_empty());

    let base_id = lookup(&opts.id_key)
        .cloned()
        .or_else(|| pm.id_attr.clone())
        .unwrap_or_else(|| format!("placemark-{:06}", pm.ordinal));
    let street = lookup(&opts.name_key).cloned().or_else(|| pm.name.clone()).unwrap_or_default();
    let level = lookup(&opts.level_key)
        .and_then(|v| v.parse::<u8>().ok())
        .filter(|l| (1..=3).contains(l))
        .unwrap_or(DEFAULT_ROAD_LEVEL);

    let multi = pm.lines.len() > 1;
    for (k, text) in pm.lines.iter().enumerate() {
        let mut pts = Vec::new();
        for token in text.split_whitespace() {
            pts.push(
                parse_coordinate(token)
                    .ok_or_else(|| KmlError::Coordinate { placemark: label.clone(), token: token.to_string() })?
                    .map_err(|source| KmlError::Point { placemark: label.clone(), source })?,
            );
        }
        if pts.len() < 2 {
            *warnings += 1;
            log::warn!("placemark `{label}`: LineString with {} coordinate(s) skipped", pts.len());
            continue;
        }
        let id = if multi { format!("{base_id}-{k}") } else { base_id.clone() };
        segments.push(RoadSegment::new(id, pts, street.clone(), level)?);
    }
    Ok(())
}

/// `lon,lat[,alt]`; altitude is discarded.
fn parse_coordinate(token: &str) -> Option<Result<GeoPoint, super::InvalidCoordinate>> {
    let mut parts = token.split(',');
    let lon = parts.next()?.trim().parse::<f64>().ok()?;
    let lat = parts.next()?.trim().parse::<f64>().ok()?;
    if let Some(alt) = parts.next() {
        alt.trim().parse::<f64>().ok()?;
    }
    if parts.next().is_some() {
        return None;
    }
    Some(GeoPoint::new(lat, lon))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(placemarks: &str) -> String {
        format!(
            r#"<?xml version="1.0" encoding="UTF-8"?>
<kml xmlns="http://www.opengis.net/kml/2.2"><Document>{placemarks}</Document></kml>"#
        )
    }

    fn placemark(id: &str, coords: &str) -> String {
        format!(
            r#"<Placemark><name>{id}</name><ExtendedData>
<Data name="NID"><value>{id}</value></Data>
<Data name="L_STNAME_C"><value>Rue {id}</value></Data>
<Data name="road_level"><value>2</value></Data>
</ExtendedData><LineString><coordinates>{coords}</coordinates></LineString></Placemark>"#
        )
    }

    #[test]
    fn minimal_document() {
        let kml = doc(&placemark("s1", "-73.6,45.5,0 -73.599,45.5,0"));
        let parsed = parse_kml(kml.as_bytes(), &KmlOptions::default()).unwrap();
        assert_eq!(parsed.warnings, 0);
        assert_eq!(parsed.network.len(), 1);
        let s = &parsed.network.segments()[0];
        assert_eq!(s.id(), "s1");
        assert_eq!(s.polyline().len(), 2);
        assert_eq!(s.street_name(), "Rue s1");
        assert_eq!(s.road_level(), 2);
        assert_eq!(s.polyline()[0], GeoPoint { lat: 45.5, lon: -73.6 });
    }

    #[test]
    fn single_coordinate_linestring_is_a_warning() {
        let kml = doc(&placemark("s1", "-73.6,45.5"));
        let parsed = parse_kml(kml.as_bytes(), &KmlOptions::default()).unwrap();
        assert_eq!(parsed.network.len(), 0);
        assert_eq!(parsed.warnings, 1);
    }

    #[test]
    fn malformed_token_names_the_placemark() {
        let kml = doc(&format!(
            "{}{}{}",
            placemark("first", "-73.6,45.5 -73.5,45.5"),
            placemark("broken", "-73.6,45.5 a,b"),
            placemark("third", "-73.6,45.5 -73.5,45.5"),
        ));
        let err = parse_kml(kml.as_bytes(), &KmlOptions::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("broken"), "{msg}");
        assert!(msg.contains("a,b"), "{msg}");
    }

    #[test]
    fn malformed_xml_reports_line() {
        let kml = "<kml>\n<Document>\n<Placemark>\n</Document>\n</kml>";
        match parse_kml(kml.as_bytes(), &KmlOptions::default()) {
            Err(KmlError::Xml { line, .. }) => assert!(line >= 3, "line {line}"),
            other => panic!("unexpected {other:?}"),
        }
        let truncated = "<kml><Document><Placemark>";
        assert!(matches!(parse_kml(truncated.as_bytes(), &KmlOptions::default()), Err(KmlError::Xml { .. })));
    }

    #[test]
    fn defaults_when_metadata_missing() {
        let kml =
            doc("<Placemark><LineString><coordinates>-73.6,45.5 -73.5,45.5</coordinates></LineString></Placemark>");
        let parsed = parse_kml(kml.as_bytes(), &KmlOptions::default()).unwrap();
        let s = &parsed.network.segments()[0];
        assert_eq!(s.street_name(), "");
        assert_eq!(s.road_level(), DEFAULT_ROAD_LEVEL);
        assert_eq!(s.id(), "placemark-000000");
    }

    #[test]
    fn multigeometry_gets_suffixed_ids_and_simpledata_is_read() {
        let kml = doc(
            r#"<Placemark id="pm"><ExtendedData><SchemaData><SimpleData name="road_level">1</SimpleData></SchemaData></ExtendedData>
<MultiGeometry>
<LineString><coordinates>-73.6,45.5 -73.5,45.5</coordinates></LineString>
<LineString><coordinates>-73.5,45.5 -73.4,45.5</coordinates></LineString>
</MultiGeometry></Placemark>"#,
        );
        let parsed = parse_kml(kml.as_bytes(), &KmlOptions::default()).unwrap();
        let ids: Vec<_> = parsed.network.segments().iter().map(|s| s.id()).collect();
        assert_eq!(ids, ["pm-0", "pm-1"]);
        assert!(parsed.network.segments().iter().all(|s| s.road_level() == 1));
    }
}
