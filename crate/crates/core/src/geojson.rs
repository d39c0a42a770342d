//! GeoJSON FeatureCollection ingestion and emission.
//!
//! Features must carry an `id` property; Polygon and MultiPolygon geometries
//! are supported. Additional numeric properties (e.g. a population attribute)
//! are preserved on read and can be merged back on write.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::error::{CoreError, Result};
use crate::geom::{AreaShape, Polygon, Ring};

/// One areal feature: identifier, geometry, and its raw properties.
#[derive(Debug, Clone)]
pub struct AreaFeature {
    pub id: String,
    pub shape: AreaShape,
    pub properties: Map<String, Value>,
}

fn ring_from_json(v: &Value) -> Result<Ring> {
    let arr = v
        .as_array()
        .ok_or_else(|| CoreError::InvalidData("ring is not an array".into()))?;
    let mut points = Vec::with_capacity(arr.len());
    for pt in arr {
        let c = pt
            .as_array()
            .filter(|c| c.len() >= 2)
            .ok_or_else(|| CoreError::InvalidData("coordinate is not a [x, y] pair".into()))?;
        let x = c[0]
            .as_f64()
            .ok_or_else(|| CoreError::InvalidData("non-numeric coordinate".into()))?;
        let y = c[1]
            .as_f64()
            .ok_or_else(|| CoreError::InvalidData("non-numeric coordinate".into()))?;
        points.push((x, y));
    }
    Ok(Ring { points })
}

fn polygon_from_json(rings: &Value) -> Result<Polygon> {
    let arr = rings
        .as_array()
        .filter(|a| !a.is_empty())
        .ok_or_else(|| CoreError::InvalidData("polygon has no rings".into()))?;
    let exterior = ring_from_json(&arr[0])?;
    let holes = arr[1..].iter().map(ring_from_json).collect::<Result<_>>()?;
    Ok(Polygon { exterior, holes })
}

fn shape_from_geometry(geom: &Value) -> Result<AreaShape> {
    let gtype = geom
        .get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| CoreError::InvalidData("geometry without type".into()))?;
    let coords = geom
        .get("coordinates")
        .ok_or_else(|| CoreError::InvalidData("geometry without coordinates".into()))?;
    match gtype {
        "Polygon" => Ok(AreaShape {
            polygons: vec![polygon_from_json(coords)?],
        }),
        "MultiPolygon" => {
            let arr = coords
                .as_array()
                .ok_or_else(|| CoreError::InvalidData("MultiPolygon coordinates".into()))?;
            let polygons = arr.iter().map(polygon_from_json).collect::<Result<Vec<_>>>()?;
            if polygons.is_empty() {
                return Err(CoreError::InvalidData("empty MultiPolygon".into()));
            }
            Ok(AreaShape { polygons })
        }
        other => Err(CoreError::InvalidData(format!(
            "unsupported geometry type '{other}' (expected Polygon or MultiPolygon)"
        ))),
    }
}

/// Parse a FeatureCollection from a JSON string.
pub fn parse_feature_collection(text: &str) -> Result<Vec<AreaFeature>> {
    let root: Value = serde_json::from_str(text)?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(CoreError::InvalidData(
            "expected a GeoJSON FeatureCollection".into(),
        ));
    }
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| CoreError::InvalidData("FeatureCollection without features".into()))?;
    let mut out = Vec::with_capacity(features.len());
    for (k, f) in features.iter().enumerate() {
        let properties = f
            .get("properties")
            .and_then(Value::as_object)
            .cloned()
            .unwrap_or_default();
        let id = properties
            .get("id")
            .map(|v| match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .ok_or_else(|| {
                CoreError::InvalidData(format!("feature {k} is missing the 'id' property"))
            })?;
        let geometry = f
            .get("geometry")
            .filter(|g| !g.is_null())
            .ok_or_else(|| CoreError::InvalidData(format!("feature '{id}' has no geometry")))?;
        out.push(AreaFeature {
            id,
            shape: shape_from_geometry(geometry)?,
            properties,
        });
    }
    if out.is_empty() {
        return Err(CoreError::InvalidData("FeatureCollection has no features".into()));
    }
    Ok(out)
}

/// Read a FeatureCollection from disk.
pub fn read_feature_collection(path: &Path) -> Result<Vec<AreaFeature>> {
    let text = std::fs::read_to_string(path)?;
    parse_feature_collection(&text)
}

fn ring_to_json(ring: &Ring) -> Value {
    let mut pts: Vec<Value> = ring.points.iter().map(|&(x, y)| json!([x, y])).collect();
    if let Some(first) = ring.points.first() {
        if ring.points.last() != Some(first) {
            pts.push(json!([first.0, first.1]));
        }
    }
    Value::Array(pts)
}

fn geometry_to_json(shape: &AreaShape) -> Value {
    let poly_coords = |p: &Polygon| {
        let mut rings = vec![ring_to_json(&p.exterior)];
        rings.extend(p.holes.iter().map(ring_to_json));
        Value::Array(rings)
    };
    if shape.polygons.len() == 1 {
        json!({ "type": "Polygon", "coordinates": poly_coords(&shape.polygons[0]) })
    } else {
        json!({
            "type": "MultiPolygon",
            "coordinates": Value::Array(shape.polygons.iter().map(poly_coords).collect()),
        })
    }
}

/// Serialize features to a FeatureCollection. `extra` maps area id to
/// additional properties merged over the stored ones; `foreign` members are
/// placed at the collection level.
pub fn write_feature_collection(
    features: &[AreaFeature],
    extra: &BTreeMap<String, Map<String, Value>>,
    foreign: &Map<String, Value>,
) -> Value {
    let feats: Vec<Value> = features
        .iter()
        .map(|f| {
            let mut props = f.properties.clone();
            props.insert("id".into(), Value::String(f.id.clone()));
            if let Some(added) = extra.get(&f.id) {
                for (k, v) in added {
                    props.insert(k.clone(), v.clone());
                }
            }
            json!({
                "type": "Feature",
                "properties": Value::Object(props),
                "geometry": geometry_to_json(&f.shape),
            })
        })
        .collect();
    let mut root = Map::new();
    root.insert("type".into(), Value::String("FeatureCollection".into()));
    for (k, v) in foreign {
        root.insert(k.clone(), v.clone());
    }
    root.insert("features".into(), Value::Array(feats));
    Value::Object(root)
}

/// Extract a positive numeric property from every feature.
pub fn numeric_property(features: &[AreaFeature], name: &str) -> Result<Vec<f64>> {
    features
        .iter()
        .map(|f| {
            f.properties
                .get(name)
                .and_then(Value::as_f64)
                .ok_or_else(|| {
                    CoreError::InvalidData(format!(
                        "feature '{}' is missing numeric property '{name}'",
                        f.id
                    ))
                })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const FC: &str = r#"{
      "type": "FeatureCollection",
      "features": [
        {"type": "Feature",
         "properties": {"id": "a", "population": 100.0},
         "geometry": {"type": "Polygon", "coordinates": [[[0,0],[1,0],[1,1],[0,1],[0,0]]]}},
        {"type": "Feature",
         "properties": {"id": "b", "population": 50.0},
         "geometry": {"type": "MultiPolygon",
                      "coordinates": [[[[1,0],[2,0],[2,1],[1,1],[1,0]]]]}}
      ]
    }"#;

    #[test]
    fn parses_polygon_and_multipolygon() {
        let feats = parse_feature_collection(FC).unwrap();
        assert_eq!(feats.len(), 2);
        assert_eq!(feats[0].id, "a");
        assert_eq!(feats[1].shape.polygons.len(), 1);
        let pops = numeric_property(&feats, "population").unwrap();
        assert_eq!(pops, vec![100.0, 50.0]);
    }

    #[test]
    fn missing_id_rejected() {
        let bad = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","properties":{},
             "geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[0,1],[0,0]]]}}]}"#;
        assert!(parse_feature_collection(bad).is_err());
    }

    #[test]
    fn round_trip_preserves_geometry() {
        let feats = parse_feature_collection(FC).unwrap();
        let out = write_feature_collection(&feats, &BTreeMap::new(), &Map::new());
        let feats2 = parse_feature_collection(&out.to_string()).unwrap();
        assert_eq!(feats.len(), feats2.len());
        for (f, g) in feats.iter().zip(&feats2) {
            assert_eq!(f.id, g.id);
            assert_eq!(f.shape, g.shape);
        }
    }
}
