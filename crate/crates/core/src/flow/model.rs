//! JSON persistence for [`TransportMap`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FlowLayer, ShapeGrid, Structure, TransportMap};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::specfun::BaseKind;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    format_version: u32,
    d: usize,
    base: BaseKind,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "S")]
    s: usize,
    shape_grid: ShapeGrid,
    mode: String,
    r: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rotation: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eigenvalues: Option<Vec<f64>>,
    layers: Vec<LayerDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    raw_diag: Vec<f64>,
    lower_offdiag: Vec<f64>,
    b: Vec<f64>,
    weight_logits: Vec<Vec<f64>>,
}

impl TransportMap {
    pub fn to_json(&self) -> Result<String> {
        let s = self.grid.len();
        let r = match self.structure {
            Structure::Full => self.d,
            Structure::Subspace { r } => r,
            Structure::Diagonal => 0,
        };
        let doc = ModelDoc {
            format_version: FORMAT_VERSION,
            d: self.d,
            base: self.base,
            k: self.layers.len(),
            s,
            shape_grid: self.grid.clone(),
            mode: self.structure.name().to_string(),
            r,
            rotation: self.rotation.as_ref().map(|m| m.as_slice().to_vec()),
            eigenvalues: self.eigenvalues.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerDoc {
                    raw_diag: l.raw_diag.clone(),
                    lower_offdiag: l.lower.clone(),
                    b: l.b.clone(),
                    weight_logits: if s == 0 {
                        vec![Vec::new(); self.d]
                    } else {
                        l.logits.chunks(s).map(<[f64]>::to_vec).collect()
                    },
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            Some(v) => return Err(Error::Model(format!("unknown format_version {v}"))),
            None => return Err(Error::Model("missing format_version".into())),
        }
        let doc: ModelDoc = serde_json::from_value(value)?;
        if doc.s != doc.shape_grid.len() {
            return Err(Error::Model(format!("S = {} but shape_grid has {} entries", doc.s, doc.shape_grid.len())));
        }
        if doc.k != doc.layers.len() {
            return Err(Error::Model(format!("K = {} but {} layers present", doc.k, doc.layers.len())));
        }
        let structure = match doc.mode.as_str() {
            "full" => Structure::Full,
            "subspace" => Structure::Subspace { r: doc.r },
            "diagonal" => Structure::Diagonal,
            other => return Err(Error::Model(format!("unknown mode {other:?}"))),
        };
        let mut layers = Vec::with_capacity(doc.k);
        for (k, l) in doc.layers.into_iter().enumerate() {
            if l.weight_logits.len() != doc.d || l.weight_logits.iter().any(|row| row.len() != doc.s) {
                return Err(Error::Model(format!("layer {}: weight_logits must be {} x {}", k + 1, doc.d, doc.s)));
            }
            let logits = l.weight_logits.concat();
            if l.raw_diag.len() != doc.d {
                return Err(Error::Model(format!("layer {}: raw_diag must have {} entries", k + 1, doc.d)));
            }
            let layer = FlowLayer::new(l.raw_diag, l.lower_offdiag, l.b, logits, doc.s)
                .map_err(|e| Error::Model(format!("layer {}: {e}", k + 1)))?;
            layers.push(layer);
        }
        let map = TransportMap::new(doc.d, doc.base, doc.shape_grid, structure, layers)
            .map_err(|e| Error::Model(e.to_string()))?;
        match doc.rotation {
            Some(rot) => {
                let m = Matrix::from_row_major(doc.d, doc.d, rot).map_err(|e| Error::Model(e.to_string()))?;
                map.with_rotation(m, doc.eigenvalues).map_err(|e| Error::Model(e.to_string()))
            }
            None => Ok(TransportMap { eigenvalues: doc.eigenvalues, ..map }),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::tests::random_map;

    #[test]
    fn json_round_trip_is_exact() {
        for st in [Structure::Full, Structure::Subspace { r: 2 }, Structure::Diagonal] {
            let m = random_map(3, 2, 5, st, 4, BaseKind::Logistic);
            let back = TransportMap::from_json(&m.to_json().unwrap()).unwrap();
            assert_eq!(back, m);
        }
        let m = TransportMap::identity(2, BaseKind::Gauss, 1, ShapeGrid::empty());
        assert_eq!(TransportMap::from_json(&m.to_json().unwrap()).unwrap(), m);
    }

    #[test]
    fn rotation_survives_round_trip() {
        let th: f64 = 0.3;
        let rot = Matrix::from_rows(&[vec![th.cos(), -th.sin()], vec![th.sin(), th.cos()]]).unwrap();
        let m = random_map(2, 1, 4, Structure::Subspace { r: 1 }, 2, BaseKind::Gauss)
            .with_rotation(rot, Some(vec![2.0, 0.01]))
            .unwrap();
        let back = TransportMap::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        let v = back.rotation().unwrap();
        assert!(v.transpose().matmul(v).unwrap().max_abs_diff(&Matrix::identity(2)) < 1e-12);
    }

    #[test]
    fn unknown_version_is_rejected() {
        let m = TransportMap::identity(2, BaseKind::Gauss, 1, ShapeGrid::default());
        let text = m.to_json().unwrap().replace("\"format_version\": 1", "\"format_version\": 7");
        let err = TransportMap::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("format_version"), "{err}");
        assert!(TransportMap::from_json("{\"d\": 2}").is_err());
        assert!(TransportMap::from_json("not json").is_err());
    }

    #[test]
    fn inconsistent_documents_are_rejected() {
        let m = TransportMap::identity(2, BaseKind::Gauss, 1, ShapeGrid::with_bound(3).unwrap());
        let text = m.to_json().unwrap().replace("\"K\": 1", "\"K\": 2");
        assert!(TransportMap::from_json(&text).is_err());
        let text = m.to_json().unwrap().replace("\"mode\": \"full\"", "\"mode\": \"spiral\"");
        assert!(TransportMap::from_json(&text).is_err());
    }
}
