//! Append-only geodesic database.
//!
//! One record per line: model hash, class, length, energy, index, gradient
//! norm, provenance tag, then the node coordinates in full round-trip
//! precision. Files re-load against the same manifold.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{GeodesicError, LabResult};
use crate::homotopy::HomotopyClass;
use crate::metrics::{ModelManifold, Node};
use crate::pathspace::{DiscretePath, GeodesicRecord};
use crate::{real, Real};

#[derive(Clone, Debug)]
pub struct GeodesicDatabase<S: Real> {
    manifold: ModelManifold<S>,
    records: Vec<GeodesicRecord<S>>,
    dedup_tol: S,
}

impl<S: Real> GeodesicDatabase<S> {
    pub fn new(manifold: ModelManifold<S>, dedup_tol: S) -> Self {
        Self { manifold, records: Vec::new(), dedup_tol }
    }

    pub fn records(&self) -> &[GeodesicRecord<S>] {
        &self.records
    }

    pub fn manifold(&self) -> &ModelManifold<S> {
        &self.manifold
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Inserts unless a record with the same class and an energy within the
    /// dedup tolerance is already present. Returns whether it was stored.
    pub fn insert(&mut self, rec: GeodesicRecord<S>) -> bool {
        let duplicate = self.records.iter().any(|existing| {
            existing.class == rec.class
                && (existing.energy - rec.energy).abs()
                    <= self.dedup_tol * (S::one() + rec.energy)
        });
        if duplicate {
            return false;
        }
        self.records.push(rec);
        true
    }

    fn record_line(&self, rec: &GeodesicRecord<S>) -> String {
        let nodes = rec
            .path
            .nodes()
            .iter()
            .map(|n| {
                format!(
                    "{},{},{},{}",
                    n[0].to_f64().unwrap(),
                    n[1].to_f64().unwrap(),
                    n[2].to_f64().unwrap(),
                    n[3].to_f64().unwrap()
                )
            })
            .collect::<Vec<_>>()
            .join(";");
        format!(
            "geodesic model={:016x} class={} length={} energy={} index={} grad={} tag={} nodes={}",
            self.manifold.model_hash(),
            rec.class.label(),
            rec.length.to_f64().unwrap(),
            rec.energy.to_f64().unwrap(),
            rec.index.map(|i| i as i64).unwrap_or(-1),
            rec.gradient_norm.to_f64().unwrap(),
            rec.provenance,
            nodes
        )
    }

    /// Appends every in-memory record to the file, creating it if needed.
    pub fn append_to(&self, path: &Path) -> LabResult<(), S> {
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        for rec in &self.records {
            writeln!(file, "{}", self.record_line(rec))?;
        }
        Ok(())
    }

    /// Re-loads a database file written against the same manifold.
    pub fn load(path: &Path, manifold: ModelManifold<S>, dedup_tol: S) -> LabResult<Self, S> {
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        let mut db = Self::new(manifold, dedup_tol);
        let expect_hash = format!("{:016x}", db.manifold.model_hash());
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let rec = parse_line(line, &db.manifold, &expect_hash)
                .map_err(|msg| GeodesicError::Database(format!("line {}: {msg}", lineno + 1)))?;
            db.records.push(rec);
        }
        Ok(db)
    }
}

fn parse_line<S: Real>(
    line: &str,
    manifold: &ModelManifold<S>,
    expect_hash: &str,
) -> Result<GeodesicRecord<S>, String> {
    let mut fields = std::collections::HashMap::new();
    for token in line.split_whitespace().skip(1) {
        let (key, value) = token.split_once('=').ok_or("malformed token")?;
        fields.insert(key, value);
    }
    let hash = fields.get("model").ok_or("missing model hash")?;
    if *hash != expect_hash {
        return Err(format!("model hash {hash} does not match the manifold"));
    }
    let class = HomotopyClass::parse(fields.get("class").ok_or("missing class")?)
        .ok_or("bad class label")?;
    let parse_f = |key: &str| -> Result<S, String> {
        fields
            .get(key)
            .ok_or(format!("missing {key}"))?
            .parse::<f64>()
            .map(real)
            .map_err(|e| format!("bad {key}: {e}"))
    };
    let length = parse_f("length")?;
    let energy = parse_f("energy")?;
    let gradient_norm = parse_f("grad")?;
    let index: i64 = fields
        .get("index")
        .ok_or("missing index")?
        .parse()
        .map_err(|_| "bad index")?;
    let tag = fields.get("tag").copied().unwrap_or("loaded");
    let nodes: Result<Vec<Node<S>>, String> = fields
        .get("nodes")
        .ok_or("missing nodes")?
        .split(';')
        .map(|chunk| {
            let coords: Result<Vec<f64>, _> = chunk.split(',').map(|c| c.parse::<f64>()).collect();
            let coords = coords.map_err(|e| format!("bad node: {e}"))?;
            if coords.len() != 4 {
                return Err("node needs 4 coordinates".into());
            }
            Ok(Node::new(
                real(coords[0]),
                real(coords[1]),
                real(coords[2]),
                real(coords[3]),
            ))
        })
        .collect();
    let path =
        DiscretePath::new(manifold.clone(), nodes?).map_err(|e| format!("bad path: {e}"))?;
    Ok(GeodesicRecord {
        path,
        length,
        energy,
        class,
        gradient_norm,
        index: if index >= 0 { Some(index as usize) } else { None },
        iterations: 0,
        provenance: tag.to_string(),
    })
}
