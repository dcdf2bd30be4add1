//! Weight and batch-norm documents.
//!
//! ```json
//! {
//!   "c_o": 1, "c_in": 4, "k": 1,
//!   "weights": [[[[0.5]], [[-0.25]], [[0.0]], [[1.0]]]],
//!   "bn": {"gamma": [1], "beta": [0], "mu": [0], "sigma_sq": [1], "epsilon": [1e-5]}
//! }
//! ```
//!
//! `weights` is nested `[c_o][c_in][row][col]`. `bn` may be omitted for an
//! identity normalization. The reader also accepts JSON5 so that `NaN` and
//! `Infinity` literals parse and are reported by validation instead of
//! failing as syntax errors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapper::{BnParams, WeightTensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    c_o: usize,
    c_in: usize,
    k: usize,
    weights: Vec<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bn: Option<BnParams>,
}

/// A validated layer: real-valued kernels plus their normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub weights: WeightTensor,
    pub bn: BnParams,
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let start: usize = text.lines().take(line.saturating_sub(1)).map(|l| l.len() + 1).sum();
    start + column.saturating_sub(1)
}

fn syntax_error(text: &str, err: json5::Error) -> Error {
    match err {
        json5::Error::Message { msg, location } => Error::Format {
            offset: location.map_or(0, |l| byte_offset(text, l.line, l.column)),
            message: msg,
        },
    }
}

fn check_shape(doc: &Document, errs: &mut Vec<String>) -> Vec<f64> {
    let (c_o, c_in, k) = (doc.c_o, doc.c_in, doc.k);
    if c_o == 0 || c_in == 0 || k == 0 {
        errs.push(format!("shape {c_o}x{c_in}x{k}x{k} has a zero dimension"));
    }
    if doc.weights.len() != c_o {
        errs.push(format!("weights has {} output channels, header says {c_o}", doc.weights.len()));
    }
    let mut flat = Vec::with_capacity(c_o * c_in * k * k);
    for (o, per_out) in doc.weights.iter().enumerate() {
        if per_out.len() != c_in {
            errs.push(format!("weights[{o}] has {} input channels, expected {c_in}", per_out.len()));
        }
        for (c, plane) in per_out.iter().enumerate() {
            if plane.len() != k {
                errs.push(format!("weights[{o}][{c}] has {} rows, expected {k}", plane.len()));
            }
            for (r, row) in plane.iter().enumerate() {
                if row.len() != k {
                    errs.push(format!("weights[{o}][{c}][{r}] has {} columns, expected {k}", row.len()));
                }
                for (col, &v) in row.iter().enumerate() {
                    if !v.is_finite() {
                        errs.push(format!(
                            "weight at channel {o}, input {c}, tap ({r}, {col}) is not finite ({v})"
                        ));
                    }
                    flat.push(v);
                }
            }
        }
    }
    flat
}

/// Parses and validates a weight document, listing every problem found.
pub fn parse_weights(text: &str) -> Result<LayerWeights> {
    let doc: Document = json5::from_str(text).map_err(|e| syntax_error(text, e))?;
    let mut errs = Vec::new();
    let flat = check_shape(&doc, &mut errs);
    let bn = doc.bn.clone().unwrap_or_else(|| BnParams::identity(doc.c_o));
    if bn.channels() != doc.c_o {
        errs.push(format!("bn has {} channels, header says {}", bn.channels(), doc.c_o));
    }
    errs.extend(bn.violations());
    if !errs.is_empty() {
        return Err(Error::Validation(errs));
    }
    Ok(LayerWeights {
        weights: WeightTensor::new(doc.c_o, doc.c_in, doc.k, flat)?,
        bn,
    })
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<LayerWeights> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, &e))?;
    parse_weights(&text)
}

/// Serializes a layer as strict JSON. Non-finite values are rejected.
pub fn weights_to_string(layer: &LayerWeights) -> Result<String> {
    let w = &layer.weights;
    let mut errs: Vec<String> = w
        .data
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_finite())
        .map(|(i, v)| format!("weight {i} is not finite ({v})"))
        .collect();
    errs.extend(layer.bn.violations());
    if !errs.is_empty() {
        return Err(Error::Validation(errs));
    }
    let weights = (0..w.c_o)
        .map(|o| {
            (0..w.c_in)
                .map(|c| (0..w.k).map(|r| (0..w.k).map(|col| w.get(o, c, r, col)).collect()).collect())
                .collect()
        })
        .collect();
    let doc = Document {
        c_o: w.c_o,
        c_in: w.c_in,
        k: w.k,
        weights,
        bn: Some(layer.bn.clone()),
    };
    serde_json::to_string_pretty(&doc).map_err(|e| Error::InvalidInput(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"c_o": 1, "c_in": 4, "k": 1, "weights": [[[[0.5]], [[-0.25]], [[0]], [[1]]]]}"#;

    #[test]
    fn minimal_document() {
        let l = parse_weights(MINIMAL).unwrap();
        assert_eq!(l.weights.data, vec![0.5, -0.25, 0.0, 1.0]);
        assert_eq!(l.bn, BnParams::identity(1));
    }

    #[test]
    fn nan_is_named() {
        let text = MINIMAL.replace("-0.25", "NaN");
        match parse_weights(&text) {
            Err(Error::Validation(v)) => {
                assert_eq!(v.len(), 1);
                assert!(v[0].contains("channel 0, input 1, tap (0, 0)"), "{v:?}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn every_violation_listed() {
        let text = r#"{"c_o": 2, "c_in": 4, "k": 1,
            "weights": [[[[1]], [[Infinity]], [[0]]]],
            "bn": {"gamma": [1, 1], "beta": [0, 0], "mu": [0, 0], "sigma_sq": [-1, 1], "epsilon": [0, 1]}}"#;
        match parse_weights(text) {
            Err(Error::Validation(v)) => assert!(v.len() >= 5, "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_error_has_offset() {
        match parse_weights("{\"c_o\": 1,\n  oops }") {
            Err(Error::Format { offset, .. }) => assert!(offset > 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn round_trip() {
        let data: Vec<f64> = (0..2 * 4 * 9).map(|i| (i as f64 * 0.1234567).sin() / 3.0).collect();
        let layer = LayerWeights {
            weights: WeightTensor::new(2, 4, 3, data).unwrap(),
            bn: BnParams {
                gamma: vec![1.5, -0.3],
                beta: vec![0.1, 0.2],
                mu: vec![0.01, -0.7],
                sigma_sq: vec![0.9, 2.0],
                epsilon: vec![1e-5, 1e-3],
            },
        };
        let back = parse_weights(&weights_to_string(&layer).unwrap()).unwrap();
        assert_eq!(back, layer);
    }
}
