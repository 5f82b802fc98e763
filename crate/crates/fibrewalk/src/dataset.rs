//! Dataset files: a JSON object with dimensions, flat counts, optional
//! per-cell bounds, optional structural-zero coordinates and the model's
//! generating class. Coordinates and variable indices are one-based in the
//! file; the loader converts to internal zero-based form.

use std::path::Path;

use serde::Deserialize;

use crate::table::{BoundsSpec, ModelSpec, Table, TableSchema};
use crate::{Error, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    dims: Vec<usize>,
    counts: Vec<i64>,
    #[serde(default)]
    lower: Option<Vec<i64>>,
    #[serde(default)]
    upper: Option<Vec<i64>>,
    #[serde(default)]
    structural_zeros: Option<Vec<Vec<usize>>>,
    model: Vec<Vec<usize>>,
}

/// A fully validated problem instance as read from disk.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub table: Table,
    pub bounds: BoundsSpec,
    pub model: ModelSpec,
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_dataset(&text)
}

pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let raw: RawDataset =
        serde_json::from_str(text).map_err(|e| Error::MalformedDataset(e.to_string()))?;

    let schema = TableSchema::new(raw.dims)?;
    let table = Table::new(schema, raw.counts)?;
    let schema = table.schema();
    let m = schema.num_cells();
    let total = table.grand_total();

    let mut bounds = BoundsSpec::free(m, total);
    if let Some(lower) = raw.lower {
        if lower.len() != m {
            return Err(Error::BadBounds(format!(
                "lower bounds must have {m} entries, got {}",
                lower.len()
            )));
        }
        bounds.lower = lower;
    }
    if let Some(upper) = raw.upper {
        if upper.len() != m {
            return Err(Error::BadBounds(format!(
                "upper bounds must have {m} entries, got {}",
                upper.len()
            )));
        }
        // anything beyond the grand total is vacuous; clamp so downstream
        // arithmetic sees tight sane boxes
        bounds.upper = upper.into_iter().map(|u| u.min(total)).collect();
    }
    if let Some(zeros) = raw.structural_zeros {
        for coords in &zeros {
            let idx = schema.lex_index(coords)?;
            bounds.lower[idx] = 0;
            bounds.upper[idx] = 0;
        }
    }
    bounds.validate(&table)?;

    // variable indices in the file are one-based
    let mut generators = Vec::with_capacity(raw.model.len());
    for g in raw.model {
        let mut zero_based = Vec::with_capacity(g.len());
        for v in g {
            if v == 0 {
                return Err(Error::BadModel(
                    "variable indices in model generators are one-based".into(),
                ));
            }
            zero_based.push(v - 1);
        }
        generators.push(zero_based);
    }
    let model = ModelSpec::new(schema, generators)?;

    Ok(Dataset { bounds, model, table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn data_file(name: &str) -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
    }

    #[test]
    fn nber_dataset_loads_with_expected_totals() {
        let ds = load_dataset(&data_file("nber.json")).unwrap();
        assert_eq!(ds.table.schema().dims(), &[4, 5, 4]);
        assert_eq!(ds.table.grand_total(), 4345);
        let zeros = ds.bounds.structural_zero_cells();
        assert_eq!(zeros.len(), 12);
        // every structural zero has observed count zero
        assert!(zeros.iter().all(|&i| ds.table.counts()[i] == 0));
        assert_eq!(ds.model.generators().len(), 3);

        // spot checks against the source table
        let s = ds.table.schema();
        assert_eq!(ds.table.counts()[s.lex_index(&[1, 1, 1]).unwrap()], 42);
        assert_eq!(ds.table.counts()[s.lex_index(&[4, 3, 3]).unwrap()], 331);
        assert_eq!(ds.table.counts()[s.lex_index(&[2, 5, 3]).unwrap()], 12);

        // the aptitude-by-education marginal cell (5, 1) sums four cells
        let m = ds.table.marginal(&[1, 2]).unwrap();
        assert_eq!(m.sums[m.dims[1] * 4], 8 + 0 + 0 + 36);
        assert_eq!(m.sums[m.dims[1] * 4], 44);
    }

    #[test]
    fn rochdale_dataset_loads_with_expected_totals() {
        let ds = load_dataset(&data_file("rochdale.json")).unwrap();
        assert_eq!(ds.table.schema().num_cells(), 256);
        assert_eq!(ds.table.grand_total(), 665);
        assert_eq!(ds.table.counts().iter().filter(|&&c| c == 0).count(), 165);
        // 217 cells hold at most three observations
        let sparse = ds.table.counts().iter().filter(|&&c| c <= 3).count();
        assert_eq!(sparse, 217);
        assert_eq!(ds.model.generators().len(), 28);
        assert!(ds.bounds.structural_zero_cells().is_empty());
    }

    #[test]
    fn malformed_json_is_distinguished_from_invalid_content() {
        let err = parse_dataset("{ not json").unwrap_err();
        assert!(matches!(err, Error::MalformedDataset(_)));

        let err = parse_dataset(
            r#"{"dims": [2, 1], "counts": [1, 2], "model": [[1]]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::BadSchema(_)));

        let err = parse_dataset(
            r#"{"dims": [2, 2], "counts": [1, 2, 3], "model": [[1]]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::BadTable(_)));

        let err = parse_dataset(
            r#"{"dims": [2, 2], "counts": [1, 2, 3, 4],
                "structural_zeros": [[1, 1]], "model": [[1]]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::CountOutsideBounds(_)));

        let err = parse_dataset(
            r#"{"dims": [2, 2], "counts": [1, 2, 3, 4], "model": [[0]]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::BadModel(_)));
    }

    #[test]
    fn upper_bounds_are_clamped_to_the_grand_total() {
        let ds = parse_dataset(
            r#"{"dims": [2, 2], "counts": [1, 2, 3, 4],
                "upper": [100, 100, 100, 100], "model": [[1], [2]]}"#,
        )
        .unwrap();
        assert!(ds.bounds.upper.iter().all(|&u| u == 10));
    }
}
