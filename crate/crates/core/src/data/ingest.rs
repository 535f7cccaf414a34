//! Packing externally computed feature matrices into a dataset.
//!
//! Manifest (UTF-8): the first non-comment line declares the class names,
//! comma separated; class ids follow declaration order. Each further line is
//! `id,label,path` with `path` relative to the manifest. A matrix file has
//! one row per grid cell, row index `(row-1)*cols + (col-1)`, and `D` numbers
//! per row separated by commas and/or whitespace. Blank lines and lines
//! starting with `#` are ignored in both.

use std::fs;
use std::path::{Path, PathBuf};

use super::{Dataset, FeatureGrid};
use crate::error::{Error, Result};
use crate::viewspace::ViewSpace;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub label: String,
    pub path: PathBuf,
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Parses manifest text. Relative paths are resolved against `base`.
pub fn parse_manifest(text: &str, base: &Path, origin: &Path) -> Result<(Vec<String>, Vec<ManifestEntry>)> {
    let parse_err = |line, msg: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let mut lines = content_lines(text);
    let (line_no, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing class declaration line".into()))?;
    let classes: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    if classes.iter().any(String::is_empty) {
        return Err(parse_err(line_no, "empty class name".into()));
    }
    for (i, c) in classes.iter().enumerate() {
        if classes[..i].contains(c) {
            return Err(parse_err(line_no, format!("duplicate class {c:?}")));
        }
    }
    let mut entries = Vec::new();
    for (line, text) in lines {
        let fields: Vec<&str> = text.splitn(3, ',').map(str::trim).collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(parse_err(line, format!("expected id,label,path; got {text:?}")));
        }
        entries.push(ManifestEntry {
            id: fields[0].to_string(),
            label: fields[1].to_string(),
            path: base.join(fields[2]),
        });
    }
    Ok((classes, entries))
}

fn parse_matrix(text: &str, path: &Path, shape: &str, space: ViewSpace) -> Result<(usize, Vec<f32>)> {
    let mut dim = None;
    let mut values = Vec::new();
    let mut rows = 0;
    for (line, row) in content_lines(text) {
        let mut n = 0;
        for tok in row.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            let v: f32 = tok.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("not a number: {tok:?}"),
            })?;
            values.push(v);
            n += 1;
        }
        rows += 1;
        match dim {
            None => dim = Some(n),
            Some(d) if d != n => {
                return Err(Error::RaggedRow {
                    shape: shape.to_string(),
                    row: rows,
                    expected: d,
                    found: n,
                })
            }
            _ => {}
        }
    }
    if rows != space.cells() {
        return Err(Error::RowCount {
            shape: shape.to_string(),
            expected: space.cells(),
            found: rows,
        });
    }
    let dim = dim.unwrap_or(0);
    if dim == 0 {
        return Err(Error::RaggedRow {
            shape: shape.to_string(),
            row: 1,
            expected: 1,
            found: 0,
        });
    }
    Ok((dim, values))
}

/// Reads a manifest and every matrix it lists into a validated dataset.
pub fn ingest_external(manifest: impl AsRef<Path>, space: ViewSpace) -> Result<Dataset> {
    let manifest = manifest.as_ref();
    let text = fs::read_to_string(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let (classes, entries) = parse_manifest(&text, base, manifest)?;
    let mut ds: Option<Dataset> = None;
    for e in entries {
        let label = classes
            .iter()
            .position(|c| *c == e.label)
            .ok_or_else(|| Error::UnknownLabel {
                shape: e.id.clone(),
                label: e.label.clone(),
            })?;
        let mtext = fs::read_to_string(&e.path)?;
        let (dim, feats) = parse_matrix(&mtext, &e.path, &e.id, space)?;
        let ds = ds.get_or_insert_with(|| Dataset::new(classes.clone(), space, dim));
        if dim != ds.dim {
            return Err(Error::RaggedRow {
                shape: e.id.clone(),
                row: 1,
                expected: ds.dim,
                found: dim,
            });
        }
        ds.push(FeatureGrid::new(e.id, label, space, dim, feats)?)?;
    }
    ds.ok_or(Error::EmptyDataset)
}

#[cfg(test)]
mod tests {
    use std::fmt::Write as _;

    use super::*;

    fn matrix(rows: usize, dim: usize, start: f32) -> String {
        let mut s = String::new();
        for r in 0..rows {
            let row: Vec<String> = (0..dim).map(|c| (start + (r * dim + c) as f32).to_string()).collect();
            writeln!(s, "{}", row.join(",")).unwrap();
        }
        s
    }

    fn setup(files: &[(&str, String)], manifest: &str) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for (name, body) in files {
            fs::write(dir.path().join(name), body).unwrap();
        }
        fs::write(dir.path().join("manifest.csv"), manifest).unwrap();
        dir
    }

    #[test]
    fn two_shape_manifest() {
        let dir = setup(
            &[("a.csv", matrix(144, 3, 0.0)), ("b.txt", matrix(144, 3, 1.0).replace(',', " "))],
            "# classes\nchair, table\nshape-a,table,a.csv\n\nshape-b,chair,b.txt\n",
        );
        let ds = ingest_external(dir.path().join("manifest.csv"), ViewSpace::default()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim, 3);
        assert_eq!(ds.class_names, vec!["chair", "table"]);
        assert_eq!(ds.shapes[0].label, 1);
        assert_eq!(ds.shapes[1].label, 0);
        assert_eq!(ds.shapes[0].view_at(143), &[429.0, 430.0, 431.0]);
        assert_eq!(ds.shapes[1].view_at(0), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn short_matrix_names_the_shape() {
        let dir = setup(&[("a.csv", matrix(143, 2, 0.0))], "x,y\nbroken-7,x,a.csv\n");
        let err = ingest_external(dir.path().join("manifest.csv"), ViewSpace::default()).unwrap_err();
        assert!(matches!(err, Error::RowCount { found: 143, .. }));
        assert!(err.to_string().contains("broken-7"));
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let m = matrix(144, 2, 0.0).replacen("2,3", "2", 1);
        let dir = setup(&[("a.csv", m)], "x\ns,x,a.csv\n");
        let err = ingest_external(dir.path().join("manifest.csv"), ViewSpace::default()).unwrap_err();
        assert!(matches!(err, Error::RaggedRow { row: 2, expected: 2, found: 1, .. }), "{err}");
    }

    #[test]
    fn unknown_label_is_rejected() {
        let dir = setup(&[("a.csv", matrix(144, 2, 0.0))], "x,y\ns,z,a.csv\n");
        let err = ingest_external(dir.path().join("manifest.csv"), ViewSpace::default()).unwrap_err();
        assert!(matches!(err, Error::UnknownLabel { .. }));
    }

    #[test]
    fn class_ids_follow_declaration_order() {
        let (classes, _) = parse_manifest("b,a,c\n", Path::new("."), Path::new("m")).unwrap();
        assert_eq!(classes, vec!["b", "a", "c"]);
    }
}
