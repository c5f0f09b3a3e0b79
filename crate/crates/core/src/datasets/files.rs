use std::fs;
use std::path::Path;

use super::LabeledDataset;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::metrics::GroupStructure;

/// Reads a comma-separated file whose header names `p` binary features
/// followed by a label column. Feature cells must be `0` or `1`; labels are
/// non-negative class indices. The returned dataset carries no truth; attach
/// one from a groups file with [`LabeledDataset::with_truth`].
pub fn load_binary_csv(path: &Path) -> Result<LabeledDataset> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(format!("reading {}", path.display()), io),
            other => parse_err(1, format!("{other:?}")),
        })?;
    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if header.is_empty() {
        return Err(Error::NoData {
            path: path.to_path_buf(),
        });
    }
    if header.len() < 2 {
        return Err(parse_err(1, "header needs at least one feature and a label column".into()));
    }
    let p = header.len() - 1;

    let mut data = Vec::new();
    let mut y = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |pos| pos.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |pos| pos.line());
        if record.len() != header.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        for (col, cell) in record.iter().take(p).enumerate() {
            let v = match cell {
                "0" => 0.0,
                "1" => 1.0,
                _ => {
                    return Err(Error::Domain {
                        path: path.to_path_buf(),
                        row: line,
                        column: header[col].to_string(),
                        value: cell.to_string(),
                    })
                }
            };
            data.push(v);
        }
        let label = &record[p];
        let label: usize = label
            .parse()
            .map_err(|_| parse_err(line, format!("label {label:?} is not a class index")))?;
        y.push(label);
    }
    if y.is_empty() {
        return Err(Error::NoData {
            path: path.to_path_buf(),
        });
    }
    let n_classes = y.iter().max().map_or(2, |&m| (m + 1).max(2));
    let name = path
        .file_stem()
        .map_or_else(|| "file".to_string(), |s| s.to_string_lossy().into_owned());
    let n = y.len();
    LabeledDataset::new(name, Tensor::new(vec![n, p], data)?, y, n_classes, None)
}

/// Reads a groups file: one group per line, comma-separated 1-based
/// feature indices. Blank lines and lines starting with `#` are skipped.
pub fn read_groups_file(path: &Path) -> Result<GroupStructure> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut groups = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut group = Vec::new();
        for tok in line.split(',') {
            let tok = tok.trim();
            let idx: usize = tok.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: i as u64 + 1,
                message: format!("{tok:?} is not a feature index"),
            })?;
            if idx == 0 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i as u64 + 1,
                    message: "feature indices are 1-based".into(),
                });
            }
            group.push(idx);
        }
        groups.push(group);
    }
    GroupStructure::from_one_based(groups)
}

pub fn write_groups_file(path: &Path, groups: &GroupStructure) -> Result<()> {
    let mut text = String::new();
    for g in groups.to_one_based() {
        let line: Vec<String> = g.iter().map(usize::to_string).collect();
        text.push_str(&line.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn loads_well_formed_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "ok.csv", "a,b,c,label\n0,1,0,1\n1,1,0,0\n");
        let d = load_binary_csv(&path).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.n_features(), 3);
        assert_eq!(d.x.row(0), &[0.0, 1.0, 0.0]);
        assert_eq!(d.y, vec![1, 0]);
        assert_eq!(d.name, "ok");
    }

    #[test]
    fn non_binary_cell_names_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "bad.csv", "a,b,label\n0,1,1\n0,2,0\n");
        let err = load_binary_csv(&path).unwrap_err();
        match &err {
            Error::Domain { row, column, value, .. } => {
                assert_eq!((*row, column.as_str(), value.as_str()), (3, "b", "2"));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "short.csv", "a,b,label\n0,1,1\n0,1\n");
        match load_binary_csv(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn empty_file_has_no_data_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "empty.csv", "");
        let err = load_binary_csv(&path).unwrap_err();
        assert!(err.to_string().contains("no data rows"), "{err}");

        let path = write(&dir, "header.csv", "a,b,label\n");
        assert!(matches!(load_binary_csv(&path), Err(Error::NoData { .. })));
    }

    #[test]
    fn groups_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "truth.txt", "# chem2\n56, 18\n\n40\n");
        let g = read_groups_file(&path).unwrap();
        assert_eq!(g, GroupStructure::new(vec![vec![55, 17], vec![39]]));
        let out = dir.path().join("out.txt");
        write_groups_file(&out, &g).unwrap();
        assert_eq!(read_groups_file(&out).unwrap(), g);

        let bad = write(&dir, "bad.txt", "1,x\n");
        assert!(matches!(read_groups_file(&bad), Err(Error::Parse { line: 1, .. })));
        let zero = write(&dir, "zero.txt", "0,1\n");
        assert!(read_groups_file(&zero).is_err());
    }
}
