use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::preprocess::Dataset;
use crate::error::{Error, Result};
use crate::mesh::{FunctionSample, Mesh};

/// Reads a long-format CSV (`function_id,x...,y`) from a file.
pub fn load_long_csv(path: &Path) -> Result<Dataset> {
    let file = File::open(path)
        .map_err(|e| Error::InvalidInput(format!("cannot open {}: {e}", path.display())))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    read_long_csv(file, &name)
}

/// Rows are grouped by `function_id` in order of first appearance; for 1-D
/// inputs each function's points are sorted by `x`.
pub fn read_long_csv<R: Read>(reader: R, name: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::InvalidInput("CSV file is empty".into()));
    }
    let n_cols = headers.len();
    if n_cols < 3 || &headers[0] != "function_id" || &headers[n_cols - 1] != "y" {
        return Err(Error::Parse {
            line: 1,
            msg: format!(
                "expected header `function_id,x...,y`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let dim = n_cols - 2;
    let mut groups: Vec<(String, Vec<(Vec<f64>, f64)>)> = Vec::new();
    let mut index: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != n_cols {
            return Err(Error::Parse {
                line,
                msg: format!("expected {n_cols} fields, found {}", rec.len()),
            });
        }
        let num = |k: usize| -> Result<f64> {
            let v: f64 = rec[k].parse().map_err(|_| Error::Parse {
                line,
                msg: format!("column `{}` is not a number: `{}`", &headers[k], &rec[k]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("column `{}` is not finite", &headers[k]),
                });
            }
            Ok(v)
        };
        let x = (1..=dim).map(num).collect::<Result<Vec<f64>>>()?;
        let y = num(n_cols - 1)?;
        let id = rec[0].to_string();
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            groups.push((id, Vec::new()));
            groups.len() - 1
        });
        groups[slot].1.push((x, y));
    }
    if groups.is_empty() {
        return Err(Error::InvalidInput("CSV file has no data rows".into()));
    }
    let samples = groups
        .into_iter()
        .map(|(_, mut rows)| {
            if dim == 1 {
                rows.sort_by(|a, b| a.0[0].total_cmp(&b.0[0]));
            }
            let coords: Vec<f64> = rows.iter().flat_map(|r| r.0.iter().copied()).collect();
            let values = rows.iter().map(|r| r.1).collect();
            FunctionSample::new(Mesh::new(dim, coords)?, values)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(name, samples)
}

/// Writes samples in long format; function ids are the sample indices
/// offset by `first_id`.
pub fn write_long_csv<W: Write>(
    w: W,
    samples: &[FunctionSample],
    first_id: usize,
    dim: usize,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["function_id".to_string()];
    if dim == 1 {
        header.push("x".into());
    } else {
        header.extend((0..dim).map(|k| format!("x{k}")));
    }
    header.push("y".into());
    wtr.write_record(&header).map_err(csv_err)?;
    for (k, s) in samples.iter().enumerate() {
        if s.mesh.dim() != dim {
            return Err(Error::InvalidArgument(
                "sample dimension differs from header".into(),
            ));
        }
        for (p, v) in s.mesh.points().zip(&s.values) {
            let mut row = vec![(first_id + k).to_string()];
            row.extend(p.iter().map(|c| c.to_string()));
            row.push(v.to_string());
            wtr.write_record(&row).map_err(csv_err)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_rows_by_id() {
        let text = "function_id,x,y\na,0.0,1\na,0.5,2\na,1.0,3\nb,0.0,4\nb,0.5,5\nb,1.0,6\n";
        let d = read_long_csv(text.as_bytes(), "t").unwrap();
        assert_eq!(d.len(), 2);
        assert!(d.samples.iter().all(|s| s.len() == 3));
        assert_eq!(d.samples[1].values, vec![4.0, 5.0, 6.0]);
    }

    #[test]
    fn keeps_irregular_meshes_and_sorts_by_x() {
        let text = "function_id,x,y\n1,0.9,1\n2,0.1,1\n1,0.1,2\n2,0.2,2\n1,0.5,3\n2,0.3,3\n2,0.4,4\n2,0.5,5\n";
        let d = read_long_csv(text.as_bytes(), "t").unwrap();
        assert_eq!(d.samples[0].len(), 3);
        assert_eq!(d.samples[1].len(), 5);
        assert_eq!(d.samples[0].mesh.coords(), &[0.1, 0.5, 0.9]);
        assert_eq!(d.samples[0].values, vec![2.0, 3.0, 1.0]);
    }

    #[test]
    fn bad_value_names_line() {
        let text = "function_id,x,y\na,0.0,1\na,0.5,oops\n";
        match read_long_csv(text.as_bytes(), "t") {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("oops"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_inputs() {
        assert!(matches!(
            read_long_csv("".as_bytes(), "t"),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            read_long_csv("function_id,x,y\n".as_bytes(), "t"),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            read_long_csv("id,x,value\n1,2,3\n".as_bytes(), "t"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn two_dimensional_round_trip() {
        let mesh = Mesh::new(2, vec![0.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let s = FunctionSample::new(mesh, vec![0.1, 0.2, 0.3]).unwrap();
        let mut buf = Vec::new();
        write_long_csv(&mut buf, std::slice::from_ref(&s), 0, 2).unwrap();
        assert!(String::from_utf8(buf.clone())
            .unwrap()
            .starts_with("function_id,x0,x1,y\n"));
        let d = read_long_csv(buf.as_slice(), "t").unwrap();
        assert_eq!(d.samples[0], s);
    }
}
