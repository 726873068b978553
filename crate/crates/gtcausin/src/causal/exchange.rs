//! File exchange with the external causal-discovery program: variable
//! batches go out as named-column CSVs, relation matrices come back as
//! 30×30 CSVs with the same header.

use std::path::{Path, PathBuf};

use crate::causal::stats::{RelationKind, RelationMatrix};
use crate::causal::variables::{variable_names, BatchSource, CausalVariableBatch, NUM_VARIABLES};
use crate::error::{input_err, Result};
use crate::tensor::Tensor;

/// Writes one CSV per batch (`batch_000.csv`, ...) into `dir`; returns the
/// paths in batch order.
pub fn export_batches(batches: &[CausalVariableBatch], dir: &Path) -> Result<Vec<PathBuf>> {
    if batches.is_empty() {
        return input_err("no batches to export");
    }
    std::fs::create_dir_all(dir)?;
    let names = variable_names();
    let mut paths = Vec::with_capacity(batches.len());
    for (i, batch) in batches.iter().enumerate() {
        let path = dir.join(format!("batch_{i:03}.csv"));
        let mut writer = csv::Writer::from_path(&path)?;
        writer.write_record(&names)?;
        for r in 0..batch.len() {
            let row: Vec<String> = (0..NUM_VARIABLES)
                .map(|c| format!("{}", batch.rows.at2(r, c)))
                .collect();
            writer.write_record(&row)?;
        }
        writer.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

/// Writes a relation matrix as 30 rows under the variable-name header.
pub fn export_relation(relation: &RelationMatrix, path: &Path) -> Result<()> {
    if relation.c.shape() != [NUM_VARIABLES, NUM_VARIABLES] {
        return input_err(format!(
            "relation matrix must be 30×30, got {:?}",
            relation.c.shape()
        ));
    }
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(variable_names())?;
    for i in 0..NUM_VARIABLES {
        let row: Vec<String> = (0..NUM_VARIABLES)
            .map(|j| format!("{}", relation.c.at2(i, j)))
            .collect();
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a 30×30 relation CSV produced by the external program. The header
/// must match the variable names exactly; the result is tagged as external.
pub fn import_relation(path: &Path) -> Result<RelationMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let expected = variable_names();
    let header = reader.headers()?.clone();
    if header.len() != NUM_VARIABLES {
        return input_err(format!(
            "relation header has {} columns, expected {NUM_VARIABLES}",
            header.len()
        ));
    }
    for (got, want) in header.iter().zip(&expected) {
        if got != want {
            return input_err(format!(
                "relation header column {got:?} does not match expected {want:?}"
            ));
        }
    }
    let mut data = Vec::with_capacity(NUM_VARIABLES * NUM_VARIABLES);
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record?;
        if record.len() != NUM_VARIABLES {
            return input_err(format!(
                "relation row {rows} has {} entries, expected {NUM_VARIABLES}",
                record.len()
            ));
        }
        for field in record.iter() {
            let v: f64 = field.trim().parse().map_err(|_| {
                crate::error::Error::Input(format!("bad relation entry {field:?} in row {rows}"))
            })?;
            if !v.is_finite() {
                return input_err(format!("non-finite relation entry in row {rows}"));
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows != NUM_VARIABLES {
        return input_err(format!(
            "relation matrix has {rows} rows, expected {NUM_VARIABLES}"
        ));
    }
    Ok(RelationMatrix {
        c: Tensor::new(&[NUM_VARIABLES, NUM_VARIABLES], data)?,
        kind: RelationKind::ExternalIcd,
        repeats: 1,
        zero_variance: Vec::new(),
    })
}

/// Reads every `batch_*.csv` under `dir` back in name order. Headers must
/// match the variable names; imported rows are tagged as externally
/// sourced since the sampling mode is not recorded in the files.
pub fn import_batches(dir: &Path) -> Result<Vec<CausalVariableBatch>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("batch_") && n.ends_with(".csv"))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return input_err(format!("no batch_*.csv files under {}", dir.display()));
    }
    let expected = variable_names();
    let mut batches = Vec::with_capacity(paths.len());
    for path in &paths {
        let mut reader = csv::Reader::from_path(path)?;
        let header = reader.headers()?.clone();
        let got: Vec<&str> = header.iter().collect();
        if got != expected.iter().map(String::as_str).collect::<Vec<_>>() {
            return input_err(format!(
                "{}: header does not match the causal variable names",
                path.display()
            ));
        }
        let mut rows = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() != NUM_VARIABLES {
                return input_err(format!(
                    "{}: row {} has {} fields, expected {NUM_VARIABLES}",
                    path.display(),
                    line + 2,
                    record.len()
                ));
            }
            let mut row = Vec::with_capacity(NUM_VARIABLES);
            for field in record.iter() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    crate::error::Error::Input(format!(
                        "{}: bad entry {field:?} in row {}",
                        path.display(),
                        line + 2
                    ))
                })?;
                row.push(v);
            }
            rows.push(row);
        }
        batches.push(CausalVariableBatch::from_rows(
            &rows,
            BatchSource::External,
        )?);
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::causal::stats::pearson_matrix;
    use crate::causal::variables::BatchSource;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noise_batch(rows: usize, seed: u64) -> CausalVariableBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<Vec<f64>> = (0..rows)
            .map(|_| {
                (0..NUM_VARIABLES)
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect()
            })
            .collect();
        CausalVariableBatch::from_rows(&data, BatchSource::Random).unwrap()
    }

    #[test]
    fn batch_export_writes_named_columns() {
        let dir = tempfile::tempdir().unwrap();
        let batches = vec![noise_batch(8, 1), noise_batch(5, 2)];
        let paths = export_batches(&batches, dir.path()).unwrap();
        assert_eq!(paths.len(), 2);
        assert!(paths[0].ends_with("batch_000.csv"));

        let mut reader = csv::Reader::from_path(&paths[1]).unwrap();
        let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
        assert_eq!(header, variable_names());
        let rows: Vec<_> = reader
            .records()
            .collect::<std::result::Result<_, _>>()
            .unwrap();
        assert_eq!(rows.len(), 5);
        let v: f64 = rows[0][0].parse().unwrap();
        assert_eq!(v, batches[1].rows.at2(0, 0));
    }

    #[test]
    fn batches_round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let batches = vec![noise_batch(8, 4), noise_batch(8, 5), noise_batch(3, 6)];
        export_batches(&batches, dir.path()).unwrap();
        let back = import_batches(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in batches.iter().zip(&back) {
            assert_eq!(b.source, BatchSource::External);
            assert_eq!(a.rows.shape(), b.rows.shape());
            for (x, y) in a.rows.data().iter().zip(b.rows.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        // Pooled statistics survive the round trip as well.
        let direct = pearson_matrix(&batches).unwrap();
        let reread = pearson_matrix(&back).unwrap();
        for (x, y) in direct.c.data().iter().zip(reread.c.data()) {
            assert!((x - y).abs() < 1e-9);
        }
        assert!(import_batches(&dir.path().join("missing")).is_err());
    }

    #[test]
    fn relation_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("relation.csv");
        let rel = pearson_matrix(&[noise_batch(300, 3)]).unwrap();
        export_relation(&rel, &path).unwrap();
        let back = import_relation(&path).unwrap();
        assert_eq!(back.kind, RelationKind::ExternalIcd);
        for i in 0..NUM_VARIABLES {
            for j in 0..NUM_VARIABLES {
                assert!((rel.c.at2(i, j) - back.c.at2(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn import_rejects_malformed_matrices() {
        let dir = tempfile::tempdir().unwrap();

        let short_header = dir.path().join("short.csv");
        std::fs::write(&short_header, "a,b,c\n1,2,3\n").unwrap();
        assert!(import_relation(&short_header).is_err());

        let names = variable_names().join(",");
        let wrong_name = dir.path().join("wrongname.csv");
        let mut bad_names = variable_names();
        bad_names[3] = "bogus".into();
        std::fs::write(&wrong_name, format!("{}\n", bad_names.join(","))).unwrap();
        assert!(import_relation(&wrong_name).is_err());

        let short_rows = dir.path().join("shortrows.csv");
        let mut content = format!("{names}\n");
        for _ in 0..29 {
            content.push_str(&vec!["0.1"; NUM_VARIABLES].join(","));
            content.push('\n');
        }
        std::fs::write(&short_rows, &content).unwrap();
        assert!(import_relation(&short_rows).is_err());

        let bad_entry = dir.path().join("badentry.csv");
        let mut content = format!("{names}\n");
        for i in 0..30 {
            let mut row = vec!["0.25".to_string(); NUM_VARIABLES];
            if i == 4 {
                row[9] = "broken".into();
            }
            content.push_str(&row.join(","));
            content.push('\n');
        }
        std::fs::write(&bad_entry, &content).unwrap();
        assert!(import_relation(&bad_entry).is_err());

        let good = dir.path().join("good.csv");
        let mut content = format!("{names}\n");
        for _ in 0..30 {
            content.push_str(&vec!["0.25"; NUM_VARIABLES].join(","));
            content.push('\n');
        }
        std::fs::write(&good, &content).unwrap();
        import_relation(&good).unwrap();
    }
}
