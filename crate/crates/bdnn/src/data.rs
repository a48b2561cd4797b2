//! Dataset generation, CSV ingestion and splitting.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Random classification data in three blocks: one third with coordinates in
/// `[0, 10]` labeled 1, one third in `[-10, 0]` labeled 0, and the remaining
/// points in `[-1, 1]` with random labels. The first two blocks hold
/// `round(m/3)` points each; the remainder goes to the noise block.
pub fn generate_random(n: usize, m: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidDataset("need n >= 1 and m >= 1".into()));
    }
    let third = (m as f64 / 3.0).round() as usize;
    let b1 = third.min(m);
    let b2 = third.min(m - b1);
    let b3 = m - b1 - b2;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(m);
    let mut labels = Vec::with_capacity(m);
    for _ in 0..b1 {
        points.push((0..n).map(|_| rng.gen_range(0.0..=10.0)).collect());
        labels.push(1);
    }
    for _ in 0..b2 {
        points.push((0..n).map(|_| rng.gen_range(-10.0..=0.0)).collect());
        labels.push(0);
    }
    for _ in 0..b3 {
        points.push((0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect());
        labels.push(rng.gen_range(0..=1) as u8);
    }
    Dataset::new(points, labels)
}

/// Sizes of the three generator blocks for a given `m`.
pub fn block_sizes(m: usize) -> (usize, usize, usize) {
    let third = (m as f64 / 3.0).round() as usize;
    let b1 = third.min(m);
    let b2 = third.min(m - b1);
    (b1, b2, m - b1 - b2)
}

/// Loads a headered CSV of numeric features plus a 0/1 label column.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_path(path)?;
    let headers = reader.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::DataFile(format!("no column named `{label_column}`")))?;
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let mut point = Vec::with_capacity(record.len().saturating_sub(1));
        for (col, cell) in record.iter().enumerate() {
            if col == label_idx {
                labels.push(match cell.trim() {
                    "0" => 0,
                    "1" => 1,
                    other => {
                        return Err(Error::DataFile(format!(
                            "row {}: label `{other}` is not 0/1",
                            row + 2
                        )))
                    }
                });
            } else {
                let value: f64 = cell.trim().parse().map_err(|_| {
                    Error::DataFile(format!(
                        "row {}, column `{}`: `{cell}` is not numeric",
                        row + 2,
                        headers.get(col).unwrap_or("?")
                    ))
                })?;
                point.push(value);
            }
        }
        points.push(point);
    }
    Dataset::new(points, labels)
}

/// Writes a dataset as CSV with feature columns `x0..` and a `label` column.
pub fn write_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    let mut header: Vec<String> = (0..data.dim()).map(|i| format!("x{i}")).collect();
    header.push("label".to_string());
    writer.write_record(&header)?;
    for (x, y) in data.iter() {
        let mut row: Vec<String> = x.iter().map(|v| format!("{v}")).collect();
        row.push(format!("{y}"));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Load report for the Breast Cancer Wisconsin file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BcwReport {
    pub total_rows: usize,
    pub dropped_missing: usize,
    pub kept_rows: usize,
}

/// Loads the original Breast Cancer Wisconsin layout: no header, comma
/// separated, `id, 9 features, class` with class 2 (benign) or 4 (malignant)
/// and `?` marking missing values. The id column is dropped, class 2 maps to
/// label 0 and class 4 to label 1, and rows containing `?` are dropped.
pub fn load_bcw(path: impl AsRef<Path>) -> Result<(Dataset, BcwReport)> {
    let mut reader =
        csv::ReaderBuilder::new().has_headers(false).flexible(false).from_path(path.as_ref())?;
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut total_rows = 0usize;
    let mut dropped = 0usize;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != 11 {
            return Err(Error::DataFile(format!(
                "row {}: expected 11 fields (id, 9 attributes, class), got {}",
                row + 1,
                record.len()
            )));
        }
        total_rows += 1;
        if record.iter().any(|c| c.trim() == "?") {
            dropped += 1;
            continue;
        }
        let mut point = Vec::with_capacity(9);
        for cell in record.iter().skip(1).take(9) {
            point.push(cell.trim().parse::<f64>().map_err(|_| {
                Error::DataFile(format!("row {}: `{cell}` is not numeric", row + 1))
            })?);
        }
        let label = match record.get(10).map(str::trim) {
            Some("2") => 0,
            Some("4") => 1,
            other => {
                return Err(Error::DataFile(format!(
                    "row {}: class `{}` is neither 2 nor 4",
                    row + 1,
                    other.unwrap_or("")
                )))
            }
        };
        points.push(point);
        labels.push(label);
    }
    let report = BcwReport { total_rows, dropped_missing: dropped, kept_rows: points.len() };
    Ok((Dataset::new(points, labels)?, report))
}

/// Splits into train/test by a seeded permutation followed by a prefix/suffix
/// cut; the training side takes the ceiling.
pub fn train_test_split(
    data: &Dataset,
    test_fraction: f64,
    seed: u64,
    shuffle: bool,
) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&test_fraction) || test_fraction == 0.0 {
        return Err(Error::InvalidDataset("test fraction must be in (0, 1)".into()));
    }
    let m = data.len();
    let mut idx: Vec<usize> = (0..m).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Fisher-Yates, explicit for stability across dependency upgrades.
        for i in (1..m).rev() {
            let j = rng.gen_range(0..=i);
            idx.swap(i, j);
        }
    }
    let train_size = ((m as f64) * (1.0 - test_fraction)).ceil() as usize;
    if train_size == 0 || train_size == m {
        return Err(Error::InvalidDataset(format!(
            "split of {m} points with fraction {test_fraction} leaves an empty side"
        )));
    }
    let train = data.select(&idx[..train_size])?;
    let test = data.select(&idx[train_size..])?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_structure_for_m200() {
        assert_eq!(block_sizes(200), (67, 67, 66));
        let d = generate_random(5, 200, 1).unwrap();
        assert_eq!(d.len(), 200);
        for i in 0..67 {
            assert_eq!(d.label(i), 1);
            assert!(d.point(i).iter().all(|&v| (0.0..=10.0).contains(&v)));
        }
        for i in 67..134 {
            assert_eq!(d.label(i), 0);
            assert!(d.point(i).iter().all(|&v| (-10.0..=0.0).contains(&v)));
        }
        for i in 134..200 {
            assert!(d.point(i).iter().all(|&v| (-1.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn generator_is_seed_deterministic() {
        let a = generate_random(7, 30, 42).unwrap();
        let b = generate_random(7, 30, 42).unwrap();
        let c = generate_random(7, 30, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn split_sizes_and_partition() {
        let d = generate_random(3, 200, 5).unwrap();
        let (train, test) = train_test_split(&d, 0.2, 9, true).unwrap();
        assert_eq!((train.len(), test.len()), (160, 40));
        // Partition: counts per (rounded) point match the original.
        let key = |p: &[f64]| format!("{p:?}");
        let mut seen: std::collections::HashMap<String, i32> = Default::default();
        for p in d.points() {
            *seen.entry(key(p)).or_default() += 1;
        }
        for p in train.points().iter().chain(test.points()) {
            *seen.entry(key(p)).or_default() -= 1;
        }
        assert!(seen.values().all(|&v| v == 0));
    }

    #[test]
    fn split_rounding_policy() {
        let d = Dataset::new(vec![vec![1.0], vec![2.0], vec![3.0]], vec![0, 1, 0]).unwrap();
        let (train, test) = train_test_split(&d, 0.5, 0, false).unwrap();
        assert_eq!((train.len(), test.len()), (2, 1));
    }

    #[test]
    fn split_is_seed_deterministic() {
        let d = generate_random(2, 50, 11).unwrap();
        let (a_train, a_test) = train_test_split(&d, 0.2, 3, true).unwrap();
        let (b_train, b_test) = train_test_split(&d, 0.2, 3, true).unwrap();
        assert_eq!(a_train, b_train);
        assert_eq!(a_test, b_test);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let d = generate_random(3, 9, 2).unwrap();
        write_csv(&d, &path).unwrap();
        let back = load_csv(&path, "label").unwrap();
        assert_eq!(back.len(), 9);
        assert_eq!(back.labels(), d.labels());

        std::fs::write(&path, "x0,x1,label\n1.0,2.0,1\n3.0,oops,0\n").unwrap();
        let err = load_csv(&path, "label").unwrap_err();
        assert!(matches!(err, Error::DataFile(_)), "{err}");

        std::fs::write(&path, "x0,label\n1.0,2\n").unwrap();
        assert!(load_csv(&path, "label").is_err());

        std::fs::write(&path, "x0,label\n1.0,?\n").unwrap();
        assert!(load_csv(&path, "label").is_err());
    }

    #[test]
    fn bcw_layout_mapping_and_missing_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bcw.data");
        std::fs::write(
            &path,
            "1000025,5,1,1,1,2,1,3,1,1,2\n\
             1002945,5,4,4,5,7,10,3,2,1,2\n\
             1057013,8,4,5,1,2,?,7,3,1,4\n\
             1016277,6,8,8,1,3,4,3,7,1,2\n\
             1017122,8,10,10,8,7,10,9,7,1,4\n",
        )
        .unwrap();
        let (data, report) = load_bcw(&path).unwrap();
        assert_eq!(report, BcwReport { total_rows: 5, dropped_missing: 1, kept_rows: 4 });
        assert_eq!(data.dim(), 9);
        assert_eq!(data.labels(), &[0, 0, 0, 1]);
        assert_eq!(data.point(0)[0], 5.0);
    }
}
