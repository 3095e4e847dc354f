use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{RngState, Tensor};

/// Header of the iris CSV format.
pub const IRIS_HEADER: [&str; 5] = [
    "sepal_length",
    "sepal_width",
    "petal_length",
    "petal_width",
    "label",
];

/// The bundled 150-row iris dataset in the CSV format accepted by [`parse_iris`].
pub const BUNDLED_IRIS_CSV: &str = include_str!("../../data/iris.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    RealValued,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureColumn {
    pub name: String,
    pub kind: ColumnKind,
    pub dimension: usize,
}

impl FeatureColumn {
    pub fn real_valued(name: impl Into<String>, dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::validation("feature column dimension must be at least 1"));
        }
        Ok(FeatureColumn {
            name: name.into(),
            kind: ColumnKind::RealValued,
            dimension,
        })
    }
}

/// Total feature width of a schema, after checking names are unique.
pub fn schema_width(schema: &[FeatureColumn]) -> Result<usize> {
    let mut seen = HashSet::new();
    for c in schema {
        if c.dimension == 0 {
            return Err(Error::validation(format!("column {:?} has dimension 0", c.name)));
        }
        if !seen.insert(c.name.as_str()) {
            return Err(Error::validation(format!("duplicate column name {:?}", c.name)));
        }
    }
    let width: usize = schema.iter().map(|c| c.dimension).sum();
    if width == 0 {
        return Err(Error::validation("schema has no feature columns"));
    }
    Ok(width)
}

/// One `real_valued` column per feature dimension.
pub fn infer_real_valued_columns(features: &Tensor) -> Vec<FeatureColumn> {
    columns_for_width(features.cols()).expect("tensors have at least one column")
}

/// Like [`infer_real_valued_columns`] but from a bare width.
pub fn columns_for_width(width: usize) -> Result<Vec<FeatureColumn>> {
    if width == 0 {
        return Err(Error::validation("cannot infer columns from zero features"));
    }
    (0..width)
        .map(|i| FeatureColumn::real_valued(format!("feature_{i}"), 1))
        .collect()
}

/// Integer class labels or real-valued regression targets.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(v) => v.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, indices: &[usize]) -> Targets {
        match self {
            Targets::Classes(v) => Targets::Classes(indices.iter().map(|&i| v[i]).collect()),
            Targets::Values(v) => Targets::Values(indices.iter().map(|&i| v[i]).collect()),
        }
    }

    pub fn classes(&self) -> Result<&[usize]> {
        match self {
            Targets::Classes(v) => Ok(v),
            Targets::Values(_) => Err(Error::validation("expected class labels, got real-valued targets")),
        }
    }

    /// Targets as an `n×1` tensor (class labels are converted to floats).
    pub fn to_column(&self) -> Result<Tensor> {
        let v: Vec<f64> = match self {
            Targets::Classes(c) => c.iter().map(|&c| c as f64).collect(),
            Targets::Values(v) => v.clone(),
        };
        Tensor::column_vector(v)
    }
}

/// Features, targets and schema. May be empty (zero rows), e.g. a 0% test split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    n_features: usize,
    targets: Targets,
    schema: Vec<FeatureColumn>,
}

impl Dataset {
    pub fn new(features: Tensor, targets: Targets, schema: Vec<FeatureColumn>) -> Result<Self> {
        if features.rows() != targets.len() {
            return Err(Error::shape(
                "dataset",
                format!("{} feature rows but {} targets", features.rows(), targets.len()),
            ));
        }
        let width = schema_width(&schema)?;
        if width != features.cols() {
            return Err(Error::shape(
                "dataset",
                format!("schema width {width} does not match {} feature columns", features.cols()),
            ));
        }
        Ok(Dataset {
            n_features: features.cols(),
            features: features.into_data(),
            targets,
            schema,
        })
    }

    /// Dataset whose schema is inferred from the feature width.
    pub fn from_tensor(features: Tensor, targets: Targets) -> Result<Self> {
        let schema = infer_real_valued_columns(&features);
        Self::new(features, targets, schema)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn schema(&self) -> &[FeatureColumn] {
        &self.schema
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn features(&self) -> Result<Tensor> {
        if self.is_empty() {
            return Err(Error::validation("dataset has no rows"));
        }
        Tensor::new(self.len(), self.n_features, self.features.clone())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            features,
            n_features: self.n_features,
            targets: self.targets.select(indices),
            schema: self.schema.clone(),
        }
    }

    /// Splits into `count` contiguous shards whose sizes differ by at most one.
    pub fn shard(&self, count: usize) -> Result<Vec<Dataset>> {
        if count == 0 || count > self.len() {
            return Err(Error::validation(format!(
                "cannot split {} rows into {count} shards",
                self.len()
            )));
        }
        let (base, extra) = (self.len() / count, self.len() % count);
        let mut start = 0;
        let mut shards = Vec::with_capacity(count);
        for s in 0..count {
            let size = base + usize::from(s < extra);
            let idx: Vec<usize> = (start..start + size).collect();
            shards.push(self.subset(&idx));
            start += size;
        }
        Ok(shards)
    }
}

/// How the last CSV column is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    /// Integer class in `[0, n_classes)`.
    Class { n_classes: usize },
    /// Real-valued regression target.
    Value,
}

fn parse_field(field: &str, line: usize, column: &str) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("column {column:?}: {field:?} is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("column {column:?}: value must be finite"),
        });
    }
    Ok(v)
}

/// Parses a headed CSV whose last column is the label.
///
/// Line numbers in errors are 1-based and count the header as line 1.
pub fn parse_labeled_csv(text: &str, label: LabelKind) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let header: Vec<String> = match lines.by_ref().find(|(_, l)| !l.trim().is_empty()) {
        Some((_, l)) => l.split(',').map(|s| s.trim().to_string()).collect(),
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "no data rows".into(),
            })
        }
    };
    if header.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            message: "header needs at least one feature column and a label column".into(),
        });
    }
    let width = header.len() - 1;
    let mut features = Vec::new();
    let mut classes = Vec::new();
    let mut values = Vec::new();
    for (line, raw) in lines {
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != header.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", header.len(), fields.len()),
            });
        }
        for (f, name) in fields[..width].iter().zip(&header) {
            features.push(parse_field(f, line, name)?);
        }
        let label_field = fields[width].trim();
        match label {
            LabelKind::Class { n_classes } => {
                let c: usize = label_field.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("label {label_field:?} is not a class index"),
                })?;
                if c >= n_classes {
                    return Err(Error::Parse {
                        line,
                        message: format!("label {c} outside [0, {n_classes})"),
                    });
                }
                classes.push(c);
            }
            LabelKind::Value => values.push(parse_field(label_field, line, &header[width])?),
        }
    }
    let n = features.len() / width;
    if n == 0 {
        return Err(Error::Parse {
            line: 1,
            message: "no data rows".into(),
        });
    }
    let targets = match label {
        LabelKind::Class { .. } => Targets::Classes(classes),
        LabelKind::Value => Targets::Values(values),
    };
    let schema = header[..width]
        .iter()
        .map(|name| FeatureColumn::real_valued(name.clone(), 1))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(Tensor::new(n, width, features)?, targets, schema).map_err(|e| match e {
        Error::Validation(m) => Error::Parse { line: 1, message: m },
        other => other,
    })
}

/// Parses a headed CSV of `n_features` feature columns for prediction.
///
/// A trailing label column (header width `n_features + 1`) is accepted and
/// ignored, so labelled files can be fed to `predict` directly.
pub fn parse_feature_csv(text: &str, n_features: usize) -> Result<Tensor> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let header: Vec<String> = match lines.by_ref().find(|(_, l)| !l.trim().is_empty()) {
        Some((_, l)) => l.split(',').map(|s| s.trim().to_string()).collect(),
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "no header".into(),
            })
        }
    };
    if header.len() != n_features && header.len() != n_features + 1 {
        return Err(Error::validation(format!(
            "model expects {n_features} feature columns, CSV has {}",
            header.len()
        )));
    }
    let mut data = Vec::new();
    for (line, raw) in lines {
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != header.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", header.len(), fields.len()),
            });
        }
        for (f, name) in fields[..n_features].iter().zip(&header) {
            data.push(parse_field(f, line, name)?);
        }
    }
    Tensor::new(data.len() / n_features.max(1), n_features, data)
}

/// Parses iris CSV text: a 5-column header, four real features, label in {0,1,2}.
pub fn parse_iris(text: &str) -> Result<Dataset> {
    let header_fields = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .map(|l| l.split(',').count());
    if let Some(n) = header_fields {
        if n != IRIS_HEADER.len() {
            return Err(Error::Parse {
                line: 1,
                message: format!("iris header needs {} columns, found {n}", IRIS_HEADER.len()),
            });
        }
    }
    parse_labeled_csv(text, LabelKind::Class { n_classes: 3 })
}

pub fn load_iris(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_iris(&text)
}

/// The bundled iris dataset.
pub fn bundled_iris() -> Dataset {
    parse_iris(BUNDLED_IRIS_CSV).expect("bundled iris CSV is valid")
}

/// Seeded shuffle, then the last `⌊n·test_fraction⌋` shuffled rows become the test set.
pub fn train_test_split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::validation(format!(
            "test fraction must lie in [0, 1), got {test_fraction}"
        )));
    }
    let n = ds.len();
    let mut order: Vec<usize> = (0..n).collect();
    RngState::new(seed).shuffle(&mut order);
    let n_test = (n as f64 * test_fraction).floor() as usize;
    let (train, test) = order.split_at(n - n_test);
    Ok((ds.subset(train), ds.subset(test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_iris_shape() {
        let ds = bundled_iris();
        assert_eq!(ds.len(), 150);
        assert_eq!(ds.n_features(), 4);
        let classes: HashSet<usize> = ds.targets().classes().unwrap().iter().copied().collect();
        assert_eq!(classes.len(), 3);
        assert_eq!(ds.schema()[0].name, "sepal_length");
    }

    #[test]
    fn short_row_reports_line() {
        let text = "a,b,c,d,label\n1,2,3,4,0\n1,2,3\n";
        match parse_iris(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_has_no_rows() {
        for text in ["", "a,b,c,d,label\n"] {
            let err = parse_iris(text).unwrap_err();
            assert!(err.to_string().contains("no data rows"), "{err}");
        }
    }

    #[test]
    fn label_out_of_range() {
        let err = parse_iris("a,b,c,d,label\n1,2,3,4,3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn crlf_accepted() {
        let ds = parse_iris("a,b,c,d,label\r\n1,2,3,4,1\r\n").unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.row(0), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(load_iris("/nonexistent/iris.csv"), Err(Error::Io { .. })));
    }

    #[test]
    fn infer_columns() {
        let cols = infer_real_valued_columns(&Tensor::zeros(150, 4));
        assert_eq!(cols.len(), 4);
        assert_eq!(cols[3].name, "feature_3");
        let one = infer_real_valued_columns(&Tensor::zeros(10, 1));
        assert_eq!(one, vec![FeatureColumn::real_valued("feature_0", 1).unwrap()]);
        assert_eq!(one, infer_real_valued_columns(&Tensor::zeros(10, 1)));
        assert!(columns_for_width(0).is_err());
    }

    #[test]
    fn split_sizes_and_partition() {
        let ds = bundled_iris();
        let (train, test) = train_test_split(&ds, 0.2, 42).unwrap();
        assert_eq!((train.len(), test.len()), (120, 30));
        let (train2, test2) = train_test_split(&ds, 0.2, 42).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
        let (all, none) = train_test_split(&ds, 0.0, 42).unwrap();
        assert_eq!((all.len(), none.len()), (150, 0));
        assert!(train_test_split(&ds, 1.0, 0).is_err());
        assert!(train_test_split(&ds, -0.1, 0).is_err());
    }

    #[test]
    fn shards_are_contiguous() {
        let ds = bundled_iris();
        let shards = ds.shard(2).unwrap();
        assert_eq!(shards[0].len(), 75);
        assert_eq!(shards[1].row(0), ds.row(75));
        assert!(ds.shard(0).is_err());
    }

    #[test]
    fn dataset_rejects_mismatch() {
        assert!(Dataset::from_tensor(Tensor::zeros(3, 2), Targets::Classes(vec![0, 1])).is_err());
        let dup = vec![
            FeatureColumn::real_valued("x", 1).unwrap(),
            FeatureColumn::real_valued("x", 1).unwrap(),
        ];
        assert!(Dataset::new(Tensor::zeros(1, 2), Targets::Values(vec![0.0]), dup).is_err());
    }

    #[test]
    fn feature_csv_accepts_optional_label_column() {
        let x = parse_feature_csv("a,b\n1,2\n3,4\n", 2).unwrap();
        assert_eq!(x.data(), &[1.0, 2.0, 3.0, 4.0]);
        let y = parse_feature_csv("a,b,label\n1,2,0\n", 2).unwrap();
        assert_eq!((y.rows(), y.cols()), (1, 2));
        let err = parse_feature_csv("a,b,c,d,e\n1,2,3,4,5\n", 2).unwrap_err();
        assert!(err.to_string().contains("2 feature columns, CSV has 5"));
        let err = parse_feature_csv("a,b\n1,2\n3\n", 2).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }
}
