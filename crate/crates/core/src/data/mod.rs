//! Datasets, feature columns, mini-batching and asynchronous batch feeding.
//!
//! Supported sources are in-memory tensors and headed CSV files (the iris
//! format being one instance). Other readers can build a [`Dataset`] through
//! [`Dataset::new`].

mod batch;
mod dataset;
mod queue;

pub use batch::{batch_iterator, Batch, BatchIterator};
pub use dataset::{
    bundled_iris, columns_for_width, infer_real_valued_columns, load_iris, parse_feature_csv, parse_iris, parse_labeled_csv,
    schema_width, train_test_split, ColumnKind, Dataset, FeatureColumn, LabelKind, Targets, BUNDLED_IRIS_CSV,
    IRIS_HEADER,
};
pub use queue::{start_feeding, start_feeding_from, DequeueError, Feeder, FeedingQueue, QueueClosed};
