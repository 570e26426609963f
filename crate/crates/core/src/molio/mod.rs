//! Molecular graphs, SMILES I/O, featurization, ring statistics and CSV datasets.

mod dataset;
pub mod elements;
mod featurize;
mod graph;
mod rings;
mod smiles;

pub use dataset::{
    detect_task_columns, detect_task_columns_in, load_csv, read_csv, DatasetError, LabeledDataset,
    Record,
};
pub use featurize::{featurize, FeatureGraph};
pub use graph::{Atom, Bond, BondDirection, BondType, Chirality, GraphError, MolecularGraph};
pub use rings::{cyclomatic_number, ring_counts, sssr};
pub use smiles::{parse_smiles, write_smiles, SmilesError};
