//! Multimodal client populations: synthetic generation, CSV ingestion,
//! zero-imputed early-fusion layout, and modality-dropout augmentation.

pub mod augment;
pub mod csv_io;
pub mod generate;
pub mod types;

pub use augment::{modality_dropout, noise_only, sample_retain_set};
pub use csv_io::{export_csv, export_csv_file, ingest_csv, ingest_csv_reader, CsvModality, CsvSchema};
pub use generate::{generate_population, PopulationConfig, SignalConfig, SpeedConfig};
pub use types::{stack_samples, ClientProfile, ModalityLayout, ModalitySpec, MultimodalSample, Population};
