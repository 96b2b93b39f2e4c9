//! Burgers-turbulence closure dataset pipeline.

pub mod dataset;
pub mod dns;
pub mod filter;
pub mod io;
pub mod spectral;

pub use dataset::{build_dataset, extract_samples, Built, DatasetConfig, FinalTimes, Normalizer, SamplingStrategy, Schedule, Splits, TargetKind};
pub use dns::{burgers_dns, Dns, DnsConfig, DnsField, InitialCondition, Snapshot};
pub use filter::{ClosureOperator, Filter, FilterSpec};
pub use io::{content_id, generate, Dataset, DatasetHeader, Sidecar, Split, TimeSpan};
pub use spectral::{Flux, Spectral};
