//! From packets and CSV files to flow attribute matrices.

pub mod csv_io;
pub mod fam;
pub mod features;
pub mod flow;
pub mod packet;
pub mod split;
pub mod synth;

pub use csv_io::{load_csv, write_fam_csv, CsvOptions, LoadReport};
pub use fam::{normalize, strip_labels, Fam, NormalizationStats};
pub use features::{
    compute_features, FeatureSchema, FlowFeatureVector, DEFAULT_SCHEMA_ID, DEFAULT_WIDTH,
};
pub use flow::{
    assemble_flows, Direction, Flow, FlowAssembly, FlowKey, FlowPacket, DEFAULT_IDLE_TIMEOUT,
};
pub use packet::{parse_packet_log, PacketEvent, PacketLog, Protocol};
pub use split::split;
