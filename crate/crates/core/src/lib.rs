//! Radiology report generation by content extraction and style injection.
//!
//! A report's clinical content is captured as a RadGraph and serialized to a
//! dense, style-free text ([`serializer`]). A chat LLM then rewrites the
//! serialization in a target radiologist's style from a few in-context
//! examples ([`prompt`], [`llm`]). [`metrics`] and [`harness`] score the
//! generated reports, and [`model_math`] holds the numerical core of the
//! image-to-serialization model.

pub mod graph;
pub mod harness;
pub mod llm;
pub mod metrics;
pub mod model_math;
pub mod prompt;
pub mod serializer;
pub mod text;

pub use graph::{parse_radgraph, validate, weakly_connected_components, RadGraph};
pub use serializer::{serialize, Serialization, SerializerConfig};
