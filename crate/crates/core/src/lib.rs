//! Knowledge-graph retrieval augmented multimodal prediction over EHR data.

pub mod ehr;
pub mod fusion;
pub mod gateway;
pub mod kg;
pub mod note_entities;
pub mod prompt;
pub mod summarizer;
pub mod train;
pub mod ts_entities;
