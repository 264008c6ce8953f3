//! Screenshot-based GUI understanding and step-by-step task automation.
//!
//! A screenshot is perceived into widgets and text, grouped into labelled
//! elements, divided into blocks, and rendered as plain-text semantics a
//! language model can act on. Replies are parsed into device gestures.

pub mod blocking;
pub mod config;
pub mod executor;
pub mod grouping;
pub mod llm;
pub mod pbd;
pub mod perception;
pub mod planner;
pub mod serialize;
pub mod simdevice;
pub mod understand;

pub use config::Config;
pub use perception::{BBox, Perception};
pub use serialize::ScreenSemantics;
