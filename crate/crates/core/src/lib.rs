//! Social-history event extraction: BRAT standoff I/O, the model response
//! codec, prompt construction, completion backends, self-consistency
//! voting with post-processing, and span-level scoring.

pub mod brat;
pub mod codec;
pub mod corpus;
pub mod event;
pub mod gateway;
pub mod manifest;
pub mod pipeline;
pub mod prompt;
pub mod runner;
pub mod samples;
pub mod scorer;

pub use event::{ArgKind, EventKey, LabeledArg, NoteDocument, SdohEvent, SdohType, Span, Split};
