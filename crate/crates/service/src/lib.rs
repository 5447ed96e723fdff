//! Interactive labelling service.
//!
//! A [`Session`] holds one corpus with its vocabulary, observation store,
//! factor model and label definitions. [`LiveSession`] shares it between
//! request handlers and a background training worker, and [`http::router`]
//! exposes it as a JSON API. The batch CLI drives a [`Session`] directly and
//! writes the same on-disk format, so a batch-trained session can be served.

pub mod config;
pub mod error;
pub mod http;
pub mod live;
pub mod log;
pub mod session;
pub mod snapshot;

pub use config::ServiceConfig;
pub use error::{Result, ServiceError};
pub use live::{AnnotationAck, LiveSession, Status};
pub use log::{AnnotationEvent, AnnotationLog};
pub use session::{ImportSummary, Progress, Session};
pub use snapshot::{parse_annotation_csv, LabelDef, Snapshot, TextScores, TopTexts, TrainingState};
