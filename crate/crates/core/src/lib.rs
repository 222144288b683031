//! Chain-rule mining, augmentation, scoring and rule-based link prediction
//! over knowledge graphs.

pub mod adam;
pub mod augment;
pub mod checkpoint;
pub mod csr;
pub mod error;
pub mod eval;
pub mod kg;
pub mod metrics;
pub mod paths;
pub mod pipeline;
pub mod predictor;
pub mod rng;
pub mod rotate;
pub mod rule;
pub mod synthetic;
pub mod walk;

pub use error::{Error, Result};
pub use kg::{EntityId, KnowledgeGraph, RawTriple, RelationId, Split, Triple};
pub use rule::{Origin, Rule, RuleSet};
