//! Few-shot visual inspection harness.
//!
//! The pipeline picks in-context example images for a query image, builds a
//! multimodal inspection prompt, sends it to a vision-language model, parses
//! the answer into a defect verdict and scores verdicts with F1, MCC and
//! pixel-level AUROC.
//!
//! ```text
//! corpus ──► selector ──► prompting ──► gateway ──► verdict ──► metrics
//!    ▲           ▲                                                 │
//!    └── embedding store                             runner (reports, overlays)
//! ```

pub mod corpus;
pub mod embedding;
pub mod gateway;
pub mod metrics;
pub mod overlay;
pub mod prompting;
pub mod report;
pub mod rng;
pub mod runner;
pub mod selector;
pub mod verdict;

pub use corpus::{Answer, BBox, Corpus, ImageRecord, Label, Split, VqaRecord};
pub use embedding::EmbeddingStore;
pub use metrics::{ConfusionCounts, MetricReport, MetricValue};
pub use prompting::PromptBundle;
pub use selector::{SelectionResult, ShotPlan, Strategy};
pub use verdict::{ErrorPolicy, InspectionVerdict};
