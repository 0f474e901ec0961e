//! Bot detection for GitHub repositories based on commenting activity.
//!
//! The pipeline retrieves issue and pull-request comments, groups them per
//! contributor, clusters each contributor's comments into patterns, and feeds
//! the resulting features to a small decision tree. Predictions are persisted
//! as CSV, can be rectified by an operator, and are aggregated per repository.

pub mod classifier;
pub mod cli;
pub mod corpus;
pub mod features;
pub mod github_fetcher;
pub mod review_service;
pub mod store_report;

mod fsutil;

pub use classifier::{default_model, predict, train_tree, TrainParams, TrainedModel, TypedPrediction};
pub use corpus::{build_profiles, normalize_comment, read_activity_csv, write_activity_csv, ContributorProfile};
pub use features::{cluster_patterns, comment_distance, extract_features, gini_inequality, FeatureVector, PatternPartition};
pub use github_fetcher::{fetch_comments, plan_throttle, ActivityComment, ActivityKind, FetchWindow, RepoRef, ThrottleDecision};
pub use store_report::{PredictionRecord, RepoSummary};

/// Binary contributor type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Bot,
    Human,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Bot => "bot",
            Label::Human => "human",
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        match s {
            "bot" => Some(Label::Bot),
            "human" => Some(Label::Human),
            _ => None,
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
