//! Metapolicy layer: state construction, baseline selection policies, QoS
//! utilities and the offline dataset.

pub mod collect;
pub mod dataset;
pub mod policy;
pub mod state;
pub mod utility;

pub use collect::{collect, CollectSpec};
pub use dataset::{dataset_stats, Dataset, DatasetStats, Record, Transition};
pub use policy::{
    DecisionContext, ExploreExploitPolicy, FixedPolicy, Metapolicy, RandomPolicy, RuleKind,
    RulePolicy, WindowContext,
};
pub use state::{build_state, MetaState, ACTION_HISTORY, STATE_DIM, WINDOW_HISTORY};
pub use utility::Utility;
