//! A small procedural indoor world: scenes, templated episodes, symbolic
//! observations and rule-based instruction followers.

pub mod episode;
pub mod observe;
pub mod policy;
pub mod scene;

pub use episode::{generate_corpus, generate_episode, CorpusConfig};
pub use observe::{observe, ObserveConfig};
pub use policy::{follow, FollowConfig, LiteralFollower, OracleFollower, Policy};
pub use scene::{generate_scene, Scene};
