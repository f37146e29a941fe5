//! Repeated social-dilemma experiments and behavioural strategy inference.
//!
//! The crate is organised the way an experiment flows:
//!
//! - [`game`]: payoff-scaled Prisoner's Dilemma, the N-player Public Goods Game,
//!   and the round loop that produces [`game::Trajectory`] logs.
//! - [`agents`]: canonical noisy strategies, prompt templates and LLM-backed agents.
//! - [`llm`]: chat-completion HTTP client with retry, backoff and rate limiting,
//!   plus scripted clients for offline runs.
//! - [`encoding`]: state-action token encoding of trajectories and one-hot features.
//! - [`intent`]: synthetic data generation, the classifier suite, confidence
//!   filtering and rule-based matching.
//! - [`analysis`]: aggregate metrics and CSV/JSON/SVG reports.
//! - [`experiment`]: declarative configuration, instance enumeration and the
//!   staged pipeline driven by the `repgame` binary.

pub mod agents;
pub mod analysis;
pub mod encoding;
pub mod experiment;
pub mod game;
pub mod intent;
pub mod llm;

mod util;

pub use game::{Action, GameKind, PayoffMatrix2, PggParams, Trajectory};
