//! The KAM iteration: schedules, homological solves, flows, remainder
//! transport and the composed transform.

pub mod chain;
pub mod engine;
pub mod flow;
pub mod homological;
pub mod normal_form;
pub mod remainder;
pub mod schedule;

pub use chain::{StepMapStats, TransformChain, TransformStep};
pub use engine::{kam_run, EngineOptions, IterationState, KamEngine, KamRun, StepRecord};
pub use flow::{flow_transform, FlowMode, GeneratorSeries};
pub use homological::{solve_homological, truncate, DivisorHit, DivisorKind, HomologicalSolution};
pub use normal_form::{update_normal_form, MuRecord, NormalForm};
pub use schedule::{build_schedule, Schedule};
