//! Offline/online driver: configuration, on-disk store, and the commands
//! behind the CLI verbs.

pub mod config;
pub mod manifest;
pub mod model;
pub mod offline;
pub mod online;
pub mod report;
pub mod store;

pub use config::RunConfig;
pub use manifest::{Store, StoreManifest, StoreStatus};
pub use model::ParametricFom;
pub use offline::{cmd_offline, OfflineOutcome, OfflineSummary};
pub use online::{cmd_eval, EvalRecord, Evaluation, Method, OnlineModels};
pub use report::{cmd_report, Report, ReportRow};
