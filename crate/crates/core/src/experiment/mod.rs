//! Three-arm test harness and the rank statistics used to read it.

mod online;
mod rank_tests;

pub use online::{
    manual_baseline, run_online_test, uplift, uplift_report, ArmSummary, OnlineTest, OnlineTestConfig, PolicyArm,
    TestReport, UpliftRow, FULL_OPTIMIZATION, MANUAL, SUPPLY_SIDE,
};
pub use rank_tests::{jarque_bera, kruskal_wallis, mann_whitney_u, KruskalWallis, MannWhitney, Normality, EXACT_LIMIT};
