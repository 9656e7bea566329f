//! Verification machinery: manufactured solutions, a brute-force one-step
//! oracle and refinement studies.

pub mod mms;
pub mod oracle;
pub mod study;

pub use mms::{build_mms_case, Jet, ManufacturedCase, Profile, UnknownCase};
pub use oracle::{oracle_step, oracle_step_check, random_two_triangle_scenario, OracleError, ORACLE_MAX_NODES};
pub use study::{
    cauchy_difference, cauchy_study, convergence_study, fit_order, mms_error, mms_study, strictly_decreasing, Axis,
    MmsPlan, MmsReport, Prolongation, RateRow, RateTable, StudyCell, StudyError,
    SPATIAL_ORDER_MIN, TEMPORAL_ORDER_MIN,
};
