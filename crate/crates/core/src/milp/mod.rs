//! Exact mixed-integer encoding of ReLU networks and radius verification.

mod bnb;
mod bounds;
mod lp;
mod model;
mod unitnet;
mod verify;

pub use bnb::{branch_and_bound, BnbConfig, BnbResult, BnbStatus, Incumbent};
pub use bounds::{propagate_bounds, propagate_with, Fix, NeuronBounds};
pub use lp::{solve_lp, Lp, LpSolution, LpStatus, Row, Sense, Simplex, FEAS_TOL, PIVOT_TOL};
pub use model::{Affine, Encoding, MilpModel, ModelSpec, Objective, Threshold};
pub use unitnet::UnitBoxNet;
pub use verify::{
    check_forward_consistency, check_forward_consistency_with, linf, predicted_class, unit_corners,
    verify_anchor, verify_corner, CertStatus, Certificate, Side, VerifyConfig,
};
