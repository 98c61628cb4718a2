//! Independent reference implementations, shared with the acceptance run.
#![allow(dead_code)]

pub mod goal_update;
pub mod lp;
pub mod theta;
