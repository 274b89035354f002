//! Shared fixtures for the criterion benches.

use lbmcf_core::{build_finite_data, GraphFlowState, Result, ScenarioConfig};

/// Initial state of the finite-time scenario on `n` nodes.
pub fn finite_state(n: usize) -> Result<GraphFlowState> {
    let mut cfg = ScenarioConfig::finite();
    cfg.grid = Some(n);
    Ok(build_finite_data(&cfg)?.state)
}
