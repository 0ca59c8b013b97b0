//! Periodic profile agent.
//!
//! The agent visits every proxy once per tour, sums their request counts,
//! ranks videos into popularity tiers and writes the resulting weight table
//! back to each proxy and the central server. A tour is applied atomically.

use std::fmt::Write as _;

use thiserror::Error;

use crate::model::{retier_by_rank, DemandProfile, PopularityTier, WeightProfile};
use crate::topology::World;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("agent period must be positive, got {0}")]
    BadPeriod(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentTourReport {
    pub tour_time: f64,
    pub visited_order: Vec<usize>,
    pub global_counts: DemandProfile,
    pub new_tiers: Vec<PopularityTier>,
    pub tier_changes: usize,
}

impl AgentTourReport {
    pub fn total_requests(&self) -> u64 {
        self.global_counts.grand_total()
    }
}

/// Runs one tour over `world` at time `now`.
pub fn agent_tour(world: &mut World, now: f64) -> AgentTourReport {
    let nov = world.catalog().len();
    let mut global = DemandProfile::new(nov);
    let visited_order: Vec<usize> = (0..world.proxy_count()).collect();
    for &ps in &visited_order {
        global.accumulate(&world.proxies[ps].local_counts);
    }

    let weights = WeightProfile::from_counts(&global, &world.profits);
    for proxy in &mut world.proxies {
        proxy.global_weights = weights.clone();
    }
    let new_tiers = retier_by_rank(&global, nov).expect("catalog size validated at load");
    let tier_changes = world.cms.catalog.set_tiers(&new_tiers);
    world.cms.global_counts = global.clone();

    AgentTourReport {
        tour_time: now,
        visited_order,
        global_counts: global,
        new_tiers,
        tier_changes,
    }
}

/// Time of the tour after one at `now`.
pub fn schedule_next_tour(now: f64, period: f64) -> Result<f64, AgentError> {
    if period.is_nan() || period <= 0.0 {
        return Err(AgentError::BadPeriod(period));
    }
    Ok(now + period)
}

pub const AUDIT_HEADER: &str = "time,total_requests,tier_changes";

/// One audit row per tour.
pub fn audit_log(reports: &[AgentTourReport]) -> String {
    let mut out = format!("{AUDIT_HEADER}\n");
    for r in reports {
        let _ = writeln!(out, "{:.6},{},{}", r.tour_time, r.total_requests(), r.tier_changes);
    }
    out
}
