//! Scenario scripts: the two-network mobility timeline with an overlapping
//! region, and churn schedules that add or remove overlay nodes over time.

use thiserror::Error;

use crate::simnet::SimTime;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScriptError {
    #[error("mobility phases out of order: require enter < switch < leave")]
    PhaseOrder,
    #[error("mobility script must use two distinct networks")]
    SameNetwork,
    #[error("churn schedule would drop the ring population below 1")]
    RingUnderflow,
}

/// The three scripted instants of a move between two overlapping networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MobilityScript {
    pub t_enter_overlap: SimTime,
    pub t_switch: SimTime,
    pub t_leave_overlap: SimTime,
    pub network1_id: u16,
    pub network2_id: u16,
}

impl MobilityScript {
    pub fn validate(&self) -> Result<(), ScriptError> {
        if !(self.t_enter_overlap < self.t_switch && self.t_switch < self.t_leave_overlap) {
            return Err(ScriptError::PhaseOrder);
        }
        if self.network1_id == self.network2_id {
            return Err(ScriptError::SameNetwork);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChurnAction {
    AddNodes(usize),
    RemoveNodes { count: usize, graceful: bool },
}

/// Timed churn steps applied to the overlay population.
#[derive(Debug, Clone, Default)]
pub struct ChurnSchedule {
    pub steps: Vec<(SimTime, ChurnAction)>,
}

impl ChurnSchedule {
    /// Checks that the scheduled population, starting from `initial`, never
    /// drops below one node.
    pub fn validate(&self, initial: usize) -> Result<(), ScriptError> {
        let mut population = initial as i64;
        let mut steps = self.steps.clone();
        steps.sort_by_key(|(t, _)| *t);
        for (_, action) in steps {
            match action {
                ChurnAction::AddNodes(n) => population += n as i64,
                ChurnAction::RemoveNodes { count, .. } => population -= count as i64,
            }
            if population < 1 {
                return Err(ScriptError::RingUnderflow);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mobility_phase_order_enforced() {
        let script = MobilityScript {
            t_enter_overlap: SimTime(30_000),
            t_switch: SimTime(20_000),
            t_leave_overlap: SimTime(40_000),
            network1_id: 1,
            network2_id: 2,
        };
        assert_eq!(script.validate(), Err(ScriptError::PhaseOrder));
    }

    #[test]
    fn mobility_requires_distinct_networks() {
        let script = MobilityScript {
            t_enter_overlap: SimTime(10),
            t_switch: SimTime(20),
            t_leave_overlap: SimTime(30),
            network1_id: 1,
            network2_id: 1,
        };
        assert_eq!(script.validate(), Err(ScriptError::SameNetwork));
    }

    #[test]
    fn churn_cannot_empty_the_ring() {
        let schedule = ChurnSchedule {
            steps: vec![(SimTime(5), ChurnAction::RemoveNodes { count: 4, graceful: false })],
        };
        assert_eq!(schedule.validate(4), Err(ScriptError::RingUnderflow));
        assert!(schedule.validate(5).is_ok());
    }
}
