use serde::{Deserialize, Serialize};

use super::cluster::ControllerConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControllerAction {
    DropOne,
    AddOne,
    Hold,
}

/// What the controller can observe about one node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControllerView {
    pub k: usize,
    pub buffer_len: usize,
    pub buffer_capacity: usize,
    /// Start of the current stretch with an empty buffer and no rejected
    /// requests waiting; `None` while anything is queued.
    pub empty_since_ms: Option<f64>,
    pub idle_groups: usize,
    pub occupied_groups: usize,
}

/// Drop the last student when the buffer is full; add one back once the
/// buffer has stayed empty for the idle window and the students sitting in
/// idle groups outnumber the groups in use.
pub fn controller_tick(cfg: &ControllerConfig, view: &ControllerView, now_ms: f64) -> ControllerAction {
    if !cfg.adaptive {
        return ControllerAction::Hold;
    }
    if view.buffer_len >= view.buffer_capacity && view.k > cfg.min_students {
        return ControllerAction::DropOne;
    }
    let idle_long_enough = view
        .empty_since_ms
        .is_some_and(|t| now_ms - t >= cfg.idle_window_ms);
    if idle_long_enough && view.k < cfg.max_students && view.idle_groups * view.k > view.occupied_groups {
        return ControllerAction::AddOne;
    }
    ControllerAction::Hold
}
