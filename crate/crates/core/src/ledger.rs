//! Byte accounting for the buffers the engine registers explicitly.
//!
//! The ledger never hooks the system allocator. Every large buffer (graph
//! arrays, feature matrices, message buffers, edge coefficients) is charged
//! on allocation and credited on release, so peak usage and budget failures
//! are deterministic and identical on every platform.

use std::fmt;
use std::io::{self, Write};

use thiserror::Error;

/// Allocation refused because it would push the ledger past its budget.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("budget exceeded allocating {requested} bytes for `{label}` ({current} in use, budget {budget})")]
pub struct BudgetExceeded {
    pub requested: u64,
    pub current: u64,
    pub budget: u64,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Alloc,
    Free,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerEvent {
    pub kind: EventKind,
    pub bytes: u64,
    pub label: String,
}

impl fmt::Display for LedgerEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            EventKind::Alloc => "alloc",
            EventKind::Free => "free",
        };
        write!(f, "{} {} {}", kind, self.bytes, self.label)
    }
}

/// Current and peak tracked bytes, with an optional hard budget.
#[derive(Debug, Clone, Default)]
pub struct MemoryLedger {
    current: u64,
    peak: u64,
    budget: Option<u64>,
    events: Option<Vec<LedgerEvent>>,
    // open windows, innermost last: (baseline, highest `current` since open)
    windows: Vec<(u64, u64)>,
}

impl MemoryLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_budget(budget_bytes: u64) -> Self {
        Self {
            budget: Some(budget_bytes),
            ..Self::default()
        }
    }

    pub fn with_optional_budget(budget_bytes: Option<u64>) -> Self {
        Self {
            budget: budget_bytes,
            ..Self::default()
        }
    }

    /// Starts recording every alloc/free into the event log.
    pub fn record_events(mut self) -> Self {
        self.events = Some(Vec::new());
        self
    }

    pub fn current_bytes(&self) -> u64 {
        self.current
    }

    pub fn peak_bytes(&self) -> u64 {
        self.peak
    }

    pub fn budget_bytes(&self) -> Option<u64> {
        self.budget
    }

    pub fn events(&self) -> &[LedgerEvent] {
        self.events.as_deref().unwrap_or(&[])
    }

    /// Charges `bytes` to the ledger. On refusal the ledger is unchanged.
    pub fn track_alloc(&mut self, bytes: u64, label: &str) -> Result<(), BudgetExceeded> {
        let next = self.current.checked_add(bytes);
        if let Some(budget) = self.budget {
            if next.is_none_or(|n| n > budget) {
                return Err(BudgetExceeded {
                    requested: bytes,
                    current: self.current,
                    budget,
                    label: label.to_owned(),
                });
            }
        }
        let next = next.expect("tracked bytes overflow u64");
        self.current = next;
        self.peak = self.peak.max(next);
        for (_, high) in &mut self.windows {
            *high = (*high).max(next);
        }
        self.log(EventKind::Alloc, bytes, label);
        Ok(())
    }

    /// Credits `bytes` back. Freeing more than is currently charged is a
    /// logic error in the caller.
    pub fn track_free(&mut self, bytes: u64, label: &str) {
        assert!(
            bytes <= self.current,
            "ledger underflow: freeing {bytes} bytes for `{label}` with only {} in use",
            self.current
        );
        self.current -= bytes;
        self.log(EventKind::Free, bytes, label);
    }

    /// Opens a measurement window at the current level. Windows nest.
    pub fn open_window(&mut self) {
        self.windows.push((self.current, self.current));
    }

    /// Closes the innermost window and returns the highest number of bytes
    /// held above the level at which it was opened.
    pub fn close_window(&mut self) -> u64 {
        let (base, high) = self.windows.pop().expect("no ledger window open");
        high.saturating_sub(base)
    }

    /// Frees everything charged above `level`; used to unwind a failed
    /// run back to where it started.
    pub fn release_to(&mut self, level: u64, label: &str) {
        if self.current > level {
            self.track_free(self.current - level, label);
        }
    }

    pub fn write_event_log<W: Write>(&self, mut out: W) -> io::Result<()> {
        for ev in self.events() {
            writeln!(out, "{ev}")?;
        }
        Ok(())
    }

    fn log(&mut self, kind: EventKind, bytes: u64, label: &str) {
        if let Some(events) = self.events.as_mut() {
            events.push(LedgerEvent {
                kind,
                bytes,
                label: label.to_owned(),
            });
        }
    }
}

/// Reason [`plan_chunk_width`] could not produce a width.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("budget {budget} does not cover fixed overhead {overhead}")]
    OverheadExceedsBudget { budget: u64, overhead: u64 },
    #[error("even width-1 chunks need {needed} bytes, only {available} available")]
    Infeasible { needed: u64, available: u64 },
}

/// Widest chunk whose `num_edges x width` message buffer fits in the budget
/// left after `fixed_overhead`, capped at `total_width`.
pub fn plan_chunk_width(
    budget_bytes: u64,
    num_edges: u64,
    total_width: usize,
    bytes_per_elem: u64,
    fixed_overhead: u64,
) -> Result<usize, PlanError> {
    if fixed_overhead > budget_bytes {
        return Err(PlanError::OverheadExceedsBudget {
            budget: budget_bytes,
            overhead: fixed_overhead,
        });
    }
    let available = budget_bytes - fixed_overhead;
    let row_bytes = num_edges.saturating_mul(bytes_per_elem);
    if row_bytes == 0 {
        // no message buffer at all
        return Ok(total_width.max(1));
    }
    let width = available / row_bytes;
    if width < 1 {
        return Err(PlanError::Infeasible {
            needed: row_bytes,
            available,
        });
    }
    Ok(width.min(total_width as u64) as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_refusal_leaves_state_unchanged() {
        let mut l = MemoryLedger::with_budget(100);
        l.track_alloc(60, "a").unwrap();
        let err = l.track_alloc(60, "b").unwrap_err();
        assert_eq!(err.current, 60);
        assert_eq!(l.current_bytes(), 60);
        assert_eq!(l.peak_bytes(), 60);
    }

    #[test]
    fn unbudgeted_never_fails() {
        let mut l = MemoryLedger::new();
        l.track_alloc(1_000_000_000, "big").unwrap();
        assert_eq!(l.peak_bytes(), 1_000_000_000);
    }

    #[test]
    fn zero_alloc_is_noop() {
        let mut l = MemoryLedger::with_budget(0);
        l.track_alloc(0, "z").unwrap();
        assert_eq!((l.current_bytes(), l.peak_bytes()), (0, 0));
    }

    #[test]
    fn free_keeps_peak() {
        let mut l = MemoryLedger::new();
        l.track_alloc(100, "a").unwrap();
        l.track_free(100, "a");
        assert_eq!((l.current_bytes(), l.peak_bytes()), (0, 100));

        let mut l = MemoryLedger::new();
        l.track_alloc(100, "a").unwrap();
        l.track_free(40, "a");
        l.track_alloc(50, "b").unwrap();
        assert_eq!((l.current_bytes(), l.peak_bytes()), (110, 110));
    }

    #[test]
    #[should_panic(expected = "ledger underflow")]
    fn over_free_panics() {
        let mut l = MemoryLedger::new();
        l.track_alloc(10, "a").unwrap();
        l.track_free(11, "a");
    }

    #[test]
    fn window_measures_above_baseline() {
        let mut l = MemoryLedger::new();
        l.track_alloc(1000, "resident").unwrap();
        l.open_window();
        l.track_alloc(30, "m").unwrap();
        l.track_free(30, "m");
        l.track_alloc(20, "m").unwrap();
        l.track_free(20, "m");
        l.open_window();
        l.track_alloc(5, "inner").unwrap();
        assert_eq!(l.close_window(), 5);
        assert_eq!(l.close_window(), 30);
        assert_eq!(l.peak_bytes(), 1030);
        l.release_to(0, "unwind");
        assert_eq!(l.current_bytes(), 0);
    }

    #[test]
    fn event_log_format() {
        let mut l = MemoryLedger::new().record_events();
        l.track_alloc(64, "msg.chunk0").unwrap();
        l.track_free(64, "msg.chunk0");
        let mut out = Vec::new();
        l.write_event_log(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "alloc 64 msg.chunk0\nfree 64 msg.chunk0\n"
        );
    }

    #[test]
    fn planner_examples() {
        // exactly E*L elements available
        assert_eq!(plan_chunk_width(1000 * 32 * 4 + 77, 1000, 32, 4, 77), Ok(32));
        assert_eq!(plan_chunk_width(32_000 + 500, 1000, 32, 4, 500), Ok(8));
        assert_eq!(
            plan_chunk_width(3_999, 1000, 32, 4, 0),
            Err(PlanError::Infeasible {
                needed: 4000,
                available: 3999
            })
        );
        assert!(matches!(
            plan_chunk_width(10, 1000, 32, 4, 11),
            Err(PlanError::OverheadExceedsBudget { .. })
        ));
    }
}
