//! Version history: the gap-free log of sequenced events plus periodic
//! document snapshots that bound replay cost.

use std::collections::BTreeMap;

use crate::document::{SequencedEvent, SessionDocument};
use crate::reducer::{apply_change_in_place, RejectReason};

/// A snapshot is kept every this many events.
pub const SNAPSHOT_INTERVAL: u64 = 100;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HistoryError {
    #[error("sequence gap: expected seq {expected}, found {found}")]
    SequenceGap { expected: u64, found: u64 },
    #[error("replay target {upto} is beyond log head {head}")]
    BeyondHead { upto: u64, head: u64 },
    #[error("logged event {seq} no longer applies: {reason}")]
    Diverged { seq: u64, reason: RejectReason },
}

#[derive(Debug, Clone, PartialEq)]
pub struct VersionLog {
    entries: Vec<SequencedEvent>,
    snapshots: BTreeMap<u64, SessionDocument>,
    interval: u64,
}

impl Default for VersionLog {
    fn default() -> Self {
        Self::new()
    }
}

impl VersionLog {
    pub fn new() -> Self {
        Self::with_interval(SNAPSHOT_INTERVAL)
    }

    pub fn with_interval(interval: u64) -> Self {
        VersionLog { entries: Vec::new(), snapshots: BTreeMap::new(), interval: interval.max(1) }
    }

    /// Rebuilds a log from stored events by replaying them over `initial`,
    /// recreating snapshots along the way. Returns the log and the head
    /// document.
    pub fn rebuild(
        initial: &SessionDocument,
        events: impl IntoIterator<Item = SequencedEvent>,
    ) -> Result<(VersionLog, SessionDocument), HistoryError> {
        let mut log = VersionLog::new();
        let mut doc = initial.clone();
        for event in events {
            log.check_next(event.seq)?;
            apply_change_in_place(&mut doc, &event.change)
                .map_err(|reason| HistoryError::Diverged { seq: event.seq, reason })?;
            log.append(event, &doc)?;
        }
        Ok((log, doc))
    }

    /// Seq of the last logged event, 0 when empty.
    pub fn head(&self) -> u64 {
        self.entries.last().map_or(0, |e| e.seq)
    }

    pub fn entries(&self) -> &[SequencedEvent] {
        &self.entries
    }

    /// Events with `from <= seq <= to`.
    pub fn range(&self, from: u64, to: u64) -> &[SequencedEvent] {
        let lo = from.max(1).min(self.head() + 1) as usize - 1;
        let hi = to.min(self.head()) as usize;
        if lo >= hi {
            &[]
        } else {
            &self.entries[lo..hi]
        }
    }

    pub fn snapshot_seqs(&self) -> impl Iterator<Item = u64> + '_ {
        self.snapshots.keys().copied()
    }

    fn check_next(&self, seq: u64) -> Result<(), HistoryError> {
        let expected = self.head() + 1;
        if seq != expected {
            return Err(HistoryError::SequenceGap { expected, found: seq });
        }
        Ok(())
    }

    /// Appends `event`; `doc_after` is the document once it is applied and
    /// is retained when the seq falls on the snapshot interval.
    pub fn append(
        &mut self,
        event: SequencedEvent,
        doc_after: &SessionDocument,
    ) -> Result<(), HistoryError> {
        self.check_next(event.seq)?;
        if event.seq % self.interval == 0 {
            self.snapshots.insert(event.seq, doc_after.clone());
        }
        self.entries.push(event);
        Ok(())
    }

    /// Document state right after event `upto`, starting from the nearest
    /// snapshot at or below it.
    pub fn replay(
        &self,
        initial: &SessionDocument,
        upto: u64,
    ) -> Result<SessionDocument, HistoryError> {
        let head = self.head();
        if upto > head {
            return Err(HistoryError::BeyondHead { upto, head });
        }
        let (start, mut doc) = match self.snapshots.range(..=upto).next_back() {
            Some((&seq, snap)) => (seq, snap.clone()),
            None => (0, initial.clone()),
        };
        for (i, event) in self.entries[start as usize..upto as usize].iter().enumerate() {
            let expected = start + i as u64 + 1;
            if event.seq != expected {
                return Err(HistoryError::SequenceGap { expected, found: event.seq });
            }
            apply_change_in_place(&mut doc, &event.change)
                .map_err(|reason| HistoryError::Diverged { seq: event.seq, reason })?;
        }
        Ok(doc)
    }

    /// Same as [`VersionLog::replay`] but ignoring snapshots.
    pub fn replay_from_scratch(
        &self,
        initial: &SessionDocument,
        upto: u64,
    ) -> Result<SessionDocument, HistoryError> {
        let mut plain = self.clone();
        plain.snapshots.clear();
        plain.replay(initial, upto)
    }
}

/// Functional form of [`VersionLog::append`].
pub fn append_log(
    mut log: VersionLog,
    event: SequencedEvent,
    doc_after: &SessionDocument,
) -> Result<VersionLog, HistoryError> {
    log.append(event, doc_after)?;
    Ok(log)
}
