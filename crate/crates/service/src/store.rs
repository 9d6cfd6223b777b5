use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use semfaith::intervene::{NegationValidationReport, Verdict};
use semfaith::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Unannotated,
    Draft,
    Accepted,
    Rejected,
    Skipped,
}

impl Status {
    pub const ALL: [Status; 5] = [
        Status::Unannotated,
        Status::Draft,
        Status::Accepted,
        Status::Rejected,
        Status::Skipped,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Unannotated => "unannotated",
            Status::Draft => "draft",
            Status::Accepted => "accepted",
            Status::Rejected => "rejected",
            Status::Skipped => "skipped",
        }
    }
}

impl std::str::FromStr for Status {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Status::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown status `{s}`")))
    }
}

/// Latest annotation state of one item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub item_id: String,
    pub annotator: Option<String>,
    pub edited_story: Option<String>,
    pub new_gold: Option<String>,
    pub validation: Option<NegationValidationReport>,
    pub status: Status,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
    pub updated_at: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum Event {
    Edit {
        item_id: String,
        annotator: String,
        edited_story: String,
        new_gold: String,
        validation: NegationValidationReport,
        at: u64,
    },
    Decision {
        item_id: String,
        status: Status,
        at: u64,
    },
}

impl Event {
    pub fn item_id(&self) -> &str {
        match self {
            Event::Edit { item_id, .. } | Event::Decision { item_id, .. } => item_id,
        }
    }
}

/// Why an event cannot be applied in the current state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StateError(pub String);

pub type State = BTreeMap<String, AnnotationRecord>;

/// Applies one event to `state`, or explains why it is not allowed.
pub fn apply(state: &mut State, event: &Event) -> std::result::Result<AnnotationRecord, StateError> {
    let current = state.get(event.item_id());
    let record = match event {
        Event::Edit {
            item_id,
            annotator,
            edited_story,
            new_gold,
            validation,
            at,
        } => {
            if current.is_some_and(|r| r.status == Status::Accepted) {
                return Err(StateError(format!("item {item_id} is already accepted")));
            }
            AnnotationRecord {
                item_id: item_id.clone(),
                annotator: Some(annotator.clone()),
                edited_story: Some(edited_story.clone()),
                new_gold: Some(new_gold.clone()),
                validation: Some(validation.clone()),
                status: Status::Draft,
                created_at: current.map_or(*at, |r| r.created_at),
                updated_at: *at,
            }
        }
        Event::Decision { item_id, status, at } => {
            let current_status = current.map_or(Status::Unannotated, |r| r.status);
            match (status, current_status) {
                (Status::Accepted | Status::Rejected, Status::Draft) => {}
                (Status::Skipped, Status::Unannotated | Status::Draft) => {}
                (Status::Unannotated | Status::Draft, _) => {
                    return Err(StateError(format!("{} is not a decision", status.as_str())))
                }
                (_, other) => {
                    return Err(StateError(format!(
                        "item {item_id} is {}, cannot mark it {}",
                        other.as_str(),
                        status.as_str()
                    )))
                }
            }
            if *status == Status::Accepted {
                let verdict = current.and_then(|r| r.validation.as_ref()).map(|v| v.verdict);
                if !matches!(verdict, Some(Verdict::Accept | Verdict::Warn)) {
                    return Err(StateError(format!("item {item_id}: draft was rejected by validation")));
                }
            }
            let mut record = current.cloned().unwrap_or(AnnotationRecord {
                item_id: item_id.clone(),
                annotator: None,
                edited_story: None,
                new_gold: None,
                validation: None,
                status: Status::Unannotated,
                created_at: *at,
                updated_at: *at,
            });
            record.status = *status;
            record.updated_at = *at;
            record
        }
    };
    state.insert(record.item_id.clone(), record.clone());
    Ok(record)
}

/// Rebuilds the state from a log. A torn final line (no trailing newline)
/// is ignored; any other unreadable line is an error.
pub fn replay(path: &Path) -> Result<(State, usize)> {
    let mut state = State::new();
    if !path.exists() {
        return Ok((state, 0));
    }
    let text = std::fs::read_to_string(path)?;
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let mut applied = 0;
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let event: Event = match serde_json::from_str(line) {
            Ok(e) => e,
            Err(_) if i + 1 == lines.len() && !complete => {
                log::warn!("ignoring torn final line {} of {}", i + 1, path.display());
                break;
            }
            Err(e) => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("{}: {e}", path.display()),
                })
            }
        };
        apply(&mut state, &event).map_err(|e| Error::Integrity(format!("{} line {}: {}", path.display(), i + 1, e.0)))?;
        applied += 1;
    }
    Ok((state, applied))
}

/// Append-only event log plus its materialized state.
pub struct AnnotationStore {
    path: PathBuf,
    file: File,
    state: State,
}

impl AnnotationStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let (state, _) = replay(&path)?;
        if path.exists() {
            let bytes = std::fs::read(&path)?;
            if bytes.last().is_some_and(|b| *b != b'\n') {
                let keep = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
                log::warn!("truncating torn tail of {} at byte {keep}", path.display());
                OpenOptions::new().write(true).open(&path)?.set_len(keep as u64)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(AnnotationStore { path, file, state })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    /// Validates, persists and applies an event.
    pub fn append(&mut self, event: &Event) -> std::result::Result<AnnotationRecord, AppendError> {
        let mut next = self.state.clone();
        let record = apply(&mut next, event).map_err(AppendError::State)?;
        let mut line = serde_json::to_vec(event).map_err(|e| AppendError::Io(e.into()))?;
        line.push(b'\n');
        self.file
            .write_all(&line)
            .and_then(|_| self.file.sync_data())
            .map_err(|e| AppendError::Io(e.into()))?;
        self.state = next;
        Ok(record)
    }

    pub fn flush(&mut self) -> Result<()> {
        self.file.flush()?;
        self.file.sync_all()?;
        Ok(())
    }
}

#[derive(Debug)]
pub enum AppendError {
    State(StateError),
    Io(Error),
}
