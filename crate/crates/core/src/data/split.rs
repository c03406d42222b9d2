use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::{Activity, VideoRecord};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitMode {
    WithinActivity { activity: Activity },
    CombinedAll,
    LeaveOneActivityOut { activity: Activity },
    LeaveOneTaskOut { activity: Activity, task_id: u8 },
    /// Attempt-restricted split, optionally inside one activity.
    AttemptFilter {
        activity: Option<Activity>,
        train_attempts: Vec<u8>,
        eval_attempts: Vec<u8>,
    },
    CrossActivityZeroShot { train: Activity, eval: Activity },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    /// Removes validation participants from the training side.
    pub participant_disjoint: bool,
}

impl SplitSpec {
    pub fn new(mode: SplitMode, participant_disjoint: bool) -> Self {
        Self {
            mode,
            participant_disjoint,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<VideoRecord>,
    pub val: Vec<VideoRecord>,
}

impl Split {
    pub fn train_ids(&self) -> Vec<String> {
        self.train.iter().map(|r| r.video_id.clone()).collect()
    }

    pub fn val_ids(&self) -> Vec<String> {
        self.val.iter().map(|r| r.video_id.clone()).collect()
    }
}

/// Held-out participants: the last `ceil(P/3)` ids in sorted order.
pub fn validation_participants<'a>(
    records: impl IntoIterator<Item = &'a VideoRecord>,
) -> BTreeSet<String> {
    let all: BTreeSet<String> = records
        .into_iter()
        .map(|r| r.participant_id.clone())
        .collect();
    let held = all.len().div_ceil(3);
    all.iter().skip(all.len() - held).cloned().collect()
}

/// Splits the records by participant (see [`validation_participants`]).
fn participant_partition(records: Vec<&VideoRecord>) -> (Vec<&VideoRecord>, Vec<&VideoRecord>) {
    let val_p = validation_participants(records.iter().copied());
    records
        .into_iter()
        .partition(|r| !val_p.contains(&r.participant_id))
}

/// Partitions a manifest into train and validation sets.
///
/// Within-activity, combined, attempt-filtered and same-activity zero-shot
/// splits hold out participants; the other modes hold out activities or tasks,
/// and with `participant_disjoint` additionally the held-out participants.
pub fn build_split(manifest: &[VideoRecord], spec: &SplitSpec) -> Result<Split> {
    if manifest.is_empty() {
        return Err(Error::Split("empty manifest".into()));
    }
    let has_activity = |a: Activity| manifest.iter().any(|r| r.activity == a);
    let require = |a: Activity| {
        if has_activity(a) {
            Ok(())
        } else {
            Err(Error::Split(format!("no {a} videos in manifest")))
        }
    };
    let of = |a: Activity| manifest.iter().filter(move |r| r.activity == a);

    let (mut train, mut val): (Vec<&VideoRecord>, Vec<&VideoRecord>) = match &spec.mode {
        SplitMode::WithinActivity { activity } => {
            require(*activity)?;
            participant_partition(of(*activity).collect())
        }
        SplitMode::CombinedAll => participant_partition(manifest.iter().collect()),
        SplitMode::LeaveOneActivityOut { activity } => {
            require(*activity)?;
            manifest.iter().partition(|r| r.activity != *activity)
        }
        SplitMode::LeaveOneTaskOut { activity, task_id } => {
            require(*activity)?;
            if !of(*activity).any(|r| r.task_id == *task_id) {
                return Err(Error::Split(format!("{activity} has no task {task_id}")));
            }
            of(*activity).partition(|r| r.task_id != *task_id)
        }
        SplitMode::AttemptFilter {
            activity,
            train_attempts,
            eval_attempts,
        } => {
            let base: Vec<&VideoRecord> = match activity {
                Some(a) => {
                    require(*a)?;
                    of(*a).collect()
                }
                None => manifest.iter().collect(),
            };
            let (tr, va) = participant_partition(base);
            (
                tr.into_iter()
                    .filter(|r| train_attempts.contains(&r.attempt))
                    .collect(),
                va.into_iter()
                    .filter(|r| eval_attempts.contains(&r.attempt))
                    .collect(),
            )
        }
        SplitMode::CrossActivityZeroShot { train, eval } => {
            require(*train)?;
            require(*eval)?;
            if train == eval {
                participant_partition(of(*train).collect())
            } else {
                (of(*train).collect(), of(*eval).collect())
            }
        }
    };

    if spec.participant_disjoint {
        let val_p: HashSet<&str> = val.iter().map(|r| r.participant_id.as_str()).collect();
        if train.iter().any(|r| val_p.contains(r.participant_id.as_str())) {
            // activity/task hold-outs: also hold out participants
            let held = validation_participants(train.iter().chain(val.iter()).copied());
            train.retain(|r| !held.contains(&r.participant_id));
            val.retain(|r| held.contains(&r.participant_id));
        }
    }
    if train.is_empty() {
        return Err(Error::Split(format!("empty training set for {:?}", spec.mode)));
    }
    if val.is_empty() {
        return Err(Error::Split(format!("empty validation set for {:?}", spec.mode)));
    }
    let train_ids: HashSet<&str> = train.iter().map(|r| r.video_id.as_str()).collect();
    if let Some(r) = val.iter().find(|r| train_ids.contains(r.video_id.as_str())) {
        return Err(Error::Split(format!(
            "video {} in both train and validation",
            r.video_id
        )));
    }
    Ok(Split {
        train: train.into_iter().cloned().collect(),
        val: val.into_iter().cloned().collect(),
    })
}
