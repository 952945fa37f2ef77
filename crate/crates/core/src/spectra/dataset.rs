use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use super::{preprocess, read_csv, ClassRole, DatasetManifest, Record, RecordSource, SpectraError};

/// Stage of an experiment on whose behalf a record is read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    Training,
    Validation,
    Evaluation,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReadEvent {
    pub phase: Phase,
    /// Index into the manifest's records.
    pub record: usize,
    pub class_id: u32,
    pub role: ClassRole,
}

/// Shared log of every record materialized by [`load_samples`].
#[derive(Clone, Debug, Default)]
pub struct ReadLog {
    events: Arc<Mutex<Vec<ReadEvent>>>,
}

impl ReadLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, event: ReadEvent) {
        self.events.lock().expect("read log poisoned").push(event);
    }

    pub fn events(&self) -> Vec<ReadEvent> {
        self.events.lock().expect("read log poisoned").clone()
    }

    pub fn count(&self, phase: Phase, role: ClassRole) -> usize {
        self.events
            .lock()
            .expect("read log poisoned")
            .iter()
            .filter(|e| e.phase == phase && e.role == role)
            .count()
    }
}

/// A preprocessed spectrum ready for the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Stable identifier; the manifest record index for loaded data.
    pub id: usize,
    pub class_id: u32,
    pub role: ClassRole,
    /// Known-class index in `0..C`, for known samples only.
    pub label: Option<usize>,
    pub input: Vec<f64>,
}

/// Reads, preprocesses and logs every manifest record accepted by `select`.
///
/// `select` only sees record metadata, so records it rejects are never
/// opened.
pub fn load_samples<F>(manifest: &DatasetManifest, select: F, phase: Phase, log: &ReadLog) -> Result<Vec<Sample>, SpectraError>
where
    F: Fn(&Record, ClassRole) -> bool,
{
    let roles: HashMap<u32, ClassRole> = manifest.classes.iter().map(|c| (c.id, c.role)).collect();
    let labels: HashMap<u32, usize> = manifest.known_classes().iter().enumerate().map(|(i, c)| (c.id, i)).collect();
    let mut out = Vec::new();
    for (idx, rec) in manifest.records.iter().enumerate() {
        let role = roles[&rec.class_id];
        if !select(rec, role) {
            continue;
        }
        log.record(ReadEvent {
            phase,
            record: idx,
            class_id: rec.class_id,
            role,
        });
        let raw = match &rec.source {
            RecordSource::File(p) => read_csv(&manifest.resolve(p))?,
            RecordSource::Inline(s) => s.clone(),
        };
        let spectrum = preprocess(&raw, manifest.cut_below)?;
        out.push(Sample {
            id: idx,
            class_id: rec.class_id,
            role,
            label: labels.get(&rec.class_id).copied(),
            input: spectrum.into_intensities(),
        });
    }
    Ok(out)
}
