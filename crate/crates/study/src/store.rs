use crate::{io_err, Error, Result, Slot, StudyDescriptor, StudyKey, StudyRecord};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

pub const EVENTS_FILE: &str = "events.jsonl";
pub const RESPONSES_FILE: &str = "responses.jsonl";

pub fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case", deny_unknown_fields)]
pub enum Event {
    Session {
        session_id: String,
        rater: String,
        created_at: u64,
        /// Pair ids in presentation order.
        order: Vec<String>,
        /// Slot shown on the left, per presented pair.
        left: Vec<Slot>,
    },
    Served {
        session_id: String,
        pair_id: String,
        index: usize,
        served_at: u64,
    },
}

struct Log {
    path: PathBuf,
    file: File,
}

impl Log {
    /// Opens a log for appending and returns its complete lines. A trailing
    /// partial line (a write torn by a crash) is cut off; it was never
    /// acknowledged.
    fn open(path: PathBuf) -> Result<(Self, Vec<String>)> {
        let file = OpenOptions::new().create(true).read(true).append(true).open(&path).map_err(io_err(&path))?;
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        if keep < bytes.len() {
            file.set_len(keep as u64).map_err(io_err(&path))?;
            file.sync_data().map_err(io_err(&path))?;
        }
        let text = String::from_utf8_lossy(&bytes[..keep]).into_owned();
        let lines = text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect();
        Ok((Self { path, file }, lines))
    }

    fn append<T: Serialize>(&mut self, value: &T) -> Result<()> {
        let mut line = serde_json::to_vec(value).expect("log records serialize");
        line.push(b'\n');
        self.file.write_all(&line).map_err(io_err(&self.path))?;
        self.file.sync_data().map_err(io_err(&self.path))
    }
}

fn parse_lines<T: serde::de::DeserializeOwned>(path: &Path, lines: &[String]) -> Result<Vec<T>> {
    lines
        .iter()
        .map(|l| serde_json::from_str(l).map_err(|source| Error::Json { path: path.into(), source }))
        .collect()
}

struct Session {
    order: Vec<usize>,
    left: Vec<Slot>,
    cursor: usize,
    /// Served-at per presentation index.
    served: Vec<Option<u64>>,
}

struct Inner {
    sessions: HashMap<String, Session>,
    session_count: u64,
    records: Vec<StudyRecord>,
    events: Log,
    responses: Log,
}

/// Result of fetching a session's current pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Next {
    UnknownSession,
    Done,
    Pair {
        pair_id: String,
        left_url: String,
        right_url: String,
        index: usize,
        total: usize,
        served_at: u64,
    },
}

/// Result of submitting a response.
#[derive(Clone, Debug, PartialEq)]
pub enum Submit {
    UnknownSession,
    Invalid(String),
    Conflict(String),
    Accepted { next_index: usize },
}

/// A loaded study with its session state. All mutation goes through one
/// lock, which also serializes log appends.
pub struct Study {
    desc: StudyDescriptor,
    key: Option<StudyKey>,
    inner: Mutex<Inner>,
}

fn session_seed(study_seed: u64, rater: &str, count: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(study_seed.to_le_bytes());
    h.update((rater.len() as u64).to_le_bytes());
    h.update(rater.as_bytes());
    h.update(count.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// The presentation order and left slots of a new session.
pub(crate) fn shuffle(n: usize, study_seed: u64, rater: &str, count: u64) -> (Vec<usize>, Vec<Slot>) {
    let mut rng = ChaCha8Rng::seed_from_u64(session_seed(study_seed, rater, count));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let left = (0..n).map(|_| if rng.random_bool(0.5) { Slot::B } else { Slot::A }).collect();
    (order, left)
}

fn url(path: &str) -> String {
    format!("/{}", path.trim_start_matches('/'))
}

struct Replay<'a> {
    desc: &'a StudyDescriptor,
    index: &'a HashMap<String, usize>,
}

impl Replay<'_> {
    fn event(&self, inner: &mut Inner, ev: Event) -> Result<()> {
        let bad = |m: String| Error::Invalid(format!("event log: {m}"));
        match ev {
            Event::Session { session_id, order, left, .. } => {
                let n = self.desc.pairs.len();
                let order = order
                    .iter()
                    .map(|p| self.index.get(p).copied().ok_or_else(|| bad(format!("unknown pair {p}"))))
                    .collect::<Result<Vec<_>>>()?;
                if order.len() != n || left.len() != n {
                    return Err(bad(format!("session {session_id} does not cover the study")));
                }
                inner.session_count += 1;
                inner.sessions.insert(session_id, Session { order, left, cursor: 0, served: vec![None; n] });
            }
            Event::Served { session_id, index, served_at, .. } => {
                let s = inner.sessions.get_mut(&session_id).ok_or_else(|| bad(format!("unknown session {session_id}")))?;
                let slot = s.served.get_mut(index).ok_or_else(|| bad(format!("index {index} out of range")))?;
                slot.get_or_insert(served_at);
            }
        }
        Ok(())
    }

    fn record(&self, inner: &mut Inner, rec: StudyRecord) -> Result<()> {
        let bad = |m: String| Error::Invalid(format!("response log: {m}"));
        let s = inner
            .sessions
            .get_mut(&rec.session_id)
            .ok_or_else(|| bad(format!("unknown session {}", rec.session_id)))?;
        let current = s.order.get(s.cursor).map(|&i| &self.desc.pairs[i].pair_id);
        if current != Some(&rec.pair_id) {
            return Err(bad(format!("out-of-order pair {} in session {}", rec.pair_id, rec.session_id)));
        }
        s.served[s.cursor].get_or_insert(rec.served_at);
        s.cursor += 1;
        inner.records.push(rec);
        Ok(())
    }
}

impl Study {
    pub fn open(study_dir: &Path, key_file: Option<&Path>, log_dir: &Path) -> Result<Self> {
        let desc = StudyDescriptor::load(study_dir)?;
        let key = key_file.map(StudyKey::load).transpose()?;
        if let Some(k) = &key {
            k.check_against(&desc)?;
        }
        std::fs::create_dir_all(log_dir).map_err(io_err(log_dir))?;
        let (events, event_lines) = Log::open(log_dir.join(EVENTS_FILE))?;
        let (responses, response_lines) = Log::open(log_dir.join(RESPONSES_FILE))?;
        let index: HashMap<String, usize> = desc.pairs.iter().enumerate().map(|(i, p)| (p.pair_id.clone(), i)).collect();
        let mut inner = Inner { sessions: HashMap::new(), session_count: 0, records: vec![], events, responses };
        let replay = Replay { desc: &desc, index: &index };
        for ev in parse_lines::<Event>(&inner.events.path, &event_lines)? {
            replay.event(&mut inner, ev)?;
        }
        for rec in parse_lines::<StudyRecord>(&inner.responses.path, &response_lines)? {
            replay.record(&mut inner, rec)?;
        }
        Ok(Self { desc, key, inner: Mutex::new(inner) })
    }

    pub fn descriptor(&self) -> &StudyDescriptor {
        &self.desc
    }

    pub fn key(&self) -> Option<&StudyKey> {
        self.key.as_ref()
    }

    pub fn records(&self) -> Vec<StudyRecord> {
        self.inner.lock().unwrap().records.clone()
    }

    pub fn create_session(&self, rater: &str) -> Result<(String, usize)> {
        let mut inner = self.inner.lock().unwrap();
        let n = self.desc.pairs.len();
        let (order, left) = shuffle(n, self.desc.seed, rater, inner.session_count);
        let session_id = uuid::Uuid::new_v4().to_string();
        inner.events.append(&Event::Session {
            session_id: session_id.clone(),
            rater: rater.to_string(),
            created_at: now_ms(),
            order: order.iter().map(|&i| self.desc.pairs[i].pair_id.clone()).collect(),
            left: left.clone(),
        })?;
        inner.session_count += 1;
        inner.sessions.insert(session_id.clone(), Session { order, left, cursor: 0, served: vec![None; n] });
        Ok((session_id, n))
    }

    pub fn next(&self, session_id: &str) -> Result<Next> {
        let mut guard = self.inner.lock().unwrap();
        let inner = &mut *guard;
        let Some(s) = inner.sessions.get_mut(session_id) else {
            return Ok(Next::UnknownSession);
        };
        let index = s.cursor;
        let Some(&pair) = s.order.get(index) else {
            return Ok(Next::Done);
        };
        let entry = &self.desc.pairs[pair];
        let served_at = match s.served[index] {
            Some(t) => t,
            None => {
                let t = now_ms();
                inner.events.append(&Event::Served {
                    session_id: session_id.to_string(),
                    pair_id: entry.pair_id.clone(),
                    index,
                    served_at: t,
                })?;
                s.served[index] = Some(t);
                t
            }
        };
        let (l, r) = match s.left[index] {
            Slot::A => (&entry.a, &entry.b),
            Slot::B => (&entry.b, &entry.a),
        };
        Ok(Next::Pair {
            pair_id: entry.pair_id.clone(),
            left_url: url(l),
            right_url: url(r),
            index,
            total: s.order.len(),
            served_at,
        })
    }

    pub fn submit(&self, session_id: &str, pair_id: &str, sharpness: i64, noise: i64) -> Result<Submit> {
        let mut guard = self.inner.lock().unwrap();
        let inner = &mut *guard;
        let Some(s) = inner.sessions.get_mut(session_id) else {
            return Ok(Submit::UnknownSession);
        };
        for (name, v) in [("sharpness", sharpness), ("noise", noise)] {
            if !(1..=5).contains(&v) {
                return Ok(Submit::Invalid(format!("{name} must be an integer in 1..=5, got {v}")));
            }
        }
        let index = s.cursor;
        let Some(&pair) = s.order.get(index) else {
            return Ok(Submit::Conflict("session is complete".into()));
        };
        if self.desc.pairs[pair].pair_id != pair_id {
            return Ok(Submit::Conflict(format!("{pair_id} is not the current pair")));
        }
        let Some(served_at) = s.served[index] else {
            return Ok(Submit::Conflict(format!("{pair_id} has not been served yet")));
        };
        let rec = StudyRecord {
            session_id: session_id.to_string(),
            pair_id: pair_id.to_string(),
            left: s.left[index],
            sharpness: sharpness as u8,
            noise: noise as u8,
            served_at,
            submitted_at: now_ms().max(served_at),
        };
        inner.responses.append(&rec)?;
        s.cursor += 1;
        inner.records.push(rec);
        Ok(Submit::Accepted { next_index: s.cursor })
    }
}
