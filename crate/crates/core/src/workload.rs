//! Per-user request generation.
//!
//! Each user emits requests with exponentially distributed inter-arrival
//! times. Demand sizes cycle through a fixed pattern written as
//! `{C=a1, N=b1; C=a2, N=b2; ...}`, where each entry is a mean. With
//! [`Jitter::Gaussian`] every component is drawn around its mean; with
//! [`Jitter::Deterministic`] the means are emitted as-is.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::metrics::key_resource_of;
use crate::resource::{Request, RequestId, ResourceVector, Time, UserId};

/// Gaussian draws outside `(0, GAUSSIAN_UPPER_FACTOR * mean]` are redrawn.
pub const GAUSSIAN_UPPER_FACTOR: f64 = 4.0;
const MAX_REDRAWS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PatternError {
    #[error("pattern syntax error at byte {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("pattern entry {entry} has a non-positive mean ({field}={value})")]
    NonPositive {
        entry: usize,
        field: char,
        value: f64,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkloadError {
    #[error("no workloads given")]
    Empty,
    #[error("user {user} has zero expected key-resource demand")]
    ZeroExpectation { user: usize },
}

/// Repeating request-size pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternSpec {
    entries: Vec<ResourceVector>,
}

impl PatternSpec {
    pub fn new(entries: Vec<ResourceVector>) -> Result<Self, PatternError> {
        if entries.is_empty() {
            return Err(PatternError::Syntax {
                position: 0,
                message: "pattern needs at least one entry".into(),
            });
        }
        for (i, e) in entries.iter().enumerate() {
            // Written as negated comparisons so NaN is rejected too.
            if !(e.cpu > 0.0) {
                return Err(PatternError::NonPositive {
                    entry: i,
                    field: 'C',
                    value: e.cpu,
                });
            }
            if !(e.bw > 0.0) {
                return Err(PatternError::NonPositive {
                    entry: i,
                    field: 'N',
                    value: e.bw,
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ResourceVector] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn mean(&self) -> ResourceVector {
        let n = self.entries.len() as f64;
        self.entries.iter().copied().sum::<ResourceVector>() * (1.0 / n)
    }

    /// Every entry multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, PatternError> {
        Self::new(self.entries.iter().map(|e| *e * factor).collect())
    }

    /// The anti-phase family `{C=beta, N=1; C=1, N=beta}`.
    pub fn anti_phase(beta: f64) -> Result<Self, PatternError> {
        Self::new(vec![
            ResourceVector::new(beta, 1.0),
            ResourceVector::new(1.0, beta),
        ])
    }

    /// The in-phase family `{C=alpha, N=alpha}`.
    pub fn in_phase(alpha: f64) -> Result<Self, PatternError> {
        Self::new(vec![ResourceVector::new(alpha, alpha)])
    }
}

impl fmt::Display for PatternSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, e) in self.entries.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "C={}, N={}", e.cpu, e.bw)?;
        }
        f.write_str("}")
    }
}

impl FromStr for PatternSpec {
    type Err = PatternError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_pattern(s)
    }
}

impl Serialize for PatternSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PatternSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_pattern(&text).map_err(serde::de::Error::custom)
    }
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_ws(&mut self) {
        while let Some(c) = self.text[self.pos..].chars().next() {
            if !c.is_whitespace() {
                break;
            }
            self.pos += c.len_utf8();
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.text[self.pos..].chars().next()
    }

    fn error(&self, message: impl Into<String>) -> PatternError {
        PatternError::Syntax {
            position: self.pos,
            message: message.into(),
        }
    }

    fn expect(&mut self, want: char) -> Result<(), PatternError> {
        match self.peek() {
            Some(c) if c == want => {
                self.pos += c.len_utf8();
                Ok(())
            }
            Some(c) => Err(self.error(format!("expected '{want}', found '{c}'"))),
            None => Err(self.error(format!("expected '{want}', found end of input"))),
        }
    }

    fn number(&mut self) -> Result<f64, PatternError> {
        self.skip_ws();
        let start = self.pos;
        let len = self.text[start..]
            .find(|c: char| !(c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E')))
            .unwrap_or(self.text.len() - start);
        let token = &self.text[start..start + len];
        if token.is_empty() {
            return Err(self.error("expected a number"));
        }
        let value = token
            .parse::<f64>()
            .map_err(|_| self.error(format!("invalid number '{token}'")))?;
        self.pos += len;
        Ok(value)
    }
}

/// Parses `{C=a1, N=b1; ...; C=am, N=bm}`. Whitespace is insignificant.
pub fn parse_pattern(text: &str) -> Result<PatternSpec, PatternError> {
    let mut cur = Cursor { text, pos: 0 };
    cur.expect('{')?;
    let mut entries = Vec::new();
    loop {
        cur.expect('C')?;
        cur.expect('=')?;
        let cpu = cur.number()?;
        cur.expect(',')?;
        cur.expect('N')?;
        cur.expect('=')?;
        let bw = cur.number()?;
        entries.push(ResourceVector::new(cpu, bw));
        match cur.peek() {
            Some(';') => cur.pos += 1,
            Some('}') => {
                cur.pos += 1;
                break;
            }
            Some(c) => return Err(cur.error(format!("expected ';' or '}}', found '{c}'"))),
            None => return Err(cur.error("unterminated pattern")),
        }
    }
    if let Some(c) = cur.peek() {
        return Err(cur.error(format!("trailing input starting at '{c}'")));
    }
    PatternSpec::new(entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Jitter {
    #[default]
    Deterministic,
    Gaussian {
        #[serde(default = "default_sigma_ratio")]
        sigma_ratio: f64,
    },
}

/// Sigma ratio used when a config asks for Gaussian sizes without giving one.
pub const DEFAULT_SIGMA_RATIO: f64 = 0.1;

fn default_sigma_ratio() -> f64 {
    DEFAULT_SIGMA_RATIO
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserWorkload {
    pub pattern: PatternSpec,
    pub mean_interarrival: Time,
    pub hold: Time,
    #[serde(default)]
    pub jitter: Jitter,
}

impl UserWorkload {
    pub fn new(pattern: PatternSpec, mean_interarrival: Time, hold: Time) -> Self {
        Self {
            pattern,
            mean_interarrival,
            hold,
            jitter: Jitter::Deterministic,
        }
    }
}

/// Expected per-block requested totals: `(L / q)` arrivals of the mean
/// pattern entry.
pub fn expected_block_demand(workload: &UserWorkload, block_length: Time) -> ResourceVector {
    workload.pattern.mean() * (block_length / workload.mean_interarrival)
}

/// Per-user normalization weights `r_g`.
///
/// Each user's expectation is its expected per-block demand of its key
/// resource, expressed as a fraction of that resource's total capacity so
/// users with different key types stay comparable. The smallest expectation
/// gets `r = 1`; a user expecting twice as much gets `r = 0.5`.
pub fn derive_weights(
    workloads: &[UserWorkload],
    block_length: Time,
    total_capacity: ResourceVector,
) -> Result<Vec<f64>, WorkloadError> {
    if workloads.is_empty() {
        return Err(WorkloadError::Empty);
    }
    let expectations = workloads
        .iter()
        .enumerate()
        .map(|(g, w)| {
            let expected = expected_block_demand(w, block_length);
            let key = key_resource_of(expected, total_capacity);
            let share = expected.get(key) / total_capacity.get(key);
            if share > 0.0 && share.is_finite() {
                Ok(share)
            } else {
                Err(WorkloadError::ZeroExpectation { user: g })
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let least = expectations.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(expectations.iter().map(|e| least / e).collect())
}

/// Mixes a base seed with an index into a new, well-spread seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// An independent ChaCha stream for `stream` under `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream index reserved for the engine's own tie-breaking draws; users get
/// `USER_STREAM_BASE + g`.
pub const ENGINE_STREAM: u64 = 0;
pub const USER_STREAM_BASE: u64 = 1;

/// Generator state for one user's request stream.
#[derive(Debug, Clone)]
pub struct RequestStream {
    user: UserId,
    workload: UserWorkload,
    cursor: usize,
    clock: Time,
    issued: u64,
    interarrival: Exp<f64>,
    rng: ChaCha8Rng,
}

impl RequestStream {
    /// Panics if the workload's mean inter-arrival is not positive; configs
    /// are validated before streams are built.
    pub fn new(user: UserId, workload: UserWorkload, seed: u64) -> Self {
        let interarrival = Exp::new(1.0 / workload.mean_interarrival)
            .expect("mean inter-arrival must be positive");
        Self {
            user,
            cursor: 0,
            clock: 0.0,
            issued: 0,
            interarrival,
            rng: substream(seed, USER_STREAM_BASE + user.0 as u64),
            workload,
        }
    }

    pub fn user(&self) -> UserId {
        self.user
    }

    pub fn workload(&self) -> &UserWorkload {
        &self.workload
    }

    /// Next request of this user. Its `id` is the per-stream sequence number;
    /// the engine renumbers requests globally in arrival order.
    pub fn next_request(&mut self) -> Request {
        self.clock += self.interarrival.sample(&mut self.rng);
        let mean = self.workload.pattern.entries()[self.cursor];
        self.cursor = (self.cursor + 1) % self.workload.pattern.len();
        let demand = match self.workload.jitter {
            Jitter::Deterministic => mean,
            Jitter::Gaussian { sigma_ratio } => ResourceVector::new(
                truncated_normal(&mut self.rng, mean.cpu, sigma_ratio),
                truncated_normal(&mut self.rng, mean.bw, sigma_ratio),
            ),
        };
        let id = RequestId(self.issued);
        self.issued += 1;
        Request {
            id,
            user: self.user,
            arrival: self.clock,
            demand,
            hold: self.workload.hold,
        }
    }
}

impl Iterator for RequestStream {
    type Item = Request;
    fn next(&mut self) -> Option<Request> {
        Some(self.next_request())
    }
}

fn truncated_normal<R: Rng>(rng: &mut R, mean: f64, sigma_ratio: f64) -> f64 {
    let sigma = mean * sigma_ratio;
    if sigma <= 0.0 {
        return mean;
    }
    let normal = Normal::new(mean, sigma).expect("finite sigma");
    let upper = mean * GAUSSIAN_UPPER_FACTOR;
    for _ in 0..MAX_REDRAWS {
        let x = normal.sample(rng);
        if x > 0.0 && x <= upper {
            return x;
        }
    }
    mean
}
