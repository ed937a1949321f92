//! Event sequences on an observation window and their CSV representation.
//!
//! The CSV layout is `time,mark,is_immigrant,parent,generation`. Optional
//! columns may be left blank or omitted entirely. `parent` is `-1` for
//! immigrants, the row index of the parent event otherwise, and blank when
//! the parent is not part of the sequence (a burn-in point or an unobserved
//! immigrant). The window end is stored in a leading `# window_end=` comment.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Origin of an event in the simulated genealogy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parent {
    Immigrant,
    Event(usize),
    /// Triggered by a point outside the sequence.
    External,
}

/// An immigrant with its mark. `event` is the index of the matching event
/// when immigrants are part of the observed sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Immigrant {
    pub time: f64,
    pub mark: f64,
    pub event: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventSequence {
    pub window_end: f64,
    pub times: Vec<f64>,
    /// Immigrant marks; rows without a mark (offspring) hold `None`.
    pub marks: Option<Vec<Option<f64>>>,
    pub is_immigrant: Option<Vec<bool>>,
    pub parent: Option<Vec<Parent>>,
    pub generation: Option<Vec<u32>>,
}

impl EventSequence {
    pub fn new(times: Vec<f64>, window_end: f64) -> Result<Self> {
        let seq = EventSequence {
            window_end,
            times,
            ..Default::default()
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn empty(window_end: f64) -> Self {
        EventSequence {
            window_end,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.window_end.is_finite() && self.window_end > 0.0) {
            return Err(Error::InvalidParameters(format!(
                "window end must be positive, got {}",
                self.window_end
            )));
        }
        let n = self.times.len();
        for (i, &t) in self.times.iter().enumerate() {
            if !(t >= 0.0 && t <= self.window_end) {
                return Err(Error::InvalidParameters(format!(
                    "event {i} at time {t} lies outside [0, {}]",
                    self.window_end
                )));
            }
            if i > 0 && t < self.times[i - 1] {
                return Err(Error::InvalidParameters(format!(
                    "event times must be ascending (row {i})"
                )));
            }
        }
        let check_len = |len: usize, what: &str| {
            if len != n {
                Err(Error::InvalidParameters(format!("{what} has {len} entries for {n} events")))
            } else {
                Ok(())
            }
        };
        if let Some(m) = &self.marks {
            check_len(m.len(), "marks")?;
            if m.iter().flatten().any(|y| !(*y > 0.0 && y.is_finite())) {
                return Err(Error::InvalidParameters("marks must be positive".into()));
            }
        }
        if let Some(v) = &self.is_immigrant {
            check_len(v.len(), "is_immigrant")?;
        }
        if let Some(g) = &self.generation {
            check_len(g.len(), "generation")?;
        }
        if let Some(p) = &self.parent {
            check_len(p.len(), "parent")?;
            for (i, par) in p.iter().enumerate() {
                if let Parent::Event(j) = *par {
                    if j >= i {
                        return Err(Error::InvalidParameters(format!(
                            "event {i} names parent {j}, which is not earlier"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn mark(&self, i: usize) -> f64 {
        self.marks.as_ref().and_then(|m| m[i]).unwrap_or(1.0)
    }

    /// Number of events flagged immigrant, if labels are present.
    pub fn immigrant_count(&self) -> Option<usize> {
        self.is_immigrant
            .as_ref()
            .map(|v| v.iter().filter(|&&b| b).count())
    }

    /// Immigrants read from the `is_immigrant` labels of this sequence.
    pub fn labeled_immigrants(&self) -> Option<Vec<Immigrant>> {
        let flags = self.is_immigrant.as_ref()?;
        Some(
            flags
                .iter()
                .enumerate()
                .filter(|(_, &f)| f)
                .map(|(i, _)| Immigrant {
                    time: self.times[i],
                    mark: self.mark(i),
                    event: Some(i),
                })
                .collect(),
        )
    }

    /// Every event of this sequence viewed as an immigrant outside the observed events.
    pub fn as_external_immigrants(&self) -> Vec<Immigrant> {
        (0..self.len())
            .map(|i| Immigrant {
                time: self.times[i],
                mark: self.mark(i),
                event: None,
            })
            .collect()
    }

    /// Copy holding only the event times.
    pub fn unlabeled(&self) -> Self {
        EventSequence {
            window_end: self.window_end,
            times: self.times.clone(),
            marks: None,
            is_immigrant: None,
            parent: None,
            generation: None,
        }
    }

    /// Events up to and including `end`, with the window shortened to `end`.
    pub fn truncated(&self, end: f64) -> Self {
        let k = self.times.partition_point(|&t| t <= end);
        EventSequence {
            window_end: end,
            times: self.times[..k].to_vec(),
            marks: self.marks.as_ref().map(|m| m[..k].to_vec()),
            is_immigrant: self.is_immigrant.as_ref().map(|v| v[..k].to_vec()),
            parent: self.parent.as_ref().map(|p| p[..k].to_vec()),
            generation: self.generation.as_ref().map(|g| g[..k].to_vec()),
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# window_end={}", self.window_end)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "mark", "is_immigrant", "parent", "generation"])?;
        for i in 0..self.len() {
            let mark = self
                .marks
                .as_ref()
                .and_then(|m| m[i])
                .map_or(String::new(), |y| y.to_string());
            let imm = self
                .is_immigrant
                .as_ref()
                .map_or(String::new(), |v| if v[i] { "1".into() } else { "0".into() });
            let parent = self.parent.as_ref().map_or(String::new(), |p| match p[i] {
                Parent::Immigrant => "-1".into(),
                Parent::Event(j) => j.to_string(),
                Parent::External => String::new(),
            });
            let generation = self
                .generation
                .as_ref()
                .map_or(String::new(), |g| g[i].to_string());
            w.write_record([self.times[i].to_string(), mark, imm, parent, generation])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses the CSV layout written by [`EventSequence::write_csv`].
    ///
    /// Only `time` is required. Without a `# window_end=` comment the window
    /// ends at `default_window_end`, or at the last event time if that is `None`.
    pub fn read_csv<R: Read>(mut input: R, default_window_end: Option<f64>) -> Result<Self> {
        let mut text = String::new();
        input.read_to_string(&mut text)?;
        let mut window_end = default_window_end;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(v) = rest.trim().strip_prefix("window_end=") {
                    window_end = Some(v.trim().parse().map_err(|_| Error::Parse {
                        line: lineno as u64 + 1,
                        message: format!("bad window_end value {v:?}"),
                    })?);
                }
            }
        }

        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(false)
            .from_reader(text.as_bytes());
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let time_col = col("time").ok_or(Error::Parse {
            line: 1,
            message: "missing `time` column".into(),
        })?;
        let (mark_col, imm_col, parent_col, gen_col) =
            (col("mark"), col("is_immigrant"), col("parent"), col("generation"));

        let mut times = Vec::new();
        let mut marks: Vec<Option<f64>> = Vec::new();
        let mut imm: Vec<Option<bool>> = Vec::new();
        let mut parents: Vec<Option<Parent>> = Vec::new();
        let mut gens: Vec<Option<u32>> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let bad = |what: &str, v: &str| Error::Parse {
                line,
                message: format!("invalid {what} {v:?}"),
            };
            let field = |c: Option<usize>| c.and_then(|c| rec.get(c)).filter(|s| !s.is_empty());
            let t = rec.get(time_col).unwrap_or("");
            times.push(t.parse::<f64>().map_err(|_| bad("time", t))?);
            marks.push(
                field(mark_col)
                    .map(|v| v.parse::<f64>().map_err(|_| bad("mark", v)))
                    .transpose()?,
            );
            imm.push(
                field(imm_col)
                    .map(|v| match v {
                        "1" | "true" => Ok(true),
                        "0" | "false" => Ok(false),
                        _ => Err(bad("is_immigrant", v)),
                    })
                    .transpose()?,
            );
            parents.push(match field(parent_col) {
                None => None,
                Some(v) => match v.parse::<i64>().map_err(|_| bad("parent", v))? {
                    -1 => Some(Parent::Immigrant),
                    j if j >= 0 => Some(Parent::Event(j as usize)),
                    _ => return Err(bad("parent", v)),
                },
            });
            gens.push(
                field(gen_col)
                    .map(|v| v.parse::<u32>().map_err(|_| bad("generation", v)))
                    .transpose()?,
            );
        }

        let window_end = match window_end.or_else(|| times.last().copied()) {
            Some(t) => t,
            None => {
                return Err(Error::Parse {
                    line: 1,
                    message: "empty sequence without a window_end".into(),
                })
            }
        };
        let seq = EventSequence {
            window_end,
            marks: marks.iter().any(Option::is_some).then_some(marks),
            is_immigrant: (imm.iter().all(Option::is_some) && !imm.is_empty())
                .then(|| imm.iter().map(|v| v.unwrap()).collect()),
            parent: parents
                .iter()
                .any(Option::is_some)
                .then(|| parents.iter().map(|p| p.unwrap_or(Parent::External)).collect()),
            generation: (gens.iter().all(Option::is_some) && !gens.is_empty())
                .then(|| gens.iter().map(|g| g.unwrap()).collect()),
            times,
        };
        seq.validate().map_err(|e| Error::Parse {
            line: 0,
            message: e.to_string(),
        })?;
        Ok(seq)
    }
}
