//! Labelled frame sequences and their CSV form
//! (`session,frame,label,p0,...,p63`, pixels row-major in Celsius).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::train::network::{FRAME_PIXELS, NUM_CLASSES};

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub session: u32,
    pub frame: u64,
    pub label: usize,
    pub pixels: [f32; FRAME_PIXELS],
}

/// Samples grouped by session, in frame order within each session.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Checks labels and strictly increasing frame indices per session.
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let mut last: BTreeMap<u32, u64> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            if s.label >= NUM_CLASSES {
                return Err(Error::Dataset(format!("row {}: label {} outside 0..{}", i + 1, s.label, NUM_CLASSES)));
            }
            if let Some(&prev) = last.get(&s.session) {
                if s.frame <= prev {
                    return Err(Error::Dataset(format!(
                        "row {}: frame {} of session {} does not follow frame {prev}",
                        i + 1,
                        s.frame,
                        s.session
                    )));
                }
            }
            if s.pixels.iter().any(|v| !v.is_finite()) {
                return Err(Error::Dataset(format!("row {}: non-finite pixel", i + 1)));
            }
            last.insert(s.session, s.frame);
        }
        Ok(Self { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sorted session ids.
    pub fn sessions(&self) -> Vec<u32> {
        self.session_counts().into_keys().collect()
    }

    pub fn session_counts(&self) -> BTreeMap<u32, usize> {
        let mut m = BTreeMap::new();
        for s in &self.samples {
            *m.entry(s.session).or_insert(0) += 1;
        }
        m
    }

    /// Samples of the listed sessions, keeping dataset order.
    pub fn select(&self, sessions: &[u32]) -> Dataset {
        Dataset {
            samples: self.samples.iter().filter(|s| sessions.contains(&s.session)).cloned().collect(),
        }
    }

    pub fn frames(&self) -> Vec<[f32; FRAME_PIXELS]> {
        self.samples.iter().map(|s| s.pixels).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn from_reader<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let header = rdr.headers()?.clone();
        let expected = 3 + FRAME_PIXELS;
        if header.len() != expected || &header[0] != "session" || &header[1] != "frame" || &header[2] != "label" {
            return Err(Error::Dataset(format!("header must be session,frame,label,p0..p{}", FRAME_PIXELS - 1)));
        }
        let mut samples = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 1;
            let rec = rec.map_err(|e| Error::Dataset(format!("row {row}: {e}")))?;
            if rec.len() != expected {
                return Err(Error::Dataset(format!("row {row}: {} fields, expected {expected}", rec.len())));
            }
            let field = |j: usize| rec[j].trim();
            let bad = |what: &str| Error::Dataset(format!("row {row}: malformed {what}"));
            let session = field(0).parse().map_err(|_| bad("session"))?;
            let frame = field(1).parse().map_err(|_| bad("frame"))?;
            let label = field(2).parse().map_err(|_| bad("label"))?;
            let mut pixels = [0f32; FRAME_PIXELS];
            for (p, v) in pixels.iter_mut().enumerate() {
                *v = field(3 + p).parse().map_err(|_| bad(&format!("pixel p{p}")))?;
            }
            samples.push(Sample { session, frame, label, pixels });
        }
        Self::new(samples)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn to_writer<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["session".to_string(), "frame".into(), "label".into()];
        header.extend((0..FRAME_PIXELS).map(|p| format!("p{p}")));
        wr.write_record(&header)?;
        for s in &self.samples {
            let mut rec = vec![s.session.to_string(), s.frame.to_string(), s.label.to_string()];
            rec.extend(s.pixels.iter().map(|v| v.to_string()));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_writer(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_text(rows: &[(u32, u64, usize)]) -> String {
        let mut s = String::from("session,frame,label");
        for p in 0..FRAME_PIXELS {
            s.push_str(&format!(",p{p}"));
        }
        s.push('\n');
        for (sess, f, l) in rows {
            s.push_str(&format!("{sess},{f},{l}"));
            for p in 0..FRAME_PIXELS {
                s.push_str(&format!(",{}", 20.0 + p as f32 * 0.25));
            }
            s.push('\n');
        }
        s
    }

    #[test]
    fn three_rows() {
        let d = Dataset::from_reader(csv_text(&[(1, 0, 0), (1, 1, 2), (2, 0, 3)]).as_bytes()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.sessions(), vec![1, 2]);
        assert_eq!(d.samples[1].pixels[4], 21.0);
    }

    #[test]
    fn label_four_names_row() {
        let e = Dataset::from_reader(csv_text(&[(1, 0, 0), (1, 1, 4)]).as_bytes()).unwrap_err();
        assert!(e.to_string().contains("row 2"), "{e}");
    }

    #[test]
    fn frame_order_is_enforced() {
        assert!(Dataset::from_reader(csv_text(&[(1, 3, 0), (1, 3, 0)]).as_bytes()).is_err());
        assert!(Dataset::from_reader(csv_text(&[(1, 3, 0), (2, 0, 0), (1, 4, 1)]).as_bytes()).is_ok());
    }

    #[test]
    fn malformed_field() {
        let text = csv_text(&[(1, 0, 0)]).replace("1,0,0,20", "1,0,x,20");
        assert!(Dataset::from_reader(text.as_bytes()).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let d = Dataset::from_reader(csv_text(&[(1, 0, 1), (1, 5, 2)]).as_bytes()).unwrap();
        let mut buf = Vec::new();
        d.to_writer(&mut buf).unwrap();
        assert_eq!(Dataset::from_reader(&buf[..]).unwrap(), d);
    }
}
