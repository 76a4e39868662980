//! Chronological train / validation / test partition.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::MonthStamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonthRange {
    pub from: MonthStamp,
    pub to: MonthStamp,
}

impl MonthRange {
    pub fn new(from: MonthStamp, to: MonthStamp) -> Result<Self> {
        if from > to {
            return Err(Error::Config(format!("range start {from} after end {to}")));
        }
        Ok(MonthRange { from, to })
    }

    pub fn contains(&self, m: MonthStamp) -> bool {
        m >= self.from && m <= self.to
    }

    pub fn months(&self) -> usize {
        self.from.months_until(self.to) as usize + 1
    }
}

impl fmt::Display for MonthRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.from, self.to)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPart {
    Train,
    Validation,
    Test,
}

impl fmt::Display for SplitPart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitPart::Train => "train",
            SplitPart::Validation => "validation",
            SplitPart::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPreset {
    /// Train 1980-01..1999-04, validation 1999-05..2007-03, test 2007-04..2018-06.
    Full,
    /// As `Full` with the test window ending 2017-06.
    Full2017,
    /// Train 1980-01..2013-06, test 2014-07..2018-06, no validation.
    Esg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: MonthRange,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<MonthRange>,
    pub test: MonthRange,
}

fn ym(y: i32, m: u32) -> MonthStamp {
    MonthStamp::new(y, m).expect("valid preset month")
}

impl SplitSpec {
    pub fn preset(p: SplitPreset) -> Self {
        let range = |a, b| MonthRange { from: a, to: b };
        match p {
            SplitPreset::Full => SplitSpec {
                train: range(ym(1980, 1), ym(1999, 4)),
                validation: Some(range(ym(1999, 5), ym(2007, 3))),
                test: range(ym(2007, 4), ym(2018, 6)),
            },
            SplitPreset::Full2017 => SplitSpec {
                test: range(ym(2007, 4), ym(2017, 6)),
                ..SplitSpec::preset(SplitPreset::Full)
            },
            SplitPreset::Esg => SplitSpec {
                train: range(ym(1980, 1), ym(2013, 6)),
                validation: None,
                test: range(ym(2014, 7), ym(2018, 6)),
            },
        }
    }

    /// Ranges must be well formed, ordered and non-overlapping.
    pub fn validate(&self) -> Result<()> {
        let mut ranges = vec![("train", self.train)];
        if let Some(v) = self.validation {
            ranges.push(("validation", v));
        }
        ranges.push(("test", self.test));
        for (name, r) in &ranges {
            if r.from > r.to {
                return Err(Error::Config(format!("{name} range {r} is reversed")));
            }
        }
        for w in ranges.windows(2) {
            if w[0].1.to >= w[1].1.from {
                return Err(Error::Config(format!(
                    "{} range {} must end before {} range {}",
                    w[0].0, w[0].1, w[1].0, w[1].1
                )));
            }
        }
        Ok(())
    }

    pub fn part_of(&self, m: MonthStamp) -> Option<SplitPart> {
        if self.train.contains(m) {
            Some(SplitPart::Train)
        } else if self.validation.is_some_and(|v| v.contains(m)) {
            Some(SplitPart::Validation)
        } else if self.test.contains(m) {
            Some(SplitPart::Test)
        } else {
            None
        }
    }

    pub fn range(&self, part: SplitPart) -> Option<MonthRange> {
        match part {
            SplitPart::Train => Some(self.train),
            SplitPart::Validation => self.validation,
            SplitPart::Test => Some(self.test),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid_and_match_protocol() {
        let p = SplitSpec::preset(SplitPreset::Full);
        p.validate().unwrap();
        assert_eq!(p.train.to.to_string(), "1999-04");
        assert_eq!(p.validation.unwrap().from.to_string(), "1999-05");
        assert_eq!(p.test.from.to_string(), "2007-04");
        assert_eq!(p.test.to.to_string(), "2018-06");
        let e = SplitSpec::preset(SplitPreset::Esg);
        e.validate().unwrap();
        assert!(e.validation.is_none());
        assert_eq!((e.test.from.to_string(), e.test.to.to_string()), ("2014-07".into(), "2018-06".into()));
        assert_eq!(SplitSpec::preset(SplitPreset::Full2017).test.to.to_string(), "2017-06");
    }

    #[test]
    fn assignment_and_overlap_rejection() {
        let p = SplitSpec::preset(SplitPreset::Full);
        assert_eq!(p.part_of(ym(1999, 4)), Some(SplitPart::Train));
        assert_eq!(p.part_of(ym(1999, 5)), Some(SplitPart::Validation));
        assert_eq!(p.part_of(ym(2007, 4)), Some(SplitPart::Test));
        assert_eq!(p.part_of(ym(2018, 7)), None);
        let bad = SplitSpec {
            test: MonthRange {
                from: ym(2007, 3),
                to: ym(2018, 6),
            },
            ..p
        };
        assert!(bad.validate().is_err());
        assert!(MonthRange::new(ym(2001, 1), ym(2000, 1)).is_err());
        assert_eq!(p.test.months(), 135);
    }
}
