use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Arm a cohort is assigned to in one window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arm {
    #[serde(rename = "C")]
    Control,
    #[serde(rename = "T")]
    Treatment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignKind {
    TwoCohort,
    Ladder,
}

/// Cohort-by-window arm assignments.
///
/// In both designs cohort 1 is always control and cohort 2 always treatment.
/// A ladder additionally moves cohort `i >= 3` from control to treatment at
/// window `i - 1`, so it has one more cohort than windows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CohortSchedule {
    design: DesignKind,
    // assignments[cohort - 1][window - 1]
    assignments: Vec<Vec<Arm>>,
}

/// On-disk schedule document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleFile {
    pub design: DesignKind,
    pub cohorts: usize,
    pub windows: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignments: Option<Vec<Vec<Arm>>>,
}

impl CohortSchedule {
    pub fn two_cohort(windows: usize) -> Result<Self> {
        if windows == 0 {
            return Err(Error::InvalidSchedule("at least one window is required".into()));
        }
        Ok(Self {
            design: DesignKind::TwoCohort,
            assignments: vec![vec![Arm::Control; windows], vec![Arm::Treatment; windows]],
        })
    }

    /// Ladder design with `cohorts` cohorts over `cohorts - 1` windows.
    pub fn ladder(cohorts: usize) -> Result<Self> {
        if cohorts < 3 {
            return Err(Error::InvalidSchedule(format!(
                "a ladder needs at least 3 cohorts, got {cohorts}"
            )));
        }
        let windows = cohorts - 1;
        let assignments = (1..=cohorts)
            .map(|cohort| {
                (1..=windows)
                    .map(|window| match cohort {
                        1 => Arm::Control,
                        2 => Arm::Treatment,
                        i if window + 1 >= i => Arm::Treatment,
                        _ => Arm::Control,
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            design: DesignKind::Ladder,
            assignments,
        })
    }

    /// Builds a schedule from explicit assignments, validating them against the design.
    pub fn from_assignments(design: DesignKind, assignments: Vec<Vec<Arm>>) -> Result<Self> {
        let expected = match design {
            DesignKind::TwoCohort => {
                let windows = assignments.first().map_or(0, Vec::len);
                Self::two_cohort(windows)?
            }
            DesignKind::Ladder => Self::ladder(assignments.len())?,
        };
        if expected.assignments != assignments {
            return Err(Error::InvalidSchedule(format!(
                "assignments do not follow the {} design",
                match design {
                    DesignKind::TwoCohort => "two-cohort",
                    DesignKind::Ladder => "ladder",
                }
            )));
        }
        Ok(expected)
    }

    pub fn from_file(file: &ScheduleFile) -> Result<Self> {
        let schedule = match &file.assignments {
            Some(rows) => Self::from_assignments(file.design, rows.clone())?,
            None => match file.design {
                DesignKind::TwoCohort => Self::two_cohort(file.windows)?,
                DesignKind::Ladder => Self::ladder(file.cohorts)?,
            },
        };
        if schedule.cohorts() != file.cohorts || schedule.windows() != file.windows {
            return Err(Error::InvalidSchedule(format!(
                "declared {} cohorts x {} windows, design implies {} x {}",
                file.cohorts,
                file.windows,
                schedule.cohorts(),
                schedule.windows()
            )));
        }
        Ok(schedule)
    }

    pub fn to_file(&self) -> ScheduleFile {
        ScheduleFile {
            design: self.design,
            cohorts: self.cohorts(),
            windows: self.windows(),
            assignments: Some(self.assignments.clone()),
        }
    }

    pub fn design(&self) -> DesignKind {
        self.design
    }

    pub fn cohorts(&self) -> usize {
        self.assignments.len()
    }

    pub fn windows(&self) -> usize {
        self.assignments.first().map_or(0, Vec::len)
    }

    /// Arm of `cohort` in `window` (both 1-based); `None` when out of range.
    pub fn arm(&self, cohort: usize, window: usize) -> Option<Arm> {
        self.assignments
            .get(cohort.checked_sub(1)?)?
            .get(window.checked_sub(1)?)
            .copied()
    }

    /// First window in which `cohort` is treated.
    pub fn treatment_start(&self, cohort: usize) -> Option<usize> {
        (1..=self.windows()).find(|&w| self.arm(cohort, w) == Some(Arm::Treatment))
    }

    /// Windows of treatment exposure for `cohort` at `window`, counting the
    /// first treated window as 1. Zero while in control.
    pub fn exposure_age(&self, cohort: usize, window: usize) -> usize {
        match self.treatment_start(cohort) {
            Some(start) if window >= start => window - start + 1,
            _ => 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_invariant_holds() {
        for k in 3..=16 {
            let s = CohortSchedule::ladder(k).unwrap();
            assert_eq!(s.cohorts(), k);
            assert_eq!(s.windows(), k - 1);
            for w in 1..k {
                assert_eq!(s.arm(1, w), Some(Arm::Control));
                assert_eq!(s.arm(2, w), Some(Arm::Treatment));
            }
            for i in 3..=k {
                assert_eq!(s.treatment_start(i), Some(i - 1));
                let switches = (2..k).filter(|&w| s.arm(i, w) != s.arm(i, w - 1)).count();
                assert_eq!(switches, 1, "cohort {i} switches once");
            }
        }
    }

    #[test]
    fn exposure_ages() {
        let s = CohortSchedule::ladder(4).unwrap();
        assert_eq!(s.exposure_age(2, 3), 3);
        assert_eq!(s.exposure_age(3, 3), 2);
        assert_eq!(s.exposure_age(4, 3), 1);
        assert_eq!(s.exposure_age(4, 2), 0);
        assert_eq!(s.exposure_age(1, 3), 0);
    }

    #[test]
    fn schedule_file_round_trip_and_validation() {
        let json = r#"{"design":"ladder","cohorts":3,"windows":2,
            "assignments":[["C","C"],["T","T"],["C","T"]]}"#;
        let file: ScheduleFile = serde_json::from_str(json).unwrap();
        let s = CohortSchedule::from_file(&file).unwrap();
        assert_eq!(s, CohortSchedule::ladder(3).unwrap());
        assert_eq!(CohortSchedule::from_file(&s.to_file()).unwrap(), s);

        let bad = r#"{"design":"ladder","cohorts":3,"windows":2,
            "assignments":[["C","C"],["T","T"],["C","C"]]}"#;
        let file: ScheduleFile = serde_json::from_str(bad).unwrap();
        assert!(CohortSchedule::from_file(&file).is_err());

        let mismatch = r#"{"design":"two-cohort","cohorts":3,"windows":4}"#;
        let file: ScheduleFile = serde_json::from_str(mismatch).unwrap();
        assert!(CohortSchedule::from_file(&file).is_err());
    }
}
