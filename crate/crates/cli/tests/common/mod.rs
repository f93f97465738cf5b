#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use learnfx::panel::{CohortSchedule, ExperimentPanel};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_learnfx"))
}

pub fn run(args: &[&str], threads: Option<usize>) -> Output {
    let mut cmd = bin();
    cmd.args(args);
    match threads {
        Some(n) => cmd.env("LEARNFX_THREADS", n.to_string()),
        None => cmd.env_remove("LEARNFX_THREADS"),
    };
    cmd.output().expect("spawn learnfx")
}

/// Window-indexed CSV of every stored value, full precision.
pub fn panel_csv(panel: &ExperimentPanel<f64>) -> String {
    let mut out = String::from("unit_id,cohort,window,value\n");
    for u in panel.units() {
        for (w, v) in u.values() {
            out.push_str(&format!("{},{},{w},{v:?}\n", u.id(), u.cohort()));
        }
    }
    out
}

pub fn schedule_json(schedule: &CohortSchedule) -> String {
    serde_json::to_string(&schedule.to_file()).unwrap()
}

/// Writes `panel` and `schedule` into `dir`, returning their paths.
pub fn write_inputs(dir: &Path, panel: &ExperimentPanel<f64>, schedule: &CohortSchedule) -> (PathBuf, PathBuf) {
    let input = dir.join("panel.csv");
    let sched = dir.join("schedule.json");
    std::fs::write(&input, panel_csv(panel)).unwrap();
    std::fs::write(&sched, schedule_json(schedule)).unwrap();
    (input, sched)
}

pub fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, contents).unwrap();
    p
}
