//! Task schedules: which classes arrive when, and in which role.
//!
//! A schedule lists, per task, the classes whose real training data arrives
//! (`new_seen`), the classes introduced by attribute only (`new_unseen`),
//! and previously unseen classes whose data arrives now (`converted`). The
//! three settings read these lists differently:
//!
//! * **static**: the whole class inventory is known from the start; task t
//!   reveals training data for its `new_seen` block and everything not yet
//!   revealed counts as unseen. `new_unseen` stays empty.
//! * **dynamic**: each task introduces disjoint new seen and new unseen
//!   classes; unseen classes never change role.
//! * **online**: dynamic, plus tasks may convert earlier unseen classes to
//!   seen when their data shows up.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ClassId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Static,
    Dynamic,
    Online,
}

impl Setting {
    pub fn tag(self) -> &'static str {
        match self {
            Setting::Static => "static",
            Setting::Dynamic => "dynamic",
            Setting::Online => "online",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "static" => Ok(Setting::Static),
            "dynamic" => Ok(Setting::Dynamic),
            "online" => Ok(Setting::Online),
            other => Err(Error::validation(
                "setting",
                format!("unknown setting `{other}`; expected static, dynamic, or online"),
            )),
        }
    }
}

/// One task boundary.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub t: usize,
    pub new_seen: Vec<ClassId>,
    #[serde(default)]
    pub new_unseen: Vec<ClassId>,
    #[serde(default)]
    pub converted: Vec<ClassId>,
}

/// The full experiment plan over a fixed class inventory `0..num_classes`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSchedule {
    pub setting: Setting,
    pub num_classes: usize,
    pub tasks: Vec<TaskSpec>,
}

/// The five ready-made benchmark splits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Apy,
    Awa1,
    Awa2,
    Cub,
    Sun,
}

impl Preset {
    pub fn tag(self) -> &'static str {
        match self {
            Preset::Apy => "apy",
            Preset::Awa1 => "awa1",
            Preset::Awa2 => "awa2",
            Preset::Cub => "cub",
            Preset::Sun => "sun",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "apy" => Ok(Preset::Apy),
            "awa1" => Ok(Preset::Awa1),
            "awa2" => Ok(Preset::Awa2),
            "cub" => Ok(Preset::Cub),
            "sun" => Ok(Preset::Sun),
            other => Err(Error::validation(
                "preset",
                format!("unknown preset `{other}`; expected apy, awa1, awa2, cub, or sun"),
            )),
        }
    }

    /// (classes, tasks, seen per task in static, new seen and new unseen per
    /// task in dynamic). The online split holds one seen slot back for the
    /// per-task conversion: (seen - 1) new seen, (unseen + 1) new unseen.
    fn arithmetic(self) -> (usize, usize, usize, usize, usize) {
        match self {
            Preset::Apy => (32, 4, 8, 5, 3),
            Preset::Awa1 => (50, 5, 10, 8, 2),
            Preset::Awa2 => (50, 5, 10, 8, 2),
            Preset::Cub => (200, 20, 10, 7, 2),
            Preset::Sun => (717, 15, 47, 43, 4),
        }
    }
}

impl TaskSchedule {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn task(&self, t: usize) -> Result<&TaskSpec> {
        if t == 0 || t > self.tasks.len() {
            return Err(Error::index(format!(
                "task {t} in a {}-task schedule",
                self.tasks.len()
            )));
        }
        Ok(&self.tasks[t - 1])
    }

    /// Classes that hold the seen role at the end of task t.
    pub fn seen_at(&self, t: usize) -> Result<Vec<ClassId>> {
        self.task(t)?;
        let mut seen = BTreeSet::new();
        for spec in &self.tasks[..t] {
            seen.extend(spec.new_seen.iter().copied());
            seen.extend(spec.converted.iter().copied());
        }
        Ok(seen.into_iter().collect())
    }

    /// Classes that hold the unseen role at the end of task t.
    pub fn unseen_at(&self, t: usize) -> Result<Vec<ClassId>> {
        let seen: BTreeSet<ClassId> = self.seen_at(t)?.into_iter().collect();
        match self.setting {
            Setting::Static => Ok((0..self.num_classes).filter(|c| !seen.contains(c)).collect()),
            Setting::Dynamic | Setting::Online => {
                let mut unseen = BTreeSet::new();
                for spec in &self.tasks[..t] {
                    unseen.extend(spec.new_unseen.iter().copied());
                }
                Ok(unseen.into_iter().filter(|c| !seen.contains(c)).collect())
            }
        }
    }

    /// Classes whose attributes the model has by the end of task t; this is
    /// the classification candidate pool. Static exposes the full inventory
    /// from the first task.
    pub fn encountered_at(&self, t: usize) -> Result<Vec<ClassId>> {
        self.task(t)?;
        match self.setting {
            Setting::Static => Ok((0..self.num_classes).collect()),
            Setting::Dynamic | Setting::Online => {
                let mut enc = BTreeSet::new();
                for spec in &self.tasks[..t] {
                    enc.extend(spec.new_seen.iter().copied());
                    enc.extend(spec.new_unseen.iter().copied());
                }
                Ok(enc.into_iter().collect())
            }
        }
    }

    /// Classes introduced by task t (the task's own column in the accuracy
    /// matrices). Static tasks own their revealed block.
    pub fn introduced_at(&self, t: usize) -> Result<Vec<ClassId>> {
        let spec = self.task(t)?;
        let mut out: Vec<ClassId> = match self.setting {
            Setting::Static => spec.new_seen.clone(),
            Setting::Dynamic | Setting::Online => spec
                .new_seen
                .iter()
                .chain(&spec.new_unseen)
                .copied()
                .collect(),
        };
        out.sort_unstable();
        Ok(out)
    }

    /// Classes whose real training rows are usable during task t: the new
    /// seen block plus any conversions landing this task. Earlier seen
    /// classes are covered by replay, not by their real rows.
    pub fn train_classes_at(&self, t: usize) -> Result<Vec<ClassId>> {
        let spec = self.task(t)?;
        let mut out: Vec<ClassId> =
            spec.new_seen.iter().chain(&spec.converted).copied().collect();
        out.sort_unstable();
        Ok(out)
    }

    /// Classes to hand the model as newly-introduced unseen at task t. For
    /// static that is the entire not-yet-revealed remainder at task 1 and
    /// nothing afterwards; otherwise the task's own new_unseen list.
    pub fn registration_unseen_at(&self, t: usize) -> Result<Vec<ClassId>> {
        let spec = self.task(t)?;
        match self.setting {
            Setting::Static => {
                if t == 1 {
                    let taken: BTreeSet<ClassId> = spec.new_seen.iter().copied().collect();
                    Ok((0..self.num_classes).filter(|c| !taken.contains(c)).collect())
                } else {
                    Ok(Vec::new())
                }
            }
            Setting::Dynamic | Setting::Online => Ok(spec.new_unseen.clone()),
        }
    }

    /// Structural soundness of the whole plan.
    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::schedule("a schedule needs at least one task"));
        }
        if self.num_classes == 0 {
            return Err(Error::schedule("empty class inventory"));
        }
        let mut listed: BTreeSet<ClassId> = BTreeSet::new();
        let mut unseen_so_far: BTreeSet<ClassId> = BTreeSet::new();
        let mut converted_so_far: BTreeSet<ClassId> = BTreeSet::new();
        for (i, spec) in self.tasks.iter().enumerate() {
            let t = i + 1;
            if spec.t != t {
                return Err(Error::schedule(format!(
                    "task at position {t} is numbered {}",
                    spec.t
                )));
            }
            if spec.new_seen.is_empty() {
                return Err(Error::schedule(format!("task {t} introduces no seen classes")));
            }
            let mut this_task: BTreeSet<ClassId> = BTreeSet::new();
            for (field, ids) in [
                ("new_seen", &spec.new_seen),
                ("new_unseen", &spec.new_unseen),
                ("converted", &spec.converted),
            ] {
                for &c in ids {
                    if c >= self.num_classes {
                        return Err(Error::schedule(format!(
                            "task {t} lists class {c} outside the {}-class inventory",
                            self.num_classes
                        )));
                    }
                    if !this_task.insert(c) {
                        return Err(Error::schedule(format!(
                            "task {t} lists class {c} twice (last seen in `{field}`)"
                        )));
                    }
                }
            }
            for &c in spec.new_seen.iter().chain(&spec.new_unseen) {
                if !listed.insert(c) {
                    return Err(Error::schedule(format!(
                        "class {c} is introduced by two different tasks"
                    )));
                }
            }
            match self.setting {
                Setting::Static => {
                    if !spec.new_unseen.is_empty() || !spec.converted.is_empty() {
                        return Err(Error::schedule(format!(
                            "static schedules list only new_seen; task {t} has more"
                        )));
                    }
                }
                Setting::Dynamic => {
                    if !spec.converted.is_empty() {
                        return Err(Error::schedule(format!(
                            "dynamic schedules never convert classes; task {t} does"
                        )));
                    }
                }
                Setting::Online => {
                    for &c in &spec.converted {
                        if !unseen_so_far.contains(&c) {
                            return Err(Error::schedule(format!(
                                "task {t} converts class {c}, which no earlier task introduced as unseen"
                            )));
                        }
                        if !converted_so_far.insert(c) {
                            return Err(Error::schedule(format!("class {c} converted twice")));
                        }
                    }
                }
            }
            unseen_so_far.extend(spec.new_unseen.iter().copied());
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let schedule: TaskSchedule = serde_json::from_str(text)?;
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Evenly distributes an arbitrary inventory over `num_tasks` tasks with the
/// same structure as the named benchmark splits. Classes per task is
/// `k = floor(num_classes / num_tasks)`; leftovers are never introduced
/// (static keeps them permanently unseen). Dynamic carves each task's block
/// into roughly one quarter unseen (at least one of each role); online holds
/// one further seen slot back and converts one class per task from the
/// second task on, always the lowest-id unconverted class introduced as
/// unseen by the previous task.
pub fn build_schedule(
    num_classes: usize,
    setting: Setting,
    num_tasks: usize,
) -> Result<TaskSchedule> {
    if num_tasks == 0 {
        return Err(Error::schedule("need at least one task"));
    }
    let k = num_classes / num_tasks;
    if k == 0 {
        return Err(Error::schedule(format!(
            "{num_classes} classes cannot fill {num_tasks} tasks"
        )));
    }
    let (s, u) = match setting {
        Setting::Static => (k, 0),
        Setting::Dynamic | Setting::Online => {
            if k < 2 {
                return Err(Error::schedule(format!(
                    "{num_classes} classes over {num_tasks} tasks leave {k} per task; need 2 for a seen/unseen split"
                )));
            }
            let quarter = ((k as f64) / 4.0).round() as usize;
            let unseen = quarter.clamp(1, k - 1);
            let seen = k - unseen;
            if setting == Setting::Online {
                if seen < 2 {
                    return Err(Error::schedule(format!(
                        "{num_classes} classes over {num_tasks} tasks cannot hold back a conversion slot"
                    )));
                }
                (seen - 1, unseen + 1)
            } else {
                (seen, unseen)
            }
        }
    };
    Ok(assemble(setting, num_classes, num_tasks, s, u))
}

/// One of the five benchmark splits, with the published per-task counts.
pub fn build_preset(preset: Preset, setting: Setting) -> TaskSchedule {
    let (c, t, static_k, dyn_s, dyn_u) = preset.arithmetic();
    let (s, u) = match setting {
        Setting::Static => (static_k, 0),
        Setting::Dynamic => (dyn_s, dyn_u),
        Setting::Online => (dyn_s - 1, dyn_u + 1),
    };
    assemble(setting, c, t, s, u)
}

/// Lays out sequential class ids into per-task seen/unseen blocks and, for
/// online, threads one conversion per task from task 2 on.
fn assemble(
    setting: Setting,
    num_classes: usize,
    num_tasks: usize,
    s: usize,
    u: usize,
) -> TaskSchedule {
    let mut tasks = Vec::with_capacity(num_tasks);
    let mut next = 0usize;
    let mut prev_unseen: Vec<ClassId> = Vec::new();
    for t in 1..=num_tasks {
        let new_seen: Vec<ClassId> = (next..next + s).collect();
        next += s;
        let new_unseen: Vec<ClassId> = (next..next + u).collect();
        next += u;
        let converted = if setting == Setting::Online && t > 1 {
            // lowest-id class the previous task introduced as unseen;
            // nothing else converts from that block, so the front is free
            vec![prev_unseen[0]]
        } else {
            Vec::new()
        };
        prev_unseen = new_unseen.clone();
        tasks.push(TaskSpec { t, new_seen, new_unseen, converted });
    }
    debug_assert!(next <= num_classes);
    TaskSchedule { setting, num_classes, tasks }
}
