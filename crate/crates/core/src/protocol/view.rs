use crate::error::{Error, Result};
use crate::predictor::TaskData;
use crate::stream::{Stream, TaskKind};

/// Descriptive fields of a visible task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskInfo<'a> {
    pub index: usize,
    pub id: &'a str,
    pub name: &'a str,
    pub year: i32,
    pub domain: &'a str,
    pub kind: TaskKind,
    pub num_classes: usize,
}

/// Read access to a stream up to and including the task at `cursor`. Only
/// training and validation splits are reachable; any request for a later
/// task fails with [`Error::Causality`].
#[derive(Debug, Clone, Copy)]
pub struct CausalView<'a> {
    stream: &'a Stream,
    cursor: usize,
}

impl<'a> CausalView<'a> {
    pub fn new(stream: &'a Stream, cursor: usize) -> Result<Self> {
        if cursor >= stream.len() {
            return Err(Error::InvalidStream(format!("cursor {cursor} beyond a stream of {} tasks", stream.len())));
        }
        Ok(Self { stream, cursor })
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    fn check(&self, index: usize) -> Result<()> {
        if index > self.cursor {
            return Err(Error::Causality { cursor: self.cursor, requested: index });
        }
        Ok(())
    }

    pub fn task(&self, index: usize) -> Result<TaskData<'a>> {
        self.check(index)?;
        let t = self.stream.task(index).expect("index checked against cursor");
        Ok(TaskData::of(t))
    }

    pub fn current(&self) -> TaskData<'a> {
        self.task(self.cursor).expect("cursor is visible")
    }

    pub fn info(&self, index: usize) -> Result<TaskInfo<'a>> {
        self.check(index)?;
        let t = self.stream.task(index).expect("index checked against cursor");
        Ok(TaskInfo {
            index,
            id: &t.id,
            name: &t.name,
            year: t.year,
            domain: &t.domain,
            kind: t.kind,
            num_classes: t.num_classes,
        })
    }

    /// Looks a task up by id; ids of later tasks are a causality violation.
    pub fn task_by_id(&self, id: &str) -> Result<TaskData<'a>> {
        match self.stream.index_of(id) {
            Some(i) => self.task(i),
            None => Err(Error::InvalidTask(format!("no task `{id}` in the stream"))),
        }
    }

    pub fn visible_ids(&self) -> Vec<&'a str> {
        self.stream.tasks()[..=self.cursor].iter().map(|t| t.id.as_str()).collect()
    }
}
