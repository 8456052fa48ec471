use std::collections::{HashSet, VecDeque};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use crate::ids::{JobId, ProjectId};

/// Queued jobs awaiting a runner. FIFO per project; a project never has two
/// jobs running at once, so parallelism only spans projects.
#[derive(Default)]
pub(crate) struct JobBoard {
    inner: Mutex<Inner>,
    cv: Condvar,
}

#[derive(Default)]
struct Inner {
    queue: VecDeque<(ProjectId, JobId)>,
    running: HashSet<ProjectId>,
    shutdown: bool,
}

impl JobBoard {
    pub(crate) fn push(&self, project: ProjectId, job: JobId) {
        self.inner.lock().unwrap().queue.push_back((project, job));
        self.cv.notify_all();
    }

    /// Removes a queued job, returning whether it was still waiting.
    pub(crate) fn withdraw(&self, job: &JobId) -> bool {
        let mut g = self.inner.lock().unwrap();
        let before = g.queue.len();
        g.queue.retain(|(_, j)| j != job);
        before != g.queue.len()
    }

    pub(crate) fn forget_project(&self, project: &ProjectId) {
        self.inner.lock().unwrap().queue.retain(|(p, _)| p != project);
    }

    fn take(g: &mut Inner) -> Option<(ProjectId, JobId)> {
        let at = g.queue.iter().position(|(p, _)| !g.running.contains(p))?;
        let item = g.queue.remove(at)?;
        g.running.insert(item.0.clone());
        Some(item)
    }

    /// Next runnable job without waiting.
    pub(crate) fn try_take(&self) -> Option<(ProjectId, JobId)> {
        Self::take(&mut self.inner.lock().unwrap())
    }

    /// Blocks until a job is runnable or the board shuts down.
    pub(crate) fn take_blocking(&self) -> Option<(ProjectId, JobId)> {
        let mut g = self.inner.lock().unwrap();
        loop {
            if g.shutdown {
                return None;
            }
            if let Some(item) = Self::take(&mut g) {
                return Some(item);
            }
            g = self.cv.wait_timeout(g, Duration::from_millis(200)).unwrap().0;
        }
    }

    pub(crate) fn finish(&self, project: &ProjectId) {
        self.inner.lock().unwrap().running.remove(project);
        self.cv.notify_all();
    }

    pub(crate) fn is_idle(&self) -> bool {
        let g = self.inner.lock().unwrap();
        g.queue.is_empty() && g.running.is_empty()
    }

    pub(crate) fn shutdown(&self) {
        self.inner.lock().unwrap().shutdown = true;
        self.cv.notify_all();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_running_job_per_project() {
        let b = JobBoard::default();
        let (p, q) = (ProjectId::new("p"), ProjectId::new("q"));
        b.push(p.clone(), JobId::new("1"));
        b.push(p.clone(), JobId::new("2"));
        b.push(q.clone(), JobId::new("3"));
        assert_eq!(b.try_take().unwrap().1, JobId::new("1"));
        assert_eq!(b.try_take().unwrap().1, JobId::new("3"));
        assert_eq!(b.try_take(), None);
        b.finish(&p);
        assert_eq!(b.try_take().unwrap().1, JobId::new("2"));
        assert!(!b.withdraw(&JobId::new("2")));
    }
}
