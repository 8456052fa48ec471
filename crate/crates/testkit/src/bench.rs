use std::sync::Arc;

use reeltree_core::clock::ManualClock;
use reeltree_core::engine::Engine;
use reeltree_core::ids::{IdScheme, ProjectId};
use reeltree_core::state::ProjectState;
use reeltree_core::store::{MemStore, Storage};

/// One in-memory project on a manually advanced clock.
pub struct Bench {
    pub engine: Engine,
    pub clock: Arc<ManualClock>,
    pub storage: Arc<dyn Storage>,
    pub pid: ProjectId,
}

impl Bench {
    pub fn new(seed: u64) -> Self {
        let storage: Arc<dyn Storage> = Arc::new(MemStore::new());
        let clock = Arc::new(ManualClock::new(1_000));
        let engine = Engine::builder(storage.clone())
            .clock(clock.clone())
            .id_scheme(IdScheme::Seeded(seed))
            .build()
            .expect("default engine builds");
        let pid = engine
            .create_project("bench")
            .expect("fresh store")
            .project_id()
            .clone();
        Self {
            engine,
            clock,
            storage,
            pid,
        }
    }

    pub fn state(&self) -> Arc<ProjectState> {
        self.engine.snapshot(&self.pid).expect("project exists")
    }

    /// The state folded from the stored log alone.
    pub fn replayed(&self) -> Result<ProjectState, String> {
        let events = self.storage.read_events(&self.pid).map_err(|e| e.to_string())?;
        ProjectState::replay(&events).map_err(|e| e.to_string())
    }

    /// Runs everything queued, one simulated second per job.
    pub fn run_jobs(&self) -> usize {
        self.clock.advance(1_000);
        self.engine.run_queued().len()
    }
}

pub fn bytes(state: &ProjectState) -> Vec<u8> {
    serde_json::to_vec(state).expect("state serializes")
}
