use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::Mutex;

use super::{Asset, LeaseTable, Project, RemovedCounts, Storage, StoreError, WriterLease};
use crate::event::EventRecord;
use crate::ids::{AssetId, ProjectId};

#[derive(Default)]
struct MemProject {
    header: Option<Project>,
    events: Vec<EventRecord>,
    assets: BTreeMap<AssetId, (Asset, Vec<u8>)>,
    session: Vec<String>,
}

/// In-memory storage with the same protocol as `FsStore`.
#[derive(Default)]
pub struct MemStore {
    projects: Mutex<HashMap<ProjectId, MemProject>>,
    leases: LeaseTable,
}

impl MemStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn with<T>(&self, id: &ProjectId, f: impl FnOnce(&mut MemProject) -> T) -> Result<T, StoreError> {
        let mut g = self.projects.lock().unwrap();
        g.get_mut(id)
            .map(f)
            .ok_or_else(|| StoreError::UnknownProject(id.clone()))
    }
}

impl Storage for MemStore {
    fn create_project(&self, project: &Project) -> Result<(), StoreError> {
        let mut g = self.projects.lock().unwrap();
        if g.contains_key(&project.project_id) {
            return Err(StoreError::ProjectExists(project.project_id.clone()));
        }
        g.insert(
            project.project_id.clone(),
            MemProject {
                header: Some(project.clone()),
                ..MemProject::default()
            },
        );
        Ok(())
    }

    fn write_header(&self, project: &Project) -> Result<(), StoreError> {
        self.with(&project.project_id, |p| p.header = Some(project.clone()))
    }

    fn list_projects(&self) -> Result<Vec<ProjectId>, StoreError> {
        let mut v: Vec<_> = self.projects.lock().unwrap().keys().cloned().collect();
        v.sort();
        Ok(v)
    }

    fn project_exists(&self, id: &ProjectId) -> bool {
        self.projects.lock().unwrap().contains_key(id)
    }

    fn read_events(&self, id: &ProjectId) -> Result<Vec<EventRecord>, StoreError> {
        self.with(id, |p| p.events.clone())
    }

    fn acquire_writer(&self, id: &ProjectId) -> Result<WriterLease, StoreError> {
        let last = self.with(id, |p| p.events.last().map_or(0, |r| r.seq))?;
        Ok(self.leases.acquire(id, last))
    }

    fn release_writer(&self, lease: &WriterLease) {
        self.leases.release(lease);
    }

    fn append_event(&self, lease: &WriterLease, record: &EventRecord) -> Result<(), StoreError> {
        self.leases.append(lease, record.seq, || {
            self.with(&lease.project_id, |p| p.events.push(record.clone()))
        })
    }

    fn write_asset(&self, id: &ProjectId, asset: &Asset, bytes: &[u8]) -> Result<(), StoreError> {
        self.with(id, |p| {
            p.assets
                .entry(asset.asset_id.clone())
                .or_insert_with(|| (asset.clone(), bytes.to_vec()));
        })
    }

    fn read_asset(&self, id: &ProjectId, asset_id: &AssetId) -> Result<Vec<u8>, StoreError> {
        self.with(id, |p| p.assets.get(asset_id).map(|(_, b)| b.clone()))?
            .ok_or_else(|| StoreError::UnknownAsset(asset_id.clone()))
    }

    fn has_asset(&self, id: &ProjectId, asset_id: &AssetId) -> bool {
        self.with(id, |p| p.assets.contains_key(asset_id)).unwrap_or(false)
    }

    fn list_assets(&self, id: &ProjectId) -> Result<Vec<AssetId>, StoreError> {
        self.with(id, |p| p.assets.keys().cloned().collect())
    }

    fn delete_asset(&self, id: &ProjectId, asset_id: &AssetId) -> Result<(), StoreError> {
        self.with(id, |p| {
            p.assets.remove(asset_id);
        })
    }

    fn append_session(&self, id: &ProjectId, line: &str) -> Result<(), StoreError> {
        self.with(id, |p| p.session.push(line.to_owned()))
    }

    fn read_session(&self, id: &ProjectId) -> Result<Vec<String>, StoreError> {
        self.with(id, |p| p.session.clone())
    }

    fn delete_project(&self, id: &ProjectId) -> Result<RemovedCounts, StoreError> {
        let p = self
            .projects
            .lock()
            .unwrap()
            .remove(id)
            .ok_or_else(|| StoreError::UnknownProject(id.clone()))?;
        self.leases.forget(id);
        Ok(RemovedCounts {
            events: p.events.len(),
            assets: p.assets.len(),
            session_events: p.session.len(),
        })
    }

    fn project_dir(&self, _id: &ProjectId) -> Option<PathBuf> {
        None
    }
}
