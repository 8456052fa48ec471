use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::{Asset, LeaseTable, Project, RemovedCounts, Storage, StoreError, WriterLease};
use crate::event::EventRecord;
use crate::ids::{AssetId, ProjectId};

const HEADER: &str = "project.json";
const EVENTS: &str = "events.jsonl";
const SESSION: &str = "session.jsonl";
const ASSETS: &str = "assets";
const LOCK: &str = ".lock";

/// Directory-backed storage rooted at a data directory.
pub struct FsStore {
    root: PathBuf,
    fsync: bool,
    leases: LeaseTable,
}

impl FsStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(root.join("projects"))?;
        Ok(Self {
            root,
            fsync: true,
            leases: LeaseTable::default(),
        })
    }

    /// Disables fsync after each append. For tests and throwaway runs.
    pub fn without_fsync(mut self) -> Self {
        self.fsync = false;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, id: &ProjectId) -> PathBuf {
        self.root.join("projects").join(id.as_str())
    }

    fn require(&self, id: &ProjectId) -> Result<PathBuf, StoreError> {
        let d = self.dir(id);
        if d.join(HEADER).is_file() {
            Ok(d)
        } else {
            Err(StoreError::UnknownProject(id.clone()))
        }
    }

    fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = File::create(&tmp)?;
            f.write_all(bytes)?;
            if self.fsync {
                f.sync_all()?;
            }
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Complete records of the log and the byte length they occupy. A torn
    /// final line (no newline) is left out.
    fn scan_log(path: &Path) -> Result<(Vec<EventRecord>, u64), StoreError> {
        let mut reader = BufReader::new(File::open(path)?);
        let (mut out, mut good_len, mut line) = (vec![], 0u64, String::new());
        loop {
            line.clear();
            let n = reader.read_line(&mut line)?;
            if n == 0 || !line.ends_with('\n') {
                break;
            }
            let rec: EventRecord = serde_json::from_str(line.trim_end())
                .map_err(|e| StoreError::CorruptLog(format!("line {}: {e}", out.len() + 1)))?;
            out.push(rec);
            good_len += n as u64;
        }
        Ok((out, good_len))
    }
}

impl Storage for FsStore {
    fn create_project(&self, project: &Project) -> Result<(), StoreError> {
        let d = self.dir(&project.project_id);
        if d.exists() {
            return Err(StoreError::ProjectExists(project.project_id.clone()));
        }
        fs::create_dir_all(d.join(ASSETS))?;
        File::create(d.join(EVENTS))?;
        self.write_header(project)
    }

    fn write_header(&self, project: &Project) -> Result<(), StoreError> {
        let mut bytes = serde_json::to_vec_pretty(project).map_err(|e| StoreError::StorageFailure(e.to_string()))?;
        bytes.push(b'\n');
        self.write_atomic(&self.dir(&project.project_id).join(HEADER), &bytes)
    }

    fn list_projects(&self) -> Result<Vec<ProjectId>, StoreError> {
        let mut out = vec![];
        for e in fs::read_dir(self.root.join("projects"))? {
            let e = e?;
            if e.path().join(HEADER).is_file() {
                out.push(ProjectId::new(e.file_name().to_string_lossy()));
            }
        }
        out.sort();
        Ok(out)
    }

    fn project_exists(&self, id: &ProjectId) -> bool {
        self.require(id).is_ok()
    }

    fn read_events(&self, id: &ProjectId) -> Result<Vec<EventRecord>, StoreError> {
        let d = self.require(id)?;
        Ok(Self::scan_log(&d.join(EVENTS))?.0)
    }

    fn acquire_writer(&self, id: &ProjectId) -> Result<WriterLease, StoreError> {
        let d = self.require(id)?;
        let log = d.join(EVENTS);
        let (records, good_len) = Self::scan_log(&log)?;
        if fs::metadata(&log)?.len() > good_len {
            OpenOptions::new().write(true).open(&log)?.set_len(good_len)?;
        }
        Ok(self.leases.acquire(id, records.last().map_or(0, |r| r.seq)))
    }

    fn release_writer(&self, lease: &WriterLease) {
        self.leases.release(lease);
    }

    fn append_event(&self, lease: &WriterLease, record: &EventRecord) -> Result<(), StoreError> {
        let path = self.dir(&lease.project_id).join(EVENTS);
        let mut line = serde_json::to_string(record).map_err(|e| StoreError::StorageFailure(e.to_string()))?;
        line.push('\n');
        self.leases.append(lease, record.seq, || {
            let mut f = OpenOptions::new().append(true).open(&path)?;
            f.write_all(line.as_bytes())?;
            if self.fsync {
                f.sync_data()?;
            }
            Ok(())
        })
    }

    fn write_asset(&self, id: &ProjectId, asset: &Asset, bytes: &[u8]) -> Result<(), StoreError> {
        let d = self.require(id)?.join(ASSETS);
        let data = d.join(asset.asset_id.as_str());
        if !data.exists() {
            self.write_atomic(&data, bytes)?;
        }
        let sidecar = d.join(format!("{}.json", asset.asset_id));
        if !sidecar.exists() {
            let mut rec = serde_json::to_vec_pretty(asset).map_err(|e| StoreError::StorageFailure(e.to_string()))?;
            rec.push(b'\n');
            self.write_atomic(&sidecar, &rec)?;
        }
        Ok(())
    }

    fn read_asset(&self, id: &ProjectId, asset_id: &AssetId) -> Result<Vec<u8>, StoreError> {
        let d = self.require(id)?;
        fs::read(d.join(ASSETS).join(asset_id.as_str())).map_err(|_| StoreError::UnknownAsset(asset_id.clone()))
    }

    fn has_asset(&self, id: &ProjectId, asset_id: &AssetId) -> bool {
        self.dir(id).join(ASSETS).join(asset_id.as_str()).is_file()
    }

    fn list_assets(&self, id: &ProjectId) -> Result<Vec<AssetId>, StoreError> {
        let d = self.require(id)?.join(ASSETS);
        let mut out = vec![];
        for e in fs::read_dir(d)? {
            let name = e?.file_name().to_string_lossy().into_owned();
            let id = AssetId::new(name);
            if id.is_well_formed() {
                out.push(id);
            }
        }
        out.sort();
        Ok(out)
    }

    fn delete_asset(&self, id: &ProjectId, asset_id: &AssetId) -> Result<(), StoreError> {
        let d = self.require(id)?.join(ASSETS);
        for p in [d.join(asset_id.as_str()), d.join(format!("{asset_id}.json"))] {
            match fs::remove_file(&p) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(e.into()),
            }
        }
        Ok(())
    }

    fn append_session(&self, id: &ProjectId, line: &str) -> Result<(), StoreError> {
        let d = self.require(id)?;
        let mut f = OpenOptions::new().create(true).append(true).open(d.join(SESSION))?;
        f.write_all(line.as_bytes())?;
        f.write_all(b"\n")?;
        if self.fsync {
            f.sync_data()?;
        }
        Ok(())
    }

    fn read_session(&self, id: &ProjectId) -> Result<Vec<String>, StoreError> {
        let d = self.require(id)?;
        match fs::read_to_string(d.join(SESSION)) {
            Ok(s) => Ok(s.lines().filter(|l| !l.is_empty()).map(str::to_owned).collect()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(vec![]),
            Err(e) => Err(e.into()),
        }
    }

    fn delete_project(&self, id: &ProjectId) -> Result<RemovedCounts, StoreError> {
        let d = self.require(id)?;
        let counts = RemovedCounts {
            events: self.read_events(id)?.len(),
            assets: self.list_assets(id)?.len(),
            session_events: self.read_session(id)?.len(),
        };
        fs::remove_dir_all(&d)?;
        self.leases.forget(id);
        Ok(counts)
    }

    fn project_dir(&self, id: &ProjectId) -> Option<PathBuf> {
        Some(self.dir(id))
    }
}

/// Single-instance lock on a data directory, released on drop. A lock left
/// by a process that no longer exists is taken over.
#[derive(Debug)]
pub struct DataDirLock {
    path: PathBuf,
}

impl DataDirLock {
    pub fn acquire(root: &Path) -> Result<Self, StoreError> {
        fs::create_dir_all(root)?;
        let path = root.join(LOCK);
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    writeln!(f, "{}", std::process::id())?;
                    return Ok(Self { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let holder = fs::read_to_string(&path).unwrap_or_default();
                    let pid = holder.trim();
                    if pid_alive(pid) {
                        return Err(StoreError::LeaseHeld(format!("pid {pid}")));
                    }
                    fs::remove_file(&path)?;
                }
                Err(e) => return Err(e.into()),
            }
        }
        Err(StoreError::LeaseHeld(path.display().to_string()))
    }
}

fn pid_alive(pid: &str) -> bool {
    if pid.is_empty() || pid.parse::<u32>().is_err() {
        return false;
    }
    if !Path::new("/proc/self").exists() {
        // Without procfs there is no cheap liveness check; assume held.
        return true;
    }
    Path::new("/proc").join(pid).exists()
}

impl Drop for DataDirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
