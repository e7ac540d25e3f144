//! Kernel-level object contexts keyed by file inode or socket.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::memory::{FrameId, TierId, TierSystem};
use crate::objects::{ObjError, ObjectId, ObjectKind, ObjectStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum KlocKey {
    FileInode(u64),
    Socket(u64),
}

impl KlocKey {
    pub fn is_file(self) -> bool {
        matches!(self, KlocKey::FileInode(_))
    }
}

impl fmt::Display for KlocKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KlocKey::FileInode(id) => write!(f, "file:{id}"),
            KlocKey::Socket(id) => write!(f, "sock:{id}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KlocState {
    Active,
    Inactive,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Kloc {
    pub key: KlocKey,
    pub object_map: BTreeMap<ObjectId, ObjectKind>,
    pub state: KlocState,
    pub active_cpus: BTreeSet<u32>,
    pub last_active_ns: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KlocError {
    #[error("unknown context {0}")]
    UnknownKloc(KlocKey),
    #[error("{1} already mapped in {0}")]
    DuplicateInsert(KlocKey, ObjectId),
    #[error(transparent)]
    Obj(#[from] ObjError),
}

#[derive(Debug, Clone, Default)]
pub struct KlocTable {
    klocs: BTreeMap<KlocKey, Kloc>,
    cpu_current: BTreeMap<u32, KlocKey>,
    /// ACTIVE contexts with no cpu attached, ordered by when they went quiet.
    idle: BTreeSet<(u64, KlocKey)>,
    epoch: u64,
}

impl KlocTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.klocs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.klocs.is_empty()
    }

    pub fn get(&self, key: KlocKey) -> Option<&Kloc> {
        self.klocs.get(&key)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Kloc> {
        self.klocs.values()
    }

    /// Bumped when a context goes INACTIVE or is dropped.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn is_active(&self, key: KlocKey) -> bool {
        self.klocs.get(&key).is_some_and(|k| k.state == KlocState::Active)
    }

    pub fn current(&self, cpu: u32) -> Option<KlocKey> {
        self.cpu_current.get(&cpu).copied()
    }

    pub fn get_or_create(&mut self, key: KlocKey, now: u64) -> &Kloc {
        self.klocs.entry(key).or_insert_with(|| Kloc {
            key,
            object_map: BTreeMap::new(),
            state: KlocState::Inactive,
            active_cpus: BTreeSet::new(),
            last_active_ns: now,
        })
    }

    fn detach_cpu(&mut self, cpu: u32, now: u64) {
        if let Some(prev) = self.cpu_current.remove(&cpu) {
            if let Some(k) = self.klocs.get_mut(&prev) {
                k.active_cpus.remove(&cpu);
                k.last_active_ns = k.last_active_ns.max(now);
                if k.active_cpus.is_empty() && k.state == KlocState::Active {
                    self.idle.insert((k.last_active_ns, prev));
                }
            }
        }
    }

    pub fn on_op_begin(&mut self, cpu: u32, key: KlocKey, now: u64) {
        if self.cpu_current.get(&cpu) != Some(&key) {
            self.detach_cpu(cpu, now);
        }
        self.get_or_create(key, now);
        let k = self.klocs.get_mut(&key).expect("created above");
        self.idle.remove(&(k.last_active_ns, key));
        k.active_cpus.insert(cpu);
        k.state = KlocState::Active;
        k.last_active_ns = k.last_active_ns.max(now);
        self.cpu_current.insert(cpu, key);
    }

    pub fn map_insert(&mut self, key: KlocKey, id: ObjectId, kind: ObjectKind) -> Result<(), KlocError> {
        let k = self.klocs.get_mut(&key).ok_or(KlocError::UnknownKloc(key))?;
        if k.object_map.insert(id, kind).is_some() {
            return Err(KlocError::DuplicateInsert(key, id));
        }
        Ok(())
    }

    pub fn map_remove(&mut self, key: KlocKey, id: ObjectId) -> Result<bool, KlocError> {
        let k = self.klocs.get_mut(&key).ok_or(KlocError::UnknownKloc(key))?;
        Ok(k.object_map.remove(&id).is_some())
    }

    /// Fast-tier frames hosting this context's objects and no object of
    /// another ACTIVE context.
    pub fn exclusive_fast_frames(&self, key: KlocKey, objects: &ObjectStore, tiers: &TierSystem) -> Vec<FrameId> {
        let Some(k) = self.klocs.get(&key) else { return Vec::new() };
        let frames: BTreeSet<FrameId> = k
            .object_map
            .keys()
            .filter_map(|id| objects.live(*id))
            .flat_map(|o| o.frame_ids.iter().copied())
            .collect();
        frames
            .into_iter()
            .filter(|fid| tiers.frame(*fid).is_some_and(|f| f.tier == TierId::Fast))
            .filter(|fid| {
                !objects
                    .is_shared_with_active(tiers, *fid, |other| other != key && self.is_active(other))
                    .unwrap_or(true)
            })
            .collect()
    }

    /// Marks the context INACTIVE and returns its demotion candidates. Cache
    /// pages leave the map but stay live in the page cache.
    pub fn on_close(
        &mut self,
        key: KlocKey,
        now: u64,
        objects: &mut ObjectStore,
        tiers: &TierSystem,
    ) -> Result<Vec<FrameId>, KlocError> {
        let k = self.klocs.get(&key).ok_or(KlocError::UnknownKloc(key))?;
        let was_active = k.state == KlocState::Active;
        let cpus: Vec<u32> = k.active_cpus.iter().copied().collect();
        for cpu in cpus {
            self.cpu_current.remove(&cpu);
        }
        self.epoch += 1;
        let k = self.klocs.get_mut(&key).expect("checked above");
        self.idle.remove(&(k.last_active_ns, key));
        k.active_cpus.clear();
        k.state = KlocState::Inactive;
        k.last_active_ns = k.last_active_ns.max(now);

        let candidates = if was_active { self.exclusive_fast_frames(key, objects, tiers) } else { Vec::new() };

        let k = self.klocs.get_mut(&key).expect("checked above");
        let cached: Vec<ObjectId> =
            k.object_map.iter().filter(|(_, kind)| **kind == ObjectKind::CachePage).map(|(id, _)| *id).collect();
        for id in cached {
            k.object_map.remove(&id);
            objects.detach(id);
        }
        Ok(candidates)
    }

    /// Frees every object the context still owns and drops the context.
    pub fn on_delete(
        &mut self,
        key: KlocKey,
        now: u64,
        objects: &mut ObjectStore,
        tiers: &mut TierSystem,
    ) -> Result<u64, KlocError> {
        let k = self.klocs.remove(&key).ok_or(KlocError::UnknownKloc(key))?;
        self.epoch += 1;
        self.idle.remove(&(k.last_active_ns, key));
        for cpu in &k.active_cpus {
            self.cpu_current.remove(cpu);
        }
        let mut freed = 0;
        for id in k.object_map.keys() {
            if objects.live(*id).is_some() {
                objects.free_object(tiers, *id, now)?;
                freed += 1;
            }
        }
        Ok(freed)
    }

    /// Flips quiet contexts whose grace window has passed to INACTIVE.
    pub fn sweep_idle(&mut self, now: u64, idle_grace_ns: u64) -> Vec<KlocKey> {
        let mut out = Vec::new();
        while let Some(&(since, key)) = self.idle.first() {
            let due = idle_grace_ns == 0 || now.saturating_sub(since) > idle_grace_ns;
            if !due {
                break;
            }
            self.idle.pop_first();
            if let Some(k) = self.klocs.get_mut(&key) {
                if k.active_cpus.is_empty() && k.state == KlocState::Active {
                    k.state = KlocState::Inactive;
                    self.epoch += 1;
                    out.push(key);
                }
            }
        }
        out
    }

    pub fn check_invariants(&self, objects: &ObjectStore) -> Result<(), String> {
        for (cpu, key) in &self.cpu_current {
            let k = self.klocs.get(key).ok_or_else(|| format!("cpu {cpu} points at missing {key}"))?;
            if !k.active_cpus.contains(cpu) {
                return Err(format!("{key} does not list cpu {cpu}"));
            }
        }
        for k in self.klocs.values() {
            if !k.active_cpus.is_empty() && k.state != KlocState::Active {
                return Err(format!("{} has cpus but is inactive", k.key));
            }
            for id in k.object_map.keys() {
                let o = objects.live(*id).ok_or_else(|| format!("{} maps dead {id}", k.key))?;
                if o.kloc_id != Some(k.key) {
                    return Err(format!("{} maps {id} owned by {:?}", k.key, o.kloc_id));
                }
            }
        }
        for o in objects.live_objects() {
            if let Some(key) = o.kloc_id {
                if !self.klocs.get(&key).is_some_and(|k| k.object_map.contains_key(&o.object_id)) {
                    return Err(format!("{} owned by {key} but unmapped", o.object_id));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::TierConfig;
    use crate::objects::{Grouping, ObjectSizes};

    const A: KlocKey = KlocKey::FileInode(1);
    const B: KlocKey = KlocKey::FileInode(2);

    fn setup() -> (TierSystem, ObjectStore, KlocTable) {
        let t = TierSystem::new(
            TierConfig { tier_id: TierId::Fast, capacity_pages: 64, access_latency_ns: 100, bandwidth_bytes_per_sec: 30_000_000_000 },
            TierConfig { tier_id: TierId::Slow, capacity_pages: 64, access_latency_ns: 300, bandwidth_bytes_per_sec: 6_000_000_000 },
        )
        .unwrap();
        (t, ObjectStore::new(ObjectSizes::default()), KlocTable::new())
    }

    fn alloc(t: &mut TierSystem, s: &mut ObjectStore, k: &mut KlocTable, key: KlocKey, kind: ObjectKind, g: Grouping) -> ObjectId {
        let id = s.alloc_object(t, kind, 0, Some(key), TierId::Fast, 0, g).unwrap().object_id;
        k.map_insert(key, id, kind).unwrap();
        id
    }

    #[test]
    fn get_or_create_is_idempotent() {
        let mut k = KlocTable::new();
        k.get_or_create(A, 0);
        k.get_or_create(A, 5);
        k.get_or_create(KlocKey::Socket(1), 0);
        assert_eq!(k.len(), 2);
        assert_eq!(k.get(A).unwrap().state, KlocState::Inactive);
        for i in 10..20 {
            k.get_or_create(KlocKey::FileInode(i), 0);
        }
        assert_eq!(k.len(), 12);
    }

    #[test]
    fn cpu_moves_between_contexts() {
        let mut k = KlocTable::new();
        k.on_op_begin(0, A, 1);
        k.on_op_begin(0, B, 2);
        assert!(k.get(A).unwrap().active_cpus.is_empty());
        assert_eq!(k.get(B).unwrap().active_cpus, BTreeSet::from([0]));
        k.on_op_begin(1, B, 3);
        assert_eq!(k.get(B).unwrap().active_cpus, BTreeSet::from([0, 1]));
        assert_eq!(k.current(1), Some(B));
    }

    #[test]
    fn map_is_ordered() {
        let mut k = KlocTable::new();
        assert_eq!(k.map_insert(A, ObjectId(1), ObjectKind::Inode), Err(KlocError::UnknownKloc(A)));
        k.get_or_create(A, 0);
        for id in [5, 2, 9] {
            k.map_insert(A, ObjectId(id), ObjectKind::Dentry).unwrap();
        }
        let ids: Vec<u64> = k.get(A).unwrap().object_map.keys().map(|o| o.0).collect();
        assert_eq!(ids, vec![2, 5, 9]);
        assert_eq!(k.map_insert(A, ObjectId(5), ObjectKind::Dentry), Err(KlocError::DuplicateInsert(A, ObjectId(5))));
        assert!(k.map_remove(A, ObjectId(5)).unwrap());
        assert!(!k.get(A).unwrap().object_map.contains_key(&ObjectId(5)));
    }

    #[test]
    fn close_returns_exclusive_fast_frames() {
        let (mut t, mut s, mut k) = setup();
        k.on_op_begin(0, A, 0);
        let pages: Vec<ObjectId> =
            (0..10).map(|_| alloc(&mut t, &mut s, &mut k, A, ObjectKind::CachePage, Grouping::Slab)).collect();
        let c = k.on_close(A, 1, &mut s, &t).unwrap();
        assert_eq!(c.len(), 10);
        assert!(k.get(A).unwrap().object_map.is_empty());
        assert!(pages.iter().all(|p| s.live(*p).unwrap().kloc_id.is_none()));
        assert!(k.on_close(A, 2, &mut s, &t).unwrap().is_empty());
        k.check_invariants(&s).unwrap();
    }

    #[test]
    fn close_skips_frames_shared_with_active() {
        let (mut t, mut s, mut k) = setup();
        k.on_op_begin(0, A, 0);
        k.on_op_begin(1, B, 0);
        alloc(&mut t, &mut s, &mut k, A, ObjectKind::Inode, Grouping::Slab);
        let shared = alloc(&mut t, &mut s, &mut k, B, ObjectKind::Inode, Grouping::Slab);
        let frame = s.get(shared).unwrap().frame_ids[0];
        assert!(s.is_shared_with_active(&t, frame, |x| k.is_active(x)).unwrap());
        assert!(k.on_close(A, 1, &mut s, &t).unwrap().is_empty());
        k.on_close(B, 2, &mut s, &t).unwrap();
        assert!(!s.is_shared_with_active(&t, frame, |x| k.is_active(x)).unwrap());
    }

    #[test]
    fn delete_frees_everything() {
        let (mut t, mut s, mut k) = setup();
        k.on_op_begin(0, A, 0);
        alloc(&mut t, &mut s, &mut k, A, ObjectKind::Inode, Grouping::Vmalloc);
        alloc(&mut t, &mut s, &mut k, A, ObjectKind::JournalRecord, Grouping::Vmalloc);
        alloc(&mut t, &mut s, &mut k, A, ObjectKind::CachePage, Grouping::Vmalloc);
        assert_eq!(k.on_delete(A, 5, &mut s, &mut t).unwrap(), 3);
        assert_eq!(t.live_frame_count(), 0);
        assert!(k.get(A).is_none());
        assert_eq!(k.current(0), None);
        assert_eq!(k.on_delete(A, 6, &mut s, &mut t), Err(KlocError::UnknownKloc(A)));
        s.check_invariants(&t).unwrap();
    }

    #[test]
    fn sweep_idle_respects_grace() {
        let mut k = KlocTable::new();
        k.on_op_begin(0, A, 0);
        k.on_op_begin(0, B, 10);
        assert!(k.sweep_idle(15, 10).is_empty());
        assert_eq!(k.sweep_idle(30, 10), vec![A]);
        assert!(k.sweep_idle(1_000, 10).is_empty(), "B still holds cpu 0");
        k.on_op_begin(1, A, 40);
        k.on_op_begin(1, KlocKey::Socket(3), 40);
        assert_eq!(k.sweep_idle(40, 0), vec![A]);
    }
}
