use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

use crate::error::{Result, SacError};
use crate::reader_set::ReaderSet;
use crate::trace::{mark, Node};
use crate::value::{Data, DynValue};

static MOD_IDS: AtomicU64 = AtomicU64::new(1);

/// Readers above this count are marked in parallel.
const PAR_MARK_THRESHOLD: usize = 256;

/// Untyped part of a modifiable.
pub struct ModCore {
    id: u64,
    owner: Option<u64>,
    written_epoch: AtomicU64,
    readers: ReaderSet<Node>,
}

impl ModCore {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn readers(&self) -> &ReaderSet<Node> {
        &self.readers
    }
}

pub(crate) struct ModCell<T> {
    core: ModCore,
    value: RwLock<Option<T>>,
}

/// Type-erased handle used by readers and the collector.
pub trait AnyMod: Send + Sync {
    fn core(&self) -> &ModCore;
    fn current(&self) -> Option<Arc<dyn DynValue>>;
}

impl<T: Data> AnyMod for ModCell<T> {
    fn core(&self) -> &ModCore {
        &self.core
    }

    fn current(&self) -> Option<Arc<dyn DynValue>> {
        self.value
            .read()
            .clone()
            .map(|v| Arc::new(v) as Arc<dyn DynValue>)
    }
}

/// A write-once tracked cell.
///
/// Clones share the same cell; equality is identity.
pub struct Mod<T>(pub(crate) Arc<ModCell<T>>);

impl<T> Clone for Mod<T> {
    fn clone(&self) -> Self {
        Mod(self.0.clone())
    }
}

impl<T> PartialEq for Mod<T> {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

impl<T> Eq for Mod<T> {}

impl<T> fmt::Debug for Mod<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mod#{}", self.0.core.id)
    }
}

impl<T: Data> Default for Mod<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Data> Mod<T> {
    /// An unwritten modifiable with no owning scope.
    pub fn new() -> Self {
        Self::with_owner(None)
    }

    /// A modifiable already holding `v`.
    pub fn with(v: T) -> Self {
        let m = Self::new();
        *m.0.value.write() = Some(v);
        m
    }

    pub(crate) fn with_owner(owner: Option<u64>) -> Self {
        Mod(Arc::new(ModCell {
            core: ModCore {
                id: MOD_IDS.fetch_add(1, Ordering::Relaxed),
                owner,
                written_epoch: AtomicU64::new(0),
                readers: ReaderSet::new(),
            },
            value: RwLock::new(None),
        }))
    }

    pub fn id(&self) -> u64 {
        self.0.core.id
    }

    /// Id of the scope node that allocated this modifiable, if any.
    pub fn owner_scope(&self) -> Option<u64> {
        self.0.core.owner
    }

    /// Current value without recording a dependency.
    pub fn get(&self) -> Option<T> {
        self.0.value.read().clone()
    }

    pub fn is_written(&self) -> bool {
        self.0.value.read().is_some()
    }

    pub fn readers(&self) -> &ReaderSet<Node> {
        &self.0.core.readers
    }

    /// Input-phase write, outside any run or propagation. Marks every
    /// reader when the value changes. Returns whether it changed.
    pub fn write(&self, v: T) -> bool {
        self.store(v, None).expect("input writes never fail")
    }

    pub(crate) fn store(&self, v: T, epoch: Option<u64>) -> Result<bool> {
        let cell = &self.0;
        let mut slot = cell.value.write();
        if let Some(e) = epoch {
            if cell.core.written_epoch.swap(e, Ordering::AcqRel) == e {
                return if slot.as_ref() == Some(&v) {
                    Ok(false)
                } else {
                    Err(SacError::WriteOnce {
                        modifiable: cell.core.id,
                    })
                };
            }
        }
        if slot.as_ref() == Some(&v) {
            return Ok(false);
        }
        *slot = Some(v);
        drop(slot);
        mark_readers(&cell.core.readers);
        Ok(true)
    }

    fn value(&self) -> Result<T> {
        self.get().ok_or(SacError::UnwrittenRead { modifiable: self.id() })
    }

    pub(crate) fn erased_one(&self) -> Arc<dyn AnyMod> {
        self.0.clone()
    }
}

fn mark_readers(readers: &ReaderSet<Node>) {
    let hit = |r: Arc<Node>| {
        r.set_affected();
        mark(&r);
    };
    if readers.len() > PAR_MARK_THRESHOLD {
        readers.par_for_each(hit);
    } else {
        readers.for_each(hit);
    }
}

/// A fixed list of modifiables read together by one reader.
pub trait Deps: Send + Sync + 'static {
    type Values: Data;

    fn values(&self) -> Result<Self::Values>;
    fn for_each_core(&self, f: &mut dyn FnMut(&ModCore));
    fn arity(&self) -> usize;
    #[doc(hidden)]
    fn erased(&self) -> Vec<Arc<dyn AnyMod>>;
}

impl<A: Data> Deps for Mod<A> {
    type Values = A;

    fn values(&self) -> Result<A> {
        self.value()
    }

    fn for_each_core(&self, f: &mut dyn FnMut(&ModCore)) {
        f(&self.0.core)
    }

    fn arity(&self) -> usize {
        1
    }

    fn erased(&self) -> Vec<Arc<dyn AnyMod>> {
        vec![self.0.clone()]
    }
}

impl<A: Data, B: Data> Deps for (Mod<A>, Mod<B>) {
    type Values = (A, B);

    fn values(&self) -> Result<(A, B)> {
        Ok((self.0.value()?, self.1.value()?))
    }

    fn for_each_core(&self, f: &mut dyn FnMut(&ModCore)) {
        f(&self.0 .0.core);
        f(&self.1 .0.core);
    }

    fn arity(&self) -> usize {
        2
    }

    fn erased(&self) -> Vec<Arc<dyn AnyMod>> {
        vec![self.0 .0.clone(), self.1 .0.clone()]
    }
}

impl<A: Data, B: Data, C: Data> Deps for (Mod<A>, Mod<B>, Mod<C>) {
    type Values = (A, B, C);

    fn values(&self) -> Result<(A, B, C)> {
        Ok((self.0.value()?, self.1.value()?, self.2.value()?))
    }

    fn for_each_core(&self, f: &mut dyn FnMut(&ModCore)) {
        f(&self.0 .0.core);
        f(&self.1 .0.core);
        f(&self.2 .0.core);
    }

    fn arity(&self) -> usize {
        3
    }

    fn erased(&self) -> Vec<Arc<dyn AnyMod>> {
        vec![self.0 .0.clone(), self.1 .0.clone(), self.2 .0.clone()]
    }
}

impl<T: Data> Deps for Vec<Mod<T>> {
    type Values = Vec<T>;

    fn values(&self) -> Result<Vec<T>> {
        self.iter().map(Mod::value).collect()
    }

    fn for_each_core(&self, f: &mut dyn FnMut(&ModCore)) {
        for m in self {
            f(&m.0.core)
        }
    }

    fn arity(&self) -> usize {
        self.len()
    }

    fn erased(&self) -> Vec<Arc<dyn AnyMod>> {
        self.iter().map(|m| m.0.clone() as Arc<dyn AnyMod>).collect()
    }
}

/// Borrowed forms accepted by [`Ctx::read`](crate::Ctx::read).
pub trait IntoDeps {
    type Deps: Deps;
    fn into_deps(self) -> Self::Deps;
}

impl<D: Deps> IntoDeps for D {
    type Deps = D;
    fn into_deps(self) -> D {
        self
    }
}

impl<A: Data> IntoDeps for &Mod<A> {
    type Deps = Mod<A>;
    fn into_deps(self) -> Mod<A> {
        self.clone()
    }
}

impl<A: Data, B: Data> IntoDeps for (&Mod<A>, &Mod<B>) {
    type Deps = (Mod<A>, Mod<B>);
    fn into_deps(self) -> Self::Deps {
        (self.0.clone(), self.1.clone())
    }
}

impl<A: Data, B: Data, C: Data> IntoDeps for (&Mod<A>, &Mod<B>, &Mod<C>) {
    type Deps = (Mod<A>, Mod<B>, Mod<C>);
    fn into_deps(self) -> Self::Deps {
        (self.0.clone(), self.1.clone(), self.2.clone())
    }
}

/// In-block read accessor handed to [`Ctx::read_block`](crate::Ctx::read_block).
///
/// Every modifiable read through it becomes a dependency of the block.
#[derive(Default)]
pub struct BlockReads {
    touched: Mutex<Touched>,
}

#[derive(Default)]
pub(crate) struct Touched {
    index: HashMap<u64, usize>,
    pub(crate) list: Vec<(Arc<dyn AnyMod>, Arc<dyn DynValue>)>,
}

impl BlockReads {
    pub fn get<T: Data>(&self, m: &Mod<T>) -> Result<T> {
        let v = m.value()?;
        let mut t = self.touched.lock();
        if !t.index.contains_key(&m.id()) {
            let at = t.list.len();
            t.index.insert(m.id(), at);
            t.list.push((m.erased_one(), Arc::new(v.clone())));
        }
        Ok(v)
    }

    pub(crate) fn into_touched(self) -> Vec<(Arc<dyn AnyMod>, Arc<dyn DynValue>)> {
        self.touched.into_inner().list
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_mods_have_distinct_ids() {
        let a = Mod::<i64>::new();
        let b = Mod::<i64>::new();
        assert_ne!(a.id(), b.id());
        assert!(a.owner_scope().is_none());
        assert!(!a.is_written());
    }

    #[test]
    fn input_write_reports_change() {
        let m = Mod::new();
        assert!(m.write(5));
        assert!(!m.write(5));
        assert!(m.write(7));
        assert_eq!(m.get(), Some(7));
    }

    #[test]
    fn epoch_write_once() {
        let m = Mod::new();
        assert_eq!(m.store(1, Some(100)), Ok(true));
        assert_eq!(m.store(1, Some(100)), Ok(false));
        assert_eq!(
            m.store(2, Some(100)),
            Err(SacError::WriteOnce { modifiable: m.id() })
        );
        assert_eq!(m.store(2, Some(101)), Ok(true));
    }

    #[test]
    fn block_reads_dedupe() {
        let m = Mod::with(3i64);
        let b = BlockReads::default();
        assert_eq!(b.get(&m), Ok(3));
        assert_eq!(b.get(&m), Ok(3));
        assert_eq!(b.into_touched().len(), 1);
    }

    #[test]
    fn unwritten_read_names_the_cell() {
        let m = Mod::<u8>::new();
        assert_eq!(
            BlockReads::default().get(&m),
            Err(SacError::UnwrittenRead { modifiable: m.id() })
        );
    }
}
