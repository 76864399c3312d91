//! Concurrent hybrid reader sets.
//!
//! A set starts empty, holds a single reader inline, and escalates to an
//! unbalanced search tree keyed by a hash of the reader id once a second
//! reader arrives. Insertion links a fresh entry into an empty child slot
//! with a compare-and-swap and retries from the winner on failure. Removal
//! from a tree only flags the entry dead; [`ReaderSet::compact`] rebuilds the
//! tree without dead entries.

use std::marker::PhantomData;
use std::mem::ManuallyDrop;
use std::ptr;
use std::sync::atomic::{AtomicBool, AtomicPtr, AtomicUsize, Ordering};
use std::sync::{Arc, Weak};

use crossbeam_epoch::{self as epoch, Guard};
use parking_lot::Mutex;

/// Anything that can be stored in a reader set.
pub trait ReaderKey: Send + Sync + 'static {
    fn reader_id(&self) -> u64;
}

/// 64-bit avalanche hash (splitmix64 finalizer).
pub fn hash_id(id: u64) -> u64 {
    let mut z = id.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const TREE: usize = 1;

struct Entry<T> {
    key: u64,
    reader: Weak<T>,
    dead: AtomicBool,
    left: AtomicPtr<Entry<T>>,
    right: AtomicPtr<Entry<T>>,
}

impl<T> Entry<T> {
    fn boxed(key: u64, reader: Weak<T>) -> *mut Entry<T> {
        Box::into_raw(Box::new(Entry {
            key,
            reader,
            dead: AtomicBool::new(false),
            left: AtomicPtr::new(ptr::null_mut()),
            right: AtomicPtr::new(ptr::null_mut()),
        }))
    }
}

enum Op<T> {
    Insert(Arc<T>),
    Remove(Arc<T>),
}

/// Observable representation, for probes and tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetState {
    Empty,
    Inline,
    Tree,
}

pub struct ReaderSet<T: ReaderKey> {
    // 0 = empty, untagged = `Weak::into_raw` of the inline reader,
    // tagged with TREE = root entry pointer.
    state: AtomicUsize,
    live: AtomicUsize,
    dead: AtomicUsize,
    mutators: AtomicUsize,
    compacting: AtomicBool,
    deferring: AtomicBool,
    pending: Mutex<Vec<Op<T>>>,
    _owns: PhantomData<Weak<T>>,
}

impl<T: ReaderKey> Default for ReaderSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: ReaderKey> std::fmt::Debug for ReaderSet<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReaderSet")
            .field("state", &self.state())
            .field("live", &self.len())
            .field("dead", &self.dead_entries())
            .finish()
    }
}

/// Borrow the inline weak without taking ownership of it.
///
/// # Safety
/// `raw` must come from `Weak::into_raw` and still be owned by a set that the
/// current epoch guard keeps alive.
unsafe fn upgrade_raw<T>(raw: usize) -> Option<Arc<T>> {
    let w = ManuallyDrop::new(Weak::from_raw(raw as *const T));
    w.upgrade()
}

impl<T: ReaderKey> ReaderSet<T> {
    pub const fn new() -> Self {
        ReaderSet {
            state: AtomicUsize::new(0),
            live: AtomicUsize::new(0),
            dead: AtomicUsize::new(0),
            mutators: AtomicUsize::new(0),
            compacting: AtomicBool::new(false),
            deferring: AtomicBool::new(false),
            pending: Mutex::new(Vec::new()),
            _owns: PhantomData,
        }
    }

    pub fn state(&self) -> SetState {
        match self.state.load(Ordering::Acquire) {
            0 => SetState::Empty,
            s if s & TREE == 0 => SetState::Inline,
            _ => SetState::Tree,
        }
    }

    pub fn is_inline(&self) -> bool {
        self.state() == SetState::Inline
    }

    /// Number of live members.
    pub fn len(&self) -> usize {
        self.live.load(Ordering::Acquire)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of dead-flagged entries still physically present.
    pub fn dead_entries(&self) -> usize {
        self.dead.load(Ordering::Acquire)
    }

    fn enter(&self) {
        loop {
            self.mutators.fetch_add(1, Ordering::SeqCst);
            if !self.compacting.load(Ordering::SeqCst) {
                return;
            }
            self.mutators.fetch_sub(1, Ordering::SeqCst);
            while self.compacting.load(Ordering::SeqCst) {
                std::thread::yield_now();
            }
        }
    }

    fn exit(&self) {
        self.mutators.fetch_sub(1, Ordering::SeqCst);
    }

    fn try_defer(&self, op: Op<T>) -> Option<Op<T>> {
        if !self.deferring.load(Ordering::Acquire) {
            return Some(op);
        }
        let mut pending = self.pending.lock();
        if !self.deferring.load(Ordering::Acquire) {
            return Some(op);
        }
        pending.push(op);
        None
    }

    /// Adds `r` as a live member.
    pub fn insert(&self, r: &Arc<T>) {
        if self.try_defer(Op::Insert(r.clone())).is_some() {
            self.insert_now(r);
        }
    }

    fn insert_now(&self, r: &Arc<T>) {
        debug_assert!(!self.contains(r), "reader {} inserted twice", r.reader_id());
        self.enter();
        let guard = epoch::pin();
        let key = hash_id(r.reader_id());
        loop {
            let cur = self.state.load(Ordering::Acquire);
            if cur == 0 {
                let raw = Weak::into_raw(Arc::downgrade(r)) as usize;
                match self.state.compare_exchange(0, raw, Ordering::AcqRel, Ordering::Acquire) {
                    Ok(_) => break,
                    Err(_) => unsafe { drop(Weak::from_raw(raw as *const T)) },
                }
            } else if cur & TREE == 0 {
                if self.escalate(cur, key, r, &guard) {
                    break;
                }
            } else {
                let root = (cur & !TREE) as *mut Entry<T>;
                unsafe { link(root, Entry::boxed(key, Arc::downgrade(r))) };
                break;
            }
        }
        self.live.fetch_add(1, Ordering::AcqRel);
        drop(guard);
        self.exit();
    }

    /// Replace the inline reader by a two-entry tree. Returns false if the
    /// state changed underneath and the caller must retry.
    fn escalate(&self, cur: usize, key: u64, r: &Arc<T>, guard: &Guard) -> bool {
        let existing = unsafe { upgrade_raw::<T>(cur) };
        let Some(existing) = existing else {
            // The inline reader is gone; take its place.
            let raw = Weak::into_raw(Arc::downgrade(r)) as usize;
            if self
                .state
                .compare_exchange(cur, raw, Ordering::AcqRel, Ordering::Acquire)
                .is_ok()
            {
                self.live.fetch_sub(1, Ordering::AcqRel);
                unsafe { guard.defer_unchecked(move || drop(Weak::from_raw(cur as *const T))) };
                return true;
            }
            unsafe { drop(Weak::from_raw(raw as *const T)) };
            return false;
        };
        let root = Entry::boxed(hash_id(existing.reader_id()), Arc::downgrade(&existing));
        let fresh = Entry::boxed(key, Arc::downgrade(r));
        unsafe { link(root, fresh) };
        match self.state.compare_exchange(
            cur,
            root as usize | TREE,
            Ordering::AcqRel,
            Ordering::Acquire,
        ) {
            Ok(_) => {
                unsafe { guard.defer_unchecked(move || drop(Weak::from_raw(cur as *const T))) };
                true
            }
            Err(_) => {
                unsafe {
                    drop(Box::from_raw(fresh));
                    drop(Box::from_raw(root));
                }
                false
            }
        }
    }

    /// Removes `r`. Tree entries are only flagged dead.
    pub fn remove(&self, r: &Arc<T>) {
        if self.try_defer(Op::Remove(r.clone())).is_some() {
            self.remove_now(r);
        }
    }

    fn remove_now(&self, r: &Arc<T>) {
        self.enter();
        let guard = epoch::pin();
        let target = Arc::as_ptr(r);
        let mut found = false;
        loop {
            let cur = self.state.load(Ordering::Acquire);
            if cur == 0 {
                break;
            }
            if cur & TREE == 0 {
                if cur as *const T != target {
                    break;
                }
                if self
                    .state
                    .compare_exchange(cur, 0, Ordering::AcqRel, Ordering::Acquire)
                    .is_ok()
                {
                    unsafe { guard.defer_unchecked(move || drop(Weak::from_raw(cur as *const T))) };
                    found = true;
                    break;
                }
                continue;
            }
            let key = hash_id(r.reader_id());
            let mut e = (cur & !TREE) as *const Entry<T>;
            while let Some(entry) = unsafe { e.as_ref() } {
                if entry.key == key
                    && Weak::as_ptr(&entry.reader) == target
                    && entry
                        .dead
                        .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
                        .is_ok()
                {
                    self.dead.fetch_add(1, Ordering::AcqRel);
                    found = true;
                    break;
                }
                e = if key < entry.key {
                    entry.left.load(Ordering::Acquire)
                } else {
                    entry.right.load(Ordering::Acquire)
                };
            }
            break;
        }
        if found {
            self.live.fetch_sub(1, Ordering::AcqRel);
        }
        drop(guard);
        self.exit();
        debug_assert!(found, "reader {} removed but not a member", r.reader_id());
    }

    /// Whether `r` is a live member.
    pub fn contains(&self, r: &Arc<T>) -> bool {
        let target = Arc::as_ptr(r);
        let _guard = epoch::pin();
        let cur = self.state.load(Ordering::Acquire);
        if cur == 0 {
            return false;
        }
        if cur & TREE == 0 {
            return cur as *const T == target;
        }
        let key = hash_id(r.reader_id());
        let mut e = (cur & !TREE) as *const Entry<T>;
        while let Some(entry) = unsafe { e.as_ref() } {
            if entry.key == key
                && Weak::as_ptr(&entry.reader) == target
                && !entry.dead.load(Ordering::Acquire)
            {
                return true;
            }
            e = if key < entry.key {
                entry.left.load(Ordering::Acquire)
            } else {
                entry.right.load(Ordering::Acquire)
            };
        }
        false
    }

    /// Calls `f` once for every live member whose node still exists.
    pub fn for_each(&self, mut f: impl FnMut(Arc<T>)) {
        self.for_each_entry(|reader, dead| {
            if !dead {
                if let Some(r) = reader {
                    f(r)
                }
            }
        });
    }

    /// Visits every physical entry, dead or alive. Entries whose reader was
    /// dropped are reported as `None`.
    pub fn for_each_entry(&self, mut f: impl FnMut(Option<Arc<T>>, bool)) {
        let _guard = epoch::pin();
        let cur = self.state.load(Ordering::Acquire);
        if cur == 0 {
            return;
        }
        if cur & TREE == 0 {
            f(unsafe { upgrade_raw::<T>(cur) }, false);
            return;
        }
        let mut stack = vec![(cur & !TREE) as *const Entry<T>];
        while let Some(e) = stack.pop() {
            let Some(entry) = (unsafe { e.as_ref() }) else {
                continue;
            };
            f(entry.reader.upgrade(), entry.dead.load(Ordering::Acquire));
            stack.push(entry.right.load(Ordering::Acquire));
            stack.push(entry.left.load(Ordering::Acquire));
        }
    }

    /// Parallel variant of [`for_each`](Self::for_each) that splits subtrees
    /// across the rayon pool.
    pub fn par_for_each(&self, f: impl Fn(Arc<T>) + Sync) {
        let _guard = epoch::pin();
        let cur = self.state.load(Ordering::Acquire);
        if cur == 0 {
            return;
        }
        if cur & TREE == 0 {
            if let Some(r) = unsafe { upgrade_raw::<T>(cur) } {
                f(r);
            }
            return;
        }
        fn walk<T>(e: *const Entry<T>, depth: u32, f: &(impl Fn(Arc<T>) + Sync)) {
            let Some(entry) = (unsafe { e.as_ref() }) else {
                return;
            };
            if !entry.dead.load(Ordering::Acquire) {
                if let Some(r) = entry.reader.upgrade() {
                    f(r);
                }
            }
            let l = entry.left.load(Ordering::Acquire) as usize;
            let r = entry.right.load(Ordering::Acquire) as usize;
            if depth < 12 {
                rayon::join(
                    || walk(l as *const Entry<T>, depth + 1, f),
                    || walk(r as *const Entry<T>, depth + 1, f),
                );
            } else {
                walk(l as *const Entry<T>, depth + 1, f);
                walk(r as *const Entry<T>, depth + 1, f);
            }
        }
        walk((cur & !TREE) as *const Entry<T>, 0, &f);
    }

    /// Live members, in key order for trees.
    pub fn members(&self) -> Vec<Arc<T>> {
        let mut out = Vec::with_capacity(self.len());
        self.for_each(|r| out.push(r));
        out
    }

    /// Maximum number of edges from the tree root to an entry; 0 unless in
    /// tree state.
    pub fn depth(&self) -> usize {
        let _guard = epoch::pin();
        let cur = self.state.load(Ordering::Acquire);
        if cur & TREE == 0 {
            return 0;
        }
        let mut max = 0;
        let mut stack = vec![((cur & !TREE) as *const Entry<T>, 0usize)];
        while let Some((e, d)) = stack.pop() {
            let Some(entry) = (unsafe { e.as_ref() }) else {
                continue;
            };
            max = max.max(d);
            stack.push((entry.left.load(Ordering::Acquire), d + 1));
            stack.push((entry.right.load(Ordering::Acquire), d + 1));
        }
        max
    }

    /// Rebuilds the tree without dead entries. Concurrent inserts and removes
    /// wait until the rebuild is published.
    pub fn compact(&self) {
        if self.dead.load(Ordering::Acquire) == 0 {
            return;
        }
        if self
            .compacting
            .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
            .is_err()
        {
            return;
        }
        while self.mutators.load(Ordering::SeqCst) != 0 {
            std::thread::yield_now();
        }
        let guard = epoch::pin();
        let cur = self.state.load(Ordering::Acquire);
        if cur & TREE != 0 {
            let root = (cur & !TREE) as *mut Entry<T>;
            let mut keep = Vec::new();
            let mut old = Vec::new();
            // in-order walk yields keys sorted
            let mut stack = Vec::new();
            let mut e = root;
            while !e.is_null() || !stack.is_empty() {
                while let Some(entry) = unsafe { e.as_ref() } {
                    stack.push(e);
                    e = entry.left.load(Ordering::Acquire);
                }
                let top = stack.pop().unwrap();
                let entry = unsafe { &*top };
                if !entry.dead.load(Ordering::Acquire) {
                    if let Some(r) = entry.reader.upgrade() {
                        keep.push((entry.key, r));
                    }
                }
                old.push(top as usize);
                e = entry.right.load(Ordering::Acquire);
            }
            let next = match keep.len() {
                0 => 0,
                1 => Weak::into_raw(Arc::downgrade(&keep[0].1)) as usize,
                _ => build_balanced(&keep) as usize | TREE,
            };
            self.state.store(next, Ordering::Release);
            self.live.store(keep.len(), Ordering::Release);
            self.dead.store(0, Ordering::Release);
            for p in old {
                unsafe { guard.defer_unchecked(move || drop(Box::from_raw(p as *mut Entry<T>))) };
            }
        }
        drop(guard);
        self.compacting.store(false, Ordering::SeqCst);
    }

    /// Starts buffering inserts and removes until [`commit`](Self::commit).
    pub fn begin_deferral(&self) {
        let _pending = self.pending.lock();
        self.deferring.store(true, Ordering::Release);
    }

    pub fn is_deferring(&self) -> bool {
        self.deferring.load(Ordering::Acquire)
    }

    /// Applies the buffered operations in the order they were issued.
    ///
    /// # Panics
    /// If no deferral is active.
    pub fn commit(&self) {
        let ops = {
            let mut pending = self.pending.lock();
            assert!(
                self.deferring.swap(false, Ordering::AcqRel),
                "commit without a matching begin_deferral"
            );
            std::mem::take(&mut *pending)
        };
        for op in ops {
            match op {
                Op::Insert(r) => self.insert_now(&r),
                Op::Remove(r) => self.remove_now(&r),
            }
        }
    }
}

/// Links `fresh` below `root`, descending into whichever entry wins a race.
///
/// # Safety
/// `root` must be a live entry protected by the caller's epoch guard, and
/// `fresh` must be unshared.
unsafe fn link<T>(root: *mut Entry<T>, fresh: *mut Entry<T>) {
    let key = (*fresh).key;
    let mut cur = root;
    loop {
        let entry = &*cur;
        let slot = if key < entry.key { &entry.left } else { &entry.right };
        let child = slot.load(Ordering::Acquire);
        if child.is_null() {
            match slot.compare_exchange(
                ptr::null_mut(),
                fresh,
                Ordering::AcqRel,
                Ordering::Acquire,
            ) {
                Ok(_) => return,
                Err(winner) => cur = winner,
            }
        } else {
            cur = child;
        }
    }
}

fn build_balanced<T>(sorted: &[(u64, Arc<T>)]) -> *mut Entry<T> {
    if sorted.is_empty() {
        return ptr::null_mut();
    }
    let mid = sorted.len() / 2;
    let e = Entry::boxed(sorted[mid].0, Arc::downgrade(&sorted[mid].1));
    unsafe {
        (*e).left = AtomicPtr::new(build_balanced(&sorted[..mid]));
        (*e).right = AtomicPtr::new(build_balanced(&sorted[mid + 1..]));
    }
    e
}

impl<T: ReaderKey> Drop for ReaderSet<T> {
    fn drop(&mut self) {
        let cur = *self.state.get_mut();
        if cur == 0 {
            return;
        }
        if cur & TREE == 0 {
            unsafe { drop(Weak::from_raw(cur as *const T)) };
            return;
        }
        let mut stack = vec![(cur & !TREE) as *mut Entry<T>];
        while let Some(e) = stack.pop() {
            if e.is_null() {
                continue;
            }
            let b = unsafe { Box::from_raw(e) };
            stack.push(b.left.load(Ordering::Relaxed));
            stack.push(b.right.load(Ordering::Relaxed));
        }
    }
}
