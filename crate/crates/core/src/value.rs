use std::any::Any;
use std::fmt::Debug;

/// Values that may be stored in a modifiable.
pub trait Data: Clone + PartialEq + Send + Sync + Debug + 'static {}

impl<T: Clone + PartialEq + Send + Sync + Debug + 'static> Data for T {}

/// Type-erased value with equality, used for recorded reads.
pub trait DynValue: Send + Sync + Debug {
    fn as_any(&self) -> &dyn Any;
    fn dyn_eq(&self, other: &dyn DynValue) -> bool;
}

impl<T: Data> DynValue for T {
    fn as_any(&self) -> &dyn Any {
        self
    }

    fn dyn_eq(&self, other: &dyn DynValue) -> bool {
        other.as_any().downcast_ref::<T>().is_some_and(|o| o == self)
    }
}

/// Wrapper whose equality is always false.
///
/// Writing a `NeverEq` always marks the readers, so types without a useful
/// equality still propagate correctly.
#[derive(Clone, Debug)]
pub struct NeverEq<T>(pub T);

impl<T> PartialEq for NeverEq<T> {
    fn eq(&self, _: &Self) -> bool {
        false
    }
}
