use std::sync::Arc;

use psac::{Ctx, Data, Mod, Result};

/// Divide-and-conquer reduction over leaf indices `lo..hi`.
pub(crate) trait Reduce: Send + Sync + 'static {
    type Out: Data;

    /// Reads leaf `i` and writes its value to `dest`.
    fn leaf(&self, cx: &mut Ctx<'_>, i: usize, dest: Mod<Self::Out>) -> Result<()>;

    fn combine(&self, l: &Self::Out, r: &Self::Out, lo: usize, mid: usize, hi: usize) -> Self::Out;
}

pub(crate) fn reduce<R: Reduce>(
    cx: &mut Ctx<'_>,
    red: Arc<R>,
    lo: usize,
    hi: usize,
    dest: Mod<R::Out>,
) -> Result<()> {
    debug_assert!(hi > lo);
    if hi - lo == 1 {
        return red.leaf(cx, lo, dest);
    }
    let mid = lo + (hi - lo) / 2;
    let (l, r) = (cx.alloc(), cx.alloc());
    let (red1, red2, l1, r1) = (red.clone(), red.clone(), l.clone(), r.clone());
    cx.par(
        move |cx| reduce(cx, red1, lo, mid, l1),
        move |cx| reduce(cx, red2, mid, hi, r1),
    )?;
    cx.read((&l, &r), move |cx, (a, b)| {
        cx.write(&dest, red.combine(a, b, lo, mid, hi))
    })
}
