//! Opt-in multiply-accumulate counting for forward passes.
//!
//! Convolution kernels report the MACs they execute while a counting scope
//! is active on the current thread. This gives a runtime measurement that is
//! independent of any analytic cost model.

use std::cell::Cell;

thread_local! {
    static MACS: Cell<Option<u64>> = const { Cell::new(None) };
}

/// Run `f` and return its result together with the MACs executed by
/// convolution forward kernels inside it. Backward passes are not counted.
pub fn count_macs<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let previous = MACS.with(|m| m.replace(Some(0)));
    let out = f();
    let counted = MACS.with(|m| m.replace(previous)).unwrap_or(0);
    if let Some(prev) = previous {
        MACS.with(|m| m.set(Some(prev + counted)));
    }
    (out, counted)
}

pub(crate) fn add_macs(n: u64) {
    MACS.with(|m| {
        if let Some(v) = m.get() {
            m.set(Some(v + n));
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_scopes_roll_up() {
        let ((_, inner), outer) = count_macs(|| {
            add_macs(5);
            count_macs(|| add_macs(7))
        });
        assert_eq!(inner, 7);
        assert_eq!(outer, 12);
        add_macs(100); // outside any scope: ignored
    }
}
