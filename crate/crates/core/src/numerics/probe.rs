//! Kernel-sequence probe.
//!
//! When armed on the current thread, every matrix product records its kind
//! and shape. Used to compare the work done by two forward passes.

use std::cell::RefCell;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kernel {
    MatMul,
    MatMulT,
    TMatMul,
}

/// One recorded product: kind and `(n, k, m)` for an `n×k · k×m` product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct KernelCall {
    pub kernel: Kernel,
    pub dims: (usize, usize, usize),
}

thread_local! {
    static TRACE: RefCell<Option<Vec<KernelCall>>> = const { RefCell::new(None) };
}

pub(crate) fn record(kernel: Kernel, n: usize, k: usize, m: usize) {
    TRACE.with(|t| {
        if let Some(trace) = t.borrow_mut().as_mut() {
            trace.push(KernelCall {
                kernel,
                dims: (n, k, m),
            });
        }
    });
}

/// Runs `f` with the probe armed and returns its result with the kernel trace.
pub fn trace<T>(f: impl FnOnce() -> T) -> (T, Vec<KernelCall>) {
    let previous = TRACE.with(|t| t.borrow_mut().replace(Vec::new()));
    let out = f();
    let calls = TRACE.with(|t| {
        let mut slot = t.borrow_mut();
        let calls = slot.take().unwrap_or_default();
        *slot = previous;
        calls
    });
    (out, calls)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;

    #[test]
    fn records_only_when_armed() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(3, 4);
        a.matmul(&b).unwrap();
        let (_, calls) = trace(|| a.matmul(&b).unwrap());
        assert_eq!(
            calls,
            vec![KernelCall {
                kernel: Kernel::MatMul,
                dims: (2, 3, 4)
            }]
        );
    }
}
