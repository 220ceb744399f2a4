//! Bounded worker pool that preserves input order on the way out.
//!
//! Workers pull indices from a shared counter; the caller's emit
//! callback sees results strictly in input order regardless of
//! completion order. The first error stops the pool after the already
//! emitted prefix, leaving checkpoints intact.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

/// Run `f` over all items and deliver each result to `emit` in input
/// order. Stops at the first worker or emit error.
pub fn run_ordered_emit<I, O, E, F, G>(
    items: &[I],
    workers: usize,
    f: F,
    mut emit: G,
) -> Result<(), E>
where
    I: Sync,
    O: Send,
    E: Send,
    F: Fn(usize, &I) -> Result<O, E> + Sync,
    G: FnMut(usize, O) -> Result<(), E>,
{
    if items.is_empty() {
        return Ok(());
    }
    let workers = workers.max(1).min(items.len());
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<(usize, Result<O, E>)>();

    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            let stop = &stop;
            let f = &f;
            scope.spawn(move || loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let index = next.fetch_add(1, Ordering::SeqCst);
                if index >= items.len() {
                    break;
                }
                let result = f(index, &items[index]);
                let failed = result.is_err();
                if tx.send((index, result)).is_err() || failed {
                    break;
                }
            });
        }
        drop(tx);

        let mut buffer: BTreeMap<usize, O> = BTreeMap::new();
        let mut next_emit = 0usize;
        let mut first_error: Option<E> = None;
        for (index, result) in rx {
            if first_error.is_some() {
                continue;
            }
            match result {
                Err(e) => {
                    stop.store(true, Ordering::SeqCst);
                    first_error = Some(e);
                }
                Ok(output) => {
                    buffer.insert(index, output);
                    while let Some(output) = buffer.remove(&next_emit) {
                        if let Err(e) = emit(next_emit, output) {
                            stop.store(true, Ordering::SeqCst);
                            first_error = Some(e);
                            break;
                        }
                        next_emit += 1;
                    }
                }
            }
        }
        match first_error {
            Some(e) => Err(e),
            None => Ok(()),
        }
    })
}

/// Collecting variant: all outputs, in input order.
pub fn run_ordered<I, O, E, F>(items: &[I], workers: usize, f: F) -> Result<Vec<O>, E>
where
    I: Sync,
    O: Send,
    E: Send,
    F: Fn(usize, &I) -> Result<O, E> + Sync,
{
    let mut out = Vec::with_capacity(items.len());
    run_ordered_emit(items, workers, f, |_, output| {
        out.push(output);
        Ok(())
    })?;
    Ok(out)
}
