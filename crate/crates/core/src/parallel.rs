use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

/// Applies `f` to every item with at most `max_in_flight` calls running at once.
///
/// Results come back in input order. After the first error no new items are started;
/// items never started are `None`.
pub(crate) fn ordered_map<T, R, E, F>(items: &[T], max_in_flight: usize, f: F) -> Vec<Option<Result<R, E>>>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(usize, &T) -> Result<R, E> + Sync,
{
    let workers = max_in_flight.max(1).min(items.len());
    if workers <= 1 {
        let mut out: Vec<Option<Result<R, E>>> = Vec::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            let result = f(i, item);
            let failed = result.is_err();
            out.push(Some(result));
            if failed {
                break;
            }
        }
        out.resize_with(items.len(), || None);
        return out;
    }

    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let slots: Vec<Mutex<Option<Result<R, E>>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let result = f(i, &items[i]);
                if result.is_err() {
                    stop.store(true, Ordering::SeqCst);
                }
                *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap_or_else(|e| e.into_inner()))
        .collect()
}
