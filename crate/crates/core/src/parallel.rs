//! Ordered fan-out over scoped threads.

/// Applies `f` to every item on up to `workers` threads; results keep input order.
pub fn ordered_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(usize, &T) -> R + Sync) -> Vec<R> {
    let workers = workers.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let mut slots: Vec<Option<R>> = Vec::new();
    slots.resize_with(items.len(), || None);
    std::thread::scope(|s| {
        let f = &f;
        let handles: Vec<_> = (0..workers).map(|w| s.spawn(move || items.iter().enumerate().skip(w).step_by(workers).map(|(i, t)| (i, f(i, t))).collect::<Vec<_>>())).collect();
        for h in handles {
            for (i, r) in h.join().expect("worker thread panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|r| r.expect("every item was processed")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_kept_for_any_worker_count() {
        let items: Vec<u64> = (0..37).collect();
        let serial = ordered_map(&items, 1, |i, &x| x * x + i as u64);
        for w in [2, 3, 8, 64] {
            assert_eq!(ordered_map(&items, w, |i, &x| x * x + i as u64), serial);
        }
        assert!(ordered_map(&[] as &[u64], 4, |_, &x| x).is_empty());
    }
}
