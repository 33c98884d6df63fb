//! Bounded fan-out over independent jobs. Results come back in job order,
//! whatever the scheduling, so the worker count never changes the output.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

pub fn par_map<T, R, F>(jobs: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = workers.clamp(1, jobs.len().max(1));
    if workers == 1 {
        return jobs.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let r = f(&jobs[i]);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_independent_of_workers() {
        let jobs: Vec<u64> = (0..37).collect();
        let slow = |&x: &u64| {
            std::thread::sleep(std::time::Duration::from_micros((37 - x) * 50));
            x * x
        };
        let one = par_map(&jobs, 1, slow);
        assert_eq!(par_map(&jobs, 4, slow), one);
        assert_eq!(par_map(&jobs, 100, slow), one);
        assert!(par_map(&[] as &[u64], 3, slow).is_empty());
    }
}
