//! In-process logical ranks: one thread per rank, typed mailboxes and
//! collectives. Collectives fold contributions in rank order, so results do
//! not depend on thread scheduling.

use std::any::Any;
use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use crate::error::{Error, Result};

type Message = Box<dyn Any + Send>;

struct Mailbox {
    queues: Mutex<HashMap<(usize, u64), VecDeque<Message>>>,
    ready: Condvar,
}

struct Shared {
    size: usize,
    boxes: Vec<Mailbox>,
    poisoned: AtomicBool,
}

impl Shared {
    fn new(size: usize) -> Arc<Self> {
        Arc::new(Shared {
            size,
            boxes: (0..size)
                .map(|_| Mailbox {
                    queues: Mutex::new(HashMap::new()),
                    ready: Condvar::new(),
                })
                .collect(),
            poisoned: AtomicBool::new(false),
        })
    }

    fn poison(&self) {
        self.poisoned.store(true, Ordering::SeqCst);
        for b in &self.boxes {
            let _guard = b.queues.lock().unwrap_or_else(|e| e.into_inner());
            b.ready.notify_all();
        }
    }
}

/// Tags at or above this value are reserved for collectives.
const COLLECTIVE_TAG: u64 = 1 << 63;

/// One rank's handle on the group.
pub struct RankContext {
    rank: usize,
    shared: Arc<Shared>,
    next_collective: std::cell::Cell<u64>,
}

impl RankContext {
    /// A group of one.
    pub fn single() -> Self {
        RankContext {
            rank: 0,
            shared: Shared::new(1),
            next_collective: std::cell::Cell::new(0),
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.shared.size
    }

    pub fn is_root(&self) -> bool {
        self.rank == 0
    }

    pub fn send<T: Send + 'static>(&self, dest: usize, tag: u64, value: T) -> Result<()> {
        if tag >= COLLECTIVE_TAG {
            return Err(Error::Contract(format!("tag {tag} is reserved")));
        }
        self.post(dest, tag, value)
    }

    fn post<T: Send + 'static>(&self, dest: usize, tag: u64, value: T) -> Result<()> {
        if dest >= self.size() {
            return Err(Error::Contract(format!("destination rank {dest} out of range")));
        }
        let mb = &self.shared.boxes[dest];
        let mut q = mb.queues.lock().unwrap_or_else(|e| e.into_inner());
        q.entry((self.rank, tag))
            .or_default()
            .push_back(Box::new(value));
        mb.ready.notify_all();
        Ok(())
    }

    pub fn recv<T: Send + 'static>(&self, src: usize, tag: u64) -> Result<T> {
        if src >= self.size() {
            return Err(Error::Contract(format!("source rank {src} out of range")));
        }
        let mb = &self.shared.boxes[self.rank];
        let mut q = mb.queues.lock().unwrap_or_else(|e| e.into_inner());
        loop {
            if let Some(msg) = q.get_mut(&(src, tag)).and_then(|d| d.pop_front()) {
                return msg.downcast::<T>().map(|b| *b).map_err(|_| {
                    Error::Contract(format!(
                        "message from rank {src} tag {tag} has an unexpected type"
                    ))
                });
            }
            if self.shared.poisoned.load(Ordering::SeqCst) {
                return Err(Error::Rank {
                    rank: src,
                    message: "peer rank aborted".into(),
                });
            }
            q = mb
                .ready
                .wait_timeout(q, Duration::from_millis(50))
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }

    fn collective_tag(&self) -> u64 {
        let t = self.next_collective.get();
        self.next_collective.set(t + 1);
        COLLECTIVE_TAG | t
    }

    /// Every rank's value, indexed by rank.
    pub fn all_gather<T: Clone + Send + 'static>(&self, value: T) -> Result<Vec<T>> {
        let tag = self.collective_tag();
        for dest in 0..self.size() {
            if dest != self.rank {
                self.post(dest, tag, value.clone())?;
            }
        }
        let mut out = Vec::with_capacity(self.size());
        let mut own = Some(value);
        for src in 0..self.size() {
            if src == self.rank {
                out.push(own.take().expect("own value used once"));
            } else {
                out.push(self.recv(src, tag)?);
            }
        }
        Ok(out)
    }

    /// Send `outgoing[r]` to rank `r`; returns what each rank sent here.
    pub fn all_to_all<T: Send + 'static>(&self, outgoing: Vec<T>) -> Result<Vec<T>> {
        if outgoing.len() != self.size() {
            return Err(Error::Contract(format!(
                "all_to_all needs {} parts, got {}",
                self.size(),
                outgoing.len()
            )));
        }
        let tag = self.collective_tag();
        let mut own = None;
        for (dest, part) in outgoing.into_iter().enumerate() {
            if dest == self.rank {
                own = Some(part);
            } else {
                self.post(dest, tag, part)?;
            }
        }
        let mut out = Vec::with_capacity(self.size());
        for src in 0..self.size() {
            if src == self.rank {
                out.push(own.take().expect("own part present"));
            } else {
                out.push(self.recv(src, tag)?);
            }
        }
        Ok(out)
    }

    /// Fold every rank's value in rank order; all ranks get the same result.
    pub fn all_reduce<T: Clone + Send + 'static>(
        &self,
        value: T,
        op: impl Fn(T, T) -> T,
    ) -> Result<T> {
        let all = self.all_gather(value)?;
        let mut it = all.into_iter();
        let first = it.next().expect("at least one rank");
        Ok(it.fold(first, op))
    }

    pub fn sum_u64(&self, v: u64) -> Result<u64> {
        self.all_reduce(v, |a, b| a + b)
    }

    pub fn sum_i128(&self, v: i128) -> Result<i128> {
        self.all_reduce(v, |a, b| a + b)
    }

    pub fn max_f64(&self, v: f64) -> Result<f64> {
        self.all_reduce(v, |a, b| if b > a || a.is_nan() { b } else { a })
    }

    pub fn any(&self, v: bool) -> Result<bool> {
        self.all_reduce(v, |a, b| a || b)
    }

    /// Sum of `v` over ranks below this one.
    pub fn exclusive_scan_u64(&self, v: u64) -> Result<u64> {
        let all = self.all_gather(v)?;
        Ok(all[..self.rank].iter().sum())
    }

    pub fn barrier(&self) -> Result<()> {
        self.all_gather(()).map(|_| ())
    }
}

/// Runs a closure on every logical rank.
pub struct Runtime;

impl Runtime {
    /// Run `f` once per rank on its own thread and collect the results in
    /// rank order. If any rank fails, the others are released from pending
    /// receives and the first root-cause error is returned. Panics propagate.
    pub fn run<R, F>(nranks: usize, f: F) -> Result<Vec<R>>
    where
        R: Send,
        F: Fn(&RankContext) -> Result<R> + Sync,
    {
        if nranks == 0 {
            return Err(Error::Config("nranks must be at least 1".into()));
        }
        let shared = Shared::new(nranks);
        let results: Vec<std::thread::Result<Result<R>>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..nranks)
                .map(|rank| {
                    let shared = shared.clone();
                    let f = &f;
                    std::thread::Builder::new()
                        .name(format!("rank-{rank}"))
                        .stack_size(16 << 20)
                        .spawn_scoped(s, move || {
                            struct PoisonOnUnwind<'a>(&'a Shared, bool);
                            impl Drop for PoisonOnUnwind<'_> {
                                fn drop(&mut self) {
                                    if !self.1 {
                                        self.0.poison();
                                    }
                                }
                            }
                            let mut guard = PoisonOnUnwind(&shared, false);
                            let ctx = RankContext {
                                rank,
                                shared: shared.clone(),
                                next_collective: std::cell::Cell::new(0),
                            };
                            let r = f(&ctx);
                            if r.is_err() {
                                shared.poison();
                            }
                            guard.1 = true;
                            r
                        })
                        .expect("spawn rank thread")
                })
                .collect();
            handles.into_iter().map(|h| h.join()).collect()
        });
        let mut out = Vec::with_capacity(nranks);
        let mut first_err: Option<Error> = None;
        let mut panic = None;
        for r in results {
            match r {
                Err(p) => {
                    panic.get_or_insert(p);
                }
                Ok(Ok(v)) => out.push(v),
                Ok(Err(e)) => {
                    let replace = match (&first_err, &e) {
                        (None, _) => true,
                        (Some(Error::Rank { .. }), e) => !matches!(e, Error::Rank { .. }),
                        _ => false,
                    };
                    if replace {
                        first_err = Some(e);
                    }
                }
            }
        }
        if let Some(p) = panic {
            std::panic::resume_unwind(p);
        }
        match first_err {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_rank_collectives() {
        let ctx = RankContext::single();
        assert_eq!(ctx.all_gather(5).unwrap(), vec![5]);
        assert_eq!(ctx.sum_u64(3).unwrap(), 3);
        assert_eq!(ctx.all_to_all(vec!["x"]).unwrap(), vec!["x"]);
        ctx.barrier().unwrap();
    }

    #[test]
    fn gather_reduce_scan() {
        let out = Runtime::run(4, |ctx| {
            let all = ctx.all_gather(ctx.rank() * 10)?;
            let sum = ctx.sum_u64(ctx.rank() as u64 + 1)?;
            let scan = ctx.exclusive_scan_u64(ctx.rank() as u64 + 1)?;
            Ok((all, sum, scan))
        })
        .unwrap();
        for (r, (all, sum, scan)) in out.into_iter().enumerate() {
            assert_eq!(all, vec![0, 10, 20, 30]);
            assert_eq!(sum, 10);
            assert_eq!(scan, (0..r as u64).map(|x| x + 1).sum::<u64>());
        }
    }

    #[test]
    fn all_to_all_routes_by_rank() {
        let out = Runtime::run(3, |ctx| {
            let parts = (0..3).map(|d| (ctx.rank(), d)).collect();
            ctx.all_to_all(parts)
        })
        .unwrap();
        for (r, got) in out.into_iter().enumerate() {
            assert_eq!(got, vec![(0, r), (1, r), (2, r)]);
        }
    }

    #[test]
    fn point_to_point_is_fifo_per_tag() {
        let out = Runtime::run(2, |ctx| {
            if ctx.rank() == 0 {
                ctx.send(1, 7, 1u32)?;
                ctx.send(1, 7, 2u32)?;
                ctx.send(1, 8, "other")?;
                Ok(vec![])
            } else {
                let s: &str = ctx.recv(0, 8)?;
                assert_eq!(s, "other");
                Ok(vec![ctx.recv::<u32>(0, 7)?, ctx.recv::<u32>(0, 7)?])
            }
        })
        .unwrap();
        assert_eq!(out[1], vec![1, 2]);
    }

    #[test]
    fn failing_rank_releases_peers() {
        let r = Runtime::run(3, |ctx| {
            if ctx.rank() == 1 {
                return Err(Error::Config("boom".into()));
            }
            ctx.barrier()?;
            Ok(())
        });
        match r {
            Err(Error::Config(m)) => assert_eq!(m, "boom"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_type_is_contract_error() {
        let r = Runtime::run(2, |ctx| {
            if ctx.rank() == 0 {
                ctx.send(1, 1, 5u8)?;
                Ok(())
            } else {
                ctx.recv::<u64>(0, 1).map(|_| ())
            }
        });
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn zero_ranks_rejected() {
        assert!(Runtime::run(0, |_| Ok(())).is_err());
    }
}
