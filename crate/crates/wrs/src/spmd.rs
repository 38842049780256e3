//! Threaded in-process SPMD runtime.
//!
//! [`run_spmd`] starts one logical PE per OS thread and hands each a
//! [`PeHandle`]. Collectives are rendezvous points: every PE deposits its
//! contribution into the round matching its own call counter, the last one to
//! arrive checks that all PEs made the same call and computes the result,
//! and the others pick it up. Results are folded in rank order, so they do
//! not depend on thread scheduling.
//!
//! `threads` caps how many PEs execute at once. A PE gives up its slot while
//! it waits inside a collective.

use std::any::{Any, TypeId};
use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread;

use wrs_core::comm::fold_in_rank_order;
use wrs_core::{CommCounters, CommError, Communicator, Payload, Reduce, ReduceOp};

const PE_STACK_BYTES: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Call {
    Broadcast(usize),
    AllReduce(ReduceOp),
    Gather(usize),
}

struct Entry {
    call: Call,
    type_id: TypeId,
    payload: Box<dyn Any + Send>,
}

#[derive(Default)]
struct Round {
    entries: Vec<Option<Entry>>,
    arrived: usize,
    consumed: usize,
    outcome: Option<Result<Box<dyn Any + Send>, CommError>>,
}

struct State {
    rounds: VecDeque<Round>,
    /// Sequence number of `rounds[0]`.
    base: u64,
    departed: Vec<bool>,
}

struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn acquire(&self) {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
    }

    fn release(&self) {
        *self.free.lock().unwrap() += 1;
        self.cv.notify_one();
    }
}

struct Shared {
    p: usize,
    state: Mutex<State>,
    cv: Condvar,
    gate: Option<Gate>,
}

/// One PE's endpoint in an in-process group.
pub struct PeHandle {
    rank: usize,
    seq: u64,
    shared: Arc<Shared>,
    counters: CommCounters,
}

impl std::fmt::Debug for PeHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PeHandle")
            .field("rank", &self.rank)
            .field("size", &self.shared.p)
            .field("seq", &self.seq)
            .finish()
    }
}

/// Runs `body` on `p` PEs with at most `threads` running concurrently and
/// returns the per-PE results in rank order.
///
/// A panic on any PE is propagated after all PEs have stopped; PEs blocked
/// in a collective with it fail with [`CommError::ProtocolViolation`].
pub fn run_spmd<R, F>(p: usize, threads: usize, body: F) -> Vec<R>
where
    F: Fn(&mut PeHandle) -> R + Sync,
    R: Send,
{
    assert!(p >= 1, "group needs at least one PE");
    let threads = threads.clamp(1, p);
    let shared = Arc::new(Shared {
        p,
        state: Mutex::new(State {
            rounds: VecDeque::new(),
            base: 0,
            departed: vec![false; p],
        }),
        cv: Condvar::new(),
        gate: (threads < p).then(|| Gate {
            free: Mutex::new(threads),
            cv: Condvar::new(),
        }),
    });
    let body = &body;
    thread::scope(|scope| {
        let workers: Vec<_> = (0..p)
            .map(|rank| {
                let shared = Arc::clone(&shared);
                thread::Builder::new()
                    .name(format!("pe-{rank}"))
                    .stack_size(PE_STACK_BYTES)
                    .spawn_scoped(scope, move || {
                        let mut handle = PeHandle {
                            rank,
                            seq: 0,
                            shared,
                            counters: CommCounters::default(),
                        };
                        handle.enter();
                        let out = body(&mut handle);
                        handle.leave();
                        out
                    })
                    .expect("spawn PE thread")
            })
            .collect();
        let mut results = Vec::with_capacity(p);
        let mut panic = None;
        for w in workers {
            match w.join() {
                Ok(r) => results.push(r),
                Err(e) => panic = panic.or(Some(e)),
            }
        }
        if let Some(e) = panic {
            std::panic::resume_unwind(e);
        }
        results
    })
}

impl PeHandle {
    fn enter(&self) {
        if let Some(g) = &self.shared.gate {
            g.acquire();
        }
    }

    fn leave(&self) {
        if let Some(g) = &self.shared.gate {
            g.release();
        }
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.shared.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Deposits this PE's contribution for its next collective and blocks
    /// until the round resolves. The last PE to arrive runs `compute` over
    /// all contributions. `read` then extracts this PE's result from the
    /// shared outcome.
    fn rendezvous<R>(
        &mut self,
        call: Call,
        type_id: TypeId,
        payload: Box<dyn Any + Send>,
        compute: impl FnOnce(Vec<Box<dyn Any + Send>>) -> Result<Box<dyn Any + Send>, CommError>,
        read: impl FnOnce(&mut Box<dyn Any + Send>) -> R,
    ) -> Result<R, CommError> {
        let seq = self.seq;
        self.seq += 1;
        let p = self.shared.p;
        let mut st = self.lock();
        let idx = (seq - st.base) as usize;
        while st.rounds.len() <= idx {
            st.rounds.push_back(Round {
                entries: (0..p).map(|_| None).collect(),
                ..Round::default()
            });
        }
        let round = &mut st.rounds[idx];
        round.entries[self.rank] = Some(Entry {
            call,
            type_id,
            payload,
        });
        round.arrived += 1;
        if round.arrived == p {
            let entries: Vec<Entry> = round
                .entries
                .iter_mut()
                .map(|e| e.take().unwrap())
                .collect();
            round.outcome = Some(resolve(seq, entries, compute));
            self.shared.cv.notify_all();
        } else {
            if let Some(g) = &self.shared.gate {
                g.release();
            }
            loop {
                let idx = (seq - st.base) as usize;
                let departed_missing = {
                    let round = &st.rounds[idx];
                    round.outcome.is_none()
                        && st
                            .departed
                            .iter()
                            .zip(&round.entries)
                            .any(|(&d, e)| d && e.is_none())
                };
                if departed_missing {
                    st.rounds[idx].outcome = Some(Err(CommError::ProtocolViolation {
                        seq,
                        detail: "a PE left the group before joining this collective",
                    }));
                    self.shared.cv.notify_all();
                }
                if st.rounds[idx].outcome.is_some() {
                    break;
                }
                st = self.shared.cv.wait(st).unwrap_or_else(|e| e.into_inner());
            }
            if let Some(g) = &self.shared.gate {
                drop(st);
                g.acquire();
                st = self.lock();
            }
        }
        let idx = (seq - st.base) as usize;
        let round = &mut st.rounds[idx];
        let result = match round.outcome.as_mut().unwrap() {
            Ok(value) => Ok(read(value)),
            Err(e) => Err(*e),
        };
        round.consumed += 1;
        while st.rounds.front().is_some_and(|r| r.consumed == p) {
            st.rounds.pop_front();
            st.base += 1;
        }
        result
    }
}

fn resolve(
    seq: u64,
    entries: Vec<Entry>,
    compute: impl FnOnce(Vec<Box<dyn Any + Send>>) -> Result<Box<dyn Any + Send>, CommError>,
) -> Result<Box<dyn Any + Send>, CommError> {
    let (call, type_id) = (entries[0].call, entries[0].type_id);
    for e in &entries {
        if e.call != call {
            return Err(CommError::ProtocolViolation {
                seq,
                detail: "PEs issued different collectives or roots",
            });
        }
        if e.type_id != type_id {
            return Err(CommError::ProtocolViolation {
                seq,
                detail: "PEs passed different payload types",
            });
        }
    }
    compute(entries.into_iter().map(|e| e.payload).collect())
}

fn unbox<T: 'static>(b: Box<dyn Any + Send>) -> T {
    *b.downcast::<T>().expect("payload type checked")
}

impl Drop for PeHandle {
    fn drop(&mut self) {
        let mut st = self.lock();
        st.departed[self.rank] = true;
        drop(st);
        self.shared.cv.notify_all();
    }
}

impl Communicator for PeHandle {
    fn rank(&self) -> usize {
        self.rank
    }

    fn size(&self) -> usize {
        self.shared.p
    }

    fn broadcast<T: Payload>(&mut self, root: usize, value: Option<T>) -> Result<T, CommError> {
        let p = self.shared.p;
        if root >= p {
            return Err(CommError::RootOutOfRange { root, size: p });
        }
        let out: T = self.rendezvous(
            Call::Broadcast(root),
            TypeId::of::<Option<T>>(),
            Box::new(value),
            |mut payloads| {
                let v = unbox::<Option<T>>(payloads.swap_remove(root));
                v.map(|v| Box::new(v) as Box<dyn Any + Send>)
                    .ok_or(CommError::MissingRootValue)
            },
            |v| v.downcast_ref::<T>().unwrap().clone(),
        )?;
        self.counters.broadcasts += 1;
        if p > 1 {
            self.counters.words += out.words();
        }
        Ok(out)
    }

    fn all_reduce<T: Reduce>(&mut self, value: T, op: ReduceOp) -> Result<T, CommError> {
        let p = self.shared.p;
        let words = value.words();
        let out: T = self.rendezvous(
            Call::AllReduce(op),
            TypeId::of::<T>(),
            Box::new(value),
            |payloads| {
                let values: Vec<T> = payloads.into_iter().map(unbox::<T>).collect();
                fold_in_rank_order(op, values.iter()).map(|v| Box::new(v) as Box<dyn Any + Send>)
            },
            |v| v.downcast_ref::<T>().unwrap().clone(),
        )?;
        self.counters.all_reduces += 1;
        if p > 1 {
            self.counters.words += words;
        }
        Ok(out)
    }

    fn gather<T: Payload>(&mut self, root: usize, values: Vec<T>) -> Result<Vec<T>, CommError> {
        let p = self.shared.p;
        if root >= p {
            return Err(CommError::RootOutOfRange { root, size: p });
        }
        let own_words = values.words();
        let is_root = self.rank == root;
        let out: Vec<T> = self.rendezvous(
            Call::Gather(root),
            TypeId::of::<Vec<T>>(),
            Box::new(values),
            |payloads| {
                let all: Vec<T> = payloads.into_iter().flat_map(unbox::<Vec<T>>).collect();
                Ok(Box::new(all) as Box<dyn Any + Send>)
            },
            |v| {
                if is_root {
                    std::mem::take(v.downcast_mut::<Vec<T>>().unwrap())
                } else {
                    Vec::new()
                }
            },
        )?;
        self.counters.gathers += 1;
        if p > 1 {
            self.counters.words += if is_root {
                out.words() - own_words
            } else {
                own_words
            };
        }
        Ok(out)
    }

    fn counters(&self) -> CommCounters {
        self.counters
    }
}
