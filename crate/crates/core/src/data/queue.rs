//! Bounded blocking queue that decouples batch producers from the training loop.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crate::data::Batch;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DequeueError {
    /// Nothing arrived within the timeout; the queue is still open.
    Timeout,
    /// The queue is closed and fully drained.
    Closed,
}

/// Returned by [`FeedingQueue::enqueue`] when the queue was closed; carries the rejected item.
#[derive(Debug, PartialEq)]
pub struct QueueClosed<T>(pub T);

struct State<T> {
    buf: VecDeque<T>,
    closed: bool,
    blocked_producers: usize,
    high_water: usize,
}

/// Multi-producer multi-consumer bounded FIFO with close semantics.
pub struct FeedingQueue<T = Batch> {
    capacity: usize,
    state: Mutex<State<T>>,
    not_empty: Condvar,
    not_full: Condvar,
}

impl<T> FeedingQueue<T> {
    /// # Panics
    /// If `capacity` is zero.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be at least 1");
        FeedingQueue {
            capacity,
            state: Mutex::new(State {
                buf: VecDeque::with_capacity(capacity),
                closed: false,
                blocked_producers: 0,
                high_water: 0,
            }),
            not_empty: Condvar::new(),
            not_full: Condvar::new(),
        }
    }

    fn lock(&self) -> MutexGuard<'_, State<T>> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.lock().buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_closed(&self) -> bool {
        self.lock().closed
    }

    /// Producers currently waiting for space.
    pub fn blocked_producers(&self) -> usize {
        self.lock().blocked_producers
    }

    /// Largest buffered count ever observed.
    pub fn high_water_mark(&self) -> usize {
        self.lock().high_water
    }

    /// Blocks while the queue is full. Fails once the queue is closed.
    pub fn enqueue(&self, item: T) -> Result<(), QueueClosed<T>> {
        let mut st = self.lock();
        while !st.closed && st.buf.len() >= self.capacity {
            st.blocked_producers += 1;
            st = self.not_full.wait(st).unwrap_or_else(|p| p.into_inner());
            st.blocked_producers -= 1;
        }
        if st.closed {
            return Err(QueueClosed(item));
        }
        st.buf.push_back(item);
        st.high_water = st.high_water.max(st.buf.len());
        drop(st);
        self.not_empty.notify_one();
        Ok(())
    }

    /// Waits up to `timeout` for an item. Buffered items are still delivered after close.
    pub fn dequeue(&self, timeout: Duration) -> Result<T, DequeueError> {
        let deadline = Instant::now() + timeout;
        let mut st = self.lock();
        loop {
            if let Some(item) = st.buf.pop_front() {
                drop(st);
                self.not_full.notify_one();
                return Ok(item);
            }
            if st.closed {
                return Err(DequeueError::Closed);
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(DequeueError::Timeout);
            }
            st = self
                .not_empty
                .wait_timeout(st, deadline - now)
                .unwrap_or_else(|p| p.into_inner())
                .0;
        }
    }

    /// Idempotent. Wakes every blocked producer and consumer.
    pub fn close(&self) {
        let mut st = self.lock();
        st.closed = true;
        drop(st);
        self.not_full.notify_all();
        self.not_empty.notify_all();
    }
}

/// Handle on running producer threads.
pub struct Feeder {
    handles: Vec<JoinHandle<usize>>,
}

impl Feeder {
    /// Waits for all producers; returns how many items each one enqueued.
    pub fn join(self) -> Result<Vec<usize>> {
        self.handles
            .into_iter()
            .map(|h| h.join().map_err(|_| Error::Internal("feeding thread panicked".into())))
            .collect()
    }

    pub fn producer_count(&self) -> usize {
        self.handles.len()
    }
}

fn spawn_producers<T, F>(queue: &Arc<FeedingQueue<T>>, count: usize, mut make: F) -> Result<Feeder>
where
    T: Send + 'static,
    F: FnMut(usize) -> Box<dyn FnMut() -> Option<T> + Send>,
{
    if queue.is_closed() {
        return Err(Error::State("cannot start feeding a closed queue".into()));
    }
    if count == 0 {
        return Err(Error::validation("at least one producer is required"));
    }
    let live = Arc::new(AtomicUsize::new(count));
    let handles = (0..count)
        .map(|i| {
            let q = Arc::clone(queue);
            let live = Arc::clone(&live);
            let mut next = make(i);
            thread::Builder::new()
                .name(format!("feeder-{i}"))
                .spawn(move || {
                    let mut produced = 0;
                    while let Some(item) = next() {
                        if q.enqueue(item).is_err() {
                            break;
                        }
                        produced += 1;
                    }
                    // The last producer to finish closes the queue so consumers drain and stop.
                    if live.fetch_sub(1, Ordering::AcqRel) == 1 {
                        q.close();
                    }
                    produced
                })
                .expect("spawn feeding thread")
        })
        .collect();
    Ok(Feeder { handles })
}

/// Runs `producer_count` threads that pull from one shared source.
///
/// With a single producer, items arrive in source order. The queue is closed
/// when the source is exhausted.
pub fn start_feeding<T, I>(queue: &Arc<FeedingQueue<T>>, source: I, producer_count: usize) -> Result<Feeder>
where
    T: Send + 'static,
    I: Iterator<Item = T> + Send + 'static,
{
    let shared = Arc::new(Mutex::new(source));
    spawn_producers(queue, producer_count, |_| {
        let shared = Arc::clone(&shared);
        Box::new(move || shared.lock().unwrap_or_else(|p| p.into_inner()).next())
    })
}

/// One producer thread per source.
pub fn start_feeding_from<T, I>(queue: &Arc<FeedingQueue<T>>, sources: Vec<I>) -> Result<Feeder>
where
    T: Send + 'static,
    I: Iterator<Item = T> + Send + 'static,
{
    let mut sources: Vec<Option<I>> = sources.into_iter().map(Some).collect();
    let n = sources.len();
    spawn_producers(queue, n, |i| {
        let mut src = sources[i].take().expect("each source used once");
        Box::new(move || src.next())
    })
}
