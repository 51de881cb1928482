//! Fan-out of wire messages to subscribers.
//!
//! The hub stamps each published message with the next seq for its type and
//! hands the same message to every subscriber, so all consoles see identical
//! seqs. A subscriber's queue never blocks the publisher: lossy types
//! (frames, features, predictions, telemetry) beyond the subscriber's budget
//! drop oldest-first, everything else is kept.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use crate::wire::{MessageType, Payload, WireMessage};

pub const DEFAULT_LOSSY_CAPACITY: usize = 256;

#[derive(Debug, Clone)]
pub struct SubscriberOptions {
    /// Types delivered to this subscriber.
    pub types: Vec<MessageType>,
    /// Keep every message regardless of type (recorders).
    pub lossless: bool,
    pub lossy_capacity: usize,
}

impl SubscriberOptions {
    /// Everything except raw frames.
    pub fn console(stream_frames: bool) -> Self {
        Self {
            types: MessageType::ALL
                .into_iter()
                .filter(|&t| stream_frames || t != MessageType::Frame)
                .collect(),
            lossless: false,
            lossy_capacity: DEFAULT_LOSSY_CAPACITY,
        }
    }

    pub fn recorder() -> Self {
        Self {
            types: MessageType::ALL.to_vec(),
            lossless: true,
            lossy_capacity: usize::MAX,
        }
    }
}

#[derive(Debug, Default)]
struct Queue {
    items: VecDeque<WireMessage>,
    lossy: usize,
    closed: bool,
}

#[derive(Debug)]
pub struct Subscriber {
    id: u64,
    options: SubscriberOptions,
    queue: Mutex<Queue>,
    ready: Condvar,
    dropped: AtomicU64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Recv {
    Message(WireMessage),
    Timeout,
    Closed,
}

impl Subscriber {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn accepts(&self, kind: MessageType) -> bool {
        self.options.types.contains(&kind)
    }

    /// Lossy messages discarded because this subscriber fell behind.
    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.queue.lock().expect("queue lock").items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn deliver(&self, msg: WireMessage) {
        let mut q = self.queue.lock().expect("queue lock");
        if q.closed {
            return;
        }
        let lossy = !self.options.lossless && msg.kind().is_lossy();
        if lossy {
            if q.lossy >= self.options.lossy_capacity {
                if let Some(i) = q.items.iter().position(|m| m.kind().is_lossy()) {
                    q.items.remove(i);
                    q.lossy -= 1;
                    self.dropped.fetch_add(1, Ordering::Relaxed);
                }
            }
            q.lossy += 1;
        }
        q.items.push_back(msg);
        self.ready.notify_one();
    }

    fn pop(&self, q: &mut Queue) -> Option<WireMessage> {
        let m = q.items.pop_front()?;
        if !self.options.lossless && m.kind().is_lossy() {
            q.lossy -= 1;
        }
        Some(m)
    }

    pub fn try_recv(&self) -> Recv {
        let mut q = self.queue.lock().expect("queue lock");
        match self.pop(&mut q) {
            Some(m) => Recv::Message(m),
            None if q.closed => Recv::Closed,
            None => Recv::Timeout,
        }
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Recv {
        let deadline = Instant::now() + timeout;
        let mut q = self.queue.lock().expect("queue lock");
        loop {
            if let Some(m) = self.pop(&mut q) {
                return Recv::Message(m);
            }
            if q.closed {
                return Recv::Closed;
            }
            let now = Instant::now();
            if now >= deadline {
                return Recv::Timeout;
            }
            q = self.ready.wait_timeout(q, deadline - now).expect("queue lock").0;
        }
    }

    /// Blocks until a message arrives or the hub closes.
    pub fn recv(&self) -> Option<WireMessage> {
        loop {
            match self.recv_timeout(Duration::from_secs(3600)) {
                Recv::Message(m) => return Some(m),
                Recv::Closed => return None,
                Recv::Timeout => {}
            }
        }
    }

    fn close(&self) {
        self.queue.lock().expect("queue lock").closed = true;
        self.ready.notify_all();
    }
}

#[derive(Debug, Default)]
struct HubState {
    seqs: HashMap<MessageType, u64>,
    subscribers: Vec<Arc<Subscriber>>,
    next_id: u64,
    last_t: f64,
    closed: bool,
}

impl HubState {
    fn stamp(&mut self, t: Option<f64>, payload: Payload) -> WireMessage {
        let seq = self.seqs.entry(payload.kind()).or_insert(0);
        *seq += 1;
        let t = match t {
            Some(t) => {
                self.last_t = self.last_t.max(t);
                t
            }
            None => self.last_t,
        };
        WireMessage::new(*seq, t, payload)
    }
}

#[derive(Debug, Default)]
pub struct Hub {
    state: Mutex<HubState>,
}

impl Hub {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn subscribe(&self, options: SubscriberOptions) -> Arc<Subscriber> {
        let mut s = self.state.lock().expect("hub lock");
        s.next_id += 1;
        let sub = Arc::new(Subscriber {
            id: s.next_id,
            options,
            queue: Mutex::new(Queue::default()),
            ready: Condvar::new(),
            dropped: AtomicU64::new(0),
        });
        if s.closed {
            sub.close();
        } else {
            s.subscribers.push(sub.clone());
        }
        sub
    }

    pub fn unsubscribe(&self, sub: &Subscriber) {
        let mut s = self.state.lock().expect("hub lock");
        s.subscribers.retain(|x| x.id != sub.id);
        sub.close();
    }

    pub fn subscriber_count(&self) -> usize {
        self.state.lock().expect("hub lock").subscribers.len()
    }

    pub fn wants(&self, kind: MessageType) -> bool {
        let s = self.state.lock().expect("hub lock");
        s.subscribers.iter().any(|x| x.accepts(kind))
    }

    /// Stamps and fans out a message at signal time `t`.
    pub fn publish(&self, t: f64, payload: Payload) -> WireMessage {
        self.publish_inner(Some(t), payload)
    }

    /// Like [`Hub::publish`], stamped with the latest signal time seen.
    pub fn publish_now(&self, payload: Payload) -> WireMessage {
        self.publish_inner(None, payload)
    }

    fn publish_inner(&self, t: Option<f64>, payload: Payload) -> WireMessage {
        let mut s = self.state.lock().expect("hub lock");
        let msg = s.stamp(t, payload);
        for sub in &s.subscribers {
            if sub.accepts(msg.kind()) {
                sub.deliver(msg.clone());
            }
        }
        msg
    }

    /// Sends a message to one subscriber only (hello, ack, per-connection errors).
    pub fn reply(&self, to: &Subscriber, payload: Payload) -> WireMessage {
        let mut s = self.state.lock().expect("hub lock");
        let msg = s.stamp(None, payload);
        to.deliver(msg.clone());
        msg
    }

    /// Closes every subscriber; they drain what is queued, then see `Closed`.
    pub fn close(&self) {
        let mut s = self.state.lock().expect("hub lock");
        s.closed = true;
        for sub in s.subscribers.drain(..) {
            sub.close();
        }
    }
}
