//! In-process topic broker with sticky per-session partitioning.
//!
//! Stands in for an external streaming platform: topics hold per-partition
//! FIFO queues, a session always hashes to the same partition, and each
//! partition is owned by exactly one worker of the topic's consumer group.
//! Delivery is exactly-once in-process; there is no persistence, rebalancing
//! or backpressure beyond a soft depth limit tracked for metrics.

use crate::types::{Message, SessionId};
use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

pub type WorkerId = usize;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum BrokerError {
    #[error("unknown topic `{0}`")]
    UnknownTopic(String),
    #[error("worker {worker} is not in the consumer group of `{topic}`")]
    UnknownWorker { topic: String, worker: WorkerId },
}

/// Deterministic stable session -> partition mapping (splitmix64 finalizer).
pub fn assign_partition(session: SessionId, n_partitions: usize) -> usize {
    assert!(n_partitions >= 1, "topics need at least one partition");
    (stable_hash(session.0) % n_partitions as u64) as usize
}

fn stable_hash(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Default)]
struct Partition {
    queue: VecDeque<Message>,
    high_watermark: usize,
}

struct TopicState {
    partitions: Vec<Mutex<Partition>>,
    /// Size of the consumer group; partition p is owned by worker p % workers.
    workers: usize,
    soft_limit: usize,
    soft_limit_breaches: AtomicU64,
}

/// Thread-safe topic registry. Partition queues are locked independently, so
/// polling one partition never blocks publishers on another.
pub struct Broker {
    topics: RwLock<BTreeMap<String, Arc<TopicState>>>,
    default_soft_limit: usize,
}

impl Default for Broker {
    fn default() -> Self {
        Broker::new()
    }
}

impl Broker {
    pub fn new() -> Self {
        Broker { topics: RwLock::new(BTreeMap::new()), default_soft_limit: 4096 }
    }

    pub fn with_soft_limit(limit: usize) -> Self {
        Broker { topics: RwLock::new(BTreeMap::new()), default_soft_limit: limit }
    }

    /// Creates the topic if absent. `workers` is the consumer-group size;
    /// partition counts default to the worker count of the consuming
    /// component, so callers usually pass the same value twice.
    pub fn ensure_topic(&self, name: &str, partitions: usize, workers: usize) {
        assert!(partitions >= 1 && workers >= 1);
        let mut topics = self.topics.write().unwrap();
        topics.entry(name.to_string()).or_insert_with(|| {
            Arc::new(TopicState {
                partitions: (0..partitions).map(|_| Mutex::new(Partition::default())).collect(),
                workers,
                soft_limit: self.default_soft_limit,
                soft_limit_breaches: AtomicU64::new(0),
            })
        });
    }

    pub fn topic_exists(&self, name: &str) -> bool {
        self.topics.read().unwrap().contains_key(name)
    }

    fn topic(&self, name: &str) -> Result<Arc<TopicState>, BrokerError> {
        self.topics
            .read()
            .unwrap()
            .get(name)
            .cloned()
            .ok_or_else(|| BrokerError::UnknownTopic(name.to_string()))
    }

    pub fn partitions(&self, name: &str) -> Result<usize, BrokerError> {
        Ok(self.topic(name)?.partitions.len())
    }

    /// Worker that owns the given session's partition on this topic.
    pub fn worker_for(&self, name: &str, session: SessionId) -> Result<WorkerId, BrokerError> {
        let topic = self.topic(name)?;
        Ok(assign_partition(session, topic.partitions.len()) % topic.workers)
    }

    /// Consumer-group assignment map as (partition, worker) pairs.
    pub fn assignment(&self, name: &str) -> Result<Vec<(usize, WorkerId)>, BrokerError> {
        let topic = self.topic(name)?;
        Ok((0..topic.partitions.len()).map(|p| (p, p % topic.workers)).collect())
    }

    /// Appends the message to its session's partition. The ack is the `Ok`.
    pub fn publish(&self, name: &str, message: Message) -> Result<(), BrokerError> {
        let topic = self.topic(name)?;
        let p = assign_partition(message.session, topic.partitions.len());
        let mut partition = topic.partitions[p].lock().unwrap();
        partition.queue.push_back(message);
        let depth = partition.queue.len();
        if depth > partition.high_watermark {
            partition.high_watermark = depth;
        }
        if depth > topic.soft_limit {
            topic.soft_limit_breaches.fetch_add(1, Ordering::Relaxed);
        }
        Ok(())
    }

    /// Removes and returns everything currently queued on the worker's
    /// partitions, per-partition order preserved. Empty when nothing pending.
    pub fn poll_pending(&self, name: &str, worker: WorkerId) -> Result<Vec<Message>, BrokerError> {
        let topic = self.topic(name)?;
        if worker >= topic.workers {
            return Err(BrokerError::UnknownWorker { topic: name.to_string(), worker });
        }
        let mut out = Vec::new();
        for p in 0..topic.partitions.len() {
            if p % topic.workers != worker {
                continue;
            }
            let mut partition = topic.partitions[p].lock().unwrap();
            out.extend(partition.queue.drain(..));
        }
        Ok(out)
    }

    /// Total queued messages across partitions.
    pub fn depth(&self, name: &str) -> Result<usize, BrokerError> {
        let topic = self.topic(name)?;
        Ok(topic.partitions.iter().map(|p| p.lock().unwrap().queue.len()).sum())
    }

    /// Deepest any partition of the topic has ever been.
    pub fn high_watermark(&self, name: &str) -> Result<usize, BrokerError> {
        let topic = self.topic(name)?;
        Ok(topic.partitions.iter().map(|p| p.lock().unwrap().high_watermark).max().unwrap_or(0))
    }

    pub fn soft_limit_breaches(&self, name: &str) -> Result<u64, BrokerError> {
        Ok(self.topic(name)?.soft_limit_breaches.load(Ordering::Relaxed))
    }
}
