use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

macro_rules! counters {
    ($($name:ident),* $(,)?) => {
        /// Operation counters, updated with relaxed atomics.
        #[derive(Debug, Default)]
        pub struct Stats {
            $(pub(crate) $name: AtomicU64,)*
        }

        /// Point-in-time copy of [`Stats`].
        #[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
        pub struct StatsSnapshot {
            $(pub $name: u64,)*
        }

        impl Stats {
            pub fn snapshot(&self) -> StatsSnapshot {
                StatsSnapshot {
                    $($name: self.$name.load(Ordering::Relaxed),)*
                }
            }

            pub fn reset(&self) {
                $(self.$name.store(0, Ordering::Relaxed);)*
            }
        }
    };
}

counters! {
    puts,
    deletes,
    gets,
    gc_invocations,
    lightweight_runs,
    lightweight_effective,
    normal_runs,
    entries_reclaimed,
    splits,
    splits_without_division,
    second_splits,
    extra_splits,
    split_imbalance_sum,
    merges,
    resplits,
    fragment_insertions,
    leaf_visits,
    entries_examined,
    read_retries,
    leaves_retired,
    leaves_freed,
}

impl Stats {
    #[inline]
    pub(crate) fn add(counter: &AtomicU64, n: u64) {
        counter.fetch_add(n, Ordering::Relaxed);
    }
}

impl StatsSnapshot {
    /// Copy with the counters that depend on reclamation timing zeroed.
    pub fn structural(self) -> Self {
        StatsSnapshot {
            leaves_freed: 0,
            ..self
        }
    }
}
