//! Budget-feasible allocation of trailer tasks by per-task sealed-bid reverse
//! auctions.
//!
//! Tasks are screened in decreasing value order. Each goes to its lowest bidder
//! at a second-price payment capped by the task value, provided the lowest bid
//! does not exceed the value and the payment still fits the remaining budget.

use std::io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrailerTask {
    pub origin: String,
    pub destination: String,
    pub epoch: usize,
    pub quantity: u32,
    pub value: f64,
}

/// A sealed bid on the task at index `task`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bid {
    pub bidder: u32,
    pub task: usize,
    pub amount: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Award {
    pub winner: Option<u32>,
    pub payment: f64,
}

/// One award per input task, in input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub awards: Vec<Award>,
    pub total_paid: f64,
}

impl Allocation {
    pub fn allocated(&self) -> usize {
        self.awards.iter().filter(|a| a.winner.is_some()).count()
    }

    /// Writes `task_id,winner,payment`; unallocated tasks have an empty winner.
    pub fn write_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["task_id", "winner", "payment"])?;
        for (i, a) in self.awards.iter().enumerate() {
            let winner = a.winner.map(|b| b.to_string()).unwrap_or_default();
            w.write_record([i.to_string(), winner, a.payment.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn allocate_tasks(tasks: &[TrailerTask], bids: &[Bid], budget: f64) -> Allocation {
    let mut by_task: Vec<Vec<Bid>> = vec![Vec::new(); tasks.len()];
    for b in bids {
        if b.task < tasks.len() && b.amount >= 0.0 {
            by_task[b.task].push(*b);
        }
    }
    for list in &mut by_task {
        list.sort_by(|a, b| a.amount.total_cmp(&b.amount).then(a.bidder.cmp(&b.bidder)));
    }
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    order.sort_by(|&i, &j| tasks[j].value.total_cmp(&tasks[i].value).then(i.cmp(&j)));

    let mut awards = vec![Award { winner: None, payment: 0.0 }; tasks.len()];
    let mut remaining = budget;
    let mut total = 0.0;
    for i in order {
        let value = tasks[i].value;
        let list = &by_task[i];
        let Some(best) = list.first() else { continue };
        if best.amount > value {
            continue;
        }
        let payment = list.get(1).map_or(value, |b| b.amount).min(value);
        if payment > remaining {
            continue;
        }
        remaining -= payment;
        total += payment;
        awards[i] = Award { winner: Some(best.bidder), payment };
    }
    Allocation { awards, total_paid: total }
}

/// Draws `per_task` bids per task with costs uniform in `[0.5, 1.2] x value`.
/// Bidder ids are unique across the returned list.
pub fn generate_bids(tasks: &[TrailerTask], per_task: usize, seed: u64) -> Vec<Bid> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bids = Vec::with_capacity(tasks.len() * per_task);
    let mut next = 0u32;
    for (i, task) in tasks.iter().enumerate() {
        for _ in 0..per_task {
            let amount = task.value * rng.gen_range(0.5..=1.2);
            bids.push(Bid { bidder: next, task: i, amount });
            next += 1;
        }
    }
    bids
}
