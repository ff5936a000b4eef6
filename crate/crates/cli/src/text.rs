//! Human-readable renderings. Kept free of timestamps from the wall clock
//! and of map iteration order, so query output is byte-stable.

use std::fmt::Write;

use ctb_core::network::NetworkReport;
use ctb_core::node::IdentityFile;
use ctb_core::ledger::VerificationReport;
use ctb_explorer::views::{BlockView, ChainSummary, DeviceView, EvidenceDoc, EvidenceRow, InvokeResponse, TrailView};
use serde::Serialize;

use crate::{DeviceCheck, GetResponse, Names, ScenarioSummary};

/// The serialized name of a unit enum variant.
fn tag<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        other => format!("{other:?}"),
    }
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

pub fn roster(ids: &[IdentityFile]) -> String {
    let mut s = String::new();
    for f in ids {
        let _ = writeln!(s, "{:<16} {:<10} {}", f.name, f.role, f.address);
    }
    s
}

pub fn chain_summary(c: &ChainSummary) -> String {
    format!(
        "chain     {}\nblocks    {}\ntip       {}\nevidence  {} ({} erased)\ndevices   {}\n",
        c.chain_id, c.height, c.tip_hash, c.evidence_count, c.erased_count, c.device_count
    )
}

pub fn block(b: &BlockView, names: &Names) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "block {}", b.height);
    let _ = writeln!(s, "  hash       {}", b.block_hash);
    let _ = writeln!(s, "  prev       {}", b.prev_hash);
    let _ = writeln!(s, "  timestamp  {}", b.timestamp);
    let _ = writeln!(s, "  merkle     {}", b.tx_merkle_root);
    let _ = writeln!(s, "  proposer   {}", names.show(&b.proposer));
    let _ = writeln!(s, "  txs        {}", b.tx_count);
    for tx in &b.txs {
        let _ = writeln!(s, "    {} {:<15} {}", tx.tx_id, tx.kind, names.show(&tx.submitter));
    }
    s
}

pub fn verification(r: &VerificationReport) -> String {
    match r.first_failure {
        None => format!("chain valid: {} blocks verified\n", r.block_count),
        Some(h) => {
            let mut s = format!("chain INVALID: first failure at height {h}\n");
            for c in r.blocks.iter().filter(|c| !c.valid) {
                let _ = writeln!(s, "  height {}: {}", c.height, c.reason.as_deref().unwrap_or("invalid"));
            }
            s
        }
    }
}

pub fn evidence(e: &EvidenceDoc, names: &Names) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "id           {}", e.id);
    let _ = writeln!(s, "creator      {}", names.show(&e.creator));
    let _ = writeln!(s, "owner        {}", names.show(&e.own));
    let prev = e.own_prev.map_or_else(|| "-".to_owned(), |a| names.show(&a));
    let _ = writeln!(s, "prev owner   {prev}");
    let _ = writeln!(s, "device type  {}", e.device_type);
    let _ = writeln!(s, "incident at  {}", e.tm);
    let _ = writeln!(s, "description  {}", e.dsc);
    let _ = writeln!(s, "custody      {} interval(s)", e.custody_times.len());
    let _ = writeln!(s, "erased       {}", yes_no(e.erased));
    if let Some(l) = &e.payload_locator {
        let _ = writeln!(s, "payload at   {}", names.show(&l.isp));
    }
    s
}

pub fn evidence_list(rows: &[EvidenceRow], names: &Names) -> String {
    let mut s = String::new();
    for r in rows {
        let erased = if r.erased { "  [erased]" } else { "" };
        let _ = writeln!(s, "{}  {:<12} {}{erased}", r.id, r.device_type, names.show(&r.own));
    }
    if rows.is_empty() {
        s.push_str("no evidence visible\n");
    }
    s
}

pub fn trail(t: &TrailView, names: &Names) -> String {
    let mut s = format!("custody trail of {}\n", t.id);
    for (i, c) in t.trail.iter().enumerate() {
        let end = c.end.map_or_else(|| "open".to_owned(), |e| e.to_string());
        let _ = writeln!(s, "  {}. {:<12} {:<12} {}", i + 1, c.start, end, names.show(&c.owner));
    }
    s
}

pub fn device(d: &DeviceView, names: &Names) -> String {
    let mut s = format!("device {}\n", d.device_id);
    for (i, r) in d.history.iter().enumerate() {
        let _ = writeln!(s, "  {}. registered at {} by {}", i + 1, r.registered_at, names.show(&r.registrar));
        let _ = writeln!(s, "     firmware {}", r.firmware_hash);
        let _ = writeln!(s, "     config   {}", r.config_hash);
    }
    s
}

pub fn device_check(c: &DeviceCheck) -> String {
    format!(
        "device {}: {} (recorded in tx {} at height {})\n",
        c.device_id,
        tag(&c.result),
        c.tx_id,
        c.block_height
    )
}

pub fn receipt(what: &str, r: &InvokeResponse) -> String {
    let note = if r.fresh { "" } else { " (already committed)" };
    format!("{what} committed in tx {} at height {}{note}\n", r.tx_id, r.block_height)
}

pub fn get(g: &GetResponse) -> String {
    let mut s = format!(
        "evidence {} retrieved: {} bytes, id verified with {}\naccess recorded in tx {} at height {}\n",
        g.id,
        g.payload_len,
        tag(&g.hash),
        g.access_tx_id,
        g.block_height
    );
    if let Some(p) = &g.out {
        let _ = writeln!(s, "payload written to {}", p.display());
    }
    s
}

pub fn scenario(r: &ScenarioSummary) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "seed            {}", r.seed);
    let _ = writeln!(s, "devices         {} ({} vulnerable)", r.devices, r.vulnerable);
    let _ = writeln!(s, "infected        {}", r.infected);
    let _ = writeln!(s, "traffic events  {}", r.traffic_events);
    let total: usize = r.incidents.values().sum();
    let _ = writeln!(s, "incidents       {total}");
    for (kind, n) in &r.incidents {
        let _ = writeln!(s, "  {:<12} {n}", kind.as_str());
    }
    for i in &r.infections {
        let by = i.by.as_deref().unwrap_or("initial compromise");
        let _ = writeln!(s, "  infected {} at {} via {by}", i.device, i.at);
    }
    if let Some(g) = &r.ingest {
        let height = g.block_height.map_or_else(|| "-".to_owned(), |h| h.to_string());
        let _ = writeln!(s, "evidence        {} created by {} at height {height}", g.evidence.len(), g.isp);
        let _ = writeln!(s, "devices registered {}", g.devices_registered);
        for e in &g.evidence {
            let _ = writeln!(s, "  {} {:<12} {} ({})", e.id, e.attack_kind.as_str(), e.source_device, e.device_type);
        }
    }
    s
}

pub fn network(r: &NetworkReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "seed            {}", r.seed);
    let _ = writeln!(s, "result          {}", if r.passed() { "PASS" } else { "FAIL" });
    let _ = writeln!(s, "quiescent       {} at {} ms", yes_no(r.quiescent), r.end_ms);
    let _ = writeln!(s, "converged       {}", yes_no(r.converged));
    let _ = writeln!(s, "common prefix   {}", yes_no(r.common_prefix));
    let _ = writeln!(s, "persistence     {}", yes_no(r.persistence));
    let _ = writeln!(
        s,
        "transactions    {} submitted, {} committed, {} abandoned, {} rejected at entry",
        r.submitted, r.committed, r.abandoned, r.rejected_at_entry
    );
    let _ = writeln!(s, "messages        {} sent, {} dropped", r.messages_sent, r.messages_dropped);
    for n in &r.nodes {
        let mut flags = Vec::new();
        if n.tampered {
            flags.push("tampered");
        }
        if n.stalled {
            flags.push("stalled");
        }
        if !n.chain_valid {
            flags.push("invalid");
        }
        let flags = if flags.is_empty() { String::new() } else { format!(" [{}]", flags.join(", ")) };
        let _ = writeln!(s, "  {:<10} height {:<5} tip {}{flags}", n.node_id, n.height, n.tip_hash);
    }
    for f in &r.faults {
        let _ = writeln!(s, "  fault at {} ms: {}", f.at_ms, f.detail);
    }
    if !r.alerts.is_empty() {
        let _ = writeln!(s, "alerts          {}", r.alerts.len());
    }
    s
}
