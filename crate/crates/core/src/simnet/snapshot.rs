//! Line-delimited JSON dump of a network, for debugging.
//!
//! One object per line, tagged by `kind`:
//!
//! ```text
//! {"kind":"meta","seed":7,"clock":0,"k":20,"nodes":3}
//! {"kind":"node","id":"<64 hex>","behavior":"Honest","online":true}
//! {"kind":"record","holder":"<64 hex>","cid":"<64 hex>","provider":"<64 hex>","expires_at":172800}
//! ```
//!
//! Nodes appear in ascending ID order, each followed by its stored records.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::{NodeBehavior, SimNetwork};
use crate::keyspace::Key256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SnapshotLine {
    Meta {
        seed: u64,
        clock: u64,
        k: usize,
        nodes: usize,
    },
    Node {
        id: Key256,
        behavior: NodeBehavior,
        online: bool,
    },
    Record {
        holder: Key256,
        cid: Key256,
        provider: Key256,
        expires_at: u64,
    },
}

impl SimNetwork {
    pub fn snapshot_lines(&self) -> Vec<SnapshotLine> {
        let mut lines = vec![SnapshotLine::Meta {
            seed: self.seed,
            clock: self.clock,
            k: self.config.k,
            nodes: self.nodes.len(),
        }];
        for node in &self.nodes {
            lines.push(SnapshotLine::Node {
                id: node.id,
                behavior: node.behavior.clone(),
                online: node.online,
            });
            lines.extend(node.stored_records().map(|r| SnapshotLine::Record {
                holder: node.id,
                cid: r.cid,
                provider: r.provider,
                expires_at: r.expires_at,
            }));
        }
        lines
    }

    pub fn write_snapshot<W: Write>(&self, mut out: W) -> io::Result<()> {
        for line in self.snapshot_lines() {
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }
}
