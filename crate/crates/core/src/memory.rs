//! Per-type memory of extracted arguments.

use crate::backbone::{run_encoder, ModelParams};
use crate::graph::{Graph, Var};

/// Row 0 is the event-type embedding; each later row is one extracted
/// argument (argument vector plus the vector of the sentence it came from).
#[derive(Clone, Copy, Debug)]
pub struct MemoryTensor {
    pub event_type: usize,
    pub rows: Var,
    len: usize,
}

impl MemoryTensor {
    /// Number of rows, `1 + appended arguments`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn appended(&self) -> usize {
        self.len - 1
    }
}

pub fn init_memory(g: &mut Graph, params: &ModelParams, event_type: usize) -> MemoryTensor {
    assert!(event_type < params.config.num_types(), "event type {event_type} out of range");
    let rows = g.gather(params.ids.type_embed, &[event_type]);
    MemoryTensor { event_type, rows, len: 1 }
}

/// Column sum of the memory-encoded rows, `1 × d`.
pub fn summarize_memory(g: &mut Graph, params: &ModelParams, m: &MemoryTensor) -> Var {
    let h = run_encoder(g, m.rows, None, &params.ids.memory_encoder, false);
    g.sum_rows(h)
}

/// The role embedding encoded jointly with the memory, `1 × d`. Only the
/// role's own output row is kept.
pub fn build_query(g: &mut Graph, params: &ModelParams, m: &MemoryTensor, role: usize) -> Var {
    assert!(role < params.config.roles_per_type[m.event_type], "role {role} out of range");
    let r = role_embedding(g, params, m.event_type, role);
    if !params.config.ablations.query_construction {
        return r;
    }
    let x = g.concat_rows(&[r, m.rows]);
    let h = run_encoder(g, x, None, &params.ids.memory_encoder, false);
    g.row(h, 0)
}

pub fn role_embedding(g: &mut Graph, params: &ModelParams, event_type: usize, role: usize) -> Var {
    g.gather(params.ids.role_embed, &[params.role_row(event_type, role)])
}

/// A new memory with `arg_repr + sentence_repr` appended; `m` is left as is.
pub fn update_memory(g: &mut Graph, m: &MemoryTensor, arg_repr: Var, sentence_repr: Var) -> MemoryTensor {
    let entry = g.add(arg_repr, sentence_repr);
    let rows = g.concat_rows(&[m.rows, entry]);
    MemoryTensor { event_type: m.event_type, rows, len: m.len + 1 }
}
