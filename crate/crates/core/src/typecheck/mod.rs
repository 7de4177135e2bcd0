//! Static checkers: stream token usage and layout/effect refinement.

mod awaits;
pub mod events;
mod layout;
mod streams;

use serde::Serialize;

use crate::ir::{Diagnostic, ReduceOp, SourceSpan};

pub use awaits::insert_awaits;
pub use layout::{check_layouts, layout_join, AllReduceSite, Effects, LayoutReport, TaskLayoutInfo, TypedValue};
pub use streams::{
    check_streams, instance_label, instances, stream_label, Instance, StreamReport, StreamState, StreamUsage, WaitEdge,
    EVENT_BUDGET,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, thiserror::Error)]
pub enum StreamTypeError {
    #[error("deadlock: {}", fmt_cycle(.cycle))]
    Deadlock {
        blocked: Vec<WaitEdge>,
        cycle: Vec<WaitEdge>,
    },
    #[error("stream `{stream}` leaks tokens: {puts} puts vs {gets} gets (residual {residual})")]
    TokenLeak {
        stream: String,
        puts: u64,
        gets: u64,
        residual: i64,
    },
    #[error("get result `{name}` in task `{task}` is used {uses} times, expected exactly once")]
    Future {
        task: String,
        name: String,
        uses: u64,
        span: SourceSpan,
    },
    #[error("stream `{stream}` has more than one {role}: {}", .tasks.join(", "))]
    NotPointToPoint {
        stream: String,
        role: &'static str,
        tasks: Vec<String>,
    },
    #[error("stream `{stream}`: {detail}")]
    StreamIndex {
        stream: String,
        detail: String,
        span: SourceSpan,
    },
    #[error("more than {limit} stream events")]
    TooManyEvents { limit: u64 },
}

fn fmt_cycle(c: &[WaitEdge]) -> String {
    let parts: Vec<String> = c
        .iter()
        .map(|e| format!("{} waits to {} `{}`", e.task, e.op, e.stream))
        .collect();
    parts.join(", ")
}

impl StreamTypeError {
    pub fn code(&self) -> &'static str {
        match self {
            StreamTypeError::Deadlock { .. } => "DEADLOCK",
            StreamTypeError::TokenLeak { .. } => "TOKEN_LEAK",
            StreamTypeError::Future { .. } => "FUTURE_REUSE",
            StreamTypeError::NotPointToPoint { .. } => "NOT_POINT_TO_POINT",
            StreamTypeError::StreamIndex { .. } => "STREAM_INDEX",
            StreamTypeError::TooManyEvents { .. } => "TOO_MANY_EVENTS",
        }
    }

    pub fn to_diagnostic(&self) -> Diagnostic {
        let span = match self {
            StreamTypeError::Future { span, .. } | StreamTypeError::StreamIndex { span, .. } => Some(*span),
            _ => None,
        };
        let mut d = Diagnostic::error(self.code(), span, self.to_string());
        if let StreamTypeError::Deadlock { blocked, .. } = self {
            for b in blocked {
                d = d.with_note(format!("{} blocked on {} `{}`", b.task, b.op, b.stream));
            }
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, thiserror::Error)]
pub enum LayoutTypeError {
    #[error("task `{task}`: matmul contraction labels differ ({lhs} x {rhs})")]
    ContractionMismatch {
        task: String,
        lhs: String,
        rhs: String,
        span: SourceSpan,
    },
    #[error("task `{task}`: value assigned to `{param}` still has pending reductions {}", fmt_ops(.ops))]
    PendingEffect {
        task: String,
        param: String,
        ops: Vec<ReduceOp>,
        span: SourceSpan,
    },
    #[error("task `{task}`: `{param}` is declared {declared} but assigned a value laid out as {found}")]
    LayoutMismatch {
        task: String,
        param: String,
        declared: String,
        found: String,
        span: SourceSpan,
    },
    #[error("task `{task}`: cannot join S{a} with S{b}")]
    AxisConflict {
        task: String,
        a: u32,
        b: u32,
        span: SourceSpan,
    },
    #[error("task `{task}`: allreduce with `{op}` but the value has no pending `{op}`")]
    EffectMismatch {
        task: String,
        op: ReduceOp,
        span: SourceSpan,
    },
    #[error("task `{task}`: {detail}")]
    Shape {
        task: String,
        detail: String,
        span: SourceSpan,
    },
}

fn fmt_ops(ops: &[ReduceOp]) -> String {
    let s: Vec<&str> = ops.iter().map(|o| o.symbol()).collect();
    format!("{{{}}}", s.join(","))
}

impl LayoutTypeError {
    pub fn code(&self) -> &'static str {
        match self {
            LayoutTypeError::ContractionMismatch { .. } => "CONTRACTION_MISMATCH",
            LayoutTypeError::PendingEffect { .. } => "PENDING_EFFECT",
            LayoutTypeError::LayoutMismatch { .. } => "LAYOUT_MISMATCH",
            LayoutTypeError::AxisConflict { .. } => "AXIS_CONFLICT",
            LayoutTypeError::EffectMismatch { .. } => "EFFECT_MISMATCH",
            LayoutTypeError::Shape { .. } => "SHAPE_MISMATCH",
        }
    }

    pub fn span(&self) -> SourceSpan {
        match self {
            LayoutTypeError::ContractionMismatch { span, .. }
            | LayoutTypeError::PendingEffect { span, .. }
            | LayoutTypeError::LayoutMismatch { span, .. }
            | LayoutTypeError::AxisConflict { span, .. }
            | LayoutTypeError::EffectMismatch { span, .. }
            | LayoutTypeError::Shape { span, .. } => *span,
        }
    }

    pub fn to_diagnostic(&self) -> Diagnostic {
        Diagnostic::error(self.code(), Some(self.span()), self.to_string())
    }
}
