//! Pipeline stages shared by the commands. Each stage either returns its
//! result or a [`Failure`] carrying the exit code.

use std::collections::BTreeMap;
use std::path::Path;

use datoc::dma_sched::{check_port_safety, DmaSchedule};
use datoc::ir::{validate_program, Diagnostic, FabricConfig, Program, Severity};
use datoc::mapping::{search_mapping, MapState, PhysicalMapping};
use datoc::parser::parse_program;
use datoc::sim::{estimate, lcg_inputs, oracle_reference, run_functional, SimConfig, SimError, SimTrace, TensorValue};
use datoc::typecheck::{check_layouts, check_streams, StreamReport};
use datoc::vmg::{build_lowered, to_json, Vmg};
use serde_json::{json, Value};

use crate::container;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    Parse = 1,
    Type = 2,
    NoMapping = 3,
    Mismatch = 4,
    Deadlock = 5,
    Usage = 64,
    Internal = 70,
}

#[derive(Debug, Clone)]
pub struct Failure {
    pub exit: Exit,
    pub code: String,
    pub message: String,
    pub diagnostics: Vec<Diagnostic>,
}

impl Failure {
    pub fn new(exit: Exit, code: &str, message: impl Into<String>) -> Self {
        Self {
            exit,
            code: code.into(),
            message: message.into(),
            diagnostics: Vec::new(),
        }
    }

    fn diag(exit: Exit, d: Diagnostic) -> Self {
        Self {
            exit,
            code: d.code.clone(),
            message: d.message.clone(),
            diagnostics: vec![d],
        }
    }

    pub fn from_sim(e: SimError) -> Self {
        match e {
            SimError::Deadlock(d) => {
                let mut f = Failure::new(Exit::Deadlock, "SIM_DEADLOCK", d.to_string());
                f.diagnostics.push(
                    Diagnostic::error("SIM_DEADLOCK", None, d.to_string())
                        .with_note(format!("wait cycle channels: {}", d.cycle_channels.join(", "))),
                );
                f
            }
            SimError::NoPlaceable => Failure::new(Exit::NoMapping, "NO_FEASIBLE_MAPPING", e.to_string()),
            SimError::Input(..) => Failure::new(Exit::Usage, "BAD_INPUTS", e.to_string()),
            e => Failure::new(Exit::Internal, "SIM_ERROR", e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MapOptions {
    pub rows: usize,
    pub cols: usize,
    pub budget: Option<usize>,
    pub candidates: usize,
}

impl MapOptions {
    pub fn fabric(&self) -> FabricConfig {
        FabricConfig::with_tiles(self.rows, self.cols)
    }

    pub fn budget(&self) -> usize {
        self.budget.unwrap_or(self.rows * self.cols)
    }
}

pub fn load(path: &Path) -> Result<Program, Failure> {
    let src = std::fs::read_to_string(path)
        .map_err(|e| Failure::new(Exit::Usage, "USAGE", format!("cannot read {}: {e}", path.display())))?;
    log::info!("parsing {}", path.display());
    parse_program(&src).map_err(|e| Failure::diag(Exit::Parse, e.to_diagnostic()))
}

pub fn check(p: &Program) -> Result<StreamReport, Failure> {
    let diags = validate_program(p);
    if let Some(first) = diags.iter().find(|d| d.severity == Severity::Error) {
        let mut f = Failure::diag(Exit::Type, first.clone());
        f.diagnostics = diags;
        return Err(f);
    }
    log::info!("checking streams");
    let report = check_streams(p).map_err(|e| Failure::diag(Exit::Type, e.to_diagnostic()))?;
    log::info!("checking layouts");
    check_layouts(p).map_err(|e| Failure::diag(Exit::Type, e.to_diagnostic()))?;
    Ok(report)
}

pub struct Candidate {
    pub state: MapState,
    pub mapped: Option<(PhysicalMapping, DmaSchedule, SimTrace)>,
}

pub struct Mapped {
    pub root: Vmg,
    pub candidates: Vec<Candidate>,
    pub selected: usize,
}

impl Mapped {
    pub fn best(&self) -> &(PhysicalMapping, DmaSchedule, SimTrace) {
        self.candidates[self.selected]
            .mapped
            .as_ref()
            .expect("selected candidate is mapped")
    }
}

pub fn map(p: &Program, opts: &MapOptions) -> Result<Mapped, Failure> {
    let root = build_lowered(p).map_err(|e| Failure::new(Exit::Type, "VMG_BUILD", e.to_string()))?;
    let fabric = opts.fabric();
    log::info!(
        "searching mappings for {} nodes, budget {}",
        root.node_count(),
        opts.budget()
    );
    let found = search_mapping(&root, &fabric, opts.budget(), opts.candidates)
        .map_err(|e| Failure::new(Exit::NoMapping, "NO_FEASIBLE_MAPPING", e.to_string()))?;
    let cfg = SimConfig::for_fabric(&fabric);
    let mut candidates = Vec::new();
    let mut selected: Option<(usize, u64)> = None;
    for (i, state) in found.into_iter().enumerate() {
        let mapped = estimate(&state, &cfg).map_err(Failure::from_sim)?;
        if let Some((_, _, t)) = &mapped {
            log::debug!("candidate {i}: {} cycles", t.cycles);
            if selected.is_none_or(|(_, c)| t.cycles < c) {
                selected = Some((i, t.cycles));
            }
        }
        candidates.push(Candidate { state, mapped });
    }
    let (selected, _) = selected.ok_or_else(|| Failure::from_sim(SimError::NoPlaceable))?;
    Ok(Mapped {
        root,
        candidates,
        selected,
    })
}

pub enum InputSource {
    Seed(u64),
    File(std::path::PathBuf),
}

pub fn inputs(p: &Program, src: &InputSource) -> Result<BTreeMap<String, TensorValue>, Failure> {
    let buffers = build_lowered(p)
        .map_err(|e| Failure::new(Exit::Type, "VMG_BUILD", e.to_string()))?
        .buffers;
    match src {
        InputSource::Seed(s) => Ok(lcg_inputs(&buffers, *s)),
        InputSource::File(path) => {
            let bytes = std::fs::read(path)
                .map_err(|e| Failure::new(Exit::Usage, "USAGE", format!("cannot read {}: {e}", path.display())))?;
            let mut t =
                container::decode(&bytes).map_err(|e| Failure::new(Exit::Usage, "BAD_INPUTS", e.to_string()))?;
            // Buffers missing from the file start at zero.
            for (name, ty) in &buffers {
                t.entry(name.clone()).or_insert_with(|| TensorValue::zeros(ty));
            }
            Ok(t)
        }
    }
}

pub struct SimResult {
    pub outputs: BTreeMap<String, TensorValue>,
    pub oracle: BTreeMap<String, TensorValue>,
    pub trace: SimTrace,
}

impl SimResult {
    pub fn pass(&self) -> bool {
        self.outputs == self.oracle
    }
}

pub fn simulate(p: &Program, m: &Mapped, inputs: &BTreeMap<String, TensorValue>) -> Result<SimResult, Failure> {
    let (pm, sched, _) = m.best();
    log::info!("functional simulation");
    let out = run_functional(pm, sched, inputs).map_err(Failure::from_sim)?;
    log::info!("dense oracle");
    let oracle = oracle_reference(p, inputs).map_err(Failure::from_sim)?;
    Ok(SimResult {
        outputs: out.outputs,
        oracle,
        trace: out.trace,
    })
}

// ---- JSON reports ----

pub fn base(command: &str, file: &str, exit: Exit) -> Value {
    json!({
        "command": command,
        "file": file,
        "ok": exit == Exit::Ok,
        "exit_code": exit as i32,
        "diagnostics": [],
    })
}

pub fn failure_report(command: &str, file: &str, f: &Failure) -> Value {
    let mut v = base(command, file, f.exit);
    v["diagnostics"] = serde_json::to_value(&f.diagnostics).unwrap();
    v["error"] = json!({ "code": f.code, "message": f.message });
    v
}

pub fn check_report(file: &str, p: &Program, r: &StreamReport) -> Value {
    let mut v = base("check", file, Exit::Ok);
    v["tasks"] = json!(p.tasks.len());
    v["streams"] = serde_json::to_value(r).unwrap();
    v
}

pub fn map_report(file: &str, m: &Mapped, opts: &MapOptions) -> Value {
    let fabric = opts.fabric();
    let cands: Vec<Value> = m
        .candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let legal = c.mapped.as_ref().is_some_and(|(_, s, _)| check_port_safety(&s.port_assignment, &fabric).is_ok())
                && c.state
                    .port_pressure
                    .values()
                    .all(|&(i, o)| i <= fabric.ports_in_per_tile && o <= fabric.ports_out_per_tile);
            json!({
                "index": i,
                "nodes": c.state.v_node_number,
                "applied": c.state.applied,
                "port_pressure": c.state.port_pressure.iter().map(|(n, (i, o))| json!({"node": n, "in": i, "out": o})).collect::<Vec<_>>(),
                "port_legal": legal,
                "estimated_cycles": c.mapped.as_ref().map(|(_, _, t)| t.cycles),
            })
        })
        .collect();
    let (pm, sched, _) = m.best();
    let mut v = base("map", file, Exit::Ok);
    v["fabric"] = serde_json::to_value(&fabric).unwrap();
    v["budget"] = json!(opts.budget());
    v["initial_nodes"] = json!(m.root.node_count());
    v["candidates"] = Value::Array(cands);
    v["selected"] = json!(m.selected);
    v["placement"] = pm
        .assignment
        .iter()
        .map(|(n, t)| json!({"node": n, "tile": [t.0, t.1]}))
        .collect::<Vec<_>>()
        .into();
    v["vmg"] = to_json(&pm.vmg);
    v["dma"] = sched.to_json();
    v
}

pub fn sim_report(
    file: &str,
    m: &Mapped,
    r: &SimResult,
    seed: Option<u64>,
    inputs: &BTreeMap<String, TensorValue>,
) -> Value {
    let exit = if r.pass() { Exit::Ok } else { Exit::Mismatch };
    let mut v = base("sim", file, exit);
    let per: BTreeMap<&String, String> = r
        .outputs
        .iter()
        .map(|(n, t)| (n, container::digest(&BTreeMap::from([(n.clone(), t.clone())]))))
        .collect();
    v["status"] = json!(if r.pass() { "PASS" } else { "FAIL" });
    v["seed"] = json!(seed);
    v["selected"] = json!(m.selected);
    v["inputs_digest"] = json!(container::digest(inputs));
    v["outputs_digest"] = json!(container::digest(&r.outputs));
    v["oracle_digest"] = json!(container::digest(&r.oracle));
    v["outputs"] = json!(per);
    v["cycles"] = json!(r.trace.cycles);
    v["mac_cycles"] = json!(r.trace.mac_cycles);
    v["active_tiles"] = json!(r.trace.active_tiles);
    v["utilization"] = json!(r.trace.utilization);
    v["tile_busy"] = json!(r.trace.tile_busy);
    v["fifo_peaks"] = json!(r.trace.fifo_peaks);
    v
}
