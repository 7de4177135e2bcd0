//! Command-line driver: argument parsing, commands and their reports.

pub mod container;
pub mod manifest;
pub mod pipeline;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use datoc::vmg::{build_lowered, to_dot};
use serde_json::Value;

use manifest::RunManifest;
use pipeline::{Exit, Failure, InputSource, MapOptions};

#[derive(Debug, Parser)]
#[command(
    name = "datoc",
    version,
    about = "Compile, map and simulate stream-based dataflow programs"
)]
pub struct Cli {
    /// Print a machine-readable JSON report on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and type-check a program.
    Check { file: PathBuf },
    /// Search virtual mappings and place the fastest on the fabric.
    Map {
        file: PathBuf,
        #[command(flatten)]
        map: MapArgs,
        /// Write initial.dot and selected.dot into DIR.
        #[arg(long, value_name = "DIR")]
        dot: Option<PathBuf>,
    },
    /// Map, simulate and compare against the dense oracle.
    Sim {
        file: PathBuf,
        #[command(flatten)]
        map: MapArgs,
        #[command(flatten)]
        input: InputArgs,
        /// Print cycle counts and utilization.
        #[arg(long)]
        timed: bool,
        /// Also write the JSON report to FILE.
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
        /// Skip the type checker (for exercising the runtime deadlock detector).
        #[arg(long)]
        unsafe_skip_check: bool,
    },
    /// Print the virtual mapping graph in DOT.
    Dot {
        file: PathBuf,
        /// Print the selected mapping instead of the initial graph.
        #[arg(long)]
        mapped: bool,
        #[command(flatten)]
        map: MapArgs,
    },
    /// Run check, map and sim and write report.json plus a replay manifest.
    Report {
        #[arg(required_unless_present = "replay")]
        file: Option<PathBuf>,
        #[command(flatten)]
        map: MapArgs,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Re-run from a manifest and verify the report digest.
        #[arg(long, value_name = "MANIFEST", conflicts_with = "file")]
        replay: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct MapArgs {
    /// Fabric size as ROWSxCOLS.
    #[arg(long, value_parser = parse_tiles, default_value = "4x5")]
    pub tiles: (usize, usize),
    /// Node budget; defaults to the tile count.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub budget: Option<u64>,
    /// Number of feasible candidates to collect.
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
    pub candidates: u64,
}

impl MapArgs {
    fn options(&self) -> MapOptions {
        MapOptions {
            rows: self.tiles.0,
            cols: self.tiles.1,
            budget: self.budget.map(|b| b as usize),
            candidates: self.candidates as usize,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Read inputs from a tensor container.
    #[arg(long, value_name = "FILE", conflicts_with = "seed")]
    pub inputs: Option<PathBuf>,
    /// Seed for generated inputs.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl InputArgs {
    fn source(&self) -> InputSource {
        match &self.inputs {
            Some(p) => InputSource::File(p.clone()),
            None => InputSource::Seed(self.seed.unwrap_or(0)),
        }
    }
}

pub fn parse_tiles(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected ROWSxCOLS, got `{s}`"))?;
    let r: usize = r.trim().parse().map_err(|_| format!("bad row count `{r}`"))?;
    let c: usize = c.trim().parse().map_err(|_| format!("bad column count `{c}`"))?;
    if r == 0 || c == 0 {
        return Err("tile counts must be positive".into());
    }
    Ok((r, c))
}

/// What a command produced: exit code plus the text for each stream.
#[derive(Debug, Default)]
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Outcome {
    fn exit(&mut self, e: Exit) {
        self.code = e as i32;
    }
}

pub fn run_args<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => Outcome {
                    code: 0,
                    stdout: text,
                    stderr: String::new(),
                },
                _ => Outcome {
                    code: Exit::Usage as i32,
                    stdout: String::new(),
                    stderr: text,
                },
            }
        }
    }
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

fn report_failure(out: &mut Outcome, json: bool, command: &str, file: &str, f: &Failure) {
    out.exit(f.exit);
    if json {
        out.stdout = pretty(&pipeline::failure_report(command, file, f));
    }
    if f.diagnostics.is_empty() {
        writeln!(out.stderr, "error[{}]: {}", f.code, f.message).unwrap();
    }
    for d in &f.diagnostics {
        writeln!(out.stderr, "{}", render_diag(file, d)).unwrap();
    }
}

fn render_diag(file: &str, d: &datoc::ir::Diagnostic) -> String {
    let mut s = match &d.span {
        Some(sp) => format!("{file}:{}:{}: error[{}]: {}", sp.line, sp.col, d.code, d.message),
        None => format!("{file}: error[{}]: {}", d.code, d.message),
    };
    for n in &d.notes {
        write!(s, "\n  note: {n}").unwrap();
    }
    s
}

pub fn run(cli: &Cli) -> Outcome {
    let mut out = Outcome::default();
    match &cli.command {
        Command::Check { file } => cmd_check(&mut out, cli.json, file),
        Command::Map { file, map, dot } => cmd_map(&mut out, cli.json, file, map, dot.as_deref()),
        Command::Sim {
            file,
            map,
            input,
            timed,
            report,
            unsafe_skip_check,
        } => cmd_sim(
            &mut out,
            cli.json,
            file,
            map,
            input,
            *timed,
            report.as_deref(),
            *unsafe_skip_check,
        ),
        Command::Dot { file, mapped, map } => cmd_dot(&mut out, file, *mapped, map),
        Command::Report {
            file,
            map,
            input,
            out: dir,
            replay,
        } => match replay {
            Some(m) => cmd_replay(&mut out, cli.json, m, dir),
            None => {
                let file = file.as_ref().expect("clap requires file without --replay");
                let manifest = RunManifest::new(file, &map.options(), input);
                cmd_report(&mut out, cli.json, &manifest, dir)
            }
        },
    }
    out
}

fn cmd_check(out: &mut Outcome, json: bool, file: &Path) {
    let name = display(file);
    let res = pipeline::load(file).and_then(|p| pipeline::check(&p).map(|r| (p, r)));
    match res {
        Ok((p, r)) => {
            if json {
                out.stdout = pretty(&pipeline::check_report(&name, &p, &r));
            } else {
                writeln!(
                    out.stdout,
                    "{name}: ok ({} tasks, {} streams, {} events)",
                    p.tasks.len(),
                    r.streams.len(),
                    r.total_events
                )
                .unwrap();
            }
        }
        Err(f) => report_failure(out, json, "check", &name, &f),
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| Failure::new(Exit::Usage, "USAGE", format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, text)
        .map_err(|e| Failure::new(Exit::Usage, "USAGE", format!("cannot write {}: {e}", path.display())))
}

fn cmd_map(out: &mut Outcome, json: bool, file: &Path, args: &MapArgs, dot: Option<&Path>) {
    let name = display(file);
    let opts = args.options();
    let res = (|| {
        let p = pipeline::load(file)?;
        pipeline::check(&p)?;
        let m = pipeline::map(&p, &opts)?;
        if let Some(dir) = dot {
            write_file(&dir.join("initial.dot"), &to_dot(&m.root))?;
            write_file(&dir.join("selected.dot"), &to_dot(&m.best().0.vmg))?;
        }
        Ok::<_, Failure>(m)
    })();
    match res {
        Ok(m) => {
            if json {
                out.stdout = pretty(&pipeline::map_report(&name, &m, &opts));
                return;
            }
            writeln!(
                out.stdout,
                "{name}: {} nodes, budget {}, {}x{} tiles",
                m.root.node_count(),
                opts.budget(),
                opts.rows,
                opts.cols
            )
            .unwrap();
            for (i, c) in m.candidates.iter().enumerate() {
                let cycles = c
                    .mapped
                    .as_ref()
                    .map_or("unplaceable".to_string(), |(_, _, t)| format!("{} cycles", t.cycles));
                let mark = if i == m.selected { "*" } else { " " };
                writeln!(
                    out.stdout,
                    "{mark} #{i}: {} nodes, {} rewrites, {cycles}",
                    c.state.v_node_number,
                    c.state.applied.len()
                )
                .unwrap();
            }
            let (pm, _, _) = m.best();
            for (n, t) in &pm.assignment {
                writeln!(out.stdout, "  node {n} -> tile ({}, {})", t.0, t.1).unwrap();
            }
        }
        Err(f) => report_failure(out, json, "map", &name, &f),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_sim(
    out: &mut Outcome,
    json: bool,
    file: &Path,
    args: &MapArgs,
    input: &InputArgs,
    timed: bool,
    report: Option<&Path>,
    skip_check: bool,
) {
    let name = display(file);
    let opts = args.options();
    let res = (|| {
        let p = pipeline::load(file)?;
        if skip_check {
            log::warn!("type checking skipped");
        } else {
            pipeline::check(&p)?;
        }
        let m = pipeline::map(&p, &opts)?;
        let inputs = pipeline::inputs(&p, &input.source())?;
        let r = pipeline::simulate(&p, &m, &inputs)?;
        let seed = input.inputs.is_none().then(|| input.seed.unwrap_or(0));
        Ok::<_, Failure>((pipeline::sim_report(&name, &m, &r, seed, &inputs), r))
    })();
    match res {
        Ok((v, r)) => {
            if let Some(path) = report {
                if let Err(f) = write_file(path, &pretty(&v)) {
                    return report_failure(out, json, "sim", &name, &f);
                }
            }
            out.exit(if r.pass() { Exit::Ok } else { Exit::Mismatch });
            if json {
                out.stdout = pretty(&v);
                return;
            }
            writeln!(
                out.stdout,
                "outputs {}",
                v["outputs_digest"].as_str().unwrap_or_default()
            )
            .unwrap();
            if timed {
                writeln!(
                    out.stdout,
                    "cycles {}\nmac cycles {}\nutilization {:.1}%",
                    r.trace.cycles,
                    r.trace.mac_cycles,
                    100.0 * r.trace.utilization
                )
                .unwrap();
            }
            writeln!(out.stdout, "{}", if r.pass() { "PASS" } else { "FAIL" }).unwrap();
            if !r.pass() {
                for (k, t) in &r.outputs {
                    if r.oracle.get(k) != Some(t) {
                        writeln!(out.stderr, "mismatch in `{k}`").unwrap();
                    }
                }
            }
        }
        Err(f) => report_failure(out, json, "sim", &name, &f),
    }
}

fn cmd_dot(out: &mut Outcome, file: &Path, mapped: bool, args: &MapArgs) {
    let name = display(file);
    let res = (|| {
        let p = pipeline::load(file)?;
        pipeline::check(&p)?;
        if mapped {
            let m = pipeline::map(&p, &args.options())?;
            Ok(to_dot(&m.best().0.vmg))
        } else {
            let g = build_lowered(&p).map_err(|e| Failure::new(Exit::Type, "VMG_BUILD", e.to_string()))?;
            Ok::<_, Failure>(to_dot(&g))
        }
    })();
    match res {
        Ok(s) => out.stdout = s,
        Err(f) => report_failure(out, false, "dot", &name, &f),
    }
}

/// The combined report for one manifest. Failures become error sections.
fn full_report(m: &RunManifest) -> (Value, Exit) {
    let file = PathBuf::from(&m.input);
    let name = m.input.clone();
    let opts = m.map_options();
    let mut v = serde_json::json!({ "command": "report", "file": name, "diagnostics": [] });
    let res = (|| {
        let p = pipeline::load(&file)?;
        let r = pipeline::check(&p).inspect_err(|f| v["check"] = pipeline::failure_report("check", &name, f))?;
        v["check"] = pipeline::check_report(&name, &p, &r);
        let mp = pipeline::map(&p, &opts).inspect_err(|f| v["map"] = pipeline::failure_report("map", &name, f))?;
        v["map"] = pipeline::map_report(&name, &mp, &opts);
        let inputs = pipeline::inputs(&p, &m.input_source())?;
        let r = pipeline::simulate(&p, &mp, &inputs)
            .inspect_err(|f| v["sim"] = pipeline::failure_report("sim", &name, f))?;
        v["sim"] = pipeline::sim_report(&name, &mp, &r, m.seed, &inputs);
        Ok::<_, Failure>(if r.pass() { Exit::Ok } else { Exit::Mismatch })
    })();
    let exit = match res {
        Ok(e) => e,
        Err(f) => {
            v["error"] = serde_json::json!({ "code": f.code, "message": f.message });
            v["diagnostics"] = serde_json::to_value(&f.diagnostics).unwrap();
            f.exit
        }
    };
    v["ok"] = (exit == Exit::Ok).into();
    v["exit_code"] = (exit as i32).into();
    (v, exit)
}

fn cmd_report(out: &mut Outcome, json: bool, m: &RunManifest, dir: &Path) {
    let res = (|| {
        let mut m = m.clone();
        m.source_sha256 = manifest::file_digest(Path::new(&m.input))?;
        let (v, exit) = full_report(&m);
        let text = pretty(&v);
        m.report_sha256 = manifest::text_digest(&text);
        write_file(&dir.join("report.json"), &text)?;
        write_file(&dir.join("manifest.json"), &pretty(&serde_json::to_value(&m).unwrap()))?;
        Ok::<_, Failure>((v, exit))
    })();
    match res {
        Ok((v, exit)) => {
            out.exit(exit);
            if json {
                out.stdout = pretty(&v);
            } else {
                writeln!(out.stdout, "wrote {}", dir.join("report.json").display()).unwrap();
                writeln!(out.stdout, "wrote {}", dir.join("manifest.json").display()).unwrap();
            }
        }
        Err(f) => report_failure(out, json, "report", &m.input, &f),
    }
}

fn cmd_replay(out: &mut Outcome, json: bool, path: &Path, dir: &Path) {
    let res = (|| {
        let m = RunManifest::load(path)?;
        let src = manifest::file_digest(Path::new(&m.input))?;
        if src != m.source_sha256 {
            return Err(Failure::new(
                Exit::Mismatch,
                "REPLAY_MISMATCH",
                format!("{} changed since the manifest was written", m.input),
            ));
        }
        let (v, exit) = full_report(&m);
        let text = pretty(&v);
        write_file(&dir.join("report.json"), &text)?;
        if manifest::text_digest(&text) != m.report_sha256 {
            return Err(Failure::new(
                Exit::Mismatch,
                "REPLAY_MISMATCH",
                "replayed report differs from the recorded one",
            ));
        }
        Ok::<_, Failure>((m, v, exit))
    })();
    match res {
        Ok((m, v, exit)) => {
            out.exit(exit);
            if json {
                out.stdout = pretty(&v);
            } else {
                writeln!(out.stdout, "replay of {} matches ({})", m.input, m.report_sha256).unwrap();
            }
        }
        Err(f) => report_failure(out, json, "report", &display(path), &f),
    }
}
