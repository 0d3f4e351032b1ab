use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use memnet::network::CUBE_R_MAX;
use memnet::readout::{waveform_task, Observables, TaskConfig};
use memnet::spectral::{analyze_outputs, dft, rank_outputs, write_report_csv, AnalyzedOutput, OutputId};
use memnet::util::fmt_num;
use memnet::{
    build_cube, build_series_benchmark, simulate, DriveAssignment, Network, NodeRole, Signal,
    SimulationConfig, SimulationTrace,
};
use serde::Serialize;

use crate::output::{sha256, Outputs, RunManifest};
use crate::{
    BenchmarkArgs, Command, CubeArgs, ExcludeDc, Failure, ObservableSet, ReadoutArgs, ReplayArgs, Run,
    SimulateArgs, ValidateArgs, USAGE, VALIDATION,
};

pub fn execute(command: Command) -> Result<Run, Failure> {
    match command {
        Command::Benchmark(a) => benchmark(a),
        Command::Cube(a) => cube(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Readout(a) => readout(a),
        Command::Validate(_) | Command::Replay(_) => unreachable!("handled by the caller"),
    }
}

/// Input files read once, hashed, and remembered under their absolute path.
#[derive(Default)]
struct Inputs(BTreeMap<String, String>);

impl Inputs {
    fn read(&mut self, path: &Path) -> Result<(PathBuf, String), Failure> {
        let abs = fs::canonicalize(path)
            .map_err(|e| Failure::new(USAGE, format!("cannot read {}: {e}", path.display())))?;
        let text = fs::read_to_string(&abs)
            .map_err(|e| Failure::new(USAGE, format!("cannot read {}: {e}", path.display())))?;
        self.0.insert(abs.display().to_string(), sha256(text.as_bytes()));
        Ok((abs, text))
    }
}

fn load_network(path: &Path, text: &str) -> Result<Network, Failure> {
    Network::load(text).map_err(|e| Failure::from(e).context(path.display()))
}

fn load_drives(path: &Path, text: &str) -> Result<DriveAssignment, Failure> {
    DriveAssignment::load(text).map_err(|e| Failure::from(e).context(path.display()))
}

fn csv(trace: &SimulationTrace) -> Vec<u8> {
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).expect("writing to memory");
    buf
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn check_step(dt: f64, what: &str) -> Result<(), Failure> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Failure::new(USAGE, format!("{what} must be positive, got {dt}")))
    }
}

// ---------------------------------------------------------------------------
// benchmark

#[derive(Serialize)]
struct FrequencySummary {
    frequency: f64,
    samples: usize,
    min_resistance: f64,
    max_resistance: f64,
    samples_at_r_min: usize,
    samples_at_r_max: usize,
    /// Largest |I| among samples with |V_M| < 1 mV.
    max_current_near_zero_voltage: f64,
}

fn benchmark(args: BenchmarkArgs) -> Result<Run, Failure> {
    check_step(args.dt, "--dt")?;
    if args.frequencies.is_empty() || args.frequencies.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
        return Err(Failure::new(USAGE, "--frequencies needs positive values"));
    }
    if !(args.duration >= args.dt) {
        return Err(Failure::new(USAGE, "--duration must cover at least one step"));
    }
    let network = build_series_benchmark();
    let params = network.links()[1].params;
    let config = SimulationConfig::new(args.dt, (args.duration / args.dt).round() as usize);
    let run_one = |f: f64| -> Result<SimulationTrace, Failure> {
        let drives = DriveAssignment::new().with(1, Signal::cosine(args.amplitude, f));
        simulate(&network, &drives, &config).map_err(|e| Failure::from(e).context(format!("{f} Hz")))
    };
    let traces = parallel_map(&args.frequencies, args.jobs.max(1), run_one)?;

    let mut out = Outputs::default();
    let mut summaries = Vec::new();
    let mut summary = Vec::new();
    out.add("network.toml", network.store());
    for (&f, trace) in args.frequencies.iter().zip(&traces) {
        let tag = format!("{f}Hz");
        out.add(format!("trace_{tag}.csv"), csv(trace));
        let (r, vm, i) = (&trace.resistances[1], &trace.voltage_drops[1], &trace.currents[1]);
        let v_ext = trace.voltage(1).expect("node 1 exists");
        let mut overlay = String::from("t,R_M,V_M,V_ext\n");
        let mut lp = String::from("V_M,I\n");
        for k in 0..trace.len() {
            let _ = writeln!(
                overlay,
                "{},{},{},{}",
                fmt_num(trace.times[k]),
                fmt_num(r[k]),
                fmt_num(vm[k]),
                fmt_num(v_ext[k])
            );
            let _ = writeln!(lp, "{},{}", fmt_num(vm[k]), fmt_num(i[k]));
        }
        out.add(format!("overlay_{tag}.csv"), overlay);
        out.add(format!("loop_{tag}.csv"), lp);
        if args.plot_script {
            out.add(format!("plot_{tag}.gp"), benchmark_script(&tag, params.r_max));
        }
        let s = FrequencySummary {
            frequency: f,
            samples: trace.len(),
            min_resistance: r.iter().copied().fold(f64::INFINITY, f64::min),
            max_resistance: r.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            samples_at_r_min: r.iter().filter(|&&x| x == params.r_min).count(),
            samples_at_r_max: r.iter().filter(|&&x| x == params.r_max).count(),
            max_current_near_zero_voltage: (0..trace.len())
                .filter(|&k| vm[k].abs() < 1e-3)
                .map(|k| i[k].abs())
                .fold(0.0, f64::max),
        };
        summary.push(format!(
            "{f} Hz: R_M in [{:.1}, {:.1}] Ω, {} samples at {} Ω, {} at {} Ω",
            s.min_resistance, s.max_resistance, s.samples_at_r_min, params.r_min, s.samples_at_r_max, params.r_max
        ));
        summaries.push(s);
    }
    out.add("summary.json", json(&summaries));
    Ok(Run {
        command: Command::Benchmark(args),
        inputs: BTreeMap::new(),
        outputs: out,
        summary,
    })
}

fn benchmark_script(tag: &str, r_scale: f64) -> String {
    format!(
        "set datafile separator ','\n\
         set key autotitle columnhead\n\
         set multiplot layout 1,2\n\
         set xlabel 't (s)'\n\
         plot 'overlay_{tag}.csv' using 1:($2/{r_scale}) with lines title 'R_M / {r_scale} Ω', \\\n\
         \x20    '' using 1:3 with lines title 'V_M (V)', \\\n\
         \x20    '' using 1:4 with lines title 'V_ext (V)'\n\
         set xlabel 'V_M (V)'\n\
         set ylabel 'I (A)'\n\
         plot 'loop_{tag}.csv' using 1:2 with lines notitle\n\
         unset multiplot\n"
    )
}

/// Order-preserving map over `items` on up to `jobs` threads.
fn parallel_map<T: Copy + Sync, R: Send>(
    items: &[T],
    jobs: usize,
    f: impl Fn(T) -> Result<R, Failure> + Sync,
) -> Result<Vec<R>, Failure> {
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(|&x| f(x)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<R, Failure>>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..jobs.min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                *slots[i].lock().unwrap() = Some(f(items[i]));
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every slot filled"))
        .collect()
}

// ---------------------------------------------------------------------------
// cube and simulate

fn cube(args: CubeArgs) -> Result<Run, Failure> {
    check_step(args.dt, "--dt")?;
    if args.steps < 2 {
        return Err(Failure::new(USAGE, "--steps must be at least 2"));
    }
    let network = build_cube();
    let drives = DriveAssignment::new()
        .with(1, Signal::sine(1.0, 2.0))
        .with(2, Signal::sine(1.0, 3.0))
        .with(3, Signal::sine(1.0, 5.0));
    let trace = simulate(&network, &drives, &SimulationConfig::new(args.dt, args.steps))?;

    let mut out = Outputs::default();
    out.add("network.toml", network.store());
    out.add("drives.toml", drives.store());
    write_trace(&trace, &mut out);
    write_panels(&network, &trace, &mut out);
    let analysis = analyze(&network, &trace, args.steps, args.dt, args.exclude_dc, args.voltage_threshold, &mut out)?;
    if args.plot_script {
        out.add("plot_panels.gp", panel_script(&network, &trace));
    }
    let mut summary = vec![format!("{} samples, {} links", trace.len(), network.links().len())];
    summary.extend(analysis.lines());
    Ok(Run {
        command: Command::Cube(args),
        inputs: BTreeMap::new(),
        outputs: out,
        summary,
    })
}

fn simulate_cmd(mut args: SimulateArgs) -> Result<Run, Failure> {
    check_step(args.dt, "--dt")?;
    let mut inputs = Inputs::default();
    let (network_path, network_text) = inputs.read(&args.network)?;
    let (drives_path, drives_text) = inputs.read(&args.drives)?;
    let network = load_network(&args.network, &network_text)?;
    let drives = load_drives(&args.drives, &drives_text)?;
    let trace = simulate(&network, &drives, &SimulationConfig::new(args.dt, args.steps))?;

    let mut out = Outputs::default();
    write_trace(&trace, &mut out);
    let mut summary = vec![format!("{} samples, {} links", trace.len(), network.links().len())];
    if args.analyze {
        if args.steps < 2 {
            return Err(Failure::new(USAGE, "--analyze needs at least 2 steps"));
        }
        let analysis = analyze(&network, &trace, args.steps, args.dt, args.exclude_dc, args.voltage_threshold, &mut out)?;
        summary.extend(analysis.lines());
    }
    args.network = network_path;
    args.drives = drives_path;
    Ok(Run {
        command: Command::Simulate(args),
        inputs: inputs.0,
        outputs: out,
        summary,
    })
}

fn write_trace(trace: &SimulationTrace, out: &mut Outputs) {
    out.add("trace.csv", csv(trace));
    out.add("trace.json", json(trace));
}

/// Plot-ready node voltages and link resistances against time.
fn write_panels(network: &Network, trace: &SimulationTrace, out: &mut Outputs) {
    let mut v = String::from("t");
    for n in network.nodes() {
        let _ = write!(v, ",V_node_{}", n.id);
    }
    v.push('\n');
    let mut r = String::from("t");
    for k in 0..network.links().len() {
        let _ = write!(r, ",R_link_{k}");
    }
    r.push('\n');
    for s in 0..trace.len() {
        v.push_str(&fmt_num(trace.times[s]));
        r.push_str(&fmt_num(trace.times[s]));
        for series in &trace.node_voltages {
            let _ = write!(v, ",{}", fmt_num(series[s]));
        }
        for series in &trace.resistances {
            let _ = write!(r, ",{}", fmt_num(series[s]));
        }
        v.push('\n');
        r.push('\n');
    }
    out.add("panel_voltages.csv", v);
    out.add("panel_resistances.csv", r);
}

fn panel_script(network: &Network, trace: &SimulationTrace) -> String {
    let nodes = trace.node_voltages.len() + 1;
    let links = network.links().len() + 1;
    format!(
        "set datafile separator ','\n\
         set key off\n\
         set multiplot layout 2,1\n\
         set ylabel 'V (V)'\n\
         plot for [i=2:{nodes}] 'panel_voltages.csv' using 1:i with lines\n\
         set xlabel 't (s)'\n\
         set ylabel 'R (Ω)'\n\
         set yrange [*:{CUBE_R_MAX}]\n\
         plot for [i=2:{links}] 'panel_resistances.csv' using 1:i with lines\n\
         unset multiplot\n"
    )
}

#[derive(Serialize)]
struct ReportEntry {
    output: String,
    delta: f64,
    /// One `[re, im]` pair per input.
    weights: Vec<[f64; 2]>,
    residual_norm: f64,
    output_norm: f64,
    rank_deficient: bool,
}

#[derive(Serialize)]
struct GroupReport {
    exclude_dc: bool,
    /// Output ids by descending δ.
    ranking: Vec<String>,
    max_delta: Option<f64>,
    reports: Vec<ReportEntry>,
    /// Outputs whose included-bin norm is zero, so δ is undefined.
    undefined: Vec<String>,
}

#[derive(Serialize)]
struct DissimilarityDoc {
    window_samples: usize,
    dt: f64,
    inputs: Vec<String>,
    voltages: GroupReport,
    resistances: GroupReport,
    voltage_threshold: f64,
    voltages_indistinguishable: bool,
    hardest_resistances: Vec<String>,
}

struct Analysis {
    voltage_max: Option<f64>,
    resistance_max: Option<f64>,
    threshold: f64,
    hardest: Vec<String>,
}

impl Analysis {
    fn lines(&self) -> Vec<String> {
        let show = |x: Option<f64>| x.map_or("n/a".into(), |v| format!("{v:.4}"));
        let mut l = vec![format!(
            "max δ: internal voltages {}, resistances {}",
            show(self.voltage_max),
            show(self.resistance_max)
        )];
        let ok = self.voltage_max.is_none_or(|v| v <= self.threshold);
        l.push(format!(
            "voltage fits indistinguishable (max δ <= {}): {ok}",
            self.threshold
        ));
        if !self.hardest.is_empty() {
            l.push(format!("hardest resistances: {}", self.hardest.join(", ")));
        }
        l
    }
}

/// Spectra, fits and δ for every internal voltage and every link resistance
/// against the external-node voltages, over the first `window` samples.
fn analyze(
    network: &Network,
    trace: &SimulationTrace,
    window: usize,
    dt: f64,
    exclude: ExcludeDc,
    threshold: f64,
    out: &mut Outputs,
) -> Result<Analysis, Failure> {
    let ids_of = |role| network.ids_with_role(role);
    let inputs: Vec<(OutputId, &[f64])> = ids_of(NodeRole::External)
        .into_iter()
        .map(|id| (OutputId::NodeVoltage(id), &trace.voltage(id).expect("node in trace")[..window]))
        .collect();
    if inputs.is_empty() {
        return Err(Failure::new(VALIDATION, "analysis needs at least one external node"));
    }
    let input_series: Vec<&[f64]> = inputs.iter().map(|x| x.1).collect();
    for (id, series) in &inputs {
        let s = dft(series, dt)?;
        out.add_with(format!("spectra/{id}.csv"), |w| s.write_csv(w));
    }

    let voltages: Vec<(OutputId, &[f64])> = ids_of(NodeRole::Internal)
        .into_iter()
        .map(|id| (OutputId::NodeVoltage(id), &trace.voltage(id).expect("node in trace")[..window]))
        .collect();
    let resistances: Vec<(OutputId, &[f64])> = trace
        .resistances
        .iter()
        .enumerate()
        .map(|(k, s)| (OutputId::LinkResistance(k), &s[..window]))
        .collect();

    let v = group(&voltages, &input_series, dt, exclude.voltages(), out)?;
    let r = group(&resistances, &input_series, dt, exclude.resistances(), out)?;
    out.add_with("delta_voltages.csv", |w| write_report_csv(&v.0, w));
    out.add_with("delta_resistances.csv", |w| write_report_csv(&r.0, w));

    let r_ranking = rank_outputs(&r.0);
    let hardest: Vec<OutputId> = r_ranking.iter().take(3).copied().collect();
    if !hardest.is_empty() {
        let mut text = String::from("t");
        for id in &hardest {
            let _ = write!(text, ",{id}");
        }
        text.push('\n');
        for s in 0..trace.len() {
            text.push_str(&fmt_num(trace.times[s]));
            for id in &hardest {
                let OutputId::LinkResistance(k) = id else { unreachable!() };
                let _ = write!(text, ",{}", fmt_num(trace.resistances[*k][s]));
            }
            text.push('\n');
        }
        out.add("hardest_resistances.csv", text);
    }

    let voltage_max = max_delta(&v.0);
    let resistance_max = max_delta(&r.0);
    let doc = DissimilarityDoc {
        window_samples: window,
        dt,
        inputs: inputs.iter().map(|x| x.0.to_string()).collect(),
        voltages: group_report(&v, exclude.voltages()),
        resistances: group_report(&r, exclude.resistances()),
        voltage_threshold: threshold,
        voltages_indistinguishable: voltage_max.is_none_or(|m| m <= threshold),
        hardest_resistances: hardest.iter().map(ToString::to_string).collect(),
    };
    out.add("dissimilarity.json", json(&doc));
    Ok(Analysis {
        voltage_max,
        resistance_max,
        threshold,
        hardest: doc.hardest_resistances,
    })
}

type Group = (Vec<memnet::spectral::DissimilarityReport>, Vec<OutputId>);

/// Fits each output on its own so a constant series (undefined δ) is
/// recorded instead of aborting the whole set.
fn group(
    outputs: &[(OutputId, &[f64])],
    inputs: &[&[f64]],
    dt: f64,
    exclude_dc: bool,
    out: &mut Outputs,
) -> Result<Group, Failure> {
    let mut reports = Vec::new();
    let mut undefined = Vec::new();
    for &(id, series) in outputs {
        match analyze_outputs(&[(id, series)], inputs, dt, exclude_dc) {
            Ok(mut a) => {
                let AnalyzedOutput {
                    report,
                    spectrum,
                    fitted,
                } = a.remove(0);
                out.add_with(format!("spectra/{id}.csv"), |w| spectrum.write_csv(w));
                out.add_with(format!("spectra/{id}_fit.csv"), |w| fitted.write_csv(w));
                reports.push(report);
            }
            Err(memnet::Error::ZeroOutput) => undefined.push(id),
            Err(e) => return Err(Failure::from(e).context(id)),
        }
    }
    Ok((reports, undefined))
}

fn max_delta(reports: &[memnet::spectral::DissimilarityReport]) -> Option<f64> {
    reports.iter().map(|r| r.delta).reduce(f64::max)
}

fn group_report(g: &Group, exclude_dc: bool) -> GroupReport {
    GroupReport {
        exclude_dc,
        ranking: rank_outputs(&g.0).iter().map(ToString::to_string).collect(),
        max_delta: max_delta(&g.0),
        reports: g
            .0
            .iter()
            .map(|r| ReportEntry {
                output: r.output.to_string(),
                delta: r.delta,
                weights: r.weights.iter().map(|c| [c.re, c.im]).collect(),
                residual_norm: r.residual_norm,
                output_norm: r.output_norm,
                rank_deficient: r.rank_deficient,
            })
            .collect(),
        undefined: g.1.iter().map(ToString::to_string).collect(),
    }
}

// ---------------------------------------------------------------------------
// readout

fn readout(mut args: ReadoutArgs) -> Result<Run, Failure> {
    let mut inputs = Inputs::default();
    let network = match &args.network {
        Some(p) => {
            let (abs, text) = inputs.read(p)?;
            let n = load_network(p, &text)?;
            args.network = Some(abs);
            n
        }
        None => build_cube(),
    };
    check_step(args.dt, "--dt")?;
    let config = TaskConfig {
        episodes: args.episodes,
        train_fraction: args.train_fraction,
        frequency: args.frequency,
        amplitude: args.amplitude,
        duration: args.duration,
        dt: args.dt,
        samples_per_episode: args.samples,
        observables: match args.observables {
            ObservableSet::Voltages => Observables {
                voltages: true,
                resistances: false,
            },
            ObservableSet::Resistances => Observables {
                voltages: false,
                resistances: true,
            },
            ObservableSet::Both => Observables {
                voltages: true,
                resistances: true,
            },
        },
        ridge: args.ridge,
        seed: args.seed,
        shuffle_labels: args.shuffle_labels,
        jobs: args.jobs.max(1),
    };
    let (report, features) = waveform_task(&network, &config)?;
    let mut out = Outputs::default();
    out.add("report.json", json(&report));
    out.add_with("features.csv", |w| features.write_csv(w));
    let summary = vec![format!(
        "held-out accuracy {:.3} ({} test episodes), training accuracy {:.3}{}",
        report.accuracy,
        report.split.test,
        report.train_accuracy,
        if report.rank_deficient {
            ", readout rank deficient"
        } else {
            ""
        }
    )];
    Ok(Run {
        command: Command::Readout(args),
        inputs: inputs.0,
        outputs: out,
        summary,
    })
}

// ---------------------------------------------------------------------------
// validate and replay

pub fn validate(args: &ValidateArgs) -> Result<Vec<String>, Failure> {
    let mut inputs = Inputs::default();
    let (_, text) = inputs.read(&args.network)?;
    let network = load_network(&args.network, &text)?;
    let mut lines = vec![format!(
        "{}: {} nodes, {} links, valid",
        args.network.display(),
        network.nodes().len(),
        network.links().len()
    )];
    if let Some(p) = &args.drives {
        let (_, text) = inputs.read(p)?;
        let drives = load_drives(p, &text)?;
        drives
            .check(&network)
            .map_err(|e| Failure::from(e).context(p.display()))?;
        lines.push(format!("{}: drives every external node", p.display()));
    }
    Ok(lines)
}

/// Loads a manifest, checks its inputs are unchanged and re-runs its
/// command. Returns the run and the recorded output hashes.
pub fn replay(args: &ReplayArgs) -> Result<(Run, BTreeMap<String, String>), Failure> {
    let text = fs::read_to_string(&args.manifest)
        .map_err(|e| Failure::new(USAGE, format!("cannot read {}: {e}", args.manifest.display())))?;
    let manifest: RunManifest = serde_json::from_str(&text)
        .map_err(|e| Failure::new(USAGE, format!("{}: {e}", args.manifest.display())))?;
    for (path, hash) in &manifest.inputs {
        let bytes = fs::read(path).map_err(|e| Failure::new(USAGE, format!("cannot read {path}: {e}")))?;
        if &sha256(&bytes) != hash {
            return Err(Failure::new(
                VALIDATION,
                format!("input {path} changed since the manifest was written"),
            ));
        }
    }
    if matches!(manifest.command, Command::Validate(_) | Command::Replay(_)) {
        return Err(Failure::new(USAGE, "manifest does not record a replayable command"));
    }
    let run = execute(manifest.command)?;
    Ok((run, manifest.outputs))
}
