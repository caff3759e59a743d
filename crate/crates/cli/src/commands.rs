use std::collections::{BTreeMap, HashMap, HashSet};
use std::net::Ipv4Addr;
use std::path::Path;

use anyhow::{anyhow, bail, Context};
use log::info;
use routerprint::classify::{
    classify_vector, evaluate_holdout, read_verdicts, write_holdout_csv, write_verdicts, Outcome,
    VerdictRecord,
};
use routerprint::features::{extract_features, FeatureVector, IpidConfig};
use routerprint::net;
use routerprint::paths::{
    self, alternative_transit, annotate_paths, convert_external, diversity_report,
    homogeneity_report, ingest_traceroutes, load_alias_sets, AsContext, RegionFilter,
    TransitConfig,
};
use routerprint::probe::{
    execute_scan, parse_target_list, read_response_sets, route_source, write_response_sets,
    LiveTransport, ProbePlanConfig, ResponseSet, ScanError, Transport, TransportError,
};
use routerprint::signatures::{
    build_signature_table, load_table, store_table, sweep_threshold, write_sweep_csv,
    LabeledVector, SignatureBuildConfig,
};
use routerprint::sim::{make_fleet, write_ground_truth, FleetSpec, SimTransport};
use routerprint::snmp::{label_response_set, read_labels, write_labels, VendorDictionary};
use serde_json::json;

use crate::config::FileConfig;
use crate::output::Run;
use crate::{
    AnalyzePathsArgs, BuildSigsArgs, ClassifyArgs, Cli, Command, EvaluateArgs, LabelArgs,
    LabeledInputs, ScanArgs, SimulateArgs, TracerouteFormat, TransportArg,
};

pub fn run(cli: Cli) -> anyhow::Result<i32> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let name = match &cli.command {
        Command::Scan(_) => "scan",
        Command::Label(_) => "label",
        Command::BuildSigs(_) => "build-sigs",
        Command::Classify(_) => "classify",
        Command::AnalyzePaths(_) => "analyze-paths",
        Command::Simulate(_) => "simulate",
        Command::Evaluate(_) => "evaluate",
    };
    let mut run = Run::new(name, &cli.out_dir)?;
    let result = match cli.command {
        Command::Scan(a) => scan(a, &file, &mut run),
        Command::Label(a) => label(a, &mut run),
        Command::BuildSigs(a) => build_sigs(a, &file, &mut run),
        Command::Classify(a) => classify(a, &file, &mut run),
        Command::AnalyzePaths(a) => analyze_paths(a, &file, &mut run),
        Command::Simulate(a) => simulate(a, &mut run),
        Command::Evaluate(a) => evaluate(a, &file, &mut run),
    };
    match result {
        Ok(()) => run.finish(None),
        Err(e) => {
            // The manifest of a failed run is best effort; the original error wins.
            let _ = run.finish(Some(&e));
            Err(e)
        }
    }
}

fn dictionary(run: &mut Run, extra: Option<&Path>) -> anyhow::Result<VendorDictionary> {
    let mut dict = VendorDictionary::builtin();
    if let Some(p) = extra {
        let bytes = run.read_input(p)?;
        let more = VendorDictionary::from_csv(&bytes[..])
            .with_context(|| format!("parsing vendor dictionary {}", p.display()))?;
        dict.extend(&more);
    }
    Ok(dict)
}

fn ipid_config(flag: Option<u32>, file: &FileConfig) -> anyhow::Result<IpidConfig> {
    match flag.or(file.features.ipid_step_threshold) {
        Some(t) => Ok(IpidConfig::new(t)?),
        None => Ok(IpidConfig::default()),
    }
}

fn read_responses(run: &mut Run, path: &Path) -> anyhow::Result<Vec<ResponseSet>> {
    let bytes = run.read_input(path)?;
    read_response_sets(&bytes[..]).with_context(|| format!("reading responses {}", path.display()))
}

fn load_fleet_spec(run: &mut Run, path: &Path) -> anyhow::Result<FleetSpec> {
    let bytes = run.read_input(path)?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing fleet spec {}", path.display()))
}

fn scan(a: ScanArgs, file: &FileConfig, run: &mut Run) -> anyhow::Result<()> {
    let mut cfg: ProbePlanConfig = file.scan.clone();
    if let Some(v) = a.per_target_rate {
        cfg.per_target_rate = v;
    }
    if let Some(v) = a.global_rate {
        cfg.global_rate = v;
    }
    if let Some(v) = a.timeout {
        cfg.reply_timeout = v;
    }
    if let Some(v) = a.port {
        cfg.tcp_udp_port = v;
    }
    if let Some(v) = a.max_in_flight {
        cfg.max_in_flight = v;
    }
    cfg.validate()?;

    let fleet = match &a.transport {
        TransportArg::Sim(p) => {
            let spec = load_fleet_spec(run, p)?;
            let dict = dictionary(run, a.vendors.as_deref())?;
            run.seeds.insert("fleet".into(), spec.seed);
            Some(make_fleet(&spec, &dict)?)
        }
        TransportArg::Live => None,
    };
    let raw_targets = match (&a.targets, &fleet) {
        (Some(p), _) => {
            let bytes = run.read_input(p)?;
            parse_target_list(&bytes[..]).map_err(|e| anyhow!("{}: {e}", p.display()))?
        }
        (None, Some(f)) => f.addresses(),
        (None, None) => bail!("--targets is required for live scans"),
    };
    let mut seen = HashSet::new();
    let mut targets = Vec::with_capacity(raw_targets.len());
    for t in raw_targets {
        if let Some(reason) = net::non_routable_reason(t) {
            bail!("{t} is not a routable scan target ({reason})");
        }
        if seen.insert(t) {
            targets.push(t);
        }
    }
    if targets.is_empty() {
        bail!("no targets to scan");
    }
    run.seeds.insert("scan".into(), a.seed);
    run.config = json!({ "transport": format!("{:?}", a.transport), "probe": cfg });

    let mut buf = Vec::new();
    let result = match fleet {
        Some(fleet) => scan_with(&targets, &cfg, a.seed, SimTransport::new(fleet), &mut buf),
        None => {
            let local = match a.source {
                Some(s) => s,
                None => {
                    route_source(targets[0]).context("finding a source address (pass --source)")?
                }
            };
            let transport = LiveTransport::open(local).map_err(|e| match e {
                TransportError::Capability(m) => anyhow!("missing raw-packet capability: {m}"),
                other => anyhow!(other),
            })?;
            scan_with(&targets, &cfg, a.seed, transport, &mut buf)
        }
    };
    run.write_output("responses.jsonl", &buf)?;
    match result {
        Ok(summary) => {
            if summary.target_errors > 0 {
                run.warn(format!("{} targets failed to send", summary.target_errors));
            }
            info!(
                "scanned {} targets, {} packets",
                summary.completed, summary.packets_sent
            );
            run.write_json("scan_summary.json", &summary)?;
            Ok(())
        }
        Err(ScanError::Aborted { source, summary }) => {
            run.write_json("scan_summary.json", &summary)?;
            bail!(
                "scan aborted after {} of {} targets: {source}",
                summary.completed,
                summary.targets
            )
        }
        Err(e) => Err(e.into()),
    }
}

fn scan_with<T: Transport>(
    targets: &[Ipv4Addr],
    cfg: &ProbePlanConfig,
    seed: u64,
    mut transport: T,
    buf: &mut Vec<u8>,
) -> Result<routerprint::probe::ScanSummary, ScanError> {
    execute_scan(targets, cfg, seed, &mut transport, |set| {
        write_response_sets(buf, [&set]).map_err(std::io::Error::other)
    })
}

fn label(a: LabelArgs, run: &mut Run) -> anyhow::Result<()> {
    let dict = dictionary(run, a.vendors.as_deref())?;
    let sets = read_responses(run, &a.responses)?;
    let mut labels = Vec::new();
    let mut bad = 0;
    for set in &sets {
        match label_response_set(set, &dict) {
            Some(Ok(l)) => labels.push(l),
            Some(Err(e)) => {
                bad += 1;
                log::debug!("{}: {e}", set.target);
            }
            None => {}
        }
    }
    if bad > 0 {
        run.warn(format!("{bad} SNMP replies could not be decoded"));
    }
    let mut per_vendor: BTreeMap<&str, usize> = BTreeMap::new();
    for l in &labels {
        *per_vendor.entry(l.vendor.as_str()).or_default() += 1;
    }
    info!("labeled {} of {} targets", labels.len(), sets.len());
    run.write_with("labels.csv", |b| Ok(write_labels(b, &labels)?))?;
    run.write_json("label_summary.json", &json!({ "responses": sets.len(), "labeled": labels.len(), "undecodable": bad, "vendors": per_vendor }))?;
    Ok(())
}

/// Joins responses with labels by target; unlabeled targets are skipped.
fn labeled_vectors(
    run: &mut Run,
    inputs: &LabeledInputs,
    ipid: &IpidConfig,
) -> anyhow::Result<Vec<LabeledVector>> {
    if inputs.responses.len() != inputs.labels.len() {
        bail!("--responses and --labels must be given the same number of times");
    }
    let mut out = Vec::new();
    for (rp, lp) in inputs.responses.iter().zip(&inputs.labels) {
        let dataset = rp
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into());
        let sets = read_responses(run, rp)?;
        let bytes = run.read_input(lp)?;
        let labels =
            read_labels(&bytes[..]).with_context(|| format!("reading labels {}", lp.display()))?;
        let by_target: HashMap<Ipv4Addr, &str> = labels
            .iter()
            .map(|l| (l.target, l.vendor.as_str()))
            .collect();
        let before = out.len();
        for set in &sets {
            if let Some(vendor) = by_target.get(&set.target) {
                out.push(LabeledVector::new(
                    extract_features(set, ipid),
                    *vendor,
                    dataset.clone(),
                ));
            }
        }
        info!(
            "{dataset}: {} labeled vectors from {} responses",
            out.len() - before,
            sets.len()
        );
    }
    Ok(out)
}

fn parse_sweep(s: &str) -> anyhow::Result<Vec<u32>> {
    let bad = || anyhow!("bad --sweep {s:?}; use `a..b` or a comma list");
    let v: Vec<u32> = if let Some((lo, hi)) = s.split_once("..") {
        let lo: u32 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u32 = hi
            .trim()
            .trim_start_matches('=')
            .parse()
            .map_err(|_| bad())?;
        (lo..=hi).collect()
    } else {
        s.split(',')
            .map(|x| x.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?
    };
    if v.is_empty() || v.contains(&0) || v.windows(2).any(|w| w[0] >= w[1]) {
        return Err(bad());
    }
    Ok(v)
}

fn build_config(min: Option<u32>, no_partials: bool, file: &FileConfig) -> SignatureBuildConfig {
    let d = SignatureBuildConfig::default();
    SignatureBuildConfig {
        min_occurrences: min
            .or(file.signatures.min_occurrences)
            .unwrap_or(d.min_occurrences),
        derive_partials: !no_partials
            && file.signatures.derive_partials.unwrap_or(d.derive_partials),
    }
}

fn build_sigs(a: BuildSigsArgs, file: &FileConfig, run: &mut Run) -> anyhow::Result<()> {
    let sweep = a.sweep.as_deref().map(parse_sweep).transpose()?;
    let ipid = ipid_config(a.inputs.ipid_threshold, file)?;
    let cfg = build_config(a.min_occurrences, a.no_partials, file);
    cfg.validate()?;
    run.config =
        json!({ "signatures": cfg, "ipid_step_threshold": ipid.step_threshold, "sweep": sweep });
    let labeled = labeled_vectors(run, &a.inputs, &ipid)?;
    if labeled.is_empty() {
        run.warn("no labeled vectors; the table is empty");
    }
    let table = build_signature_table(&labeled, &cfg)?;
    run.write_output("signatures.json", &store_table(&table))?;
    if let Some(thresholds) = sweep {
        let rows = sweep_threshold(&labeled, &thresholds)?;
        run.write_with("sweep.csv", |b| Ok(write_sweep_csv(b, &rows)?))?;
    }
    info!(
        "{} signatures from {} labeled vectors",
        table.len(),
        labeled.len()
    );
    Ok(())
}

fn classify(a: ClassifyArgs, file: &FileConfig, run: &mut Run) -> anyhow::Result<()> {
    let ipid = ipid_config(a.ipid_threshold, file)?;
    run.config = json!({ "ipid_step_threshold": ipid.step_threshold });
    let bytes = run.read_input(&a.table)?;
    let table = load_table(&bytes)
        .with_context(|| format!("loading signature table {}", a.table.display()))?;
    let sets = read_responses(run, &a.responses)?;
    let mut records = Vec::with_capacity(sets.len());
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut vendors: BTreeMap<String, usize> = BTreeMap::new();
    for set in &sets {
        let verdict = classify_vector(&extract_features(set, &ipid), &table);
        let rec = VerdictRecord::new(set.target, &verdict);
        *counts.entry(rec.verdict.clone()).or_default() += 1;
        if let Some(v) = &rec.vendor {
            *vendors.entry(v.clone()).or_default() += 1;
        }
        records.push(rec);
    }
    run.write_with("verdicts.jsonl", |b| Ok(write_verdicts(b, &records)?))?;
    run.write_json(
        "classify_summary.json",
        &json!({ "targets": records.len(), "verdicts": counts, "vendors": vendors }),
    )?;
    Ok(())
}

fn analyze_paths(a: AnalyzePathsArgs, file: &FileConfig, run: &mut Run) -> anyhow::Result<()> {
    let regions: Vec<RegionFilter> = a
        .regions
        .iter()
        .map(|r| r.parse().map_err(|e: String| anyhow!(e)))
        .collect::<Result<_, _>>()?;
    let transit_queries: Vec<(u32, u32)> = a
        .transit
        .iter()
        .map(|q| {
            let (d, v) = q
                .split_once(':')
                .ok_or_else(|| anyhow!("bad --transit {q:?}, expected DST_AS:AVOID_AS"))?;
            Ok((d.trim().parse()?, v.trim().parse()?))
        })
        .collect::<anyhow::Result<_>>()?;
    let min_hops = a
        .min_hops
        .or(file.paths.min_hops)
        .unwrap_or(paths::DEFAULT_MIN_HOPS);
    let min_routers = a.min_routers.or(file.paths.min_routers).unwrap_or(1000);
    let dominance = a.dominance.or(file.paths.dominance).unwrap_or(0.85);
    if !(0.0..=1.0).contains(&dominance) {
        bail!("--dominance must be in [0, 1]");
    }
    let tcfg = TransitConfig {
        max_depth: a
            .max_depth
            .or(file.paths.max_depth)
            .unwrap_or(TransitConfig::default().max_depth),
        ..Default::default()
    };
    if regions.iter().any(|r| *r != RegionFilter::All) && a.countries.is_none() {
        bail!("region filters other than `all` need --countries");
    }
    if !transit_queries.is_empty() && a.relationships.is_none() {
        bail!("--transit needs --relationships");
    }
    run.config = json!({
        "regions": regions.iter().map(ToString::to_string).collect::<Vec<_>>(),
        "min_hops": min_hops, "min_routers": min_routers, "dominance": dominance, "max_depth": tcfg.max_depth,
        "traceroute_format": format!("{:?}", a.traceroute_format),
    });

    let mut ctx = AsContext::default();
    if let Some(p) = &a.pfx2as {
        ctx.pfx2as = paths::load_pfx2as(&run.read_input(p)?[..])?;
    }
    if let Some(p) = &a.countries {
        ctx.country = paths::load_country_csv(&run.read_input(p)?[..])?;
    }
    if let Some(p) = &a.relationships {
        ctx.graph = paths::load_relationships(&run.read_input(p)?[..])?;
    }
    if let Some(p) = &a.anycast {
        ctx.anycast = paths::load_anycast(&run.read_input(p)?[..])?;
    }
    let aliases = match &a.aliases {
        Some(p) => Some(load_alias_sets(&run.read_input(p)?[..])?),
        None => None,
    };
    let vbytes = run.read_input(&a.verdicts)?;
    let mut verdicts: HashMap<Ipv4Addr, Outcome> = HashMap::new();
    for rec in read_verdicts(&vbytes[..])
        .with_context(|| format!("reading verdicts {}", a.verdicts.display()))?
    {
        let v = rec
            .to_verdict()
            .map_err(|e| anyhow!("{}: {e}", rec.target))?;
        verdicts.insert(rec.target, v.outcome);
    }

    let mut tbytes = run.read_input(&a.traceroutes)?;
    let mut converted_skipped = 0;
    if a.traceroute_format == TracerouteFormat::External {
        let mut native = Vec::new();
        let (_, skipped) = convert_external(&tbytes[..], &mut native)?;
        converted_skipped = skipped;
        tbytes = native;
    }
    let anycast = (!ctx.anycast.is_empty()).then_some(&ctx.anycast);
    let (traces, stats) = ingest_traceroutes(&tbytes[..], min_hops, anycast)?;
    if stats.malformed + converted_skipped > 0 {
        run.warn(format!(
            "{} malformed traceroute records skipped",
            stats.malformed + converted_skipped
        ));
    }
    let annotation = annotate_paths(&traces, &verdicts, aliases.as_deref());

    for region in &regions {
        let r = diversity_report(&annotation.paths, region, &ctx);
        let tag = region.to_string().replace(':', "_");
        run.write_json(&format!("diversity_{tag}.json"), &r)?;
        run.write_with(&format!("diversity_{tag}_sizes.csv"), |b| {
            Ok(paths::write_sizes_csv(b, &r)?)
        })?;
        run.write_with(&format!("diversity_{tag}_combinations.csv"), |b| {
            Ok(paths::write_combinations_csv(b, &r)?)
        })?;
        run.write_with(&format!("diversity_{tag}_identified.csv"), |b| {
            Ok(paths::write_identified_csv(b, &r)?)
        })?;
    }
    if a.pfx2as.is_some() {
        let mut ips: Vec<(Ipv4Addr, &Outcome)> = verdicts.iter().map(|(ip, o)| (*ip, o)).collect();
        ips.sort_by_key(|(ip, _)| *ip);
        let rows = homogeneity_report(ips, &ctx, min_routers, dominance);
        run.write_json("homogeneity.json", &rows)?;
        run.write_with("homogeneity.csv", |b| {
            Ok(paths::write_homogeneity_csv(b, &rows)?)
        })?;
    }
    if !transit_queries.is_empty() {
        let results: Vec<_> = transit_queries
            .iter()
            .map(|&(d, v)| alternative_transit(&ctx.graph, d, v, &tcfg))
            .collect();
        if results.iter().any(|r| r.truncated) {
            run.warn("alternative-transit search hit its expansion cap; results are partial");
        }
        run.write_json("transit.json", &results)?;
        run.write_with("transit.csv", |b| {
            Ok(paths::write_transit_csv(b, &results)?)
        })?;
    }
    run.write_json(
        "paths_summary.json",
        &json!({
            "ingest": stats,
            "external_records_skipped": converted_skipped,
            "paths": annotation.paths.len(),
            "alias_sets": aliases.as_ref().map_or(0, Vec::len),
            "alias_sets_labelled": annotation.alias_sets_labelled,
            "alias_conflicts": annotation.alias_conflicts,
            "note": paths::VISIBILITY_NOTE,
        }),
    )?;
    Ok(())
}

fn simulate(a: SimulateArgs, run: &mut Run) -> anyhow::Result<()> {
    let mut spec = load_fleet_spec(run, &a.fleet)?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let dict = dictionary(run, a.vendors.as_deref())?;
    run.seeds.insert("fleet".into(), spec.seed);
    run.config = serde_json::to_value(&spec)?;
    let fleet = make_fleet(&spec, &dict)?;
    run.write_json("fleet.json", &spec)?;
    run.write_with("ground_truth.csv", |b| {
        Ok(write_ground_truth(b, &fleet.ground_truth())?)
    })?;
    run.write_with("routers.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        for s in fleet.summary() {
            w.serialize(s)?;
        }
        w.flush()?;
        Ok(())
    })?;
    let targets: String = fleet.addresses().iter().map(|a| format!("{a}\n")).collect();
    run.write_output("targets.txt", targets.as_bytes())?;
    info!("{} simulated routers", fleet.len());
    Ok(())
}

fn evaluate(a: EvaluateArgs, file: &FileConfig, run: &mut Run) -> anyhow::Result<()> {
    let ipid = ipid_config(a.inputs.ipid_threshold, file)?;
    let cfg = build_config(a.min_occurrences, false, file);
    let split = a.split.or(file.evaluate.split).unwrap_or(0.8);
    let seed = a.seed.or(file.evaluate.seed).unwrap_or(0);
    run.seeds.insert("split".into(), seed);
    run.config =
        json!({ "signatures": cfg, "split": split, "ipid_step_threshold": ipid.step_threshold });
    let labeled: Vec<(FeatureVector, String)> = labeled_vectors(run, &a.inputs, &ipid)?
        .into_iter()
        .map(|lv| (lv.vector, lv.vendor))
        .collect();
    let report = evaluate_holdout(&labeled, &cfg, split, seed)?;
    run.write_with("holdout.csv", |b| Ok(write_holdout_csv(b, &report)?))?;
    run.write_json("holdout.json", &json!({ "train_size": report.train_size, "test_size": report.test_size, "scores": report.scores }))?;
    Ok(())
}
