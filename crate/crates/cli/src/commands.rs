use crate::error::{io, CliError, Result};
use crate::{Command, LossArgs, Mode, OutArgs, ReductionArg, SpecArgs};
use nnspec::binding::{self, Bindings, Manifest, ParamValue, Value};
use nnspec::checker::{check_certificate, check_witness, Check, Rejection};
use nnspec::frontend::{load_spec, TypedModule};
use nnspec::loss::{compile_loss, train, LossOptions, LossTerm, Reduction};
use nnspec::lowering::{self, lift_verdict, LoweredQuery, Outcome};
use nnspec::model::{self, EvalMode, Network};
use nnspec::par::{self, Exec};
use nnspec::rational::{self, Rat};
use nnspec::verifier::{self, Budget, Certificate, Verdict, VerifyOptions};
use nnspec::vnnlib::{emit_string, VnnLibDoc};
use serde::Deserialize;
use serde_json::{json, Value as Json};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

pub fn run(cmd: Command) -> Result<u8> {
    match cmd {
        Command::Check(s) => check(&s),
        Command::CompileVnnlib { spec, out } => compile_vnnlib(&spec, &out),
        Command::CompileLoss { spec, loss, out } => compile_loss_cmd(&spec, &loss, &out),
        Command::Train {
            spec,
            loss,
            steps,
            lr,
            out,
        } => train_cmd(&spec, &loss, steps, lr, &out),
        Command::Verify {
            spec,
            budget_nodes,
            max_depth,
            jobs,
            out,
        } => verify_cmd(&spec, budget_nodes, max_depth, jobs, &out),
        Command::CheckProof { spec, proof } => check_proof(&spec, &proof),
        Command::Eval { model, input, mode } => eval(&model, &input, mode),
        Command::Gap { model, input } => gap(&model, &input),
    }
}

struct Loaded {
    path: PathBuf,
    module: TypedModule,
    bindings: Bindings,
}

fn print(v: &Json) {
    println!("{}", serde_json::to_string_pretty(v).expect("json"));
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io(path, e))
}

fn parse_overrides(params: &[String]) -> Result<BTreeMap<String, ParamValue>> {
    params
        .iter()
        .map(|p| {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| CliError::new("usage", format!("--param expects NAME=VALUE, got `{p}`")))?;
            let v = match v {
                "true" => ParamValue::Bool(true),
                "false" => ParamValue::Bool(false),
                _ => ParamValue::Text(v.to_string()),
            };
            Ok((k.to_string(), v))
        })
        .collect()
}

fn load(s: &SpecArgs) -> Result<Loaded> {
    let path = s
        .spec_pos
        .clone()
        .or_else(|| s.spec_flag.clone())
        .ok_or_else(|| CliError::new("usage", "no spec file given"))?;
    let src = fs::read_to_string(&path).map_err(|e| io(&path, e))?;
    let module = load_spec(&src).map_err(|errs| CliError {
        kind: "spec",
        message: format!("{} error(s) in {}", errs.len(), path.display()),
        details: errs,
    })?;
    let manifest = match &s.manifest {
        Some(m) => Manifest::load(m).map_err(|e| CliError::new("manifest", e))?,
        None => Manifest {
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            ..Manifest::default()
        },
    };
    let overrides = parse_overrides(&s.params)?;
    let bindings = binding::bind(&module, &manifest, &overrides).map_err(|e| CliError::new("bind", e))?;
    Ok(Loaded {
        path,
        module,
        bindings,
    })
}

fn lower(l: &Loaded, property: Option<&str>) -> Result<Vec<LoweredQuery>> {
    match property {
        Some(p) => lowering::lower_property(&l.module, &l.bindings, p),
        None => lowering::lower(&l.module, &l.bindings),
    }
    .map_err(|e| CliError::new("lower", e))
}

fn one_property(l: &Loaded, s: &SpecArgs) -> Result<String> {
    if let Some(p) = &s.property {
        return Ok(p.clone());
    }
    match l.module.properties().as_slice() {
        [p] => Ok(p.to_string()),
        ps => Err(CliError::new(
            "usage",
            format!("the spec declares {} properties; choose one with --property", ps.len()),
        )),
    }
}

fn frac(r: &Rat) -> String {
    rational::to_fraction(r)
}

fn value_json(v: &Value) -> Json {
    match v {
        Value::Rat(r) => json!(frac(r)),
        Value::Nat(n) => json!(n),
        Value::Bool(b) => json!(b),
    }
}

fn check(s: &SpecArgs) -> Result<u8> {
    let l = load(s)?;
    let b = &l.bindings;
    let report = binding::validate(b, &l.module);
    let networks: BTreeMap<&str, Json> = b
        .networks
        .iter()
        .map(|(n, net)| (n.as_str(), json!({ "input_dim": net.input_dim(), "output_dim": net.output_dim(), "layer_widths": net.layer_widths() })))
        .collect();
    let datasets: BTreeMap<&str, Json> = b
        .datasets
        .iter()
        .map(|(n, d)| (n.as_str(), json!({ "rows": d.rows.len(), "element_shape": d.elem_shape })))
        .collect();
    let parameters: BTreeMap<&str, Json> = b.parameters.iter().map(|(n, v)| (n.as_str(), value_json(v))).collect();
    let violations: Vec<Json> = report
        .violations
        .iter()
        .map(|v| {
            json!({
                "dataset": v.dataset, "row": v.row, "feature": v.feature,
                "value": frac(&v.value), "bound": v.bound,
            })
        })
        .collect();
    print(&json!({
        "schema_version": SCHEMA_VERSION,
        "spec": l.path.display().to_string(),
        "properties": l.module.properties(),
        "networks": networks,
        "datasets": datasets,
        "parameters": parameters,
        "inferred": b.inferred,
        "valid": report.is_clean(),
        "violations": violations,
    }));
    Ok(if report.is_clean() { 0 } else { 1 })
}

fn compile_vnnlib(s: &SpecArgs, out: &OutArgs) -> Result<u8> {
    let l = load(s)?;
    let lqs = lower(&l, s.property.as_deref())?;
    let mut files = Vec::new();
    for lq in &lqs {
        let text = emit_string(&lq.query).map_err(|e| CliError::new("emit", e))?;
        let name = VnnLibDoc::file_name(&lq.query);
        write(&out.output_dir.join(&name), &text)?;
        files.push(name);
    }
    let obligations: Vec<_> = lqs.iter().map(LoweredQuery::obligation).collect();
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "spec": l.path.display().to_string(),
        "obligations": obligations,
    });
    write(
        &out.output_dir.join("obligations.json"),
        &serde_json::to_string_pretty(&doc).expect("json"),
    )?;
    print(&json!({
        "schema_version": SCHEMA_VERSION,
        "output_dir": out.output_dir.display().to_string(),
        "files": files,
        "obligations": "obligations.json",
    }));
    Ok(0)
}

fn loss_options(a: &LossArgs) -> LossOptions {
    LossOptions {
        samples: a.samples,
        gamma: a.gamma,
        seed: a.seed,
        reduction: match a.reduction {
            ReductionArg::Mean => Reduction::Mean,
            ReductionArg::Sum => Reduction::Sum,
            ReductionArg::Max => Reduction::Max,
        },
    }
}

fn build_loss(s: &SpecArgs, a: &LossArgs) -> Result<(Loaded, LossTerm)> {
    let l = load(s)?;
    let p = one_property(&l, s)?;
    let t = compile_loss(&l.module, &l.bindings, &p, &loss_options(a)).map_err(|e| CliError::new("loss", e))?;
    Ok((l, t))
}

fn compile_loss_cmd(s: &SpecArgs, a: &LossArgs, out: &OutArgs) -> Result<u8> {
    let (_, t) = build_loss(s, a)?;
    let path = out.output_dir.join("loss.json");
    write(&path, &t.to_json())?;
    print(&json!({
        "schema_version": SCHEMA_VERSION,
        "property": t.property,
        "network": t.network,
        "groups": t.groups(),
        "loss": "loss.json",
    }));
    Ok(0)
}

fn train_cmd(s: &SpecArgs, a: &LossArgs, steps: usize, lr: f64, out: &OutArgs) -> Result<u8> {
    let (l, t) = build_loss(s, a)?;
    let net = l
        .bindings
        .networks
        .get(&t.network)
        .ok_or_else(|| CliError::new("loss", format!("property `{}` applies no network", t.property)))?;
    let trained = train(net, &t, steps, lr, Exec::Sequential).map_err(|e| CliError::new("train", e))?;
    let model_name = format!("{}.json", t.network);
    write(&out.output_dir.join(&model_name), &model::to_json_string(&trained.net))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "loss"]).expect("csv");
    for (k, v) in trained.curve.iter().enumerate() {
        w.write_record([k.to_string(), rational::shortest_f64(*v)]).expect("csv");
    }
    let csv_text = String::from_utf8(w.into_inner().expect("csv")).expect("utf8");
    write(&out.output_dir.join("loss_curve.csv"), &csv_text)?;
    print(&json!({
        "schema_version": SCHEMA_VERSION,
        "property": t.property,
        "network": t.network,
        "steps": steps,
        "initial_loss": trained.curve.first(),
        "final_loss": trained.curve.last(),
        "model": model_name,
        "loss_curve": "loss_curve.csv",
    }));
    Ok(0)
}

fn witness_json(lq: &LoweredQuery, net: &Network, x: &[Rat]) -> Json {
    let y = net.eval_exact(x).unwrap_or_default();
    json!({
        "schema_version": SCHEMA_VERSION,
        "kind": "witness",
        "query": lq.query.name,
        "network": lq.query.network,
        "point": x.iter().map(frac).collect::<Vec<_>>(),
        "outputs": y.iter().map(frac).collect::<Vec<_>>(),
    })
}

fn verify_cmd(s: &SpecArgs, budget_nodes: usize, max_depth: usize, jobs: usize, out: &OutArgs) -> Result<u8> {
    let l = load(s)?;
    let lqs = lower(&l, s.property.as_deref())?;
    let exec = if jobs <= 1 { Exec::Sequential } else { Exec::Parallel };
    let opts = VerifyOptions {
        budget: Budget {
            max_nodes: budget_nodes,
            max_depth,
        },
        exec,
    };
    let nets = &l.bindings.networks;
    let results = par::with_jobs(jobs, || {
        par::map(exec, &lqs, |lq| {
            let net = &nets[&lq.query.network];
            verifier::verify(net, &lq.query, &opts)
        })
    });
    let mut entries = Vec::new();
    let mut divergences = Vec::new();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut failed = false;
    for (lq, res) in lqs.iter().zip(&results) {
        let net = &nets[&lq.query.network];
        let name = &lq.query.name;
        let mut e = json!({ "query": name, "network": lq.query.network });
        match res {
            Err(err) => {
                failed = true;
                e["verdict"] = json!("ERROR");
                e["error"] = json!(err.to_string());
            }
            Ok(v) => {
                e["verdict"] = json!(v.label());
                match v {
                    Verdict::Unsat(cert) => {
                        let rel = format!("certificates/{name}.json");
                        write(&out.output_dir.join(&rel), &cert.to_json())?;
                        e["certificate"] = json!(rel);
                        e["leaves"] = json!(cert.leaves());
                        e["problem_space"] = json!(lift_verdict(lq, net, Outcome::Unsat));
                    }
                    Verdict::Sat(x) => {
                        let rel = format!("witnesses/{name}.json");
                        let w = serde_json::to_string_pretty(&witness_json(lq, net, x)).expect("json");
                        write(&out.output_dir.join(&rel), &w)?;
                        e["witness"] = json!(rel);
                        e["problem_space"] = json!(lift_verdict(lq, net, Outcome::Sat(x)));
                    }
                    Verdict::Unknown(stats) => {
                        e["stats"] = json!(stats);
                        e["problem_space"] = json!(lift_verdict(lq, net, Outcome::Unknown));
                    }
                }
                if let Some(d) = verifier::divergence(net, &lq.query, v) {
                    divergences.push(d);
                }
            }
        }
        *counts.entry(e["verdict"].as_str().map(|s| match s {
            "UNSAT" => "unsat",
            "SAT" => "sat",
            "UNKNOWN" => "unknown",
            _ => "error",
        }).unwrap_or("error")).or_default() += 1;
        entries.push(e);
    }
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "budget_nodes": budget_nodes,
        "max_depth": max_depth,
        "verdicts": entries,
        "divergences": divergences,
    });
    write(
        &out.output_dir.join("verdicts.json"),
        &serde_json::to_string_pretty(&doc).expect("json"),
    )?;
    print(&json!({
        "schema_version": SCHEMA_VERSION,
        "queries": lqs.len(),
        "counts": counts,
        "divergences": doc["divergences"].as_array().map_or(0, Vec::len),
        "verdicts": "verdicts.json",
    }));
    Ok(if failed { 3 } else { 0 })
}

#[derive(Deserialize)]
struct Witness {
    query: String,
    network: String,
    #[serde(with = "rational::serde_frac::vec")]
    point: Vec<Rat>,
}

fn rejection_json(r: &Rejection) -> Json {
    json!({
        "obligation": r.obligation,
        "branch": r.branch,
        "leaf": r.leaf,
        "layer": r.layer,
        "neuron": r.neuron,
        "detail": r.detail,
        "message": r.to_string(),
    })
}

fn check_proof(s: &SpecArgs, proof: &Path) -> Result<u8> {
    let text = fs::read_to_string(proof).map_err(|e| io(proof, e))?;
    let raw: Json = serde_json::from_str(&text).map_err(|e| CliError::new("parse", format!("{}: {e}", proof.display())))?;
    let bad = |e: serde_json::Error| CliError::new("proof", format!("{}: {e}", proof.display()));
    let l = load(s)?;
    let lqs = lower(&l, s.property.as_deref())?;
    let find = |query: &str, network: &str| -> Result<(&LoweredQuery, &Network)> {
        let lq = lqs
            .iter()
            .find(|lq| lq.query.name == query)
            .ok_or_else(|| CliError::new("proof", format!("the spec has no query `{query}`")))?;
        let net = l
            .bindings
            .networks
            .get(network)
            .ok_or_else(|| CliError::new("proof", format!("no network `{network}` is bound")))?;
        Ok((lq, net))
    };
    let (kind, query, check) = if raw.get("kind").and_then(Json::as_str) == Some("witness") {
        let w: Witness = serde_json::from_value(raw).map_err(bad)?;
        let (lq, net) = find(&w.query, &w.network)?;
        ("witness", w.query.clone(), check_witness(net, &lq.query, &w.point))
    } else {
        let cert: Certificate = serde_json::from_value(raw).map_err(bad)?;
        let (lq, net) = find(&cert.query, &cert.network)?;
        ("certificate", cert.query.clone(), check_certificate(net, &lq.query, &cert))
    };
    let (result, rejection, code) = match &check {
        Check::Accept => ("Accept", Json::Null, 0),
        Check::Reject(r) => ("Reject", rejection_json(r), 1),
    };
    print(&json!({
        "schema_version": SCHEMA_VERSION,
        "proof": proof.display().to_string(),
        "kind": kind,
        "query": query,
        "result": result,
        "rejection": rejection,
    }));
    Ok(code)
}

fn parse_input(s: &str) -> Result<Vec<Rat>> {
    s.split(',')
        .map(|t| {
            let t = t.trim();
            rational::parse_fraction(t)
                .or_else(|| rational::parse_decimal(t))
                .ok_or_else(|| CliError::new("usage", format!("`{t}` is not a number")))
        })
        .collect()
}

fn load_model(path: &Path) -> Result<Network> {
    model::load_network(path).map_err(|e| CliError::new("io", e))
}

fn eval(path: &Path, input: &str, mode: Mode) -> Result<u8> {
    let net = load_model(path)?;
    let x = parse_input(input)?;
    let err = |e: model::EvalError| CliError::new("eval", e);
    let (mode, outputs) = match mode {
        Mode::Exact => {
            let y = net.eval(&x, EvalMode::ExactRational).map_err(err)?;
            ("exact", json!(y.iter().map(frac).collect::<Vec<_>>()))
        }
        Mode::F32 => {
            let xf: Vec<f32> = x.iter().map(rational::to_f32).collect();
            ("f32", json!(net.eval_f32(&xf).map_err(err)?))
        }
        Mode::F64 => {
            let xf: Vec<f64> = x.iter().map(rational::to_f64).collect();
            ("f64", json!(net.eval_f64(&xf).map_err(err)?))
        }
    };
    print(&json!({
        "schema_version": SCHEMA_VERSION,
        "mode": mode,
        "input": x.iter().map(frac).collect::<Vec<_>>(),
        "outputs": outputs,
    }));
    Ok(0)
}

fn gap(path: &Path, input: &str) -> Result<u8> {
    let net = load_model(path)?;
    let x = parse_input(input)?;
    let xf: Vec<f32> = x.iter().map(rational::to_f32).collect();
    if xf.iter().zip(&x).any(|(f, r)| rational::from_f32(*f).as_ref() != Some(r)) {
        return Err(CliError::new("usage", "gap inputs must be exactly representable in f32"));
    }
    let g = net.eval_gap(&xf).map_err(|e| CliError::new("eval", e))?;
    print(&json!({
        "schema_version": SCHEMA_VERSION,
        "input": x.iter().map(frac).collect::<Vec<_>>(),
        "f32_outputs": g.f32_out,
        "exact_outputs": g.rat_out.iter().map(frac).collect::<Vec<_>>(),
        "max_abs_diff": frac(&g.max_abs_diff),
    }));
    Ok(0)
}
