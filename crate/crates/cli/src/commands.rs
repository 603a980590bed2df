use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use vocalfx::analysis::{self, Merge, PcaModel};
use vocalfx::chain::{render, ChainConfig, Routing};
use vocalfx::grad::Objective;
use vocalfx::params::{initial_logits, Preset};
use vocalfx::pipeline::{self, fold_to_mono, read_wav, write_wav, Audio, FitResult, MonoFold};
use vocalfx::Error;

use crate::artifact::{input_hashes, write_enveloped, write_manifest, write_text};
use crate::config::{CommonArgs, RunConfig};

/// How a command finished; maps to the process exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Filtered,
}

#[derive(Clone, Debug, clap::Args)]
pub struct FitArgs {
    /// Unprocessed mono (or near-mono stereo) stem.
    pub raw: PathBuf,
    /// Processed stereo stem.
    pub target: PathBuf,
    /// Result JSON.
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// `full`, `peq_dynamics`, `delay` or `fdn`.
    #[arg(long)]
    pub routing: Option<String>,
    /// Starting preset; the standard initialisation when unset.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Serialize)]
struct Rejection {
    reason: &'static str,
    detail: String,
}

#[derive(Serialize)]
struct FitBody<'a> {
    /// `accepted`, `filtered`, `rejected` or `diverged`.
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    offset: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<&'a FitResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rejected: Option<Rejection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    diverged_at: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<Vec<f64>>,
}

impl FitBody<'_> {
    fn empty(status: &'static str) -> Self {
        Self {
            status,
            offset: None,
            result: None,
            rejected: None,
            diverged_at: None,
            trace: None,
        }
    }
}

pub fn fit(a: &FitArgs) -> Result<Outcome> {
    let mut run = RunConfig::resolve("fit", &a.common, a.steps, a.lr, a.routing.as_deref())?;
    run.inputs = vec![a.raw.clone(), a.target.clone()];
    run.inputs.extend(a.init.clone());
    run.outputs = vec![a.out.clone()];
    run.apply_workers()?;
    let hashes = input_hashes(&run.inputs)?;
    let write = |body: FitBody| write_enveloped(&a.out, &run, &hashes, body);

    let raw = read_wav(&a.raw)?;
    let wet = read_wav(&a.target)?;
    let id = a.raw.file_stem().map_or_else(|| "track".into(), |s| s.to_string_lossy().into_owned());
    let pair = match pipeline::prepare_pair(&raw, &wet, &id, &run.prepare) {
        Ok(p) => p,
        Err(e @ (Error::Silent | Error::Rejected(_))) => {
            let reason = if matches!(e, Error::Silent) { "no segments" } else { "raw stem not mono" };
            log::warn!("{id}: rejected: {e}");
            write(FitBody {
                rejected: Some(Rejection { reason, detail: e.to_string() }),
                ..FitBody::empty("rejected")
            })?;
            return Ok(Outcome::Filtered);
        }
        Err(e) => return Err(e.into()),
    };
    let fs = pair.sample_rate;
    let bounds = run.bounds_for(fs)?;
    let init = match &a.init {
        Some(p) => load_preset_for(p, &bounds.id, fs)?.logits,
        None => initial_logits(&bounds, run.seed)?,
    };
    let chain = run.training_chain(fs)?;
    let obj = Objective::new(bounds, chain)?;
    let every = (run.fit.steps / 20).max(1);
    let mut progress = |step: usize, loss: f64| {
        if step % every == 0 || step + 1 == run.fit.steps {
            log::info!("step {step}: loss {loss:.6}");
        }
    };
    match pipeline::fit_pair(&pair, &init, &obj, &run.segment, &run.fit, &mut progress) {
        Ok(r) => {
            let accepted = r.verdict.accepted;
            write(FitBody {
                offset: Some(pair.offset),
                result: Some(&r),
                ..FitBody::empty(if accepted { "accepted" } else { "filtered" })
            })?;
            if !accepted {
                log::warn!("{id}: run filtered out: {:?}", r.verdict.reasons);
            }
            Ok(if accepted { Outcome::Success } else { Outcome::Filtered })
        }
        Err(e @ Error::Rejected(_)) => {
            write(FitBody {
                offset: Some(pair.offset),
                rejected: Some(Rejection {
                    reason: "no segments",
                    detail: e.to_string(),
                }),
                ..FitBody::empty("rejected")
            })?;
            Ok(Outcome::Filtered)
        }
        Err(Error::Diverged { step, trace }) => {
            write(FitBody {
                offset: Some(pair.offset),
                diverged_at: Some(step),
                trace: Some(trace),
                ..FitBody::empty("diverged")
            })?;
            bail!("loss became non-finite at step {step}")
        }
        Err(e) => Err(e.into()),
    }
}

/// A preset file or a fit result; checks it matches the bounds in use.
fn load_preset_for(path: &Path, bounds_id: &str, fs: f64) -> Result<Preset> {
    let p = match parse_preset(path)? {
        Loaded::Preset(p) => p,
        Loaded::Fit { preset, .. } => preset,
        Loaded::Collection(_) => bail!("{} holds several presets", path.display()),
    };
    if p.bounds_id != bounds_id {
        bail!("{} was fitted with bounds `{}`, not `{bounds_id}`", path.display(), p.bounds_id);
    }
    if (p.sample_rate - fs).abs() > 1e-9 {
        bail!("{} is a {} Hz preset but the audio is {fs} Hz", path.display(), p.sample_rate);
    }
    Ok(p)
}

enum Loaded {
    Preset(Preset),
    Fit { preset: Preset, accepted: bool },
    Collection(Vec<Preset>),
}

fn parse_preset(path: &Path) -> Result<Loaded> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let preset = |v: &Value| -> Result<Preset> {
        let p = Preset::deserialize(v).with_context(|| format!("{} is not a preset", path.display()))?;
        p.validate()?;
        Ok(p)
    };
    if v.get("logits").is_some() {
        return Ok(Loaded::Preset(preset(&v)?));
    }
    if let Some(r) = v.get("result") {
        let accepted = r.pointer("/verdict/accepted").and_then(Value::as_bool).unwrap_or(false);
        return Ok(Loaded::Fit {
            preset: preset(&r["preset"])?,
            accepted,
        });
    }
    if let Some(items) = v.as_array() {
        return Ok(Loaded::Collection(items.iter().map(preset).collect::<Result<_>>()?));
    }
    if v.get("status").is_some() {
        // rejected or diverged fit without a preset
        return Ok(Loaded::Collection(Vec::new()));
    }
    bail!("{} is neither a preset, a fit result nor a preset list", path.display())
}

#[derive(Clone, Debug, clap::Args)]
pub struct RenderArgs {
    pub input: PathBuf,
    pub preset: PathBuf,
    /// Stereo 32-bit float WAV; provenance goes to `<out>.json`.
    pub out: PathBuf,
    #[arg(long)]
    pub routing: Option<String>,
    #[command(flatten)]
    pub common: CommonArgs,
}

pub fn render_cmd(a: &RenderArgs) -> Result<Outcome> {
    let mut run = RunConfig::resolve("render", &a.common, None, None, a.routing.as_deref())?;
    run.inputs = vec![a.input.clone(), a.preset.clone()];
    run.outputs = vec![a.out.clone()];
    run.apply_workers()?;
    let hashes = input_hashes(&run.inputs)?;
    let audio = read_wav(&a.input)?;
    let fs = audio.sample_rate as f64;
    let x = mono(&audio, &run)?;
    let bounds = run.bounds_for(fs)?;
    let preset = load_preset_for(&a.preset, &bounds.id, fs)?;
    let cfg = ChainConfig {
        routing: Routing::named(&run.routing)?,
        ..ChainConfig::inference(fs, x.len())
    };
    let y = render(&x, &preset.logits, &bounds, &cfg)?;
    write_wav(&a.out, &[&y[0], &y[1]], audio.sample_rate)?;
    write_manifest(&sidecar(&a.out), &run, &hashes, &[a.out.clone()])?;
    Ok(Outcome::Success)
}

fn mono(a: &Audio, run: &RunConfig) -> Result<Vec<f64>> {
    match a.channels.len() {
        1 => Ok(a.channels[0].clone()),
        2 => match fold_to_mono(&a.channels[0], &a.channels[1], a.sample_rate as f64, &run.prepare.fold)? {
            MonoFold::Mono { signal, .. } => Ok(signal),
            MonoFold::Rejected { side_db } => bail!("input is not mono (side energy {side_db:.1} dB)"),
        },
        n => bail!("input has {n} channels"),
    }
}

fn sidecar(p: &Path) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Clone, Debug, clap::Args)]
pub struct AnalyzeArgs {
    /// Directory of preset files, fit results or preset lists.
    pub presets: PathBuf,
    pub out_dir: PathBuf,
    /// Second collection to project onto the principal components.
    #[arg(long)]
    pub project: Option<PathBuf>,
    /// Principal components with perturbation responses.
    #[arg(long, default_value_t = 4)]
    pub components: usize,
    /// Frequencies per response curve.
    #[arg(long, default_value_t = 256)]
    pub points: usize,
    /// Keep fits the run filter rejected.
    #[arg(long)]
    pub include_rejected: bool,
    #[command(flatten)]
    pub common: CommonArgs,
}

/// Sorted `.json` files of a directory and the presets they hold.
fn load_collection(dir: &Path, include_rejected: bool) -> Result<(Vec<PathBuf>, Vec<Preset>)> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort();
    let mut presets = Vec::new();
    for f in &files {
        match parse_preset(f)? {
            Loaded::Preset(p) => presets.push(p),
            Loaded::Fit { preset, accepted } => {
                if accepted || include_rejected {
                    presets.push(preset);
                } else {
                    log::info!("skipping filtered fit {}", f.display());
                }
            }
            Loaded::Collection(v) => presets.extend(v),
        }
    }
    Ok((files, presets))
}

#[derive(Serialize)]
struct Dendrogram<'a> {
    leaves: &'a [String],
    merges: &'a [Merge],
    /// Leaf indices under each merge.
    members: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct PcaBody {
    model: PcaModel,
    samples: usize,
    cpv_auc: f64,
}

pub fn analyze(a: &AnalyzeArgs) -> Result<Outcome> {
    let mut run = RunConfig::resolve("analyze", &a.common, None, None, None)?;
    let (files, presets) = load_collection(&a.presets, a.include_rejected)?;
    let (other_files, other) = match &a.project {
        Some(d) => {
            let (f, p) = load_collection(d, a.include_rejected)?;
            (f, Some(p))
        }
        None => (Vec::new(), None),
    };
    run.inputs = files.iter().chain(&other_files).cloned().collect();
    run.apply_workers()?;
    if presets.len() < 3 {
        bail!("analysis needs at least 3 presets, found {}", presets.len());
    }
    let fs = presets[0].sample_rate;
    let bounds = run.bounds_for(fs)?;
    if let Some(p) = presets.iter().find(|p| p.bounds_id != bounds.id || (p.sample_rate - fs).abs() > 1e-9) {
        bail!("presets mix bounds or sample rates (`{}` at {} Hz)", p.bounds_id, p.sample_rate);
    }
    let hashes = input_hashes(&run.inputs)?;
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let out = |name: &str| a.out_dir.join(name);
    let samples: Vec<Vec<f64>> = presets.iter().map(Preset::minimal).collect();

    let corr = analysis::spearman(&samples, Some(analysis::minimal_labels()))?;
    if !corr.constant.is_empty() {
        log::warn!("{} constant coordinates have undefined correlations", corr.constant.len());
    }
    let effects = analysis::effect_correlation(&corr, &analysis::effect_groups())?;
    let merges = analysis::ward_cluster(&effects.dissimilarity())?;
    let model = analysis::pca_fit(&samples)?;
    let curve = model.cpv_curve();
    let mean = Preset::new(model.perturb_logits(0, 0.0)?, &bounds)?;

    let mut written = vec![out("correlation.csv"), out("cpv.csv"), out("pc_responses.csv"), out("mean_preset.json")];
    write_text(&out("correlation.csv"), &corr.to_csv())?;
    write_text(&out("cpv.csv"), &analysis::curve_csv(&curve))?;
    write_text(&out("pc_responses.csv"), &analysis::perturbation_responses(&model, a.components, &bounds, a.points)?)?;
    mean.save(&out("mean_preset.json"))?;
    write_enveloped(&out("effect_correlation.json"), &run, &hashes, &effects)?;
    let members = analysis::cluster_members(effects.names.len(), &merges);
    let dendrogram = Dendrogram {
        leaves: &effects.names,
        merges: &merges,
        members,
    };
    write_enveloped(&out("dendrogram.json"), &run, &hashes, dendrogram)?;
    let pca = PcaBody {
        model: model.clone(),
        samples: samples.len(),
        cpv_auc: analysis::curve_auc(&curve),
    };
    write_enveloped(&out("pca.json"), &run, &hashes, pca)?;
    if let Some(other) = other {
        let o: Vec<Vec<f64>> = other.iter().map(Preset::minimal).collect();
        let cross = model.cross_cpv(&o)?;
        log::info!(
            "CPV AUC {:.2}% on the fitted collection, {:.2}% for the projected one",
            analysis::curve_auc(&curve),
            analysis::curve_auc(&cross)
        );
        write_text(&out("cross_cpv.csv"), &analysis::curve_csv(&cross))?;
        written.push(out("cross_cpv.csv"));
    }
    write_manifest(&out("manifest.json"), &run, &hashes, &written)?;
    Ok(Outcome::Success)
}

#[derive(Clone, Debug, clap::Args)]
pub struct SampleArgs {
    /// `pca.json` from `analyze`, or a bare model.
    pub model: PathBuf,
    pub out_dir: PathBuf,
    #[arg(short, long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 44100.0)]
    pub sample_rate: f64,
    #[command(flatten)]
    pub common: CommonArgs,
}

pub fn sample(a: &SampleArgs) -> Result<Outcome> {
    let mut run = RunConfig::resolve("sample", &a.common, None, None, None)?;
    run.inputs = vec![a.model.clone()];
    let hashes = input_hashes(&run.inputs)?;
    let text = std::fs::read_to_string(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let v: Value = serde_json::from_str(&text)?;
    let model = PcaModel::deserialize(v.get("model").unwrap_or(&v)).with_context(|| format!("{} holds no PCA model", a.model.display()))?;
    let bounds = run.bounds_for(a.sample_rate)?;
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let mut written = Vec::new();
    for (k, logits) in model.sample_logits(a.n, run.seed)?.into_iter().enumerate() {
        let p = a.out_dir.join(format!("sample_{k:04}.json"));
        Preset::new(logits, &bounds)?.save(&p)?;
        written.push(p);
    }
    run.outputs = written.clone();
    write_manifest(&a.out_dir.join("manifest.json"), &run, &hashes, &written)?;
    Ok(Outcome::Success)
}
