use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Result;
use micap::harness::{
    eval_indices, evaluate as evaluate_checkpoint, load_checkpoint, run_ablation, save_checkpoint,
    train as train_model, Checkpoint, TrainConfig,
};
use micap::interpret::{
    export_pair_embeddings, extract_cross_attention, input_saliency, render_heatmap,
    write_embeddings, AttentionHeatmap, Branch, HeadAgg, LayerSel,
};
use micap::metrics::write_results;
use micap::model::Variant;
use micap::synth::{generate_dataset, read_archive, write_archive, DatasetArchive, DatasetSpec};
use micap::Error;
use serde_json::json;

use crate::{
    AblationArgs, CaptionArgs, EvaluateArgs, ExplainArgs, ExportArgs, GenerateArgs, TrainArgs,
    TrainOverrides,
};

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn to_json<T: serde::Serialize>(value: &T, what: &str) -> Result<String> {
    Ok(serde_json::to_string_pretty(value).map_err(|e| Error::json(what, e))?)
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("size must look like 32x32, got {s:?}"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((
        h.trim().parse().map_err(|_| bad())?,
        w.trim().parse().map_err(|_| bad())?,
    ))
}

pub fn generate_data(a: GenerateArgs) -> Result<()> {
    let mut spec = DatasetSpec::new(a.count, a.seed);
    spec.test_count = a.test_count;
    if let Some(t) = a.frames {
        spec.frames = t;
    }
    if let Some(size) = &a.size {
        (spec.height, spec.width) = parse_size(size)?;
    }
    if let Some(r) = a.references {
        spec.references = r;
    }
    if let Some(s) = a.audio_len {
        spec.audio_len = s;
    }
    let data = generate_dataset(&spec)?;
    write_archive(&data, &a.out)?;
    println!("wrote {} samples to {}", data.len(), a.out.display());
    Ok(())
}

fn base_config(o: &TrainOverrides) -> Result<TrainConfig> {
    let mut cfg = match &o.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = o.lr_decoder {
        cfg.lr_decoder = v;
    }
    if let Some(v) = o.lr_encoder {
        cfg.lr_encoder = v;
    }
    if let Some(v) = &o.lr_schedule {
        cfg.lr_schedule = serde_json::from_value(json!(v)).map_err(|_| {
            Error::Config(format!("lr schedule must be constant or linear, got {v:?}"))
        })?;
    }
    if let Some(v) = o.tau {
        cfg.tau = v;
    }
    if let Some(v) = o.batch {
        cfg.batch_size = v;
    }
    if let Some(v) = o.max_grad_norm {
        cfg.optimizer.max_grad_norm = Some(v);
    }
    if let Some(v) = o.nce_weight {
        cfg.loss_weights.nce = v;
    }
    if let Some(v) = o.beam {
        cfg.beam_width = v;
    }
    Ok(cfg)
}

fn open_data(path: &Path) -> Result<DatasetArchive> {
    Ok(read_archive(path)?)
}

fn with_extension(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = base_config(&a.overrides)?;
    if let Some(v) = &a.variant {
        cfg.variant = v.parse::<Variant>()?;
    }
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(d) = a.data {
        cfg.data = Some(d);
    }
    let data_path = cfg.data.clone().ok_or_else(|| {
        Error::Config("no dataset: pass --data or set \"data\" in the config".into())
    })?;
    cfg.validate()?;
    let data = open_data(&data_path)?;
    let out = train_model(&cfg, &data)?;
    save_checkpoint(&out.checkpoint, &a.out)?;
    let log_path = a.log.unwrap_or_else(|| a.out.with_extension("log"));
    write_file(&log_path, out.log.to_text())?;
    if let Some(last) = out.log.records.last() {
        println!("step {} loss {:.6}", last.step, last.total);
    }
    println!("checkpoint {}  log {}", a.out.display(), log_path.display());
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let data = open_data(&a.data)?;
    let (report, records) = evaluate_checkpoint(&ckpt, &data)?;
    write_file(&a.report, to_json(&report, "report")?)?;
    let results = a
        .results
        .unwrap_or_else(|| with_extension(&a.report.with_extension(""), ".results.jsonl"));
    write_results(&results, &records)?;
    println!(
        "BLEU@4 {:.4}  ROUGE-L {:.4}  METEOR {:.4}  CIDEr {:.4}  AVG {:.2}  ({} samples)",
        report.bleu4, report.rouge_l, report.meteor, report.cider, report.avg, report.samples
    );
    Ok(())
}

fn load_pair(ckpt: &Path, data: &Path) -> Result<(Checkpoint, DatasetArchive)> {
    let ckpt = load_checkpoint(ckpt)?;
    let data = open_data(data)?;
    if &ckpt.meta.vocab != data.vocab() {
        return Err(
            Error::Config("checkpoint vocabulary differs from the dataset's".into()).into(),
        );
    }
    Ok((ckpt, data))
}

pub fn caption(a: CaptionArgs) -> Result<()> {
    let (ckpt, data) = load_pair(&a.ckpt, &a.data)?;
    let i = data.index_of(&a.id)?;
    let hyp = ckpt
        .model
        .generate(&data.input(i)?, ckpt.meta.config.variant, a.beam)?;
    println!("{}", data.vocab().detokenize(&hyp.tokens));
    Ok(())
}

fn heatmap_files(
    h: &AttentionHeatmap,
    clip: &micap::encoders::VideoClip,
    out: &Path,
    stem: &str,
) -> Result<Vec<String>> {
    let mut files = Vec::new();
    for t in 0..h.shape[0] {
        for ext in ["ppm", "svg"] {
            let name = if h.shape[0] > 1 {
                format!("{stem}_frame{t}.{ext}")
            } else {
                format!("{stem}.{ext}")
            };
            render_heatmap(h, t, Some(clip), &out.join(&name))?;
            files.push(name);
        }
    }
    Ok(files)
}

pub fn explain(a: ExplainArgs) -> Result<()> {
    let (ckpt, data) = load_pair(&a.ckpt, &a.data)?;
    let variant = ckpt.meta.config.variant;
    let layer: LayerSel = a.layer.parse()?;
    let heads: HeadAgg = a.heads.parse()?;
    let i = data.index_of(&a.id)?;
    let input = data.input(i)?;
    let model = &ckpt.model;
    let hyp = model.generate(&input, variant, a.beam)?;
    let vocab = data.vocab();
    let mut branches = vec![Branch::Decoder];
    if variant.uses_video() && variant.uses_audio() {
        branches.extend([Branch::VideoAudio, Branch::AudioVideo]);
    }
    let mut maps = Vec::new();
    for b in branches {
        let h = extract_cross_attention(
            model,
            &input,
            variant,
            &hyp.tokens,
            b,
            a.token,
            layer,
            heads,
        )?;
        let stem = serde_json::to_value(b)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        let files = heatmap_files(&h, &input.clip, &a.out, &stem)?;
        maps.push(json!({ "branch": b, "heatmap": h, "files": files }));
    }
    let sal = input_saliency(model, &input, variant, &hyp.tokens, a.token)?;
    let mut saliency = json!({ "logit": sal.logit, "audio": sal.audio });
    if let Some(v) = &sal.video {
        let [t, r, c] = [v.shape()[0], v.shape()[1], v.shape()[2]];
        let h = AttentionHeatmap {
            target: micap::interpret::Target::VideoPatches,
            shape: [t, r, c],
            raw: v.data().to_vec(),
            scores: v.data().to_vec(),
            layer: 0,
            heads,
            token_index: a.token,
            token: sal.token,
        };
        let files = heatmap_files(&h, &input.clip, &a.out, "saliency_video")?;
        saliency["video"] = json!({ "shape": [t, r, c], "scores": v.data(), "files": files });
    }
    let doc = json!({
        "id": a.id,
        "caption": vocab.detokenize(&hyp.tokens),
        "tokens": hyp.tokens.iter().map(|&t| vocab.token(t).unwrap_or("[UNK]")).collect::<Vec<_>>(),
        "token_index": a.token,
        "token": vocab.token(sal.token),
        "attention": maps,
        "saliency": saliency,
    });
    write_file(
        &a.out.join("explanation.json"),
        to_json(&doc, "explanation")?,
    )?;
    println!("{}", vocab.detokenize(&hyp.tokens));
    println!("explanations in {}", a.out.display());
    Ok(())
}

pub fn export_embeddings(a: ExportArgs) -> Result<()> {
    let (ckpt, data) = load_pair(&a.ckpt, &a.data)?;
    let indices: Vec<usize> = (0..data.len()).collect();
    let dump = export_pair_embeddings(&ckpt.model, &data, &indices, ckpt.meta.config.variant)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_embeddings(&a.out, &dump.records)?;
    println!("{}", to_json(&dump.summary, "summary")?);
    Ok(())
}

pub fn ablation(a: AblationArgs) -> Result<()> {
    let mut cfg = base_config(&a.overrides)?;
    cfg.steps = a.steps;
    cfg.seed = a.seed;
    cfg.data = Some(a.data.clone());
    cfg.validate()?;
    let data = open_data(&a.data)?;
    if data.split_indices(micap::synth::Split::Test).is_empty() {
        log::warn!(
            "dataset has no test split; evaluating on all {} samples",
            eval_indices(&data).len()
        );
    }
    let (table, outcomes) = run_ablation(&cfg, &data)?;
    for out in &outcomes {
        let name = out.checkpoint.meta.config.variant.to_string();
        save_checkpoint(&out.checkpoint, &a.out.join(format!("{name}.ckpt")))?;
        write_file(&a.out.join(format!("{name}.log")), out.log.to_text())?;
    }
    let text = table.to_text();
    write_file(&a.out.join("table.txt"), &text)?;
    write_file(
        &a.out.join("table.json"),
        to_json(&table, "ablation table")?,
    )?;
    print!("{text}");
    Ok(())
}
