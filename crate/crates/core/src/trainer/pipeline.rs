use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{
    compat_model_seed, continue_training, finetune_gt, precompute_base_features, train_base, train_compatible,
    EpochLog, GtImagePair, LabeledImages, PairImages, Stage, TrainConfig, TrainOutcome,
};
use crate::codec::{create_dir, expect_columns, parse_field, read_tsv, write_text};
use crate::error::{FcplError, Result};
use crate::losses::LossBreakdown;
use crate::net::save_checkpoint;
use crate::transform::TrainingClass;

pub const METRICS_LOG: &str = "metrics.tsv";

/// Everything produced by one progressive training run.
#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub base: TrainOutcome,
    pub compatible: Vec<TrainOutcome>,
    /// Empty when no ground-truth pairs were supplied.
    pub finetuned: Vec<TrainOutcome>,
    pub base_table_checksum: u64,
    pub log: Vec<EpochLog>,
    pub checkpoints: Vec<PathBuf>,
}

impl PipelineOutput {
    /// Models of the last stage that ran, one per ensemble member.
    pub fn final_models(&self) -> &[TrainOutcome] {
        if self.finetuned.is_empty() {
            &self.compatible
        } else {
            &self.finetuned
        }
    }
}

/// Run all stages in memory. The base model is trained once, its original
/// features are frozen, then `num_models` compatible models are trained and,
/// when `gt_pairs` is non-empty, each is fine-tuned.
pub fn run_stages(classes: &[TrainingClass], gt_pairs: &[GtImagePair], config: &TrainConfig) -> Result<PipelineOutput> {
    config.validate()?;
    let data = LabeledImages::from_classes(classes)?;
    let base = train_base(&data, config)?;
    let table = precompute_base_features(&base.params, classes)?;
    let checksum = table.checksum();
    let mut log = base.curve.clone();

    let mut compatible = Vec::with_capacity(config.num_models);
    for i in 0..config.num_models {
        let model = train_compatible(&data, &table, config, compat_model_seed(config.seed, i), i)?;
        log.extend(model.curve.iter().cloned());
        compatible.push(model);
    }

    let mut finetuned = Vec::new();
    if !gt_pairs.is_empty() {
        let pairs = PairImages::from_pairs(gt_pairs)?;
        for (i, start) in compatible.iter().enumerate() {
            let model = finetune_gt(start, &data, &table, &pairs, config, compat_model_seed(config.seed, i), i)?;
            log.extend(model.curve.iter().cloned());
            finetuned.push(model);
        }
    }
    // Later stages only read the table; a changed checksum means they wrote to it.
    assert_eq!(table.checksum(), checksum, "base feature table modified during training");

    Ok(PipelineOutput {
        base,
        compatible,
        finetuned,
        base_table_checksum: checksum,
        log,
        checkpoints: Vec::new(),
    })
}

/// Run all stages and write `base.fcpl`, `compat_<i>.fcpl`,
/// `finetuned_<i>.fcpl` (when fine-tuned) and the metrics log into `out_dir`.
pub fn run_pipeline(
    classes: &[TrainingClass],
    gt_pairs: &[GtImagePair],
    config: &TrainConfig,
    out_dir: &Path,
) -> Result<PipelineOutput> {
    let mut out = run_stages(classes, gt_pairs, config)?;
    create_dir(out_dir)?;
    let mut paths = Vec::new();
    let base_path = out_dir.join("base.fcpl");
    save_checkpoint(&base_path, &out.base.params)?;
    paths.push(base_path);
    for (prefix, models) in [("compat", &out.compatible), ("finetuned", &out.finetuned)] {
        for (i, m) in models.iter().enumerate() {
            let path = out_dir.join(format!("{prefix}_{i}.fcpl"));
            save_checkpoint(&path, &m.params)?;
            paths.push(path);
        }
    }
    write_metrics_log(&out_dir.join(METRICS_LOG), &out.log)?;
    out.checkpoints = paths;
    Ok(out)
}

/// Continue each compatible model on half-size batches without pair terms.
/// Used to check that fine-tuning with `lambda_pn = 0` changes nothing else.
pub fn continue_without_pairs(
    classes: &[TrainingClass],
    compatible: &[TrainOutcome],
    base: &TrainOutcome,
    config: &TrainConfig,
) -> Result<Vec<TrainOutcome>> {
    let data = LabeledImages::from_classes(classes)?;
    let table = precompute_base_features(&base.params, classes)?;
    compatible
        .iter()
        .enumerate()
        .map(|(i, m)| continue_training(m, &data, &table, None, config, compat_model_seed(config.seed, i), i))
        .collect()
}

/// Columns: stage, model_index, epoch, l_mtr, l_com, l_pos, l_neg, l_final.
pub fn write_metrics_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut s = String::new();
    for e in log {
        let l = &e.losses;
        writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            e.stage, e.model_index, e.epoch, l.l_mtr, l.l_com, l.l_pos, l.l_neg, l.l_final
        )
        .unwrap();
    }
    write_text(path, &s)
}

/// Read a metrics log. Loss weights are not stored, so `lambda_r` and
/// `lambda_pn` of the returned entries are zero.
pub fn read_metrics_log(path: &Path) -> Result<Vec<EpochLog>> {
    read_tsv(path)?
        .into_iter()
        .map(|(line, cols)| {
            expect_columns(path, line, &cols, 8)?;
            let stage: Stage = cols[0]
                .parse()
                .map_err(|_| FcplError::corrupt(path, format!("line {line}: unknown stage `{}`", cols[0])))?;
            let f = |i: usize| parse_field::<f64>(path, line, &cols[i]);
            Ok(EpochLog {
                stage,
                model_index: parse_field(path, line, &cols[1])?,
                epoch: parse_field(path, line, &cols[2])?,
                losses: LossBreakdown {
                    l_mtr: f(3)?,
                    l_com: f(4)?,
                    l_pos: f(5)?,
                    l_neg: f(6)?,
                    l_final: f(7)?,
                    ..LossBreakdown::default()
                },
            })
        })
        .collect()
}
