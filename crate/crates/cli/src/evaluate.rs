use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use simcgnn::data::{read_bundle, Bundle, Vocabulary};
use simcgnn::eval::{
    arp, confusion_analysis, evaluate, select_cohort, ItemKnn, MetricsReport, Named, Pop, Popularity, Recommender, SPop,
};
use simcgnn::model::{load_checkpoint, Model};
use simcgnn::Error;

use crate::error::{write, CliError, CliResult};
use crate::manifest::layout;
use crate::{AnalyzeArgs, EvalArgs};

/// Loads a checkpoint and fails unless it was trained on `bundle`'s items.
fn load_model(path: &Path, bundle: &Bundle) -> CliResult<Model> {
    let ck = load_checkpoint(path)?;
    let vocabulary = bundle.dataset.vocabulary.fingerprint();
    if ck.vocabulary != vocabulary {
        return Err(Error::Compatibility(format!(
            "{} was trained on vocabulary {}, the bundle has {vocabulary}",
            path.display(),
            ck.vocabulary
        ))
        .into());
    }
    Ok(ck.model)
}

fn out_dir(out: &Option<PathBuf>, checkpoint: &Path) -> CliResult<PathBuf> {
    let dir = match out {
        Some(d) => d.clone(),
        None => checkpoint.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let dir = if dir.as_os_str().is_empty() {
        PathBuf::from(".")
    } else {
        dir
    };
    fs::create_dir_all(&dir).map_err(|source| Error::Io {
        path: dir.clone(),
        source,
    })?;
    Ok(dir)
}

fn check_k(k: usize) -> CliResult<()> {
    if k == 0 {
        return Err(CliError::usage("--k must be at least 1"));
    }
    Ok(())
}

pub fn eval(a: EvalArgs) -> CliResult<()> {
    check_k(a.k)?;
    let bundle = read_bundle(&a.data)?;
    let model = load_model(&a.checkpoint, &bundle)?;
    let data = &bundle.dataset;
    let pop = Popularity::from_training(&data.train);

    let mut methods: Vec<Box<dyn Recommender>> = Vec::new();
    let mut seen = Vec::new();
    for name in a.baselines.iter().map(|s| s.trim()).filter(|s| !s.is_empty()) {
        if seen.contains(&name) {
            continue;
        }
        seen.push(name);
        methods.push(match name {
            "pop" => Box::new(Pop::fit(&pop)),
            "spop" => Box::new(SPop::fit(&pop)),
            "itemknn" => Box::new(ItemKnn::fit(&data.train, data.num_items())),
            other => {
                return Err(CliError::usage(format!(
                    "unknown baseline `{other}`; expected pop, spop or itemknn"
                )))
            }
        });
    }

    let mut reports = vec![evaluate(&model, &data.test, &pop, a.k, false)?];
    for m in &methods {
        reports.push(evaluate(m.as_ref(), &data.test, &pop, a.k, false)?);
    }

    let mut csv = format!("{}\n", MetricsReport::CSV_HEADER);
    let mut jsonl = String::new();
    for r in &reports {
        csv.push_str(&r.csv_row());
        csv.push('\n');
        jsonl.push_str(&serde_json::to_string(r).expect("report serializes"));
        jsonl.push('\n');
    }
    let dir = out_dir(&a.out, &a.checkpoint)?;
    write(&dir.join(layout::METRICS_CSV), &csv)?;
    write(&dir.join(layout::METRICS_JSONL), &jsonl)?;
    print!("{csv}");
    Ok(())
}

#[derive(Serialize)]
struct ModelAnalysis {
    checkpoint: PathBuf,
    distinct_items: usize,
    arp: f64,
    arp_missing: usize,
}

#[derive(Serialize)]
struct Analysis {
    last_item: i64,
    cohort_sessions: usize,
    k: usize,
    models: Vec<ModelAnalysis>,
}

fn raw_id(vocabulary: &Vocabulary, index: usize) -> i64 {
    vocabulary.decode(index).expect("indices come from the vocabulary")
}

pub fn analyze(a: AnalyzeArgs) -> CliResult<()> {
    check_k(a.k)?;
    let bundle = read_bundle(&a.data)?;
    let data = &bundle.dataset;
    let vocabulary = &data.vocabulary;
    let mut models = vec![(a.checkpoint.clone(), load_model(&a.checkpoint, &bundle)?)];
    if let Some(other) = &a.compare {
        models.push((other.clone(), load_model(other, &bundle)?));
    }

    let requested = match a.last_item.as_str() {
        "auto" => None,
        raw => {
            let id: i64 = raw
                .parse()
                .map_err(|_| CliError::usage(format!("--last-item `{raw}` is neither `auto` nor an item id")))?;
            Some(
                vocabulary
                    .encode(id)
                    .ok_or_else(|| CliError::usage(format!("item {id} is not in the vocabulary")))?,
            )
        }
    };
    let (item, cohort) =
        select_cohort(&data.test, requested).ok_or_else(|| CliError::usage("the test split is empty"))?;
    if cohort.len() < 2 {
        return Err(CliError::usage(format!(
            "only {} test session(s) end in item {}; at least 2 are needed",
            cohort.len(),
            raw_id(vocabulary, item)
        )));
    }

    let pop = Popularity::from_training(&data.train);
    let mut confusions = Vec::new();
    let mut summary = Vec::new();
    for (path, model) in &models {
        let named = Named {
            name: path.display().to_string(),
            inner: model,
        };
        let c = confusion_analysis(&named, &cohort, a.k)?;
        let (value, missing) = arp(&named.recommend(&data.test, a.k)?, &pop, a.k)?;
        summary.push(ModelAnalysis {
            checkpoint: path.clone(),
            distinct_items: c.distinct_items(),
            arp: value,
            arp_missing: missing,
        });
        confusions.push(c);
    }

    let dir = out_dir(&a.out, &a.checkpoint)?;
    let id = |i: usize| raw_id(vocabulary, i).to_string();
    write(&dir.join(layout::CONFUSION_CSV), confusions[0].to_csv(id))?;
    if let [first, second] = confusions.as_slice() {
        let mut csv = String::from("item_id,count,count_compare\n");
        for (item, x, y) in first.aligned(second) {
            csv.push_str(&format!("{},{x},{y}\n", id(item)));
        }
        write(&dir.join(layout::CONFUSION_COMPARE_CSV), csv)?;
    }
    let analysis = Analysis {
        last_item: raw_id(vocabulary, item),
        cohort_sessions: cohort.len(),
        k: a.k,
        models: summary,
    };
    let mut json = serde_json::to_string_pretty(&analysis).expect("analysis serializes");
    json.push('\n');
    write(&dir.join(layout::ANALYSIS_JSON), json)?;

    println!(
        "last item {} shared by {} test sessions, top-{}",
        analysis.last_item, analysis.cohort_sessions, a.k
    );
    for m in &analysis.models {
        println!(
            "{}: {} distinct items, ARP {:.4}",
            m.checkpoint.display(),
            m.distinct_items,
            m.arp
        );
    }
    Ok(())
}
